#include <doctest.h>

#include <cmath>

#include "mrpf/graph.hpp"

using namespace mrpf;

namespace {

Tensor random_tensor(const std::vector<int64_t>& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::zeros(shape);
    for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// Relative where the reference is large, absolute where it is small; the
// denominator floor keeps finite-difference noise on near-zero entries from
// dominating.
double grad_rel_err(const std::map<std::string, Tensor>& got,
                    const std::map<std::string, Tensor>& want) {
    REQUIRE(got.size() == want.size());
    double worst = 0.0;
    for (const auto& [name, g] : got) {
        const Tensor& w = want.at(name);
        REQUIRE(g.same_shape(w));
        for (int64_t i = 0; i < g.size(); ++i) {
            double denom = std::max({1.0, std::fabs(g[i]), std::fabs(w[i])});
            worst = std::max(worst, std::fabs(g[i] - w[i]) / denom);
        }
    }
    return worst;
}

}  // namespace

TEST_CASE("identity graph returns its input") {
    ExprGraph g;
    NodeId x = g.leaf("x", {3});
    g.set_root(x);
    Tensor out = g.evaluate({{"x", Tensor::from_data({3}, {1, 2, 3})}});
    CHECK(out.bit_equal(Tensor::from_data({3}, {1, 2, 3})));
}

TEST_CASE("relu clamps negatives") {
    ExprGraph g;
    g.set_root(g.relu(g.leaf("x", {3})));
    Tensor out = g.evaluate({{"x", Tensor::from_data({3}, {-1, 0, 2})}});
    CHECK(out.bit_equal(Tensor::from_data({3}, {0, 0, 2})));
}

TEST_CASE("cross-entropy of uniform logits is ln C") {
    ExprGraph g;
    g.set_root(g.cross_entropy(g.softmax(g.leaf("z", {1, 4})), {2}));
    Tensor out = g.evaluate({{"z", Tensor::zeros({1, 4})}});
    CHECK(out.rank() == 0);
    CHECK(out[0] == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("gradient of sum is all ones") {
    ExprGraph g;
    g.set_root(g.reduce_sum(g.leaf("x", {2, 3})));
    ExprGraph::Bindings b{{"x", Tensor::from_data({2, 3}, {1, -2, 3, 4, 0, 6})}};
    auto grads = g.gradient(b, {"x"});
    CHECK(grads.at("x").bit_equal(Tensor::full({2, 3}, 1.0)));
    auto fd = g.finite_diff_gradient(b, {"x"}, 1e-5);
    CHECK(grad_rel_err(grads, fd) <= 1e-9);
}

TEST_CASE("gradient of x squared at 3 is 6") {
    ExprGraph g;
    NodeId x = g.leaf("x", {1, 1});
    g.set_root(g.reduce_sum(g.matmul(x, x)));
    ExprGraph::Bindings b{{"x", Tensor::from_data({1, 1}, {3.0})}};
    CHECK(g.evaluate(b)[0] == doctest::Approx(9.0));
    auto grads = g.gradient(b, {"x"});
    CHECK(grads.at("x")[0] == doctest::Approx(6.0).epsilon(1e-12));
    auto fd = g.finite_diff_gradient(b, {"x"}, 1e-5);
    CHECK(fd.at("x")[0] == doctest::Approx(6.0).epsilon(1e-8));
}

TEST_CASE("cross-entropy gradient at uniform logits is softmax minus one-hot") {
    ExprGraph g;
    NodeId z = g.leaf("z", {1, 2});
    g.set_root(g.cross_entropy(g.softmax(z), {0}));
    ExprGraph::Bindings b{{"z", Tensor::zeros({1, 2})}};
    auto grads = g.gradient(b, {"z"});
    CHECK(grads.at("z")[0] == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(grads.at("z")[1] == doctest::Approx(0.5).epsilon(1e-12));
    auto fd = g.finite_diff_gradient(b, {"z"}, 1e-5);
    CHECK(grad_rel_err(grads, fd) <= 1e-9);
}

TEST_CASE("matmul gradients, both orientations") {
    Rng rng(11);
    for (bool transpose : {false, true}) {
        ExprGraph g;
        NodeId a = g.leaf("a", {2, 3});
        NodeId w = g.leaf("w", transpose ? std::vector<int64_t>{4, 3} : std::vector<int64_t>{3, 4});
        g.set_root(g.cross_entropy(g.softmax(g.matmul(a, w, transpose)), {1, 3}));
        ExprGraph::Bindings b{{"a", random_tensor({2, 3}, rng)},
                              {"w", random_tensor(g.shape_of(w), rng)}};
        auto grads = g.gradient(b, {"a", "w"});
        auto fd = g.finite_diff_gradient(b, {"a", "w"}, 1e-5);
        CHECK(grad_rel_err(grads, fd) <= 1e-6);
    }
}

TEST_CASE("conv2d forward matches a hand computation") {
    ExprGraph g;
    NodeId x = g.leaf("x", {1, 1, 3, 3});
    NodeId w = g.leaf("w", {1, 1, 2, 2});
    g.set_root(g.conv2d(x, w, ConvPadding::Valid));
    ExprGraph::Bindings b{
        {"x", Tensor::from_data({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9})},
        {"w", Tensor::from_data({1, 1, 2, 2}, {1, 0, 0, 1})}};
    Tensor out = g.evaluate(b);
    CHECK(out.shape() == std::vector<int64_t>{1, 1, 2, 2});
    CHECK(out[0] == doctest::Approx(6.0));   // 1 + 5
    CHECK(out[1] == doctest::Approx(8.0));   // 2 + 6
    CHECK(out[2] == doctest::Approx(12.0));  // 4 + 8
    CHECK(out[3] == doctest::Approx(14.0));  // 5 + 9
}

TEST_CASE("conv2d gradients, valid and same padding") {
    Rng rng(12);
    for (ConvPadding pad : {ConvPadding::Valid, ConvPadding::Same}) {
        ExprGraph g;
        NodeId x = g.leaf("x", {2, 2, 4, 4});
        NodeId w = g.leaf("w", {3, 2, 3, 3});
        NodeId c = g.conv2d(x, w, pad);
        int64_t numel = shape_numel(g.shape_of(c));
        g.set_root(g.cross_entropy(
            g.softmax(g.reshape(c, {2, numel / 2})), {0, 1}));
        ExprGraph::Bindings b{{"x", random_tensor({2, 2, 4, 4}, rng)},
                              {"w", random_tensor({3, 2, 3, 3}, rng, -0.5, 0.5)}};
        auto grads = g.gradient(b, {"x", "w"});
        auto fd = g.finite_diff_gradient(b, {"x", "w"}, 1e-5);
        CHECK(grad_rel_err(grads, fd) <= 1e-6);
    }
}

TEST_CASE("add broadcast modes and their gradients") {
    Rng rng(13);

    ExprGraph g;
    NodeId x = g.leaf("x", {2, 3});
    NodeId bias = g.leaf("b", {3});
    g.set_root(g.reduce_sum(g.relu(g.add(x, bias))));
    ExprGraph::Bindings b{{"x", random_tensor({2, 3}, rng)}, {"b", random_tensor({3}, rng)}};
    auto grads = g.gradient(b, {"x", "b"});
    auto fd = g.finite_diff_gradient(b, {"x", "b"}, 1e-5);
    CHECK(grad_rel_err(grads, fd) <= 1e-6);

    ExprGraph g2;
    NodeId y = g2.leaf("y", {2, 3, 2, 2});
    NodeId cbias = g2.leaf("c", {3});
    g2.set_root(g2.reduce_sum(g2.relu(g2.add(y, cbias))));
    ExprGraph::Bindings b2{{"y", random_tensor({2, 3, 2, 2}, rng)}, {"c", random_tensor({3}, rng)}};
    auto grads2 = g2.gradient(b2, {"y", "c"});
    auto fd2 = g2.finite_diff_gradient(b2, {"y", "c"}, 1e-5);
    CHECK(grad_rel_err(grads2, fd2) <= 1e-6);

    ExprGraph g3;
    NodeId u = g3.leaf("u", {2, 2});
    NodeId v = g3.leaf("v", {2, 2});
    g3.set_root(g3.reduce_sum(g3.add(u, v)));
    ExprGraph::Bindings b3{{"u", random_tensor({2, 2}, rng)}, {"v", random_tensor({2, 2}, rng)}};
    auto grads3 = g3.gradient(b3, {"u", "v"});
    CHECK(grads3.at("u").bit_equal(Tensor::full({2, 2}, 1.0)));
    CHECK(grads3.at("v").bit_equal(Tensor::full({2, 2}, 1.0)));
}

TEST_CASE("scale, log and reduce_sum gradients") {
    Rng rng(14);
    ExprGraph g;
    NodeId x = g.leaf("x", {5});
    g.set_root(g.reduce_sum(g.log(g.scale(x, 2.5))));
    ExprGraph::Bindings b{{"x", random_tensor({5}, rng, 0.5, 2.0)}};
    auto grads = g.gradient(b, {"x"});
    auto fd = g.finite_diff_gradient(b, {"x"}, 1e-6);
    CHECK(grad_rel_err(grads, fd) <= 1e-6);
    for (int64_t i = 0; i < 5; ++i)
        CHECK(grads.at("x")[i] == doctest::Approx(1.0 / b.at("x")[i]).epsilon(1e-10));
}

TEST_CASE("kl divergence value and gradients through both arguments") {
    ExprGraph g;
    NodeId a = g.leaf("a", {1, 3});
    NodeId c = g.leaf("c", {1, 3});
    NodeId p = g.softmax(a);
    NodeId q = g.softmax(c);
    g.set_root(g.kl_div(p, q));

    ExprGraph::Bindings same{{"a", Tensor::from_data({1, 3}, {0.3, -1.0, 0.7})},
                             {"c", Tensor::from_data({1, 3}, {0.3, -1.0, 0.7})}};
    CHECK(g.evaluate(same)[0] == doctest::Approx(0.0).epsilon(1e-15));

    Rng rng(15);
    ExprGraph::Bindings b{{"a", random_tensor({1, 3}, rng)}, {"c", random_tensor({1, 3}, rng)}};
    CHECK(g.evaluate(b)[0] >= 0.0);
    auto grads = g.gradient(b, {"a", "c"});
    auto fd = g.finite_diff_gradient(b, {"a", "c"}, 1e-5);
    CHECK(grad_rel_err(grads, fd) <= 1e-6);
}

TEST_CASE("kl divergence of a batch averages per-example terms") {
    ExprGraph g;
    NodeId p = g.leaf("p", {2, 2});
    NodeId q = g.leaf("q", {2, 2});
    g.set_root(g.kl_div(p, q));
    Tensor pv = Tensor::from_data({2, 2}, {0.25, 0.75, 0.5, 0.5});
    Tensor qv = Tensor::from_data({2, 2}, {0.5, 0.5, 0.9, 0.1});
    double row0 = 0.25 * std::log(0.25 / 0.5) + 0.75 * std::log(0.75 / 0.5);
    double row1 = 0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1);
    Tensor out = g.evaluate({{"p", pv}, {"q", qv}});
    CHECK(out[0] == doctest::Approx((row0 + row1) / 2.0).epsilon(1e-12));
}

TEST_CASE("reshape preserves values and passes gradients through") {
    Rng rng(16);
    ExprGraph g;
    NodeId x = g.leaf("x", {2, 6});
    NodeId r = g.reshape(x, {2, 3, 2});
    g.set_root(g.reduce_sum(g.relu(r)));
    ExprGraph::Bindings b{{"x", random_tensor({2, 6}, rng)}};
    auto grads = g.gradient(b, {"x"});
    auto fd = g.finite_diff_gradient(b, {"x"}, 1e-5);
    CHECK(grad_rel_err(grads, fd) <= 1e-6);
    CHECK_THROWS_AS(g.reshape(x, {5}), ShapeError);
}

TEST_CASE("finite differences require a positive step and scalar root") {
    ExprGraph g;
    NodeId x = g.leaf("x", {2});
    g.set_root(x);
    ExprGraph::Bindings b{{"x", Tensor::from_data({2}, {1, 2})}};
    CHECK_THROWS_AS(g.gradient(b, {"x"}), ValueError);
    CHECK_THROWS_AS(g.finite_diff_gradient(b, {"x"}, 1e-5), ValueError);

    ExprGraph g2;
    g2.set_root(g2.reduce_sum(g2.leaf("x", {2})));
    CHECK_THROWS_AS(g2.finite_diff_gradient(b, {"x"}, 0.0), ValueError);
}

TEST_CASE("frozen leaves reject gradient requests, untouched leaves get zeros") {
    ExprGraph g;
    NodeId x = g.leaf("x", {2});
    NodeId y = g.leaf("y", {3});
    NodeId f = g.leaf("f", {2}, true);
    g.set_root(g.reduce_sum(g.add(x, f)));
    ExprGraph::Bindings b{{"x", Tensor::from_data({2}, {1, 2})},
                          {"y", Tensor::from_data({3}, {0, 0, 0})},
                          {"f", Tensor::from_data({2}, {5, 5})}};
    CHECK_THROWS_AS(g.gradient(b, {"f"}), ValueError);
    auto grads = g.gradient(b, {"x", "y"});
    CHECK(grads.at("y").bit_equal(Tensor::zeros({3})));
    (void)y;
}

TEST_CASE("evaluate validates bindings") {
    ExprGraph g;
    g.set_root(g.reduce_sum(g.leaf("x", {2})));
    CHECK_THROWS_WITH_AS(g.evaluate({}), doctest::Contains("missing binding"), ValueError);
    CHECK_THROWS_AS(g.evaluate({{"x", Tensor::zeros({3})}}), ShapeError);
}

TEST_CASE("non-finite intermediates are reported with the op name") {
    ExprGraph g;
    g.set_root(g.reduce_sum(g.log(g.leaf("x", {1}))));
    CHECK_THROWS_WITH_AS(g.evaluate({{"x", Tensor::from_data({1}, {-1.0})}}),
                         doctest::Contains("log"), ValueError);
}

TEST_CASE("evaluate is pure") {
    Rng rng(17);
    ExprGraph g;
    NodeId x = g.leaf("x", {4, 3});
    NodeId w = g.leaf("w", {3, 3});
    g.set_root(g.cross_entropy(g.softmax(g.matmul(x, w)), {0, 1, 2, 0}));
    ExprGraph::Bindings b{{"x", random_tensor({4, 3}, rng)}, {"w", random_tensor({3, 3}, rng)}};
    Tensor first = g.evaluate(b);
    for (int i = 0; i < 3; ++i) CHECK(g.evaluate(b).bit_equal(first));
}

TEST_CASE("construction-time shape checks") {
    ExprGraph g;
    NodeId a = g.leaf("a", {2, 3});
    NodeId b = g.leaf("b", {4, 5});
    CHECK_THROWS_AS(g.matmul(a, b), ShapeError);
    CHECK_THROWS_AS(g.add(a, b), ShapeError);
    CHECK_THROWS_AS(g.softmax(g.leaf("s", {})), ShapeError);
    CHECK_THROWS_AS(g.cross_entropy(g.softmax(a), {0, 1, 0}), ShapeError);
    CHECK_THROWS_AS(g.cross_entropy(g.softmax(a), {0, 7}), ValueError);

    NodeId img = g.leaf("img", {1, 1, 2, 2});
    NodeId k = g.leaf("k", {1, 1, 3, 3});
    CHECK_THROWS_AS(g.conv2d(img, k, ConvPadding::Valid), ShapeError);
    NodeId keven = g.leaf("keven", {1, 1, 2, 2});
    CHECK_THROWS_AS(g.conv2d(img, keven, ConvPadding::Same), ShapeError);
}

TEST_CASE("randomized MLP gradients agree with finite differences") {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(derive_seed(100, "mlp-gradcheck", seed));
        int64_t batch = 1 + static_cast<int64_t>(rng.below(3));
        int64_t in = 2 + static_cast<int64_t>(rng.below(3));
        int64_t hidden = 2 + static_cast<int64_t>(rng.below(4));
        int64_t classes = 2 + static_cast<int64_t>(rng.below(3));

        ExprGraph g;
        NodeId x = g.leaf("x", {batch, in});
        NodeId w1 = g.leaf("w1", {hidden, in});
        NodeId b1 = g.leaf("b1", {hidden});
        NodeId w2 = g.leaf("w2", {classes, hidden});
        NodeId b2 = g.leaf("b2", {classes});
        NodeId h = g.relu(g.add(g.matmul(x, w1, true), b1));
        NodeId logits = g.add(g.matmul(h, w2, true), b2);
        std::vector<int64_t> labels(batch);
        for (int64_t i = 0; i < batch; ++i) labels[i] = static_cast<int64_t>(rng.below(classes));
        g.set_root(g.cross_entropy(g.softmax(logits), labels));

        ExprGraph::Bindings b{{"x", random_tensor({batch, in}, rng)},
                              {"w1", random_tensor({hidden, in}, rng)},
                              {"b1", random_tensor({hidden}, rng)},
                              {"w2", random_tensor({classes, hidden}, rng)},
                              {"b2", random_tensor({classes}, rng)}};
        std::vector<std::string> wrt{"x", "w1", "b1", "w2", "b2"};
        auto grads = g.gradient(b, wrt);
        auto fd = g.finite_diff_gradient(b, wrt, 1e-5);
        CHECK(grad_rel_err(grads, fd) <= 1e-4);
    }
}
