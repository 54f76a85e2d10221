#include <doctest.h>

#include <cmath>

#include "mrpf/network.hpp"

using namespace mrpf;

namespace {

std::vector<LayerSpec> mlp_2_3_2() {
    return {LayerSpec::dense(2, 3), LayerSpec::relu(3), LayerSpec::dense(3, 2)};
}

Tensor random_batch(const std::vector<int64_t>& shape, uint64_t seed) {
    Rng rng(seed);
    Tensor t = Tensor::zeros(shape);
    for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(0.0, 1.0);
    return t;
}

}  // namespace

TEST_CASE("build is deterministic per seed") {
    Network a = Network::build(mlp_2_3_2(), 7);
    Network b = Network::build(mlp_2_3_2(), 7);
    Network c = Network::build(mlp_2_3_2(), 8);
    for (int i : a.weight_layers()) {
        CHECK(a.weight(i).bit_equal(b.weight(i)));
        CHECK(a.bias(i).bit_equal(b.bias(i)));
    }
    bool differs = false;
    for (int i : a.weight_layers()) differs |= !a.weight(i).bit_equal(c.weight(i));
    CHECK(differs);
}

TEST_CASE("build validates channel consistency") {
    CHECK_THROWS_AS(Network::build({LayerSpec::dense(3, 4), LayerSpec::dense(5, 2)}, 1),
                    ConfigError);
    CHECK_THROWS_AS(Network::build({LayerSpec::dense(3, 4), LayerSpec::relu(5)}, 1), ConfigError);
    CHECK_THROWS_AS(Network::build({}, 1), ConfigError);
    CHECK_THROWS_AS(Network::build({LayerSpec::dense(0, 4)}, 1), ConfigError);
}

TEST_CASE("conv weights take the N_out x N_in x K x K shape") {
    Network net = Network::build({LayerSpec::conv(1, 4, 3)}, 3);
    CHECK(net.weight(0).shape() == std::vector<int64_t>{4, 1, 3, 3});
    CHECK(net.bias(0).shape() == std::vector<int64_t>{4});
    CHECK(net.parameter_count() == 4 * 9 + 4);
}

TEST_CASE("dense forward matches hand arithmetic") {
    Network net = Network::build({LayerSpec::dense(2, 2)}, 1);
    net.set_weight(0, Tensor::from_data({2, 2}, {1, 1, 2, 0}));
    net.set_bias(0, Tensor::zeros({2}));
    Tensor out = net.forward(Tensor::from_data({1, 2}, {1, 2}));
    CHECK(out.at2(0, 0) == doctest::Approx(3.0));
    CHECK(out.at2(0, 1) == doctest::Approx(2.0));

    net.set_weight(0, Tensor::from_data({2, 2}, {1, 0, 0, 1}));
    Tensor same = net.forward(Tensor::from_data({1, 2}, {0.25, -0.75}));
    CHECK(same.at2(0, 0) == doctest::Approx(0.25));
    CHECK(same.at2(0, 1) == doctest::Approx(-0.75));
}

TEST_CASE("forward keeps the batch dimension") {
    Network net = Network::build(mlp_2_3_2(), 5);
    Tensor out = net.forward(random_batch({5, 2}, 9));
    CHECK(out.shape() == std::vector<int64_t>{5, 2});
}

TEST_CASE("conv network forward and flatten transition") {
    Network net = Network::build({LayerSpec::conv(1, 3, 3), LayerSpec::relu(3),
                                  LayerSpec::conv(3, 2, 3), LayerSpec::dense(2, 2)},
                                 11);
    Tensor out = net.forward(random_batch({2, 1, 5, 5}, 21));
    CHECK(out.shape() == std::vector<int64_t>{2, 2});
}

TEST_CASE("full retention surgery is the identity") {
    Network net = Network::build(mlp_2_3_2(), 13);
    SurgeryMap surgery;
    surgery.retained[0] = {0, 1, 2};
    Network kept = remove_channels(net, surgery);
    Tensor x = random_batch({4, 2}, 31);
    CHECK(kept.forward(x).bit_equal(net.forward(x)));
}

TEST_CASE("pruning a dead channel leaves logits unchanged") {
    Network net = Network::build({LayerSpec::dense(2, 4), LayerSpec::relu(4), LayerSpec::dense(4, 2)},
                                 17);
    Tensor w0 = net.weight(0);
    Tensor b0 = net.bias(0);
    Tensor w2 = net.weight(2);
    b0[1] = 0.0;                          // dead channel 1: zero bias...
    w2.at2(0, 1) = 0.0;                   // ...and zero outgoing weights
    w2.at2(1, 1) = 0.0;
    net.set_bias(0, b0);
    net.set_weight(2, w2);

    SurgeryMap surgery;
    surgery.retained[0] = {0, 2, 3};
    Network pruned = remove_channels(net, surgery);
    Tensor x = random_batch({8, 2}, 41);
    Tensor before = net.forward(x);
    Tensor after = pruned.forward(x);
    for (int64_t i = 0; i < before.size(); ++i)
        CHECK(std::fabs(before[i] - after[i]) <= 1e-12);
    (void)w0;
}

TEST_CASE("surgery slices rows, biases and downstream columns") {
    Network net = Network::build({LayerSpec::dense(2, 4), LayerSpec::relu(4), LayerSpec::dense(4, 2)},
                                 19);
    SurgeryMap surgery;
    surgery.retained[0] = {0, 2};
    Network pruned = remove_channels(net, surgery);

    CHECK(pruned.weight(0).shape() == std::vector<int64_t>{2, 2});
    CHECK(pruned.weight(2).shape() == std::vector<int64_t>{2, 2});
    CHECK(pruned.spec(1).in_channels == 2);

    for (int64_t col = 0; col < 2; ++col) {
        CHECK(pruned.weight(0).at2(0, col) == net.weight(0).at2(0, col));
        CHECK(pruned.weight(0).at2(1, col) == net.weight(0).at2(2, col));
    }
    CHECK(pruned.bias(0)[0] == net.bias(0)[0]);
    CHECK(pruned.bias(0)[1] == net.bias(0)[2]);
    for (int64_t row = 0; row < 2; ++row) {
        CHECK(pruned.weight(2).at2(row, 0) == net.weight(2).at2(row, 0));
        CHECK(pruned.weight(2).at2(row, 1) == net.weight(2).at2(row, 2));
    }
}

TEST_CASE("surgery equals manual slicing on a conv pair") {
    Network net = Network::build({LayerSpec::conv(1, 4, 3), LayerSpec::relu(4),
                                  LayerSpec::conv(4, 2, 3)},
                                 23);
    SurgeryMap surgery;
    surgery.retained[0] = {1, 3};
    Network pruned = remove_channels(net, surgery);
    CHECK(pruned.weight(0).shape() == std::vector<int64_t>{2, 1, 3, 3});
    CHECK(pruned.weight(2).shape() == std::vector<int64_t>{2, 2, 3, 3});
    for (int64_t co = 0; co < 2; ++co)
        for (int64_t h = 0; h < 3; ++h)
            for (int64_t w = 0; w < 3; ++w) {
                CHECK(pruned.weight(2).at4(co, 0, h, w) == net.weight(2).at4(co, 1, h, w));
                CHECK(pruned.weight(2).at4(co, 1, h, w) == net.weight(2).at4(co, 3, h, w));
            }

    Tensor x = random_batch({2, 1, 7, 7}, 43);
    SurgeryMap keep_nothing_changed;
    Network same = remove_channels(net, keep_nothing_changed);
    CHECK(same.forward(x).bit_equal(net.forward(x)));
}

TEST_CASE("pruning composes across successive surgeries") {
    Network net = Network::build({LayerSpec::dense(3, 5), LayerSpec::relu(5), LayerSpec::dense(5, 2)},
                                 29);
    SurgeryMap first;
    first.retained[0] = {0, 1, 3, 4};  // drop channel 2
    Network step1 = remove_channels(net, first);
    SurgeryMap second;
    second.retained[0] = {0, 2, 3};  // drop what was channel 1
    Network step2 = remove_channels(step1, second);

    SurgeryMap both;
    both.retained[0] = {0, 3, 4};
    Network direct = remove_channels(net, both);
    Tensor x = random_batch({6, 3}, 51);
    CHECK(step2.forward(x).bit_equal(direct.forward(x)));
}

TEST_CASE("surgery validation") {
    Network net = Network::build(mlp_2_3_2(), 31);
    SurgeryMap empty_layer;
    empty_layer.retained[0] = {};
    CHECK_THROWS_AS(remove_channels(net, empty_layer), ValueError);

    SurgeryMap out_of_range;
    out_of_range.retained[0] = {0, 3};
    CHECK_THROWS_AS(remove_channels(net, out_of_range), ValueError);

    SurgeryMap duplicate;
    duplicate.retained[0] = {1, 1};
    CHECK_THROWS_AS(remove_channels(net, duplicate), ValueError);

    SurgeryMap final_layer;
    final_layer.retained[2] = {0};
    CHECK_THROWS_WITH_AS(remove_channels(net, final_layer), doctest::Contains("final layer"),
                         ValueError);
}

TEST_CASE("flops of dense networks and the reduction fraction") {
    Network ten_ten = Network::from_parts({LayerSpec::dense(10, 10)},
                                          {Tensor::zeros({10, 10})}, {Tensor::zeros({10})},
                                          Precision::F64);
    Network ten_five = Network::from_parts({LayerSpec::dense(10, 5)},
                                           {Tensor::zeros({5, 10})}, {Tensor::zeros({5})},
                                           Precision::F64);
    CHECK(flops(ten_ten) == 100);
    CHECK(flops_reduction(ten_ten, ten_ten) == doctest::Approx(0.0));
    CHECK(flops_reduction(ten_ten, ten_five) == doctest::Approx(0.5));

    Network wide = Network::build({LayerSpec::dense(4, 8), LayerSpec::relu(8), LayerSpec::dense(8, 4)},
                                  3);
    CHECK(flops(wide) == 64);
    SurgeryMap surgery;
    surgery.retained[0] = {0, 1, 2, 3};
    Network narrow = remove_channels(wide, surgery);
    CHECK(flops(narrow) == 32);
    CHECK(flops_reduction(wide, narrow) == doctest::Approx(0.5));
}

TEST_CASE("conv flops need the spatial size and count MACs per output pixel") {
    Network net = Network::build({LayerSpec::conv(1, 2, 3)}, 5);
    CHECK_THROWS_AS(flops(net), ConfigError);
    CHECK(flops(net, std::make_pair<int64_t, int64_t>(5, 5)) == 2 * 1 * 9 * 3 * 3);
}

TEST_CASE("flops strictly decrease with any channel removal") {
    Network net = Network::build({LayerSpec::dense(3, 4), LayerSpec::relu(4), LayerSpec::dense(4, 3)},
                                 37);
    uint64_t base = flops(net);
    for (int64_t drop = 0; drop < 4; ++drop) {
        SurgeryMap surgery;
        std::vector<int64_t> kept;
        for (int64_t i = 0; i < 4; ++i)
            if (i != drop) kept.push_back(i);
        surgery.retained[0] = kept;
        CHECK(flops(remove_channels(net, surgery)) < base);
    }
}

TEST_CASE("layer bookkeeping") {
    Network net = Network::build({LayerSpec::conv(1, 3, 3), LayerSpec::relu(3),
                                  LayerSpec::conv(3, 2, 3), LayerSpec::dense(2, 2)},
                                 41);
    CHECK(net.weight_layers() == std::vector<int>{0, 2, 3});
    CHECK(net.prunable_layers() == std::vector<int>{0, 2});
    CHECK(weight_leaf_name(2) == "w2");
    CHECK(bias_leaf_name(0) == "b0");
    auto bindings = net.weight_bindings();
    CHECK(bindings.count("w0"));
    CHECK(bindings.count("b3"));
    CHECK(bindings.size() == 6);
}
