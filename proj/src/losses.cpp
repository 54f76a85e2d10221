#include "mrpf/losses.hpp"

#include <algorithm>
#include <cmath>

namespace mrpf {

const char* loss_method_name(LossMethod m) {
    switch (m) {
        case LossMethod::PgdAt: return "pgd_at";
        case LossMethod::Trades: return "trades";
        case LossMethod::Mart: return "mart";
    }
    return "?";
}

LossMethod loss_method_from_name(const std::string& name) {
    if (name == "pgd_at") return LossMethod::PgdAt;
    if (name == "trades") return LossMethod::Trades;
    if (name == "mart") return LossMethod::Mart;
    throw ConfigError("unknown loss method '" + name + "'");
}

AttackConfig default_inner_attack() {
    AttackConfig cfg;
    cfg.epsilon = 8.0 / 255.0;
    cfg.iterations = 10;
    cfg.alpha_step = cfg.epsilon / 4.0;
    return cfg;
}

void LossConfig::validate() const {
    if (lambda < 0.0) throw ConfigError("loss weight must be nonnegative");
    inner_attack.validate();
}

namespace {

std::vector<std::string> all_param_names(const Network& net) {
    std::vector<std::string> names;
    for (int i : net.weight_layers()) {
        names.push_back(weight_leaf_name(i));
        names.push_back(bias_leaf_name(i));
    }
    return names;
}

struct BuiltLoss {
    ExprGraph graph;
    ExprGraph::Bindings bindings;
};

LossValue finish(BuiltLoss&& built, const Network& net, bool want_grads) {
    LossValue out;
    out.value = built.graph.evaluate(built.bindings)[0];
    if (want_grads) {
        out.weight_grads = built.graph.gradient(built.bindings, all_param_names(net));
    }
    return out;
}

BuiltLoss build_pgd_at(const Network& net, const Tensor& x, const std::vector<int64_t>& y,
                       const LossConfig& cfg, uint64_t seed) {
    AttackConfig inner = cfg.inner_attack;
    inner.loss = AttackLossKind::CrossEntropy;
    Tensor x_adv = pgd(net, x, y, inner, derive_seed(seed, "inner-attack"));
    LogitsGraph lg = build_logits_graph(net, x.shape(), true, false);
    NodeId probs = lg.graph.softmax(lg.logits);
    lg.graph.set_root(lg.graph.cross_entropy(probs, y));
    BuiltLoss built{std::move(lg.graph), net.weight_bindings()};
    built.bindings["x"] = std::move(x_adv);
    return built;
}

BuiltLoss build_trades(const Network& net, const Tensor& x, const std::vector<int64_t>& y,
                       const LossConfig& cfg, uint64_t seed) {
    if (cfg.lambda == 0.0) {
        LogitsGraph lg = build_logits_graph(net, x.shape(), true, false);
        NodeId probs = lg.graph.softmax(lg.logits);
        lg.graph.set_root(lg.graph.cross_entropy(probs, y));
        BuiltLoss built{std::move(lg.graph), net.weight_bindings()};
        built.bindings["x"] = x;
        return built;
    }
    AttackConfig inner = cfg.inner_attack;
    inner.loss = AttackLossKind::KlToReference;
    if (inner.init_noise <= 0.0) inner.init_noise = 1e-3;
    Tensor x_adv = pgd(net, x, y, inner, derive_seed(seed, "inner-attack"));

    LogitsGraph lg = build_logits_graph(net, x.shape(), true, false);
    NodeId p_clean = lg.graph.softmax(lg.logits);
    NodeId ce = lg.graph.cross_entropy(p_clean, y);
    NodeId x2 = lg.graph.leaf("x_adv", x.shape(), true);
    NodeId p_adv = lg.graph.softmax(append_forward(lg.graph, net, x2, true));
    NodeId kl = lg.graph.kl_div(p_clean, p_adv);
    lg.graph.set_root(lg.graph.add(ce, lg.graph.scale(kl, cfg.lambda)));

    BuiltLoss built{std::move(lg.graph), net.weight_bindings()};
    built.bindings["x"] = x;
    built.bindings["x_adv"] = std::move(x_adv);
    return built;
}

BuiltLoss build_mart(const Network& net, const Tensor& x, const std::vector<int64_t>& y,
                     const LossConfig& cfg, uint64_t seed) {
    AttackConfig inner = cfg.inner_attack;
    inner.loss = AttackLossKind::CrossEntropy;
    Tensor x_adv = pgd(net, x, y, inner, derive_seed(seed, "inner-attack"));

    std::vector<int64_t> mis;
    if (cfg.lambda > 0.0) {
        std::vector<int64_t> pred = argmax_rows(net.forward(x));
        for (size_t i = 0; i < y.size(); ++i) {
            if (pred[i] != y[i]) mis.push_back(static_cast<int64_t>(i));
        }
    }

    LogitsGraph lg = build_logits_graph(net, x.shape(), true, false);
    NodeId p_adv = lg.graph.softmax(lg.logits);
    NodeId ce = lg.graph.cross_entropy(p_adv, y);
    NodeId root = ce;
    BuiltLoss built{ExprGraph(net.precision()), {}};
    if (!mis.empty()) {
        std::vector<int64_t> sub_shape = x.shape();
        sub_shape[0] = static_cast<int64_t>(mis.size());
        NodeId xm = lg.graph.leaf("x_mis", sub_shape, true);
        NodeId xam = lg.graph.leaf("x_adv_mis", sub_shape, true);
        NodeId pm = lg.graph.softmax(append_forward(lg.graph, net, xm, true));
        NodeId pam = lg.graph.softmax(append_forward(lg.graph, net, xam, true));
        // kl_div averages over its own sub-batch; rescale so the gated terms
        // are averaged over the full batch instead.
        double factor = cfg.lambda * static_cast<double>(mis.size()) / static_cast<double>(x.extent(0));
        root = lg.graph.add(ce, lg.graph.scale(lg.graph.kl_div(pm, pam), factor));
        built.bindings["x_mis"] = gather_rows(x, mis);
        built.bindings["x_adv_mis"] = gather_rows(x_adv, mis);
    }
    lg.graph.set_root(root);
    built.graph = std::move(lg.graph);
    auto wb = net.weight_bindings();
    for (auto& [k, v] : wb) built.bindings[k] = std::move(v);
    built.bindings["x"] = std::move(x_adv);
    return built;
}

BuiltLoss build_loss(const Network& net, const Tensor& x, const std::vector<int64_t>& y,
                     const LossConfig& cfg, uint64_t seed) {
    cfg.validate();
    if (static_cast<int64_t>(y.size()) != x.extent(0)) {
        throw ShapeError("loss batch has " + std::to_string(x.extent(0)) + " inputs but " +
                         std::to_string(y.size()) + " labels");
    }
    switch (cfg.method) {
        case LossMethod::PgdAt: return build_pgd_at(net, x, y, cfg, seed);
        case LossMethod::Trades: return build_trades(net, x, y, cfg, seed);
        case LossMethod::Mart: return build_mart(net, x, y, cfg, seed);
    }
    throw ConfigError("unknown loss method");
}

}  // namespace

double pgd_at_loss(const Network& net, const Tensor& x, const std::vector<int64_t>& y,
                   const LossConfig& cfg, uint64_t seed) {
    LossConfig c = cfg;
    c.method = LossMethod::PgdAt;
    return finish(build_loss(net, x, y, c, seed), net, false).value;
}

double trades_loss(const Network& net, const Tensor& x, const std::vector<int64_t>& y,
                   const LossConfig& cfg, uint64_t seed) {
    LossConfig c = cfg;
    c.method = LossMethod::Trades;
    return finish(build_loss(net, x, y, c, seed), net, false).value;
}

double mart_loss(const Network& net, const Tensor& x, const std::vector<int64_t>& y,
                 const LossConfig& cfg, uint64_t seed) {
    LossConfig c = cfg;
    c.method = LossMethod::Mart;
    return finish(build_loss(net, x, y, c, seed), net, false).value;
}

double robust_loss(const Network& net, const Tensor& x, const std::vector<int64_t>& y,
                   const LossConfig& cfg, uint64_t seed) {
    return finish(build_loss(net, x, y, cfg, seed), net, false).value;
}

LossValue robust_loss_with_grads(const Network& net, const Tensor& x, const std::vector<int64_t>& y,
                                 const LossConfig& cfg, uint64_t seed) {
    return finish(build_loss(net, x, y, cfg, seed), net, true);
}

}  // namespace mrpf
