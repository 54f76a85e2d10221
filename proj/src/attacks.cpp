#include "mrpf/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace mrpf {

namespace {
constexpr double kProbClamp = 1e-12;

double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Componentwise projection onto the l-inf ball around x0 intersected with the
// valid range (both are boxes, so one clamp per side suffices).
void project_box(Tensor& x, const Tensor& x0, const AttackConfig& cfg) {
    for (int64_t i = 0; i < x.size(); ++i) {
        double lo = std::max(cfg.range_lo, x0[i] - cfg.epsilon);
        double hi = std::min(cfg.range_hi, x0[i] + cfg.epsilon);
        double v = x[i];
        x.data()[static_cast<size_t>(i)] = std::min(hi, std::max(lo, v));
    }
}

std::vector<double> per_example_ce(const Tensor& probs, const std::vector<int64_t>& labels) {
    int64_t b = probs.extent(0), c = probs.extent(1);
    std::vector<double> out(static_cast<size_t>(b));
    for (int64_t i = 0; i < b; ++i) {
        out[static_cast<size_t>(i)] = -std::log(std::max(probs[i * c + labels[static_cast<size_t>(i)]], kProbClamp));
    }
    return out;
}

std::vector<double> per_example_kl(const Tensor& ref, const Tensor& probs) {
    int64_t b = probs.extent(0), c = probs.extent(1);
    std::vector<double> out(static_cast<size_t>(b), 0.0);
    for (int64_t i = 0; i < b; ++i) {
        double s = 0.0;
        for (int64_t j = 0; j < c; ++j) {
            double r = std::max(ref[i * c + j], kProbClamp);
            double q = std::max(probs[i * c + j], kProbClamp);
            s += r * (std::log(r) - std::log(q));
        }
        out[static_cast<size_t>(i)] = s;
    }
    return out;
}

Tensor seeded_start(const Tensor& x, const AttackConfig& cfg, uint64_t seed) {
    if (cfg.init_noise <= 0.0 || cfg.epsilon <= 0.0 || cfg.iterations == 0) return x;
    Rng rng(derive_seed(seed, "attack-init"));
    Tensor out = x;
    for (auto& v : out.data()) v += cfg.init_noise * rng.normal();
    out.requantize();
    project_box(out, x, cfg);
    out.requantize();
    return out;
}
}  // namespace

const char* attack_method_name(AttackMethod m) {
    switch (m) {
        case AttackMethod::Fgsm: return "fgsm";
        case AttackMethod::Pgd: return "pgd";
        case AttackMethod::Apgd: return "apgd";
    }
    return "?";
}

AttackMethod attack_method_from_name(const std::string& name) {
    if (name == "fgsm") return AttackMethod::Fgsm;
    if (name == "pgd") return AttackMethod::Pgd;
    if (name == "apgd") return AttackMethod::Apgd;
    throw ConfigError("unknown attack method '" + name + "'");
}

void AttackConfig::validate() const {
    if (epsilon < 0.0) throw ConfigError("attack epsilon must be nonnegative");
    if (iterations < 0) throw ConfigError("attack iterations must be nonnegative");
    if (iterations > 0 && alpha_step <= 0.0) throw ConfigError("attack step must be positive");
    if (momentum < 0.0 || momentum > 1.0) throw ConfigError("attack momentum must lie in [0,1]");
    if (range_lo > range_hi) throw ConfigError("attack valid range is inverted");
    if (init_noise < 0.0) throw ConfigError("attack init noise must be nonnegative");
}

AttackConfig eval_attack_preset() {
    return AttackConfig{};
}

AttackConfig appendix_attack_preset(double epsilon, int iterations) {
    AttackConfig cfg;
    cfg.epsilon = epsilon;
    cfg.iterations = iterations;
    cfg.alpha_step = iterations > 0 ? epsilon / iterations : epsilon;
    return cfg;
}

AttackConfig fgsm_attack_preset(double epsilon) {
    AttackConfig cfg;
    cfg.epsilon = epsilon;
    cfg.alpha_step = epsilon > 0.0 ? epsilon : 1.0;
    cfg.iterations = 1;
    return cfg;
}

AttackConfig apgd_attack_preset(double epsilon, int iterations) {
    AttackConfig cfg;
    cfg.epsilon = epsilon;
    cfg.iterations = iterations;
    cfg.alpha_step = epsilon > 0.0 ? 2.0 * epsilon : 1.0;
    return cfg;
}

namespace {

struct GraphObjective {
    ExprGraph graph;
    ExprGraph::Bindings bindings;  // weights (+ reference distribution)
    NodeId probs = -1;
    AttackLossKind kind = AttackLossKind::CrossEntropy;
    std::vector<int64_t> labels;
    Tensor ref;
};

AttackObjective wrap(std::shared_ptr<GraphObjective> g, std::vector<int64_t> input_shape) {
    AttackObjective obj;
    obj.input_shape = std::move(input_shape);
    obj.eval = [g](const Tensor& x, Tensor* grad) {
        ExprGraph::Bindings b = g->bindings;
        b["x"] = x;
        std::vector<double> losses;
        if (g->kind == AttackLossKind::CrossEntropy) {
            auto values = g->graph.evaluate_all(b);
            losses = per_example_ce(values[static_cast<size_t>(g->probs)], g->labels);
        } else {
            auto values = g->graph.evaluate_all(b);
            losses = per_example_kl(g->ref, values[static_cast<size_t>(g->probs)]);
        }
        if (grad) *grad = g->graph.gradient(b, {"x"}).at("x");
        return losses;
    };
    return obj;
}

}  // namespace

AttackObjective ce_objective(const Network& net, const std::vector<int64_t>& labels,
                             const std::vector<int64_t>& input_shape) {
    auto g = std::make_shared<GraphObjective>();
    LogitsGraph lg = build_logits_graph(net, input_shape, false, true);
    g->probs = lg.graph.softmax(lg.logits);
    NodeId ce = lg.graph.cross_entropy(g->probs, labels);
    // Scale the batch-mean loss back to a sum so per-example gradients do not
    // depend on the batch size.
    lg.graph.set_root(lg.graph.scale(ce, static_cast<double>(input_shape.at(0))));
    g->graph = std::move(lg.graph);
    g->bindings = net.weight_bindings();
    g->kind = AttackLossKind::CrossEntropy;
    g->labels = labels;
    return wrap(std::move(g), input_shape);
}

AttackObjective kl_objective(const Network& net, const Tensor& ref_probs,
                             const std::vector<int64_t>& input_shape) {
    auto g = std::make_shared<GraphObjective>();
    LogitsGraph lg = build_logits_graph(net, input_shape, false, true);
    g->probs = lg.graph.softmax(lg.logits);
    NodeId ref = lg.graph.leaf("ref", ref_probs.shape(), true);
    NodeId kl = lg.graph.kl_div(ref, g->probs);
    lg.graph.set_root(lg.graph.scale(kl, static_cast<double>(input_shape.at(0))));
    g->graph = std::move(lg.graph);
    g->bindings = net.weight_bindings();
    g->bindings["ref"] = ref_probs;
    g->kind = AttackLossKind::KlToReference;
    g->ref = ref_probs;
    return wrap(std::move(g), input_shape);
}

AttackObjective logit_sum_objective(const Network& net, const std::vector<int64_t>& input_shape) {
    LogitsGraph lg = build_logits_graph(net, input_shape, false, true);
    NodeId logits = lg.logits;
    lg.graph.set_root(lg.graph.reduce_sum(logits));
    auto graph = std::make_shared<ExprGraph>(std::move(lg.graph));
    auto bindings = std::make_shared<ExprGraph::Bindings>(net.weight_bindings());
    AttackObjective obj;
    obj.input_shape = input_shape;
    obj.eval = [graph, bindings, logits](const Tensor& x, Tensor* grad) {
        ExprGraph::Bindings b = *bindings;
        b["x"] = x;
        auto values = graph->evaluate_all(b);
        const Tensor& z = values[static_cast<size_t>(logits)];
        int64_t bsz = z.extent(0), c = z.extent(1);
        std::vector<double> losses(static_cast<size_t>(bsz), 0.0);
        for (int64_t i = 0; i < bsz; ++i) {
            double s = 0.0;
            for (int64_t j = 0; j < c; ++j) s += z[i * c + j];
            losses[static_cast<size_t>(i)] = s;
        }
        if (grad) *grad = graph->gradient(b, {"x"}).at("x");
        return losses;
    };
    return obj;
}

Tensor fgsm_attack(const AttackObjective& obj, const Tensor& x, const AttackConfig& cfg) {
    cfg.validate();
    if (x.shape() != obj.input_shape) {
        throw ShapeError("attack input " + shape_str(x.shape()) + " does not match objective " +
                         shape_str(obj.input_shape));
    }
    if (cfg.epsilon == 0.0) return x;
    Tensor grad;
    obj.eval(x, &grad);
    Tensor out = x;
    for (int64_t i = 0; i < out.size(); ++i) {
        out.data()[static_cast<size_t>(i)] += cfg.epsilon * sign0(grad[i]);
    }
    project_box(out, x, cfg);
    out.requantize();
    return out;
}

Tensor pgd_attack(const AttackObjective& obj, const Tensor& x, const AttackConfig& cfg, uint64_t seed) {
    cfg.validate();
    if (x.shape() != obj.input_shape) {
        throw ShapeError("attack input " + shape_str(x.shape()) + " does not match objective " +
                         shape_str(obj.input_shape));
    }
    if (cfg.epsilon == 0.0 || cfg.iterations == 0) return x;
    Tensor cur = seeded_start(x, cfg, seed);
    for (int t = 0; t < cfg.iterations; ++t) {
        Tensor grad;
        obj.eval(cur, &grad);
        for (int64_t i = 0; i < cur.size(); ++i) {
            cur.data()[static_cast<size_t>(i)] += cfg.alpha_step * sign0(grad[i]);
        }
        project_box(cur, x, cfg);
        cur.requantize();
    }
    return cur;
}

Tensor apgd_attack(const AttackObjective& obj, const Tensor& x, const AttackConfig& cfg, uint64_t seed) {
    cfg.validate();
    if (x.shape() != obj.input_shape) {
        throw ShapeError("attack input " + shape_str(x.shape()) + " does not match objective " +
                         shape_str(obj.input_shape));
    }
    if (cfg.iterations < 1 || cfg.epsilon == 0.0) return x;
    int64_t bsz = x.extent(0);
    int64_t row = x.size() / bsz;

    // Step-halving checkpoints from the AutoAttack schedule: p_1 = 0.22,
    // p_{j+1} = p_j + max(p_j - p_{j-1} - 0.03, 0.06), checkpoint at ceil(p*T).
    std::vector<int> checkpoints;
    {
        double prev = 0.0, cur = 0.22;
        while (true) {
            int k = static_cast<int>(std::ceil(cur * cfg.iterations));
            if (k > cfg.iterations) break;
            if (checkpoints.empty() || k > checkpoints.back()) checkpoints.push_back(k);
            double next = cur + std::max(cur - prev - 0.03, 0.06);
            prev = cur;
            cur = next;
        }
    }

    Tensor cur = seeded_start(x, cfg, seed);
    Tensor prev = cur;
    Tensor best = cur;
    std::vector<double> best_loss = obj.eval(cur, nullptr);
    double eta = cfg.alpha_step;
    size_t next_cp = 0;

    for (int t = 0; t < cfg.iterations; ++t) {
        Tensor grad;
        obj.eval(cur, &grad);
        Tensor z = cur;
        for (int64_t i = 0; i < z.size(); ++i) z.data()[static_cast<size_t>(i)] += eta * grad[i];
        project_box(z, x, cfg);
        Tensor nxt = cur;
        for (int64_t i = 0; i < nxt.size(); ++i) {
            nxt.data()[static_cast<size_t>(i)] = cur[i] + cfg.momentum * (z[i] - cur[i]) +
                                                 (1.0 - cfg.momentum) * (cur[i] - prev[i]);
        }
        project_box(nxt, x, cfg);
        nxt.requantize();
        prev = cur;
        cur = nxt;

        std::vector<double> losses = obj.eval(cur, nullptr);
        for (int64_t b = 0; b < bsz; ++b) {
            if (losses[static_cast<size_t>(b)] > best_loss[static_cast<size_t>(b)]) {
                best_loss[static_cast<size_t>(b)] = losses[static_cast<size_t>(b)];
                for (int64_t j = 0; j < row; ++j) {
                    best.data()[static_cast<size_t>(b * row + j)] = cur[b * row + j];
                }
            }
        }

        if (next_cp < checkpoints.size() && t + 1 == checkpoints[next_cp]) {
            eta *= 0.5;
            cur = best;
            prev = best;
            ++next_cp;
        }
    }
    return best;
}

namespace {
AttackObjective objective_for(const Network& net, const Tensor& x, const std::vector<int64_t>& y,
                              const AttackConfig& cfg) {
    if (static_cast<int64_t>(y.size()) != x.extent(0)) {
        throw ShapeError("attack batch has " + std::to_string(x.extent(0)) + " inputs but " +
                         std::to_string(y.size()) + " labels");
    }
    if (cfg.loss == AttackLossKind::KlToReference) {
        LogitsGraph lg = build_logits_graph(net, x.shape(), false, false);
        NodeId probs = lg.graph.softmax(lg.logits);
        lg.graph.set_root(probs);
        ExprGraph::Bindings b = net.weight_bindings();
        b["x"] = x;
        Tensor ref = lg.graph.evaluate(b);
        return kl_objective(net, ref, x.shape());
    }
    return ce_objective(net, y, x.shape());
}
}  // namespace

Tensor fgsm(const Network& net, const Tensor& x, const std::vector<int64_t>& y, const AttackConfig& cfg) {
    return fgsm_attack(objective_for(net, x, y, cfg), x, cfg);
}

Tensor pgd(const Network& net, const Tensor& x, const std::vector<int64_t>& y, const AttackConfig& cfg,
           uint64_t seed) {
    return pgd_attack(objective_for(net, x, y, cfg), x, cfg, seed);
}

Tensor apgd(const Network& net, const Tensor& x, const std::vector<int64_t>& y, const AttackConfig& cfg,
            uint64_t seed) {
    return apgd_attack(objective_for(net, x, y, cfg), x, cfg, seed);
}

Tensor run_attack(AttackMethod method, const Network& net, const Tensor& x, const std::vector<int64_t>& y,
                  const AttackConfig& cfg, uint64_t seed) {
    switch (method) {
        case AttackMethod::Fgsm: return fgsm(net, x, y, cfg);
        case AttackMethod::Pgd: return pgd(net, x, y, cfg, seed);
        case AttackMethod::Apgd: return apgd(net, x, y, cfg, seed);
    }
    throw ConfigError("unknown attack method");
}

AdversarialSet generate_adversarial_set(const Network& net, const Dataset& data, AttackMethod method,
                                        const AttackConfig& cfg, uint64_t seed) {
    cfg.validate();
    if (data.size() == 0) throw ValueError("cannot attack an empty dataset");
    constexpr int64_t kChunk = 256;
    AdversarialSet out;
    out.classes = data.classes;
    out.labels = data.labels;
    out.inputs = Tensor::zeros(data.features.shape(), data.features.precision());
    int64_t n = data.size();
    int64_t row = data.features.size() / n;
    for (int64_t start = 0; start < n; start += kChunk) {
        int64_t count = std::min(kChunk, n - start);
        std::vector<int64_t> idx(static_cast<size_t>(count));
        for (int64_t i = 0; i < count; ++i) idx[static_cast<size_t>(i)] = start + i;
        Tensor xb = gather_rows(data.features, idx);
        std::vector<int64_t> yb(data.labels.begin() + start, data.labels.begin() + start + count);
        Tensor adv = run_attack(method, net, xb, yb, cfg, derive_seed(seed, "attack-chunk",
                                                                      static_cast<uint64_t>(start)));
        for (int64_t i = 0; i < count * row; ++i) {
            out.inputs.data()[static_cast<size_t>(start * row + i)] = adv[i];
        }
    }
    out.perturbations = Tensor::zeros(data.features.shape(), data.features.precision());
    for (int64_t i = 0; i < out.inputs.size(); ++i) {
        out.perturbations.data()[static_cast<size_t>(i)] = out.inputs[i] - data.features[i];
    }
    out.perturbations.requantize();
    return out;
}

std::vector<int64_t> argmax_rows(const Tensor& logits) {
    if (logits.rank() != 2) throw ShapeError("argmax_rows expects [batch, classes], got " + shape_str(logits.shape()));
    int64_t b = logits.extent(0), c = logits.extent(1);
    std::vector<int64_t> out(static_cast<size_t>(b), 0);
    for (int64_t i = 0; i < b; ++i) {
        double mx = logits[i * c];
        for (int64_t j = 1; j < c; ++j) {
            if (logits[i * c + j] > mx) {
                mx = logits[i * c + j];
                out[static_cast<size_t>(i)] = j;
            }
        }
    }
    return out;
}

double mean_ce_loss(const Network& net, const Tensor& x, const std::vector<int64_t>& y) {
    LogitsGraph lg = build_logits_graph(net, x.shape(), false, false);
    NodeId probs = lg.graph.softmax(lg.logits);
    lg.graph.set_root(lg.graph.cross_entropy(probs, y));
    ExprGraph::Bindings b = net.weight_bindings();
    b["x"] = x;
    return lg.graph.evaluate(b)[0];
}

}  // namespace mrpf
