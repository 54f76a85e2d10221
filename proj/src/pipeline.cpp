#include "mrpf/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "mrpf/attacks.hpp"
#include "mrpf/mrs.hpp"

namespace mrpf {

const char* lr_kind_name(LrKind k) {
    switch (k) {
        case LrKind::Step: return "step";
        case LrKind::Cosine: return "cosine";
    }
    throw ValueError("unknown lr kind");
}

LrKind lr_kind_from_name(const std::string& name) {
    if (name == "step") return LrKind::Step;
    if (name == "cosine") return LrKind::Cosine;
    throw ConfigError("unknown lr schedule '" + name + "' (expected step or cosine)");
}

double lr_schedule(LrKind kind, int epoch, int total_epochs, double lr0, double lr_floor) {
    if (total_epochs <= 0) throw ValueError("lr_schedule: total_epochs must be positive");
    if (epoch < 0 || epoch >= total_epochs)
        throw ValueError("lr_schedule: epoch " + std::to_string(epoch) + " outside [0, " +
                         std::to_string(total_epochs) + ")");
    if (lr0 <= 0.0) throw ValueError("lr_schedule: lr0 must be positive");
    switch (kind) {
        case LrKind::Step:
            return lr0 * std::pow(0.1, static_cast<double>(epoch / 10));
        case LrKind::Cosine: {
            if (lr_floor < 0.0 || lr_floor > lr0)
                throw ValueError("lr_schedule: lr_floor must lie in [0, lr0]");
            const double pi = std::acos(-1.0);
            double t = static_cast<double>(epoch) / static_cast<double>(total_epochs);
            return lr_floor + 0.5 * (lr0 - lr_floor) * (1.0 + std::cos(pi * t));
        }
    }
    throw ValueError("unknown lr kind");
}

void sgd_momentum_step(ExprGraph::Bindings& params, const GradMap& grads, SgdState& state,
                       double lr, double momentum) {
    if (momentum < 0.0 || momentum >= 1.0)
        throw ValueError("sgd: momentum must lie in [0, 1)");
    for (const auto& [name, grad] : grads) {
        auto it = params.find(name);
        if (it == params.end()) throw ValueError("sgd: gradient for unknown parameter '" + name + "'");
        Tensor& w = it->second;
        if (!w.same_shape(grad))
            throw ShapeError("sgd: gradient shape mismatch for '" + name + "'");
        auto vit = state.velocity.find(name);
        if (vit == state.velocity.end())
            vit = state.velocity.emplace(name, Tensor::zeros(w.shape(), w.precision())).first;
        Tensor& v = vit->second;
        for (int64_t i = 0; i < w.size(); ++i) {
            v[i] = momentum * v[i] + grad[i];
            w[i] -= lr * v[i];
        }
        v.requantize();
        w.requantize();
    }
}

void RunConfig::validate() const {
    if (batch_size <= 0) throw ConfigError("run config: batch_size must be positive");
    if (epochs < 0) throw ConfigError("run config: epochs must be non-negative");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("run config: momentum must lie in [0, 1)");
    if (lr0 <= 0.0) throw ConfigError("run config: lr0 must be positive");
    if (lr_floor < 0.0 || lr_floor > lr0) throw ConfigError("run config: lr_floor must lie in [0, lr0]");
    if (r_at < 0.0 || r_at > 1.0) throw ConfigError("run config: r_at must lie in [0, 1]");
    if (criterion != "magnitude" && criterion != "taylor")
        throw ConfigError("run config: unknown criterion '" + criterion + "'");
    attack.validate();
    loss.validate();
    mrs.validate();
    ratios.validate();
}

namespace {

double accuracy(const Network& net, const Tensor& inputs, const std::vector<int64_t>& labels) {
    int64_t n = inputs.extent(0);
    if (n == 0) throw ValueError("accuracy: empty evaluation set");
    int64_t hits = 0;
    const int64_t chunk = 256;
    for (int64_t start = 0; start < n; start += chunk) {
        int64_t count = std::min(chunk, n - start);
        std::vector<int64_t> idx(count);
        for (int64_t i = 0; i < count; ++i) idx[i] = start + i;
        Tensor xb = gather_rows(inputs, idx);
        Tensor logits = net.forward(xb);
        std::vector<int64_t> pred = argmax_rows(logits);
        for (int64_t i = 0; i < count; ++i)
            if (pred[static_cast<size_t>(i)] == labels[static_cast<size_t>(start + i)]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(n);
}

}  // namespace

Metrics evaluate_metrics(const Network& net, const Dataset& testset, const AttackConfig& attack_cfg) {
    if (testset.size() == 0) throw ValueError("evaluate_metrics: empty test set");
    attack_cfg.validate();
    Metrics m;
    m.sacc = accuracy(net, testset.features, testset.labels);

    AttackConfig pgd_cfg = attack_cfg;
    pgd_cfg.loss = AttackLossKind::CrossEntropy;
    pgd_cfg.init_noise = 0.0;
    AdversarialSet pgd_set = generate_adversarial_set(net, testset, AttackMethod::Pgd, pgd_cfg, 0);
    m.adv_pgd = accuracy(net, pgd_set.inputs, testset.labels);

    AttackConfig fgsm_cfg = fgsm_attack_preset(attack_cfg.epsilon);
    fgsm_cfg.range_lo = attack_cfg.range_lo;
    fgsm_cfg.range_hi = attack_cfg.range_hi;
    AdversarialSet fgsm_set = generate_adversarial_set(net, testset, AttackMethod::Fgsm, fgsm_cfg, 0);
    m.adv_fgsm = accuracy(net, fgsm_set.inputs, testset.labels);
    return m;
}

FinetuneResult finetune(const Network& net, const Dataset& train, const Dataset& eval_set,
                        const RunConfig& cfg) {
    cfg.validate();
    if (train.size() == 0) throw ValueError("finetune: empty training set");

    FinetuneResult out{net, {}};
    SgdState opt;
    int64_t aug_count = static_cast<int64_t>(std::floor(cfg.r_at * static_cast<double>(train.size())));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double lr = lr_schedule(cfg.lr_kind, epoch, cfg.epochs, cfg.lr0, cfg.lr_floor);

        Dataset epoch_data = train;
        if (aug_count > 0) {
            Rng sample_rng(derive_seed(cfg.seed, "finetune-aug-sample", static_cast<uint64_t>(epoch)));
            std::vector<int64_t> perm = shuffled_indices(train.size(), sample_rng);
            perm.resize(static_cast<size_t>(aug_count));
            Dataset subset = train.subset(perm);
            AdversarialSet aug = generate_adversarial_set(
                out.net, subset, cfg.attack_method, cfg.attack,
                derive_seed(cfg.seed, "finetune-aug-attack", static_cast<uint64_t>(epoch)));
            Dataset aug_data{aug.inputs, aug.labels, train.classes};
            epoch_data = concat(train, aug_data);
        }

        Rng order_rng(derive_seed(cfg.seed, "finetune-shuffle", static_cast<uint64_t>(epoch)));
        std::vector<int64_t> order = shuffled_indices(epoch_data.size(), order_rng);

        double loss_sum = 0.0;
        int64_t seen = 0;
        int64_t step = 0;
        for (int64_t start = 0; start < epoch_data.size(); start += cfg.batch_size, ++step) {
            int64_t count = std::min(cfg.batch_size, epoch_data.size() - start);
            std::vector<int64_t> idx(order.begin() + start, order.begin() + start + count);
            Dataset batch = epoch_data.subset(idx);
            uint64_t step_seed = derive_seed(cfg.seed, "finetune-loss", static_cast<uint64_t>(epoch),
                                             static_cast<uint64_t>(step));
            LossValue lv = robust_loss_with_grads(out.net, batch.features, batch.labels, cfg.loss,
                                                  step_seed);
            ExprGraph::Bindings params = out.net.weight_bindings();
            sgd_momentum_step(params, lv.weight_grads, opt, lr, cfg.momentum);
            for (int64_t li : out.net.weight_layers()) {
                out.net.set_weight(li, params.at(weight_leaf_name(li)));
                out.net.set_bias(li, params.at(bias_leaf_name(li)));
            }
            loss_sum += lv.value * static_cast<double>(count);
            seen += count;
        }

        EpochMetrics em;
        em.train_loss = loss_sum / static_cast<double>(seen);
        Metrics m = evaluate_metrics(out.net, eval_set, cfg.attack);
        em.sacc = m.sacc;
        em.adv_pgd = m.adv_pgd;
        em.adv_fgsm = m.adv_fgsm;
        out.history.push_back(em);
    }
    return out;
}

bool records_match(const RunRecord& a, const RunRecord& b) {
    return a.format_version == b.format_version && a.config == b.config &&
           a.original_arch == b.original_arch && a.pruned_arch == b.pruned_arch &&
           a.stage_seeds == b.stage_seeds && a.mrs == b.mrs && a.plan == b.plan &&
           a.history == b.history && a.final_metrics == b.final_metrics &&
           a.flops_reduction_value == b.flops_reduction_value && a.input_h == b.input_h &&
           a.input_w == b.input_w;
}

MrpfResult mrpf_run(const Network& net, const Dataset& train, const Dataset& eval_set,
                    const RunConfig& cfg, RunRecord* partial) {
    cfg.validate();
    auto t0 = std::chrono::steady_clock::now();

    RunRecord rec;
    rec.config = cfg;
    rec.original_arch = net.specs();
    auto publish = [&] {
        if (partial) *partial = rec;
    };
    publish();

    auto guard = [&](const char* stage, auto&& fn) {
        try {
            fn();
        } catch (const StageError&) {
            publish();
            throw;
        } catch (const std::exception& e) {
            publish();
            throw StageError(stage, e.what());
        }
    };

    bool has_conv = false;
    for (const LayerSpec& s : net.specs())
        if (s.kind == LayerKind::Conv2d) has_conv = true;
    std::optional<std::pair<int64_t, int64_t>> input_hw;
    if (has_conv) {
        if (train.features.rank() != 4)
            throw StageError("generate-ae", "convolutional pipeline needs rank-4 inputs");
        input_hw = std::make_pair(train.features.extent(2), train.features.extent(3));
        rec.input_h = input_hw->first;
        rec.input_w = input_hw->second;
    }

    AdversarialSet ae;
    guard("generate-ae", [&] {
        if (train.size() == 0) throw ValueError("empty training set");
        uint64_t s = derive_seed(cfg.seed, "ae");
        rec.stage_seeds["generate-ae"] = s;
        ae = generate_adversarial_set(net, train, cfg.attack_method, cfg.attack, s);
    });

    guard("mrs", [&] {
        MrsConfig mcfg = cfg.mrs;
        mcfg.seed = derive_seed(cfg.seed, "mrs");
        rec.stage_seeds["mrs"] = mcfg.seed;
        rec.mrs = compute_mrs(net, ae, mcfg);
    });

    std::vector<double> ratios;
    guard("allocate", [&] { ratios = allocate_ratios(rec.mrs, cfg.ratios); });

    Network pruned(net);
    guard("prune", [&] {
        ImportanceScores scores;
        if (cfg.criterion == "taylor") {
            int64_t count = std::min<int64_t>(cfg.batch_size, train.size());
            std::vector<int64_t> idx(static_cast<size_t>(count));
            for (int64_t i = 0; i < count; ++i) idx[static_cast<size_t>(i)] = i;
            Dataset probe = train.subset(idx);
            scores = taylor_importance(net, probe.features, probe.labels);
        } else {
            scores = magnitude_importance(net);
        }
        PlanProvenance prov{mrs_report_hash(rec.mrs), cfg.criterion, cfg.ratios};
        rec.plan = plan_pruning(scores, ratios, net, prov);
        pruned = remove_channels(net, rec.plan.to_surgery(net));
        rec.pruned_arch = pruned.specs();
        rec.flops_reduction_value = flops_reduction(net, pruned, input_hw);
    });

    MrpfResult result{pruned, {}};
    guard("finetune", [&] {
        rec.stage_seeds["finetune"] = cfg.seed;
        FinetuneResult ft = finetune(pruned, train, eval_set, cfg);
        result.net = ft.net;
        rec.history = ft.history;
        if (!rec.history.empty()) {
            const EpochMetrics& last = rec.history.back();
            rec.final_metrics = Metrics{last.sacc, last.adv_pgd, last.adv_fgsm};
        } else {
            rec.final_metrics = evaluate_metrics(result.net, eval_set, cfg.attack);
        }
    });

    rec.wall_seconds =
        std::chrono::duration_cast<std::chrono::duration<double>>(std::chrono::steady_clock::now() - t0)
            .count();
    result.record = rec;
    publish();
    return result;
}

}  // namespace mrpf
