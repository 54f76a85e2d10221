#include "mrpf/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mrpf {

namespace {

void check_scores_cover(const ImportanceScores& scores, const Network& net) {
    std::vector<int> expected = net.prunable_layers();
    if (scores.layers != expected) {
        throw ValueError("importance scores do not cover the network's prunable layers");
    }
    for (size_t i = 0; i < scores.layers.size(); ++i) {
        int64_t k = net.spec(scores.layers[i]).out_channels;
        if (static_cast<int64_t>(scores.scores[i].size()) != k) {
            throw ValueError("layer " + std::to_string(scores.layers[i]) + " has " + std::to_string(k) +
                             " channels but " + std::to_string(scores.scores[i].size()) + " scores");
        }
    }
}

}  // namespace

ImportanceScores magnitude_importance(const Network& net, double p) {
    if (p <= 0.0) throw ConfigError("magnitude norm degree must be positive");
    ImportanceScores out;
    out.criterion = "magnitude";
    for (int layer : net.prunable_layers()) {
        const Tensor& w = net.weight(layer);
        int64_t rows = w.extent(0);
        int64_t row_len = w.size() / rows;
        std::vector<double> s(static_cast<size_t>(rows), 0.0);
        for (int64_t r = 0; r < rows; ++r) {
            double acc = 0.0;
            for (int64_t j = 0; j < row_len; ++j) acc += std::pow(std::fabs(w[r * row_len + j]), p);
            s[static_cast<size_t>(r)] = acc;
        }
        out.layers.push_back(layer);
        out.scores.push_back(std::move(s));
        out.degenerate.push_back(false);
    }
    return out;
}

ImportanceScores taylor_importance(const Network& net, const Tensor& batch,
                                   const std::vector<int64_t>& labels) {
    if (batch.empty()) throw ValueError("taylor importance needs a nonempty batch");
    LogitsGraph lg = build_logits_graph(net, batch.shape(), true, false);
    NodeId probs = lg.graph.softmax(lg.logits);
    lg.graph.set_root(lg.graph.cross_entropy(probs, labels));
    ExprGraph::Bindings bindings = net.weight_bindings();
    bindings["x"] = batch;
    std::vector<std::string> wrt;
    for (int layer : net.prunable_layers()) wrt.push_back(weight_leaf_name(layer));
    auto grads = lg.graph.gradient(bindings, wrt);

    ImportanceScores out;
    out.criterion = "taylor";
    for (int layer : net.prunable_layers()) {
        const Tensor& w = net.weight(layer);
        const Tensor& g = grads.at(weight_leaf_name(layer));
        int64_t rows = w.extent(0);
        int64_t row_len = w.size() / rows;
        std::vector<double> s(static_cast<size_t>(rows), 0.0);
        for (int64_t r = 0; r < rows; ++r) {
            double acc = 0.0;
            for (int64_t j = 0; j < row_len; ++j) acc += std::fabs(w[r * row_len + j] * g[r * row_len + j]);
            s[static_cast<size_t>(r)] = acc;
        }
        out.layers.push_back(layer);
        out.scores.push_back(std::move(s));
        out.degenerate.push_back(false);
    }
    return out;
}

ImportanceScores normalize_importance(const ImportanceScores& scores) {
    ImportanceScores out = scores;
    out.normalization = "mean";
    for (size_t i = 0; i < out.scores.size(); ++i) {
        auto& s = out.scores[i];
        if (s.empty()) throw ValueError("importance layer with no channels");
        double mean = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
        if (mean <= 0.0) {
            out.degenerate[i] = true;
            continue;
        }
        for (double& v : s) v /= mean;
    }
    return out;
}

const char* ratio_variant_name(RatioVariant v) {
    return v == RatioVariant::InvMrs ? "inv_mrs" : "deviation";
}

RatioVariant ratio_variant_from_name(const std::string& name) {
    if (name == "inv_mrs") return RatioVariant::InvMrs;
    if (name == "deviation") return RatioVariant::Deviation;
    throw ConfigError("unknown ratio variant '" + name + "'");
}

void RatioConfig::validate() const {
    if (r_g < 0.0 || r_g > 1.0) throw ConfigError("global ratio must lie in [0,1]");
    if (r_min < 0.0 || r_max > 1.0 || r_min > r_max) throw ConfigError("ratio bounds must satisfy 0 <= r_min <= r_max <= 1");
    if (delta <= 0.0) throw ConfigError("ratio delta must be positive");
}

std::vector<double> allocate_ratios_invmrs(const MrsReport& report, const RatioConfig& cfg) {
    cfg.validate();
    if (report.entries.empty()) throw ValueError("MRS report is empty");
    std::vector<double> inv(report.entries.size());
    double total = 0.0;
    for (size_t i = 0; i < report.entries.size(); ++i) {
        inv[i] = 1.0 / (report.entries[i].mrs + cfg.delta);
        total += inv[i];
    }
    std::vector<double> ratios(inv.size());
    for (size_t i = 0; i < inv.size(); ++i) {
        ratios[i] = std::min(inv[i] / total * cfg.r_g, cfg.r_max);
    }
    return ratios;
}

DeviationAllocation allocate_ratios_deviation(const MrsReport& report, const RatioConfig& cfg) {
    cfg.validate();
    size_t n = report.entries.size();
    if (n == 0) throw ValueError("MRS report is empty");

    double mu = 0.0;
    for (const auto& e : report.entries) mu += e.mrs;
    mu /= static_cast<double>(n);

    std::vector<double> dev(n);
    double max_abs = 0.0;
    for (size_t i = 0; i < n; ++i) {
        dev[i] = report.entries[i].mrs - mu;
        max_abs = std::max(max_abs, std::fabs(dev[i]));
    }
    for (double& d : dev) d = max_abs > 0.0 ? d / max_abs : 0.0;

    auto clip = [&](double v) { return std::min(cfg.r_max, std::max(cfg.r_min, v)); };

    std::vector<double> p(n);
    double mean_p = 0.0;
    for (size_t i = 0; i < n; ++i) {
        p[i] = clip(cfg.r_g - dev[i] * (cfg.r_max - cfg.r_min));
        mean_p += p[i];
    }
    mean_p /= static_cast<double>(n);

    DeviationAllocation out;
    if (mean_p > 0.0) {
        double factor = cfg.r_g / mean_p;
        for (double& v : p) v = clip(v * factor);
    }
    double achieved = 0.0;
    for (double v : p) achieved += v;
    out.achieved_mean = achieved / static_cast<double>(n);
    out.ratios = std::move(p);
    return out;
}

std::vector<double> allocate_ratios(const MrsReport& report, const RatioConfig& cfg) {
    if (cfg.variant == RatioVariant::InvMrs) return allocate_ratios_invmrs(report, cfg);
    return allocate_ratios_deviation(report, cfg).ratios;
}

SurgeryMap PruningPlan::to_surgery(const Network& net) const {
    SurgeryMap surgery;
    for (size_t i = 0; i < layers.size(); ++i) {
        int layer = layers[i];
        int64_t k = net.spec(layer).out_channels;
        const auto& pruned = pruned_channels[i];
        std::vector<int64_t> keep;
        keep.reserve(static_cast<size_t>(k) - pruned.size());
        size_t pi = 0;
        for (int64_t c = 0; c < k; ++c) {
            if (pi < pruned.size() && pruned[pi] == c) {
                ++pi;
                continue;
            }
            keep.push_back(c);
        }
        surgery.retained[layer] = std::move(keep);
    }
    return surgery;
}

PruningPlan plan_pruning(const ImportanceScores& scores, const std::vector<double>& ratios,
                         const Network& net, const PlanProvenance& provenance) {
    check_scores_cover(scores, net);
    if (ratios.size() != scores.layers.size()) {
        throw ValueError("got " + std::to_string(ratios.size()) + " ratios for " +
                         std::to_string(scores.layers.size()) + " prunable layers");
    }
    for (double r : ratios) {
        if (!(r >= 0.0 && r <= 1.0)) throw ValueError("pruning ratio " + std::to_string(r) + " outside [0,1]");
    }
    ImportanceScores norm = scores.normalization == "mean" ? scores : normalize_importance(scores);

    PruningPlan plan;
    plan.provenance = provenance;
    plan.provenance.criterion = scores.criterion;
    plan.layers = scores.layers;
    plan.ratios = ratios;

    for (size_t li = 0; li < plan.layers.size(); ++li) {
        int64_t k = net.spec(plan.layers[li]).out_channels;
        int64_t count = static_cast<int64_t>(std::floor(ratios[li] * static_cast<double>(k)));
        bool clamped = false;
        if (count >= k) {
            count = k - 1;
            clamped = true;
        }
        std::vector<int64_t> order(static_cast<size_t>(k));
        std::iota(order.begin(), order.end(), 0);
        const auto& s = norm.scores[li];
        std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
            return s[static_cast<size_t>(a)] < s[static_cast<size_t>(b)];
        });
        std::vector<int64_t> pruned(order.begin(), order.begin() + count);
        std::sort(pruned.begin(), pruned.end());
        plan.pruned_counts.push_back(count);
        plan.pruned_channels.push_back(std::move(pruned));
        plan.clamped.push_back(clamped);
    }

    // Retained totals across all weight layers (classifier included).
    int64_t channels = 0;
    for (int layer : net.weight_layers()) channels += net.spec(layer).out_channels;
    int64_t pruned_channels_total = 0;
    for (const auto& set : plan.pruned_channels) pruned_channels_total += static_cast<int64_t>(set.size());
    plan.retained_channel_count = channels - pruned_channels_total;
    plan.retained_param_count = remove_channels(net, plan.to_surgery(net)).parameter_count();
    return plan;
}

}  // namespace mrpf
