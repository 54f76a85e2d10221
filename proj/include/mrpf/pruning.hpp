#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mrpf/mrs.hpp"
#include "mrpf/network.hpp"

namespace mrpf {

struct ImportanceScores {
    std::vector<int> layers;                  // prunable layer indices
    std::vector<std::vector<double>> scores;  // one value per output channel
    std::string criterion;                    // "magnitude" | "taylor"
    std::string normalization = "none";       // "none" | "mean"
    std::vector<bool> degenerate;             // all-zero layers flagged
};

/// I_j = sum over channel j's weights of |w|^p. Biases excluded.
ImportanceScores magnitude_importance(const Network& net, double p = 2.0);

/// I_j = sum over channel j's weights of |w * dl/dw|, from one backward pass
/// of mean cross-entropy on the batch.
ImportanceScores taylor_importance(const Network& net, const Tensor& batch,
                                   const std::vector<int64_t>& labels);

/// Per-layer mean normalization; all-zero layers pass through, flagged.
ImportanceScores normalize_importance(const ImportanceScores& scores);

enum class RatioVariant { InvMrs, Deviation };

const char* ratio_variant_name(RatioVariant v);
RatioVariant ratio_variant_from_name(const std::string& name);

struct RatioConfig {
    double r_g = 0.5;
    double r_min = 0.0;
    double r_max = 0.8;
    double delta = 1e-6;  // guards the inv-MRS division
    RatioVariant variant = RatioVariant::Deviation;

    void validate() const;
    bool operator==(const RatioConfig&) const = default;
};

/// Main-text rule: InvMRS_i = 1/(MRS_i + delta), w_i = InvMRS_i / sum,
/// p_i = min(w_i * r_g, r_max).
std::vector<double> allocate_ratios_invmrs(const MrsReport& report, const RatioConfig& cfg);

struct DeviationAllocation {
    std::vector<double> ratios;
    double achieved_mean = 0.0;
};

/// Deviation-normalized rule: deviations from the MRS mean are scaled to
/// [-1,1], mapped to r_g - dev*(r_max - r_min), clipped, rescaled so the mean
/// matches r_g, and re-clipped.
DeviationAllocation allocate_ratios_deviation(const MrsReport& report, const RatioConfig& cfg);

std::vector<double> allocate_ratios(const MrsReport& report, const RatioConfig& cfg);

struct PlanProvenance {
    uint64_t report_hash = 0;
    std::string criterion;
    RatioConfig ratio_config;

    bool operator==(const PlanProvenance&) const = default;
};

struct PruningPlan {
    std::vector<int> layers;
    std::vector<double> ratios;
    std::vector<int64_t> pruned_counts;                // floor(p_i * k_i)
    std::vector<std::vector<int64_t>> pruned_channels; // ascending indices
    std::vector<bool> clamped;                         // empty-layer clamp fired
    PlanProvenance provenance;
    int64_t retained_channel_count = 0;
    int64_t retained_param_count = 0;

    SurgeryMap to_surgery(const Network& net) const;
    bool operator==(const PruningPlan&) const = default;
};

/// Selects the floor(p_i * k_i) lowest-importance channels per layer, ties
/// broken toward the smaller index; a ratio that would empty a layer prunes
/// k_i - 1 channels instead and is flagged.
PruningPlan plan_pruning(const ImportanceScores& scores, const std::vector<double>& ratios,
                         const Network& net, const PlanProvenance& provenance = {});

}  // namespace mrpf
