#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mrpf/attacks.hpp"
#include "mrpf/network.hpp"

namespace mrpf {

struct MrsConfig {
    double eta = 0.01;             // ascent learning rate
    int epochs = 1;                // full passes over the adversarial set
    double epsilon_w = 8.0 / 255.0;  // relative l2 weight-perturbation radius
    double delta = 1e-6;           // floor for non-positive raw sensitivities
    int64_t batch_size = 256;
    uint64_t seed = 0;             // fixes batch order, shared across layers

    void validate() const;
    bool operator==(const MrsConfig&) const = default;
};

struct MrsLayerEntry {
    int layer = -1;
    std::string name;      // layer kind + index, e.g. "dense0"
    double l_pert = 0.0;   // adversarial loss after perturbing this layer
    double mrs = 0.0;      // max(l_pert - l_orig, delta)
    double norm_ratio = 0.0;  // |W_pert - W_orig|_2 / |W_orig|_2

    bool operator==(const MrsLayerEntry&) const = default;
};

struct MrsReport {
    double l_orig = 0.0;
    std::vector<MrsLayerEntry> entries;  // one per prunable layer, ascending

    bool operator==(const MrsReport&) const = default;
};

/// Mean cross-entropy of the unmodified network over the adversarial set.
double baseline_adv_loss(const Network& net, const AdversarialSet& ae);

/// Clone of net where only layer_index's weights moved: E epochs of batched
/// gradient ascent on the adversarial loss, each step projected back into
/// |W - W_orig|_2 <= epsilon_w * |W_orig|_2.
Network perturb_layer_weights(const Network& net, int layer_index, const AdversarialSet& ae,
                              const MrsConfig& cfg);

/// MRS for every prunable layer, each computed from a fresh clone.
MrsReport compute_mrs(const Network& net, const AdversarialSet& ae, const MrsConfig& cfg);

/// FNV-1a over the report's numeric payload; pruning-plan provenance.
uint64_t mrs_report_hash(const MrsReport& report);

}  // namespace mrpf
