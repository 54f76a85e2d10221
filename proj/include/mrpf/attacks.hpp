#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "mrpf/dataset.hpp"
#include "mrpf/network.hpp"

namespace mrpf {

enum class AttackMethod { Fgsm, Pgd, Apgd };
enum class AttackLossKind { CrossEntropy, KlToReference };

const char* attack_method_name(AttackMethod m);
AttackMethod attack_method_from_name(const std::string& name);

struct AttackConfig {
    double epsilon = 8.0 / 255.0;     // l-inf radius in input units
    double alpha_step = 2.0 / 255.0;  // per-iteration step (APGD initial eta)
    int iterations = 20;
    double momentum = 0.75;           // APGD iterate mixing
    double range_lo = 0.0;
    double range_hi = 1.0;
    AttackLossKind loss = AttackLossKind::CrossEntropy;
    double init_noise = 0.0;          // seeded gaussian start scale (PGD/APGD)

    void validate() const;
    bool operator==(const AttackConfig&) const = default;
};

// Presets. "eval" is the reporting configuration (epsilon 8/255, step 2/255,
// 20 iterations); "appendix" uses step epsilon/T; FGSM takes a full-radius
// single step; APGD starts at eta = 2*epsilon.
AttackConfig eval_attack_preset();
AttackConfig appendix_attack_preset(double epsilon, int iterations);
AttackConfig fgsm_attack_preset(double epsilon);
AttackConfig apgd_attack_preset(double epsilon, int iterations);

/// Batched loss probe: returns per-example losses at x and, when grad is
/// non-null, writes d(sum of per-example losses)/dx. Gradients decompose per
/// example, so results are independent of how a dataset is batched.
struct AttackObjective {
    std::vector<int64_t> input_shape;
    std::function<std::vector<double>(const Tensor& x, Tensor* grad)> eval;
};

AttackObjective ce_objective(const Network& net, const std::vector<int64_t>& labels,
                             const std::vector<int64_t>& input_shape);
/// KL(ref || N(x)) against fixed reference probabilities [B, C].
AttackObjective kl_objective(const Network& net, const Tensor& ref_probs,
                             const std::vector<int64_t>& input_shape);
/// Sum of logits; linear in x for a single dense layer (test probe).
AttackObjective logit_sum_objective(const Network& net, const std::vector<int64_t>& input_shape);

Tensor fgsm_attack(const AttackObjective& obj, const Tensor& x, const AttackConfig& cfg);
Tensor pgd_attack(const AttackObjective& obj, const Tensor& x, const AttackConfig& cfg, uint64_t seed = 0);
Tensor apgd_attack(const AttackObjective& obj, const Tensor& x, const AttackConfig& cfg, uint64_t seed = 0);

// Network-facing wrappers: the objective is cfg.loss against ground-truth
// labels (KL mode references the network's own clean predictions).
Tensor fgsm(const Network& net, const Tensor& x, const std::vector<int64_t>& y, const AttackConfig& cfg);
Tensor pgd(const Network& net, const Tensor& x, const std::vector<int64_t>& y, const AttackConfig& cfg,
           uint64_t seed = 0);
Tensor apgd(const Network& net, const Tensor& x, const std::vector<int64_t>& y, const AttackConfig& cfg,
            uint64_t seed = 0);
Tensor run_attack(AttackMethod method, const Network& net, const Tensor& x, const std::vector<int64_t>& y,
                  const AttackConfig& cfg, uint64_t seed = 0);

struct AdversarialSet {
    Tensor inputs;                 // adversarial examples, original order
    std::vector<int64_t> labels;   // ground-truth labels
    Tensor perturbations;          // inputs minus the clean examples
    int64_t classes = 0;

    int64_t size() const { return inputs.empty() ? 0 : inputs.extent(0); }
    Dataset as_dataset() const { return Dataset{inputs, labels, classes}; }
};

AdversarialSet generate_adversarial_set(const Network& net, const Dataset& data, AttackMethod method,
                                        const AttackConfig& cfg, uint64_t seed);

// JSON manifest plus MRPT tensors, under a directory.
void save_adversarial_set(const std::filesystem::path& dir, const AdversarialSet& set);
AdversarialSet load_adversarial_set(const std::filesystem::path& dir);

/// Row-wise argmax of logits [B, C].
std::vector<int64_t> argmax_rows(const Tensor& logits);

/// Mean cross-entropy of net predictions on (x, y), via the graph CE node.
double mean_ce_loss(const Network& net, const Tensor& x, const std::vector<int64_t>& y);

}  // namespace mrpf
