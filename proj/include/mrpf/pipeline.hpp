#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mrpf/dataset.hpp"
#include "mrpf/losses.hpp"
#include "mrpf/pruning.hpp"

namespace mrpf {

/// A pipeline stage failed; carries the stage name for diagnostics.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& what)
        : Error("stage " + stage + ": " + what), stage_(std::move(stage)) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

enum class LrKind { Step, Cosine };

const char* lr_kind_name(LrKind k);
LrKind lr_kind_from_name(const std::string& name);

/// step: lr0 * 0.1^floor(epoch/10); cosine: floor + (lr0-floor)*(1+cos(pi*e/E))/2.
double lr_schedule(LrKind kind, int epoch, int total_epochs, double lr0, double lr_floor);

struct SgdState {
    std::map<std::string, Tensor> velocity;
};

/// v <- momentum*v + g; w <- w - lr*v, per parameter name.
void sgd_momentum_step(ExprGraph::Bindings& params, const GradMap& grads, SgdState& state,
                       double lr, double momentum);

struct RunConfig {
    uint64_t seed = 1;
    int64_t batch_size = 256;
    int epochs = 30;
    double momentum = 0.9;
    LrKind lr_kind = LrKind::Cosine;
    double lr0 = 0.02;
    double lr_floor = 1e-4;
    AttackMethod attack_method = AttackMethod::Pgd;  // AE generation
    AttackConfig attack;       // AE generation and evaluation preset
    LossConfig loss;           // fine-tuning objective
    MrsConfig mrs;
    RatioConfig ratios;
    std::string criterion = "magnitude";  // channel importance
    double r_at = 0.2;         // adversarial-augmentation fraction
    Precision precision = Precision::F32;
    std::vector<LayerSpec> arch;
    DatasetSpec dataset;

    void validate() const;
    bool operator==(const RunConfig&) const = default;
};

struct Metrics {
    double sacc = 0.0;
    double adv_pgd = 0.0;
    double adv_fgsm = 0.0;

    bool operator==(const Metrics&) const = default;
};

struct EpochMetrics {
    double train_loss = 0.0;
    double sacc = 0.0;
    double adv_pgd = 0.0;
    double adv_fgsm = 0.0;

    bool operator==(const EpochMetrics&) const = default;
};

/// SAcc plus accuracy under PGD (the supplied preset) and FGSM (same epsilon).
Metrics evaluate_metrics(const Network& net, const Dataset& testset, const AttackConfig& attack_cfg);

struct FinetuneResult {
    Network net;
    std::vector<EpochMetrics> history;
};

/// Adversarial fine-tuning on train plus a per-epoch refresh of adversarial
/// augmentations (floor(r_at * |train|) examples attacked against the current
/// network). Metrics are evaluated on eval_set after every epoch.
FinetuneResult finetune(const Network& net, const Dataset& train, const Dataset& eval_set,
                        const RunConfig& cfg);

struct RunRecord {
    std::string format_version = "1";
    RunConfig config;
    std::vector<LayerSpec> original_arch;
    std::vector<LayerSpec> pruned_arch;
    std::map<std::string, uint64_t> stage_seeds;
    MrsReport mrs;
    PruningPlan plan;
    std::vector<EpochMetrics> history;
    Metrics final_metrics;
    double flops_reduction_value = 0.0;
    int64_t input_h = 0;  // conv networks only
    int64_t input_w = 0;
    double wall_seconds = 0.0;  // excluded from identity comparisons
};

/// Field-for-field equality ignoring wall_seconds.
bool records_match(const RunRecord& a, const RunRecord& b);

struct MrpfResult {
    Network net;
    RunRecord record;
};

/// The full pipeline: generate AE and the baseline loss, score layers by MRS,
/// allocate ratios, prune, fine-tune. Stage failures surface as StageError;
/// when `partial` is given it holds everything completed before the failure.
MrpfResult mrpf_run(const Network& net, const Dataset& train, const Dataset& eval_set,
                    const RunConfig& cfg, RunRecord* partial = nullptr);

}  // namespace mrpf
