#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mrpf/attacks.hpp"
#include "mrpf/network.hpp"

namespace mrpf {

enum class LossMethod { PgdAt, Trades, Mart };

const char* loss_method_name(LossMethod m);
LossMethod loss_method_from_name(const std::string& name);

struct LossConfig {
    LossMethod method = LossMethod::Trades;
    double lambda = 6.0;          // TRADES/MART regularizer weight
    AttackConfig inner_attack;    // inner maximization

    void validate() const;
    bool operator==(const LossConfig&) const = default;
};

/// Default inner maximization for training losses: epsilon 8/255, 10 steps of
/// size epsilon/4.
AttackConfig default_inner_attack();

/// Per-parameter gradients keyed by the w{i}/b{i} leaf names.
using GradMap = std::map<std::string, Tensor>;

struct LossValue {
    double value = 0.0;
    GradMap weight_grads;  // empty unless gradients were requested
};

/// CE(N(x_adv), y) with x_adv from PGD on the cross-entropy objective.
double pgd_at_loss(const Network& net, const Tensor& x, const std::vector<int64_t>& y,
                   const LossConfig& cfg, uint64_t seed = 0);

/// CE(N(x), y) + lambda * KL(N(x) || N(x')) where x' ascends the KL term.
/// The KL objective is stationary at x' = x, so the inner PGD starts from a
/// seeded gaussian offset (init_noise, defaulting to 1e-3 when unset).
double trades_loss(const Network& net, const Tensor& x, const std::vector<int64_t>& y,
                   const LossConfig& cfg, uint64_t seed = 0);

/// CE(N(x_adv), y) + lambda * 1{argmax N(x) != y} * KL(N(x) || N(x_adv)),
/// averaged over the batch.
double mart_loss(const Network& net, const Tensor& x, const std::vector<int64_t>& y,
                 const LossConfig& cfg, uint64_t seed = 0);

double robust_loss(const Network& net, const Tensor& x, const std::vector<int64_t>& y,
                   const LossConfig& cfg, uint64_t seed = 0);

/// Loss value plus gradients with respect to every weight and bias; the inner
/// adversarial examples are treated as constants.
LossValue robust_loss_with_grads(const Network& net, const Tensor& x, const std::vector<int64_t>& y,
                                 const LossConfig& cfg, uint64_t seed = 0);

}  // namespace mrpf
