#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "flora/layers.hpp"

namespace flora {

enum class OptimizerKind { Sgd, Rmsprop, Adagrad, Adadelta, Adam, Nadam, Adamax };

std::string_view to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(std::string_view name);
/// Lowercase names in sweep order: sgd rmsprop adagrad adadelta adam nadam adamax.
const std::vector<std::string>& optimizer_names();

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Sgd;
    double learning_rate = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double rho = 0.9;
    double momentum = 0.0;
    double epsilon = 1e-7;

    /// lr 0.01 for sgd, 1.0 for adadelta, 0.001 otherwise; rho 0.95 for adadelta, 0.9 otherwise.
    static OptimizerConfig defaults(OptimizerKind kind);
    void validate() const;
};

/// First-order update rule with per-parameter slots.
///
///   sgd       m = mu*m + g;                       w -= lr*m  (plain w -= lr*g when mu = 0)
///   rmsprop   v = rho*v + (1-rho)*g^2;            w -= lr*g / (sqrt(v) + eps)
///   adagrad   a += g^2;                            w -= lr*g / (sqrt(a) + eps)
///   adadelta  a = rho*a + (1-rho)*g^2;  d = -sqrt(u+eps)/sqrt(a+eps)*g;
///             u = rho*u + (1-rho)*d^2;            w += lr*d
///   adam      m, v EMAs; bias-corrected;          w -= lr*mhat / (sqrt(vhat) + eps)
///   nadam     as adam with numerator beta1*mhat + (1-beta1)*g/(1-beta1^t)
///   adamax    u = max(beta2*u, |g|);              w -= lr*mhat / (u + eps)
///
/// Only trainable, non-moving-stat parameters change. Every gradient is zeroed after a step.
template <typename T>
class Optimizer {
public:
    Optimizer(OptimizerConfig config, std::span<Parameter<T>* const> params);

    void step(std::span<Parameter<T>* const> params);

    const OptimizerConfig& config() const { return config_; }
    std::uint64_t step_count() const { return steps_; }
    std::size_t slots_per_param() const;
    /// Slot `slot` (0 or 1) of parameter `param`.
    const Tensor<T>& slot(std::size_t param, std::size_t slot) const { return slots_.at(param).at(slot); }
    std::size_t total_slots() const;

private:
    OptimizerConfig config_;
    std::vector<std::vector<Tensor<T>>> slots_;
    std::uint64_t steps_ = 0;
};

}  // namespace flora
