#include "flora/optimizers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace flora {

namespace {

constexpr std::pair<OptimizerKind, std::string_view> kNames[] = {
    {OptimizerKind::Sgd, "sgd"},   {OptimizerKind::Rmsprop, "rmsprop"}, {OptimizerKind::Adagrad, "adagrad"},
    {OptimizerKind::Adadelta, "adadelta"}, {OptimizerKind::Adam, "adam"}, {OptimizerKind::Nadam, "nadam"},
    {OptimizerKind::Adamax, "adamax"},
};

}  // namespace

std::string_view to_string(OptimizerKind kind) {
    for (auto [k, name] : kNames) {
        if (k == kind) return name;
    }
    return "?";
}

const std::vector<std::string>& optimizer_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> out;
        for (auto [k, name] : kNames) out.emplace_back(name);
        return out;
    }();
    return names;
}

OptimizerKind optimizer_from_string(std::string_view name) {
    for (auto [k, n] : kNames) {
        if (n == name) return k;
    }
    std::string valid;
    for (const auto& n : optimizer_names()) valid += (valid.empty() ? "" : ", ") + n;
    throw std::invalid_argument("unknown optimizer '" + std::string(name) + "' (valid: " + valid + ")");
}

OptimizerConfig OptimizerConfig::defaults(OptimizerKind kind) {
    OptimizerConfig c;
    c.kind = kind;
    switch (kind) {
        case OptimizerKind::Sgd: c.learning_rate = 0.01; break;
        case OptimizerKind::Adadelta:
            c.learning_rate = 1.0;
            c.rho = 0.95;
            break;
        default: c.learning_rate = 0.001; break;
    }
    return c;
}

void OptimizerConfig::validate() const {
    auto unit = [](double v, const char* name) {
        if (!(v >= 0.0 && v < 1.0)) {
            throw std::invalid_argument(std::string(name) + " must be in [0, 1), got " + std::to_string(v));
        }
    };
    if (!(learning_rate > 0.0)) {
        throw std::invalid_argument("learning_rate must be > 0, got " + std::to_string(learning_rate));
    }
    unit(beta1, "beta1");
    unit(beta2, "beta2");
    unit(rho, "rho");
    unit(momentum, "momentum");
    if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be > 0, got " + std::to_string(epsilon));
}

template <typename T>
std::size_t Optimizer<T>::slots_per_param() const {
    switch (config_.kind) {
        case OptimizerKind::Sgd: return config_.momentum > 0.0 ? 1 : 0;
        case OptimizerKind::Rmsprop:
        case OptimizerKind::Adagrad: return 1;
        default: return 2;
    }
}

template <typename T>
std::size_t Optimizer<T>::total_slots() const {
    std::size_t n = 0;
    for (const auto& s : slots_) n += s.size();
    return n;
}

template <typename T>
Optimizer<T>::Optimizer(OptimizerConfig config, std::span<Parameter<T>* const> params) : config_(config) {
    config_.validate();
    const std::size_t per = slots_per_param();
    for (const auto* p : params) slots_.emplace_back(per, Tensor<T>(p->values.shape()));
}

template <typename T>
void Optimizer<T>::step(std::span<Parameter<T>* const> params) {
    if (params.size() != slots_.size()) {
        throw std::invalid_argument("optimizer state holds " + std::to_string(slots_.size()) +
                                    " parameters, step received " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& p = *params[i];
        if (p.grads.shape() != p.values.shape() ||
            (!slots_[i].empty() && slots_[i][0].shape() != p.values.shape())) {
            throw std::invalid_argument("parameter '" + p.name + "' shape " + shape_str(p.values.shape()) +
                                        " does not match optimizer state");
        }
    }

    ++steps_;
    const T lr = static_cast<T>(config_.learning_rate);
    const T b1 = static_cast<T>(config_.beta1);
    const T b2 = static_cast<T>(config_.beta2);
    const T rho = static_cast<T>(config_.rho);
    const T mu = static_cast<T>(config_.momentum);
    const T eps = static_cast<T>(config_.epsilon);
    const T one{1};
    const double t = static_cast<double>(steps_);
    const T bc1 = static_cast<T>(1.0 - std::pow(config_.beta1, t));
    const T bc2 = static_cast<T>(1.0 - std::pow(config_.beta2, t));

    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter<T>& p = *params[i];
        if (p.trainable && !p.moving_stat) {
            auto w = p.values.data();
            auto g = p.grads.data();
            auto& s = slots_[i];
            switch (config_.kind) {
                case OptimizerKind::Sgd:
                    if (s.empty()) {
                        for (std::size_t k = 0; k < w.size(); ++k) w[k] -= lr * g[k];
                    } else {
                        auto m = s[0].data();
                        for (std::size_t k = 0; k < w.size(); ++k) {
                            m[k] = mu * m[k] + g[k];
                            w[k] -= lr * m[k];
                        }
                    }
                    break;
                case OptimizerKind::Rmsprop: {
                    auto v = s[0].data();
                    for (std::size_t k = 0; k < w.size(); ++k) {
                        v[k] = rho * v[k] + (one - rho) * g[k] * g[k];
                        w[k] -= lr * g[k] / (std::sqrt(v[k]) + eps);
                    }
                    break;
                }
                case OptimizerKind::Adagrad: {
                    auto a = s[0].data();
                    for (std::size_t k = 0; k < w.size(); ++k) {
                        a[k] += g[k] * g[k];
                        w[k] -= lr * g[k] / (std::sqrt(a[k]) + eps);
                    }
                    break;
                }
                case OptimizerKind::Adadelta: {
                    auto a = s[0].data();
                    auto u = s[1].data();
                    for (std::size_t k = 0; k < w.size(); ++k) {
                        a[k] = rho * a[k] + (one - rho) * g[k] * g[k];
                        const T delta = -std::sqrt(u[k] + eps) / std::sqrt(a[k] + eps) * g[k];
                        u[k] = rho * u[k] + (one - rho) * delta * delta;
                        w[k] += lr * delta;
                    }
                    break;
                }
                case OptimizerKind::Adam:
                case OptimizerKind::Nadam: {
                    auto m = s[0].data();
                    auto v = s[1].data();
                    const bool nesterov = config_.kind == OptimizerKind::Nadam;
                    for (std::size_t k = 0; k < w.size(); ++k) {
                        m[k] = b1 * m[k] + (one - b1) * g[k];
                        v[k] = b2 * v[k] + (one - b2) * g[k] * g[k];
                        T mhat = m[k] / bc1;
                        const T vhat = v[k] / bc2;
                        if (nesterov) mhat = b1 * mhat + (one - b1) * g[k] / bc1;
                        w[k] -= lr * mhat / (std::sqrt(vhat) + eps);
                    }
                    break;
                }
                case OptimizerKind::Adamax: {
                    auto m = s[0].data();
                    auto u = s[1].data();
                    for (std::size_t k = 0; k < w.size(); ++k) {
                        m[k] = b1 * m[k] + (one - b1) * g[k];
                        u[k] = std::max(b2 * u[k], std::abs(g[k]));
                        w[k] -= lr * (m[k] / bc1) / (u[k] + eps);
                    }
                    break;
                }
            }
        }
        p.grads.fill(T{0});
    }
}

template class Optimizer<float>;
template class Optimizer<double>;

}  // namespace flora
