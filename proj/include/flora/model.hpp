#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "flora/architectures.hpp"
#include "flora/layers.hpp"

namespace flora {

/// Executable network built from an ArchDescriptor.
///
/// `forward` / `backward` keep per-node state and must not run concurrently on one
/// instance. `predict` is const and keeps no state, so concurrent inference is safe.
template <typename T>
class Model {
public:
    /// Allocates parameters and initializes them: He-uniform kernels, zero biases,
    /// gamma 1 / beta 0, moving mean 0 / moving variance 1.
    Model(ArchDescriptor desc, std::uint64_t init_seed);

    Model(Model&&) noexcept = default;
    Model& operator=(Model&&) noexcept = default;

    const ArchDescriptor& descriptor() const { return desc_; }
    std::size_t num_nodes() const { return layers_.size(); }
    Layer<T>& layer(std::size_t i) { return *layers_.at(i); }
    const Layer<T>& layer(std::size_t i) const { return *layers_.at(i); }

    Tensor<T> forward(const Tensor<T>& input, Mode mode);
    Tensor<T> predict(const Tensor<T>& input) const;

    /// Backpropagates d(loss)/d(probabilities).
    void backward(const Tensor<T>& grad_output);
    /// Backpropagates d(loss)/d(logits), skipping the softmax Jacobian of the final Dense node.
    void backward_from_logits(const Tensor<T>& grad_logits);

    std::vector<Parameter<T>*> parameters();
    std::vector<const Parameter<T>*> parameters() const;
    void zero_grads();

    void apply_freeze(const FreezePlan& plan);
    const FreezePlan& freeze_plan() const { return freeze_; }

    /// Counts from the live parameters; matches count_parameters(descriptor, plan).
    ParamCount param_count() const;

    /// Copies every base-node parameter from `source`; the heads may differ.
    void copy_base_from(const Model& source);

    /// Index of the first node whose last forward output holds NaN or Inf.
    std::optional<std::size_t> first_nonfinite_node() const;

    Model clone() const;

private:
    void backward_range(std::vector<std::optional<Tensor<T>>>& grads, std::size_t last);

    ArchDescriptor desc_;
    std::vector<std::unique_ptr<Layer<T>>> layers_;
    std::vector<Tensor<T>> outputs_;
    FreezePlan freeze_;
};

}  // namespace flora
