#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "flora/tensor.hpp"

namespace flora {

enum class LayerKind {
    Input,
    Conv2D,
    DepthwiseConv2D,
    SeparableConv2D,
    BatchNorm,
    Activation,
    MaxPool,
    AvgPool,
    ZeroPad,
    GlobalAvgPool,
    Flatten,
    Dense,
    Softmax,
    Concat,
    Add,
};

enum class Padding { Same, Valid };
enum class ActivationKind { None, Relu, Relu6, Softmax };

std::string_view to_string(LayerKind kind);
std::string_view to_string(Padding padding);
std::string_view to_string(ActivationKind activation);
LayerKind layer_kind_from_string(std::string_view name);
Padding padding_from_string(std::string_view name);
ActivationKind activation_from_string(std::string_view name);

/// Per-sample feature shape. Vectors (after GAP / Flatten / Dense) are flat with h = w = 1.
struct FeatureShape {
    std::size_t h = 1;
    std::size_t w = 1;
    std::size_t c = 1;
    bool flat = false;

    std::size_t size() const { return h * w * c; }
    std::string str() const;
    bool operator==(const FeatureShape&) const = default;
};

/// One node of an architecture descriptor. Holds hyperparameters and inferred shapes, no weights.
struct LayerNode {
    LayerKind kind = LayerKind::Input;
    std::string name;
    std::vector<int> inputs;  // indices of earlier nodes

    int kernel = 0;
    int stride = 1;
    Padding padding = Padding::Valid;
    int filters = 0;  // output channels / units
    bool use_bias = false;
    ActivationKind activation = ActivationKind::None;
    std::array<int, 4> pad{0, 0, 0, 0};  // top, bottom, left, right (ZeroPad)
    double bn_momentum = 0.99;
    double bn_epsilon = 1e-3;

    FeatureShape in_shape;  // shape of the first input
    FeatureShape out_shape;

    bool operator==(const LayerNode&) const = default;
};

struct ParamSpec {
    std::string name;
    Shape shape;
    bool moving_stat = false;
};

struct ParamCount {
    std::uint64_t total = 0;
    std::uint64_t trainable = 0;
    std::uint64_t non_trainable = 0;

    ParamCount& operator+=(const ParamCount& o) {
        total += o.total;
        trainable += o.trainable;
        non_trainable += o.non_trainable;
        return *this;
    }
    bool operator==(const ParamCount&) const = default;
};

std::vector<ParamSpec> param_specs(const LayerNode& node);
ParamCount layer_param_count(const LayerNode& node);

/// Computes the output shape of `node` from its input shapes; throws on mismatch.
FeatureShape infer_output_shape(const LayerNode& node, std::span<const FeatureShape> inputs);

/// Output extent for one spatial axis.
std::size_t conv_output_extent(std::size_t in, int kernel, int stride, Padding padding);
/// Leading (top / left) padding for "same" convolution; the remainder goes bottom / right.
std::size_t same_pad_before(std::size_t in, int kernel, int stride);

template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> values;
    Tensor<T> grads;
    bool trainable = true;
    bool moving_stat = false;
};

enum class Mode { Train, Infer };

/// Runtime layer bound to one descriptor node.
template <typename T>
class Layer {
public:
    explicit Layer(LayerNode node) : node_(std::move(node)) {}
    virtual ~Layer() = default;
    Layer(const Layer&) = delete;
    Layer& operator=(const Layer&) = delete;

    const LayerNode& node() const { return node_; }

    /// Pure forward pass, no cached state. Safe to call concurrently in Infer mode.
    virtual Tensor<T> compute(std::span<const Tensor<T>* const> inputs, Mode mode) const = 0;

    /// Forward pass that caches what backward needs. BatchNorm updates its moving
    /// statistics here in Train mode unless the layer is frozen.
    virtual Tensor<T> forward(std::span<const Tensor<T>* const> inputs, Mode mode);

    /// Returns one gradient per input and accumulates parameter gradients
    /// (skipped for frozen layers).
    virtual std::vector<Tensor<T>> backward(const Tensor<T>& upstream) = 0;

    std::vector<Parameter<T>>& params() { return params_; }
    const std::vector<Parameter<T>>& params() const { return params_; }

    bool frozen() const { return frozen_; }
    void set_frozen(bool frozen);

    void clear_cache() { cache_.clear(); }

protected:
    void require_cache() const;
    std::span<const Tensor<T>* const> check_inputs(std::span<const Tensor<T>* const> inputs,
                                                   std::size_t expected) const;
    bool accumulate_grads() const { return !frozen_; }

    LayerNode node_;
    std::vector<Parameter<T>> params_;
    std::vector<Tensor<T>> cache_;
    Mode cached_mode_ = Mode::Train;
    bool frozen_ = false;
};

/// Builds a runtime layer with zero-filled parameters shaped per `param_specs`.
template <typename T>
std::unique_ptr<Layer<T>> make_layer(const LayerNode& node);

/// Row-wise softmax of a rank-2 tensor (max-shifted).
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits);

/// Dense layer with a fused softmax: gradient w.r.t. the pre-softmax logits.
template <typename T>
std::vector<Tensor<T>> dense_backward_from_logits(Layer<T>& dense, const Tensor<T>& grad_logits);

}  // namespace flora
