#include "flora/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace flora {

namespace {

struct KindName {
    LayerKind kind;
    std::string_view name;
};

constexpr KindName kKindNames[] = {
    {LayerKind::Input, "Input"},
    {LayerKind::Conv2D, "Conv2D"},
    {LayerKind::DepthwiseConv2D, "DepthwiseConv2D"},
    {LayerKind::SeparableConv2D, "SeparableConv2D"},
    {LayerKind::BatchNorm, "BatchNorm"},
    {LayerKind::Activation, "Activation"},
    {LayerKind::MaxPool, "MaxPool"},
    {LayerKind::AvgPool, "AvgPool"},
    {LayerKind::ZeroPad, "ZeroPad"},
    {LayerKind::GlobalAvgPool, "GlobalAvgPool"},
    {LayerKind::Flatten, "Flatten"},
    {LayerKind::Dense, "Dense"},
    {LayerKind::Softmax, "Softmax"},
    {LayerKind::Concat, "Concat"},
    {LayerKind::Add, "Add"},
};

std::invalid_argument shape_error(const LayerNode& node, const std::string& expected, const std::string& actual) {
    return std::invalid_argument(std::string(to_string(node.kind)) + " '" + node.name + "': expected input " +
                                 expected + ", got " + actual);
}

FeatureShape feature_shape_of(const Shape& shape) {
    if (shape.size() == 4) return {shape[1], shape[2], shape[3], false};
    if (shape.size() == 2) return {1, 1, shape[1], true};
    throw std::invalid_argument("layer inputs must be rank 2 or 4, got " + shape_str(shape));
}

}  // namespace

std::string_view to_string(LayerKind kind) {
    for (const auto& entry : kKindNames) {
        if (entry.kind == kind) return entry.name;
    }
    return "?";
}

std::string_view to_string(Padding padding) { return padding == Padding::Same ? "same" : "valid"; }

std::string_view to_string(ActivationKind activation) {
    switch (activation) {
        case ActivationKind::None: return "none";
        case ActivationKind::Relu: return "relu";
        case ActivationKind::Relu6: return "relu6";
        case ActivationKind::Softmax: return "softmax";
    }
    return "?";
}

LayerKind layer_kind_from_string(std::string_view name) {
    for (const auto& entry : kKindNames) {
        if (entry.name == name) return entry.kind;
    }
    throw std::invalid_argument("unknown layer kind '" + std::string(name) + "'");
}

Padding padding_from_string(std::string_view name) {
    if (name == "same") return Padding::Same;
    if (name == "valid") return Padding::Valid;
    throw std::invalid_argument("unknown padding '" + std::string(name) + "'");
}

ActivationKind activation_from_string(std::string_view name) {
    for (auto a : {ActivationKind::None, ActivationKind::Relu, ActivationKind::Relu6, ActivationKind::Softmax}) {
        if (to_string(a) == name) return a;
    }
    throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

std::string FeatureShape::str() const {
    if (flat) return "[" + std::to_string(c) + "]";
    return "[" + std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(c) + "]";
}

std::size_t conv_output_extent(std::size_t in, int kernel, int stride, Padding padding) {
    if (kernel < 1 || stride < 1) throw std::invalid_argument("kernel and stride must be >= 1");
    const auto k = static_cast<std::size_t>(kernel);
    const auto s = static_cast<std::size_t>(stride);
    if (padding == Padding::Same) return (in + s - 1) / s;
    if (in < k) {
        throw std::invalid_argument("valid window of " + std::to_string(k) + " exceeds extent " + std::to_string(in));
    }
    return (in - k) / s + 1;
}

std::size_t same_pad_before(std::size_t in, int kernel, int stride) {
    const std::size_t out = conv_output_extent(in, kernel, stride, Padding::Same);
    const std::ptrdiff_t total = static_cast<std::ptrdiff_t>((out - 1) * stride + kernel) - static_cast<std::ptrdiff_t>(in);
    return total > 0 ? static_cast<std::size_t>(total / 2) : 0;
}

std::vector<ParamSpec> param_specs(const LayerNode& node) {
    const auto k = static_cast<std::size_t>(node.kernel);
    const std::size_t cin = node.in_shape.c;
    const auto f = static_cast<std::size_t>(node.filters);
    std::vector<ParamSpec> specs;
    switch (node.kind) {
        case LayerKind::Conv2D:
            specs.push_back({"kernel", {k, k, cin, f}});
            if (node.use_bias) specs.push_back({"bias", {f}});
            break;
        case LayerKind::DepthwiseConv2D:
            specs.push_back({"depthwise_kernel", {k, k, cin}});
            if (node.use_bias) specs.push_back({"bias", {cin}});
            break;
        case LayerKind::SeparableConv2D:
            specs.push_back({"depthwise_kernel", {k, k, cin}});
            specs.push_back({"pointwise_kernel", {cin, f}});
            if (node.use_bias) specs.push_back({"bias", {f}});
            break;
        case LayerKind::BatchNorm:
            specs.push_back({"gamma", {cin}});
            specs.push_back({"beta", {cin}});
            specs.push_back({"moving_mean", {cin}, true});
            specs.push_back({"moving_variance", {cin}, true});
            break;
        case LayerKind::Dense:
            specs.push_back({"kernel", {cin, f}});
            specs.push_back({"bias", {f}});
            break;
        default:
            break;
    }
    return specs;
}

ParamCount layer_param_count(const LayerNode& node) {
    ParamCount count;
    for (const auto& spec : param_specs(node)) {
        const auto n = static_cast<std::uint64_t>(shape_product(spec.shape));
        count.total += n;
        (spec.moving_stat ? count.non_trainable : count.trainable) += n;
    }
    return count;
}

FeatureShape infer_output_shape(const LayerNode& node, std::span<const FeatureShape> inputs) {
    auto need_inputs = [&](std::size_t n) {
        if (inputs.size() != n) {
            throw shape_error(node, std::to_string(n) + " input(s)", std::to_string(inputs.size()));
        }
    };
    auto need_spatial = [&](const FeatureShape& s) {
        if (s.flat) throw shape_error(node, "a spatial map", s.str());
    };
    auto need_flat = [&](const FeatureShape& s) {
        if (!s.flat) throw shape_error(node, "a vector", s.str());
    };
    auto spatial = [&](const FeatureShape& in, std::size_t channels) {
        return FeatureShape{conv_output_extent(in.h, node.kernel, node.stride, node.padding),
                            conv_output_extent(in.w, node.kernel, node.stride, node.padding), channels, false};
    };

    if (node.kind == LayerKind::Input) {
        need_inputs(0);
        return node.in_shape;
    }
    if (node.kind == LayerKind::Concat || node.kind == LayerKind::Add) {
        if (inputs.size() < 2) throw shape_error(node, ">= 2 inputs", std::to_string(inputs.size()));
        FeatureShape out = inputs[0];
        for (std::size_t i = 1; i < inputs.size(); ++i) {
            const auto& s = inputs[i];
            if (node.kind == LayerKind::Add) {
                if (s != inputs[0]) throw shape_error(node, inputs[0].str(), s.str());
            } else {
                if (s.h != out.h || s.w != out.w || s.flat != out.flat) {
                    throw shape_error(node, "spatial extent matching " + inputs[0].str(), s.str());
                }
                out.c += s.c;
            }
        }
        return out;
    }

    need_inputs(1);
    const FeatureShape& in = inputs[0];
    switch (node.kind) {
        case LayerKind::Conv2D:
        case LayerKind::SeparableConv2D:
            need_spatial(in);
            if (node.filters < 1) throw std::invalid_argument(node.name + ": filters must be >= 1");
            return spatial(in, static_cast<std::size_t>(node.filters));
        case LayerKind::DepthwiseConv2D:
        case LayerKind::MaxPool:
        case LayerKind::AvgPool:
            need_spatial(in);
            return spatial(in, in.c);
        case LayerKind::BatchNorm:
        case LayerKind::Activation:
            return in;
        case LayerKind::ZeroPad:
            need_spatial(in);
            return {in.h + node.pad[0] + node.pad[1], in.w + node.pad[2] + node.pad[3], in.c, false};
        case LayerKind::GlobalAvgPool:
            need_spatial(in);
            return {1, 1, in.c, true};
        case LayerKind::Flatten:
            need_spatial(in);
            return {1, 1, in.h * in.w * in.c, true};
        case LayerKind::Dense:
            need_flat(in);
            if (node.filters < 1) throw std::invalid_argument(node.name + ": units must be >= 1");
            return {1, 1, static_cast<std::size_t>(node.filters), true};
        case LayerKind::Softmax:
            need_flat(in);
            return in;
        default:
            break;
    }
    throw std::invalid_argument("cannot infer shape for " + std::string(to_string(node.kind)));
}

// ---------------------------------------------------------------------------
// Layer base

template <typename T>
Tensor<T> Layer<T>::forward(std::span<const Tensor<T>* const> inputs, Mode mode) {
    cache_.clear();
    for (const auto* in : inputs) cache_.push_back(*in);
    cached_mode_ = mode;
    return compute(inputs, mode);
}

template <typename T>
void Layer<T>::set_frozen(bool frozen) {
    frozen_ = frozen;
    for (auto& p : params_) p.trainable = !frozen && !p.moving_stat;
}

template <typename T>
void Layer<T>::require_cache() const {
    if (cache_.empty()) {
        throw std::logic_error(std::string(to_string(node_.kind)) + " '" + node_.name +
                               "': backward called before forward");
    }
}

template <typename T>
std::span<const Tensor<T>* const> Layer<T>::check_inputs(std::span<const Tensor<T>* const> inputs,
                                                         std::size_t expected) const {
    if (expected && inputs.size() != expected) {
        throw shape_error(node_, std::to_string(expected) + " input(s)", std::to_string(inputs.size()));
    }
    if (inputs.empty()) throw shape_error(node_, "at least one input", "none");
    const FeatureShape actual = feature_shape_of(inputs[0]->shape());
    if (actual != node_.in_shape) throw shape_error(node_, node_.in_shape.str(), actual.str());
    return inputs;
}

namespace {

template <typename T>
void add_into(Tensor<T>& dst, std::span<const T> src) {
    auto d = dst.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += src[i];
}

// Spatial window geometry shared by convolutions and pooling.
struct Window {
    std::size_t in_h, in_w, out_h, out_w;
    std::ptrdiff_t pad_top, pad_left;
    std::size_t k, s;

    static Window of(const LayerNode& node) {
        Window g{};
        g.in_h = node.in_shape.h;
        g.in_w = node.in_shape.w;
        g.out_h = node.out_shape.h;
        g.out_w = node.out_shape.w;
        g.k = static_cast<std::size_t>(node.kernel);
        g.s = static_cast<std::size_t>(node.stride);
        if (node.padding == Padding::Same) {
            g.pad_top = static_cast<std::ptrdiff_t>(same_pad_before(g.in_h, node.kernel, node.stride));
            g.pad_left = static_cast<std::ptrdiff_t>(same_pad_before(g.in_w, node.kernel, node.stride));
        }
        return g;
    }

    // Source coordinate, or -1 when it falls in the padding.
    std::ptrdiff_t src_y(std::size_t oy, std::size_t ky) const {
        auto y = static_cast<std::ptrdiff_t>(oy * s + ky) - pad_top;
        return (y < 0 || y >= static_cast<std::ptrdiff_t>(in_h)) ? -1 : y;
    }
    std::ptrdiff_t src_x(std::size_t ox, std::size_t kx) const {
        auto x = static_cast<std::ptrdiff_t>(ox * s + kx) - pad_left;
        return (x < 0 || x >= static_cast<std::ptrdiff_t>(in_w)) ? -1 : x;
    }
};

template <typename T>
Shape batch_shape(std::size_t n, const FeatureShape& s) {
    if (s.flat) return {n, s.c};
    return {n, s.h, s.w, s.c};
}

template <typename T>
void zero_grads_like(Parameter<T>& p) {
    if (p.grads.shape() != p.values.shape()) p.grads = Tensor<T>(p.values.shape());
}

// ---------------------------------------------------------------------------

template <typename T>
class InputLayer final : public Layer<T> {
public:
    using Layer<T>::Layer;
    Tensor<T> compute(std::span<const Tensor<T>* const> inputs, Mode) const override {
        this->check_inputs(inputs, 1);
        return *inputs[0];
    }
    std::vector<Tensor<T>> backward(const Tensor<T>& upstream) override {
        this->require_cache();
        return {upstream};
    }
};

// Standard convolution, kernel layout k x k x Cin x Cout.
template <typename T>
class Conv2DLayer final : public Layer<T> {
public:
    using Layer<T>::Layer;

    Tensor<T> compute(std::span<const Tensor<T>* const> inputs, Mode) const override {
        this->check_inputs(inputs, 1);
        const auto& x = *inputs[0];
        const auto& node = this->node_;
        const Window g = Window::of(node);
        const std::size_t n = x.dim(0), cin = node.in_shape.c, cout = node.out_shape.c;
        Tensor<T> y(batch_shape<T>(n, node.out_shape));
        const T* w = this->params_[0].values.data().data();
        for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                    T* out = &y.at(b, oy, ox, 0);
                    if (node.use_bias) {
                        const auto bias = this->params_[1].values.data();
                        std::copy(bias.begin(), bias.end(), out);
                    }
                    for (std::size_t ky = 0; ky < g.k; ++ky) {
                        const auto iy = g.src_y(oy, ky);
                        if (iy < 0) continue;
                        for (std::size_t kx = 0; kx < g.k; ++kx) {
                            const auto ix = g.src_x(ox, kx);
                            if (ix < 0) continue;
                            const T* in = &x.at(b, iy, ix, 0);
                            const T* wk = w + (ky * g.k + kx) * cin * cout;
                            for (std::size_t ci = 0; ci < cin; ++ci) {
                                const T v = in[ci];
                                const T* wrow = wk + ci * cout;
                                for (std::size_t co = 0; co < cout; ++co) out[co] += v * wrow[co];
                            }
                        }
                    }
                }
            }
        }
        return y;
    }

    std::vector<Tensor<T>> backward(const Tensor<T>& gy) override {
        this->require_cache();
        const auto& x = this->cache_[0];
        const auto& node = this->node_;
        const Window g = Window::of(node);
        const std::size_t n = x.dim(0), cin = node.in_shape.c, cout = node.out_shape.c;
        Tensor<T> gx(x.shape());
        const bool acc = this->accumulate_grads();
        auto& kernel = this->params_[0];
        if (acc) zero_grads_like(kernel);
        const T* w = kernel.values.data().data();
        T* gw = acc ? kernel.grads.data().data() : nullptr;
        for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                    const T* go = &gy.at(b, oy, ox, 0);
                    if (acc && node.use_bias) {
                        auto& bias = this->params_[1];
                        zero_grads_like(bias);
                        for (std::size_t co = 0; co < cout; ++co) bias.grads[co] += go[co];
                    }
                    for (std::size_t ky = 0; ky < g.k; ++ky) {
                        const auto iy = g.src_y(oy, ky);
                        if (iy < 0) continue;
                        for (std::size_t kx = 0; kx < g.k; ++kx) {
                            const auto ix = g.src_x(ox, kx);
                            if (ix < 0) continue;
                            const T* in = &x.at(b, iy, ix, 0);
                            T* gin = &gx.at(b, iy, ix, 0);
                            const std::size_t off = (ky * g.k + kx) * cin * cout;
                            for (std::size_t ci = 0; ci < cin; ++ci) {
                                const T* wrow = w + off + ci * cout;
                                T s = 0;
                                for (std::size_t co = 0; co < cout; ++co) s += wrow[co] * go[co];
                                gin[ci] += s;
                                if (gw) {
                                    T* gwrow = gw + off + ci * cout;
                                    const T v = in[ci];
                                    for (std::size_t co = 0; co < cout; ++co) gwrow[co] += v * go[co];
                                }
                            }
                        }
                    }
                }
            }
        }
        return {std::move(gx)};
    }
};

template <typename T>
Tensor<T> depthwise_apply(const Tensor<T>& x, const LayerNode& node, const T* w, const T* bias) {
    const Window g = Window::of(node);
    const std::size_t n = x.dim(0), c = node.in_shape.c;
    Tensor<T> y({n, g.out_h, g.out_w, c});
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                T* out = &y.at(b, oy, ox, 0);
                if (bias) std::copy(bias, bias + c, out);
                for (std::size_t ky = 0; ky < g.k; ++ky) {
                    const auto iy = g.src_y(oy, ky);
                    if (iy < 0) continue;
                    for (std::size_t kx = 0; kx < g.k; ++kx) {
                        const auto ix = g.src_x(ox, kx);
                        if (ix < 0) continue;
                        const T* in = &x.at(b, iy, ix, 0);
                        const T* wk = w + (ky * g.k + kx) * c;
                        for (std::size_t ch = 0; ch < c; ++ch) out[ch] += in[ch] * wk[ch];
                    }
                }
            }
        }
    }
    return y;
}

// gw / gbias may be null when parameter gradients are not needed.
template <typename T>
Tensor<T> depthwise_backward(const Tensor<T>& x, const Tensor<T>& gy, const LayerNode& node, const T* w, T* gw,
                             T* gbias) {
    const Window g = Window::of(node);
    const std::size_t n = x.dim(0), c = node.in_shape.c;
    Tensor<T> gx(x.shape());
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                const T* go = &gy.at(b, oy, ox, 0);
                if (gbias) {
                    for (std::size_t ch = 0; ch < c; ++ch) gbias[ch] += go[ch];
                }
                for (std::size_t ky = 0; ky < g.k; ++ky) {
                    const auto iy = g.src_y(oy, ky);
                    if (iy < 0) continue;
                    for (std::size_t kx = 0; kx < g.k; ++kx) {
                        const auto ix = g.src_x(ox, kx);
                        if (ix < 0) continue;
                        const T* in = &x.at(b, iy, ix, 0);
                        T* gin = &gx.at(b, iy, ix, 0);
                        const std::size_t off = (ky * g.k + kx) * c;
                        for (std::size_t ch = 0; ch < c; ++ch) {
                            gin[ch] += w[off + ch] * go[ch];
                            if (gw) gw[off + ch] += in[ch] * go[ch];
                        }
                    }
                }
            }
        }
    }
    return gx;
}

// y[.., co] = sum_ci x[.., ci] * w[ci, co] (+ bias) over every position.
template <typename T>
Tensor<T> pointwise_apply(const Tensor<T>& x, std::size_t cin, std::size_t cout, const T* w, const T* bias) {
    const std::size_t positions = x.size() / cin;
    Shape shape = x.shape();
    shape.back() = cout;
    Tensor<T> y(shape);
    for (std::size_t p = 0; p < positions; ++p) {
        const T* in = x.data().data() + p * cin;
        T* out = y.data().data() + p * cout;
        if (bias) std::copy(bias, bias + cout, out);
        for (std::size_t ci = 0; ci < cin; ++ci) {
            const T v = in[ci];
            const T* wrow = w + ci * cout;
            for (std::size_t co = 0; co < cout; ++co) out[co] += v * wrow[co];
        }
    }
    return y;
}

template <typename T>
Tensor<T> pointwise_backward(const Tensor<T>& x, const Tensor<T>& gy, std::size_t cin, std::size_t cout, const T* w,
                             T* gw, T* gbias) {
    const std::size_t positions = x.size() / cin;
    Tensor<T> gx(x.shape());
    for (std::size_t p = 0; p < positions; ++p) {
        const T* in = x.data().data() + p * cin;
        const T* go = gy.data().data() + p * cout;
        T* gin = gx.data().data() + p * cin;
        if (gbias) {
            for (std::size_t co = 0; co < cout; ++co) gbias[co] += go[co];
        }
        for (std::size_t ci = 0; ci < cin; ++ci) {
            const T* wrow = w + ci * cout;
            T s = 0;
            for (std::size_t co = 0; co < cout; ++co) s += wrow[co] * go[co];
            gin[ci] = s;
            if (gw) {
                T* gwrow = gw + ci * cout;
                for (std::size_t co = 0; co < cout; ++co) gwrow[co] += in[ci] * go[co];
            }
        }
    }
    return gx;
}

template <typename T>
class DepthwiseConv2DLayer final : public Layer<T> {
public:
    using Layer<T>::Layer;

    Tensor<T> compute(std::span<const Tensor<T>* const> inputs, Mode) const override {
        this->check_inputs(inputs, 1);
        const T* bias = this->node_.use_bias ? this->params_[1].values.data().data() : nullptr;
        return depthwise_apply(*inputs[0], this->node_, this->params_[0].values.data().data(), bias);
    }

    std::vector<Tensor<T>> backward(const Tensor<T>& gy) override {
        this->require_cache();
        T* gw = nullptr;
        T* gb = nullptr;
        if (this->accumulate_grads()) {
            for (auto& p : this->params_) zero_grads_like(p);
            gw = this->params_[0].grads.data().data();
            if (this->node_.use_bias) gb = this->params_[1].grads.data().data();
        }
        return {depthwise_backward(this->cache_[0], gy, this->node_, this->params_[0].values.data().data(), gw, gb)};
    }
};

// Depthwise k x k followed by a 1x1 pointwise projection, as one node.
template <typename T>
class SeparableConv2DLayer final : public Layer<T> {
public:
    using Layer<T>::Layer;

    Tensor<T> compute(std::span<const Tensor<T>* const> inputs, Mode) const override {
        this->check_inputs(inputs, 1);
        return pointwise(depthwise(*inputs[0]));
    }

    Tensor<T> forward(std::span<const Tensor<T>* const> inputs, Mode mode) override {
        this->check_inputs(inputs, 1);
        this->cache_.clear();
        this->cache_.push_back(*inputs[0]);
        this->cache_.push_back(depthwise(*inputs[0]));
        this->cached_mode_ = mode;
        return pointwise(this->cache_[1]);
    }

    std::vector<Tensor<T>> backward(const Tensor<T>& gy) override {
        this->require_cache();
        const auto& node = this->node_;
        T* gdw = nullptr;
        T* gpw = nullptr;
        T* gb = nullptr;
        if (this->accumulate_grads()) {
            for (auto& p : this->params_) zero_grads_like(p);
            gdw = this->params_[0].grads.data().data();
            gpw = this->params_[1].grads.data().data();
            if (node.use_bias) gb = this->params_[2].grads.data().data();
        }
        Tensor<T> gmid = pointwise_backward(this->cache_[1], gy, node.in_shape.c, node.out_shape.c,
                                            this->params_[1].values.data().data(), gpw, gb);
        return {depthwise_backward(this->cache_[0], gmid, depthwise_node(), this->params_[0].values.data().data(),
                                   gdw, static_cast<T*>(nullptr))};
    }

private:
    LayerNode depthwise_node() const {
        LayerNode dw = this->node_;
        dw.out_shape.c = dw.in_shape.c;
        return dw;
    }
    Tensor<T> depthwise(const Tensor<T>& x) const {
        return depthwise_apply(x, depthwise_node(), this->params_[0].values.data().data(), static_cast<const T*>(nullptr));
    }
    Tensor<T> pointwise(const Tensor<T>& mid) const {
        const T* bias = this->node_.use_bias ? this->params_[2].values.data().data() : nullptr;
        return pointwise_apply(mid, this->node_.in_shape.c, this->node_.out_shape.c,
                               this->params_[1].values.data().data(), bias);
    }
};

// Normalizes over every axis but the last. Frozen layers always use moving statistics.
template <typename T>
class BatchNormLayer final : public Layer<T> {
public:
    using Layer<T>::Layer;

    Tensor<T> compute(std::span<const Tensor<T>* const> inputs, Mode mode) const override {
        this->check_inputs(inputs, 1);
        return normalize(*inputs[0], uses_batch_stats(mode), nullptr);
    }

    Tensor<T> forward(std::span<const Tensor<T>* const> inputs, Mode mode) override {
        this->check_inputs(inputs, 1);
        const auto& x = *inputs[0];
        const bool batch = uses_batch_stats(mode);
        Stats stats;
        Tensor<T> y = normalize(x, batch, &stats);
        this->cache_.clear();
        this->cache_.push_back(std::move(stats.xhat));
        this->cache_.push_back(std::move(stats.inv_std));
        this->cached_mode_ = mode;
        batch_mode_ = batch;
        if (batch) {
            const T momentum = static_cast<T>(this->node_.bn_momentum);
            auto& mean = this->params_[2].values;
            auto& var = this->params_[3].values;
            for (std::size_t ch = 0; ch < mean.size(); ++ch) {
                mean[ch] = mean[ch] * momentum + stats.mean[ch] * (T{1} - momentum);
                var[ch] = var[ch] * momentum + stats.var[ch] * (T{1} - momentum);
            }
        }
        return y;
    }

    std::vector<Tensor<T>> backward(const Tensor<T>& gy) override {
        this->require_cache();
        const auto& xhat = this->cache_[0];
        const auto& inv_std = this->cache_[1];
        const std::size_t c = this->node_.in_shape.c;
        const std::size_t m = xhat.size() / c;
        const auto& gamma = this->params_[0].values;
        std::vector<T> sum_g(c, T{0}), sum_gx(c, T{0});
        for (std::size_t i = 0; i < xhat.size(); ++i) {
            sum_g[i % c] += gy[i];
            sum_gx[i % c] += gy[i] * xhat[i];
        }
        if (this->accumulate_grads()) {
            for (auto& p : this->params_) zero_grads_like(p);
            for (std::size_t ch = 0; ch < c; ++ch) {
                this->params_[0].grads[ch] += sum_gx[ch];
                this->params_[1].grads[ch] += sum_g[ch];
            }
        }
        Tensor<T> gx(xhat.shape());
        const T inv_m = T{1} / static_cast<T>(m);
        for (std::size_t i = 0; i < xhat.size(); ++i) {
            const std::size_t ch = i % c;
            const T scale = gamma[ch] * inv_std[ch];
            if (batch_mode_) {
                gx[i] = scale * (gy[i] - inv_m * sum_g[ch] - xhat[i] * inv_m * sum_gx[ch]);
            } else {
                gx[i] = scale * gy[i];
            }
        }
        return {std::move(gx)};
    }

private:
    struct Stats {
        Tensor<T> xhat;
        Tensor<T> inv_std;
        std::vector<T> mean;
        std::vector<T> var;
    };

    bool uses_batch_stats(Mode mode) const { return mode == Mode::Train && !this->frozen_; }

    Tensor<T> normalize(const Tensor<T>& x, bool batch, Stats* stats) const {
        const std::size_t c = this->node_.in_shape.c;
        const std::size_t m = x.size() / c;
        const T eps = static_cast<T>(this->node_.bn_epsilon);
        std::vector<T> mean(c, T{0}), var(c, T{0});
        if (batch) {
            for (std::size_t i = 0; i < x.size(); ++i) mean[i % c] += x[i];
            for (auto& v : mean) v /= static_cast<T>(m);
            for (std::size_t i = 0; i < x.size(); ++i) {
                const T d = x[i] - mean[i % c];
                var[i % c] += d * d;
            }
            for (auto& v : var) v /= static_cast<T>(m);
        } else {
            for (std::size_t ch = 0; ch < c; ++ch) {
                mean[ch] = this->params_[2].values[ch];
                var[ch] = this->params_[3].values[ch];
            }
        }
        Tensor<T> inv_std({c});
        for (std::size_t ch = 0; ch < c; ++ch) inv_std[ch] = T{1} / std::sqrt(var[ch] + eps);
        const auto& gamma = this->params_[0].values;
        const auto& beta = this->params_[1].values;
        Tensor<T> y(x.shape());
        Tensor<T> xhat = stats ? Tensor<T>(x.shape()) : Tensor<T>();
        for (std::size_t i = 0; i < x.size(); ++i) {
            const std::size_t ch = i % c;
            const T h = (x[i] - mean[ch]) * inv_std[ch];
            if (stats) xhat[i] = h;
            y[i] = gamma[ch] * h + beta[ch];
        }
        if (stats) {
            stats->xhat = std::move(xhat);
            stats->inv_std = std::move(inv_std);
            stats->mean = std::move(mean);
            stats->var = std::move(var);
        }
        return y;
    }

    bool batch_mode_ = true;
};

template <typename T>
class ActivationLayer final : public Layer<T> {
public:
    using Layer<T>::Layer;

    Tensor<T> compute(std::span<const Tensor<T>* const> inputs, Mode) const override {
        this->check_inputs(inputs, 1);
        const auto& x = *inputs[0];
        switch (this->node_.activation) {
            case ActivationKind::Relu: return maximum(x, T{0});
            case ActivationKind::Relu6: {
                Tensor<T> y(x.shape());
                for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::clamp(x[i], T{0}, T{6});
                return y;
            }
            case ActivationKind::Softmax: return softmax_rows(x);
            case ActivationKind::None: return x;
        }
        return x;
    }

    std::vector<Tensor<T>> backward(const Tensor<T>& gy) override {
        this->require_cache();
        const auto& x = this->cache_[0];
        Tensor<T> gx(x.shape());
        switch (this->node_.activation) {
            case ActivationKind::Relu:
                for (std::size_t i = 0; i < x.size(); ++i) gx[i] = x[i] > T{0} ? gy[i] : T{0};
                break;
            case ActivationKind::Relu6:
                for (std::size_t i = 0; i < x.size(); ++i) gx[i] = (x[i] > T{0} && x[i] < T{6}) ? gy[i] : T{0};
                break;
            case ActivationKind::Softmax: gx = softmax_backward(softmax_rows(x), gy); break;
            case ActivationKind::None: gx = gy; break;
        }
        return {std::move(gx)};
    }

    static Tensor<T> softmax_backward(const Tensor<T>& p, const Tensor<T>& gy) {
        const std::size_t rows = p.dim(0), cols = p.dim(1);
        Tensor<T> gx(p.shape());
        for (std::size_t r = 0; r < rows; ++r) {
            T dot = 0;
            for (std::size_t j = 0; j < cols; ++j) dot += gy[r * cols + j] * p[r * cols + j];
            for (std::size_t j = 0; j < cols; ++j) gx[r * cols + j] = p[r * cols + j] * (gy[r * cols + j] - dot);
        }
        return gx;
    }
};

template <typename T>
class PoolLayer final : public Layer<T> {
public:
    using Layer<T>::Layer;

    bool is_max() const { return this->node_.kind == LayerKind::MaxPool; }

    Tensor<T> compute(std::span<const Tensor<T>* const> inputs, Mode) const override {
        this->check_inputs(inputs, 1);
        const auto& x = *inputs[0];
        const Window g = Window::of(this->node_);
        const std::size_t n = x.dim(0), c = this->node_.in_shape.c;
        Tensor<T> y({n, g.out_h, g.out_w, c});
        std::vector<T> acc(c);
        for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                    std::fill(acc.begin(), acc.end(), is_max() ? -std::numeric_limits<T>::infinity() : T{0});
                    std::size_t count = 0;
                    for (std::size_t ky = 0; ky < g.k; ++ky) {
                        const auto iy = g.src_y(oy, ky);
                        if (iy < 0) continue;
                        for (std::size_t kx = 0; kx < g.k; ++kx) {
                            const auto ix = g.src_x(ox, kx);
                            if (ix < 0) continue;
                            ++count;
                            const T* in = &x.at(b, iy, ix, 0);
                            for (std::size_t ch = 0; ch < c; ++ch) {
                                acc[ch] = is_max() ? std::max(acc[ch], in[ch]) : acc[ch] + in[ch];
                            }
                        }
                    }
                    T* out = &y.at(b, oy, ox, 0);
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        out[ch] = is_max() ? acc[ch] : acc[ch] / static_cast<T>(count);
                    }
                }
            }
        }
        return y;
    }

    std::vector<Tensor<T>> backward(const Tensor<T>& gy) override {
        this->require_cache();
        const auto& x = this->cache_[0];
        const Window g = Window::of(this->node_);
        const std::size_t n = x.dim(0), c = this->node_.in_shape.c;
        Tensor<T> gx(x.shape());
        for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                    const T* go = &gy.at(b, oy, ox, 0);
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        // Max routes to the first maximal position in scan order.
                        T best = -std::numeric_limits<T>::infinity();
                        T* best_slot = nullptr;
                        std::size_t count = 0;
                        for (std::size_t ky = 0; ky < g.k; ++ky) {
                            const auto iy = g.src_y(oy, ky);
                            if (iy < 0) continue;
                            for (std::size_t kx = 0; kx < g.k; ++kx) {
                                const auto ix = g.src_x(ox, kx);
                                if (ix < 0) continue;
                                ++count;
                                const T v = x.at(b, iy, ix, ch);
                                if (is_max() && (best_slot == nullptr || v > best)) {
                                    best = v;
                                    best_slot = &gx.at(b, iy, ix, ch);
                                }
                            }
                        }
                        if (is_max()) {
                            *best_slot += go[ch];
                            continue;
                        }
                        const T share = go[ch] / static_cast<T>(count);
                        for (std::size_t ky = 0; ky < g.k; ++ky) {
                            const auto iy = g.src_y(oy, ky);
                            if (iy < 0) continue;
                            for (std::size_t kx = 0; kx < g.k; ++kx) {
                                const auto ix = g.src_x(ox, kx);
                                if (ix < 0) continue;
                                gx.at(b, iy, ix, ch) += share;
                            }
                        }
                    }
                }
            }
        }
        return {std::move(gx)};
    }
};

template <typename T>
class ZeroPadLayer final : public Layer<T> {
public:
    using Layer<T>::Layer;

    Tensor<T> compute(std::span<const Tensor<T>* const> inputs, Mode) const override {
        this->check_inputs(inputs, 1);
        const auto& x = *inputs[0];
        const auto& node = this->node_;
        Tensor<T> y(batch_shape<T>(x.dim(0), node.out_shape));
        const std::size_t c = node.in_shape.c;
        for (std::size_t b = 0; b < x.dim(0); ++b) {
            for (std::size_t h = 0; h < node.in_shape.h; ++h) {
                for (std::size_t w = 0; w < node.in_shape.w; ++w) {
                    std::copy_n(&x.at(b, h, w, 0), c, &y.at(b, h + node.pad[0], w + node.pad[2], 0));
                }
            }
        }
        return y;
    }

    std::vector<Tensor<T>> backward(const Tensor<T>& gy) override {
        this->require_cache();
        const auto& x = this->cache_[0];
        const auto& node = this->node_;
        Tensor<T> gx(x.shape());
        const std::size_t c = node.in_shape.c;
        for (std::size_t b = 0; b < x.dim(0); ++b) {
            for (std::size_t h = 0; h < node.in_shape.h; ++h) {
                for (std::size_t w = 0; w < node.in_shape.w; ++w) {
                    std::copy_n(&gy.at(b, h + node.pad[0], w + node.pad[2], 0), c, &gx.at(b, h, w, 0));
                }
            }
        }
        return {std::move(gx)};
    }
};

template <typename T>
class GlobalAvgPoolLayer final : public Layer<T> {
public:
    using Layer<T>::Layer;

    Tensor<T> compute(std::span<const Tensor<T>* const> inputs, Mode) const override {
        this->check_inputs(inputs, 1);
        return reduce_mean(*inputs[0], {1, 2});
    }

    std::vector<Tensor<T>> backward(const Tensor<T>& gy) override {
        this->require_cache();
        const auto& x = this->cache_[0];
        const std::size_t c = x.dim(3);
        const std::size_t hw = x.dim(1) * x.dim(2);
        Tensor<T> gx(x.shape());
        for (std::size_t i = 0; i < gx.size(); ++i) {
            const std::size_t b = i / (hw * c);
            gx[i] = gy[b * c + i % c] / static_cast<T>(hw);
        }
        return {std::move(gx)};
    }
};

template <typename T>
class FlattenLayer final : public Layer<T> {
public:
    using Layer<T>::Layer;

    Tensor<T> compute(std::span<const Tensor<T>* const> inputs, Mode) const override {
        this->check_inputs(inputs, 1);
        const auto& x = *inputs[0];
        return x.reshaped({x.dim(0), x.size() / x.dim(0)});
    }

    std::vector<Tensor<T>> backward(const Tensor<T>& gy) override {
        this->require_cache();
        return {gy.reshaped(this->cache_[0].shape())};
    }
};

template <typename T>
class DenseLayer final : public Layer<T> {
public:
    using Layer<T>::Layer;

    Tensor<T> compute(std::span<const Tensor<T>* const> inputs, Mode) const override {
        this->check_inputs(inputs, 1);
        Tensor<T> z = pointwise_apply(*inputs[0], this->node_.in_shape.c, this->node_.out_shape.c,
                                      this->params_[0].values.data().data(), this->params_[1].values.data().data());
        return this->node_.activation == ActivationKind::Softmax ? softmax_rows(z) : z;
    }

    Tensor<T> forward(std::span<const Tensor<T>* const> inputs, Mode mode) override {
        Tensor<T> y = compute(inputs, mode);
        this->cache_.clear();
        this->cache_.push_back(*inputs[0]);
        this->cache_.push_back(y);
        this->cached_mode_ = mode;
        return y;
    }

    std::vector<Tensor<T>> backward(const Tensor<T>& gy) override {
        this->require_cache();
        if (this->node_.activation == ActivationKind::Softmax) {
            return backward_logits(ActivationLayer<T>::softmax_backward(this->cache_[1], gy));
        }
        return backward_logits(gy);
    }

    std::vector<Tensor<T>> backward_logits(const Tensor<T>& gz) {
        this->require_cache();
        T* gw = nullptr;
        T* gb = nullptr;
        if (this->accumulate_grads()) {
            for (auto& p : this->params_) zero_grads_like(p);
            gw = this->params_[0].grads.data().data();
            gb = this->params_[1].grads.data().data();
        }
        return {pointwise_backward(this->cache_[0], gz, this->node_.in_shape.c, this->node_.out_shape.c,
                                   this->params_[0].values.data().data(), gw, gb)};
    }
};

template <typename T>
class SoftmaxLayer final : public Layer<T> {
public:
    using Layer<T>::Layer;

    Tensor<T> compute(std::span<const Tensor<T>* const> inputs, Mode) const override {
        this->check_inputs(inputs, 1);
        return softmax_rows(*inputs[0]);
    }

    std::vector<Tensor<T>> backward(const Tensor<T>& gy) override {
        this->require_cache();
        return {ActivationLayer<T>::softmax_backward(softmax_rows(this->cache_[0]), gy)};
    }
};

// Channel-axis concatenation.
template <typename T>
class ConcatLayer final : public Layer<T> {
public:
    using Layer<T>::Layer;

    Tensor<T> compute(std::span<const Tensor<T>* const> inputs, Mode) const override {
        this->check_inputs(inputs, this->node_.inputs.size());
        const std::size_t cout = this->node_.out_shape.c;
        const std::size_t positions = inputs[0]->size() / inputs[0]->shape().back();
        for (const auto* in : inputs) {
            if (in->size() / in->shape().back() != positions) {
                throw shape_error(this->node_, "matching spatial extents", shape_str(in->shape()));
            }
        }
        Shape shape = inputs[0]->shape();
        shape.back() = cout;
        Tensor<T> y(shape);
        std::size_t offset = 0;
        for (const auto* in : inputs) {
            const std::size_t c = in->shape().back();
            for (std::size_t p = 0; p < positions; ++p) {
                std::copy_n(in->data().data() + p * c, c, y.data().data() + p * cout + offset);
            }
            offset += c;
        }
        if (offset != cout) throw shape_error(this->node_, std::to_string(cout) + " channels", std::to_string(offset));
        return y;
    }

    std::vector<Tensor<T>> backward(const Tensor<T>& gy) override {
        this->require_cache();
        const std::size_t cout = this->node_.out_shape.c;
        const std::size_t positions = gy.size() / cout;
        std::vector<Tensor<T>> grads;
        std::size_t offset = 0;
        for (const auto& in : this->cache_) {
            const std::size_t c = in.shape().back();
            Tensor<T> g(in.shape());
            for (std::size_t p = 0; p < positions; ++p) {
                std::copy_n(gy.data().data() + p * cout + offset, c, g.data().data() + p * c);
            }
            offset += c;
            grads.push_back(std::move(g));
        }
        return grads;
    }
};

template <typename T>
class AddLayer final : public Layer<T> {
public:
    using Layer<T>::Layer;

    Tensor<T> compute(std::span<const Tensor<T>* const> inputs, Mode) const override {
        this->check_inputs(inputs, this->node_.inputs.size());
        Tensor<T> y = *inputs[0];
        for (std::size_t i = 1; i < inputs.size(); ++i) {
            if (inputs[i]->shape() != y.shape()) {
                throw shape_error(this->node_, shape_str(y.shape()), shape_str(inputs[i]->shape()));
            }
            add_into(y, inputs[i]->data());
        }
        return y;
    }

    std::vector<Tensor<T>> backward(const Tensor<T>& gy) override {
        this->require_cache();
        return std::vector<Tensor<T>>(this->cache_.size(), gy);
    }
};

}  // namespace

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
    if (logits.rank() != 2) {
        throw std::invalid_argument("softmax expects rank 2, got " + shape_str(logits.shape()));
    }
    const std::size_t rows = logits.dim(0), cols = logits.dim(1);
    Tensor<T> p(logits.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* z = logits.data().data() + r * cols;
        T* out = p.data().data() + r * cols;
        const T peak = *std::max_element(z, z + cols);
        T total = 0;
        for (std::size_t j = 0; j < cols; ++j) {
            out[j] = std::exp(z[j] - peak);
            total += out[j];
        }
        for (std::size_t j = 0; j < cols; ++j) out[j] /= total;
    }
    return p;
}

template <typename T>
std::vector<Tensor<T>> dense_backward_from_logits(Layer<T>& dense, const Tensor<T>& grad_logits) {
    auto* layer = dynamic_cast<DenseLayer<T>*>(&dense);
    if (!layer) {
        throw std::logic_error("fused softmax backward requires a Dense node, got " +
                               std::string(to_string(dense.node().kind)));
    }
    return layer->backward_logits(grad_logits);
}

template <typename T>
std::unique_ptr<Layer<T>> make_layer(const LayerNode& node) {
    std::unique_ptr<Layer<T>> layer;
    switch (node.kind) {
        case LayerKind::Input: layer = std::make_unique<InputLayer<T>>(node); break;
        case LayerKind::Conv2D: layer = std::make_unique<Conv2DLayer<T>>(node); break;
        case LayerKind::DepthwiseConv2D: layer = std::make_unique<DepthwiseConv2DLayer<T>>(node); break;
        case LayerKind::SeparableConv2D: layer = std::make_unique<SeparableConv2DLayer<T>>(node); break;
        case LayerKind::BatchNorm: layer = std::make_unique<BatchNormLayer<T>>(node); break;
        case LayerKind::Activation: layer = std::make_unique<ActivationLayer<T>>(node); break;
        case LayerKind::MaxPool:
        case LayerKind::AvgPool: layer = std::make_unique<PoolLayer<T>>(node); break;
        case LayerKind::ZeroPad: layer = std::make_unique<ZeroPadLayer<T>>(node); break;
        case LayerKind::GlobalAvgPool: layer = std::make_unique<GlobalAvgPoolLayer<T>>(node); break;
        case LayerKind::Flatten: layer = std::make_unique<FlattenLayer<T>>(node); break;
        case LayerKind::Dense: layer = std::make_unique<DenseLayer<T>>(node); break;
        case LayerKind::Softmax: layer = std::make_unique<SoftmaxLayer<T>>(node); break;
        case LayerKind::Concat: layer = std::make_unique<ConcatLayer<T>>(node); break;
        case LayerKind::Add: layer = std::make_unique<AddLayer<T>>(node); break;
    }
    for (const auto& spec : param_specs(node)) {
        Parameter<T> p;
        p.name = spec.name;
        p.values = Tensor<T>(spec.shape);
        p.grads = Tensor<T>(spec.shape);
        p.moving_stat = spec.moving_stat;
        p.trainable = !spec.moving_stat;
        layer->params().push_back(std::move(p));
    }
    return layer;
}

template class Layer<float>;
template class Layer<double>;
template std::unique_ptr<Layer<float>> make_layer(const LayerNode&);
template std::unique_ptr<Layer<double>> make_layer(const LayerNode&);
template Tensor<float> softmax_rows(const Tensor<float>&);
template Tensor<double> softmax_rows(const Tensor<double>&);
template std::vector<Tensor<float>> dense_backward_from_logits(Layer<float>&, const Tensor<float>&);
template std::vector<Tensor<double>> dense_backward_from_logits(Layer<double>&, const Tensor<double>&);

}  // namespace flora
