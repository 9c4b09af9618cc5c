#include "flora/model.hpp"

#include <cmath>
#include <stdexcept>

#include "flora/rng.hpp"

namespace flora {

namespace {

std::size_t kernel_fan_in(const std::string& name, const Shape& shape) {
    if (name == "kernel" && shape.size() == 4) return shape[0] * shape[1] * shape[2];
    if (name == "depthwise_kernel") return shape[0] * shape[1];
    return shape[0];  // pointwise / dense: rows are inputs
}

}  // namespace

template <typename T>
Model<T>::Model(ArchDescriptor desc, std::uint64_t init_seed) : desc_(std::move(desc)) {
    for (const auto& node : desc_.nodes) layers_.push_back(make_layer<T>(node));
    Rng rng(init_seed);
    for (auto& layer : layers_) {
        for (auto& p : layer->params()) {
            if (p.name == "gamma" || p.name == "moving_variance") {
                p.values.fill(T{1});
            } else if (p.name.find("kernel") != std::string::npos) {
                const double limit = std::sqrt(6.0 / static_cast<double>(kernel_fan_in(p.name, p.values.shape())));
                for (auto& v : p.values.vec()) v = static_cast<T>(rng.uniform(-limit, limit));
            }
        }
    }
}

template <typename T>
Tensor<T> Model<T>::forward(const Tensor<T>& input, Mode mode) {
    outputs_.assign(layers_.size(), Tensor<T>());
    std::vector<const Tensor<T>*> args;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& node = layers_[i]->node();
        args.clear();
        if (node.inputs.empty()) {
            args.push_back(&input);
        } else {
            for (int j : node.inputs) args.push_back(&outputs_[static_cast<std::size_t>(j)]);
        }
        outputs_[i] = layers_[i]->forward(args, mode);
    }
    return outputs_.back();
}

template <typename T>
Tensor<T> Model<T>::predict(const Tensor<T>& input) const {
    // Keep each output only until its last consumer has run.
    std::vector<std::size_t> last_use(layers_.size(), 0);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        for (int j : layers_[i]->node().inputs) last_use[static_cast<std::size_t>(j)] = i;
    }
    std::vector<Tensor<T>> outputs(layers_.size());
    std::vector<const Tensor<T>*> args;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& node = layers_[i]->node();
        args.clear();
        if (node.inputs.empty()) {
            args.push_back(&input);
        } else {
            for (int j : node.inputs) args.push_back(&outputs[static_cast<std::size_t>(j)]);
        }
        outputs[i] = layers_[i]->compute(args, Mode::Infer);
        for (int j : node.inputs) {
            if (last_use[static_cast<std::size_t>(j)] == i) outputs[static_cast<std::size_t>(j)] = Tensor<T>();
        }
    }
    return std::move(outputs.back());
}

template <typename T>
void Model<T>::backward_range(std::vector<std::optional<Tensor<T>>>& grads, std::size_t last) {
    for (std::size_t i = last + 1; i-- > 0;) {
        if (!grads[i]) continue;
        const auto& node = layers_[i]->node();
        if (node.inputs.empty()) continue;
        auto input_grads = layers_[i]->backward(*grads[i]);
        grads[i].reset();
        for (std::size_t k = 0; k < node.inputs.size(); ++k) {
            auto& slot = grads[static_cast<std::size_t>(node.inputs[k])];
            if (!slot) {
                slot = std::move(input_grads[k]);
            } else {
                auto dst = slot->data();
                auto src = input_grads[k].data();
                for (std::size_t e = 0; e < dst.size(); ++e) dst[e] += src[e];
            }
        }
    }
}

template <typename T>
void Model<T>::backward(const Tensor<T>& grad_output) {
    if (outputs_.empty()) throw std::logic_error("backward called before forward");
    std::vector<std::optional<Tensor<T>>> grads(layers_.size());
    grads.back() = grad_output;
    backward_range(grads, layers_.size() - 1);
}

template <typename T>
void Model<T>::backward_from_logits(const Tensor<T>& grad_logits) {
    if (outputs_.empty()) throw std::logic_error("backward called before forward");
    const std::size_t last = layers_.size() - 1;
    std::vector<std::optional<Tensor<T>>> grads(layers_.size());
    auto input_grads = dense_backward_from_logits(*layers_[last], grad_logits);
    grads[static_cast<std::size_t>(layers_[last]->node().inputs.at(0))] = std::move(input_grads[0]);
    backward_range(grads, last - 1);
}

template <typename T>
std::vector<Parameter<T>*> Model<T>::parameters() {
    std::vector<Parameter<T>*> out;
    for (auto& layer : layers_) {
        for (auto& p : layer->params()) out.push_back(&p);
    }
    return out;
}

template <typename T>
std::vector<const Parameter<T>*> Model<T>::parameters() const {
    std::vector<const Parameter<T>*> out;
    for (const auto& layer : layers_) {
        for (const auto& p : layer->params()) out.push_back(&p);
    }
    return out;
}

template <typename T>
void Model<T>::zero_grads() {
    for (auto* p : parameters()) p->grads.fill(T{0});
}

template <typename T>
void Model<T>::apply_freeze(const FreezePlan& plan) {
    if (plan.frozen_count > desc_.base_node_count()) {
        throw std::invalid_argument("freeze plan covers more nodes than the base has");
    }
    freeze_ = plan;
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->set_frozen(plan.is_frozen(i));
}

template <typename T>
ParamCount Model<T>::param_count() const {
    ParamCount count;
    for (const auto* p : parameters()) {
        const auto n = static_cast<std::uint64_t>(p->values.size());
        count.total += n;
        (p->trainable ? count.trainable : count.non_trainable) += n;
    }
    return count;
}

template <typename T>
void Model<T>::copy_base_from(const Model& source) {
    if (!same_base(desc_, source.desc_)) {
        throw std::invalid_argument("cannot transfer weights: base of '" + source.desc_.name +
                                    "' does not match base of '" + desc_.name + "'");
    }
    for (std::size_t i = 0; i < desc_.base_node_count(); ++i) {
        auto& dst = layers_[i]->params();
        const auto& src = source.layers_[i]->params();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k].values = src[k].values;
    }
}

template <typename T>
std::optional<std::size_t> Model<T>::first_nonfinite_node() const {
    for (std::size_t i = 0; i < outputs_.size(); ++i) {
        if (!outputs_[i].all_finite()) return i;
    }
    return std::nullopt;
}

template <typename T>
Model<T> Model<T>::clone() const {
    Model copy(desc_, 0);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        auto& dst = copy.layers_[i]->params();
        const auto& src = layers_[i]->params();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = src[k];
    }
    copy.apply_freeze(freeze_);
    return copy;
}

template class Model<float>;
template class Model<double>;

}  // namespace flora
