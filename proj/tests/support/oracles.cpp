#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace flora::oracle {

LayerNode finish(LayerNode node, const std::vector<FeatureShape>& inputs) {
    node.in_shape = inputs.at(0);
    node.out_shape = infer_output_shape(node, inputs);
    return node;
}

Shape batched(std::size_t n, const FeatureShape& s) {
    return s.flat ? Shape{n, s.c} : Shape{n, s.h, s.w, s.c};
}

double rel_error(const std::vector<double>& a, const std::vector<double>& b) {
    double diff = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nb), 1e-8});
    return std::sqrt(diff) / denom;
}

namespace {

bool near_kink(double v, ActivationKind act) {
    if (act == ActivationKind::Relu || act == ActivationKind::Relu6) {
        if (std::abs(v) < 1e-3) return true;
        if (act == ActivationKind::Relu6 && std::abs(v - 6.0) < 1e-3) return true;
    }
    return false;
}

}  // namespace

// Largest relative error over the input gradients and every trainable parameter gradient
// of L = sum(y * R) for a random R.
double check_layer(const GradCase& c, Rng& rng) {
    auto layer = make_layer<double>(c.node);
    for (auto& p : layer->params()) {
        for (auto& v : p.values.vec()) {
            if (p.name == "gamma") v = rng.uniform(0.5, 1.5);
            else if (p.name == "moving_variance") v = rng.uniform(0.5, 2.0);
            else v = rng.uniform(-0.5, 0.5);
        }
    }

    std::vector<Tensor<double>> inputs;
    for (const auto& s : c.inputs) {
        Tensor<double> t(batched(c.batch, s));
        if (c.distinct_inputs) {
            std::vector<std::size_t> order(t.size());
            std::iota(order.begin(), order.end(), 0);
            rng.shuffle(std::span<std::size_t>(order));
            for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.01 * static_cast<double>(order[i]) - 1.0;
        } else {
            for (auto& v : t.vec()) {
                do {
                    v = rng.uniform(-1, 1) * c.input_scale;
                } while (near_kink(v, c.node.activation));
            }
        }
        inputs.push_back(std::move(t));
    }
    std::vector<const Tensor<double>*> args;
    for (const auto& t : inputs) args.push_back(&t);

    const Tensor<double> y0 = layer->compute(args, c.mode);
    Tensor<double> r(y0.shape());
    for (auto& v : r.vec()) v = rng.uniform(-1, 1);
    auto loss = [&]() {
        const auto y = layer->compute(args, c.mode);
        double s = 0;
        for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
        return s;
    };

    // Snapshot moving stats: Train-mode forward updates them, compute() must see the same values.
    std::vector<Tensor<double>> saved;
    for (const auto& p : layer->params()) saved.push_back(p.values);
    for (auto& p : layer->params()) p.grads.fill(0.0);
    layer->forward(args, c.mode);
    auto input_grads = layer->backward(r);
    for (std::size_t k = 0; k < saved.size(); ++k) layer->params()[k].values = saved[k];

    double worst = 0;
    for (std::size_t j = 0; j < inputs.size(); ++j) {
        std::vector<double> numeric(inputs[j].size());
        for (std::size_t i = 0; i < inputs[j].size(); ++i) {
            const double orig = inputs[j][i];
            inputs[j][i] = orig + kStep;
            const double up = loss();
            inputs[j][i] = orig - kStep;
            const double down = loss();
            inputs[j][i] = orig;
            numeric[i] = (up - down) / (2 * kStep);
        }
        worst = std::max(worst, rel_error(input_grads.at(j).vec(), numeric));
    }
    for (auto& p : layer->params()) {
        if (!p.trainable) continue;
        std::vector<double> numeric(p.values.size());
        for (std::size_t i = 0; i < p.values.size(); ++i) {
            const double orig = p.values[i];
            p.values[i] = orig + kStep;
            const double up = loss();
            p.values[i] = orig - kStep;
            const double down = loss();
            p.values[i] = orig;
            numeric[i] = (up - down) / (2 * kStep);
        }
        worst = std::max(worst, rel_error(p.grads.vec(), numeric));
    }
    return worst;
}

namespace {

FeatureShape spatial(Rng& rng, std::size_t lo, std::size_t hi, std::size_t cmax) {
    return {lo + rng.below(hi - lo + 1), lo + rng.below(hi - lo + 1), 1 + rng.below(cmax), false};
}

LayerNode windowed(LayerKind kind, Rng& rng, const FeatureShape& in) {
    LayerNode n;
    n.kind = kind;
    n.name = "case";
    n.stride = 1 + static_cast<int>(rng.below(3));
    n.padding = rng.below(2) ? Padding::Same : Padding::Valid;
    const std::size_t kmax = std::min<std::size_t>({in.h, in.w, 4});
    n.kernel = 1 + static_cast<int>(rng.below(kmax));
    return n;
}

}  // namespace

GradCase random_case(LayerKind kind, Rng& rng) {
    GradCase c;
    c.batch = 1 + rng.below(3);
    LayerNode n;
    n.kind = kind;
    n.name = "case";
    switch (kind) {
        case LayerKind::Conv2D:
        case LayerKind::DepthwiseConv2D:
        case LayerKind::SeparableConv2D: {
            c.inputs = {spatial(rng, 2, 7, 4)};
            n = windowed(kind, rng, c.inputs[0]);
            n.filters = 1 + static_cast<int>(rng.below(4));
            n.use_bias = rng.below(2) == 1;
            break;
        }
        case LayerKind::MaxPool:
        case LayerKind::AvgPool: {
            c.inputs = {spatial(rng, 2, 7, 3)};
            n = windowed(kind, rng, c.inputs[0]);
            n.kernel = std::max(n.kernel, 2);
            if (n.kernel > static_cast<int>(std::min(c.inputs[0].h, c.inputs[0].w))) n.padding = Padding::Same;
            c.distinct_inputs = kind == LayerKind::MaxPool;
            break;
        }
        case LayerKind::BatchNorm: {
            c.inputs = {rng.below(3) ? spatial(rng, 1, 4, 4) : FeatureShape{1, 1, 1 + rng.below(5), true}};
            c.batch = 2 + rng.below(3);
            c.mode = rng.below(2) ? Mode::Train : Mode::Infer;
            n.bn_epsilon = 1e-3;
            break;
        }
        case LayerKind::Activation: {
            const auto pick = rng.below(3);
            n.activation = pick == 0 ? ActivationKind::Relu : pick == 1 ? ActivationKind::Relu6 : ActivationKind::Softmax;
            c.inputs = {n.activation == ActivationKind::Softmax ? FeatureShape{1, 1, 2 + rng.below(5), true}
                                                                : spatial(rng, 1, 4, 4)};
            c.input_scale = n.activation == ActivationKind::Relu6 ? 8.0 : 2.0;
            break;
        }
        case LayerKind::ZeroPad: {
            c.inputs = {spatial(rng, 1, 5, 3)};
            for (auto& p : n.pad) p = static_cast<int>(rng.below(3));
            break;
        }
        case LayerKind::GlobalAvgPool:
        case LayerKind::Flatten: c.inputs = {spatial(rng, 1, 5, 4)}; break;
        case LayerKind::Dense: {
            c.inputs = {FeatureShape{1, 1, 1 + rng.below(6), true}};
            n.filters = 1 + static_cast<int>(rng.below(5));
            n.use_bias = rng.below(2) == 1;
            if (rng.below(2)) n.activation = ActivationKind::Softmax;
            c.input_scale = 2.0;
            break;
        }
        case LayerKind::Softmax: c.inputs = {FeatureShape{1, 1, 2 + rng.below(6), true}}; break;
        case LayerKind::Concat: {
            const auto base = spatial(rng, 1, 4, 3);
            c.inputs = {base};
            const std::size_t extra = 1 + rng.below(2);
            for (std::size_t i = 0; i < extra; ++i) c.inputs.push_back({base.h, base.w, 1 + rng.below(4), false});
            break;
        }
        case LayerKind::Add: {
            const auto base = rng.below(4) ? spatial(rng, 1, 4, 3) : FeatureShape{1, 1, 1 + rng.below(5), true};
            c.inputs.assign(2 + rng.below(2), base);
            break;
        }
        case LayerKind::Input: break;
    }
    n.kind = kind;
    n.name = std::string(to_string(kind)) + "_case";
    c.node = finish(n, c.inputs);
    return c;
}

MetricsOracle brute_force(const std::vector<std::pair<std::size_t, std::size_t>>& pairs, std::size_t k) {
    MetricsOracle o;
    const double n = static_cast<double>(pairs.size());
    for (std::size_t c = 0; c < k; ++c) {
        double tp = 0, fp = 0, fn = 0, tn = 0;
        for (auto [a, p] : pairs) {
            if (a == c && p == c) tp += 1;
            else if (a != c && p == c) fp += 1;
            else if (a == c && p != c) fn += 1;
            else tn += 1;
        }
        o.acc += (tp + tn) / n;
        o.spec += fp + tn > 0 ? tn / (fp + tn) : 0;
        o.prec += tp + fp > 0 ? tp / (tp + fp) : 0;
        o.rec += tp + fn > 0 ? tp / (tp + fn) : 0;
        o.err += (fp + fn) / n;
    }
    const double kd = static_cast<double>(k);
    o.acc /= kd;
    o.spec /= kd;
    o.prec /= kd;
    o.rec /= kd;
    o.err /= kd;
    o.f1 = o.prec + o.rec > 0 ? 2 * o.prec * o.rec / (o.prec + o.rec) : 0;
    double correct = 0;
    for (auto [a, p] : pairs) correct += a == p;
    o.top1 = correct / n;
    return o;
}

}  // namespace flora::oracle
