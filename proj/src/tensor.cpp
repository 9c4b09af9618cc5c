#include "flora/tensor.hpp"

#include <cmath>
#include <set>

namespace flora {

std::string shape_str(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

std::size_t shape_product(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

template <typename T>
bool Tensor<T>::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

namespace {

template <typename T>
T apply(ElementwiseOp op, T a, T b) {
    switch (op) {
        case ElementwiseOp::Add: return a + b;
        case ElementwiseOp::Sub: return a - b;
        case ElementwiseOp::Mul: return a * b;
        case ElementwiseOp::Maximum: return std::max(a, b);
    }
    return a;
}

}  // namespace

template <typename T>
Tensor<T> elementwise(ElementwiseOp op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument("shape mismatch: " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    }
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = apply(op, a[i], b[i]);
    return out;
}

template <typename T>
Tensor<T> elementwise(ElementwiseOp op, const Tensor<T>& a, T scalar) {
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = apply(op, a[i], scalar);
    return out;
}

template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& t, const std::vector<std::size_t>& axes) {
    std::set<std::size_t> reduced;
    for (auto axis : axes) {
        if (axis >= t.rank()) {
            throw std::invalid_argument("invalid axis " + std::to_string(axis) + " for tensor of shape " +
                                        shape_str(t.shape()));
        }
        reduced.insert(axis);
    }
    Shape out_shape;
    for (std::size_t i = 0; i < t.rank(); ++i) {
        if (!reduced.count(i)) out_shape.push_back(t.dim(i));
    }
    if (out_shape.empty()) out_shape.push_back(1);
    Tensor<T> out(out_shape);

    // Walk the source in row-major order, tracking the destination offset.
    const std::size_t rank = t.rank();
    std::vector<std::size_t> index(rank, 0);
    std::vector<std::size_t> out_stride(rank, 0);
    std::size_t stride = 1;
    for (std::size_t i = rank; i-- > 0;) {
        if (!reduced.count(i)) {
            out_stride[i] = stride;
            stride *= t.dim(i);
        }
    }
    for (std::size_t flat = 0; flat < t.size(); ++flat) {
        std::size_t dst = 0;
        for (std::size_t i = 0; i < rank; ++i) dst += index[i] * out_stride[i];
        out[dst] += t[flat];
        for (std::size_t i = rank; i-- > 0;) {
            if (++index[i] < t.dim(i)) break;
            index[i] = 0;
        }
    }
    return out;
}

template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& t, const std::vector<std::size_t>& axes) {
    Tensor<T> out = reduce_sum(t, axes);
    const T count = static_cast<T>(t.size() / out.size());
    for (auto& v : out.vec()) v /= count;
    return out;
}

template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& t) {
    if (t.rank() != 2) {
        throw std::invalid_argument("argmax_rows expects rank 2, got " + shape_str(t.shape()));
    }
    std::vector<std::size_t> out(t.dim(0));
    const std::size_t cols = t.dim(1);
    for (std::size_t r = 0; r < out.size(); ++r) {
        out[r] = argmax(t.data().subspan(r * cols, cols));
    }
    return out;
}

#define FLORA_INSTANTIATE(T)                                                                  \
    template class Tensor<T>;                                                                 \
    template Tensor<T> elementwise(ElementwiseOp, const Tensor<T>&, const Tensor<T>&);        \
    template Tensor<T> elementwise(ElementwiseOp, const Tensor<T>&, T);                       \
    template Tensor<T> reduce_sum(const Tensor<T>&, const std::vector<std::size_t>&);         \
    template Tensor<T> reduce_mean(const Tensor<T>&, const std::vector<std::size_t>&);        \
    template std::vector<std::size_t> argmax_rows(const Tensor<T>&);

FLORA_INSTANTIATE(float)
FLORA_INSTANTIATE(double)

#undef FLORA_INSTANTIATE

}  // namespace flora
