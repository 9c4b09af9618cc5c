#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <variant>

#include "flora/tensor.hpp"

namespace flora {

// Binary layout (little-endian, unpadded):
//   "FTNSR1" | dtype u8 (0 = f32, 1 = f64) | rank u8 | rank x u64 extents | payload
inline constexpr char kTensorMagic[6] = {'F', 'T', 'N', 'S', 'R', '1'};

class TensorFormatError : public std::runtime_error {
public:
    enum class Code { BadMagic, BadDType, BadRank, Truncated, Io };

    TensorFormatError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
    Code code() const { return code_; }

private:
    Code code_;
};

using AnyTensor = std::variant<Tensor<float>, Tensor<double>>;

template <typename T>
void write_tensor(std::ostream& out, const Tensor<T>& t);
template <typename T>
void write_tensor(const std::filesystem::path& path, const Tensor<T>& t);

AnyTensor read_any_tensor(std::istream& in);
AnyTensor read_any_tensor(const std::filesystem::path& path);

/// Reads a record that must carry dtype T.
template <typename T>
Tensor<T> read_tensor(std::istream& in);
template <typename T>
Tensor<T> read_tensor(const std::filesystem::path& path);

}  // namespace flora
