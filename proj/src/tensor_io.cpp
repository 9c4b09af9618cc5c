#include "flora/tensor_io.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace flora {

namespace {

template <typename U>
void put_le(std::ostream& out, U value) {
    std::array<char, sizeof(U)> bytes{};
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        bytes[i] = static_cast<char>((value >> (8 * i)) & 0xff);
    }
    out.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& in, const char* what) {
    std::array<unsigned char, sizeof(U)> bytes{};
    if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
        throw TensorFormatError(TensorFormatError::Code::Truncated,
                                std::string("truncated tensor record while reading ") + what);
    }
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
    return value;
}

template <typename T>
using Bits = std::conditional_t<std::is_same_v<T, float>, std::uint32_t, std::uint64_t>;

template <typename T>
Tensor<T> read_payload(std::istream& in, Shape shape) {
    const std::size_t count = shape_product(shape);
    // Reject impossible sizes before allocating when the stream length is known.
    const auto here = in.tellg();
    if (here != std::streampos(-1)) {
        in.seekg(0, std::ios::end);
        const auto end = in.tellg();
        in.seekg(here);
        const auto available = static_cast<std::size_t>(end - here);
        if (available / sizeof(T) < count) {
            throw TensorFormatError(TensorFormatError::Code::Truncated,
                                    "truncated tensor payload: declared " + std::to_string(count) +
                                        " elements, " + std::to_string(available / sizeof(T)) +
                                        " present");
        }
    }
    std::vector<T> data(count);
    if constexpr (std::endian::native == std::endian::little) {
        const auto bytes = static_cast<std::streamsize>(count * sizeof(T));
        in.read(reinterpret_cast<char*>(data.data()), bytes);
        if (in.gcount() != bytes) {
            throw TensorFormatError(TensorFormatError::Code::Truncated,
                                    "truncated tensor payload: declared " + std::to_string(count) +
                                        " elements, " + std::to_string(in.gcount() / sizeof(T)) +
                                        " present");
        }
    } else {
        for (std::size_t i = 0; i < count; ++i) {
            data[i] = std::bit_cast<T>(get_le<Bits<T>>(in, "payload"));
        }
    }
    return Tensor<T>(std::move(shape), std::move(data));
}

}  // namespace

template <typename T>
void write_tensor(std::ostream& out, const Tensor<T>& t) {
    out.write(kTensorMagic, sizeof(kTensorMagic));
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(dtype_of<T>()));
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (auto extent : t.shape()) put_le<std::uint64_t>(out, extent);
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(t.data().data()),
                  static_cast<std::streamsize>(t.size() * sizeof(T)));
    } else {
        for (T v : t.data()) put_le<Bits<T>>(out, std::bit_cast<Bits<T>>(v));
    }
    if (!out) {
        throw TensorFormatError(TensorFormatError::Code::Io, "failed writing tensor record");
    }
}

template <typename T>
void write_tensor(const std::filesystem::path& path, const Tensor<T>& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw TensorFormatError(TensorFormatError::Code::Io, "cannot open " + path.string() + " for writing");
    }
    write_tensor(out, t);
}

AnyTensor read_any_tensor(std::istream& in) {
    char magic[sizeof(kTensorMagic)];
    in.read(magic, sizeof(magic));
    if (in.gcount() != static_cast<std::streamsize>(sizeof(magic))) {
        throw TensorFormatError(TensorFormatError::Code::Truncated, "truncated tensor record header");
    }
    if (std::memcmp(magic, kTensorMagic, sizeof(magic)) != 0) {
        throw TensorFormatError(TensorFormatError::Code::BadMagic,
                                "bad tensor magic '" + std::string(magic, sizeof(magic)) + "'");
    }
    const auto dtype = get_le<std::uint8_t>(in, "dtype");
    if (dtype > 1) {
        throw TensorFormatError(TensorFormatError::Code::BadDType,
                                "unknown tensor dtype code " + std::to_string(dtype));
    }
    const auto rank = get_le<std::uint8_t>(in, "rank");
    if (rank < 1 || rank > 4) {
        throw TensorFormatError(TensorFormatError::Code::BadRank, "invalid tensor rank " + std::to_string(rank));
    }
    constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 40;
    Shape shape(rank);
    std::uint64_t count = 1;
    for (auto& extent : shape) {
        extent = get_le<std::uint64_t>(in, "extent");
        if (extent == 0 || extent > kMaxElements || count > kMaxElements / extent) {
            throw TensorFormatError(TensorFormatError::Code::BadRank,
                                    "invalid tensor extent " + std::to_string(extent));
        }
        count *= extent;
    }
    if (dtype == 0) return read_payload<float>(in, std::move(shape));
    return read_payload<double>(in, std::move(shape));
}

AnyTensor read_any_tensor(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw TensorFormatError(TensorFormatError::Code::Io, "cannot open " + path.string());
    }
    return read_any_tensor(in);
}

template <typename T>
Tensor<T> read_tensor(std::istream& in) {
    AnyTensor any = read_any_tensor(in);
    if (auto* t = std::get_if<Tensor<T>>(&any)) return std::move(*t);
    throw TensorFormatError(TensorFormatError::Code::BadDType, "tensor record has unexpected dtype");
}

template <typename T>
Tensor<T> read_tensor(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw TensorFormatError(TensorFormatError::Code::Io, "cannot open " + path.string());
    }
    return read_tensor<T>(in);
}

template void write_tensor(std::ostream&, const Tensor<float>&);
template void write_tensor(std::ostream&, const Tensor<double>&);
template void write_tensor(const std::filesystem::path&, const Tensor<float>&);
template void write_tensor(const std::filesystem::path&, const Tensor<double>&);
template Tensor<float> read_tensor(std::istream&);
template Tensor<double> read_tensor(std::istream&);
template Tensor<float> read_tensor(const std::filesystem::path&);
template Tensor<double> read_tensor(const std::filesystem::path&);

}  // namespace flora
