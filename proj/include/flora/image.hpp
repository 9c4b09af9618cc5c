#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "flora/tensor.hpp"

namespace flora {

/// 8-bit RGB image, rows top to bottom, channels interleaved.
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> rgb;

    bool operator==(const Image&) const = default;
};

class ImageDecodeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Largest accepted decoded size; larger headers are rejected before allocation.
inline constexpr std::size_t kMaxImagePixels = std::size_t{1} << 26;

/// Decodes PNG or JPEG bytes (detected by signature) to RGB. Grayscale and
/// palette images are expanded; alpha is dropped.
Image decode_image(std::span<const std::uint8_t> bytes);
Image read_image_file(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_png(const Image& image);
void write_png(const std::filesystem::path& path, const Image& image);

/// Bilinear resize with half-pixel centers and edge clamping, scaled to [0, 1].
/// Returns [height, width, 3].
Tensor<float> image_to_tensor(const Image& image, std::size_t height, std::size_t width);

}  // namespace flora
