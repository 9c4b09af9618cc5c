#include "flora/image.hpp"

#include <algorithm>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <jpeglib.h>
#include <png.h>

namespace flora {

namespace {

void check_dimensions(std::size_t w, std::size_t h) {
    if (w == 0 || h == 0) throw ImageDecodeError("image has zero width or height");
    if (w > kMaxImagePixels / h) {
        throw ImageDecodeError("image " + std::to_string(w) + "x" + std::to_string(h) + " exceeds the " +
                               std::to_string(kMaxImagePixels) + " pixel limit");
    }
}

Image decode_png(std::span<const std::uint8_t> bytes) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
        throw ImageDecodeError(std::string("png: ") + img.message);
    }
    try {
        check_dimensions(img.width, img.height);
    } catch (...) {
        png_image_free(&img);
        throw;
    }
    img.format = PNG_FORMAT_RGB;
    Image out;
    out.width = img.width;
    out.height = img.height;
    out.rgb.resize(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, out.rgb.data(), 0, nullptr)) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw ImageDecodeError("png: " + msg);
    }
    return out;
}

struct JpegError {
    jpeg_error_mgr mgr;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegError*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    std::longjmp(err->jump, 1);
}

void jpeg_silent(j_common_ptr, int) {}

// No C++ objects with destructors may live in this frame across setjmp.
bool decode_jpeg_raw(std::span<const std::uint8_t> bytes, JpegError& err, jpeg_decompress_struct& cinfo,
                     std::vector<std::uint8_t>& rgb, std::size_t& width, std::size_t& height, char* why) {
    cinfo.err = jpeg_std_error(&err.mgr);
    err.mgr.error_exit = jpeg_error_exit;
    err.mgr.emit_message = jpeg_silent;
    if (setjmp(err.jump)) {
        std::snprintf(why, JMSG_LENGTH_MAX, "%s", err.message);
        jpeg_destroy_decompress(&cinfo);
        return false;
    }
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&cinfo, TRUE);
    if (cinfo.jpeg_color_space == JCS_CMYK || cinfo.jpeg_color_space == JCS_YCCK) {
        std::snprintf(why, JMSG_LENGTH_MAX, "CMYK JPEG is not supported");
        jpeg_destroy_decompress(&cinfo);
        return false;
    }
    if (cinfo.image_width == 0 || cinfo.image_height == 0 ||
        cinfo.image_width > kMaxImagePixels / cinfo.image_height) {
        std::snprintf(why, JMSG_LENGTH_MAX, "image %ux%u exceeds the pixel limit", cinfo.image_width,
                      cinfo.image_height);
        jpeg_destroy_decompress(&cinfo);
        return false;
    }
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    width = cinfo.output_width;
    height = cinfo.output_height;
    rgb.resize(width * height * 3);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = rgb.data() + static_cast<std::size_t>(cinfo.output_scanline) * width * 3;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return true;
}

Image decode_jpeg(std::span<const std::uint8_t> bytes) {
    JpegError err{};
    jpeg_decompress_struct cinfo{};
    Image out;
    char why[JMSG_LENGTH_MAX] = {0};
    if (!decode_jpeg_raw(bytes, err, cinfo, out.rgb, out.width, out.height, why)) {
        throw ImageDecodeError(std::string("jpeg: ") + why);
    }
    return out;
}

}  // namespace

Image decode_image(std::span<const std::uint8_t> bytes) {
    static constexpr std::uint8_t kPng[] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPng, 8) == 0) return decode_png(bytes);
    if (bytes.size() >= 3 && bytes[0] == 0xff && bytes[1] == 0xd8 && bytes[2] == 0xff) return decode_jpeg(bytes);
    throw ImageDecodeError("unrecognized image format (expected PNG or JPEG)");
}

Image read_image_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageDecodeError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), {});
    return decode_image(bytes);
}

std::vector<std::uint8_t> encode_png(const Image& image) {
    if (image.rgb.size() != image.width * image.height * 3 || image.rgb.empty()) {
        throw std::invalid_argument("encode_png: pixel buffer does not match dimensions");
    }
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width);
    img.height = static_cast<png_uint_32>(image.height);
    img.format = PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&img, nullptr, &size, 0, image.rgb.data(), 0, nullptr)) {
        throw std::runtime_error(std::string("png encode: ") + img.message);
    }
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&img, out.data(), &size, 0, image.rgb.data(), 0, nullptr)) {
        throw std::runtime_error(std::string("png encode: ") + img.message);
    }
    out.resize(size);
    return out;
}

void write_png(const std::filesystem::path& path, const Image& image) {
    const auto bytes = encode_png(image);
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("cannot write " + path.string());
}

Tensor<float> image_to_tensor(const Image& image, std::size_t height, std::size_t width) {
    if (image.width == 0 || image.height == 0) throw std::invalid_argument("image_to_tensor: empty image");
    Tensor<float> out({height, width, 3});
    constexpr float kScale = 1.0f / 255.0f;
    if (height == image.height && width == image.width) {
        for (std::size_t i = 0; i < image.rgb.size(); ++i) out[i] = static_cast<float>(image.rgb[i]) * kScale;
        return out;
    }
    const double sy = static_cast<double>(image.height) / static_cast<double>(height);
    const double sx = static_cast<double>(image.width) / static_cast<double>(width);
    auto px = [&](std::size_t y, std::size_t x, std::size_t c) {
        return static_cast<float>(image.rgb[(y * image.width + x) * 3 + c]);
    };
    for (std::size_t oy = 0; oy < height; ++oy) {
        const double fy = std::clamp((static_cast<double>(oy) + 0.5) * sy - 0.5, 0.0,
                                     static_cast<double>(image.height - 1));
        const auto y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, image.height - 1);
        const auto ty = static_cast<float>(fy - static_cast<double>(y0));
        for (std::size_t ox = 0; ox < width; ++ox) {
            const double fx = std::clamp((static_cast<double>(ox) + 0.5) * sx - 0.5, 0.0,
                                         static_cast<double>(image.width - 1));
            const auto x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, image.width - 1);
            const auto tx = static_cast<float>(fx - static_cast<double>(x0));
            for (std::size_t c = 0; c < 3; ++c) {
                const float top = px(y0, x0, c) + (px(y0, x1, c) - px(y0, x0, c)) * tx;
                const float bottom = px(y1, x0, c) + (px(y1, x1, c) - px(y1, x0, c)) * tx;
                out[(oy * width + ox) * 3 + c] = (top + (bottom - top) * ty) * kScale;
            }
        }
    }
    return out;
}

}  // namespace flora
