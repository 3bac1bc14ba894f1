#pragma once

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include <png.h>

#include "error.hpp"
#include "tensor.hpp"

namespace stvm {

namespace detail {

struct PngImage {
    png_image img;
    PngImage() {
        std::memset(&img, 0, sizeof(img));
        img.version = PNG_IMAGE_VERSION;
    }
    ~PngImage() { png_image_free(&img); }
    PngImage(const PngImage&) = delete;
    PngImage& operator=(const PngImage&) = delete;
};

inline void write_png(const std::string& path, int h, int w, png_uint_32 format, const std::vector<png_byte>& bytes) {
    PngImage p;
    p.img.width = static_cast<png_uint_32>(w);
    p.img.height = static_cast<png_uint_32>(h);
    p.img.format = format;
    if (!png_image_write_to_file(&p.img, path.c_str(), 0, bytes.data(), 0, nullptr))
        throw IoError("cannot write " + path + ": " + p.img.message);
}

} // namespace detail

inline void write_png_rgb(const std::string& path, const Image& image) {
    if (image.channels != 3) throw ShapeError("write_png_rgb: expected 3 channels");
    std::vector<png_byte> bytes(static_cast<std::size_t>(image.pixels()) * 3);
    for (int i = 0; i < image.pixels(); ++i)
        for (int c = 0; c < 3; ++c) {
            const float v = std::clamp(image.data(i, c), 0.0f, 1.0f);
            bytes[static_cast<std::size_t>(i) * 3 + c] = static_cast<png_byte>(std::lround(v * 255.0f));
        }
    detail::write_png(path, image.height, image.width, PNG_FORMAT_RGB, bytes);
}

inline void write_png_gray(const std::string& path, const LabelMap& labels) {
    detail::write_png(path, labels.height, labels.width, PNG_FORMAT_GRAY, labels.values);
}

inline Image read_png_rgb(const std::string& path) {
    detail::PngImage p;
    if (!png_image_begin_read_from_file(&p.img, path.c_str())) throw IoError("cannot read " + path + ": " + p.img.message);
    p.img.format = PNG_FORMAT_RGB;
    std::vector<png_byte> bytes(PNG_IMAGE_SIZE(p.img));
    if (!png_image_finish_read(&p.img, nullptr, bytes.data(), 0, nullptr))
        throw IoError("cannot decode " + path + ": " + p.img.message);
    Image out(static_cast<int>(p.img.height), static_cast<int>(p.img.width), 3);
    for (int i = 0; i < out.pixels(); ++i)
        for (int c = 0; c < 3; ++c) out.data(i, c) = bytes[static_cast<std::size_t>(i) * 3 + c] / 255.0f;
    return out;
}

/// Reads an 8-bit single-channel PNG without any colour conversion.
inline LabelMap read_png_gray(const std::string& path) {
    detail::PngImage p;
    if (!png_image_begin_read_from_file(&p.img, path.c_str())) throw IoError("cannot read " + path + ": " + p.img.message);
    if (p.img.format & (PNG_FORMAT_FLAG_COLOR | PNG_FORMAT_FLAG_COLORMAP))
        throw DataError(path + ": label images must be single-channel");
    p.img.format = PNG_FORMAT_GRAY;
    LabelMap out(static_cast<int>(p.img.height), static_cast<int>(p.img.width));
    if (!png_image_finish_read(&p.img, nullptr, out.values.data(), 0, nullptr))
        throw IoError("cannot decode " + path + ": " + p.img.message);
    return out;
}

} // namespace stvm
