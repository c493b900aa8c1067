// SPDX-License-Identifier: Apache-2.0
//
// 8-bit RGB image I/O: PNG via libpng, PPM (P6) as a dependency-free
// fallback. Format is sniffed from magic bytes on read and chosen by
// file extension on write.

#pragma once

#include <png.h>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "gunet/core.hpp"

namespace gunet {

struct ImageU8 {
    int h = 0, w = 0;
    std::vector<std::uint8_t> rgb;  // interleaved, row-major

    std::uint8_t& at(int y, int x, int c) { return rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c]; }
    std::uint8_t at(int y, int x, int c) const { return rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c]; }
};

template <typename Real>
Tensor<Real> image_to_tensor(const ImageU8& img) {
    Tensor<Real> t(1, 3, img.h, img.w);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x)
                t.at(0, c, y, x) = static_cast<Real>(img.at(y, x, c)) / Real(255);
    return t;
}

// Clamps to [0,1] and quantizes; the only place output values are clamped.
template <typename Real>
ImageU8 tensor_to_image(const Tensor<Real>& t, int batch = 0) {
    check_shape(t.c() == 3, "tensor_to_image: need 3 channels");
    ImageU8 img;
    img.h = t.h();
    img.w = t.w();
    img.rgb.resize(static_cast<std::size_t>(t.h()) * t.w() * 3);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < t.h(); ++y)
            for (int x = 0; x < t.w(); ++x) {
                double v = static_cast<double>(t.at(batch, c, y, x));
                v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
                img.at(y, x, c) = static_cast<std::uint8_t>(std::lround(v * 255.0));
            }
    return img;
}

namespace img_detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline void write_png(const std::string& path, const ImageU8& img) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot open '" + path + "' for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng write error for '" + path + "'");
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, img.w, img.h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(img.h);
    for (int y = 0; y < img.h; ++y)
        rows[y] = const_cast<png_bytep>(img.rgb.data() + static_cast<std::size_t>(y) * img.w * 3);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

inline ImageU8 read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open '" + path + "'");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng read error for '" + path + "'");
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    // normalize anything common (palette, gray, 16-bit, alpha) to RGB8
    png_set_expand(png);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    if (png_get_color_type(png, info) & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
        png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    ImageU8 img;
    img.w = static_cast<int>(png_get_image_width(png, info));
    img.h = static_cast<int>(png_get_image_height(png, info));
    if (png_get_rowbytes(png, info) != static_cast<std::size_t>(img.w) * 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("unsupported PNG layout in '" + path + "'");
    }
    img.rgb.resize(static_cast<std::size_t>(img.h) * img.w * 3);
    std::vector<png_bytep> rows(img.h);
    for (int y = 0; y < img.h; ++y)
        rows[y] = img.rgb.data() + static_cast<std::size_t>(y) * img.w * 3;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

inline void write_ppm(const std::string& path, const ImageU8& img) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot open '" + path + "' for writing");
    std::fprintf(fp.get(), "P6\n%d %d\n255\n", img.w, img.h);
    if (std::fwrite(img.rgb.data(), 1, img.rgb.size(), fp.get()) != img.rgb.size())
        throw IoError("short write to '" + path + "'");
}

inline ImageU8 read_ppm(std::FILE* f, const std::string& path) {
    auto next_token = [&]() -> long {
        int ch = std::fgetc(f);
        while (ch == '#' || std::isspace(ch)) {
            if (ch == '#')
                while (ch != '\n' && ch != EOF) ch = std::fgetc(f);
            ch = std::fgetc(f);
        }
        long v = 0;
        bool any = false;
        while (std::isdigit(ch)) {
            v = v * 10 + (ch - '0');
            any = true;
            ch = std::fgetc(f);
        }
        if (!any) throw IoError("malformed PPM header in '" + path + "'");
        return v;
    };
    ImageU8 img;
    img.w = static_cast<int>(next_token());
    img.h = static_cast<int>(next_token());
    const long maxval = next_token();
    if (maxval != 255) throw IoError("only maxval 255 PPM supported: '" + path + "'");
    img.rgb.resize(static_cast<std::size_t>(img.h) * img.w * 3);
    if (std::fread(img.rgb.data(), 1, img.rgb.size(), f) != img.rgb.size())
        throw IoError("truncated PPM '" + path + "'");
    return img;
}

}  // namespace img_detail

inline ImageU8 read_image(const std::string& path) {
    img_detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open '" + path + "'");
    unsigned char magic[2] = {0, 0};
    if (std::fread(magic, 1, 2, fp.get()) != 2) throw IoError("cannot read '" + path + "'");
    if (magic[0] == 0x89 && magic[1] == 'P') {
        fp.reset();
        return img_detail::read_png(path);
    }
    if (magic[0] == 'P' && magic[1] == '6') return img_detail::read_ppm(fp.get(), path);
    throw IoError("'" + path + "' is neither PNG nor PPM (P6)");
}

inline void write_image(const std::string& path, const ImageU8& img) {
    const bool ppm = path.size() >= 4 && path.compare(path.size() - 4, 4, ".ppm") == 0;
    if (ppm) img_detail::write_ppm(path, img);
    else img_detail::write_png(path, img);
}

}  // namespace gunet
