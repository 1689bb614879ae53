// Copyright (c) 2026 astain contributors
// SPDX-License-Identifier: Apache-2.0

#include "astain/image.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

namespace astain {

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// skips whitespace and '#' comment lines between PPM header tokens
int next_ppm_int(std::istream& is, const std::string& path) {
    int c = is.get();
    while (c != EOF && (std::isspace(c) || c == '#')) {
        if (c == '#')
            while (c != EOF && c != '\n') c = is.get();
        c = is.get();
    }
    if (c == EOF) throw DatasetError("'" + path + "': truncated PPM header");
    int value = 0;
    bool any = false;
    while (c != EOF && std::isdigit(c)) {
        value = value * 10 + (c - '0');
        any = true;
        c = is.get();
    }
    if (!any) throw DatasetError("'" + path + "': malformed PPM header");
    return value;
}

RgbImage read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DatasetError("cannot open image '" + path + "'");
    char m0 = 0, m1 = 0;
    is.get(m0);
    is.get(m1);
    if (m0 != 'P' || m1 != '6') throw DatasetError("'" + path + "' is not a binary PPM (P6) file");
    const int w = next_ppm_int(is, path);
    const int h = next_ppm_int(is, path);
    const int maxval = next_ppm_int(is, path);
    if (maxval != 255) throw DatasetError("'" + path + "': only 8-bit PPM supported, maxval=" + std::to_string(maxval));
    RgbImage img(h, w);
    is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (static_cast<size_t>(is.gcount()) != img.pixels.size())
        throw DatasetError("'" + path + "': truncated PPM pixel data");
    return img;
}

void write_ppm(const RgbImage& img, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DatasetError("cannot open '" + path + "' for writing");
    os << "P6\n" << img.width << " " << img.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (!os) throw DatasetError("write to '" + path + "' failed");
}

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};

RgbImage read_png(const std::string& path) {
    std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw DatasetError("cannot open image '" + path + "'");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DatasetError("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw DatasetError("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DatasetError("'" + path + "': PNG decode error");
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    // normalize everything to 8-bit RGB
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
        png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    if (png_get_rowbytes(png, info) != static_cast<size_t>(w) * 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DatasetError("'" + path + "': unexpected PNG channel layout");
    }

    RgbImage img(h, w);
    std::vector<png_bytep> rows(static_cast<size_t>(h));
    for (int r = 0; r < h; ++r) rows[static_cast<size_t>(r)] = img.pixels.data() + static_cast<size_t>(r) * w * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void write_png(const RgbImage& img, const std::string& path) {
    std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw DatasetError("cannot open '" + path + "' for writing");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DatasetError("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw DatasetError("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DatasetError("'" + path + "': PNG encode error");
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(static_cast<size_t>(img.height));
    for (int r = 0; r < img.height; ++r)
        rows[static_cast<size_t>(r)] = const_cast<png_bytep>(img.pixels.data() + static_cast<size_t>(r) * img.width * 3);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace

RgbImage read_image(const std::string& path) {
    if (ends_with(path, ".png") || ends_with(path, ".PNG")) return read_png(path);
    if (ends_with(path, ".ppm") || ends_with(path, ".PPM")) return read_ppm(path);
    throw DatasetError("'" + path + "': unsupported image format (use .png or .ppm)");
}

void write_image(const RgbImage& image, const std::string& path) {
    if (ends_with(path, ".png") || ends_with(path, ".PNG")) return write_png(image, path);
    if (ends_with(path, ".ppm") || ends_with(path, ".PPM")) return write_ppm(image, path);
    throw DatasetError("'" + path + "': unsupported image format (use .png or .ppm)");
}

}  // namespace astain
