#include "volray/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

namespace volray {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

unsigned char to_byte(double v) {
    v = std::min(1.0, std::max(0.0, v));
    return static_cast<unsigned char>(std::floor(v * 255.0 + 0.5));
}

}  // namespace

void write_png(const Image& image, const std::string& path) {
    if (image.width <= 0 || image.height <= 0)
        throw ImageIOError("write_png: empty image");
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw ImageIOError("write_png: cannot open " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw ImageIOError("write_png: libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw ImageIOError("write_png: encode failed for " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
                 static_cast<png_uint_32>(image.height), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<unsigned char> row(static_cast<std::size_t>(image.width) * 3);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x)
            for (int c = 0; c < 3; ++c)
                row[static_cast<std::size_t>(x) * 3 + static_cast<std::size_t>(c)] =
                    to_byte(image.at(x, y, c));
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw ImageIOError("read_png: cannot open " + path);

    unsigned char sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
        throw ImageIOError("read_png: " + path + " is not a PNG file");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ImageIOError("read_png: libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ImageIOError("read_png: decode failed for " + path);
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    // Normalize anything to 8-bit RGB.
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    Image im = Image::zeros(w, h);
    std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                im.at(x, y, c) =
                    row[static_cast<std::size_t>(x) * 3 + static_cast<std::size_t>(c)] / 255.0;
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return im;
}

void write_raw(const Image& image, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ImageIOError("write_raw: cannot open " + path);
    const std::uint32_t wh[2] = {static_cast<std::uint32_t>(image.width),
                                 static_cast<std::uint32_t>(image.height)};
    out.write(reinterpret_cast<const char*>(wh), sizeof(wh));
    out.write(reinterpret_cast<const char*>(image.data.data()),
              static_cast<std::streamsize>(image.data.size() * sizeof(double)));
    if (!out) throw ImageIOError("write_raw: write failed for " + path);
}

Image read_raw(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageIOError("read_raw: cannot open " + path);
    std::uint32_t wh[2];
    in.read(reinterpret_cast<char*>(wh), sizeof(wh));
    if (!in) throw ImageIOError("read_raw: truncated header in " + path);
    Image im = Image::zeros(static_cast<int>(wh[0]), static_cast<int>(wh[1]));
    in.read(reinterpret_cast<char*>(im.data.data()),
            static_cast<std::streamsize>(im.data.size() * sizeof(double)));
    if (!in) throw ImageIOError("read_raw: truncated data in " + path);
    return im;
}

Image hstack(const Image& left, const Image& right) {
    if (left.height != right.height) throw ImageIOError("hstack: height mismatch");
    Image out = Image::zeros(left.width + right.width, left.height);
    for (int y = 0; y < out.height; ++y) {
        for (int x = 0; x < left.width; ++x)
            for (int c = 0; c < 3; ++c) out.at(x, y, c) = left.at(x, y, c);
        for (int x = 0; x < right.width; ++x)
            for (int c = 0; c < 3; ++c) out.at(left.width + x, y, c) = right.at(x, y, c);
    }
    return out;
}

}  // namespace volray
