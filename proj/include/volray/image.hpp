#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "volray/vec3.hpp"

namespace volray {

struct ImageIOError : std::runtime_error {
    explicit ImageIOError(const std::string& what) : std::runtime_error(what) {}
};

/// Row-major RGB image, doubles in [0, 1].
struct Image {
    int width = 0, height = 0;
    std::vector<double> data;

    static Image zeros(int w, int h) {
        Image im;
        im.width = w;
        im.height = h;
        im.data.assign(static_cast<std::size_t>(w) * h * 3, 0.0);
        return im;
    }

    double at(int x, int y, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * 3 + static_cast<std::size_t>(c)];
    }
    double& at(int x, int y, int c) {
        return data[(static_cast<std::size_t>(y) * width + x) * 3 + static_cast<std::size_t>(c)];
    }
    Vec3 pixel(int x, int y) const { return {at(x, y, 0), at(x, y, 1), at(x, y, 2)}; }
    void set_pixel(int x, int y, const Vec3& rgb) {
        at(x, y, 0) = rgb.x;
        at(x, y, 1) = rgb.y;
        at(x, y, 2) = rgb.z;
    }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }

    bool operator==(const Image&) const = default;
};

/// 8-bit PNG. Values are clamped to [0,1], scaled by 255 and rounded half-up.
void write_png(const Image& image, const std::string& path);
Image read_png(const std::string& path);

/// Raw binary dump (width, height as u32 LE, then f64 LE samples) for
/// metric computation without quantization.
void write_raw(const Image& image, const std::string& path);
Image read_raw(const std::string& path);

/// [left | right] montage, used for side-by-side eval sheets.
Image hstack(const Image& left, const Image& right);

}  // namespace volray
