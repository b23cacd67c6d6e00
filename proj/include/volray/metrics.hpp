#pragma once

#include <stdexcept>

#include "volray/image.hpp"

namespace volray {

struct ImageTooSmall : std::runtime_error {
    ImageTooSmall() : std::runtime_error("ssim needs at least 11 pixels on each side") {}
};

struct MetricReport {
    double psnr = 0.0;
    double ssim = 0.0;
};

/// 10 log10(1 / MSE) for images in [0, 1], capped at 99 dB (zero MSE maps to
/// the cap). Throws ShapeMismatch on differing dimensions.
double psnr(const Image& img, const Image& ref);

/// Mean local SSIM on the luma channel (0.299 R + 0.587 G + 0.114 B):
/// 11x11 Gaussian window, sigma 1.5, C1 = 0.01^2, C2 = 0.03^2, valid region
/// only. Symmetric in its arguments.
double ssim(const Image& img, const Image& ref);

MetricReport compare_images(const Image& img, const Image& ref);

}  // namespace volray
