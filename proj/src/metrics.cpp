#include "volray/metrics.hpp"

#include <cmath>
#include <vector>

#include "volray/field.hpp"  // ShapeMismatch

namespace volray {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::vector<double> gaussian_taps() {
    std::vector<double> g(kWindow);
    double sum = 0.0;
    for (int i = 0; i < kWindow; ++i) {
        const double d = i - (kWindow - 1) / 2.0;
        g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * kSigma * kSigma));
        sum += g[static_cast<std::size_t>(i)];
    }
    for (double& v : g) v /= sum;
    return g;
}

std::vector<double> luma(const Image& im) {
    std::vector<double> out(im.pixel_count());
    for (int y = 0; y < im.height; ++y)
        for (int x = 0; x < im.width; ++x)
            out[static_cast<std::size_t>(y) * im.width + x] =
                0.299 * im.at(x, y, 0) + 0.587 * im.at(x, y, 1) + 0.114 * im.at(x, y, 2);
    return out;
}

/// Separable valid-mode Gaussian filter; output is (w-10) x (h-10).
std::vector<double> filter_valid(const std::vector<double>& in, int w, int h,
                                 const std::vector<double>& taps) {
    const int ow = w - kWindow + 1;
    const int oh = h - kWindow + 1;
    std::vector<double> rows(static_cast<std::size_t>(ow) * h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int k = 0; k < kWindow; ++k)
                acc += taps[static_cast<std::size_t>(k)] *
                       in[static_cast<std::size_t>(y) * w + x + k];
            rows[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    std::vector<double> out(static_cast<std::size_t>(ow) * oh);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int k = 0; k < kWindow; ++k)
                acc += taps[static_cast<std::size_t>(k)] *
                       rows[static_cast<std::size_t>(y + k) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    return out;
}

void check_shapes(const Image& a, const Image& b) {
    if (a.width != b.width || a.height != b.height)
        throw ShapeMismatch("image dimensions differ");
}

}  // namespace

double psnr(const Image& img, const Image& ref) {
    check_shapes(img, ref);
    double se = 0.0;
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        const double d = img.data[i] - ref.data[i];
        se += d * d;
    }
    const double mse = se / static_cast<double>(img.data.size());
    if (mse <= 0.0) return 99.0;
    return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Image& img, const Image& ref) {
    check_shapes(img, ref);
    if (img.width < kWindow || img.height < kWindow) throw ImageTooSmall();

    const std::vector<double> taps = gaussian_taps();
    const std::vector<double> x = luma(img);
    const std::vector<double> y = luma(ref);
    const int w = img.width, h = img.height;

    std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }

    const auto mu_x = filter_valid(x, w, h, taps);
    const auto mu_y = filter_valid(y, w, h, taps);
    const auto m_xx = filter_valid(xx, w, h, taps);
    const auto m_yy = filter_valid(yy, w, h, taps);
    const auto m_xy = filter_valid(xy, w, h, taps);

    double total = 0.0;
    for (std::size_t i = 0; i < mu_x.size(); ++i) {
        const double var_x = m_xx[i] - mu_x[i] * mu_x[i];
        const double var_y = m_yy[i] - mu_y[i] * mu_y[i];
        const double cov = m_xy[i] - mu_x[i] * mu_y[i];
        // products grouped so the value is bitwise symmetric in (img, ref)
        const double num = (2.0 * (mu_x[i] * mu_y[i]) + kC1) * (2.0 * cov + kC2);
        const double den = (mu_x[i] * mu_x[i] + mu_y[i] * mu_y[i] + kC1) * (var_x + var_y + kC2);
        total += num / den;
    }
    return total / static_cast<double>(mu_x.size());
}

MetricReport compare_images(const Image& img, const Image& ref) {
    return {psnr(img, ref), ssim(img, ref)};
}

}  // namespace volray
