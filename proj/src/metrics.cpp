#include "loomweave/metrics.hpp"

namespace loomweave {

PsnrResult psnr(const Tensor& a, const Tensor& b) {
    LW_CHECK(a.same_shape(b), "psnr inputs must share shape");
    LW_CHECK(a.numel() > 0, "psnr inputs must be non-empty");
    double mse = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        double d = a[i] - b[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    PsnrResult r;
    if (mse == 0.0) {
        r.identical = true;
        return r;
    }
    r.db = 10.0 * std::log10(1.0 / mse);
    return r;
}

namespace {
constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

const double* gaussian_window() {
    static double w[kWindow * kWindow];
    static bool built = false;
    if (!built) {
        double sum = 0.0;
        int half = kWindow / 2;
        for (int y = 0; y < kWindow; ++y)
            for (int x = 0; x < kWindow; ++x) {
                double dy = y - half, dx = x - half;
                double v = std::exp(-(dx * dx + dy * dy) / (2.0 * kSigma * kSigma));
                w[y * kWindow + x] = v;
                sum += v;
            }
        for (double& v : w) v /= sum;
        built = true;
    }
    return w;
}
}  // namespace

double ssim(const Tensor& a, const Tensor& b) {
    LW_CHECK(a.same_shape(b), "ssim inputs must share shape");
    LW_CHECK(a.ndim() == 3, "ssim expects HxWxC images");
    int h = a.dim(0), w = a.dim(1), c = a.dim(2);
    LW_CHECK(h >= kWindow && w >= kWindow, "image smaller than the ssim window");
    const double* win = gaussian_window();
    double total = 0.0;
    int64_t count = 0;
    for (int ch = 0; ch < c; ++ch) {
        for (int y0 = 0; y0 + kWindow <= h; ++y0) {
            for (int x0 = 0; x0 + kWindow <= w; ++x0) {
                double mx = 0.0, my = 0.0;
                for (int y = 0; y < kWindow; ++y)
                    for (int x = 0; x < kWindow; ++x) {
                        double g = win[y * kWindow + x];
                        int64_t idx = (static_cast<int64_t>(y0 + y) * w + (x0 + x)) * c + ch;
                        mx += g * a[idx];
                        my += g * b[idx];
                    }
                double vx = 0.0, vy = 0.0, cov = 0.0;
                for (int y = 0; y < kWindow; ++y)
                    for (int x = 0; x < kWindow; ++x) {
                        double g = win[y * kWindow + x];
                        int64_t idx = (static_cast<int64_t>(y0 + y) * w + (x0 + x)) * c + ch;
                        double da = a[idx] - mx, db = b[idx] - my;
                        vx += g * da * da;
                        vy += g * db * db;
                        cov += g * da * db;
                    }
                double num = (2.0 * mx * my + kC1) * (2.0 * cov + kC2);
                double den = (mx * mx + my * my + kC1) * (vx + vy + kC2);
                total += num / den;
                ++count;
            }
        }
    }
    return total / static_cast<double>(count);
}

}  // namespace loomweave
