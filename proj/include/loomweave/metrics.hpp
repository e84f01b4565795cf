#pragma once

#include "loomweave/tensor.hpp"

namespace loomweave {

/// 10*log10(1/MSE) on [0,1] images; MSE = 0 is the "identical" sentinel.
struct PsnrResult {
    bool identical = false;
    double db = 0.0;
};
PsnrResult psnr(const Tensor& a, const Tensor& b);

/// Windowed SSIM: 11x11 Gaussian (sigma 1.5), C1=(0.01)^2, C2=(0.03)^2 for
/// dynamic range 1, valid windows only, averaged over channels and windows.
double ssim(const Tensor& a, const Tensor& b);

}  // namespace loomweave
