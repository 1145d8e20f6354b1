#pragma once

#include "avatarfield/appearance.hpp"
#include "avatarfield/body.hpp"
#include "avatarfield/camera.hpp"

namespace avatarfield {

// Mean over mask pixels (mask > 0.5) and channels; both images w*h x 3.
double masked_mse(const Image& a, const Image& b, const Image& mask);
// 10 log10(1 / mse), 99 for identical images.
double masked_psnr(const Image& a, const Image& b, const Image& mask);
// Per-channel SSIM with an 11x11 Gaussian window (sigma 1.5), averaged over
// the mask pixels and channels.
double masked_ssim(const Image& a, const Image& b, const Image& mask);

// Pixels inside the image rectangle spanned by the projected corners of the
// body's vertex box grown by `margin`.
Image box_mask(const Camera& cam, const PosedBody& body, double margin = 0.05);

}  // namespace avatarfield
