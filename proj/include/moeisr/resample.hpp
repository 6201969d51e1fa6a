#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "moeisr/image.hpp"

namespace moeisr {

/// Catmull-Rom cubic convolution kernel (a = -0.5).
double cubic_kernel(double x);

/// Four taps of one output sample along one axis. Indices are already
/// clamped to [0, in_extent).
struct ResampleTaps {
    std::array<std::size_t, 4> index;
    std::array<double, 4> weight;
};

/// Pixel-centre aligned taps: output i samples source (i+0.5)·in/out - 0.5.
std::vector<ResampleTaps> resample_taps(std::size_t in_extent, std::size_t out_extent);

/// Separable bicubic resize with edge clamping; output clamped to [0,1].
Image bicubic_resize(const Image& img, std::size_t out_h, std::size_t out_w);

}  // namespace moeisr
