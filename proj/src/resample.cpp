#include "moeisr/resample.hpp"

#include <algorithm>
#include <cmath>

#include "moeisr/errors.hpp"

namespace moeisr {

double cubic_kernel(double x) {
    constexpr double a = -0.5;
    x = std::abs(x);
    if (x < 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
    return 0.0;
}

std::vector<ResampleTaps> resample_taps(std::size_t in_extent, std::size_t out_extent) {
    if (in_extent == 0 || out_extent == 0) throw UsageError("resample: extents must be positive");
    std::vector<ResampleTaps> taps(out_extent);
    const double ratio = double(in_extent) / double(out_extent);
    const auto last = std::ptrdiff_t(in_extent) - 1;
    for (std::size_t i = 0; i < out_extent; ++i) {
        const double src = (double(i) + 0.5) * ratio - 0.5;
        const double base = std::floor(src);
        for (int t = 0; t < 4; ++t) {
            const double pos = base + (t - 1);
            taps[i].weight[t] = cubic_kernel(src - pos);
            taps[i].index[t] = std::size_t(std::clamp(std::ptrdiff_t(pos), std::ptrdiff_t(0), last));
        }
    }
    return taps;
}

Image bicubic_resize(const Image& img, std::size_t out_h, std::size_t out_w) {
    if (out_h == 0 || out_w == 0) throw UsageError("bicubic_resize: output extents must be >= 1");
    const std::size_t in_h = img.height(), in_w = img.width();
    constexpr std::size_t C = Image::kChannels;
    const auto col_taps = resample_taps(in_w, out_w);
    const auto row_taps = resample_taps(in_h, out_h);

    // Horizontal pass into double precision, then vertical.
    std::vector<double> tmp(in_h * out_w * C, 0.0);
    for (std::size_t y = 0; y < in_h; ++y) {
        for (std::size_t x = 0; x < out_w; ++x) {
            const auto& tp = col_taps[x];
            for (std::size_t c = 0; c < C; ++c) {
                double acc = 0.0;
                for (int t = 0; t < 4; ++t) acc += tp.weight[t] * img.at(y, tp.index[t], c);
                tmp[(y * out_w + x) * C + c] = acc;
            }
        }
    }
    Image out(out_h, out_w);
    for (std::size_t y = 0; y < out_h; ++y) {
        const auto& tp = row_taps[y];
        for (std::size_t x = 0; x < out_w; ++x) {
            for (std::size_t c = 0; c < C; ++c) {
                double acc = 0.0;
                for (int t = 0; t < 4; ++t) acc += tp.weight[t] * tmp[(tp.index[t] * out_w + x) * C + c];
                out.at(y, x, c) = float(std::clamp(acc, 0.0, 1.0));
            }
        }
    }
    return out;
}

}  // namespace moeisr
