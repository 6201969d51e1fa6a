#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "moeisr/image.hpp"
#include "moeisr/random.hpp"

namespace moeisr {

struct SamplingOptions {
    std::size_t patch_size = 48;
    std::size_t sample_count = 2304;
    double scale_min = 1.0;
    double scale_max = 4.0;
};

/// One LR patch plus HR query points in the window's normalized [-1,1]
/// coordinates (pixel centres).
struct TrainingPair {
    Image lr_patch;
    std::vector<std::array<double, 2>> query_coords;  // (y, x)
    std::vector<std::array<double, 2>> query_cells;   // (cell_h, cell_w)
    std::vector<std::array<float, 3>> target_rgb;
    double scale = 1.0;
    std::size_t window_h = 0;
    std::size_t window_w = 0;

    bool operator==(const TrainingPair&) const = default;
};

/// HR window edge for a scale: round(patch_size · scale).
std::size_t window_extent(std::size_t patch_size, double scale);

/// Draws s ~ U[scale_min, scale_max], crops a window_extent(patch, s)
/// square from `hr`, bicubic-downsizes it to patch×patch and samples
/// `sample_count` distinct HR pixel centres as queries (with replacement
/// only when the window has fewer pixels than requested).
TrainingPair sample_training_pair(const Image& hr, Rng& rng, const SamplingOptions& options = {});

}  // namespace moeisr
