#include "moeisr/sampling.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "moeisr/errors.hpp"
#include "moeisr/resample.hpp"

namespace moeisr {

std::size_t window_extent(std::size_t patch_size, double scale) {
    return std::size_t(std::lround(double(patch_size) * scale));
}

TrainingPair sample_training_pair(const Image& hr, Rng& rng, const SamplingOptions& options) {
    if (options.patch_size == 0 || options.sample_count == 0) {
        throw UsageError("sample_training_pair: patch size and sample count must be positive");
    }
    if (!(options.scale_min >= 1.0) || options.scale_max < options.scale_min) {
        throw UsageError("sample_training_pair: need 1 <= scale_min <= scale_max");
    }
    const std::size_t largest = window_extent(options.patch_size, options.scale_max);
    if (hr.height() < largest || hr.width() < largest) {
        throw UsageError("sample_training_pair: HR image " + std::to_string(hr.height()) + "x" +
                         std::to_string(hr.width()) + " smaller than the " + std::to_string(largest) +
                         "x" + std::to_string(largest) + " window needed at scale " +
                         std::to_string(options.scale_max));
    }

    TrainingPair pair;
    pair.scale = options.scale_min == options.scale_max
                     ? options.scale_min
                     : rng.uniform(options.scale_min, options.scale_max);
    const std::size_t win = window_extent(options.patch_size, pair.scale);
    pair.window_h = pair.window_w = win;
    const std::size_t top = std::size_t(rng.below(hr.height() - win + 1));
    const std::size_t left = std::size_t(rng.below(hr.width() - win + 1));
    const Image window = hr.crop(top, left, win, win);
    pair.lr_patch = (win == options.patch_size)
                        ? window
                        : bicubic_resize(window, options.patch_size, options.patch_size);

    const std::size_t pixels = win * win;
    std::vector<std::size_t> chosen;
    if (options.sample_count <= pixels) {
        // Partial Fisher-Yates: first sample_count entries are a uniform
        // draw without replacement.
        std::vector<std::size_t> order(pixels);
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t i = 0; i < options.sample_count; ++i) {
            const std::size_t j = i + std::size_t(rng.below(pixels - i));
            std::swap(order[i], order[j]);
        }
        chosen.assign(order.begin(), order.begin() + std::ptrdiff_t(options.sample_count));
    } else {
        chosen.resize(options.sample_count);
        for (auto& c : chosen) c = std::size_t(rng.below(pixels));
    }

    const double cell = 2.0 / double(win);
    pair.query_coords.reserve(chosen.size());
    pair.query_cells.assign(chosen.size(), {cell, cell});
    pair.target_rgb.reserve(chosen.size());
    for (std::size_t idx : chosen) {
        const std::size_t r = idx / win, c = idx % win;
        pair.query_coords.push_back({-1.0 + (2.0 * double(r) + 1.0) / double(win),
                                     -1.0 + (2.0 * double(c) + 1.0) / double(win)});
        pair.target_rgb.push_back({window.at(r, c, 0), window.at(r, c, 1), window.at(r, c, 2)});
    }
    return pair;
}

}  // namespace moeisr
