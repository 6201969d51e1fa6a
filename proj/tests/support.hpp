#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include "moeisr/image.hpp"
#include "moeisr/models.hpp"
#include "moeisr/random.hpp"

namespace testing {

using moeisr::Image;

/// Smooth gradients plus a disc, a dark block and a checker band, so the
/// image has both flat areas and hard edges.
inline Image synthetic_image(std::size_t n) {
    Image img(n, n);
    for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
            const double fy = double(y) / double(n), fx = double(x) / double(n);
            double r = 0.2 + 0.5 * fx, g = 0.3 + 0.4 * fy, b = 0.5 + 0.3 * std::sin(6 * fx);
            const double dx = fx - 0.5, dy = fy - 0.5;
            if (dx * dx + dy * dy < 0.08) {
                r = 0.9;
                g = 0.2;
                b = 0.1;
            }
            if (x > n * 3 / 4 && y < n / 3) {
                r = 0.05;
                g = 0.05;
                b = 0.6;
            }
            if ((x / 8 + y / 8) % 2 == 0 && y > n * 3 / 4) r = g = b = 1.0;
            img.at(y, x, 0) = float(r);
            img.at(y, x, 1) = float(g);
            img.at(y, x, 2) = float(b);
        }
    }
    return img;
}

inline Image random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
    moeisr::Rng rng(seed);
    Image img(h, w);
    for (float& v : img.pixels()) v = float(rng.uniform());
    return img;
}

/// Small model for fast unit tests: D=4, one residual block, 2-layer
/// mapper, experts of width 8 and depths 2..5.
inline moeisr::ModelSpec tiny_spec() {
    moeisr::ModelSpec s;
    s.encoder.feat_dim = 4;
    s.encoder.n_res_blocks = 1;
    s.mapper.n_layers = 2;
    s.mapper.hidden_channels = 4;
    s.expert_hidden = 8;
    s.expert_depths = {2, 3, 4, 5};
    return s;
}

class TempDir {
   public:
    TempDir() {
        static std::uint64_t counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("moeisr-test-" + std::to_string(std::random_device{}()) + "-" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

   private:
    std::filesystem::path path_;
};

}  // namespace testing
