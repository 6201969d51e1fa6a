#pragma once

// Query/latent coordinate bookkeeping. Both grids live in [-1,1]² with
// pixel centres at -1 + (2i+1)/extent; only coordinate differences reach
// the decoders.

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "moeisr/tensor.hpp"

namespace moeisr {

struct Coord {
    double y = 0.0;
    double x = 0.0;
};

double pixel_center(std::size_t index, std::size_t extent);

/// Row-major centres of an h_out × w_out grid.
struct CoordGrid {
    std::size_t h_out = 0;
    std::size_t w_out = 0;
    std::vector<Coord> coords;
};

CoordGrid make_coord_grid(std::size_t h_out, std::size_t w_out);

/// A query tied to its nearest latent site.
struct QueryBinding {
    std::size_t row = 0;
    std::size_t col = 0;
    Coord rel;   // query - latent centre
    Coord cell;  // output pixel size in normalized units

    std::size_t site(std::size_t latent_w) const { return row * latent_w + col; }
};

/// Nearest latent centre on a latent_h × latent_w grid; ties go to the
/// smaller index on each axis.
QueryBinding nearest_latent(Coord query, std::size_t latent_h, std::size_t latent_w, Coord cell = {});

std::vector<QueryBinding> bind_queries(std::span<const Coord> queries, std::span<const Coord> cells,
                                       std::size_t latent_h, std::size_t latent_w);

/// Bindings for every pixel of an h_out × w_out reconstruction.
std::vector<QueryBinding> bind_output_grid(std::size_t h_out, std::size_t w_out, std::size_t latent_h,
                                           std::size_t latent_w);

std::vector<std::size_t> binding_sites(std::span<const QueryBinding> bindings, std::size_t latent_w);

/// Q×4 rows [rel_y·H, rel_x·W, cell_h·H, cell_w·W] where H×W is the latent
/// extent, so every entry stays O(1) at any resolution.
template <typename T>
ad::Tensor<T> query_geometry(std::span<const QueryBinding> bindings, std::size_t latent_h,
                             std::size_t latent_w);

/// Decoder input rows: unfolded latent of the bound site followed by the
/// scaled geometry. `unfolded` is (H·W)×(9·D) from ad::unfold3x3.
template <typename T>
ad::Tensor<T> assemble_query_features(std::span<const QueryBinding> bindings, const ad::Tensor<T>& unfolded,
                                      std::size_t latent_h, std::size_t latent_w);

/// Width of a decoder input row for a given latent depth.
constexpr std::size_t decoder_input_dim(std::size_t feat_dim) { return 9 * feat_dim + 4; }

}  // namespace moeisr
