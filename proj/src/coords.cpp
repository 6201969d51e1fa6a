#include "moeisr/coords.hpp"

#include <algorithm>
#include <cmath>

#include "moeisr/errors.hpp"

namespace moeisr {

namespace {

// True when q lies strictly past the midpoint between centres k-1 and k,
// i.e. (q + 1)·n > 2k. fma rounds once, so the sign is exact.
bool past_midpoint(double q, std::size_t k, std::size_t extent) {
    const double n = double(extent);
    return std::fma(q, n, n - 2.0 * double(k)) > 0.0;
}

// Nearest centre along one axis; a query exactly between two centres goes
// to the smaller index.
std::size_t nearest_index(double q, std::size_t extent) {
    const double t = std::floor((q + 1.0) * double(extent) / 2.0);
    std::size_t i = t <= 0.0 ? 0 : std::min(extent - 1, std::size_t(t));
    while (i > 0 && !past_midpoint(q, i, extent)) --i;
    while (i + 1 < extent && past_midpoint(q, i + 1, extent)) ++i;
    return i;
}

}  // namespace

double pixel_center(std::size_t index, std::size_t extent) {
    return -1.0 + (2.0 * double(index) + 1.0) / double(extent);
}

CoordGrid make_coord_grid(std::size_t h_out, std::size_t w_out) {
    if (h_out == 0 || w_out == 0) throw UsageError("make_coord_grid: extents must be >= 1");
    CoordGrid grid{h_out, w_out, {}};
    grid.coords.reserve(h_out * w_out);
    for (std::size_t i = 0; i < h_out; ++i)
        for (std::size_t j = 0; j < w_out; ++j) grid.coords.push_back({pixel_center(i, h_out), pixel_center(j, w_out)});
    return grid;
}

QueryBinding nearest_latent(Coord query, std::size_t latent_h, std::size_t latent_w, Coord cell) {
    if (latent_h == 0 || latent_w == 0) throw UsageError("nearest_latent: empty latent grid");
    QueryBinding b;
    b.row = nearest_index(query.y, latent_h);
    b.col = nearest_index(query.x, latent_w);
    b.rel = {query.y - pixel_center(b.row, latent_h), query.x - pixel_center(b.col, latent_w)};
    b.cell = cell;
    return b;
}

std::vector<QueryBinding> bind_queries(std::span<const Coord> queries, std::span<const Coord> cells,
                                       std::size_t latent_h, std::size_t latent_w) {
    if (queries.size() != cells.size()) throw UsageError("bind_queries: one cell per query required");
    std::vector<QueryBinding> out;
    out.reserve(queries.size());
    for (std::size_t i = 0; i < queries.size(); ++i) out.push_back(nearest_latent(queries[i], latent_h, latent_w, cells[i]));
    return out;
}

std::vector<QueryBinding> bind_output_grid(std::size_t h_out, std::size_t w_out, std::size_t latent_h,
                                           std::size_t latent_w) {
    const CoordGrid grid = make_coord_grid(h_out, w_out);
    const Coord cell{2.0 / double(h_out), 2.0 / double(w_out)};
    std::vector<QueryBinding> out;
    out.reserve(grid.coords.size());
    for (const Coord& c : grid.coords) out.push_back(nearest_latent(c, latent_h, latent_w, cell));
    return out;
}

std::vector<std::size_t> binding_sites(std::span<const QueryBinding> bindings, std::size_t latent_w) {
    std::vector<std::size_t> sites(bindings.size());
    for (std::size_t i = 0; i < bindings.size(); ++i) sites[i] = bindings[i].site(latent_w);
    return sites;
}

template <typename T>
ad::Tensor<T> query_geometry(std::span<const QueryBinding> bindings, std::size_t latent_h,
                             std::size_t latent_w) {
    std::vector<T> rows;
    rows.reserve(bindings.size() * 4);
    const double h = double(latent_h), w = double(latent_w);
    for (const auto& b : bindings) {
        rows.push_back(T(b.rel.y * h));
        rows.push_back(T(b.rel.x * w));
        rows.push_back(T(b.cell.y * h));
        rows.push_back(T(b.cell.x * w));
    }
    return ad::Tensor<T>::from_data({bindings.size(), 4}, std::move(rows));
}

template <typename T>
ad::Tensor<T> assemble_query_features(std::span<const QueryBinding> bindings, const ad::Tensor<T>& unfolded,
                                      std::size_t latent_h, std::size_t latent_w) {
    if (unfolded.rank() != 2 || unfolded.dim(0) != latent_h * latent_w) {
        throw DimensionError("assemble_query_features: unfolded latent " + ad::shape_str(unfolded.shape()) +
                             " does not cover a " + std::to_string(latent_h) + "x" +
                             std::to_string(latent_w) + " grid");
    }
    const auto sites = binding_sites(bindings, latent_w);
    return ad::concat_cols(ad::gather_rows(unfolded, std::span<const std::size_t>(sites)),
                           query_geometry<T>(bindings, latent_h, latent_w));
}

template ad::Tensor<float> query_geometry(std::span<const QueryBinding>, std::size_t, std::size_t);
template ad::Tensor<double> query_geometry(std::span<const QueryBinding>, std::size_t, std::size_t);
template ad::Tensor<float> assemble_query_features(std::span<const QueryBinding>, const ad::Tensor<float>&,
                                                   std::size_t, std::size_t);
template ad::Tensor<double> assemble_query_features(std::span<const QueryBinding>, const ad::Tensor<double>&,
                                                    std::size_t, std::size_t);

}  // namespace moeisr
