#pragma once

// Analytic FLOPs accounting. One multiply-accumulate counts as 2 FLOPs;
// bias adds and activations are folded into that convention. The encoder
// and mapper run once per LR input; decoders run once per output query.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "moeisr/models.hpp"

namespace moeisr {

using FlopCount = std::uint64_t;

FlopCount flops_linear(std::uint64_t in_dim, std::uint64_t out_dim, std::uint64_t n_queries);
FlopCount flops_conv(std::uint64_t c_in, std::uint64_t c_out, std::uint64_t kh, std::uint64_t kw,
                     std::uint64_t output_sites);
FlopCount flops_expert(const ExpertSpec& spec, std::uint64_t n_queries);
FlopCount flops_encoder(const ModelSpec& spec, std::uint64_t lr_h, std::uint64_t lr_w);
FlopCount flops_mapper(const ModelSpec& spec, std::uint64_t lr_h, std::uint64_t lr_w);

struct FlopsReport {
    FlopCount encoder_flops = 0;
    FlopCount mapper_flops = 0;
    // Unfolding gathers neighbours without arithmetic; zero under the MAC
    // convention but kept as its own line.
    FlopCount unfold_flops = 0;
    std::vector<FlopCount> per_expert_flops;
    std::vector<std::uint64_t> per_expert_queries;
    FlopCount decoder_total = 0;
    FlopCount pipeline_total = 0;
    // Every query through the deepest expert, with the same encoder.
    FlopCount baseline_decoder_total = 0;
    FlopCount baseline_total = 0;
    // decoder_total / baseline_decoder_total
    double ratio = 1.0;
    // pipeline_total / baseline_total
    double pipeline_ratio = 1.0;

    /// Decoder fraction of the whole pipeline.
    double decoder_share() const;
    /// `key: value` lines.
    std::string to_text() const;
};

/// Costs of reconstructing an lr_h × lr_w input at h_out × w_out with one
/// expert decision per output pixel.
FlopsReport flops_pipeline(const ModelSpec& spec, std::uint64_t lr_h, std::uint64_t lr_w, std::uint64_t h_out,
                           std::uint64_t w_out, std::span<const std::size_t> decisions);

}  // namespace moeisr
