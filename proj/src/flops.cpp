#include "moeisr/flops.hpp"

#include <iomanip>
#include <sstream>

#include "moeisr/errors.hpp"

namespace moeisr {

FlopCount flops_linear(std::uint64_t in_dim, std::uint64_t out_dim, std::uint64_t n_queries) {
    return 2 * in_dim * out_dim * n_queries;
}

FlopCount flops_conv(std::uint64_t c_in, std::uint64_t c_out, std::uint64_t kh, std::uint64_t kw,
                     std::uint64_t output_sites) {
    return 2 * c_in * c_out * kh * kw * output_sites;
}

FlopCount flops_expert(const ExpertSpec& spec, std::uint64_t n_queries) {
    FlopCount total = flops_linear(spec.in_dim, spec.hidden, n_queries);
    for (std::size_t l = 2; l < spec.depth; ++l) total += flops_linear(spec.hidden, spec.hidden, n_queries);
    return total + flops_linear(spec.hidden, spec.out_dim, n_queries);
}

FlopCount flops_encoder(const ModelSpec& spec, std::uint64_t lr_h, std::uint64_t lr_w) {
    const std::uint64_t sites = lr_h * lr_w, d = spec.encoder.feat_dim;
    FlopCount total = flops_conv(3, d, 3, 3, sites);
    total += 2 * spec.encoder.n_res_blocks * flops_conv(d, d, 3, 3, sites);
    return total + flops_conv(d, d, 3, 3, sites);
}

FlopCount flops_mapper(const ModelSpec& spec, std::uint64_t lr_h, std::uint64_t lr_w) {
    const std::uint64_t sites = lr_h * lr_w;
    FlopCount total = 0;
    for (std::size_t l = 0; l < spec.mapper.n_layers; ++l) {
        const std::uint64_t in = l == 0 ? spec.encoder.feat_dim : spec.mapper.hidden_channels;
        const std::uint64_t out = l + 1 == spec.mapper.n_layers ? spec.experts() : spec.mapper.hidden_channels;
        total += flops_conv(in, out, 3, 3, sites);
    }
    return total;
}

double FlopsReport::decoder_share() const {
    return pipeline_total == 0 ? 0.0 : double(decoder_total) / double(pipeline_total);
}

std::string FlopsReport::to_text() const {
    std::ostringstream os;
    os << "encoder_flops: " << encoder_flops << '\n';
    os << "mapper_flops: " << mapper_flops << '\n';
    os << "unfold_flops: " << unfold_flops << '\n';
    for (std::size_t j = 0; j < per_expert_flops.size(); ++j) {
        os << "expert" << j + 1 << "_queries: " << per_expert_queries[j] << '\n';
        os << "expert" << j + 1 << "_flops: " << per_expert_flops[j] << '\n';
    }
    os << "decoder_total: " << decoder_total << '\n';
    os << "pipeline_total: " << pipeline_total << '\n';
    os << "baseline_decoder_total: " << baseline_decoder_total << '\n';
    os << "baseline_total: " << baseline_total << '\n';
    os << std::fixed << std::setprecision(6);
    os << "ratio: " << ratio << '\n';
    os << "pipeline_ratio: " << pipeline_ratio << '\n';
    os << "decoder_share: " << decoder_share() << '\n';
    return os.str();
}

FlopsReport flops_pipeline(const ModelSpec& spec, std::uint64_t lr_h, std::uint64_t lr_w, std::uint64_t h_out,
                           std::uint64_t w_out, std::span<const std::size_t> decisions) {
    if (decisions.size() != h_out * w_out) {
        throw UsageError("flops_pipeline: " + std::to_string(decisions.size()) + " decisions for " +
                         std::to_string(h_out * w_out) + " output pixels");
    }
    const std::size_t j_count = spec.experts();
    FlopsReport r;
    r.encoder_flops = flops_encoder(spec, lr_h, lr_w);
    r.mapper_flops = flops_mapper(spec, lr_h, lr_w);
    r.per_expert_queries.assign(j_count, 0);
    for (std::size_t d : decisions) {
        if (d >= j_count) throw UsageError("flops_pipeline: decision " + std::to_string(d) + " out of range");
        ++r.per_expert_queries[d];
    }
    for (std::size_t j = 0; j < j_count; ++j) {
        r.per_expert_flops.push_back(flops_expert(spec.expert(j), r.per_expert_queries[j]));
        r.decoder_total += r.per_expert_flops.back();
    }
    r.pipeline_total = r.encoder_flops + r.mapper_flops + r.unfold_flops + r.decoder_total;
    r.baseline_decoder_total = flops_expert(spec.expert(j_count - 1), h_out * w_out);
    r.baseline_total = r.encoder_flops + r.unfold_flops + r.baseline_decoder_total;
    r.ratio = r.baseline_decoder_total == 0 ? 1.0 : double(r.decoder_total) / double(r.baseline_decoder_total);
    r.pipeline_ratio = double(r.pipeline_total) / double(r.baseline_total);
    return r;
}

}  // namespace moeisr
