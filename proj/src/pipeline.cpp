#include "moeisr/pipeline.hpp"

#include <algorithm>

#include "moeisr/errors.hpp"
#include "moeisr/random.hpp"
#include "moeisr/routing.hpp"

namespace moeisr {

template <typename T>
LatentState<T> encode_latent(const ModelParams<T>& params, const Image& lr) {
    LatentState<T> s;
    s.height = lr.height();
    s.width = lr.width();
    s.latent = encode(params, image_to_tensor<T>(lr));
    s.unfolded = ad::unfold3x3(s.latent);
    s.site_scores = ad::channels_last(map_experts(params, s.latent));
    return s;
}

template <typename T>
PairForward<T> forward_pair(const ModelParams<T>& params, const TrainingPair& pair, double tau,
                            const ad::Tensor<T>& noise) {
    const std::size_t q = pair.query_coords.size();
    if (q == 0 || pair.target_rgb.size() != q || pair.query_cells.size() != q) {
        throw UsageError("forward_pair: queries, cells and targets must be non-empty and equal in count");
    }
    const LatentState<T> s = encode_latent(params, pair.lr_patch);

    std::vector<QueryBinding> bindings;
    bindings.reserve(q);
    for (std::size_t i = 0; i < q; ++i) {
        const auto& c = pair.query_coords[i];
        const auto& cell = pair.query_cells[i];
        bindings.push_back(nearest_latent({c[0], c[1]}, s.height, s.width, {cell[0], cell[1]}));
    }
    const auto sites = binding_sites(bindings, s.width);
    const auto features = assemble_query_features(std::span<const QueryBinding>(bindings), s.unfolded, s.height, s.width);
    if (noise.defined() && (noise.rank() != 2 || noise.dim(0) != s.height * s.width)) {
        throw DimensionError("forward_pair: noise must have one row per LR site");
    }
    // One routing sample per site, shared by all of its queries.
    const auto site_weights = gumbel_softmax(s.site_scores, tau, noise);
    const auto weights = ad::gather_rows(site_weights, std::span<const std::size_t>(sites));

    std::vector<T> target;
    target.reserve(q * 3);
    for (const auto& rgb : pair.target_rgb) target.insert(target.end(), rgb.begin(), rgb.end());

    PairForward<T> out;
    out.pred = route_weighted(params, features, weights);
    out.weights = weights;
    out.target = ad::Tensor<T>::from_data({q, 3}, std::move(target));
    out.site_probs = ad::softmax(s.site_scores);
    return out;
}

template <typename T>
LossTerms<T> training_loss(const ModelParams<T>& params, std::span<const TrainingPair> batch,
                           const TrainingObjective& objective, std::uint64_t seed, std::uint64_t step) {
    if (batch.empty()) throw UsageError("training_loss: empty batch");
    const std::size_t j_count = params.experts.size();
    std::vector<ad::Tensor<T>> preds, targets, probs;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        ad::Tensor<T> noise;
        if (objective.gumbel_noise) {
            const Image& lr = batch[b].lr_patch;
            noise = gumbel_noise<T>(lr.height() * lr.width(), j_count, derive_seed(seed, b), step);
        }
        auto f = forward_pair(params, batch[b], objective.tau, noise);
        preds.push_back(f.pred);
        targets.push_back(f.target);
        probs.push_back(f.site_probs);
    }
    std::vector<double> w = objective.balance_weights;
    if (w.empty()) w.assign(j_count, 1.0);
    if (batch.size() == 1) return total_loss(preds[0], targets[0], probs[0], w, objective.loss);
    return total_loss(ad::concat_rows(preds), ad::concat_rows(targets), ad::concat_rows(probs), w, objective.loss);
}

Reconstruction reconstruct(const ModelParams<float>& trained, const Image& lr, std::size_t out_h, std::size_t out_w,
                           std::size_t chunk) {
    if (out_h == 0 || out_w == 0) throw UsageError("reconstruct: output extents must be >= 1");
    const ModelParams<float> params = trained.frozen();
    const LatentState<float> s = encode_latent(params, lr);
    const std::size_t j_count = params.experts.size();

    Reconstruction r;
    r.lr_height = s.height;
    r.lr_width = s.width;
    r.site_experts = argmax_rows(s.site_scores.data(), j_count);
    r.image = Image(out_h, out_w);
    r.query_experts.resize(out_h * out_w);

    const auto bindings = bind_output_grid(out_h, out_w, s.height, s.width);
    chunk = std::max<std::size_t>(chunk, 1);
    auto pixels = r.image.pixels();
    for (std::size_t begin = 0; begin < bindings.size(); begin += chunk) {
        const std::size_t end = std::min(bindings.size(), begin + chunk);
        const std::span<const QueryBinding> part(bindings.data() + begin, end - begin);
        const auto sites = binding_sites(part, s.width);
        const auto features = assemble_query_features(part, s.unfolded, s.height, s.width);
        const auto bound = ad::gather_rows(s.site_scores, std::span<const std::size_t>(sites));
        const HardRouting<float> routed = route_infer(params, features, bound);
        const auto rgb = routed.rgb.data();
        for (std::size_t i = 0; i < part.size(); ++i) {
            r.query_experts[begin + i] = routed.decisions[i];
            for (std::size_t c = 0; c < 3; ++c) pixels[(begin + i) * 3 + c] = std::clamp(rgb[i * 3 + c], 0.0f, 1.0f);
        }
    }
    return r;
}

std::vector<std::size_t> expert_counts(std::span<const std::size_t> decisions, std::size_t experts) {
    std::vector<std::size_t> counts(experts, 0);
    for (std::size_t d : decisions) {
        if (d >= experts) throw UsageError("expert_counts: decision out of range");
        ++counts[d];
    }
    return counts;
}

std::vector<double> expert_shares(std::span<const std::size_t> decisions, std::size_t experts) {
    const auto counts = expert_counts(decisions, experts);
    std::vector<double> shares(experts, 0.0);
    if (decisions.empty()) return shares;
    for (std::size_t j = 0; j < experts; ++j) shares[j] = double(counts[j]) / double(decisions.size());
    return shares;
}

template LatentState<float> encode_latent(const ModelParams<float>&, const Image&);
template LatentState<double> encode_latent(const ModelParams<double>&, const Image&);
template PairForward<float> forward_pair(const ModelParams<float>&, const TrainingPair&, double,
                                         const ad::Tensor<float>&);
template PairForward<double> forward_pair(const ModelParams<double>&, const TrainingPair&, double,
                                          const ad::Tensor<double>&);
template LossTerms<float> training_loss(const ModelParams<float>&, std::span<const TrainingPair>,
                                        const TrainingObjective&, std::uint64_t, std::uint64_t);
template LossTerms<double> training_loss(const ModelParams<double>&, std::span<const TrainingPair>,
                                         const TrainingObjective&, std::uint64_t, std::uint64_t);

}  // namespace moeisr
