#pragma once

// End-to-end forward passes: the soft-routed training objective for a batch
// of training pairs, and hard-routed reconstruction of a full image.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "moeisr/coords.hpp"
#include "moeisr/image.hpp"
#include "moeisr/losses.hpp"
#include "moeisr/models.hpp"
#include "moeisr/sampling.hpp"
#include "moeisr/tensor.hpp"

namespace moeisr {

/// Latent state of one LR input: everything computed once per image.
template <typename T>
struct LatentState {
    std::size_t height = 0;
    std::size_t width = 0;
    ad::Tensor<T> latent;      // D×H×W
    ad::Tensor<T> unfolded;    // (H·W)×9D
    ad::Tensor<T> site_scores; // (H·W)×J raw mapper scores
};

template <typename T>
LatentState<T> encode_latent(const ModelParams<T>& params, const Image& lr);

struct TrainingObjective {
    LossWeights loss;
    double tau = 1.0;
    std::vector<double> balance_weights;  // one per expert
    bool gumbel_noise = true;
};

template <typename T>
struct PairForward {
    ad::Tensor<T> pred;        // Q×3
    ad::Tensor<T> target;      // Q×3
    ad::Tensor<T> weights;     // Q×J routing weights actually used
    ad::Tensor<T> site_probs;  // K×J noise-free softmax of the site scores
};

/// Soft-routed prediction for every query of `pair`. `noise` holds one
/// Gumbel row per LR site, shared by all queries bound to that site; it may
/// be undefined (no perturbation).
template <typename T>
PairForward<T> forward_pair(const ModelParams<T>& params, const TrainingPair& pair, double tau,
                            const ad::Tensor<T>& noise);

/// alpha·L1 + beta·L_b over a batch; L_b counts every LR pixel of the batch.
/// Site noise for pair b at `step` is drawn from stream (seed, b).
template <typename T>
LossTerms<T> training_loss(const ModelParams<T>& params, std::span<const TrainingPair> batch,
                           const TrainingObjective& objective, std::uint64_t seed, std::uint64_t step);

struct Reconstruction {
    Image image;                              // clamped to [0,1]
    std::vector<std::size_t> query_experts;   // per output pixel, row-major
    std::vector<std::size_t> site_experts;    // per LR pixel, row-major
    std::size_t lr_height = 0;
    std::size_t lr_width = 0;
};

/// Hard-routed reconstruction of `lr` at out_h × out_w. Queries are
/// decoded in chunks of `chunk` rows to bound memory.
Reconstruction reconstruct(const ModelParams<float>& params, const Image& lr, std::size_t out_h, std::size_t out_w,
                           std::size_t chunk = 16384);

/// Per-expert fraction of `decisions`.
std::vector<double> expert_shares(std::span<const std::size_t> decisions, std::size_t experts);
std::vector<std::size_t> expert_counts(std::span<const std::size_t> decisions, std::size_t experts);

}  // namespace moeisr
