#pragma once

// Expert routing. Training mixes every expert's output with Gumbel-softmax
// weights of the bound site's scores; inference sends each query to the
// single argmax expert.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "moeisr/models.hpp"
#include "moeisr/random.hpp"
#include "moeisr/tensor.hpp"

namespace moeisr {

/// Uniform draws are clamped to [kGumbelClamp, 1 - kGumbelClamp].
inline constexpr double kGumbelClamp = 1e-12;

double gumbel_from_uniform(double u);

/// softmax((scores + G) / tau). With `rng == nullptr` the noise is zero.
std::vector<double> gumbel_softmax(std::span<const double> scores, double tau, Rng* rng);

/// Q×J Gumbel noise; entry (q, j) depends only on (seed, step, q, j).
template <typename T>
ad::Tensor<T> gumbel_noise(std::size_t queries, std::size_t experts, std::uint64_t seed, std::uint64_t step);

/// Differentiable tempered softmax of (scores + noise) over rows. An
/// undefined `noise` tensor means no noise.
template <typename T>
ad::Tensor<T> gumbel_softmax(const ad::Tensor<T>& scores, double tau, const ad::Tensor<T>& noise);

template <typename T>
struct SoftRouting {
    ad::Tensor<T> rgb;      // Q×3
    ad::Tensor<T> weights;  // Q×J
};

/// Σ_j weights[:, j] · expert_j(features); every expert sees every query.
template <typename T>
ad::Tensor<T> route_weighted(const ModelParams<T>& params, const ad::Tensor<T>& features,
                             const ad::Tensor<T>& weights);

/// Training-time routing. `bound_scores` are the raw mapper scores of each
/// query's bound site (Q×J).
template <typename T>
SoftRouting<T> route_train(const ModelParams<T>& params, const ad::Tensor<T>& features,
                           const ad::Tensor<T>& bound_scores, double tau, const ad::Tensor<T>& noise);

/// Row-wise argmax, ties to the smaller index.
std::vector<std::size_t> argmax_rows(std::span<const float> scores, std::size_t width);
std::vector<std::size_t> argmax_rows(std::span<const double> scores, std::size_t width);

/// Query indices per expert, each list ascending.
struct ExpertGroups {
    std::vector<std::vector<std::size_t>> members;

    std::size_t experts() const { return members.size(); }
    std::size_t total() const;
};

ExpertGroups group_by_expert(std::span<const std::size_t> decisions, std::size_t experts);

/// Inverse of gathering rows by group: rows of `parts[j]` land at
/// `groups.members[j]` in a Q×C result.
template <typename T>
ad::Tensor<T> scatter_rows(const ExpertGroups& groups, const std::vector<ad::Tensor<T>>& parts, std::size_t columns);

template <typename T>
struct HardRouting {
    ad::Tensor<T> rgb;  // Q×3, unclamped
    std::vector<std::size_t> decisions;
};

/// Inference-time routing: each query evaluated by exactly one expert.
template <typename T>
HardRouting<T> route_infer(const ModelParams<T>& params, const ad::Tensor<T>& features,
                           const ad::Tensor<T>& bound_scores);

/// Same, with decisions supplied by the caller.
template <typename T>
ad::Tensor<T> route_hard(const ModelParams<T>& params, const ad::Tensor<T>& features,
                         std::span<const std::size_t> decisions);

}  // namespace moeisr
