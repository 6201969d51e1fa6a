#include "moeisr/routing.hpp"

#include <algorithm>
#include <cmath>

#include "moeisr/errors.hpp"

namespace moeisr {

double gumbel_from_uniform(double u) {
    u = std::clamp(u, kGumbelClamp, 1.0 - kGumbelClamp);
    return -std::log(-std::log(u));
}

std::vector<double> gumbel_softmax(std::span<const double> scores, double tau, Rng* rng) {
    if (!(tau > 0.0)) throw UsageError("gumbel_softmax: tau must be positive");
    if (scores.empty()) throw DimensionError("gumbel_softmax: empty score vector");
    std::vector<double> z(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const double g = rng ? gumbel_from_uniform(rng->uniform()) : 0.0;
        z[i] = (scores[i] + g) / tau;
    }
    const double peak = *std::max_element(z.begin(), z.end());
    double total = 0.0;
    for (double& v : z) total += (v = std::exp(v - peak));
    for (double& v : z) v /= total;
    return z;
}

template <typename T>
ad::Tensor<T> gumbel_noise(std::size_t queries, std::size_t experts, std::uint64_t seed, std::uint64_t step) {
    std::vector<T> g(queries * experts);
    for (std::size_t q = 0; q < queries; ++q) {
        const std::uint64_t stream = derive_seed(seed, step, q);
        for (std::size_t j = 0; j < experts; ++j) g[q * experts + j] = T(gumbel_from_uniform(to_unit(mix64(stream + j))));
    }
    return ad::Tensor<T>::from_data({queries, experts}, std::move(g));
}

template <typename T>
ad::Tensor<T> gumbel_softmax(const ad::Tensor<T>& scores, double tau, const ad::Tensor<T>& noise) {
    if (!(tau > 0.0)) throw UsageError("gumbel_softmax: tau must be positive");
    ad::Tensor<T> z = noise.defined() ? ad::add(scores, noise) : scores;
    if (tau != 1.0) z = ad::scale(z, T(1.0 / tau));
    return ad::softmax(z);
}

template <typename T>
ad::Tensor<T> route_weighted(const ModelParams<T>& params, const ad::Tensor<T>& features,
                             const ad::Tensor<T>& weights) {
    std::vector<ad::Tensor<T>> outputs;
    outputs.reserve(params.experts.size());
    for (std::size_t j = 0; j < params.experts.size(); ++j) outputs.push_back(expert_forward(params, j, features));
    return ad::mix(weights, outputs);
}

template <typename T>
SoftRouting<T> route_train(const ModelParams<T>& params, const ad::Tensor<T>& features,
                           const ad::Tensor<T>& bound_scores, double tau, const ad::Tensor<T>& noise) {
    SoftRouting<T> r;
    r.weights = gumbel_softmax(bound_scores, tau, noise);
    r.rgb = route_weighted(params, features, r.weights);
    return r;
}

namespace {

template <typename T>
std::vector<std::size_t> argmax_rows_impl(std::span<const T> scores, std::size_t width) {
    if (width == 0 || scores.size() % width != 0) throw DimensionError("argmax_rows: bad row width");
    std::vector<std::size_t> out(scores.size() / width);
    for (std::size_t r = 0; r < out.size(); ++r) {
        const T* row = scores.data() + r * width;
        std::size_t best = 0;
        for (std::size_t j = 1; j < width; ++j)
            if (row[j] > row[best]) best = j;
        out[r] = best;
    }
    return out;
}

}  // namespace

std::vector<std::size_t> argmax_rows(std::span<const float> scores, std::size_t width) {
    return argmax_rows_impl(scores, width);
}

std::vector<std::size_t> argmax_rows(std::span<const double> scores, std::size_t width) {
    return argmax_rows_impl(scores, width);
}

std::size_t ExpertGroups::total() const {
    std::size_t n = 0;
    for (const auto& m : members) n += m.size();
    return n;
}

ExpertGroups group_by_expert(std::span<const std::size_t> decisions, std::size_t experts) {
    ExpertGroups g;
    g.members.resize(experts);
    for (std::size_t q = 0; q < decisions.size(); ++q) {
        if (decisions[q] >= experts) {
            throw UsageError("group_by_expert: decision " + std::to_string(decisions[q]) + " for " +
                             std::to_string(experts) + " experts");
        }
        g.members[decisions[q]].push_back(q);
    }
    return g;
}

template <typename T>
ad::Tensor<T> scatter_rows(const ExpertGroups& groups, const std::vector<ad::Tensor<T>>& parts, std::size_t columns) {
    if (parts.size() != groups.experts()) throw DimensionError("scatter_rows: one part per group required");
    const std::size_t q = groups.total();
    std::vector<T> out(q * columns, T(0));
    for (std::size_t j = 0; j < parts.size(); ++j) {
        const auto& idx = groups.members[j];
        if (idx.empty()) continue;
        if (parts[j].numel() != idx.size() * columns) {
            throw DimensionError("scatter_rows: part " + std::to_string(j) + " has shape " +
                                 ad::shape_str(parts[j].shape()));
        }
        const auto v = parts[j].data();
        for (std::size_t i = 0; i < idx.size(); ++i)
            std::copy_n(v.data() + i * columns, columns, out.data() + idx[i] * columns);
    }
    return ad::Tensor<T>::from_data({q, columns}, std::move(out));
}

template <typename T>
ad::Tensor<T> route_hard(const ModelParams<T>& params, const ad::Tensor<T>& features,
                         std::span<const std::size_t> decisions) {
    if (features.rank() != 2 || features.dim(0) != decisions.size()) {
        throw DimensionError("route_hard: " + std::to_string(decisions.size()) + " decisions for features " +
                             ad::shape_str(features.shape()));
    }
    const ExpertGroups groups = group_by_expert(decisions, params.experts.size());
    std::vector<ad::Tensor<T>> parts(groups.experts());
    for (std::size_t j = 0; j < groups.experts(); ++j) {
        const auto& idx = groups.members[j];
        if (idx.empty()) continue;
        parts[j] = expert_forward(params, j, ad::gather_rows(features, std::span<const std::size_t>(idx))).detach();
    }
    return scatter_rows(groups, parts, 3);
}

template <typename T>
HardRouting<T> route_infer(const ModelParams<T>& params, const ad::Tensor<T>& features,
                           const ad::Tensor<T>& bound_scores) {
    if (bound_scores.rank() != 2 || bound_scores.dim(1) != params.experts.size()) {
        throw DimensionError("route_infer: scores " + ad::shape_str(bound_scores.shape()) + " for " +
                             std::to_string(params.experts.size()) + " experts");
    }
    HardRouting<T> r;
    r.decisions = argmax_rows(bound_scores.data(), bound_scores.dim(1));
    r.rgb = route_hard(params, features, r.decisions);
    return r;
}

#define MOEISR_INSTANTIATE(T)                                                                                   \
    template ad::Tensor<T> gumbel_noise<T>(std::size_t, std::size_t, std::uint64_t, std::uint64_t);              \
    template ad::Tensor<T> gumbel_softmax(const ad::Tensor<T>&, double, const ad::Tensor<T>&);                   \
    template ad::Tensor<T> route_weighted(const ModelParams<T>&, const ad::Tensor<T>&, const ad::Tensor<T>&);    \
    template SoftRouting<T> route_train(const ModelParams<T>&, const ad::Tensor<T>&, const ad::Tensor<T>&,       \
                                        double, const ad::Tensor<T>&);                                           \
    template ad::Tensor<T> scatter_rows(const ExpertGroups&, const std::vector<ad::Tensor<T>>&, std::size_t);    \
    template ad::Tensor<T> route_hard(const ModelParams<T>&, const ad::Tensor<T>&, std::span<const std::size_t>); \
    template HardRouting<T> route_infer(const ModelParams<T>&, const ad::Tensor<T>&, const ad::Tensor<T>&);

MOEISR_INSTANTIATE(float)
MOEISR_INSTANTIATE(double)

#undef MOEISR_INSTANTIATE

}  // namespace moeisr
