#pragma once

#include <cstdint>
#include <vector>

#include "moeisr/models.hpp"
#include "moeisr/tensor.hpp"

namespace moeisr {

struct AdamHyper {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First/second moments per parameter, in ModelParams::named() order.
struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::uint64_t step = 0;
};

/// Bias-corrected Adam update applied in place to `params`.
template <typename T>
void adam_step(std::vector<ad::Tensor<T>>& params, const std::vector<ad::Tensor<T>>& grads, AdamState& state,
               const AdamHyper& hyper);

/// Convenience wrapper over every tensor of a model.
template <typename T>
void adam_step(ModelParams<T>& model, const ad::Gradients<T>& grads, AdamState& state, const AdamHyper& hyper);

}  // namespace moeisr
