#pragma once

#include <span>
#include <vector>

#include "moeisr/tensor.hpp"

namespace moeisr {

/// Mean absolute error over every value.
template <typename T>
ad::Tensor<T> l1_loss(const ad::Tensor<T>& pred, const ad::Tensor<T>& target);

/// Σ_j | w_j Σ_k P_kj − K/J | for assignment probabilities P (K×J).
template <typename T>
ad::Tensor<T> balance_loss(const ad::Tensor<T>& probs, std::span<const double> weights);

struct LossWeights {
    double alpha = 3000.0;
    double beta = 1.0;
};

template <typename T>
struct LossTerms {
    ad::Tensor<T> total;
    ad::Tensor<T> l1;
    ad::Tensor<T> balance;
};

/// alpha·L1 + beta·L_b in one graph.
template <typename T>
LossTerms<T> total_loss(const ad::Tensor<T>& pred, const ad::Tensor<T>& target, const ad::Tensor<T>& probs,
                        std::span<const double> balance_weights, const LossWeights& weights);

}  // namespace moeisr
