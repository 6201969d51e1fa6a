#include "moeisr/losses.hpp"

#include "moeisr/errors.hpp"

namespace moeisr {

template <typename T>
ad::Tensor<T> l1_loss(const ad::Tensor<T>& pred, const ad::Tensor<T>& target) {
    if (pred.shape() != target.shape()) {
        throw UsageError("l1_loss: prediction " + ad::shape_str(pred.shape()) + " vs target " +
                         ad::shape_str(target.shape()));
    }
    return ad::mean(ad::abs(ad::sub(pred, target)));
}

template <typename T>
ad::Tensor<T> balance_loss(const ad::Tensor<T>& probs, std::span<const double> weights) {
    if (probs.rank() != 2 || probs.dim(1) != weights.size()) {
        throw DimensionError("balance_loss: probabilities " + ad::shape_str(probs.shape()) + " for " +
                             std::to_string(weights.size()) + " weights");
    }
    const std::size_t k = probs.dim(0), j = probs.dim(1);
    std::vector<T> w(weights.begin(), weights.end());
    auto usage = ad::mul(ad::sum_rows(probs), ad::Tensor<T>::from_data({j}, std::move(w)));
    return ad::sum(ad::abs(ad::add_scalar(usage, T(-double(k) / double(j)))));
}

template <typename T>
LossTerms<T> total_loss(const ad::Tensor<T>& pred, const ad::Tensor<T>& target, const ad::Tensor<T>& probs,
                        std::span<const double> balance_weights, const LossWeights& weights) {
    LossTerms<T> t;
    t.l1 = l1_loss(pred, target);
    t.balance = balance_loss(probs, balance_weights);
    t.total = ad::add(ad::scale(t.l1, T(weights.alpha)), ad::scale(t.balance, T(weights.beta)));
    return t;
}

template ad::Tensor<float> l1_loss(const ad::Tensor<float>&, const ad::Tensor<float>&);
template ad::Tensor<double> l1_loss(const ad::Tensor<double>&, const ad::Tensor<double>&);
template ad::Tensor<float> balance_loss(const ad::Tensor<float>&, std::span<const double>);
template ad::Tensor<double> balance_loss(const ad::Tensor<double>&, std::span<const double>);
template LossTerms<float> total_loss(const ad::Tensor<float>&, const ad::Tensor<float>&, const ad::Tensor<float>&,
                                     std::span<const double>, const LossWeights&);
template LossTerms<double> total_loss(const ad::Tensor<double>&, const ad::Tensor<double>&,
                                      const ad::Tensor<double>&, std::span<const double>, const LossWeights&);

}  // namespace moeisr
