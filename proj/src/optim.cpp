#include "moeisr/optim.hpp"

#include <cmath>

#include "moeisr/errors.hpp"

namespace moeisr {

template <typename T>
void adam_step(std::vector<ad::Tensor<T>>& params, const std::vector<ad::Tensor<T>>& grads, AdamState& state,
               const AdamHyper& hyper) {
    if (params.size() != grads.size()) throw UsageError("adam_step: one gradient per parameter required");
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.numel(), 0.0);
            state.v.emplace_back(p.numel(), 0.0);
        }
    }
    if (state.m.size() != params.size()) throw UsageError("adam_step: optimizer state does not match parameters");
    ++state.step;
    const double bc1 = 1.0 - std::pow(hyper.beta1, double(state.step));
    const double bc2 = 1.0 - std::pow(hyper.beta2, double(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].shape() != params[i].shape() || state.m[i].size() != params[i].numel()) {
            throw DimensionError("adam_step: gradient " + ad::shape_str(grads[i].shape()) + " for parameter " +
                                 ad::shape_str(params[i].shape()));
        }
        auto p = params[i].mutable_data();
        const auto g = grads[i].data();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t k = 0; k < p.size(); ++k) {
            const double gk = double(g[k]);
            const double mk = hyper.beta1 * m[k] + (1.0 - hyper.beta1) * gk;
            const double vk = hyper.beta2 * v[k] + (1.0 - hyper.beta2) * gk * gk;
            m[k] = mk;
            v[k] = vk;
            const double m_hat = mk / bc1;
            const double v_hat = vk / bc2;
            p[k] = T(double(p[k]) - hyper.lr * m_hat / (std::sqrt(v_hat) + hyper.eps));
        }
    }
}

template <typename T>
void adam_step(ModelParams<T>& model, const ad::Gradients<T>& grads, AdamState& state, const AdamHyper& hyper) {
    std::vector<ad::Tensor<T>> params;
    std::vector<ad::Tensor<T>> g;
    for (const auto& named : model.named()) {
        params.push_back(named.tensor);
        g.push_back(grads.of(named.tensor));
    }
    adam_step(params, g, state, hyper);
}

template void adam_step(std::vector<ad::Tensor<float>>&, const std::vector<ad::Tensor<float>>&, AdamState&,
                        const AdamHyper&);
template void adam_step(std::vector<ad::Tensor<double>>&, const std::vector<ad::Tensor<double>>&, AdamState&,
                        const AdamHyper&);
template void adam_step(ModelParams<float>&, const ad::Gradients<float>&, AdamState&, const AdamHyper&);
template void adam_step(ModelParams<double>&, const ad::Gradients<double>&, AdamState&, const AdamHyper&);

}  // namespace moeisr
