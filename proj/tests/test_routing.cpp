#include <cmath>

#include "doctest.h"
#include "moeisr/errors.hpp"
#include "moeisr/routing.hpp"
#include "support.hpp"

using namespace moeisr;
using T64 = ad::Tensor<double>;

namespace {

T64 random_rows(std::size_t q, std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(q * n);
    for (auto& x : v) x = rng.uniform(-1, 1);
    return T64::from_data({q, n}, std::move(v));
}

}  // namespace

TEST_CASE("gumbel softmax without noise is a tempered softmax") {
    const std::vector<double> s{1, 2};
    const auto p = gumbel_softmax(std::span<const double>(s), 1.0, nullptr);
    CHECK(p[0] == doctest::Approx(0.26894).epsilon(1e-4));
    CHECK(p[1] == doctest::Approx(0.73106).epsilon(1e-4));
    const auto hot = gumbel_softmax(std::span<const double>(s), 0.5, nullptr);
    CHECK(hot[1] == doctest::Approx(std::exp(4.0) / (std::exp(2.0) + std::exp(4.0))));
    CHECK_THROWS_AS(gumbel_softmax(std::span<const double>(s), 0.0, nullptr), UsageError);

    const auto t = gumbel_softmax(T64::from_data({1, 2}, {1, 2}), 1.0, T64());
    CHECK(t.at(1) == doctest::Approx(0.73106).epsilon(1e-4));
}

TEST_CASE("gumbel noise is finite, seeded and counter based") {
    CHECK(std::isfinite(gumbel_from_uniform(0.0)));
    CHECK(std::isfinite(gumbel_from_uniform(1.0)));
    CHECK(gumbel_from_uniform(std::exp(-1.0)) == doctest::Approx(0.0).epsilon(1e-12));
    const auto a = gumbel_noise<double>(50, 4, 7, 3), b = gumbel_noise<double>(50, 4, 7, 3);
    const auto c = gumbel_noise<double>(50, 4, 7, 4);
    const auto first = gumbel_noise<double>(10, 4, 7, 3);
    bool differs = false;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        CHECK(a.at(i) == b.at(i));
        differs = differs || a.at(i) != c.at(i);
    }
    CHECK(differs);
    // Entry (q, j) does not depend on how many queries were drawn.
    for (std::size_t i = 0; i < first.numel(); ++i) CHECK(first.at(i) == a.at(i));
}

TEST_CASE("gumbel samples follow the softmax distribution") {
    // Gumbel-max: argmax(s + G) ~ softmax(s).
    const std::vector<double> s{0.0, 1.0, -0.5};
    const auto noise = gumbel_noise<double>(20000, 3, 1, 0);
    std::vector<double> counts(3, 0);
    for (std::size_t q = 0; q < 20000; ++q) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < 3; ++j) {
            if (s[j] + noise.at(q * 3 + j) > s[best] + noise.at(q * 3 + best)) best = j;
        }
        counts[best] += 1;
    }
    const auto p = gumbel_softmax(std::span<const double>(s), 1.0, nullptr);
    for (std::size_t j = 0; j < 3; ++j) CHECK(counts[j] / 20000 == doctest::Approx(p[j]).epsilon(0.05));
}

TEST_CASE("argmax ties to the smaller index") {
    const std::vector<double> s{1, 3, 3, 0, 5, 5, 5, 5, -1, -2, -3, -1};
    CHECK(argmax_rows(std::span<const double>(s), 4) == std::vector<std::size_t>{1, 0, 0});
}

TEST_CASE("grouping and scattering restore query order") {
    const std::vector<std::size_t> d{2, 0, 2, 1, 0};
    const auto g = group_by_expert(d, 3);
    CHECK(g.total() == 5);
    CHECK(g.members[0] == std::vector<std::size_t>{1, 4});
    CHECK(g.members[2] == std::vector<std::size_t>{0, 2});
    std::vector<T64> parts{T64::from_data({2, 1}, {10, 40}), T64::from_data({1, 1}, {30}),
                           T64::from_data({2, 1}, {0, 20})};
    const auto out = scatter_rows(g, parts, 1);
    for (std::size_t i = 0; i < 5; ++i) CHECK(out.at(i) == double(i * 10));
    const std::vector<std::size_t> bad{3};
    CHECK_THROWS_AS(group_by_expert(bad, 3), UsageError);
}

TEST_CASE("hard routing equals soft routing with one-hot weights") {
    const auto spec = testing::tiny_spec();
    const auto p = ModelParams<double>::init(spec, 2);
    const auto x = random_rows(200, spec.decoder_in_dim(), 3);
    const auto scores = random_rows(200, spec.experts(), 4);
    const auto hard = route_infer(p, x, scores);
    CHECK(hard.decisions == argmax_rows(scores.data(), spec.experts()));
    std::vector<double> onehot(200 * spec.experts(), 0.0);
    for (std::size_t q = 0; q < 200; ++q) onehot[q * spec.experts() + hard.decisions[q]] = 1.0;
    const auto soft = route_weighted(p, x, T64::from_data({200, spec.experts()}, onehot));
    for (std::size_t i = 0; i < soft.numel(); ++i) CHECK(std::abs(soft.at(i) - hard.rgb.at(i)) < 1e-12);
}

TEST_CASE("route_train weights are the gumbel softmax of the bound scores") {
    const auto spec = testing::tiny_spec();
    const auto p = ModelParams<double>::init(spec, 2);
    const auto x = random_rows(6, spec.decoder_in_dim(), 5);
    const auto scores = random_rows(6, spec.experts(), 6);
    const auto noise = gumbel_noise<double>(6, spec.experts(), 1, 0);
    const auto r = route_train(p, x, scores, 2.0, noise);
    for (std::size_t q = 0; q < 6; ++q) {
        std::vector<double> z(spec.experts());
        double total = 0;
        for (std::size_t j = 0; j < z.size(); ++j) {
            z[j] = std::exp((scores.at(q * 4 + j) + noise.at(q * 4 + j)) / 2.0);
            total += z[j];
        }
        for (std::size_t j = 0; j < z.size(); ++j) CHECK(r.weights.at(q * 4 + j) == doctest::Approx(z[j] / total));
    }
}

TEST_CASE("one-hot mapper without balance: unselected experts get no gradient") {
    const auto spec = testing::tiny_spec();
    const auto p = ModelParams<double>::init(spec, 9);
    const auto x = random_rows(20, spec.decoder_in_dim(), 7);
    std::vector<double> w(20 * 4, 0.0);
    for (std::size_t q = 0; q < 20; ++q) w[q * 4 + (q % 2 ? 1 : 3)] = 1.0;
    const auto pred = route_weighted(p, x, T64::from_data({20, 4}, w));
    const auto grads = ad::backward(ad::mean(ad::abs(pred)));
    for (const auto& l : p.experts[0]) {
        for (double g : grads.of(l.weight).data()) CHECK(g == 0.0);
    }
    for (const auto& l : p.experts[2]) {
        for (double g : grads.of(l.weight).data()) CHECK(g == 0.0);
    }
    double touched = 0;
    for (double g : grads.of(p.experts[3][0].weight).data()) touched += std::abs(g);
    CHECK(touched > 0);
}
