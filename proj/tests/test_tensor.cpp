#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "moeisr/errors.hpp"
#include "moeisr/random.hpp"
#include "moeisr/tensor.hpp"

using namespace moeisr;
using ad::Tensor;
using T64 = Tensor<double>;

namespace {

T64 rand_leaf(ad::Shape shape, std::uint64_t seed, double lo = -1, double hi = 1) {
    Rng rng(seed);
    std::vector<double> v(ad::shape_numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return T64::from_data(std::move(shape), std::move(v), true);
}

// Largest |analytic - numeric| / max(|analytic|, |numeric|, 1e-6) over
// every entry of every leaf.
double fd_error(std::vector<T64> leaves, const std::function<T64()>& f, double eps = 1e-6) {
    const auto grads = ad::backward(f());
    double worst = 0;
    for (auto& leaf : leaves) {
        const auto g = grads.of(leaf).data();
        auto x = leaf.mutable_data();
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double keep = x[i];
            x[i] = keep + eps;
            const double up = f().item();
            x[i] = keep - eps;
            const double down = f().item();
            x[i] = keep;
            const double numeric = (up - down) / (2 * eps);
            const double denom = std::max({std::abs(g[i]), std::abs(numeric), 1e-6});
            worst = std::max(worst, std::abs(g[i] - numeric) / denom);
        }
    }
    return worst;
}

// Weighted sum so every output element gets a distinct upstream gradient.
T64 probe(const T64& y, std::uint64_t seed = 99) {
    Rng rng(seed);
    std::vector<double> w(y.numel());
    for (auto& v : w) v = rng.uniform(-1, 1);
    return ad::sum(ad::mul(y, T64::from_data(y.shape(), w)));
}

}  // namespace

TEST_CASE("construction rejects bad shapes") {
    CHECK_THROWS_AS(T64::from_data({2, 0}, {}), DimensionError);
    CHECK_THROWS_AS(T64::from_data({2, 2}, {1, 2, 3}), DimensionError);
    CHECK(T64::scalar(3).rank() == 0);
    CHECK(T64::scalar(3).item() == 3);
}

TEST_CASE("softmax matches direct evaluation") {
    const auto s = ad::softmax(T64::from_data({2}, {1, 2}));
    CHECK(s.at(0) == doctest::Approx(0.26894).epsilon(1e-4));
    CHECK(s.at(1) == doctest::Approx(0.73106).epsilon(1e-4));
    // Large logits stay finite thanks to max subtraction.
    const auto big = ad::softmax(T64::from_data({1, 3}, {1000, 1001, 1002}));
    double total = 0;
    for (double v : big.data()) {
        CHECK(std::isfinite(v));
        total += v;
    }
    CHECK(total == doctest::Approx(1.0));
}

TEST_CASE("matmul against a triple loop") {
    const auto a = rand_leaf({3, 5}, 1), b = rand_leaf({5, 4}, 2);
    const auto c = ad::matmul(a, b);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 4; ++j) {
            double acc = 0;
            for (std::size_t k = 0; k < 5; ++k) acc += a.at(i * 5 + k) * b.at(k * 4 + j);
            CHECK(c.at(i * 4 + j) == doctest::Approx(acc).epsilon(1e-12));
        }
    }
    CHECK_THROWS_AS(ad::matmul(a, a), DimensionError);
    CHECK(fd_error({a, b}, [&] { return probe(ad::matmul(a, b)); }) < 1e-6);
}

TEST_CASE("conv2d against direct summation") {
    const auto in = rand_leaf({2, 5, 6}, 3), k = rand_leaf({3, 2, 3, 3}, 4), bias = rand_leaf({3}, 5);
    const auto out = ad::conv2d(in, k, bias, 1);
    REQUIRE(out.shape() == ad::Shape{3, 5, 6});
    for (std::size_t o = 0; o < 3; ++o) {
        for (std::size_t y = 0; y < 5; ++y) {
            for (std::size_t x = 0; x < 6; ++x) {
                double acc = bias.at(o);
                for (std::size_t c = 0; c < 2; ++c) {
                    for (int dy = -1; dy <= 1; ++dy) {
                        for (int dx = -1; dx <= 1; ++dx) {
                            const int yy = int(y) + dy, xx = int(x) + dx;
                            if (yy < 0 || yy >= 5 || xx < 0 || xx >= 6) continue;
                            acc += in.at((c * 5 + yy) * 6 + xx) * k.at(((o * 2 + c) * 3 + (dy + 1)) * 3 + (dx + 1));
                        }
                    }
                }
                CHECK(out.at((o * 5 + y) * 6 + x) == doctest::Approx(acc).epsilon(1e-12));
            }
        }
    }
    CHECK(fd_error({in, k, bias}, [&] { return probe(ad::conv2d(in, k, bias, 1)); }) < 1e-6);
    CHECK_THROWS_AS(ad::conv2d(in, rand_leaf({3, 2, 2, 2}, 6), 1), DimensionError);
    CHECK_THROWS_AS(ad::conv2d(in, rand_leaf({3, 3, 3, 3}, 6), 1), DimensionError);
}

TEST_CASE("unfold3x3 neighbour layout") {
    const auto x = rand_leaf({2, 3, 4}, 7);
    const auto u = ad::unfold3x3(x);
    REQUIRE(u.shape() == ad::Shape{12, 18});
    for (std::size_t y = 0; y < 3; ++y) {
        for (std::size_t xx = 0; xx < 4; ++xx) {
            for (int n = 0; n < 9; ++n) {
                const int yy = int(y) + n / 3 - 1, xc = int(xx) + n % 3 - 1;
                for (std::size_t c = 0; c < 2; ++c) {
                    const double expect =
                        (yy < 0 || yy >= 3 || xc < 0 || xc >= 4) ? 0.0 : x.at((c * 3 + yy) * 4 + xc);
                    CHECK(u.at((y * 4 + xx) * 18 + n * 2 + c) == expect);
                }
            }
        }
    }
    CHECK(fd_error({x}, [&] { return probe(ad::unfold3x3(x)); }) < 1e-6);
}

TEST_CASE("elementwise and reduction gradients") {
    const auto a = rand_leaf({3, 4}, 10), b = rand_leaf({3, 4}, 11), s = rand_leaf({}, 12);
    const auto bias = rand_leaf({4}, 13);
    CHECK(fd_error({a, b}, [&] { return probe(ad::add(a, b)); }) < 1e-6);
    CHECK(fd_error({a, b}, [&] { return probe(ad::sub(a, b)); }) < 1e-6);
    CHECK(fd_error({a, b}, [&] { return probe(ad::mul(a, b)); }) < 1e-6);
    CHECK(fd_error({a, s}, [&] { return probe(ad::mul(a, s)); }) < 1e-6);
    CHECK(fd_error({a}, [&] { return probe(ad::relu(a)); }) < 1e-6);
    CHECK(fd_error({a}, [&] { return probe(ad::abs(a)); }) < 1e-6);
    CHECK(fd_error({a}, [&] { return ad::mean(ad::scale(ad::add_scalar(a, 0.5), 3.0)); }) < 1e-6);
    CHECK(fd_error({a}, [&] { return probe(ad::sum_rows(a)); }) < 1e-6);
    CHECK(fd_error({a}, [&] { return probe(ad::softmax(a)); }) < 1e-6);
    CHECK(fd_error({a, bias}, [&] { return probe(ad::add_row_bias(a, bias)); }) < 1e-6);
    CHECK(fd_error({a, b}, [&] { return probe(ad::concat_cols(a, b)); }) < 1e-6);
    CHECK(fd_error({a, b}, [&] { return probe(ad::concat_rows(std::vector<T64>{a, b})); }) < 1e-6);
    CHECK_THROWS_AS(ad::add(a, bias), DimensionError);
}

TEST_CASE("relu and abs have zero derivative at zero") {
    const auto x = T64::from_data({3}, {0.0, -1.0, 2.0}, true);
    const auto g = ad::backward(ad::sum(ad::add(ad::relu(x), ad::abs(x)))).of(x);
    CHECK(g.at(0) == 0.0);
    CHECK(g.at(1) == -1.0);
    CHECK(g.at(2) == 2.0);
}

TEST_CASE("gather_rows accumulates repeated rows") {
    const auto x = rand_leaf({4, 3}, 20);
    const std::vector<std::size_t> idx{1, 1, 3, 0, 1};
    const auto y = ad::gather_rows(x, std::span<const std::size_t>(idx));
    CHECK(y.at(3 * 3 + 2) == x.at(0 * 3 + 2));
    const auto g = ad::backward(ad::sum(y)).of(x);
    CHECK(g.at(1 * 3) == 3.0);
    CHECK(g.at(2 * 3) == 0.0);
    CHECK(fd_error({x}, [&] { return probe(ad::gather_rows(x, std::span<const std::size_t>(idx))); }) < 1e-6);
    const std::vector<std::size_t> bad{4};
    CHECK_THROWS(ad::gather_rows(x, std::span<const std::size_t>(bad)));
}

TEST_CASE("mix is a per-row weighted sum") {
    const auto w = rand_leaf({5, 3}, 30, 0, 1);
    std::vector<T64> v{rand_leaf({5, 2}, 31), rand_leaf({5, 2}, 32), rand_leaf({5, 2}, 33)};
    const auto m = ad::mix(w, v);
    for (std::size_t q = 0; q < 5; ++q) {
        for (std::size_t c = 0; c < 2; ++c) {
            double acc = 0;
            for (std::size_t j = 0; j < 3; ++j) acc += w.at(q * 3 + j) * v[j].at(q * 2 + c);
            CHECK(m.at(q * 2 + c) == doctest::Approx(acc).epsilon(1e-12));
        }
    }
    CHECK(fd_error({w, v[0], v[1], v[2]}, [&] { return probe(ad::mix(w, v)); }) < 1e-6);
}

TEST_CASE("backward contract") {
    const auto a = rand_leaf({2, 2}, 40), unused = rand_leaf({3}, 41);
    CHECK_THROWS_AS(ad::backward(a), UsageError);
    const auto loss = ad::sum(ad::mul(a, a));
    const auto g1 = ad::backward(loss), g2 = ad::backward(loss);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(g1.of(a).at(i) == 2 * a.at(i));
        CHECK(g1.of(a).at(i) == g2.of(a).at(i));
    }
    // Leaves outside the graph get zeros of their own shape.
    CHECK(g1.of(unused).shape() == ad::Shape{3});
    CHECK(g1.of(unused).at(2) == 0.0);
    // Shared subexpressions accumulate.
    const auto shared = ad::add(a, a);
    CHECK(ad::backward(ad::sum(ad::mul(shared, shared))).of(a).at(0) == doctest::Approx(8 * a.at(0)));
}

TEST_CASE("detach and mutable_data") {
    const auto a = rand_leaf({2}, 50);
    const auto y = ad::scale(a, 2.0);
    auto z = y;
    CHECK_THROWS_AS(z.mutable_data(), UsageError);
    CHECK(y.detach().is_leaf());
    CHECK(!y.detach().requires_grad());
}
