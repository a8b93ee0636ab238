#include <doctest.h>

#include <cmath>
#include <random>

#include "ddipnet/metric_head.hpp"
#include "ddipnet/ops.hpp"

using namespace ddipnet;

namespace {

Tensor64 row(std::vector<double> v, bool rg = false) {
    const std::size_t n = v.size();
    return Tensor64::from_data({1, n}, std::move(v), rg);
}

double norm(const Tensor64& x) {
    double s = 0;
    for (double v : x.data()) s += v * v;
    return std::sqrt(s);
}

Tensor64 random_row(std::size_t n, double sigma, std::mt19937_64& rng) {
    std::normal_distribution<double> d(0, sigma);
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return row(v);
}

// independent scalar evaluation of |r|^2 / (1 + |r|^2) * r / |r|
std::vector<double> squash_oracle(const std::vector<double>& r) {
    double n2 = 0;
    for (double x : r) n2 += x * x;
    std::vector<double> out(r.size(), 0.0);
    if (n2 == 0) return out;
    const double k = n2 / (1 + n2) / std::sqrt(n2);
    for (std::size_t i = 0; i < r.size(); ++i) out[i] = k * r[i];
    return out;
}

}  // namespace

TEST_CASE("project values") {
    auto r = project(row({1, 2}), Tensor64::from_data({2, 2}, {1, 0, 0, 1}));
    CHECK(r.data()[0] == 1.0);
    CHECK(r.data()[1] == 2.0);
    r = project(row({1, 1, 1, 1}), Tensor64::full({4, 2}, 0.5));
    CHECK(r.data()[0] == 2.0);
    CHECK(r.data()[1] == 2.0);
    r = project(row({0, 0, 0}), Tensor64::full({3, 2}, 0.7));
    CHECK(r.data()[0] == 0.0);
    CHECK_THROWS_AS(project(row({1, 2, 3}), Tensor64::full({2, 2}, 1.0)), DimensionError);
}

TEST_CASE("squash exact values") {
    auto z = squash(row({0, 0, 0}));
    for (double v : z.data()) CHECK(v == 0.0);
    auto a = squash(row({1, 0}));
    CHECK(std::fabs(a.data()[0] - 0.5) < 1e-6);
    CHECK(std::fabs(a.data()[1]) < 1e-6);
    auto b = squash(row({3, 4}));
    CHECK(std::fabs(b.data()[0] - 15.0 / 26.0) < 1e-6);
    CHECK(std::fabs(b.data()[1] - 20.0 / 26.0) < 1e-6);
    // float path too
    auto f = squash(Tensor::from_data({1, 2}, {3, 4}));
    CHECK(std::fabs(f.data()[0] - 15.0 / 26.0) < 1e-6);
    CHECK(std::fabs(f.data()[1] - 20.0 / 26.0) < 1e-6);
}

TEST_CASE("squash keeps the direction and maps into the unit ball") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> scale(-4, 4);
    for (int i = 0; i < 1000; ++i) {
        auto r = random_row(1 + i % 7, std::pow(10.0, scale(rng)), rng);
        auto q = squash(r);
        const double nr = norm(r), nq = norm(q);
        REQUIRE(nq < 1.0);
        CHECK(nq == doctest::Approx(nr * nr / (1 + nr * nr)).epsilon(1e-9));
        if (nr > 0) {
            double dot = 0;
            for (std::size_t k = 0; k < r.numel(); ++k) dot += r.data()[k] * q.data()[k];
            CHECK(std::fabs(dot / (nr * nq) - 1.0) < 1e-6);
        }
        const auto o = squash_oracle({r.data().begin(), r.data().end()});
        for (std::size_t k = 0; k < o.size(); ++k) CHECK(std::fabs(q.data()[k] - o[k]) < 1e-12);
    }
}

TEST_CASE("squash norm grows with the input norm") {
    double prev = -1;
    for (double s = 0.0; s < 20; s += 0.25) {
        const double n = norm(squash(row({s * 0.6, s * 0.8})));
        CHECK(n > prev);
        prev = n;
    }
}

TEST_CASE("distance values") {
    CHECK(positive_distance(row({0.3, 0.1}), row({0.3, 0.1})).item() == 0.0);
    CHECK(negative_distance(row({0.3, 0.1}), row({0.3, 0.1})).item() == 0.0);
    CHECK(positive_distance(row({0.5, 0}), row({0, 0.5})).item() == doctest::Approx(std::sqrt(0.5)));
    CHECK(negative_distance(row({0.9, 0}), row({-0.9, 0})).item() == doctest::Approx(1.8));
    CHECK_THROWS_AS(pair_distance(row({1, 2}), row({1, 2, 3})), DimensionError);
}

TEST_CASE("distances between squashed embeddings are symmetric and lie in [0, 2)") {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> scale(-3, 3);
    for (int i = 0; i < 1000; ++i) {
        const std::size_t c = 2 + i % 5;
        auto a = squash(random_row(c, std::pow(10.0, scale(rng)), rng));
        auto b = squash(random_row(c, std::pow(10.0, scale(rng)), rng));
        const double d = pair_distance(a, b).item();
        REQUIRE(d >= 0.0);
        REQUIRE(d < 2.0);
        CHECK(d == pair_distance(b, a).item());
    }
}

TEST_CASE("triplet loss values") {
    const MarginConfig m{0.5};
    auto s = [](double v) { return Tensor64::scalar(v); };
    CHECK(triplet_loss(s(0.2), s(0.9), m).item() == 0.0);
    CHECK(triplet_loss(s(0.4), s(0.4), m).item() == doctest::Approx(0.5));
    CHECK(triplet_loss(s(0.7), s(0.4), m).item() == doctest::Approx(0.8));
    CHECK(triplet_loss(s(0.3), s(0.3), MarginConfig{0.0}).item() == 0.0);
    CHECK_THROWS_AS(triplet_loss(s(0.1), s(0.2), MarginConfig{-0.1}), ConfigError);
    CHECK_THROWS_AS(MarginConfig{NAN}.validate(), ConfigError);
}

TEST_CASE("hinge zero region and gradient zero region coincide") {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(0, 2);
    for (int i = 0; i < 1000; ++i) {
        auto d1 = Tensor64::scalar(u(rng), true), d2 = Tensor64::scalar(u(rng), true);
        const MarginConfig m{u(rng) / 2};
        auto l = triplet_loss(d1, d2, m);
        l.backward();
        const bool inactive = l.item() == 0.0;
        const bool no_grad = d1.grad()[0] == 0.0 && d2.grad()[0] == 0.0;
        CHECK(inactive == no_grad);
        if (!inactive) {
            CHECK(d1.grad()[0] == 1.0);
            CHECK(d2.grad()[0] == -1.0);
        }
    }
}

TEST_CASE("triplet forward degenerate cases") {
    std::mt19937_64 rng(41);
    auto S = Tensor64::from_data({4, 3}, [&] {
        std::vector<double> v(12);
        std::uniform_real_distribution<double> u(-1, 1);
        for (auto& x : v) x = u(rng);
        return v;
    }());
    const auto f1 = row({1, 0.5, 0, 2}), f2 = row({0, 3, 1, 0});
    // F1 == F3: d1 = 0, so the loss vanishes once d2 >= m
    auto out = triplet_forward(f1, f2, f1, S, MarginConfig{0.0});
    CHECK(out.d1.item() == 0.0);
    CHECK(out.loss.item() == 0.0);
    const double d2 = out.d2.item();
    out = triplet_forward(f1, f2, f1, S, MarginConfig{d2 * 0.9});
    CHECK(out.loss.item() == 0.0);
    // all equal: both distances vanish, loss is the margin
    out = triplet_forward(f1, f1, f1, S, MarginConfig{0.5});
    CHECK(out.d1.item() == 0.0);
    CHECK(out.d2.item() == 0.0);
    CHECK(out.loss.item() == doctest::Approx(0.5));
}

TEST_CASE("triplet forward matches the composition of its parts") {
    std::mt19937_64 rng(43);
    for (int i = 0; i < 50; ++i) {
        auto S = Tensor64::from_data({5, 3}, std::vector<double>(15));
        std::uniform_real_distribution<double> u(-1, 1);
        for (auto& x : S.mutable_data()) x = u(rng);
        auto fa = random_row(5, 1, rng), fn = random_row(5, 1, rng), fp = random_row(5, 1, rng);
        const MarginConfig m{0.5};
        const auto out = triplet_forward(fa, fn, fp, S, m);
        auto qa = squash(project(fa, S)), qn = squash(project(fn, S)), qp = squash(project(fp, S));
        const double d1 = pair_distance(qa, qp).item(), d2 = pair_distance(qa, qn).item();
        CHECK(out.d1.item() == doctest::Approx(d1).epsilon(1e-12));
        CHECK(out.d2.item() == doctest::Approx(d2).epsilon(1e-12));
        CHECK(out.loss.item() == doctest::Approx(std::max(0.0, d1 - d2 + 0.5)).epsilon(1e-12));
    }
}
