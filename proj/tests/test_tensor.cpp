#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "ddipnet/checkpoint.hpp"
#include "ddipnet/ops.hpp"
#include "ddipnet/params.hpp"
#include "gradcheck.hpp"

using namespace ddipnet;
namespace fs = std::filesystem;

namespace {

Tensor t(Shape s, std::vector<float> v, bool rg = false) { return Tensor::from_data(std::move(s), std::move(v), rg); }

std::vector<float> vals(const Tensor& x) { return {x.data().begin(), x.data().end()}; }

fs::path scratch(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("ddipnet_tensor_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

template <class T>
double inner(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += double(a.data()[i]) * double(b.data()[i]);
    return s;
}

}  // namespace

TEST_CASE("tensor construction checks shape against data") {
    CHECK_THROWS_AS(t({2, 2}, {1, 2, 3}), DimensionError);
    CHECK_THROWS_AS(t({}, {}), DimensionError);
    CHECK_THROWS_AS(t({0, 3}, {}), DimensionError);
    auto x = t({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(x.numel() == 6);
    CHECK(x.rank() == 2);
    CHECK(x.all_finite());
    CHECK_FALSE(t({1}, {NAN}).all_finite());
    CHECK_THROWS_AS(x.item(), ContractError);
    CHECK_THROWS_AS(Tensor().shape(), ContractError);
}

TEST_CASE("matmul values") {
    CHECK(vals(matmul(t({1, 2}, {1, 2}), t({2, 2}, {1, 0, 0, 1}))) == std::vector<float>{1, 2});
    CHECK(vals(matmul(t({2, 2}, {1, 2, 3, 4}), Tensor::zeros({2, 2}))) == std::vector<float>{0, 0, 0, 0});
    CHECK_THROWS_AS(matmul(t({1, 2}, {1, 2}), t({3, 1}, {1, 2, 3})), DimensionError);
}

TEST_CASE("conv2d values and shapes") {
    auto ones = Tensor::full({1, 3, 3}, 1.0f);
    auto y = conv2d(ones, t({1, 1, 1, 1}, {2}), 1, 0);
    CHECK(y.shape() == Shape{1, 3, 3});
    CHECK(vals(y) == std::vector<float>(9, 2.0f));
    CHECK(conv2d(Tensor::zeros({1, 4, 4}), Tensor::zeros({1, 1, 3, 3}), 1, 1).shape() == Shape{1, 4, 4});
    CHECK(conv2d(Tensor::zeros({2, 5, 5}), Tensor::zeros({3, 2, 3, 3}), 2, 1).shape() == Shape{3, 3, 3});
    CHECK_THROWS_AS(conv2d(Tensor::zeros({2, 5, 5}), Tensor::zeros({3, 1, 3, 3}), 1, 1), DimensionError);
    CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 2, 2}), Tensor::zeros({1, 1, 3, 3}), 1, 0), DimensionError);
}

TEST_CASE("conv2d_transpose of a unit impulse is the centre of the kernel") {
    std::vector<float> k(16);
    for (int i = 0; i < 16; ++i) k[i] = float(i + 1);
    auto y = conv2d_transpose(Tensor::full({1, 1, 1}, 1.0f), t({1, 1, 4, 4}, k), 2, 1);
    CHECK(y.shape() == Shape{1, 2, 2});
    // brute-force adjoint: output (a, b) receives kernel tap (a + pad, b + pad)
    CHECK(vals(y) == std::vector<float>{k[5], k[6], k[9], k[10]});
}

TEST_CASE("conv2d_transpose of zeros is zero, or the bias") {
    auto k = Tensor::full({2, 3, 4, 4}, 0.7f);
    CHECK(vals(conv2d_transpose(Tensor::zeros({2, 4, 4}), k, 2, 1)) == std::vector<float>(3 * 8 * 8, 0.0f));
    auto y = conv2d_transpose(Tensor::zeros({2, 4, 4}), k, t({3}, {1, 2, 3}), 2, 1);
    CHECK(y.shape() == Shape{3, 8, 8});
    CHECK(y.data()[0] == 1.0f);
    CHECK(y.data()[64] == 2.0f);
    CHECK(y.data()[191] == 3.0f);
}

TEST_CASE("conv2d and conv2d_transpose are adjoint") {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> pick(1, 3);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t cin = pick(rng), cout = pick(rng), k = std::size_t(pick(rng)) + 1;
        const std::size_t stride = std::size_t(pick(rng) % 2 + 1), pad = k > 2 ? std::size_t(pick(rng) % 2) : 0;
        // (h + 2 pad - k) divisible by stride so the transpose lands back on h
        std::size_t h = k + std::size_t(pick(rng)) + 1;
        while ((h + 2 * pad - k) % stride) ++h;
        auto rand = [&](Shape s) {
            return Tensor64::from_data(s, testing::uniform_values(numel(s), -1, 1, rng));
        };
        auto x = rand({cin, h, h});
        auto w = rand({cout, cin, k, k});
        auto cx = conv2d(x, w, stride, pad);
        auto y = rand(cx.shape());
        // conv2d maps cin -> cout with w; its adjoint maps cout -> cin with the same tensor
        auto ty = conv2d_transpose(y, w, stride, pad);
        REQUIRE(ty.shape() == x.shape());
        const double lhs = inner(cx, y), rhs = inner(x, ty);
        CHECK(std::fabs(lhs - rhs) <= 1e-4 * std::max(1.0, std::fabs(lhs)));
    }
}

TEST_CASE("maxpool2d picks window maxima and routes gradient to the first maximum") {
    auto x = t({1, 2, 4}, {1, 5, 2, 2, 3, 4, 2, 0}, true);
    auto y = maxpool2d(x, 2, 2);
    CHECK(vals(y) == std::vector<float>{5, 2});
    sum(y).backward();
    CHECK(vals(Tensor::from_data({8}, {x.grad().begin(), x.grad().end()})) ==
          std::vector<float>{0, 1, 1, 0, 0, 0, 0, 0});
    CHECK_THROWS_AS(maxpool2d(Tensor::zeros({1, 1, 1}), 2, 2), DimensionError);
}

TEST_CASE("elementwise values") {
    CHECK(vals(relu(t({3}, {-1, 0, 2}))) == std::vector<float>{0, 0, 2});
    CHECK(tanh(Tensor::scalar(0.0f)).item() == 0.0f);
    CHECK(vals(leaky_relu(t({2}, {-1, 2}), 0.1f)) == std::vector<float>{-0.1f, 2});
    CHECK(vals(add(t({2}, {1, 2}), t({2}, {3, 4}))) == std::vector<float>{4, 6});
    CHECK(vals(sub(t({2}, {1, 2}), t({2}, {3, 4}))) == std::vector<float>{-2, -2});
    CHECK(vals(mul(t({2}, {1, 2}), t({2}, {3, 4}))) == std::vector<float>{3, 8});
    CHECK(vals(scale(t({2}, {1, 2}), 3.0f)) == std::vector<float>{3, 6});
    CHECK(vals(add_scalar(t({2}, {1, 2}), 0.5f)) == std::vector<float>{1.5f, 2.5f});
    CHECK_THROWS_AS(add(t({2}, {1, 2}), t({3}, {1, 2, 3})), DimensionError);
}

TEST_CASE("relu gradient at exactly zero is zero") {
    auto x = t({3}, {-1, 0, 2}, true);
    sum(relu(x)).backward();
    CHECK(vals(Tensor::from_data({3}, {x.grad().begin(), x.grad().end()})) == std::vector<float>{0, 0, 1});
}

TEST_CASE("reshape and transpose") {
    auto x = t({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(vals(transpose(x)) == std::vector<float>{1, 4, 2, 5, 3, 6});
    CHECK(transpose(x).shape() == Shape{3, 2});
    CHECK(reshape(x, {3, 2}).shape() == Shape{3, 2});
    CHECK_THROWS_AS(reshape(x, {4, 2}), DimensionError);
}

TEST_CASE("l2_norm values and the origin subgradient") {
    CHECK(l2_norm(t({1, 2}, {3, 4})).item() == doctest::Approx(5.0));
    auto z = t({1, 3}, {0, 0, 0}, true);
    auto n = l2_norm(z);
    CHECK(n.item() == 0.0f);
    n.backward();
    CHECK(vals(Tensor::from_data({3}, {z.grad().begin(), z.grad().end()})) == std::vector<float>{0, 0, 0});
}

TEST_CASE("batchnorm2d normalizes per channel") {
    SUBCASE("constant channel maps to beta") {
        auto x = Tensor::full({1, 3, 3}, 4.0f);
        auto y = batchnorm2d(x, Tensor::full({1}, 1.0f), Tensor::zeros({1}), Tensor(), Tensor(), 1e-5f, 0.1f,
                             Mode::train);
        for (float v : y.data()) CHECK(v == 0.0f);
    }
    SUBCASE("batch statistics give mean beta and std gamma") {
        std::mt19937_64 rng(3);
        auto x = Tensor64::from_data({3, 2, 4, 4}, testing::normal_values(96, 2.0, rng));
        auto gamma = Tensor64::from_data({2}, {1.5, 0.5});
        auto beta = Tensor64::from_data({2}, {-1.0, 2.0});
        auto y = batchnorm2d(x, gamma, beta, Tensor64(), Tensor64(), 1e-12, 0.1, Mode::train);
        for (std::size_t c = 0; c < 2; ++c) {
            double m = 0, v = 0;
            for (std::size_t n = 0; n < 3; ++n)
                for (std::size_t i = 0; i < 16; ++i) m += y.data()[(n * 2 + c) * 16 + i];
            m /= 48;
            for (std::size_t n = 0; n < 3; ++n)
                for (std::size_t i = 0; i < 16; ++i) v += std::pow(y.data()[(n * 2 + c) * 16 + i] - m, 2);
            v /= 48;
            CHECK(m == doctest::Approx(beta.data()[c]).epsilon(1e-4));
            CHECK(std::sqrt(v) == doctest::Approx(gamma.data()[c]).epsilon(1e-4));
        }
    }
    SUBCASE("running statistics follow momentum and drive eval mode") {
        auto x = t({1, 1, 2}, {1, 3});
        auto rm = Tensor::zeros({1});
        auto rv = Tensor::full({1}, 1.0f);
        batchnorm2d(x, Tensor::full({1}, 1.0f), Tensor::zeros({1}), rm, rv, 1e-5f, 0.1f, Mode::train);
        CHECK(rm.data()[0] == doctest::Approx(0.2));
        CHECK(rv.data()[0] == doctest::Approx(1.0));  // biased batch variance is 1
        auto y = batchnorm2d(t({1, 1, 1}, {0.2f}), Tensor::full({1}, 2.0f), Tensor::full({1}, 0.5f), rm, rv, 1e-5f,
                             0.1f, Mode::eval);
        CHECK(y.data()[0] == doctest::Approx(0.5));
        CHECK_THROWS_AS(batchnorm2d(x, Tensor::full({1}, 1.0f), Tensor::zeros({1}), Tensor(), Tensor(), 1e-5f, 0.1f,
                                    Mode::eval),
                        ContractError);
    }
}

TEST_CASE("backward on simple losses") {
    auto x = t({2, 2}, {1, -2, 3, 0.5f}, true);
    sum(x).backward();
    for (float g : x.grad()) CHECK(g == 1.0f);
    x.zero_grad();
    sum(mul(x, x)).backward();
    for (std::size_t i = 0; i < 4; ++i) CHECK(x.grad()[i] == doctest::Approx(2 * x.data()[i]));
}

TEST_CASE("leaf gradients accumulate across backward calls; a node shared twice is visited once") {
    auto x = t({1}, {3}, true);
    auto y = mul(x, x);  // y used twice below
    add(y, y).backward();
    CHECK(x.grad()[0] == doctest::Approx(12.0));
    add(y, y).backward();
    CHECK(x.grad()[0] == doctest::Approx(24.0));
}

TEST_CASE("backward contract errors") {
    CHECK_THROWS_AS(t({2}, {1, 2}, true).backward(), ContractError);
    CHECK_THROWS_AS(sum(t({2}, {1, 2})).backward(), ContractError);
    auto x = t({1}, {1}, true);
    auto y = add(x, x);
    CHECK_THROWS_AS(y.set_requires_grad(false), ContractError);
}

TEST_CASE("matmul then tanh chain matches finite differences") {
    auto f = [](auto& x) { return sum(tanh(matmul(x[0], x[1]))); };
    std::mt19937_64 rng(9);
    testing::Instance in;
    in.add({3, 4}, testing::uniform_values(12, -1, 1, rng));
    in.add({4, 2}, testing::uniform_values(8, -1, 1, rng));
    const auto r = testing::grad_check(f, in);
    CHECK_FALSE(r.kink);
    CHECK(r.rel32 < 1e-3);
    CHECK(r.rel64 < 1e-5);
}

TEST_CASE("forward evaluation is bit-deterministic") {
    std::mt19937_64 rng(1);
    auto x = Tensor::from_data({2, 6, 6}, [&] {
        auto v = testing::uniform_values(72, -1, 1, rng);
        return std::vector<float>(v.begin(), v.end());
    }());
    auto k = Tensor::full({3, 2, 3, 3}, 0.1f);
    auto a = conv2d(x, k, 1, 1), b = conv2d(x, k, 1, 1);
    CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST_CASE("param sets") {
    ParamSet ps;
    ps.add("a", Tensor::zeros({2}, true));
    CHECK_THROWS_AS(ps.add("a", Tensor::zeros({1})), ConfigError);
    CHECK_THROWS_AS(ps.at("missing"), ConfigError);
    auto copy = ps.clone(true);
    CHECK(copy.bit_equal(ps));
    copy.at("a").mutable_data()[0] = 1.0f;
    CHECK_FALSE(copy.bit_equal(ps));
    CHECK(ps.element_count() == 2);
}

TEST_CASE("checkpoint round trip is bit exact") {
    const auto dir = scratch("roundtrip");
    Checkpoint c;
    c.meta["kind"] = "test";
    c.tensors.add("w", t({2, 2}, {1.5f, -0.0f, 3.25e-8f, 7}));
    c.tensors.add("b", t({3}, {1, 2, 3}));
    write_checkpoint(dir / "m.manifest", c);
    CHECK(fs::exists(dir / "m.bin"));
    auto r = read_checkpoint(dir / "m.manifest");
    CHECK(r.meta.at("kind") == "test");
    CHECK(r.tensors.bit_equal(c.tensors));

    ParamSet target;
    target.add("w", Tensor::zeros({2, 2}, true));
    restore_params(target, r.tensors, "");
    CHECK(target.at("w").data()[3] == 7.0f);
    CHECK(target.at("w").requires_grad());

    ParamSet wrong;
    wrong.add("w", Tensor::zeros({4}));
    CHECK_THROWS_AS(restore_params(wrong, r.tensors, ""), DimensionError);
}

TEST_CASE("checkpoint errors") {
    const auto dir = scratch("errors");
    CHECK_THROWS_AS(read_checkpoint(dir / "absent.manifest"), IoError);
    {
        std::ofstream(dir / "bad.manifest") << "not a checkpoint\n";
    }
    CHECK_THROWS_AS(read_checkpoint(dir / "bad.manifest"), DataError);
    Checkpoint c;
    c.tensors.add("w", Tensor::zeros({8}));
    write_checkpoint(dir / "short.manifest", c);
    fs::resize_file(dir / "short.bin", 4);
    CHECK_THROWS_AS(read_checkpoint(dir / "short.manifest"), DataError);
}
