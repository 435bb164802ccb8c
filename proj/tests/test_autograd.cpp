#include <random>

#include "cardiosynth/autograd.hpp"
#include "doctest.h"
#include "gradcheck.hpp"

using namespace cardiosynth;
using testing_support::gradcheck;
using testing_support::random_tensor;

namespace {

// Contract an op's output with fixed random weights so every element matters.
ag::Var contract(ag::Tape& t, ag::Var out, std::uint64_t seed = 99) {
    std::mt19937_64 rng(seed);
    return ag::sum(ag::mul(out, t.constant(random_tensor(out.shape(), rng))));
}

}  // namespace

TEST_SUITE("autograd") {

TEST_CASE("elementwise ops match finite differences") {
    std::mt19937_64 rng(1);
    const auto a = random_tensor({2, 3, 4}, rng), b = random_tensor({2, 3, 4}, rng);
    auto check = [&](auto op) {
        CHECK(gradcheck([&](ag::Tape& t, const auto& v) { return contract(t, op(v[0], v[1])); }, {a, b}) < 1e-6);
    };
    check([](ag::Var x, ag::Var y) { return ag::add(x, y); });
    check([](ag::Var x, ag::Var y) { return ag::sub(x, y); });
    check([](ag::Var x, ag::Var y) { return ag::mul(x, y); });
    check([](ag::Var x, ag::Var y) { return ag::add(ag::scale(x, 0.3), ag::add_scalar(ag::neg(y), 2.0)); });
    check([](ag::Var x, ag::Var y) { return ag::mul(ag::square(x), ag::exp(y)); });
    check([](ag::Var x, ag::Var) { return ag::tanh(x); });
    check([](ag::Var x, ag::Var) { return ag::leaky_relu(x, 0.2); });
    check([](ag::Var x, ag::Var) { return ag::reshape(x, {4, 6}); });
}

TEST_CASE("reductions") {
    std::mt19937_64 rng(2);
    const auto a = random_tensor({3, 5}, rng), b = random_tensor({3, 5}, rng);
    CHECK(gradcheck([](ag::Tape&, const auto& v) { return ag::mean(ag::square(v[0])); }, {a}) < 1e-6);
    CHECK(gradcheck([](ag::Tape&, const auto& v) { return ag::mean_abs_diff(v[0], v[1]); }, {a, b}) < 1e-6);

    ag::Tape t;
    const auto s = ag::sum(t.constant(Tensor({2, 2}, {1, 2, 3, 4})));
    CHECK(s.value()[0] == 10.0);
    CHECK(ag::mean_abs_diff(t.constant(Tensor({2}, {1, -1})), t.constant(Tensor({2}, {0, 1}))).value()[0] == 1.5);
}

TEST_CASE("convolution gradients") {
    std::mt19937_64 rng(3);
    const auto x = random_tensor({2, 3, 7, 6}, rng);
    SUBCASE("3x3 stride 1 pad 1") {
        const auto w = random_tensor({4, 3, 3, 3}, rng), b = random_tensor({4}, rng);
        CHECK(gradcheck([](ag::Tape& t, const auto& v) { return contract(t, ag::conv2d(v[0], v[1], v[2], 1, 1)); },
                        {x, w, b}) < 1e-6);
    }
    SUBCASE("4x4 stride 2 pad 2") {
        const auto w = random_tensor({2, 3, 4, 4}, rng), b = random_tensor({2}, rng);
        CHECK(gradcheck([](ag::Tape& t, const auto& v) { return contract(t, ag::conv2d(v[0], v[1], v[2], 2, 2)); },
                        {x, w, b}) < 1e-6);
    }
    SUBCASE("1x1 without bias") {
        const auto w = random_tensor({5, 3, 1, 1}, rng);
        CHECK(gradcheck([](ag::Tape& t, const auto& v) { return contract(t, ag::conv2d_nobias(v[0], v[1], 1, 0)); },
                        {x, w}) < 1e-6);
    }
}

TEST_CASE("convolution output size follows (in + 2p - k) / s + 1") {
    ag::Tape t;
    const auto y = ag::conv2d(t.constant(Tensor({1, 2, 64, 64})), t.constant(Tensor({3, 2, 4, 4})),
                              t.constant(Tensor({3})), 2, 2);
    CHECK(y.shape() == Shape{1, 3, 33, 33});
}

TEST_CASE("convolution matches a direct sum") {
    std::mt19937_64 rng(4);
    const auto x = random_tensor({1, 2, 5, 5}, rng), w = random_tensor({1, 2, 3, 3}, rng);
    ag::Tape t;
    const auto y = ag::conv2d(t.constant(x), t.constant(w), t.constant(Tensor({1}, 0.5)), 2, 1);
    REQUIRE(y.shape() == Shape{1, 1, 3, 3});
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) {
            double acc = 0.5;
            for (int ci = 0; ci < 2; ++ci)
                for (int i = 0; i < 3; ++i)
                    for (int j = 0; j < 3; ++j) {
                        const int sr = 2 * r - 1 + i, sc = 2 * c - 1 + j;
                        if (sr >= 0 && sr < 5 && sc >= 0 && sc < 5) acc += x.at(0, ci, sr, sc) * w.at(0, ci, i, j);
                    }
            CHECK(y.value().at(0, 0, r, c) == doctest::Approx(acc).epsilon(1e-12));
        }
}

TEST_CASE("linear, normalisation and resampling gradients") {
    std::mt19937_64 rng(5);
    const auto x2 = random_tensor({3, 4}, rng), w = random_tensor({2, 4}, rng), b = random_tensor({2}, rng);
    CHECK(gradcheck([](ag::Tape& t, const auto& v) { return contract(t, ag::linear(v[0], v[1], v[2])); }, {x2, w, b}) <
          1e-6);

    const auto x = random_tensor({3, 2, 4, 5}, rng, 2.0);
    CHECK(gradcheck([](ag::Tape& t, const auto& v) { return contract(t, ag::batch_norm(v[0], 1e-5)); }, {x}) < 1e-5);
    CHECK(gradcheck([](ag::Tape& t, const auto& v) { return contract(t, ag::instance_norm(v[0], 1e-5)); }, {x}) < 1e-5);
    CHECK(gradcheck([](ag::Tape& t, const auto& v) { return contract(t, ag::fixed_norm(v[0], {0.3, -1}, {2, 0.5}, 1e-5)); },
                    {x}) < 1e-6);
    CHECK(gradcheck([](ag::Tape& t, const auto& v) { return contract(t, ag::upsample_nearest2x(v[0])); }, {x}) < 1e-6);
    CHECK(gradcheck([](ag::Tape& t, const auto& v) { return contract(t, ag::avg_pool2x(v[0])); }, {x}) < 1e-6);
    const auto y = random_tensor({3, 1, 4, 5}, rng);
    CHECK(gradcheck([](ag::Tape& t, const auto& v) { return contract(t, ag::concat_channels(v[0], v[1])); }, {x, y}) <
          1e-6);
    const auto noise = random_tensor({3, 4}, rng);
    CHECK(gradcheck([&](ag::Tape& t, const auto& v) { return contract(t, ag::reparameterize(v[0], v[1], noise)); },
                    {x2, random_tensor({3, 4}, rng, 0.5)}) < 1e-6);
}

TEST_CASE("batch norm uses population variance") {
    ag::Tape t;
    ag::NormStats stats;
    const auto y = ag::batch_norm(t.constant(Tensor({1, 1, 2, 2}, {1, 2, 3, 4})), 1e-5, &stats);
    CHECK(stats.mean[0] == 2.5);
    CHECK(stats.var[0] == 1.25);
    CHECK(y.value()[0] == doctest::Approx(-1.5 / std::sqrt(1.25 + 1e-5)).epsilon(1e-14));
}

TEST_CASE("avg_pool2x drops odd trailing rows") {
    ag::Tape t;
    const auto y = ag::avg_pool2x(t.constant(Tensor({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9})));
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.value()[0] == 3.0);
}

TEST_CASE("constant subgraphs carry no gradient") {
    ag::Tape t;
    const auto c = t.constant(Tensor({2}, 1.0));
    const auto p = t.leaf(Tensor({2}, 2.0), true);
    const auto out = ag::sum(ag::mul(ag::exp(c), p));
    CHECK_FALSE(ag::exp(c).requires_grad());
    t.backward(out);
    CHECK(t.grad(p)[0] == doctest::Approx(std::exp(1.0)));
    CHECK(t.grad(c).empty());
}

TEST_CASE("mixing tapes is rejected") {
    ag::Tape a, b;
    CHECK_THROWS(ag::add(a.constant(Tensor({1})), b.constant(Tensor({1}))));
}

}
