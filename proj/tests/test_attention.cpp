#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "mfmasc/attention.hpp"

using namespace mfmasc;

using T32 = Tensor<float>;
using T64 = Tensor<double>;

namespace {

template <typename T>
void zero_linear(LinearParams<T>& p) {
    std::fill(p.weight.data->begin(), p.weight.data->end(), T(0));
    std::fill(p.bias.data->begin(), p.bias.data->end(), T(0));
}

}  // namespace

TEST_CASE("se_block with zero weights halves the input") {
    std::mt19937 rng(1);
    auto p = make_se<float>(8, 4, rng);
    zero_linear(p.fc1);
    zero_linear(p.fc2);
    auto x = T32::randn({2, 8, 3, 4}, rng);
    auto y = se_block(x, p);
    REQUIRE(y.shape == x.shape);
    for (size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == doctest::Approx(0.5f * x[i]));
}

TEST_CASE("se_block of zero input is zero") {
    std::mt19937 rng(2);
    auto p = make_se<float>(4, 4, rng);
    auto y = se_block(T32::zeros({1, 4, 2, 2}), p);
    for (size_t i = 0; i < y.numel(); ++i) CHECK(y[i] == 0.f);
}

TEST_CASE("se_block equals straight-line composition oracle") {
    std::mt19937 rng(3);
    auto p = make_se<double>(8, 4, rng);
    auto x = T64::randn({2, 8, 3, 5}, rng);
    auto y = se_block(x, p);

    // oracle: reduce-mean, two matmuls (weight transposed by hand), sigmoid,
    // broadcast multiply
    const size_t N = 2, C = 8, R = 2, plane = 15;
    for (size_t n = 0; n < N; ++n) {
        std::vector<double> avg(C, 0.0);
        for (size_t c = 0; c < C; ++c) {
            for (size_t i = 0; i < plane; ++i) avg[c] += x[(n * C + c) * plane + i];
            avg[c] /= plane;
        }
        std::vector<double> h(R, 0.0);
        for (size_t r = 0; r < R; ++r) {
            double acc = p.fc1.bias[r];
            for (size_t c = 0; c < C; ++c) acc += p.fc1.weight[r * C + c] * avg[c];
            h[r] = std::max(acc, 0.0);
        }
        for (size_t c = 0; c < C; ++c) {
            double acc = p.fc2.bias[c];
            for (size_t r = 0; r < R; ++r) acc += p.fc2.weight[c * R + r] * h[r];
            const double s = 1.0 / (1.0 + std::exp(-acc));
            for (size_t i = 0; i < plane; ++i)
                CHECK(y[(n * C + c) * plane + i] ==
                      doctest::Approx(x[(n * C + c) * plane + i] * s).epsilon(1e-5));
        }
    }
}

TEST_CASE("se_block channel mismatch rejected; gates strictly in (0,1)") {
    std::mt19937 rng(4);
    auto p = make_se<float>(8, 4, rng);
    CHECK_THROWS_AS(se_block(T32::zeros({1, 6, 2, 2}), p), ContractViolation);

    auto x = T32::randn({2, 8, 3, 3}, rng);
    auto y = se_block(x, p);
    for (size_t i = 0; i < x.numel(); ++i) {
        if (x[i] == 0.f) continue;
        const float gate = y[i] / x[i];
        CHECK(gate > 0.f);
        CHECK(gate < 1.f);
    }
}

TEST_CASE("cbam_channel zero MLP halves input; constant channels double the MLP") {
    std::mt19937 rng(5);
    auto p = make_cbam<double>(4, 4, 7, rng);
    auto x = T64::randn({2, 4, 3, 3}, rng);
    {
        auto q = p;
        q.mlp1 = make_linear<double>(1, 4, rng);
        q.mlp2 = make_linear<double>(4, 1, rng);
        zero_linear(q.mlp1);
        zero_linear(q.mlp2);
        auto y = cbam_channel(x, q);
        for (size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == doctest::Approx(0.5 * x[i]));
    }
    {
        // constant per channel -> avg and max pools coincide -> gate sigma(2 MLP(pool))
        T64 cx({1, 4, 2, 2});
        for (size_t c = 0; c < 4; ++c)
            for (size_t i = 0; i < 4; ++i) cx[c * 4 + i] = 0.3 * (c + 1);
        auto y = cbam_channel(cx, p);
        std::vector<double> pool = {0.3, 0.6, 0.9, 1.2};
        std::vector<double> h(1, 0.0);
        double acc = p.mlp1.bias[0];
        for (size_t c = 0; c < 4; ++c) acc += p.mlp1.weight[c] * pool[c];
        h[0] = std::max(acc, 0.0);
        for (size_t c = 0; c < 4; ++c) {
            const double mlp = p.mlp2.bias[c] + p.mlp2.weight[c] * h[0];
            const double gate = 1.0 / (1.0 + std::exp(-2.0 * mlp));
            for (size_t i = 0; i < 4; ++i)
                CHECK(y[c * 4 + i] == doctest::Approx(cx[c * 4 + i] * gate).epsilon(1e-9));
        }
    }
}

TEST_CASE("cbam_spatial zero conv halves input; shape preserved incl. T=1") {
    std::mt19937 rng(6);
    auto p = make_cbam<float>(4, 4, 7, rng);
    std::fill(p.spatial.weight.data->begin(), p.spatial.weight.data->end(), 0.f);
    std::fill(p.spatial.bias.data->begin(), p.spatial.bias.data->end(), 0.f);
    auto x = T32::randn({2, 4, 3, 5}, rng);
    auto y = cbam_spatial(x, p);
    for (size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == doctest::Approx(0.5f * x[i]));

    auto q = make_cbam<float>(4, 4, 7, rng);
    for (auto shape : {Shape{1, 4, 1, 5}, Shape{1, 4, 7, 1}, Shape{2, 4, 31, 16}}) {
        auto xs = T32::randn(shape, rng);
        CHECK(cbam_spatial(xs, q).shape == shape);
        CHECK(cbam(xs, q).shape == shape);
        CHECK(se_block(xs, make_se<float>(4, 4, rng)).shape == shape);
    }
}

TEST_CASE("cbam_spatial attention responds to channel-pooled saliency") {
    std::mt19937 rng(7);
    auto p = make_cbam<float>(4, 4, 3, rng);
    T32 x = T32::full({1, 4, 5, 5}, 0.1f);
    for (size_t c = 0; c < 4; ++c) x[(c * 5 + 2) * 5 + 2] = 5.f;  // dominant position
    auto y = cbam_spatial(x, p);
    const float gate_dom = y[2 * 5 + 2] / x[2 * 5 + 2];
    const float gate_corner = y[0] / x[0];
    CHECK(gate_dom != doctest::Approx(gate_corner).epsilon(1e-6));
}

TEST_CASE("cbam equals manual composition of its two sub-ops") {
    std::mt19937 rng(8);
    auto p = make_cbam<double>(8, 4, 7, rng);
    auto x = T64::randn({2, 8, 4, 6}, rng);
    auto a = cbam(x, p);
    auto b = cbam_spatial(cbam_channel(x, p), p);
    for (size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("cbam with all-zero params quarters the input; zero input stays zero") {
    std::mt19937 rng(9);
    auto p = make_cbam<double>(4, 4, 7, rng);
    zero_linear(p.mlp1);
    zero_linear(p.mlp2);
    std::fill(p.spatial.weight.data->begin(), p.spatial.weight.data->end(), 0.0);
    std::fill(p.spatial.bias.data->begin(), p.spatial.bias.data->end(), 0.0);
    auto x = T64::randn({1, 4, 3, 3}, rng);
    auto y = cbam(x, p);
    for (size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == doctest::Approx(0.25 * x[i]));

    auto z = cbam(T64::zeros({1, 4, 2, 2}), make_cbam<double>(4, 4, 7, rng));
    for (size_t i = 0; i < z.numel(); ++i) CHECK(z[i] == 0.0);
}

TEST_CASE("bypass mode is the identity") {
    std::mt19937 rng(10);
    auto se = make_se<float>(8, 4, rng);
    auto cb = make_cbam<float>(8, 4, 7, rng);
    se.bypass = true;
    cb.bypass = true;
    auto x = T32::randn({2, 8, 3, 3}, rng);
    auto a = se_block(x, se);
    auto b = cbam(x, cb);
    for (size_t i = 0; i < x.numel(); ++i) {
        CHECK(a[i] == x[i]);
        CHECK(b[i] == x[i]);
    }
}

TEST_CASE("attention parameter gradient checks") {
    std::mt19937 rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        auto x = T64::randn({2, 4, 3, 3}, rng);
        auto w = T64::randn({2, 4, 3, 3}, rng);
        auto se = make_se<double>(4, 2, rng);
        auto cb = make_cbam<double>(4, 2, 3, rng);

        auto fse_x = [&](const T64& t) { return sum_all(mul(se_block(t, se), w)); };
        CHECK(finite_diff_check<double>(fse_x, x, 1e-6) < 1e-6);

        auto fse_w1 = [&](const T64& v) {
            auto q = se;
            q.fc1.weight = v;
            return sum_all(mul(se_block(x, q), w));
        };
        CHECK(finite_diff_check<double>(fse_w1, se.fc1.weight, 1e-6) < 1e-6);
        auto fse_w2 = [&](const T64& v) {
            auto q = se;
            q.fc2.weight = v;
            return sum_all(mul(se_block(x, q), w));
        };
        CHECK(finite_diff_check<double>(fse_w2, se.fc2.weight, 1e-6) < 1e-6);

        auto fcb_x = [&](const T64& t) { return sum_all(mul(cbam(t, cb), w)); };
        CHECK(finite_diff_check<double>(fcb_x, x, 1e-6) < 1e-6);
        auto fcb_m1 = [&](const T64& v) {
            auto q = cb;
            q.mlp1.weight = v;
            return sum_all(mul(cbam(x, q), w));
        };
        CHECK(finite_diff_check<double>(fcb_m1, cb.mlp1.weight, 1e-6) < 1e-6);
        auto fcb_sp = [&](const T64& v) {
            auto q = cb;
            q.spatial.weight = v;
            return sum_all(mul(cbam(x, q), w));
        };
        CHECK(finite_diff_check<double>(fcb_sp, cb.spatial.weight, 1e-6) < 1e-6);
    }
}
