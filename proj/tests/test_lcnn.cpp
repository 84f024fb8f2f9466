#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "mfmasc/lcnn.hpp"

using namespace mfmasc;
using T32 = Tensor<float>;

namespace {

LCNNConfig small_cfg(Attention a = Attention::None) {
    LCNNConfig cfg;
    cfg.input_frames = 32;
    cfg.input_bins = 34;
    cfg.channel_plan = {8, 8, 8, 8, 8};
    cfg.attention = a;
    cfg.se_reduction = 4;
    cfg.cbam_kernel = 3;
    return cfg;
}

std::filesystem::path tmp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("default config builds with logits length 10 and channel trace") {
    LCNNConfig cfg;
    const ShapeTrace tr = trace_shapes(cfg);
    CHECK(tr.mfm_channels == std::vector<size_t>{32, 48, 64, 32, 32});
    CHECK(tr.final_channels == 32);
    // frequency chain: 128 -> 126 (Conv_1) -> 63 -> 32 -> 16 -> 8 (ceil pools)
    CHECK(tr.final_freq == 8);
    // time chain: 250 -> 125 -> 63 -> 32 -> 16
    CHECK(tr.final_time == 16);
    CHECK(tr.flatten_dim == 16 * 8 * 32);

    auto m = build_lcnn(cfg, 7);
    auto x = T32::zeros({1, 1, 250, 128});
    auto logits = lcnn_forward(m, x, false);
    CHECK(logits.shape == Shape{1, 10});
    CHECK(logits.all_finite());
}

TEST_CASE("input_frames 16 builds, 15 rejected") {
    LCNNConfig ok = small_cfg();
    ok.input_frames = 16;
    CHECK_NOTHROW(build_lcnn(ok, 1));
    LCNNConfig bad = small_cfg();
    bad.input_frames = 15;
    CHECK_THROWS_AS(build_lcnn(bad, 1), ConfigError);
    LCNNConfig odd = small_cfg();
    odd.channel_plan[2] = 9;
    CHECK_THROWS_AS(build_lcnn(odd, 1), ConfigError);
}

TEST_CASE("builds with equal seed are bit-identical") {
    auto a = build_lcnn(small_cfg(Attention::SeCbam), 42);
    auto b = build_lcnn(small_cfg(Attention::SeCbam), 42);
    auto c = build_lcnn(small_cfg(Attention::SeCbam), 43);
    auto pa = parameters(a), pb = parameters(b), pc = parameters(c);
    REQUIRE(pa.size() == pb.size());
    bool any_diff = false;
    for (size_t i = 0; i < pa.size(); ++i) {
        REQUIRE(pa[i].tensor->numel() == pb[i].tensor->numel());
        for (size_t j = 0; j < pa[i].tensor->numel(); ++j) {
            CHECK((*pa[i].tensor)[j] == (*pb[i].tensor)[j]);
            any_diff |= (*pa[i].tensor)[j] != (*pc[i].tensor)[j];
        }
    }
    CHECK(any_diff);
}

TEST_CASE("batch of 2 equals two batches of 1 in inference mode") {
    std::mt19937 rng(5);
    auto m = build_lcnn(small_cfg(Attention::Cbam), 11);
    auto x = T32::randn({2, 1, 32, 34}, rng);
    auto both = lcnn_forward(m, x, false);

    T32 x0({1, 1, 32, 34}), x1({1, 1, 32, 34});
    std::copy_n(x.ptr(), x0.numel(), x0.ptr());
    std::copy_n(x.ptr() + x0.numel(), x1.numel(), x1.ptr());
    auto y0 = lcnn_forward(m, x0, false);
    auto y1 = lcnn_forward(m, x1, false);
    for (size_t c = 0; c < 10; ++c) {
        CHECK(both[c] == doctest::Approx(y0[c]).epsilon(1e-5));
        CHECK(both[10 + c] == doctest::Approx(y1[c]).epsilon(1e-5));
    }
}

TEST_CASE("inference forward is pure: repeated calls bit-identical") {
    std::mt19937 rng(6);
    auto m = build_lcnn(small_cfg(), 3);
    auto x = T32::randn({1, 1, 32, 34}, rng);
    auto a = lcnn_forward(m, x, false);
    auto b = lcnn_forward(m, x, false);
    for (size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("embed returns the MFM_FC1 output") {
    std::mt19937 rng(7);
    auto m = build_lcnn(small_cfg(), 9);
    auto x = T32::randn({3, 1, 32, 34}, rng);
    auto e = lcnn_embed(m, x);
    CHECK(e.shape == Shape{3, m.cfg.embedding_dim});

    // forward == fc2 applied to embed
    auto logits = lcnn_forward(m, x, false);
    auto manual = linear(e, m.fc2);
    for (size_t i = 0; i < logits.numel(); ++i) CHECK(logits[i] == manual[i]);

    auto e2 = lcnn_embed(m, x);
    for (size_t i = 0; i < e.numel(); ++i) CHECK(e[i] == e2[i]);
}

TEST_CASE("param_count matches Table-style formulas") {
    LCNNConfig cfg;  // default 250x128 plan
    cfg.attention = Attention::Cbam;
    auto m = build_lcnn(cfg, 1);
    const size_t n = param_count(m);
    CHECK(n >= 800000);
    CHECK(n <= 1000000);
    CHECK(n == 818930);  // sum of k_t*k_f*C_in*C_out + C_out etc. over all layers

    // FC_2 alone: 80*10+10
    CHECK(m.fc2.weight.numel() + m.fc2.bias.numel() == 810);

    // count is shape-only: re-seeding does not change it
    auto m2 = build_lcnn(cfg, 999);
    CHECK(param_count(m2) == n);
}

TEST_CASE("save/load round trip is bit-exact") {
    auto path = tmp_file("lcnn_roundtrip.mdl");
    auto m = build_lcnn(small_cfg(Attention::SeCbam), 21);
    std::mt19937 rng(8);
    m.norm_mean = T32::randn({34}, rng);
    m.norm_std = T32::uniform({34}, rng, 0.5f, 2.f);
    save_model(m, path.string());
    auto l = load_model(path.string());
    CHECK(l.cfg.canonical_text() == m.cfg.canonical_text());
    auto sa = state_tensors(m), sb = state_tensors(l);
    REQUIRE(sa.size() == sb.size());
    for (size_t i = 0; i < sa.size(); ++i) {
        CHECK(sa[i].name == sb[i].name);
        REQUIRE(sa[i].tensor->shape == sb[i].tensor->shape);
        for (size_t j = 0; j < sa[i].tensor->numel(); ++j)
            CHECK((*sa[i].tensor)[j] == (*sb[i].tensor)[j]);
    }
    std::filesystem::remove(path);
}

TEST_CASE("corrupted magic is rejected") {
    auto path = tmp_file("lcnn_badmagic.mdl");
    auto m = build_lcnn(small_cfg(), 2);
    save_model(m, path.string());
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("XXXX", 4);
    }
    CHECK_THROWS_AS(load_model(path.string()), FormatError);
    std::filesystem::remove(path);
}

TEST_CASE("truncated file names a byte offset") {
    auto path = tmp_file("lcnn_trunc.mdl");
    auto m = build_lcnn(small_cfg(), 2);
    save_model(m, path.string());
    std::filesystem::resize_file(path, std::filesystem::file_size(path) / 2);
    try {
        load_model(path.string());
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
    }
    std::filesystem::remove(path);
}

TEST_CASE("loader honors the stored config across attention variants") {
    auto path = tmp_file("lcnn_crosscfg.mdl");
    auto m = build_lcnn(small_cfg(Attention::Se), 4);
    save_model(m, path.string());
    auto l = load_model(path.string());
    CHECK(l.cfg.attention == Attention::Se);
    CHECK(l.blocks[0].se.has_value());
    CHECK(!l.blocks[0].cbam.has_value());
    std::filesystem::remove(path);
}

TEST_CASE("one small SGD step on a single example decreases its loss") {
    std::mt19937 rng(12);
    int decreased = 0;
    for (int trial = 0; trial < 10; ++trial) {
        auto m = build_lcnn(small_cfg(trial % 2 ? Attention::Cbam : Attention::None),
                            100 + static_cast<uint64_t>(trial));
        auto x = T32::randn({2, 1, 32, 34}, rng);  // batchnorm needs N*T*F >= 2
        T32 y = T32::zeros({2, 10});
        y[trial % 10] = 1.f;
        y[10 + (trial + 3) % 10] = 1.f;

        auto loss_at = [&](LCNNModel& model) {
            auto logits = lcnn_forward(model, x, true);
            return cross_entropy_soft(logits, y).item();
        };

        auto params = parameters(m);
        Tape<float> tape;
        for (auto& p : params) tape.track(*p.tensor);
        auto logits = lcnn_forward(m, x, true);
        auto loss = cross_entropy_soft(logits, y);
        tape.backward(loss);
        const float before = loss.item();

        const float lr = 1e-4f;
        for (auto& p : params) {
            auto g = tape.grad(*p.tensor);
            for (size_t i = 0; i < g.numel(); ++i) (*p.tensor)[i] -= lr * g[i];
            p.tensor->tape = nullptr;
            p.tensor->node = -1;
        }
        const float after = loss_at(m);
        decreased += after < before;
    }
    CHECK(decreased == 10);
}
