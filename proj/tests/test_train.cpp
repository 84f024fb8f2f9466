#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>
#include <sstream>

#include "mfmasc/train.hpp"

using namespace mfmasc;
using T32 = Tensor<float>;

namespace {

LCNNConfig tiny_cfg() {
    LCNNConfig cfg;
    cfg.input_frames = 32;
    cfg.input_bins = 34;
    cfg.channel_plan = {8, 8, 8, 8, 8};
    cfg.cbam_kernel = 3;
    return cfg;
}

// class c = level (c+1)*0.4 plus noise, trivially separable after
// standardization
LabeledSpecs toy_set(size_t per_class, size_t classes, size_t frames, size_t bins,
                     uint32_t seed) {
    std::mt19937 rng(seed);
    std::normal_distribution<float> noise(0.f, 0.05f);
    LabeledSpecs out;
    for (size_t c = 0; c < classes; ++c)
        for (size_t i = 0; i < per_class; ++i) {
            Spectrogram s(frames, bins);
            for (auto& v : s.values) v = 0.4f * float(c + 1) + noise(rng);
            out.specs.push_back(std::move(s));
            out.labels.push_back(c);
        }
    return out;
}

}  // namespace

TEST_CASE("cosine schedule endpoints and midpoint") {
    Schedule s;
    CHECK(lr_at(s, 0.001f, 0.f, 10.f) == doctest::Approx(0.001).epsilon(1e-9));
    CHECK(lr_at(s, 0.001f, 10.f, 10.f) == doctest::Approx(1e-6).epsilon(1e-6));
    CHECK(lr_at(s, 0.001f, 5.f, 10.f) == doctest::Approx((0.001 + 1e-6) / 2).epsilon(1e-6));
    CHECK_THROWS_AS(lr_at(s, 0.001f, 11.f, 10.f), ContractViolation);
}

TEST_CASE("warm restarts: cycle lengths 10, 20, 40 and lr0 right after each restart") {
    Schedule s;
    auto p0 = cycle_position(s, 0);
    CHECK(p0.t == 0);
    CHECK(p0.length == 10);
    auto p9 = cycle_position(s, 9);
    CHECK(p9.t == 9);
    CHECK(p9.cycle_end);
    auto p10 = cycle_position(s, 10);
    CHECK(p10.t == 0);
    CHECK(p10.length == 20);
    auto p30 = cycle_position(s, 30);
    CHECK(p30.t == 0);
    CHECK(p30.length == 40);
    // schedule is lr0 immediately after every restart
    for (size_t e : {0u, 10u, 30u, 70u}) {
        auto p = cycle_position(s, e);
        CHECK(lr_at(s, 0.001f, float(p.t), float(p.length)) == doctest::Approx(0.001));
    }
    // monotone decrease within a cycle
    float prev = 1.f;
    for (size_t e = 10; e < 30; ++e) {
        auto p = cycle_position(s, e);
        const float lr = lr_at(s, 0.001f, float(p.t), float(p.length));
        CHECK(lr < prev);
        prev = lr;
    }
}

TEST_CASE("sgd basics: vanilla step, zero grads, non-finite skip") {
    auto p = T32::full({3}, 1.f);
    std::vector<NamedTensor> params = {{"p", &p}};
    SgdState st;
    auto g = T32::full({3}, 2.f);
    sgd_step(params, {g}, st, 0.1f, 0.f, 0.f);
    for (size_t i = 0; i < 3; ++i) CHECK(p[i] == doctest::Approx(1.f - 0.1f * 2.f));

    auto before = *p.data;
    sgd_step(params, {T32::zeros({3})}, st, 0.1f, 0.f, 0.f);
    CHECK(*p.data == before);

    auto bad = T32::zeros({3});
    bad[1] = std::numeric_limits<float>::quiet_NaN();
    sgd_step(params, {bad}, st, 0.1f, 0.f, 0.f);
    CHECK(*p.data == before);
    CHECK(st.skipped_steps == 1);
}

TEST_CASE("sgd converges on a quadratic bowl") {
    std::mt19937 rng(1);
    auto p = T32::randn({8}, rng);
    std::vector<NamedTensor> params = {{"p", &p}};
    SgdState st;
    for (int step = 0; step < 200; ++step) {
        T32 g({8});
        for (size_t i = 0; i < 8; ++i) g[i] = 2.f * p[i];  // d/dp ||p||^2
        sgd_step(params, {g}, st, 0.1f, 0.f, 0.f);
    }
    float norm = 0.f;
    for (size_t i = 0; i < 8; ++i) norm += p[i] * p[i];
    CHECK(std::sqrt(norm) < 1e-3f);
}

TEST_CASE("weight decay and momentum follow the update rule") {
    auto p = T32::full({1}, 2.f);
    std::vector<NamedTensor> params = {{"p", &p}};
    SgdState st;
    // v1 = g + wd*p = 1 + 0.1*2 = 1.2 ; p1 = 2 - 0.5*1.2 = 1.4
    sgd_step(params, {T32::full({1}, 1.f)}, st, 0.5f, 0.9f, 0.1f);
    CHECK(p[0] == doctest::Approx(1.4f));
    // v2 = 0.9*1.2 + 1 + 0.1*1.4 = 2.22 ; p2 = 1.4 - 0.5*2.22 = 0.29
    sgd_step(params, {T32::full({1}, 1.f)}, st, 0.5f, 0.9f, 0.1f);
    CHECK(p[0] == doctest::Approx(0.29f).epsilon(1e-5));
}

TEST_CASE("predict equals single-crop softmax when T equals the window") {
    auto m = build_lcnn(tiny_cfg(), 5);
    m.norm_mean = T32::zeros({34});
    m.norm_std = T32::full({34}, 1.f);
    std::mt19937 rng(2);
    Spectrogram s(32, 34);
    std::normal_distribution<float> d(0.f, 1.f);
    for (auto& v : s.values) v = d(rng);

    auto probs = predict(m, s);
    REQUIRE(probs.size() == 10);
    float sum = 0.f;
    for (float v : probs) sum += v;
    CHECK(sum == doctest::Approx(1.f).epsilon(1e-6));

    T32 x({1, 1, 32, 34});
    std::copy(s.values.begin(), s.values.end(), x.ptr());
    auto single = softmax(lcnn_forward(m, x, false));
    for (size_t c = 0; c < 10; ++c) CHECK(probs[c] == doctest::Approx(single[c]).epsilon(1e-6));
}

TEST_CASE("predict equals the hand-computed mean over the three crops") {
    auto m = build_lcnn(tiny_cfg(), 6);
    m.norm_mean = T32::zeros({34});
    m.norm_std = T32::full({34}, 1.f);
    std::mt19937 rng(3);
    Spectrogram s(80, 34);
    std::normal_distribution<float> d(0.f, 1.f);
    for (auto& v : s.values) v = d(rng);

    auto probs = predict(m, s);
    auto crops = fixed_crops(s, 32);
    std::vector<float> manual(10, 0.f);
    for (const auto& crop : crops) {
        T32 x({1, 1, 32, 34});
        std::copy(crop.values.begin(), crop.values.end(), x.ptr());
        auto p = softmax(lcnn_forward(m, x, false));
        for (size_t c = 0; c < 10; ++c) manual[c] += p[c] / 3.f;
    }
    for (size_t c = 0; c < 10; ++c) CHECK(probs[c] == manual[c]);

    // repeat call bit-identical
    auto again = predict(m, s);
    CHECK(again == probs);

    // logit-mean variant is also a distribution
    auto lm = predict(m, s, true);
    float sum = 0.f;
    for (float v : lm) sum += v;
    CHECK(sum == doctest::Approx(1.f).epsilon(1e-6));
}

TEST_CASE("constant predictor on a balanced set scores 0.1 = mean per-class recall") {
    auto m = build_lcnn(tiny_cfg(), 7);
    m.norm_mean = T32::zeros({34});
    m.norm_std = T32::full({34}, 1.f);
    // zero final layer: all logits equal, argmax tie resolves to class 0
    std::fill(m.fc2.weight.data->begin(), m.fc2.weight.data->end(), 0.f);
    std::fill(m.fc2.bias.data->begin(), m.fc2.bias.data->end(), 0.f);

    auto data = toy_set(2, 10, 40, 34, 4);
    auto metrics = evaluate(m, data);
    CHECK(metrics.accuracy() == doctest::Approx(0.1));
    for (size_t i = 0; i < 10; ++i) CHECK(metrics.at(i, 0) == 2);

    const auto recalls = metrics.per_class_accuracy();
    double mean = 0.0;
    for (double r : recalls) mean += r / 10.0;
    CHECK(mean == doctest::Approx(metrics.accuracy()).epsilon(1e-12));

    auto metrics2 = evaluate(m, data);
    CHECK(metrics2.confusion == metrics.confusion);
}

TEST_CASE("confusion_pairs: trivial cases and brute-force oracle") {
    Metrics m;
    m.classes = 10;
    m.confusion.assign(100, 0);
    for (size_t i = 0; i < 10; ++i) m.confusion[i * 10 + i] = 5;
    for (const auto& p : confusion_pairs(m, 45)) CHECK(p.count == 0);

    m.confusion[2 * 10 + 7] = 114;
    auto top = confusion_pairs(m, 1);
    REQUIRE(top.size() == 1);
    CHECK(top[0].a == 2);
    CHECK(top[0].b == 7);
    CHECK(top[0].count == 114);

    std::mt19937 rng(5);
    std::uniform_int_distribution<size_t> d(0, 50);
    for (auto& v : m.confusion) v = d(rng);
    auto pairs = confusion_pairs(m, 45);
    REQUIRE(pairs.size() == 45);
    for (const auto& p : pairs) CHECK(p.count == m.at(p.a, p.b) + m.at(p.b, p.a));
    for (size_t i = 1; i < pairs.size(); ++i) {
        CHECK(pairs[i - 1].count >= pairs[i].count);
        if (pairs[i - 1].count == pairs[i].count)
            CHECK((pairs[i - 1].a < pairs[i].a ||
                   (pairs[i - 1].a == pairs[i].a && pairs[i - 1].b < pairs[i].b)));
    }
}

TEST_CASE("training reduces loss, is seed-deterministic, and honors early stop") {
    auto data = toy_set(5, 4, 48, 34, 6);
    auto val = toy_set(1, 4, 48, 34, 7);

    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 20;
    cfg.seed = 11;
    cfg.augment.use_mixup = false;
    cfg.augment.use_specaug = false;

    auto run = [&](size_t stop_after) {
        auto m = build_lcnn(tiny_cfg(), 9);
        std::ostringstream log;
        auto logs = train(m, data, val, cfg, log,
                          [&](const EpochLog& e) { return e.epoch < stop_after; });
        return std::make_tuple(logs, log.str());
    };
    auto [logs_a, text_a] = run(100);
    auto [logs_b, text_b] = run(100);
    REQUIRE(logs_a.size() == 3);
    CHECK(logs_a[0].train_loss == doctest::Approx(logs_b[0].train_loss).epsilon(1e-6));
    CHECK(text_a == text_b);
    CHECK(logs_a[2].train_loss < logs_a[0].train_loss);

    // log format: one line per epoch, five tab-separated fields
    std::istringstream lines(text_a);
    std::string line;
    size_t n_lines = 0;
    while (std::getline(lines, line)) {
        ++n_lines;
        CHECK(std::count(line.begin(), line.end(), '\t') == 4);
    }
    CHECK(n_lines == 3);

    auto [logs_c, text_c] = run(2);
    CHECK(logs_c.size() == 2);

    // stats were fitted and stored in the model
    auto m = build_lcnn(tiny_cfg(), 9);
    std::ostringstream log;
    train(m, data, val, cfg, log, [](const EpochLog&) { return false; });
    CHECK(m.norm_mean.numel() == 34);
    CHECK(m.norm_std.numel() == 34);
    auto probs = predict(m, data.specs[0]);
    float sum = 0.f;
    for (float v : probs) sum += v;
    CHECK(sum == doctest::Approx(1.f).epsilon(1e-6));
}

TEST_CASE("config validation happens before any compute") {
    TrainConfig cfg;
    cfg.batch_size = 1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.batch_size = 24;
    cfg.lr0 = 0.f;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.lr0 = 0.001f;
    cfg.schedule.t0 = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
