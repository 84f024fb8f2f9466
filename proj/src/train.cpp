#include "mfmasc/train.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <numeric>

namespace mfmasc {

void TrainConfig::validate() const {
    if (lr0 <= 0.f) throw ConfigError("lr0 must be positive, got " + std::to_string(lr0));
    if (batch_size < 2) throw ConfigError("batch_size must be at least 2 for mix-up, got " +
                                          std::to_string(batch_size));
    if (schedule.t0 == 0) throw ConfigError("schedule t0 must be positive");
    if (schedule.tmult == 0) throw ConfigError("schedule tmult must be positive");
    if (momentum < 0.f || momentum >= 1.f)
        throw ConfigError("momentum must be in [0,1), got " + std::to_string(momentum));
}

float lr_at(const Schedule& s, float lr0, float t, float T) {
    if (t < 0.f || t > T)
        throw ContractViolation("lr_at: t=" + std::to_string(t) + " outside [0," +
                                std::to_string(T) + "]");
    const double c = std::cos(std::numbers::pi * double(t) / double(T));
    return static_cast<float>(s.eta_min + 0.5 * (double(lr0) - s.eta_min) * (1.0 + c));
}

CyclePos cycle_position(const Schedule& s, size_t epoch) {
    size_t len = s.t0, t = epoch;
    while (t >= len) {
        t -= len;
        len *= s.tmult;
    }
    return {t, len, t + 1 == len};
}

void sgd_step(std::vector<NamedTensor>& params, const std::vector<Tensor<float>>& grads,
              SgdState& state, float lr, float momentum, float weight_decay) {
    if (grads.size() != params.size())
        throw ContractViolation("sgd_step: " + std::to_string(grads.size()) + " gradients for " +
                                std::to_string(params.size()) + " parameters");
    if (state.velocity.empty()) {
        state.velocity.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i)
            state.velocity[i].assign(params[i].tensor->numel(), 0.f);
    }
    for (size_t i = 0; i < params.size(); ++i) {
        if (grads[i].shape != params[i].tensor->shape)
            throw ContractViolation("sgd_step: gradient shape mismatch for " + params[i].name);
        if (!grads[i].all_finite()) {
            ++state.skipped_steps;
            std::cerr << "warning: non-finite gradient for " << params[i].name
                      << ", step skipped (" << state.skipped_steps << " so far)\n";
            return;
        }
    }
    for (size_t i = 0; i < params.size(); ++i) {
        auto& p = *params[i].tensor;
        auto& v = state.velocity[i];
        const auto& g = grads[i];
        for (size_t k = 0; k < p.numel(); ++k) {
            v[k] = momentum * v[k] + g[k] + weight_decay * p[k];
            p[k] -= lr * v[k];
        }
    }
}

namespace {

Spectrogram normalized_copy(const Spectrogram& s, const NormStats& st) {
    Spectrogram out = s;
    normalize(out, st);
    return out;
}

// softmax mean (or mean-logit softmax) over the three crops of a normalized
// spectrogram
std::vector<float> predict_normalized(LCNNModel& m, const Spectrogram& spec, bool logit_mean) {
    const size_t frames = m.cfg.input_frames, bins = m.cfg.input_bins;
    if (spec.bins != bins)
        throw ContractViolation("predict: model expects " + std::to_string(bins) +
                                " bins, spectrogram has " + std::to_string(spec.bins));
    const auto crops = fixed_crops(spec, frames);
    const size_t C = m.cfg.num_classes;
    std::vector<float> acc(C, 0.f);
    for (const auto& crop : crops) {
        Tensor<float> x({1, 1, frames, bins});
        std::copy(crop.values.begin(), crop.values.end(), x.ptr());
        auto logits = lcnn_forward(m, x, false);
        if (logit_mean) {
            for (size_t c = 0; c < C; ++c) acc[c] += logits[c] / 3.f;
        } else {
            auto p = softmax(logits);
            for (size_t c = 0; c < C; ++c) acc[c] += p[c] / 3.f;
        }
    }
    if (logit_mean) {
        Tensor<float> l({1, C});
        std::copy(acc.begin(), acc.end(), l.ptr());
        auto p = softmax(l);
        acc.assign(p.ptr(), p.ptr() + C);
    }
    return acc;
}

size_t argmax_lowest(const float* v, size_t n) {
    size_t best = 0;
    for (size_t i = 1; i < n; ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

NormStats stats_from_model(const LCNNModel& m) {
    NormStats st;
    st.mean.assign(m.norm_mean.ptr(), m.norm_mean.ptr() + m.norm_mean.numel());
    st.stdev.assign(m.norm_std.ptr(), m.norm_std.ptr() + m.norm_std.numel());
    return st;
}

double eval_normalized(LCNNModel& m, const std::vector<Spectrogram>& specs,
                       const std::vector<size_t>& labels, bool logit_mean) {
    size_t correct = 0;
    for (size_t i = 0; i < specs.size(); ++i) {
        const auto p = predict_normalized(m, specs[i], logit_mean);
        correct += argmax_lowest(p.data(), p.size()) == labels[i];
    }
    return specs.empty() ? 0.0 : double(correct) / double(specs.size());
}

}  // namespace

std::vector<EpochLog> train(LCNNModel& model, const LabeledSpecs& train_set,
                            const LabeledSpecs& val_set, const TrainConfig& cfg,
                            std::ostream& log,
                            const std::function<bool(const EpochLog&)>& on_epoch) {
    cfg.validate();
    if (train_set.specs.empty()) throw ContractViolation("train: empty training set");
    if (train_set.specs.size() != train_set.labels.size())
        throw ContractViolation("train: specs/labels size mismatch");

    const auto st = fit_stats(train_set.specs);
    model.norm_mean = Tensor<float>({st.mean.size()});
    model.norm_std = Tensor<float>({st.stdev.size()});
    std::copy(st.mean.begin(), st.mean.end(), model.norm_mean.ptr());
    std::copy(st.stdev.begin(), st.stdev.end(), model.norm_std.ptr());

    std::vector<Spectrogram> tr, va;
    tr.reserve(train_set.specs.size());
    for (const auto& s : train_set.specs) tr.push_back(normalized_copy(s, st));
    va.reserve(val_set.specs.size());
    for (const auto& s : val_set.specs) va.push_back(normalized_copy(s, st));

    const size_t frames = model.cfg.input_frames, bins = model.cfg.input_bins;
    const size_t C = model.cfg.num_classes;
    std::mt19937_64 rng(cfg.seed);
    auto params = parameters(model);
    SgdState sgd;
    std::vector<EpochLog> logs;

    std::vector<size_t> order(tr.size());
    std::iota(order.begin(), order.end(), 0);

    for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto pos = cycle_position(cfg.schedule, epoch);
        const float lr =
            lr_at(cfg.schedule, cfg.lr0, static_cast<float>(pos.t), static_cast<float>(pos.length));
        std::shuffle(order.begin(), order.end(), rng);

        double loss_sum = 0.0;
        size_t loss_batches = 0, correct = 0, seen = 0;
        for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const size_t B = std::min(cfg.batch_size, order.size() - start);
            Tensor<float> x({B, 1, frames, bins});
            Tensor<float> y = Tensor<float>::zeros({B, C});
            std::vector<size_t> hard(B);
            for (size_t i = 0; i < B; ++i) {
                const size_t idx = order[start + i];
                auto crop = random_crop(tr[idx], frames, rng);
                std::copy(crop.values.begin(), crop.values.end(), x.ptr() + i * frames * bins);
                hard[i] = train_set.labels[idx];
                y[i * C + hard[i]] = 1.f;
            }
            if (cfg.augment.use_specaug) spec_augment(x, cfg.augment, rng);
            if (cfg.augment.use_mixup && B >= 2) mixup(x, y, cfg.augment, rng);

            Tape<float> tape;
            for (auto& p : params) tape.track(*p.tensor);
            auto logits = lcnn_forward(model, x, true);
            auto loss = cross_entropy_soft(logits, y);
            if (!std::isfinite(loss.item()))
                throw ContractViolation("train: non-finite loss at epoch " +
                                        std::to_string(epoch + 1));
            tape.backward(loss);
            std::vector<Tensor<float>> grads;
            grads.reserve(params.size());
            for (auto& p : params) grads.push_back(tape.grad(*p.tensor));
            for (auto& p : params) {
                p.tensor->tape = nullptr;
                p.tensor->node = -1;
            }
            sgd_step(params, grads, sgd, lr, cfg.momentum, cfg.weight_decay);

            loss_sum += loss.item();
            ++loss_batches;
            for (size_t i = 0; i < B; ++i)
                correct += argmax_lowest(logits.ptr() + i * C, C) == hard[i];
            seen += B;
        }

        EpochLog e;
        e.epoch = epoch + 1;
        e.lr = lr;
        e.train_loss = static_cast<float>(loss_sum / double(std::max<size_t>(loss_batches, 1)));
        e.train_acc = static_cast<float>(double(correct) / double(std::max<size_t>(seen, 1)));
        e.val_acc = static_cast<float>(eval_normalized(model, va, val_set.labels, cfg.logit_mean));
        log << e.epoch << '\t' << std::setprecision(6) << e.lr << '\t' << e.train_loss << '\t'
            << e.train_acc << '\t' << e.val_acc << '\n';
        log.flush();
        logs.push_back(e);
        if (on_epoch && !on_epoch(e)) break;
    }
    return logs;
}

std::vector<float> predict(LCNNModel& model, const Spectrogram& logmel, bool logit_mean) {
    if (model.norm_mean.numel() != model.cfg.input_bins)
        throw ContractViolation("predict: model has no fitted normalization stats");
    auto spec = normalized_copy(logmel, stats_from_model(model));
    return predict_normalized(model, spec, logit_mean);
}

double Metrics::accuracy() const {
    size_t total = 0, diag = 0;
    for (size_t i = 0; i < classes; ++i)
        for (size_t j = 0; j < classes; ++j) {
            total += at(i, j);
            if (i == j) diag += at(i, j);
        }
    return total == 0 ? 0.0 : double(diag) / double(total);
}

std::vector<double> Metrics::per_class_accuracy() const {
    std::vector<double> out(classes, 0.0);
    for (size_t i = 0; i < classes; ++i) {
        size_t row = 0;
        for (size_t j = 0; j < classes; ++j) row += at(i, j);
        if (row > 0) out[i] = double(at(i, i)) / double(row);
    }
    return out;
}

Metrics evaluate(LCNNModel& model, const LabeledSpecs& data, bool logit_mean) {
    if (data.specs.size() != data.labels.size())
        throw ContractViolation("evaluate: specs/labels size mismatch");
    const size_t C = model.cfg.num_classes;
    Metrics m;
    m.classes = C;
    m.confusion.assign(C * C, 0);
    for (size_t i = 0; i < data.specs.size(); ++i) {
        if (data.labels[i] >= C)
            throw ContractViolation("evaluate: label " + std::to_string(data.labels[i]) +
                                    " out of range");
        const auto p = predict(model, data.specs[i], logit_mean);
        m.confusion[data.labels[i] * C + argmax_lowest(p.data(), p.size())] += 1;
    }
    return m;
}

std::vector<ClassPair> confusion_pairs(const Metrics& m, size_t k) {
    std::vector<ClassPair> pairs;
    for (size_t a = 0; a < m.classes; ++a)
        for (size_t b = a + 1; b < m.classes; ++b)
            pairs.push_back({a, b, m.at(a, b) + m.at(b, a)});
    std::sort(pairs.begin(), pairs.end(), [](const ClassPair& x, const ClassPair& y) {
        if (x.count != y.count) return x.count > y.count;
        if (x.a != y.a) return x.a < y.a;
        return x.b < y.b;
    });
    if (k < pairs.size()) pairs.resize(k);
    return pairs;
}

void write_metrics_report(std::ostream& out, const Metrics& m,
                          const std::vector<std::string>& class_names, size_t top_pairs) {
    out << "accuracy\t" << std::fixed << std::setprecision(4) << m.accuracy() << "\n\n";
    out << "confusion matrix (rows = truth, cols = prediction)\n";
    for (size_t i = 0; i < m.classes; ++i) {
        out << (i < class_names.size() ? class_names[i] : std::to_string(i));
        for (size_t j = 0; j < m.classes; ++j) out << '\t' << m.at(i, j);
        out << '\n';
    }
    out << "\ntop misclassified pairs\n";
    for (const auto& p : confusion_pairs(m, top_pairs)) {
        const auto name = [&](size_t c) {
            return c < class_names.size() ? class_names[c] : std::to_string(c);
        };
        out << name(p.a) << " - " << name(p.b) << '\t' << p.count << '\n';
    }
    out.unsetf(std::ios::fixed);
}

}  // namespace mfmasc
