#pragma once

// Training loop (SGD with momentum, weight decay, and cosine-annealed warm
// restarts), three-crop prediction, and evaluation metrics with
// misclassified-pair reporting.

#include <functional>
#include <ostream>

#include "mfmasc/augment.hpp"
#include "mfmasc/features.hpp"
#include "mfmasc/lcnn.hpp"

namespace mfmasc {

struct Schedule {
    size_t t0 = 10;     // first cycle length, epochs
    size_t tmult = 2;   // cycle growth factor
    float eta_min = 1e-6f;
};

struct TrainConfig {
    float lr0 = 0.001f;
    size_t batch_size = 24;
    float momentum = 0.9f;
    float weight_decay = 1e-4f;
    size_t epochs = 100;
    Schedule schedule;
    uint64_t seed = 0;
    bool logit_mean = false;  // average logits instead of probabilities
    AugmentConfig augment;

    void validate() const;
};

// Cosine annealing within a cycle of length T: t=0 gives lr0, t=T gives
// eta_min.
float lr_at(const Schedule& s, float lr0, float t, float T);

// Position of an epoch inside the restart sequence: cycle lengths t0,
// t0*tmult, t0*tmult^2, ...
struct CyclePos {
    size_t t = 0, length = 1;  // epoch-within-cycle, cycle length
    bool cycle_end = false;    // last epoch of its cycle
};
CyclePos cycle_position(const Schedule& s, size_t epoch);

// Momentum SGD over the model's parameter list. Velocities persist across
// steps; a step with any non-finite gradient is skipped and counted.
struct SgdState {
    std::vector<std::vector<float>> velocity;
    size_t skipped_steps = 0;
};

void sgd_step(std::vector<NamedTensor>& params, const std::vector<Tensor<float>>& grads,
              SgdState& state, float lr, float momentum, float weight_decay);

struct LabeledSpecs {
    std::vector<Spectrogram> specs;  // un-normalized log-mel, full length
    std::vector<size_t> labels;
};

struct EpochLog {
    size_t epoch = 0;
    float lr = 0.f, train_loss = 0.f, train_acc = 0.f, val_acc = 0.f;
};

// Fits normalization stats on the training split, stores them in the model,
// then runs the loop: per epoch, shuffled order, fresh random crops, masking
// then mix-up, one optimizer step per batch. Logs one line per epoch; the
// callback can stop training early by returning false.
std::vector<EpochLog> train(LCNNModel& model, const LabeledSpecs& train_set,
                            const LabeledSpecs& val_set, const TrainConfig& cfg,
                            std::ostream& log,
                            const std::function<bool(const EpochLog&)>& on_epoch = {});

// Mean of the softmax outputs over the three fixed crops (or softmax of the
// mean logits when logit_mean). Input is un-normalized log-mel; the model's
// stored stats are applied.
std::vector<float> predict(LCNNModel& model, const Spectrogram& logmel, bool logit_mean = false);

struct Metrics {
    std::vector<size_t> confusion;  // rows = truth, cols = prediction
    size_t classes = 0;

    size_t at(size_t truth, size_t pred) const { return confusion[truth * classes + pred]; }
    double accuracy() const;
    std::vector<double> per_class_accuracy() const;
};

Metrics evaluate(LCNNModel& model, const LabeledSpecs& data, bool logit_mean = false);

struct ClassPair {
    size_t a = 0, b = 0;  // a < b
    size_t count = 0;     // confusion(a,b) + confusion(b,a)
};

// Top-k unordered pairs by summed off-diagonal counts; ties break toward the
// smaller class indices.
std::vector<ClassPair> confusion_pairs(const Metrics& m, size_t k);

// Human-readable report: accuracy, confusion matrix, top-k pairs.
void write_metrics_report(std::ostream& out, const Metrics& m,
                          const std::vector<std::string>& class_names, size_t top_pairs = 5);

}  // namespace mfmasc
