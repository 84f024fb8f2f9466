#pragma once

// Training-time augmentation: time/frequency masking on spectrogram crops,
// then mix-up of examples and their soft labels. Masking runs first.

#include <random>

#include "mfmasc/features.hpp"
#include "mfmasc/tensor.hpp"

namespace mfmasc {

struct AugmentConfig {
    bool use_mixup = true;
    bool use_specaug = true;
    float mixup_alpha = 0.2f;
    bool mixup_per_example = false;  // default: one lambda shared by the batch
    size_t n_time_masks = 2;
    size_t n_freq_masks = 2;
    size_t max_time_width = 40;
    size_t max_freq_width = 16;

    void validate(size_t frames, size_t bins) const;
};

// lambda ~ Beta(alpha, alpha) via the ratio of two gamma draws.
float sample_beta(float alpha, std::mt19937_64& rng);

// x: (N, ...), y: (N, classes) with rows on the simplex. Blends each example
// with a uniformly shuffled partner. N < 2 passes through with a warning.
void mixup(Tensor<float>& x, Tensor<float>& y, const AugmentConfig& cfg, std::mt19937_64& rng);

// For each mask: width ~ Uniform{0..max}, start ~ Uniform{0..extent-width},
// masked cells set to 0 (the per-bin mean in normalized space).
void spec_augment(Spectrogram& spec, const AugmentConfig& cfg, std::mt19937_64& rng);

// Batch form: independent masks per example. x is (N, 1, T, F).
void spec_augment(Tensor<float>& x, const AugmentConfig& cfg, std::mt19937_64& rng);

}  // namespace mfmasc
