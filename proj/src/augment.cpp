#include "mfmasc/augment.hpp"

#include <algorithm>
#include <iostream>
#include <numeric>

namespace mfmasc {

void AugmentConfig::validate(size_t frames, size_t bins) const {
    if (mixup_alpha <= 0.f)
        throw ConfigError("mixup_alpha must be positive, got " + std::to_string(mixup_alpha));
    if (max_time_width > frames)
        throw ConfigError("max_time_width " + std::to_string(max_time_width) + " exceeds " +
                          std::to_string(frames) + " frames");
    if (max_freq_width > bins)
        throw ConfigError("max_freq_width " + std::to_string(max_freq_width) + " exceeds " +
                          std::to_string(bins) + " bins");
}

float sample_beta(float alpha, std::mt19937_64& rng) {
    std::gamma_distribution<double> g(alpha, 1.0);
    const double a = g(rng), b = g(rng);
    if (a + b == 0.0) return 0.5f;  // both underflowed; Beta(a,a) is symmetric
    return static_cast<float>(a / (a + b));
}

namespace {

void blend(float* x, float* y, size_t xdim, size_t ydim, size_t n,
           const std::vector<size_t>& perm, const std::vector<float>& lam,
           const std::vector<float>& xs, const std::vector<float>& ys) {
    for (size_t i = 0; i < n; ++i) {
        const size_t j = perm[i];
        const float l = lam[i];
        for (size_t k = 0; k < xdim; ++k)
            x[i * xdim + k] = l * xs[i * xdim + k] + (1.f - l) * xs[j * xdim + k];
        for (size_t k = 0; k < ydim; ++k)
            y[i * ydim + k] = l * ys[i * ydim + k] + (1.f - l) * ys[j * ydim + k];
    }
}

}  // namespace

void mixup(Tensor<float>& x, Tensor<float>& y, const AugmentConfig& cfg, std::mt19937_64& rng) {
    if (x.rank() < 1 || y.rank() != 2 || x.shape[0] != y.shape[0])
        throw ContractViolation("mixup: x is (N,...) and y is (N,classes), got " +
                                shape_str(x.shape) + " and " + shape_str(y.shape));
    const size_t n = x.shape[0];
    if (n < 2) {
        std::cerr << "warning: mixup skipped, batch has fewer than 2 examples\n";
        return;
    }
    const size_t ydim = y.shape[1];
    for (size_t i = 0; i < n; ++i) {
        float row = 0.f;
        for (size_t k = 0; k < ydim; ++k) {
            if (y[i * ydim + k] < 0.f)
                throw ContractViolation("mixup: negative label entry in row " + std::to_string(i));
            row += y[i * ydim + k];
        }
        if (std::abs(row - 1.f) > 1e-5f)
            throw ContractViolation("mixup: label row " + std::to_string(i) + " sums to " +
                                    std::to_string(row));
    }

    std::vector<size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);

    std::vector<float> lam(n);
    if (cfg.mixup_per_example) {
        for (auto& l : lam) l = sample_beta(cfg.mixup_alpha, rng);
    } else {
        std::fill(lam.begin(), lam.end(), sample_beta(cfg.mixup_alpha, rng));
    }

    const size_t xdim = x.numel() / n;
    const std::vector<float> xs(*x.data), ys(*y.data);
    blend(x.ptr(), y.ptr(), xdim, ydim, n, perm, lam, xs, ys);
}

void spec_augment(Spectrogram& spec, const AugmentConfig& cfg, std::mt19937_64& rng) {
    cfg.validate(spec.frames, spec.bins);
    // time masks: whole frames
    for (size_t m = 0; m < cfg.n_time_masks; ++m) {
        std::uniform_int_distribution<size_t> wd(0, cfg.max_time_width);
        const size_t w = wd(rng);
        std::uniform_int_distribution<size_t> sd(0, spec.frames - w);
        const size_t start = sd(rng);
        std::fill_n(spec.values.data() + start * spec.bins, w * spec.bins, 0.f);
    }
    // frequency masks: whole bins
    for (size_t m = 0; m < cfg.n_freq_masks; ++m) {
        std::uniform_int_distribution<size_t> wd(0, cfg.max_freq_width);
        const size_t w = wd(rng);
        std::uniform_int_distribution<size_t> sd(0, spec.bins - w);
        const size_t start = sd(rng);
        for (size_t t = 0; t < spec.frames; ++t)
            std::fill_n(spec.values.data() + t * spec.bins + start, w, 0.f);
    }
}

void spec_augment(Tensor<float>& x, const AugmentConfig& cfg, std::mt19937_64& rng) {
    if (x.rank() != 4 || x.shape[1] != 1)
        throw ContractViolation("spec_augment: expected (N,1,T,F), got " + shape_str(x.shape));
    const size_t T = x.shape[2], F = x.shape[3];
    Spectrogram view(T, F);
    for (size_t i = 0; i < x.shape[0]; ++i) {
        std::copy_n(x.ptr() + i * T * F, T * F, view.values.data());
        spec_augment(view, cfg, rng);
        std::copy_n(view.values.data(), T * F, x.ptr() + i * T * F);
    }
}

}  // namespace mfmasc
