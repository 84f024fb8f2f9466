#pragma once

// WAV ingestion and the log-mel feature pipeline: STFT power spectrogram,
// Slaney mel projection, log compression, per-bin standardization, and the
// 250-frame crop policies used for training (random) and inference (three
// fixed overlapping windows).

#include <array>
#include <complex>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mfmasc/errors.hpp"

namespace mfmasc {

struct AudioClip {
    std::vector<float> samples;  // mono, in [-1, 1]
    uint32_t sample_rate = 44100;
};

// PCM 16/24/32-bit and IEEE float, mono or multichannel (downmixed by mean).
AudioClip load_wav(const std::string& path);
// 16-bit PCM mono.
void write_wav16(const std::string& path, const AudioClip& clip);

// Row-major (frames x bins) matrix, used for both power spectrograms
// (bins = n_fft/2 + 1) and mel spectrograms (bins = n_mels).
struct Spectrogram {
    size_t frames = 0, bins = 0;
    std::vector<float> values;

    Spectrogram() = default;
    Spectrogram(size_t t, size_t f) : frames(t), bins(f), values(t * f, 0.f) {}
    float& at(size_t t, size_t f) { return values[t * bins + f]; }
    float at(size_t t, size_t f) const { return values[t * bins + f]; }
};

// In-place iterative radix-2 FFT; size must be a power of two.
void fft_radix2(std::vector<std::complex<double>>& a);

// Hann-windowed frames, zero-padded to n_fft, |DFT|^2 for bins 0..n_fft/2.
// T = floor((N - win) / hop) + 1; no center padding.
Spectrogram stft_power(const AudioClip& clip, size_t n_fft = 2048,
                       size_t win_samples = 1764, size_t hop_samples = 882);

// Triangular filters on the Slaney mel scale, normalized to unit area.
// Returns (n_mels x (n_fft/2 + 1)) row-major weights.
std::vector<float> mel_filterbank(size_t n_mels, size_t n_fft, double sample_rate,
                                  double fmin, double fmax);

Spectrogram mel_project(const Spectrogram& power, size_t n_mels = 128,
                        double fmin = 0.0, double fmax = 22050.0,
                        size_t n_fft = 2048, double sample_rate = 44100.0);

// log(x + 1e-10) elementwise.
void log_compress(Spectrogram& spec);

struct NormStats {
    std::vector<float> mean, stdev;  // per bin
};

// Per-bin mean/std over every frame of the given (training) specs. Zero-std
// bins are clamped to 1e-6 with a warning on stderr.
NormStats fit_stats(const std::vector<Spectrogram>& specs);
void normalize(Spectrogram& spec, const NormStats& stats);

// Contiguous window, start uniform in [0, T - frames]. Clips shorter than
// the window are padded by repeating the last frame.
Spectrogram random_crop(const Spectrogram& spec, size_t frames, std::mt19937_64& rng);

// Windows at 0, floor((T - frames) / 2), T - frames. A short clip yields one
// padded crop repeated three times.
std::array<Spectrogram, 3> fixed_crops(const Spectrogram& spec, size_t frames = 250);

// Cache file: magic "MSP1", u32 frames, u32 bins, binary32 row-major values,
// all little-endian.
void save_spectrogram(const std::string& path, const Spectrogram& spec);
Spectrogram load_spectrogram(const std::string& path);

}  // namespace mfmasc
