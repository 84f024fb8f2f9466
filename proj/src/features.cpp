#include "mfmasc/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <numbers>

namespace mfmasc {

namespace {

// --- little-endian binary I/O -----------------------------------------------

uint32_t read_u32(const uint8_t* p) {
    return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
}
uint16_t read_u16(const uint8_t* p) { return uint16_t(p[0]) | uint16_t(p[1]) << 8; }

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    f.seekg(0, std::ios::end);
    std::vector<uint8_t> buf(static_cast<size_t>(f.tellg()));
    f.seekg(0);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) throw IoError("short read from " + path);
    return buf;
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(uint8_t(v)); out.push_back(uint8_t(v >> 8));
    out.push_back(uint8_t(v >> 16)); out.push_back(uint8_t(v >> 24));
}
void put_u16(std::vector<uint8_t>& out, uint16_t v) {
    out.push_back(uint8_t(v)); out.push_back(uint8_t(v >> 8));
}

void write_file(const std::string& path, const std::vector<uint8_t>& buf) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) throw IoError("short write to " + path);
}

}  // namespace

// --- WAV --------------------------------------------------------------------

AudioClip load_wav(const std::string& path) {
    const auto buf = read_file(path);
    auto fail = [&](const std::string& what, size_t off) {
        throw FormatError(path + ": " + what + " at byte offset " + std::to_string(off));
    };
    if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0) fail("missing RIFF header", 0);
    if (std::memcmp(buf.data() + 8, "WAVE", 4) != 0) fail("missing WAVE tag", 8);

    uint16_t format = 0, channels = 0, bits = 0;
    uint32_t rate = 0;
    const uint8_t* data = nullptr;
    size_t data_len = 0;
    bool have_fmt = false;

    size_t off = 12;
    while (off + 8 <= buf.size()) {
        const char* id = reinterpret_cast<const char*>(buf.data() + off);
        const uint32_t len = read_u32(buf.data() + off + 4);
        const size_t body = off + 8;
        if (body + len > buf.size()) fail("chunk overruns file", off);
        if (std::memcmp(id, "fmt ", 4) == 0) {
            if (len < 16) fail("fmt chunk too short", off);
            format = read_u16(buf.data() + body);
            channels = read_u16(buf.data() + body + 2);
            rate = read_u32(buf.data() + body + 4);
            bits = read_u16(buf.data() + body + 14);
            if (format == 0xFFFE) {
                // extensible: sub-format GUID starts with the plain format code
                if (len < 26) fail("extensible fmt chunk too short", off);
                format = read_u16(buf.data() + body + 24);
            }
            have_fmt = true;
        } else if (std::memcmp(id, "data", 4) == 0) {
            data = buf.data() + body;
            data_len = len;
        }
        off = body + len + (len & 1);  // chunks are word-aligned
    }
    if (!have_fmt) fail("no fmt chunk", buf.size());
    if (!data) fail("no data chunk", buf.size());
    if (channels == 0) fail("zero channels", buf.size());

    const bool is_float = format == 3;
    if (format != 1 && !is_float)
        throw FormatError(path + ": unsupported codec " + std::to_string(format) +
                          " (PCM and IEEE float only)");
    if (is_float && bits != 32)
        throw FormatError(path + ": unsupported float width " + std::to_string(bits));
    if (!is_float && bits != 16 && bits != 24 && bits != 32)
        throw FormatError(path + ": unsupported PCM width " + std::to_string(bits));

    const size_t bytes_per = bits / 8;
    const size_t frames = data_len / (bytes_per * channels);
    if (frames == 0) throw FormatError(path + ": empty data chunk");

    AudioClip clip;
    clip.sample_rate = rate;
    clip.samples.resize(frames);
    for (size_t i = 0; i < frames; ++i) {
        double acc = 0.0;
        for (size_t c = 0; c < channels; ++c) {
            const uint8_t* p = data + (i * channels + c) * bytes_per;
            double v;
            if (is_float) {
                float fv;
                uint32_t u = read_u32(p);
                std::memcpy(&fv, &u, 4);
                v = fv;
            } else if (bits == 16) {
                v = static_cast<int16_t>(read_u16(p)) / 32768.0;
            } else if (bits == 24) {
                int32_t s = int32_t(p[0]) | int32_t(p[1]) << 8 | int32_t(p[2]) << 16;
                if (s & 0x800000) s |= ~0xFFFFFF;
                v = s / 8388608.0;
            } else {
                v = static_cast<int32_t>(read_u32(p)) / 2147483648.0;
            }
            acc += v;
        }
        clip.samples[i] = static_cast<float>(acc / channels);
    }
    return clip;
}

void write_wav16(const std::string& path, const AudioClip& clip) {
    const uint32_t n = static_cast<uint32_t>(clip.samples.size());
    std::vector<uint8_t> out;
    out.reserve(44 + 2 * n);
    out.insert(out.end(), {'R', 'I', 'F', 'F'});
    put_u32(out, 36 + 2 * n);
    out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
    put_u32(out, 16);
    put_u16(out, 1);  // PCM
    put_u16(out, 1);  // mono
    put_u32(out, clip.sample_rate);
    put_u32(out, clip.sample_rate * 2);
    put_u16(out, 2);
    put_u16(out, 16);
    out.insert(out.end(), {'d', 'a', 't', 'a'});
    put_u32(out, 2 * n);
    for (float x : clip.samples) {
        long s = std::lrintf(x * 32768.f);
        s = std::clamp(s, -32768L, 32767L);
        put_u16(out, static_cast<uint16_t>(static_cast<int16_t>(s)));
    }
    write_file(path, out);
}

// --- STFT -------------------------------------------------------------------

void fft_radix2(std::vector<std::complex<double>>& a) {
    const size_t n = a.size();
    if (n == 0 || (n & (n - 1)) != 0)
        throw ContractViolation("fft: size must be a power of two, got " + std::to_string(n));
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
        const std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0);
            for (size_t k = 0; k < len / 2; ++k) {
                const auto u = a[i + k];
                const auto v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

Spectrogram stft_power(const AudioClip& clip, size_t n_fft, size_t win_samples,
                       size_t hop_samples) {
    const size_t n = clip.samples.size();
    if (n < win_samples)
        throw ContractViolation("stft_power: clip of " + std::to_string(n) +
                                " samples is shorter than one window (" +
                                std::to_string(win_samples) + ")");
    if (win_samples > n_fft)
        throw ContractViolation("stft_power: window exceeds n_fft");

    // periodic Hann
    std::vector<double> window(win_samples);
    for (size_t i = 0; i < win_samples; ++i)
        window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                         static_cast<double>(win_samples));

    const size_t T = (n - win_samples) / hop_samples + 1;
    const size_t bins = n_fft / 2 + 1;
    Spectrogram out(T, bins);
    std::vector<std::complex<double>> frame(n_fft);
    for (size_t t = 0; t < T; ++t) {
        const float* src = clip.samples.data() + t * hop_samples;
        for (size_t i = 0; i < win_samples; ++i) frame[i] = src[i] * window[i];
        std::fill(frame.begin() + static_cast<ptrdiff_t>(win_samples), frame.end(),
                  std::complex<double>(0.0));
        fft_radix2(frame);
        for (size_t k = 0; k < bins; ++k) out.at(t, k) = static_cast<float>(std::norm(frame[k]));
    }
    return out;
}

// --- mel --------------------------------------------------------------------

namespace {

// Slaney scale: linear below 1 kHz, logarithmic above.
double hz_to_mel(double f) {
    constexpr double lin_step = 200.0 / 3.0;
    if (f < 1000.0) return f / lin_step;
    const double log_step = std::log(6.4) / 27.0;
    return 15.0 + std::log(f / 1000.0) / log_step;
}

double mel_to_hz(double m) {
    constexpr double lin_step = 200.0 / 3.0;
    if (m < 15.0) return m * lin_step;
    const double log_step = std::log(6.4) / 27.0;
    return 1000.0 * std::exp(log_step * (m - 15.0));
}

}  // namespace

std::vector<float> mel_filterbank(size_t n_mels, size_t n_fft, double sample_rate,
                                  double fmin, double fmax) {
    const size_t bins = n_fft / 2 + 1;
    std::vector<double> edges(n_mels + 2);
    const double mlo = hz_to_mel(fmin), mhi = hz_to_mel(fmax);
    for (size_t i = 0; i < edges.size(); ++i)
        edges[i] = mel_to_hz(mlo + (mhi - mlo) * static_cast<double>(i) /
                                       static_cast<double>(n_mels + 1));

    std::vector<float> fb(n_mels * bins, 0.f);
    for (size_t m = 0; m < n_mels; ++m) {
        const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
        const double area = 2.0 / (hi - lo);  // unit-area normalization
        for (size_t k = 0; k < bins; ++k) {
            const double f = static_cast<double>(k) * sample_rate / static_cast<double>(n_fft);
            const double up = (f - lo) / (mid - lo);
            const double down = (hi - f) / (hi - mid);
            const double w = std::max(0.0, std::min(up, down));
            fb[m * bins + k] = static_cast<float>(w * area);
        }
    }
    return fb;
}

Spectrogram mel_project(const Spectrogram& power, size_t n_mels, double fmin, double fmax,
                        size_t n_fft, double sample_rate) {
    if (power.bins != n_fft / 2 + 1)
        throw ContractViolation("mel_project: expected " + std::to_string(n_fft / 2 + 1) +
                                " bins, got " + std::to_string(power.bins));
    const auto fb = mel_filterbank(n_mels, n_fft, sample_rate, fmin, fmax);
    Spectrogram out(power.frames, n_mels);
    for (size_t t = 0; t < power.frames; ++t)
        for (size_t m = 0; m < n_mels; ++m) {
            double acc = 0.0;
            const float* w = fb.data() + m * power.bins;
            const float* p = power.values.data() + t * power.bins;
            for (size_t k = 0; k < power.bins; ++k) acc += double(w[k]) * double(p[k]);
            out.at(t, m) = static_cast<float>(acc);
        }
    return out;
}

void log_compress(Spectrogram& spec) {
    for (float& v : spec.values) v = std::log(v + 1e-10f);
}

// --- normalization ----------------------------------------------------------

NormStats fit_stats(const std::vector<Spectrogram>& specs) {
    if (specs.empty()) throw ContractViolation("fit_stats: no spectrograms");
    const size_t bins = specs[0].bins;
    size_t total = 0;
    std::vector<double> sum(bins, 0.0), sumsq(bins, 0.0);
    for (const auto& s : specs) {
        if (s.bins != bins) throw ContractViolation("fit_stats: inconsistent bin counts");
        for (size_t t = 0; t < s.frames; ++t)
            for (size_t f = 0; f < bins; ++f) {
                const double v = s.at(t, f);
                sum[f] += v;
                sumsq[f] += v * v;
            }
        total += s.frames;
    }
    NormStats st;
    st.mean.resize(bins);
    st.stdev.resize(bins);
    for (size_t f = 0; f < bins; ++f) {
        const double m = sum[f] / static_cast<double>(total);
        const double var = std::max(0.0, sumsq[f] / static_cast<double>(total) - m * m);
        double sd = std::sqrt(var);
        if (sd < 1e-6) {
            std::cerr << "warning: feature bin " << f << " has zero variance, clamping std\n";
            sd = 1e-6;
        }
        st.mean[f] = static_cast<float>(m);
        st.stdev[f] = static_cast<float>(sd);
    }
    return st;
}

void normalize(Spectrogram& spec, const NormStats& stats) {
    if (stats.mean.size() != spec.bins || stats.stdev.size() != spec.bins)
        throw ContractViolation("normalize: stats have " + std::to_string(stats.mean.size()) +
                                " bins, spectrogram has " + std::to_string(spec.bins));
    for (size_t t = 0; t < spec.frames; ++t)
        for (size_t f = 0; f < spec.bins; ++f)
            spec.at(t, f) = (spec.at(t, f) - stats.mean[f]) / stats.stdev[f];
}

// --- crops ------------------------------------------------------------------

namespace {

Spectrogram slice(const Spectrogram& spec, size_t start, size_t frames) {
    Spectrogram out(frames, spec.bins);
    for (size_t t = 0; t < frames; ++t) {
        // edge-repeat past the end
        const size_t src = std::min(start + t, spec.frames - 1);
        std::copy_n(spec.values.data() + src * spec.bins, spec.bins,
                    out.values.data() + t * out.bins);
    }
    return out;
}

}  // namespace

Spectrogram random_crop(const Spectrogram& spec, size_t frames, std::mt19937_64& rng) {
    if (spec.frames == 0) throw ContractViolation("random_crop: empty spectrogram");
    if (spec.frames <= frames) return slice(spec, 0, frames);
    std::uniform_int_distribution<size_t> d(0, spec.frames - frames);
    return slice(spec, d(rng), frames);
}

std::array<Spectrogram, 3> fixed_crops(const Spectrogram& spec, size_t frames) {
    if (spec.frames == 0) throw ContractViolation("fixed_crops: empty spectrogram");
    if (spec.frames <= frames) {
        auto c = slice(spec, 0, frames);
        return {c, c, c};
    }
    const size_t last = spec.frames - frames;
    return {slice(spec, 0, frames), slice(spec, last / 2, frames), slice(spec, last, frames)};
}

// --- cache ------------------------------------------------------------------

void save_spectrogram(const std::string& path, const Spectrogram& spec) {
    std::vector<uint8_t> out;
    out.reserve(12 + 4 * spec.values.size());
    out.insert(out.end(), {'M', 'S', 'P', '1'});
    put_u32(out, static_cast<uint32_t>(spec.frames));
    put_u32(out, static_cast<uint32_t>(spec.bins));
    for (float v : spec.values) {
        uint32_t u;
        std::memcpy(&u, &v, 4);
        put_u32(out, u);
    }
    write_file(path, out);
}

Spectrogram load_spectrogram(const std::string& path) {
    const auto buf = read_file(path);
    auto fail = [&](const std::string& what, size_t off) {
        throw FormatError(path + ": " + what + " at byte offset " + std::to_string(off));
    };
    if (buf.size() < 12 || std::memcmp(buf.data(), "MSP1", 4) != 0) fail("bad magic", 0);
    const uint32_t T = read_u32(buf.data() + 4);
    const uint32_t F = read_u32(buf.data() + 8);
    if (T == 0 || F == 0) fail("zero dimension", 4);
    const size_t need = 12 + 4ull * T * F;
    if (buf.size() != need)
        fail("expected " + std::to_string(need) + " bytes, file has " +
                 std::to_string(buf.size()),
             buf.size());
    Spectrogram out(T, F);
    for (size_t i = 0; i < out.values.size(); ++i) {
        const uint32_t u = read_u32(buf.data() + 12 + 4 * i);
        std::memcpy(&out.values[i], &u, 4);
    }
    return out;
}

}  // namespace mfmasc
