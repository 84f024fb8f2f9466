#include "mfmasc/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "mfmasc/features.hpp"

namespace mfmasc {

const std::vector<std::string>& scene_labels() {
    static const std::vector<std::string> names = {
        "airport",      "bus",  "metro",         "metro_station",     "park",
        "public_square", "shopping_mall", "street_pedestrian", "street_traffic", "tram"};
    return names;
}

size_t label_index(const std::string& name) {
    const auto& names = scene_labels();
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw FormatError("unknown scene label '" + name + "'");
    return static_cast<size_t>(it - names.begin());
}

std::vector<size_t> DatasetIndex::of_split(const std::string& split) const {
    std::vector<size_t> out;
    for (size_t i = 0; i < entries.size(); ++i)
        if (entries[i].split == split) out.push_back(i);
    return out;
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, '\t')) {
        if (!field.empty() && field.back() == '\r') field.pop_back();
        out.push_back(field);
    }
    return out;
}

}  // namespace

DatasetIndex load_index(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open index " + path);
    std::string line;
    if (!std::getline(f, line)) throw FormatError(path + ": empty index file");
    if (split_tabs(line) != std::vector<std::string>{"path", "scene_label", "split"})
        throw FormatError(path + ": expected header 'path\\tscene_label\\tsplit'");
    DatasetIndex index;
    size_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto fields = split_tabs(line);
        if (fields.size() != 3)
            throw FormatError(path + ": line " + std::to_string(lineno) + " has " +
                              std::to_string(fields.size()) + " fields, expected 3");
        if (fields[2] != "train" && fields[2] != "test")
            throw FormatError(path + ": line " + std::to_string(lineno) + ": split '" +
                              fields[2] + "' is not train or test");
        index.entries.push_back({fields[0], label_index(fields[1]), fields[2]});
    }
    return index;
}

void save_index(const DatasetIndex& index, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f << "path\tscene_label\tsplit\n";
    for (const auto& e : index.entries)
        f << e.path << '\t' << scene_labels()[e.label] << '\t' << e.split << '\n';
    if (!f) throw IoError("short write to " + path);
}

DatasetIndex ingest(const std::string& meta_path, const std::string& audio_root) {
    std::ifstream f(meta_path);
    if (!f) throw IoError("cannot open metadata " + meta_path);
    std::string line;
    if (!std::getline(f, line)) throw FormatError(meta_path + ": empty metadata file");
    const auto header = split_tabs(line);
    auto col = [&](const std::string& name) -> ptrdiff_t {
        const auto it = std::find(header.begin(), header.end(), name);
        return it == header.end() ? -1 : it - header.begin();
    };
    const ptrdiff_t c_file = col("filename"), c_label = col("scene_label"), c_split = col("split");
    if (c_file < 0 || c_label < 0)
        throw FormatError(meta_path + ": header must name filename and scene_label columns");

    DatasetIndex index;
    std::vector<std::string> problems;
    size_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto fields = split_tabs(line);
        if (fields.size() <= static_cast<size_t>(std::max(c_file, c_label))) {
            problems.push_back("row " + std::to_string(lineno) + ": too few fields");
            continue;
        }
        IndexEntry e;
        e.path = (std::filesystem::path(audio_root) / fields[static_cast<size_t>(c_file)]).string();
        e.split = "train";
        if (c_split >= 0 && fields.size() > static_cast<size_t>(c_split) &&
            !fields[static_cast<size_t>(c_split)].empty())
            e.split = fields[static_cast<size_t>(c_split)];
        try {
            e.label = label_index(fields[static_cast<size_t>(c_label)]);
        } catch (const FormatError&) {
            problems.push_back("row " + std::to_string(lineno) + ": unknown label '" +
                               fields[static_cast<size_t>(c_label)] + "'");
            continue;
        }
        if (e.split != "train" && e.split != "test") {
            problems.push_back("row " + std::to_string(lineno) + ": bad split '" + e.split + "'");
            continue;
        }
        if (!std::filesystem::exists(e.path)) {
            problems.push_back("row " + std::to_string(lineno) + ": missing file " + e.path);
            continue;
        }
        index.entries.push_back(std::move(e));
    }
    if (!problems.empty()) {
        std::string msg = std::to_string(problems.size()) + " invalid rows in " + meta_path + ": ";
        for (size_t i = 0; i < problems.size(); ++i) {
            if (i) msg += "; ";
            msg += problems[i];
        }
        throw FormatError(msg);
    }
    return index;
}

namespace {

// RBJ cookbook bandpass (constant 0 dB peak gain)
struct Biquad {
    double b0, b1, b2, a1, a2;
    double z1 = 0.0, z2 = 0.0;

    Biquad(double center_hz, double q, double fs) {
        const double w0 = 2.0 * std::numbers::pi * center_hz / fs;
        const double alpha = std::sin(w0) / (2.0 * q);
        const double a0 = 1.0 + alpha;
        b0 = alpha / a0;
        b1 = 0.0;
        b2 = -alpha / a0;
        a1 = -2.0 * std::cos(w0) / a0;
        a2 = (1.0 - alpha) / a0;
    }

    double process(double x) {
        const double y = b0 * x + z1;
        z1 = b1 * x - a1 * y + z2;
        z2 = b2 * x - a2 * y;
        return y;
    }
};

}  // namespace

DatasetIndex synth_corpus(const std::string& out_dir, size_t train_per_class,
                          size_t test_per_class, uint64_t seed) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "audio", ec);
    if (ec) throw IoError("cannot create " + out_dir + "/audio: " + ec.message());

    constexpr double fs_hz = 44100.0;
    constexpr size_t n_samples = 441000;  // 10 s
    const size_t classes = scene_labels().size();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> white(-1.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    DatasetIndex index;
    for (size_t c = 0; c < classes; ++c) {
        // centers log-spaced 300 Hz .. 8 kHz, AM rate unique per class
        const double center = 300.0 * std::pow(8000.0 / 300.0, double(c) / double(classes - 1));
        const double am_rate = 0.8 + 0.9 * double(c);
        for (size_t i = 0; i < train_per_class + test_per_class; ++i) {
            const double jitter_c = center * std::pow(2.0, 0.15 * (unit(rng) - 0.5));
            const double jitter_r = am_rate * (0.9 + 0.2 * unit(rng));
            const double phase = 2.0 * std::numbers::pi * unit(rng);
            Biquad bp(jitter_c, 4.0, fs_hz);

            AudioClip clip;
            clip.samples.resize(n_samples);
            double peak = 0.0;
            std::vector<double> raw(n_samples);
            for (size_t n = 0; n < n_samples; ++n) {
                const double am =
                    0.55 + 0.45 * std::sin(2.0 * std::numbers::pi * jitter_r * double(n) / fs_hz +
                                           phase);
                const double band = bp.process(white(rng)) * am;
                const double floor_noise = 0.01 * white(rng);
                raw[n] = band + floor_noise;
                peak = std::max(peak, std::abs(raw[n]));
            }
            const double gain = peak > 0.0 ? 0.5 / peak : 1.0;
            for (size_t n = 0; n < n_samples; ++n)
                clip.samples[n] = static_cast<float>(raw[n] * gain);

            const std::string name =
                scene_labels()[c] + "-" + std::to_string(i) + ".wav";
            const std::string path = (fs::path(out_dir) / "audio" / name).string();
            write_wav16(path, clip);
            index.entries.push_back({path, c, i < train_per_class ? "train" : "test"});
        }
    }
    save_index(index, (fs::path(out_dir) / "index.tsv").string());
    // ingest-style metadata with paths relative to out_dir/audio
    {
        const auto meta = (fs::path(out_dir) / "meta.tsv").string();
        std::ofstream f(meta, std::ios::trunc);
        if (!f) throw IoError("cannot open " + meta + " for writing");
        f << "filename\tscene_label\tsplit\n";
        for (const auto& e : index.entries)
            f << fs::path(e.path).filename().string() << '\t' << scene_labels()[e.label] << '\t'
              << e.split << '\n';
    }
    return index;
}

}  // namespace mfmasc
