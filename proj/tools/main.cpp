// mfmasc: acoustic-scene classifier command line.
// Subcommands: synth, ingest, features, train, evaluate, predict.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "mfmasc/config.hpp"
#include "mfmasc/dataset.hpp"
#include "mfmasc/train.hpp"

namespace fs = std::filesystem;
using namespace mfmasc;

namespace {

uint64_t fnv1a(const uint8_t* p, size_t n, uint64_t h = 14695981039346656037ull) {
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

std::string feature_tag(const FeatureParams& fp) {
    std::ostringstream ss;
    ss << fp.n_fft << ':' << fp.win_samples << ':' << fp.hop_samples << ':' << fp.n_mels << ':'
       << fp.fmin << ':' << fp.fmax;
    return ss.str();
}

// cache file name from the wav content and the feature parameters, so edits
// and parameter changes both invalidate
std::string cache_name(const std::string& wav_path, const FeatureParams& fp) {
    std::ifstream f(wav_path, std::ios::binary);
    if (!f) throw IoError("cannot open " + wav_path);
    std::stringstream ss;
    ss << f.rdbuf();
    const std::string bytes = ss.str();
    uint64_t h = fnv1a(reinterpret_cast<const uint8_t*>(bytes.data()), bytes.size());
    const std::string tag = feature_tag(fp);
    h = fnv1a(reinterpret_cast<const uint8_t*>(tag.data()), tag.size(), h);
    std::ostringstream name;
    name << std::hex << std::setw(16) << std::setfill('0') << h << ".msp";
    return name.str();
}

Spectrogram compute_logmel(const std::string& wav_path, const FeatureParams& fp) {
    const auto clip = load_wav(wav_path);
    if (clip.sample_rate != 44100)
        throw FormatError(wav_path + ": sample rate " + std::to_string(clip.sample_rate) +
                          " Hz not supported, expected 44100 (no resampling)");
    auto spec = mel_project(stft_power(clip, fp.n_fft, fp.win_samples, fp.hop_samples), fp.n_mels,
                            fp.fmin, fp.fmax, fp.n_fft, 44100.0);
    log_compress(spec);
    return spec;
}

// load from cache, computing and filling the cache on a miss
Spectrogram cached_logmel(const std::string& wav_path, const FeatureParams& fp,
                          const std::string& cache_dir, bool* was_cached = nullptr) {
    const auto file = fs::path(cache_dir) / cache_name(wav_path, fp);
    if (fs::exists(file)) {
        if (was_cached) *was_cached = true;
        return load_spectrogram(file.string());
    }
    if (was_cached) *was_cached = false;
    auto spec = compute_logmel(wav_path, fp);
    fs::create_directories(cache_dir);
    save_spectrogram(file.string(), spec);
    return spec;
}

std::string resolve_cache_dir(const std::string& flag, const RunConfig& cfg) {
    if (!flag.empty()) return flag;
    if (!cfg.cache_dir.empty()) return cfg.cache_dir;
    if (const char* env = std::getenv("MFMASC_CACHE"); env && *env) return env;
    return "cache";
}

LabeledSpecs gather(const DatasetIndex& index, const std::string& split,
                    const FeatureParams& fp, const std::string& cache_dir) {
    LabeledSpecs out;
    for (size_t i : index.of_split(split)) {
        out.specs.push_back(cached_logmel(index.entries[i].path, fp, cache_dir));
        out.labels.push_back(index.entries[i].label);
    }
    return out;
}

int cmd_synth(const std::string& out_dir, size_t per_class, size_t test_per_class,
              uint64_t seed) {
    const auto index = synth_corpus(out_dir, per_class, test_per_class, seed);
    std::cout << "wrote " << index.entries.size() << " clips under " << out_dir << "\n";
    return 0;
}

int cmd_ingest(const std::string& meta, const std::string& audio_root, const std::string& out) {
    const auto index = ingest(meta, audio_root);
    save_index(index, out);
    std::vector<size_t> counts(scene_labels().size(), 0);
    for (const auto& e : index.entries) ++counts[e.label];
    for (size_t c = 0; c < counts.size(); ++c)
        std::cout << scene_labels()[c] << '\t' << counts[c] << '\n';
    std::cout << "index with " << index.entries.size() << " entries written to " << out << '\n';
    return 0;
}

int cmd_features(const std::string& index_path, const std::string& cache_dir,
                 const FeatureParams& fp) {
    const auto index = load_index(index_path);
    size_t computed = 0, skipped = 0;
    std::vector<std::string> failures;
    for (const auto& e : index.entries) {
        try {
            bool cached = false;
            cached_logmel(e.path, fp, cache_dir, &cached);
            ++(cached ? skipped : computed);
        } catch (const std::exception& ex) {
            failures.push_back(ex.what());
        }
    }
    std::cout << "features: " << computed << " computed, " << skipped << " cached\n";
    if (!failures.empty()) {
        std::string msg = std::to_string(failures.size()) + " clips failed: ";
        for (size_t i = 0; i < failures.size(); ++i) {
            if (i) msg += "; ";
            msg += failures[i];
        }
        throw IoError(msg);
    }
    return 0;
}

int cmd_train(RunConfig cfg, const std::string& cache_flag) {
    cfg.validate();
    if (cfg.index_path.empty()) throw ConfigError("data.index is required for training");
    const auto cache_dir = resolve_cache_dir(cache_flag, cfg);
    const auto index = load_index(cfg.index_path);
    const auto train_set = gather(index, "train", cfg.features, cache_dir);
    const auto val_set = gather(index, "test", cfg.features, cache_dir);
    if (train_set.specs.empty()) throw ConfigError("index has no train split entries");

    auto model = build_lcnn(cfg.model, cfg.train.seed);
    std::ofstream log(cfg.log_path, std::ios::app);
    if (!log) throw IoError("cannot open log " + cfg.log_path);

    float best_val = -1.f;
    const auto on_epoch = [&](const EpochLog& e) {
        const auto pos = cycle_position(cfg.train.schedule, e.epoch - 1);
        if (pos.cycle_end) save_model(model, cfg.model_out);
        if (!val_set.specs.empty() && e.val_acc > best_val) {
            best_val = e.val_acc;
            save_model(model, cfg.model_out + ".best");
        }
        return true;
    };
    train(model, train_set, val_set, cfg.train, log, on_epoch);
    save_model(model, cfg.model_out);
    std::cout << "model written to " << cfg.model_out << '\n';
    return 0;
}

int cmd_evaluate(const std::string& model_path, const std::string& index_path,
                 const std::string& cache_flag, const RunConfig& cfg) {
    auto model = load_model(model_path);
    const auto cache_dir = resolve_cache_dir(cache_flag, cfg);
    const auto index = load_index(index_path);
    FeatureParams fp = cfg.features;
    fp.n_mels = model.cfg.input_bins;
    const auto data = gather(index, "test", fp, cache_dir);
    if (data.specs.empty()) throw ContractViolation("index has no test split entries");
    if (!data.specs.empty() && data.specs[0].bins != model.cfg.input_bins)
        throw ContractViolation("model expects " + std::to_string(model.cfg.input_bins) +
                                " mel bins, features have " + std::to_string(data.specs[0].bins));
    const auto metrics = evaluate(model, data, cfg.train.logit_mean);
    write_metrics_report(std::cout, metrics, scene_labels(), 5);
    return 0;
}

int cmd_predict(const std::string& model_path, const std::string& wav_path,
                const RunConfig& cfg) {
    auto model = load_model(model_path);
    FeatureParams fp = cfg.features;
    fp.n_mels = model.cfg.input_bins;
    const auto spec = compute_logmel(wav_path, fp);
    const auto probs = predict(model, spec, cfg.train.logit_mean);
    size_t best = 0;
    for (size_t c = 1; c < probs.size(); ++c)
        if (probs[c] > probs[best]) best = c;
    std::cout << (best < scene_labels().size() ? scene_labels()[best] : std::to_string(best));
    std::cout << '\t' << std::fixed << std::setprecision(6);
    for (size_t c = 0; c < probs.size(); ++c) std::cout << (c ? "," : "") << probs[c];
    std::cout << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acoustic scene classifier"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand

    std::string config_path, cache_flag;
    int64_t seed_flag = -1;
    size_t threads = 1;
    app.add_option("--config", config_path, "run configuration file");
    app.add_option("--seed", seed_flag, "override the run seed");
    app.add_option("--threads", threads, "worker threads (computation is deterministic)");

    auto* synth = app.add_subcommand("synth", "generate a synthetic labeled corpus");
    std::string synth_out;
    size_t per_class = 10, test_per_class = 0;
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--per-class", per_class, "training clips per class");
    synth->add_option("--test-per-class", test_per_class, "held-out clips per class");

    auto* ing = app.add_subcommand("ingest", "validate metadata and write an index");
    std::string meta, audio_root = ".", index_out = "index.tsv";
    ing->add_option("--meta", meta, "metadata TSV")->required();
    ing->add_option("--audio-root", audio_root, "directory audio paths resolve against");
    ing->add_option("--out", index_out, "index file to write");

    auto* feat = app.add_subcommand("features", "precompute cached spectrogram features");
    std::string feat_index;
    feat->add_option("--index", feat_index, "dataset index")->required();
    feat->add_option("--cache", cache_flag, "feature cache directory");

    auto* tr = app.add_subcommand("train", "train a model from a run configuration");
    tr->add_option("--cache", cache_flag, "feature cache directory");

    auto* ev = app.add_subcommand("evaluate", "report metrics on the test split");
    std::string model_path, eval_index;
    ev->add_option("--model", model_path, "model file")->required();
    ev->add_option("--index", eval_index, "dataset index")->required();
    ev->add_option("--cache", cache_flag, "feature cache directory");

    auto* pr = app.add_subcommand("predict", "classify one WAV file");
    std::string wav_path;
    pr->add_option("--model", model_path, "model file")->required();
    pr->add_option("--wav", wav_path, "input audio")->required();

    auto* dump = app.add_subcommand("dump-config", "print the effective configuration");

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg;
        if (!config_path.empty()) cfg = RunConfig::load(config_path);
        if (seed_flag >= 0) cfg.train.seed = static_cast<uint64_t>(seed_flag);

        if (synth->parsed())
            return cmd_synth(synth_out, per_class, test_per_class,
                             seed_flag >= 0 ? uint64_t(seed_flag) : cfg.train.seed);
        if (ing->parsed()) return cmd_ingest(meta, audio_root, index_out);
        if (feat->parsed())
            return cmd_features(feat_index, resolve_cache_dir(cache_flag, cfg), cfg.features);
        if (tr->parsed()) {
            if (config_path.empty()) throw ConfigError("train requires --config");
            return cmd_train(cfg, cache_flag);
        }
        if (ev->parsed()) return cmd_evaluate(model_path, eval_index, cache_flag, cfg);
        if (pr->parsed()) return cmd_predict(model_path, wav_path, cfg);
        if (dump->parsed()) {
            std::cout << cfg.canonical_text();
            return 0;
        }
    } catch (const std::exception& e) {
        const std::string what = e.what();
        std::cerr << (what.rfind("error[", 0) == 0 ? "" : "error[internal]: ") << what << '\n';
        return 1;
    }
    return 0;
}
