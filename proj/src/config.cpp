#include "mfmasc/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace mfmasc {

namespace {

struct Key {
    const char* name;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

size_t to_size(const std::string& key, const std::string& v) {
    size_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size())
        throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    return out;
}

double to_real(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        const double out = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

// shortest representation that parses back to the same value
template <typename F>
std::string fmt_real(F v) {
    char buf[64];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, p);
}

std::string fmt_plan(const std::array<size_t, 5>& plan) {
    std::string out;
    for (size_t i = 0; i < plan.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(plan[i]);
    }
    return out;
}

std::array<size_t, 5> parse_plan(const std::string& key, const std::string& v) {
    std::array<size_t, 5> plan{};
    std::stringstream ss(v);
    std::string part;
    size_t i = 0;
    while (std::getline(ss, part, ',')) {
        if (i >= 5) throw ConfigError(key + ": expected 5 comma-separated sizes, got '" + v + "'");
        plan[i++] = to_size(key, part);
    }
    if (i != 5) throw ConfigError(key + ": expected 5 comma-separated sizes, got '" + v + "'");
    return plan;
}

const std::vector<Key>& keys() {
    static const std::vector<Key> table = {
        {"model.attention", [](const RunConfig& c) { return attention_name(c.model.attention); },
         [](RunConfig& c, const std::string& v) { c.model.attention = attention_from_name(v); }},
        {"model.input_frames",
         [](const RunConfig& c) { return std::to_string(c.model.input_frames); },
         [](RunConfig& c, const std::string& v) {
             c.model.input_frames = to_size("model.input_frames", v);
         }},
        {"model.input_bins", [](const RunConfig& c) { return std::to_string(c.model.input_bins); },
         [](RunConfig& c, const std::string& v) {
             c.model.input_bins = to_size("model.input_bins", v);
         }},
        {"model.channel_plan", [](const RunConfig& c) { return fmt_plan(c.model.channel_plan); },
         [](RunConfig& c, const std::string& v) {
             c.model.channel_plan = parse_plan("model.channel_plan", v);
         }},
        {"model.num_classes",
         [](const RunConfig& c) { return std::to_string(c.model.num_classes); },
         [](RunConfig& c, const std::string& v) {
             c.model.num_classes = to_size("model.num_classes", v);
         }},
        {"model.embedding_dim",
         [](const RunConfig& c) { return std::to_string(c.model.embedding_dim); },
         [](RunConfig& c, const std::string& v) {
             c.model.embedding_dim = to_size("model.embedding_dim", v);
         }},
        {"model.se_reduction",
         [](const RunConfig& c) { return std::to_string(c.model.se_reduction); },
         [](RunConfig& c, const std::string& v) {
             c.model.se_reduction = to_size("model.se_reduction", v);
         }},
        {"model.cbam_kernel",
         [](const RunConfig& c) { return std::to_string(c.model.cbam_kernel); },
         [](RunConfig& c, const std::string& v) {
             c.model.cbam_kernel = to_size("model.cbam_kernel", v);
         }},
        {"train.lr0", [](const RunConfig& c) { return fmt_real(c.train.lr0); },
         [](RunConfig& c, const std::string& v) {
             c.train.lr0 = static_cast<float>(to_real("train.lr0", v));
         }},
        {"train.batch_size", [](const RunConfig& c) { return std::to_string(c.train.batch_size); },
         [](RunConfig& c, const std::string& v) {
             c.train.batch_size = to_size("train.batch_size", v);
         }},
        {"train.momentum", [](const RunConfig& c) { return fmt_real(c.train.momentum); },
         [](RunConfig& c, const std::string& v) {
             c.train.momentum = static_cast<float>(to_real("train.momentum", v));
         }},
        {"train.weight_decay",
         [](const RunConfig& c) { return fmt_real(c.train.weight_decay); },
         [](RunConfig& c, const std::string& v) {
             c.train.weight_decay = static_cast<float>(to_real("train.weight_decay", v));
         }},
        {"train.epochs", [](const RunConfig& c) { return std::to_string(c.train.epochs); },
         [](RunConfig& c, const std::string& v) { c.train.epochs = to_size("train.epochs", v); }},
        {"train.t0", [](const RunConfig& c) { return std::to_string(c.train.schedule.t0); },
         [](RunConfig& c, const std::string& v) { c.train.schedule.t0 = to_size("train.t0", v); }},
        {"train.tmult", [](const RunConfig& c) { return std::to_string(c.train.schedule.tmult); },
         [](RunConfig& c, const std::string& v) {
             c.train.schedule.tmult = to_size("train.tmult", v);
         }},
        {"train.eta_min",
         [](const RunConfig& c) { return fmt_real(c.train.schedule.eta_min); },
         [](RunConfig& c, const std::string& v) {
             c.train.schedule.eta_min = static_cast<float>(to_real("train.eta_min", v));
         }},
        {"train.seed", [](const RunConfig& c) { return std::to_string(c.train.seed); },
         [](RunConfig& c, const std::string& v) { c.train.seed = to_size("train.seed", v); }},
        {"train.logit_mean", [](const RunConfig& c) { return fmt_bool(c.train.logit_mean); },
         [](RunConfig& c, const std::string& v) {
             c.train.logit_mean = to_bool("train.logit_mean", v);
         }},
        {"augment.use_mixup",
         [](const RunConfig& c) { return fmt_bool(c.train.augment.use_mixup); },
         [](RunConfig& c, const std::string& v) {
             c.train.augment.use_mixup = to_bool("augment.use_mixup", v);
         }},
        {"augment.use_specaug",
         [](const RunConfig& c) { return fmt_bool(c.train.augment.use_specaug); },
         [](RunConfig& c, const std::string& v) {
             c.train.augment.use_specaug = to_bool("augment.use_specaug", v);
         }},
        {"augment.mixup_alpha",
         [](const RunConfig& c) { return fmt_real(c.train.augment.mixup_alpha); },
         [](RunConfig& c, const std::string& v) {
             c.train.augment.mixup_alpha = static_cast<float>(to_real("augment.mixup_alpha", v));
         }},
        {"augment.mixup_per_example",
         [](const RunConfig& c) { return fmt_bool(c.train.augment.mixup_per_example); },
         [](RunConfig& c, const std::string& v) {
             c.train.augment.mixup_per_example = to_bool("augment.mixup_per_example", v);
         }},
        {"augment.n_time_masks",
         [](const RunConfig& c) { return std::to_string(c.train.augment.n_time_masks); },
         [](RunConfig& c, const std::string& v) {
             c.train.augment.n_time_masks = to_size("augment.n_time_masks", v);
         }},
        {"augment.n_freq_masks",
         [](const RunConfig& c) { return std::to_string(c.train.augment.n_freq_masks); },
         [](RunConfig& c, const std::string& v) {
             c.train.augment.n_freq_masks = to_size("augment.n_freq_masks", v);
         }},
        {"augment.max_time_width",
         [](const RunConfig& c) { return std::to_string(c.train.augment.max_time_width); },
         [](RunConfig& c, const std::string& v) {
             c.train.augment.max_time_width = to_size("augment.max_time_width", v);
         }},
        {"augment.max_freq_width",
         [](const RunConfig& c) { return std::to_string(c.train.augment.max_freq_width); },
         [](RunConfig& c, const std::string& v) {
             c.train.augment.max_freq_width = to_size("augment.max_freq_width", v);
         }},
        {"features.n_fft", [](const RunConfig& c) { return std::to_string(c.features.n_fft); },
         [](RunConfig& c, const std::string& v) {
             c.features.n_fft = to_size("features.n_fft", v);
         }},
        {"features.win_samples",
         [](const RunConfig& c) { return std::to_string(c.features.win_samples); },
         [](RunConfig& c, const std::string& v) {
             c.features.win_samples = to_size("features.win_samples", v);
         }},
        {"features.hop_samples",
         [](const RunConfig& c) { return std::to_string(c.features.hop_samples); },
         [](RunConfig& c, const std::string& v) {
             c.features.hop_samples = to_size("features.hop_samples", v);
         }},
        {"features.n_mels", [](const RunConfig& c) { return std::to_string(c.features.n_mels); },
         [](RunConfig& c, const std::string& v) {
             c.features.n_mels = to_size("features.n_mels", v);
         }},
        {"features.fmin", [](const RunConfig& c) { return fmt_real(c.features.fmin); },
         [](RunConfig& c, const std::string& v) {
             c.features.fmin = to_real("features.fmin", v);
         }},
        {"features.fmax", [](const RunConfig& c) { return fmt_real(c.features.fmax); },
         [](RunConfig& c, const std::string& v) {
             c.features.fmax = to_real("features.fmax", v);
         }},
        {"data.index", [](const RunConfig& c) { return c.index_path; },
         [](RunConfig& c, const std::string& v) { c.index_path = v; }},
        {"data.cache_dir", [](const RunConfig& c) { return c.cache_dir; },
         [](RunConfig& c, const std::string& v) { c.cache_dir = v; }},
        {"out.model", [](const RunConfig& c) { return c.model_out; },
         [](RunConfig& c, const std::string& v) { c.model_out = v; }},
        {"out.log", [](const RunConfig& c) { return c.log_path; },
         [](RunConfig& c, const std::string& v) { c.log_path = v; }},
    };
    return table;
}

std::string strip(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

void RunConfig::validate() const {
    model.validate();
    train.validate();
    train.augment.validate(model.input_frames, model.input_bins);
    if (features.n_mels != model.input_bins)
        throw ConfigError("features.n_mels (" + std::to_string(features.n_mels) +
                          ") must match model.input_bins (" + std::to_string(model.input_bins) +
                          ")");
    if (features.n_fft == 0 || (features.n_fft & (features.n_fft - 1)) != 0)
        throw ConfigError("features.n_fft must be a power of two");
    if (features.win_samples > features.n_fft)
        throw ConfigError("features.win_samples exceeds features.n_fft");
    if (features.hop_samples == 0) throw ConfigError("features.hop_samples must be positive");
    if (features.fmin < 0.0 || features.fmax <= features.fmin)
        throw ConfigError("features frequency range is empty");
}

std::string RunConfig::canonical_text() const {
    std::string out;
    for (const auto& k : keys()) out += std::string(k.name) + "=" + k.get(*this) + "\n";
    return out;
}

RunConfig RunConfig::parse(const std::string& text) {
    RunConfig cfg;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = strip(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key=value, got '" +
                              line + "'");
        const std::string key = strip(line.substr(0, eq));
        const std::string val = strip(line.substr(eq + 1));
        const auto it = std::find_if(keys().begin(), keys().end(),
                                     [&](const Key& k) { return key == k.name; });
        if (it == keys().end())
            throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        if (!seen.insert(key).second)
            throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
        it->set(cfg, val);
    }
    return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str());
}

void RunConfig::save(const std::string& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f << canonical_text();
    if (!f) throw IoError("short write to " + path);
}

}  // namespace mfmasc
