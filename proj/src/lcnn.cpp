#include "mfmasc/lcnn.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

namespace mfmasc {

std::string attention_name(Attention a) {
    switch (a) {
        case Attention::None: return "none";
        case Attention::Se: return "se";
        case Attention::Cbam: return "cbam";
        case Attention::SeCbam: return "se+cbam";
    }
    return "none";
}

Attention attention_from_name(const std::string& s) {
    if (s == "none" || s == "-") return Attention::None;
    if (s == "se") return Attention::Se;
    if (s == "cbam") return Attention::Cbam;
    if (s == "se+cbam") return Attention::SeCbam;
    throw ConfigError("unknown attention mode '" + s + "' (none|se|cbam|se+cbam)");
}

void LCNNConfig::validate() const {
    for (size_t c : channel_plan)
        if (c < 2 || c % 2 != 0)
            throw ConfigError("channel plan entry " + std::to_string(c) +
                              " must be even (MFM halves channels)");
    if (input_frames < 16)
        throw ConfigError("input_frames " + std::to_string(input_frames) +
                          " too small: four pooling halvings need >= 16");
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (embedding_dim < 1) throw ConfigError("embedding_dim must be >= 1");
    if (se_reduction < 1) throw ConfigError("se_reduction must be >= 1");
    if (cbam_kernel % 2 == 0)
        throw ConfigError("cbam_kernel must be odd, got " + std::to_string(cbam_kernel));
    if (attention != Attention::None) {
        for (size_t c : channel_plan)
            if ((c / 2) % se_reduction != 0)
                throw ConfigError("post-MFM channels " + std::to_string(c / 2) +
                                  " not divisible by reduction " + std::to_string(se_reduction));
    }
    trace_shapes(*this);  // throws on a degenerate shape chain
}

ShapeTrace trace_shapes(const LCNNConfig& cfg) {
    ShapeTrace tr;
    // Conv_1: kernel 7x3, stride 1, time padding 3, frequency padding 0.
    if (cfg.input_bins < 3)
        throw ConfigError("input_bins " + std::to_string(cfg.input_bins) + " below kernel width");
    size_t t = cfg.input_frames;
    size_t f = cfg.input_bins - 2;
    tr.mfm_channels.push_back(cfg.channel_plan[0] / 2);
    t = pool_out_extent(t, 2, 2, true);
    f = pool_out_extent(f, 2, 2, true);
    const bool pool_after[4] = {true, true, false, true};
    for (size_t b = 0; b < 4; ++b) {
        tr.mfm_channels.push_back(cfg.channel_plan[b + 1] / 2);
        if (pool_after[b]) {
            t = pool_out_extent(t, 2, 2, true);
            f = pool_out_extent(f, 2, 2, true);
        }
    }
    tr.final_time = t;
    tr.final_freq = f;
    tr.final_channels = cfg.channel_plan[4] / 2;
    tr.flatten_dim = t * f * tr.final_channels;
    return tr;
}

std::string LCNNConfig::canonical_text() const {
    std::ostringstream os;
    os << "attention=" << attention_name(attention) << "\n";
    os << "cbam_kernel=" << cbam_kernel << "\n";
    os << "channel_plan=";
    for (size_t i = 0; i < channel_plan.size(); ++i) os << (i ? "," : "") << channel_plan[i];
    os << "\n";
    os << "embedding_dim=" << embedding_dim << "\n";
    os << "input_bins=" << input_bins << "\n";
    os << "input_frames=" << input_frames << "\n";
    os << "num_classes=" << num_classes << "\n";
    os << "se_reduction=" << se_reduction << "\n";
    return os.str();
}

LCNNConfig LCNNConfig::from_text(const std::string& text) {
    LCNNConfig cfg;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("model config line without '=': " + line);
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        if (key == "attention") {
            cfg.attention = attention_from_name(val);
        } else if (key == "cbam_kernel") {
            cfg.cbam_kernel = std::stoul(val);
        } else if (key == "channel_plan") {
            std::istringstream vs(val);
            std::string tok;
            size_t i = 0;
            while (std::getline(vs, tok, ',')) {
                if (i >= cfg.channel_plan.size())
                    throw ConfigError("channel_plan has more than 5 entries");
                cfg.channel_plan[i++] = std::stoul(tok);
            }
            if (i != cfg.channel_plan.size())
                throw ConfigError("channel_plan needs 5 entries");
        } else if (key == "embedding_dim") {
            cfg.embedding_dim = std::stoul(val);
        } else if (key == "input_bins") {
            cfg.input_bins = std::stoul(val);
        } else if (key == "input_frames") {
            cfg.input_frames = std::stoul(val);
        } else if (key == "num_classes") {
            cfg.num_classes = std::stoul(val);
        } else if (key == "se_reduction") {
            cfg.se_reduction = std::stoul(val);
        } else {
            throw ConfigError("unknown model config key '" + key + "'");
        }
    }
    cfg.validate();
    return cfg;
}

LCNNModel build_lcnn(const LCNNConfig& cfg, uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    LCNNModel m;
    m.cfg = cfg;
    m.conv1 = make_conv2d<float>(cfg.channel_plan[0], 1, 7, 3, 1, 1, 3, 0, rng);

    const bool pool_after[4] = {true, true, false, true};
    const bool bn_post[4] = {true, false, true, false};
    size_t in_ch = cfg.channel_plan[0] / 2;
    for (size_t b = 0; b < 4; ++b) {
        LCNNBlock blk;
        blk.conv_a = make_conv2d<float>(2 * in_ch, in_ch, 1, 1, 1, 1, 0, 0, rng);
        blk.bn_a = make_batchnorm<float>(in_ch);
        blk.conv_main = make_conv2d<float>(cfg.channel_plan[b + 1], in_ch, 3, 3, 1, 1, 1, 1, rng);
        const size_t out_ch = cfg.channel_plan[b + 1] / 2;
        if (cfg.attention == Attention::Se || cfg.attention == Attention::SeCbam)
            blk.se = make_se<float>(out_ch, cfg.se_reduction, rng);
        if (cfg.attention == Attention::Cbam || cfg.attention == Attention::SeCbam)
            blk.cbam = make_cbam<float>(out_ch, cfg.se_reduction, cfg.cbam_kernel, rng);
        blk.pool_after = pool_after[b];
        if (bn_post[b]) blk.bn_post = make_batchnorm<float>(out_ch);
        m.blocks.push_back(std::move(blk));
        in_ch = out_ch;
    }

    const ShapeTrace tr = trace_shapes(cfg);
    m.fc1 = make_linear<float>(2 * cfg.embedding_dim, tr.flatten_dim, rng);
    m.fc2 = make_linear<float>(cfg.num_classes, cfg.embedding_dim, rng);
    m.norm_mean = Tensor<float>::zeros({cfg.input_bins});
    m.norm_std = Tensor<float>::full({cfg.input_bins}, 1.f);
    return m;
}

namespace {

Tensor<float> run_to_embedding(LCNNModel& m, const Tensor<float>& x, bool training) {
    if (x.rank() != 4 || x.shape[1] != 1 || x.shape[2] != m.cfg.input_frames ||
        x.shape[3] != m.cfg.input_bins)
        throw ContractViolation("lcnn: input must be (N,1," + std::to_string(m.cfg.input_frames) +
                                "," + std::to_string(m.cfg.input_bins) + "), got " +
                                shape_str(x.shape));
    auto h = maxpool2d(mfm(conv2d(x, m.conv1)));
    for (auto& blk : m.blocks) {
        h = batchnorm(mfm(conv2d(h, blk.conv_a)), blk.bn_a, training);
        h = mfm(conv2d(h, blk.conv_main));
        if (blk.se) h = se_block(h, *blk.se);
        if (blk.cbam) h = cbam(h, *blk.cbam);
        if (blk.pool_after) h = maxpool2d(h);
        if (blk.bn_post) h = batchnorm(h, *blk.bn_post, training);
    }
    const size_t n = h.shape[0];
    h = reshape(h, {n, h.numel() / n});
    return mfm(linear(h, m.fc1));
}

}  // namespace

Tensor<float> lcnn_forward(LCNNModel& m, const Tensor<float>& x, bool training) {
    return linear(run_to_embedding(m, x, training), m.fc2);
}

Tensor<float> lcnn_embed(LCNNModel& m, const Tensor<float>& x) {
    return run_to_embedding(m, x, false);
}

std::vector<NamedTensor> parameters(LCNNModel& m) {
    std::vector<NamedTensor> out;
    auto conv = [&](const std::string& prefix, Conv2dParams<float>& p) {
        out.push_back({prefix + ".weight", &p.weight});
        out.push_back({prefix + ".bias", &p.bias});
    };
    auto lin = [&](const std::string& prefix, LinearParams<float>& p) {
        out.push_back({prefix + ".weight", &p.weight});
        out.push_back({prefix + ".bias", &p.bias});
    };
    auto bn = [&](const std::string& prefix, BatchNormParams<float>& p) {
        out.push_back({prefix + ".gamma", &p.gamma});
        out.push_back({prefix + ".beta", &p.beta});
    };
    conv("conv1", m.conv1);
    for (size_t b = 0; b < m.blocks.size(); ++b) {
        const std::string pre = "block" + std::to_string(b + 2);
        auto& blk = m.blocks[b];
        conv(pre + ".conv_a", blk.conv_a);
        bn(pre + ".bn_a", blk.bn_a);
        conv(pre + ".conv", blk.conv_main);
        if (blk.se) {
            lin(pre + ".se.fc1", blk.se->fc1);
            lin(pre + ".se.fc2", blk.se->fc2);
        }
        if (blk.cbam) {
            lin(pre + ".cbam.mlp1", blk.cbam->mlp1);
            lin(pre + ".cbam.mlp2", blk.cbam->mlp2);
            conv(pre + ".cbam.spatial", blk.cbam->spatial);
        }
        if (blk.bn_post) bn(pre + ".bn", *blk.bn_post);
    }
    lin("fc1", m.fc1);
    lin("fc2", m.fc2);
    return out;
}

std::vector<NamedTensor> state_tensors(LCNNModel& m) {
    auto out = parameters(m);
    auto bn_stats = [&](const std::string& prefix, BatchNormParams<float>& p) {
        out.push_back({prefix + ".running_mean", &p.running_mean});
        out.push_back({prefix + ".running_var", &p.running_var});
    };
    for (size_t b = 0; b < m.blocks.size(); ++b) {
        const std::string pre = "block" + std::to_string(b + 2);
        bn_stats(pre + ".bn_a", m.blocks[b].bn_a);
        if (m.blocks[b].bn_post) bn_stats(pre + ".bn", *m.blocks[b].bn_post);
    }
    out.push_back({"norm.mean", &m.norm_mean});
    out.push_back({"norm.std", &m.norm_std});
    return out;
}

size_t param_count(const LCNNModel& m) {
    size_t total = 0;
    for (const auto& nt : parameters(const_cast<LCNNModel&>(m))) total += nt.tensor->numel();
    return total;
}

// ---------------------------------------------------------------------------
// Serialization: magic "LCN1", u32 version, length-prefixed config text, then
// per-tensor records (u32 name length, name, u8 rank, u32 extents, f32 data).
// Little-endian throughout.

namespace {

constexpr char kMagic[4] = {'L', 'C', 'N', '1'};
constexpr uint32_t kVersion = 1;

class Writer {
  public:
    explicit Writer(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw IoError("cannot open '" + path + "' for writing");
    }
    void bytes(const void* p, size_t n) {
        out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    }
    void u8(uint8_t v) { bytes(&v, 1); }
    void u32(uint32_t v) { bytes(&v, 4); }
    void str(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    bool ok() const { return static_cast<bool>(out_); }

  private:
    std::ofstream out_;
};

class Reader {
  public:
    explicit Reader(const std::string& path) : in_(path, std::ios::binary) {
        if (!in_) throw IoError("cannot open '" + path + "' for reading");
    }
    void bytes(void* p, size_t n) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<size_t>(in_.gcount()) != n)
            throw FormatError("model file truncated at byte offset " + std::to_string(offset_));
        offset_ += n;
    }
    uint8_t u8() {
        uint8_t v;
        bytes(&v, 1);
        return v;
    }
    uint32_t u32() {
        uint32_t v;
        bytes(&v, 4);
        return v;
    }
    std::string str(size_t max_len = 1 << 20) {
        const uint32_t n = u32();
        if (n > max_len)
            throw FormatError("implausible string length " + std::to_string(n) +
                              " at byte offset " + std::to_string(offset_ - 4));
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }
    size_t offset() const { return offset_; }

  private:
    std::ifstream in_;
    size_t offset_ = 0;
};

}  // namespace

void save_model(LCNNModel& m, const std::string& path) {
    Writer w(path);
    w.bytes(kMagic, 4);
    w.u32(kVersion);
    w.str(m.cfg.canonical_text());
    auto state = state_tensors(m);
    w.u32(static_cast<uint32_t>(state.size()));
    for (const auto& nt : state) {
        w.str(nt.name);
        const Tensor<float>& t = *nt.tensor;
        w.u8(static_cast<uint8_t>(t.rank()));
        for (size_t d : t.shape) w.u32(static_cast<uint32_t>(d));
        w.bytes(t.ptr(), t.numel() * sizeof(float));
    }
    if (!w.ok()) throw IoError("write failure on '" + path + "'");
}

LCNNModel load_model(const std::string& path) {
    Reader r(path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError("bad magic bytes at byte offset 0 (not a model file)");
    const uint32_t version = r.u32();
    if (version != kVersion)
        throw FormatError("unsupported model format version " + std::to_string(version) +
                          " at byte offset 4");
    const std::string cfg_text = r.str();
    LCNNConfig cfg = LCNNConfig::from_text(cfg_text);
    LCNNModel m = build_lcnn(cfg, 0);

    auto state = state_tensors(m);
    const uint32_t count = r.u32();
    if (count != state.size())
        throw FormatError("model file has " + std::to_string(count) + " tensors, config implies " +
                          std::to_string(state.size()));
    for (auto& nt : state) {
        const size_t rec_off = r.offset();
        const std::string name = r.str();
        if (name != nt.name)
            throw FormatError("unexpected tensor '" + name + "' (expected '" + nt.name +
                              "') at byte offset " + std::to_string(rec_off));
        const uint8_t rank = r.u8();
        Shape shape(rank);
        for (auto& d : shape) d = r.u32();
        if (shape != nt.tensor->shape)
            throw FormatError("tensor '" + name + "' has shape " + shape_str(shape) +
                              ", expected " + shape_str(nt.tensor->shape) + " at byte offset " +
                              std::to_string(rec_off));
        r.bytes(nt.tensor->ptr(), nt.tensor->numel() * sizeof(float));
    }
    return m;
}

}  // namespace mfmasc
