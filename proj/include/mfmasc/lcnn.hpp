#pragma once

// The LCNN classifier: Conv_1 + MFM + MaxPool, four conv blocks with MFM,
// batch normalization and optional SE/CBAM attention, then FC_1 + MFM
// (embedding) and FC_2 (logits).

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mfmasc/attention.hpp"
#include "mfmasc/layers.hpp"

namespace mfmasc {

enum class Attention { None, Se, Cbam, SeCbam };

std::string attention_name(Attention a);
Attention attention_from_name(const std::string& s);

struct LCNNConfig {
    size_t input_frames = 250;
    size_t input_bins = 128;
    // pre-MFM output channels of Conv_1 and the four block-final convs
    std::array<size_t, 5> channel_plan = {64, 96, 128, 64, 64};
    Attention attention = Attention::None;
    size_t num_classes = 10;
    size_t embedding_dim = 80;
    size_t se_reduction = 4;
    size_t cbam_kernel = 7;

    void validate() const;
    std::string canonical_text() const;
    static LCNNConfig from_text(const std::string& text);
};

struct LCNNBlock {
    Conv2dParams<float> conv_a;  // 1x1 doubling conv
    BatchNormParams<float> bn_a;
    Conv2dParams<float> conv_main;  // 3x3, padding 1
    std::optional<SEParams<float>> se;
    std::optional<CBAMParams<float>> cbam;
    bool pool_after = false;
    std::optional<BatchNormParams<float>> bn_post;
};

struct LCNNModel {
    LCNNConfig cfg;
    Conv2dParams<float> conv1;
    std::vector<LCNNBlock> blocks;
    LinearParams<float> fc1, fc2;
    // Feature standardization fitted on the training split; stored with the
    // model so prediction from raw audio is self-contained.
    Tensor<float> norm_mean, norm_std;
};

struct ShapeTrace {
    std::vector<size_t> mfm_channels;  // after each block-final MFM (and MFM_1)
    size_t final_time = 0, final_freq = 0, final_channels = 0;
    size_t flatten_dim = 0;
};

ShapeTrace trace_shapes(const LCNNConfig& cfg);

LCNNModel build_lcnn(const LCNNConfig& cfg, uint64_t seed);

// Full pass to logits (N, num_classes). Training mode routes batchnorm to
// batch statistics and updates running stats.
Tensor<float> lcnn_forward(LCNNModel& m, const Tensor<float>& x, bool training);

// Output of MFM_FC1, inference mode: (N, embedding_dim).
Tensor<float> lcnn_embed(LCNNModel& m, const Tensor<float>& x);

// Trainable scalar parameter count (conv/linear weights and biases, batchnorm
// affine terms, attention parameters).
size_t param_count(const LCNNModel& m);

struct NamedTensor {
    std::string name;
    Tensor<float>* tensor;
};

// Trainable parameters, in fixed order.
std::vector<NamedTensor> parameters(LCNNModel& m);
// Everything serialized: parameters plus running stats and norm stats.
std::vector<NamedTensor> state_tensors(LCNNModel& m);

void save_model(LCNNModel& m, const std::string& path);
LCNNModel load_model(const std::string& path);

}  // namespace mfmasc
