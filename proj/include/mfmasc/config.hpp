#pragma once

// Flat key=value run configuration covering every knob of the model, the
// trainer, the augmentation, and the feature pipeline, plus data paths.
// Unknown and duplicate keys are rejected; emit -> parse -> emit is a fixed
// point.

#include <string>

#include "mfmasc/lcnn.hpp"
#include "mfmasc/train.hpp"

namespace mfmasc {

struct FeatureParams {
    size_t n_fft = 2048;
    size_t win_samples = 1764;
    size_t hop_samples = 882;
    size_t n_mels = 128;
    double fmin = 0.0;
    double fmax = 22050.0;
};

struct RunConfig {
    LCNNConfig model;
    TrainConfig train;
    FeatureParams features;
    std::string index_path;
    std::string cache_dir;
    std::string model_out = "model.lcn";
    std::string log_path = "train.log";

    void validate() const;
    std::string canonical_text() const;
    static RunConfig parse(const std::string& text);
    static RunConfig load(const std::string& path);
    void save(const std::string& path) const;
};

}  // namespace mfmasc
