#pragma once

// Squeeze-and-Excitation and Convolutional Block Attention Module, attached
// after a block's final MFM. Built from primitive tape ops, so gradients come
// for free. `bypass` freezes every gate at 1 and returns the input unchanged.

#include "mfmasc/layers.hpp"

namespace mfmasc {

template <typename T>
struct SEParams {
    LinearParams<T> fc1;  // C -> C/r
    LinearParams<T> fc2;  // C/r -> C
    size_t reduction = 4;
    bool bypass = false;

    size_t channels() const { return fc1.weight.shape[1]; }
};

template <typename T>
struct CBAMParams {
    LinearParams<T> mlp1;        // C -> C/r, shared between avg and max branch
    LinearParams<T> mlp2;        // C/r -> C
    Conv2dParams<T> spatial;     // 2 -> 1, k x k, padding (k-1)/2
    size_t reduction = 4;
    bool bypass = false;

    size_t channels() const { return mlp1.weight.shape[1]; }
};

template <typename T, typename Rng>
SEParams<T> make_se(size_t channels, size_t reduction, Rng& rng) {
    if (reduction < 1 || channels % reduction != 0)
        throw ConfigError("se: channels " + std::to_string(channels) +
                          " not divisible by reduction " + std::to_string(reduction));
    SEParams<T> p;
    p.reduction = reduction;
    p.fc1 = make_linear<T>(channels / reduction, channels, rng);
    p.fc2 = make_linear<T>(channels, channels / reduction, rng);
    return p;
}

template <typename T, typename Rng>
CBAMParams<T> make_cbam(size_t channels, size_t reduction, size_t spatial_kernel, Rng& rng) {
    if (reduction < 1 || channels % reduction != 0)
        throw ConfigError("cbam: channels " + std::to_string(channels) +
                          " not divisible by reduction " + std::to_string(reduction));
    if (spatial_kernel % 2 == 0)
        throw ConfigError("cbam: spatial kernel must be odd, got " +
                          std::to_string(spatial_kernel));
    CBAMParams<T> p;
    p.reduction = reduction;
    p.mlp1 = make_linear<T>(channels / reduction, channels, rng);
    p.mlp2 = make_linear<T>(channels, channels / reduction, rng);
    const size_t pad = (spatial_kernel - 1) / 2;
    p.spatial = make_conv2d<T>(1, 2, spatial_kernel, spatial_kernel, 1, 1, pad, pad, rng);
    return p;
}

template <typename T>
void check_channels(const char* name, const Tensor<T>& x, size_t expected) {
    if (x.rank() != 4)
        throw ContractViolation(std::string(name) + ": input must be (N,C,T,F), got " +
                                shape_str(x.shape));
    if (x.shape[1] != expected)
        throw ContractViolation(std::string(name) + ": input has " + std::to_string(x.shape[1]) +
                                " channels, module expects " + std::to_string(expected));
}

// x * sigmoid(fc2(relu(fc1(global_avg(x))))), gate broadcast over (T,F).
template <typename T>
Tensor<T> se_block(const Tensor<T>& x, const SEParams<T>& p) {
    check_channels("se_block", x, p.channels());
    if (p.bypass) return x;
    const size_t N = x.shape[0], C = x.shape[1];
    auto squeezed = reduce_mean(x, {2, 3}, false);            // (N,C)
    auto s = sigmoid(linear(relu(linear(squeezed, p.fc1)), p.fc2));
    return mul(x, reshape(s, {N, C, 1, 1}));
}

// Channel gate: sigmoid(MLP(avg_pool) + MLP(max_pool)), pools over (T,F).
template <typename T>
Tensor<T> cbam_channel(const Tensor<T>& x, const CBAMParams<T>& p) {
    check_channels("cbam_channel", x, p.channels());
    if (p.bypass) return x;
    const size_t N = x.shape[0], C = x.shape[1];
    auto mlp = [&](const Tensor<T>& v) { return linear(relu(linear(v, p.mlp1)), p.mlp2); };
    auto avg = reduce_mean(x, {2, 3}, false);
    auto mx = reduce_max(x, {2, 3}, false);
    auto a = sigmoid(add(mlp(avg), mlp(mx)));
    return mul(x, reshape(a, {N, C, 1, 1}));
}

// Spatial gate: sigmoid(conv([chan_avg ; chan_max])), map broadcast over C.
template <typename T>
Tensor<T> cbam_spatial(const Tensor<T>& x, const CBAMParams<T>& p) {
    if (x.rank() != 4)
        throw ContractViolation("cbam_spatial: input must be (N,C,T,F), got " +
                                shape_str(x.shape));
    if (p.bypass) return x;
    auto avg = reduce_mean(x, {1}, true);  // (N,1,T,F)
    auto mx = reduce_max(x, {1}, true);
    auto m = sigmoid(conv2d(concat(avg, mx, 1), p.spatial));
    return mul(x, m);
}

template <typename T>
Tensor<T> cbam(const Tensor<T>& x, const CBAMParams<T>& p) {
    return cbam_spatial(cbam_channel(x, p), p);
}

}  // namespace mfmasc
