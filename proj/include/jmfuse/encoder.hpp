#pragma once

#include <cstdint>
#include <vector>

#include "jmfuse/rng.hpp"
#include "jmfuse/tensor.hpp"
#include "jmfuse/volume.hpp"

namespace jmfuse {

// Stack of conv(3, pad 1, stride 1) -> ReLU -> maxpool(2) stages. Input extents
// must be divisible by 2^(number of stages).
struct EncoderConfig {
    int64_t in_channels = 1;
    std::vector<int64_t> stage_channels{8, 16, 32};
    int kernel = 3;
    int pool = 2;

    int64_t out_channels() const { return stage_channels.back(); }
    int64_t pool_factor() const {
        int64_t f = 1;
        for (size_t i = 0; i < stage_channels.size(); ++i) f *= pool;
        return f;
    }
};

struct EncoderParams {
    std::vector<Tensor> w; // per stage [c_out, c_in, k, k, k]
    std::vector<Tensor> b; // per stage [c_out]
};

EncoderParams init_encoder(const EncoderConfig& cfg, SplitMix64& rng);

// [c_in, S, S, S] -> [C, S/2^stages, ...] feature map
Tensor encode_volume(const Tensor& x, const EncoderConfig& cfg, const EncoderParams& p);

// Modality-specific linear map from encoder channels into the attention embedding.
struct Projection {
    Tensor w; // [C, d]
    Tensor b; // [d]
};

Projection init_projection(int64_t in_dim, int64_t d, SplitMix64& rng);

// [C, h, w, d3] -> token matrix [h*w*d3, d]; rows ordered z, y, x nested with x fastest
Tensor tokenize_and_project(const Tensor& fm, const Projection& proj);

// Volume channel/data layout matches tensor layout, so this is a straight copy.
Tensor volume_to_tensor(const Volume& v, bool requires_grad = false);

} // namespace jmfuse
