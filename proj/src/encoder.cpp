#include "jmfuse/encoder.hpp"

#include "jmfuse/errors.hpp"

namespace jmfuse {

EncoderParams init_encoder(const EncoderConfig& cfg, SplitMix64& rng) {
    if (cfg.stage_channels.empty()) throw ValidationError("encoder: stage_channels must be non-empty");
    if (cfg.kernel % 2 == 0 || cfg.kernel < 1) {
        throw ValidationError("encoder: kernel extent must be odd and positive");
    }
    EncoderParams p;
    const int64_t k3 = static_cast<int64_t>(cfg.kernel) * cfg.kernel * cfg.kernel;
    int64_t cin = cfg.in_channels;
    for (int64_t cout : cfg.stage_channels) {
        p.w.push_back(glorot_uniform({cout, cin, cfg.kernel, cfg.kernel, cfg.kernel},
                                     cin * k3, cout * k3, rng));
        p.b.push_back(Tensor::zeros({cout}, true));
        cin = cout;
    }
    return p;
}

Tensor encode_volume(const Tensor& x, const EncoderConfig& cfg, const EncoderParams& p) {
    if (x.rank() != 4 || x.dim(0) != cfg.in_channels) {
        throw DimensionError("encode_volume: expected [" + std::to_string(cfg.in_channels) +
                             ",S,S,S] input, got " + shape_str(x.shape()));
    }
    const int64_t f = cfg.pool_factor();
    for (int axis = 1; axis < 4; ++axis) {
        if (x.dim(axis) % f != 0) {
            throw DimensionError("encode_volume: extent " + std::to_string(x.dim(axis)) +
                                 " not divisible by the pooling factor " + std::to_string(f));
        }
    }
    Tensor h = x;
    const int padw = (cfg.kernel - 1) / 2;
    for (size_t s = 0; s < p.w.size(); ++s) {
        h = conv3d(h, p.w[s], p.b[s], 1, padw);
        h = relu(h);
        h = maxpool3d(h, cfg.pool);
    }
    return h;
}

Projection init_projection(int64_t in_dim, int64_t d, SplitMix64& rng) {
    Projection proj;
    proj.w = glorot_uniform({in_dim, d}, in_dim, d, rng);
    proj.b = Tensor::zeros({d}, true);
    return proj;
}

Tensor tokenize_and_project(const Tensor& fm, const Projection& proj) {
    return linear(channels_to_tokens(fm), proj.w, proj.b);
}

Tensor volume_to_tensor(const Volume& v, bool requires_grad) {
    return Tensor::from_data({v.channels, v.nz, v.ny, v.nx}, v.data, requires_grad);
}

} // namespace jmfuse
