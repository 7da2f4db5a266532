#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "jmfuse/encoder.hpp"
#include "jmfuse/rng.hpp"
#include "jmfuse/tensor.hpp"

namespace jmfuse {

// Q/K/V/output projections of one attention block, all d x d affine maps.
struct AttentionParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    int heads = 4;
};

AttentionParams init_attention(int64_t d, int heads, SplitMix64& rng);

// project -> multi-head scaled dot-product (scale 1/sqrt(d/heads)) -> output map
Tensor multihead_attention(const Tensor& q_in, const Tensor& kv_in, const AttentionParams& p);

// Concatenate both token sequences (2N x d), self-attend, split back into the
// modality halves, pool each half, and sum the two means.
Tensor self_attention_fuse(const Tensor& f_smri, const Tensor& f_jsm, const AttentionParams& p);

struct BottleneckState {
    Tensor tokens; // [B, d] learnable
    AttentionParams theta_smri, theta_jsm;
};

BottleneckState init_bottleneck(int64_t d, int64_t n_tokens, int heads, SplitMix64& rng);

// Each modality self-attends over [F_i || tokens] with its own parameters; the
// two updated token blocks are averaged; output = GAP(F_smri') + GAP(F_jsm') +
// mean over the averaged bottleneck tokens.
Tensor bottleneck_fuse(const Tensor& f_smri, const Tensor& f_jsm, const BottleneckState& s);

// Queries from the deformation tokens, keys/values from the intensity tokens,
// then pooled over the N_jsm output rows.
Tensor cross_attention_fuse(const Tensor& f_smri, const Tensor& f_jsm, const AttentionParams& p);

// in -> in/2 (ReLU) -> 2 logits
struct ClassifierParams {
    Tensor w1, b1, w2, b2;
};

ClassifierParams init_classifier(int64_t in_dim, SplitMix64& rng);
Tensor classify_head(const Tensor& f, const ClassifierParams& p);

enum class FusionKind {
    cross,
    self_attn,
    bottleneck,
    ilf,
    ilf_sa,
    flf,
    flf_sa,
    sc,
    sc_sa,
    single_smri,
    single_jsm,
};

// String surface: cross | self | bottleneck | ilf | ilf-sa | flf | flf-sa |
// sc | sc-sa | single-smri | single-jsm
FusionKind parse_fusion_kind(const std::string& s);
std::string fusion_kind_name(FusionKind k);
std::vector<FusionKind> all_fusion_kinds();

struct ModelHyper {
    int64_t d = 128;
    int heads = 4;
    int64_t bottleneck_tokens = 4;
    std::vector<int64_t> stage_channels{8, 16, 32};
};

// One classifier network: encoders, projections, fusion head, classifier.
// Which members are populated depends on the kind; `params` lists every
// trainable tensor in a fixed registration order.
struct FusionModel {
    FusionKind kind = FusionKind::cross;
    ModelHyper hyper;
    EncoderConfig enc_cfg;              // branch config (in_channels = 2 for ILF)
    EncoderParams enc_a, enc_b;         // a = sMRI branch, b = JSM branch
    Projection proj_a, proj_b;          // token projections C -> d
    AttentionParams attn_a, attn_b;     // fusion head / per-branch SA blocks
    BottleneckState bott;
    ClassifierParams clf_a, clf_b;      // clf_b only for score-level fusion
    std::vector<Tensor> params;

    bool has_branch_b() const;
};

FusionModel build_fusion_model(FusionKind kind, const ModelHyper& hyper, SplitMix64& rng);

// smri and jsm are [1, S, S, S] volumes (jsm ignored by single-smri, smri by
// single-jsm). Returns the 2-logit output.
Tensor model_forward(const FusionModel& m, const Tensor& smri, const Tensor& jsm);

} // namespace jmfuse
