#include "jmfuse/fusion.hpp"

#include <algorithm>

#include "jmfuse/errors.hpp"

namespace jmfuse {

AttentionParams init_attention(int64_t d, int heads, SplitMix64& rng) {
    if (heads < 1 || d % heads != 0) {
        throw ValidationError("attention: embedding dim " + std::to_string(d) +
                              " not divisible by heads " + std::to_string(heads));
    }
    AttentionParams p;
    p.heads = heads;
    p.wq = glorot_uniform({d, d}, d, d, rng);
    p.bq = Tensor::zeros({d}, true);
    p.wk = glorot_uniform({d, d}, d, d, rng);
    p.bk = Tensor::zeros({d}, true);
    p.wv = glorot_uniform({d, d}, d, d, rng);
    p.bv = Tensor::zeros({d}, true);
    p.wo = glorot_uniform({d, d}, d, d, rng);
    p.bo = Tensor::zeros({d}, true);
    return p;
}

Tensor multihead_attention(const Tensor& q_in, const Tensor& kv_in, const AttentionParams& p) {
    if (q_in.rank() != 2 || kv_in.rank() != 2 || q_in.dim(1) != kv_in.dim(1)) {
        throw DimensionError("attention: token matrices must share the embedding dim, got " +
                             shape_str(q_in.shape()) + " and " + shape_str(kv_in.shape()));
    }
    const Tensor q = linear(q_in, p.wq, p.bq);
    const Tensor k = linear(kv_in, p.wk, p.bk);
    const Tensor v = linear(kv_in, p.wv, p.bv);
    return linear(scaled_dot_attention(q, k, v, p.heads), p.wo, p.bo);
}

Tensor self_attention_fuse(const Tensor& f_smri, const Tensor& f_jsm, const AttentionParams& p) {
    if (f_smri.rank() != 2 || f_jsm.rank() != 2 || f_smri.dim(0) != f_jsm.dim(0) ||
        f_smri.dim(1) != f_jsm.dim(1)) {
        throw DimensionError("self fusion: token sequences must agree in N and d, got " +
                             shape_str(f_smri.shape()) + " and " + shape_str(f_jsm.shape()));
    }
    const int64_t n = f_smri.dim(0);
    const Tensor cat = concat_rows(f_smri, f_jsm);
    const Tensor z = multihead_attention(cat, cat, p);
    const Tensor mean_smri = global_avg_pool(slice_rows(z, 0, n));
    const Tensor mean_jsm = global_avg_pool(slice_rows(z, n, 2 * n));
    return add(mean_smri, mean_jsm);
}

BottleneckState init_bottleneck(int64_t d, int64_t n_tokens, int heads, SplitMix64& rng) {
    if (n_tokens < 1) throw ValidationError("bottleneck: token count must be >= 1");
    BottleneckState s;
    s.tokens = glorot_uniform({n_tokens, d}, d, d, rng);
    s.theta_smri = init_attention(d, heads, rng);
    s.theta_jsm = init_attention(d, heads, rng);
    return s;
}

Tensor bottleneck_fuse(const Tensor& f_smri, const Tensor& f_jsm, const BottleneckState& s) {
    if (f_smri.rank() != 2 || f_jsm.rank() != 2 || f_smri.dim(1) != f_jsm.dim(1) ||
        f_smri.dim(1) != s.tokens.dim(1)) {
        throw DimensionError("bottleneck fusion: embedding dims must agree, got " +
                             shape_str(f_smri.shape()) + ", " + shape_str(f_jsm.shape()) + ", tokens " +
                             shape_str(s.tokens.shape()));
    }
    const int64_t n_s = f_smri.dim(0);
    const int64_t n_j = f_jsm.dim(0);
    const int64_t nb = s.tokens.dim(0);

    const Tensor cat_s = concat_rows(f_smri, s.tokens);
    const Tensor out_s = multihead_attention(cat_s, cat_s, s.theta_smri);
    const Tensor upd_smri = slice_rows(out_s, 0, n_s);
    const Tensor fsn_smri = slice_rows(out_s, n_s, n_s + nb);

    const Tensor cat_j = concat_rows(f_jsm, s.tokens);
    const Tensor out_j = multihead_attention(cat_j, cat_j, s.theta_jsm);
    const Tensor upd_jsm = slice_rows(out_j, 0, n_j);
    const Tensor fsn_jsm = slice_rows(out_j, n_j, n_j + nb);

    const Tensor fsn_shared = scale(add(fsn_smri, fsn_jsm), 0.5);
    return add(add(global_avg_pool(upd_smri), global_avg_pool(upd_jsm)),
               global_avg_pool(fsn_shared));
}

Tensor cross_attention_fuse(const Tensor& f_smri, const Tensor& f_jsm, const AttentionParams& p) {
    return global_avg_pool(multihead_attention(f_jsm, f_smri, p));
}

ClassifierParams init_classifier(int64_t in_dim, SplitMix64& rng) {
    if (in_dim < 2) throw ValidationError("classifier: input dim must be >= 2");
    const int64_t hidden = in_dim / 2;
    ClassifierParams p;
    p.w1 = glorot_uniform({in_dim, hidden}, in_dim, hidden, rng);
    p.b1 = Tensor::zeros({hidden}, true);
    p.w2 = glorot_uniform({hidden, 2}, hidden, 2, rng);
    p.b2 = Tensor::zeros({2}, true);
    return p;
}

Tensor classify_head(const Tensor& f, const ClassifierParams& p) {
    return linear(relu(linear(f, p.w1, p.b1)), p.w2, p.b2);
}

FusionKind parse_fusion_kind(const std::string& s) {
    if (s == "cross") return FusionKind::cross;
    if (s == "self") return FusionKind::self_attn;
    if (s == "bottleneck") return FusionKind::bottleneck;
    if (s == "ilf") return FusionKind::ilf;
    if (s == "ilf-sa") return FusionKind::ilf_sa;
    if (s == "flf") return FusionKind::flf;
    if (s == "flf-sa") return FusionKind::flf_sa;
    if (s == "sc") return FusionKind::sc;
    if (s == "sc-sa") return FusionKind::sc_sa;
    if (s == "single-smri") return FusionKind::single_smri;
    if (s == "single-jsm") return FusionKind::single_jsm;
    throw ValidationError("unknown fusion kind `" + s +
                          "` (expected cross|self|bottleneck|ilf|ilf-sa|flf|flf-sa|sc|sc-sa|"
                          "single-smri|single-jsm)");
}

std::string fusion_kind_name(FusionKind k) {
    switch (k) {
        case FusionKind::cross: return "cross";
        case FusionKind::self_attn: return "self";
        case FusionKind::bottleneck: return "bottleneck";
        case FusionKind::ilf: return "ilf";
        case FusionKind::ilf_sa: return "ilf-sa";
        case FusionKind::flf: return "flf";
        case FusionKind::flf_sa: return "flf-sa";
        case FusionKind::sc: return "sc";
        case FusionKind::sc_sa: return "sc-sa";
        case FusionKind::single_smri: return "single-smri";
        case FusionKind::single_jsm: return "single-jsm";
    }
    throw ValidationError("unhandled fusion kind");
}

std::vector<FusionKind> all_fusion_kinds() {
    return {FusionKind::cross,  FusionKind::self_attn, FusionKind::bottleneck, FusionKind::ilf,
            FusionKind::ilf_sa, FusionKind::flf,       FusionKind::flf_sa,     FusionKind::sc,
            FusionKind::sc_sa,  FusionKind::single_smri, FusionKind::single_jsm};
}

bool FusionModel::has_branch_b() const {
    switch (kind) {
        case FusionKind::ilf:
        case FusionKind::ilf_sa:
        case FusionKind::single_smri:
        case FusionKind::single_jsm:
            return false;
        default:
            return true;
    }
}

namespace {

void register_attention(std::vector<Tensor>& out, const AttentionParams& p) {
    out.insert(out.end(), {p.wq, p.bq, p.wk, p.bk, p.wv, p.bv, p.wo, p.bo});
}

void register_encoder(std::vector<Tensor>& out, const EncoderParams& p) {
    for (size_t i = 0; i < p.w.size(); ++i) {
        out.push_back(p.w[i]);
        out.push_back(p.b[i]);
    }
}

void register_classifier(std::vector<Tensor>& out, const ClassifierParams& p) {
    out.insert(out.end(), {p.w1, p.b1, p.w2, p.b2});
}

} // namespace

FusionModel build_fusion_model(FusionKind kind, const ModelHyper& hyper, SplitMix64& rng) {
    FusionModel m;
    m.kind = kind;
    m.hyper = hyper;
    m.enc_cfg.stage_channels = hyper.stage_channels;
    m.enc_cfg.in_channels = (kind == FusionKind::ilf || kind == FusionKind::ilf_sa) ? 2 : 1;
    const int64_t c = m.enc_cfg.out_channels();
    const int64_t d = hyper.d;

    // Initialization order is fixed; it defines both the RNG stream layout and
    // the parameter registration order the optimizer sees.
    switch (kind) {
        case FusionKind::cross:
        case FusionKind::self_attn:
            m.enc_a = init_encoder(m.enc_cfg, rng);
            m.enc_b = init_encoder(m.enc_cfg, rng);
            m.proj_a = init_projection(c, d, rng);
            m.proj_b = init_projection(c, d, rng);
            m.attn_a = init_attention(d, hyper.heads, rng);
            m.clf_a = init_classifier(d, rng);
            break;
        case FusionKind::bottleneck:
            m.enc_a = init_encoder(m.enc_cfg, rng);
            m.enc_b = init_encoder(m.enc_cfg, rng);
            m.proj_a = init_projection(c, d, rng);
            m.proj_b = init_projection(c, d, rng);
            m.bott = init_bottleneck(d, hyper.bottleneck_tokens, hyper.heads, rng);
            m.clf_a = init_classifier(d, rng);
            break;
        case FusionKind::ilf:
        case FusionKind::single_smri:
        case FusionKind::single_jsm:
            m.enc_a = init_encoder(m.enc_cfg, rng);
            m.clf_a = init_classifier(c, rng);
            break;
        case FusionKind::ilf_sa:
            m.enc_a = init_encoder(m.enc_cfg, rng);
            m.attn_a = init_attention(c, hyper.heads, rng);
            m.clf_a = init_classifier(c, rng);
            break;
        case FusionKind::flf:
            m.enc_a = init_encoder(m.enc_cfg, rng);
            m.enc_b = init_encoder(m.enc_cfg, rng);
            m.proj_a = init_projection(c, d, rng);
            m.proj_b = init_projection(c, d, rng);
            m.clf_a = init_classifier(2 * d, rng);
            break;
        case FusionKind::flf_sa:
            m.enc_a = init_encoder(m.enc_cfg, rng);
            m.enc_b = init_encoder(m.enc_cfg, rng);
            m.proj_a = init_projection(c, d, rng);
            m.proj_b = init_projection(c, d, rng);
            m.attn_a = init_attention(d, hyper.heads, rng);
            m.attn_b = init_attention(d, hyper.heads, rng);
            m.clf_a = init_classifier(2 * d, rng);
            break;
        case FusionKind::sc:
            m.enc_a = init_encoder(m.enc_cfg, rng);
            m.clf_a = init_classifier(c, rng);
            m.enc_b = init_encoder(m.enc_cfg, rng);
            m.clf_b = init_classifier(c, rng);
            break;
        case FusionKind::sc_sa:
            m.enc_a = init_encoder(m.enc_cfg, rng);
            m.attn_a = init_attention(c, hyper.heads, rng);
            m.clf_a = init_classifier(c, rng);
            m.enc_b = init_encoder(m.enc_cfg, rng);
            m.attn_b = init_attention(c, hyper.heads, rng);
            m.clf_b = init_classifier(c, rng);
            break;
    }

    switch (kind) {
        case FusionKind::cross:
        case FusionKind::self_attn:
            register_encoder(m.params, m.enc_a);
            register_encoder(m.params, m.enc_b);
            m.params.insert(m.params.end(), {m.proj_a.w, m.proj_a.b, m.proj_b.w, m.proj_b.b});
            register_attention(m.params, m.attn_a);
            register_classifier(m.params, m.clf_a);
            break;
        case FusionKind::bottleneck:
            register_encoder(m.params, m.enc_a);
            register_encoder(m.params, m.enc_b);
            m.params.insert(m.params.end(), {m.proj_a.w, m.proj_a.b, m.proj_b.w, m.proj_b.b});
            m.params.push_back(m.bott.tokens);
            register_attention(m.params, m.bott.theta_smri);
            register_attention(m.params, m.bott.theta_jsm);
            register_classifier(m.params, m.clf_a);
            break;
        case FusionKind::ilf:
        case FusionKind::single_smri:
        case FusionKind::single_jsm:
            register_encoder(m.params, m.enc_a);
            register_classifier(m.params, m.clf_a);
            break;
        case FusionKind::ilf_sa:
            register_encoder(m.params, m.enc_a);
            register_attention(m.params, m.attn_a);
            register_classifier(m.params, m.clf_a);
            break;
        case FusionKind::flf:
            register_encoder(m.params, m.enc_a);
            register_encoder(m.params, m.enc_b);
            m.params.insert(m.params.end(), {m.proj_a.w, m.proj_a.b, m.proj_b.w, m.proj_b.b});
            register_classifier(m.params, m.clf_a);
            break;
        case FusionKind::flf_sa:
            register_encoder(m.params, m.enc_a);
            register_encoder(m.params, m.enc_b);
            m.params.insert(m.params.end(), {m.proj_a.w, m.proj_a.b, m.proj_b.w, m.proj_b.b});
            register_attention(m.params, m.attn_a);
            register_attention(m.params, m.attn_b);
            register_classifier(m.params, m.clf_a);
            break;
        case FusionKind::sc:
            register_encoder(m.params, m.enc_a);
            register_classifier(m.params, m.clf_a);
            register_encoder(m.params, m.enc_b);
            register_classifier(m.params, m.clf_b);
            break;
        case FusionKind::sc_sa:
            register_encoder(m.params, m.enc_a);
            register_attention(m.params, m.attn_a);
            register_classifier(m.params, m.clf_a);
            register_encoder(m.params, m.enc_b);
            register_attention(m.params, m.attn_b);
            register_classifier(m.params, m.clf_b);
            break;
    }
    return m;
}

namespace {

// encoder -> token matrix [N, C] for the baseline branches
Tensor branch_tokens(const FusionModel& m, const Tensor& x, const EncoderParams& enc) {
    return channels_to_tokens(encode_volume(x, m.enc_cfg, enc));
}

} // namespace

Tensor model_forward(const FusionModel& m, const Tensor& smri, const Tensor& jsm) {
    switch (m.kind) {
        case FusionKind::cross: {
            const Tensor fs = tokenize_and_project(encode_volume(smri, m.enc_cfg, m.enc_a), m.proj_a);
            const Tensor fj = tokenize_and_project(encode_volume(jsm, m.enc_cfg, m.enc_b), m.proj_b);
            return classify_head(cross_attention_fuse(fs, fj, m.attn_a), m.clf_a);
        }
        case FusionKind::self_attn: {
            const Tensor fs = tokenize_and_project(encode_volume(smri, m.enc_cfg, m.enc_a), m.proj_a);
            const Tensor fj = tokenize_and_project(encode_volume(jsm, m.enc_cfg, m.enc_b), m.proj_b);
            return classify_head(self_attention_fuse(fs, fj, m.attn_a), m.clf_a);
        }
        case FusionKind::bottleneck: {
            const Tensor fs = tokenize_and_project(encode_volume(smri, m.enc_cfg, m.enc_a), m.proj_a);
            const Tensor fj = tokenize_and_project(encode_volume(jsm, m.enc_cfg, m.enc_b), m.proj_b);
            return classify_head(bottleneck_fuse(fs, fj, m.bott), m.clf_a);
        }
        case FusionKind::ilf: {
            const Tensor t = branch_tokens(m, concat_channels(smri, jsm), m.enc_a);
            return classify_head(global_avg_pool(t), m.clf_a);
        }
        case FusionKind::ilf_sa: {
            const Tensor t = branch_tokens(m, concat_channels(smri, jsm), m.enc_a);
            return classify_head(global_avg_pool(multihead_attention(t, t, m.attn_a)), m.clf_a);
        }
        case FusionKind::flf: {
            const Tensor fs = tokenize_and_project(encode_volume(smri, m.enc_cfg, m.enc_a), m.proj_a);
            const Tensor fj = tokenize_and_project(encode_volume(jsm, m.enc_cfg, m.enc_b), m.proj_b);
            const Tensor feat = concat_rows(global_avg_pool(fs), global_avg_pool(fj));
            return classify_head(feat, m.clf_a);
        }
        case FusionKind::flf_sa: {
            const Tensor fs = tokenize_and_project(encode_volume(smri, m.enc_cfg, m.enc_a), m.proj_a);
            const Tensor fj = tokenize_and_project(encode_volume(jsm, m.enc_cfg, m.enc_b), m.proj_b);
            const Tensor feat = concat_rows(global_avg_pool(multihead_attention(fs, fs, m.attn_a)),
                                            global_avg_pool(multihead_attention(fj, fj, m.attn_b)));
            return classify_head(feat, m.clf_a);
        }
        case FusionKind::sc: {
            const Tensor la = classify_head(global_avg_pool(branch_tokens(m, smri, m.enc_a)), m.clf_a);
            const Tensor lb = classify_head(global_avg_pool(branch_tokens(m, jsm, m.enc_b)), m.clf_b);
            return scale(add(la, lb), 0.5);
        }
        case FusionKind::sc_sa: {
            const Tensor ta = branch_tokens(m, smri, m.enc_a);
            const Tensor tb = branch_tokens(m, jsm, m.enc_b);
            const Tensor la =
                classify_head(global_avg_pool(multihead_attention(ta, ta, m.attn_a)), m.clf_a);
            const Tensor lb =
                classify_head(global_avg_pool(multihead_attention(tb, tb, m.attn_b)), m.clf_b);
            return scale(add(la, lb), 0.5);
        }
        case FusionKind::single_smri:
            return classify_head(global_avg_pool(branch_tokens(m, smri, m.enc_a)), m.clf_a);
        case FusionKind::single_jsm:
            return classify_head(global_avg_pool(branch_tokens(m, jsm, m.enc_a)), m.clf_a);
    }
    throw ValidationError("unhandled fusion kind in forward");
}

} // namespace jmfuse
