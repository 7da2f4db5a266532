#include "jmfuse/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "jmfuse/errors.hpp"
#include "jmfuse/fusion.hpp"
#include "jmfuse/rng.hpp"

namespace jmfuse {

double max_grad_error(const std::function<Tensor()>& build_loss,
                      const std::vector<Tensor>& params) {
    for (Tensor p : params) p.zero_grad(); // handles share the underlying node
    Tensor loss = build_loss();
    if (loss.rank() != 0) {
        throw ValidationError("max_grad_error: loss must be scalar, got " + shape_str(loss.shape()));
    }
    backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const Tensor& p : params) analytic.push_back(p.grad());

    double worst = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor p = params[pi];
        std::vector<double>& x = p.mutable_data();
        for (size_t j = 0; j < x.size(); ++j) {
            const double orig = x[j];
            const double h = 1e-6 * (1.0 + std::fabs(orig));
            double fplus, fminus;
            {
                NoGradGuard ng;
                x[j] = orig + h;
                fplus = build_loss().item();
                x[j] = orig - h;
                fminus = build_loss().item();
                x[j] = orig;
            }
            const double fd = (fplus - fminus) / (2.0 * h);
            const double a = analytic[pi][j];
            const double rel = std::fabs(a - fd) / std::max({1.0, std::fabs(a), std::fabs(fd)});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

namespace {

Tensor rand_tensor(Shape shape, SplitMix64& rng, bool requires_grad, double lo = -1.0,
                   double hi = 1.0) {
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
    for (double& x : v) x = rng.uniform(lo, hi);
    return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

int64_t total_elems(const std::vector<Tensor>& params) {
    int64_t n = 0;
    for (const Tensor& p : params) n += p.numel();
    return n;
}

GradCheckEntry check(const std::string& name, const std::function<Tensor()>& build_loss,
                     const std::vector<Tensor>& params) {
    return {name, max_grad_error(build_loss, params), total_elems(params)};
}

} // namespace

std::vector<GradCheckEntry> run_gradcheck_suite() {
    std::vector<GradCheckEntry> out;

    {
        SplitMix64 rng(101);
        Tensor a = rand_tensor({3, 4}, rng, true);
        Tensor b = rand_tensor({4, 2}, rng, true);
        Tensor g = rand_tensor({3, 2}, rng, false);
        out.push_back(check(
            "matmul", [&] { return sum(mul(matmul(a, b), g)); }, {a, b}));
    }
    {
        SplitMix64 rng(102);
        Tensor x = rand_tensor({2, 5, 5, 5}, rng, true);
        Tensor w = rand_tensor({3, 2, 3, 3, 3}, rng, true);
        Tensor b = rand_tensor({3}, rng, true);
        Tensor g = rand_tensor({3, 5, 5, 5}, rng, false);
        out.push_back(check(
            "conv3d", [&] { return sum(mul(conv3d(x, w, b, 1, 1), g)); }, {x, w, b}));
    }
    {
        SplitMix64 rng(103);
        Tensor x = rand_tensor({3, 5}, rng, true, -2.0, 2.0);
        Tensor g = rand_tensor({3, 5}, rng, false);
        out.push_back(check(
            "softmax", [&] { return sum(mul(softmax_lastdim(x), g)); }, {x}));
    }
    {
        SplitMix64 rng(104);
        Tensor x = rand_tensor({7, 4}, rng, true);
        Tensor g = rand_tensor({4}, rng, false);
        out.push_back(check(
            "global_avg_pool", [&] { return sum(mul(global_avg_pool(x), g)); }, {x}));
    }
    {
        SplitMix64 rng(105);
        Tensor logits = rand_tensor({4, 2}, rng, true, -2.0, 2.0);
        const std::vector<int> labels{0, 1, 1, 0};
        out.push_back(check(
            "cross_entropy", [&] { return cross_entropy_loss(logits, labels); }, {logits}));
    }

    const int64_t d = 8;
    const int heads = 2;
    {
        SplitMix64 rng(106);
        Tensor fs = rand_tensor({3, d}, rng, true);
        Tensor fj = rand_tensor({3, d}, rng, true);
        AttentionParams p = init_attention(d, heads, rng);
        Tensor g = rand_tensor({d}, rng, false);
        std::vector<Tensor> params{fs, fj, p.wq, p.bq, p.wk, p.bk, p.wv, p.bv, p.wo, p.bo};
        out.push_back(check(
            "self_fuse", [&] { return sum(mul(self_attention_fuse(fs, fj, p), g)); }, params));
    }
    {
        SplitMix64 rng(107);
        Tensor fs = rand_tensor({3, d}, rng, true);
        Tensor fj = rand_tensor({3, d}, rng, true);
        BottleneckState s = init_bottleneck(d, 2, heads, rng);
        Tensor g = rand_tensor({d}, rng, false);
        std::vector<Tensor> params{fs,
                                   fj,
                                   s.tokens,
                                   s.theta_smri.wq,
                                   s.theta_smri.bq,
                                   s.theta_smri.wk,
                                   s.theta_smri.bk,
                                   s.theta_smri.wv,
                                   s.theta_smri.bv,
                                   s.theta_smri.wo,
                                   s.theta_smri.bo,
                                   s.theta_jsm.wq,
                                   s.theta_jsm.bq,
                                   s.theta_jsm.wk,
                                   s.theta_jsm.bk,
                                   s.theta_jsm.wv,
                                   s.theta_jsm.bv,
                                   s.theta_jsm.wo,
                                   s.theta_jsm.bo};
        out.push_back(check(
            "bottleneck_fuse", [&] { return sum(mul(bottleneck_fuse(fs, fj, s), g)); }, params));
    }
    {
        SplitMix64 rng(108);
        Tensor fs = rand_tensor({4, d}, rng, true);
        Tensor fj = rand_tensor({3, d}, rng, true);
        AttentionParams p = init_attention(d, heads, rng);
        Tensor g = rand_tensor({d}, rng, false);
        std::vector<Tensor> params{fs, fj, p.wq, p.bq, p.wk, p.bk, p.wv, p.bv, p.wo, p.bo};
        out.push_back(check(
            "cross_fuse", [&] { return sum(mul(cross_attention_fuse(fs, fj, p), g)); }, params));
    }
    {
        SplitMix64 rng(109);
        ModelHyper hyper;
        hyper.d = d;
        hyper.heads = heads;
        hyper.bottleneck_tokens = 2;
        hyper.stage_channels = {4, 8, 16};
        FusionModel model = build_fusion_model(FusionKind::cross, hyper, rng);
        Tensor smri = rand_tensor({1, 8, 8, 8}, rng, false);
        Tensor jsm = rand_tensor({1, 8, 8, 8}, rng, false, 0.0, 0.5);
        const std::vector<int> labels{1};
        out.push_back(check(
            "tiny_model",
            [&] {
                return cross_entropy_loss(stack_rows({model_forward(model, smri, jsm)}), labels);
            },
            model.params));
    }
    return out;
}

} // namespace jmfuse
