#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "jmfuse/rng.hpp"

namespace jmfuse {

// Dense 64-bit float tensors with reverse-mode autodiff. Graphs are built
// define-by-run: each op records its inputs and a backprop closure on the
// output node. Everything is single-threaded and evaluated in a fixed order,
// so forward and backward passes are bit-deterministic.

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

namespace detail {

struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad; // empty until first touched, then numel-sized
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backprop;

    int64_t numel() const { return static_cast<int64_t>(value.size()); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

} // namespace detail

// Tape recording toggle; scoring passes run under NoGradGuard.
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<detail::TensorNode> n) : node_(std::move(n)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double v, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double v);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int64_t dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int64_t numel() const { return node_->numel(); }

    const std::vector<double>& data() const { return node_->value; }
    std::vector<double>& mutable_data() { return node_->value; }
    double item() const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool b) { node_->requires_grad = b; }

    // Zero-filled if backward never reached this tensor.
    const std::vector<double>& grad() const {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

    std::shared_ptr<detail::TensorNode> node() const { return node_; }

private:
    std::shared_ptr<detail::TensorNode> node_;
};

// Glorot-style uniform init in +-sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(Shape shape, int64_t fan_in, int64_t fan_out, SplitMix64& rng);

// elementwise and reductions
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor sum(const Tensor& a); // -> rank-0 scalar

// linear algebra
Tensor matmul(const Tensor& a, const Tensor& b);                           // [m,k] x [k,n]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);          // x [n,in] or [in]; w [in,out]; b [out]

// activations
Tensor relu(const Tensor& a);
Tensor softmax_lastdim(const Tensor& a);

// volumetric
Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);
Tensor maxpool3d(const Tensor& x, int window);
Tensor concat_channels(const Tensor& a, const Tensor& b); // rank-4 along channel axis

// token sequences
Tensor channels_to_tokens(const Tensor& fm); // [c,z,y,x] -> [z*y*x, c], x fastest in row order
Tensor global_avg_pool(const Tensor& tokens); // [n,d] -> [d]
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& x, int64_t begin, int64_t end);
Tensor stack_rows(const std::vector<Tensor>& rows); // k x [d] -> [k,d]

// attention core: multi-head scaled dot-product without the output projection
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads);

// loss
Tensor cross_entropy_loss(const Tensor& logits, const std::vector<int>& labels);

void backward(const Tensor& loss);

} // namespace jmfuse
