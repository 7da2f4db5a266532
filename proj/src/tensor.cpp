#include "jmfuse/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

#include "jmfuse/errors.hpp"

namespace jmfuse {

using detail::TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << "]";
    return os.str();
}

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

namespace {

bool g_grad_enabled = true;

NodePtr new_node(Shape shape) {
    auto n = std::make_shared<TensorNode>();
    n->value.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
    n->shape = std::move(shape);
    return n;
}

// Records parents and the backprop closure when the tape is live and at least
// one input needs gradients. Otherwise the output is a plain constant.
void attach(const NodePtr& out, std::vector<NodePtr> parents,
            std::function<void(TensorNode&)> fn) {
    if (!g_grad_enabled) return;
    bool req = false;
    for (const auto& p : parents) req = req || (p && p->requires_grad);
    if (!req) return;
    out->requires_grad = true;
    out->parents = std::move(parents);
    out->backprop = std::move(fn);
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    }
}

} // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto n = new_node(std::move(shape));
    n->requires_grad = requires_grad && g_grad_enabled;
    return Tensor(n);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
    auto n = new_node(std::move(shape));
    std::fill(n->value.begin(), n->value.end(), v);
    n->requires_grad = requires_grad && g_grad_enabled;
    return Tensor(n);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
        throw DimensionError("from_data: shape " + shape_str(shape) + " wants " +
                             std::to_string(shape_numel(shape)) + " values, got " +
                             std::to_string(data.size()));
    }
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad && g_grad_enabled;
    return Tensor(n);
}

Tensor Tensor::scalar(double v) { return from_data({}, {v}); }

double Tensor::item() const {
    if (numel() != 1) {
        throw ValidationError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
    }
    return node_->value[0];
}

Tensor glorot_uniform(Shape shape, int64_t fan_in, int64_t fan_out, SplitMix64& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    auto n = new_node(std::move(shape));
    for (double& v : n->value) v = rng.uniform(-bound, bound);
    n->requires_grad = true;
    return Tensor(n);
}

// ---------------------------------------------------------------------------
// elementwise

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    auto out = new_node(a.shape());
    const auto& av = a.data();
    const auto& bv = b.data();
    for (size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] + bv[i];
    attach(out, {a.node(), b.node()}, [](TensorNode& self) {
        for (int p = 0; p < 2; ++p) {
            auto& par = self.parents[static_cast<size_t>(p)];
            if (!par->requires_grad) continue;
            par->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) par->grad[i] += self.grad[i];
        }
    });
    return Tensor(out);
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    auto out = new_node(a.shape());
    const auto& av = a.data();
    const auto& bv = b.data();
    for (size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] * bv[i];
    attach(out, {a.node(), b.node()}, [](TensorNode& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                pa->grad[i] += self.grad[i] * pb->value[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                pb->grad[i] += self.grad[i] * pa->value[i];
        }
    });
    return Tensor(out);
}

Tensor scale(const Tensor& a, double s) {
    auto out = new_node(a.shape());
    const auto& av = a.data();
    for (size_t i = 0; i < av.size(); ++i) out->value[i] = s * av[i];
    attach(out, {a.node()}, [s](TensorNode& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += s * self.grad[i];
    });
    return Tensor(out);
}

Tensor sum(const Tensor& a) {
    auto out = new_node(Shape{});
    double acc = 0.0;
    for (double v : a.data()) acc += v;
    out->value[0] = acc;
    attach(out, {a.node()}, [](TensorNode& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        const double g = self.grad[0];
        for (size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += g;
    });
    return Tensor(out);
}

// ---------------------------------------------------------------------------
// matmul / linear

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw DimensionError("matmul: expected rank-2 operands, got " + shape_str(a.shape()) +
                             " and " + shape_str(b.shape()));
    }
    const int64_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2) {
        throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    auto out = new_node({m, n});
    const double* A = a.data().data();
    const double* B = b.data().data();
    double* C = out->value.data();
    for (int64_t i = 0; i < m; ++i) {
        double* crow = C + i * n;
        const double* arow = A + i * k;
        for (int64_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            const double* brow = B + kk * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    attach(out, {a.node(), b.node()}, [m, k, n](TensorNode& self) {
        const double* G = self.grad.data();
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (pa->requires_grad) {
            pa->ensure_grad();
            const double* B = pb->value.data();
            double* dA = pa->grad.data();
            for (int64_t i = 0; i < m; ++i) {
                for (int64_t kk = 0; kk < k; ++kk) {
                    const double* grow = G + i * n;
                    const double* brow = B + kk * n;
                    double acc = 0.0;
                    for (int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    dA[i * k + kk] += acc;
                }
            }
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            const double* A = pa->value.data();
            double* dB = pb->grad.data();
            for (int64_t i = 0; i < m; ++i) {
                const double* arow = A + i * k;
                const double* grow = G + i * n;
                for (int64_t kk = 0; kk < k; ++kk) {
                    const double av = arow[kk];
                    double* drow = dB + kk * n;
                    for (int64_t j = 0; j < n; ++j) drow[j] += av * grow[j];
                }
            }
        }
    });
    return Tensor(out);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() != 1 && x.rank() != 2) {
        throw DimensionError("linear: input must be rank 1 or 2, got " + shape_str(x.shape()));
    }
    if (w.rank() != 2 || b.rank() != 1) {
        throw DimensionError("linear: weight/bias shapes " + shape_str(w.shape()) + ", " +
                             shape_str(b.shape()));
    }
    const bool vec = x.rank() == 1;
    const int64_t n = vec ? 1 : x.dim(0);
    const int64_t cin = vec ? x.dim(0) : x.dim(1);
    const int64_t cout = w.dim(1);
    if (w.dim(0) != cin || b.dim(0) != cout) {
        throw DimensionError("linear: input " + shape_str(x.shape()) + " vs weight " +
                             shape_str(w.shape()));
    }
    auto out = new_node(vec ? Shape{cout} : Shape{n, cout});
    const double* X = x.data().data();
    const double* W = w.data().data();
    const double* B = b.data().data();
    double* Y = out->value.data();
    for (int64_t i = 0; i < n; ++i) {
        double* yrow = Y + i * cout;
        for (int64_t o = 0; o < cout; ++o) yrow[o] = B[o];
        const double* xrow = X + i * cin;
        for (int64_t c = 0; c < cin; ++c) {
            const double xv = xrow[c];
            const double* wrow = W + c * cout;
            for (int64_t o = 0; o < cout; ++o) yrow[o] += xv * wrow[o];
        }
    }
    attach(out, {x.node(), w.node(), b.node()}, [n, cin, cout](TensorNode& self) {
        const double* G = self.grad.data();
        auto& px = self.parents[0];
        auto& pw = self.parents[1];
        auto& pb = self.parents[2];
        if (px->requires_grad) {
            px->ensure_grad();
            const double* W = pw->value.data();
            double* dX = px->grad.data();
            for (int64_t i = 0; i < n; ++i) {
                const double* grow = G + i * cout;
                for (int64_t c = 0; c < cin; ++c) {
                    const double* wrow = W + c * cout;
                    double acc = 0.0;
                    for (int64_t o = 0; o < cout; ++o) acc += grow[o] * wrow[o];
                    dX[i * cin + c] += acc;
                }
            }
        }
        if (pw->requires_grad) {
            pw->ensure_grad();
            const double* X = px->value.data();
            double* dW = pw->grad.data();
            for (int64_t i = 0; i < n; ++i) {
                const double* xrow = X + i * cin;
                const double* grow = G + i * cout;
                for (int64_t c = 0; c < cin; ++c) {
                    const double xv = xrow[c];
                    double* drow = dW + c * cout;
                    for (int64_t o = 0; o < cout; ++o) drow[o] += xv * grow[o];
                }
            }
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            double* dB = pb->grad.data();
            for (int64_t i = 0; i < n; ++i) {
                const double* grow = G + i * cout;
                for (int64_t o = 0; o < cout; ++o) dB[o] += grow[o];
            }
        }
    });
    return Tensor(out);
}

// ---------------------------------------------------------------------------
// activations

Tensor relu(const Tensor& a) {
    auto out = new_node(a.shape());
    const auto& av = a.data();
    for (size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] > 0.0 ? av[i] : 0.0;
    attach(out, {a.node()}, [](TensorNode& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            if (self.value[i] > 0.0) p->grad[i] += self.grad[i];
        }
    });
    return Tensor(out);
}

Tensor softmax_lastdim(const Tensor& a) {
    if (a.rank() < 1) throw DimensionError("softmax: rank-0 input");
    const int64_t n = a.dim(a.rank() - 1);
    const int64_t rows = a.numel() / n;
    for (double v : a.data()) {
        if (!std::isfinite(v)) throw NumericError("softmax: non-finite input");
    }
    auto out = new_node(a.shape());
    const double* X = a.data().data();
    double* Y = out->value.data();
    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = X + r * n;
        double* yr = Y + r * n;
        double m = xr[0];
        for (int64_t j = 1; j < n; ++j) m = std::max(m, xr[j]);
        double s = 0.0;
        for (int64_t j = 0; j < n; ++j) {
            yr[j] = std::exp(xr[j] - m);
            s += yr[j];
        }
        const double inv = 1.0 / s;
        for (int64_t j = 0; j < n; ++j) yr[j] *= inv;
    }
    attach(out, {a.node()}, [n, rows](TensorNode& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        const double* Y = self.value.data();
        const double* G = self.grad.data();
        double* dX = p->grad.data();
        for (int64_t r = 0; r < rows; ++r) {
            const double* yr = Y + r * n;
            const double* gr = G + r * n;
            double dot = 0.0;
            for (int64_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
            double* dr = dX + r * n;
            for (int64_t j = 0; j < n; ++j) dr[j] += yr[j] * (gr[j] - dot);
        }
    });
    return Tensor(out);
}

// ---------------------------------------------------------------------------
// conv3d

namespace {

struct ConvDims {
    int64_t cin, d, h, w;
    int64_t cout, k;
    int64_t od, oh, ow;
    int64_t dp, hp, wp; // padded input extents
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    if (x.rank() != 4) throw DimensionError("conv3d: input must be [c,d,h,w], got " + shape_str(x.shape()));
    if (w.rank() != 5) throw DimensionError("conv3d: kernel must be [co,ci,k,k,k], got " + shape_str(w.shape()));
    if (b.rank() != 1) throw DimensionError("conv3d: bias must be rank 1, got " + shape_str(b.shape()));
    ConvDims cd;
    cd.cin = x.dim(0); cd.d = x.dim(1); cd.h = x.dim(2); cd.w = x.dim(3);
    cd.cout = w.dim(0); cd.k = w.dim(2);
    if (w.dim(1) != cd.cin) {
        throw DimensionError("conv3d: kernel input channels " + shape_str(w.shape()) +
                             " vs input " + shape_str(x.shape()));
    }
    if (w.dim(2) != w.dim(3) || w.dim(3) != w.dim(4)) {
        throw DimensionError("conv3d: kernel must be cubic, got " + shape_str(w.shape()));
    }
    if (cd.k % 2 == 0) throw ValidationError("conv3d: kernel extent must be odd, got " + std::to_string(cd.k));
    if (b.dim(0) != cd.cout) {
        throw DimensionError("conv3d: bias " + shape_str(b.shape()) + " vs kernel " + shape_str(w.shape()));
    }
    if (stride < 1) throw ValidationError("conv3d: stride must be >= 1");
    if (pad < 0) throw ValidationError("conv3d: pad must be >= 0");
    cd.od = (cd.d + 2 * pad - cd.k) / stride + 1;
    cd.oh = (cd.h + 2 * pad - cd.k) / stride + 1;
    cd.ow = (cd.w + 2 * pad - cd.k) / stride + 1;
    if (cd.d + 2 * pad < cd.k || cd.h + 2 * pad < cd.k || cd.w + 2 * pad < cd.k ||
        cd.od < 1 || cd.oh < 1 || cd.ow < 1) {
        throw DimensionError("conv3d: output extent below 1 for input " + shape_str(x.shape()) +
                             " kernel " + shape_str(w.shape()) + " stride " + std::to_string(stride) +
                             " pad " + std::to_string(pad));
    }
    cd.dp = cd.d + 2 * pad; cd.hp = cd.h + 2 * pad; cd.wp = cd.w + 2 * pad;
    return cd;
}

void pad_volume(const double* x, const ConvDims& c, int pad, std::vector<double>& xpad) {
    xpad.assign(static_cast<size_t>(c.cin * c.dp * c.hp * c.wp), 0.0);
    for (int64_t ic = 0; ic < c.cin; ++ic) {
        for (int64_t z = 0; z < c.d; ++z) {
            for (int64_t y = 0; y < c.h; ++y) {
                const double* src = x + ((ic * c.d + z) * c.h + y) * c.w;
                double* dst = xpad.data() + ((ic * c.dp + z + pad) * c.hp + y + pad) * c.wp + pad;
                std::memcpy(dst, src, static_cast<size_t>(c.w) * sizeof(double));
            }
        }
    }
}

} // namespace

Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    const ConvDims c = conv_dims(x, w, b, stride, pad);
    auto out = new_node({c.cout, c.od, c.oh, c.ow});

    std::vector<double> xpad;
    pad_volume(x.data().data(), c, pad, xpad);
    const double* W = w.data().data();
    const double* B = b.data().data();
    double* O = out->value.data();
    const int64_t k = c.k;

    // Per output element the accumulation order is bias, then (ic,kz,ky,kx)
    // ascending; the naive oracle uses the same order.
    for (int64_t oc = 0; oc < c.cout; ++oc) {
        for (int64_t od = 0; od < c.od; ++od) {
            for (int64_t oh = 0; oh < c.oh; ++oh) {
                double* orow = O + ((oc * c.od + od) * c.oh + oh) * c.ow;
                const double bias = B[oc];
                for (int64_t ow = 0; ow < c.ow; ++ow) orow[ow] = bias;
                for (int64_t ic = 0; ic < c.cin; ++ic) {
                    for (int64_t kz = 0; kz < k; ++kz) {
                        for (int64_t ky = 0; ky < k; ++ky) {
                            const double* xr = xpad.data() +
                                ((ic * c.dp + od * stride + kz) * c.hp + oh * stride + ky) * c.wp;
                            const double* wr = W + (((oc * c.cin + ic) * k + kz) * k + ky) * k;
                            if (stride == 1) {
                                for (int64_t kx = 0; kx < k; ++kx) {
                                    const double wv = wr[kx];
                                    const double* xs = xr + kx;
                                    for (int64_t ow = 0; ow < c.ow; ++ow) orow[ow] += wv * xs[ow];
                                }
                            } else {
                                for (int64_t kx = 0; kx < k; ++kx) {
                                    const double wv = wr[kx];
                                    for (int64_t ow = 0; ow < c.ow; ++ow)
                                        orow[ow] += wv * xr[ow * stride + kx];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    attach(out, {x.node(), w.node(), b.node()}, [c, stride, pad](TensorNode& self) {
        const double* G = self.grad.data();
        auto& px = self.parents[0];
        auto& pw = self.parents[1];
        auto& pb = self.parents[2];
        const int64_t k = c.k;

        if (pb->requires_grad) {
            pb->ensure_grad();
            double* dB = pb->grad.data();
            const int64_t plane = c.od * c.oh * c.ow;
            for (int64_t oc = 0; oc < c.cout; ++oc) {
                const double* g = G + oc * plane;
                double acc = 0.0;
                for (int64_t i = 0; i < plane; ++i) acc += g[i];
                dB[oc] += acc;
            }
        }

        if (pw->requires_grad || px->requires_grad) {
            std::vector<double> xpad;
            pad_volume(px->value.data(), c, pad, xpad);

            if (pw->requires_grad) {
                pw->ensure_grad();
                double* dW = pw->grad.data();
                std::vector<double> acc(static_cast<size_t>(k));
                for (int64_t oc = 0; oc < c.cout; ++oc) {
                    for (int64_t ic = 0; ic < c.cin; ++ic) {
                        for (int64_t kz = 0; kz < k; ++kz) {
                            for (int64_t ky = 0; ky < k; ++ky) {
                                std::fill(acc.begin(), acc.end(), 0.0);
                                for (int64_t od = 0; od < c.od; ++od) {
                                    for (int64_t oh = 0; oh < c.oh; ++oh) {
                                        const double* g = G + ((oc * c.od + od) * c.oh + oh) * c.ow;
                                        const double* xr = xpad.data() +
                                            ((ic * c.dp + od * stride + kz) * c.hp + oh * stride + ky) * c.wp;
                                        for (int64_t kx = 0; kx < k; ++kx) {
                                            const double* xs = xr + kx;
                                            double part[8] = {0, 0, 0, 0, 0, 0, 0, 0};
                                            int64_t ow = 0;
                                            if (stride == 1) {
                                                for (; ow + 8 <= c.ow; ow += 8) {
                                                    for (int j = 0; j < 8; ++j)
                                                        part[j] += g[ow + j] * xs[ow + j];
                                                }
                                            }
                                            double dot = ((part[0] + part[1]) + (part[2] + part[3])) +
                                                         ((part[4] + part[5]) + (part[6] + part[7]));
                                            for (; ow < c.ow; ++ow) dot += g[ow] * xr[ow * stride + kx];
                                            acc[static_cast<size_t>(kx)] += dot;
                                        }
                                    }
                                }
                                double* dwr = dW + (((oc * c.cin + ic) * k + kz) * k + ky) * k;
                                for (int64_t kx = 0; kx < k; ++kx) dwr[kx] += acc[static_cast<size_t>(kx)];
                            }
                        }
                    }
                }
            }

            if (px->requires_grad) {
                px->ensure_grad();
                double* dX = px->grad.data();
                const double* W = pw->value.data();
                std::vector<double> dplane(static_cast<size_t>(c.dp * c.hp * c.wp));
                for (int64_t ic = 0; ic < c.cin; ++ic) {
                    std::fill(dplane.begin(), dplane.end(), 0.0);
                    for (int64_t oc = 0; oc < c.cout; ++oc) {
                        for (int64_t kz = 0; kz < k; ++kz) {
                            for (int64_t ky = 0; ky < k; ++ky) {
                                const double* wr = W + (((oc * c.cin + ic) * k + kz) * k + ky) * k;
                                for (int64_t od = 0; od < c.od; ++od) {
                                    for (int64_t oh = 0; oh < c.oh; ++oh) {
                                        double* dxr = dplane.data() +
                                            ((od * stride + kz) * c.hp + oh * stride + ky) * c.wp;
                                        const double* g = G + ((oc * c.od + od) * c.oh + oh) * c.ow;
                                        for (int64_t kx = 0; kx < k; ++kx) {
                                            const double wv = wr[kx];
                                            if (stride == 1) {
                                                double* dxs = dxr + kx;
                                                for (int64_t ow = 0; ow < c.ow; ++ow) dxs[ow] += wv * g[ow];
                                            } else {
                                                for (int64_t ow = 0; ow < c.ow; ++ow)
                                                    dxr[ow * stride + kx] += wv * g[ow];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    for (int64_t z = 0; z < c.d; ++z) {
                        for (int64_t y = 0; y < c.h; ++y) {
                            const double* src = dplane.data() + ((z + pad) * c.hp + y + pad) * c.wp + pad;
                            double* dst = dX + ((ic * c.d + z) * c.h + y) * c.w;
                            for (int64_t xw = 0; xw < c.w; ++xw) dst[xw] += src[xw];
                        }
                    }
                }
            }
        }
    });
    return Tensor(out);
}

// ---------------------------------------------------------------------------
// pooling and token ops

Tensor maxpool3d(const Tensor& x, int window) {
    if (x.rank() != 4) throw DimensionError("maxpool3d: input must be [c,d,h,w], got " + shape_str(x.shape()));
    if (window < 1) throw ValidationError("maxpool3d: window must be >= 1");
    const int64_t cch = x.dim(0), d = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int64_t m = window;
    if (d % m || h % m || w % m) {
        throw DimensionError("maxpool3d: extents " + shape_str(x.shape()) +
                             " not divisible by window " + std::to_string(window));
    }
    const int64_t od = d / m, oh = h / m, ow = w / m;
    auto out = new_node({cch, od, oh, ow});
    auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(out->numel()));
    const double* X = x.data().data();
    double* O = out->value.data();
    int64_t oi = 0;
    for (int64_t ci = 0; ci < cch; ++ci) {
        for (int64_t z = 0; z < od; ++z) {
            for (int64_t y = 0; y < oh; ++y) {
                for (int64_t xx = 0; xx < ow; ++xx, ++oi) {
                    double best = -std::numeric_limits<double>::infinity();
                    int64_t best_i = -1;
                    for (int64_t kz = 0; kz < m; ++kz) {
                        for (int64_t ky = 0; ky < m; ++ky) {
                            const int64_t base = ((ci * d + z * m + kz) * h + y * m + ky) * w + xx * m;
                            for (int64_t kx = 0; kx < m; ++kx) {
                                const double v = X[base + kx];
                                if (v > best) { best = v; best_i = base + kx; } // first max wins ties
                            }
                        }
                    }
                    O[oi] = best;
                    (*argmax)[static_cast<size_t>(oi)] = best_i;
                }
            }
        }
    }
    attach(out, {x.node()}, [argmax](TensorNode& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
            p->grad[static_cast<size_t>((*argmax)[i])] += self.grad[i];
    });
    return Tensor(out);
}

Tensor channels_to_tokens(const Tensor& fm) {
    if (fm.rank() != 4) throw DimensionError("channels_to_tokens: input must be rank 4, got " + shape_str(fm.shape()));
    const int64_t cch = fm.dim(0);
    const int64_t n = fm.dim(1) * fm.dim(2) * fm.dim(3);
    auto out = new_node({n, cch});
    const double* X = fm.data().data();
    double* O = out->value.data();
    for (int64_t ci = 0; ci < cch; ++ci) {
        const double* plane = X + ci * n;
        for (int64_t i = 0; i < n; ++i) O[i * cch + ci] = plane[i];
    }
    attach(out, {fm.node()}, [cch, n](TensorNode& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        double* dX = p->grad.data();
        const double* G = self.grad.data();
        for (int64_t ci = 0; ci < cch; ++ci) {
            double* plane = dX + ci * n;
            for (int64_t i = 0; i < n; ++i) plane[i] += G[i * cch + ci];
        }
    });
    return Tensor(out);
}

Tensor global_avg_pool(const Tensor& tokens) {
    if (tokens.rank() != 2) {
        throw DimensionError("global_avg_pool: input must be [n,d], got " + shape_str(tokens.shape()));
    }
    const int64_t n = tokens.dim(0), d = tokens.dim(1);
    auto out = new_node({d});
    const double* X = tokens.data().data();
    double* O = out->value.data();
    for (int64_t i = 0; i < n; ++i) {
        const double* row = X + i * d;
        for (int64_t j = 0; j < d; ++j) O[j] += row[j];
    }
    const double inv = 1.0 / static_cast<double>(n);
    for (int64_t j = 0; j < d; ++j) O[j] *= inv;
    attach(out, {tokens.node()}, [n, d, inv](TensorNode& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        double* dX = p->grad.data();
        const double* G = self.grad.data();
        for (int64_t i = 0; i < n; ++i) {
            double* row = dX + i * d;
            for (int64_t j = 0; j < d; ++j) row[j] += G[j] * inv;
        }
    });
    return Tensor(out);
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
    if (a.rank() == 1 && b.rank() == 1) {
        const int64_t la = a.dim(0), lb = b.dim(0);
        auto out = new_node({la + lb});
        std::copy(a.data().begin(), a.data().end(), out->value.begin());
        std::copy(b.data().begin(), b.data().end(), out->value.begin() + la);
        attach(out, {a.node(), b.node()}, [la, lb](TensorNode& self) {
            auto& pa = self.parents[0];
            auto& pb = self.parents[1];
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (int64_t i = 0; i < la; ++i) pa->grad[static_cast<size_t>(i)] += self.grad[static_cast<size_t>(i)];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (int64_t i = 0; i < lb; ++i) pb->grad[static_cast<size_t>(i)] += self.grad[static_cast<size_t>(la + i)];
            }
        });
        return Tensor(out);
    }
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
        throw DimensionError("concat_rows: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    }
    const int64_t na = a.dim(0), nb = b.dim(0), d = a.dim(1);
    auto out = new_node({na + nb, d});
    std::copy(a.data().begin(), a.data().end(), out->value.begin());
    std::copy(b.data().begin(), b.data().end(), out->value.begin() + na * d);
    attach(out, {a.node(), b.node()}, [na, nb, d](TensorNode& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (int64_t i = 0; i < na * d; ++i) pa->grad[static_cast<size_t>(i)] += self.grad[static_cast<size_t>(i)];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (int64_t i = 0; i < nb * d; ++i)
                pb->grad[static_cast<size_t>(i)] += self.grad[static_cast<size_t>(na * d + i)];
        }
    });
    return Tensor(out);
}

Tensor slice_rows(const Tensor& x, int64_t begin, int64_t end) {
    if (x.rank() != 2) throw DimensionError("slice_rows: input must be rank 2, got " + shape_str(x.shape()));
    const int64_t n = x.dim(0), d = x.dim(1);
    if (begin < 0 || end > n || begin >= end) {
        throw ValidationError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                              ") out of bounds for " + shape_str(x.shape()));
    }
    const int64_t rows = end - begin;
    auto out = new_node({rows, d});
    std::copy(x.data().begin() + begin * d, x.data().begin() + end * d, out->value.begin());
    attach(out, {x.node()}, [begin, rows, d](TensorNode& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (int64_t i = 0; i < rows * d; ++i)
            p->grad[static_cast<size_t>(begin * d + i)] += self.grad[static_cast<size_t>(i)];
    });
    return Tensor(out);
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.rank() != 4 || b.rank() != 4 || a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2) ||
        a.dim(3) != b.dim(3)) {
        throw DimensionError("concat_channels: incompatible shapes " + shape_str(a.shape()) +
                             " and " + shape_str(b.shape()));
    }
    const int64_t ca = a.dim(0), cb = b.dim(0);
    auto out = new_node({ca + cb, a.dim(1), a.dim(2), a.dim(3)});
    std::copy(a.data().begin(), a.data().end(), out->value.begin());
    std::copy(b.data().begin(), b.data().end(), out->value.begin() + a.numel());
    const int64_t na = a.numel(), nb = b.numel();
    attach(out, {a.node(), b.node()}, [na, nb](TensorNode& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (int64_t i = 0; i < na; ++i) pa->grad[static_cast<size_t>(i)] += self.grad[static_cast<size_t>(i)];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (int64_t i = 0; i < nb; ++i) pb->grad[static_cast<size_t>(i)] += self.grad[static_cast<size_t>(na + i)];
        }
    });
    return Tensor(out);
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
    if (rows.empty()) throw ValidationError("stack_rows: empty input");
    const int64_t d = rows[0].numel();
    for (const auto& r : rows) {
        if (r.rank() != 1 || r.dim(0) != d) {
            throw DimensionError("stack_rows: rows must all be rank-1 of length " + std::to_string(d));
        }
    }
    const int64_t n = static_cast<int64_t>(rows.size());
    auto out = new_node({n, d});
    std::vector<NodePtr> parents;
    parents.reserve(rows.size());
    for (int64_t i = 0; i < n; ++i) {
        std::copy(rows[static_cast<size_t>(i)].data().begin(), rows[static_cast<size_t>(i)].data().end(),
                  out->value.begin() + i * d);
        parents.push_back(rows[static_cast<size_t>(i)].node());
    }
    attach(out, std::move(parents), [d](TensorNode& self) {
        for (size_t i = 0; i < self.parents.size(); ++i) {
            auto& p = self.parents[i];
            if (!p->requires_grad) continue;
            p->ensure_grad();
            for (int64_t j = 0; j < d; ++j)
                p->grad[static_cast<size_t>(j)] += self.grad[i * static_cast<size_t>(d) + static_cast<size_t>(j)];
        }
    });
    return Tensor(out);
}

// ---------------------------------------------------------------------------
// attention

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) {
        throw DimensionError("attention: operands must be rank 2");
    }
    const int64_t nq = q.dim(0), d = q.dim(1);
    const int64_t nk = k.dim(0);
    if (k.dim(1) != d || v.dim(1) != d) {
        throw DimensionError("attention: embedding dims differ, q " + shape_str(q.shape()) + " k " +
                             shape_str(k.shape()) + " v " + shape_str(v.shape()));
    }
    if (v.dim(0) != nk) {
        throw DimensionError("attention: key/value row counts differ, " + shape_str(k.shape()) +
                             " vs " + shape_str(v.shape()));
    }
    if (heads < 1 || d % heads != 0) {
        throw DimensionError("attention: embedding dim " + std::to_string(d) +
                             " not divisible by heads " + std::to_string(heads));
    }
    const int64_t dh = d / heads;
    const double scl = 1.0 / std::sqrt(static_cast<double>(dh));

    auto out = new_node({nq, d});
    // attention weights cached per head for backward: [h][nq][nk]
    auto attn = std::make_shared<std::vector<double>>(static_cast<size_t>(heads * nq * nk));
    const double* Q = q.data().data();
    const double* K = k.data().data();
    const double* V = v.data().data();
    double* O = out->value.data();

    std::vector<double> srow(static_cast<size_t>(nk));
    for (int64_t h = 0; h < heads; ++h) {
        const int64_t c0 = h * dh;
        double* A = attn->data() + h * nq * nk;
        for (int64_t i = 0; i < nq; ++i) {
            const double* qrow = Q + i * d + c0;
            for (int64_t j = 0; j < nk; ++j) {
                const double* krow = K + j * d + c0;
                double acc = 0.0;
                for (int64_t cidx = 0; cidx < dh; ++cidx) acc += qrow[cidx] * krow[cidx];
                srow[static_cast<size_t>(j)] = acc * scl;
            }
            double m = srow[0];
            for (int64_t j = 1; j < nk; ++j) m = std::max(m, srow[static_cast<size_t>(j)]);
            double s = 0.0;
            double* arow = A + i * nk;
            for (int64_t j = 0; j < nk; ++j) {
                arow[j] = std::exp(srow[static_cast<size_t>(j)] - m);
                s += arow[j];
            }
            const double inv = 1.0 / s;
            for (int64_t j = 0; j < nk; ++j) arow[j] *= inv;
            double* orow = O + i * d + c0;
            for (int64_t cidx = 0; cidx < dh; ++cidx) orow[cidx] = 0.0;
            for (int64_t j = 0; j < nk; ++j) {
                const double a = arow[j];
                const double* vrow = V + j * d + c0;
                for (int64_t cidx = 0; cidx < dh; ++cidx) orow[cidx] += a * vrow[cidx];
            }
        }
    }

    attach(out, {q.node(), k.node(), v.node()}, [nq, nk, d, heads, dh, scl, attn](TensorNode& self) {
        auto& pq = self.parents[0];
        auto& pk = self.parents[1];
        auto& pv = self.parents[2];
        const double* G = self.grad.data();
        const double* Q = pq->value.data();
        const double* K = pk->value.data();
        const double* V = pv->value.data();
        if (pq->requires_grad) pq->ensure_grad();
        if (pk->requires_grad) pk->ensure_grad();
        if (pv->requires_grad) pv->ensure_grad();

        std::vector<double> dA(static_cast<size_t>(nk));
        std::vector<double> dS(static_cast<size_t>(nk));
        for (int64_t h = 0; h < heads; ++h) {
            const int64_t c0 = h * dh;
            const double* A = attn->data() + h * nq * nk;
            for (int64_t i = 0; i < nq; ++i) {
                const double* arow = A + i * nk;
                const double* grow = G + i * d + c0;
                // dA = dO . V^T ; dV += A^T dO
                for (int64_t j = 0; j < nk; ++j) {
                    const double* vrow = V + j * d + c0;
                    double acc = 0.0;
                    for (int64_t cidx = 0; cidx < dh; ++cidx) acc += grow[cidx] * vrow[cidx];
                    dA[static_cast<size_t>(j)] = acc;
                }
                if (pv->requires_grad) {
                    for (int64_t j = 0; j < nk; ++j) {
                        double* dvrow = pv->grad.data() + j * d + c0;
                        const double a = arow[j];
                        for (int64_t cidx = 0; cidx < dh; ++cidx) dvrow[cidx] += a * grow[cidx];
                    }
                }
                if (!pq->requires_grad && !pk->requires_grad) continue;
                // softmax backward
                double dot = 0.0;
                for (int64_t j = 0; j < nk; ++j) dot += dA[static_cast<size_t>(j)] * arow[j];
                for (int64_t j = 0; j < nk; ++j)
                    dS[static_cast<size_t>(j)] = arow[j] * (dA[static_cast<size_t>(j)] - dot);
                if (pq->requires_grad) {
                    double* dqrow = pq->grad.data() + i * d + c0;
                    for (int64_t j = 0; j < nk; ++j) {
                        const double ds = dS[static_cast<size_t>(j)] * scl;
                        const double* krow = K + j * d + c0;
                        for (int64_t cidx = 0; cidx < dh; ++cidx) dqrow[cidx] += ds * krow[cidx];
                    }
                }
                if (pk->requires_grad) {
                    const double* qrow = Q + i * d + c0;
                    for (int64_t j = 0; j < nk; ++j) {
                        const double ds = dS[static_cast<size_t>(j)] * scl;
                        double* dkrow = pk->grad.data() + j * d + c0;
                        for (int64_t cidx = 0; cidx < dh; ++cidx) dkrow[cidx] += ds * qrow[cidx];
                    }
                }
            }
        }
    });
    return Tensor(out);
}

// ---------------------------------------------------------------------------
// loss

Tensor cross_entropy_loss(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2 || logits.dim(1) != 2) {
        throw DimensionError("cross_entropy: logits must be [b,2], got " + shape_str(logits.shape()));
    }
    const int64_t bsz = logits.dim(0);
    if (static_cast<int64_t>(labels.size()) != bsz) {
        throw ValidationError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                              std::to_string(bsz));
    }
    for (int y : labels) {
        if (y != 0 && y != 1) throw ValidationError("cross_entropy: label " + std::to_string(y) + " outside {0,1}");
    }
    auto out = new_node(Shape{});
    auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(bsz * 2));
    const double* L = logits.data().data();
    double acc = 0.0;
    for (int64_t i = 0; i < bsz; ++i) {
        const double l0 = L[i * 2], l1 = L[i * 2 + 1];
        const double m = std::max(l0, l1);
        const double e0 = std::exp(l0 - m), e1 = std::exp(l1 - m);
        const double z = e0 + e1;
        (*probs)[static_cast<size_t>(i * 2)] = e0 / z;
        (*probs)[static_cast<size_t>(i * 2 + 1)] = e1 / z;
        const double ly = labels[static_cast<size_t>(i)] == 0 ? l0 : l1;
        acc += std::log(z) - (ly - m);
    }
    out->value[0] = acc / static_cast<double>(bsz);
    auto labels_copy = std::make_shared<std::vector<int>>(labels);
    attach(out, {logits.node()}, [bsz, probs, labels_copy](TensorNode& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        const double g = self.grad[0] / static_cast<double>(bsz);
        for (int64_t i = 0; i < bsz; ++i) {
            const int y = (*labels_copy)[static_cast<size_t>(i)];
            p->grad[static_cast<size_t>(i * 2)] += g * ((*probs)[static_cast<size_t>(i * 2)] - (y == 0 ? 1.0 : 0.0));
            p->grad[static_cast<size_t>(i * 2 + 1)] += g * ((*probs)[static_cast<size_t>(i * 2 + 1)] - (y == 1 ? 1.0 : 0.0));
        }
    });
    return Tensor(out);
}

// ---------------------------------------------------------------------------
// backward

void backward(const Tensor& loss) {
    if (!loss.defined()) throw ValidationError("backward: undefined tensor");
    auto root = loss.node();
    if (!root->shape.empty() || root->numel() != 1) {
        throw ValidationError("backward: loss must be a scalar, got shape " + shape_str(root->shape));
    }
    if (!root->requires_grad) return; // nothing trainable feeds this loss

    // reverse topological order via iterative DFS over the requires_grad subgraph
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    std::vector<std::pair<TensorNode*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& top = stack.back();
        TensorNode* n = top.first;
        if (top.second < n->parents.size()) {
            TensorNode* p = n->parents[top.second].get();
            ++top.second;
            if (p && p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* n = *it;
        if (n->backprop) {
            n->ensure_grad();
            n->backprop(*n);
        }
    }
}

} // namespace jmfuse
