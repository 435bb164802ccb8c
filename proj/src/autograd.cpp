#include "cardiosynth/autograd.hpp"

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>

namespace cardiosynth::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                                    shape_to_string(b.shape()));
}

void require_rank(const Var& a, int rank, const char* op) {
    if (a.value().rank() != rank)
        throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                                    shape_to_string(a.shape()));
}

template <class F>
Var unary(Var a, F&& f, Tape::Backward back) {
    const Tensor& in = a.value();
    Tensor out(in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
    return a.tape->push(std::move(out), {a}, std::move(back));
}

int conv_out(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

// cols: [Cin*k*k, Ho*Wo]
void im2col(const double* x, int cin, int h, int w, int k, int stride, int pad, int ho, int wo, double* cols) {
    const int p = ho * wo;
    for (int c = 0; c < cin; ++c) {
        const double* xc = x + static_cast<std::size_t>(c) * h * w;
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                double* row = cols + static_cast<std::size_t>((c * k + ki) * k + kj) * p;
                for (int oh = 0; oh < ho; ++oh) {
                    const int ih = oh * stride - pad + ki;
                    double* dst = row + oh * wo;
                    if (ih < 0 || ih >= h) {
                        std::fill(dst, dst + wo, 0.0);
                        continue;
                    }
                    const double* src = xc + static_cast<std::size_t>(ih) * w;
                    for (int ow = 0; ow < wo; ++ow) {
                        const int iw = ow * stride - pad + kj;
                        dst[ow] = (iw >= 0 && iw < w) ? src[iw] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_add(const double* cols, int cin, int h, int w, int k, int stride, int pad, int ho, int wo, double* x) {
    const int p = ho * wo;
    for (int c = 0; c < cin; ++c) {
        double* xc = x + static_cast<std::size_t>(c) * h * w;
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                const double* row = cols + static_cast<std::size_t>((c * k + ki) * k + kj) * p;
                for (int oh = 0; oh < ho; ++oh) {
                    const int ih = oh * stride - pad + ki;
                    if (ih < 0 || ih >= h) continue;
                    double* dst = xc + static_cast<std::size_t>(ih) * w;
                    const double* src = row + oh * wo;
                    for (int ow = 0; ow < wo; ++ow) {
                        const int iw = ow * stride - pad + kj;
                        if (iw >= 0 && iw < w) dst[iw] += src[ow];
                    }
                }
            }
        }
    }
}

Var conv2d_impl(Var x, Var w, const Var* b, int stride, int pad) {
    require_rank(x, 4, "conv2d");
    require_rank(w, 4, "conv2d");
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    const int n = xv.dim(0), cin = xv.dim(1), h = xv.dim(2), wd = xv.dim(3);
    const int cout = wv.dim(0), k = wv.dim(2);
    if (wv.dim(1) != cin || wv.dim(3) != k)
        throw std::invalid_argument("conv2d: weight " + shape_to_string(wv.shape()) + " incompatible with input " +
                                    shape_to_string(xv.shape()));
    if (b && (b->value().rank() != 1 || b->value().dim(0) != cout))
        throw std::invalid_argument("conv2d: bias shape " + shape_to_string(b->shape()));
    const int ho = conv_out(h, k, stride, pad), wo = conv_out(wd, k, stride, pad);
    if (ho <= 0 || wo <= 0) throw std::invalid_argument("conv2d: input too small " + shape_to_string(xv.shape()));
    const int kk = cin * k * k, p = ho * wo;
    const bool direct = (k == 1 && stride == 1 && pad == 0);

    Tensor out({n, cout, ho, wo});
    AlignedDoubles cols(direct ? 0 : static_cast<std::size_t>(kk) * p);
    ConstMatMap wm(wv.data(), cout, kk);
    for (int s = 0; s < n; ++s) {
        const double* xs = xv.data() + static_cast<std::size_t>(s) * cin * h * wd;
        const double* colp = xs;
        if (!direct) {
            im2col(xs, cin, h, wd, k, stride, pad, ho, wo, cols.data());
            colp = cols.data();
        }
        MatMap om(out.data() + static_cast<std::size_t>(s) * cout * p, cout, p);
        om.noalias() = wm * ConstMatMap(colp, kk, p);
        if (b) {
            const Tensor& bv = b->value();
            for (int c = 0; c < cout; ++c) om.row(c).array() += bv[static_cast<std::size_t>(c)];
        }
    }

    const std::size_t xid = x.id, wid = w.id, bid = b ? b->id : 0;
    const bool has_bias = b != nullptr;
    auto back = [=](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& xv2 = t.value(xid);
        const Tensor& wv2 = t.value(wid);
        const bool gx = t.requires_grad(xid), gw = t.requires_grad(wid);
        const bool gb = has_bias && t.requires_grad(bid);
        AlignedDoubles cols2(direct ? 0 : static_cast<std::size_t>(kk) * p);
        AlignedDoubles dcols(gx && !direct ? static_cast<std::size_t>(kk) * p : 0);
        ConstMatMap wm2(wv2.data(), cout, kk);
        Tensor* dw = gw ? &t.grad_accumulator(wid) : nullptr;
        Tensor* dx = gx ? &t.grad_accumulator(xid) : nullptr;
        Tensor* db = gb ? &t.grad_accumulator(bid) : nullptr;
        for (int s = 0; s < n; ++s) {
            ConstMatMap gm(g.data() + static_cast<std::size_t>(s) * cout * p, cout, p);
            const double* xs = xv2.data() + static_cast<std::size_t>(s) * cin * h * wd;
            if (dw) {
                const double* colp = xs;
                if (!direct) {
                    im2col(xs, cin, h, wd, k, stride, pad, ho, wo, cols2.data());
                    colp = cols2.data();
                }
                MatMap dwm(dw->data(), cout, kk);
                dwm.noalias() += gm * ConstMatMap(colp, kk, p).transpose();
            }
            if (dx) {
                double* dxs = dx->data() + static_cast<std::size_t>(s) * cin * h * wd;
                if (direct) {
                    MatMap(dxs, kk, p).noalias() += wm2.transpose() * gm;
                } else {
                    MatMap dc(dcols.data(), kk, p);
                    dc.noalias() = wm2.transpose() * gm;
                    col2im_add(dcols.data(), cin, h, wd, k, stride, pad, ho, wo, dxs);
                }
            }
            if (db) {
                for (int c = 0; c < cout; ++c) (*db)[static_cast<std::size_t>(c)] += gm.row(c).sum();
            }
        }
    };
    if (b) return x.tape->push(std::move(out), {x, w, *b}, back);
    return x.tape->push(std::move(out), {x, w}, back);
}

// Normalisation over contiguous groups. `group_of(block)` maps each block of
// `block_len` contiguous elements to its statistics group.
struct GroupLayout {
    std::size_t blocks;
    std::size_t block_len;
    std::size_t groups;
    std::function<std::size_t(std::size_t)> group_of;
};

Var normalize_groups(Var x, const GroupLayout& layout, double eps, NormStats* stats) {
    const Tensor& xv = x.value();
    std::vector<double> mean(layout.groups, 0.0), var(layout.groups, 0.0);
    std::vector<std::size_t> count(layout.groups, 0);
    for (std::size_t b = 0; b < layout.blocks; ++b) {
        const std::size_t g = layout.group_of(b);
        const double* p = xv.data() + b * layout.block_len;
        for (std::size_t i = 0; i < layout.block_len; ++i) mean[g] += p[i];
        count[g] += layout.block_len;
    }
    for (std::size_t g = 0; g < layout.groups; ++g) mean[g] /= static_cast<double>(count[g]);
    for (std::size_t b = 0; b < layout.blocks; ++b) {
        const std::size_t g = layout.group_of(b);
        const double* p = xv.data() + b * layout.block_len;
        for (std::size_t i = 0; i < layout.block_len; ++i) {
            const double d = p[i] - mean[g];
            var[g] += d * d;
        }
    }
    std::vector<double> inv_std(layout.groups);
    for (std::size_t g = 0; g < layout.groups; ++g) {
        var[g] /= static_cast<double>(count[g]);
        inv_std[g] = 1.0 / std::sqrt(var[g] + eps);
    }
    Tensor out(xv.shape());
    for (std::size_t b = 0; b < layout.blocks; ++b) {
        const std::size_t g = layout.group_of(b);
        const double* p = xv.data() + b * layout.block_len;
        double* o = out.data() + b * layout.block_len;
        for (std::size_t i = 0; i < layout.block_len; ++i) o[i] = (p[i] - mean[g]) * inv_std[g];
    }
    if (stats) {
        stats->mean = mean;
        stats->var = var;
    }
    const std::size_t xid = x.id;
    return x.tape->push(std::move(out), {x}, [layout, inv_std, count, xid](Tape& t, std::size_t self) {
        const Tensor& gy = t.grad(self);
        const Tensor& y = t.value(self);
        std::vector<double> mg(layout.groups, 0.0), mgy(layout.groups, 0.0);
        for (std::size_t b = 0; b < layout.blocks; ++b) {
            const std::size_t g = layout.group_of(b);
            const double* gp = gy.data() + b * layout.block_len;
            const double* yp = y.data() + b * layout.block_len;
            for (std::size_t i = 0; i < layout.block_len; ++i) {
                mg[g] += gp[i];
                mgy[g] += gp[i] * yp[i];
            }
        }
        for (std::size_t g = 0; g < layout.groups; ++g) {
            mg[g] /= static_cast<double>(count[g]);
            mgy[g] /= static_cast<double>(count[g]);
        }
        Tensor& dx = t.grad_accumulator(xid);
        for (std::size_t b = 0; b < layout.blocks; ++b) {
            const std::size_t g = layout.group_of(b);
            const double* gp = gy.data() + b * layout.block_len;
            const double* yp = y.data() + b * layout.block_len;
            double* d = dx.data() + b * layout.block_len;
            for (std::size_t i = 0; i < layout.block_len; ++i) d[i] += inv_std[g] * (gp[i] - mg[g] - yp[i] * mgy[g]);
        }
    });
}

}  // namespace

const Tensor& Var::value() const { return tape->value(id); }
bool Var::requires_grad() const { return tape->requires_grad(id); }

Var Tape::leaf(Tensor value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, nullptr});
    return Var{this, nodes_.size() - 1};
}

Var Tape::push(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
    bool needs = false;
    for (const Var& v : inputs) {
        if (v.tape != this) throw std::logic_error("autograd: mixing vars from different tapes");
        needs = needs || nodes_[v.id].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), Tensor{}, needs, needs ? std::move(backward) : nullptr});
    return Var{this, nodes_.size() - 1};
}

Tensor& Tape::grad_accumulator(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.shape());
    return n.grad;
}

void Tape::backward(Var root) {
    if (root.tape != this) throw std::logic_error("autograd: root belongs to another tape");
    if (nodes_[root.id].value.size() != 1) throw std::invalid_argument("autograd: backward root must be a scalar");
    for (Node& n : nodes_) n.grad = Tensor{};
    grad_accumulator(root.id).fill(1.0);
    for (std::size_t i = root.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.backward && !n.grad.empty()) n.backward(*this, i);
    }
}

Var add(Var a, Var b) {
    require_same_shape(a, b, "add");
    Tensor out(a.shape());
    const Tensor &av = a.value(), &bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    const std::size_t ai = a.id, bi = b.id;
    return a.tape->push(std::move(out), {a, b}, [ai, bi](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        for (std::size_t id : {ai, bi}) {
            if (!t.requires_grad(id)) continue;
            Tensor& d = t.grad_accumulator(id);
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
        }
    });
}

Var sub(Var a, Var b) {
    require_same_shape(a, b, "sub");
    Tensor out(a.shape());
    const Tensor &av = a.value(), &bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    const std::size_t ai = a.id, bi = b.id;
    return a.tape->push(std::move(out), {a, b}, [ai, bi](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        if (t.requires_grad(ai)) {
            Tensor& d = t.grad_accumulator(ai);
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
        }
        if (t.requires_grad(bi)) {
            Tensor& d = t.grad_accumulator(bi);
            for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
        }
    });
}

Var mul(Var a, Var b) {
    require_same_shape(a, b, "mul");
    Tensor out(a.shape());
    const Tensor &av = a.value(), &bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    const std::size_t ai = a.id, bi = b.id;
    return a.tape->push(std::move(out), {a, b}, [ai, bi](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor &av2 = t.value(ai), &bv2 = t.value(bi);
        if (t.requires_grad(ai)) {
            Tensor& d = t.grad_accumulator(ai);
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * bv2[i];
        }
        if (t.requires_grad(bi)) {
            Tensor& d = t.grad_accumulator(bi);
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * av2[i];
        }
    });
}

Var scale(Var a, double s) {
    const std::size_t ai = a.id;
    return unary(a, [s](double v) { return v * s; }, [ai, s](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        Tensor& d = t.grad_accumulator(ai);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * s;
    });
}

Var add_scalar(Var a, double s) {
    const std::size_t ai = a.id;
    return unary(a, [s](double v) { return v + s; }, [ai](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        Tensor& d = t.grad_accumulator(ai);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    });
}

Var neg(Var a) { return scale(a, -1.0); }

Var square(Var a) {
    const std::size_t ai = a.id;
    return unary(a, [](double v) { return v * v; }, [ai](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& x = t.value(ai);
        Tensor& d = t.grad_accumulator(ai);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += 2.0 * x[i] * g[i];
    });
}

Var exp(Var a) {
    const std::size_t ai = a.id;
    return unary(a, [](double v) { return std::exp(v); }, [ai](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& y = t.value(self);
        Tensor& d = t.grad_accumulator(ai);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * y[i];
    });
}

Var tanh(Var a) {
    const std::size_t ai = a.id;
    return unary(a, [](double v) { return std::tanh(v); }, [ai](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& y = t.value(self);
        Tensor& d = t.grad_accumulator(ai);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * (1.0 - y[i] * y[i]);
    });
}

Var relu(Var a) { return leaky_relu(a, 0.0); }

Var leaky_relu(Var a, double slope) {
    const std::size_t ai = a.id;
    return unary(a, [slope](double v) { return v > 0.0 ? v : slope * v; }, [ai, slope](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& x = t.value(ai);
        Tensor& d = t.grad_accumulator(ai);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += x[i] > 0.0 ? g[i] : slope * g[i];
    });
}

Var reshape(Var a, Shape shape) {
    Tensor out = a.value().reshaped(std::move(shape));
    const std::size_t ai = a.id;
    return a.tape->push(std::move(out), {a}, [ai](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        Tensor& d = t.grad_accumulator(ai);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    });
}

Var sum(Var a) {
    double s = 0.0;
    for (double v : a.value().values()) s += v;
    const std::size_t ai = a.id;
    return a.tape->push(Tensor({1}, s), {a}, [ai](Tape& t, std::size_t self) {
        const double g = t.grad(self)[0];
        Tensor& d = t.grad_accumulator(ai);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g;
    });
}

Var mean(Var a) {
    const std::size_t n = a.value().size();
    if (n == 0) throw std::invalid_argument("mean: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var mean_abs_diff(Var a, Var b) {
    require_same_shape(a, b, "mean_abs_diff");
    const Tensor &av = a.value(), &bv = b.value();
    const std::size_t n = av.size();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::abs(av[i] - bv[i]);
    const std::size_t ai = a.id, bi = b.id;
    return a.tape->push(Tensor({1}, s / static_cast<double>(n)), {a, b}, [ai, bi, n](Tape& t, std::size_t self) {
        const double g = t.grad(self)[0] / static_cast<double>(n);
        const Tensor &av2 = t.value(ai), &bv2 = t.value(bi);
        const bool ga = t.requires_grad(ai), gb = t.requires_grad(bi);
        Tensor* da = ga ? &t.grad_accumulator(ai) : nullptr;
        Tensor* db = gb ? &t.grad_accumulator(bi) : nullptr;
        for (std::size_t i = 0; i < n; ++i) {
            const double diff = av2[i] - bv2[i];
            const double sgn = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
            if (da) (*da)[i] += g * sgn;
            if (db) (*db)[i] -= g * sgn;
        }
    });
}

Var conv2d(Var x, Var w, Var b, int stride, int pad) { return conv2d_impl(x, w, &b, stride, pad); }

Var conv2d_nobias(Var x, Var w, int stride, int pad) { return conv2d_impl(x, w, nullptr, stride, pad); }

Var linear(Var x, Var w, Var b) {
    require_rank(x, 2, "linear");
    const Tensor &xv = x.value(), &wv = w.value(), &bv = b.value();
    const int n = xv.dim(0), in = xv.dim(1), out_dim = wv.dim(0);
    if (wv.rank() != 2 || wv.dim(1) != in || bv.rank() != 1 || bv.dim(0) != out_dim)
        throw std::invalid_argument("linear: weight " + shape_to_string(wv.shape()) + " / bias " +
                                    shape_to_string(bv.shape()) + " incompatible with input " +
                                    shape_to_string(xv.shape()));
    Tensor out({n, out_dim});
    MatMap om(out.data(), n, out_dim);
    om.noalias() = ConstMatMap(xv.data(), n, in) * ConstMatMap(wv.data(), out_dim, in).transpose();
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < out_dim; ++c) om(r, c) += bv[static_cast<std::size_t>(c)];
    const std::size_t xi = x.id, wi = w.id, bi = b.id;
    return x.tape->push(std::move(out), {x, w, b}, [=](Tape& t, std::size_t self) {
        ConstMatMap gm(t.grad(self).data(), n, out_dim);
        if (t.requires_grad(xi))
            MatMap(t.grad_accumulator(xi).data(), n, in).noalias() += gm * ConstMatMap(t.value(wi).data(), out_dim, in);
        if (t.requires_grad(wi))
            MatMap(t.grad_accumulator(wi).data(), out_dim, in).noalias() +=
                gm.transpose() * ConstMatMap(t.value(xi).data(), n, in);
        if (t.requires_grad(bi)) {
            Tensor& db = t.grad_accumulator(bi);
            for (int c = 0; c < out_dim; ++c) db[static_cast<std::size_t>(c)] += gm.col(c).sum();
        }
    });
}

Var batch_norm(Var x, double eps, NormStats* stats) {
    require_rank(x, 4, "batch_norm");
    const Shape& s = x.shape();
    const std::size_t c = static_cast<std::size_t>(s[1]);
    GroupLayout layout{static_cast<std::size_t>(s[0]) * c, static_cast<std::size_t>(s[2]) * s[3], c,
                       [c](std::size_t b) { return b % c; }};
    return normalize_groups(x, layout, eps, stats);
}

Var instance_norm(Var x, double eps) {
    require_rank(x, 4, "instance_norm");
    const Shape& s = x.shape();
    const std::size_t blocks = static_cast<std::size_t>(s[0]) * s[1];
    GroupLayout layout{blocks, static_cast<std::size_t>(s[2]) * s[3], blocks, [](std::size_t b) { return b; }};
    return normalize_groups(x, layout, eps, nullptr);
}

Var fixed_norm(Var x, const std::vector<double>& mean, const std::vector<double>& var, double eps) {
    require_rank(x, 4, "fixed_norm");
    const Shape& s = x.shape();
    const int c = s[1];
    if (mean.size() != static_cast<std::size_t>(c) || var.size() != static_cast<std::size_t>(c))
        throw std::invalid_argument("fixed_norm: statistics length does not match channel count");
    const std::size_t hw = static_cast<std::size_t>(s[2]) * s[3];
    std::vector<double> inv_std(static_cast<std::size_t>(c));
    for (int i = 0; i < c; ++i) inv_std[static_cast<std::size_t>(i)] = 1.0 / std::sqrt(var[static_cast<std::size_t>(i)] + eps);
    const Tensor& xv = x.value();
    Tensor out(s);
    for (std::size_t b = 0; b < static_cast<std::size_t>(s[0]) * c; ++b) {
        const std::size_t ch = b % static_cast<std::size_t>(c);
        for (std::size_t i = 0; i < hw; ++i) out[b * hw + i] = (xv[b * hw + i] - mean[ch]) * inv_std[ch];
    }
    const std::size_t xi = x.id;
    return x.tape->push(std::move(out), {x}, [xi, inv_std, hw, c](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        Tensor& d = t.grad_accumulator(xi);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * inv_std[(i / hw) % static_cast<std::size_t>(c)];
    });
}

Var upsample_nearest2x(Var x) {
    require_rank(x, 4, "upsample_nearest2x");
    const Shape& s = x.shape();
    const int nc = s[0] * s[1], h = s[2], w = s[3];
    const Tensor& xv = x.value();
    Tensor out({s[0], s[1], 2 * h, 2 * w});
    for (int b = 0; b < nc; ++b)
        for (int i = 0; i < 2 * h; ++i)
            for (int j = 0; j < 2 * w; ++j)
                out[(static_cast<std::size_t>(b) * 2 * h + i) * 2 * w + j] =
                    xv[(static_cast<std::size_t>(b) * h + i / 2) * w + j / 2];
    const std::size_t xi = x.id;
    return x.tape->push(std::move(out), {x}, [xi, nc, h, w](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        Tensor& d = t.grad_accumulator(xi);
        for (int b = 0; b < nc; ++b)
            for (int i = 0; i < 2 * h; ++i)
                for (int j = 0; j < 2 * w; ++j)
                    d[(static_cast<std::size_t>(b) * h + i / 2) * w + j / 2] +=
                        g[(static_cast<std::size_t>(b) * 2 * h + i) * 2 * w + j];
    });
}

Var avg_pool2x(Var x) {
    require_rank(x, 4, "avg_pool2x");
    const Shape& s = x.shape();
    const int nc = s[0] * s[1], h = s[2], w = s[3], ho = h / 2, wo = w / 2;
    if (ho == 0 || wo == 0) throw std::invalid_argument("avg_pool2x: input too small " + shape_to_string(s));
    const Tensor& xv = x.value();
    Tensor out({s[0], s[1], ho, wo});
    for (int b = 0; b < nc; ++b)
        for (int i = 0; i < ho; ++i)
            for (int j = 0; j < wo; ++j) {
                const std::size_t base = (static_cast<std::size_t>(b) * h + 2 * i) * w + 2 * j;
                out[(static_cast<std::size_t>(b) * ho + i) * wo + j] =
                    0.25 * (xv[base] + xv[base + 1] + xv[base + w] + xv[base + w + 1]);
            }
    const std::size_t xi = x.id;
    return x.tape->push(std::move(out), {x}, [xi, nc, h, w, ho, wo](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        Tensor& d = t.grad_accumulator(xi);
        for (int b = 0; b < nc; ++b)
            for (int i = 0; i < ho; ++i)
                for (int j = 0; j < wo; ++j) {
                    const double v = 0.25 * g[(static_cast<std::size_t>(b) * ho + i) * wo + j];
                    const std::size_t base = (static_cast<std::size_t>(b) * h + 2 * i) * w + 2 * j;
                    d[base] += v;
                    d[base + 1] += v;
                    d[base + w] += v;
                    d[base + w + 1] += v;
                }
    });
}

Var concat_channels(Var a, Var b) {
    require_rank(a, 4, "concat_channels");
    require_rank(b, 4, "concat_channels");
    const Shape &sa = a.shape(), &sb = b.shape();
    if (sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3])
        throw std::invalid_argument("concat_channels: shape mismatch " + shape_to_string(sa) + " vs " +
                                    shape_to_string(sb));
    const int n = sa[0], ca = sa[1], cb = sb[1];
    const std::size_t hw = static_cast<std::size_t>(sa[2]) * sa[3];
    Tensor out({n, ca + cb, sa[2], sa[3]});
    const Tensor &av = a.value(), &bv = b.value();
    for (int s = 0; s < n; ++s) {
        std::copy_n(av.data() + s * ca * hw, ca * hw, out.data() + s * (ca + cb) * hw);
        std::copy_n(bv.data() + s * cb * hw, cb * hw, out.data() + (s * (ca + cb) + ca) * hw);
    }
    const std::size_t ai = a.id, bi = b.id;
    return a.tape->push(std::move(out), {a, b}, [=](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        for (int s = 0; s < n; ++s) {
            if (t.requires_grad(ai)) {
                Tensor& d = t.grad_accumulator(ai);
                for (std::size_t i = 0; i < ca * hw; ++i) d[s * ca * hw + i] += g[s * (ca + cb) * hw + i];
            }
            if (t.requires_grad(bi)) {
                Tensor& d = t.grad_accumulator(bi);
                for (std::size_t i = 0; i < cb * hw; ++i) d[s * cb * hw + i] += g[(s * (ca + cb) + ca) * hw + i];
            }
        }
    });
}

Var reparameterize(Var mu, Var logvar, const Tensor& noise) {
    require_same_shape(mu, logvar, "reparameterize");
    if (noise.shape() != mu.shape()) throw std::invalid_argument("reparameterize: noise shape mismatch");
    Var n = mu.tape->constant(noise);
    return add(mu, mul(exp(scale(logvar, 0.5)), n));
}

}  // namespace cardiosynth::ag
