#pragma once

// Differentiable primitives over TensorT. Each op computes its value
// eagerly and, when grad mode is on and an input requires grad, registers
// a closure that scatters the output gradient back to the inputs.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "tinydpm/tensor.hpp"

namespace tinydpm {

namespace detail {

template <class T>
using EigenMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<EigenMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const EigenMat<T>>;

template <class T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* who) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(who) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

}  // namespace detail

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<T> out(a.data());
    const auto& bd = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
    return TensorT<T>::make_result(a.shape(), std::move(out), {a.node(), b.node()},
        [](detail::Node<T>& n) {
            for (int k = 0; k < 2; ++k) {
                auto& p = *n.parents[static_cast<size_t>(k)];
                if (!p.requires_grad) continue;
                auto& g = p.ensure_grad();
                for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
            }
        });
}

template <class T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<T> out(a.data());
    const auto& bd = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
    return TensorT<T>::make_result(a.shape(), std::move(out), {a.node(), b.node()},
        [](detail::Node<T>& n) {
            auto& pa = *n.parents[0];
            auto& pb = *n.parents[1];
            if (pa.requires_grad) {
                auto& g = pa.ensure_grad();
                for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
            }
            if (pb.requires_grad) {
                auto& g = pb.ensure_grad();
                for (size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
            }
        });
}

template <class T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<T> out(a.data());
    const auto& bd = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
    return TensorT<T>::make_result(a.shape(), std::move(out), {a.node(), b.node()},
        [](detail::Node<T>& n) {
            auto& pa = *n.parents[0];
            auto& pb = *n.parents[1];
            if (pa.requires_grad) {
                auto& g = pa.ensure_grad();
                for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pb.value[i];
            }
            if (pb.requires_grad) {
                auto& g = pb.ensure_grad();
                for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pa.value[i];
            }
        });
}

template <class T>
TensorT<T> add_scalar(const TensorT<T>& a, double s) {
    std::vector<T> out(a.data());
    for (auto& v : out) v += static_cast<T>(s);
    return TensorT<T>::make_result(a.shape(), std::move(out), {a.node()},
        [](detail::Node<T>& n) {
            auto& p = *n.parents[0];
            if (!p.requires_grad) return;
            auto& g = p.ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        });
}

template <class T>
TensorT<T> mul_scalar(const TensorT<T>& a, double s) {
    std::vector<T> out(a.data());
    for (auto& v : out) v = static_cast<T>(v * s);
    return TensorT<T>::make_result(a.shape(), std::move(out), {a.node()},
        [s](detail::Node<T>& n) {
            auto& p = *n.parents[0];
            if (!p.requires_grad) return;
            auto& g = p.ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] += static_cast<T>(n.grad[i] * s);
        });
}

template <class T>
TensorT<T> silu(const TensorT<T>& a) {
    std::vector<T> out(a.data());
    for (auto& v : out) {
        double x = static_cast<double>(v);
        v = static_cast<T>(x / (1.0 + std::exp(-x)));
    }
    return TensorT<T>::make_result(a.shape(), std::move(out), {a.node()},
        [](detail::Node<T>& n) {
            auto& p = *n.parents[0];
            if (!p.requires_grad) return;
            auto& g = p.ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) {
                double x = static_cast<double>(p.value[i]);
                double s = 1.0 / (1.0 + std::exp(-x));
                g[i] += static_cast<T>(static_cast<double>(n.grad[i]) * s * (1.0 + x * (1.0 - s)));
            }
        });
}

template <class T>
TensorT<T> relu(const TensorT<T>& a) {
    std::vector<T> out(a.data());
    for (auto& v : out) v = v > T(0) ? v : T(0);
    return TensorT<T>::make_result(a.shape(), std::move(out), {a.node()},
        [](detail::Node<T>& n) {
            auto& p = *n.parents[0];
            if (!p.requires_grad) return;
            auto& g = p.ensure_grad();
            for (size_t i = 0; i < g.size(); ++i)
                if (p.value[i] > T(0)) g[i] += n.grad[i];
        });
}

template <class T>
TensorT<T> sum(const TensorT<T>& a) {
    double acc = 0;
    for (T v : a.data()) acc += static_cast<double>(v);
    return TensorT<T>::make_result(Shape{1}, {static_cast<T>(acc)}, {a.node()},
        [](detail::Node<T>& n) {
            auto& p = *n.parents[0];
            if (!p.requires_grad) return;
            auto& g = p.ensure_grad();
            T go = n.grad[0];
            for (auto& v : g) v += go;
        });
}

template <class T>
TensorT<T> mean(const TensorT<T>& a) {
    double acc = 0;
    for (T v : a.data()) acc += static_cast<double>(v);
    double inv = 1.0 / static_cast<double>(a.numel());
    return TensorT<T>::make_result(Shape{1}, {static_cast<T>(acc * inv)}, {a.node()},
        [inv](detail::Node<T>& n) {
            auto& p = *n.parents[0];
            if (!p.requires_grad) return;
            auto& g = p.ensure_grad();
            T go = static_cast<T>(static_cast<double>(n.grad[0]) * inv);
            for (auto& v : g) v += go;
        });
}

// Sum over all axes except the first: [N, ...] -> [N].
template <class T>
TensorT<T> sum_rows(const TensorT<T>& a) {
    int n = a.dim(0);
    int64_t stride = a.numel() / n;
    std::vector<T> out(static_cast<size_t>(n), T(0));
    const auto& ad = a.data();
    for (int i = 0; i < n; ++i) {
        double acc = 0;
        for (int64_t j = 0; j < stride; ++j) acc += static_cast<double>(ad[static_cast<size_t>(i * stride + j)]);
        out[static_cast<size_t>(i)] = static_cast<T>(acc);
    }
    return TensorT<T>::make_result(Shape{n}, std::move(out), {a.node()},
        [stride](detail::Node<T>& n_) {
            auto& p = *n_.parents[0];
            if (!p.requires_grad) return;
            auto& g = p.ensure_grad();
            int rows = static_cast<int>(n_.value.size());
            for (int i = 0; i < rows; ++i) {
                T go = n_.grad[static_cast<size_t>(i)];
                for (int64_t j = 0; j < stride; ++j) g[static_cast<size_t>(i * stride + j)] += go;
            }
        });
}

// Fixed-weight contraction: scalar = sum_i v[i] * w[i]; w is a constant.
template <class T>
TensorT<T> dot_const(const TensorT<T>& v, std::vector<double> w) {
    if (static_cast<size_t>(v.numel()) != w.size())
        throw ShapeError("dot_const: length mismatch");
    double acc = 0;
    for (size_t i = 0; i < w.size(); ++i) acc += static_cast<double>(v.data()[i]) * w[i];
    return TensorT<T>::make_result(Shape{1}, {static_cast<T>(acc)}, {v.node()},
        [w = std::move(w)](detail::Node<T>& n) {
            auto& p = *n.parents[0];
            if (!p.requires_grad) return;
            auto& g = p.ensure_grad();
            double go = static_cast<double>(n.grad[0]);
            for (size_t i = 0; i < w.size(); ++i) g[i] += static_cast<T>(go * w[i]);
        });
}

template <class T>
TensorT<T> reshape(const TensorT<T>& a, const Shape& shape) {
    check_shape_valid(shape, "reshape");
    if (shape_numel(shape) != a.numel())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    std::vector<T> out(a.data());
    return TensorT<T>::make_result(shape, std::move(out), {a.node()},
        [](detail::Node<T>& n) {
            auto& p = *n.parents[0];
            if (!p.requires_grad) return;
            auto& g = p.ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        });
}

// a: [m,k], b: [k,n] -> [m,n]
template <class T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: incompatible " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> out(static_cast<size_t>(m) * n);
    detail::ConstMatMap<T> A(a.raw(), m, k), B(b.raw(), k, n);
    detail::MatMap<T>(out.data(), m, n).noalias() = A * B;
    return TensorT<T>::make_result(Shape{m, n}, std::move(out), {a.node(), b.node()},
        [m, k, n](detail::Node<T>& nd) {
            auto& pa = *nd.parents[0];
            auto& pb = *nd.parents[1];
            detail::ConstMatMap<T> G(nd.grad.data(), m, n);
            detail::ConstMatMap<T> A(pa.value.data(), m, k);
            detail::ConstMatMap<T> B(pb.value.data(), k, n);
            if (pa.requires_grad)
                detail::MatMap<T>(pa.ensure_grad().data(), m, k).noalias() += G * B.transpose();
            if (pb.requires_grad)
                detail::MatMap<T>(pb.ensure_grad().data(), k, n).noalias() += A.transpose() * G;
        });
}

// x: [n,in], w: [out,in] -> [n,out]  (y = x * w^T), the Dense-layer kernel.
template <class T>
TensorT<T> matmul_nt(const TensorT<T>& x, const TensorT<T>& w) {
    if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1))
        throw ShapeError("matmul_nt: incompatible " + shape_str(x.shape()) + " x " + shape_str(w.shape()));
    int n = x.dim(0), in = x.dim(1), out_f = w.dim(0);
    std::vector<T> out(static_cast<size_t>(n) * out_f);
    detail::ConstMatMap<T> X(x.raw(), n, in), W(w.raw(), out_f, in);
    detail::MatMap<T>(out.data(), n, out_f).noalias() = X * W.transpose();
    return TensorT<T>::make_result(Shape{n, out_f}, std::move(out), {x.node(), w.node()},
        [n, in, out_f](detail::Node<T>& nd) {
            auto& px = *nd.parents[0];
            auto& pw = *nd.parents[1];
            detail::ConstMatMap<T> G(nd.grad.data(), n, out_f);
            detail::ConstMatMap<T> X(px.value.data(), n, in);
            detail::ConstMatMap<T> W(pw.value.data(), out_f, in);
            if (px.requires_grad)
                detail::MatMap<T>(px.ensure_grad().data(), n, in).noalias() += G * W;
            if (pw.requires_grad)
                detail::MatMap<T>(pw.ensure_grad().data(), out_f, in).noalias() += G.transpose() * X;
        });
}

// x: [n,k] + b: [k], broadcast over rows.
template <class T>
TensorT<T> add_bias_rows(const TensorT<T>& x, const TensorT<T>& b) {
    if (x.rank() != 2 || b.rank() != 1 || b.dim(0) != x.dim(1))
        throw ShapeError("add_bias_rows: " + shape_str(x.shape()) + " + " + shape_str(b.shape()));
    int n = x.dim(0), k = x.dim(1);
    std::vector<T> out(x.data());
    const auto& bd = b.data();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j) out[static_cast<size_t>(i) * k + j] += bd[static_cast<size_t>(j)];
    return TensorT<T>::make_result(x.shape(), std::move(out), {x.node(), b.node()},
        [n, k](detail::Node<T>& nd) {
            auto& px = *nd.parents[0];
            auto& pb = *nd.parents[1];
            if (px.requires_grad) {
                auto& g = px.ensure_grad();
                for (size_t i = 0; i < g.size(); ++i) g[i] += nd.grad[i];
            }
            if (pb.requires_grad) {
                auto& g = pb.ensure_grad();
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < k; ++j) g[static_cast<size_t>(j)] += nd.grad[static_cast<size_t>(i) * k + j];
            }
        });
}

// x: [n,c,h,w] + b: [c], broadcast over batch and spatial dims.
template <class T>
TensorT<T> add_bias_channels(const TensorT<T>& x, const TensorT<T>& b) {
    if (x.rank() != 4 || b.rank() != 1 || b.dim(0) != x.dim(1))
        throw ShapeError("add_bias_channels: " + shape_str(x.shape()) + " + " + shape_str(b.shape()));
    int n = x.dim(0), c = x.dim(1);
    int64_t hw = static_cast<int64_t>(x.dim(2)) * x.dim(3);
    std::vector<T> out(x.data());
    const auto& bd = b.data();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) {
            T bv = bd[static_cast<size_t>(j)];
            T* p = out.data() + (static_cast<int64_t>(i) * c + j) * hw;
            for (int64_t t = 0; t < hw; ++t) p[t] += bv;
        }
    return TensorT<T>::make_result(x.shape(), std::move(out), {x.node(), b.node()},
        [n, c, hw](detail::Node<T>& nd) {
            auto& px = *nd.parents[0];
            auto& pb = *nd.parents[1];
            if (px.requires_grad) {
                auto& g = px.ensure_grad();
                for (size_t i = 0; i < g.size(); ++i) g[i] += nd.grad[i];
            }
            if (pb.requires_grad) {
                auto& g = pb.ensure_grad();
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < c; ++j) {
                        const T* p = nd.grad.data() + (static_cast<int64_t>(i) * c + j) * hw;
                        double acc = 0;
                        for (int64_t t = 0; t < hw; ++t) acc += static_cast<double>(p[t]);
                        g[static_cast<size_t>(j)] += static_cast<T>(acc);
                    }
            }
        });
}

// x: [n,c,h,w] + v: [n,c], broadcast over spatial dims (time-embedding inject).
template <class T>
TensorT<T> add_channels_vec(const TensorT<T>& x, const TensorT<T>& v) {
    if (x.rank() != 4 || v.rank() != 2 || v.dim(0) != x.dim(0) || v.dim(1) != x.dim(1))
        throw ShapeError("add_channels_vec: " + shape_str(x.shape()) + " + " + shape_str(v.shape()));
    int n = x.dim(0), c = x.dim(1);
    int64_t hw = static_cast<int64_t>(x.dim(2)) * x.dim(3);
    std::vector<T> out(x.data());
    const auto& vd = v.data();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) {
            T bv = vd[static_cast<size_t>(i) * c + j];
            T* p = out.data() + (static_cast<int64_t>(i) * c + j) * hw;
            for (int64_t t = 0; t < hw; ++t) p[t] += bv;
        }
    return TensorT<T>::make_result(x.shape(), std::move(out), {x.node(), v.node()},
        [n, c, hw](detail::Node<T>& nd) {
            auto& px = *nd.parents[0];
            auto& pv = *nd.parents[1];
            if (px.requires_grad) {
                auto& g = px.ensure_grad();
                for (size_t i = 0; i < g.size(); ++i) g[i] += nd.grad[i];
            }
            if (pv.requires_grad) {
                auto& g = pv.ensure_grad();
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < c; ++j) {
                        const T* p = nd.grad.data() + (static_cast<int64_t>(i) * c + j) * hw;
                        double acc = 0;
                        for (int64_t t = 0; t < hw; ++t) acc += static_cast<double>(p[t]);
                        g[static_cast<size_t>(i) * c + j] += static_cast<T>(acc);
                    }
            }
        });
}

namespace detail {

// Patch matrix layout: row = output position (oh*wo+ow), col = (c*kh+ki)*kw+kj.
template <class T>
void im2col(const T* img, int c, int h, int w, int kh, int kw, int stride, int pad,
            int ho, int wo, T* col) {
    int ckk = c * kh * kw;
    for (int oh = 0; oh < ho; ++oh)
        for (int ow = 0; ow < wo; ++ow) {
            T* row = col + (static_cast<int64_t>(oh) * wo + ow) * ckk;
            for (int ci = 0; ci < c; ++ci)
                for (int ki = 0; ki < kh; ++ki) {
                    int iy = oh * stride + ki - pad;
                    const T* src = img + (static_cast<int64_t>(ci) * h + iy) * w;
                    for (int kj = 0; kj < kw; ++kj) {
                        int ix = ow * stride + kj - pad;
                        *row++ = (iy >= 0 && iy < h && ix >= 0 && ix < w) ? src[ix] : T(0);
                    }
                }
        }
}

template <class T>
void col2im_add(const T* col, int c, int h, int w, int kh, int kw, int stride, int pad,
                int ho, int wo, T* img) {
    int ckk = c * kh * kw;
    for (int oh = 0; oh < ho; ++oh)
        for (int ow = 0; ow < wo; ++ow) {
            const T* row = col + (static_cast<int64_t>(oh) * wo + ow) * ckk;
            for (int ci = 0; ci < c; ++ci)
                for (int ki = 0; ki < kh; ++ki) {
                    int iy = oh * stride + ki - pad;
                    T* dst = img + (static_cast<int64_t>(ci) * h + iy) * w;
                    for (int kj = 0; kj < kw; ++kj) {
                        int ix = ow * stride + kj - pad;
                        T v = *row++;
                        if (iy >= 0 && iy < h && ix >= 0 && ix < w) dst[ix] += v;
                    }
                }
        }
}

}  // namespace detail

// x: [n,cin,h,w], w: [cout,cin,kh,kw] -> [n,cout,ho,wo]; im2col + GEMM.
template <class T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, int stride = 1, int pad = 0) {
    if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(1))
        throw ShapeError("conv2d: incompatible " + shape_str(x.shape()) + " * " + shape_str(w.shape()));
    if (stride < 1 || pad < 0) throw UsageError("conv2d: bad stride/pad");
    int n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    int ho = (h + 2 * pad - kh) / stride + 1;
    int wo = (wd + 2 * pad - kw) / stride + 1;
    if (ho < 1 || wo < 1) throw ShapeError("conv2d: kernel larger than padded input");
    int ckk = cin * kh * kw;
    int64_t hw_in = static_cast<int64_t>(h) * wd;
    int64_t hw_out = static_cast<int64_t>(ho) * wo;

    std::vector<T> out(static_cast<size_t>(n) * cout * hw_out);
    std::vector<T> col(static_cast<size_t>(hw_out) * ckk);
    detail::ConstMatMap<T> W(w.raw(), cout, ckk);
    for (int i = 0; i < n; ++i) {
        detail::im2col(x.raw() + static_cast<int64_t>(i) * cin * hw_in, cin, h, wd, kh, kw,
                       stride, pad, ho, wo, col.data());
        detail::ConstMatMap<T> C(col.data(), static_cast<int>(hw_out), ckk);
        // out image layout is [cout, ho*wo]: compute W * C^T.
        detail::MatMap<T>(out.data() + static_cast<int64_t>(i) * cout * hw_out,
                          cout, static_cast<int>(hw_out)).noalias() = W * C.transpose();
    }
    return TensorT<T>::make_result(Shape{n, cout, ho, wo}, std::move(out), {x.node(), w.node()},
        [n, cin, h, wd, cout, kh, kw, stride, pad, ho, wo](detail::Node<T>& nd) {
            auto& px = *nd.parents[0];
            auto& pw = *nd.parents[1];
            int ckk = cin * kh * kw;
            int64_t hw_in = static_cast<int64_t>(h) * wd;
            int64_t hw_out = static_cast<int64_t>(ho) * wo;
            detail::ConstMatMap<T> W(pw.value.data(), cout, ckk);
            std::vector<T> col(static_cast<size_t>(hw_out) * ckk);
            std::vector<T> dcol;
            if (px.requires_grad) dcol.resize(col.size());
            T* gx = px.requires_grad ? px.ensure_grad().data() : nullptr;
            T* gw = pw.requires_grad ? pw.ensure_grad().data() : nullptr;
            for (int i = 0; i < n; ++i) {
                detail::ConstMatMap<T> G(nd.grad.data() + static_cast<int64_t>(i) * cout * hw_out,
                                         cout, static_cast<int>(hw_out));
                if (gw || gx)
                    detail::im2col(px.value.data() + static_cast<int64_t>(i) * cin * hw_in,
                                   cin, h, wd, kh, kw, stride, pad, ho, wo, col.data());
                detail::ConstMatMap<T> C(col.data(), static_cast<int>(hw_out), ckk);
                if (gw)
                    detail::MatMap<T>(gw, cout, ckk).noalias() += G * C;
                if (gx) {
                    detail::MatMap<T>(dcol.data(), static_cast<int>(hw_out), ckk).noalias() =
                        G.transpose() * W;
                    detail::col2im_add(dcol.data(), cin, h, wd, kh, kw, stride, pad, ho, wo,
                                       gx + static_cast<int64_t>(i) * cin * hw_in);
                }
            }
        });
}

// [n,c,h,w] -> [n,c,2h,2w], each pixel replicated 2x2.
template <class T>
TensorT<T> upsample_nearest2(const TensorT<T>& x) {
    if (x.rank() != 4) throw ShapeError("upsample_nearest2: want rank 4, got " + shape_str(x.shape()));
    int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    std::vector<T> out(static_cast<size_t>(n) * c * 4 * h * w);
    const T* src = x.raw();
    for (int64_t img = 0; img < static_cast<int64_t>(n) * c; ++img) {
        const T* s = src + img * h * w;
        T* d = out.data() + img * 4 * h * w;
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
                T v = s[y * w + xx];
                int64_t base = (static_cast<int64_t>(2 * y) * 2 * w) + 2 * xx;
                d[base] = v;
                d[base + 1] = v;
                d[base + 2 * w] = v;
                d[base + 2 * w + 1] = v;
            }
    }
    return TensorT<T>::make_result(Shape{n, c, 2 * h, 2 * w}, std::move(out), {x.node()},
        [n, c, h, w](detail::Node<T>& nd) {
            auto& p = *nd.parents[0];
            if (!p.requires_grad) return;
            auto& g = p.ensure_grad();
            for (int64_t img = 0; img < static_cast<int64_t>(n) * c; ++img) {
                T* gs = g.data() + img * h * w;
                const T* gd = nd.grad.data() + img * 4 * h * w;
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < w; ++xx) {
                        int64_t base = (static_cast<int64_t>(2 * y) * 2 * w) + 2 * xx;
                        gs[y * w + xx] += gd[base] + gd[base + 1] + gd[base + 2 * w] + gd[base + 2 * w + 1];
                    }
            }
        });
}

// [n,c,h,w] -> [n,c]: spatial mean per channel.
template <class T>
TensorT<T> avg_pool_global(const TensorT<T>& x) {
    if (x.rank() != 4) throw ShapeError("avg_pool_global: want rank 4, got " + shape_str(x.shape()));
    int n = x.dim(0), c = x.dim(1);
    int64_t hw = static_cast<int64_t>(x.dim(2)) * x.dim(3);
    double inv = 1.0 / static_cast<double>(hw);
    std::vector<T> out(static_cast<size_t>(n) * c);
    const T* src = x.raw();
    for (int64_t img = 0; img < static_cast<int64_t>(n) * c; ++img) {
        double acc = 0;
        for (int64_t t = 0; t < hw; ++t) acc += static_cast<double>(src[img * hw + t]);
        out[static_cast<size_t>(img)] = static_cast<T>(acc * inv);
    }
    return TensorT<T>::make_result(Shape{n, c}, std::move(out), {x.node()},
        [n, c, hw, inv](detail::Node<T>& nd) {
            auto& p = *nd.parents[0];
            if (!p.requires_grad) return;
            auto& g = p.ensure_grad();
            for (int64_t img = 0; img < static_cast<int64_t>(n) * c; ++img) {
                T go = static_cast<T>(static_cast<double>(nd.grad[static_cast<size_t>(img)]) * inv);
                for (int64_t t = 0; t < hw; ++t) g[static_cast<size_t>(img * hw + t)] += go;
            }
        });
}

// Concatenate along the channel axis: [n,c1,h,w] ++ [n,c2,h,w] -> [n,c1+c2,h,w].
template <class T>
TensorT<T> concat_channels(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.rank() != 4 || b.rank() != 4 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) ||
        a.dim(3) != b.dim(3))
        throw ShapeError("concat_channels: " + shape_str(a.shape()) + " ++ " + shape_str(b.shape()));
    int n = a.dim(0), c1 = a.dim(1), c2 = b.dim(1);
    int64_t hw = static_cast<int64_t>(a.dim(2)) * a.dim(3);
    std::vector<T> out(static_cast<size_t>(n) * (c1 + c2) * hw);
    for (int i = 0; i < n; ++i) {
        std::copy_n(a.raw() + static_cast<int64_t>(i) * c1 * hw, c1 * hw,
                    out.data() + static_cast<int64_t>(i) * (c1 + c2) * hw);
        std::copy_n(b.raw() + static_cast<int64_t>(i) * c2 * hw, c2 * hw,
                    out.data() + static_cast<int64_t>(i) * (c1 + c2) * hw + c1 * hw);
    }
    return TensorT<T>::make_result(Shape{n, c1 + c2, a.dim(2), a.dim(3)}, std::move(out),
                                   {a.node(), b.node()},
        [n, c1, c2, hw](detail::Node<T>& nd) {
            auto& pa = *nd.parents[0];
            auto& pb = *nd.parents[1];
            for (int i = 0; i < n; ++i) {
                const T* g = nd.grad.data() + static_cast<int64_t>(i) * (c1 + c2) * hw;
                if (pa.requires_grad) {
                    T* ga = pa.ensure_grad().data() + static_cast<int64_t>(i) * c1 * hw;
                    for (int64_t t = 0; t < c1 * hw; ++t) ga[t] += g[t];
                }
                if (pb.requires_grad) {
                    T* gb = pb.ensure_grad().data() + static_cast<int64_t>(i) * c2 * hw;
                    for (int64_t t = 0; t < c2 * hw; ++t) gb[t] += g[c1 * hw + t];
                }
            }
        });
}

// GroupNorm over [n,c,h,w]: per-sample, per-group standardization followed by
// per-channel affine. Backward recomputes x_hat from saved means/inv-stds.
template <class T>
TensorT<T> group_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                      int groups, double eps = 1e-5) {
    if (x.rank() != 4) throw ShapeError("group_norm: want rank 4, got " + shape_str(x.shape()));
    int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (gamma.rank() != 1 || gamma.dim(0) != c || beta.rank() != 1 || beta.dim(0) != c)
        throw ShapeError("group_norm: affine params must be [" + std::to_string(c) + "]");
    if (groups < 1 || c % groups != 0)
        throw ShapeError("group_norm: " + std::to_string(c) + " channels not divisible into " +
                         std::to_string(groups) + " groups");
    int cg = c / groups;
    int64_t hw = static_cast<int64_t>(h) * w;
    int64_t m = cg * hw;  // elements per group
    std::vector<double> mu(static_cast<size_t>(n) * groups), istd(static_cast<size_t>(n) * groups);
    std::vector<T> out(x.data());
    const auto& gm = gamma.data();
    const auto& bt = beta.data();
    for (int i = 0; i < n; ++i)
        for (int g = 0; g < groups; ++g) {
            T* p = out.data() + (static_cast<int64_t>(i) * c + static_cast<int64_t>(g) * cg) * hw;
            double s = 0, s2 = 0;
            for (int64_t t = 0; t < m; ++t) {
                double v = static_cast<double>(p[t]);
                s += v;
                s2 += v * v;
            }
            double mean_ = s / static_cast<double>(m);
            double var_ = s2 / static_cast<double>(m) - mean_ * mean_;
            double is = 1.0 / std::sqrt(std::max(var_, 0.0) + eps);
            mu[static_cast<size_t>(i) * groups + g] = mean_;
            istd[static_cast<size_t>(i) * groups + g] = is;
            for (int ci = 0; ci < cg; ++ci) {
                double ga = static_cast<double>(gm[static_cast<size_t>(g) * cg + ci]);
                double be = static_cast<double>(bt[static_cast<size_t>(g) * cg + ci]);
                T* q = p + static_cast<int64_t>(ci) * hw;
                for (int64_t t = 0; t < hw; ++t)
                    q[t] = static_cast<T>((static_cast<double>(q[t]) - mean_) * is * ga + be);
            }
        }
    return TensorT<T>::make_result(x.shape(), std::move(out),
                                   {x.node(), gamma.node(), beta.node()},
        [n, c, groups, cg, hw, m, mu = std::move(mu), istd = std::move(istd)](detail::Node<T>& nd) {
            auto& px = *nd.parents[0];
            auto& pg = *nd.parents[1];
            auto& pb = *nd.parents[2];
            T* gx = px.requires_grad ? px.ensure_grad().data() : nullptr;
            T* gg = pg.requires_grad ? pg.ensure_grad().data() : nullptr;
            T* gb = pb.requires_grad ? pb.ensure_grad().data() : nullptr;
            const auto& gm = pg.value;
            for (int i = 0; i < n; ++i)
                for (int g = 0; g < groups; ++g) {
                    double mean_ = mu[static_cast<size_t>(i) * groups + g];
                    double is = istd[static_cast<size_t>(i) * groups + g];
                    const T* xv = px.value.data() +
                                  (static_cast<int64_t>(i) * c + static_cast<int64_t>(g) * cg) * hw;
                    const T* dy = nd.grad.data() +
                                  (static_cast<int64_t>(i) * c + static_cast<int64_t>(g) * cg) * hw;
                    // Two group-level means of ghat and ghat*xhat, ghat = dy*gamma.
                    double sg = 0, sgx = 0;
                    for (int ci = 0; ci < cg; ++ci) {
                        double ga = static_cast<double>(gm[static_cast<size_t>(g) * cg + ci]);
                        for (int64_t t = 0; t < hw; ++t) {
                            double xh = (static_cast<double>(xv[static_cast<int64_t>(ci) * hw + t]) - mean_) * is;
                            double gh = static_cast<double>(dy[static_cast<int64_t>(ci) * hw + t]) * ga;
                            sg += gh;
                            sgx += gh * xh;
                        }
                    }
                    double mg = sg / static_cast<double>(m);
                    double mgx = sgx / static_cast<double>(m);
                    for (int ci = 0; ci < cg; ++ci) {
                        double ga = static_cast<double>(gm[static_cast<size_t>(g) * cg + ci]);
                        double dgamma = 0, dbeta = 0;
                        for (int64_t t = 0; t < hw; ++t) {
                            double xh = (static_cast<double>(xv[static_cast<int64_t>(ci) * hw + t]) - mean_) * is;
                            double d = static_cast<double>(dy[static_cast<int64_t>(ci) * hw + t]);
                            if (gx) {
                                double gh = d * ga;
                                gx[(static_cast<int64_t>(i) * c + static_cast<int64_t>(g) * cg + ci) * hw + t] +=
                                    static_cast<T>(is * (gh - mg - xh * mgx));
                            }
                            dgamma += d * xh;
                            dbeta += d;
                        }
                        if (gg) gg[static_cast<size_t>(g) * cg + ci] += static_cast<T>(dgamma);
                        if (gb) gb[static_cast<size_t>(g) * cg + ci] += static_cast<T>(dbeta);
                    }
                }
        });
}

// Row-wise log-softmax on [n,k].
template <class T>
TensorT<T> log_softmax_rows(const TensorT<T>& x) {
    if (x.rank() != 2) throw ShapeError("log_softmax_rows: want rank 2, got " + shape_str(x.shape()));
    int n = x.dim(0), k = x.dim(1);
    std::vector<T> out(x.data());
    for (int i = 0; i < n; ++i) {
        T* row = out.data() + static_cast<size_t>(i) * k;
        double mx = static_cast<double>(*std::max_element(row, row + k));
        double z = 0;
        for (int j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
        double lz = mx + std::log(z);
        for (int j = 0; j < k; ++j) row[j] = static_cast<T>(static_cast<double>(row[j]) - lz);
    }
    return TensorT<T>::make_result(x.shape(), std::move(out), {x.node()},
        [n, k](detail::Node<T>& nd) {
            auto& p = *nd.parents[0];
            if (!p.requires_grad) return;
            auto& g = p.ensure_grad();
            for (int i = 0; i < n; ++i) {
                const T* y = nd.value.data() + static_cast<size_t>(i) * k;
                const T* dy = nd.grad.data() + static_cast<size_t>(i) * k;
                double s = 0;
                for (int j = 0; j < k; ++j) s += static_cast<double>(dy[j]);
                for (int j = 0; j < k; ++j)
                    g[static_cast<size_t>(i) * k + j] +=
                        static_cast<T>(static_cast<double>(dy[j]) - std::exp(static_cast<double>(y[j])) * s);
            }
        });
}

// Row-wise softmax on [n,k].
template <class T>
TensorT<T> softmax_rows(const TensorT<T>& x) {
    if (x.rank() != 2) throw ShapeError("softmax_rows: want rank 2, got " + shape_str(x.shape()));
    int n = x.dim(0), k = x.dim(1);
    std::vector<T> out(x.data());
    for (int i = 0; i < n; ++i) {
        T* row = out.data() + static_cast<size_t>(i) * k;
        double mx = static_cast<double>(*std::max_element(row, row + k));
        double z = 0;
        for (int j = 0; j < k; ++j) {
            double e = std::exp(static_cast<double>(row[j]) - mx);
            row[j] = static_cast<T>(e);
            z += e;
        }
        for (int j = 0; j < k; ++j) row[j] = static_cast<T>(static_cast<double>(row[j]) / z);
    }
    return TensorT<T>::make_result(x.shape(), std::move(out), {x.node()},
        [n, k](detail::Node<T>& nd) {
            auto& p = *nd.parents[0];
            if (!p.requires_grad) return;
            auto& g = p.ensure_grad();
            for (int i = 0; i < n; ++i) {
                const T* y = nd.value.data() + static_cast<size_t>(i) * k;
                const T* dy = nd.grad.data() + static_cast<size_t>(i) * k;
                double s = 0;
                for (int j = 0; j < k; ++j) s += static_cast<double>(dy[j]) * static_cast<double>(y[j]);
                for (int j = 0; j < k; ++j)
                    g[static_cast<size_t>(i) * k + j] +=
                        static_cast<T>(static_cast<double>(y[j]) * (static_cast<double>(dy[j]) - s));
            }
        });
}

namespace detail {

template <class T>
TensorT<T> pick_label_reduce(const TensorT<T>& logp, const std::vector<int>& labels,
                             double scale) {
    if (logp.rank() != 2) throw ShapeError("pick_label: want rank 2, got " + shape_str(logp.shape()));
    int n = logp.dim(0), k = logp.dim(1);
    if (static_cast<int>(labels.size()) != n)
        throw ShapeError("pick_label: label count " + std::to_string(labels.size()) +
                         " != batch " + std::to_string(n));
    for (int y : labels)
        if (y < 0 || y >= k) throw DataError("pick_label: label " + std::to_string(y) + " out of range");
    double acc = 0;
    for (int i = 0; i < n; ++i) acc += static_cast<double>(logp.data()[static_cast<size_t>(i) * k + labels[static_cast<size_t>(i)]]);
    return TensorT<T>::make_result(Shape{1}, {static_cast<T>(acc * scale)}, {logp.node()},
        [labels, scale, k](detail::Node<T>& nd) {
            auto& p = *nd.parents[0];
            if (!p.requires_grad) return;
            auto& g = p.ensure_grad();
            double go = static_cast<double>(nd.grad[0]) * scale;
            for (size_t i = 0; i < labels.size(); ++i)
                g[i * k + static_cast<size_t>(labels[i])] += static_cast<T>(go);
        });
}

}  // namespace detail

// Mean negative log-likelihood of the given labels under row log-probs.
template <class T>
TensorT<T> nll_loss(const TensorT<T>& logp, const std::vector<int>& labels) {
    return detail::pick_label_reduce(logp, labels, -1.0 / static_cast<double>(labels.size()));
}

// Sum of log-probs of the given labels (guidance score).
template <class T>
TensorT<T> pick_label_sum(const TensorT<T>& logp, const std::vector<int>& labels) {
    return detail::pick_label_reduce(logp, labels, 1.0);
}

// Softmax cross-entropy from raw logits, mean over the batch.
template <class T>
TensorT<T> cross_entropy(const TensorT<T>& logits, const std::vector<int>& labels) {
    return nll_loss(log_softmax_rows(logits), labels);
}

}  // namespace tinydpm
