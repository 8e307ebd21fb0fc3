#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

#include "sftik/tensor.hpp"

namespace sftik {

namespace detail {

// C(m,n) = op(A)(m,k) * op(B)(k,n), row-major buffers. A is stored (k,m) when
// ta is set, likewise B. With acc the product is added onto C.
template <class T>
void gemm(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool ta, bool tb, bool acc) {
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const Mat> A(a, ta ? k : m, ta ? m : k);
    Eigen::Map<const Mat> B(b, tb ? n : k, tb ? k : n);
    Eigen::Map<Mat> C(c, m, n);
    auto run = [&](const auto& lhs, const auto& rhs) {
        if (acc)
            C.noalias() += lhs * rhs;
        else
            C.noalias() = lhs * rhs;
    };
    if (!ta && !tb)
        run(A, B);
    else if (ta && !tb)
        run(A.transpose(), B);
    else if (!ta && tb)
        run(A, B.transpose());
    else
        run(A.transpose(), B.transpose());
}

template <class T>
void require_rank2(const Tensor<T>& t, const char* op) {
    if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a rank-2 tensor, got " + t.shape_str());
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
}

}  // namespace detail

// (m,k) x (k,n) -> (m,n)
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_rank2(a, "matmul");
    detail::require_rank2(b, "matmul");
    const int64_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw ShapeError("matmul: inner dimensions differ, " + a.shape_str() + " x " + b.shape_str());
    }
    Tensor<T> out = Tensor<T>::zeros({m, n});
    detail::gemm(a.data().data(), b.data().data(), out.mutable_data().data(), m, k, n, false, false, false);
    out.check_finite("matmul");
    auto as = a.storage(), bs = b.storage();
    detail::record_op<T>("matmul", {a, b}, out, [as, bs, m, k, n](GradSink<T>& sink, std::span<const T> og) {
        if (as->requires_grad || as->tape_id != 0) {
            detail::gemm(og.data(), bs->values.data(), sink.accum(as).data(), m, n, k, false, true, true);
        }
        if (bs->requires_grad || bs->tape_id != 0) {
            detail::gemm(as->values.data(), og.data(), sink.accum(bs).data(), k, m, n, true, false, true);
        }
    });
    return out;
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
    detail::require_rank2(a, "transpose");
    const int64_t r = a.rows(), c = a.cols();
    Tensor<T> out = Tensor<T>::zeros({c, r});
    auto src = a.data();
    auto dst = out.mutable_data();
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) dst[j * r + i] = src[i * c + j];
    auto as = a.storage();
    detail::record_op<T>("transpose", {a}, out, [as, r, c](GradSink<T>& sink, std::span<const T> og) {
        auto g = sink.accum(as);
        for (int64_t j = 0; j < c; ++j)
            for (int64_t i = 0; i < r; ++i) g[i * c + j] += og[j * r + i];
    });
    return out;
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "add");
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    auto pa = a.data(), pb = b.data();
    auto po = out.mutable_data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] + pb[i];
    out.check_finite("add");
    auto as = a.storage(), bs = b.storage();
    detail::record_op<T>("add", {a, b}, out, [as, bs](GradSink<T>& sink, std::span<const T> og) {
        if (as->requires_grad || as->tape_id != 0) {
            auto g = sink.accum(as);
            for (size_t i = 0; i < og.size(); ++i) g[i] += og[i];
        }
        if (bs->requires_grad || bs->tape_id != 0) {
            auto g = sink.accum(bs);
            for (size_t i = 0; i < og.size(); ++i) g[i] += og[i];
        }
    });
    return out;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "sub");
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    auto pa = a.data(), pb = b.data();
    auto po = out.mutable_data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] - pb[i];
    out.check_finite("sub");
    auto as = a.storage(), bs = b.storage();
    detail::record_op<T>("sub", {a, b}, out, [as, bs](GradSink<T>& sink, std::span<const T> og) {
        if (as->requires_grad || as->tape_id != 0) {
            auto g = sink.accum(as);
            for (size_t i = 0; i < og.size(); ++i) g[i] += og[i];
        }
        if (bs->requires_grad || bs->tape_id != 0) {
            auto g = sink.accum(bs);
            for (size_t i = 0; i < og.size(); ++i) g[i] -= og[i];
        }
    });
    return out;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "mul");
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    auto pa = a.data(), pb = b.data();
    auto po = out.mutable_data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] * pb[i];
    out.check_finite("mul");
    auto as = a.storage(), bs = b.storage();
    detail::record_op<T>("mul", {a, b}, out, [as, bs](GradSink<T>& sink, std::span<const T> og) {
        if (as->requires_grad || as->tape_id != 0) {
            auto g = sink.accum(as);
            for (size_t i = 0; i < og.size(); ++i) g[i] += og[i] * bs->values[i];
        }
        if (bs->requires_grad || bs->tape_id != 0) {
            auto g = sink.accum(bs);
            for (size_t i = 0; i < og.size(); ++i) g[i] += og[i] * as->values[i];
        }
    });
    return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    auto pa = a.data();
    auto po = out.mutable_data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] * c;
    out.check_finite("scale");
    auto as = a.storage();
    detail::record_op<T>("scale", {a}, out, [as, c](GradSink<T>& sink, std::span<const T> og) {
        auto g = sink.accum(as);
        for (size_t i = 0; i < og.size(); ++i) g[i] += og[i] * c;
    });
    return out;
}

// Adds a length-d bias vector to every row of an (n,d) matrix.
template <class T>
Tensor<T> add_rows(const Tensor<T>& a, const Tensor<T>& bias) {
    detail::require_rank2(a, "add_rows");
    if (bias.rank() != 1 || bias.dim(0) != a.cols()) {
        throw ShapeError("add_rows: bias " + bias.shape_str() + " does not match " + a.shape_str());
    }
    const int64_t n = a.rows(), d = a.cols();
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    auto pa = a.data(), pb = bias.data();
    auto po = out.mutable_data();
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) po[i * d + j] = pa[i * d + j] + pb[j];
    out.check_finite("add_rows");
    auto as = a.storage(), bs = bias.storage();
    detail::record_op<T>("add_rows", {a, bias}, out, [as, bs, n, d](GradSink<T>& sink, std::span<const T> og) {
        if (as->requires_grad || as->tape_id != 0) {
            auto g = sink.accum(as);
            for (size_t i = 0; i < og.size(); ++i) g[i] += og[i];
        }
        if (bs->requires_grad || bs->tape_id != 0) {
            auto g = sink.accum(bs);
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < d; ++j) g[j] += og[i * d + j];
        }
    });
    return out;
}

// Row-wise softmax with max subtraction for stability.
template <class T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
    detail::require_rank2(a, "softmax_rows");
    const int64_t n = a.rows(), d = a.cols();
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    auto pa = a.data();
    auto po = out.mutable_data();
    for (int64_t i = 0; i < n; ++i) {
        const T* row = pa.data() + i * d;
        T* orow = po.data() + i * d;
        T mx = row[0];
        for (int64_t j = 1; j < d; ++j) mx = std::max(mx, row[j]);
        T sum = T(0);
        for (int64_t j = 0; j < d; ++j) {
            orow[j] = std::exp(row[j] - mx);
            sum += orow[j];
        }
        T inv = T(1) / sum;
        for (int64_t j = 0; j < d; ++j) orow[j] *= inv;
    }
    out.check_finite("softmax_rows");
    auto as = a.storage();
    auto os = out.storage();
    detail::record_op<T>("softmax_rows", {a}, out, [as, os, n, d](GradSink<T>& sink, std::span<const T> og) {
        auto g = sink.accum(as);
        const std::vector<T>& y = os->values;
        for (int64_t i = 0; i < n; ++i) {
            T dot = T(0);
            for (int64_t j = 0; j < d; ++j) dot += og[i * d + j] * y[i * d + j];
            for (int64_t j = 0; j < d; ++j) g[i * d + j] += y[i * d + j] * (og[i * d + j] - dot);
        }
    });
    return out;
}

// Row-wise layer normalization with learned scale and shift.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-6)) {
    detail::require_rank2(x, "layer_norm");
    const int64_t n = x.rows(), d = x.cols();
    if (gamma.rank() != 1 || gamma.dim(0) != d || beta.rank() != 1 || beta.dim(0) != d) {
        throw ShapeError("layer_norm: scale/shift must be length-" + std::to_string(d) + " vectors");
    }
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    auto px = x.data(), pg = gamma.data(), pb = beta.data();
    auto po = out.mutable_data();
    std::vector<T> xhat(static_cast<size_t>(n * d));
    std::vector<T> inv_std(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const T* row = px.data() + i * d;
        T mu = T(0);
        for (int64_t j = 0; j < d; ++j) mu += row[j];
        mu /= T(d);
        T var = T(0);
        for (int64_t j = 0; j < d; ++j) {
            T c = row[j] - mu;
            var += c * c;
        }
        var /= T(d);
        T inv = T(1) / std::sqrt(var + eps);
        inv_std[static_cast<size_t>(i)] = inv;
        for (int64_t j = 0; j < d; ++j) {
            T h = (row[j] - mu) * inv;
            xhat[static_cast<size_t>(i * d + j)] = h;
            po[i * d + j] = pg[j] * h + pb[j];
        }
    }
    out.check_finite("layer_norm");
    auto xs = x.storage(), gs = gamma.storage(), bs = beta.storage();
    detail::record_op<T>("layer_norm", {x, gamma, beta}, out,
                         [xs, gs, bs, n, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                             GradSink<T>& sink, std::span<const T> og) {
                             if (gs->requires_grad || gs->tape_id != 0) {
                                 auto gg = sink.accum(gs);
                                 for (int64_t i = 0; i < n; ++i)
                                     for (int64_t j = 0; j < d; ++j)
                                         gg[j] += og[i * d + j] * xhat[static_cast<size_t>(i * d + j)];
                             }
                             if (bs->requires_grad || bs->tape_id != 0) {
                                 auto gb = sink.accum(bs);
                                 for (int64_t i = 0; i < n; ++i)
                                     for (int64_t j = 0; j < d; ++j) gb[j] += og[i * d + j];
                             }
                             if (xs->requires_grad || xs->tape_id != 0) {
                                 auto gx = sink.accum(xs);
                                 for (int64_t i = 0; i < n; ++i) {
                                     T mean_dh = T(0), mean_dh_h = T(0);
                                     for (int64_t j = 0; j < d; ++j) {
                                         T dh = og[i * d + j] * gs->values[static_cast<size_t>(j)];
                                         mean_dh += dh;
                                         mean_dh_h += dh * xhat[static_cast<size_t>(i * d + j)];
                                     }
                                     mean_dh /= T(d);
                                     mean_dh_h /= T(d);
                                     T inv = inv_std[static_cast<size_t>(i)];
                                     for (int64_t j = 0; j < d; ++j) {
                                         T dh = og[i * d + j] * gs->values[static_cast<size_t>(j)];
                                         T h = xhat[static_cast<size_t>(i * d + j)];
                                         gx[i * d + j] += inv * (dh - mean_dh - h * mean_dh_h);
                                     }
                                 }
                             }
                         });
    return out;
}

namespace detail {

template <class T>
inline T gelu_scalar(T x) {
    const T c = T(0.7978845608028654);  // sqrt(2/pi)
    T u = c * (x + T(0.044715) * x * x * x);
    return T(0.5) * x * (T(1) + std::tanh(u));
}

template <class T>
inline T gelu_grad_scalar(T x) {
    const T c = T(0.7978845608028654);
    T u = c * (x + T(0.044715) * x * x * x);
    T t = std::tanh(u);
    T du = c * (T(1) + T(3) * T(0.044715) * x * x);
    return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
}

}  // namespace detail

// GELU activation, tanh form.
template <class T>
Tensor<T> gelu(const Tensor<T>& a) {
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    auto pa = a.data();
    auto po = out.mutable_data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = detail::gelu_scalar(pa[i]);
    out.check_finite("gelu");
    auto as = a.storage();
    detail::record_op<T>("gelu", {a}, out, [as](GradSink<T>& sink, std::span<const T> og) {
        auto g = sink.accum(as);
        for (size_t i = 0; i < og.size(); ++i) g[i] += og[i] * detail::gelu_grad_scalar(as->values[i]);
    });
    return out;
}

// Columns [start, start+len) of an (n,d) matrix.
template <class T>
Tensor<T> slice_cols(const Tensor<T>& a, int64_t start, int64_t len) {
    detail::require_rank2(a, "slice_cols");
    const int64_t n = a.rows(), d = a.cols();
    if (start < 0 || len <= 0 || start + len > d) {
        throw ShapeError("slice_cols: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                         ") out of bounds for " + a.shape_str());
    }
    Tensor<T> out = Tensor<T>::zeros({n, len});
    auto pa = a.data();
    auto po = out.mutable_data();
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < len; ++j) po[i * len + j] = pa[i * d + start + j];
    auto as = a.storage();
    detail::record_op<T>("slice_cols", {a}, out, [as, n, d, start, len](GradSink<T>& sink, std::span<const T> og) {
        auto g = sink.accum(as);
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < len; ++j) g[i * d + start + j] += og[i * len + j];
    });
    return out;
}

// Horizontal concatenation: matrices with equal row counts side by side.
template <class T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const int64_t n = parts[0].rows();
    int64_t total = 0;
    for (const auto& p : parts) {
        detail::require_rank2(p, "concat_cols");
        if (p.rows() != n) throw ShapeError("concat_cols: row counts differ");
        total += p.cols();
    }
    Tensor<T> out = Tensor<T>::zeros({n, total});
    auto po = out.mutable_data();
    int64_t off = 0;
    for (const auto& p : parts) {
        auto pp = p.data();
        const int64_t c = p.cols();
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < c; ++j) po[i * total + off + j] = pp[i * c + j];
        off += c;
    }
    std::vector<std::shared_ptr<TensorData<T>>> storages;
    storages.reserve(parts.size());
    for (const auto& p : parts) storages.push_back(p.storage());
    detail::record_op<T>("concat_cols", parts, out, [storages, n, total](GradSink<T>& sink, std::span<const T> og) {
        int64_t off = 0;
        for (const auto& s : storages) {
            const int64_t c = static_cast<int64_t>(s->values.size()) / n;
            if (s->requires_grad || s->tape_id != 0) {
                auto g = sink.accum(s);
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < c; ++j) g[i * c + j] += og[i * total + off + j];
            }
            off += c;
        }
    });
    return out;
}

// Vertical concatenation: matrices with equal column counts stacked.
template <class T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const int64_t d = parts[0].cols();
    int64_t total = 0;
    for (const auto& p : parts) {
        detail::require_rank2(p, "concat_rows");
        if (p.cols() != d) throw ShapeError("concat_rows: column counts differ");
        total += p.rows();
    }
    Tensor<T> out = Tensor<T>::zeros({total, d});
    auto po = out.mutable_data();
    int64_t off = 0;
    for (const auto& p : parts) {
        auto pp = p.data();
        std::copy(pp.begin(), pp.end(), po.begin() + off);
        off += p.numel();
    }
    std::vector<std::shared_ptr<TensorData<T>>> storages;
    storages.reserve(parts.size());
    for (const auto& p : parts) storages.push_back(p.storage());
    detail::record_op<T>("concat_rows", parts, out, [storages](GradSink<T>& sink, std::span<const T> og) {
        int64_t off = 0;
        for (const auto& s : storages) {
            const int64_t count = static_cast<int64_t>(s->values.size());
            if (s->requires_grad || s->tape_id != 0) {
                auto g = sink.accum(s);
                for (int64_t i = 0; i < count; ++i) g[i] += og[off + i];
            }
            off += count;
        }
    });
    return out;
}

// Column means of an (n,d) matrix as a (1,d) row.
template <class T>
Tensor<T> mean_rows(const Tensor<T>& a) {
    detail::require_rank2(a, "mean_rows");
    const int64_t n = a.rows(), d = a.cols();
    Tensor<T> out = Tensor<T>::zeros({1, d});
    auto pa = a.data();
    auto po = out.mutable_data();
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) po[j] += pa[i * d + j];
    const T inv = T(1) / T(n);
    for (int64_t j = 0; j < d; ++j) po[j] *= inv;
    auto as = a.storage();
    detail::record_op<T>("mean_rows", {a}, out, [as, n, d, inv](GradSink<T>& sink, std::span<const T> og) {
        auto g = sink.accum(as);
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < d; ++j) g[i * d + j] += og[j] * inv;
    });
    return out;
}

// Same data, new shape; element count must be preserved.
template <class T>
Tensor<T> reshape(const Tensor<T>& a, std::vector<int64_t> shape) {
    Tensor<T> out = Tensor<T>::zeros(shape);
    if (out.numel() != a.numel()) {
        throw ShapeError("reshape: " + a.shape_str() + " has " + std::to_string(a.numel()) +
                         " elements, target " + detail::shape_str(shape) + " has " + std::to_string(out.numel()));
    }
    auto pa = a.data();
    std::copy(pa.begin(), pa.end(), out.mutable_data().begin());
    auto as = a.storage();
    detail::record_op<T>("reshape", {a}, out, [as](GradSink<T>& sink, std::span<const T> og) {
        auto g = sink.accum(as);
        for (size_t i = 0; i < og.size(); ++i) g[i] += og[i];
    });
    return out;
}

// Sum of all elements, as a scalar tensor.
template <class T>
Tensor<T> sum(const Tensor<T>& a) {
    Tensor<T> out = Tensor<T>::scalar(T(0));
    auto pa = a.data();
    T s = T(0);
    for (int64_t i = 0; i < a.numel(); ++i) s += pa[i];
    out.mutable_data()[0] = s;
    out.check_finite("sum");
    auto as = a.storage();
    detail::record_op<T>("sum", {a}, out, [as](GradSink<T>& sink, std::span<const T> og) {
        auto g = sink.accum(as);
        for (size_t i = 0; i < g.size(); ++i) g[i] += og[0];
    });
    return out;
}

// Mean squared error between same-shaped tensors, as a scalar.
template <class T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    detail::require_same_shape(pred, target, "mse_loss");
    Tensor<T> diff = sub(pred, target);
    Tensor<T> sq = mul(diff, diff);
    return scale(sum(sq), T(1) / T(pred.numel()));
}

}  // namespace sftik
