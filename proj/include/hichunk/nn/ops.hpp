#pragma once

#include "hichunk/nn/tape.hpp"

#include <cmath>
#include <vector>

namespace hichunk::nn::ops {

namespace detail {
template <typename T>
bool wants(Tape<T>& tape, Var v) {
    return tape.needs_grad(v);
}

template <typename T>
void check(bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(what);
}
}  // namespace detail

template <typename T>
Var matmul(Tape<T>& tape, Var a, Var b) {
    const auto& A = tape.value(a);
    const auto& B = tape.value(b);
    detail::check<T>(A.cols() == B.rows(), "matmul: inner dimensions differ");
    Mat<T> out = A * B;
    return tape.emit(std::move(out), {a, b}, [a, b](Tape<T>& t, Var self) {
        const auto& g = t.grad(self);
        if (t.needs_grad(a)) t.grad(a).noalias() += g * t.value(b).transpose();
        if (t.needs_grad(b)) t.grad(b).noalias() += t.value(a).transpose() * g;
    });
}

// x (R, in) * W (in, out) + b (1, out)
template <typename T>
Var linear(Tape<T>& tape, Var x, Var w, Var b) {
    const auto& X = tape.value(x);
    const auto& W = tape.value(w);
    const auto& Bv = tape.value(b);
    detail::check<T>(X.cols() == W.rows(), "linear: input width mismatch");
    detail::check<T>(Bv.rows() == 1 && Bv.cols() == W.cols(), "linear: bias shape mismatch");
    Mat<T> out(X.rows(), W.cols());
    out.noalias() = X * W;
    out.rowwise() += Bv.row(0);
    return tape.emit(std::move(out), {x, w, b}, [x, w, b](Tape<T>& t, Var self) {
        const auto& g = t.grad(self);
        if (t.needs_grad(x)) t.grad(x).noalias() += g * t.value(w).transpose();
        if (t.needs_grad(w)) t.grad(w).noalias() += t.value(x).transpose() * g;
        if (t.needs_grad(b)) t.grad(b) += g.colwise().sum();
    });
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
    const auto& A = tape.value(a);
    const auto& B = tape.value(b);
    detail::check<T>(A.rows() == B.rows() && A.cols() == B.cols(), "add: shape mismatch");
    Mat<T> out = A + B;
    return tape.emit(std::move(out), {a, b}, [a, b](Tape<T>& t, Var self) {
        const auto& g = t.grad(self);
        if (t.needs_grad(a)) t.grad(a) += g;
        if (t.needs_grad(b)) t.grad(b) += g;
    });
}

template <typename T>
Var mul(Tape<T>& tape, Var a, Var b) {
    const auto& A = tape.value(a);
    const auto& B = tape.value(b);
    detail::check<T>(A.rows() == B.rows() && A.cols() == B.cols(), "mul: shape mismatch");
    Mat<T> out = A.cwiseProduct(B);
    return tape.emit(std::move(out), {a, b}, [a, b](Tape<T>& t, Var self) {
        const auto& g = t.grad(self);
        if (t.needs_grad(a)) t.grad(a) += g.cwiseProduct(t.value(b));
        if (t.needs_grad(b)) t.grad(b) += g.cwiseProduct(t.value(a));
    });
}

// out = x * s + shift for a fixed scalar pair.
template <typename T>
Var affine_scalar(Tape<T>& tape, Var x, T scale, T shift) {
    Mat<T> out = (tape.value(x).array() * scale + shift).matrix();
    return tape.emit(std::move(out), {x}, [x, scale](Tape<T>& t, Var self) {
        t.grad(x) += t.grad(self) * scale;
    });
}

template <typename T>
Var silu(Tape<T>& tape, Var x) {
    const auto& X = tape.value(x);
    Mat<T> sig = (T(1) / (T(1) + (-X.array()).exp())).matrix();
    Mat<T> out = X.cwiseProduct(sig);
    return tape.emit(std::move(out), {x}, [x, sig = std::move(sig)](Tape<T>& t, Var self) {
        const auto& X = t.value(x);
        const auto d = sig.array() * (T(1) + X.array() * (T(1) - sig.array()));
        t.grad(x).array() += t.grad(self).array() * d;
    });
}

template <typename T>
Var slice_cols(Tape<T>& tape, Var x, Eigen::Index start, Eigen::Index count) {
    const auto& X = tape.value(x);
    detail::check<T>(start >= 0 && start + count <= X.cols(), "slice_cols: out of range");
    Mat<T> out = X.middleCols(start, count);
    return tape.emit(std::move(out), {x}, [x, start, count](Tape<T>& t, Var self) {
        t.grad(x).middleCols(start, count) += t.grad(self);
    });
}

template <typename T>
Var concat_cols(Tape<T>& tape, Var a, Var b) {
    const auto& A = tape.value(a);
    const auto& B = tape.value(b);
    detail::check<T>(A.rows() == B.rows(), "concat_cols: row mismatch");
    Mat<T> out(A.rows(), A.cols() + B.cols());
    out.leftCols(A.cols()) = A;
    out.rightCols(B.cols()) = B;
    const auto ca = A.cols();
    const auto cb = B.cols();
    return tape.emit(std::move(out), {a, b}, [a, b, ca, cb](Tape<T>& t, Var self) {
        const auto& g = t.grad(self);
        if (t.needs_grad(a)) t.grad(a) += g.leftCols(ca);
        if (t.needs_grad(b)) t.grad(b) += g.rightCols(cb);
    });
}

// Per batch item, stacks a (La rows) on top of b (Lb rows).
template <typename T>
Var concat_time(Tape<T>& tape, Var a, Var b, Eigen::Index batch) {
    const auto& A = tape.value(a);
    const auto& B = tape.value(b);
    detail::check<T>(A.cols() == B.cols(), "concat_time: channel mismatch");
    detail::check<T>(A.rows() % batch == 0 && B.rows() % batch == 0, "concat_time: batch mismatch");
    const Eigen::Index la = A.rows() / batch;
    const Eigen::Index lb = B.rows() / batch;
    Mat<T> out(batch * (la + lb), A.cols());
    for (Eigen::Index i = 0; i < batch; ++i) {
        out.middleRows(i * (la + lb), la) = A.middleRows(i * la, la);
        out.middleRows(i * (la + lb) + la, lb) = B.middleRows(i * lb, lb);
    }
    return tape.emit(std::move(out), {a, b}, [a, b, batch, la, lb](Tape<T>& t, Var self) {
        const auto& g = t.grad(self);
        for (Eigen::Index i = 0; i < batch; ++i) {
            if (t.needs_grad(a)) t.grad(a).middleRows(i * la, la) += g.middleRows(i * (la + lb), la);
            if (t.needs_grad(b)) t.grad(b).middleRows(i * lb, lb) += g.middleRows(i * (la + lb) + la, lb);
        }
    });
}

// (B, C) -> (B * L, C): each row repeated L times.
template <typename T>
Var broadcast_rows(Tape<T>& tape, Var x, Eigen::Index length) {
    const auto& X = tape.value(x);
    Mat<T> out(X.rows() * length, X.cols());
    for (Eigen::Index i = 0; i < X.rows(); ++i) out.middleRows(i * length, length).rowwise() = X.row(i);
    return tape.emit(std::move(out), {x}, [x, length](Tape<T>& t, Var self) {
        const auto& g = t.grad(self);
        auto& gx = t.grad(x);
        for (Eigen::Index i = 0; i < gx.rows(); ++i) gx.row(i) += g.middleRows(i * length, length).colwise().sum();
    });
}

// (L, C) -> (B * L, C): the whole block repeated B times.
template <typename T>
Var broadcast_rows_tiled(Tape<T>& tape, Var x, Eigen::Index batch) {
    const auto& X = tape.value(x);
    const Eigen::Index L = X.rows();
    Mat<T> out(batch * L, X.cols());
    for (Eigen::Index i = 0; i < batch; ++i) out.middleRows(i * L, L) = X;
    return tape.emit(std::move(out), {x}, [x, batch, L](Tape<T>& t, Var self) {
        const auto& g = t.grad(self);
        auto& gx = t.grad(x);
        for (Eigen::Index i = 0; i < batch; ++i) gx += g.middleRows(i * L, L);
    });
}

// Row-major reinterpretation; (B * L, C) <-> (B, L * C) shares memory order.
template <typename T>
Var reshape(Tape<T>& tape, Var x, Eigen::Index rows, Eigen::Index cols) {
    const auto& X = tape.value(x);
    detail::check<T>(rows * cols == X.size(), "reshape: size mismatch");
    Mat<T> out = Eigen::Map<const Mat<T>>(X.data(), rows, cols);
    const auto r0 = X.rows();
    const auto c0 = X.cols();
    return tape.emit(std::move(out), {x}, [x, r0, c0](Tape<T>& t, Var self) {
        const auto& g = t.grad(self);
        t.grad(x) += Eigen::Map<const Mat<T>>(g.data(), r0, c0);
    });
}

// Mixes the time axis: out_b = P (Lout, Lin) * x_b (Lin, C) for every batch item.
template <typename T>
Var time_mix(Tape<T>& tape, Var x, Var p, Eigen::Index batch) {
    const auto& X = tape.value(x);
    const auto& P = tape.value(p);
    detail::check<T>(X.rows() == batch * P.cols(), "time_mix: length mismatch");
    const Eigen::Index lin = P.cols();
    const Eigen::Index lout = P.rows();
    Mat<T> out(batch * lout, X.cols());
    for (Eigen::Index i = 0; i < batch; ++i) out.middleRows(i * lout, lout).noalias() = P * X.middleRows(i * lin, lin);
    return tape.emit(std::move(out), {x, p}, [x, p, batch, lin, lout](Tape<T>& t, Var self) {
        const auto& g = t.grad(self);
        const auto& P = t.value(p);
        const auto& X = t.value(x);
        for (Eigen::Index i = 0; i < batch; ++i) {
            if (t.needs_grad(x)) t.grad(x).middleRows(i * lin, lin).noalias() += P.transpose() * g.middleRows(i * lout, lout);
            if (t.needs_grad(p)) t.grad(p).noalias() += g.middleRows(i * lout, lout) * X.middleRows(i * lin, lin).transpose();
        }
    });
}

// 1-D convolution over (B * L, Cin) with weight (K * Cin, Cout); row k * Cin + c of the
// weight multiplies input channel c at tap k. Zero padding.
template <typename T>
Var conv1d(Tape<T>& tape, Var x, Var w, Var b, Eigen::Index batch, Eigen::Index length, int kernel, int stride,
           int padding, Eigen::Index* out_length = nullptr) {
    const auto& X = tape.value(x);
    const auto& W = tape.value(w);
    const Eigen::Index cin = X.cols();
    detail::check<T>(X.rows() == batch * length, "conv1d: input rows != batch * length");
    detail::check<T>(W.rows() == kernel * cin, "conv1d: weight rows != kernel * in_channels");
    const Eigen::Index lout = (length + 2 * padding - kernel) / stride + 1;
    detail::check<T>(lout >= 1, "conv1d: empty output");
    Mat<T> cols = Mat<T>::Zero(batch * lout, kernel * cin);
    for (Eigen::Index bi = 0; bi < batch; ++bi) {
        for (Eigen::Index o = 0; o < lout; ++o) {
            for (int k = 0; k < kernel; ++k) {
                const Eigen::Index src = o * stride - padding + k;
                if (src < 0 || src >= length) continue;
                cols.row(bi * lout + o).segment(k * cin, cin) = X.row(bi * length + src);
            }
        }
    }
    Mat<T> out(batch * lout, W.cols());
    out.noalias() = cols * W;
    out.rowwise() += tape.value(b).row(0);
    if (out_length) *out_length = lout;
    return tape.emit(std::move(out), {x, w, b},
                     [x, w, b, batch, length, kernel, stride, padding, lout, cin,
                      cols = std::move(cols)](Tape<T>& t, Var self) {
                         const auto& g = t.grad(self);
                         if (t.needs_grad(w)) t.grad(w).noalias() += cols.transpose() * g;
                         if (t.needs_grad(b)) t.grad(b) += g.colwise().sum();
                         if (t.needs_grad(x)) {
                             Mat<T> gcols(g.rows(), t.value(w).rows());
                             gcols.noalias() = g * t.value(w).transpose();
                             auto& gx = t.grad(x);
                             for (Eigen::Index bi = 0; bi < batch; ++bi) {
                                 for (Eigen::Index o = 0; o < lout; ++o) {
                                     for (int k = 0; k < kernel; ++k) {
                                         const Eigen::Index src = o * stride - padding + k;
                                         if (src < 0 || src >= length) continue;
                                         gx.row(bi * length + src) += gcols.row(bi * lout + o).segment(k * cin, cin);
                                     }
                                 }
                             }
                         }
                     });
}

// Group normalisation over (B * L, C); statistics per (batch item, channel group).
template <typename T>
Var group_norm(Tape<T>& tape, Var x, Var gamma, Var beta, Eigen::Index batch, Eigen::Index length, int groups,
               T eps = T(1e-5)) {
    const auto& X = tape.value(x);
    const Eigen::Index C = X.cols();
    detail::check<T>(C % groups == 0, "group_norm: channels not divisible by groups");
    detail::check<T>(X.rows() == batch * length, "group_norm: rows != batch * length");
    const Eigen::Index cg = C / groups;
    const T count = static_cast<T>(length * cg);
    Mat<T> xhat(X.rows(), C);
    std::vector<T> rstd(static_cast<std::size_t>(batch * groups));
    for (Eigen::Index bi = 0; bi < batch; ++bi) {
        for (int gi = 0; gi < groups; ++gi) {
            auto blk = X.block(bi * length, gi * cg, length, cg);
            const T mean = blk.sum() / count;
            const T var = (blk.array() - mean).square().sum() / count;
            const T r = T(1) / std::sqrt(var + eps);
            rstd[static_cast<std::size_t>(bi * groups + gi)] = r;
            xhat.block(bi * length, gi * cg, length, cg) = ((blk.array() - mean) * r).matrix();
        }
    }
    Mat<T> out = xhat;
    out.array().rowwise() *= tape.value(gamma).row(0).array();
    out.rowwise() += tape.value(beta).row(0);
    return tape.emit(std::move(out), {x, gamma, beta},
                     [x, gamma, beta, batch, length, groups, cg, count, xhat = std::move(xhat),
                      rstd = std::move(rstd)](Tape<T>& t, Var self) {
                         const auto& g = t.grad(self);
                         if (t.needs_grad(gamma)) t.grad(gamma) += g.cwiseProduct(xhat).colwise().sum();
                         if (t.needs_grad(beta)) t.grad(beta) += g.colwise().sum();
                         if (!t.needs_grad(x)) return;
                         Mat<T> dxhat = g;
                         dxhat.array().rowwise() *= t.value(gamma).row(0).array();
                         auto& gx = t.grad(x);
                         for (Eigen::Index bi = 0; bi < batch; ++bi) {
                             for (int gi = 0; gi < groups; ++gi) {
                                 auto d = dxhat.block(bi * length, gi * cg, length, cg).array();
                                 auto xh = xhat.block(bi * length, gi * cg, length, cg).array();
                                 const T sum_d = d.sum();
                                 const T sum_dx = (d * xh).sum();
                                 const T r = rstd[static_cast<std::size_t>(bi * groups + gi)];
                                 gx.block(bi * length, gi * cg, length, cg).array() +=
                                     (r / count) * (count * d - sum_d - xh * sum_dx);
                             }
                         }
                     });
}

// Nearest-neighbour upsampling along time: out position i copies input i / 2.
template <typename T>
Var upsample_nearest(Tape<T>& tape, Var x, Eigen::Index batch, Eigen::Index length, Eigen::Index out_length) {
    const auto& X = tape.value(x);
    detail::check<T>(X.rows() == batch * length, "upsample: rows != batch * length");
    Mat<T> out(batch * out_length, X.cols());
    for (Eigen::Index bi = 0; bi < batch; ++bi) {
        for (Eigen::Index i = 0; i < out_length; ++i) {
            out.row(bi * out_length + i) = X.row(bi * length + std::min(i / 2, length - 1));
        }
    }
    return tape.emit(std::move(out), {x}, [x, batch, length, out_length](Tape<T>& t, Var self) {
        const auto& g = t.grad(self);
        auto& gx = t.grad(x);
        for (Eigen::Index bi = 0; bi < batch; ++bi) {
            for (Eigen::Index i = 0; i < out_length; ++i) {
                gx.row(bi * length + std::min(i / 2, length - 1)) += g.row(bi * out_length + i);
            }
        }
    });
}

// Multi-head attention of a single shared query row q (1, C) over `seq` key/value rows per
// batch item. Returns (B, C). If `weights` is given it receives (B * heads, seq) softmax rows.
template <typename T>
Var query_attention(Tape<T>& tape, Var q, Var k, Var v, Eigen::Index batch, Eigen::Index seq, int heads,
                    Mat<T>* weights = nullptr) {
    const auto& Q = tape.value(q);
    const auto& K = tape.value(k);
    const auto& V = tape.value(v);
    const Eigen::Index C = Q.cols();
    detail::check<T>(Q.rows() == 1, "attention: query must be a single row");
    detail::check<T>(C % heads == 0, "attention: width not divisible by heads");
    detail::check<T>(K.rows() == batch * seq && V.rows() == batch * seq, "attention: rows != batch * seq");
    detail::check<T>(K.cols() == C && V.cols() == C, "attention: width mismatch");
    const Eigen::Index d = C / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(d));
    Mat<T> attn(batch * heads, seq);
    Mat<T> out(batch, C);
    for (Eigen::Index bi = 0; bi < batch; ++bi) {
        for (int h = 0; h < heads; ++h) {
            auto kb = K.block(bi * seq, h * d, seq, d);
            auto vb = V.block(bi * seq, h * d, seq, d);
            Eigen::Matrix<T, Eigen::Dynamic, 1> s = (kb * Q.block(0, h * d, 1, d).transpose()) * scale;
            const T mx = s.maxCoeff();
            s = (s.array() - mx).exp().matrix();
            s /= s.sum();
            attn.row(bi * heads + h) = s.transpose();
            out.block(bi, h * d, 1, d).noalias() = s.transpose() * vb;
        }
    }
    if (weights) *weights = attn;
    return tape.emit(std::move(out), {q, k, v},
                     [q, k, v, batch, seq, heads, d, scale, attn = std::move(attn)](Tape<T>& t, Var self) {
                         const auto& g = t.grad(self);
                         const auto& Q = t.value(q);
                         const auto& K = t.value(k);
                         const auto& V = t.value(v);
                         for (Eigen::Index bi = 0; bi < batch; ++bi) {
                             for (int h = 0; h < heads; ++h) {
                                 const auto a = attn.row(bi * heads + h);  // (1, seq)
                                 const auto gh = g.block(bi, h * d, 1, d);  // (1, d)
                                 auto vb = V.block(bi * seq, h * d, seq, d);
                                 auto kb = K.block(bi * seq, h * d, seq, d);
                                 if (t.needs_grad(v)) t.grad(v).block(bi * seq, h * d, seq, d).noalias() += a.transpose() * gh;
                                 Eigen::Matrix<T, 1, Eigen::Dynamic> ga = gh * vb.transpose();
                                 const T dot = (ga.array() * a.array()).sum();
                                 Eigen::Matrix<T, 1, Eigen::Dynamic> gs = (a.array() * (ga.array() - dot)).matrix() * scale;
                                 if (t.needs_grad(q)) t.grad(q).block(0, h * d, 1, d).noalias() += gs * kb;
                                 if (t.needs_grad(k)) {
                                     t.grad(k).block(bi * seq, h * d, seq, d).noalias() +=
                                         gs.transpose() * Q.block(0, h * d, 1, d);
                                 }
                             }
                         }
                     });
}

// mean((a - b)^2) over all entries, as a (1, 1) value.
template <typename T>
Var mse(Tape<T>& tape, Var a, Var b) {
    const auto& A = tape.value(a);
    const auto& B = tape.value(b);
    detail::check<T>(A.rows() == B.rows() && A.cols() == B.cols(), "mse: shape mismatch");
    Mat<T> out(1, 1);
    out(0, 0) = (A - B).squaredNorm() / static_cast<T>(A.size());
    return tape.emit(std::move(out), {a, b}, [a, b](Tape<T>& t, Var self) {
        const T g = t.grad(self)(0, 0);
        const T n = static_cast<T>(t.value(a).size());
        Mat<T> diff = (t.value(a) - t.value(b)) * (T(2) * g / n);
        if (t.needs_grad(a)) t.grad(a) += diff;
        if (t.needs_grad(b)) t.grad(b) -= diff;
    });
}

// sum(x .* w) for a fixed weight matrix; used to reduce arbitrary outputs to a scalar.
template <typename T>
Var weighted_sum(Tape<T>& tape, Var x, const Mat<T>& w) {
    const auto& X = tape.value(x);
    detail::check<T>(X.rows() == w.rows() && X.cols() == w.cols(), "weighted_sum: shape mismatch");
    Mat<T> out(1, 1);
    out(0, 0) = X.cwiseProduct(w).sum();
    return tape.emit(std::move(out), {x}, [x, w](Tape<T>& t, Var self) {
        t.grad(x) += w * t.grad(self)(0, 0);
    });
}

}  // namespace hichunk::nn::ops
