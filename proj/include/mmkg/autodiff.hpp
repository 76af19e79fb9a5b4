#pragma once
// Minimal reverse-mode differentiation over dense matrices. A Tape records
// every operation with a closure that pushes the output gradient back to
// its inputs; parameters enter as leaves whose gradients are added to a
// caller-owned sink after backward().

#include "mmkg/errors.hpp"
#include "mmkg/tensor.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace mmkg::ad {

using Mask = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

class Tape {
public:
    Var constant(Matrix value) { return push(std::move(value), {}); }

    // `sink` may be null for leaves whose gradient is not collected.
    Var leaf(const Matrix& value, Matrix* sink)
    {
        Var v = push(value, {});
        nodes_[std::size_t(v.id)].sink = sink;
        return v;
    }

    Var push(Matrix value, std::function<void(Tape&, int)> backprop)
    {
        nodes_.push_back({std::move(value), Matrix(), std::move(backprop), nullptr});
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    const Matrix& value(Var v) const { return nodes_[std::size_t(v.id)].value; }
    Matrix& grad(int id) { return nodes_[std::size_t(id)].grad; }
    const Matrix& grad(Var v) const { return nodes_[std::size_t(v.id)].grad; }
    std::size_t size() const { return nodes_.size(); }

    // Propagates `upstream` (shape of `out`) back through the tape and adds
    // leaf gradients to their sinks.
    void backward(Var out, const Matrix& upstream)
    {
        for (auto& n : nodes_) {
            n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
        }
        const Matrix& ov = value(out);
        if (upstream.rows() != ov.rows() || upstream.cols() != ov.cols()) {
            throw ShapeError("backward: upstream gradient shape mismatch");
        }
        nodes_[std::size_t(out.id)].grad = upstream;
        for (int i = out.id; i >= 0; --i) {
            auto& n = nodes_[std::size_t(i)];
            if (n.backprop && !n.grad.isZero(0.0)) {
                n.backprop(*this, i);
            }
        }
        for (auto& n : nodes_) {
            if (n.sink != nullptr) {
                *n.sink += n.grad;
            }
        }
    }

    void backward(Var scalar_out) { backward(scalar_out, Matrix::Constant(1, 1, 1.0)); }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        std::function<void(Tape&, int)> backprop;
        Matrix* sink;
    };
    std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(Tape& t, Var a, Var b)
{
    const Matrix& A = t.value(a);
    const Matrix& B = t.value(b);
    if (A.cols() != B.rows()) {
        throw ShapeError("matmul: inner dimensions " + std::to_string(A.cols()) + " vs " + std::to_string(B.rows()));
    }
    return t.push(A * B, [a, b](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        tp.grad(a.id) += g * tp.value(b).transpose();
        tp.grad(b.id) += tp.value(a).transpose() * g;
    });
}

// a * b^T
inline Var matmul_nt(Tape& t, Var a, Var b)
{
    const Matrix& A = t.value(a);
    const Matrix& B = t.value(b);
    if (A.cols() != B.cols()) {
        throw ShapeError("matmul_nt: inner dimensions " + std::to_string(A.cols()) + " vs " + std::to_string(B.cols()));
    }
    return t.push(A * B.transpose(), [a, b](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        tp.grad(a.id) += g * tp.value(b);
        tp.grad(b.id) += g.transpose() * tp.value(a);
    });
}

inline Var add(Tape& t, Var a, Var b)
{
    const Matrix& A = t.value(a);
    const Matrix& B = t.value(b);
    if (A.rows() != B.rows() || A.cols() != B.cols()) {
        throw ShapeError("add: shape mismatch");
    }
    return t.push(A + B, [a, b](Tape& tp, int self) {
        tp.grad(a.id) += tp.grad(self);
        tp.grad(b.id) += tp.grad(self);
    });
}

// a + row, broadcasting the 1 x n row over every row of a.
inline Var add_row(Tape& t, Var a, Var row)
{
    const Matrix& A = t.value(a);
    const Matrix& R = t.value(row);
    if (R.rows() != 1 || R.cols() != A.cols()) {
        throw ShapeError("add_row: expected a 1 x " + std::to_string(A.cols()) + " row");
    }
    Matrix out = A;
    out.rowwise() += R.row(0);
    return t.push(std::move(out), [a, row](Tape& tp, int self) {
        tp.grad(a.id) += tp.grad(self);
        tp.grad(row.id) += tp.grad(self).colwise().sum();
    });
}

inline Var scale(Tape& t, Var a, double s)
{
    return t.push(t.value(a) * s, [a, s](Tape& tp, int self) { tp.grad(a.id) += s * tp.grad(self); });
}

// out_ij = col_a_i + col_b_j
inline Var outer_sum(Tape& t, Var col_a, Var col_b)
{
    const Matrix& A = t.value(col_a);
    const Matrix& B = t.value(col_b);
    if (A.cols() != 1 || B.cols() != 1) {
        throw ShapeError("outer_sum: expected column vectors");
    }
    Matrix out = A.col(0).replicate(1, B.rows());
    out.rowwise() += B.col(0).transpose();
    return t.push(std::move(out), [col_a, col_b](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        tp.grad(col_a.id) += g.rowwise().sum();
        tp.grad(col_b.id) += g.colwise().sum().transpose();
    });
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities

inline Var relu(Tape& t, Var a)
{
    Matrix out = t.value(a).cwiseMax(0.0);
    return t.push(std::move(out), [a](Tape& tp, int self) {
        tp.grad(a.id) += (tp.value(a).array() > 0.0).cast<double>().matrix().cwiseProduct(tp.grad(self));
    });
}

inline Var elu(Tape& t, Var a)
{
    Matrix out = t.value(a).unaryExpr([](double x) { return x > 0.0 ? x : std::expm1(x); });
    return t.push(std::move(out), [a](Tape& tp, int self) {
        Matrix d = tp.value(a).unaryExpr([](double x) { return x > 0.0 ? 1.0 : std::exp(x); });
        tp.grad(a.id) += d.cwiseProduct(tp.grad(self));
    });
}

inline Var leaky_relu(Tape& t, Var a, double slope)
{
    Matrix out = t.value(a).unaryExpr([slope](double x) { return x > 0.0 ? x : slope * x; });
    return t.push(std::move(out), [a, slope](Tape& tp, int self) {
        Matrix d = tp.value(a).unaryExpr([slope](double x) { return x > 0.0 ? 1.0 : slope; });
        tp.grad(a.id) += d.cwiseProduct(tp.grad(self));
    });
}

// ---------------------------------------------------------------------------
// Softmax, normalization, loss

// Row-wise softmax restricted to entries where mask is true; masked entries
// are exactly 0. Every row must keep at least one entry.
inline Var masked_softmax_rows(Tape& t, Var s, const Mask& mask)
{
    const Matrix& S = t.value(s);
    if (mask.rows() != S.rows() || mask.cols() != S.cols()) {
        throw ShapeError("masked_softmax_rows: mask shape mismatch");
    }
    Matrix P = Matrix::Zero(S.rows(), S.cols());
    for (Eigen::Index i = 0; i < S.rows(); ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < S.cols(); ++j) {
            if (mask(i, j)) {
                mx = std::max(mx, S(i, j));
            }
        }
        if (!std::isfinite(mx)) {
            throw ShapeError("masked_softmax_rows: row " + std::to_string(i) + " is fully masked");
        }
        double z = 0.0;
        for (Eigen::Index j = 0; j < S.cols(); ++j) {
            if (mask(i, j)) {
                P(i, j) = std::exp(S(i, j) - mx);
                z += P(i, j);
            }
        }
        P.row(i) /= z;
    }
    Matrix saved = P;
    return t.push(std::move(P), [s, saved = std::move(saved)](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        Vector dot = g.cwiseProduct(saved).rowwise().sum();
        tp.grad(s.id) += saved.cwiseProduct(g - dot.replicate(1, g.cols()));
    });
}

// Per-row layer normalization with learned gain and bias (both 1 x n).
inline Var layer_norm_rows(Tape& t, Var x, Var gain, Var bias, double eps = 1e-5)
{
    const Matrix& X = t.value(x);
    const auto n = static_cast<double>(X.cols());
    Vector mean = X.rowwise().mean();
    Matrix centered = X.colwise() - mean;
    Vector inv_std = ((centered.array().square().rowwise().sum() / n) + eps).sqrt().inverse().matrix();
    Matrix xhat = centered.array().colwise() * inv_std.array();
    Matrix out = xhat;
    out.array().rowwise() *= t.value(gain).row(0).array();
    out.rowwise() += t.value(bias).row(0);
    return t.push(std::move(out), [x, gain, bias, xhat, inv_std](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        tp.grad(gain.id) += (g.cwiseProduct(xhat)).colwise().sum();
        tp.grad(bias.id) += g.colwise().sum();
        Matrix gx = g.array().rowwise() * tp.value(gain).row(0).array();
        Vector mean_gx = gx.rowwise().mean();
        Vector mean_gx_xhat = (gx.cwiseProduct(xhat)).rowwise().mean();
        Matrix dx = gx.colwise() - mean_gx;
        dx -= (xhat.array().colwise() * mean_gx_xhat.array()).matrix();
        dx = dx.array().colwise() * inv_std.array();
        tp.grad(x.id) += dx;
    });
}

// Sum over rows of -log softmax(logits_row)[target]; rows whose target is
// negative are skipped. Returns a 1 x 1 value.
inline Var softmax_nll(Tape& t, Var logits, std::span<const int> targets)
{
    const Matrix& L = t.value(logits);
    if (static_cast<Eigen::Index>(targets.size()) != L.rows()) {
        throw ShapeError("softmax_nll: one target per row required");
    }
    Matrix probs(L.rows(), L.cols());
    double loss = 0.0;
    for (Eigen::Index i = 0; i < L.rows(); ++i) {
        double mx = L.row(i).maxCoeff();
        RowVector e = (L.row(i).array() - mx).exp().matrix();
        double z = e.sum();
        probs.row(i) = e / z;
        int tgt = targets[std::size_t(i)];
        if (tgt >= 0) {
            if (tgt >= L.cols()) {
                throw UnknownTokenId("target id " + std::to_string(tgt));
            }
            loss += -(L(i, tgt) - mx - std::log(z));
        }
    }
    std::vector<int> tg(targets.begin(), targets.end());
    return t.push(Matrix::Constant(1, 1, loss), [logits, probs, tg](Tape& tp, int self) {
        double g = tp.grad(self)(0, 0);
        Matrix d = probs;
        for (Eigen::Index i = 0; i < d.rows(); ++i) {
            int tgt = tg[std::size_t(i)];
            if (tgt < 0) {
                d.row(i).setZero();
            } else {
                d(i, tgt) -= 1.0;
            }
        }
        tp.grad(logits.id) += g * d;
    });
}

// ---------------------------------------------------------------------------
// Structural ops

inline Var concat_rows(Tape& t, std::span<const Var> parts)
{
    if (parts.empty()) {
        throw ShapeError("concat_rows: no parts");
    }
    Eigen::Index cols = t.value(parts[0]).cols();
    Eigen::Index rows = 0;
    for (Var p : parts) {
        if (t.value(p).cols() != cols) {
            throw ShapeError("concat_rows: column mismatch");
        }
        rows += t.value(p).rows();
    }
    Matrix out(rows, cols);
    Eigen::Index r = 0;
    for (Var p : parts) {
        out.middleRows(r, t.value(p).rows()) = t.value(p);
        r += t.value(p).rows();
    }
    std::vector<Var> ps(parts.begin(), parts.end());
    return t.push(std::move(out), [ps](Tape& tp, int self) {
        Eigen::Index r = 0;
        for (Var p : ps) {
            Eigen::Index n = tp.value(p).rows();
            tp.grad(p.id) += tp.grad(self).middleRows(r, n);
            r += n;
        }
    });
}

inline Var concat_cols(Tape& t, std::span<const Var> parts)
{
    if (parts.empty()) {
        throw ShapeError("concat_cols: no parts");
    }
    Eigen::Index rows = t.value(parts[0]).rows();
    Eigen::Index cols = 0;
    for (Var p : parts) {
        if (t.value(p).rows() != rows) {
            throw ShapeError("concat_cols: row mismatch");
        }
        cols += t.value(p).cols();
    }
    Matrix out(rows, cols);
    Eigen::Index c = 0;
    for (Var p : parts) {
        out.middleCols(c, t.value(p).cols()) = t.value(p);
        c += t.value(p).cols();
    }
    std::vector<Var> ps(parts.begin(), parts.end());
    return t.push(std::move(out), [ps](Tape& tp, int self) {
        Eigen::Index c = 0;
        for (Var p : ps) {
            Eigen::Index n = tp.value(p).cols();
            tp.grad(p.id) += tp.grad(self).middleCols(c, n);
            c += n;
        }
    });
}

inline Var slice_cols(Tape& t, Var a, Eigen::Index start, Eigen::Index count)
{
    return t.push(t.value(a).middleCols(start, count), [a, start, count](Tape& tp, int self) {
        tp.grad(a.id).middleCols(start, count) += tp.grad(self);
    });
}

inline Var slice_rows(Tape& t, Var a, Eigen::Index start, Eigen::Index count)
{
    return t.push(t.value(a).middleRows(start, count), [a, start, count](Tape& tp, int self) {
        tp.grad(a.id).middleRows(start, count) += tp.grad(self);
    });
}

// out.row(k) = a.row(ids[k])
inline Var gather_rows(Tape& t, Var a, std::span<const int> ids)
{
    const Matrix& A = t.value(a);
    Matrix out(static_cast<Eigen::Index>(ids.size()), A.cols());
    for (std::size_t k = 0; k < ids.size(); ++k) {
        if (ids[k] < 0 || ids[k] >= A.rows()) {
            throw UnknownTokenId("row id " + std::to_string(ids[k]) + " outside [0, " + std::to_string(A.rows()) + ")");
        }
        out.row(Eigen::Index(k)) = A.row(ids[k]);
    }
    std::vector<int> idv(ids.begin(), ids.end());
    return t.push(std::move(out), [a, idv](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        for (std::size_t k = 0; k < idv.size(); ++k) {
            tp.grad(a.id).row(idv[k]) += g.row(Eigen::Index(k));
        }
    });
}

inline Var mean_of(Tape& t, std::span<const Var> parts)
{
    if (parts.empty()) {
        throw ShapeError("mean_of: no parts");
    }
    Matrix out = t.value(parts[0]);
    for (std::size_t i = 1; i < parts.size(); ++i) {
        out += t.value(parts[i]);
    }
    const double w = 1.0 / static_cast<double>(parts.size());
    out *= w;
    std::vector<Var> ps(parts.begin(), parts.end());
    return t.push(std::move(out), [ps, w](Tape& tp, int self) {
        for (Var p : ps) {
            tp.grad(p.id) += w * tp.grad(self);
        }
    });
}

// ---------------------------------------------------------------------------
// Binds parameter tensors to tape leaves, collecting into a gradient set of
// the same shape when one is given.

template <ParameterSet P>
class Binder {
public:
    Binder(Tape& tape, const P& params, P* grads)
        : tape_(tape)
        , params_(params)
        , grads_(grads)
    {
    }

    Var operator()(const Matrix& param)
    {
        Matrix* sink = grads_ ? locate(param) : nullptr;
        return tape_.leaf(param, sink);
    }

    Tape& tape() { return tape_; }

private:
    // Maps a parameter tensor to the corresponding gradient tensor by
    // position in the for_each order.
    Matrix* locate(const Matrix& param)
    {
        if (ptrs_.empty()) {
            params_.for_each([&](std::string_view, const Matrix& m) { params_ptrs_.push_back(&m); });
            ptrs_ = tensor_ptrs(*grads_);
        }
        for (std::size_t i = 0; i < params_ptrs_.size(); ++i) {
            if (params_ptrs_[i] == &param) {
                return ptrs_[i];
            }
        }
        throw ShapeError("binder: tensor does not belong to the parameter set");
    }

    Tape& tape_;
    const P& params_;
    P* grads_;
    std::vector<const Matrix*> params_ptrs_;
    std::vector<Matrix*> ptrs_;
};

} // namespace mmkg::ad
