#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "degdit/errors.hpp"

namespace degdit::ad {

using Mat = Eigen::MatrixXd;

class Tape;

// Lightweight handle into a Tape. Copyable, trivially small.
struct Var {
    Tape* tape = nullptr;
    int idx = -1;

    bool valid() const { return tape != nullptr && idx >= 0; }
    const Mat& val() const;
    int rows() const { return static_cast<int>(val().rows()); }
    int cols() const { return static_cast<int>(val().cols()); }
    double scalar() const { return val()(0, 0); }
};

// Reverse-mode tape over dense double matrices. One tape per forward pass;
// parameters are bound as leaves tagged with an external id so gradient
// accumulation stays confined to the call (shared parameter stores are never
// written during forward/backward).
class Tape {
  public:
    Tape() { nodes_.reserve(128); }

    // ---- leaves -----------------------------------------------------------

    Var constant(Mat v) { return push(std::move(v), false, -1); }

    Var leaf(Mat v, bool requires_grad = true) {
        return push(std::move(v), requires_grad, -1);
    }

    Var param(int param_id, const Mat& v) { return push(v, true, param_id); }

    // ---- elementwise ------------------------------------------------------

    Var add(Var a, Var b) {
        check_same_shape(a, b, "add");
        Var out = push(val(a) + val(b), needs(a) || needs(b), -1);
        if (node(out).requires_grad)
            record(out, [this, a, b, out]() {
                const Mat& g = grad_of(out);
                accum(a, g);
                accum(b, g);
            });
        return out;
    }

    Var sub(Var a, Var b) {
        check_same_shape(a, b, "sub");
        Var out = push(val(a) - val(b), needs(a) || needs(b), -1);
        if (node(out).requires_grad)
            record(out, [this, a, b, out]() {
                const Mat& g = grad_of(out);
                accum(a, g);
                accum(b, -g);
            });
        return out;
    }

    Var hadamard(Var a, Var b) {
        check_same_shape(a, b, "hadamard");
        Var out =
            push(val(a).cwiseProduct(val(b)), needs(a) || needs(b), -1);
        if (node(out).requires_grad)
            record(out, [this, a, b, out]() {
                const Mat& g = grad_of(out);
                if (needs(a)) accum(a, g.cwiseProduct(val(b)));
                if (needs(b)) accum(b, g.cwiseProduct(val(a)));
            });
        return out;
    }

    Var scale(Var a, double s) {
        Var out = push(val(a) * s, needs(a), -1);
        if (node(out).requires_grad)
            record(out, [this, a, s, out]() { accum(a, grad_of(out) * s); });
        return out;
    }

    Var add_const(Var a, double c) {
        Var out = push(val(a).array() + c, needs(a), -1);
        if (node(out).requires_grad)
            record(out, [this, a, out]() { accum(a, grad_of(out)); });
        return out;
    }

    Var sin(Var a) {
        Var out = push(val(a).array().sin().matrix(), needs(a), -1);
        if (node(out).requires_grad)
            record(out, [this, a, out]() {
                accum(a, grad_of(out).cwiseProduct(
                             val(a).array().cos().matrix()));
            });
        return out;
    }

    // Exact (erf-based) GELU; smooth everywhere so finite-difference checks
    // are well conditioned.
    Var gelu(Var a) {
        const Mat& x = val(a);
        Mat y(x.rows(), x.cols());
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            double v = x(i);
            y(i) = 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2));
        }
        Var out = push(std::move(y), needs(a), -1);
        if (node(out).requires_grad)
            record(out, [this, a, out]() {
                const Mat& x2 = val(a);
                const Mat& g = grad_of(out);
                Mat d(x2.rows(), x2.cols());
                constexpr double inv_sqrt_2pi = 0.3989422804014327;
                for (Eigen::Index i = 0; i < x2.size(); ++i) {
                    double v = x2(i);
                    double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
                    double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
                    d(i) = cdf + v * pdf;
                }
                accum(a, g.cwiseProduct(d));
            });
        return out;
    }

    // ---- linear algebra ---------------------------------------------------

    Var matmul(Var a, Var b) {
        if (val(a).cols() != val(b).rows())
            throw Error(ErrorKind::ShapeMismatch, "matmul inner dims");
        Var out = push(val(a) * val(b), needs(a) || needs(b), -1);
        if (node(out).requires_grad)
            record(out, [this, a, b, out]() {
                const Mat& g = grad_of(out);
                if (needs(a)) accum(a, g * val(b).transpose());
                if (needs(b)) accum(b, val(a).transpose() * g);
            });
        return out;
    }

    // a (n×k) · b^T (k×m), b given as m×k
    Var matmul_nt(Var a, Var b) {
        if (val(a).cols() != val(b).cols())
            throw Error(ErrorKind::ShapeMismatch, "matmul_nt inner dims");
        Var out = push(val(a) * val(b).transpose(), needs(a) || needs(b), -1);
        if (node(out).requires_grad)
            record(out, [this, a, b, out]() {
                const Mat& g = grad_of(out);
                if (needs(a)) accum(a, g * val(b));
                if (needs(b)) accum(b, g.transpose() * val(a));
            });
        return out;
    }

    // y = x·W^T + 1·b, with x: n×in, W: out×in, b: 1×out
    Var affine(Var x, Var W, Var b) {
        if (val(x).cols() != val(W).cols() || val(W).rows() != val(b).cols())
            throw Error(ErrorKind::ShapeMismatch, "affine dims");
        Mat y = val(x) * val(W).transpose();
        y.rowwise() += val(b).row(0);
        Var out = push(std::move(y), needs(x) || needs(W) || needs(b), -1);
        if (node(out).requires_grad)
            record(out, [this, x, W, b, out]() {
                const Mat& g = grad_of(out);
                if (needs(x)) accum(x, g * val(W));
                if (needs(W)) accum(W, g.transpose() * val(x));
                if (needs(b)) accum(b, g.colwise().sum());
            });
        return out;
    }

    // ---- broadcasting / structure ----------------------------------------

    Var add_rowvec(Var a, Var r) {
        if (val(r).rows() != 1 || val(r).cols() != val(a).cols())
            throw Error(ErrorKind::ShapeMismatch, "add_rowvec");
        Mat y = val(a);
        y.rowwise() += val(r).row(0);
        Var out = push(std::move(y), needs(a) || needs(r), -1);
        if (node(out).requires_grad)
            record(out, [this, a, r, out]() {
                const Mat& g = grad_of(out);
                if (needs(a)) accum(a, g);
                if (needs(r)) accum(r, g.colwise().sum());
            });
        return out;
    }

    // out(i,j) = a(i,j) * r(0,j)
    Var hadamard_rowvec(Var a, Var r) {
        if (val(r).rows() != 1 || val(r).cols() != val(a).cols())
            throw Error(ErrorKind::ShapeMismatch, "hadamard_rowvec");
        Mat y = val(a);
        y.array().rowwise() *= val(r).row(0).array();
        Var out = push(std::move(y), needs(a) || needs(r), -1);
        if (node(out).requires_grad)
            record(out, [this, a, r, out]() {
                const Mat& g = grad_of(out);
                if (needs(a)) {
                    Mat ga = g;
                    ga.array().rowwise() *= val(r).row(0).array();
                    accum(a, ga);
                }
                if (needs(r)) accum(r, g.cwiseProduct(val(a)).colwise().sum());
            });
        return out;
    }

    Var concat_rows(Var a, Var b) {
        if (val(a).cols() != val(b).cols())
            throw Error(ErrorKind::ShapeMismatch, "concat_rows");
        Mat y(val(a).rows() + val(b).rows(), val(a).cols());
        y.topRows(val(a).rows()) = val(a);
        y.bottomRows(val(b).rows()) = val(b);
        Var out = push(std::move(y), needs(a) || needs(b), -1);
        if (node(out).requires_grad)
            record(out, [this, a, b, out]() {
                const Mat& g = grad_of(out);
                if (needs(a)) accum(a, g.topRows(val(a).rows()));
                if (needs(b)) accum(b, g.bottomRows(val(b).rows()));
            });
        return out;
    }

    Var concat_cols(Var a, Var b) {
        if (val(a).rows() != val(b).rows())
            throw Error(ErrorKind::ShapeMismatch, "concat_cols");
        Mat y(val(a).rows(), val(a).cols() + val(b).cols());
        y.leftCols(val(a).cols()) = val(a);
        y.rightCols(val(b).cols()) = val(b);
        Var out = push(std::move(y), needs(a) || needs(b), -1);
        if (node(out).requires_grad)
            record(out, [this, a, b, out]() {
                const Mat& g = grad_of(out);
                if (needs(a)) accum(a, g.leftCols(val(a).cols()));
                if (needs(b)) accum(b, g.rightCols(val(b).cols()));
            });
        return out;
    }

    Var slice_rows(Var a, int r0, int n) {
        Var out = push(val(a).middleRows(r0, n), needs(a), -1);
        if (node(out).requires_grad)
            record(out, [this, a, r0, n, out]() {
                Mat g = Mat::Zero(val(a).rows(), val(a).cols());
                g.middleRows(r0, n) = grad_of(out);
                accum(a, g);
            });
        return out;
    }

    Var slice_cols(Var a, int c0, int n) {
        Var out = push(val(a).middleCols(c0, n), needs(a), -1);
        if (node(out).requires_grad)
            record(out, [this, a, c0, n, out]() {
                Mat g = Mat::Zero(val(a).rows(), val(a).cols());
                g.middleCols(c0, n) = grad_of(out);
                accum(a, g);
            });
        return out;
    }

    Var select_rows(Var a, std::vector<int> rows) {
        Mat y(static_cast<int>(rows.size()), val(a).cols());
        for (size_t i = 0; i < rows.size(); ++i) y.row(i) = val(a).row(rows[i]);
        Var out = push(std::move(y), needs(a), -1);
        if (node(out).requires_grad)
            record(out, [this, a, rows = std::move(rows), out]() {
                Mat g = Mat::Zero(val(a).rows(), val(a).cols());
                const Mat& go = grad_of(out);
                for (size_t i = 0; i < rows.size(); ++i)
                    g.row(rows[i]) += go.row(i);
                accum(a, g);
            });
        return out;
    }

    Var mean_rows(Var a) {
        const double inv = 1.0 / static_cast<double>(val(a).rows());
        Var out = push(val(a).colwise().sum() * inv, needs(a), -1);
        if (node(out).requires_grad)
            record(out, [this, a, inv, out]() {
                const Mat& g = grad_of(out);
                Mat ga(val(a).rows(), val(a).cols());
                ga.rowwise() = g.row(0) * inv;
                accum(a, ga);
            });
        return out;
    }

    // row i multiplied by s[i]; s is a constant
    Var row_scale(Var a, Eigen::VectorXd s) {
        if (s.size() != val(a).rows())
            throw Error(ErrorKind::ShapeMismatch, "row_scale");
        Var out = push(s.asDiagonal() * val(a), needs(a), -1);
        if (node(out).requires_grad)
            record(out, [this, a, s = std::move(s), out]() {
                accum(a, s.asDiagonal() * grad_of(out));
            });
        return out;
    }

    // rows with keep[i]==false forced to exactly zero
    Var zero_rows(Var a, std::vector<bool> keep) {
        if (static_cast<int>(keep.size()) != val(a).rows())
            throw Error(ErrorKind::ShapeMismatch, "zero_rows");
        Mat y = val(a);
        for (int i = 0; i < y.rows(); ++i)
            if (!keep[i]) y.row(i).setZero();
        Var out = push(std::move(y), needs(a), -1);
        if (node(out).requires_grad)
            record(out, [this, a, keep = std::move(keep), out]() {
                Mat g = grad_of(out);
                for (int i = 0; i < g.rows(); ++i)
                    if (!keep[i]) g.row(i).setZero();
                accum(a, g);
            });
        return out;
    }

    Var l2_normalize_rows(Var a, double tiny = 1e-12) {
        const Mat& x = val(a);
        Mat y(x.rows(), x.cols());
        std::vector<double> norms(x.rows());
        for (int i = 0; i < x.rows(); ++i) {
            double n = x.row(i).norm();
            norms[i] = n;
            y.row(i) = n < tiny ? Mat::Zero(1, x.cols()) : Mat(x.row(i) / n);
        }
        Var out = push(std::move(y), needs(a), -1);
        if (node(out).requires_grad)
            record(out, [this, a, norms = std::move(norms), tiny, out]() {
                const Mat& x2 = val(a);
                const Mat& g = grad_of(out);
                Mat ga(x2.rows(), x2.cols());
                for (int i = 0; i < x2.rows(); ++i) {
                    double n = norms[i];
                    if (n < tiny) {
                        ga.row(i).setZero();
                        continue;
                    }
                    Eigen::RowVectorXd u = x2.row(i) / n;
                    double dot = g.row(i).dot(u);
                    ga.row(i) = (g.row(i) - dot * u) / n;
                }
                accum(a, ga);
            });
        return out;
    }

    Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-6) {
        const Mat& xm = val(x);
        const int n = static_cast<int>(xm.rows());
        const int d = static_cast<int>(xm.cols());
        Mat xhat(n, d);
        std::vector<double> inv_sigma(n);
        for (int i = 0; i < n; ++i) {
            double mu = xm.row(i).mean();
            double var = (xm.row(i).array() - mu).square().mean();
            double is = 1.0 / std::sqrt(var + eps);
            inv_sigma[i] = is;
            xhat.row(i) = (xm.row(i).array() - mu).matrix() * is;
        }
        Mat y = xhat;
        y.array().rowwise() *= val(gamma).row(0).array();
        y.rowwise() += val(beta).row(0);
        Var out =
            push(std::move(y), needs(x) || needs(gamma) || needs(beta), -1);
        if (node(out).requires_grad)
            record(out, [this, x, gamma, beta, xhat = std::move(xhat),
                         inv_sigma = std::move(inv_sigma), out]() {
                const Mat& g = grad_of(out);
                const int n2 = static_cast<int>(g.rows());
                const int d2 = static_cast<int>(g.cols());
                if (needs(gamma))
                    accum(gamma, (g.cwiseProduct(xhat)).colwise().sum());
                if (needs(beta)) accum(beta, g.colwise().sum());
                if (needs(x)) {
                    Mat gx(n2, d2);
                    const auto& gam = val(gamma).row(0);
                    for (int i = 0; i < n2; ++i) {
                        Eigen::RowVectorXd gy =
                            g.row(i).cwiseProduct(gam);
                        double m1 = gy.mean();
                        double m2 = gy.cwiseProduct(xhat.row(i)).mean();
                        gx.row(i) = (gy.array() - m1 -
                                     xhat.row(i).array() * m2) *
                                    inv_sigma[i];
                    }
                    accum(x, gx);
                }
            });
        return out;
    }

    // Row-wise softmax over columns flagged valid; rows with no valid key
    // come out exactly zero (used for fully masked conditioning).
    Var softmax_masked(Var z, std::vector<bool> key_valid) {
        const Mat& zm = val(z);
        if (static_cast<int>(key_valid.size()) != zm.cols())
            throw Error(ErrorKind::ShapeMismatch, "softmax_masked");
        bool any_valid = false;
        for (bool b : key_valid) any_valid |= b;
        Mat p = Mat::Zero(zm.rows(), zm.cols());
        if (any_valid) {
            for (int i = 0; i < zm.rows(); ++i) {
                double mx = -std::numeric_limits<double>::infinity();
                for (int j = 0; j < zm.cols(); ++j)
                    if (key_valid[j]) mx = std::max(mx, zm(i, j));
                double sum = 0.0;
                for (int j = 0; j < zm.cols(); ++j) {
                    if (!key_valid[j]) continue;
                    double e = std::exp(zm(i, j) - mx);
                    p(i, j) = e;
                    sum += e;
                }
                p.row(i) /= sum;
            }
        }
        Var out = push(std::move(p), needs(z) && any_valid, -1);
        if (node(out).requires_grad)
            record(out, [this, z, out]() {
                const Mat& p2 = val(out);
                const Mat& g = grad_of(out);
                Mat gz(p2.rows(), p2.cols());
                for (int i = 0; i < p2.rows(); ++i) {
                    double dot = g.row(i).dot(p2.row(i));
                    gz.row(i) = (p2.row(i).array() *
                                 (g.row(i).array() - dot))
                                    .matrix();
                }
                accum(z, gz);
            });
        return out;
    }

    // ---- reductions -------------------------------------------------------

    Var sum(Var a) {
        Mat y(1, 1);
        y(0, 0) = val(a).sum();
        Var out = push(std::move(y), needs(a), -1);
        if (node(out).requires_grad)
            record(out, [this, a, out]() {
                accum(a, Mat::Constant(val(a).rows(), val(a).cols(),
                                       grad_of(out)(0, 0)));
            });
        return out;
    }

    Var mean_all(Var a) {
        return scale(sum(a), 1.0 / static_cast<double>(val(a).size()));
    }

    Var mse(Var a, Var b) {
        check_same_shape(a, b, "mse");
        Var d = sub(a, b);
        return mean_all(hadamard(d, d));
    }

    // weighted sum: sum(a ⊙ w), w constant
    Var weighted_sum(Var a, Mat w) {
        check_shape(a, static_cast<int>(w.rows()), static_cast<int>(w.cols()),
                    "weighted_sum");
        Mat y(1, 1);
        y(0, 0) = val(a).cwiseProduct(w).sum();
        Var out = push(std::move(y), needs(a), -1);
        if (node(out).requires_grad)
            record(out, [this, a, w = std::move(w), out]() {
                accum(a, grad_of(out)(0, 0) * w);
            });
        return out;
    }

    // ---- backward ---------------------------------------------------------

    void backward(Var root) {
        if (val(root).rows() != 1 || val(root).cols() != 1)
            throw Error(ErrorKind::ShapeMismatch, "backward root not scalar");
        for (auto& n : nodes_) n.grad.resize(0, 0);
        node(root).grad = Mat::Ones(1, 1);
        for (int i = root.idx; i >= 0; --i) {
            Node& n = nodes_[i];
            if (n.backward && n.grad.size() > 0) n.backward();
        }
    }

    const Mat& value(Var v) const { return nodes_[v.idx].value; }

    // gradient of a leaf/parameter after backward (zeros if it never
    // participated)
    Mat grad(Var v) const {
        const Node& n = nodes_[v.idx];
        if (n.grad.size() == 0)
            return Mat::Zero(n.value.rows(), n.value.cols());
        return n.grad;
    }

    bool has_grad(Var v) const { return nodes_[v.idx].grad.size() > 0; }

    size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        Mat value;
        Mat grad;
        std::function<void()> backward;
        bool requires_grad = false;
        int param_id = -1;
    };

    std::vector<Node> nodes_;

    Var push(Mat v, bool requires_grad, int param_id) {
        Node n;
        n.value = std::move(v);
        n.requires_grad = requires_grad;
        n.param_id = param_id;
        nodes_.push_back(std::move(n));
        return Var{this, static_cast<int>(nodes_.size() - 1)};
    }

    Node& node(Var v) { return nodes_[v.idx]; }
    const Node& node(Var v) const { return nodes_[v.idx]; }
    const Mat& val(Var v) const { return nodes_[v.idx].value; }
    bool needs(Var v) const { return nodes_[v.idx].requires_grad; }
    const Mat& grad_of(Var v) const { return nodes_[v.idx].grad; }

    void record(Var out, std::function<void()> fn) {
        nodes_[out.idx].backward = std::move(fn);
    }

    template <typename Derived>
    void accum(Var v, const Eigen::MatrixBase<Derived>& g) {
        Node& n = node(v);
        if (!n.requires_grad) return;
        if (n.grad.size() == 0)
            n.grad = g;
        else
            n.grad += g;
    }

    void check_same_shape(Var a, Var b, const char* op) const {
        if (val(a).rows() != val(b).rows() || val(a).cols() != val(b).cols())
            throw Error(ErrorKind::ShapeMismatch, op);
    }

    void check_shape(Var a, int r, int c, const char* op) const {
        if (val(a).rows() != r || val(a).cols() != c)
            throw Error(ErrorKind::ShapeMismatch, op);
    }
};

inline const Mat& Var::val() const { return tape->value(*this); }

}  // namespace degdit::ad
