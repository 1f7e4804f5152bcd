#pragma once

// Reverse-mode automatic differentiation over Eigen double matrices.
//
// Graphs are built eagerly: constructing an op computes its value and
// registers a closure that later pulls the node's gradient into its parents.
// Creation order is a valid topological order, so backward() just replays
// nodes newest-first. Graphs are per-forward-pass and freed when the last
// Var handle goes out of scope; parameters are long-lived leaf nodes.

#include <atomic>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>

#include "emodub/common.hpp"
#include "emodub/rng.hpp"

namespace emodub::ad {

using Mat = Eigen::MatrixXd;

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Mat val;
    Mat grad;  // allocated on first accumulation
    std::vector<Var> parents;
    std::function<void(Node&)> backprop;
    uint64_t order;
    bool needs_grad;

    Node(Mat v, bool ng) : val(std::move(v)), order(bump()), needs_grad(ng) {}

    Mat& g() {
        if (grad.size() == 0) grad = Mat::Zero(val.rows(), val.cols());
        return grad;
    }
    bool has_grad() const { return grad.size() != 0; }
    double scalar() const { return val(0, 0); }

    static uint64_t bump() {
        static std::atomic<uint64_t> counter{1};
        return counter.fetch_add(1, std::memory_order_relaxed);
    }
};

inline Var constant(Mat v) { return std::make_shared<Node>(std::move(v), false); }
inline Var constant(double x) { return constant(Mat::Constant(1, 1, x)); }
inline Var leaf(Mat v) { return std::make_shared<Node>(std::move(v), true); }

template <class F>
Var make_op(Mat val, std::vector<Var> parents, F&& bp) {
    bool ng = false;
    for (const auto& p : parents) ng = ng || p->needs_grad;
    auto n = std::make_shared<Node>(std::move(val), ng);
    if (ng) {
        n->parents = std::move(parents);
        n->backprop = std::forward<F>(bp);
    }
    return n;
}

inline void backward(const Var& loss) {
    if (loss->val.size() != 1) throw ShapeError("backward: loss must be a 1x1 scalar");
    if (!loss->needs_grad) return;

    // Collect the reachable sub-DAG, then run by descending creation order.
    std::vector<Node*> nodes;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{loss.get()};
    seen.insert(loss.get());
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        nodes.push_back(n);
        for (const auto& p : n->parents)
            if (p->needs_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
    std::sort(nodes.begin(), nodes.end(), [](Node* a, Node* b) { return a->order > b->order; });

    loss->g()(0, 0) += 1.0;
    for (Node* n : nodes)
        if (n->backprop && n->has_grad()) n->backprop(*n);
}

// ---------------------------------------------------------------------------
// Elementwise and broadcast arithmetic

inline void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (a->val.rows() != b->val.rows() || a->val.cols() != b->val.cols())
        throw ShapeError(std::string(op) + ": shape mismatch " + std::to_string(a->val.rows()) + "x" +
                         std::to_string(a->val.cols()) + " vs " + std::to_string(b->val.rows()) + "x" +
                         std::to_string(b->val.cols()));
}

inline Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    return make_op(a->val + b->val, {a, b}, [a, b](Node& n) {
        if (a->needs_grad) a->g() += n.grad;
        if (b->needs_grad) b->g() += n.grad;
    });
}

inline Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    return make_op(a->val - b->val, {a, b}, [a, b](Node& n) {
        if (a->needs_grad) a->g() += n.grad;
        if (b->needs_grad) b->g() -= n.grad;
    });
}

inline Var scale(const Var& a, double c) {
    return make_op(a->val * c, {a}, [a, c](Node& n) {
        if (a->needs_grad) a->g() += c * n.grad;
    });
}

inline Var add_scalar(const Var& a, double c) {
    return make_op((a->val.array() + c).matrix(), {a}, [a](Node& n) {
        if (a->needs_grad) a->g() += n.grad;
    });
}

inline Var hadamard(const Var& a, const Var& b) {
    check_same_shape(a, b, "hadamard");
    return make_op(a->val.cwiseProduct(b->val), {a, b}, [a, b](Node& n) {
        if (a->needs_grad) a->g() += n.grad.cwiseProduct(b->val);
        if (b->needs_grad) b->g() += n.grad.cwiseProduct(a->val);
    });
}

// y = x + b with b a 1 x d row broadcast over rows of x.
inline Var add_rowvec(const Var& x, const Var& b) {
    if (b->val.rows() != 1 || b->val.cols() != x->val.cols()) throw ShapeError("add_rowvec: bad bias shape");
    Mat y = x->val.rowwise() + b->val.row(0);
    return make_op(std::move(y), {x, b}, [x, b](Node& n) {
        if (x->needs_grad) x->g() += n.grad;
        if (b->needs_grad) b->g() += n.grad.colwise().sum();
    });
}

// y = x .* s with s a 1 x d row broadcast over rows of x.
inline Var rowscale(const Var& x, const Var& s) {
    if (s->val.rows() != 1 || s->val.cols() != x->val.cols()) throw ShapeError("rowscale: bad scale shape");
    Mat y = (x->val.array().rowwise() * s->val.row(0).array()).matrix();
    return make_op(std::move(y), {x, s}, [x, s](Node& n) {
        if (x->needs_grad) x->g() += (n.grad.array().rowwise() * s->val.row(0).array()).matrix();
        if (s->needs_grad) s->g() += (n.grad.cwiseProduct(x->val)).colwise().sum();
    });
}

// ---------------------------------------------------------------------------
// Matrix products

inline Var matmul(const Var& a, const Var& b) {
    if (a->val.cols() != b->val.rows()) throw ShapeError("matmul: inner dimensions differ");
    Mat y = a->val * b->val;
    return make_op(std::move(y), {a, b}, [a, b](Node& n) {
        if (a->needs_grad) a->g().noalias() += n.grad * b->val.transpose();
        if (b->needs_grad) b->g().noalias() += a->val.transpose() * n.grad;
    });
}

// y = a * b^T
inline Var matmul_nt(const Var& a, const Var& b) {
    if (a->val.cols() != b->val.cols()) throw ShapeError("matmul_nt: inner dimensions differ");
    Mat y = a->val * b->val.transpose();
    return make_op(std::move(y), {a, b}, [a, b](Node& n) {
        if (a->needs_grad) a->g().noalias() += n.grad * b->val;
        if (b->needs_grad) b->g().noalias() += n.grad.transpose() * a->val;
    });
}

// ---------------------------------------------------------------------------
// Nonlinearities

inline Var silu(const Var& a) {
    Mat sg = (1.0 + (-a->val.array()).exp()).inverse().matrix();
    Mat y = a->val.cwiseProduct(sg);
    return make_op(std::move(y), {a}, [a, sg](Node& n) {
        if (!a->needs_grad) return;
        // d/dx x*s(x) = s(x) * (1 + x * (1 - s(x)))
        a->g() +=
            (n.grad.array() * sg.array() * (1.0 + a->val.array() * (1.0 - sg.array()))).matrix();
    });
}

inline Var leaky_relu(const Var& a, double slope) {
    Mat y = a->val.unaryExpr([slope](double x) { return x >= 0 ? x : slope * x; });
    return make_op(std::move(y), {a}, [a, slope](Node& n) {
        if (!a->needs_grad) return;
        a->g() += n.grad.cwiseProduct(
            a->val.unaryExpr([slope](double x) { return x >= 0 ? 1.0 : slope; }));
    });
}

inline Var sigmoid(const Var& a) {
    Mat y = (1.0 + (-a->val.array()).exp()).inverse().matrix();
    return make_op(std::move(y), {a}, [a](Node& n) {
        if (a->needs_grad)
            a->g() += (n.grad.array() * n.val.array() * (1.0 - n.val.array())).matrix();
    });
}

inline Var tanh_op(const Var& a) {
    Mat y = a->val.array().tanh().matrix();
    return make_op(std::move(y), {a}, [a](Node& n) {
        if (a->needs_grad) a->g() += (n.grad.array() * (1.0 - n.val.array().square())).matrix();
    });
}

// ---------------------------------------------------------------------------
// Softmax family (row-wise over the last dimension)

inline Mat softmax_rows_value(const Mat& x) {
    Mat y(x.rows(), x.cols());
    for (int r = 0; r < x.rows(); ++r) {
        double m = x.row(r).maxCoeff();
        Eigen::RowVectorXd e = (x.row(r).array() - m).exp().matrix();
        y.row(r) = e / e.sum();
    }
    return y;
}

inline Var softmax_rows(const Var& a) {
    Mat y = softmax_rows_value(a->val);
    return make_op(std::move(y), {a}, [a](Node& n) {
        if (!a->needs_grad) return;
        Mat gs = n.grad.cwiseProduct(n.val);
        Eigen::VectorXd rowsum = gs.rowwise().sum();
        Mat t = n.grad;
        t.colwise() -= rowsum;
        a->g() += t.cwiseProduct(n.val);
    });
}

inline Var log_softmax_rows(const Var& a) {
    Mat y(a->val.rows(), a->val.cols());
    for (int r = 0; r < a->val.rows(); ++r) {
        double m = a->val.row(r).maxCoeff();
        Eigen::RowVectorXd sh = (a->val.row(r).array() - m).matrix();
        double lse = std::log(sh.array().exp().sum());
        y.row(r) = (sh.array() - lse).matrix();
    }
    return make_op(std::move(y), {a}, [a](Node& n) {
        if (!a->needs_grad) return;
        Mat p = n.val.array().exp().matrix();
        Eigen::VectorXd rowsum = n.grad.rowwise().sum();
        Mat corr = (p.array().colwise() * rowsum.array()).matrix();
        a->g() += n.grad - corr;
    });
}

// ---------------------------------------------------------------------------
// Reductions and losses

inline Var sum_all(const Var& a) {
    return make_op(Mat::Constant(1, 1, a->val.sum()), {a}, [a](Node& n) {
        if (a->needs_grad) a->g().array() += n.grad(0, 0);
    });
}

inline Var mean_all(const Var& a) {
    double inv = 1.0 / static_cast<double>(a->val.size());
    return make_op(Mat::Constant(1, 1, a->val.mean()), {a}, [a, inv](Node& n) {
        if (a->needs_grad) a->g().array() += inv * n.grad(0, 0);
    });
}

// 1 x d column means (mean over rows).
inline Var mean_rows(const Var& a) {
    double inv = 1.0 / static_cast<double>(a->val.rows());
    Mat y = a->val.colwise().mean();
    return make_op(std::move(y), {a}, [a, inv](Node& n) {
        if (!a->needs_grad) return;
        a->g() += (n.grad.row(0) * inv).replicate(a->val.rows(), 1);
    });
}

inline Var mse(const Var& a, const Var& b) {
    check_same_shape(a, b, "mse");
    Mat diff = a->val - b->val;
    double v = diff.squaredNorm() / static_cast<double>(diff.size());
    return make_op(Mat::Constant(1, 1, v), {a, b}, [a, b, diff](Node& n) {
        double c = 2.0 * n.grad(0, 0) / static_cast<double>(diff.size());
        if (a->needs_grad) a->g() += c * diff;
        if (b->needs_grad) b->g() -= c * diff;
    });
}

// Cross entropy of a single row of logits against an integer class.
inline Var cross_entropy_row(const Var& logits, int target) {
    if (logits->val.rows() != 1) throw ShapeError("cross_entropy_row: logits must be 1 x N");
    if (target < 0 || target >= logits->val.cols()) throw ShapeError("cross_entropy_row: bad target");
    Mat p = softmax_rows_value(logits->val);
    double loss = -std::log(std::max(p(0, target), 1e-300));
    return make_op(Mat::Constant(1, 1, loss), {logits}, [logits, p, target](Node& n) {
        if (!logits->needs_grad) return;
        Mat g = p;
        g(0, target) -= 1.0;
        logits->g() += n.grad(0, 0) * g;
    });
}

// ---------------------------------------------------------------------------
// Structure: slicing, concatenation, gathers

inline Var slice_cols(const Var& a, int c0, int len) {
    if (c0 < 0 || c0 + len > a->val.cols()) throw ShapeError("slice_cols: out of range");
    Mat y = a->val.middleCols(c0, len);
    return make_op(std::move(y), {a}, [a, c0, len](Node& n) {
        if (a->needs_grad) a->g().middleCols(c0, len) += n.grad;
    });
}

inline Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no parts");
    long rows = parts[0]->val.rows();
    long cols = 0;
    for (const auto& p : parts) {
        if (p->val.rows() != rows) throw ShapeError("concat_cols: row mismatch");
        cols += p->val.cols();
    }
    Mat y(rows, cols);
    long at = 0;
    for (const auto& p : parts) {
        y.middleCols(at, p->val.cols()) = p->val;
        at += p->val.cols();
    }
    return make_op(std::move(y), parts, [parts](Node& n) {
        long at = 0;
        for (const auto& p : parts) {
            if (p->needs_grad) p->g() += n.grad.middleCols(at, p->val.cols());
            at += p->val.cols();
        }
    });
}

// y.row(i) = table.row(ids[i]); the embedding lookup.
inline Var gather_rows(const Var& table, std::vector<int> ids) {
    Mat y(static_cast<long>(ids.size()), table->val.cols());
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= table->val.rows()) throw ShapeError("gather_rows: id out of range");
        y.row(static_cast<long>(i)) = table->val.row(ids[i]);
    }
    return make_op(std::move(y), {table}, [table, ids = std::move(ids)](Node& n) {
        if (!table->needs_grad) return;
        for (size_t i = 0; i < ids.size(); ++i) table->g().row(ids[i]) += n.grad.row(static_cast<long>(i));
    });
}

// y.row(i) = x.row(map[i]); used by the length regulator and upsampler.
inline Var map_rows(const Var& x, std::vector<int> map) {
    Mat y(static_cast<long>(map.size()), x->val.cols());
    for (size_t i = 0; i < map.size(); ++i) {
        if (map[i] < 0 || map[i] >= x->val.rows()) throw ShapeError("map_rows: index out of range");
        y.row(static_cast<long>(i)) = x->val.row(map[i]);
    }
    return make_op(std::move(y), {x}, [x, map = std::move(map)](Node& n) {
        if (!x->needs_grad) return;
        for (size_t i = 0; i < map.size(); ++i) x->g().row(map[i]) += n.grad.row(static_cast<long>(i));
    });
}

// ---------------------------------------------------------------------------
// Normalization

inline Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5) {
    const long d = x->val.cols();
    if (gamma->val.cols() != d || beta->val.cols() != d) throw ShapeError("layer_norm: affine shape mismatch");
    Eigen::VectorXd mean = x->val.rowwise().mean();
    Mat centered = x->val;
    centered.colwise() -= mean;
    Eigen::VectorXd var = centered.array().square().rowwise().mean().matrix();
    Eigen::VectorXd inv_std = (var.array() + eps).rsqrt().matrix();
    Mat xhat = (centered.array().colwise() * inv_std.array()).matrix();
    Mat y = ((xhat.array().rowwise() * gamma->val.row(0).array()).rowwise() + beta->val.row(0).array())
                .matrix();
    return make_op(std::move(y), {x, gamma, beta}, [x, gamma, beta, xhat, inv_std, d](Node& n) {
        if (gamma->needs_grad) gamma->g() += (n.grad.cwiseProduct(xhat)).colwise().sum();
        if (beta->needs_grad) beta->g() += n.grad.colwise().sum();
        if (!x->needs_grad) return;
        Mat dxhat = (n.grad.array().rowwise() * gamma->val.row(0).array()).matrix();
        Eigen::VectorXd s1 = dxhat.rowwise().sum();
        Eigen::VectorXd s2 = (dxhat.cwiseProduct(xhat)).rowwise().sum();
        Mat t = static_cast<double>(d) * dxhat;
        t.colwise() -= s1;
        t -= (xhat.array().colwise() * s2.array()).matrix();
        x->g() += (t.array().colwise() * (inv_std.array() / static_cast<double>(d))).matrix();
    });
}

// Batch normalization over the time axis (rows) per channel (column).
// Sequences arrive one at a time here, so normalizing with per-sample
// moments would erase exactly the constant per-sample offsets the emotion
// classifier must detect. Instead both modes normalize with the running
// statistics; training mode folds the current sample's moments into them
// afterwards (pre-update stats are used, keeping the op a pure function of
// its inputs and the entering state).
struct BnStats {
    Eigen::RowVectorXd mean;
    Eigen::RowVectorXd var;
};

inline Var batch_norm_time(const Var& x, const Var& gamma, const Var& beta, BnStats& running,
                           double momentum, bool training, double eps = 1e-5) {
    const long d = x->val.cols();
    if (running.mean.size() == 0) {
        running.mean = Eigen::RowVectorXd::Zero(d);
        running.var = Eigen::RowVectorXd::Ones(d);
    }
    Eigen::RowVectorXd mu = running.mean;
    Eigen::RowVectorXd v = running.var;
    if (training) {
        Eigen::RowVectorXd sample_mu = x->val.colwise().mean();
        Mat centered = x->val.rowwise() - sample_mu;
        Eigen::RowVectorXd sample_var = centered.array().square().colwise().mean().matrix();
        running.mean = (1.0 - momentum) * running.mean + momentum * sample_mu;
        running.var = (1.0 - momentum) * running.var + momentum * sample_var;
    }
    Eigen::RowVectorXd inv_std = (v.array() + eps).rsqrt().matrix();
    Mat xhat = ((x->val.rowwise() - mu).array().rowwise() * inv_std.array()).matrix();
    Mat y = ((xhat.array().rowwise() * gamma->val.row(0).array()).rowwise() + beta->val.row(0).array())
                .matrix();
    return make_op(std::move(y), {x, gamma, beta}, [x, gamma, beta, xhat, inv_std](Node& n) {
        if (gamma->needs_grad) gamma->g() += (n.grad.cwiseProduct(xhat)).colwise().sum();
        if (beta->needs_grad) beta->g() += n.grad.colwise().sum();
        if (!x->needs_grad) return;
        Mat dxhat = (n.grad.array().rowwise() * gamma->val.row(0).array()).matrix();
        x->g() += (dxhat.array().rowwise() * inv_std.array()).matrix();
    });
}

// ---------------------------------------------------------------------------
// Dropout

inline Var dropout(const Var& x, double p, Pcg32& rng, bool training) {
    if (!training || p <= 0.0) return x;
    Mat mask(x->val.rows(), x->val.cols());
    const double keep = 1.0 - p;
    for (int i = 0; i < mask.size(); ++i) mask.data()[i] = rng.uniform() < keep ? 1.0 / keep : 0.0;
    Mat y = x->val.cwiseProduct(mask);
    return make_op(std::move(y), {x}, [x, mask](Node& n) {
        if (x->needs_grad) x->g() += n.grad.cwiseProduct(mask);
    });
}

// ---------------------------------------------------------------------------
// Convolutions over the time axis (rows = time, cols = channels)

// Dense 1-D convolution. W packs kernel taps: (K * Cin) x Cout, tap k in
// rows [k*Cin, (k+1)*Cin). Zero padding keeps the length.
inline Var conv1d(const Var& x, const Var& W, const Var& b, int K) {
    const long T = x->val.rows();
    const long Cin = x->val.cols();
    if (W->val.rows() != K * Cin) throw ShapeError("conv1d: weight rows != K * Cin");
    const long Cout = W->val.cols();
    if (b->val.cols() != Cout || b->val.rows() != 1) throw ShapeError("conv1d: bad bias");
    const int pad = K / 2;

    Mat y = b->val.replicate(T, 1);
    for (int k = 0; k < K; ++k) {
        const long off = k - pad;
        const long len = T - std::abs(off);
        if (len <= 0) continue;
        const long dst0 = std::max(0l, -off);
        const long src0 = std::max(0l, off);
        y.middleRows(dst0, len).noalias() += x->val.middleRows(src0, len) * W->val.middleRows(k * Cin, Cin);
    }
    return make_op(std::move(y), {x, W, b}, [x, W, b, K, pad, T, Cin](Node& n) {
        if (b->needs_grad) b->g() += n.grad.colwise().sum();
        for (int k = 0; k < K; ++k) {
            const long off = k - pad;
            const long len = T - std::abs(off);
            if (len <= 0) continue;
            const long dst0 = std::max(0l, -off);
            const long src0 = std::max(0l, off);
            if (W->needs_grad)
                W->g().middleRows(k * Cin, Cin).noalias() +=
                    x->val.middleRows(src0, len).transpose() * n.grad.middleRows(dst0, len);
            if (x->needs_grad)
                x->g().middleRows(src0, len).noalias() +=
                    n.grad.middleRows(dst0, len) * W->val.middleRows(k * Cin, Cin).transpose();
        }
    });
}

// Depthwise 1-D convolution: w is K x C, one kernel column per channel.
inline Var depthwise_conv1d(const Var& x, const Var& w, const Var& b) {
    const long T = x->val.rows();
    const long C = x->val.cols();
    const int K = static_cast<int>(w->val.rows());
    if (w->val.cols() != C) throw ShapeError("depthwise_conv1d: channel mismatch");
    if (b->val.cols() != C || b->val.rows() != 1) throw ShapeError("depthwise_conv1d: bad bias");
    const int pad = K / 2;

    Mat y = b->val.replicate(T, 1);
    for (int k = 0; k < K; ++k) {
        const long off = k - pad;
        const long len = T - std::abs(off);
        if (len <= 0) continue;
        const long dst0 = std::max(0l, -off);
        const long src0 = std::max(0l, off);
        y.middleRows(dst0, len).array() +=
            x->val.middleRows(src0, len).array().rowwise() * w->val.row(k).array();
    }
    return make_op(std::move(y), {x, w, b}, [x, w, b, K, pad, T](Node& n) {
        if (b->needs_grad) b->g() += n.grad.colwise().sum();
        for (int k = 0; k < K; ++k) {
            const long off = k - pad;
            const long len = T - std::abs(off);
            if (len <= 0) continue;
            const long dst0 = std::max(0l, -off);
            const long src0 = std::max(0l, off);
            if (w->needs_grad)
                w->g().row(k) +=
                    (n.grad.middleRows(dst0, len).cwiseProduct(x->val.middleRows(src0, len))).colwise().sum();
            if (x->needs_grad)
                x->g().middleRows(src0, len).array() +=
                    n.grad.middleRows(dst0, len).array().rowwise() * w->val.row(k).array();
        }
    });
}

// 3x3 single-channel 2-D convolution with zero padding; k is a 3x3 Var.
inline Var conv2d_3x3(const Var& x, const Var& k) {
    if (k->val.rows() != 3 || k->val.cols() != 3) throw ShapeError("conv2d_3x3: kernel must be 3x3");
    const long H = x->val.rows();
    const long W = x->val.cols();
    Mat y = Mat::Zero(H, W);
    for (int u = 0; u < 3; ++u) {
        for (int v = 0; v < 3; ++v) {
            const long dr = u - 1, dc = v - 1;
            const long lr = H - std::abs(dr);
            const long lc = W - std::abs(dc);
            if (lr <= 0 || lc <= 0) continue;
            const long yr = std::max(0l, -dr), yc = std::max(0l, -dc);
            const long xr = std::max(0l, dr), xc = std::max(0l, dc);
            y.block(yr, yc, lr, lc) += k->val(u, v) * x->val.block(xr, xc, lr, lc);
        }
    }
    return make_op(std::move(y), {x, k}, [x, k, H, W](Node& n) {
        for (int u = 0; u < 3; ++u) {
            for (int v = 0; v < 3; ++v) {
                const long dr = u - 1, dc = v - 1;
                const long lr = H - std::abs(dr);
                const long lc = W - std::abs(dc);
                if (lr <= 0 || lc <= 0) continue;
                const long yr = std::max(0l, -dr), yc = std::max(0l, -dc);
                const long xr = std::max(0l, dr), xc = std::max(0l, dc);
                if (k->needs_grad)
                    k->g()(u, v) +=
                        (n.grad.block(yr, yc, lr, lc).cwiseProduct(x->val.block(xr, xc, lr, lc))).sum();
                if (x->needs_grad) x->g().block(xr, xc, lr, lc) += k->val(u, v) * n.grad.block(yr, yc, lr, lc);
            }
        }
    });
}

inline Var add_scalar_var(const Var& x, const Var& s) {
    if (s->val.size() != 1) throw ShapeError("add_scalar_var: s must be 1x1");
    return make_op((x->val.array() + s->val(0, 0)).matrix(), {x, s}, [x, s](Node& n) {
        if (x->needs_grad) x->g() += n.grad;
        if (s->needs_grad) s->g()(0, 0) += n.grad.sum();
    });
}

inline Var scale_var(const Var& x, const Var& s) {
    if (s->val.size() != 1) throw ShapeError("scale_var: s must be 1x1");
    return make_op(x->val * s->val(0, 0), {x, s}, [x, s](Node& n) {
        if (x->needs_grad) x->g() += s->val(0, 0) * n.grad;
        if (s->needs_grad) s->g()(0, 0) += n.grad.cwiseProduct(x->val).sum();
    });
}

}  // namespace emodub::ad
