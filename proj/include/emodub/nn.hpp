#pragma once

// Parameter registry, Adam, and the neural building blocks shared by the
// acoustic pipeline, the flow decoder, and the emotion classifier.

#include <map>
#include <string>
#include <vector>

#include "emodub/autodiff.hpp"

namespace emodub::nn {

using ad::Var;
using Mat = Eigen::MatrixXd;

// Named parameters plus non-learned buffers (batch-norm running stats).
// Modules register parameters at construction time in declaration order, so
// a fixed seed yields a bit-identical initialization.
class ParamStore {
  public:
    explicit ParamStore(uint64_t seed) : rng_(seed, fnv1a64("param_init")) {}

    Var add(const std::string& name, Mat init) {
        if (params_.count(name)) throw ConfigError("duplicate parameter '" + name + "'");
        Var v = ad::leaf(std::move(init));
        params_.emplace(name, v);
        return v;
    }

    Var xavier(const std::string& name, int rows, int cols) {
        double limit = std::sqrt(6.0 / (rows + cols));
        Mat m(rows, cols);
        for (int i = 0; i < m.size(); ++i) m.data()[i] = rng_.uniform(-limit, limit);
        return add(name, std::move(m));
    }

    Var gaussian(const std::string& name, int rows, int cols, double sigma) {
        Mat m(rows, cols);
        for (int i = 0; i < m.size(); ++i) m.data()[i] = sigma * rng_.gaussian();
        return add(name, std::move(m));
    }

    Var zeros(const std::string& name, int rows, int cols) { return add(name, Mat::Zero(rows, cols)); }
    Var ones(const std::string& name, int rows, int cols) { return add(name, Mat::Ones(rows, cols)); }

    ad::BnStats& stats(const std::string& name) { return bn_stats_[name]; }

    void zero_grad() {
        for (auto& [name, p] : params_) p->grad = Mat();
    }

    std::map<std::string, Var>& params() { return params_; }
    const std::map<std::string, Var>& params() const { return params_; }
    std::map<std::string, ad::BnStats>& bn_stats() { return bn_stats_; }
    const std::map<std::string, ad::BnStats>& bn_stats() const { return bn_stats_; }

    size_t count() const { return params_.size(); }

  private:
    std::map<std::string, Var> params_;
    std::map<std::string, ad::BnStats> bn_stats_;
    Pcg32 rng_;
};

inline double global_grad_norm(const ParamStore& store) {
    double sq = 0.0;
    for (const auto& [name, p] : store.params())
        if (p->has_grad()) sq += p->grad.squaredNorm();
    return std::sqrt(sq);
}

inline void clip_gradients(ParamStore& store, double max_norm) {
    if (max_norm <= 0) return;
    double norm = global_grad_norm(store);
    if (norm <= max_norm || norm == 0.0) return;
    double s = max_norm / norm;
    for (auto& [name, p] : store.params())
        if (p->has_grad()) p->grad *= s;
}

class Adam {
  public:
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int warmup_steps = 500;

    void step(ParamStore& store) {
        ++t_;
        double sched = warmup_steps > 0 ? std::min(1.0, static_cast<double>(t_) / warmup_steps) : 1.0;
        double lr_t = lr * sched;
        double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
        double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
        for (auto& [name, p] : store.params()) {
            if (!p->has_grad()) continue;
            auto& mv = moments_[name];
            if (mv.first.size() == 0) {
                mv.first = Mat::Zero(p->val.rows(), p->val.cols());
                mv.second = Mat::Zero(p->val.rows(), p->val.cols());
            }
            mv.first = beta1 * mv.first + (1.0 - beta1) * p->grad;
            mv.second = beta2 * mv.second + (1.0 - beta2) * p->grad.cwiseProduct(p->grad);
            Mat mhat = mv.first / bc1;
            Mat vhat = mv.second / bc2;
            p->val -= lr_t * (mhat.array() / (vhat.array().sqrt() + eps)).matrix();
        }
    }

    uint64_t steps_taken() const { return t_; }
    void set_steps_taken(uint64_t t) { t_ = t; }
    std::map<std::string, std::pair<Mat, Mat>>& moments() { return moments_; }

  private:
    uint64_t t_ = 0;
    std::map<std::string, std::pair<Mat, Mat>> moments_;
};

// ---------------------------------------------------------------------------
// Modules

struct Linear {
    Var W, b;

    Linear() = default;
    Linear(ParamStore& ps, const std::string& name, int in, int out) {
        W = ps.xavier(name + ".W", in, out);
        b = ps.zeros(name + ".b", 1, out);
    }

    Var fwd(const Var& x) const { return ad::add_rowvec(ad::matmul(x, W), b); }
};

struct Embedding {
    Var table;

    Embedding() = default;
    Embedding(ParamStore& ps, const std::string& name, int count, int dim) {
        table = ps.gaussian(name + ".table", count, dim, 1.0 / std::sqrt(static_cast<double>(dim)));
    }

    Var fwd(const std::vector<int>& ids) const { return ad::gather_rows(table, ids); }
};

struct LayerNorm {
    Var gamma, beta;

    LayerNorm() = default;
    LayerNorm(ParamStore& ps, const std::string& name, int dim) {
        gamma = ps.ones(name + ".gamma", 1, dim);
        beta = ps.zeros(name + ".beta", 1, dim);
    }

    Var fwd(const Var& x) const { return ad::layer_norm(x, gamma, beta); }
};

// Affine modulation from a style vector: x * (1 + scale(s)) + shift(s).
// Projection biases start at zero, so a zero style vector is a no-op.
struct StyleFiLM {
    Linear to_scale, to_shift;

    StyleFiLM() = default;
    StyleFiLM(ParamStore& ps, const std::string& name, int style_dim, int dim)
        : to_scale(ps, name + ".scale", style_dim, dim), to_shift(ps, name + ".shift", style_dim, dim) {}

    Var fwd(const Var& x, const Var& style) const {
        Var sc = ad::add_scalar(to_scale.fwd(style), 1.0);
        return ad::add_rowvec(ad::rowscale(x, sc), to_shift.fwd(style));
    }
};

// Style-adaptive layer norm: normalize, then style affine.
struct Saln {
    LayerNorm ln;
    StyleFiLM film;

    Saln() = default;
    Saln(ParamStore& ps, const std::string& name, int style_dim, int dim)
        : ln(ps, name + ".ln", dim), film(ps, name + ".film", style_dim, dim) {}

    Var fwd(const Var& x, const Var& style) const { return film.fwd(ln.fwd(x), style); }
};

struct MhaOut {
    Var out;
    Var weights;  // head-averaged attention matrix, Tq x Tk
};

struct MultiheadAttention {
    int dim = 0;
    int heads = 1;
    Linear q, k, v, o;

    MultiheadAttention() = default;
    MultiheadAttention(ParamStore& ps, const std::string& name, int dim_, int heads_)
        : dim(dim_), heads(heads_) {
        if (heads < 1 || dim % heads != 0)
            throw ShapeError("attention: dim " + std::to_string(dim) + " not divisible by heads " +
                             std::to_string(heads));
        q = Linear(ps, name + ".q", dim, dim);
        k = Linear(ps, name + ".k", dim, dim);
        v = Linear(ps, name + ".v", dim, dim);
        o = Linear(ps, name + ".o", dim, dim);
    }

    MhaOut fwd(const Var& query_in, const Var& kv_in) const {
        Var Q = q.fwd(query_in);
        Var K = k.fwd(kv_in);
        Var V = v.fwd(kv_in);
        const int dh = dim / heads;
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
        std::vector<Var> ctx;
        ctx.reserve(heads);
        Var wsum;
        for (int h = 0; h < heads; ++h) {
            Var Qh = ad::slice_cols(Q, h * dh, dh);
            Var Kh = ad::slice_cols(K, h * dh, dh);
            Var Vh = ad::slice_cols(V, h * dh, dh);
            Var A = ad::softmax_rows(ad::scale(ad::matmul_nt(Qh, Kh), inv_sqrt));
            wsum = h == 0 ? A : ad::add(wsum, A);
            ctx.push_back(ad::matmul(A, Vh));
        }
        MhaOut out;
        out.weights = heads == 1 ? wsum : ad::scale(wsum, 1.0 / heads);
        out.out = o.fwd(ad::concat_cols(ctx));
        return out;
    }
};

struct Ffn {
    Linear in, out;

    Ffn() = default;
    Ffn(ParamStore& ps, const std::string& name, int dim, int hidden)
        : in(ps, name + ".in", dim, hidden), out(ps, name + ".out", hidden, dim) {}

    Var fwd(const Var& x) const { return out.fwd(ad::silu(in.fwd(x))); }
};

// Pre-norm transformer encoder layer. `ablate_attention` turns the layer
// into a purely per-frame map for locality diagnostics.
struct TransformerLayer {
    LayerNorm ln1, ln2;
    MultiheadAttention mha;
    Ffn ffn;

    TransformerLayer() = default;
    TransformerLayer(ParamStore& ps, const std::string& name, int dim, int heads, int ffn_mult)
        : ln1(ps, name + ".ln1", dim),
          ln2(ps, name + ".ln2", dim),
          mha(ps, name + ".mha", dim, heads),
          ffn(ps, name + ".ffn", dim, dim * ffn_mult) {}

    Var fwd(const Var& x_in, bool ablate_attention = false) const {
        Var x = x_in;
        if (!ablate_attention) {
            Var h = ln1.fwd(x);
            x = ad::add(x, mha.fwd(h, h).out);
        }
        return ad::add(x, ffn.fwd(ln2.fwd(x)));
    }
};

// Style-conditioned variant: both norms are style-modulated.
struct SalnTransformerLayer {
    Saln norm1, norm2;
    MultiheadAttention mha;
    Ffn ffn;

    SalnTransformerLayer() = default;
    SalnTransformerLayer(ParamStore& ps, const std::string& name, int style_dim, int dim, int heads,
                         int ffn_mult)
        : norm1(ps, name + ".norm1", style_dim, dim),
          norm2(ps, name + ".norm2", style_dim, dim),
          mha(ps, name + ".mha", dim, heads),
          ffn(ps, name + ".ffn", dim, dim * ffn_mult) {}

    Var fwd(const Var& x_in, const Var& style) const {
        Var h = norm1.fwd(x_in, style);
        Var x = ad::add(x_in, mha.fwd(h, h).out);
        return ad::add(x, ffn.fwd(norm2.fwd(x, style)));
    }
};

// Conformer block: half-step FFN, self-attention, depthwise-conv module,
// half-step FFN, final norm; residuals throughout, no downsampling.
struct ConformerBlock {
    LayerNorm ln_ff1, ln_attn, ln_conv, ln_dw, ln_ff2, ln_final;
    Ffn ff1, ff2;
    MultiheadAttention mha;
    Linear conv_in, conv_out;
    Var dw_w, dw_b;

    ConformerBlock() = default;
    ConformerBlock(ParamStore& ps, const std::string& name, int dim, int heads, int kernel, int ffn_mult)
        : ln_ff1(ps, name + ".ln_ff1", dim),
          ln_attn(ps, name + ".ln_attn", dim),
          ln_conv(ps, name + ".ln_conv", dim),
          ln_dw(ps, name + ".ln_dw", dim),
          ln_ff2(ps, name + ".ln_ff2", dim),
          ln_final(ps, name + ".ln_final", dim),
          ff1(ps, name + ".ff1", dim, dim * ffn_mult),
          ff2(ps, name + ".ff2", dim, dim * ffn_mult),
          mha(ps, name + ".mha", dim, heads),
          conv_in(ps, name + ".conv_in", dim, 2 * dim),
          conv_out(ps, name + ".conv_out", dim, dim) {
        dw_w = ps.xavier(name + ".dw.w", kernel, dim);
        dw_b = ps.zeros(name + ".dw.b", 1, dim);
    }

    Var fwd(const Var& x_in) const {
        const int dim = static_cast<int>(ln_ff1.gamma->val.cols());
        Var x = ad::add(x_in, ad::scale(ff1.fwd(ln_ff1.fwd(x_in)), 0.5));
        Var h = ln_attn.fwd(x);
        x = ad::add(x, mha.fwd(h, h).out);
        Var c = conv_in.fwd(ln_conv.fwd(x));
        Var gate = ad::sigmoid(ad::slice_cols(c, dim, dim));
        c = ad::hadamard(ad::slice_cols(c, 0, dim), gate);
        c = ad::depthwise_conv1d(c, dw_w, dw_b);
        c = conv_out.fwd(ad::silu(ln_dw.fwd(c)));
        x = ad::add(x, c);
        x = ad::add(x, ad::scale(ff2.fwd(ln_ff2.fwd(x)), 0.5));
        return ln_final.fwd(x);
    }
};

// ---------------------------------------------------------------------------
// Positional / time features (constants, no gradient)

inline Mat positional_encoding(int length, int dim) {
    Mat e(length, dim);
    for (int pos = 0; pos < length; ++pos) {
        for (int i = 0; i < dim; i += 2) {
            double freq = std::pow(10000.0, -static_cast<double>(i) / dim);
            e(pos, i) = std::sin(pos * freq);
            if (i + 1 < dim) e(pos, i + 1) = std::cos(pos * freq);
        }
    }
    return e;
}

// Sinusoidal features of a scalar time t in [0, 1].
inline Mat time_features(double t, int dim) {
    Mat e(1, dim);
    const double pos = 1000.0 * t;
    for (int i = 0; i < dim; i += 2) {
        double freq = std::pow(10000.0, -static_cast<double>(i) / dim);
        e(0, i) = std::sin(pos * freq);
        if (i + 1 < dim) e(0, i + 1) = std::cos(pos * freq);
    }
    return e;
}

}  // namespace emodub::nn
