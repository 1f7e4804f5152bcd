#pragma once

// Optimal-transport conditional flow matching: the linear interpolation
// path, the regression loss against its constant target field, the vector
// field decoder, and fixed-step ODE sampling with an optional guidance hook.

#include <functional>
#include <string>

#include <json.hpp>

#include "emodub/autodiff.hpp"
#include "emodub/core_types.hpp"
#include "emodub/nn.hpp"

namespace emodub {

using nn::Var;

struct FlowConfig {
    double sigma_min = 1e-4;
    int ode_steps = 10;
    enum class Solver { Euler, Midpoint } solver = Solver::Euler;

    void validate() const {
        if (sigma_min <= 0) throw ConfigError("flow: sigma_min must be > 0");
        if (ode_steps < 1) throw ConfigError("flow: ode_steps must be >= 1");
    }

    std::string solver_name() const { return solver == Solver::Euler ? "euler" : "midpoint"; }

    nlohmann::json to_json() const {
        return {{"sigma_min", sigma_min}, {"ode_steps", ode_steps}, {"solver", solver_name()}};
    }

    static FlowConfig from_json(const nlohmann::json& j) {
        FlowConfig c;
        c.sigma_min = j.at("sigma_min").get<double>();
        c.ode_steps = j.at("ode_steps").get<int>();
        std::string s = j.at("solver").get<std::string>();
        if (s == "euler")
            c.solver = Solver::Euler;
        else if (s == "midpoint")
            c.solver = Solver::Midpoint;
        else
            throw ConfigError("flow: unknown solver '" + s + "'");
        return c;
    }
};

// phi_t = (1 - (1 - sigma_min) t) x0 + t M;  u_t = M - (1 - sigma_min) x0.
struct PathSample {
    Mat phi;
    Mat u;
};

inline PathSample sample_path(const Mat& x0, const Mat& M, double t, double sigma_min) {
    if (x0.rows() != M.rows() || x0.cols() != M.cols())
        throw ShapeError("sample_path: x0 and M shapes differ");
    if (t < 0.0 || t > 1.0) throw ConfigError("sample_path: t must lie in [0, 1]");
    PathSample p;
    p.phi = (1.0 - (1.0 - sigma_min) * t) * x0 + t * M;
    p.u = M - (1.0 - sigma_min) * x0;
    return p;
}

// One-sample CFM objective: draw t ~ U(0,1) and x0 ~ N(0,I), regress the
// predicted field on the target field in mean square. `field` is any
// callable (phi: Var, t, mu: Var, style: Var) -> Var so test stubs can stand
// in for the decoder.
template <class FieldFn>
ad::Var cfm_loss(FieldFn&& field, const Var& mu, const Mat& M, const Var& style, double sigma_min,
                 Pcg32& rng) {
    if (mu->val.rows() != M.rows() || mu->val.cols() != M.cols())
        throw ShapeError("cfm_loss: mu and M shapes differ");
    const double t = rng.uniform();
    Mat x0(M.rows(), M.cols());
    for (int i = 0; i < x0.size(); ++i) x0.data()[i] = rng.gaussian();
    PathSample p = sample_path(x0, M, t, sigma_min);
    Var v = field(ad::constant(std::move(p.phi)), t, mu, style);
    if (!v->val.allFinite()) throw DivergenceError("cfm_loss: non-finite field prediction", -1);
    return ad::mse(v, ad::constant(std::move(p.u)));
}

// ---------------------------------------------------------------------------
// Vector field decoder: conv/attention blocks over time with the prior
// concatenated at the input, a sinusoidal time embedding added into the
// hidden states, and per-block style affine modulation.

struct FlowDecoderConfig {
    int hidden = 256;
    int blocks = 2;
    int heads = 2;
    int kernel = 5;
    int time_dim = 64;
    int ffn_mult = 2;
};

struct FlowDecoder {
    struct Block {
        nn::Linear time_proj;
        nn::LayerNorm ln_attn, ln_conv, ln_ffn;
        nn::MultiheadAttention mha;
        Var dw_w, dw_b;
        nn::Linear pw;
        nn::StyleFiLM film;
        nn::Ffn ffn;

        Block(nn::ParamStore& ps, const std::string& name, const FlowDecoderConfig& cfg, int style_dim)
            : time_proj(ps, name + ".time_proj", cfg.hidden, cfg.hidden),
              ln_attn(ps, name + ".ln_attn", cfg.hidden),
              ln_conv(ps, name + ".ln_conv", cfg.hidden),
              ln_ffn(ps, name + ".ln_ffn", cfg.hidden),
              mha(ps, name + ".mha", cfg.hidden, cfg.heads),
              pw(ps, name + ".pw", cfg.hidden, cfg.hidden),
              film(ps, name + ".film", style_dim, cfg.hidden),
              ffn(ps, name + ".ffn", cfg.hidden, cfg.hidden * cfg.ffn_mult) {
            dw_w = ps.xavier(name + ".dw.w", cfg.kernel, cfg.hidden);
            dw_b = ps.zeros(name + ".dw.b", 1, cfg.hidden);
        }
    };

    FlowDecoderConfig cfg;
    nn::Linear in_proj, time_in, time_out, out_proj;
    nn::LayerNorm ln_out;
    std::vector<Block> blocks;

    FlowDecoder() = default;
    FlowDecoder(nn::ParamStore& ps, const std::string& name, int mel_bins, int style_dim,
                const FlowDecoderConfig& cfg_)
        : cfg(cfg_),
          in_proj(ps, name + ".in_proj", 2 * mel_bins, cfg_.hidden),
          time_in(ps, name + ".time_in", cfg_.time_dim, cfg_.hidden),
          time_out(ps, name + ".time_out", cfg_.hidden, cfg_.hidden),
          out_proj(ps, name + ".out_proj", cfg_.hidden, mel_bins),
          ln_out(ps, name + ".ln_out", cfg_.hidden) {
        for (int i = 0; i < cfg.blocks; ++i)
            blocks.emplace_back(ps, name + ".block" + std::to_string(i), cfg, style_dim);
    }

    Var fwd(const Var& x, double t, const Var& mu, const Var& style) const {
        if (x->val.rows() != mu->val.rows() || x->val.cols() != mu->val.cols())
            throw ShapeError("flow decoder: x and mu shapes differ");
        Var h = in_proj.fwd(ad::concat_cols({x, mu}));
        Var temb = time_out.fwd(ad::silu(time_in.fwd(ad::constant(nn::time_features(t, cfg.time_dim)))));
        h = ad::add_rowvec(h, temb);
        for (const auto& b : blocks) {
            h = ad::add_rowvec(h, b.time_proj.fwd(temb));
            Var a = b.ln_attn.fwd(h);
            h = ad::add(h, b.mha.fwd(a, a).out);
            Var c = ad::depthwise_conv1d(b.ln_conv.fwd(h), b.dw_w, b.dw_b);
            h = ad::add(h, b.pw.fwd(ad::silu(c)));
            h = b.film.fwd(h, style);
            h = ad::add(h, b.ffn.fwd(b.ln_ffn.fwd(h)));
        }
        return out_proj.fwd(ln_out.fwd(h));
    }
};

// ---------------------------------------------------------------------------
// ODE sampling

// Guidance hook: maps (v, x, t) to the field actually integrated.
using GuidanceHook = std::function<Mat(const Mat& v, const Mat& x, double t)>;
using FieldEval = std::function<Mat(const Mat& x, double t)>;

inline MelSpectrogram ode_sample(const FieldEval& field, long rows, long cols, const FlowConfig& cfg,
                                 const GuidanceHook& hook, uint64_t seed) {
    cfg.validate();
    Pcg32 rng = stream_rng(seed, "ode_x0");
    Mat x(rows, cols);
    for (int i = 0; i < x.size(); ++i) x.data()[i] = rng.gaussian();

    const double dt = 1.0 / cfg.ode_steps;
    for (int k = 0; k < cfg.ode_steps; ++k) {
        const double t = k * dt;
        Mat v = field(x, t);
        if (hook) v = hook(v, x, t);
        if (cfg.solver == FlowConfig::Solver::Midpoint) {
            Mat xm = x + 0.5 * dt * v;
            const double tm = t + 0.5 * dt;
            Mat vm = field(xm, tm);
            if (hook) vm = hook(vm, xm, tm);
            x += dt * vm;
        } else {
            x += dt * v;
        }
        if (!x.allFinite())
            throw DivergenceError("ode_sample: non-finite state after step " + std::to_string(k), k);
    }
    return MelSpectrogram{std::move(x)};
}

// Decoder-backed sampling with frozen parameters.
inline MelSpectrogram ode_sample(const FlowDecoder& decoder, const Mat& mu, const Mat& style,
                                 const FlowConfig& cfg, const GuidanceHook& hook, uint64_t seed) {
    Var mu_c = ad::constant(mu);
    Var style_c = ad::constant(style);
    FieldEval field = [&decoder, &mu_c, &style_c](const Mat& x, double t) {
        return decoder.fwd(ad::constant(x), t, mu_c, style_c)->val;
    };
    return ode_sample(field, mu.rows(), mu.cols(), cfg, hook, seed);
}

}  // namespace emodub
