#pragma once

// Acoustic pipeline: style-conditioned phoneme encoding, prosody adaptation,
// lip encoding, audio-visual conformer fusion with a CTC head, and the
// speaker-identity adapter that produces the mel-shaped acoustic prior.

#include <vector>

#include "emodub/aligner.hpp"
#include "emodub/autodiff.hpp"
#include "emodub/core_types.hpp"
#include "emodub/nn.hpp"

namespace emodub {

using nn::Var;

// ---------------------------------------------------------------------------
// CTC

// Negative log likelihood of the label sequence under the frame logits
// (blank = column `blank`). Standard forward-backward in log space; the
// gradient w.r.t. the logits is softmax minus the label posterior.
inline ad::Var ctc_loss(const ad::Var& logits, const std::vector<int>& targets, int blank) {
    const int F = static_cast<int>(logits->val.rows());
    const int S = static_cast<int>(logits->val.cols());
    const int P = static_cast<int>(targets.size());
    if (P < 1) throw ShapeError("ctc_loss: empty target");
    if (F < P) throw ShapeError("ctc_loss: infeasible, " + std::to_string(F) + " frames < " +
                                std::to_string(P) + " labels");
    for (int t : targets)
        if (t < 0 || t >= S || t == blank) throw ShapeError("ctc_loss: bad target symbol");

    // log-softmax per frame
    Mat y(F, S);
    for (int f = 0; f < F; ++f) {
        double m = logits->val.row(f).maxCoeff();
        Eigen::RowVectorXd sh = (logits->val.row(f).array() - m).matrix();
        double lse = std::log(sh.array().exp().sum());
        y.row(f) = (sh.array() - lse).matrix();
    }

    const int L = 2 * P + 1;
    std::vector<int> ext(L);
    for (int s = 0; s < L; ++s) ext[s] = (s % 2 == 1) ? targets[s / 2] : blank;

    const double ninf = -std::numeric_limits<double>::infinity();
    auto lse2 = [](double a, double b) {
        if (a == -std::numeric_limits<double>::infinity()) return b;
        if (b == -std::numeric_limits<double>::infinity()) return a;
        double m = std::max(a, b);
        return m + std::log(std::exp(a - m) + std::exp(b - m));
    };

    Mat alpha = Mat::Constant(F, L, ninf);
    alpha(0, 0) = y(0, ext[0]);
    if (L > 1) alpha(0, 1) = y(0, ext[1]);
    for (int f = 1; f < F; ++f) {
        for (int s = 0; s < L; ++s) {
            double a = alpha(f - 1, s);
            if (s >= 1) a = lse2(a, alpha(f - 1, s - 1));
            if (s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]) a = lse2(a, alpha(f - 1, s - 2));
            if (a == ninf) continue;
            alpha(f, s) = y(f, ext[s]) + a;
        }
    }
    double logZ = alpha(F - 1, L - 1);
    if (L > 1) logZ = lse2(logZ, alpha(F - 1, L - 2));
    if (!std::isfinite(logZ)) throw ShapeError("ctc_loss: no feasible alignment path");

    Mat beta = Mat::Constant(F, L, ninf);
    beta(F - 1, L - 1) = y(F - 1, ext[L - 1]);
    if (L > 1) beta(F - 1, L - 2) = y(F - 1, ext[L - 2]);
    for (int f = F - 2; f >= 0; --f) {
        for (int s = L - 1; s >= 0; --s) {
            double b = beta(f + 1, s);
            if (s + 1 < L) b = lse2(b, beta(f + 1, s + 1));
            if (s + 2 < L && ext[s + 2] != blank && ext[s + 2] != ext[s]) b = lse2(b, beta(f + 1, s + 2));
            if (b == ninf) continue;
            beta(f, s) = y(f, ext[s]) + b;
        }
    }

    // dL/dlogits = softmax - posterior
    Mat grad = y.array().exp().matrix();
    for (int f = 0; f < F; ++f) {
        for (int s = 0; s < L; ++s) {
            if (alpha(f, s) == ninf || beta(f, s) == ninf) continue;
            grad(f, ext[s]) -= std::exp(alpha(f, s) + beta(f, s) - y(f, ext[s]) - logZ);
        }
    }

    return ad::make_op(Mat::Constant(1, 1, -logZ), {logits}, [logits, grad](ad::Node& n) {
        if (logits->needs_grad) logits->g() += n.grad(0, 0) * grad;
    });
}

inline std::vector<int> ctc_greedy_decode(const Mat& logits, int blank) {
    std::vector<int> out;
    int prev = -1;
    for (int f = 0; f < logits.rows(); ++f) {
        int k;
        logits.row(f).maxCoeff(&k);
        if (k != prev && k != blank) out.push_back(k);
        prev = k;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Encoders

struct PhonemeEncoder {
    nn::Embedding emb;
    std::vector<nn::SalnTransformerLayer> blocks;
    int dim = 0;

    PhonemeEncoder() = default;
    PhonemeEncoder(nn::ParamStore& ps, const std::string& name, int vocab, int style_dim, int dim_,
                   int heads, int n_blocks, int ffn_mult)
        : emb(ps, name + ".emb", vocab, dim_), dim(dim_) {
        for (int i = 0; i < n_blocks; ++i)
            blocks.emplace_back(ps, name + ".block" + std::to_string(i), style_dim, dim, heads, ffn_mult);
    }

    Var fwd(const PhonemeSequence& phonemes, const Var& style) const {
        if (phonemes.length() < 1) throw ShapeError("phoneme encoder: empty sequence");
        Var x = emb.fwd(phonemes.ids);
        x = ad::add(x, ad::constant(nn::positional_encoding(phonemes.length(), dim)));
        for (const auto& b : blocks) x = b.fwd(x, style);
        return x;
    }
};

struct ProsodyOut {
    Var o_p;           // P x d_m prosody sequence
    Var pred_pitch;    // P x 1
    Var pred_energy;   // P x 1
    Var pitch_embed;   // P x d_m
    Var energy_embed;  // P x d_m
    Var pitch_loss;    // 1 x 1 (zero when no targets)
    Var energy_loss;
};

// FastSpeech2-style adaptor: scalar pitch/energy predictors on O_s; the
// scalars (targets when teacher forcing, predictions otherwise) are
// projected to d_m and added.
struct ProsodyAdaptor {
    nn::Linear pitch_h1, pitch_h2, energy_h1, energy_h2;
    nn::Linear pitch_proj, energy_proj;

    ProsodyAdaptor() = default;
    ProsodyAdaptor(nn::ParamStore& ps, const std::string& name, int dim, int hidden)
        : pitch_h1(ps, name + ".pitch_h1", dim, hidden),
          pitch_h2(ps, name + ".pitch_h2", hidden, 1),
          energy_h1(ps, name + ".energy_h1", dim, hidden),
          energy_h2(ps, name + ".energy_h2", hidden, 1),
          pitch_proj(ps, name + ".pitch_proj", 1, dim),
          energy_proj(ps, name + ".energy_proj", 1, dim) {}

    ProsodyOut fwd(const Var& o_s, const Vec* pitch_target, const Vec* energy_target) const {
        const long P = o_s->val.rows();
        ProsodyOut out;
        out.pred_pitch = pitch_h2.fwd(ad::silu(pitch_h1.fwd(o_s)));
        out.pred_energy = energy_h2.fwd(ad::silu(energy_h1.fwd(o_s)));

        Var pitch_used = out.pred_pitch;
        Var energy_used = out.pred_energy;
        if (pitch_target) {
            if (pitch_target->size() != P) throw ShapeError("prosody: pitch target length mismatch");
            Var tgt = ad::constant(Mat(*pitch_target));
            out.pitch_loss = ad::mse(out.pred_pitch, tgt);
            pitch_used = tgt;
        } else {
            out.pitch_loss = ad::constant(0.0);
        }
        if (energy_target) {
            if (energy_target->size() != P) throw ShapeError("prosody: energy target length mismatch");
            Var tgt = ad::constant(Mat(*energy_target));
            out.energy_loss = ad::mse(out.pred_energy, tgt);
            energy_used = tgt;
        } else {
            out.energy_loss = ad::constant(0.0);
        }

        out.pitch_embed = pitch_proj.fwd(pitch_used);
        out.energy_embed = energy_proj.fwd(energy_used);
        out.o_p = ad::add(ad::add(o_s, out.pitch_embed), out.energy_embed);
        return out;
    }
};

// Lip features already carry frame-position information, so the encoder
// adds no positional code of its own; `ablate_attention` keeps the map
// strictly per-frame for locality diagnostics.
struct LipEncoder {
    nn::Linear proj;
    nn::TransformerLayer layer;

    LipEncoder() = default;
    LipEncoder(nn::ParamStore& ps, const std::string& name, int lip_dim, int dim, int heads, int ffn_mult)
        : proj(ps, name + ".proj", lip_dim, dim), layer(ps, name + ".layer", dim, heads, ffn_mult) {}

    Var fwd(const Var& lips, bool ablate_attention = false) const {
        return layer.fwd(proj.fwd(lips), ablate_attention);
    }
    Var fwd(const LipFeatureSequence& lips, bool ablate_attention = false) const {
        return fwd(ad::constant(lips.feats), ablate_attention);
    }
};

// ---------------------------------------------------------------------------
// Audio-visual conformer with early fusion and a CTC head

struct FusedOut {
    Var v_f;         // F x d_m
    Var ctc_logits;  // F x (V+1), blank = V
};

struct AvConformer {
    nn::Linear fuse;
    std::vector<nn::ConformerBlock> blocks;
    nn::Linear ctc_head;

    AvConformer() = default;
    AvConformer(nn::ParamStore& ps, const std::string& name, int dim, int vocab, int heads, int kernel,
                int n_blocks, int ffn_mult)
        : fuse(ps, name + ".fuse", 2 * dim, dim), ctc_head(ps, name + ".ctc_head", dim, vocab + 1) {
        for (int i = 0; i < n_blocks; ++i)
            blocks.emplace_back(ps, name + ".block" + std::to_string(i), dim, heads, kernel, ffn_mult);
    }

    FusedOut fwd(const Var& context, const Var& expanded) const {
        if (context->val.rows() != expanded->val.rows())
            throw ShapeError("conformer fusion: sequence lengths differ");
        Var x = fuse.fwd(ad::concat_cols({context, expanded}));
        for (const auto& b : blocks) x = b.fwd(x);
        FusedOut out;
        out.v_f = x;
        out.ctc_logits = ctc_head.fwd(x);
        return out;
    }
};

// ---------------------------------------------------------------------------
// Speaker identity adapter: upsample x r, two 3x3 convolutions over the
// (time, feature) plane, utterance-level style injection, projection to mel
// bins.

struct SpeakerAdapter {
    int channels = 0;
    std::vector<Var> k1, k2;  // per-channel 3x3 kernels
    std::vector<Var> b1;      // per-channel scalar biases
    Var b2;
    nn::StyleFiLM usl;
    nn::Linear proj;

    SpeakerAdapter() = default;
    SpeakerAdapter(nn::ParamStore& ps, const std::string& name, int dim, int style_dim, int mel_bins,
                   int channels_)
        : channels(channels_) {
        for (int c = 0; c < channels; ++c) {
            k1.push_back(ps.gaussian(name + ".conv1.k" + std::to_string(c), 3, 3, 1.0 / 3.0));
            b1.push_back(ps.zeros(name + ".conv1.b" + std::to_string(c), 1, 1));
            k2.push_back(ps.gaussian(name + ".conv2.k" + std::to_string(c), 3, 3,
                                     1.0 / (3.0 * std::sqrt(static_cast<double>(channels)))));
        }
        b2 = ps.zeros(name + ".conv2.b", 1, 1);
        usl = nn::StyleFiLM(ps, name + ".usl", style_dim, dim);
        proj = nn::Linear(ps, name + ".proj", dim, mel_bins);
    }

    Var fwd(const Var& v_f, const Var& style, int r) const {
        const int F = static_cast<int>(v_f->val.rows());
        std::vector<int> up_map(static_cast<size_t>(F) * r);
        for (int i = 0; i < F * r; ++i) up_map[i] = i / r;
        Var up = ad::map_rows(v_f, up_map);

        Var merged;
        for (int c = 0; c < channels; ++c) {
            Var h = ad::silu(ad::add_scalar_var(ad::conv2d_3x3(up, k1[c]), b1[c]));
            Var m = ad::conv2d_3x3(h, k2[c]);
            merged = c == 0 ? m : ad::add(merged, m);
        }
        merged = ad::add_scalar_var(merged, b2);
        Var res = ad::add(up, merged);  // residual around the conv stack
        return proj.fwd(usl.fwd(res, style));
    }
};

}  // namespace emodub
