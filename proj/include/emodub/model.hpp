#pragma once

// The full dubbing model: speaker table, phoneme/lip encoders, prosody
// adaptor, lip-prosody cross attention, conformer fusion with CTC, the
// speaker-identity adapter producing the acoustic prior, and the flow
// decoder. Training forwards teacher-force durations and prosody targets;
// synthesis forwards take durations from monotonic alignment search.

#include <string>

#include <json.hpp>

#include "emodub/acoustic.hpp"
#include "emodub/aligner.hpp"
#include "emodub/corpus.hpp"
#include "emodub/flow.hpp"
#include "emodub/nn.hpp"

namespace emodub {

struct ModelConfig {
    int d_m = 256;  // hidden width of the acoustic stack
    int d_s = 256;  // speaker embedding width
    int phoneme_blocks = 2;
    int phoneme_heads = 2;
    int lpa_heads = 8;
    int conformer_blocks = 5;
    int conformer_heads = 4;
    int conformer_kernel = 7;
    int upsample_channels = 8;
    int ffn_mult = 4;
    int prosody_hidden = 128;
    double cl_tau = 0.1;
    bool cl_tau_in_denominator = true;  // symmetric temperature form of the contrastive loss
    FlowDecoderConfig decoder;

    nlohmann::json to_json() const {
        return {{"d_m", d_m},
                {"d_s", d_s},
                {"phoneme_blocks", phoneme_blocks},
                {"phoneme_heads", phoneme_heads},
                {"lpa_heads", lpa_heads},
                {"conformer_blocks", conformer_blocks},
                {"conformer_heads", conformer_heads},
                {"conformer_kernel", conformer_kernel},
                {"upsample_channels", upsample_channels},
                {"ffn_mult", ffn_mult},
                {"prosody_hidden", prosody_hidden},
                {"cl_tau", cl_tau},
                {"cl_tau_in_denominator", cl_tau_in_denominator},
                {"decoder",
                 {{"hidden", decoder.hidden},
                  {"blocks", decoder.blocks},
                  {"heads", decoder.heads},
                  {"kernel", decoder.kernel},
                  {"time_dim", decoder.time_dim},
                  {"ffn_mult", decoder.ffn_mult}}}};
    }

    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig c;
        c.d_m = j.at("d_m").get<int>();
        c.d_s = j.at("d_s").get<int>();
        c.phoneme_blocks = j.at("phoneme_blocks").get<int>();
        c.phoneme_heads = j.at("phoneme_heads").get<int>();
        c.lpa_heads = j.at("lpa_heads").get<int>();
        c.conformer_blocks = j.at("conformer_blocks").get<int>();
        c.conformer_heads = j.at("conformer_heads").get<int>();
        c.conformer_kernel = j.at("conformer_kernel").get<int>();
        c.upsample_channels = j.at("upsample_channels").get<int>();
        c.ffn_mult = j.at("ffn_mult").get<int>();
        c.prosody_hidden = j.at("prosody_hidden").get<int>();
        c.cl_tau = j.at("cl_tau").get<double>();
        c.cl_tau_in_denominator = j.at("cl_tau_in_denominator").get<bool>();
        const auto& d = j.at("decoder");
        c.decoder.hidden = d.at("hidden").get<int>();
        c.decoder.blocks = d.at("blocks").get<int>();
        c.decoder.heads = d.at("heads").get<int>();
        c.decoder.kernel = d.at("kernel").get<int>();
        c.decoder.time_dim = d.at("time_dim").get<int>();
        c.decoder.ffn_mult = d.at("ffn_mult").get<int>();
        return c;
    }

    uint64_t hash() const { return fnv1a64(to_json().dump()); }
};

inline nlohmann::json shape_to_json(const ShapeConfig& s) {
    return {{"vocab_size", s.vocab_size}, {"emotions", s.emotions}, {"speakers", s.speakers},
            {"mel_ratio", s.mel_ratio},   {"mel_bins", s.mel_bins}, {"lip_dim", s.lip_dim}};
}

inline ShapeConfig shape_from_json(const nlohmann::json& j) {
    ShapeConfig s;
    s.vocab_size = j.at("vocab_size").get<int>();
    s.emotions = j.at("emotions").get<int>();
    s.speakers = j.at("speakers").get<int>();
    s.mel_ratio = j.at("mel_ratio").get<int>();
    s.mel_bins = j.at("mel_bins").get<int>();
    s.lip_dim = j.at("lip_dim").get<int>();
    return s;
}

class DubberModel {
  public:
    ShapeConfig shape;
    ModelConfig cfg;
    uint64_t init_seed;
    nn::ParamStore store;

    nn::Embedding speaker_table;
    PhonemeEncoder phoneme_encoder;
    ProsodyAdaptor prosody;
    LipEncoder lip_encoder;
    nn::MultiheadAttention lpa_attention;
    AvConformer conformer;
    SpeakerAdapter speaker_adapter;
    FlowDecoder decoder;

    DubberModel(const ShapeConfig& shape_, const ModelConfig& cfg_, uint64_t seed)
        : shape(shape_),
          cfg(cfg_),
          init_seed(seed),
          store(seed),
          speaker_table(store, "speaker", shape.speakers, cfg.d_s),
          phoneme_encoder(store, "phoneme_encoder", shape.vocab_size, cfg.d_s, cfg.d_m, cfg.phoneme_heads,
                          cfg.phoneme_blocks, cfg.ffn_mult),
          prosody(store, "prosody", cfg.d_m, cfg.prosody_hidden),
          lip_encoder(store, "lip_encoder", shape.lip_dim, cfg.d_m, cfg.phoneme_heads, cfg.ffn_mult),
          lpa_attention(store, "lpa", cfg.d_m, cfg.lpa_heads),
          conformer(store, "conformer", cfg.d_m, shape.vocab_size, cfg.conformer_heads,
                    cfg.conformer_kernel, cfg.conformer_blocks, cfg.ffn_mult),
          speaker_adapter(store, "sia", cfg.d_m, cfg.d_s, shape.mel_bins, cfg.upsample_channels),
          decoder(store, "decoder", shape.mel_bins, cfg.d_s, cfg.decoder) {}

    nn::Var style_vector(int speaker_id) const {
        if (speaker_id < 0 || speaker_id >= shape.speakers)
            throw ConfigError("unknown speaker id " + std::to_string(speaker_id) + " (have " +
                              std::to_string(shape.speakers) + " speakers)");
        return ad::gather_rows(speaker_table.table, {speaker_id});
    }

    // -- training forward (teacher forced) ----------------------------------

    struct TrainForward {
        nn::Var cfm, cl, ctc, pitch, energy;  // scalar loss parts
        Mat attention;                        // head-averaged weights, F x P
        DurationVector mas_durations;         // diagnostics; no gradient flows through MAS
    };

    TrainForward forward_train(const CorpusSample& s, double sigma_min, Pcg32& rng) {
        TrainForward out;
        nn::Var style = style_vector(s.speaker);
        nn::Var o_s = phoneme_encoder.fwd(s.phonemes, style);
        ProsodyOut pros = prosody.fwd(o_s, &s.pitch, &s.energy);
        out.pitch = pros.pitch_loss;
        out.energy = pros.energy_loss;

        nn::Var lips = lip_encoder.fwd(s.lips);
        nn::MhaOut att = lpa_attention.fwd(lips, pros.o_p);
        GtAlignmentMask mask = build_gt_mask(s.gt_durations);
        out.cl = contrastive_loss(att.weights, mask.m, cfg.cl_tau, cfg.cl_tau_in_denominator);
        out.attention = att.weights->val;
        out.mas_durations = mas(AlignmentWeights{att.weights->val});

        nn::Var expanded = length_regulate(s.gt_durations, o_s);
        FusedOut fused = conformer.fwd(att.out, expanded);
        out.ctc = ctc_loss(fused.ctc_logits, s.phonemes.ids, shape.vocab_size);

        nn::Var mu = speaker_adapter.fwd(fused.v_f, style, shape.mel_ratio);
        auto field = [this](const nn::Var& phi, double t, const nn::Var& mu_v, const nn::Var& style_v) {
            return decoder.fwd(phi, t, mu_v, style_v);
        };
        out.cfm = cfm_loss(field, mu, s.mel.frames, style, sigma_min, rng);
        return out;
    }

    // -- synthesis forward (durations from MAS) ------------------------------

    struct SynthesisForward {
        Mat mu;                 // acoustic prior, (r * F) x d_a
        Mat style;              // 1 x d_s
        Mat attention;          // F x P
        DurationVector durations;
        Mat ctc_logits;         // F x (V+1), diagnostics
    };

    SynthesisForward forward_synthesis(const PhonemeSequence& phonemes, const Mat& lip_feats,
                                       int speaker_id) {
        SynthesisForward out;
        nn::Var style = style_vector(speaker_id);
        nn::Var o_s = phoneme_encoder.fwd(phonemes, style);
        ProsodyOut pros = prosody.fwd(o_s, nullptr, nullptr);  // predicted prosody at inference

        nn::Var lips = lip_encoder.fwd(ad::constant(lip_feats));
        nn::MhaOut att = lpa_attention.fwd(lips, pros.o_p);
        out.attention = att.weights->val;
        out.durations = mas(AlignmentWeights{out.attention});

        nn::Var expanded = length_regulate(out.durations, o_s);
        FusedOut fused = conformer.fwd(att.out, expanded);
        out.ctc_logits = fused.ctc_logits->val;

        nn::Var mu = speaker_adapter.fwd(fused.v_f, style, shape.mel_ratio);
        out.mu = mu->val;
        out.style = style->val;
        return out;
    }
};

}  // namespace emodub
