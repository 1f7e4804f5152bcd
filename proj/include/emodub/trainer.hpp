#pragma once

// Joint training over all differentiable modules, checkpointing with full
// resume state (optimizer moments and rng), synthesis orchestration, and
// quantitative evaluation.

#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "emodub/checkpoint.hpp"
#include "emodub/guidance.hpp"
#include "emodub/metrics.hpp"
#include "emodub/model.hpp"

namespace emodub {

struct TrainConfig {
    int steps = 2000;
    int batch = 4;
    double lr = 1e-4;
    int warmup = 500;
    double grad_clip = 5.0;
    double lambda_cl = 1.0;
    double lambda_ctc = 1.0;
    double lambda_pitch = 1.0;
    double lambda_energy = 1.0;
    double sigma_min = 1e-4;
    uint64_t seed = 0;
    int eval_every = 100;
    int checkpoint_every = 0;  // 0: only at the end
    double holdout_fraction = 0.1;

    void validate() const {
        if (steps < 1) throw ConfigError("train: steps must be >= 1");
        if (batch < 1) throw ConfigError("train: batch must be >= 1");
        if (lambda_cl < 0 || lambda_ctc < 0 || lambda_pitch < 0 || lambda_energy < 0)
            throw ConfigError("train: loss weights must be >= 0");
        if (holdout_fraction < 0 || holdout_fraction >= 1)
            throw ConfigError("train: holdout_fraction must lie in [0, 1)");
    }

    nlohmann::json to_json() const {
        return {{"steps", steps},
                {"batch", batch},
                {"lr", lr},
                {"warmup", warmup},
                {"grad_clip", grad_clip},
                {"lambda_cl", lambda_cl},
                {"lambda_ctc", lambda_ctc},
                {"lambda_pitch", lambda_pitch},
                {"lambda_energy", lambda_energy},
                {"sigma_min", sigma_min},
                {"seed", seed},
                {"eval_every", eval_every},
                {"checkpoint_every", checkpoint_every},
                {"holdout_fraction", holdout_fraction}};
    }

    static TrainConfig from_json(const nlohmann::json& j) {
        TrainConfig c;
        c.steps = j.at("steps").get<int>();
        c.batch = j.at("batch").get<int>();
        c.lr = j.at("lr").get<double>();
        c.warmup = j.at("warmup").get<int>();
        c.grad_clip = j.at("grad_clip").get<double>();
        c.lambda_cl = j.at("lambda_cl").get<double>();
        c.lambda_ctc = j.at("lambda_ctc").get<double>();
        c.lambda_pitch = j.at("lambda_pitch").get<double>();
        c.lambda_energy = j.at("lambda_energy").get<double>();
        c.sigma_min = j.at("sigma_min").get<double>();
        c.seed = j.at("seed").get<uint64_t>();
        c.eval_every = j.at("eval_every").get<int>();
        c.checkpoint_every = j.at("checkpoint_every").get<int>();
        c.holdout_fraction = j.at("holdout_fraction").get<double>();
        return c;
    }
};

// First (1 - holdout) of the corpus trains, the tail is held out.
inline int train_split_size(int corpus_size, double holdout_fraction) {
    int holdout = static_cast<int>(corpus_size * holdout_fraction);
    return std::max(1, corpus_size - holdout);
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainResult {
    std::vector<std::string> log_lines;  // JSONL metric records
    int final_step = 0;
    bool stopped_early = false;
};

// `eval_cb`, when set, runs at every eval cadence; returning true stops
// training early (used by overfit-until-exact runs).
inline TrainResult train(DubberModel& model, nn::Adam& adam, Pcg32& rng, const Corpus& corpus,
                         const TrainConfig& cfg, int start_step = 0,
                         const std::function<bool(int)>& eval_cb = nullptr,
                         const std::function<void(int)>& checkpoint_cb = nullptr) {
    cfg.validate();
    adam.lr = cfg.lr;
    adam.warmup_steps = cfg.warmup;
    const int train_n = train_split_size(corpus.size(), cfg.holdout_fraction);

    TrainResult result;
    double w_total = 0, w_cfm = 0, w_cl = 0, w_ctc = 0, w_pitch = 0, w_energy = 0;
    int w_count = 0, w_mas_exact = 0, w_mas_n = 0;
    double w_mas_mae = 0;
    std::string last_finite_line = "(none)";

    for (int step = start_step; step < cfg.steps; ++step) {
        model.store.zero_grad();
        double b_total = 0, b_cfm = 0, b_cl = 0, b_ctc = 0, b_pitch = 0, b_energy = 0;
        for (int b = 0; b < cfg.batch; ++b) {
            int idx = static_cast<int>(rng.bounded(static_cast<uint32_t>(train_n)));
            const CorpusSample& s = corpus.samples[idx];
            DubberModel::TrainForward fwd = model.forward_train(s, cfg.sigma_min, rng);

            nn::Var total = fwd.cfm;
            if (cfg.lambda_cl != 0.0) total = ad::add(total, ad::scale(fwd.cl, cfg.lambda_cl));
            if (cfg.lambda_ctc != 0.0) total = ad::add(total, ad::scale(fwd.ctc, cfg.lambda_ctc));
            if (cfg.lambda_pitch != 0.0) total = ad::add(total, ad::scale(fwd.pitch, cfg.lambda_pitch));
            if (cfg.lambda_energy != 0.0) total = ad::add(total, ad::scale(fwd.energy, cfg.lambda_energy));
            total = ad::scale(total, 1.0 / cfg.batch);
            ad::backward(total);

            b_total += total->scalar() * cfg.batch;
            b_cfm += fwd.cfm->scalar();
            b_cl += fwd.cl->scalar();
            b_ctc += fwd.ctc->scalar();
            b_pitch += fwd.pitch->scalar();
            b_energy += fwd.energy->scalar();

            ++w_mas_n;
            if (fwd.mas_durations.d == s.gt_durations.d) ++w_mas_exact;
            double mae = 0;
            for (int p = 0; p < s.gt_durations.size(); ++p)
                mae += std::abs(fwd.mas_durations.d[p] - s.gt_durations.d[p]);
            w_mas_mae += mae / s.gt_durations.size();
        }
        if (!std::isfinite(b_total))
            throw DivergenceError("train: non-finite loss at step " + std::to_string(step) +
                                      "; last finite record: " + last_finite_line,
                                  step);
        nn::clip_gradients(model.store, cfg.grad_clip);
        adam.step(model.store);

        w_total += b_total / cfg.batch;
        w_cfm += b_cfm / cfg.batch;
        w_cl += b_cl / cfg.batch;
        w_ctc += b_ctc / cfg.batch;
        w_pitch += b_pitch / cfg.batch;
        w_energy += b_energy / cfg.batch;
        ++w_count;

        const bool at_cadence = (step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps;
        if (at_cadence) {
            nlohmann::json rec = {{"step", step + 1},
                                  {"total", w_total / w_count},
                                  {"cfm", w_cfm / w_count},
                                  {"cl", w_cl / w_count},
                                  {"ctc", w_ctc / w_count},
                                  {"pitch", w_pitch / w_count},
                                  {"energy", w_energy / w_count},
                                  {"mas_exact", static_cast<double>(w_mas_exact) / w_mas_n},
                                  {"mas_dur_mae", w_mas_mae / w_mas_n}};
            last_finite_line = rec.dump();
            result.log_lines.push_back(last_finite_line);
            w_total = w_cfm = w_cl = w_ctc = w_pitch = w_energy = w_mas_mae = 0;
            w_count = w_mas_exact = w_mas_n = 0;
        }
        result.final_step = step + 1;
        if (checkpoint_cb && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0)
            checkpoint_cb(step + 1);
        if (at_cadence && eval_cb && eval_cb(step + 1)) {
            result.stopped_early = true;
            break;
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Pipeline checkpoint: arrays.bin + manifest.json in a directory.

inline void save_pipeline(DubberModel& model, nn::Adam& adam, const Pcg32& rng, int step,
                          const TrainConfig& train_cfg, uint64_t corpus_hash, const std::string& dir) {
    std::filesystem::create_directories(dir);
    ArrayFile file;
    nlohmann::json meta = {{"kind", "pipeline"}, {"format_version", kCheckpointFormatVersion}};
    file.meta = meta.dump();
    params_to_arrays(model.store, file, "");
    adam_to_arrays(adam, file, "adam.");
    file.save(dir + "/arrays.bin");

    nlohmann::json manifest = {{"kind", "pipeline"},
                               {"format_version", kCheckpointFormatVersion},
                               {"step", step},
                               {"init_seed", model.init_seed},
                               {"shape_config", shape_to_json(model.shape)},
                               {"model_config", model.cfg.to_json()},
                               {"model_config_hash", hex64(model.cfg.hash())},
                               {"train_config", train_cfg.to_json()},
                               {"corpus_hash", hex64(corpus_hash)},
                               {"adam_steps", adam.steps_taken()},
                               {"rng_state", hex64(rng.state())},
                               {"rng_inc", hex64(rng.inc())},
                               {"modules", shapes_manifest(model.store)}};
    write_manifest(dir, manifest);
}

struct LoadedPipeline {
    std::unique_ptr<DubberModel> model;
    nn::Adam adam;
    Pcg32 rng;
    int step = 0;
    TrainConfig train_cfg;
    uint64_t corpus_hash = 0;
};

inline LoadedPipeline load_pipeline(const std::string& dir) {
    nlohmann::json manifest = read_manifest(dir);
    if (manifest.at("kind").get<std::string>() != "pipeline")
        throw IoError("'" + dir + "' is not a pipeline checkpoint");
    if (manifest.at("format_version").get<int>() != kCheckpointFormatVersion)
        throw IoError("checkpoint '" + dir + "': unsupported format version " +
                      std::to_string(manifest.at("format_version").get<int>()));

    LoadedPipeline lp;
    ShapeConfig shape = shape_from_json(manifest.at("shape_config"));
    ModelConfig mcfg = ModelConfig::from_json(manifest.at("model_config"));
    lp.model = std::make_unique<DubberModel>(shape, mcfg, manifest.at("init_seed").get<uint64_t>());
    lp.train_cfg = TrainConfig::from_json(manifest.at("train_config"));
    lp.step = manifest.at("step").get<int>();
    lp.corpus_hash = parse_hex64(manifest.at("corpus_hash").get<std::string>());

    ArrayFile file = ArrayFile::load(dir + "/arrays.bin");
    arrays_to_params(file, lp.model->store, "");
    arrays_to_adam(file, lp.adam, "adam.");
    lp.adam.set_steps_taken(manifest.at("adam_steps").get<uint64_t>());
    lp.adam.lr = lp.train_cfg.lr;
    lp.adam.warmup_steps = lp.train_cfg.warmup;
    lp.rng.restore(parse_hex64(manifest.at("rng_state").get<std::string>()),
                   parse_hex64(manifest.at("rng_inc").get<std::string>()));
    return lp;
}

// ---------------------------------------------------------------------------
// Synthesis

struct SynthesisRequest {
    PhonemeSequence phonemes;
    Mat lips;  // F x d_lip
    int speaker = 0;
    const EmotionInstruction* instruction = nullptr;
    double gamma = 15.0;
    FlowConfig flow;
    uint64_t seed = 0;
};

struct SynthesisResult {
    MelSpectrogram mel;
    MelSpectrogram unguided_mel;  // rendered when a baseline was requested or guidance was active
    bool has_unguided = false;
    bool guided = false;
    DurationVector durations;
    Mat attention;
    Mat mu;
    Eigen::VectorXd probs_before, probs_after;  // classifier probabilities, when available
};

inline SynthesisResult synthesize(DubberModel& model, EmotionClassifier* psi,
                                  const SynthesisRequest& req, bool render_unguided_baseline = false) {
    req.flow.validate();
    DubberModel::SynthesisForward fs =
        model.forward_synthesis(req.phonemes, req.lips, req.speaker);

    SynthesisResult out;
    out.durations = fs.durations;
    out.attention = fs.attention;
    out.mu = fs.mu;

    GuidanceHook hook;
    GuidanceParams params;
    if (req.instruction) {
        params.gamma = req.gamma;
        params.instruction = *req.instruction;
        const bool active = params.gamma > 0 &&
                            (params.instruction.alpha > 0 || params.instruction.beta > 0);
        if (active && !psi) throw ConfigError("synthesize: emotion guidance requires a classifier");
        if (psi) params.validate(psi->cfg.classes);
        if (active) hook = make_pngm_hook(*psi, params);
        out.guided = static_cast<bool>(hook);
    }

    out.mel = ode_sample(model.decoder, fs.mu, fs.style, req.flow, hook, req.seed);
    if (render_unguided_baseline || out.guided) {
        if (out.guided)
            out.unguided_mel = ode_sample(model.decoder, fs.mu, fs.style, req.flow, nullptr, req.seed);
        else
            out.unguided_mel = out.mel;
        out.has_unguided = true;
    }
    if (psi) {
        if (out.has_unguided) out.probs_before = psi->probs(out.unguided_mel.frames, 1.0);
        out.probs_after = psi->probs(out.mel.frames, 1.0);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalConfig {
    std::vector<double> alphas{0.0, 1.0, 2.5, 5.0};
    std::vector<double> betas{0.0, 1.0, 2.0};
    double gamma = 15.0;
    int is_samples_per_cell = 8;  // renders averaged per (emotion, alpha, beta) cell
    int mcd_samples = 50;
    uint64_t seed = 0;

    nlohmann::json to_json() const {
        return {{"alphas", alphas},
                {"betas", betas},
                {"gamma", gamma},
                {"is_samples_per_cell", is_samples_per_cell},
                {"mcd_samples", mcd_samples},
                {"seed", seed}};
    }

    static EvalConfig from_json(const nlohmann::json& j) {
        EvalConfig c;
        c.alphas = j.at("alphas").get<std::vector<double>>();
        c.betas = j.at("betas").get<std::vector<double>>();
        c.gamma = j.at("gamma").get<double>();
        c.is_samples_per_cell = j.at("is_samples_per_cell").get<int>();
        c.mcd_samples = j.at("mcd_samples").get<int>();
        c.seed = j.at("seed").get<uint64_t>();
        return c;
    }
};

// Intensity Score over an (emotion, alpha, beta) grid. Renders are paired:
// cell (k) uses seed + k for every cell, so curves across alpha share their
// initial noise.
inline nlohmann::json intensity_grid(DubberModel& model, EmotionClassifier& psi, const Corpus& corpus,
                                     const std::vector<int>& indices, const FlowConfig& flow,
                                     const std::vector<double>& alphas, const std::vector<double>& betas,
                                     double gamma, int samples_per_cell, uint64_t seed) {
    if (indices.empty()) throw ConfigError("intensity_grid: empty split");
    if (alphas.empty() || betas.empty()) throw ConfigError("intensity_grid: empty grid");
    const int per_cell = std::min<int>(samples_per_cell, static_cast<int>(indices.size()));
    nlohmann::json table = nlohmann::json::array();
    int violations = 0, adjacent_pairs = 0;
    for (int emotion = 0; emotion < model.shape.emotions; ++emotion) {
        for (double beta : betas) {
            double prev_is = 0;
            bool have_prev = false;
            for (double alpha : alphas) {
                std::vector<Mat> mels;
                for (int k = 0; k < per_cell; ++k) {
                    const CorpusSample& s = corpus.samples[indices[k]];
                    EmotionInstruction instr{emotion, alpha, beta};
                    SynthesisRequest req;
                    req.phonemes = s.phonemes;
                    req.lips = s.lips.feats;
                    req.speaker = s.speaker;
                    req.instruction = &instr;
                    req.gamma = gamma;
                    req.flow = flow;
                    req.seed = seed + static_cast<uint64_t>(k);
                    mels.push_back(synthesize(model, &psi, req).mel.frames);
                }
                double is = intensity_score(psi, mels, emotion);
                table.push_back({{"emotion", emotion}, {"alpha", alpha}, {"beta", beta}, {"is", is}});
                if (have_prev) {
                    ++adjacent_pairs;
                    if (is < prev_is) ++violations;
                }
                prev_is = is;
                have_prev = true;
            }
        }
    }
    return {{"table", table},
            {"adjacent_pairs", adjacent_pairs},
            {"violations", violations},
            {"violation_fraction",
             adjacent_pairs > 0 ? static_cast<double>(violations) / adjacent_pairs : 0.0},
            {"samples_per_cell", per_cell}};
}

// Full quantitative report over a corpus split. The shuffled-prior baseline
// reuses the unguided renders: render j is scored against ground truth i
// under a fixed rotation, which is exactly synthesis from a mismatched mu.
inline nlohmann::json evaluate(DubberModel& model, EmotionClassifier* psi, const Corpus& corpus,
                               const std::vector<int>& eval_indices, const FlowConfig& flow,
                               const EvalConfig& cfg) {
    if (eval_indices.empty()) throw ConfigError("evaluate: empty eval split");
    nlohmann::json report;
    report["flow_config"] = flow.to_json();
    report["eval_config"] = cfg.to_json();
    report["model_config_hash"] = hex64(model.cfg.hash());
    report["corpus_config"] = corpus.config.to_json();
    report["eval_count"] = eval_indices.size();

    // MCD against ground truth + shuffled-prior baseline, unguided renders.
    const int n_mcd = std::min<int>(cfg.mcd_samples, static_cast<int>(eval_indices.size()));
    std::vector<MelSpectrogram> renders(n_mcd);
    std::vector<DurationVector> mas_durs(n_mcd);
    double mcd_sum = 0;
    for (int i = 0; i < n_mcd; ++i) {
        const CorpusSample& s = corpus.samples[eval_indices[i]];
        SynthesisRequest req;
        req.phonemes = s.phonemes;
        req.lips = s.lips.feats;
        req.speaker = s.speaker;
        req.flow = flow;
        req.seed = cfg.seed + static_cast<uint64_t>(i);
        SynthesisResult r = synthesize(model, nullptr, req);
        renders[i] = r.mel;
        mas_durs[i] = r.durations;
        mcd_sum += mcd_dtw(r.mel.frames, s.mel.frames);
    }
    double mcd_shuffled_sum = 0;
    for (int i = 0; i < n_mcd; ++i) {
        const CorpusSample& s = corpus.samples[eval_indices[i]];
        mcd_shuffled_sum += mcd_dtw(renders[(i + 1) % n_mcd].frames, s.mel.frames);
    }
    report["mcd_dtw_mean"] = mcd_sum / n_mcd;
    report["mcd_dtw_shuffled_mu_mean"] = mcd_shuffled_sum / n_mcd;
    report["mcd_samples"] = n_mcd;

    // MAS duration agreement and teacher-forced CTC decode over the split.
    int exact = 0, per_edits = 0, per_len = 0;
    double mae = 0;
    for (size_t i = 0; i < eval_indices.size(); ++i) {
        const CorpusSample& s = corpus.samples[eval_indices[i]];
        DurationVector durs;
        if (static_cast<int>(i) < n_mcd) {
            durs = mas_durs[i];
        } else {
            DubberModel::SynthesisForward fs = model.forward_synthesis(s.phonemes, s.lips.feats, s.speaker);
            durs = fs.durations;
        }
        if (durs.d == s.gt_durations.d) ++exact;
        double m = 0;
        for (int p = 0; p < s.gt_durations.size(); ++p) m += std::abs(durs.d[p] - s.gt_durations.d[p]);
        mae += m / s.gt_durations.size();

        nn::Var style = model.style_vector(s.speaker);
        nn::Var o_s = model.phoneme_encoder.fwd(s.phonemes, style);
        ProsodyOut pros = model.prosody.fwd(o_s, &s.pitch, &s.energy);
        nn::Var lips = model.lip_encoder.fwd(s.lips);
        nn::MhaOut att = model.lpa_attention.fwd(lips, pros.o_p);
        FusedOut fused = model.conformer.fwd(att.out, length_regulate(s.gt_durations, o_s));
        std::vector<int> decoded = ctc_greedy_decode(fused.ctc_logits->val, model.shape.vocab_size);
        per_edits += edit_distance(decoded, s.phonemes.ids);
        per_len += s.phonemes.length();
    }
    report["mas_exact_match"] = static_cast<double>(exact) / eval_indices.size();
    report["mas_duration_mae"] = mae / eval_indices.size();
    report["ctc_phoneme_error_rate"] = static_cast<double>(per_edits) / per_len;

    // Intensity Score grid.
    if (psi) {
        nlohmann::json grid = intensity_grid(model, *psi, corpus, eval_indices, flow, cfg.alphas,
                                             cfg.betas, cfg.gamma, cfg.is_samples_per_cell, cfg.seed);
        report["intensity"] = grid.at("table");
        report["is_adjacent_pairs"] = grid.at("adjacent_pairs");
        report["is_monotonicity_violations"] = grid.at("violations");
        report["is_violation_fraction"] = grid.at("violation_fraction");
    }
    return report;
}

}  // namespace emodub
