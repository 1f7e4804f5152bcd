// Command-line entry point: corpus generation, pipeline and classifier
// training, guided synthesis, guidance sweeps, and evaluation. Every
// command resolves its configuration (defaults < config file < flags),
// writes the resolved form and per-field provenance into its output
// directory, and promotes outputs atomically.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include "emodub/plot.hpp"
#include "emodub/run_config.hpp"
#include "emodub/trainer.hpp"

namespace fs = std::filesystem;
using namespace emodub;

namespace {

// Staged output directory: fill a temp sibling, promote with a rename on
// success, clean up otherwise.
class OutputDir {
  public:
    OutputDir(const std::string& target, bool overwrite) : target_(target) {
        if (fs::exists(target_) && !fs::is_empty(target_) && !overwrite)
            throw ConfigError("output directory '" + target_ +
                              "' exists and is not empty (pass --overwrite to replace it)");
        tmp_ = target_ + ".tmp-" + std::to_string(std::random_device{}());
        fs::create_directories(tmp_);
    }

    ~OutputDir() {
        if (!committed_) {
            std::error_code ec;
            fs::remove_all(tmp_, ec);
        }
    }

    std::string path(const std::string& rel = "") const {
        if (rel.empty()) return tmp_;
        fs::path p = fs::path(tmp_) / rel;
        fs::create_directories(p.parent_path());
        return p.string();
    }

    void commit() {
        if (fs::exists(target_)) fs::remove_all(target_);
        fs::create_directories(fs::path(target_).parent_path().empty()
                                   ? fs::path(".")
                                   : fs::path(target_).parent_path());
        fs::rename(tmp_, target_);
        committed_ = true;
    }

  private:
    std::string target_, tmp_;
    bool committed_ = false;
};

void write_json_file(const std::string& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << j.dump(2) << "\n";
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << text;
}

void write_resolved_config(const std::string& dir, const ResolvedConfig& rc) {
    write_json_file(dir + "/resolved_config.json", rc.resolved);
    write_json_file(dir + "/config_provenance.json", rc.provenance_json());
}

// Corpus identity check: warn on a config/corpus hash mismatch, error when
// strict. An untouched corpus section adopts the corpus's own config.
void reconcile_corpus_config(ResolvedConfig& rc, const Corpus& corpus, bool strict) {
    if (!rc.section_touched("corpus")) {
        rc.config.corpus = corpus.config;
        rc.resolved["corpus"] = corpus.config.to_json();
        return;
    }
    if (rc.config.corpus.hash() != corpus.config.hash()) {
        std::string msg = "corpus config hash mismatch: run config " + hex64(rc.config.corpus.hash()) +
                          " vs corpus " + hex64(corpus.config.hash());
        if (strict) throw ConfigError(msg + " (strict mode)");
        std::cerr << "warning: " << msg << "\n";
    }
}

std::vector<int> eval_split_indices(const Corpus& corpus, double holdout_fraction) {
    int train_n = train_split_size(corpus.size(), holdout_fraction);
    std::vector<int> idx;
    for (int i = train_n; i < corpus.size(); ++i) idx.push_back(i);
    if (idx.empty()) idx.push_back(corpus.size() - 1);
    return idx;
}

std::vector<double> parse_grid(const std::string& csv, const std::string& what) {
    std::vector<double> out;
    size_t pos = 0;
    while (pos <= csv.size()) {
        size_t comma = csv.find(',', pos);
        std::string tok = csv.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        if (!tok.empty()) {
            try {
                out.push_back(std::stod(tok));
            } catch (const std::exception&) {
                throw ConfigError("cannot parse " + what + " value '" + tok + "'");
            }
        }
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    if (out.empty()) throw ConfigError(what + " grid is empty");
    return out;
}

void plot_is_curves(const nlohmann::json& table, int emotions, const std::vector<double>& betas,
                    const std::string& dir) {
    for (int e = 0; e < emotions; ++e) {
        std::vector<plot::Series> series;
        for (double beta : betas) {
            plot::Series s;
            s.label = "b=" + plot::format_number(beta);
            for (const auto& row : table) {
                if (row.at("emotion").get<int>() != e) continue;
                if (row.at("beta").get<double>() != beta) continue;
                s.x.push_back(row.at("alpha").get<double>());
                s.y.push_back(row.at("is").get<double>());
            }
            series.push_back(std::move(s));
        }
        plot::save_line_plot(series, dir + "/is_emotion" + std::to_string(e) + ".png");
    }
}

std::string is_table_csv(const nlohmann::json& table) {
    std::string csv = "emotion,alpha,beta,is\n";
    for (const auto& row : table) {
        csv += std::to_string(row.at("emotion").get<int>()) + "," +
               plot::format_number(row.at("alpha").get<double>()) + "," +
               plot::format_number(row.at("beta").get<double>()) + "," +
               std::to_string(row.at("is").get<double>()) + "\n";
    }
    return csv;
}

// ---------------------------------------------------------------------------

int cmd_generate_data(const ResolvedConfig& rc_in, const std::string& out, int count_flag,
                      bool overwrite) {
    ResolvedConfig rc = rc_in;
    if (count_flag > 0) {
        rc.config.count = count_flag;
        rc.resolved["count"] = count_flag;
        rc.provenance["count"] = "flag";
    }
    if (rc.config.count < 1)
        throw ConfigError("missing config field: count (set it in the config file or pass --count)");

    rc.config.corpus.validate();
    Corpus corpus = generate_corpus(rc.config.corpus, rc.config.count);
    for (int i = 0; i < corpus.size(); ++i) {
        ValidationReport rep = validate_sample(corpus.samples[i], corpus.config.shape());
        if (!rep.ok())
            throw ConfigError("generated sample " + std::to_string(i) + " failed validation: " +
                              rep.violations.front());
    }

    OutputDir dir(out, overwrite);
    save_corpus(corpus, dir.path());
    write_resolved_config(dir.path(), rc);
    dir.commit();
    std::cout << "wrote " << corpus.size() << " samples to " << out << "\n";
    return 0;
}

int cmd_train(ResolvedConfig rc, const std::string& corpus_dir, const std::string& out, bool resume,
              bool strict, bool overwrite) {
    Corpus corpus = load_corpus(corpus_dir);
    reconcile_corpus_config(rc, corpus, strict);
    const TrainConfig& tc = rc.config.train;
    tc.validate();

    auto run_training = [&](DubberModel& model, nn::Adam& adam, Pcg32& rng, int start_step,
                            const std::string& run_dir) {
        auto save_ckpt = [&](int step) {
            std::string tmp = run_dir + "/checkpoint.tmp";
            fs::remove_all(tmp);
            save_pipeline(model, adam, rng, step, tc, corpus.config.hash(), tmp);
            fs::remove_all(run_dir + "/checkpoint");
            fs::rename(tmp, run_dir + "/checkpoint");
        };
        TrainResult res = train(model, adam, rng, corpus, tc, start_step, nullptr, save_ckpt);
        save_ckpt(res.final_step);
        std::ofstream log(run_dir + "/logs/metrics.jsonl", std::ios::app);
        if (!log) throw IoError("cannot write metrics log");
        for (const auto& line : res.log_lines) log << line << "\n";
        return res;
    };

    if (resume) {
        if (!fs::exists(out + "/checkpoint"))
            throw ConfigError("--resume: no checkpoint under '" + out + "'");
        LoadedPipeline lp = load_pipeline(out + "/checkpoint");
        if (lp.corpus_hash != corpus.config.hash())
            throw ConfigError("--resume: checkpoint was trained on a different corpus");
        TrainResult res = run_training(*lp.model, lp.adam, lp.rng, lp.step, out);
        std::cout << "resumed from step " << lp.step << ", finished at step " << res.final_step << "\n";
        return 0;
    }

    OutputDir dir(out, overwrite);
    fs::create_directories(dir.path("logs"));
    write_resolved_config(dir.path(), rc);

    DubberModel model(corpus.config.shape(), rc.config.model, tc.seed);
    nn::Adam adam;
    Pcg32 rng = stream_rng(tc.seed, "train_loop");
    TrainResult res = run_training(model, adam, rng, 0, dir.path());
    dir.commit();
    std::cout << "trained " << res.final_step << " steps, checkpoint in " << out << "/checkpoint\n";
    return 0;
}

int cmd_train_classifier(ResolvedConfig rc, const std::string& corpus_dir, const std::string& out,
                         bool strict, bool overwrite) {
    Corpus corpus = load_corpus(corpus_dir);
    reconcile_corpus_config(rc, corpus, strict);
    rc.config.classifier.classes = corpus.config.emotions;
    rc.config.classifier.mel_bins = corpus.config.mel_bins;
    rc.resolved["classifier"] = rc.config.classifier.to_json();

    OutputDir dir(out, overwrite);
    write_resolved_config(dir.path(), rc);

    ClassifierTrainReport report;
    EmotionClassifier psi = train_classifier(corpus, rc.config.classifier, rc.config.classifier_train, &report);
    save_classifier(psi, dir.path("checkpoint"));
    nlohmann::json rep = {{"heldout_accuracy", report.heldout_accuracy},
                          {"heldout_count", report.heldout_count},
                          {"final_loss", report.final_loss},
                          {"seed", rc.config.classifier_train.seed}};
    write_json_file(dir.path("reports/classifier.json"), rep);
    dir.commit();
    std::cout << "classifier held-out accuracy " << report.heldout_accuracy << " (" << report.heldout_count
              << " samples), checkpoint in " << out << "/checkpoint\n";
    return 0;
}

struct SynthFlags {
    int sample = 0;
    int emotion = -1;
    double alpha = 0.0;
    double beta = 0.0;
    double gamma = 15.0;
    int steps = -1;
    std::string solver;
    int64_t seed = -1;
};

int cmd_synthesize(ResolvedConfig rc, const std::string& ckpt_dir, const std::string& corpus_dir,
                   const std::string& classifier_dir, const SynthFlags& flags, const std::string& out,
                   bool overwrite) {
    Corpus corpus = load_corpus(corpus_dir);
    LoadedPipeline lp = load_pipeline(ckpt_dir);
    std::unique_ptr<EmotionClassifier> psi;
    if (!classifier_dir.empty()) psi = std::make_unique<EmotionClassifier>(load_classifier(classifier_dir));

    if (flags.sample < 0 || flags.sample >= corpus.size())
        throw ConfigError("--sample " + std::to_string(flags.sample) + " out of range (corpus has " +
                          std::to_string(corpus.size()) + " samples)");
    const CorpusSample& s = corpus.samples[flags.sample];

    FlowConfig flow = rc.config.flow;
    if (flags.steps > 0) flow.ode_steps = flags.steps;
    if (!flags.solver.empty())
        flow = FlowConfig::from_json(
            {{"sigma_min", flow.sigma_min}, {"ode_steps", flow.ode_steps}, {"solver", flags.solver}});
    uint64_t seed = flags.seed >= 0 ? static_cast<uint64_t>(flags.seed) : rc.config.seed;

    EmotionInstruction instr;
    bool has_instruction = flags.emotion >= 0;
    if (has_instruction) {
        instr.emotion = flags.emotion;
        instr.alpha = flags.alpha;
        instr.beta = flags.beta;
        GuidanceParams gp{flags.gamma, instr};
        gp.validate(lp.model->shape.emotions);
    }

    SynthesisRequest req;
    req.phonemes = s.phonemes;
    req.lips = s.lips.feats;
    req.speaker = s.speaker;
    req.instruction = has_instruction ? &instr : nullptr;
    req.gamma = flags.gamma;
    req.flow = flow;
    req.seed = seed;
    SynthesisResult r = synthesize(*lp.model, psi.get(), req);

    OutputDir dir(out, overwrite);
    write_resolved_config(dir.path(), rc);

    ArrayFile mel_file;
    mel_file.meta = nlohmann::json({{"kind", "mel_render"}, {"format_version", 1}}).dump();
    mel_file.add(NamedArray::f64("mel", r.mel.frames));
    mel_file.add(NamedArray::f64("mu", r.mu));
    mel_file.add(NamedArray::f64("attention", r.attention));
    std::vector<int64_t> durs(r.durations.d.begin(), r.durations.d.end());
    mel_file.add(NamedArray::i64("durations", durs));
    if (r.guided) mel_file.add(NamedArray::f64("mel_unguided", r.unguided_mel.frames));
    mel_file.save(dir.path("renders/mel.bin"));
    plot::save_mel_heatmap(r.mel.frames, dir.path("renders/mel.png"));

    nlohmann::json meta = {{"flags",
                            {{"sample", flags.sample},
                             {"emotion", has_instruction ? nlohmann::json(flags.emotion) : nlohmann::json()},
                             {"alpha", flags.alpha},
                             {"beta", flags.beta},
                             {"gamma", flags.gamma},
                             {"steps", flow.ode_steps},
                             {"solver", flow.solver_name()},
                             {"seed", seed},
                             {"checkpoint", ckpt_dir},
                             {"classifier", classifier_dir}}},
                           {"guided", r.guided},
                           {"durations", r.durations.d},
                           {"frames", r.mel.length()}};
    if (psi) {
        if (r.has_unguided)
            meta["probs_before"] = std::vector<double>(r.probs_before.data(),
                                                       r.probs_before.data() + r.probs_before.size());
        meta["probs_after"] =
            std::vector<double>(r.probs_after.data(), r.probs_after.data() + r.probs_after.size());
    }
    write_json_file(dir.path("renders/metadata.json"), meta);
    dir.commit();
    std::cout << "rendered " << r.mel.length() << " mel frames to " << out << "/renders\n";
    return 0;
}

int cmd_sweep_guidance(ResolvedConfig rc, const std::string& ckpt_dir, const std::string& corpus_dir,
                       const std::string& classifier_dir, const std::string& alphas_csv,
                       const std::string& betas_csv, int per_cell, int steps, int64_t seed_flag,
                       const std::string& out, bool overwrite) {
    Corpus corpus = load_corpus(corpus_dir);
    LoadedPipeline lp = load_pipeline(ckpt_dir);
    EmotionClassifier psi = load_classifier(classifier_dir);

    EvalConfig ec = rc.config.eval;
    if (!alphas_csv.empty()) ec.alphas = parse_grid(alphas_csv, "alpha");
    if (!betas_csv.empty()) ec.betas = parse_grid(betas_csv, "beta");
    if (per_cell > 0) ec.is_samples_per_cell = per_cell;
    if (seed_flag >= 0) ec.seed = static_cast<uint64_t>(seed_flag);
    FlowConfig flow = rc.config.flow;
    if (steps > 0) flow.ode_steps = steps;

    std::vector<int> idx = eval_split_indices(corpus, rc.config.train.holdout_fraction);
    nlohmann::json grid = intensity_grid(*lp.model, psi, corpus, idx, flow, ec.alphas, ec.betas, ec.gamma,
                                         ec.is_samples_per_cell, ec.seed);

    OutputDir dir(out, overwrite);
    write_resolved_config(dir.path(), rc);
    nlohmann::json report = {{"table", grid.at("table")},
                             {"adjacent_pairs", grid.at("adjacent_pairs")},
                             {"violations", grid.at("violations")},
                             {"violation_fraction", grid.at("violation_fraction")},
                             {"samples_per_cell", grid.at("samples_per_cell")},
                             {"gamma", ec.gamma},
                             {"flow_config", flow.to_json()},
                             {"seed", ec.seed}};
    write_json_file(dir.path("reports/is_table.json"), report);
    write_text_file(dir.path("reports/is_table.csv"), is_table_csv(grid.at("table")));
    fs::create_directories(dir.path("plots"));
    plot_is_curves(grid.at("table"), lp.model->shape.emotions, ec.betas, dir.path("plots"));
    dir.commit();
    std::cout << "sweep over " << grid.at("table").size() << " cells written to " << out << "\n";
    return 0;
}

int cmd_eval(ResolvedConfig rc, const std::string& ckpt_dir, const std::string& corpus_dir,
             const std::string& classifier_dir, int steps, int64_t seed_flag, const std::string& out,
             bool overwrite) {
    Corpus corpus = load_corpus(corpus_dir);
    LoadedPipeline lp = load_pipeline(ckpt_dir);
    std::unique_ptr<EmotionClassifier> psi;
    if (!classifier_dir.empty()) psi = std::make_unique<EmotionClassifier>(load_classifier(classifier_dir));

    FlowConfig flow = rc.config.flow;
    if (steps > 0) flow.ode_steps = steps;
    EvalConfig ec = rc.config.eval;
    if (seed_flag >= 0) ec.seed = static_cast<uint64_t>(seed_flag);

    std::vector<int> idx = eval_split_indices(corpus, rc.config.train.holdout_fraction);
    nlohmann::json report = evaluate(*lp.model, psi.get(), corpus, idx, flow, ec);
    report["checkpoint_step"] = lp.step;

    OutputDir dir(out, overwrite);
    write_resolved_config(dir.path(), rc);
    write_json_file(dir.path("reports/eval.json"), report);
    if (psi) {
        fs::create_directories(dir.path("plots"));
        plot_is_curves(report.at("intensity"), lp.model->shape.emotions, ec.betas, dir.path("plots"));
    }
    dir.commit();
    std::cout << "evaluation report written to " << out << "/reports/eval.json\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"EmoDubber-style controllable emotion dubbing pipeline on a synthetic corpus"};
    app.require_subcommand(1);

    std::string config_file, out, corpus_dir, ckpt_dir, classifier_dir;
    std::vector<std::string> sets;
    bool overwrite = false, strict = false, resume = false;
    int count = 0;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_file, "json config file");
        cmd->add_option("--set", sets, "override a config field, e.g. --set train.steps=500");
        cmd->add_option("--out", out, "output directory")->required();
        cmd->add_flag("--overwrite", overwrite, "replace an existing output directory");
    };

    CLI::App* gen = app.add_subcommand("generate-data", "generate a synthetic corpus");
    add_common(gen);
    gen->add_option("--count", count, "number of samples");

    CLI::App* tr = app.add_subcommand("train", "train the dubbing pipeline");
    add_common(tr);
    tr->add_option("--corpus", corpus_dir, "corpus directory")->required();
    tr->add_flag("--strict", strict, "escalate corpus hash mismatch to an error");
    tr->add_flag("--resume", resume, "resume from the checkpoint in --out");

    CLI::App* trc = app.add_subcommand("train-classifier", "train the emotion expert classifier");
    add_common(trc);
    trc->add_option("--corpus", corpus_dir, "corpus directory")->required();
    trc->add_flag("--strict", strict, "escalate corpus hash mismatch to an error");

    SynthFlags sf;
    CLI::App* sy = app.add_subcommand("synthesize", "render a mel for one corpus sample");
    add_common(sy);
    sy->add_option("--checkpoint", ckpt_dir, "pipeline checkpoint directory")->required();
    sy->add_option("--corpus", corpus_dir, "corpus directory (sample inputs)")->required();
    sy->add_option("--classifier", classifier_dir, "classifier checkpoint (needed for guidance)");
    sy->add_option("--sample", sf.sample, "corpus sample index");
    sy->add_option("--emotion", sf.emotion, "target emotion id (enables guidance)");
    sy->add_option("--alpha", sf.alpha, "positive guidance scale");
    sy->add_option("--beta", sf.beta, "negative guidance scale");
    sy->add_option("--gamma", sf.gamma, "total guidance scale");
    sy->add_option("--steps", sf.steps, "ODE steps");
    sy->add_option("--solver", sf.solver, "euler or midpoint");
    sy->add_option("--seed", sf.seed, "render seed");

    std::string alphas_csv, betas_csv;
    int per_cell = 0, steps = 0;
    int64_t seed_flag = -1;
    CLI::App* sw = app.add_subcommand("sweep-guidance", "intensity score sweep over (alpha, beta)");
    add_common(sw);
    sw->add_option("--checkpoint", ckpt_dir)->required();
    sw->add_option("--corpus", corpus_dir)->required();
    sw->add_option("--classifier", classifier_dir)->required();
    sw->add_option("--alphas", alphas_csv, "comma separated alpha grid");
    sw->add_option("--betas", betas_csv, "comma separated beta grid");
    sw->add_option("--per-cell", per_cell, "renders per grid cell");
    sw->add_option("--steps", steps, "ODE steps");
    sw->add_option("--seed", seed_flag, "sweep seed");

    CLI::App* ev = app.add_subcommand("eval", "full evaluation report");
    add_common(ev);
    ev->add_option("--checkpoint", ckpt_dir)->required();
    ev->add_option("--corpus", corpus_dir)->required();
    ev->add_option("--classifier", classifier_dir, "classifier checkpoint (enables the IS grid)");
    ev->add_option("--steps", steps, "ODE steps");
    ev->add_option("--seed", seed_flag, "eval seed");

    CLI11_PARSE(app, argc, argv);

    try {
        ResolvedConfig rc = resolve_config(config_file, sets);
        if (gen->parsed()) return cmd_generate_data(rc, out, count, overwrite);
        if (tr->parsed()) return cmd_train(rc, corpus_dir, out, resume, strict, overwrite);
        if (trc->parsed()) return cmd_train_classifier(rc, corpus_dir, out, strict, overwrite);
        if (sy->parsed()) return cmd_synthesize(rc, ckpt_dir, corpus_dir, classifier_dir, sf, out, overwrite);
        if (sw->parsed())
            return cmd_sweep_guidance(rc, ckpt_dir, corpus_dir, classifier_dir, alphas_csv, betas_csv,
                                      per_cell, steps, seed_flag, out, overwrite);
        if (ev->parsed()) return cmd_eval(rc, ckpt_dir, corpus_dir, classifier_dir, steps, seed_flag, out, overwrite);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
