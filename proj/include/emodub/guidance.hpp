#pragma once

// Emotion expert classifier and the positive/negative guidance mechanism:
// the guided field is v + gamma * (alpha * grad log p(c|x) - beta * grad of
// the detached non-target mixture log-likelihood), recomputed at every ODE
// step. Also houses the Intensity Score metric.

#include <string>
#include <vector>

#include <json.hpp>

#include "emodub/acoustic.hpp"
#include "emodub/checkpoint.hpp"
#include "emodub/corpus.hpp"
#include "emodub/flow.hpp"
#include "emodub/nn.hpp"

namespace emodub {

struct ClassifierConfig {
    int layers = 6;
    int channels = 64;
    int kernel = 5;
    double dropout = 0.1;
    double leaky_slope = 0.01;
    double bn_momentum = 0.1;
    int classes = 7;
    int mel_bins = 80;

    nlohmann::json to_json() const {
        return {{"layers", layers},           {"channels", channels},
                {"kernel", kernel},           {"dropout", dropout},
                {"leaky_slope", leaky_slope}, {"bn_momentum", bn_momentum},
                {"classes", classes},         {"mel_bins", mel_bins}};
    }

    static ClassifierConfig from_json(const nlohmann::json& j) {
        ClassifierConfig c;
        c.layers = j.at("layers").get<int>();
        c.channels = j.at("channels").get<int>();
        c.kernel = j.at("kernel").get<int>();
        c.dropout = j.at("dropout").get<double>();
        c.leaky_slope = j.at("leaky_slope").get<double>();
        c.bn_momentum = j.at("bn_momentum").get<double>();
        c.classes = j.at("classes").get<int>();
        c.mel_bins = j.at("mel_bins").get<int>();
        return c;
    }

    uint64_t arch_hash() const { return fnv1a64(to_json().dump()); }
};

// 1-D CNN over mel frames (bins are channels, time is the convolution
// axis) with batch norm, leaky activations and dropout, mean-pooled into an
// N-way linear head. The interpolation time t enters as an extra broadcast
// channel.
struct EmotionClassifier {
    ClassifierConfig cfg;
    nn::ParamStore store;
    std::vector<nn::Var> conv_w, conv_b, bn_g, bn_b;
    nn::Linear head;

    explicit EmotionClassifier(const ClassifierConfig& cfg_, uint64_t seed) : cfg(cfg_), store(seed) {
        int in_ch = cfg.mel_bins + 1;  // + time channel
        for (int l = 0; l < cfg.layers; ++l) {
            std::string name = "conv" + std::to_string(l);
            conv_w.push_back(store.xavier(name + ".W", cfg.kernel * in_ch, cfg.channels));
            conv_b.push_back(store.zeros(name + ".b", 1, cfg.channels));
            bn_g.push_back(store.ones(name + ".bn.gamma", 1, cfg.channels));
            bn_b.push_back(store.zeros(name + ".bn.beta", 1, cfg.channels));
            in_ch = cfg.channels;
        }
        head = nn::Linear(store, "head", cfg.channels, cfg.classes);
    }

    nn::Var logits_var(const nn::Var& x, double t, bool training, Pcg32* rng) {
        if (x->val.cols() != cfg.mel_bins) throw ShapeError("classifier: input bins mismatch");
        if (t < 0.0 || t > 1.0) throw ConfigError("classifier: t must lie in [0, 1]");
        if (training && !rng) throw ConfigError("classifier: training mode needs an rng");
        nn::Var h = ad::concat_cols({x, ad::constant(Mat::Constant(x->val.rows(), 1, t))});
        for (int l = 0; l < cfg.layers; ++l) {
            h = ad::conv1d(h, conv_w[l], conv_b[l], cfg.kernel);
            h = ad::batch_norm_time(h, bn_g[l], bn_b[l], store.stats("conv" + std::to_string(l)),
                                    cfg.bn_momentum, training);
            h = ad::leaky_relu(h, cfg.leaky_slope);
            if (training) h = ad::dropout(h, cfg.dropout, *rng, true);
        }
        return head.fwd(ad::mean_rows(h));
    }

    // Softmax probabilities in evaluation mode.
    Eigen::VectorXd probs(const Mat& x, double t) {
        nn::Var lg = logits_var(ad::constant(x), t, false, nullptr);
        return ad::softmax_rows_value(lg->val).row(0).transpose();
    }
};

// Softmax probability vector l of the classifier at state x, time t.
inline Eigen::VectorXd classifier_logits(EmotionClassifier& psi, const Mat& x, double t) {
    return psi.probs(x, t);
}

// Gradient of log p(c | x) w.r.t. x.
inline Mat grad_log_prob(EmotionClassifier& psi, const Mat& x, double t, int target_class) {
    if (target_class < 0 || target_class >= psi.cfg.classes)
        throw ConfigError("grad_log_prob: class id out of range");
    nn::Var xv = ad::leaf(x);
    nn::Var logp = ad::log_softmax_rows(psi.logits_var(xv, t, false, nullptr));
    Mat onehot = Mat::Zero(psi.cfg.classes, 1);
    onehot(target_class, 0) = 1.0;
    ad::backward(ad::matmul(logp, ad::constant(std::move(onehot))));
    return xv->has_grad() ? xv->grad : Mat::Zero(x.rows(), x.cols());
}

// Gradient of sum_j w_hat_j log p(c_j | x) where w_hat is `weights`
// renormalized to sum one and treated as a constant.
inline Mat grad_log_prob(EmotionClassifier& psi, const Mat& x, double t, const Eigen::VectorXd& weights) {
    if (weights.size() != psi.cfg.classes) throw ShapeError("grad_log_prob: weight vector length mismatch");
    for (int i = 0; i < weights.size(); ++i)
        if (weights[i] < 0) throw ConfigError("grad_log_prob: negative weight");
    double total = weights.sum();
    if (total <= 0) throw ConfigError("grad_log_prob: all-zero weight vector");
    Eigen::VectorXd lam = weights / total;
    nn::Var xv = ad::leaf(x);
    nn::Var logp = ad::log_softmax_rows(psi.logits_var(xv, t, false, nullptr));
    ad::backward(ad::matmul(logp, ad::constant(Mat(lam))));
    return xv->has_grad() ? xv->grad : Mat::Zero(x.rows(), x.cols());
}

struct GuidanceParams {
    double gamma = 15.0;
    EmotionInstruction instruction;

    void validate(int classes) const {
        if (!std::isfinite(gamma) || gamma < 0) throw ConfigError("guidance: gamma must be finite and >= 0");
        if (instruction.emotion < 0 || instruction.emotion >= classes) {
            std::string valid;
            for (int i = 0; i < classes; ++i) valid += (i ? ", " : "") + std::to_string(i);
            throw ConfigError("guidance: unknown emotion id " + std::to_string(instruction.emotion) +
                              " (valid ids: " + valid + ")");
        }
        if (!std::isfinite(instruction.alpha) || instruction.alpha < 0)
            throw ConfigError("guidance: alpha must be finite and >= 0");
        if (!std::isfinite(instruction.beta) || instruction.beta < 0)
            throw ConfigError("guidance: beta must be finite and >= 0");
    }
};

// The guided field. Returns v untouched (same values, no arithmetic) when
// the instruction is degenerate, so unguided renders are reproduced bit for
// bit.
inline Mat pngm_velocity(const Mat& v, const Mat& x, double t, EmotionClassifier& psi,
                         const GuidanceParams& params) {
    params.validate(psi.cfg.classes);
    const double alpha = params.instruction.alpha;
    const double beta = params.instruction.beta;
    const int c = params.instruction.emotion;
    if (params.gamma == 0.0 || (alpha == 0.0 && beta == 0.0)) return v;

    Mat delta = Mat::Zero(v.rows(), v.cols());
    if (alpha > 0) delta += alpha * grad_log_prob(psi, x, t, c);
    if (beta > 0) {
        Eigen::VectorXd l = classifier_logits(psi, x, t);
        l[c] = 0.0;  // non-target mixture, recomputed at every step
        if (l.sum() > 0) delta -= beta * grad_log_prob(psi, x, t, l);
    }
    return v + params.gamma * delta;
}

inline GuidanceHook make_pngm_hook(EmotionClassifier& psi, const GuidanceParams& params) {
    return [&psi, params](const Mat& v, const Mat& x, double t) {
        return pngm_velocity(v, x, t, psi, params);
    };
}

// Mean softmax probability of the target class at t = 1 over a set of mels.
inline double intensity_score(EmotionClassifier& psi, const std::vector<Mat>& mels, int target_class) {
    if (mels.empty()) throw ConfigError("intensity_score: empty mel list");
    double acc = 0.0;
    for (const Mat& m : mels) acc += psi.probs(m, 1.0)[target_class];
    return acc / static_cast<double>(mels.size());
}

// ---------------------------------------------------------------------------
// Classifier training on interpolant states

struct ClassifierTrainConfig {
    int steps = 2500;
    int batch = 8;
    double lr = 1e-3;
    int warmup = 100;
    double grad_clip = 5.0;
    double holdout_fraction = 0.1;
    double sigma_min = 1e-4;
    uint64_t seed = 0;

    nlohmann::json to_json() const {
        return {{"steps", steps}, {"batch", batch},  {"lr", lr},
                {"warmup", warmup}, {"grad_clip", grad_clip}, {"holdout_fraction", holdout_fraction},
                {"sigma_min", sigma_min}, {"seed", seed}};
    }

    static ClassifierTrainConfig from_json(const nlohmann::json& j) {
        ClassifierTrainConfig c;
        c.steps = j.at("steps").get<int>();
        c.batch = j.at("batch").get<int>();
        c.lr = j.at("lr").get<double>();
        c.warmup = j.at("warmup").get<int>();
        c.grad_clip = j.at("grad_clip").get<double>();
        c.holdout_fraction = j.at("holdout_fraction").get<double>();
        c.sigma_min = j.at("sigma_min").get<double>();
        c.seed = j.at("seed").get<uint64_t>();
        return c;
    }
};

struct ClassifierTrainReport {
    double heldout_accuracy = 0.0;  // clean mels, t = 1
    int heldout_count = 0;
    double final_loss = 0.0;
};

// Accuracy on interpolant states phi_t at a fixed t (seeded noise).
inline double classifier_accuracy_at_t(EmotionClassifier& psi, const Corpus& corpus,
                                       const std::vector<int>& indices, double t, double sigma_min,
                                       uint64_t noise_seed) {
    if (indices.empty()) return 0.0;
    Pcg32 rng = stream_rng(noise_seed, "clf_eval_noise");
    int hit = 0;
    for (int idx : indices) {
        const Mat& M = corpus.samples[idx].mel.frames;
        Mat x0(M.rows(), M.cols());
        for (int i = 0; i < x0.size(); ++i) x0.data()[i] = rng.gaussian();
        PathSample p = sample_path(x0, M, t, sigma_min);
        Eigen::VectorXd pr = psi.probs(p.phi, t);
        int arg;
        pr.maxCoeff(&arg);
        if (arg == corpus.samples[idx].emotion) ++hit;
    }
    return static_cast<double>(hit) / indices.size();
}

inline EmotionClassifier train_classifier(const Corpus& corpus, const ClassifierConfig& cfg,
                                          const ClassifierTrainConfig& tcfg,
                                          ClassifierTrainReport* report = nullptr) {
    std::vector<int> seen_classes;
    for (const auto& s : corpus.samples)
        if (std::find(seen_classes.begin(), seen_classes.end(), s.emotion) == seen_classes.end())
            seen_classes.push_back(s.emotion);
    if (seen_classes.size() < 2) throw ConfigError("train_classifier: corpus has fewer than 2 classes");

    const int n = corpus.size();
    const int holdout = std::max(1, static_cast<int>(n * tcfg.holdout_fraction));
    const int train_n = n - holdout;
    if (train_n < 1) throw ConfigError("train_classifier: corpus too small for the holdout split");

    EmotionClassifier psi(cfg, tcfg.seed);
    nn::Adam adam;
    adam.lr = tcfg.lr;
    adam.warmup_steps = tcfg.warmup;

    Pcg32 rng = stream_rng(tcfg.seed, "clf_train");
    double last_loss = 0.0;
    for (int step = 0; step < tcfg.steps; ++step) {
        psi.store.zero_grad();
        double batch_loss = 0.0;
        for (int b = 0; b < tcfg.batch; ++b) {
            int idx = static_cast<int>(rng.bounded(static_cast<uint32_t>(train_n)));
            const CorpusSample& sample = corpus.samples[idx];
            const Mat& M = sample.mel.frames;
            double t = rng.uniform();
            Mat x0(M.rows(), M.cols());
            for (int i = 0; i < x0.size(); ++i) x0.data()[i] = rng.gaussian();
            PathSample p = sample_path(x0, M, t, tcfg.sigma_min);
            nn::Var logits = psi.logits_var(ad::constant(std::move(p.phi)), t, true, &rng);
            nn::Var loss = ad::scale(ad::cross_entropy_row(logits, sample.emotion), 1.0 / tcfg.batch);
            ad::backward(loss);
            batch_loss += loss->scalar();
        }
        if (!std::isfinite(batch_loss))
            throw DivergenceError("train_classifier: non-finite loss at step " + std::to_string(step), step);
        nn::clip_gradients(psi.store, tcfg.grad_clip);
        adam.step(psi.store);
        last_loss = batch_loss;
    }

    if (report) {
        report->final_loss = last_loss;
        report->heldout_count = holdout;
        int hit = 0;
        for (int i = train_n; i < n; ++i) {
            Eigen::VectorXd pr = psi.probs(corpus.samples[i].mel.frames, 1.0);
            int arg;
            pr.maxCoeff(&arg);
            if (arg == corpus.samples[i].emotion) ++hit;
        }
        report->heldout_accuracy = static_cast<double>(hit) / holdout;
    }
    return psi;
}

// ---------------------------------------------------------------------------
// Classifier checkpoint (own manifest entry: class count + architecture hash)

inline void save_classifier(EmotionClassifier& psi, const std::string& dir) {
    std::filesystem::create_directories(dir);
    ArrayFile file;
    nlohmann::json meta = {{"kind", "classifier"}, {"format_version", kCheckpointFormatVersion}};
    file.meta = meta.dump();
    params_to_arrays(psi.store, file, "");
    file.save(dir + "/arrays.bin");

    nlohmann::json manifest = {{"kind", "classifier"},
                               {"format_version", kCheckpointFormatVersion},
                               {"classes", psi.cfg.classes},
                               {"arch_hash", hex64(psi.cfg.arch_hash())},
                               {"classifier_config", psi.cfg.to_json()},
                               {"shapes", shapes_manifest(psi.store)}};
    write_manifest(dir, manifest);
}

inline EmotionClassifier load_classifier(const std::string& dir) {
    nlohmann::json manifest = read_manifest(dir);
    if (manifest.at("kind").get<std::string>() != "classifier")
        throw IoError("'" + dir + "' is not a classifier checkpoint");
    if (manifest.at("format_version").get<int>() != kCheckpointFormatVersion)
        throw IoError("classifier checkpoint '" + dir + "': unsupported format version");
    ClassifierConfig cfg = ClassifierConfig::from_json(manifest.at("classifier_config"));
    if (hex64(cfg.arch_hash()) != manifest.at("arch_hash").get<std::string>())
        throw IoError("classifier checkpoint '" + dir + "': architecture hash mismatch");
    EmotionClassifier psi(cfg, 0);
    ArrayFile file = ArrayFile::load(dir + "/arrays.bin");
    arrays_to_params(file, psi.store, "");
    return psi;
}

}  // namespace emodub
