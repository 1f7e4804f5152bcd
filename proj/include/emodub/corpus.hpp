#pragma once

// Deterministic synthetic dubbing corpus. Each emotion plants a disjoint
// mel band with its own tilt and amplitude modulation, so emotion content
// is measurable and guidance effects can be verified numerically. Phoneme
// identity drives both the lip features and a per-phoneme formant pattern
// in the mel, which is what makes alignment and CTC learnable.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "emodub/array_file.hpp"
#include "emodub/core_types.hpp"
#include "emodub/rng.hpp"

namespace emodub {

struct CorpusConfig {
    int vocab_size = 24;
    int emotions = 7;
    int speakers = 4;
    int min_phonemes = 3;
    int max_phonemes = 8;
    int min_duration = 1;  // video frames per phoneme
    int max_duration = 6;
    int mel_ratio = 4;  // mel frames per video frame
    int mel_bins = 80;
    int lip_dim = 64;
    double noise_sigma = 0.05;
    uint64_t seed = 0;

    void validate() const {
        if (vocab_size < 2) throw ConfigError("corpus: vocab_size must be >= 2");
        if (emotions < 2) throw ConfigError("corpus: emotions must be >= 2");
        if (speakers < 1) throw ConfigError("corpus: speakers must be >= 1");
        if (min_phonemes < 1 || max_phonemes < min_phonemes)
            throw ConfigError("corpus: invalid phoneme count range");
        if (min_duration < 1 || max_duration > 6 || max_duration < min_duration)
            throw ConfigError("corpus: duration range must lie within [1, 6]");
        if (mel_ratio < 1) throw ConfigError("corpus: mel_ratio must be >= 1");
        if (mel_bins < 2 * emotions) throw ConfigError("corpus: mel_bins too small for disjoint emotion bands");
        if (lip_dim < 1) throw ConfigError("corpus: lip_dim must be >= 1");
        if (noise_sigma < 0) throw ConfigError("corpus: noise_sigma must be >= 0");
    }

    ShapeConfig shape() const {
        return ShapeConfig{vocab_size, emotions, speakers, mel_ratio, mel_bins, lip_dim};
    }

    nlohmann::json to_json() const {
        return {{"vocab_size", vocab_size},
                {"emotions", emotions},
                {"speakers", speakers},
                {"min_phonemes", min_phonemes},
                {"max_phonemes", max_phonemes},
                {"min_duration", min_duration},
                {"max_duration", max_duration},
                {"mel_ratio", mel_ratio},
                {"mel_bins", mel_bins},
                {"lip_dim", lip_dim},
                {"noise_sigma", noise_sigma},
                {"seed", seed}};
    }

    static CorpusConfig from_json(const nlohmann::json& j) {
        CorpusConfig c;
        c.vocab_size = j.at("vocab_size").get<int>();
        c.emotions = j.at("emotions").get<int>();
        c.speakers = j.at("speakers").get<int>();
        c.min_phonemes = j.at("min_phonemes").get<int>();
        c.max_phonemes = j.at("max_phonemes").get<int>();
        c.min_duration = j.at("min_duration").get<int>();
        c.max_duration = j.at("max_duration").get<int>();
        c.mel_ratio = j.at("mel_ratio").get<int>();
        c.mel_bins = j.at("mel_bins").get<int>();
        c.lip_dim = j.at("lip_dim").get<int>();
        c.noise_sigma = j.at("noise_sigma").get<double>();
        c.seed = j.at("seed").get<uint64_t>();
        return c;
    }

    uint64_t hash() const { return fnv1a64(to_json().dump()); }
};

// Planted acoustic identity of one emotion class: a contiguous mel band
// receives extra energy with a slope across the band and a slow sinusoidal
// modulation over time. Bands of distinct emotions never overlap.
struct EmotionSignature {
    int band_lo = 0;
    int band_hi = 0;  // exclusive
    double tilt = 0.0;
    double modulation_rate = 8.0;  // mel frames per cycle
    double amplitude = 1.2;
};

inline EmotionSignature emotion_signature(const CorpusConfig& cfg, int emotion) {
    if (emotion < 0 || emotion >= cfg.emotions)
        throw ConfigError("emotion id " + std::to_string(emotion) + " outside [0, " +
                          std::to_string(cfg.emotions) + ")");
    const int stride = cfg.mel_bins / cfg.emotions;
    const int width = std::max(1, stride - 2);

    // Seeded permutation of band slots so the band order is not the label order.
    std::vector<int> slots(cfg.emotions);
    for (int i = 0; i < cfg.emotions; ++i) slots[i] = i;
    Pcg32 rng = stream_rng(cfg.seed, "emotion_bands");
    for (int i = cfg.emotions - 1; i > 0; --i) {
        int j = static_cast<int>(rng.bounded(static_cast<uint32_t>(i + 1)));
        std::swap(slots[i], slots[j]);
    }

    Pcg32 erng = stream_rng(cfg.seed, "emotion_params", static_cast<uint64_t>(emotion));
    EmotionSignature sig;
    sig.band_lo = slots[emotion] * stride + 1;
    sig.band_hi = std::min(sig.band_lo + width, cfg.mel_bins);
    sig.tilt = erng.uniform(-0.6, 0.6);
    sig.modulation_rate = erng.uniform(6.0, 16.0);
    sig.amplitude = erng.uniform(1.0, 1.4);
    return sig;
}

namespace detail {

// Round through f32 so that in-memory samples match the on-disk payload bit
// for bit after a save/load round trip.
inline double store_round(double x) { return static_cast<double>(static_cast<float>(x)); }

inline Mat store_round(Mat m) {
    for (int i = 0; i < m.size(); ++i) m.data()[i] = store_round(m.data()[i]);
    return m;
}

// V x mel_bins formant patterns: two seeded spectral bumps per phoneme.
inline Mat phoneme_codebook(const CorpusConfig& cfg) {
    Mat cb = Mat::Zero(cfg.vocab_size, cfg.mel_bins);
    for (int p = 0; p < cfg.vocab_size; ++p) {
        Pcg32 rng = stream_rng(cfg.seed, "phoneme_codebook", static_cast<uint64_t>(p));
        for (int bump = 0; bump < 2; ++bump) {
            double center = rng.uniform(0.0, cfg.mel_bins - 1.0);
            double width = rng.uniform(2.0, 6.0);
            double amp = rng.uniform(0.6, 1.4) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
            for (int b = 0; b < cfg.mel_bins; ++b) {
                double z = (b - center) / width;
                cb(p, b) += amp * std::exp(-0.5 * z * z);
            }
        }
    }
    return cb;
}

// S x mel_bins smooth spectral envelopes.
inline Mat speaker_envelopes(const CorpusConfig& cfg) {
    Mat env = Mat::Zero(cfg.speakers, cfg.mel_bins);
    for (int s = 0; s < cfg.speakers; ++s) {
        Pcg32 rng = stream_rng(cfg.seed, "speaker_envelope", static_cast<uint64_t>(s));
        for (int k = 1; k <= 3; ++k) {
            double amp = rng.uniform(-0.4, 0.4);
            double phase = rng.uniform(0.0, 6.283185307179586);
            for (int b = 0; b < cfg.mel_bins; ++b)
                env(s, b) += amp * std::cos(6.283185307179586 * k * b / cfg.mel_bins + phase);
        }
    }
    return env;
}

inline Mat lip_codebook(const CorpusConfig& cfg) {
    Mat cb(cfg.vocab_size, cfg.lip_dim);
    for (int p = 0; p < cfg.vocab_size; ++p) {
        Pcg32 rng = stream_rng(cfg.seed, "lip_codebook", static_cast<uint64_t>(p));
        for (int j = 0; j < cfg.lip_dim; ++j) cb(p, j) = rng.gaussian();
    }
    return cb;
}

inline void prosody_scalars(const CorpusConfig& cfg, int phoneme, int emotion, int speaker,
                            double* pitch, double* energy) {
    uint64_t key = fnv1a64("prosody");
    uint64_t ids[3] = {static_cast<uint64_t>(phoneme), static_cast<uint64_t>(emotion),
                       static_cast<uint64_t>(speaker)};
    key = fnv1a64(ids, sizeof(ids), key);
    Pcg32 rng(cfg.seed, key);
    *pitch = store_round(rng.uniform(0.2, 1.0));
    *energy = store_round(rng.uniform(0.2, 1.0));
}

}  // namespace detail

// Render one mel from its discrete description. Pure given the config; noise
// comes from the caller's stream so two calls with sigma=0 agree exactly.
inline MelSpectrogram render_mel(const PhonemeSequence& phonemes, const DurationVector& durations,
                                 int speaker, int emotion, const CorpusConfig& cfg, Pcg32& noise_rng) {
    if (phonemes.length() != durations.size())
        throw ShapeError("render_mel: phoneme and duration counts differ");
    const Mat pho_cb = detail::phoneme_codebook(cfg);
    const Mat spk_env = detail::speaker_envelopes(cfg);
    const EmotionSignature sig = emotion_signature(cfg, emotion);

    const int F = durations.total_frames();
    const int M_l = cfg.mel_ratio * F;
    Mat mel(M_l, cfg.mel_bins);

    int t = 0;
    for (int i = 0; i < phonemes.length(); ++i) {
        const int reps = cfg.mel_ratio * durations.d[i];
        for (int k = 0; k < reps; ++k, ++t) {
            mel.row(t) = spk_env.row(speaker) + pho_cb.row(phonemes.ids[i]);
            const double mod = 1.0 + 0.5 * std::sin(6.283185307179586 * t / sig.modulation_rate);
            const int span = std::max(1, sig.band_hi - sig.band_lo - 1);
            for (int b = sig.band_lo; b < sig.band_hi; ++b) {
                double pos = static_cast<double>(b - sig.band_lo) / span - 0.5;
                mel(t, b) += sig.amplitude * mod + sig.tilt * pos;
            }
        }
    }
    if (cfg.noise_sigma > 0) {
        for (int r = 0; r < mel.rows(); ++r)
            for (int c = 0; c < mel.cols(); ++c) mel(r, c) += cfg.noise_sigma * noise_rng.gaussian();
    }
    return MelSpectrogram{detail::store_round(std::move(mel))};
}

inline CorpusSample generate_sample(const CorpusConfig& cfg, uint64_t index) {
    Pcg32 rng = stream_rng(cfg.seed, "sample", index);

    CorpusSample s;
    const int P = rng.range_int(cfg.min_phonemes, cfg.max_phonemes);
    s.phonemes.ids.resize(P);
    for (int i = 0; i < P; ++i) {
        int id = static_cast<int>(rng.bounded(static_cast<uint32_t>(cfg.vocab_size)));
        // adjacent repeats would make exact CTC decoding ambiguous
        while (i > 0 && id == s.phonemes.ids[i - 1])
            id = static_cast<int>(rng.bounded(static_cast<uint32_t>(cfg.vocab_size)));
        s.phonemes.ids[i] = id;
    }
    s.gt_durations.d.resize(P);
    for (int i = 0; i < P; ++i) s.gt_durations.d[i] = rng.range_int(cfg.min_duration, cfg.max_duration);
    s.speaker = static_cast<int>(rng.bounded(static_cast<uint32_t>(cfg.speakers)));
    s.emotion = static_cast<int>(rng.bounded(static_cast<uint32_t>(cfg.emotions)));

    // Lip features: per-frame phoneme descriptor + frame position signal + jitter.
    const Mat lip_cb = detail::lip_codebook(cfg);
    const int F = s.gt_durations.total_frames();
    Mat lips(F, cfg.lip_dim);
    int f = 0;
    for (int i = 0; i < P; ++i) {
        for (int k = 0; k < s.gt_durations.d[i]; ++k, ++f) {
            lips.row(f) = lip_cb.row(s.phonemes.ids[i]);
            for (int j = 0; j < cfg.lip_dim; j += 2) {
                double freq = 1.0 / std::pow(1000.0, static_cast<double>(j) / cfg.lip_dim);
                lips(f, j) += 0.5 * std::sin(freq * f);
                if (j + 1 < cfg.lip_dim) lips(f, j + 1) += 0.5 * std::cos(freq * f);
            }
        }
    }
    for (int r = 0; r < lips.rows(); ++r)
        for (int c = 0; c < lips.cols(); ++c) lips(r, c) += 0.02 * rng.gaussian();
    s.lips.feats = detail::store_round(std::move(lips));

    s.mel = render_mel(s.phonemes, s.gt_durations, s.speaker, s.emotion, cfg, rng);

    s.pitch.resize(P);
    s.energy.resize(P);
    for (int i = 0; i < P; ++i)
        detail::prosody_scalars(cfg, s.phonemes.ids[i], s.emotion, s.speaker, &s.pitch[i], &s.energy[i]);
    return s;
}

struct Corpus {
    CorpusConfig config;
    std::vector<CorpusSample> samples;

    int size() const { return static_cast<int>(samples.size()); }
};

inline Corpus generate_corpus(const CorpusConfig& cfg, int count) {
    if (count < 1) throw ConfigError("generate_corpus: count must be >= 1");
    cfg.validate();
    Corpus corpus;
    corpus.config = cfg;
    corpus.samples.reserve(count);
    for (int i = 0; i < count; ++i) corpus.samples.push_back(generate_sample(cfg, static_cast<uint64_t>(i)));
    return corpus;
}

// ---------------------------------------------------------------------------
// On-disk store: <dir>/manifest.json + <dir>/data.bin.

constexpr int kCorpusFormatVersion = 1;

inline void save_corpus(const Corpus& corpus, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    ArrayFile data;
    nlohmann::json meta = {{"seed", corpus.config.seed}, {"format_version", kCorpusFormatVersion}};
    data.meta = meta.dump();
    for (size_t i = 0; i < corpus.samples.size(); ++i) {
        const CorpusSample& s = corpus.samples[i];
        const std::string p = "s" + std::to_string(i) + ".";
        std::vector<int64_t> pho(s.phonemes.ids.begin(), s.phonemes.ids.end());
        std::vector<int64_t> dur(s.gt_durations.d.begin(), s.gt_durations.d.end());
        data.add(NamedArray::i64(p + "phonemes", pho));
        data.add(NamedArray::i64(p + "durations", dur));
        data.add(NamedArray::i64(p + "ids", {s.speaker, s.emotion}));
        data.add(NamedArray::f32(p + "lips", s.lips.feats));
        data.add(NamedArray::f32(p + "mel", s.mel.frames));
        data.add(NamedArray::f32(p + "pitch", s.pitch));
        data.add(NamedArray::f32(p + "energy", s.energy));
    }
    data.save(dir + "/data.bin");

    nlohmann::json manifest = {{"format_version", kCorpusFormatVersion},
                               {"seed", corpus.config.seed},
                               {"count", corpus.samples.size()},
                               {"config", corpus.config.to_json()},
                               {"config_hash", hex64(corpus.config.hash())},
                               {"data_checksum", hex64(data.checksum())}};
    std::ofstream out(dir + "/manifest.json");
    if (!out) throw IoError("cannot write '" + dir + "/manifest.json'");
    out << manifest.dump(2) << "\n";
}

inline Corpus load_corpus(const std::string& dir) {
    std::ifstream in(dir + "/manifest.json");
    if (!in) throw IoError("cannot open '" + dir + "/manifest.json'");
    nlohmann::json manifest = nlohmann::json::parse(in);

    if (manifest.at("format_version").get<int>() != kCorpusFormatVersion)
        throw IoError("corpus '" + dir + "': unsupported format version");

    ArrayFile data = ArrayFile::load(dir + "/data.bin");
    if (hex64(data.checksum()) != manifest.at("data_checksum").get<std::string>())
        throw IoError("corpus '" + dir + "': manifest checksum does not match payload");

    nlohmann::json meta = nlohmann::json::parse(data.meta);
    if (meta.at("seed").get<uint64_t>() != manifest.at("seed").get<uint64_t>())
        throw IoError("corpus '" + dir + "': manifest seed does not match payload seed");

    Corpus corpus;
    corpus.config = CorpusConfig::from_json(manifest.at("config"));
    const size_t count = manifest.at("count").get<size_t>();
    corpus.samples.resize(count);
    for (size_t i = 0; i < count; ++i) {
        const std::string p = "s" + std::to_string(i) + ".";
        CorpusSample& s = corpus.samples[i];
        for (int64_t v : data.require(p + "phonemes").as_i64()) s.phonemes.ids.push_back(static_cast<int>(v));
        for (int64_t v : data.require(p + "durations").as_i64()) s.gt_durations.d.push_back(static_cast<int>(v));
        auto ids = data.require(p + "ids").as_i64();
        s.speaker = static_cast<int>(ids.at(0));
        s.emotion = static_cast<int>(ids.at(1));
        s.lips.feats = data.require(p + "lips").as_matrix();
        s.mel.frames = data.require(p + "mel").as_matrix();
        s.pitch = data.require(p + "pitch").as_matrix().col(0);
        s.energy = data.require(p + "energy").as_matrix().col(0);
    }
    return corpus;
}

// Mean energy inside an emotion band; the quantity guidance is expected to move.
inline double band_mean_energy(const Mat& mel, const EmotionSignature& sig) {
    if (mel.rows() == 0) return 0.0;
    return mel.middleCols(sig.band_lo, sig.band_hi - sig.band_lo).mean();
}

}  // namespace emodub
