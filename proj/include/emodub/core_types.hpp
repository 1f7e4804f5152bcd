#pragma once

// Domain types shared by the whole pipeline, plus the shape arithmetic that
// ties phoneme durations (video frames) to mel frames.

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "emodub/common.hpp"

namespace emodub {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Phoneme ids, each in [0, vocab_size).
struct PhonemeSequence {
    std::vector<int> ids;

    int length() const { return static_cast<int>(ids.size()); }
};

// Per-phoneme frame counts at video rate. Every entry >= 1; the sum is the
// video frame count F.
struct DurationVector {
    std::vector<int> d;

    int size() const { return static_cast<int>(d.size()); }
    int total_frames() const {
        int f = 0;
        for (int x : d) f += x;
        return f;
    }
};

// Precomputed per-video-frame lip descriptors, F x d_lip.
struct LipFeatureSequence {
    Mat feats;

    int frames() const { return static_cast<int>(feats.rows()); }
};

// M_l x d_a mel frames where M_l = r * F.
struct MelSpectrogram {
    Mat frames;

    int length() const { return static_cast<int>(frames.rows()); }
    int bins() const { return static_cast<int>(frames.cols()); }
};

// User control triple {c, alpha, beta}; gamma lives in GuidanceParams.
struct EmotionInstruction {
    int emotion = 0;
    double alpha = 0.0;
    double beta = 0.0;
};

// Row of the learned speaker lookup table.
struct SpeakerEmbedding {
    int id = 0;
    Vec vector;
};

struct CorpusSample {
    PhonemeSequence phonemes;
    DurationVector gt_durations;
    LipFeatureSequence lips;
    MelSpectrogram mel;
    int speaker = 0;
    int emotion = 0;
    Vec pitch;   // per phoneme
    Vec energy;  // per phoneme
};

// The subset of corpus configuration needed to validate shapes.
struct ShapeConfig {
    int vocab_size = 0;
    int emotions = 0;
    int speakers = 0;
    int mel_ratio = 1;
    int mel_bins = 0;
    int lip_dim = 0;
};

// Mel frames per video frame. Only exact integer ratios are representable;
// anything else is a configuration mistake worth failing loudly on.
inline int mel_ratio(int sample_rate, int hop_length, int fps) {
    if (sample_rate <= 0 || hop_length <= 0 || fps <= 0)
        throw ConfigError("mel_ratio: sample_rate, hop_length and fps must all be positive");
    long long denom = static_cast<long long>(hop_length) * fps;
    if (sample_rate % denom != 0)
        throw ConfigError("mel_ratio: sample_rate " + std::to_string(sample_rate) + " / (hop_length " +
                          std::to_string(hop_length) + " * fps " + std::to_string(fps) +
                          ") is not an integer");
    return static_cast<int>(sample_rate / denom);
}

struct ValidationReport {
    std::vector<std::string> violations;

    bool ok() const { return violations.empty(); }
};

// Total: reports every violated invariant instead of throwing.
inline ValidationReport validate_sample(const CorpusSample& s, const ShapeConfig& cfg) {
    ValidationReport rep;
    auto bad = [&rep](const std::string& msg) { rep.violations.push_back(msg); };

    const int P = s.phonemes.length();
    if (P < 1) bad("PhonemeSequence: empty (P must be >= 1)");
    for (int id : s.phonemes.ids)
        if (id < 0 || id >= cfg.vocab_size) {
            bad("PhonemeSequence: id " + std::to_string(id) + " outside [0, " +
                std::to_string(cfg.vocab_size) + ")");
            break;
        }

    if (s.gt_durations.size() != P)
        bad("DurationVector: length " + std::to_string(s.gt_durations.size()) + " != P " + std::to_string(P));
    for (int d : s.gt_durations.d)
        if (d < 1) {
            bad("DurationVector: entry " + std::to_string(d) + " < 1");
            break;
        }
    const int F = s.gt_durations.total_frames();
    if (s.lips.frames() != F)
        bad("DurationVector: sum of durations " + std::to_string(F) + " != lip frame count " +
            std::to_string(s.lips.frames()));

    if (s.lips.feats.cols() != cfg.lip_dim)
        bad("LipFeatureSequence: feature dim " + std::to_string(s.lips.feats.cols()) + " != " +
            std::to_string(cfg.lip_dim));
    if (s.lips.feats.size() > 0 && !s.lips.feats.allFinite()) bad("LipFeatureSequence: non-finite values");

    if (s.mel.length() != cfg.mel_ratio * s.lips.frames())
        bad("MelSpectrogram: length " + std::to_string(s.mel.length()) + " != r*F = " +
            std::to_string(cfg.mel_ratio * s.lips.frames()));
    if (s.mel.bins() != cfg.mel_bins)
        bad("MelSpectrogram: " + std::to_string(s.mel.bins()) + " bins, expected " +
            std::to_string(cfg.mel_bins));
    if (s.mel.frames.size() > 0 && !s.mel.frames.allFinite()) bad("MelSpectrogram: non-finite values");

    if (s.speaker < 0 || s.speaker >= cfg.speakers)
        bad("SpeakerEmbedding: speaker id " + std::to_string(s.speaker) + " outside [0, " +
            std::to_string(cfg.speakers) + ")");
    if (s.emotion < 0 || s.emotion >= cfg.emotions)
        bad("EmotionInstruction: emotion id " + std::to_string(s.emotion) + " outside [0, " +
            std::to_string(cfg.emotions) + ")");

    if (s.pitch.size() != P)
        bad("CorpusSample: pitch length " + std::to_string(s.pitch.size()) + " != P " + std::to_string(P));
    if (s.energy.size() != P)
        bad("CorpusSample: energy length " + std::to_string(s.energy.size()) + " != P " + std::to_string(P));

    return rep;
}

}  // namespace emodub
