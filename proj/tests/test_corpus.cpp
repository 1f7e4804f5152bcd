#include <catch2/catch_amalgamated.hpp>

#include <fstream>

#include "emodub/corpus.hpp"
#include "test_support.hpp"

using namespace emodub;

TEST_CASE("corpus generation is a pure function of config and count") {
    CorpusConfig cfg;
    cfg.seed = 1;
    Corpus a = generate_corpus(cfg, 3);
    Corpus b = generate_corpus(cfg, 3);
    std::string da = test_support::scratch_dir("corpus_det_a");
    std::string db = test_support::scratch_dir("corpus_det_b");
    save_corpus(a, da);
    save_corpus(b, db);
    auto slurp = [](const std::string& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    };
    CHECK(slurp(da + "/data.bin") == slurp(db + "/data.bin"));
    CHECK(slurp(da + "/manifest.json") == slurp(db + "/manifest.json"));
}

TEST_CASE("emotion ids cover exactly the configured classes") {
    CorpusConfig cfg;
    cfg.emotions = 7;
    cfg.seed = 0;
    Corpus c = generate_corpus(cfg, 300);
    std::vector<bool> seen(7, false);
    for (const auto& s : c.samples) {
        REQUIRE(s.emotion >= 0);
        REQUIRE(s.emotion < 7);
        seen[s.emotion] = true;
    }
    for (int e = 0; e < 7; ++e) CHECK(seen[e]);
}

TEST_CASE("zero data noise makes renders a function of the discrete inputs") {
    CorpusConfig cfg;
    cfg.noise_sigma = 0.0;
    cfg.seed = 11;
    PhonemeSequence pho{{3, 1, 4}};
    DurationVector dur{{2, 1, 3}};
    Pcg32 r1(1, 1), r2(2, 2);
    MelSpectrogram a = render_mel(pho, dur, 0, 2, cfg, r1);
    MelSpectrogram b = render_mel(pho, dur, 0, 2, cfg, r2);
    CHECK(a.frames == b.frames);
}

TEST_CASE("different emotions differ exactly inside their signature bands") {
    CorpusConfig cfg;
    cfg.noise_sigma = 0.0;
    cfg.seed = 11;
    PhonemeSequence pho{{3, 1, 4, 2}};
    DurationVector dur{{2, 1, 3, 1}};
    Pcg32 rng(0, 0);
    for (int e1 = 0; e1 < cfg.emotions; ++e1) {
        int e2 = (e1 + 3) % cfg.emotions;
        if (e1 == e2) continue;
        Mat diff = render_mel(pho, dur, 1, e1, cfg, rng).frames - render_mel(pho, dur, 1, e2, cfg, rng).frames;
        EmotionSignature s1 = emotion_signature(cfg, e1);
        EmotionSignature s2 = emotion_signature(cfg, e2);
        for (int t = 0; t < diff.rows(); ++t) {
            for (int b = 0; b < diff.cols(); ++b) {
                bool inside = (b >= s1.band_lo && b < s1.band_hi) || (b >= s2.band_lo && b < s2.band_hi);
                if (!inside) REQUIRE(diff(t, b) == 0.0);
            }
        }
        REQUIRE(diff.cwiseAbs().maxCoeff() > 0.1);
    }
}

TEST_CASE("signature bands are pairwise disjoint") {
    CorpusConfig cfg;
    for (int e1 = 0; e1 < cfg.emotions; ++e1) {
        EmotionSignature a = emotion_signature(cfg, e1);
        REQUIRE(a.band_lo < a.band_hi);
        REQUIRE(a.band_hi <= cfg.mel_bins);
        for (int e2 = e1 + 1; e2 < cfg.emotions; ++e2) {
            EmotionSignature b = emotion_signature(cfg, e2);
            bool disjoint = a.band_hi <= b.band_lo || b.band_hi <= a.band_lo;
            REQUIRE(disjoint);
        }
    }
}

// Margin frozen from a seed-0 calibration run; the emotion's own band must
// carry visibly more energy than the same band under other emotions.
TEST_CASE("band energy separates emotions by a frozen margin") {
    CorpusConfig cfg;
    cfg.seed = 0;
    Corpus c = generate_corpus(cfg, 200);
    for (int e = 0; e < cfg.emotions; ++e) {
        EmotionSignature sig = emotion_signature(cfg, e);
        double own = 0, other = 0;
        int n_own = 0, n_other = 0;
        for (const auto& s : c.samples) {
            double v = band_mean_energy(s.mel.frames, sig);
            if (s.emotion == e) {
                own += v;
                ++n_own;
            } else {
                other += v;
                ++n_other;
            }
        }
        REQUIRE(n_own > 0);
        double margin = own / n_own - other / n_other;
        CHECK(margin >= 0.8);
    }
}

TEST_CASE("linear probe on band energies classifies emotion") {
    CorpusConfig cfg;
    cfg.seed = 0;
    Corpus c = generate_corpus(cfg, 500);
    const int N = cfg.emotions;
    const int fit_n = 400;

    Mat X(c.size(), N + 1);
    Mat Y = Mat::Zero(c.size(), N);
    for (int i = 0; i < c.size(); ++i) {
        for (int e = 0; e < N; ++e)
            X(i, e) = band_mean_energy(c.samples[i].mel.frames, emotion_signature(cfg, e));
        X(i, N) = 1.0;
        Y(i, c.samples[i].emotion) = 1.0;
    }
    Mat Xf = X.topRows(fit_n), Yf = Y.topRows(fit_n);
    Mat W = (Xf.transpose() * Xf + 1e-6 * Mat::Identity(N + 1, N + 1)).ldlt().solve(Xf.transpose() * Yf);

    int hit = 0;
    for (int i = fit_n; i < c.size(); ++i) {
        Eigen::RowVectorXd scores = X.row(i) * W;
        int arg;
        scores.maxCoeff(&arg);
        if (arg == c.samples[i].emotion) ++hit;
    }
    double acc = static_cast<double>(hit) / (c.size() - fit_n);
    CHECK(acc >= 0.95);
}

TEST_CASE("corpus store round trip is lossless") {
    CorpusConfig cfg;
    cfg.seed = 9;
    Corpus a = generate_corpus(cfg, 5);
    std::string dir = test_support::scratch_dir("corpus_rt");
    save_corpus(a, dir);
    Corpus b = load_corpus(dir);
    REQUIRE(b.size() == a.size());
    CHECK(b.config.to_json() == a.config.to_json());
    for (int i = 0; i < a.size(); ++i) {
        CHECK(b.samples[i].phonemes.ids == a.samples[i].phonemes.ids);
        CHECK(b.samples[i].gt_durations.d == a.samples[i].gt_durations.d);
        CHECK(b.samples[i].speaker == a.samples[i].speaker);
        CHECK(b.samples[i].emotion == a.samples[i].emotion);
        CHECK(b.samples[i].lips.feats == a.samples[i].lips.feats);
        CHECK(b.samples[i].mel.frames == a.samples[i].mel.frames);
        CHECK(b.samples[i].pitch == a.samples[i].pitch);
        CHECK(b.samples[i].energy == a.samples[i].energy);
    }
}

TEST_CASE("corpus store rejects tampering") {
    CorpusConfig cfg;
    cfg.seed = 9;
    Corpus a = generate_corpus(cfg, 3);
    std::string dir = test_support::scratch_dir("corpus_bad");
    save_corpus(a, dir);

    SECTION("truncated payload") {
        std::ifstream in(dir + "/data.bin", std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        in.close();
        std::ofstream out(dir + "/data.bin", std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<long>(bytes.size() * 2 / 3));
        out.close();
        CHECK_THROWS_AS(load_corpus(dir), IoError);
    }

    SECTION("manifest seed does not match payload seed") {
        std::ifstream in(dir + "/manifest.json");
        nlohmann::json manifest = nlohmann::json::parse(in);
        in.close();
        manifest["seed"] = 12345;
        std::ofstream out(dir + "/manifest.json", std::ios::trunc);
        out << manifest.dump(2);
        out.close();
        CHECK_THROWS_AS(load_corpus(dir), IoError);
    }

    SECTION("unsupported version") {
        std::ifstream in(dir + "/manifest.json");
        nlohmann::json manifest = nlohmann::json::parse(in);
        in.close();
        manifest["format_version"] = 999;
        std::ofstream out(dir + "/manifest.json", std::ios::trunc);
        out << manifest.dump(2);
        out.close();
        CHECK_THROWS_AS(load_corpus(dir), IoError);
    }
}

TEST_CASE("invalid corpus configs are rejected") {
    CorpusConfig cfg;
    cfg.emotions = 1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = CorpusConfig{};
    cfg.max_duration = 7;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = CorpusConfig{};
    cfg.noise_sigma = -0.1;
    CHECK_THROWS_AS(generate_corpus(cfg, 1), ConfigError);
    CHECK_THROWS_AS(generate_corpus(CorpusConfig{}, 0), ConfigError);
}
