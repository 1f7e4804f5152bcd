#include <catch2/catch_amalgamated.hpp>

#include "emodub/guidance.hpp"
#include "test_support.hpp"

using namespace emodub;
using test_support::random_matrix;
using test_support::rel_err;

namespace {

ClassifierConfig tiny_classifier_config(int classes = 4, int bins = 12) {
    ClassifierConfig c;
    c.layers = 3;
    c.channels = 8;
    c.kernel = 3;
    c.classes = classes;
    c.mel_bins = bins;
    return c;
}

}  // namespace

TEST_CASE("a zeroed head yields the uniform distribution") {
    ClassifierConfig cfg = tiny_classifier_config(7, 10);
    EmotionClassifier psi(cfg, 3);
    psi.store.params().at("head.W")->val.setZero();
    psi.store.params().at("head.b")->val.setZero();
    Pcg32 rng(61, 0);
    Eigen::VectorXd p = psi.probs(random_matrix(rng, 9, 10), 0.5);
    REQUIRE(p.size() == 7);
    for (int i = 0; i < 7; ++i) CHECK(rel_err(p[i], 1.0 / 7.0) < 1e-12);
}

TEST_CASE("classifier probabilities sum to one") {
    EmotionClassifier psi(tiny_classifier_config(), 5);
    Pcg32 rng(62, 0);
    for (int i = 0; i < 10; ++i) {
        Eigen::VectorXd p = classifier_logits(psi, random_matrix(rng, 8, 12), rng.uniform());
        CHECK(std::abs(p.sum() - 1.0) < 1e-6);
        for (int k = 0; k < p.size(); ++k) CHECK(p[k] >= 0.0);
    }
    CHECK_THROWS_AS(classifier_logits(psi, random_matrix(rng, 8, 9), 0.5), ShapeError);
    CHECK_THROWS_AS(classifier_logits(psi, random_matrix(rng, 8, 12), 1.5), ConfigError);
}

TEST_CASE("grad_log_prob matches finite differences") {
    EmotionClassifier psi(tiny_classifier_config(), 6);
    Pcg32 rng(63, 0);
    Mat x = random_matrix(rng, 7, 12);
    const double t = 0.4;
    Mat g = grad_log_prob(psi, x, t, 2);
    REQUIRE(g.rows() == x.rows());
    REQUIRE(g.cols() == x.cols());

    auto f = [&](const Mat& xx) {
        return std::log(psi.probs(xx, t)[2]);
    };
    int checked = 0;
    while (checked < 30) {
        int r = static_cast<int>(rng.bounded(static_cast<uint32_t>(x.rows())));
        int c = static_cast<int>(rng.bounded(static_cast<uint32_t>(x.cols())));
        if (std::abs(g(r, c)) < 1e-6) continue;
        double fd = test_support::central_diff(f, x, r, c, 1e-5);
        INFO("entry " << r << "," << c);
        CHECK(rel_err(g(r, c), fd) < 1e-3);
        ++checked;
    }
}

TEST_CASE("one-hot weights reproduce the class-id gradient") {
    EmotionClassifier psi(tiny_classifier_config(), 8);
    Pcg32 rng(64, 0);
    Mat x = random_matrix(rng, 6, 12);
    Eigen::VectorXd onehot = Eigen::VectorXd::Zero(4);
    onehot[1] = 3.7;  // renormalized internally
    Mat g_id = grad_log_prob(psi, x, 0.6, 1);
    Mat g_w = grad_log_prob(psi, x, 0.6, onehot);
    CHECK((g_id - g_w).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("grad_log_prob validates targets") {
    EmotionClassifier psi(tiny_classifier_config(), 9);
    Pcg32 rng(65, 0);
    Mat x = random_matrix(rng, 5, 12);
    CHECK_THROWS_AS(grad_log_prob(psi, x, 0.5, 9), ConfigError);
    CHECK_THROWS_AS(grad_log_prob(psi, x, 0.5, Eigen::VectorXd::Zero(4)), ConfigError);
    Eigen::VectorXd neg = Eigen::VectorXd::Ones(4);
    neg[0] = -1;
    CHECK_THROWS_AS(grad_log_prob(psi, x, 0.5, neg), ConfigError);
    CHECK_THROWS_AS(grad_log_prob(psi, x, 0.5, Eigen::VectorXd::Ones(5)), ShapeError);
}

TEST_CASE("pngm degeneracy and linearity") {
    EmotionClassifier psi(tiny_classifier_config(), 10);
    Pcg32 rng(66, 0);
    Mat x = random_matrix(rng, 6, 12);
    Mat v = random_matrix(rng, 6, 12);

    SECTION("gamma = 0 returns v untouched") {
        GuidanceParams gp{0.0, EmotionInstruction{1, 3.0, 1.0}};
        CHECK(pngm_velocity(v, x, 0.5, psi, gp) == v);
    }

    SECTION("alpha = beta = 0 returns v untouched") {
        GuidanceParams gp{15.0, EmotionInstruction{1, 0.0, 0.0}};
        CHECK(pngm_velocity(v, x, 0.5, psi, gp) == v);
    }

    SECTION("alpha=1, beta=0, gamma=1 adds exactly the positive gradient") {
        GuidanceParams gp{1.0, EmotionInstruction{2, 1.0, 0.0}};
        Mat vt = pngm_velocity(v, x, 0.5, psi, gp);
        Mat g_pos = grad_log_prob(psi, x, 0.5, 2);
        CHECK((vt - v - g_pos).cwiseAbs().maxCoeff() < 1e-12);
    }

    SECTION("the guided field is linear in alpha") {
        const double gamma = 15.0, beta = 0.7, a1 = 1.3, a2 = 2.1;
        GuidanceParams gp1{gamma, EmotionInstruction{0, a1, beta}};
        GuidanceParams gp12{gamma, EmotionInstruction{0, a1 + a2, beta}};
        Mat diff = pngm_velocity(v, x, 0.3, psi, gp12) - pngm_velocity(v, x, 0.3, psi, gp1);
        Mat expect = gamma * a2 * grad_log_prob(psi, x, 0.3, 0);
        double scale = std::max(1.0, expect.cwiseAbs().maxCoeff());
        CHECK((diff - expect).cwiseAbs().maxCoeff() / scale < 1e-9);
    }

    SECTION("invalid instructions are rejected with the valid id list") {
        GuidanceParams gp{15.0, EmotionInstruction{11, 1.0, 0.0}};
        try {
            pngm_velocity(v, x, 0.5, psi, gp);
            FAIL("expected ConfigError");
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find("0, 1, 2, 3") != std::string::npos);
        }
        GuidanceParams neg{15.0, EmotionInstruction{1, -1.0, 0.0}};
        CHECK_THROWS_AS(pngm_velocity(v, x, 0.5, psi, neg), ConfigError);
    }
}

TEST_CASE("intensity score basics") {
    ClassifierConfig cfg = tiny_classifier_config(7, 10);
    EmotionClassifier psi(cfg, 12);
    psi.store.params().at("head.W")->val.setZero();
    psi.store.params().at("head.b")->val.setZero();
    Pcg32 rng(67, 0);
    std::vector<Mat> mels{random_matrix(rng, 6, 10), random_matrix(rng, 9, 10)};
    CHECK(rel_err(intensity_score(psi, mels, 3), 1.0 / 7.0) < 1e-12);

    EmotionClassifier real_psi(tiny_classifier_config(4, 12), 13);
    Mat one = random_matrix(rng, 8, 12);
    CHECK(intensity_score(real_psi, {one}, 2) == real_psi.probs(one, 1.0)[2]);
    CHECK_THROWS_AS(intensity_score(real_psi, {}, 0), ConfigError);
}

TEST_CASE("classifier training is deterministic and learns the synthetic signatures") {
    CorpusConfig cc;
    cc.emotions = 3;
    cc.speakers = 2;
    cc.vocab_size = 6;
    cc.mel_bins = 24;
    cc.min_phonemes = 2;
    cc.max_phonemes = 4;
    cc.max_duration = 3;
    cc.noise_sigma = 0.02;
    cc.seed = 5;
    Corpus corpus = generate_corpus(cc, 60);

    ClassifierConfig cfg = tiny_classifier_config(3, 24);
    ClassifierTrainConfig tc;
    tc.steps = 500;
    tc.batch = 4;
    tc.lr = 2e-3;
    tc.seed = 11;

    ClassifierTrainReport rep1, rep2;
    EmotionClassifier a = train_classifier(corpus, cfg, tc, &rep1);
    EmotionClassifier b = train_classifier(corpus, cfg, tc, &rep2);
    for (const auto& [name, p] : a.store.params())
        REQUIRE(p->val == b.store.params().at(name)->val);
    CHECK(rep1.heldout_accuracy == rep2.heldout_accuracy);
    CHECK(rep1.heldout_accuracy >= 0.6);  // small run, separable bands

    Corpus single = corpus;
    for (auto& s : single.samples) s.emotion = 0;
    CHECK_THROWS_AS(train_classifier(single, cfg, tc), ConfigError);
}

TEST_CASE("classifier checkpoint round trip preserves behaviour") {
    EmotionClassifier psi(tiny_classifier_config(), 21);
    // touch the bn running stats so buffers are non-trivial
    Pcg32 rng(68, 0);
    Mat x = random_matrix(rng, 10, 12);
    psi.logits_var(ad::constant(x), 0.5, true, &rng);

    std::string dir = test_support::scratch_dir("clf_ckpt");
    save_classifier(psi, dir);
    EmotionClassifier back = load_classifier(dir);
    Mat probe = random_matrix(rng, 7, 12);
    CHECK(psi.probs(probe, 0.3) == back.probs(probe, 0.3));

    nlohmann::json manifest = read_manifest(dir);
    CHECK(manifest.at("classes").get<int>() == 4);
    CHECK(manifest.contains("arch_hash"));
}
