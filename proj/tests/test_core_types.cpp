#include <catch2/catch_amalgamated.hpp>

#include "emodub/core_types.hpp"
#include "emodub/corpus.hpp"
#include "test_support.hpp"

using namespace emodub;

TEST_CASE("mel_ratio computes exact integer ratios") {
    CHECK(mel_ratio(16000, 160, 25) == 4);
    CHECK(mel_ratio(16000, 160, 50) == 2);
}

TEST_CASE("mel_ratio rejects non-integral and non-positive configs") {
    try {
        mel_ratio(16000, 333, 25);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        std::string msg = e.what();
        CHECK(msg.find("16000") != std::string::npos);
        CHECK(msg.find("333") != std::string::npos);
        CHECK(msg.find("25") != std::string::npos);
    }
    CHECK_THROWS_AS(mel_ratio(0, 160, 25), ConfigError);
    CHECK_THROWS_AS(mel_ratio(16000, -1, 25), ConfigError);
}

TEST_CASE("validate_sample accepts generated samples") {
    CorpusConfig cfg;
    cfg.seed = 3;
    CorpusSample s = generate_sample(cfg, 0);
    CHECK(validate_sample(s, cfg.shape()).ok());
}

TEST_CASE("validate_sample names the violated type") {
    CorpusConfig cfg;
    cfg.seed = 3;

    SECTION("duration sum != F") {
        CorpusSample s = generate_sample(cfg, 1);
        s.gt_durations.d.back() += 1;  // sum now exceeds the lip frame count
        ValidationReport rep = validate_sample(s, cfg.shape());
        REQUIRE_FALSE(rep.ok());
        bool named = false;
        for (const auto& v : rep.violations) named = named || v.find("DurationVector") != std::string::npos;
        CHECK(named);
    }

    SECTION("mel length off by one") {
        CorpusSample s = generate_sample(cfg, 2);
        Mat longer(s.mel.frames.rows() + 1, s.mel.frames.cols());
        longer.topRows(s.mel.frames.rows()) = s.mel.frames;
        longer.row(longer.rows() - 1).setZero();
        s.mel.frames = longer;
        ValidationReport rep = validate_sample(s, cfg.shape());
        REQUIRE(rep.violations.size() == 1);
        CHECK(rep.violations[0].find("MelSpectrogram") != std::string::npos);
    }
}

TEST_CASE("validate_sample is total on malformed numeric content") {
    CorpusConfig cfg;
    CorpusSample s = generate_sample(cfg, 4);
    s.mel.frames(0, 0) = std::numeric_limits<double>::quiet_NaN();
    s.lips.feats(0, 0) = std::numeric_limits<double>::infinity();
    ValidationReport rep;
    REQUIRE_NOTHROW(rep = validate_sample(s, cfg.shape()));
    CHECK(rep.violations.size() == 2);
}
