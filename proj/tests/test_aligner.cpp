#include <catch2/catch_amalgamated.hpp>

#include "emodub/aligner.hpp"
#include "emodub/nn.hpp"
#include "test_support.hpp"

using namespace emodub;
using test_support::random_durations;
using test_support::random_matrix;
using test_support::random_stochastic_rows;
using test_support::rel_err;

TEST_CASE("gt mask for trivial duration vectors") {
    GtAlignmentMask m1 = build_gt_mask(DurationVector{{1}});
    REQUIRE(m1.m.rows() == 1);
    REQUIRE(m1.m.cols() == 1);
    CHECK(m1.m(0, 0) == 1.0);

    GtAlignmentMask m2 = build_gt_mask(DurationVector{{2, 1}});
    Mat expect(3, 2);
    expect << 1, 0, 1, 0, 0, 1;
    CHECK(m2.m == expect);
}

TEST_CASE("gt mask invariants hold for random durations and round trip") {
    Pcg32 rng(21, 0);
    for (int i = 0; i < 300; ++i) {
        DurationVector d = random_durations(rng);
        GtAlignmentMask mask = build_gt_mask(d);
        CHECK(mask.check_invariants().empty());
        CHECK(mask_to_durations(mask).d == d.d);
    }
    CHECK_THROWS_AS(build_gt_mask(DurationVector{{2, 0}}), ShapeError);
    CHECK_THROWS_AS(build_gt_mask(DurationVector{}), ShapeError);
}

TEST_CASE("length regulator repeats rows in order") {
    Mat seq(2, 3);
    seq << 1, 2, 3, 4, 5, 6;
    Mat out = length_regulate(DurationVector{{2, 1}}, seq);
    REQUIRE(out.rows() == 3);
    CHECK(out.row(0) == seq.row(0));
    CHECK(out.row(1) == seq.row(0));
    CHECK(out.row(2) == seq.row(1));

    Mat id = length_regulate(DurationVector{{1, 1}}, seq);
    CHECK(id == seq);
}

TEST_CASE("length regulator properties: output length and block-pool inverse") {
    Pcg32 rng(22, 0);
    for (int i = 0; i < 100; ++i) {
        DurationVector d = random_durations(rng, 6, 5);
        Mat seq = random_matrix(rng, d.size(), 4);
        Mat out = length_regulate(d, seq);
        REQUIRE(out.rows() == d.total_frames());
        int f = 0;
        for (int p = 0; p < d.size(); ++p) {
            Mat block = out.middleRows(f, d.d[p]);
            for (int k = 0; k < d.d[p]; ++k) CHECK(block.row(k) == seq.row(p));
            Eigen::RowVectorXd pooled = block.colwise().mean();
            CHECK((pooled - seq.row(p)).cwiseAbs().maxCoeff() < 1e-12);
            f += d.d[p];
        }
    }
    CHECK_THROWS_AS(length_regulate(DurationVector{{1, 2}}, Mat::Ones(3, 2)), ShapeError);
}

TEST_CASE("contrastive loss closed form at P=2, F=2 with uniform weights") {
    const double tau = 0.1;
    Mat w = Mat::Constant(2, 2, 0.5);
    Mat mask(2, 2);
    mask << 1, 0, 0, 1;
    // num = 2 exp(5) + 2 exp(0); den = 4 exp(5); L = log(den) - log(num)
    double expect = std::log(4.0 * std::exp(5.0)) - std::log(2.0 * std::exp(5.0) + 2.0);
    double got = contrastive_loss_value(w, mask, tau);
    CHECK(rel_err(got, expect) < 1e-12);
    CHECK(std::isfinite(got));
}

TEST_CASE("moving probability mass onto the mask decreases the loss") {
    Mat mask(2, 2);
    mask << 1, 0, 0, 1;
    Mat spread(2, 2), peaked(2, 2);
    spread << 0.5, 0.5, 0.5, 0.5;
    peaked << 0.9, 0.1, 0.1, 0.9;
    CHECK(contrastive_loss_value(peaked, mask, 0.1) < contrastive_loss_value(spread, mask, 0.1));
}

TEST_CASE("contrastive loss gradient matches finite differences") {
    Pcg32 rng(23, 0);
    const double tau = 0.1;
    int checked = 0;
    while (checked < 60) {
        int F = rng.range_int(2, 5);
        int P = rng.range_int(1, 4);
        if (F < P) continue;
        Mat w = random_stochastic_rows(rng, F, P);
        DurationVector d;
        d.d.assign(P, 1);
        for (int f = P; f < F; ++f) ++d.d[rng.bounded(static_cast<uint32_t>(P))];
        Mat mask = build_gt_mask(d).m;
        Mat g = contrastive_loss_grad(w, mask, tau);
        auto loss = [&](const Mat& x) { return contrastive_loss_value(x, mask, tau); };
        int r = static_cast<int>(rng.bounded(static_cast<uint32_t>(F)));
        int c = static_cast<int>(rng.bounded(static_cast<uint32_t>(P)));
        double fd = test_support::central_diff(loss, w, r, c);
        INFO("F=" << F << " P=" << P << " entry " << r << "," << c);
        CHECK(rel_err(g(r, c), fd, 1e-9) < 1e-4);
        ++checked;
    }
}

TEST_CASE("contrastive loss autodiff op matches the plain gradient") {
    Pcg32 rng(24, 0);
    Mat w = random_stochastic_rows(rng, 4, 3);
    Mat mask = build_gt_mask(DurationVector{{2, 1, 1}}).m;
    ad::Var wv = ad::leaf(w);
    ad::Var loss = contrastive_loss(wv, mask, 0.1);
    ad::backward(loss);
    CHECK(loss->scalar() == contrastive_loss_value(w, mask, 0.1));
    CHECK((wv->grad - contrastive_loss_grad(w, mask, 0.1)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("contrastive loss rejects bad input") {
    Mat w = Mat::Constant(2, 2, 0.5);
    Mat mask = Mat::Identity(2, 2);
    CHECK_THROWS_AS(contrastive_loss_value(w, mask, 0.0), ConfigError);
    CHECK_THROWS_AS(contrastive_loss_value(w, Mat::Identity(3, 3), 0.1), ShapeError);
    w(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(contrastive_loss_value(w, mask, 0.1), ShapeError);
}

TEST_CASE("legacy denominator form reproduces the printed equation") {
    Mat w = Mat::Constant(2, 2, 0.5);
    Mat mask(2, 2);
    mask << 1, 0, 0, 1;
    double expect = std::log(4.0 * std::exp(0.5)) - std::log(2.0 * std::exp(5.0) + 2.0);
    CHECK(rel_err(contrastive_loss_value(w, mask, 0.1, false), expect) < 1e-12);
}

TEST_CASE("mas handles degenerate shapes") {
    CHECK(mas(AlignmentWeights{Mat::Constant(3, 1, 1.0)}).d == std::vector<int>{3});

    Mat diag = Mat::Constant(3, 3, 0.01);
    diag(0, 0) = diag(1, 1) = diag(2, 2) = 0.98;
    CHECK(mas(AlignmentWeights{diag}).d == std::vector<int>{1, 1, 1});

    CHECK_THROWS_AS(mas(AlignmentWeights{Mat::Constant(2, 3, 0.33)}), ShapeError);
}

TEST_CASE("mas oracle enumerates the right number of paths") {
    Pcg32 rng(25, 0);
    Mat w = random_stochastic_rows(rng, 5, 3);
    long examined = 0;
    mas_oracle(AlignmentWeights{w}, 100000, &examined);
    CHECK(examined == 6);  // C(4, 2)

    long single = 0;
    mas_oracle(AlignmentWeights{random_stochastic_rows(rng, 6, 1)}, 100000, &single);
    CHECK(single == 1);

    CHECK_THROWS_AS(mas_oracle(AlignmentWeights{random_stochastic_rows(rng, 40, 20)}, 1000), ConfigError);
}

TEST_CASE("mas agrees with the exhaustive oracle on random instances") {
    Pcg32 rng(26, 0);
    for (int i = 0; i < 200; ++i) {
        int P = rng.range_int(1, 5);
        int F = rng.range_int(P, 9);
        Mat w = random_stochastic_rows(rng, F, P);
        AlignmentWeights weights{w};
        DurationVector fast = mas(weights);
        DurationVector slow = mas_oracle(weights);
        REQUIRE(fast.total_frames() == F);
        CHECK(std::abs(mas_score(w, fast) - mas_score(w, slow)) <= 1e-9);
        CHECK(fast.d == slow.d);
    }
}

TEST_CASE("cross attention fulfills the aligner contract") {
    const int dm = 8;
    nn::ParamStore ps(77);
    nn::MultiheadAttention mha(ps, "att", dm, 2);
    Pcg32 rng(27, 0);

    SECTION("single phoneme gets all the attention") {
        Mat lips = random_matrix(rng, 4, dm);
        Mat pros = random_matrix(rng, 1, dm);
        nn::MhaOut out = mha.fwd(ad::constant(lips), ad::constant(pros));
        REQUIRE(out.weights->val.cols() == 1);
        for (int f = 0; f < 4; ++f) CHECK(out.weights->val(f, 0) == 1.0);
        for (int f = 1; f < 4; ++f)
            CHECK((out.out->val.row(f) - out.out->val.row(0)).cwiseAbs().maxCoeff() < 1e-12);
    }

    SECTION("identical rows produce identical context rows") {
        Mat lips = random_matrix(rng, 1, dm).replicate(5, 1);
        Mat pros = random_matrix(rng, 1, dm).replicate(3, 1);
        nn::MhaOut out = mha.fwd(ad::constant(lips), ad::constant(pros));
        for (int f = 1; f < 5; ++f)
            CHECK((out.out->val.row(f) - out.out->val.row(0)).cwiseAbs().maxCoeff() < 1e-12);
    }

    SECTION("rows of the averaged weights are probability distributions") {
        Mat lips = random_matrix(rng, 3, dm);
        Mat pros = random_matrix(rng, 2, dm);
        nn::MhaOut out = mha.fwd(ad::constant(lips), ad::constant(pros));
        AlignmentWeights w{out.weights->val};
        CHECK(w.rows_stochastic(1e-5));
        REQUIRE(out.out->val.rows() == 3);
    }

    SECTION("head divisibility is enforced") {
        nn::ParamStore ps2(1);
        CHECK_THROWS_AS(nn::MultiheadAttention(ps2, "bad", 10, 4), ShapeError);
    }
}
