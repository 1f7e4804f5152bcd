#include <catch2/catch_amalgamated.hpp>

#include "emodub/flow.hpp"
#include "test_support.hpp"

using namespace emodub;
using test_support::random_matrix;
using test_support::rel_err;

TEST_CASE("sample_path endpoint and plug-in identities") {
    Pcg32 rng(41, 0);
    Mat x0 = random_matrix(rng, 4, 3);
    Mat M = random_matrix(rng, 4, 3);

    PathSample p0 = sample_path(x0, M, 0.0, 1e-4);
    CHECK(p0.phi == x0);

    Mat zx = Mat::Zero(1, 1);
    Mat m2 = Mat::Constant(1, 1, 2.0);
    PathSample ps = sample_path(zx, m2, 0.5, 1e-4);
    CHECK(ps.phi(0, 0) == 1.0);
    CHECK(ps.u(0, 0) == 2.0);
}

TEST_CASE("target field is time invariant") {
    Pcg32 rng(42, 0);
    Mat x0 = random_matrix(rng, 5, 2);
    Mat M = random_matrix(rng, 5, 2);
    PathSample a = sample_path(x0, M, 0.1, 1e-4);
    PathSample b = sample_path(x0, M, 0.9, 1e-4);
    CHECK(a.u == b.u);
}

TEST_CASE("sample_path validates input") {
    Mat a = Mat::Zero(2, 2), b = Mat::Zero(3, 2);
    CHECK_THROWS_AS(sample_path(a, b, 0.5, 1e-4), ShapeError);
    CHECK_THROWS_AS(sample_path(a, a, 1.5, 1e-4), ConfigError);
}

TEST_CASE("cfm loss is zero for the oracle stub and c^2 for the offset stub") {
    Pcg32 rng(43, 0);
    Mat M = random_matrix(rng, 6, 4);
    const double sigma_min = 1e-4;
    nn::Var mu = ad::constant(Mat::Zero(6, 4));
    nn::Var style = ad::constant(Mat::Zero(1, 2));

    // recover u from (phi, t): u = M - (1-s) * (phi - tM) / (1 - (1-s)t)
    auto oracle = [&](const nn::Var& phi, double t, const nn::Var&, const nn::Var&) {
        Mat x0 = (phi->val - t * M) / (1.0 - (1.0 - sigma_min) * t);
        return ad::constant(Mat(M - (1.0 - sigma_min) * x0));
    };
    Pcg32 r1(1, 9);
    CHECK(cfm_loss(oracle, mu, M, style, sigma_min, r1)->scalar() < 1e-18);

    const double c = 0.7;
    auto offset = [&](const nn::Var& phi, double t, const nn::Var& m, const nn::Var& s) {
        return ad::add_scalar(oracle(phi, t, m, s), c);
    };
    Pcg32 r2(2, 9);
    CHECK(std::abs(cfm_loss(offset, mu, M, style, sigma_min, r2)->scalar() - c * c) < 1e-6);
}

TEST_CASE("cfm loss gradient on a two-parameter linear stub matches finite differences") {
    Pcg32 rng(44, 0);
    Mat M = random_matrix(rng, 5, 3);
    nn::Var mu = ad::constant(random_matrix(rng, 5, 3));
    nn::Var style = ad::constant(Mat::Zero(1, 2));
    nn::Var a = ad::leaf(Mat::Constant(1, 1, 0.8));
    nn::Var b = ad::leaf(Mat::Constant(1, 1, -0.2));

    auto field = [&](const nn::Var& phi, double, const nn::Var&, const nn::Var&) {
        return ad::add_scalar_var(ad::scale_var(phi, a), b);
    };
    auto loss_value = [&](double av, double bv) {
        Mat sa = a->val, sb = b->val;
        a->val(0, 0) = av;
        b->val(0, 0) = bv;
        Pcg32 r(7, 7);
        double v = cfm_loss(field, mu, M, style, 1e-4, r)->scalar();
        a->val = sa;
        b->val = sb;
        return v;
    };

    Pcg32 r(7, 7);
    nn::Var loss = cfm_loss(field, mu, M, style, 1e-4, r);
    ad::backward(loss);

    const double h = 1e-6;
    double fd_a = (loss_value(0.8 + h, -0.2) - loss_value(0.8 - h, -0.2)) / (2 * h);
    double fd_b = (loss_value(0.8, -0.2 + h) - loss_value(0.8, -0.2 - h)) / (2 * h);
    CHECK(rel_err(a->grad(0, 0), fd_a) < 1e-4);
    CHECK(rel_err(b->grad(0, 0), fd_b) < 1e-4);
}

TEST_CASE("flow decoder output shape, time conditioning, determinism") {
    nn::ParamStore ps(51);
    FlowDecoderConfig dc;
    dc.hidden = 16;
    dc.blocks = 1;
    dc.heads = 2;
    dc.time_dim = 8;
    FlowDecoder dec(ps, "dec", 6, 4, dc);
    Pcg32 rng(45, 0);
    Mat x = random_matrix(rng, 7, 6);
    Mat mu = random_matrix(rng, 7, 6);
    Mat style = random_matrix(rng, 1, 4);

    nn::Var v1 = dec.fwd(ad::constant(x), 0.3, ad::constant(mu), ad::constant(style));
    REQUIRE(v1->val.rows() == 7);
    REQUIRE(v1->val.cols() == 6);

    nn::Var v2 = dec.fwd(ad::constant(x), 0.7, ad::constant(mu), ad::constant(style));
    CHECK((v1->val - v2->val).cwiseAbs().maxCoeff() > 1e-9);

    nn::Var v3 = dec.fwd(ad::constant(x), 0.3, ad::constant(mu), ad::constant(style));
    CHECK(v1->val == v3->val);

    CHECK_THROWS_AS(dec.fwd(ad::constant(x), 0.3, ad::constant(random_matrix(rng, 6, 6)),
                            ad::constant(style)),
                    ShapeError);
}

TEST_CASE("ode sampling: hooks, one-step algebra, divergence reporting") {
    FlowConfig fc;
    fc.ode_steps = 1;

    FieldEval field = [](const Mat& x, double t) { return Mat((2.0 * x.array() + t).matrix()); };

    SECTION("one Euler step is x0 + v(x0, 0)") {
        MelSpectrogram out = ode_sample(field, 3, 2, fc, nullptr, 99);
        Pcg32 r = stream_rng(99, "ode_x0");
        Mat x0(3, 2);
        for (int i = 0; i < x0.size(); ++i) x0.data()[i] = r.gaussian();
        Mat expect = x0 + field(x0, 0.0);
        CHECK(out.frames == expect);
    }

    SECTION("a null hook is bit-identical to no hook") {
        FlowConfig fc10;
        fc10.ode_steps = 10;
        GuidanceHook null_hook = [](const Mat& v, const Mat&, double) { return v; };
        MelSpectrogram a = ode_sample(field, 4, 3, fc10, nullptr, 5);
        MelSpectrogram b = ode_sample(field, 4, 3, fc10, null_hook, 5);
        CHECK(a.frames == b.frames);
    }

    SECTION("hooks are applied inside midpoint substeps too") {
        FlowConfig mid;
        mid.ode_steps = 4;
        mid.solver = FlowConfig::Solver::Midpoint;
        int calls = 0;
        GuidanceHook counting = [&calls](const Mat& v, const Mat&, double) {
            ++calls;
            return v;
        };
        ode_sample(field, 2, 2, mid, counting, 5);
        CHECK(calls == 8);
    }

    SECTION("non-finite states report the failing step") {
        FieldEval blowup = [](const Mat& x, double) {
            return Mat(Mat::Constant(x.rows(), x.cols(), std::numeric_limits<double>::infinity()));
        };
        FlowConfig fc5;
        fc5.ode_steps = 5;
        try {
            ode_sample(blowup, 2, 2, fc5, nullptr, 1);
            FAIL("expected DivergenceError");
        } catch (const DivergenceError& e) {
            CHECK(e.step == 0);
        }
    }

    SECTION("config validation") {
        FlowConfig bad;
        bad.ode_steps = 0;
        CHECK_THROWS_AS(ode_sample(field, 2, 2, bad, nullptr, 1), ConfigError);
        bad = FlowConfig{};
        bad.sigma_min = 0.0;
        CHECK_THROWS_AS(ode_sample(field, 2, 2, bad, nullptr, 1), ConfigError);
    }
}

// Small-scale version of the analytic recovery check (the acceptance suite
// runs the full 10k-sample variant).
TEST_CASE("euler sampling recovers a scalar gaussian") {
    const double m = 0.8, s = 0.5, sigma_min = 1e-4;
    auto marginal_field = [&](const Mat& x, double t) {
        double a = 1.0 - (1.0 - sigma_min) * t;
        double da = -(1.0 - sigma_min);
        double var = a * a + t * t * s * s;
        double coef = (a * da + t * s * s) / var;
        return Mat((coef * (x.array() - t * m) + m).matrix());
    };
    FlowConfig fc;
    fc.ode_steps = 100;
    MelSpectrogram out = ode_sample(marginal_field, 2000, 1, fc, nullptr, 123);
    double mean = out.frames.mean();
    double var = (out.frames.array() - mean).square().mean();
    CHECK(std::abs(mean - m) < 0.1);
    CHECK(std::abs(var - s * s) < 0.15);
}

TEST_CASE("midpoint solver also recovers the gaussian") {
    const double m = -0.3, s = 0.7, sigma_min = 1e-4;
    auto marginal_field = [&](const Mat& x, double t) {
        double a = 1.0 - (1.0 - sigma_min) * t;
        double da = -(1.0 - sigma_min);
        double var = a * a + t * t * s * s;
        double coef = (a * da + t * s * s) / var;
        return Mat((coef * (x.array() - t * m) + m).matrix());
    };
    FlowConfig fc;
    fc.ode_steps = 40;
    fc.solver = FlowConfig::Solver::Midpoint;
    MelSpectrogram out = ode_sample(marginal_field, 2000, 1, fc, nullptr, 321);
    double mean = out.frames.mean();
    CHECK(std::abs(mean - m) < 0.1);
}
