#pragma once

// Lip-prosody alignment machinery: the ground-truth duration mask, the
// duration-level contrastive loss, monotonic alignment search with an
// exhaustive oracle, and the length regulator.
//
// Orientation convention: alignment matrices are frame-major, F x P. Every
// frame row of a mask has exactly one 1, each phoneme owns one contiguous
// block of frames, and blocks appear in phoneme order.

#include <string>
#include <vector>

#include "emodub/autodiff.hpp"
#include "emodub/core_types.hpp"

namespace emodub {

struct AlignmentWeights {
    Mat w;  // F x P, rows are probability distributions over phonemes

    int frames() const { return static_cast<int>(w.rows()); }
    int phonemes() const { return static_cast<int>(w.cols()); }

    bool rows_stochastic(double tol = 1e-5) const {
        for (int f = 0; f < w.rows(); ++f) {
            if (std::abs(w.row(f).sum() - 1.0) > tol) return false;
            for (int p = 0; p < w.cols(); ++p)
                if (w(f, p) < -tol || w(f, p) > 1.0 + tol) return false;
        }
        return true;
    }
};

struct GtAlignmentMask {
    Mat m;  // F x P of {0, 1}

    std::vector<std::string> check_invariants() const {
        std::vector<std::string> bad;
        const int F = static_cast<int>(m.rows());
        const int P = static_cast<int>(m.cols());
        int prev = 0;
        for (int f = 0; f < F; ++f) {
            int ones = 0, at = -1;
            for (int p = 0; p < P; ++p) {
                double v = m(f, p);
                if (v != 0.0 && v != 1.0) bad.push_back("entry not in {0,1}");
                if (v == 1.0) {
                    ++ones;
                    at = p;
                }
            }
            if (ones != 1) {
                bad.push_back("frame " + std::to_string(f) + " has " + std::to_string(ones) + " ones");
                return bad;
            }
            if (f == 0 && at != 0) bad.push_back("first frame not on phoneme 0");
            if (f > 0 && (at < prev || at > prev + 1))
                bad.push_back("non-monotone step at frame " + std::to_string(f));
            prev = at;
        }
        if (F > 0 && prev != P - 1) bad.push_back("last frame not on final phoneme");
        for (int p = 0; p < P; ++p)
            if (m.col(p).sum() < 1.0) bad.push_back("phoneme " + std::to_string(p) + " has no frame");
        return bad;
    }
};

inline GtAlignmentMask build_gt_mask(const DurationVector& durations) {
    const int P = durations.size();
    if (P < 1) throw ShapeError("build_gt_mask: empty durations");
    for (int d : durations.d)
        if (d < 1) throw ShapeError("build_gt_mask: duration < 1");
    const int F = durations.total_frames();
    Mat m = Mat::Zero(F, P);
    int f = 0;
    for (int p = 0; p < P; ++p)
        for (int k = 0; k < durations.d[p]; ++k, ++f) m(f, p) = 1.0;
    return GtAlignmentMask{std::move(m)};
}

inline DurationVector mask_to_durations(const GtAlignmentMask& mask) {
    DurationVector d;
    d.d.resize(mask.m.cols());
    for (int p = 0; p < mask.m.cols(); ++p) d.d[p] = static_cast<int>(mask.m.col(p).sum());
    return d;
}

// ---------------------------------------------------------------------------
// Duration-level contrastive loss
//
// L = -log( sum exp((w .* m)/tau) / sum exp(w/tau) ), summed over all F*P
// entries. `tau_in_denominator` selects the symmetric temperature form
// (default); switching it off reproduces the asymmetric printed form where
// the denominator is un-tempered.

namespace detail {
inline double logsumexp_all(const Mat& x) {
    double m = x.maxCoeff();
    return m + std::log((x.array() - m).exp().sum());
}
}  // namespace detail

inline double contrastive_loss_value(const Mat& w, const Mat& mask, double tau,
                                     bool tau_in_denominator = true) {
    if (tau <= 0) throw ConfigError("contrastive_loss: tau must be > 0");
    if (w.rows() != mask.rows() || w.cols() != mask.cols())
        throw ShapeError("contrastive_loss: weight/mask shape mismatch");
    if (!w.allFinite()) throw ShapeError("contrastive_loss: non-finite weights");
    const double tau_den = tau_in_denominator ? tau : 1.0;
    Mat num = w.cwiseProduct(mask) / tau;
    Mat den = w / tau_den;
    return detail::logsumexp_all(den) - detail::logsumexp_all(num);
}

inline Mat contrastive_loss_grad(const Mat& w, const Mat& mask, double tau,
                                 bool tau_in_denominator = true) {
    const double tau_den = tau_in_denominator ? tau : 1.0;
    Mat num = w.cwiseProduct(mask) / tau;
    Mat den = w / tau_den;
    double lse_num = detail::logsumexp_all(num);
    double lse_den = detail::logsumexp_all(den);
    Mat p_num = (num.array() - lse_num).exp().matrix();
    Mat p_den = (den.array() - lse_den).exp().matrix();
    return p_den / tau_den - p_num.cwiseProduct(mask) / tau;
}

inline ad::Var contrastive_loss(const ad::Var& weights, const Mat& mask, double tau,
                                bool tau_in_denominator = true) {
    double v = contrastive_loss_value(weights->val, mask, tau, tau_in_denominator);
    Mat g = contrastive_loss_grad(weights->val, mask, tau, tau_in_denominator);
    return ad::make_op(Mat::Constant(1, 1, v), {weights}, [weights, g](ad::Node& n) {
        if (weights->needs_grad) weights->g() += n.grad(0, 0) * g;
    });
}

// ---------------------------------------------------------------------------
// Monotonic alignment search
//
// Finds the monotone surjective frame->phoneme path maximizing the summed
// log weight. Ties prefer staying on the current phoneme during the
// backtrace (first-maximal), which among optimal paths selects the one with
// the largest phoneme index at the latest differing frame.

inline std::vector<int> mas_path(const Mat& w) {
    const int F = static_cast<int>(w.rows());
    const int P = static_cast<int>(w.cols());
    if (P < 1) throw ShapeError("mas: need at least one phoneme");
    if (F < P)
        throw ShapeError("mas: F=" + std::to_string(F) + " < P=" + std::to_string(P) +
                         " admits no surjective monotone path");

    const double neg_inf = -std::numeric_limits<double>::infinity();
    Mat logw = w.unaryExpr([](double x) { return x > 0 ? std::log(x) : -std::numeric_limits<double>::infinity(); });
    Mat Q = Mat::Constant(F, P, neg_inf);
    Q(0, 0) = logw(0, 0);
    for (int f = 1; f < F; ++f) {
        const int plo = std::max(0, P - (F - f));
        const int phi = std::min(P - 1, f);
        for (int p = plo; p <= phi; ++p) {
            double best = Q(f - 1, p);
            if (p > 0 && Q(f - 1, p - 1) > best) best = Q(f - 1, p - 1);
            Q(f, p) = logw(f, p) + best;
        }
    }

    std::vector<int> path(F);
    int p = P - 1;
    path[F - 1] = p;
    for (int f = F - 1; f >= 1; --f) {
        if (p > 0 && Q(f - 1, p - 1) > Q(f - 1, p)) --p;  // ties stay on the current phoneme
        path[f - 1] = p;
    }
    return path;
}

inline DurationVector path_to_durations(const std::vector<int>& path, int P) {
    DurationVector d;
    d.d.assign(P, 0);
    for (int p : path) ++d.d[p];
    return d;
}

inline DurationVector mas(const AlignmentWeights& weights) {
    std::vector<int> path = mas_path(weights.w);
    return path_to_durations(path, static_cast<int>(weights.w.cols()));
}

// Log score of the path implied by a duration vector.
inline double mas_score(const Mat& w, const DurationVector& durations) {
    double s = 0.0;
    int f = 0;
    for (int p = 0; p < durations.size(); ++p)
        for (int k = 0; k < durations.d[p]; ++k, ++f)
            s += w(f, p) > 0 ? std::log(w(f, p)) : -std::numeric_limits<double>::infinity();
    return s;
}

// Exhaustive oracle: enumerates every monotone surjective path and applies
// the same tie-break as mas(). Test support only; refuses instances whose
// path count exceeds `max_paths`.
inline DurationVector mas_oracle(const AlignmentWeights& weights, long max_paths = 100000,
                                 long* paths_examined = nullptr) {
    const Mat& w = weights.w;
    const int F = static_cast<int>(w.rows());
    const int P = static_cast<int>(w.cols());
    if (P < 1 || F < P) throw ShapeError("mas_oracle: need F >= P >= 1");

    // C(F-1, P-1) paths
    double count = 1.0;
    for (int i = 1; i <= P - 1; ++i) count = count * (F - i) / i;
    if (count > static_cast<double>(max_paths))
        throw ConfigError("mas_oracle: " + std::to_string(static_cast<long long>(count)) +
                          " paths exceed the enumeration bound");

    Mat logw = w.unaryExpr([](double x) { return x > 0 ? std::log(x) : -std::numeric_limits<double>::infinity(); });

    std::vector<int> current(F), best;
    double best_score = -std::numeric_limits<double>::infinity();
    long examined = 0;

    // Prefer the larger phoneme index at the latest differing frame.
    auto better_tiebreak = [&](const std::vector<int>& a, const std::vector<int>& b) {
        for (int f = F - 1; f >= 0; --f) {
            if (a[f] != b[f]) return a[f] > b[f];
        }
        return false;
    };

    // Recursively place the frame index at which each phoneme p starts.
    auto recurse = [&](auto&& self, int frame, int phoneme, double score) -> void {
        if (phoneme == P) {
            if (frame != F) return;
            ++examined;
            if (score > best_score || (score == best_score && (best.empty() || better_tiebreak(current, best)))) {
                best_score = score;
                best = current;
            }
            return;
        }
        const int remaining = P - phoneme - 1;
        for (int len = 1; frame + len + remaining <= F; ++len) {
            double s = score;
            for (int k = 0; k < len; ++k) {
                current[frame + k] = phoneme;
                s += logw(frame + k, phoneme);
            }
            self(self, frame + len, phoneme + 1, s);
        }
    };
    recurse(recurse, 0, 0, 0.0);

    if (paths_examined) *paths_examined = examined;
    return path_to_durations(best, P);
}

// ---------------------------------------------------------------------------
// Length regulation: repeat row i of a phoneme-level sequence d_i times.

inline std::vector<int> expansion_map(const DurationVector& durations) {
    std::vector<int> map;
    map.reserve(durations.total_frames());
    for (int p = 0; p < durations.size(); ++p) {
        if (durations.d[p] < 1) throw ShapeError("length_regulate: duration < 1");
        for (int k = 0; k < durations.d[p]; ++k) map.push_back(p);
    }
    return map;
}

template <typename Derived>
Mat length_regulate(const DurationVector& durations, const Eigen::MatrixBase<Derived>& seq) {
    if (durations.size() != seq.rows())
        throw ShapeError("length_regulate: durations length " + std::to_string(durations.size()) +
                         " != sequence rows " + std::to_string(seq.rows()));
    std::vector<int> map = expansion_map(durations);
    Mat out(static_cast<long>(map.size()), seq.cols());
    for (size_t i = 0; i < map.size(); ++i) out.row(static_cast<long>(i)) = seq.row(map[i]);
    return out;
}

inline ad::Var length_regulate(const DurationVector& durations, const ad::Var& seq) {
    if (durations.size() != seq->val.rows()) throw ShapeError("length_regulate: length mismatch");
    return ad::map_rows(seq, expansion_map(durations));
}

}  // namespace emodub
