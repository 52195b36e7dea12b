#pragma once

#include "smartcal/dataio.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace smartcal {

/// Top-class softmax probability of z / T.
double top_confidence(std::span<const double> z, double temperature);

inline constexpr double kSolverTolerance = 1e-10;
inline constexpr int kSolverMaxIterations = 200;

/// Temperature at which the top-class probability of softmax(z / T) equals
/// `target_p`, by bisection in log T. Returns nullopt when the target cannot
/// be bracketed (p outside (1/K, 1), or a tied maximum).
std::optional<double> solve_temperature(std::span<const double> z, double target_p);

/// Closed form for a logit vector whose non-maximal entries all sit `delta`
/// below the maximum: T = -delta / ln(S / (K - 1)), S = 1/p - 1.
double uniform_gap_temperature(double delta, std::size_t k, double target_p);

struct BoundCheckRecord {
    double gap = 0.0;
    double target_p = 0.0;
    std::size_t k = 0;
    double temperature = 0.0;
    double lower = 0.0; // -g / ln(S / (K - 1))
    double upper = 0.0; // -g / ln(S)
    bool within_bounds = false;
};

/// Solves for T and checks lower <= T < upper, both with a relative slack of
/// 1e-9. Requires p > 0.5 and a strictly positive logit gap. For K = 2, or
/// when all but the top two logits are far below, T meets the upper bound.
BoundCheckRecord check_bounds(std::span<const double> z, double target_p);

/// CSV "g,p,K,T,lower,upper,ok".
std::string bounds_csv(std::span<const BoundCheckRecord> rows);

/// Monte-Carlo bound check over `trials` Gaussian logit vectors.
std::vector<BoundCheckRecord> bound_trials(std::size_t k, double target_p, std::size_t trials, std::uint64_t seed,
                                           double scale = 1.0);

/// Maps a clean logit gap to the temperature that recalibrates the distorted
/// row. The distorted logits are clean * T_dist(g), so dividing them by
/// T_dist(g) restores the calibrated clean row.
struct Distortion {
    enum class Kind { identity, constant, affine, logistic };
    Kind kind = Kind::identity;
    double value = 1.0;                     // constant
    double a = 1.0, b = 0.0;                // affine: a + b g, clipped at 0.05
    double lo = 0.6, hi = 1.8;              // logistic range
    double mid = 4.0, width = 1.0;          // logistic centre and scale

    double operator()(double gap) const;
    void validate() const;
};

Distortion::Kind distortion_kind_from_string(const std::string &name);

struct SynthConfig {
    std::size_t n = 10000;
    std::size_t k = 10;
    std::uint64_t seed = 0;
    double scale = 4.0; // standard deviation of clean logits
    Distortion distortion;

    void validate() const;
};

/// Clean logits are i.i.d. N(0, scale^2) and labels are drawn from their
/// softmax, so the clean set is calibrated in expectation.
std::pair<LogitSet, LogitSet> synthesize(const SynthConfig &cfg);

} // namespace smartcal
