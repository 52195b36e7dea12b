#include "smartcal/theory.hpp"

#include "smartcal/errors.hpp"
#include "smartcal/metrics.hpp"
#include "smartcal/rng.hpp"
#include "smartcal/tempnet.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

namespace smartcal {

namespace {

std::string full(double v)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return {buf, res.ptr};
}

constexpr double kBracketLo = 1e-6;
constexpr double kBracketHi = 1e6;
constexpr double kBoundSlack = 1e-9;

} // namespace

double top_confidence(std::span<const double> z, double temperature)
{
    const std::size_t top = argmax(z);
    double tail = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j)
        if (j != top)
            tail += std::exp((z[j] - z[top]) / temperature);
    return 1.0 / (1.0 + tail);
}

std::optional<double> solve_temperature(std::span<const double> z, double target_p)
{
    if (z.size() < 2)
        throw DataError("temperature solve needs at least 2 logits");
    const double k = static_cast<double>(z.size());
    if (!(target_p > 1.0 / k && target_p < 1.0))
        return std::nullopt;

    // confidence is decreasing in T: want conf(lo) > p > conf(hi)
    double lo = kBracketLo, hi = kBracketHi;
    while (top_confidence(z, lo) <= target_p) {
        lo *= 0.5;
        if (lo < 1e-300)
            return std::nullopt;
    }
    while (top_confidence(z, hi) >= target_p) {
        hi *= 2.0;
        if (hi > 1e300)
            return std::nullopt;
    }

    double mid = std::sqrt(lo * hi);
    for (int it = 0; it < kSolverMaxIterations; ++it) {
        mid = std::sqrt(lo * hi);
        if (!(mid > lo && mid < hi))
            break;
        if (top_confidence(z, mid) > target_p)
            lo = mid;
        else
            hi = mid;
    }
    if (std::abs(top_confidence(z, mid) - target_p) >= kSolverTolerance)
        return std::nullopt;
    return mid;
}

double uniform_gap_temperature(double delta, std::size_t k, double target_p)
{
    if (!(delta > 0.0))
        throw UsageError("uniform gap must be positive");
    if (k < 2)
        throw UsageError("need at least 2 classes");
    if (!(target_p > 1.0 / static_cast<double>(k) && target_p < 1.0))
        throw UsageError("target confidence must lie in (1/K, 1)");
    const double s = 1.0 / target_p - 1.0;
    return -delta / std::log(s / static_cast<double>(k - 1));
}

BoundCheckRecord check_bounds(std::span<const double> z, double target_p)
{
    if (!(target_p > 0.5 && target_p < 1.0))
        throw UsageError("bound check needs 0.5 < p < 1, got " + full(target_p));
    BoundCheckRecord r;
    r.gap = logit_gap(z);
    if (!(r.gap > 0.0))
        throw DataError("bound check needs a strictly positive logit gap");
    r.target_p = target_p;
    r.k = z.size();
    const auto t = solve_temperature(z, target_p);
    if (!t)
        throw NumericError("temperature solve did not converge");
    r.temperature = *t;
    const double s = 1.0 / target_p - 1.0;
    r.lower = -r.gap / std::log(s / static_cast<double>(r.k - 1));
    r.upper = -r.gap / std::log(s);
    // once the non-top-two terms underflow, T equals the upper bound to the last bit
    r.within_bounds = r.temperature >= r.lower * (1.0 - kBoundSlack) && r.temperature < r.upper * (1.0 + kBoundSlack);
    return r;
}

std::string bounds_csv(std::span<const BoundCheckRecord> rows)
{
    std::string out = "g,p,K,T,lower,upper,ok\n";
    for (const auto &r : rows) {
        out += full(r.gap) + ',' + full(r.target_p) + ',' + std::to_string(r.k) + ',' + full(r.temperature) + ',' +
               full(r.lower) + ',' + full(r.upper) + ',' + (r.within_bounds ? "true" : "false") + '\n';
    }
    return out;
}

std::vector<BoundCheckRecord> bound_trials(std::size_t k, double target_p, std::size_t trials, std::uint64_t seed,
                                           double scale)
{
    if (k < 2)
        throw UsageError("need at least 2 classes");
    if (!(scale > 0.0))
        throw UsageError("logit scale must be positive");
    if (!(target_p > 0.5 && target_p < 1.0))
        throw UsageError("bound check needs 0.5 < p < 1");
    if (!(target_p > 1.0 / static_cast<double>(k)))
        throw UsageError("target confidence must exceed 1/K");
    Rng rng(seed);
    std::vector<BoundCheckRecord> rows;
    rows.reserve(trials);
    std::vector<double> z(k);
    while (rows.size() < trials) {
        for (double &v : z)
            v = scale * rng.normal();
        if (!(logit_gap(std::span<const double>(z)) > 0.0))
            continue;
        rows.push_back(check_bounds(z, target_p));
    }
    return rows;
}

double Distortion::operator()(double gap) const
{
    switch (kind) {
    case Kind::identity: return 1.0;
    case Kind::constant: return value;
    case Kind::affine: return std::max(a + b * gap, 0.05);
    case Kind::logistic: return lo + (hi - lo) / (1.0 + std::exp(-(gap - mid) / width));
    }
    return 1.0;
}

void Distortion::validate() const
{
    switch (kind) {
    case Kind::identity:
    case Kind::affine:
        break;
    case Kind::constant:
        if (!(value > 0.0) || !std::isfinite(value))
            throw UsageError("distortion temperature must be positive");
        break;
    case Kind::logistic:
        if (!(lo > 0.0 && hi > 0.0) || !std::isfinite(lo) || !std::isfinite(hi))
            throw UsageError("logistic distortion range must be positive");
        if (!(width > 0.0))
            throw UsageError("logistic distortion width must be positive");
        break;
    }
}

Distortion::Kind distortion_kind_from_string(const std::string &name)
{
    if (name == "identity")
        return Distortion::Kind::identity;
    if (name == "constant")
        return Distortion::Kind::constant;
    if (name == "affine")
        return Distortion::Kind::affine;
    if (name == "logistic")
        return Distortion::Kind::logistic;
    throw UsageError("unknown distortion '" + name + "'");
}

void SynthConfig::validate() const
{
    if (n < 1)
        throw UsageError("sample count must be at least 1");
    if (k < 2)
        throw UsageError("need at least 2 classes");
    if (!(scale > 0.0) || !std::isfinite(scale))
        throw UsageError("logit scale must be positive");
    distortion.validate();
}

std::pair<LogitSet, LogitSet> synthesize(const SynthConfig &cfg)
{
    cfg.validate();
    Rng rng(cfg.seed);
    LogitSet clean;
    clean.n = cfg.n;
    clean.k = cfg.k;
    clean.logits.resize(cfg.n * cfg.k);
    clean.labels.resize(cfg.n);
    LogitSet distorted = clean;

    std::vector<double> p(cfg.k);
    for (std::size_t i = 0; i < cfg.n; ++i) {
        auto row = clean.row(i);
        for (float &v : row)
            v = static_cast<float>(cfg.scale * rng.normal());
        softmax_into(std::span<const float>(row), 1.0, p);

        const double u = rng.uniform();
        double cum = 0.0;
        std::uint32_t label = static_cast<std::uint32_t>(cfg.k - 1);
        for (std::size_t j = 0; j < cfg.k; ++j) {
            cum += p[j];
            if (u < cum) {
                label = static_cast<std::uint32_t>(j);
                break;
            }
        }
        clean.labels[i] = label;
        distorted.labels[i] = label;

        const double t = cfg.distortion(logit_gap(std::span<const float>(row)));
        if (!(t > 0.0) || !std::isfinite(t))
            throw NumericError("distortion produced a non-positive temperature at row " + std::to_string(i));
        auto out = distorted.row(i);
        for (std::size_t j = 0; j < cfg.k; ++j)
            out[j] = t == 1.0 ? row[j] : static_cast<float>(static_cast<double>(row[j]) * t);
    }
    return {std::move(clean), std::move(distorted)};
}

} // namespace smartcal
