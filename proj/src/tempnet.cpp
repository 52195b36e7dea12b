#include "smartcal/tempnet.hpp"

#include "smartcal/errors.hpp"
#include "smartcal/metrics.hpp"
#include "smartcal/rng.hpp"

#include <algorithm>
#include <cmath>

namespace smartcal {

namespace {

template <typename T>
double gap_impl(std::span<const T> z)
{
    if (z.size() < 2)
        throw DataError("logit gap needs at least 2 classes");
    double first = -INFINITY, second = -INFINITY;
    for (T raw : z) {
        const double v = static_cast<double>(raw);
        if (v > first) {
            second = first;
            first = v;
        } else if (v > second) {
            second = v;
        }
    }
    return first - second;
}

} // namespace

std::string_view to_string(Indicator ind)
{
    switch (ind) {
    case Indicator::gap: return "gap";
    case Indicator::entropy: return "entropy";
    case Indicator::maxlogit: return "maxlogit";
    case Indicator::confidence: return "confidence";
    case Indicator::meandev: return "meandev";
    }
    return "gap";
}

Indicator indicator_from_string(std::string_view name)
{
    for (auto ind : {Indicator::gap, Indicator::entropy, Indicator::maxlogit, Indicator::confidence, Indicator::meandev})
        if (to_string(ind) == name)
            return ind;
    throw UsageError("unknown indicator '" + std::string(name) + "'");
}

double logit_gap(std::span<const float> z) { return gap_impl(z); }
double logit_gap(std::span<const double> z) { return gap_impl(z); }

double indicator_value(std::span<const float> z, Indicator ind)
{
    switch (ind) {
    case Indicator::gap:
        return logit_gap(z);
    case Indicator::maxlogit:
        return static_cast<double>(*std::max_element(z.begin(), z.end()));
    case Indicator::meandev: {
        double sum = 0.0;
        for (float v : z)
            sum += v;
        return static_cast<double>(*std::max_element(z.begin(), z.end())) - sum / static_cast<double>(z.size());
    }
    case Indicator::entropy:
    case Indicator::confidence: {
        std::vector<double> p(z.size());
        softmax_into(z, 1.0, p);
        if (ind == Indicator::confidence)
            return *std::max_element(p.begin(), p.end());
        double h = 0.0;
        for (double v : p)
            if (v > 0.0)
                h -= v * std::log(v);
        return h;
    }
    }
    return 0.0;
}

double softplus(double x)
{
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid(double x)
{
    if (x >= 0.0)
        return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

GapStats fit_gap_stats(std::span<const double> gaps)
{
    if (gaps.empty())
        throw DataError("cannot fit normalization on an empty set");
    const double n = static_cast<double>(gaps.size());
    double mean = 0.0;
    for (double g : gaps)
        mean += g;
    mean /= n;
    double var = 0.0;
    for (double g : gaps)
        var += (g - mean) * (g - mean);
    var /= n;
    GapStats s;
    s.mu = mean;
    s.sigma = std::sqrt(var);
    if (!(s.sigma >= 1e-12)) {
        s.sigma = 1.0;
        s.degenerate = true;
    }
    return s;
}

void GradientBuffer::zero()
{
    std::fill(dW1.begin(), dW1.end(), 0.0);
    std::fill(db1.begin(), db1.end(), 0.0);
    std::fill(dW2.begin(), dW2.end(), 0.0);
    db2 = 0.0;
}

std::vector<double> GradientBuffer::flatten() const
{
    std::vector<double> flat;
    flat.reserve(3 * dW1.size() + 1);
    flat.insert(flat.end(), dW1.begin(), dW1.end());
    flat.insert(flat.end(), db1.begin(), db1.end());
    flat.insert(flat.end(), dW2.begin(), dW2.end());
    flat.push_back(db2);
    return flat;
}

void GradientBuffer::merge(const GradientBuffer &other)
{
    if (other.dW1.size() != dW1.size())
        throw NumericError("gradient buffer shape mismatch");
    for (std::size_t j = 0; j < dW1.size(); ++j) {
        dW1[j] += other.dW1[j];
        db1[j] += other.db1[j];
        dW2[j] += other.dW2[j];
    }
    db2 += other.db2;
}

TemperatureNet TemperatureNet::zeros(std::size_t d)
{
    if (d < 1)
        throw UsageError("hidden width must be at least 1");
    TemperatureNet net;
    net.d = d;
    net.W1.assign(d, 0.0);
    net.b1.assign(d, 0.0);
    net.W2.assign(d, 0.0);
    return net;
}

TemperatureNet TemperatureNet::init(std::size_t d, std::uint64_t seed)
{
    TemperatureNet net = zeros(d);
    Rng rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    for (auto &w : net.W1)
        w = (2.0 * rng.uniform() - 1.0) * bound;
    for (auto &w : net.W2)
        w = (2.0 * rng.uniform() - 1.0) * bound;
    // softplus(b2) = 1
    net.b2 = std::log(std::expm1(1.0));
    return net;
}

double TemperatureNet::forward(double x, ForwardCache &cache) const
{
    cache.input = x;
    cache.pre.resize(d);
    cache.hidden.resize(d);
    double out = b2;
    for (std::size_t j = 0; j < d; ++j) {
        cache.pre[j] = W1[j] * x + b1[j];
        cache.hidden[j] = cache.pre[j] > 0.0 ? cache.pre[j] : 0.0;
        out += W2[j] * cache.hidden[j];
    }
    cache.out_pre = out;
    cache.temperature = softplus(out) + eps;
    return cache.temperature;
}

double TemperatureNet::forward(double x) const
{
    double out = b2;
    for (std::size_t j = 0; j < d; ++j) {
        const double h = W1[j] * x + b1[j];
        if (h > 0.0)
            out += W2[j] * h;
    }
    return softplus(out) + eps;
}

void TemperatureNet::backward(const ForwardCache &cache, double dL_dT, GradientBuffer &grads) const
{
    if (grads.dW1.size() != d || cache.pre.size() != d)
        throw NumericError("gradient buffer shape mismatch");
    if (dL_dT == 0.0)
        return;
    const double dz = dL_dT * sigmoid(cache.out_pre);
    grads.db2 += dz;
    for (std::size_t j = 0; j < d; ++j) {
        grads.dW2[j] += dz * cache.hidden[j];
        if (cache.pre[j] > 0.0) {
            const double dh = dz * W2[j];
            grads.dW1[j] += dh * cache.input;
            grads.db1[j] += dh;
        }
    }
}

std::vector<double> TemperatureNet::parameters() const
{
    std::vector<double> flat;
    flat.reserve(parameter_count());
    flat.insert(flat.end(), W1.begin(), W1.end());
    flat.insert(flat.end(), b1.begin(), b1.end());
    flat.insert(flat.end(), W2.begin(), W2.end());
    flat.push_back(b2);
    return flat;
}

void TemperatureNet::set_parameters(std::span<const double> flat)
{
    if (flat.size() != parameter_count())
        throw NumericError("parameter vector has wrong length");
    std::copy_n(flat.begin(), d, W1.begin());
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(d), d, b1.begin());
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(2 * d), d, W2.begin());
    b2 = flat[3 * d];
}

void TemperatureNet::validate() const
{
    if (d < 1 || W1.size() != d || b1.size() != d || W2.size() != d)
        throw DataError("temperature net shapes do not match hidden width");
    if (!(sigma > 0.0) || !std::isfinite(mu) || !std::isfinite(sigma))
        throw DataError("temperature net normalization must be finite with sigma > 0");
    if (!(eps > 0.0))
        throw DataError("temperature floor must be positive");
    for (double v : parameters())
        if (!std::isfinite(v))
            throw DataError("temperature net has non-finite parameters");
}

} // namespace smartcal
