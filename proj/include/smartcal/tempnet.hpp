#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace smartcal {

inline constexpr std::size_t kDefaultHidden = 16;
inline constexpr double kTemperatureFloor = 1e-6;

/// Scalar summary of a logit vector fed to the temperature regressor.
enum class Indicator {
    gap,        // z_max - z_2nd
    entropy,    // H(softmax(z))
    maxlogit,   // z_max
    confidence, // max softmax(z)
    meandev,    // z_max - mean(z)
};

std::string_view to_string(Indicator ind);
Indicator indicator_from_string(std::string_view name);

/// Top-1 minus top-2 logit. Exact ties at the top give 0.
double logit_gap(std::span<const float> z);
double logit_gap(std::span<const double> z);

double indicator_value(std::span<const float> z, Indicator ind);

/// Numerically stable log(1 + e^x).
double softplus(double x);
double sigmoid(double x);

struct GapStats {
    double mu = 0.0;
    double sigma = 1.0;
    bool degenerate = false; // sigma fell below 1e-12 and was replaced by 1
};

/// Population mean and standard deviation.
GapStats fit_gap_stats(std::span<const double> gaps);

struct ForwardCache {
    double input = 0.0; // normalized indicator
    std::vector<double> pre;    // W1 * x + b1
    std::vector<double> hidden; // ReLU(pre)
    double out_pre = 0.0;       // W2 . hidden + b2
    double temperature = 0.0;
};

struct GradientBuffer {
    std::vector<double> dW1, db1, dW2;
    double db2 = 0.0;

    explicit GradientBuffer(std::size_t d = 0) : dW1(d, 0.0), db1(d, 0.0), dW2(d, 0.0) {}
    void zero();
    std::vector<double> flatten() const;
    void merge(const GradientBuffer &other);
};

/// One-hidden-layer temperature regressor:
///   T = softplus(W2 . ReLU(W1 x + b1) + b2) + eps,  x = (s - mu) / sigma
/// where s is the scalar indicator of a logit vector.
struct TemperatureNet {
    std::size_t d = kDefaultHidden;
    std::vector<double> W1, b1, W2;
    double b2 = 0.0;
    double eps = kTemperatureFloor;
    double mu = 0.0;
    double sigma = 1.0;

    /// Trainable parameter count, 3d + 1.
    std::size_t parameter_count() const { return 3 * d + 1; }

    /// Zero-initialized net of width d.
    static TemperatureNet zeros(std::size_t d);

    /// W1, W2 ~ U[-1/sqrt(d), 1/sqrt(d)], b1 = 0, b2 = softplus^-1(1).
    static TemperatureNet init(std::size_t d, std::uint64_t seed);

    double normalize(double raw) const { return (raw - mu) / sigma; }

    /// Temperature for an already normalized input.
    double forward(double x, ForwardCache &cache) const;
    double forward(double x) const;

    /// Temperature for a raw (unnormalized) indicator value.
    double temperature(double raw) const { return forward(normalize(raw)); }

    /// Accumulates dL/dparams given dL/dT for a cached forward pass.
    void backward(const ForwardCache &cache, double dL_dT, GradientBuffer &grads) const;

    /// Order: W1, b1, W2, b2.
    std::vector<double> parameters() const;
    void set_parameters(std::span<const double> flat);

    void validate() const;
};

} // namespace smartcal
