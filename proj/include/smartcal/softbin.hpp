#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace smartcal {

/// Hyperparameters of the soft-binned calibration error.
struct SoftBinConfig {
    std::size_t bins = 15;
    double alpha = 50.0; // sharpness of the Gaussian bin membership
    double q = 1.0;      // norm exponent

    /// Throws UsageError unless bins >= 1, alpha > 0, q >= 1.
    void validate() const;

    /// c_b = (b + 0.5) / B for b = 0..B-1.
    std::vector<double> centers() const;
};

/// Mass below which a soft bin is treated as empty.
inline constexpr double kEmptyBinMass = 1e-12;

/// Row-major N x B membership weights, each row a softmax over bins of
/// -alpha * (p_i - c_b)^2.
std::vector<double> membership(std::span<const double> conf, const SoftBinConfig &cfg);

struct SoftAccuracy {
    std::vector<double> acc;  // per bin; 0 for empty bins
    std::vector<bool> empty;  // mass < kEmptyBinMass
};

SoftAccuracy soft_accuracy(std::span<const double> weights, std::size_t bins, std::span<const double> correct);

/// Per-bin aggregates for one set of confidences.
struct SoftBinState {
    std::size_t bins = 0;
    std::vector<double> weights;  // N x B
    std::vector<double> mass;     // sum_i w_ib
    std::vector<double> soft_acc; // sum_i w_ib a_i / mass
    std::vector<double> soft_conf;// sum_i w_ib p_i / mass
    std::size_t empty_bins = 0;
};

SoftBinState soft_bin_state(std::span<const double> conf, std::span<const double> correct, const SoftBinConfig &cfg);

double soft_ece(std::span<const double> conf, std::span<const double> correct, const SoftBinConfig &cfg);

struct SoftEceGrad {
    double value = 0.0;
    std::vector<double> grad; // d value / d conf_i
};

/// SoftECE together with its analytic gradient with respect to every
/// confidence. Supports q = 1 and q = 2; the |.| subgradient at 0 is 0.
SoftEceGrad soft_ece_grad(std::span<const double> conf, std::span<const double> correct, const SoftBinConfig &cfg);

} // namespace smartcal
