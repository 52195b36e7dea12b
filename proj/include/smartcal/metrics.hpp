#pragma once

#include "smartcal/dataio.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace smartcal {

inline constexpr std::size_t kDefaultBins = 15;
inline constexpr double kNllFloor = 1e-12;

/// Row-stochastic N x K probabilities with labels.
struct ProbSet {
    std::size_t n = 0;
    std::size_t k = 0;
    std::vector<double> probs; // row-major
    std::vector<std::uint32_t> labels;

    std::span<const double> row(std::size_t i) const { return {probs.data() + i * k, k}; }
    std::span<double> row(std::size_t i) { return {probs.data() + i * k, k}; }

    /// Throws DataError unless rows sum to 1 within 1e-6 and entries lie in [0, 1].
    void validate() const;
};

ProbSet probs_from_table(const LabeledTable &table);

/// Index of the largest entry; ties resolve to the lowest index.
template <typename T>
std::size_t argmax(std::span<const T> v)
{
    std::size_t best = 0;
    for (std::size_t j = 1; j < v.size(); ++j)
        if (v[j] > v[best])
            best = j;
    return best;
}

/// Stable softmax of `z / temperature` written into `out`.
void softmax_into(std::span<const float> z, double temperature, std::span<double> out);
void softmax_into(std::span<const double> z, double temperature, std::span<double> out);

ProbSet softmax_rows(const LogitSet &set);

/// Confidence (row max) and correctness of each row.
std::vector<double> confidences(const ProbSet &p);
std::vector<double> correctness(const ProbSet &p);

/// One row of a reliability diagram. Bin b covers (lo, hi]; bin 0 also takes 0.
struct BinRow {
    std::size_t bin = 0;
    double lo = 0.0;
    double hi = 0.0;
    std::size_t count = 0;
    double conf = 0.0;
    double acc = 0.0;
};

struct EceResult {
    double value = 0.0;
    std::vector<BinRow> bins;
};

/// Equal-width bin index for a confidence in [0, 1].
std::size_t hard_bin(double confidence, std::size_t bins);

/// Equal-width ECE over arbitrary (confidence, correctness) pairs.
EceResult ece(std::span<const double> conf, std::span<const double> correct, std::size_t bins = kDefaultBins);
EceResult ece(const ProbSet &p, std::size_t bins = kDefaultBins);

/// Bin sizes for equal-mass binning: the first n % bins bins get one extra sample.
std::vector<std::size_t> adaptive_bin_sizes(std::size_t n, std::size_t bins);

double adaece(std::span<const double> conf, std::span<const double> correct, std::size_t bins = kDefaultBins);
double adaece(const ProbSet &p, std::size_t bins = kDefaultBins);

double classwise_ece(const ProbSet &p, std::size_t bins = kDefaultBins);
double nll(const ProbSet &p);
double brier(const ProbSet &p);
double accuracy(const ProbSet &p);

struct MetricReport {
    std::size_t n = 0;
    std::size_t bin_count = 0;
    double ece = 0.0;
    double adaece = 0.0;
    double cece = 0.0;
    double nll = 0.0;
    double brier = 0.0;
    double accuracy = 0.0;
    std::vector<BinRow> bins;
};

MetricReport evaluate(const ProbSet &p, std::size_t bins = kDefaultBins);

std::string report_to_json(const MetricReport &report);

/// CSV with header "bin,lo,hi,count,conf,acc".
std::string reliability_csv(std::span<const BinRow> rows);

/// Probabilities as CSV: K columns then the label, full double precision.
std::string probs_to_csv(const ProbSet &p);

} // namespace smartcal
