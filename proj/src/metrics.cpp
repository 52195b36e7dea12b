#include "smartcal/metrics.hpp"

#include "smartcal/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

namespace smartcal {

namespace {

template <typename T>
void softmax_impl(std::span<const T> z, double temperature, std::span<double> out)
{
    double zmax = static_cast<double>(z[0]);
    for (T v : z)
        zmax = std::max(zmax, static_cast<double>(v));
    double sum = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j) {
        out[j] = std::exp((static_cast<double>(z[j]) - zmax) / temperature);
        sum += out[j];
    }
    for (double &v : out)
        v /= sum;
}

std::string full(double v)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return {buf, res.ptr};
}

struct BinAccumulator {
    std::size_t count = 0;
    double conf_sum = 0.0;
    double acc_sum = 0.0;
};

} // namespace

void ProbSet::validate() const
{
    if (n == 0)
        throw DataError("empty dataset");
    if (k < 2)
        throw DataError("need at least 2 classes");
    if (probs.size() != n * k || labels.size() != n)
        throw DataError("probability/label sizes do not match N x K");
    for (std::size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        for (double v : row(i)) {
            if (!(v >= 0.0 && v <= 1.0))
                throw DataError("probability outside [0, 1] at row " + std::to_string(i));
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-6)
            throw DataError("probabilities do not sum to 1 at row " + std::to_string(i));
        if (labels[i] >= k)
            throw DataError("label out of range at row " + std::to_string(i));
    }
}

ProbSet probs_from_table(const LabeledTable &table)
{
    ProbSet p{table.rows, table.cols, table.values, table.labels};
    p.validate();
    return p;
}

void softmax_into(std::span<const float> z, double temperature, std::span<double> out)
{
    softmax_impl(z, temperature, out);
}

void softmax_into(std::span<const double> z, double temperature, std::span<double> out)
{
    softmax_impl(z, temperature, out);
}

ProbSet softmax_rows(const LogitSet &set)
{
    ProbSet p;
    p.n = set.n;
    p.k = set.k;
    p.probs.resize(set.n * set.k);
    p.labels = set.labels;
    for (std::size_t i = 0; i < set.n; ++i)
        softmax_into(set.row(i), 1.0, p.row(i));
    return p;
}

std::vector<double> confidences(const ProbSet &p)
{
    std::vector<double> out(p.n);
    for (std::size_t i = 0; i < p.n; ++i) {
        const auto r = p.row(i);
        out[i] = r[argmax(r)];
    }
    return out;
}

std::vector<double> correctness(const ProbSet &p)
{
    std::vector<double> out(p.n);
    for (std::size_t i = 0; i < p.n; ++i)
        out[i] = argmax(p.row(i)) == p.labels[i] ? 1.0 : 0.0;
    return out;
}

std::size_t hard_bin(double confidence, std::size_t bins)
{
    const double scaled = std::ceil(confidence * static_cast<double>(bins));
    if (!(scaled >= 1.0))
        return 0;
    return std::min(static_cast<std::size_t>(scaled) - 1, bins - 1);
}

EceResult ece(std::span<const double> conf, std::span<const double> correct, std::size_t bins)
{
    if (bins == 0)
        throw UsageError("bin count must be at least 1");
    std::vector<BinAccumulator> acc(bins);
    for (std::size_t i = 0; i < conf.size(); ++i) {
        auto &a = acc[hard_bin(conf[i], bins)];
        ++a.count;
        a.conf_sum += conf[i];
        a.acc_sum += correct[i];
    }
    EceResult res;
    res.bins.reserve(bins);
    const double n = static_cast<double>(conf.size());
    for (std::size_t b = 0; b < bins; ++b) {
        BinRow row;
        row.bin = b;
        row.lo = static_cast<double>(b) / static_cast<double>(bins);
        row.hi = static_cast<double>(b + 1) / static_cast<double>(bins);
        row.count = acc[b].count;
        if (row.count > 0) {
            row.conf = acc[b].conf_sum / static_cast<double>(row.count);
            row.acc = acc[b].acc_sum / static_cast<double>(row.count);
            res.value += static_cast<double>(row.count) / n * std::abs(row.conf - row.acc);
        }
        res.bins.push_back(row);
    }
    return res;
}

EceResult ece(const ProbSet &p, std::size_t bins)
{
    const auto conf = confidences(p);
    const auto corr = correctness(p);
    return ece(conf, corr, bins);
}

std::vector<std::size_t> adaptive_bin_sizes(std::size_t n, std::size_t bins)
{
    if (bins == 0)
        throw UsageError("bin count must be at least 1");
    if (bins > n)
        throw UsageError("adaptive bin count " + std::to_string(bins) + " exceeds sample count " +
                         std::to_string(n));
    std::vector<std::size_t> sizes(bins, n / bins);
    for (std::size_t b = 0; b < n % bins; ++b)
        ++sizes[b];
    return sizes;
}

double adaece(std::span<const double> conf, std::span<const double> correct, std::size_t bins)
{
    const auto sizes = adaptive_bin_sizes(conf.size(), bins);
    std::vector<std::size_t> order(conf.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return conf[a] < conf[b]; });

    const double n = static_cast<double>(conf.size());
    double total = 0.0;
    std::size_t pos = 0;
    for (std::size_t size : sizes) {
        double c = 0.0, a = 0.0;
        for (std::size_t t = 0; t < size; ++t, ++pos) {
            c += conf[order[pos]];
            a += correct[order[pos]];
        }
        const double m = static_cast<double>(size);
        total += m / n * std::abs(c / m - a / m);
    }
    return total;
}

double adaece(const ProbSet &p, std::size_t bins)
{
    const auto conf = confidences(p);
    const auto corr = correctness(p);
    return adaece(conf, corr, bins);
}

double classwise_ece(const ProbSet &p, std::size_t bins)
{
    std::vector<double> conf(p.n), hit(p.n);
    double total = 0.0;
    for (std::size_t j = 0; j < p.k; ++j) {
        for (std::size_t i = 0; i < p.n; ++i) {
            conf[i] = p.probs[i * p.k + j];
            hit[i] = p.labels[i] == j ? 1.0 : 0.0;
        }
        total += ece(conf, hit, bins).value;
    }
    return total / static_cast<double>(p.k);
}

double nll(const ProbSet &p)
{
    double total = 0.0;
    for (std::size_t i = 0; i < p.n; ++i)
        total -= std::log(std::max(p.probs[i * p.k + p.labels[i]], kNllFloor));
    return total / static_cast<double>(p.n);
}

double brier(const ProbSet &p)
{
    double total = 0.0;
    for (std::size_t i = 0; i < p.n; ++i) {
        const auto r = p.row(i);
        for (std::size_t j = 0; j < p.k; ++j) {
            const double d = r[j] - (p.labels[i] == j ? 1.0 : 0.0);
            total += d * d;
        }
    }
    return total / static_cast<double>(p.n);
}

double accuracy(const ProbSet &p)
{
    std::size_t hits = 0;
    for (std::size_t i = 0; i < p.n; ++i)
        hits += argmax(p.row(i)) == p.labels[i] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(p.n);
}

MetricReport evaluate(const ProbSet &p, std::size_t bins)
{
    MetricReport r;
    r.n = p.n;
    r.bin_count = bins;
    const auto conf = confidences(p);
    const auto corr = correctness(p);
    auto hard = ece(conf, corr, bins);
    r.ece = hard.value;
    r.bins = std::move(hard.bins);
    r.adaece = adaece(conf, corr, std::min(bins, p.n));
    r.cece = classwise_ece(p, bins);
    r.nll = nll(p);
    r.brier = brier(p);
    r.accuracy = accuracy(p);
    return r;
}

std::string report_to_json(const MetricReport &report)
{
    nlohmann::ordered_json j;
    j["n"] = report.n;
    j["bins"] = report.bin_count;
    j["ece"] = report.ece;
    j["adaece"] = report.adaece;
    j["cece"] = report.cece;
    j["nll"] = report.nll;
    j["brier"] = report.brier;
    j["accuracy"] = report.accuracy;
    auto &rows = j["reliability"] = nlohmann::ordered_json::array();
    for (const auto &b : report.bins)
        rows.push_back({{"bin", b.bin}, {"lo", b.lo}, {"hi", b.hi}, {"count", b.count}, {"conf", b.conf}, {"acc", b.acc}});
    return j.dump(2) + "\n";
}

std::string reliability_csv(std::span<const BinRow> rows)
{
    std::string out = "bin,lo,hi,count,conf,acc\n";
    for (const auto &b : rows) {
        out += std::to_string(b.bin) + ',' + full(b.lo) + ',' + full(b.hi) + ',' + std::to_string(b.count) + ',' +
               full(b.conf) + ',' + full(b.acc) + '\n';
    }
    return out;
}

std::string probs_to_csv(const ProbSet &p)
{
    std::string out = "# " + std::to_string(p.k) + " probabilities,label\n";
    for (std::size_t i = 0; i < p.n; ++i) {
        for (double v : p.row(i)) {
            out += full(v);
            out += ',';
        }
        out += std::to_string(p.labels[i]);
        out += '\n';
    }
    return out;
}

} // namespace smartcal
