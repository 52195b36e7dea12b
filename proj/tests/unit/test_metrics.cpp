#include "doctest.h"
#include "support.hpp"

#include "smartcal/errors.hpp"
#include "smartcal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace smartcal;
using doctest::Approx;

namespace {

ProbSet make(std::size_t k, std::vector<double> probs, std::vector<std::uint32_t> labels)
{
    ProbSet p;
    p.k = k;
    p.n = labels.size();
    p.probs = std::move(probs);
    p.labels = std::move(labels);
    return p;
}

const std::vector<double> kConf{0.9, 0.9, 0.6, 0.6};
const std::vector<double> kCorrect{1, 0, 1, 1};

ProbSet random_probs(std::size_t n, std::size_t k, std::uint64_t seed)
{
    return softmax_rows(testing::random_set(n, k, seed, 3.0));
}

} // namespace

TEST_CASE("softmax analytic cases")
{
    LogitSet s;
    s.n = 3;
    s.k = 2;
    s.logits = {0.0f, 0.0f, 0.0f, static_cast<float>(std::log(3.0)), 1000.0f, 0.0f};
    s.labels = {0, 1, 0};
    const ProbSet p = softmax_rows(s);
    CHECK(p.probs[0] == 0.5);
    CHECK(p.probs[1] == 0.5);
    CHECK(p.probs[2] == Approx(0.25).epsilon(1e-7));
    CHECK(p.probs[3] == Approx(0.75).epsilon(1e-7));
    // 1/(1+e^-1000) = 1 and e^-1000 ~ 5.08e-435 underflows
    CHECK(p.probs[4] == 1.0);
    CHECK(p.probs[5] == 0.0);
    CHECK(std::isfinite(p.probs[4]));
}

TEST_CASE("softmax rows are stochastic and argmax preserving")
{
    const LogitSet s = testing::random_set(500, 6, 21, 1e3);
    const ProbSet p = softmax_rows(s);
    for (std::size_t i = 0; i < p.n; ++i) {
        const auto r = p.row(i);
        CHECK(std::accumulate(r.begin(), r.end(), 0.0) == Approx(1.0).epsilon(1e-12));
        CHECK(argmax(r) == argmax(s.row(i)));
    }
}

TEST_CASE("ece worked example")
{
    const EceResult r = ece(kConf, kCorrect, 10);
    CHECK(std::abs(r.value - 0.4) <= 1e-12);
    REQUIRE(r.bins.size() == 10);
    CHECK(r.bins[8].count == 2);
    CHECK(r.bins[8].acc == 0.5);
    CHECK(r.bins[5].count == 2);
    CHECK(r.bins[5].acc == 1.0);
    CHECK(r.bins[0].count == 0);
    CHECK(std::abs(ece(kConf, kCorrect, 1).value) <= 1e-12);
}

TEST_CASE("ece of a confident, correct set is zero")
{
    const std::vector<double> conf(8, 1.0), corr(8, 1.0);
    CHECK(ece(conf, corr, 15).value == 0.0);
}

TEST_CASE("bin edges are right closed")
{
    CHECK(hard_bin(0.0, 10) == 0);
    CHECK(hard_bin(0.1, 10) == 0);
    CHECK(hard_bin(0.10000001, 10) == 1);
    CHECK(hard_bin(1.0, 10) == 9);
    CHECK(hard_bin(0.5, 2) == 0);
    const auto r = ece(std::vector<double>{0.5}, std::vector<double>{1.0}, 2);
    CHECK(r.bins[0].hi == 0.5);
    CHECK(r.bins[1].lo == 0.5);
}

TEST_CASE("adaece worked example")
{
    CHECK(std::abs(adaece(kConf, kCorrect, 2) - 0.4) <= 1e-12);
    CHECK(std::abs(adaece(kConf, kCorrect, 1) - ece(kConf, kCorrect, 1).value) <= 1e-12);
    CHECK_THROWS_AS(adaece(kConf, kCorrect, 5), UsageError);
}

TEST_CASE("adaece of per-sample calibrated set is zero")
{
    const std::vector<double> conf{1.0, 1.0, 0.0, 0.0, 1.0};
    const std::vector<double> corr{1.0, 1.0, 0.0, 0.0, 1.0};
    CHECK(adaece(conf, corr, 3) == 0.0);
}

TEST_CASE("adaptive bin sizes")
{
    CHECK(adaptive_bin_sizes(10, 3) == std::vector<std::size_t>{4, 3, 3});
    CHECK(adaptive_bin_sizes(6, 3) == std::vector<std::size_t>{2, 2, 2});
    for (std::size_t n = 1; n < 200; n += 7)
        for (std::size_t b = 1; b <= std::min<std::size_t>(n, 20); ++b) {
            const auto sizes = adaptive_bin_sizes(n, b);
            const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
            CHECK(*hi - *lo <= 1);
            CHECK(std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}) == n);
        }
}

TEST_CASE("classwise ece worked examples")
{
    CHECK(std::abs(classwise_ece(make(2, {0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5}, {0, 0, 1, 1}), 15)) <= 1e-12);
    CHECK(std::abs(classwise_ece(make(2, {1, 0, 1, 0, 1, 0}, {0, 0, 0}), 15)) <= 1e-12);
    CHECK(std::abs(classwise_ece(make(2, {1, 0, 1, 0, 1, 0}, {1, 1, 1}), 15) - 1.0) <= 1e-12);
}

TEST_CASE("nll analytic cases")
{
    CHECK(nll(make(2, {1, 0, 0, 1}, {0, 1})) == 0.0);
    CHECK(nll(make(2, {0.5, 0.5}, {1})) == Approx(0.6931471805599453).epsilon(1e-15));
    CHECK(nll(make(2, {1, 0}, {1})) == Approx(27.631021115928548).epsilon(1e-14));
}

TEST_CASE("brier analytic cases")
{
    CHECK(brier(make(3, {0, 1, 0}, {1})) == 0.0);
    CHECK(brier(make(2, {0.5, 0.5, 0.5, 0.5}, {0, 1})) == 0.5);
    CHECK(brier(make(2, {0, 1}, {0})) == 2.0);
}

TEST_CASE("accuracy and the lowest index tie rule")
{
    CHECK(accuracy(make(2, {1, 0, 0, 1}, {0, 1})) == 1.0);
    CHECK(accuracy(make(2, {1, 0, 0, 1}, {1, 0})) == 0.0);
    CHECK(accuracy(make(2, {0.5, 0.5}, {0})) == 1.0);
    CHECK(accuracy(make(2, {0.5, 0.5}, {1})) == 0.0);
}

TEST_CASE("metric ranges and identities on random sets")
{
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const ProbSet p = random_probs(50 + 13 * seed, 2 + seed % 8, seed);
        const MetricReport r = evaluate(p, 15);
        CHECK((r.ece >= 0.0 && r.ece <= 1.0));
        CHECK((r.adaece >= 0.0 && r.adaece <= 1.0));
        CHECK((r.cece >= 0.0 && r.cece <= 1.0));
        CHECK(r.nll >= 0.0);
        CHECK((r.brier >= 0.0 && r.brier <= 2.0));
        CHECK(r.bins.size() == 15);

        const auto conf = confidences(p);
        const auto corr = correctness(p);
        const double mean_conf = std::accumulate(conf.begin(), conf.end(), 0.0) / double(p.n);
        CHECK(ece(p, 1).value == Approx(std::abs(mean_conf - r.accuracy)).epsilon(1e-12));

        std::size_t counted = 0;
        for (const auto &b : r.bins)
            counted += b.count;
        CHECK(counted == p.n);

        // NLL and Brier are invariant under row permutation
        ProbSet q = p;
        std::vector<std::size_t> order(p.n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(seed);
        rng.shuffle(std::span<std::size_t>(order));
        for (std::size_t i = 0; i < p.n; ++i) {
            std::copy(p.row(order[i]).begin(), p.row(order[i]).end(), q.row(i).begin());
            q.labels[i] = p.labels[order[i]];
        }
        CHECK(nll(q) == Approx(r.nll).epsilon(1e-12));
        CHECK(brier(q) == Approx(r.brier).epsilon(1e-12));
    }
}

TEST_CASE("prob set validation")
{
    CHECK_NOTHROW(make(2, {0.3, 0.7}, {0}).validate());
    CHECK_THROWS_AS(make(2, {0.3, 0.6}, {0}).validate(), DataError);
    CHECK_THROWS_AS(make(2, {1.2, -0.2}, {0}).validate(), DataError);
}

TEST_CASE("report serializations")
{
    const ProbSet p = random_probs(40, 3, 4);
    const MetricReport r = evaluate(p, 5);
    const std::string json = report_to_json(r);
    CHECK(json.find("\"ece\"") != std::string::npos);
    CHECK(json.find("\"reliability\"") != std::string::npos);
    const std::string csv = reliability_csv(r.bins);
    CHECK(csv.rfind("bin,lo,hi,count,conf,acc\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);
    const LabeledTable t = parse_labeled_csv(probs_to_csv(p));
    CHECK(t.values == p.probs);
    CHECK(t.labels == p.labels);
}
