#include "../../tools/cli.hpp"
#include "smartcal/calibrators.hpp"
#include "smartcal/dataio.hpp"
#include "smartcal/metrics.hpp"
#include "smartcal/rng.hpp"
#include "smartcal/softbin.hpp"
#include "smartcal/tempnet.hpp"
#include "smartcal/theory.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

using namespace smartcal;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    int id;
    const char *name;
    double budget_ms;
    std::function<Outcome()> body;
};

std::string fmt(const char *f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof(buf), f, args...);
    return buf;
}

double rel_err(double analytic, double fd)
{
    return std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1e-6});
}

LogitSet gaussian_set(std::size_t n, std::size_t k, std::uint64_t seed, double scale)
{
    Rng rng(seed);
    LogitSet s;
    s.n = n;
    s.k = k;
    s.logits.resize(n * k);
    for (float &v : s.logits)
        v = static_cast<float>(scale * rng.normal());
    for (std::size_t i = 0; i < n; ++i)
        s.labels.push_back(static_cast<std::uint32_t>(rng.below(k)));
    return s;
}

LogitSet logistic_data(std::uint64_t seed)
{
    SynthConfig cfg;
    cfg.n = 10000;
    cfg.k = 10;
    cfg.seed = seed;
    cfg.distortion.kind = Distortion::Kind::logistic;
    cfg.distortion.lo = 0.6;
    cfg.distortion.hi = 1.8;
    return synthesize(cfg).second;
}

Outcome parameter_count()
{
    const TemperatureNet net = TemperatureNet::init(kDefaultHidden, 0);
    const std::size_t n = net.parameter_count();
    const std::size_t flat = net.parameters().size();
    return {n == 49 && flat == 49, fmt("parameter_count=%zu flattened=%zu", n, flat)};
}

// A central difference of step h moves every hidden pre-activation by at most
// h (1 + |x|). Instances with a pre-activation inside that band straddle a ReLU
// kink, where the objective is not differentiable; those are redrawn.
bool clear_of_kinks(const TemperatureNet &net, std::span<const double> inputs, double h)
{
    for (double x : inputs) {
        ForwardCache cache;
        net.forward(x, cache);
        for (double pre : cache.pre)
            if (std::abs(pre) <= 10.0 * h * (1.0 + std::abs(x)))
                return false;
    }
    return true;
}

Outcome gradient_suite()
{
    constexpr int kInstances = 20;
    const double h = 1e-5;
    double worst_backward = 0.0, worst_chain = 0.0;
    int accepted = 0, redrawn = 0;
    for (std::uint64_t draw = 0; accepted < kInstances; ++draw) {
        const LogitSet set = gaussian_set(32, 5, derive_seed(2024, draw), 2.0);
        const PreparedSet data = prepare(set, Indicator::gap);
        TemperatureNet net = TemperatureNet::init(kDefaultHidden, derive_seed(99, draw));
        const GapStats st = fit_gap_stats(data.indicator);
        net.mu = st.mu;
        net.sigma = st.sigma;

        Rng rng(derive_seed(7, draw));
        const double x = rng.normal();
        const double upstream = rng.normal();
        std::vector<double> inputs{x};
        for (double g : data.indicator)
            inputs.push_back(net.normalize(g));
        if (!clear_of_kinks(net, inputs, h)) {
            ++redrawn;
            continue;
        }
        ++accepted;
        const auto theta = net.parameters();

        ForwardCache cache;
        net.forward(x, cache);
        GradientBuffer g(net.d);
        net.backward(cache, upstream, g);
        const auto back = g.flatten();

        const SoftBinConfig cfg;
        const NetObjective obj = smart_objective(net, data, Loss::softece, cfg);
        const auto chain = obj.grad.flatten();

        for (std::size_t j = 0; j < theta.size(); ++j) {
            auto plus = theta, minus = theta;
            plus[j] += h;
            minus[j] -= h;
            TemperatureNet a = net, b = net;
            a.set_parameters(plus);
            b.set_parameters(minus);
            const double fd_t = upstream * (a.forward(x) - b.forward(x)) / (2 * h);
            worst_backward = std::max(worst_backward, rel_err(back[j], fd_t));
            const double fd_l = (smart_objective(a, data, Loss::softece, cfg).value -
                                 smart_objective(b, data, Loss::softece, cfg).value) / (2 * h);
            worst_chain = std::max(worst_chain, rel_err(chain[j], fd_l));
        }
    }
    return {worst_backward < 1e-4 && worst_chain < 1e-4,
            fmt("instances=%d (redrawn at relu kinks: %d) params=49 max_rel_err backward=%.3e chained_softece=%.3e",
                accepted, redrawn, worst_backward, worst_chain)};
}

Outcome prediction_invariance()
{
    const LogitSet val = logistic_data(11);
    SplitSpec spec;
    spec.val_count = 500;
    spec.seed = 11;
    const LogitSet train_rows = split(val, spec).first;
    TrainConfig cfg;
    cfg.seed = 11;
    const CalibratorModel smart = train_smart(train_rows, cfg).model;
    const CalibratorModel ts = train_ts(train_rows, cfg).model;

    Rng rng(123);
    LogitSet rows;
    rows.k = 10;
    std::vector<double> z(rows.k);
    while (rows.n < 10000) {
        for (double &v : z)
            v = 4.0 * rng.normal();
        if (!(logit_gap(std::span<const double>(z)) > 0.0))
            continue;
        for (double v : z)
            rows.logits.push_back(static_cast<float>(v));
        rows.labels.push_back(static_cast<std::uint32_t>(rng.below(rows.k)));
        ++rows.n;
    }
    std::size_t ties = 0;
    for (std::size_t i = 0; i < rows.n; ++i)
        if (!(logit_gap(rows.row(i)) > 0.0))
            ++ties;

    std::size_t smart_match = 0, ts_match = 0;
    const ProbSet ps = apply(smart, rows);
    const ProbSet pt = apply(ts, rows);
    for (std::size_t i = 0; i < rows.n; ++i) {
        const std::size_t before = argmax(std::as_const(rows).row(i));
        smart_match += argmax(ps.row(i)) == before;
        ts_match += argmax(pt.row(i)) == before;
    }
    return {ties == 0 && smart_match == rows.n && ts_match == rows.n,
            fmt("rows=%zu smart_match=%zu ts_match=%zu ts_T=%.4f", rows.n, smart_match, ts_match, ts.temperature)};
}

Outcome bounds()
{
    std::size_t total = 0, ok = 0;
    for (double p : {0.6, 0.8, 0.95}) {
        const auto rows = bound_trials(10, p, 1000, derive_seed(4, static_cast<std::uint64_t>(p * 100)), 1.0);
        for (const auto &r : rows) {
            ++total;
            ok += r.within_bounds;
        }
    }
    std::vector<double> z(10, -2.0);
    z[0] = 0.0;
    const double closed = uniform_gap_temperature(2.0, 10, 0.8);
    const auto solved = solve_temperature(z, 0.8);
    const double diff = solved ? std::abs(*solved - closed) : INFINITY;
    return {total == 3000 && ok == total && diff < 1e-8 && std::abs(closed - 0.55811) < 5e-6,
            fmt("within_bounds=%zu/%zu closed_form=%.8f bisection_diff=%.2e", ok, total, closed, diff)};
}

Outcome softece_limits()
{
    const LogitSet set = logistic_data(21);
    const ProbSet probs = softmax_rows(set);
    const auto conf = confidences(probs);
    const auto correct = correctness(probs);
    const double global = std::accumulate(correct.begin(), correct.end(), 0.0) / double(correct.size());

    const SoftBinState flat = soft_bin_state(conf, correct, SoftBinConfig{15, 1e-8, 1.0});
    double worst_flat = 0.0;
    for (double a : flat.soft_acc)
        worst_flat = std::max(worst_flat, std::abs(a - global));

    std::vector<double> c2, a2;
    for (std::size_t i = 0; i < conf.size(); ++i) {
        const double scaled = conf[i] * 15.0;
        if (std::abs(scaled - std::round(scaled)) < 0.015)
            continue;
        c2.push_back(conf[i]);
        a2.push_back(correct[i]);
    }
    const double soft = soft_ece(c2, a2, SoftBinConfig{15, 1e6, 1.0});
    const double hard = ece(c2, a2, 15).value;
    return {worst_flat <= 1e-6 && std::abs(soft - hard) <= 1e-3,
            fmt("alpha=1e-8 max|acc_b-acc|=%.2e; alpha=1e6 n=%zu soft=%.6f hard=%.6f", worst_flat, c2.size(), soft,
                hard)};
}

Outcome ts_recovery()
{
    std::string temps;
    bool pass = true;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        SynthConfig cfg;
        cfg.n = 10000;
        cfg.seed = seed;
        cfg.distortion.kind = Distortion::Kind::constant;
        cfg.distortion.value = 0.5;
        const LogitSet distorted = synthesize(cfg).second;
        TrainConfig tc;
        tc.seed = seed;
        const double t = train_ts(distorted, tc).model.temperature;
        pass = pass && t >= 0.45 && t <= 0.55;
        temps += fmt("%s%.4f", seed == 1 ? "" : ",", t);
    }
    return {pass, "T=[" + temps + "]"};
}

struct Comparison {
    double uncal = 0.0, ts = 0.0, smart = 0.0;
    double val_acc = 0.0, test_acc = 0.0;
};

Comparison compare(const LogitSet &data, std::size_t val_count, std::uint64_t seed)
{
    SplitSpec spec;
    spec.val_count = val_count;
    spec.seed = seed;
    const auto [val, test] = split(data, spec);
    TrainConfig cfg;
    cfg.seed = seed;
    Comparison c;
    const ProbSet raw = softmax_rows(test);
    c.uncal = ece(raw).value;
    c.ts = ece(apply(train_ts(val, cfg).model, test)).value;
    c.smart = ece(apply(train_smart(val, cfg).model, test)).value;
    c.val_acc = accuracy(softmax_rows(val));
    c.test_acc = accuracy(raw);
    return c;
}

std::vector<Comparison> full_runs, small_runs;

Outcome smart_vs_ts()
{
    int smart_wins = 0, both_better = 0;
    std::string detail;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const Comparison c = compare(logistic_data(seed), 500, seed);
        full_runs.push_back(c);
        smart_wins += c.smart < c.ts;
        both_better += c.smart < c.uncal && c.ts < c.uncal;
        detail += fmt(" s%llu(unc=%.4f ts=%.4f smart=%.4f)", static_cast<unsigned long long>(seed), c.uncal, c.ts,
                      c.smart);
    }
    return {smart_wins >= 4 && both_better == 5,
            fmt("smart<ts %d/5, both<uncal %d/5;", smart_wins, both_better) + detail};
}

Outcome data_efficiency()
{
    if (full_runs.size() != 5)
        smart_vs_ts();
    int beats_uncal = 0, within = 0;
    std::string detail;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const Comparison c = compare(logistic_data(seed), 50, seed);
        small_runs.push_back(c);
        const Comparison &ref = full_runs[seed - 1];
        beats_uncal += c.smart < c.uncal;
        within += c.smart <= 2.0 * ref.smart;
        detail += fmt(" s%llu(unc=%.4f smart50=%.4f smart500=%.4f ts50=%.4f val_acc=%.2f test_acc=%.3f)",
                      static_cast<unsigned long long>(seed), c.uncal, c.smart, ref.smart, c.ts, c.val_acc, c.test_acc);
    }
    return {beats_uncal == 5 && within >= 4,
            fmt("smart50<uncal %d/5, smart50<=2*smart500 %d/5;", beats_uncal, within) + detail};
}

Outcome metric_oracles()
{
    const std::vector<double> conf{0.9, 0.9, 0.6, 0.6}, correct{1, 0, 1, 1};
    double worst = 0.0;
    worst = std::max(worst, std::abs(ece(conf, correct, 10).value - 0.4));
    worst = std::max(worst, std::abs(ece(conf, correct, 1).value - 0.0));
    worst = std::max(worst, std::abs(adaece(conf, correct, 2) - 0.4));
    worst = std::max(worst, std::abs(adaece(conf, correct, 1) - ece(conf, correct, 1).value));

    auto probset = [](std::vector<double> p, std::vector<std::uint32_t> y) {
        ProbSet s;
        s.k = 2;
        s.n = y.size();
        s.probs = std::move(p);
        s.labels = std::move(y);
        return s;
    };
    worst = std::max(worst, std::abs(classwise_ece(probset({.5, .5, .5, .5, .5, .5, .5, .5}, {0, 0, 1, 1}), 15)));
    worst = std::max(worst, std::abs(classwise_ece(probset({1, 0, 1, 0, 1, 0, 1, 0}, {0, 0, 0, 0}), 15)));
    worst = std::max(worst, std::abs(classwise_ece(probset({1, 0, 1, 0, 1, 0, 1, 0}, {1, 1, 1, 1}), 15) - 1.0));

    Rng rng(77);
    std::size_t cases = 0, spread_violations = 0;
    for (int t = 0; t < 2000; ++t) {
        const std::size_t n = 1 + rng.below(5000);
        const std::size_t b = 1 + rng.below(std::min<std::size_t>(n, 100));
        const auto sizes = adaptive_bin_sizes(n, b);
        const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
        const std::size_t sum = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
        ++cases;
        spread_violations += (*hi - *lo > 1) || sum != n || sizes.size() != b;
    }
    return {worst <= 1e-12 && spread_violations == 0,
            fmt("max_abs_err=%.2e occupancy_cases=%zu violations=%zu", worst, cases, spread_violations)};
}

Outcome determinism()
{
    const fs::path root = fs::path(SMARTCAL_TEST_TMP) / "determinism";
    fs::remove_all(root);
    auto pipeline = [&](const std::string &tag) {
        const fs::path dir = root / tag;
        fs::create_directories(dir);
        auto f = [&](const char *name) { return (dir / name).string(); };
        const std::vector<std::vector<std::string>> steps{
            {"synth", "--n", "10000", "--k", "10", "--distortion", "logistic", "--seed", "3", "--clean-out",
             f("clean.bin"), "--out", f("dist.bin")},
            {"split", "--in", f("dist.bin"), "--val-count", "500", "--seed", "3", "--val-out", f("val.bin"),
             "--test-out", f("test.bin")},
            {"calibrate", "--method", "smart", "--val", f("val.bin"), "--out", f("smart.json"), "--seed", "1"},
            {"calibrate", "--method", "ts", "--val", f("val.bin"), "--out", f("ts.json"), "--seed", "1"},
            {"apply", "--model", f("smart.json"), "--logits", f("test.bin"), "--out", f("smart_probs.csv")},
            {"evaluate", "--probs", f("smart_probs.csv"), "--out", f("smart_metrics.json"), "--reliability",
             f("smart_rel.csv")},
            {"evaluate", "--logits", f("test.bin"), "--model", f("ts.json"), "--out", f("ts_metrics.json"),
             "--reliability", f("ts_rel.csv"), "--gap-split", "50"},
        };
        for (auto args : steps) {
            args.insert(args.begin(), "smartcal");
            std::ostringstream out, err;
            if (cli::run(args, out, err) != 0)
                return false;
        }
        return true;
    };
    if (!pipeline("a") || !pipeline("b"))
        return {false, "pipeline command failed"};
    std::size_t same = 0, files = 0;
    for (const char *name : {"dist.bin", "val.bin", "test.bin", "smart.json", "smart.log.csv", "ts.json",
                             "ts.log.csv", "smart_probs.csv", "smart_metrics.json", "smart_rel.csv", "ts_metrics.json",
                             "ts_rel.csv", "ts_rel.low.csv", "ts_rel.high.csv"}) {
        ++files;
        same += read_file(root / "a" / name) == read_file(root / "b" / name);
    }
    return {same == files, fmt("byte_identical=%zu/%zu artifacts", same, files)};
}

} // namespace

int main()
{
    const std::vector<Criterion> criteria{
        {1, "parameter count", 1.0, parameter_count},
        {2, "gradient suite", 5000.0, gradient_suite},
        {3, "prediction invariance", 5000.0, prediction_invariance},
        {4, "temperature bounds", 10000.0, bounds},
        {5, "soft ece limits", 1000.0, softece_limits},
        {6, "ts recovery", 10000.0, ts_recovery},
        {7, "smart vs ts", 60000.0, smart_vs_ts},
        {8, "data efficiency", 60000.0, data_efficiency},
        {9, "metric oracles", 1000.0, metric_oracles},
        {10, "determinism", 60000.0, determinism},
    };
    int failed = 0;
    for (const auto &c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.body();
        } catch (const std::exception &e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        const bool in_time = ms <= c.budget_ms;
        const bool pass = o.pass && in_time;
        failed += !pass;
        std::printf("[%s] %2d %-22s %9.1f ms (budget %.0f ms%s) %s\n", pass ? "PASS" : "FAIL", c.id, c.name, ms,
                    c.budget_ms, in_time ? "" : ", exceeded", o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
