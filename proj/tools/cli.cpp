#include "cli.hpp"

#include "smartcal/calibrators.hpp"
#include "smartcal/dataio.hpp"
#include "smartcal/errors.hpp"
#include "smartcal/metrics.hpp"
#include "smartcal/theory.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>

namespace smartcal::cli {

namespace fs = std::filesystem;

namespace {

struct SplitOpts {
    std::string in, val_out, test_out;
    std::optional<std::size_t> val_count;
    std::optional<double> val_fraction;
    std::uint64_t seed = 0;
    bool stratified = false;
};

struct CalibrateOpts {
    std::string method = "smart";
    std::string val, out, log;
    std::uint64_t seed = 0;
    std::string loss = "softece";
    std::string indicator = "gap";
    std::string optimizer = "adam";
    double alpha = 50.0;
    std::size_t bins = 15;
    double q = 1.0;
    std::size_t epochs = 300;
    double lr = 1e-2;
    std::size_t hidden = kDefaultHidden;
    CLI::Option *indicator_opt = nullptr;
};

struct ApplyOpts {
    std::string model, logits, out;
};

struct EvaluateOpts {
    std::string probs, logits, model, out, reliability;
    std::size_t bins = kDefaultBins;
    std::optional<double> gap_split;
};

struct BoundsOpts {
    std::size_t k = 10;
    double p = 0.8;
    std::size_t trials = 1000;
    std::uint64_t seed = 0;
    double scale = 1.0;
    std::string out;
};

struct SynthOpts {
    std::size_t n = 10000, k = 10;
    std::uint64_t seed = 0;
    double scale = 4.0;
    std::string distortion = "logistic";
    double value = 1.0, a = 1.0, b = 0.0, lo = 0.6, hi = 1.8, mid = 4.0, width = 1.0;
    std::string clean_out, out;
};

struct AblateOpts {
    std::string val, test, out;
    std::uint64_t seed = 0;
    std::size_t epochs = 300;
    std::size_t bins = 15;
    double alpha = 50.0;
};

TrainConfig train_config(const CalibrateOpts &o)
{
    TrainConfig cfg;
    cfg.loss = loss_from_string(o.loss);
    cfg.indicator = indicator_from_string(o.indicator);
    cfg.optimizer = optimizer_from_string(o.optimizer);
    cfg.epochs = o.epochs;
    cfg.learning_rate = o.lr;
    cfg.hidden = o.hidden;
    cfg.seed = o.seed;
    cfg.softbin = {o.bins, o.alpha, o.q};
    cfg.validate();
    return cfg;
}

void print_report(std::ostream &out, const std::string &label, const MetricReport &r)
{
    const auto flags = out.flags();
    const auto prec = out.precision();
    out << std::setprecision(6) << label << ": n=" << r.n << " ece=" << r.ece << " adaece=" << r.adaece
        << " cece=" << r.cece << " nll=" << r.nll << " brier=" << r.brier << " acc=" << r.accuracy << '\n';
    out.flags(flags);
    out.precision(prec);
}

fs::path sibling(const fs::path &path, const std::string &tag)
{
    fs::path p = path;
    p.replace_extension();
    p += "." + tag + path.extension().string();
    return p;
}

ProbSet subset(const ProbSet &p, std::span<const std::size_t> idx)
{
    ProbSet s;
    s.n = idx.size();
    s.k = p.k;
    for (std::size_t i : idx) {
        const auto r = p.row(i);
        s.probs.insert(s.probs.end(), r.begin(), r.end());
        s.labels.push_back(p.labels[i]);
    }
    return s;
}

int cmd_split(const SplitOpts &o, std::ostream &out)
{
    const LogitSet set = load_logits(o.in);
    SplitSpec spec{o.val_count, o.val_fraction, o.seed, o.stratified};
    const auto [val, test] = split(set, spec);
    save_logits(val, o.val_out);
    save_logits(test, o.test_out);
    out << "split " << set.n << " rows: val=" << val.n << " test=" << test.n << '\n';
    return 0;
}

int cmd_calibrate(const CalibrateOpts &o, std::ostream &out, std::ostream &err)
{
    const Method method = method_from_string(o.method);
    if (method == Method::ts && o.indicator_opt->count() > 0)
        throw UsageError("--indicator only applies to --method smart");
    const TrainConfig cfg = train_config(o);
    const LogitSet val = load_logits(o.val);
    const TrainResult res = train(method, val, cfg);
    if (res.model.meta.sigma_fallback)
        err << "warning: indicator has zero spread on the validation set; normalization uses sigma = 1\n";

    const fs::path log_path = o.log.empty() ? sibling(o.out, "log").replace_extension(".csv") : fs::path(o.log);
    const std::string model_text = model_to_json(res.model);
    const std::string log_text = training_log_csv(res.losses);
    write_file_atomic(o.out, model_text);
    write_file_atomic(log_path, log_text);

    const auto prec = out.precision();
    out << std::setprecision(6) << "calibrated " << o.method << " on " << val.n << " rows, final loss "
        << (res.losses.empty() ? 0.0 : *std::min_element(res.losses.begin(), res.losses.end()));
    if (method == Method::ts)
        out << ", T=" << res.model.temperature;
    out << '\n';
    out.precision(prec);
    return 0;
}

int cmd_apply(const ApplyOpts &o, std::ostream &out)
{
    const CalibratorModel model = load_model(o.model);
    const LogitSet set = load_logits(o.logits);
    const ProbSet probs = apply(model, set);
    write_file_atomic(o.out, probs_to_csv(probs));
    out << "wrote " << probs.n << " calibrated rows\n";
    return 0;
}

int cmd_evaluate(const EvaluateOpts &o, std::ostream &out)
{
    if (o.probs.empty() == o.logits.empty())
        throw UsageError("evaluate needs exactly one of --probs or --logits");
    if (!o.model.empty() && o.logits.empty())
        throw UsageError("--model needs --logits");
    if (o.gap_split) {
        if (o.logits.empty())
            throw UsageError("--gap-split needs --logits to compute logit gaps");
        if (o.reliability.empty())
            throw UsageError("--gap-split needs --reliability for the output stem");
        if (!(*o.gap_split > 0.0 && *o.gap_split < 100.0))
            throw UsageError("--gap-split percentile must lie in (0, 100)");
    }
    if (o.bins < 1)
        throw UsageError("--bins must be at least 1");

    std::optional<LogitSet> logits;
    ProbSet probs;
    if (!o.probs.empty()) {
        probs = probs_from_table(read_labeled_csv(o.probs));
    } else {
        logits = load_logits(o.logits);
        probs = o.model.empty() ? softmax_rows(*logits) : apply(load_model(o.model), *logits);
    }
    const MetricReport report = evaluate(probs, o.bins);

    std::vector<std::pair<fs::path, std::string>> outputs;
    if (!o.out.empty())
        outputs.emplace_back(o.out, report_to_json(report));
    if (!o.reliability.empty())
        outputs.emplace_back(o.reliability, reliability_csv(report.bins));
    if (o.gap_split) {
        std::vector<double> gaps(logits->n);
        for (std::size_t i = 0; i < logits->n; ++i)
            gaps[i] = logit_gap(logits->row(i));
        std::vector<std::size_t> order(gaps.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return gaps[a] < gaps[b]; });
        const auto cut = static_cast<std::size_t>(std::llround(*o.gap_split / 100.0 * static_cast<double>(order.size())));
        std::vector<std::size_t> low(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cut));
        std::vector<std::size_t> high(order.begin() + static_cast<std::ptrdiff_t>(cut), order.end());
        std::sort(low.begin(), low.end());
        std::sort(high.begin(), high.end());
        for (auto [tag, idx] : {std::pair{"low", &low}, std::pair{"high", &high}}) {
            const ProbSet part = subset(probs, *idx);
            const auto conf = confidences(part);
            const auto corr = correctness(part);
            outputs.emplace_back(sibling(o.reliability, tag), reliability_csv(ece(conf, corr, o.bins).bins));
        }
    }
    for (const auto &[path, text] : outputs)
        write_file_atomic(path, text);
    print_report(out, "metrics", report);
    return 0;
}

int cmd_bounds(const BoundsOpts &o, std::ostream &out)
{
    const auto rows = bound_trials(o.k, o.p, o.trials, o.seed, o.scale);
    const std::string csv = bounds_csv(rows);
    if (o.out.empty()) {
        out << csv;
    } else {
        write_file_atomic(o.out, csv);
        const auto ok = std::count_if(rows.begin(), rows.end(), [](const auto &r) { return r.within_bounds; });
        out << ok << "/" << rows.size() << " within bounds\n";
    }
    return 0;
}

int cmd_synth(const SynthOpts &o, std::ostream &out)
{
    SynthConfig cfg;
    cfg.n = o.n;
    cfg.k = o.k;
    cfg.seed = o.seed;
    cfg.scale = o.scale;
    cfg.distortion.kind = distortion_kind_from_string(o.distortion);
    cfg.distortion.value = o.value;
    cfg.distortion.a = o.a;
    cfg.distortion.b = o.b;
    cfg.distortion.lo = o.lo;
    cfg.distortion.hi = o.hi;
    cfg.distortion.mid = o.mid;
    cfg.distortion.width = o.width;
    const auto [clean, distorted] = synthesize(cfg);
    save_logits(clean, o.clean_out);
    save_logits(distorted, o.out);
    out << "synthesized " << clean.n << " x " << clean.k << " logits\n";
    return 0;
}

int cmd_ablate(const AblateOpts &o, std::ostream &out)
{
    const LogitSet val = load_logits(o.val);
    const LogitSet test = load_logits(o.test);
    TrainConfig base;
    base.seed = o.seed;
    base.epochs = o.epochs;
    base.softbin.bins = o.bins;
    base.softbin.alpha = o.alpha;
    base.validate();

    std::string csv = "method,indicator,loss,ece,adaece,cece,nll,brier,accuracy\n";
    auto row = [&](const std::string &method, const std::string &ind, const std::string &loss, const ProbSet &p) {
        const MetricReport r = evaluate(p, kDefaultBins);
        std::ostringstream line;
        line << std::setprecision(17) << method << ',' << ind << ',' << loss << ',' << r.ece << ',' << r.adaece << ','
             << r.cece << ',' << r.nll << ',' << r.brier << ',' << r.accuracy << '\n';
        csv += line.str();
        print_report(out, method + "/" + ind + "/" + loss, r);
    };

    row("none", "-", "-", softmax_rows(test));
    row("ts", "-", "softece", apply(train_ts(val, base).model, test));
    for (auto ind : {Indicator::gap, Indicator::entropy, Indicator::maxlogit, Indicator::confidence, Indicator::meandev}) {
        TrainConfig cfg = base;
        cfg.indicator = ind;
        row("smart", std::string(to_string(ind)), "softece", apply(train_smart(val, cfg).model, test));
    }
    for (auto loss : {Loss::ce, Loss::mse, Loss::brier}) {
        TrainConfig cfg = base;
        cfg.loss = loss;
        row("smart", "gap", std::string(to_string(loss)), apply(train_smart(val, cfg).model, test));
    }
    if (!o.out.empty())
        write_file_atomic(o.out, csv);
    return 0;
}

} // namespace

int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err)
{
    CLI::App app{"smartcal: post-hoc confidence calibration from logits"};
    app.require_subcommand(1);

    SplitOpts split_o;
    auto *split_cmd = app.add_subcommand("split", "Seeded validation/test split of a logit file");
    split_cmd->add_option("--in", split_o.in, "Input logit file")->required();
    split_cmd->add_option("--val-out", split_o.val_out, "Validation output")->required();
    split_cmd->add_option("--test-out", split_o.test_out, "Test output")->required();
    auto *count_opt = split_cmd->add_option("--val-count", split_o.val_count, "Validation rows");
    split_cmd->add_option("--val-fraction", split_o.val_fraction, "Validation fraction")->excludes(count_opt);
    split_cmd->add_option("--seed", split_o.seed, "Shuffle seed");
    split_cmd->add_flag("--stratified", split_o.stratified, "Keep class proportions");

    CalibrateOpts cal_o;
    auto *cal_cmd = app.add_subcommand("calibrate", "Fit a SMART or global temperature calibrator");
    cal_cmd->add_option("--method", cal_o.method, "smart | ts")->check(CLI::IsMember({"smart", "ts"}));
    cal_cmd->add_option("--val", cal_o.val, "Validation logit file")->required();
    cal_cmd->add_option("--out", cal_o.out, "Model JSON output")->required();
    cal_cmd->add_option("--log", cal_o.log, "Training log CSV (default <out>.log.csv)");
    cal_cmd->add_option("--seed", cal_o.seed, "Initialization seed");
    cal_cmd->add_option("--loss", cal_o.loss, "softece | ce | mse | brier")
        ->check(CLI::IsMember({"softece", "ce", "mse", "brier"}));
    cal_o.indicator_opt = cal_cmd->add_option("--indicator", cal_o.indicator, "gap | entropy | maxlogit | confidence | meandev")
                              ->check(CLI::IsMember({"gap", "entropy", "maxlogit", "confidence", "meandev"}));
    cal_cmd->add_option("--optimizer", cal_o.optimizer, "adam | sgd")->check(CLI::IsMember({"adam", "sgd"}));
    cal_cmd->add_option("--alpha", cal_o.alpha, "Soft-bin sharpness");
    cal_cmd->add_option("--bins", cal_o.bins, "Soft-bin count");
    cal_cmd->add_option("--q", cal_o.q, "Soft ECE norm exponent");
    cal_cmd->add_option("--epochs", cal_o.epochs, "Full-batch epochs");
    cal_cmd->add_option("--lr", cal_o.lr, "Learning rate");
    cal_cmd->add_option("--hidden", cal_o.hidden, "Hidden width");

    ApplyOpts apply_o;
    auto *apply_cmd = app.add_subcommand("apply", "Write calibrated probabilities");
    apply_cmd->add_option("--model", apply_o.model, "Model JSON")->required();
    apply_cmd->add_option("--logits", apply_o.logits, "Logit file")->required();
    apply_cmd->add_option("--out", apply_o.out, "Probability CSV output")->required();

    EvaluateOpts eval_o;
    auto *eval_cmd = app.add_subcommand("evaluate", "Calibration metrics and reliability rows");
    eval_cmd->add_option("--probs", eval_o.probs, "Probability CSV");
    eval_cmd->add_option("--logits", eval_o.logits, "Logit file");
    eval_cmd->add_option("--model", eval_o.model, "Model JSON applied to --logits");
    eval_cmd->add_option("--bins", eval_o.bins, "Equal-width bin count");
    eval_cmd->add_option("--out", eval_o.out, "MetricReport JSON output");
    eval_cmd->add_option("--reliability", eval_o.reliability, "Reliability CSV output");
    eval_cmd->add_option("--gap-split", eval_o.gap_split, "Percentile splitting low/high logit-gap reliability CSVs");

    BoundsOpts bounds_o;
    auto *bounds_cmd = app.add_subcommand("bounds", "Check logit-gap temperature bounds on random logits");
    bounds_cmd->add_option("--k", bounds_o.k, "Classes");
    bounds_cmd->add_option("--p", bounds_o.p, "Target confidence");
    bounds_cmd->add_option("--trials", bounds_o.trials, "Random logit vectors");
    bounds_cmd->add_option("--seed", bounds_o.seed, "Seed");
    bounds_cmd->add_option("--scale", bounds_o.scale, "Logit standard deviation");
    bounds_cmd->add_option("--out", bounds_o.out, "CSV output (stdout if omitted)");

    SynthOpts synth_o;
    auto *synth_cmd = app.add_subcommand("synth", "Generate clean and distorted synthetic logits");
    synth_cmd->add_option("--n", synth_o.n, "Rows");
    synth_cmd->add_option("--k", synth_o.k, "Classes");
    synth_cmd->add_option("--seed", synth_o.seed, "Seed");
    synth_cmd->add_option("--scale", synth_o.scale, "Clean logit standard deviation");
    synth_cmd->add_option("--distortion", synth_o.distortion, "identity | constant | affine | logistic")
        ->check(CLI::IsMember({"identity", "constant", "affine", "logistic"}));
    synth_cmd->add_option("--t", synth_o.value, "Constant distortion temperature");
    synth_cmd->add_option("--a", synth_o.a, "Affine intercept");
    synth_cmd->add_option("--b", synth_o.b, "Affine slope");
    synth_cmd->add_option("--lo", synth_o.lo, "Logistic low temperature");
    synth_cmd->add_option("--hi", synth_o.hi, "Logistic high temperature");
    synth_cmd->add_option("--mid", synth_o.mid, "Logistic centre gap");
    synth_cmd->add_option("--width", synth_o.width, "Logistic scale");
    synth_cmd->add_option("--clean-out", synth_o.clean_out, "Clean logit output")->required();
    synth_cmd->add_option("--out", synth_o.out, "Distorted logit output")->required();

    AblateOpts ablate_o;
    auto *ablate_cmd = app.add_subcommand("ablate", "Compare indicators and training losses");
    ablate_cmd->add_option("--val", ablate_o.val, "Validation logits")->required();
    ablate_cmd->add_option("--test", ablate_o.test, "Test logits")->required();
    ablate_cmd->add_option("--seed", ablate_o.seed, "Seed");
    ablate_cmd->add_option("--epochs", ablate_o.epochs, "Epochs");
    ablate_cmd->add_option("--bins", ablate_o.bins, "Soft-bin count");
    ablate_cmd->add_option("--alpha", ablate_o.alpha, "Soft-bin sharpness");
    ablate_cmd->add_option("--out", ablate_o.out, "CSV output");

    // CLI11 consumes a reversed argument list without the program name
    std::vector<std::string> reversed;
    if (args.size() > 1)
        reversed.assign(args.rbegin(), args.rend() - 1);
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : static_cast<int>(ExitCode::usage);
    }

    try {
        if (*split_cmd)
            return cmd_split(split_o, out);
        if (*cal_cmd)
            return cmd_calibrate(cal_o, out, err);
        if (*apply_cmd)
            return cmd_apply(apply_o, out);
        if (*eval_cmd)
            return cmd_evaluate(eval_o, out);
        if (*bounds_cmd)
            return cmd_bounds(bounds_o, out);
        if (*synth_cmd)
            return cmd_synth(synth_o, out);
        if (*ablate_cmd)
            return cmd_ablate(ablate_o, out);
    } catch (const UsageError &e) {
        err << "usage error: " << e.what() << '\n';
        return static_cast<int>(ExitCode::usage);
    } catch (const NumericError &e) {
        err << "numeric failure: " << e.what() << '\n';
        return static_cast<int>(ExitCode::numeric);
    } catch (const std::exception &e) {
        err << "data error: " << e.what() << '\n';
        return static_cast<int>(ExitCode::data);
    }
    return static_cast<int>(ExitCode::usage);
}

} // namespace smartcal::cli
