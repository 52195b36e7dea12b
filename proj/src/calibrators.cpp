#include "smartcal/calibrators.hpp"

#include "smartcal/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>

namespace smartcal {

using json = nlohmann::ordered_json;

namespace {

constexpr int kModelFormatVersion = 1;

constexpr double kTsGridLo = 0.05;
constexpr double kTsGridHi = 20.0;
constexpr std::size_t kTsGridPoints = 200;
constexpr double kTsTolerance = 1e-4;

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

std::string full(double v)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return {buf, res.ptr};
}

class AdamState {
public:
    explicit AdamState(std::size_t n) : m_(n, 0.0), v_(n, 0.0) {}

    void step(std::vector<double> &params, std::span<const double> grad, double lr)
    {
        ++t_;
        const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i] = kAdamBeta1 * m_[i] + (1.0 - kAdamBeta1) * grad[i];
            v_[i] = kAdamBeta2 * v_[i] + (1.0 - kAdamBeta2) * grad[i] * grad[i];
            const double mhat = m_[i] / c1;
            const double vhat = v_[i] / c2;
            params[i] -= lr * mhat / (std::sqrt(vhat) + kAdamEps);
        }
    }

private:
    std::vector<double> m_, v_;
    std::size_t t_ = 0;
};

void require_trainable(const LogitSet &val)
{
    val.validate();
    if (val.n < 2)
        throw DataError("calibration needs at least 2 validation rows");
}

double require_number(const json &obj, const char *key)
{
    if (!obj.contains(key) || !obj.at(key).is_number())
        throw DataError(std::string("model schema: missing numeric field '") + key + "'");
    return obj.at(key).get<double>();
}

std::vector<double> require_array(const json &obj, const char *key, std::size_t expected)
{
    if (!obj.contains(key) || !obj.at(key).is_array())
        throw DataError(std::string("model schema: missing array '") + key + "'");
    const auto &arr = obj.at(key);
    if (arr.size() != expected)
        throw DataError(std::string("model schema: '") + key + "' has wrong length");
    std::vector<double> out;
    out.reserve(expected);
    for (const auto &v : arr) {
        if (!v.is_number())
            throw DataError(std::string("model schema: non-numeric entry in '") + key + "'");
        out.push_back(v.get<double>());
    }
    return out;
}

} // namespace

std::string_view to_string(Method m)
{
    return m == Method::smart ? "smart" : "ts";
}

std::string_view to_string(Loss l)
{
    switch (l) {
    case Loss::softece: return "softece";
    case Loss::ce: return "ce";
    case Loss::mse: return "mse";
    case Loss::brier: return "brier";
    }
    return "softece";
}

std::string_view to_string(Optimizer o)
{
    return o == Optimizer::adam ? "adam" : "sgd";
}

Method method_from_string(std::string_view name)
{
    if (name == "smart")
        return Method::smart;
    if (name == "ts")
        return Method::ts;
    throw UsageError("unknown method '" + std::string(name) + "'");
}

Loss loss_from_string(std::string_view name)
{
    for (auto l : {Loss::softece, Loss::ce, Loss::mse, Loss::brier})
        if (to_string(l) == name)
            return l;
    throw UsageError("unknown loss '" + std::string(name) + "'");
}

Optimizer optimizer_from_string(std::string_view name)
{
    if (name == "adam")
        return Optimizer::adam;
    if (name == "sgd")
        return Optimizer::sgd;
    throw UsageError("unknown optimizer '" + std::string(name) + "'");
}

void TrainConfig::validate() const
{
    if (epochs < 1)
        throw UsageError("epochs must be at least 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
        throw UsageError("learning rate must be positive");
    if (hidden < 1)
        throw UsageError("hidden width must be at least 1");
    softbin.validate();
    if (loss == Loss::softece && softbin.q != 1.0 && softbin.q != 2.0)
        throw UsageError("soft ECE training supports q = 1 or q = 2");
}

CalibratorModel CalibratorModel::global(double temperature)
{
    CalibratorModel m;
    m.method = Method::ts;
    m.temperature = temperature;
    m.validate();
    return m;
}

void CalibratorModel::validate() const
{
    if (method == Method::ts) {
        if (!(temperature > 0.0) || !std::isfinite(temperature))
            throw DataError("global temperature must be positive and finite");
    } else {
        net.validate();
    }
}

PreparedSet prepare(const LogitSet &set, Indicator indicator)
{
    PreparedSet p;
    p.set = &set;
    p.indicator.resize(set.n);
    p.predicted.resize(set.n);
    p.correct.resize(set.n);
    for (std::size_t i = 0; i < set.n; ++i) {
        const auto z = set.row(i);
        p.indicator[i] = indicator_value(z, indicator);
        p.predicted[i] = argmax(z);
        p.correct[i] = p.predicted[i] == set.labels[i] ? 1.0 : 0.0;
    }
    return p;
}

// For p = softmax(z / T) and zbar = sum_k p_k z_k: dp_k/dT = p_k (zbar - z_k) / T^2.
TemperatureLoss temperature_loss(const PreparedSet &data, std::span<const double> temps, Loss loss,
                                 const SoftBinConfig &softbin)
{
    const LogitSet &set = *data.set;
    const std::size_t n = set.n, k = set.k;
    const double inv_n = 1.0 / static_cast<double>(n);
    TemperatureLoss out;
    out.dT.assign(n, 0.0);

    std::vector<double> p(k);
    std::vector<double> conf(loss == Loss::softece ? n : 0), dconf(loss == Loss::softece ? n : 0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto z = set.row(i);
        const double T = temps[i];
        softmax_into(z, T, p);
        double zbar = 0.0;
        for (std::size_t j = 0; j < k; ++j)
            zbar += p[j] * static_cast<double>(z[j]);
        const double inv_t2 = 1.0 / (T * T);
        const std::size_t top = data.predicted[i];
        const std::size_t y = set.labels[i];

        switch (loss) {
        case Loss::softece:
            conf[i] = p[top];
            dconf[i] = p[top] * (zbar - static_cast<double>(z[top])) * inv_t2;
            break;
        case Loss::mse: {
            const double r = p[top] - data.correct[i];
            out.value += r * r * inv_n;
            out.dT[i] = 2.0 * r * inv_n * p[top] * (zbar - static_cast<double>(z[top])) * inv_t2;
            break;
        }
        case Loss::ce: {
            const double zmax = static_cast<double>(z[top]);
            double sum = 0.0;
            for (std::size_t j = 0; j < k; ++j)
                sum += std::exp((static_cast<double>(z[j]) - zmax) / T);
            const double log_py = (static_cast<double>(z[y]) - zmax) / T - std::log(sum);
            out.value -= log_py * inv_n;
            out.dT[i] = -inv_n * (zbar - static_cast<double>(z[y])) * inv_t2;
            break;
        }
        case Loss::brier: {
            double d = 0.0;
            for (std::size_t j = 0; j < k; ++j) {
                const double r = p[j] - (j == y ? 1.0 : 0.0);
                out.value += r * r * inv_n;
                d += 2.0 * r * p[j] * (zbar - static_cast<double>(z[j]));
            }
            out.dT[i] = d * inv_t2 * inv_n;
            break;
        }
        }
    }

    if (loss == Loss::softece) {
        const auto g = soft_ece_grad(conf, data.correct, softbin);
        out.value = g.value;
        for (std::size_t i = 0; i < n; ++i)
            out.dT[i] = g.grad[i] * dconf[i];
    }
    return out;
}

NetObjective smart_objective(const TemperatureNet &net, const PreparedSet &data, Loss loss,
                             const SoftBinConfig &softbin)
{
    const std::size_t n = data.set->n;
    std::vector<ForwardCache> caches(n);
    std::vector<double> temps(n);
    for (std::size_t i = 0; i < n; ++i)
        temps[i] = net.forward(net.normalize(data.indicator[i]), caches[i]);

    const TemperatureLoss tl = temperature_loss(data, temps, loss, softbin);
    NetObjective out{tl.value, GradientBuffer(net.d)};
    for (std::size_t i = 0; i < n; ++i)
        net.backward(caches[i], tl.dT[i], out.grad);
    return out;
}

TrainResult train_smart(const LogitSet &val, const TrainConfig &cfg)
{
    cfg.validate();
    require_trainable(val);

    const PreparedSet data = prepare(val, cfg.indicator);
    const GapStats stats = fit_gap_stats(data.indicator);

    TemperatureNet net = TemperatureNet::init(cfg.hidden, cfg.seed);
    net.mu = stats.mu;
    net.sigma = stats.sigma;

    TrainResult result;
    result.losses.reserve(cfg.epochs);
    std::vector<double> params = net.parameters();
    std::vector<double> best_params = params;
    double best_loss = INFINITY;
    std::size_t best_epoch = 0;
    AdamState adam(params.size());

    auto evaluate_at = [&](std::size_t epoch) {
        net.set_parameters(params);
        NetObjective obj = smart_objective(net, data, cfg.loss, cfg.softbin);
        if (!std::isfinite(obj.value))
            throw NumericError("non-finite training loss at epoch " + std::to_string(epoch));
        if (obj.value < best_loss) {
            best_loss = obj.value;
            best_params = params;
            best_epoch = epoch;
        }
        return obj;
    };

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const NetObjective obj = evaluate_at(epoch);
        result.losses.push_back(obj.value);
        const auto grad = obj.grad.flatten();
        if (cfg.optimizer == Optimizer::adam) {
            adam.step(params, grad, cfg.learning_rate);
        } else {
            for (std::size_t j = 0; j < params.size(); ++j)
                params[j] -= cfg.learning_rate * grad[j];
        }
    }
    evaluate_at(cfg.epochs);

    net.set_parameters(best_params);
    auto &model = result.model;
    model.method = Method::smart;
    model.net = net;
    model.indicator = cfg.indicator;
    model.meta.seed = cfg.seed;
    model.meta.loss = std::string(to_string(cfg.loss));
    model.meta.epochs = cfg.epochs;
    model.meta.optimizer = std::string(to_string(cfg.optimizer));
    model.meta.learning_rate = cfg.learning_rate;
    model.meta.n_val = val.n;
    model.meta.best_epoch = best_epoch;
    model.meta.sigma_fallback = stats.degenerate;
    model.meta.softbin = cfg.softbin;
    return result;
}

TrainResult train_ts(const LogitSet &val, const TrainConfig &cfg)
{
    cfg.softbin.validate();
    require_trainable(val);
    const PreparedSet data = prepare(val, Indicator::gap);

    TrainResult result;
    std::vector<double> temps(val.n);
    auto objective = [&](double T) {
        std::fill(temps.begin(), temps.end(), T);
        const double v = temperature_loss(data, temps, cfg.loss, cfg.softbin).value;
        if (!std::isfinite(v))
            throw NumericError("non-finite calibration loss at T = " + full(T));
        result.losses.push_back(v);
        return v;
    };

    std::vector<double> grid(kTsGridPoints), values(kTsGridPoints);
    const double log_ratio = std::log(kTsGridHi / kTsGridLo);
    for (std::size_t j = 0; j < kTsGridPoints; ++j) {
        grid[j] = kTsGridLo * std::exp(log_ratio * static_cast<double>(j) / static_cast<double>(kTsGridPoints - 1));
        values[j] = objective(grid[j]);
    }
    const auto best = static_cast<std::size_t>(std::min_element(values.begin(), values.end()) - values.begin());
    double best_t = grid[best];
    double best_v = values[best];

    double lo = grid[best == 0 ? 0 : best - 1];
    double hi = grid[std::min(best + 1, kTsGridPoints - 1)];
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = hi - inv_phi * (hi - lo);
    double x2 = lo + inv_phi * (hi - lo);
    double f1 = objective(x1);
    double f2 = objective(x2);
    while (hi - lo > kTsTolerance) {
        if (f1 <= f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = objective(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = objective(x2);
        }
    }
    const double mid = 0.5 * (lo + hi);
    const double fm = objective(mid);
    for (auto [t, f] : {std::pair{x1, f1}, std::pair{x2, f2}, std::pair{mid, fm}}) {
        if (f < best_v) {
            best_v = f;
            best_t = t;
        }
    }

    auto &model = result.model;
    model.method = Method::ts;
    model.temperature = best_t;
    model.meta.seed = cfg.seed;
    model.meta.loss = std::string(to_string(cfg.loss));
    model.meta.epochs = 0;
    model.meta.optimizer = "grid+golden";
    model.meta.n_val = val.n;
    model.meta.softbin = cfg.softbin;
    return result;
}

TrainResult train(Method method, const LogitSet &val, const TrainConfig &cfg)
{
    return method == Method::smart ? train_smart(val, cfg) : train_ts(val, cfg);
}

std::vector<double> temperatures(const CalibratorModel &model, const LogitSet &set)
{
    std::vector<double> temps(set.n, model.temperature);
    if (model.method == Method::smart) {
        for (std::size_t i = 0; i < set.n; ++i)
            temps[i] = model.net.temperature(indicator_value(set.row(i), model.indicator));
    }
    return temps;
}

ProbSet apply(const CalibratorModel &model, const LogitSet &set)
{
    model.validate();
    set.validate();
    const auto temps = temperatures(model, set);
    ProbSet p;
    p.n = set.n;
    p.k = set.k;
    p.labels = set.labels;
    p.probs.resize(set.n * set.k);
    for (std::size_t i = 0; i < set.n; ++i)
        softmax_into(set.row(i), temps[i], p.row(i));
    return p;
}

std::string model_to_json(const CalibratorModel &model)
{
    json j;
    j["format_version"] = kModelFormatVersion;
    j["method"] = std::string(to_string(model.method));
    if (model.method == Method::ts) {
        j["ts"] = {{"T", model.temperature}};
    } else {
        const auto &net = model.net;
        json s;
        s["d"] = net.d;
        s["W1"] = net.W1;
        s["b1"] = net.b1;
        s["W2"] = net.W2;
        s["b2"] = net.b2;
        s["eps"] = net.eps;
        s["mu_g"] = net.mu;
        s["sigma_g"] = net.sigma;
        s["indicator"] = std::string(to_string(model.indicator));
        j["smart"] = std::move(s);
    }
    const auto &m = model.meta;
    j["meta"] = {
        {"seed", m.seed},
        {"loss", m.loss},
        {"epochs", m.epochs},
        {"optimizer", m.optimizer},
        {"learning_rate", m.learning_rate},
        {"n_val", m.n_val},
        {"best_epoch", m.best_epoch},
        {"sigma_fallback", m.sigma_fallback},
        {"softbin", {{"bins", m.softbin.bins}, {"alpha", m.softbin.alpha}, {"q", m.softbin.q}}},
        {"creator", m.creator},
    };
    return j.dump(2) + "\n";
}

CalibratorModel model_from_json(const std::string &text)
{
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception &e) {
        throw DataError(std::string("model schema: not valid JSON (") + e.what() + ")");
    }
    if (!j.is_object())
        throw DataError("model schema: top level must be an object");
    if (!j.contains("format_version") || !j["format_version"].is_number_integer())
        throw DataError("model schema: missing format_version");
    if (j["format_version"].get<int>() != kModelFormatVersion)
        throw DataError("model format version " + std::to_string(j["format_version"].get<int>()) +
                        " is not supported");
    if (!j.contains("method") || !j["method"].is_string())
        throw DataError("model schema: missing method");

    CalibratorModel model;
    const std::string method = j["method"].get<std::string>();
    if (method == "ts") {
        model.method = Method::ts;
        if (!j.contains("ts") || !j["ts"].is_object())
            throw DataError("model schema: missing 'ts' block");
        model.temperature = require_number(j["ts"], "T");
    } else if (method == "smart") {
        model.method = Method::smart;
        if (!j.contains("smart") || !j["smart"].is_object())
            throw DataError("model schema: missing 'smart' block");
        const auto &s = j["smart"];
        if (!s.contains("d") || !s["d"].is_number_unsigned() || s["d"].get<std::size_t>() < 1)
            throw DataError("model schema: 'd' must be a positive integer");
        const std::size_t d = s["d"].get<std::size_t>();
        auto &net = model.net;
        net = TemperatureNet::zeros(d);
        net.W1 = require_array(s, "W1", d);
        net.b1 = require_array(s, "b1", d);
        net.W2 = require_array(s, "W2", d);
        net.b2 = require_number(s, "b2");
        net.eps = require_number(s, "eps");
        net.mu = require_number(s, "mu_g");
        net.sigma = require_number(s, "sigma_g");
        if (s.contains("indicator")) {
            if (!s["indicator"].is_string())
                throw DataError("model schema: 'indicator' must be a string");
            try {
                model.indicator = indicator_from_string(s["indicator"].get<std::string>());
            } catch (const UsageError &e) {
                throw DataError(std::string("model schema: ") + e.what());
            }
        }
    } else {
        throw DataError("model schema: unknown method '" + method + "'");
    }

    if (j.contains("meta") && j["meta"].is_object()) {
        const auto &m = j["meta"];
        auto &meta = model.meta;
        meta.seed = m.value("seed", std::uint64_t{0});
        meta.loss = m.value("loss", std::string("softece"));
        meta.epochs = m.value("epochs", std::size_t{0});
        meta.optimizer = m.value("optimizer", std::string());
        meta.learning_rate = m.value("learning_rate", 0.0);
        meta.n_val = m.value("n_val", std::size_t{0});
        meta.best_epoch = m.value("best_epoch", std::size_t{0});
        meta.sigma_fallback = m.value("sigma_fallback", false);
        meta.creator = m.value("creator", std::string("smartcal"));
        if (m.contains("softbin") && m["softbin"].is_object()) {
            const auto &sb = m["softbin"];
            meta.softbin.bins = sb.value("bins", std::size_t{15});
            meta.softbin.alpha = sb.value("alpha", 50.0);
            meta.softbin.q = sb.value("q", 1.0);
        }
    }
    model.validate();
    return model;
}

void save_model(const CalibratorModel &model, const std::filesystem::path &path)
{
    model.validate();
    write_file_atomic(path, model_to_json(model));
}

CalibratorModel load_model(const std::filesystem::path &path)
{
    return model_from_json(read_file(path));
}

std::string training_log_csv(std::span<const double> losses)
{
    std::string out = "epoch,loss\n";
    for (std::size_t e = 0; e < losses.size(); ++e)
        out += std::to_string(e) + ',' + full(losses[e]) + '\n';
    return out;
}

} // namespace smartcal
