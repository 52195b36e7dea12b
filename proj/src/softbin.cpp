#include "smartcal/softbin.hpp"

#include "smartcal/errors.hpp"

#include <algorithm>
#include <cmath>

namespace smartcal {

void SoftBinConfig::validate() const
{
    if (bins < 1)
        throw UsageError("soft bin count must be at least 1");
    if (!(alpha > 0.0) || !std::isfinite(alpha))
        throw UsageError("alpha must be positive and finite");
    if (!(q >= 1.0) || !std::isfinite(q))
        throw UsageError("q must be >= 1");
}

std::vector<double> SoftBinConfig::centers() const
{
    std::vector<double> c(bins);
    for (std::size_t b = 0; b < bins; ++b)
        c[b] = (static_cast<double>(b) + 0.5) / static_cast<double>(bins);
    return c;
}

std::vector<double> membership(std::span<const double> conf, const SoftBinConfig &cfg)
{
    cfg.validate();
    const auto centers = cfg.centers();
    const std::size_t nb = cfg.bins;
    std::vector<double> w(conf.size() * nb);
    for (std::size_t i = 0; i < conf.size(); ++i) {
        double *row = w.data() + i * nb;
        double top = -INFINITY;
        for (std::size_t b = 0; b < nb; ++b) {
            const double d = conf[i] - centers[b];
            row[b] = -cfg.alpha * d * d;
            top = std::max(top, row[b]);
        }
        double sum = 0.0;
        for (std::size_t b = 0; b < nb; ++b) {
            row[b] = std::exp(row[b] - top);
            sum += row[b];
        }
        for (std::size_t b = 0; b < nb; ++b)
            row[b] /= sum;
    }
    return w;
}

SoftAccuracy soft_accuracy(std::span<const double> weights, std::size_t bins, std::span<const double> correct)
{
    SoftAccuracy out{std::vector<double>(bins, 0.0), std::vector<bool>(bins, false)};
    std::vector<double> mass(bins, 0.0);
    for (std::size_t i = 0; i < correct.size(); ++i) {
        for (std::size_t b = 0; b < bins; ++b) {
            const double w = weights[i * bins + b];
            mass[b] += w;
            out.acc[b] += w * correct[i];
        }
    }
    for (std::size_t b = 0; b < bins; ++b) {
        if (mass[b] < kEmptyBinMass) {
            out.acc[b] = 0.0;
            out.empty[b] = true;
        } else {
            out.acc[b] /= mass[b];
        }
    }
    return out;
}

SoftBinState soft_bin_state(std::span<const double> conf, std::span<const double> correct, const SoftBinConfig &cfg)
{
    SoftBinState s;
    s.bins = cfg.bins;
    s.weights = membership(conf, cfg);
    s.mass.assign(cfg.bins, 0.0);
    s.soft_acc.assign(cfg.bins, 0.0);
    s.soft_conf.assign(cfg.bins, 0.0);
    for (std::size_t i = 0; i < conf.size(); ++i) {
        for (std::size_t b = 0; b < cfg.bins; ++b) {
            const double w = s.weights[i * cfg.bins + b];
            s.mass[b] += w;
            s.soft_acc[b] += w * correct[i];
            s.soft_conf[b] += w * conf[i];
        }
    }
    for (std::size_t b = 0; b < cfg.bins; ++b) {
        if (s.mass[b] < kEmptyBinMass) {
            s.soft_acc[b] = 0.0;
            s.soft_conf[b] = 0.0;
            ++s.empty_bins;
        } else {
            s.soft_acc[b] /= s.mass[b];
            s.soft_conf[b] /= s.mass[b];
        }
    }
    return s;
}

double soft_ece(std::span<const double> conf, std::span<const double> correct, const SoftBinConfig &cfg)
{
    const auto s = soft_bin_state(conf, correct, cfg);
    const double n = static_cast<double>(conf.size());
    double total = 0.0;
    for (std::size_t b = 0; b < cfg.bins; ++b) {
        if (s.mass[b] < kEmptyBinMass)
            continue;
        total += s.mass[b] / n * std::pow(std::abs(s.soft_acc[b] - s.soft_conf[b]), cfg.q);
    }
    return cfg.q == 1.0 ? total : std::pow(total, 1.0 / cfg.q);
}

// With m_b = sum_i w_ib, u_b = sum_i w_ib (a_i - p_i) and d_b = u_b / m_b the
// inner sum is S = sum_b (m_b / N) |d_b|^q. Differentiating the Gaussian
// softmax gives dw_ib/dp_i = 2 alpha w_ib (c_b - cbar_i), cbar_i = sum_b w_ib c_b,
// and du_b/dp_i = dw_ib (a_i - p_i) - w_ib.
SoftEceGrad soft_ece_grad(std::span<const double> conf, std::span<const double> correct, const SoftBinConfig &cfg)
{
    if (cfg.q != 1.0 && cfg.q != 2.0)
        throw UsageError("soft ECE gradient supports q = 1 or q = 2");
    const auto s = soft_bin_state(conf, correct, cfg);
    const auto centers = cfg.centers();
    const std::size_t nb = cfg.bins;
    const double n = static_cast<double>(conf.size());

    // dS/dm_b and dS/du_b, with m_b and u_b treated as independent.
    std::vector<double> dS_dm(nb, 0.0), dS_du(nb, 0.0);
    double inner = 0.0;
    for (std::size_t b = 0; b < nb; ++b) {
        if (s.mass[b] < kEmptyBinMass)
            continue;
        const double d = s.soft_acc[b] - s.soft_conf[b];
        const double sign = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
        if (cfg.q == 1.0) {
            // (m/N)|u/m| = |u|/N
            inner += std::abs(d) * s.mass[b] / n;
            dS_du[b] = sign / n;
        } else {
            // (m/N)(u/m)^2 = u^2/(N m)
            inner += d * d * s.mass[b] / n;
            dS_du[b] = 2.0 * d / n;
            dS_dm[b] = -d * d / n;
        }
    }

    SoftEceGrad out;
    out.grad.assign(conf.size(), 0.0);
    double outer = 1.0;
    if (cfg.q == 1.0) {
        out.value = inner;
    } else {
        out.value = std::sqrt(inner);
        if (out.value <= 0.0)
            return out;
        outer = 0.5 / out.value;
    }

    for (std::size_t i = 0; i < conf.size(); ++i) {
        const double *w = s.weights.data() + i * nb;
        double cbar = 0.0;
        for (std::size_t b = 0; b < nb; ++b)
            cbar += w[b] * centers[b];
        const double resid = correct[i] - conf[i];
        double g = 0.0;
        for (std::size_t b = 0; b < nb; ++b) {
            if (s.mass[b] < kEmptyBinMass)
                continue;
            const double dw = 2.0 * cfg.alpha * w[b] * (centers[b] - cbar);
            g += dS_dm[b] * dw + dS_du[b] * (dw * resid - w[b]);
        }
        out.grad[i] = outer * g;
    }
    return out;
}

} // namespace smartcal
