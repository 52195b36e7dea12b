#pragma once

#include "smartcal/dataio.hpp"
#include "smartcal/metrics.hpp"
#include "smartcal/softbin.hpp"
#include "smartcal/tempnet.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace smartcal {

enum class Method { smart, ts };
enum class Loss { softece, ce, mse, brier };
enum class Optimizer { adam, sgd };

std::string_view to_string(Method m);
std::string_view to_string(Loss l);
std::string_view to_string(Optimizer o);
Method method_from_string(std::string_view name);
Loss loss_from_string(std::string_view name);
Optimizer optimizer_from_string(std::string_view name);

struct TrainConfig {
    Loss loss = Loss::softece;
    std::size_t epochs = 300;
    double learning_rate = 1e-2;
    Optimizer optimizer = Optimizer::adam;
    std::uint64_t seed = 0;
    SoftBinConfig softbin;
    std::size_t hidden = kDefaultHidden;
    Indicator indicator = Indicator::gap;

    void validate() const;
};

struct ModelMeta {
    std::uint64_t seed = 0;
    std::string loss = "softece";
    std::size_t epochs = 0;
    std::string optimizer;
    double learning_rate = 0.0;
    std::size_t n_val = 0;
    std::size_t best_epoch = 0;
    bool sigma_fallback = false;
    SoftBinConfig softbin;
    std::string creator = "smartcal";
};

struct CalibratorModel {
    Method method = Method::ts;
    double temperature = 1.0; // ts only
    TemperatureNet net;       // smart only
    Indicator indicator = Indicator::gap;
    ModelMeta meta;

    static CalibratorModel global(double temperature);

    void validate() const;
};

struct TrainResult {
    CalibratorModel model;
    /// (step, loss) pairs: one per epoch for smart, one per objective
    /// evaluation of the search for ts.
    std::vector<double> losses;
};

/// Validation rows reduced to what the calibration losses need.
struct PreparedSet {
    const LogitSet *set = nullptr;
    std::vector<double> indicator;      // raw indicator per row
    std::vector<std::size_t> predicted; // argmax of the logits
    std::vector<double> correct;        // 1 if predicted == label
};

PreparedSet prepare(const LogitSet &set, Indicator indicator);

struct TemperatureLoss {
    double value = 0.0;
    std::vector<double> dT; // d value / d T_i
};

/// Calibration loss of the set scaled by per-row temperatures, and its
/// gradient with respect to each temperature.
TemperatureLoss temperature_loss(const PreparedSet &data, std::span<const double> temps, Loss loss,
                                 const SoftBinConfig &softbin);

struct NetObjective {
    double value = 0.0;
    GradientBuffer grad;
};

/// Loss of `net` over `data` and its gradient with respect to all 3d+1
/// trainable parameters.
NetObjective smart_objective(const TemperatureNet &net, const PreparedSet &data, Loss loss,
                             const SoftBinConfig &softbin);

TrainResult train_smart(const LogitSet &val, const TrainConfig &cfg);

/// Global temperature by a 200-point log grid over [0.05, 20] followed by
/// golden-section refinement to a bracket narrower than 1e-4.
TrainResult train_ts(const LogitSet &val, const TrainConfig &cfg);

TrainResult train(Method method, const LogitSet &val, const TrainConfig &cfg);

std::vector<double> temperatures(const CalibratorModel &model, const LogitSet &set);

ProbSet apply(const CalibratorModel &model, const LogitSet &set);

std::string model_to_json(const CalibratorModel &model);
CalibratorModel model_from_json(const std::string &text);

void save_model(const CalibratorModel &model, const std::filesystem::path &path);
CalibratorModel load_model(const std::filesystem::path &path);

/// CSV "epoch,loss".
std::string training_log_csv(std::span<const double> losses);

} // namespace smartcal
