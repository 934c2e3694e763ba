#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "eatseg/augment.hpp"
#include "eatseg/data_model.hpp"
#include "eatseg/errors.hpp"
#include "eatseg/model.hpp"
#include "eatseg/preprocess.hpp"

namespace eatseg {

struct DiceLossConfig {
    double smoothing_lambda = 1.0;
    bool operator==(const DiceLossConfig&) const = default;
};

void to_json(nlohmann::json& j, const DiceLossConfig& c);
void from_json(const nlohmann::json& j, DiceLossConfig& c);

/// Smoothed soft Dice loss of one sample:
///   1 - (2 * sum(p * t) + lambda) / (sum(p) + sum(t) + lambda)
/// Sums are accumulated in double regardless of T.
template <typename T>
double dice_loss(std::span<const T> pred, std::span<const std::uint8_t> target, const DiceLossConfig& cfg) {
    require(pred.size() == target.size(), ErrorKind::invalid_argument,
            "dice_loss: prediction has " + std::to_string(pred.size()) + " pixels, target " +
                std::to_string(target.size()));
    require(cfg.smoothing_lambda > 0, ErrorKind::invalid_argument, "dice_loss: smoothing_lambda must be positive");
    double inter = 0, sp = 0, st = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double p = pred[i];
        const double t = target[i] ? 1.0 : 0.0;
        inter += p * t;
        sp += p;
        st += t;
    }
    const double lam = cfg.smoothing_lambda;
    return 1.0 - (2.0 * inter + lam) / (sp + st + lam);
}

/// Loss plus d(loss)/d(pred), written to `grad` scaled by `grad_scale`.
template <typename T>
double dice_loss_with_grad(std::span<const T> pred, std::span<const std::uint8_t> target, const DiceLossConfig& cfg,
                           std::span<T> grad, double grad_scale = 1.0) {
    require(grad.size() == pred.size(), ErrorKind::invalid_argument, "dice_loss_with_grad: gradient size mismatch");
    double inter = 0, sp = 0, st = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double t = target[i] ? 1.0 : 0.0;
        inter += pred[i] * t;
        sp += pred[i];
        st += t;
    }
    const double loss = dice_loss(pred, target, cfg);
    const double lam = cfg.smoothing_lambda;
    const double den = sp + st + lam;
    const double num = 2.0 * inter + lam;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double t = target[i] ? 1.0 : 0.0;
        grad[i] = static_cast<T>(grad_scale * -(2.0 * t * den - num) / (den * den));
    }
    return loss;
}

/// Mean of the per-sample losses of a (B, 1, S, S) probability batch.
double batch_dice_loss(const Tensor& prob, const std::vector<const Mask*>& targets, const DiceLossConfig& cfg,
                       Tensor* grad = nullptr);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    bool operator==(const AdamConfig&) const = default;
};

struct TrainConfig {
    int epochs = 200;
    int batch_size = 8;
    double learning_rate = 0.001;
    std::string optimizer = "adam";
    AdamConfig adam;
    std::uint64_t seed = 42;
    int fold_count = 2;
    DiceLossConfig loss;
    bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void validate(const TrainConfig& c);

class Adam {
public:
    Adam(double learning_rate, AdamConfig cfg);
    /// One bias-corrected update of every parameter from its accumulated gradient.
    void step(const std::vector<Parameter*>& params);
    std::int64_t steps() const { return t_; }

private:
    double lr_;
    AdamConfig cfg_;
    std::int64_t t_ = 0;
    std::vector<std::vector<float>> m_, v_;
};

struct EpochLog {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    double seconds = 0.0;
    int train_augmented = 0;  // samples with at least one fired branch
    int val_augmented = 0;
};

struct TrainRunRecord {
    int fold = 0;
    std::vector<EpochLog> epochs;
    int best_epoch = 0;
    double best_val_loss = 0.0;
    std::filesystem::path checkpoint;  // best.ckpt, empty when nothing was written
    std::vector<std::string> train_patients;
    std::vector<std::string> val_patients;
    std::int64_t parameter_count = 0;
};

/// `include_timing` = false drops wall-clock fields and the checkpoint path so
/// records compare byte-equal across runs.
nlohmann::json to_json(const TrainRunRecord& r, bool include_timing = true);

struct TrainOptions {
    int fold = 0;
    std::optional<std::filesystem::path> out_dir;  // last.ckpt, best.ckpt, epochs.csv, record.json
    std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
    TrainRunRecord record;
    SegModel best_model;  // weights of best_epoch
};

/// Throws data_leak when a patient appears in both sets and divergence on a non-finite loss.
TrainResult train_fold(const std::vector<TrainSample>& train, const std::vector<TrainSample>& val,
                       const SegModelConfig& model_cfg, const TrainConfig& train_cfg, const AugmentPolicy& policy,
                       const TrainOptions& options = {});

/// Probability maps for `samples`, evaluated in batches of `batch_size`.
std::vector<ImagePlane> predict(const SegModel& model, const std::vector<TrainSample>& samples, int batch_size = 8);

struct CrossValidationResult {
    std::vector<TrainResult> folds;
    double mean_best_val_loss = 0.0;
};

/// Trains fold f on every patient outside f and validates on fold f.
CrossValidationResult cross_validate(const std::vector<TrainSample>& samples, const FoldSplit& split,
                                     const SegModelConfig& model_cfg, const TrainConfig& train_cfg,
                                     const AugmentPolicy& policy,
                                     const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                                     const std::function<void(int, const EpochLog&)>& on_epoch = {});

std::vector<TrainSample> select_patients(const std::vector<TrainSample>& samples,
                                         const std::vector<std::string>& patients);

}  // namespace eatseg
