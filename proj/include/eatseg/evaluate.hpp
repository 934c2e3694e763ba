#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "eatseg/quantify.hpp"
#include "eatseg/tensor.hpp"

namespace eatseg {

enum class MaskTarget { pericardium, eat };
const char* to_string(MaskTarget t);

/// Overlap of one binary prediction with its reference. Both empty gives 1.0
/// for every metric; exactly one empty gives 0.0.
struct SliceMetrics {
    std::string patient_id;
    int slice_index = 0;
    MaskTarget target = MaskTarget::pericardium;
    double dsc = 0, jaccard = 0, precision = 0, recall = 0;
    std::int64_t tp = 0, fp = 0, fn = 0;
};

SliceMetrics overlap_metrics(const Mask& pred, const Mask& truth);

struct PearsonResult {
    double r = 0.0;
    double p = 1.0;  // two-sided, Student t with n - 2 degrees of freedom
    std::size_t n = 0;
};

/// Throws undefined_correlation for a constant series.
PearsonResult pearson(std::span<const double> xs, std::span<const double> ys);

struct BlandAltmanPoint {
    double mean = 0.0;
    double diff = 0.0;  // predicted - reference
};

struct BlandAltmanResult {
    double mean_diff = 0.0;
    double sd_diff = 0.0;  // sample standard deviation (n - 1)
    double loa_low = 0.0;
    double loa_high = 0.0;
    std::vector<BlandAltmanPoint> points;
    int outlier_count = 0;
};

inline constexpr double kLoaMultiplier = 1.96;

BlandAltmanResult bland_altman(std::span<const double> pred, std::span<const double> ref);

struct MetricSummary {
    double dsc = 0, jaccard = 0, precision = 0, recall = 0;
    std::size_t n = 0;  // slices or patients averaged
};

enum class Aggregation { per_slice, per_patient };

/// Macro average. per_patient first averages each patient's slices.
MetricSummary summarize(std::span<const SliceMetrics> metrics, Aggregation agg = Aggregation::per_slice);

/// Unweighted mean of fold summaries.
MetricSummary mean_of(std::span<const MetricSummary> folds);

struct FoldEvaluation {
    int fold = 0;
    std::vector<SliceMetrics> pericardium;
    std::vector<SliceMetrics> eat;
    std::vector<SliceCount> counts;
    MetricSummary pericardium_mean;
    MetricSummary eat_mean;
    std::optional<PearsonResult> pearson;
    std::optional<BiasCorrection> correction;  // fitted on the other folds
};

struct EvalReport {
    Aggregation aggregation = Aggregation::per_slice;
    std::vector<FoldEvaluation> folds;
    MetricSummary pericardium;  // cross-fold mean
    MetricSummary eat;
    std::optional<PearsonResult> pearson;  // pooled per-slice EAT counts
    std::optional<BlandAltmanResult> bland_altman;
    std::optional<BlandAltmanResult> bland_altman_corrected;
};

/// One prediction and reference triple per slice of a fold.
struct SliceEvalInput {
    std::string patient_id;
    int slice_index = 0;
    Mask pericardium_pred;
    Mask pericardium_truth;
    Mask adipose;
    Mask eat_truth;
};

/// Overlap metrics for both targets and the slice EAT counts; slices run in parallel.
FoldEvaluation evaluate_fold(int fold, const std::vector<SliceEvalInput>& slices,
                             Aggregation agg = Aggregation::per_slice);

/// Cross-fold means, pooled Pearson and Bland-Altman, and the adjusted
/// counts: each fold is corrected with a bias fitted on all other folds.
EvalReport build_report(std::vector<FoldEvaluation> folds, Aggregation agg = Aggregation::per_slice);

nlohmann::json to_json(const SliceMetrics& m);
nlohmann::json to_json(const MetricSummary& m);
nlohmann::json to_json(const PearsonResult& p);
nlohmann::json to_json(const BlandAltmanResult& b);
nlohmann::json to_json(const EvalReport& r);

/// One row per (fold, slice, target).
void write_metrics_csv(const EvalReport& r, const std::filesystem::path& path);

/// bland_altman.png and count_scatter.png; throws "nothing to plot" without points.
std::vector<std::filesystem::path> emit_plots(const EvalReport& r, const std::filesystem::path& out_dir);

}  // namespace eatseg
