#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "json.hpp"

#include "eatseg/data_model.hpp"
#include "eatseg/evaluate.hpp"
#include "eatseg/preprocess.hpp"
#include "eatseg/run_config.hpp"
#include "eatseg/training.hpp"

namespace eatseg {

struct PreparedDataset {
    std::vector<TrainSample> samples;
    FilterReport filter;
    DatasetManifest manifest;
};

/// Loads every patient, drops empty-label slices when configured, and builds samples.
PreparedDataset prepare_dataset(const DatasetManifest& manifest, const PreprocessConfig& cfg);

FoldSplit split_samples(const std::vector<TrainSample>& samples, int fold_count, std::uint64_t seed);

nlohmann::json to_json(const FoldSplit& split);
FoldSplit fold_split_from_json(const nlohmann::json& j);

/// Pericardium probability maps binarized at `threshold`, paired with the
/// sample's references.
std::vector<SliceEvalInput> make_eval_inputs(const std::vector<TrainSample>& samples,
                                             const std::vector<ImagePlane>& prob, double threshold);

struct PipelineResult {
    FoldSplit split;
    std::vector<TrainRunRecord> records;
    EvalReport report;
    FilterReport filter;
};

/// Cross-validation followed by evaluation of each fold's best model on its
/// held-out patients. With `out_dir`, per-fold training artifacts go there.
PipelineResult run_pipeline(const RunConfig& cfg, const DatasetManifest& manifest,
                            const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                            const std::function<void(int, const EpochLog&)>& on_epoch = {});

/// Metric summary without wall-clock fields; byte-stable across identical runs.
nlohmann::json metrics_json(const PipelineResult& r);

}  // namespace eatseg
