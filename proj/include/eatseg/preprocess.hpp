#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "eatseg/data_model.hpp"
#include "eatseg/tensor.hpp"

namespace eatseg {

/// binary: 1 inside the adipose band, 0 outside.
/// intensity: (HU - low) / (high - low) inside the band, 0 outside.
enum class ThresholdMode { binary, intensity };

struct PreprocessConfig {
    double adipose_hu_low = -200.0;
    double adipose_hu_high = -30.0;
    int target_size = 128;
    double global_mean = 0.1;
    bool drop_empty_label_slices = true;
    ThresholdMode mode = ThresholdMode::binary;

    AdiposeBand band() const { return {adipose_hu_low, adipose_hu_high}; }
    bool operator==(const PreprocessConfig&) const = default;
};

void to_json(nlohmann::json& j, const PreprocessConfig& c);
void from_json(const nlohmann::json& j, PreprocessConfig& c);
void validate(const PreprocessConfig& cfg);

/// Network-ready slice: channel 0 is the centred adipose map, channel 1 the
/// constant depth plane. `adipose` and `eat` are carried at the same
/// resolution for EAT derivation and evaluation.
struct TrainSample {
    Tensor input;  // (1, 2, S, S)
    Mask target;   // pericardium, S x S
    Mask adipose;  // binary adipose band map, nearest-neighbour resized
    Mask eat;      // EAT label, nearest-neighbour resized
    std::string patient_id;
    int slice_index = 0;
    double normalized_depth = 0.0;

    int size() const { return input.h(); }
};

/// Band membership is inclusive at both ends.
ImagePlane threshold_adipose(const CtSlice& slice, const PreprocessConfig& cfg);
ImagePlane threshold_adipose(const HuPlane& hu, const PreprocessConfig& cfg);
Mask adipose_mask(const HuPlane& hu, const PreprocessConfig& cfg);

/// image - global_mean, elementwise.
ImagePlane normalize_and_center(const ImagePlane& image, const PreprocessConfig& cfg);

/// Bilinear (half-pixel centres, edge clamped) for images; for masks, nearest
/// neighbour followed by re-binarization. Input must be square.
ImagePlane resize_to_target(const ImagePlane& image, int target_size, bool is_mask);
Mask resize_mask(const Mask& mask, int target_size);

/// slice_index / (slice_count - 1); 0.5 for a single-slice study.
double normalized_depth(int slice_index, int slice_count);

/// `slice` must belong to `study`; its depth is its rank among the study's slices.
TrainSample build_sample(const CtSlice& slice, const MaskPair& mask, const CtStudy& study,
                         const PreprocessConfig& cfg);

struct RemovedSlice {
    std::string patient_id;
    int slice_index = 0;
};

struct FilterReport {
    std::vector<RemovedSlice> removed;
    std::vector<std::string> emptied_patients;  // every slice removed
    std::size_t retained = 0;
};

struct FilteredDataset {
    std::vector<LoadedStudy> studies;
    FilterReport report;
};

/// Drops slices whose EAT label is empty; studies left without slices are dropped too.
FilteredDataset filter_empty_slices(std::vector<LoadedStudy> studies);

/// Builds every sample of every study; slices run in parallel.
std::vector<TrainSample> build_samples(const std::vector<LoadedStudy>& studies, const PreprocessConfig& cfg);

nlohmann::json to_json(const FilterReport& r);

}  // namespace eatseg
