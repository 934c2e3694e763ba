#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "eatseg/tensor.hpp"

namespace eatseg {

/// Elementwise AND; the result is contained in both inputs.
Mask derive_eat(const Mask& pericardium_pred, const Mask& adipose_map);

/// p >= threshold -> 1. Threshold must lie in [0, 1].
Mask binarize_prediction(const ImagePlane& prob, double threshold = 0.5);

std::int64_t count_eat_pixels(const Mask& eat);

struct SliceCount {
    std::string patient_id;
    int slice_index = 0;
    std::int64_t predicted = 0;
    std::int64_t ground_truth = 0;
    std::optional<double> corrected;
    bool clamped = false;
};

struct PatientTotal {
    std::int64_t predicted = 0;
    std::int64_t ground_truth = 0;
};

struct EatQuantification {
    std::vector<SliceCount> per_slice;
    std::map<std::string, PatientTotal> per_patient;
    std::optional<double> pixel_area_mm2;
    std::optional<double> slice_thickness_mm;

    /// Pixel count times voxel volume; empty unless both spacings are known.
    std::optional<double> volume_mm3(double count) const;
};

EatQuantification aggregate_counts(std::vector<SliceCount> slices, std::optional<double> pixel_area_mm2 = std::nullopt,
                                   std::optional<double> slice_thickness_mm = std::nullopt);

/// Additive correction: the mean of (predicted - reference) on the fitting data.
struct BiasCorrection {
    double bias = 0.0;
    std::string source = "bland_altman_mean";
    std::string fitted_on;                    // e.g. "fold1"
    std::vector<std::string> fitted_patients;  // sorted
};

BiasCorrection fit_bias(const std::vector<SliceCount>& counts, const std::string& fitted_on);

struct AdjustedCount {
    double value = 0.0;
    bool clamped = false;
};

/// raw - bias, clamped at zero when `clamp` is set. Throws data_leak when any of
/// `evaluated_patients` took part in fitting the correction.
AdjustedCount adjusted_count(double raw_count, const BiasCorrection& correction,
                             const std::vector<std::string>& evaluated_patients = {}, bool clamp = true);

/// Fills `corrected` and `clamped` of every slice.
void apply_correction(EatQuantification& q, const BiasCorrection& correction, bool clamp = true);

nlohmann::json to_json(const BiasCorrection& b);
nlohmann::json to_json(const EatQuantification& q);

/// Columns: patient_id, slice_index, predicted_count, ground_truth_count, corrected_count.
void write_quantification_csv(const EatQuantification& q, const std::filesystem::path& path);

}  // namespace eatseg
