#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "eatseg/tensor.hpp"

namespace eatseg {

/// One axial CT slice in Hounsfield units.
struct CtSlice {
    std::string patient_id;
    int slice_index = 0;
    std::optional<double> depth_mm;
    HuPlane pixels;

    int height() const { return pixels.rows; }
    int width() const { return pixels.cols; }
};

/// A patient's slices, strictly ordered by slice_index.
struct CtStudy {
    std::string patient_id;
    std::string scanner;
    std::vector<CtSlice> slices;
};

/// Pericardium region and EAT label of one slice; eat is a subset of pericardium.
struct MaskPair {
    Mask pericardium;
    Mask eat;
};

struct ManifestEntry {
    std::string patient_id;
    int slice_index = 0;
    std::filesystem::path image;  // resolved against the manifest directory
    std::filesystem::path pericardium_mask;
    std::optional<std::filesystem::path> eat_mask;
    std::string scanner;
    std::optional<int> rows, cols;  // required for raw .raw/.i16 files
    std::optional<double> depth_mm;
};

struct DatasetManifest {
    double hu_slope = 1.0;
    double hu_intercept = 0.0;
    std::optional<double> pixel_spacing_mm;
    std::optional<double> slice_thickness_mm;
    std::vector<ManifestEntry> entries;
    std::filesystem::path root;

    /// Sorted, de-duplicated patient ids.
    std::vector<std::string> patient_ids() const;
};

/// Parses and validates a JSON manifest; every referenced file must exist.
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Writes `manifest` as JSON with paths relative to the manifest file's directory.
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

struct LoadedStudy {
    CtStudy study;
    std::vector<MaskPair> masks;  // parallel to study.slices
};

/// HU band used to derive EAT labels when the manifest has no eat_mask.
struct AdiposeBand {
    double low = -200.0;
    double high = -30.0;
};

/// Decodes one patient. Slices come back sorted by slice_index, masks binarized
/// (any nonzero -> 1). Missing EAT labels are derived as pericardium AND adipose band.
LoadedStudy load_study(const DatasetManifest& manifest, const std::string& patient_id, AdiposeBand band = {});

/// Writes studies as raw int16 HU slices and 8-bit PNG masks under `dir` and
/// returns the manifest (slope 1, intercept 0) that reloads them bit-identically.
DatasetManifest save_studies(const std::vector<LoadedStudy>& studies, const std::filesystem::path& dir,
                             std::optional<double> pixel_spacing_mm = std::nullopt,
                             std::optional<double> slice_thickness_mm = std::nullopt);

struct FoldSplit {
    int fold_count = 0;
    std::map<std::string, int> assignments;

    std::vector<std::string> patients_in(int fold) const;
    std::vector<std::string> patients_not_in(int fold) const;
};

/// Per-patient fold assignment: ids are sorted, shuffled with `seed`, then dealt round-robin.
FoldSplit split_folds(std::vector<std::string> patient_ids, int fold_count, std::uint64_t seed);

}  // namespace eatseg
