#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "json.hpp"

#include "eatseg/data_model.hpp"

namespace eatseg {

/// Synthetic thorax slices: an elliptical pericardium whose size follows the
/// slice position (small at both ends of the stack, largest mid-stack), an
/// EAT rim of adipose sectors just inside it, a thin pericardial layer, a
/// paracardial fat ring outside it, decoy fat blobs, lungs and a
/// subcutaneous fat ring. Lengths are fractions of the image width.
struct PhantomConfig {
    int patients = 4;
    int slices_per_patient = 12;
    int image_size = 512;
    double center_jitter_frac = 0.03;
    double radius_x_min = 0.19, radius_x_max = 0.23;
    double radius_y_min = 0.15, radius_y_max = 0.19;
    double end_scale = 0.6;      // size factor of the first and last slice
    double eat_fraction = 0.6;   // share of rim sectors holding EAT
    double rim_frac = 0.05;      // EAT rim thickness
    double layer_frac = 0.03;    // pericardium layer between EAT and paracardial fat
    double para_frac = 0.05;     // paracardial ring thickness
    int decoys = 3;
    double noise_sd = 0.0;       // HU
    std::uint64_t seed = 42;
    double pixel_spacing_mm = 0.7;  // at 512 pixels; the field of view is fixed, so smaller images scale it up
    double slice_thickness_mm = 3.0;

    bool operator==(const PhantomConfig&) const = default;
};

void to_json(nlohmann::json& j, const PhantomConfig& c);
void from_json(const nlohmann::json& j, PhantomConfig& c);

/// Throws configuration errors, including geometry that leaves the frame.
void validate(const PhantomConfig& c);

struct PhantomPatient {
    LoadedStudy data;
    std::vector<Mask> planted_adipose;  // every pixel given an adipose HU, per slice
};

/// In-memory generation; patients are generated in parallel from independent streams.
std::vector<PhantomPatient> generate_phantom_studies(const PhantomConfig& cfg);

/// Writes 16-bit PNG slices (stored value = HU + 1024), 8-bit PNG masks and
/// manifest.json under `dir`, and returns the manifest.
DatasetManifest generate_phantom(const PhantomConfig& cfg, const std::filesystem::path& dir);

}  // namespace eatseg
