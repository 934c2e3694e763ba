#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "eatseg/preprocess.hpp"
#include "eatseg/tensor.hpp"

namespace eatseg {

struct AugmentPolicy {
    double p_hflip = 0.5;
    double p_affine = 0.3;
    double max_translate_frac = 0.0625;
    double max_scale_delta = 0.10;
    double max_rotate_deg = 45.0;
    double p_mesh_deform = 0.2;
    int mesh_grid = 4;
    double mesh_magnitude_frac = 0.05;

    /// Policy that never fires; used for validation passes.
    static AugmentPolicy none() { return {0.0, 0.0, 0.0625, 0.10, 45.0, 0.0, 4, 0.05}; }
    bool operator==(const AugmentPolicy&) const = default;
};

void to_json(nlohmann::json& j, const AugmentPolicy& p);
void from_json(const nlohmann::json& j, AugmentPolicy& p);
void validate(const AugmentPolicy& p);

/// Components left out of the drawn combination keep their neutral values
/// (tx = ty = 0, scale = 1, rot_deg = 0).
struct AffineParams {
    bool translate = false;
    bool scale_on = false;
    bool rotate = false;
    double tx = 0.0;  // pixels, +x to the right
    double ty = 0.0;  // pixels, +y downwards
    double scale = 1.0;
    double rot_deg = 0.0;
};

/// Control-point displacements on a side x side grid spanning the image
/// corners, row-major, in pixels.
struct DisplacementGrid {
    int side = 0;
    std::vector<double> dx, dy;
};

struct AugmentOutcome {
    bool flipped = false;
    std::optional<AffineParams> affine;
    bool mesh_applied = false;
    std::optional<DisplacementGrid> mesh;
    std::vector<double> rng_draws;

    bool any_fired() const { return flipped || affine.has_value() || mesh_applied; }
};

using AugmentRng = std::mt19937_64;

/// Uniform in [0, 1) from the top 53 bits of one generator output.
double uniform01(AugmentRng& rng);

/// Seed of an independent stream for one (sample, epoch).
std::uint64_t sample_seed(std::uint64_t global_seed, const std::string& patient_id, int slice_index, int epoch);

/// Output pixel (x, y) reads the source at (src_x, src_y).
struct SamplingMap {
    int size = 0;
    std::vector<double> src_x, src_y;

    static SamplingMap identity(int size);
};

SamplingMap hflip_map(int size);
/// Rotation and scale about the image centre followed by translation.
SamplingMap compose_affine(const SamplingMap& map, const AffineParams& a);
/// Dense displacement bilinearly interpolated from the grid; out(p) = in(p - d(p)).
SamplingMap compose_mesh(const SamplingMap& map, const DisplacementGrid& grid);

/// Bilinear sampling with border replication.
ImagePlane warp_image(const ImagePlane& image, const SamplingMap& map);
/// The mask is warped as a 0/1 indicator image and re-binarized at 0.5.
Mask warp_mask(const Mask& mask, const SamplingMap& map);

ImagePlane mesh_deform(const ImagePlane& image, const DisplacementGrid& grid);

/// Draws the branch decisions and parameters for a square image of side `size`.
AugmentOutcome draw_outcome(const AugmentPolicy& policy, int size, AugmentRng& rng);

/// Geometric map implied by an outcome; identity when nothing fired.
SamplingMap outcome_map(const AugmentOutcome& outcome, int size);

struct AugmentResult {
    TrainSample sample;
    AugmentOutcome outcome;
};

/// Warps channel 0 and every mask with one shared map; channel 1 is copied through.
AugmentResult augment_sample(const TrainSample& sample, const AugmentPolicy& policy, AugmentRng& rng);

nlohmann::json to_json(const AugmentOutcome& o);

}  // namespace eatseg
