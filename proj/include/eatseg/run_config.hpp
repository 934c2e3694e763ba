#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "eatseg/augment.hpp"
#include "eatseg/evaluate.hpp"
#include "eatseg/model.hpp"
#include "eatseg/phantom.hpp"
#include "eatseg/preprocess.hpp"
#include "eatseg/training.hpp"

namespace eatseg {

struct QuantifyOptions {
    double threshold = 0.5;
    bool clamp = true;
    Aggregation aggregation = Aggregation::per_slice;
    bool operator==(const QuantifyOptions&) const = default;
};

struct RunPaths {
    std::filesystem::path manifest;                   // dataset manifest.json
    std::filesystem::path output_dir = "eatseg_run";  // relative paths resolve against EATSEG_OUTPUT_ROOT
    bool operator==(const RunPaths&) const = default;
};

/// Everything a run depends on. `seed` drives the fold split, weight
/// initialization, batch order and augmentation streams.
struct RunConfig {
    std::uint64_t seed = 42;
    PhantomConfig phantom;
    PreprocessConfig preprocess;
    AugmentPolicy augment;
    SegModelConfig model;
    TrainConfig train;
    QuantifyOptions quantify;
    RunPaths paths;
    bool operator==(const RunConfig&) const = default;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

/// Cross-section checks on top of each section's own validation.
void validate(const RunConfig& c);

inline constexpr const char* kOutputRootEnv = "EATSEG_OUTPUT_ROOT";

/// Layers, lowest precedence first: built-in defaults, the config file (if
/// any), then `overrides` of the form "section.key=value" where value is
/// parsed as JSON and falls back to a plain string. The result is validated.
RunConfig load_run_config(const std::optional<std::filesystem::path>& file,
                          const std::vector<std::string>& overrides = {});

/// Applies one "a.b.c=value" override to a JSON document; unknown keys are rejected.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// output_dir, prefixed by $EATSEG_OUTPUT_ROOT when relative and the variable is set.
std::filesystem::path resolve_output_dir(const RunConfig& c);

/// Writes the effective config as effective_config.json in `dir`.
void archive_config(const RunConfig& c, const std::filesystem::path& dir);

}  // namespace eatseg
