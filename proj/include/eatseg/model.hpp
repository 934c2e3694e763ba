#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "eatseg/tensor.hpp"

namespace eatseg {

enum class NormKind { batch, none };

/// U-Net encoder-decoder layout.
///
/// Each encoder level is two 3x3 conv -> norm -> ReLU units followed by 2x2
/// max pooling; widths double per level starting at `base_width`. The decoder
/// mirrors it with 2x2 stride-2 transposed convolutions, concatenates the
/// skip connection ([upsampled, skip] channel order) and applies the same
/// double conv unit. A 1x1 conv and a sigmoid produce the probability map.
///
/// With the defaults (depth 4, base width 28, batch norm) the network has
/// 5,944,121 trainable parameters.
struct SegModelConfig {
    int in_channels = 2;
    int out_channels = 1;
    int depth = 4;
    int base_width = 28;
    int input_size = 128;
    NormKind norm = NormKind::batch;
    std::int64_t target_param_count = 5'800'000;
    double param_tolerance = 0.10;

    bool operator==(const SegModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const SegModelConfig& c);
void from_json(const nlohmann::json& j, SegModelConfig& c);

/// Throws configuration errors for structural problems (channel counts,
/// input size not divisible by 2^depth, parameter budget outside tolerance).
void validate(const SegModelConfig& cfg);

/// Trainable parameter count implied by the layout, without instantiating it.
std::int64_t count_parameters(const SegModelConfig& cfg);

struct Parameter {
    std::string name;
    std::vector<int> dims;
    std::vector<float> value;
    std::vector<float> grad;
};

/// Non-trainable state (batch-norm running statistics).
struct Buffer {
    std::string name;
    std::vector<float> value;
};

/// Flat copy of every parameter and buffer value, in registration order.
struct ModelState {
    std::vector<std::vector<float>> values;
    bool operator==(const ModelState&) const = default;
};

class SegModel {
public:
    static SegModel build(const SegModelConfig& cfg, std::uint64_t seed);

    SegModel(SegModel&&) noexcept;
    SegModel& operator=(SegModel&&) noexcept;
    ~SegModel();

    const SegModelConfig& config() const;
    std::uint64_t seed() const;
    std::int64_t parameter_count() const;

    /// Inference with running statistics; (B, 2, S, S) -> (B, 1, S, S) in (0, 1).
    Tensor forward(const Tensor& batch) const;

    /// Training-mode forward: uses batch statistics, updates running averages
    /// and caches activations for `backward`.
    Tensor forward_train(const Tensor& batch);

    /// Back-propagates d(loss)/d(output probability) and accumulates parameter gradients.
    void backward(const Tensor& d_prob);

    void zero_grad();

    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;
    std::vector<Buffer*> buffers();
    std::vector<const Buffer*> buffers() const;

    ModelState snapshot() const;
    void restore(const ModelState& state);

private:
    struct Impl;
    explicit SegModel(std::unique_ptr<Impl> impl);
    std::unique_ptr<Impl> impl_;
};

struct CheckpointInfo {
    int epoch = 0;
    double val_loss = 0.0;
    std::uint64_t seed = 0;
    SegModelConfig config;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary container: 8-byte magic, u32 format version, u64 header length, a
/// UTF-8 JSON header (config, epoch, val_loss, seed, tensor table) and the
/// named float32 little-endian tensors.
void save_checkpoint(const SegModel& model, int epoch, double val_loss, const std::filesystem::path& path);

struct LoadedCheckpoint {
    SegModel model;
    CheckpointInfo info;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// As above, but rejects checkpoints whose config differs from `expected`,
/// naming the first mismatched field.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const SegModelConfig& expected);

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

}  // namespace eatseg
