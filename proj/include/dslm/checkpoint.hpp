#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dslm/model.hpp"

namespace dslm {

inline constexpr int kCheckpointFormatVersion = 1;

/// Everything needed to continue or evaluate a model. Tensors are stored as
/// little-endian float32; `meta` carries stage-specific progress as JSON.
struct Checkpoint {
    std::string stage = "init";
    long step = 0;
    std::string rng_state;
    ModelParams<float> params;
    std::optional<LoraAdapters<float>> lora;
    std::vector<float> opt_m;
    std::vector<float> opt_v;
    long opt_t = 0;
    json meta = json::object();
};

/// File layout: 8-byte magic "DSLMCKPT", u64 header length, JSON header
/// (format_version, config, stage, step, rng_state, tensors with shapes and
/// byte offsets, meta), then the raw tensor payload.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);

/// Throws ValidationError on a bad magic, unsupported version, or a config
/// that differs from `expect` when given.
Checkpoint load_checkpoint(const std::string& path, const ModelConfig* expect = nullptr);

/// Parameters ready for inference: adapters merged when present.
ModelParams<float> inference_params(const Checkpoint& ckpt);

}  // namespace dslm
