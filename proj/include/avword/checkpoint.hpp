// Checkpoint directory format: manifest.json naming every tensor, one TNSR
// blob per parameter/buffer, and optimizer + scheduler state.
#pragma once

#include <optional>
#include <string>

#include "avword/layers.hpp"
#include "avword/optim.hpp"

namespace avword {

struct CheckpointExtras {
  std::string model_spec_json;  // config echo, informational
  std::optional<AdamState> optimizer;
  std::optional<PlateauState> scheduler;
};

void save_checkpoint(const std::string& dir, ParamMap<float>& params,
                     const BufMap<float>& buffers, const CheckpointExtras& extras);

// Loads tensors into an existing model's maps. Any name or shape mismatch is
// an artifact mismatch error (CLI exit code 3).
CheckpointExtras load_checkpoint(const std::string& dir, ParamMap<float>& params,
                                 const BufMap<float>& buffers);

}  // namespace avword
