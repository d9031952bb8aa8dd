// Self-contained verification batteries behind `check --shapes` and
// `check --grad`; the acceptance suite reuses them.
#pragma once

#include <ostream>

namespace avword {

struct ShapeCheckResult {
  bool ok = false;
  double forward_seconds = 0.0;  // full 112x112, T=29, batch 1 eval pass
};

// Prints and asserts the published tensor chains: the visual frontend chain
// at 112 (1x112x112 -> 64x28x28 -> 128x14x14 -> 256x7x7 -> 512x4x4 -> 8192
// -> 256, T=29 preserved) and the temporal-convolutional chain
// (29x256 -> 7x512 -> 1x1024 -> 256 -> 500). Runs a real forward pass at
// full resolution to verify the runtime shapes and reports its wall time.
ShapeCheckResult run_shape_checks(std::ostream& os, bool run_full_forward = true);

struct GradCheckSummary {
  bool ok = false;
  double worst = 0.0;
  double seconds = 0.0;
};

// Finite-difference battery: conv3d, maxpool3d, batchnorm, linear,
// softmax-CE, lstm_step, and a full 2-layer bidirectional backend, 20 seeds
// each at the 1e-4 gate.
GradCheckSummary run_gradient_battery(std::ostream& os);

}  // namespace avword
