#pragma once

#include "tta/tape.hpp"

namespace tta {

struct Conv2dParams {
  Tensor weight;  // (out_ch, in_ch, k, k)
  Tensor bias;    // (out_ch)
  int stride = 1;
  int padding = 0;
};

enum class NormMode { kTrainStats, kRunningStats };

// State of one normalization layer. Batch norm owns running statistics and a
// momentum; group norm uses group_count and ignores the running buffers.
struct NormLayerState {
  Tensor gamma;
  Tensor beta;
  double eps = 1e-5;
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  NormMode mode = NormMode::kTrainStats;
  int group_count = 1;
};

// Thin spec-facing wrappers over the tape ops; model code binds parameters
// itself and calls the tape directly.
Value conv2d_forward(Tape& t, Value x, const Conv2dParams& p);
Value batch_norm_forward(Tape& t, Value x, NormLayerState& s, bool update_running = true);
Value group_norm_forward(Tape& t, Value x, const NormLayerState& s);

}  // namespace tta
