#pragma once

#include <string>
#include <vector>

#include "tta/dataset.hpp"
#include "tta/losses.hpp"
#include "tta/model.hpp"
#include "tta/optim.hpp"

namespace tta {

enum class Method { kNoAdapt, kTent, kTentPlus, kPl, kHlr, kSlr, kSupervisedOracle };

const char* method_name(Method m);
Method method_from_name(const std::string& name);

struct AdaptConfig {
  Method method = Method::kSlr;
  double delta = 0.025;
  double kappa = 0.9;
  int epochs = 5;
  int batch_size = 64;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double lr0 = 6e-4;
  Schedule schedule = Schedule::kCosine;
  uint64_t seed = 2020;
  bool use_input_transform = false;
  bool freeze_top = true;
  bool use_diversity = true;
  ConfKind conf_kind = ConfKind::kSlr;
  Tensor target_distribution;  // empty -> uniform over the classes
};

// Method-determined defaults: TENT runs SGD(0.9) at constant 2.5e-4 with all
// norm affines adaptable and no diversity term; TENT+ adds the diversity term
// and top-layer freezing; PL/HLR/SLR run Adam at cosine-decayed 6e-4 with
// delta=0.025, kappa=0.9; the supervised oracle shares the PL/HLR/SLR
// optimizer settings with a ground-truth cross-entropy loss.
AdaptConfig make_config(Method m, uint64_t seed);

struct TraceRecord {
  int epoch = 0;  // 0 = pre-adaptation
  double accuracy = 0.0;
  double mean_loss = 0.0;
  double l_div = 0.0;
  double l_conf = 0.0;
  int unique_classes = 0;
  double mean_entropy = 0.0;
  double lr = 0.0;
};

struct AdaptTrace {
  std::vector<TraceRecord> records;
  bool aborted = false;
  std::string abort_reason;
};

struct EvalStats {
  double accuracy = 0.0;
  int unique_classes = 0;
  double mean_entropy = 0.0;
  double max_abs_logit = 0.0;
};

// Forward-only evaluation in fixed order; running statistics are left
// untouched. The benchmark default is transductive (train-stats) batch
// normalization, matching adaptation-time behavior.
EvalStats evaluate(AdaptableModel& m, const Dataset& ds, int batch_size,
                   bool with_transform, NormMode mode = NormMode::kTrainStats);

// Fully test-time adaptation on `target`, tracing per-epoch metrics on
// `eval_set` (the target itself when null). The caller provides a pristine
// or freshly reset model; NaN losses and poisoned optimizer state abort the
// run with the trace retained.
AdaptTrace adapt(AdaptableModel& m, const Dataset& target, const AdaptConfig& cfg,
                 const Dataset* eval_set = nullptr);

}  // namespace tta
