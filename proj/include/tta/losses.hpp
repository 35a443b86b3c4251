#pragma once

#include "tta/tape.hpp"

namespace tta {

// Which confidence objective drives adaptation.
enum class ConfKind { kEntropy, kHardPl, kHlr, kSlr };

struct LossWeights {
  double delta = 0.025;  // weight of the confidence term
  ConfKind conf_kind = ConfKind::kSlr;
};

// Running estimate p_t of the prediction distribution, matched against a
// target class distribution by KL divergence. kappa = 0 degenerates to the
// plain batch-wise regularizer.
struct DiversityState {
  Tensor p_t;      // (n_cl)
  Tensor target;   // (n_cl), strictly positive
  double kappa = 0.9;
  int64_t step_count = 0;

  static DiversityState uniform(int n_classes, double kappa);
};

// Confidence losses over one row of logits. All are computed in logit space
// via max-subtracted log-sum-exp; the probability-space forms live in the
// test oracles only. The argmax class is held constant during backward.
Value cross_entropy_logits(Tape& t, Value logits, int ref_class);
Value cross_entropy_logits(Tape& t, Value logits, const Tensor& one_hot);
Value loss_pl(Tape& t, Value logits);
Value loss_ent(Tape& t, Value logits);
Value loss_hlr(Tape& t, Value logits);
Value loss_slr(Tape& t, Value logits);

// Row-wise softmax of a batch of logits (N,n_cl) -> confidences.
Value softmax(Tape& t, Value logits);

// Negative log likelihood ratio between a confidence row and a reference
// row, evaluated in probability space (test/diagnostic path).
double nll_ratio(const Tensor& y_hat, const Tensor& y_ref);

// Mean of the selected confidence loss over the rows of a logits batch.
Value mean_conf_loss(Tape& t, Value logits, ConfKind kind);

// p_t <- kappa * p_{t-1} + (1-kappa) * batch mean of confidences.
void update_diversity(DiversityState& state, const Tensor& confidences);

// KL(p_t || target) as a plain number over the stored estimate.
double loss_div(const DiversityState& state);

// Differentiable total loss for one batch: KL of the updated running
// estimate plus delta times the mean confidence loss. Gradients flow into
// p_t only through the current batch's contribution; the kappa-weighted
// history enters as a constant. Updates `state` in place.
struct TotalLossParts {
  Value total;
  Value div;
  Value conf;
};
TotalLossParts total_loss_parts(Tape& t, Value logits, DiversityState& state,
                                const LossWeights& w);
Value total_loss(Tape& t, Value logits, DiversityState& state, const LossWeights& w);

}  // namespace tta
