#pragma once

#include <iostream>
#include <optional>
#include <vector>

#include "pon/data.hpp"
#include "pon/metrics.hpp"
#include "pon/nn.hpp"

// Full held-out evaluation: multiclass metrics plus the two binarized
// severity tasks with operating points at the 80% and 90% targets.

namespace pon {

namespace detail {

inline std::optional<BinaryOperating> binary_task(const std::vector<int>& labels,
                                                  const std::vector<ProbVector>& probs,
                                                  int threshold, RocPoints* roc_out) {
  std::vector<int> binary(labels.size());
  std::vector<double> scores(labels.size());
  const ClassLabel thr(threshold);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    binary[i] = labels[i] >= threshold ? 1 : 0;
    scores[i] = binarize_significant(probs[i], thr);
  }
  try {
    if (roc_out) *roc_out = roc_points(binary, scores);
    BinaryOperating op;
    op.sen_at_spec80 = sen_at_spec(binary, scores, 0.80);
    op.spec_at_sen80 = spec_at_sen(binary, scores, 0.80);
    op.sen_at_spec90 = sen_at_spec(binary, scores, 0.90);
    op.spec_at_sen90 = spec_at_sen(binary, scores, 0.90);
    return op;
  } catch (const std::invalid_argument& e) {
    std::cerr << "warning: binary task at threshold " << threshold << " skipped: " << e.what()
              << "\n";
    return std::nullopt;
  }
}

}  // namespace detail

/// Evaluate trained parameters on a dataset. Methods without probabilistic
/// output (the ordinal-threshold baseline) get label metrics only.
inline EvalReport evaluate(const ModelParams& params, const Dataset& ds,
                           const LossScheme& scheme) {
  detail::require(ds.size() >= 1, "evaluate: empty dataset");
  const int num_classes = params.shape.num_classes;
  detail::require(ds.num_classes <= num_classes, "evaluate: dataset has more classes than model");

  std::vector<int> preds;
  std::vector<ProbVector> probs;
  preds.reserve(static_cast<std::size_t>(ds.size()));
  for (int i = 0; i < ds.size(); ++i) {
    ForwardTrace t = forward_trace(params, ds.row(i), false);
    preds.push_back(t.predicted_label);
    if (probabilistic_output(scheme)) probs.emplace_back(t.pred);
  }

  EvalReport report;
  report.cm = confusion_matrix(ds.labels, preds, num_classes);
  report.acc = accuracy(report.cm);
  report.qwk = qwk(ds.labels, preds, num_classes);
  report.macro_f1 = macro_f1(report.cm);
  if (probabilistic_output(scheme)) {
    report.macro_auc = macro_auc(ds.labels, probs);
    if (num_classes >= 4) {
      report.primary = detail::binary_task(ds.labels, probs, 3, &report.primary_roc);
    }
    if (num_classes >= 3) {
      report.secondary = detail::binary_task(ds.labels, probs, 2, &report.secondary_roc);
    }
  }
  return report;
}

}  // namespace pon
