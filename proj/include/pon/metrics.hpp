#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pon/core_math.hpp"

// Evaluation suite: accuracy, macro one-vs-rest AUC, quadratic weighted
// kappa, macro F1, and the ROC operating-point metrics for the binarized
// high-severity tasks.

namespace pon {

/// K x K counts, rows = true class, columns = predicted class.
struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<std::int64_t> counts;  // row-major

  std::int64_t at(int true_class, int pred_class) const {
    return counts[static_cast<std::size_t>(true_class) * static_cast<std::size_t>(num_classes) +
                  static_cast<std::size_t>(pred_class)];
  }
  std::int64_t total() const { return std::accumulate(counts.begin(), counts.end(), std::int64_t{0}); }
};

inline ConfusionMatrix confusion_matrix(const std::vector<int>& true_labels,
                                        const std::vector<int>& pred_labels, int num_classes) {
  detail::require(num_classes >= 2, "confusion_matrix: K must be >= 2");
  detail::require(true_labels.size() == pred_labels.size(),
                  "confusion_matrix: label lists differ in length");
  detail::require(!true_labels.empty(), "confusion_matrix: empty input");
  ConfusionMatrix cm;
  cm.num_classes = num_classes;
  cm.counts.assign(static_cast<std::size_t>(num_classes) * static_cast<std::size_t>(num_classes), 0);
  for (std::size_t i = 0; i < true_labels.size(); ++i) {
    const int t = true_labels[i];
    const int p = pred_labels[i];
    detail::require(t >= 0 && t < num_classes && p >= 0 && p < num_classes,
                    "confusion_matrix: label out of range");
    cm.counts[static_cast<std::size_t>(t) * static_cast<std::size_t>(num_classes) +
              static_cast<std::size_t>(p)] += 1;
  }
  return cm;
}

inline double accuracy(const ConfusionMatrix& cm) {
  detail::require(cm.total() > 0, "accuracy: empty confusion matrix");
  std::int64_t diag = 0;
  for (int k = 0; k < cm.num_classes; ++k) diag += cm.at(k, k);
  return static_cast<double>(diag) / static_cast<double>(cm.total());
}

/// Unweighted mean over classes of 2PR/(P+R), with 0/0 = 0.
inline double macro_f1(const ConfusionMatrix& cm) {
  detail::require(cm.total() > 0, "macro_f1: empty confusion matrix");
  double sum = 0.0;
  for (int c = 0; c < cm.num_classes; ++c) {
    std::int64_t tp = cm.at(c, c);
    std::int64_t row = 0;
    std::int64_t col = 0;
    for (int k = 0; k < cm.num_classes; ++k) {
      row += cm.at(c, k);
      col += cm.at(k, c);
    }
    const std::int64_t fp = col - tp;
    const std::int64_t fn = row - tp;
    if (2 * tp + fp + fn == 0) {
      std::cerr << "warning: macro_f1 class " << c << " absent from truth and predictions; "
                << "counting F1 term as 0\n";
      continue;
    }
    sum += 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
  }
  return sum / cm.num_classes;
}

/// Quadratic weighted kappa: 1 - sum(w.O)/sum(w.E) with w_ij = (i-j)^2/(K-1)^2
/// and E the outer product of the marginals scaled to the total count.
inline double qwk(const std::vector<int>& true_labels, const std::vector<int>& pred_labels,
                  int num_classes) {
  const ConfusionMatrix cm = confusion_matrix(true_labels, pred_labels, num_classes);
  const int k_count = cm.num_classes;
  std::vector<std::int64_t> row_marginal(static_cast<std::size_t>(k_count), 0);
  std::vector<std::int64_t> col_marginal(static_cast<std::size_t>(k_count), 0);
  for (int i = 0; i < k_count; ++i) {
    for (int j = 0; j < k_count; ++j) {
      row_marginal[static_cast<std::size_t>(i)] += cm.at(i, j);
      col_marginal[static_cast<std::size_t>(j)] += cm.at(i, j);
    }
  }
  const auto distinct = [k_count](const std::vector<std::int64_t>& marginal) {
    int n = 0;
    int last = -1;
    for (int c = 0; c < k_count; ++c) {
      if (marginal[static_cast<std::size_t>(c)] > 0) {
        ++n;
        last = c;
      }
    }
    return std::pair<int, int>(n, last);
  };
  const auto [true_distinct, true_class] = distinct(row_marginal);
  const auto [pred_distinct, pred_class] = distinct(col_marginal);
  if (true_distinct == 1 && pred_distinct == 1) {
    if (true_class == pred_class) return 1.0;
    throw std::invalid_argument("qwk: degenerate marginals disagree; kappa undefined");
  }
  const double total = static_cast<double>(cm.total());
  const double denom_scale = static_cast<double>(k_count - 1) * static_cast<double>(k_count - 1);
  double weighted_observed = 0.0;
  double weighted_expected = 0.0;
  for (int i = 0; i < k_count; ++i) {
    for (int j = 0; j < k_count; ++j) {
      const double w = static_cast<double>((i - j) * (i - j)) / denom_scale;
      weighted_observed += w * static_cast<double>(cm.at(i, j));
      weighted_expected += w * static_cast<double>(row_marginal[static_cast<std::size_t>(i)]) *
                           static_cast<double>(col_marginal[static_cast<std::size_t>(j)]) / total;
    }
  }
  return 1.0 - weighted_observed / weighted_expected;
}

namespace detail {

/// One-vs-rest AUC via the Mann-Whitney rank statistic, ties counted 0.5
/// through average ranks.
inline double binary_auc_ranked(const std::vector<bool>& positive,
                                const std::vector<double>& scores) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&scores](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0.0;
  std::size_t n_pos = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based average rank
    for (std::size_t t = i; t < j; ++t) {
      if (positive[order[t]]) {
        rank_sum_pos += avg_rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::numeric_limits<double>::quiet_NaN();
  return (rank_sum_pos - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1)) /
         (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

}  // namespace detail

/// Macro one-vs-rest AUC. Classes absent from the labels are excluded from
/// the mean with a warning.
inline double macro_auc(const std::vector<int>& labels, const std::vector<ProbVector>& probs) {
  detail::require(!labels.empty(), "macro_auc: empty input");
  detail::require(labels.size() == probs.size(), "macro_auc: labels/probs length mismatch");
  const int num_classes = probs[0].num_classes();
  for (const auto& p : probs) {
    detail::require(p.num_classes() == num_classes, "macro_auc: inconsistent class counts");
  }
  double sum = 0.0;
  int included = 0;
  std::vector<bool> positive(labels.size());
  std::vector<double> scores(labels.size());
  for (int c = 0; c < num_classes; ++c) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      positive[i] = labels[i] == c;
      scores[i] = probs[i][c];
    }
    const double auc = detail::binary_auc_ranked(positive, scores);
    if (std::isnan(auc)) {
      std::cerr << "warning: macro_auc class " << c
                << " absent from labels (or spans all samples); excluded from mean\n";
      continue;
    }
    sum += auc;
    ++included;
  }
  detail::require(included > 0, "macro_auc: no class admits a one-vs-rest AUC");
  return sum / included;
}

/// Probability mass at or above the threshold class: the score for the
/// binarized severity tasks. For K=5 the primary task uses threshold 3, the
/// secondary uses threshold 2.
inline double binarize_significant(const ProbVector& pred, const ClassLabel& threshold_class) {
  detail::require(threshold_class.index() >= 1,
                  "binarize_significant: threshold must be >= 1 (0 is always positive)");
  detail::require_label(threshold_class, pred.num_classes(), "binarize_significant");
  double score = 0.0;
  for (int k = threshold_class.index(); k < pred.num_classes(); ++k) score += pred[k];
  return score;
}

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};
using RocPoints = std::vector<RocPoint>;

/// Empirical ROC sweep over all score thresholds (predict positive at
/// score >= threshold). Starts at (0,0), ends at (1,1). No interpolation.
inline RocPoints roc_points(const std::vector<int>& binary_labels,
                            const std::vector<double>& scores) {
  detail::require(binary_labels.size() == scores.size(), "roc_points: length mismatch");
  detail::require(!binary_labels.empty(), "roc_points: empty input");
  std::int64_t n_pos = 0;
  std::int64_t n_neg = 0;
  for (int y : binary_labels) {
    detail::require(y == 0 || y == 1, "roc_points: labels must be 0/1");
    if (y == 1) ++n_pos; else ++n_neg;
  }
  if (n_pos == 0 || n_neg == 0) {
    throw std::invalid_argument("roc_points: single-class labels; ROC metrics undefined");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&scores](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  RocPoints points;
  points.push_back({0.0, 0.0});
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    for (std::size_t t = i; t < j; ++t) {
      if (binary_labels[order[t]] == 1) ++tp; else ++fp;
    }
    points.push_back({static_cast<double>(fp) / static_cast<double>(n_neg),
                      static_cast<double>(tp) / static_cast<double>(n_pos)});
    i = j;
  }
  return points;
}

/// Maximum sensitivity among operating points whose specificity meets the
/// target (conservative step-function convention).
inline double sen_at_spec(const std::vector<int>& binary_labels, const std::vector<double>& scores,
                          double spec_target) {
  detail::require(spec_target > 0.0 && spec_target < 1.0,
                  "sen_at_spec: target must be in (0,1)");
  const RocPoints points = roc_points(binary_labels, scores);
  double best = 0.0;
  for (const auto& pt : points) {
    if (1.0 - pt.fpr >= spec_target) best = std::max(best, pt.tpr);
  }
  return best;
}

/// Maximum specificity among operating points whose sensitivity meets the
/// target.
inline double spec_at_sen(const std::vector<int>& binary_labels, const std::vector<double>& scores,
                          double sen_target) {
  detail::require(sen_target > 0.0 && sen_target < 1.0,
                  "spec_at_sen: target must be in (0,1)");
  const RocPoints points = roc_points(binary_labels, scores);
  double best = 0.0;
  for (const auto& pt : points) {
    if (pt.tpr >= sen_target) best = std::max(best, 1.0 - pt.fpr);
  }
  return best;
}

/// Operating points for one binarized task at the 80% and 90% targets.
struct BinaryOperating {
  double sen_at_spec80 = 0.0;
  double spec_at_sen80 = 0.0;
  double sen_at_spec90 = 0.0;
  double spec_at_sen90 = 0.0;
};

struct EvalReport {
  double acc = 0.0;
  std::optional<double> macro_auc;  // absent for methods without probabilistic output
  double qwk = 0.0;
  double macro_f1 = 0.0;
  std::optional<BinaryOperating> primary;    // severity >= 3 task
  std::optional<BinaryOperating> secondary;  // severity >= 2 task
  ConfusionMatrix cm;
  RocPoints primary_roc;
  RocPoints secondary_roc;
};

}  // namespace pon
