#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

// Independent reference implementations used to cross-check the library.
// Everything here is deliberately naive: direct powering in long double,
// explicit double loops, all-pairs counting. Slow and obviously correct.

namespace oracle {

/// Truncated Poisson mass via direct long-double evaluation of
/// lambda^k e^-lambda / k!, renormalized over k = 0..K-1.
inline std::vector<double> truncated_poisson(double lambda, int num_classes) {
  std::vector<long double> mass(static_cast<std::size_t>(num_classes));
  long double sum = 0.0L;
  for (int k = 0; k < num_classes; ++k) {
    long double term = std::exp(-static_cast<long double>(lambda));
    for (int i = 1; i <= k; ++i) term *= static_cast<long double>(lambda) / i;
    mass[static_cast<std::size_t>(k)] = term;
    sum += term;
  }
  std::vector<double> out(static_cast<std::size_t>(num_classes));
  for (int k = 0; k < num_classes; ++k) {
    out[static_cast<std::size_t>(k)] = static_cast<double>(mass[static_cast<std::size_t>(k)] / sum);
  }
  return out;
}

inline double kl_brute(const std::vector<double>& target, const std::vector<double>& pred) {
  long double kl = 0.0L;
  for (std::size_t k = 0; k < target.size(); ++k) {
    if (target[k] == 0.0) continue;
    kl += static_cast<long double>(target[k]) *
          (std::log(static_cast<long double>(target[k])) -
           std::log(static_cast<long double>(pred[k])));
  }
  return static_cast<double>(kl);
}

inline double entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

/// Quadratic weighted kappa from first principles: explicit observed and
/// expected matrices, explicit weight loop.
inline double qwk_brute(const std::vector<int>& truth, const std::vector<int>& pred,
                        int num_classes) {
  const std::size_t k = static_cast<std::size_t>(num_classes);
  std::vector<std::vector<double>> observed(k, std::vector<double>(k, 0.0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    observed[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(pred[i])] += 1.0;
  }
  std::vector<double> row(k, 0.0), col(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      row[i] += observed[i][j];
      col[j] += observed[i][j];
    }
  }
  const double total = static_cast<double>(truth.size());
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const double di = static_cast<double>(i) - static_cast<double>(j);
      const double w = di * di / ((num_classes - 1.0) * (num_classes - 1.0));
      num += w * observed[i][j];
      den += w * row[i] * col[j] / total;
    }
  }
  return 1.0 - num / den;
}

/// One-vs-rest AUC by comparing every positive/negative pair; ties count 0.5.
inline double auc_all_pairs(const std::vector<bool>& positive, const std::vector<double>& scores) {
  double wins = 0.0;
  long pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!positive[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (positive[j]) continue;
      ++pairs;
      if (scores[i] > scores[j]) {
        wins += 1.0;
      } else if (scores[i] == scores[j]) {
        wins += 0.5;
      }
    }
  }
  return wins / static_cast<double>(pairs);
}

/// Best sensitivity subject to a specificity floor, by trying every score as
/// the decision threshold (predict positive at score >= threshold), plus the
/// all-negative threshold.
inline double sen_at_spec_enumerate(const std::vector<int>& labels,
                                    const std::vector<double>& scores, double spec_target) {
  std::vector<double> thresholds = scores;
  thresholds.push_back(*std::max_element(scores.begin(), scores.end()) + 1.0);
  double best = 0.0;
  for (double thr : thresholds) {
    long tp = 0, fn = 0, tn = 0, fp = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const bool hit = scores[i] >= thr;
      if (labels[i] == 1) {
        (hit ? tp : fn) += 1;
      } else {
        (hit ? fp : tn) += 1;
      }
    }
    const double sens = static_cast<double>(tp) / static_cast<double>(tp + fn);
    const double spec = static_cast<double>(tn) / static_cast<double>(tn + fp);
    if (spec >= spec_target) best = std::max(best, sens);
  }
  return best;
}

inline double spec_at_sen_enumerate(const std::vector<int>& labels,
                                    const std::vector<double>& scores, double sen_target) {
  std::vector<double> thresholds = scores;
  thresholds.push_back(*std::max_element(scores.begin(), scores.end()) + 1.0);
  double best = 0.0;
  for (double thr : thresholds) {
    long tp = 0, fn = 0, tn = 0, fp = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const bool hit = scores[i] >= thr;
      if (labels[i] == 1) {
        (hit ? tp : fn) += 1;
      } else {
        (hit ? fp : tn) += 1;
      }
    }
    const double sens = static_cast<double>(tp) / static_cast<double>(tp + fn);
    const double spec = static_cast<double>(tn) / static_cast<double>(tn + fp);
    if (sens >= sen_target) best = std::max(best, spec);
  }
  return best;
}

/// Spearman rank correlation with average ranks for ties.
inline std::vector<double> average_ranks(const std::vector<double>& values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&values](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && values[order[j]] == values[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) ranks[order[t]] = avg;
    i = j;
  }
  return ranks;
}

inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const std::vector<double> ra = average_ranks(a);
  const std::vector<double> rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  return cov / std::sqrt(va * vb);
}

}  // namespace oracle
