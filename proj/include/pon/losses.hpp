#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pon/core_math.hpp"

// Training objectives. The Poisson focal loss is the primary objective; the
// cross-entropy / vanilla-focal / squared-EMD functions back the comparison
// harness. Gradients are taken with respect to the head's rate lambda; the
// softplus chain rule back to the raw classifier output lives in the nn
// module so the loss math stays independent of the head parameterization.

namespace pon {

struct LossValue {
  double value = 0.0;
  std::optional<double> grad_wrt_rate;  // dL/dlambda, when requested
};

namespace detail {

inline void require_same_classes(const ProbVector& a, const ProbVector& b, const char* where) {
  require(a.num_classes() == b.num_classes(),
          std::string(where) + ": distributions have mismatched class counts");
}

/// Mean of a length-K distribution over class indices 0..K-1.
inline double index_mean(const ProbVector& p) {
  double mean = 0.0;
  for (int k = 0; k < p.num_classes(); ++k) mean += k * p[k];
  return mean;
}

/// Focal weight on the true class. Clamped at zero by default; the absolute
/// variant is kept for ablation.
inline double focal_weight(double target_y, double pred_y, bool abs_variant) {
  const double d = target_y - pred_y;
  return abs_variant ? std::abs(d) : std::max(d, 0.0);
}

}  // namespace detail

/// Forward KL divergence sum_k P[k] log(P[k]/Q[k]) with the 0 log 0 = 0
/// convention for zero target entries.
inline double kl_divergence(const ProbVector& target, const ProbVector& pred) {
  detail::require_same_classes(target, pred, "kl_divergence");
  double kl = 0.0;
  for (int k = 0; k < target.num_classes(); ++k) {
    const double p = target[k];
    if (p == 0.0) continue;
    kl += p * (std::log(p) - std::log(pred[k]));
  }
  // Guard tiny negative roundoff when the distributions coincide.
  return std::isfinite(kl) ? std::max(kl, 0.0) : kl;
}

/// Poisson focal loss w^gamma * KL(target || pred) with w the clamped focal
/// weight on the true class. Value only; see poisson_focal_loss_grad for the
/// rate gradient.
inline LossValue poisson_focal_loss(const ProbVector& target, const ProbVector& pred,
                                    const ClassLabel& label, double gamma,
                                    bool abs_weight = false) {
  detail::require_same_classes(target, pred, "poisson_focal_loss");
  detail::require_label(label, target.num_classes(), "poisson_focal_loss");
  detail::require_finite(gamma, "poisson_focal_loss gamma");
  detail::require(gamma >= 0.0, "poisson_focal_loss: gamma must be >= 0");
  const int y = label.index();
  if (gamma == 0.0) return {kl_divergence(target, pred), std::nullopt};
  const double w = detail::focal_weight(target[y], pred[y], abs_weight);
  if (w == 0.0) return {0.0, std::nullopt};
  return {std::pow(w, gamma) * kl_divergence(target, pred), std::nullopt};
}

/// Poisson focal loss of the Poisson head at the given rate, with the
/// analytic dL/dlambda through pred = softmax(H(lambda)),
/// dH[k]/dlambda = k/lambda - 1.
inline LossValue poisson_focal_loss_grad(const ProbVector& target, const PoissonRate& rate,
                                         const ClassLabel& label, double gamma,
                                         bool abs_weight = false) {
  detail::require_label(label, target.num_classes(), "poisson_focal_loss_grad");
  detail::require_finite(gamma, "poisson_focal_loss_grad gamma");
  detail::require(gamma >= 0.0, "poisson_focal_loss_grad: gamma must be >= 0");
  const int num_classes = target.num_classes();
  const ProbVector pred = normalize_scores(poisson_log_scores(rate, num_classes));
  const int y = label.index();
  const double lambda = rate.value();
  const double pred_mean = detail::index_mean(pred);
  const double target_mean = detail::index_mean(target);
  const double kl = kl_divergence(target, pred);
  const double dkl = (pred_mean - target_mean) / lambda;

  if (gamma == 0.0) return {kl, dkl};

  const double diff = target[y] - pred[y];
  const double w = abs_weight ? std::abs(diff) : std::max(diff, 0.0);
  if (w == 0.0) return {0.0, 0.0};

  // d pred[y] / d lambda through the softmax-over-H composition.
  const double dpred_y = pred[y] * (y - pred_mean) / lambda;
  double dw = -dpred_y;
  if (abs_weight && diff < 0.0) dw = dpred_y;
  const double w_pow = std::pow(w, gamma);
  const double grad = gamma * std::pow(w, gamma - 1.0) * dw * kl + w_pow * dkl;
  return {w_pow * kl, grad};
}

inline LossValue cross_entropy(const ClassLabel& label, const ProbVector& pred) {
  detail::require_label(label, pred.num_classes(), "cross_entropy");
  return {-std::log(pred[label.index()]), std::nullopt};
}

/// Cross-entropy of the Poisson head at the given rate with dL/dlambda.
inline LossValue cross_entropy_grad(const ClassLabel& label, const PoissonRate& rate,
                                    int num_classes) {
  detail::require_label(label, num_classes, "cross_entropy_grad");
  const ProbVector pred = normalize_scores(poisson_log_scores(rate, num_classes));
  const int y = label.index();
  const double pred_mean = detail::index_mean(pred);
  return {-std::log(pred[y]), (pred_mean - y) / rate.value()};
}

/// Vanilla focal loss -(1 - p_y)^gamma log(p_y).
inline LossValue focal_loss(const ClassLabel& label, const ProbVector& pred, double gamma) {
  detail::require_label(label, pred.num_classes(), "focal_loss");
  detail::require_finite(gamma, "focal_loss gamma");
  detail::require(gamma >= 0.0, "focal_loss: gamma must be >= 0");
  const double p = pred[label.index()];
  return {-std::pow(1.0 - p, gamma) * std::log(p), std::nullopt};
}

/// Vanilla focal loss of the Poisson head at the given rate with dL/dlambda.
inline LossValue focal_loss_grad(const ClassLabel& label, const PoissonRate& rate,
                                 int num_classes, double gamma) {
  detail::require_label(label, num_classes, "focal_loss_grad");
  detail::require_finite(gamma, "focal_loss_grad gamma");
  detail::require(gamma >= 0.0, "focal_loss_grad: gamma must be >= 0");
  const ProbVector pred = normalize_scores(poisson_log_scores(rate, num_classes));
  const int y = label.index();
  const double p = pred[y];
  const double pred_mean = detail::index_mean(pred);
  const double dp = p * (y - pred_mean) / rate.value();
  const double value = -std::pow(1.0 - p, gamma) * std::log(p);
  double dvalue_dp;
  if (gamma == 0.0) {
    dvalue_dp = -1.0 / p;
  } else {
    dvalue_dp = gamma * std::pow(1.0 - p, gamma - 1.0) * std::log(p) - std::pow(1.0 - p, gamma) / p;
  }
  return {value, dvalue_dp * dp};
}

/// Squared earth-mover's distance: sum of squared CDF gaps.
inline LossValue squared_emd(const ProbVector& target, const ProbVector& pred) {
  detail::require_same_classes(target, pred, "squared_emd");
  double loss = 0.0;
  double cdf_target = 0.0;
  double cdf_pred = 0.0;
  for (int k = 0; k < target.num_classes(); ++k) {
    cdf_target += target[k];
    cdf_pred += pred[k];
    const double gap = cdf_target - cdf_pred;
    loss += gap * gap;
  }
  return {loss, std::nullopt};
}

/// dL/dpred for the focal-weighted KL objective, used by the softmax-head
/// ablations where the chain continues through plain logits instead of the
/// rate. With gamma = 0 this is the gradient of plain KL.
inline std::vector<double> weighted_kl_grad_wrt_pred(const ProbVector& target,
                                                     const ProbVector& pred,
                                                     const ClassLabel& label, double gamma,
                                                     bool abs_weight = false) {
  detail::require_same_classes(target, pred, "weighted_kl_grad_wrt_pred");
  detail::require_label(label, target.num_classes(), "weighted_kl_grad_wrt_pred");
  detail::require(gamma >= 0.0, "weighted_kl_grad_wrt_pred: gamma must be >= 0");
  const int num_classes = target.num_classes();
  const int y = label.index();
  std::vector<double> grad(static_cast<std::size_t>(num_classes), 0.0);
  if (gamma == 0.0) {
    for (int k = 0; k < num_classes; ++k) {
      if (target[k] > 0.0) grad[static_cast<std::size_t>(k)] = -target[k] / pred[k];
    }
    return grad;
  }
  const double diff = target[y] - pred[y];
  const double w = detail::focal_weight(target[y], pred[y], abs_weight);
  if (w == 0.0) return grad;
  const double kl = kl_divergence(target, pred);
  const double w_pow = std::pow(w, gamma);
  for (int k = 0; k < num_classes; ++k) {
    if (target[k] > 0.0) grad[static_cast<std::size_t>(k)] = -w_pow * target[k] / pred[k];
  }
  // Weight term: dw/dpred[y] = -1 (clamp inactive), sign-flipped for the
  // absolute variant below the clamp point.
  double dw_dpred_y = -1.0;
  if (abs_weight && diff < 0.0) dw_dpred_y = 1.0;
  grad[static_cast<std::size_t>(y)] += gamma * std::pow(w, gamma - 1.0) * dw_dpred_y * kl;
  return grad;
}

/// dL/dpred for the squared-EMD objective.
inline std::vector<double> squared_emd_grad_wrt_pred(const ProbVector& target,
                                                     const ProbVector& pred) {
  detail::require_same_classes(target, pred, "squared_emd_grad_wrt_pred");
  const int num_classes = target.num_classes();
  std::vector<double> gaps(static_cast<std::size_t>(num_classes));
  double cdf_target = 0.0;
  double cdf_pred = 0.0;
  for (int k = 0; k < num_classes; ++k) {
    cdf_target += target[k];
    cdf_pred += pred[k];
    gaps[static_cast<std::size_t>(k)] = cdf_pred - cdf_target;
  }
  // dL/dpred[i] = sum_{j >= i} 2 * gap[j]
  std::vector<double> grad(static_cast<std::size_t>(num_classes));
  double suffix = 0.0;
  for (int i = num_classes - 1; i >= 0; --i) {
    suffix += 2.0 * gaps[static_cast<std::size_t>(i)];
    grad[static_cast<std::size_t>(i)] = suffix;
  }
  return grad;
}

}  // namespace pon
