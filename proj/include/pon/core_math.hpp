#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

// Truncated-Poisson probability machinery: the rate activation, per-class
// log-scores, softmax normalization, and the label encodings used for
// supervision and for the baseline comparison harness.
//
// Classes are indexed k = 0..K-1 throughout, ordered from least to most
// severe.

namespace pon {

/// Smallest event rate the head will emit. Keeps log(lambda) finite.
inline constexpr double kMinRate = 1e-12;

namespace detail {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw std::invalid_argument(std::string(what) + " must be finite");
}

}  // namespace detail

/// Positive scalar event rate lambda emitted by the classifier head.
class PoissonRate {
 public:
  explicit PoissonRate(double value) : value_(value) {
    detail::require_finite(value, "PoissonRate");
    detail::require(value > 0.0, "PoissonRate must be strictly positive");
  }
  double value() const { return value_; }

 private:
  double value_;
};

/// Class index in {0, .., K-1}. The upper bound is checked by each operation
/// that knows K.
class ClassLabel {
 public:
  explicit ClassLabel(int index) : index_(index) {
    detail::require(index >= 0, "ClassLabel index must be non-negative");
  }
  int index() const { return index_; }

 private:
  int index_;
};

namespace detail {

inline void require_label(const ClassLabel& y, int num_classes, const char* where) {
  require(y.index() < num_classes,
          std::string(where) + ": label " + std::to_string(y.index()) +
              " out of range for K=" + std::to_string(num_classes));
}

}  // namespace detail

/// Per-class log-scores H, the un-normalized log probabilities of the head.
struct LogScores {
  std::vector<double> scores;

  int num_classes() const { return static_cast<int>(scores.size()); }
};

/// Length-K discrete probability distribution: entries non-negative, sum 1
/// within 1e-9. Used for both predictions and encoded targets.
class ProbVector {
 public:
  explicit ProbVector(std::vector<double> probs) : probs_(std::move(probs)) {
    detail::require(probs_.size() >= 2, "ProbVector needs at least two classes");
    double sum = 0.0;
    for (double p : probs_) {
      detail::require_finite(p, "ProbVector entry");
      detail::require(p >= 0.0, "ProbVector entries must be non-negative");
      sum += p;
    }
    detail::require(std::abs(sum - 1.0) <= 1e-9, "ProbVector entries must sum to 1");
  }

  int num_classes() const { return static_cast<int>(probs_.size()); }
  double operator[](int k) const { return probs_[static_cast<std::size_t>(k)]; }
  const std::vector<double>& probs() const { return probs_; }

 private:
  std::vector<double> probs_;
};

/// log(k!) via an exact table for small k (factorials are exact doubles up to
/// 18!) and lgamma beyond. Never computes an integer factorial that can
/// overflow.
inline double log_factorial(int k) {
  detail::require(k >= 0, "log_factorial: k must be non-negative");
  static const std::vector<double> table = [] {
    std::vector<double> t;
    double fact = 1.0;
    t.push_back(0.0);
    for (int i = 1; i <= 18; ++i) {
      fact *= i;
      t.push_back(std::log(fact));
    }
    return t;
  }();
  if (k < static_cast<int>(table.size())) return table[static_cast<std::size_t>(k)];
  return std::lgamma(static_cast<double>(k) + 1.0);
}

/// Overflow-safe softplus log(1 + e^z), floored at kMinRate.
inline PoissonRate softplus(double z) {
  detail::require_finite(z, "softplus input");
  // For large z, log1p(e^-z) evaluates the asymptote z + e^-z without
  // overflowing e^z.
  const double sp = (z > 30.0) ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
  return PoissonRate(std::max(sp, kMinRate));
}

/// d softplus / dz = sigmoid(z); zero inside the floored region so the
/// activation and its derivative stay consistent.
inline double softplus_grad(double z) {
  detail::require_finite(z, "softplus_grad input");
  if (z < -30.0 && std::exp(z) < kMinRate) return 0.0;
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// H[k] = k log(lambda) - lambda - log(k!) for k = 0..K-1.
inline LogScores poisson_log_scores(const PoissonRate& rate, int num_classes) {
  detail::require(num_classes >= 2, "poisson_log_scores: K must be >= 2");
  const double lambda = rate.value();
  const double log_lambda = std::log(lambda);
  LogScores out;
  out.scores.resize(static_cast<std::size_t>(num_classes));
  for (int k = 0; k < num_classes; ++k) {
    out.scores[static_cast<std::size_t>(k)] = k * log_lambda - lambda - log_factorial(k);
  }
  return out;
}

/// Softmax with max-subtraction. Input entries must be finite.
inline std::vector<double> stable_softmax(std::span<const double> scores) {
  detail::require(!scores.empty(), "stable_softmax: empty input");
  double max_score = scores[0];
  for (double s : scores) {
    detail::require_finite(s, "stable_softmax entry");
    max_score = std::max(max_score, s);
  }
  std::vector<double> out(scores.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp(scores[i] - max_score);
    sum += out[i];
  }
  for (double& p : out) p /= sum;
  return out;
}

/// Predicted distribution: softmax over the Poisson log-scores.
inline ProbVector normalize_scores(const LogScores& scores) {
  detail::require(scores.num_classes() >= 2, "normalize_scores: K must be >= 2");
  return ProbVector(stable_softmax(scores.scores));
}

/// Poisson encoding of an integer label: P[k] proportional to
/// (y^k e^-y / k!)^t, computed in log-space. y = 0 encodes as the delta at
/// class 0 (0^0 = 1 convention). Temperature t > 0 controls smoothness.
inline ProbVector poisson_encode(const ClassLabel& label, int num_classes, double temperature) {
  detail::require(num_classes >= 2, "poisson_encode: K must be >= 2");
  detail::require_label(label, num_classes, "poisson_encode");
  detail::require_finite(temperature, "poisson_encode temperature");
  detail::require(temperature > 0.0, "poisson_encode: temperature must be positive");
  const int y = label.index();
  if (y == 0) {
    std::vector<double> delta(static_cast<std::size_t>(num_classes), 0.0);
    delta[0] = 1.0;
    return ProbVector(std::move(delta));
  }
  const double log_y = std::log(static_cast<double>(y));
  std::vector<double> scaled(static_cast<std::size_t>(num_classes));
  for (int k = 0; k < num_classes; ++k) {
    scaled[static_cast<std::size_t>(k)] = temperature * (k * log_y - y - log_factorial(k));
  }
  return ProbVector(stable_softmax(scaled));
}

inline ProbVector one_hot_encode(const ClassLabel& label, int num_classes) {
  detail::require(num_classes >= 2, "one_hot_encode: K must be >= 2");
  detail::require_label(label, num_classes, "one_hot_encode");
  std::vector<double> delta(static_cast<std::size_t>(num_classes), 0.0);
  delta[static_cast<std::size_t>(label.index())] = 1.0;
  return ProbVector(std::move(delta));
}

/// Cumulative "greater-than-threshold" code: entry j = 1 iff label > j.
/// Length K-1; this is a threshold vector, not a distribution.
inline std::vector<double> ordinal_cumulative_encode(const ClassLabel& label, int num_classes) {
  detail::require(num_classes >= 2, "ordinal_cumulative_encode: K must be >= 2");
  detail::require_label(label, num_classes, "ordinal_cumulative_encode");
  std::vector<double> code(static_cast<std::size_t>(num_classes - 1), 0.0);
  for (int j = 0; j < num_classes - 1; ++j) {
    if (label.index() > j) code[static_cast<std::size_t>(j)] = 1.0;
  }
  return code;
}

/// Gaussian-kernel soft label: P[k] proportional to exp(-(k - y)^2 / 2 sigma^2).
inline ProbVector soft_label_encode(const ClassLabel& label, int num_classes, double sigma) {
  detail::require(num_classes >= 2, "soft_label_encode: K must be >= 2");
  detail::require_label(label, num_classes, "soft_label_encode");
  detail::require_finite(sigma, "soft_label_encode sigma");
  detail::require(sigma > 0.0, "soft_label_encode: sigma must be positive");
  std::vector<double> scores(static_cast<std::size_t>(num_classes));
  for (int k = 0; k < num_classes; ++k) {
    const double d = static_cast<double>(k - label.index());
    scores[static_cast<std::size_t>(k)] = -(d * d) / (2.0 * sigma * sigma);
  }
  return ProbVector(stable_softmax(scores));
}

inline int argmax(const ProbVector& p) {
  const auto& v = p.probs();
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// Non-strict unimodality: non-decreasing up to some peak, non-increasing
/// after. The slack absorbs roundoff at exact plateau ties.
inline bool is_unimodal(const ProbVector& p, double slack = 1e-12) {
  const auto& v = p.probs();
  std::size_t peak = 0;
  for (std::size_t k = 1; k < v.size(); ++k) {
    if (v[k] > v[peak]) peak = k;
  }
  for (std::size_t k = 0; k < peak; ++k) {
    if (v[k + 1] < v[k] - slack) return false;
  }
  for (std::size_t k = peak; k + 1 < v.size(); ++k) {
    if (v[k + 1] > v[k] + slack) return false;
  }
  return true;
}

}  // namespace pon
