#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pon/contrastive.hpp"
#include "pon/core_math.hpp"
#include "pon/data.hpp"
#include "pon/losses.hpp"
#include "pon/metrics.hpp"
#include "pon/random.hpp"

// Desk-scale trainable model: MLP encoder f, scalar classifier head h,
// two-layer projector g, with hand-written reverse-mode gradients, Adam, the
// class-balancing sampler, and the end-to-end loop minimizing
// L = L_pfl + L_mcl. Training is single-threaded and deterministic by
// contract; forward inference over trained parameters is pure.

namespace pon {

struct Affine {
  int in = 0;
  int out = 0;
  std::vector<double> w;  // row-major out x in
  std::vector<double> b;  // out
};

enum class HeadKind { kPoisson, kSoftmax, kOrdinal };
enum class TargetKind { kPoissonEncoding, kOneHot, kGaussian, kOrdinalCode };
enum class LossKind { kWeightedKl, kEmd, kBce };

enum class Method { kPon, kCe, kFocal, kEmd, kOrdinal, kSoftlabel };

inline std::string method_to_string(Method m) {
  switch (m) {
    case Method::kPon: return "pon";
    case Method::kCe: return "ce";
    case Method::kFocal: return "focal";
    case Method::kEmd: return "emd";
    case Method::kOrdinal: return "ordinal";
    case Method::kSoftlabel: return "softlabel";
  }
  throw std::logic_error("method_to_string: unknown method");
}

inline Method method_from_string(const std::string& s) {
  if (s == "pon") return Method::kPon;
  if (s == "ce") return Method::kCe;
  if (s == "focal") return Method::kFocal;
  if (s == "emd") return Method::kEmd;
  if (s == "ordinal") return Method::kOrdinal;
  if (s == "softlabel") return Method::kSoftlabel;
  throw std::invalid_argument("unknown method '" + s +
                              "' (expected pon|ce|focal|emd|ordinal|softlabel)");
}

/// Ablation toggles: Poisson-based prediction, Poisson encoding, the focal
/// weighting of the KL objective, and the memory-bank contrastive branch.
struct Toggles {
  bool poisson_head = true;
  bool poisson_encoding = true;
  bool pfl = true;
  bool mcl = true;
};

struct ModelConfig {
  std::vector<int> encoder_widths{64, 32};
  int proj_hidden = 32;
  int proj_dim = 16;
  int num_classes = 0;  // 0 = infer from the dataset's label range
};

struct ModelShape {
  int input_dim = 0;
  std::vector<int> encoder_widths{64, 32};
  int num_classes = 5;
  int proj_hidden = 32;
  int proj_dim = 16;
  HeadKind head = HeadKind::kPoisson;

  int feature_dim() const { return encoder_widths.empty() ? input_dim : encoder_widths.back(); }
  int classifier_out() const {
    switch (head) {
      case HeadKind::kPoisson: return 1;
      case HeadKind::kSoftmax: return num_classes;
      case HeadKind::kOrdinal: return num_classes - 1;
    }
    return 1;
  }
  void validate() const {
    detail::require(input_dim >= 1, "ModelShape: input_dim must be positive");
    detail::require(num_classes >= 2, "ModelShape: num_classes must be >= 2");
    detail::require(proj_hidden >= 1 && proj_dim >= 1, "ModelShape: projector dims must be positive");
    for (int w : encoder_widths) detail::require(w >= 1, "ModelShape: encoder widths must be positive");
  }
};

struct ModelParams {
  ModelShape shape;
  std::vector<Affine> encoder;  // ReLU after every layer
  Affine classifier;            // feature -> classifier_out()
  Affine proj_in;               // feature -> proj_hidden, ReLU
  Affine proj_out;              // proj_hidden -> proj_dim, then L2 normalize
};

namespace detail {

inline Affine make_affine(int in, int out) {
  Affine a;
  a.in = in;
  a.out = out;
  a.w.assign(static_cast<std::size_t>(in) * static_cast<std::size_t>(out), 0.0);
  a.b.assign(static_cast<std::size_t>(out), 0.0);
  return a;
}

inline void glorot_fill(Affine& a, Rng& rng) {
  const double limit = std::sqrt(6.0 / (a.in + a.out));
  for (double& w : a.w) w = uniform_range(rng, -limit, limit);
  // biases stay zero
}

inline void affine_forward(const Affine& a, std::span<const double> x, std::vector<double>& out) {
  out.assign(static_cast<std::size_t>(a.out), 0.0);
  for (int o = 0; o < a.out; ++o) {
    const double* row = a.w.data() + static_cast<std::size_t>(o) * static_cast<std::size_t>(a.in);
    double s = a.b[static_cast<std::size_t>(o)];
    for (int i = 0; i < a.in; ++i) s += row[i] * x[static_cast<std::size_t>(i)];
    out[static_cast<std::size_t>(o)] = s;
  }
}

/// Accumulate d(loss)/d(a.w), d(loss)/d(a.b) given upstream dL/dout, and
/// return dL/dx added into dx.
inline void affine_backward(const Affine& a, std::span<const double> x,
                            std::span<const double> dout, Affine& grad,
                            std::vector<double>* dx) {
  for (int o = 0; o < a.out; ++o) {
    const double g = dout[static_cast<std::size_t>(o)];
    if (g == 0.0) continue;
    double* wrow = grad.w.data() + static_cast<std::size_t>(o) * static_cast<std::size_t>(a.in);
    const double* arow = a.w.data() + static_cast<std::size_t>(o) * static_cast<std::size_t>(a.in);
    grad.b[static_cast<std::size_t>(o)] += g;
    for (int i = 0; i < a.in; ++i) {
      wrow[i] += g * x[static_cast<std::size_t>(i)];
      if (dx) (*dx)[static_cast<std::size_t>(i)] += g * arow[i];
    }
  }
}

}  // namespace detail

inline ModelParams init_params(const ModelShape& shape, Rng& rng) {
  shape.validate();
  ModelParams p;
  p.shape = shape;
  int prev = shape.input_dim;
  for (int width : shape.encoder_widths) {
    p.encoder.push_back(detail::make_affine(prev, width));
    detail::glorot_fill(p.encoder.back(), rng);
    prev = width;
  }
  p.classifier = detail::make_affine(prev, shape.classifier_out());
  detail::glorot_fill(p.classifier, rng);
  p.proj_in = detail::make_affine(prev, shape.proj_hidden);
  detail::glorot_fill(p.proj_in, rng);
  p.proj_out = detail::make_affine(shape.proj_hidden, shape.proj_dim);
  detail::glorot_fill(p.proj_out, rng);
  return p;
}

/// Zero-valued parameter set with the same shapes (gradient accumulator).
inline ModelParams zeros_like(const ModelParams& p) {
  ModelParams z;
  z.shape = p.shape;
  for (const auto& layer : p.encoder) z.encoder.push_back(detail::make_affine(layer.in, layer.out));
  z.classifier = detail::make_affine(p.classifier.in, p.classifier.out);
  z.proj_in = detail::make_affine(p.proj_in.in, p.proj_in.out);
  z.proj_out = detail::make_affine(p.proj_out.in, p.proj_out.out);
  return z;
}

/// Mutable views over every parameter vector in a canonical order. The same
/// order backs Adam moments, serialization, and finite-difference sweeps.
inline std::vector<std::span<double>> param_blocks(ModelParams& p) {
  std::vector<std::span<double>> blocks;
  for (auto& layer : p.encoder) {
    blocks.emplace_back(layer.w);
    blocks.emplace_back(layer.b);
  }
  blocks.emplace_back(p.classifier.w);
  blocks.emplace_back(p.classifier.b);
  blocks.emplace_back(p.proj_in.w);
  blocks.emplace_back(p.proj_in.b);
  blocks.emplace_back(p.proj_out.w);
  blocks.emplace_back(p.proj_out.b);
  return blocks;
}

inline std::vector<std::span<const double>> param_blocks(const ModelParams& p) {
  std::vector<std::span<const double>> blocks;
  for (const auto& layer : p.encoder) {
    blocks.emplace_back(layer.w);
    blocks.emplace_back(layer.b);
  }
  blocks.emplace_back(p.classifier.w);
  blocks.emplace_back(p.classifier.b);
  blocks.emplace_back(p.proj_in.w);
  blocks.emplace_back(p.proj_in.b);
  blocks.emplace_back(p.proj_out.w);
  blocks.emplace_back(p.proj_out.b);
  return blocks;
}

inline std::size_t param_count(const ModelParams& p) {
  std::size_t n = 0;
  for (auto& block : param_blocks(p)) n += block.size();
  return n;
}

// ---------------------------------------------------------------------------
// Forward pass

struct ForwardTrace {
  std::vector<std::vector<double>> enc_act;  // post-ReLU activations, one per encoder layer
  std::vector<double> classifier_out;        // raw head output
  double rate = 0.0;                         // lambda, Poisson head only
  std::vector<double> pred;                  // normalized distribution (Poisson/softmax heads)
  std::vector<double> proj_hidden_act;       // projector hidden, post-ReLU
  std::vector<double> proj_raw;              // projector output before normalization
  double proj_norm = 0.0;
  std::vector<double> proj_unit;             // unit-normalized projection
  bool has_projection = false;
  int predicted_label = 0;
};

inline ForwardTrace forward_trace(const ModelParams& p, std::span<const double> x,
                                  bool want_projection) {
  detail::require(static_cast<int>(x.size()) == p.shape.input_dim,
                  "forward: input dimension mismatch");
  ForwardTrace t;
  t.enc_act.reserve(p.encoder.size());
  std::span<const double> cur = x;
  for (const auto& layer : p.encoder) {
    std::vector<double> next;
    detail::affine_forward(layer, cur, next);
    for (double& v : next) v = std::max(v, 0.0);
    t.enc_act.push_back(std::move(next));
    cur = t.enc_act.back();
  }
  const std::span<const double> feature = cur;

  detail::affine_forward(p.classifier, feature, t.classifier_out);
  switch (p.shape.head) {
    case HeadKind::kPoisson: {
      t.rate = softplus(t.classifier_out[0]).value();
      t.pred = stable_softmax(poisson_log_scores(PoissonRate(t.rate), p.shape.num_classes).scores);
      break;
    }
    case HeadKind::kSoftmax:
      t.pred = stable_softmax(t.classifier_out);
      break;
    case HeadKind::kOrdinal:
      break;  // raw threshold logits; no distribution
  }
  if (p.shape.head == HeadKind::kOrdinal) {
    int count = 0;
    for (double c : t.classifier_out) {
      if (c > 0.0) ++count;  // sigmoid(c) > 0.5
    }
    t.predicted_label = count;
  } else {
    t.predicted_label = static_cast<int>(
        std::max_element(t.pred.begin(), t.pred.end()) - t.pred.begin());
  }

  if (want_projection) {
    detail::affine_forward(p.proj_in, feature, t.proj_hidden_act);
    for (double& v : t.proj_hidden_act) v = std::max(v, 0.0);
    detail::affine_forward(p.proj_out, t.proj_hidden_act, t.proj_raw);
    double sq = 0.0;
    for (double v : t.proj_raw) sq += v * v;
    t.proj_norm = std::sqrt(sq);
    detail::require(t.proj_norm > 0.0, "forward: zero-norm projector output");
    t.proj_unit = t.proj_raw;
    for (double& v : t.proj_unit) v /= t.proj_norm;
    t.has_projection = true;
  }
  return t;
}

struct ForwardResult {
  std::optional<PoissonRate> rate;
  std::optional<ProbVector> pred;
  std::vector<double> ordinal_scores;  // raw threshold logits (ordinal head)
  std::optional<Projection> projection;
  int predicted_label = 0;
};

inline ForwardResult forward(const ModelParams& p, std::span<const double> x,
                             bool want_projection = true) {
  ForwardTrace t = forward_trace(p, x, want_projection);
  ForwardResult r;
  if (p.shape.head == HeadKind::kPoisson) r.rate = PoissonRate(t.rate);
  if (p.shape.head == HeadKind::kOrdinal) {
    r.ordinal_scores = t.classifier_out;
  } else {
    r.pred = ProbVector(t.pred);
  }
  if (t.has_projection) r.projection = Projection::from_unit(t.proj_unit);
  r.predicted_label = t.predicted_label;
  return r;
}

// ---------------------------------------------------------------------------
// Training configuration

struct TrainConfig {
  Method method = Method::kPon;
  Toggles toggles{};  // honored when method == kPon
  int epochs = 60;
  int batch_size = 32;
  double temperature = 0.1;  // Poisson encoding t
  double gamma = 2.0;        // focal focusing parameter
  int q_neighbors = 20;      // contrast range q
  double learning_rate = 1e-4;
  double softlabel_sigma = 1.0;
  bool focal_abs_weight = false;  // |P[y]-P^[y]|^gamma instead of the clamp
  bool mcl_log_variant = false;   // -log mass instead of -mass
  std::uint64_t seed = 1;

  void validate() const {
    detail::require(epochs >= 0, "TrainConfig: epochs must be >= 0");
    detail::require(batch_size >= 1, "TrainConfig: batch_size must be positive");
    detail::require(temperature > 0.0, "TrainConfig: temperature must be positive");
    detail::require(gamma >= 0.0, "TrainConfig: gamma must be >= 0");
    detail::require(q_neighbors >= 1, "TrainConfig: q must be >= 1");
    detail::require(learning_rate > 0.0, "TrainConfig: learning_rate must be positive");
    detail::require(softlabel_sigma > 0.0, "TrainConfig: softlabel_sigma must be positive");
  }
};

/// Resolved composition of head, target encoding, objective, and branches.
struct LossScheme {
  HeadKind head = HeadKind::kPoisson;
  TargetKind target = TargetKind::kPoissonEncoding;
  LossKind loss = LossKind::kWeightedKl;
  double gamma = 2.0;
  double temperature = 0.1;
  double sigma = 1.0;
  bool mcl = true;
  bool focal_abs = false;
  bool mcl_log = false;
  int q_neighbors = 20;
};

inline LossScheme resolve_scheme(const TrainConfig& c) {
  LossScheme s;
  s.temperature = c.temperature;
  s.sigma = c.softlabel_sigma;
  s.focal_abs = c.focal_abs_weight;
  s.mcl_log = c.mcl_log_variant;
  s.q_neighbors = c.q_neighbors;
  switch (c.method) {
    case Method::kPon:
      s.head = c.toggles.poisson_head ? HeadKind::kPoisson : HeadKind::kSoftmax;
      s.target = c.toggles.poisson_encoding ? TargetKind::kPoissonEncoding : TargetKind::kOneHot;
      s.loss = LossKind::kWeightedKl;
      s.gamma = c.toggles.pfl ? c.gamma : 0.0;
      s.mcl = c.toggles.mcl;
      break;
    case Method::kCe:
      s.head = HeadKind::kSoftmax;
      s.target = TargetKind::kOneHot;
      s.loss = LossKind::kWeightedKl;
      s.gamma = 0.0;
      s.mcl = false;
      break;
    case Method::kFocal:
      s.head = HeadKind::kSoftmax;
      s.target = TargetKind::kOneHot;
      s.loss = LossKind::kWeightedKl;
      s.gamma = c.gamma;
      s.mcl = false;
      break;
    case Method::kEmd:
      s.head = HeadKind::kSoftmax;
      s.target = TargetKind::kOneHot;
      s.loss = LossKind::kEmd;
      s.gamma = 0.0;
      s.mcl = false;
      break;
    case Method::kOrdinal:
      s.head = HeadKind::kOrdinal;
      s.target = TargetKind::kOrdinalCode;
      s.loss = LossKind::kBce;
      s.gamma = 0.0;
      s.mcl = false;
      break;
    case Method::kSoftlabel:
      s.head = HeadKind::kSoftmax;
      s.target = TargetKind::kGaussian;
      s.loss = LossKind::kWeightedKl;
      s.gamma = 0.0;
      s.mcl = false;
      break;
  }
  return s;
}

/// Does the resolved method emit a probability distribution per sample?
inline bool probabilistic_output(const LossScheme& s) { return s.head != HeadKind::kOrdinal; }

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& msg, int batch_index)
      : std::runtime_error(msg), batch_index_(batch_index) {}
  int batch_index() const { return batch_index_; }

 private:
  int batch_index_ = -1;
};

// ---------------------------------------------------------------------------
// Backward pass

struct BatchResult {
  double total = 0.0;      // mean over the batch of (main + mcl)
  double main_sum = 0.0;   // per-sample main-loss values, summed
  double mcl_sum = 0.0;
  std::vector<double> per_sample_main;
  std::vector<double> per_sample_mcl;
  int correct = 0;
  ModelParams grads;  // d total / d param
  std::vector<std::pair<std::int64_t, Projection>> fresh_projections;
};

namespace detail {

inline ProbVector encode_target(const LossScheme& s, const ClassLabel& y, int num_classes) {
  switch (s.target) {
    case TargetKind::kPoissonEncoding: return poisson_encode(y, num_classes, s.temperature);
    case TargetKind::kOneHot: return one_hot_encode(y, num_classes);
    case TargetKind::kGaussian: return soft_label_encode(y, num_classes, s.sigma);
    case TargetKind::kOrdinalCode: break;
  }
  throw std::logic_error("encode_target: ordinal code is not a distribution");
}

/// dL/dlogits for a softmax output given dL/dpred.
inline std::vector<double> softmax_backward(const std::vector<double>& pred,
                                            const std::vector<double>& dpred) {
  double inner = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) inner += pred[k] * dpred[k];
  std::vector<double> dlogits(pred.size());
  for (std::size_t k = 0; k < pred.size(); ++k) dlogits[k] = pred[k] * (dpred[k] - inner);
  return dlogits;
}

}  // namespace detail

/// Forward + reverse over one batch against a frozen bank. Returns exact
/// gradients of the batch-mean objective; bank insertion is left to the
/// caller so a sample can never be its own fresh neighbor.
inline BatchResult backward(const ModelParams& params, const Dataset& ds,
                            const std::vector<int>& positions, const MemoryBank& bank,
                            const LossScheme& scheme) {
  detail::require(!positions.empty(), "backward: empty batch");
  const int num_classes = params.shape.num_classes;
  BatchResult result;
  result.grads = zeros_like(params);
  const double inv_batch = 1.0 / static_cast<double>(positions.size());

  for (std::size_t bi = 0; bi < positions.size(); ++bi) {
    const int pos = positions[bi];
    detail::require(pos >= 0 && pos < ds.size(), "backward: batch position out of range");
    const ClassLabel label(ds.labels[static_cast<std::size_t>(pos)]);
    detail::require_label(label, num_classes, "backward");
    const std::span<const double> x = ds.row(pos);

    ForwardTrace t = forward_trace(params, x, scheme.mcl);
    if (t.predicted_label == label.index()) ++result.correct;

    // Main objective and dL/d(classifier raw output).
    double main_value = 0.0;
    std::vector<double> dclassifier(t.classifier_out.size(), 0.0);
    if (scheme.head == HeadKind::kPoisson) {
      const ProbVector target = detail::encode_target(scheme, label, num_classes);
      const PoissonRate rate(t.rate);
      const LossValue lv = poisson_focal_loss_grad(target, rate, label, scheme.gamma,
                                                   scheme.focal_abs);
      main_value = lv.value;
      dclassifier[0] = *lv.grad_wrt_rate * softplus_grad(t.classifier_out[0]);
    } else if (scheme.head == HeadKind::kSoftmax) {
      const ProbVector target = detail::encode_target(scheme, label, num_classes);
      const ProbVector pred(t.pred);
      std::vector<double> dpred;
      if (scheme.loss == LossKind::kEmd) {
        main_value = squared_emd(target, pred).value;
        dpred = squared_emd_grad_wrt_pred(target, pred);
      } else {
        main_value = poisson_focal_loss(target, pred, label, scheme.gamma, scheme.focal_abs).value;
        dpred = weighted_kl_grad_wrt_pred(target, pred, label, scheme.gamma, scheme.focal_abs);
      }
      dclassifier = detail::softmax_backward(t.pred, dpred);
    } else {
      // Ordinal head: independent sigmoid units against the cumulative code.
      const std::vector<double> code = ordinal_cumulative_encode(label, num_classes);
      for (std::size_t j = 0; j < t.classifier_out.size(); ++j) {
        const double c = t.classifier_out[j];
        const double bit = code[j];
        main_value += std::max(c, 0.0) - c * bit + std::log1p(std::exp(-std::abs(c)));
        const double sig = 1.0 / (1.0 + std::exp(-c));
        dclassifier[j] = sig - bit;
      }
    }

    // Contrastive branch against the frozen bank.
    double mcl_value = 0.0;
    std::vector<double> dfeature(static_cast<std::size_t>(params.shape.feature_dim()), 0.0);
    if (scheme.mcl) {
      const std::int64_t id = ds.ids[static_cast<std::size_t>(pos)];
      const Projection proj = Projection::from_unit(t.proj_unit);
      const auto neighbors = bank.query_nearest(proj, scheme.q_neighbors, id);
      const MclResult mcl = mcl_loss(t.proj_unit, label, neighbors, scheme.mcl_log);
      mcl_value = mcl.value;
      result.fresh_projections.emplace_back(id, proj);

      if (!neighbors.empty()) {
        // Through the L2 normalization: du = (I - p p^T) dp / ||u||.
        double radial = 0.0;
        for (std::size_t j = 0; j < t.proj_unit.size(); ++j) {
          radial += mcl.grad_wrt_query[j] * t.proj_unit[j];
        }
        std::vector<double> dproj_raw(t.proj_unit.size());
        for (std::size_t j = 0; j < t.proj_unit.size(); ++j) {
          dproj_raw[j] = (mcl.grad_wrt_query[j] - radial * t.proj_unit[j]) / t.proj_norm;
        }
        for (double& g : dproj_raw) g *= inv_batch;

        std::vector<double> dproj_hidden(t.proj_hidden_act.size(), 0.0);
        detail::affine_backward(params.proj_out, t.proj_hidden_act, dproj_raw,
                                result.grads.proj_out, &dproj_hidden);
        for (std::size_t j = 0; j < dproj_hidden.size(); ++j) {
          if (t.proj_hidden_act[j] <= 0.0) dproj_hidden[j] = 0.0;
        }
        const std::span<const double> feature =
            t.enc_act.empty() ? x : std::span<const double>(t.enc_act.back());
        detail::affine_backward(params.proj_in, feature, dproj_hidden, result.grads.proj_in,
                                &dfeature);
      }
    }

    if (!std::isfinite(main_value) || !std::isfinite(mcl_value)) {
      throw DivergenceError("backward: non-finite loss at batch index " + std::to_string(bi) +
                                " (main=" + std::to_string(main_value) +
                                ", mcl=" + std::to_string(mcl_value) + ")",
                            static_cast<int>(bi));
    }
    result.per_sample_main.push_back(main_value);
    result.per_sample_mcl.push_back(mcl_value);
    result.main_sum += main_value;
    result.mcl_sum += mcl_value;

    // Classifier and encoder backward (batch-mean scaling applied here).
    for (double& g : dclassifier) g *= inv_batch;
    {
      const std::span<const double> feature =
          t.enc_act.empty() ? x : std::span<const double>(t.enc_act.back());
      detail::affine_backward(params.classifier, feature, dclassifier, result.grads.classifier,
                              &dfeature);
    }
    std::vector<double> dcur = std::move(dfeature);
    for (int li = static_cast<int>(params.encoder.size()) - 1; li >= 0; --li) {
      const auto& act = t.enc_act[static_cast<std::size_t>(li)];
      for (std::size_t j = 0; j < dcur.size(); ++j) {
        if (act[j] <= 0.0) dcur[j] = 0.0;  // ReLU mask
      }
      const std::span<const double> below =
          li == 0 ? x : std::span<const double>(t.enc_act[static_cast<std::size_t>(li - 1)]);
      std::vector<double> dbelow(below.size(), 0.0);
      detail::affine_backward(params.encoder[static_cast<std::size_t>(li)], below, dcur,
                              result.grads.encoder[static_cast<std::size_t>(li)], &dbelow);
      dcur = std::move(dbelow);
    }
  }

  result.total = (result.main_sum + result.mcl_sum) * inv_batch;
  return result;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step = 0;
  std::vector<double> m;  // first moments, canonical block order
  std::vector<double> v;  // second moments
};

inline AdamState init_adam(const ModelParams& params, double learning_rate) {
  AdamState s;
  s.learning_rate = learning_rate;
  s.m.assign(param_count(params), 0.0);
  s.v.assign(param_count(params), 0.0);
  return s;
}

/// Standard bias-corrected Adam update.
inline void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state) {
  auto pblocks = param_blocks(params);
  auto gblocks = param_blocks(const_cast<ModelParams&>(grads));
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  std::size_t idx = 0;
  for (std::size_t blk = 0; blk < pblocks.size(); ++blk) {
    auto p = pblocks[blk];
    auto g = gblocks[blk];
    for (std::size_t i = 0; i < p.size(); ++i, ++idx) {
      double& m = state.m[idx];
      double& v = state.v[idx];
      m = state.beta1 * m + (1.0 - state.beta1) * g[i];
      v = state.beta2 * v + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m / bc1;
      const double v_hat = v / bc2;
      p[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
  detail::require(idx == state.m.size(), "adam_step: moment/parameter shape mismatch");
}

// ---------------------------------------------------------------------------
// Weighted sampler

/// Class-balancing sampler: each draw picks a class uniformly, then a uniform
/// member of that class. Reproducible from the generator it is handed.
class WeightedSampler {
 public:
  WeightedSampler(const std::vector<int>& labels, int num_classes) {
    detail::require(num_classes >= 2, "WeightedSampler: K must be >= 2");
    by_class_.resize(static_cast<std::size_t>(num_classes));
    for (std::size_t i = 0; i < labels.size(); ++i) {
      detail::require(labels[i] >= 0 && labels[i] < num_classes,
                      "WeightedSampler: label out of range");
      by_class_[static_cast<std::size_t>(labels[i])].push_back(static_cast<int>(i));
    }
    for (int c = 0; c < num_classes; ++c) {
      if (by_class_[static_cast<std::size_t>(c)].empty()) {
        throw std::invalid_argument("WeightedSampler: class " + std::to_string(c) +
                                    " has no members");
      }
    }
  }

  int draw(Rng& rng) const {
    const auto& members =
        by_class_[static_cast<std::size_t>(uniform_below(rng, by_class_.size()))];
    return members[static_cast<std::size_t>(uniform_below(rng, members.size()))];
  }

 private:
  std::vector<std::vector<int>> by_class_;
};

// ---------------------------------------------------------------------------
// Training loop

struct ValSummary {
  double acc = 0.0;
  std::optional<double> macro_auc;
  double qwk = 0.0;
  double macro_f1 = 0.0;
};

struct EpochRecord {
  int epoch = 0;          // 1-based
  double loss_pfl = 0.0;  // main objective mean over the epoch's draws
  double loss_mcl = 0.0;
  double train_acc = 0.0;
  std::optional<ValSummary> val;
};

/// Everything the checkpoint persists.
struct TrainState {
  TrainConfig config;
  ModelParams params;
  AdamState adam;
  MemoryBank bank;
  Rng rng;
  int epochs_done = 0;
};

inline ValSummary evaluate_summary(const ModelParams& params, const Dataset& ds,
                                   const LossScheme& scheme) {
  std::vector<int> preds;
  std::vector<ProbVector> probs;
  preds.reserve(static_cast<std::size_t>(ds.size()));
  for (int i = 0; i < ds.size(); ++i) {
    ForwardTrace t = forward_trace(params, ds.row(i), false);
    preds.push_back(t.predicted_label);
    if (probabilistic_output(scheme)) probs.emplace_back(t.pred);
  }
  ValSummary s;
  const ConfusionMatrix cm = confusion_matrix(ds.labels, preds, params.shape.num_classes);
  s.acc = accuracy(cm);
  s.qwk = qwk(ds.labels, preds, params.shape.num_classes);
  s.macro_f1 = macro_f1(cm);
  if (probabilistic_output(scheme)) s.macro_auc = macro_auc(ds.labels, probs);
  return s;
}

inline TrainState init_train_state(const Dataset& train_ds, const TrainConfig& config,
                                   const ModelConfig& model) {
  config.validate();
  detail::require(train_ds.size() >= 1, "init_train_state: empty dataset");
  ModelShape shape;
  shape.input_dim = train_ds.feature_dim;
  shape.encoder_widths = model.encoder_widths;
  shape.proj_hidden = model.proj_hidden;
  shape.proj_dim = model.proj_dim;
  shape.num_classes = model.num_classes > 0 ? model.num_classes : train_ds.num_classes;
  shape.head = resolve_scheme(config).head;
  shape.validate();
  Rng rng(config.seed);
  ModelParams params = init_params(shape, rng);
  AdamState adam = init_adam(params, config.learning_rate);
  MemoryBank bank(train_ds.size(), shape.proj_dim);
  return TrainState{config, std::move(params), std::move(adam), std::move(bank), rng, 0};
}

/// Run epochs [epochs_done+1 .. target_epochs]. The callback fires after each
/// epoch with the epoch record (history is streamed, so a later divergence
/// still leaves everything up to the last completed epoch on disk).
inline std::vector<EpochRecord> run_epochs(
    TrainState& state, const Dataset& train_ds, const Dataset* val_ds, int target_epochs,
    const std::function<void(const EpochRecord&)>& on_epoch = nullptr) {
  const LossScheme scheme = resolve_scheme(state.config);
  const int n = train_ds.size();
  const int batch = std::min(state.config.batch_size, n);
  WeightedSampler sampler(train_ds.labels, state.params.shape.num_classes);
  std::vector<EpochRecord> history;

  for (int epoch = state.epochs_done + 1; epoch <= target_epochs; ++epoch) {
    double main_sum = 0.0;
    double mcl_sum = 0.0;
    int correct = 0;
    int drawn = 0;
    while (drawn < n) {
      const int this_batch = std::min(batch, n - drawn);
      std::vector<int> positions;
      positions.reserve(static_cast<std::size_t>(this_batch));
      for (int i = 0; i < this_batch; ++i) positions.push_back(sampler.draw(state.rng));
      drawn += this_batch;

      BatchResult r = backward(state.params, train_ds, positions, state.bank, scheme);
      adam_step(state.params, r.grads, state.adam);
      for (auto& block : param_blocks(state.params)) {
        for (double v : block) {
          if (!std::isfinite(v)) {
            throw DivergenceError("run_epochs: non-finite parameter after Adam step " +
                                      std::to_string(state.adam.step),
                                  -1);
          }
        }
      }
      if (scheme.mcl) {
        for (std::size_t i = 0; i < r.fresh_projections.size(); ++i) {
          const auto& [id, proj] = r.fresh_projections[i];
          state.bank.update(id, proj,
                            ClassLabel(train_ds.labels[static_cast<std::size_t>(positions[i])]));
        }
      }
      main_sum += r.main_sum;
      mcl_sum += r.mcl_sum;
      correct += r.correct;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss_pfl = main_sum / n;
    rec.loss_mcl = mcl_sum / n;
    rec.train_acc = static_cast<double>(correct) / n;
    if (val_ds != nullptr) rec.val = evaluate_summary(state.params, *val_ds, scheme);
    state.epochs_done = epoch;
    if (on_epoch) on_epoch(rec);
    history.push_back(std::move(rec));
  }
  return history;
}

struct TrainResult {
  TrainState state;
  std::vector<EpochRecord> history;
};

/// End-to-end training from scratch.
inline TrainResult train(const Dataset& train_ds, const Dataset* val_ds,
                         const TrainConfig& config, const ModelConfig& model = {},
                         const std::function<void(const EpochRecord&)>& on_epoch = nullptr) {
  TrainState state = init_train_state(train_ds, config, model);
  std::vector<EpochRecord> history =
      run_epochs(state, train_ds, val_ds, config.epochs, on_epoch);
  return TrainResult{std::move(state), std::move(history)};
}

}  // namespace pon
