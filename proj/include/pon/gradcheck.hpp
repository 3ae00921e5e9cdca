#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "pon/contrastive.hpp"
#include "pon/core_math.hpp"
#include "pon/data.hpp"
#include "pon/losses.hpp"
#include "pon/nn.hpp"
#include "pon/random.hpp"

// Central finite-difference verification of every analytic gradient path:
// rate gradients under the Poisson head, softmax-head chains for the KL and
// EMD objectives, the contrastive gradient, and end-to-end parameter
// gradients for each method. A deliberate sign-flip fault can be injected to
// prove the checker detects broken gradients.

namespace pon {

struct GradCheckCase {
  std::string name;
  int checked = 0;
  double max_rel_err = 0.0;
  std::string worst;  // component where the max occurred
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

struct GradCheckFaults {
  bool flip_rate_grad_sign = false;  // negate analytic d/d(rate) under the Poisson head
};

struct GradCheckReport {
  double tolerance = 1e-4;
  std::vector<GradCheckCase> cases;

  bool passed() const {
    for (const auto& c : cases) {
      if (!(c.max_rel_err < tolerance)) return false;
    }
    return true;
  }
  double max_rel_err() const {
    double m = 0.0;
    for (const auto& c : cases) m = std::max(m, c.max_rel_err);
    return m;
  }
};

namespace detail {

inline double fd_rel_err(double analytic, double numeric) {
  const double denom = std::max({1e-3, std::abs(analytic), std::abs(numeric)});
  return std::abs(analytic - numeric) / denom;
}

inline void record(GradCheckCase& c, double analytic, double numeric, const std::string& where) {
  const double err = fd_rel_err(analytic, numeric);
  ++c.checked;
  if (err > c.max_rel_err) {
    c.max_rel_err = err;
    c.worst = where;
    c.analytic_at_worst = analytic;
    c.numeric_at_worst = numeric;
  }
}

/// Central difference of a scalar function at x.
inline double central_diff(const std::function<double(double)>& f, double x, double h = 1e-6) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

}  // namespace detail

inline GradCheckCase gradcheck_softplus() {
  GradCheckCase c{.name = "softplus"};
  for (double z : {-35.0, -6.0, -2.0, 0.0, 0.7, 1.0, 5.0, 29.0, 35.0}) {
    const double numeric =
        detail::central_diff([](double x) { return softplus(x).value(); }, z);
    detail::record(c, softplus_grad(z), numeric, "z=" + std::to_string(z));
  }
  return c;
}

inline GradCheckCase gradcheck_rate_ce(const GradCheckFaults& faults) {
  GradCheckCase c{.name = "cross_entropy_rate"};
  const int num_classes = 5;
  for (double lam : {0.2, 0.8, 1.7, 3.1, 4.9}) {
    for (int y = 0; y < num_classes; ++y) {
      const ClassLabel label(y);
      const auto f = [&](double l) {
        const ProbVector pred = normalize_scores(poisson_log_scores(PoissonRate(l), num_classes));
        return cross_entropy(label, pred).value;
      };
      double analytic = *cross_entropy_grad(label, PoissonRate(lam), num_classes).grad_wrt_rate;
      if (faults.flip_rate_grad_sign) analytic = -analytic;
      detail::record(c, analytic, detail::central_diff(f, lam),
                     "lambda=" + std::to_string(lam) + " y=" + std::to_string(y));
    }
  }
  return c;
}

inline GradCheckCase gradcheck_rate_focal(const GradCheckFaults& faults) {
  GradCheckCase c{.name = "focal_loss_rate"};
  const int num_classes = 5;
  for (double gamma : {0.0, 1.0, 2.0}) {
    for (double lam : {0.3, 1.4, 2.6, 4.2}) {
      for (int y : {0, 2, 4}) {
        const ClassLabel label(y);
        const auto f = [&](double l) {
          const ProbVector pred =
              normalize_scores(poisson_log_scores(PoissonRate(l), num_classes));
          return focal_loss(label, pred, gamma).value;
        };
        double analytic =
            *focal_loss_grad(label, PoissonRate(lam), num_classes, gamma).grad_wrt_rate;
        if (faults.flip_rate_grad_sign) analytic = -analytic;
        detail::record(c, analytic, detail::central_diff(f, lam),
                       "gamma=" + std::to_string(gamma) + " lambda=" + std::to_string(lam) +
                           " y=" + std::to_string(y));
      }
    }
  }
  return c;
}

inline GradCheckCase gradcheck_rate_pfl(const GradCheckFaults& faults) {
  GradCheckCase c{.name = "poisson_focal_loss"};
  const int num_classes = 5;
  const double t = 0.1;
  for (bool abs_variant : {false, true}) {
    for (double gamma : {0.0, 2.0}) {
      for (double lam : {0.4, 1.2, 2.8, 4.4}) {
        for (int y : {0, 1, 3}) {
          const ClassLabel label(y);
          const ProbVector target = poisson_encode(label, num_classes, t);
          const auto f = [&](double l) {
            const ProbVector pred(stable_softmax(
                poisson_log_scores(PoissonRate(l), num_classes).scores));
            return poisson_focal_loss(target, pred, label, gamma, abs_variant).value;
          };
          double analytic = *poisson_focal_loss_grad(target, PoissonRate(lam), label, gamma,
                                                     abs_variant)
                                 .grad_wrt_rate;
          if (faults.flip_rate_grad_sign) analytic = -analytic;
          detail::record(c, analytic, detail::central_diff(f, lam),
                         "abs=" + std::to_string(abs_variant) + " gamma=" +
                             std::to_string(gamma) + " lambda=" + std::to_string(lam) +
                             " y=" + std::to_string(y));
        }
      }
    }
  }
  return c;
}

namespace detail {

inline std::vector<double> random_logits(Rng& rng, int n, double scale) {
  std::vector<double> z(static_cast<std::size_t>(n));
  for (double& v : z) v = scale * normal(rng);
  return z;
}

}  // namespace detail

inline GradCheckCase gradcheck_softmax_kl(Rng& rng) {
  GradCheckCase c{.name = "weighted_kl_logits"};
  const int num_classes = 5;
  for (bool abs_variant : {false, true}) {
    for (double gamma : {0.0, 2.0}) {
      for (int trial = 0; trial < 4; ++trial) {
        const std::vector<double> logits = detail::random_logits(rng, num_classes, 1.5);
        const ClassLabel label(trial % num_classes);
        const ProbVector target = poisson_encode(label, num_classes, 0.1);
        const auto loss_at = [&](const std::vector<double>& z) {
          const ProbVector pred(stable_softmax(z));
          return poisson_focal_loss(target, pred, label, gamma, abs_variant).value;
        };
        const std::vector<double> pred = stable_softmax(logits);
        const std::vector<double> dpred =
            weighted_kl_grad_wrt_pred(target, ProbVector(pred), label, gamma, abs_variant);
        const std::vector<double> analytic = detail::softmax_backward(pred, dpred);
        for (int k = 0; k < num_classes; ++k) {
          std::vector<double> z = logits;
          const double numeric = detail::central_diff(
              [&](double v) {
                z[static_cast<std::size_t>(k)] = v;
                return loss_at(z);
              },
              logits[static_cast<std::size_t>(k)]);
          detail::record(c, analytic[static_cast<std::size_t>(k)], numeric,
                         "trial=" + std::to_string(trial) + " k=" + std::to_string(k) +
                             " gamma=" + std::to_string(gamma));
        }
      }
    }
  }
  return c;
}

inline GradCheckCase gradcheck_emd_logits(Rng& rng) {
  GradCheckCase c{.name = "squared_emd_logits"};
  const int num_classes = 5;
  for (int trial = 0; trial < 6; ++trial) {
    const std::vector<double> logits = detail::random_logits(rng, num_classes, 1.5);
    const ClassLabel label(trial % num_classes);
    const ProbVector target = one_hot_encode(label, num_classes);
    const auto loss_at = [&](const std::vector<double>& z) {
      return squared_emd(target, ProbVector(stable_softmax(z))).value;
    };
    const std::vector<double> pred = stable_softmax(logits);
    const std::vector<double> dpred = squared_emd_grad_wrt_pred(target, ProbVector(pred));
    const std::vector<double> analytic = detail::softmax_backward(pred, dpred);
    for (int k = 0; k < num_classes; ++k) {
      std::vector<double> z = logits;
      const double numeric = detail::central_diff(
          [&](double v) {
            z[static_cast<std::size_t>(k)] = v;
            return loss_at(z);
          },
          logits[static_cast<std::size_t>(k)]);
      detail::record(c, analytic[static_cast<std::size_t>(k)], numeric,
                     "trial=" + std::to_string(trial) + " k=" + std::to_string(k));
    }
  }
  return c;
}

inline GradCheckCase gradcheck_mcl_query(Rng& rng) {
  GradCheckCase c{.name = "mcl_loss"};
  const int dim = 6;
  for (bool log_variant : {false, true}) {
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<Neighbor> neighbors;
      std::vector<double> query(static_cast<std::size_t>(dim));
      for (double& v : query) v = normal(rng);
      for (int i = 0; i < 8; ++i) {
        std::vector<double> p(static_cast<std::size_t>(dim));
        for (double& v : p) v = normal(rng);
        const Projection proj(p);
        Neighbor nb;
        nb.id = i;
        nb.projection = proj.values();
        nb.label = i % 3;
        nb.similarity = dot(proj.values(), query);  // informational only
        neighbors.push_back(nb);
      }
      const ClassLabel label(trial % 3);
      const MclResult res = mcl_loss(query, label, neighbors, log_variant);
      for (int k = 0; k < dim; ++k) {
        std::vector<double> q = query;
        const double numeric = detail::central_diff(
            [&](double v) {
              q[static_cast<std::size_t>(k)] = v;
              return mcl_loss(q, label, neighbors, log_variant).value;
            },
            query[static_cast<std::size_t>(k)]);
        detail::record(c, res.grad_wrt_query[static_cast<std::size_t>(k)], numeric,
                       "log=" + std::to_string(log_variant) + " trial=" +
                           std::to_string(trial) + " k=" + std::to_string(k));
      }
    }
  }
  return c;
}

/// End-to-end check: analytic parameter gradients from one backward pass
/// against central differences of the batch objective, for one method.
inline GradCheckCase gradcheck_model(Method method, const Toggles& toggles, std::uint64_t seed) {
  SyntheticConfig data_cfg;
  data_cfg.num_samples = 60;
  data_cfg.num_classes = 5;
  data_cfg.feature_dim = 6;
  data_cfg.seed = seed;
  const Dataset ds = generate(data_cfg);

  TrainConfig config;
  config.method = method;
  config.toggles = toggles;
  config.seed = seed;
  // With q at least the bank size the neighbor set cannot change under the
  // finite-difference perturbations, keeping the objective smooth.
  config.q_neighbors = data_cfg.num_samples + 1;
  ModelConfig model;
  model.encoder_widths = {8};
  model.proj_hidden = 6;
  model.proj_dim = 4;
  TrainState state = init_train_state(ds, config, model);
  // At this width a ReLU hidden layer can die for every sample of some seeds,
  // which the forward pass rejects; a positive bias keeps the projector live.
  state.params.proj_in.b[0] = 1.0;
  const LossScheme scheme = resolve_scheme(state.config);

  // A couple of real updates move parameters off their symmetric init; the
  // bank picks up entries so the contrastive branch is exercised.
  run_epochs(state, ds, nullptr, 1);

  std::vector<int> positions{0, 7, 13, 21, 34, 42, 55, 58};
  const auto objective = [&](ModelParams& p) {
    return backward(p, ds, positions, state.bank, scheme).total;
  };
  const BatchResult base = backward(state.params, ds, positions, state.bank, scheme);

  std::string name = "model_" + method_to_string(method);
  if (method == Method::kPon) {
    name += toggles.poisson_head ? "" : "-soft";
    name += toggles.mcl ? "" : "-nomcl";
  }
  GradCheckCase c{.name = name};
  auto pblocks = param_blocks(state.params);
  auto gblocks = param_blocks(base.grads);
  const double h = 1e-6;
  for (std::size_t blk = 0; blk < pblocks.size(); ++blk) {
    for (std::size_t i = 0; i < pblocks[blk].size(); ++i) {
      double& theta = pblocks[blk][i];
      const double saved = theta;
      theta = saved + h;
      const double up = objective(state.params);
      theta = saved - h;
      const double down = objective(state.params);
      theta = saved;
      const double numeric = (up - down) / (2.0 * h);
      detail::record(c, gblocks[blk][i], numeric,
                     "block=" + std::to_string(blk) + " i=" + std::to_string(i));
    }
  }
  return c;
}

inline GradCheckReport run_gradcheck(std::uint64_t seed = 1, const GradCheckFaults& faults = {}) {
  GradCheckReport report;
  Rng rng(seed);
  report.cases.push_back(gradcheck_softplus());
  report.cases.push_back(gradcheck_rate_ce(faults));
  report.cases.push_back(gradcheck_rate_focal(faults));
  report.cases.push_back(gradcheck_rate_pfl(faults));
  report.cases.push_back(gradcheck_softmax_kl(rng));
  report.cases.push_back(gradcheck_emd_logits(rng));
  report.cases.push_back(gradcheck_mcl_query(rng));
  report.cases.push_back(gradcheck_model(Method::kPon, Toggles{}, seed));
  report.cases.push_back(
      gradcheck_model(Method::kPon, Toggles{true, true, true, false}, seed));
  report.cases.push_back(gradcheck_model(Method::kCe, Toggles{}, seed));
  report.cases.push_back(gradcheck_model(Method::kFocal, Toggles{}, seed));
  report.cases.push_back(gradcheck_model(Method::kEmd, Toggles{}, seed));
  report.cases.push_back(gradcheck_model(Method::kOrdinal, Toggles{}, seed));
  report.cases.push_back(gradcheck_model(Method::kSoftlabel, Toggles{}, seed));
  return report;
}

}  // namespace pon
