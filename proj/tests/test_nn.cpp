#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "pon/data.hpp"
#include "pon/nn.hpp"

using pon::Dataset;
using pon::HeadKind;
using pon::Method;
using pon::ModelConfig;
using pon::ModelParams;
using pon::ModelShape;
using pon::TrainConfig;

namespace {

Dataset tiny_dataset() {
  Dataset ds;
  ds.feature_dim = 2;
  ds.num_classes = 3;
  const std::vector<std::vector<double>> rows{
      {0.2, -0.4}, {1.1, 0.3}, {2.0, 1.4}, {-0.3, 0.5}, {1.4, -0.2}, {2.2, 0.9}};
  const std::vector<int> labels{0, 1, 2, 0, 1, 2};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    ds.ids.push_back(static_cast<std::int64_t>(i));
    ds.labels.push_back(labels[i]);
    ds.features.insert(ds.features.end(), rows[i].begin(), rows[i].end());
  }
  return ds;
}

double batch_total(const ModelParams& params, const Dataset& ds,
                   const std::vector<int>& positions, const pon::MemoryBank& bank,
                   const pon::LossScheme& scheme) {
  return pon::backward(params, ds, positions, bank, scheme).total;
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1e-3, std::abs(a), std::abs(b)});
}

/// Plain softmax cross-entropy MLP written from scratch, used as an
/// independent gradient oracle for the trainer's CE configuration.
struct PlainCeOracle {
  static std::vector<double> forward_layer(const pon::Affine& a, const std::vector<double>& x) {
    std::vector<double> out(static_cast<std::size_t>(a.out));
    for (int o = 0; o < a.out; ++o) {
      double s = a.b[static_cast<std::size_t>(o)];
      for (int i = 0; i < a.in; ++i) {
        s += a.w[static_cast<std::size_t>(o) * static_cast<std::size_t>(a.in) +
                 static_cast<std::size_t>(i)] *
             x[static_cast<std::size_t>(i)];
      }
      out[static_cast<std::size_t>(o)] = s;
    }
    return out;
  }

  /// Mean cross entropy over the batch; gradients accumulated into `grads`
  /// (encoder and classifier only; the model's projector plays no part).
  static double run(const ModelParams& params, const Dataset& ds,
                    const std::vector<int>& positions, ModelParams& grads) {
    const double scale = 1.0 / static_cast<double>(positions.size());
    double loss = 0.0;
    for (int pos : positions) {
      const auto row = ds.row(pos);
      std::vector<std::vector<double>> pre, act;
      std::vector<double> cur(row.begin(), row.end());
      for (const auto& layer : params.encoder) {
        pre.push_back(forward_layer(layer, cur));
        act.push_back(pre.back());
        for (double& v : act.back()) v = std::max(v, 0.0);
        cur = act.back();
      }
      const std::vector<double> logits = forward_layer(params.classifier, cur);
      const double zmax = *std::max_element(logits.begin(), logits.end());
      double zsum = 0.0;
      for (double z : logits) zsum += std::exp(z - zmax);
      std::vector<double> p(logits.size());
      for (std::size_t k = 0; k < logits.size(); ++k) p[k] = std::exp(logits[k] - zmax) / zsum;
      const int y = ds.labels[static_cast<std::size_t>(pos)];
      loss += -std::log(p[static_cast<std::size_t>(y)]) * scale;

      std::vector<double> dlogits = p;
      dlogits[static_cast<std::size_t>(y)] -= 1.0;
      for (double& g : dlogits) g *= scale;

      const std::vector<double>& feat = params.encoder.empty() ? cur : act.back();
      std::vector<double> dfeat(feat.size(), 0.0);
      for (int o = 0; o < params.classifier.out; ++o) {
        const double g = dlogits[static_cast<std::size_t>(o)];
        grads.classifier.b[static_cast<std::size_t>(o)] += g;
        for (int i = 0; i < params.classifier.in; ++i) {
          const std::size_t wi = static_cast<std::size_t>(o) *
                                     static_cast<std::size_t>(params.classifier.in) +
                                 static_cast<std::size_t>(i);
          grads.classifier.w[wi] += g * feat[static_cast<std::size_t>(i)];
          dfeat[static_cast<std::size_t>(i)] += g * params.classifier.w[wi];
        }
      }

      std::vector<double> dcur = dfeat;
      for (int l = static_cast<int>(params.encoder.size()) - 1; l >= 0; --l) {
        const auto& layer = params.encoder[static_cast<std::size_t>(l)];
        auto& glayer = grads.encoder[static_cast<std::size_t>(l)];
        std::vector<double> dz = dcur;
        for (std::size_t o = 0; o < dz.size(); ++o) {
          if (pre[static_cast<std::size_t>(l)][o] <= 0.0) dz[o] = 0.0;
        }
        const std::vector<double> below_vec(row.begin(), row.end());
        const std::vector<double>& below =
            l == 0 ? below_vec : act[static_cast<std::size_t>(l - 1)];
        std::vector<double> dbelow(below.size(), 0.0);
        for (int o = 0; o < layer.out; ++o) {
          const double g = dz[static_cast<std::size_t>(o)];
          glayer.b[static_cast<std::size_t>(o)] += g;
          for (int i = 0; i < layer.in; ++i) {
            const std::size_t wi = static_cast<std::size_t>(o) *
                                       static_cast<std::size_t>(layer.in) +
                                   static_cast<std::size_t>(i);
            glayer.w[wi] += g * below[static_cast<std::size_t>(i)];
            dbelow[static_cast<std::size_t>(i)] += g * layer.w[wi];
          }
        }
        dcur = dbelow;
      }
    }
    return loss;
  }
};

}  // namespace

TEST_CASE("method configurations resolve to the expected compositions") {
  TrainConfig c;
  c.method = Method::kPon;
  auto s = pon::resolve_scheme(c);
  CHECK(s.head == HeadKind::kPoisson);
  CHECK(s.target == pon::TargetKind::kPoissonEncoding);
  CHECK(s.loss == pon::LossKind::kWeightedKl);
  CHECK(s.gamma == c.gamma);
  CHECK(s.mcl);

  c.toggles.pfl = false;
  CHECK(pon::resolve_scheme(c).gamma == 0.0);
  c.toggles.poisson_head = false;
  CHECK(pon::resolve_scheme(c).head == HeadKind::kSoftmax);
  c.toggles.poisson_encoding = false;
  CHECK(pon::resolve_scheme(c).target == pon::TargetKind::kOneHot);
  c.toggles.mcl = false;
  CHECK_FALSE(pon::resolve_scheme(c).mcl);

  c = TrainConfig{};
  c.method = Method::kCe;
  s = pon::resolve_scheme(c);
  CHECK(s.head == HeadKind::kSoftmax);
  CHECK(s.target == pon::TargetKind::kOneHot);
  CHECK(s.gamma == 0.0);
  CHECK_FALSE(s.mcl);

  c.method = Method::kFocal;
  s = pon::resolve_scheme(c);
  CHECK(s.gamma == 2.0);
  CHECK(s.head == HeadKind::kSoftmax);

  c.method = Method::kEmd;
  CHECK(pon::resolve_scheme(c).loss == pon::LossKind::kEmd);

  c.method = Method::kOrdinal;
  s = pon::resolve_scheme(c);
  CHECK(s.head == HeadKind::kOrdinal);
  CHECK(s.loss == pon::LossKind::kBce);
  CHECK_FALSE(pon::probabilistic_output(s));

  c.method = Method::kSoftlabel;
  s = pon::resolve_scheme(c);
  CHECK(s.target == pon::TargetKind::kGaussian);
  CHECK(pon::probabilistic_output(s));
}

TEST_CASE("method names round-trip and reject unknowns") {
  for (auto m : {Method::kPon, Method::kCe, Method::kFocal, Method::kEmd, Method::kOrdinal,
                 Method::kSoftlabel}) {
    CHECK(pon::method_from_string(pon::method_to_string(m)) == m);
  }
  CHECK_THROWS_WITH(pon::method_from_string("pom"),
                    Catch::Matchers::ContainsSubstring("unknown method 'pom'"));
}

TEST_CASE("head choice dictates the classifier output width") {
  const auto ds = tiny_dataset();
  TrainConfig c;
  ModelConfig model;
  model.encoder_widths = {4};
  model.proj_hidden = 3;
  model.proj_dim = 2;

  c.method = Method::kPon;
  CHECK(pon::init_train_state(ds, c, model).params.classifier.out == 1);
  c.toggles.poisson_head = false;
  CHECK(pon::init_train_state(ds, c, model).params.classifier.out == 3);
  c = TrainConfig{};
  c.method = Method::kCe;
  CHECK(pon::init_train_state(ds, c, model).params.classifier.out == 3);
  c.method = Method::kOrdinal;
  CHECK(pon::init_train_state(ds, c, model).params.classifier.out == 2);
}

TEST_CASE("all-zero weights emit the resting rate log(2)") {
  ModelShape shape;
  shape.input_dim = 2;
  shape.encoder_widths = {4};
  shape.num_classes = 3;
  shape.proj_hidden = 3;
  shape.proj_dim = 2;
  pon::Rng rng(1);
  ModelParams params = pon::zeros_like(pon::init_params(shape, rng));
  const std::vector<double> x{0.5, -0.25};
  const auto out = pon::forward(params, x, false);
  REQUIRE(out.rate.has_value());
  CHECK(out.rate->value() == Catch::Approx(std::log(2.0)).epsilon(0).margin(1e-15));
  REQUIRE(out.pred.has_value());
  CHECK(pon::is_unimodal(*out.pred));
  CHECK(out.predicted_label == 0);
}

TEST_CASE("initialization stays inside the glorot bounds with zero biases") {
  ModelShape shape;
  shape.input_dim = 16;
  shape.encoder_widths = {64, 32};
  shape.num_classes = 5;
  pon::Rng rng(7);
  const ModelParams params = pon::init_params(shape, rng);

  const auto check_layer = [](const pon::Affine& a) {
    const double limit = std::sqrt(6.0 / (a.in + a.out));
    double min_w = 1e9, max_w = -1e9;
    for (double w : a.w) {
      CHECK(std::abs(w) <= limit);
      min_w = std::min(min_w, w);
      max_w = std::max(max_w, w);
    }
    // The draw actually spreads over the interval rather than collapsing.
    CHECK(max_w > 0.5 * limit);
    CHECK(min_w < -0.5 * limit);
    for (double b : a.b) CHECK(b == 0.0);
  };
  for (const auto& layer : params.encoder) check_layer(layer);
  check_layer(params.classifier);
  check_layer(params.proj_in);
  check_layer(params.proj_out);
}

TEST_CASE("projections come out unit length") {
  const auto ds = tiny_dataset();
  TrainConfig c;
  ModelConfig model;
  model.encoder_widths = {4};
  model.proj_hidden = 3;
  model.proj_dim = 2;
  const auto state = pon::init_train_state(ds, c, model);
  const auto out = pon::forward(state.params, ds.row(0), true);
  REQUIRE(out.projection.has_value());
  double sq = 0.0;
  for (double v : out.projection->values()) sq += v * v;
  CHECK(sq == Catch::Approx(1.0).epsilon(0).margin(1e-9));

  // A degenerate all-zero projector output is an error, not a silent NaN.
  ModelParams dead = pon::zeros_like(state.params);
  CHECK_THROWS_WITH(pon::forward(dead, ds.row(0), true),
                    Catch::Matchers::ContainsSubstring("zero-norm projector"));
}

TEST_CASE("ordinal head counts positive threshold logits for its prediction") {
  ModelShape shape;
  shape.input_dim = 1;
  shape.encoder_widths = {};
  shape.num_classes = 5;
  shape.proj_hidden = 2;
  shape.proj_dim = 2;
  shape.head = HeadKind::kOrdinal;
  pon::Rng rng(3);
  ModelParams params = pon::zeros_like(pon::init_params(shape, rng));
  params.classifier.b = {3.0, 2.0, 0.5, -1.0};
  const auto out = pon::forward(params, std::vector<double>{0.0}, false);
  CHECK(out.ordinal_scores.size() == 4);
  CHECK(out.predicted_label == 3);
  CHECK_FALSE(out.pred.has_value());

  params.classifier.b = {-1.0, -2.0, -3.0, -4.0};
  CHECK(pon::forward(params, std::vector<double>{0.0}, false).predicted_label == 0);
}

TEST_CASE("batch gradients match finite differences on a tiny network") {
  const auto ds = tiny_dataset();
  ModelConfig model;
  model.encoder_widths = {4};
  model.proj_hidden = 3;
  model.proj_dim = 2;

  for (Method method : {Method::kPon, Method::kCe, Method::kFocal, Method::kEmd,
                        Method::kOrdinal, Method::kSoftlabel}) {
    TrainConfig c;
    c.method = method;
    c.batch_size = 6;
    c.epochs = 1;
    c.seed = 11;
    auto state = pon::init_train_state(ds, c, model);
    // One epoch moves off the symmetric start and fills the bank.
    pon::run_epochs(state, ds, nullptr, 1);

    const pon::LossScheme scheme = pon::resolve_scheme(c);
    const std::vector<int> positions{0, 3};
    const auto result = pon::backward(state.params, ds, positions, state.bank, scheme);

    auto blocks = pon::param_blocks(state.params);
    auto grad_params = result.grads;
    auto grad_blocks = pon::param_blocks(grad_params);
    const double h = 1e-6;
    double worst = 0.0;
    for (std::size_t blk = 0; blk < blocks.size(); ++blk) {
      for (std::size_t i = 0; i < blocks[blk].size(); ++i) {
        const double saved = blocks[blk][i];
        blocks[blk][i] = saved + h;
        const double up = batch_total(state.params, ds, positions, state.bank, scheme);
        blocks[blk][i] = saved - h;
        const double dn = batch_total(state.params, ds, positions, state.bank, scheme);
        blocks[blk][i] = saved;
        worst = std::max(worst, rel_err(grad_blocks[blk][i], (up - dn) / (2.0 * h)));
      }
    }
    INFO("method " << pon::method_to_string(method));
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("CE configuration reproduces a hand-rolled softmax MLP gradient") {
  const auto ds = tiny_dataset();
  TrainConfig c;
  c.method = Method::kCe;
  c.seed = 13;
  ModelConfig model;
  model.encoder_widths = {4};
  model.proj_hidden = 3;
  model.proj_dim = 2;
  const auto state = pon::init_train_state(ds, c, model);
  const pon::LossScheme scheme = pon::resolve_scheme(c);

  const std::vector<int> positions{0, 1, 4, 5};
  pon::MemoryBank bank(6, 2);
  const auto got = pon::backward(state.params, ds, positions, bank, scheme);

  ModelParams want_grads = pon::zeros_like(state.params);
  const double want_loss = PlainCeOracle::run(state.params, ds, positions, want_grads);

  CHECK(got.total == Catch::Approx(want_loss).epsilon(0).margin(1e-12));
  auto got_params = got.grads;
  auto got_blocks = pon::param_blocks(got_params);
  auto want_blocks = pon::param_blocks(want_grads);
  // Blocks 0..3 are the encoder and classifier; the rest belong to the
  // projector, which plain CE never touches.
  REQUIRE(got_blocks.size() == want_blocks.size());
  for (std::size_t blk = 0; blk < got_blocks.size(); ++blk) {
    for (std::size_t i = 0; i < got_blocks[blk].size(); ++i) {
      CHECK(got_blocks[blk][i] ==
            Catch::Approx(want_blocks[blk][i]).epsilon(0).margin(1e-9));
    }
  }
}

TEST_CASE("a cold bank silences the contrastive term without touching the rest") {
  const auto ds = tiny_dataset();
  ModelConfig model;
  model.encoder_widths = {4};
  model.proj_hidden = 3;
  model.proj_dim = 2;

  TrainConfig with_mcl;
  with_mcl.seed = 17;
  TrainConfig without_mcl = with_mcl;
  without_mcl.toggles.mcl = false;

  auto state_a = pon::init_train_state(ds, with_mcl, model);
  auto state_b = pon::init_train_state(ds, without_mcl, model);
  // Keep one projector unit always on so the tiny net cannot emit a
  // degenerate zero projection for any input.
  state_a.params.proj_in.b[0] = 1.0;
  state_b.params.proj_in.b[0] = 1.0;

  const std::vector<int> positions{1, 2, 5};
  pon::MemoryBank cold(6, 2);
  const auto res_a =
      pon::backward(state_a.params, ds, positions, cold, pon::resolve_scheme(with_mcl));
  const auto res_b =
      pon::backward(state_b.params, ds, positions, cold, pon::resolve_scheme(without_mcl));

  for (double v : res_a.per_sample_mcl) CHECK(v == 0.0);
  CHECK(res_a.mcl_sum == 0.0);
  // The projector still produces fresh entries for the bank while cold.
  CHECK(res_a.fresh_projections.size() == positions.size());

  auto pa = res_a.grads;
  auto pb = res_b.grads;
  auto blocks_a = pon::param_blocks(pa);
  auto blocks_b = pon::param_blocks(pb);
  for (std::size_t blk = 0; blk < blocks_a.size(); ++blk) {
    for (std::size_t i = 0; i < blocks_a[blk].size(); ++i) {
      CHECK(blocks_a[blk][i] == blocks_b[blk][i]);
    }
  }
}

TEST_CASE("warm bank routes gradient into the projector") {
  const auto ds = tiny_dataset();
  ModelConfig model;
  model.encoder_widths = {4};
  model.proj_hidden = 16;
  model.proj_dim = 2;
  TrainConfig c;
  c.seed = 19;
  c.batch_size = 6;
  auto state = pon::init_train_state(ds, c, model);
  pon::run_epochs(state, ds, nullptr, 1);

  const auto res = pon::backward(state.params, ds, {0, 2}, state.bank, pon::resolve_scheme(c));
  double proj_grad_mass = 0.0;
  auto grads = res.grads;
  for (double g : grads.proj_in.w) proj_grad_mass += std::abs(g);
  for (double g : grads.proj_out.w) proj_grad_mass += std::abs(g);
  CHECK(proj_grad_mass > 0.0);
}

TEST_CASE("per-sample contrastive losses ignore who else shares the batch") {
  pon::SyntheticConfig dc;
  dc.num_samples = 64;
  dc.feature_dim = 6;
  dc.seed = 23;
  const auto ds = pon::generate(dc);
  ModelConfig model;
  model.encoder_widths = {8};
  model.proj_hidden = 16;
  model.proj_dim = 4;
  TrainConfig c;
  c.seed = 23;
  c.batch_size = 16;
  auto state = pon::init_train_state(ds, c, model);
  state.params.proj_in.b[0] = 1.0;  // rules out a degenerate zero projection
  pon::run_epochs(state, ds, nullptr, 2);

  const pon::LossScheme scheme = pon::resolve_scheme(c);
  const int probe = 5;
  std::vector<int> batch1{probe};
  std::vector<int> batch8{probe, 1, 9, 17, 25, 33, 41, 49};
  std::vector<int> batch64(64);
  std::iota(batch64.begin(), batch64.end(), 0);
  std::swap(batch64[0], batch64[probe]);  // probe leads, everyone else follows

  const auto r1 = pon::backward(state.params, ds, batch1, state.bank, scheme);
  const auto r8 = pon::backward(state.params, ds, batch8, state.bank, scheme);
  const auto r64 = pon::backward(state.params, ds, batch64, state.bank, scheme);

  CHECK(r8.per_sample_mcl[0] == r1.per_sample_mcl[0]);
  CHECK(r64.per_sample_mcl[0] == r1.per_sample_mcl[0]);
  CHECK(r8.per_sample_main[0] == r1.per_sample_main[0]);
  CHECK(r64.per_sample_main[0] == r1.per_sample_main[0]);
}

TEST_CASE("adam leaves parameters alone under an all-zero gradient") {
  ModelShape shape;
  shape.input_dim = 2;
  shape.encoder_widths = {3};
  shape.num_classes = 3;
  shape.proj_hidden = 2;
  shape.proj_dim = 2;
  pon::Rng rng(29);
  ModelParams params = pon::init_params(shape, rng);
  const ModelParams before = params;
  pon::AdamState adam = pon::init_adam(params, 1e-3);
  pon::adam_step(params, pon::zeros_like(params), adam);
  CHECK(adam.step == 1);

  auto now = pon::param_blocks(params);
  auto old = pon::param_blocks(const_cast<ModelParams&>(before));
  for (std::size_t blk = 0; blk < now.size(); ++blk) {
    for (std::size_t i = 0; i < now[blk].size(); ++i) CHECK(now[blk][i] == old[blk][i]);
  }
}

TEST_CASE("the first adam step moves each weight by the signed step size") {
  ModelShape shape;
  shape.input_dim = 2;
  shape.encoder_widths = {};
  shape.num_classes = 2;
  shape.head = HeadKind::kSoftmax;
  shape.proj_hidden = 2;
  shape.proj_dim = 2;
  pon::Rng rng(31);
  ModelParams params = pon::zeros_like(pon::init_params(shape, rng));
  ModelParams grads = pon::zeros_like(params);
  grads.classifier.w = {0.5, -2.0, 1.0, -0.25};
  pon::AdamState adam = pon::init_adam(params, 1e-3);
  pon::adam_step(params, grads, adam);
  for (std::size_t i = 0; i < grads.classifier.w.size(); ++i) {
    const double expect = -1e-3 * (grads.classifier.w[i] > 0 ? 1.0 : -1.0);
    CHECK(params.classifier.w[i] == Catch::Approx(expect).epsilon(1e-6));
  }
  // Untouched blocks stay put.
  for (double v : params.proj_in.w) CHECK(v == 0.0);
}

TEST_CASE("adam descends a convex quadratic monotonically") {
  ModelShape shape;
  shape.input_dim = 1;
  shape.encoder_widths = {};
  shape.num_classes = 2;
  shape.head = HeadKind::kSoftmax;
  shape.proj_hidden = 1;
  shape.proj_dim = 1;
  pon::Rng rng(37);
  ModelParams params = pon::zeros_like(pon::init_params(shape, rng));
  params.classifier.b[0] = 1.0;  // the probe coordinate theta
  pon::AdamState adam = pon::init_adam(params, 1e-2);
  double prev = 0.5 * params.classifier.b[0] * params.classifier.b[0];
  for (int step = 0; step < 50; ++step) {
    ModelParams grads = pon::zeros_like(params);
    grads.classifier.b[0] = params.classifier.b[0];  // d(theta^2/2)/dtheta
    pon::adam_step(params, grads, adam);
    const double loss = 0.5 * params.classifier.b[0] * params.classifier.b[0];
    CHECK(loss < prev);
    prev = loss;
  }
}

TEST_CASE("class-balancing sampler draws classes uniformly") {
  // Imbalanced class sizes from 26 to 89 members.
  const std::vector<int> sizes{67, 49, 89, 31, 26};
  std::vector<int> labels;
  for (int c = 0; c < 5; ++c) {
    for (int i = 0; i < sizes[static_cast<std::size_t>(c)]; ++i) labels.push_back(c);
  }
  pon::WeightedSampler sampler(labels, 5);
  pon::Rng rng(41);
  std::vector<int> counts(5, 0);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(sampler.draw(rng))])]++;
  }
  double chi2 = 0.0;
  for (int c = 0; c < 5; ++c) {
    const double freq = counts[static_cast<std::size_t>(c)] / static_cast<double>(draws);
    CHECK(std::abs(freq - 0.2) < 0.004);  // within 2% of the balanced share
    const double expect = draws / 5.0;
    chi2 += (counts[static_cast<std::size_t>(c)] - expect) *
            (counts[static_cast<std::size_t>(c)] - expect) / expect;
  }
  CHECK(chi2 < 13.277);  // chi-square critical value, 4 dof, p = 0.01

  // Identical generator state gives an identical draw stream.
  pon::Rng rng_a(99), rng_b(99);
  for (int i = 0; i < 200; ++i) CHECK(sampler.draw(rng_a) == sampler.draw(rng_b));

  const std::vector<int> missing{0, 0, 2, 2};
  CHECK_THROWS_WITH(pon::WeightedSampler(missing, 3),
                    Catch::Matchers::ContainsSubstring("class 1 has no members"));
}

TEST_CASE("zero requested epochs returns the untouched initialization") {
  const auto ds = tiny_dataset();
  TrainConfig c;
  c.epochs = 0;
  c.seed = 43;
  ModelConfig model;
  model.encoder_widths = {4};
  model.proj_hidden = 3;
  model.proj_dim = 2;
  const auto trained = pon::train(ds, nullptr, c, model);
  CHECK(trained.history.empty());
  CHECK(trained.state.epochs_done == 0);

  const auto fresh = pon::init_train_state(ds, c, model);
  auto a = pon::param_blocks(const_cast<ModelParams&>(trained.state.params));
  auto b = pon::param_blocks(const_cast<ModelParams&>(fresh.params));
  for (std::size_t blk = 0; blk < a.size(); ++blk) {
    for (std::size_t i = 0; i < a[blk].size(); ++i) CHECK(a[blk][i] == b[blk][i]);
  }
}

TEST_CASE("training is bitwise reproducible for a fixed seed") {
  pon::SyntheticConfig dc;
  dc.num_samples = 120;
  dc.feature_dim = 6;
  dc.seed = 47;
  const auto ds = pon::generate(dc);
  TrainConfig c;
  c.epochs = 5;
  c.batch_size = 16;
  c.seed = 47;
  ModelConfig model;
  model.encoder_widths = {8};
  model.proj_hidden = 16;
  model.proj_dim = 4;

  const auto run_once = [&]() {
    auto state = pon::init_train_state(ds, c, model);
    state.params.proj_in.b[0] = 1.0;  // rules out a degenerate zero projection
    auto history = pon::run_epochs(state, ds, nullptr, c.epochs);
    return pon::TrainResult{std::move(state), std::move(history)};
  };
  const auto run_a = run_once();
  const auto run_b = run_once();
  REQUIRE(run_a.history.size() == 5);
  for (std::size_t e = 0; e < run_a.history.size(); ++e) {
    CHECK(run_a.history[e].loss_pfl == run_b.history[e].loss_pfl);
    CHECK(run_a.history[e].loss_mcl == run_b.history[e].loss_mcl);
    CHECK(run_a.history[e].train_acc == run_b.history[e].train_acc);
  }
  auto a = pon::param_blocks(const_cast<ModelParams&>(run_a.state.params));
  auto b = pon::param_blocks(const_cast<ModelParams&>(run_b.state.params));
  for (std::size_t blk = 0; blk < a.size(); ++blk) {
    for (std::size_t i = 0; i < a[blk].size(); ++i) CHECK(a[blk][i] == b[blk][i]);
  }
}

TEST_CASE("the training loss falls from its first-epoch level") {
  pon::SyntheticConfig dc;
  dc.num_samples = 300;
  dc.seed = 53;
  const auto ds = pon::generate(dc);
  TrainConfig c;
  c.epochs = 30;
  c.batch_size = 32;
  c.learning_rate = 1e-3;
  c.seed = 53;
  const auto trained = pon::train(ds, nullptr, c);
  REQUIRE(trained.history.size() == 30);
  const auto& first = trained.history.front();
  const auto& last = trained.history.back();
  CHECK(last.loss_pfl < first.loss_pfl);
  CHECK(last.loss_pfl + last.loss_mcl < first.loss_pfl + first.loss_mcl);
  CHECK(last.train_acc > first.train_acc);
}

TEST_CASE("validation summaries ride along when a holdout is supplied") {
  pon::SyntheticConfig dc;
  dc.num_samples = 80;
  dc.seed = 59;
  const auto ds = pon::generate(dc);
  dc.seed = 60;
  const auto val = pon::generate(dc);
  TrainConfig c;
  c.epochs = 2;
  c.seed = 59;
  const auto trained = pon::train(ds, &val, c);
  REQUIRE(trained.history.size() == 2);
  for (const auto& rec : trained.history) {
    REQUIRE(rec.val.has_value());
    CHECK(rec.val->acc >= 0.0);
    CHECK(rec.val->macro_auc.has_value());
  }

  // The ordinal head has no per-class probabilities, so no ranking metric.
  TrainConfig ord = c;
  ord.method = Method::kOrdinal;
  const auto trained_ord = pon::train(ds, &val, ord);
  REQUIRE(trained_ord.history.back().val.has_value());
  CHECK_FALSE(trained_ord.history.back().val->macro_auc.has_value());
}

TEST_CASE("a blown-up forward pass raises a divergence error, not NaNs") {
  Dataset ds;
  ds.feature_dim = 2;
  ds.num_classes = 2;
  ds.ids = {0};
  ds.labels = {1};
  ds.features = {0.3, -0.7};

  ModelShape shape;
  shape.input_dim = 2;
  shape.encoder_widths = {};
  shape.num_classes = 2;
  shape.head = HeadKind::kSoftmax;
  shape.proj_hidden = 2;
  shape.proj_dim = 2;
  pon::Rng rng(61);
  ModelParams params = pon::zeros_like(pon::init_params(shape, rng));
  params.classifier.b = {2000.0, 0.0};  // forces pred[1] to underflow to zero
  params.proj_out.w = {1.0, 0.0, 0.0, 1.0};

  TrainConfig c;
  c.method = Method::kCe;
  pon::MemoryBank bank(1, 2);
  try {
    pon::backward(params, ds, {0}, bank, pon::resolve_scheme(c));
    FAIL("expected a divergence error");
  } catch (const pon::DivergenceError& e) {
    CHECK(e.batch_index() == 0);
  }
}

TEST_CASE("training configuration rejects out-of-range values") {
  TrainConfig c;
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.temperature = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.gamma = -1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.learning_rate = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.epochs = -1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.q_neighbors = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}
