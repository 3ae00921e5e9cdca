#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "pon/core_math.hpp"
#include "pon/random.hpp"

// Synthetic ordinal data generation, CSV interchange, and stratified k-fold
// indexing. The generator draws a continuous latent severity, bins it into
// ordinal classes, then corrupts the severity before embedding it, so the
// intra-class spread is a controllable knob.

namespace pon {

struct SyntheticConfig {
  int num_samples = 2000;
  int num_classes = 5;
  int feature_dim = 16;
  double severity_noise = 0.5;  // intra-class spread of the latent severity
  // Isotropic per-feature noise. The default leaves the task learnable but
  // comfortably below a linear probe's ceiling, so loss comparisons on the
  // default task are informative rather than saturated.
  double feature_noise = 0.9;
  std::vector<double> thresholds;  // empty = equal-width bins on [0, K]
  std::uint64_t seed = 1;

  std::vector<double> resolved_thresholds() const {
    if (!thresholds.empty()) return thresholds;
    std::vector<double> t;
    for (int i = 1; i < num_classes; ++i) t.push_back(static_cast<double>(i));
    return t;
  }

  void validate() const {
    detail::require(num_samples >= 1, "SyntheticConfig: num_samples must be positive");
    detail::require(num_classes >= 2, "SyntheticConfig: num_classes must be >= 2");
    detail::require(feature_dim >= 1, "SyntheticConfig: feature_dim must be positive");
    detail::require(severity_noise >= 0.0, "SyntheticConfig: severity_noise must be >= 0");
    detail::require(feature_noise >= 0.0, "SyntheticConfig: feature_noise must be >= 0");
    const auto t = resolved_thresholds();
    detail::require(static_cast<int>(t.size()) == num_classes - 1,
                    "SyntheticConfig: need K-1 thresholds");
    for (std::size_t i = 0; i + 1 < t.size(); ++i) {
      detail::require(t[i] < t[i + 1], "SyntheticConfig: thresholds must be strictly increasing");
    }
  }
};

struct Dataset {
  int feature_dim = 0;
  int num_classes = 0;
  std::vector<std::int64_t> ids;
  std::vector<int> labels;
  std::vector<double> features;  // row-major num_samples x feature_dim

  int size() const { return static_cast<int>(ids.size()); }
  std::span<const double> row(int i) const {
    return {features.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(feature_dim),
            static_cast<std::size_t>(feature_dim)};
  }
};

struct GeneratedData {
  Dataset dataset;
  std::vector<double> direction;    // unit signal direction in feature space
  std::vector<double> severities;   // corrupted latent severity per sample
};

inline GeneratedData generate_detailed(const SyntheticConfig& config) {
  config.validate();
  Rng rng(config.seed);

  std::vector<double> direction(static_cast<std::size_t>(config.feature_dim));
  double norm_sq = 0.0;
  do {
    norm_sq = 0.0;
    for (double& d : direction) {
      d = normal(rng);
      norm_sq += d * d;
    }
  } while (norm_sq == 0.0);
  const double inv_norm = 1.0 / std::sqrt(norm_sq);
  for (double& d : direction) d *= inv_norm;

  const auto thresholds = config.resolved_thresholds();
  GeneratedData out;
  out.direction = direction;
  Dataset& ds = out.dataset;
  ds.feature_dim = config.feature_dim;
  ds.num_classes = config.num_classes;
  ds.ids.reserve(static_cast<std::size_t>(config.num_samples));
  ds.labels.reserve(static_cast<std::size_t>(config.num_samples));
  ds.features.reserve(static_cast<std::size_t>(config.num_samples) *
                      static_cast<std::size_t>(config.feature_dim));

  for (int i = 0; i < config.num_samples; ++i) {
    const double severity = uniform_range(rng, 0.0, static_cast<double>(config.num_classes));
    int label = 0;
    for (double t : thresholds) {
      if (severity >= t) ++label;
    }
    const double corrupted = severity + config.severity_noise * normal(rng);
    ds.ids.push_back(i);
    ds.labels.push_back(label);
    out.severities.push_back(corrupted);
    for (int j = 0; j < config.feature_dim; ++j) {
      ds.features.push_back(direction[static_cast<std::size_t>(j)] * corrupted +
                            config.feature_noise * normal(rng));
    }
  }
  return out;
}

inline Dataset generate(const SyntheticConfig& config) {
  return generate_detailed(config).dataset;
}

inline void save_csv(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_csv: cannot open " + path);
  out << "id,label";
  for (int j = 0; j < dataset.feature_dim; ++j) out << ",f" << j;
  out << "\n";
  char buf[64];
  for (int i = 0; i < dataset.size(); ++i) {
    out << dataset.ids[static_cast<std::size_t>(i)] << ","
        << dataset.labels[static_cast<std::size_t>(i)];
    for (double v : dataset.row(i)) {
      // 17 significant digits: decimal text round-trips the exact double.
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << "," << buf;
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("save_csv: write failed for " + path);
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

inline double parse_double_field(const std::string& s, int line_no, const std::string& path) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) {
    throw std::invalid_argument(path + ":" + std::to_string(line_no) + ": bad numeric field '" +
                                s + "'");
  }
  return v;
}

inline std::int64_t parse_int_field(const std::string& s, int line_no, const std::string& path) {
  std::int64_t v = 0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) {
    throw std::invalid_argument(path + ":" + std::to_string(line_no) + ": bad integer field '" +
                                s + "'");
  }
  return v;
}

}  // namespace detail

/// Load a dataset from CSV with header `id,label,f0,...`. When
/// num_classes_override is zero, K is inferred as max label + 1.
inline Dataset load_csv(const std::string& path, int num_classes_override = 0) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("load_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("load_csv: empty file " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_csv_line(line);
  if (header.size() < 3 || header[0] != "id" || header[1] != "label") {
    throw std::invalid_argument(path + ":1: expected header 'id,label,f0,...'");
  }
  Dataset ds;
  ds.feature_dim = static_cast<int>(header.size()) - 2;

  int line_no = 1;
  int max_label = -1;
  std::unordered_set<std::int64_t> seen_ids;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != header.size()) {
      throw std::invalid_argument(path + ":" + std::to_string(line_no) + ": expected " +
                                  std::to_string(header.size()) + " fields, got " +
                                  std::to_string(fields.size()));
    }
    const std::int64_t id = detail::parse_int_field(fields[0], line_no, path);
    if (!seen_ids.insert(id).second) {
      throw std::invalid_argument(path + ":" + std::to_string(line_no) + ": duplicate id " +
                                  std::to_string(id));
    }
    const std::int64_t label = detail::parse_int_field(fields[1], line_no, path);
    if (label < 0) {
      throw std::invalid_argument(path + ":" + std::to_string(line_no) + ": negative label " +
                                  std::to_string(label));
    }
    if (num_classes_override > 0 && label >= num_classes_override) {
      throw std::invalid_argument(path + ":" + std::to_string(line_no) + ": label " +
                                  std::to_string(label) + " out of range for K=" +
                                  std::to_string(num_classes_override));
    }
    ds.ids.push_back(id);
    ds.labels.push_back(static_cast<int>(label));
    max_label = std::max(max_label, static_cast<int>(label));
    for (std::size_t j = 2; j < fields.size(); ++j) {
      ds.features.push_back(detail::parse_double_field(fields[j], line_no, path));
    }
  }
  if (ds.ids.empty()) throw std::invalid_argument("load_csv: no data rows in " + path);
  ds.num_classes = num_classes_override > 0 ? num_classes_override : max_label + 1;
  if (ds.num_classes < 2) ds.num_classes = 2;
  return ds;
}

struct FoldSplit {
  std::vector<std::int64_t> train_ids;
  std::vector<std::int64_t> val_ids;
};

/// Stratified k-fold: per class, members are shuffled and dealt round-robin
/// from a seeded starting fold, so per-fold class proportions stay within one
/// sample of the global proportions. Deterministic per seed.
inline std::vector<FoldSplit> kfold_split(const Dataset& dataset, int folds, std::uint64_t seed) {
  detail::require(folds >= 2, "kfold_split: folds must be >= 2");
  detail::require(folds <= dataset.size(), "kfold_split: more folds than samples");
  Rng rng(seed);

  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(dataset.num_classes));
  for (std::size_t i = 0; i < dataset.labels.size(); ++i) {
    const int label = dataset.labels[i];
    detail::require(label >= 0 && label < dataset.num_classes,
                    "kfold_split: label out of range");
    by_class[static_cast<std::size_t>(label)].push_back(i);
  }

  std::vector<std::vector<std::int64_t>> fold_members(static_cast<std::size_t>(folds));
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    if (!members.empty() && static_cast<int>(members.size()) < folds) {
      std::cerr << "warning: class " << c << " has " << members.size() << " members for "
                << folds << " folds; spreading best-effort\n";
    }
    // Fisher-Yates with the shared stream.
    for (std::size_t i = members.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_below(rng, i));
      std::swap(members[i - 1], members[j]);
    }
    const std::size_t start = static_cast<std::size_t>(uniform_below(rng, static_cast<std::uint64_t>(folds)));
    for (std::size_t i = 0; i < members.size(); ++i) {
      const std::size_t f = (start + i) % static_cast<std::size_t>(folds);
      fold_members[f].push_back(dataset.ids[members[i]]);
    }
  }

  std::vector<FoldSplit> out(static_cast<std::size_t>(folds));
  for (int f = 0; f < folds; ++f) {
    auto& split = out[static_cast<std::size_t>(f)];
    split.val_ids = fold_members[static_cast<std::size_t>(f)];
    for (int g = 0; g < folds; ++g) {
      if (g == f) continue;
      const auto& m = fold_members[static_cast<std::size_t>(g)];
      split.train_ids.insert(split.train_ids.end(), m.begin(), m.end());
    }
    std::sort(split.val_ids.begin(), split.val_ids.end());
    std::sort(split.train_ids.begin(), split.train_ids.end());
  }
  return out;
}

/// Rows of `dataset` whose ids are in `ids` (order follows `ids`).
inline Dataset subset_by_ids(const Dataset& dataset, const std::vector<std::int64_t>& ids) {
  std::unordered_map<std::int64_t, int> pos;
  pos.reserve(dataset.ids.size());
  for (int i = 0; i < dataset.size(); ++i) pos.emplace(dataset.ids[static_cast<std::size_t>(i)], i);
  Dataset out;
  out.feature_dim = dataset.feature_dim;
  out.num_classes = dataset.num_classes;
  for (std::int64_t id : ids) {
    auto it = pos.find(id);
    detail::require(it != pos.end(), "subset_by_ids: unknown id " + std::to_string(id));
    const int i = it->second;
    out.ids.push_back(id);
    out.labels.push_back(dataset.labels[static_cast<std::size_t>(i)]);
    const auto row = dataset.row(i);
    out.features.insert(out.features.end(), row.begin(), row.end());
  }
  return out;
}

}  // namespace pon
