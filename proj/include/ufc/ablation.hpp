#pragma once

#include <algorithm>
#include <map>
#include <sstream>

#include "ufc/train.hpp"

namespace ufc {

/// One row of the comparison. Tags follow the two ablation tables:
/// aggregation strategies (feat-self .. integrative) and the cumulative
/// component chain (integrative, +matching-dist, +hierarchy, +zoom).
struct VariantSpec {
  std::string tag;
  std::size_t budget = 0;  // target learnable-parameter count; 0 means unconstrained
};

struct VariantResult {
  std::string tag;
  std::size_t parameters = 0;
  std::size_t feature_mlp_hidden = 0;
  std::vector<double> val_aepe;  // one per seed, seed order
  double median() const {
    auto v = val_aepe;
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  }
};

struct Direction {
  std::string better, worse;
  double better_median = 0, worse_median = 0;
  std::size_t seed_wins = 0, seeds = 0;
  bool pass() const { return better_median < worse_median; }
};

struct AblationReport {
  std::vector<std::uint64_t> seeds;
  std::vector<VariantResult> variants;
  std::vector<Direction> directions;
};

namespace ablation {

inline const std::vector<std::string>& tags() {
  static const std::vector<std::string> t{"feat-self", "feat-self-cross", "cost-self",  "sequential",
                                          "integrative", "+matching-dist", "+hierarchy", "+zoom"};
  return t;
}

/// Architecture for a tag, derived from `base`. Strategy rows and the start
/// of the component chain run a single level with standard cross-attention,
/// so only the aggregation differs among them.
inline ModelConfig variant_model(const ModelConfig& base, const std::string& tag) {
  ModelConfig m = base;
  m.hierarchy = false;
  m.agg.cross = CrossMode::standard;
  m.agg.mode = AggregationMode::integrative;
  if (tag == "feat-self") {
    m.agg.mode = AggregationMode::feature_self;
  } else if (tag == "feat-self-cross") {
    m.agg.mode = AggregationMode::feature_self_cross;
  } else if (tag == "cost-self") {
    m.agg.mode = AggregationMode::cost_self;
  } else if (tag == "sequential") {
    m.agg.mode = AggregationMode::sequential;
  } else if (tag == "integrative") {
  } else if (tag == "+matching-dist") {
    m.agg.cross = CrossMode::matching_distribution;
  } else if (tag == "+hierarchy" || tag == "+zoom") {
    m.agg.cross = CrossMode::matching_distribution;
    m.hierarchy = true;
  } else {
    throw ConfigError("ablation: unknown variant '" + tag + "'");
  }
  return m;
}

inline std::size_t parameter_count(const ModelConfig& m) { return model::init<float>(m, 0).parameter_count(); }

/// Budget reference of a tag's table: the strategy rows are matched to
/// integrative, the component chain to the full hierarchical model.
inline std::string budget_reference(const std::string& tag) {
  return tag == "+matching-dist" || tag == "+hierarchy" || tag == "+zoom" ? "+hierarchy" : "integrative";
}

/// Specs with per-table budgets taken from `budget_reference`.
inline std::vector<VariantSpec> table_budgets(const ModelConfig& base, const std::vector<std::string>& tags) {
  std::vector<VariantSpec> specs;
  for (const auto& t : tags) specs.push_back({t, parameter_count(variant_model(base, budget_reference(t)))});
  return specs;
}

inline bool within_budget(std::size_t count, std::size_t budget) {
  return budget == 0 || std::abs(double(count) - double(budget)) <= 0.1 * double(budget);
}

/// Picks the feature-MLP width whose parameter count is closest to the
/// budget (count is affine in the width, so two probes suffice). Throws a
/// ConfigError naming the variant when even the best width misses by > 10%.
inline ModelConfig match_budget(ModelConfig m, const VariantSpec& v) {
  if (v.budget == 0) return m;
  m.agg.feature_mlp_hidden = 1;
  const double c1 = double(parameter_count(m));
  m.agg.feature_mlp_hidden = 2;
  const double slope = double(parameter_count(m)) - c1;
  std::size_t best = 1;
  if (slope > 0) best = static_cast<std::size_t>(std::max(1.0, std::round(1.0 + (double(v.budget) - c1) / slope)));
  m.agg.feature_mlp_hidden = best;
  const auto count = parameter_count(m);
  if (!within_budget(count, v.budget)) {
    throw ConfigError("ablation: variant '" + v.tag + "' has " + std::to_string(count) +
                      " parameters, outside 10% of the budget " + std::to_string(v.budget));
  }
  return m;
}

template <typename T>
double zoom_aepe(const ParameterStore<T>& store, const Config& cfg, std::span<const Sample<T>> samples) {
  const auto matcher = inference::model_matcher<T>(store.bind(), cfg.model);
  double total = 0;
  for (const auto& s : samples) total += eval::aepe(inference::zoom_in(s.source, s.target, matcher, cfg.zoom).flow, s.flow);
  return total / double(samples.size());
}

struct Callbacks {
  std::function<void(const std::string& tag, std::uint64_t seed, std::size_t params)> on_start;
  train::Callbacks train;
};

/// Trains every variant on the same samples and epoch order for each seed.
/// The full stack is compared against sequential aggregation, the baseline
/// of the component chain.
/// Held-out AEPE is taken from the best-by-validation checkpoint; +zoom
/// reuses the +hierarchy training and evaluates with dense zoom-in.
template <typename T>
AblationReport run(const Config& base, const std::vector<VariantSpec>& variants, const std::vector<std::uint64_t>& seeds,
                   std::span<const Sample<T>> samples, const io::fs::path& workdir, const Callbacks& cb = {}) {
  if (variants.empty() || seeds.empty()) throw ConfigError("ablation: need at least one variant and one seed");
  std::vector<std::pair<VariantSpec, ModelConfig>> models;
  for (const auto& v : variants) models.emplace_back(v, match_budget(variant_model(base.model, v.tag), v));

  AblationReport report;
  report.seeds = seeds;
  const auto n_train = train::train_count(samples.size(), base.train.val_fraction);
  const auto val = samples.subspan(n_train);
  std::map<std::string, ParameterStore<T>> trained;  // by serialized config and seed
  for (const auto& [spec, m] : models) {
    VariantResult r{spec.tag, parameter_count(m), m.agg.feature_mlp_hidden, {}};
    for (auto seed : seeds) {
      Config cfg = base;
      cfg.model = m;
      cfg.seed = seed;
      if (cb.on_start) cb.on_start(spec.tag, seed, r.parameters);
      const auto key = config::serialize(cfg);
      auto it = trained.find(key);
      if (it == trained.end()) {
        const auto name = spec.tag + "_seed" + std::to_string(seed) + ".ckpt";
        auto res = train::run<T>(cfg, samples, workdir / name, false, cb.train);
        it = trained.emplace(key, std::move(res.best.params)).first;
      }
      r.val_aepe.push_back(spec.tag == "+zoom" ? zoom_aepe(it->second, cfg, val)
                                               : train::mean_aepe(it->second, cfg.model, val));
    }
    report.variants.push_back(std::move(r));
  }

  auto find = [&](const std::string& tag) -> const VariantResult* {
    for (const auto& v : report.variants)
      if (v.tag == tag) return &v;
    return nullptr;
  };
  auto add = [&](const std::string& better, const std::string& worse) {
    const auto *b = find(better), *w = find(worse);
    if (!b || !w) return;
    Direction d{better, worse, b->median(), w->median(), 0, seeds.size()};
    for (std::size_t i = 0; i < seeds.size(); ++i) d.seed_wins += b->val_aepe[i] < w->val_aepe[i];
    report.directions.push_back(d);
  };
  add("integrative", "sequential");
  add("+hierarchy", "+matching-dist");
  for (const char* full : {"+zoom", "+hierarchy", "+matching-dist"}) {
    if (find(full)) {
      add(full, "sequential");
      break;
    }
  }
  return report;
}

inline std::string fmt(double v, int prec = 3) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(prec);
  os << v;
  return os.str();
}

inline std::string markdown(const AblationReport& r) {
  std::ostringstream os;
  os << "| Variant | Params | MLP hidden |";
  for (auto s : r.seeds) os << " AEPE seed " << s << " |";
  os << " Median |\n|---|---:|---:|";
  for (std::size_t i = 0; i < r.seeds.size(); ++i) os << "---:|";
  os << "---:|\n";
  for (const auto& v : r.variants) {
    os << "| " << v.tag << " | " << v.parameters << " | " << v.feature_mlp_hidden << " |";
    for (double a : v.val_aepe) os << ' ' << fmt(a) << " |";
    os << ' ' << fmt(v.median()) << " |\n";
  }
  if (!r.directions.empty()) {
    os << "\n| Expected direction | Medians | Seed wins | Result |\n|---|---|---:|---|\n";
    for (const auto& d : r.directions) {
      os << "| " << d.better << " < " << d.worse << " | " << fmt(d.better_median) << " vs " << fmt(d.worse_median)
         << " | " << d.seed_wins << "/" << d.seeds << " | " << (d.pass() ? "PASS" : "FAIL") << " |\n";
    }
  }
  return os.str();
}

inline std::string records(const AblationReport& r) {
  std::string out;
  for (const auto& v : r.variants)
    for (std::size_t i = 0; i < r.seeds.size(); ++i) {
      out += nlohmann::json{{"variant", v.tag},
                            {"seed", r.seeds[i]},
                            {"params", v.parameters},
                            {"feature_mlp_hidden", v.feature_mlp_hidden},
                            {"val_aepe", v.val_aepe[i]}}
                 .dump() +
             "\n";
    }
  for (const auto& d : r.directions) {
    out += nlohmann::json{{"direction", d.better + " < " + d.worse},
                          {"better_median", d.better_median},
                          {"worse_median", d.worse_median},
                          {"seed_wins", d.seed_wins},
                          {"pass", d.pass()}}
               .dump() +
           "\n";
  }
  return out;
}

}  // namespace ablation
}  // namespace ufc
