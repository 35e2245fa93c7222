#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "ufc/data/dataset.hpp"
#include "ufc/inference.hpp"
#include "ufc/numerics/adamw.hpp"

namespace ufc {

struct TrainConfig {
  std::size_t epochs = 5;
  std::size_t batch = 2;
  double val_fraction = 0.2;
  double clip_norm = 0;  // global gradient-norm clip; 0 disables
};

/// Everything a subcommand needs. Every field has a default; the text form
/// is a flat `key = value` file (see README).
struct Config {
  std::string plan_name = "desk";
  ModelConfig model;
  ZoomConfig zoom{.k_list = {3, 4, 5}, .resolution = 0, .min_window = 8};
  AdamWConfig optim;
  TrainConfig train;
  DatasetConfig data;
  std::uint64_t seed = 0;
  std::string data_dir = "data";
  std::string checkpoint = "checkpoint.ufc";
  std::string out_dir = "out";
};

namespace config {

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
}

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename I>
I parse_int(const std::string& key, const std::string& v) {
  I out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("config: '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty() || !std::isfinite(out)) {
    throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: '" + key + "' expects true or false, got '" + v + "'");
}

template <typename E>
E parse_enum(const std::string& key, const std::string& v, const std::vector<std::pair<std::string, E>>& names) {
  for (const auto& [n, e] : names)
    if (n == v) return e;
  std::string options;
  for (const auto& [n, e] : names) options += (options.empty() ? "" : "|") + n;
  throw ConfigError("config: '" + key + "' must be one of " + options + ", got '" + v + "'");
}

template <typename E>
std::string enum_name(E e, const std::vector<std::pair<std::string, E>>& names) {
  for (const auto& [n, x] : names)
    if (x == e) return n;
  return "?";
}

inline const std::vector<std::pair<std::string, AttentionKind>> kAttention{{"linear", AttentionKind::linear},
                                                                          {"softmax", AttentionKind::softmax}};
inline const std::vector<std::pair<std::string, AggregationMode>> kMode{
    {"integrative", AggregationMode::integrative},
    {"sequential", AggregationMode::sequential},
    {"feature_self", AggregationMode::feature_self},
    {"feature_self_cross", AggregationMode::feature_self_cross},
    {"cost_self", AggregationMode::cost_self}};
inline const std::vector<std::pair<std::string, CrossMode>> kCross{
    {"matching_distribution", CrossMode::matching_distribution}, {"standard", CrossMode::standard}};

inline LevelPlan preset(const std::string& name) {
  if (name == "desk") return LevelPlan::desk();
  if (name == "paper") return LevelPlan::paper();
  if (name == "tiny") return LevelPlan::tiny();
  throw ConfigError("config: unknown plan preset '" + name + "' (desk|paper|tiny)");
}

inline std::string level_text(const LevelPlan::Level& l) {
  return std::to_string(l.extent) + "," + std::to_string(l.raw_channels) + "," + std::to_string(l.proj_channels);
}

inline LevelPlan::Level parse_level(const std::string& key, const std::string& v) {
  std::vector<std::size_t> parts;
  std::stringstream ss(v);
  std::string tok;
  while (std::getline(ss, tok, ',')) parts.push_back(parse_int<std::size_t>(key, trim(tok)));
  if (parts.size() != 3) throw ConfigError("config: '" + key + "' expects extent,raw,proj");
  return {parts[0], parts[1], parts[2]};
}

struct Field {
  std::function<std::string(const Config&)> get;
  std::function<void(Config&, const std::string&)> set;
};

inline const std::vector<std::pair<std::string, Field>>& fields() {
  using std::string;
  auto str = [](auto member) {
    return Field{[member](const Config& c) { return c.*member; },
                 [member](Config& c, const string& v) { c.*member = v; }};
  };
  auto level = [](std::size_t i) {
    return Field{[i](const Config& c) { return level_text(c.model.plan.levels[i]); },
                 [i](Config& c, const string& v) { c.model.plan.levels[i] = parse_level("plan.l" + std::to_string(i + 1), v); }};
  };
  static const std::vector<std::pair<string, Field>> table{
      {"plan", {[](const Config& c) { return c.plan_name; },
                [](Config& c, const string& v) {
                  c.model.plan = preset(v);
                  c.plan_name = v;
                }}},
      {"plan.l1", level(0)},
      {"plan.l2", level(1)},
      {"plan.l3", level(2)},
      {"attention", {[](const Config& c) { return enum_name(c.model.agg.attention, kAttention); },
                     [](Config& c, const string& v) { c.model.agg.attention = parse_enum("attention", v, kAttention); }}},
      {"aggregation", {[](const Config& c) { return enum_name(c.model.agg.mode, kMode); },
                       [](Config& c, const string& v) { c.model.agg.mode = parse_enum("aggregation", v, kMode); }}},
      {"cross", {[](const Config& c) { return enum_name(c.model.agg.cross, kCross); },
                 [](Config& c, const string& v) { c.model.agg.cross = parse_enum("cross", v, kCross); }}},
      {"blocks", {[](const Config& c) { return std::to_string(c.model.agg.blocks); },
                  [](Config& c, const string& v) { c.model.agg.blocks = parse_int<int>("blocks", v); }}},
      {"heads", {[](const Config& c) { return std::to_string(c.model.agg.heads); },
                 [](Config& c, const string& v) { c.model.agg.heads = parse_int<int>("heads", v); }}},
      {"key_dim", {[](const Config& c) { return std::to_string(c.model.agg.key_dim); },
                   [](Config& c, const string& v) { c.model.agg.key_dim = parse_int<std::size_t>("key_dim", v); }}},
      {"feature_mlp_hidden",
       {[](const Config& c) { return std::to_string(c.model.agg.feature_mlp_hidden); },
        [](Config& c, const string& v) { c.model.agg.feature_mlp_hidden = parse_int<std::size_t>("feature_mlp_hidden", v); }}},
      {"positional_embedding",
       {[](const Config& c) { return string(c.model.agg.positional_embedding ? "true" : "false"); },
        [](Config& c, const string& v) { c.model.agg.positional_embedding = parse_bool("positional_embedding", v); }}},
      {"temperature", {[](const Config& c) { return fmt_double(c.model.temperature); },
                       [](Config& c, const string& v) { c.model.temperature = parse_double("temperature", v); }}},
      {"hierarchy", {[](const Config& c) { return string(c.model.hierarchy ? "true" : "false"); },
                     [](Config& c, const string& v) { c.model.hierarchy = parse_bool("hierarchy", v); }}},
      {"zoom.k", {[](const Config& c) {
                    string s;
                    for (int k : c.zoom.k_list) s += (s.empty() ? "" : ",") + std::to_string(k);
                    return s;
                  },
                  [](Config& c, const string& v) {
                    c.zoom.k_list.clear();
                    std::stringstream ss(v);
                    string tok;
                    while (std::getline(ss, tok, ',')) {
                      if (!trim(tok).empty()) c.zoom.k_list.push_back(parse_int<int>("zoom.k", trim(tok)));
                    }
                  }}},
      {"zoom.min_window", {[](const Config& c) { return std::to_string(c.zoom.min_window); },
                           [](Config& c, const string& v) { c.zoom.min_window = parse_int<std::size_t>("zoom.min_window", v); }}},
      {"lr", {[](const Config& c) { return fmt_double(c.optim.lr); },
              [](Config& c, const string& v) { c.optim.lr = parse_double("lr", v); }}},
      {"beta1", {[](const Config& c) { return fmt_double(c.optim.beta1); },
                 [](Config& c, const string& v) { c.optim.beta1 = parse_double("beta1", v); }}},
      {"beta2", {[](const Config& c) { return fmt_double(c.optim.beta2); },
                 [](Config& c, const string& v) { c.optim.beta2 = parse_double("beta2", v); }}},
      {"eps", {[](const Config& c) { return fmt_double(c.optim.eps); },
               [](Config& c, const string& v) { c.optim.eps = parse_double("eps", v); }}},
      {"weight_decay", {[](const Config& c) { return fmt_double(c.optim.weight_decay); },
                        [](Config& c, const string& v) { c.optim.weight_decay = parse_double("weight_decay", v); }}},
      {"epochs", {[](const Config& c) { return std::to_string(c.train.epochs); },
                  [](Config& c, const string& v) { c.train.epochs = parse_int<std::size_t>("epochs", v); }}},
      {"batch", {[](const Config& c) { return std::to_string(c.train.batch); },
                 [](Config& c, const string& v) { c.train.batch = parse_int<std::size_t>("batch", v); }}},
      {"val_fraction", {[](const Config& c) { return fmt_double(c.train.val_fraction); },
                        [](Config& c, const string& v) { c.train.val_fraction = parse_double("val_fraction", v); }}},
      {"clip_norm", {[](const Config& c) { return fmt_double(c.train.clip_norm); },
                     [](Config& c, const string& v) { c.train.clip_norm = parse_double("clip_norm", v); }}},
      {"data.count", {[](const Config& c) { return std::to_string(c.data.count); },
                      [](Config& c, const string& v) { c.data.count = parse_int<std::size_t>("data.count", v); }}},
      {"data.seed", {[](const Config& c) { return std::to_string(c.data.seed); },
                     [](Config& c, const string& v) { c.data.seed = parse_int<std::uint64_t>("data.seed", v); }}},
      {"data.strength", {[](const Config& c) { return fmt_double(c.data.strength); },
                         [](Config& c, const string& v) { c.data.strength = parse_double("data.strength", v); }}},
      {"data.extent", {[](const Config& c) { return std::to_string(c.data.extent); },
                       [](Config& c, const string& v) { c.data.extent = parse_int<std::size_t>("data.extent", v); }}},
      {"seed", {[](const Config& c) { return std::to_string(c.seed); },
                [](Config& c, const string& v) { c.seed = parse_int<std::uint64_t>("seed", v); }}},
      {"data_dir", str(&Config::data_dir)},
      {"checkpoint", str(&Config::checkpoint)},
      {"out_dir", str(&Config::out_dir)},
  };
  return table;
}

}  // namespace detail

/// Cross-field checks shared by parse and programmatic construction.
inline void validate(const Config& c) {
  c.model.plan.validate();
  if (!(c.model.temperature > 0)) throw ConfigError("config: temperature must be positive");
  if (c.model.agg.blocks < 1) throw ConfigError("config: blocks must be >= 1");
  if (c.model.agg.heads < 1 || c.model.agg.key_dim % std::size_t(c.model.agg.heads) != 0) {
    throw ConfigError("config: key_dim must be a positive multiple of heads");
  }
  c.zoom.validate();
  if (c.optim.lr < 0) throw ConfigError("config: lr must be >= 0");
  if (c.train.batch == 0) throw ConfigError("config: batch must be >= 1");
  if (!(c.train.val_fraction > 0 && c.train.val_fraction < 1)) throw ConfigError("config: val_fraction must be in (0, 1)");
  if (!(c.data.strength > 0 && c.data.strength <= 1)) throw ConfigError("config: data.strength must be in (0, 1]");
}

/// Parses `key = value` lines; blank lines and `#` comments are ignored.
/// Unknown or repeated keys are rejected. `plan` is applied first so the
/// per-level overrides refine the chosen preset.
inline Config parse(const std::string& text) {
  Config c;
  std::map<std::string, std::string> kv;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const auto key = detail::trim(line.substr(0, eq)), value = detail::trim(line.substr(eq + 1));
    bool known = false;
    for (const auto& [k, f] : detail::fields()) known = known || k == key;
    if (!known) throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (!kv.emplace(key, value).second) throw ConfigError("config line " + std::to_string(lineno) + ": repeated key '" + key + "'");
  }
  for (const auto& [k, f] : detail::fields())
    if (auto it = kv.find(k); it != kv.end()) f.set(c, it->second);
  validate(c);
  return c;
}

inline std::string serialize(const Config& c) {
  std::string out;
  for (const auto& [k, f] : detail::fields()) out += k + " = " + f.get(c) + "\n";
  return out;
}

inline Config load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

}  // namespace config
}  // namespace ufc
