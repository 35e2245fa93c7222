#pragma once

#include <cmath>
#include <random>
#include <string>

#include "ufc/costvol.hpp"

namespace ufc {

enum class AttentionKind { linear, softmax };

/// Which aggregation a block performs. `integrative` is the full model; the
/// others exist for the ablation harness.
enum class AggregationMode { integrative, sequential, feature_self, feature_self_cross, cost_self };

/// How the cross-attention map is formed: from the convolved cost volume, or
/// from ordinary query/key projections of the features.
enum class CrossMode { matching_distribution, standard };

enum class Side { source, target };

struct AggregationConfig {
  AttentionKind attention = AttentionKind::linear;
  AggregationMode mode = AggregationMode::integrative;
  CrossMode cross = CrossMode::matching_distribution;
  int blocks = 2;
  int heads = 1;
  std::size_t key_dim = 32;
  std::size_t feature_mlp_hidden = 0;  // 0 selects twice the feature width
  bool positional_embedding = true;

  std::size_t mlp_hidden(std::size_t channels) const {
    return feature_mlp_hidden ? feature_mlp_hidden : 2 * channels;
  }
  double cross_temperature() const { return std::sqrt(static_cast<double>(key_dim)); }
  bool uses_cross() const {
    return mode == AggregationMode::integrative || mode == AggregationMode::sequential ||
           mode == AggregationMode::feature_self_cross;
  }
};

namespace aggregation {

inline std::string key(int level, int block, const std::string& name) {
  return "agg.l" + std::to_string(level) + ".b" + std::to_string(block) + "." + name;
}

/// Fixed 2D sinusoidal table [s*s x c]: the first half of the channels
/// encodes the row, the second half the column.
template <typename T>
Array<T> positional_embedding(std::size_t extent, std::size_t channels) {
  const std::size_t half = channels / 2;
  std::vector<T> table(extent * extent * channels, T(0));
  for (std::size_t y = 0; y < extent; ++y) {
    for (std::size_t x = 0; x < extent; ++x) {
      T* row = table.data() + (y * extent + x) * channels;
      for (std::size_t part = 0; part < 2; ++part) {
        const double pos = part == 0 ? static_cast<double>(y) : static_cast<double>(x);
        for (std::size_t k = 0; k < half; ++k) {
          const double freq = std::pow(10000.0, -static_cast<double>(2 * (k / 2)) / static_cast<double>(half));
          row[part * half + k] = static_cast<T>(k % 2 == 0 ? std::sin(pos * freq) : std::cos(pos * freq));
        }
      }
    }
  }
  return Array<T>({extent * extent, channels}, std::move(table));
}

/// phi(q) (phi(k)^T v) / (phi(q) . sum_j phi(k_j)) with phi = elu + 1,
/// evaluated right to left in O(n d^2).
template <typename T>
Array<T> linear_attention(const Array<T>& q, const Array<T>& k, const Array<T>& v) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.dim(1) != k.dim(1) || k.dim(0) != v.dim(0)) {
    throw DimensionError("linear_attention: q " + to_string(q.shape()) + ", k " + to_string(k.shape()) + ", v " +
                         to_string(v.shape()));
  }
  const auto fq = elu_plus_one(q), fk = elu_plus_one(k);
  const auto kv = matmul(transpose(fk), v);
  const auto norm = matmul(fq, transpose(sum_rows(fk)));
  return div_col(matmul(fq, kv), norm);
}

/// softmax(q k^T / temperature) v; rows of the weight matrix sum to one.
template <typename T>
Array<T> softmax_attention(const Array<T>& q, const Array<T>& k, const Array<T>& v, T temperature) {
  return matmul(softmax(matmul(q, transpose(k)), 1, temperature), v);
}

/// Attention with `heads` channel groups. Query/key columns and value columns
/// are split evenly; outputs are concatenated back.
template <typename T>
Array<T> attend(const Array<T>& q, const Array<T>& k, const Array<T>& v, const AggregationConfig& cfg) {
  const auto h = static_cast<std::size_t>(cfg.heads);
  if (h == 1) {
    return cfg.attention == AttentionKind::linear
               ? linear_attention(q, k, v)
               : softmax_attention(q, k, v, static_cast<T>(std::sqrt(static_cast<double>(q.dim(1)))));
  }
  if (q.dim(1) % h || v.dim(1) % h) throw ConfigError("attention: widths not divisible by head count");
  const auto dq = q.dim(1) / h, dv = v.dim(1) / h;
  AggregationConfig single = cfg;
  single.heads = 1;
  Array<T> out;
  for (std::size_t i = 0; i < h; ++i) {
    auto part = attend(slice_cols(q, i * dq, (i + 1) * dq), slice_cols(k, i * dq, (i + 1) * dq),
                       slice_cols(v, i * dv, (i + 1) * dv), single);
    out = i == 0 ? part : concat_cols(out, part);
  }
  return out;
}

/// Two value streams through one attention map. With multiple heads each
/// stream is split per head, so head i mixes both streams with the same
/// weights.
template <typename T>
std::pair<Array<T>, Array<T>> attend_shared(const Array<T>& q, const Array<T>& k, const Array<T>& v_a,
                                            const Array<T>& v_b, const AggregationConfig& cfg) {
  const auto h = static_cast<std::size_t>(cfg.heads);
  const auto wa = v_a.dim(1), wb = v_b.dim(1);
  if (wa % h || wb % h) throw ConfigError("attention: value widths not divisible by head count");
  const auto ha = wa / h, hb = wb / h;
  // Interleave per head: [a_0 | b_0 | a_1 | b_1 | ...].
  Array<T> packed;
  for (std::size_t i = 0; i < h; ++i) {
    auto part = concat_cols(h == 1 ? v_a : slice_cols(v_a, i * ha, (i + 1) * ha),
                            h == 1 ? v_b : slice_cols(v_b, i * hb, (i + 1) * hb));
    packed = i == 0 ? part : concat_cols(packed, part);
  }
  const auto mixed = attend(q, k, packed, cfg);
  Array<T> out_a, out_b;
  for (std::size_t i = 0; i < h; ++i) {
    const auto base = i * (ha + hb);
    auto a = slice_cols(mixed, base, base + ha);
    auto b = slice_cols(mixed, base + ha, base + ha + hb);
    out_a = i == 0 ? a : concat_cols(out_a, a);
    out_b = i == 0 ? b : concat_cols(out_b, b);
  }
  return {out_a, out_b};
}

/// Tokens [hw x (c + hw)]: features (plus optional positional table) next to
/// the cost row of each source pixel, or the cost column of each target pixel.
template <typename T>
Array<T> make_tokens(const FeatureMap<T>& d, const CostVolume<T>& c, Side side, const Array<T>* pos = nullptr) {
  if (d.level != c.level) throw ContractError("make_tokens: feature level differs from cost level");
  if (d.pixels() != c.pixels()) throw DimensionError("make_tokens: grid extents differ");
  auto feats = d.tokens();
  if (pos) feats = add(feats, *pos);
  const auto cost = side == Side::source ? c.matrix() : transpose(c.matrix());
  return concat_cols(feats, cost);
}

template <typename T>
Array<T> layer_norm_named(const Array<T>& x, const ParamSet<T>& p, const std::string& prefix) {
  return layer_norm(x, p[prefix + ".s"], p[prefix + ".b"]);
}

/// x + W2 silu(W1 LN(x) + b1) + b2
template <typename T>
Array<T> mlp_residual(const Array<T>& x, const ParamSet<T>& p, const std::string& ln, const std::string& mlp) {
  const auto hidden = silu(add_row(matmul(layer_norm_named(x, p, ln), p[mlp + ".w1"]), p[mlp + ".b1"]));
  return add(x, add_row(matmul(hidden, p[mlp + ".w2"]), p[mlp + ".b2"]));
}

/// Output of one side of integrative self-attention, in token layout.
template <typename T>
struct SideOutput {
  Array<T> features;  // [n x c]
  Array<T> cost;      // [n x m], rows aligned with the tokens
};

/// Integrative self-attention on one side, token layout. `cost_rows` holds
/// the cost row (source side) or column (target side) of every token.
/// Pre-norm wiring: both streams are normalized, one attention map built from
/// the concatenated [features + pos ; cost] tokens aggregates both value
/// projections, each stream gets a residual, and the feature stream gets an
/// MLP with its own residual.
template <typename T>
SideOutput<T> integrative_rows(const Array<T>& features, const Array<T>& cost_rows, const ParamSet<T>& p,
                               const std::string& prefix, const AggregationConfig& cfg, const Array<T>* pos) {
  const auto dn = layer_norm_named(features, p, prefix + "ln_d");
  const auto cn = layer_norm_named(cost_rows, p, prefix + "ln_c");
  const auto tokens = concat_cols(pos ? add(dn, *pos) : dn, cn);
  const auto q = matmul(tokens, p[prefix + "pq"]);
  const auto k = matmul(tokens, p[prefix + "pk"]);
  const auto [agg_d, agg_c] = attend_shared(q, k, matmul(dn, p[prefix + "pvd"]), matmul(cn, p[prefix + "pvc"]), cfg);
  const auto d1 = add(features, agg_d);
  return {mlp_residual(d1, p, prefix + "ln_d2", prefix + "mlp_d"), add(cost_rows, agg_c)};
}

/// Integrative self-attention on one side of a level. The source side
/// aggregates cost rows, the target side cost columns.
template <typename T>
std::pair<FeatureMap<T>, CostVolume<T>> integrative_self_attention(const FeatureMap<T>& d, const CostVolume<T>& c,
                                                                   const ParamSet<T>& p, int block,
                                                                   const AggregationConfig& cfg, Side side) {
  if (d.level != c.level) throw ContractError("integrative_self_attention: level mismatch");
  if (d.pixels() != c.pixels()) throw DimensionError("integrative_self_attention: grid extents differ");
  const auto s = d.extent(), ch = d.channels();
  const auto pos = positional_embedding<T>(s, ch);
  const auto rows = side == Side::source ? c.matrix() : transpose(c.matrix());
  const auto out = integrative_rows(d.tokens(), rows, p, key(c.level, block, ""), cfg,
                                    cfg.positional_embedding ? &pos : nullptr);
  const auto cost = side == Side::source ? out.cost : transpose(out.cost);
  return {FeatureMap<T>{d.level, reshape(out.features, {s, s, ch})}, costvol::from_matrix(c.level, s, cost)};
}

/// Both sides with shared parameters: source first, then the target side on
/// the source-aggregated cost.
template <typename T>
std::tuple<FeatureMap<T>, FeatureMap<T>, CostVolume<T>> integrative_self_attention_pair(
    const FeatureMap<T>& d_s, const FeatureMap<T>& d_t, const CostVolume<T>& c, const ParamSet<T>& p, int block,
    const AggregationConfig& cfg) {
  auto [ds1, c1] = integrative_self_attention(d_s, c, p, block, cfg, Side::source);
  auto [dt1, c2] = integrative_self_attention(d_t, c1, p, block, cfg, Side::target);
  return {ds1, dt1, c2};
}

/// Plain feature self-attention, token layout (ablation variants).
template <typename T>
Array<T> feature_self_rows(const Array<T>& features, const ParamSet<T>& p, const std::string& prefix,
                           const AggregationConfig& cfg, const Array<T>* pos) {
  const auto dn = layer_norm_named(features, p, prefix + "ln_d");
  const auto x = pos ? add(dn, *pos) : dn;
  const auto agg = attend(matmul(x, p[prefix + "pq"]), matmul(x, p[prefix + "pk"]), matmul(dn, p[prefix + "pvd"]), cfg);
  return mlp_residual(add(features, agg), p, prefix + "ln_d2", prefix + "mlp_d");
}

/// Plain cost self-attention over rows (ablation variants).
template <typename T>
Array<T> cost_self_rows(const Array<T>& cost_rows, const ParamSet<T>& p, const std::string& prefix,
                        const AggregationConfig& cfg) {
  const auto cn = layer_norm_named(cost_rows, p, prefix + "ln_c");
  return add(cost_rows, attend(matmul(cn, p[prefix + "cq"]), matmul(cn, p[prefix + "ck"]), matmul(cn, p[prefix + "pvc"]), cfg));
}

template <typename T>
CostVolume<T> cost_self_attention(const CostVolume<T>& c, const ParamSet<T>& p, int block, const AggregationConfig& cfg) {
  const auto prefix = key(c.level, block, "");
  const auto rows = cost_self_rows(c.matrix(), p, prefix, cfg);
  const auto cols = cost_self_rows(transpose(rows), p, prefix, cfg);
  return costvol::from_matrix(c.level, c.extent(), transpose(cols));
}

/// Cross-attention whose attention map is the convolved cost volume:
/// D''_t(j) = D'_t(j) + sum_i softmax_i(M(i,j)/sqrt(d_K)) V(D'_s)(i), and
/// symmetrically for the source with softmax over j. Each side then gets an
/// MLP residual. With CrossMode::standard the map comes from query/key
/// projections of the features instead.
template <typename T>
std::pair<FeatureMap<T>, FeatureMap<T>> cross_attention_matching_distribution(const FeatureMap<T>& d_s,
                                                                              const FeatureMap<T>& d_t,
                                                                              const CostVolume<T>& c,
                                                                              const ParamSet<T>& p, int block,
                                                                              const AggregationConfig& cfg) {
  const auto s = d_s.extent(), ch = d_s.channels();
  const auto prefix = key(c.level, block, "");
  const auto ns = layer_norm_named(d_s.tokens(), p, prefix + "ln_x");
  const auto nt = layer_norm_named(d_t.tokens(), p, prefix + "ln_x");
  const auto v_s = matmul(ns, p[prefix + "pvd"]);
  const auto v_t = matmul(nt, p[prefix + "pvd"]);
  Array<T> agg_s, agg_t;
  if (cfg.cross == CrossMode::matching_distribution) {
    const auto m = costvol::conv4d_separable(c, p[prefix + "kx_src"], p[prefix + "kx_tgt"]).matrix();
    const auto temp = static_cast<T>(cfg.cross_temperature());
    agg_t = matmul(softmax(transpose(m), 1, temp), v_s);
    agg_s = matmul(softmax(m, 1, temp), v_t);
  } else {
    agg_t = attend(matmul(nt, p[prefix + "xq"]), matmul(ns, p[prefix + "xk"]), v_s, cfg);
    agg_s = attend(matmul(ns, p[prefix + "xq"]), matmul(nt, p[prefix + "xk"]), v_t, cfg);
  }
  const auto out_s = mlp_residual(add(d_s.tokens(), agg_s), p, prefix + "ln_x2", prefix + "mlp_x");
  const auto out_t = mlp_residual(add(d_t.tokens(), agg_t), p, prefix + "ln_x2", prefix + "mlp_x");
  return {FeatureMap<T>{d_s.level, reshape(out_s, {s, s, ch})}, FeatureMap<T>{d_t.level, reshape(out_t, {s, s, ch})}};
}

template <typename T>
struct BlockOutput {
  FeatureMap<T> d_s;
  FeatureMap<T> d_t;
  CostVolume<T> cost;
};

/// Intermediates of the first block, kept for visualization.
template <typename T>
struct BlockTrace {
  FeatureMap<T> self_s;  // after self-attention
  FeatureMap<T> self_t;
  CostVolume<T> self_cost;
};

/// Cost volume of the aggregated features, fused into the running cost:
/// C'' = C' + Conv4d(build(D''_s, D''_t)).
template <typename T>
CostVolume<T> fuse_cost(const CostVolume<T>& c_prime, const FeatureMap<T>& d_s, const FeatureMap<T>& d_t,
                        const ParamSet<T>& p, int block) {
  const auto prefix = key(c_prime.level, block, "");
  const auto rebuilt = costvol::build(backbone::l2_normalize(d_s), backbone::l2_normalize(d_t));
  return costvol::residual_add(c_prime, costvol::conv4d_separable(rebuilt, p[prefix + "kf_src"], p[prefix + "kf_tgt"]));
}

/// N interleaved (self-attention -> cross-attention -> cost fusion) blocks.
template <typename T>
BlockOutput<T> attention_block(const FeatureMap<T>& d_s, const FeatureMap<T>& d_t, const CostVolume<T>& c,
                               const ParamSet<T>& p, const AggregationConfig& cfg, BlockTrace<T>* trace = nullptr) {
  if (cfg.blocks < 1) throw ConfigError("attention_block: need at least one block");
  BlockOutput<T> cur{d_s, d_t, c};
  const auto s = d_s.extent(), ch = d_s.channels();
  const auto pos = positional_embedding<T>(s, ch);
  const auto* pos_ptr = cfg.positional_embedding ? &pos : nullptr;
  for (int b = 0; b < cfg.blocks; ++b) {
    const auto prefix = key(c.level, b, "");
    auto self_features = [&](const FeatureMap<T>& f) {
      return FeatureMap<T>{f.level, reshape(feature_self_rows(f.tokens(), p, prefix, cfg, pos_ptr), {s, s, ch})};
    };
    auto rebuilt = [&](const FeatureMap<T>& a, const FeatureMap<T>& bb) {
      return costvol::build(backbone::l2_normalize(a), backbone::l2_normalize(bb));
    };
    BlockOutput<T> next;
    switch (cfg.mode) {
      case AggregationMode::integrative: {
        auto [ds1, dt1, c1] = integrative_self_attention_pair(cur.d_s, cur.d_t, cur.cost, p, b, cfg);
        if (trace && b == 0) *trace = {ds1, dt1, c1};
        auto [ds2, dt2] = cross_attention_matching_distribution(ds1, dt1, c1, p, b, cfg);
        next = {ds2, dt2, fuse_cost(c1, ds2, dt2, p, b)};
        break;
      }
      case AggregationMode::sequential: {
        auto ds1 = self_features(cur.d_s), dt1 = self_features(cur.d_t);
        if (trace && b == 0) *trace = {ds1, dt1, cur.cost};
        AggregationConfig std_cross = cfg;
        std_cross.cross = CrossMode::standard;
        auto [ds2, dt2] = cross_attention_matching_distribution(ds1, dt1, cur.cost, p, b, std_cross);
        next = {ds2, dt2, cost_self_attention(rebuilt(ds2, dt2), p, b, cfg)};
        break;
      }
      case AggregationMode::feature_self: {
        auto ds1 = self_features(cur.d_s), dt1 = self_features(cur.d_t);
        if (trace && b == 0) *trace = {ds1, dt1, cur.cost};
        next = {ds1, dt1, rebuilt(ds1, dt1)};
        break;
      }
      case AggregationMode::feature_self_cross: {
        auto ds1 = self_features(cur.d_s), dt1 = self_features(cur.d_t);
        if (trace && b == 0) *trace = {ds1, dt1, cur.cost};
        AggregationConfig std_cross = cfg;
        std_cross.cross = CrossMode::standard;
        auto [ds2, dt2] = cross_attention_matching_distribution(ds1, dt1, cur.cost, p, b, std_cross);
        next = {ds2, dt2, rebuilt(ds2, dt2)};
        break;
      }
      case AggregationMode::cost_self: {
        auto c1 = cost_self_attention(cur.cost, p, b, cfg);
        if (trace && b == 0) *trace = {cur.d_s, cur.d_t, c1};
        next = {cur.d_s, cur.d_t, c1};
        break;
      }
    }
    cur = std::move(next);
  }
  return cur;
}

/// Registers every parameter one level's blocks need under `cfg.mode`.
template <typename T>
void register_params(ParameterStore<T>& store, int level, std::size_t extent, std::size_t channels,
                     const AggregationConfig& cfg, std::mt19937_64& rng) {
  const auto n = extent * extent, d = cfg.key_dim, hidden = cfg.mlp_hidden(channels);
  if (d == 0) throw ConfigError("aggregation: key_dim must be positive");
  if (cfg.heads < 1) throw ConfigError("aggregation: heads must be >= 1");
  auto normal = [&](Shape shape, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<T> v(numel(shape));
    for (auto& x : v) x = static_cast<T>(dist(rng));
    return Array<T>(std::move(shape), std::move(v));
  };
  auto centered = [&](double center) {
    std::vector<T> k(9, T(0));
    k[4] = static_cast<T>(center);
    return Array<T>({3, 3}, std::move(k));
  };
  const bool feature_self = cfg.mode != AggregationMode::cost_self;
  const bool cost_self = cfg.mode == AggregationMode::sequential || cfg.mode == AggregationMode::cost_self;
  const bool integrative = cfg.mode == AggregationMode::integrative;
  const bool standard_cross = cfg.mode == AggregationMode::sequential ||
                              cfg.mode == AggregationMode::feature_self_cross ||
                              (integrative && cfg.cross == CrossMode::standard);
  for (int b = 0; b < cfg.blocks; ++b) {
    auto add = [&](const std::string& name, Array<T> value) { store.add(key(level, b, name), std::move(value)); };
    auto add_ln = [&](const std::string& name, std::size_t width) {
      add(name + ".s", Array<T>::full({width}, T(1)));
      add(name + ".b", Array<T>::zeros({width}));
    };
    auto add_mlp = [&](const std::string& name) {
      add(name + ".w1", normal({channels, hidden}, std::sqrt(1.0 / channels)));
      add(name + ".b1", Array<T>::zeros({hidden}));
      add(name + ".w2", Array<T>::zeros({hidden, channels}));
      add(name + ".b2", Array<T>::zeros({channels}));
    };
    if (feature_self) {
      const auto token = integrative ? channels + n : channels;
      add_ln("ln_d", channels);
      add_ln("ln_d2", channels);
      add("pq", normal({token, d}, std::sqrt(1.0 / token)));
      add("pk", normal({token, d}, std::sqrt(1.0 / token)));
      add("pvd", normal({channels, channels}, 0.5 / std::sqrt(static_cast<double>(channels))));
      add_mlp("mlp_d");
    }
    if (integrative || cost_self) {
      add_ln("ln_c", n);
      add("pvc", Array<T>::zeros({n, n}));
    }
    if (cost_self) {
      add("cq", normal({n, d}, std::sqrt(1.0 / n)));
      add("ck", normal({n, d}, std::sqrt(1.0 / n)));
    }
    if (cfg.uses_cross()) {
      add_ln("ln_x", channels);
      add_ln("ln_x2", channels);
      add_mlp("mlp_x");
      if (standard_cross) {
        add("xq", normal({channels, d}, std::sqrt(1.0 / channels)));
        add("xk", normal({channels, d}, std::sqrt(1.0 / channels)));
      } else {
        add("kx_src", centered(std::sqrt(static_cast<double>(d))));
        add("kx_tgt", centered(1.0));
      }
    }
    if (integrative) {
      add("kf_src", centered(0.0));
      add("kf_tgt", centered(1.0));
    }
  }
}

}  // namespace aggregation
}  // namespace ufc
