#pragma once

#include <chrono>
#include <functional>
#include <optional>

#include "ufc/config.hpp"
#include "ufc/eval.hpp"

namespace ufc {

template <typename T>
struct Sample {
  std::size_t id = 0;
  Array<T> source, target;
  FlowField<T> flow;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::optional<double> train_aepe;  // running mean of the training loss; absent at epoch 0
  double val_aepe = 0;
};

template <typename T>
struct Checkpoint {
  ParameterStore<T> params;
  AdamWState<T> optim;
  std::size_t epoch = 0;
  std::size_t best_epoch = 0;
  double best_val = 0;
};

namespace train {

template <typename T>
std::vector<Sample<T>> load_samples(const io::fs::path& dir) {
  std::vector<Sample<T>> out;
  for (const auto& e : data::load_manifest(dir)) {
    out.push_back({e.id, io::read_png<T>(dir / e.source), io::read_png<T>(dir / e.target), io::read_flo<T>(dir / e.flow)});
  }
  return out;
}

/// The first (1 - val_fraction) of the samples train, the rest validate.
inline std::size_t train_count(std::size_t n, double val_fraction) {
  const auto val = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(double(n) * val_fraction)));
  if (val >= n) throw ConfigError("train: need at least two samples for a train/validation split");
  return n - val;
}

template <typename T>
FlowField<T> predict(const ParamSet<T>& p, const ModelConfig& cfg, const Array<T>& s, const Array<T>& t) {
  return model::forward(s, t, p, cfg).flow;
}

template <typename T>
double mean_aepe(const ParameterStore<T>& store, const ModelConfig& cfg, std::span<const Sample<T>> samples) {
  const auto p = store.bind();
  double total = 0;
  for (const auto& s : samples) total += eval::aepe(predict(p, cfg, s.source, s.target), s.flow);
  return total / double(samples.size());
}

/// Deterministic epoch order shared by every model trained on the same
/// sample count and seed.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed * 1000003ull + epoch);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  return order;
}

template <typename T>
void clip_gradients(ParameterStore<T>& store, double max_norm) {
  if (max_norm <= 0) return;
  double sq = 0;
  for (const auto& [_, e] : store.entries())
    for (auto g : e.grad) sq += double(g) * double(g);
  const double norm = std::sqrt(sq);
  if (norm > max_norm) store.scale_grads(static_cast<T>(max_norm / norm));
}

/// One optimizer step over a mini-batch; returns the mean loss.
template <typename T>
double step(ParameterStore<T>& store, AdamWState<T>& state, const Config& cfg, std::span<const Sample<T>> batch) {
  store.zero_grads();
  double loss_sum = 0;
  for (const auto& s : batch) {
    Tape<T> tape;
    const auto bound = store.bind(&tape);
    const auto loss = flowhead::epe_loss(predict(bound, cfg.model, s.source, s.target), s.flow);
    tape.backward(loss);
    store.accumulate_grads(tape, bound);
    loss_sum += double(loss.item());
  }
  store.scale_grads(static_cast<T>(1.0 / double(batch.size())));
  clip_gradients(store, cfg.train.clip_norm);
  adamw_step(store, state, cfg.optim);
  return loss_sum / double(batch.size());
}

/// Checkpoint file: "UFCCKPT1", u64 epoch, u64 best epoch, f64 best
/// validation AEPE, i64 optimizer step, u64 entry count, then per entry the
/// name, rank, extents, values and AdamW moments. Little-endian throughout.
template <typename T>
void save_checkpoint(const io::fs::path& path, const Checkpoint<T>& ck) {
  std::vector<unsigned char> b;
  auto u64 = [&b](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<unsigned char>(v >> (8 * i)));
  };
  auto floats = [&b](const std::vector<T>& v) {
    for (auto x : v) io::put_u32(b, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
  };
  for (char c : std::string("UFCCKPT1")) b.push_back(static_cast<unsigned char>(c));
  u64(ck.epoch);
  u64(ck.best_epoch);
  u64(std::bit_cast<std::uint64_t>(ck.best_val));
  u64(static_cast<std::uint64_t>(ck.optim.step));
  u64(ck.params.entries().size());
  for (const auto& [name, e] : ck.params.entries()) {
    u64(name.size());
    for (char c : name) b.push_back(static_cast<unsigned char>(c));
    u64(e.value.rank());
    for (auto d : e.value.shape()) u64(d);
    floats(e.value.to_vector());
    const auto it = ck.optim.moments.find(name);
    const bool has = it != ck.optim.moments.end() && it->second.m.size() == e.value.size();
    b.push_back(has ? 1 : 0);
    if (has) {
      floats(it->second.m);
      floats(it->second.v);
    }
  }
  io::write_bytes(path, b);
}

/// Loads into `like`, whose names and shapes must match the file.
template <typename T>
Checkpoint<T> load_checkpoint(const io::fs::path& path, ParameterStore<T> like) {
  const auto b = io::read_bytes(path);
  std::size_t at = 0;
  auto need = [&](std::size_t n) {
    if (at + n > b.size()) throw FormatError("checkpoint: truncated " + path.string(), b.size());
  };
  auto u64 = [&]() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[at + std::size_t(i)]) << (8 * i);
    at += 8;
    return v;
  };
  auto floats = [&](std::size_t n) {
    need(4 * n);
    std::vector<T> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<T>(std::bit_cast<float>(io::get_u32(b, at + 4 * i)));
    at += 4 * n;
    return v;
  };
  need(8);
  if (std::string(b.begin(), b.begin() + 8) != "UFCCKPT1") throw FormatError("checkpoint: bad magic in " + path.string(), 0);
  at = 8;
  Checkpoint<T> ck;
  ck.epoch = u64();
  ck.best_epoch = u64();
  ck.best_val = std::bit_cast<double>(u64());
  ck.optim.step = static_cast<long>(u64());
  const auto count = u64();
  if (count != like.entries().size()) {
    throw ConfigError("checkpoint: " + std::to_string(count) + " parameters, config expects " +
                      std::to_string(like.entries().size()));
  }
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto len = u64();
    need(len);
    const std::string name(b.begin() + std::ptrdiff_t(at), b.begin() + std::ptrdiff_t(at + len));
    at += len;
    Shape shape(u64());
    for (auto& d : shape) d = u64();
    if (!like.contains(name)) throw ConfigError("checkpoint: parameter '" + name + "' not in this model config");
    if (like.value(name).shape() != shape) {
      throw ConfigError("checkpoint: parameter '" + name + "' has shape " + to_string(shape) + ", config expects " +
                        to_string(like.value(name).shape()));
    }
    const auto n = numel(shape);
    like.set(name, Array<T>(shape, floats(n)));
    need(1);
    if (b[at++]) {
      auto& mom = ck.optim.moments[name];
      mom.m = floats(n);
      mom.v = floats(n);
    }
  }
  ck.params = std::move(like);
  return ck;
}

inline io::fs::path last_path(const io::fs::path& checkpoint) { return io::fs::path(checkpoint.string() + ".last"); }

struct Callbacks {
  std::function<void(const EpochRecord&)> on_epoch;
  std::function<void(std::size_t epoch, std::size_t step, double loss)> on_step;
};

template <typename T>
struct Result {
  std::vector<EpochRecord> records;
  Checkpoint<T> best;
};

/// Seeded training loop. Epoch 0 evaluates the initial model. After every
/// epoch the latest state goes to `<checkpoint>.last` and, when validation
/// improves, to `<checkpoint>`. With `resume` the loop continues from
/// `<checkpoint>.last`.
template <typename T>
Result<T> run(const Config& cfg, std::span<const Sample<T>> samples, const io::fs::path& checkpoint, bool resume,
              const Callbacks& cb = {}) {
  const auto n_train = train_count(samples.size(), cfg.train.val_fraction);
  const auto train_set = samples.first(n_train), val_set = samples.subspan(n_train);

  Checkpoint<T> state{model::init<T>(cfg.model, cfg.seed), {}, 0, 0, 0};
  Result<T> result;
  if (resume) {
    state = load_checkpoint(last_path(checkpoint), model::init<T>(cfg.model, cfg.seed));
  } else {
    state.best_val = mean_aepe(state.params, cfg.model, val_set);
    const EpochRecord r0{0, std::nullopt, state.best_val};
    result.records.push_back(r0);
    if (cb.on_epoch) cb.on_epoch(r0);
    save_checkpoint(checkpoint, state);
    save_checkpoint(last_path(checkpoint), state);
  }
  result.best = resume ? load_checkpoint(checkpoint, model::init<T>(cfg.model, cfg.seed)) : state;

  for (std::size_t epoch = state.epoch + 1; epoch <= cfg.train.epochs; ++epoch) {
    const auto order = epoch_order(train_set.size(), cfg.seed, epoch);
    double loss_sum = 0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.train.batch) {
      std::vector<Sample<T>> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.train.batch); ++i) batch.push_back(train_set[order[i]]);
      const double loss = step(state.params, state.optim, cfg, std::span<const Sample<T>>(batch));
      if (cb.on_step) cb.on_step(epoch, steps, loss);
      loss_sum += loss * double(batch.size());
      ++steps;
    }
    state.epoch = epoch;
    const EpochRecord r{epoch, loss_sum / double(train_set.size()), mean_aepe(state.params, cfg.model, val_set)};
    result.records.push_back(r);
    if (cb.on_epoch) cb.on_epoch(r);
    if (r.val_aepe < state.best_val) {
      state.best_val = r.val_aepe;
      state.best_epoch = epoch;
      save_checkpoint(checkpoint, state);
      result.best = state;
    }
    save_checkpoint(last_path(checkpoint), state);
  }
  return result;
}

}  // namespace train
}  // namespace ufc
