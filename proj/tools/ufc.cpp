// Command-line front end. Exit codes: 0 success, 2 usage or configuration
// error, 3 data or format error, 4 numeric failure.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <iostream>

#include "ufc/ablation.hpp"
#include "ufc/viz.hpp"

namespace fs = std::filesystem;
using namespace ufc;
using Real = float;

namespace {

constexpr int kUsage = 2, kFormat = 3, kNumeric = 4;

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  int threads = 0;
};

Config load_config(const Globals& g) {
  Config c = g.config_path.empty() ? Config{} : config::load(g.config_path);
  if (g.seed) c.seed = *g.seed;
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  io::write_bytes(path, std::vector<unsigned char>(text.begin(), text.end()));
}

ParameterStore<Real> load_params(const Config& cfg, const std::string& override_path) {
  const auto path = override_path.empty() ? cfg.checkpoint : override_path;
  return train::load_checkpoint(path, model::init<Real>(cfg.model, cfg.seed)).params;
}

void log(const std::string& msg) { std::cerr << msg << std::endl; }

int cmd_gen_data(const Globals& g, const std::string& out) {
  auto cfg = load_config(g);
  if (g.seed) cfg.data.seed = *g.seed;
  const fs::path dir = out.empty() ? cfg.data_dir : out;
  const auto entries = data::generate_dataset(cfg.data, dir);
  log("gen-data: wrote " + std::to_string(entries.size()) + " pairs to " + dir.string());
  return 0;
}

int cmd_train(const Globals& g, const std::string& data_dir, const std::string& checkpoint, bool resume) {
  const auto cfg = load_config(g);
  const fs::path dir = data_dir.empty() ? cfg.data_dir : data_dir;
  const fs::path ckpt = checkpoint.empty() ? cfg.checkpoint : checkpoint;
  const auto samples = train::load_samples<Real>(dir);
  const fs::path log_path = fs::path(cfg.out_dir) / "train_log.jsonl";
  std::string log_text;
  if (resume && fs::exists(log_path)) {
    // Keep records up to the resumed epoch so the log stays one line per epoch.
    const auto ck = train::load_checkpoint(train::last_path(ckpt), model::init<Real>(cfg.model, cfg.seed));
    std::ifstream in(log_path);
    std::string line;
    while (std::getline(in, line)) {
      if (nlohmann::json::parse(line).at("epoch").get<std::size_t>() <= ck.epoch) log_text += line + "\n";
    }
  }
  const auto start = std::chrono::steady_clock::now();
  train::Callbacks cb;
  cb.on_epoch = [&](const EpochRecord& r) {
    nlohmann::json j{{"epoch", r.epoch}, {"val_aepe", r.val_aepe}};
    j["train_aepe"] = r.train_aepe ? nlohmann::json(*r.train_aepe) : nlohmann::json(nullptr);
    log_text += j.dump() + "\n";
    write_text(log_path, log_text);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log("epoch " + std::to_string(r.epoch) + " train " + (r.train_aepe ? ablation::fmt(*r.train_aepe) : "-") +
        " val " + ablation::fmt(r.val_aepe) + " (" + ablation::fmt(secs, 0) + " s)");
  };
  const auto result = train::run<Real>(cfg, std::span<const Sample<Real>>(samples), ckpt, resume, cb);
  log("train-toy: best validation AEPE " + ablation::fmt(result.best.best_val) + " at epoch " +
      std::to_string(result.best.best_epoch) + ", checkpoint " + ckpt.string());
  return 0;
}

int cmd_match(const Globals& g, const std::string& src, const std::string& tgt, const std::string& out,
              const std::string& checkpoint, const std::string& dataset) {
  const auto cfg = load_config(g);
  const auto params = load_params(cfg, checkpoint).bind();
  if (!dataset.empty()) {
    const fs::path out_dir = out.empty() ? fs::path(cfg.out_dir) / "pred" : fs::path(out);
    const auto entries = data::load_manifest(dataset);
    for (const auto& e : entries) {
      const auto s = io::read_png<Real>(fs::path(dataset) / e.source), t = io::read_png<Real>(fs::path(dataset) / e.target);
      io::write_flo(out_dir / e.flow, model::forward(s, t, params, cfg.model).flow);
    }
    log("match: wrote " + std::to_string(entries.size()) + " flows under " + out_dir.string());
    return 0;
  }
  if (src.empty() || tgt.empty()) throw ConfigError("match: give SOURCE and TARGET images or --dataset");
  const auto flow = model::forward(io::read_png<Real>(src), io::read_png<Real>(tgt), params, cfg.model).flow;
  const fs::path path = out.empty() ? fs::path(cfg.out_dir) / "match.flo" : fs::path(out);
  io::write_flo(path, flow);
  log("match: wrote " + path.string());
  return 0;
}

int cmd_zoomin(const Globals& g, const std::string& src, const std::string& tgt, const std::string& out,
               const std::string& conf_png, const std::string& checkpoint) {
  const auto cfg = load_config(g);
  const auto matcher = inference::model_matcher<Real>(load_params(cfg, checkpoint).bind(), cfg.model);
  const auto res = inference::zoom_in(io::read_png<Real>(src), io::read_png<Real>(tgt), matcher, cfg.zoom);
  for (const auto& w : res.warnings) log("warning: " + w);
  const fs::path path = out.empty() ? fs::path(cfg.out_dir) / "zoomin.flo" : fs::path(out);
  io::write_flo(path, res.flow);
  // Grayscale confidence: white for zero cycle error, black at >= 4 px or invalid.
  const auto& c = res.confidence;
  std::vector<Real> gray(c.valid.size());
  for (std::size_t i = 0; i < gray.size(); ++i) {
    gray[i] = c.valid[i] ? std::max(Real(0), Real(1) - c.cycle_error[i] / Real(4)) : Real(0);
  }
  const fs::path cpath = conf_png.empty() ? fs::path(path).replace_extension(".confidence.png") : fs::path(conf_png);
  io::write_png(cpath, Array<Real>({c.height(), c.width()}, std::move(gray)));
  log("zoomin: wrote " + path.string() + " and " + cpath.string());
  return 0;
}

int cmd_eval(const Globals& g, const std::string& pred_dir, const std::string& gt_dir, const std::string& out) {
  const auto cfg = load_config(g);
  std::vector<fs::path> rel;
  for (const auto& e : fs::recursive_directory_iterator(gt_dir))
    if (e.is_regular_file() && e.path().extension() == ".flo") rel.push_back(fs::relative(e.path(), gt_dir));
  std::sort(rel.begin(), rel.end());
  if (rel.empty()) throw ConfigError("eval: no .flo files under " + gt_dir);
  std::string text;
  double sum_aepe = 0;
  std::array<double, eval::kPckAlphas.size()> sum_pck{};
  auto pck_keys = [](nlohmann::json& j, const auto& values) {
    for (std::size_t a = 0; a < eval::kPckAlphas.size(); ++a) {
      std::ostringstream key;
      key << "pck@" << eval::kPckAlphas[a];
      j[key.str()] = values[a];
    }
  };
  for (const auto& r : rel) {
    const auto gt = io::read_flo<Real>(fs::path(gt_dir) / r);
    const auto pred = io::read_flo<Real>(fs::path(pred_dir) / r);
    const auto rep = eval::evaluate_pair(pred, gt);
    nlohmann::json j{{"pair", r.generic_string()}, {"aepe", rep.aepe}, {"keypoints", rep.keypoints}};
    pck_keys(j, rep.pck);
    text += j.dump() + "\n";
    sum_aepe += rep.aepe;
    for (std::size_t a = 0; a < sum_pck.size(); ++a) sum_pck[a] += rep.pck[a];
  }
  const double n = double(rel.size());
  for (auto& v : sum_pck) v /= n;
  nlohmann::json summary{{"pair", "summary"}, {"count", rel.size()}, {"aepe", sum_aepe / n}};
  pck_keys(summary, sum_pck);
  text += summary.dump() + "\n";
  const fs::path path = out.empty() ? fs::path(cfg.out_dir) / "eval.jsonl" : fs::path(out);
  write_text(path, text);
  log("eval: " + std::to_string(rel.size()) + " pairs, mean AEPE " + ablation::fmt(sum_aepe / n) + ", report " +
      path.string());
  return 0;
}

int cmd_viz(const Globals& g, const std::string& src, const std::string& tgt, const std::vector<std::size_t>& pixel,
            const std::string& out, const std::string& checkpoint) {
  const auto cfg = load_config(g);
  const auto params = load_params(cfg, checkpoint).bind();
  const auto i_s = io::read_png<Real>(src), i_t = io::read_png<Real>(tgt);
  const auto res = model::forward(i_s, i_t, params, cfg.model);
  const fs::path dir = out.empty() ? fs::path(cfg.out_dir) / "viz" : fs::path(out);
  const auto& fine = res.levels[2];
  const auto s = fine.in_cost.extent();
  const std::size_t scale = std::max<std::size_t>(1, i_t.dim(0) / s);

  auto pca = [&](const std::string& stage, const FeatureMap<Real>& a, const FeatureMap<Real>& b) {
    if (a.grid.empty()) return;
    const auto [ra, rb] = viz::pca_rgb(a, b);
    io::write_png(dir / ("pca_" + stage + "_source.png"), viz::enlarge(ra, scale));
    io::write_png(dir / ("pca_" + stage + "_target.png"), viz::enlarge(rb, scale));
  };
  pca("raw", fine.in_s, fine.in_t);
  pca("self", fine.self.self_s, fine.self.self_t);
  pca("aggregated", fine.d_s, fine.d_t);

  if (pixel.size() != 2) throw ConfigError("viz: --pixel takes X Y in target image coordinates");
  if (pixel[0] >= i_t.dim(1) || pixel[1] >= i_t.dim(0)) throw ConfigError("viz: --pixel outside the target image");
  const auto jx = pixel[0] * s / i_t.dim(1), jy = pixel[1] * s / i_t.dim(0);
  auto slice = [&](const std::string& stage, const CostVolume<Real>& c) {
    if (c.grid.empty()) return;
    io::write_png(dir / ("cost_" + stage + ".png"), viz::enlarge(viz::normalize_range(costvol::slice(c, jx, jy)), scale));
  };
  slice("raw", fine.in_cost);
  slice("self", fine.self.self_cost);
  slice("aggregated", fine.cost);
  slice("final", res.c_star);
  log("viz: wrote images to " + dir.string());
  return 0;
}

int cmd_ablation(const Globals& g, std::vector<std::string> tags, std::vector<std::uint64_t> seeds,
                 const std::string& data_dir, const std::string& out, std::size_t budget, const std::string& budget_tag) {
  const auto cfg = load_config(g);
  if (tags.empty()) tags = ablation::tags();
  const fs::path dir = out.empty() ? fs::path(cfg.out_dir) / "ablation" : fs::path(out);
  const auto samples = train::load_samples<Real>(data_dir.empty() ? cfg.data_dir : data_dir);
  std::vector<VariantSpec> specs;
  if (budget == 0 && budget_tag == "auto") {
    specs = ablation::table_budgets(cfg.model, tags);
  } else {
    if (budget == 0 && budget_tag != "none") budget = ablation::parameter_count(ablation::variant_model(cfg.model, budget_tag));
    for (const auto& t : tags) specs.push_back({t, budget});
  }
  ablation::Callbacks cb;
  cb.on_start = [](const std::string& tag, std::uint64_t seed, std::size_t params) {
    log("ablation: " + tag + " seed " + std::to_string(seed) + " (" + std::to_string(params) + " parameters)");
  };
  cb.train.on_epoch = [](const EpochRecord& r) {
    log("  epoch " + std::to_string(r.epoch) + " val " + ablation::fmt(r.val_aepe));
  };
  const auto report = ablation::run<Real>(cfg, specs, seeds, std::span<const Sample<Real>>(samples), dir, cb);
  const auto md = ablation::markdown(report);
  write_text(dir / "report.md", md);
  write_text(dir / "report.jsonl", ablation::records(report));
  std::cout << md;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ufc: dense matching with unified feature and cost aggregation"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "key = value configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "overrides the seed (dataset seed for gen-data)");
  app.add_option("--threads", g.threads, "worker thread cap (default: hardware concurrency)")->check(CLI::PositiveNumber);

  std::string out, data_dir, checkpoint, src, tgt, conf_png, pred_dir, gt_dir, dataset, budget_tag = "auto";
  bool resume = false;
  std::size_t budget = 0;
  std::vector<std::size_t> pixel;
  std::vector<std::string> tags;
  std::vector<std::uint64_t> seeds{0, 1, 2};

  auto* gen = app.add_subcommand("gen-data", "render a synthetic warp dataset");
  gen->add_option("--out", out, "dataset directory (default: data_dir)");

  auto* tr = app.add_subcommand("train-toy", "train on a generated dataset");
  tr->add_option("--data", data_dir, "dataset directory (default: data_dir)");
  tr->add_option("--checkpoint", checkpoint, "checkpoint path (default: checkpoint)");
  tr->add_flag("--resume", resume, "continue from <checkpoint>.last");

  auto* ma = app.add_subcommand("match", "single forward pass, writes .flo");
  ma->add_option("source", src);
  ma->add_option("target", tgt);
  ma->add_option("-o,--out", out, "output .flo (or directory with --dataset)");
  ma->add_option("--checkpoint", checkpoint);
  ma->add_option("--dataset", dataset, "match every pair of a dataset manifest");

  auto* zo = app.add_subcommand("zoomin", "dense zoom-in inference");
  zo->add_option("source", src)->required();
  zo->add_option("target", tgt)->required();
  zo->add_option("-o,--out", out, "output .flo");
  zo->add_option("--confidence", conf_png, "grayscale confidence PNG");
  zo->add_option("--checkpoint", checkpoint);

  auto* ev = app.add_subcommand("eval", "AEPE / PCK report over matching .flo files");
  ev->add_option("pred_dir", pred_dir)->required()->check(CLI::ExistingDirectory);
  ev->add_option("gt_dir", gt_dir)->required()->check(CLI::ExistingDirectory);
  ev->add_option("-o,--out", out, "report path (JSONL)");

  auto* vz = app.add_subcommand("viz", "PCA feature images and cost slices");
  vz->add_option("source", src)->required();
  vz->add_option("target", tgt)->required();
  vz->add_option("--pixel", pixel, "target pixel X Y for cost slices")->expected(2)->required();
  vz->add_option("-o,--out", out, "output directory");
  vz->add_option("--checkpoint", checkpoint);

  auto* ab = app.add_subcommand("ablation", "train and compare model variants");
  ab->add_option("--variants", tags, "variant tags (default: all)")->delimiter(',');
  ab->add_option("--seeds", seeds, "seed list")->delimiter(',');
  ab->add_option("--data", data_dir, "dataset directory");
  ab->add_option("-o,--out", out, "report directory");
  ab->add_option("--budget", budget, "parameter budget (default: count of --budget-from)");
  ab->add_option("--budget-from", budget_tag, "variant whose count sets one shared budget; auto (default) matches each table to its reference, none disables matching");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kUsage;
  }
  if (g.threads > 0) set_threads(g.threads);

  try {
    if (*gen) return cmd_gen_data(g, out);
    if (*tr) return cmd_train(g, data_dir, checkpoint, resume);
    if (*ma) return cmd_match(g, src, tgt, out, checkpoint, dataset);
    if (*zo) return cmd_zoomin(g, src, tgt, out, conf_png, checkpoint);
    if (*ev) return cmd_eval(g, pred_dir, gt_dir, out);
    if (*vz) return cmd_viz(g, src, tgt, pixel, out, checkpoint);
    if (*ab) return cmd_ablation(g, tags, seeds, data_dir, out, budget, budget_tag);
  } catch (const NumericError& e) {
    log(std::string("numeric error: ") + e.what());
    return kNumeric;
  } catch (const FormatError& e) {
    log(std::string("format error: ") + e.what());
    return kFormat;
  } catch (const GenerationError& e) {
    log(std::string("data error: ") + e.what());
    return kFormat;
  } catch (const EvaluationError& e) {
    log(std::string("data error: ") + e.what());
    return kFormat;
  } catch (const DimensionError& e) {
    log(std::string("data error: ") + e.what());
    return kFormat;
  } catch (const Error& e) {
    log(std::string("usage error: ") + e.what());
    return kUsage;
  } catch (const nlohmann::json::exception& e) {
    log(std::string("format error: ") + e.what());
    return kFormat;
  } catch (const fs::filesystem_error& e) {
    log(std::string("usage error: ") + e.what());
    return kUsage;
  }
  return kUsage;
}
