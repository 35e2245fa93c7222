#pragma once

#include <nlohmann/json.hpp>

#include <iomanip>
#include <sstream>

#include "ufc/data/io.hpp"
#include "ufc/data/render.hpp"
#include "ufc/data/texture.hpp"

namespace ufc {

struct DatasetConfig {
  std::size_t count = 200;
  std::uint64_t seed = 0;
  double strength = 1.0;
  std::size_t extent = 256;  // crop side; textures are rendered at twice this
};

struct ManifestEntry {
  std::size_t id = 0;
  std::uint64_t seed = 0;
  WarpKind kind = WarpKind::affine;
  double strength = 0;
  std::string source, target, flow;  // relative to the dataset directory
};

namespace data {

inline constexpr const char* kManifest = "manifest.jsonl";

/// Per-pair seed; splitmix64 of the dataset seed and index.
inline std::uint64_t pair_seed(std::uint64_t seed, std::size_t index) {
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ull + index + 1;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline WarpKind kind_for(std::size_t index) { return static_cast<WarpKind>(index % 3); }

/// Renders pair `index` of a dataset in memory (float images, not quantized).
template <typename T>
RenderedPair<T> make_pair(const DatasetConfig& cfg, std::size_t index) {
  const auto s = pair_seed(cfg.seed, index);
  const auto warp = sample_warp(kind_for(index), s, cfg.strength, cfg.extent);
  return render_pair(texture<T>(TextureKind::mixed, s ^ 0x5bd1e995ull, 2 * cfg.extent), warp);
}

inline nlohmann::json to_json(const ManifestEntry& e) {
  return {{"id", e.id},         {"seed", e.seed},     {"kind", to_string(e.kind)}, {"strength", e.strength},
          {"source", e.source}, {"target", e.target}, {"flow", e.flow}};
}

inline ManifestEntry from_json(const nlohmann::json& j) {
  ManifestEntry e;
  e.id = j.at("id").get<std::size_t>();
  e.seed = j.at("seed").get<std::uint64_t>();
  e.kind = parse_warp_kind(j.at("kind").get<std::string>());
  e.strength = j.at("strength").get<double>();
  e.source = j.at("source").get<std::string>();
  e.target = j.at("target").get<std::string>();
  e.flow = j.at("flow").get<std::string>();
  return e;
}

/// Writes PNG pairs, .flo ground truth with mask sidecars and a JSONL
/// manifest. Output depends only on the config.
inline std::vector<ManifestEntry> generate_dataset(const DatasetConfig& cfg, const io::fs::path& dir) {
  if (cfg.count == 0) throw ConfigError("gen-data: count must be positive");
  io::fs::create_directories(dir / "pairs");
  std::vector<ManifestEntry> entries;
  std::ostringstream manifest;
  for (std::size_t i = 0; i < cfg.count; ++i) {
    std::ostringstream stem;
    stem << "pairs/" << std::setw(5) << std::setfill('0') << i;
    ManifestEntry e{i, pair_seed(cfg.seed, i), kind_for(i), cfg.strength, stem.str() + "_s.png",
                    stem.str() + "_t.png", stem.str() + ".flo"};
    const auto pair = make_pair<float>(cfg, i);
    io::write_png(dir / e.source, pair.source);
    io::write_png(dir / e.target, pair.target);
    io::write_flo(dir / e.flow, pair.flow);
    manifest << to_json(e).dump() << '\n';
    entries.push_back(std::move(e));
  }
  const auto text = manifest.str();
  io::write_bytes(dir / kManifest, std::vector<unsigned char>(text.begin(), text.end()));
  return entries;
}

inline std::vector<ManifestEntry> load_manifest(const io::fs::path& dir) {
  const auto path = dir / kManifest;
  std::ifstream in(path);
  if (!in) throw IoError("no dataset manifest at " + path.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    if (!line.empty()) {
      try {
        entries.push_back(from_json(nlohmann::json::parse(line)));
      } catch (const nlohmann::json::exception& ex) {
        throw FormatError("manifest: " + std::string(ex.what()), offset);
      }
    }
    offset += line.size() + 1;
  }
  if (entries.empty()) throw FormatError("manifest: no entries in " + path.string(), 0);
  return entries;
}

/// FNV-1a over the manifest and every file it lists, in manifest order.
inline std::uint64_t dataset_checksum(const io::fs::path& dir) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto feed = [&h](const std::vector<unsigned char>& bytes) {
    for (auto c : bytes) h = (h ^ c) * 0x100000001b3ull;
  };
  feed(io::read_bytes(dir / kManifest));
  for (const auto& e : load_manifest(dir)) {
    feed(io::read_bytes(dir / e.source));
    feed(io::read_bytes(dir / e.target));
    feed(io::read_bytes(dir / e.flow));
    feed(io::read_bytes(io::mask_path(dir / e.flow)));
  }
  return h;
}

}  // namespace data
}  // namespace ufc
