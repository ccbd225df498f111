#include "kpt/dataset.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "kpt/errors.hpp"

namespace kpt {

namespace fs = std::filesystem;

std::string pair_stem(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu", index);
  return buf;
}

void write_pair(const std::string& dir, std::size_t index, const ScenePair& pair) {
  fs::create_directories(dir);
  const std::string stem = (fs::path(dir) / pair_stem(index)).string();
  write_ppm(stem + "_a.ppm", pair.img1);
  write_ppm(stem + "_b.ppm", pair.img2);
  std::ofstream out(stem + "_gt.csv");
  if (!out) throw IoError("cannot write '" + stem + "_gt.csv'");
  out.precision(17);
  out << "x1,y1,x2,y2,occluded\n";
  for (std::size_t i = 0; i < pair.size(); ++i) {
    out << pair.keypoints[i].x << ',' << pair.keypoints[i].y << ',' << pair.gt[i].x << ',' << pair.gt[i].y << ','
        << (pair.occluded[i] ? 1 : 0) << '\n';
  }
  if (!out) throw IoError("failed writing '" + stem + "_gt.csv'");
}

ScenePair read_pair(const std::string& dir, std::size_t index) {
  const std::string stem = (fs::path(dir) / pair_stem(index)).string();
  ScenePair pair;
  pair.img1 = read_image(stem + "_a.ppm");
  pair.img2 = read_image(stem + "_b.ppm");
  const std::string csv = stem + "_gt.csv";
  std::ifstream in(csv);
  if (!in) throw IoError("cannot open '" + csv + "'");
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line.starts_with("x1")) continue;
    std::istringstream ls(line);
    Vec2 a, b;
    int occ = 0;
    char c1, c2, c3, c4;
    if (!(ls >> a.x >> c1 >> a.y >> c2 >> b.x >> c3 >> b.y >> c4 >> occ) || c1 != ',' || c2 != ',' || c3 != ',' ||
        c4 != ',' || (occ != 0 && occ != 1)) {
      throw InputError(csv + ":" + std::to_string(lineno) + ": expected x1,y1,x2,y2,occluded");
    }
    pair.keypoints.push_back(a);
    pair.gt.push_back(b);
    pair.occluded.push_back(occ == 1);
  }
  assign_patches(pair);
  return pair;
}

void write_manifest(const std::string& dir, const Manifest& m) {
  fs::create_directories(dir);
  nlohmann::json j;
  j["kind"] = m.kind;
  j["base_seed"] = m.base_seed;
  j["config_hash"] = m.config_hash;
  j["count"] = m.seeds.size();
  j["seeds"] = m.seeds;
  if (!m.sources.empty()) j["sources"] = m.sources;
  std::ofstream out(fs::path(dir) / "manifest.json");
  if (!out) throw IoError("cannot write manifest in '" + dir + "'");
  out << j.dump(2) << '\n';
}

Manifest read_manifest(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) throw IoError("no manifest.json in '" + dir + "'");
  Manifest m;
  try {
    const auto j = nlohmann::json::parse(in);
    m.kind = j.at("kind").get<std::string>();
    m.base_seed = j.at("base_seed").get<std::uint64_t>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("sources")) m.sources = j["sources"].get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest in '" + dir + "': " + e.what());
  }
  return m;
}

std::size_t count_pairs(const std::string& dir) {
  std::size_t n = 0;
  while (fs::exists(fs::path(dir) / (pair_stem(n) + "_gt.csv"))) ++n;
  return n;
}

std::vector<ScenePair> load_dataset(const std::string& dir, std::size_t limit) {
  if (!fs::is_directory(dir)) throw IoError("dataset directory '" + dir + "' does not exist");
  std::size_t n = count_pairs(dir);
  if (n == 0) throw IoError("no pairs found in '" + dir + "'");
  if (limit > 0) n = std::min(n, limit);
  std::vector<ScenePair> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(read_pair(dir, i));
  return out;
}

}  // namespace kpt
