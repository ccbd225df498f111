// Command-line front end: data generation, training, evaluation, matching.
#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "kpt/dataset.hpp"
#include "kpt/errors.hpp"
#include "kpt/eval.hpp"
#include "kpt/kvconfig.hpp"
#include "kpt/render.hpp"
#include "kpt/trainer.hpp"

namespace fs = std::filesystem;
using namespace kpt;

namespace {

JitterParams jitter_from(const KvConfig& kv) {
  JitterParams j;
  const double b = kv.get_double("jitter_brightness", 0.0);
  const double c = kv.get_double("jitter_contrast", 0.0);
  j.brightness_min = -b;
  j.brightness_max = b;
  j.contrast_min = 1.0 - c;
  j.contrast_max = 1.0 + c;
  j.noise_sigma = kv.get_double("jitter_noise", 0.0);
  return j;
}

SynthConfig synth_config_from(const KvConfig& kv) {
  kv.require_known({"seed", "height", "width", "bg_max", "cube_max", "primitives", "cube_radius_min",
                    "cube_radius_max", "max_keypoints", "min_corner_gap", "jitter_brightness", "jitter_contrast",
                    "jitter_noise"});
  SynthConfig c;
  c.height = kv.get_uint("height", c.height);
  c.width = kv.get_uint("width", c.width);
  c.bg_max = kv.get_double("bg_max", c.bg_max);
  c.cube_max = kv.get_double("cube_max", c.cube_max);
  c.primitives = kv.get_uint("primitives", c.primitives);
  c.cube_radius_min = kv.get_double("cube_radius_min", c.cube_radius_min);
  c.cube_radius_max = kv.get_double("cube_radius_max", c.cube_radius_max);
  c.max_keypoints = kv.get_uint("max_keypoints", c.max_keypoints);
  c.min_corner_gap = kv.get_double("min_corner_gap", c.min_corner_gap);
  c.jitter = jitter_from(kv);
  return c;
}

WarpConfig warp_config_from(const KvConfig& kv) {
  kv.require_known({"seed", "images", "crop", "difficulty", "m", "m_min", "crop_candidates", "jitter_brightness",
                    "jitter_contrast", "jitter_noise"});
  WarpConfig c;
  c.crop = kv.get_uint("crop", c.crop);
  const std::string d = kv.get_string("difficulty", "easy");
  if (d == "easy") {
    c.difficulty = kEasyDifficulty;
  } else if (d == "hard") {
    c.difficulty = kHardDifficulty;
  } else {
    c.difficulty = kv.get_double("difficulty", c.difficulty);
  }
  c.m = kv.get_uint("m", c.m);
  c.m_min = kv.get_uint("m_min", c.m_min);
  c.crop_candidates = kv.get_uint("crop_candidates", c.crop_candidates);
  c.jitter = jitter_from(kv);
  return c;
}

std::vector<std::string> list_images(const std::string& dir) {
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    if (ext == ".png" || ext == ".ppm" || ext == ".pgm" || ext == ".PNG") out.push_back(e.path().string());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw IoError("no PNG/PPM/PGM images in '" + dir + "'");
  return out;
}

int gen_data(const std::string& kind, const std::string& config, const std::string& out_dir, std::size_t count) {
  const KvConfig kv = config.empty() ? KvConfig() : KvConfig::load(config);
  Manifest m;
  m.kind = kind;
  m.base_seed = kv.get_uint("seed", 1);
  m.config_hash = kv.hash();
  if (kind == "synth") {
    const SynthConfig cfg = synth_config_from(kv);
    for (std::size_t i = 0; i < count; ++i) {
      const auto seed = derive_seed(m.base_seed, i);
      write_pair(out_dir, i, gen_synthetic_pair(cfg, seed));
      m.seeds.push_back(seed);
    }
  } else if (kind == "warp") {
    const WarpConfig cfg = warp_config_from(kv);
    const auto images = list_images(kv.get_string("images", "images"));
    std::vector<Image> sources;
    for (const auto& p : images) sources.push_back(read_image(p));
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t src = i % sources.size();
      std::optional<ScenePair> pair;
      std::uint64_t seed = 0;
      for (std::uint64_t attempt = 0; attempt < 16 && !pair; ++attempt) {
        seed = derive_seed(m.base_seed, i + attempt * count);
        try {
          pair = gen_warped_pair(sources[src], cfg, seed);
        } catch (const InputError& e) {
          if (attempt == 15) throw;
        }
      }
      write_pair(out_dir, i, *pair);
      m.seeds.push_back(seed);
      m.sources.push_back(fs::path(images[src]).filename().string());
    }
  } else {
    throw InputError("--kind must be synth or warp");
  }
  write_manifest(out_dir, m);
  std::cout << "wrote " << count << " " << kind << " pairs to " << out_dir << "\n";
  return 0;
}

int train(const std::string& stage_name_arg, const std::string& config, const std::string& resume) {
  const StageId stage = parse_stage(stage_name_arg);
  const TrainConfig cfg = train_config_from(KvConfig::load(config), stage);
  if (cfg.data.empty()) throw InputError("config must set 'data'");
  if (cfg.out.empty()) throw InputError("config must set 'out'");
  TrackerModel model = resume.empty() ? TrackerModel(cfg.model) : TrackerModel::load(resume);
  const auto data = load_dataset(cfg.data);
  const auto t0 = std::chrono::steady_clock::now();
  auto sink = [&](const LossReport& r) {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cerr << stage_name(stage) << " step " << r.step;
    if (r.cel) std::cerr << " cel " << *r.cel;
    if (r.l2) std::cerr << " l2 " << *r.l2;
    std::cerr << " acc " << r.acc;
    if (r.occ_recall) std::cerr << " occ_recall " << *r.occ_recall;
    std::cerr << " (" << secs << " s)\n";
  };
  const StageSummary s = run_stage(stage, cfg, model, data, sink);
  std::cerr << stage_name(stage) << ": occluded fraction " << s.occluded_fraction << ", imbalance ratio "
            << s.imbalance << "\n";
  model.save(cfg.out);
  if (!cfg.log.empty()) write_loss_csv(cfg.log, s.reports);
  std::cout << "saved " << cfg.out << " after " << s.steps_run << " steps\n";
  return 0;
}

int eval(const std::string& ckpt, const std::string& data_dir, bool coarse_only, bool compare,
         const std::string& render_dir, double threshold, std::size_t max_kps, const std::string& csv) {
  const TrackerModel model = TrackerModel::load(ckpt);
  const auto pairs = load_dataset(data_dir);
  EvalConfig cfg;
  cfg.threshold = threshold;
  cfg.max_keypoints = max_kps;
  cfg.tag = fs::path(data_dir).filename().string();
  if (cfg.tag.empty()) cfg.tag = "eval";
  std::vector<EvalMetrics> rows;
  if (compare) {
    const Comparison c = compare_coarse_vs_fine(model, pairs, cfg);
    rows = {c.coarse, c.fine};
  } else {
    cfg.use_fine = !coarse_only;
    const EvalRun run = evaluate(model, pairs, cfg);
    rows = {run.metrics};
    if (!render_dir.empty()) {
      fs::create_directories(render_dir);
      for (std::size_t p = 0; p < pairs.size(); ++p) {
        write_match_rendering((fs::path(render_dir) / (pair_stem(p) + "_matches.ppm")).string(), pairs[p],
                              run.sampled[p], run.results[p]);
      }
    }
  }
  std::cout << metrics_table(rows);
  if (compare) {
    std::cout << "delta accuracy " << rows[1].accuracy - rows[0].accuracy << ", delta error "
              << rows[1].mean_error - rows[0].mean_error << " px\n";
  }
  std::cout << "\n" << metrics_csv(rows);
  if (!csv.empty()) {
    std::ofstream out(csv);
    if (!out) throw IoError("cannot write '" + csv + "'");
    out << metrics_csv(rows);
  }
  return 0;
}

int match(const std::string& ckpt, const std::string& img1, const std::string& img2, const std::string& kps_path,
          const std::string& out_path, double threshold, bool coarse_only) {
  const TrackerModel model = TrackerModel::load(ckpt);
  const Image a = read_image(img1), b = read_image(img2);
  const auto kps = read_keypoints(kps_path);
  TrackOptions opts;
  opts.threshold = threshold;
  opts.use_fine = !coarse_only;
  const auto results = model.track(a, b, kps, opts);
  std::ofstream out(out_path);
  if (!out) throw IoError("cannot write '" + out_path + "'");
  out << matches_csv(kps, results);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coarse-to-fine transformer keypoint tracker"};
  app.require_subcommand(1);

  std::string stage, config, resume;
  auto* train_cmd = app.add_subcommand("train", "Run one training stage");
  train_cmd->add_option("--stage", stage, "synth1 | synth2 | real | fine")
      ->required()
      ->check(CLI::IsMember({"synth1", "synth2", "real", "fine"}));
  train_cmd->add_option("--config", config, "key=value config file")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--resume", resume, "checkpoint to start from")->check(CLI::ExistingFile);

  std::string ckpt, data, render, csv;
  bool coarse_only = false, compare = false;
  double threshold = 0.2;
  std::size_t max_kps = 512;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset directory");
  eval_cmd->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", data)->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_flag("--coarse-only", coarse_only, "report patch centers without fine refinement");
  eval_cmd->add_flag("--compare", compare, "report coarse-only and refined metrics side by side");
  eval_cmd->add_option("--render", render, "directory for match visualizations");
  eval_cmd->add_option("--threshold", threshold, "confidence threshold")->check(CLI::Range(0.0, 0.999999));
  eval_cmd->add_option("--max-keypoints", max_kps, "keypoints sampled per pair")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--csv", csv, "also write metrics CSV here");

  std::string img1, img2, kps, out;
  auto* match_cmd = app.add_subcommand("match", "Track keypoints from one image into another");
  match_cmd->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  match_cmd->add_option("--img1", img1)->required()->check(CLI::ExistingFile);
  match_cmd->add_option("--img2", img2)->required()->check(CLI::ExistingFile);
  match_cmd->add_option("--kps", kps, "text file, one \"x y\" per line")->required()->check(CLI::ExistingFile);
  match_cmd->add_option("--out", out, "CSV output")->required();
  match_cmd->add_option("--threshold", threshold)->check(CLI::Range(0.0, 0.999999));
  match_cmd->add_flag("--coarse-only", coarse_only);

  std::string kind;
  std::size_t count = 0;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a dataset of supervised pairs");
  gen_cmd->add_option("--kind", kind)->required()->check(CLI::IsMember({"synth", "warp"}));
  gen_cmd->add_option("--config", config)->check(CLI::ExistingFile);
  gen_cmd->add_option("--out", out)->required();
  gen_cmd->add_option("--count", count)->required()->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train_cmd) return train(stage, config, resume);
    if (*eval_cmd) return eval(ckpt, data, coarse_only, compare, render, threshold, max_kps, csv);
    if (*match_cmd) return match(ckpt, img1, img2, kps, out, threshold, coarse_only);
    if (*gen_cmd) return gen_data(kind, config, out, count);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
