#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dge/dge.hpp"
#include "dge/testing/gradcheck.hpp"
#include "dge/testing/reference.hpp"

using json = nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitBadArgs = 1;
constexpr int kExitIo = 2;
constexpr int kExitValidation = 3;

dge::ModelConfig load_config(const std::string& path) {
  if (path.empty()) return dge::ModelConfig{};
  return dge::ModelConfig::from_file(path);
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw dge::io_error("cannot open for writing: " + path);
  out << text;
  if (!out) throw dge::io_error("write failed: " + path);
}

// --- infer ---

struct InferArgs {
  std::string rgb, ir, config, weights, out, dump_dir;
};

int run_infer(const InferArgs& a) {
  const dge::ModelConfig cfg = load_config(a.config);
  cfg.validate();

  const dge::ImageBuffer ir_img = dge::load_image(a.ir);
  const dge::ImageBuffer rgb_img = dge::load_image(a.rgb);
  if (ir_img.width != rgb_img.width || ir_img.height != rgb_img.height) {
    throw dge::io_error("image pair size mismatch: ir " + std::to_string(ir_img.width) + "x" +
                        std::to_string(ir_img.height) + ", rgb " + std::to_string(rgb_img.width) +
                        "x" + std::to_string(rgb_img.height));
  }

  dge::Model model = a.weights.empty()
                         ? dge::Model::init(cfg)
                         : dge::Model::from_store(cfg, dge::WeightStore::load(a.weights));

  const dge::Tensor ir_t = dge::preprocess(ir_img, cfg.side, cfg.ir_channels);
  const dge::Tensor rgb_t = dge::preprocess(rgb_img, cfg.side, cfg.rgb_channels);

  dge::FeatureDump dump;
  dge::InferenceResult result =
      model.forward(ir_t, rgb_t, a.dump_dir.empty() ? nullptr : &dump);

  if (!a.dump_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(a.dump_dir, ec);
    if (ec) throw dge::io_error("cannot create directory: " + a.dump_dir + " (" + ec.message() + ")");
    dge::WeightStore feats;
    for (const auto& [name, t] : dump.features) feats.add(name, t);
    feats.save((std::filesystem::path(a.dump_dir) / "features.dgew").string());
  }

  // Detections come out in the side x side frame; map back to source pixels.
  const double sx = double(ir_img.width) / double(cfg.side);
  const double sy = double(ir_img.height) / double(cfg.side);
  const std::vector<std::string> names = cfg.class_names();

  json doc;
  doc["image"] = {{"ir", a.ir},
                  {"rgb", a.rgb},
                  {"width", ir_img.width},
                  {"height", ir_img.height},
                  {"side", cfg.side}};
  json dets = json::array();
  for (const dge::Detection& d : result.detections) {
    dets.push_back({{"class_id", d.class_id},
                    {"class_name", names[static_cast<size_t>(d.class_id)]},
                    {"score", double(d.score)},
                    {"box", {double(d.box.x1) * sx, double(d.box.y1) * sy, double(d.box.x2) * sx,
                             double(d.box.y2) * sy}}});
  }
  doc["detections"] = std::move(dets);
  const dge::ModelStats stats = dge::analyze(cfg);
  doc["model"] = {{"params", stats.total_params}, {"flops", stats.total_flops}};

  write_text(a.out, doc.dump(2) + "\n");
  return kExitOk;
}

// --- stats ---

int run_stats(const std::string& config_path, bool as_json) {
  const dge::ModelConfig cfg = load_config(config_path);
  const dge::ModelStats stats = dge::analyze(cfg);

  if (as_json) {
    json doc;
    doc["params"] = stats.total_params;
    doc["flops"] = stats.total_flops;
    json mods = json::array();
    for (const auto& m : stats.modules) {
      mods.push_back({{"name", m.name}, {"params", m.params}, {"flops", m.flops}});
    }
    doc["modules"] = std::move(mods);
    json cats;
    for (int i = 0; i < dge::kFlopCategoryCount; ++i) {
      cats[dge::flop_category_name(static_cast<dge::FlopCategory>(i))] =
          stats.flops_by_category[static_cast<size_t>(i)];
    }
    doc["flops_by_category"] = std::move(cats);
    std::cout << doc.dump(2) << "\n";
    return kExitOk;
  }

  std::printf("%-14s %12s %14s\n", "module", "params", "flops");
  for (const auto& m : stats.modules) {
    std::printf("%-14s %12lld %14lld\n", m.name.c_str(), static_cast<long long>(m.params),
                static_cast<long long>(m.flops));
  }
  std::printf("%-14s %12lld %14lld\n", "total", static_cast<long long>(stats.total_params),
              static_cast<long long>(stats.total_flops));
  return kExitOk;
}

// --- gradcheck ---

int run_gradcheck(std::vector<std::string> ops, int trials) {
  if (ops.empty()) ops = dge::testing::gradcheck_op_names();
  const auto& known = dge::testing::gradcheck_op_names();
  for (const auto& op : ops) {
    if (std::find(known.begin(), known.end(), op) == known.end()) {
      std::cerr << "unknown op '" << op << "'; available:";
      for (const auto& k : known) std::cerr << " " << k;
      std::cerr << "\n";
      return kExitBadArgs;
    }
  }

  bool all_ok = true;
  for (const auto& op : ops) {
    double worst = 0.0;
    int coords = 0;
    for (int t = 0; t < trials; ++t) {
      dge::testing::OpCase c = dge::testing::make_op_case(op, 1000 + static_cast<uint64_t>(t));
      dge::Rng rng(77 + static_cast<uint64_t>(t));
      const auto res = dge::testing::gradcheck(c, rng);
      worst = std::max(worst, res.max_rel_err);
      coords += res.coords_checked;
    }
    const bool ok = worst < dge::testing::kGradCheckTol;
    all_ok = all_ok && ok;
    std::printf("%-22s max_rel_err %.3e  coords %4d  %s\n", op.c_str(), worst, coords,
                ok ? "ok" : "FAIL");
  }
  return all_ok ? kExitOk : kExitValidation;
}

// --- selftest ---

struct Suite {
  std::string name;
  bool (*run)();
};

bool suite_repblock_fusion() {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    dge::Rng rng(seed * 31 + 5);
    dge::WeightStore store;
    dge::ParamRegistry reg = dge::ParamRegistry::initializing(store, rng);
    dge::RepBlock block(reg, "b", 6, 8, 2);
    dge::Tensor x({1, 6, 9, 7});
    for (int64_t i = 0; i < x.size(); ++i) x[i] = rng.normal(1.0f);
    dge::Tensor fused = block.forward(x, nullptr, dge::RepMode::Fused);
    dge::Tensor multi = block.forward(x, nullptr, dge::RepMode::MultiBranch);
    for (int64_t i = 0; i < fused.size(); ++i) {
      if (std::abs(fused[i] - multi[i]) >= 1e-4f) return false;
    }
  }
  return true;
}

bool suite_ema_contract() {
  const int cases[][5] = {{1, 16, 8, 8, 4}, {2, 12, 5, 7, 3}, {1, 8, 1, 6, 8}, {3, 10, 4, 4, 2}};
  for (const auto& cs : cases) {
    const int n = cs[0], ch = cs[1], h = cs[2], w = cs[3], g = cs[4];
    dge::Rng rng(uint64_t(ch) * 131 + uint64_t(g));
    dge::WeightStore store;
    dge::ParamRegistry reg = dge::ParamRegistry::initializing(store, rng);
    dge::EMA ema(reg, "e", ch, g);
    dge::Tensor x({n, ch, h, w});
    for (int64_t i = 0; i < x.size(); ++i) x[i] = rng.normal(1.0f);
    dge::EmaAttention attn;
    dge::Tensor y = ema.forward(x, nullptr, &attn);
    if (y.shape() != x.shape()) return false;
    for (const dge::Tensor* t : {&attn.gate_h, &attn.gate_w, &attn.spatial}) {
      for (int64_t i = 0; i < t->size(); ++i) {
        if (!((*t)[i] > 0.0f && (*t)[i] < 1.0f)) return false;
      }
    }
  }
  return true;
}

bool suite_neck_shapes() {
  dge::ModelConfig cfg;
  for (int side : {32, 64, 96}) {
    cfg.side = side;
    dge::Model model = dge::Model::init(cfg);
    dge::Tensor ir({1, cfg.ir_channels, side, side});
    dge::Tensor rgb({1, cfg.rgb_channels, side, side});
    dge::Rng rng(static_cast<uint64_t>(side));
    for (int64_t i = 0; i < ir.size(); ++i) ir[i] = rng.normal(1.0f);
    for (int64_t i = 0; i < rgb.size(); ++i) rgb[i] = rng.normal(1.0f);
    const auto preds = model.raw_forward(ir, rgb);
    const int want_sides[3] = {side / 8, side / 16, side / 32};
    for (int i = 0; i < 3; ++i) {
      const auto& p = preds[static_cast<size_t>(i)];
      if (p.cls.extent(2) != want_sides[i] || p.cls.extent(3) != want_sides[i]) return false;
      if (p.box.extent(2) != want_sides[i] || p.box.extent(3) != want_sides[i]) return false;
      if (p.cls.extent(1) != cfg.classes || p.box.extent(1) != 4) return false;
    }
  }
  return true;
}

bool suite_nms_oracle() {
  dge::Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<dge::Detection> dets;
    const int n = 1 + static_cast<int>(rng.uniform() * 30);
    for (int i = 0; i < n; ++i) {
      dge::Detection d;
      const float x = static_cast<float>(rng.uniform() * 50);
      const float y = static_cast<float>(rng.uniform() * 50);
      d.box = {x, y, x + 1 + static_cast<float>(rng.uniform() * 20),
               y + 1 + static_cast<float>(rng.uniform() * 20)};
      d.score = static_cast<float>(rng.uniform());
      d.class_id = static_cast<int>(rng.uniform() * 3);
      dets.push_back(d);
    }
    const auto got = dge::nms(dets, 0.5f);
    const auto want = dge::testing::nms_ref(dets, 0.5);
    if (got.size() != want.size()) return false;
    for (size_t i = 0; i < got.size(); ++i) {
      if (got[i].class_id != want[i].class_id || got[i].score != want[i].score ||
          got[i].box.x1 != want[i].box.x1 || got[i].box.y1 != want[i].box.y1 ||
          got[i].box.x2 != want[i].box.x2 || got[i].box.y2 != want[i].box.y2) {
        return false;
      }
    }
  }
  return true;
}

int run_selftest(bool list_only, const std::string& weights) {
  const Suite suites[] = {{"repblock-fusion", suite_repblock_fusion},
                          {"ema-contract", suite_ema_contract},
                          {"neck-shapes", suite_neck_shapes},
                          {"nms-oracle", suite_nms_oracle}};
  if (list_only) {
    for (const auto& s : suites) std::cout << s.name << "\n";
    return kExitOk;
  }
  if (!weights.empty()) {
    const dge::WeightStore store = dge::WeightStore::load(weights);
    std::printf("weights ok: %zu entries\n", store.size());
  }
  bool all_ok = true;
  for (const auto& s : suites) {
    const bool ok = s.run();
    all_ok = all_ok && ok;
    std::printf("%-18s %s\n", s.name.c_str(), ok ? "pass" : "FAIL");
  }
  return all_ok ? kExitOk : kExitValidation;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dge: dual-modality (IR+RGB) vehicle detector"};
  app.require_subcommand(1);

  InferArgs infer_args;
  CLI::App* infer = app.add_subcommand("infer", "Run detection on an IR/RGB image pair");
  infer->add_option("--ir", infer_args.ir, "infrared image (PGM or PPM)")->required();
  infer->add_option("--rgb", infer_args.rgb, "visible image (PGM or PPM)")->required();
  infer->add_option("--config", infer_args.config, "model config file (defaults used if absent)");
  infer->add_option("--weights", infer_args.weights, "weight file (seeded init if absent)");
  infer->add_option("--out", infer_args.out, "output JSON path ('-' or absent: stdout)");
  infer->add_option("--dump-features", infer_args.dump_dir,
                    "directory for intermediate feature maps (features.dgew)");

  std::string stats_config;
  bool stats_json = false;
  CLI::App* stats = app.add_subcommand("stats", "Print parameter and FLOP counts");
  stats->add_option("--config", stats_config, "model config file");
  stats->add_flag("--json", stats_json, "machine-readable output");

  std::vector<std::string> gc_ops;
  int gc_trials = 2;
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  gradcheck->add_option("--ops", gc_ops, "comma-separated op subset")->delimiter(',');
  gradcheck->add_option("--trials", gc_trials, "random restarts per op")->check(CLI::PositiveNumber);

  bool st_list = false;
  std::string st_weights;
  CLI::App* selftest = app.add_subcommand("selftest", "Run built-in consistency suites");
  selftest->add_flag("--list", st_list, "list suite names and exit");
  selftest->add_option("--weights", st_weights, "validate a weight file before the suites");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return kExitBadArgs;
  }

  try {
    if (*infer) return run_infer(infer_args);
    if (*stats) return run_stats(stats_config, stats_json);
    if (*gradcheck) return run_gradcheck(gc_ops, gc_trials);
    if (*selftest) return run_selftest(st_list, st_weights);
  } catch (const dge::io_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const dge::validation_error& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitBadArgs;
  }
  return kExitBadArgs;
}
