// amhnet: generate / train / infer / eval / verify

#include "amh/checkpoint.hpp"
#include "amh/datagen.hpp"
#include "amh/evalkit.hpp"
#include "amh/image_io.hpp"
#include "amh/kv_config.hpp"
#include "amh/mhnet.hpp"
#include "amh/train.hpp"
#include "amh/verify.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

namespace fs = std::filesystem;
using namespace amh;

namespace {

struct CliError : std::runtime_error {
  CliError(std::string c, const std::string& m) : std::runtime_error(m), code(std::move(c)) {}
  std::string code;
};

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw CliError("io", "cannot create directory '" + p.string() + "': " + ec.message());
}

KvConfig load_config(const std::string& path) { return path.empty() ? KvConfig{} : KvConfig::load(path); }

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> iters;
  std::string variant;
  std::string sign;
  double tol = 0.0075;
};

ModelConfig model_config(const KvConfig& kv, const Options& o) {
  ModelConfig m = ModelConfig::from_kv(kv);
  if (!o.variant.empty()) m = build_ablation(o.variant, m);
  if (!o.sign.empty()) m.hierarchy.sign = parse_sign(o.sign);
  if (o.seed) m.init_seed = *o.seed;
  return m;
}

int cmd_generate(const Options& o, const std::string& spec, const std::string& out) {
  KvConfig kv = load_config(spec.empty() ? o.config : spec);
  const auto count = static_cast<std::size_t>(kv.get_int("data.count", 20));
  const Index w = kv.get_int("data.width", 64), h = kv.get_int("data.height", 64);
  const std::uint64_t seed = o.seed ? *o.seed : static_cast<std::uint64_t>(kv.get_int("data.seed", 1));
  const Dataset d = generate_dataset(count, w, h, seed, kv.get_double("data.noise", 0.03), kv.get_double("data.blur", 0.7));
  ensure_dir(fs::path(out) / "images");
  ensure_dir(fs::path(out) / "edges");
  std::vector<ManifestEntry> manifest;
  for (std::size_t i = 0; i < d.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%05zu.pgm", i);
    const std::string img = std::string("images/") + name, mask = std::string("edges/") + name;
    if (d[i].image.channels() != 1) throw CliError("config", "only grayscale datasets can be written as PGM");
    save_pgm((fs::path(out) / img).string(), d[i].image);
    save_pgm((fs::path(out) / mask).string(), d[i].edges);
    manifest.push_back({img, mask});
  }
  write_manifest((fs::path(out) / "manifest.tsv").string(), manifest);
  std::cout << "wrote " << d.size() << " samples to " << out << "\n";
  return 0;
}

int cmd_train(const Options& o, const std::string& manifest, const std::string& out, std::string metrics_path) {
  const KvConfig kv = load_config(o.config);
  TrainConfig tc = TrainConfig::from_kv(kv);
  if (o.seed) tc.seed = *o.seed;
  if (o.iters) tc.iterations = *o.iters;
  AmhNet model(model_config(kv, o));
  const Dataset data = load_dataset(manifest);
  if (metrics_path.empty()) metrics_path = out + ".metrics.jsonl";
  std::ofstream metrics(metrics_path);
  if (!metrics) throw CliError("io", "cannot write '" + metrics_path + "'");
  const auto report = train_loop(data, model, tc, &metrics, [&](std::size_t it, const AmhNet& m) {
    save_checkpoint(out + ".iter" + std::to_string(it), m);
  });
  save_checkpoint(out, model);
  std::cout << "trained " << report.iterations << " iterations (" << report.updates << " updates), final loss "
            << (report.losses.empty() ? 0.0 : report.losses.back()) << "\n";
  return 0;
}

int cmd_infer(const std::string& checkpoint, const std::string& image, const std::string& out, bool png) {
  const AmhNet model = load_checkpoint(checkpoint);
  const PredictionSet p = model.predict(load_pgm(image));
  ensure_dir(out);
  auto write = [&](const std::string& stem, const Tensor& t) {
    save_pgm((fs::path(out) / (stem + ".pgm")).string(), t);
    if (png) save_png_gray((fs::path(out) / (stem + ".png")).string(), t);
  };
  for (std::size_t i = 0; i < p.heads.size(); ++i) write("head_" + std::to_string(i + 1), p.heads[i]);
  write("fused", p.fused);
  std::cout << "wrote " << p.heads.size() + 1 << " maps to " << out << "\n";
  return 0;
}

std::vector<fs::path> pgm_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw CliError("io", "not a directory: '" + dir.string() + "'");
  std::vector<fs::path> v;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".pgm") v.push_back(e.path());
  }
  std::sort(v.begin(), v.end());
  return v;
}

bool is_binary(const Tensor& t) { return ((t.values() == 0) || (t.values() == 1)).all(); }

int cmd_eval(const Options& o, const std::string& pred_dir, const std::string& gt_dir, const std::string& nms,
             std::size_t n_thr, const std::string& json_path) {
  std::vector<Tensor> preds, gts;
  for (const auto& p : pgm_files(pred_dir)) {
    const fs::path g = fs::path(gt_dir) / p.filename();
    if (!fs::exists(g)) throw CliError("io", "no ground truth for '" + p.filename().string() + "' in " + gt_dir);
    Tensor pred = load_pgm(p.string());
    // already-thin binary maps are left alone under "auto"
    const bool thin = nms == "on" || (nms == "auto" && !is_binary(pred));
    preds.push_back(thin ? nms_thin(pred) : pred);
    Tensor m = load_pgm(g.string());
    for (Index i = 0; i < m.size(); ++i) m.values()[i] = m.values()[i] >= 0.5 ? 1.0 : 0.0;
    gts.push_back(std::move(m));
  }
  if (preds.empty()) throw CliError("io", "no .pgm predictions in '" + pred_dir + "'");
  const EvalResult r = evaluate(preds, gts, o.tol, n_thr);
  std::cout << r.to_table();
  if (!json_path.empty()) {
    std::ofstream j(json_path);
    if (!j) throw CliError("io", "cannot write '" + json_path + "'");
    j << r.to_json() << '\n';
  }
  return 0;
}

int cmd_verify(const Options& o, const std::string& suite, const std::string& jsonl_path) {
  std::ofstream jsonl;
  if (!jsonl_path.empty()) {
    jsonl.open(jsonl_path);
    if (!jsonl) throw CliError("io", "cannot write '" + jsonl_path + "'");
  }
  const auto results = run_suites(suite, o.seed.value_or(1), jsonl_path.empty() ? nullptr : &jsonl);
  std::cout << format_table(results);
  for (const auto& r : results) {
    if (!r.pass()) return 3;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-gated multi-scale contour detection"};
  app.require_subcommand(1);
  Options o;
  std::uint64_t seed = 0;
  std::size_t iters = 0;
  auto add_common = [&](CLI::App* c) {
    c->add_option("--config", o.config, "key=value config file");
    c->add_option("--seed", seed, "random seed");
  };

  auto* gen = app.add_subcommand("generate", "write a synthetic dataset (PGM images, edge masks, manifest.tsv)");
  std::string spec, gen_out;
  add_common(gen);
  gen->add_option("--spec", spec, "dataset spec (data.count, data.width, data.height, data.noise, data.blur)");
  gen->add_option("--out", gen_out, "output directory")->required();

  auto* train = app.add_subcommand("train", "train a model and write a checkpoint");
  std::string manifest, ckpt_out, metrics;
  add_common(train);
  train->add_option("--manifest", manifest, "dataset manifest")->required()->check(CLI::ExistingFile);
  train->add_option("--out", ckpt_out, "checkpoint path")->required();
  train->add_option("--metrics", metrics, "JSON-lines metrics log (default <out>.metrics.jsonl)");
  train->add_option("--iters", iters, "iterations (overrides epochs)");
  train->add_option("--variant", o.variant, "flag, plag, plain_crf, no_agcrf, baseline or no_deep_sup");
  train->add_option("--sign", o.sign, "gate sign: plus or minus");

  auto* infer = app.add_subcommand("infer", "write per-head and fused contour maps for one image");
  std::string ckpt_in, image, infer_out;
  bool png = false;
  infer->add_option("--checkpoint", ckpt_in, "checkpoint")->required()->check(CLI::ExistingFile);
  infer->add_option("--image", image, "grayscale PGM image")->required()->check(CLI::ExistingFile);
  infer->add_option("--out", infer_out, "output directory")->required();
  infer->add_flag("--png", png, "also write PNG copies");

  auto* eval = app.add_subcommand("eval", "ODS / OIS / AP of predicted maps against ground truth");
  std::string pred_dir, gt_dir, json;
  std::string nms = "auto";
  std::size_t n_thr = 99;
  eval->add_option("--pred", pred_dir, "directory of predicted PGM maps")->required();
  eval->add_option("--gt", gt_dir, "directory of ground-truth PGM masks with the same file names")->required();
  eval->add_option("--tol", o.tol, "match tolerance as a fraction of the image diagonal")->capture_default_str();
  eval->add_option("--thresholds", n_thr, "number of thresholds")->capture_default_str();
  eval->add_option("--nms", nms, "thin predictions: auto (skip binary maps), on or off")
      ->check(CLI::IsMember({"auto", "on", "off"}))
      ->capture_default_str();
  eval->add_option("--json", json, "write the result and PR curve as JSON");

  auto* verify = app.add_subcommand("verify", "run oracle suites and print a pass/fail table");
  std::string suite = "all", jsonl;
  verify->add_option("--seed", seed, "random seed");
  verify->add_option("suite", suite, "suite name or all")->capture_default_str();
  verify->add_option("--jsonl", jsonl, "write one JSON object per checked instance");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << one_line(e.what()) << "\n";
    return 2;
  }
  for (auto* c : {gen, train, verify}) {
    if (c->count("--seed")) o.seed = seed;
  }
  if (train->count("--iters")) o.iters = iters;

  try {
    if (*gen) return cmd_generate(o, spec, gen_out);
    if (*train) return cmd_train(o, manifest, ckpt_out, metrics);
    if (*infer) return cmd_infer(ckpt_in, image, infer_out, png);
    if (*eval) return cmd_eval(o, pred_dir, gt_dir, nms, n_thr, json);
    if (*verify) {
      const int rc = cmd_verify(o, suite, jsonl);
      if (rc) std::cerr << "error: verify: one or more suites failed\n";
      return rc;
    }
  } catch (const CliError& e) {
    std::cerr << "error: " << e.code << ": " << one_line(e.what()) << "\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "error: config: " << one_line(e.what()) << "\n";
  } catch (const CheckpointError& e) {
    std::cerr << "error: checkpoint: " << one_line(e.what()) << "\n";
  } catch (const ImageFormatError& e) {
    std::cerr << "error: format: " << one_line(e.what()) << "\n";
  } catch (const ShapeError& e) {
    std::cerr << "error: shape: " << one_line(e.what()) << "\n";
  } catch (const TrainingDiverged& e) {
    std::cerr << "error: diverged: " << one_line(e.what()) << "\n";
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: invalid: " << one_line(e.what()) << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: runtime: " << one_line(e.what()) << "\n";
  }
  return 1;
}
