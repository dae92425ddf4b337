#include "commands.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>

#include <CLI11.hpp>

#include "bisenet/analysis.hpp"
#include "bisenet/backbone.hpp"
#include "bisenet/bench.hpp"
#include "bisenet/checkpoint.hpp"
#include "bisenet/image_io.hpp"
#include "bisenet/trainer.hpp"

namespace bisenet::cli {

namespace fs = std::filesystem;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig:
      return kExitConfig;
    case ErrorKind::kData:
    case ErrorKind::kFormat:
    case ErrorKind::kIo:
      return kExitData;
    case ErrorKind::kNumeric:
      return kExitNumeric;
    default:
      return kExitFailure;
  }
}

std::string error_line(const Error& e) {
  return "error: " + std::string(to_string(e.kind())) + ": " + e.what();
}

namespace {

Resolution parse_resolution(const std::string& text) {
  const auto x = text.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument(text);
    std::size_t used = 0;
    const Resolution r{std::stoll(text.substr(0, x), &used), std::stoll(text.substr(x + 1))};
    if (used != x || r.width < 1 || r.height < 1) throw std::invalid_argument(text);
    return r;
  } catch (const std::logic_error&) {
    fail(ErrorKind::kConfig, "resolution '" + text + "' is not WIDTHxHEIGHT");
  }
}

// Model config for a checkpoint: explicit file, else the sidecar next to it.
EngineConfig config_for_checkpoint(const std::string& ckpt, const std::string& config_path) {
  const std::string path = config_path.empty() ? ckpt + ".cfg" : config_path;
  if (!fs::exists(path))
    fail(ErrorKind::kConfig, "no model config: pass --config or provide '" + ckpt + ".cfg'");
  return load_config(path);
}

ParamStore load_weights(const Model& model, const EngineConfig& cfg, const std::string& ckpt) {
  ParamStore store = init_params<float>(model.graph(), cfg.seed);
  const CheckpointFile file = read_checkpoint(ckpt);
  if (file.config_hash != config_hash(cfg))
    fail(ErrorKind::kConfig, "checkpoint '" + ckpt + "' was written for config " + hex64(file.config_hash) +
                                 ", not " + hex64(config_hash(cfg)));
  restore_checkpoint(store, file);
  return store;
}

std::int64_t reflect(std::int64_t i, std::int64_t n) {
  if (n == 1) return 0;
  const std::int64_t period = 2 * (n - 1);
  i %= period;
  return i < n ? i : period - i;
}

// Reflect-padded copy with extents rounded up to multiples of 32.
Tensor pad_reflect(const Tensor& x) {
  const Shape& s = x.shape();
  Tensor out(Shape{s.n, s.c, round_up(s.h, 32), round_up(s.w, 32)});
  const Shape& o = out.shape();
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c)
      for (std::int64_t y = 0; y < o.h; ++y)
        for (std::int64_t xx = 0; xx < o.w; ++xx) out.at(n, c, y, xx) = x.at(n, c, reflect(y, s.h), reflect(xx, s.w));
  return out;
}

LabelMap crop(const LabelMap& m, std::int64_t h, std::int64_t w) {
  LabelMap out(m.n, h, w);
  for (std::int64_t n = 0; n < m.n; ++n)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) out.at(n, y, x) = m.at(n, y, x);
  return out;
}

struct TrainArgs {
  std::string config;
  std::string log;
  std::string ckpt;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  EngineConfig cfg = load_config(a.config);
  if (!a.log.empty()) cfg.train.log_path = a.log;
  if (!a.ckpt.empty()) cfg.train.checkpoint_path = a.ckpt;
  const auto history = train_from_config(cfg);
  const TrainStep& last = history.back();
  out << "trained " << history.size() << " iterations; final L=" << last.total << " lp=" << last.lp
      << "; checkpoint " << cfg.train.checkpoint_path << "; log " << cfg.train.log_path << "\n";
  return kExitOk;
}

struct InferArgs {
  std::string ckpt;
  std::string out_dir;
  std::string config;
  std::string palette;
  bool no_color = false;
  bool pad = false;
  std::vector<std::string> images;
};

int cmd_infer(const InferArgs& a, std::ostream& out) {
  const EngineConfig cfg = config_for_checkpoint(a.ckpt, a.config);
  Model model(cfg.model);
  ParamStore store = load_weights(model, cfg, a.ckpt);
  const Palette palette = a.palette.empty() ? default_palette(cfg.model.num_classes) : read_palette(a.palette);
  fs::create_directories(a.out_dir);
  for (const auto& path : a.images) {
    const Tensor image = read_ppm(path);
    const Shape& s = image.shape();
    if (!a.pad && (s.h % 32 != 0 || s.w % 32 != 0))
      fail(ErrorKind::kData, "'" + path + "' is " + std::to_string(s.w) + "x" + std::to_string(s.h) +
                                 ", not a multiple of 32; rerun with --pad to reflect-pad and crop back");
    const auto t0 = std::chrono::steady_clock::now();
    const Tensor x = pad_reflect(normalize_image(image, cfg.augment.mean));
    const Tensor& logits = model.infer(store, x);
    const LabelMap pred = crop(predict_full_res(logits, x.shape().h, x.shape().w), s.h, s.w);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    const std::string stem = fs::path(path).stem().string();
    const std::string label_path = (fs::path(a.out_dir) / (stem + ".pgm")).string();
    write_pgm(pred, label_path);
    out << path << " -> " << label_path;
    if (!a.no_color) {
      const std::string color_path = (fs::path(a.out_dir) / (stem + ".color.ppm")).string();
      write_color_mask(pred, palette, color_path);
      out << ", " << color_path;
    }
    out << " (" << ms << " ms)\n";
  }
  return kExitOk;
}

struct BenchArgs {
  std::string config;
  std::string ckpt;
  std::string out_file;
  bool e2e = false;
};

int cmd_bench(const BenchArgs& a, std::ostream& out) {
  EngineConfig cfg = load_config(a.config);
  if (a.e2e) cfg.bench.end_to_end = true;
  BenchReport report;
  if (!a.ckpt.empty()) {
    Model model(cfg.model);
    const ParamStore store = load_weights(model, cfg, a.ckpt);
    report = run_bench(cfg, &store);
  } else {
    report = run_bench(cfg);
  }
  const std::string json = report.to_json();
  if (a.out_file.empty()) {
    out << json << "\n";
  } else {
    std::ofstream f(a.out_file);
    if (!f) fail(ErrorKind::kIo, "cannot write '" + a.out_file + "'");
    f << json << "\n";
    out << "wrote " << a.out_file << "\n";
  }
  return kExitOk;
}

struct AnalyzeArgs {
  std::string config;
  std::string res = "640x360";
  std::string json_out;
  bool conv_only = false;
  bool backbone = false;
};

int cmd_analyze(const AnalyzeArgs& a, std::ostream& out) {
  const EngineConfig cfg = load_config(a.config);
  const Resolution nominal = parse_resolution(a.res);
  const Resolution pad = padded(nominal, 32);
  const Graph graph = a.backbone ? backbone_graph(cfg.model.backbone) : build_bisenet(cfg.model);
  CostReport report =
      count_model(graph, Shape{1, cfg.model.backbone.input_channels, pad.height, pad.width},
                  a.conv_only ? CountConvention::kConvOnly : CountConvention::kAll);
  if (!(pad == nominal))
    report.note = "input " + std::to_string(nominal.width) + "x" + std::to_string(nominal.height) + " padded to " +
                  std::to_string(pad.width) + "x" + std::to_string(pad.height);
  const std::string json = report.to_json();
  if (a.json_out == "-") {
    out << json << "\n";
    return kExitOk;
  }
  out << report.to_text(a.backbone ? "Backbone" : "BiSeNet", "Xception39");
  if (!a.json_out.empty()) {
    std::ofstream f(a.json_out);
    if (!f) fail(ErrorKind::kIo, "cannot write '" + a.json_out + "'");
    f << json << "\n";
  }
  return kExitOk;
}

struct SynthArgs {
  std::string out_dir;
  std::int64_t count = 8;
  std::string size = "64x64";
  std::int64_t classes = 3;
  std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  const Resolution r = parse_resolution(a.size);
  if (a.count < 1) fail(ErrorKind::kConfig, "--count must be >= 1");
  if (a.classes < 2) fail(ErrorKind::kConfig, "--classes must be >= 2");
  const auto samples = synth_shapes(a.count, r.height, r.width, a.classes, a.seed);
  fs::create_directories(a.out_dir);
  std::vector<std::pair<std::string, std::string>> entries;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "%04zu", i);
    const std::string img = std::string(stem) + ".ppm";
    const std::string lbl = std::string(stem) + ".pgm";
    write_ppm(samples[i].image, (fs::path(a.out_dir) / img).string());
    write_pgm(samples[i].label, (fs::path(a.out_dir) / lbl).string());
    entries.emplace_back(img, lbl);
  }
  const std::string manifest = (fs::path(a.out_dir) / "manifest.txt").string();
  write_manifest(entries, manifest);
  out << "wrote " << samples.size() << " samples; manifest " << manifest << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string ckpt;
  std::string config;
  std::string manifest;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const EngineConfig cfg = config_for_checkpoint(a.ckpt, a.config);
  Model model(cfg.model);
  ParamStore store = load_weights(model, cfg, a.ckpt);
  const auto samples = load_dataset(a.manifest);
  if (samples.empty()) fail(ErrorKind::kData, "manifest '" + a.manifest + "' lists no samples");
  const MiouResult r = evaluate(model, store, samples, cfg.augment.mean);
  for (std::size_t c = 0; c < r.iou.size(); ++c) {
    out << "class " << c << ": ";
    if (r.iou[c]) {
      out << *r.iou[c] << "\n";
    } else {
      out << "absent\n";
    }
  }
  out << "mIoU: ";
  if (r.mean_iou) {
    out << *r.mean_iou << "\n";
  } else {
    out << "undefined\n";
  }
  return kExitOk;
}

}  // namespace

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"BiSeNet segmentation engine"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a config file");
  train_cmd->add_option("--config", train.config, "Config file")->required();
  train_cmd->add_option("--log", train.log, "Loss CSV path (overrides train.log_path)");
  train_cmd->add_option("--ckpt", train.ckpt, "Checkpoint path (overrides train.checkpoint_path)");

  InferArgs infer;
  auto* infer_cmd = app.add_subcommand("infer", "Segment PPM images with a trained checkpoint");
  infer_cmd->add_option("--ckpt", infer.ckpt, "Checkpoint file")->required();
  infer_cmd->add_option("--out", infer.out_dir, "Output directory")->required();
  infer_cmd->add_option("--config", infer.config, "Config file (default: <ckpt>.cfg)");
  infer_cmd->add_option("--palette", infer.palette, "Palette file for colour masks");
  infer_cmd->add_flag("--no-color", infer.no_color, "Only write label maps");
  infer_cmd->add_flag("--pad", infer.pad, "Reflect-pad inputs to multiples of 32 and crop the output back");
  infer_cmd->add_option("images", infer.images, "Input images (binary PPM)")->required();

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench", "Time the forward pass");
  bench_cmd->add_option("--config", bench.config, "Config file")->required();
  bench_cmd->add_option("--ckpt", bench.ckpt, "Checkpoint (default: random weights)");
  bench_cmd->add_flag("--e2e", bench.e2e, "Include x8 upsampling and argmax in the timed region");
  bench_cmd->add_option("--out", bench.out_file, "Write the JSON report here instead of stdout");

  AnalyzeArgs analyze;
  auto* analyze_cmd = app.add_subcommand("analyze", "Count parameters, MACs and FLOPs");
  analyze_cmd->add_option("--config", analyze.config, "Config file")->required();
  analyze_cmd->add_option("--res", analyze.res, "Input WIDTHxHEIGHT (padded to multiples of 32)");
  analyze_cmd->add_option("--json", analyze.json_out, "Also write the JSON report to this file ('-': JSON on stdout only)");
  analyze_cmd->add_flag("--conv-only", analyze.conv_only, "Count convolutions only");
  analyze_cmd->add_flag("--backbone", analyze.backbone, "Analyse the backbone alone");

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic shapes dataset with a manifest");
  synth_cmd->add_option("--out", synth.out_dir, "Output directory")->required();
  synth_cmd->add_option("--count", synth.count, "Number of samples");
  synth_cmd->add_option("--size", synth.size, "WIDTHxHEIGHT");
  synth_cmd->add_option("--classes", synth.classes, "Classes including background");
  synth_cmd->add_option("--seed", synth.seed, "Seed");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "mIoU of a checkpoint over a manifest");
  eval_cmd->add_option("--ckpt", eval.ckpt, "Checkpoint file")->required();
  eval_cmd->add_option("--config", eval.config, "Config file (default: <ckpt>.cfg)");
  eval_cmd->add_option("--manifest", eval.manifest, "Dataset manifest")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (*train_cmd) return cmd_train(train, out);
    if (*infer_cmd) return cmd_infer(infer, out);
    if (*bench_cmd) return cmd_bench(bench, out);
    if (*analyze_cmd) return cmd_analyze(analyze, out);
    if (*synth_cmd) return cmd_synth(synth, out);
    if (*eval_cmd) return cmd_eval(eval, out);
  } catch (const Error& e) {
    err << error_line(e) << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    err << "error: internal: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<std::string> storage{"bisenet"};
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : storage) argv.push_back(s.data());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace bisenet::cli
