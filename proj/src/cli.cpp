#include "vesselseg/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <unordered_map>

#include "vesselseg/checkpoint.hpp"
#include "vesselseg/config.hpp"
#include "vesselseg/dataio.hpp"
#include "vesselseg/errors.hpp"
#include "vesselseg/eval.hpp"
#include "vesselseg/image_io.hpp"
#include "vesselseg/inference.hpp"
#include "vesselseg/parallel.hpp"
#include "vesselseg/train.hpp"
#include "vesselseg/vmetrics.hpp"

namespace fs = std::filesystem;

namespace vesselseg {

namespace {

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
};

struct TrainOptions {
  std::string manifest;
  std::string output_dir;
};

struct EvalOptions {
  std::string model;
  std::string manifest;
  std::string split;
  std::optional<double> threshold;
  std::string select_on;
  std::string output_dir;
  bool tiled = false;
};

struct SegmentOptions {
  std::string model;
  std::string input;
  std::string output;
  std::string mask_output;
  std::optional<double> threshold;
  bool tiled = false;
};

struct MetricsOptions {
  std::string mask;
  std::string roi;
  std::string id;
  bool multi_offset = false;
  bool header = false;
};

void add_common(CLI::App* app, CommonOptions& common) {
  app->add_option("--config", common.config_path, "key = value configuration file");
  app->add_option("--set", common.overrides, "override one key, e.g. --set train.total_epochs=200")
      ->type_name("KEY=VALUE")
      ->allow_extra_args(false);
}

RunConfig build_config(const std::string& subcommand, const CommonOptions& common) {
  RunConfig config;
  config.subcommand = subcommand;
  if (!common.config_path.empty()) config.load_file(common.config_path);
  for (const auto& assignment : common.overrides) config.apply_override(assignment);
  return config;
}

std::vector<LabeledImage> select_ids(const std::vector<LabeledImage>& data, const std::vector<std::string>& ids) {
  std::unordered_map<std::string, const LabeledImage*> by_id;
  for (const auto& item : data) by_id[item.image.id] = &item;
  std::vector<LabeledImage> out;
  for (const auto& id : ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw ConfigError("split names image '" + id + "' which is not in the manifest");
    out.push_back(*it->second);
  }
  return out;
}

int run_train(const CommonOptions& common, const TrainOptions& options, std::ostream& out, std::ostream& err) {
  RunConfig config = build_config("train", common);
  if (!options.manifest.empty()) config.set("data.manifest", options.manifest, ConfigSource::flag);
  if (!options.output_dir.empty()) config.set("output.dir", options.output_dir, ConfigSource::flag);
  config.resolve_seeds();
  for (const char* key : {"seed.split", "seed.init", "seed.sampling"}) {
    if (config.source(key) == ConfigSource::generated) err << "generated " << key << " = " << config.get(key) << "\n";
  }

  TrainConfig train = train_config_from(config);
  const SplitCounts counts = parse_split_counts(config.get("split.counts"));
  if (!config.has("data.manifest")) throw ConfigError("data.manifest is not set (use --manifest or the config file)");

  const auto data = load_dataset(read_manifest(config.get("data.manifest")));
  std::vector<std::string> ids;
  for (const auto& item : data) ids.push_back(item.image.id);
  const DatasetSplit split = config.has("split.file") ? read_split(config.get("split.file"))
                                                      : make_split(ids, counts, train.split_seed);

  const fs::path out_dir = config.get("output.dir");
  fs::create_directories(out_dir);
  train.checkpoint_dir = out_dir / "checkpoints";
  write_split(out_dir / "split.txt", split);
  write_run_manifest(out_dir / "run.cfg", config);

  TrainHooks hooks;
  hooks.log = [&err](const std::string& line) { err << line << "\n"; };
  TrainResult result = run_training(train, split, data, hooks);

  write_history_csv(out_dir / "history.csv", result.history);
  const int epochs_done = result.history.epochs.empty() ? 0 : result.history.epochs.back().epoch;
  save_checkpoint(result.model, training_metadata(train, epochs_done), out_dir / "model.ckpt");
  out << "wrote " << (out_dir / "model.ckpt").string() << "\n";
  return 0;
}

int run_eval(const CommonOptions& common, const EvalOptions& options, std::ostream& out, std::ostream&) {
  RunConfig config = build_config("eval", common);
  if (!options.select_on.empty()) config.set("eval.select_on", options.select_on, ConfigSource::flag);
  if (!options.output_dir.empty()) config.set("output.dir", options.output_dir, ConfigSource::flag);
  const std::string select_on = config.get("eval.select_on");
  if (select_on != "val" && select_on != "test") throw ConfigError("--select-on must be 'val' or 'test'");
  const TilingPolicy policy = tiling_policy_from(config);

  const Model model = load_checkpoint(options.model);
  policy.validate(model.config().size_divisor());
  const auto data = load_dataset(read_manifest(options.manifest));
  const TilingPolicy* tiling = options.tiled ? &policy : nullptr;

  EvalReport report;
  if (options.split.empty()) {
    // No split: report on every manifest image, selecting the threshold there too.
    report = evaluate(model, data, options.threshold, tiling);
  } else {
    const DatasetSplit split = read_split(options.split);
    const auto test = select_ids(data, split.test_ids);
    if (test.empty()) throw ConfigError("split has no test images");
    if (options.threshold || select_on == "test") {
      report = evaluate(model, test, options.threshold, tiling);
    } else {
      const auto val = select_ids(data, split.val_ids);
      if (val.empty()) throw ConfigError("split has no validation images to select a threshold on");
      report = evaluate_with_selection(model, test, val, tiling);
    }
  }

  const fs::path out_dir = config.get("output.dir");
  fs::create_directories(out_dir);
  write_report_text(out_dir / "report.txt", report);
  write_report_csv(out_dir / "report.csv", report);
  write_curve_csv(out_dir / "roc.csv", report.roc, "fpr,tpr");
  write_curve_csv(out_dir / "pr.csv", report.pr, "recall,precision");
  out << std::setprecision(6) << "auc=" << report.auc << " auprc=" << report.auprc << " f1=" << report.f1
      << " threshold=" << report.threshold << "\n";
  return 0;
}

fs::path default_mask_path(const fs::path& output) {
  fs::path p = output;
  p.replace_filename(output.stem().string() + "_mask" + output.extension().string());
  return p;
}

int run_segment(const CommonOptions& common, const SegmentOptions& options, std::ostream& out, std::ostream&) {
  RunConfig config = build_config("segment", common);
  if (options.threshold) {
    std::ostringstream t;
    t << std::setprecision(17) << *options.threshold;
    config.set("inference.threshold", t.str(), ConfigSource::flag);
  }
  const double threshold = config.get_double("inference.threshold");
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("threshold must lie in [0, 1]");
  const TilingPolicy policy = tiling_policy_from(config);

  CheckpointMetadata metadata;
  const Model model = load_checkpoint(options.model, &metadata);
  policy.validate(model.config().size_divisor());
  const SLOImage image = load_image(options.input);

  double forward_seconds = 0.0;
  bool used_tiling = false;
  const auto start = std::chrono::steady_clock::now();
  const ProbabilityMap map = segment(model, image, options.tiled, policy, &forward_seconds, &used_tiling);
  const double total_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  Grid<std::uint16_t> encoded(map.values.width(), map.values.height());
  for (std::size_t i = 0; i < encoded.values().size(); ++i) {
    encoded.values()[i] = static_cast<std::uint16_t>(std::lround(map.values.values()[i] * 65535.0));
  }
  const fs::path output = options.output;
  write_png16(output, encoded);

  const VesselMask mask = binarize(map, threshold);
  Grid<std::uint8_t> mask_png(mask.labels.width(), mask.labels.height());
  for (std::size_t i = 0; i < mask_png.values().size(); ++i) mask_png.values()[i] = mask.labels.values()[i] ? 255 : 0;
  const fs::path mask_path = options.mask_output.empty() ? default_mask_path(output) : fs::path(options.mask_output);
  write_png8(mask_path, mask_png);

  const fs::path meta_path = output.string() + ".meta.txt";
  std::ofstream meta(meta_path);
  if (!meta) throw IoError("cannot write '" + meta_path.string() + "'");
  meta << std::setprecision(9) << "source_id = " << map.source_id << "\n"
       << "checkpoint_id = " << map.checkpoint_id << "\n"
       << "threshold = " << threshold << "\n"
       << "width = " << map.values.width() << "\n"
       << "height = " << map.values.height() << "\n"
       << "tiled = " << (used_tiling ? "true" : "false") << "\n"
       << "forward_seconds = " << forward_seconds << "\n"
       << "total_seconds = " << total_seconds << "\n"
       << "threads = " << worker_count() << "\n"
       << "version = " << VESSELSEG_VERSION << "\n";
  out << "wrote " << output.string() << " and " << mask_path.string() << "\n";
  return 0;
}

int run_metrics(const MetricsOptions& options, std::ostream& out) {
  const VesselMask mask = load_mask(options.mask);
  std::optional<VesselMask> roi;
  if (!options.roi.empty()) roi = load_mask(options.roi);
  const double density = vessel_density(mask, roi ? &*roi : nullptr);
  const FractalFit fit = fractal_dimension(mask, std::nullopt, options.multi_offset);
  const std::string id = options.id.empty() ? fs::path(options.mask).stem().string() : options.id;
  if (options.header) out << "id,vessel_density,fractal_dimension,fit_residual\n";
  out << std::setprecision(9) << id << "," << density << "," << fit.dimension << "," << fit.residual << "\n";
  return 0;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"IR-SLO retinal vessel segmentation toolkit", "vesselseg"};
  app.set_version_flag("--version", VESSELSEG_VERSION);
  app.require_subcommand(1);

  CommonOptions common;
  TrainOptions train_opts;
  EvalOptions eval_opts;
  SegmentOptions segment_opts;
  MetricsOptions metrics_opts;

  auto* train = app.add_subcommand("train", "train a U-Net from a manifest and configuration");
  add_common(train, common);
  train->add_option("--manifest", train_opts.manifest, "image/mask manifest (overrides data.manifest)");
  train->add_option("--output-dir", train_opts.output_dir, "output directory (overrides output.dir)");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on labelled images");
  add_common(eval, common);
  eval->add_option("--model", eval_opts.model, "checkpoint file")->required();
  eval->add_option("--manifest", eval_opts.manifest, "image/mask manifest")->required();
  eval->add_option("--split", eval_opts.split, "split file; reports on its test images");
  auto* threshold_opt = eval->add_option("--threshold", eval_opts.threshold, "fixed threshold")->check(CLI::Range(0.0, 1.0));
  eval->add_option("--select-on", eval_opts.select_on, "set used to choose the F1-optimal threshold")
      ->check(CLI::IsMember({"val", "test"}))
      ->excludes(threshold_opt);
  eval->add_option("--output-dir", eval_opts.output_dir, "where report and curves are written");
  eval->add_flag("--tiled", eval_opts.tiled, "use tiled inference");

  auto* seg = app.add_subcommand("segment", "segment one image");
  add_common(seg, common);
  seg->add_option("--model", segment_opts.model, "checkpoint file")->required();
  seg->add_option("--input", segment_opts.input, "input image")->required();
  seg->add_option("--output", segment_opts.output, "16-bit probability map (PNG)")->required();
  seg->add_option("--mask-output", segment_opts.mask_output, "binary mask path (default <output>_mask.png)");
  seg->add_option("--threshold", segment_opts.threshold, "binarisation threshold (default 0.45)")
      ->check(CLI::Range(0.0, 1.0));
  seg->add_flag("--tiled", segment_opts.tiled, "use tiled inference");

  auto* metrics = app.add_subcommand("metrics", "vessel density and fractal dimension of a binary mask");
  metrics->add_option("--mask", metrics_opts.mask, "binary mask PNG")->required();
  metrics->add_option("--roi", metrics_opts.roi, "region-of-interest mask");
  metrics->add_option("--id", metrics_opts.id, "id printed in the first column (default: file stem)");
  metrics->add_flag("--multi-offset", metrics_opts.multi_offset, "average box counts over grid offsets");
  metrics->add_flag("--header", metrics_opts.header, "print the CSV header first");

  if (args.empty()) {
    err << app.help();
    return 2;
  }
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);  // --help / --version
  } catch (const CLI::ParseError& e) {
    err << "vesselseg: " << e.what() << "\n" << "run 'vesselseg --help' for usage\n";
    return 2;
  }

  try {
    if (*train) return run_train(common, train_opts, out, err);
    if (*eval) return run_eval(common, eval_opts, out, err);
    if (*seg) return run_segment(common, segment_opts, out, err);
    if (*metrics) return run_metrics(metrics_opts, out);
  } catch (const std::exception& e) {
    std::string message = e.what();
    for (auto& c : message) {
      if (c == '\n') c = ' ';
    }
    err << "vesselseg: error: " << message << "\n";
    return 1;
  }
  return 2;
}

}  // namespace vesselseg
