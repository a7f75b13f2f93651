// voxseg: one multiplexed binary driving phantom generation, SR and
// segmentation training, inference, evaluation and reporting.
//
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
// failure (non-finite loss).

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "voxseg/checkpoint.hpp"
#include "voxseg/config_json.hpp"
#include "voxseg/infer.hpp"
#include "voxseg/metrics.hpp"
#include "voxseg/nifti.hpp"
#include "voxseg/overlay.hpp"
#include "voxseg/train.hpp"

namespace fs = std::filesystem;
using namespace voxseg;

namespace {

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool force = false;
  int workers = 1;
  bool deterministic = false;
};

void add_common(CLI::App* cmd, CommonOpts& o, bool need_out = true) {
  cmd->add_option("--config", o.config_path, "JSON run configuration");
  cmd->add_option("--seed", o.seed, "override the configured seed")
      ->each([&o](const std::string&) { o.seed_set = true; });
  auto* out = cmd->add_option("--out", o.out_dir, "output directory");
  if (need_out) out->required();
  cmd->add_flag("--force", o.force, "allow writing into a non-empty output directory");
  cmd->add_option("--workers", o.workers, "worker count (accepted for compatibility; work is serial)")
      ->check(CLI::PositiveNumber);
  cmd->add_flag("--deterministic", o.deterministic,
                "deterministic mode (the default; flag kept for interface stability)");
}

json load_config(const CommonOpts& o) {
  if (o.config_path.empty()) return json::object();
  std::ifstream is(o.config_path);
  if (!is) throw ConfigError("cannot open config file: " + o.config_path);
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
}

std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

void ensure_out_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_directory(dir))
    throw DataError("output path exists and is not a directory: " + dir.string());
  if (fs::exists(dir) && !fs::is_empty(dir) && !force)
    throw DataError("output directory is not empty (use --force): " + dir.string());
  fs::create_directories(dir);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
}

void write_run_manifest(const fs::path& dir, const std::string& command, const json& config,
                        std::uint64_t seed, json extra = json::object()) {
  json m{{"command", command},
         {"config_hash", fnv1a_hex(config.dump())},
         {"seed", seed},
         {"format_version", 1}};
  for (auto& [k, v] : extra.items()) m[k] = v;
  write_text(dir / "run_manifest.json", m.dump(2) + "\n");
}

// ---- dataset layout: <dir>/<case>/{t1,t1gd,t2,flair,seg}.nii.gz + manifest

void write_case(const fs::path& dir, const std::string& id, const MultiModalVolume& image,
                const LabelMap& labels) {
  fs::create_directories(dir / id);
  for (int m = 0; m < kNumModalities; ++m)
    save_volume(dir / id / (std::string(kModalityNames[m]) + ".nii.gz"),
                image.channels[static_cast<std::size_t>(m)], image.geometry);
  save_labels(dir / id / "seg.nii.gz", labels.labels, labels.geometry);
}

void write_dataset_manifest(const fs::path& dir, const std::vector<std::string>& ids) {
  json cases = json::array();
  for (const auto& id : ids) {
    json files;
    for (int m = 0; m < kNumModalities; ++m)
      files[kModalityNames[m]] = id + "/" + kModalityNames[m] + ".nii.gz";
    files["seg"] = id + "/seg.nii.gz";
    cases.push_back(json{{"id", id}, {"files", files}});
  }
  write_text(dir / "manifest.json", json{{"cases", cases}}.dump(2) + "\n");
}

std::vector<std::string> list_case_ids(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a dataset directory: " + dir.string());
  std::vector<std::string> ids;
  if (fs::exists(dir / "manifest.json")) {
    std::ifstream is(dir / "manifest.json");
    json m;
    try {
      is >> m;
    } catch (const json::parse_error& e) {
      throw DataError("bad dataset manifest in " + dir.string() + ": " + e.what());
    }
    for (const auto& c : m.value("cases", json::array()))
      ids.push_back(c.at("id").get<std::string>());
    return ids;
  }
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_directory() && fs::exists(entry.path() / "t1.nii.gz"))
      ids.push_back(entry.path().filename().string());
  std::sort(ids.begin(), ids.end());
  return ids;
}

TrainCase load_case(const fs::path& dir, const std::string& id, bool require_seg) {
  TrainCase c;
  c.id = id;
  for (int m = 0; m < kNumModalities; ++m) {
    auto [vol, geom] =
        load_volume(dir / id / (std::string(kModalityNames[m]) + ".nii.gz"));
    if (m == 0)
      c.image.geometry = geom;
    else if (!(geom == c.image.geometry))
      throw DataError("geometry mismatch across files of case " + id);
    c.image.channels[static_cast<std::size_t>(m)] = std::move(vol);
  }
  fs::path seg = dir / id / "seg.nii.gz";
  if (fs::exists(seg)) {
    auto [labels, geom] = load_labels(seg);
    if (!(geom == c.image.geometry)) throw DataError("geometry mismatch across files of case " + id);
    c.labels.labels = std::move(labels);
    c.labels.geometry = geom;
  } else if (require_seg) {
    throw DataError("case " + id + " has no seg.nii.gz");
  } else {
    c.labels.geometry = c.image.geometry;
    c.labels.labels = TensorU8({c.image.geometry.shape[0], c.image.geometry.shape[1],
                                c.image.geometry.shape[2]});
  }
  return c;
}

Dataset load_dataset(const fs::path& dir, bool require_seg = true) {
  Dataset ds;
  for (const auto& id : list_case_ids(dir)) ds.push_back(load_case(dir, id, require_seg));
  return ds;
}

// ---- extra config sections not covered by config_json.hpp

OptimizerConfig optimizer_from_json(const json& j, const std::string& ctx) {
  check_keys(j, {"lr0", "momentum", "nesterov", "poly_power", "total_steps", "weight_decay"}, ctx);
  OptimizerConfig c;
  c.lr0 = j.value("lr0", c.lr0);
  c.momentum = j.value("momentum", c.momentum);
  c.nesterov = j.value("nesterov", c.nesterov);
  c.poly_power = j.value("poly_power", c.poly_power);
  c.total_steps = j.value("total_steps", c.total_steps);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.validate();
  return c;
}

AugmentationConfig augmentation_from_json(const json& j, const std::string& ctx) {
  check_keys(j,
             {"enabled", "p_rotation", "max_rotation_deg", "p_scale", "scale_range", "p_elastic",
              "elastic_alpha", "elastic_sigma", "p_brightness", "brightness_add", "brightness_mul",
              "p_gamma", "gamma_range"},
             ctx);
  if (!j.value("enabled", true)) return AugmentationConfig::disabled();
  AugmentationConfig c;
  c.p_rotation = j.value("p_rotation", c.p_rotation);
  c.max_rotation_deg = j.value("max_rotation_deg", c.max_rotation_deg);
  c.p_scale = j.value("p_scale", c.p_scale);
  if (j.contains("scale_range")) c.scale_range = to_array<double, 2>(j["scale_range"], ctx);
  c.p_elastic = j.value("p_elastic", c.p_elastic);
  c.elastic_alpha = j.value("elastic_alpha", c.elastic_alpha);
  c.elastic_sigma = j.value("elastic_sigma", c.elastic_sigma);
  c.p_brightness = j.value("p_brightness", c.p_brightness);
  if (j.contains("brightness_add")) c.brightness_add = to_array<double, 2>(j["brightness_add"], ctx);
  if (j.contains("brightness_mul")) c.brightness_mul = to_array<double, 2>(j["brightness_mul"], ctx);
  c.p_gamma = j.value("p_gamma", c.p_gamma);
  if (j.contains("gamma_range")) c.gamma_range = to_array<double, 2>(j["gamma_range"], ctx);
  c.validate();
  return c;
}

nn::DiceLossConfig loss_from_json(const json& j, const std::string& ctx) {
  check_keys(j, {"mode", "smooth", "ds_weights"}, ctx);
  nn::DiceLossConfig c;
  if (j.contains("mode")) {
    std::string m = j["mode"].get<std::string>();
    if (m == "batch")
      c.mode = nn::DiceMode::kBatch;
    else if (m == "sample")
      c.mode = nn::DiceMode::kSample;
    else
      throw ConfigError(ctx + ": mode must be 'batch' or 'sample'");
  }
  c.smooth = j.value("smooth", c.smooth);
  if (j.contains("ds_weights")) c.ds_weights = j["ds_weights"].get<std::vector<double>>();
  return c;
}

InferenceConfig inference_from_json(const json& j, const std::string& ctx) {
  check_keys(j, {"overlap", "weighting", "gaussian_sigma_frac", "threshold", "ensemble_weights"},
             ctx);
  InferenceConfig c;
  c.overlap = j.value("overlap", c.overlap);
  if (j.contains("weighting")) {
    std::string w = j["weighting"].get<std::string>();
    if (w == "uniform")
      c.weighting = WindowWeighting::kUniform;
    else if (w == "gaussian")
      c.weighting = WindowWeighting::kGaussian;
    else
      throw ConfigError(ctx + ": weighting must be 'uniform' or 'gaussian'");
  }
  c.gaussian_sigma_frac = j.value("gaussian_sigma_frac", c.gaussian_sigma_frac);
  c.threshold = j.value("threshold", c.threshold);
  if (j.contains("ensemble_weights"))
    c.ensemble_weights = j["ensemble_weights"].get<std::vector<double>>();
  c.validate();
  return c;
}

StrategySpec strategy_from_json(const json& j, const std::string& ctx) {
  check_keys(j, {"kind", "pretrain_steps", "target_steps"}, ctx);
  StrategySpec s;
  std::string kind = j.value("kind", "S_SSA");
  if (kind == "S_GLI_to_SSA")
    s.kind = StrategyKind::kGliToSsa;
  else if (kind == "S_SSA")
    s.kind = StrategyKind::kSsa;
  else if (kind == "S_srSSA")
    s.kind = StrategyKind::kSrSsa;
  else
    throw ConfigError(ctx + ": kind must be S_GLI_to_SSA, S_SSA or S_srSSA");
  s.pretrain_steps = j.value("pretrain_steps", s.pretrain_steps);
  s.target_steps = j.value("target_steps", s.target_steps);
  if (s.pretrain_steps < 0 || s.target_steps < 0)
    throw ConfigError(ctx + ": step counts must be >= 0");
  return s;
}

// nearest downsample of labels by an integer factor (shape must divide evenly)
LabelMap downsample_labels(const LabelMap& lm, int factor) {
  for (auto s : lm.geometry.shape)
    if (s % factor != 0)
      throw DataError("label volume shape not divisible by downsample factor");
  double f = 1.0 / factor;
  TensorF as_f = lm.labels.cast<float>();
  TensorF res = resample(as_f, {f, f, f}, ResampleMode::kNearest);
  LabelMap out;
  out.labels = TensorU8(res.shape);
  for (std::int64_t i = 0; i < res.size(); ++i)
    out.labels[i] = static_cast<std::uint8_t>(res[i]);
  out.geometry = resampled_geometry(lm.geometry, {f, f, f});
  return out;
}

// ---- subcommands

int cmd_phantom(const CommonOpts& o) {
  json cfg = load_config(o);
  check_keys(cfg, {"phantom", "profile", "count"}, "config");
  PhantomSpec spec = phantom_from_json(cfg.value("phantom", json::object()));
  if (o.seed_set) spec.seed = o.seed;
  int count = cfg.value("count", 0);
  if (count < 0) throw ConfigError("config: count must be >= 0");
  bool has_profile = cfg.contains("profile");
  DomainProfile profile;
  if (has_profile) profile = profile_from_json(cfg["profile"]);

  fs::path out(o.out_dir);
  ensure_out_dir(out, o.force);

  std::vector<std::string> ids;
  for (int i = 0; i < count; ++i) {
    std::ostringstream id;
    id << "case_" << std::setw(3) << std::setfill('0') << i;
    PhantomCase pc = generate_case(spec, static_cast<std::uint64_t>(i));
    MultiModalVolume image = std::move(pc.image);
    LabelMap labels = std::move(pc.labels);
    if (has_profile) {
      image = degrade(image, profile, spec.seed + static_cast<std::uint64_t>(i));
      if (profile.downsample_factor > 1)
        labels = downsample_labels(labels, profile.downsample_factor);
    }
    write_case(out, id.str(), image, labels);
    ids.push_back(id.str());
  }
  write_dataset_manifest(out, ids);
  write_run_manifest(out, "phantom", cfg, spec.seed, json{{"count", count}});
  std::cout << "wrote " << count << " cases to " << out.string() << "\n";
  return 0;
}

int cmd_sr_train(const CommonOpts& o) {
  json cfg = load_config(o);
  check_keys(cfg, {"srnet", "optimizer", "epochs", "hr_data"}, "config");
  SRNetConfig net_cfg = srnet_from_json(cfg.value("srnet", json::object()));
  OptimizerConfig opt = optimizer_from_json(cfg.value("optimizer", json::object()), "optimizer");
  int epochs = cfg.value("epochs", 1);
  if (epochs < 0) throw ConfigError("config: epochs must be >= 0");
  if (!cfg.contains("hr_data")) throw ConfigError("config: sr-train requires hr_data");
  std::uint64_t seed = o.seed_set ? o.seed : 0;

  Dataset hr = load_dataset(cfg["hr_data"].get<std::string>(), /*require_seg=*/false);
  if (hr.empty()) throw DataError("hr_data contains 0 cases");

  // LR side is synthesized by 2x block averaging of each modality
  DomainProfile down;
  down.downsample_factor = 2;
  std::vector<SrPair> pairs;
  for (const auto& c : hr) {
    for (auto s : c.image.geometry.shape)
      if (s % 2 != 0) throw DataError("case " + c.id + ": shape must be even for 2x SR pairs");
    for (int m = 0; m < kNumModalities; ++m) {
      CounterRng rng(seed, 0xd0 + static_cast<std::uint64_t>(m));
      SrPair p;
      p.hr = c.image.channels[static_cast<std::size_t>(m)];
      p.lr = degrade_channel(p.hr, down, rng);
      pairs.push_back(std::move(p));
    }
  }

  fs::path out(o.out_dir);
  ensure_out_dir(out, o.force);
  SRNet<float> model(net_cfg, seed);
  TrainingLog log = sr_train(model, pairs, opt, epochs, seed);
  Checkpoint ck = checkpoint_from_sr(model);
  ck.step = log.steps.size();
  ck.log_digest = log.digest();
  save_checkpoint(out / "sr.ckpt", ck);
  write_text(out / "sr_train_log.csv", log.to_csv());
  write_run_manifest(out, "sr-train", cfg, seed,
                     json{{"pairs", pairs.size()}, {"epochs", epochs},
                          {"artifacts", json::array({"sr.ckpt", "sr_train_log.csv"})}});
  std::cout << "trained SR model on " << pairs.size() << " pairs, checkpoint at "
            << (out / "sr.ckpt").string() << "\n";
  return 0;
}

int cmd_superres(const CommonOpts& o) {
  json cfg = load_config(o);
  check_keys(cfg, {"sr_checkpoint", "input"}, "config");
  if (!cfg.contains("sr_checkpoint")) throw ConfigError("config: superres requires sr_checkpoint");
  if (!cfg.contains("input")) throw ConfigError("config: superres requires input");
  SRNet<float> model = sr_from_checkpoint(load_checkpoint(cfg["sr_checkpoint"].get<std::string>()));
  fs::path in(cfg["input"].get<std::string>());
  fs::path out(o.out_dir);
  ensure_out_dir(out, o.force);

  auto ids = list_case_ids(in);
  for (const auto& id : ids) {
    TrainCase c = load_case(in, id, /*require_seg=*/true);
    SrCase e = sr_enhance_case(model, c.image, c.labels);
    write_case(out, id, e.image, e.labels);
  }
  write_dataset_manifest(out, ids);
  write_run_manifest(out, "superres", cfg, o.seed,
                     json{{"cases", ids.size()}, {"scale_factor", 2},
                          {"geometry", "shape doubled, spacing halved"}});
  std::cout << "enhanced " << ids.size() << " cases\n";
  return 0;
}

int cmd_train(const CommonOpts& o) {
  json cfg = load_config(o);
  check_keys(cfg,
             {"strategy", "baseline", "expanded", "optimizer", "pretrain_optimizer",
              "augmentation", "loss", "batch_size", "foreground_bias", "pretrain_data",
              "target_data", "sr_checkpoint"},
             "config");
  StrategySpec spec = strategy_from_json(cfg.value("strategy", json::object()), "strategy");
  SegNetConfig base = cfg.contains("baseline") ? segnet_from_json(cfg["baseline"], "baseline")
                                               : baseline_config();
  SegNetConfig expanded = cfg.contains("expanded") ? segnet_from_json(cfg["expanded"], "expanded")
                                                   : expanded_config();
  spec.target_opt = optimizer_from_json(cfg.value("optimizer", json::object()), "optimizer");
  spec.pretrain_opt = cfg.contains("pretrain_optimizer")
                          ? optimizer_from_json(cfg["pretrain_optimizer"], "pretrain_optimizer")
                          : spec.target_opt;
  AugmentationConfig aug =
      augmentation_from_json(cfg.value("augmentation", json::object()), "augmentation");
  nn::DiceLossConfig loss = loss_from_json(cfg.value("loss", json::object()), "loss");
  TrainOptions topts;
  topts.batch_size = cfg.value("batch_size", topts.batch_size);
  topts.foreground_bias = cfg.value("foreground_bias", topts.foreground_bias);
  if (topts.batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
  std::uint64_t seed = o.seed_set ? o.seed : 0;

  if (!cfg.contains("target_data")) throw ConfigError("config: train requires target_data");
  if (spec.kind == StrategyKind::kGliToSsa && !cfg.contains("pretrain_data"))
    throw ConfigError("config: strategy S_GLI_to_SSA requires pretrain_data");
  if (spec.kind == StrategyKind::kSrSsa && !cfg.contains("sr_checkpoint"))
    throw ConfigError("config: strategy S_srSSA requires sr_checkpoint");

  Dataset target = load_dataset(cfg["target_data"].get<std::string>());
  if (target.empty()) throw DataError("target_data contains 0 cases");
  Dataset pretrain;
  if (cfg.contains("pretrain_data")) {
    pretrain = load_dataset(cfg["pretrain_data"].get<std::string>());
    if (spec.kind == StrategyKind::kGliToSsa && pretrain.empty())
      throw DataError("pretrain_data contains 0 cases");
  }
  SRNet<float> sr_model;
  bool have_sr = false;
  if (cfg.contains("sr_checkpoint")) {
    sr_model = sr_from_checkpoint(load_checkpoint(cfg["sr_checkpoint"].get<std::string>()));
    have_sr = true;
  }

  fs::path out(o.out_dir);
  ensure_out_dir(out, o.force);

  StrategyResult result = run_strategy(spec, base, expanded, pretrain.empty() ? nullptr : &pretrain,
                                       target, have_sr ? &sr_model : nullptr, loss, aug, seed,
                                       topts);
  save_checkpoint(out / "baseline.ckpt", result.baseline);
  save_checkpoint(out / "expanded.ckpt", result.expanded);
  json logs = json::array();
  for (const auto& [name, log] : result.logs) {
    std::string fname = name + ".log.csv";
    write_text(out / fname, log.to_csv());
    logs.push_back(fname);
  }
  json phases = spec.kind == StrategyKind::kGliToSsa ? json::array({"pretrain", "finetune"})
                                                     : json::array({"train"});
  write_run_manifest(out, "train", cfg, seed,
                     json{{"strategy", strategy_tag(spec.kind)},
                          {"phases", phases},
                          {"artifacts", json::array({"baseline.ckpt", "expanded.ckpt"})},
                          {"logs", logs}});
  std::cout << "strategy " << strategy_tag(spec.kind) << ": wrote baseline.ckpt and expanded.ckpt\n";
  return 0;
}

int cmd_infer(const CommonOpts& o) {
  json cfg = load_config(o);
  check_keys(cfg, {"inference", "checkpoints", "input"}, "config");
  InferenceConfig icfg = inference_from_json(cfg.value("inference", json::object()), "inference");
  if (!cfg.contains("checkpoints") || !cfg["checkpoints"].is_array() || cfg["checkpoints"].empty())
    throw ConfigError("config: infer requires a non-empty checkpoints array");
  if (!cfg.contains("input")) throw ConfigError("config: infer requires input");

  std::vector<SegNet<float>> models;
  for (const auto& p : cfg["checkpoints"])
    models.push_back(seg_from_checkpoint(load_checkpoint(p.get<std::string>())));
  std::vector<const SegNet<float>*> model_ptrs;
  for (const auto& m : models) model_ptrs.push_back(&m);

  fs::path in(cfg["input"].get<std::string>());
  auto ids = list_case_ids(in);
  if (ids.empty()) {
    std::cout << "0 cases in " << in.string() << "\n";
    return 0;
  }
  fs::path out(o.out_dir);
  ensure_out_dir(out, o.force);
  for (const auto& id : ids) {
    TrainCase c = load_case(in, id, /*require_seg=*/false);
    LabelMap pred = predict_case(model_ptrs, c.image, icfg);
    fs::create_directories(out / id);
    save_labels(out / id / "seg.nii.gz", pred.labels, pred.geometry);
  }
  write_dataset_manifest(out, ids);
  write_run_manifest(out, "infer", cfg, o.seed,
                     json{{"cases", ids.size()}, {"models", models.size()}});
  std::cout << "predicted " << ids.size() << " cases with " << models.size() << " model(s)\n";
  return 0;
}

int cmd_eval(const CommonOpts& o, const std::string& pred_dir, const std::string& gt_dir) {
  json cfg = load_config(o);
  check_keys(cfg, {"run_name", "hd95_sentinel"}, "config");
  std::string run_name = cfg.value("run_name", "run");
  Hd95Options hopts;
  if (cfg.contains("hd95_sentinel")) hopts.one_empty_sentinel = cfg["hd95_sentinel"].get<double>();

  fs::path pred(pred_dir), gt(gt_dir);
  auto ids = list_case_ids(gt);
  if (ids.empty()) {
    std::cout << "0 cases in " << gt.string() << "\n";
    return 0;
  }
  std::vector<CaseMetrics> cases;
  for (const auto& id : ids) {
    auto [gl, gg] = load_labels(gt / id / "seg.nii.gz");
    auto [pl, pg] = load_labels(pred / id / "seg.nii.gz");
    LabelMap gtm{std::move(gl), gg}, prm{std::move(pl), pg};
    cases.push_back(evaluate_case(id, prm, gtm, hopts));
  }
  auto report = aggregate_report(cases);
  std::string csv = metrics_csv(cases);
  std::string table = report_table({{run_name, report}});
  std::cout << table;
  if (!o.out_dir.empty()) {
    fs::path out(o.out_dir);
    ensure_out_dir(out, o.force);
    write_text(out / "metrics.csv", csv);
    write_text(out / "summary.txt", table);
    write_run_manifest(out, "eval", cfg, o.seed, json{{"cases", ids.size()}});
  }
  return 0;
}

std::vector<CaseMetrics> parse_metrics_csv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open metrics csv: " + path.string());
  std::string line;
  if (!std::getline(is, line) ||
      line != "case_id,dice_et,dice_tc,dice_wt,hd95_et,hd95_tc,hd95_wt")
    throw DataError("unrecognized metrics csv header in " + path.string());
  std::vector<CaseMetrics> cases;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    CaseMetrics c;
    std::string field;
    if (!std::getline(ls, c.case_id, ',')) throw DataError("bad metrics row: " + line);
    double vals[6];
    for (double& v : vals) {
      if (!std::getline(ls, field, ',')) throw DataError("bad metrics row: " + line);
      v = std::stod(field);
    }
    c.dice = {vals[0], vals[1], vals[2]};
    c.hd95 = {vals[3], vals[4], vals[5]};
    cases.push_back(std::move(c));
  }
  return cases;
}

int cmd_report(const CommonOpts& o, const std::string& metrics_path) {
  json cfg = load_config(o);
  check_keys(cfg, {"run_name", "data"}, "config");
  std::string run_name = cfg.value("run_name", "run");

  auto cases = parse_metrics_csv(metrics_path);
  if (cases.empty()) throw DataError("metrics csv has no rows");
  auto report = aggregate_report(cases);
  std::string table = report_table({{run_name, report}});
  std::cout << table;

  fs::path out(o.out_dir);
  ensure_out_dir(out, o.force);
  write_text(out / "summary.txt", table);
  std::size_t overlays = 0;
  if (cfg.contains("data")) {
    fs::path data(cfg["data"].get<std::string>());
    for (const auto& c : cases) {
      TrainCase tc = load_case(data, c.case_id, /*require_seg=*/true);
      write_slice_overlays(out, c.case_id, tc.image.channels[kT1], tc.labels);
      overlays += 3;
    }
  }
  write_run_manifest(out, "report", cfg, o.seed,
                     json{{"cases", cases.size()}, {"overlays", overlays}});
  std::cout << "wrote summary and " << overlays << " overlay images\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"volumetric tumor segmentation toolkit"};
  app.require_subcommand(1);

  CommonOpts o_phantom, o_srtrain, o_superres, o_train, o_infer, o_eval, o_report;
  std::string pred_dir, gt_dir, metrics_path;

  auto* c_phantom = app.add_subcommand("phantom", "generate synthetic cases");
  add_common(c_phantom, o_phantom);
  auto* c_srtrain = app.add_subcommand("sr-train", "train the super-resolution model");
  add_common(c_srtrain, o_srtrain);
  auto* c_superres = app.add_subcommand("superres", "apply 2x SR enhancement to a dataset");
  add_common(c_superres, o_superres);
  auto* c_train = app.add_subcommand("train", "train segmentation models under a strategy");
  add_common(c_train, o_train);
  auto* c_infer = app.add_subcommand("infer", "predict segmentations for a dataset");
  add_common(c_infer, o_infer);
  auto* c_eval = app.add_subcommand("eval", "compare predictions against ground truth");
  add_common(c_eval, o_eval, /*need_out=*/false);
  c_eval->add_option("pred_dir", pred_dir, "directory of predicted segmentations")->required();
  c_eval->add_option("gt_dir", gt_dir, "directory of reference segmentations")->required();
  auto* c_report = app.add_subcommand("report", "summary table and slice overlays from metrics");
  add_common(c_report, o_report);
  c_report->add_option("metrics_csv", metrics_path, "metrics csv from eval")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (c_phantom->parsed()) return cmd_phantom(o_phantom);
    if (c_srtrain->parsed()) return cmd_sr_train(o_srtrain);
    if (c_superres->parsed()) return cmd_superres(o_superres);
    if (c_train->parsed()) return cmd_train(o_train);
    if (c_infer->parsed()) return cmd_infer(o_infer);
    if (c_eval->parsed()) return cmd_eval(o_eval, pred_dir, gt_dir);
    if (c_report->parsed()) return cmd_report(o_report, metrics_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
