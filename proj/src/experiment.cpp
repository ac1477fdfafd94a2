#include "sslv/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "sslv/dist.hpp"

namespace fs = std::filesystem;

namespace sslv::cli {

const char* method_name(Method m) {
  switch (m) {
    case Method::supervised: return "supervised";
    case Method::dist: return "dist";
    case Method::semivt: return "semivt";
    case Method::encore: return "encore";
  }
  return "supervised";
}

Method method_from_name(const std::string& name) {
  if (name == "supervised") return Method::supervised;
  if (name == "dist") return Method::dist;
  if (name == "semivt") return Method::semivt;
  if (name == "encore") return Method::encore;
  throw InvalidInput("unknown method '" + name + "'");
}

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw InvalidInput("config: seeds must be nonempty");
  if (output_dir.empty()) throw InvalidInput("config: output_dir must be set");
  if (dataset_kind != "clips" && dataset_kind != "segmentation")
    throw InvalidInput("config: dataset kind must be 'clips' or 'segmentation'");
  if (method == Method::encore && dataset_kind != "segmentation")
    throw InvalidInput("config: encore requires a segmentation dataset");
  if (method != Method::encore && dataset_kind != "clips")
    throw InvalidInput("config: classification methods require a clips dataset");
}

// ---------------------------------------------------------------------------
// TOML-subset parsing
// ---------------------------------------------------------------------------

namespace {

struct TomlValue {
  std::string raw;
  int line = 0;
  mutable bool used = false;
};

using Section = std::map<std::string, TomlValue>;

struct TomlDoc {
  std::map<std::string, Section> sections;

  const TomlValue* find(const std::string& section, const std::string& key) const {
    auto sit = sections.find(section);
    if (sit == sections.end()) return nullptr;
    auto kit = sit->second.find(key);
    if (kit == sit->second.end()) return nullptr;
    kit->second.used = true;
    return &kit->second;
  }

  void check_all_used() const {
    for (const auto& [section, keys] : sections) {
      for (const auto& [key, value] : keys) {
        if (!value.used)
          throw ParseError("unknown key '" +
                               (section.empty() ? key : section + "." + key) + "'",
                           value.line);
      }
    }
  }
};

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  size_t b = s.find_last_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

TomlDoc parse_toml(const std::string& text) {
  TomlDoc doc;
  std::string current;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  doc.sections[""];
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) {
      // allow '#' inside quoted strings
      const auto quote_a = line.find('"');
      if (quote_a == std::string::npos || hash < quote_a) line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ParseError("malformed section header", line_no);
      current = trim(line.substr(1, line.size() - 2));
      if (current.empty()) throw ParseError("empty section name", line_no);
      doc.sections[current];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError("expected 'key = value'", line_no);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError("empty key", line_no);
    if (value.empty()) throw ParseError("empty value for '" + key + "'", line_no);
    if (doc.sections[current].count(key))
      throw ParseError("duplicate key '" + key + "'", line_no);
    doc.sections[current][key] = TomlValue{value, line_no, false};
  }
  return doc;
}

double parse_number(const std::string& raw, int line) {
  try {
    size_t pos = 0;
    const double v = std::stod(raw, &pos);
    if (pos != raw.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ParseError("expected a number, got '" + raw + "'", line);
  }
}

std::vector<double> parse_array(const std::string& raw, int line) {
  if (raw.size() < 2 || raw.front() != '[' || raw.back() != ']')
    throw ParseError("expected an array, got '" + raw + "'", line);
  std::vector<double> out;
  std::string body = raw.substr(1, raw.size() - 2);
  std::istringstream in(body);
  std::string token;
  while (std::getline(in, token, ',')) {
    token = trim(token);
    if (token.empty()) {
      if (out.empty() && in.eof() && trim(body).empty()) break;
      throw ParseError("empty array element", line);
    }
    out.push_back(parse_number(token, line));
  }
  return out;
}

struct Getter {
  const TomlDoc& doc;
  std::string section;

  void fetch(const std::string& key, double& target) const {
    if (const auto* v = doc.find(section, key)) target = parse_number(v->raw, v->line);
  }
  void fetch(const std::string& key, int& target) const {
    if (const auto* v = doc.find(section, key)) {
      const double d = parse_number(v->raw, v->line);
      if (d != std::floor(d))
        throw ParseError("expected an integer for '" + key + "'", v->line);
      target = static_cast<int>(d);
    }
  }
  void fetch(const std::string& key, uint64_t& target) const {
    if (const auto* v = doc.find(section, key)) {
      try {
        size_t pos = 0;
        target = std::stoull(v->raw, &pos);
        if (pos != v->raw.size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ParseError("expected an unsigned integer for '" + key + "'", v->line);
      }
    }
  }
  void fetch(const std::string& key, bool& target) const {
    if (const auto* v = doc.find(section, key)) {
      if (v->raw == "true") target = true;
      else if (v->raw == "false") target = false;
      else throw ParseError("expected true/false for '" + key + "'", v->line);
    }
  }
  void fetch(const std::string& key, std::string& target) const {
    if (const auto* v = doc.find(section, key)) {
      if (v->raw.size() < 2 || v->raw.front() != '"' || v->raw.back() != '"')
        throw ParseError("expected a quoted string for '" + key + "'", v->line);
      target = v->raw.substr(1, v->raw.size() - 2);
    }
  }
  void fetch(const std::string& key, std::vector<double>& target) const {
    if (const auto* v = doc.find(section, key)) target = parse_array(v->raw, v->line);
  }
  void fetch(const std::string& key, std::vector<uint64_t>& target) const {
    if (const auto* v = doc.find(section, key)) {
      const auto values = parse_array(v->raw, v->line);
      target.clear();
      for (double d : values) {
        if (d < 0 || d != std::floor(d))
          throw ParseError("expected unsigned integers in '" + key + "'", v->line);
        target.push_back(static_cast<uint64_t>(d));
      }
    }
  }
};

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
  const TomlDoc doc = parse_toml(text);
  ExperimentConfig cfg;

  Getter top{doc, ""};
  std::string method_str = method_name(cfg.method);
  top.fetch("method", method_str);
  try {
    cfg.method = method_from_name(method_str);
  } catch (const InvalidInput& e) {
    throw ParseError(e.what());
  }
  top.fetch("output_dir", cfg.output_dir);
  top.fetch("seeds", cfg.seeds);

  Getter ds{doc, "dataset"};
  ds.fetch("kind", cfg.dataset_kind);
  ds.fetch("num_classes", cfg.clip_spec.num_classes);
  ds.fetch("clips_per_class", cfg.clip_spec.clips_per_class);
  ds.fetch("frames", cfg.clip_spec.frames);
  ds.fetch("num_images", cfg.seg_spec.num_images);
  int height = 32, width = 32;
  ds.fetch("height", height);
  ds.fetch("width", width);
  cfg.clip_spec.height = height;
  cfg.clip_spec.width = width;
  cfg.seg_spec.height = height;
  cfg.seg_spec.width = width;
  double noise_sigma = cfg.dataset_kind == "segmentation"
                           ? cfg.seg_spec.noise_sigma
                           : cfg.clip_spec.noise_sigma;
  ds.fetch("noise_sigma", noise_sigma);
  cfg.clip_spec.noise_sigma = noise_sigma;
  cfg.seg_spec.noise_sigma = noise_sigma;
  uint64_t data_seed = cfg.clip_spec.seed;
  ds.fetch("seed", data_seed);
  cfg.clip_spec.seed = data_seed;
  cfg.seg_spec.seed = data_seed;

  Getter sp{doc, "split"};
  sp.fetch("labeled_fraction", cfg.split.labeled_fraction);
  sp.fetch("val_fraction", cfg.split.val_fraction);
  sp.fetch("test_fraction", cfg.split.test_fraction);
  sp.fetch("seed", cfg.split.seed);

  Getter md{doc, "model"};
  std::string head = models::head_name(cfg.model.head);
  md.fetch("head", head);
  try {
    cfg.model.head = models::head_from_name(head);
  } catch (const InvalidInput& e) {
    throw ParseError(e.what());
  }
  md.fetch("embed_dim", cfg.model.embed_dim);
  md.fetch("conv1_channels", cfg.model.conv1_channels);
  md.fetch("conv2_channels", cfg.model.conv2_channels);
  md.fetch("frames_per_view", cfg.model.frames_per_view);
  md.fetch("attention_heads", cfg.model.attention_heads);

  Getter tr{doc, "train"};
  tr.fetch("epochs", cfg.train.epochs);
  tr.fetch("lr", cfg.train.lr);
  tr.fetch("momentum", cfg.train.momentum);
  std::string optimizer = models::optimizer_name(cfg.train.optimizer);
  tr.fetch("optimizer", optimizer);
  try {
    cfg.train.optimizer = models::optimizer_from_name(optimizer);
  } catch (const InvalidInput& e) {
    throw ParseError(e.what());
  }
  tr.fetch("batch_size", cfg.train.batch_size);
  std::string strategy =
      cfg.train.view_strategy == sampling::Strategy::uniform ? "uniform"
                                                             : "segment_random";
  tr.fetch("sampling", strategy);
  if (strategy == "uniform") cfg.train.view_strategy = sampling::Strategy::uniform;
  else if (strategy == "segment_random")
    cfg.train.view_strategy = sampling::Strategy::segment_random;
  else throw ParseError("train.sampling must be 'uniform' or 'segment_random'");

  Getter au{doc, "augment"};
  au.fetch("hflip_prob", cfg.augment.hflip_prob);
  au.fetch("color_jitter", cfg.augment.color_jitter);
  au.fetch("noise_sigma", cfg.augment.noise_sigma);
  au.fetch("crop_min_scale", cfg.augment.crop_min_scale);

  Getter sv{doc, "semivt"};
  sv.fetch("prototype_momentum", cfg.semivt.prototype_momentum);
  sv.fetch("margin", cfg.semivt.margin);
  sv.fetch("tau", cfg.semivt.tau);
  sv.fetch("lambda_clp", cfg.semivt.lambda_clp);
  sv.fetch("lambda_tcr", cfg.semivt.lambda_tcr);
  sv.fetch("teacher_momentum", cfg.semivt.teacher_momentum);
  sv.fetch("short_window", cfg.semivt.short_window);

  Getter en{doc, "encore"};
  en.fetch("epochs", cfg.encore.epochs);
  en.fetch("lr", cfg.encore.lr);
  en.fetch("momentum", cfg.encore.momentum);
  std::string enc_optimizer = models::optimizer_name(cfg.encore.optimizer);
  en.fetch("optimizer", enc_optimizer);
  try {
    cfg.encore.optimizer = models::optimizer_from_name(enc_optimizer);
  } catch (const InvalidInput& e) {
    throw ParseError(e.what());
  }
  en.fetch("batch_size", cfg.encore.batch_size);
  en.fetch("adaptive", cfg.encore.adaptive);
  en.fetch("fixed_threshold", cfg.encore.fixed_threshold);
  en.fetch("recalib_period", cfg.encore.recalib_period);
  en.fetch("percentiles", cfg.encore.percentiles);
  en.fetch("offsets", cfg.encore.offsets);
  en.fetch("fixed_candidates", cfg.encore.fixed_candidates);
  en.fetch("fallback_t0", cfg.encore.fallback_t0);
  en.fetch("initial_threshold", cfg.encore.initial_threshold);
  en.fetch("calib_fraction", cfg.encore.calib_fraction);
  en.fetch("unsup_weight", cfg.encore.unsup_weight);
  en.fetch("dice_loss_weight", cfg.encore.dice_loss_weight);

  doc.check_all_used();
  try {
    cfg.validate();
  } catch (const InvalidInput& e) {
    throw ParseError(e.what());
  }
  return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open config file " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str());
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_array(const std::vector<double>& values) {
  std::string out = "[";
  for (size_t i = 0; i < values.size(); ++i) {
    if (i) out += ", ";
    out += fmt_double(values[i]);
  }
  return out + "]";
}

std::string fmt_seed_array(const std::vector<uint64_t>& values) {
  std::string out = "[";
  for (size_t i = 0; i < values.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(values[i]);
  }
  return out + "]";
}

}  // namespace

std::string resolved_config_text(const ExperimentConfig& cfg) {
  std::ostringstream out;
  out << "method = \"" << method_name(cfg.method) << "\"\n";
  out << "output_dir = \"" << cfg.output_dir << "\"\n";
  out << "seeds = " << fmt_seed_array(cfg.seeds) << "\n";
  out << "\n[dataset]\n";
  out << "kind = \"" << cfg.dataset_kind << "\"\n";
  if (cfg.dataset_kind == "clips") {
    out << "num_classes = " << cfg.clip_spec.num_classes << "\n";
    out << "clips_per_class = " << cfg.clip_spec.clips_per_class << "\n";
    out << "frames = " << cfg.clip_spec.frames << "\n";
    out << "height = " << cfg.clip_spec.height << "\n";
    out << "width = " << cfg.clip_spec.width << "\n";
    out << "noise_sigma = " << fmt_double(cfg.clip_spec.noise_sigma) << "\n";
    out << "seed = " << cfg.clip_spec.seed << "\n";
  } else {
    out << "num_images = " << cfg.seg_spec.num_images << "\n";
    out << "height = " << cfg.seg_spec.height << "\n";
    out << "width = " << cfg.seg_spec.width << "\n";
    out << "noise_sigma = " << fmt_double(cfg.seg_spec.noise_sigma) << "\n";
    out << "seed = " << cfg.seg_spec.seed << "\n";
  }
  out << "\n[split]\n";
  out << "labeled_fraction = " << fmt_double(cfg.split.labeled_fraction) << "\n";
  out << "val_fraction = " << fmt_double(cfg.split.val_fraction) << "\n";
  out << "test_fraction = " << fmt_double(cfg.split.test_fraction) << "\n";
  out << "seed = " << cfg.split.seed << "\n";
  out << "\n[model]\n";
  out << "head = \"" << models::head_name(cfg.model.head) << "\"\n";
  out << "embed_dim = " << cfg.model.embed_dim << "\n";
  out << "conv1_channels = " << cfg.model.conv1_channels << "\n";
  out << "conv2_channels = " << cfg.model.conv2_channels << "\n";
  out << "frames_per_view = " << cfg.model.frames_per_view << "\n";
  out << "attention_heads = " << cfg.model.attention_heads << "\n";
  out << "\n[train]\n";
  out << "epochs = " << cfg.train.epochs << "\n";
  out << "lr = " << fmt_double(cfg.train.lr) << "\n";
  out << "momentum = " << fmt_double(cfg.train.momentum) << "\n";
  out << "optimizer = \"" << models::optimizer_name(cfg.train.optimizer) << "\"\n";
  out << "batch_size = " << cfg.train.batch_size << "\n";
  out << "sampling = \""
      << (cfg.train.view_strategy == sampling::Strategy::uniform
              ? "uniform"
              : "segment_random")
      << "\"\n";
  out << "\n[augment]\n";
  out << "hflip_prob = " << fmt_double(cfg.augment.hflip_prob) << "\n";
  out << "color_jitter = " << fmt_double(cfg.augment.color_jitter) << "\n";
  out << "noise_sigma = " << fmt_double(cfg.augment.noise_sigma) << "\n";
  out << "crop_min_scale = " << fmt_double(cfg.augment.crop_min_scale) << "\n";
  if (cfg.method == Method::semivt) {
    out << "\n[semivt]\n";
    out << "prototype_momentum = " << fmt_double(cfg.semivt.prototype_momentum) << "\n";
    out << "margin = " << fmt_double(cfg.semivt.margin) << "\n";
    out << "tau = " << fmt_double(cfg.semivt.tau) << "\n";
    out << "lambda_clp = " << fmt_double(cfg.semivt.lambda_clp) << "\n";
    out << "lambda_tcr = " << fmt_double(cfg.semivt.lambda_tcr) << "\n";
    out << "teacher_momentum = " << fmt_double(cfg.semivt.teacher_momentum) << "\n";
    out << "short_window = " << cfg.semivt.short_window << "\n";
  }
  if (cfg.method == Method::encore) {
    out << "\n[encore]\n";
    out << "epochs = " << cfg.encore.epochs << "\n";
    out << "lr = " << fmt_double(cfg.encore.lr) << "\n";
    out << "momentum = " << fmt_double(cfg.encore.momentum) << "\n";
    out << "optimizer = \"" << models::optimizer_name(cfg.encore.optimizer)
        << "\"\n";
    out << "batch_size = " << cfg.encore.batch_size << "\n";
    out << "adaptive = " << (cfg.encore.adaptive ? "true" : "false") << "\n";
    out << "fixed_threshold = " << fmt_double(cfg.encore.fixed_threshold) << "\n";
    out << "recalib_period = " << cfg.encore.recalib_period << "\n";
    out << "percentiles = " << fmt_array(cfg.encore.percentiles) << "\n";
    out << "offsets = " << fmt_array(cfg.encore.offsets) << "\n";
    out << "fixed_candidates = " << fmt_array(cfg.encore.fixed_candidates) << "\n";
    out << "fallback_t0 = " << fmt_double(cfg.encore.fallback_t0) << "\n";
    out << "initial_threshold = " << fmt_double(cfg.encore.initial_threshold) << "\n";
    out << "calib_fraction = " << fmt_double(cfg.encore.calib_fraction) << "\n";
    out << "unsup_weight = " << fmt_double(cfg.encore.unsup_weight) << "\n";
    out << "dice_loss_weight = " << fmt_double(cfg.encore.dice_loss_weight) << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Running experiments
// ---------------------------------------------------------------------------

namespace {

std::string fmt_metric(double v) {
  if (!std::isfinite(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string csv_row(const std::string& method, uint64_t seed,
                    const std::string& split, const std::string& stage,
                    double accuracy, double macro_f1, double dice,
                    double pseudo_precision) {
  std::ostringstream out;
  out << method << "," << seed << "," << split << "," << stage << ","
      << fmt_metric(accuracy) << "," << fmt_metric(macro_f1) << ","
      << fmt_metric(dice) << "," << fmt_metric(pseudo_precision);
  return out.str();
}

struct ClipSplits {
  data::ClipDataset dataset;
  data::Manifest manifest;
  std::vector<models::LabeledClip> labeled, val, test;
  std::vector<const core::VideoClip*> unlabeled;
};

ClipSplits build_clip_splits(const ExperimentConfig& cfg) {
  ClipSplits out;
  out.dataset = data::generate_clip_dataset(cfg.clip_spec);
  out.manifest =
      data::split_dataset(out.dataset, cfg.split.labeled_fraction,
                          cfg.split.val_fraction, cfg.split.test_fraction,
                          cfg.split.seed);
  std::map<std::string, const core::VideoClip*> by_id;
  for (const auto& clip : out.dataset.clips) by_id[clip.clip_id] = &clip;
  for (const auto& entry : out.manifest.entries) {
    const auto* clip = by_id.at(entry.clip_id);
    switch (entry.split) {
      case data::Split::labeled:
        out.labeled.push_back({clip, entry.label.value()});
        break;
      case data::Split::val:
        out.val.push_back({clip, entry.label.value()});
        break;
      case data::Split::test:
        out.test.push_back({clip, entry.label.value()});
        break;
      case data::Split::unlabeled:
        out.unlabeled.push_back(clip);  // hidden label stays on the clip
        break;
    }
  }
  if (out.test.empty())
    throw InvalidInput("config: test split is empty; raise test_fraction");
  return out;
}

struct SegSplits {
  data::SegDataset dataset;
  data::Manifest manifest;
  std::vector<const data::SegSample*> labeled, unlabeled, val, test;
};

SegSplits build_seg_splits(const ExperimentConfig& cfg) {
  SegSplits out;
  out.dataset = data::generate_seg_dataset(cfg.seg_spec);
  out.manifest =
      data::split_seg_dataset(out.dataset, cfg.split.labeled_fraction,
                              cfg.split.val_fraction, cfg.split.test_fraction,
                              cfg.split.seed);
  std::map<std::string, const data::SegSample*> by_id;
  for (const auto& sample : out.dataset.samples) by_id[sample.id] = &sample;
  for (const auto& entry : out.manifest.entries) {
    const auto* sample = by_id.at(entry.clip_id);
    switch (entry.split) {
      case data::Split::labeled: out.labeled.push_back(sample); break;
      case data::Split::val: out.val.push_back(sample); break;
      case data::Split::test: out.test.push_back(sample); break;
      case data::Split::unlabeled: out.unlabeled.push_back(sample); break;
    }
  }
  if (out.test.empty())
    throw InvalidInput("config: test split is empty; raise test_fraction");
  return out;
}

nlohmann::json metrics_json(const core::MetricReport& report) {
  return nlohmann::json::parse(report.to_json());
}

SeedOutcome run_seed_clips(const ExperimentConfig& cfg, const ClipSplits& splits,
                           uint64_t seed) {
  SeedOutcome outcome;
  outcome.seed = seed;

  models::ModelConfig mcfg = cfg.model;
  mcfg.num_classes = splits.dataset.label_space.num_classes;
  mcfg.height = cfg.clip_spec.height;
  mcfg.width = cfg.clip_spec.width;
  mcfg.channels = cfg.clip_spec.channels;
  models::TrainConfig tcfg = cfg.train;
  tcfg.seed = seed;

  nlohmann::json report;
  report["method"] = method_name(cfg.method);
  report["seed"] = seed;

  switch (cfg.method) {
    case Method::supervised: {
      models::ClipClassifier model(mcfg, rng::derive_seed(seed, rng::salt::kInit));
      const auto result = models::train_supervised(model, splits.labeled, tcfg);
      const auto metrics =
          models::evaluate_clips(model, splits.test, splits.dataset.label_space);
      report["loss_curve"] = result.loss_curve;
      report["test_metrics"] = metrics_json(metrics);
      outcome.csv_rows.push_back(csv_row("supervised", seed, "test", "",
                                         metrics.accuracy, metrics.macro_f1,
                                         std::nan(""), std::nan("")));
      break;
    }
    case Method::dist: {
      dist::DistConfig dcfg;
      dcfg.model = mcfg;
      dcfg.train = tcfg;
      dcfg.augment = cfg.augment;
      dcfg.seed = seed;
      const auto result =
          dist::run_dist(splits.labeled, splits.unlabeled, splits.test,
                         splits.dataset.label_space, dcfg);
      report["stages"] = nlohmann::json::array();
      for (const auto& stage : result.stages) {
        report["stages"].push_back(nlohmann::json::parse(stage.to_json()));
        outcome.csv_rows.push_back(csv_row(
            "dist", seed, "test", std::to_string(stage.stage),
            stage.student_metrics.accuracy, stage.student_metrics.macro_f1,
            std::nan(""), stage.pseudo_precision));
      }
      break;
    }
    case Method::semivt: {
      semivt::SemiVtConfig scfg;
      scfg.model = mcfg;
      scfg.train = tcfg;
      scfg.augment = cfg.augment;
      scfg.prototype_momentum = cfg.semivt.prototype_momentum;
      scfg.margin = cfg.semivt.margin;
      scfg.tau = cfg.semivt.tau;
      scfg.lambda_clp = cfg.semivt.lambda_clp;
      scfg.lambda_tcr = cfg.semivt.lambda_tcr;
      scfg.teacher_momentum = cfg.semivt.teacher_momentum;
      scfg.short_window = cfg.semivt.short_window;
      scfg.seed = seed;
      const auto result =
          semivt::train_semivt(splits.labeled, splits.unlabeled, splits.val,
                               splits.dataset.label_space, scfg);
      const auto metrics = models::evaluate_clips(result.student, splits.test,
                                                  splits.dataset.label_space);
      report["epochs"] = nlohmann::json::array();
      for (const auto& epoch : result.epochs)
        report["epochs"].push_back(nlohmann::json::parse(epoch.to_json()));
      report["test_metrics"] = metrics_json(metrics);
      outcome.csv_rows.push_back(csv_row("semivt", seed, "test", "",
                                         metrics.accuracy, metrics.macro_f1,
                                         std::nan(""), std::nan("")));
      break;
    }
    case Method::encore:
      throw InvalidInput("encore requires a segmentation dataset");
  }

  outcome.report_json = report.dump(2);
  outcome.ok = true;
  return outcome;
}

SeedOutcome run_seed_seg(const ExperimentConfig& cfg, const SegSplits& splits,
                         uint64_t seed) {
  SeedOutcome outcome;
  outcome.seed = seed;

  encore::EncoreConfig ecfg;
  ecfg.model.num_classes = splits.dataset.num_classes;
  ecfg.model.height = cfg.seg_spec.height;
  ecfg.model.width = cfg.seg_spec.width;
  ecfg.model.channels = cfg.seg_spec.channels;
  ecfg.model.conv1_channels = cfg.model.conv1_channels;
  ecfg.model.conv2_channels = cfg.model.conv2_channels;
  ecfg.epochs = cfg.encore.epochs;
  ecfg.lr = cfg.encore.lr;
  ecfg.momentum = cfg.encore.momentum;
  ecfg.optimizer = cfg.encore.optimizer;
  ecfg.batch_size = cfg.encore.batch_size;
  ecfg.seed = seed;
  ecfg.adaptive = cfg.encore.adaptive;
  ecfg.fixed_threshold = cfg.encore.fixed_threshold;
  ecfg.recalib_period = cfg.encore.recalib_period;
  ecfg.percentiles = cfg.encore.percentiles;
  ecfg.offsets = cfg.encore.offsets;
  ecfg.fixed_candidates = cfg.encore.fixed_candidates;
  ecfg.fallback_t0 = cfg.encore.fallback_t0;
  ecfg.initial_threshold = cfg.encore.initial_threshold;
  ecfg.calib_fraction = cfg.encore.calib_fraction;
  ecfg.unsup_weight = cfg.encore.unsup_weight;
  ecfg.dice_loss_weight = cfg.encore.dice_loss_weight;

  const auto result = encore::train_encore(splits.labeled, splits.unlabeled, ecfg);
  const double test_dice = encore::evaluate_seg(result.model, splits.test);

  nlohmann::json report;
  report["method"] = "encore";
  report["seed"] = seed;
  report["loss_curve"] = result.loss_curve;
  report["test_dice"] = test_dice;
  report["recalibrations"] = nlohmann::json::array();
  for (const auto& event : result.events)
    report["recalibrations"].push_back(nlohmann::json::parse(event.to_json()));
  outcome.report_json = report.dump(2);
  outcome.csv_rows.push_back(csv_row("encore", seed, "test", "", std::nan(""),
                                     std::nan(""), test_dice, std::nan("")));
  outcome.ok = true;
  return outcome;
}

bool deterministic_mode() {
  const char* v = std::getenv("SSLV_DETERMINISTIC");
  return v != nullptr && std::string(v) == "1";
}

}  // namespace

bool RunSummary::all_ok() const {
  return std::all_of(outcomes.begin(), outcomes.end(),
                     [](const SeedOutcome& o) { return o.ok; });
}

RunSummary run_experiment(const ExperimentConfig& config) {
  config.validate();
  fs::create_directories(config.output_dir);
  {
    std::ofstream out(fs::path(config.output_dir) / "resolved.toml",
                      std::ios::binary);
    out << resolved_config_text(config);
  }

  // Shared, read-only across seed workers.
  std::unique_ptr<ClipSplits> clip_splits;
  std::unique_ptr<SegSplits> seg_splits;
  const std::string manifest_path =
      (fs::path(config.output_dir) / "manifest.jsonl").string();
  if (config.dataset_kind == "clips") {
    clip_splits = std::make_unique<ClipSplits>(build_clip_splits(config));
    data::write_manifest(clip_splits->manifest, manifest_path);
  } else {
    seg_splits = std::make_unique<SegSplits>(build_seg_splits(config));
    data::write_manifest(seg_splits->manifest, manifest_path);
  }

  RunSummary summary;
  summary.outcomes.resize(config.seeds.size());
  auto worker = [&](size_t idx) {
    const uint64_t seed = config.seeds[idx];
    try {
      summary.outcomes[idx] = clip_splits
                                  ? run_seed_clips(config, *clip_splits, seed)
                                  : run_seed_seg(config, *seg_splits, seed);
    } catch (const std::exception& e) {
      summary.outcomes[idx].seed = seed;
      summary.outcomes[idx].ok = false;
      summary.outcomes[idx].error = e.what();
    }
  };

  if (deterministic_mode() || config.seeds.size() == 1) {
    for (size_t i = 0; i < config.seeds.size(); ++i) worker(i);
  } else {
    std::vector<std::thread> threads;
    threads.reserve(config.seeds.size());
    for (size_t i = 0; i < config.seeds.size(); ++i)
      threads.emplace_back(worker, i);
    for (auto& t : threads) t.join();
  }

  for (const auto& outcome : summary.outcomes) {
    const fs::path seed_dir =
        fs::path(config.output_dir) / ("seed_" + std::to_string(outcome.seed));
    fs::create_directories(seed_dir);
    std::ofstream report(seed_dir / "report.json", std::ios::binary);
    if (outcome.ok) {
      report << outcome.report_json << "\n";
    } else {
      nlohmann::json j;
      j["seed"] = outcome.seed;
      j["error"] = outcome.error;
      report << j.dump(2) << "\n";
    }
  }

  const fs::path csv_path = fs::path(config.output_dir) / "aggregate.csv";
  {
    std::ofstream csv(csv_path, std::ios::binary);
    csv << kAggregateHeader << "\n";
    for (const auto& outcome : summary.outcomes)
      for (const auto& row : outcome.csv_rows) csv << row << "\n";
  }
  summary.aggregate_csv_path = csv_path.string();
  return summary;
}

// ---------------------------------------------------------------------------
// Run comparison
// ---------------------------------------------------------------------------

namespace {

struct AggregateRow {
  std::string method, split, stage;
  uint64_t seed = 0;
  double accuracy = std::nan("");
  double macro_f1 = std::nan("");
  double dice = std::nan("");
  double pseudo_precision = std::nan("");
};

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

double parse_metric(const std::string& field) {
  if (field.empty()) return std::nan("");
  return std::stod(field);
}

std::vector<AggregateRow> read_aggregate(const std::string& dir) {
  const fs::path path = fs::path(dir) / "aggregate.csv";
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw InvalidInput("compare: missing aggregate.csv in '" + dir + "'");
  std::string line;
  if (!std::getline(in, line) || trim(line) != kAggregateHeader)
    throw InvalidInput("compare: unrecognized aggregate header in '" + dir + "'");
  std::vector<AggregateRow> rows;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 8)
      throw InvalidInput("compare: malformed row in '" + dir + "'");
    AggregateRow row;
    row.method = fields[0];
    row.seed = std::stoull(fields[1]);
    row.split = fields[2];
    row.stage = fields[3];
    row.accuracy = parse_metric(fields[4]);
    row.macro_f1 = parse_metric(fields[5]);
    row.dice = parse_metric(fields[6]);
    row.pseudo_precision = parse_metric(fields[7]);
    rows.push_back(std::move(row));
  }
  if (rows.empty())
    throw InvalidInput("compare: no data rows in '" + dir + "'");
  return rows;
}

struct RunData {
  std::string dir, method;
  std::map<uint64_t, double> metric_by_seed;
};

RunData summarize(const std::string& dir) {
  RunData data;
  data.dir = dir;
  auto rows = read_aggregate(dir);
  data.method = rows.front().method;
  const bool is_dist = data.method == "dist";
  for (const auto& row : rows) {
    if (row.method != data.method)
      throw InvalidInput("compare: mixed methods in '" + dir + "'");
    if (is_dist && row.stage != "2") continue;  // final students only
    const double metric = std::isfinite(row.accuracy) ? row.accuracy : row.dice;
    data.metric_by_seed[row.seed] = metric;
  }
  return data;
}

}  // namespace

std::vector<ComparisonRow> compare_runs(const std::vector<std::string>& run_dirs,
                                        const std::string& baseline) {
  if (run_dirs.size() < 2)
    throw InvalidInput("compare: need at least two run directories");
  std::vector<RunData> runs;
  runs.reserve(run_dirs.size());
  for (const auto& dir : run_dirs) runs.push_back(summarize(dir));

  size_t baseline_idx = 0;
  if (!baseline.empty()) {
    const auto it = std::find_if(runs.begin(), runs.end(), [&](const RunData& r) {
      return r.method == baseline;
    });
    if (it == runs.end())
      throw InvalidInput("compare: baseline method '" + baseline + "' not found");
    baseline_idx = static_cast<size_t>(it - runs.begin());
  }
  const RunData& base = runs[baseline_idx];

  std::vector<ComparisonRow> out;
  for (const auto& run : runs) {
    ComparisonRow row;
    row.method = run.method;
    row.dir = run.dir;
    row.n_seeds = static_cast<int>(run.metric_by_seed.size());
    std::vector<double> values;
    for (const auto& [seed, value] : run.metric_by_seed) values.push_back(value);
    if (values.empty()) throw InvalidInput("compare: no metrics in '" + run.dir + "'");
    row.median = core::percentile(values, 50.0);
    row.iqr = core::percentile(values, 75.0) - core::percentile(values, 25.0);
    std::vector<double> deltas;
    for (const auto& [seed, value] : run.metric_by_seed) {
      const auto it = base.metric_by_seed.find(seed);
      if (it == base.metric_by_seed.end()) continue;
      row.per_seed_delta.emplace_back(seed, value - it->second);
      deltas.push_back(value - it->second);
    }
    row.delta_median = deltas.empty() ? std::nan("") : core::percentile(deltas, 50.0);
    out.push_back(std::move(row));
  }
  return out;
}

std::string comparison_csv(const std::vector<ComparisonRow>& rows) {
  std::ostringstream out;
  out << "method,dir,n_seeds,median,iqr,delta_median,per_seed_deltas\n";
  for (const auto& row : rows) {
    out << row.method << "," << row.dir << "," << row.n_seeds << ","
        << fmt_metric(row.median) << "," << fmt_metric(row.iqr) << ","
        << fmt_metric(row.delta_median) << ",";
    for (size_t i = 0; i < row.per_seed_delta.size(); ++i) {
      if (i) out << ";";
      out << row.per_seed_delta[i].first << "="
          << fmt_metric(row.per_seed_delta[i].second);
    }
    out << "\n";
  }
  return out.str();
}

std::string comparison_table(const std::vector<ComparisonRow>& rows) {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-12s %-8s %10s %10s %14s\n", "method",
                "seeds", "median", "iqr", "delta_median");
  out << buf;
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof(buf), "%-12s %-8d %10.6f %10.6f %14.6f\n",
                  row.method.c_str(), row.n_seeds, row.median, row.iqr,
                  row.delta_median);
    out << buf;
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// CLI entry points
// ---------------------------------------------------------------------------

int main_run(const std::string& config_path, const std::string& out_override,
             int64_t seed_override, std::ostream& out, std::ostream& err) {
  ExperimentConfig config;
  try {
    config = parse_config_file(config_path);
    if (!out_override.empty()) config.output_dir = out_override;
    if (seed_override >= 0)
      config.seeds = {static_cast<uint64_t>(seed_override)};
    config.validate();
  } catch (const std::exception& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  }
  try {
    const auto summary = run_experiment(config);
    for (const auto& outcome : summary.outcomes) {
      if (outcome.ok)
        out << "seed " << outcome.seed << ": ok\n";
      else
        err << "seed " << outcome.seed << ": FAILED: " << outcome.error << "\n";
    }
    out << "aggregate: " << summary.aggregate_csv_path << "\n";
    if (!summary.all_ok()) return 3;
  } catch (const std::exception& e) {
    err << "runtime failure: " << e.what() << "\n";
    return 3;
  }
  return 0;
}

int main_compare(const std::vector<std::string>& run_dirs,
                 const std::string& baseline, std::ostream& out,
                 std::ostream& err) {
  try {
    const auto rows = compare_runs(run_dirs, baseline);
    out << comparison_table(rows);
    const fs::path csv_path = "comparison.csv";
    std::ofstream csv(csv_path, std::ios::binary);
    csv << comparison_csv(rows);
    out << "written: " << csv_path.string() << "\n";
    return 0;
  } catch (const InvalidInput& e) {
    err << "compare error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "runtime failure: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace sslv::cli
