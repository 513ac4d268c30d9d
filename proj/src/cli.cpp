#include "weightcorr/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <cstdio>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "weightcorr/errors.hpp"
#include "weightcorr/selftest.hpp"

#ifndef WCORR_SOURCE_CONFIG_DIR
#define WCORR_SOURCE_CONFIG_DIR ""
#endif

namespace weightcorr {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// config

void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError("field '" + where + "': expected an object");
  for (const auto& [key, value] : obj.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    if (!known) throw ConfigError("field '" + where + "." + key + "': unknown key");
  }
}

const json* child(const json& obj, const char* key) {
  auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

std::string field(const std::string& where, const char* key) { return where + "." + key; }

double read_double(const json& obj, const std::string& where, const char* key, double fallback) {
  const json* v = child(obj, key);
  if (!v) return fallback;
  if (!v->is_number()) throw ConfigError("field '" + field(where, key) + "': expected a number");
  return v->get<double>();
}

std::size_t read_count(const json& obj, const std::string& where, const char* key,
                       std::size_t fallback) {
  const json* v = child(obj, key);
  if (!v) return fallback;
  if (!v->is_number_unsigned())
    throw ConfigError("field '" + field(where, key) + "': expected a non-negative integer");
  return v->get<std::size_t>();
}

bool read_bool(const json& obj, const std::string& where, const char* key, bool fallback) {
  const json* v = child(obj, key);
  if (!v) return fallback;
  if (!v->is_boolean()) throw ConfigError("field '" + field(where, key) + "': expected true or false");
  return v->get<bool>();
}

std::string read_string(const json& obj, const std::string& where, const char* key) {
  const json* v = child(obj, key);
  if (!v) throw ConfigError("field '" + field(where, key) + "': missing");
  if (!v->is_string()) throw ConfigError("field '" + field(where, key) + "': expected a string");
  return v->get<std::string>();
}

fs::path read_path(const json& obj, const std::string& where, const char* key, const fs::path& base) {
  fs::path p = read_string(obj, where, key);
  return p.is_absolute() ? p : base / p;
}

Shape parse_input_shape(const json& v) {
  const std::string where = "architecture.input";
  if (!v.is_array() || v.empty() || v.size() > 3)
    throw ConfigError("field '" + where + "': expected [features] or [channels, height, width]");
  std::vector<std::size_t> dims;
  for (const auto& d : v) {
    if (!d.is_number_unsigned() || d.get<std::size_t>() == 0)
      throw ConfigError("field '" + where + "': dimensions must be positive integers");
    dims.push_back(d.get<std::size_t>());
  }
  if (dims.size() == 1) return Shape{dims[0], 1, 1};
  if (dims.size() == 3) return Shape{dims[0], dims[1], dims[2]};
  throw ConfigError("field '" + where + "': expected 1 or 3 dimensions");
}

// Shape leaving `s`, enough to infer the next layer's fan-in. The full
// network is checked by infer_shapes afterwards.
Shape next_shape(Shape cur, const LayerSpec& s, const std::string& where) {
  switch (s.kind) {
    case LayerKind::kDense:
      if (!cur.is_flat()) throw ConfigError("field '" + where + "': dense layer needs flat input, add a flatten layer");
      return Shape{s.out, 1, 1};
    case LayerKind::kConv2d:
      if (cur.is_flat()) throw ConfigError("field '" + where + "': conv2d needs [channels, height, width] input");
      return Shape{s.out, cur.height, cur.width};
    case LayerKind::kMaxPool2:
      if (cur.height < 2 || cur.width < 2) throw ConfigError("field '" + where + "': input too small to pool");
      return Shape{cur.channels, cur.height / 2, cur.width / 2};
    case LayerKind::kFlatten:
      return Shape{cur.size(), 1, 1};
    default:
      return cur;
  }
}

NetworkSpec parse_architecture(const json& arch, double& init_sigma) {
  check_keys(arch, "architecture", {"input", "layers", "init_sigma"});
  const json* input = child(arch, "input");
  if (!input) throw ConfigError("field 'architecture.input': missing");
  NetworkSpec spec{parse_input_shape(*input), {}};
  init_sigma = read_double(arch, "architecture", "init_sigma", init_sigma);
  if (!(init_sigma >= 0.0)) throw ConfigError("field 'architecture.init_sigma': must be >= 0");

  const json* layers = child(arch, "layers");
  if (!layers || !layers->is_array() || layers->empty())
    throw ConfigError("field 'architecture.layers': expected a non-empty list");

  Shape cur = spec.input;
  for (std::size_t i = 0; i < layers->size(); ++i) {
    const json& l = (*layers)[i];
    const std::string where = "architecture.layers[" + std::to_string(i) + "]";
    if (!l.is_object()) throw ConfigError("field '" + where + "': expected an object");
    const std::string type = read_string(l, where, "type");
    LayerKind kind;
    try {
      kind = layer_kind_from_string(type);
    } catch (const UsageError&) {
      throw ConfigError("field '" + where + ".type': unknown layer type '" + type + "'");
    }
    LayerSpec s;
    switch (kind) {
      case LayerKind::kDense: {
        check_keys(l, where, {"type", "out"});
        const std::size_t out = read_count(l, where, "out", 0);
        if (out == 0) throw ConfigError("field '" + where + ".out': must be a positive integer");
        s = LayerSpec::dense(cur.size(), out);
        break;
      }
      case LayerKind::kConv2d: {
        check_keys(l, where, {"type", "out", "kernel"});
        const std::size_t out = read_count(l, where, "out", 0);
        const std::size_t kernel = read_count(l, where, "kernel", 3);
        if (out == 0) throw ConfigError("field '" + where + ".out': must be a positive integer");
        if (kernel % 2 == 0) throw ConfigError("field '" + where + ".kernel': must be odd");
        s = LayerSpec::conv2d(kernel, cur.channels, out);
        break;
      }
      case LayerKind::kRelu: check_keys(l, where, {"type"}); s = LayerSpec::relu(); break;
      case LayerKind::kTanh: check_keys(l, where, {"type"}); s = LayerSpec::tanh(); break;
      case LayerKind::kMaxPool2: check_keys(l, where, {"type"}); s = LayerSpec::maxpool2(); break;
      case LayerKind::kFlatten: check_keys(l, where, {"type"}); s = LayerSpec::flatten(); break;
    }
    spec.layers.push_back(s);
    cur = next_shape(cur, s, where);
  }
  try {
    infer_shapes(spec);
  } catch (const UsageError& e) {
    throw ConfigError(std::string("field 'architecture.layers': ") + e.what());
  }
  return spec;
}

DataConfig parse_data(const json& d, const fs::path& base) {
  DataConfig cfg;
  const std::string where = "data";
  if (!d.is_object()) throw ConfigError("field 'data': expected an object");
  const std::string source = read_string(d, where, "source");
  if (source == "synthetic") {
    check_keys(d, where, {"source", "seed", "train_size", "test_size", "classes", "dims",
                          "separation", "limit"});
    cfg.source = DataConfig::Source::kSynthetic;
    cfg.seed = read_count(d, where, "seed", 0);
    cfg.train_size = read_count(d, where, "train_size", cfg.train_size);
    cfg.test_size = read_count(d, where, "test_size", cfg.test_size);
    cfg.classes = read_count(d, where, "classes", cfg.classes);
    cfg.dims = read_count(d, where, "dims", cfg.dims);
    cfg.separation = read_double(d, where, "separation", cfg.separation);
    if (cfg.train_size == 0 || cfg.test_size == 0)
      throw ConfigError("field 'data.train_size': both splits need at least one sample");
    if (cfg.classes < 2) throw ConfigError("field 'data.classes': need at least 2");
    if (cfg.dims < cfg.classes) throw ConfigError("field 'data.dims': must be >= data.classes");
  } else if (source == "idx") {
    check_keys(d, where, {"source", "train_images", "train_labels", "test_images",
                          "test_labels", "limit"});
    cfg.source = DataConfig::Source::kIdx;
    cfg.train_images = read_path(d, where, "train_images", base);
    cfg.train_labels = read_path(d, where, "train_labels", base);
    cfg.test_images = read_path(d, where, "test_images", base);
    cfg.test_labels = read_path(d, where, "test_labels", base);
  } else if (source == "cifar") {
    check_keys(d, where, {"source", "train", "test", "limit"});
    cfg.source = DataConfig::Source::kCifar;
    const json* train = child(d, "train");
    if (!train) throw ConfigError("field 'data.train': missing");
    if (train->is_string()) {
      cfg.train_batches.push_back(read_path(d, where, "train", base));
    } else if (train->is_array() && !train->empty()) {
      for (const auto& t : *train) {
        if (!t.is_string()) throw ConfigError("field 'data.train': expected file names");
        fs::path p = t.get<std::string>();
        cfg.train_batches.push_back(p.is_absolute() ? p : base / p);
      }
    } else {
      throw ConfigError("field 'data.train': expected a file name or a list of them");
    }
    cfg.test_batch = read_path(d, where, "test", base);
  } else {
    throw ConfigError("field 'data.source': expected synthetic, idx or cifar, got '" + source + "'");
  }
  cfg.limit = read_count(d, where, "limit", 0);
  return cfg;
}

TrainConfig parse_training(const json& t) {
  const std::string where = "training";
  check_keys(t, where, {"learning_rate", "momentum", "epochs", "batch_size", "alpha", "seed",
                        "g_cap", "shuffle", "early_stop_window"});
  TrainConfig cfg;
  cfg.learning_rate = read_double(t, where, "learning_rate", cfg.learning_rate);
  cfg.momentum = read_double(t, where, "momentum", cfg.momentum);
  cfg.epochs = read_count(t, where, "epochs", cfg.epochs);
  cfg.batch_size = read_count(t, where, "batch_size", cfg.batch_size);
  cfg.alpha = read_double(t, where, "alpha", cfg.alpha);
  cfg.seed = read_count(t, where, "seed", cfg.seed);
  cfg.g_cap = read_double(t, where, "g_cap", cfg.g_cap);
  cfg.shuffle = read_bool(t, where, "shuffle", cfg.shuffle);
  cfg.early_stop_window = read_double(t, where, "early_stop_window", cfg.early_stop_window);
  try {
    cfg.validate();
  } catch (const UsageError& e) {
    throw ConfigError(std::string("section 'training': ") + e.what());
  }
  return cfg;
}

MeasureConfig parse_measures(const json& m) {
  const std::string where = "measures";
  check_keys(m, where, {"sigma_rule", "sigma_sq", "g_cap"});
  MeasureConfig cfg;
  if (child(m, "sigma_rule")) {
    const std::string rule = read_string(m, where, "sigma_rule");
    if (rule == "one_over_l") cfg.sigma_rule = SigmaRule::kOneOverL;
    else if (rule == "constant") cfg.sigma_rule = SigmaRule::kConstant;
    else throw ConfigError("field 'measures.sigma_rule': expected one_over_l or constant");
  }
  cfg.sigma_sq = read_double(m, where, "sigma_sq", cfg.sigma_sq);
  cfg.g_cap = read_double(m, where, "g_cap", cfg.g_cap);
  if (!(cfg.sigma_sq > 0.0)) throw ConfigError("field 'measures.sigma_sq': must be > 0");
  if (!(cfg.g_cap > 0.0)) throw ConfigError("field 'measures.g_cap': must be > 0");
  return cfg;
}

std::size_t line_of(std::string_view text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + byte, '\n'));
}

// ---------------------------------------------------------------------------
// datasets

Dataset concat(std::vector<Dataset> parts) {
  Dataset all = std::move(parts.front());
  for (std::size_t i = 1; i < parts.size(); ++i) {
    if (!(parts[i].sample_shape == all.sample_shape))
      throw FormatError(FormatError::Kind::kSchema, "training batches disagree on sample shape");
    all.inputs.insert(all.inputs.end(), parts[i].inputs.begin(), parts[i].inputs.end());
    all.labels.insert(all.labels.end(), parts[i].labels.begin(), parts[i].labels.end());
    all.num_classes = std::max(all.num_classes, parts[i].num_classes);
  }
  return all;
}

// ---------------------------------------------------------------------------
// commands

std::size_t env_threads() {
  const char* raw = std::getenv("WCORR_NUM_THREADS");
  if (!raw || !*raw) return 1;
  char* end = nullptr;
  const long v = std::strtol(raw, &end, 10);
  if (*end != '\0' || v < 1 || v > 1024)
    throw ConfigError("WCORR_NUM_THREADS must be an integer in [1, 1024], got '" +
                      std::string(raw) + "'");
  return static_cast<std::size_t>(v);
}

std::string extension(ReportFormat f) { return f == ReportFormat::kCsv ? ".csv" : ".jsonl"; }

void emit(const ReportTable& table, const std::string& out_path, ReportFormat format,
          std::ostream& out) {
  if (out_path.empty() || out_path == "-") {
    out << render_report(table, format);
  } else {
    const fs::path p(out_path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    write_report(table, p, format);
  }
}

struct RunResult {
  std::string name;
  double alpha = 0.0;
  TrainReport report;
  double final_mean_wc = 0.0;
};

RunResult run_training(const ExperimentConfig& cfg, const Datasets& data, double alpha,
                       const std::string& name, const fs::path& dir, ReportFormat format,
                       std::uint64_t digest) {
  TrainConfig tc = cfg.training;
  tc.alpha = alpha;
  Network net = init_network(cfg.architecture, tc.seed, cfg.init_sigma);
  RunResult r{name, alpha, train(net, data.train, data.test, tc), 0.0};
  r.final_mean_wc = mean_wc(net);

  fs::create_directories(dir);
  const Provenance prov{tc.seed, digest, static_cast<std::uint32_t>(tc.epochs)};
  save_checkpoint(NetworkCheckpoint::from_network(net, prov), dir / "final.ckpt");
  const Network best(cfg.architecture, net.initial(), r.report.best_params);
  save_checkpoint(NetworkCheckpoint::from_network(best, prov), dir / "best.ckpt");
  write_report(train_report_table(r.report), dir / ("history" + extension(format)), format);
  return r;
}

ReportTable summary_table(const std::vector<RunResult>& runs, std::uint64_t seed) {
  ReportTable t{{"run", "alpha", "seed", "epochs", "best_epoch", "final_train_loss",
                 "final_test_loss", "final_test_error", "final_mean_wc", "best_test_loss"},
                {}};
  for (const auto& r : runs) {
    const auto& last = r.report.history.back();
    const auto& best = r.report.history[r.report.best_epoch];
    t.rows.push_back({r.name, r.alpha, static_cast<std::int64_t>(seed),
                      static_cast<std::int64_t>(r.report.history.size()),
                      static_cast<std::int64_t>(r.report.best_epoch), last.train_loss,
                      last.test_loss, last.test_error, r.final_mean_wc, best.test_loss});
  }
  return t;
}

struct TrainArgs {
  std::string config;
  std::string out = "out";
  std::optional<double> alpha;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  bool compare = false;
  std::string format = "csv";
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  const ReportFormat format = report_format_from_string(a.format);
  ExperimentConfig cfg = load_config(a.config);
  if (a.alpha) cfg.training.alpha = *a.alpha;
  if (a.seed) cfg.training.seed = *a.seed;
  if (a.epochs) cfg.training.epochs = *a.epochs;
  cfg.training.eval_threads = env_threads();
  try {
    cfg.training.validate();
  } catch (const UsageError& e) {
    throw ConfigError(e.what());
  }
  if (a.compare && !(cfg.training.alpha > 0.0))
    throw ConfigError("--compare-wcd needs a positive alpha (config or --alpha)");

  const Datasets data = load_datasets(cfg.data);
  if (!(data.train.sample_shape.size() == cfg.architecture.input.size()))
    throw ConfigError("field 'architecture.input': network expects " +
                      std::to_string(cfg.architecture.input.size()) +
                      " inputs per sample, data has " +
                      std::to_string(data.train.sample_shape.size()));
  const std::size_t classes = infer_shapes(cfg.architecture).back().size();
  if (classes < data.train.num_classes || classes < data.test.num_classes)
    throw ConfigError("field 'architecture.layers': " + std::to_string(classes) +
                      " outputs for data with " + std::to_string(data.train.num_classes) +
                      " classes");

  std::ostringstream tag;
  tag << cfg.canonical << "|alpha=" << cfg.training.alpha << "|seed=" << cfg.training.seed
      << "|epochs=" << cfg.training.epochs;
  const std::uint64_t digest = fnv1a64(tag.str());
  const fs::path root(a.out);

  std::vector<RunResult> runs;
  if (a.compare) {
    runs.push_back(run_training(cfg, data, 0.0, "baseline", root / "baseline", format, digest));
    runs.push_back(run_training(cfg, data, cfg.training.alpha, "wcd", root / "wcd", format, digest));
    write_report(summary_table(runs, cfg.training.seed), root / ("compare" + extension(format)),
                 format);
  } else {
    runs.push_back(run_training(cfg, data, cfg.training.alpha,
                                cfg.training.alpha > 0.0 ? "wcd" : "baseline", root, format,
                                digest));
    write_report(summary_table(runs, cfg.training.seed), root / ("summary" + extension(format)),
                 format);
  }
  out << render_report(summary_table(runs, cfg.training.seed), ReportFormat::kCsv);
  return kExitOk;
}

struct MeasureArgs {
  std::string checkpoint;
  std::string config;
  std::string out;
  std::string layers_out;
  std::string format = "csv";
  std::optional<double> train_loss;
  std::optional<double> test_loss;
  std::optional<double> sigma_sq;
};

int cmd_measure(const MeasureArgs& a, std::ostream& out) {
  const ReportFormat format = report_format_from_string(a.format);
  if (a.train_loss.has_value() != a.test_loss.has_value())
    throw UsageError("--train-loss and --test-loss must be given together");
  MeasureConfig mc = a.config.empty() ? MeasureConfig{} : load_config(a.config).measures;
  if (a.sigma_sq) {
    if (!(*a.sigma_sq > 0.0)) throw UsageError("--sigma-sq must be > 0");
    mc.sigma_rule = SigmaRule::kConstant;
    mc.sigma_sq = *a.sigma_sq;
  }
  const NetworkCheckpoint ckpt = load_checkpoint(a.checkpoint);
  MeasureReport r = compute_measures(ckpt.spec, ckpt.initial, ckpt.final_params, mc);
  if (a.train_loss) r.ge = generalisation_error(*a.test_loss, *a.train_loss);
  emit(measure_report_table(r), a.out, format, out);

  if (!a.layers_out.empty()) {
    const Network net = ckpt.to_network();
    ReportTable t{{"layer", "kind", "n_out", "n_in", "rho", "g"}, {}};
    for (std::size_t k = 0; k < net.trainable_layers().size(); ++k) {
      const std::size_t idx = net.trainable_layers()[k];
      const LayerCorrelation c = layer_correlation(net.params()[k].weights);
      t.rows.push_back({static_cast<std::int64_t>(idx),
                        std::string(to_string(net.spec().layers[idx].kind)),
                        static_cast<std::int64_t>(c.n_out), static_cast<std::int64_t>(c.n_in),
                        c.rho, g_term(c, mc.g_cap)});
    }
    emit(t, a.layers_out, format, out);
  }
  return kExitOk;
}

struct RankArgs {
  std::string table;
  std::string out;
  std::string format = "csv";
  std::string ties = "neither";
};

int cmd_rank(const RankArgs& a, std::ostream& out) {
  const ReportFormat format = report_format_from_string(a.format);
  TiePolicy policy;
  if (a.ties == "neither") policy = TiePolicy::kNeither;
  else if (a.ties == "concordant") policy = TiePolicy::kConcordant;
  else throw UsageError("--ties expects neither or concordant, got '" + a.ties + "'");
  const MeasureTable table = measure_table_from_csv(read_csv(a.table));
  const auto rows = rank_measures(table, policy);
  emit(ranking_table(rows), a.out, format, out);
  return kExitOk;
}

struct HeatmapArgs {
  std::string checkpoint;
  std::size_t layer = 0;
  std::string out;
  std::string format = "csv";
};

int cmd_heatmap(const HeatmapArgs& a, std::ostream& out) {
  const ReportFormat format = report_format_from_string(a.format);
  const NetworkCheckpoint ckpt = load_checkpoint(a.checkpoint);
  const auto& layers = ckpt.spec.layers;
  if (a.layer >= layers.size())
    throw UsageError("--layer " + std::to_string(a.layer) + " is out of range; the network has " +
                     std::to_string(layers.size()) + " layers");
  const LayerKind kind = layers[a.layer].kind;
  if (kind != LayerKind::kConv2d)
    throw UsageError("layer " + std::to_string(a.layer) + " is " + std::string(to_string(kind)) +
                     "; heatmap needs a conv2d layer");
  const Network net = ckpt.to_network();
  const auto& idx = net.trainable_layers();
  const std::size_t k = static_cast<std::size_t>(std::find(idx.begin(), idx.end(), a.layer) - idx.begin());
  const auto& w = std::get<FilterTensor>(net.params()[k].weights);
  if (w.out_channels() < 2)
    throw UsageError("layer " + std::to_string(a.layer) + " has a single filter");
  emit(matrix_table(filter_heatmap(w).pairwise), a.out, format, out);
  return kExitOk;
}

struct SelftestArgs {
  std::uint64_t seed = SelftestOptions{}.seed;
  std::size_t cases = SelftestOptions{}.cases_per_suite;
  std::string fault;
};

int cmd_selftest(const SelftestArgs& a, std::ostream& out) {
  SelftestOptions opt;
  opt.seed = a.seed;
  opt.cases_per_suite = a.cases;
  if (a.fault == "bracket-sign") opt.flip_bracket_sign = true;
  else if (!a.fault.empty()) throw UsageError("--inject-fault expects bracket-sign");
  if (opt.cases_per_suite == 0) throw UsageError("--cases must be positive");

  bool ok = true;
  for (const auto& s : run_selftest(opt)) {
    char line[160];
    std::snprintf(line, sizeof line, "%-28s max_rel_error=%.3e tol=%.0e cases=%zu %s\n",
                  s.name.c_str(), s.max_error, s.tolerance, s.cases, s.passed() ? "PASS" : "FAIL");
    out << line;
    for (auto seed : s.failing_seeds) out << "  failing case seed " << seed << '\n';
    ok = ok && s.passed();
  }
  return ok ? kExitOk : kExitSelftestFailed;
}

}  // namespace

ExperimentConfig parse_config(std::string_view text, const fs::path& base_dir) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("config syntax error at line " + std::to_string(line_of(text, e.byte)) +
                      ": " + e.what());
  }
  check_keys(doc, "config", {"architecture", "data", "training", "measures"});
  ExperimentConfig cfg;
  const json* arch = child(doc, "architecture");
  if (!arch) throw ConfigError("field 'architecture': missing");
  cfg.architecture = parse_architecture(*arch, cfg.init_sigma);
  const json* data = child(doc, "data");
  if (!data) throw ConfigError("field 'data': missing");
  cfg.data = parse_data(*data, base_dir);
  if (const json* t = child(doc, "training")) cfg.training = parse_training(*t);
  if (const json* m = child(doc, "measures")) cfg.measures = parse_measures(*m);
  cfg.canonical = doc.dump();
  return cfg;
}

ExperimentConfig load_config(const std::string& name_or_path) {
  if (name_or_path.empty()) throw ConfigError("--config is required");
  fs::path p(name_or_path);
  if (!fs::exists(p) && !p.has_extension() && !p.has_parent_path()) {
    const fs::path local = fs::path("configs") / (name_or_path + ".json");
    const fs::path source = fs::path(WCORR_SOURCE_CONFIG_DIR) / (name_or_path + ".json");
    if (fs::exists(local)) p = local;
    else if (!std::string_view(WCORR_SOURCE_CONFIG_DIR).empty() && fs::exists(source)) p = source;
  }
  if (!fs::exists(p)) throw ConfigError("config '" + name_or_path + "' not found");
  return parse_config(read_text_file(p), p.parent_path());
}

Datasets load_datasets(const DataConfig& cfg) {
  auto require = [](const fs::path& p, const char* key) {
    if (!fs::exists(p))
      throw IoError("field 'data." + std::string(key) + "': file '" + p.string() + "' not found");
  };
  if (cfg.source == DataConfig::Source::kIdx) {
    require(cfg.train_images, "train_images");
    require(cfg.train_labels, "train_labels");
    require(cfg.test_images, "test_images");
    require(cfg.test_labels, "test_labels");
  } else if (cfg.source == DataConfig::Source::kCifar) {
    for (const auto& b : cfg.train_batches) require(b, "train");
    require(cfg.test_batch, "test");
  }
  Datasets d;
  switch (cfg.source) {
    case DataConfig::Source::kSynthetic: {
      SyntheticSpec s{cfg.seed, cfg.train_size, cfg.classes, cfg.dims, cfg.separation};
      d.train = synthetic_dataset(s, Split::kTrain);
      s.n = cfg.test_size;
      d.test = synthetic_dataset(s, Split::kTest);
      break;
    }
    case DataConfig::Source::kIdx:
      d.train = load_idx(cfg.train_images, cfg.train_labels, Split::kTrain);
      d.test = load_idx(cfg.test_images, cfg.test_labels, Split::kTest);
      break;
    case DataConfig::Source::kCifar: {
      std::vector<Dataset> parts;
      for (const auto& b : cfg.train_batches) parts.push_back(load_cifar_binary(b, Split::kTrain));
      d.train = concat(std::move(parts));
      d.test = load_cifar_binary(cfg.test_batch, Split::kTest);
      break;
    }
  }
  if (cfg.limit > 0) {
    d.train = d.train.head(cfg.limit);
    d.test = d.test.head(cfg.limit);
  }
  return d;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Weight correlation measures, WCD training and ranking", "wcorr"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a network from an experiment config");
  train_cmd->add_option("--config", ta.config, "Config file or name under configs/")->required();
  train_cmd->add_option("--out", ta.out, "Output directory");
  train_cmd->add_option("--alpha", ta.alpha, "WCD strength (overrides config)");
  train_cmd->add_option("--seed", ta.seed, "Initialisation and shuffling seed");
  train_cmd->add_option("--epochs", ta.epochs, "Number of epochs");
  train_cmd->add_flag("--compare-wcd", ta.compare, "Train with alpha = 0 and the configured alpha");
  train_cmd->add_option("--format", ta.format, "csv or jsonl");

  MeasureArgs ma;
  auto* measure_cmd = app.add_subcommand("measure", "Complexity measures of a checkpoint");
  measure_cmd->add_option("checkpoint", ma.checkpoint)->required();
  measure_cmd->add_option("--config", ma.config, "Take the measures section from this config");
  measure_cmd->add_option("--out", ma.out, "Output file (stdout if omitted)");
  measure_cmd->add_option("--layers", ma.layers_out, "Also write per-layer rho and g here");
  measure_cmd->add_option("--format", ma.format, "csv or jsonl");
  measure_cmd->add_option("--train-loss", ma.train_loss);
  measure_cmd->add_option("--test-loss", ma.test_loss);
  measure_cmd->add_option("--sigma-sq", ma.sigma_sq, "Fixed prior variance");

  RankArgs ra;
  auto* rank_cmd = app.add_subcommand("rank", "Kendall tau of each measure column against GE");
  rank_cmd->add_option("table", ra.table)->required();
  rank_cmd->add_option("--out", ra.out, "Output file (stdout if omitted)");
  rank_cmd->add_option("--format", ra.format, "csv or jsonl");
  rank_cmd->add_option("--ties", ra.ties, "neither or concordant");

  HeatmapArgs ha;
  auto* heatmap_cmd = app.add_subcommand("heatmap", "Pairwise filter correlations of a conv layer");
  heatmap_cmd->add_option("checkpoint", ha.checkpoint)->required();
  heatmap_cmd->add_option("--layer", ha.layer, "Index into the architecture layer list")->required();
  heatmap_cmd->add_option("--out", ha.out, "Output file (stdout if omitted)");
  heatmap_cmd->add_option("--format", ha.format, "csv or jsonl");

  SelftestArgs sa;
  auto* selftest_cmd = app.add_subcommand("selftest", "Numerical identity checks");
  selftest_cmd->add_option("--seed", sa.seed);
  selftest_cmd->add_option("--cases", sa.cases, "Random cases per suite");
  selftest_cmd->add_option("--inject-fault", sa.fault, "bracket-sign");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train_cmd) return cmd_train(ta, out);
    if (*measure_cmd) return cmd_measure(ma, out);
    if (*rank_cmd) return cmd_rank(ra, out);
    if (*heatmap_cmd) return cmd_heatmap(ha, out);
    if (*selftest_cmd) return cmd_selftest(sa, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const IoError& e) {
    err << "io error: " << e.what() << '\n';
    return kExitIo;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << '\n';
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "io error: " << e.what() << '\n';
    return kExitIo;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  }
  return kExitConfig;
}

}  // namespace weightcorr
