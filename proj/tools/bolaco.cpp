// Copyright 2026 The Bolaco Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command-line pipeline: synth, calibrate, sweep, search, compress, posttrain,
// eval and report. Exit codes: 0 success, 2 missing or unreadable input,
// 3 invalid configuration, 4 numerical failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bolaco.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace bolaco::cli {
namespace {

struct Options {
  std::string model;
  std::string data;
  std::string output_dir = ".";
  std::string stats_dir;
  std::string allocation;
  std::string compressed;
  std::string posttrained;
  std::string sweep;
  std::string output;
  std::string warm_start;
  std::string scheme = "5x1";
  double rho = 0.2;
  int groups = 32;
  int window = 128;
  std::uint64_t seed = 0;
  SearchConfig search;
  std::vector<double> ratios = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
  std::vector<std::string> categories;
  int steps = 100;
  double lr = 1e-2;
  int r_prime = 8;
  int max_tokens = 4096;
  int calib_sequences = 64;
  int val_sequences = 64;
  int heldout_sequences = 32;
};

fs::path out_path(const Options& o, const std::string& explicit_path, const char* default_name) {
  return explicit_path.empty() ? fs::path(o.output_dir) / default_name : fs::path(explicit_path);
}

fs::path model_path(const Options& o) { return out_path(o, o.model, "model.btns"); }
fs::path stats_path(const Options& o) { return out_path(o, o.stats_dir, "stats"); }

void check_rho(double rho) {
  detail::require(rho > 0.0 && rho < 1.0, ErrorKind::invalid_config, "rho must lie in (0, 1)");
}

void require_data(const Options& o) {
  detail::require(!o.data.empty(), ErrorKind::invalid_config, "--data is required");
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::io, "cannot write " + path.string());
  os << text;
  if (!os) throw Error(ErrorKind::io, "failed writing " + path.string());
}

/// Observation timestamps: SOURCE_DATE_EPOCH when set, wall clock otherwise.
Clock make_clock() {
  if (const char* env = std::getenv("SOURCE_DATE_EPOCH")) {
    char* end = nullptr;
    const double v = std::strtod(env, &end);
    detail::require(end != env && *end == '\0', ErrorKind::invalid_config, "SOURCE_DATE_EPOCH is not a number");
    return [v] { return v; };
  }
  return wall_clock_seconds;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------------------
// Statistics directory

std::string stats_file_name(const LayerId& id) { return id.str() + ".cov"; }

StatsMap load_stats_dir(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  const json manifest = json::parse(read_text_file(manifest_path), nullptr, false);
  detail::require(!manifest.is_discarded() && manifest.contains("layers"), ErrorKind::io,
                  manifest_path.string() + " is not a valid manifest");
  StatsMap stats;
  for (const auto& entry : manifest.at("layers")) {
    const LayerId id = LayerId::parse(entry.at("id").get<std::string>());
    stats.emplace(id, load_stats(dir / entry.at("file").get<std::string>()));
  }
  return stats;
}

std::shared_ptr<const BasisMap> load_bases(const fs::path& dir, const std::set<LayerId>& needed) {
  const StatsMap stats = load_stats_dir(dir);
  auto bases = std::make_shared<BasisMap>();
  for (const LayerId& id : needed) {
    const auto it = stats.find(id);
    if (it == stats.end()) {
      throw Error(ErrorKind::missing_input, "missing feature statistics for layer " + id.str() + " in " + dir.string());
    }
    bases->emplace(id, feature_basis(it->second));
  }
  return bases;
}

std::set<LayerId> scheme_layers(const GroupingScheme& s) {
  std::set<LayerId> out;
  for (const Group& g : s.groups)
    if (!g.na) out.insert(g.members.begin(), g.members.end());
  return out;
}

std::set<LayerId> allocated_layers(const Allocation& a) {
  std::set<LayerId> out;
  for (const auto& [id, r] : a.ranks)
    if (r) out.insert(id);
  return out;
}

// ---------------------------------------------------------------------------
// Subcommands

int run_synth(const Options& o) {
  ModelConfig cfg;
  const Model m = synth_weights(cfg, substream_seed(o.seed, "model"));
  const fs::path dir(o.output_dir);
  fs::create_directories(dir);
  save_model(dir / "model.btns", m);
  const auto w = static_cast<std::size_t>(o.window);
  detail::require(o.window >= 2, ErrorKind::invalid_config, "window must be at least 2");
  const std::pair<const char*, int> files[] = {
      {"calib", o.calib_sequences}, {"val", o.val_sequences}, {"heldout", o.heldout_sequences}};
  for (const auto& [name, n] : files) {
    detail::require(n >= 1, ErrorKind::invalid_config, "sequence counts must be positive");
    write_text(dir / (std::string(name) + ".txt"),
               synthetic_corpus(substream_seed(o.seed, name), static_cast<std::size_t>(n) * w));
  }
  std::cout << "wrote " << (dir / "model.btns").string() << " (" << param_count(m) << " linear parameters)\n";
  return 0;
}

int run_calibrate(const Options& o) {
  require_data(o);
  detail::require(o.groups >= 1, ErrorKind::invalid_config, "--groups must be at least 1");
  const Model m = load_model(model_path(o));
  const TokenDataset data = load_text_dataset(o.data, o.window);
  const auto groups = split_groups(data, o.groups, o.seed);
  const std::vector<LayerId> ids = m.layer_ids();
  const StatsMap stats = calibration_stats(m, groups, ids);

  const fs::path dir = stats_path(o);
  fs::create_directories(dir);
  json layers = json::array();
  for (const auto& [id, s] : stats) {
    save_stats(dir / stats_file_name(id), s);
    layers.push_back({{"id", id.str()}, {"file", stats_file_name(id)}, {"dim", s.dim()}, {"count", s.count}});
  }
  const json manifest = {{"estimator", o.groups == 1 ? "scm" : "pcm"},
                         {"groups", o.groups},
                         {"sequences", data.size()},
                         {"window", o.window},
                         {"seed", o.seed},
                         {"data", o.data},
                         {"layers", layers}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  std::cout << "wrote " << stats.size() << " covariance files to " << dir.string() << "\n";
  return 0;
}

int run_sweep(const Options& o) {
  require_data(o);
  auto model = std::make_shared<const Model>(load_model(model_path(o)));
  const TokenDataset data = load_text_dataset(o.data, o.window);
  std::vector<Category> cats;
  if (o.categories.empty()) {
    cats.assign(kCategories.begin(), kCategories.end());
  } else {
    for (const auto& name : o.categories) {
      const auto c = parse_category(name);
      detail::require(c.has_value(), ErrorKind::invalid_config, "unknown category " + name);
      cats.push_back(*c);
    }
  }
  std::set<LayerId> needed;
  for (Category c : cats)
    for (int l = 0; l < model->config.n_layers; ++l) needed.insert({l, c});
  const auto bases = load_bases(stats_path(o), needed);

  std::vector<SweepPoint> points;
  for (Category c : cats) {
    const auto part = sensitivity_sweep(model, c, o.ratios, data, *bases);
    points.insert(points.end(), part.begin(), part.end());
  }
  std::ostringstream csv;
  write_sweep_csv(csv, points);
  const fs::path path = out_path(o, o.output, "sweep.csv");
  write_text(path, csv.str());
  std::cout << "wrote " << points.size() << " sweep rows to " << path.string() << "\n";
  return 0;
}

int run_search(const Options& o, bool epochs_given) {
  require_data(o);
  check_rho(o.rho);
  auto model = std::make_shared<const Model>(load_model(model_path(o)));
  const AllocationSpace space(scheme_for(parse_scheme_name(o.scheme), model->config), model->config);
  const auto bases = load_bases(stats_path(o), scheme_layers(space.scheme()));
  const TokenDataset pool = load_text_dataset(o.data, o.window);

  SearchConfig cfg = o.search;
  cfg.seed = o.seed;
  if (!o.warm_start.empty()) {
    // With a prior, --epochs counts the evaluations after it.
    const Allocation prior = parse_allocation(read_text_file(o.warm_start), model->config, o.rho);
    cfg = warm_start(prior, cfg, space, epochs_given ? o.search.epochs : 20);
  }
  cfg.validate();
  const ValidationSet val =
      select_validation(model, pool, space, o.rho, cfg.probe_allocations, cfg.top_k, *bases, o.seed);
  const SearchResult res = bo_search(model, space, o.rho, bases, val, cfg, make_clock());

  const fs::path dir(o.output_dir);
  write_text(out_path(o, o.output, "allocation.json"), allocation_to_json(res.best).dump(2) + "\n");
  std::ostringstream log;
  write_jsonl(log, res.log);
  write_text(dir / "observations.jsonl", log.str());

  std::printf("best H=%.6f ppl=%.6f rkl=%.6f at epoch %d\n", res.best_eval.h, res.best_eval.ppl,
              res.best_eval.rkl, res.log.records[res.best_index].epoch);
  return 0;
}

Allocation load_allocation(const fs::path& path, const ModelConfig& cfg, double rho) {
  return parse_allocation(read_text_file(path), cfg, rho);
}

int run_compress(const Options& o) {
  auto model = std::make_shared<const Model>(load_model(model_path(o)));
  const Allocation alloc = load_allocation(out_path(o, o.allocation, "allocation.json"), model->config, o.rho);
  const auto bases = load_bases(stats_path(o), allocated_layers(alloc));
  const CompressedModel cm = compress_model(model, alloc, *bases);
  const fs::path path = out_path(o, o.output, "compressed.btns");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  save_compressed(path, cm);
  std::printf("params base=%llu compressed=%llu ratio=%.6f\n",
              static_cast<unsigned long long>(param_count(*model)), static_cast<unsigned long long>(param_count(cm)),
              compression_ratio(cm));
  return 0;
}

/// Column-stacked layer inputs (and outputs) seen while running `data`.
struct Capture {
  std::map<LayerId, std::vector<Eigen::MatrixXd>> inputs, outputs;

  static Eigen::MatrixXd stack(const std::vector<Eigen::MatrixXd>& parts) {
    Eigen::Index cols = 0;
    for (const auto& p : parts) cols += p.cols();
    Eigen::MatrixXd out(parts.front().rows(), cols);
    Eigen::Index at = 0;
    for (const auto& p : parts) {
      out.middleCols(at, p.cols()) = p;
      at += p.cols();
    }
    return out;
  }
};

Capture capture(const Model& base, const LayerOverrides& over, const TokenDataset& data,
                const std::set<LayerId>& ids) {
  Capture c;
  const FeatureTap tap = [&](const LayerId& id, const Eigen::MatrixXd& in, const Eigen::MatrixXd& out) {
    if (!ids.count(id)) return;
    c.inputs[id].push_back(in);
    c.outputs[id].push_back(out);
  };
  for (const auto& seq : data.sequences) forward(base, std::span<const int>(seq), over, &tap);
  return c;
}

/// Trains one adapter per factored layer: inputs from the compressed network,
/// targets from the original one.
int run_posttrain(const Options& o) {
  require_data(o);
  detail::require(o.max_tokens >= 1, ErrorKind::invalid_config, "--max-tokens must be positive");
  const Model original = load_model(model_path(o));
  CompressedModel cm = load_compressed(out_path(o, o.compressed, "compressed.btns"));
  detail::require(cm.base->config == original.config, ErrorKind::invalid_config,
                  "compressed checkpoint does not match the model config");
  cm.adapters.clear();
  TokenDataset data = load_text_dataset(o.data, o.window);
  std::size_t tokens = 0, keep = 0;
  while (keep < data.size() && tokens < static_cast<std::size_t>(o.max_tokens)) tokens += data.sequences[keep++].size();
  data = data.slice(0, keep);

  std::set<LayerId> ids;
  for (const auto& [id, f] : cm.factors) ids.insert(id);
  const Capture teacher = capture(original, {}, data, ids);
  const Capture student = capture(*cm.base, {&cm.factors, nullptr}, data, ids);

  PosttrainOptions opt;
  opt.steps = o.steps;
  opt.lr = o.lr;
  double before = 0.0, after = 0.0;
  for (const auto& [id, f] : cm.factors) {
    opt.r_prime = std::min(o.r_prime, f.rank);
    const Eigen::MatrixXd x = Capture::stack(student.inputs.at(id));
    const Eigen::MatrixXd target = Capture::stack(teacher.outputs.at(id));
    const PosttrainResult r = posttrain_to_target(f, x, target, opt);
    before += r.losses.front();
    after += *std::min_element(r.losses.begin(), r.losses.end());
    cm.adapters.emplace(id, r.adapter);
  }
  const fs::path path = out_path(o, o.output, "posttrained.btns");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  save_compressed(path, cm);
  std::printf("posttrained %zu layers loss %.6g -> %.6g\n", cm.factors.size(), before, after);
  return 0;
}

int run_eval(const Options& o) {
  require_data(o);
  const TokenDataset data = load_text_dataset(o.data, o.window);
  double ppl = 0.0;
  if (!o.compressed.empty()) {
    ppl = perplexity(load_compressed(o.compressed), data);
  } else {
    ppl = perplexity(load_model(model_path(o)), data);
  }
  std::printf("ppl=%.6f sequences=%zu\n", ppl, data.size());
  return 0;
}

int run_report(const Options& o) {
  require_data(o);
  const fs::path compressed_path = out_path(o, o.compressed, "compressed.btns");
  std::vector<fs::path> required = {model_path(o), compressed_path, fs::path(o.data)};
  if (!o.posttrained.empty()) required.emplace_back(o.posttrained);
  if (!o.sweep.empty()) required.emplace_back(o.sweep);
  std::string missing;
  for (const auto& p : required)
    if (!fs::exists(p)) missing += (missing.empty() ? "" : ", ") + p.string();
  if (!missing.empty()) throw Error(ErrorKind::missing_input, "missing artifacts: " + missing);

  const Model base = load_model(model_path(o));
  const CompressedModel cm = load_compressed(compressed_path);
  detail::require(cm.base->config == base.config, ErrorKind::invalid_config,
                  "compressed checkpoint does not match the model config");
  const TokenDataset data = load_text_dataset(o.data, o.window);

  std::ostringstream csv;
  csv << "section,name,ratio,value\n";
  auto row = [&](const std::string& section, const std::string& name, const std::string& ratio,
                 const std::string& value) { csv << section << ',' << name << ',' << ratio << ',' << value << '\n'; };
  row("params", "base", "", std::to_string(param_count(base)));
  row("params", "compressed", "", std::to_string(param_count(cm)));
  row("ratio", "compressed", "", fmt("%.6f", compression_ratio(cm)));
  std::optional<CompressedModel> pt;
  if (!o.posttrained.empty()) {
    pt = load_compressed(o.posttrained);
    row("params", "posttrained", "", std::to_string(param_count(*pt)));
    row("ratio", "posttrained", "", fmt("%.6f", compression_ratio(*pt)));
  }
  for (const LayerId& id : base.layer_ids()) {
    const auto it = cm.factors.find(id);
    row("rank", id.str(), "", it == cm.factors.end() ? "NA" : std::to_string(it->second.rank));
  }
  row("perplexity", "base", "", fmt("%.10g", perplexity(base, data)));
  row("perplexity", "compressed", "", fmt("%.10g", perplexity(cm, data)));
  if (pt) row("perplexity", "posttrained", "", fmt("%.10g", perplexity(*pt, data)));
  if (!o.sweep.empty()) {
    std::istringstream in(read_text_file(o.sweep));
    std::string line;
    std::getline(in, line);
    detail::require(line == "category,ratio,perplexity", ErrorKind::io, o.sweep + " is not a sweep CSV");
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto a = line.find(','), b = line.find(',', a + 1);
      detail::require(a != std::string::npos && b != std::string::npos, ErrorKind::io,
                      o.sweep + " has a malformed row");
      row("sweep", line.substr(0, a), line.substr(a + 1, b - a - 1), line.substr(b + 1));
    }
  }
  const fs::path path = out_path(o, o.output, "report.csv");
  write_text(path, csv.str());
  std::cout << "wrote " << path.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// Config file: a flat JSON object keyed by long flag names. Entries become
// arguments placed before the command line, skipped when the flag is given.

bool flag_given(const std::vector<std::string>& args, const std::string& flag) {
  for (const auto& a : args)
    if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
  return false;
}

std::string json_scalar(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

std::vector<std::string> config_args(const fs::path& path, const CLI::App& sub, const std::vector<std::string>& args) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::invalid_config, path.string() + ": " + e.what());
  }
  detail::require(j.is_object(), ErrorKind::invalid_config, path.string() + " must hold a JSON object");
  std::vector<std::string> out;
  for (const auto& [key, value] : j.items()) {
    std::string name = key;
    for (char& c : name)
      if (c == '_') c = '-';
    const std::string flag = "--" + name;
    if (!sub.get_option_no_throw(flag) || flag_given(args, flag)) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) out.push_back(flag);
      continue;
    }
    out.push_back(flag);
    if (value.is_array()) {
      for (const auto& v : value) out.push_back(json_scalar(v));
    } else {
      out.push_back(json_scalar(value));
    }
  }
  return out;
}

int main_impl(int argc, char** argv) {
  Options o;
  CLI::App app{"Low-rank allocation search and compression for transformer language models", "bolaco"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "bolaco 0.1.0");

  auto common = [&](CLI::App* s) {
    s->add_option("--config", "JSON file of flag values; explicit flags win");
    s->add_option("--model", o.model, "Model checkpoint (default <output-dir>/model.btns)");
    s->add_option("--output-dir", o.output_dir, "Directory for outputs")->capture_default_str();
    s->add_option("--seed", o.seed, "Root seed for every random stream")->capture_default_str();
    s->add_option("--window", o.window, "Tokens per sequence when reading text")->capture_default_str();
  };
  auto data = [&](CLI::App* s, const char* help) { s->add_option("--data", o.data, help); };
  auto stats = [&](CLI::App* s) {
    s->add_option("--stats-dir", o.stats_dir, "Covariance directory (default <output-dir>/stats)");
  };
  auto output = [&](CLI::App* s, const char* help) { s->add_option("--output", o.output, help); };

  CLI::App* synth = app.add_subcommand("synth", "Write a seeded tiny model and synthetic text files");
  common(synth);
  synth->add_option("--calib-sequences", o.calib_sequences)->capture_default_str();
  synth->add_option("--val-sequences", o.val_sequences)->capture_default_str();
  synth->add_option("--heldout-sequences", o.heldout_sequences)->capture_default_str();

  CLI::App* calibrate = app.add_subcommand("calibrate", "Estimate pooled output covariances for every linear layer");
  common(calibrate);
  data(calibrate, "Calibration text");
  stats(calibrate);
  calibrate->add_option("--groups", o.groups, "Covariance groups m (1 gives the plain sample covariance)")
      ->capture_default_str();

  CLI::App* sweep = app.add_subcommand("sweep", "Per-category compression sensitivity sweep");
  common(sweep);
  data(sweep, "Evaluation text");
  stats(sweep);
  output(sweep, "CSV path (default <output-dir>/sweep.csv)");
  sweep->add_option("--ratios", o.ratios, "Compression ratios to evaluate")->capture_default_str();
  sweep->add_option("--categories", o.categories, "Categories to sweep (default all)");

  CLI::App* search = app.add_subcommand("search", "Bayesian optimization of the per-group compression ratios");
  common(search);
  data(search, "Validation pool text");
  stats(search);
  output(search, "Allocation path (default <output-dir>/allocation.json)");
  search->add_option("--scheme", o.scheme, "Grouping scheme: 5x1 or 5x4")->capture_default_str();
  search->add_option("--rho", o.rho, "Target compression ratio")->capture_default_str();
  CLI::Option* epochs = search->add_option("--epochs", o.search.epochs, "Objective evaluations (after the prior when warm-starting, default 20 then)")
                            ->capture_default_str();
  search->add_option("--init-points", o.search.init_points, "Random initial design size")->capture_default_str();
  search->add_option("--candidates", o.search.candidates_per_step, "Acquisition candidates per step")
      ->capture_default_str();
  search->add_option("--beta-rkl", o.search.beta_rkl, "Weight of the reverse-KL term")->capture_default_str();
  search->add_option("--probes", o.search.probe_allocations, "Probe allocations for validation selection")
      ->capture_default_str();
  search->add_option("--top-k", o.search.top_k, "Validation sequences kept")->capture_default_str();
  search->add_option("--warm-start", o.warm_start, "Prior allocation evaluated first");

  CLI::App* compress = app.add_subcommand("compress", "Apply an allocation with feature-based factorization");
  common(compress);
  stats(compress);
  output(compress, "Checkpoint path (default <output-dir>/compressed.btns)");
  compress->add_option("--allocation", o.allocation, "Allocation JSON (default <output-dir>/allocation.json)");
  compress->add_option("--rho", o.rho, "Ratio recorded for bare rank vectors")->capture_default_str();

  CLI::App* posttrain = app.add_subcommand("posttrain", "Train diagonal adapters on the factored layers");
  common(posttrain);
  data(posttrain, "Calibration text");
  output(posttrain, "Checkpoint path (default <output-dir>/posttrained.btns)");
  posttrain->add_option("--compressed", o.compressed, "Compressed checkpoint (default <output-dir>/compressed.btns)");
  posttrain->add_option("--steps", o.steps)->capture_default_str();
  posttrain->add_option("--lr", o.lr)->capture_default_str();
  posttrain->add_option("--r-prime", o.r_prime, "Adapter rank, capped at each layer's rank")->capture_default_str();
  posttrain->add_option("--max-tokens", o.max_tokens, "Calibration tokens used per layer")->capture_default_str();

  CLI::App* eval = app.add_subcommand("eval", "Perplexity of a base or compressed checkpoint");
  common(eval);
  data(eval, "Evaluation text");
  eval->add_option("--compressed", o.compressed, "Compressed checkpoint (evaluated instead of --model)");

  CLI::App* report = app.add_subcommand("report", "CSV of parameters, ranks, perplexities and sweeps");
  common(report);
  data(report, "Held-out text");
  output(report, "CSV path (default <output-dir>/report.csv)");
  report->add_option("--compressed", o.compressed, "Compressed checkpoint (default <output-dir>/compressed.btns)");
  report->add_option("--posttrained", o.posttrained, "Post-trained checkpoint");
  report->add_option("--sweep", o.sweep, "Sweep CSV to include");

  std::vector<std::string> args(argv + 1, argv + argc);
  // Splice config-file values in right after the subcommand name.
  for (std::size_t i = 0; i + 1 < args.size(); ++i) {
    std::string path;
    std::size_t span = 0;
    if (args[i] == "--config") {
      path = args[i + 1];
      span = 2;
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      span = 1;
    } else {
      continue;
    }
    CLI::App* sub = args.empty() ? nullptr : app.get_subcommand_no_throw(args.front());
    detail::require(sub != nullptr, ErrorKind::invalid_config, "--config must follow a subcommand");
    args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i + span));
    const auto extra = config_args(path, *sub, args);
    args.insert(args.begin() + 1, extra.begin(), extra.end());
    break;
  }
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 3;
  }

  if (*synth) return run_synth(o);
  if (*calibrate) return run_calibrate(o);
  if (*sweep) return run_sweep(o);
  if (*search) return run_search(o, epochs->count() > 0);
  if (*compress) return run_compress(o);
  if (*posttrain) return run_posttrain(o);
  if (*eval) return run_eval(o);
  if (*report) return run_report(o);
  return 3;
}

}  // namespace
}  // namespace bolaco::cli

int main(int argc, char** argv) {
  try {
    return bolaco::cli::main_impl(argc, argv);
  } catch (const bolaco::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return bolaco::exit_code(e.kind());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
}
