#include "harness.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <random>
#include <sstream>
#include <string_view>
#include <thread>

#include "fmil/discrim.hpp"
#include "fmil/divergence.hpp"
#include "fmil/imitation.hpp"
#include "fmil/smm.hpp"
#include "fmil/soft_rl.hpp"
#include "fmil/tabular.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace fmil::harness {

namespace {

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string line_tag(int line) { return " (line " + std::to_string(line) + ")"; }

/// Cuts an unquoted '#' comment off the line.
std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (c == '"' && (i == 0 || line[i - 1] != '\\')) quoted = !quoted;
    if (c == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

bool parse_number(const std::string& text, double* out) {
  if (text.empty()) return false;
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (end != text.c_str() + text.size()) return false;
  *out = v;
  return true;
}

std::string unquote(const std::string& text, int line) {
  if (text.size() < 2 || text.front() != '"' || text.back() != '"') {
    throw ConfigError("unterminated string" + line_tag(line));
  }
  std::string out;
  for (std::size_t i = 1; i + 1 < text.size(); ++i) {
    if (text[i] == '\\' && i + 2 < text.size()) {
      ++i;
      out.push_back(text[i]);
    } else {
      out.push_back(text[i]);
    }
  }
  return out;
}

std::vector<std::string> split_top_level(const std::string& body) {
  std::vector<std::string> parts;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < body.size(); ++i) {
    const char c = body[i];
    if (c == '"' && (i == 0 || body[i - 1] != '\\')) quoted = !quoted;
    if (c == ',' && !quoted) {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!trim(cur).empty() || !parts.empty()) parts.push_back(cur);
  return parts;
}

ConfigValue parse_value(const std::string& raw, int line) {
  const std::string text = trim(raw);
  if (text.empty()) throw ConfigError("missing value" + line_tag(line));
  if (text == "true") return true;
  if (text == "false") return false;
  if (text.front() == '"') return unquote(text, line);
  if (text.front() == '[') {
    if (text.back() != ']') throw ConfigError("unterminated list" + line_tag(line));
    const std::vector<std::string> parts =
        split_top_level(text.substr(1, text.size() - 2));
    if (parts.empty()) return std::vector<double>{};
    if (trim(parts.front()).size() > 0 && trim(parts.front()).front() == '"') {
      std::vector<std::string> out;
      for (const std::string& p : parts) out.push_back(unquote(trim(p), line));
      return out;
    }
    std::vector<double> out;
    for (const std::string& p : parts) {
      double v = 0.0;
      if (!parse_number(trim(p), &v)) {
        throw ConfigError("list element '" + trim(p) + "' is not a number" + line_tag(line));
      }
      out.push_back(v);
    }
    return out;
  }
  double v = 0.0;
  if (parse_number(text, &v)) return v;
  throw ConfigError("value '" + text + "' is not a number, bool, string, or list" +
                    line_tag(line));
}

std::string render_value(const ConfigValue& value) {
  struct Render {
    std::string operator()(bool v) const { return v ? "true" : "false"; }
    std::string operator()(double v) const { return fmt(v); }
    std::string operator()(const std::string& v) const {
      std::string out = "\"";
      for (char c : v) {
        if (c == '"' || c == '\\') out.push_back('\\');
        out.push_back(c);
      }
      out.push_back('"');
      return out;
    }
    std::string operator()(const std::vector<double>& v) const {
      std::string out = "[";
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ", ";
        out += fmt(v[i]);
      }
      return out + "]";
    }
    std::string operator()(const std::vector<std::string>& v) const {
      std::string out = "[";
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ", ";
        out += (*this)(v[i]);
      }
      return out + "]";
    }
  };
  return std::visit(Render{}, value);
}

bool valid_key(const std::string& key) {
  if (key.empty()) return false;
  for (char c : key) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '.' && c != '-') {
      return false;
    }
  }
  return true;
}

}  // namespace

Config Config::parse(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  std::string raw;
  std::string prefix;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') {
      const std::string section = trim(line.substr(1, line.size() - 2));
      if (!valid_key(section)) {
        throw ConfigError("bad section name '" + section + "'" + line_tag(line_no));
      }
      prefix = section + ".";
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("expected 'key = value'" + line_tag(line_no));
    }
    const std::string key = trim(line.substr(0, eq));
    if (!valid_key(key)) {
      throw ConfigError("bad key '" + key + "'" + line_tag(line_no));
    }
    cfg.entries_[prefix + key] = parse_value(line.substr(eq + 1), line_no);
  }
  return cfg;
}

Config Config::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file: " + path);
  std::ostringstream body;
  body << in.rdbuf();
  try {
    return parse(body.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

bool Config::has(const std::string& key) const { return entries_.count(key) > 0; }

bool Config::get_bool(const std::string& key, bool fallback) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  if (const bool* v = std::get_if<bool>(&it->second)) return *v;
  throw ConfigError("field '" + key + "' must be true or false");
}

double Config::get_number(const std::string& key, double fallback) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  if (const double* v = std::get_if<double>(&it->second)) return *v;
  throw ConfigError("field '" + key + "' must be a number");
}

int Config::get_int(const std::string& key, int fallback) const {
  const double v = get_number(key, fallback);
  const double r = std::round(v);
  if (std::abs(v - r) > 1e-9 || std::abs(r) > 2147483647.0) {
    throw ConfigError("field '" + key + "' must be an integer");
  }
  return int(r);
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  if (const std::string* v = std::get_if<std::string>(&it->second)) return *v;
  throw ConfigError("field '" + key + "' must be a quoted string");
}

std::vector<double> Config::get_numbers(const std::string& key,
                                        const std::vector<double>& fallback) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  if (const auto* v = std::get_if<std::vector<double>>(&it->second)) return *v;
  if (const double* v = std::get_if<double>(&it->second)) return {*v};
  throw ConfigError("field '" + key + "' must be a number list");
}

std::vector<std::string> Config::get_strings(const std::string& key,
                                             const std::vector<std::string>& fallback) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  if (const auto* v = std::get_if<std::vector<std::string>>(&it->second)) return *v;
  if (const std::string* v = std::get_if<std::string>(&it->second)) return {*v};
  throw ConfigError("field '" + key + "' must be a string list");
}

void Config::set(const std::string& key, ConfigValue value) {
  entries_[key] = std::move(value);
}

std::string Config::canonical() const {
  std::string out;
  for (const auto& [key, value] : entries_) {
    out += key;
    out += " = ";
    out += render_value(value);
    out += "\n";
  }
  return out;
}

std::string run_id(const Config& cfg, std::uint64_t seed) {
  const std::string text = cfg.canonical() + "seed = " + std::to_string(seed) + "\n";
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void atomic_write(const std::string& path, const std::string& content) {
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  static std::atomic<unsigned> counter{0};
  const fs::path tmp = target.string() + ".tmp" + std::to_string(counter.fetch_add(1));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write file: " + tmp.string());
    out << content;
  }
  fs::rename(tmp, target);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingRun("cannot read file: " + path);
  std::ostringstream body;
  body << in.rdbuf();
  return body.str();
}

namespace {

std::uint64_t resolve_seed(const Config& cfg, const RunOptions& opt) {
  if (opt.seed_override >= 0) return std::uint64_t(opt.seed_override);
  return std::uint64_t(cfg.get_int("seed", 0));
}

struct GridworldFixture {
  TabularMdp mdp;
  TabularMdp eval_mdp;
  TabularPolicy expert;
};

GridworldFixture make_gridworld_fixture(const Config& cfg) {
  GridworldFixture fx;
  const int side = cfg.get_int("env.side", 5);
  const double gamma = cfg.get_number("env.gamma", 0.99);
  const int horizon = cfg.get_int("env.horizon", 40);
  fx.mdp = make_gridworld(side, gamma);
  fx.eval_mdp = make_gridworld_finite(side, horizon);
  SoftViConfig vi;
  vi.temperature = cfg.get_number("expert.temperature", 1.0);
  fx.expert = soft_value_iteration(fx.mdp, fx.mdp.reward, vi).policy;
  return fx;
}

DemoSet demos_for_seed(const GridworldFixture& fx, int n_trajectories, int factor,
                       std::uint64_t seed) {
  const std::vector<Trajectory> trajs = sample_trajectories(
      fx.eval_mdp, fx.expert, n_trajectories, seed, "gridworld-soft-expert");
  return subsample_demos(trajs, factor, seed);
}

std::string report_to_csv(const std::vector<TrainRow>& report) {
  std::string out = "iter,divergence,return_det,return_stoch,disc_loss,seconds\n";
  for (const TrainRow& row : report) {
    out += std::to_string(row.iteration);
    out += "," + fmt(row.divergence);
    out += "," + fmt(row.return_det);
    out += "," + fmt(row.return_stoch);
    out += "," + fmt(row.disc_loss);
    out += "," + fmt(row.seconds) + "\n";
  }
  return out;
}

}  // namespace

int run_expert_gen(const Config& cfg, const RunOptions& opt) {
  const std::uint64_t seed = resolve_seed(cfg, opt);
  const int n = cfg.get_int("demos.n_trajectories", 4);
  const int factor = cfg.get_int("demos.subsample_factor", 20);
  if (n < 1) throw ConfigError("field 'demos.n_trajectories' must be positive");
  if (factor < 1) throw ConfigError("field 'demos.subsample_factor' must be positive");

  const fs::path path = fs::path(opt.out_dir) / ("demos_seed" + std::to_string(seed) + ".jsonl");
  if (fs::exists(path) && !opt.force) {
    std::printf("expert-gen: %s exists, skipping (use --force to rewrite)\n",
                path.string().c_str());
    return 0;
  }
  const GridworldFixture fx = make_gridworld_fixture(cfg);
  const DemoSet demos = demos_for_seed(fx, n, factor, seed);
  atomic_write(path.string(), demos_to_jsonl(demos));
  std::printf("expert-gen: wrote %s (%d trajectories, %d pairs)\n", path.string().c_str(),
              int(demos.trajectories.size()), demos.n_pairs());
  return 0;
}

std::vector<BenchmarkCell> expand_benchmark_grid(const Config& cfg, const RunOptions& opt) {
  const std::vector<std::string> algorithms =
      cfg.get_strings("benchmark.algorithms", {"bc", "airl", "fairl"});
  const std::vector<double> demo_counts = cfg.get_numbers("benchmark.n_demos", {4.0});
  // 0 is the "per-algorithm default" sentinel resolved at run time.
  const std::vector<double> scales = cfg.get_numbers("benchmark.reward_scales", {0.0});
  std::vector<double> seeds;
  if (opt.seed_override >= 0) {
    seeds = {double(opt.seed_override)};
  } else {
    seeds = cfg.get_numbers("benchmark.seeds", {0.0, 1.0, 2.0});
  }

  std::vector<BenchmarkCell> cells;
  for (const std::string& algo : algorithms) {
    if (algo != "bc" && algo != "dagger") adversarial_reward_from_name(algo);
    for (double nd : demo_counts) {
      if (nd < 1.0) throw ConfigError("field 'benchmark.n_demos' entries must be positive");
      for (double scale : scales) {
        if (scale < 0.0) {
          throw ConfigError("field 'benchmark.reward_scales' entries must be nonnegative");
        }
        for (double seed : seeds) {
          BenchmarkCell cell;
          cell.algorithm = algo;
          cell.n_demos = int(nd);
          cell.reward_scale = scale;
          cell.seed = std::uint64_t(seed);
          cells.push_back(cell);
        }
      }
    }
  }
  if (cells.empty()) throw ConfigError("benchmark grid is empty");
  return cells;
}

namespace {

struct CellOutcome {
  std::string status = "ok";
  double divergence = std::numeric_limits<double>::quiet_NaN();
  int checkpoint_iteration = 0;
  EvalStats det;
  EvalStats stoch;
};

Config cell_config(const Config& base, const BenchmarkCell& cell) {
  Config cfg = base;
  cfg.set("cell.algorithm", cell.algorithm);
  cfg.set("cell.n_demos", double(cell.n_demos));
  cfg.set("cell.reward_scale", cell.reward_scale);
  return cfg;
}

json outcome_to_record(const Config& resolved, const BenchmarkCell& cell,
                       const std::string& id, const CellOutcome& out) {
  json rec;
  rec["run_id"] = id;
  rec["seed"] = cell.seed;
  rec["status"] = out.status;
  rec["report_path"] = "report.csv";
  json cfg_json = json::object();
  for (const auto& [key, value] : resolved.entries()) cfg_json[key] = render_value(value);
  rec["config"] = cfg_json;
  json metrics;
  metrics["divergence"] = out.divergence;
  metrics["checkpoint_iteration"] = out.checkpoint_iteration;
  metrics["return_det_mean"] = out.det.mean;
  metrics["return_det_std"] = out.det.stddev;
  metrics["return_stoch_mean"] = out.stoch.mean;
  metrics["return_stoch_std"] = out.stoch.stddev;
  rec["final_metrics"] = metrics;
  return rec;
}

CellOutcome outcome_from_record(const json& rec) {
  // NaN metrics (BC has no divergence) serialize as null; read them back.
  const auto number = [](const json& metrics, const char* key) {
    const json& v = metrics.at(key);
    return v.is_number() ? v.get<double>() : std::numeric_limits<double>::quiet_NaN();
  };
  CellOutcome out;
  out.status = rec.at("status").get<std::string>();
  const json& metrics = rec.at("final_metrics");
  out.divergence = number(metrics, "divergence");
  out.checkpoint_iteration = metrics.at("checkpoint_iteration").get<int>();
  out.det.mean = number(metrics, "return_det_mean");
  out.det.stddev = number(metrics, "return_det_std");
  out.stoch.mean = number(metrics, "return_stoch_mean");
  out.stoch.stddev = number(metrics, "return_stoch_std");
  return out;
}

CellOutcome execute_cell(const Config& cfg, const RunOptions& opt, const BenchmarkCell& cell,
                         const GridworldFixture& fx, const fs::path& run_dir) {
  CellOutcome out;
  const int factor = cfg.get_int("demos.subsample_factor", 20);
  const int eval_episodes = cfg.get_int("eval.episodes", 50);
  const DemoSet demos = demos_for_seed(fx, cell.n_demos, factor, cell.seed);
  atomic_write((run_dir / "demos.jsonl").string(), demos_to_jsonl(demos));

  const std::uint64_t det_seed = cell.seed * 1000003ULL + 777;
  const std::uint64_t stoch_seed = cell.seed * 1000003ULL + 778;
  std::vector<TrainRow> report;

  if (cell.algorithm == "bc" || cell.algorithm == "dagger") {
    const auto tick = std::chrono::steady_clock::now();
    TabularPolicy pi = behavioural_cloning(demos, fx.mdp.n_states, fx.mdp.n_actions,
                                           cfg.get_number("bc.laplace", 1e-3));
    if (cell.algorithm == "dagger") {
      DaggerConfig dcfg;
      dcfg.iterations = cfg.get_int("dagger.iterations", 5);
      dcfg.rollouts_per_iteration = cfg.get_int("dagger.rollouts_per_iteration", 10);
      dcfg.laplace = cfg.get_number("bc.laplace", 1e-3);
      dcfg.seed = cell.seed;
      pi = dagger(fx.eval_mdp, fx.expert, demos, dcfg);
    }
    out.det = evaluate_policy_stats(fx.eval_mdp, pi, EvalMode::Deterministic, eval_episodes,
                                    det_seed);
    out.stoch = evaluate_policy_stats(fx.eval_mdp, pi, EvalMode::Stochastic, eval_episodes,
                                      stoch_seed);
    TrainRow row;
    row.return_det = out.det.mean;
    row.return_stoch = out.stoch.mean;
    row.divergence = std::numeric_limits<double>::quiet_NaN();
    if (!opt.no_timing) {
      row.seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - tick).count();
    }
    report.push_back(row);
  } else {
    ILConfig il;
    il.algorithm = adversarial_reward_from_name(cell.algorithm);
    il.iterations = cfg.get_int("train.iterations", 200);
    il.reward_scale = cell.reward_scale > 0.0 ? cell.reward_scale
                                              : default_reward_scale(il.algorithm);
    il.rl_temperature = cfg.get_number("train.rl_temperature", 0.05);
    il.damping_alpha = cfg.get_number("train.damping_alpha", 1.0);
    il.line_search = cfg.get_bool("train.line_search", true);
    il.gail_entropy_weight = cfg.get_number("train.gail_entropy_weight", 0.0);
    il.logit_clip = cfg.get_number("train.logit_clip", 10.0);
    il.validation_every = cfg.get_int("train.validation_every", 10);
    il.validation_episodes = cfg.get_int("train.validation_episodes", 10);
    il.seed = cell.seed;
    il.record_occupancies = true;
    il.no_timing = opt.no_timing;

    const Eigen::MatrixXd target =
        demo_occupancy(demos, fx.mdp.n_states, fx.mdp.n_actions);
    const AdversarialResult res = adversarial_il(fx.mdp, target, il, &fx.eval_mdp);
    report = res.report;
    out.divergence = report.back().divergence;

    // Checkpoint selection: best stochastic validation return among the
    // iterations where validation actually ran.
    int best = -1;
    for (int k = 0; k < int(report.size()); ++k) {
      if (k % il.validation_every != 0 && k != int(report.size()) - 1) continue;
      if (best < 0 || report[std::size_t(k)].return_stoch >
                          report[std::size_t(best)].return_stoch) {
        best = k;
      }
    }
    out.checkpoint_iteration = best;
    const TabularPolicy pi =
        policy_from_occupancy(res.occupancy_snapshots[std::size_t(best)]);
    out.det = evaluate_policy_stats(fx.eval_mdp, pi, EvalMode::Deterministic, eval_episodes,
                                    det_seed);
    out.stoch = evaluate_policy_stats(fx.eval_mdp, pi, EvalMode::Stochastic, eval_episodes,
                                      stoch_seed);
  }

  atomic_write((run_dir / "report.csv").string(), report_to_csv(report));
  return out;
}

struct SummaryGroup {
  std::string algorithm;
  int n_demos = 0;
  double reward_scale = 0.0;
  std::vector<const CellOutcome*> rows;
};

std::string summary_csv(const std::vector<BenchmarkCell>& cells,
                        const std::vector<CellOutcome>& outcomes) {
  std::vector<SummaryGroup> groups;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (outcomes[i].status != "ok") continue;
    SummaryGroup* group = nullptr;
    for (SummaryGroup& g : groups) {
      if (g.algorithm == cells[i].algorithm && g.n_demos == cells[i].n_demos &&
          g.reward_scale == cells[i].reward_scale) {
        group = &g;
        break;
      }
    }
    if (group == nullptr) {
      groups.push_back({cells[i].algorithm, cells[i].n_demos, cells[i].reward_scale, {}});
      group = &groups.back();
    }
    group->rows.push_back(&outcomes[i]);
  }

  const auto mean_std = [](const std::vector<double>& xs) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= double(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var = xs.size() > 1 ? var / double(xs.size() - 1) : 0.0;
    return std::pair<double, double>(mean, std::sqrt(var));
  };

  std::string out =
      "algorithm,n_demos,reward_scale,seeds,"
      "return_det_mean,return_det_std,return_stoch_mean,return_stoch_std\n";
  for (const SummaryGroup& g : groups) {
    std::vector<double> det;
    std::vector<double> stoch;
    for (const CellOutcome* row : g.rows) {
      det.push_back(row->det.mean);
      stoch.push_back(row->stoch.mean);
    }
    const auto [dm, ds] = mean_std(det);
    const auto [sm, ss] = mean_std(stoch);
    out += g.algorithm;
    out += "," + std::to_string(g.n_demos);
    out += "," + fmt(g.reward_scale);
    out += "," + std::to_string(g.rows.size());
    out += "," + fmt(dm) + "," + fmt(ds) + "," + fmt(sm) + "," + fmt(ss) + "\n";
  }
  return out;
}

}  // namespace

int run_benchmark(const Config& cfg, const RunOptions& opt) {
  const std::vector<BenchmarkCell> cells = expand_benchmark_grid(cfg, opt);
  const GridworldFixture fx = make_gridworld_fixture(cfg);
  std::vector<CellOutcome> outcomes(cells.size());

  std::atomic<std::size_t> next{0};
  const auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      const BenchmarkCell& cell = cells[i];
      const Config resolved = cell_config(cfg, cell);
      const std::string id = run_id(resolved, cell.seed);
      const fs::path run_dir = fs::path(opt.out_dir) / "runs" / id;
      const fs::path record_path = run_dir / "record.json";

      if (!opt.force && fs::exists(record_path)) {
        try {
          outcomes[i] = outcome_from_record(json::parse(read_file(record_path.string())));
          continue;
        } catch (const std::exception&) {
          // Unreadable record: fall through and recompute.
        }
      }
      CellOutcome out;
      try {
        out = execute_cell(cfg, opt, cell, fx, run_dir);
      } catch (const std::exception& e) {
        out = CellOutcome{};
        out.status = std::string("failed: ") + e.what();
      }
      atomic_write(record_path.string(),
                   outcome_to_record(resolved, cell, id, out).dump(2) + "\n");
      outcomes[i] = out;
    }
  };

  const int jobs = std::max(1, opt.jobs);
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  atomic_write((fs::path(opt.out_dir) / "summary.csv").string(),
               summary_csv(cells, outcomes));

  int failed = 0;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (outcomes[i].status != "ok") {
      ++failed;
      std::fprintf(stderr, "benchmark: %s n_demos=%d seed=%llu %s\n",
                   cells[i].algorithm.c_str(), cells[i].n_demos,
                   static_cast<unsigned long long>(cells[i].seed),
                   outcomes[i].status.c_str());
    }
  }
  std::printf("benchmark: %zu runs, %d failed, summary at %s\n", cells.size(), failed,
              (fs::path(opt.out_dir) / "summary.csv").string().c_str());
  return failed == 0 ? 0 : 1;
}

namespace {

struct IdentityEntry {
  std::string name;
  double residual = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

FiniteDistribution random_distribution(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> uni(0.05, 1.0);
  Eigen::VectorXd mass(n);
  for (int i = 0; i < n; ++i) mass[i] = uni(rng);
  return FiniteDistribution(mass / mass.sum());
}

FiniteDistribution flat_joint(const Eigen::MatrixXd& joint) {
  Eigen::VectorXd mass = Eigen::Map<const Eigen::VectorXd>(joint.data(), joint.size());
  return FiniteDistribution(mass / mass.sum());
}

IdentityEntry make_entry(const std::string& name, double residual, double tolerance) {
  return {name, residual, tolerance, residual <= tolerance};
}

}  // namespace

int run_identity_suite(const Config& cfg, const RunOptions& opt) {
  const std::uint64_t seed = resolve_seed(cfg, opt);
  const bool fairl_sign_flip = cfg.get_bool("identity.fairl_sign_flip", false);
  std::mt19937_64 rng(seed * 2654435761ULL + 17);
  std::vector<IdentityEntry> entries;

  const FDivergenceKind kinds[] = {FDivergenceKind::ReverseKL, FDivergenceKind::ForwardKL,
                                   FDivergenceKind::JensenShannon};
  {
    double tight = 0.0;
    double dominated = 0.0;
    std::normal_distribution<double> noise(0.0, 1.0);
    for (FDivergenceKind kind : kinds) {
      const FDivergence f(kind);
      for (int rep = 0; rep < 40; ++rep) {
        const int n = 2 + int(rng() % 6);
        const FiniteDistribution p = random_distribution(rng, n);
        const FiniteDistribution q = random_distribution(rng, n);
        const double d = eval_divergence(f, p, q);
        Eigen::VectorXd t_star(n);
        for (int i = 0; i < n; ++i) t_star[i] = f.optimal_t(p[i] / q[i]);
        tight = std::max(tight, std::abs(variational_bound(f, p, q, t_star) - d));
        Eigen::VectorXd t = t_star;
        for (int i = 0; i < n; ++i) {
          t[i] += 0.5 * noise(rng);
          const double sup = f.conjugate_domain_sup();
          if (std::isfinite(sup)) t[i] = std::min(t[i], sup - 1e-3);
        }
        dominated = std::max(dominated, variational_bound(f, p, q, t) - d);
      }
    }
    entries.push_back(make_entry("variational_bound_tight_at_optimum", tight, 1e-9));
    entries.push_back(make_entry("variational_bound_never_exceeds", dominated, 1e-9));
  }

  {
    double worst = 0.0;
    for (int rep = 0; rep < 40; ++rep) {
      const int n = 2 + int(rng() % 6);
      const FiniteDistribution p = random_distribution(rng, n);
      const FiniteDistribution q = random_distribution(rng, n);
      worst = std::max(worst, std::abs(forward_kl_degeneracy_check(p, q) - 1.0));
    }
    entries.push_back(make_entry("forward_kl_degeneracy", worst, 1e-9));
  }

  {
    const TabularMdp mdp = make_gridworld(5, 0.99);
    SoftViConfig vi;
    const TabularPolicy expert = soft_value_iteration(mdp, mdp.reward, vi).policy;
    const Eigen::MatrixXd rho_e = occupancy_measure(mdp, expert).joint;
    const FDivergence fkl(FDivergenceKind::ForwardKL);
    double airl_worst = 0.0;
    double fairl_worst = 0.0;
    for (int rep = 0; rep < 10; ++rep) {
      const TabularPolicy pi =
          TabularPolicy::random(mdp.n_states, mdp.n_actions, seed * 31 + rep);
      const Eigen::MatrixXd rho_pi = occupancy_measure(mdp, pi).joint;
      const ExactTabularDiscriminator disc(rho_e, rho_pi, 1e18);
      double e_airl = 0.0;
      double e_fairl = 0.0;
      for (int s = 0; s < mdp.n_states; ++s) {
        for (int a = 0; a < mdp.n_actions; ++a) {
          const double l = disc.logit(s, a);
          e_airl += rho_pi(s, a) * adversarial_reward(AdversarialReward::Airl, l);
          double r = adversarial_reward(AdversarialReward::Fairl, l);
          if (fairl_sign_flip) r = -r;
          e_fairl += rho_pi(s, a) * r;
        }
      }
      const double kl_pi_e =
          eval_divergence_clamped(fkl, flat_joint(rho_pi), flat_joint(rho_e));
      const double kl_e_pi =
          eval_divergence_clamped(fkl, flat_joint(rho_e), flat_joint(rho_pi));
      airl_worst = std::max(airl_worst, std::abs(e_airl + kl_pi_e));
      fairl_worst = std::max(fairl_worst, std::abs(e_fairl + kl_e_pi));
    }
    entries.push_back(make_entry("airl_expected_reward_is_negative_reverse_kl",
                                 airl_worst, 1e-9));
    entries.push_back(make_entry("fairl_expected_reward_is_negative_forward_kl",
                                 fairl_worst, 1e-9));
  }

  {
    double rkl_worst = 0.0;
    double fkl_worst = 0.0;
    for (int rep = 0; rep < 15; ++rep) {
      const int n = 2 + int(rng() % 2);
      const FiniteDistribution p = random_distribution(rng, n);
      const FiniteDistribution q = random_distribution(rng, n);
      rkl_worst = std::max(
          rkl_worst,
          std::abs(
              psi_conjugate_identity_check(FDivergence(FDivergenceKind::ReverseKL), p, q)
                  .gap));
      fkl_worst = std::max(
          fkl_worst,
          std::abs(
              psi_conjugate_identity_check(FDivergence(FDivergenceKind::ForwardKL), p, q)
                  .gap));
    }
    entries.push_back(make_entry("psi_conjugate_reverse_kl", rkl_worst, 1e-3));
    entries.push_back(make_entry("psi_conjugate_forward_kl", fkl_worst, 1e-3));
  }

  {
    const int n_traj = cfg.get_int("identity.trajectories", 4000);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const auto run_check = [&](const TabularMdp& mdp, const char* name) {
      const TabularPolicy pi = TabularPolicy::random(mdp.n_states, mdp.n_actions, seed + 5);
      Eigen::MatrixXd h(mdp.n_states, mdp.n_actions);
      for (int s = 0; s < mdp.n_states; ++s) {
        for (int a = 0; a < mdp.n_actions; ++a) h(s, a) = uni(rng);
      }
      const IdentityCheckResult r =
          trajectory_occupancy_identity_check(mdp, pi, h, n_traj, seed + 7);
      const double units =
          std::abs(r.mc_value - r.exact_value) / std::max(r.std_error, 1e-300);
      entries.push_back(make_entry(name, units, 3.0));
    };
    run_check(make_gridworld_finite(4, 15), "trajectory_sums_match_occupancy_finite");
    run_check(make_gridworld(4, 0.9), "trajectory_sums_match_occupancy_discounted");
  }

  {
    double worst = 0.0;
    for (double l = -8.0; l <= 8.0; l += 1e-3) {
      const double lhs = adversarial_reward(AdversarialReward::Airl, l) -
                         adversarial_reward(AdversarialReward::Gail, l);
      worst = std::max(worst, std::abs(lhs - softplus(l)));
    }
    entries.push_back(make_entry("airl_minus_gail_is_softplus", worst, 1e-12));
  }

  json report;
  report["identities"] = json::array();
  bool all_pass = true;
  for (const IdentityEntry& e : entries) {
    json row;
    row["name"] = e.name;
    row["residual"] = e.residual;
    row["tolerance"] = e.tolerance;
    row["pass"] = e.pass;
    report["identities"].push_back(row);
    all_pass = all_pass && e.pass;
    std::printf("identity %-45s residual %.3e tol %.1e %s\n", e.name.c_str(), e.residual,
                e.tolerance, e.pass ? "pass" : "FAIL");
  }
  report["all_pass"] = all_pass;
  atomic_write((fs::path(opt.out_dir) / "identity_report.json").string(),
               report.dump(2) + "\n");
  return all_pass ? 0 : 1;
}

namespace {

FDivergenceKind kind_from_config_name(const std::string& name) {
  if (name == "reverse_kl") return FDivergenceKind::ReverseKL;
  if (name == "forward_kl") return FDivergenceKind::ForwardKL;
  if (name == "jensen_shannon") return FDivergenceKind::JensenShannon;
  throw ConfigError("field 'smm.divergence' must be one of reverse_kl, forward_kl, "
                    "jensen_shannon; got '" +
                    name + "'");
}

Eigen::MatrixXd points_from_csv(const std::string& text, int x_col, int y_col) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::array<double, 2>> pts;
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (t.empty()) continue;
    std::istringstream row(t);
    std::string fieldtext;
    std::vector<double> fields;
    bool numeric = true;
    while (std::getline(row, fieldtext, ',')) {
      double v = 0.0;
      if (!parse_number(trim(fieldtext), &v)) {
        numeric = false;
        break;
      }
      fields.push_back(v);
    }
    if (!numeric) continue;  // header
    if (int(fields.size()) <= std::max(x_col, y_col)) {
      throw ConfigError("point CSV row has too few columns: " + t);
    }
    pts.push_back({fields[std::size_t(x_col)], fields[std::size_t(y_col)]});
  }
  Eigen::MatrixXd out(Eigen::Index(pts.size()), 2);
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    out(i, 0) = pts[std::size_t(i)][0];
    out(i, 1) = pts[std::size_t(i)][1];
  }
  return out;
}

std::string points_to_csv(const Eigen::MatrixXd& pts) {
  std::string out = "x,y\n";
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    out += fmt(pts(i, 0)) + "," + fmt(pts(i, 1)) + "\n";
  }
  return out;
}

std::string visited_to_csv(const Eigen::MatrixXd& pts, int horizon) {
  std::string out = "episode,t,x,y\n";
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    out += std::to_string(i / horizon) + "," + std::to_string(i % horizon);
    out += "," + fmt(pts(i, 0)) + "," + fmt(pts(i, 1)) + "\n";
  }
  return out;
}

}  // namespace

int run_smm(const Config& cfg, const RunOptions& opt) {
  const std::uint64_t seed = resolve_seed(cfg, opt);

  const TargetShape shape =
      target_shape_from_name(cfg.get_string("smm.shape", "infinity"));
  Eigen::MatrixXd target;
  int horizon = cfg.get_int("smm.horizon", default_horizon(shape));
  if (cfg.has("smm.target_csv")) {
    target = points_from_csv(read_file(cfg.get_string("smm.target_csv", "")), 0, 1);
    if (target.rows() < 2) throw ConfigError("field 'smm.target_csv' has too few points");
  } else {
    TargetConfig tc = default_target(shape, seed);
    tc.scale = cfg.get_number("smm.scale", tc.scale);
    tc.rotations = cfg.get_number("smm.rotations", tc.rotations);
    tc.noise = cfg.get_number("smm.noise", tc.noise);
    tc.n_samples = cfg.get_int("smm.n_samples", tc.n_samples);
    target = sample_target(tc);
  }

  PointMassEnv env;
  env.horizon = horizon;
  env.start_noise = cfg.get_number("smm.start_noise", env.start_noise);
  env.max_step = cfg.get_number("smm.max_step", env.max_step);

  SmmConfig sc;
  sc.iterations = cfg.get_int("smm.iterations", sc.iterations);
  sc.episodes_per_iteration =
      cfg.get_int("smm.episodes_per_iteration", sc.episodes_per_iteration);
  sc.disc_steps = cfg.get_int("smm.disc_steps", sc.disc_steps);
  sc.disc_batch = cfg.get_int("smm.disc_batch", sc.disc_batch);
  sc.policy_lr = cfg.get_number("smm.policy_lr", sc.policy_lr);
  sc.disc_lr = cfg.get_number("smm.disc_lr", sc.disc_lr);
  sc.entropy_weight = cfg.get_number("smm.entropy_weight", sc.entropy_weight);
  sc.grad_pen_weight = cfg.get_number("smm.grad_pen_weight", sc.grad_pen_weight);
  sc.logit_clip = cfg.get_number("smm.logit_clip", sc.logit_clip);
  sc.input_clip = cfg.get_number("smm.input_clip", sc.input_clip);
  sc.disc_warmup_steps = cfg.get_int("smm.disc_warmup_steps", sc.disc_warmup_steps);
  sc.reservoir_fraction = cfg.get_number("smm.reservoir_fraction", sc.reservoir_fraction);
  sc.reservoir_capacity = cfg.get_int("smm.reservoir_capacity", sc.reservoir_capacity);
  sc.disc_loss_floor = cfg.get_number("smm.disc_loss_floor", sc.disc_loss_floor);
  sc.policy_lr_half_life = cfg.get_int("smm.policy_lr_half_life", sc.policy_lr_half_life);
  sc.eval_every = cfg.get_int("smm.eval_every", sc.eval_every);
  sc.eval_episodes = cfg.get_int("smm.eval_episodes", sc.eval_episodes);
  sc.log_std_min = cfg.get_number("smm.log_std_min", sc.log_std_min);
  sc.log_std_max = cfg.get_number("smm.log_std_max", sc.log_std_max);
  const auto to_ints = [](const std::vector<double>& xs) {
    std::vector<int> out;
    for (double x : xs) out.push_back(int(std::llround(x)));
    return out;
  };
  if (cfg.has("smm.policy_hidden")) {
    sc.policy_hidden = to_ints(cfg.get_numbers("smm.policy_hidden", {}));
  }
  if (cfg.has("smm.disc_hidden")) {
    sc.disc_hidden = to_ints(cfg.get_numbers("smm.disc_hidden", {}));
  }
  sc.seed = seed;
  sc.no_timing = opt.no_timing;

  const FDivergence f(kind_from_config_name(cfg.get_string("smm.divergence", "reverse_kl")));

  const std::string id = run_id(cfg, seed);
  const fs::path run_dir = fs::path(opt.out_dir) / "runs" / id;
  const fs::path record_path = run_dir / "record.json";
  if (!opt.force && fs::exists(record_path)) {
    try {
      const json rec = json::parse(read_file(record_path.string()));
      const std::string status = rec.at("status").get<std::string>();
      std::printf("smm: run %s exists with status '%s', skipping\n", id.c_str(),
                  status.c_str());
      return status == "ok" ? 0 : 1;
    } catch (const std::exception&) {
      // Unreadable record: recompute.
    }
  }

  json rec;
  rec["run_id"] = id;
  rec["seed"] = seed;
  rec["report_path"] = "report.csv";
  json cfg_json = json::object();
  for (const auto& [key, value] : cfg.entries()) cfg_json[key] = render_value(value);
  rec["config"] = cfg_json;

  try {
    const SmmResult res = smm_train(env, target, f, sc);
    const std::string target_csv = points_to_csv(target);
    const std::string visited_csv = visited_to_csv(res.final_visited, env.horizon);
    atomic_write((run_dir / "target.csv").string(), target_csv);
    atomic_write((run_dir / "visited.csv").string(), visited_csv);
    atomic_write((run_dir / "report.csv").string(), report_to_csv(res.report));
    atomic_write((run_dir / "scatter.svg").string(),
                 smm_scatter_svg(target_csv, visited_csv));
    rec["status"] = "ok";
    json metrics;
    metrics["final_js"] = res.final_js;
    metrics["first_js"] = res.report.empty() ? res.final_js : res.report.front().divergence;
    rec["final_metrics"] = metrics;
    atomic_write(record_path.string(), rec.dump(2) + "\n");
    std::printf("smm: run %s final marginal JS %.4f\n", id.c_str(), res.final_js);
    return 0;
  } catch (const std::exception& e) {
    rec["status"] = std::string("failed: ") + e.what();
    rec["final_metrics"] = json::object();
    atomic_write(record_path.string(), rec.dump(2) + "\n");
    std::fprintf(stderr, "smm: run %s failed: %s\n", id.c_str(), e.what());
    return 1;
  }
}

namespace {

struct Series {
  std::string label;
  std::string color;
  std::vector<double> x;
  std::vector<double> y;
};

std::string svg_coord(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string svg_tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

/// Shared frame for line plots and scatters: margins, axes, tick labels.
std::string svg_plot(const std::vector<Series>& series, const std::string& title,
                     const std::string& x_label, const std::string& y_label, bool lines) {
  const double width = 640.0;
  const double height = 420.0;
  const double left = 72.0;
  const double right = 24.0;
  const double top = 36.0;
  const double bottom = 56.0;

  double x_min = std::numeric_limits<double>::infinity();
  double x_max = -x_min;
  double y_min = x_min;
  double y_max = -x_min;
  for (const Series& s : series) {
    for (double v : s.x) {
      x_min = std::min(x_min, v);
      x_max = std::max(x_max, v);
    }
    for (double v : s.y) {
      y_min = std::min(y_min, v);
      y_max = std::max(y_max, v);
    }
  }
  if (!(x_min < x_max)) {
    x_min -= 0.5;
    x_max += 0.5;
  }
  if (!(y_min < y_max)) {
    y_min -= 0.5;
    y_max += 0.5;
  }
  const double x_pad = 0.02 * (x_max - x_min);
  const double y_pad = 0.05 * (y_max - y_min);
  x_min -= x_pad;
  x_max += x_pad;
  y_min -= y_pad;
  y_max += y_pad;

  const auto px = [&](double v) {
    return left + (v - x_min) / (x_max - x_min) * (width - left - right);
  };
  const auto py = [&](double v) {
    return height - bottom - (v - y_min) / (y_max - y_min) * (height - top - bottom);
  };

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + svg_coord(width) +
         "\" height=\"" + svg_coord(height) + "\" viewBox=\"0 0 " + svg_coord(width) + " " +
         svg_coord(height) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + svg_coord(width / 2) + "\" y=\"22\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"15\">" + title + "</text>\n";

  svg += "<line x1=\"" + svg_coord(left) + "\" y1=\"" + svg_coord(height - bottom) +
         "\" x2=\"" + svg_coord(width - right) + "\" y2=\"" + svg_coord(height - bottom) +
         "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + svg_coord(left) + "\" y1=\"" + svg_coord(top) + "\" x2=\"" +
         svg_coord(left) + "\" y2=\"" + svg_coord(height - bottom) +
         "\" stroke=\"black\"/>\n";

  for (int i = 0; i <= 4; ++i) {
    const double fx = x_min + (x_max - x_min) * i / 4.0;
    const double fy = y_min + (y_max - y_min) * i / 4.0;
    svg += "<text x=\"" + svg_coord(px(fx)) + "\" y=\"" + svg_coord(height - bottom + 18) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" +
           svg_tick(fx) + "</text>\n";
    svg += "<text x=\"" + svg_coord(left - 8) + "\" y=\"" + svg_coord(py(fy) + 4) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" +
           svg_tick(fy) + "</text>\n";
    svg += "<line x1=\"" + svg_coord(left) + "\" y1=\"" + svg_coord(py(fy)) + "\" x2=\"" +
           svg_coord(width - right) + "\" y2=\"" + svg_coord(py(fy)) +
           "\" stroke=\"#dddddd\" stroke-width=\"0.5\"/>\n";
  }
  svg += "<text x=\"" + svg_coord((left + width - right) / 2) + "\" y=\"" +
         svg_coord(height - 14) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" + x_label +
         "</text>\n";
  svg += "<text x=\"18\" y=\"" + svg_coord((top + height - bottom) / 2) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
         "transform=\"rotate(-90 18 " + svg_coord((top + height - bottom) / 2) + ")\">" +
         y_label + "</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const Series& s = series[k];
    if (lines) {
      std::string pts;
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (i) pts += " ";
        pts += svg_coord(px(s.x[i])) + "," + svg_coord(py(s.y[i]));
      }
      svg += "<polyline fill=\"none\" stroke=\"" + s.color +
             "\" stroke-width=\"1.6\" points=\"" + pts + "\"/>\n";
    } else {
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        svg += "<circle cx=\"" + svg_coord(px(s.x[i])) + "\" cy=\"" + svg_coord(py(s.y[i])) +
               "\" r=\"1.4\" fill=\"" + s.color + "\" fill-opacity=\"0.5\"/>\n";
      }
    }
    svg += "<text x=\"" + svg_coord(width - right - 8) + "\" y=\"" +
           svg_coord(top + 16 + 16 * double(k)) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\" fill=\"" +
           s.color + "\">" + s.label + "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace

std::string reward_curve_csv() {
  std::string out = "logit,airl,gail,fairl\n";
  for (int i = 0; i <= 1000; ++i) {
    const double l = -5.0 + 0.01 * i;
    out += fmt(l);
    out += "," + fmt(adversarial_reward(AdversarialReward::Airl, l));
    out += "," + fmt(adversarial_reward(AdversarialReward::Gail, l));
    out += "," + fmt(adversarial_reward(AdversarialReward::Fairl, l));
    out += "\n";
  }
  return out;
}

std::string reward_curve_svg() {
  Series airl{"airl", "#1f77b4", {}, {}};
  Series gail{"gail", "#2ca02c", {}, {}};
  Series fairl{"fairl", "#d62728", {}, {}};
  for (int i = 0; i <= 1000; ++i) {
    const double l = -5.0 + 0.01 * i;
    airl.x.push_back(l);
    airl.y.push_back(adversarial_reward(AdversarialReward::Airl, l));
    gail.x.push_back(l);
    gail.y.push_back(adversarial_reward(AdversarialReward::Gail, l));
    fairl.x.push_back(l);
    fairl.y.push_back(adversarial_reward(AdversarialReward::Fairl, l));
  }
  return svg_plot({airl, gail, fairl}, "Reward against discriminator logit", "logit",
                  "reward", true);
}

std::string divergence_svg(const std::string& report_csv) {
  std::istringstream in(report_csv);
  std::string line;
  if (!std::getline(in, line)) throw MissingRun("report CSV is empty");
  std::vector<std::string> header;
  {
    std::istringstream row(line);
    std::string field;
    while (std::getline(row, field, ',')) header.push_back(trim(field));
  }
  int iter_col = -1;
  int div_col = -1;
  for (int i = 0; i < int(header.size()); ++i) {
    if (header[std::size_t(i)] == "iter") iter_col = i;
    if (header[std::size_t(i)] == "divergence") div_col = i;
  }
  if (iter_col < 0 || div_col < 0) {
    throw MissingRun("report CSV lacks iter/divergence columns");
  }

  Series s{"divergence", "#1f77b4", {}, {}};
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::istringstream row(line);
    std::string field;
    std::vector<double> fields;
    while (std::getline(row, field, ',')) {
      double v = std::numeric_limits<double>::quiet_NaN();
      parse_number(trim(field), &v);
      fields.push_back(v);
    }
    if (int(fields.size()) <= std::max(iter_col, div_col)) continue;
    const double y = fields[std::size_t(div_col)];
    if (!std::isfinite(y)) continue;
    s.x.push_back(fields[std::size_t(iter_col)]);
    s.y.push_back(y);
  }
  if (s.x.empty()) throw MissingRun("report CSV has no finite divergence rows");
  return svg_plot({s}, "Divergence against iteration", "iteration", "divergence", true);
}

std::string smm_scatter_svg(const std::string& target_csv, const std::string& visited_csv) {
  const Eigen::MatrixXd target = points_from_csv(target_csv, 0, 1);
  const Eigen::MatrixXd visited = points_from_csv(visited_csv, 2, 3);
  if (target.rows() == 0) throw MissingRun("target CSV has no points");
  if (visited.rows() == 0) throw MissingRun("visited CSV has no points");

  const auto thin = [](const Eigen::MatrixXd& pts, Series* s) {
    const Eigen::Index stride = std::max<Eigen::Index>(1, pts.rows() / 4000);
    for (Eigen::Index i = 0; i < pts.rows(); i += stride) {
      s->x.push_back(pts(i, 0));
      s->y.push_back(pts(i, 1));
    }
  };
  Series tgt{"target", "#888888", {}, {}};
  Series vis{"visited", "#d62728", {}, {}};
  thin(target, &tgt);
  thin(visited, &vis);
  return svg_plot({tgt, vis}, "Target and visited state marginals", "x", "y", false);
}

int run_plot(const Config& cfg, const RunOptions& opt) {
  const std::string kind = cfg.get_string("plot.kind", "reward-curves");
  if (kind == "reward-curves") {
    atomic_write((fs::path(opt.out_dir) / "reward_curves.csv").string(), reward_curve_csv());
    atomic_write((fs::path(opt.out_dir) / "reward_curves.svg").string(), reward_curve_svg());
    return 0;
  }
  if (kind == "divergence") {
    const std::string path = cfg.get_string("plot.report_csv", "");
    if (path.empty()) throw ConfigError("field 'plot.report_csv' is required");
    atomic_write((fs::path(opt.out_dir) / "divergence.svg").string(),
                 divergence_svg(read_file(path)));
    return 0;
  }
  if (kind == "smm-scatter") {
    const std::string target_path = cfg.get_string("plot.target_csv", "");
    const std::string visited_path = cfg.get_string("plot.visited_csv", "");
    if (target_path.empty() || visited_path.empty()) {
      throw ConfigError("fields 'plot.target_csv' and 'plot.visited_csv' are required");
    }
    atomic_write((fs::path(opt.out_dir) / "smm_scatter.svg").string(),
                 smm_scatter_svg(read_file(target_path), read_file(visited_path)));
    return 0;
  }
  throw ConfigError("field 'plot.kind' must be one of reward-curves, divergence, "
                    "smm-scatter; got '" +
                    kind + "'");
}

}  // namespace fmil::harness
