#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "fmil/errors.hpp"

namespace fmil::harness {

/// One parsed config value. Scalars keep their parsed type; lists are
/// homogeneous number or string arrays.
using ConfigValue = std::variant<bool, double, std::string, std::vector<double>,
                                 std::vector<std::string>>;

/**
 * Flat key/value document. Accepted syntax per line:
 *   key = 3.5 | true | "text" | [1, 2, 3] | ["a", "b"]
 * with '#' comments and optional [section] headers that prefix the keys
 * that follow with "section.". Later assignments win.
 */
class Config {
 public:
  static Config parse(const std::string& text);
  static Config load(const std::string& path);

  bool has(const std::string& key) const;
  /// Typed getters throw ConfigError naming the offending field.
  bool get_bool(const std::string& key, bool fallback) const;
  double get_number(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::vector<double> get_numbers(const std::string& key,
                                  const std::vector<double>& fallback) const;
  std::vector<std::string> get_strings(const std::string& key,
                                       const std::vector<std::string>& fallback) const;

  void set(const std::string& key, ConfigValue value);
  /// Canonical "key = value" rendering, keys sorted; the run-id input.
  std::string canonical() const;
  const std::map<std::string, ConfigValue>& entries() const { return entries_; }

 private:
  std::map<std::string, ConfigValue> entries_;
};

/// FNV-1a over the canonical config text plus the seed, hex-encoded.
std::string run_id(const Config& cfg, std::uint64_t seed);

/// Writes via a temp file in the same directory plus rename.
void atomic_write(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

struct RunOptions {
  std::string out_dir;
  bool force = false;
  bool no_timing = false;
  int jobs = 1;
  /// CLI-provided seed; overrides the config's seed list when >= 0.
  long long seed_override = -1;
};

/// Each entry point returns the process exit code contribution:
/// 0 = all runs succeeded, 1 = at least one failed.
int run_expert_gen(const Config& cfg, const RunOptions& opt);
int run_benchmark(const Config& cfg, const RunOptions& opt);
int run_identity_suite(const Config& cfg, const RunOptions& opt);
int run_smm(const Config& cfg, const RunOptions& opt);
int run_plot(const Config& cfg, const RunOptions& opt);

/// Cartesian product of the gridded benchmark fields times seeds; exposed
/// for the expansion-count property.
struct BenchmarkCell {
  std::string algorithm;
  int n_demos = 0;
  double reward_scale = 0.0;
  std::uint64_t seed = 0;
};
std::vector<BenchmarkCell> expand_benchmark_grid(const Config& cfg,
                                                 const RunOptions& opt);

/// Analytic reward-shape table over logits in [-5, 5]: columns
/// logit,airl,gail,fairl. Step 0.01 inclusive of both ends.
std::string reward_curve_csv();
std::string reward_curve_svg();

/// Line plot of one TrainReport CSV column against iteration.
std::string divergence_svg(const std::string& report_csv);

/// Scatter overlay of target points and visited states.
std::string smm_scatter_svg(const std::string& target_csv, const std::string& visited_csv);

}  // namespace fmil::harness
