#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "magfield/baselines.hpp"
#include "magfield/dataset.hpp"
#include "magfield/gan/train.hpp"
#include "magfield/physics.hpp"
#include "magfield/tasks.hpp"

namespace magfield::bench {

/// `oracle` returns the truth and exists for harness checks.
enum class Method { linear, spline, biharmonic, gp, wgan_gp, ours, oracle };

std::string method_name(Method m);
/// Throws UsageError for unknown names.
Method parse_method(const std::string& name);
bool is_learned(Method m);

std::string task_label(const TaskSpec& task);

/// GP inpainting is skipped above this many given pixels per mask.
inline constexpr std::size_t kGpDensePoints = 4096;

struct BenchConfig {
  std::vector<Method> methods{Method::spline, Method::biharmonic};
  TaskSpec task;
  std::size_t n = 250;
  std::uint64_t seed = 1;
  /// Fraction of the dataset (taken from the end) that counts as held out.
  /// 1 evaluates on the whole file.
  double test_fraction = 0.05;
  bool timing = false;
  int timing_reps = 5;
  int timing_warmup = 1;
  SplineConfig spline;
  GPConfig gp;
  std::map<Method, std::filesystem::path> checkpoints;
  /// Overrides the precision stored in the checkpoints.
  std::optional<gan::Precision> precision;

  void validate() const;
};

/// Reads the [task] and [bench] sections; absent keys keep their defaults.
BenchConfig parse_bench_config(const std::string& ini_text);
BenchConfig load_bench_config(const std::filesystem::path& path);

struct Summary {
  double mean = 0.0;
  double std = 0.0;  ///< population standard deviation
};

Summary summarize(const std::vector<double>& values);

struct MethodRow {
  Method method = Method::spline;
  std::string task;
  bool skipped = false;
  std::string skip_reason;
  std::size_t samples = 0;
  Summary mae;     ///< mT
  Summary l_div;   ///< mT/px
  Summary l_curl;  ///< uT/px
  bool z_terms = true;
  /// Mean over samples of the per-sample median wall time, seconds; NaN
  /// unless timing was requested.
  double seconds = 0.0;
  std::vector<ProfileBin> profile;  ///< pooled over samples
  std::vector<double> sample_mae;
};

struct BenchReport {
  std::string dataset_digest;  ///< hex config digest of the dataset file
  std::string config_digest;   ///< hex SHA-256 of the bench config rendering
  std::uint64_t seed = 0;
  std::vector<std::size_t> sample_indices;
  std::vector<MethodRow> rows;
  std::vector<std::string> log;
};

/// The paired evaluation set: the first n held-out indices and one mask per
/// index drawn from the bench seed.
std::vector<std::size_t> held_out_indices(std::size_t dataset_size, const BenchConfig& config);
Mask paired_mask(const BenchConfig& config, std::size_t slot, int height, int width);

/// Reason a method does not apply to the task and masks, if any.
std::optional<std::string> skip_reason(Method m, const TaskSpec& task,
                                       const std::vector<Mask>& masks);

/// Evaluates every requested method on the same (sample, mask) pairs.
/// Skips are appended to report.log and, if given, to `log`.
BenchReport run_bench(const DatasetReader& data, const BenchConfig& config,
                      std::ostream* log = nullptr);

/// Deterministic tab-separated report (no wall-clock data).
std::string report_tsv(const BenchReport& report);
/// JSON sidecar with the config rendering and the report rows.
std::string report_json(const BenchReport& report, const BenchConfig& config);
/// Per-method mean inference time, tab-separated.
std::string timing_tsv(const BenchReport& report);
/// Human-readable table.
std::string report_table(const BenchReport& report);

/// Pixel-weighted pooling of per-sample distance profiles.
std::vector<ProfileBin> pool_profiles(const std::vector<std::vector<ProfileBin>>& profiles);

/// Smallest distance at which `method` has lower MAE than `reference` after
/// having been at least as high at the previous non-empty bin.
std::optional<int> crossover(const std::vector<ProfileBin>& method,
                             const std::vector<ProfileBin>& reference);

std::string profile_tsv(const std::vector<ProfileBin>& method,
                        const std::vector<ProfileBin>& reference, const std::string& method_label,
                        const std::string& reference_label);

// ------------------------------------------------------------ ablation

enum class AblationMode { physics, lambda_match };

struct AblationRun {
  std::string label;
  std::uint64_t seed = 0;
  bool physics = true;
  double lambda_match = 0.0;
  std::vector<gan::TraceRow> trace;
  gan::TraceRow final_validation;  ///< last row carrying validation metrics
  double final_match = 0.0;        ///< L_match of the last trace row
  double tail_match = 0.0;         ///< mean L_match over the last `tail` rows
};

struct AblationConfig {
  AblationMode mode = AblationMode::physics;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<double> lambda_match_values{7.2, 1000.0};
  int tail = 100;
};

/// Physics mode: one physics-on and one physics-off run per seed.
/// Lambda mode: one run per seed and lambda_match value (physics as in base).
/// Traces are written to out_dir when given.
std::vector<AblationRun> run_ablation(const DatasetReader& data, const gan::TrainConfig& base,
                                      const AblationConfig& config,
                                      const std::optional<std::filesystem::path>& out_dir,
                                      std::ostream* log = nullptr);

std::string ablation_summary(const std::vector<AblationRun>& runs);

}  // namespace magfield::bench
