#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "magfield/dataset.hpp"
#include "magfield/gan/losses.hpp"
#include "magfield/tasks.hpp"

namespace magfield::gan {

enum class Precision { single, double_ };

struct TrainConfig {
  Lambdas lambdas;
  double learning_rate = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double adam_eps = 1e-8;
  int batch_size = 25;
  int critic_iters = 5;
  int iterations = 1000;
  TaskSpec task{TaskKind::inpaint, 36};
  /// Tesla per normalized unit; 0 derives it from the training split.
  double norm_scale = 0.0;
  std::uint64_t seed = 1;
  bool physics_losses = true;
  GpMode gp_mode = GpMode::double_backward;
  double pair_radius = 1e-3;
  GeneratorArch generator;
  CriticArch critic;
  int validation_interval = 500;
  int validation_samples = 16;
  double test_fraction = 0.05;
  Precision precision = Precision::single;
  /// Single-threaded kernels so that traces repeat bit for bit.
  bool deterministic = true;

  /// Throws SpecError on negative lambdas, empty batches and the like.
  void validate() const;
  /// Lambdas with the physics terms zeroed when they are disabled.
  Lambdas effective_lambdas() const;
};

/// Reads the [task] and [train] sections of an INI file over the defaults.
TrainConfig load_train_config(const std::filesystem::path& path);
TrainConfig parse_train_config(const std::string& ini_text);
/// INI text with [task] and [train]; parse_train_config inverts it exactly.
std::string to_ini(const TrainConfig& c);

struct TraceRow {
  std::uint64_t iteration = 0;
  double wgan_gp = 0.0;  ///< critic loss of the last critic update
  double gp = 0.0;
  LossTerms generator;
  /// NaN on iterations without validation.
  double val_mae = std::numeric_limits<double>::quiet_NaN();    ///< mT
  double val_l_div = std::numeric_limits<double>::quiet_NaN();  ///< mT/px
  double val_l_curl = std::numeric_limits<double>::quiet_NaN(); ///< uT/px
};

/// Tab-separated trace with a header row.
void write_trace(const std::vector<TraceRow>& rows, const std::filesystem::path& path);
std::string trace_header();
std::string trace_line(const TraceRow& row);

struct AdamState {
  std::vector<Tensor<double>> m;
  std::vector<Tensor<double>> v;
  std::uint64_t step = 0;
};

struct Checkpoint {
  TrainConfig config;
  double norm_scale = 1.0;
  GeneratorParams generator;
  CriticParams critic;
  AdamState generator_opt;
  AdamState critic_opt;
  std::uint64_t iteration = 0;
  std::string rng_state;
  std::vector<TraceRow> trace;
  /// Generator parameters with the lowest validation MAE so far.
  std::vector<nn::Parameter> best_generator;
  double best_val_mae = std::numeric_limits<double>::infinity();
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Fresh parameters and optimizer state for `config`.
Checkpoint init_checkpoint(const TrainConfig& config, double norm_scale);

/// Indices [0, train_end) train, the rest is held out.
std::size_t train_split_end(std::size_t dataset_size, double test_fraction);

/// RMS of the measurement planes of up to 64 training samples, tesla.
double estimate_norm_scale(const DatasetReader& data, std::size_t train_end);

struct Batch {
  std::vector<std::size_t> indices;
  std::vector<Sample> samples;
  Mask mask;
  LocalPatchSet patches;
};

struct CriticStep {
  double loss = 0.0;
  double gp = 0.0;
  double wasserstein = 0.0;  ///< E[D(real)] - E[D(fake)]
};

struct TrainHooks {
  std::function<void(const TraceRow&)> on_row;
  /// Written every `checkpoint_interval` iterations and at the end.
  std::optional<std::filesystem::path> checkpoint_path;
  int checkpoint_interval = 0;
  /// Receives a description of the offending batch before a non-finite
  /// loss aborts training.
  std::optional<std::filesystem::path> diagnostic_path;
};

/// Alternating critic/generator training loop with its state. Single-threaded coordinator.
class Trainer {
 public:
  Trainer(const DatasetReader& data, Checkpoint state);

  /// Uniform training indices and one mask shared by the batch.
  Batch draw_batch();
  CriticStep critic_step(const Batch& batch);
  LossTerms generator_step(const Batch& batch);

  /// MAE and physics metrics of predict() on the held-out samples.
  TraceRow validate();

  /// One iteration: critic_iters critic updates, then one generator update.
  TraceRow iterate(bool with_validation);

  /// Runs until state().iteration == config.iterations.
  void run(const TrainHooks& hooks = {});

  const Checkpoint& state() const;
  Checkpoint& state();

 private:
  const DatasetReader& data_;
  Checkpoint state_;
  Rng rng_;
  std::size_t train_end_ = 0;
  std::vector<Sample> val_samples_;
  std::vector<Mask> val_masks_;
};

/// Trains from scratch or continues `resume` (whose config must match in
/// everything except the iteration target).
Checkpoint train(const TrainConfig& config, const DatasetReader& data,
                 std::optional<Checkpoint> resume = std::nullopt, const TrainHooks& hooks = {});

/// Normalize, generate with the best parameters, compose, denormalize.
/// Given pixels are copied from the input unchanged.
FieldPlane predict(const Checkpoint& c, const FieldPlane& input, const Mask& mask);

}  // namespace magfield::gan
