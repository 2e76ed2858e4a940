#ifndef CLC_TRAINER_HPP_
#define CLC_TRAINER_HPP_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "clc/data.hpp"
#include "clc/losses.hpp"
#include "clc/matrix.hpp"
#include "clc/model.hpp"
#include "clc/rng.hpp"

namespace clc {

struct TrainConfig {
  // objective
  double alpha = 5.0;
  double tau = 0.15;
  double t = 0.10;
  double epsilon = 0.05;
  std::size_t sinkhorn_iterations = 3;
  // optimizer
  double learning_rate = 6e-2;
  double sgd_momentum = 0.9;
  double weight_decay = 5e-4;
  enum class Schedule { kConstant, kCosine };
  Schedule schedule = Schedule::kConstant;
  std::size_t epochs = 200;
  std::size_t batch_size = 256;
  // encoder
  enum class EncoderMode { kInBatch, kMomentumQueue };
  EncoderMode encoder_mode = EncoderMode::kInBatch;
  double ema_momentum = 0.99;
  std::size_t queue_capacity = 1024;
  std::vector<std::size_t> hidden_widths = {128, 128};
  std::size_t cluster_dim = 0;  // 0: infer from labels
  std::size_t instance_dim = 32;
  bool normalize_parts = true;  // ablation switch; training diverges without
  // data
  double noise_sigma = 0.1;
  double holdout_fraction = 0.2;
  std::size_t eval_every = 1;
  // self-labeling fine-tune phase
  bool self_label_enabled = false;
  double self_label_threshold = 0.99;
  std::size_t self_label_epochs = 20;
  // variant switch: divide sinkhorn input logits by t (off by default;
  // the solver input is the bare normalized zc)
  bool sinkhorn_scale_by_t = false;

  std::uint64_t seed = 0;
};

// Every violated rule, one message per field; empty means valid.
std::vector<std::string> validate_config(const TrainConfig& cfg);
// Throws ConfigError listing all problems.
void require_valid(const TrainConfig& cfg);

// Flat key = value text round-trip.
TrainConfig parse_config(std::istream& in);
TrainConfig parse_config_file(const std::filesystem::path& path);
std::string config_to_text(const TrainConfig& cfg);
std::string config_to_json_string(const TrainConfig& cfg);

double learning_rate_at(const TrainConfig& cfg, std::size_t step, std::size_t total_steps);

struct OptimizerState {
  std::vector<Matrix> weight_velocity;
  std::vector<Matrix> bias_velocity;
  std::size_t step = 0;

  static OptimizerState zeros_like(const Params& params);
  bool operator==(const OptimizerState&) const = default;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  std::optional<double> acc, nmi, ari;
  double entropy = 0.0;
};

struct RunRecord {
  std::vector<LossBreakdown> steps;
  std::vector<EpochMetrics> epochs;
  std::string config_text;
  std::uint64_t seed = 0;
};

// Mutable training state; owns the master RNG so checkpoints can resume the
// exact stream.
struct TrainState {
  MlpSpec spec;
  Params params;
  OptimizerState opt;
  std::optional<MomentumEncoder> key;
  std::optional<NegativeQueue> queue;
  Rng rng;
  std::size_t epoch = 0;

  TrainState(MlpSpec s, Params p, Rng r)
      : spec(std::move(s)), params(std::move(p)), opt(OptimizerState::zeros_like(params)),
        rng(std::move(r)) {}
};

// One full pass of the training recipe on one batch: two views, key forward
// without gradient, query forward on the tape, Sinkhorn targets under
// stop-gradient, contrastive + weighted cross-entropy objective, backward,
// SGD with momentum and weight decay, then EMA/queue bookkeeping.
LossBreakdown train_step(TrainState& state, const Matrix& batch, const TrainConfig& cfg,
                         double lr);

struct FitResult {
  MlpSpec spec;
  Params params;       // final
  Params best_params;  // best epoch ACC (final params when unlabeled)
  double best_acc = -1.0;
  RunRecord record;
};

struct Checkpoint {
  MlpSpec spec;
  Params params;
  OptimizerState opt;
  std::size_t epoch = 0;
  std::string rng_state;
  std::string config_text;
  std::optional<Params> key_params;
  Matrix queue_rows;  // n x (K + C)
  std::optional<Params> best_params;
  double best_acc = -1.0;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct FitOptions {
  const Dataset* val = nullptr;          // evaluated instead of train when given
  std::ostream* jsonl = nullptr;         // metrics stream, one JSON object per line
  const Checkpoint* resume = nullptr;
  std::filesystem::path checkpoint_dir;  // writes best.clck / final.clck when set
};

FitResult fit(const Dataset& train, const TrainConfig& cfg, const FitOptions& opts = {});

// Confidence-filtered fine-tuning: weak-view predictions above the
// threshold become pseudo-labels for strongly augmented views. Stops early
// after an epoch with no confident sample. No weight decay here, so a
// perfectly confident, self-consistent model is an exact fixed point.
Params self_label_finetune(const MlpSpec& spec, Params params, const Dataset& ds,
                           const TrainConfig& cfg, std::ostream* jsonl = nullptr,
                           RunRecord* record = nullptr);

}  // namespace clc

#endif  // CLC_TRAINER_HPP_
