#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "nicopt/instances.hpp"
#include "nicopt/model.hpp"
#include "nicopt/operators.hpp"

namespace nicopt {

enum class RewardVariant { rf1, rf2, rf3 };
enum class OptimizerKind { sgd, adam };
enum class ClockMode { none, wall };

std::string_view to_string(RewardVariant v);
RewardVariant parse_reward_variant(std::string_view name);
std::string_view to_string(OptimizerKind k);
OptimizerKind parse_optimizer(std::string_view name);
std::string_view to_string(ClockMode c);
ClockMode parse_clock(std::string_view name);

struct TrainConfig {
  Problem problem = Problem::prp;
  int instance_size = 20;
  int n_epochs = 5000;
  int batch_size = 64;
  double learning_rate = 1e-4;
  double gamma = 0.1;
  int episode_len = 20;  // T
  int k_max = 5;
  double grad_clip_norm = 1.0;
  RewardVariant reward_variant = RewardVariant::rf3;
  OperatorKind op = OperatorKind::insert;
  std::uint64_t seed = 0;

  int d = 128;
  int layers = 3;
  OptimizerKind optimizer = OptimizerKind::sgd;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int max_steps_per_epoch = 0;  // 0: no cap besides the stall rule

  int checkpoint_every = 0;  // epochs; 0 disables periodic checkpoints
  std::string checkpoint_path;
  std::string log_path;
  ClockMode clock = ClockMode::wall;

  /// Throws ArgumentError on out-of-range fields.
  void validate() const;
};

/// Fields absent from `doc` keep their values from `base`. Unknown keys are
/// rejected.
TrainConfig train_config_from_json(const nlohmann::json& doc, TrainConfig base = {});
nlohmann::json to_json(const TrainConfig& cfg);

/// Step reward on raw objective values; `sense` orients improvement so the
/// result is positive for better solutions.
double reward(RewardVariant variant, double f_next, double f_curr, double f_init, double f_best, Sense sense);

/// R_t = sum_{i >= 0} gamma^i * rewards[t + i] within the window.
std::vector<double> discounted_return(std::span<const double> rewards, double gamma);

/// Global L2 norm over the learnable tensors.
template <class T>
double gradient_norm(const ModelParams<T>& grads);

/// Rescales every learnable gradient so the global norm is at most
/// `max_norm`. Returns the norm before clipping.
template <class T>
double clip_gradient(ModelParams<T>& grads, double max_norm);

/// Counts consecutive steps without a new best batch mean.
class StallCounter {
 public:
  explicit StallCounter(int k_max);
  /// Registers a batch-mean value (larger is better). Returns true while the
  /// stream should continue.
  bool observe(double batch_mean);
  void reset(double baseline);
  bool stalled() const { return k_ >= k_max_; }
  int count() const { return k_; }
  double best() const { return best_; }

 private:
  int k_max_;
  int k_ = 0;
  double best_;
};

/// Plain SGD or Adam over the learnable tensors; running statistics are never
/// touched.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(ModelParams<float>& params, const ModelParams<float>& grads);
  long long steps() const { return t_; }

 private:
  OptimizerKind kind_;
  double lr_, beta1_, beta2_, eps_;
  long long t_ = 0;
  std::vector<Eigen::ArrayXXd> m_, v_;
};

/// One window of stored transitions: features per step (each a full batch),
/// the chosen cells and per-step rewards per batch member.
struct EpisodeWindow {
  std::vector<std::vector<Features>> features;  // [step][batch]
  std::vector<std::vector<int>> cells;          // [step][batch]
  std::vector<std::vector<double>> rewards;     // [step][batch]
  std::size_t size() const { return features.size(); }
  void clear();
};

struct WindowGradient {
  ModelParams<float> grads;
  double loss = 0.0;
  double mean_return = 0.0;
};

/// Gradient of (1/B)(1/|W|) sum_b sum_t -R_t^b log p(a_t^b) over one window,
/// recomputing each step's forward pass in train mode.
WindowGradient policy_gradient(const ModelParams<float>& params, const EpisodeWindow& window, double gamma);

struct EpochReport {
  int epoch = 0;
  double mean_return = 0.0;
  double mean_best_objective = 0.0;  // raw objective, averaged over the batch
  long long steps = 0;
  int updates = 0;
  double seconds = 0.0;
};

EpochReport train_epoch(ModelParams<float>& params, const TrainConfig& cfg, Rng& rng, Optimizer& opt);

struct TrainResult {
  ModelParams<float> params;
  std::vector<EpochReport> log;
};

/// Runs cfg.n_epochs epochs from `initial` (or a fresh init from cfg.seed),
/// writing the CSV log and checkpoints when paths are configured.
TrainResult train(const TrainConfig& cfg, std::optional<ModelParams<float>> initial = std::nullopt,
                  const std::function<void(const EpochReport&)>& on_epoch = {});

inline constexpr const char* kTrainLogHeader = "epoch,mean_return,mean_best_objective,seconds";
std::string format_log_row(const EpochReport& r);

}  // namespace nicopt
