#include "nicopt/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "nicopt/errors.hpp"

namespace nicopt {

std::string_view to_string(RewardVariant v) {
  switch (v) {
    case RewardVariant::rf1: return "rf1";
    case RewardVariant::rf2: return "rf2";
    case RewardVariant::rf3: return "rf3";
  }
  return "?";
}

RewardVariant parse_reward_variant(std::string_view name) {
  if (name == "rf1" || name == "RF1") return RewardVariant::rf1;
  if (name == "rf2" || name == "RF2") return RewardVariant::rf2;
  if (name == "rf3" || name == "RF3") return RewardVariant::rf3;
  throw ArgumentError("unknown reward variant '" + std::string(name) + "' (rf1, rf2, rf3)");
}

std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  throw ArgumentError("unknown optimizer '" + std::string(name) + "' (sgd, adam)");
}

std::string_view to_string(ClockMode c) { return c == ClockMode::none ? "none" : "wall"; }

ClockMode parse_clock(std::string_view name) {
  if (name == "none") return ClockMode::none;
  if (name == "wall") return ClockMode::wall;
  throw ArgumentError("unknown clock '" + std::string(name) + "' (none, wall)");
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* msg) {
    if (!ok) throw ArgumentError(msg);
  };
  require(instance_size >= 2, "instance_size must be at least 2");
  require(problem != Problem::gpp || instance_size % 2 == 0, "GPP needs an even instance_size");
  require(n_epochs >= 0, "n_epochs must be non-negative");
  require(batch_size >= 1, "batch_size must be positive");
  require(learning_rate >= 0 && std::isfinite(learning_rate), "learning_rate must be finite and non-negative");
  require(gamma >= 0 && gamma <= 1, "gamma must lie in [0, 1]");
  require(episode_len >= 1, "episode_len must be at least 1");
  require(k_max >= 1, "k_max must be at least 1");
  require(grad_clip_norm > 0, "grad_clip_norm must be positive");
  require(d >= 1 && layers >= 1, "d and layers must be positive");
  require(operator_fits(problem, op), "operator does not fit the problem's solution encoding");
  require(max_steps_per_epoch >= 0, "max_steps_per_epoch must be non-negative");
  require(checkpoint_every >= 0, "checkpoint_every must be non-negative");
}

TrainConfig train_config_from_json(const nlohmann::json& doc, TrainConfig cfg) {
  if (!doc.is_object()) throw ArgumentError("training config must be a JSON object");
  try {
    for (const auto& [key, v] : doc.items()) {
      if (key == "problem") cfg.problem = parse_problem(v.get<std::string>());
      else if (key == "instance_size") cfg.instance_size = v.get<int>();
      else if (key == "n_epochs") cfg.n_epochs = v.get<int>();
      else if (key == "batch_size") cfg.batch_size = v.get<int>();
      else if (key == "learning_rate") cfg.learning_rate = v.get<double>();
      else if (key == "gamma") cfg.gamma = v.get<double>();
      else if (key == "episode_len") cfg.episode_len = v.get<int>();
      else if (key == "k_max") cfg.k_max = v.get<int>();
      else if (key == "grad_clip_norm") cfg.grad_clip_norm = v.get<double>();
      else if (key == "reward_variant") cfg.reward_variant = parse_reward_variant(v.get<std::string>());
      else if (key == "operator") cfg.op = parse_operator(v.get<std::string>());
      else if (key == "seed") cfg.seed = v.get<std::uint64_t>();
      else if (key == "d") cfg.d = v.get<int>();
      else if (key == "layers") cfg.layers = v.get<int>();
      else if (key == "optimizer") cfg.optimizer = parse_optimizer(v.get<std::string>());
      else if (key == "adam_beta1") cfg.adam_beta1 = v.get<double>();
      else if (key == "adam_beta2") cfg.adam_beta2 = v.get<double>();
      else if (key == "adam_eps") cfg.adam_eps = v.get<double>();
      else if (key == "max_steps_per_epoch") cfg.max_steps_per_epoch = v.get<int>();
      else if (key == "checkpoint_every") cfg.checkpoint_every = v.get<int>();
      else if (key == "checkpoint_path") cfg.checkpoint_path = v.get<std::string>();
      else if (key == "log_path") cfg.log_path = v.get<std::string>();
      else if (key == "clock") cfg.clock = parse_clock(v.get<std::string>());
      else throw ArgumentError("unknown training config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(std::string("bad training config: ") + e.what());
  }
  return cfg;
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"problem", std::string(to_string(c.problem))},
          {"instance_size", c.instance_size},
          {"n_epochs", c.n_epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"gamma", c.gamma},
          {"episode_len", c.episode_len},
          {"k_max", c.k_max},
          {"grad_clip_norm", c.grad_clip_norm},
          {"reward_variant", std::string(to_string(c.reward_variant))},
          {"operator", std::string(to_string(c.op))},
          {"seed", c.seed},
          {"d", c.d},
          {"layers", c.layers},
          {"optimizer", std::string(to_string(c.optimizer))},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_eps", c.adam_eps},
          {"max_steps_per_epoch", c.max_steps_per_epoch},
          {"checkpoint_every", c.checkpoint_every},
          {"checkpoint_path", c.checkpoint_path},
          {"log_path", c.log_path},
          {"clock", std::string(to_string(c.clock))}};
}

double reward(RewardVariant variant, double f_next, double f_curr, double f_init, double f_best, Sense sense) {
  const double o = sense == Sense::maximize ? 1.0 : -1.0;
  switch (variant) {
    case RewardVariant::rf1: return o * f_next - o * f_init;
    case RewardVariant::rf2: return std::max(o * f_next, o * f_best) - o * f_best;
    case RewardVariant::rf3: return o * f_next - o * f_curr;
  }
  return 0.0;
}

std::vector<double> discounted_return(std::span<const double> rewards, double gamma) {
  std::vector<double> out(rewards.size());
  double acc = 0.0;
  for (std::size_t t = rewards.size(); t-- > 0;) {
    acc = rewards[t] + gamma * acc;
    out[t] = acc;
  }
  return out;
}

template <class T>
double gradient_norm(const ModelParams<T>& grads) {
  double sq = 0.0;
  for_each_tensor(grads, [&](const std::string&, const Mat<T>& m, TensorRole role) {
    if (role == TensorRole::learnable) sq += m.template cast<double>().squaredNorm();
  });
  return std::sqrt(sq);
}

template <class T>
double clip_gradient(ModelParams<T>& grads, double max_norm) {
  if (!(max_norm > 0)) throw ArgumentError("max_norm must be positive");
  const double norm = gradient_norm(grads);
  if (norm > max_norm) {
    const T scale = static_cast<T>(max_norm / norm);
    for_each_tensor(grads, [&](const std::string&, Mat<T>& m, TensorRole role) {
      if (role == TensorRole::learnable) m *= scale;
    });
  }
  return norm;
}

template double gradient_norm<float>(const ModelParams<float>&);
template double gradient_norm<double>(const ModelParams<double>&);
template double clip_gradient<float>(ModelParams<float>&, double);
template double clip_gradient<double>(ModelParams<double>&, double);

StallCounter::StallCounter(int k_max) : k_max_(k_max), best_(-std::numeric_limits<double>::infinity()) {
  if (k_max < 1) throw ArgumentError("k_max must be at least 1");
}

void StallCounter::reset(double baseline) {
  k_ = 0;
  best_ = baseline;
}

bool StallCounter::observe(double batch_mean) {
  if (batch_mean > best_) {
    best_ = batch_mean;
    k_ = 0;
  } else {
    ++k_;
  }
  return !stalled();
}

Optimizer::Optimizer(OptimizerKind kind, double learning_rate, double beta1, double beta2, double eps)
    : kind_(kind), lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Optimizer::step(ModelParams<float>& params, const ModelParams<float>& grads) {
  ++t_;
  std::vector<const Mat<float>*> g;
  for_each_tensor(grads, [&](const std::string&, const Mat<float>& m, TensorRole role) {
    if (role == TensorRole::learnable) g.push_back(&m);
  });
  if (kind_ == OptimizerKind::adam && m_.empty()) {
    for (const auto* m : g) {
      m_.push_back(Eigen::ArrayXXd::Zero(m->rows(), m->cols()));
      v_.push_back(Eigen::ArrayXXd::Zero(m->rows(), m->cols()));
    }
  }
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  std::size_t k = 0;
  for_each_tensor(params, [&](const std::string&, Mat<float>& p, TensorRole role) {
    if (role != TensorRole::learnable) return;
    const Mat<float>& grad = *g[k];
    if (grad.rows() != p.rows() || grad.cols() != p.cols()) throw ArgumentError("gradient shape mismatch");
    if (kind_ == OptimizerKind::sgd) {
      if (lr_ != 0.0) p -= static_cast<float>(lr_) * grad;
    } else {
      const Eigen::ArrayXXd gd = grad.cast<double>().array();
      auto& m = m_[k];
      auto& v = v_[k];
      m = beta1_ * m + (1.0 - beta1_) * gd;
      v = beta2_ * v + (1.0 - beta2_) * gd.square();
      if (lr_ != 0.0) {
        const Eigen::ArrayXXd upd = lr_ * (m / c1) / ((v / c2).sqrt() + eps_);
        p.array() -= upd.cast<float>();
      }
    }
    ++k;
  });
}

void EpisodeWindow::clear() {
  features.clear();
  cells.clear();
  rewards.clear();
}

WindowGradient policy_gradient(const ModelParams<float>& params, const EpisodeWindow& window, double gamma) {
  WindowGradient out{zeros_like(params), 0.0, 0.0};
  const std::size_t steps = window.size();
  if (steps == 0) return out;
  const std::size_t B = window.features.front().size();

  // Per-member discounted returns over the window.
  std::vector<std::vector<double>> R(steps, std::vector<double>(B));
  std::vector<double> seq(steps);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < steps; ++t) seq[t] = window.rewards[t][b];
    const auto ret = discounted_return(seq, gamma);
    for (std::size_t t = 0; t < steps; ++t) R[t][b] = ret[t];
  }

  const double scale = 1.0 / (static_cast<double>(B) * static_cast<double>(steps));
  std::vector<float> w(B);
  double ret_sum = 0.0;
  for (std::size_t t = 0; t < steps; ++t) {
    const auto res = forward<float>(params, window.features[t], Mode::train, true);
    for (std::size_t b = 0; b < B; ++b) {
      w[b] = static_cast<float>(R[t][b] * scale);
      const double p = res.dist[b].prob[static_cast<std::size_t>(window.cells[t][b])];
      out.loss += -R[t][b] * scale * std::log(p);
      ret_sum += R[t][b];
    }
    backward<float>(params, res, window.cells[t], w, out.grads);
  }
  if (!std::isfinite(out.loss)) throw NumericError("non-finite policy loss");
  out.mean_return = ret_sum * scale;
  return out;
}

EpochReport train_epoch(ModelParams<float>& params, const TrainConfig& cfg, Rng& rng, Optimizer& opt) {
  const auto start = std::chrono::steady_clock::now();
  const int B = cfg.batch_size;
  const int n = cfg.instance_size;
  const Sense sense = sense_of(cfg.problem);
  const double o = orientation(cfg.problem);

  std::vector<Instance> inst;
  std::vector<Solution> sol;
  inst.reserve(static_cast<std::size_t>(B));
  sol.reserve(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) {
    inst.push_back(generate(cfg.problem, n, rng()));
    sol.push_back(random_solution(cfg.problem, n, rng));
  }
  std::vector<double> f_init(static_cast<std::size_t>(B)), f_cur(f_init), f_best(f_init);
  double mean0 = 0.0;
  for (int b = 0; b < B; ++b) {
    f_init[b] = f_cur[b] = f_best[b] = objective(inst[b], sol[b]);
    mean0 += o * f_cur[b];
  }
  StallCounter stall(cfg.k_max);
  stall.reset(mean0 / B);

  EpochReport report;
  EpisodeWindow window;
  double return_sum = 0.0;
  int return_count = 0;
  auto update = [&] {
    if (window.size() == 0) return;
    auto g = policy_gradient(params, window, cfg.gamma);
    clip_gradient(g.grads, cfg.grad_clip_norm);
    opt.step(params, g.grads);
    return_sum += g.mean_return;
    ++return_count;
    ++report.updates;
    window.clear();
  };

  std::vector<Features> feats(static_cast<std::size_t>(B));
  while (!stall.stalled() && (cfg.max_steps_per_epoch == 0 || report.steps < cfg.max_steps_per_epoch)) {
    for (int b = 0; b < B; ++b) feats[b] = build_features(inst[b], sol[b]);
    const auto res = forward<float>(params, feats, Mode::train);
    update_running_stats(params, res);

    std::vector<int> cells(static_cast<std::size_t>(B));
    std::vector<double> rewards(static_cast<std::size_t>(B));
    double mean = 0.0;
    for (int b = 0; b < B; ++b) {
      const Action pair = sample_action(res.dist[b], rng);
      cells[b] = pair.i * n + pair.j;
      sol[b] = apply(cfg.op, sol[b], action_from_node_pair(sol[b], pair.i, pair.j));
      const double f_next = objective(inst[b], sol[b]);
      if (!std::isfinite(f_next)) throw NumericError("non-finite objective during training");
      rewards[b] = reward(cfg.reward_variant, f_next, f_cur[b], f_init[b], f_best[b], sense);
      f_cur[b] = f_next;
      if (o * f_next > o * f_best[b]) f_best[b] = f_next;
      mean += o * f_next;
    }
    window.features.push_back(feats);
    window.cells.push_back(std::move(cells));
    window.rewards.push_back(std::move(rewards));
    ++report.steps;
    stall.observe(mean / B);
    if (static_cast<int>(window.size()) >= cfg.episode_len) update();
  }
  update();  // partial window at the end of the stream

  report.mean_return = return_count > 0 ? return_sum / return_count : 0.0;
  report.mean_best_objective = std::accumulate(f_best.begin(), f_best.end(), 0.0) / B;
  if (cfg.clock == ClockMode::wall) {
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
  return report;
}

std::string format_log_row(const EpochReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d,%.10g,%.10g,%.6f", r.epoch, r.mean_return, r.mean_best_objective, r.seconds);
  return buf;
}

TrainResult train(const TrainConfig& cfg, std::optional<ModelParams<float>> initial,
                  const std::function<void(const EpochReport&)>& on_epoch) {
  cfg.validate();
  TrainResult result;
  result.params = initial ? std::move(*initial) : init_params<float>(cfg.d, cfg.layers, cfg.problem, cfg.seed);
  if (result.params.problem != cfg.problem) throw ArgumentError("initial model was built for another problem");

  std::ofstream log;
  if (!cfg.log_path.empty()) {
    log.open(cfg.log_path);
    if (!log) throw DataError("cannot write training log '" + cfg.log_path + "'");
    log << kTrainLogHeader << '\n';
  }
  Rng rng(derive_seed(cfg.seed, 1));
  Optimizer opt(cfg.optimizer, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  double elapsed = 0.0;
  for (int epoch = 1; epoch <= cfg.n_epochs; ++epoch) {
    ModelParams<float> last_good = result.params;
    EpochReport rep;
    try {
      rep = train_epoch(result.params, cfg, rng, opt);
    } catch (...) {
      if (!cfg.checkpoint_path.empty()) save_checkpoint(last_good, cfg.checkpoint_path);
      throw;
    }
    rep.epoch = epoch;
    elapsed += rep.seconds;
    rep.seconds = elapsed;
    result.log.push_back(rep);
    if (log) log << format_log_row(rep) << '\n' << std::flush;
    if (on_epoch) on_epoch(rep);
    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_path.empty() && epoch % cfg.checkpoint_every == 0) {
      save_checkpoint(result.params, cfg.checkpoint_path);
    }
  }
  if (!cfg.checkpoint_path.empty()) save_checkpoint(result.params, cfg.checkpoint_path);
  return result;
}

}  // namespace nicopt
