#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "nicopt/instances.hpp"
#include "nicopt/operators.hpp"

namespace nicopt {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Mode { train, eval };

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kMaskedLogit = -1e9;
inline constexpr std::array<int, 4> kDecoderWidths = {128, 64, 32, 1};

/// Per-layer encoder parameters. Row-vector convention: x' = x * W.
template <class T>
struct LayerParams {
  Mat<T> w1, w2, w3, w4, w5;  // d x d
  // Batch norm for the node path and the edge path, each 1 x d.
  Mat<T> node_scale, node_shift, node_mean, node_var;
  Mat<T> edge_scale, edge_shift, edge_mean, edge_var;
};

/// Every tensor of the policy network plus its hyperparameters.
template <class T>
struct ModelParams {
  int d = 0;
  int layers = 0;
  int feature_arity = 1;  // node feature width k: 1 (PRP/GPP) or 2 (TSP)
  Problem problem = Problem::prp;
  T clip = T(10);

  Mat<T> node_weight, node_bias;  // k x d, 1 x d
  Mat<T> edge_weight, edge_bias;  // 2 x d, 1 x d
  std::vector<LayerParams<T>> layer;
  std::array<Mat<T>, 4> dec_weight;  // d->128->64->32->1
  std::array<Mat<T>, 4> dec_bias;
};

enum class TensorRole { learnable, running_mean, running_var };

/// Visits every tensor with a stable name; the order is the checkpoint order.
template <class T, class Fn>
void for_each_tensor(ModelParams<T>& p, Fn&& fn);
template <class T, class Fn>
void for_each_tensor(const ModelParams<T>& p, Fn&& fn);

/// Allocates all tensors with the shapes implied by (d, layers, k) and zero values.
template <class T>
ModelParams<T> zeros_like(const ModelParams<T>& p);
template <class T>
ModelParams<T> make_params_shape(int d, int layers, Problem problem, int feature_arity);

template <class To, class From>
ModelParams<To> cast_params(const ModelParams<From>& p);

/// Weights uniform on [-1/sqrt(fan_in), 1/sqrt(fan_in)]; batch norm scale 1,
/// shift 0, running mean 0, running var 1; clip 10.
template <class T>
ModelParams<T> init_params(int d, int layers, Problem problem, std::uint64_t seed);

int feature_arity_of(Problem problem);

/// Node and edge features for one (instance, solution) pair.
struct Features {
  int n = 0;
  int k = 1;
  std::vector<double> node;  // n x k
  std::vector<double> edge;  // n x n x 2
  double edge_at(int i, int j, int c) const {
    return edge[(static_cast<std::size_t>(i) * n + j) * 2 + c];
  }
};

Features build_features(const Instance& inst, const Solution& sol);

/// Node embeddings (batch*n x d) and edge embeddings (batch*n*n x d). Row
/// (b, i) is b*n + i; row (b, i, j) is (b*n + i)*n + j.
template <class T>
struct EmbeddingState {
  int batch = 0;
  int n = 0;
  Mat<T> h;
  Mat<T> e;
};

template <class T>
struct BatchNormStats {
  Mat<T> node_mean, node_var, edge_mean, edge_var;  // var is unbiased
};

template <class T>
EmbeddingState<T> embed(const ModelParams<T>& params, std::span<const Features> batch);

/// One message-passing layer. In train mode the batch statistics are written
/// to `stats` when non-null; running statistics are not touched.
template <class T>
EmbeddingState<T> gnn_layer(const ModelParams<T>& params, int layer, const EmbeddingState<T>& state, Mode mode,
                            BatchNormStats<T>* stats = nullptr);

/// Action probabilities over node pairs for one instance; row-major n x n.
struct ActionDistribution {
  int n = 0;
  std::vector<double> prob;
  std::vector<double> logit;
  double p(int i, int j) const { return prob[static_cast<std::size_t>(i) * n + j]; }
  double u(int i, int j) const { return logit[static_cast<std::size_t>(i) * n + j]; }
};

/// Decoder MLP, tanh clipping and masked softmax over the n*n cells of each instance.
template <class T>
std::vector<ActionDistribution> decode(const ModelParams<T>& params, const Mat<T>& final_edges, int batch, int n);

template <class T>
struct Retained;

template <class T>
struct ForwardResult {
  int batch = 0;
  int n = 0;
  Mode mode = Mode::eval;
  std::vector<ActionDistribution> dist;
  std::vector<BatchNormStats<T>> stats;  // per layer, train mode only
  std::shared_ptr<const Retained<T>> retained;
};

/// embed -> layers x gnn_layer -> decode. All instances in a batch must share n.
/// Throws NumericError naming the stage on non-finite intermediates.
template <class T>
ForwardResult<T> forward(const ModelParams<T>& params, std::span<const Features> batch, Mode mode,
                         bool retain = false);

template <class T>
ForwardResult<T> forward(const ModelParams<T>& params, const Instance& inst, const Solution& sol, Mode mode,
                         bool retain = false);

/// Sign pattern of every ReLU input of a retained forward pass (encoder and
/// decoder). Two passes with equal patterns lie on the same linear piece.
template <class T>
std::vector<std::uint8_t> activation_pattern(const ForwardResult<T>& result);

/// running <- (1 - momentum) * running + momentum * batch statistic.
template <class T>
void update_running_stats(ModelParams<T>& params, const ForwardResult<T>& result,
                          double momentum = kBatchNormMomentum);

/// Accumulates into `grads` the gradient of sum_b weight[b] * (-log p_b(cell[b])),
/// where cell[b] = u*n + v is the chosen node pair of instance b.
template <class T>
void backward(const ModelParams<T>& params, const ForwardResult<T>& result, std::span<const int> cells,
              std::span<const T> weights, ModelParams<T>& grads);

/// Categorical draw over the off-diagonal cells; returns the node pair (u, v).
Action sample_action(const ActionDistribution& dist, Rng& rng);
Action argmax_action(const ActionDistribution& dist);

/// Off-diagonal node pairs in descending probability, ties by ascending (u, v).
std::vector<Action> ranked_node_pairs(const ActionDistribution& dist);

struct ImprovingChoice {
  std::optional<Action> action;  // operator-space action
  long long inspected = 0;       // distinct candidates evaluated
  double delta = 0.0;
};

/// Walks node pairs by descending probability and returns the first whose
/// move strictly improves the objective. No-op moves and repeats of an
/// already inspected neighbor are skipped without being counted. Stops early
/// once `max_inspections` candidates were evaluated.
ImprovingChoice first_improving_action(const ActionDistribution& dist, const Instance& inst, const Solution& sol,
                                       OperatorKind op, long long max_inspections = -1);

void save_checkpoint(const ModelParams<float>& params, const std::string& path);
/// Reads a checkpoint, validating every tensor shape against the stored
/// hyperparameters (and against `expect_d` / `expect_layers` when given).
ModelParams<float> load_checkpoint(const std::string& path, std::optional<int> expect_d = std::nullopt,
                                   std::optional<int> expect_layers = std::nullopt);

// ---------------------------------------------------------------------------

template <class T, class Fn>
void for_each_tensor(ModelParams<T>& p, Fn&& fn) {
  fn("embed.node.weight", p.node_weight, TensorRole::learnable);
  fn("embed.node.bias", p.node_bias, TensorRole::learnable);
  fn("embed.edge.weight", p.edge_weight, TensorRole::learnable);
  fn("embed.edge.bias", p.edge_bias, TensorRole::learnable);
  for (std::size_t l = 0; l < p.layer.size(); ++l) {
    auto& L = p.layer[l];
    const std::string pre = "layer" + std::to_string(l) + ".";
    fn(pre + "w1", L.w1, TensorRole::learnable);
    fn(pre + "w2", L.w2, TensorRole::learnable);
    fn(pre + "w3", L.w3, TensorRole::learnable);
    fn(pre + "w4", L.w4, TensorRole::learnable);
    fn(pre + "w5", L.w5, TensorRole::learnable);
    fn(pre + "node_bn.scale", L.node_scale, TensorRole::learnable);
    fn(pre + "node_bn.shift", L.node_shift, TensorRole::learnable);
    fn(pre + "node_bn.running_mean", L.node_mean, TensorRole::running_mean);
    fn(pre + "node_bn.running_var", L.node_var, TensorRole::running_var);
    fn(pre + "edge_bn.scale", L.edge_scale, TensorRole::learnable);
    fn(pre + "edge_bn.shift", L.edge_shift, TensorRole::learnable);
    fn(pre + "edge_bn.running_mean", L.edge_mean, TensorRole::running_mean);
    fn(pre + "edge_bn.running_var", L.edge_var, TensorRole::running_var);
  }
  for (std::size_t k = 0; k < p.dec_weight.size(); ++k) {
    const std::string pre = "decoder." + std::to_string(k) + ".";
    fn(pre + "weight", p.dec_weight[k], TensorRole::learnable);
    fn(pre + "bias", p.dec_bias[k], TensorRole::learnable);
  }
}

template <class T, class Fn>
void for_each_tensor(const ModelParams<T>& p, Fn&& fn) {
  for_each_tensor(const_cast<ModelParams<T>&>(p),
                  [&](const std::string& name, Mat<T>& m, TensorRole role) { fn(name, std::as_const(m), role); });
}

template <class To, class From>
ModelParams<To> cast_params(const ModelParams<From>& p) {
  ModelParams<To> out = make_params_shape<To>(p.d, p.layers, p.problem, p.feature_arity);
  out.clip = static_cast<To>(p.clip);
  std::vector<const Mat<From>*> src;
  for_each_tensor(p, [&](const std::string&, const Mat<From>& m, TensorRole) { src.push_back(&m); });
  std::size_t k = 0;
  for_each_tensor(out, [&](const std::string&, Mat<To>& m, TensorRole) { m = src[k++]->template cast<To>(); });
  return out;
}

}  // namespace nicopt
