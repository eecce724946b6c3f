#include "nicopt/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "nicopt/errors.hpp"

namespace nicopt {

int feature_arity_of(Problem problem) {
  return problem == Problem::tsp ? 2 : 1;
}

template <class T>
ModelParams<T> make_params_shape(int d, int layers, Problem problem, int feature_arity) {
  if (d < 1 || layers < 1) throw ArgumentError("model needs d >= 1 and layers >= 1");
  ModelParams<T> p;
  p.d = d;
  p.layers = layers;
  p.problem = problem;
  p.feature_arity = feature_arity;
  p.node_weight = Mat<T>::Zero(feature_arity, d);
  p.node_bias = Mat<T>::Zero(1, d);
  p.edge_weight = Mat<T>::Zero(2, d);
  p.edge_bias = Mat<T>::Zero(1, d);
  p.layer.resize(static_cast<std::size_t>(layers));
  for (auto& L : p.layer) {
    for (Mat<T>* w : {&L.w1, &L.w2, &L.w3, &L.w4, &L.w5}) *w = Mat<T>::Zero(d, d);
    for (Mat<T>* v : {&L.node_scale, &L.node_shift, &L.node_mean, &L.node_var, &L.edge_scale, &L.edge_shift,
                      &L.edge_mean, &L.edge_var}) {
      *v = Mat<T>::Zero(1, d);
    }
  }
  int in = d;
  for (std::size_t k = 0; k < kDecoderWidths.size(); ++k) {
    p.dec_weight[k] = Mat<T>::Zero(in, kDecoderWidths[k]);
    p.dec_bias[k] = Mat<T>::Zero(1, kDecoderWidths[k]);
    in = kDecoderWidths[k];
  }
  return p;
}

template <class T>
ModelParams<T> zeros_like(const ModelParams<T>& p) {
  auto z = make_params_shape<T>(p.d, p.layers, p.problem, p.feature_arity);
  z.clip = p.clip;
  return z;
}

template <class T>
ModelParams<T> init_params(int d, int layers, Problem problem, std::uint64_t seed) {
  auto p = make_params_shape<T>(d, layers, problem, feature_arity_of(problem));
  Rng rng(seed);
  auto fill = [&](Mat<T>& m, int fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = static_cast<T>(dist(rng));
  };
  fill(p.node_weight, p.feature_arity);
  fill(p.node_bias, p.feature_arity);
  fill(p.edge_weight, 2);
  fill(p.edge_bias, 2);
  for (auto& L : p.layer) {
    for (Mat<T>* w : {&L.w1, &L.w2, &L.w3, &L.w4, &L.w5}) fill(*w, d);
    L.node_scale.setOnes();
    L.edge_scale.setOnes();
    L.node_var.setOnes();
    L.edge_var.setOnes();
  }
  for (std::size_t k = 0; k < p.dec_weight.size(); ++k) {
    const int fan_in = static_cast<int>(p.dec_weight[k].rows());
    fill(p.dec_weight[k], fan_in);
    fill(p.dec_bias[k], fan_in);
  }
  p.clip = T(10);
  return p;
}

Features build_features(const Instance& inst, const Solution& sol) {
  const int n = size_of(inst);
  if (size_of(sol) != n) throw ArgumentError("solution size does not match instance size");
  const Problem problem = problem_of(inst);
  Features f;
  f.n = n;
  f.k = feature_arity_of(problem);
  f.node.assign(static_cast<std::size_t>(n) * f.k, 1.0);
  f.edge.assign(static_cast<std::size_t>(n) * n * 2, 0.0);
  auto put = [&](int i, int j, bool first, double w) {
    f.edge[(static_cast<std::size_t>(i) * n + j) * 2 + (first ? 0 : 1)] = w;
  };
  switch (problem) {
    case Problem::prp: {
      const auto pos = std::get<Permutation>(sol).positions();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          if (i != j) put(i, j, pos[i] < pos[j], edge_weight(inst, i, j));
      break;
    }
    case Problem::tsp: {
      const auto& tsp = std::get<TspInstance>(inst);
      const auto pos = std::get<Permutation>(sol).positions();
      for (int i = 0; i < n; ++i) {
        f.node[static_cast<std::size_t>(i) * 2] = tsp.coords()[i].x;
        f.node[static_cast<std::size_t>(i) * 2 + 1] = tsp.coords()[i].y;
        for (int j = 0; j < n; ++j) {
          if (i == j) continue;
          const int gap = std::abs(pos[i] - pos[j]);
          put(i, j, gap == 1 || gap == n - 1, tsp.dist(i, j));
        }
      }
      break;
    }
    case Problem::gpp: {
      const auto& part = std::get<Bipartition>(sol);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          if (i != j) put(i, j, part[i] != part[j], edge_weight(inst, i, j));
      break;
    }
  }
  return f;
}

// ---------------------------------------------------------------------------
// Forward pass

template <class T>
struct Retained {
  struct Layer {
    Mat<T> s;          // sigmoid(e), rows B*n*n
    Mat<T> g;          // h * w2, rows B*n
    Mat<T> node_xhat;  // normalized node pre-activation
    Mat<T> node_pre;   // batch norm output before ReLU
    Mat<T> node_istd;  // 1 x d
    Mat<T> edge_xhat;
    Mat<T> edge_pre;
    Mat<T> edge_istd;
  };
  Mat<T> nf;  // B*n x k
  Mat<T> x;   // B*n*n x 2
  std::vector<Mat<T>> h;
  std::vector<Mat<T>> e;
  std::vector<Layer> layer;
  std::array<Mat<T>, 3> dec_pre;
  std::array<Mat<T>, 3> dec_act;
  Mat<T> tanh_out;  // B*n*n x 1
  Mat<T> prob;      // B*n*n x 1
};

namespace {

template <class T>
void check_finite(const Mat<T>& m, const std::string& stage) {
  if (!m.allFinite()) throw NumericError("non-finite value in " + stage);
}

template <class T>
struct NormOut {
  Mat<T> y;
  Mat<T> xhat;
  Mat<T> istd;
  Mat<T> mean;
  Mat<T> var_unbiased;
};

template <class T>
NormOut<T> batch_norm(const Mat<T>& x, const Mat<T>& scale, const Mat<T>& shift, const Mat<T>& run_mean,
                      const Mat<T>& run_var, Mode mode) {
  NormOut<T> out;
  const auto rows = static_cast<T>(x.rows());
  const T eps = static_cast<T>(kBatchNormEps);
  if (mode == Mode::train) {
    out.mean = x.colwise().mean();
    Mat<T> centered = x.rowwise() - out.mean.row(0);
    Mat<T> var = centered.array().square().colwise().sum() / rows;
    out.istd = (var.array() + eps).rsqrt().matrix();
    out.xhat = (centered.array().rowwise() * out.istd.row(0).array()).matrix();
    out.var_unbiased = x.rows() > 1 ? Mat<T>(var * (rows / (rows - T(1)))) : var;
  } else {
    out.istd = (run_var.array() + eps).rsqrt().matrix();
    out.xhat = ((x.rowwise() - run_mean.row(0)).array().rowwise() * out.istd.row(0).array()).matrix();
  }
  out.y = (out.xhat.array().rowwise() * scale.row(0).array()).matrix();
  out.y.rowwise() += shift.row(0);
  return out;
}

template <class T>
Mat<T> batch_norm_backward(const Mat<T>& gy, const Mat<T>& scale, const Mat<T>& xhat, const Mat<T>& istd, Mode mode) {
  Mat<T> gxhat = (gy.array().rowwise() * scale.row(0).array()).matrix();
  if (mode == Mode::eval) return (gxhat.array().rowwise() * istd.row(0).array()).matrix();
  const auto rows = static_cast<T>(gy.rows());
  const Mat<T> sum_g = gxhat.colwise().sum();
  const Mat<T> sum_gx = (gxhat.array() * xhat.array()).colwise().sum();
  Mat<T> gx = gxhat * rows;
  gx.rowwise() -= sum_g.row(0);
  gx -= (xhat.array().rowwise() * sum_gx.row(0).array()).matrix();
  return (gx.array().rowwise() * (istd.row(0).array() / rows)).matrix();
}

template <class T>
Mat<T> relu(const Mat<T>& x) {
  return x.cwiseMax(T(0));
}

template <class T>
Mat<T> relu_mask(const Mat<T>& pre) {
  return (pre.array() > T(0)).template cast<T>().matrix();
}

template <class T>
EmbeddingState<T> embed_impl(const ModelParams<T>& params, std::span<const Features> batch, Retained<T>* keep) {
  if (batch.empty()) throw ArgumentError("empty batch");
  const int n = batch.front().n;
  const int k = params.feature_arity;
  const int B = static_cast<int>(batch.size());
  Mat<T> nf(static_cast<Eigen::Index>(B) * n, k);
  Mat<T> x(static_cast<Eigen::Index>(B) * n * n, 2);
  for (int b = 0; b < B; ++b) {
    const auto& f = batch[static_cast<std::size_t>(b)];
    if (f.n != n) throw ArgumentError("all instances in a batch must have the same size");
    if (f.k != k) {
      throw ArgumentError("node feature width " + std::to_string(f.k) + " does not match the model's " +
                          std::to_string(k));
    }
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < k; ++c) nf(static_cast<Eigen::Index>(b) * n + i, c) = static_cast<T>(f.node[i * k + c]);
    const std::size_t base = static_cast<std::size_t>(b) * n * n;
    for (std::size_t r = 0; r < static_cast<std::size_t>(n) * n; ++r) {
      x(static_cast<Eigen::Index>(base + r), 0) = static_cast<T>(f.edge[r * 2]);
      x(static_cast<Eigen::Index>(base + r), 1) = static_cast<T>(f.edge[r * 2 + 1]);
    }
  }
  EmbeddingState<T> s;
  s.batch = B;
  s.n = n;
  s.h = nf * params.node_weight;
  s.h.rowwise() += params.node_bias.row(0);
  s.e = x * params.edge_weight;
  s.e.rowwise() += params.edge_bias.row(0);
  if (keep) {
    keep->nf = std::move(nf);
    keep->x = std::move(x);
  }
  return s;
}

template <class T>
EmbeddingState<T> layer_impl(const ModelParams<T>& params, int l, const EmbeddingState<T>& in, Mode mode,
                             BatchNormStats<T>* stats, typename Retained<T>::Layer* keep) {
  if (l < 0 || l >= params.layers) throw ArgumentError("layer index out of range");
  const auto& P = params.layer[static_cast<std::size_t>(l)];
  const int n = in.n;
  const int B = in.batch;
  const Eigen::Index d = params.d;
  if (in.h.cols() != d || in.e.cols() != d) throw ArgumentError("embedding width does not match the model");

  // Node update: h + ReLU(BN(h W1 + sum_j sigmoid(e_ij) * (h_j W2))).
  Mat<T> s = (T(1) / ((-in.e.array()).exp() + T(1))).matrix();
  Mat<T> g = in.h * P.w2;
  Mat<T> a = in.h * P.w1;
  for (int b = 0; b < B; ++b) {
    for (int i = 0; i < n; ++i) {
      const Eigen::Index bi = static_cast<Eigen::Index>(b) * n + i;
      a.row(bi) += (s.middleRows(bi * n, n).array() * g.middleRows(static_cast<Eigen::Index>(b) * n, n).array())
                       .colwise()
                       .sum()
                       .matrix();
    }
  }
  auto node_bn = batch_norm(a, P.node_scale, P.node_shift, P.node_mean, P.node_var, mode);

  // Edge update: e + ReLU(BN(e W3 + h_i W4 + h_j W5)).
  const Mat<T> hw4 = in.h * P.w4;
  const Mat<T> hw5 = in.h * P.w5;
  Mat<T> pe = in.e * P.w3;
  for (int b = 0; b < B; ++b) {
    for (int i = 0; i < n; ++i) {
      const Eigen::Index bi = static_cast<Eigen::Index>(b) * n + i;
      auto block = pe.middleRows(bi * n, n);
      block.rowwise() += hw4.row(bi);
      block += hw5.middleRows(static_cast<Eigen::Index>(b) * n, n);
    }
  }
  auto edge_bn = batch_norm(pe, P.edge_scale, P.edge_shift, P.edge_mean, P.edge_var, mode);

  EmbeddingState<T> out;
  out.batch = B;
  out.n = n;
  out.h = in.h + relu(node_bn.y);
  out.e = in.e + relu(edge_bn.y);

  if (stats && mode == Mode::train) {
    stats->node_mean = node_bn.mean;
    stats->node_var = node_bn.var_unbiased;
    stats->edge_mean = edge_bn.mean;
    stats->edge_var = edge_bn.var_unbiased;
  }
  if (keep) {
    keep->s = std::move(s);
    keep->g = std::move(g);
    keep->node_xhat = std::move(node_bn.xhat);
    keep->node_pre = std::move(node_bn.y);
    keep->node_istd = std::move(node_bn.istd);
    keep->edge_xhat = std::move(edge_bn.xhat);
    keep->edge_pre = std::move(edge_bn.y);
    keep->edge_istd = std::move(edge_bn.istd);
  }
  return out;
}

template <class T>
std::vector<ActionDistribution> decode_impl(const ModelParams<T>& params, const Mat<T>& edges, int B, int n,
                                            Retained<T>* keep) {
  if (edges.rows() != static_cast<Eigen::Index>(B) * n * n || edges.cols() != params.d) {
    throw ArgumentError("edge embedding shape does not match the model");
  }
  Mat<T> z = edges;
  for (std::size_t k = 0; k < 3; ++k) {
    Mat<T> pre = z * params.dec_weight[k];
    pre.rowwise() += params.dec_bias[k].row(0);
    z = relu(pre);
    if (keep) {
      keep->dec_pre[k] = std::move(pre);
      keep->dec_act[k] = z;
    }
  }
  Mat<T> raw = z * params.dec_weight[3];
  raw.rowwise() += params.dec_bias[3].row(0);
  Mat<T> t = raw.array().tanh().matrix();
  check_finite(t, "decoder");

  std::vector<ActionDistribution> dists(static_cast<std::size_t>(B));
  Mat<T> prob(static_cast<Eigen::Index>(B) * n * n, 1);
  const std::size_t nn = static_cast<std::size_t>(n) * n;
  std::vector<double> u(nn);
  for (int b = 0; b < B; ++b) {
    auto& dist = dists[static_cast<std::size_t>(b)];
    dist.n = n;
    dist.prob.resize(nn);
    dist.logit.resize(nn);
    const Eigen::Index base = static_cast<Eigen::Index>(b) * static_cast<Eigen::Index>(nn);
    double max_u = kMaskedLogit;
    for (std::size_t c = 0; c < nn; ++c) {
      const bool diag = (c / n) == (c % n);
      u[c] = diag ? kMaskedLogit : static_cast<double>(params.clip * t(base + static_cast<Eigen::Index>(c), 0));
      max_u = std::max(max_u, u[c]);
    }
    // normalized in double so large n stays within rounding of 1
    double total = 0;
    for (std::size_t c = 0; c < nn; ++c) {
      dist.prob[c] = std::exp(u[c] - max_u);
      total += dist.prob[c];
    }
    for (std::size_t c = 0; c < nn; ++c) {
      dist.prob[c] /= total;
      dist.logit[c] = u[c];
      prob(base + static_cast<Eigen::Index>(c), 0) = static_cast<T>(dist.prob[c]);
    }
  }
  if (keep) {
    keep->tanh_out = std::move(t);
    keep->prob = std::move(prob);
  }
  return dists;
}

}  // namespace

template <class T>
EmbeddingState<T> embed(const ModelParams<T>& params, std::span<const Features> batch) {
  return embed_impl<T>(params, batch, nullptr);
}

template <class T>
EmbeddingState<T> gnn_layer(const ModelParams<T>& params, int layer, const EmbeddingState<T>& state, Mode mode,
                            BatchNormStats<T>* stats) {
  return layer_impl<T>(params, layer, state, mode, stats, nullptr);
}

template <class T>
std::vector<ActionDistribution> decode(const ModelParams<T>& params, const Mat<T>& final_edges, int batch, int n) {
  return decode_impl<T>(params, final_edges, batch, n, nullptr);
}

template <class T>
ForwardResult<T> forward(const ModelParams<T>& params, std::span<const Features> batch, Mode mode, bool retain) {
  // Instances are independent in eval mode; one at a time keeps every result
  // bitwise equal to its single-instance evaluation.
  if (mode == Mode::eval && !retain && batch.size() > 1) {
    ForwardResult<T> result;
    result.mode = mode;
    result.batch = static_cast<int>(batch.size());
    result.n = batch.front().n;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      if (batch[b].n != result.n) throw ArgumentError("all instances in a batch must share n");
      auto one = forward<T>(params, batch.subspan(b, 1), mode, false);
      result.dist.push_back(std::move(one.dist.front()));
    }
    return result;
  }
  std::shared_ptr<Retained<T>> keep = retain ? std::make_shared<Retained<T>>() : nullptr;
  ForwardResult<T> result;
  result.mode = mode;
  auto state = embed_impl<T>(params, batch, keep.get());
  check_finite(state.h, "node embedding");
  check_finite(state.e, "edge embedding");
  result.batch = state.batch;
  result.n = state.n;
  if (keep) {
    keep->layer.resize(static_cast<std::size_t>(params.layers));
    keep->h.push_back(state.h);
    keep->e.push_back(state.e);
  }
  if (mode == Mode::train) result.stats.resize(static_cast<std::size_t>(params.layers));
  for (int l = 0; l < params.layers; ++l) {
    state = layer_impl<T>(params, l, state, mode,
                          mode == Mode::train ? &result.stats[static_cast<std::size_t>(l)] : nullptr,
                          keep ? &keep->layer[static_cast<std::size_t>(l)] : nullptr);
    check_finite(state.h, "encoder layer " + std::to_string(l) + " (nodes)");
    check_finite(state.e, "encoder layer " + std::to_string(l) + " (edges)");
    if (keep) {
      keep->h.push_back(state.h);
      keep->e.push_back(state.e);
    }
  }
  result.dist = decode_impl<T>(params, state.e, state.batch, state.n, keep.get());
  result.retained = std::move(keep);
  return result;
}

template <class T>
ForwardResult<T> forward(const ModelParams<T>& params, const Instance& inst, const Solution& sol, Mode mode,
                         bool retain) {
  const Features f = build_features(inst, sol);
  return forward<T>(params, std::span<const Features>(&f, 1), mode, retain);
}

template <class T>
void update_running_stats(ModelParams<T>& params, const ForwardResult<T>& result, double momentum) {
  if (result.mode != Mode::train || result.stats.size() != params.layer.size()) return;
  const T m = static_cast<T>(momentum);
  for (std::size_t l = 0; l < params.layer.size(); ++l) {
    auto& L = params.layer[l];
    const auto& s = result.stats[l];
    L.node_mean = (T(1) - m) * L.node_mean + m * s.node_mean;
    L.node_var = (T(1) - m) * L.node_var + m * s.node_var;
    L.edge_mean = (T(1) - m) * L.edge_mean + m * s.edge_mean;
    L.edge_var = (T(1) - m) * L.edge_var + m * s.edge_var;
  }
}

template <class T>
std::vector<std::uint8_t> activation_pattern(const ForwardResult<T>& result) {
  if (!result.retained) throw UsageError("activation_pattern needs a forward pass run with retain = true");
  const auto& r = *result.retained;
  std::vector<std::uint8_t> out;
  auto add = [&](const Mat<T>& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) out.push_back(m.data()[i] > T(0) ? 1 : 0);
  };
  for (const auto& L : r.layer) {
    add(L.node_pre);
    add(L.edge_pre);
  }
  for (const auto& m : r.dec_pre) add(m);
  return out;
}

// ---------------------------------------------------------------------------
// Backward pass

template <class T>
void backward(const ModelParams<T>& params, const ForwardResult<T>& result, std::span<const int> cells,
              std::span<const T> weights, ModelParams<T>& grads) {
  if (!result.retained) throw UsageError("backward needs a forward pass run with retain = true");
  const auto& r = *result.retained;
  const int B = result.batch;
  const int n = result.n;
  if (static_cast<int>(cells.size()) != B || static_cast<int>(weights.size()) != B) {
    throw ArgumentError("backward needs one action and one weight per batch member");
  }
  const Eigen::Index nn = static_cast<Eigen::Index>(n) * n;
  const Eigen::Index rows = static_cast<Eigen::Index>(B) * nn;

  // d/du of w * (-log softmax(u)[a]) = w * (p - onehot(a)); masked cells are constants.
  Mat<T> gu = Mat<T>::Zero(rows, 1);
  for (int b = 0; b < B; ++b) {
    const int cell = cells[static_cast<std::size_t>(b)];
    if (cell < 0 || cell >= nn || cell / n == cell % n) throw ArgumentError("backward: invalid action cell");
    const T w = weights[static_cast<std::size_t>(b)];
    for (Eigen::Index c = 0; c < nn; ++c) {
      if (c / n == c % n) continue;
      const Eigen::Index idx = b * nn + c;
      gu(idx, 0) = w * (r.prob(idx, 0) - (c == cell ? T(1) : T(0)));
    }
  }
  Mat<T> gz = (gu.array() * params.clip * (T(1) - r.tanh_out.array().square())).matrix();

  Mat<T> ge;
  for (int k = 3; k >= 0; --k) {
    const Mat<T>& input = k == 0 ? r.e.back() : r.dec_act[static_cast<std::size_t>(k - 1)];
    grads.dec_weight[k].noalias() += input.transpose() * gz;
    grads.dec_bias[k] += gz.colwise().sum();
    Mat<T> gin = gz * params.dec_weight[k].transpose();
    if (k > 0) {
      gz = (gin.array() * relu_mask(r.dec_pre[static_cast<std::size_t>(k - 1)]).array()).matrix();
    } else {
      ge = std::move(gin);
    }
  }

  Mat<T> gh = Mat<T>::Zero(static_cast<Eigen::Index>(B) * n, params.d);
  for (int l = params.layers - 1; l >= 0; --l) {
    const auto& R = r.layer[static_cast<std::size_t>(l)];
    const auto& P = params.layer[static_cast<std::size_t>(l)];
    auto& G = grads.layer[static_cast<std::size_t>(l)];
    const Mat<T>& h = r.h[static_cast<std::size_t>(l)];
    const Mat<T>& e = r.e[static_cast<std::size_t>(l)];

    const Mat<T> gy_node = (gh.array() * relu_mask(R.node_pre).array()).matrix();
    G.node_scale += (gy_node.array() * R.node_xhat.array()).colwise().sum().matrix();
    G.node_shift += gy_node.colwise().sum();
    const Mat<T> ga = batch_norm_backward(gy_node, P.node_scale, R.node_xhat, R.node_istd, result.mode);

    const Mat<T> gy_edge = (ge.array() * relu_mask(R.edge_pre).array()).matrix();
    G.edge_scale += (gy_edge.array() * R.edge_xhat.array()).colwise().sum().matrix();
    G.edge_shift += gy_edge.colwise().sum();
    const Mat<T> gp = batch_norm_backward(gy_edge, P.edge_scale, R.edge_xhat, R.edge_istd, result.mode);

    Mat<T> gh_in = gh;  // residual paths
    Mat<T> ge_in = ge;

    G.w1.noalias() += h.transpose() * ga;
    gh_in.noalias() += ga * P.w1.transpose();

    Mat<T> gg = Mat<T>::Zero(h.rows(), params.d);
    Mat<T> ghw4(h.rows(), params.d);
    Mat<T> ghw5 = Mat<T>::Zero(h.rows(), params.d);
    for (int b = 0; b < B; ++b) {
      const Eigen::Index b0 = static_cast<Eigen::Index>(b) * n;
      for (int i = 0; i < n; ++i) {
        const Eigen::Index bi = b0 + i;
        const auto s_blk = R.s.middleRows(bi * n, n).array();
        const auto g_blk = R.g.middleRows(b0, n).array();
        const auto ga_row = ga.row(bi).array();
        ge_in.middleRows(bi * n, n).array() += (g_blk.rowwise() * ga_row) * s_blk * (T(1) - s_blk);
        gg.middleRows(b0, n).array() += s_blk.rowwise() * ga_row;
        ghw4.row(bi) = gp.middleRows(bi * n, n).colwise().sum();
        ghw5.middleRows(b0, n) += gp.middleRows(bi * n, n);
      }
    }
    G.w2.noalias() += h.transpose() * gg;
    gh_in.noalias() += gg * P.w2.transpose();

    G.w3.noalias() += e.transpose() * gp;
    ge_in.noalias() += gp * P.w3.transpose();
    G.w4.noalias() += h.transpose() * ghw4;
    gh_in.noalias() += ghw4 * P.w4.transpose();
    G.w5.noalias() += h.transpose() * ghw5;
    gh_in.noalias() += ghw5 * P.w5.transpose();

    gh = std::move(gh_in);
    ge = std::move(ge_in);
  }

  grads.node_weight.noalias() += r.nf.transpose() * gh;
  grads.node_bias += gh.colwise().sum();
  grads.edge_weight.noalias() += r.x.transpose() * ge;
  grads.edge_bias += ge.colwise().sum();
}

// ---------------------------------------------------------------------------
// Action selection

Action sample_action(const ActionDistribution& dist, Rng& rng) {
  const int n = dist.n;
  double total = 0.0;
  for (double p : dist.prob) total += p;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double target = unit(rng) * total;
  double acc = 0.0;
  int last_valid = -1;
  for (int c = 0; c < n * n; ++c) {
    const double p = dist.prob[static_cast<std::size_t>(c)];
    if (p <= 0.0 || c / n == c % n) continue;
    acc += p;
    last_valid = c;
    if (acc > target) return {c / n, c % n};
  }
  if (last_valid < 0) throw NumericError("action distribution has no positive off-diagonal mass");
  return {last_valid / n, last_valid % n};
}

Action argmax_action(const ActionDistribution& dist) {
  const int n = dist.n;
  int best = -1;
  for (int c = 0; c < n * n; ++c) {
    if (c / n == c % n) continue;
    if (best < 0 || dist.prob[static_cast<std::size_t>(c)] > dist.prob[static_cast<std::size_t>(best)]) best = c;
  }
  return {best / n, best % n};
}

std::vector<Action> ranked_node_pairs(const ActionDistribution& dist) {
  const int n = dist.n;
  std::vector<int> cells;
  cells.reserve(static_cast<std::size_t>(n) * (n - 1));
  for (int c = 0; c < n * n; ++c)
    if (c / n != c % n) cells.push_back(c);
  std::stable_sort(cells.begin(), cells.end(), [&](int a, int b) {
    return dist.prob[static_cast<std::size_t>(a)] > dist.prob[static_cast<std::size_t>(b)];
  });
  std::vector<Action> out;
  out.reserve(cells.size());
  for (int c : cells) out.push_back({c / n, c % n});
  return out;
}

ImprovingChoice first_improving_action(const ActionDistribution& dist, const Instance& inst, const Solution& sol,
                                       OperatorKind op, long long max_inspections) {
  const int n = dist.n;
  const double sign = orientation(problem_of(inst));
  std::vector<char> seen(static_cast<std::size_t>(n) * n, 0);
  ImprovingChoice choice;
  for (const auto& pair : ranked_node_pairs(dist)) {
    if (max_inspections >= 0 && choice.inspected >= max_inspections) break;
    const Action a = action_from_node_pair(sol, pair.i, pair.j);
    const auto canon = canonical_action(op, sol, a);
    if (!canon) continue;
    auto& mark = seen[static_cast<std::size_t>(canon->i) * n + canon->j];
    if (mark) continue;
    mark = 1;
    ++choice.inspected;
    const double delta = move_delta(inst, sol, op, *canon);
    if (sign * delta > 0.0) {
      choice.action = a;
      choice.delta = delta;
      return choice;
    }
  }
  return choice;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'N', 'I', 'C', 'O', 'P', 'T', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw CheckpointError("checkpoint truncated while reading " + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_checkpoint(const ModelParams<float>& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open '" + path + "' for writing");
  nlohmann::json header = {{"d", params.d},
                           {"layers", params.layers},
                           {"clip", static_cast<double>(params.clip)},
                           {"problem", std::string(to_string(params.problem))},
                           {"feature_arity", params.feature_arity}};
  const std::string text = header.dump();
  out.write(kMagic, sizeof kMagic);
  write_u32(out, kCheckpointVersion);
  write_u32(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for_each_tensor(params, [&](const std::string& name, const Mat<float>& m, TensorRole) {
    write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(out, static_cast<std::uint32_t>(m.rows()));
    write_u32(out, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) write_u32(out, std::bit_cast<std::uint32_t>(m.data()[i]));
  });
  if (!out) throw CheckpointError("failed writing checkpoint '" + path + "'");
}

ModelParams<float> load_checkpoint(const std::string& path, std::optional<int> expect_d,
                                   std::optional<int> expect_layers) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw CheckpointError("'" + path + "' is not a model checkpoint");
  }
  const auto version = read_u32(in, "version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = read_u32(in, "header length");
  if (header_len > (1U << 20)) throw CheckpointError("checkpoint header is implausibly large");
  std::string text(header_len, '\0');
  if (!in.read(text.data(), header_len)) throw CheckpointError("checkpoint truncated while reading header");

  ModelParams<float> params;
  try {
    const auto header = nlohmann::json::parse(text);
    const int d = expect_d.value_or(header.at("d").get<int>());
    const int layers = expect_layers.value_or(header.at("layers").get<int>());
    if (expect_layers && header.at("layers").get<int>() != *expect_layers) {
      throw CheckpointError("checkpoint has " + std::to_string(header.at("layers").get<int>()) +
                            " layers, expected " + std::to_string(*expect_layers));
    }
    params = make_params_shape<float>(d, layers, parse_problem(header.at("problem").get<std::string>()),
                                      header.at("feature_arity").get<int>());
    params.clip = static_cast<float>(header.at("clip").get<double>());
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint header: ") + e.what());
  } catch (const ArgumentError& e) {
    throw CheckpointError(std::string("bad checkpoint header: ") + e.what());
  }

  for_each_tensor(params, [&](const std::string& name, Mat<float>& m, TensorRole) {
    const auto name_len = read_u32(in, "tensor '" + name + "'");
    if (name_len > 4096) throw CheckpointError("corrupt tensor name length before '" + name + "'");
    std::string stored(name_len, '\0');
    if (!in.read(stored.data(), name_len)) throw CheckpointError("checkpoint truncated while reading tensor '" + name + "'");
    if (stored != name) throw CheckpointError("expected tensor '" + name + "', found '" + stored + "'");
    const auto rows = read_u32(in, "tensor '" + name + "'");
    const auto cols = read_u32(in, "tensor '" + name + "'");
    if (rows != m.rows() || cols != m.cols()) {
      throw CheckpointError("tensor '" + name + "' has shape " + std::to_string(rows) + "x" + std::to_string(cols) +
                            ", expected " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
    }
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std::bit_cast<float>(read_u32(in, "tensor '" + name + "'"));
  });
  return params;
}

// ---------------------------------------------------------------------------

#define NICOPT_INSTANTIATE(T)                                                                                        \
  template struct Retained<T>;                                                                                       \
  template ModelParams<T> make_params_shape<T>(int, int, Problem, int);                                              \
  template ModelParams<T> zeros_like<T>(const ModelParams<T>&);                                                      \
  template ModelParams<T> init_params<T>(int, int, Problem, std::uint64_t);                                          \
  template EmbeddingState<T> embed<T>(const ModelParams<T>&, std::span<const Features>);                             \
  template EmbeddingState<T> gnn_layer<T>(const ModelParams<T>&, int, const EmbeddingState<T>&, Mode,                \
                                          BatchNormStats<T>*);                                                       \
  template std::vector<ActionDistribution> decode<T>(const ModelParams<T>&, const Mat<T>&, int, int);                \
  template ForwardResult<T> forward<T>(const ModelParams<T>&, std::span<const Features>, Mode, bool);                \
  template ForwardResult<T> forward<T>(const ModelParams<T>&, const Instance&, const Solution&, Mode, bool);         \
  template std::vector<std::uint8_t> activation_pattern<T>(const ForwardResult<T>&);                             \
  template void update_running_stats<T>(ModelParams<T>&, const ForwardResult<T>&, double);                           \
  template void backward<T>(const ModelParams<T>&, const ForwardResult<T>&, std::span<const int>, std::span<const T>, \
                            ModelParams<T>&);

NICOPT_INSTANTIATE(float)
NICOPT_INSTANTIATE(double)

#undef NICOPT_INSTANTIATE

}  // namespace nicopt
