#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "nicopt/model.hpp"

namespace nicopt::testing {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  long long checked = 0;
  long long kinks = 0;  // coordinates whose +-step crosses a ReLU boundary
  double base_loss_mismatch = 0.0;
};

// Relative error with an absolute floor on the denominator: components far
// below the floor are compared in absolute terms.
inline double relative_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// -R * log p(cell) with a fresh train-mode forward; also reports the ReLU pattern.
inline double policy_loss(const ModelParams<double>& params, const Features& f, int cell, double R,
                          std::vector<std::uint8_t>* pattern = nullptr) {
  auto res = forward<double>(params, std::span<const Features>(&f, 1), Mode::train, pattern != nullptr);
  if (pattern) *pattern = activation_pattern(res);
  return -R * std::log(res.dist[0].prob[static_cast<std::size_t>(cell)]);
}

// Stand-alone decoder over fixed final edge embeddings. Re-evaluates the loss
// after perturbing one decoder weight by propagating only the changed column.
class DecoderProbe {
 public:
  DecoderProbe(const ModelParams<double>& p, Mat<double> edges, int n, int cell, double R)
      : p_(p), n_(n), cell_(cell), R_(R), z0_(std::move(edges)) {
    Mat<double> z = z0_;
    for (int k = 0; k < 4; ++k) {
      pre_[k] = z * p_.dec_weight[k];
      for (Eigen::Index r = 0; r < pre_[k].rows(); ++r) pre_[k].row(r) += p_.dec_bias[k].row(0);
      if (k < 3) {
        act_[k] = pre_[k].cwiseMax(0.0);
        z = act_[k];
      }
    }
  }

  double base_loss() const { return loss_from_raw(pre_[3]); }

  // Loss with dec_weight[k](a, b) += delta, or dec_bias[k](0, b) when a < 0.
  double perturbed(int k, int a, int b, double delta, bool& kink) const {
    const Mat<double>& input = k == 0 ? z0_ : act_[k - 1];
    Eigen::VectorXd col = pre_[k].col(b);
    if (a < 0) {
      col.array() += delta;
    } else {
      col += delta * input.col(a);
    }
    if (k == 3) {
      Mat<double> raw = pre_[3];
      raw.col(0) = col;
      return loss_from_raw(raw);
    }
    for (Eigen::Index r = 0; r < col.size(); ++r)
      if ((col(r) > 0) != (pre_[k](r, b) > 0)) kink = true;
    const Eigen::VectorXd dact = col.cwiseMax(0.0) - act_[k].col(b);
    Mat<double> next = pre_[k + 1] + dact * p_.dec_weight[k + 1].row(b);
    for (int m = k + 1; m < 3; ++m) {
      for (Eigen::Index i = 0; i < next.size(); ++i)
        if ((next.data()[i] > 0) != (pre_[m].data()[i] > 0)) kink = true;
      Mat<double> out = next.cwiseMax(0.0) * p_.dec_weight[m + 1];
      for (Eigen::Index r = 0; r < out.rows(); ++r) out.row(r) += p_.dec_bias[m + 1].row(0);
      next = std::move(out);
    }
    return loss_from_raw(next);
  }

 private:
  double loss_from_raw(const Mat<double>& raw) const {
    const int cells = n_ * n_;
    double mx = -1e300;
    std::vector<double> u(static_cast<std::size_t>(cells));
    for (int c = 0; c < cells; ++c) {
      u[c] = (c / n_ == c % n_) ? -1e9 : static_cast<double>(p_.clip) * std::tanh(raw(c, 0));
      mx = std::max(mx, u[c]);
    }
    double sum = 0.0;
    for (int c = 0; c < cells; ++c) sum += std::exp(u[c] - mx);
    return -R_ * (u[cell_] - mx - std::log(sum));
  }

  const ModelParams<double>& p_;
  int n_;
  int cell_;
  double R_;
  Mat<double> z0_;
  std::array<Mat<double>, 4> pre_;
  std::array<Mat<double>, 3> act_;
};

inline GradCheckReport gradient_check(const ModelParams<double>& params, const Features& f, int cell, double R,
                                      double step = 1e-4, double floor = 1e-4) {
  auto res = forward<double>(params, std::span<const Features>(&f, 1), Mode::train, true);
  const auto base_pattern = activation_pattern(res);
  auto grads = zeros_like(params);
  const int cells[1] = {cell};
  const double weights[1] = {R};
  backward<double>(params, res, cells, weights, grads);

  GradCheckReport report;
  auto record = [&](const std::string& name, Eigen::Index i, double analytic, double numeric) {
    const double err = relative_error(analytic, numeric, floor);
    ++report.checked;
    if (err > report.max_rel_error) {
      report.max_rel_error = err;
      report.worst_tensor = name + "[" + std::to_string(i) + "]";
      report.worst_analytic = analytic;
      report.worst_numeric = numeric;
    }
  };

  // Encoder tensors: full forward passes.
  std::vector<const Mat<double>*> analytic;
  for_each_tensor(grads, [&](const std::string&, const Mat<double>& m, TensorRole role) {
    if (role == TensorRole::learnable) analytic.push_back(&m);
  });
  ModelParams<double> probe = params;
  std::size_t t = 0;
  for_each_tensor(probe, [&](const std::string& name, Mat<double>& m, TensorRole role) {
    if (role != TensorRole::learnable) return;
    const Mat<double>& g = *analytic[t++];
    if (name.rfind("decoder.", 0) == 0) return;
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      std::vector<std::uint8_t> pat_up, pat_down;
      const double saved = m.data()[i];
      m.data()[i] = saved + step;
      const double up = policy_loss(probe, f, cell, R, &pat_up);
      m.data()[i] = saved - step;
      const double down = policy_loss(probe, f, cell, R, &pat_down);
      m.data()[i] = saved;
      if (pat_up != base_pattern || pat_down != base_pattern) {
        ++report.kinks;
        continue;
      }
      record(name, i, g.data()[i], (up - down) / (2 * step));
    }
  });

  // Decoder tensors: the encoder output is fixed, so propagate the change only.
  auto state = embed<double>(params, std::span<const Features>(&f, 1));
  for (int l = 0; l < params.layers; ++l) state = gnn_layer<double>(params, l, state, Mode::train);
  DecoderProbe dec(params, state.e, f.n, cell, R);
  report.base_loss_mismatch = std::abs(dec.base_loss() - policy_loss(params, f, cell, R));
  for (int k = 0; k < 4; ++k) {
    const auto& W = params.dec_weight[k];
    for (int a = -1; a < W.rows(); ++a) {
      for (int b = 0; b < W.cols(); ++b) {
        bool kink = false;
        const double up = dec.perturbed(k, a, b, step, kink);
        const double down = dec.perturbed(k, a, b, -step, kink);
        if (kink) {
          ++report.kinks;
          continue;
        }
        const std::string name = "decoder." + std::to_string(k) + (a < 0 ? ".bias" : ".weight");
        const double g = a < 0 ? grads.dec_bias[k](0, b) : grads.dec_weight[k](a, b);
        record(name, a < 0 ? b : a * W.cols() + b, g, (up - down) / (2 * step));
      }
    }
  }
  return report;
}

}  // namespace nicopt::testing
