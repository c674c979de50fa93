// Two-layer perceptron (one ReLU hidden layer) with exact reverse-mode
// gradients, batched over rows.

#pragma once

#include <Eigen/Core>

#include "gscalib/random.hpp"

namespace gscalib {

using MatX = Eigen::MatrixXd;
using VecX = Eigen::VectorXd;

struct DenseLayer {
  MatX weight;  // [out x in]
  VecX bias;    // [out]

  int in_dim() const { return static_cast<int>(weight.cols()); }
  int out_dim() const { return static_cast<int>(weight.rows()); }

  /// rows of x are samples: y = x * W^T + b
  MatX forward(const MatX& x) const {
    return (x * weight.transpose()).rowwise() + bias.transpose();
  }
};

struct DenseLayerGrad {
  MatX weight;
  VecX bias;

  void init_like(const DenseLayer& l) {
    weight = MatX::Zero(l.weight.rows(), l.weight.cols());
    bias = VecX::Zero(l.bias.size());
  }
};

/// in -> hidden (ReLU) -> out
struct Mlp2 {
  DenseLayer hidden;
  DenseLayer output;

  struct Cache {
    MatX input;       // [N x in]
    MatX hidden_pre;  // [N x hidden], pre-activation
  };

  MatX forward(const MatX& x, Cache* cache = nullptr) const {
    MatX h_pre = hidden.forward(x);
    if (cache) {
      cache->input = x;
      cache->hidden_pre = h_pre;
    }
    MatX h = h_pre.cwiseMax(0.0);
    return output.forward(h);
  }

  /// Accumulates parameter gradients into `grad` and returns dL/dx.
  MatX backward(const Cache& cache, const MatX& d_out, DenseLayerGrad* grad_hidden,
                DenseLayerGrad* grad_output) const {
    const MatX h = cache.hidden_pre.cwiseMax(0.0);
    if (grad_output) {
      grad_output->weight.noalias() += d_out.transpose() * h;
      grad_output->bias += d_out.colwise().sum();
    }
    MatX d_h = d_out * output.weight;
    // ReLU mask
    d_h = (cache.hidden_pre.array() > 0.0).select(d_h, 0.0);
    if (grad_hidden) {
      grad_hidden->weight.noalias() += d_h.transpose() * cache.input;
      grad_hidden->bias += d_h.colwise().sum();
    }
    return d_h * hidden.weight;
  }

  /// Kaiming-uniform hidden layer, zero output layer (bias settable).
  static Mlp2 init(int in_dim, int hidden_dim, int out_dim, Rng& rng,
                   double output_bias = 0.0) {
    Mlp2 net;
    const double bound = std::sqrt(6.0 / in_dim);
    net.hidden.weight = MatX::NullaryExpr(hidden_dim, in_dim,
                                          [&]() { return uniform(rng, -bound, bound); });
    net.hidden.bias = VecX::Zero(hidden_dim);
    net.output.weight = MatX::Zero(out_dim, hidden_dim);
    net.output.bias = VecX::Constant(out_dim, output_bias);
    return net;
  }
};

struct Mlp2Grad {
  DenseLayerGrad hidden;
  DenseLayerGrad output;

  void init_like(const Mlp2& net) {
    hidden.init_like(net.hidden);
    output.init_like(net.output);
  }
};

}  // namespace gscalib
