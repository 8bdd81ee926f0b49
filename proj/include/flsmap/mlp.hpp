#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "flsmap/param_store.hpp"
#include "flsmap/rng.hpp"
#include "flsmap/types.hpp"

namespace flsmap {

enum class Activation { kIdentity, kRelu, kSigmoid };

struct MlpSpec {
  int input_dim = 1;
  int hidden_layers = 2;
  int hidden_width = 64;
  int output_dim = 1;
  Activation hidden_act = Activation::kRelu;
  Activation output_act = Activation::kIdentity;
};

/// Activations of one forward pass, kept for the exact reverse pass.
template <typename S>
struct MlpSaved {
  MatX<S> input;              // in x n
  std::vector<MatX<S>> acts;  // post-activation per layer; back() is the output
};

template <typename S>
struct Mlp {
  MlpSpec spec;
  std::vector<MatX<S>> weights;  // [out x in] per layer
  std::vector<MatX<S>> biases;   // [out x 1]
  std::vector<MatX<S>> w_grad, b_grad;

  int layer_count() const { return spec.hidden_layers + 1; }

  void init(const MlpSpec& s, Rng& rng) {
    if (s.input_dim < 1 || s.output_dim < 1 || s.hidden_layers < 0 ||
        (s.hidden_layers > 0 && s.hidden_width < 1))
      throw std::invalid_argument("Mlp: bad spec");
    spec = s;
    weights.clear();
    biases.clear();
    int in = s.input_dim;
    for (int l = 0; l < layer_count(); ++l) {
      const int out = (l == layer_count() - 1) ? s.output_dim : s.hidden_width;
      const double limit = std::sqrt(6.0 / in);
      MatX<S> w(out, in);
      for (Eigen::Index i = 0; i < w.size(); ++i)
        w.data()[i] = S(rng.uniform(-limit, limit));
      weights.push_back(std::move(w));
      biases.push_back(MatX<S>::Zero(out, 1));
      in = out;
    }
    w_grad.resize(weights.size());
    b_grad.resize(biases.size());
    for (size_t l = 0; l < weights.size(); ++l) {
      w_grad[l].setZero(weights[l].rows(), weights[l].cols());
      b_grad[l].setZero(biases[l].rows(), 1);
    }
  }

  void register_params(ParamStore<S>& store, const std::string& prefix) {
    for (size_t l = 0; l < weights.size(); ++l) {
      store.add(prefix + ".w" + std::to_string(l), weights[l], w_grad[l]);
      store.add(prefix + ".b" + std::to_string(l), biases[l], b_grad[l]);
    }
  }
};

template <typename S>
inline void apply_activation(Activation a, MatX<S>& z) {
  switch (a) {
    case Activation::kIdentity:
      break;
    case Activation::kRelu:
      z = z.cwiseMax(S(0));
      break;
    case Activation::kSigmoid:
      z = (S(1) / (S(1) + (-z.array()).exp())).matrix();
      break;
  }
}

/// d(act)/d(pre-act) expressed through the post-activation value.
template <typename S>
inline MatX<S> activation_grad_from_output(Activation a, const MatX<S>& y) {
  switch (a) {
    case Activation::kIdentity:
      return MatX<S>::Ones(y.rows(), y.cols());
    case Activation::kRelu:
      return (y.array() > S(0)).template cast<S>().matrix();
    case Activation::kSigmoid:
      return (y.array() * (S(1) - y.array())).matrix();
  }
  return MatX<S>();
}

template <typename S>
MatX<S> mlp_forward(const Mlp<S>& mlp, const MatX<S>& x, MlpSaved<S>* saved = nullptr) {
  if (x.rows() != mlp.spec.input_dim)
    throw std::invalid_argument("mlp_forward: input dim mismatch");
  if (saved) {
    saved->input = x;
    saved->acts.clear();
  }
  MatX<S> a = x;
  for (int l = 0; l < mlp.layer_count(); ++l) {
    MatX<S> z = mlp.weights[l] * a;
    z.colwise() += mlp.biases[l].col(0);
    apply_activation(l == mlp.layer_count() - 1 ? mlp.spec.output_act
                                                : mlp.spec.hidden_act,
                     z);
    a = std::move(z);
    if (saved) saved->acts.push_back(a);
  }
  return a;
}

/// Reverse pass. Accumulates parameter gradients; returns the input gradient.
template <typename S>
MatX<S> mlp_backward(Mlp<S>& mlp, const MlpSaved<S>& saved, const MatX<S>& upstream) {
  const int L = mlp.layer_count();
  MatX<S> dz = upstream.cwiseProduct(
      activation_grad_from_output(mlp.spec.output_act, saved.acts.back()));
  for (int l = L - 1; l >= 0; --l) {
    const MatX<S>& below = (l == 0) ? saved.input : saved.acts[l - 1];
    mlp.w_grad[l].noalias() += dz * below.transpose();
    mlp.b_grad[l].col(0) += dz.rowwise().sum();
    MatX<S> da = mlp.weights[l].transpose() * dz;
    if (l == 0) return da;
    dz = da.cwiseProduct(
        activation_grad_from_output(mlp.spec.hidden_act, saved.acts[l - 1]));
  }
  return MatX<S>();
}

/// Input gradient only; parameters untouched.
template <typename S>
MatX<S> mlp_input_gradient(const Mlp<S>& mlp, const MlpSaved<S>& saved,
                           const MatX<S>& upstream) {
  const int L = mlp.layer_count();
  MatX<S> dz = upstream.cwiseProduct(
      activation_grad_from_output(mlp.spec.output_act, saved.acts.back()));
  for (int l = L - 1; l >= 0; --l) {
    MatX<S> da = mlp.weights[l].transpose() * dz;
    if (l == 0) return da;
    dz = da.cwiseProduct(
        activation_grad_from_output(mlp.spec.hidden_act, saved.acts[l - 1]));
  }
  return MatX<S>();
}

/// For a scalar-output net with ReLU hidden layers and a linear output, the
/// input gradient g(x) = dy/dx is locally linear in the weights (activation
/// masks are piecewise constant). This accumulates d(sum_cols v_col . g_col)/dW
/// into the weight gradients: the path that carries losses on spatial slopes
/// back into the network. Bias gradients are identically zero on this path.
template <typename S>
void mlp_input_gradient_backward(Mlp<S>& mlp, const MlpSaved<S>& saved,
                                 const MatX<S>& tangents) {
  if (mlp.spec.output_dim != 1 || mlp.spec.output_act != Activation::kIdentity ||
      mlp.spec.hidden_act != Activation::kRelu)
    throw std::logic_error(
        "mlp_input_gradient_backward: needs scalar linear output + ReLU hidden");
  const int L = mlp.layer_count();
  // Tangent (JVP) forward, masks from the saved primal pass.
  std::vector<MatX<S>> t(L);  // post-mask tangents per layer
  MatX<S> cur = tangents;
  for (int l = 0; l < L; ++l) {
    MatX<S> s = mlp.weights[l] * cur;
    if (l < L - 1)
      s = s.cwiseProduct(
          activation_grad_from_output(Activation::kRelu, saved.acts[l]));
    t[l] = s;
    cur = t[l];
  }
  // Reverse over the tangent chain; upstream on the scalar JVP output is 1.
  MatX<S> r = MatX<S>::Ones(1, tangents.cols());
  for (int l = L - 1; l >= 0; --l) {
    const MatX<S>& below = (l == 0) ? tangents : t[l - 1];
    mlp.w_grad[l].noalias() += r * below.transpose();
    if (l == 0) break;
    MatX<S> da = mlp.weights[l].transpose() * r;
    r = da.cwiseProduct(
        activation_grad_from_output(Activation::kRelu, saved.acts[l - 1]));
  }
}

}  // namespace flsmap
