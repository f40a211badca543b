#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rrl/rng.hpp"

// Minimal dense linear algebra plus differentiable layer kernels: forward and
// hand-derived backward passes for dense layers, simple recurrent cells and
// LSTM cells, parameter initialization, SGD stepping, and finite-difference
// verification. Everything is 64-bit and single-threaded; network values are
// plain structs that can be copied and moved freely.

namespace rrl::numkit {

using Vec = std::vector<double>;

struct Mat {
  int rows = 0;
  int cols = 0;
  Vec data;  // row-major

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
};

// y = M x
Vec matvec(const Mat& m, const Vec& x);
// y += M^T x
void matvec_transpose_add(const Mat& m, const Vec& x, Vec& y);
// M += a b^T
void add_outer(Mat& m, const Vec& a, const Vec& b);

enum class Activation { Identity, Tanh, Relu, Sigmoid };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

// ---------------------------------------------------------------------------
// Dense layer

struct DenseLayer {
  Mat w;  // out x in
  Vec b;
  Activation act = Activation::Identity;

  int in_dim() const { return w.cols; }
  int out_dim() const { return w.rows; }
};

struct DenseCache {
  Vec x;    // input
  Vec pre;  // pre-activation Wx + b
  Vec out;  // activation(pre)
};

Vec dense_forward(const DenseLayer& layer, const Vec& x, DenseCache* cache = nullptr);

// Accumulates parameter gradients into |grad| and returns d(loss)/d(input).
Vec dense_backward(const DenseLayer& layer, const DenseCache& cache, const Vec& dout,
                   DenseLayer& grad);

// ---------------------------------------------------------------------------
// Simple recurrent cell: h = tanh(W_x x + W_h h_prev + b)

struct RnnCell {
  Mat w_x;  // H x in
  Mat w_h;  // H x H
  Vec b;

  int in_dim() const { return w_x.cols; }
  int hidden_dim() const { return w_x.rows; }
};

struct RnnStepCache {
  Vec x;
  Vec h_prev;
  Vec h;
};

Vec rnn_step(const RnnCell& cell, const Vec& x, const Vec& h_prev,
             RnnStepCache* cache = nullptr);

// One step of backpropagation through time. |dh| is the total gradient
// arriving at h (head losses at this step plus the recurrent path from the
// future). Parameter gradients accumulate into |grad|; the returned pair
// propagates to (x, h_prev). Pass dx = nullptr when input gradients are not
// needed.
void rnn_step_backward(const RnnCell& cell, const RnnStepCache& cache, const Vec& dh,
                       RnnCell& grad, Vec* dx, Vec& dh_prev);

// ---------------------------------------------------------------------------
// LSTM cell, standard formulation without peepholes:
//   u = [x; h_prev]
//   i = sigmoid(W_i u + b_i)      f = sigmoid(W_f u + b_f)
//   o = sigmoid(W_o u + b_o)      g = tanh(W_g u + b_g)
//   c = f . c_prev + i . g        h = o . tanh(c)

struct LstmCell {
  Mat w_i, w_f, w_o, w_g;  // each H x (in + H)
  Vec b_i, b_f, b_o, b_g;

  int hidden_dim() const { return w_i.rows; }
  int in_dim() const { return w_i.cols - w_i.rows; }
};

struct LstmState {
  Vec h;
  Vec c;
};

struct LstmStepCache {
  Vec u;  // [x; h_prev]
  Vec c_prev;
  Vec i, f, o, g;
  Vec c;
  Vec tanh_c;
};

LstmState lstm_step(const LstmCell& cell, const Vec& x, const LstmState& prev,
                    LstmStepCache* cache = nullptr);

// Backward through one LSTM step. |dh| and |dc| carry gradients arriving at
// (h, c); outputs propagate to (x, h_prev, c_prev).
void lstm_step_backward(const LstmCell& cell, const LstmStepCache& cache, const Vec& dh,
                        const Vec& dc, LstmCell& grad, Vec* dx, Vec& dh_prev,
                        Vec& dc_prev);

// ---------------------------------------------------------------------------
// Multi-layer perceptron

struct Mlp {
  std::vector<DenseLayer> layers;

  int in_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
  int out_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }
};

struct MlpCache {
  std::vector<DenseCache> layers;
};

Vec mlp_forward(const Mlp& net, const Vec& x, MlpCache* cache = nullptr);

// Requires a cache produced by a prior forward pass; throws otherwise.
Vec mlp_backward(const Mlp& net, const MlpCache& cache, const Vec& dout, Mlp& grad);

// ---------------------------------------------------------------------------
// Parameter block traversal. Every differentiable structure exposes its
// parameters as an ordered list of flat blocks; the flat-vector view below is
// a lossless round trip and is what gradient checking and SGD operate on.

void collect_blocks(DenseLayer& l, std::vector<std::span<double>>& out);
void collect_blocks(RnnCell& c, std::vector<std::span<double>>& out);
void collect_blocks(LstmCell& c, std::vector<std::span<double>>& out);
void collect_blocks(Mlp& m, std::vector<std::span<double>>& out);

template <typename Net>
std::size_t param_count(const Net& net) {
  std::vector<std::span<double>> blocks;
  collect_blocks(const_cast<Net&>(net), blocks);
  std::size_t n = 0;
  for (const auto& b : blocks) n += b.size();
  return n;
}

template <typename Net>
Vec flatten(const Net& net) {
  std::vector<std::span<double>> blocks;
  collect_blocks(const_cast<Net&>(net), blocks);
  Vec flat;
  for (const auto& b : blocks) flat.insert(flat.end(), b.begin(), b.end());
  return flat;
}

template <typename Net>
void unflatten(Net& net, std::span<const double> flat) {
  std::vector<std::span<double>> blocks;
  collect_blocks(net, blocks);
  std::size_t pos = 0;
  for (auto& b : blocks) {
    if (pos + b.size() > flat.size())
      throw std::invalid_argument("unflatten: flat vector too short");
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = flat[pos + i];
    pos += b.size();
  }
  if (pos != flat.size()) throw std::invalid_argument("unflatten: flat vector too long");
}

template <typename Net>
Net zeros_like(const Net& net) {
  Net z = net;
  std::vector<std::span<double>> blocks;
  collect_blocks(z, blocks);
  for (auto& b : blocks)
    for (double& v : b) v = 0.0;
  return z;
}

// p <- p - eta * g for every parameter. Shapes must be congruent.
template <typename Net>
void sgd_step(Net& params, const Net& grads, double eta) {
  std::vector<std::span<double>> pb, gb;
  collect_blocks(params, pb);
  collect_blocks(const_cast<Net&>(grads), gb);
  if (pb.size() != gb.size()) throw std::invalid_argument("sgd_step: block count mismatch");
  for (std::size_t k = 0; k < pb.size(); ++k) {
    if (pb[k].size() != gb[k].size())
      throw std::invalid_argument("sgd_step: block shape mismatch");
    for (std::size_t i = 0; i < pb[k].size(); ++i) pb[k][i] -= eta * gb[k][i];
  }
}

// dst += alpha * src over all parameter blocks.
template <typename Net>
void axpy_params(Net& dst, const Net& src, double alpha) {
  sgd_step(dst, src, -alpha);
}

// Sum of squared parameter gradients; used for divergence and clip checks.
template <typename Net>
double squared_norm(const Net& net) {
  std::vector<std::span<double>> blocks;
  collect_blocks(const_cast<Net&>(net), blocks);
  double s = 0.0;
  for (const auto& b : blocks)
    for (double v : b) s += v * v;
  return s;
}

// ---------------------------------------------------------------------------
// Initialization. Weights are uniform in [-s, s] with s = 1/sqrt(fan_in);
// biases start at zero except the LSTM forget gate, which starts at +1.

DenseLayer make_dense(int in_dim, int out_dim, Activation act, Rng& rng);
RnnCell make_rnn(int in_dim, int hidden_dim, Rng& rng);
LstmCell make_lstm(int in_dim, int hidden_dim, Rng& rng);

// ---------------------------------------------------------------------------
// Finite-difference gradient verification.
//
// |loss| evaluates the scalar loss at an arbitrary flat parameter vector;
// |params| is the point of linearization and |analytic| the gradient under
// test. Returns max over parameters of
//   |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
// with central differences of half-width |eps|.
double finite_diff_check(const std::function<double(const Vec&)>& loss, const Vec& params,
                         const Vec& analytic, double eps = 1e-5);

}  // namespace rrl::numkit
