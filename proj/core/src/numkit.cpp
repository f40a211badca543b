#include "rrl/numkit.hpp"

#include <cmath>
#include <stdexcept>

namespace rrl::numkit {

namespace {

[[noreturn]] void dim_error(const std::string& where, int expected, int got) {
  throw std::invalid_argument(where + ": dimension mismatch, expected " +
                              std::to_string(expected) + ", got " + std::to_string(got));
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

void check_finite(const Vec& v, const char* where) {
  for (double x : v)
    if (!std::isfinite(x)) throw std::runtime_error(std::string(where) + ": non-finite value");
}

}  // namespace

namespace {

// Four-way unrolled dot product: a fixed summation order that the compiler
// can keep in vector registers without reassociation flags.
double dot_row(const double* row, const double* x, int n) {
  double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
  int c = 0;
  for (; c + 4 <= n; c += 4) {
    a0 += row[c] * x[c];
    a1 += row[c + 1] * x[c + 1];
    a2 += row[c + 2] * x[c + 2];
    a3 += row[c + 3] * x[c + 3];
  }
  for (; c < n; ++c) a0 += row[c] * x[c];
  return (a0 + a1) + (a2 + a3);
}

void matvec_into(const Mat& m, const Vec& x, double* y) {
  const double* w = m.data.data();
  for (int r = 0; r < m.rows; ++r)
    y[r] = dot_row(w + static_cast<std::size_t>(r) * m.cols, x.data(), m.cols);
}

}  // namespace

Vec matvec(const Mat& m, const Vec& x) {
  if (static_cast<int>(x.size()) != m.cols) dim_error("matvec", m.cols, static_cast<int>(x.size()));
  Vec y(static_cast<std::size_t>(m.rows));
  matvec_into(m, x, y.data());
  return y;
}

void matvec_transpose_add(const Mat& m, const Vec& x, Vec& y) {
  if (static_cast<int>(x.size()) != m.rows)
    dim_error("matvec_transpose_add", m.rows, static_cast<int>(x.size()));
  if (static_cast<int>(y.size()) != m.cols)
    dim_error("matvec_transpose_add", m.cols, static_cast<int>(y.size()));
  const double* w = m.data.data();
  for (int r = 0; r < m.rows; ++r) {
    const double xr = x[r];
    if (xr == 0.0) continue;
    const double* row = w + static_cast<std::size_t>(r) * m.cols;
    for (int c = 0; c < m.cols; ++c) y[c] += row[c] * xr;
  }
}

void add_outer(Mat& m, const Vec& a, const Vec& b) {
  if (static_cast<int>(a.size()) != m.rows) dim_error("add_outer", m.rows, static_cast<int>(a.size()));
  if (static_cast<int>(b.size()) != m.cols) dim_error("add_outer", m.cols, static_cast<int>(b.size()));
  double* w = m.data.data();
  for (int r = 0; r < m.rows; ++r) {
    const double ar = a[r];
    if (ar == 0.0) continue;
    double* row = w + static_cast<std::size_t>(r) * m.cols;
    for (int c = 0; c < m.cols; ++c) row[c] += ar * b[c];
  }
}

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
    case Activation::Sigmoid: return "sigmoid";
  }
  throw std::logic_error("activation_name: bad enum");
}

Activation activation_from_name(const std::string& name) {
  if (name == "identity") return Activation::Identity;
  if (name == "tanh") return Activation::Tanh;
  if (name == "relu") return Activation::Relu;
  if (name == "sigmoid") return Activation::Sigmoid;
  throw std::invalid_argument("unknown activation: " + name);
}

Vec dense_forward(const DenseLayer& layer, const Vec& x, DenseCache* cache) {
  if (static_cast<int>(x.size()) != layer.in_dim())
    dim_error("dense_forward", layer.in_dim(), static_cast<int>(x.size()));
  Vec pre = matvec(layer.w, x);
  for (int r = 0; r < layer.out_dim(); ++r) pre[r] += layer.b[r];
  Vec out(pre.size());
  switch (layer.act) {
    case Activation::Identity:
      out = pre;
      break;
    case Activation::Tanh:
      for (std::size_t i = 0; i < pre.size(); ++i) out[i] = std::tanh(pre[i]);
      break;
    case Activation::Relu:
      for (std::size_t i = 0; i < pre.size(); ++i) out[i] = pre[i] > 0.0 ? pre[i] : 0.0;
      break;
    case Activation::Sigmoid:
      for (std::size_t i = 0; i < pre.size(); ++i) out[i] = sigmoid(pre[i]);
      break;
  }
  if (cache) {
    cache->x = x;
    cache->pre = pre;
    cache->out = out;
  }
  return out;
}

Vec dense_backward(const DenseLayer& layer, const DenseCache& cache, const Vec& dout,
                   DenseLayer& grad) {
  if (cache.x.empty() && layer.in_dim() != 0)
    throw std::logic_error("dense_backward: no cached forward pass");
  if (static_cast<int>(dout.size()) != layer.out_dim())
    dim_error("dense_backward", layer.out_dim(), static_cast<int>(dout.size()));
  Vec dpre(dout.size());
  switch (layer.act) {
    case Activation::Identity:
      dpre = dout;
      break;
    case Activation::Tanh:
      for (std::size_t i = 0; i < dout.size(); ++i)
        dpre[i] = dout[i] * (1.0 - cache.out[i] * cache.out[i]);
      break;
    case Activation::Relu:
      for (std::size_t i = 0; i < dout.size(); ++i)
        dpre[i] = cache.pre[i] > 0.0 ? dout[i] : 0.0;
      break;
    case Activation::Sigmoid:
      for (std::size_t i = 0; i < dout.size(); ++i)
        dpre[i] = dout[i] * cache.out[i] * (1.0 - cache.out[i]);
      break;
  }
  add_outer(grad.w, dpre, cache.x);
  for (int r = 0; r < layer.out_dim(); ++r) grad.b[r] += dpre[r];
  Vec dx(layer.in_dim(), 0.0);
  matvec_transpose_add(layer.w, dpre, dx);
  return dx;
}

Vec rnn_step(const RnnCell& cell, const Vec& x, const Vec& h_prev, RnnStepCache* cache) {
  if (static_cast<int>(x.size()) != cell.in_dim())
    dim_error("rnn_step input", cell.in_dim(), static_cast<int>(x.size()));
  if (static_cast<int>(h_prev.size()) != cell.hidden_dim())
    dim_error("rnn_step hidden", cell.hidden_dim(), static_cast<int>(h_prev.size()));
  const int h_dim = cell.hidden_dim();
  Vec h(static_cast<std::size_t>(h_dim));
  const double* wx = cell.w_x.data.data();
  const double* wh = cell.w_h.data.data();
  for (int r = 0; r < h_dim; ++r) {
    const double z = cell.b[r] +
                     dot_row(wx + static_cast<std::size_t>(r) * cell.w_x.cols, x.data(),
                             cell.w_x.cols) +
                     dot_row(wh + static_cast<std::size_t>(r) * h_dim, h_prev.data(), h_dim);
    h[static_cast<std::size_t>(r)] = std::tanh(z);
  }
  if (cache) {
    cache->x = x;
    cache->h_prev = h_prev;
    cache->h = h;
  }
  return h;
}

void rnn_step_backward(const RnnCell& cell, const RnnStepCache& cache, const Vec& dh,
                       RnnCell& grad, Vec* dx, Vec& dh_prev) {
  if (cache.h.empty()) throw std::logic_error("rnn_step_backward: no cached forward pass");
  const int h_dim = cell.hidden_dim();
  Vec da(h_dim);
  for (int r = 0; r < h_dim; ++r) da[r] = dh[r] * (1.0 - cache.h[r] * cache.h[r]);
  add_outer(grad.w_x, da, cache.x);
  add_outer(grad.w_h, da, cache.h_prev);
  for (int r = 0; r < h_dim; ++r) grad.b[r] += da[r];
  if (dx) {
    dx->assign(cell.in_dim(), 0.0);
    matvec_transpose_add(cell.w_x, da, *dx);
  }
  dh_prev.assign(h_dim, 0.0);
  matvec_transpose_add(cell.w_h, da, dh_prev);
}

LstmState lstm_step(const LstmCell& cell, const Vec& x, const LstmState& prev,
                    LstmStepCache* cache) {
  const int h_dim = cell.hidden_dim();
  if (static_cast<int>(x.size()) != cell.in_dim())
    dim_error("lstm_step input", cell.in_dim(), static_cast<int>(x.size()));
  if (static_cast<int>(prev.h.size()) != h_dim)
    dim_error("lstm_step hidden", h_dim, static_cast<int>(prev.h.size()));
  if (static_cast<int>(prev.c.size()) != h_dim)
    dim_error("lstm_step cell state", h_dim, static_cast<int>(prev.c.size()));

  Vec u(static_cast<std::size_t>(cell.in_dim() + h_dim));
  std::copy(x.begin(), x.end(), u.begin());
  std::copy(prev.h.begin(), prev.h.end(), u.begin() + cell.in_dim());

  LstmState next{Vec(static_cast<std::size_t>(h_dim)), Vec(static_cast<std::size_t>(h_dim))};
  Vec gi(static_cast<std::size_t>(h_dim)), gf(static_cast<std::size_t>(h_dim)),
      go(static_cast<std::size_t>(h_dim)), gg(static_cast<std::size_t>(h_dim)),
      tanh_c(static_cast<std::size_t>(h_dim));
  const int u_dim = cell.in_dim() + h_dim;
  const double* wi = cell.w_i.data.data();
  const double* wf = cell.w_f.data.data();
  const double* wo = cell.w_o.data.data();
  const double* wg = cell.w_g.data.data();
  for (int r = 0; r < h_dim; ++r) {
    const std::size_t off = static_cast<std::size_t>(r) * u_dim;
    gi[r] = sigmoid(dot_row(wi + off, u.data(), u_dim) + cell.b_i[r]);
    gf[r] = sigmoid(dot_row(wf + off, u.data(), u_dim) + cell.b_f[r]);
    go[r] = sigmoid(dot_row(wo + off, u.data(), u_dim) + cell.b_o[r]);
    gg[r] = std::tanh(dot_row(wg + off, u.data(), u_dim) + cell.b_g[r]);
    next.c[r] = gf[r] * prev.c[r] + gi[r] * gg[r];
    tanh_c[r] = std::tanh(next.c[r]);
    next.h[r] = go[r] * tanh_c[r];
  }
  if (cache) {
    cache->u = std::move(u);
    cache->c_prev = prev.c;
    cache->i = std::move(gi);
    cache->f = std::move(gf);
    cache->o = std::move(go);
    cache->g = std::move(gg);
    cache->c = next.c;
    cache->tanh_c = std::move(tanh_c);
  }
  return next;
}

void lstm_step_backward(const LstmCell& cell, const LstmStepCache& cache, const Vec& dh,
                        const Vec& dc, LstmCell& grad, Vec* dx, Vec& dh_prev, Vec& dc_prev) {
  if (cache.u.empty()) throw std::logic_error("lstm_step_backward: no cached forward pass");
  const int h_dim = cell.hidden_dim();
  const int in_dim = cell.in_dim();

  Vec dzi(h_dim), dzf(h_dim), dzo(h_dim), dzg(h_dim);
  dc_prev.assign(h_dim, 0.0);
  for (int r = 0; r < h_dim; ++r) {
    const double do_r = dh[r] * cache.tanh_c[r];
    const double dc_total = dc[r] + dh[r] * cache.o[r] * (1.0 - cache.tanh_c[r] * cache.tanh_c[r]);
    const double di = dc_total * cache.g[r];
    const double df = dc_total * cache.c_prev[r];
    const double dg = dc_total * cache.i[r];
    dc_prev[r] = dc_total * cache.f[r];
    dzi[r] = di * cache.i[r] * (1.0 - cache.i[r]);
    dzf[r] = df * cache.f[r] * (1.0 - cache.f[r]);
    dzo[r] = do_r * cache.o[r] * (1.0 - cache.o[r]);
    dzg[r] = dg * (1.0 - cache.g[r] * cache.g[r]);
  }

  add_outer(grad.w_i, dzi, cache.u);
  add_outer(grad.w_f, dzf, cache.u);
  add_outer(grad.w_o, dzo, cache.u);
  add_outer(grad.w_g, dzg, cache.u);
  for (int r = 0; r < h_dim; ++r) {
    grad.b_i[r] += dzi[r];
    grad.b_f[r] += dzf[r];
    grad.b_o[r] += dzo[r];
    grad.b_g[r] += dzg[r];
  }

  Vec du(in_dim + h_dim, 0.0);
  matvec_transpose_add(cell.w_i, dzi, du);
  matvec_transpose_add(cell.w_f, dzf, du);
  matvec_transpose_add(cell.w_o, dzo, du);
  matvec_transpose_add(cell.w_g, dzg, du);
  if (dx) dx->assign(du.begin(), du.begin() + in_dim);
  dh_prev.assign(du.begin() + in_dim, du.end());
}

Vec mlp_forward(const Mlp& net, const Vec& x, MlpCache* cache) {
  if (cache) cache->layers.resize(net.layers.size());
  Vec cur = x;
  for (std::size_t i = 0; i < net.layers.size(); ++i)
    cur = dense_forward(net.layers[i], cur, cache ? &cache->layers[i] : nullptr);
  return cur;
}

Vec mlp_backward(const Mlp& net, const MlpCache& cache, const Vec& dout, Mlp& grad) {
  if (cache.layers.size() != net.layers.size())
    throw std::logic_error("mlp_backward: no cached forward pass");
  Vec cur = dout;
  for (std::size_t i = net.layers.size(); i-- > 0;)
    cur = dense_backward(net.layers[i], cache.layers[i], cur, grad.layers[i]);
  return cur;
}

void collect_blocks(DenseLayer& l, std::vector<std::span<double>>& out) {
  out.emplace_back(l.w.data);
  out.emplace_back(l.b);
}

void collect_blocks(RnnCell& c, std::vector<std::span<double>>& out) {
  out.emplace_back(c.w_x.data);
  out.emplace_back(c.w_h.data);
  out.emplace_back(c.b);
}

void collect_blocks(LstmCell& c, std::vector<std::span<double>>& out) {
  out.emplace_back(c.w_i.data);
  out.emplace_back(c.w_f.data);
  out.emplace_back(c.w_o.data);
  out.emplace_back(c.w_g.data);
  out.emplace_back(c.b_i);
  out.emplace_back(c.b_f);
  out.emplace_back(c.b_o);
  out.emplace_back(c.b_g);
}

void collect_blocks(Mlp& m, std::vector<std::span<double>>& out) {
  for (auto& l : m.layers) collect_blocks(l, out);
}

namespace {

void fill_uniform(Mat& m, double scale, Rng& rng) {
  for (double& v : m.data) v = rng.uniform(-scale, scale);
}

}  // namespace

DenseLayer make_dense(int in_dim, int out_dim, Activation act, Rng& rng) {
  if (in_dim < 0 || out_dim <= 0) throw std::invalid_argument("make_dense: bad dimensions");
  DenseLayer l;
  l.w = Mat(out_dim, in_dim);
  l.b.assign(out_dim, 0.0);
  l.act = act;
  fill_uniform(l.w, in_dim > 0 ? 1.0 / std::sqrt(static_cast<double>(in_dim)) : 0.0, rng);
  return l;
}

RnnCell make_rnn(int in_dim, int hidden_dim, Rng& rng) {
  if (in_dim <= 0 || hidden_dim <= 0) throw std::invalid_argument("make_rnn: bad dimensions");
  RnnCell c;
  c.w_x = Mat(hidden_dim, in_dim);
  c.w_h = Mat(hidden_dim, hidden_dim);
  c.b.assign(hidden_dim, 0.0);
  fill_uniform(c.w_x, 1.0 / std::sqrt(static_cast<double>(in_dim)), rng);
  fill_uniform(c.w_h, 1.0 / std::sqrt(static_cast<double>(hidden_dim)), rng);
  return c;
}

LstmCell make_lstm(int in_dim, int hidden_dim, Rng& rng) {
  if (in_dim <= 0 || hidden_dim <= 0) throw std::invalid_argument("make_lstm: bad dimensions");
  const int u_dim = in_dim + hidden_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(u_dim));
  LstmCell c;
  for (Mat* m : {&c.w_i, &c.w_f, &c.w_o, &c.w_g}) {
    *m = Mat(hidden_dim, u_dim);
    fill_uniform(*m, scale, rng);
  }
  c.b_i.assign(hidden_dim, 0.0);
  c.b_f.assign(hidden_dim, 1.0);  // open forget gate at init
  c.b_o.assign(hidden_dim, 0.0);
  c.b_g.assign(hidden_dim, 0.0);
  return c;
}

double finite_diff_check(const std::function<double(const Vec&)>& loss, const Vec& params,
                         const Vec& analytic, double eps) {
  if (params.size() != analytic.size())
    throw std::invalid_argument("finite_diff_check: gradient/parameter size mismatch");
  check_finite(params, "finite_diff_check params");
  check_finite(analytic, "finite_diff_check gradient");
  Vec probe = params;
  double max_rel = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double saved = probe[k];
    probe[k] = saved + eps;
    const double lp = loss(probe);
    probe[k] = saved - eps;
    const double lm = loss(probe);
    probe[k] = saved;
    if (!std::isfinite(lp) || !std::isfinite(lm))
      throw std::runtime_error("finite_diff_check: non-finite loss");
    const double numeric = (lp - lm) / (2.0 * eps);
    const double denom = std::max({std::abs(analytic[k]), std::abs(numeric), 1e-8});
    const double rel = std::abs(analytic[k] - numeric) / denom;
    if (rel > max_rel) max_rel = rel;
  }
  return max_rel;
}

}  // namespace rrl::numkit
