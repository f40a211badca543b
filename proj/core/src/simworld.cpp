#include "rrl/simworld.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "rrl/parallel.hpp"

#include <json.hpp>

namespace rrl::simworld {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

void check_action(int a, const std::string& where) {
  if (a < 0 || a >= kNumActions)
    throw std::invalid_argument(where + ": action " + std::to_string(a) + " out of [0, " +
                                std::to_string(kNumActions) + ")");
}

void check_reward(double r, const std::string& where) {
  if (!(r >= 0.0 && r <= kMaxReward))
    throw std::invalid_argument(where + ": reward " + std::to_string(r) +
                                " out of [0, 1000]");
}

double clamp_reward(double r) { return std::min(std::max(r, 0.0), kMaxReward); }

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) fail("format_double: conversion failed");
  return std::string(buf, ptr);
}

}  // namespace

// ---------------------------------------------------------------------------
// Encoding

void encode_step_into(const WorldConfig& config, const Observation& obs, int prev_action,
                      double prev_reward, Vec& out) {
  out.assign(config.enc_dim(), 0.0);
  int off = 0;
  for (int d = 0; d < kNumDims; ++d) {
    const int card = config.cardinalities[d];
    if (obs[d] < 0 || obs[d] >= card)
      throw std::invalid_argument("encode_step: dim " + std::to_string(d + 1) + " value " +
                                  std::to_string(obs[d]) + " out of [0, " +
                                  std::to_string(card) + ")");
    out[off + obs[d]] = 1.0;
    off += card;
  }
  if (prev_action >= 0) {
    check_action(prev_action, "encode_step");
    out[off + prev_action] = 1.0;
    out[off + kNumActions] = prev_reward / kMaxReward;
  }
}

Vec encode_step(const WorldConfig& config, const Observation& obs, int prev_action,
                double prev_reward) {
  Vec out;
  encode_step_into(config, obs, prev_action, prev_reward, out);
  return out;
}

Vec encode_observation(const WorldConfig& config, const Observation& obs) {
  Vec out(config.obs_onehot_dim(), 0.0);
  int off = 0;
  for (int d = 0; d < kNumDims; ++d) {
    const int card = config.cardinalities[d];
    if (obs[d] < 0 || obs[d] >= card)
      throw std::invalid_argument("encode_observation: dim " + std::to_string(d + 1) +
                                  " value " + std::to_string(obs[d]) + " out of [0, " +
                                  std::to_string(card) + ")");
    out[off + obs[d]] = 1.0;
    off += card;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Trajectory / Dataset

void Trajectory::validate(const WorldConfig& config) const {
  if (observations.size() != kHorizonObs)
    fail("trajectory " + std::to_string(donor_id) + ": expected 23 observations, got " +
         std::to_string(observations.size()));
  if (actions.size() != kHorizonSteps || rewards.size() != kHorizonSteps)
    fail("trajectory " + std::to_string(donor_id) + ": expected 22 (action, reward) pairs");
  for (const auto& o : observations)
    for (int d = 0; d < kNumDims; ++d)
      if (o[d] < 0 || o[d] >= config.cardinalities[d])
        fail("trajectory " + std::to_string(donor_id) + ": observation dim " +
             std::to_string(d + 1) + " value " + std::to_string(o[d]) + " out of range");
  for (int a : actions) check_action(a, "trajectory " + std::to_string(donor_id));
  for (double r : rewards) check_reward(r, "trajectory " + std::to_string(donor_id));
}

void Dataset::rebuild_histogram() {
  action_counts.fill(0);
  for (const auto& t : trajectories)
    for (int a : t.actions) ++action_counts[static_cast<std::size_t>(a)];
}

void Dataset::validate(const WorldConfig& config) const {
  std::array<std::int64_t, kNumActions> counts{};
  for (const auto& t : trajectories) {
    t.validate(config);
    for (int a : t.actions) ++counts[static_cast<std::size_t>(a)];
  }
  if (counts != action_counts) fail("dataset: stale action histogram");
}

double Dataset::mean_reward() const {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& t : trajectories) {
    for (double r : t.rewards) total += r;
    n += t.rewards.size();
  }
  return n == 0 ? 0.0 : total / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// CSV  (header: donor_id,t,o1,o2,o3,o4,o5,action,reward)

namespace {

constexpr const char* kCsvHeader = "donor_id,t,o1,o2,o3,o4,o5,action,reward";

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

[[noreturn]] void row_error(const std::string& path, std::size_t line_no,
                            const std::string& field, const std::string& what) {
  fail(path + ":" + std::to_string(line_no) + ": field '" + field + "': " + what);
}

std::int64_t parse_int(const std::string& path, std::size_t line_no, const std::string& field,
                       const std::string& text) {
  std::int64_t value = 0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last) row_error(path, line_no, field, "not an integer: '" + text + "'");
  return value;
}

double parse_double(const std::string& path, std::size_t line_no, const std::string& field,
                    const std::string& text) {
  double value = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last) row_error(path, line_no, field, "not a number: '" + text + "'");
  return value;
}

}  // namespace

Dataset load_sequences(const std::string& path, const WorldConfig& config) {
  std::ifstream in(path);
  if (!in) fail("load_sequences: cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) fail(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCsvHeader)
    fail(path + ": bad header, expected '" + std::string(kCsvHeader) + "'");

  struct Row {
    int t;
    Observation obs;
    int action;      // -1 when absent
    double reward;
  };
  std::map<std::int64_t, std::vector<Row>> rows_by_donor;

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 9)
      fail(path + ":" + std::to_string(line_no) + ": expected 9 fields, got " +
           std::to_string(fields.size()));
    const std::int64_t donor = parse_int(path, line_no, "donor_id", fields[0]);
    Row row{};
    row.t = static_cast<int>(parse_int(path, line_no, "t", fields[1]));
    if (row.t < 1 || row.t > kHorizonObs)
      row_error(path, line_no, "t", "out of [1, 23]");
    for (int d = 0; d < kNumDims; ++d) {
      const std::string name = "o" + std::to_string(d + 1);
      const int v = static_cast<int>(parse_int(path, line_no, name, fields[2 + d]));
      if (v < 0 || v >= config.cardinalities[d])
        row_error(path, line_no, name,
                  "value " + std::to_string(v) + " out of [0, " +
                      std::to_string(config.cardinalities[d]) + ")");
      row.obs[d] = v;
    }
    const bool terminal = row.t == kHorizonObs;
    if (terminal) {
      if (!fields[7].empty()) row_error(path, line_no, "action", "must be empty at t=23");
      if (!fields[8].empty()) row_error(path, line_no, "reward", "must be empty at t=23");
      row.action = -1;
      row.reward = 0.0;
    } else {
      if (fields[7].empty()) row_error(path, line_no, "action", "missing");
      if (fields[8].empty()) row_error(path, line_no, "reward", "missing");
      row.action = static_cast<int>(parse_int(path, line_no, "action", fields[7]));
      if (row.action < 0 || row.action >= kNumActions)
        row_error(path, line_no, "action", "out of [0, 12)");
      row.reward = parse_double(path, line_no, "reward", fields[8]);
      if (!(row.reward >= 0.0 && row.reward <= kMaxReward))
        row_error(path, line_no, "reward", "out of [0, 1000]");
    }
    rows_by_donor[donor].push_back(row);
  }

  Dataset ds;
  for (auto& [donor, rows] : rows_by_donor) {
    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.t < b.t; });
    if (rows.size() != kHorizonObs)
      fail(path + ": donor " + std::to_string(donor) + " has " + std::to_string(rows.size()) +
           " rows, expected 23");
    Trajectory traj;
    traj.donor_id = donor;
    for (int t = 0; t < kHorizonObs; ++t) {
      if (rows[static_cast<std::size_t>(t)].t != t + 1)
        fail(path + ": donor " + std::to_string(donor) + " has duplicate or missing step " +
             std::to_string(t + 1));
      traj.observations.push_back(rows[static_cast<std::size_t>(t)].obs);
      if (t + 1 <= kHorizonSteps) {
        traj.actions.push_back(rows[static_cast<std::size_t>(t)].action);
        traj.rewards.push_back(rows[static_cast<std::size_t>(t)].reward);
      }
    }
    traj.validate(config);
    ds.trajectories.push_back(std::move(traj));
  }
  ds.rebuild_histogram();
  return ds;
}

void save_sequences(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail("save_sequences: cannot open " + path);
  out << kCsvHeader << "\n";
  for (const auto& traj : ds.trajectories) {
    for (int t = 0; t < kHorizonObs; ++t) {
      out << traj.donor_id << ',' << (t + 1);
      for (int d = 0; d < kNumDims; ++d) out << ',' << traj.observations[static_cast<std::size_t>(t)][d];
      if (t < kHorizonSteps)
        out << ',' << traj.actions[static_cast<std::size_t>(t)] << ','
            << format_double(traj.rewards[static_cast<std::size_t>(t)]);
      else
        out << ",,";
      out << '\n';
    }
  }
  if (!out) fail("save_sequences: write failed for " + path);
}

SplitResult split_dataset(const Dataset& ds, std::uint64_t seed) {
  const std::size_t n = ds.trajectories.size();
  if (n < 6) fail("split_dataset: need at least 6 donors, got " + std::to_string(n));

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.uniform_int(static_cast<int>(i + 1)));
    std::swap(order[i], order[j]);
  }

  const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * 4.0 / 6.0));
  const auto n_valid = static_cast<std::size_t>(std::llround(static_cast<double>(n) / 6.0));
  if (n_train == 0 || n_valid == 0 || n_train + n_valid >= n)
    fail("split_dataset: degenerate 4:1:1 split for " + std::to_string(n) + " donors");

  SplitResult result;
  result.train.split = Split::Train;
  result.valid.split = Split::Valid;
  result.test.split = Split::Test;
  for (std::size_t i = 0; i < n; ++i) {
    const Trajectory& t = ds.trajectories[order[i]];
    if (i < n_train)
      result.train.trajectories.push_back(t);
    else if (i < n_train + n_valid)
      result.valid.trajectories.push_back(t);
    else
      result.test.trajectories.push_back(t);
  }
  result.train.rebuild_histogram();
  result.valid.rebuild_histogram();
  result.test.rebuild_histogram();
  return result;
}

// ---------------------------------------------------------------------------
// Observation tables

void ObsTables::allocate() {
  for (int d = 0; d < kNumDims; ++d) {
    const int card = config.cardinalities[d];
    probs[static_cast<std::size_t>(d)].assign(
        static_cast<std::size_t>(card) * kNumActions * 2 * card, 0.0);
  }
}

std::span<double> ObsTables::row(int dim, int value, int action, int donated) {
  const int card = config.cardinalities[dim];
  const std::size_t idx =
      ((static_cast<std::size_t>(value) * kNumActions + static_cast<std::size_t>(action)) * 2 +
       static_cast<std::size_t>(donated)) *
      static_cast<std::size_t>(card);
  return {probs[static_cast<std::size_t>(dim)].data() + idx, static_cast<std::size_t>(card)};
}

std::span<const double> ObsTables::row(int dim, int value, int action, int donated) const {
  return const_cast<ObsTables*>(this)->row(dim, value, action, donated);
}

void ObsTables::validate() const {
  for (int d = 0; d < kNumDims; ++d) {
    const int card = config.cardinalities[d];
    for (int v = 0; v < card; ++v)
      for (int a = 0; a < kNumActions; ++a)
        for (int donated = 0; donated < 2; ++donated) {
          const auto r = row(d, v, a, donated);
          double sum = 0.0;
          for (double p : r) {
            if (p < 0.0) fail("ObsTables: negative probability");
            sum += p;
          }
          if (std::abs(sum - 1.0) > 1e-9) fail("ObsTables: row does not sum to 1");
        }
  }
}

ObsTables fit_observation_tables(const Dataset& ds, const WorldConfig& config, double alpha) {
  if (ds.trajectories.empty()) fail("fit_observation_tables: empty dataset");
  if (alpha < 0.0) fail("fit_observation_tables: negative smoothing");

  ObsTables tables;
  tables.config = config;
  tables.alpha = alpha;
  tables.allocate();  // reuse the prob storage as count accumulators

  for (const auto& traj : ds.trajectories) {
    for (int t = 0; t < kHorizonSteps; ++t) {
      const int a = traj.actions[static_cast<std::size_t>(t)];
      const int donated = traj.rewards[static_cast<std::size_t>(t)] > 0.0 ? 1 : 0;
      for (int d = 0; d < kNumDims; ++d) {
        const int v = traj.observations[static_cast<std::size_t>(t)][d];
        const int next = traj.observations[static_cast<std::size_t>(t) + 1][d];
        tables.row(d, v, a, donated)[static_cast<std::size_t>(next)] += 1.0;
      }
    }
  }

  for (int d = 0; d < kNumDims; ++d) {
    const int card = config.cardinalities[d];
    for (int v = 0; v < card; ++v)
      for (int a = 0; a < kNumActions; ++a)
        for (int donated = 0; donated < 2; ++donated) {
          auto r = tables.row(d, v, a, donated);
          double total = 0.0;
          for (double c : r) total += c;
          if (total == 0.0) {
            const double u = 1.0 / static_cast<double>(card);
            for (double& p : r) p = u;
          } else {
            const double denom = total + alpha * static_cast<double>(card);
            for (double& p : r) p = (p + alpha) / denom;
          }
        }
  }
  return tables;
}

// ---------------------------------------------------------------------------
// Reward net

double RewardNet::predict(const Vec& hidden, int action) const {
  check_action(action, "RewardNet::predict");
  const auto& w = head.w;
  double acc = head.b[static_cast<std::size_t>(action)];
  for (int c = 0; c < w.cols; ++c)
    acc += w.at(action, c) * hidden[static_cast<std::size_t>(c)];
  return clamp_reward(output_scale * acc);
}

RewardNet make_reward_net(const WorldConfig& config, int hidden_dim, std::uint64_t seed) {
  Rng rng(seed);
  RewardNet net;
  net.cell = numkit::make_rnn(config.enc_dim(), hidden_dim, rng);
  net.head = numkit::make_dense(hidden_dim, kNumActions, numkit::Activation::Identity, rng);
  return net;
}

RewardFit fit_reward_net(const Dataset& train, const Dataset* valid, const WorldConfig& config,
                         int hidden_dim, int epochs, double eta, std::uint64_t seed) {
  if (train.trajectories.empty()) fail("fit_reward_net: empty training set");
  RewardFit fit;
  fit.net = make_reward_net(config, hidden_dim, seed);
  RewardNet& net = fit.net;
  const double scale = net.output_scale;

  const auto sequence_loss = [&](const RewardNet& n, const Trajectory& traj) {
    Vec hidden(static_cast<std::size_t>(n.hidden_dim()), 0.0);
    Vec enc;
    double loss = 0.0;
    for (int t = 0; t < kHorizonSteps; ++t) {
      encode_step_into(config, traj.observations[static_cast<std::size_t>(t)],
                       t == 0 ? -1 : traj.actions[static_cast<std::size_t>(t) - 1],
                       t == 0 ? 0.0 : traj.rewards[static_cast<std::size_t>(t) - 1], enc);
      hidden = numkit::rnn_step(n.cell, enc, hidden);
      numkit::DenseCache head_cache;
      const Vec out = numkit::dense_forward(n.head, hidden, &head_cache);
      const int a = traj.actions[static_cast<std::size_t>(t)];
      const double err = out[static_cast<std::size_t>(a)] -
                         traj.rewards[static_cast<std::size_t>(t)] / scale;
      loss += err * err;
    }
    return loss / kHorizonSteps;
  };

  Rng shuffle_rng(Rng::derive(seed, 1));
  std::vector<std::size_t> order(train.trajectories.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(shuffle_rng.uniform_int(static_cast<int>(i)));
      std::swap(order[i - 1], order[j]);
    }
    double epoch_loss = 0.0;
    for (const std::size_t idx : order) {
      const Trajectory& traj = train.trajectories[idx];
      // forward with caches
      std::vector<numkit::RnnStepCache> cell_caches(kHorizonSteps);
      std::vector<numkit::DenseCache> head_caches(kHorizonSteps);
      std::vector<double> errs(kHorizonSteps);
      Vec hidden(static_cast<std::size_t>(net.hidden_dim()), 0.0);
      Vec enc;
      double traj_loss = 0.0;
      for (int t = 0; t < kHorizonSteps; ++t) {
        encode_step_into(config, traj.observations[static_cast<std::size_t>(t)],
                         t == 0 ? -1 : traj.actions[static_cast<std::size_t>(t) - 1],
                         t == 0 ? 0.0 : traj.rewards[static_cast<std::size_t>(t) - 1], enc);
        hidden = numkit::rnn_step(net.cell, enc, hidden, &cell_caches[static_cast<std::size_t>(t)]);
        const Vec out =
            numkit::dense_forward(net.head, hidden, &head_caches[static_cast<std::size_t>(t)]);
        const int a = traj.actions[static_cast<std::size_t>(t)];
        errs[static_cast<std::size_t>(t)] =
            out[static_cast<std::size_t>(a)] - traj.rewards[static_cast<std::size_t>(t)] / scale;
        traj_loss += errs[static_cast<std::size_t>(t)] * errs[static_cast<std::size_t>(t)];
      }
      traj_loss /= kHorizonSteps;
      if (!std::isfinite(traj_loss))
        fail("fit_reward_net: loss diverged, use a smaller eta");
      epoch_loss += traj_loss;

      // backward: per-step head losses, then BPTT through the cell
      numkit::RnnCell cell_grad = numkit::zeros_like(net.cell);
      numkit::DenseLayer head_grad = numkit::zeros_like(net.head);
      Vec dh(static_cast<std::size_t>(net.hidden_dim()), 0.0);
      for (int t = kHorizonSteps - 1; t >= 0; --t) {
        Vec dout(kNumActions, 0.0);
        const int a = traj.actions[static_cast<std::size_t>(t)];
        dout[static_cast<std::size_t>(a)] =
            2.0 * errs[static_cast<std::size_t>(t)] / kHorizonSteps;
        Vec dh_head = numkit::dense_backward(net.head, head_caches[static_cast<std::size_t>(t)],
                                             dout, head_grad);
        for (std::size_t k = 0; k < dh.size(); ++k) dh[k] += dh_head[k];
        Vec dh_prev;
        numkit::rnn_step_backward(net.cell, cell_caches[static_cast<std::size_t>(t)], dh,
                                  cell_grad, nullptr, dh_prev);
        dh = std::move(dh_prev);
      }
      numkit::sgd_step(net.cell, cell_grad, eta);
      numkit::sgd_step(net.head, head_grad, eta);
    }
    fit.train_loss.push_back(epoch_loss / static_cast<double>(order.size()));
    if (valid && !valid->trajectories.empty()) {
      double v = 0.0;
      for (const auto& traj : valid->trajectories) v += sequence_loss(net, traj);
      fit.valid_loss.push_back(v / static_cast<double>(valid->trajectories.size()));
    }
  }
  return fit;
}

// ---------------------------------------------------------------------------
// Initial distribution / simulator spec

Observation InitialObsDist::sample(Rng& rng) const {
  Observation o{};
  if (!support.empty()) {
    const int idx = rng.categorical(support_probs);
    return support[static_cast<std::size_t>(idx)];
  }
  for (int d = 0; d < kNumDims; ++d)
    o[d] = rng.categorical(factored[static_cast<std::size_t>(d)]);
  return o;
}

void InitialObsDist::validate(const WorldConfig& config) const {
  if (!support.empty()) {
    if (support.size() != support_probs.size())
      fail("InitialObsDist: support/prob size mismatch");
    double sum = 0.0;
    for (double p : support_probs) {
      if (p < 0.0) fail("InitialObsDist: negative probability");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) fail("InitialObsDist: support probabilities do not sum to 1");
    for (const auto& o : support)
      for (int d = 0; d < kNumDims; ++d)
        if (o[d] < 0 || o[d] >= config.cardinalities[d])
          fail("InitialObsDist: support observation out of range");
    return;
  }
  for (int d = 0; d < kNumDims; ++d) {
    const auto& r = factored[static_cast<std::size_t>(d)];
    if (static_cast<int>(r.size()) != config.cardinalities[d])
      fail("InitialObsDist: factored row has wrong cardinality");
    double sum = 0.0;
    for (double p : r) {
      if (p < 0.0) fail("InitialObsDist: negative probability");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) fail("InitialObsDist: factored row does not sum to 1");
  }
}

InitialObsDist fit_initial_dist(const Dataset& ds, const WorldConfig& config) {
  if (ds.trajectories.empty()) fail("fit_initial_dist: empty dataset");
  std::map<Observation, std::int64_t> counts;
  for (const auto& t : ds.trajectories) ++counts[t.observations.front()];
  InitialObsDist dist;
  const double total = static_cast<double>(ds.trajectories.size());
  for (const auto& [obs, count] : counts) {
    dist.support.push_back(obs);
    dist.support_probs.push_back(static_cast<double>(count) / total);
  }
  dist.validate(config);
  return dist;
}

void SimulatorSpec::validate() const {
  if (tables.config != config) fail("SimulatorSpec: tables/config mismatch");
  tables.validate();
  initial.validate(config);
  if (reward.cell.in_dim() != config.enc_dim())
    fail("SimulatorSpec: reward cell input dim mismatch");
  if (reward.head.in_dim() != reward.cell.hidden_dim() ||
      reward.head.out_dim() != kNumActions)
    fail("SimulatorSpec: reward head shape mismatch");
}

namespace {

json mat_to_json(const numkit::Mat& m) {
  return json{{"rows", m.rows}, {"cols", m.cols}, {"data", m.data}};
}

numkit::Mat mat_from_json(const json& j) {
  numkit::Mat m(j.at("rows").get<int>(), j.at("cols").get<int>());
  m.data = j.at("data").get<Vec>();
  if (m.data.size() != static_cast<std::size_t>(m.rows) * static_cast<std::size_t>(m.cols))
    fail("mat_from_json: data length mismatch");
  return m;
}

}  // namespace

std::string simspec_to_json(const SimulatorSpec& spec) {
  json j;
  j["config"] = {{"cardinalities", spec.config.cardinalities}, {"horizon", kHorizonObs}};
  j["seed"] = spec.seed;
  j["tables"] = {{"alpha", spec.tables.alpha}, {"dims", spec.tables.probs}};
  j["reward"] = {{"w_x", mat_to_json(spec.reward.cell.w_x)},
                 {"w_h", mat_to_json(spec.reward.cell.w_h)},
                 {"b", spec.reward.cell.b},
                 {"head_w", mat_to_json(spec.reward.head.w)},
                 {"head_b", spec.reward.head.b},
                 {"output_scale", spec.reward.output_scale}};
  j["initial"] = {{"support", json::array()},
                  {"support_probs", spec.initial.support_probs},
                  {"factored", spec.initial.factored}};
  for (const auto& o : spec.initial.support) j["initial"]["support"].push_back(o);
  return j.dump(2);
}

SimulatorSpec simspec_from_json(const std::string& json_text) {
  const json j = json::parse(json_text);
  SimulatorSpec spec;
  spec.config.cardinalities = j.at("config").at("cardinalities").get<std::array<int, kNumDims>>();
  if (j.at("config").at("horizon").get<int>() != kHorizonObs)
    fail("simspec_from_json: unsupported horizon");
  spec.seed = j.at("seed").get<std::uint64_t>();
  spec.tables.config = spec.config;
  spec.tables.alpha = j.at("tables").at("alpha").get<double>();
  spec.tables.probs = j.at("tables").at("dims").get<std::array<std::vector<double>, kNumDims>>();
  const auto& r = j.at("reward");
  spec.reward.cell.w_x = mat_from_json(r.at("w_x"));
  spec.reward.cell.w_h = mat_from_json(r.at("w_h"));
  spec.reward.cell.b = r.at("b").get<Vec>();
  spec.reward.head.w = mat_from_json(r.at("head_w"));
  spec.reward.head.b = r.at("head_b").get<Vec>();
  spec.reward.head.act = numkit::Activation::Identity;
  spec.reward.output_scale = r.at("output_scale").get<double>();
  const auto& init = j.at("initial");
  for (const auto& o : init.at("support"))
    spec.initial.support.push_back(o.get<Observation>());
  spec.initial.support_probs = init.at("support_probs").get<std::vector<double>>();
  spec.initial.factored =
      init.at("factored").get<std::array<std::vector<double>, kNumDims>>();
  spec.validate();
  return spec;
}

void save_simspec(const SimulatorSpec& spec, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail("save_simspec: cannot open " + path);
  out << simspec_to_json(spec) << "\n";
  if (!out) fail("save_simspec: write failed for " + path);
}

SimulatorSpec load_simspec(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("load_simspec: cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return simspec_from_json(buf.str());
}

// ---------------------------------------------------------------------------
// Simulation

SimState sim_reset(const SimulatorSpec& sim, Rng& rng) {
  SimState state;
  state.obs = sim.initial.sample(rng);
  state.step = 1;
  state.hidden.assign(static_cast<std::size_t>(sim.reward.hidden_dim()), 0.0);
  state.prev_action = -1;
  state.prev_reward = 0.0;
  state.done = false;
  return state;
}

StepResult sim_step(const SimulatorSpec& sim, SimState& state, int action, Rng& rng) {
  if (state.done || state.step > kHorizonSteps)
    fail("sim_step: episode already finished");
  check_action(action, "sim_step");

  // advance the reward-net history summary to the current step
  Vec enc;
  encode_step_into(sim.config, state.obs, state.prev_action, state.prev_reward, enc);
  state.hidden = numkit::rnn_step(sim.reward.cell, enc, state.hidden);

  const double reward = sim.reward.predict(state.hidden, action);
  const int donated = reward > 0.0 ? 1 : 0;

  Observation next{};
  for (int d = 0; d < kNumDims; ++d)
    next[d] = rng.categorical(sim.tables.row(d, state.obs[d], action, donated));

  state.prev_action = action;
  state.prev_reward = reward;
  state.obs = next;
  state.step += 1;
  state.done = state.step > kHorizonSteps;
  return {next, reward, state.done};
}

// ---------------------------------------------------------------------------
// Behavior policies

BehaviorPolicy BehaviorPolicy::uniform() {
  BehaviorPolicy p;
  p.kind = Kind::Uniform;
  return p;
}

BehaviorPolicy BehaviorPolicy::matching(const std::array<double, kNumActions>& histogram) {
  double total = 0.0;
  for (double w : histogram) {
    if (w < 0.0) fail("BehaviorPolicy::matching: negative frequency");
    total += w;
  }
  if (total <= 0.0) fail("BehaviorPolicy::matching: empty histogram");
  BehaviorPolicy p;
  p.kind = Kind::Matching;
  for (std::size_t a = 0; a < kNumActions; ++a) p.histogram[a] = histogram[a] / total;
  return p;
}

BehaviorPolicy BehaviorPolicy::matching_from(const Dataset& raw) {
  std::array<double, kNumActions> h{};
  for (std::size_t a = 0; a < kNumActions; ++a)
    h[a] = static_cast<double>(raw.action_counts[a]);
  return matching(h);
}

BehaviorPolicy BehaviorPolicy::replay(const Dataset& raw) {
  if (raw.trajectories.empty()) fail("BehaviorPolicy::replay: empty log");
  BehaviorPolicy p;
  p.kind = Kind::Replay;
  p.log = &raw;
  return p;
}

BehaviorPolicy BehaviorPolicy::greedy_policy(RolloutPolicy policy) {
  BehaviorPolicy p;
  p.kind = Kind::Greedy;
  p.greedy = std::move(policy);
  return p;
}

int behavior_action(const BehaviorPolicy& policy, const BehaviorContext& ctx, Rng& rng) {
  switch (policy.kind) {
    case BehaviorPolicy::Kind::Uniform:
      return rng.uniform_int(kNumActions);
    case BehaviorPolicy::Kind::Matching:
      return rng.categorical(policy.histogram);
    case BehaviorPolicy::Kind::Replay: {
      if (!ctx.logged) fail("behavior_action: replay policy needs a logged trajectory");
      if (ctx.step < 1 || ctx.step > kHorizonSteps)
        fail("behavior_action: replay step " + std::to_string(ctx.step) +
             " beyond logged horizon");
      return ctx.logged->actions[static_cast<std::size_t>(ctx.step - 1)];
    }
    case BehaviorPolicy::Kind::Greedy: {
      if (!policy.greedy.act) fail("behavior_action: greedy policy has no act hook");
      if (!ctx.obs) fail("behavior_action: greedy policy needs the current observation");
      return policy.greedy.act(*ctx.obs, rng);
    }
  }
  fail("behavior_action: bad policy kind");
}

// ---------------------------------------------------------------------------
// Dataset generation

namespace {

Trajectory rollout_trajectory(const SimulatorSpec& sim, const BehaviorPolicy& policy,
                              std::int64_t donor_id, const Trajectory* logged, Rng& rng) {
  Trajectory traj;
  traj.donor_id = donor_id;

  if (policy.kind == BehaviorPolicy::Kind::Replay) {
    // Observations and actions come from the log; only rewards are
    // regenerated by the reward function (fed with the regenerated rewards).
    traj.observations = logged->observations;
    traj.actions = logged->actions;
    Vec hidden(static_cast<std::size_t>(sim.reward.hidden_dim()), 0.0);
    Vec enc;
    double prev_reward = 0.0;
    for (int t = 0; t < kHorizonSteps; ++t) {
      encode_step_into(sim.config, traj.observations[static_cast<std::size_t>(t)],
                       t == 0 ? -1 : traj.actions[static_cast<std::size_t>(t) - 1],
                       t == 0 ? 0.0 : prev_reward, enc);
      hidden = numkit::rnn_step(sim.reward.cell, enc, hidden);
      prev_reward = sim.reward.predict(hidden, traj.actions[static_cast<std::size_t>(t)]);
      traj.rewards.push_back(prev_reward);
    }
    return traj;
  }

  if (policy.kind == BehaviorPolicy::Kind::Greedy && policy.greedy.reset)
    policy.greedy.reset();
  SimState state = sim_reset(sim, rng);
  traj.observations.push_back(state.obs);
  while (!state.done) {
    BehaviorContext ctx;
    ctx.step = state.step;
    ctx.obs = &state.obs;
    const int action = behavior_action(policy, ctx, rng);
    const StepResult step = sim_step(sim, state, action, rng);
    if (policy.kind == BehaviorPolicy::Kind::Greedy && policy.greedy.commit)
      policy.greedy.commit(action, step.reward);
    traj.observations.push_back(step.obs);
    traj.actions.push_back(action);
    traj.rewards.push_back(step.reward);
  }
  return traj;
}

}  // namespace

Dataset generate_dataset(const SimulatorSpec& sim, const BehaviorPolicy& policy,
                         std::int64_t n_transitions, std::uint64_t seed) {
  if (n_transitions < kHorizonSteps)
    fail("generate_dataset: need at least 22 transitions");
  const auto n_traj = static_cast<std::size_t>((n_transitions + kHorizonSteps - 1) / kHorizonSteps);
  if (policy.kind == BehaviorPolicy::Kind::Replay &&
      (policy.log == nullptr || policy.log->trajectories.empty()))
    fail("generate_dataset: replay policy with empty log");

  Dataset ds;
  ds.trajectories.resize(n_traj);
  const bool greedy = policy.kind == BehaviorPolicy::Kind::Greedy;
  const auto roll = [&](std::size_t i) {
    Rng rng(Rng::derive(seed, i));
    const Trajectory* logged = nullptr;
    if (policy.kind == BehaviorPolicy::Kind::Replay)
      logged = &policy.log->trajectories[i % policy.log->trajectories.size()];
    ds.trajectories[i] =
        rollout_trajectory(sim, policy, static_cast<std::int64_t>(i), logged, rng);
  };
  // Greedy policies carry caller state, so they run serially.
  parallel_for(n_traj, roll, greedy ? 1 : std::thread::hardware_concurrency());
  ds.rebuild_histogram();
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic worlds

SimulatorSpec random_world(const WorldConfig& config, std::uint64_t seed,
                           const RandomWorldOptions& options) {
  Rng rng(Rng::derive(seed, 0xD1CE));
  SimulatorSpec spec;
  spec.config = config;
  spec.seed = seed;

  // Dirichlet(1) rows via normalized exponentials.
  spec.tables.config = config;
  spec.tables.alpha = 0.0;
  spec.tables.allocate();
  for (int d = 0; d < kNumDims; ++d) {
    const int card = config.cardinalities[d];
    for (int v = 0; v < card; ++v)
      for (int a = 0; a < kNumActions; ++a)
        for (int donated = 0; donated < 2; ++donated) {
          auto r = spec.tables.row(d, v, a, donated);
          double total = 0.0;
          for (double& p : r) {
            double u = rng.uniform01();
            while (u <= 0.0) u = rng.uniform01();
            p = -std::log(u);
            total += p;
          }
          for (double& p : r) p /= total;
        }
  }

  for (int d = 0; d < kNumDims; ++d) {
    auto& row = spec.initial.factored[static_cast<std::size_t>(d)];
    row.assign(static_cast<std::size_t>(config.cardinalities[d]), 0.0);
    double total = 0.0;
    for (double& p : row) {
      double u = rng.uniform01();
      while (u <= 0.0) u = rng.uniform01();
      p = -std::log(u);
      total += p;
    }
    for (double& p : row) p /= total;
  }

  spec.reward = make_reward_net(config, options.reward_hidden, rng.next_u64());

  const std::uint64_t probe_seed = Rng::derive(seed, 0xCAFE);
  const auto n_probe_traj =
      static_cast<std::size_t>(options.calibration_steps / kHorizonSteps + 1);
  const auto mean_under_uniform = [&](double scale) {
    spec.reward.output_scale = scale;
    double total = 0.0;
    std::int64_t steps = 0;
    for (std::size_t e = 0; e < n_probe_traj; ++e) {
      Rng episode_rng(Rng::derive(probe_seed, e));
      SimState state = sim_reset(spec, episode_rng);
      while (!state.done) {
        const int action = episode_rng.uniform_int(kNumActions);
        total += sim_step(spec, state, action, episode_rng).reward;
        ++steps;
      }
    }
    return total / static_cast<double>(steps);
  };

  // Bisect the output scale until the mean per-step reward under the uniform
  // policy lands in the accepted band. Probes share a seed, so the estimate
  // is monotone in the scale up to clamp-induced resampling noise.
  const auto calibrate_scale = [&] {
    const double target = 0.5 * (options.mean_reward_lo + options.mean_reward_hi);
    double lo = 0.0, hi = 1.0;
    double mean_hi = mean_under_uniform(hi);
    int expand = 0;
    while (mean_hi < target) {
      hi *= 2.0;
      mean_hi = mean_under_uniform(hi);
      if (++expand > 60) fail("random_world: reward rescaling failed to bracket the target");
    }
    double mean = mean_hi;
    double scale = hi;
    for (int it = 0;
         it < 60 && (mean < options.mean_reward_lo || mean > options.mean_reward_hi); ++it) {
      scale = 0.5 * (lo + hi);
      mean = mean_under_uniform(scale);
      if (mean < target)
        lo = scale;
      else
        hi = scale;
    }
    if (mean < options.mean_reward_lo || mean > options.mean_reward_hi)
      fail("random_world: reward rescaling did not converge");
    spec.reward.output_scale = scale;
  };

  // Normalizes each pre-activation contribution of the reward cell (per input
  // block and the recurrent term) to its target standard deviation, measured
  // over uniform-policy rollouts. Without this the cell drifts into tanh
  // saturation and history stops influencing rewards. Two rounds, because the
  // rollout distribution shifts with the weights.
  const int obs_dim = config.obs_onehot_dim();
  const auto normalize_drives = [&] {
    const int h_dim = spec.reward.hidden_dim();
    numkit::Mat& w_x = spec.reward.cell.w_x;
    numkit::Mat& w_h = spec.reward.cell.w_h;
    double sq_obs = 0.0, sq_act = 0.0, sq_rew = 0.0, sq_rec = 0.0;
    std::int64_t n = 0;
    Vec enc;
    for (std::size_t e = 0; e < n_probe_traj / 4 + 1; ++e) {
      Rng episode_rng(Rng::derive(probe_seed, 0xBEEF + e));
      SimState state = sim_reset(spec, episode_rng);
      while (!state.done) {
        encode_step_into(config, state.obs, state.prev_action, state.prev_reward, enc);
        for (int r = 0; r < h_dim; ++r) {
          double z_obs = 0.0, z_act = 0.0, z_rew = 0.0, z_rec = 0.0;
          for (int c = 0; c < obs_dim; ++c) z_obs += w_x.at(r, c) * enc[static_cast<std::size_t>(c)];
          for (int c = obs_dim; c < obs_dim + kNumActions; ++c)
            z_act += w_x.at(r, c) * enc[static_cast<std::size_t>(c)];
          z_rew = w_x.at(r, obs_dim + kNumActions) * enc[static_cast<std::size_t>(obs_dim + kNumActions)];
          for (int c = 0; c < h_dim; ++c)
            z_rec += w_h.at(r, c) * state.hidden[static_cast<std::size_t>(c)];
          sq_obs += z_obs * z_obs;
          sq_act += z_act * z_act;
          sq_rew += z_rew * z_rew;
          sq_rec += z_rec * z_rec;
          ++n;
        }
        sim_step(spec, state, episode_rng.uniform_int(kNumActions), episode_rng);
      }
    }
    const auto scale_of = [&](double sq, double target) {
      const double measured = std::sqrt(sq / static_cast<double>(n));
      return measured > 1e-12 ? target / measured : 1.0;
    };
    const double g_obs = scale_of(sq_obs, options.obs_drive);
    const double g_act = scale_of(sq_act, options.action_drive);
    const double g_rew = scale_of(sq_rew, options.reward_feedback_drive);
    const double g_rec = scale_of(sq_rec, options.recurrent_drive);
    for (int r = 0; r < h_dim; ++r) {
      for (int c = 0; c < obs_dim; ++c) w_x.at(r, c) *= g_obs;
      for (int c = obs_dim; c < obs_dim + kNumActions; ++c) w_x.at(r, c) *= g_act;
      w_x.at(r, obs_dim + kNumActions) *= g_rew;
    }
    for (double& w : w_h.data) w *= g_rec;
  };

  calibrate_scale();
  for (int round = 0; round < 2; ++round) {
    normalize_drives();
    calibrate_scale();
  }
  spec.validate();
  return spec;
}

}  // namespace rrl::simworld
