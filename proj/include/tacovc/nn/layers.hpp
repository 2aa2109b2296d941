#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "tacovc/nn/tape.hpp"

namespace tacovc::nn {

// Shared forward-pass context: one tape, the owning parameter set, the
// train/eval switch and the RNG driving dropout and sampling decisions.
struct Ctx {
  Tape& tape;
  ParamSet& ps;
  bool train = false;
  std::mt19937* rng = nullptr;

  Var param(ParamRef r) { return tape.param(ps, r); }
};

inline Mat glorotUniform(std::mt19937& rng, int rows, int cols) {
  const float limit = std::sqrt(6.0f / static_cast<float>(rows + cols));
  std::uniform_real_distribution<float> uni(-limit, limit);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uni(rng);
  return m;
}

struct Dense {
  ParamRef w, b;
  Dense() = default;
  Dense(ParamSet& ps, const std::string& name, int in, int out, std::mt19937& rng,
        float bias_init = 0.0f) {
    w = ps.add(name + ".w", glorotUniform(rng, in, out));
    b = ps.add(name + ".b", Mat::Constant(1, out, bias_init));
  }
  Var operator()(Ctx& c, Var x) const {
    return addRowBroadcast(c.tape, matmul(c.tape, x, c.param(w)), c.param(b));
  }
};

struct Conv1d {
  ParamRef w, b;
  int kernel = 1;
  int dilation = 1;
  bool causal = false;
  Conv1d() = default;
  Conv1d(ParamSet& ps, const std::string& name, int in, int out, int kernel_, std::mt19937& rng,
         int dilation_ = 1, bool causal_ = false)
      : kernel(kernel_), dilation(dilation_), causal(causal_) {
    w = ps.add(name + ".w", glorotUniform(rng, kernel * in, out));
    b = ps.add(name + ".b", Mat::Zero(1, out));
  }
  Var operator()(Ctx& c, Var x) const {
    return conv1d(c.tape, x, c.param(w), c.param(b), kernel, dilation, causal);
  }
};

// Batch normalization over the time axis (rows). Statistics always come from
// the utterance being processed, in training and at inference alike, so the
// two paths see identical normalization; utterances here have variable length
// and are processed one at a time, which rules out cross-utterance batch
// statistics.
struct BatchNorm1d {
  ParamRef gamma, beta;
  float eps = 1e-5f;

  BatchNorm1d() = default;
  BatchNorm1d(ParamSet& ps, const std::string& name, int ch) {
    gamma = ps.add(name + ".gamma", Mat::Ones(1, ch));
    beta = ps.add(name + ".beta", Mat::Zero(1, ch));
  }

  Var operator()(Ctx& c, Var x) const {
    Tape& t = c.tape;
    // bind params before taking any reference into the tape: binding can
    // grow the node vector and invalidate references
    Var g = c.param(gamma);
    Var b = c.param(beta);
    const Mat& xv = t.val(x);
    const int T = static_cast<int>(xv.rows());

    const Eigen::RowVectorXf mean = xv.colwise().mean();
    const Eigen::RowVectorXf var =
        (xv.rowwise() - mean).array().square().colwise().mean();
    Eigen::RowVectorXf inv_std = (var.array() + eps).rsqrt();

    auto xhat = std::make_shared<Mat>(((xv.rowwise() - mean).array().rowwise() *
                                       inv_std.array()).matrix());
    Mat y = (xhat->array().rowwise() * t.val(g).row(0).array()).matrix();
    y.rowwise() += t.val(b).row(0);

    const bool needs = t.needsGrad(x) || t.needsGrad(g) || t.needsGrad(b);
    const int id = t.alloc(std::move(y), needs);
    if (needs) {
      auto inv = std::make_shared<Eigen::RowVectorXf>(inv_std);
      t.setBack(id, [x, g, b, xhat, inv, T, id](Tape& t) {
        const Mat& gy = t.gradRef(id);
        if (t.needsGrad(b)) t.grad(b).row(0) += gy.colwise().sum();
        if (t.needsGrad(g)) t.grad(g).row(0) += (gy.array() * xhat->array()).colwise().sum().matrix();
        if (t.needsGrad(x)) {
          const Eigen::RowVectorXf gv = t.val(g).row(0);
          const Eigen::RowVectorXf sum_g = gy.colwise().sum();
          const Eigen::RowVectorXf sum_gx = (gy.array() * xhat->array()).colwise().sum();
          const float n = static_cast<float>(T);
          Mat dx = (gy.array() * n).matrix();
          dx.rowwise() -= sum_g;
          dx -= (xhat->array().rowwise() * sum_gx.array()).matrix();
          dx = (dx.array().rowwise() * (gv.array() * inv->array() / n)).matrix();
          t.grad(x) += dx;
        }
      });
    }
    return Var{id};
  }
};

// GRU cell with packed gates: [update | reset | candidate].
struct GruCell {
  ParamRef w, u, b;
  int hidden = 0;

  GruCell() = default;
  GruCell(ParamSet& ps, const std::string& name, int in, int hidden_, std::mt19937& rng)
      : hidden(hidden_) {
    w = ps.add(name + ".w", glorotUniform(rng, in, 3 * hidden_));
    u = ps.add(name + ".u", glorotUniform(rng, hidden_, 3 * hidden_));
    b = ps.add(name + ".b", Mat::Zero(1, 3 * hidden_));
  }

  Var initialState(Tape& t) const { return t.constant(Mat::Zero(1, hidden)); }

  Var step(Ctx& c, Var x, Var h) const {
    Tape& t = c.tape;
    Var xw = addRowBroadcast(t, matmul(t, x, c.param(w)), c.param(b));
    Var hu = matmul(t, h, c.param(u));
    Var z = sigmoid(t, add(t, sliceCols(t, xw, 0, hidden), sliceCols(t, hu, 0, hidden)));
    Var r = sigmoid(t, add(t, sliceCols(t, xw, hidden, hidden), sliceCols(t, hu, hidden, hidden)));
    Var n = tanhOp(t, add(t, sliceCols(t, xw, 2 * hidden, hidden),
                          mul(t, r, sliceCols(t, hu, 2 * hidden, hidden))));
    // h' = n + z * (h - n)
    return add(t, n, mul(t, z, sub(t, h, n)));
  }
};

// Bidirectional GRU over the rows of x; output is [T x 2*hidden].
struct BiGru {
  GruCell fwd, bwd;
  BiGru() = default;
  BiGru(ParamSet& ps, const std::string& name, int in, int hidden, std::mt19937& rng)
      : fwd(ps, name + ".fwd", in, hidden, rng), bwd(ps, name + ".bwd", in, hidden, rng) {}

  Var operator()(Ctx& c, Var x) const {
    Tape& t = c.tape;
    const int T = static_cast<int>(t.val(x).rows());
    std::vector<Var> fw(static_cast<size_t>(T)), bw(static_cast<size_t>(T));
    Var h = fwd.initialState(t);
    for (int i = 0; i < T; ++i) {
      h = fwd.step(c, sliceRows(t, x, i, 1), h);
      fw[static_cast<size_t>(i)] = h;
    }
    h = bwd.initialState(t);
    for (int i = T - 1; i >= 0; --i) {
      h = bwd.step(c, sliceRows(t, x, i, 1), h);
      bw[static_cast<size_t>(i)] = h;
    }
    return concatCols(t, concatRows(t, fw), concatRows(t, bw));
  }
};

struct Highway {
  Dense transform, gate;
  Highway() = default;
  Highway(ParamSet& ps, const std::string& name, int dim, std::mt19937& rng)
      : transform(ps, name + ".h", dim, dim, rng),
        gate(ps, name + ".t", dim, dim, rng, /*bias_init=*/-1.0f) {}

  Var operator()(Ctx& c, Var x) const {
    Tape& t = c.tape;
    Var h = relu(t, transform(c, x));
    Var g = sigmoid(t, gate(c, x));
    return add(t, mul(t, g, h), mul(t, affineScalar(t, g, -1.0f, 1.0f), x));
  }
};

// Two-layer bottleneck with dropout; used in front of the encoder and on the
// decoder's previous-frame input.
struct Prenet {
  Dense fc1, fc2;
  float rate = 0.5f;
  Prenet() = default;
  Prenet(ParamSet& ps, const std::string& name, int in, int h1, int h2, std::mt19937& rng)
      : fc1(ps, name + ".fc1", in, h1, rng), fc2(ps, name + ".fc2", h1, h2, rng) {}

  Var operator()(Ctx& c, Var x) const {
    Tape& t = c.tape;
    Var h = dropout(t, relu(t, fc1(c, x)), rate, *c.rng, c.train);
    return dropout(t, relu(t, fc2(c, x = h)), rate, *c.rng, c.train);
  }
};

// Convolution bank + highway + bidirectional GRU block.
struct CbhgConfig {
  int in_dim = 0;
  int bank_k = 8;
  int bank_ch = 64;
  int proj_ch = 64;
  int n_highway = 2;
  int highway_dim = 64;
  int gru_units = 64;  // per direction; output is 2x this

  int outDim() const { return 2 * gru_units; }
};

struct Cbhg {
  CbhgConfig cfg;
  std::vector<Conv1d> bank;
  std::vector<BatchNorm1d> bank_bn;
  Conv1d proj1, proj2;
  BatchNorm1d proj1_bn, proj2_bn;
  Dense pre_highway;
  bool needs_pre_highway = false;
  std::vector<Highway> highways;
  BiGru rnn;

  Cbhg() = default;
  Cbhg(ParamSet& ps, const std::string& name, const CbhgConfig& cfg_, std::mt19937& rng)
      : cfg(cfg_) {
    for (int k = 1; k <= cfg.bank_k; ++k) {
      bank.emplace_back(ps, name + ".bank" + std::to_string(k), cfg.in_dim, cfg.bank_ch, k, rng);
      bank_bn.emplace_back(ps, name + ".bank" + std::to_string(k) + ".bn", cfg.bank_ch);
    }
    proj1 = Conv1d(ps, name + ".proj1", cfg.bank_k * cfg.bank_ch, cfg.proj_ch, 3, rng);
    proj1_bn = BatchNorm1d(ps, name + ".proj1.bn", cfg.proj_ch);
    proj2 = Conv1d(ps, name + ".proj2", cfg.proj_ch, cfg.in_dim, 3, rng);
    proj2_bn = BatchNorm1d(ps, name + ".proj2.bn", cfg.in_dim);
    needs_pre_highway = cfg.in_dim != cfg.highway_dim;
    if (needs_pre_highway)
      pre_highway = Dense(ps, name + ".pre_highway", cfg.in_dim, cfg.highway_dim, rng);
    for (int i = 0; i < cfg.n_highway; ++i)
      highways.emplace_back(ps, name + ".highway" + std::to_string(i), cfg.highway_dim, rng);
    rnn = BiGru(ps, name + ".rnn", cfg.highway_dim, cfg.gru_units, rng);
  }

  Var operator()(Ctx& c, Var x) const {
    Tape& t = c.tape;
    std::vector<Var> feats;
    feats.reserve(bank.size());
    for (size_t k = 0; k < bank.size(); ++k)
      feats.push_back(relu(t, bank_bn[k](c, bank[k](c, x))));
    Var stacked = maxPool2Time(t, concatCols(t, feats));
    Var p = relu(t, proj1_bn(c, proj1(c, stacked)));
    p = proj2_bn(c, proj2(c, p));
    Var h = add(t, x, p);
    if (needs_pre_highway) h = pre_highway(c, h);
    for (const auto& hw : highways) h = hw(c, h);
    return rnn(c, h);
  }
};

}  // namespace tacovc::nn
