#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <utility>
#include <vector>

#include "tacovc/error.hpp"
#include "tacovc/util.hpp"

namespace tacovc::nn {

using Mat = Eigen::MatrixXf;

// Reverse-mode autodiff over float matrices. One Tape per training step;
// nodes are appended in construction order, so walking the tape backwards is
// already a topological order. All networks here are built from this.

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

struct Param {
  std::string name;
  Mat value;
  Mat grad;
  Mat adam_m, adam_v;
  bool trainable = true;

  void accumulate(const Mat& g) {
    if (grad.size() == 0) grad = Mat::Zero(value.rows(), value.cols());
    grad += g;
  }
};

struct ParamRef {
  int idx = -1;
};

class ParamSet {
 public:
  ParamRef add(std::string name, Mat value, bool trainable = true) {
    for (const auto& p : items_)
      require(p.name != name, ErrorCode::InvalidConfig, "duplicate parameter name: " + name);
    items_.push_back(Param{std::move(name), std::move(value), Mat(), Mat(), Mat(), trainable});
    return ParamRef{static_cast<int>(items_.size()) - 1};
  }

  Param& at(ParamRef r) { return items_.at(static_cast<size_t>(r.idx)); }
  const Param& at(ParamRef r) const { return items_.at(static_cast<size_t>(r.idx)); }

  std::vector<Param>& items() { return items_; }
  const std::vector<Param>& items() const { return items_; }

  void zeroGrads() {
    for (auto& p : items_) p.grad.resize(0, 0);
  }

  size_t totalWeights() const {
    size_t n = 0;
    for (const auto& p : items_) n += static_cast<size_t>(p.value.size());
    return n;
  }

  // Byte-level fingerprint of every stored tensor, used by the frozen-weights
  // invariants and checkpoint identity checks.
  uint64_t checksum() const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& p : items_) {
      h = fnv1a64(p.name.data(), p.name.size(), h);
      h = fnv1a64(p.value.data(), static_cast<size_t>(p.value.size()) * sizeof(float), h);
    }
    return h;
  }

 private:
  std::vector<Param> items_;
};

class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {
    nodes_.reserve(4096);
  }

  bool gradEnabled() const { return grad_enabled_; }

  Var constant(Mat v) { return Var{alloc(std::move(v), false)}; }

  // Leaf with a tracked gradient (for gradient checks and probes).
  Var leaf(Mat v) { return Var{alloc(std::move(v), grad_enabled_)}; }

  // Binds a parameter into the graph. Memoized so every use in one step
  // shares a single node and the gradient accumulates once.
  Var param(ParamSet& ps, ParamRef ref) {
    const auto key = std::make_pair(static_cast<const void*>(&ps), ref.idx);
    auto it = param_cache_.find(key);
    if (it != param_cache_.end()) return Var{it->second};
    Param& p = ps.at(ref);
    const int id = alloc(p.value, grad_enabled_ && p.trainable);
    if (grad_enabled_ && p.trainable) {
      Param* pp = &p;
      nodes_[id].back = [pp, id](Tape& t) { pp->accumulate(t.gradRef(id)); };
    }
    param_cache_.emplace(key, id);
    return Var{id};
  }

  const Mat& val(Var v) const { return nodes_.at(static_cast<size_t>(v.id)).val; }

  Mat& gradRef(int id) {
    Node& n = nodes_.at(static_cast<size_t>(id));
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.val.rows(), n.val.cols());
    return n.grad;
  }
  Mat& grad(Var v) { return gradRef(v.id); }

  bool needsGrad(Var v) const { return nodes_.at(static_cast<size_t>(v.id)).needs_grad; }

  int alloc(Mat val, bool needs_grad) {
    nodes_.push_back(Node{std::move(val), Mat(), needs_grad, nullptr});
    return static_cast<int>(nodes_.size()) - 1;
  }

  void setBack(int id, std::function<void(Tape&)> fn) { nodes_[id].back = std::move(fn); }

  void backward(Var loss) {
    require(grad_enabled_, ErrorCode::InvalidConfig, "backward on a no-grad tape");
    require(val(loss).size() == 1, ErrorCode::ShapeError, "backward target must be scalar");
    gradRef(loss.id).setOnes();
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (!n.needs_grad || !n.back) continue;
      if (n.grad.size() == 0) continue;  // nothing flowed here
      n.back(*this);
    }
  }

  size_t size() const { return nodes_.size(); }

  void clear() {
    nodes_.clear();
    param_cache_.clear();
  }

 private:
  struct Node {
    Mat val;
    Mat grad;
    bool needs_grad;
    std::function<void(Tape&)> back;
  };

  std::vector<Node> nodes_;
  std::map<std::pair<const void*, int>, int> param_cache_;
  bool grad_enabled_;
};

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

namespace detail {
inline bool anyGrad(Tape& t, Var a) { return t.needsGrad(a); }
inline bool anyGrad(Tape& t, Var a, Var b) { return t.needsGrad(a) || t.needsGrad(b); }
}  // namespace detail

inline Var matmul(Tape& t, Var a, Var b) {
  require(t.val(a).cols() == t.val(b).rows(), ErrorCode::ShapeError, "matmul shape mismatch");
  Mat y = t.val(a) * t.val(b);
  const int id = t.alloc(std::move(y), detail::anyGrad(t, a, b));
  if (t.needsGrad(Var{id}))
    t.setBack(id, [a, b, id](Tape& t) {
      const Mat& g = t.gradRef(id);
      if (t.needsGrad(a)) t.grad(a).noalias() += g * t.val(b).transpose();
      if (t.needsGrad(b)) t.grad(b).noalias() += t.val(a).transpose() * g;
    });
  return Var{id};
}

inline Var add(Tape& t, Var a, Var b) {
  require(t.val(a).rows() == t.val(b).rows() && t.val(a).cols() == t.val(b).cols(),
          ErrorCode::ShapeError, "add shape mismatch");
  Mat y = t.val(a) + t.val(b);
  const int id = t.alloc(std::move(y), detail::anyGrad(t, a, b));
  if (t.needsGrad(Var{id}))
    t.setBack(id, [a, b, id](Tape& t) {
      const Mat& g = t.gradRef(id);
      if (t.needsGrad(a)) t.grad(a) += g;
      if (t.needsGrad(b)) t.grad(b) += g;
    });
  return Var{id};
}

inline Var sub(Tape& t, Var a, Var b) {
  Mat y = t.val(a) - t.val(b);
  const int id = t.alloc(std::move(y), detail::anyGrad(t, a, b));
  if (t.needsGrad(Var{id}))
    t.setBack(id, [a, b, id](Tape& t) {
      const Mat& g = t.gradRef(id);
      if (t.needsGrad(a)) t.grad(a) += g;
      if (t.needsGrad(b)) t.grad(b) -= g;
    });
  return Var{id};
}

inline Var mul(Tape& t, Var a, Var b) {
  require(t.val(a).rows() == t.val(b).rows() && t.val(a).cols() == t.val(b).cols(),
          ErrorCode::ShapeError, "mul shape mismatch");
  Mat y = t.val(a).cwiseProduct(t.val(b));
  const int id = t.alloc(std::move(y), detail::anyGrad(t, a, b));
  if (t.needsGrad(Var{id}))
    t.setBack(id, [a, b, id](Tape& t) {
      const Mat& g = t.gradRef(id);
      if (t.needsGrad(a)) t.grad(a) += g.cwiseProduct(t.val(b));
      if (t.needsGrad(b)) t.grad(b) += g.cwiseProduct(t.val(a));
    });
  return Var{id};
}

// y = alpha * a + beta
inline Var affineScalar(Tape& t, Var a, float alpha, float beta) {
  Mat y = (t.val(a).array() * alpha + beta).matrix();
  const int id = t.alloc(std::move(y), t.needsGrad(a));
  if (t.needsGrad(Var{id}))
    t.setBack(id, [a, alpha, id](Tape& t) { t.grad(a) += t.gradRef(id) * alpha; });
  return Var{id};
}

inline Var scale(Tape& t, Var a, float alpha) { return affineScalar(t, a, alpha, 0.0f); }

// Broadcasts a [1 x C] row over every row of a [T x C] matrix.
inline Var addRowBroadcast(Tape& t, Var a, Var row) {
  require(t.val(row).rows() == 1 && t.val(row).cols() == t.val(a).cols(), ErrorCode::ShapeError,
          "addRowBroadcast shape mismatch");
  Mat y = t.val(a).rowwise() + t.val(row).row(0);
  const int id = t.alloc(std::move(y), detail::anyGrad(t, a, row));
  if (t.needsGrad(Var{id}))
    t.setBack(id, [a, row, id](Tape& t) {
      const Mat& g = t.gradRef(id);
      if (t.needsGrad(a)) t.grad(a) += g;
      if (t.needsGrad(row)) t.grad(row).row(0) += g.colwise().sum();
    });
  return Var{id};
}

inline Var sigmoid(Tape& t, Var a) {
  Mat y = (1.0f / (1.0f + (-t.val(a).array()).exp())).matrix();
  const int id = t.alloc(std::move(y), t.needsGrad(a));
  if (t.needsGrad(Var{id}))
    t.setBack(id, [a, id](Tape& t) {
      const Mat& y = t.val(Var{id});
      t.grad(a).array() += t.gradRef(id).array() * y.array() * (1.0f - y.array());
    });
  return Var{id};
}

inline Var tanhOp(Tape& t, Var a) {
  Mat y = t.val(a).array().tanh().matrix();
  const int id = t.alloc(std::move(y), t.needsGrad(a));
  if (t.needsGrad(Var{id}))
    t.setBack(id, [a, id](Tape& t) {
      const Mat& y = t.val(Var{id});
      t.grad(a).array() += t.gradRef(id).array() * (1.0f - y.array().square());
    });
  return Var{id};
}

inline Var leakyRelu(Tape& t, Var a, float slope) {
  Mat y = t.val(a).unaryExpr([slope](float v) { return v > 0.0f ? v : slope * v; });
  const int id = t.alloc(std::move(y), t.needsGrad(a));
  if (t.needsGrad(Var{id}))
    t.setBack(id, [a, slope, id](Tape& t) {
      const Mat& x = t.val(a);
      const Mat& g = t.gradRef(id);
      Mat& ga = t.grad(a);
      for (Eigen::Index i = 0; i < x.size(); ++i)
        ga.data()[i] += g.data()[i] * (x.data()[i] > 0.0f ? 1.0f : slope);
    });
  return Var{id};
}

inline Var relu(Tape& t, Var a) { return leakyRelu(t, a, 0.0f); }

inline Var softmaxRows(Tape& t, Var a) {
  const Mat& x = t.val(a);
  Mat y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const float mx = x.row(r).maxCoeff();
    Eigen::ArrayXf e = (x.row(r).array() - mx).exp();
    y.row(r) = (e / e.sum()).matrix();
  }
  const int id = t.alloc(std::move(y), t.needsGrad(a));
  if (t.needsGrad(Var{id}))
    t.setBack(id, [a, id](Tape& t) {
      const Mat& y = t.val(Var{id});
      const Mat& g = t.gradRef(id);
      Mat& ga = t.grad(a);
      for (Eigen::Index r = 0; r < y.rows(); ++r) {
        const float dot = g.row(r).dot(y.row(r));
        ga.row(r).array() += (g.row(r).array() - dot) * y.row(r).array();
      }
    });
  return Var{id};
}

inline Var transposeOp(Tape& t, Var a) {
  Mat y = t.val(a).transpose();
  const int id = t.alloc(std::move(y), t.needsGrad(a));
  if (t.needsGrad(Var{id}))
    t.setBack(id, [a, id](Tape& t) { t.grad(a) += t.gradRef(id).transpose(); });
  return Var{id};
}

inline Var concatCols(Tape& t, const std::vector<Var>& parts) {
  require(!parts.empty(), ErrorCode::InvalidInput, "concatCols of nothing");
  const Eigen::Index rows = t.val(parts[0]).rows();
  Eigen::Index cols = 0;
  bool needs = false;
  for (Var p : parts) {
    require(t.val(p).rows() == rows, ErrorCode::ShapeError, "concatCols row mismatch");
    cols += t.val(p).cols();
    needs = needs || t.needsGrad(p);
  }
  Mat y(rows, cols);
  Eigen::Index off = 0;
  for (Var p : parts) {
    y.middleCols(off, t.val(p).cols()) = t.val(p);
    off += t.val(p).cols();
  }
  const int id = t.alloc(std::move(y), needs);
  if (needs)
    t.setBack(id, [parts, id](Tape& t) {
      const Mat& g = t.gradRef(id);
      Eigen::Index off = 0;
      for (Var p : parts) {
        const Eigen::Index c = t.val(p).cols();
        if (t.needsGrad(p)) t.grad(p) += g.middleCols(off, c);
        off += c;
      }
    });
  return Var{id};
}

inline Var concatCols(Tape& t, Var a, Var b) { return concatCols(t, std::vector<Var>{a, b}); }

inline Var concatRows(Tape& t, const std::vector<Var>& parts) {
  require(!parts.empty(), ErrorCode::InvalidInput, "concatRows of nothing");
  const Eigen::Index cols = t.val(parts[0]).cols();
  Eigen::Index rows = 0;
  bool needs = false;
  for (Var p : parts) {
    require(t.val(p).cols() == cols, ErrorCode::ShapeError, "concatRows col mismatch");
    rows += t.val(p).rows();
    needs = needs || t.needsGrad(p);
  }
  Mat y(rows, cols);
  Eigen::Index off = 0;
  for (Var p : parts) {
    y.middleRows(off, t.val(p).rows()) = t.val(p);
    off += t.val(p).rows();
  }
  const int id = t.alloc(std::move(y), needs);
  if (needs)
    t.setBack(id, [parts, id](Tape& t) {
      const Mat& g = t.gradRef(id);
      Eigen::Index off = 0;
      for (Var p : parts) {
        const Eigen::Index r = t.val(p).rows();
        if (t.needsGrad(p)) t.grad(p) += g.middleRows(off, r);
        off += r;
      }
    });
  return Var{id};
}

inline Var sliceRows(Tape& t, Var a, int r0, int n) {
  require(r0 >= 0 && n >= 1 && r0 + n <= t.val(a).rows(), ErrorCode::ShapeError,
          "sliceRows out of range");
  Mat y = t.val(a).middleRows(r0, n);
  const int id = t.alloc(std::move(y), t.needsGrad(a));
  if (t.needsGrad(Var{id}))
    t.setBack(id, [a, r0, n, id](Tape& t) {
      t.grad(a).middleRows(r0, n) += t.gradRef(id);
    });
  return Var{id};
}

inline Var sliceCols(Tape& t, Var a, int c0, int n) {
  require(c0 >= 0 && n >= 1 && c0 + n <= t.val(a).cols(), ErrorCode::ShapeError,
          "sliceCols out of range");
  Mat y = t.val(a).middleCols(c0, n);
  const int id = t.alloc(std::move(y), t.needsGrad(a));
  if (t.needsGrad(Var{id}))
    t.setBack(id, [a, c0, n, id](Tape& t) {
      t.grad(a).middleCols(c0, n) += t.gradRef(id);
    });
  return Var{id};
}

// Stops gradient flow; value is shared.
inline Var detach(Tape& t, Var a) { return t.constant(t.val(a)); }

inline Var dropout(Tape& t, Var a, float rate, std::mt19937& rng, bool train) {
  if (!train || rate <= 0.0f) return a;
  require(rate < 1.0f, ErrorCode::InvalidConfig, "dropout rate must be < 1");
  const float keep = 1.0f - rate;
  std::uniform_real_distribution<float> uni(0.0f, 1.0f);
  Mat mask(t.val(a).rows(), t.val(a).cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i)
    mask.data()[i] = uni(rng) < rate ? 0.0f : 1.0f / keep;
  Var m = t.constant(std::move(mask));
  return mul(t, a, m);
}

// 1-D convolution over time (rows), via an explicit im2col patch matrix.
// x: [T x Cin], w: [k*Cin x Cout] (tap-major), bias: [1 x Cout] optional.
// causal pads only on the left; otherwise zero same-padding.
inline Var conv1d(Tape& t, Var x, Var w, Var bias, int kernel, int dilation = 1,
                  bool causal = false) {
  const Mat& xv = t.val(x);
  const int T = static_cast<int>(xv.rows());
  const int cin = static_cast<int>(xv.cols());
  require(t.val(w).rows() == static_cast<Eigen::Index>(kernel) * cin, ErrorCode::ShapeError,
          "conv1d weight rows != kernel*Cin");
  const int pad_left = causal ? (kernel - 1) : (kernel - 1) / 2;

  Mat patches = Mat::Zero(T, static_cast<Eigen::Index>(kernel) * cin);
  for (int j = 0; j < kernel; ++j) {
    const int off = (j - pad_left) * dilation;
    const int r0 = std::max(0, -off);
    const int r1 = std::min(T, T - off);
    if (r1 > r0)
      patches.block(r0, static_cast<Eigen::Index>(j) * cin, r1 - r0, cin) =
          xv.middleRows(r0 + off, r1 - r0);
  }

  Mat y = patches * t.val(w);
  if (bias.valid()) y.rowwise() += t.val(bias).row(0);

  const bool needs = t.needsGrad(x) || t.needsGrad(w) || (bias.valid() && t.needsGrad(bias));
  const int id = t.alloc(std::move(y), needs);
  if (needs) {
    auto patches_ptr = std::make_shared<Mat>(std::move(patches));
    t.setBack(id, [x, w, bias, kernel, dilation, pad_left, cin, T, patches_ptr, id](Tape& t) {
      const Mat& g = t.gradRef(id);
      if (t.needsGrad(w)) t.grad(w).noalias() += patches_ptr->transpose() * g;
      if (bias.valid() && t.needsGrad(bias)) t.grad(bias).row(0) += g.colwise().sum();
      if (t.needsGrad(x)) {
        Mat gp = g * t.val(w).transpose();  // [T x k*Cin]
        Mat& gx = t.grad(x);
        for (int j = 0; j < kernel; ++j) {
          const int off = (j - pad_left) * dilation;
          const int r0 = std::max(0, -off);
          const int r1 = std::min(T, T - off);
          if (r1 > r0)
            gx.middleRows(r0 + off, r1 - r0) +=
                gp.block(r0, static_cast<Eigen::Index>(j) * cin, r1 - r0, cin);
        }
      }
    });
  }
  return Var{id};
}

// Transposed 1-D convolution for learnable upsampling. x: [T x Cin],
// w: [k*Cin x Cout] with k = 2*stride, output [T*stride x Cout].
inline Var transposedConv1d(Tape& t, Var x, Var w, Var bias, int stride) {
  const Mat& xv = t.val(x);
  const int T = static_cast<int>(xv.rows());
  const int cin = static_cast<int>(xv.cols());
  const int kernel = 2 * stride;
  require(t.val(w).rows() == static_cast<Eigen::Index>(kernel) * cin, ErrorCode::ShapeError,
          "transposedConv1d weight rows != 2*stride*Cin");
  const int cout = static_cast<int>(t.val(w).cols());
  const int out_len = T * stride;
  const int pad = stride / 2;

  Mat y = Mat::Zero(out_len, cout);
  for (int tap = 0; tap < kernel; ++tap) {
    const Mat part = xv * t.val(w).middleRows(static_cast<Eigen::Index>(tap) * cin, cin);
    for (int j = 0; j < T; ++j) {
      const int o = j * stride - pad + tap;
      if (o >= 0 && o < out_len) y.row(o) += part.row(j);
    }
  }
  if (bias.valid()) y.rowwise() += t.val(bias).row(0);

  const bool needs = t.needsGrad(x) || t.needsGrad(w) || (bias.valid() && t.needsGrad(bias));
  const int id = t.alloc(std::move(y), needs);
  if (needs)
    t.setBack(id, [x, w, bias, stride, kernel, cin, T, out_len, id](Tape& t) {
      const Mat& g = t.gradRef(id);
      const int pad = stride / 2;
      if (bias.valid() && t.needsGrad(bias)) t.grad(bias).row(0) += g.colwise().sum();
      for (int tap = 0; tap < kernel; ++tap) {
        // gather the output rows this tap touched, aligned back to inputs
        Mat gslice = Mat::Zero(T, g.cols());
        for (int j = 0; j < T; ++j) {
          const int o = j * stride - pad + tap;
          if (o >= 0 && o < out_len) gslice.row(j) = g.row(o);
        }
        if (t.needsGrad(w))
          t.grad(w).middleRows(static_cast<Eigen::Index>(tap) * cin, cin).noalias() +=
              t.val(x).transpose() * gslice;
        if (t.needsGrad(x))
          t.grad(x).noalias() +=
              gslice * t.val(w).middleRows(static_cast<Eigen::Index>(tap) * cin, cin).transpose();
      }
    });
  return Var{id};
}

// Max over {x[t], x[t+1]} per channel (width-2, stride-1, same length).
inline Var maxPool2Time(Tape& t, Var x) {
  const Mat& xv = t.val(x);
  const int T = static_cast<int>(xv.rows());
  Mat y(xv.rows(), xv.cols());
  auto pick = std::make_shared<std::vector<uint8_t>>(static_cast<size_t>(xv.size()));
  for (int r = 0; r < T; ++r)
    for (int c = 0; c < xv.cols(); ++c) {
      const float a = xv(r, c);
      const float b = r + 1 < T ? xv(r + 1, c) : a;
      const bool second = b > a;
      y(r, c) = second ? b : a;
      (*pick)[static_cast<size_t>(r) * xv.cols() + c] = second ? 1 : 0;
    }
  const int id = t.alloc(std::move(y), t.needsGrad(x));
  if (t.needsGrad(Var{id}))
    t.setBack(id, [x, pick, id](Tape& t) {
      const Mat& g = t.gradRef(id);
      Mat& gx = t.grad(x);
      for (Eigen::Index r = 0; r < g.rows(); ++r)
        for (Eigen::Index c = 0; c < g.cols(); ++c) {
          const int dst = (*pick)[static_cast<size_t>(r) * g.cols() + c] ? r + 1 : r;
          gx(dst, c) += g(r, c);
        }
    });
  return Var{id};
}

// Embedding lookup: rows of table picked by index. Gradients go straight to
// the table parameter.
inline Var embedRows(Tape& t, ParamSet& ps, ParamRef table, const std::vector<int>& idx) {
  Param& p = ps.at(table);
  Mat y(static_cast<Eigen::Index>(idx.size()), p.value.cols());
  for (size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] >= 0 && idx[i] < p.value.rows(), ErrorCode::ShapeError,
            "embedding index out of range");
    y.row(static_cast<Eigen::Index>(i)) = p.value.row(idx[i]);
  }
  const bool needs = t.gradEnabled() && p.trainable;
  const int id = t.alloc(std::move(y), needs);
  if (needs) {
    Param* pp = &p;
    auto indices = std::make_shared<std::vector<int>>(idx);
    t.setBack(id, [pp, indices, id](Tape& t) {
      const Mat& g = t.gradRef(id);
      if (pp->grad.size() == 0) pp->grad = Mat::Zero(pp->value.rows(), pp->value.cols());
      for (size_t i = 0; i < indices->size(); ++i)
        pp->grad.row((*indices)[i]) += g.row(static_cast<Eigen::Index>(i));
    });
  }
  return Var{id};
}

// Mean absolute error over the first n_valid rows (masked L1).
inline Var maskedMeanAbs(Tape& t, Var pred, const Mat& target, int n_valid) {
  const Mat& pv = t.val(pred);
  require(target.rows() >= n_valid && pv.rows() >= n_valid && target.cols() == pv.cols(),
          ErrorCode::ShapeError, "maskedMeanAbs shape mismatch");
  require(n_valid >= 1, ErrorCode::ShapeError, "maskedMeanAbs needs at least one valid row");
  const float denom = static_cast<float>(n_valid) * static_cast<float>(target.cols());
  Mat diff = pv.topRows(n_valid) - target.topRows(n_valid);
  Mat y(1, 1);
  y(0, 0) = diff.array().abs().sum() / denom;
  const int id = t.alloc(std::move(y), t.needsGrad(pred));
  if (t.needsGrad(Var{id})) {
    auto dptr = std::make_shared<Mat>(std::move(diff));
    t.setBack(id, [pred, dptr, n_valid, denom, id](Tape& t) {
      const float g = t.gradRef(id)(0, 0) / denom;
      Mat& gp = t.grad(pred);
      for (Eigen::Index r = 0; r < n_valid; ++r)
        for (Eigen::Index c = 0; c < dptr->cols(); ++c) {
          const float d = (*dptr)(r, c);
          gp(r, c) += d > 0.0f ? g : (d < 0.0f ? -g : 0.0f);
        }
    });
  }
  return Var{id};
}

// Mean softmax cross-entropy of logits rows against integer targets.
inline Var crossEntropyRows(Tape& t, Var logits, const std::vector<int>& targets) {
  const Mat& x = t.val(logits);
  require(static_cast<size_t>(x.rows()) == targets.size(), ErrorCode::ShapeError,
          "crossEntropyRows target count mismatch");
  const int T = static_cast<int>(x.rows());
  auto probs = std::make_shared<Mat>(x.rows(), x.cols());
  double loss = 0.0;
  for (int r = 0; r < T; ++r) {
    require(targets[r] >= 0 && targets[r] < x.cols(), ErrorCode::ShapeError,
            "crossEntropyRows target out of range");
    const float mx = x.row(r).maxCoeff();
    Eigen::ArrayXf e = (x.row(r).array() - mx).exp();
    const float z = e.sum();
    probs->row(r) = (e / z).matrix();
    loss -= std::log(std::max((*probs)(r, targets[r]), 1e-30f));
  }
  Mat y(1, 1);
  y(0, 0) = static_cast<float>(loss / T);
  const int id = t.alloc(std::move(y), t.needsGrad(logits));
  if (t.needsGrad(Var{id})) {
    auto tgt = std::make_shared<std::vector<int>>(targets);
    t.setBack(id, [logits, probs, tgt, T, id](Tape& t) {
      const float g = t.gradRef(id)(0, 0) / static_cast<float>(T);
      Mat delta = *probs;
      for (int r = 0; r < T; ++r) delta(r, (*tgt)[r]) -= 1.0f;
      t.grad(logits) += delta * g;
    });
  }
  return Var{id};
}

}  // namespace tacovc::nn
