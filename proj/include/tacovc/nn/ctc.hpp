#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "tacovc/nn/tape.hpp"

namespace tacovc::nn {

// CTC loss over a [T x C] logits matrix, log-domain forward/backward.
// The blank class is a caller choice (last class by convention here).

inline constexpr double kLogZero = -std::numeric_limits<double>::infinity();

namespace detail {
inline double logAdd(double a, double b) {
  if (a == kLogZero) return b;
  if (b == kLogZero) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}
}  // namespace detail

// A label sequence is reachable only if there are enough frames for every
// label plus the forced blanks between adjacent repeats.
inline bool ctcFeasible(int n_frames, const std::vector<int>& labels) {
  if (labels.empty()) return false;
  int repeats = 0;
  for (size_t i = 1; i < labels.size(); ++i)
    if (labels[i] == labels[i - 1]) ++repeats;
  return n_frames >= static_cast<int>(labels.size()) + repeats;
}

inline Var ctcLoss(Tape& t, Var logits, const std::vector<int>& labels, int blank) {
  const Mat& x = t.val(logits);
  const int T = static_cast<int>(x.rows());
  const int C = static_cast<int>(x.cols());
  require(!labels.empty(), ErrorCode::InvalidInput, "CTC needs a non-empty label sequence");
  for (int l : labels)
    require(l >= 0 && l < C && l != blank, ErrorCode::InvalidInput, "CTC label out of range");
  require(ctcFeasible(T, labels), ErrorCode::CtcInfeasible,
          "transcript too long for " + std::to_string(T) + " frames");

  // log softmax rows
  Eigen::MatrixXd lp(T, C);
  Eigen::MatrixXd probs(T, C);
  for (int r = 0; r < T; ++r) {
    const float mx = x.row(r).maxCoeff();
    double z = 0.0;
    for (int k = 0; k < C; ++k) z += std::exp(static_cast<double>(x(r, k)) - mx);
    const double lz = std::log(z) + mx;
    for (int k = 0; k < C; ++k) {
      lp(r, k) = static_cast<double>(x(r, k)) - lz;
      probs(r, k) = std::exp(lp(r, k));
    }
  }

  const int L = static_cast<int>(labels.size());
  const int S = 2 * L + 1;
  auto lab = [&](int s) { return (s % 2 == 0) ? blank : labels[static_cast<size_t>(s / 2)]; };
  auto skipOk = [&](int s) {  // transition s-2 -> s
    return s >= 2 && lab(s) != blank && lab(s) != lab(s - 2);
  };

  Eigen::MatrixXd alpha = Eigen::MatrixXd::Constant(T, S, kLogZero);
  alpha(0, 0) = lp(0, lab(0));
  if (S > 1) alpha(0, 1) = lp(0, lab(1));
  for (int r = 1; r < T; ++r)
    for (int s = 0; s < S; ++s) {
      double a = alpha(r - 1, s);
      if (s >= 1) a = detail::logAdd(a, alpha(r - 1, s - 1));
      if (skipOk(s)) a = detail::logAdd(a, alpha(r - 1, s - 2));
      alpha(r, s) = a == kLogZero ? kLogZero : a + lp(r, lab(s));
    }

  double log_p = alpha(T - 1, S - 1);
  if (S > 1) log_p = detail::logAdd(log_p, alpha(T - 1, S - 2));
  require(log_p != kLogZero, ErrorCode::CtcInfeasible, "no feasible CTC alignment");

  Mat y(1, 1);
  y(0, 0) = static_cast<float>(-log_p);
  const int id = t.alloc(std::move(y), t.needsGrad(logits));

  if (t.needsGrad(Var{id})) {
    Eigen::MatrixXd beta = Eigen::MatrixXd::Constant(T, S, kLogZero);
    beta(T - 1, S - 1) = lp(T - 1, lab(S - 1));
    if (S > 1) beta(T - 1, S - 2) = lp(T - 1, lab(S - 2));
    for (int r = T - 2; r >= 0; --r)
      for (int s = 0; s < S; ++s) {
        double b = beta(r + 1, s);
        if (s + 1 < S) b = detail::logAdd(b, beta(r + 1, s + 1));
        if (s + 2 < S && skipOk(s + 2)) b = detail::logAdd(b, beta(r + 1, s + 2));
        beta(r, s) = b == kLogZero ? kLogZero : b + lp(r, lab(s));
      }

    // dL/dlogit = softmax - sum of state posteriors sharing that class
    auto grad = std::make_shared<Mat>(T, C);
    for (int r = 0; r < T; ++r) {
      Eigen::VectorXd post = Eigen::VectorXd::Zero(C);
      for (int s = 0; s < S; ++s) {
        const double num = alpha(r, s) + beta(r, s) - lp(r, lab(s)) - log_p;
        if (num != kLogZero) post(lab(s)) += std::exp(num);
      }
      for (int k = 0; k < C; ++k)
        (*grad)(r, k) = static_cast<float>(probs(r, k) - post(k));
    }
    t.setBack(id, [logits, grad, id](Tape& t) {
      t.grad(logits) += *grad * t.gradRef(id)(0, 0);
    });
  }
  return Var{id};
}

}  // namespace tacovc::nn
