#include <catch2/catch_amalgamated.hpp>

#include <functional>
#include <random>

#include "tacovc/nn/adam.hpp"
#include "tacovc/nn/ctc.hpp"
#include "tacovc/nn/layers.hpp"
#include "tacovc/nn/tape.hpp"

using namespace tacovc;
using namespace tacovc::nn;

namespace {

Mat randomMat(std::mt19937& rng, int r, int c, float scale = 1.0f) {
  std::normal_distribution<float> n(0.0f, scale);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

using Builder = std::function<Var(Tape&, std::vector<Var>&)>;

float evalScalar(const Builder& build, std::vector<Mat> inputs) {
  Tape t;
  std::vector<Var> vars;
  for (auto& m : inputs) vars.push_back(t.leaf(std::move(m)));
  return t.val(build(t, vars))(0, 0);
}

// Central-difference check of every input element against the tape gradient.
void gradCheck(const Builder& build, const std::vector<Mat>& inputs, float h = 2e-3f,
               float tol = 4e-3f) {
  Tape t;
  std::vector<Var> vars;
  for (const auto& m : inputs) vars.push_back(t.leaf(m));
  Var out = build(t, vars);
  REQUIRE(t.val(out).size() == 1);
  t.backward(out);

  for (size_t vi = 0; vi < inputs.size(); ++vi) {
    const Mat analytic = t.grad(vars[vi]);
    for (Eigen::Index i = 0; i < inputs[vi].size(); ++i) {
      std::vector<Mat> plus = inputs, minus = inputs;
      plus[vi].data()[i] += h;
      minus[vi].data()[i] -= h;
      const float numeric = (evalScalar(build, plus) - evalScalar(build, minus)) / (2.0f * h);
      const float got = analytic.data()[i];
      const float err = std::abs(numeric - got);
      const float scale = std::max({1.0f, std::abs(numeric), std::abs(got)});
      INFO("input " << vi << " element " << i << ": numeric=" << numeric << " analytic=" << got);
      REQUIRE(err <= tol * scale);
    }
  }
}

}  // namespace

TEST_CASE("gradients: elementwise and matmul chains") {
  std::mt19937 rng(11);
  const Mat a = randomMat(rng, 3, 4, 0.5f);
  const Mat b = randomMat(rng, 4, 2, 0.5f);
  const Mat c = randomMat(rng, 3, 2, 0.5f);
  const Mat target = randomMat(rng, 3, 2, 0.5f);

  gradCheck(
      [&](Tape& t, std::vector<Var>& v) {
        Var y = tanhOp(t, matmul(t, v[0], v[1]));
        y = add(t, mul(t, y, sigmoid(t, v[2])), v[2]);
        return maskedMeanAbs(t, y, target, 3);
      },
      {a, b, c});
}

TEST_CASE("gradients: softmax, slicing, concat, transpose, broadcast") {
  std::mt19937 rng(12);
  const Mat a = randomMat(rng, 4, 5, 0.8f);
  const Mat row = randomMat(rng, 1, 5, 0.8f);
  const Mat target = randomMat(rng, 2, 20, 0.5f);

  gradCheck(
      [&](Tape& t, std::vector<Var>& v) {
        Var s = softmaxRows(t, addRowBroadcast(t, v[0], v[1]));
        Var top = sliceRows(t, s, 0, 2);
        Var bot = sliceRows(t, s, 2, 2);
        Var y = concatCols(t, top, transposeOp(t, transposeOp(t, bot)));
        Var y2 = concatCols(t, y, concatRows(t, {sliceRows(t, y, 0, 1), sliceRows(t, y, 1, 1)}));
        return maskedMeanAbs(t, y2, target, 2);
      },
      {a, row});
}

TEST_CASE("gradients and values: conv1d same and causal") {
  std::mt19937 rng(13);
  const int T = 7, cin = 3, cout = 2;
  for (const bool causal : {false, true}) {
    for (const int kernel : {1, 2, 3}) {
      for (const int dilation : {1, 2}) {
        const Mat x = randomMat(rng, T, cin, 0.7f);
        const Mat w = randomMat(rng, kernel * cin, cout, 0.7f);
        const Mat bias = randomMat(rng, 1, cout, 0.3f);
        const Mat target = Mat::Zero(T, cout);

        // value against a naive loop
        Tape t;
        Var y = conv1d(t, t.constant(x), t.constant(w), t.constant(bias), kernel, dilation, causal);
        const int pad_left = causal ? kernel - 1 : (kernel - 1) / 2;
        for (int r = 0; r < T; ++r)
          for (int c = 0; c < cout; ++c) {
            float acc = bias(0, c);
            for (int j = 0; j < kernel; ++j) {
              const int src = r + (j - pad_left) * dilation;
              if (src < 0 || src >= T) continue;
              for (int ci = 0; ci < cin; ++ci) acc += x(src, ci) * w(j * cin + ci, c);
            }
            REQUIRE(t.val(y)(r, c) == Catch::Approx(acc).margin(1e-4));
          }

        gradCheck(
            [&](Tape& tp, std::vector<Var>& v) {
              Var out = conv1d(tp, v[0], v[1], v[2], kernel, dilation, causal);
              return maskedMeanAbs(tp, tanhOp(tp, out), target, T);
            },
            {x, w, bias});
      }
    }
  }
}

TEST_CASE("gradients and shape: transposed conv upsampling") {
  std::mt19937 rng(14);
  const int T = 5, cin = 2, cout = 3, stride = 4;
  const Mat x = randomMat(rng, T, cin, 0.7f);
  const Mat w = randomMat(rng, 2 * stride * cin, cout, 0.7f);
  const Mat bias = randomMat(rng, 1, cout, 0.3f);

  Tape t;
  Var y = transposedConv1d(t, t.constant(x), t.constant(w), t.constant(bias), stride);
  REQUIRE(t.val(y).rows() == T * stride);
  REQUIRE(t.val(y).cols() == cout);

  const Mat target = Mat::Zero(T * stride, cout);
  gradCheck(
      [&](Tape& tp, std::vector<Var>& v) {
        Var out = transposedConv1d(tp, v[0], v[1], v[2], stride);
        return maskedMeanAbs(tp, tanhOp(tp, out), target, T * stride);
      },
      {x, w, bias});
}

TEST_CASE("gradients: max pool width 2") {
  std::mt19937 rng(15);
  const Mat x = randomMat(rng, 6, 3);
  const Mat target = Mat::Zero(6, 3);
  Tape t;
  Var y = maxPool2Time(t, t.constant(x));
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 3; ++c)
      REQUIRE(t.val(y)(r, c) == std::max(x(r, c), x(std::min(r + 1, 5), c)));
  gradCheck(
      [&](Tape& tp, std::vector<Var>& v) {
        return maskedMeanAbs(tp, maxPool2Time(tp, v[0]), target, 6);
      },
      {x});
}

TEST_CASE("gradients: cross entropy rows") {
  std::mt19937 rng(16);
  const Mat logits = randomMat(rng, 5, 4);
  const std::vector<int> targets{0, 3, 1, 2, 2};
  gradCheck(
      [&](Tape& t, std::vector<Var>& v) { return crossEntropyRows(t, v[0], targets); },
      {logits});
}

TEST_CASE("gradients flow through GRU, highway, batchnorm and CBHG") {
  std::mt19937 rng(17);
  ParamSet ps;
  const int T = 5, in = 4;
  CbhgConfig cfg;
  cfg.in_dim = in;
  cfg.bank_k = 2;
  cfg.bank_ch = 3;
  cfg.proj_ch = 3;
  cfg.n_highway = 1;
  cfg.highway_dim = 4;
  cfg.gru_units = 3;
  Cbhg cbhg(ps, "cbhg", cfg, rng);

  const Mat x = randomMat(rng, T, in, 0.5f);
  const Mat target = Mat::Zero(T, cfg.outDim());
  std::mt19937 fwd_rng(3);

  auto loss_at = [&]() {
    Tape t;
    Ctx c{t, ps, /*train=*/true, &fwd_rng};
    Var y = cbhg(c, t.constant(x));
    return t.val(maskedMeanAbs(t, y, target, T))(0, 0);
  };

  ps.zeroGrads();
  {
    Tape t;
    Ctx c{t, ps, true, &fwd_rng};
    Var y = cbhg(c, t.constant(x));
    REQUIRE(t.val(y).rows() == T);
    REQUIRE(t.val(y).cols() == cfg.outDim());
    t.backward(maskedMeanAbs(t, y, target, T));
  }
  std::vector<Mat> saved_grads;
  for (auto& p : ps.items())
    saved_grads.push_back(p.grad.size() ? p.grad : Mat::Zero(p.value.rows(), p.value.cols()));

  std::mt19937 pick_rng(5);
  std::uniform_int_distribution<int> pickp(0, static_cast<int>(ps.items().size()) - 1);
  int checked = 0;
  while (checked < 12) {
    const size_t pidx = static_cast<size_t>(pickp(pick_rng));
    Param& p = ps.items()[pidx];
    if (!p.trainable || p.value.size() == 0) continue;
    std::uniform_int_distribution<int> picke(0, static_cast<int>(p.value.size()) - 1);
    const int e = picke(pick_rng);
    const float h = 2e-3f;
    const float orig = p.value.data()[e];
    p.value.data()[e] = orig + h;
    const float up = loss_at();
    p.value.data()[e] = orig - h;
    const float dn = loss_at();
    p.value.data()[e] = orig;

    const float numeric = (up - dn) / (2.0f * h);
    const float analytic = saved_grads[pidx].data()[e];
    const float scale = std::max({1.0f, std::abs(numeric), std::abs(analytic)});
    INFO(p.name << " elem " << e);
    REQUIRE(std::abs(numeric - analytic) <= 6e-3f * scale);
    ++checked;
  }
}

TEST_CASE("batchnorm normalizes the time axis identically in train and eval") {
  std::mt19937 rng(19);
  ParamSet ps;
  BatchNorm1d bn(ps, "bn", 3);
  Mat x = randomMat(rng, 50, 3);
  x.col(1).array() += 5.0f;  // offset to verify centering

  Tape t;
  std::mt19937 r2(1);
  Ctx c{t, ps, /*train=*/true, &r2};
  Var y = bn(c, t.constant(x));
  const Mat yv = t.val(y);
  for (int col = 0; col < 3; ++col) {
    CHECK(std::abs(yv.col(col).mean()) < 1e-4f);
    const float var = (yv.col(col).array() - yv.col(col).mean()).square().mean();
    CHECK(var == Catch::Approx(1.0f).margin(0.05));
  }

  // the eval path sees the exact same normalization
  Tape t2;
  Ctx ce{t2, ps, /*train=*/false, &r2};
  Var ye = bn(ce, t2.constant(x));
  CHECK(t2.val(ye) == yv);

  // single-frame input stays finite (variance zero hits the epsilon guard)
  Tape t3;
  Ctx c3{t3, ps, /*train=*/false, &r2};
  Var y1 = bn(c3, t3.constant(Mat::Ones(1, 3)));
  CHECK(t3.val(y1).allFinite());
}

TEST_CASE("adam minimizes a simple objective with linear lr decay") {
  std::mt19937 rng(20);
  ParamSet ps;
  ParamRef w = ps.add("w", randomMat(rng, 1, 6));
  const Mat target = randomMat(rng, 1, 6);
  Adam opt;
  LinearDecayLr lr{0.05f, 0.01f, 300};
  CHECK(lr.at(0) == 0.05f);
  CHECK(lr.at(300) == 0.01f);
  CHECK(lr.at(150) == Catch::Approx(0.03f));
  CHECK(lr.at(10000) == 0.01f);

  for (int step = 0; step < 400; ++step) {
    Tape t;
    Var diff = sub(t, t.param(ps, w), t.constant(target));
    Var loss = maskedMeanAbs(t, mul(t, diff, diff), Mat::Zero(1, 6), 1);
    t.backward(loss);
    opt.step(ps, lr.at(step));
  }
  CHECK((ps.at(w).value - target).cwiseAbs().maxCoeff() < 1e-2f);
}

namespace {

// Exhaustive CTC reference: sum path probabilities over all alignments whose
// collapse equals the label sequence.
double ctcBruteForce(const Mat& logits, const std::vector<int>& labels, int blank) {
  const int T = static_cast<int>(logits.rows());
  const int C = static_cast<int>(logits.cols());
  Eigen::MatrixXd probs(T, C);
  for (int r = 0; r < T; ++r) {
    const float mx = logits.row(r).maxCoeff();
    double z = 0.0;
    for (int k = 0; k < C; ++k) z += std::exp(static_cast<double>(logits(r, k)) - mx);
    for (int k = 0; k < C; ++k)
      probs(r, k) = std::exp(static_cast<double>(logits(r, k)) - mx) / z;
  }
  double total = 0.0;
  std::vector<int> path(static_cast<size_t>(T), 0);
  const long n_paths = static_cast<long>(std::pow(C, T));
  for (long code = 0; code < n_paths; ++code) {
    long rest = code;
    for (int r = 0; r < T; ++r) {
      path[static_cast<size_t>(r)] = static_cast<int>(rest % C);
      rest /= C;
    }
    std::vector<int> collapsed;
    for (int r = 0; r < T; ++r) {
      if (r > 0 && path[r] == path[r - 1]) continue;
      if (path[r] != blank) collapsed.push_back(path[r]);
    }
    if (collapsed != labels) continue;
    double p = 1.0;
    for (int r = 0; r < T; ++r) p *= probs(r, path[r]);
    total += p;
  }
  return -std::log(total);
}

}  // namespace

TEST_CASE("ctc loss matches exhaustive enumeration") {
  std::mt19937 rng(21);
  const int blank = 2;
  for (int trial = 0; trial < 4; ++trial) {
    const int T = 4 + trial % 2;
    const Mat logits = randomMat(rng, T, 3);
    for (const std::vector<int> labels :
         {std::vector<int>{0}, std::vector<int>{0, 1}, std::vector<int>{1, 1}}) {
      if (!ctcFeasible(T, labels)) continue;
      Tape t;
      Var loss = ctcLoss(t, t.constant(logits), labels, blank);
      const double expect = ctcBruteForce(logits, labels, blank);
      REQUIRE(t.val(loss)(0, 0) == Catch::Approx(expect).margin(1e-4));
    }
  }
}

TEST_CASE("ctc gradient matches finite differences and sums to zero per frame") {
  std::mt19937 rng(22);
  const Mat logits = randomMat(rng, 5, 4);
  const std::vector<int> labels{0, 2, 0};
  const int blank = 3;

  gradCheck(
      [&](Tape& t, std::vector<Var>& v) { return ctcLoss(t, v[0], labels, blank); },
      {logits}, 2e-3f, 6e-3f);

  Tape t;
  Var l = t.leaf(logits);
  t.backward(ctcLoss(t, l, labels, blank));
  const Mat g = t.grad(l);
  for (int r = 0; r < 5; ++r) REQUIRE(std::abs(g.row(r).sum()) < 1e-4f);
}

TEST_CASE("ctc feasibility rules") {
  CHECK(ctcFeasible(2, {0, 1}));
  CHECK_FALSE(ctcFeasible(1, {0, 1}));
  CHECK(ctcFeasible(3, {0, 0}));
  CHECK_FALSE(ctcFeasible(2, {0, 0}));
  CHECK_FALSE(ctcFeasible(3, {}));

  std::mt19937 rng(23);
  const Mat logits = randomMat(rng, 2, 3);
  Tape t;
  CHECK_THROWS_MATCHES(ctcLoss(t, t.constant(logits), {0, 0}, 2), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code() == ErrorCode::CtcInfeasible;
                       }));
}

TEST_CASE("dropout and detach behave") {
  std::mt19937 rng(24);
  Tape t;
  Var x = t.leaf(Mat::Ones(4, 4));
  std::mt19937 drop_rng(7);
  Var d = dropout(t, x, 0.5f, drop_rng, /*train=*/true);
  int zeros = 0;
  for (Eigen::Index i = 0; i < 16; ++i)
    if (t.val(d).data()[i] == 0.0f) ++zeros;
  CHECK(zeros > 0);
  CHECK(zeros < 16);

  Var nd = dropout(t, x, 0.5f, drop_rng, /*train=*/false);
  CHECK(nd.id == x.id);

  Var det = detach(t, x);
  CHECK_FALSE(t.needsGrad(det));
  CHECK(t.val(det) == t.val(x));
}
