#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "sqog/mlp.hpp"

using namespace sqog;

namespace {

// Scalar forward pass straight from the parameter layout.
std::vector<double> naive_forward(const MlpSpec& spec, const ParamVector& p, std::vector<double> x) {
  std::size_t off = 0;
  for (std::size_t l = 0; l < spec.n_layers(); ++l) {
    const std::size_t in = spec.layer_sizes[l], out = spec.layer_sizes[l + 1];
    std::vector<double> y(out);
    for (std::size_t o = 0; o < out; ++o) {
      double z = p.values[static_cast<Eigen::Index>(off + in * out + o)];
      for (std::size_t i = 0; i < in; ++i) z += p.values[static_cast<Eigen::Index>(off + i * out + o)] * x[i];
      if (l + 1 < spec.n_layers()) {
        y[o] = z > 0.0 ? z : 0.0;
      } else if (spec.output == OutputKind::TanhBox) {
        y[o] = 0.5 * (spec.box_high[o] + spec.box_low[o]) + 0.5 * (spec.box_high[o] - spec.box_low[o]) * std::tanh(z);
      } else {
        y[o] = z;
      }
    }
    off += out * (in + 1);
    x = std::move(y);
  }
  return x;
}

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(rng, -1.0, 1.0);
  return m;
}

// Loss L = sum(weights .* f(x)).
double weighted_output(const MlpSpec& spec, const ParamVector& p, const Matrix& x, const Matrix& weights) {
  return forward(spec, p, x).cwiseProduct(weights).sum();
}

}  // namespace

TEST(MlpSpec, ParamCountAndValidation) {
  const MlpSpec c = MlpSpec::critic(3, 8, 0);
  EXPECT_EQ(c.n_params(), 8u * 4 + 8 * 9 + 1 * 9);
  EXPECT_EQ(init_params(c).size(), c.n_params());
  MlpSpec flat;
  flat.layer_sizes = {3, 1};
  EXPECT_THROW(flat.validate(), InvalidArgument);
  EXPECT_THROW(MlpSpec::actor(2, 4, {1.0}, {1.0}, 0).validate(), InvalidArgument);
}

TEST(InitParams, FanInBoundsAndSeed) {
  const MlpSpec spec = MlpSpec::critic(4, 16, 3);
  const ParamVector p = init_params(spec);
  const std::size_t first = 16 * 5;
  for (std::size_t i = 0; i < first; ++i) EXPECT_LE(std::abs(p.values[static_cast<Eigen::Index>(i)]), 0.5);
  for (std::size_t i = first; i < p.size(); ++i) EXPECT_LE(std::abs(p.values[static_cast<Eigen::Index>(i)]), 0.25);
  EXPECT_EQ(init_params(spec), p);
  MlpSpec other = spec;
  other.init_seed = 4;
  EXPECT_FALSE(init_params(other) == p);
}

TEST(Forward, MatchesNaiveLoops) {
  Rng rng(1);
  for (const MlpSpec& spec : {MlpSpec::critic(3, 7, 1), MlpSpec::actor(2, 5, {-2.0, 0.0}, {2.0, 1.0}, 2)}) {
    const ParamVector p = init_params(spec);
    const Matrix x = random_matrix(static_cast<Eigen::Index>(spec.input_dim()), 9, rng);
    const Matrix y = forward(spec, p, x);
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const auto expect = naive_forward(spec, p, std::vector<double>(x.col(c).data(), x.col(c).data() + x.rows()));
      for (std::size_t o = 0; o < expect.size(); ++o) EXPECT_NEAR(y(static_cast<Eigen::Index>(o), c), expect[o], 1e-12);
    }
  }
}

TEST(Forward, BatchingIsConsistent) {
  Rng rng(2);
  const MlpSpec spec = MlpSpec::critic(4, 16, 5);
  const ParamVector p = init_params(spec);
  const Matrix x = random_matrix(4, 32, rng);
  const Matrix batch = forward(spec, p, x);
  for (Eigen::Index c = 0; c < x.cols(); ++c) EXPECT_NEAR(forward(spec, p, Matrix(x.col(c)))(0, 0), batch(0, c), 1e-13);
}

TEST(Forward, TanhBoxStaysInBox) {
  const MlpSpec spec = MlpSpec::actor(1, 4, {-2.0}, {2.0}, 0);
  ParamVector p = init_params(spec);
  p.values *= 100.0;
  Matrix x(1, 3);
  x << -50.0, 0.0, 50.0;
  const Matrix y = forward(spec, p, x);
  EXPECT_LE(y.cwiseAbs().maxCoeff(), 2.0);
  EXPECT_THROW(forward(spec, p, Matrix(2, 1)), InvalidArgument);
  EXPECT_THROW(forward(spec, ParamVector{ColVector::Zero(3)}, x), InvalidArgument);
}

TEST(Backward, FiniteDifferencesParamsAndInput) {
  Rng rng(3);
  const double h = 1e-5;
  for (const MlpSpec& spec : {MlpSpec::critic(3, 6, 7), MlpSpec::actor(2, 6, {-1.0, -3.0}, {1.0, 3.0}, 8)}) {
    const ParamVector p = init_params(spec);
    const Matrix x = random_matrix(static_cast<Eigen::Index>(spec.input_dim()), 5, rng);
    const Matrix w = random_matrix(static_cast<Eigen::Index>(spec.output_dim()), 5, rng);
    const Gradients g = backward(spec, p, x, w);
    for (std::size_t i = 0; i < p.size(); ++i) {
      ParamVector plus = p, minus = p;
      plus.values[static_cast<Eigen::Index>(i)] += h;
      minus.values[static_cast<Eigen::Index>(i)] -= h;
      const double fd = (weighted_output(spec, plus, x, w) - weighted_output(spec, minus, x, w)) / (2 * h);
      EXPECT_NEAR(g.params.values[static_cast<Eigen::Index>(i)], fd, 1e-6) << "param " << i;
    }
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      Matrix plus = x, minus = x;
      plus.data()[i] += h;
      minus.data()[i] -= h;
      const double fd = (weighted_output(spec, p, plus, w) - weighted_output(spec, p, minus, w)) / (2 * h);
      EXPECT_NEAR(g.input.data()[i], fd, 1e-6) << "input " << i;
    }
  }
}

TEST(Adam, FirstTwoStepsClosedForm) {
  ParamVector p{ColVector(2)};
  p.values << 1.0, -1.0;
  AdamState st = AdamState::zeros(2);
  ParamVector g{ColVector(2)};
  g.values << 0.5, -2.0;
  adam_step(p, g, st, 0.1);
  // Step 1: mhat = g, vhat = g^2, update = lr g / (|g| + eps).
  EXPECT_NEAR(p.values[0], 1.0 - 0.1 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_NEAR(p.values[1], -1.0 + 0.1 * 2.0 / (2.0 + 1e-8), 1e-15);
  ParamVector g2{ColVector(2)};
  g2.values << 1.0, 0.0;
  const double before = p.values[0];
  adam_step(p, g2, st, 0.1);
  const double m = 0.9 * 0.1 * 0.5 + 0.1 * 1.0;
  const double v = 0.999 * 0.001 * 0.25 + 0.001 * 1.0;
  const double mhat = m / (1 - 0.81), vhat = v / (1 - 0.999 * 0.999);
  EXPECT_NEAR(p.values[0], before - 0.1 * mhat / (std::sqrt(vhat) + 1e-8), 1e-14);
  EXPECT_EQ(st.step, 2u);
}

TEST(Adam, RejectsNonFinite) {
  ParamVector p{ColVector::Zero(3)};
  AdamState st = AdamState::zeros(3);
  ParamVector g{ColVector::Zero(3)};
  g.values[1] = std::nan("");
  EXPECT_THROW(adam_step(p, g, st, 0.1), NumericError);
  EXPECT_EQ(st.step, 0u);
}

TEST(SoftUpdate, Interpolates) {
  ParamVector t{ColVector::Constant(4, 1.0)}, o{ColVector::Constant(4, 3.0)};
  soft_update(t, o, 0.25);
  for (Eigen::Index i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(t.values[i], 1.5);
  soft_update(t, o, 1.0);
  EXPECT_EQ(t, o);
  EXPECT_THROW(soft_update(t, o, 0.0), InvalidArgument);
}

TEST(Serialization, RoundTripIsBitExact) {
  const MlpSpec spec = MlpSpec::actor(3, 10, {-2.0}, {2.0}, 42);
  ParamVector p = init_params(spec);
  p.values[0] = 1.0 / 3.0;
  p.values[1] = -0.0;
  std::stringstream ss;
  write_mlp(ss, "actor", spec, p);
  LineReader reader(ss);
  const auto [spec2, p2] = read_mlp(reader, "actor");
  EXPECT_EQ(spec2, spec);
  EXPECT_EQ(p2, p);
  EXPECT_TRUE(std::signbit(p2.values[1]));
}

TEST(Serialization, ReportsLine) {
  const MlpSpec spec = MlpSpec::critic(2, 3, 0);
  std::stringstream ss;
  write_mlp(ss, "critic", spec, init_params(spec));
  std::string text = ss.str();
  // Five header lines, so the third parameter sits on line 8.
  std::size_t pos = 0;
  for (int i = 0; i < 7; ++i) pos = text.find('\n', pos) + 1;
  text.insert(pos, "x");
  std::istringstream in(text);
  LineReader reader(in);
  try {
    read_mlp(reader, "critic");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 8u);
  }
  std::istringstream wrong(ss.str());
  LineReader r2(wrong);
  EXPECT_THROW(read_mlp(r2, "actor"), ParseError);
}
