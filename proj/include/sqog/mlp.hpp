#pragma once

// Small multilayer perceptrons with hand-written reverse mode, the Adam
// optimizer, Polyak averaging, and a plain-text parameter format.
//
// Batches are column-major: one column per sample.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sqog/error.hpp"
#include "sqog/io.hpp"
#include "sqog/rng.hpp"

namespace sqog {

using Matrix = Eigen::MatrixXd;
using ColVector = Eigen::VectorXd;

enum class OutputKind { Identity, TanhBox };

struct MlpSpec {
  /// input, hidden..., output
  std::vector<std::size_t> layer_sizes;
  OutputKind output = OutputKind::Identity;
  /// TanhBox only: output = mid + half * tanh(z), per output unit.
  std::vector<double> box_low;
  std::vector<double> box_high;
  std::uint64_t init_seed = 0;

  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t output_dim() const { return layer_sizes.back(); }
  std::size_t n_layers() const { return layer_sizes.size() - 1; }

  std::size_t n_params() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) n += layer_sizes[l + 1] * (layer_sizes[l] + 1);
    return n;
  }

  void validate() const {
    if (layer_sizes.size() < 3) throw InvalidArgument("MlpSpec: need at least one hidden layer");
    for (std::size_t s : layer_sizes)
      if (s == 0) throw InvalidArgument("MlpSpec: zero-width layer");
    if (output == OutputKind::TanhBox) {
      if (box_low.size() != output_dim() || box_high.size() != output_dim())
        throw InvalidArgument("MlpSpec: box bounds must match the output width");
      for (std::size_t i = 0; i < box_low.size(); ++i)
        if (!(box_low[i] < box_high[i])) throw InvalidArgument("MlpSpec: empty output box");
    }
  }

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;

  static MlpSpec critic(std::size_t input_dim, std::size_t hidden, std::uint64_t seed) {
    return {{input_dim, hidden, hidden, 1}, OutputKind::Identity, {}, {}, seed};
  }
  static MlpSpec actor(std::size_t state_dim, std::size_t hidden, std::vector<double> low, std::vector<double> high,
                       std::uint64_t seed) {
    const std::size_t action_dim = low.size();
    return {{state_dim, hidden, hidden, action_dim}, OutputKind::TanhBox, std::move(low), std::move(high), seed};
  }
};

/// Flat parameters. Layer l stores W_l (out x in, column-major) then b_l.
struct ParamVector {
  ColVector values;

  std::size_t size() const { return static_cast<std::size_t>(values.size()); }
  bool all_finite() const { return values.allFinite(); }
  friend bool operator==(const ParamVector& a, const ParamVector& b) {
    return a.values.size() == b.values.size() && a.values == b.values;
  }
};

namespace detail {

struct LayerView {
  Eigen::Map<const Matrix> w;
  Eigen::Map<const ColVector> b;
};

inline LayerView layer(const MlpSpec& spec, const ParamVector& p, std::size_t l) {
  std::size_t off = 0;
  for (std::size_t k = 0; k < l; ++k) off += spec.layer_sizes[k + 1] * (spec.layer_sizes[k] + 1);
  const auto in = static_cast<Eigen::Index>(spec.layer_sizes[l]);
  const auto out = static_cast<Eigen::Index>(spec.layer_sizes[l + 1]);
  const double* base = p.values.data() + off;
  return {Eigen::Map<const Matrix>(base, out, in), Eigen::Map<const ColVector>(base + out * in, out)};
}

}  // namespace detail

/// Fan-in uniform init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
inline ParamVector init_params(const MlpSpec& spec) {
  spec.validate();
  Rng rng(spec.init_seed);
  ParamVector p{ColVector(static_cast<Eigen::Index>(spec.n_params()))};
  Eigen::Index off = 0;
  for (std::size_t l = 0; l < spec.n_layers(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(spec.layer_sizes[l]));
    const auto count = static_cast<Eigen::Index>(spec.layer_sizes[l + 1] * (spec.layer_sizes[l] + 1));
    for (Eigen::Index i = 0; i < count; ++i) p.values[off + i] = uniform(rng, -bound, bound);
    off += count;
  }
  return p;
}

/// Pre-activations and activations of every layer, kept for the backward pass.
struct ForwardCache {
  std::vector<Matrix> pre;  // z_l, one per layer
  std::vector<Matrix> act;  // a_0 = input, a_l = f(z_l)
};

inline void check_params(const MlpSpec& spec, const ParamVector& p) {
  if (p.size() != spec.n_params())
    throw InvalidArgument("parameter vector has " + std::to_string(p.size()) + " entries, spec needs " +
                          std::to_string(spec.n_params()));
}

inline Matrix forward(const MlpSpec& spec, const ParamVector& params, const Matrix& input, ForwardCache* cache) {
  check_params(spec, params);
  if (static_cast<std::size_t>(input.rows()) != spec.input_dim())
    throw InvalidArgument("forward: input has " + std::to_string(input.rows()) + " rows, expected " +
                          std::to_string(spec.input_dim()));
  if (cache) {
    cache->pre.clear();
    cache->act.clear();
    cache->act.push_back(input);
  }
  Matrix a = input;
  const std::size_t L = spec.n_layers();
  for (std::size_t l = 0; l < L; ++l) {
    const auto lv = detail::layer(spec, params, l);
    Matrix z = lv.w * a;
    z.colwise() += lv.b;
    if (l + 1 < L) {
      a = z.cwiseMax(0.0);
    } else if (spec.output == OutputKind::TanhBox) {
      a = z.array().tanh().matrix();
      for (Eigen::Index r = 0; r < a.rows(); ++r) {
        const double mid = 0.5 * (spec.box_high[r] + spec.box_low[r]);
        const double half = 0.5 * (spec.box_high[r] - spec.box_low[r]);
        a.row(r) = (a.row(r).array() * half + mid).matrix();
      }
    } else {
      a = z;
    }
    if (cache) {
      cache->pre.push_back(std::move(z));
      cache->act.push_back(a);
    }
  }
  return a;
}

inline Matrix forward(const MlpSpec& spec, const ParamVector& params, const Matrix& input) {
  return forward(spec, params, input, nullptr);
}

struct Gradients {
  ParamVector params;
  Matrix input;
};

/// Reverse pass for the scalar loss whose derivative with respect to the
/// network output is `upstream` (same shape as the output batch).
inline Gradients backward(const MlpSpec& spec, const ParamVector& params, const ForwardCache& cache,
                          const Matrix& upstream) {
  const std::size_t L = spec.n_layers();
  if (cache.pre.size() != L) throw InvalidArgument("backward: cache does not match the spec");
  const Matrix& out = cache.act.back();
  if (upstream.rows() != out.rows() || upstream.cols() != out.cols())
    throw InvalidArgument("backward: upstream gradient shape mismatch");

  Gradients g{ParamVector{ColVector::Zero(static_cast<Eigen::Index>(spec.n_params()))}, Matrix()};
  Matrix delta = upstream;
  if (spec.output == OutputKind::TanhBox) {
    const Matrix t = cache.pre.back().array().tanh().matrix();
    for (Eigen::Index r = 0; r < delta.rows(); ++r) {
      const double half = 0.5 * (spec.box_high[r] - spec.box_low[r]);
      delta.row(r) = (delta.row(r).array() * half * (1.0 - t.row(r).array().square())).matrix();
    }
  }
  std::vector<Eigen::Index> offsets(L + 1, 0);
  for (std::size_t l = 0; l < L; ++l)
    offsets[l + 1] = offsets[l] + static_cast<Eigen::Index>(spec.layer_sizes[l + 1] * (spec.layer_sizes[l] + 1));

  for (std::size_t l = L; l-- > 0;) {
    const auto lv = detail::layer(spec, params, l);
    const auto in = lv.w.cols();
    const auto outn = lv.w.rows();
    Eigen::Map<Matrix> gw(g.params.values.data() + offsets[l], outn, in);
    Eigen::Map<ColVector> gb(g.params.values.data() + offsets[l] + outn * in, outn);
    gw.noalias() = delta * cache.act[l].transpose();
    gb = delta.rowwise().sum();
    Matrix prev = lv.w.transpose() * delta;
    if (l > 0) prev.array() *= (cache.pre[l - 1].array() > 0.0).cast<double>();
    delta = std::move(prev);
  }
  g.input = std::move(delta);
  return g;
}

/// Convenience overload that runs its own forward pass.
inline Gradients backward(const MlpSpec& spec, const ParamVector& params, const Matrix& input, const Matrix& upstream) {
  ForwardCache cache;
  forward(spec, params, input, &cache);
  return backward(spec, params, cache, upstream);
}

// ---------------------------------------------------------------------------
// Optimizer and target averaging
// ---------------------------------------------------------------------------

struct AdamState {
  ColVector m;
  ColVector v;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState zeros(std::size_t n) {
    return {ColVector::Zero(static_cast<Eigen::Index>(n)), ColVector::Zero(static_cast<Eigen::Index>(n))};
  }
};

/// Bias-corrected Adam update in place.
inline void adam_step(ParamVector& params, const ParamVector& grad, AdamState& state, double lr) {
  if (grad.size() != params.size() || static_cast<std::size_t>(state.m.size()) != params.size())
    throw InvalidArgument("adam_step: length mismatch");
  if (!grad.all_finite()) {
    Eigen::Index bad = 0;
    for (Eigen::Index i = 0; i < grad.values.size(); ++i)
      if (!std::isfinite(grad.values[i])) {
        bad = i;
        break;
      }
    throw NumericError("adam_step: non-finite gradient at coordinate " + std::to_string(bad) + " (value " +
                       std::to_string(grad.values[bad]) + ", step " + std::to_string(state.step) + ")");
  }
  ++state.step;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad.values;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad.values.cwiseAbs2();
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  params.values.array() -= lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + state.eps);
}

/// target <- (1 - tau) target + tau online.
inline void soft_update(ParamVector& target, const ParamVector& online, double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw InvalidArgument("soft_update: tau must lie in (0, 1]");
  if (target.size() != online.size()) throw InvalidArgument("soft_update: length mismatch");
  target.values = (1.0 - tau) * target.values + tau * online.values;
}

// ---------------------------------------------------------------------------
// Text serialization
// ---------------------------------------------------------------------------

inline void write_mlp(std::ostream& out, const std::string& name, const MlpSpec& spec, const ParamVector& p) {
  out << "net " << name << "\nlayers";
  for (std::size_t s : spec.layer_sizes) out << ' ' << s;
  out << "\noutput " << (spec.output == OutputKind::TanhBox ? "tanh-box" : "identity");
  for (double x : spec.box_low) out << ' ' << format_real(x);
  for (double x : spec.box_high) out << ' ' << format_real(x);
  out << "\ninit_seed " << spec.init_seed << "\nparams " << p.size() << '\n';
  for (Eigen::Index i = 0; i < p.values.size(); ++i) out << format_real(p.values[i]) << '\n';
}

/// Line-oriented reader shared by the checkpoint parsers.
class LineReader {
 public:
  explicit LineReader(std::istream& in) : in_(in) {}

  std::istringstream next(const std::string& expected_key) {
    std::string line;
    if (!std::getline(in_, line)) throw ParseError(line_no_ + 1, "unexpected end of file, wanted " + expected_key);
    ++line_no_;
    std::istringstream fields(line);
    std::string key;
    fields >> key;
    if (key != expected_key) throw ParseError(line_no_, "expected '" + expected_key + "', found '" + key + "'");
    return fields;
  }

  double real() {
    std::string line;
    if (!std::getline(in_, line)) throw ParseError(line_no_ + 1, "unexpected end of file in parameter block");
    ++line_no_;
    char* end = nullptr;
    const double v = std::strtod(line.c_str(), &end);
    if (end == line.c_str() || *end != '\0') throw ParseError(line_no_, "not a real number: '" + line + "'");
    return v;
  }

  std::size_t line() const { return line_no_; }

 private:
  std::istream& in_;
  std::size_t line_no_ = 0;
};

inline std::pair<MlpSpec, ParamVector> read_mlp(LineReader& reader, const std::string& name) {
  {
    auto f = reader.next("net");
    std::string got;
    f >> got;
    if (got != name) throw ParseError(reader.line(), "expected network '" + name + "', found '" + got + "'");
  }
  MlpSpec spec;
  {
    auto f = reader.next("layers");
    std::size_t s;
    while (f >> s) spec.layer_sizes.push_back(s);
    if (spec.layer_sizes.size() < 3) throw ParseError(reader.line(), "network needs at least three layer sizes");
  }
  {
    auto f = reader.next("output");
    std::string kind;
    f >> kind;
    if (kind == "tanh-box") {
      spec.output = OutputKind::TanhBox;
      const std::size_t out = spec.layer_sizes.back();
      spec.box_low.resize(out);
      spec.box_high.resize(out);
      for (auto& x : spec.box_low) f >> x;
      for (auto& x : spec.box_high) f >> x;
      if (!f) throw ParseError(reader.line(), "bad output box");
    } else if (kind != "identity") {
      throw ParseError(reader.line(), "unknown output kind '" + kind + "'");
    }
  }
  reader.next("init_seed") >> spec.init_seed;
  std::size_t n = 0;
  reader.next("params") >> n;
  if (n != spec.n_params()) throw ParseError(reader.line(), "parameter count does not match the layer sizes");
  ParamVector p{ColVector(static_cast<Eigen::Index>(n))};
  for (std::size_t i = 0; i < n; ++i) p.values[static_cast<Eigen::Index>(i)] = reader.real();
  return {spec, p};
}

}  // namespace sqog
