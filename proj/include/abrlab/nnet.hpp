#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "abrlab/rng.hpp"
#include "abrlab/types.hpp"

namespace abrlab {

// Small dense MLP in float64 with hand-written backprop. The last layer is
// linear; callers softmax it. Sized for policy nets of a few hundred
// thousand parameters at most, so everything is plain loops.

enum class Activation { kTanh, kRelu };

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "relu") return Activation::kRelu;
  throw DataError("unknown activation '" + s + "'");
}

struct MlpParams {
  std::vector<int> dims;  // e.g. {150, 128, 64, 32, 21}
  Activation act = Activation::kTanh;
  // weights[l] is dims[l+1] x dims[l], row-major; biases[l] is dims[l+1].
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> biases;
  std::vector<double> baseline;  // linear value fit, dims[0] + 1 coefficients

  static MlpParams make(std::vector<int> dims, Activation act, Rng& rng) {
    MlpParams p;
    p.dims = std::move(dims);
    p.act = act;
    for (std::size_t l = 0; l + 1 < p.dims.size(); ++l) {
      const int fan_in = p.dims[l];
      const int fan_out = p.dims[l + 1];
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      std::vector<double> w(static_cast<std::size_t>(fan_in) * static_cast<std::size_t>(fan_out));
      for (auto& v : w) v = rng.uniform(-bound, bound);
      p.weights.push_back(std::move(w));
      p.biases.emplace_back(static_cast<std::size_t>(fan_out), 0.0);
    }
    p.baseline.assign(static_cast<std::size_t>(p.dims.front()) + 1, 0.0);
    return p;
  }

  static MlpParams zeros_like(const MlpParams& other) {
    MlpParams p;
    p.dims = other.dims;
    p.act = other.act;
    for (std::size_t l = 0; l < other.weights.size(); ++l) {
      p.weights.emplace_back(other.weights[l].size(), 0.0);
      p.biases.emplace_back(other.biases[l].size(), 0.0);
    }
    p.baseline.assign(other.baseline.size(), 0.0);
    return p;
  }

  int layer_count() const { return static_cast<int>(weights.size()); }
  int input_dim() const { return dims.front(); }
  int output_dim() const { return dims.back(); }

  // theta += scale * grad over the network weights (baseline untouched;
  // it is refit, not ascended).
  void axpy(double scale, const MlpParams& grad) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      for (std::size_t i = 0; i < weights[l].size(); ++i) weights[l][i] += scale * grad.weights[l][i];
      for (std::size_t i = 0; i < biases[l].size(); ++i) biases[l][i] += scale * grad.biases[l][i];
    }
  }

  bool finite() const {
    for (const auto& w : weights)
      for (double v : w)
        if (!std::isfinite(v)) return false;
    for (const auto& b : biases)
      for (double v : b)
        if (!std::isfinite(v)) return false;
    return true;
  }

  double max_abs() const {
    double m = 0.0;
    for (const auto& w : weights)
      for (double v : w) m = std::max(m, std::abs(v));
    for (const auto& b : biases)
      for (double v : b) m = std::max(m, std::abs(v));
    return m;
  }

  void save(const std::string& path) const;
  static MlpParams load(const std::string& path);

  friend bool operator==(const MlpParams&, const MlpParams&) = default;
};

// Forward pass keeping pre-activations for backprop.
struct MlpTrace {
  std::vector<std::vector<double>> acts;  // acts[0] = input, acts[L] = logits
  std::vector<double> probs;              // softmax of the logits
};

inline double apply_act(Activation a, double z) {
  return a == Activation::kTanh ? std::tanh(z) : (z > 0.0 ? z : 0.0);
}

inline double act_grad_from_output(Activation a, double h) {
  // Both activations' derivatives are expressible from the output.
  return a == Activation::kTanh ? 1.0 - h * h : (h > 0.0 ? 1.0 : 0.0);
}

inline MlpTrace mlp_forward(const MlpParams& p, std::span<const double> input) {
  if (static_cast<int>(input.size()) != p.input_dim())
    throw DataError("mlp_forward: input dimension mismatch");
  MlpTrace tr;
  tr.acts.resize(p.weights.size() + 1);
  tr.acts[0].assign(input.begin(), input.end());
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    const int in = p.dims[l];
    const int out = p.dims[l + 1];
    const bool last = l + 1 == p.weights.size();
    std::vector<double> h(static_cast<std::size_t>(out));
    for (int o = 0; o < out; ++o) {
      const double* row = p.weights[l].data() + static_cast<std::size_t>(o) * static_cast<std::size_t>(in);
      double z = p.biases[l][static_cast<std::size_t>(o)];
      for (int i = 0; i < in; ++i) z += row[i] * tr.acts[l][static_cast<std::size_t>(i)];
      h[static_cast<std::size_t>(o)] = last ? z : apply_act(p.act, z);
    }
    tr.acts[l + 1] = std::move(h);
  }
  const auto& logits = tr.acts.back();
  double mx = logits[0];
  for (double v : logits) {
    if (!std::isfinite(v)) throw DataError("mlp_forward: non-finite logits (weights corrupted)");
    mx = std::max(mx, v);
  }
  tr.probs.resize(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    tr.probs[i] = std::exp(logits[i] - mx);
    sum += tr.probs[i];
  }
  for (auto& v : tr.probs) v /= sum;
  return tr;
}

// Accumulate d(loss)/d(params) given d(loss)/d(logits) for one sample.
inline void mlp_backward(const MlpParams& p, const MlpTrace& tr, std::span<const double> dlogits,
                         MlpParams& grad) {
  std::vector<double> delta(dlogits.begin(), dlogits.end());
  for (int l = p.layer_count() - 1; l >= 0; --l) {
    const int in = p.dims[static_cast<std::size_t>(l)];
    const int out = p.dims[static_cast<std::size_t>(l) + 1];
    const auto& prev = tr.acts[static_cast<std::size_t>(l)];
    auto& gw = grad.weights[static_cast<std::size_t>(l)];
    auto& gb = grad.biases[static_cast<std::size_t>(l)];
    for (int o = 0; o < out; ++o) {
      const double d = delta[static_cast<std::size_t>(o)];
      gb[static_cast<std::size_t>(o)] += d;
      double* grow = gw.data() + static_cast<std::size_t>(o) * static_cast<std::size_t>(in);
      for (int i = 0; i < in; ++i) grow[i] += d * prev[static_cast<std::size_t>(i)];
    }
    if (l == 0) break;
    std::vector<double> next(static_cast<std::size_t>(in), 0.0);
    for (int o = 0; o < out; ++o) {
      const double d = delta[static_cast<std::size_t>(o)];
      const double* row =
          p.weights[static_cast<std::size_t>(l)].data() + static_cast<std::size_t>(o) * static_cast<std::size_t>(in);
      for (int i = 0; i < in; ++i) next[static_cast<std::size_t>(i)] += d * row[i];
    }
    const auto& h = tr.acts[static_cast<std::size_t>(l)];
    for (int i = 0; i < in; ++i)
      next[static_cast<std::size_t>(i)] *= act_grad_from_output(p.act, h[static_cast<std::size_t>(i)]);
    delta = std::move(next);
  }
}

// ---------------------------------------------------------------------------
// Linear baseline: least-squares fit of returns on [1, state], solved by
// Cholesky on the normal equations; a ridge term is added only when the
// plain system is not positive definite.

struct BaselineFit {
  std::vector<double> coeffs;  // intercept first
  bool ridged = false;
};

namespace detail {

// In-place Cholesky solve of A x = b for symmetric positive definite A
// (dimension n, row-major). Returns false if a pivot collapses.
inline bool cholesky_solve(std::vector<double>& a, std::vector<double>& b, int n) {
  for (int j = 0; j < n; ++j) {
    double d = a[static_cast<std::size_t>(j) * n + j];
    for (int k = 0; k < j; ++k) {
      const double l = a[static_cast<std::size_t>(j) * n + k];
      d -= l * l;
    }
    if (d <= 1e-12) return false;
    const double lj = std::sqrt(d);
    a[static_cast<std::size_t>(j) * n + j] = lj;
    for (int i = j + 1; i < n; ++i) {
      double v = a[static_cast<std::size_t>(i) * n + j];
      for (int k = 0; k < j; ++k)
        v -= a[static_cast<std::size_t>(i) * n + k] * a[static_cast<std::size_t>(j) * n + k];
      a[static_cast<std::size_t>(i) * n + j] = v / lj;
    }
  }
  for (int i = 0; i < n; ++i) {  // forward
    double v = b[static_cast<std::size_t>(i)];
    for (int k = 0; k < i; ++k) v -= a[static_cast<std::size_t>(i) * n + k] * b[static_cast<std::size_t>(k)];
    b[static_cast<std::size_t>(i)] = v / a[static_cast<std::size_t>(i) * n + i];
  }
  for (int i = n - 1; i >= 0; --i) {  // backward
    double v = b[static_cast<std::size_t>(i)];
    for (int k = i + 1; k < n; ++k) v -= a[static_cast<std::size_t>(k) * n + i] * b[static_cast<std::size_t>(k)];
    b[static_cast<std::size_t>(i)] = v / a[static_cast<std::size_t>(i) * n + i];
  }
  return true;
}

}  // namespace detail

inline BaselineFit baseline_fit(std::span<const std::vector<double>> states,
                                std::span<const double> returns, double ridge = 1e-3) {
  if (states.size() != returns.size() || states.size() < 2)
    throw DataError("baseline_fit: need at least 2 aligned samples");
  const int d = static_cast<int>(states.front().size()) + 1;
  std::vector<double> a(static_cast<std::size_t>(d) * static_cast<std::size_t>(d), 0.0);
  std::vector<double> b(static_cast<std::size_t>(d), 0.0);
  std::vector<double> phi(static_cast<std::size_t>(d));
  for (std::size_t s = 0; s < states.size(); ++s) {
    phi[0] = 1.0;
    for (int i = 1; i < d; ++i) phi[static_cast<std::size_t>(i)] = states[s][static_cast<std::size_t>(i - 1)];
    for (int i = 0; i < d; ++i) {
      b[static_cast<std::size_t>(i)] += phi[static_cast<std::size_t>(i)] * returns[s];
      for (int j = 0; j <= i; ++j)
        a[static_cast<std::size_t>(i) * d + j] += phi[static_cast<std::size_t>(i)] * phi[static_cast<std::size_t>(j)];
    }
  }
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j)
      a[static_cast<std::size_t>(i) * d + j] = a[static_cast<std::size_t>(j) * d + i];

  BaselineFit fit;
  std::vector<double> a_try = a;
  std::vector<double> b_try = b;
  if (!detail::cholesky_solve(a_try, b_try, d)) {
    fit.ridged = true;
    a_try = a;
    b_try = b;
    for (int i = 0; i < d; ++i) a_try[static_cast<std::size_t>(i) * d + i] += ridge;
    if (!detail::cholesky_solve(a_try, b_try, d))
      throw DataError("baseline_fit: normal equations unsolvable even with ridge");
  }
  fit.coeffs = std::move(b_try);
  return fit;
}

inline double baseline_eval(std::span<const double> coeffs, std::span<const double> state) {
  double v = coeffs[0];
  for (std::size_t i = 0; i < state.size(); ++i) v += coeffs[i + 1] * state[i];
  return v;
}

// ---------------------------------------------------------------------------
// Parameter file: little-endian flat binary for cross-language reuse.
//   bytes 0..3   magic "ABLP"
//   u32          version (1)
//   u32          activation (0 = tanh, 1 = relu)
//   u32          n_dims, then n_dims x u32 layer sizes
//   f64 arrays   W1, b1, ..., WL, bL (row-major), then baseline (dims[0]+1)
//   u64          FNV-1a checksum of everything before it
namespace detail {

inline std::uint64_t fnv1a(const unsigned char* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

template <typename T>
void put(std::string& buf, T v) {
  char tmp[sizeof(T)];
  std::memcpy(tmp, &v, sizeof(T));
  buf.append(tmp, sizeof(T));
}

template <typename T>
T get(const std::string& buf, std::size_t& off, const std::string& path) {
  if (off + sizeof(T) > buf.size()) throw ParseError(path + ": truncated parameter file");
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

}  // namespace detail

inline void MlpParams::save(const std::string& path) const {
  std::string buf;
  buf.append("ABLP", 4);
  detail::put<std::uint32_t>(buf, 1);
  detail::put<std::uint32_t>(buf, act == Activation::kTanh ? 0u : 1u);
  detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(dims.size()));
  for (int dim : dims) detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(dim));
  for (std::size_t l = 0; l < weights.size(); ++l) {
    for (double v : weights[l]) detail::put<double>(buf, v);
    for (double v : biases[l]) detail::put<double>(buf, v);
  }
  for (double v : baseline) detail::put<double>(buf, v);
  const std::uint64_t sum =
      detail::fnv1a(reinterpret_cast<const unsigned char*>(buf.data()), buf.size());
  detail::put<std::uint64_t>(buf, sum);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("params: cannot write '" + path + "'");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline MlpParams MlpParams::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("params: cannot open '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 12 + 8 || buf.compare(0, 4, "ABLP") != 0)
    throw ParseError(path + ": not an ABLP parameter file");
  const std::uint64_t stored_sum =
      detail::fnv1a(reinterpret_cast<const unsigned char*>(buf.data()), buf.size() - 8);
  std::size_t tail = buf.size() - 8;
  if (detail::get<std::uint64_t>(buf, tail, path) != stored_sum)
    throw ParseError(path + ": checksum mismatch");
  std::size_t off = 4;
  if (detail::get<std::uint32_t>(buf, off, path) != 1)
    throw ParseError(path + ": unsupported parameter file version");
  MlpParams p;
  p.act = detail::get<std::uint32_t>(buf, off, path) == 0 ? Activation::kTanh : Activation::kRelu;
  const auto n_dims = detail::get<std::uint32_t>(buf, off, path);
  if (n_dims < 2 || n_dims > 16) throw ParseError(path + ": implausible layer count");
  for (std::uint32_t i = 0; i < n_dims; ++i)
    p.dims.push_back(static_cast<int>(detail::get<std::uint32_t>(buf, off, path)));
  for (std::size_t l = 0; l + 1 < p.dims.size(); ++l) {
    const auto nw = static_cast<std::size_t>(p.dims[l]) * static_cast<std::size_t>(p.dims[l + 1]);
    std::vector<double> w(nw), b(static_cast<std::size_t>(p.dims[l + 1]));
    for (auto& v : w) v = detail::get<double>(buf, off, path);
    for (auto& v : b) v = detail::get<double>(buf, off, path);
    p.weights.push_back(std::move(w));
    p.biases.push_back(std::move(b));
  }
  p.baseline.resize(static_cast<std::size_t>(p.dims.front()) + 1);
  for (auto& v : p.baseline) v = detail::get<double>(buf, off, path);
  if (off != buf.size() - 8) throw ParseError(path + ": trailing bytes in parameter file");
  if (!p.finite()) throw ParseError(path + ": non-finite parameters");
  return p;
}

}  // namespace abrlab
