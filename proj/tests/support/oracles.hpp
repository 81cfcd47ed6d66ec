#pragma once

// Independent scalar-loop reference implementations used as test oracles.
// Everything here is written against plain vectors and explicit index
// arithmetic, deliberately sharing no code with the library paths it checks.

#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

namespace oracle {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double silu(double x) { return x * sigmoid(x); }
inline double softplus(double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); }

// C = A(m x k) * B(k x n), single matrices.
inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b,
                                  std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) s += a[i * k + kk] * b[kk * n + j];
      c[i * n + j] = s;
    }
  return c;
}

// Grouped 1-D cross-correlation, x laid out [B, T, M, Cin], w [Cout, Cin/g, K].
inline std::vector<double> conv1d(const std::vector<double>& x, const std::vector<double>& w,
                                  const std::vector<double>& bias, std::size_t B, std::size_t T,
                                  std::size_t M, std::size_t Cin, std::size_t Cout,
                                  std::size_t K, std::size_t pad_left, std::size_t pad_right,
                                  std::size_t groups) {
  const std::size_t cin_g = Cin / groups;
  const std::size_t cout_g = Cout / groups;
  const std::size_t Tout = T + pad_left + pad_right - K + 1;
  std::vector<double> y(B * Tout * M * Cout, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < Tout; ++t)
      for (std::size_t m = 0; m < M; ++m)
        for (std::size_t co = 0; co < Cout; ++co) {
          double acc = bias.empty() ? 0.0 : bias[co];
          for (std::size_t kk = 0; kk < K; ++kk) {
            const long tin = static_cast<long>(t + kk) - static_cast<long>(pad_left);
            if (tin < 0 || tin >= static_cast<long>(T)) continue;
            for (std::size_t ci = 0; ci < cin_g; ++ci) {
              const std::size_t cin_idx = (co / cout_g) * cin_g + ci;
              acc += x[((b * T + tin) * M + m) * Cin + cin_idx] * w[(co * cin_g + ci) * K + kk];
            }
          }
          y[((b * Tout + t) * M + m) * Cout + co] = acc;
        }
  return y;
}

// Element-by-element constructor for the block spatio-temporal adjacency.
inline std::vector<double> block_adjacency(const std::vector<double>& a_tilde,
                                           const std::vector<double>& a_t, std::size_t T,
                                           std::size_t J) {
  const std::size_t n = T * J;
  std::vector<double> m(n * n, 0.0);
  for (std::size_t row = 0; row < n; ++row)
    for (std::size_t col = 0; col < n; ++col) {
      const std::size_t fr = row / J, r = row % J;
      const std::size_t fc = col / J, c = col % J;
      if (fr == fc)
        m[row * n + col] = a_tilde[r * J + c];
      else if (fc == fr + 1)
        m[row * n + col] = a_t[r * J + c];
      else if (fr == fc + 1)
        m[row * n + col] = a_t[c * J + r];  // transpose below the diagonal
    }
  return m;
}

// Dynamic adjacency by direct scalar loops over the defining formula.
inline std::vector<double> dynamic_adjacency(const std::vector<double>& f_base,
                                             const std::vector<double>& a_static,
                                             std::size_t J) {
  std::vector<double> mask = a_static;
  for (std::size_t r = 0; r < J; ++r) {
    double rowsum = 0.0;
    for (std::size_t c = 0; c < J; ++c) rowsum += mask[r * J + c];
    if (rowsum == 0.0) mask[r * J + r] = 1.0;
  }
  std::vector<double> out(J * J, 0.0);
  for (std::size_t r = 0; r < J; ++r) {
    double rowsum = 0.0;
    for (std::size_t c = 0; c < J; ++c) rowsum += mask[r * J + c] * softplus(f_base[r * J + c]);
    for (std::size_t c = 0; c < J; ++c)
      out[r * J + c] = mask[r * J + c] * softplus(f_base[r * J + c]) / rowsum;
  }
  return out;
}

// Whole graph-layer forward by scalar loops: block propagation, temporal
// convolution (kernel 3, zero padding 1), affine output map.
struct GraphLayerRef {
  std::vector<double> a_tilde;  // J x J
  std::vector<double> a_t;      // J x J
  std::vector<double> tc_w;     // F x F x 3
  std::vector<double> tc_b;     // F
  std::vector<double> w;        // F x O
  std::vector<double> b;        // O
};

inline std::vector<double> graph_layer_forward(const std::vector<double>& x, std::size_t B,
                                               std::size_t T, std::size_t J, std::size_t F,
                                               std::size_t O, const GraphLayerRef& p) {
  const std::size_t n = T * J;
  const auto block = block_adjacency(p.a_tilde, p.a_t, T, J);
  // H = block * X'
  std::vector<double> h(B * n * F, 0.0);
  for (std::size_t bb = 0; bb < B; ++bb)
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t f = 0; f < F; ++f) {
        double s = 0.0;
        for (std::size_t c = 0; c < n; ++c) s += block[r * n + c] * x[(bb * n + c) * F + f];
        h[(bb * n + r) * F + f] = s;
      }
  // temporal conv per joint
  const auto htemp = conv1d(h, p.tc_w, p.tc_b, B, T, J, F, F, 3, 1, 1, 1);
  // affine
  std::vector<double> z(B * n * O, 0.0);
  for (std::size_t i = 0; i < B * n; ++i)
    for (std::size_t o = 0; o < O; ++o) {
      double s = p.b[o];
      for (std::size_t f = 0; f < F; ++f) s += htemp[i * F + f] * p.w[f * O + o];
      z[i * O + o] = s;
    }
  return z;
}

// Four-nested-loop discretization reference.
inline void discretize(const std::vector<double>& delta_raw, const std::vector<double>& delta_bias,
                       const std::vector<double>& a, const std::vector<double>& bg,
                       const std::vector<double>& u, std::size_t B, std::size_t T, std::size_t D,
                       std::size_t N, std::vector<double>& delta_a,
                       std::vector<double>& delta_bu) {
  delta_a.assign(B * T * D * N, 0.0);
  delta_bu.assign(B * T * D * N, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t d = 0; d < D; ++d) {
        const double delta = softplus(delta_raw[(b * T + t) * D + d] + delta_bias[d]);
        for (std::size_t nn = 0; nn < N; ++nn) {
          const std::size_t idx = (((b * T + t) * D) + d) * N + nn;
          delta_a[idx] = std::exp(delta * a[d * N + nn]);
          delta_bu[idx] = delta * bg[(b * T + t) * N + nn] * u[(b * T + t) * D + d];
        }
      }
}

// Per-step normalized scan, scalar loops.
inline std::vector<double> ssm_scan(const std::vector<double>& delta_a,
                                    const std::vector<double>& delta_bu, std::size_t B,
                                    std::size_t T, std::size_t DN, double eps) {
  std::vector<double> h(B * T * DN, 0.0);
  std::vector<double> state(DN);
  for (std::size_t b = 0; b < B; ++b) {
    std::fill(state.begin(), state.end(), 0.0);
    for (std::size_t t = 0; t < T; ++t) {
      double ss = 0.0;
      for (std::size_t i = 0; i < DN; ++i) {
        const std::size_t idx = (b * T + t) * DN + i;
        state[i] = delta_a[idx] * state[i] + delta_bu[idx];
        ss += state[i] * state[i];
      }
      const double scale = 1.0 / (std::sqrt(ss) + eps);
      for (std::size_t i = 0; i < DN; ++i) {
        state[i] *= scale;
        h[(b * T + t) * DN + i] = state[i];
      }
    }
  }
  return h;
}

// Full STG-Mamba block forward, scalar loops end to end.
struct SsmRef {
  std::vector<double> w_split;     // Din x 2D
  std::vector<double> w_conv;      // D x 1 x 3
  std::vector<double> w_proj;      // D x (D + 2N)
  std::vector<double> a_raw;       // D x N (effective A = -softplus(a_raw))
  std::vector<double> d_skip;      // D
  std::vector<double> delta_bias;  // D
  std::vector<double> w_out;       // D x Dout
  std::vector<double> b_out;       // Dout
  double eps = 1e-6;
};

inline std::vector<double> stg_mamba_forward(const std::vector<double>& x, std::size_t B,
                                             std::size_t T, std::size_t Din, std::size_t D,
                                             std::size_t N, std::size_t Dout, const SsmRef& p) {
  // split
  std::vector<double> branch(B * T * D, 0.0), gate(B * T * D, 0.0);
  for (std::size_t bt = 0; bt < B * T; ++bt)
    for (std::size_t d = 0; d < D; ++d) {
      double s1 = 0.0, s2 = 0.0;
      for (std::size_t i = 0; i < Din; ++i) {
        s1 += x[bt * Din + i] * p.w_split[i * 2 * D + d];
        s2 += x[bt * Din + i] * p.w_split[i * 2 * D + D + d];
      }
      branch[bt * D + d] = s1;
      gate[bt * D + d] = s2;
    }
  // causal depth-wise conv (pad left K-1) + SiLU
  std::vector<double> xconv(B * T * D, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t d = 0; d < D; ++d) {
        double acc = 0.0;
        for (std::size_t k = 0; k < 3; ++k) {
          const long tin = static_cast<long>(t + k) - 2;
          if (tin < 0) continue;
          acc += branch[(b * T + static_cast<std::size_t>(tin)) * D + d] * p.w_conv[d * 3 + k];
        }
        xconv[(b * T + t) * D + d] = silu(acc);
      }
  // projection -> (delta_raw, B, C)
  const std::size_t P = D + 2 * N;
  std::vector<double> proj(B * T * P, 0.0);
  for (std::size_t bt = 0; bt < B * T; ++bt)
    for (std::size_t pcol = 0; pcol < P; ++pcol) {
      double s = 0.0;
      for (std::size_t d = 0; d < D; ++d) s += xconv[bt * D + d] * p.w_proj[d * P + pcol];
      proj[bt * P + pcol] = s;
    }
  // discretize with A = -softplus(a_raw)
  std::vector<double> a_eff(D * N);
  for (std::size_t i = 0; i < D * N; ++i) a_eff[i] = -softplus(p.a_raw[i]);
  std::vector<double> delta_raw(B * T * D), bg(B * T * N);
  for (std::size_t bt = 0; bt < B * T; ++bt) {
    for (std::size_t d = 0; d < D; ++d) delta_raw[bt * D + d] = proj[bt * P + d];
    for (std::size_t nn = 0; nn < N; ++nn) bg[bt * N + nn] = proj[bt * P + D + nn];
  }
  std::vector<double> da, dbu;
  discretize(delta_raw, p.delta_bias, a_eff, bg, xconv, B, T, D, N, da, dbu);
  const auto h = ssm_scan(da, dbu, B, T, D * N, p.eps);
  // readout + skip, gate, output projection
  std::vector<double> y(B * T * Dout, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t bt = b * T + t;
      std::vector<double> o(D, 0.0);
      for (std::size_t d = 0; d < D; ++d) {
        double s = 0.0;
        for (std::size_t nn = 0; nn < N; ++nn)
          s += proj[bt * P + D + N + nn] * h[(bt * D + d) * N + nn];
        o[d] = s + p.d_skip[d] * xconv[bt * D + d];
        o[d] *= silu(gate[bt * D + d]);
      }
      for (std::size_t od = 0; od < Dout; ++od) {
        double s = p.b_out[od];
        for (std::size_t d = 0; d < D; ++d) s += o[d] * p.w_out[d * Dout + od];
        y[bt * Dout + od] = s;
      }
    }
  return y;
}

// Mean cross-entropy of softmax(logits) against a broadcast label.
// logits laid out [B, T, N, K]; one label per batch element.
inline double cross_entropy(const std::vector<double>& logits, const std::vector<int>& labels,
                            std::size_t B, std::size_t T, std::size_t N, std::size_t K) {
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t n = 0; n < N; ++n) {
        const double* z = logits.data() + ((b * T + t) * N + n) * K;
        double mx = z[0];
        for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, z[k]);
        double sum = 0.0;
        for (std::size_t k = 0; k < K; ++k) sum += std::exp(z[k] - mx);
        total += -(z[labels[b]] - mx - std::log(sum));
      }
  return total / static_cast<double>(B * T * N);
}

// KL(softmax(zs/temp) || softmax(zt/temp)) for one logit row.
inline double kl_row(const std::vector<double>& zs, const std::vector<double>& zt, double temp) {
  const std::size_t k = zs.size();
  std::vector<double> p(k), q(k);
  auto soft = [&](const std::vector<double>& z, std::vector<double>& out) {
    double mx = z[0] / temp;
    for (std::size_t i = 1; i < k; ++i) mx = std::max(mx, z[i] / temp);
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      out[i] = std::exp(z[i] / temp - mx);
      sum += out[i];
    }
    for (double& v : out) v /= sum;
  };
  soft(zs, p);
  soft(zt, q);
  double kl = 0.0;
  for (std::size_t i = 0; i < k; ++i) kl += p[i] * (std::log(p[i]) - std::log(q[i]));
  return kl;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return num / (std::sqrt(na) * std::sqrt(nb));
}

inline std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng, double lo = -2.0,
                                      double hi = 2.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

}  // namespace oracle
