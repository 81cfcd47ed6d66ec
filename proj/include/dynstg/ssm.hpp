#pragma once

#include <utility>

#include "dynstg/ops.hpp"

namespace dynstg {

// Learnable state of one selective state-space block. The effective state
// transition matrix is -softplus(a_raw), so it stays elementwise negative and
// the discretized transition exp(delta * A) stays in (0, 1] for delta >= 0.
struct SsmParams {
  Tensor w_split;     // D_in x 2D
  Tensor w_conv;      // D x 1 x 3 depth-wise causal kernel
  Tensor w_proj;      // D x (D + 2N) -> (delta_raw, B, C) per timestep
  Tensor a_raw;       // D x N
  Tensor d_skip;      // D
  Tensor delta_bias;  // D, added inside the softplus (the Delta* bias)
  Tensor w_out;       // D x D_out
  Tensor b_out;       // D_out
  double state_eps = 1e-6;

  std::size_t in_dim() const { return w_split.dim(0); }
  std::size_t channels() const { return a_raw.dim(0); }
  std::size_t state_dim() const { return a_raw.dim(1); }
  std::size_t out_dim() const { return w_out.dim(1); }

  Tensor a_gssm() const { return neg(softplus(a_raw)); }
};

// Softplus-gated discretization:
//   delta      = softplus(delta_raw + delta_bias)
//   deltaA     = exp(delta[b,t,d] * A[d,n])
//   deltaBu    = delta[b,t,d] * B[b,t,n] * u[b,t,d]
inline std::pair<Tensor, Tensor> discretize(const Tensor& delta_raw, const Tensor& delta_bias,
                                            const Tensor& a_gssm, const Tensor& b_gssm,
                                            const Tensor& u) {
  const std::size_t b = delta_raw.dim(0), t = delta_raw.dim(1), d = delta_raw.dim(2);
  const std::size_t n = a_gssm.dim(1);
  if (a_gssm.dim(0) != d || b_gssm.shape() != Shape{b, t, n} || u.shape() != Shape{b, t, d})
    throw ShapeError("discretize: inconsistent shapes delta " + shape_str(delta_raw.shape()) +
                     " A " + shape_str(a_gssm.shape()) + " B " + shape_str(b_gssm.shape()) +
                     " u " + shape_str(u.shape()));
  const Tensor delta = softplus(add(delta_raw, delta_bias));
  const Tensor delta4 = reshape(delta, {b, t, d, 1});
  const Tensor delta_a = exp(mul(delta4, reshape(a_gssm, {1, 1, d, n})));
  const Tensor delta_bu = mul(mul(delta4, reshape(b_gssm, {b, t, 1, n})), reshape(u, {b, t, d, 1}));
  return {delta_a, delta_bu};
}

namespace detail {

// Reverse sweep shared by both scan variants. Forward state per (b, t):
//   hp_t = a_t (*) h_{t-1} + bu_t,  h_t = hp_t / (||hp_t|| + eps)
// with the norm over the full D x N slice.
inline void scan_backward(const std::shared_ptr<TensorImpl>& a,
                          const std::shared_ptr<TensorImpl>& bu,
                          const std::shared_ptr<TensorImpl>& out,
                          const std::vector<double>& pre, const std::vector<double>& norms,
                          double eps, std::size_t B, std::size_t T, std::size_t DN) {
  std::vector<double> carry(DN), dhp(DN);
  for (std::size_t b = 0; b < B; ++b) {
    std::fill(carry.begin(), carry.end(), 0.0);
    for (std::size_t t = T; t-- > 0;) {
      const std::size_t base = (b * T + t) * DN;
      const double nrm = norms[b * T + t];
      const double denom = nrm + eps;
      double dot = 0.0;
      for (std::size_t i = 0; i < DN; ++i)
        dot += (out->grad[base + i] + carry[i]) * pre[base + i];
      const double factor = nrm > 0.0 ? dot / (nrm * denom * denom) : 0.0;
      for (std::size_t i = 0; i < DN; ++i) {
        const double g = out->grad[base + i] + carry[i];
        dhp[i] = g / denom - pre[base + i] * factor;
      }
      for (std::size_t i = 0; i < DN; ++i) {
        const double hprev = t > 0 ? out->data[base - DN + i] : 0.0;
        if (a->requires_grad) a->grad[base + i] += dhp[i] * hprev;
        if (bu->requires_grad) bu->grad[base + i] += dhp[i];
        carry[i] = dhp[i] * a->data[base + i];
      }
    }
  }
}

inline void scan_check_inputs(const Tensor& delta_a, const Tensor& delta_bu, double eps) {
  if (!(eps > 0.0)) throw ContractError("ssm_scan: epsilon must be positive");
  if (delta_a.rank() != 4 || delta_a.shape() != delta_bu.shape())
    throw ShapeError("ssm_scan: deltaA " + shape_str(delta_a.shape()) +
                     " and deltaBu " + shape_str(delta_bu.shape()) +
                     " must be identical rank-4 shapes");
}

inline Tensor scan_record(const Tensor& delta_a, const Tensor& delta_bu, Tensor&& h,
                          std::vector<double>&& pre, std::vector<double>&& norms, double eps,
                          std::size_t B, std::size_t T, std::size_t DN) {
  if (wants_grad({&delta_a, &delta_bu})) {
    mark_recorded(h);
    auto ai = delta_a.impl(), bi = delta_bu.impl(), hi = h.impl();
    auto pre_s = std::make_shared<std::vector<double>>(std::move(pre));
    auto norm_s = std::make_shared<std::vector<double>>(std::move(norms));
    Tape::current()->record(hi, [ai, bi, hi, pre_s, norm_s, eps, B, T, DN]() {
      scan_backward(ai, bi, hi, *pre_s, *norm_s, eps, B, T, DN);
    });
  }
  return std::move(h);
}

inline double pairwise_sumsq(const double* v, std::size_t n) {
  if (n <= 8) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += v[i] * v[i];
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sumsq(v, half) + pairwise_sumsq(v + half, n - half);
}

}  // namespace detail

// Per-step selective scan with slice normalization. This is the plain
// reference recurrence; ssm_scan_chunked must agree with it.
inline Tensor ssm_scan(const Tensor& delta_a, const Tensor& delta_bu, double eps) {
  detail::scan_check_inputs(delta_a, delta_bu, eps);
  const std::size_t B = delta_a.dim(0), T = delta_a.dim(1);
  const std::size_t DN = delta_a.dim(2) * delta_a.dim(3);
  std::vector<double> hd(B * T * DN), pre(B * T * DN), norms(B * T);
  const auto& ad = delta_a.data();
  const auto& bd = delta_bu.data();
  std::vector<double> state(DN);
  for (std::size_t b = 0; b < B; ++b) {
    std::fill(state.begin(), state.end(), 0.0);
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t base = (b * T + t) * DN;
      double ss = 0.0;
      for (std::size_t i = 0; i < DN; ++i) {
        const double hp = ad[base + i] * state[i] + bd[base + i];
        pre[base + i] = hp;
        ss += hp * hp;
      }
      const double nrm = std::sqrt(ss);
      norms[b * T + t] = nrm;
      const double s = 1.0 / (nrm + eps);
      for (std::size_t i = 0; i < DN; ++i) {
        state[i] = pre[base + i] * s;
        hd[base + i] = state[i];
      }
    }
  }
  Tensor h(delta_a.shape(), std::move(hd));
  return detail::scan_record(delta_a, delta_bu, std::move(h), std::move(pre), std::move(norms),
                             eps, B, T, DN);
}

// Chunked variant: timesteps are processed in blocks with the channel/state
// loops fused per chunk and the slice norm reduced pairwise. Same recurrence,
// different accumulation order.
inline Tensor ssm_scan_chunked(const Tensor& delta_a, const Tensor& delta_bu, double eps,
                               std::size_t chunk = 16) {
  detail::scan_check_inputs(delta_a, delta_bu, eps);
  if (chunk == 0) throw ContractError("ssm_scan_chunked: chunk size must be positive");
  const std::size_t B = delta_a.dim(0), T = delta_a.dim(1);
  const std::size_t D = delta_a.dim(2), N = delta_a.dim(3);
  const std::size_t DN = D * N;
  std::vector<double> hd(B * T * DN), pre(B * T * DN), norms(B * T);
  const auto& ad = delta_a.data();
  const auto& bd = delta_bu.data();
  std::vector<double> state(DN);
  for (std::size_t b = 0; b < B; ++b) {
    std::fill(state.begin(), state.end(), 0.0);
    for (std::size_t t0 = 0; t0 < T; t0 += chunk) {
      const std::size_t t1 = std::min(t0 + chunk, T);
      for (std::size_t t = t0; t < t1; ++t) {
        const std::size_t base = (b * T + t) * DN;
        double* prep = pre.data() + base;
        const double* ap = ad.data() + base;
        const double* bp = bd.data() + base;
        for (std::size_t dch = 0; dch < D; ++dch) {
          double* prow = prep + dch * N;
          const double* arow = ap + dch * N;
          const double* brow = bp + dch * N;
          double* srow = state.data() + dch * N;
          for (std::size_t nn = 0; nn < N; ++nn) prow[nn] = arow[nn] * srow[nn] + brow[nn];
        }
        const double nrm = std::sqrt(detail::pairwise_sumsq(prep, DN));
        norms[b * T + t] = nrm;
        const double s = 1.0 / (nrm + eps);
        for (std::size_t i = 0; i < DN; ++i) {
          state[i] = prep[i] * s;
          hd[base + i] = state[i];
        }
      }
    }
  }
  Tensor h(delta_a.shape(), std::move(hd));
  return detail::scan_record(delta_a, delta_bu, std::move(h), std::move(pre), std::move(norms),
                             eps, B, T, DN);
}

// One STG-Mamba block: split projection, causal depth-wise convolution with
// SiLU, selective state scan, skip and gate fusion, output projection.
// Y[:, t, :] depends only on X[:, <=t, :].
inline Tensor stg_mamba_forward(const Tensor& x, const SsmParams& p) {
  if (x.rank() != 3)
    throw ShapeError("stg_mamba_forward: input must be [batch, time, channels], got " +
                     shape_str(x.shape()));
  const std::size_t b = x.dim(0), t = x.dim(1);
  if (x.dim(2) != p.in_dim())
    throw ShapeError("stg_mamba_forward: input channel dim " + std::to_string(x.dim(2)) +
                     " does not match W_split " + shape_str(p.w_split.shape()));
  const std::size_t d = p.channels(), n = p.state_dim();
  if (p.w_split.dim(1) != 2 * d)
    throw ShapeError("stg_mamba_forward: W_split must produce 2 branches of width " +
                     std::to_string(d));
  if (p.w_proj.dim(0) != d || p.w_proj.dim(1) != d + 2 * n)
    throw ShapeError("stg_mamba_forward: W_proj must map D to D + 2N, got " +
                     shape_str(p.w_proj.shape()));

  const Tensor split = matmul(x, p.w_split);  // B x T x 2D
  const Tensor branch = slice_last(split, 0, d);
  const Tensor gate_in = slice_last(split, d, d);

  // Causal depth-wise convolution: left padding only.
  const Tensor conv = conv1d(branch, p.w_conv, std::nullopt, p.w_conv.dim(2) - 1, 0, d);
  const Tensor x_conv = silu(conv);

  const Tensor proj = matmul(x_conv, p.w_proj);  // B x T x (D + 2N)
  const Tensor delta_raw = slice_last(proj, 0, d);
  const Tensor b_gssm = slice_last(proj, d, n);
  const Tensor c_gssm = slice_last(proj, d + n, n);

  const auto [delta_a, delta_bu] = discretize(delta_raw, p.delta_bias, p.a_gssm(), b_gssm, x_conv);
  const Tensor h = ssm_scan_chunked(delta_a, delta_bu, p.state_eps);

  // o[b,t,d] = sum_n C[b,t,n] H[b,t,d,n] + D_skip[d] x_conv[b,t,d]
  const Tensor o = add(contract(reshape(c_gssm, {b, t, 1, n}), h, {3}),
                       mul(p.d_skip, x_conv));
  const Tensor fused = mul(o, silu(gate_in));
  return add(matmul(fused, p.w_out), p.b_out);
}

}  // namespace dynstg
