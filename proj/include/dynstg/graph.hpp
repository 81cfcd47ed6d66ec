#pragma once

#include <optional>
#include <set>
#include <utility>

#include "dynstg/ops.hpp"

namespace dynstg {

// Skeleton connectivity: joint count plus undirected bone edges. Self loops
// are part of the static adjacency by default.
struct SkeletonTopology {
  std::size_t joints = 0;
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  bool self_loops = true;

  void validate() const {
    if (joints == 0) throw ConfigError("topology: joint count must be positive");
    for (const auto& [i, j] : edges)
      if (i >= joints || j >= joints)
        throw ConfigError("topology: edge (" + std::to_string(i) + "," + std::to_string(j) +
                          ") out of range for " + std::to_string(joints) + " joints");
  }

  // Simple chain 0-1-...-(J-1); the default for synthetic data.
  static SkeletonTopology chain(std::size_t j) {
    SkeletonTopology t;
    t.joints = j;
    for (std::size_t i = 0; i + 1 < j; ++i) t.edges.emplace_back(i, i + 1);
    return t;
  }

  // Symmetric 0/1 adjacency, 1 on the diagonal when self_loops.
  Tensor static_adjacency() const {
    validate();
    Tensor a = Tensor::zeros({joints, joints});
    auto& d = a.mutable_data();
    for (const auto& [i, j] : edges) {
      d[i * joints + j] = 1.0;
      d[j * joints + i] = 1.0;
    }
    if (self_loops)
      for (std::size_t i = 0; i < joints; ++i) d[i * joints + i] = 1.0;
    return a;
  }
};

namespace detail {

// Static adjacency with isolated rows patched to a lone self loop, so row and
// degree normalizations never divide by zero.
inline Tensor patched_static_adjacency(const SkeletonTopology& topo) {
  Tensor a = topo.static_adjacency();
  auto& d = a.mutable_data();
  const std::size_t j = topo.joints;
  for (std::size_t r = 0; r < j; ++r) {
    double rowsum = 0.0;
    for (std::size_t c = 0; c < j; ++c) rowsum += d[r * j + c];
    if (rowsum == 0.0) d[r * j + r] = 1.0;
  }
  return a;
}

}  // namespace detail

// A_dyn = row_normalize(A_static (*) softplus(f_base)): nonnegative, row
// stochastic, and zero wherever the static topology is zero.
inline Tensor build_dynamic_adjacency(const Tensor& f_base, const SkeletonTopology& topo) {
  const std::size_t j = topo.joints;
  if (f_base.shape() != Shape{j, j})
    throw ShapeError("build_dynamic_adjacency: f_base shape " + shape_str(f_base.shape()) +
                     " does not match topology with " + std::to_string(j) + " joints");
  const Tensor mask = detail::patched_static_adjacency(topo);
  const Tensor weighted = mul(mask, softplus(f_base));
  const Tensor rowsum = sum(weighted, {1}, true);
  // 1/rowsum via exp(-log): rowsum > 0 because every patched row has support.
  return mul(weighted, exp(neg(log(rowsum))));
}

// Symmetrically normalized static adjacency D^{-1/2} A D^{-1/2} (student path).
inline Tensor normalized_static_adjacency(const SkeletonTopology& topo) {
  Tensor a = detail::patched_static_adjacency(topo);
  const std::size_t j = topo.joints;
  std::vector<double> dinv(j);
  for (std::size_t r = 0; r < j; ++r) {
    double deg = 0.0;
    for (std::size_t c = 0; c < j; ++c) deg += a.data()[r * j + c];
    dinv[r] = 1.0 / std::sqrt(deg);
  }
  auto& d = a.mutable_data();
  for (std::size_t r = 0; r < j; ++r)
    for (std::size_t c = 0; c < j; ++c) d[r * j + c] *= dinv[r] * dinv[c];
  return a;
}

// The TJ x TJ spatio-temporal adjacency: spatial blocks on the diagonal,
// temporal coupling on the first off-diagonals, zero elsewhere.
struct BlockAdjacency {
  Tensor matrix;
  std::size_t frame_count = 0;
  std::size_t joint_count = 0;
};

// Differentiable block assembly. Backward sums the diagonal block gradients
// into A_tilde and the super/sub-diagonal block gradients (the latter
// transposed) into A_t.
inline BlockAdjacency build_block_adjacency(const Tensor& a_tilde, const Tensor& a_t,
                                            std::size_t frames) {
  if (frames == 0) throw ContractError("build_block_adjacency: frame count must be >= 1");
  if (a_tilde.rank() != 2 || a_tilde.dim(0) != a_tilde.dim(1))
    throw ShapeError("build_block_adjacency: A_tilde must be square, got " +
                     shape_str(a_tilde.shape()));
  if (a_t.shape() != a_tilde.shape())
    throw ShapeError("build_block_adjacency: A_t shape " + shape_str(a_t.shape()) +
                     " does not match A_tilde shape " + shape_str(a_tilde.shape()));
  const std::size_t j = a_tilde.dim(0);
  const std::size_t n = frames * j;

  std::vector<double> md(n * n, 0.0);
  const auto& td = a_tilde.data();
  const auto& ad = a_t.data();
  for (std::size_t f = 0; f < frames; ++f)
    for (std::size_t r = 0; r < j; ++r)
      for (std::size_t c = 0; c < j; ++c) {
        md[(f * j + r) * n + (f * j + c)] = td[r * j + c];
        if (f + 1 < frames) {
          md[(f * j + r) * n + ((f + 1) * j + c)] = ad[r * j + c];
          md[((f + 1) * j + r) * n + (f * j + c)] = ad[c * j + r];
        }
      }
  Tensor m({n, n}, std::move(md));
  if (detail::wants_grad({&a_tilde, &a_t})) {
    detail::mark_recorded(m);
    auto ti = a_tilde.impl(), ai = a_t.impl(), mi = m.impl();
    Tape::current()->record(mi, [ti, ai, mi, frames, j, n]() {
      for (std::size_t f = 0; f < frames; ++f)
        for (std::size_t r = 0; r < j; ++r)
          for (std::size_t c = 0; c < j; ++c) {
            if (ti->requires_grad)
              ti->grad[r * j + c] += mi->grad[(f * j + r) * n + (f * j + c)];
            if (ai->requires_grad && f + 1 < frames) {
              ai->grad[r * j + c] += mi->grad[(f * j + r) * n + ((f + 1) * j + c)];
              ai->grad[c * j + r] += mi->grad[((f + 1) * j + r) * n + (f * j + c)];
            }
          }
    });
  }
  return BlockAdjacency{std::move(m), frames, j};
}

// Learnable state of one graph layer. The teacher variant carries f_base; the
// student variant leaves it empty and propagates over the normalized static
// adjacency instead.
struct DfStgnnParams {
  std::optional<Tensor> f_base;  // J x J
  Tensor temporal_adjacency;     // J x J
  Tensor tc_weight;              // F x F x 3
  Tensor tc_bias;                // F
  Tensor weight;                 // F x O
  Tensor bias;                   // O
};

namespace detail {

inline Tensor graph_layer_forward(const Tensor& x, const Tensor& a_tilde,
                                  const DfStgnnParams& p) {
  if (x.rank() != 4)
    throw ShapeError("graph layer: input must be [batch, time, joints, features], got " +
                     shape_str(x.shape()));
  if (!x.all_finite()) throw ContractError("graph layer: non-finite input");
  const std::size_t b = x.dim(0), t = x.dim(1), j = x.dim(2), f = x.dim(3);
  if (a_tilde.dim(0) != j)
    throw ShapeError("graph layer: input joint count " + std::to_string(j) +
                     " does not match adjacency " + shape_str(a_tilde.shape()));
  if (p.weight.rank() != 2 || p.weight.dim(0) != f)
    throw ShapeError("graph layer: weight " + shape_str(p.weight.shape()) +
                     " incompatible with feature dim " + std::to_string(f));
  const BlockAdjacency block = build_block_adjacency(a_tilde, p.temporal_adjacency, t);
  const Tensor xp = reshape(x, {b, t * j, f});
  const Tensor h = matmul(block.matrix, xp);
  const Tensor h4 = reshape(h, {b, t, j, f});
  const Tensor h_temp = conv1d(h4, p.tc_weight, p.tc_bias, 1, 1, 1);
  return add(matmul(h_temp, p.weight), p.bias);
}

}  // namespace detail

// Teacher graph layer: dynamic-filter adjacency per Eq. block-propagation.
inline Tensor df_stgnn_forward(const Tensor& x, const DfStgnnParams& p,
                               const SkeletonTopology& topo) {
  if (!p.f_base) throw ContractError("df_stgnn_forward: params carry no f_base filter");
  return detail::graph_layer_forward(x, build_dynamic_adjacency(*p.f_base, topo), p);
}

// Student graph layer: fixed, degree-normalized static adjacency.
inline Tensor light_df_stgnn_forward(const Tensor& x, const DfStgnnParams& p,
                                     const SkeletonTopology& topo) {
  return detail::graph_layer_forward(x, normalized_static_adjacency(topo), p);
}

}  // namespace dynstg
