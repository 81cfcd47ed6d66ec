#pragma once

#include <deque>

#include "dynstg/ops.hpp"

namespace dynstg {

struct DistillConfig {
  double kd_temperature = 4.0;  // T in L_align
  double tau = 0.1;             // relational temperature
  double alpha = 1.0;
  double beta = 0.1;
  double gamma = 0.1;
  std::size_t memory_capacity = 256;

  void validate() const {
    if (!(kd_temperature > 0.0)) throw ConfigError("distill config: kd_temperature must be > 0");
    if (!(tau > 0.0)) throw ConfigError("distill config: tau must be > 0");
    if (memory_capacity == 0) throw ConfigError("distill config: memory capacity must be >= 1");
  }
};

// Fixed-capacity FIFO store of detached teacher joint embeddings. Entries are
// raw values and never participate in gradients.
class MemoryBank {
 public:
  explicit MemoryBank(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw ConfigError("memory bank: capacity must be >= 1");
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t entry_dim() const { return entries_.empty() ? 0 : entries_.front().size(); }

  // Enqueues all B*N embeddings in batch-major, joint-minor order, evicting
  // the oldest entries past capacity.
  void update(const Tensor& teacher_embeddings) {
    if (teacher_embeddings.rank() != 3)
      throw ShapeError("memory bank update: embeddings must be [B, N, O], got " +
                       shape_str(teacher_embeddings.shape()));
    const std::size_t b = teacher_embeddings.dim(0);
    const std::size_t n = teacher_embeddings.dim(1);
    const std::size_t o = teacher_embeddings.dim(2);
    if (!entries_.empty() && entries_.front().size() != o)
      throw ShapeError("memory bank update: embedding width changed");
    const auto& d = teacher_embeddings.data();
    for (std::size_t i = 0; i < b * n; ++i) {
      entries_.emplace_back(d.begin() + i * o, d.begin() + (i + 1) * o);
      if (entries_.size() > capacity_) entries_.pop_front();
    }
  }

  // Constant M x O tensor snapshot in insertion order.
  Tensor as_tensor() const {
    if (entries_.empty()) throw ContractError("memory bank: empty");
    const std::size_t o = entries_.front().size();
    std::vector<double> d;
    d.reserve(entries_.size() * o);
    for (const auto& e : entries_) d.insert(d.end(), e.begin(), e.end());
    return Tensor({entries_.size(), o}, std::move(d));
  }

 private:
  std::size_t capacity_;
  std::deque<std::vector<double>> entries_;
};

inline void memory_update(MemoryBank& bank, const Tensor& teacher_embeddings) {
  bank.update(teacher_embeddings);
}

namespace detail {

// One-hot constant over the class axis of a [B, T, N, K] logit layout.
inline Tensor one_hot_broadcast(const std::vector<int>& labels, std::size_t b, std::size_t t,
                                std::size_t n, std::size_t k) {
  Tensor out = Tensor::zeros({b, t, n, k});
  auto& d = out.mutable_data();
  for (std::size_t bb = 0; bb < b; ++bb) {
    const int y = labels[bb];
    if (y < 0 || static_cast<std::size_t>(y) >= k)
      throw ContractError("loss_task: label " + std::to_string(y) + " outside [0, " +
                          std::to_string(k) + ")");
    for (std::size_t tt = 0; tt < t; ++tt)
      for (std::size_t nn = 0; nn < n; ++nn) d[((bb * t + tt) * n + nn) * k + y] = 1.0;
  }
  return out;
}

// Mean over leading axes of row-wise KL(p_student || p_teacher) where both
// sides are softmax distributions of the given logits over the last axis.
inline Tensor kl_mean(const Tensor& student_logits, const Tensor& teacher_logits) {
  const std::size_t axis = student_logits.rank() - 1;
  const Tensor p = softmax(student_logits, axis);
  const Tensor diff = sub(log_softmax(student_logits, axis), log_softmax(teacher_logits, axis));
  return mean(sum(mul(p, diff), {axis}));
}

// Pairwise cosine similarities between the rows of two [B, A, O] embedding
// stacks -> [B, A1, A2]; zero-norm rows yield 0 similarity.
inline Tensor cosine_matrix(const Tensor& lhs, const Tensor& rhs) {
  const std::size_t b = lhs.dim(0), a1 = lhs.dim(1), o = lhs.dim(2);
  const std::size_t a2 = rhs.dim(1);
  const Tensor ln = l2_normalize(lhs);
  const Tensor rn = l2_normalize(rhs);
  return contract(reshape(ln, {b, a1, 1, o}), reshape(rn, {b, 1, a2, o}), {3});
}

}  // namespace detail

// Mean cross-entropy of softmax(joint logits) against the sequence label
// broadcast to every (frame, joint) position.
inline Tensor loss_task(const Tensor& joint_logits, const std::vector<int>& labels) {
  if (joint_logits.rank() != 4)
    throw ShapeError("loss_task: logits must be [B, T, N, K], got " +
                     shape_str(joint_logits.shape()));
  const std::size_t b = joint_logits.dim(0), t = joint_logits.dim(1);
  const std::size_t n = joint_logits.dim(2), k = joint_logits.dim(3);
  if (labels.size() != b)
    throw ContractError("loss_task: " + std::to_string(labels.size()) + " labels for batch of " +
                        std::to_string(b));
  const Tensor onehot = detail::one_hot_broadcast(labels, b, t, n, k);
  return neg(mean(sum(mul(onehot, log_softmax(joint_logits, 3)), {3})));
}

// KL(softmax(Zs/T) || softmax(Zt/T)) averaged over all logit positions.
// Teacher logits are detached; no temperature-squared rescaling is applied.
inline Tensor loss_align(const Tensor& student_logits, const Tensor& teacher_logits,
                         double kd_temperature) {
  if (student_logits.shape() != teacher_logits.shape())
    throw ShapeError("loss_align: student " + shape_str(student_logits.shape()) +
                     " vs teacher " + shape_str(teacher_logits.shape()));
  if (!(kd_temperature > 0.0)) throw ContractError("loss_align: temperature must be > 0");
  const double inv_t = 1.0 / kd_temperature;
  return detail::kl_mean(scale(student_logits, inv_t),
                         scale(teacher_logits.detach(), inv_t));
}

// Intra-graph relational loss: joint-joint cosine rows, softmax at tau, mean
// KL over (sample, anchor joint). Teacher side detached.
inline Tensor loss_intra(const Tensor& student_emb, const Tensor& teacher_emb, double tau) {
  if (student_emb.shape() != teacher_emb.shape() || student_emb.rank() != 3)
    throw ShapeError("loss_intra: embeddings must share a [B, N, O] shape, got " +
                     shape_str(student_emb.shape()) + " vs " + shape_str(teacher_emb.shape()));
  if (!(tau > 0.0)) throw ContractError("loss_intra: tau must be > 0");
  const Tensor s_student = detail::cosine_matrix(student_emb, student_emb);
  const Tensor t_detached = teacher_emb.detach();
  const Tensor s_teacher = detail::cosine_matrix(t_detached, t_detached);
  const double inv_tau = 1.0 / tau;
  return detail::kl_mean(scale(s_student, inv_tau), scale(s_teacher, inv_tau));
}

// Memory-based relational loss: node-to-bank cosine rows for student and
// teacher embeddings against the shared bank. An empty bank (first batch)
// contributes 0 and sets the warning flag.
inline Tensor loss_memory(const Tensor& student_emb, const MemoryBank& bank,
                          const Tensor& teacher_emb, double tau, bool* warned_empty = nullptr) {
  if (student_emb.shape() != teacher_emb.shape() || student_emb.rank() != 3)
    throw ShapeError("loss_memory: embeddings must share a [B, N, O] shape");
  if (!(tau > 0.0)) throw ContractError("loss_memory: tau must be > 0");
  if (bank.empty()) {
    if (warned_empty) *warned_empty = true;
    return Tensor::scalar(0.0);
  }
  const Tensor bank_rows = bank.as_tensor();  // M x O
  const std::size_t b = student_emb.dim(0), n = student_emb.dim(1), o = student_emb.dim(2);
  const std::size_t m = bank_rows.dim(0);
  if (bank.entry_dim() != o)
    throw ShapeError("loss_memory: bank entries have width " + std::to_string(bank.entry_dim()) +
                     ", embeddings have " + std::to_string(o));
  const Tensor bank_n = reshape(l2_normalize(bank_rows), {1, 1, m, o});
  auto rows = [&](const Tensor& emb) {
    return contract(reshape(l2_normalize(emb), {b, n, 1, o}), bank_n, {3});  // B x N x M
  };
  const double inv_tau = 1.0 / tau;
  return detail::kl_mean(scale(rows(student_emb), inv_tau),
                         scale(rows(teacher_emb.detach()), inv_tau));
}

// Region-to-node relational loss: student nodes against student regions vs
// the same nodes against (detached) teacher regions, row-softmax over regions.
inline Tensor loss_region(const Tensor& student_emb, const Tensor& teacher_regions,
                          const Tensor& student_regions, double tau) {
  if (student_emb.rank() != 3 || teacher_regions.rank() != 3 || student_regions.rank() != 3)
    throw ShapeError("loss_region: expected [B, N, O] nodes and [B, G, O] regions");
  if (teacher_regions.shape() != student_regions.shape())
    throw ShapeError("loss_region: region stacks disagree: " +
                     shape_str(teacher_regions.shape()) + " vs " +
                     shape_str(student_regions.shape()));
  if (!(tau > 0.0)) throw ContractError("loss_region: tau must be > 0");
  const Tensor r_student = detail::cosine_matrix(student_emb, student_regions);
  const Tensor r_teacher = detail::cosine_matrix(student_emb, teacher_regions.detach());
  const double inv_tau = 1.0 / tau;
  return detail::kl_mean(scale(r_student, inv_tau), scale(r_teacher, inv_tau));
}

struct DistillComponents {
  Tensor task;
  Tensor align;
  Tensor intra;
  Tensor memory;
  Tensor region;
};

// L = L_task + L_align + alpha L_intra + beta L_memory + gamma L_region,
// accumulated left to right as written.
inline Tensor total_cgrkd(const DistillComponents& c, const DistillConfig& config) {
  for (const Tensor* t : {&c.task, &c.align, &c.intra, &c.memory, &c.region})
    if (!t->all_finite()) throw ContractError("total_cgrkd: non-finite loss component");
  return add(add(add(add(c.task, c.align), scale(c.intra, config.alpha)),
                 scale(c.memory, config.beta)),
             scale(c.region, config.gamma));
}

}  // namespace dynstg
