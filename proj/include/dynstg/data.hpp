#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <string>

#include <json.hpp>

#include "dynstg/tensor.hpp"

namespace dynstg {

enum class SeqSource { ingested, synthetic, augmented };

inline const char* to_string(SeqSource s) {
  switch (s) {
    case SeqSource::ingested: return "ingested";
    case SeqSource::synthetic: return "synthetic";
    default: return "augmented";
  }
}

// One gait sample: T x N x 3 joint coordinates plus a class label. base_id
// ties augmented copies back to their source sequence for fold co-assignment.
struct SkeletonSequence {
  std::string id;
  std::string base_id;
  std::string subject;
  int label = 0;
  SeqSource source = SeqSource::ingested;
  Tensor frames;  // T x N x 3

  std::size_t frame_count() const { return frames.dim(0); }
  std::size_t joint_count() const { return frames.dim(1); }
};

using Dataset = std::vector<SkeletonSequence>;

// ---------------------------------------------------------------------------
// JSON-lines ingestion: {"id": str, "label": int, "subject": str,
// "frames": [[[x,y,z] x N] x T]} per line.

inline Dataset load_sequences(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open sequence file: " + path);
  Dataset out;
  std::string line;
  std::size_t lineno = 0;
  std::size_t joints = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("line " + std::to_string(lineno) + ": malformed JSON: " + e.what());
    }
    for (const char* field : {"id", "label", "frames"})
      if (!j.contains(field))
        throw DataError("line " + std::to_string(lineno) + ": missing field '" + field + "'");
    SkeletonSequence seq;
    seq.id = j.at("id").get<std::string>();
    seq.base_id = seq.id;
    seq.label = j.at("label").get<int>();
    seq.subject = j.value("subject", std::string{});
    seq.source = SeqSource::ingested;
    const auto& frames = j.at("frames");
    if (!frames.is_array() || frames.empty())
      throw DataError("line " + std::to_string(lineno) + ": field 'frames' must be a nonempty array");
    const std::size_t t = frames.size();
    const std::size_t n = frames.at(0).size();
    if (n == 0) throw DataError("line " + std::to_string(lineno) + ": empty frame");
    if (joints == 0) joints = n;
    if (n != joints)
      throw DataError("line " + std::to_string(lineno) + ": joint count " + std::to_string(n) +
                      " differs from earlier records with " + std::to_string(joints));
    std::vector<double> data;
    data.reserve(t * n * 3);
    for (std::size_t ti = 0; ti < t; ++ti) {
      const auto& frame = frames.at(ti);
      if (frame.size() != n)
        throw DataError("line " + std::to_string(lineno) + ": frame " + std::to_string(ti) +
                        " has " + std::to_string(frame.size()) + " joints, expected " +
                        std::to_string(n));
      for (std::size_t ji = 0; ji < n; ++ji) {
        const auto& joint = frame.at(ji);
        if (!joint.is_array() || joint.size() != 3)
          throw DataError("line " + std::to_string(lineno) + ": frame " + std::to_string(ti) +
                          " joint " + std::to_string(ji) + " must be [x, y, z]");
        for (std::size_t c = 0; c < 3; ++c) {
          const double v = joint.at(c).get<double>();
          if (!std::isfinite(v))
            throw DataError("line " + std::to_string(lineno) + ": non-finite coordinate at frame " +
                            std::to_string(ti) + ", joint " + std::to_string(ji));
          data.push_back(v);
        }
      }
    }
    seq.frames = Tensor({t, n, 3}, std::move(data));
    out.push_back(std::move(seq));
  }
  return out;
}

inline void save_sequences(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open sequence file for writing: " + path);
  for (const auto& seq : dataset) {
    nlohmann::json frames = nlohmann::json::array();
    const std::size_t t = seq.frame_count(), n = seq.joint_count();
    for (std::size_t ti = 0; ti < t; ++ti) {
      nlohmann::json frame = nlohmann::json::array();
      for (std::size_t ji = 0; ji < n; ++ji)
        frame.push_back({seq.frames.at({ti, ji, 0}), seq.frames.at({ti, ji, 1}),
                         seq.frames.at({ti, ji, 2})});
      frames.push_back(std::move(frame));
    }
    out << nlohmann::json{{"id", seq.id},
                          {"label", seq.label},
                          {"subject", seq.subject},
                          {"frames", frames}}
               .dump()
        << '\n';
  }
}

// ---------------------------------------------------------------------------
// Augmentation: vertical (z-axis) scaling.

inline SkeletonSequence augment_vertical_scale(const SkeletonSequence& seq, double s) {
  if (!(s > 0.0)) throw ContractError("augment_vertical_scale: scale must be > 0");
  SkeletonSequence out = seq;
  out.frames = seq.frames.detach();
  out.source = SeqSource::augmented;
  out.id = seq.id + "#aug";
  out.base_id = seq.base_id;
  auto& d = out.frames.mutable_data();
  for (std::size_t i = 2; i < d.size(); i += 3) d[i] *= s;
  return out;
}

// Returns the originals plus one scaled copy each. Re-augmenting an already
// augmented dataset is rejected so scales never compound.
inline Dataset augment_dataset(const Dataset& dataset, double s) {
  if (s == 1.0) throw ContractError("augment_dataset: scale 1 adds no variation");
  for (const auto& seq : dataset)
    if (seq.source == SeqSource::augmented)
      throw ContractError("augment_dataset: dataset already contains augmented copies");
  Dataset out = dataset;
  out.reserve(dataset.size() * 2);
  for (const auto& seq : dataset) out.push_back(augment_vertical_scale(seq, s));
  return out;
}

// ---------------------------------------------------------------------------
// Standardization: per-(joint, coordinate) z-scores with population std.

struct NormStats {
  std::size_t joints = 0;
  std::vector<double> mean;   // N*3
  std::vector<double> stdev;  // N*3, floored at 1e-8
  std::vector<std::size_t> floored;

  nlohmann::json to_json() const {
    return {{"joints", joints}, {"mean", mean}, {"std", stdev}, {"floored", floored}};
  }
  static NormStats from_json(const nlohmann::json& j) {
    NormStats s;
    s.joints = j.at("joints").get<std::size_t>();
    s.mean = j.at("mean").get<std::vector<double>>();
    s.stdev = j.at("std").get<std::vector<double>>();
    s.floored = j.at("floored").get<std::vector<std::size_t>>();
    return s;
  }
};

inline NormStats fit_stats(const Dataset& train) {
  if (train.empty()) throw ContractError("fit_stats: empty training dataset");
  const std::size_t n = train.front().joint_count();
  const std::size_t feats = n * 3;
  NormStats stats;
  stats.joints = n;
  stats.mean.assign(feats, 0.0);
  stats.stdev.assign(feats, 0.0);
  std::size_t count = 0;
  for (const auto& seq : train) {
    if (seq.joint_count() != n) throw DataError("fit_stats: inconsistent joint counts");
    const auto& d = seq.frames.data();
    for (std::size_t t = 0; t < seq.frame_count(); ++t)
      for (std::size_t fidx = 0; fidx < feats; ++fidx) stats.mean[fidx] += d[t * feats + fidx];
    count += seq.frame_count();
  }
  for (double& m : stats.mean) m /= static_cast<double>(count);
  for (const auto& seq : train) {
    const auto& d = seq.frames.data();
    for (std::size_t t = 0; t < seq.frame_count(); ++t)
      for (std::size_t fidx = 0; fidx < feats; ++fidx) {
        const double dev = d[t * feats + fidx] - stats.mean[fidx];
        stats.stdev[fidx] += dev * dev;
      }
  }
  for (std::size_t fidx = 0; fidx < feats; ++fidx) {
    stats.stdev[fidx] = std::sqrt(stats.stdev[fidx] / static_cast<double>(count));
    if (stats.stdev[fidx] < 1e-8) {
      stats.stdev[fidx] = 1e-8;
      stats.floored.push_back(fidx);
    }
  }
  return stats;
}

inline Dataset apply_stats(const Dataset& dataset, const NormStats& stats) {
  Dataset out = dataset;
  const std::size_t feats = stats.joints * 3;
  for (auto& seq : out) {
    if (seq.joint_count() != stats.joints)
      throw DataError("apply_stats: joint count mismatch with fitted statistics");
    seq.frames = seq.frames.detach();
    auto& d = seq.frames.mutable_data();
    for (std::size_t t = 0; t < seq.frame_count(); ++t)
      for (std::size_t fidx = 0; fidx < feats; ++fidx)
        d[t * feats + fidx] = (d[t * feats + fidx] - stats.mean[fidx]) / stats.stdev[fidx];
  }
  return out;
}

inline std::pair<Dataset, NormStats> standardize(const Dataset& dataset) {
  NormStats stats = fit_stats(dataset);
  return {apply_stats(dataset, stats), std::move(stats)};
}

// ---------------------------------------------------------------------------
// Stratified k-fold planning over base sequences; augmented copies inherit
// the fold of their source so no information leaks across the split.

struct FoldPlan {
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::map<std::string, std::size_t> assignments;  // sequence id -> fold

  nlohmann::json to_json() const {
    return {{"k", k}, {"seed", seed}, {"assignments", assignments}};
  }
  static FoldPlan from_json(const nlohmann::json& j) {
    FoldPlan p;
    p.k = j.at("k").get<std::size_t>();
    p.seed = j.at("seed").get<std::uint64_t>();
    p.assignments = j.at("assignments").get<std::map<std::string, std::size_t>>();
    return p;
  }
};

inline FoldPlan make_folds(const Dataset& dataset, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ContractError("make_folds: need k >= 2");
  // Base sequences in first-seen order, grouped by label.
  std::vector<std::string> base_order;
  std::map<std::string, int> base_label;
  for (const auto& seq : dataset)
    if (!base_label.count(seq.base_id)) {
      base_label[seq.base_id] = seq.label;
      base_order.push_back(seq.base_id);
    }
  if (base_order.size() < k)
    throw ContractError("make_folds: only " + std::to_string(base_order.size()) +
                        " base sequences for k = " + std::to_string(k));
  std::map<int, std::vector<std::string>> by_label;
  for (const auto& id : base_order) by_label[base_label[id]].push_back(id);

  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  std::map<std::string, std::size_t> base_fold;
  for (auto& [label, ids] : by_label) {
    std::mt19937_64 rng(mix_seed(seed, 1000003 + static_cast<std::uint64_t>(label)));
    std::shuffle(ids.begin(), ids.end(), rng);
    for (std::size_t i = 0; i < ids.size(); ++i) base_fold[ids[i]] = i % k;
  }
  for (const auto& seq : dataset) plan.assignments[seq.id] = base_fold.at(seq.base_id);
  return plan;
}

inline Dataset fold_split(const Dataset& dataset, const FoldPlan& plan, std::size_t fold,
                          bool train) {
  Dataset out;
  for (const auto& seq : dataset) {
    const auto it = plan.assignments.find(seq.id);
    if (it == plan.assignments.end())
      throw ContractError("fold_split: sequence '" + seq.id + "' missing from the fold plan");
    if ((it->second == fold) != train) out.push_back(seq);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Length conformance: center crop, or pad by repeating edge frames.

inline SkeletonSequence fit_length(const SkeletonSequence& seq, std::size_t target) {
  if (target == 0) throw ContractError("fit_length: target length must be >= 1");
  const std::size_t t = seq.frame_count(), n = seq.joint_count();
  if (t == target) return seq;
  SkeletonSequence out = seq;
  std::vector<double> d(target * n * 3);
  const auto& src = seq.frames.data();
  const std::size_t row = n * 3;
  for (std::size_t ti = 0; ti < target; ++ti) {
    std::size_t si;
    if (t > target) {
      si = (t - target) / 2 + ti;  // center crop
    } else {
      const std::size_t pad = (target - t) / 2;
      si = ti < pad ? 0 : std::min(ti - pad, t - 1);  // edge padding
    }
    std::copy(src.begin() + si * row, src.begin() + (si + 1) * row, d.begin() + ti * row);
  }
  out.frames = Tensor({target, n, 3}, std::move(d));
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic gait generator: a stand-in for the clinical datasets. Classes
// share the same mean pose (random global phase cancels first moments) and
// differ in gait frequency, left/right amplitude asymmetry, and noise level.

struct SynthSpec {
  std::size_t classes = 2;
  std::size_t per_class = 20;
  std::size_t frames = 32;
  std::size_t joints = 5;

  // class c walks at base_frequency + c * frequency_step cycles per frame
  double base_frequency = 0.0625;
  double frequency_step = 0.0625;
  double amplitude = 1.0;
  double asymmetry_step = 0.35;  // left/right amplitude skew per class
  double noise_base = 0.01;
  double noise_step = 0.01;
};

inline Dataset synth_gait(const SynthSpec& spec, std::uint64_t seed) {
  if (spec.classes == 0 || spec.per_class == 0 || spec.frames == 0 || spec.joints == 0)
    throw ContractError("synth_gait: all counts must be positive");
  Dataset out;
  const double two_pi = 2.0 * 3.14159265358979323846;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    const double freq = spec.base_frequency + spec.frequency_step * static_cast<double>(c);
    const double asym = spec.asymmetry_step * static_cast<double>(c);
    const double sigma = spec.noise_base + spec.noise_step * static_cast<double>(c);
    for (std::size_t s = 0; s < spec.per_class; ++s) {
      std::mt19937_64 rng(mix_seed(seed, c * spec.per_class + s));
      std::uniform_real_distribution<double> phase_dist(0.0, two_pi);
      std::normal_distribution<double> noise(0.0, sigma);
      const double phase = phase_dist(rng);
      std::vector<double> d(spec.frames * spec.joints * 3);
      for (std::size_t t = 0; t < spec.frames; ++t)
        for (std::size_t j = 0; j < spec.joints; ++j) {
          const double side = (j % 2 == 0) ? 1.0 : -1.0;
          const double amp = spec.amplitude * (1.0 + asym * side);
          const double arg =
              two_pi * freq * static_cast<double>(t) + phase + 0.6 * static_cast<double>(j);
          const std::size_t base = (t * spec.joints + j) * 3;
          d[base + 0] = amp * std::sin(arg) + noise(rng);
          d[base + 1] = amp * std::cos(arg) + noise(rng);
          d[base + 2] = 0.3 * static_cast<double>(j) + 0.2 * std::sin(arg) + noise(rng);
        }
      SkeletonSequence seq;
      seq.id = "synth-c" + std::to_string(c) + "-s" + std::to_string(s);
      seq.base_id = seq.id;
      seq.subject = seq.id;
      seq.label = static_cast<int>(c);
      seq.source = SeqSource::synthetic;
      seq.frames = Tensor({spec.frames, spec.joints, 3}, std::move(d));
      out.push_back(std::move(seq));
    }
  }
  return out;
}

// Dataset -> model input batch: [B, T, N, 3] in the order given.
inline Tensor stack_batch(const Dataset& batch) {
  if (batch.empty()) throw ContractError("stack_batch: empty batch");
  const std::size_t t = batch.front().frame_count(), n = batch.front().joint_count();
  std::vector<double> d;
  d.reserve(batch.size() * t * n * 3);
  for (const auto& seq : batch) {
    if (seq.frame_count() != t || seq.joint_count() != n)
      throw ShapeError("stack_batch: inconsistent sequence shapes in batch");
    d.insert(d.end(), seq.frames.data().begin(), seq.frames.data().end());
  }
  return Tensor({batch.size(), t, n, 3}, std::move(d));
}

inline std::vector<int> batch_labels(const Dataset& batch) {
  std::vector<int> out;
  out.reserve(batch.size());
  for (const auto& seq : batch) out.push_back(seq.label);
  return out;
}

}  // namespace dynstg
