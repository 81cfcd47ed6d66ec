#pragma once

#include <string>

#include <json.hpp>

#include "dynstg/common.hpp"

namespace dynstg {

// One-vs-rest confusion tallies per class. Counts are mergeable, so parallel
// fold evaluation can sum partials.
struct ConfusionCounts {
  std::size_t num_classes = 0;
  std::size_t total = 0;
  std::vector<std::size_t> tp, tn, fp, fn;

  ConfusionCounts() = default;
  explicit ConfusionCounts(std::size_t k)
      : num_classes(k), tp(k, 0), tn(k, 0), fp(k, 0), fn(k, 0) {}

  ConfusionCounts& operator+=(const ConfusionCounts& other) {
    if (num_classes != other.num_classes)
      throw ContractError("confusion counts: class count mismatch in merge");
    total += other.total;
    for (std::size_t c = 0; c < num_classes; ++c) {
      tp[c] += other.tp[c];
      tn[c] += other.tn[c];
      fp[c] += other.fp[c];
      fn[c] += other.fn[c];
    }
    return *this;
  }
};

inline ConfusionCounts confusion(const std::vector<int>& predictions,
                                 const std::vector<int>& labels, std::size_t k) {
  if (predictions.size() != labels.size())
    throw ContractError("confusion: " + std::to_string(predictions.size()) +
                        " predictions vs " + std::to_string(labels.size()) + " labels");
  ConfusionCounts counts(k);
  counts.total = predictions.size();
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const int p = predictions[i], l = labels[i];
    if (p < 0 || l < 0 || static_cast<std::size_t>(p) >= k || static_cast<std::size_t>(l) >= k)
      throw ContractError("confusion: class index outside [0, " + std::to_string(k) + ")");
    for (std::size_t c = 0; c < k; ++c) {
      const bool pc = static_cast<std::size_t>(p) == c;
      const bool lc = static_cast<std::size_t>(l) == c;
      if (pc && lc)
        ++counts.tp[c];
      else if (pc && !lc)
        ++counts.fp[c];
      else if (!pc && lc)
        ++counts.fn[c];
      else
        ++counts.tn[c];
    }
  }
  return counts;
}

struct ClassMetrics {
  double accuracy = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
};

struct MetricsReport {
  std::vector<ClassMetrics> per_class;
  ClassMetrics macro;
  std::vector<std::string> flags;  // zero-denominator notes

  nlohmann::json to_json() const {
    auto cm = [](const ClassMetrics& m) {
      return nlohmann::json{{"accuracy", m.accuracy},
                            {"sensitivity", m.sensitivity},
                            {"specificity", m.specificity},
                            {"precision", m.precision},
                            {"f1", m.f1}};
    };
    nlohmann::json per = nlohmann::json::array();
    for (const auto& m : per_class) per.push_back(cm(m));
    return {{"per_class", per}, {"macro", cm(macro)}, {"flags", flags}};
  }
};

// Accuracy, sensitivity, specificity, precision, F1 per class, macro-averaged
// across classes. Zero-denominator ratios come back as 0 with a flag instead
// of NaN.
inline MetricsReport metrics(const ConfusionCounts& counts) {
  MetricsReport report;
  auto ratio = [&report](std::size_t num, std::size_t den, const std::string& what,
                         std::size_t cls) {
    if (den == 0) {
      report.flags.push_back(what + " undefined for class " + std::to_string(cls) +
                             " (zero denominator)");
      return 0.0;
    }
    return static_cast<double>(num) / static_cast<double>(den);
  };
  for (std::size_t c = 0; c < counts.num_classes; ++c) {
    ClassMetrics m;
    m.accuracy = ratio(counts.tp[c] + counts.tn[c],
                       counts.tp[c] + counts.tn[c] + counts.fp[c] + counts.fn[c], "accuracy", c);
    m.sensitivity = ratio(counts.tp[c], counts.tp[c] + counts.fn[c], "sensitivity", c);
    m.specificity = ratio(counts.tn[c], counts.tn[c] + counts.fp[c], "specificity", c);
    m.precision = ratio(counts.tp[c], counts.tp[c] + counts.fp[c], "precision", c);
    if (m.precision + m.sensitivity == 0.0) {
      report.flags.push_back("f1 undefined for class " + std::to_string(c));
      m.f1 = 0.0;
    } else {
      m.f1 = 2.0 * m.precision * m.sensitivity / (m.precision + m.sensitivity);
    }
    report.per_class.push_back(m);
  }
  const double k = static_cast<double>(counts.num_classes);
  for (const auto& m : report.per_class) {
    report.macro.accuracy += m.accuracy / k;
    report.macro.sensitivity += m.sensitivity / k;
    report.macro.specificity += m.specificity / k;
    report.macro.precision += m.precision / k;
    report.macro.f1 += m.f1 / k;
  }
  return report;
}

}  // namespace dynstg
