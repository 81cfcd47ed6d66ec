#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "dynstg/ops.hpp"

namespace dynstg {

struct GradCheckOptions {
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  std::size_t sample_threshold = 1000;  // sample coordinates above this many parameters
  std::size_t sample_size = 256;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  struct Entry {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t coords_checked = 0;
    std::size_t worst_coord = 0;
  };
  std::vector<Entry> per_param;
  double max_rel_error = 0.0;
  double epsilon = 0.0;
  bool pass = false;
  std::string failure;  // set when a perturbed loss came out non-finite
};

// Compares tape gradients of a deterministic scalar loss against central
// finite differences (f(t+e) - f(t-e)) / 2e per coordinate. Above
// sample_threshold total parameters, a seeded subset of coordinates is
// checked, at least one per tensor. Relative error uses the denominator
// max(|analytic|, |numeric|, 1e-12).
inline GradCheckReport grad_check(const std::function<Tensor()>& loss_fn,
                                  const std::vector<NamedParam>& params,
                                  const GradCheckOptions& opts = {}) {
  if (opts.epsilon == 0.0) throw ContractError("grad_check: epsilon must be nonzero");
  if (opts.epsilon < 1e-8 || opts.epsilon > 1e-4)
    throw ContractError("grad_check: epsilon must lie in [1e-8, 1e-4]");

  GradCheckReport report;
  report.epsilon = opts.epsilon;

  std::vector<std::vector<double>> analytic(params.size());
  {
    Tape tape;
    for (const auto& [name, p] : params) {
      if (!p.requires_grad())
        throw ContractError("grad_check: parameter '" + name + "' does not require gradients");
      const_cast<Tensor&>(p).zero_grad();
    }
    Tensor loss = loss_fn();
    if (loss.numel() != 1)
      throw ContractError("grad_check: loss_fn must return a scalar");
    if (!loss.all_finite()) {
      report.failure = "loss non-finite at the unperturbed point";
      return report;
    }
    tape.backward(loss);
    for (std::size_t i = 0; i < params.size(); ++i) analytic[i] = params[i].second.grad();
  }

  std::size_t total = 0;
  for (const auto& [name, p] : params) total += p.numel();

  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const auto& [name, p] = params[pi];
    std::vector<std::size_t> coords;
    if (total <= opts.sample_threshold) {
      coords.resize(p.numel());
      for (std::size_t i = 0; i < p.numel(); ++i) coords[i] = i;
    } else {
      std::size_t want = static_cast<std::size_t>(
          std::llround(static_cast<double>(opts.sample_size) * static_cast<double>(p.numel()) /
                       static_cast<double>(total)));
      want = std::min(std::max<std::size_t>(want, 1), p.numel());
      std::mt19937_64 rng(mix_seed(opts.seed, pi));
      std::vector<std::size_t> all(p.numel());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
      for (std::size_t i = 0; i < want; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, all.size() - 1);
        std::swap(all[i], all[pick(rng)]);
      }
      coords.assign(all.begin(), all.begin() + want);
    }

    GradCheckReport::Entry entry;
    entry.name = name;
    entry.coords_checked = coords.size();
    auto& data = const_cast<Tensor&>(p).mutable_data();
    for (std::size_t c : coords) {
      const double saved = data[c];
      double fp = 0.0, fm = 0.0;
      bool blew_up = false;
      {
        NoTape guard;
        try {
          data[c] = saved + opts.epsilon;
          fp = loss_fn().value();
          data[c] = saved - opts.epsilon;
          fm = loss_fn().value();
        } catch (const std::exception&) {
          blew_up = true;
        }
        data[c] = saved;
      }
      if (blew_up || !std::isfinite(fp) || !std::isfinite(fm)) {
        report.failure = "non-finite loss while perturbing '" + name + "' coordinate " +
                         std::to_string(c);
        report.per_param.push_back(entry);
        return report;
      }
      const double numeric = (fp - fm) / (2.0 * opts.epsilon);
      const double a = analytic[pi][c];
      const double rel =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-12});
      if (rel > entry.max_rel_error) {
        entry.max_rel_error = rel;
        entry.worst_coord = c;
      }
    }
    worst = std::max(worst, entry.max_rel_error);
    report.per_param.push_back(std::move(entry));
  }
  report.max_rel_error = worst;
  report.pass = report.failure.empty() && worst < opts.tolerance;
  return report;
}

}  // namespace dynstg
