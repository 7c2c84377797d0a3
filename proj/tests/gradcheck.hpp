#pragma once

// Central finite-difference oracle. Independent of the reverse-mode path it
// checks: it only re-evaluates forward values under point perturbations.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "patchalign/params.hpp"
#include "patchalign/tensor.hpp"

namespace patchalign::testing {

struct GradCheckReport {
  size_t checked = 0;
  size_t mismatched = 0;        // rel error >= tol and |analytic| >= tiny
  size_t excused = 0;           // rel error >= tol but |analytic| < tiny
  double worst_rel = 0.0;
  std::vector<std::string> failures;

  bool ok() const { return mismatched == 0; }
  double pass_fraction() const {
    return checked == 0 ? 1.0 : 1.0 - static_cast<double>(mismatched + excused) / checked;
  }
};

// loss_builder must rebuild the loss graph from current parameter values.
// check_groups: empty = check every trainable tensor.
inline GradCheckReport finite_difference_check(
    ParameterStore& params, const std::function<Tensor()>& loss_builder,
    double h = 1e-3, double tol = 1e-4, double tiny = 1e-8,
    const std::vector<std::string>& check_groups = {}) {
  auto in_scope = [&](const std::string& name) {
    if (!check_groups.empty()) {
      std::string g = ParameterStore::group_of(name);
      bool found = false;
      for (const auto& cg : check_groups) found = found || cg == g;
      if (!found) return false;
    }
    return true;
  };

  // Analytic pass.
  params.zero_grads();
  Tensor loss = loss_builder();
  loss.backward();
  std::vector<std::pair<std::string, std::vector<real>>> analytic;
  for (const auto& [name, t] : params.items()) {
    if (!t.requires_grad() || !in_scope(name)) continue;
    std::vector<real> g = t.grad();
    if (g.empty()) g.assign(t.size(), 0.0);
    analytic.emplace_back(name, std::move(g));
  }

  // Forward-only evaluations: drop requires_grad so no graph is built.
  std::vector<std::pair<Tensor, bool>> saved;
  for (const auto& [name, t] : params.items()) {
    saved.emplace_back(t, t.requires_grad());
    Tensor(t).set_requires_grad(false);
  }
  auto eval = [&]() { return loss_builder().item(); };

  GradCheckReport rep;
  for (auto& [name, grads] : analytic) {
    Tensor t = params.get(name);
    for (size_t i = 0; i < t.size(); ++i) {
      real saved_v = t.value()[i];
      t.value()[i] = saved_v + h;
      real fp = eval();
      t.value()[i] = saved_v - h;
      real fm = eval();
      t.value()[i] = saved_v;
      real fd = (fp - fm) / (2.0 * h);
      real g = grads[i];
      real denom = std::max(std::abs(g), std::abs(fd));
      real rel = denom > 0.0 ? std::abs(g - fd) / denom : 0.0;
      ++rep.checked;
      rep.worst_rel = std::max(rep.worst_rel, rel);
      if (rel >= tol) {
        if (std::abs(g) < tiny) {
          ++rep.excused;
        } else {
          ++rep.mismatched;
          if (rep.failures.size() < 16)
            rep.failures.push_back(name + "[" + std::to_string(i) + "] analytic=" +
                                   std::to_string(g) + " fd=" + std::to_string(fd));
        }
      }
    }
  }
  for (auto& [t, flag] : saved) t.set_requires_grad(flag);
  return rep;
}

}  // namespace patchalign::testing
