#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "incdet/detector.hpp"

namespace testutil {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  double worst_analytic = 0.0;
  double worst_fd = 0.0;
};

/// Central finite differences over every model parameter against an analytic
/// gradient, with a step scaled to the parameter magnitude. rel_floor guards
/// the denominator for parameters the loss genuinely ignores.
inline GradCheckReport check_gradients(incdet::DetectorModel& model,
                                       const incdet::ModelGrads& analytic,
                                       const std::function<double(const incdet::DetectorModel&)>& loss,
                                       double step = 1e-5, double rel_floor = 1e-6) {
  GradCheckReport rep;
  auto named = model.named_parameters();
  const auto grad_tensors = analytic.tensors();
  for (std::size_t p = 0; p < named.size(); ++p) {
    incdet::Tensor* theta = named[p].second;
    const incdet::Tensor* g = grad_tensors[p];
    for (std::size_t i = 0; i < theta->size(); ++i) {
      const double orig = (*theta)[i];
      const double h = step * std::max(1.0, std::abs(orig));
      (*theta)[i] = orig + h;
      const double lp = loss(model);
      (*theta)[i] = orig - h;
      const double lm = loss(model);
      (*theta)[i] = orig;
      const double fd = (lp - lm) / (2.0 * h);
      const double an = (*g)[i];
      const double denom = std::max({std::abs(fd), std::abs(an), rel_floor});
      const double rel = std::abs(fd - an) / denom;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_param = named[p].first + "[" + std::to_string(i) + "]";
        rep.worst_analytic = an;
        rep.worst_fd = fd;
      }
    }
  }
  return rep;
}

}  // namespace testutil
