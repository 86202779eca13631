#pragma once

#include <functional>
#include <string>
#include <vector>

#include "objgan/core/tensor.hpp"

namespace objgan::ag {

struct GradCheckResult {
  double rel_err = 0;      // ||g_auto - g_fd|| / max(||g_auto||, ||g_fd||, tiny)
  std::size_t checked = 0; // number of scalar coordinates compared
  bool ok(double tol = 1e-4) const { return rel_err <= tol; }
};

// Central-difference check of d f / d inputs. `f` must rebuild the graph from
// the current input values on every call and return a scalar. At most
// `max_coords` coordinates per input are probed (evenly strided).
GradCheckResult check_gradients(const std::function<Var()>& f, const std::vector<Var>& inputs, double h = 1e-6,
                                std::size_t max_coords = 200);

}  // namespace objgan::ag
