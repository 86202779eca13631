#include "objgan/core/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace objgan::ag {

GradCheckResult check_gradients(const std::function<Var()>& f, const std::vector<Var>& inputs, double h,
                                std::size_t max_coords) {
  for (const auto& in : inputs) in.node()->grad.clear();
  Var out = f();
  if (out.numel() != 1) throw ShapeError("check_gradients: objective must be scalar");
  out.backward();

  double diff2 = 0, a2 = 0, n2 = 0;
  GradCheckResult res;
  for (const auto& in : inputs) {
    const std::vector<double> ga = in.grad();
    const std::size_t n = in.numel();
    const std::size_t stride = std::max<std::size_t>(1, n / std::max<std::size_t>(1, max_coords));
    double* p = const_cast<Var&>(in).mutable_data();
    for (std::size_t i = 0; i < n; i += stride) {
      const double keep = p[i];
      double fp, fm;
      {
        NoGradGuard ng;
        p[i] = keep + h;
        fp = f().item();
        p[i] = keep - h;
        fm = f().item();
      }
      p[i] = keep;
      const double gn = (fp - fm) / (2 * h);
      diff2 += (ga[i] - gn) * (ga[i] - gn);
      a2 += ga[i] * ga[i];
      n2 += gn * gn;
      ++res.checked;
    }
  }
  const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
  res.rel_err = std::sqrt(diff2) / denom;
  return res;
}

}  // namespace objgan::ag
