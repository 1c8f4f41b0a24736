#include "grela/gradcheck.hpp"

#include <cmath>
#include <sstream>

#include "grela/error.hpp"
#include "grela/tape.hpp"

namespace grela {

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw ContractError("finite_diff_grad: step must be positive");
  Tensor probe = x.clone();
  Tensor grad(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw NumericError("finite_diff_grad: non-finite evaluation at coordinate " + std::to_string(i));
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

GradCheckReport check_gradients(const std::function<Tensor()>& loss_fn,
                                const std::vector<std::pair<std::string, Tensor>>& params,
                                double h, double skip_below, bool extrapolate) {
  std::vector<Tensor> leaves;
  for (const auto& [name, p] : params) {
    Tensor t = p;
    t.set_requires_grad(true);
    t.zero_grad();
    leaves.push_back(t);
  }
  {
    Tape tape;
    Tape::Scope scope(tape);
    Tensor loss = loss_fn();
    tape.backward(loss);
  }

  GradCheckReport report;
  for (std::size_t pi = 0; pi < leaves.size(); ++pi) {
    Tensor& p = leaves[pi];
    const Tensor analytic = p.grad_tensor();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double a = analytic[i];
      if (std::fabs(a) < skip_below) {
        ++report.skipped;
        continue;
      }
      auto central = [&](double step) {
        const double orig = p[i];
        p[i] = orig + step;
        const double up = loss_fn().item();
        p[i] = orig - step;
        const double down = loss_fn().item();
        p[i] = orig;
        if (!std::isfinite(up) || !std::isfinite(down))
          throw NumericError("check_gradients: non-finite loss while perturbing " + params[pi].first);
        return (up - down) / (2.0 * step);
      };
      const double numeric = extrapolate ? (4.0 * central(h / 2) - central(h)) / 3.0 : central(h);
      const double rel = std::fabs(a - numeric) / std::max(std::fabs(a), std::fabs(numeric));
      ++report.checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        std::ostringstream os;
        os.precision(10);
        os << params[pi].first << '[' << i << "] analytic=" << a << " numeric=" << numeric;
        report.worst = os.str();
      }
    }
  }
  return report;
}

}  // namespace grela
