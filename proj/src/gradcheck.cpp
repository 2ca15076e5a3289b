#include "fvar/gradcheck.h"

#include <algorithm>
#include <cmath>

#include "fvar/loss.h"

namespace fvar {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport check_gradients(const std::vector<Tensor<double>*>& params,
                                const std::vector<Tensor<double>>& analytic,
                                const std::function<double()>& loss, double rtol, double step,
                                const std::vector<std::string>& names) {
  if (params.size() != analytic.size()) throw std::invalid_argument("check_gradients: gradient count mismatch");
  GradCheckReport report;
  const double base = loss();
  if (!std::isfinite(base)) {
    report.pass = false;
    report.aborted = true;
    report.message = "non-finite loss at the unperturbed point";
    return report;
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor<double>& t = *params[p];
    if (t.shape() != analytic[p].shape()) throw ShapeError("check_gradients", t.shape(), analytic[p].shape());
    ParamCheck pc;
    pc.name = p < names.size() ? names[p] : "param" + std::to_string(p);
    pc.count = t.size();
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double saved = t[i];
      t[i] = saved + step;
      const double up = loss();
      t[i] = saved - step;
      const double down = loss();
      t[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        report.pass = false;
        report.aborted = true;
        report.message = "non-finite loss while probing " + pc.name + "[" + std::to_string(i) + "]";
        report.params.push_back(pc);
        return report;
      }
      const double numeric = (up - down) / (2.0 * step);
      const double err = relative_error(analytic[p][i], numeric);
      if (i == 0 || err > pc.max_rel_error) {
        pc.max_rel_error = err;
        pc.worst_index = i;
        pc.analytic = analytic[p][i];
        pc.numeric = numeric;
      }
    }
    pc.pass = pc.max_rel_error <= rtol;
    report.pass = report.pass && pc.pass;
    report.params.push_back(pc);
  }
  return report;
}

GradCheckReport finite_difference_check(Sequential<double>& net, const Tensor<double>& input,
                                        std::size_t label, double rtol, double step) {
  Tape<double> tape;
  const Tensor<double> logits = net.forward(input, &tape);
  Tensor<double> dlogits;
  const double loss0 = cross_entropy(logits, label, &dlogits);
  if (!std::isfinite(loss0)) {
    GradCheckReport r;
    r.pass = false;
    r.aborted = true;
    r.message = "non-finite loss";
    return r;
  }
  BackwardResult<double> grads = net.backward(tape, dlogits);
  std::vector<std::string> names;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const auto& layer = net.layer(l);
    for (std::size_t k = 0; k < layer.params.size(); ++k) {
      names.push_back(std::string(to_string(layer.spec.kind)) + "#" + std::to_string(l) +
                      (k == 0 ? ".weight" : ".bias"));
    }
  }
  auto loss = [&]() { return cross_entropy(net.forward(input), label); };
  return check_gradients(net.parameters(), grads.param_grads, loss, rtol, step, names);
}

}  // namespace fvar
