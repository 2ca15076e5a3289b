#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fvar/layers.h"

namespace fvar {

struct ParamCheck {
  std::string name;
  std::size_t count = 0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  bool pass = true;
  // Set when the loss became non-finite; the check stops at that point.
  bool aborted = false;
  std::string message;
};

// Relative error used by the checker: |a - n| / max(|a|, |n|, floor). The
// floor keeps components that are zero in both routes from dividing by zero.
double relative_error(double analytic, double numeric, double floor = 1e-6);

// Central-difference check of `analytic` against `loss` for every scalar of
// every tensor in `params`. Each parameter is restored after probing.
GradCheckReport check_gradients(const std::vector<Tensor<double>*>& params,
                                const std::vector<Tensor<double>>& analytic,
                                const std::function<double()>& loss, double rtol,
                                double step = 1e-5,
                                const std::vector<std::string>& names = {});

// Network whose output is (frames, classes) logits, with mean per-frame
// cross-entropy against `label`. Runs at 64-bit precision only.
GradCheckReport finite_difference_check(Sequential<double>& net, const Tensor<double>& input,
                                        std::size_t label, double rtol, double step = 1e-5);

}  // namespace fvar
