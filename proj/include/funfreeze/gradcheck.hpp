#pragma once

#include <functional>
#include <vector>

#include "funfreeze/tensor.hpp"

namespace funfreeze {

// Central finite differences, (f(p+h) - f(p-h)) / 2h per coordinate. The
// function is re-evaluated from scratch for every perturbation, so this is
// independent of the tape's reverse sweep and serves as its oracle.
//
// `f` maps the full parameter list to a scalar; params are perturbed in place
// and restored afterwards.
std::vector<Tensor> finite_diff_grad(
    const std::function<double(const std::vector<Tensor>&)>& f,
    std::vector<Tensor> params, double h);

// |a - b| relative to max(1, |b|). Gradient checks compare against this with
// a 1e-4 budget: absolute below magnitude 1, relative above.
double grad_rel_error(double analytic, double numeric);

double max_grad_rel_error(const Tensor& analytic, const Tensor& numeric);

}  // namespace funfreeze
