#include "funfreeze/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace funfreeze {

std::vector<Tensor> finite_diff_grad(
    const std::function<double(const std::vector<Tensor>&)>& f,
    std::vector<Tensor> params, double h) {
    if (h <= 0.0) throw std::invalid_argument("finite_diff_grad: h must be positive");
    std::vector<Tensor> grads;
    grads.reserve(params.size());
    for (const Tensor& p : params) grads.push_back(Tensor::zeros(p.shape));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        for (std::size_t i = 0; i < params[pi].size(); ++i) {
            double orig = params[pi].elems[i];
            params[pi].elems[i] = orig + h;
            double fp = f(params);
            params[pi].elems[i] = orig - h;
            double fm = f(params);
            params[pi].elems[i] = orig;
            grads[pi].elems[i] = (fp - fm) / (2.0 * h);
        }
    }
    return grads;
}

double grad_rel_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
}

double max_grad_rel_error(const Tensor& analytic, const Tensor& numeric) {
    if (!analytic.same_shape(numeric)) {
        throw std::invalid_argument("max_grad_rel_error: shape mismatch");
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        worst = std::max(worst, grad_rel_error(analytic.elems[i], numeric.elems[i]));
    }
    return worst;
}

}  // namespace funfreeze
