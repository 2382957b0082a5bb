#include "funfreeze/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace funfreeze {

double LrSchedule::at(long step) const {
    if (total_steps < 1) throw std::invalid_argument("lr schedule needs total_steps >= 1");
    if (kind == LrKind::Constant) return base_lr;
    long remaining = total_steps - step;
    if (remaining < 0) remaining = 0;
    return base_lr * static_cast<double>(remaining) / static_cast<double>(total_steps);
}

double clip_global_norm(std::vector<Tensor>& grads, double max_norm) {
    if (max_norm <= 0.0) throw std::invalid_argument("clip_global_norm: max_norm must be > 0");
    double sq = 0.0;
    for (const Tensor& g : grads) {
        for (double v : g.elems) sq += v * v;
    }
    double norm = std::sqrt(sq);
    if (norm > max_norm) {
        double scale = max_norm / norm;
        for (Tensor& g : grads) {
            for (double& v : g.elems) v *= scale;
        }
    }
    return norm;
}

void AdamW::step(AdapterStack& stack, const std::vector<ParamRef>& refs,
                 const std::vector<Tensor>& grads, double lr) {
    if (refs.size() != grads.size()) {
        throw std::invalid_argument("adamw: parameter and gradient counts differ");
    }
    for (std::size_t i = 0; i < refs.size(); ++i) {
        Tensor& p = param_tensor(stack, refs[i]);
        const Tensor& g = grads[i];
        if (!p.same_shape(g)) {
            throw std::invalid_argument("adamw: gradient shape " + shape_str(g) +
                                        " does not match " + refs[i].name());
        }
        MomentSlot& slot = slots_[refs[i]];
        if (slot.t == 0) {
            slot.m = Tensor::zeros(p.shape);
            slot.v = Tensor::zeros(p.shape);
        }
        slot.t += 1;
        double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(slot.t));
        double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(slot.t));
        for (std::size_t j = 0; j < p.size(); ++j) {
            p.elems[j] *= 1.0 - lr * cfg_.weight_decay;
            double& m = slot.m.elems[j];
            double& v = slot.v.elems[j];
            m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g.elems[j];
            v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.elems[j] * g.elems[j];
            double mhat = m / bc1;
            double vhat = v / bc2;
            p.elems[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

const AdamW::MomentSlot* AdamW::slot(const ParamRef& ref) const {
    auto it = slots_.find(ref);
    return it == slots_.end() ? nullptr : &it->second;
}

}  // namespace funfreeze
