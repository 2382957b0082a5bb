#pragma once

#include <map>
#include <vector>

#include "funfreeze/model.hpp"
#include "funfreeze/tensor.hpp"

namespace funfreeze {

enum class LrKind { Constant, Linear };

struct LrSchedule {
    LrKind kind = LrKind::Linear;
    double base_lr = 5e-3;
    long total_steps = 1;

    // No warmup. Linear decays to 0 at total_steps; step 0 gets base_lr.
    double at(long step) const;
};

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

// Scales grads in place so their global L2 norm is at most max_norm.
// Returns the pre-clip norm.
double clip_global_norm(std::vector<Tensor>& grads, double max_norm);

// AdamW with decoupled weight decay: p <- p * (1 - lr * wd) before the
// moment update. Moment slots are created lazily on a parameter's first
// update, so a freshly unfrozen layer starts from zero moments and its own
// bias-correction clock.
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

    void step(AdapterStack& stack, const std::vector<ParamRef>& refs,
              const std::vector<Tensor>& grads, double lr);

    struct MomentSlot {
        Tensor m;
        Tensor v;
        long t = 0;
    };
    // Null until the parameter's first update.
    const MomentSlot* slot(const ParamRef& ref) const;

private:
    AdamWConfig cfg_;
    std::map<ParamRef, MomentSlot> slots_;
};

}  // namespace funfreeze
