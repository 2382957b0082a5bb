#pragma once

#include <cstdint>
#include <string>
#include <tuple>
#include <vector>

#include "funfreeze/tape.hpp"
#include "funfreeze/tensor.hpp"

namespace funfreeze {

// One layer of the stack: a frozen base transform (affine map + layer norm)
// followed by a residual bottleneck adapter (down-projection, ReLU,
// up-projection). Only the adapter tensors ever train after initialization.
struct AdapterLayer {
    Tensor base_weight;  // h x h
    Tensor base_bias;    // h
    Tensor norm_scale;   // h, frozen, part of the base
    Tensor norm_shift;   // h
    Tensor down_weight;  // h x r
    Tensor down_bias;    // r
    Tensor up_weight;    // r x h
    Tensor up_bias;      // h
};

struct AdapterStack {
    std::vector<AdapterLayer> layers;  // index 0 = bottom, L-1 = top
    Tensor head_weight;                // C x h
    Tensor head_bias;                  // C

    int layer_count() const { return static_cast<int>(layers.size()); }
    std::size_t hidden() const { return layers.front().base_weight.rows(); }
    std::size_t classes() const { return head_weight.rows(); }
    std::size_t bottleneck() const { return layers.front().down_weight.cols(); }
};

// Trainability flags. Layer flags only ever flip false -> true within a run;
// the head is trainable for the whole run.
struct FreezeMask {
    std::vector<bool> trainable;
    bool head_trainable = true;

    static FreezeMask all_frozen(int layer_count) {
        return FreezeMask{std::vector<bool>(static_cast<std::size_t>(layer_count), false), true};
    }
    static FreezeMask all_trainable(int layer_count) {
        return FreezeMask{std::vector<bool>(static_cast<std::size_t>(layer_count), true), true};
    }
    int trainable_layer_count() const {
        int n = 0;
        for (bool b : trainable) n += b ? 1 : 0;
        return n;
    }
};

enum class ParamField {
    BaseWeight,
    BaseBias,
    NormScale,
    NormShift,
    DownWeight,
    DownBias,
    UpWeight,
    UpBias,
    HeadWeight,
    HeadBias,
};

// Stable identifier for one parameter tensor. layer is -1 for head fields.
struct ParamRef {
    ParamField field;
    int layer = -1;

    std::string name() const;
    bool is_adapter() const {
        return field == ParamField::DownWeight || field == ParamField::DownBias ||
               field == ParamField::UpWeight || field == ParamField::UpBias;
    }
    bool is_head() const {
        return field == ParamField::HeadWeight || field == ParamField::HeadBias;
    }
    friend bool operator==(const ParamRef& a, const ParamRef& b) {
        return a.field == b.field && a.layer == b.layer;
    }
    friend bool operator<(const ParamRef& a, const ParamRef& b) {
        return std::tie(a.layer, a.field) < std::tie(b.layer, b.field);
    }
};

Tensor& param_tensor(AdapterStack& stack, const ParamRef& ref);
const Tensor& param_tensor(const AdapterStack& stack, const ParamRef& ref);

// Every tensor in the stack, in checkpoint order: per layer (base, norm,
// adapter fields), then head.
std::vector<ParamRef> all_params(const AdapterStack& stack);

struct StackInit {
    std::size_t hidden = 32;
    int layers = 6;
    std::size_t classes = 4;
    std::size_t reduction_factor = 16;
    bool identity_init = true;  // zero up-projection: adapters start as identity
    std::uint64_t seed = 0;
};

AdapterStack init_stack(const StackInit& cfg);

// Replaces the head with freshly initialized parameters.
void reset_head(AdapterStack& stack, std::uint64_t seed);

// Tape node ids for one forward pass. Every parameter is on the tape whether
// or not it is trainable, so frozen layers still receive gradients (the
// Fisher probe needs them).
struct ForwardNodes {
    struct LayerNodes {
        NodeId base_weight, base_bias, norm_scale, norm_shift;
        NodeId down_weight, down_bias, up_weight, up_bias;
    };
    std::vector<LayerNodes> layers;
    NodeId head_weight, head_bias;
    NodeId inputs;
    NodeId logits;

    NodeId node_for(const ParamRef& ref) const;
};

ForwardNodes forward(Tape& tape, const AdapterStack& stack, const Tensor& inputs);

// Plain forward pass without a tape (no gradients). Same arithmetic path.
Tensor forward_logits(const AdapterStack& stack, const Tensor& inputs);

// Trainable parameter list for an optimizer step: head weight and bias first,
// then down/up weight and bias of each trainable layer in ascending layer
// order. Base and norm tensors are never included.
std::vector<ParamRef> trainable_params(const AdapterStack& stack, const FreezeMask& mask);

struct LabeledBatchView {
    const Tensor* features;                   // b x h
    const std::vector<std::size_t>* labels;   // length b
};

// Trains the base transform (plus a scratch head) on an auxiliary multi-domain
// task with plain SGD, then installs a fresh head. Adapters are held at their
// initial values. After this returns, base and norm tensors are treated as
// frozen for the rest of the stack's life. Returns the per-step aux losses.
std::vector<double> pretrain_base(AdapterStack& stack,
                                  const std::vector<Tensor>& aux_features,
                                  const std::vector<std::vector<std::size_t>>& aux_labels,
                                  long steps, double lr, std::uint64_t head_seed);

}  // namespace funfreeze
