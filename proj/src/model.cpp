#include "funfreeze/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "funfreeze/errors.hpp"
#include "funfreeze/rngmix.hpp"

namespace funfreeze {

namespace {

const char* field_suffix(ParamField field) {
    switch (field) {
        case ParamField::BaseWeight: return "base_weight";
        case ParamField::BaseBias: return "base_bias";
        case ParamField::NormScale: return "norm_scale";
        case ParamField::NormShift: return "norm_shift";
        case ParamField::DownWeight: return "down_weight";
        case ParamField::DownBias: return "down_bias";
        case ParamField::UpWeight: return "up_weight";
        case ParamField::UpBias: return "up_bias";
        case ParamField::HeadWeight: return "weight";
        case ParamField::HeadBias: return "bias";
    }
    throw std::logic_error("unknown parameter field");
}

Tensor gaussian(std::vector<std::size_t> shape, double stddev, std::mt19937_64& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : t.elems) v = dist(rng);
    return t;
}

void sgd_step(Tensor& param, const Tensor& grad, double lr) {
    for (std::size_t i = 0; i < param.size(); ++i) param.elems[i] -= lr * grad.elems[i];
}

}  // namespace

std::string ParamRef::name() const {
    if (is_head()) return std::string("head.") + field_suffix(field);
    return "layer" + std::to_string(layer) + "." + field_suffix(field);
}

Tensor& param_tensor(AdapterStack& stack, const ParamRef& ref) {
    return const_cast<Tensor&>(param_tensor(static_cast<const AdapterStack&>(stack), ref));
}

const Tensor& param_tensor(const AdapterStack& stack, const ParamRef& ref) {
    if (ref.is_head()) {
        return ref.field == ParamField::HeadWeight ? stack.head_weight : stack.head_bias;
    }
    if (ref.layer < 0 || ref.layer >= stack.layer_count()) {
        throw std::out_of_range("parameter " + ref.name() + " addresses a missing layer");
    }
    const AdapterLayer& layer = stack.layers[static_cast<std::size_t>(ref.layer)];
    switch (ref.field) {
        case ParamField::BaseWeight: return layer.base_weight;
        case ParamField::BaseBias: return layer.base_bias;
        case ParamField::NormScale: return layer.norm_scale;
        case ParamField::NormShift: return layer.norm_shift;
        case ParamField::DownWeight: return layer.down_weight;
        case ParamField::DownBias: return layer.down_bias;
        case ParamField::UpWeight: return layer.up_weight;
        case ParamField::UpBias: return layer.up_bias;
        default: throw std::logic_error("head field paired with a layer index");
    }
}

std::vector<ParamRef> all_params(const AdapterStack& stack) {
    std::vector<ParamRef> refs;
    for (int l = 0; l < stack.layer_count(); ++l) {
        for (ParamField f : {ParamField::BaseWeight, ParamField::BaseBias, ParamField::NormScale,
                             ParamField::NormShift, ParamField::DownWeight, ParamField::DownBias,
                             ParamField::UpWeight, ParamField::UpBias}) {
            refs.push_back({f, l});
        }
    }
    refs.push_back({ParamField::HeadWeight, -1});
    refs.push_back({ParamField::HeadBias, -1});
    return refs;
}

AdapterStack init_stack(const StackInit& cfg) {
    if (cfg.hidden == 0) throw ConfigError("hidden width must be positive");
    if (cfg.layers < 1) throw ConfigError("layer count must be at least 1");
    if (cfg.classes < 2) throw ConfigError("class count must be at least 2");
    if (cfg.reduction_factor == 0) throw ConfigError("reduction factor must be positive");

    std::size_t h = cfg.hidden;
    std::size_t r = std::max<std::size_t>(1, h / cfg.reduction_factor);
    double base_std = 1.0 / std::sqrt(static_cast<double>(h));
    double up_std = 1.0 / std::sqrt(static_cast<double>(r));

    std::mt19937_64 rng(splitmix64(cfg.seed));
    AdapterStack stack;
    stack.layers.reserve(static_cast<std::size_t>(cfg.layers));
    for (int l = 0; l < cfg.layers; ++l) {
        AdapterLayer layer;
        layer.base_weight = gaussian({h, h}, base_std, rng);
        layer.base_bias = Tensor::zeros({h});
        layer.norm_scale = Tensor({h}, std::vector<double>(h, 1.0));
        layer.norm_shift = Tensor::zeros({h});
        layer.down_weight = gaussian({h, r}, base_std, rng);
        layer.down_bias = Tensor::zeros({r});
        layer.up_weight =
            cfg.identity_init ? Tensor::zeros({r, h}) : gaussian({r, h}, up_std, rng);
        layer.up_bias = Tensor::zeros({h});
        stack.layers.push_back(std::move(layer));
    }
    stack.head_weight = gaussian({cfg.classes, h}, base_std, rng);
    stack.head_bias = Tensor::zeros({cfg.classes});
    return stack;
}

void reset_head(AdapterStack& stack, std::uint64_t seed) {
    std::size_t h = stack.hidden();
    std::mt19937_64 rng(splitmix64(seed));
    stack.head_weight = gaussian({stack.classes(), h}, 1.0 / std::sqrt(static_cast<double>(h)), rng);
    stack.head_bias = Tensor::zeros({stack.classes()});
}

NodeId ForwardNodes::node_for(const ParamRef& ref) const {
    if (ref.field == ParamField::HeadWeight) return head_weight;
    if (ref.field == ParamField::HeadBias) return head_bias;
    if (ref.layer < 0 || static_cast<std::size_t>(ref.layer) >= layers.size()) {
        throw std::out_of_range("parameter " + ref.name() + " addresses a missing layer");
    }
    const LayerNodes& ln = layers[static_cast<std::size_t>(ref.layer)];
    switch (ref.field) {
        case ParamField::BaseWeight: return ln.base_weight;
        case ParamField::BaseBias: return ln.base_bias;
        case ParamField::NormScale: return ln.norm_scale;
        case ParamField::NormShift: return ln.norm_shift;
        case ParamField::DownWeight: return ln.down_weight;
        case ParamField::DownBias: return ln.down_bias;
        case ParamField::UpWeight: return ln.up_weight;
        case ParamField::UpBias: return ln.up_bias;
        default: throw std::logic_error("head field paired with a layer index");
    }
}

ForwardNodes forward(Tape& tape, const AdapterStack& stack, const Tensor& inputs) {
    if (inputs.shape.size() != 2 || inputs.cols() != stack.hidden()) {
        throw std::invalid_argument("forward: inputs must be [batch x " +
                                    std::to_string(stack.hidden()) + "], got " +
                                    shape_str(inputs));
    }
    ForwardNodes nodes;
    nodes.inputs = tape.leaf(inputs);
    NodeId x = nodes.inputs;
    for (const AdapterLayer& layer : stack.layers) {
        ForwardNodes::LayerNodes ln;
        ln.base_weight = tape.leaf(layer.base_weight);
        ln.base_bias = tape.leaf(layer.base_bias);
        ln.norm_scale = tape.leaf(layer.norm_scale);
        ln.norm_shift = tape.leaf(layer.norm_shift);
        ln.down_weight = tape.leaf(layer.down_weight);
        ln.down_bias = tape.leaf(layer.down_bias);
        ln.up_weight = tape.leaf(layer.up_weight);
        ln.up_bias = tape.leaf(layer.up_bias);

        NodeId u = tape.add_bias(tape.matmul(x, ln.base_weight), ln.base_bias);
        NodeId xn = tape.layer_norm(u, ln.norm_scale, ln.norm_shift);
        NodeId down = tape.relu(tape.add_bias(tape.matmul(xn, ln.down_weight), ln.down_bias));
        NodeId adapter = tape.add_bias(tape.matmul(down, ln.up_weight), ln.up_bias);
        x = tape.add(xn, adapter);
        nodes.layers.push_back(ln);
    }
    nodes.head_weight = tape.leaf(stack.head_weight);
    nodes.head_bias = tape.leaf(stack.head_bias);
    nodes.logits = tape.add_bias(tape.matmul_nt(x, nodes.head_weight), nodes.head_bias);
    return nodes;
}

Tensor forward_logits(const AdapterStack& stack, const Tensor& inputs) {
    Tape tape;
    ForwardNodes nodes = forward(tape, stack, inputs);
    return tape.value(nodes.logits);
}

std::vector<ParamRef> trainable_params(const AdapterStack& stack, const FreezeMask& mask) {
    if (static_cast<int>(mask.trainable.size()) != stack.layer_count()) {
        throw std::invalid_argument("freeze mask covers " +
                                    std::to_string(mask.trainable.size()) + " layers, stack has " +
                                    std::to_string(stack.layer_count()));
    }
    std::vector<ParamRef> refs;
    if (mask.head_trainable) {
        refs.push_back({ParamField::HeadWeight, -1});
        refs.push_back({ParamField::HeadBias, -1});
    }
    for (int l = 0; l < stack.layer_count(); ++l) {
        if (!mask.trainable[static_cast<std::size_t>(l)]) continue;
        refs.push_back({ParamField::DownWeight, l});
        refs.push_back({ParamField::DownBias, l});
        refs.push_back({ParamField::UpWeight, l});
        refs.push_back({ParamField::UpBias, l});
    }
    return refs;
}

std::vector<double> pretrain_base(AdapterStack& stack,
                                  const std::vector<Tensor>& aux_features,
                                  const std::vector<std::vector<std::size_t>>& aux_labels,
                                  long steps, double lr, std::uint64_t head_seed) {
    if (aux_features.size() != aux_labels.size()) {
        throw std::invalid_argument("pretrain_base: feature and label batch counts differ");
    }
    if (steps < 0) throw std::invalid_argument("pretrain_base: steps must be non-negative");
    if (steps > 0 && aux_features.empty()) {
        throw std::invalid_argument("pretrain_base: no batches to train on");
    }

    std::vector<double> losses;
    losses.reserve(static_cast<std::size_t>(steps));
    for (long i = 0; i < steps; ++i) {
        std::size_t b = static_cast<std::size_t>(i) % aux_features.size();
        Tape tape;
        ForwardNodes nodes = forward(tape, stack, aux_features[b]);
        NodeId loss = tape.nll(tape.log_softmax(nodes.logits), aux_labels[b]);
        double loss_value = tape.value(loss).elems[0];
        if (!std::isfinite(loss_value)) {
            throw RunError("pretraining loss is not finite at step " + std::to_string(i));
        }
        tape.backward(loss);
        for (int l = 0; l < stack.layer_count(); ++l) {
            AdapterLayer& layer = stack.layers[static_cast<std::size_t>(l)];
            const ForwardNodes::LayerNodes& ln = nodes.layers[static_cast<std::size_t>(l)];
            sgd_step(layer.base_weight, tape.grad(ln.base_weight), lr);
            sgd_step(layer.base_bias, tape.grad(ln.base_bias), lr);
            sgd_step(layer.norm_scale, tape.grad(ln.norm_scale), lr);
            sgd_step(layer.norm_shift, tape.grad(ln.norm_shift), lr);
        }
        sgd_step(stack.head_weight, tape.grad(nodes.head_weight), lr);
        sgd_step(stack.head_bias, tape.grad(nodes.head_bias), lr);
        losses.push_back(loss_value);
    }
    reset_head(stack, head_seed);
    return losses;
}

}  // namespace funfreeze
