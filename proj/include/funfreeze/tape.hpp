#pragma once

#include <cstddef>
#include <vector>

#include "funfreeze/tensor.hpp"

namespace funfreeze {

using NodeId = std::size_t;

enum class OpKind {
    Leaf,
    MatMul,     // a[m,k] @ b[k,n]
    MatMulNT,   // a[m,k] @ b[n,k]^T
    Add,        // same-shape elementwise
    AddBias,    // x[b,n] + bias[n], broadcast over rows
    MulScalar,
    Relu,
    LayerNorm,  // parents: x, scale, shift; normalizes the last axis
    LogSoftmax,
    Nll,        // mean over rows of -log_probs[row, label[row]]
};

// Reverse-mode tape. Nodes are appended in construction order, so every
// node's parents have smaller ids and a single reverse sweep computes all
// gradients. Gradient buffers are zeroed and accumulated in fixed node
// order; two backward passes over the same tape are bitwise identical.
class Tape {
public:
    NodeId leaf(Tensor value);

    NodeId matmul(NodeId a, NodeId b);
    NodeId matmul_nt(NodeId a, NodeId b);
    NodeId add(NodeId a, NodeId b);
    NodeId add_bias(NodeId x, NodeId bias);
    NodeId mul_scalar(NodeId a, double s);
    NodeId relu(NodeId a);
    NodeId layer_norm(NodeId x, NodeId scale, NodeId shift, double eps = 1e-5);
    NodeId log_softmax(NodeId logits);
    NodeId nll(NodeId log_probs, std::vector<std::size_t> labels);

    const Tensor& value(NodeId id) const { return nodes_[id].value; }
    std::size_t node_count() const { return nodes_.size(); }

    // Reverse accumulation from a scalar loss. Populates grad(id) for every
    // node on the tape; nodes not reachable from the loss keep zero grads.
    void backward(NodeId loss);

    const Tensor& grad(NodeId id) const;

private:
    struct Node {
        OpKind op;
        std::vector<NodeId> parents;
        Tensor value;
        double scalar = 0.0;              // MulScalar
        double eps = 0.0;                 // LayerNorm
        std::vector<std::size_t> labels{};  // Nll
        Tensor ln_xhat{};                   // LayerNorm cache
        std::vector<double> ln_inv_std{};   // LayerNorm cache, per row
    };

    NodeId push(Node node);
    void check_matrix(NodeId id, const char* op) const;

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
    bool has_grads_ = false;
};

}  // namespace funfreeze
