#include "funfreeze/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace funfreeze {

NodeId Tape::push(Node node) {
    nodes_.push_back(std::move(node));
    has_grads_ = false;
    return nodes_.size() - 1;
}

void Tape::check_matrix(NodeId id, const char* op) const {
    if (nodes_[id].value.shape.size() != 2) {
        throw std::invalid_argument(std::string(op) + ": operand must be rank-2, got " +
                                    shape_str(nodes_[id].value));
    }
}

NodeId Tape::leaf(Tensor value) { return push({OpKind::Leaf, {}, std::move(value)}); }

NodeId Tape::matmul(NodeId a, NodeId b) {
    check_matrix(a, "matmul");
    check_matrix(b, "matmul");
    const Tensor& ta = nodes_[a].value;
    const Tensor& tb = nodes_[b].value;
    if (ta.cols() != tb.rows()) {
        throw std::invalid_argument("matmul: inner dimensions differ, " + shape_str(ta) +
                                    " vs " + shape_str(tb));
    }
    std::size_t m = ta.rows(), k = ta.cols(), n = tb.cols();
    Tensor out = Tensor::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            double aip = ta.at(i, p);
            if (aip == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) out.at(i, j) += aip * tb.at(p, j);
        }
    }
    return push({OpKind::MatMul, {a, b}, std::move(out)});
}

NodeId Tape::matmul_nt(NodeId a, NodeId b) {
    check_matrix(a, "matmul_nt");
    check_matrix(b, "matmul_nt");
    const Tensor& ta = nodes_[a].value;
    const Tensor& tb = nodes_[b].value;
    if (ta.cols() != tb.cols()) {
        throw std::invalid_argument("matmul_nt: inner dimensions differ, " + shape_str(ta) +
                                    " vs " + shape_str(tb) + " (transposed)");
    }
    std::size_t m = ta.rows(), k = ta.cols(), n = tb.rows();
    Tensor out = Tensor::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += ta.at(i, p) * tb.at(j, p);
            out.at(i, j) = s;
        }
    }
    return push({OpKind::MatMulNT, {a, b}, std::move(out)});
}

NodeId Tape::add(NodeId a, NodeId b) {
    const Tensor& ta = nodes_[a].value;
    const Tensor& tb = nodes_[b].value;
    if (!ta.same_shape(tb)) {
        throw std::invalid_argument("add: shapes differ, " + shape_str(ta) + " vs " +
                                    shape_str(tb));
    }
    Tensor out = ta;
    for (std::size_t i = 0; i < out.size(); ++i) out.elems[i] += tb.elems[i];
    return push({OpKind::Add, {a, b}, std::move(out)});
}

NodeId Tape::add_bias(NodeId x, NodeId bias) {
    check_matrix(x, "add_bias");
    const Tensor& tx = nodes_[x].value;
    const Tensor& tb = nodes_[bias].value;
    if (tb.shape.size() != 1 || tb.shape[0] != tx.cols()) {
        throw std::invalid_argument("add_bias: bias shape " + shape_str(tb) +
                                    " does not match row width of " + shape_str(tx));
    }
    Tensor out = tx;
    for (std::size_t i = 0; i < tx.rows(); ++i) {
        for (std::size_t j = 0; j < tx.cols(); ++j) out.at(i, j) += tb.elems[j];
    }
    return push({OpKind::AddBias, {x, bias}, std::move(out)});
}

NodeId Tape::mul_scalar(NodeId a, double s) {
    Tensor out = nodes_[a].value;
    for (double& v : out.elems) v *= s;
    Node node{OpKind::MulScalar, {a}, std::move(out)};
    node.scalar = s;
    return push(std::move(node));
}

NodeId Tape::relu(NodeId a) {
    Tensor out = nodes_[a].value;
    for (double& v : out.elems) v = v > 0.0 ? v : 0.0;
    return push({OpKind::Relu, {a}, std::move(out)});
}

NodeId Tape::layer_norm(NodeId x, NodeId scale, NodeId shift, double eps) {
    check_matrix(x, "layer_norm");
    const Tensor& tx = nodes_[x].value;
    const Tensor& ts = nodes_[scale].value;
    const Tensor& tsh = nodes_[shift].value;
    std::size_t n = tx.cols();
    if (ts.shape != std::vector<std::size_t>{n} || tsh.shape != std::vector<std::size_t>{n}) {
        throw std::invalid_argument("layer_norm: scale/shift must have shape [" +
                                    std::to_string(n) + "]");
    }
    std::size_t rows = tx.rows();
    Tensor out = Tensor::zeros({rows, n});
    Tensor xhat = Tensor::zeros({rows, n});
    std::vector<double> inv_std(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        double mean = 0.0;
        for (std::size_t j = 0; j < n; ++j) mean += tx.at(r, j);
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            double d = tx.at(r, j) - mean;
            var += d * d;
        }
        var /= static_cast<double>(n);
        double inv = 1.0 / std::sqrt(var + eps);
        inv_std[r] = inv;
        for (std::size_t j = 0; j < n; ++j) {
            double h = (tx.at(r, j) - mean) * inv;
            xhat.at(r, j) = h;
            out.at(r, j) = ts.elems[j] * h + tsh.elems[j];
        }
    }
    Node node{OpKind::LayerNorm, {x, scale, shift}, std::move(out)};
    node.eps = eps;
    node.ln_xhat = std::move(xhat);
    node.ln_inv_std = std::move(inv_std);
    return push(std::move(node));
}

NodeId Tape::log_softmax(NodeId logits) {
    check_matrix(logits, "log_softmax");
    const Tensor& tx = nodes_[logits].value;
    if (tx.cols() < 2) {
        throw std::invalid_argument("log_softmax: needs at least 2 classes, got " +
                                    shape_str(tx));
    }
    std::size_t rows = tx.rows(), n = tx.cols();
    Tensor out = Tensor::zeros({rows, n});
    for (std::size_t r = 0; r < rows; ++r) {
        double mx = tx.at(r, 0);
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, tx.at(r, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) sum += std::exp(tx.at(r, j) - mx);
        double lse = mx + std::log(sum);
        for (std::size_t j = 0; j < n; ++j) out.at(r, j) = tx.at(r, j) - lse;
    }
    return push({OpKind::LogSoftmax, {logits}, std::move(out)});
}

NodeId Tape::nll(NodeId log_probs, std::vector<std::size_t> labels) {
    check_matrix(log_probs, "nll");
    const Tensor& lp = nodes_[log_probs].value;
    if (labels.size() != lp.rows()) {
        throw std::invalid_argument("nll: got " + std::to_string(labels.size()) +
                                    " labels for " + std::to_string(lp.rows()) + " rows");
    }
    for (std::size_t lbl : labels) {
        if (lbl >= lp.cols()) {
            throw std::out_of_range("nll: label " + std::to_string(lbl) +
                                    " out of range for " + std::to_string(lp.cols()) +
                                    " classes");
        }
    }
    double loss = 0.0;
    for (std::size_t r = 0; r < lp.rows(); ++r) loss -= lp.at(r, labels[r]);
    loss /= static_cast<double>(lp.rows());
    Node node{OpKind::Nll, {log_probs}, Tensor::scalar(loss)};
    node.labels = std::move(labels);
    return push(std::move(node));
}

void Tape::backward(NodeId loss) {
    if (loss >= nodes_.size()) throw std::logic_error("backward: unknown node id");
    if (nodes_[loss].value.size() != 1) {
        throw std::logic_error("backward: loss must be a scalar, got " +
                               shape_str(nodes_[loss].value));
    }
    grads_.clear();
    grads_.reserve(nodes_.size());
    for (const Node& n : nodes_) grads_.push_back(Tensor::zeros(n.value.shape));
    grads_[loss].elems[0] = 1.0;

    for (std::size_t idx = nodes_.size(); idx-- > 0;) {
        const Node& node = nodes_[idx];
        const Tensor& g = grads_[idx];
        switch (node.op) {
            case OpKind::Leaf:
                break;
            case OpKind::MatMul: {
                const Tensor& a = nodes_[node.parents[0]].value;
                const Tensor& b = nodes_[node.parents[1]].value;
                Tensor& ga = grads_[node.parents[0]];
                Tensor& gb = grads_[node.parents[1]];
                std::size_t m = a.rows(), k = a.cols(), n = b.cols();
                // dA += dC B^T, dB += A^T dC
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t p = 0; p < k; ++p) {
                        double s = 0.0;
                        for (std::size_t j = 0; j < n; ++j) s += g.at(i, j) * b.at(p, j);
                        ga.at(i, p) += s;
                    }
                }
                for (std::size_t p = 0; p < k; ++p) {
                    for (std::size_t j = 0; j < n; ++j) {
                        double s = 0.0;
                        for (std::size_t i = 0; i < m; ++i) s += a.at(i, p) * g.at(i, j);
                        gb.at(p, j) += s;
                    }
                }
                break;
            }
            case OpKind::MatMulNT: {
                const Tensor& a = nodes_[node.parents[0]].value;
                const Tensor& b = nodes_[node.parents[1]].value;
                Tensor& ga = grads_[node.parents[0]];
                Tensor& gb = grads_[node.parents[1]];
                std::size_t m = a.rows(), k = a.cols(), n = b.rows();
                // C = A B^T: dA += dC B, dB += dC^T A
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t p = 0; p < k; ++p) {
                        double s = 0.0;
                        for (std::size_t j = 0; j < n; ++j) s += g.at(i, j) * b.at(j, p);
                        ga.at(i, p) += s;
                    }
                }
                for (std::size_t j = 0; j < n; ++j) {
                    for (std::size_t p = 0; p < k; ++p) {
                        double s = 0.0;
                        for (std::size_t i = 0; i < m; ++i) s += g.at(i, j) * a.at(i, p);
                        gb.at(j, p) += s;
                    }
                }
                break;
            }
            case OpKind::Add: {
                Tensor& ga = grads_[node.parents[0]];
                Tensor& gb = grads_[node.parents[1]];
                for (std::size_t i = 0; i < g.size(); ++i) {
                    ga.elems[i] += g.elems[i];
                    gb.elems[i] += g.elems[i];
                }
                break;
            }
            case OpKind::AddBias: {
                Tensor& gx = grads_[node.parents[0]];
                Tensor& gb = grads_[node.parents[1]];
                std::size_t rows = node.value.rows(), n = node.value.cols();
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < n; ++j) {
                        gx.at(r, j) += g.at(r, j);
                        gb.elems[j] += g.at(r, j);
                    }
                }
                break;
            }
            case OpKind::MulScalar: {
                Tensor& ga = grads_[node.parents[0]];
                for (std::size_t i = 0; i < g.size(); ++i) ga.elems[i] += node.scalar * g.elems[i];
                break;
            }
            case OpKind::Relu: {
                const Tensor& x = nodes_[node.parents[0]].value;
                Tensor& gx = grads_[node.parents[0]];
                for (std::size_t i = 0; i < g.size(); ++i) {
                    if (x.elems[i] > 0.0) gx.elems[i] += g.elems[i];
                }
                break;
            }
            case OpKind::LayerNorm: {
                const Tensor& scale = nodes_[node.parents[1]].value;
                Tensor& gx = grads_[node.parents[0]];
                Tensor& gscale = grads_[node.parents[1]];
                Tensor& gshift = grads_[node.parents[2]];
                std::size_t rows = node.value.rows(), n = node.value.cols();
                double dn = static_cast<double>(n);
                for (std::size_t r = 0; r < rows; ++r) {
                    double inv = node.ln_inv_std[r];
                    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        double dxhat = g.at(r, j) * scale.elems[j];
                        double xh = node.ln_xhat.at(r, j);
                        gscale.elems[j] += g.at(r, j) * xh;
                        gshift.elems[j] += g.at(r, j);
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xh;
                    }
                    for (std::size_t j = 0; j < n; ++j) {
                        double dxhat = g.at(r, j) * scale.elems[j];
                        double xh = node.ln_xhat.at(r, j);
                        gx.at(r, j) += inv * (dxhat - sum_dxhat / dn - xh * sum_dxhat_xhat / dn);
                    }
                }
                break;
            }
            case OpKind::LogSoftmax: {
                Tensor& gx = grads_[node.parents[0]];
                std::size_t rows = node.value.rows(), n = node.value.cols();
                for (std::size_t r = 0; r < rows; ++r) {
                    double gsum = 0.0;
                    for (std::size_t j = 0; j < n; ++j) gsum += g.at(r, j);
                    for (std::size_t j = 0; j < n; ++j) {
                        gx.at(r, j) += g.at(r, j) - std::exp(node.value.at(r, j)) * gsum;
                    }
                }
                break;
            }
            case OpKind::Nll: {
                Tensor& glp = grads_[node.parents[0]];
                std::size_t rows = nodes_[node.parents[0]].value.rows();
                double up = g.elems[0];
                for (std::size_t r = 0; r < rows; ++r) {
                    glp.at(r, node.labels[r]) -= up / static_cast<double>(rows);
                }
                break;
            }
        }
    }
    has_grads_ = true;
}

const Tensor& Tape::grad(NodeId id) const {
    if (!has_grads_) throw std::logic_error("grad: backward has not run on this tape");
    return grads_.at(id);
}

}  // namespace funfreeze
