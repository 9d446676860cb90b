#pragma once

#include <functional>
#include <vector>

#include "ccgbench/matrix.hpp"

namespace ccgbench::autodiff {

using NodeId = int;

// Tape-based reverse-mode engine over 2-D matrices. Each op records its value
// and a backward closure; backward() walks the tape in reverse. With gradients
// disabled the same builders run as a plain evaluator (no closures, no grad
// buffers), which is how inference-time forwards are executed.
class Graph {
public:
    explicit Graph(bool grad_enabled = true) : grad_on_(grad_enabled) {}

    NodeId constant(Matrix v);
    NodeId param(Matrix v);  // gradient-accumulating leaf

    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);  // Hadamard
    NodeId matmul(NodeId a, NodeId b);
    NodeId transpose(NodeId a);
    NodeId scale(NodeId a, double c);
    NodeId shift(NodeId a, double c);        // elementwise + c
    NodeId add_scalar(NodeId a, NodeId s);   // s is 1x1, broadcast-added
    NodeId add_rowvec(NodeId a, NodeId b);   // b is 1xN, added to each row
    NodeId mul_colvec(NodeId a, NodeId c);   // c is Mx1, scales row i by c[i]
    NodeId sigmoid(NodeId a);
    NodeId gelu(NodeId a);                   // tanh approximation
    NodeId softmax_rows(NodeId a);
    NodeId square(NodeId a);
    NodeId sqrt_of(NodeId a);                // requires positive entries
    NodeId abs_of(NodeId a);
    NodeId sum_all(NodeId a);                // 1x1
    NodeId mean_all(NodeId a);               // 1x1
    NodeId sum_of(const std::vector<NodeId>& ids);  // n-ary same-shape sum
    NodeId slice_cols(NodeId a, std::size_t c0, std::size_t c1);
    NodeId slice_rows(NodeId a, std::size_t r0, std::size_t r1);
    NodeId concat_cols(const std::vector<NodeId>& ids);
    NodeId reshape(NodeId a, std::size_t r, std::size_t c);
    // Row-wise layer norm with learnable gain/bias (1xN each).
    NodeId layer_norm(NodeId x, NodeId gamma, NodeId beta, double eps = 1e-5);
    // mask[i]==1: log(a + eps); mask[i]==0: neg_clamp with zero gradient.
    NodeId log_masked(NodeId a, const Matrix& mask, double eps, double neg_clamp);
    // Length-normalised acyclicity penalty (tr(exp(A o A)) - C)/C as a 1x1 node.
    NodeId notears_penalty(NodeId a);

    const Matrix& value(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].val; }
    const Matrix& grad(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].grd; }
    bool grad_enabled() const { return grad_on_; }
    std::size_t node_count() const { return nodes_.size(); }

    // root must be 1x1; seeds d(root)/d(root) = 1 and sweeps the tape.
    void backward(NodeId root);

private:
    struct Node {
        Matrix val;
        Matrix grd;
        std::function<void()> back;
        bool needs = false;
    };
    std::vector<Node> nodes_;
    bool grad_on_;

    NodeId push(Matrix val, bool needs, std::function<void()> back);
    bool needs(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].needs; }
    Matrix& grad_buf(NodeId id) { return nodes_[static_cast<std::size_t>(id)].grd; }
};

}  // namespace ccgbench::autodiff
