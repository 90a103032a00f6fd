#pragma once

#include <cstdint>
#include <vector>

#include "mrgr/tensor.hpp"

namespace mrgr {

using NodeId = int32_t;

// Reverse-mode autodiff over a linear tape. Each op appends a node holding
// the forward value; backward() walks the tape once in reverse, accumulating
// gradients for every node that (transitively) requires one.
//
// Determinism: every op computes and accumulates in a fixed order via the
// kernel layer, so forward values and gradients are bitwise reproducible.
// Every op validates shapes up front and rejects non-finite outputs.
class Tape {
public:
    // Owning leaf. Use for per-run inputs.
    NodeId leaf(Tensor v, bool requires_grad = false);
    // Non-owning leaf; caller keeps the tensor alive and unchanged for the
    // tape's lifetime. Used to bind model parameters without copying them.
    NodeId leaf_ref(const Tensor& v, bool requires_grad = false);

    NodeId add(NodeId a, NodeId b);                  // same shape
    NodeId add_rowvec(NodeId x, NodeId b);           // [T x d] + [d]
    NodeId scale(NodeId x, double c);
    NodeId matmul(NodeId a, NodeId b);               // [m x k] . [k x n]
    NodeId matmul_nt(NodeId a, NodeId b);            // [m x k] . [n x k]^T
    NodeId relu(NodeId x);
    NodeId mul_mask(NodeId x, Tensor mask);          // elementwise constant mask
    NodeId layer_norm(NodeId x, NodeId gamma, NodeId beta, double eps = 1e-5);
    NodeId embedding_rows(NodeId table, std::vector<int32_t> ids);
    NodeId replace_row0(NodeId x, NodeId v);         // overwrite row 0 with v ([d])
    NodeId slice_rows(NodeId x, int64_t r0, int64_t h);
    NodeId slice_cols(NodeId x, int64_t c0, int64_t w);
    NodeId concat_cols(const std::vector<NodeId>& parts);
    // Row-wise softmax with temperature tau; rank-1 input treated as one row.
    NodeId softmax(NodeId x, double tau = 1.0);
    // Square [T x T]; row r is a softmax over columns 0..r, zero above.
    NodeId causal_softmax_rows(NodeId x);
    // Mean over rows of -log softmax(logits)[row, target[row]]; scalar.
    NodeId cross_entropy_nll(NodeId logits, std::vector<int32_t> targets);
    // KL(p || q) for two distributions (flattened); scalar. Requires
    // non-negative entries and sums within 1e-9 of 1.
    NodeId kl_div(NodeId p, NodeId q);
    // Scalar helper: sum(x * w) with constant weights w (same shape as x).
    NodeId weighted_sum(NodeId x, Tensor w);

    const Tensor& val(NodeId id) const;
    // Gradient of the last backward()'s loss w.r.t. node id. Zero tensor if
    // the node was not reached.
    const Tensor& grad(NodeId id);

    // loss must be a scalar node on this tape. May be called once per tape.
    void backward(NodeId loss);

    size_t size() const { return nodes_.size(); }

private:
    enum class Op : uint8_t {
        leaf, add, add_rowvec, scale, matmul, matmul_nt, relu, mul_mask, layer_norm,
        embedding_rows, replace_row0, slice_rows, slice_cols, concat_cols, softmax,
        causal_softmax_rows, cross_entropy_nll, kl_div, weighted_sum,
    };

    struct Node {
        Op op = Op::leaf;
        NodeId a = -1, b = -1, c = -1;
        std::vector<NodeId> many;    // concat_cols inputs
        Tensor value;                // owning (unused when ref set)
        const Tensor* ref = nullptr; // leaf_ref storage
        Tensor grad;
        bool requires_grad = false;
        bool grad_live = false;
        double scalar = 0.0;         // scale factor / tau / eps
        int64_t i0 = 0, i1 = 0;      // slice params
        std::vector<int32_t> ids;    // embedding ids / CE targets
        Tensor aux;                  // saved forward stats
    };

    const Tensor& v(const Node& n) const { return n.ref ? *n.ref : n.value; }
    Node& node(NodeId id);
    const Node& node(NodeId id) const;
    NodeId push(Node n, const char* op_name);
    Tensor& ensure_grad(NodeId id);

    void backward_node(NodeId id);

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

// Flat accumulate helpers shared by tape ops and direct users.
// All of them ADD into out using the kernel layer's canonical order.
void mm_acc(const Tensor& a, const Tensor& b, Tensor& out);    // out += a.b
void mm_nt_acc(const Tensor& a, const Tensor& b, Tensor& out); // out += a.b^T
void mm_tn_acc(const Tensor& a, const Tensor& b, Tensor& out); // out += a^T.b

// Numerically stable row-wise softmax (max-shift, then exp, sum, and a
// multiply by the reciprocal). The Tape's softmax ops call this same routine,
// so tape-based and plain evaluations agree bitwise.
void softmax_rows_inplace(Tensor& t, double tau);

} // namespace mrgr
