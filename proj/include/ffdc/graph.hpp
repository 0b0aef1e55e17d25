#pragma once

#include <cstdint>
#include <vector>

#include "ffdc/mask.hpp"
#include "ffdc/params.hpp"
#include "ffdc/tensor.hpp"

namespace ffdc {

// Counts query-key dot products performed by attention forwards. Used by the
// cached-vs-full scoring cost assertions.
extern thread_local uint64_t g_attention_dot_count;

// Reverse-mode tape over Tensor-granular ops. One Graph instance records one
// forward pass; backward() walks the tape in reverse creation order and
// accumulates parameter gradients into the bound ParamStore.
class Graph {
public:
    explicit Graph(ParamStore* store) : store_(store) {}

    int input(Tensor t);                    // leaf without gradient
    int param(const std::string& name);     // leaf bound to a store parameter

    int matmul(int a, int b);
    int add(int a, int b);                  // same shape
    int add_row(int a, int bias);           // bias is 1 x cols, broadcast over rows
    int scale(int a, double s);
    int tanh_op(int a);
    int layer_norm(int x, int gain, int bias, double eps = 1e-5);  // gain/bias 1 x cols
    int attention(int q, int k, int v, const BoolMask* mask, int heads);
    int concat_rows(const std::vector<int>& parts);
    int slice_rows(int a, int first, int count);
    int reshape(int a, int rows, int cols);  // row-major relabel, same element count

    // Scalar (1x1) loss nodes.
    int mse_loss(int pred, Tensor target);
    int bce_with_logit(int z, double label);  // z is 1x1
    int weighted_sum(int a, int b, double wa, double wb);

    const Tensor& value(int id) const { return node_val(id); }
    const Tensor& grad_of(int id) const { return nodes_[id].grad; }

    // Seeds d(loss)/d(loss) = 1 and accumulates gradients. The loss node must
    // be 1x1. Parameter gradients add into the store (they are not cleared).
    void backward(int loss);

    size_t node_count() const { return nodes_.size(); }

private:
    enum class Op {
        input,
        param,
        matmul,
        add,
        add_row,
        scale,
        tanh_op,
        layer_norm,
        attention,
        concat_rows,
        slice_rows,
        reshape,
        mse_loss,
        bce_with_logit,
        weighted_sum,
    };

    struct Node {
        Op op;
        Tensor val;
        const Tensor* vref = nullptr;  // param nodes alias the store instead of copying
        Tensor grad;
        int a = -1, b = -1, c = -1;
        double sa = 0.0, sb = 0.0;   // scalar args (scale factor, loss weights, label)
        std::vector<int> parts;      // concat inputs
        int i0 = 0, i1 = 0;          // slice args / heads
        const BoolMask* mask = nullptr;
        std::vector<Tensor> aux;     // cached forward intermediates
        std::string pname;           // param nodes
    };

    const Tensor& node_val(int id) const {
        const Node& n = nodes_[id];
        return n.vref ? *n.vref : n.val;
    }

    int push(Node n);
    void backward_node(Node& n);

    ParamStore* store_;
    std::vector<Node> nodes_;
};

// Forward-only building blocks shared with the incremental (KV-cached)
// scoring path; kept bit-compatible with the tape ops.
Tensor linear_rows(const Tensor& x, const Tensor& w, const Tensor& b);
void layer_norm_rows_inplace(Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
void softmax_row_inplace(std::vector<double>& row);

}  // namespace ffdc
