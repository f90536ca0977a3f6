#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "sidrec/tensor.hpp"

namespace sidrec::num {

// Reverse-mode gradient tape. Supported primitive set is closed:
// matmul, add (incl. row broadcast), sub, multiply, elementwise nonlinearities
// (tanh, relu, exp, log, clamp, min), reduce sum/mean, gather, concat,
// transpose, row softmax (plain/causal), gathered log-softmax, layer norm.
// Gradients accumulate additively across fan-out. One tape = one logical
// thread; values are plain doubles and safe to read from anywhere.
class Tape {
public:
    using Id = size_t;

    // leaves
    Id leaf(Tensor value, bool requires_grad);
    Id constant(Tensor value) { return leaf(std::move(value), false); }

    // primitives
    Id matmul(Id a, Id b);                 // [m,k]x[k,n] -> [m,n]
    Id add(Id a, Id b);                    // same shape, or [m,n]+[n] row broadcast
    Id sub(Id a, Id b);                    // same shape
    Id mul(Id a, Id b);                    // elementwise, same shape
    Id scale(Id a, double c);
    Id add_scalar(Id a, double c);
    Id tanh_op(Id a);
    Id relu(Id a);
    Id exp_op(Id a);
    Id log_op(Id a);
    Id clamp(Id a, double lo, double hi);  // gradient zero outside [lo,hi]
    Id min_elem(Id a, Id b);               // ties route gradient to a
    Id sum(Id a);                          // -> scalar
    Id mean(Id a);                         // -> scalar
    Id gather_rows(Id matrix, std::vector<size_t> idx);  // -> [idx.size(), n]
    Id concat_rows(Id a, Id b);
    Id transpose(Id a);
    Id row_softmax(Id scores, bool causal);               // softmax per row; causal masks j > i
    Id gather_log_softmax(Id logits, std::vector<size_t> targets);  // -> [T] log p(target_t)
    Id layer_norm(Id x, Id gain, Id bias, double eps);    // per row of x

    // composites
    Id softmax_cross_entropy(Id logits_row, size_t target);  // -> scalar loss >= 0

    void backward(Id scalar_output);

    const Tensor& value(Id id) const { return nodes_[id].value; }
    const Tensor& grad(Id id) const { return nodes_[id].grad; }
    size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;  // allocated lazily in backward
        bool requires_grad = false;
        std::function<void(Tape&)> backward;
    };

    Id push(Tensor value, bool requires_grad, std::function<void(Tape&)> bwd);
    Tensor& grad_buf(Id id);
    void check_finite(Id id, const char* op) const;

    std::vector<Node> nodes_;
};

// Runs fn on a fresh tape; gradients are of the first output, which must be
// scalar. Unused parameters get exactly-zero gradients.
using BuildFn = std::function<std::vector<Tape::Id>(Tape&, const std::vector<Tape::Id>& params,
                                                    const std::vector<Tape::Id>& inputs)>;
std::pair<std::vector<Tensor>, std::vector<Tensor>> forward_backward(
    const BuildFn& fn, const std::vector<Tensor>& params, const std::vector<Tensor>& inputs);

// Max over coordinates of |analytic - central difference| / max(1e-8, |central|).
double grad_check(const std::function<Tape::Id(Tape&, Tape::Id)>& build, const Tensor& point,
                  double step);

}  // namespace sidrec::num
