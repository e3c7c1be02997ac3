#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "flava/util.hpp"

namespace flava::ad {

using Mat = Eigen::MatrixXd;

// Reverse-mode autodiff over dense double matrices. Nodes form a DAG; Var is
// a shared handle. Graphs are built per step and dropped when the last Var
// goes out of scope. Single-threaded by contract: forward/backward are pure
// in (inputs, params), so concurrent evaluation uses one graph per thread.
struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    bool grad_ready = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    Mat& ensure_grad() {
        if (!grad_ready) {
            grad = Mat::Zero(value.rows(), value.cols());
            grad_ready = true;
        }
        return grad;
    }
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Var constant(Mat value);
    static Var leaf(Mat value);  // requires_grad leaf (parameter)

    const Mat& value() const { return node_->value; }
    Mat& mutable_value() { return node_->value; }
    const Mat& grad() const { return node_->grad; }
    bool has_grad() const { return node_ && node_->grad_ready; }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    Eigen::Index rows() const { return node_->value.rows(); }
    Eigen::Index cols() const { return node_->value.cols(); }
    double scalar() const;

    std::shared_ptr<Node> node() const { return node_; }
    explicit operator bool() const { return static_cast<bool>(node_); }

    void zero_grad() {
        if (node_) {
            node_->grad_ready = false;
            node_->grad.resize(0, 0);
        }
    }

private:
    std::shared_ptr<Node> node_;
};

// Seeds d(loss)/d(loss) = 1 and propagates through the graph in reverse
// topological order. `loss` must be 1x1.
void backward(const Var& loss);

// ---- graph ops -------------------------------------------------------------

Var matmul(const Var& a, const Var& b);            // [n,k]x[k,m]
Var matmul_nt(const Var& a, const Var& b);         // a * b^T
Var add(const Var& a, const Var& b);               // same shape
Var sub(const Var& a, const Var& b);
Var add_rowvec(const Var& x, const Var& row);      // broadcast [1,m] over rows
Var scale(const Var& x, double c);
Var scale_by(const Var& x, const Var& s);          // s is 1x1
Var cmul(const Var& a, const Var& b);              // elementwise
Var transpose(const Var& x);
Var exp(const Var& x);
Var gelu(const Var& x);                            // exact erf form
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);
Var l2_normalize_rows(const Var& x);               // throws on zero-norm row
Var vstack(const std::vector<Var>& rows);          // concat along rows
Var gather_rows(const Var& x, const std::vector<Eigen::Index>& idx);
Var embedding_lookup(const Var& table, const std::vector<std::int64_t>& ids);
// Copies `row` (a [1,m] var) over the listed rows of x; gradients flow to the
// surviving rows of x and sum into `row`.
Var substitute_rows(const Var& x, const std::vector<Eigen::Index>& idx, const Var& row);
Var slice_cols(const Var& x, Eigen::Index begin, Eigen::Index n);
Var hstack(const std::vector<Var>& cols);
Var block_view(const Var& x, Eigen::Index r0, Eigen::Index nr, Eigen::Index c0, Eigen::Index nc);

// Batched-sequence helpers over [batch*seq, hidden] layouts.
Var add_tiled(const Var& x, const Var& per_seq, Eigen::Index batch);  // per_seq: [seq,h]
Var prepend_row_each(const Var& x, const Var& row, Eigen::Index batch, Eigen::Index seq);
Var concat_seq_pair(const Var& a, Eigen::Index seq_a, const Var& b, Eigen::Index seq_b,
                    Eigen::Index batch);

// Fused scaled-dot-product attention for one head of one sequence.
// q,k,v: [S,d]; key_mask: length-S 0/1 vector (0 = masked key); softmax over
// keys with masked logits at -inf.
Var attention_core(const Var& q, const Var& k, const Var& v,
                   const std::vector<double>& key_mask, double inv_sqrt_d);

// Mean softmax cross-entropy over rows of `logits` against integer targets.
Var softmax_xent_rows(const Var& logits, const std::vector<std::int64_t>& targets);
// Mean binary cross-entropy of logits [n,1] against {0,1} labels.
Var bce_with_logits(const Var& logits, const std::vector<double>& labels);
Var mean_all(const Var& x);
Var sum_all(const Var& x);

}  // namespace flava::ad
