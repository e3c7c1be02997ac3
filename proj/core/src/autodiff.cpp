#include "flava/autodiff.hpp"

#include <cmath>
#include <unordered_map>
#include <unordered_set>

namespace flava::ad {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475;
constexpr double kInvSqrt2Pi = 0.3989422804014327;

using RowArray = Eigen::Array<double, 1, Eigen::Dynamic>;

std::shared_ptr<Node> make_node(Mat value, std::vector<std::shared_ptr<Node>> parents,
                                std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->backward_fn = std::move(backward_fn);
    return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        fail("shape_error", std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) +
                                "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                                "x" + std::to_string(b.cols()) + ")");
}

}  // namespace

Var Var::constant(Mat value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return Var(n);
}

Var Var::leaf(Mat value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Var(n);
}

double Var::scalar() const {
    if (rows() != 1 || cols() != 1) fail("shape_error", "scalar() on a non-1x1 var");
    return node_->value(0, 0);
}

void backward(const Var& loss) {
    if (loss.rows() != 1 || loss.cols() != 1)
        fail("shape_error", "backward() requires a 1x1 loss");
    // Iterative post-order DFS: parents land before children, so the reversed
    // list visits each node only after all of its consumers.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.push_back({loss.node().get(), 0});
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (visited.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    loss.node()->ensure_grad()(0, 0) += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->grad_ready) n->backward_fn(*n);
    }
}

// ---------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
    if (a.cols() != b.rows()) fail("shape_error", "matmul: inner dimensions differ");
    auto an = a.node(), bn = b.node();
    return Var(make_node(an->value * bn->value, {an, bn}, [an, bn](Node& n) {
        if (an->requires_grad) an->ensure_grad().noalias() += n.grad * bn->value.transpose();
        if (bn->requires_grad) bn->ensure_grad().noalias() += an->value.transpose() * n.grad;
    }));
}

Var matmul_nt(const Var& a, const Var& b) {
    if (a.cols() != b.cols()) fail("shape_error", "matmul_nt: inner dimensions differ");
    auto an = a.node(), bn = b.node();
    return Var(make_node(an->value * bn->value.transpose(), {an, bn}, [an, bn](Node& n) {
        if (an->requires_grad) an->ensure_grad().noalias() += n.grad * bn->value;
        if (bn->requires_grad) bn->ensure_grad().noalias() += n.grad.transpose() * an->value;
    }));
}

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    auto an = a.node(), bn = b.node();
    return Var(make_node(an->value + bn->value, {an, bn}, [an, bn](Node& n) {
        if (an->requires_grad) an->ensure_grad() += n.grad;
        if (bn->requires_grad) bn->ensure_grad() += n.grad;
    }));
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    auto an = a.node(), bn = b.node();
    return Var(make_node(an->value - bn->value, {an, bn}, [an, bn](Node& n) {
        if (an->requires_grad) an->ensure_grad() += n.grad;
        if (bn->requires_grad) bn->ensure_grad() -= n.grad;
    }));
}

Var add_rowvec(const Var& x, const Var& row) {
    if (row.rows() != 1 || row.cols() != x.cols())
        fail("shape_error", "add_rowvec: row must be [1, cols(x)]");
    auto xn = x.node(), rn = row.node();
    Mat out = xn->value;
    out.rowwise() += rn->value.row(0);
    return Var(make_node(std::move(out), {xn, rn}, [xn, rn](Node& n) {
        if (xn->requires_grad) xn->ensure_grad() += n.grad;
        if (rn->requires_grad) rn->ensure_grad().row(0) += n.grad.colwise().sum();
    }));
}

Var scale(const Var& x, double c) {
    auto xn = x.node();
    return Var(make_node(xn->value * c, {xn}, [xn, c](Node& n) {
        if (xn->requires_grad) xn->ensure_grad() += c * n.grad;
    }));
}

Var scale_by(const Var& x, const Var& s) {
    if (s.rows() != 1 || s.cols() != 1) fail("shape_error", "scale_by: scalar must be 1x1");
    auto xn = x.node(), sn = s.node();
    double sv = sn->value(0, 0);
    return Var(make_node(xn->value * sv, {xn, sn}, [xn, sn, sv](Node& n) {
        if (xn->requires_grad) xn->ensure_grad() += sv * n.grad;
        if (sn->requires_grad) sn->ensure_grad()(0, 0) += (n.grad.array() * xn->value.array()).sum();
    }));
}

Var cmul(const Var& a, const Var& b) {
    check_same_shape(a, b, "cmul");
    auto an = a.node(), bn = b.node();
    return Var(make_node((an->value.array() * bn->value.array()).matrix(), {an, bn}, [an, bn](Node& n) {
        if (an->requires_grad) an->ensure_grad().array() += n.grad.array() * bn->value.array();
        if (bn->requires_grad) bn->ensure_grad().array() += n.grad.array() * an->value.array();
    }));
}

Var transpose(const Var& x) {
    auto xn = x.node();
    return Var(make_node(xn->value.transpose(), {xn}, [xn](Node& n) {
        if (xn->requires_grad) xn->ensure_grad() += n.grad.transpose();
    }));
}

Var exp(const Var& x) {
    auto xn = x.node();
    Mat out = xn->value.array().exp();
    auto saved = std::make_shared<Mat>(out);
    return Var(make_node(std::move(out), {xn}, [xn, saved](Node& n) {
        if (xn->requires_grad) xn->ensure_grad().array() += n.grad.array() * saved->array();
    }));
}

Var gelu(const Var& x) {
    auto xn = x.node();
    Mat out = xn->value.unaryExpr(
        [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); });
    return Var(make_node(std::move(out), {xn}, [xn](Node& n) {
        if (!xn->requires_grad) return;
        Mat d = xn->value.unaryExpr([](double v) {
            double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            return cdf + v * pdf;
        });
        xn->ensure_grad().array() += n.grad.array() * d.array();
    }));
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
    if (gain.rows() != 1 || gain.cols() != x.cols() || bias.rows() != 1 || bias.cols() != x.cols())
        fail("shape_error", "layer_norm: gain/bias must be [1, cols(x)]");
    auto xn = x.node(), gn = gain.node(), bn = bias.node();
    const Eigen::Index rows = xn->value.rows(), cols = xn->value.cols();
    auto xhat = std::make_shared<Mat>(rows, cols);
    auto inv_std = std::make_shared<Eigen::VectorXd>(rows);
    Mat out(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        double mu = xn->value.row(i).mean();
        double var = (xn->value.row(i).array() - mu).square().mean();
        double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)(i) = is;
        xhat->row(i) = (xn->value.row(i).array() - mu) * is;
        out.row(i) = xhat->row(i).array() * gn->value.row(0).array() + bn->value.row(0).array();
    }
    return Var(make_node(std::move(out), {xn, gn, bn}, [xn, gn, bn, xhat, inv_std](Node& n) {
        const Eigen::Index rows = n.value.rows(), cols = n.value.cols();
        if (gn->requires_grad)
            gn->ensure_grad().row(0) += (n.grad.array() * xhat->array()).colwise().sum().matrix();
        if (bn->requires_grad) bn->ensure_grad().row(0) += n.grad.colwise().sum();
        if (xn->requires_grad) {
            Mat& gx = xn->ensure_grad();
            for (Eigen::Index i = 0; i < rows; ++i) {
                RowArray dxhat = n.grad.row(i).array() * gn->value.row(0).array();
                double m1 = dxhat.mean();
                double m2 = (dxhat * xhat->row(i).array()).mean();
                gx.row(i).array() +=
                    (*inv_std)(i) * (dxhat - m1 - xhat->row(i).array() * m2);
            }
        }
        (void)cols;
    }));
}

Var l2_normalize_rows(const Var& x) {
    auto xn = x.node();
    const Eigen::Index rows = xn->value.rows();
    auto norms = std::make_shared<Eigen::VectorXd>(rows);
    Mat out(rows, xn->value.cols());
    for (Eigen::Index i = 0; i < rows; ++i) {
        double nrm = xn->value.row(i).norm();
        if (nrm < 1e-12)
            fail("zero_norm", "l2_normalize_rows: row " + std::to_string(i) +
                                  " has zero norm (direction undefined)");
        (*norms)(i) = nrm;
        out.row(i) = xn->value.row(i) / nrm;
    }
    auto y = std::make_shared<Mat>(out);
    return Var(make_node(std::move(out), {xn}, [xn, norms, y](Node& n) {
        if (!xn->requires_grad) return;
        Mat& gx = xn->ensure_grad();
        for (Eigen::Index i = 0; i < n.value.rows(); ++i) {
            double dot = n.grad.row(i).dot(y->row(i));
            gx.row(i) += (n.grad.row(i) - dot * y->row(i)) / (*norms)(i);
        }
    }));
}

Var vstack(const std::vector<Var>& rows) {
    if (rows.empty()) fail("shape_error", "vstack: empty input");
    Eigen::Index total = 0, cols = rows[0].cols();
    std::vector<std::shared_ptr<Node>> parents;
    for (const auto& r : rows) {
        if (r.cols() != cols) fail("shape_error", "vstack: column mismatch");
        total += r.rows();
        parents.push_back(r.node());
    }
    Mat out(total, cols);
    Eigen::Index at = 0;
    for (const auto& r : rows) {
        out.middleRows(at, r.rows()) = r.value();
        at += r.rows();
    }
    return Var(make_node(std::move(out), parents, [parents](Node& n) {
        Eigen::Index at = 0;
        for (const auto& p : parents) {
            if (p->requires_grad)
                p->ensure_grad() += n.grad.middleRows(at, p->value.rows());
            at += p->value.rows();
        }
    }));
}

Var gather_rows(const Var& x, const std::vector<Eigen::Index>& idx) {
    auto xn = x.node();
    Mat out(static_cast<Eigen::Index>(idx.size()), xn->value.cols());
    for (size_t j = 0; j < idx.size(); ++j) {
        if (idx[j] < 0 || idx[j] >= xn->value.rows())
            fail("out_of_range", "gather_rows: index " + std::to_string(idx[j]));
        out.row(static_cast<Eigen::Index>(j)) = xn->value.row(idx[j]);
    }
    return Var(make_node(std::move(out), {xn}, [xn, idx](Node& n) {
        if (!xn->requires_grad) return;
        Mat& gx = xn->ensure_grad();
        for (size_t j = 0; j < idx.size(); ++j)
            gx.row(idx[j]) += n.grad.row(static_cast<Eigen::Index>(j));
    }));
}

Var embedding_lookup(const Var& table, const std::vector<std::int64_t>& ids) {
    auto tn = table.node();
    Mat out(static_cast<Eigen::Index>(ids.size()), tn->value.cols());
    for (size_t j = 0; j < ids.size(); ++j) {
        if (ids[j] < 0 || ids[j] >= tn->value.rows())
            fail("out_of_range", "token id " + std::to_string(ids[j]) + " outside vocabulary of " +
                                     std::to_string(tn->value.rows()));
        out.row(static_cast<Eigen::Index>(j)) = tn->value.row(ids[j]);
    }
    return Var(make_node(std::move(out), {tn}, [tn, ids](Node& n) {
        if (!tn->requires_grad) return;
        Mat& gt = tn->ensure_grad();
        for (size_t j = 0; j < ids.size(); ++j)
            gt.row(ids[j]) += n.grad.row(static_cast<Eigen::Index>(j));
    }));
}

Var substitute_rows(const Var& x, const std::vector<Eigen::Index>& idx, const Var& row) {
    if (row.rows() != 1 || row.cols() != x.cols())
        fail("shape_error", "substitute_rows: replacement must be [1, cols(x)]");
    auto xn = x.node(), rn = row.node();
    Mat out = xn->value;
    for (auto i : idx) {
        if (i < 0 || i >= out.rows())
            fail("out_of_range", "substitute_rows: index " + std::to_string(i));
        out.row(i) = rn->value.row(0);
    }
    return Var(make_node(std::move(out), {xn, rn}, [xn, rn, idx](Node& n) {
        if (xn->requires_grad) {
            Mat g = n.grad;
            for (auto i : idx) g.row(i).setZero();
            xn->ensure_grad() += g;
        }
        if (rn->requires_grad) {
            Mat& gr = rn->ensure_grad();
            for (auto i : idx) gr.row(0) += n.grad.row(i);
        }
    }));
}

Var slice_cols(const Var& x, Eigen::Index begin, Eigen::Index n_cols) {
    if (begin < 0 || begin + n_cols > x.cols()) fail("out_of_range", "slice_cols");
    auto xn = x.node();
    return Var(make_node(xn->value.middleCols(begin, n_cols), {xn}, [xn, begin, n_cols](Node& n) {
        if (xn->requires_grad) xn->ensure_grad().middleCols(begin, n_cols) += n.grad;
    }));
}

Var hstack(const std::vector<Var>& cols) {
    if (cols.empty()) fail("shape_error", "hstack: empty input");
    Eigen::Index total = 0, rows = cols[0].rows();
    std::vector<std::shared_ptr<Node>> parents;
    for (const auto& c : cols) {
        if (c.rows() != rows) fail("shape_error", "hstack: row mismatch");
        total += c.cols();
        parents.push_back(c.node());
    }
    Mat out(rows, total);
    Eigen::Index at = 0;
    for (const auto& c : cols) {
        out.middleCols(at, c.cols()) = c.value();
        at += c.cols();
    }
    return Var(make_node(std::move(out), parents, [parents](Node& n) {
        Eigen::Index at = 0;
        for (const auto& p : parents) {
            if (p->requires_grad)
                p->ensure_grad() += n.grad.middleCols(at, p->value.cols());
            at += p->value.cols();
        }
    }));
}

Var block_view(const Var& x, Eigen::Index r0, Eigen::Index nr, Eigen::Index c0, Eigen::Index nc) {
    if (r0 < 0 || r0 + nr > x.rows() || c0 < 0 || c0 + nc > x.cols())
        fail("out_of_range", "block_view");
    auto xn = x.node();
    return Var(make_node(xn->value.block(r0, c0, nr, nc), {xn}, [xn, r0, c0, nr, nc](Node& n) {
        if (xn->requires_grad) xn->ensure_grad().block(r0, c0, nr, nc) += n.grad;
    }));
}

Var add_tiled(const Var& x, const Var& per_seq, Eigen::Index batch) {
    const Eigen::Index seq = per_seq.rows();
    if (x.rows() != batch * seq || x.cols() != per_seq.cols())
        fail("shape_error", "add_tiled: x must be [batch*seq, cols(per_seq)]");
    auto xn = x.node(), pn = per_seq.node();
    Mat out = xn->value;
    for (Eigen::Index b = 0; b < batch; ++b) out.middleRows(b * seq, seq) += pn->value;
    return Var(make_node(std::move(out), {xn, pn}, [xn, pn, batch, seq](Node& n) {
        if (xn->requires_grad) xn->ensure_grad() += n.grad;
        if (pn->requires_grad) {
            Mat& gp = pn->ensure_grad();
            for (Eigen::Index b = 0; b < batch; ++b) gp += n.grad.middleRows(b * seq, seq);
        }
    }));
}

Var prepend_row_each(const Var& x, const Var& row, Eigen::Index batch, Eigen::Index seq) {
    if (x.rows() != batch * seq || row.rows() != 1 || row.cols() != x.cols())
        fail("shape_error", "prepend_row_each: shape mismatch");
    auto xn = x.node(), rn = row.node();
    Mat out(batch * (seq + 1), x.cols());
    for (Eigen::Index b = 0; b < batch; ++b) {
        out.row(b * (seq + 1)) = rn->value.row(0);
        out.middleRows(b * (seq + 1) + 1, seq) = xn->value.middleRows(b * seq, seq);
    }
    return Var(make_node(std::move(out), {xn, rn}, [xn, rn, batch, seq](Node& n) {
        if (rn->requires_grad) {
            Mat& gr = rn->ensure_grad();
            for (Eigen::Index b = 0; b < batch; ++b) gr.row(0) += n.grad.row(b * (seq + 1));
        }
        if (xn->requires_grad) {
            Mat& gx = xn->ensure_grad();
            for (Eigen::Index b = 0; b < batch; ++b)
                gx.middleRows(b * seq, seq) += n.grad.middleRows(b * (seq + 1) + 1, seq);
        }
    }));
}

Var concat_seq_pair(const Var& a, Eigen::Index seq_a, const Var& b, Eigen::Index seq_b,
                    Eigen::Index batch) {
    if (a.rows() != batch * seq_a || b.rows() != batch * seq_b || a.cols() != b.cols())
        fail("shape_error", "concat_seq_pair: shape mismatch");
    auto an = a.node(), bn = b.node();
    const Eigen::Index seq = seq_a + seq_b;
    Mat out(batch * seq, a.cols());
    for (Eigen::Index i = 0; i < batch; ++i) {
        out.middleRows(i * seq, seq_a) = an->value.middleRows(i * seq_a, seq_a);
        out.middleRows(i * seq + seq_a, seq_b) = bn->value.middleRows(i * seq_b, seq_b);
    }
    return Var(make_node(std::move(out), {an, bn}, [an, bn, batch, seq_a, seq_b, seq](Node& n) {
        if (an->requires_grad) {
            Mat& ga = an->ensure_grad();
            for (Eigen::Index i = 0; i < batch; ++i)
                ga.middleRows(i * seq_a, seq_a) += n.grad.middleRows(i * seq, seq_a);
        }
        if (bn->requires_grad) {
            Mat& gb = bn->ensure_grad();
            for (Eigen::Index i = 0; i < batch; ++i)
                gb.middleRows(i * seq_b, seq_b) += n.grad.middleRows(i * seq + seq_a, seq_b);
        }
    }));
}

Var attention_core(const Var& q, const Var& k, const Var& v,
                   const std::vector<double>& key_mask, double inv_sqrt_d) {
    const Eigen::Index s_q = q.rows(), s_k = k.rows();
    if (k.cols() != q.cols() || v.rows() != s_k)
        fail("shape_error", "attention_core: q/k/v shapes inconsistent");
    if (static_cast<Eigen::Index>(key_mask.size()) != s_k)
        fail("shape_error", "attention_core: key_mask length mismatch");
    auto qn = q.node(), kn = k.node(), vn = v.node();

    Mat scores = inv_sqrt_d * (qn->value * kn->value.transpose());
    auto probs = std::make_shared<Mat>(s_q, s_k);
    for (Eigen::Index i = 0; i < s_q; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < s_k; ++j)
            if (key_mask[j] != 0.0) mx = std::max(mx, scores(i, j));
        if (!std::isfinite(mx)) fail("shape_error", "attention_core: all keys masked");
        double denom = 0.0;
        for (Eigen::Index j = 0; j < s_k; ++j) {
            double e = key_mask[j] != 0.0 ? std::exp(scores(i, j) - mx) : 0.0;
            (*probs)(i, j) = e;
            denom += e;
        }
        probs->row(i) /= denom;
    }
    Mat out = *probs * vn->value;
    return Var(make_node(std::move(out), {qn, kn, vn}, [qn, kn, vn, probs, inv_sqrt_d](Node& n) {
        if (vn->requires_grad) vn->ensure_grad().noalias() += probs->transpose() * n.grad;
        if (!qn->requires_grad && !kn->requires_grad) return;
        Mat dp = n.grad * vn->value.transpose();
        Mat ds(probs->rows(), probs->cols());
        for (Eigen::Index i = 0; i < probs->rows(); ++i) {
            double inner = dp.row(i).dot(probs->row(i));
            ds.row(i) = probs->row(i).array() * (dp.row(i).array() - inner);
        }
        if (qn->requires_grad) qn->ensure_grad().noalias() += inv_sqrt_d * (ds * kn->value);
        if (kn->requires_grad) kn->ensure_grad().noalias() += inv_sqrt_d * (ds.transpose() * qn->value);
    }));
}

Var softmax_xent_rows(const Var& logits, const std::vector<std::int64_t>& targets) {
    const Eigen::Index n_rows = logits.rows(), n_cols = logits.cols();
    if (static_cast<Eigen::Index>(targets.size()) != n_rows)
        fail("shape_error", "softmax_xent_rows: one target per row required");
    auto ln = logits.node();
    auto probs = std::make_shared<Mat>(n_rows, n_cols);
    double total = 0.0;
    for (Eigen::Index i = 0; i < n_rows; ++i) {
        std::int64_t t = targets[i];
        if (t < 0 || t >= n_cols) fail("out_of_range", "softmax_xent_rows: target out of range");
        double mx = ln->value.row(i).maxCoeff();
        RowArray e = (ln->value.row(i).array() - mx).exp();
        double denom = e.sum();
        probs->row(i) = (e / denom).matrix();
        total += std::log(denom) + mx - ln->value(i, t);
    }
    Mat out(1, 1);
    out(0, 0) = total / static_cast<double>(n_rows);
    return Var(make_node(std::move(out), {ln}, [ln, probs, targets](Node& n) {
        if (!ln->requires_grad) return;
        double g = n.grad(0, 0) / static_cast<double>(probs->rows());
        Mat d = *probs;
        for (Eigen::Index i = 0; i < d.rows(); ++i) d(i, targets[i]) -= 1.0;
        ln->ensure_grad() += g * d;
    }));
}

Var bce_with_logits(const Var& logits, const std::vector<double>& labels) {
    const Eigen::Index n_rows = logits.rows();
    if (logits.cols() != 1 || static_cast<Eigen::Index>(labels.size()) != n_rows)
        fail("shape_error", "bce_with_logits: logits must be [n,1] with n labels");
    auto ln = logits.node();
    double total = 0.0;
    for (Eigen::Index i = 0; i < n_rows; ++i) {
        double x = ln->value(i, 0);
        total += std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))) - labels[i] * x;
    }
    Mat out(1, 1);
    out(0, 0) = total / static_cast<double>(n_rows);
    return Var(make_node(std::move(out), {ln}, [ln, labels](Node& n) {
        if (!ln->requires_grad) return;
        double g = n.grad(0, 0) / static_cast<double>(labels.size());
        Mat& gl = ln->ensure_grad();
        for (Eigen::Index i = 0; i < gl.rows(); ++i) {
            double sig = 1.0 / (1.0 + std::exp(-ln->value(i, 0)));
            gl(i, 0) += g * (sig - labels[i]);
        }
    }));
}

Var mean_all(const Var& x) {
    auto xn = x.node();
    Mat out(1, 1);
    out(0, 0) = xn->value.mean();
    double inv_n = 1.0 / static_cast<double>(xn->value.size());
    return Var(make_node(std::move(out), {xn}, [xn, inv_n](Node& n) {
        if (xn->requires_grad) xn->ensure_grad().array() += n.grad(0, 0) * inv_n;
    }));
}

Var sum_all(const Var& x) {
    auto xn = x.node();
    Mat out(1, 1);
    out(0, 0) = xn->value.sum();
    return Var(make_node(std::move(out), {xn}, [xn](Node& n) {
        if (xn->requires_grad) xn->ensure_grad().array() += n.grad(0, 0);
    }));
}

}  // namespace flava::ad
