#include "mrgr/tape.hpp"

#include <cmath>
#include <cstring>
#include <string>

#include "mrgr/errors.hpp"
#include "mrgr/kernels.hpp"

namespace mrgr {
namespace {

constexpr double KL_CLAMP = 1e-12;

void check_finite(const Tensor& t, const char* op_name) {
    if (!t.all_finite()) {
        throw NumericError(std::string("non-finite values in output of ") + op_name);
    }
}

} // namespace

void softmax_rows_inplace(Tensor& t, double tau) {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw NumericError("softmax: temperature must be positive");
    const int64_t cols = t.cols();
    if (cols == 0) throw ShapeError("softmax: empty rows");
    const double inv_tau = 1.0 / tau;
    for (int64_t r = 0; r < t.rows(); ++r) {
        double* xr = t.row(r);
        const double m = kern::max(static_cast<size_t>(cols), xr);
        for (int64_t i = 0; i < cols; ++i) xr[i] = std::exp((xr[i] - m) * inv_tau);
        const double s = kern::sum(static_cast<size_t>(cols), xr);
        kern::scale(static_cast<size_t>(cols), 1.0 / s, xr);
    }
}

// ------------------------------------------------------------ mm helpers ----

void mm_acc(const Tensor& a, const Tensor& b, Tensor& out) {
    const int64_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw ShapeError("matmul: inner dimensions disagree: " + a.shape_str() + " vs " + b.shape_str());
    }
    if (out.rows() != m || out.cols() != n) {
        throw ShapeError("matmul: output shape " + out.shape_str() + " does not match result");
    }
    for (int64_t i = 0; i < m; ++i) {
        double* ci = out.row(i);
        const double* ai = a.row(i);
        for (int64_t p = 0; p < k; ++p) {
            kern::axpy(static_cast<size_t>(n), ai[p], b.row(p), ci);
        }
    }
}

void mm_nt_acc(const Tensor& a, const Tensor& b, Tensor& out) {
    const int64_t m = a.rows(), k = a.cols(), n = b.rows();
    if (b.cols() != k) {
        throw ShapeError("matmul_nt: inner dimensions disagree: " + a.shape_str() + " vs " + b.shape_str());
    }
    if (out.rows() != m || out.cols() != n) {
        throw ShapeError("matmul_nt: output shape " + out.shape_str() + " does not match result");
    }
    for (int64_t i = 0; i < m; ++i) {
        double* ci = out.row(i);
        const double* ai = a.row(i);
        for (int64_t j = 0; j < n; ++j) {
            ci[j] += kern::dot(static_cast<size_t>(k), ai, b.row(j));
        }
    }
}

void mm_tn_acc(const Tensor& a, const Tensor& b, Tensor& out) {
    const int64_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != m) {
        throw ShapeError("matmul_tn: inner dimensions disagree: " + a.shape_str() + " vs " + b.shape_str());
    }
    if (out.rows() != k || out.cols() != n) {
        throw ShapeError("matmul_tn: output shape " + out.shape_str() + " does not match result");
    }
    for (int64_t i = 0; i < m; ++i) {
        const double* ai = a.row(i);
        const double* bi = b.row(i);
        for (int64_t p = 0; p < k; ++p) {
            kern::axpy(static_cast<size_t>(n), ai[p], bi, out.row(p));
        }
    }
}

// ------------------------------------------------------------ tape basics ----

Tape::Node& Tape::node(NodeId id) {
    if (id < 0 || static_cast<size_t>(id) >= nodes_.size()) {
        throw ShapeError("invalid node id " + std::to_string(id));
    }
    return nodes_[static_cast<size_t>(id)];
}

const Tape::Node& Tape::node(NodeId id) const { return const_cast<Tape*>(this)->node(id); }

NodeId Tape::push(Node n, const char* op_name) {
    if (n.op != Op::leaf) check_finite(n.ref ? *n.ref : n.value, op_name);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

const Tensor& Tape::val(NodeId id) const { return v(node(id)); }

Tensor& Tape::ensure_grad(NodeId id) {
    Node& n = node(id);
    if (!n.grad_live) {
        n.grad = Tensor(v(n).shape());
        n.grad_live = true;
    }
    return n.grad;
}

const Tensor& Tape::grad(NodeId id) {
    Node& n = node(id);
    if (!n.grad_live) {
        n.grad = Tensor(v(n).shape());
        n.grad_live = true;
    }
    return n.grad;
}

NodeId Tape::leaf(Tensor v, bool requires_grad) {
    Node n;
    n.op = Op::leaf;
    n.value = std::move(v);
    n.requires_grad = requires_grad;
    return push(std::move(n), "leaf");
}

NodeId Tape::leaf_ref(const Tensor& v, bool requires_grad) {
    Node n;
    n.op = Op::leaf;
    n.ref = &v;
    n.requires_grad = requires_grad;
    return push(std::move(n), "leaf");
}

// ------------------------------------------------------------ forward ops ----

NodeId Tape::add(NodeId a, NodeId b) {
    const Tensor& x = val(a);
    const Tensor& y = val(b);
    if (!x.same_shape(y)) {
        throw ShapeError("add: shapes differ: " + x.shape_str() + " vs " + y.shape_str());
    }
    Node n;
    n.op = Op::add;
    n.a = a;
    n.b = b;
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    n.value = Tensor(x.shape());
    kern::add(static_cast<size_t>(x.size()), x.data(), y.data(), n.value.data());
    return push(std::move(n), "add");
}

NodeId Tape::add_rowvec(NodeId x_id, NodeId b_id) {
    const Tensor& x = val(x_id);
    const Tensor& b = val(b_id);
    if (b.rank() != 1 || b.cols() != x.cols()) {
        throw ShapeError("add_rowvec: bias " + b.shape_str() + " does not match " + x.shape_str());
    }
    Node n;
    n.op = Op::add_rowvec;
    n.a = x_id;
    n.b = b_id;
    n.requires_grad = node(x_id).requires_grad || node(b_id).requires_grad;
    n.value = Tensor(x.shape());
    for (int64_t r = 0; r < x.rows(); ++r) {
        kern::add(static_cast<size_t>(x.cols()), x.row(r), b.data(), n.value.row(r));
    }
    return push(std::move(n), "add_rowvec");
}

NodeId Tape::scale(NodeId x_id, double c) {
    if (!std::isfinite(c)) throw NumericError("scale: non-finite factor");
    const Tensor& x = val(x_id);
    Node n;
    n.op = Op::scale;
    n.a = x_id;
    n.scalar = c;
    n.requires_grad = node(x_id).requires_grad;
    n.value = x;
    kern::scale(static_cast<size_t>(x.size()), c, n.value.data());
    return push(std::move(n), "scale");
}

NodeId Tape::matmul(NodeId a, NodeId b) {
    const Tensor& x = val(a);
    const Tensor& y = val(b);
    Node n;
    n.op = Op::matmul;
    n.a = a;
    n.b = b;
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    n.value = Tensor({x.rows(), y.cols()});
    mm_acc(x, y, n.value);
    return push(std::move(n), "matmul");
}

NodeId Tape::matmul_nt(NodeId a, NodeId b) {
    const Tensor& x = val(a);
    const Tensor& y = val(b);
    Node n;
    n.op = Op::matmul_nt;
    n.a = a;
    n.b = b;
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    n.value = Tensor({x.rows(), y.rows()});
    mm_nt_acc(x, y, n.value);
    return push(std::move(n), "matmul_nt");
}

NodeId Tape::relu(NodeId x_id) {
    const Tensor& x = val(x_id);
    Node n;
    n.op = Op::relu;
    n.a = x_id;
    n.requires_grad = node(x_id).requires_grad;
    n.value = Tensor(x.shape());
    const double* in = x.data();
    double* out = n.value.data();
    for (int64_t i = 0; i < x.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
    return push(std::move(n), "relu");
}

NodeId Tape::mul_mask(NodeId x_id, Tensor mask) {
    const Tensor& x = val(x_id);
    if (!x.same_shape(mask)) {
        throw ShapeError("mul_mask: mask " + mask.shape_str() + " does not match " + x.shape_str());
    }
    Node n;
    n.op = Op::mul_mask;
    n.a = x_id;
    n.requires_grad = node(x_id).requires_grad;
    n.value = Tensor(x.shape());
    kern::mul(static_cast<size_t>(x.size()), x.data(), mask.data(), n.value.data());
    n.aux = std::move(mask);
    return push(std::move(n), "mul_mask");
}

NodeId Tape::layer_norm(NodeId x_id, NodeId g_id, NodeId b_id, double eps) {
    const Tensor& x = val(x_id);
    const Tensor& g = val(g_id);
    const Tensor& b = val(b_id);
    const int64_t d = x.cols();
    if (g.rank() != 1 || g.cols() != d || b.rank() != 1 || b.cols() != d) {
        throw ShapeError("layer_norm: gamma/beta must be [" + std::to_string(d) + "]");
    }
    if (eps <= 0.0) throw NumericError("layer_norm: eps must be positive");
    Node n;
    n.op = Op::layer_norm;
    n.a = x_id;
    n.b = g_id;
    n.c = b_id;
    n.scalar = eps;
    n.requires_grad = node(x_id).requires_grad || node(g_id).requires_grad || node(b_id).requires_grad;
    n.value = Tensor(x.shape());
    n.aux = Tensor({x.rows(), 2}); // per-row (mean, rstd)
    const double inv_d = 1.0 / static_cast<double>(d);
    for (int64_t r = 0; r < x.rows(); ++r) {
        const double* xr = x.row(r);
        double* yr = n.value.row(r);
        const double mean = kern::sum(static_cast<size_t>(d), xr) * inv_d;
        // centered copy lives in the output row while we compute the variance
        for (int64_t i = 0; i < d; ++i) yr[i] = xr[i] - mean;
        const double var = kern::dot(static_cast<size_t>(d), yr, yr) * inv_d;
        const double rstd = 1.0 / std::sqrt(var + eps);
        n.aux.at(r, 0) = mean;
        n.aux.at(r, 1) = rstd;
        for (int64_t i = 0; i < d; ++i) yr[i] = yr[i] * rstd * g.data()[i] + b.data()[i];
    }
    return push(std::move(n), "layer_norm");
}

NodeId Tape::embedding_rows(NodeId table_id, std::vector<int32_t> ids) {
    const Tensor& t = val(table_id);
    if (t.rank() != 2) throw ShapeError("embedding_rows: table must be rank 2");
    Node n;
    n.op = Op::embedding_rows;
    n.a = table_id;
    n.requires_grad = node(table_id).requires_grad;
    n.value = Tensor({static_cast<int64_t>(ids.size()), t.cols()});
    for (size_t r = 0; r < ids.size(); ++r) {
        int32_t id = ids[r];
        if (id < 0 || id >= t.rows()) {
            throw ShapeError("embedding_rows: id " + std::to_string(id) + " out of range for table " +
                             t.shape_str());
        }
        std::memcpy(n.value.row(static_cast<int64_t>(r)), t.row(id),
                    static_cast<size_t>(t.cols()) * sizeof(double));
    }
    n.ids = std::move(ids);
    return push(std::move(n), "embedding_rows");
}

NodeId Tape::replace_row0(NodeId x_id, NodeId v_id) {
    const Tensor& x = val(x_id);
    const Tensor& vv = val(v_id);
    if (x.rows() < 1) throw ShapeError("replace_row0: input has no rows");
    if (vv.size() != x.cols()) {
        throw ShapeError("replace_row0: vector " + vv.shape_str() + " does not match row width of " +
                         x.shape_str());
    }
    Node n;
    n.op = Op::replace_row0;
    n.a = x_id;
    n.b = v_id;
    n.requires_grad = node(x_id).requires_grad || node(v_id).requires_grad;
    n.value = x;
    std::memcpy(n.value.row(0), vv.data(), static_cast<size_t>(x.cols()) * sizeof(double));
    return push(std::move(n), "replace_row0");
}

NodeId Tape::slice_rows(NodeId x_id, int64_t r0, int64_t h) {
    const Tensor& x = val(x_id);
    if (r0 < 0 || h < 0 || r0 + h > x.rows()) {
        throw ShapeError("slice_rows: range [" + std::to_string(r0) + "," + std::to_string(r0 + h) +
                         ") out of bounds for " + x.shape_str());
    }
    Node n;
    n.op = Op::slice_rows;
    n.a = x_id;
    n.i0 = r0;
    n.i1 = h;
    n.requires_grad = node(x_id).requires_grad;
    n.value = Tensor({h, x.cols()});
    if (h > 0) {
        std::memcpy(n.value.data(), x.row(r0), static_cast<size_t>(h * x.cols()) * sizeof(double));
    }
    return push(std::move(n), "slice_rows");
}

NodeId Tape::slice_cols(NodeId x_id, int64_t c0, int64_t w) {
    const Tensor& x = val(x_id);
    if (c0 < 0 || w < 0 || c0 + w > x.cols()) {
        throw ShapeError("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c0 + w) +
                         ") out of bounds for " + x.shape_str());
    }
    Node n;
    n.op = Op::slice_cols;
    n.a = x_id;
    n.i0 = c0;
    n.i1 = w;
    n.requires_grad = node(x_id).requires_grad;
    n.value = Tensor({x.rows(), w});
    for (int64_t r = 0; r < x.rows(); ++r) {
        std::memcpy(n.value.row(r), x.row(r) + c0, static_cast<size_t>(w) * sizeof(double));
    }
    return push(std::move(n), "slice_cols");
}

NodeId Tape::concat_cols(const std::vector<NodeId>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    int64_t rows = val(parts[0]).rows();
    int64_t total = 0;
    bool rg = false;
    for (NodeId p : parts) {
        const Tensor& t = val(p);
        if (t.rows() != rows) throw ShapeError("concat_cols: row counts differ");
        total += t.cols();
        rg = rg || node(p).requires_grad;
    }
    Node n;
    n.op = Op::concat_cols;
    n.many = parts;
    n.requires_grad = rg;
    n.value = Tensor({rows, total});
    for (int64_t r = 0; r < rows; ++r) {
        double* out = n.value.row(r);
        int64_t off = 0;
        for (NodeId p : parts) {
            const Tensor& t = val(p);
            std::memcpy(out + off, t.row(r), static_cast<size_t>(t.cols()) * sizeof(double));
            off += t.cols();
        }
    }
    return push(std::move(n), "concat_cols");
}

NodeId Tape::softmax(NodeId x_id, double tau) {
    const Tensor& x = val(x_id);
    Node n;
    n.op = Op::softmax;
    n.a = x_id;
    n.scalar = tau;
    n.requires_grad = node(x_id).requires_grad;
    n.value = x;
    softmax_rows_inplace(n.value, tau);
    return push(std::move(n), "softmax");
}

NodeId Tape::causal_softmax_rows(NodeId x_id) {
    const Tensor& x = val(x_id);
    if (x.rank() != 2 || x.rows() != x.cols()) {
        throw ShapeError("causal_softmax_rows: input must be square, got " + x.shape_str());
    }
    Node n;
    n.op = Op::causal_softmax_rows;
    n.a = x_id;
    n.requires_grad = node(x_id).requires_grad;
    n.value = Tensor(x.shape());
    for (int64_t r = 0; r < x.rows(); ++r) {
        const double* xr = x.row(r);
        double* yr = n.value.row(r);
        const size_t w = static_cast<size_t>(r + 1);
        const double m = kern::max(w, xr);
        for (size_t i = 0; i < w; ++i) yr[i] = std::exp(xr[i] - m);
        const double s = kern::sum(w, yr);
        kern::scale(w, 1.0 / s, yr);
        // columns beyond the diagonal stay exactly zero
    }
    return push(std::move(n), "causal_softmax_rows");
}

NodeId Tape::cross_entropy_nll(NodeId logits_id, std::vector<int32_t> targets) {
    const Tensor& x = val(logits_id);
    if (x.rank() != 2) throw ShapeError("cross_entropy_nll: logits must be rank 2");
    if (static_cast<int64_t>(targets.size()) != x.rows()) {
        throw ShapeError("cross_entropy_nll: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(x.rows()) + " rows");
    }
    if (targets.empty()) throw ShapeError("cross_entropy_nll: no targets");
    const int64_t cols = x.cols();
    Node n;
    n.op = Op::cross_entropy_nll;
    n.a = logits_id;
    n.requires_grad = node(logits_id).requires_grad;
    n.aux = x; // becomes row-wise probabilities, reused in backward
    softmax_rows_inplace(n.aux, 1.0);
    std::vector<double> losses(targets.size());
    for (int64_t r = 0; r < x.rows(); ++r) {
        int32_t t = targets[static_cast<size_t>(r)];
        if (t < 0 || t >= cols) {
            throw ShapeError("cross_entropy_nll: target " + std::to_string(t) + " out of range");
        }
        const double pt = n.aux.at(r, t);
        if (pt < 1e-300) throw NumericError("cross_entropy_nll: target probability underflow");
        losses[static_cast<size_t>(r)] = -std::log(pt);
    }
    n.ids = std::move(targets);
    n.value = Tensor({1});
    n.value.at(0) = kern::sum(losses.size(), losses.data()) / static_cast<double>(losses.size());
    return push(std::move(n), "cross_entropy_nll");
}

NodeId Tape::kl_div(NodeId p_id, NodeId q_id) {
    const Tensor& p = val(p_id);
    const Tensor& q = val(q_id);
    if (!p.same_shape(q)) {
        throw ShapeError("kl_div: shapes differ: " + p.shape_str() + " vs " + q.shape_str());
    }
    if (p.size() == 0) throw ShapeError("kl_div: empty distributions");
    auto validate = [](const Tensor& t, const char* which) {
        for (int64_t i = 0; i < t.size(); ++i) {
            if (t.data()[i] < 0.0) {
                throw NumericError(std::string("kl_div: negative entry in ") + which);
            }
        }
        const double s = kern::sum(static_cast<size_t>(t.size()), t.data());
        if (std::abs(s - 1.0) > 1e-9) {
            throw NumericError(std::string("kl_div: ") + which + " sums to " + std::to_string(s) +
                               ", not 1");
        }
    };
    validate(p, "p");
    validate(q, "q");
    Node n;
    n.op = Op::kl_div;
    n.a = p_id;
    n.b = q_id;
    n.requires_grad = node(p_id).requires_grad || node(q_id).requires_grad;
    std::vector<double> terms(static_cast<size_t>(p.size()), 0.0);
    for (int64_t i = 0; i < p.size(); ++i) {
        const double pi = p.data()[i];
        if (pi > 0.0) {
            const double qi = std::max(q.data()[i], KL_CLAMP);
            terms[static_cast<size_t>(i)] = pi * std::log(pi / qi);
        }
    }
    n.value = Tensor({1});
    n.value.at(0) = kern::sum(terms.size(), terms.data());
    return push(std::move(n), "kl_div");
}

NodeId Tape::weighted_sum(NodeId x_id, Tensor w) {
    const Tensor& x = val(x_id);
    if (!x.same_shape(w)) {
        throw ShapeError("weighted_sum: weights " + w.shape_str() + " do not match " + x.shape_str());
    }
    Node n;
    n.op = Op::weighted_sum;
    n.a = x_id;
    n.requires_grad = node(x_id).requires_grad;
    n.value = Tensor({1});
    n.value.at(0) = kern::dot(static_cast<size_t>(x.size()), x.data(), w.data());
    n.aux = std::move(w);
    return push(std::move(n), "weighted_sum");
}

// ------------------------------------------------------------- backward ----

void Tape::backward(NodeId loss) {
    if (backward_done_) throw NumericError("backward may only run once per tape");
    backward_done_ = true;
    Node& ln = node(loss);
    if (v(ln).size() != 1) {
        throw ShapeError("backward: loss must be scalar, got " + v(ln).shape_str());
    }
    if (!ln.requires_grad) {
        throw NumericError("backward: loss does not depend on any differentiable leaf");
    }
    ensure_grad(loss).at(0) = 1.0;
    for (NodeId id = loss; id >= 0; --id) {
        Node& n = node(id);
        if (!n.requires_grad || !n.grad_live) continue;
        backward_node(id);
    }
}

void Tape::backward_node(NodeId id) {
    Node& n = node(id);
    const Tensor& g = n.grad;
    auto rg = [&](NodeId in) { return in >= 0 && node(in).requires_grad; };

    switch (n.op) {
    case Op::leaf:
        break;

    case Op::add: {
        if (rg(n.a)) kern::axpy(static_cast<size_t>(g.size()), 1.0, g.data(), ensure_grad(n.a).data());
        if (rg(n.b)) kern::axpy(static_cast<size_t>(g.size()), 1.0, g.data(), ensure_grad(n.b).data());
        break;
    }

    case Op::add_rowvec: {
        if (rg(n.a)) kern::axpy(static_cast<size_t>(g.size()), 1.0, g.data(), ensure_grad(n.a).data());
        if (rg(n.b)) {
            Tensor& gb = ensure_grad(n.b);
            for (int64_t r = 0; r < g.rows(); ++r) {
                kern::axpy(static_cast<size_t>(g.cols()), 1.0, g.row(r), gb.data());
            }
        }
        break;
    }

    case Op::scale: {
        if (rg(n.a)) kern::axpy(static_cast<size_t>(g.size()), n.scalar, g.data(), ensure_grad(n.a).data());
        break;
    }

    case Op::matmul: {
        // out = a.b : ga += g.b^T, gb += a^T.g
        if (rg(n.a)) mm_nt_acc(g, v(node(n.b)), ensure_grad(n.a));
        if (rg(n.b)) mm_tn_acc(v(node(n.a)), g, ensure_grad(n.b));
        break;
    }

    case Op::matmul_nt: {
        // out = a.b^T : ga += g.b, gb += g^T.a
        if (rg(n.a)) mm_acc(g, v(node(n.b)), ensure_grad(n.a));
        if (rg(n.b)) mm_tn_acc(g, v(node(n.a)), ensure_grad(n.b));
        break;
    }

    case Op::relu: {
        if (rg(n.a)) {
            const Tensor& x = v(node(n.a));
            Tensor& gx = ensure_grad(n.a);
            for (int64_t i = 0; i < x.size(); ++i) {
                if (x.data()[i] > 0.0) gx.data()[i] += g.data()[i];
            }
        }
        break;
    }

    case Op::mul_mask: {
        if (rg(n.a)) {
            Tensor& gx = ensure_grad(n.a);
            const double* m = n.aux.data();
            for (int64_t i = 0; i < g.size(); ++i) gx.data()[i] += g.data()[i] * m[i];
        }
        break;
    }

    case Op::layer_norm: {
        const Tensor& x = v(node(n.a));
        const Tensor& gamma = v(node(n.b));
        const int64_t d = x.cols();
        const double inv_d = 1.0 / static_cast<double>(d);
        std::vector<double> xhat(static_cast<size_t>(d));
        std::vector<double> dxhat(static_cast<size_t>(d));
        for (int64_t r = 0; r < x.rows(); ++r) {
            const double mean = n.aux.at(r, 0);
            const double rstd = n.aux.at(r, 1);
            const double* xr = x.row(r);
            const double* gr = g.row(r);
            for (int64_t i = 0; i < d; ++i) xhat[static_cast<size_t>(i)] = (xr[i] - mean) * rstd;
            if (rg(n.b)) {
                Tensor& gg = ensure_grad(n.b);
                for (int64_t i = 0; i < d; ++i) gg.data()[i] += gr[i] * xhat[static_cast<size_t>(i)];
            }
            if (rg(n.c)) {
                kern::axpy(static_cast<size_t>(d), 1.0, gr, ensure_grad(n.c).data());
            }
            if (rg(n.a)) {
                for (int64_t i = 0; i < d; ++i) dxhat[static_cast<size_t>(i)] = gr[i] * gamma.data()[i];
                const double m1 = kern::sum(static_cast<size_t>(d), dxhat.data()) * inv_d;
                const double m2 =
                    kern::dot(static_cast<size_t>(d), dxhat.data(), xhat.data()) * inv_d;
                Tensor& gx = ensure_grad(n.a);
                double* gxr = gx.row(r);
                for (int64_t i = 0; i < d; ++i) {
                    gxr[i] += rstd * (dxhat[static_cast<size_t>(i)] - m1 -
                                      xhat[static_cast<size_t>(i)] * m2);
                }
            }
        }
        break;
    }

    case Op::embedding_rows: {
        if (rg(n.a)) {
            Tensor& gt = ensure_grad(n.a);
            for (size_t r = 0; r < n.ids.size(); ++r) {
                kern::axpy(static_cast<size_t>(gt.cols()), 1.0, g.row(static_cast<int64_t>(r)),
                           gt.row(n.ids[r]));
            }
        }
        break;
    }

    case Op::replace_row0: {
        if (rg(n.a)) {
            Tensor& gx = ensure_grad(n.a);
            for (int64_t r = 1; r < g.rows(); ++r) {
                kern::axpy(static_cast<size_t>(g.cols()), 1.0, g.row(r), gx.row(r));
            }
        }
        if (rg(n.b)) {
            kern::axpy(static_cast<size_t>(g.cols()), 1.0, g.row(0), ensure_grad(n.b).data());
        }
        break;
    }

    case Op::slice_rows: {
        if (rg(n.a)) {
            Tensor& gx = ensure_grad(n.a);
            for (int64_t r = 0; r < n.i1; ++r) {
                kern::axpy(static_cast<size_t>(g.cols()), 1.0, g.row(r), gx.row(n.i0 + r));
            }
        }
        break;
    }

    case Op::slice_cols: {
        if (rg(n.a)) {
            Tensor& gx = ensure_grad(n.a);
            for (int64_t r = 0; r < g.rows(); ++r) {
                kern::axpy(static_cast<size_t>(n.i1), 1.0, g.row(r), gx.row(r) + n.i0);
            }
        }
        break;
    }

    case Op::concat_cols: {
        int64_t off = 0;
        for (NodeId p : n.many) {
            const int64_t w = val(p).cols();
            if (rg(p)) {
                Tensor& gp = ensure_grad(p);
                for (int64_t r = 0; r < g.rows(); ++r) {
                    kern::axpy(static_cast<size_t>(w), 1.0, g.row(r) + off, gp.row(r));
                }
            }
            off += w;
        }
        break;
    }

    case Op::softmax: {
        if (rg(n.a)) {
            const Tensor& y = n.value;
            const double inv_tau = 1.0 / n.scalar;
            Tensor& gx = ensure_grad(n.a);
            for (int64_t r = 0; r < y.rows(); ++r) {
                const double* yr = y.row(r);
                const double* gr = g.row(r);
                double* gxr = gx.row(r);
                const double gy = kern::dot(static_cast<size_t>(y.cols()), gr, yr);
                for (int64_t i = 0; i < y.cols(); ++i) {
                    gxr[i] += yr[i] * (gr[i] - gy) * inv_tau;
                }
            }
        }
        break;
    }

    case Op::causal_softmax_rows: {
        if (rg(n.a)) {
            const Tensor& y = n.value;
            Tensor& gx = ensure_grad(n.a);
            for (int64_t r = 0; r < y.rows(); ++r) {
                const double* yr = y.row(r);
                const double* gr = g.row(r);
                double* gxr = gx.row(r);
                const size_t w = static_cast<size_t>(r + 1);
                const double gy = kern::dot(w, gr, yr);
                for (size_t i = 0; i < w; ++i) gxr[i] += yr[i] * (gr[i] - gy);
            }
        }
        break;
    }

    case Op::cross_entropy_nll: {
        if (rg(n.a)) {
            Tensor& gx = ensure_grad(n.a);
            const double coeff = g.at(0) / static_cast<double>(n.ids.size());
            for (int64_t r = 0; r < gx.rows(); ++r) {
                kern::axpy(static_cast<size_t>(gx.cols()), coeff, n.aux.row(r), gx.row(r));
                gx.at(r, n.ids[static_cast<size_t>(r)]) -= coeff;
            }
        }
        break;
    }

    case Op::kl_div: {
        const Tensor& p = v(node(n.a));
        const Tensor& q = v(node(n.b));
        const double gs = g.at(0);
        if (rg(n.a)) {
            Tensor& gp = ensure_grad(n.a);
            for (int64_t i = 0; i < p.size(); ++i) {
                const double pi = std::max(p.data()[i], KL_CLAMP);
                const double qi = std::max(q.data()[i], KL_CLAMP);
                gp.data()[i] += gs * (std::log(pi / qi) + 1.0);
            }
        }
        if (rg(n.b)) {
            Tensor& gq = ensure_grad(n.b);
            for (int64_t i = 0; i < p.size(); ++i) {
                if (q.data()[i] >= KL_CLAMP) {
                    gq.data()[i] -= gs * p.data()[i] / q.data()[i];
                }
            }
        }
        break;
    }

    case Op::weighted_sum: {
        if (rg(n.a)) {
            kern::axpy(static_cast<size_t>(n.aux.size()), g.at(0), n.aux.data(),
                       ensure_grad(n.a).data());
        }
        break;
    }
    }
}

} // namespace mrgr
