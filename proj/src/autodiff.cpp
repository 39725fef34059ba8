#include "clothdyn/autodiff.hpp"
#include "clothdyn/params.hpp"

#include <sstream>
#include <utility>

namespace clothdyn::ad {

namespace {

std::string shape_str(const Mat& m) {
    std::ostringstream os;
    os << "(" << m.rows() << "x" << m.cols() << ")";
    return os.str();
}

void require_same_shape(const Mat& a, const Mat& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw UsageError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

// Accumulate into a parent's grad only when it participates in the graph.
template <class Expr>
void acc(Tape& t, int id, const Expr& e) {
    if (id >= 0 && t.requires_grad(id)) t.grad_ref(id) += e;
}

}  // namespace

Var Tape::push(Mat value, bool requires_grad, std::function<void(Tape&, int)> backward_fn) {
    check_finite(value, "tape op output");
    TapeNode node;
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    node.backward = std::move(backward_fn);
    nodes_.push_back(std::move(node));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Mat v) { return push(std::move(v), false, nullptr); }

Var Tape::leaf(Mat v, bool requires_grad) { return push(std::move(v), requires_grad, nullptr); }

void Tape::bind(ParamStore& store) {
    if (store_ != nullptr && store_ != &store)
        throw UsageError("tape is already bound to a different ParamStore");
    store_ = &store;
}

Var Tape::param(const std::string& name) {
    if (store_ == nullptr) throw UsageError("tape has no bound ParamStore");
    return param(*store_, name);
}

Var Tape::param(ParamStore& store, const std::string& name) {
    if (store_ == nullptr) store_ = &store;
    if (store_ != &store) throw UsageError("tape is bound to a different ParamStore");
    int idx = store.index_of(name);
    Slot& s = store.slot(idx);
    Var v = push(s.value, s.trainable, [idx](Tape& t, int self) {
        t.store()->slot(idx).grad += t.grad_ref(self);
    });
    nodes_[v.id].slot = idx;
    return v;
}

Mat& Tape::grad_ref(int id) {
    TapeNode& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
}

void Tape::backward(Var loss) {
    if (loss.tape != this) throw UsageError("backward: loss was not recorded on this tape");
    if (backward_done_) throw UsageError("backward: already called on this tape");
    backward_done_ = true;
    const Mat& lv = nodes_[loss.id].value;
    if (lv.rows() != 1 || lv.cols() != 1) throw UsageError("backward: loss must be scalar");
    if (store_ != nullptr) store_->zero_grads();
    grad_ref(loss.id)(0, 0) = 1.0;
    for (int i = loss.id; i >= 0; --i) {
        TapeNode& n = nodes_[i];
        if (!n.requires_grad || !n.backward || n.grad.size() == 0) continue;
        n.backward(*this, i);
    }
}

// ---------------------------------------------------------------- arithmetic

Var add(Var a, Var b) {
    Tape& t = *a.tape;
    require_same_shape(t.value(a), t.value(b), "add");
    Mat v = t.value(a) + t.value(b);
    int ia = a.id, ib = b.id;
    return t.push(std::move(v), t.requires_grad(ia) || t.requires_grad(ib), [ia, ib](Tape& tt, int self) {
        const Mat& g = tt.grad_ref(self);
        acc(tt, ia, g);
        acc(tt, ib, g);
    });
}

Var sub(Var a, Var b) {
    Tape& t = *a.tape;
    require_same_shape(t.value(a), t.value(b), "sub");
    Mat v = t.value(a) - t.value(b);
    int ia = a.id, ib = b.id;
    return t.push(std::move(v), t.requires_grad(ia) || t.requires_grad(ib), [ia, ib](Tape& tt, int self) {
        const Mat& g = tt.grad_ref(self);
        acc(tt, ia, g);
        acc(tt, ib, -g);
    });
}

Var mul(Var a, Var b) {
    Tape& t = *a.tape;
    require_same_shape(t.value(a), t.value(b), "mul");
    Mat v = t.value(a).cwiseProduct(t.value(b));
    int ia = a.id, ib = b.id;
    return t.push(std::move(v), t.requires_grad(ia) || t.requires_grad(ib), [ia, ib](Tape& tt, int self) {
        const Mat& g = tt.grad_ref(self);
        acc(tt, ia, g.cwiseProduct(tt.value(ib)));
        acc(tt, ib, g.cwiseProduct(tt.value(ia)));
    });
}

Var scale(Var a, double s) {
    Tape& t = *a.tape;
    Mat v = t.value(a) * s;
    int ia = a.id;
    return t.push(std::move(v), t.requires_grad(ia), [ia, s](Tape& tt, int self) {
        acc(tt, ia, tt.grad_ref(self) * s);
    });
}

Var square(Var a) {
    Tape& t = *a.tape;
    Mat v = t.value(a).array().square();
    int ia = a.id;
    return t.push(std::move(v), t.requires_grad(ia), [ia](Tape& tt, int self) {
        acc(tt, ia, 2.0 * tt.grad_ref(self).cwiseProduct(tt.value(ia)));
    });
}

Var relu(Var a) {
    Tape& t = *a.tape;
    Mat v = t.value(a).cwiseMax(0.0);
    int ia = a.id;
    return t.push(std::move(v), t.requires_grad(ia), [ia](Tape& tt, int self) {
        const Mat& g = tt.grad_ref(self);
        acc(tt, ia, (tt.value(ia).array() > 0.0).select(g, Mat::Zero(g.rows(), g.cols())));
    });
}

Var tanh_(Var a) {
    Tape& t = *a.tape;
    Mat v = t.value(a).array().tanh();
    int ia = a.id;
    return t.push(std::move(v), t.requires_grad(ia), [ia](Tape& tt, int self) {
        const Mat& y = tt.value(self);
        acc(tt, ia, tt.grad_ref(self).cwiseProduct((1.0 - y.array().square()).matrix()));
    });
}

Var activate(Var a, Act act) {
    switch (act) {
        case Act::Relu: return relu(a);
        case Act::Tanh: return tanh_(a);
        case Act::Identity: return a;
    }
    throw UsageError("unknown activation");
}

// ------------------------------------------------------------ linear algebra

Var matmul(Var a, Var b) {
    Tape& t = *a.tape;
    const Mat& av = t.value(a);
    const Mat& bv = t.value(b);
    if (av.cols() != bv.rows())
        throw UsageError("matmul: inner dimension mismatch " + shape_str(av) + " vs " + shape_str(bv));
    Mat v = av * bv;
    int ia = a.id, ib = b.id;
    return t.push(std::move(v), t.requires_grad(ia) || t.requires_grad(ib), [ia, ib](Tape& tt, int self) {
        const Mat& g = tt.grad_ref(self);
        acc(tt, ia, g * tt.value(ib).transpose());
        acc(tt, ib, tt.value(ia).transpose() * g);
    });
}

Var matmul_nt(Var x, Var w) {
    Tape& t = *x.tape;
    const Mat& xv = t.value(x);
    const Mat& wv = t.value(w);
    if (xv.cols() != wv.cols())
        throw UsageError("matmul_nt: feature dimension mismatch " + shape_str(xv) + " vs " + shape_str(wv));
    Mat v = xv * wv.transpose();
    int ix = x.id, iw = w.id;
    return t.push(std::move(v), t.requires_grad(ix) || t.requires_grad(iw), [ix, iw](Tape& tt, int self) {
        const Mat& g = tt.grad_ref(self);
        acc(tt, ix, g * tt.value(iw));
        acc(tt, iw, g.transpose() * tt.value(ix));
    });
}

Var add_rowvec(Var x, Var b) {
    Tape& t = *x.tape;
    const Mat& xv = t.value(x);
    const Mat& bv = t.value(b);
    if (bv.rows() != 1 || bv.cols() != xv.cols())
        throw UsageError("add_rowvec: bias shape mismatch " + shape_str(xv) + " vs " + shape_str(bv));
    Mat v = xv.rowwise() + bv.row(0);
    int ix = x.id, ib = b.id;
    return t.push(std::move(v), t.requires_grad(ix) || t.requires_grad(ib), [ix, ib](Tape& tt, int self) {
        const Mat& g = tt.grad_ref(self);
        acc(tt, ix, g);
        acc(tt, ib, g.colwise().sum());
    });
}

Var dense_forward(Var x, Var w, Var b, Act act) {
    return activate(add_rowvec(matmul_nt(x, w), b), act);
}

// ------------------------------------------------------------------ structure

Var gather_rows(Var x, std::vector<int> idx) {
    Tape& t = *x.tape;
    const Mat& xv = t.value(x);
    Mat v(static_cast<int>(idx.size()), xv.cols());
    for (int i = 0; i < static_cast<int>(idx.size()); ++i) v.row(i) = xv.row(idx[i]);
    int ix = x.id;
    return t.push(std::move(v), t.requires_grad(ix), [ix, idx = std::move(idx)](Tape& tt, int self) {
        if (!tt.requires_grad(ix)) return;
        const Mat& g = tt.grad_ref(self);
        Mat& gx = tt.grad_ref(ix);
        for (int i = 0; i < static_cast<int>(idx.size()); ++i) gx.row(idx[i]) += g.row(i);
    });
}

Var scatter_sum_rows(Var x, std::vector<int> dst, int out_rows) {
    Tape& t = *x.tape;
    const Mat& xv = t.value(x);
    if (static_cast<int>(dst.size()) != xv.rows())
        throw UsageError("scatter_sum_rows: index count does not match row count");
    Mat v = Mat::Zero(out_rows, xv.cols());
    for (int i = 0; i < xv.rows(); ++i) v.row(dst[i]) += xv.row(i);
    int ix = x.id;
    return t.push(std::move(v), t.requires_grad(ix), [ix, dst = std::move(dst)](Tape& tt, int self) {
        if (!tt.requires_grad(ix)) return;
        const Mat& g = tt.grad_ref(self);
        Mat& gx = tt.grad_ref(ix);
        for (int i = 0; i < gx.rows(); ++i) gx.row(i) += g.row(dst[i]);
    });
}

Var slice_rows(Var x, int r0, int n) {
    Tape& t = *x.tape;
    const Mat& xv = t.value(x);
    if (r0 < 0 || n < 0 || r0 + n > xv.rows()) throw UsageError("slice_rows: range out of bounds");
    Mat v = xv.middleRows(r0, n);
    int ix = x.id;
    return t.push(std::move(v), t.requires_grad(ix), [ix, r0, n](Tape& tt, int self) {
        if (!tt.requires_grad(ix)) return;
        tt.grad_ref(ix).middleRows(r0, n) += tt.grad_ref(self);
    });
}

Var slice_cols(Var x, int c0, int n) {
    Tape& t = *x.tape;
    const Mat& xv = t.value(x);
    if (c0 < 0 || n < 0 || c0 + n > xv.cols()) throw UsageError("slice_cols: range out of bounds");
    Mat v = xv.middleCols(c0, n);
    int ix = x.id;
    return t.push(std::move(v), t.requires_grad(ix), [ix, c0, n](Tape& tt, int self) {
        if (!tt.requires_grad(ix)) return;
        tt.grad_ref(ix).middleCols(c0, n) += tt.grad_ref(self);
    });
}

Var concat_cols(const std::vector<Var>& xs) {
    Tape& t = *xs.front().tape;
    int rows = static_cast<int>(t.value(xs[0]).rows());
    int cols = 0;
    bool rg = false;
    std::vector<int> ids, widths;
    for (const Var& x : xs) {
        const Mat& v = t.value(x);
        if (v.rows() != rows) throw UsageError("concat_cols: row count mismatch");
        ids.push_back(x.id);
        widths.push_back(static_cast<int>(v.cols()));
        cols += static_cast<int>(v.cols());
        rg = rg || t.requires_grad(x.id);
    }
    Mat v(rows, cols);
    int c = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
        v.middleCols(c, widths[k]) = t.value(ids[k]);
        c += widths[k];
    }
    return t.push(std::move(v), rg, [ids, widths](Tape& tt, int self) {
        const Mat& g = tt.grad_ref(self);
        int c = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            acc(tt, ids[k], g.middleCols(c, widths[k]));
            c += widths[k];
        }
    });
}

Var concat_rows(const std::vector<Var>& xs) {
    Tape& t = *xs.front().tape;
    int cols = static_cast<int>(t.value(xs[0]).cols());
    int rows = 0;
    bool rg = false;
    std::vector<int> ids, heights;
    for (const Var& x : xs) {
        const Mat& v = t.value(x);
        if (v.cols() != cols) throw UsageError("concat_rows: column count mismatch");
        ids.push_back(x.id);
        heights.push_back(static_cast<int>(v.rows()));
        rows += static_cast<int>(v.rows());
        rg = rg || t.requires_grad(x.id);
    }
    Mat v(rows, cols);
    int r = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
        v.middleRows(r, heights[k]) = t.value(ids[k]);
        r += heights[k];
    }
    return t.push(std::move(v), rg, [ids, heights](Tape& tt, int self) {
        const Mat& g = tt.grad_ref(self);
        int r = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            acc(tt, ids[k], g.middleRows(r, heights[k]));
            r += heights[k];
        }
    });
}

Var repeat_rows(Var x, int n) {
    Tape& t = *x.tape;
    const Mat& xv = t.value(x);
    if (xv.rows() != 1) throw UsageError("repeat_rows: input must have one row");
    Mat v = xv.replicate(n, 1);
    int ix = x.id;
    return t.push(std::move(v), t.requires_grad(ix), [ix](Tape& tt, int self) {
        acc(tt, ix, tt.grad_ref(self).colwise().sum());
    });
}

Var reshape_colmajor(Var x, int rows, int cols) {
    Tape& t = *x.tape;
    const Mat& xv = t.value(x);
    if (xv.size() != static_cast<Eigen::Index>(rows) * cols)
        throw UsageError("reshape_colmajor: element count mismatch");
    Mat v = Eigen::Map<const Mat>(xv.data(), rows, cols);
    int ix = x.id;
    int xr = static_cast<int>(xv.rows()), xc = static_cast<int>(xv.cols());
    return t.push(std::move(v), t.requires_grad(ix), [ix, xr, xc](Tape& tt, int self) {
        const Mat& g = tt.grad_ref(self);
        acc(tt, ix, Eigen::Map<const Mat>(g.data(), xr, xc));
    });
}

// ---------------------------------------------------------------- reductions

Var sum_all(Var x) {
    Tape& t = *x.tape;
    Mat v(1, 1);
    v(0, 0) = t.value(x).sum();
    int ix = x.id;
    return t.push(std::move(v), t.requires_grad(ix), [ix](Tape& tt, int self) {
        if (!tt.requires_grad(ix)) return;
        double g = tt.grad_ref(self)(0, 0);
        tt.grad_ref(ix).array() += g;
    });
}

Var mean_all(Var x) {
    Tape& t = *x.tape;
    double n = static_cast<double>(t.value(x).size());
    Mat v(1, 1);
    v(0, 0) = t.value(x).sum() / n;
    int ix = x.id;
    return t.push(std::move(v), t.requires_grad(ix), [ix, n](Tape& tt, int self) {
        if (!tt.requires_grad(ix)) return;
        double g = tt.grad_ref(self)(0, 0) / n;
        tt.grad_ref(ix).array() += g;
    });
}

Var mse(Var a, Var b) {
    Tape& t = *a.tape;
    require_same_shape(t.value(a), t.value(b), "mse");
    double n = static_cast<double>(t.value(a).size());
    Mat diff = t.value(a) - t.value(b);
    Mat v(1, 1);
    v(0, 0) = diff.array().square().sum() / n;
    int ia = a.id, ib = b.id;
    return t.push(std::move(v), t.requires_grad(ia) || t.requires_grad(ib), [ia, ib, n](Tape& tt, int self) {
        double g = tt.grad_ref(self)(0, 0) * 2.0 / n;
        Mat d = g * (tt.value(ia) - tt.value(ib));
        acc(tt, ia, d);
        acc(tt, ib, -d);
    });
}

// ------------------------------------------------------------------- softmax

Var colwise_softmax(Var x) {
    Tape& t = *x.tape;
    const Mat& xv = t.value(x);
    Mat v(xv.rows(), xv.cols());
    for (int c = 0; c < xv.cols(); ++c) {
        Vec col = xv.col(c);
        double m = col.maxCoeff();
        Vec e = (col.array() - m).exp();
        v.col(c) = e / e.sum();
    }
    int ix = x.id;
    return t.push(std::move(v), t.requires_grad(ix), [ix](Tape& tt, int self) {
        if (!tt.requires_grad(ix)) return;
        const Mat& y = tt.value(self);
        const Mat& g = tt.grad_ref(self);
        Mat& gx = tt.grad_ref(ix);
        for (int c = 0; c < y.cols(); ++c) {
            double dot = y.col(c).dot(g.col(c));
            gx.col(c) += y.col(c).cwiseProduct(g.col(c).array().matrix() - Vec::Constant(y.rows(), dot));
        }
    });
}

Var segment_weighted_sum(Var feats, Var alpha) {
    Tape& t = *feats.tape;
    const Mat& f = t.value(feats);
    const Mat& a = t.value(alpha);
    int v_count = static_cast<int>(a.rows());
    int b_count = static_cast<int>(a.cols());
    if (f.rows() != static_cast<Eigen::Index>(v_count) * b_count)
        throw UsageError("segment_weighted_sum: segment layout mismatch");
    Mat out = Mat::Zero(b_count, f.cols());
    for (int b = 0; b < b_count; ++b)
        for (int v = 0; v < v_count; ++v) out.row(b) += a(v, b) * f.row(b * v_count + v);
    int if_ = feats.id, ia = alpha.id;
    return t.push(std::move(out), t.requires_grad(if_) || t.requires_grad(ia),
                  [if_, ia, v_count, b_count](Tape& tt, int self) {
                      const Mat& g = tt.grad_ref(self);
                      const Mat& f = tt.value(if_);
                      const Mat& a = tt.value(ia);
                      if (tt.requires_grad(if_)) {
                          Mat& gf = tt.grad_ref(if_);
                          for (int b = 0; b < b_count; ++b)
                              for (int v = 0; v < v_count; ++v) gf.row(b * v_count + v) += a(v, b) * g.row(b);
                      }
                      if (tt.requires_grad(ia)) {
                          Mat& ga = tt.grad_ref(ia);
                          for (int b = 0; b < b_count; ++b)
                              for (int v = 0; v < v_count; ++v) ga(v, b) += f.row(b * v_count + v).dot(g.row(b));
                      }
                  });
}

}  // namespace clothdyn::ad
