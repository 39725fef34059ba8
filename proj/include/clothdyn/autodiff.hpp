#pragma once

#include "clothdyn/common.hpp"

#include <functional>
#include <string>
#include <vector>

namespace clothdyn::ad {

class Tape;
class ParamStore;

// Handle to a value recorded on a tape.
struct Var {
    Tape* tape = nullptr;
    int id = -1;
};

struct TapeNode {
    Mat value;
    Mat grad;  // allocated when backward runs
    bool requires_grad = false;
    int slot = -1;  // ParamStore slot index for parameter leaves
    // Pulls this node's grad and accumulates into its parents' grads.
    std::function<void(Tape&, int)> backward;
};

// Reverse-mode tape. Values are dense 64-bit matrices; every public op
// verifies its output is finite and records a backward rule. Backward
// replays the recorded ops exactly once, in reverse order of creation.
class Tape {
  public:
    // Associates the tape with the store its parameter leaves come from.
    void bind(ParamStore& store);

    Var constant(Mat v);
    Var leaf(Mat v, bool requires_grad);
    Var param(ParamStore& store, const std::string& name);
    Var param(const std::string& name);  // uses the bound store

    // Raw node injection; ops (and tests crafting custom rules) build on this.
    Var push(Mat value, bool requires_grad, std::function<void(Tape&, int)> backward_fn);

    // Seeds d(loss)/d(loss)=1, walks the tape in reverse, and writes
    // parameter gradients into the bound ParamStore (zeroing them first).
    // Loss must be scalar; a second call on the same tape is a usage error.
    void backward(Var loss);

    const Mat& value(int id) const { return nodes_[id].value; }
    const Mat& value(Var v) const { return nodes_[v.id].value; }
    Mat& grad_ref(int id);
    bool requires_grad(int id) const { return nodes_[id].requires_grad; }
    ParamStore* store() const { return store_; }
    std::size_t size() const { return nodes_.size(); }

  private:
    std::vector<TapeNode> nodes_;
    ParamStore* store_ = nullptr;
    bool backward_done_ = false;
};

enum class Act { Identity, Relu, Tanh };

// --- elementwise / arithmetic ---
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // Hadamard
Var scale(Var a, double s);
Var square(Var a);
Var relu(Var a);
Var tanh_(Var a);
Var activate(Var a, Act act);

// --- linear algebra ---
Var matmul(Var a, Var b);     // a*b
Var matmul_nt(Var x, Var w);  // x*w^T, the row-features-by-weight product
Var add_rowvec(Var x, Var b); // b is 1xC, broadcast over rows

// y = act(W x + b) for a batch of row features x (R x n_in), W (n_out x n_in).
Var dense_forward(Var x, Var w, Var b, Act act);

// --- structure ---
Var gather_rows(Var x, std::vector<int> idx);
Var scatter_sum_rows(Var x, std::vector<int> dst, int out_rows);
Var slice_rows(Var x, int r0, int n);
Var slice_cols(Var x, int c0, int n);
Var concat_cols(const std::vector<Var>& xs);
Var concat_rows(const std::vector<Var>& xs);
Var repeat_rows(Var x, int n);  // x is 1xC
Var reshape_colmajor(Var x, int rows, int cols);

// --- reductions / losses ---
Var sum_all(Var x);   // 1x1
Var mean_all(Var x);  // 1x1
Var mse(Var a, Var b);  // mean over all elements of (a-b)^2, 1x1

// --- softmax over columns (each column is one attention group) ---
Var colwise_softmax(Var x);

// Weighted per-segment sum: feats is (B*V)xK with one contiguous block of V
// rows per segment, alpha is VxB column-per-segment; returns BxK with
// out(b,:) = sum_v alpha(v,b) * feats(b*V+v,:).
Var segment_weighted_sum(Var feats, Var alpha);

}  // namespace clothdyn::ad
