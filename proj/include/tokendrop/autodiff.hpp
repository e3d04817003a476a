#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tokendrop/rng.hpp"

namespace tokendrop {

// Row-major dense value in a reverse-mode tape. Rank is 1 or 2; rank-1
// tensors behave as a single row where a matrix is expected.
using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

class Graph;
struct TensorNode;

// Cheap handle into a Graph's node list. Valid for the graph's lifetime.
struct Tensor {
    Graph* graph = nullptr;
    int id = -1;

    bool valid() const { return graph != nullptr && id >= 0; }
    const Shape& shape() const;
    int rows() const;
    int cols() const;
    std::size_t numel() const;
    std::vector<double>& data();
    const std::vector<double>& data() const;
    const std::vector<double>& grad() const;
    double scalar() const;  // value of a single-element tensor
};

// Per-node adjoint buffers used while a backward sweep is in flight.
// Node.grad is only an accumulator: running backward twice without
// zeroing adds the same gradient twice.
class AdjointBuffers {
  public:
    explicit AdjointBuffers(int n) : buffers_(static_cast<std::size_t>(n)) {}
    void ensure(int id, std::size_t n) {
        auto& b = buffers_[static_cast<std::size_t>(id)];
        if (b.size() != n) b.assign(n, 0.0);
    }
    std::vector<double>& at(int id) { return buffers_[static_cast<std::size_t>(id)]; }

  private:
    std::vector<std::vector<double>> buffers_;
};

using BackwardFn = std::function<void(Graph&, const TensorNode&,
                                      const std::vector<double>& self_adj,
                                      AdjointBuffers&)>;

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // zero until backward() runs
    const char* op = "leaf";
    std::vector<int> parents;
    BackwardFn backward;
};

// Owns the tape. Nodes are appended in creation order, which is already a
// topological order (an op node is created after all of its inputs), so the
// backward sweep is a single reverse pass over the node list.
class Graph {
  public:
    explicit Graph(std::uint64_t seed = 0) : rng(seed) {}

    Tensor leaf(Shape shape, std::vector<double> values);
    Tensor leaf(Shape shape, std::span<const double> values);
    Tensor scalar_leaf(double v) { return leaf({1}, std::vector<double>{v}); }

    int size() const { return static_cast<int>(nodes_.size()); }
    TensorNode& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
    const TensorNode& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

    Tensor emplace(TensorNode n);

    // Accumulates d(root)/d(node) into every reachable node's grad.
    // root must hold exactly one element.
    void backward(Tensor root);

    void zero_grads();

    Rng rng;

  private:
    std::deque<TensorNode> nodes_;  // deque keeps references stable
};

// --- ops ------------------------------------------------------------------

Tensor add(Tensor a, Tensor b);                   // same shape
Tensor add_rowvec(Tensor a, Tensor v);            // [m x n] + [n] broadcast over rows
Tensor mul(Tensor a, Tensor b);                   // elementwise
Tensor affine(Tensor a, double scale, double shift);
Tensor matmul(Tensor a, Tensor b);                // [m x k] * [k x n]
Tensor transpose(Tensor a);
Tensor softmax_rows(Tensor a);
// Softmax over live columns only; dead columns get weight exactly 0.
Tensor softmax_rows_masked(Tensor a, std::vector<std::uint8_t> col_live);
Tensor layer_norm(Tensor a, Tensor gain, Tensor bias, double eps);
Tensor gelu(Tensor a);                            // x * Phi(x), exact erf form
Tensor sigmoid(Tensor a);
Tensor vlog(Tensor a);                            // elementwise natural log
Tensor sum_all(Tensor a);                         // -> [1]
Tensor slice_cols(Tensor a, int c0, int c1);      // half-open column range
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(Tensor a, Tensor b);
Tensor take_row(Tensor a, int r);                 // -> [1 x n]
// out_row[i] = live[i] ? x_row[i] + u_row[i] : x_row[i] (bitwise copy).
Tensor masked_row_update(Tensor x, Tensor u, std::vector<std::uint8_t> row_live);
// -log softmax(logits)[label]; logits is a single row.
Tensor cross_entropy(Tensor logits, int label);

// --- finite-difference oracle ----------------------------------------------

// f builds a scalar loss from a [1 x n] leaf holding theta.
using ScalarFn = std::function<Tensor(Graph&, Tensor)>;

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;  // at worst_index
    double numeric = 0.0;
};

// Central differences at +-eps per coordinate against the tape gradient.
// Per-coordinate error is |a - n| / max(|a|, |n|, 1e-3); coordinates where
// both sides are below 1e-8 count as exact.
GradCheckReport grad_check(const ScalarFn& f, const std::vector<double>& theta, double eps);

}  // namespace tokendrop
