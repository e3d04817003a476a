#include "tokendrop/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tokendrop {

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int e : s) n *= static_cast<std::size_t>(e);
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

const Shape& Tensor::shape() const { return graph->node(id).shape; }

int Tensor::rows() const {
    const Shape& s = shape();
    return s.size() == 2 ? s[0] : 1;
}

int Tensor::cols() const {
    const Shape& s = shape();
    return s.size() == 2 ? s[1] : s[0];
}

std::size_t Tensor::numel() const { return graph->node(id).data.size(); }

std::vector<double>& Tensor::data() { return graph->node(id).data; }
const std::vector<double>& Tensor::data() const { return graph->node(id).data; }
const std::vector<double>& Tensor::grad() const { return graph->node(id).grad; }

double Tensor::scalar() const {
    const auto& d = data();
    if (d.size() != 1) {
        throw std::invalid_argument("scalar() on tensor of shape " + shape_str(shape()));
    }
    return d[0];
}

Tensor Graph::leaf(Shape shape, std::vector<double> values) {
    if (values.size() != shape_numel(shape)) {
        throw std::invalid_argument("leaf data length " + std::to_string(values.size()) +
                                    " does not match shape " + shape_str(shape));
    }
    TensorNode n;
    n.shape = std::move(shape);
    n.data = std::move(values);
    n.grad.assign(n.data.size(), 0.0);
    return emplace(std::move(n));
}

Tensor Graph::leaf(Shape shape, std::span<const double> values) {
    return leaf(std::move(shape), std::vector<double>(values.begin(), values.end()));
}

Tensor Graph::emplace(TensorNode n) {
    for (int p : n.parents) {
        if (p < 0 || p >= size()) throw std::logic_error("op references a node outside this graph");
    }
    if (n.grad.size() != n.data.size()) n.grad.assign(n.data.size(), 0.0);
    nodes_.push_back(std::move(n));
    return Tensor{this, size() - 1};
}

void Graph::backward(Tensor root) {
    if (root.graph != this) throw std::invalid_argument("backward: root belongs to another graph");
    if (root.numel() != 1) {
        throw std::invalid_argument("backward: root must be scalar, got shape " +
                                    shape_str(root.shape()));
    }

    // Mark ancestors of the root; only their adjoints flow.
    std::vector<std::uint8_t> reachable(static_cast<std::size_t>(size()), 0);
    std::vector<int> stack{root.id};
    reachable[static_cast<std::size_t>(root.id)] = 1;
    while (!stack.empty()) {
        const int id = stack.back();
        stack.pop_back();
        for (int p : node(id).parents) {
            if (!reachable[static_cast<std::size_t>(p)]) {
                reachable[static_cast<std::size_t>(p)] = 1;
                stack.push_back(p);
            }
        }
    }

    AdjointBuffers adj(size());
    for (int id = 0; id < size(); ++id) {
        if (reachable[static_cast<std::size_t>(id)]) adj.ensure(id, node(id).data.size());
    }
    adj.at(root.id)[0] = 1.0;

    for (int id = root.id; id >= 0; --id) {
        if (!reachable[static_cast<std::size_t>(id)]) continue;
        const TensorNode& n = node(id);
        if (n.backward) n.backward(*this, n, adj.at(id), adj);
        auto& g = node(id).grad;
        const auto& a = adj.at(id);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += a[i];
    }
}

void Graph::zero_grads() {
    for (auto& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), 0.0);
}

namespace {

void require_same_graph(Tensor a, Tensor b, const char* op) {
    if (a.graph != b.graph) throw std::invalid_argument(std::string(op) + ": operands from different graphs");
}

TensorNode make_node(const char* op, Shape shape, std::vector<int> parents) {
    TensorNode n;
    n.op = op;
    n.shape = std::move(shape);
    n.data.assign(shape_numel(n.shape), 0.0);
    n.parents = std::move(parents);
    return n;
}

}  // namespace

Tensor add(Tensor a, Tensor b) {
    require_same_graph(a, b, "add");
    if (a.shape() != b.shape()) {
        throw std::invalid_argument("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    }
    TensorNode n = make_node("add", a.shape(), {a.id, b.id});
    const auto& da = a.data();
    const auto& db = b.data();
    for (std::size_t i = 0; i < n.data.size(); ++i) n.data[i] = da[i] + db[i];
    n.backward = [](Graph&, const TensorNode& self, const std::vector<double>& g, AdjointBuffers& adj) {
        auto& ga = adj.at(self.parents[0]);
        auto& gb = adj.at(self.parents[1]);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i];
            gb[i] += g[i];
        }
    };
    return a.graph->emplace(std::move(n));
}

Tensor add_rowvec(Tensor a, Tensor v) {
    require_same_graph(a, v, "add_rowvec");
    const int m = a.rows(), c = a.cols();
    if (static_cast<std::size_t>(c) != v.numel()) {
        throw std::invalid_argument("add_rowvec: width " + std::to_string(c) + " vs vector " +
                                    shape_str(v.shape()));
    }
    TensorNode n = make_node("add_rowvec", a.shape(), {a.id, v.id});
    const auto& da = a.data();
    const auto& dv = v.data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < c; ++j)
            n.data[static_cast<std::size_t>(i * c + j)] =
                da[static_cast<std::size_t>(i * c + j)] + dv[static_cast<std::size_t>(j)];
    n.backward = [m, c](Graph&, const TensorNode& self, const std::vector<double>& g, AdjointBuffers& adj) {
        auto& ga = adj.at(self.parents[0]);
        auto& gv = adj.at(self.parents[1]);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < c; ++j) {
                const std::size_t k = static_cast<std::size_t>(i * c + j);
                ga[k] += g[k];
                gv[static_cast<std::size_t>(j)] += g[k];
            }
    };
    return a.graph->emplace(std::move(n));
}

Tensor mul(Tensor a, Tensor b) {
    require_same_graph(a, b, "mul");
    if (a.shape() != b.shape()) {
        throw std::invalid_argument("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    }
    TensorNode n = make_node("mul", a.shape(), {a.id, b.id});
    const auto& da = a.data();
    const auto& db = b.data();
    for (std::size_t i = 0; i < n.data.size(); ++i) n.data[i] = da[i] * db[i];
    n.backward = [](Graph& g2, const TensorNode& self, const std::vector<double>& g, AdjointBuffers& adj) {
        const auto& da = g2.node(self.parents[0]).data;
        const auto& db = g2.node(self.parents[1]).data;
        auto& ga = adj.at(self.parents[0]);
        auto& gb = adj.at(self.parents[1]);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i] * db[i];
            gb[i] += g[i] * da[i];
        }
    };
    return a.graph->emplace(std::move(n));
}

Tensor affine(Tensor a, double scale, double shift) {
    TensorNode n = make_node("affine", a.shape(), {a.id});
    const auto& da = a.data();
    for (std::size_t i = 0; i < n.data.size(); ++i) n.data[i] = scale * da[i] + shift;
    n.backward = [scale](Graph&, const TensorNode& self, const std::vector<double>& g, AdjointBuffers& adj) {
        auto& ga = adj.at(self.parents[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += scale * g[i];
    };
    return a.graph->emplace(std::move(n));
}

Tensor matmul(Tensor a, Tensor b) {
    require_same_graph(a, b, "matmul");
    const int m = a.rows(), k = a.cols(), k2 = b.rows(), p = b.cols();
    if (k != k2) {
        throw std::invalid_argument("matmul: inner extents differ, " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    }
    TensorNode n = make_node("matmul", {m, p}, {a.id, b.id});
    const auto& da = a.data();
    const auto& db = b.data();
    for (int i = 0; i < m; ++i) {
        for (int t = 0; t < k; ++t) {
            const double av = da[static_cast<std::size_t>(i * k + t)];
            const std::size_t brow = static_cast<std::size_t>(t * p);
            const std::size_t orow = static_cast<std::size_t>(i * p);
            for (int j = 0; j < p; ++j) n.data[orow + static_cast<std::size_t>(j)] += av * db[brow + static_cast<std::size_t>(j)];
        }
    }
    n.backward = [m, k, p](Graph& g2, const TensorNode& self, const std::vector<double>& g, AdjointBuffers& adj) {
        const auto& da = g2.node(self.parents[0]).data;
        const auto& db = g2.node(self.parents[1]).data;
        auto& ga = adj.at(self.parents[0]);
        auto& gb = adj.at(self.parents[1]);
        // ga += g * b^T
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < p; ++j) {
                const double gv = g[static_cast<std::size_t>(i * p + j)];
                if (gv == 0.0) continue;
                for (int t = 0; t < k; ++t)
                    ga[static_cast<std::size_t>(i * k + t)] += gv * db[static_cast<std::size_t>(t * p + j)];
            }
        // gb += a^T * g
        for (int t = 0; t < k; ++t)
            for (int i = 0; i < m; ++i) {
                const double av = da[static_cast<std::size_t>(i * k + t)];
                if (av == 0.0) continue;
                for (int j = 0; j < p; ++j)
                    gb[static_cast<std::size_t>(t * p + j)] += av * g[static_cast<std::size_t>(i * p + j)];
            }
    };
    return a.graph->emplace(std::move(n));
}

Tensor transpose(Tensor a) {
    const int m = a.rows(), c = a.cols();
    TensorNode n = make_node("transpose", {c, m}, {a.id});
    const auto& da = a.data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < c; ++j)
            n.data[static_cast<std::size_t>(j * m + i)] = da[static_cast<std::size_t>(i * c + j)];
    n.backward = [m, c](Graph&, const TensorNode& self, const std::vector<double>& g, AdjointBuffers& adj) {
        auto& ga = adj.at(self.parents[0]);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < c; ++j)
                ga[static_cast<std::size_t>(i * c + j)] += g[static_cast<std::size_t>(j * m + i)];
    };
    return a.graph->emplace(std::move(n));
}

namespace {

// Shared forward/backward for masked and unmasked row softmax. Dead columns
// get probability exactly 0, so the Jacobian term vanishes for them too.
Tensor softmax_impl(Tensor a, std::vector<std::uint8_t> col_live, const char* op) {
    const int m = a.rows(), c = a.cols();
    if (!col_live.empty() && static_cast<int>(col_live.size()) != c) {
        throw std::invalid_argument("softmax mask length does not match column count");
    }
    TensorNode n = make_node(op, a.shape(), {a.id});
    const auto& da = a.data();
    for (int i = 0; i < m; ++i) {
        const std::size_t row = static_cast<std::size_t>(i * c);
        double mx = -HUGE_VAL;
        for (int j = 0; j < c; ++j) {
            if (!col_live.empty() && !col_live[static_cast<std::size_t>(j)]) continue;
            mx = std::max(mx, da[row + static_cast<std::size_t>(j)]);
        }
        if (mx == -HUGE_VAL) throw std::invalid_argument("softmax: every column is masked out");
        double denom = 0.0;
        for (int j = 0; j < c; ++j) {
            double e = 0.0;
            if (col_live.empty() || col_live[static_cast<std::size_t>(j)]) {
                e = std::exp(da[row + static_cast<std::size_t>(j)] - mx);
            }
            n.data[row + static_cast<std::size_t>(j)] = e;
            denom += e;
        }
        for (int j = 0; j < c; ++j) n.data[row + static_cast<std::size_t>(j)] /= denom;
    }
    n.backward = [m, c](Graph&, const TensorNode& self, const std::vector<double>& g, AdjointBuffers& adj) {
        auto& ga = adj.at(self.parents[0]);
        for (int i = 0; i < m; ++i) {
            const std::size_t row = static_cast<std::size_t>(i * c);
            double dot = 0.0;
            for (int j = 0; j < c; ++j) dot += g[row + static_cast<std::size_t>(j)] * self.data[row + static_cast<std::size_t>(j)];
            for (int j = 0; j < c; ++j) {
                const std::size_t k = row + static_cast<std::size_t>(j);
                ga[k] += self.data[k] * (g[k] - dot);
            }
        }
    };
    return a.graph->emplace(std::move(n));
}

}  // namespace

Tensor softmax_rows(Tensor a) { return softmax_impl(a, {}, "softmax_rows"); }

Tensor softmax_rows_masked(Tensor a, std::vector<std::uint8_t> col_live) {
    return softmax_impl(a, std::move(col_live), "softmax_rows_masked");
}

Tensor layer_norm(Tensor a, Tensor gain, Tensor bias, double eps) {
    require_same_graph(a, gain, "layer_norm");
    require_same_graph(a, bias, "layer_norm");
    if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be positive");
    const int m = a.rows(), c = a.cols();
    if (c < 2) throw std::invalid_argument("layer_norm: row width must be at least 2");
    if (gain.numel() != static_cast<std::size_t>(c) || bias.numel() != static_cast<std::size_t>(c)) {
        throw std::invalid_argument("layer_norm: gain/bias width does not match " + shape_str(a.shape()));
    }
    TensorNode n = make_node("layer_norm", a.shape(), {a.id, gain.id, bias.id});
    const auto& da = a.data();
    const auto& dg = gain.data();
    const auto& db = bias.data();
    std::vector<double> xhat(n.data.size());
    std::vector<double> inv_std(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        const std::size_t row = static_cast<std::size_t>(i * c);
        double mean = 0.0;
        for (int j = 0; j < c; ++j) mean += da[row + static_cast<std::size_t>(j)];
        mean /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) {
            const double d = da[row + static_cast<std::size_t>(j)] - mean;
            var += d * d;
        }
        var /= c;  // population variance
        const double istd = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(i)] = istd;
        for (int j = 0; j < c; ++j) {
            const std::size_t k = row + static_cast<std::size_t>(j);
            xhat[k] = (da[k] - mean) * istd;
            n.data[k] = xhat[k] * dg[static_cast<std::size_t>(j)] + db[static_cast<std::size_t>(j)];
        }
    }
    n.backward = [m, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                     Graph& g2, const TensorNode& self, const std::vector<double>& g, AdjointBuffers& adj) {
        const auto& dg = g2.node(self.parents[1]).data;
        auto& ga = adj.at(self.parents[0]);
        auto& ggain = adj.at(self.parents[1]);
        auto& gbias = adj.at(self.parents[2]);
        for (int i = 0; i < m; ++i) {
            const std::size_t row = static_cast<std::size_t>(i * c);
            double sum_dxh = 0.0, sum_dxh_xh = 0.0;
            for (int j = 0; j < c; ++j) {
                const std::size_t k = row + static_cast<std::size_t>(j);
                const double dxh = g[k] * dg[static_cast<std::size_t>(j)];
                sum_dxh += dxh;
                sum_dxh_xh += dxh * xhat[k];
                ggain[static_cast<std::size_t>(j)] += g[k] * xhat[k];
                gbias[static_cast<std::size_t>(j)] += g[k];
            }
            const double istd = inv_std[static_cast<std::size_t>(i)];
            for (int j = 0; j < c; ++j) {
                const std::size_t k = row + static_cast<std::size_t>(j);
                const double dxh = g[k] * dg[static_cast<std::size_t>(j)];
                ga[k] += istd * (dxh - (sum_dxh + xhat[k] * sum_dxh_xh) / c);
            }
        }
    };
    return a.graph->emplace(std::move(n));
}

Tensor gelu(Tensor a) {
    TensorNode n = make_node("gelu", a.shape(), {a.id});
    const auto& da = a.data();
    for (std::size_t i = 0; i < n.data.size(); ++i) {
        const double x = da[i];
        n.data[i] = x * 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
    }
    n.backward = [](Graph& g2, const TensorNode& self, const std::vector<double>& g, AdjointBuffers& adj) {
        const auto& da = g2.node(self.parents[0]).data;
        auto& ga = adj.at(self.parents[0]);
        constexpr double inv_sqrt_2pi = 0.3989422804014326779;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double x = da[i];
            const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
            ga[i] += g[i] * (cdf + x * pdf);
        }
    };
    return a.graph->emplace(std::move(n));
}

Tensor sigmoid(Tensor a) {
    TensorNode n = make_node("sigmoid", a.shape(), {a.id});
    const auto& da = a.data();
    for (std::size_t i = 0; i < n.data.size(); ++i) {
        const double x = da[i];
        // One-sided exp keeps both tails overflow-free.
        n.data[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }
    n.backward = [](Graph&, const TensorNode& self, const std::vector<double>& g, AdjointBuffers& adj) {
        auto& ga = adj.at(self.parents[0]);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double s = self.data[i];
            ga[i] += g[i] * s * (1.0 - s);
        }
    };
    return a.graph->emplace(std::move(n));
}

Tensor vlog(Tensor a) {
    TensorNode n = make_node("log", a.shape(), {a.id});
    const auto& da = a.data();
    for (std::size_t i = 0; i < n.data.size(); ++i) n.data[i] = std::log(da[i]);
    n.backward = [](Graph& g2, const TensorNode& self, const std::vector<double>& g, AdjointBuffers& adj) {
        const auto& da = g2.node(self.parents[0]).data;
        auto& ga = adj.at(self.parents[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / da[i];
    };
    return a.graph->emplace(std::move(n));
}

Tensor sum_all(Tensor a) {
    TensorNode n = make_node("sum", {1}, {a.id});
    double s = 0.0;
    for (double v : a.data()) s += v;
    n.data[0] = s;
    n.backward = [](Graph&, const TensorNode& self, const std::vector<double>& g, AdjointBuffers& adj) {
        auto& ga = adj.at(self.parents[0]);
        for (double& v : ga) v += g[0];
    };
    return a.graph->emplace(std::move(n));
}

Tensor slice_cols(Tensor a, int c0, int c1) {
    const int m = a.rows(), c = a.cols();
    if (c0 < 0 || c1 > c || c0 >= c1) {
        throw std::invalid_argument("slice_cols: range [" + std::to_string(c0) + "," +
                                    std::to_string(c1) + ") out of width " + std::to_string(c));
    }
    const int w = c1 - c0;
    TensorNode n = make_node("slice_cols", {m, w}, {a.id});
    const auto& da = a.data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j)
            n.data[static_cast<std::size_t>(i * w + j)] = da[static_cast<std::size_t>(i * c + c0 + j)];
    n.backward = [m, c, c0, w](Graph&, const TensorNode& self, const std::vector<double>& g, AdjointBuffers& adj) {
        auto& ga = adj.at(self.parents[0]);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j)
                ga[static_cast<std::size_t>(i * c + c0 + j)] += g[static_cast<std::size_t>(i * w + j)];
    };
    return a.graph->emplace(std::move(n));
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    const int m = parts[0].rows();
    int total = 0;
    std::vector<int> widths;
    std::vector<int> parents;
    for (const Tensor& t : parts) {
        require_same_graph(parts[0], t, "concat_cols");
        if (t.rows() != m) throw std::invalid_argument("concat_cols: row count mismatch");
        widths.push_back(t.cols());
        parents.push_back(t.id);
        total += t.cols();
    }
    TensorNode n = make_node("concat_cols", {m, total}, parents);
    int off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto& d = parts[k].data();
        const int w = widths[k];
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j)
                n.data[static_cast<std::size_t>(i * total + off + j)] = d[static_cast<std::size_t>(i * w + j)];
        off += w;
    }
    n.backward = [m, total, widths](Graph&, const TensorNode& self, const std::vector<double>& g, AdjointBuffers& adj) {
        int off = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
            auto& gp = adj.at(self.parents[k]);
            const int w = widths[k];
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < w; ++j)
                    gp[static_cast<std::size_t>(i * w + j)] += g[static_cast<std::size_t>(i * total + off + j)];
            off += w;
        }
    };
    return parts[0].graph->emplace(std::move(n));
}

Tensor concat_rows(Tensor a, Tensor b) {
    require_same_graph(a, b, "concat_rows");
    if (a.cols() != b.cols()) {
        throw std::invalid_argument("concat_rows: width mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    }
    const int ma = a.rows(), mb = b.rows(), c = a.cols();
    TensorNode n = make_node("concat_rows", {ma + mb, c}, {a.id, b.id});
    const auto& da = a.data();
    const auto& db = b.data();
    std::copy(da.begin(), da.end(), n.data.begin());
    std::copy(db.begin(), db.end(), n.data.begin() + da.size());
    n.backward = [](Graph& g2, const TensorNode& self, const std::vector<double>& g, AdjointBuffers& adj) {
        auto& ga = adj.at(self.parents[0]);
        auto& gb = adj.at(self.parents[1]);
        const std::size_t na = g2.node(self.parents[0]).data.size();
        for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[na + i];
    };
    return a.graph->emplace(std::move(n));
}

Tensor take_row(Tensor a, int r) {
    const int m = a.rows(), c = a.cols();
    if (r < 0 || r >= m) throw std::invalid_argument("take_row: row " + std::to_string(r) + " out of " + std::to_string(m));
    TensorNode n = make_node("take_row", {1, c}, {a.id});
    const auto& da = a.data();
    for (int j = 0; j < c; ++j) n.data[static_cast<std::size_t>(j)] = da[static_cast<std::size_t>(r * c + j)];
    n.backward = [r, c](Graph&, const TensorNode& self, const std::vector<double>& g, AdjointBuffers& adj) {
        auto& ga = adj.at(self.parents[0]);
        for (int j = 0; j < c; ++j) ga[static_cast<std::size_t>(r * c + j)] += g[static_cast<std::size_t>(j)];
    };
    return a.graph->emplace(std::move(n));
}

Tensor masked_row_update(Tensor x, Tensor u, std::vector<std::uint8_t> row_live) {
    require_same_graph(x, u, "masked_row_update");
    if (x.shape() != u.shape()) {
        throw std::invalid_argument("masked_row_update: shape mismatch " + shape_str(x.shape()) +
                                    " vs " + shape_str(u.shape()));
    }
    const int m = x.rows(), c = x.cols();
    if (static_cast<int>(row_live.size()) != m) {
        throw std::invalid_argument("masked_row_update: mask length " + std::to_string(row_live.size()) +
                                    " vs " + std::to_string(m) + " rows");
    }
    TensorNode n = make_node("masked_row_update", x.shape(), {x.id, u.id});
    const auto& dx = x.data();
    const auto& du = u.data();
    for (int i = 0; i < m; ++i) {
        const bool live = row_live[static_cast<std::size_t>(i)];
        for (int j = 0; j < c; ++j) {
            const std::size_t k = static_cast<std::size_t>(i * c + j);
            n.data[k] = live ? dx[k] + du[k] : dx[k];
        }
    }
    n.backward = [m, c, row_live = std::move(row_live)](Graph&, const TensorNode& self,
                                                        const std::vector<double>& g, AdjointBuffers& adj) {
        auto& gx = adj.at(self.parents[0]);
        auto& gu = adj.at(self.parents[1]);
        for (int i = 0; i < m; ++i) {
            const bool live = row_live[static_cast<std::size_t>(i)];
            for (int j = 0; j < c; ++j) {
                const std::size_t k = static_cast<std::size_t>(i * c + j);
                gx[k] += g[k];
                if (live) gu[k] += g[k];
            }
        }
    };
    return x.graph->emplace(std::move(n));
}

Tensor cross_entropy(Tensor logits, int label) {
    const int c = static_cast<int>(logits.numel());
    if (logits.rows() != 1) throw std::invalid_argument("cross_entropy: logits must be a single row");
    if (label < 0 || label >= c) {
        throw std::invalid_argument("cross_entropy: label " + std::to_string(label) + " out of " +
                                    std::to_string(c) + " classes");
    }
    TensorNode n = make_node("cross_entropy", {1}, {logits.id});
    const auto& d = logits.data();
    double mx = d[0];
    for (double v : d) mx = std::max(mx, v);
    double denom = 0.0;
    for (double v : d) denom += std::exp(v - mx);
    n.data[0] = mx + std::log(denom) - d[static_cast<std::size_t>(label)];
    n.backward = [label, c](Graph& g2, const TensorNode& self, const std::vector<double>& g, AdjointBuffers& adj) {
        const auto& d = g2.node(self.parents[0]).data;
        auto& gl = adj.at(self.parents[0]);
        double mx = d[0];
        for (double v : d) mx = std::max(mx, v);
        double denom = 0.0;
        for (double v : d) denom += std::exp(v - mx);
        for (int j = 0; j < c; ++j) {
            const double p = std::exp(d[static_cast<std::size_t>(j)] - mx) / denom;
            gl[static_cast<std::size_t>(j)] += g[0] * (p - (j == label ? 1.0 : 0.0));
        }
    };
    return logits.graph->emplace(std::move(n));
}

GradCheckReport grad_check(const ScalarFn& f, const std::vector<double>& theta, double eps) {
    if (eps < 1e-7 || eps > 1e-3) {
        throw std::invalid_argument("grad_check: eps must lie in [1e-7, 1e-3]");
    }
    const int n = static_cast<int>(theta.size());

    const auto eval = [&](const std::vector<double>& t) {
        Graph g;
        Tensor leaf = g.leaf({1, n}, t);
        Tensor root = f(g, leaf);
        const double v = root.scalar();
        if (!std::isfinite(v)) throw std::runtime_error("grad_check: function value is not finite");
        return v;
    };

    std::vector<double> analytic;
    {
        Graph g;
        Tensor leaf = g.leaf({1, n}, theta);
        Tensor root = f(g, leaf);
        if (!std::isfinite(root.scalar())) throw std::runtime_error("grad_check: function value is not finite");
        g.backward(root);
        analytic = leaf.grad();
    }

    GradCheckReport report;
    std::vector<double> t = theta;
    for (int i = 0; i < n; ++i) {
        const double saved = t[static_cast<std::size_t>(i)];
        t[static_cast<std::size_t>(i)] = saved + eps;
        const double up = eval(t);
        t[static_cast<std::size_t>(i)] = saved - eps;
        const double down = eval(t);
        t[static_cast<std::size_t>(i)] = saved;
        const double numeric = (up - down) / (2.0 * eps);
        const double a = analytic[static_cast<std::size_t>(i)];
        double err = 0.0;
        if (std::fabs(a) >= 1e-8 || std::fabs(numeric) >= 1e-8) {
            err = std::fabs(a - numeric) / std::max({std::fabs(a), std::fabs(numeric), 1e-3});
        }
        if (err >= report.max_rel_err) {
            report.max_rel_err = err;
            report.worst_index = static_cast<std::size_t>(i);
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    return report;
}

}  // namespace tokendrop
