#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tokendrop/autodiff.hpp"

namespace tokendrop {

// Named parameter block living outside any graph. Forward passes bind it
// into a graph as a leaf; gradients are harvested from that leaf afterwards.
struct Param {
    std::string name;
    Shape shape;
    std::vector<double> value;

    Param() = default;
    Param(std::string n, Shape s) : name(std::move(n)), shape(std::move(s)) {
        value.assign(shape_numel(shape), 0.0);
    }
    std::size_t numel() const { return value.size(); }

    void fill_truncated_normal(Rng& rng, double sigma) {
        for (double& v : value) v = rng.truncated_normal(sigma, 2.0 * sigma);
    }
    void fill(double v) { std::fill(value.begin(), value.end(), v); }
};

// Sum of per-sample gradients keyed by parameter identity.
class GradMap {
  public:
    void accumulate(const Param& p, const std::vector<double>& g) {
        auto& slot = grads_[&p];
        if (slot.size() != g.size()) slot.assign(g.size(), 0.0);
        for (std::size_t i = 0; i < g.size(); ++i) slot[i] += g[i];
    }
    const std::vector<double>* find(const Param& p) const {
        auto it = grads_.find(&p);
        return it == grads_.end() ? nullptr : &it->second;
    }
    void scale(double s) {
        for (auto& [_, g] : grads_)
            for (double& v : g) v *= s;
    }
    void clear() { grads_.clear(); }
    bool all_finite() const;

  private:
    std::unordered_map<const Param*, std::vector<double>> grads_;
};

// Creates graph leaves for parameters and remembers which leaf belongs to
// which parameter so gradients can be read back after backward().
class Binder {
  public:
    explicit Binder(Graph& g) : graph_(g) {}

    Tensor operator()(const Param& p) {
        auto it = bound_.find(&p);
        if (it != bound_.end()) return it->second;  // one leaf per param per graph
        Tensor t = graph_.leaf(p.shape, p.value);
        bound_.emplace(&p, t);
        return t;
    }

    // Routes the parameter through an existing graph tensor instead of its
    // stored value (finite-difference checks differentiate through this).
    void bind_override(const Param& p, Tensor t) { bound_[&p] = t; }

    Graph& graph() { return graph_; }

    // After backward(): add each bound parameter's leaf gradient into `out`.
    void harvest(GradMap& out) const {
        for (const auto& [p, t] : bound_) out.accumulate(*p, t.grad());
    }
    // Restricted harvest for phases that train a subset.
    void harvest(GradMap& out, const std::vector<const Param*>& only) const {
        for (const Param* p : only) {
            auto it = bound_.find(p);
            if (it != bound_.end()) out.accumulate(*p, it->second.grad());
        }
    }

  private:
    Graph& graph_;
    std::unordered_map<const Param*, Tensor> bound_;
};

}  // namespace tokendrop
