#pragma once

#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <vector>

#include "attamba/common.hpp"

namespace attamba {

template <typename T>
struct Tensor;

// One recorded differentiable operation. The graph of nodes reachable from a
// loss is the tape; backward() replays it in reverse topological order.
template <typename T>
struct Node {
    std::vector<Tensor<T>> parents;
    std::function<void(const Tensor<T>& out)> backward;
};

// Dense row-major tensor. Copies share the underlying buffers, so gradients
// accumulated through one copy are visible through all of them.
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::shared_ptr<std::vector<T>> data;
    std::shared_ptr<std::vector<T>> grad;
    bool requires_grad = false;
    std::shared_ptr<Node<T>> node;

    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
        Tensor t;
        t.shape = std::move(shape);
        t.data = std::make_shared<std::vector<T>>(count(t.shape), T(0));
        t.requires_grad = requires_grad;
        // Allocate the grad buffer up front: copies share it, and copies made
        // before a late allocation would never see one made afterwards.
        if (requires_grad) t.ensure_grad();
        return t;
    }

    static Tensor full(std::vector<int> shape, T value, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        std::fill(t.data->begin(), t.data->end(), value);
        return t;
    }

    static Tensor from(std::vector<int> shape, std::vector<T> values,
                       bool requires_grad = false) {
        if (count(shape) != values.size())
            throw ShapeError("Tensor::from: value count does not match shape");
        Tensor t;
        t.shape = std::move(shape);
        t.data = std::make_shared<std::vector<T>>(std::move(values));
        t.requires_grad = requires_grad;
        if (requires_grad) t.ensure_grad();
        return t;
    }

    static Tensor scalar(T value, bool requires_grad = false) {
        return from({1}, {value}, requires_grad);
    }

    bool defined() const { return data != nullptr; }
    int rank() const { return static_cast<int>(shape.size()); }

    int dim(int i) const {
        if (i < 0 || i >= rank()) throw IndexError("Tensor::dim: axis out of range");
        return shape[i];
    }

    std::size_t numel() const { return data ? data->size() : 0; }

    T* ptr() { return data->data(); }
    const T* ptr() const { return data->data(); }

    T& at(std::size_t i) {
        if (i >= numel()) throw IndexError("Tensor::at: index out of range");
        return (*data)[i];
    }
    T at(std::size_t i) const {
        if (i >= numel()) throw IndexError("Tensor::at: index out of range");
        return (*data)[i];
    }

    void ensure_grad() {
        if (!grad) grad = std::make_shared<std::vector<T>>(numel(), T(0));
    }
    void zero_grad() {
        if (grad)
            std::fill(grad->begin(), grad->end(), T(0));
        else
            ensure_grad();
    }
    T* grad_ptr() {
        ensure_grad();
        return grad->data();
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (int i = 0; i < rank(); ++i) os << (i ? "," : "") << shape[i];
        os << "]";
        return os.str();
    }

    static std::size_t count(const std::vector<int>& shape) {
        std::size_t n = 1;
        for (int d : shape) {
            if (d < 0) throw ShapeError("Tensor: negative extent");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }
};

// Taping is on by default and disabled during inference/finite differences.
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = prev; }
};

template <typename T>
inline bool want_grad(const Tensor<T>& t) {
    return grad_mode() && t.requires_grad;
}

template <typename T>
inline void check_finite(const Tensor<T>& t, const char* op) {
    for (T v : *t.data)
        if (!std::isfinite(static_cast<double>(v)))
            throw NumericError(std::string(op) + ": non-finite value in output");
}

// Attach a node to `out` if any parent is differentiable. `backward` reads
// out.grad and accumulates into the parents' grad buffers.
template <typename T, typename F>
inline void attach_node(Tensor<T>& out, std::vector<Tensor<T>> parents, F backward) {
    bool any = false;
    for (const auto& p : parents) any = any || want_grad(p);
    if (!any) return;
    out.requires_grad = true;
    out.ensure_grad();
    out.node = std::make_shared<Node<T>>();
    out.node->parents = std::move(parents);
    out.node->backward = std::move(backward);
}

// Reverse-mode sweep from a scalar loss. Visits each recorded operation once,
// in reverse topological order, accumulating into grad buffers with +=.
template <typename T>
void backward(Tensor<T>& loss) {
    if (loss.numel() != 1)
        throw ContractError("backward: loss must be a scalar, got " + loss.shape_str());
    loss.ensure_grad();
    (*loss.grad)[0] += T(1);
    if (!loss.node) return;

    std::vector<Tensor<T>> topo;
    std::unordered_set<Node<T>*> seen;
    struct Frame {
        Tensor<T> t;
        std::size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({loss, 0});
    seen.insert(loss.node.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        Node<T>* n = f.t.node.get();
        if (f.next_parent < n->parents.size()) {
            Tensor<T>& p = n->parents[f.next_parent++];
            if (p.node && !seen.count(p.node.get())) {
                seen.insert(p.node.get());
                stack.push_back({p, 0});
            }
        } else {
            topo.push_back(f.t);
            stack.pop_back();
        }
    }
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        for (auto& p : it->node->parents)
            if (p.requires_grad) p.ensure_grad();
        it->node->backward(*it);
    }
}

// Central-difference check of the analytic gradients of f with respect to the
// listed parameter tensors. Returns the worst relative error, with the
// denominator floored so near-zero gradients do not blow up the ratio.
template <typename T>
double finite_diff_check(const std::function<Tensor<T>()>& f,
                         const std::vector<Tensor<T>*>& params, T eps) {
    for (auto* p : params) p->zero_grad();
    Tensor<T> loss = f();
    if (loss.numel() != 1) throw ContractError("finite_diff_check: f must return a scalar");
    backward(loss);

    std::vector<std::vector<T>> analytic;
    analytic.reserve(params.size());
    for (auto* p : params) {
        p->ensure_grad();
        analytic.push_back(*p->grad);
    }

    NoGradGuard ng;
    double max_rel = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor<T>& p = *params[pi];
        for (std::size_t i = 0; i < p.numel(); ++i) {
            T saved = (*p.data)[i];
            (*p.data)[i] = saved + eps;
            double fp = static_cast<double>((*f().data)[0]);
            (*p.data)[i] = saved - eps;
            double fm = static_cast<double>((*f().data)[0]);
            (*p.data)[i] = saved;
            double fd = (fp - fm) / (2.0 * static_cast<double>(eps));
            double g = static_cast<double>(analytic[pi][i]);
            double denom = std::max({std::fabs(g), std::fabs(fd), 1e-8});
            max_rel = std::max(max_rel, std::fabs(g - fd) / denom);
        }
    }
    return max_rel;
}

}  // namespace attamba
