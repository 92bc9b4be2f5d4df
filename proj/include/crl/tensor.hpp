#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace crl {

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct UsageError : std::logic_error {
    explicit UsageError(const std::string& msg) : std::logic_error(msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Long-lived trainable parameter: values, gradient accumulator and Adam
// moments live here, outside any tape.
struct ParamTensor {
    std::string name;
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    std::vector<double> adam_m;
    std::vector<double> adam_v;
    std::int64_t adam_t = 0;

    std::int64_t size() const { return static_cast<std::int64_t>(value.size()); }
    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

/**
 * Reverse-mode tape. Nodes are created eagerly (values computed at op call
 * time) in topological order; backward() replays the recorded closures in
 * reverse. One tape per forward pass; nothing is retained across passes.
 */
class Tape {
public:
    struct Node {
        Shape shape;
        std::vector<double> val;
        std::vector<double> grad;        // allocated only when needs_grad
        std::function<void()> back;      // empty for leaves and constants
        bool needs_grad = false;
        const char* op = "leaf";
    };

    explicit Tape(bool grad_enabled = true, bool finite_guard = true)
        : grad_enabled_(grad_enabled), finite_guard_(finite_guard) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool grad_enabled() const { return grad_enabled_; }
    bool finite_guard() const { return finite_guard_; }
    std::size_t node_count() const { return nodes_.size(); }

    Node* make(Shape shape, bool needs_grad, const char* op) {
        nodes_.emplace_back();
        Node& n = nodes_.back();
        n.shape = std::move(shape);
        n.val.assign(static_cast<std::size_t>(numel(n.shape)), 0.0);
        n.needs_grad = grad_enabled_ && needs_grad;
        if (n.needs_grad) n.grad.assign(n.val.size(), 0.0);
        n.op = op;
        return &n;
    }

    void reset() { nodes_.clear(); }

    // Seeds d(loss)/d(loss)=1 and runs recorded closures newest-first.
    // Interior node grads are zeroed per pass; leaf grads (variables and
    // parameter accumulators) accumulate, so repeated calls without reset
    // add one full pass each time.
    void backward(Node* loss) {
        if (!grad_enabled_) throw UsageError("backward: tape recorded without gradients");
        if (numel(loss->shape) != 1)
            throw UsageError("backward: loss must be scalar, got shape " + shape_str(loss->shape));
        if (!loss->needs_grad) return;  // loss independent of any variable
        for (auto& n : nodes_)
            if (n.needs_grad && n.back && &n != loss) std::fill(n.grad.begin(), n.grad.end(), 0.0);
        loss->grad[0] = 1.0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            if (it->needs_grad && it->back) it->back();
        }
    }

    void check_finite(const Node* n) const {
        if (!finite_guard_) return;
        for (double v : n->val) {
            if (!std::isfinite(v))
                throw NumericError(std::string("non-finite value produced by op '") + n->op + "'");
        }
    }

private:
    std::deque<Node> nodes_;  // deque: stable addresses under growth
    bool grad_enabled_;
    bool finite_guard_;
};

// Lightweight handle into a tape node.
class Tensor {
public:
    Tensor() = default;
    Tensor(Tape* tape, Tape::Node* node) : tape_(tape), node_(node) {}

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::int64_t size() const { return static_cast<std::int64_t>(node_->val.size()); }
    int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }

    const std::vector<double>& values() const { return node_->val; }
    std::vector<double>& values() { return node_->val; }
    const std::vector<double>& grad() const { return node_->grad; }
    bool needs_grad() const { return node_->needs_grad; }

    double item() const {
        if (size() != 1) throw UsageError("item(): tensor is not scalar, shape " + shape_str(shape()));
        return node_->val[0];
    }

    double v(std::int64_t i) const { return node_->val[static_cast<std::size_t>(i)]; }
    double v(int i, int j) const {
        return node_->val[static_cast<std::size_t>(i) * static_cast<std::size_t>(shape()[1]) +
                          static_cast<std::size_t>(j)];
    }

    Tape& tape() const { return *tape_; }
    Tape* tape_ptr() const { return tape_; }
    Tape::Node* node() const { return node_; }

private:
    Tape* tape_ = nullptr;
    Tape::Node* node_ = nullptr;
};

// ---- leaf constructors ----

inline Tensor constant(Tape& tape, Shape shape, const std::vector<double>& vals) {
    if (static_cast<std::int64_t>(vals.size()) != numel(shape))
        throw ShapeError("constant: value count " + std::to_string(vals.size()) +
                         " does not match shape " + shape_str(shape));
    Tape::Node* n = tape.make(std::move(shape), /*needs_grad=*/false, "constant");
    n->val = vals;
    tape.check_finite(n);
    return {&tape, n};
}

inline Tensor scalar(Tape& tape, double v) { return constant(tape, Shape{1}, {v}); }

inline Tensor zeros(Tape& tape, Shape shape) {
    Tape::Node* n = tape.make(std::move(shape), false, "zeros");
    return {&tape, n};
}

// A differentiable leaf variable (test/entry-point use).
inline Tensor variable(Tape& tape, Shape shape, const std::vector<double>& vals) {
    if (static_cast<std::int64_t>(vals.size()) != numel(shape))
        throw ShapeError("variable: value count " + std::to_string(vals.size()) +
                         " does not match shape " + shape_str(shape));
    Tape::Node* n = tape.make(std::move(shape), /*needs_grad=*/true, "variable");
    n->val = vals;
    tape.check_finite(n);
    return {&tape, n};
}

// Enters a parameter into the graph. In grad mode the backward closure
// accumulates into the parameter's grad buffer.
inline Tensor param(Tape& tape, ParamTensor& p) {
    Tape::Node* n = tape.make(p.shape, /*needs_grad=*/true, "param");
    n->val = p.value;
    if (n->needs_grad) {
        ParamTensor* pp = &p;
        n->back = [n, pp]() {
            for (std::size_t i = 0; i < n->grad.size(); ++i) pp->grad[i] += n->grad[i];
        };
    }
    return {&tape, n};
}

// Parameter as a frozen constant (no gradient flows to it).
inline Tensor frozen(Tape& tape, const ParamTensor& p) {
    Tape::Node* n = tape.make(p.shape, false, "frozen");
    n->val = p.value;
    return {&tape, n};
}

inline void backward(const Tensor& loss) { loss.tape().backward(loss.node()); }

}  // namespace crl
