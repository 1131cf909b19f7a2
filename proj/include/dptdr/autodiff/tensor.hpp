#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dptdr/error.hpp"

namespace dptdr::ad {

/// Every tensor in the engine is a dense row-major matrix. Vectors are 1 x n
/// and scalars are 1 x 1; the encoder never needs higher ranks.
struct Shape {
    std::size_t rows = 0;
    std::size_t cols = 0;

    constexpr std::size_t size() const noexcept { return rows * cols; }
    constexpr bool operator==(const Shape&) const = default;

    std::string str() const
    {
        return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
    }
};

struct Node;
using NodePtr = std::shared_ptr<Node>;
using BackwardFn = std::function<void(Node& self)>;

struct Node {
    Shape shape;
    std::vector<double> data;
    // Allocated lazily, and only for nodes with requires_grad set.
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    BackwardFn backward;
    const char* op = "leaf";

    void ensure_grad()
    {
        if (grad.size() != data.size()) {
            grad.assign(data.size(), 0.0);
        }
    }
};

/// Handle to a node of the define-by-run graph. Copies share the node.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(NodePtr node) : m_node(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false)
    {
        return from(shape, std::vector<double>(shape.size(), 0.0), requires_grad);
    }

    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false)
    {
        if (values.size() != shape.size()) {
            throw ShapeError("tensor: " + std::to_string(values.size())
                             + " values do not fill shape " + shape.str());
        }
        auto node = std::make_shared<Node>();
        node->shape = shape;
        node->data = std::move(values);
        node->requires_grad = requires_grad;
        return Tensor(std::move(node));
    }

    static Tensor scalar(double v, bool requires_grad = false)
    {
        return from({1, 1}, {v}, requires_grad);
    }

    static Tensor row(std::vector<double> values, bool requires_grad = false)
    {
        Shape s{1, values.size()};
        return from(s, std::move(values), requires_grad);
    }

    bool defined() const noexcept { return static_cast<bool>(m_node); }
    const Shape& shape() const { return m_node->shape; }
    std::size_t rows() const { return m_node->shape.rows; }
    std::size_t cols() const { return m_node->shape.cols; }
    std::size_t size() const { return m_node->shape.size(); }

    std::span<const double> data() const { return m_node->data; }
    std::span<double> mutable_data() { return m_node->data; }
    double operator()(std::size_t r, std::size_t c) const { return m_node->data[r * cols() + c]; }
    double item() const
    {
        if (size() != 1) {
            throw ShapeError("item: tensor of shape " + shape().str() + " is not a scalar");
        }
        return m_node->data[0];
    }

    bool requires_grad() const { return m_node->requires_grad; }
    void set_requires_grad(bool on)
    {
        m_node->requires_grad = on;
        if (!on) {
            m_node->grad.clear();
            m_node->grad.shrink_to_fit();
        }
    }

    bool has_grad() const { return m_node->grad.size() == m_node->data.size() && m_node->requires_grad; }
    std::span<const double> grad() const { return m_node->grad; }
    std::span<double> mutable_grad() { return m_node->grad; }
    void zero_grad()
    {
        if (!m_node->grad.empty()) {
            std::fill(m_node->grad.begin(), m_node->grad.end(), 0.0);
        }
    }
    void clear_grad() { m_node->grad.clear(); }

    /// Detached deep copy (same values, no graph history, same requires_grad).
    Tensor clone() const { return from(shape(), m_node->data, m_node->requires_grad); }

    Node& node() const { return *m_node; }
    const NodePtr& node_ptr() const { return m_node; }

  private:
    NodePtr m_node;
};

namespace detail {

/// Records an op result. The backward closure is kept only when at least one
/// parent requires a gradient, so inference builds no graph.
inline Tensor record(Shape shape, std::vector<double> data, std::vector<Tensor> const& parents,
                     const char* op, BackwardFn backward)
{
    auto node = std::make_shared<Node>();
    node->shape = shape;
    node->data = std::move(data);
    node->op = op;
    for (const auto& p : parents) {
        if (p.requires_grad()) {
            node->requires_grad = true;
            break;
        }
    }
    if (node->requires_grad) {
        node->parents.reserve(parents.size());
        for (const auto& p : parents) {
            node->parents.push_back(p.node_ptr());
        }
        node->backward = std::move(backward);
    }
    return Tensor(std::move(node));
}

}  // namespace detail

/// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
/// reachable node with requires_grad set; leaves keep theirs afterwards.
inline void backward(const Tensor& loss)
{
    if (loss.shape() != Shape{1, 1}) {
        throw ShapeError("backward: loss must be scalar, got " + loss.shape().str());
    }
    if (!loss.requires_grad()) {
        return;
    }
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(&loss.node(), 0);
    seen.insert(&loss.node());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) {
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    loss.node().ensure_grad();
    loss.node().grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && !n->grad.empty()) {
            n->backward(*n);
        }
    }
}

}  // namespace dptdr::ad
