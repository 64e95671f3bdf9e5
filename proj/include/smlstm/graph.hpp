#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "smlstm/tensor.hpp"

namespace smlstm {

/// Named parameter tensors. std::map keeps iteration order deterministic,
/// which fixes gradient accumulation and optimizer update order.
using ParamStore = std::map<std::string, Tensor>;

/// Gradients keyed by parameter name; absent entries mean zero.
using GradientStore = std::map<std::string, Tensor>;

enum class OpKind : std::uint8_t {
    Input,
    Param,
    Add,
    AddN,
    Sub,
    Mul,
    Scale,
    MatMul,
    AddBias,
    Sigmoid,
    Tanh,
    Relu,
    SoftmaxMasked,
    Sum,
    Concat,
    Stack,
    Rows,
    Row,
    Broadcast,
};

/// Handle to a node in a Graph. Only meaningful together with the graph
/// that created it.
struct Value {
    std::uint32_t id = UINT32_MAX;
};

/// Reverse-mode autodiff over an eagerly evaluated, append-only graph.
/// Node creation order is a topological order by construction; backward
/// walks it in reverse, so accumulation order is fixed and replay is
/// bit-exact.
class Graph {
public:
    Graph() = default;
    explicit Graph(const ParamStore* params) : params_(params) {}

    /// Constant leaf; receives no gradient entry in the result store.
    Value input(Tensor t);
    /// Leaf bound to the parameter tensor of that name. Repeated calls
    /// with the same name return the same node.
    Value param(const std::string& name);

    Value add(Value a, Value b);
    Value add_n(const std::vector<Value>& terms);
    Value sub(Value a, Value b);
    Value mul(Value a, Value b);
    Value scale(Value a, double factor);
    /// Matrix product. 1-D operands are treated as a row vector (left)
    /// or column vector (right); the unit dimension is squeezed away.
    Value matmul(Value a, Value b);
    /// x[m*n] + b[n] broadcast over rows; for two 1-D operands this is add.
    Value add_bias(Value x, Value b);
    /// x @ W + b.
    Value affine(Value x, Value w, Value b) { return add_bias(matmul(x, w), b); }
    Value sigmoid(Value a);
    Value tanh(Value a);
    Value relu(Value a);
    /// Masked stable softmax over a 1-D tensor. Masked-out entries are
    /// exactly zero; kept entries are shift-invariant and sum to 1.
    Value softmax_masked(Value logits, const std::vector<bool>& mask);
    Value softmax(Value logits);
    /// Sum of all elements, yielding a scalar (shape {1}).
    Value sum(Value a);
    Value concat(Value a, Value b);
    /// Stack 1-D rows of equal length into a [K x C] matrix.
    Value stack(const std::vector<Value>& rows);
    /// Gather rows of a [V x D] matrix; backward scatter-adds.
    Value rows(Value matrix, const std::vector<std::size_t>& ids);
    /// One row of a 2-D matrix as a 1-D tensor.
    Value row(Value matrix, std::size_t r);
    /// Replicate a scalar into a 1-D tensor of length n.
    Value broadcast(Value scalar, std::size_t n);

    const Tensor& value(Value v) const;
    /// Gradient tensor of a node after backward(); zero tensor if the node
    /// was unreachable from the root.
    const Tensor& grad(Value v) const;

    /// Gradients of a scalar root w.r.t. every Param leaf. Accumulation
    /// runs in reverse creation order, exactly once per node.
    GradientStore backward(Value root);

    std::size_t num_nodes() const { return nodes_.size(); }

    /// Central finite differences of f over every coordinate of params.
    static GradientStore finite_difference_gradient(
        const std::function<double(const ParamStore&)>& f, const ParamStore& params,
        double eps = 1e-5);

private:
    struct Node {
        OpKind op;
        std::vector<std::uint32_t> inputs;
        Tensor out;
        Tensor grad;
        bool grad_alloc = false;
        double factor = 1.0;                    // Scale
        std::vector<std::uint8_t> mask;         // SoftmaxMasked
        std::vector<std::size_t> ids;           // Rows
        std::string param_name;                 // Param
    };

    Value push(Node n);
    Node& node(Value v);
    const Node& cnode(Value v) const;
    Tensor& ensure_grad(std::uint32_t id);

    std::vector<Node> nodes_;
    std::map<std::string, std::uint32_t> param_nodes_;
    const ParamStore* params_ = nullptr;
    Tensor zero_grad_;
};

/// Numerically stable sigmoid with the exponent argument clamped to
/// |x| <= 40; outside that range the true gradient is below 1e-17.
double sigmoid_clamped(double x);

}  // namespace smlstm
