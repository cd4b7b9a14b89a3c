#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "rwz/tensor.hpp"

namespace rwz::ad {

class Graph;

/// Handle to a node of an expression graph.
struct Var {
    Graph* graph = nullptr;
    int id = -1;

    const Shape& shape() const;
    bool valid() const { return graph != nullptr && id >= 0; }
};

using Bindings = std::map<std::string, Tensor>;
using TensorMap = std::map<std::string, Tensor>;

enum class Op {
    Leaf,
    Constant,
    Add,
    Sub,
    Mul,
    Scale,
    AddScalar,
    Matmul,
    Relu,
    Sigmoid,
    Tanh,
    Abs,
    Softmax,
    Concat,
    Slice,
    Reshape,
    Permute,
    BroadcastTo,
    SumAll,
    SumAxis,
    IndexSelect,
};

const char* op_name(Op op);

/// Define-by-run expression graph.
///
/// Building a node only infers its shape; `evaluate` computes every node in
/// insertion order (which is topological) from the leaf bindings, and
/// `backward` propagates a seed gradient back to every named leaf. A graph
/// is single-threaded; build one per batch.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    /// Named input whose value is supplied at evaluate time.
    Var leaf(const std::string& name, Shape shape);
    Var constant(Tensor value);

    /// Label attached to nodes created from now on; used in error messages.
    void set_stage(std::string stage) { stage_ = std::move(stage); }
    /// Register a node so `evaluate` reports its value under `name`.
    void output(const std::string& name, Var v);

    /// Computes all nodes. Every leaf must be bound with a tensor of its declared shape.
    TensorMap evaluate(const Bindings& bindings);
    bool evaluated() const { return evaluated_; }
    const Tensor& value(Var v) const;

    /// Gradients of `<seed, output>` with respect to every leaf. Unused leaves get zeros.
    TensorMap backward(Var output, const Tensor& seed);
    /// Scalar output shortcut with seed 1.
    TensorMap backward(Var scalar_output);

    /// Sign pattern of every ReLU/abs input; changes iff a perturbation crossed a kink.
    std::vector<char> kink_signature() const;

    std::size_t node_count() const { return nodes_.size(); }
    const Shape& shape_of(int id) const { return nodes_.at(static_cast<std::size_t>(id)).shape; }

    // Primitives. Binary elementwise ops broadcast with trailing-axis alignment.
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double s);
    Var add_scalar(Var a, double s);
    /// [..., m, k] x [..., k, n]; either side may be rank 2 and is then shared across the batch.
    Var matmul(Var a, Var b);
    Var relu(Var a);
    Var sigmoid(Var a);
    Var tanh(Var a);
    Var abs(Var a);
    Var softmax(Var a, int axis);
    Var concat(const std::vector<Var>& parts, int axis);
    Var slice(Var a, int axis, std::size_t begin, std::size_t end);
    Var reshape(Var a, Shape shape);
    Var permute(Var a, std::vector<std::size_t> perm);
    Var broadcast_to(Var a, Shape shape);
    Var sum(Var a);
    Var sum(Var a, int axis);
    Var mean(Var a);
    Var mean(Var a, int axis);
    /// Rows of `a` along axis 0 picked by `indices` (repeats allowed).
    Var index_select(Var a, std::vector<std::size_t> indices);

private:
    struct Node {
        Op op = Op::Leaf;
        std::vector<int> inputs;
        Shape shape;
        std::string name;
        std::string stage;
        int axis = 0;
        std::size_t begin = 0;
        std::size_t end = 0;
        double scalar = 0.0;
        std::vector<std::size_t> indices;
    };

    Var push(Node node);
    const Node& node(Var v) const;
    int norm_axis(int axis, std::size_t rank) const;
    void forward_node(std::size_t id);
    void backward_node(std::size_t id, std::vector<Tensor>& grads);
    Tensor& grad_slot(std::vector<Tensor>& grads, int id);

    std::vector<Node> nodes_;
    std::vector<Tensor> values_;
    std::map<std::string, int> leaves_;
    std::map<std::string, int> outputs_;
    std::string stage_;
    bool evaluated_ = false;
};

// Free-function spellings used by model code.
inline Var operator+(Var a, Var b) { return a.graph->add(a, b); }
inline Var operator-(Var a, Var b) { return a.graph->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.graph->mul(a, b); }
inline Var operator*(double s, Var a) { return a.graph->scale(a, s); }
inline Var operator+(Var a, double s) { return a.graph->add_scalar(a, s); }
inline Var matmul(Var a, Var b) { return a.graph->matmul(a, b); }
inline Var relu(Var a) { return a.graph->relu(a); }
inline Var sigmoid(Var a) { return a.graph->sigmoid(a); }
inline Var tanh(Var a) { return a.graph->tanh(a); }
inline Var abs(Var a) { return a.graph->abs(a); }
inline Var softmax(Var a, int axis) { return a.graph->softmax(a, axis); }
inline Var slice(Var a, int axis, std::size_t b, std::size_t e) { return a.graph->slice(a, axis, b, e); }
inline Var reshape(Var a, Shape s) { return a.graph->reshape(a, std::move(s)); }
inline Var permute(Var a, std::vector<std::size_t> p) { return a.graph->permute(a, std::move(p)); }
inline Var sum(Var a) { return a.graph->sum(a); }
inline Var sum(Var a, int axis) { return a.graph->sum(a, axis); }
inline Var mean(Var a) { return a.graph->mean(a); }
inline Var mean(Var a, int axis) { return a.graph->mean(a, axis); }

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate of x.
Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h);

}  // namespace rwz::ad
