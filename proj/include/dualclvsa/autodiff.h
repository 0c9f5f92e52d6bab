#pragma once

// Reverse-mode automatic differentiation over dense row-major float64 arrays.
//
// A Graph is a define-by-run tape: every operation appends a node whose
// inputs are earlier nodes, and backward() walks the tape once in reverse.
// Model weights live outside the tape as Tensors with requires_grad set;
// Graph::param() binds them so gradients accumulate into Tensor::grad.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualclvsa/errors.h"

namespace dualclvsa::ad {

using Shape = std::vector<std::size_t>;

inline constexpr double kEpsilon = 1e-12;

using dualclvsa::ContractError;
using dualclvsa::DimensionError;

std::string shape_to_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

struct Tensor {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    // Empty until a backward pass reaches this tensor.
    std::vector<double> grad;

    Tensor() = default;
    Tensor(Shape s, std::vector<double> values);
    explicit Tensor(Shape s, double fill = 0.0);

    static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }
    static Tensor vector(std::vector<double> values);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    bool has_grad() const { return !grad.empty(); }
    void zero_grad();

    double& operator()(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
};

enum class OpKind {
    Leaf,
    Constant,
    MatMul,
    Conv1d,
    Sigmoid,
    Tanh,
    Relu,
    Exp,
    Log,
    Add,
    Sub,
    Mul,
    Scale,
    Softmax,
    Concat,
    Slice,
    Reshape,
    Transpose,
    Sum,
    GaussianKl,
    CrossEntropy,
};

const char* op_name(OpKind op);

enum class UnaryKind { Sigmoid, Tanh, Relu, Exp, Log };
enum class BinaryKind { Add, Mul, Sub };

class Graph;

/// Handle to a node on a Graph tape. Cheap to copy; valid while the graph lives.
class Var {
public:
    Var() = default;
    Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

    Graph& graph() const { return *graph_; }
    std::size_t id() const { return id_; }
    const Tensor& value() const;
    const Shape& shape() const { return value().shape; }
    // Gradient of the last backward() w.r.t. this node (zeros if unreached).
    std::vector<double> grad() const;

private:
    Graph* graph_ = nullptr;
    std::size_t id_ = 0;
};

struct Node {
    OpKind op = OpKind::Leaf;
    std::vector<std::size_t> inputs;
    Tensor owned;
    std::vector<double> grad;
    bool requires_grad = false;
    // Weight leaves read the external tensor in place instead of copying it.
    Tensor* bound = nullptr;
    std::function<void(Graph&, std::size_t)> backward;

    const Tensor& value() const { return bound ? *bound : owned; }
};

class Graph {
public:
    Graph() { nodes_.reserve(1024); }
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Tensor value);
    Var leaf(Tensor value, bool requires_grad = true);
    // Binds an external weight; backward() adds into weight.grad.
    Var param(Tensor& weight);

    Var push(OpKind op, std::vector<std::size_t> inputs, Tensor value,
             std::function<void(Graph&, std::size_t)> backward);

    void backward(Var loss);

    const Node& node(std::size_t id) const { return nodes_[id]; }
    Node& node(std::size_t id) { return nodes_[id]; }
    std::size_t size() const { return nodes_.size(); }

    // Accumulates into the gradient buffer of node `id`, allocating on demand.
    std::span<double> grad_buffer(std::size_t id);

    // First node whose value holds NaN/Inf, with its op name.
    std::optional<std::pair<std::size_t, std::string>> first_non_finite() const;

private:
    std::vector<Node> nodes_;
};

// ---- operations ------------------------------------------------------------

Var matmul(Var a, Var b);
Var conv1d(Var input, Var kernel, std::size_t stride = 1, std::size_t padding = 0);

Var unary(UnaryKind kind, Var x);
Var binary(BinaryKind kind, Var a, Var b);
Var sigmoid(Var x);
Var tanh(Var x);
Var relu(Var x);
Var exp(Var x);
Var log(Var x);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double factor);

Var softmax(Var x, int axis = -1);
Var concat(const std::vector<Var>& xs, int axis);
Var slice(Var x, int axis, std::size_t start, std::size_t length);
Var reshape(Var x, Shape shape);
Var transpose(Var x);
Var sum(Var x);

// KL(q || p) for diagonal Gaussians parameterized by mean and log-variance,
// summed over all elements.
Var gaussian_kl(Var mu_q, Var logvar_q, Var mu_p, Var logvar_p);

// -log softmax(logits)[label] for a logits vector of any shape with `size()` classes.
Var cross_entropy(Var logits, std::size_t label);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

// ---- gradient checking -----------------------------------------------------

using ScalarFn = std::function<Var(Graph&, Var)>;

// Central-difference check of backward() at x. Returns max |fd - g| / max(1, |g|).
double finite_difference_check(const ScalarFn& f, const Tensor& x, double h = 1e-5);

// Same check, over selected (tensor, element) coordinates of external weights.
// `loss` must rebuild the graph from the current weight values on each call.
struct WeightCoordinate {
    Tensor* weight;
    std::size_t index;
};
double finite_difference_check(const std::function<double(bool with_backward)>& loss,
                               std::span<const WeightCoordinate> coords, double h = 1e-5);

}  // namespace dualclvsa::ad
