#include "dualclvsa/autodiff.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <memory>
#include <sstream>

#include <Eigen/Core>

namespace dualclvsa::ad {

namespace {
using Index = Eigen::Index;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<Mat>;
using ConstMat = Eigen::Map<const Mat>;
}  // namespace

std::string shape_to_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << 'x';
        out << shape[i];
    }
    out << ']';
    return out.str();
}

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    if (shape_size(shape) != data.size()) {
        throw DimensionError("tensor shape " + shape_to_string(shape) + " does not hold " +
                             std::to_string(data.size()) + " values");
    }
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), data(shape_size(shape), fill) {}

Tensor Tensor::vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
}

void Tensor::zero_grad() { grad.assign(data.size(), 0.0); }

const char* op_name(OpKind op) {
    switch (op) {
        case OpKind::Leaf: return "leaf";
        case OpKind::Constant: return "constant";
        case OpKind::MatMul: return "matmul";
        case OpKind::Conv1d: return "conv1d";
        case OpKind::Sigmoid: return "sigmoid";
        case OpKind::Tanh: return "tanh";
        case OpKind::Relu: return "relu";
        case OpKind::Exp: return "exp";
        case OpKind::Log: return "log";
        case OpKind::Add: return "add";
        case OpKind::Sub: return "sub";
        case OpKind::Mul: return "mul";
        case OpKind::Scale: return "scale";
        case OpKind::Softmax: return "softmax";
        case OpKind::Concat: return "concat";
        case OpKind::Slice: return "slice";
        case OpKind::Reshape: return "reshape";
        case OpKind::Transpose: return "transpose";
        case OpKind::Sum: return "sum";
        case OpKind::GaussianKl: return "gaussian_kl";
        case OpKind::CrossEntropy: return "cross_entropy";
    }
    return "unknown";
}

const Tensor& Var::value() const { return graph_->node(id_).value(); }

std::vector<double> Var::grad() const {
    const Node& n = graph_->node(id_);
    if (n.grad.empty()) return std::vector<double>(n.value().size(), 0.0);
    return n.grad;
}

// ---- Graph -----------------------------------------------------------------

Var Graph::constant(Tensor value) {
    Node n;
    n.op = OpKind::Constant;
    n.owned = std::move(value);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

Var Graph::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.op = OpKind::Leaf;
    n.owned = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

Var Graph::param(Tensor& weight) {
    Node n;
    n.op = OpKind::Leaf;
    n.requires_grad = weight.requires_grad;
    n.bound = &weight;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

Var Graph::push(OpKind op, std::vector<std::size_t> inputs, Tensor value,
                std::function<void(Graph&, std::size_t)> backward) {
    Node n;
    n.op = op;
    n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                  [this](std::size_t i) { return nodes_[i].requires_grad; });
    n.inputs = std::move(inputs);
    n.owned = std::move(value);
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

std::span<double> Graph::grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.value().size(), 0.0);
    return n.grad;
}

void Graph::backward(Var loss) {
    if (&loss.graph() != this) throw ContractError("backward: loss belongs to another graph");
    if (loss.value().size() != 1) {
        throw ContractError("backward: loss must be scalar, got shape " +
                            shape_to_string(loss.shape()));
    }
    for (auto& n : nodes_) n.grad.clear();
    grad_buffer(loss.id())[0] = 1.0;
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (!n.requires_grad || n.grad.empty()) continue;
        if (n.backward) n.backward(*this, id);
        if (n.bound) {
            Tensor& w = *n.bound;
            if (w.grad.size() != w.data.size()) w.grad.assign(w.data.size(), 0.0);
            for (std::size_t i = 0; i < n.grad.size(); ++i) w.grad[i] += n.grad[i];
        }
    }
}

std::optional<std::pair<std::size_t, std::string>> Graph::first_non_finite() const {
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
        for (double v : nodes_[id].value().data) {
            if (!std::isfinite(v)) return std::make_pair(id, std::string(op_name(nodes_[id].op)));
        }
    }
    return std::nullopt;
}

namespace {

Graph& same_graph(Var a, Var b) {
    if (&a.graph() != &b.graph()) throw ContractError("operands belong to different graphs");
    return a.graph();
}

std::size_t normalize_axis(int axis, std::size_t rank, const char* op) {
    const int r = static_cast<int>(rank);
    if (axis < -r || axis >= r) {
        throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                             " invalid for rank " + std::to_string(rank));
    }
    return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

// outer * axis * inner decomposition of a shape around one axis.
struct AxisSplit {
    std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
    AxisSplit r;
    for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
    r.extent = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
    return r;
}

// Right-aligned broadcast; returns output shape or throws.
Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t rank = std::max(a.size(), b.size());
    Shape out(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (da != db && da != 1 && db != 1) {
            throw DimensionError("cannot broadcast " + shape_to_string(a) + " with " +
                                 shape_to_string(b));
        }
        out[i] = std::max(da, db);
    }
    return out;
}

// Maps each flat output index to a flat index of `in` under broadcasting.
std::vector<std::size_t> broadcast_map(const Shape& out, const Shape& in) {
    const std::size_t rank = out.size();
    const std::size_t offset = rank - in.size();
    std::vector<std::size_t> in_stride(rank, 0);
    std::size_t stride = 1;
    for (std::size_t i = rank; i-- > offset;) {
        const std::size_t d = in[i - offset];
        in_stride[i] = d == 1 ? 0 : stride;
        stride *= d;
    }
    const std::size_t total = shape_size(out);
    std::vector<std::size_t> map(total);
    std::vector<std::size_t> idx(rank, 0);
    for (std::size_t flat = 0; flat < total; ++flat) {
        std::size_t src = 0;
        for (std::size_t i = 0; i < rank; ++i) src += idx[i] * in_stride[i];
        map[flat] = src;
        for (std::size_t i = rank; i-- > 0;) {
            if (++idx[i] < out[i]) break;
            idx[i] = 0;
        }
    }
    return map;
}

double stable_sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

// ---- matmul / conv ---------------------------------------------------------

Var matmul(Var a, Var b) {
    Graph& g = same_graph(a, b);
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
        throw DimensionError("matmul: incompatible shapes " + shape_to_string(sa) + " and " +
                             shape_to_string(sb));
    }
    const Index m = static_cast<Index>(sa[0]), k = static_cast<Index>(sa[1]),
                n = static_cast<Index>(sb[1]);
    Tensor out({sa[0], sb[1]}, 0.0);
    MatMap(out.data.data(), m, n).noalias() =
        ConstMat(a.value().data.data(), m, k) * ConstMat(b.value().data.data(), k, n);
    const std::size_t ia = a.id(), ib = b.id();
    return g.push(OpKind::MatMul, {ia, ib}, std::move(out), [=](Graph& gr, std::size_t self) {
        const ConstMat G(gr.node(self).grad.data(), m, n);
        if (gr.node(ia).requires_grad) {
            MatMap(gr.grad_buffer(ia).data(), m, k).noalias() +=
                G * ConstMat(gr.node(ib).value().data.data(), k, n).transpose();
        }
        if (gr.node(ib).requires_grad) {
            MatMap(gr.grad_buffer(ib).data(), k, n).noalias() +=
                ConstMat(gr.node(ia).value().data.data(), m, k).transpose() * G;
        }
    });
}

Var conv1d(Var input, Var kernel, std::size_t stride, std::size_t padding) {
    Graph& g = same_graph(input, kernel);
    const Shape& si = input.shape();
    const Shape& sk = kernel.shape();
    if (si.size() != 2 || sk.size() != 3 || sk[1] != si[0]) {
        throw DimensionError("conv1d: input " + shape_to_string(si) + " incompatible with kernel " +
                             shape_to_string(sk));
    }
    if (stride == 0) throw DimensionError("conv1d: stride must be positive");
    const std::size_t channels = si[0], time = si[1];
    const std::size_t outc = sk[0], width = sk[2];
    if (time + 2 * padding < width) {
        throw DimensionError("conv1d: kernel width " + std::to_string(width) +
                             " exceeds padded length " + std::to_string(time + 2 * padding));
    }
    const std::size_t out_t = (time + 2 * padding - width) / stride + 1;
    // im2col: row (c, w) holds the input samples seen by kernel tap w of channel c.
    std::vector<std::ptrdiff_t> source(width * out_t);
    for (std::size_t w = 0; w < width; ++w)
        for (std::size_t t = 0; t < out_t; ++t) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + w) -
                                       static_cast<std::ptrdiff_t>(padding);
            source[w * out_t + t] = src >= 0 && src < static_cast<std::ptrdiff_t>(time) ? src : -1;
        }
    const std::size_t rows = channels * width;
    auto cols = std::make_shared<std::vector<double>>(rows * out_t, 0.0);
    const auto& X = input.value().data;
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t w = 0; w < width; ++w)
            for (std::size_t t = 0; t < out_t; ++t) {
                const std::ptrdiff_t src = source[w * out_t + t];
                if (src >= 0) (*cols)[(c * width + w) * out_t + t] = X[c * time + static_cast<std::size_t>(src)];
            }
    const Index O = static_cast<Index>(outc), R = static_cast<Index>(rows), T = static_cast<Index>(out_t);
    Tensor out({outc, out_t}, 0.0);
    MatMap(out.data.data(), O, T).noalias() =
        ConstMat(kernel.value().data.data(), O, R) * ConstMat(cols->data(), R, T);
    const std::size_t ii = input.id(), ik = kernel.id();
    return g.push(OpKind::Conv1d, {ii, ik}, std::move(out), [=](Graph& gr, std::size_t self) {
        const ConstMat G(gr.node(self).grad.data(), O, T);
        if (gr.node(ik).requires_grad) {
            MatMap(gr.grad_buffer(ik).data(), O, R).noalias() += G * ConstMat(cols->data(), R, T).transpose();
        }
        if (gr.node(ii).requires_grad) {
            Mat dcols = ConstMat(gr.node(ik).value().data.data(), O, R).transpose() * G;
            auto dX = gr.grad_buffer(ii);
            for (std::size_t c = 0; c < channels; ++c)
                for (std::size_t w = 0; w < width; ++w)
                    for (std::size_t t = 0; t < out_t; ++t) {
                        const std::ptrdiff_t src = source[w * out_t + t];
                        if (src >= 0) {
                            dX[c * time + static_cast<std::size_t>(src)] +=
                                dcols(static_cast<Index>(c * width + w), static_cast<Index>(t));
                        }
                    }
        }
    });
}

// ---- elementwise -----------------------------------------------------------

Var unary(UnaryKind kind, Var x) {
    Graph& g = x.graph();
    Tensor out(x.shape(), 0.0);
    const auto& X = x.value().data;
    OpKind op = OpKind::Sigmoid;
    switch (kind) {
        case UnaryKind::Sigmoid:
            op = OpKind::Sigmoid;
            for (std::size_t i = 0; i < X.size(); ++i) out.data[i] = stable_sigmoid(X[i]);
            break;
        case UnaryKind::Tanh:
            op = OpKind::Tanh;
            for (std::size_t i = 0; i < X.size(); ++i) out.data[i] = std::tanh(X[i]);
            break;
        case UnaryKind::Relu:
            op = OpKind::Relu;
            for (std::size_t i = 0; i < X.size(); ++i) out.data[i] = X[i] < 0.0 ? 0.0 : X[i];
            break;
        case UnaryKind::Exp:
            op = OpKind::Exp;
            for (std::size_t i = 0; i < X.size(); ++i) out.data[i] = std::exp(X[i]);
            break;
        case UnaryKind::Log:
            op = OpKind::Log;
            for (std::size_t i = 0; i < X.size(); ++i) out.data[i] = std::log(std::max(X[i], kEpsilon));
            break;
    }
    const std::size_t ix = x.id();
    return g.push(op, {ix}, std::move(out), [kind, ix](Graph& gr, std::size_t self) {
        const Node& n = gr.node(self);
        const auto& G = n.grad;
        const auto& Y = n.value().data;
        const auto& Xv = gr.node(ix).value().data;
        auto dX = gr.grad_buffer(ix);
        for (std::size_t i = 0; i < G.size(); ++i) {
            double d = 0.0;
            switch (kind) {
                case UnaryKind::Sigmoid: d = Y[i] * (1.0 - Y[i]); break;
                case UnaryKind::Tanh: d = 1.0 - Y[i] * Y[i]; break;
                case UnaryKind::Relu: d = Xv[i] > 0.0 ? 1.0 : 0.0; break;
                case UnaryKind::Exp: d = Y[i]; break;
                case UnaryKind::Log: d = Xv[i] > kEpsilon ? 1.0 / Xv[i] : 0.0; break;
            }
            dX[i] += G[i] * d;
        }
    });
}

Var binary(BinaryKind kind, Var a, Var b) {
    Graph& g = same_graph(a, b);
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    const bool same = sa == sb;
    Shape so = same ? sa : broadcast_shape(sa, sb);
    std::vector<std::size_t> ma, mb;
    if (!same) {
        ma = broadcast_map(so, sa);
        mb = broadcast_map(so, sb);
    }
    Tensor out(so, 0.0);
    const auto& A = a.value().data;
    const auto& B = b.value().data;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        const double av = same ? A[i] : A[ma[i]];
        const double bv = same ? B[i] : B[mb[i]];
        switch (kind) {
            case BinaryKind::Add: out.data[i] = av + bv; break;
            case BinaryKind::Sub: out.data[i] = av - bv; break;
            case BinaryKind::Mul: out.data[i] = av * bv; break;
        }
    }
    const OpKind op = kind == BinaryKind::Add ? OpKind::Add
                      : kind == BinaryKind::Sub ? OpKind::Sub
                                                : OpKind::Mul;
    const std::size_t ia = a.id(), ib = b.id();
    return g.push(op, {ia, ib}, std::move(out),
                  [=, ma = std::move(ma), mb = std::move(mb)](Graph& gr, std::size_t self) {
                      const auto& G = gr.node(self).grad;
                      const bool need_a = gr.node(ia).requires_grad;
                      const bool need_b = gr.node(ib).requires_grad;
                      const auto& Av = gr.node(ia).value().data;
                      const auto& Bv = gr.node(ib).value().data;
                      std::span<double> dA, dB;
                      if (need_a) dA = gr.grad_buffer(ia);
                      if (need_b) dB = gr.grad_buffer(ib);
                      for (std::size_t i = 0; i < G.size(); ++i) {
                          const std::size_t xa = same ? i : ma[i];
                          const std::size_t xb = same ? i : mb[i];
                          switch (kind) {
                              case BinaryKind::Add:
                                  if (need_a) dA[xa] += G[i];
                                  if (need_b) dB[xb] += G[i];
                                  break;
                              case BinaryKind::Sub:
                                  if (need_a) dA[xa] += G[i];
                                  if (need_b) dB[xb] -= G[i];
                                  break;
                              case BinaryKind::Mul:
                                  if (need_a) dA[xa] += G[i] * Bv[xb];
                                  if (need_b) dB[xb] += G[i] * Av[xa];
                                  break;
                          }
                      }
                  });
}

Var sigmoid(Var x) { return unary(UnaryKind::Sigmoid, x); }
Var tanh(Var x) { return unary(UnaryKind::Tanh, x); }
Var relu(Var x) { return unary(UnaryKind::Relu, x); }
Var exp(Var x) { return unary(UnaryKind::Exp, x); }
Var log(Var x) { return unary(UnaryKind::Log, x); }
Var add(Var a, Var b) { return binary(BinaryKind::Add, a, b); }
Var sub(Var a, Var b) { return binary(BinaryKind::Sub, a, b); }
Var mul(Var a, Var b) { return binary(BinaryKind::Mul, a, b); }

Var scale(Var x, double factor) {
    Tensor out = x.value();
    out.requires_grad = false;
    out.grad.clear();
    for (double& v : out.data) v *= factor;
    const std::size_t ix = x.id();
    return x.graph().push(OpKind::Scale, {ix}, std::move(out), [=](Graph& gr, std::size_t self) {
        const auto& G = gr.node(self).grad;
        auto dX = gr.grad_buffer(ix);
        for (std::size_t i = 0; i < G.size(); ++i) dX[i] += factor * G[i];
    });
}

// ---- softmax / shape ops ---------------------------------------------------

Var softmax(Var x, int axis) {
    const Shape& s = x.shape();
    const std::size_t ax = normalize_axis(axis, s.size(), "softmax");
    const AxisSplit sp = split_at(s, ax);
    Tensor out(s, 0.0);
    const auto& X = x.value().data;
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t in = 0; in < sp.inner; ++in) {
            const std::size_t base = o * sp.extent * sp.inner + in;
            double mx = X[base];
            for (std::size_t e = 1; e < sp.extent; ++e) mx = std::max(mx, X[base + e * sp.inner]);
            double total = 0.0;
            for (std::size_t e = 0; e < sp.extent; ++e) {
                const double v = std::exp(X[base + e * sp.inner] - mx);
                out.data[base + e * sp.inner] = v;
                total += v;
            }
            for (std::size_t e = 0; e < sp.extent; ++e) out.data[base + e * sp.inner] /= total;
        }
    const std::size_t ix = x.id();
    return x.graph().push(OpKind::Softmax, {ix}, std::move(out), [=](Graph& gr, std::size_t self) {
        const auto& G = gr.node(self).grad;
        const auto& Y = gr.node(self).value().data;
        auto dX = gr.grad_buffer(ix);
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t in = 0; in < sp.inner; ++in) {
                const std::size_t base = o * sp.extent * sp.inner + in;
                double dot = 0.0;
                for (std::size_t e = 0; e < sp.extent; ++e) {
                    const std::size_t i = base + e * sp.inner;
                    dot += G[i] * Y[i];
                }
                for (std::size_t e = 0; e < sp.extent; ++e) {
                    const std::size_t i = base + e * sp.inner;
                    dX[i] += Y[i] * (G[i] - dot);
                }
            }
    });
}

Var concat(const std::vector<Var>& xs, int axis) {
    if (xs.empty()) throw DimensionError("concat: empty input list");
    if (xs.size() == 1) return xs.front();
    Graph& g = xs.front().graph();
    const Shape& s0 = xs.front().shape();
    const std::size_t ax = normalize_axis(axis, s0.size(), "concat");
    Shape so = s0;
    so[ax] = 0;
    for (const Var& v : xs) {
        if (&v.graph() != &g) throw ContractError("concat: operands belong to different graphs");
        const Shape& s = v.shape();
        bool ok = s.size() == s0.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == ax || s[i] == s0[i];
        if (!ok) {
            throw DimensionError("concat: shape " + shape_to_string(s) + " incompatible with " +
                                 shape_to_string(s0) + " along axis " + std::to_string(ax));
        }
        so[ax] += s[ax];
    }
    const AxisSplit sp = split_at(so, ax);
    Tensor out(so, 0.0);
    std::vector<std::size_t> ids, extents;
    std::size_t offset = 0;
    for (const Var& v : xs) {
        const std::size_t ext = v.shape()[ax];
        const auto& X = v.value().data;
        for (std::size_t o = 0; o < sp.outer; ++o)
            std::copy_n(&X[o * ext * sp.inner], ext * sp.inner,
                        &out.data[(o * sp.extent + offset) * sp.inner]);
        offset += ext;
        ids.push_back(v.id());
        extents.push_back(ext);
    }
    return g.push(OpKind::Concat, ids, std::move(out), [=](Graph& gr, std::size_t self) {
        const auto& G = gr.node(self).grad;
        std::size_t off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            const std::size_t ext = extents[k];
            if (gr.node(ids[k]).requires_grad) {
                auto dX = gr.grad_buffer(ids[k]);
                for (std::size_t o = 0; o < sp.outer; ++o)
                    for (std::size_t j = 0; j < ext * sp.inner; ++j)
                        dX[o * ext * sp.inner + j] += G[(o * sp.extent + off) * sp.inner + j];
            }
            off += ext;
        }
    });
}

Var slice(Var x, int axis, std::size_t start, std::size_t length) {
    const Shape& s = x.shape();
    const std::size_t ax = normalize_axis(axis, s.size(), "slice");
    if (start + length > s[ax] || length == 0) {
        throw DimensionError("slice: range [" + std::to_string(start) + ", " +
                             std::to_string(start + length) + ") outside " + shape_to_string(s));
    }
    const AxisSplit sp = split_at(s, ax);
    Shape so = s;
    so[ax] = length;
    Tensor out(so, 0.0);
    const auto& X = x.value().data;
    for (std::size_t o = 0; o < sp.outer; ++o)
        std::copy_n(&X[(o * sp.extent + start) * sp.inner], length * sp.inner,
                    &out.data[o * length * sp.inner]);
    const std::size_t ix = x.id();
    return x.graph().push(OpKind::Slice, {ix}, std::move(out), [=](Graph& gr, std::size_t self) {
        const auto& G = gr.node(self).grad;
        auto dX = gr.grad_buffer(ix);
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t j = 0; j < length * sp.inner; ++j)
                dX[(o * sp.extent + start) * sp.inner + j] += G[o * length * sp.inner + j];
    });
}

Var reshape(Var x, Shape shape) {
    if (shape_size(shape) != x.value().size()) {
        throw DimensionError("reshape: " + shape_to_string(x.shape()) + " to " +
                             shape_to_string(shape));
    }
    Tensor out(std::move(shape), x.value().data);
    const std::size_t ix = x.id();
    return x.graph().push(OpKind::Reshape, {ix}, std::move(out), [=](Graph& gr, std::size_t self) {
        const auto& G = gr.node(self).grad;
        auto dX = gr.grad_buffer(ix);
        for (std::size_t i = 0; i < G.size(); ++i) dX[i] += G[i];
    });
}

Var transpose(Var x) {
    const Shape& s = x.shape();
    if (s.size() != 2) throw DimensionError("transpose: expected matrix, got " + shape_to_string(s));
    const std::size_t r = s[0], c = s[1];
    Tensor out({c, r}, 0.0);
    const auto& X = x.value().data;
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.data[j * r + i] = X[i * c + j];
    const std::size_t ix = x.id();
    return x.graph().push(OpKind::Transpose, {ix}, std::move(out), [=](Graph& gr, std::size_t self) {
        const auto& G = gr.node(self).grad;
        auto dX = gr.grad_buffer(ix);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) dX[i * c + j] += G[j * r + i];
    });
}

Var sum(Var x) {
    const auto& X = x.value().data;
    const double total = std::accumulate(X.begin(), X.end(), 0.0);
    const std::size_t ix = x.id();
    return x.graph().push(OpKind::Sum, {ix}, Tensor::scalar(total), [=](Graph& gr, std::size_t self) {
        const double gv = gr.node(self).grad[0];
        auto dX = gr.grad_buffer(ix);
        for (double& d : dX) d += gv;
    });
}

// ---- losses ----------------------------------------------------------------

Var gaussian_kl(Var mu_q, Var logvar_q, Var mu_p, Var logvar_p) {
    const Shape& s = mu_q.shape();
    for (Var v : {logvar_q, mu_p, logvar_p}) {
        same_graph(mu_q, v);
        if (v.shape() != s) {
            throw DimensionError("gaussian_kl: shape " + shape_to_string(v.shape()) +
                                 " differs from " + shape_to_string(s));
        }
    }
    const auto& mq = mu_q.value().data;
    const auto& lq = logvar_q.value().data;
    const auto& mp = mu_p.value().data;
    const auto& lp = logvar_p.value().data;
    double total = 0.0;
    for (std::size_t i = 0; i < mq.size(); ++i) {
        const double vp = std::max(std::exp(lp[i]), kEpsilon);
        const double r = lq[i] - std::log(vp);
        const double d = mq[i] - mp[i];
        // expm1(r) - r keeps each term non-negative when q and p nearly coincide.
        total += std::max(0.0, 0.5 * (std::expm1(r) - r + d * d / vp));
    }
    const std::size_t a = mu_q.id(), b = logvar_q.id(), c = mu_p.id(), e = logvar_p.id();
    return mu_q.graph().push(
        OpKind::GaussianKl, {a, b, c, e}, Tensor::scalar(total), [=](Graph& gr, std::size_t self) {
            const double gv = gr.node(self).grad[0];
            const auto& Mq = gr.node(a).value().data;
            const auto& Lq = gr.node(b).value().data;
            const auto& Mp = gr.node(c).value().data;
            const auto& Lp = gr.node(e).value().data;
            std::span<double> dMq, dLq, dMp, dLp;
            if (gr.node(a).requires_grad) dMq = gr.grad_buffer(a);
            if (gr.node(b).requires_grad) dLq = gr.grad_buffer(b);
            if (gr.node(c).requires_grad) dMp = gr.grad_buffer(c);
            if (gr.node(e).requires_grad) dLp = gr.grad_buffer(e);
            for (std::size_t i = 0; i < Mq.size(); ++i) {
                const double vq = std::exp(Lq[i]);
                const double vp = std::max(std::exp(Lp[i]), kEpsilon);
                const double d = Mq[i] - Mp[i];
                if (!dMq.empty()) dMq[i] += gv * d / vp;
                if (!dMp.empty()) dMp[i] -= gv * d / vp;
                if (!dLq.empty()) dLq[i] += gv * 0.5 * (vq / vp - 1.0);
                if (!dLp.empty()) dLp[i] += gv * 0.5 * (1.0 - (vq + d * d) / vp);
            }
        });
}

Var cross_entropy(Var logits, std::size_t label) {
    const auto& X = logits.value().data;
    if (label >= X.size()) {
        throw DimensionError("cross_entropy: label " + std::to_string(label) + " outside " +
                             shape_to_string(logits.shape()));
    }
    const double mx = *std::max_element(X.begin(), X.end());
    double total = 0.0;
    for (double v : X) total += std::exp(v - mx);
    const double lse = mx + std::log(total);
    const std::size_t ix = logits.id();
    return logits.graph().push(
        OpKind::CrossEntropy, {ix}, Tensor::scalar(lse - X[label]), [=](Graph& gr, std::size_t self) {
            const double gv = gr.node(self).grad[0];
            const auto& Xv = gr.node(ix).value().data;
            auto dX = gr.grad_buffer(ix);
            for (std::size_t i = 0; i < Xv.size(); ++i) {
                const double p = std::exp(Xv[i] - lse);
                dX[i] += gv * (p - (i == label ? 1.0 : 0.0));
            }
        });
}

// ---- gradient checking -----------------------------------------------------

double finite_difference_check(const ScalarFn& f, const Tensor& x, double h) {
    std::vector<double> analytic;
    {
        Graph g;
        Var xv = g.leaf(x, true);
        Var loss = f(g, xv);
        g.backward(loss);
        analytic = xv.grad();
    }
    auto eval = [&](const Tensor& at) {
        Graph g;
        Var xv = g.leaf(at, true);
        return f(g, xv).value().data[0];
    };
    double worst = 0.0;
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe.data[i];
        probe.data[i] = orig + h;
        const double up = eval(probe);
        probe.data[i] = orig - h;
        const double down = eval(probe);
        probe.data[i] = orig;
        const double numeric = (up - down) / (2.0 * h);
        worst = std::max(worst, std::abs(numeric - analytic[i]) / std::max(1.0, std::abs(analytic[i])));
    }
    return worst;
}

double finite_difference_check(const std::function<double(bool)>& loss,
                               std::span<const WeightCoordinate> coords, double h) {
    for (const auto& c : coords) c.weight->zero_grad();
    loss(true);
    std::vector<double> analytic;
    analytic.reserve(coords.size());
    for (const auto& c : coords) analytic.push_back(c.weight->grad[c.index]);
    double worst = 0.0;
    for (std::size_t k = 0; k < coords.size(); ++k) {
        double& slot = coords[k].weight->data[coords[k].index];
        const double orig = slot;
        slot = orig + h;
        const double up = loss(false);
        slot = orig - h;
        const double down = loss(false);
        slot = orig;
        const double numeric = (up - down) / (2.0 * h);
        worst = std::max(worst, std::abs(numeric - analytic[k]) / std::max(1.0, std::abs(analytic[k])));
    }
    return worst;
}

}  // namespace dualclvsa::ad
