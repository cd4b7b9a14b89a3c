#include "rwz/autodiff.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "rwz/errors.hpp"

namespace rwz::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

// Strides of `in` viewed against the output shape; broadcast axes get stride 0.
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
    std::vector<std::size_t> strides(out.size(), 0);
    std::size_t stride = 1;
    const std::size_t offset = out.size() - in.size();
    for (std::size_t k = in.size(); k-- > 0;) {
        if (in[k] != 1) strides[k + offset] = stride;
        stride *= in[k];
    }
    return strides;
}

bool broadcast_shape(const Shape& a, const Shape& b, Shape& out) {
    const std::size_t r = std::max(a.size(), b.size());
    out.assign(r, 1);
    for (std::size_t k = 0; k < r; ++k) {
        const std::size_t da = k < r - a.size() ? 1 : a[k - (r - a.size())];
        const std::size_t db = k < r - b.size() ? 1 : b[k - (r - b.size())];
        if (da != db && da != 1 && db != 1) return false;
        out[k] = std::max(da, db);
    }
    return true;
}

// Walks the output index space, handing each flat output index together
// with the matching offsets into two (possibly broadcast) operands.
// Adjacent axes that are contiguous in both operands are merged first, then
// the innermost axis runs as a plain strided loop.
template <typename F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, F&& f) {
    const std::size_t n = shape_size(out);
    if (out.empty()) {
        f(0, 0, 0);
        return;
    }
    if (n == 0) return;
    Shape dims;
    std::vector<std::size_t> ta;
    std::vector<std::size_t> tb;
    for (std::size_t ax = 0; ax < out.size(); ++ax) {
        if (out[ax] == 1) continue;
        if (!dims.empty() && ta.back() == sa[ax] * out[ax] && tb.back() == sb[ax] * out[ax]) {
            dims.back() *= out[ax];
            ta.back() = sa[ax];
            tb.back() = sb[ax];
            continue;
        }
        dims.push_back(out[ax]);
        ta.push_back(sa[ax]);
        tb.push_back(sb[ax]);
    }
    if (dims.empty()) {
        f(0, 0, 0);
        return;
    }
    const std::size_t r = dims.size();
    const std::size_t inner = dims[r - 1];
    const std::size_t ia_step = ta[r - 1];
    const std::size_t ib_step = tb[r - 1];
    std::vector<std::size_t> idx(r, 0);
    std::size_t ia = 0;
    std::size_t ib = 0;
    for (std::size_t i = 0; i < n; i += inner) {
        if (ia_step == 1 && ib_step == 1) {
            for (std::size_t j = 0; j < inner; ++j) f(i + j, ia + j, ib + j);
        } else if (ia_step == 1 && ib_step == 0) {
            for (std::size_t j = 0; j < inner; ++j) f(i + j, ia + j, ib);
        } else if (ia_step == 0 && ib_step == 1) {
            for (std::size_t j = 0; j < inner; ++j) f(i + j, ia, ib + j);
        } else {
            for (std::size_t j = 0; j < inner; ++j) f(i + j, ia + j * ia_step, ib + j * ib_step);
        }
        for (std::size_t ax = r - 1; ax-- > 0;) {
            ++idx[ax];
            ia += ta[ax];
            ib += tb[ax];
            if (idx[ax] < dims[ax]) break;
            ia -= ta[ax] * dims[ax];
            ib -= tb[ax] * dims[ax];
            idx[ax] = 0;
        }
    }
}

// Sums `grad` (output-shaped) down to `in_shape` along broadcast axes.
Tensor reduce_to(const Tensor& grad, const Shape& in_shape) {
    if (grad.shape() == in_shape) return grad;
    Tensor out(in_shape, 0.0);
    const auto s = broadcast_strides(in_shape, grad.shape());
    const std::vector<std::size_t> zero(grad.rank(), 0);
    auto g = grad.data();
    auto o = out.data();
    for_each_broadcast(grad.shape(), s, zero, [&](std::size_t i, std::size_t ia, std::size_t) { o[ia] += g[i]; });
    return out;
}

struct AxisSplit {
    std::size_t outer = 1;
    std::size_t len = 1;
    std::size_t inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
    AxisSplit r;
    for (std::size_t k = 0; k < axis; ++k) r.outer *= s[k];
    r.len = s[axis];
    for (std::size_t k = axis + 1; k < s.size(); ++k) r.inner *= s[k];
    return r;
}

std::size_t batch_of(const Shape& s) {
    std::size_t b = 1;
    for (std::size_t k = 0; k + 2 < s.size(); ++k) b *= s[k];
    return b;
}

void add_into(Tensor& dst, const Tensor& src) {
    auto d = dst.data();
    auto s = src.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace

const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::Constant: return "constant";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Scale: return "scale";
        case Op::AddScalar: return "add_scalar";
        case Op::Matmul: return "matmul";
        case Op::Relu: return "relu";
        case Op::Sigmoid: return "sigmoid";
        case Op::Tanh: return "tanh";
        case Op::Abs: return "abs";
        case Op::Softmax: return "softmax";
        case Op::Concat: return "concat";
        case Op::Slice: return "slice";
        case Op::Reshape: return "reshape";
        case Op::Permute: return "permute";
        case Op::BroadcastTo: return "broadcast_to";
        case Op::SumAll: return "sum";
        case Op::SumAxis: return "sum_axis";
        case Op::IndexSelect: return "index_select";
    }
    return "?";
}

const Shape& Var::shape() const { return graph->shape_of(id); }

Var Graph::push(Node n) {
    n.stage = stage_;
    nodes_.push_back(std::move(n));
    evaluated_ = false;
    return Var{this, static_cast<int>(nodes_.size() - 1)};
}

const Graph::Node& Graph::node(Var v) const {
    if (v.graph != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
        throw StateError("variable does not belong to this graph");
    }
    return nodes_[static_cast<std::size_t>(v.id)];
}

int Graph::norm_axis(int axis, std::size_t rank) const {
    const int r = static_cast<int>(rank);
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
    }
    return a;
}

Var Graph::leaf(const std::string& name, Shape shape) {
    if (leaves_.count(name)) throw StateError("duplicate leaf name '" + name + "'");
    Node n;
    n.op = Op::Leaf;
    n.shape = std::move(shape);
    n.name = name;
    Var v = push(std::move(n));
    leaves_[name] = v.id;
    return v;
}

Var Graph::constant(Tensor value) {
    Node n;
    n.op = Op::Constant;
    n.shape = value.shape();
    Var v = push(std::move(n));
    values_.resize(nodes_.size());
    values_[static_cast<std::size_t>(v.id)] = std::move(value);
    return v;
}

void Graph::output(const std::string& name, Var v) {
    node(v);
    outputs_[name] = v.id;
}

Var Graph::add(Var a, Var b) {
    Node n;
    if (!broadcast_shape(node(a).shape, node(b).shape, n.shape)) {
        throw ShapeError("add: incompatible shapes " + shape_str(node(a).shape) + " and " + shape_str(node(b).shape));
    }
    n.op = Op::Add;
    n.inputs = {a.id, b.id};
    return push(std::move(n));
}

Var Graph::sub(Var a, Var b) {
    Node n;
    if (!broadcast_shape(node(a).shape, node(b).shape, n.shape)) {
        throw ShapeError("sub: incompatible shapes " + shape_str(node(a).shape) + " and " + shape_str(node(b).shape));
    }
    n.op = Op::Sub;
    n.inputs = {a.id, b.id};
    return push(std::move(n));
}

Var Graph::mul(Var a, Var b) {
    Node n;
    if (!broadcast_shape(node(a).shape, node(b).shape, n.shape)) {
        throw ShapeError("mul: incompatible shapes " + shape_str(node(a).shape) + " and " + shape_str(node(b).shape));
    }
    n.op = Op::Mul;
    n.inputs = {a.id, b.id};
    return push(std::move(n));
}

Var Graph::scale(Var a, double s) {
    Node n;
    n.op = Op::Scale;
    n.shape = node(a).shape;
    n.inputs = {a.id};
    n.scalar = s;
    return push(std::move(n));
}

Var Graph::add_scalar(Var a, double s) {
    Node n;
    n.op = Op::AddScalar;
    n.shape = node(a).shape;
    n.inputs = {a.id};
    n.scalar = s;
    return push(std::move(n));
}

Var Graph::matmul(Var a, Var b) {
    const Shape& sa = node(a).shape;
    const Shape& sb = node(b).shape;
    if (sa.size() < 2 || sb.size() < 2) {
        throw ShapeError("matmul: operands must have rank >= 2, got " + shape_str(sa) + " and " + shape_str(sb));
    }
    const std::size_t m = sa[sa.size() - 2];
    const std::size_t k = sa.back();
    const std::size_t k2 = sb[sb.size() - 2];
    const std::size_t nn = sb.back();
    if (k != k2) throw ShapeError("matmul: inner dimensions differ in " + shape_str(sa) + " x " + shape_str(sb));
    Shape batch;
    if (sa.size() > 2 && sb.size() > 2) {
        if (!std::equal(sa.begin(), sa.end() - 2, sb.begin(), sb.end() - 2)) {
            throw ShapeError("matmul: batch dimensions differ in " + shape_str(sa) + " x " + shape_str(sb));
        }
        batch.assign(sa.begin(), sa.end() - 2);
    } else if (sa.size() > 2) {
        batch.assign(sa.begin(), sa.end() - 2);
    } else if (sb.size() > 2) {
        batch.assign(sb.begin(), sb.end() - 2);
    }
    Node n;
    n.op = Op::Matmul;
    n.shape = batch;
    n.shape.push_back(m);
    n.shape.push_back(nn);
    n.inputs = {a.id, b.id};
    return push(std::move(n));
}

Var Graph::relu(Var a) {
    Node n;
    n.op = Op::Relu;
    n.shape = node(a).shape;
    n.inputs = {a.id};
    return push(std::move(n));
}

Var Graph::sigmoid(Var a) {
    Node n;
    n.op = Op::Sigmoid;
    n.shape = node(a).shape;
    n.inputs = {a.id};
    return push(std::move(n));
}

Var Graph::tanh(Var a) {
    Node n;
    n.op = Op::Tanh;
    n.shape = node(a).shape;
    n.inputs = {a.id};
    return push(std::move(n));
}

Var Graph::abs(Var a) {
    Node n;
    n.op = Op::Abs;
    n.shape = node(a).shape;
    n.inputs = {a.id};
    return push(std::move(n));
}

Var Graph::softmax(Var a, int axis) {
    Node n;
    n.op = Op::Softmax;
    n.shape = node(a).shape;
    n.axis = norm_axis(axis, n.shape.size());
    n.inputs = {a.id};
    return push(std::move(n));
}

Var Graph::concat(const std::vector<Var>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    Node n;
    n.op = Op::Concat;
    n.shape = node(parts[0]).shape;
    n.axis = norm_axis(axis, n.shape.size());
    const auto ax = static_cast<std::size_t>(n.axis);
    n.shape[ax] = 0;
    for (Var p : parts) {
        const Shape& s = node(p).shape;
        bool ok = s.size() == n.shape.size();
        for (std::size_t k = 0; ok && k < s.size(); ++k) {
            if (k != ax && s[k] != n.shape[k]) ok = false;
        }
        if (!ok) {
            throw ShapeError("concat: shape " + shape_str(s) + " incompatible with " + shape_str(node(parts[0]).shape) +
                             " along axis " + std::to_string(axis));
        }
        n.shape[ax] += s[ax];
        n.inputs.push_back(p.id);
    }
    return push(std::move(n));
}

Var Graph::slice(Var a, int axis, std::size_t begin, std::size_t end) {
    Node n;
    n.op = Op::Slice;
    n.shape = node(a).shape;
    n.axis = norm_axis(axis, n.shape.size());
    const auto ax = static_cast<std::size_t>(n.axis);
    if (begin >= end || end > n.shape[ax]) {
        throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for " +
                         shape_str(n.shape));
    }
    n.shape[ax] = end - begin;
    n.begin = begin;
    n.end = end;
    n.inputs = {a.id};
    return push(std::move(n));
}

Var Graph::reshape(Var a, Shape shape) {
    if (shape_size(shape) != shape_size(node(a).shape)) {
        throw ShapeError("reshape: " + shape_str(node(a).shape) + " to " + shape_str(shape));
    }
    Node n;
    n.op = Op::Reshape;
    n.shape = std::move(shape);
    n.inputs = {a.id};
    return push(std::move(n));
}

Var Graph::permute(Var a, std::vector<std::size_t> perm) {
    const Shape& s = node(a).shape;
    if (perm.size() != s.size()) throw ShapeError("permute: rank mismatch for " + shape_str(s));
    std::vector<bool> seen(s.size(), false);
    Node n;
    n.op = Op::Permute;
    for (std::size_t p : perm) {
        if (p >= s.size() || seen[p]) throw ShapeError("permute: invalid axis order for " + shape_str(s));
        seen[p] = true;
        n.shape.push_back(s[p]);
    }
    n.indices = std::move(perm);
    n.inputs = {a.id};
    return push(std::move(n));
}

Var Graph::broadcast_to(Var a, Shape shape) {
    Shape out;
    if (!broadcast_shape(node(a).shape, shape, out) || out != shape) {
        throw ShapeError("broadcast_to: cannot broadcast " + shape_str(node(a).shape) + " to " + shape_str(shape));
    }
    Node n;
    n.op = Op::BroadcastTo;
    n.shape = std::move(shape);
    n.inputs = {a.id};
    return push(std::move(n));
}

Var Graph::sum(Var a) {
    Node n;
    n.op = Op::SumAll;
    n.inputs = {a.id};
    return push(std::move(n));
}

Var Graph::sum(Var a, int axis) {
    Node n;
    n.op = Op::SumAxis;
    n.shape = node(a).shape;
    n.axis = norm_axis(axis, n.shape.size());
    n.shape.erase(n.shape.begin() + n.axis);
    n.inputs = {a.id};
    return push(std::move(n));
}

Var Graph::mean(Var a) {
    const auto count = static_cast<double>(shape_size(node(a).shape));
    return scale(sum(a), 1.0 / count);
}

Var Graph::mean(Var a, int axis) {
    const int ax = norm_axis(axis, node(a).shape.size());
    const auto count = static_cast<double>(node(a).shape[static_cast<std::size_t>(ax)]);
    return scale(sum(a, ax), 1.0 / count);
}

Var Graph::index_select(Var a, std::vector<std::size_t> indices) {
    const Shape& s = node(a).shape;
    if (s.empty()) throw ShapeError("index_select: scalar input");
    for (std::size_t i : indices) {
        if (i >= s[0]) throw ShapeError("index_select: index " + std::to_string(i) + " out of range for " + shape_str(s));
    }
    Node n;
    n.op = Op::IndexSelect;
    n.shape = s;
    n.shape[0] = indices.size();
    n.indices = std::move(indices);
    n.inputs = {a.id};
    return push(std::move(n));
}

TensorMap Graph::evaluate(const Bindings& bindings) {
    values_.resize(nodes_.size());
    for (const auto& [name, id] : leaves_) {
        auto it = bindings.find(name);
        if (it == bindings.end()) throw StateError("leaf '" + name + "' is not bound");
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        if (it->second.shape() != n.shape) {
            throw ShapeError("leaf '" + name + "' declared " + shape_str(n.shape) + " but bound to " +
                             shape_str(it->second.shape()));
        }
        if (!it->second.all_finite()) throw NumericError("leaf '" + name + "' holds non-finite values");
        values_[static_cast<std::size_t>(id)] = it->second;
    }
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
        const Node& n = nodes_[id];
        if (n.op == Op::Leaf || n.op == Op::Constant) continue;
        forward_node(id);
        if (!values_[id].all_finite()) {
            throw NumericError(std::string("non-finite value produced by ") + op_name(n.op) + " node #" +
                               std::to_string(id) + (n.stage.empty() ? "" : " in stage '" + n.stage + "'"));
        }
    }
    evaluated_ = true;
    TensorMap out;
    for (const auto& [name, id] : outputs_) out[name] = values_[static_cast<std::size_t>(id)];
    return out;
}

const Tensor& Graph::value(Var v) const {
    node(v);
    if (!evaluated_) throw StateError("graph has not been evaluated");
    return values_[static_cast<std::size_t>(v.id)];
}

void Graph::forward_node(std::size_t id) {
    const Node& n = nodes_[id];
    auto in = [&](std::size_t k) -> const Tensor& { return values_[static_cast<std::size_t>(n.inputs[k])]; };
    Tensor out(n.shape);
    auto o = out.data();

    switch (n.op) {
        case Op::Leaf:
        case Op::Constant:
            return;
        case Op::Add:
        case Op::Sub:
        case Op::Mul: {
            const Tensor& a = in(0);
            const Tensor& b = in(1);
            auto av = a.data();
            auto bv = b.data();
            if (a.shape() == b.shape()) {
                if (n.op == Op::Add) {
                    for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] + bv[i];
                } else if (n.op == Op::Sub) {
                    for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] - bv[i];
                } else {
                    for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * bv[i];
                }
                break;
            }
            const auto sa = broadcast_strides(a.shape(), n.shape);
            const auto sb = broadcast_strides(b.shape(), n.shape);
            if (n.op == Op::Add) {
                for_each_broadcast(n.shape, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = av[ia] + bv[ib]; });
            } else if (n.op == Op::Sub) {
                for_each_broadcast(n.shape, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = av[ia] - bv[ib]; });
            } else {
                for_each_broadcast(n.shape, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = av[ia] * bv[ib]; });
            }
            break;
        }
        case Op::Scale: {
            auto a = in(0).data();
            for (std::size_t i = 0; i < o.size(); ++i) o[i] = n.scalar * a[i];
            break;
        }
        case Op::AddScalar: {
            auto a = in(0).data();
            for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] + n.scalar;
            break;
        }
        case Op::Matmul: {
            const Tensor& a = in(0);
            const Tensor& b = in(1);
            const std::size_t m = a.shape()[a.rank() - 2];
            const std::size_t k = a.shape().back();
            const std::size_t nn = b.shape().back();
            if (b.rank() == 2) {
                const std::size_t rows = a.size() / k;
                MutMap(o.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(nn)).noalias() =
                    ConstMap(a.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(k)) *
                    ConstMap(b.data().data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(nn));
            } else {
                const std::size_t batch = batch_of(b.shape());
                const bool shared_a = a.rank() == 2;
                for (std::size_t p = 0; p < batch; ++p) {
                    const double* ap = a.data().data() + (shared_a ? 0 : p * m * k);
                    MutMap(o.data() + p * m * nn, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(nn)).noalias() =
                        ConstMap(ap, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k)) *
                        ConstMap(b.data().data() + p * k * nn, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(nn));
                }
            }
            break;
        }
        case Op::Relu: {
            auto a = in(0).data();
            for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] > 0.0 ? a[i] : 0.0;
            break;
        }
        case Op::Sigmoid: {
            auto a = in(0).data();
            for (std::size_t i = 0; i < o.size(); ++i) {
                const double e = std::exp(-std::abs(a[i]));
                o[i] = a[i] >= 0.0 ? 1.0 / (1.0 + e) : e / (1.0 + e);
            }
            break;
        }
        case Op::Tanh: {
            auto a = in(0).data();
            for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::tanh(a[i]);
            break;
        }
        case Op::Abs: {
            auto a = in(0).data();
            for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::fabs(a[i]);
            break;
        }
        case Op::Softmax: {
            auto a = in(0).data();
            const AxisSplit s = split_at(n.shape, static_cast<std::size_t>(n.axis));
            for (std::size_t p = 0; p < s.outer; ++p) {
                for (std::size_t q = 0; q < s.inner; ++q) {
                    const std::size_t base = p * s.len * s.inner + q;
                    double mx = -std::numeric_limits<double>::infinity();
                    for (std::size_t j = 0; j < s.len; ++j) mx = std::max(mx, a[base + j * s.inner]);
                    double z = 0.0;
                    for (std::size_t j = 0; j < s.len; ++j) {
                        const double e = std::exp(a[base + j * s.inner] - mx);
                        o[base + j * s.inner] = e;
                        z += e;
                    }
                    for (std::size_t j = 0; j < s.len; ++j) o[base + j * s.inner] /= z;
                }
            }
            break;
        }
        case Op::Concat: {
            const auto ax = static_cast<std::size_t>(n.axis);
            const AxisSplit s = split_at(n.shape, ax);
            std::size_t offset = 0;
            for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                const Tensor& part = in(k);
                const std::size_t chunk = part.shape()[ax] * s.inner;
                auto pv = part.data();
                for (std::size_t p = 0; p < s.outer; ++p) {
                    std::copy_n(pv.data() + p * chunk, chunk, o.data() + p * s.len * s.inner + offset);
                }
                offset += chunk;
            }
            break;
        }
        case Op::Slice: {
            const Tensor& a = in(0);
            const AxisSplit s = split_at(a.shape(), static_cast<std::size_t>(n.axis));
            const std::size_t chunk = (n.end - n.begin) * s.inner;
            auto av = a.data();
            for (std::size_t p = 0; p < s.outer; ++p) {
                std::copy_n(av.data() + p * s.len * s.inner + n.begin * s.inner, chunk, o.data() + p * chunk);
            }
            break;
        }
        case Op::Reshape: {
            auto a = in(0).data();
            std::copy(a.begin(), a.end(), o.begin());
            break;
        }
        case Op::Permute: {
            const Tensor& a = in(0);
            const std::size_t r = a.rank();
            std::vector<std::size_t> in_strides(r, 1);
            for (std::size_t k = r; k-- > 1;) in_strides[k - 1] = in_strides[k] * a.shape()[k];
            std::vector<std::size_t> src(r);
            for (std::size_t k = 0; k < r; ++k) src[k] = in_strides[n.indices[k]];
            const std::vector<std::size_t> zero(r, 0);
            auto av = a.data();
            for_each_broadcast(n.shape, src, zero, [&](std::size_t i, std::size_t ia, std::size_t) { o[i] = av[ia]; });
            break;
        }
        case Op::BroadcastTo: {
            const Tensor& a = in(0);
            const auto sa = broadcast_strides(a.shape(), n.shape);
            const std::vector<std::size_t> zero(n.shape.size(), 0);
            auto av = a.data();
            for_each_broadcast(n.shape, sa, zero, [&](std::size_t i, std::size_t ia, std::size_t) { o[i] = av[ia]; });
            break;
        }
        case Op::SumAll: {
            double acc = 0.0;
            for (double v : in(0).data()) acc += v;
            o[0] = acc;
            break;
        }
        case Op::SumAxis: {
            const Tensor& a = in(0);
            const AxisSplit s = split_at(a.shape(), static_cast<std::size_t>(n.axis));
            auto av = a.data();
            for (std::size_t p = 0; p < s.outer; ++p) {
                for (std::size_t j = 0; j < s.len; ++j) {
                    const double* row = av.data() + (p * s.len + j) * s.inner;
                    double* dst = o.data() + p * s.inner;
                    for (std::size_t q = 0; q < s.inner; ++q) dst[q] += row[q];
                }
            }
            break;
        }
        case Op::IndexSelect: {
            const Tensor& a = in(0);
            const std::size_t row = a.size() / a.shape()[0];
            auto av = a.data();
            for (std::size_t r = 0; r < n.indices.size(); ++r) {
                std::copy_n(av.data() + n.indices[r] * row, row, o.data() + r * row);
            }
            break;
        }
    }
    values_[id] = std::move(out);
}

Tensor& Graph::grad_slot(std::vector<Tensor>& grads, int id) {
    Tensor& g = grads[static_cast<std::size_t>(id)];
    const Shape& s = nodes_[static_cast<std::size_t>(id)].shape;
    if (g.shape() != s) g = Tensor(s, 0.0);
    return g;
}

TensorMap Graph::backward(Var output, const Tensor& seed) {
    if (!evaluated_) throw StateError("backward called before evaluate");
    const Node& out_node = node(output);
    if (seed.shape() != out_node.shape) {
        throw ShapeError("seed gradient " + shape_str(seed.shape()) + " does not match output " + shape_str(out_node.shape));
    }
    std::vector<Tensor> grads(nodes_.size(), Tensor(Shape{0}));
    std::vector<bool> live(nodes_.size(), false);
    grads[static_cast<std::size_t>(output.id)] = seed;
    live[static_cast<std::size_t>(output.id)] = true;
    for (std::size_t id = static_cast<std::size_t>(output.id) + 1; id-- > 0;) {
        if (!live[id]) continue;
        const Node& n = nodes_[id];
        if (n.op == Op::Leaf || n.op == Op::Constant) continue;
        for (int src : n.inputs) {
            live[static_cast<std::size_t>(src)] = true;
            grad_slot(grads, src);
        }
        backward_node(id, grads);
        grads[id] = Tensor(Shape{0});
    }
    TensorMap result;
    for (const auto& [name, id] : leaves_) {
        const auto uid = static_cast<std::size_t>(id);
        result[name] = live[uid] ? grads[uid] : Tensor(nodes_[uid].shape, 0.0);
    }
    return result;
}

TensorMap Graph::backward(Var scalar_output) {
    if (shape_size(node(scalar_output).shape) != 1) {
        throw ShapeError("backward without seed needs a single-element output, got " + shape_str(node(scalar_output).shape));
    }
    return backward(scalar_output, Tensor(node(scalar_output).shape, 1.0));
}

void Graph::backward_node(std::size_t id, std::vector<Tensor>& grads) {
    const Node& n = nodes_[id];
    const Tensor& gy = grads[id];
    const Tensor& y = values_[id];
    auto g = gy.data();
    auto in = [&](std::size_t k) -> const Tensor& { return values_[static_cast<std::size_t>(n.inputs[k])]; };
    auto gin = [&](std::size_t k) -> Tensor& { return grads[static_cast<std::size_t>(n.inputs[k])]; };

    switch (n.op) {
        case Op::Leaf:
        case Op::Constant:
            return;
        case Op::Add:
        case Op::Sub:
        case Op::Mul: {
            const Tensor& a = in(0);
            const Tensor& b = in(1);
            if (n.op == Op::Mul) {
                // d(a*b) = g*b, g*a, each reduced over its broadcast axes.
                if (a.shape() == b.shape()) {
                    auto ga = gin(0).data();
                    auto av = a.data();
                    auto bv = b.data();
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
                    auto gb = gin(1).data();
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                } else {
                    const auto sa = broadcast_strides(a.shape(), n.shape);
                    const auto sb = broadcast_strides(b.shape(), n.shape);
                    auto ga = gin(0).data();
                    auto gb = gin(1).data();
                    auto av = a.data();
                    auto bv = b.data();
                    for_each_broadcast(n.shape, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
                        ga[ia] += g[i] * bv[ib];
                        gb[ib] += g[i] * av[ia];
                    });
                }
            } else {
                add_into(gin(0), reduce_to(gy, a.shape()));
                Tensor gb = reduce_to(gy, b.shape());
                if (n.op == Op::Sub) {
                    for (double& v : gb.data()) v = -v;
                }
                add_into(gin(1), gb);
            }
            break;
        }
        case Op::Scale: {
            auto ga = gin(0).data();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += n.scalar * g[i];
            break;
        }
        case Op::AddScalar:
        case Op::Reshape: {
            auto ga = gin(0).data();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            break;
        }
        case Op::Matmul: {
            const Tensor& a = in(0);
            const Tensor& b = in(1);
            const auto m = static_cast<Eigen::Index>(a.shape()[a.rank() - 2]);
            const auto k = static_cast<Eigen::Index>(a.shape().back());
            const auto nn = static_cast<Eigen::Index>(b.shape().back());
            Tensor& ga = gin(0);
            Tensor& gb = gin(1);
            if (b.rank() == 2) {
                const auto rows = static_cast<Eigen::Index>(a.size()) / k;
                ConstMap G(g.data(), rows, nn);
                ConstMap A(a.data().data(), rows, k);
                ConstMap B(b.data().data(), k, nn);
                MutMap(ga.data().data(), rows, k).noalias() += G * B.transpose();
                MutMap(gb.data().data(), k, nn).noalias() += A.transpose() * G;
            } else {
                const std::size_t batch = batch_of(b.shape());
                const bool shared_a = a.rank() == 2;
                for (std::size_t p = 0; p < batch; ++p) {
                    const auto off_a = shared_a ? 0 : static_cast<std::size_t>(p * m * k);
                    ConstMap G(g.data() + p * static_cast<std::size_t>(m * nn), m, nn);
                    ConstMap A(a.data().data() + off_a, m, k);
                    ConstMap B(b.data().data() + p * static_cast<std::size_t>(k * nn), k, nn);
                    MutMap(ga.data().data() + off_a, m, k).noalias() += G * B.transpose();
                    MutMap(gb.data().data() + p * static_cast<std::size_t>(k * nn), k, nn).noalias() += A.transpose() * G;
                }
            }
            break;
        }
        case Op::Relu: {
            auto a = in(0).data();
            auto ga = gin(0).data();
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (a[i] > 0.0) ga[i] += g[i];
            }
            break;
        }
        case Op::Sigmoid: {
            auto yv = y.data();
            auto ga = gin(0).data();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * yv[i] * (1.0 - yv[i]);
            break;
        }
        case Op::Tanh: {
            auto yv = y.data();
            auto ga = gin(0).data();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - yv[i] * yv[i]);
            break;
        }
        case Op::Abs: {
            auto a = in(0).data();
            auto ga = gin(0).data();
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (a[i] > 0.0) {
                    ga[i] += g[i];
                } else if (a[i] < 0.0) {
                    ga[i] -= g[i];
                }
            }
            break;
        }
        case Op::Softmax: {
            auto yv = y.data();
            auto ga = gin(0).data();
            const AxisSplit s = split_at(n.shape, static_cast<std::size_t>(n.axis));
            for (std::size_t p = 0; p < s.outer; ++p) {
                for (std::size_t q = 0; q < s.inner; ++q) {
                    const std::size_t base = p * s.len * s.inner + q;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < s.len; ++j) dot += g[base + j * s.inner] * yv[base + j * s.inner];
                    for (std::size_t j = 0; j < s.len; ++j) {
                        const std::size_t i = base + j * s.inner;
                        ga[i] += yv[i] * (g[i] - dot);
                    }
                }
            }
            break;
        }
        case Op::Concat: {
            const auto ax = static_cast<std::size_t>(n.axis);
            const AxisSplit s = split_at(n.shape, ax);
            std::size_t offset = 0;
            for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                auto gp = gin(k).data();
                const std::size_t chunk = in(k).shape()[ax] * s.inner;
                for (std::size_t p = 0; p < s.outer; ++p) {
                    const double* src = g.data() + p * s.len * s.inner + offset;
                    double* dst = gp.data() + p * chunk;
                    for (std::size_t q = 0; q < chunk; ++q) dst[q] += src[q];
                }
                offset += chunk;
            }
            break;
        }
        case Op::Slice: {
            const Tensor& a = in(0);
            const AxisSplit s = split_at(a.shape(), static_cast<std::size_t>(n.axis));
            const std::size_t chunk = (n.end - n.begin) * s.inner;
            auto ga = gin(0).data();
            for (std::size_t p = 0; p < s.outer; ++p) {
                double* dst = ga.data() + p * s.len * s.inner + n.begin * s.inner;
                const double* src = g.data() + p * chunk;
                for (std::size_t q = 0; q < chunk; ++q) dst[q] += src[q];
            }
            break;
        }
        case Op::Permute: {
            const Tensor& a = in(0);
            const std::size_t r = a.rank();
            std::vector<std::size_t> in_strides(r, 1);
            for (std::size_t k = r; k-- > 1;) in_strides[k - 1] = in_strides[k] * a.shape()[k];
            std::vector<std::size_t> src(r);
            for (std::size_t k = 0; k < r; ++k) src[k] = in_strides[n.indices[k]];
            const std::vector<std::size_t> zero(r, 0);
            auto ga = gin(0).data();
            for_each_broadcast(n.shape, src, zero, [&](std::size_t i, std::size_t ia, std::size_t) { ga[ia] += g[i]; });
            break;
        }
        case Op::BroadcastTo:
            add_into(gin(0), reduce_to(gy, in(0).shape()));
            break;
        case Op::SumAll: {
            auto ga = gin(0).data();
            for (double& v : ga) v += g[0];
            break;
        }
        case Op::SumAxis: {
            const Tensor& a = in(0);
            const AxisSplit s = split_at(a.shape(), static_cast<std::size_t>(n.axis));
            auto ga = gin(0).data();
            for (std::size_t p = 0; p < s.outer; ++p) {
                for (std::size_t j = 0; j < s.len; ++j) {
                    double* dst = ga.data() + (p * s.len + j) * s.inner;
                    const double* src = g.data() + p * s.inner;
                    for (std::size_t q = 0; q < s.inner; ++q) dst[q] += src[q];
                }
            }
            break;
        }
        case Op::IndexSelect: {
            const Tensor& a = in(0);
            const std::size_t row = a.size() / a.shape()[0];
            auto ga = gin(0).data();
            for (std::size_t r = 0; r < n.indices.size(); ++r) {
                double* dst = ga.data() + n.indices[r] * row;
                const double* src = g.data() + r * row;
                for (std::size_t q = 0; q < row; ++q) dst[q] += src[q];
            }
            break;
        }
    }
}

std::vector<char> Graph::kink_signature() const {
    if (!evaluated_) throw StateError("graph has not been evaluated");
    std::vector<char> sig;
    for (const Node& n : nodes_) {
        if (n.op != Op::Relu && n.op != Op::Abs) continue;
        for (double v : values_[static_cast<std::size_t>(n.inputs[0])].data()) {
            sig.push_back(static_cast<char>(v > 0.0 ? 1 : (v < 0.0 ? -1 : 0)));
        }
    }
    return sig;
}

Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
    if (!(h > 0.0)) throw ParameterError("finite difference step must be positive");
    Tensor grad(x.shape(), 0.0);
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + h;
        const double fp = f(probe);
        probe[i] = orig - h;
        const double fm = f(probe);
        probe[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw NumericError("non-finite function value at coordinate " + std::to_string(i));
        }
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

}  // namespace rwz::ad
