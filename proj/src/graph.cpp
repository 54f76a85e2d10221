#include "mrpf/graph.hpp"

#include <algorithm>
#include <cmath>

namespace mrpf {

namespace {
constexpr double kProbClamp = 1e-12;

const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::Leaf: return "leaf";
        case OpKind::MatMul: return "matmul";
        case OpKind::Conv2d: return "conv2d";
        case OpKind::Relu: return "relu";
        case OpKind::Softmax: return "softmax";
        case OpKind::Log: return "log";
        case OpKind::Add: return "add";
        case OpKind::Scale: return "scale";
        case OpKind::ReduceSum: return "reduce_sum";
        case OpKind::Reshape: return "reshape";
        case OpKind::KlDiv: return "kl_div";
        case OpKind::CrossEntropy: return "cross_entropy";
    }
    return "?";
}

}  // namespace

NodeId ExprGraph::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId ExprGraph::check_id(NodeId id, const char* who) const {
    if (id < 0 || static_cast<size_t>(id) >= nodes_.size()) {
        throw ValueError(std::string(who) + ": node id " + std::to_string(id) + " out of range");
    }
    return id;
}

const Node& ExprGraph::node(NodeId id) const {
    return nodes_[static_cast<size_t>(check_id(id, "node"))];
}

NodeId ExprGraph::leaf(const std::string& name, std::vector<int64_t> shape, bool frozen) {
    if (name.empty()) throw ValueError("leaf name must be nonempty");
    if (leaf_ids_.count(name)) throw ValueError("duplicate leaf name '" + name + "'");
    shape_numel(shape);
    Node n;
    n.kind = OpKind::Leaf;
    n.name = name;
    n.frozen = frozen;
    n.shape = std::move(shape);
    NodeId id = push(std::move(n));
    leaf_ids_[name] = id;
    return id;
}

NodeId ExprGraph::matmul(NodeId a, NodeId b, bool transpose_rhs) {
    const auto& sa = node(check_id(a, "matmul")).shape;
    const auto& sb = node(check_id(b, "matmul")).shape;
    if (sa.size() != 2 || sb.size() != 2) {
        throw ShapeError("matmul requires rank-2 operands, got " + shape_str(sa) + " and " + shape_str(sb));
    }
    int64_t inner_b = transpose_rhs ? sb[1] : sb[0];
    int64_t cols = transpose_rhs ? sb[0] : sb[1];
    if (sa[1] != inner_b) {
        throw ShapeError("matmul inner extents differ: " + shape_str(sa) + " vs " + shape_str(sb));
    }
    Node n;
    n.kind = OpKind::MatMul;
    n.args = {a, b};
    n.transpose_rhs = transpose_rhs;
    n.shape = {sa[0], cols};
    return push(std::move(n));
}

NodeId ExprGraph::conv2d(NodeId x, NodeId w, ConvPadding padding) {
    const auto& sx = node(check_id(x, "conv2d")).shape;
    const auto& sw = node(check_id(w, "conv2d")).shape;
    if (sx.size() != 4 || sw.size() != 4) {
        throw ShapeError("conv2d requires rank-4 input and kernel, got " + shape_str(sx) + " and " + shape_str(sw));
    }
    if (sw[1] != sx[1]) {
        throw ShapeError("conv2d channel mismatch: input " + shape_str(sx) + " kernel " + shape_str(sw));
    }
    if (sw[2] != sw[3]) throw ShapeError("conv2d kernel must be square, got " + shape_str(sw));
    int64_t k = sw[2];
    int64_t h_out, w_out;
    if (padding == ConvPadding::Same) {
        if (k % 2 == 0) throw ShapeError("same-padding conv2d requires an odd kernel");
        h_out = sx[2];
        w_out = sx[3];
    } else {
        if (sx[2] < k || sx[3] < k) {
            throw ShapeError("conv2d input " + shape_str(sx) + " smaller than kernel " + shape_str(sw));
        }
        h_out = sx[2] - k + 1;
        w_out = sx[3] - k + 1;
    }
    Node n;
    n.kind = OpKind::Conv2d;
    n.args = {x, w};
    n.padding = padding;
    n.shape = {sx[0], sw[0], h_out, w_out};
    return push(std::move(n));
}

NodeId ExprGraph::relu(NodeId x) {
    Node n;
    n.kind = OpKind::Relu;
    n.args = {check_id(x, "relu")};
    n.shape = node(x).shape;
    return push(std::move(n));
}

NodeId ExprGraph::softmax(NodeId x) {
    const auto& s = node(check_id(x, "softmax")).shape;
    if (s.empty()) throw ShapeError("softmax requires rank >= 1");
    Node n;
    n.kind = OpKind::Softmax;
    n.args = {x};
    n.shape = s;
    return push(std::move(n));
}

NodeId ExprGraph::log(NodeId x) {
    Node n;
    n.kind = OpKind::Log;
    n.args = {check_id(x, "log")};
    n.shape = node(x).shape;
    return push(std::move(n));
}

NodeId ExprGraph::add(NodeId a, NodeId b) {
    const auto& sa = node(check_id(a, "add")).shape;
    const auto& sb = node(check_id(b, "add")).shape;
    bool ok = sa == sb;
    // Bias broadcasts: [B,N]+[N] over rows, [B,C,H,W]+[C] over channel maps.
    if (!ok && sa.size() == 2 && sb.size() == 1 && sb[0] == sa[1]) ok = true;
    if (!ok && sa.size() == 4 && sb.size() == 1 && sb[0] == sa[1]) ok = true;
    if (!ok) throw ShapeError("add cannot combine " + shape_str(sa) + " and " + shape_str(sb));
    Node n;
    n.kind = OpKind::Add;
    n.args = {a, b};
    n.shape = sa;
    return push(std::move(n));
}

NodeId ExprGraph::scale(NodeId x, double factor) {
    if (!std::isfinite(factor)) throw ValueError("scale factor must be finite");
    Node n;
    n.kind = OpKind::Scale;
    n.args = {check_id(x, "scale")};
    n.factor = factor;
    n.shape = node(x).shape;
    return push(std::move(n));
}

NodeId ExprGraph::reduce_sum(NodeId x) {
    Node n;
    n.kind = OpKind::ReduceSum;
    n.args = {check_id(x, "reduce_sum")};
    n.shape = {};
    return push(std::move(n));
}

NodeId ExprGraph::reshape(NodeId x, std::vector<int64_t> shape) {
    const auto& sx = node(check_id(x, "reshape")).shape;
    if (shape_numel(shape) != shape_numel(sx)) {
        throw ShapeError("reshape cannot turn " + shape_str(sx) + " into " + shape_str(shape));
    }
    Node n;
    n.kind = OpKind::Reshape;
    n.args = {x};
    n.shape = std::move(shape);
    return push(std::move(n));
}

NodeId ExprGraph::kl_div(NodeId p, NodeId q) {
    const auto& sp = node(check_id(p, "kl_div")).shape;
    const auto& sq = node(check_id(q, "kl_div")).shape;
    if (sp.size() != 2 || sp != sq) {
        throw ShapeError("kl_div requires matching rank-2 distributions, got " + shape_str(sp) + " and " + shape_str(sq));
    }
    Node n;
    n.kind = OpKind::KlDiv;
    n.args = {p, q};
    n.shape = {};
    return push(std::move(n));
}

NodeId ExprGraph::cross_entropy(NodeId probs, std::vector<int64_t> labels) {
    const auto& sp = node(check_id(probs, "cross_entropy")).shape;
    if (sp.size() != 2) throw ShapeError("cross_entropy expects [batch, classes], got " + shape_str(sp));
    if (static_cast<int64_t>(labels.size()) != sp[0]) {
        throw ShapeError("cross_entropy label count " + std::to_string(labels.size()) +
                         " does not match batch " + std::to_string(sp[0]));
    }
    for (int64_t y : labels) {
        if (y < 0 || y >= sp[1]) throw ValueError("cross_entropy label " + std::to_string(y) + " out of range");
    }
    Node n;
    n.kind = OpKind::CrossEntropy;
    n.args = {probs};
    n.labels = std::move(labels);
    n.shape = {};
    return push(std::move(n));
}

void ExprGraph::set_root(NodeId id) {
    root_ = check_id(id, "set_root");
}

NodeId ExprGraph::root() const {
    if (root_ < 0) throw ValueError("graph has no root");
    return root_;
}

NodeId ExprGraph::find_leaf(const std::string& name) const {
    auto it = leaf_ids_.find(name);
    return it == leaf_ids_.end() ? -1 : it->second;
}

void ExprGraph::forward(const Bindings& bindings, std::vector<Tensor>& values) const {
    values.assign(nodes_.size(), Tensor());
    for (size_t i = 0; i < nodes_.size(); ++i) {
        const Node& n = nodes_[i];
        Tensor out;
        switch (n.kind) {
            case OpKind::Leaf: {
                auto it = bindings.find(n.name);
                if (it == bindings.end()) throw ValueError("missing binding for leaf '" + n.name + "'");
                if (it->second.shape() != n.shape) {
                    throw ShapeError("leaf '" + n.name + "' bound to " + shape_str(it->second.shape()) +
                                     ", declared " + shape_str(n.shape));
                }
                out = it->second.to_precision(precision_);
                break;
            }
            case OpKind::MatMul: {
                const Tensor& a = values[static_cast<size_t>(n.args[0])];
                const Tensor& b = values[static_cast<size_t>(n.args[1])];
                int64_t m = a.extent(0), k = a.extent(1), cols = n.shape[1];
                out = Tensor::zeros(n.shape, precision_);
                for (int64_t i2 = 0; i2 < m; ++i2) {
                    for (int64_t j = 0; j < cols; ++j) {
                        double s = 0.0;
                        if (n.transpose_rhs) {
                            for (int64_t l = 0; l < k; ++l) s += a[i2 * k + l] * b[j * k + l];
                        } else {
                            for (int64_t l = 0; l < k; ++l) s += a[i2 * k + l] * b[l * cols + j];
                        }
                        out.data()[static_cast<size_t>(i2 * cols + j)] = s;
                    }
                }
                break;
            }
            case OpKind::Conv2d: {
                const Tensor& x = values[static_cast<size_t>(n.args[0])];
                const Tensor& w = values[static_cast<size_t>(n.args[1])];
                int64_t bsz = x.extent(0), cin = x.extent(1), h = x.extent(2), wd = x.extent(3);
                int64_t cout = w.extent(0), k = w.extent(2);
                int64_t pad = n.padding == ConvPadding::Same ? (k - 1) / 2 : 0;
                int64_t ho = n.shape[2], wo = n.shape[3];
                out = Tensor::zeros(n.shape, precision_);
                for (int64_t b2 = 0; b2 < bsz; ++b2)
                    for (int64_t f = 0; f < cout; ++f)
                        for (int64_t oi = 0; oi < ho; ++oi)
                            for (int64_t oj = 0; oj < wo; ++oj) {
                                double s = 0.0;
                                for (int64_t c = 0; c < cin; ++c)
                                    for (int64_t u = 0; u < k; ++u) {
                                        int64_t ii = oi + u - pad;
                                        if (ii < 0 || ii >= h) continue;
                                        for (int64_t v = 0; v < k; ++v) {
                                            int64_t jj = oj + v - pad;
                                            if (jj < 0 || jj >= wd) continue;
                                            s += x[((b2 * cin + c) * h + ii) * wd + jj] *
                                                 w[((f * cin + c) * k + u) * k + v];
                                        }
                                    }
                                out.data()[static_cast<size_t>(((b2 * cout + f) * ho + oi) * wo + oj)] = s;
                            }
                break;
            }
            case OpKind::Relu: {
                out = values[static_cast<size_t>(n.args[0])];
                for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
                break;
            }
            case OpKind::Softmax: {
                const Tensor& x = values[static_cast<size_t>(n.args[0])];
                int64_t c = n.shape.back();
                int64_t rows = x.size() / c;
                out = Tensor::zeros(n.shape, precision_);
                for (int64_t r = 0; r < rows; ++r) {
                    double mx = x[r * c];
                    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, x[r * c + j]);
                    double z = 0.0;
                    for (int64_t j = 0; j < c; ++j) {
                        double e = std::exp(x[r * c + j] - mx);
                        out.data()[static_cast<size_t>(r * c + j)] = e;
                        z += e;
                    }
                    for (int64_t j = 0; j < c; ++j) out.data()[static_cast<size_t>(r * c + j)] /= z;
                }
                break;
            }
            case OpKind::Log: {
                out = values[static_cast<size_t>(n.args[0])];
                for (double& v : out.data()) v = std::log(v);
                break;
            }
            case OpKind::Add: {
                const Tensor& a = values[static_cast<size_t>(n.args[0])];
                const Tensor& b = values[static_cast<size_t>(n.args[1])];
                out = a;
                if (b.shape() == a.shape()) {
                    for (int64_t i2 = 0; i2 < out.size(); ++i2) out.data()[static_cast<size_t>(i2)] += b[i2];
                } else if (a.rank() == 2) {
                    int64_t cols = a.extent(1);
                    for (int64_t i2 = 0; i2 < out.size(); ++i2) out.data()[static_cast<size_t>(i2)] += b[i2 % cols];
                } else {
                    int64_t c = a.extent(1), hw = a.extent(2) * a.extent(3);
                    for (int64_t i2 = 0; i2 < out.size(); ++i2)
                        out.data()[static_cast<size_t>(i2)] += b[(i2 / hw) % c];
                }
                break;
            }
            case OpKind::Scale: {
                out = values[static_cast<size_t>(n.args[0])];
                for (double& v : out.data()) v *= n.factor;
                break;
            }
            case OpKind::ReduceSum: {
                const Tensor& x = values[static_cast<size_t>(n.args[0])];
                double s = 0.0;
                for (int64_t i2 = 0; i2 < x.size(); ++i2) s += x[i2];
                out = Tensor::from_data({}, {s}, precision_);
                break;
            }
            case OpKind::Reshape: {
                const Tensor& x = values[static_cast<size_t>(n.args[0])];
                out = Tensor::from_data(n.shape, std::vector<double>(x.data()), precision_);
                break;
            }
            case OpKind::KlDiv: {
                const Tensor& p = values[static_cast<size_t>(n.args[0])];
                const Tensor& q = values[static_cast<size_t>(n.args[1])];
                int64_t bsz = p.extent(0);
                double s = 0.0;
                for (int64_t i2 = 0; i2 < p.size(); ++i2) {
                    double pc = std::max(p[i2], kProbClamp);
                    double qc = std::max(q[i2], kProbClamp);
                    s += pc * (std::log(pc) - std::log(qc));
                }
                out = Tensor::from_data({}, {s / static_cast<double>(bsz)}, precision_);
                break;
            }
            case OpKind::CrossEntropy: {
                const Tensor& p = values[static_cast<size_t>(n.args[0])];
                int64_t bsz = p.extent(0), c = p.extent(1);
                double s = 0.0;
                for (int64_t b2 = 0; b2 < bsz; ++b2) {
                    double pc = std::max(p[b2 * c + n.labels[static_cast<size_t>(b2)]], kProbClamp);
                    s -= std::log(pc);
                }
                out = Tensor::from_data({}, {s / static_cast<double>(bsz)}, precision_);
                break;
            }
        }
        out.requantize();
        try {
            out.check_finite(op_name(n.kind));
        } catch (const ValueError&) {
            throw ValueError(std::string("non-finite value in ") + op_name(n.kind) + " node #" + std::to_string(i));
        }
        values[i] = std::move(out);
    }
}

Tensor ExprGraph::evaluate(const Bindings& bindings) const {
    NodeId r = root();
    std::vector<Tensor> values;
    forward(bindings, values);
    return values[static_cast<size_t>(r)];
}

std::vector<Tensor> ExprGraph::evaluate_all(const Bindings& bindings) const {
    std::vector<Tensor> values;
    forward(bindings, values);
    return values;
}

const Node& ExprGraph::leaf_for_name(const std::string& name, const char* who) const {
    auto it = leaf_ids_.find(name);
    if (it == leaf_ids_.end()) throw ValueError(std::string(who) + ": no leaf named '" + name + "'");
    return nodes_[static_cast<size_t>(it->second)];
}

std::map<std::string, Tensor> ExprGraph::gradient(const Bindings& bindings,
                                                  const std::vector<std::string>& wrt) const {
    NodeId r = root();
    if (shape_numel(nodes_[static_cast<size_t>(r)].shape) != 1) {
        throw ValueError("gradient requires a scalar root, got " + shape_str(nodes_[static_cast<size_t>(r)].shape));
    }
    for (const auto& name : wrt) {
        if (leaf_for_name(name, "gradient").frozen) {
            throw ValueError("gradient requested for frozen leaf '" + name + "'");
        }
    }

    std::vector<Tensor> values;
    forward(bindings, values);

    // needs_grad: reachable upward from any requested leaf.
    std::vector<char> needs(nodes_.size(), 0);
    for (const auto& name : wrt) needs[static_cast<size_t>(leaf_ids_.at(name))] = 1;
    for (size_t i = 0; i < nodes_.size(); ++i) {
        for (NodeId a : nodes_[i].args) {
            if (needs[static_cast<size_t>(a)]) needs[i] = 1;
        }
    }

    std::vector<Tensor> adj(nodes_.size());
    std::vector<char> has_adj(nodes_.size(), 0);
    if (needs[static_cast<size_t>(r)]) {
        adj[static_cast<size_t>(r)] = Tensor::full(nodes_[static_cast<size_t>(r)].shape, 1.0, precision_);
        has_adj[static_cast<size_t>(r)] = 1;
    }

    auto accum = [&](NodeId id, const Tensor& g) {
        if (!needs[static_cast<size_t>(id)]) return;
        auto& slot = adj[static_cast<size_t>(id)];
        if (!has_adj[static_cast<size_t>(id)]) {
            slot = g;
            has_adj[static_cast<size_t>(id)] = 1;
        } else {
            for (int64_t i = 0; i < slot.size(); ++i) slot.data()[static_cast<size_t>(i)] += g[i];
        }
    };

    for (size_t idx = nodes_.size(); idx-- > 0;) {
        if (!has_adj[idx] || !needs[idx]) continue;
        const Node& n = nodes_[idx];
        const Tensor& gy = adj[idx];
        switch (n.kind) {
            case OpKind::Leaf:
                break;
            case OpKind::MatMul: {
                const Tensor& a = values[static_cast<size_t>(n.args[0])];
                const Tensor& b = values[static_cast<size_t>(n.args[1])];
                int64_t m = a.extent(0), k = a.extent(1), cols = n.shape[1];
                if (needs[static_cast<size_t>(n.args[0])]) {
                    Tensor ga = Tensor::zeros(a.shape(), precision_);
                    for (int64_t i = 0; i < m; ++i)
                        for (int64_t l = 0; l < k; ++l) {
                            double s = 0.0;
                            if (n.transpose_rhs) {
                                for (int64_t j = 0; j < cols; ++j) s += gy[i * cols + j] * b[j * k + l];
                            } else {
                                for (int64_t j = 0; j < cols; ++j) s += gy[i * cols + j] * b[l * cols + j];
                            }
                            ga.data()[static_cast<size_t>(i * k + l)] = s;
                        }
                    accum(n.args[0], ga);
                }
                if (needs[static_cast<size_t>(n.args[1])]) {
                    Tensor gb = Tensor::zeros(b.shape(), precision_);
                    if (n.transpose_rhs) {
                        for (int64_t j = 0; j < cols; ++j)
                            for (int64_t l = 0; l < k; ++l) {
                                double s = 0.0;
                                for (int64_t i = 0; i < m; ++i) s += gy[i * cols + j] * a[i * k + l];
                                gb.data()[static_cast<size_t>(j * k + l)] = s;
                            }
                    } else {
                        for (int64_t l = 0; l < k; ++l)
                            for (int64_t j = 0; j < cols; ++j) {
                                double s = 0.0;
                                for (int64_t i = 0; i < m; ++i) s += a[i * k + l] * gy[i * cols + j];
                                gb.data()[static_cast<size_t>(l * cols + j)] = s;
                            }
                    }
                    accum(n.args[1], gb);
                }
                break;
            }
            case OpKind::Conv2d: {
                const Tensor& x = values[static_cast<size_t>(n.args[0])];
                const Tensor& w = values[static_cast<size_t>(n.args[1])];
                int64_t bsz = x.extent(0), cin = x.extent(1), h = x.extent(2), wd = x.extent(3);
                int64_t cout = w.extent(0), k = w.extent(2);
                int64_t pad = n.padding == ConvPadding::Same ? (k - 1) / 2 : 0;
                int64_t ho = n.shape[2], wo = n.shape[3];
                bool need_x = needs[static_cast<size_t>(n.args[0])] != 0;
                bool need_w = needs[static_cast<size_t>(n.args[1])] != 0;
                Tensor gx = need_x ? Tensor::zeros(x.shape(), precision_) : Tensor();
                Tensor gw = need_w ? Tensor::zeros(w.shape(), precision_) : Tensor();
                for (int64_t b2 = 0; b2 < bsz; ++b2)
                    for (int64_t f = 0; f < cout; ++f)
                        for (int64_t oi = 0; oi < ho; ++oi)
                            for (int64_t oj = 0; oj < wo; ++oj) {
                                double g = gy[((b2 * cout + f) * ho + oi) * wo + oj];
                                if (g == 0.0) continue;
                                for (int64_t c = 0; c < cin; ++c)
                                    for (int64_t u = 0; u < k; ++u) {
                                        int64_t ii = oi + u - pad;
                                        if (ii < 0 || ii >= h) continue;
                                        for (int64_t v = 0; v < k; ++v) {
                                            int64_t jj = oj + v - pad;
                                            if (jj < 0 || jj >= wd) continue;
                                            int64_t xi = ((b2 * cin + c) * h + ii) * wd + jj;
                                            int64_t wi = ((f * cin + c) * k + u) * k + v;
                                            if (need_x) gx.data()[static_cast<size_t>(xi)] += g * w[wi];
                                            if (need_w) gw.data()[static_cast<size_t>(wi)] += g * x[xi];
                                        }
                                    }
                            }
                if (need_x) accum(n.args[0], gx);
                if (need_w) accum(n.args[1], gw);
                break;
            }
            case OpKind::Relu: {
                const Tensor& x = values[static_cast<size_t>(n.args[0])];
                Tensor gx = gy;
                for (int64_t i = 0; i < gx.size(); ++i) {
                    if (x[i] <= 0.0) gx.data()[static_cast<size_t>(i)] = 0.0;
                }
                accum(n.args[0], gx);
                break;
            }
            case OpKind::Softmax: {
                const Tensor& p = values[idx];
                int64_t c = n.shape.back();
                int64_t rows = p.size() / c;
                Tensor gx = Tensor::zeros(n.shape, precision_);
                for (int64_t r2 = 0; r2 < rows; ++r2) {
                    double dot = 0.0;
                    for (int64_t j = 0; j < c; ++j) dot += gy[r2 * c + j] * p[r2 * c + j];
                    for (int64_t j = 0; j < c; ++j) {
                        gx.data()[static_cast<size_t>(r2 * c + j)] = p[r2 * c + j] * (gy[r2 * c + j] - dot);
                    }
                }
                accum(n.args[0], gx);
                break;
            }
            case OpKind::Log: {
                const Tensor& x = values[static_cast<size_t>(n.args[0])];
                Tensor gx = gy;
                for (int64_t i = 0; i < gx.size(); ++i) gx.data()[static_cast<size_t>(i)] /= x[i];
                accum(n.args[0], gx);
                break;
            }
            case OpKind::Add: {
                accum(n.args[0], gy);
                if (needs[static_cast<size_t>(n.args[1])]) {
                    const Node& bn = nodes_[static_cast<size_t>(n.args[1])];
                    if (bn.shape == n.shape) {
                        accum(n.args[1], gy);
                    } else {
                        Tensor gb = Tensor::zeros(bn.shape, precision_);
                        if (n.shape.size() == 2) {
                            int64_t cols = n.shape[1];
                            for (int64_t i = 0; i < gy.size(); ++i)
                                gb.data()[static_cast<size_t>(i % cols)] += gy[i];
                        } else {
                            int64_t c = n.shape[1], hw = n.shape[2] * n.shape[3];
                            for (int64_t i = 0; i < gy.size(); ++i)
                                gb.data()[static_cast<size_t>((i / hw) % c)] += gy[i];
                        }
                        accum(n.args[1], gb);
                    }
                }
                break;
            }
            case OpKind::Scale: {
                Tensor gx = gy;
                for (double& v : gx.data()) v *= n.factor;
                accum(n.args[0], gx);
                break;
            }
            case OpKind::ReduceSum: {
                const Node& xn = nodes_[static_cast<size_t>(n.args[0])];
                accum(n.args[0], Tensor::full(xn.shape, gy[0], precision_));
                break;
            }
            case OpKind::Reshape: {
                const Node& xn = nodes_[static_cast<size_t>(n.args[0])];
                accum(n.args[0], Tensor::from_data(xn.shape, std::vector<double>(gy.data()), precision_));
                break;
            }
            case OpKind::KlDiv: {
                const Tensor& p = values[static_cast<size_t>(n.args[0])];
                const Tensor& q = values[static_cast<size_t>(n.args[1])];
                double inv_b = gy[0] / static_cast<double>(p.extent(0));
                if (needs[static_cast<size_t>(n.args[0])]) {
                    Tensor gp = Tensor::zeros(p.shape(), precision_);
                    for (int64_t i = 0; i < p.size(); ++i) {
                        if (p[i] <= kProbClamp) continue;
                        double qc = std::max(q[i], kProbClamp);
                        gp.data()[static_cast<size_t>(i)] = inv_b * (std::log(p[i]) - std::log(qc) + 1.0);
                    }
                    accum(n.args[0], gp);
                }
                if (needs[static_cast<size_t>(n.args[1])]) {
                    Tensor gq = Tensor::zeros(q.shape(), precision_);
                    for (int64_t i = 0; i < q.size(); ++i) {
                        if (q[i] <= kProbClamp) continue;
                        double pc = std::max(p[i], kProbClamp);
                        gq.data()[static_cast<size_t>(i)] = -inv_b * pc / q[i];
                    }
                    accum(n.args[1], gq);
                }
                break;
            }
            case OpKind::CrossEntropy: {
                const Tensor& p = values[static_cast<size_t>(n.args[0])];
                int64_t bsz = p.extent(0), c = p.extent(1);
                double inv_b = gy[0] / static_cast<double>(bsz);
                Tensor gp = Tensor::zeros(p.shape(), precision_);
                for (int64_t b2 = 0; b2 < bsz; ++b2) {
                    int64_t i = b2 * c + n.labels[static_cast<size_t>(b2)];
                    if (p[i] > kProbClamp) gp.data()[static_cast<size_t>(i)] = -inv_b / p[i];
                }
                accum(n.args[0], gp);
                break;
            }
        }
    }

    std::map<std::string, Tensor> out;
    for (const auto& name : wrt) {
        NodeId id = leaf_ids_.at(name);
        if (has_adj[static_cast<size_t>(id)]) {
            Tensor g = adj[static_cast<size_t>(id)];
            g.requantize();
            out[name] = std::move(g);
        } else {
            out[name] = Tensor::zeros(nodes_[static_cast<size_t>(id)].shape, precision_);
        }
    }
    return out;
}

std::map<std::string, Tensor> ExprGraph::finite_diff_gradient(const Bindings& bindings,
                                                              const std::vector<std::string>& wrt,
                                                              double h) const {
    if (!(h > 0.0)) throw ValueError("finite_diff_gradient requires h > 0");
    NodeId r = root();
    if (shape_numel(nodes_[static_cast<size_t>(r)].shape) != 1) {
        throw ValueError("finite_diff_gradient requires a scalar root");
    }
    std::map<std::string, Tensor> out;
    for (const auto& name : wrt) {
        leaf_for_name(name, "finite_diff_gradient");
        auto it = bindings.find(name);
        if (it == bindings.end()) throw ValueError("missing binding for leaf '" + name + "'");
        Bindings work = bindings;
        Tensor& t = work[name];
        Tensor g = Tensor::zeros(t.shape(), Precision::F64);
        for (int64_t i = 0; i < t.size(); ++i) {
            double orig = t[i];
            t.data()[static_cast<size_t>(i)] = orig + h;
            double fp = evaluate(work)[0];
            t.data()[static_cast<size_t>(i)] = orig - h;
            double fm = evaluate(work)[0];
            t.data()[static_cast<size_t>(i)] = orig;
            g.data()[static_cast<size_t>(i)] = (fp - fm) / (2.0 * h);
        }
        out[name] = std::move(g);
    }
    return out;
}

}  // namespace mrpf
