#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mrpf/common.hpp"
#include "mrpf/tensor.hpp"

namespace mrpf {

using NodeId = int32_t;

enum class OpKind {
    Leaf,
    MatMul,
    Conv2d,
    Relu,
    Softmax,
    Log,
    Add,
    Scale,
    ReduceSum,
    Reshape,
    KlDiv,
    CrossEntropy,
};

enum class ConvPadding { Valid, Same };

struct Node {
    OpKind kind = OpKind::Leaf;
    std::string name;              // leaves only
    bool frozen = false;           // leaves only
    std::vector<NodeId> args;
    std::vector<int64_t> shape;    // inferred at construction
    bool transpose_rhs = false;    // matmul
    ConvPadding padding = ConvPadding::Valid;
    double factor = 1.0;           // scale
    std::vector<int64_t> labels;   // cross_entropy
};

// Expression graph for reverse-mode differentiation. Nodes are appended in
// topological order; leaf shapes are declared up front so every node shape is
// known at construction time. Graphs are immutable once built and evaluation
// is a pure function of the bindings.
class ExprGraph {
public:
    using Bindings = std::map<std::string, Tensor>;

    explicit ExprGraph(Precision precision = Precision::F64) : precision_(precision) {}

    NodeId leaf(const std::string& name, std::vector<int64_t> shape, bool frozen = false);
    NodeId matmul(NodeId a, NodeId b, bool transpose_rhs = false);
    NodeId conv2d(NodeId x, NodeId w, ConvPadding padding = ConvPadding::Valid);
    NodeId relu(NodeId x);
    NodeId softmax(NodeId x);
    NodeId log(NodeId x);
    NodeId add(NodeId a, NodeId b);
    NodeId scale(NodeId x, double factor);
    NodeId reduce_sum(NodeId x);
    NodeId reshape(NodeId x, std::vector<int64_t> shape);
    NodeId kl_div(NodeId p, NodeId q);
    NodeId cross_entropy(NodeId probs, std::vector<int64_t> labels);

    void set_root(NodeId id);
    NodeId root() const;
    NodeId find_leaf(const std::string& name) const;  // -1 when absent

    size_t node_count() const { return nodes_.size(); }
    const Node& node(NodeId id) const;
    Precision precision() const { return precision_; }
    const std::vector<int64_t>& shape_of(NodeId id) const { return node(id).shape; }

    Tensor evaluate(const Bindings& bindings) const;
    std::vector<Tensor> evaluate_all(const Bindings& bindings) const;

    // d(root)/d(leaf) for each requested differentiable leaf; leaves the root
    // does not depend on get zero gradients of the leaf's shape.
    std::map<std::string, Tensor> gradient(const Bindings& bindings,
                                           const std::vector<std::string>& wrt) const;

    // Central-difference oracle, (f(w+h) - f(w-h)) / 2h per coordinate.
    std::map<std::string, Tensor> finite_diff_gradient(const Bindings& bindings,
                                                       const std::vector<std::string>& wrt,
                                                       double h) const;

private:
    NodeId push(Node n);
    NodeId check_id(NodeId id, const char* who) const;
    const Node& leaf_for_name(const std::string& name, const char* who) const;
    void forward(const Bindings& bindings, std::vector<Tensor>& values) const;

    std::vector<Node> nodes_;
    std::map<std::string, NodeId> leaf_ids_;
    NodeId root_ = -1;
    Precision precision_;
};

}  // namespace mrpf
