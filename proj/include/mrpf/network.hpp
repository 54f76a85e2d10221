#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mrpf/graph.hpp"
#include "mrpf/tensor.hpp"

namespace mrpf {

enum class LayerKind { Dense, Conv2d, Relu };

struct LayerSpec {
    LayerKind kind = LayerKind::Dense;
    int64_t in_channels = 0;
    int64_t out_channels = 0;
    int64_t kernel = 0;  // conv2d only

    static LayerSpec dense(int64_t in, int64_t out) { return {LayerKind::Dense, in, out, 0}; }
    static LayerSpec conv(int64_t in, int64_t out, int64_t k) { return {LayerKind::Conv2d, in, out, k}; }
    static LayerSpec relu(int64_t n) { return {LayerKind::Relu, n, n, 0}; }

    bool has_weights() const { return kind != LayerKind::Relu; }
    bool operator==(const LayerSpec&) const = default;
};

const char* layer_kind_name(LayerKind k);
LayerKind layer_kind_from_name(const std::string& name);

/// Retained output-channel sets per weight layer, keyed by layer index.
/// Layers absent from the map keep all channels.
struct SurgeryMap {
    std::map<int, std::vector<int64_t>> retained;
};

/// Ordered prunable layers with explicit weight and bias tensors. Value type:
/// copies are deep and independent.
class Network {
public:
    Network() = default;

    /// Seeded uniform(+-1/sqrt(fan-in)) weights, zero biases.
    static Network build(const std::vector<LayerSpec>& specs, uint64_t seed,
                         Precision precision = Precision::F64);
    /// Assemble from explicit tensors (checkpoint load, fixtures).
    static Network from_parts(std::vector<LayerSpec> specs, std::vector<Tensor> weights,
                              std::vector<Tensor> biases, Precision precision);

    int layer_count() const { return static_cast<int>(specs_.size()); }
    const std::vector<LayerSpec>& specs() const { return specs_; }
    const LayerSpec& spec(int i) const;
    bool is_weight_layer(int i) const { return spec(i).has_weights(); }

    /// Indices of dense/conv layers, in order.
    std::vector<int> weight_layers() const;
    /// Weight layers whose output channels may be pruned: all but the last
    /// (the classifier's class count is fixed).
    std::vector<int> prunable_layers() const;

    const Tensor& weight(int i) const;
    const Tensor& bias(int i) const;
    void set_weight(int i, Tensor w);
    void set_bias(int i, Tensor b);

    Precision precision() const { return precision_; }

    /// Expected weight shape for layer i per its spec.
    std::vector<int64_t> weight_shape(int i) const;

    Tensor forward(const Tensor& batch) const;

    /// Leaf bindings w{i}/b{i} for graphs produced by build_logits_graph.
    ExprGraph::Bindings weight_bindings() const;

    int64_t parameter_count() const;

private:
    std::vector<LayerSpec> specs_;
    std::vector<Tensor> weights_;  // empty tensor at relu positions
    std::vector<Tensor> biases_;
    Precision precision_ = Precision::F64;
};

std::string weight_leaf_name(int layer);
std::string bias_leaf_name(int layer);

/// Appends this network's forward computation to `g` starting from `input`,
/// reusing weight leaves already present under the standard names and
/// creating missing ones. Returns the logits node.
NodeId append_forward(ExprGraph& g, const Network& net, NodeId input, bool trainable_weights);

struct LogitsGraph {
    ExprGraph graph;
    NodeId input = -1;
    NodeId logits = -1;
};

LogitsGraph build_logits_graph(const Network& net, const std::vector<int64_t>& batch_shape,
                               bool trainable_weights, bool trainable_input);

/// Structural channel removal. For each pruned output channel of layer i the
/// weight row, the bias entry, and the next weight layer's matching input
/// slice are dropped. The input network is left untouched.
Network remove_channels(const Network& net, const SurgeryMap& surgery);

/// Multiply-accumulate count. `input_hw` is required when the network has
/// conv layers.
uint64_t flops(const Network& net, std::optional<std::pair<int64_t, int64_t>> input_hw = std::nullopt);
double flops_reduction(const Network& original, const Network& pruned,
                       std::optional<std::pair<int64_t, int64_t>> input_hw = std::nullopt);

}  // namespace mrpf
