#include "mrpf/network.hpp"

#include <algorithm>
#include <cmath>

namespace mrpf {

const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Dense: return "dense";
        case LayerKind::Conv2d: return "conv2d";
        case LayerKind::Relu: return "relu";
    }
    return "?";
}

LayerKind layer_kind_from_name(const std::string& name) {
    if (name == "dense") return LayerKind::Dense;
    if (name == "conv2d") return LayerKind::Conv2d;
    if (name == "relu") return LayerKind::Relu;
    throw ConfigError("unknown layer kind '" + name + "'");
}

namespace {

void validate_specs(const std::vector<LayerSpec>& specs) {
    if (specs.empty()) throw ConfigError("network needs at least one layer");
    bool seen_dense = false;
    int64_t carried = -1;
    for (size_t i = 0; i < specs.size(); ++i) {
        const LayerSpec& s = specs[i];
        if (s.in_channels <= 0 || s.out_channels <= 0) {
            throw ConfigError("layer " + std::to_string(i) + " has non-positive channel counts");
        }
        switch (s.kind) {
            case LayerKind::Dense:
                seen_dense = true;
                break;
            case LayerKind::Conv2d:
                if (seen_dense) throw ConfigError("conv2d layer " + std::to_string(i) + " after a dense layer");
                if (s.kernel <= 0) throw ConfigError("conv2d layer " + std::to_string(i) + " needs a positive kernel");
                break;
            case LayerKind::Relu:
                if (s.in_channels != s.out_channels) {
                    throw ConfigError("relu layer " + std::to_string(i) + " must preserve channel count");
                }
                break;
        }
        if (carried >= 0 && s.in_channels != carried) {
            throw ConfigError("layer " + std::to_string(i) + " expects " + std::to_string(s.in_channels) +
                              " input channels but the previous layer produces " + std::to_string(carried));
        }
        carried = s.out_channels;
    }
}

}  // namespace

Network Network::build(const std::vector<LayerSpec>& specs, uint64_t seed, Precision precision) {
    validate_specs(specs);
    Network net;
    net.specs_ = specs;
    net.precision_ = precision;
    net.weights_.resize(specs.size());
    net.biases_.resize(specs.size());
    for (size_t i = 0; i < specs.size(); ++i) {
        const LayerSpec& s = specs[i];
        if (!s.has_weights()) continue;
        int64_t fan_in = s.kind == LayerKind::Conv2d ? s.in_channels * s.kernel * s.kernel : s.in_channels;
        double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        Rng rng(derive_seed(seed, "layer-init", static_cast<uint64_t>(i)));
        std::vector<int64_t> wshape = s.kind == LayerKind::Conv2d
                                          ? std::vector<int64_t>{s.out_channels, s.in_channels, s.kernel, s.kernel}
                                          : std::vector<int64_t>{s.out_channels, s.in_channels};
        Tensor w = Tensor::zeros(wshape, precision);
        for (auto& v : w.data()) v = rng.uniform(-bound, bound);
        w.requantize();
        net.weights_[i] = std::move(w);
        net.biases_[i] = Tensor::zeros({s.out_channels}, precision);
    }
    return net;
}

Network Network::from_parts(std::vector<LayerSpec> specs, std::vector<Tensor> weights,
                            std::vector<Tensor> biases, Precision precision) {
    validate_specs(specs);
    if (weights.size() != specs.size() || biases.size() != specs.size()) {
        throw ConfigError("weight/bias lists must have one entry per layer");
    }
    Network net;
    net.specs_ = std::move(specs);
    net.precision_ = precision;
    net.weights_.resize(net.specs_.size());
    net.biases_.resize(net.specs_.size());
    for (size_t i = 0; i < net.specs_.size(); ++i) {
        const LayerSpec& s = net.specs_[i];
        if (!s.has_weights()) {
            if (!weights[i].empty() || !biases[i].empty()) {
                throw ConfigError("layer " + std::to_string(i) + " takes no parameters");
            }
            continue;
        }
        if (weights[i].shape() != net.weight_shape(static_cast<int>(i))) {
            throw ShapeError("layer " + std::to_string(i) + " weight shape " + shape_str(weights[i].shape()) +
                             " does not match spec " + shape_str(net.weight_shape(static_cast<int>(i))));
        }
        if (biases[i].shape() != std::vector<int64_t>{s.out_channels}) {
            throw ShapeError("layer " + std::to_string(i) + " bias shape " + shape_str(biases[i].shape()) +
                             " does not match out_channels " + std::to_string(s.out_channels));
        }
        net.weights_[i] = weights[i].to_precision(precision);
        net.biases_[i] = biases[i].to_precision(precision);
    }
    return net;
}

const LayerSpec& Network::spec(int i) const {
    if (i < 0 || i >= layer_count()) throw ValueError("layer index " + std::to_string(i) + " out of range");
    return specs_[static_cast<size_t>(i)];
}

std::vector<int> Network::weight_layers() const {
    std::vector<int> out;
    for (int i = 0; i < layer_count(); ++i) {
        if (is_weight_layer(i)) out.push_back(i);
    }
    return out;
}

std::vector<int> Network::prunable_layers() const {
    std::vector<int> out = weight_layers();
    if (!out.empty()) out.pop_back();
    return out;
}

const Tensor& Network::weight(int i) const {
    if (!is_weight_layer(i)) throw ValueError("layer " + std::to_string(i) + " has no weights");
    return weights_[static_cast<size_t>(i)];
}

const Tensor& Network::bias(int i) const {
    if (!is_weight_layer(i)) throw ValueError("layer " + std::to_string(i) + " has no bias");
    return biases_[static_cast<size_t>(i)];
}

void Network::set_weight(int i, Tensor w) {
    if (!is_weight_layer(i)) throw ValueError("layer " + std::to_string(i) + " has no weights");
    if (w.shape() != weight_shape(i)) {
        throw ShapeError("weight shape " + shape_str(w.shape()) + " does not match layer " + std::to_string(i));
    }
    weights_[static_cast<size_t>(i)] = w.to_precision(precision_);
}

void Network::set_bias(int i, Tensor b) {
    const LayerSpec& s = spec(i);
    if (!s.has_weights()) throw ValueError("layer " + std::to_string(i) + " has no bias");
    if (b.shape() != std::vector<int64_t>{s.out_channels}) {
        throw ShapeError("bias shape " + shape_str(b.shape()) + " does not match layer " + std::to_string(i));
    }
    biases_[static_cast<size_t>(i)] = b.to_precision(precision_);
}

std::vector<int64_t> Network::weight_shape(int i) const {
    const LayerSpec& s = spec(i);
    switch (s.kind) {
        case LayerKind::Dense: return {s.out_channels, s.in_channels};
        case LayerKind::Conv2d: return {s.out_channels, s.in_channels, s.kernel, s.kernel};
        case LayerKind::Relu: break;
    }
    throw ValueError("layer " + std::to_string(i) + " has no weights");
}

ExprGraph::Bindings Network::weight_bindings() const {
    ExprGraph::Bindings b;
    for (int i : weight_layers()) {
        b[weight_leaf_name(i)] = weight(i);
        b[bias_leaf_name(i)] = bias(i);
    }
    return b;
}

int64_t Network::parameter_count() const {
    int64_t n = 0;
    for (int i : weight_layers()) n += weight(i).size() + bias(i).size();
    return n;
}

Tensor Network::forward(const Tensor& batch) const {
    LogitsGraph lg = build_logits_graph(*this, batch.shape(), false, false);
    lg.graph.set_root(lg.logits);
    ExprGraph::Bindings bindings = weight_bindings();
    bindings["x"] = batch;
    return lg.graph.evaluate(bindings);
}

std::string weight_leaf_name(int layer) { return "w" + std::to_string(layer); }
std::string bias_leaf_name(int layer) { return "b" + std::to_string(layer); }

NodeId append_forward(ExprGraph& g, const Network& net, NodeId input, bool trainable_weights) {
    NodeId cur = input;
    for (int i = 0; i < net.layer_count(); ++i) {
        const LayerSpec& s = net.spec(i);
        const auto& cur_shape = g.shape_of(cur);
        switch (s.kind) {
            case LayerKind::Dense: {
                if (cur_shape.size() == 4) {
                    if (cur_shape[2] != 1 || cur_shape[3] != 1) {
                        throw ShapeError("dense layer " + std::to_string(i) + " needs 1x1 spatial input, got " +
                                         shape_str(cur_shape));
                    }
                    cur = g.reshape(cur, {cur_shape[0], cur_shape[1]});
                }
                NodeId w = g.find_leaf(weight_leaf_name(i));
                if (w < 0) w = g.leaf(weight_leaf_name(i), net.weight_shape(i), !trainable_weights);
                NodeId b = g.find_leaf(bias_leaf_name(i));
                if (b < 0) b = g.leaf(bias_leaf_name(i), {s.out_channels}, !trainable_weights);
                cur = g.add(g.matmul(cur, w, true), b);
                break;
            }
            case LayerKind::Conv2d: {
                NodeId w = g.find_leaf(weight_leaf_name(i));
                if (w < 0) w = g.leaf(weight_leaf_name(i), net.weight_shape(i), !trainable_weights);
                NodeId b = g.find_leaf(bias_leaf_name(i));
                if (b < 0) b = g.leaf(bias_leaf_name(i), {s.out_channels}, !trainable_weights);
                cur = g.add(g.conv2d(cur, w, ConvPadding::Valid), b);
                break;
            }
            case LayerKind::Relu:
                cur = g.relu(cur);
                break;
        }
    }
    return cur;
}

LogitsGraph build_logits_graph(const Network& net, const std::vector<int64_t>& batch_shape,
                               bool trainable_weights, bool trainable_input) {
    LogitsGraph lg{ExprGraph(net.precision()), -1, -1};
    lg.input = lg.graph.leaf("x", batch_shape, !trainable_input);
    lg.logits = append_forward(lg.graph, net, lg.input, trainable_weights);
    return lg;
}

Network remove_channels(const Network& net, const SurgeryMap& surgery) {
    std::vector<int> wl = net.weight_layers();
    int last_weight = wl.empty() ? -1 : wl.back();

    for (const auto& [layer, retained] : surgery.retained) {
        if (layer < 0 || layer >= net.layer_count() || !net.is_weight_layer(layer)) {
            throw ValueError("surgery names layer " + std::to_string(layer) + " which has no prunable channels");
        }
        int64_t n_out = net.spec(layer).out_channels;
        if (retained.empty()) throw ValueError("surgery would empty layer " + std::to_string(layer));
        int64_t prev = -1;
        for (int64_t c : retained) {
            if (c < 0 || c >= n_out) {
                throw ValueError("retained channel " + std::to_string(c) + " out of range for layer " +
                                 std::to_string(layer));
            }
            if (c <= prev) throw ValueError("retained channels must be sorted and distinct");
            prev = c;
        }
        if (layer == last_weight && static_cast<int64_t>(retained.size()) != n_out) {
            throw ValueError("the final layer's output channels are not prunable");
        }
    }

    std::vector<LayerSpec> specs = net.specs();
    std::vector<Tensor> weights(specs.size());
    std::vector<Tensor> biases(specs.size());
    for (size_t i = 0; i < specs.size(); ++i) {
        if (specs[i].has_weights()) {
            weights[i] = net.weight(static_cast<int>(i));
            biases[i] = net.bias(static_cast<int>(i));
        }
    }

    auto retained_for = [&](int layer, int64_t n_out) {
        auto it = surgery.retained.find(layer);
        if (it != surgery.retained.end()) return it->second;
        std::vector<int64_t> all(static_cast<size_t>(n_out));
        for (int64_t c = 0; c < n_out; ++c) all[static_cast<size_t>(c)] = c;
        return all;
    };

    auto slice_rows = [](const Tensor& w, const std::vector<int64_t>& rows) {
        int64_t row_len = w.size() / w.extent(0);
        std::vector<int64_t> shape = w.shape();
        shape[0] = static_cast<int64_t>(rows.size());
        Tensor out = Tensor::zeros(shape, w.precision());
        for (size_t r = 0; r < rows.size(); ++r) {
            for (int64_t j = 0; j < row_len; ++j) {
                out.data()[r * static_cast<size_t>(row_len) + static_cast<size_t>(j)] = w[rows[r] * row_len + j];
            }
        }
        return out;
    };

    auto slice_cols = [](const Tensor& w, const std::vector<int64_t>& cols) {
        // Slice along dim 1 (input channels) of a rank-2 or rank-4 weight.
        std::vector<int64_t> shape = w.shape();
        int64_t n_in = shape[1];
        int64_t tail = 1;
        for (size_t d = 2; d < shape.size(); ++d) tail *= shape[d];
        shape[1] = static_cast<int64_t>(cols.size());
        Tensor out = Tensor::zeros(shape, w.precision());
        int64_t rows = w.extent(0);
        for (int64_t r = 0; r < rows; ++r) {
            for (size_t c = 0; c < cols.size(); ++c) {
                for (int64_t t = 0; t < tail; ++t) {
                    out.data()[static_cast<size_t>((r * static_cast<int64_t>(cols.size()) +
                                                    static_cast<int64_t>(c)) * tail + t)] =
                        w[(r * n_in + cols[c]) * tail + t];
                }
            }
        }
        return out;
    };

    for (size_t wi = 0; wi < wl.size(); ++wi) {
        int layer = wl[wi];
        int64_t n_out = specs[static_cast<size_t>(layer)].out_channels;
        std::vector<int64_t> keep = retained_for(layer, n_out);
        if (static_cast<int64_t>(keep.size()) == n_out) continue;

        weights[static_cast<size_t>(layer)] = slice_rows(weights[static_cast<size_t>(layer)], keep);
        Tensor nb = Tensor::zeros({static_cast<int64_t>(keep.size())}, net.precision());
        for (size_t r = 0; r < keep.size(); ++r) nb.data()[r] = biases[static_cast<size_t>(layer)][keep[r]];
        biases[static_cast<size_t>(layer)] = std::move(nb);
        specs[static_cast<size_t>(layer)].out_channels = static_cast<int64_t>(keep.size());

        // Propagate through interstitial relu layers to the next weight layer.
        for (int j = layer + 1; j < static_cast<int>(specs.size()); ++j) {
            LayerSpec& s = specs[static_cast<size_t>(j)];
            if (s.kind == LayerKind::Relu) {
                s.in_channels = s.out_channels = static_cast<int64_t>(keep.size());
                continue;
            }
            weights[static_cast<size_t>(j)] = slice_cols(weights[static_cast<size_t>(j)], keep);
            s.in_channels = static_cast<int64_t>(keep.size());
            break;
        }
    }

    return Network::from_parts(std::move(specs), std::move(weights), std::move(biases), net.precision());
}

uint64_t flops(const Network& net, std::optional<std::pair<int64_t, int64_t>> input_hw) {
    uint64_t total = 0;
    int64_t h = 0, w = 0;
    bool have_hw = input_hw.has_value();
    if (have_hw) {
        h = input_hw->first;
        w = input_hw->second;
    }
    for (int i = 0; i < net.layer_count(); ++i) {
        const LayerSpec& s = net.spec(i);
        switch (s.kind) {
            case LayerKind::Dense:
                total += static_cast<uint64_t>(s.out_channels) * static_cast<uint64_t>(s.in_channels);
                break;
            case LayerKind::Conv2d: {
                if (!have_hw) throw ConfigError("conv FLOPs need the spatial input size");
                int64_t ho = h - s.kernel + 1;
                int64_t wo = w - s.kernel + 1;
                if (ho <= 0 || wo <= 0) throw ConfigError("input too small for conv layer " + std::to_string(i));
                total += static_cast<uint64_t>(s.out_channels) * static_cast<uint64_t>(s.in_channels) *
                         static_cast<uint64_t>(s.kernel * s.kernel) * static_cast<uint64_t>(ho * wo);
                h = ho;
                w = wo;
                break;
            }
            case LayerKind::Relu:
                break;
        }
    }
    return total;
}

double flops_reduction(const Network& original, const Network& pruned,
                       std::optional<std::pair<int64_t, int64_t>> input_hw) {
    uint64_t f0 = flops(original, input_hw);
    if (f0 == 0) throw ValueError("original network has zero FLOPs");
    uint64_t f1 = flops(pruned, input_hw);
    return 1.0 - static_cast<double>(f1) / static_cast<double>(f0);
}

}  // namespace mrpf
