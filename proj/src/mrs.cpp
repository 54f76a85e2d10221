#include "mrpf/mrs.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace mrpf {

void MrsConfig::validate() const {
    if (eta <= 0.0) throw ConfigError("mrs eta must be positive");
    if (epochs < 0) throw ConfigError("mrs epochs must be nonnegative");
    if (epsilon_w < 0.0) throw ConfigError("mrs epsilon must be nonnegative");
    if (delta <= 0.0) throw ConfigError("mrs delta must be positive");
    if (batch_size <= 0) throw ConfigError("mrs batch size must be positive");
}

double baseline_adv_loss(const Network& net, const AdversarialSet& ae) {
    if (ae.size() == 0) throw ValueError("adversarial set is empty");
    constexpr int64_t kChunk = 256;
    int64_t n = ae.size();
    double total = 0.0;
    for (int64_t start = 0; start < n; start += kChunk) {
        int64_t count = std::min(kChunk, n - start);
        std::vector<int64_t> idx(static_cast<size_t>(count));
        for (int64_t i = 0; i < count; ++i) idx[static_cast<size_t>(i)] = start + i;
        Tensor xb = gather_rows(ae.inputs, idx);
        std::vector<int64_t> yb(ae.labels.begin() + start, ae.labels.begin() + start + count);
        total += mean_ce_loss(net, xb, yb) * static_cast<double>(count);
    }
    return total / static_cast<double>(n);
}

namespace {

// Project d = W - W_orig back onto the l2 ball of radius eps * |W_orig|_2.
// After an F32 snap the rescaled delta can land a hair outside the ball, so
// retries shrink the target slightly until the stored values satisfy the
// bound.
void project_weight(Tensor& w, const Tensor& w_orig, double epsilon_w) {
    double bound = epsilon_w * w_orig.l2_norm();
    auto dist_of = [&]() {
        double s = 0.0;
        for (int64_t i = 0; i < w.size(); ++i) {
            double d = w[i] - w_orig[i];
            s += d * d;
        }
        return std::sqrt(s);
    };
    double dist = dist_of();
    double target = bound;
    for (int guard = 0; dist > bound * (1.0 + 1e-11) && dist > 0.0 && guard < 8; ++guard) {
        double scale = target / dist;
        for (int64_t i = 0; i < w.size(); ++i) {
            w.data()[static_cast<size_t>(i)] = w_orig[i] + (w[i] - w_orig[i]) * scale;
        }
        w.requantize();
        dist = dist_of();
        target = bound * (1.0 - 1e-6);
    }
}

}  // namespace

Network perturb_layer_weights(const Network& net, int layer_index, const AdversarialSet& ae,
                              const MrsConfig& cfg) {
    cfg.validate();
    if (ae.size() == 0) throw ValueError("adversarial set is empty");
    if (layer_index < 0 || layer_index >= net.layer_count() || !net.is_weight_layer(layer_index)) {
        throw ValueError("layer " + std::to_string(layer_index) + " is not a weight layer");
    }

    Network out = net;
    const Tensor w_orig = net.weight(layer_index);
    const std::string wname = weight_leaf_name(layer_index);
    int64_t n = ae.size();

    for (int e = 0; e < cfg.epochs; ++e) {
        Rng order_rng(derive_seed(cfg.seed, "mrs-batch-order", static_cast<uint64_t>(e)));
        std::vector<int64_t> order = shuffled_indices(n, order_rng);
        for (int64_t start = 0; start < n; start += cfg.batch_size) {
            int64_t count = std::min(cfg.batch_size, n - start);
            std::vector<int64_t> idx(order.begin() + start, order.begin() + start + count);
            Tensor xb = gather_rows(ae.inputs, idx);
            std::vector<int64_t> yb(static_cast<size_t>(count));
            for (int64_t i = 0; i < count; ++i) yb[static_cast<size_t>(i)] = ae.labels[static_cast<size_t>(idx[static_cast<size_t>(i)])];

            LogitsGraph lg = build_logits_graph(out, xb.shape(), true, false);
            NodeId probs = lg.graph.softmax(lg.logits);
            lg.graph.set_root(lg.graph.cross_entropy(probs, yb));
            ExprGraph::Bindings bindings = out.weight_bindings();
            bindings["x"] = std::move(xb);
            Tensor grad = lg.graph.gradient(bindings, {wname}).at(wname);

            Tensor w = out.weight(layer_index);
            for (int64_t i = 0; i < w.size(); ++i) {
                w.data()[static_cast<size_t>(i)] += cfg.eta * grad[i];
            }
            w.requantize();
            project_weight(w, w_orig, cfg.epsilon_w);
            out.set_weight(layer_index, std::move(w));
        }
    }
    return out;
}

MrsReport compute_mrs(const Network& net, const AdversarialSet& ae, const MrsConfig& cfg) {
    cfg.validate();
    std::vector<int> layers = net.prunable_layers();
    if (layers.empty()) throw ValueError("network has no prunable layers");

    MrsReport report;
    report.l_orig = baseline_adv_loss(net, ae);
    for (int layer : layers) {
        Network pert = perturb_layer_weights(net, layer, ae, cfg);
        MrsLayerEntry entry;
        entry.layer = layer;
        entry.name = std::string(layer_kind_name(net.spec(layer).kind)) + std::to_string(layer);
        entry.l_pert = baseline_adv_loss(pert, ae);
        entry.mrs = std::max(entry.l_pert - report.l_orig, cfg.delta);
        const Tensor& w0 = net.weight(layer);
        const Tensor& w1 = pert.weight(layer);
        double dist = 0.0;
        for (int64_t i = 0; i < w0.size(); ++i) {
            double d = w1[i] - w0[i];
            dist += d * d;
        }
        double base = w0.l2_norm();
        entry.norm_ratio = base > 0.0 ? std::sqrt(dist) / base : 0.0;
        report.entries.push_back(std::move(entry));
    }
    return report;
}

uint64_t mrs_report_hash(const MrsReport& report) {
    uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](const void* p, size_t len) {
        const auto* bytes = static_cast<const unsigned char*>(p);
        for (size_t i = 0; i < len; ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ull;
        }
    };
    auto mix_double = [&](double v) {
        uint64_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        mix(&bits, sizeof(bits));
    };
    mix_double(report.l_orig);
    for (const auto& e : report.entries) {
        uint64_t layer = static_cast<uint64_t>(e.layer);
        mix(&layer, sizeof(layer));
        mix_double(e.l_pert);
        mix_double(e.mrs);
        mix_double(e.norm_ratio);
    }
    return h;
}

}  // namespace mrpf
