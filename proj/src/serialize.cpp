#include "mrpf/serialize.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "mrpf/attacks.hpp"
#include "mrpf/mrs.hpp"

namespace mrpf {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_keys(const json& j, const char* what, const std::set<std::string>& allowed) {
    if (!j.is_object()) throw ConfigError(std::string(what) + ": expected a JSON object");
    for (const auto& item : j.items()) {
        if (!allowed.count(item.key()))
            throw ConfigError(std::string(what) + ": unknown key '" + item.key() + "'");
    }
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
    auto it = j.find(key);
    if (it == j.end()) return;
    try {
        out = it->get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("key '") + key + "': " + e.what());
    }
}

template <typename T>
T require_field(const json& j, const char* key, const char* what) {
    auto it = j.find(key);
    if (it == j.end()) throw IoError(std::string(what) + ": missing key '" + key + "'");
    try {
        return it->get<T>();
    } catch (const json::exception& e) {
        throw IoError(std::string(what) + ": key '" + key + "': " + e.what());
    }
}

json load_json_file(const fs::path& path, const char* what) {
    std::ifstream in(path);
    if (!in) throw IoError(std::string(what) + ": cannot open " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw IoError(std::string(what) + ": " + path.string() + " is not valid JSON: " + e.what());
    }
    return j;
}

void write_json_file(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write failed for " + path.string());
}

Precision precision_from_name(const std::string& name) {
    if (name == "f32") return Precision::F32;
    if (name == "f64") return Precision::F64;
    throw ConfigError("unknown precision '" + name + "' (expected f32 or f64)");
}

}  // namespace

std::string layer_spec_to_string(const LayerSpec& spec) {
    std::ostringstream out;
    switch (spec.kind) {
        case LayerKind::Dense:
            out << "dense " << spec.in_channels << " " << spec.out_channels;
            break;
        case LayerKind::Conv2d:
            out << "conv " << spec.in_channels << " " << spec.out_channels << " " << spec.kernel;
            break;
        case LayerKind::Relu:
            out << "relu " << spec.in_channels;
            break;
    }
    return out.str();
}

LayerSpec layer_spec_from_string(const std::string& text) {
    std::istringstream in(text);
    std::string kind;
    in >> kind;
    auto next = [&](const char* field) {
        int64_t v = 0;
        if (!(in >> v)) throw ConfigError("layer '" + text + "': missing or bad " + field);
        return v;
    };
    LayerSpec spec;
    if (kind == "dense") {
        int64_t a = next("input width"), b = next("output width");
        spec = LayerSpec::dense(a, b);
    } else if (kind == "conv") {
        int64_t a = next("input channels"), b = next("output channels"), k = next("kernel size");
        spec = LayerSpec::conv(a, b, k);
    } else if (kind == "relu") {
        spec = LayerSpec::relu(next("width"));
    } else {
        throw ConfigError("layer '" + text + "': unknown kind '" + kind + "'");
    }
    std::string rest;
    if (in >> rest) throw ConfigError("layer '" + text + "': trailing token '" + rest + "'");
    return spec;
}

json run_config_to_json(const RunConfig& cfg) {
    json arch = json::array();
    for (const LayerSpec& s : cfg.arch) arch.push_back(layer_spec_to_string(s));
    return json{
        {"seed", cfg.seed},
        {"batch_size", cfg.batch_size},
        {"epochs", cfg.epochs},
        {"momentum", cfg.momentum},
        {"lr_schedule", lr_kind_name(cfg.lr_kind)},
        {"lr0", cfg.lr0},
        {"lr_floor", cfg.lr_floor},
        {"attack_method", attack_method_name(cfg.attack_method)},
        {"epsilon", cfg.attack.epsilon},
        {"alpha", cfg.attack.alpha_step},
        {"attack_iterations", cfg.attack.iterations},
        {"attack_momentum", cfg.attack.momentum},
        {"range_lo", cfg.attack.range_lo},
        {"range_hi", cfg.attack.range_hi},
        {"init_noise", cfg.attack.init_noise},
        {"loss", loss_method_name(cfg.loss.method)},
        {"lambda", cfg.loss.lambda},
        {"inner_epsilon", cfg.loss.inner_attack.epsilon},
        {"inner_alpha", cfg.loss.inner_attack.alpha_step},
        {"inner_iterations", cfg.loss.inner_attack.iterations},
        {"inner_init_noise", cfg.loss.inner_attack.init_noise},
        {"mrs_eta", cfg.mrs.eta},
        {"mrs_epochs", cfg.mrs.epochs},
        {"mrs_epsilon_w", cfg.mrs.epsilon_w},
        {"mrs_delta", cfg.mrs.delta},
        {"mrs_batch_size", cfg.mrs.batch_size},
        {"r_g", cfg.ratios.r_g},
        {"r_min", cfg.ratios.r_min},
        {"r_max", cfg.ratios.r_max},
        {"ratio_delta", cfg.ratios.delta},
        {"variant", ratio_variant_name(cfg.ratios.variant)},
        {"criterion", cfg.criterion},
        {"r_at", cfg.r_at},
        {"precision", precision_name(cfg.precision)},
        {"arch", arch},
        {"dataset_kind", dataset_kind_name(cfg.dataset.kind)},
        {"dataset_classes", cfg.dataset.classes},
        {"dataset_n_train", cfg.dataset.n_train},
        {"dataset_n_test", cfg.dataset.n_test},
        {"dataset_dims", cfg.dataset.dims},
        {"dataset_image_h", cfg.dataset.image_h},
        {"dataset_image_w", cfg.dataset.image_w},
        {"dataset_noise", cfg.dataset.noise},
        {"dataset_seed", cfg.dataset.seed},
    };
}

RunConfig run_config_from_json(const json& j) {
    check_keys(j, "run config",
               {"seed",           "batch_size",      "epochs",          "momentum",
                "lr_schedule",    "lr0",             "lr_floor",        "attack_method",
                "epsilon",        "alpha",           "attack_iterations", "attack_momentum",
                "range_lo",       "range_hi",        "init_noise",      "loss",
                "lambda",         "inner_epsilon",   "inner_alpha",     "inner_iterations",
                "inner_init_noise", "mrs_eta",       "mrs_epochs",      "mrs_epsilon_w",
                "mrs_delta",      "mrs_batch_size",  "r_g",             "r_min",
                "r_max",          "ratio_delta",     "variant",         "criterion",
                "r_at",           "precision",       "arch",            "dataset_kind",
                "dataset_classes", "dataset_n_train", "dataset_n_test", "dataset_dims",
                "dataset_image_h", "dataset_image_w", "dataset_noise",  "dataset_seed"});
    RunConfig cfg;
    read_field(j, "seed", cfg.seed);
    read_field(j, "batch_size", cfg.batch_size);
    read_field(j, "epochs", cfg.epochs);
    read_field(j, "momentum", cfg.momentum);
    if (j.contains("lr_schedule")) cfg.lr_kind = lr_kind_from_name(j.at("lr_schedule").get<std::string>());
    read_field(j, "lr0", cfg.lr0);
    read_field(j, "lr_floor", cfg.lr_floor);
    if (j.contains("attack_method"))
        cfg.attack_method = attack_method_from_name(j.at("attack_method").get<std::string>());
    read_field(j, "epsilon", cfg.attack.epsilon);
    read_field(j, "alpha", cfg.attack.alpha_step);
    read_field(j, "attack_iterations", cfg.attack.iterations);
    read_field(j, "attack_momentum", cfg.attack.momentum);
    read_field(j, "range_lo", cfg.attack.range_lo);
    read_field(j, "range_hi", cfg.attack.range_hi);
    read_field(j, "init_noise", cfg.attack.init_noise);
    if (j.contains("loss")) cfg.loss.method = loss_method_from_name(j.at("loss").get<std::string>());
    read_field(j, "lambda", cfg.loss.lambda);
    read_field(j, "inner_epsilon", cfg.loss.inner_attack.epsilon);
    read_field(j, "inner_alpha", cfg.loss.inner_attack.alpha_step);
    read_field(j, "inner_iterations", cfg.loss.inner_attack.iterations);
    read_field(j, "inner_init_noise", cfg.loss.inner_attack.init_noise);
    read_field(j, "mrs_eta", cfg.mrs.eta);
    read_field(j, "mrs_epochs", cfg.mrs.epochs);
    read_field(j, "mrs_epsilon_w", cfg.mrs.epsilon_w);
    read_field(j, "mrs_delta", cfg.mrs.delta);
    read_field(j, "mrs_batch_size", cfg.mrs.batch_size);
    read_field(j, "r_g", cfg.ratios.r_g);
    read_field(j, "r_min", cfg.ratios.r_min);
    read_field(j, "r_max", cfg.ratios.r_max);
    read_field(j, "ratio_delta", cfg.ratios.delta);
    if (j.contains("variant"))
        cfg.ratios.variant = ratio_variant_from_name(j.at("variant").get<std::string>());
    read_field(j, "criterion", cfg.criterion);
    read_field(j, "r_at", cfg.r_at);
    if (j.contains("precision")) cfg.precision = precision_from_name(j.at("precision").get<std::string>());
    if (j.contains("arch")) {
        const json& arch = j.at("arch");
        if (!arch.is_array()) throw ConfigError("key 'arch': expected an array of layer strings");
        cfg.arch.clear();
        for (const json& item : arch) cfg.arch.push_back(layer_spec_from_string(item.get<std::string>()));
    }
    if (j.contains("dataset_kind"))
        cfg.dataset.kind = dataset_kind_from_name(j.at("dataset_kind").get<std::string>());
    read_field(j, "dataset_classes", cfg.dataset.classes);
    read_field(j, "dataset_n_train", cfg.dataset.n_train);
    read_field(j, "dataset_n_test", cfg.dataset.n_test);
    read_field(j, "dataset_dims", cfg.dataset.dims);
    read_field(j, "dataset_image_h", cfg.dataset.image_h);
    read_field(j, "dataset_image_w", cfg.dataset.image_w);
    read_field(j, "dataset_noise", cfg.dataset.noise);
    read_field(j, "dataset_seed", cfg.dataset.seed);
    return cfg;
}

RunConfig load_run_config(const fs::path& path) {
    return run_config_from_json(load_json_file(path, "run config"));
}

json mrs_report_to_json(const MrsReport& report) {
    json entries = json::array();
    for (const MrsLayerEntry& e : report.entries) {
        entries.push_back(json{{"layer", e.layer},
                               {"name", e.name},
                               {"l_pert", e.l_pert},
                               {"mrs", e.mrs},
                               {"norm_ratio", e.norm_ratio}});
    }
    return json{{"l_orig", report.l_orig}, {"entries", entries}};
}

MrsReport mrs_report_from_json(const json& j) {
    check_keys(j, "mrs report", {"l_orig", "entries"});
    MrsReport report;
    report.l_orig = require_field<double>(j, "l_orig", "mrs report");
    for (const json& e : require_field<json>(j, "entries", "mrs report")) {
        check_keys(e, "mrs entry", {"layer", "name", "l_pert", "mrs", "norm_ratio"});
        MrsLayerEntry entry;
        entry.layer = require_field<int>(e, "layer", "mrs entry");
        entry.name = require_field<std::string>(e, "name", "mrs entry");
        entry.l_pert = require_field<double>(e, "l_pert", "mrs entry");
        entry.mrs = require_field<double>(e, "mrs", "mrs entry");
        entry.norm_ratio = require_field<double>(e, "norm_ratio", "mrs entry");
        report.entries.push_back(entry);
    }
    return report;
}

namespace {

json ratio_config_to_json(const RatioConfig& cfg) {
    return json{{"r_g", cfg.r_g},
                {"r_min", cfg.r_min},
                {"r_max", cfg.r_max},
                {"ratio_delta", cfg.delta},
                {"variant", ratio_variant_name(cfg.variant)}};
}

RatioConfig ratio_config_from_json(const json& j) {
    check_keys(j, "ratio config", {"r_g", "r_min", "r_max", "ratio_delta", "variant"});
    RatioConfig cfg;
    read_field(j, "r_g", cfg.r_g);
    read_field(j, "r_min", cfg.r_min);
    read_field(j, "r_max", cfg.r_max);
    read_field(j, "ratio_delta", cfg.delta);
    if (j.contains("variant"))
        cfg.variant = ratio_variant_from_name(j.at("variant").get<std::string>());
    return cfg;
}

}  // namespace

json pruning_plan_to_json(const PruningPlan& plan) {
    return json{{"layers", plan.layers},
                {"ratios", plan.ratios},
                {"pruned_counts", plan.pruned_counts},
                {"pruned_channels", plan.pruned_channels},
                {"clamped", plan.clamped},
                {"provenance",
                 json{{"report_hash", plan.provenance.report_hash},
                      {"criterion", plan.provenance.criterion},
                      {"ratio_config", ratio_config_to_json(plan.provenance.ratio_config)}}},
                {"retained_channel_count", plan.retained_channel_count},
                {"retained_param_count", plan.retained_param_count}};
}

PruningPlan pruning_plan_from_json(const json& j) {
    check_keys(j, "pruning plan",
               {"layers", "ratios", "pruned_counts", "pruned_channels", "clamped", "provenance",
                "retained_channel_count", "retained_param_count"});
    PruningPlan plan;
    plan.layers = require_field<std::vector<int>>(j, "layers", "pruning plan");
    plan.ratios = require_field<std::vector<double>>(j, "ratios", "pruning plan");
    plan.pruned_counts = require_field<std::vector<int64_t>>(j, "pruned_counts", "pruning plan");
    plan.pruned_channels =
        require_field<std::vector<std::vector<int64_t>>>(j, "pruned_channels", "pruning plan");
    plan.clamped = require_field<std::vector<bool>>(j, "clamped", "pruning plan");
    const json& prov = require_field<json>(j, "provenance", "pruning plan");
    check_keys(prov, "plan provenance", {"report_hash", "criterion", "ratio_config"});
    plan.provenance.report_hash = require_field<uint64_t>(prov, "report_hash", "plan provenance");
    plan.provenance.criterion = require_field<std::string>(prov, "criterion", "plan provenance");
    plan.provenance.ratio_config =
        ratio_config_from_json(require_field<json>(prov, "ratio_config", "plan provenance"));
    plan.retained_channel_count =
        require_field<int64_t>(j, "retained_channel_count", "pruning plan");
    plan.retained_param_count = require_field<int64_t>(j, "retained_param_count", "pruning plan");
    return plan;
}

json run_record_to_json(const RunRecord& record) {
    json arch_o = json::array(), arch_p = json::array();
    for (const LayerSpec& s : record.original_arch) arch_o.push_back(layer_spec_to_string(s));
    for (const LayerSpec& s : record.pruned_arch) arch_p.push_back(layer_spec_to_string(s));
    json history = json::array();
    for (const EpochMetrics& e : record.history) {
        history.push_back(json{{"train_loss", e.train_loss},
                               {"sacc", e.sacc},
                               {"adv_pgd", e.adv_pgd},
                               {"adv_fgsm", e.adv_fgsm}});
    }
    return json{{"format_version", record.format_version},
                {"config", run_config_to_json(record.config)},
                {"original_arch", arch_o},
                {"pruned_arch", arch_p},
                {"stage_seeds", record.stage_seeds},
                {"mrs", mrs_report_to_json(record.mrs)},
                {"plan", pruning_plan_to_json(record.plan)},
                {"history", history},
                {"final_metrics",
                 json{{"sacc", record.final_metrics.sacc},
                      {"adv_pgd", record.final_metrics.adv_pgd},
                      {"adv_fgsm", record.final_metrics.adv_fgsm}}},
                {"flops_reduction", record.flops_reduction_value},
                {"input_h", record.input_h},
                {"input_w", record.input_w},
                {"wall_seconds", record.wall_seconds}};
}

RunRecord run_record_from_json(const json& j) {
    check_keys(j, "run record",
               {"format_version", "config", "original_arch", "pruned_arch", "stage_seeds", "mrs",
                "plan", "history", "final_metrics", "flops_reduction", "input_h", "input_w",
                "wall_seconds"});
    RunRecord record;
    record.format_version = require_field<std::string>(j, "format_version", "run record");
    if (record.format_version != kRunFormatVersion)
        throw IoError("run record: format version mismatch (found '" + record.format_version +
                      "', expected '" + kRunFormatVersion + "')");
    record.config = run_config_from_json(require_field<json>(j, "config", "run record"));
    for (const json& s : require_field<json>(j, "original_arch", "run record"))
        record.original_arch.push_back(layer_spec_from_string(s.get<std::string>()));
    for (const json& s : require_field<json>(j, "pruned_arch", "run record"))
        record.pruned_arch.push_back(layer_spec_from_string(s.get<std::string>()));
    record.stage_seeds =
        require_field<std::map<std::string, uint64_t>>(j, "stage_seeds", "run record");
    record.mrs = mrs_report_from_json(require_field<json>(j, "mrs", "run record"));
    record.plan = pruning_plan_from_json(require_field<json>(j, "plan", "run record"));
    for (const json& e : require_field<json>(j, "history", "run record")) {
        check_keys(e, "epoch metrics", {"train_loss", "sacc", "adv_pgd", "adv_fgsm"});
        EpochMetrics em;
        em.train_loss = require_field<double>(e, "train_loss", "epoch metrics");
        em.sacc = require_field<double>(e, "sacc", "epoch metrics");
        em.adv_pgd = require_field<double>(e, "adv_pgd", "epoch metrics");
        em.adv_fgsm = require_field<double>(e, "adv_fgsm", "epoch metrics");
        record.history.push_back(em);
    }
    const json& fm = require_field<json>(j, "final_metrics", "run record");
    check_keys(fm, "final metrics", {"sacc", "adv_pgd", "adv_fgsm"});
    record.final_metrics.sacc = require_field<double>(fm, "sacc", "final metrics");
    record.final_metrics.adv_pgd = require_field<double>(fm, "adv_pgd", "final metrics");
    record.final_metrics.adv_fgsm = require_field<double>(fm, "adv_fgsm", "final metrics");
    record.flops_reduction_value = require_field<double>(j, "flops_reduction", "run record");
    record.input_h = require_field<int64_t>(j, "input_h", "run record");
    record.input_w = require_field<int64_t>(j, "input_w", "run record");
    record.wall_seconds = require_field<double>(j, "wall_seconds", "run record");
    return record;
}

void save_network(const fs::path& prefix, const Network& net) {
    fs::path header_path = prefix;
    header_path += ".json";
    fs::path payload_path = prefix;
    payload_path += ".bin";

    json specs = json::array();
    for (const LayerSpec& s : net.specs()) specs.push_back(layer_spec_to_string(s));
    json header{{"format_version", kRunFormatVersion},
                {"precision", precision_name(net.precision())},
                {"specs", specs},
                {"payload", payload_path.filename().string()}};
    write_json_file(header_path, header);

    std::ofstream out(payload_path, std::ios::binary);
    if (!out) throw IoError("cannot write " + payload_path.string());
    for (int i : net.weight_layers()) {
        write_mrpt(out, net.weight(i));
        write_mrpt(out, net.bias(i));
    }
    if (!out) throw IoError("write failed for " + payload_path.string());
}

Network load_network(const fs::path& prefix) {
    fs::path header_path = prefix;
    header_path += ".json";
    json header = load_json_file(header_path, "network checkpoint");
    check_keys(header, "network checkpoint", {"format_version", "precision", "specs", "payload"});
    std::string version = require_field<std::string>(header, "format_version", "network checkpoint");
    if (version != kRunFormatVersion)
        throw IoError("network checkpoint " + header_path.string() +
                      ": format version mismatch (found '" + version + "', expected '" +
                      kRunFormatVersion + "')");
    Precision precision =
        precision_from_name(require_field<std::string>(header, "precision", "network checkpoint"));
    std::vector<LayerSpec> specs;
    for (const json& s : require_field<json>(header, "specs", "network checkpoint"))
        specs.push_back(layer_spec_from_string(s.get<std::string>()));
    fs::path payload_path =
        header_path.parent_path() / require_field<std::string>(header, "payload", "network checkpoint");

    std::ifstream in(payload_path, std::ios::binary);
    if (!in) throw IoError("network checkpoint: cannot open " + payload_path.string());
    std::vector<Tensor> weights, biases;
    try {
        for (const LayerSpec& s : specs) {
            if (!s.has_weights()) {
                weights.emplace_back();
                biases.emplace_back();
                continue;
            }
            Tensor w = read_mrpt(in);
            Tensor b = read_mrpt(in);
            weights.push_back(w.to_precision(precision));
            biases.push_back(b.to_precision(precision));
        }
    } catch (const IoError& e) {
        throw IoError(std::string(e.what()) + " in " + payload_path.string());
    }
    char extra = 0;
    if (in.read(&extra, 1))
        throw IoError("network checkpoint: trailing bytes in " + payload_path.string());
    return Network::from_parts(std::move(specs), std::move(weights), std::move(biases), precision);
}

namespace {

constexpr const char* kManifestName = "manifest.json";
constexpr const char* kRecordName = "record.json";
constexpr const char* kMrsName = "mrs.json";
constexpr const char* kPlanName = "plan.json";
constexpr const char* kNetOriginal = "net_original";
constexpr const char* kNetPruned = "net_pruned";
constexpr const char* kNetFinal = "net_final";

}  // namespace

void persist_run(const fs::path& dir, const RunRecord& record, const Network* original,
                 const Network* pruned, const Network* final_net) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create run directory " + dir.string() + ": " + ec.message());

    write_json_file(dir / kRecordName, run_record_to_json(record));
    write_json_file(dir / kMrsName, mrs_report_to_json(record.mrs));
    write_json_file(dir / kPlanName, pruning_plan_to_json(record.plan));

    json nets = json::object();
    if (original) {
        save_network(dir / kNetOriginal, *original);
        nets["original"] = kNetOriginal;
    }
    if (pruned) {
        save_network(dir / kNetPruned, *pruned);
        nets["pruned"] = kNetPruned;
    }
    if (final_net) {
        save_network(dir / kNetFinal, *final_net);
        nets["final"] = kNetFinal;
    }

    bool complete = original && pruned && final_net;
    json manifest{{"format_version", kRunFormatVersion},
                  {"complete", complete},
                  {"record", kRecordName},
                  {"mrs", kMrsName},
                  {"plan", kPlanName},
                  {"networks", nets}};
    write_json_file(dir / kManifestName, manifest);
}

namespace {

json load_manifest(const fs::path& dir) {
    fs::path path = dir / kManifestName;
    json manifest = load_json_file(path, "run manifest");
    check_keys(manifest, "run manifest",
               {"format_version", "complete", "record", "mrs", "plan", "networks"});
    std::string version = require_field<std::string>(manifest, "format_version", "run manifest");
    if (version != kRunFormatVersion)
        throw IoError("run manifest " + path.string() + ": format version mismatch (found '" +
                      version + "', expected '" + kRunFormatVersion + "')");
    return manifest;
}

}  // namespace

RunRecord load_run_record(const fs::path& dir) {
    json manifest = load_manifest(dir);
    fs::path record_path = dir / require_field<std::string>(manifest, "record", "run manifest");
    try {
        return run_record_from_json(load_json_file(record_path, "run record"));
    } catch (const ConfigError& e) {
        throw IoError("run record " + record_path.string() + ": " + e.what());
    }
}

LoadedRun load_run(const fs::path& dir) {
    json manifest = load_manifest(dir);
    if (!require_field<bool>(manifest, "complete", "run manifest"))
        throw IoError("run directory " + dir.string() +
                      " is incomplete (a stage failed; record.json holds the partial results)");
    LoadedRun run;
    run.record = load_run_record(dir);
    const json& nets = require_field<json>(manifest, "networks", "run manifest");
    check_keys(nets, "manifest networks", {"original", "pruned", "final"});
    run.original = load_network(dir / require_field<std::string>(nets, "original", "manifest networks"));
    run.pruned = load_network(dir / require_field<std::string>(nets, "pruned", "manifest networks"));
    run.final_net = load_network(dir / require_field<std::string>(nets, "final", "manifest networks"));
    return run;
}

void save_adversarial_set(const fs::path& dir, const AdversarialSet& set) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
    save_mrpt(dir / "inputs.mrpt", set.inputs);
    save_mrpt(dir / "perturbations.mrpt", set.perturbations);
    json manifest{{"format_version", kRunFormatVersion},
                  {"classes", set.classes},
                  {"labels", set.labels},
                  {"inputs", "inputs.mrpt"},
                  {"perturbations", "perturbations.mrpt"}};
    write_json_file(dir / "ae.json", manifest);
}

AdversarialSet load_adversarial_set(const fs::path& dir) {
    json manifest = load_json_file(dir / "ae.json", "adversarial set");
    check_keys(manifest, "adversarial set",
               {"format_version", "classes", "labels", "inputs", "perturbations"});
    std::string version = require_field<std::string>(manifest, "format_version", "adversarial set");
    if (version != kRunFormatVersion)
        throw IoError("adversarial set " + (dir / "ae.json").string() +
                      ": format version mismatch (found '" + version + "', expected '" +
                      kRunFormatVersion + "')");
    AdversarialSet set;
    set.classes = require_field<int64_t>(manifest, "classes", "adversarial set");
    set.labels = require_field<std::vector<int64_t>>(manifest, "labels", "adversarial set");
    set.inputs = load_mrpt(dir / require_field<std::string>(manifest, "inputs", "adversarial set"));
    set.perturbations =
        load_mrpt(dir / require_field<std::string>(manifest, "perturbations", "adversarial set"));
    if (set.inputs.rank() < 1 ||
        set.inputs.extent(0) != static_cast<int64_t>(set.labels.size()) ||
        !set.inputs.same_shape(set.perturbations))
        throw IoError("adversarial set in " + dir.string() + ": inconsistent shapes");
    return set;
}

}  // namespace mrpf
