#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mrpf/serialize.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliOptions {
    std::string config_path;
    std::string run_dir = "run";
    std::optional<uint64_t> seed;
    std::optional<std::string> variant;
    std::optional<std::string> loss;
    std::optional<std::string> criterion;
};

mrpf::RunConfig load_config(const CliOptions& opt, const std::string& sub) {
    if (opt.config_path.empty())
        throw mrpf::ConfigError("--config is required for '" + sub + "'");
    mrpf::RunConfig cfg = mrpf::load_run_config(opt.config_path);
    if (opt.seed) cfg.seed = *opt.seed;
    if (opt.variant) cfg.ratios.variant = mrpf::ratio_variant_from_name(*opt.variant);
    if (opt.loss) cfg.loss.method = mrpf::loss_method_from_name(*opt.loss);
    if (opt.criterion) cfg.criterion = *opt.criterion;
    cfg.validate();
    return cfg;
}

mrpf::Network build_network(const mrpf::RunConfig& cfg) {
    if (cfg.arch.empty())
        throw mrpf::ConfigError("config: 'arch' must list at least one layer");
    return mrpf::Network::build(cfg.arch, mrpf::derive_seed(cfg.seed, "net-init"), cfg.precision);
}

mrpf::SyntheticData load_data(const mrpf::RunConfig& cfg) {
    mrpf::DatasetSpec spec = cfg.dataset;
    spec.seed = mrpf::derive_seed(cfg.seed, "dataset", cfg.dataset.seed);
    return mrpf::make_synthetic_dataset(spec);
}

std::optional<mrpf::Network> try_load_net(const fs::path& dir, const char* name) {
    fs::path header = dir / (std::string(name) + ".json");
    if (!fs::exists(header)) return std::nullopt;
    return mrpf::load_network(dir / name);
}

mrpf::Network net_for_eval(const fs::path& dir, const mrpf::RunConfig& cfg) {
    for (const char* name : {"net_final", "net_pruned", "net_original"}) {
        if (auto net = try_load_net(dir, name)) return *net;
    }
    return build_network(cfg);
}

mrpf::Network net_for_finetune(const fs::path& dir, const mrpf::RunConfig& cfg) {
    for (const char* name : {"net_pruned", "net_original"}) {
        if (auto net = try_load_net(dir, name)) return *net;
    }
    return build_network(cfg);
}

void write_json_artifact(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw mrpf::IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

json read_json_artifact(const fs::path& path, const char* what) {
    std::ifstream in(path);
    if (!in) throw mrpf::IoError(std::string(what) + ": cannot open " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw mrpf::IoError(std::string(what) + ": " + path.string() + ": " + e.what());
    }
    return j;
}

void ensure_run_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw mrpf::IoError("cannot create run directory " + dir.string() + ": " + ec.message());
}

void print_mrs_table(std::ostream& out, const mrpf::MrsReport& report) {
    out << "baseline adversarial loss: " << std::setprecision(10) << report.l_orig << "\n";
    out << std::left << std::setw(6) << "layer" << std::setw(10) << "name" << std::setw(16)
        << "mrs" << std::setw(16) << "l_pert" << "norm_ratio\n";
    for (const mrpf::MrsLayerEntry& e : report.entries) {
        out << std::left << std::setw(6) << e.layer << std::setw(10) << e.name << std::setw(16)
            << e.mrs << std::setw(16) << e.l_pert << e.norm_ratio << "\n";
    }
}

void print_metrics(std::ostream& out, const mrpf::Metrics& m) {
    out << std::setprecision(6) << "sacc=" << m.sacc << " adv_pgd=" << m.adv_pgd
        << " adv_fgsm=" << m.adv_fgsm << "\n";
}

mrpf::MrsReport require_mrs_report(const fs::path& dir) {
    fs::path path = dir / "mrs.json";
    if (!fs::exists(path))
        throw mrpf::IoError("no mrs.json in " + dir.string() + " (run the mrs subcommand first)");
    return mrpf::mrs_report_from_json(read_json_artifact(path, "mrs report"));
}

mrpf::RunRecord base_record(const mrpf::RunConfig& cfg) {
    mrpf::RunRecord rec;
    rec.config = cfg;
    return rec;
}

int cmd_train(const CliOptions& opt) {
    mrpf::RunConfig cfg = load_config(opt, "train");
    mrpf::SyntheticData data = load_data(cfg);
    mrpf::Network net = build_network(cfg);
    mrpf::FinetuneResult ft = mrpf::finetune(net, data.train, data.test, cfg);

    mrpf::RunRecord rec = base_record(cfg);
    rec.original_arch = net.specs();
    rec.pruned_arch = ft.net.specs();
    rec.stage_seeds["finetune"] = cfg.seed;
    rec.history = ft.history;
    rec.final_metrics = ft.history.empty()
                            ? mrpf::evaluate_metrics(ft.net, data.test, cfg.attack)
                            : mrpf::Metrics{ft.history.back().sacc, ft.history.back().adv_pgd,
                                            ft.history.back().adv_fgsm};
    mrpf::persist_run(opt.run_dir, rec, &net, nullptr, &ft.net);
    print_metrics(std::cout, rec.final_metrics);
    return 0;
}

int cmd_attack_eval(const CliOptions& opt) {
    mrpf::RunConfig cfg = load_config(opt, "attack-eval");
    mrpf::SyntheticData data = load_data(cfg);
    mrpf::Network net = net_for_eval(opt.run_dir, cfg);
    mrpf::Metrics m = mrpf::evaluate_metrics(net, data.test, cfg.attack);
    ensure_run_dir(opt.run_dir);
    write_json_artifact(fs::path(opt.run_dir) / "metrics.json",
                        json{{"sacc", m.sacc}, {"adv_pgd", m.adv_pgd}, {"adv_fgsm", m.adv_fgsm}});
    print_metrics(std::cout, m);
    return 0;
}

int cmd_mrs(const CliOptions& opt) {
    mrpf::RunConfig cfg = load_config(opt, "mrs");
    mrpf::SyntheticData data = load_data(cfg);
    mrpf::Network net = build_network(cfg);
    mrpf::AdversarialSet ae = mrpf::generate_adversarial_set(
        net, data.train, cfg.attack_method, cfg.attack, mrpf::derive_seed(cfg.seed, "ae"));
    mrpf::MrsConfig mcfg = cfg.mrs;
    mcfg.seed = mrpf::derive_seed(cfg.seed, "mrs");
    mrpf::MrsReport report = mrpf::compute_mrs(net, ae, mcfg);
    ensure_run_dir(opt.run_dir);
    write_json_artifact(fs::path(opt.run_dir) / "mrs.json", mrpf::mrs_report_to_json(report));
    print_mrs_table(std::cout, report);
    return 0;
}

int cmd_allocate(const CliOptions& opt) {
    mrpf::RunConfig cfg = load_config(opt, "allocate");
    mrpf::MrsReport report = require_mrs_report(opt.run_dir);
    std::vector<double> ratios = mrpf::allocate_ratios(report, cfg.ratios);
    json rows = json::array();
    for (size_t i = 0; i < ratios.size(); ++i) {
        rows.push_back(json{{"layer", report.entries[i].layer},
                            {"name", report.entries[i].name},
                            {"ratio", ratios[i]}});
    }
    write_json_artifact(fs::path(opt.run_dir) / "ratios.json",
                        json{{"variant", mrpf::ratio_variant_name(cfg.ratios.variant)},
                             {"ratios", rows}});
    for (size_t i = 0; i < ratios.size(); ++i)
        std::cout << report.entries[i].name << " " << std::setprecision(10) << ratios[i] << "\n";
    return 0;
}

int cmd_prune(const CliOptions& opt) {
    mrpf::RunConfig cfg = load_config(opt, "prune");
    mrpf::Network net = build_network(cfg);
    mrpf::MrsReport report = require_mrs_report(opt.run_dir);
    std::vector<double> ratios = mrpf::allocate_ratios(report, cfg.ratios);
    mrpf::ImportanceScores scores;
    if (cfg.criterion == "taylor") {
        mrpf::SyntheticData data = load_data(cfg);
        int64_t count = std::min<int64_t>(cfg.batch_size, data.train.size());
        std::vector<int64_t> idx(static_cast<size_t>(count));
        for (int64_t i = 0; i < count; ++i) idx[static_cast<size_t>(i)] = i;
        mrpf::Dataset probe = data.train.subset(idx);
        scores = mrpf::taylor_importance(net, probe.features, probe.labels);
    } else {
        scores = mrpf::magnitude_importance(net);
    }
    mrpf::PlanProvenance prov{mrpf::mrs_report_hash(report), cfg.criterion, cfg.ratios};
    mrpf::PruningPlan plan = mrpf::plan_pruning(scores, ratios, net, prov);
    mrpf::Network pruned = mrpf::remove_channels(net, plan.to_surgery(net));
    ensure_run_dir(opt.run_dir);
    write_json_artifact(fs::path(opt.run_dir) / "plan.json", mrpf::pruning_plan_to_json(plan));
    mrpf::save_network(fs::path(opt.run_dir) / "net_original", net);
    mrpf::save_network(fs::path(opt.run_dir) / "net_pruned", pruned);
    for (size_t i = 0; i < plan.layers.size(); ++i) {
        std::cout << "layer " << plan.layers[i] << ": pruned " << plan.pruned_counts[i]
                  << " channels (ratio " << std::setprecision(6) << plan.ratios[i] << ")\n";
    }
    std::cout << "retained params: " << plan.retained_param_count << "\n";
    return 0;
}

int cmd_finetune(const CliOptions& opt) {
    mrpf::RunConfig cfg = load_config(opt, "finetune");
    mrpf::SyntheticData data = load_data(cfg);
    fs::path dir(opt.run_dir);
    mrpf::Network start = net_for_finetune(dir, cfg);
    mrpf::FinetuneResult ft = mrpf::finetune(start, data.train, data.test, cfg);

    mrpf::RunRecord rec = base_record(cfg);
    std::optional<mrpf::Network> original = try_load_net(dir, "net_original");
    std::optional<mrpf::Network> pruned = try_load_net(dir, "net_pruned");
    rec.original_arch = original ? original->specs() : start.specs();
    rec.pruned_arch = ft.net.specs();
    if (fs::exists(dir / "mrs.json")) rec.mrs = require_mrs_report(dir);
    if (fs::exists(dir / "plan.json"))
        rec.plan = mrpf::pruning_plan_from_json(read_json_artifact(dir / "plan.json", "pruning plan"));
    if (original && pruned) {
        std::optional<std::pair<int64_t, int64_t>> hw;
        if (data.train.features.rank() == 4)
            hw = std::make_pair(data.train.features.extent(2), data.train.features.extent(3));
        rec.flops_reduction_value = mrpf::flops_reduction(*original, *pruned, hw);
        if (hw) {
            rec.input_h = hw->first;
            rec.input_w = hw->second;
        }
    }
    rec.stage_seeds["finetune"] = cfg.seed;
    rec.history = ft.history;
    rec.final_metrics = ft.history.empty()
                            ? mrpf::evaluate_metrics(ft.net, data.test, cfg.attack)
                            : mrpf::Metrics{ft.history.back().sacc, ft.history.back().adv_pgd,
                                            ft.history.back().adv_fgsm};
    const mrpf::Network* orig_ptr = original ? &*original : &start;
    mrpf::persist_run(dir, rec, orig_ptr, pruned ? &*pruned : nullptr, &ft.net);
    print_metrics(std::cout, rec.final_metrics);
    return 0;
}

int cmd_mrpf(const CliOptions& opt) {
    mrpf::RunConfig cfg = load_config(opt, "mrpf");
    mrpf::SyntheticData data = load_data(cfg);
    mrpf::Network net = build_network(cfg);
    mrpf::RunRecord partial;
    try {
        mrpf::MrpfResult result = mrpf::mrpf_run(net, data.train, data.test, cfg, &partial);
        mrpf::Network pruned = mrpf::remove_channels(net, result.record.plan.to_surgery(net));
        mrpf::persist_run(opt.run_dir, result.record, &net, &pruned, &result.net);
        std::cout << "flops reduction: " << std::setprecision(6)
                  << result.record.flops_reduction_value << "\n";
        print_metrics(std::cout, result.record.final_metrics);
        return 0;
    } catch (const mrpf::StageError&) {
        const mrpf::Network* pruned_ptr = nullptr;
        mrpf::Network pruned;
        if (!partial.pruned_arch.empty()) {
            pruned = mrpf::remove_channels(net, partial.plan.to_surgery(net));
            pruned_ptr = &pruned;
        }
        mrpf::persist_run(opt.run_dir, partial, &net, pruned_ptr, nullptr);
        throw;
    }
}

int cmd_report(const CliOptions& opt) {
    fs::path dir(opt.run_dir);
    std::vector<std::pair<std::string, mrpf::RunRecord>> runs;
    if (fs::exists(dir / "manifest.json")) {
        runs.emplace_back(dir.filename().string(), mrpf::load_run_record(dir));
    } else if (fs::is_directory(dir)) {
        std::vector<fs::path> subdirs;
        for (const auto& entry : fs::directory_iterator(dir))
            if (entry.is_directory() && fs::exists(entry.path() / "manifest.json"))
                subdirs.push_back(entry.path());
        std::sort(subdirs.begin(), subdirs.end());
        for (const fs::path& sub : subdirs)
            runs.emplace_back(sub.filename().string(), mrpf::load_run_record(sub));
    }
    if (runs.empty())
        throw mrpf::IoError("no run records under " + dir.string());

    if (runs.size() == 1 && fs::exists(dir / "manifest.json")) {
        const mrpf::RunRecord& rec = runs[0].second;
        std::ofstream table(dir / "mrs_table.csv");
        if (!table) throw mrpf::IoError("cannot write " + (dir / "mrs_table.csv").string());
        table << "layer,name,mrs,l_pert,norm_ratio,ratio,pruned_channels\n";
        table << std::setprecision(17);
        for (size_t i = 0; i < rec.mrs.entries.size(); ++i) {
            const mrpf::MrsLayerEntry& e = rec.mrs.entries[i];
            double ratio = i < rec.plan.ratios.size() ? rec.plan.ratios[i] : 0.0;
            int64_t pruned = i < rec.plan.pruned_counts.size() ? rec.plan.pruned_counts[i] : 0;
            table << e.layer << "," << e.name << "," << e.mrs << "," << e.l_pert << ","
                  << e.norm_ratio << "," << ratio << "," << pruned << "\n";
        }
        print_mrs_table(std::cout, rec.mrs);
    }

    fs::path sparsity_path = dir / "sparsity.csv";
    std::ofstream sparsity(sparsity_path);
    if (!sparsity) throw mrpf::IoError("cannot write " + sparsity_path.string());
    sparsity << "run,r_g,flops_reduction,retained_params,sacc,adv_pgd,adv_fgsm\n";
    sparsity << std::setprecision(17);
    for (const auto& [name, rec] : runs) {
        sparsity << name << "," << rec.config.ratios.r_g << "," << rec.flops_reduction_value << ","
                 << rec.plan.retained_param_count << "," << rec.final_metrics.sacc << ","
                 << rec.final_metrics.adv_pgd << "," << rec.final_metrics.adv_fgsm << "\n";
    }
    std::cout << "wrote " << sparsity_path.string() << " (" << runs.size() << " run"
              << (runs.size() == 1 ? "" : "s") << ")\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Module-robustness channel pruning with adversarial fine-tuning"};
    app.require_subcommand(1);

    CliOptions opt;
    uint64_t seed_value = 0;
    std::string variant_value, loss_value, criterion_value;

    struct SubEntry {
        const char* name;
        const char* help;
        int (*fn)(const CliOptions&);
    };
    const SubEntry entries[] = {
        {"train", "Adversarially train a fresh network", cmd_train},
        {"attack-eval", "Evaluate clean and attacked accuracy", cmd_attack_eval},
        {"mrs", "Per-layer robustness sensitivity", cmd_mrs},
        {"allocate", "Per-layer pruning ratios from a stored MRS report", cmd_allocate},
        {"prune", "Plan and apply channel pruning", cmd_prune},
        {"finetune", "Adversarially fine-tune the run's network", cmd_finetune},
        {"mrpf", "Full pipeline: AE, MRS, allocate, prune, fine-tune", cmd_mrpf},
        {"report", "Emit MRS table and sparsity CSVs for a run", cmd_report},
    };

    std::map<std::string, int (*)(const CliOptions&)> dispatch;
    for (const SubEntry& entry : entries) {
        CLI::App* sub = app.add_subcommand(entry.name, entry.help);
        sub->add_option("--config", opt.config_path, "JSON config file");
        sub->add_option("--run", opt.run_dir, "run directory (default: run)");
        sub->add_option("--seed", seed_value, "override the config seed");
        sub->add_option("--variant", variant_value, "ratio allocation: inv_mrs|deviation");
        sub->add_option("--loss", loss_value, "fine-tuning loss: trades|mart|pgd_at");
        sub->add_option("--criterion", criterion_value, "importance: magnitude|taylor");
        dispatch[entry.name] = entry.fn;
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help();
        return 2;
    }

    CLI::App* sub = app.get_subcommands().front();
    if (sub->count("--seed")) opt.seed = seed_value;
    if (sub->count("--variant")) opt.variant = variant_value;
    if (sub->count("--loss")) opt.loss = loss_value;
    if (sub->count("--criterion")) opt.criterion = criterion_value;
    try {
        return dispatch.at(sub->get_name())(opt);
    } catch (const mrpf::ConfigError& e) {
        std::cerr << sub->get_name() << ": " << e.what() << "\n";
        return 2;
    } catch (const mrpf::StageError& e) {
        std::cerr << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << sub->get_name() << ": " << e.what() << "\n";
        return 3;
    }
}
