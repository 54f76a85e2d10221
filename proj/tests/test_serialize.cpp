#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "mrpf/serialize.hpp"

using namespace mrpf;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

RunConfig sample_config() {
    RunConfig cfg;
    cfg.seed = 42;
    cfg.batch_size = 64;
    cfg.epochs = 3;
    cfg.momentum = 0.85;
    cfg.lr_kind = LrKind::Step;
    cfg.lr0 = 0.1;
    cfg.lr_floor = 0.001;
    cfg.attack_method = AttackMethod::Apgd;
    cfg.attack.epsilon = 0.1;
    cfg.attack.alpha_step = 0.03;
    cfg.attack.iterations = 7;
    cfg.attack.momentum = 0.7;
    cfg.attack.init_noise = 1e-3;
    cfg.loss.method = LossMethod::Mart;
    cfg.loss.lambda = 5.5;
    cfg.loss.inner_attack.epsilon = 0.05;
    cfg.loss.inner_attack.iterations = 4;
    cfg.mrs.eta = 0.02;
    cfg.mrs.epochs = 2;
    cfg.mrs.epsilon_w = 0.04;
    cfg.mrs.batch_size = 16;
    cfg.ratios.r_g = 0.4;
    cfg.ratios.r_min = 0.05;
    cfg.ratios.r_max = 0.7;
    cfg.ratios.variant = RatioVariant::InvMrs;
    cfg.criterion = "taylor";
    cfg.r_at = 0.3;
    cfg.precision = Precision::F64;
    cfg.arch = {LayerSpec::dense(2, 8), LayerSpec::relu(8), LayerSpec::dense(8, 2)};
    cfg.dataset.kind = DatasetKind::Blobs;
    cfg.dataset.classes = 3;
    cfg.dataset.n_train = 120;
    cfg.dataset.n_test = 30;
    cfg.dataset.noise = 0.07;
    cfg.dataset.seed = 9;
    return cfg;
}

RunRecord sample_record() {
    RunRecord rec;
    rec.config = sample_config();
    rec.original_arch = rec.config.arch;
    rec.pruned_arch = {LayerSpec::dense(2, 5), LayerSpec::relu(5), LayerSpec::dense(5, 2)};
    rec.stage_seeds = {{"generate-ae", 11u}, {"mrs", 22u}, {"finetune", 42u}};
    rec.mrs.l_orig = 0.6931471805599453;
    rec.mrs.entries = {{0, "dense0", 0.75, 0.05682871, 0.031372}};
    rec.plan.layers = {0};
    rec.plan.ratios = {0.4};
    rec.plan.pruned_counts = {3};
    rec.plan.pruned_channels = {{1, 4, 6}};
    rec.plan.clamped = {false};
    rec.plan.provenance = {12345u, "taylor", rec.config.ratios};
    rec.plan.retained_channel_count = 7;
    rec.plan.retained_param_count = 27;
    rec.history = {{1.1, 0.5, 0.25, 0.3}, {0.9, 0.625, 0.41666666666666663, 0.5}};
    rec.final_metrics = {0.625, 0.41666666666666663, 0.5};
    rec.flops_reduction_value = 0.37109375;
    rec.wall_seconds = 1.25;
    return rec;
}

}  // namespace

TEST_CASE("layer spec strings") {
    CHECK(layer_spec_to_string(LayerSpec::dense(3, 7)) == "dense 3 7");
    CHECK(layer_spec_to_string(LayerSpec::conv(1, 4, 3)) == "conv 1 4 3");
    CHECK(layer_spec_to_string(LayerSpec::relu(5)) == "relu 5");
    CHECK(layer_spec_from_string("dense 3 7") == LayerSpec::dense(3, 7));
    CHECK(layer_spec_from_string("conv 1 4 3") == LayerSpec::conv(1, 4, 3));
    CHECK(layer_spec_from_string("relu 5") == LayerSpec::relu(5));
    CHECK_THROWS_AS(layer_spec_from_string("tanh 4"), ConfigError);
    CHECK_THROWS_AS(layer_spec_from_string("dense 3"), ConfigError);
    CHECK_THROWS_WITH_AS(layer_spec_from_string("relu 5 9"), doctest::Contains("trailing"),
                         ConfigError);
}

TEST_CASE("run config json round trip") {
    RunConfig cfg = sample_config();
    CHECK(run_config_from_json(run_config_to_json(cfg)) == cfg);

    SUBCASE("missing keys keep defaults") {
        RunConfig partial = run_config_from_json(nlohmann::json{{"seed", 7}});
        RunConfig expect;
        expect.seed = 7;
        CHECK(partial == expect);
    }

    SUBCASE("unknown keys are rejected") {
        nlohmann::json j = run_config_to_json(cfg);
        j["learning_rate"] = 0.1;
        CHECK_THROWS_WITH_AS(run_config_from_json(j), doctest::Contains("unknown key"), ConfigError);
    }

    SUBCASE("wrong-typed keys are rejected") {
        nlohmann::json j = run_config_to_json(cfg);
        j["epochs"] = "thirty";
        CHECK_THROWS_WITH_AS(run_config_from_json(j), doctest::Contains("epochs"), ConfigError);
    }

    SUBCASE("file loading") {
        TempDir tmp("mrpf_serialize_cfg");
        fs::path p = tmp.path / "config.json";
        std::ofstream(p) << run_config_to_json(cfg).dump(2);
        CHECK(load_run_config(p) == cfg);
        CHECK_THROWS_AS(load_run_config(tmp.path / "absent.json"), IoError);
        std::ofstream(p) << "{ not json";
        CHECK_THROWS_WITH_AS(load_run_config(p), doctest::Contains("not valid JSON"), IoError);
    }
}

TEST_CASE("mrs report and pruning plan round trips preserve exact doubles") {
    RunRecord rec = sample_record();
    CHECK(mrs_report_from_json(mrs_report_to_json(rec.mrs)) == rec.mrs);
    CHECK(pruning_plan_from_json(pruning_plan_to_json(rec.plan)) == rec.plan);
    CHECK(mrs_report_hash(mrs_report_from_json(mrs_report_to_json(rec.mrs))) ==
          mrs_report_hash(rec.mrs));

    MrsReport awkward;
    awkward.l_orig = 0.1 + 0.2;
    awkward.entries = {{0, "dense0", 1.0 / 3.0, 2.0 / 7.0, 1e-300}};
    CHECK(mrs_report_from_json(mrs_report_to_json(awkward)) == awkward);
}

TEST_CASE("run record json round trip") {
    RunRecord rec = sample_record();
    nlohmann::json j = run_record_to_json(rec);
    RunRecord back = run_record_from_json(j);
    CHECK(records_match(rec, back));
    CHECK(back.wall_seconds == rec.wall_seconds);

    j["format_version"] = "2";
    CHECK_THROWS_WITH_AS(run_record_from_json(j), doctest::Contains("format version mismatch"),
                         IoError);
}

TEST_CASE("network checkpoints round trip bit-exactly") {
    TempDir tmp("mrpf_serialize_net");
    for (Precision prec : {Precision::F64, Precision::F32}) {
        Network net = Network::build(
            {LayerSpec::dense(2, 4), LayerSpec::relu(4), LayerSpec::dense(4, 3)}, 77, prec);
        fs::path prefix = tmp.path / (prec == Precision::F64 ? "net64" : "net32");
        save_network(prefix, net);
        Network back = load_network(prefix);
        CHECK(back.specs() == net.specs());
        CHECK(back.precision() == prec);
        for (int i : net.weight_layers()) {
            CHECK(back.weight(i).bit_equal(net.weight(i)));
            CHECK(back.bias(i).bit_equal(net.bias(i)));
        }
    }
}

TEST_CASE("network checkpoint corruption is reported with the offending file") {
    TempDir tmp("mrpf_serialize_corrupt");
    Network net = Network::build({LayerSpec::dense(2, 4), LayerSpec::relu(4), LayerSpec::dense(4, 3)},
                                 78);
    fs::path prefix = tmp.path / "net";
    save_network(prefix, net);
    fs::path bin = tmp.path / "net.bin";

    SUBCASE("truncated payload") {
        fs::resize_file(bin, fs::file_size(bin) / 2);
        CHECK_THROWS_WITH_AS(load_network(prefix), doctest::Contains("net.bin"), IoError);
    }

    SUBCASE("trailing bytes") {
        std::ofstream(bin, std::ios::binary | std::ios::app) << 'x';
        CHECK_THROWS_WITH_AS(load_network(prefix), doctest::Contains("trailing bytes"), IoError);
    }

    SUBCASE("missing payload") {
        fs::remove(bin);
        CHECK_THROWS_WITH_AS(load_network(prefix), doctest::Contains("cannot open"), IoError);
    }

    SUBCASE("header version bump") {
        nlohmann::json header;
        std::ifstream(tmp.path / "net.json") >> header;
        header["format_version"] = "0";
        std::ofstream(tmp.path / "net.json") << header.dump(2);
        CHECK_THROWS_WITH_AS(load_network(prefix), doctest::Contains("format version mismatch"),
                             IoError);
    }
}

TEST_CASE("run directories persist and load completely") {
    TempDir tmp("mrpf_serialize_run");
    RunRecord rec = sample_record();
    Network original = Network::build(rec.original_arch, 81);
    Network pruned = Network::build(rec.pruned_arch, 82);
    Network final_net = Network::build(rec.pruned_arch, 83);

    persist_run(tmp.path / "run", rec, &original, &pruned, &final_net);
    LoadedRun loaded = load_run(tmp.path / "run");
    CHECK(records_match(loaded.record, rec));
    CHECK(loaded.original.specs() == original.specs());
    CHECK(loaded.pruned.specs() == pruned.specs());
    for (int i : final_net.weight_layers())
        CHECK(loaded.final_net.weight(i).bit_equal(final_net.weight(i)));

    SUBCASE("partial directories refuse a full load but expose the record") {
        persist_run(tmp.path / "partial", rec, &original, nullptr, nullptr);
        CHECK_THROWS_WITH_AS(load_run(tmp.path / "partial"), doctest::Contains("incomplete"),
                             IoError);
        RunRecord back = load_run_record(tmp.path / "partial");
        CHECK(records_match(back, rec));
    }

    SUBCASE("a missing directory is an io error") {
        CHECK_THROWS_AS(load_run(tmp.path / "absent"), IoError);
    }
}

TEST_CASE("adversarial sets round trip") {
    TempDir tmp("mrpf_serialize_ae");
    AdversarialSet set;
    set.inputs = Tensor::from_data({3, 2}, {0.1, 0.9, 0.5, 0.5, 0.25, 0.75});
    set.perturbations = Tensor::from_data({3, 2}, {0.01, -0.01, 0.0, 0.02, -0.02, 0.0});
    set.labels = {0, 1, 0};
    set.classes = 2;
    save_adversarial_set(tmp.path / "ae", set);
    AdversarialSet back = load_adversarial_set(tmp.path / "ae");
    CHECK(back.inputs.bit_equal(set.inputs));
    CHECK(back.perturbations.bit_equal(set.perturbations));
    CHECK(back.labels == set.labels);
    CHECK(back.classes == set.classes);

    SUBCASE("manifest version mismatch") {
        nlohmann::json j;
        std::ifstream(tmp.path / "ae" / "ae.json") >> j;
        j["format_version"] = "9";
        std::ofstream(tmp.path / "ae" / "ae.json") << j.dump(2);
        CHECK_THROWS_WITH_AS(load_adversarial_set(tmp.path / "ae"),
                             doctest::Contains("format version mismatch"), IoError);
    }
}
