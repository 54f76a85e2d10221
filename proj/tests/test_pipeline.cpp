#include <doctest.h>

#include <cmath>
#include <vector>

#include "mrpf/pipeline.hpp"

using namespace mrpf;

namespace {

RunConfig tiny_config() {
    RunConfig cfg;
    cfg.seed = 5;
    cfg.batch_size = 32;
    cfg.epochs = 2;
    cfg.lr_kind = LrKind::Cosine;
    cfg.lr0 = 0.05;
    cfg.lr_floor = 1e-4;
    cfg.attack.epsilon = 0.1;
    cfg.attack.alpha_step = 0.05;
    cfg.attack.iterations = 3;
    cfg.loss.lambda = 1.0;
    cfg.loss.inner_attack.epsilon = 0.1;
    cfg.loss.inner_attack.alpha_step = 0.05;
    cfg.loss.inner_attack.iterations = 2;
    cfg.mrs.eta = 0.05;
    cfg.mrs.batch_size = 32;
    cfg.ratios.r_g = 0.5;
    cfg.r_at = 0.25;
    cfg.arch = {LayerSpec::dense(2, 8), LayerSpec::relu(8), LayerSpec::dense(8, 8),
                LayerSpec::relu(8), LayerSpec::dense(8, 2)};
    cfg.dataset.kind = DatasetKind::Blobs;
    cfg.dataset.n_train = 64;
    cfg.dataset.n_test = 32;
    cfg.dataset.noise = 0.05;
    return cfg;
}

SyntheticData tiny_data() {
    DatasetSpec spec;
    spec.kind = DatasetKind::Blobs;
    spec.classes = 2;
    spec.n_train = 64;
    spec.n_test = 32;
    spec.dims = 2;
    spec.noise = 0.05;
    spec.seed = 3;
    return make_synthetic_dataset(spec);
}

}  // namespace

TEST_CASE("lr schedules") {
    CHECK(lr_schedule(LrKind::Step, 0, 40, 0.1, 0.0) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(lr_schedule(LrKind::Step, 9, 40, 0.1, 0.0) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(lr_schedule(LrKind::Step, 10, 40, 0.1, 0.0) == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(lr_schedule(LrKind::Step, 25, 40, 0.1, 0.0) == doctest::Approx(0.001).epsilon(1e-12));

    CHECK(lr_schedule(LrKind::Cosine, 0, 30, 0.02, 1e-4) == doctest::Approx(0.02).epsilon(1e-12));
    CHECK(lr_schedule(LrKind::Cosine, 15, 30, 0.02, 1e-4) == doctest::Approx(0.01005).epsilon(1e-9));
    CHECK(lr_schedule(LrKind::Cosine, 29, 30, 0.02, 1e-4) > 1e-4);
    double prev = lr_schedule(LrKind::Cosine, 0, 30, 0.02, 1e-4);
    for (int e = 1; e < 30; ++e) {
        double cur = lr_schedule(LrKind::Cosine, e, 30, 0.02, 1e-4);
        CHECK(cur < prev);
        CHECK(cur >= 1e-4);
        prev = cur;
    }

    CHECK_THROWS_AS(lr_schedule(LrKind::Step, 0, 0, 0.1, 0.0), ValueError);
    CHECK_THROWS_AS(lr_schedule(LrKind::Step, 30, 30, 0.1, 0.0), ValueError);
    CHECK_THROWS_AS(lr_schedule(LrKind::Step, -1, 30, 0.1, 0.0), ValueError);
    CHECK_THROWS_AS(lr_schedule(LrKind::Cosine, 0, 30, 0.02, 0.03), ValueError);
    CHECK_THROWS_AS(lr_schedule(LrKind::Step, 0, 30, 0.0, 0.0), ValueError);

    CHECK(lr_kind_from_name("step") == LrKind::Step);
    CHECK(lr_kind_from_name("cosine") == LrKind::Cosine);
    CHECK_THROWS_AS(lr_kind_from_name("linear"), ConfigError);
}

TEST_CASE("sgd with momentum follows the velocity recurrence") {
    ExprGraph::Bindings params;
    params["w0"] = Tensor::from_data({1}, {0.0});
    GradMap grads;
    grads["w0"] = Tensor::from_data({1}, {1.0});
    SgdState state;

    sgd_momentum_step(params, grads, state, 1.0, 0.9);
    CHECK(params["w0"][0] == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(state.velocity["w0"][0] == doctest::Approx(1.0).epsilon(1e-12));

    sgd_momentum_step(params, grads, state, 1.0, 0.9);
    CHECK(state.velocity["w0"][0] == doctest::Approx(1.9).epsilon(1e-12));
    CHECK(params["w0"][0] == doctest::Approx(-2.9).epsilon(1e-12));

    SUBCASE("zero momentum is plain sgd") {
        ExprGraph::Bindings p2;
        p2["w0"] = Tensor::from_data({2}, {1.0, 2.0});
        GradMap g2;
        g2["w0"] = Tensor::from_data({2}, {0.5, -0.5});
        SgdState s2;
        sgd_momentum_step(p2, g2, s2, 0.1, 0.0);
        CHECK(p2["w0"][0] == doctest::Approx(0.95).epsilon(1e-12));
        CHECK(p2["w0"][1] == doctest::Approx(2.05).epsilon(1e-12));
    }

    SUBCASE("validation") {
        GradMap stray;
        stray["nope"] = Tensor::from_data({1}, {1.0});
        CHECK_THROWS_AS(sgd_momentum_step(params, stray, state, 0.1, 0.9), ValueError);
        GradMap bad;
        bad["w0"] = Tensor::from_data({2}, {1.0, 1.0});
        CHECK_THROWS_AS(sgd_momentum_step(params, bad, state, 0.1, 0.9), ShapeError);
        CHECK_THROWS_AS(sgd_momentum_step(params, grads, state, 0.1, 1.0), ValueError);
    }
}

TEST_CASE("run config validation") {
    RunConfig cfg = tiny_config();
    CHECK_NOTHROW(cfg.validate());
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.epochs = -1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.momentum = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.lr_floor = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.r_at = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.criterion = "random";
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("metrics on a margin classifier") {
    Network net = Network::from_parts({LayerSpec::dense(2, 2)},
                                      {Tensor::from_data({2, 2}, {-1.0, 0.0, 1.0, 0.0})},
                                      {Tensor::from_data({2}, {0.5, -0.5})}, Precision::F64);
    Dataset test{Tensor::from_data({4, 2}, {0.1, 0.5, 0.15, 0.3, 0.9, 0.5, 0.85, 0.7}),
                 {0, 0, 1, 1}, 2};

    AttackConfig small;
    small.epsilon = 0.1;
    small.alpha_step = 0.05;
    small.iterations = 5;
    Metrics m = evaluate_metrics(net, test, small);
    CHECK(m.sacc == 1.0);
    CHECK(m.adv_pgd == 1.0);
    CHECK(m.adv_fgsm == 1.0);

    AttackConfig big = small;
    big.epsilon = 0.45;
    big.alpha_step = 0.2;
    Metrics worst = evaluate_metrics(net, test, big);
    CHECK(worst.sacc == 1.0);
    CHECK(worst.adv_pgd == 0.0);
    CHECK(worst.adv_fgsm == 0.0);

    Dataset empty{Tensor(), {}, 2};
    CHECK_THROWS_AS(evaluate_metrics(net, empty, small), ValueError);
}

TEST_CASE("finetune basics") {
    SyntheticData data = tiny_data();
    Network net = Network::build({LayerSpec::dense(2, 8), LayerSpec::relu(8), LayerSpec::dense(8, 2)},
                                 7);
    RunConfig cfg = tiny_config();
    cfg.arch.clear();

    SUBCASE("zero epochs leave the network untouched") {
        RunConfig frozen = cfg;
        frozen.epochs = 0;
        FinetuneResult out = finetune(net, data.train, data.test, frozen);
        CHECK(out.history.empty());
        for (int i : net.weight_layers()) {
            CHECK(out.net.weight(i).bit_equal(net.weight(i)));
            CHECK(out.net.bias(i).bit_equal(net.bias(i)));
        }
    }

    SUBCASE("an augmentation fraction too small to sample is exactly no augmentation") {
        RunConfig none = cfg;
        none.epochs = 1;
        none.r_at = 0.0;
        RunConfig tiny_frac = none;
        tiny_frac.r_at = 1e-9;
        FinetuneResult a = finetune(net, data.train, data.test, none);
        FinetuneResult b = finetune(net, data.train, data.test, tiny_frac);
        for (int i : net.weight_layers()) CHECK(a.net.weight(i).bit_equal(b.net.weight(i)));
        CHECK(a.history == b.history);
    }

    SUBCASE("augmentation changes the optimization path") {
        RunConfig with = cfg;
        with.epochs = 1;
        RunConfig without = with;
        without.r_at = 0.0;
        FinetuneResult a = finetune(net, data.train, data.test, with);
        FinetuneResult b = finetune(net, data.train, data.test, without);
        CHECK_FALSE(a.net.weight(0).bit_equal(b.net.weight(0)));
    }

    SUBCASE("determinism") {
        FinetuneResult a = finetune(net, data.train, data.test, cfg);
        FinetuneResult b = finetune(net, data.train, data.test, cfg);
        CHECK(a.history == b.history);
        for (int i : net.weight_layers()) CHECK(a.net.weight(i).bit_equal(b.net.weight(i)));
    }

    SUBCASE("clean training descends") {
        RunConfig clean = cfg;
        clean.epochs = 10;
        clean.r_at = 0.0;
        clean.loss.lambda = 0.0;
        clean.lr0 = 0.2;
        FinetuneResult out = finetune(net, data.train, data.test, clean);
        REQUIRE(out.history.size() == 10);
        CHECK(out.history.back().train_loss < out.history.front().train_loss);
        CHECK(out.history.back().sacc >= 0.9);
    }

    SUBCASE("empty training set rejected") {
        Dataset empty{Tensor(), {}, 2};
        CHECK_THROWS_AS(finetune(net, empty, data.test, cfg), ValueError);
    }
}

TEST_CASE("the full pipeline produces a coherent record") {
    SyntheticData data = tiny_data();
    RunConfig cfg = tiny_config();
    Network net = Network::build(cfg.arch, derive_seed(cfg.seed, "net-init"));

    RunRecord partial;
    MrpfResult run = mrpf_run(net, data.train, data.test, cfg, &partial);
    const RunRecord& rec = run.record;

    CHECK(rec.config == cfg);
    CHECK(rec.original_arch == cfg.arch);
    CHECK(rec.pruned_arch == run.net.specs());
    CHECK(records_match(rec, partial));

    REQUIRE(rec.stage_seeds.count("generate-ae") == 1);
    REQUIRE(rec.stage_seeds.count("mrs") == 1);
    REQUIRE(rec.stage_seeds.count("finetune") == 1);
    CHECK(rec.stage_seeds.at("generate-ae") == derive_seed(cfg.seed, "ae"));
    CHECK(rec.stage_seeds.at("mrs") == derive_seed(cfg.seed, "mrs"));
    CHECK(rec.stage_seeds.at("finetune") == cfg.seed);

    REQUIRE(rec.mrs.entries.size() == 2);
    REQUIRE(rec.plan.layers == std::vector<int>{0, 2});
    for (size_t li = 0; li < rec.plan.layers.size(); ++li) {
        int layer = rec.plan.layers[li];
        int64_t k = cfg.arch[static_cast<size_t>(layer)].out_channels;
        int64_t expect = static_cast<int64_t>(std::floor(rec.plan.ratios[li] * static_cast<double>(k)));
        if (expect >= k) expect = k - 1;
        CHECK(rec.plan.pruned_counts[li] == expect);
        CHECK(rec.pruned_arch[static_cast<size_t>(layer)].out_channels == k - expect);
    }
    CHECK(rec.pruned_arch[2].in_channels == rec.pruned_arch[0].out_channels);
    CHECK(rec.pruned_arch[4].in_channels == rec.pruned_arch[2].out_channels);
    CHECK(rec.plan.provenance.report_hash == mrs_report_hash(rec.mrs));
    CHECK(rec.plan.provenance.criterion == "magnitude");

    CHECK(rec.history.size() == 2);
    CHECK(rec.final_metrics.sacc == rec.history.back().sacc);
    CHECK(rec.final_metrics.adv_pgd == rec.history.back().adv_pgd);
    CHECK(rec.flops_reduction_value > 0.0);
    CHECK(rec.flops_reduction_value < 1.0);
    CHECK(rec.wall_seconds > 0.0);
    CHECK(rec.input_h == 0);

    SUBCASE("bit-identical reruns") {
        MrpfResult again = mrpf_run(net, data.train, data.test, cfg);
        CHECK(records_match(rec, again.record));
        for (int i : run.net.weight_layers())
            CHECK(run.net.weight(i).bit_equal(again.net.weight(i)));

        RunRecord slow = again.record;
        slow.wall_seconds = rec.wall_seconds + 100.0;
        CHECK(records_match(rec, slow));
        slow.final_metrics.sacc += 0.5;
        CHECK_FALSE(records_match(rec, slow));
    }

    SUBCASE("taylor criterion records its provenance") {
        RunConfig tcfg = cfg;
        tcfg.epochs = 0;
        tcfg.criterion = "taylor";
        MrpfResult trun = mrpf_run(net, data.train, data.test, tcfg);
        CHECK(trun.record.plan.provenance.criterion == "taylor");
        CHECK(trun.record.history.empty());
        CHECK(trun.record.final_metrics.sacc >= 0.0);
    }
}

TEST_CASE("a zero global ratio is a null pruning") {
    SyntheticData data = tiny_data();
    RunConfig cfg = tiny_config();
    cfg.epochs = 1;
    cfg.ratios.r_g = 0.0;
    cfg.ratios.r_min = 0.0;
    Network net = Network::build(cfg.arch, 11);
    MrpfResult run = mrpf_run(net, data.train, data.test, cfg);
    CHECK(run.record.pruned_arch == cfg.arch);
    CHECK(run.record.flops_reduction_value == 0.0);
    for (int64_t c : run.record.plan.pruned_counts) CHECK(c == 0);
    CHECK(run.net.parameter_count() == net.parameter_count());
}

TEST_CASE("stage failures carry the stage name and a usable partial record") {
    RunConfig cfg = tiny_config();
    Network net = Network::build(cfg.arch, 13);
    Dataset empty{Tensor(), {}, 2};
    Dataset eval_set = tiny_data().test;

    RunRecord partial;
    try {
        mrpf_run(net, empty, eval_set, cfg, &partial);
        FAIL("expected a stage error");
    } catch (const StageError& e) {
        CHECK(e.stage() == "generate-ae");
        CHECK(std::string(e.what()).find("generate-ae") != std::string::npos);
    }
    CHECK(partial.config == cfg);
    CHECK(partial.original_arch == cfg.arch);
    CHECK(partial.mrs.entries.empty());
    CHECK(partial.history.empty());

    SUBCASE("conv networks demand image-shaped inputs") {
        std::vector<LayerSpec> conv_arch{LayerSpec::conv(1, 4, 3), LayerSpec::relu(4),
                                         LayerSpec::conv(4, 2, 3), LayerSpec::dense(2, 2)};
        Network conv_net = Network::build(conv_arch, 15);
        SyntheticData flat = tiny_data();
        CHECK_THROWS_WITH_AS(mrpf_run(conv_net, flat.train, flat.test, cfg),
                             doctest::Contains("rank-4"), StageError);
    }
}
