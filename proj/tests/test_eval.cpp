#include "clothdyn/evalsuite.hpp"

#include "test_helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace clothdyn;
using namespace clothdyn::evalsuite;
using clothdyn::model::ModelConfig;
using clothdyn::model::Variant;

namespace {

struct Fixture {
    train::Dataset ds = testing::make_synthetic_dataset(5, 4, 6, 909);
    train::Split split{{0, 1, 2}, {3}, {4}};
    graph::NormStats stats = train::fit_norm_stats(ds, {0, 1, 2});
    train::NormalizedData nd = train::normalize_dataset(ds, stats);
};

}  // namespace

TEST_CASE("report statistics are recomputable from the per-sample list") {
    std::vector<std::pair<int, double>> vals{{0, 1.0}, {1, 3.0}, {2, 5.0}};
    MetricReport r = finalize_report("state", "edonet", "bandage", 5, vals, "h");
    CHECK(std::abs(r.mean - 3.0) < 1e-12);
    CHECK(std::abs(r.stddev - 2.0) < 1e-12);  // sample std of {1,3,5}
    double mean = 0.0;
    for (auto& [id, v] : r.per_sample) mean += v;
    mean /= r.per_sample.size();
    CHECK(std::abs(mean - r.mean) < 1e-12);
    MetricReport single = finalize_report("state", "edonet", "bandage", 5, {{0, 2.5}}, "h");
    CHECK(single.stddev == 0.0);
}

TEST_CASE("harness self-test: ground-truth lookup predictors give zero error") {
    Fixture f;
    MetricReport state = eval_state_prediction_with(
        [](const train::NormalizedData::Rec& rec) { return Mat(rec.delta); }, f.nd,
        f.split.test, graph::Env::Bandage, "state", "lookup", "h");
    CHECK(state.mean == 0.0);

    MetricReport inverse = eval_inverse_with(
        [](const train::NormalizedData::Rec& rec) { return rec.action_norm; }, f.nd,
        f.split.test, graph::Env::Bandage, "lookup", "h");
    CHECK(inverse.mean == 0.0);
}

TEST_CASE("action selection recovers model-generated goals exactly") {
    Fixture f;
    ModelConfig mc;
    mc.variant = Variant::Edonet;
    mc.obs_frames = 2;
    ad::ParamStore store(42);
    train::ModelBundle bundle = train::ModelBundle::ensure(store, mc);
    train::BatchBuilder builder(f.nd, graph::Env::Bandage, bundle);

    std::vector<double> grid_raw = sim::action_grid(1.0, 12);
    std::vector<double> grid_norm(grid_raw.size());
    for (std::size_t k = 0; k < grid_raw.size(); ++k)
        grid_norm[k] = graph::normalize(grid_raw[k], f.stats.env[0].action);

    int rec_idx = f.nd.rec_by_env[0][2];
    ad::Tape t;
    t.bind(store);
    Mat all = t.value(builder.predict_with_actions(t, rec_idx, grid_norm));
    for (int k : {0, 4, 11}) {
        Mat goal = all.middleRows(static_cast<Eigen::Index>(k) * 64, 64);
        double a_star = select_action(store, builder, f.nd.recs[rec_idx], goal, grid_raw, grid_norm);
        CHECK(a_star == grid_raw[k]);
    }
}

TEST_CASE("action selection ties resolve toward the smallest action") {
    Fixture f;
    ModelConfig mc;
    mc.variant = Variant::Nc;
    ad::ParamStore store(43);
    train::ModelBundle bundle = train::ModelBundle::ensure(store, mc);
    for (const std::string& name : store.names_sorted())
        if (name.rfind("dyn/dec", 0) == 0) store.slot(name).value.setZero();
    train::BatchBuilder builder(f.nd, graph::Env::Bandage, bundle);
    std::vector<double> grid_raw = sim::action_grid(1.0, 5);
    std::vector<double> grid_norm(5, 0.0);
    for (std::size_t k = 0; k < 5; ++k)
        grid_norm[k] = graph::normalize(grid_raw[k], f.stats.env[0].action);
    int rec_idx = f.nd.rec_by_env[0][0];
    Mat goal = Mat::Ones(64, 3);  // every candidate predicts zero: all errors tie
    double a_star = select_action(store, builder, f.nd.recs[rec_idx], goal, grid_raw, grid_norm);
    CHECK(a_star == grid_raw[0]);
}

TEST_CASE("report csv round-trips and rejects duplicates") {
    std::string path = "/tmp/clothdyn_test_report.csv";
    std::vector<MetricReport> rs;
    rs.push_back(finalize_report("state", "edonet", "bandage", 5, {{0, 0.125}, {1, 0.5}}, "abc"));
    rs.push_back(finalize_report("state", "nc", "bandage", 5, {{0, 2.0}, {1, 4.0}}, "abc"));
    write_reports_csv(path, rs);
    std::vector<MetricReport> back = read_reports_csv(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].variant == "edonet");
    CHECK(back[0].mean == rs[0].mean);
    CHECK(back[0].stddev == rs[0].stddev);
    CHECK(back[1].per_sample.size() == 2);

    rs.push_back(finalize_report("state", "nc", "bandage", 5, {{0, 1.0}}, "abc"));
    CHECK_THROWS_AS(write_reports_csv(path, rs), DataError);

    std::ofstream bad("/tmp/clothdyn_bad.csv");
    bad << "not,a,report\n";
    bad.close();
    CHECK_THROWS_AS(read_reports_csv("/tmp/clothdyn_bad.csv"), DataError);
}

TEST_CASE("per-sample dumps and decode plot data are written") {
    MetricReport r = finalize_report("state", "edonet", "lifting", 5, {{3, 0.25}}, "h");
    write_per_sample_dump("/tmp/clothdyn_dump.dat", r);
    std::ifstream is("/tmp/clothdyn_dump.dat");
    std::string line;
    std::getline(is, line);
    CHECK(line.find("edonet") != std::string::npos);
    std::getline(is, line);
    CHECK(line == "3 0.25");

    DecodeResult dr;
    dr.variant = "edonet";
    dr.t_values = {1, 5};
    dr.seen_mse = {0.5, 0.25};
    dr.unseen_mse = {0.8, 0.4};
    write_decode_plot_data("/tmp/clothdyn_plot", dr);
    std::ifstream ps("/tmp/clothdyn_plot/decode_edonet.dat");
    REQUIRE(ps.good());
    std::getline(ps, line);  // comment
    std::getline(ps, line);
    CHECK(line.rfind("1 0.8", 0) == 0);
}

TEST_CASE("transfer freezes adaptation and rejects variants without one") {
    Fixture f;
    train::TrainConfig cfg;
    cfg.model.variant = Variant::Edonet;
    cfg.model.obs_frames = 2;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    train::TrainResult source = train::train_model(f.ds, f.split, graph::Env::Bandage, cfg);
    TransferResult tr = transfer_bandage2lifting(source.store, f.ds, f.split, cfg, "h");
    CHECK(tr.adaptation_bits_identical);
    CHECK(tr.report.experiment == "transfer");
    CHECK(tr.report.per_sample.size() == f.split.test.size());

    train::TrainConfig nc_cfg = cfg;
    nc_cfg.model.variant = Variant::Nc;
    train::TrainResult nc = train::train_model(f.ds, f.split, graph::Env::Bandage, nc_cfg);
    CHECK_THROWS_AS(transfer_bandage2lifting(nc.store, f.ds, f.split, cfg, "h"), DataError);
}

TEST_CASE("inverse training runs for conditioned, oracle and nc variants") {
    Fixture f;
    train::TrainConfig cfg;
    cfg.model.variant = Variant::Edonet;
    cfg.model.obs_frames = 2;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    train::TrainResult source = train::train_model(f.ds, f.split, graph::Env::Bandage, cfg);

    InverseResult cond = train_eval_inverse(&source.store, Variant::Edonet, f.ds, f.split,
                                            graph::Env::Bandage, 2, cfg, "h");
    CHECK(cond.report.per_sample.size() == 1);
    CHECK(cond.report.variant == "edonet");
    InverseResult nc =
        train_eval_inverse(nullptr, Variant::Nc, f.ds, f.split, graph::Env::Bandage, 2, cfg, "h");
    CHECK(nc.report.variant == "nc");
    InverseResult oi =
        train_eval_inverse(nullptr, Variant::Oi, f.ds, f.split, graph::Env::Bandage, 2, cfg, "h");
    CHECK(oi.report.variant == "oi");
    CHECK_THROWS_AS(train_eval_inverse(nullptr, Variant::Edonet, f.ds, f.split,
                                       graph::Env::Bandage, 2, cfg, "h"),
                    UsageError);
}

TEST_CASE("decode sweep returns one entry per T") {
    Fixture f;
    train::TrainConfig cfg;
    cfg.model.variant = Variant::Edonet;
    cfg.model.obs_frames = 2;
    cfg.epochs = 1;
    cfg.batch_size = 8;
    train::TrainResult source = train::train_model(f.ds, f.split, graph::Env::Bandage, cfg);
    DecodeResult dr = decode_params(source.store, f.ds, f.split, {1, 3}, 50, 3);
    CHECK(dr.t_values == std::vector<int>{1, 3});
    CHECK(dr.seen_mse.size() == 2);
    CHECK(dr.unseen_mse.size() == 2);
    CHECK(dr.unseen_per_sample[0].size() == 2);  // val + test samples
    for (double v : dr.seen_mse) CHECK(std::isfinite(v));
}
