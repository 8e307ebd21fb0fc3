#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include <json.hpp>

#include "sftik/optim.hpp"
#include "sftik/train.hpp"
#include "testutil.hpp"

using namespace sftik;

namespace {

// Model sized for full-scale inputs (224 images, 100-sample series) but with a
// desk-scale width and depth.
ModelConfig small_model() {
    ModelConfig cfg;
    cfg.d_emb = 16;
    cfg.n1 = 1;
    cfg.n2 = 1;
    cfg.heads = 2;
    cfg.mlp_ratio = 2;
    cfg.image_size = 224;
    cfg.patch_kernel = 56;
    cfg.imu_channels = 19;
    cfg.series_len = 100;
    cfg.imu_patch_len = 20;
    cfg.imu_patch_stride = 20;
    cfg.out_len = 100;
    return cfg;
}

StrideDataset small_synth(const std::filesystem::path& dir, int64_t subjects, int64_t strides, uint64_t seed) {
    SyntheticSpec spec;
    spec.n_subjects = subjects;
    spec.strides_per_subject = strides;
    spec.seed = seed;
    return generate_synthetic(spec, dir);
}

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::vector<nlohmann::json> lines;
    for (std::string line; std::getline(in, line);) {
        if (!line.empty()) lines.push_back(nlohmann::json::parse(line));
    }
    return lines;
}

// Dataset of hand-placed tensors whose target equals the previous stride's
// angle channel, so the copy-previous baseline is exact on it.
StrideDataset copyable_dataset(const std::filesystem::path& root) {
    StrideDataset ds = StrideDataset::create(root);
    Rng rng(31);
    for (int64_t j = 0; j < 3; ++j) {
        Tensor<float> K = testutil::random_tensor<float>(rng, {4, 6});
        std::vector<float> last(K.data().begin() + 18, K.data().begin() + 24);
        IndexRecord rec;
        rec.subject = 0;
        rec.terrain = Terrain::LW;
        rec.prev_terrain = j == 2 ? Terrain::SA : Terrain::LW;
        rec.side = Side::left;
        rec.stride_id = j + 1;
        rec.k_path = ds.put_blob("k" + std::to_string(j) + ".bin", K);
        rec.i_prev_path = ds.put_blob("p" + std::to_string(j) + ".bin", Tensor<float>::zeros({1, 2, 2}));
        rec.i_cur_path = ds.put_blob("c" + std::to_string(j) + ".bin", Tensor<float>::zeros({1, 2, 2}));
        rec.a_path = ds.put_blob("a" + std::to_string(j) + ".bin", Tensor<float>::from_vector({6}, std::move(last)));
        ds.append(rec);
    }
    ds.write_index();
    return ds;
}

}  // namespace

TEST_CASE("error metrics on hand-computable series") {
    std::vector<double> zeros = {0.0, 0.0}, off = {3.0, 4.0};
    CHECK(rmse<double>(zeros, zeros) == 0.0);
    CHECK(rmse<double>(zeros, off) == doctest::Approx(std::sqrt(12.5)).epsilon(1e-15));

    std::vector<double> x = {1.0, 2.0, 4.0, 8.0};
    std::vector<double> up(4), down(4);
    for (size_t i = 0; i < 4; ++i) {
        up[i] = 2.0 * x[i] + 1.0;
        down[i] = -0.5 * x[i] + 3.0;
    }
    CHECK(pcc<double>(x, up).value() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(pcc<double>(x, down).value() == doctest::Approx(-1.0).epsilon(1e-12));

    std::vector<double> flat = {2.0, 2.0, 2.0, 2.0};
    CHECK_FALSE(pcc<double>(flat, x).has_value());
    CHECK_FALSE(pcc<double>(x, flat).has_value());

    std::vector<double> three = {1.0, 2.0, 3.0};
    CHECK_THROWS_AS(rmse<double>(zeros, three), ShapeError);
    CHECK_THROWS_AS(pcc<double>(zeros, three), ShapeError);
    std::vector<double> empty;
    CHECK_THROWS_AS(rmse<double>(empty, empty), ContractError);
    CHECK_THROWS_AS(pcc<double>(empty, empty), ContractError);
}

TEST_CASE("metrics agree with the reference formulas on random series") {
    Rng rng(41);
    for (int rep = 0; rep < 100; ++rep) {
        const size_t n = 4 + static_cast<size_t>(rng.uniform_int(0, 46));
        std::vector<double> p = testutil::random_vec(rng, n, -5.0, 5.0);
        std::vector<double> t = testutil::random_vec(rng, n, -5.0, 5.0);
        CHECK(rmse<double>(p, t) == doctest::Approx(testutil::oracle::rmse(p, t)).epsilon(1e-12));
        CHECK(pcc<double>(p, t).value() == doctest::Approx(testutil::oracle::pcc(p, t)).epsilon(1e-12));
    }
}

TEST_CASE("report aggregation is order-invariant and counts exclusions") {
    MetricsReport r;
    auto add = [&](Terrain t, Terrain prev, double rm, std::optional<double> pc) {
        StrideMetric m;
        m.sample_index = r.strides.size();
        m.terrain = t;
        m.prev_terrain = prev;
        m.transition = t != prev;
        m.rmse = rm;
        m.pcc = pc;
        r.strides.push_back(m);
    };
    add(Terrain::LW, Terrain::LW, 1.0, 0.8);
    add(Terrain::LW, Terrain::SA, 3.0, 0.9);
    add(Terrain::SA, Terrain::SA, 5.0, std::nullopt);
    aggregate_report(r);

    CHECK(r.overall.count == 3);
    CHECK(r.overall.rmse.mean == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(r.overall.rmse.stddev == doctest::Approx(std::sqrt(8.0 / 3.0)).epsilon(1e-12));
    CHECK(r.overall.pcc.count == 2);
    CHECK(r.overall.pcc.mean == doctest::Approx(0.85).epsilon(1e-15));
    CHECK(r.overall.pcc_excluded == 1);

    REQUIRE(r.per_terrain.count("LW") == 1);
    REQUIRE(r.per_terrain.count("SA") == 1);
    CHECK(r.per_terrain.count("RA") == 0);
    CHECK(r.per_terrain.at("LW").count == 2);
    CHECK(r.per_terrain.at("LW").rmse.mean == doctest::Approx(2.0));
    CHECK(r.per_terrain.at("LW").rmse.stddev == doctest::Approx(1.0));
    CHECK(r.per_terrain.at("SA").rmse.stddev == 0.0);

    CHECK(r.transition.count == 1);
    CHECK(r.transition.rmse.mean == doctest::Approx(3.0));
    CHECK(r.steady.count == 2);
    CHECK(r.steady.rmse.mean == doctest::Approx(3.0));

    MetricsReport shuffled;
    shuffled.strides = {r.strides[2], r.strides[0], r.strides[1]};
    aggregate_report(shuffled);
    CHECK(shuffled.overall.rmse.mean == r.overall.rmse.mean);
    CHECK(shuffled.overall.rmse.stddev == r.overall.rmse.stddev);
    CHECK(shuffled.per_terrain.at("LW").rmse.mean == r.per_terrain.at("LW").rmse.mean);
    CHECK(shuffled.transition.count == 1);
}

TEST_CASE("reports serialize to json and csv with the expected layout") {
    MetricsReport r;
    StrideMetric m;
    m.sample_index = 7;
    m.subject = 2;
    m.terrain = Terrain::RA;
    m.prev_terrain = Terrain::LW;
    m.transition = true;
    m.rmse = 4.25;
    m.pcc = std::nullopt;
    r.strides.push_back(m);
    m.sample_index = 8;
    m.terrain = Terrain::LW;
    m.prev_terrain = Terrain::LW;
    m.transition = false;
    m.rmse = 1.75;
    m.pcc = 0.5;
    r.strides.push_back(m);
    aggregate_report(r);
    r.flops_g = 3.25;
    r.params = 12345;

    nlohmann::json j = report_to_json(r);
    CHECK(j["flops_g"].get<double>() == 3.25);
    CHECK(j["params"].get<int64_t>() == 12345);
    CHECK(j["overall"]["count"].get<int64_t>() == 2);
    CHECK(j["overall"]["rmse_mean"].get<double>() == doctest::Approx(3.0));
    CHECK(j["overall"]["pcc_excluded"].get<int64_t>() == 1);
    CHECK(j["transition"]["count"].get<int64_t>() == 1);
    CHECK(j["steady"]["count"].get<int64_t>() == 1);
    CHECK(j["per_terrain"]["RA"]["rmse_mean"].get<double>() == 4.25);
    REQUIRE(j["strides"].size() == 2);
    CHECK(j["strides"][0]["sample_index"].get<size_t>() == 7);
    CHECK(j["strides"][0]["terrain"].get<std::string>() == "RA");
    CHECK(j["strides"][0]["prev_terrain"].get<std::string>() == "LW");
    CHECK(j["strides"][0]["transition"].get<bool>() == true);
    CHECK(j["strides"][0]["pcc"].is_null());
    CHECK(j["strides"][1]["pcc"].get<double>() == 0.5);

    testutil::TempDir tmp("report_io");
    write_report_json(tmp.path() / "report.json", j);
    std::ifstream back(tmp.path() / "report.json");
    nlohmann::json reread;
    back >> reread;
    CHECK(reread == j);

    write_report_csv(tmp.path() / "report.csv", r);
    std::ifstream csv(tmp.path() / "report.csv");
    std::vector<std::string> lines;
    for (std::string line; std::getline(csv, line);) lines.push_back(line);
    REQUIRE(lines.size() == 6);  // header + LW + RA + overall + transition + steady
    CHECK(lines[0] == "terrain,rmse_mean,rmse_std,pcc_mean,pcc_std,count");
    CHECK(lines[1].substr(0, 3) == "LW,");
    CHECK(lines[2].substr(0, 3) == "RA,");
    CHECK(lines[3].substr(0, 8) == "overall,");
    CHECK(lines[4].substr(0, 11) == "transition,");
    CHECK(lines[5].substr(0, 7) == "steady,");
    // the RA row carries the stride's exact rmse and an empty-count pcc of 0
    CHECK(lines[2].find("4.25") != std::string::npos);
    CHECK(lines[2].back() == '1');
}

TEST_CASE("the copy-previous baseline repeats the angle channel") {
    StrideSample s;
    s.K = Tensor<float>::from_vector({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor<float> pred = baseline_copy_previous(s);
    REQUIRE(pred.shape() == std::vector<int64_t>({3}));
    CHECK(pred.data()[0] == 4.0f);
    CHECK(pred.data()[1] == 5.0f);
    CHECK(pred.data()[2] == 6.0f);

    StrideSample bad;
    bad.K = Tensor<float>::zeros({4});
    CHECK_THROWS_AS(baseline_copy_previous(bad), ContractError);
}

TEST_CASE("baseline evaluation is exact on a copyable dataset") {
    testutil::TempDir tmp("baseline_eval");
    StrideDataset ds = copyable_dataset(tmp.path() / "ds");
    MetricsReport r = evaluate_baseline(ds, {0, 1, 2});
    CHECK(r.overall.count == 3);
    CHECK(r.overall.rmse.mean == 0.0);
    CHECK(r.overall.rmse.stddev == 0.0);
    CHECK(r.overall.pcc.mean == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.transition.count == 1);  // stride 2 flips terrain
    CHECK(r.steady.count == 2);
    CHECK_THROWS_AS(evaluate_baseline(ds, {}), ContractError);
}

TEST_CASE("model evaluation fills per-stride rows and cost figures") {
    testutil::TempDir tmp("model_eval");
    StrideDataset ds = small_synth(tmp.path() / "ds", 1, 4, 13);
    ModelConfig cfg = small_model();
    ModelParams<float> params = init_params<float>(cfg, 2);

    MetricsReport r = evaluate(cfg, params, ds, {0, 2, 3});
    REQUIRE(r.strides.size() == 3);
    CHECK(r.strides[0].sample_index == 0);
    CHECK(r.strides[1].sample_index == 2);
    double sum = 0.0;
    for (const StrideMetric& m : r.strides) {
        CHECK(std::isfinite(m.rmse));
        CHECK(m.rmse >= 0.0);
        CHECK(m.transition == (m.terrain != m.prev_terrain));
        CHECK(m.subject == 0);
        sum += m.rmse;
    }
    CHECK(r.overall.rmse.mean == doctest::Approx(sum / 3.0).epsilon(1e-15));
    CHECK(r.flops_g == count_flops(cfg).total_gflops());
    CHECK(r.params == count_params(cfg));
    CHECK(r.transition.count + r.steady.count == 3);

    CHECK_THROWS_AS(evaluate(cfg, params, ds, {}), ContractError);
}

TEST_CASE("train config validation") {
    TrainConfig cfg;
    cfg.model = small_model();
    CHECK_NOTHROW(cfg.validate());
    TrainConfig c = cfg;
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = cfg;
    c.epochs = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = cfg;
    c.base_lr = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = cfg;
    c.final_lr = -1e-6;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = cfg;
    c.warmup_steps = -1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = cfg;
    c.model.heads = 5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("checkpoints round-trip bitwise") {
    testutil::TempDir tmp("checkpoint");
    ModelConfig cfg = small_model();
    cfg.fusion = Fusion::late;
    ModelParams<float> params = init_params<float>(cfg, 21);
    save_checkpoint(tmp.path() / "ck", cfg, params, 340, 21);

    Checkpoint ck = load_checkpoint(tmp.path() / "ck");
    CHECK(ck.step == 340);
    CHECK(ck.seed == 21);
    CHECK(ck.model.d_emb == cfg.d_emb);
    CHECK(ck.model.fusion == Fusion::late);
    CHECK(ck.model.patch_kernel == cfg.patch_kernel);
    REQUIRE(ck.params.map.size() == params.map.size());
    for (const auto& [name, t] : params.map) {
        const Tensor<float>& back = ck.params.at(name);
        REQUIRE(back.shape() == t.shape());
        CHECK(std::memcmp(back.data().data(), t.data().data(), sizeof(float) * static_cast<size_t>(t.numel())) == 0);
        CHECK(back.requires_grad());
    }

    CHECK_THROWS_AS(load_checkpoint(tmp.path() / "nowhere"), IoError);
    std::ofstream bad(tmp.path() / "ck/manifest.json", std::ios::trunc);
    bad << "{span";
    bad.close();
    CHECK_THROWS_AS(load_checkpoint(tmp.path() / "ck"), FormatError);
}

TEST_CASE("index selection by subject") {
    testutil::TempDir tmp("subject_sel");
    StrideDataset ds = small_synth(tmp.path() / "ds", 2, 3, 17);
    CHECK(indices_for_subjects(ds, {0}) == std::vector<size_t>({0, 1, 2}));
    CHECK(indices_for_subjects(ds, {1}) == std::vector<size_t>({3, 4, 5}));
    CHECK(indices_for_subjects(ds, {0, 1}).size() == 6);
    CHECK(indices_for_subjects(ds, {7}).empty());
    CHECK(indices_for_subjects(ds, {}).empty());
}

TEST_CASE("training runs the documented loop and reproduces itself") {
    testutil::TempDir tmp("train_loop");
    StrideDataset ds = small_synth(tmp.path() / "ds", 2, 10, 3);
    std::vector<size_t> train_idx = indices_for_subjects(ds, {0});
    std::vector<size_t> val_idx = indices_for_subjects(ds, {1});
    REQUIRE(train_idx.size() == 10);

    TrainConfig cfg;
    cfg.model = small_model();
    cfg.batch_size = 8;
    cfg.epochs = 2;
    cfg.base_lr = 1e-4;
    cfg.warmup_steps = 2;
    cfg.seed = 11;

    TrainResult res = train(cfg, ds, train_idx, val_idx, tmp.path() / "run_a");
    CHECK(res.steps == 4);  // ceil(10/8) = 2 batches, 2 epochs
    CHECK(res.best_epoch >= 0);
    CHECK(res.best_epoch < 2);
    CHECK(std::isfinite(res.best_val_rmse));
    CHECK(std::filesystem::exists(res.checkpoint_dir / "manifest.json"));

    auto lines = read_jsonl(res.log_path);
    REQUIRE(lines.size() == 6);  // 4 batch lines + 2 epoch lines
    const LrSchedule sched{cfg.base_lr, cfg.final_lr, cfg.warmup_steps, 0.2, 4};
    int64_t batch_lines = 0, epoch_lines = 0;
    for (const nlohmann::json& line : lines) {
        if (line.contains("loss")) {
            const int64_t step = line["step"].get<int64_t>();
            CHECK(line["lr"].get<double>() == sched.lr_at(step));
            CHECK(std::isfinite(line["loss"].get<double>()));
            ++batch_lines;
        } else {
            CHECK(std::isfinite(line["val_rmse"].get<double>()));
            ++epoch_lines;
        }
    }
    CHECK(batch_lines == 4);
    CHECK(epoch_lines == 2);

    // best checkpoint reproduces the recorded validation score
    Checkpoint ck = load_checkpoint(res.checkpoint_dir);
    double val_sum = 0.0;
    for (size_t idx : val_idx) {
        StrideSample s = ds.load(idx);
        val_sum += rmse(model_forward(ck.model, ck.params, s.K, s.I_prev, s.I_cur), s.A);
    }
    CHECK(val_sum / static_cast<double>(val_idx.size()) == doctest::Approx(res.best_val_rmse).epsilon(1e-12));

    // the run is a pure function of (config, dataset, splits)
    train(cfg, ds, train_idx, val_idx, tmp.path() / "run_b");
    std::string why;
    bool same = testutil::dirs_identical(tmp.path() / "run_a", tmp.path() / "run_b", &why);
    INFO(why);
    CHECK(same);

    CHECK_THROWS_AS(train(cfg, ds, {}, val_idx, tmp.path() / "run_c"), ContractError);
}

TEST_CASE("a divergent learning rate raises a numeric error") {
    testutil::TempDir tmp("train_diverge");
    StrideDataset ds = small_synth(tmp.path() / "ds", 1, 4, 3);
    std::vector<size_t> idx = {0, 1, 2, 3};

    TrainConfig cfg;
    cfg.model = small_model();
    cfg.batch_size = 4;
    cfg.epochs = 3;
    cfg.base_lr = 1e18;
    cfg.warmup_steps = 0;
    cfg.seed = 1;
    CHECK_THROWS_AS(train(cfg, ds, idx, {}, tmp.path() / "run"), NumericError);
}
