#include "sftik/cli.hpp"

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sftik/config_json.hpp"
#include "sftik/dataset.hpp"
#include "sftik/metrics.hpp"
#include "sftik/model.hpp"
#include "sftik/signal.hpp"
#include "sftik/train.hpp"

namespace sftik {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    try {
        json j;
        in >> j;
        return j;
    } catch (const json::exception& e) {
        throw FormatError("config file " + path + ": " + e.what());
    }
}

// Idempotency guard: a command refuses to overwrite its primary output
// unless --force is given.
void require_fresh(const fs::path& target, bool force, const std::string& what) {
    if (!force && fs::exists(target)) {
        throw IoError(what + " already exists at " + target.string() + " (pass --force to overwrite)");
    }
}

void write_json_file(const fs::path& path, const json& j) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << "\n";
    if (!out) throw IoError("failed writing " + path.string());
}

// Model hyperparameter flags shared by train/eval/flops. Only flags the user
// actually passed override the config-file/default values.
struct ModelFlagSet {
    ModelConfig v;
    std::string patch_s, fusion_s, ablation_s;
    std::map<std::string, CLI::Option*> o;

    void add(CLI::App& app) {
        o["d_emb"] = app.add_option("--d-emb", v.d_emb, "embedding width");
        o["n1"] = app.add_option("--n1", v.n1, "stage-1 block count");
        o["n2"] = app.add_option("--n2", v.n2, "stage-2 block count");
        o["heads"] = app.add_option("--heads", v.heads, "attention heads");
        o["mlp_ratio"] = app.add_option("--mlp-ratio", v.mlp_ratio, "MLP expansion ratio");
        o["patch_mode"] = app.add_option("--patch", patch_s, "image patch mode: width|height|square")
                              ->check(CLI::IsMember({"width", "height", "square"}));
        o["image_size"] = app.add_option("--image-size", v.image_size, "depth image side length");
        o["patch_kernel"] = app.add_option("--patch-kernel", v.patch_kernel, "image patch kernel");
        o["image_channels"] = app.add_option("--image-channels", v.image_channels, "image channels");
        o["imu_channels"] = app.add_option("--imu-channels", v.imu_channels, "kinematic channels");
        o["imu_patch_len"] = app.add_option("--imu-patch-len", v.imu_patch_len, "kinematic patch length");
        o["imu_patch_stride"] = app.add_option("--imu-patch-stride", v.imu_patch_stride, "kinematic patch stride");
        o["fusion"] = app.add_option("--fusion", fusion_s, "fusion variant: sandwich|early|late")
                          ->check(CLI::IsMember({"sandwich", "early", "late"}));
        o["ablation"] = app.add_option("--ablation", ablation_s, "ablation: none|no_prev_image|no_imu")
                            ->check(CLI::IsMember({"none", "no_prev_image", "no_imu"}));
        o["series_len"] = app.add_option("--series-len", v.series_len, "input series length");
        o["out_len"] = app.add_option("--out-len", v.out_len, "forecast series length");
    }

    void apply(ModelConfig& cfg) const {
        if (o.at("d_emb")->count()) cfg.d_emb = v.d_emb;
        if (o.at("n1")->count()) cfg.n1 = v.n1;
        if (o.at("n2")->count()) cfg.n2 = v.n2;
        if (o.at("heads")->count()) cfg.heads = v.heads;
        if (o.at("mlp_ratio")->count()) cfg.mlp_ratio = v.mlp_ratio;
        if (o.at("patch_mode")->count()) cfg.patch_mode = patch_mode_from_string(patch_s);
        if (o.at("image_size")->count()) cfg.image_size = v.image_size;
        if (o.at("patch_kernel")->count()) cfg.patch_kernel = v.patch_kernel;
        if (o.at("image_channels")->count()) cfg.image_channels = v.image_channels;
        if (o.at("imu_channels")->count()) cfg.imu_channels = v.imu_channels;
        if (o.at("imu_patch_len")->count()) cfg.imu_patch_len = v.imu_patch_len;
        if (o.at("imu_patch_stride")->count()) cfg.imu_patch_stride = v.imu_patch_stride;
        if (o.at("fusion")->count()) cfg.fusion = fusion_from_string(fusion_s);
        if (o.at("ablation")->count()) cfg.ablation = ablation_from_string(ablation_s);
        if (o.at("series_len")->count()) cfg.series_len = v.series_len;
        if (o.at("out_len")->count()) cfg.out_len = v.out_len;
    }
};

std::vector<int64_t> dataset_subjects(const StrideDataset& ds) {
    std::set<int64_t> ids;
    for (const IndexRecord& r : ds.index()) ids.insert(r.subject);
    return {ids.begin(), ids.end()};
}

json split_json(const Split& split) {
    return json{{"train", split.train}, {"val", split.val}, {"test", split.test},
                {"fallback_used", split.fallback_used}};
}

// ---- synth ----------------------------------------------------------------

struct SynthArgs {
    std::string out, config, profiles;
    bool force = false;
    SyntheticSpec v;
    std::map<std::string, CLI::Option*> o;
};

void add_synth(CLI::App& app, SynthArgs& a) {
    CLI::App* cmd = app.add_subcommand("synth", "generate a seeded synthetic stride dataset");
    cmd->add_option("--out", a.out, "output dataset directory")->required();
    cmd->add_option("--config", a.config, "JSON file with generator fields");
    cmd->add_option("--profiles", a.profiles, "terrain profile table JSON");
    cmd->add_flag("--force", a.force, "overwrite an existing dataset");
    a.o["n_subjects"] = cmd->add_option("--subjects", a.v.n_subjects, "number of subjects");
    a.o["strides_per_subject"] = cmd->add_option("--strides", a.v.strides_per_subject, "strides per subject");
    a.o["seed"] = cmd->add_option("--seed", a.v.seed, "generator seed");
    a.o["noise_deg"] = cmd->add_option("--noise-deg", a.v.noise_deg, "angle noise sigma (degrees)");
    a.o["subject_sigma_deg"] =
        cmd->add_option("--subject-sigma", a.v.subject_sigma_deg, "subject offset sigma (degrees)");
    a.o["acc_noise"] = cmd->add_option("--acc-noise", a.v.acc_noise, "inertial channel noise sigma");
    a.o["depth_noise_m"] = cmd->add_option("--depth-noise", a.v.depth_noise_m, "depth pixel noise sigma (meters)");
    a.o["run_min"] = cmd->add_option("--run-min", a.v.run_min, "minimum terrain run length");
    a.o["run_max"] = cmd->add_option("--run-max", a.v.run_max, "maximum terrain run length");
    a.o["series_len"] = cmd->add_option("--series-len", a.v.series_len, "points per stride");

    cmd->callback([&a]() {
        SyntheticSpec spec;
        if (!a.config.empty()) from_json(load_json_file(a.config), spec);
        if (a.o.at("n_subjects")->count()) spec.n_subjects = a.v.n_subjects;
        if (a.o.at("strides_per_subject")->count()) spec.strides_per_subject = a.v.strides_per_subject;
        if (a.o.at("seed")->count()) spec.seed = a.v.seed;
        if (a.o.at("noise_deg")->count()) spec.noise_deg = a.v.noise_deg;
        if (a.o.at("subject_sigma_deg")->count()) spec.subject_sigma_deg = a.v.subject_sigma_deg;
        if (a.o.at("acc_noise")->count()) spec.acc_noise = a.v.acc_noise;
        if (a.o.at("depth_noise_m")->count()) spec.depth_noise_m = a.v.depth_noise_m;
        if (a.o.at("run_min")->count()) spec.run_min = a.v.run_min;
        if (a.o.at("run_max")->count()) spec.run_max = a.v.run_max;
        if (a.o.at("series_len")->count()) spec.series_len = a.v.series_len;
        spec.validate();

        require_fresh(fs::path(a.out) / "index.jsonl", a.force, "dataset index");
        const ProfileTable profiles = a.profiles.empty() ? default_profiles() : load_profiles(a.profiles);
        StrideDataset ds = generate_synthetic(spec, a.out, profiles);

        json manifest;
        manifest["command"] = "synth";
        manifest["spec"] = spec;
        manifest["profiles"] = a.profiles.empty() ? "<built-in>" : a.profiles;
        manifest["n_samples"] = ds.size();
        write_json_file(fs::path(a.out) / "manifest.json", manifest);
        std::cout << "synth: wrote " << ds.size() << " samples to " << a.out << "\n";
    });
}

// ---- preprocess -----------------------------------------------------------

struct PreprocessArgs {
    std::string imu, frames, out, side = "left";
    int subject = 0;
    double calib_seconds = 1.0;
    double cutoff_hz = 30.0;
    double fs_hz = 0.0;  // 0 = infer from timestamps
    SegmentOptions seg;
    bool force = false;
};

void add_preprocess(CLI::App& app, PreprocessArgs& a) {
    CLI::App* cmd = app.add_subcommand("preprocess", "build a dataset from a raw IMU CSV and depth frame index");
    cmd->add_option("--imu", a.imu, "IMU recording CSV")->required();
    cmd->add_option("--frames", a.frames, "depth frame index JSONL")->required();
    cmd->add_option("--out", a.out, "output dataset directory")->required();
    cmd->add_option("--subject", a.subject, "subject id for the recording");
    cmd->add_option("--side", a.side, "instrumented leg: left|right")->check(CLI::IsMember({"left", "right"}));
    cmd->add_option("--calib-seconds", a.calib_seconds, "standstill window length at recording start");
    cmd->add_option("--cutoff", a.cutoff_hz, "low-pass cutoff (Hz)");
    cmd->add_option("--fs", a.fs_hz, "sampling rate (Hz); default inferred");
    cmd->add_option("--min-distance", a.seg.min_distance, "minimum samples between stride events");
    cmd->add_option("--prominence", a.seg.prominence_deg, "event prominence (degrees)");
    cmd->add_option("--min-duration", a.seg.min_duration_s, "minimum stride duration (s)");
    cmd->add_option("--max-duration", a.seg.max_duration_s, "maximum stride duration (s)");
    cmd->add_flag("--force", a.force, "overwrite an existing dataset");

    cmd->callback([&a]() {
        require_fresh(fs::path(a.out) / "index.jsonl", a.force, "dataset index");
        ImuStream stream = load_imu_csv(a.imu, side_from_string(a.side));
        const double span = stream.t.back() - stream.t.front();
        const double fs = a.fs_hz > 0.0 ? a.fs_hz
                                        : static_cast<double>(stream.t.size() - 1) / (span > 0.0 ? span : 1.0);
        stream = filter_stream(design_butterworth2(a.cutoff_hz, fs), stream);

        const double calib_end_t = stream.t.front() + a.calib_seconds;
        size_t end = 0;
        while (end < stream.t.size() && stream.t[end] < calib_end_t) ++end;
        if (end < stream.t.size()) ++end;  // include the sample that closes the window
        stream = calibrate_bias(stream, 0, end);

        const std::vector<FrameIndexEntry> entries = load_frame_index(a.frames);
        const std::vector<DepthFrame> frames = load_frames(entries, fs::path(a.frames).parent_path());
        std::vector<Terrain> terrain;
        terrain.reserve(entries.size());
        for (const FrameIndexEntry& e : entries) terrain.push_back(e.terrain);

        SegmentOptions opts = a.seg;
        opts.subject = a.subject;
        SegmentResult res = segment_strides(stream, frames, terrain, opts);

        StrideDataset ds = StrideDataset::create(a.out);
        std::map<const void*, std::string> written_frames;
        for (size_t i = 0; i < res.samples.size(); ++i) {
            const StrideSample& s = res.samples[i];
            char tag[32];
            std::snprintf(tag, sizeof(tag), "n%05zu", i);
            IndexRecord rec;
            rec.subject = s.subject;
            rec.terrain = s.terrain;
            rec.prev_terrain = s.prev_terrain;
            rec.side = s.side;
            rec.stride_id = s.stride_id;
            rec.k_path = ds.put_blob(std::string(tag) + "_K.bin", s.K);
            rec.a_path = ds.put_blob(std::string(tag) + "_A.bin", s.A);
            for (auto [img, slot] : {std::pair{&s.I_prev, &rec.i_prev_path}, std::pair{&s.I_cur, &rec.i_cur_path}}) {
                const void* key = img->storage().get();
                auto it = written_frames.find(key);
                if (it == written_frames.end()) {
                    std::string path =
                        ds.put_blob("f" + std::to_string(written_frames.size()) + ".bin", *img);
                    it = written_frames.emplace(key, std::move(path)).first;
                }
                *slot = it->second;
            }
            ds.append(rec);
        }
        ds.write_index();

        json manifest;
        manifest["command"] = "preprocess";
        manifest["imu"] = a.imu;
        manifest["frames"] = a.frames;
        manifest["subject"] = a.subject;
        manifest["side"] = a.side;
        manifest["fs_hz"] = fs;
        manifest["cutoff_hz"] = a.cutoff_hz;
        manifest["calib_seconds"] = a.calib_seconds;
        manifest["options"] = json{{"min_distance", opts.min_distance},
                                   {"prominence_deg", opts.prominence_deg},
                                   {"min_duration_s", opts.min_duration_s},
                                   {"max_duration_s", opts.max_duration_s},
                                   {"resample_points", opts.resample_points}};
        manifest["n_samples"] = ds.size();
        manifest["boundaries"] = res.boundaries;
        manifest["skipped"] = res.skipped;
        write_json_file(fs::path(a.out) / "manifest.json", manifest);
        std::cout << "preprocess: wrote " << ds.size() << " samples to " << a.out << " (" << res.skipped.size()
                  << " strides skipped)\n";
    });
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
    std::string data, out, config;
    bool force = false;
    TrainConfig v;
    std::map<std::string, CLI::Option*> o;
    ModelFlagSet model;
};

void add_train(CLI::App& app, TrainArgs& a) {
    CLI::App* cmd = app.add_subcommand("train", "train a forecasting model on a dataset");
    cmd->add_option("--data", a.data, "dataset directory")->required();
    cmd->add_option("--out", a.out, "run output directory")->required();
    cmd->add_option("--config", a.config, "JSON training config");
    cmd->add_flag("--force", a.force, "overwrite an existing run");
    a.o["batch_size"] = cmd->add_option("--batch", a.v.batch_size, "batch size");
    a.o["epochs"] = cmd->add_option("--epochs", a.v.epochs, "training epochs");
    a.o["base_lr"] = cmd->add_option("--lr", a.v.base_lr, "peak learning rate");
    a.o["final_lr"] = cmd->add_option("--final-lr", a.v.final_lr, "annealed learning rate floor");
    a.o["warmup_steps"] = cmd->add_option("--warmup", a.v.warmup_steps, "warmup steps");
    a.o["seed"] = cmd->add_option("--seed", a.v.seed, "run seed");
    a.o["fold"] = cmd->add_option("--fold", a.v.fold, "cross-validation fold");
    a.model.add(*cmd);

    cmd->callback([&a]() {
        TrainConfig cfg;
        if (!a.config.empty()) from_json(load_json_file(a.config), cfg);
        if (a.o.at("batch_size")->count()) cfg.batch_size = a.v.batch_size;
        if (a.o.at("epochs")->count()) cfg.epochs = a.v.epochs;
        if (a.o.at("base_lr")->count()) cfg.base_lr = a.v.base_lr;
        if (a.o.at("final_lr")->count()) cfg.final_lr = a.v.final_lr;
        if (a.o.at("warmup_steps")->count()) cfg.warmup_steps = a.v.warmup_steps;
        if (a.o.at("seed")->count()) cfg.seed = a.v.seed;
        if (a.o.at("fold")->count()) cfg.fold = a.v.fold;
        a.model.apply(cfg.model);
        cfg.validate();

        require_fresh(fs::path(a.out) / "checkpoint" / "manifest.json", a.force, "checkpoint");
        StrideDataset ds = StrideDataset::open(a.data);
        const Split split = split_loocv(dataset_subjects(ds), cfg.fold);
        const std::vector<size_t> train_idx = indices_for_subjects(ds, split.train);
        const std::vector<size_t> val_idx = indices_for_subjects(ds, split.val);

        TrainResult result = train(cfg, ds, train_idx, val_idx, a.out);

        json manifest;
        manifest["command"] = "train";
        manifest["config"] = cfg;
        manifest["data"] = a.data;
        manifest["split"] = split_json(split);
        json res;
        res["best_val_rmse"] = result.best_val_rmse;
        res["best_epoch"] = result.best_epoch;
        res["steps"] = result.steps;
        manifest["result"] = res;
        write_json_file(fs::path(a.out) / "manifest.json", manifest);
        std::cout << "train: " << result.steps << " steps, best val RMSE " << result.best_val_rmse << " (epoch "
                  << result.best_epoch << "), checkpoint at " << result.checkpoint_dir.string() << "\n";
    });
}

// ---- eval -----------------------------------------------------------------

struct EvalArgs {
    std::string checkpoint, data, out, split = "test";
    int64_t fold = 0;
    bool baseline = false;
    bool force = false;
};

void add_eval(CLI::App& app, EvalArgs& a) {
    CLI::App* cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
    cmd->add_option("--checkpoint", a.checkpoint, "checkpoint directory")->required();
    cmd->add_option("--data", a.data, "dataset directory")->required();
    cmd->add_option("--out", a.out, "report output directory")->required();
    cmd->add_option("--split", a.split, "subjects to evaluate: test|val|train|all")
        ->check(CLI::IsMember({"test", "val", "train", "all"}));
    cmd->add_option("--fold", a.fold, "cross-validation fold");
    cmd->add_flag("--baseline", a.baseline, "also report the copy-previous-stride baseline");
    cmd->add_flag("--force", a.force, "overwrite existing reports");

    cmd->callback([&a]() {
        require_fresh(fs::path(a.out) / "report.json", a.force, "report");
        Checkpoint ck = load_checkpoint(a.checkpoint);
        StrideDataset ds = StrideDataset::open(a.data);

        std::vector<size_t> indices;
        Split split;
        if (a.split == "all") {
            indices.resize(ds.size());
            for (size_t i = 0; i < ds.size(); ++i) indices[i] = i;
        } else {
            split = split_loocv(dataset_subjects(ds), a.fold);
            const std::vector<int64_t>& subjects =
                a.split == "test" ? split.test : (a.split == "val" ? split.val : split.train);
            indices = indices_for_subjects(ds, subjects);
        }

        std::error_code ec;
        fs::create_directories(a.out, ec);
        if (ec) throw IoError("cannot create report directory " + a.out + ": " + ec.message());

        MetricsReport report = evaluate(ck.model, ck.params, ds, indices);
        json j = report_to_json(report);
        j["config"] = json{{"model", ck.model}, {"checkpoint", a.checkpoint}, {"data", a.data},
                           {"split", a.split},  {"fold", a.fold},             {"seed", ck.seed}};
        write_report_json(fs::path(a.out) / "report.json", j);
        write_report_csv(fs::path(a.out) / "report.csv", report);

        if (a.baseline) {
            MetricsReport base = evaluate_baseline(ds, indices);
            json bj = report_to_json(base);
            bj["config"] = json{{"model", "copy_previous"}, {"data", a.data}, {"split", a.split}, {"fold", a.fold}};
            write_report_json(fs::path(a.out) / "baseline_report.json", bj);
            write_report_csv(fs::path(a.out) / "baseline_report.csv", base);
        }
        std::cout << "eval: " << indices.size() << " strides, overall RMSE " << report.overall.rmse.mean
                  << " deg, PCC " << report.overall.pcc.mean << "\n";
    });
}

// ---- flops ----------------------------------------------------------------

struct FlopsArgs {
    std::string config;
    ModelFlagSet model;
};

void add_flops(CLI::App& app, FlopsArgs& a) {
    CLI::App* cmd = app.add_subcommand("flops", "print the analytic cost model as JSON");
    cmd->add_option("--config", a.config, "JSON model config");
    a.model.add(*cmd);

    cmd->callback([&a]() {
        ModelConfig cfg;
        if (!a.config.empty()) from_json(load_json_file(a.config), cfg);
        a.model.apply(cfg);
        const FlopsBreakdown f = count_flops(cfg);

        json j;
        j["buckets"] = json{{"embeddings", f.embeddings}, {"stage1_fused", f.stage1_fused},
                            {"stage1_image", f.stage1_image}, {"stage2", f.stage2}, {"head", f.head}};
        j["total_macs"] = f.total_macs();
        j["total_gflops"] = f.total_gflops();
        j["image_encoder_macs"] = f.image_encoder;
        j["image_encoder_gflops"] = f.image_encoder_gflops();
        j["params"] = count_params(cfg);
        j["config"] = cfg;
        std::cout << j.dump(2) << "\n";
    });
}

// ---- report ---------------------------------------------------------------

struct ReportArgs {
    std::vector<std::string> inputs;
    std::string out;
    bool force = false;
};

void add_report(CLI::App& app, ReportArgs& a) {
    CLI::App* cmd = app.add_subcommand("report", "merge evaluation reports into one per-terrain CSV");
    cmd->add_option("--in", a.inputs, "evaluation report JSON files")->required()->expected(-1);
    cmd->add_option("--out", a.out, "merged CSV path")->required();
    cmd->add_flag("--force", a.force, "overwrite an existing CSV");

    cmd->callback([&a]() {
        require_fresh(a.out, a.force, "merged report");
        std::ofstream out(a.out, std::ios::trunc);
        if (!out) throw IoError("cannot write " + a.out);
        out << std::setprecision(17);
        out << "source,terrain,rmse_mean,rmse_std,pcc_mean,pcc_std,count\n";
        for (const std::string& input : a.inputs) {
            const json j = load_json_file(input);
            auto row = [&](const std::string& label, const json& g) {
                out << input << "," << label << "," << g.at("rmse_mean").get<double>() << ","
                    << g.at("rmse_std").get<double>() << "," << g.at("pcc_mean").get<double>() << ","
                    << g.at("pcc_std").get<double>() << "," << g.at("count").get<int64_t>() << "\n";
            };
            if (j.contains("per_terrain")) {
                for (const auto& [terrain, g] : j.at("per_terrain").items()) row(terrain, g);
            }
            row("overall", j.at("overall"));
            if (j.contains("transition")) row("transition", j.at("transition"));
            if (j.contains("steady")) row("steady", j.at("steady"));
        }
        if (!out) throw IoError("failed writing " + a.out);
        std::cout << "report: merged " << a.inputs.size() << " reports into " << a.out << "\n";
    });
}

}  // namespace

int run_cli(int argc, char** argv) {
    CLI::App app{"stride-level terrain-aware thigh-angle forecasting toolkit"};
    app.require_subcommand(1);

    SynthArgs synth_args;
    PreprocessArgs pre_args;
    TrainArgs train_args;
    EvalArgs eval_args;
    FlopsArgs flops_args;
    ReportArgs report_args;
    add_synth(app, synth_args);
    add_preprocess(app, pre_args);
    add_train(app, train_args);
    add_eval(app, eval_args);
    add_flops(app, flops_args);
    add_report(app, report_args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace sftik
