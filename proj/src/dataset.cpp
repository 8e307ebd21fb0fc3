#include "sftik/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "sftik/rng.hpp"

namespace sftik {

namespace {

using nlohmann::json;

constexpr double kPi = 3.14159265358979323846;

std::string blob_name(int64_t subject, const char* kind, int64_t idx) {
    std::ostringstream os;
    os << "s" << std::setfill('0') << std::setw(2) << subject << "_" << kind << std::setw(4) << idx << ".bin";
    return os.str();
}

}  // namespace

StrideDataset StrideDataset::create(const std::filesystem::path& root) {
    std::error_code ec;
    std::filesystem::create_directories(root / "blobs", ec);
    if (ec) throw IoError("cannot create dataset directory " + root.string() + ": " + ec.message());
    StrideDataset ds;
    ds.root_ = root;
    return ds;
}

StrideDataset StrideDataset::open(const std::filesystem::path& root) {
    const std::filesystem::path index_path = root / "index.jsonl";
    std::ifstream in(index_path);
    if (!in) throw IoError("cannot open " + index_path.string());

    StrideDataset ds;
    ds.root_ = root;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw FormatError("index.jsonl line " + std::to_string(line_no) + ": " + e.what());
        }
        try {
            IndexRecord rec;
            rec.subject = j.at("subject").get<int64_t>();
            rec.terrain = terrain_from_string(j.at("terrain").get<std::string>());
            rec.prev_terrain =
                j.contains("prev_terrain") ? terrain_from_string(j["prev_terrain"].get<std::string>()) : rec.terrain;
            rec.side = side_from_string(j.at("side").get<std::string>());
            rec.stride_id = j.at("stride_id").get<int64_t>();
            rec.k_path = j.at("K_path").get<std::string>();
            rec.i_prev_path = j.at("I_prev_path").get<std::string>();
            rec.i_cur_path = j.at("I_cur_path").get<std::string>();
            rec.a_path = j.at("A_path").get<std::string>();
            ds.index_.push_back(std::move(rec));
        } catch (const json::exception& e) {
            throw FormatError("index.jsonl line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    for (const IndexRecord& rec : ds.index_) {
        for (const std::string* p : {&rec.k_path, &rec.i_prev_path, &rec.i_cur_path, &rec.a_path}) {
            if (!std::filesystem::exists(root / *p)) {
                throw IoError("dataset blob missing: " + (root / *p).string());
            }
        }
    }
    return ds;
}

void StrideDataset::write_index() const {
    const std::filesystem::path index_path = root_ / "index.jsonl";
    std::ofstream out(index_path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + index_path.string());
    for (const IndexRecord& rec : index_) {
        json j;
        j["subject"] = rec.subject;
        j["terrain"] = to_string(rec.terrain);
        j["prev_terrain"] = to_string(rec.prev_terrain);
        j["side"] = to_string(rec.side);
        j["stride_id"] = rec.stride_id;
        j["K_path"] = rec.k_path;
        j["I_prev_path"] = rec.i_prev_path;
        j["I_cur_path"] = rec.i_cur_path;
        j["A_path"] = rec.a_path;
        out << j.dump() << "\n";
    }
    if (!out) throw IoError("failed writing " + index_path.string());
}

std::string StrideDataset::put_blob(const std::string& name, const Tensor<float>& t) const {
    const std::string rel = "blobs/" + name;
    write_container(root_ / rel, t);
    return rel;
}

Tensor<float> StrideDataset::blob(const std::string& rel, std::initializer_list<int64_t>) const {
    auto it = cache_.find(rel);
    if (it != cache_.end()) return it->second;
    Tensor<float> t = read_container<float>(root_ / rel);
    cache_.emplace(rel, t);
    return t;
}

StrideSample StrideDataset::load(size_t i) const {
    if (i >= index_.size()) throw ContractError("sample index " + std::to_string(i) + " out of range");
    const IndexRecord& rec = index_[i];
    StrideSample s;
    s.K = blob(rec.k_path, {});
    s.I_prev = blob(rec.i_prev_path, {});
    s.I_cur = blob(rec.i_cur_path, {});
    s.A = blob(rec.a_path, {});
    if (s.K.rank() != 2) throw ShapeError("K blob " + rec.k_path + ": expected rank 2, got " + s.K.shape_str());
    if (s.A.rank() != 1 || s.A.dim(0) != s.K.dim(1)) {
        throw ShapeError("A blob " + rec.a_path + ": expected (" + std::to_string(s.K.dim(1)) + "), got " +
                         s.A.shape_str());
    }
    for (const Tensor<float>* img : {&s.I_prev, &s.I_cur}) {
        if (img->rank() != 3 || img->dim(0) != 1) {
            throw ShapeError("image blob: expected (1,H,W), got " + img->shape_str());
        }
    }
    s.terrain = rec.terrain;
    s.prev_terrain = rec.prev_terrain;
    s.subject = static_cast<int>(rec.subject);
    s.side = rec.side;
    s.stride_id = rec.stride_id;
    return s;
}

ProfileTable default_profiles() {
    // Indexed in kTerrains order: LW, RA, RD, SA, SD. Class offsets a0 are
    // separated by at least 6 degrees so terrain identity dominates the noise.
    return ProfileTable{{
        {10.0, 8.0, 2.0, 0.0, 0.5},
        {16.0, 7.0, 3.0, 0.3, 0.8},
        {4.0, 9.0, 1.5, -0.3, 0.2},
        {22.0, 6.0, 3.5, 0.6, 1.1},
        {-2.0, 8.5, 1.0, -0.6, -0.1},
    }};
}

ProfileTable load_profiles(const std::filesystem::path& json_path) {
    std::ifstream in(json_path);
    if (!in) throw IoError("cannot open profile table " + json_path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("profile table " + json_path.string() + ": " + e.what());
    }
    ProfileTable table{};
    for (size_t i = 0; i < kTerrains.size(); ++i) {
        const char* key = to_string(kTerrains[i]);
        if (!j.contains(key)) throw FormatError("profile table missing terrain " + std::string(key));
        const nlohmann::json& p = j[key];
        try {
            table[i].a0 = p.at("a0").get<double>();
            table[i].a1 = p.at("a1").get<double>();
            table[i].a2 = p.at("a2").get<double>();
            table[i].psi1 = p.at("psi1").get<double>();
            table[i].psi2 = p.at("psi2").get<double>();
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("profile table entry " + std::string(key) + ": " + e.what());
        }
    }
    return table;
}

void save_profiles(const std::filesystem::path& json_path, const ProfileTable& table) {
    nlohmann::json j;
    for (size_t i = 0; i < kTerrains.size(); ++i) {
        nlohmann::json p;
        p["a0"] = table[i].a0;
        p["a1"] = table[i].a1;
        p["a2"] = table[i].a2;
        p["psi1"] = table[i].psi1;
        p["psi2"] = table[i].psi2;
        j[to_string(kTerrains[i])] = p;
    }
    std::ofstream out(json_path, std::ios::trunc);
    if (!out) throw IoError("cannot write profile table " + json_path.string());
    out << j.dump(2) << "\n";
}

void SyntheticSpec::validate() const {
    if (n_subjects < 1 || strides_per_subject < 1) throw ConfigError("synthetic spec: counts must be positive");
    double sum = 0.0;
    for (double w : terrain_mix) {
        if (w < 0.0) throw ConfigError("synthetic spec: negative terrain proportion");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("synthetic spec: terrain proportions must sum to 1");
    if (noise_deg < 0 || subject_sigma_deg < 0 || acc_noise < 0 || depth_noise_m < 0) {
        throw ConfigError("synthetic spec: negative noise level");
    }
    if (run_min < 1 || run_max < run_min) throw ConfigError("synthetic spec: invalid terrain run bounds");
    if (series_len < 2) throw ConfigError("synthetic spec: series_len must be at least 2");
}

namespace {

// Raw key-frame depth in meters for image row r (0 = top = far).
double row_depth(Terrain t, int64_t r, int64_t rows) {
    const double u = static_cast<double>(r) / static_cast<double>(rows - 1);
    const double step = std::floor(u * 8.0) / 7.0;  // 8 flat stair levels
    switch (t) {
        case Terrain::LW: return 4.0 - 3.5 * u;
        case Terrain::RA: return 4.5 - 4.3 * u;
        case Terrain::RD: return 0.5 + 3.5 * u;
        case Terrain::SA: return 4.0 - 3.6 * std::min(step, 1.0);
        case Terrain::SD: return 0.4 + 3.6 * std::min(step, 1.0);
    }
    return 0.0;
}

struct StrideDraw {
    std::vector<float> angle;              // series_len
    std::vector<std::vector<float>> imu;   // 18 x series_len
    std::string keyframe_path;             // root-relative blob path
};

}  // namespace

StrideDataset generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir,
                                 const ProfileTable& profiles) {
    spec.validate();
    StrideDataset ds = StrideDataset::create(out_dir);
    const int64_t T = spec.series_len;
    const int64_t img = 224;
    const std::vector<double> mix(spec.terrain_mix.begin(), spec.terrain_mix.end());
    constexpr double kGyroScale[3] = {0.05, 0.04, 0.03};

    for (int64_t s = 0; s < spec.n_subjects; ++s) {
        Rng rng(detail::mix_seed(spec.seed, static_cast<uint64_t>(s)));
        const double delta = rng.normal(0.0, spec.subject_sigma_deg);

        // Terrain plan: runs of 4..12 strides so consecutive samples share
        // terrain except at run boundaries. One extra stride seeds the history.
        const int64_t total = spec.strides_per_subject + 1;
        std::vector<Terrain> plan;
        plan.reserve(static_cast<size_t>(total));
        while (static_cast<int64_t>(plan.size()) < total) {
            Terrain c = kTerrains[rng.categorical(mix)];
            int64_t len = rng.uniform_int(spec.run_min, spec.run_max);
            for (int64_t l = 0; l < len && static_cast<int64_t>(plan.size()) < total; ++l) plan.push_back(c);
        }

        StrideDraw prev;
        for (int64_t j = 0; j < total; ++j) {
            const Terrain c = plan[static_cast<size_t>(j)];
            const TerrainProfile& pf = profiles[static_cast<size_t>(std::find(kTerrains.begin(), kTerrains.end(), c) -
                                                                    kTerrains.begin())];
            StrideDraw cur;
            cur.angle.resize(static_cast<size_t>(T));
            cur.imu.assign(18, std::vector<float>(static_cast<size_t>(T)));
            for (int64_t t = 0; t < T; ++t) {
                const double phi = static_cast<double>(t) / static_cast<double>(T - 1);
                const double a = pf.a0 + pf.a1 * std::sin(2 * kPi * phi + pf.psi1) +
                                 pf.a2 * std::sin(4 * kPi * phi + pf.psi2) + delta;
                cur.angle[static_cast<size_t>(t)] = static_cast<float>(a + rng.normal(0.0, spec.noise_deg));
            }
            for (int64_t ch = 0; ch < 18; ++ch) {
                const int64_t axis = ch % 6;
                std::vector<float>& row = cur.imu[static_cast<size_t>(ch)];
                for (int64_t t = 0; t < T; ++t) {
                    const double phi = static_cast<double>(t) / static_cast<double>(T - 1);
                    double v;
                    if (axis < 3) {
                        v = std::sin(2 * kPi * phi + 0.7 * static_cast<double>(ch));
                    } else {
                        const double da = 2 * kPi * pf.a1 * std::cos(2 * kPi * phi + pf.psi1) +
                                          4 * kPi * pf.a2 * std::cos(4 * kPi * phi + pf.psi2);
                        v = kGyroScale[axis - 3] * da;
                    }
                    row[static_cast<size_t>(t)] = static_cast<float>(v + rng.normal(0.0, spec.acc_noise));
                }
            }

            Tensor<float> frame = Tensor<float>::zeros({1, img, img});
            auto px = frame.mutable_data();
            for (int64_t r = 0; r < img; ++r) {
                const double base = row_depth(c, r, img);
                for (int64_t col = 0; col < img; ++col) {
                    double d = base + rng.normal(0.0, spec.depth_noise_m);
                    d = std::clamp(d, 0.0, 5.0) / 5.0;
                    px[r * img + col] = static_cast<float>(d);
                }
            }
            cur.keyframe_path = ds.put_blob(blob_name(s, "k", j), frame);

            if (j >= 1) {
                Tensor<float> K = Tensor<float>::zeros({19, T});
                auto kd = K.mutable_data();
                for (int64_t ch = 0; ch < 18; ++ch) {
                    std::copy(prev.imu[static_cast<size_t>(ch)].begin(), prev.imu[static_cast<size_t>(ch)].end(),
                              kd.begin() + ch * T);
                }
                std::copy(prev.angle.begin(), prev.angle.end(), kd.begin() + 18 * T);
                Tensor<float> A = Tensor<float>::from_vector({T}, cur.angle);

                IndexRecord rec;
                rec.subject = s;
                rec.terrain = c;
                rec.prev_terrain = plan[static_cast<size_t>(j - 1)];
                rec.side = (s % 2 == 0) ? Side::left : Side::right;
                rec.stride_id = j;
                rec.k_path = ds.put_blob(blob_name(s, "n", j), K);
                rec.i_prev_path = prev.keyframe_path;
                rec.i_cur_path = cur.keyframe_path;
                rec.a_path = ds.put_blob(blob_name(s, "a", j), A);
                ds.append(rec);
            }
            prev = std::move(cur);
        }
    }
    ds.write_index();
    return ds;
}

Split split_loocv(std::vector<int64_t> subject_ids, int64_t fold) {
    std::sort(subject_ids.begin(), subject_ids.end());
    subject_ids.erase(std::unique(subject_ids.begin(), subject_ids.end()), subject_ids.end());
    const int64_t n = static_cast<int64_t>(subject_ids.size());
    if (n == 0) throw ContractError("split_loocv: no subjects");

    int64_t n_test, n_val, start;
    Split out;
    if (n == 10) {
        if (fold < 0 || fold > 4) throw ConfigError("fold must be in 0..4 for 10 subjects");
        n_test = 2;
        n_val = 1;
        start = 2 * fold;
    } else {
        if (fold < 0) throw ConfigError("fold must be non-negative");
        out.fallback_used = true;
        n_test = std::max<int64_t>(1, std::llround(0.2 * static_cast<double>(n)));
        n_val = std::max<int64_t>(1, std::llround(0.1 * static_cast<double>(n)));
        if (n_test + n_val >= n) throw ConfigError("split_loocv: too few subjects for a train/val/test split");
        start = (fold * n_test) % n;
        std::cerr << "split_loocv: " << n << " subjects (protocol expects 10); using proportional fallback "
                  << n_test << "/" << n_val << "/" << (n - n_test - n_val) << " from position " << start << "\n";
    }

    std::vector<bool> taken(static_cast<size_t>(n), false);
    for (int64_t i = 0; i < n_test; ++i) {
        const int64_t p = (start + i) % n;
        out.test.push_back(subject_ids[static_cast<size_t>(p)]);
        taken[static_cast<size_t>(p)] = true;
    }
    for (int64_t i = 0; i < n_val; ++i) {
        const int64_t p = (start + n_test + i) % n;
        out.val.push_back(subject_ids[static_cast<size_t>(p)]);
        taken[static_cast<size_t>(p)] = true;
    }
    for (int64_t p = 0; p < n; ++p) {
        if (!taken[static_cast<size_t>(p)]) out.train.push_back(subject_ids[static_cast<size_t>(p)]);
    }
    std::sort(out.test.begin(), out.test.end());
    std::sort(out.val.begin(), out.val.end());
    return out;
}

std::vector<std::vector<size_t>> batch_iter(size_t n_samples, int64_t batch_size, uint64_t seed, int64_t epoch,
                                            bool shuffle) {
    if (n_samples == 0) throw ContractError("batch_iter: empty dataset");
    if (batch_size < 1) throw ConfigError("batch_iter: batch size must be positive");
    std::vector<size_t> order(n_samples);
    for (size_t i = 0; i < n_samples; ++i) order[i] = i;
    if (shuffle) {
        Rng rng(detail::mix_seed(seed, static_cast<uint64_t>(epoch)));
        rng.shuffle(order);
    }
    std::vector<std::vector<size_t>> batches;
    for (size_t at = 0; at < n_samples; at += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(n_samples, at + static_cast<size_t>(batch_size));
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

}  // namespace sftik
