#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "sftik/container.hpp"
#include "sftik/errors.hpp"
#include "sftik/sample.hpp"
#include "sftik/tensor.hpp"

namespace sftik {

// One line of index.jsonl. Blob paths are relative to the dataset root.
// prev_terrain defaults to terrain when absent so externally converted
// datasets without transition labels still load.
struct IndexRecord {
    int64_t subject = 0;
    Terrain terrain = Terrain::LW;
    Terrain prev_terrain = Terrain::LW;
    Side side = Side::left;
    int64_t stride_id = 0;
    std::string k_path;
    std::string i_prev_path;
    std::string i_cur_path;
    std::string a_path;
};

// Directory-backed dataset: index.jsonl + blobs/ of tensor containers.
// Keyframe blobs may be shared between consecutive samples; loads are cached.
class StrideDataset {
  public:
    StrideDataset() = default;

    static StrideDataset create(const std::filesystem::path& root);
    static StrideDataset open(const std::filesystem::path& root);

    const std::filesystem::path& root() const { return root_; }
    const std::vector<IndexRecord>& index() const { return index_; }
    size_t size() const { return index_.size(); }

    void append(const IndexRecord& rec) { index_.push_back(rec); }
    void write_index() const;

    // Writes blobs/<name> and returns the root-relative path.
    std::string put_blob(const std::string& name, const Tensor<float>& t) const;

    StrideSample load(size_t i) const;
    void clear_cache() const { cache_.clear(); }

  private:
    std::filesystem::path root_;
    std::vector<IndexRecord> index_;
    mutable std::unordered_map<std::string, Tensor<float>> cache_;

    Tensor<float> blob(const std::string& rel, std::initializer_list<int64_t> want) const;
};

// Per-terrain thigh-angle profile: a0 + a1*sin(2*pi*phi + psi1) + a2*sin(4*pi*phi + psi2).
struct TerrainProfile {
    double a0 = 0, a1 = 0, a2 = 0, psi1 = 0, psi2 = 0;
};

using ProfileTable = std::array<TerrainProfile, kTerrains.size()>;

ProfileTable default_profiles();
ProfileTable load_profiles(const std::filesystem::path& json_path);
void save_profiles(const std::filesystem::path& json_path, const ProfileTable& table);

struct SyntheticSpec {
    int64_t n_subjects = 8;
    int64_t strides_per_subject = 200;
    // Proportions in kTerrains order (LW, RA, RD, SA, SD); must sum to 1.
    std::array<double, kTerrains.size()> terrain_mix = {0.70, 0.075, 0.075, 0.075, 0.075};
    double noise_deg = 0.5;
    double subject_sigma_deg = 2.0;
    double acc_noise = 0.1;
    double depth_noise_m = 0.05;
    int64_t run_min = 4;
    int64_t run_max = 12;
    int64_t series_len = 100;
    uint64_t seed = 0;

    void validate() const;
};

StrideDataset generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir,
                                 const ProfileTable& profiles = default_profiles());

struct Split {
    std::vector<int64_t> train;
    std::vector<int64_t> val;
    std::vector<int64_t> test;
    bool fallback_used = false;
};

// 10 subjects: fold f tests {2f, 2f+1}, validates on (2f+2) mod 10, trains on the
// remaining 7. Other counts fall back to a cyclic proportional 70/10/20 split with
// a warning on stderr.
Split split_loocv(std::vector<int64_t> subject_ids, int64_t fold);

// Seeded permutation per (seed, epoch); final partial batch kept.
std::vector<std::vector<size_t>> batch_iter(size_t n_samples, int64_t batch_size, uint64_t seed, int64_t epoch,
                                            bool shuffle = true);

}  // namespace sftik
