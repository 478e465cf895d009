#pragma once

#include "cageadv/attack.hpp"
#include "cageadv/cage.hpp"
#include "cageadv/defense.hpp"
#include "cageadv/metrics.hpp"
#include "cageadv/mvc.hpp"
#include "cageadv/nn.hpp"
#include "cageadv/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace cageadv::pipeline {

inline constexpr const char* kVersion = "0.3.0";

/// Process exit codes of the command-line tool.
enum ExitCode : int { kOk = 0, kInputError = 2, kGeometryError = 3, kEmptyResults = 4 };

class InputError : public Error {
public:
    using Error::Error;
};

class EmptyResultsError : public Error {
public:
    using Error::Error;
};

struct DatasetSpec {
    std::uint64_t seed = 1;
    int per_class = 200;
    int points = 1024;
    std::string manifest;  // when set, clouds are read from this manifest instead
};

struct ExperimentConfig {
    std::uint64_t seed = 1;
    DatasetSpec dataset;
    TrainConfig train;
    std::string model_path;  // pre-trained model; empty trains one
    CageBuildConfig cage;
    AttackConfig attack_cage;
    AttackConfig attack_ifgm;
    DefenseConfig defense;
    int srs_seeds = 3;
    MetricParams metrics;
    int samples = 100;
    int threads = 0;  // 0 = hardware concurrency
    std::string out = "out";

    void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

/// Reads a JSON config; absent keys keep their defaults. Sub-configuration
/// seeds left at zero are derived from `seed` when an Experiment is made.
ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig default_config();

/// FNV-1a over the row-major coordinates, as 16 hex digits.
std::string cloud_hash(const Points3d& points);

enum class AttackKind { Cage, Ifgm };

std::string variant_name(CageVariant variant);
CageVariant parse_variant(const std::string& name);

struct Dataset {
    std::vector<PointCloud> samples;
    std::vector<std::string> class_names;
};

/// Writes `dataset` as XYZ files plus a manifest.json under `dir`.
void write_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset read_dataset(const std::filesystem::path& manifest);

struct CageArtifacts {
    TriMesh initial;
    TriMesh subdivided;
    TriMesh optimized;
    CoordinateMatrix coords;
    std::filesystem::path dir;
};

struct SampleResult {
    std::string hash;
    std::size_t index = 0;  // into the dataset
    AttackResult result;
    int label = 0;
};

struct NaturalnessRow {
    std::string attack;
    MetricReport report;
};

struct DefenseRow {
    std::string defense;
    double cage_asr = 0.0;
    double cage_ci95 = 0.0;
    double ifgm_asr = 0.0;
    double ifgm_ci95 = 0.0;
};

struct AblationRow {
    CageVariant variant;
    MetricReport report;
};

/// Artifact cache rooted at config.out. Every `ensure_*` call reuses what is
/// already on disk for the same configuration and computes the rest; results
/// are always read back from disk so cold and warm runs agree bit for bit.
class Experiment {
public:
    explicit Experiment(ExperimentConfig config);

    const ExperimentConfig& config() const { return config_; }
    const std::filesystem::path& out() const { return out_; }

    const Dataset& dataset();
    const ClassifierModel& model();
    const TrainReport& train_report();

    /// Dataset indices of the first `samples` correctly classified test clouds.
    const std::vector<std::size_t>& attack_samples();

    CageArtifacts ensure_cage(std::size_t index, CageVariant variant);
    std::vector<SampleResult> ensure_attack(AttackKind kind, CageVariant variant = {});

    std::vector<NaturalnessRow> naturalness();
    std::vector<DefenseRow> defenses();
    std::vector<AblationRow> ablation();

    void write_naturalness_table();
    void write_defense_table();
    void write_ablation_table();

    /// Writes the three tables, metrics_meta.json and manifest.json.
    void report();

    /// Files written so far, relative to out().
    const std::vector<std::string>& written() const { return written_; }
    const std::vector<std::string>& warnings() const { return warnings_; }

    void write_manifest();

private:
    std::string attack_key(AttackKind kind, CageVariant variant) const;
    std::string cage_key(CageVariant variant) const;
    std::string model_key() const;
    void record(const std::filesystem::path& file);
    void warn(std::string message);
    void time(const std::string& stage, double seconds);

    ExperimentConfig config_;
    std::filesystem::path out_;
    std::optional<Dataset> dataset_;
    std::optional<ClassifierModel> model_;
    std::optional<TrainReport> train_report_;
    std::optional<std::vector<std::size_t>> attack_samples_;
    std::map<std::string, std::vector<SampleResult>> attacks_;
    std::vector<std::string> written_;
    std::vector<std::string> warnings_;
    std::map<std::string, double> timings_;
    std::mutex log_mutex_;
};

/// Aggregate metrics over every attacked sample; asr counts successes.
MetricReport aggregate(const Dataset& dataset, std::span<const SampleResult> results,
                       const MetricParams& params);

/// Runs `body(i)` for i in [0, n) on up to `threads` workers. Each index is
/// handled exactly once; callers write to per-index slots.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& body);

}  // namespace cageadv::pipeline
