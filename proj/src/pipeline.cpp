#include "cageadv/pipeline.hpp"

#include "cageadv/geometry.hpp"
#include "cageadv/io.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <thread>

namespace cageadv::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t fnv1a(const std::string& text) { return fnv1a(text.data(), text.size()); }

std::string hex(std::uint64_t value, int digits = 16) {
    return fmt::format("{:016x}", value).substr(static_cast<std::size_t>(16 - digits));
}

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) { return splitmix(seed ^ splitmix(stream)); }

std::string text_of(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw InputError(fmt::format("cannot open {}", path.string()));
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error(fmt::format("cannot write {}", path.string()));
    }
    out << text;
}

json loss_json(const CageLoss& l) {
    return {{"dist", l.dist}, {"var_area", l.var_area}, {"lap", l.lap}, {"total", l.total}};
}

json train_json(const TrainConfig& t) {
    return {{"epochs", t.epochs},
            {"batch_size", t.batch_size},
            {"step_size", t.step_size},
            {"seed", t.seed},
            {"train_fraction", t.train_fraction}};
}

json cage_json(const CageBuildConfig& c) {
    return {{"icosphere_level", c.icosphere_level},
            {"margin", c.margin},
            {"density_weight", c.density_weight},
            {"subdivision_fraction", c.subdivision_fraction},
            {"area_weight", c.area_weight},
            {"laplacian_weight", c.laplacian_weight},
            {"iterations", c.iterations},
            {"step_size", c.step_size},
            {"curvature_k", c.curvature_k},
            {"seed", c.seed}};
}

const char* loss_name(MisLoss kind) { return kind == MisLoss::Margin ? "margin" : "nce"; }

json attack_json(const AttackConfig& a) {
    return {{"lambda1", a.lambda1},
            {"iterations", a.iterations},
            {"step_size", a.step_size},
            {"loss", loss_name(a.loss)},
            {"kappa", a.kappa},
            {"seed", a.seed}};
}

json defense_json(const DefenseConfig& d) {
    return {{"srs_drop", d.srs_drop}, {"sor_k", d.sor_k}, {"sor_alpha", d.sor_alpha}, {"seed", d.seed}};
}

json metrics_json(const MetricParams& m) {
    return {{"knn_k", m.knn_k},   {"curv_k", m.curv_k},         {"csd_k", m.csd_k}, {"lap_k", m.lap_k},
            {"uni_balls", m.uni_balls}, {"uni_radius", m.uni_radius}, {"seed", m.seed}};
}

json dataset_json(const DatasetSpec& d) {
    return {{"seed", d.seed}, {"per_class", d.per_class}, {"points", d.points}, {"manifest", d.manifest}};
}

template <class T>
void take(const json& j, const char* key, T& field) {
    if (j.contains(key)) {
        j.at(key).get_to(field);
    }
}

void read_attack(const json& j, AttackConfig& a) {
    take(j, "lambda1", a.lambda1);
    take(j, "iterations", a.iterations);
    take(j, "step_size", a.step_size);
    take(j, "kappa", a.kappa);
    take(j, "seed", a.seed);
    if (j.contains("loss")) {
        const std::string name = j.at("loss").get<std::string>();
        if (name == "margin") {
            a.loss = MisLoss::Margin;
        } else if (name == "nce") {
            a.loss = MisLoss::NegativeCrossEntropy;
        } else {
            throw InputError(fmt::format("unknown attack loss '{}'", name));
        }
    }
}

void fill_seeds(ExperimentConfig& c) {
    auto fill = [&](std::uint64_t& s, std::uint64_t stream) {
        if (s == 0) {
            s = derive(c.seed, stream);
        }
    };
    fill(c.train.seed, 1);
    fill(c.cage.seed, 2);
    fill(c.attack_cage.seed, 3);
    fill(c.attack_ifgm.seed, 4);
    fill(c.defense.seed, 5);
    fill(c.metrics.seed, 6);
}

json result_json(const SampleResult& r, AttackKind kind, std::uint64_t seed) {
    const Eigen::VectorXd norms = r.result.displacement_norms();
    return {{"sample_id", r.hash},
            {"index", r.index},
            {"label", r.label},
            {"attack", kind == AttackKind::Cage ? "cage" : "ifgm"},
            {"success", r.result.success},
            {"predicted", r.result.predicted},
            {"iters", r.result.iterations},
            {"l_mis", r.result.l_mis},
            {"d_i", r.result.d_i},
            {"seed", seed},
            {"displacement_norms", std::vector<double>(norms.data(), norms.data() + norms.size())}};
}

void check_mesh(const TriMesh& mesh, const std::string& what) {
    const MeshReport rep = mesh_validate(mesh);
    if (!rep.valid || rep.euler != 2) {
        std::string issues;
        for (const auto& issue : rep.issues) {
            issues += "\n  " + issue;
        }
        throw GeometryError(fmt::format("{} failed validation (closed={}, manifold={}, oriented={}, chi={}){}",
                                        what, rep.closed, rep.manifold, rep.oriented, rep.euler, issues));
    }
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string number(double v) { return fmt::format("{:.6f}", v); }

std::string metric_cells(const MetricReport& m) {
    return fmt::format("{},{},{},{},{},{}", number(m.asr), number(m.csd / MetricScale::csd),
                       number(m.curv / MetricScale::curv), number(m.uni), number(m.knn / MetricScale::knn),
                       number(m.lap));
}

}  // namespace

void ExperimentConfig::validate() const {
    if (dataset.manifest.empty() && (dataset.per_class < 1 || dataset.points < 4)) {
        throw InputError("config: synthetic dataset needs per_class >= 1 and points >= 4");
    }
    if (samples < 1) {
        throw InputError("config: samples must be at least 1");
    }
    if (srs_seeds < 1) {
        throw InputError("config: srs_seeds must be at least 1");
    }
    try {
        train.validate();
        cage.validate();
        attack_cage.validate();
        attack_ifgm.validate();
        defense.validate();
    } catch (const std::invalid_argument& e) {
        throw InputError(e.what());
    }
}

void to_json(json& j, const ExperimentConfig& c) {
    j = {{"seed", c.seed},
         {"dataset", dataset_json(c.dataset)},
         {"train", train_json(c.train)},
         {"model_path", c.model_path},
         {"cage", cage_json(c.cage)},
         {"attack_cage", attack_json(c.attack_cage)},
         {"attack_ifgm", attack_json(c.attack_ifgm)},
         {"defense", defense_json(c.defense)},
         {"srs_seeds", c.srs_seeds},
         {"metrics", metrics_json(c.metrics)},
         {"samples", c.samples},
         {"threads", c.threads},
         {"out", c.out}};
}

void from_json(const json& j, ExperimentConfig& c) {
    take(j, "seed", c.seed);
    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        take(d, "seed", c.dataset.seed);
        take(d, "per_class", c.dataset.per_class);
        take(d, "points", c.dataset.points);
        take(d, "manifest", c.dataset.manifest);
    }
    if (j.contains("train")) {
        const json& t = j.at("train");
        take(t, "epochs", c.train.epochs);
        take(t, "batch_size", c.train.batch_size);
        take(t, "step_size", c.train.step_size);
        take(t, "seed", c.train.seed);
        take(t, "train_fraction", c.train.train_fraction);
    }
    take(j, "model_path", c.model_path);
    if (j.contains("cage")) {
        const json& g = j.at("cage");
        take(g, "icosphere_level", c.cage.icosphere_level);
        take(g, "margin", c.cage.margin);
        take(g, "density_weight", c.cage.density_weight);
        take(g, "subdivision_fraction", c.cage.subdivision_fraction);
        take(g, "area_weight", c.cage.area_weight);
        take(g, "laplacian_weight", c.cage.laplacian_weight);
        take(g, "iterations", c.cage.iterations);
        take(g, "step_size", c.cage.step_size);
        take(g, "curvature_k", c.cage.curvature_k);
        take(g, "seed", c.cage.seed);
    }
    if (j.contains("attack_cage")) {
        read_attack(j.at("attack_cage"), c.attack_cage);
    }
    if (j.contains("attack_ifgm")) {
        read_attack(j.at("attack_ifgm"), c.attack_ifgm);
    }
    if (j.contains("defense")) {
        const json& d = j.at("defense");
        take(d, "srs_drop", c.defense.srs_drop);
        take(d, "sor_k", c.defense.sor_k);
        take(d, "sor_alpha", c.defense.sor_alpha);
        take(d, "seed", c.defense.seed);
    }
    take(j, "srs_seeds", c.srs_seeds);
    if (j.contains("metrics")) {
        const json& m = j.at("metrics");
        take(m, "knn_k", c.metrics.knn_k);
        take(m, "curv_k", c.metrics.curv_k);
        take(m, "csd_k", c.metrics.csd_k);
        take(m, "lap_k", c.metrics.lap_k);
        take(m, "uni_balls", c.metrics.uni_balls);
        take(m, "uni_radius", c.metrics.uni_radius);
        take(m, "seed", c.metrics.seed);
    }
    take(j, "samples", c.samples);
    take(j, "threads", c.threads);
    take(j, "out", c.out);
}

ExperimentConfig default_config() {
    ExperimentConfig c;
    fill_seeds(c);
    return c;
}

ExperimentConfig load_config(const fs::path& path) {
    ExperimentConfig c;
    try {
        from_json(json::parse(text_of(path)), c);
    } catch (const json::exception& e) {
        throw InputError(fmt::format("{}: {}", path.string(), e.what()));
    }
    if (!c.dataset.manifest.empty() && fs::path(c.dataset.manifest).is_relative()) {
        c.dataset.manifest = (path.parent_path() / c.dataset.manifest).string();
    }
    return c;
}

std::string cloud_hash(const Points3d& points) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        for (int d = 0; d < 3; ++d) {
            const double v = points(i, d);
            h = fnv1a(&v, sizeof v, h);
        }
    }
    return hex(h);
}

std::string variant_name(CageVariant v) {
    if (v.subdivide && v.optimize) {
        return "full";
    }
    if (v.optimize) {
        return "no-subdiv";
    }
    if (v.subdivide) {
        return "no-opt";
    }
    return "neither";
}

CageVariant parse_variant(const std::string& name) {
    if (name == "full") {
        return {true, true};
    }
    if (name == "no-subdiv") {
        return {false, true};
    }
    if (name == "no-opt") {
        return {true, false};
    }
    if (name == "neither") {
        return {false, false};
    }
    throw InputError(fmt::format("unknown ablation variant '{}'", name));
}

void write_dataset(const fs::path& dir, const Dataset& dataset) {
    fs::create_directories(dir / "clouds");
    json samples = json::array();
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
        const std::string name = fmt::format("clouds/{:05d}.xyz", i);
        io::write_xyz(dir / name, dataset.samples[i].points);
        samples.push_back({{"path", name}, {"label", dataset.samples[i].label.value_or(-1)}});
    }
    write_text(dir / "manifest.json",
               json{{"class_names", dataset.class_names}, {"samples", samples}}.dump(2) + "\n");
}

Dataset read_dataset(const fs::path& manifest) {
    if (!fs::exists(manifest)) {
        throw InputError(fmt::format("dataset manifest {} not found", manifest.string()));
    }
    Dataset out;
    try {
        const json j = json::parse(text_of(manifest));
        j.at("class_names").get_to(out.class_names);
        for (const json& s : j.at("samples")) {
            const fs::path file = manifest.parent_path() / s.at("path").get<std::string>();
            if (!fs::exists(file)) {
                throw InputError(fmt::format("sample file {} not found", file.string()));
            }
            const int label = s.at("label").get<int>();
            if (label < 0 || label >= static_cast<int>(out.class_names.size())) {
                throw InputError(fmt::format("{}: label {} out of range", file.string(), label));
            }
            out.samples.push_back(normalize(PointCloud{io::read_points(file), label}));
        }
    } catch (const json::exception& e) {
        throw InputError(fmt::format("{}: {}", manifest.string(), e.what()));
    } catch (const FormatError& e) {
        throw InputError(e.what());
    } catch (const DegenerateInputError& e) {
        throw InputError(e.what());
    }
    if (out.samples.empty()) {
        throw InputError(fmt::format("{}: no samples", manifest.string()));
    }
    return out;
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& body) {
    std::size_t workers = threads > 0 ? static_cast<std::size_t>(threads)
                                      : std::max(1u, std::thread::hardware_concurrency());
    workers = std::min(workers, n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            body(i);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) {
                        failure = std::current_exception();
                    }
                }
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
}

MetricReport aggregate(const Dataset& dataset, std::span<const SampleResult> results,
                       const MetricParams& params) {
    if (results.empty()) {
        throw EmptyResultsError("no attack results to aggregate");
    }
    std::vector<MetricReport> per(results.size());
    for (std::size_t i = 0; i < results.size(); ++i) {
        per[i] = measure(dataset.samples[results[i].index].points, results[i].result.adversarial, params);
    }
    MetricReport sum;
    std::size_t successes = 0;
    for (std::size_t i = 0; i < results.size(); ++i) {
        successes += results[i].result.success ? 1 : 0;
        sum.csd += per[i].csd;
        sum.curv += per[i].curv;
        sum.uni += per[i].uni;
        sum.knn += per[i].knn;
        sum.lap += per[i].lap;
    }
    const double n = static_cast<double>(results.size());
    sum.asr = static_cast<double>(successes) / n;
    sum.csd /= n;
    sum.curv /= n;
    sum.uni /= n;
    sum.knn /= n;
    sum.lap /= n;
    return sum;
}

Experiment::Experiment(ExperimentConfig config) : config_(std::move(config)), out_(config_.out) {
    fill_seeds(config_);
    config_.validate();
    fs::create_directories(out_);
}

void Experiment::record(const fs::path& file) {
    std::lock_guard lock(log_mutex_);
    written_.push_back(fs::relative(file, out_).generic_string());
}

void Experiment::warn(std::string message) {
    std::lock_guard lock(log_mutex_);
    fmt::print(stderr, "warning: {}\n", message);
    warnings_.push_back(std::move(message));
}

void Experiment::time(const std::string& stage, double seconds) { timings_[stage] += seconds; }

std::string Experiment::model_key() const {
    if (!config_.model_path.empty()) {
        return hex(fnv1a(text_of(config_.model_path)), 8);
    }
    return hex(fnv1a(dataset_json(config_.dataset).dump() + train_json(config_.train).dump()), 8);
}

std::string Experiment::cage_key(CageVariant variant) const {
    return variant_name(variant) + "-" +
           hex(fnv1a(dataset_json(config_.dataset).dump() + cage_json(config_.cage).dump()), 8);
}

std::string Experiment::attack_key(AttackKind kind, CageVariant variant) const {
    if (kind == AttackKind::Ifgm) {
        return "ifgm-" + hex(fnv1a(model_key() + attack_json(config_.attack_ifgm).dump()), 8);
    }
    return "cage-" + variant_name(variant) + "-" +
           hex(fnv1a(model_key() + cage_key(variant) + attack_json(config_.attack_cage).dump()), 8);
}

const Dataset& Experiment::dataset() {
    if (dataset_) {
        return *dataset_;
    }
    const auto start = std::chrono::steady_clock::now();
    if (!config_.dataset.manifest.empty()) {
        dataset_ = read_dataset(config_.dataset.manifest);
    } else {
        SynthDataset synth = generate_synth(config_.dataset.seed, config_.dataset.per_class, config_.dataset.points);
        dataset_ = Dataset{std::move(synth.samples), std::move(synth.class_names)};
        const fs::path dir = out_ / "data" / hex(fnv1a(dataset_json(config_.dataset).dump()), 8);
        if (!fs::exists(dir / "manifest.json")) {
            write_dataset(dir, *dataset_);
        }
        record(dir / "manifest.json");
    }
    time("dataset", seconds_since(start));
    return *dataset_;
}

const ClassifierModel& Experiment::model() {
    if (model_) {
        return *model_;
    }
    const Dataset& data = dataset();
    if (!config_.model_path.empty()) {
        if (!fs::exists(config_.model_path)) {
            throw InputError(fmt::format("model file {} not found", config_.model_path));
        }
        try {
            model_ = load_model(config_.model_path);
        } catch (const FormatError& e) {
            throw InputError(e.what());
        }
        if (model_->num_classes() != static_cast<int>(data.class_names.size())) {
            throw InputError("model class count does not match the dataset");
        }
        train_report_ = TrainReport{};
        return *model_;
    }
    const fs::path dir = out_ / "models" / model_key();
    const fs::path model_file = dir / "model.bin";
    const fs::path report_file = dir / "train_report.json";
    if (!fs::exists(model_file) || !fs::exists(report_file)) {
        const auto start = std::chrono::steady_clock::now();
        ClassifierModel fresh(static_cast<int>(data.class_names.size()), config_.train.seed);
        const TrainReport rep = train(fresh, data.samples, config_.train, [](const EpochStats& s) {
            fmt::print("epoch {:3d}  loss {:.4f}  train {:.3f}  test {:.3f}\n", s.epoch, s.train_loss,
                       s.train_accuracy, s.test_accuracy);
        });
        time("train", seconds_since(start));
        fs::create_directories(dir);
        save_model(model_file, fresh);
        json epochs = json::array();
        for (const auto& e : rep.epochs) {
            epochs.push_back({{"epoch", e.epoch},
                              {"train_loss", e.train_loss},
                              {"train_accuracy", e.train_accuracy},
                              {"test_accuracy", e.test_accuracy}});
        }
        write_text(report_file, json{{"seed", config_.train.seed},
                                     {"test_accuracy", rep.final_test_accuracy()},
                                     {"epochs", epochs}}
                                        .dump(2) + "\n");
    }
    record(model_file);
    record(report_file);
    model_ = load_model(model_file);
    TrainReport rep;
    const json stored = json::parse(text_of(report_file));
    for (const json& e : stored.at("epochs")) {
        rep.epochs.push_back({e.at("epoch").get<int>(), e.at("train_loss").get<double>(),
                              e.at("train_accuracy").get<double>(), e.at("test_accuracy").get<double>()});
    }
    train_report_ = std::move(rep);
    return *model_;
}

const TrainReport& Experiment::train_report() {
    model();
    return *train_report_;
}

const std::vector<std::size_t>& Experiment::attack_samples() {
    if (attack_samples_) {
        return *attack_samples_;
    }
    const Dataset& data = dataset();
    const ClassifierModel& net = model();
    const DatasetSplit split = split_dataset(data.samples.size(), config_.train.train_fraction, config_.train.seed);
    std::vector<std::size_t> picked;
    for (std::size_t idx : split.test) {
        if (static_cast<int>(picked.size()) >= config_.samples) {
            break;
        }
        if (predict(net, data.samples[idx].points) == data.samples[idx].label) {
            picked.push_back(idx);
        }
    }
    if (picked.empty()) {
        throw EmptyResultsError("no correctly classified test sample to attack");
    }
    if (static_cast<int>(picked.size()) < config_.samples) {
        warn(fmt::format("only {} correctly classified test samples available", picked.size()));
    }
    attack_samples_ = std::move(picked);
    return *attack_samples_;
}

CageArtifacts Experiment::ensure_cage(std::size_t index, CageVariant variant) {
    const PointCloud& cloud = dataset().samples.at(index);
    CageArtifacts art;
    art.dir = out_ / "cages" / cage_key(variant) / cloud_hash(cloud.points);
    const char* stages[] = {"initial.obj", "subdivided.obj", "optimized.obj"};
    bool cached = fs::exists(art.dir / "coords.bin") && fs::exists(art.dir / "build_log.jsonl");
    for (const char* s : stages) {
        cached = cached && fs::exists(art.dir / s);
    }
    if (!cached) {
        const CageBuild build = build_cage(cloud, config_.cage, variant);
        check_mesh(build.initial, "initial cage");
        check_mesh(build.subdivided, "subdivided cage");
        check_mesh(build.optimized, "optimized cage");
        const CoordinateMatrix coords = bind(build.optimized, cloud);
        fs::create_directories(art.dir);
        io::write_obj(art.dir / "initial.obj", build.initial);
        io::write_obj(art.dir / "subdivided.obj", build.subdivided);
        io::write_obj(art.dir / "optimized.obj", build.optimized);
        save_coordinates(art.dir / "coords.bin", coords);
        std::string log;
        for (std::size_t i = 0; i < build.log.size(); ++i) {
            json line = loss_json(build.log[i]);
            line["iter"] = i;
            log += line.dump() + "\n";
        }
        write_text(art.dir / "build_log.jsonl", log);
    }
    for (const char* s : stages) {
        record(art.dir / s);
    }
    record(art.dir / "coords.bin");
    record(art.dir / "build_log.jsonl");
    art.initial = io::read_obj(art.dir / "initial.obj");
    art.subdivided = io::read_obj(art.dir / "subdivided.obj");
    art.optimized = io::read_obj(art.dir / "optimized.obj");
    art.coords = load_coordinates(art.dir / "coords.bin");
    return art;
}

std::vector<SampleResult> Experiment::ensure_attack(AttackKind kind, CageVariant variant) {
    const std::string key = attack_key(kind, variant);
    if (auto it = attacks_.find(key); it != attacks_.end()) {
        return it->second;
    }
    const Dataset& data = dataset();
    const ClassifierModel& net = model();
    const std::vector<std::size_t>& picked = attack_samples();
    const AttackConfig& cfg = kind == AttackKind::Cage ? config_.attack_cage : config_.attack_ifgm;
    const fs::path dir = out_ / "results" / key;
    fs::create_directories(dir);

    const auto start = std::chrono::steady_clock::now();
    std::vector<std::optional<SampleResult>> slots(picked.size());
    parallel_for(picked.size(), config_.threads, [&](std::size_t s) {
        const std::size_t idx = picked[s];
        const PointCloud& cloud = data.samples[idx];
        SampleResult r;
        r.hash = cloud_hash(cloud.points);
        r.index = idx;
        r.label = *cloud.label;
        const fs::path stem = dir / r.hash;
        const fs::path meta = fs::path(stem).concat(".json");
        const fs::path bin = fs::path(stem).concat(".bin");
        const fs::path ply = fs::path(stem).concat(".ply");
        if (!fs::exists(meta) || !fs::exists(bin)) {
            if (kind == AttackKind::Cage) {
                CageArtifacts cage;
                try {
                    cage = ensure_cage(idx, variant);
                } catch (const GeometryError& e) {
                    warn(fmt::format("{}: sample {} skipped, no cage: {}", key, r.hash, e.what()));
                    return;
                } catch (const OutsideCageError& e) {
                    warn(fmt::format("{}: sample {} skipped, no cage: {}", key, r.hash, e.what()));
                    return;
                }
                r.result = cage_attack(net, cloud, r.label, cage.optimized, cage.coords, cfg);
                io::write_matrix(fs::path(stem).concat(".offsets.bin"), r.result.cage_offsets);
            } else {
                r.result = ifgm_attack(net, cloud, r.label, cfg);
            }
            io::write_matrix(bin, r.result.adversarial);
            io::write_ply(ply, r.result.adversarial);
            write_text(meta, result_json(r, kind, cfg.seed).dump(2) + "\n");
        }
        const json j = json::parse(text_of(meta));
        r.result.adversarial = io::read_matrix(bin);
        r.result.success = j.at("success").get<bool>();
        r.result.predicted = j.at("predicted").get<int>();
        r.result.iterations = j.at("iters").get<int>();
        r.result.l_mis = j.at("l_mis").get<double>();
        r.result.d_i = j.at("d_i").get<double>();
        r.result.displacement = r.result.adversarial - cloud.points;
        if (fs::exists(fs::path(stem).concat(".offsets.bin"))) {
            r.result.cage_offsets = io::read_matrix(fs::path(stem).concat(".offsets.bin"));
        }
        record(meta);
        record(bin);
        slots[s] = std::move(r);
    });
    time("attack " + key, seconds_since(start));

    std::vector<SampleResult> results;
    for (auto& slot : slots) {
        if (slot) {
            results.push_back(std::move(*slot));
        }
    }
    std::sort(results.begin(), results.end(),
              [](const SampleResult& a, const SampleResult& b) { return a.hash < b.hash; });
    if (results.empty()) {
        throw EmptyResultsError(fmt::format("{}: no attack results", key));
    }
    attacks_[key] = results;
    return results;
}

std::vector<NaturalnessRow> Experiment::naturalness() {
    const auto cage = ensure_attack(AttackKind::Cage);
    const auto ifgm = ensure_attack(AttackKind::Ifgm);
    return {{"cage", aggregate(dataset(), cage, config_.metrics)},
            {"ifgm", aggregate(dataset(), ifgm, config_.metrics)}};
}

std::vector<DefenseRow> Experiment::defenses() {
    const auto cage = ensure_attack(AttackKind::Cage);
    const auto ifgm = ensure_attack(AttackKind::Ifgm);
    const ClassifierModel& net = model();
    auto cases = [](const std::vector<SampleResult>& results) {
        std::vector<DefenseCase> out;
        for (const auto& r : results) {
            out.push_back({&r.result.adversarial, r.label});
        }
        return out;
    };
    const auto cage_cases = cases(cage);
    const auto ifgm_cases = cases(ifgm);
    const DefenseConfig& d = config_.defense;

    auto srs_stats = [&](const std::vector<DefenseCase>& cs, const std::vector<SampleResult>& results) {
        std::vector<double> rates;
        for (int run = 0; run < config_.srs_seeds; ++run) {
            // Keyed by sample identity so both attacks drop with the same stream per sample.
            const Defense drop = [&, run](const PointCloud& c, std::size_t s) {
                const std::uint64_t id = std::stoull(results[s].hash, nullptr, 16);
                return srs(c, d.srs_drop, derive(derive(d.seed, static_cast<std::uint64_t>(run)), id));
            };
            rates.push_back(evaluate_under_defense(net, cs, drop));
        }
        double mean = 0.0;
        for (double r : rates) {
            mean += r;
        }
        mean /= static_cast<double>(rates.size());
        double ci = 0.0;
        if (rates.size() > 1) {
            double var = 0.0;
            for (double r : rates) {
                var += (r - mean) * (r - mean);
            }
            var /= static_cast<double>(rates.size() - 1);
            const boost::math::students_t dist(static_cast<double>(rates.size() - 1));
            ci = boost::math::quantile(boost::math::complement(dist, 0.025)) *
                 std::sqrt(var / static_cast<double>(rates.size()));
        }
        return std::pair{mean, ci};
    };
    const Defense outlier = [&](const PointCloud& c, std::size_t) { return sor(c, d.sor_k, d.sor_alpha); };
    const Defense none = [](const PointCloud& c, std::size_t) { return c; };

    std::vector<DefenseRow> rows;
    rows.push_back({"none", evaluate_under_defense(net, cage_cases, none), 0.0,
                    evaluate_under_defense(net, ifgm_cases, none), 0.0});
    const auto [cs, cci] = srs_stats(cage_cases, cage);
    const auto [is, ici] = srs_stats(ifgm_cases, ifgm);
    rows.push_back({"srs", cs, cci, is, ici});
    rows.push_back({"sor", evaluate_under_defense(net, cage_cases, outlier), 0.0,
                    evaluate_under_defense(net, ifgm_cases, outlier), 0.0});
    return rows;
}

std::vector<AblationRow> Experiment::ablation() {
    std::vector<AblationRow> rows;
    for (CageVariant v : {CageVariant{false, false}, CageVariant{true, false}, CageVariant{false, true},
                          CageVariant{true, true}}) {
        rows.push_back({v, aggregate(dataset(), ensure_attack(AttackKind::Cage, v), config_.metrics)});
    }
    return rows;
}

void Experiment::write_naturalness_table() {
    std::string text = "attack,asr,csd,curv,uni,knn,lap\n";
    for (const auto& row : naturalness()) {
        text += row.attack + "," + metric_cells(row.report) + "\n";
    }
    write_text(out_ / "tables" / "naturalness.csv", text);
    record(out_ / "tables" / "naturalness.csv");
}

void Experiment::write_defense_table() {
    std::string text = "defense,cage_asr,cage_ci95,ifgm_asr,ifgm_ci95\n";
    for (const auto& row : defenses()) {
        text += fmt::format("{},{},{},{},{}\n", row.defense, number(row.cage_asr), number(row.cage_ci95),
                            number(row.ifgm_asr), number(row.ifgm_ci95));
    }
    write_text(out_ / "tables" / "defense.csv", text);
    record(out_ / "tables" / "defense.csv");
}

void Experiment::write_ablation_table() {
    std::string text = "subdivision,optimization,asr,csd,curv,uni,knn,lap\n";
    for (const auto& row : ablation()) {
        text += fmt::format("{},{},{}\n", row.variant.subdivide ? "on" : "off", row.variant.optimize ? "on" : "off",
                            metric_cells(row.report));
    }
    write_text(out_ / "tables" / "ablation.csv", text);
    record(out_ / "tables" / "ablation.csv");
}

void Experiment::report() {
    write_naturalness_table();
    write_defense_table();
    write_ablation_table();
    const fs::path tables = out_ / "tables";
    const json meta = {
        {"scales", {{"csd", MetricScale::csd}, {"curv", MetricScale::curv}, {"knn", MetricScale::knn}}},
        {"params", metrics_json(config_.metrics)},
        {"averaging", "mean over every attacked sample, successful or not"},
        {"formulas",
         {{"knn", "mean over points of the mean distance to the knn_k nearest neighbours in P'"},
          {"curv", "mean over p' of |sv(p') - sv(nn_P(p'))|, sv = surface variation over curv_k neighbours"},
          {"csd", "mean over p' of |std of sv in the csd_k-neighbourhood of p' in P' - same for nn_P(p') in P|"},
          {"uni", "mean over uni_balls FPS-seeded balls of radius uni_radius * diameter of the chi-square count "
                  "deviation from N r^2 plus the mean of (d - d0)^2 / d0 over intra-ball nearest-neighbour "
                  "distances d, d0 = sqrt(2 pi r^2 / (n sqrt 3)) for n points in the ball"},
          {"lap", "mean over i of |delta'_i - delta_i|, delta = p - mean of lap_k nearest neighbours in its own "
                  "cloud"}}}};
    write_text(tables / "metrics_meta.json", meta.dump(2) + "\n");
    record(tables / "metrics_meta.json");
    write_manifest();
}

void Experiment::write_manifest() {
    json results = json::object();
    for (const auto& [key, list] : attacks_) {
        json files = json::array();
        for (const auto& r : list) {
            files.push_back(fmt::format("results/{}/{}.json", key, r.hash));
        }
        results[key] = files;
    }
    std::vector<std::string> files = written_;
    std::sort(files.begin(), files.end());
    files.erase(std::unique(files.begin(), files.end()), files.end());
    json tables = json::array();
    for (const auto& f : files) {
        if (f.rfind("tables/", 0) == 0) {
            tables.push_back(f);
        }
    }
    const json manifest = {{"version", kVersion},       {"config", config_},      {"results", results},
                           {"tables", tables},          {"files", files},         {"warnings", warnings_},
                           {"timings_seconds", timings_}};
    write_text(out_ / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace cageadv::pipeline
