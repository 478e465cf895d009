// Command-line front end for the cage attack experiment pipeline.

#include "cageadv/pipeline.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <optional>
#include <string>

namespace pl = cageadv::pipeline;

namespace {

struct Options {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<int> samples;
    std::string attack = "both";
    std::string ablation = "full";
};

pl::ExperimentConfig resolve(const Options& o) {
    pl::ExperimentConfig c;
    if (!o.config.empty()) {
        c = pl::load_config(o.config);
    }
    if (o.seed) {
        c.seed = *o.seed;
    }
    if (!o.out.empty()) {
        c.out = o.out;
    }
    if (o.samples) {
        c.samples = *o.samples;
    }
    return c;
}

void print_metrics(const std::string& name, const cageadv::MetricReport& m) {
    fmt::print("{:<16} asr {:.4f}  csd {:.4f}  curv {:.4f}  uni {:.4f}  knn {:.4f}  lap {:.4f}\n", name, m.asr,
               m.csd / cageadv::MetricScale::csd, m.curv / cageadv::MetricScale::curv, m.uni,
               m.knn / cageadv::MetricScale::knn, m.lap);
}

int run(CLI::App& app, const Options& o) {
    pl::Experiment exp(resolve(o));
    const std::string cmd = app.get_subcommands().front()->get_name();

    if (cmd == "gen-data") {
        const auto& data = exp.dataset();
        fmt::print("{} samples, {} classes\n", data.samples.size(), data.class_names.size());
    } else if (cmd == "train") {
        exp.model();
        fmt::print("test accuracy {:.4f}\n", exp.train_report().final_test_accuracy());
    } else if (cmd == "build-cage") {
        const cageadv::CageVariant variant = pl::parse_variant(o.ablation);
        for (std::size_t idx : exp.attack_samples()) {
            const pl::CageArtifacts art = exp.ensure_cage(idx, variant);
            fmt::print("{}  V={} F={}\n", art.dir.string(), art.optimized.vertex_count(),
                       art.optimized.face_count());
        }
    } else if (cmd == "attack") {
        const cageadv::CageVariant variant = pl::parse_variant(o.ablation);
        if (o.attack == "cage" || o.attack == "both") {
            const auto results = exp.ensure_attack(pl::AttackKind::Cage, variant);
            print_metrics("cage/" + o.ablation, pl::aggregate(exp.dataset(), results, exp.config().metrics));
        }
        if (o.attack == "ifgm" || o.attack == "both") {
            const auto results = exp.ensure_attack(pl::AttackKind::Ifgm);
            print_metrics("ifgm", pl::aggregate(exp.dataset(), results, exp.config().metrics));
        }
    } else if (cmd == "defend") {
        exp.write_defense_table();
        for (const auto& row : exp.defenses()) {
            fmt::print("{:<6} cage {:.4f} +/- {:.4f}  ifgm {:.4f} +/- {:.4f}\n", row.defense, row.cage_asr,
                       row.cage_ci95, row.ifgm_asr, row.ifgm_ci95);
        }
    } else if (cmd == "report") {
        exp.report();
        fmt::print("tables written to {}\n", (exp.out() / "tables").string());
    }
    exp.write_manifest();
    return pl::kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cage-based adversarial point cloud toolkit"};
    app.require_subcommand(1);
    Options o;
    app.add_option("--config", o.config, "JSON experiment config")->check(CLI::ExistingFile);
    app.add_option("--out", o.out, "Output directory");
    app.add_option("--seed", o.seed, "Global seed");
    app.add_option("--samples", o.samples, "Number of test clouds to attack");
    app.add_option("--attack", o.attack, "Attack to run")->check(CLI::IsMember({"cage", "ifgm", "both"}));
    app.add_option("--ablation", o.ablation, "Cage variant")
        ->check(CLI::IsMember({"full", "no-subdiv", "no-opt", "neither"}));
    app.fallthrough();
    app.add_subcommand("gen-data", "Generate the synthetic dataset");
    app.add_subcommand("train", "Train the classifier");
    app.add_subcommand("build-cage", "Build cages for the attacked samples");
    app.add_subcommand("attack", "Run attacks over the attacked samples");
    app.add_subcommand("defend", "Evaluate SRS and SOR against stored attacks");
    app.add_subcommand("report", "Write naturalness, defense and ablation tables");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : pl::kInputError;
    }
    try {
        return run(app, o);
    } catch (const pl::InputError& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return pl::kInputError;
    } catch (const cageadv::GeometryError& e) {
        fmt::print(stderr, "geometry validation failed: {}\n", e.what());
        return pl::kGeometryError;
    } catch (const cageadv::OutsideCageError& e) {
        fmt::print(stderr, "geometry validation failed: {}\n", e.what());
        return pl::kGeometryError;
    } catch (const pl::EmptyResultsError& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return pl::kEmptyResults;
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return 1;
    }
}
