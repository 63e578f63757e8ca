// Command-line front end: one subcommand per pipeline stage plus full runs.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "demf/error.hpp"
#include "demf/runner.hpp"

using namespace demf;

namespace {

struct CommonFlags {
    std::string config;
    std::string output;
    std::optional<long long> seed_override;
    bool dry_run = false;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool need_config = true) {
    auto* opt = cmd->add_option("--config", f.config, "experiment config (JSON)");
    if (need_config) opt->required()->check(CLI::ExistingFile);
    cmd->add_option("--output", f.output, "output directory (overrides output_dir)");
    cmd->add_option("--seed-override", f.seed_override, "run a single seed instead of the configured list");
    cmd->add_flag("--dry-run", f.dry_run, "linear stub member and a few autoencoder steps");
}

ExperimentConfig resolve(const CommonFlags& f) {
    ExperimentConfig cfg = f.config.empty() ? ExperimentConfig{} : load_config(f.config);
    if (!f.output.empty()) cfg.output_dir = f.output;
    if (f.seed_override) {
        if (*f.seed_override < 0) throw ConfigError("--seed-override must be >= 0");
        cfg.seeds = {static_cast<std::uint64_t>(*f.seed_override)};
    }
    if (f.dry_run) cfg.dry_run = true;
    cfg.validate();
    compute_device();
    return cfg;
}

void print_summary(const EvaluationReport& report) {
    std::printf("%-8s %-18s %-16s %-9s %-9s %-9s %-9s\n", "seed", "cell", "classifier", "accuracy", "f1", "precision",
                "recall");
    for (const auto& r : report.rows) {
        if (r.test_set != "primary") continue;
        std::printf("%-8llu %-18s %-16s %-9s %-9s %-9s %-9s\n", static_cast<unsigned long long>(r.seed), r.cell.c_str(),
                    r.classifier.c_str(), format_metric(r.metrics.accuracy).c_str(), format_metric(r.metrics.f1).c_str(),
                    format_metric(r.metrics.precision).c_str(), format_metric(r.metrics.recall).c_str());
    }
    for (const auto& s : report.localization)
        if (s.correct_positives)
            std::printf("attention seed %llu %s: %d/%d peaks inside the tumour box\n",
                        static_cast<unsigned long long>(s.seed), s.cell.c_str(), s.peak_in_box, s.correct_positives);
}

void run_stage(Stage stage, const ExperimentConfig& cfg) {
    if (stage == Stage::report) {
        const auto report = assemble_report(cfg, 0.0);
        write_report_outputs(cfg, report);
        print_summary(report);
        return;
    }
    if (stage == Stage::generate) save_config(cfg.output_dir / "config.json", cfg);
    for (auto seed : cfg.seeds) {
        try {
            switch (stage) {
            case Stage::generate: stages::generate(cfg, seed); break;
            case Stage::fuse: stages::fuse(cfg, seed); break;
            case Stage::train: stages::train(cfg, seed); break;
            case Stage::evaluate: {
                std::map<std::string, long> audit;
                stages::evaluate(cfg, seed, audit);
                break;
            }
            case Stage::explain: stages::explain(cfg, seed); break;
            case Stage::report: break;
            }
        } catch (const StageError&) {
            throw;
        } catch (const std::exception& ex) {
            throw StageError(std::string(to_string(stage)), ex.what());
        }
        std::printf("%s: seed %llu done\n", std::string(to_string(stage)).c_str(), static_cast<unsigned long long>(seed));
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multimodal PET/CT fusion and ensemble classification pipeline"};
    app.require_subcommand(1);

    CommonFlags flags;
    std::string stage_name;

    struct StageCmd {
        const char* name;
        Stage stage;
        const char* help;
    };
    const StageCmd stage_cmds[] = {
        {"generate", Stage::generate, "generate or ingest slices and write the split manifest"},
        {"fuse", Stage::fuse, "train fusion autoencoders and fuse every slice per cell"},
        {"train", Stage::train, "augment the train split and train the ensemble members"},
        {"evaluate", Stage::evaluate, "evaluate members and ensemble on the test split"},
        {"explain", Stage::explain, "Grad-CAM localization scores and attention overlays"},
        {"report", Stage::report, "assemble report.json, report.csv and accuracy charts"},
    };
    std::vector<std::pair<CLI::App*, Stage>> stage_apps;
    for (const auto& s : stage_cmds) {
        auto* cmd = app.add_subcommand(s.name, s.help);
        add_common(cmd, flags);
        stage_apps.emplace_back(cmd, s.stage);
    }
    auto* run = app.add_subcommand("run", "run the whole pipeline (or one --stage)");
    add_common(run, flags);
    run->add_option("--stage", stage_name, "run only this stage");
    auto* ablate = app.add_subcommand("ablate", "run the configured ablation grid");
    add_common(ablate, flags);
    auto* config = app.add_subcommand("config", "print the default (or resolved) config");
    add_common(config, flags, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        const ExperimentConfig cfg = resolve(flags);
        if (config->parsed()) {
            std::cout << config_to_json(cfg).dump(2) << '\n';
            return 0;
        }
        for (const auto& [cmd, stage] : stage_apps)
            if (cmd->parsed()) {
                run_stage(stage, cfg);
                return 0;
            }
        if (run->parsed() && !stage_name.empty()) {
            run_stage(stage_from_string(stage_name), cfg);
            return 0;
        }
        const auto t0 = std::chrono::steady_clock::now();
        const auto report = ablate->parsed() ? run_ablation(cfg) : run_pipeline(cfg);
        print_summary(report);
        std::printf("report: %s (%.1f s)\n", (cfg.output_dir / "report.json").string().c_str(),
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return 2;
    } catch (const CapabilityError& e) {
        std::cerr << "capability error: " << e.what() << '\n';
        return 2;
    } catch (const StageError& e) {
        std::cerr << "stage " << e.stage() << " failed: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
