#pragma once

#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "icueval/errors.hpp"
#include "icueval/finetune.hpp"
#include "icueval/runner.hpp"

namespace icueval {

/// 0 success, 1 usage/config error, 2 data error, 3 backend error.
inline int exit_code_for(const Error& e) {
    switch (e.code()) {
        case errc::config_invalid:
        case errc::invalid_argument:
        case errc::template_error:
            return 1;
        case errc::network:
        case errc::rate_limited:
        case errc::auth_missing:
        case errc::replay_miss:
            return 3;
        default:
            return 2;
    }
}

namespace cli_detail {

struct GlobalFlags {
    std::string config_path;
    std::string replay_path;
    std::string mode;
    std::string out_dir;
    std::int64_t seed = -1;
    bool seed_set = false;
};

inline ExperimentConfig load_with_overrides(const GlobalFlags& flags) {
    ExperimentConfig config = load_config(flags.config_path);
    if (!flags.replay_path.empty()) config.replay_store_path = flags.replay_path;
    if (!flags.mode.empty()) {
        auto mode = parse_completion_mode(flags.mode);
        if (!mode) throw Error(errc::config_invalid, "mode must be live, record, or replay");
        config.mode = *mode;
    }
    if (!flags.out_dir.empty()) config.out_dir = flags.out_dir;
    if (flags.seed_set) config.seed = static_cast<std::uint64_t>(flags.seed);
    return config;
}

inline void add_global_flags(CLI::App* cmd, GlobalFlags& flags, bool config_required = true) {
    auto* opt = cmd->add_option("--config", flags.config_path, "experiment config file");
    if (config_required) opt->required();
    cmd->add_option("--replay", flags.replay_path, "replay store path (overrides config)");
    cmd->add_option("--mode", flags.mode, "live, record, or replay (overrides config)");
    cmd->add_option("--out", flags.out_dir, "output directory (overrides config)");
    cmd->add_option("--seed", flags.seed, "seed (overrides config)")
        ->each([&](const std::string&) { flags.seed_set = true; });
}

inline std::set<ReportFormat> parse_formats(const std::vector<std::string>& names) {
    std::set<ReportFormat> formats;
    for (const auto& name : names) {
        if (name == "markdown" || name == "md") formats.insert(ReportFormat::markdown);
        else if (name == "csv") formats.insert(ReportFormat::csv);
        else if (name == "plotdata") formats.insert(ReportFormat::plotdata);
        else throw Error(errc::config_invalid, "unknown report format '" + name + "'");
    }
    return formats;
}

} // namespace cli_detail

/// The batch evaluation CLI. Subcommands: ingest-check, cohort, run, score,
/// export-finetune, report.
inline int cli_main(int argc, const char* const* argv) {
    CLI::App app{"ICU chat-completion evaluation harness"};
    app.require_subcommand(1);

    cli_detail::GlobalFlags flags;

    auto* ingest_check = app.add_subcommand("ingest-check", "validate the configured data files");
    cli_detail::add_global_flags(ingest_check, flags);

    auto* cohort_cmd = app.add_subcommand("cohort", "list stay ids matching the cohort filter");
    cli_detail::add_global_flags(cohort_cmd, flags);

    auto* run_cmd = app.add_subcommand("run", "run the configured experiment end to end");
    cli_detail::add_global_flags(run_cmd, flags);

    auto* score_cmd = app.add_subcommand("score", "re-score a run's stored transcripts offline");
    cli_detail::add_global_flags(score_cmd, flags);
    std::string score_artifact_dir;
    score_cmd->add_option("--artifact", score_artifact_dir, "previous run directory")->required();

    auto* export_cmd = app.add_subcommand("export-finetune", "export the balanced fine-tuning dataset");
    cli_detail::add_global_flags(export_cmd, flags);

    auto* report_cmd = app.add_subcommand("report", "re-render reports from a run directory");
    std::string report_artifact_dir;
    std::vector<std::string> report_formats{"markdown", "csv", "plotdata"};
    std::string report_out;
    report_cmd->add_option("--artifact", report_artifact_dir, "run directory")->required();
    report_cmd->add_option("--formats", report_formats, "markdown, csv, plotdata");
    report_cmd->add_option("--out", report_out, "output directory (defaults to the run directory)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (ingest_check->parsed()) {
            ExperimentConfig config = cli_detail::load_with_overrides(flags);
            auto patients = load_patients(config.patient_path);
            auto diagnoses = load_diagnoses(config.diagnosis_path);
            auto treatments = load_treatments(config.treatment_path);
            auto vitals = load_vitals(config.vitals_path);
            auto assembled =
                assemble_records(patients.rows, diagnoses.rows, treatments.rows, vitals.rows);
            std::cout << "patient: " << patients.rows.size() << " rows, "
                      << patients.skipped.size() << " skipped\n";
            std::cout << "diagnosis: " << diagnoses.rows.size() << " rows, "
                      << diagnoses.skipped.size() << " skipped, orphans "
                      << assembled.orphan_diagnoses << "\n";
            std::cout << "treatment: " << treatments.rows.size() << " rows, "
                      << treatments.skipped.size() << " skipped, orphans "
                      << assembled.orphan_treatments << "\n";
            std::cout << "vitals: " << vitals.rows.size() << " rows, " << vitals.skipped.size()
                      << " skipped, orphans " << assembled.orphan_vitals << "\n";
            std::cout << "records: " << assembled.records.size() << "\n";
            for (const auto& table : {&patients.skipped, &diagnoses.skipped, &treatments.skipped,
                                      &vitals.skipped}) {
                for (const auto& issue : *table) {
                    std::cerr << "row " << issue.row_number << ": " << issue.message << "\n";
                }
            }
            return 0;
        }
        if (cohort_cmd->parsed()) {
            ExperimentConfig config = cli_detail::load_with_overrides(flags);
            auto patients = load_patients(config.patient_path);
            auto diagnoses = load_diagnoses(config.diagnosis_path);
            auto treatments = load_treatments(config.treatment_path);
            auto vitals = load_vitals(config.vitals_path);
            auto assembled =
                assemble_records(patients.rows, diagnoses.rows, treatments.rows, vitals.rows);
            for (const auto& record : filter_cohort(assembled.records, config.cohort)) {
                std::cout << record.stay.stay_id.value << "\n";
            }
            return 0;
        }
        if (run_cmd->parsed()) {
            ExperimentConfig config = cli_detail::load_with_overrides(flags);
            RunArtifact artifact = run_experiment(config);
            std::cout << "wrote " << artifact.trials.size() << " trials to " << config.out_dir
                      << "\n";
            if (backend_dead(artifact)) {
                std::cerr << "error: no trial obtained a completion; see the trial notes\n";
                return 3;
            }
            return 0;
        }
        if (score_cmd->parsed()) {
            ExperimentConfig config = cli_detail::load_with_overrides(flags);
            RunArtifact artifact = rescore_artifact(config, score_artifact_dir);
            std::cout << "re-scored " << artifact.trials.size() << " trials into "
                      << config.out_dir << "\n";
            return 0;
        }
        if (export_cmd->parsed()) {
            ExperimentConfig config = cli_detail::load_with_overrides(flags);
            if (!config.finetune) {
                throw Error(errc::config_invalid, "config has no finetune section");
            }
            auto patients = load_patients(config.patient_path);
            auto diagnoses = load_diagnoses(config.diagnosis_path);
            auto treatments = load_treatments(config.treatment_path);
            auto vitals = load_vitals(config.vitals_path);
            auto assembled =
                assemble_records(patients.rows, diagnoses.rows, treatments.rows, vitals.rows);
            auto pool = filter_cohort(assembled.records, config.cohort);
            const auto& params = *config.finetune;
            std::filesystem::path out_path(params.out_path);
            if (out_path.is_relative()) {
                std::filesystem::create_directories(config.out_dir);
                out_path = std::filesystem::path(config.out_dir) / out_path;
            }
            std::set<std::int64_t> exclude(params.test_stay_ids.begin(),
                                           params.test_stay_ids.end());
            ExportManifest manifest =
                export_dataset(pool, params.n_per_class, params.seed.value_or(config.seed),
                               out_path.string(), exclude);
            std::cout << "wrote " << manifest.alive_count + manifest.expired_count
                      << " samples to " << out_path.string() << " (digest "
                      << manifest.content_digest << ")\n";
            return 0;
        }
        if (report_cmd->parsed()) {
            RunArtifact artifact = load_artifact(report_artifact_dir);
            std::string out = report_out.empty() ? report_artifact_dir : report_out;
            for (const auto& path :
                 emit_report(artifact, cli_detail::parse_formats(report_formats), out)) {
                std::cout << path << "\n";
            }
            return 0;
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

} // namespace icueval
