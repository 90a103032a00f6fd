// mrgr — memory-retrieval generative recommender pipeline.
//
// Subcommands cover the whole experiment loop: prepare-data, train-backbone,
// build-memory, annotate, train-retriever, evaluate, compare, verify, config.
// Exit codes: 0 success; 2 user/input error (bad flags or config, malformed
// input files, missing or stale artifacts); 1 internal error.

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "mrgr/errors.hpp"
#include "mrgr/eval.hpp"
#include "mrgr/kernels.hpp"
#include "mrgr/pipeline.hpp"
#include "mrgr/run_config.hpp"

namespace {

struct GlobalOpts {
    std::string config_path;
    std::string out_dir;
    std::string kernels;
    std::vector<std::string> overrides;
    int64_t seed = -1;
    int64_t workers = -1;
};

mrgr::RunConfig resolve_config(const GlobalOpts& g, bool config_required) {
    mrgr::RunConfig cfg;
    if (!g.config_path.empty()) {
        cfg = mrgr::load_config(g.config_path);
    } else if (config_required) {
        throw mrgr::UsageError("--config is required for this subcommand");
    }
    for (const std::string& assignment : g.overrides) mrgr::apply_override(cfg, assignment);
    if (!g.out_dir.empty()) cfg.out_dir = g.out_dir;
    if (g.seed >= 0) cfg.seed = g.seed;
    if (g.workers >= 0) cfg.workers = g.workers;
    if (!g.kernels.empty()) cfg.kernels = g.kernels;
    cfg.validate();
    if (cfg.kernels != "auto") mrgr::kern::select(cfg.kernels);
    return cfg;
}

void add_global_opts(CLI::App* app, GlobalOpts& g, bool with_out = true) {
    app->add_option("-c,--config", g.config_path, "config file (key=value or JSON)");
    app->add_option("--set", g.overrides, "override one config key, key=value (repeatable)");
    if (with_out) app->add_option("--out", g.out_dir, "artifact directory (overrides out_dir)");
    app->add_option("--seed", g.seed, "override the master seed");
    app->add_option("--workers", g.workers, "worker threads (0 = number of cores)");
    app->add_option("--kernels", g.kernels, "compute kernels: auto|scalar|avx2|avx512|neon");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"memory-retrieval generative recommender pipeline"};
    app.require_subcommand(1);

    GlobalOpts g;

    // prepare-data
    auto* cmd_prepare = app.add_subcommand(
        "prepare-data", "ingest or synthesise events, filter, window and split");
    bool synthetic = false;
    std::string input_path;
    add_global_opts(cmd_prepare, g);
    cmd_prepare->add_flag("--synthetic", synthetic, "generate the synthetic benchmark");
    cmd_prepare->add_option("--input", input_path, "events JSONL file");

    // train-backbone
    auto* cmd_backbone =
        app.add_subcommand("train-backbone", "train the recommender backbone");
    add_global_opts(cmd_backbone, g);

    // build-memory
    auto* cmd_memory =
        app.add_subcommand("build-memory", "encode and store per-user memory vectors");
    add_global_opts(cmd_memory, g);

    // annotate
    auto* cmd_annotate = app.add_subcommand(
        "annotate", "score every memory's effect on the training targets");
    add_global_opts(cmd_annotate, g);

    // train-retriever
    auto* cmd_retriever =
        app.add_subcommand("train-retriever", "distil the annotations into the retriever");
    add_global_opts(cmd_retriever, g);

    // evaluate
    auto* cmd_eval = app.add_subcommand("evaluate", "full-ranking evaluation of one variant");
    std::string variant;
    std::string split_name = "test";
    add_global_opts(cmd_eval, g);
    cmd_eval->add_option("--variant", variant,
                         "no_memory|random|semantic|oracle|learned")
        ->required();
    cmd_eval->add_option("--split", split_name, "train|val|test (default test)");

    // compare
    auto* cmd_compare =
        app.add_subcommand("compare", "tabulate reports and export the audit CSV");
    std::vector<std::string> report_paths;
    add_global_opts(cmd_compare, g);
    cmd_compare->add_option("--report", report_paths,
                            "report JSON (repeatable; default: all reports in out_dir)");

    // verify
    auto* cmd_verify =
        app.add_subcommand("verify", "check every recorded artifact hash in out_dir");
    add_global_opts(cmd_verify, g);

    // config
    auto* cmd_config = app.add_subcommand("config", "inspect configuration");
    bool dump = false;
    add_global_opts(cmd_config, g);
    cmd_config->add_flag("--dump", dump, "print every key with its current (or default) value");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        // help/version exit 0; every real parse failure is a usage error
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (cmd_config->parsed()) {
            mrgr::RunConfig cfg = resolve_config(g, /*config_required=*/false);
            if (dump) {
                std::fputs(mrgr::annotated_dump(cfg).c_str(), stdout);
            } else {
                std::printf("config_hash = %s\n", mrgr::config_hash(cfg).c_str());
                std::printf("data_config_hash = %s\n", mrgr::data_config_hash(cfg).c_str());
            }
            return 0;
        }

        if (cmd_prepare->parsed()) {
            mrgr::RunConfig cfg = resolve_config(g, true);
            if (!synthetic && input_path.empty()) input_path = cfg.data_input;
            mrgr::pipeline::stage_prepare_data(cfg, synthetic, input_path);
            std::printf("prepare-data: wrote %s\n", cfg.split_path().c_str());
            return 0;
        }
        if (cmd_backbone->parsed()) {
            mrgr::RunConfig cfg = resolve_config(g, true);
            mrgr::pipeline::stage_train_backbone(cfg);
            std::printf("train-backbone: wrote %s\n", cfg.backbone_path().c_str());
            return 0;
        }
        if (cmd_memory->parsed()) {
            mrgr::RunConfig cfg = resolve_config(g, true);
            mrgr::pipeline::stage_build_memory(cfg);
            std::printf("build-memory: wrote %s\n", cfg.banks_path().c_str());
            return 0;
        }
        if (cmd_annotate->parsed()) {
            mrgr::RunConfig cfg = resolve_config(g, true);
            mrgr::pipeline::stage_annotate(cfg);
            std::printf("annotate: wrote %s\n", cfg.annotations_path().c_str());
            return 0;
        }
        if (cmd_retriever->parsed()) {
            mrgr::RunConfig cfg = resolve_config(g, true);
            mrgr::pipeline::stage_train_retriever(cfg);
            std::printf("train-retriever: wrote %s\n", cfg.retriever_path().c_str());
            return 0;
        }
        if (cmd_eval->parsed()) {
            mrgr::RunConfig cfg = resolve_config(g, true);
            mrgr::MetricsReport report = mrgr::pipeline::stage_evaluate(cfg, variant, split_name);
            std::printf("evaluate: %s on %s (%lld samples, %lld skipped)\n", variant.c_str(),
                        split_name.c_str(), static_cast<long long>(report.evaluated),
                        static_cast<long long>(report.skipped));
            for (const auto& [name, value] : report.metrics)
                std::printf("  %-12s %.6f\n", name.c_str(), value);
            std::printf("evaluate: wrote %s\n", cfg.report_path(variant, split_name).c_str());
            return 0;
        }
        if (cmd_compare->parsed()) {
            mrgr::RunConfig cfg = resolve_config(g, true);
            mrgr::Comparison comp = mrgr::pipeline::stage_compare(cfg, report_paths);
            std::fputs(mrgr::format_comparison(comp).c_str(), stdout);
            std::printf("compare: wrote %s\n", cfg.compare_csv_path().c_str());
            return 0;
        }
        if (cmd_verify->parsed()) {
            mrgr::RunConfig cfg = resolve_config(g, true);
            mrgr::pipeline::stage_verify(cfg);
            std::printf("verify: all recorded hashes match in %s\n", cfg.out_dir.c_str());
            return 0;
        }
        throw mrgr::UsageError("no subcommand given");
    } catch (const mrgr::UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const mrgr::FormatError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const mrgr::StaleArtifactError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const mrgr::MissingDependencyError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const mrgr::IoError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 1;
    }
}
