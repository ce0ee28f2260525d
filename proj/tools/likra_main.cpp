// likra: desk-scale likelihood-ratio training and evaluation experiments.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "likra/experiment.hpp"

namespace {

struct CliOptions {
    std::string config_path;
    std::string out_dir;
    std::string run_root;
    std::vector<std::string> overrides;
    long long seed = -1;
    int jobs = 0;
};

likra::ExperimentConfig build_config(const CliOptions& opts) {
    likra::RawConfig raw;
    if (!opts.config_path.empty()) raw = likra::parse_config_file(opts.config_path);
    for (const auto& kv : opts.overrides) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) {
            throw likra::ParseError("--set expects key=value, got '" + kv + "'");
        }
        raw[likra::trim(kv.substr(0, eq))] = likra::trim(kv.substr(eq + 1));
    }
    if (opts.seed >= 0) raw["run.seed"] = std::to_string(opts.seed);
    if (opts.jobs > 0) raw["run.jobs"] = std::to_string(opts.jobs);
    if (!opts.run_root.empty()) raw["run.root"] = opts.run_root;
    return likra::resolve_config(raw);
}

void add_common(CLI::App* cmd, CliOptions& opts) {
    cmd->add_option("--config,-c", opts.config_path, "experiment config file")->required();
    cmd->add_option("--seed", opts.seed, "override run.seed");
    cmd->add_option("--jobs", opts.jobs, "override run.jobs");
    cmd->add_option("--out,-o", opts.out_dir, "explicit run directory");
    cmd->add_option("--run-root", opts.run_root, "run directory root (default $LIKRA_RUN_ROOT)");
    cmd->add_option("--set", opts.overrides, "override a config key (key=value, repeatable)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"likra: likelihood-ratio language model experiments"};
    app.require_subcommand(1);

    CliOptions opts;
    using CommandFn = likra::CommandResult (*)(const likra::ExperimentConfig&, const std::string&);
    struct Sub {
        const char* name;
        const char* help;
        CommandFn fn;
    };
    const Sub subs[] = {
        {"pretrain", "train the toy base model on the corpus", likra::cmd_pretrain},
        {"finetune", "train one head (positive or negative) over a base", likra::cmd_finetune},
        {"curve", "learning curves: sft / sft-likra / base-likra", likra::cmd_curve},
        {"sweep-weight", "accuracy as a function of the negative-head weight", likra::cmd_sweep_weight},
        {"probe-mass", "per-character likelihood shift by answer type", likra::cmd_probe_mass},
        {"eval-table", "apply the decision rule to an external likelihood table", likra::cmd_eval_table},
    };
    for (const auto& sub : subs) {
        auto* cmd = app.add_subcommand(sub.name, sub.help);
        add_common(cmd, opts);
        cmd->callback([&opts, fn = sub.fn] {
            auto cfg = build_config(opts);
            fn(cfg, opts.out_dir);
        });
    }

    auto* schema = app.add_subcommand("config-schema", "list every config key with its default");
    schema->callback([] { std::cout << likra::config_schema_help(); });

    try {
        app.parse(argc, argv);
        return 0;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const likra::ContractError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const likra::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const likra::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
