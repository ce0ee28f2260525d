#pragma once

// Experiment front end: hierarchical key=value config files with a strict
// schema, run directories with manifests, and one command per reproducible
// experiment (pretrain / finetune / curve / sweep-weight / probe-mass /
// eval-table). Commands never mutate input datasets or prior run
// directories; every output file is listed in the manifest with a content
// hash.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "likra/datasets.hpp"
#include "likra/model.hpp"
#include "likra/training.hpp"

namespace likra {

// Raw config: dotted keys to string values. Unknown keys are rejected at
// resolve time.
using RawConfig = std::map<std::string, std::string>;

RawConfig parse_config_text(const std::string& text, const std::string& origin = "<string>");
RawConfig parse_config_file(const std::string& path);

struct ExperimentConfig {
    uint64_t seed = 0;
    int jobs = 1;
    std::string run_root;  // empty: $LIKRA_RUN_ROOT or "runs"

    ModelConfig model;

    // pretraining
    int pretrain_steps = 1500;
    int pretrain_batch_size = 16;
    double pretrain_lr = 1e-3;
    int pretrain_seq_len = 128;
    int pretrain_snapshot_every = 50;
    std::string base_checkpoint;  // commands that need a pretrained base

    // data
    std::string data_source = "synthetic";  // synthetic | jsonl
    SyntheticSpec synthetic;                // synthetic.seed < 0: derived from run seed
    bool synthetic_seed_explicit = false;
    std::string train_jsonl, test_jsonl, corpus_txt, unrelated_pool_path;

    // fine-tuning
    FinetuneConfig finetune;
    std::string finetune_polarity = "positive";

    NegativeKind negative_strategy = NegativeKind::incorrect;

    // curve
    std::vector<int> curve_sizes;  // empty: auto grid
    std::vector<std::string> curve_variants{"sft", "sft-likra", "base-likra"};
    bool positive_full_pool = false;

    std::vector<double> sweep_weights{0, 0.125, 0.25, 0.5, 0.75, 0.9, 1.0, 1.1, 1.25, 1.5, 1.75, 2.0};

    int eval_k_shot = 0;
    double eval_weight = 1.0;

    bool probe_few_shot = false;
    std::string probe_curve_run;

    std::string table_path;

    RawConfig raw;  // fully resolved key=value view for the manifest
};

// Applies defaults, validates every key against the schema, and rejects
// unknown keys.
ExperimentConfig resolve_config(const RawConfig& raw);

std::string config_schema_help();

// Inputs realized from an ExperimentConfig.
struct ExperimentData {
    std::vector<std::string> corpus;
    std::vector<MCQItem> train;
    std::vector<MCQItem> test;
    std::vector<std::string> unrelated_pool;
    std::string fingerprint;  // content hash over corpus+train+test
};

ExperimentData load_experiment_data(const ExperimentConfig& cfg);

// Powers of two 16..4096 capped by the pool, plus the full pool size.
std::vector<int> auto_size_grid(size_t pool_size);

struct CommandResult {
    std::string run_dir;
    std::vector<std::string> outputs;  // paths relative to run_dir
};

// out_dir: explicit run directory (must not already hold a manifest);
// empty chooses <run_root>/<command>-seed<seed>-<confighash>[-k].
CommandResult cmd_pretrain(const ExperimentConfig& cfg, const std::string& out_dir = "");
CommandResult cmd_finetune(const ExperimentConfig& cfg, const std::string& out_dir = "");
CommandResult cmd_curve(const ExperimentConfig& cfg, const std::string& out_dir = "");
CommandResult cmd_sweep_weight(const ExperimentConfig& cfg, const std::string& out_dir = "");
CommandResult cmd_probe_mass(const ExperimentConfig& cfg, const std::string& out_dir = "");
CommandResult cmd_eval_table(const ExperimentConfig& cfg, const std::string& out_dir = "");

}  // namespace likra
