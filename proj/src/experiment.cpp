#include "likra/experiment.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "likra/checkpoint.hpp"
#include "likra/eval.hpp"

#ifndef LIKRA_VERSION
#define LIKRA_VERSION "0.1.0"
#endif
#ifndef LIKRA_GIT_REV
#define LIKRA_GIT_REV "unknown"
#endif

namespace likra {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// config parsing and schema
// ---------------------------------------------------------------------------

RawConfig parse_config_text(const std::string& text, const std::string& origin) {
    RawConfig out;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        std::string t = trim(line);
        if (t.empty()) continue;
        auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ParseError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
        }
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (key.empty()) {
            throw ParseError(origin + ":" + std::to_string(line_no) + ": empty key");
        }
        if (!out.emplace(key, value).second) {
            throw ParseError(origin + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
        }
    }
    return out;
}

RawConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("config file not found: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), path);
}

namespace {

struct KeySpec {
    const char* key;
    const char* def;  // default value as text
    const char* help;
};

const KeySpec kSchema[] = {
    {"run.seed", "0", "master seed; all randomness derives from it"},
    {"run.jobs", "1", "worker threads for evaluation"},
    {"run.root", "", "run directory root (default $LIKRA_RUN_ROOT or ./runs)"},
    {"model.vocab_size", "259", "byte vocabulary (256 bytes + BOS/EOS/PAD)"},
    {"model.n_layers", "4", "transformer blocks"},
    {"model.d_model", "128", "embedding width"},
    {"model.n_heads", "4", "attention heads"},
    {"model.d_ff", "512", "MLP hidden width"},
    {"model.max_seq_len", "512", "positional table size"},
    {"pretrain.steps", "1500", "optimizer steps for pretraining"},
    {"pretrain.batch_size", "16", "windows per pretraining step"},
    {"pretrain.lr", "1e-3", "pretraining Adam learning rate"},
    {"pretrain.seq_len", "128", "packed window length"},
    {"pretrain.snapshot_every", "50", "divergence fallback granularity"},
    {"pretrain.checkpoint", "", "existing base checkpoint consumed by downstream commands"},
    {"data.source", "synthetic", "synthetic | jsonl"},
    {"data.synthetic.n_entities", "64", ""},
    {"data.synthetic.n_relations", "12", ""},
    {"data.synthetic.n_items", "512", ""},
    {"data.synthetic.distractor_plausibility", "1.0", ""},
    {"data.synthetic.seed", "-1", "-1: derive from run.seed"},
    {"data.train_jsonl", "", "training items (jsonl source)"},
    {"data.test_jsonl", "", "test items (jsonl source)"},
    {"data.corpus_txt", "", "pretraining corpus override, one document per line"},
    {"data.unrelated_pool", "", "file of unrelated answer strings; empty: builtin pool"},
    {"finetune.batch_size", "8", ""},
    {"finetune.lr", "1e-4", ""},
    {"finetune.epochs", "1", ""},
    {"finetune.grad_clip_norm", "0", "<=0 disables clipping"},
    {"finetune.polarity", "positive", "positive | negative (cmd finetune)"},
    {"lora.rank", "8", ""},
    {"lora.alpha", "16", ""},
    {"lora.targets", "q,v", "adapted projections (q and/or v)"},
    {"negatives.strategy", "incorrect", "incorrect | irrelevant | unrelated"},
    {"curve.sizes", "auto", "auto or ascending comma list"},
    {"curve.variants", "sft,sft-likra,base-likra", ""},
    {"curve.positive_full_pool", "false", "pair every Likra point with the full-pool positive head"},
    {"sweep.weights", "0,0.125,0.25,0.5,0.75,0.9,1.0,1.1,1.25,1.5,1.75,2.0", ""},
    {"eval.k_shot", "0", "few-shot examples prepended at evaluation"},
    {"eval.weight", "1.0", "negative-head weight"},
    {"probe.few_shot", "false", "prepend the shot block to probe contexts"},
    {"probe.curve_run", "", "curve run directory holding per-size checkpoints"},
    {"table.path", "", "external likelihood table (cmd eval-table)"},
};

int to_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        int out = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ParseError("config key '" + key + "': expected integer, got '" + v + "'");
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double out = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ParseError("config key '" + key + "': expected number, got '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ParseError("config key '" + key + "': expected boolean, got '" + v + "'");
}

uint64_t to_u64(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        uint64_t out = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ParseError("config key '" + key + "': expected unsigned integer, got '" + v + "'");
    }
}

// Shortest representation that still round-trips: CSV values re-parse to the
// exact in-memory doubles.
std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    double back = 0;
    std::sscanf(buf, "%lg", &back);
    if (back == v) {
        for (int prec = 1; prec <= 16; ++prec) {
            char shorter[40];
            std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
            std::sscanf(shorter, "%lg", &back);
            if (back == v) return shorter;
        }
    }
    return buf;
}

}  // namespace

std::string config_schema_help() {
    std::ostringstream os;
    for (const auto& k : kSchema) {
        os << "  " << k.key << " (default: " << (k.def[0] ? k.def : "<empty>") << ")";
        if (k.help[0]) os << " - " << k.help;
        os << "\n";
    }
    return os.str();
}

ExperimentConfig resolve_config(const RawConfig& user) {
    RawConfig merged;
    for (const auto& k : kSchema) merged[k.key] = k.def;
    for (const auto& [key, value] : user) {
        if (!merged.count(key)) throw ParseError("unknown config key '" + key + "'");
        merged[key] = value;
    }

    ExperimentConfig cfg;
    cfg.raw = merged;
    cfg.seed = to_u64("run.seed", merged["run.seed"]);
    cfg.jobs = to_int("run.jobs", merged["run.jobs"]);
    if (cfg.jobs < 1) throw ParseError("run.jobs must be >= 1");
    cfg.run_root = merged["run.root"];

    cfg.model.vocab_size = to_int("model.vocab_size", merged["model.vocab_size"]);
    cfg.model.n_layers = to_int("model.n_layers", merged["model.n_layers"]);
    cfg.model.d_model = to_int("model.d_model", merged["model.d_model"]);
    cfg.model.n_heads = to_int("model.n_heads", merged["model.n_heads"]);
    cfg.model.d_ff = to_int("model.d_ff", merged["model.d_ff"]);
    cfg.model.max_seq_len = to_int("model.max_seq_len", merged["model.max_seq_len"]);
    cfg.model.validate();

    cfg.pretrain_steps = to_int("pretrain.steps", merged["pretrain.steps"]);
    cfg.pretrain_batch_size = to_int("pretrain.batch_size", merged["pretrain.batch_size"]);
    cfg.pretrain_lr = to_double("pretrain.lr", merged["pretrain.lr"]);
    cfg.pretrain_seq_len = to_int("pretrain.seq_len", merged["pretrain.seq_len"]);
    cfg.pretrain_snapshot_every = to_int("pretrain.snapshot_every", merged["pretrain.snapshot_every"]);
    cfg.base_checkpoint = merged["pretrain.checkpoint"];

    cfg.data_source = merged["data.source"];
    if (cfg.data_source != "synthetic" && cfg.data_source != "jsonl") {
        throw ParseError("data.source must be 'synthetic' or 'jsonl'");
    }
    cfg.synthetic.n_entities = to_int("data.synthetic.n_entities", merged["data.synthetic.n_entities"]);
    cfg.synthetic.n_relations = to_int("data.synthetic.n_relations", merged["data.synthetic.n_relations"]);
    cfg.synthetic.n_items = to_int("data.synthetic.n_items", merged["data.synthetic.n_items"]);
    cfg.synthetic.distractor_plausibility =
        to_double("data.synthetic.distractor_plausibility", merged["data.synthetic.distractor_plausibility"]);
    int synth_seed = to_int("data.synthetic.seed", merged["data.synthetic.seed"]);
    cfg.synthetic_seed_explicit = synth_seed >= 0;
    cfg.synthetic.seed = cfg.synthetic_seed_explicit ? static_cast<uint64_t>(synth_seed)
                                                     : derive_seed(cfg.seed, "synthetic-data");
    cfg.train_jsonl = merged["data.train_jsonl"];
    cfg.test_jsonl = merged["data.test_jsonl"];
    cfg.corpus_txt = merged["data.corpus_txt"];
    cfg.unrelated_pool_path = merged["data.unrelated_pool"];

    cfg.finetune.batch_size = to_int("finetune.batch_size", merged["finetune.batch_size"]);
    cfg.finetune.lr = to_double("finetune.lr", merged["finetune.lr"]);
    cfg.finetune.epochs = to_int("finetune.epochs", merged["finetune.epochs"]);
    cfg.finetune.grad_clip_norm = to_double("finetune.grad_clip_norm", merged["finetune.grad_clip_norm"]);
    cfg.finetune.validate();
    cfg.finetune_polarity = merged["finetune.polarity"];
    if (cfg.finetune_polarity != "positive" && cfg.finetune_polarity != "negative") {
        throw ParseError("finetune.polarity must be 'positive' or 'negative'");
    }

    cfg.finetune.lora.rank = to_int("lora.rank", merged["lora.rank"]);
    cfg.finetune.lora.alpha = to_double("lora.alpha", merged["lora.alpha"]);
    cfg.finetune.lora.target_q = false;
    cfg.finetune.lora.target_v = false;
    for (const auto& t : split(merged["lora.targets"], ',')) {
        std::string tt = trim(t);
        if (tt == "q") {
            cfg.finetune.lora.target_q = true;
        } else if (tt == "v") {
            cfg.finetune.lora.target_v = true;
        } else if (!tt.empty()) {
            throw ParseError("lora.targets: unknown target '" + tt + "' (supported: q, v)");
        }
    }
    if (!cfg.finetune.lora.target_q && !cfg.finetune.lora.target_v) {
        throw ParseError("lora.targets must name at least one of q, v");
    }

    cfg.negative_strategy = negative_kind_from_string(merged["negatives.strategy"]);

    if (merged["curve.sizes"] != "auto") {
        cfg.curve_sizes.clear();
        for (const auto& s : split(merged["curve.sizes"], ',')) {
            if (trim(s).empty()) continue;
            cfg.curve_sizes.push_back(to_int("curve.sizes", trim(s)));
        }
        if (cfg.curve_sizes.empty()) throw ParseError("curve.sizes: empty list");
        for (size_t i = 1; i < cfg.curve_sizes.size(); ++i) {
            if (cfg.curve_sizes[i] <= cfg.curve_sizes[i - 1]) {
                throw ParseError("curve.sizes must be strictly ascending");
            }
        }
    }
    cfg.curve_variants.clear();
    for (const auto& v : split(merged["curve.variants"], ',')) {
        std::string vv = trim(v);
        if (vv.empty()) continue;
        if (vv != "sft" && vv != "sft-likra" && vv != "base-likra") {
            throw ParseError("curve.variants: unknown variant '" + vv + "'");
        }
        cfg.curve_variants.push_back(vv);
    }
    if (cfg.curve_variants.empty()) throw ParseError("curve.variants: empty list");
    cfg.positive_full_pool = to_bool("curve.positive_full_pool", merged["curve.positive_full_pool"]);

    cfg.sweep_weights.clear();
    for (const auto& w : split(merged["sweep.weights"], ',')) {
        if (trim(w).empty()) continue;
        cfg.sweep_weights.push_back(to_double("sweep.weights", trim(w)));
    }
    if (cfg.sweep_weights.empty()) throw ParseError("sweep.weights: empty list");

    cfg.eval_k_shot = to_int("eval.k_shot", merged["eval.k_shot"]);
    if (cfg.eval_k_shot < 0) throw ParseError("eval.k_shot must be >= 0");
    cfg.eval_weight = to_double("eval.weight", merged["eval.weight"]);
    if (!(cfg.eval_weight >= 0)) throw ParseError("eval.weight must be >= 0");

    cfg.probe_few_shot = to_bool("probe.few_shot", merged["probe.few_shot"]);
    cfg.probe_curve_run = merged["probe.curve_run"];
    cfg.table_path = merged["table.path"];
    return cfg;
}

// ---------------------------------------------------------------------------
// data realization
// ---------------------------------------------------------------------------

ExperimentData load_experiment_data(const ExperimentConfig& cfg) {
    ExperimentData data;
    if (cfg.data_source == "synthetic") {
        SyntheticBenchmark bench = gen_synthetic_benchmark(cfg.synthetic);
        data.corpus = std::move(bench.corpus);
        data.train = std::move(bench.train);
        data.test = std::move(bench.test);
    } else {
        if (cfg.train_jsonl.empty() || cfg.test_jsonl.empty()) {
            throw ValidationError("data.source=jsonl requires data.train_jsonl and data.test_jsonl");
        }
        data.train = load_mcq_jsonl(cfg.train_jsonl);
        data.test = load_mcq_jsonl(cfg.test_jsonl);
    }
    if (!cfg.corpus_txt.empty()) {
        std::ifstream in(cfg.corpus_txt);
        if (!in) throw ValidationError("cannot open corpus file: " + cfg.corpus_txt);
        data.corpus.clear();
        std::string line;
        while (std::getline(in, line)) {
            if (!trim(line).empty()) data.corpus.push_back(line);
        }
    }
    if (!cfg.unrelated_pool_path.empty()) {
        std::ifstream in(cfg.unrelated_pool_path);
        if (!in) throw ValidationError("cannot open unrelated pool file: " + cfg.unrelated_pool_path);
        std::string line;
        while (std::getline(in, line)) {
            if (!trim(line).empty()) data.unrelated_pool.push_back(line);
        }
        if (data.unrelated_pool.empty()) {
            throw ValidationError("unrelated pool file is empty: " + cfg.unrelated_pool_path);
        }
    } else {
        data.unrelated_pool = gen_unrelated_pool(64, derive_seed(cfg.seed, "unrelated-pool"));
    }

    uint64_t h = 1469598103934665603ull;
    for (const auto& doc : data.corpus) h = fnv1a64(doc + "\n", h);
    auto hash_items = [&h](const std::vector<MCQItem>& items) {
        for (const auto& item : items) {
            h = fnv1a64(item.id, h);
            h = fnv1a64(item.question, h);
            h = fnv1a64(item.answer_key, h);
            for (const auto& c : item.choices) {
                h = fnv1a64(c.label, h);
                h = fnv1a64(c.text, h);
            }
        }
    };
    hash_items(data.train);
    hash_items(data.test);
    data.fingerprint = hex64(h);
    return data;
}

std::vector<int> auto_size_grid(size_t pool_size) {
    std::vector<int> sizes;
    for (int n = 16; n <= 4096 && n <= static_cast<int>(pool_size); n *= 2) sizes.push_back(n);
    if (sizes.empty() || sizes.back() != static_cast<int>(pool_size)) {
        sizes.push_back(static_cast<int>(pool_size));
    }
    return sizes;
}

// ---------------------------------------------------------------------------
// run directories and manifests
// ---------------------------------------------------------------------------

namespace {

std::string config_hash(const RawConfig& raw) {
    uint64_t h = 1469598103934665603ull;
    for (const auto& [k, v] : raw) {
        h = fnv1a64(k + "=" + v + "\n", h);
    }
    return hex64(h).substr(0, 8);
}

std::string run_root(const ExperimentConfig& cfg) {
    if (!cfg.run_root.empty()) return cfg.run_root;
    if (const char* env = std::getenv("LIKRA_RUN_ROOT")) {
        if (env[0]) return env;
    }
    return "runs";
}

fs::path prepare_run_dir(const ExperimentConfig& cfg, const std::string& command,
                         const std::string& out_dir) {
    fs::path dir;
    if (!out_dir.empty()) {
        dir = out_dir;
        if (fs::exists(dir / "manifest.json")) {
            throw ValidationError("run directory already holds a manifest: " + dir.string() +
                                  " (prior runs are immutable)");
        }
    } else {
        std::string base = command + "-seed" + std::to_string(cfg.seed) + "-" + config_hash(cfg.raw);
        dir = fs::path(run_root(cfg)) / base;
        for (int k = 2; fs::exists(dir); ++k) {
            dir = fs::path(run_root(cfg)) / (base + "-" + std::to_string(k));
        }
    }
    fs::create_directories(dir);
    return dir;
}

class Manifest {
  public:
    Manifest(fs::path run_dir, std::string command, const ExperimentConfig& cfg)
        : run_dir_(std::move(run_dir)), command_(std::move(command)) {
        j_["run_id"] = run_dir_.filename().string();
        j_["command"] = command_;
        j_["code_version"] = std::string(LIKRA_VERSION) + "+" + LIKRA_GIT_REV;
        j_["seed"] = cfg.seed;
        json conf = json::object();
        for (const auto& [k, v] : cfg.raw) conf[k] = v;
        j_["config"] = conf;
        j_["started"] = iso8601_now();
        j_["inputs"] = json::object();
        j_["outputs"] = json::array();
        write();  // manifest exists before any results
    }

    void add_input(const std::string& name, const std::string& hash) {
        j_["inputs"][name] = hash;
        write();
    }

    void note(const std::string& key, const json& value) {
        j_[key] = value;
        write();
    }

    // Registers a file that now exists inside the run directory.
    void add_output(const std::string& rel_path) {
        outputs_.push_back(rel_path);
    }

    void finalize() {
        j_["outputs"] = json::array();
        for (const auto& rel : outputs_) {
            j_["outputs"].push_back(
                json{{"path", rel}, {"fnv1a64", file_checksum_hex((run_dir_ / rel).string())}});
        }
        j_["finished"] = iso8601_now();
        write();
    }

    const std::vector<std::string>& outputs() const { return outputs_; }

  private:
    void write() {
        std::ofstream out(run_dir_ / "manifest.json");
        out << j_.dump(2) << "\n";
    }

    fs::path run_dir_;
    std::string command_;
    json j_;
    std::vector<std::string> outputs_;
};

BaseWeights load_required_base(const ExperimentConfig& cfg, const ExperimentData& data) {
    if (cfg.base_checkpoint.empty()) {
        throw ValidationError("this command needs pretrain.checkpoint to point at a base checkpoint");
    }
    if (!fs::exists(cfg.base_checkpoint)) {
        throw ValidationError("base checkpoint does not exist: " + cfg.base_checkpoint);
    }
    CheckpointInfo info = read_checkpoint_info(cfg.base_checkpoint);
    if (!(info.model == cfg.model)) {
        throw ValidationError("checkpoint/config mismatch: model configuration in " +
                              cfg.base_checkpoint + " differs from the config");
    }
    if (!info.data_fingerprint.empty() && info.data_fingerprint != data.fingerprint) {
        throw ValidationError("checkpoint/config mismatch: base was pretrained on different data "
                              "(fingerprint " + info.data_fingerprint + " vs " + data.fingerprint + ")");
    }
    return load_base_checkpoint(cfg.base_checkpoint);
}

uint64_t head_seed(const ExperimentConfig& cfg, const char* tag, int n) {
    return derive_seed(cfg.seed, tag, static_cast<uint64_t>(n));
}

std::string size_tag(int n) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "n%05d", n);
    return buf;
}

void append_summary_row(const fs::path& run_dir, Manifest& manifest, const std::string& command,
                        size_t n_items, int k_shot, double weight, const EvalReport& report) {
    fs::path p = run_dir / "summary.csv";
    bool fresh = !fs::exists(p);
    std::ofstream out(p, std::ios::app);
    if (fresh) out << "command,n_items,k_shot,weight,acc,acc_norm\n";
    out << command << ',' << n_items << ',' << k_shot << ',' << fmt_double(weight) << ','
        << fmt_double(report.acc) << ',' << fmt_double(report.acc_norm) << "\n";
    if (fresh) manifest.add_output("summary.csv");
}

}  // namespace

// ---------------------------------------------------------------------------
// commands
// ---------------------------------------------------------------------------

CommandResult cmd_pretrain(const ExperimentConfig& cfg, const std::string& out_dir) {
    ExperimentData data = load_experiment_data(cfg);
    if (data.corpus.empty()) {
        throw ValidationError("pretrain needs a corpus (synthetic data source or data.corpus_txt)");
    }
    fs::path dir = prepare_run_dir(cfg, "pretrain", out_dir);
    Manifest manifest(dir, "pretrain", cfg);
    manifest.add_input("data", data.fingerprint);

    PretrainOptions opts;
    opts.steps = cfg.pretrain_steps;
    opts.seed = cfg.seed;
    opts.batch_size = cfg.pretrain_batch_size;
    opts.lr = cfg.pretrain_lr;
    opts.seq_len = cfg.pretrain_seq_len;
    opts.snapshot_every = cfg.pretrain_snapshot_every;
    opts.log_path = (dir / "pretrain_log.jsonl").string();
    manifest.add_output("pretrain_log.jsonl");

    auto [weights, result] = pretrain(data.corpus, cfg.model, opts);
    save_base_checkpoint((dir / "base.ckpt").string(), weights, data.fingerprint);
    manifest.add_output("base.ckpt");
    manifest.note("final_loss", result.final_loss);
    manifest.note("steps_done", result.steps_done);
    manifest.note("diverged", result.diverged);
    manifest.note("base_checksum", hex64(weights.checksum()));
    manifest.finalize();

    std::cout << "pretrain: " << result.steps_done << " steps, final loss "
              << fmt_double(result.final_loss) << ", checkpoint " << (dir / "base.ckpt").string()
              << "\n";
    if (result.diverged) {
        throw std::runtime_error("pretraining diverged at step " + std::to_string(result.steps_done) +
                                 "; last good checkpoint saved in " + dir.string());
    }
    return {dir.string(), manifest.outputs()};
}

namespace {

std::vector<TrainExample> build_pool(const ExperimentConfig& cfg, const ExperimentData& data,
                                     Polarity polarity) {
    if (polarity == Polarity::positive) return make_positives(data.train);
    return make_negatives(data.train, cfg.negative_strategy, data.unrelated_pool,
                          derive_seed(cfg.seed, "negatives"));
}

}  // namespace

CommandResult cmd_finetune(const ExperimentConfig& cfg, const std::string& out_dir) {
    ExperimentData data = load_experiment_data(cfg);
    BaseWeights base = load_required_base(cfg, data);
    fs::path dir = prepare_run_dir(cfg, "finetune", out_dir);
    Manifest manifest(dir, "finetune", cfg);
    manifest.add_input("data", data.fingerprint);
    manifest.add_input("base_checkpoint", file_checksum_hex(cfg.base_checkpoint));

    Polarity polarity =
        cfg.finetune_polarity == "positive" ? Polarity::positive : Polarity::negative;
    auto pool = build_pool(cfg, data, polarity);

    FinetuneConfig fcfg = cfg.finetune;
    fcfg.seed = head_seed(cfg, "finetune", static_cast<int>(pool.size()));
    fcfg.log_path = (dir / "train_log.jsonl").string();
    manifest.add_output("train_log.jsonl");
    LoraAdapter adapter = finetune_head(base, pool, fcfg);
    save_adapter_checkpoint((dir / "adapter.ckpt").string(), adapter, base);
    manifest.add_output("adapter.ckpt");

    Head head{&base, &adapter};
    Head base_head{&base, nullptr};
    EvalOptions eopts{cfg.eval_k_shot, derive_seed(cfg.seed, "eval-shots"), cfg.jobs};
    EvalReport report;
    if (polarity == Polarity::positive) {
        report = evaluate_mcq(head, data.test, data.train, eopts);
    } else {
        LikraScorer scorer(&base_head, &head, cfg.eval_weight);
        report = evaluate_mcq(scorer, data.test, data.train, eopts);
    }
    save_report_json((dir / "report.json").string(), report);
    manifest.add_output("report.json");
    append_summary_row(dir, manifest, "finetune", data.test.size(), cfg.eval_k_shot,
                       polarity == Polarity::positive ? 0.0 : cfg.eval_weight, report);
    manifest.note("adapter_checksum", hex64(adapter.checksum()));
    manifest.finalize();
    std::cout << "finetune(" << cfg.finetune_polarity << "): acc " << fmt_double(report.acc)
              << ", acc_norm " << fmt_double(report.acc_norm) << "\n";
    return {dir.string(), manifest.outputs()};
}

CommandResult cmd_curve(const ExperimentConfig& cfg, const std::string& out_dir) {
    ExperimentData data = load_experiment_data(cfg);
    BaseWeights base = load_required_base(cfg, data);
    fs::path dir = prepare_run_dir(cfg, "curve", out_dir);
    Manifest manifest(dir, "curve", cfg);
    manifest.add_input("data", data.fingerprint);
    manifest.add_input("base_checkpoint", file_checksum_hex(cfg.base_checkpoint));
    fs::create_directories(dir / "checkpoints");

    bool want_sft = false, want_sft_likra = false, want_base_likra = false;
    for (const auto& v : cfg.curve_variants) {
        want_sft |= v == "sft";
        want_sft_likra |= v == "sft-likra";
        want_base_likra |= v == "base-likra";
    }
    bool need_pos = want_sft || want_sft_likra;
    bool need_neg = want_sft_likra || want_base_likra;

    auto pos_pool = shuffled_pool(build_pool(cfg, data, Polarity::positive), cfg.seed);
    auto neg_pool = shuffled_pool(build_pool(cfg, data, Polarity::negative), cfg.seed);
    std::vector<int> sizes = cfg.curve_sizes.empty() ? auto_size_grid(pos_pool.size()) : cfg.curve_sizes;
    if (!sizes.empty() && sizes.back() > static_cast<int>(pos_pool.size())) {
        throw ValidationError("curve.sizes: size " + std::to_string(sizes.back()) +
                              " exceeds the training pool (" + std::to_string(pos_pool.size()) + ")");
    }

    std::string shots =
        few_shot_context(data.train, cfg.eval_k_shot, derive_seed(cfg.seed, "eval-shots"));
    HeadTable base_table;
    Head base_head{&base, nullptr};
    if (want_base_likra) base_table = compute_head_table(base_head, data.test, shots, cfg.jobs);

    // Optional full-pool positive head shared by every sft-likra point.
    LoraAdapter full_pos;
    HeadTable full_pos_table;
    if (cfg.positive_full_pool && want_sft_likra) {
        FinetuneConfig fcfg = cfg.finetune;
        fcfg.seed = head_seed(cfg, "ft-pos", static_cast<int>(pos_pool.size()));
        full_pos = finetune_head(base, pos_pool, fcfg);
        Head h{&base, &full_pos};
        full_pos_table = compute_head_table(h, data.test, shots, cfg.jobs);
    }

    std::ofstream csv(dir / "metrics.csv");
    csv << "curve_name,n_examples,acc,acc_norm\n";
    manifest.add_output("metrics.csv");

    for (int n : sizes) {
        HeadTable pos_table, neg_table;
        if (need_pos) {
            FinetuneConfig fcfg = cfg.finetune;
            fcfg.seed = head_seed(cfg, "ft-pos", n);
            std::vector<TrainExample> subset(pos_pool.begin(), pos_pool.begin() + n);
            LoraAdapter pos = finetune_head(base, subset, fcfg);
            std::string ck = "checkpoints/pos-" + size_tag(n) + ".ckpt";
            save_adapter_checkpoint((dir / ck).string(), pos, base);
            manifest.add_output(ck);
            Head h{&base, &pos};
            pos_table = compute_head_table(h, data.test, shots, cfg.jobs);
        }
        if (need_neg) {
            FinetuneConfig fcfg = cfg.finetune;
            fcfg.seed = head_seed(cfg, "ft-neg", n);
            std::vector<TrainExample> subset(neg_pool.begin(), neg_pool.begin() + n);
            LoraAdapter neg = finetune_head(base, subset, fcfg);
            std::string ck = "checkpoints/neg-" + size_tag(n) + ".ckpt";
            save_adapter_checkpoint((dir / ck).string(), neg, base);
            manifest.add_output(ck);
            Head h{&base, &neg};
            neg_table = compute_head_table(h, data.test, shots, cfg.jobs);
        }
        for (const auto& variant : cfg.curve_variants) {
            EvalReport report;
            if (variant == "sft") {
                report = decide_from_tables(data.test, pos_table, nullptr, 0.0);
            } else if (variant == "sft-likra") {
                const HeadTable& plus = cfg.positive_full_pool ? full_pos_table : pos_table;
                report = decide_from_tables(data.test, plus, &neg_table, cfg.eval_weight);
            } else {
                report = decide_from_tables(data.test, base_table, &neg_table, cfg.eval_weight);
            }
            csv << variant << ',' << n << ',' << fmt_double(report.acc) << ','
                << fmt_double(report.acc_norm) << "\n";
        }
    }
    csv.close();
    manifest.finalize();
    std::cout << "curve: " << sizes.size() << " sizes x " << cfg.curve_variants.size()
              << " variants -> " << (dir / "metrics.csv").string() << "\n";
    return {dir.string(), manifest.outputs()};
}

CommandResult cmd_sweep_weight(const ExperimentConfig& cfg, const std::string& out_dir) {
    ExperimentData data = load_experiment_data(cfg);
    BaseWeights base = load_required_base(cfg, data);
    fs::path dir = prepare_run_dir(cfg, "sweep-weight", out_dir);
    Manifest manifest(dir, "sweep-weight", cfg);
    manifest.add_input("data", data.fingerprint);
    manifest.add_input("base_checkpoint", file_checksum_hex(cfg.base_checkpoint));

    std::vector<double> weights;
    for (double w : cfg.sweep_weights) {
        if (std::find(weights.begin(), weights.end(), w) != weights.end()) {
            std::cerr << "warning: duplicate weight " << fmt_double(w) << " in sweep grid, dropped\n";
            continue;
        }
        weights.push_back(w);
    }

    // Heads trained on the full pool, same seeds as the curve's full-pool
    // point so the w=0 row lines up with the sft curve value.
    auto pos_pool = shuffled_pool(build_pool(cfg, data, Polarity::positive), cfg.seed);
    auto neg_pool = shuffled_pool(build_pool(cfg, data, Polarity::negative), cfg.seed);
    FinetuneConfig pcfg = cfg.finetune;
    pcfg.seed = head_seed(cfg, "ft-pos", static_cast<int>(pos_pool.size()));
    LoraAdapter pos = finetune_head(base, pos_pool, pcfg);
    FinetuneConfig ncfg = cfg.finetune;
    ncfg.seed = head_seed(cfg, "ft-neg", static_cast<int>(neg_pool.size()));
    LoraAdapter neg = finetune_head(base, neg_pool, ncfg);

    Head pos_head{&base, &pos};
    Head neg_head{&base, &neg};
    LikraScorer scorer(&pos_head, &neg_head, 1.0);
    EvalOptions eopts{cfg.eval_k_shot, derive_seed(cfg.seed, "eval-shots"), cfg.jobs};
    auto points = weight_sweep(scorer, data.test, data.train, weights, eopts);

    std::ofstream csv(dir / "sweep.csv");
    csv << "weight,acc_norm\n";
    for (const auto& p : points) csv << fmt_double(p.weight) << ',' << fmt_double(p.acc_norm) << "\n";
    csv.close();
    manifest.add_output("sweep.csv");
    manifest.finalize();
    std::cout << "sweep-weight: " << points.size() << " weights -> " << (dir / "sweep.csv").string()
              << "\n";
    return {dir.string(), manifest.outputs()};
}

CommandResult cmd_probe_mass(const ExperimentConfig& cfg, const std::string& out_dir) {
    ExperimentData data = load_experiment_data(cfg);
    BaseWeights base = load_required_base(cfg, data);
    if (cfg.probe_curve_run.empty()) {
        throw ValidationError("probe-mass needs probe.curve_run pointing at a curve run directory");
    }
    fs::path curve_dir = cfg.probe_curve_run;
    if (!fs::exists(curve_dir / "checkpoints")) {
        throw ValidationError("no checkpoints directory under " + curve_dir.string());
    }

    auto pos_pool_size = data.train.size();
    std::vector<int> sizes = cfg.curve_sizes.empty() ? auto_size_grid(pos_pool_size) : cfg.curve_sizes;

    // All checkpoints must exist up front; report every missing size at once.
    std::vector<std::string> missing;
    for (int n : sizes) {
        for (const char* kind : {"pos", "neg"}) {
            fs::path p = curve_dir / "checkpoints" / (std::string(kind) + "-" + size_tag(n) + ".ckpt");
            if (!fs::exists(p)) missing.push_back(std::string(kind) + " n=" + std::to_string(n));
        }
    }
    if (!missing.empty()) {
        std::ostringstream os;
        os << "probe-mass: missing curve checkpoints:";
        for (const auto& m : missing) os << ' ' << m;
        throw ValidationError(os.str());
    }

    fs::path dir = prepare_run_dir(cfg, "probe-mass", out_dir);
    Manifest manifest(dir, "probe-mass", cfg);
    manifest.add_input("data", data.fingerprint);
    manifest.add_input("base_checkpoint", file_checksum_hex(cfg.base_checkpoint));
    manifest.add_input("curve_run", curve_dir.string());

    Head base_head{&base, nullptr};
    std::string shots =
        cfg.probe_few_shot
            ? few_shot_context(data.train, cfg.eval_k_shot, derive_seed(cfg.seed, "eval-shots"))
            : std::string();
    AnswerTypeProbe probe = build_probe(base_head, data.test, data.unrelated_pool,
                                        derive_seed(cfg.seed, "probe"), shots, cfg.jobs);

    std::ofstream csv(dir / "probe.csv");
    csv << "head,n_examples,answer_type,mean_delta_per_char\n";
    manifest.add_output("probe.csv");

    auto emit = [&](const char* head_name, int n, const std::array<double, kNumAnswerTypes>& deltas) {
        for (int t = 0; t < kNumAnswerTypes; ++t) {
            csv << head_name << ',' << n << ',' << to_string(static_cast<AnswerType>(t)) << ','
                << fmt_double(deltas[static_cast<size_t>(t)]) << "\n";
        }
    };

    // n=0: the untouched base, exact zero deltas by definition.
    auto zero = probe_deltas(probe, base_head, cfg.jobs);
    emit("positive", 0, zero);
    emit("negative", 0, zero);

    for (int n : sizes) {
        for (const char* kind : {"pos", "neg"}) {
            fs::path p = curve_dir / "checkpoints" / (std::string(kind) + "-" + size_tag(n) + ".ckpt");
            LoraAdapter adapter = load_adapter_checkpoint(p.string(), base);
            Head head{&base, &adapter};
            emit(kind[0] == 'p' ? "positive" : "negative", n, probe_deltas(probe, head, cfg.jobs));
        }
    }
    csv.close();
    manifest.finalize();
    std::cout << "probe-mass: " << sizes.size() << " checkpoints -> " << (dir / "probe.csv").string()
              << "\n";
    return {dir.string(), manifest.outputs()};
}

CommandResult cmd_eval_table(const ExperimentConfig& cfg, const std::string& out_dir) {
    ExperimentData data = load_experiment_data(cfg);
    if (cfg.table_path.empty()) {
        throw ValidationError("eval-table needs table.path pointing at a likelihood table");
    }
    auto rows = load_loglik_table(cfg.table_path);
    EvalReport report = score_from_table(data.test, rows, cfg.eval_weight);

    fs::path dir = prepare_run_dir(cfg, "eval-table", out_dir);
    Manifest manifest(dir, "eval-table", cfg);
    manifest.add_input("data", data.fingerprint);
    manifest.add_input("table", file_checksum_hex(cfg.table_path));
    save_report_json((dir / "report.json").string(), report);
    manifest.add_output("report.json");
    append_summary_row(dir, manifest, "eval-table", data.test.size(), 0, cfg.eval_weight, report);
    manifest.finalize();
    std::cout << "eval-table: acc " << fmt_double(report.acc) << ", acc_norm "
              << fmt_double(report.acc_norm) << "\n";
    return {dir.string(), manifest.outputs()};
}

}  // namespace likra
