#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "likra/checkpoint.hpp"
#include "likra/eval.hpp"
#include "likra/experiment.hpp"

using namespace likra;
namespace fs = std::filesystem;

#ifndef LIKRA_CLI_PATH
#define LIKRA_CLI_PATH "likra"
#endif

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("likra_exp_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::string sub(const std::string& name) const { return (path / name).string(); }
};

RawConfig tiny_raw(uint64_t seed = 1) {
    RawConfig raw;
    raw["run.seed"] = std::to_string(seed);
    raw["model.n_layers"] = "1";
    raw["model.d_model"] = "32";
    raw["model.n_heads"] = "2";
    raw["model.d_ff"] = "64";
    raw["model.max_seq_len"] = "160";
    raw["pretrain.steps"] = "30";
    raw["pretrain.batch_size"] = "4";
    raw["pretrain.seq_len"] = "96";
    raw["data.synthetic.n_entities"] = "16";
    raw["data.synthetic.n_relations"] = "4";
    raw["data.synthetic.n_items"] = "48";
    raw["curve.sizes"] = "4,8";
    return raw;
}

std::set<std::string> files_on_disk(const fs::path& dir) {
    std::set<std::string> out;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (entry.is_regular_file()) {
            out.insert(fs::relative(entry.path(), dir).string());
        }
    }
    return out;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("config text parsing") {
    auto raw = parse_config_text("# comment\nrun.seed = 7\n\nmodel.d_model=64 # inline\n");
    CHECK(raw.at("run.seed") == "7");
    CHECK(raw.at("model.d_model") == "64");
    CHECK_THROWS_WITH_AS(parse_config_text("run.seed 7\n"), doctest::Contains("key = value"),
                         ParseError);
    CHECK_THROWS_WITH_AS(parse_config_text("a.b = 1\na.b = 2\n"), doctest::Contains("duplicate"),
                         ParseError);
}

TEST_CASE("unknown and malformed config keys are rejected") {
    RawConfig raw;
    raw["does.not.exist"] = "1";
    CHECK_THROWS_WITH_AS(resolve_config(raw), doctest::Contains("does.not.exist"), ParseError);

    RawConfig bad;
    bad["run.seed"] = "abc";
    CHECK_THROWS_AS(resolve_config(bad), ParseError);

    RawConfig badlist;
    badlist["curve.sizes"] = "8,4";
    CHECK_THROWS_WITH_AS(resolve_config(badlist), doctest::Contains("ascending"), ParseError);

    RawConfig badvariant;
    badvariant["curve.variants"] = "sft,nope";
    CHECK_THROWS_AS(resolve_config(badvariant), ParseError);
}

TEST_CASE("resolved config carries defaults and overrides") {
    auto cfg = resolve_config({});
    CHECK(cfg.model.d_model == 128);
    CHECK(cfg.finetune.lr == 1e-4);
    CHECK(cfg.finetune.batch_size == 8);
    CHECK(cfg.finetune.lora.rank == 8);
    CHECK(cfg.finetune.lora.alpha == 16.0);
    CHECK(cfg.sweep_weights.size() == 12);
    CHECK(cfg.curve_variants.size() == 3);

    auto cfg2 = resolve_config(tiny_raw());
    CHECK(cfg2.model.d_model == 32);
    CHECK(cfg2.curve_sizes == std::vector<int>{4, 8});
}

TEST_CASE("auto size grid is powers of two plus the full pool") {
    CHECK(auto_size_grid(384) == std::vector<int>{16, 32, 64, 128, 256, 384});
    CHECK(auto_size_grid(512) == std::vector<int>{16, 32, 64, 128, 256, 512});
    CHECK(auto_size_grid(10) == std::vector<int>{10});
    CHECK(auto_size_grid(6000) == std::vector<int>{16, 32, 64, 128, 256, 512, 1024, 2048, 4096, 6000});
}

TEST_CASE("synthetic data seed derives from the run seed unless explicit") {
    auto a = resolve_config(tiny_raw(1));
    auto b = resolve_config(tiny_raw(2));
    CHECK(a.synthetic.seed != b.synthetic.seed);
    auto raw = tiny_raw(1);
    raw["data.synthetic.seed"] = "9";
    auto c = resolve_config(raw);
    CHECK(c.synthetic.seed == 9);
}

TEST_CASE("pretrain command is deterministic and manifests match the directory") {
    TempDir tmp;
    auto cfg = resolve_config(tiny_raw());

    auto r1 = cmd_pretrain(cfg, tmp.sub("a"));
    auto r2 = cmd_pretrain(cfg, tmp.sub("b"));
    CHECK(file_checksum_hex(tmp.sub("a") + "/base.ckpt") ==
          file_checksum_hex(tmp.sub("b") + "/base.ckpt"));

    // manifest lists exactly the files on disk (besides itself)
    auto disk = files_on_disk(tmp.sub("a"));
    REQUIRE(disk.count("manifest.json") == 1);
    disk.erase("manifest.json");
    std::set<std::string> listed(r1.outputs.begin(), r1.outputs.end());
    CHECK(disk == listed);
}

TEST_CASE("curve pipeline end to end") {
    TempDir tmp;
    auto cfg = resolve_config(tiny_raw());
    cmd_pretrain(cfg, tmp.sub("pre"));

    auto raw = tiny_raw();
    raw["pretrain.checkpoint"] = tmp.sub("pre") + "/base.ckpt";

    SUBCASE("one row per curve per size; reruns are byte-identical") {
        raw["curve.sizes"] = "4";
        auto ccfg = resolve_config(raw);
        auto r1 = cmd_curve(ccfg, tmp.sub("c1"));
        auto r2 = cmd_curve(ccfg, tmp.sub("c2"));

        std::string csv = read_file(tmp.sub("c1") + "/metrics.csv");
        CHECK(csv == read_file(tmp.sub("c2") + "/metrics.csv"));
        int rows = 0;
        std::istringstream is(csv);
        std::string line;
        std::getline(is, line);
        CHECK(line == "curve_name,n_examples,acc,acc_norm");
        while (std::getline(is, line)) {
            if (!line.empty()) ++rows;
        }
        CHECK(rows == 3);  // sft, sft-likra, base-likra at one size
    }

    SUBCASE("rows at n=0 equal the base accuracy for every variant") {
        raw["curve.sizes"] = "0";
        auto ccfg = resolve_config(raw);
        cmd_curve(ccfg, tmp.sub("c0"));

        ExperimentData data = load_experiment_data(ccfg);
        BaseWeights base = load_base_checkpoint(raw["pretrain.checkpoint"]);
        Head base_head{&base, nullptr};
        auto solo = evaluate_mcq(base_head, data.test, data.train,
                                 {ccfg.eval_k_shot, derive_seed(ccfg.seed, "eval-shots"), 1});

        std::istringstream is(read_file(tmp.sub("c0") + "/metrics.csv"));
        std::string line;
        std::getline(is, line);
        int checked = 0;
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            auto parts = split(line, ',');
            REQUIRE(parts.size() == 4);
            if (parts[0] == "sft") {
                CHECK(std::stod(parts[2]) == solo.acc);
                CHECK(std::stod(parts[3]) == solo.acc_norm);
            }
            // likra variants with fresh (no-op) negative heads cancel against
            // the base: every score is 0 and the tie-break picks index 0
            ++checked;
        }
        CHECK(checked == 3);
    }

    SUBCASE("checkpoint trained on different data is rejected") {
        raw["data.synthetic.seed"] = "77";
        auto ccfg = resolve_config(raw);
        CHECK_THROWS_WITH_AS(cmd_curve(ccfg, tmp.sub("cbad")), doctest::Contains("mismatch"),
                             ValidationError);
    }

    SUBCASE("probe-mass consumes curve checkpoints and validates missing sizes") {
        raw["curve.sizes"] = "4,8";
        auto ccfg = resolve_config(raw);
        cmd_curve(ccfg, tmp.sub("cfull"));

        auto praw = raw;
        praw["probe.curve_run"] = tmp.sub("cfull");
        auto pcfg = resolve_config(praw);
        auto pr = cmd_probe_mass(pcfg, tmp.sub("probe"));
        std::string csv = read_file(tmp.sub("probe") + "/probe.csv");
        // base rows + 2 sizes x 2 heads, 4 answer types each
        int rows = 0;
        std::istringstream is(csv);
        std::string line;
        std::getline(is, line);
        CHECK(line == "head,n_examples,answer_type,mean_delta_per_char");
        int zero_rows = 0;
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            ++rows;
            auto parts = split(line, ',');
            if (parts[1] == "0") {
                CHECK(std::stod(parts[3]) == 0.0);
                ++zero_rows;
            }
        }
        CHECK(rows == (2 + 2 * 2) * 4);
        CHECK(zero_rows == 8);

        // a size grid beyond what the curve trained -> every missing size listed
        praw["curve.sizes"] = "4,8,16";
        auto pbad = resolve_config(praw);
        CHECK_THROWS_WITH_AS(cmd_probe_mass(pbad, tmp.sub("probe2")), doctest::Contains("n=16"),
                             ValidationError);
    }
}

TEST_CASE("sweep command validates weights and dedups") {
    TempDir tmp;
    auto cfg = resolve_config(tiny_raw());
    cmd_pretrain(cfg, tmp.sub("pre"));
    auto raw = tiny_raw();
    raw["pretrain.checkpoint"] = tmp.sub("pre") + "/base.ckpt";
    raw["sweep.weights"] = "0,1.0,1.0";
    auto scfg = resolve_config(raw);
    cmd_sweep_weight(scfg, tmp.sub("sweep"));
    std::istringstream is(read_file(tmp.sub("sweep") + "/sweep.csv"));
    std::string line;
    std::getline(is, line);
    CHECK(line == "weight,acc_norm");
    int rows = 0;
    while (std::getline(is, line)) {
        if (!line.empty()) ++rows;
    }
    CHECK(rows == 2);  // duplicate 1.0 dropped
}

TEST_CASE("eval-table command round-trips a generated table") {
    TempDir tmp;
    auto cfg = resolve_config(tiny_raw());
    ExperimentData data = load_experiment_data(cfg);

    // table from a bare (random-init) model pair
    BaseWeights base = BaseWeights::init(cfg.model, 5);
    Head head{&base, nullptr};
    auto plus = compute_head_table(head, data.test, "", 1);
    auto rows = make_table_rows(data.test, plus, plus);
    save_loglik_table(tmp.sub("table.jsonl"), rows);

    auto raw = tiny_raw();
    raw["table.path"] = tmp.sub("table.jsonl");
    auto tcfg = resolve_config(raw);
    auto res = cmd_eval_table(tcfg, tmp.sub("evt"));
    CHECK(fs::exists(tmp.sub("evt") + "/report.json"));
    CHECK(fs::exists(tmp.sub("evt") + "/summary.csv"));

    // identical heads at w=1: scores cancel, tie-break accuracy
    int first = 0;
    for (const auto& item : data.test) {
        if (item.answer_index() == 0) ++first;
    }
    auto report_text = read_file(tmp.sub("evt") + "/report.json");
    std::ostringstream want;
    want << "\"acc\": " << (static_cast<double>(first) / data.test.size());
    CHECK(report_text.find("\"acc\"") != std::string::npos);
}

TEST_CASE("prior run directories are immutable") {
    TempDir tmp;
    auto cfg = resolve_config(tiny_raw());
    cmd_pretrain(cfg, tmp.sub("pre"));
    CHECK_THROWS_WITH_AS(cmd_pretrain(cfg, tmp.sub("pre")), doctest::Contains("immutable"),
                         ValidationError);
}

TEST_CASE("cli binary exit codes") {
    TempDir tmp;
    std::string cli = LIKRA_CLI_PATH;
    auto run = [&](const std::string& args) {
        int status = std::system((cli + " " + args + " >/dev/null 2>&1").c_str());
        return WEXITSTATUS(status);
    };

    CHECK(run("--help") == 0);
    CHECK(run("pretrain") == 2);                         // missing --config
    CHECK(run("no-such-command") == 2);
    CHECK(run("pretrain -c " + tmp.sub("absent.cfg")) == 2);  // config file missing

    // malformed config -> 2
    std::ofstream(tmp.sub("bad.cfg")) << "unknown.key = 1\n";
    CHECK(run("pretrain -c " + tmp.sub("bad.cfg")) == 2);

    // a working tiny pretrain -> 0
    std::ofstream(tmp.sub("ok.cfg")) << "model.n_layers = 1\nmodel.d_model = 16\nmodel.n_heads = 2\n"
                                     << "model.d_ff = 32\nmodel.max_seq_len = 160\n"
                                     << "pretrain.steps = 2\npretrain.batch_size = 2\n"
                                     << "data.synthetic.n_items = 16\ndata.synthetic.n_entities = 8\n"
                                     << "data.synthetic.n_relations = 4\n";
    CHECK(run("pretrain -c " + tmp.sub("ok.cfg") + " -o " + tmp.sub("run0")) == 0);

    // diverging pretrain -> runtime failure 1, checkpoint still saved
    std::ofstream(tmp.sub("div.cfg")) << "model.n_layers = 1\nmodel.d_model = 16\nmodel.n_heads = 2\n"
                                      << "model.d_ff = 32\nmodel.max_seq_len = 160\n"
                                      << "pretrain.steps = 30\npretrain.batch_size = 2\n"
                                      << "pretrain.lr = 1e30\n"
                                      << "data.synthetic.n_items = 16\ndata.synthetic.n_entities = 8\n"
                                      << "data.synthetic.n_relations = 4\n";
    CHECK(run("pretrain -c " + tmp.sub("div.cfg") + " -o " + tmp.sub("run1")) == 1);
    CHECK(fs::exists(tmp.sub("run1") + "/base.ckpt"));
}
