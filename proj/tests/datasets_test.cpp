#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "likra/datasets.hpp"

using namespace likra;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("likra_test_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

const char* kArcLine =
    R"({"id":"arc-1","question":"Which substance is a compound?","choices":{"text":["sodium","chlorine","table salt","salt water"],"label":["A","B","C","D"]},"answerKey":"C"})";

MCQItem compound_item() {
    MCQItem item;
    item.id = "q1";
    item.question = "Which substance is a compound?";
    item.choices = {{"A", "sodium"}, {"B", "chlorine"}, {"C", "table salt"}, {"D", "salt water"}};
    item.answer_key = "C";
    return item;
}

MCQItem flower_item() {
    MCQItem item;
    item.id = "q2";
    item.question = "What can a flower become?";
    item.choices = {{"A", "a fruit"}, {"B", "a leaf"}, {"C", "a stem"}, {"D", "a branch"}};
    item.answer_key = "A";
    return item;
}

}  // namespace

TEST_CASE("load_mcq_jsonl parses an ARC-style line") {
    TempDir dir;
    std::ofstream(dir.file("arc.jsonl")) << kArcLine << "\n";
    auto items = load_mcq_jsonl(dir.file("arc.jsonl"));
    REQUIRE(items.size() == 1);
    CHECK(items[0].question == "Which substance is a compound?");
    CHECK(items[0].answer_text() == "table salt");
    CHECK(items[0].answer_key == "C");
}

TEST_CASE("load_mcq_jsonl parses the nested ARC layout") {
    TempDir dir;
    std::ofstream(dir.file("arc.jsonl"))
        << R"({"id":"x","question":{"stem":"What can a flower become?","choices":[{"label":"A","text":"a fruit"},{"label":"B","text":"a leaf"}]},"answerKey":"A"})"
        << "\n";
    auto items = load_mcq_jsonl(dir.file("arc.jsonl"));
    REQUIRE(items.size() == 1);
    CHECK(items[0].question == "What can a flower become?");
    CHECK(items[0].answer_text() == "a fruit");
}

TEST_CASE("load_mcq_jsonl on an empty file gives an empty list") {
    TempDir dir;
    std::ofstream(dir.file("empty.jsonl"));
    CHECK(load_mcq_jsonl(dir.file("empty.jsonl")).empty());
}

TEST_CASE("load_mcq_jsonl reports malformed lines with line numbers") {
    TempDir dir;
    std::ofstream(dir.file("bad.jsonl"))
        << kArcLine << "\n"
        << R"({"question":"no key here","choices":{"text":["a","b"],"label":["A","B"]}})" << "\n"
        << R"({"question":"bad key","choices":{"text":["a","b"],"label":["A","B"]},"answerKey":"Z"})"
        << "\n";
    CHECK_THROWS_WITH_AS(load_mcq_jsonl(dir.file("bad.jsonl")), doctest::Contains("line 2"),
                         ParseError);
    try {
        load_mcq_jsonl(dir.file("bad.jsonl"));
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
}

TEST_CASE("save/load round-trip is identity") {
    SyntheticSpec spec;
    spec.n_items = 32;
    spec.n_entities = 16;
    spec.n_relations = 4;
    spec.seed = 5;
    auto bench = gen_synthetic_benchmark(spec);

    TempDir dir;
    save_mcq_jsonl(dir.file("t.jsonl"), bench.test);
    auto loaded = load_mcq_jsonl(dir.file("t.jsonl"));
    REQUIRE(loaded.size() == bench.test.size());
    for (size_t i = 0; i < loaded.size(); ++i) {
        CHECK(loaded[i].id == bench.test[i].id);
        CHECK(loaded[i].question == bench.test[i].question);
        CHECK(loaded[i].answer_key == bench.test[i].answer_key);
        REQUIRE(loaded[i].choices.size() == bench.test[i].choices.size());
        for (size_t c = 0; c < loaded[i].choices.size(); ++c) {
            CHECK(loaded[i].choices[c].label == bench.test[i].choices[c].label);
            CHECK(loaded[i].choices[c].text == bench.test[i].choices[c].text);
        }
    }
}

TEST_CASE("format_example matches the template") {
    CHECK(format_example("What can a flower become?", "a fruit") ==
          "Question: What can a flower become?\nAnswer: a fruit");
    CHECK_THROWS_AS(format_example("q", ""), ContractError);
}

TEST_CASE("split point equals the prefix length") {
    auto [ctx, tgt] = split_context_target("What can a flower become?", "a fruit");
    CHECK(ctx == "Question: What can a flower become?\nAnswer: ");
    CHECK(tgt == "a fruit");
    CHECK(ctx + tgt == format_example("What can a flower become?", "a fruit"));
}

TEST_CASE("formatting is injective on plain pairs") {
    std::set<std::string> seen;
    std::vector<std::pair<std::string, std::string>> pairs = {
        {"a", "b"}, {"a", "c"}, {"ab", "c"}, {"a b", "c"}, {"a", "b c"}};
    for (auto& [q, a] : pairs) CHECK(seen.insert(format_example(q, a)).second);
}

TEST_CASE("few_shot_context") {
    SyntheticSpec spec;
    spec.n_items = 24;
    spec.n_entities = 12;
    spec.n_relations = 4;
    auto bench = gen_synthetic_benchmark(spec);
    const auto& pool = bench.train;

    SUBCASE("k=0 gives the empty context") { CHECK(few_shot_context(pool, 0, 1) == ""); }
    SUBCASE("deterministic in the seed") {
        CHECK(few_shot_context(pool, 3, 9) == few_shot_context(pool, 3, 9));
        CHECK(few_shot_context(pool, 3, 9) != few_shot_context(pool, 3, 10));
    }
    SUBCASE("k beyond pool size is rejected") {
        CHECK_THROWS_AS(few_shot_context(pool, static_cast<int>(pool.size()) + 1, 0), ContractError);
    }
    SUBCASE("every shot uses the correct answer of its item") {
        auto ctx = few_shot_context(pool, static_cast<int>(pool.size()), 4);
        // each block is "Question: {q}\nAnswer: {a}" and every answer must be
        // the pool item's keyed answer
        size_t found = 0;
        for (const auto& item : pool) {
            if (ctx.find(format_example(item.question, item.answer_text())) != std::string::npos) {
                ++found;
            }
        }
        CHECK(found == pool.size());
    }
}

TEST_CASE("make_negatives: incorrect strategy") {
    std::vector<MCQItem> items{compound_item(), flower_item()};
    std::set<std::string> seen;
    for (uint64_t seed = 0; seed < 64; ++seed) {
        auto negs = make_negatives(items, NegativeKind::incorrect, {}, seed);
        REQUIRE(negs.size() == 2);
        for (const auto& n : negs) {
            CHECK(n.polarity == Polarity::negative);
            CHECK(n.negative_kind == NegativeKind::incorrect);
        }
        CHECK(negs[0].question == items[0].question);
        // output is one of the item's wrong choices, never the correct text
        std::set<std::string> wrong{"sodium", "chlorine", "salt water"};
        CHECK(wrong.count(negs[0].answer) == 1);
        CHECK(negs[0].answer != "table salt");
        seen.insert(negs[0].answer);
    }
    // across seeds every wrong option shows up, including "salt water"
    CHECK(seen.size() == 3);
    CHECK(seen.count("salt water") == 1);
}

TEST_CASE("make_negatives: irrelevant strategy draws from other items only") {
    SyntheticSpec spec;
    spec.n_items = 32;
    spec.n_entities = 16;
    spec.n_relations = 4;
    auto bench = gen_synthetic_benchmark(spec);
    auto negs = make_negatives(bench.train, NegativeKind::irrelevant, {}, 3);
    REQUIRE(negs.size() == bench.train.size());
    for (size_t i = 0; i < negs.size(); ++i) {
        const auto& item = bench.train[i];
        CHECK(negs[i].answer != item.answer_text());
        // never sourced from this item's own choice set: the answer must be a
        // wrong choice of some other item
        bool from_other = false;
        for (size_t j = 0; j < bench.train.size() && !from_other; ++j) {
            if (j == i) continue;
            const auto& other = bench.train[j];
            for (size_t c = 0; c < other.choices.size(); ++c) {
                if (static_cast<int>(c) != other.answer_index() &&
                    other.choices[c].text == negs[i].answer) {
                    from_other = true;
                    break;
                }
            }
        }
        CHECK(from_other);
    }
    CHECK_THROWS_WITH_AS(make_negatives({compound_item()}, NegativeKind::irrelevant, {}, 0),
                         doctest::Contains("irrelevant"), ContractError);
}

TEST_CASE("make_negatives: unrelated strategy uses the alt pool") {
    std::vector<MCQItem> items{compound_item()};
    std::vector<std::string> pool{"is playing the piano"};
    auto negs = make_negatives(items, NegativeKind::unrelated, pool, 7);
    REQUIRE(negs.size() == 1);
    CHECK(negs[0].answer == "is playing the piano");
    CHECK_THROWS_WITH_AS(make_negatives(items, NegativeKind::unrelated, {}, 7),
                         doctest::Contains("unrelated"), ContractError);
}

TEST_CASE("make_negatives is deterministic in the seed") {
    SyntheticSpec spec;
    spec.n_items = 16;
    spec.n_entities = 8;
    spec.n_relations = 4;
    auto bench = gen_synthetic_benchmark(spec);
    auto a = make_negatives(bench.train, NegativeKind::incorrect, {}, 11);
    auto b = make_negatives(bench.train, NegativeKind::incorrect, {}, 11);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i].answer == b[i].answer);
}

TEST_CASE("negatives never pair a question with its own correct answer") {
    SyntheticSpec spec;
    spec.n_items = 64;
    spec.n_entities = 16;
    spec.n_relations = 8;
    auto bench = gen_synthetic_benchmark(spec);
    auto pool = gen_unrelated_pool(16, 0);
    for (auto kind : {NegativeKind::incorrect, NegativeKind::irrelevant, NegativeKind::unrelated}) {
        for (uint64_t seed = 0; seed < 8; ++seed) {
            auto negs = make_negatives(bench.train, kind, pool, seed);
            for (size_t i = 0; i < negs.size(); ++i) {
                CHECK(negs[i].answer != bench.train[i].answer_text());
            }
        }
    }
}

TEST_CASE("synthetic benchmark is deterministic and well-formed") {
    SyntheticSpec spec;
    spec.n_items = 64;
    spec.n_entities = 24;
    spec.n_relations = 6;
    spec.seed = 123;

    auto a = gen_synthetic_benchmark(spec);
    auto b = gen_synthetic_benchmark(spec);
    CHECK(a.corpus == b.corpus);
    REQUIRE(a.train.size() == b.train.size());
    REQUIRE(a.test.size() == b.test.size());
    for (size_t i = 0; i < a.test.size(); ++i) {
        CHECK(a.test[i].id == b.test[i].id);
        CHECK(a.test[i].question == b.test[i].question);
    }

    SUBCASE("every test answer is stated in the corpus") {
        for (const auto& item : a.test) {
            const std::string& ans = item.answer_text();
            bool found = false;
            for (const auto& doc : a.corpus) {
                if (doc.find(" is " + ans + ".") != std::string::npos) {
                    found = true;
                    break;
                }
            }
            CHECK(found);
        }
    }
    SUBCASE("train and test are disjoint") {
        std::set<std::string> train_ids, train_questions;
        for (const auto& item : a.train) {
            train_ids.insert(item.id);
            train_questions.insert(item.question);
        }
        for (const auto& item : a.test) {
            CHECK(train_ids.count(item.id) == 0);
            CHECK(train_questions.count(item.question) == 0);
        }
    }
    SUBCASE("items have exactly 4 choices with one correct") {
        for (const auto& item : a.train) {
            CHECK(item.choices.size() == 4);
            CHECK_NOTHROW(item.answer_index());
            int same = 0;
            for (const auto& c : item.choices)
                if (c.text == item.answer_text()) ++same;
            CHECK(same == 1);
        }
    }
    SUBCASE("answer key position is roughly uniform") {
        int first = 0;
        for (const auto& item : a.train)
            if (item.answer_key == "A") ++first;
        double frac = static_cast<double>(first) / static_cast<double>(a.train.size());
        CHECK(frac > 0.05);
        CHECK(frac < 0.6);
    }
}

TEST_CASE("distractor plausibility zero uses gibberish distractors") {
    SyntheticSpec spec;
    spec.n_items = 16;
    spec.n_entities = 8;
    spec.n_relations = 4;
    spec.distractor_plausibility = 0.0;
    auto bench = gen_synthetic_benchmark(spec);
    // collect all value words stated in the corpus facts
    std::set<std::string> values;
    for (const auto& doc : bench.corpus) {
        auto pos = doc.rfind(" is ");
        if (pos != std::string::npos && doc.back() == '.') {
            values.insert(doc.substr(pos + 4, doc.size() - pos - 5));
        }
    }
    for (const auto& item : bench.train) {
        for (size_t c = 0; c < item.choices.size(); ++c) {
            if (static_cast<int>(c) == item.answer_index()) continue;
            CHECK(values.count(item.choices[c].text) == 0);
        }
    }
}

TEST_CASE("synthetic spec validation") {
    SyntheticSpec spec;
    spec.n_items = 100;
    spec.n_entities = 5;
    spec.n_relations = 4;  // 20 < 100
    CHECK_THROWS_WITH_AS(gen_synthetic_benchmark(spec), doctest::Contains("cover"), ContractError);
    spec.n_relations = 40;
    spec.distractor_plausibility = 1.5;
    CHECK_THROWS_AS(gen_synthetic_benchmark(spec), ContractError);
}

TEST_CASE("answer_key must match a choice") {
    MCQItem item = compound_item();
    item.answer_key = "Z";
    CHECK_THROWS_AS(item.answer_index(), ContractError);
}
