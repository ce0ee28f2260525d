#pragma once

// Multiple-choice data model: ARC-style JSONL ingestion, the
// question/answer formatting template, few-shot context assembly, negative
// example construction (incorrect / irrelevant / unrelated), and a seeded
// synthetic benchmark whose facts are all stated in its own pretraining
// corpus.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "likra/util.hpp"

namespace likra {

struct Choice {
    std::string label;
    std::string text;
};

struct MCQItem {
    std::string id;
    std::string question;
    std::vector<Choice> choices;
    std::string answer_key;

    int answer_index() const {
        for (size_t i = 0; i < choices.size(); ++i) {
            if (choices[i].label == answer_key) return static_cast<int>(i);
        }
        throw ContractError("item " + id + ": answer_key '" + answer_key + "' matches no choice");
    }
    const std::string& answer_text() const { return choices[static_cast<size_t>(answer_index())].text; }
};

enum class Polarity { positive, negative };

enum class NegativeKind { incorrect, irrelevant, unrelated };

inline const char* to_string(NegativeKind k) {
    switch (k) {
        case NegativeKind::incorrect: return "incorrect";
        case NegativeKind::irrelevant: return "irrelevant";
        case NegativeKind::unrelated: return "unrelated";
    }
    return "?";
}

inline NegativeKind negative_kind_from_string(const std::string& s) {
    if (s == "incorrect") return NegativeKind::incorrect;
    if (s == "irrelevant") return NegativeKind::irrelevant;
    if (s == "unrelated") return NegativeKind::unrelated;
    throw ContractError("unknown negative strategy '" + s + "'");
}

struct TrainExample {
    std::string question;
    std::string answer;
    Polarity polarity = Polarity::positive;
    std::optional<NegativeKind> negative_kind;
};

// Loads one JSON object per line. Accepts both the flat layout
// {question, choices:{text:[],label:[]}, answerKey} and the nested ARC
// layout {question:{stem, choices:[{label,text}]}, answerKey}. All bad
// lines are collected and reported together with their line numbers.
std::vector<MCQItem> load_mcq_jsonl(const std::string& path);
void save_mcq_jsonl(const std::string& path, const std::vector<MCQItem>& items);

// "Question: {q}\nAnswer: {a}"
std::string format_example(const std::string& question, const std::string& answer);

// The context/target split used for scoring and training:
// ("Question: {q}\nAnswer: ", "{a}").
std::pair<std::string, std::string> split_context_target(const std::string& question,
                                                         const std::string& answer);

// k formatted correct pairs separated by blank lines, ending with a blank
// line so a question can be appended directly. k=0 gives "".
std::string few_shot_context(const std::vector<MCQItem>& pool, int k, uint64_t seed);

std::vector<TrainExample> make_positives(const std::vector<MCQItem>& items);

// One negative per item. incorrect: random wrong choice of the same item;
// irrelevant: random wrong choice of a different item in the set;
// unrelated: random entry of alt_pool. Never pairs a question with its own
// correct answer text.
std::vector<TrainExample> make_negatives(const std::vector<MCQItem>& items, NegativeKind strategy,
                                         const std::vector<std::string>& alt_pool, uint64_t seed);

struct SyntheticSpec {
    int n_entities = 64;
    int n_relations = 12;
    int n_items = 512;
    double distractor_plausibility = 1.0;
    uint64_t seed = 0;

    void validate() const;
};

struct SyntheticBenchmark {
    std::vector<std::string> corpus;
    std::vector<MCQItem> train;
    std::vector<MCQItem> test;
};

// Deterministic invented world: pseudo-word entities and relations, one fact
// per question, every fact stated in the corpus, distractors drawn from the
// same relation's value pool with probability distractor_plausibility and
// from gibberish otherwise. Train and test questions are disjoint.
SyntheticBenchmark gen_synthetic_benchmark(const SyntheticSpec& spec);

// Answer-phrase pool stylistically unlike the synthetic benchmark's answers,
// for the `unrelated` negative strategy and the probe.
std::vector<std::string> gen_unrelated_pool(int n, uint64_t seed);

}  // namespace likra
