#include "likra/datasets.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace likra {

using nlohmann::json;

namespace {

MCQItem parse_item(const json& j, int line_no) {
    MCQItem item;
    if (j.contains("id")) {
        item.id = j.at("id").get<std::string>();
    } else {
        item.id = "line" + std::to_string(line_no);
    }

    if (!j.contains("question")) throw ParseError("missing field 'question'");
    const json& q = j.at("question");
    if (q.is_string()) {
        item.question = q.get<std::string>();
        if (!j.contains("choices")) throw ParseError("missing field 'choices'");
        const json& c = j.at("choices");
        if (!c.contains("text") || !c.contains("label")) {
            throw ParseError("'choices' must hold 'text' and 'label' arrays");
        }
        const auto& texts = c.at("text");
        const auto& labels = c.at("label");
        if (!texts.is_array() || !labels.is_array() || texts.size() != labels.size()) {
            throw ParseError("'choices.text' and 'choices.label' must be arrays of equal length");
        }
        for (size_t i = 0; i < texts.size(); ++i) {
            item.choices.push_back({labels[i].get<std::string>(), texts[i].get<std::string>()});
        }
    } else if (q.is_object()) {
        // ARC layout: question.stem + question.choices[{label,text}]
        if (!q.contains("stem")) throw ParseError("'question' object missing 'stem'");
        item.question = q.at("stem").get<std::string>();
        if (!q.contains("choices") || !q.at("choices").is_array()) {
            throw ParseError("'question' object missing 'choices' array");
        }
        for (const auto& c : q.at("choices")) {
            item.choices.push_back({c.at("label").get<std::string>(), c.at("text").get<std::string>()});
        }
    } else {
        throw ParseError("'question' must be a string or an object with 'stem'");
    }

    if (!j.contains("answerKey")) throw ParseError("missing field 'answerKey'");
    item.answer_key = j.at("answerKey").get<std::string>();

    if (item.question.empty()) throw ParseError("empty question");
    if (item.choices.size() < 2) throw ParseError("need at least 2 choices");
    int matches = 0;
    std::set<std::string> labels;
    for (const auto& c : item.choices) {
        if (c.text.empty()) throw ParseError("empty choice text for label '" + c.label + "'");
        if (!labels.insert(c.label).second) throw ParseError("duplicate choice label '" + c.label + "'");
        if (c.label == item.answer_key) ++matches;
    }
    if (matches != 1) {
        throw ParseError("answerKey '" + item.answer_key + "' matches " + std::to_string(matches) +
                         " choice labels");
    }
    return item;
}

}  // namespace

std::vector<MCQItem> load_mcq_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open dataset file: " + path);
    std::vector<MCQItem> items;
    std::vector<std::string> errors;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            json j = json::parse(line);
            items.push_back(parse_item(j, line_no));
        } catch (const json::exception& e) {
            errors.push_back("line " + std::to_string(line_no) + ": " + e.what());
        } catch (const ParseError& e) {
            errors.push_back("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (!errors.empty()) {
        std::ostringstream os;
        os << path << ": " << errors.size() << " malformed line(s)";
        for (size_t i = 0; i < errors.size() && i < 10; ++i) os << "\n  " << errors[i];
        if (errors.size() > 10) os << "\n  ...";
        throw ParseError(os.str());
    }
    return items;
}

void save_mcq_jsonl(const std::string& path, const std::vector<MCQItem>& items) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write dataset file: " + path);
    for (const auto& item : items) {
        json choices;
        choices["text"] = json::array();
        choices["label"] = json::array();
        for (const auto& c : item.choices) {
            choices["text"].push_back(c.text);
            choices["label"].push_back(c.label);
        }
        json j;
        j["id"] = item.id;
        j["question"] = item.question;
        j["choices"] = choices;
        j["answerKey"] = item.answer_key;
        out << j.dump() << "\n";
    }
}

std::string format_example(const std::string& question, const std::string& answer) {
    if (question.empty()) throw ContractError("format_example: empty question");
    if (answer.empty()) throw ContractError("format_example: empty answer");
    return "Question: " + question + "\nAnswer: " + answer;
}

std::pair<std::string, std::string> split_context_target(const std::string& question,
                                                         const std::string& answer) {
    if (question.empty()) throw ContractError("split_context_target: empty question");
    if (answer.empty()) throw ContractError("split_context_target: empty answer");
    return {"Question: " + question + "\nAnswer: ", answer};
}

std::string few_shot_context(const std::vector<MCQItem>& pool, int k, uint64_t seed) {
    if (k < 0) throw ContractError("few_shot_context: k must be >= 0");
    if (k > static_cast<int>(pool.size())) {
        throw ContractError("few_shot_context: k=" + std::to_string(k) + " exceeds pool size " +
                            std::to_string(pool.size()));
    }
    if (k == 0) return "";
    std::vector<size_t> idx(pool.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(derive_seed(seed, "few-shot"));
    std::shuffle(idx.begin(), idx.end(), rng);
    std::string out;
    for (int i = 0; i < k; ++i) {
        const MCQItem& item = pool[idx[static_cast<size_t>(i)]];
        out += format_example(item.question, item.answer_text());
        out += "\n\n";
    }
    return out;
}

std::vector<TrainExample> make_positives(const std::vector<MCQItem>& items) {
    std::vector<TrainExample> out;
    out.reserve(items.size());
    for (const auto& item : items) {
        out.push_back({item.question, item.answer_text(), Polarity::positive, std::nullopt});
    }
    return out;
}

std::vector<TrainExample> make_negatives(const std::vector<MCQItem>& items, NegativeKind strategy,
                                         const std::vector<std::string>& alt_pool, uint64_t seed) {
    if (strategy == NegativeKind::irrelevant && items.size() < 2) {
        throw ContractError("make_negatives(irrelevant): need at least 2 items");
    }
    if (strategy == NegativeKind::unrelated && alt_pool.empty()) {
        throw ContractError("make_negatives(unrelated): alt_pool must be non-empty");
    }
    std::vector<TrainExample> out;
    out.reserve(items.size());
    for (size_t i = 0; i < items.size(); ++i) {
        const MCQItem& item = items[i];
        const std::string& correct = item.answer_text();
        Rng rng(derive_seed(seed, "negatives", i));
        std::string answer;
        switch (strategy) {
            case NegativeKind::incorrect: {
                std::vector<const std::string*> wrong;
                int correct_idx = item.answer_index();
                for (size_t c = 0; c < item.choices.size(); ++c) {
                    if (static_cast<int>(c) != correct_idx) wrong.push_back(&item.choices[c].text);
                }
                if (wrong.empty()) {
                    throw ContractError("make_negatives(incorrect): item " + item.id +
                                        " has no wrong choice");
                }
                answer = *wrong[rng() % wrong.size()];
                break;
            }
            case NegativeKind::irrelevant: {
                for (int attempt = 0;; ++attempt) {
                    if (attempt > 200) {
                        throw ContractError("make_negatives(irrelevant): no usable wrong answer for item " +
                                            item.id);
                    }
                    size_t j = rng() % items.size();
                    if (j == i) continue;
                    const MCQItem& other = items[j];
                    int other_correct = other.answer_index();
                    std::vector<const std::string*> wrong;
                    for (size_t c = 0; c < other.choices.size(); ++c) {
                        if (static_cast<int>(c) != other_correct) wrong.push_back(&other.choices[c].text);
                    }
                    if (wrong.empty()) continue;
                    const std::string& cand = *wrong[rng() % wrong.size()];
                    if (cand == correct) continue;
                    answer = cand;
                    break;
                }
                break;
            }
            case NegativeKind::unrelated: {
                bool usable = false;
                for (const auto& s : alt_pool) {
                    if (s != correct) {
                        usable = true;
                        break;
                    }
                }
                if (!usable) {
                    throw ContractError("make_negatives(unrelated): alt_pool holds no text different "
                                        "from the correct answer of item " + item.id);
                }
                do {
                    answer = alt_pool[rng() % alt_pool.size()];
                } while (answer == correct);
                break;
            }
        }
        out.push_back({item.question, answer, Polarity::negative, strategy});
    }
    return out;
}

void SyntheticSpec::validate() const {
    if (n_entities < 1 || n_relations < 1 || n_items < 8) {
        throw ContractError("synthetic spec: need n_entities >= 1, n_relations >= 1, n_items >= 8");
    }
    if (static_cast<long>(n_entities) * n_relations < n_items) {
        throw ContractError("synthetic spec: n_entities * n_relations (" +
                            std::to_string(static_cast<long>(n_entities) * n_relations) +
                            ") must cover n_items (" + std::to_string(n_items) + ")");
    }
    if (distractor_plausibility < 0.0 || distractor_plausibility > 1.0) {
        throw ContractError("synthetic spec: distractor_plausibility must lie in [0,1]");
    }
}

namespace {

// Pronounceable pseudo-words, unique across one generator instance.
class WordGen {
  public:
    WordGen(uint64_t seed, std::string_view consonants, std::string_view vowels)
        : rng_(seed), cons_(consonants), vows_(vowels) {}

    std::string next(int min_syllables = 2, int max_syllables = 3) {
        for (int attempt = 0; attempt < 10000; ++attempt) {
            int ns = min_syllables + static_cast<int>(rng_() % static_cast<uint64_t>(max_syllables - min_syllables + 1));
            std::string w;
            for (int s = 0; s < ns; ++s) {
                w.push_back(cons_[rng_() % cons_.size()]);
                w.push_back(vows_[rng_() % vows_.size()]);
                if (rng_() % 3 == 0) w.push_back(cons_[rng_() % cons_.size()]);
            }
            if (used_.insert(w).second) return w;
        }
        throw ContractError("pseudo-word space exhausted");
    }

  private:
    Rng rng_;
    std::string cons_, vows_;
    std::set<std::string> used_;
};

constexpr int kValuesPerRelation = 8;
// Fraction of train facts also shown in question/answer format during
// pretraining, so the base model knows the evaluation template.
constexpr double kQaExposureFraction = 0.25;
constexpr double kTestFraction = 0.25;

}  // namespace

SyntheticBenchmark gen_synthetic_benchmark(const SyntheticSpec& spec) {
    spec.validate();

    WordGen words(derive_seed(spec.seed, "words"), "bdfgklmnprstvz", "aeiou");
    WordGen gibberish(derive_seed(spec.seed, "gibberish"), "qxjwhc", "aeiouy");

    std::vector<std::string> entities, relations;
    for (int i = 0; i < spec.n_entities; ++i) entities.push_back(words.next());
    for (int i = 0; i < spec.n_relations; ++i) relations.push_back(words.next());
    std::vector<std::vector<std::string>> values(static_cast<size_t>(spec.n_relations));
    for (auto& pool : values) {
        for (int i = 0; i < kValuesPerRelation; ++i) pool.push_back(words.next());
    }

    // One fact per question: distinct (entity, relation) pairs.
    std::vector<std::pair<int, int>> pairs;
    pairs.reserve(static_cast<size_t>(spec.n_entities) * spec.n_relations);
    for (int e = 0; e < spec.n_entities; ++e)
        for (int r = 0; r < spec.n_relations; ++r) pairs.emplace_back(e, r);
    Rng fact_rng(derive_seed(spec.seed, "facts"));
    std::shuffle(pairs.begin(), pairs.end(), fact_rng);
    pairs.resize(static_cast<size_t>(spec.n_items));

    struct Fact {
        int entity, relation, value;
    };
    std::vector<Fact> facts;
    facts.reserve(pairs.size());
    for (auto [e, r] : pairs) {
        facts.push_back({e, r, static_cast<int>(fact_rng() % kValuesPerRelation)});
    }

    // Build items with shuffled choice labels.
    static const char* kLabels[4] = {"A", "B", "C", "D"};
    std::vector<MCQItem> items;
    items.reserve(facts.size());
    Rng item_rng(derive_seed(spec.seed, "items"));
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    for (size_t i = 0; i < facts.size(); ++i) {
        const Fact& f = facts[i];
        const auto& pool = values[static_cast<size_t>(f.relation)];
        const std::string& correct = pool[static_cast<size_t>(f.value)];

        std::vector<std::string> texts{correct};
        while (texts.size() < 4) {
            std::string cand;
            if (coin(item_rng) < spec.distractor_plausibility) {
                cand = pool[item_rng() % pool.size()];
            } else {
                cand = gibberish.next();
            }
            if (std::find(texts.begin(), texts.end(), cand) == texts.end()) texts.push_back(cand);
        }
        std::vector<int> order{0, 1, 2, 3};
        std::shuffle(order.begin(), order.end(), item_rng);

        MCQItem item;
        item.id = "syn-" + std::to_string(i);
        item.question = "What is the " + relations[static_cast<size_t>(f.relation)] + " of " +
                        entities[static_cast<size_t>(f.entity)] + "?";
        for (int c = 0; c < 4; ++c) {
            item.choices.push_back({kLabels[c], texts[static_cast<size_t>(order[static_cast<size_t>(c)])]});
            if (order[static_cast<size_t>(c)] == 0) item.answer_key = kLabels[c];
        }
        items.push_back(std::move(item));
    }

    // Split; both splits' facts are stated in the corpus.
    std::vector<size_t> idx(items.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng split_rng(derive_seed(spec.seed, "split"));
    std::shuffle(idx.begin(), idx.end(), split_rng);
    size_t n_test = static_cast<size_t>(static_cast<double>(items.size()) * kTestFraction);
    if (n_test < 1) n_test = 1;

    SyntheticBenchmark bench;
    for (size_t i = 0; i < idx.size(); ++i) {
        if (i < n_test) {
            bench.test.push_back(items[idx[i]]);
        } else {
            bench.train.push_back(items[idx[i]]);
        }
    }

    for (const Fact& f : facts) {
        bench.corpus.push_back("The " + relations[static_cast<size_t>(f.relation)] + " of " +
                               entities[static_cast<size_t>(f.entity)] + " is " +
                               values[static_cast<size_t>(f.relation)][static_cast<size_t>(f.value)] + ".");
    }
    // Question-format exposure for a slice of the train split only.
    Rng qa_rng(derive_seed(spec.seed, "qa-exposure"));
    for (const MCQItem& item : bench.train) {
        if (coin(qa_rng) < kQaExposureFraction) {
            bench.corpus.push_back(format_example(item.question, item.answer_text()));
        }
    }
    return bench;
}

std::vector<std::string> gen_unrelated_pool(int n, uint64_t seed) {
    static const std::vector<std::string> verbs = {
        "is playing the piano",      "is riding a bicycle",      "stirs the soup slowly",
        "is painting the fence",     "claps along with the music", "is folding the laundry",
        "kicks the ball downfield",  "is reading a newspaper",   "waters the garden daily",
        "is tying a shoelace",       "sweeps the kitchen floor", "is flying a small kite",
        "hums a cheerful tune",      "is stacking wooden blocks", "jogs around the park",
        "is washing the dishes",     "draws a simple map",       "is peeling an orange",
        "waves to the crowd",        "is sharpening a pencil"};
    if (n < 1) throw ContractError("gen_unrelated_pool: n must be >= 1");
    std::vector<std::string> out;
    out.reserve(static_cast<size_t>(n));
    Rng rng(derive_seed(seed, "unrelated-pool"));
    for (int i = 0; i < n; ++i) out.push_back(verbs[rng() % verbs.size()]);
    return out;
}

}  // namespace likra
