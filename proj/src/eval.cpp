#include "likra/eval.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

namespace likra {

using nlohmann::json;

namespace {

// Static partition of items across jobs; per-item work is independent and
// results are merged in item order, so the outcome does not depend on the
// thread count.
void parallel_over(size_t n, int jobs, const std::function<void(size_t)>& fn) {
    jobs = std::max(1, jobs);
    if (jobs == 1 || n < 2) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> threads;
    size_t workers = std::min(static_cast<size_t>(jobs), n);
    std::exception_ptr error;
    std::mutex error_mutex;
    for (size_t w = 0; w < workers; ++w) {
        threads.emplace_back([&, w] {
            try {
                for (size_t i = w; i < n; i += workers) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        });
    }
    for (auto& t : threads) t.join();
    if (error) std::rethrow_exception(error);
}

void check_pool_disjoint(const std::vector<MCQItem>& test, const std::vector<MCQItem>& pool,
                         int k_shot) {
    if (k_shot == 0) return;
    std::set<std::string> test_ids;
    for (const auto& item : test) test_ids.insert(item.id);
    for (const auto& item : pool) {
        if (test_ids.count(item.id)) {
            throw ContractError("evaluate_mcq: few-shot pool overlaps test set (item " + item.id + ")");
        }
    }
}

int argmax_lowest_index(const std::vector<double>& scores, bool* tie) {
    int best = 0;
    for (size_t i = 1; i < scores.size(); ++i) {
        if (scores[i] > scores[best]) best = static_cast<int>(i);
    }
    if (tie) {
        *tie = false;
        for (size_t i = 0; i < scores.size(); ++i) {
            if (static_cast<int>(i) != best && scores[i] == scores[best]) {
                *tie = true;
                break;
            }
        }
    }
    return best;
}

}  // namespace

double likra_score(const LikraScorer& scorer, const std::string& context, const std::string& answer) {
    auto plus = sequence_loglik(*scorer.positive, context, answer);
    auto minus = sequence_loglik(*scorer.negative, context, answer);
    return plus.per_char - scorer.weight * minus.per_char;
}

HeadTable compute_head_table(const Head& head, const std::vector<MCQItem>& test,
                             const std::string& shot_block, int jobs) {
    HeadTable table(test.size());
    parallel_over(test.size(), jobs, [&](size_t i) {
        const MCQItem& item = test[i];
        std::string context = shot_block + "Question: " + item.question + "\nAnswer: ";
        std::vector<ChoiceLogliks> row;
        row.reserve(item.choices.size());
        for (const auto& choice : item.choices) {
            auto ll = sequence_loglik(head, context, choice.text);
            row.push_back({ll.total, ll.per_char, ll.per_byte});
        }
        table[i] = std::move(row);
    });
    return table;
}

EvalReport decide_from_tables(const std::vector<MCQItem>& test, const HeadTable& plus,
                              const HeadTable* minus, double weight) {
    if (test.empty()) throw ContractError("decide_from_tables: empty test set");
    if (plus.size() != test.size() || (minus && minus->size() != test.size())) {
        throw ContractError("decide_from_tables: table size does not match test set");
    }
    EvalReport report;
    report.items.reserve(test.size());
    int correct_total = 0, correct_norm = 0;
    for (size_t i = 0; i < test.size(); ++i) {
        const MCQItem& item = test[i];
        ItemRecord rec;
        rec.item_id = item.id;
        rec.correct_index = item.answer_index();
        std::vector<double> totals, norms;
        for (size_t c = 0; c < item.choices.size(); ++c) {
            ChoiceRecord cr;
            cr.label = item.choices[c].label;
            cr.plus = plus[i][c];
            cr.score_total = cr.plus.total;
            cr.score_per_char = cr.plus.per_char;
            if (minus) {
                cr.minus = (*minus)[i][c];
                cr.score_total -= weight * cr.minus->total;
                cr.score_per_char -= weight * cr.minus->per_char;
            }
            totals.push_back(cr.score_total);
            norms.push_back(cr.score_per_char);
            rec.choices.push_back(std::move(cr));
        }
        rec.chosen_total = argmax_lowest_index(totals, &rec.tie_total);
        rec.chosen_norm = argmax_lowest_index(norms, &rec.tie_norm);
        if (rec.chosen_total == rec.correct_index) ++correct_total;
        if (rec.chosen_norm == rec.correct_index) ++correct_norm;
        report.items.push_back(std::move(rec));
    }
    report.acc = static_cast<double>(correct_total) / static_cast<double>(test.size());
    report.acc_norm = static_cast<double>(correct_norm) / static_cast<double>(test.size());
    return report;
}

EvalReport evaluate_mcq(const Head& head, const std::vector<MCQItem>& test,
                        const std::vector<MCQItem>& few_shot_pool, const EvalOptions& opts) {
    if (test.empty()) throw ContractError("evaluate_mcq: empty test set");
    check_pool_disjoint(test, few_shot_pool, opts.k_shot);
    std::string shots = few_shot_context(few_shot_pool, opts.k_shot, opts.seed);
    HeadTable plus = compute_head_table(head, test, shots, opts.jobs);
    return decide_from_tables(test, plus, nullptr, 0.0);
}

EvalReport evaluate_mcq(const LikraScorer& scorer, const std::vector<MCQItem>& test,
                        const std::vector<MCQItem>& few_shot_pool, const EvalOptions& opts) {
    if (test.empty()) throw ContractError("evaluate_mcq: empty test set");
    check_pool_disjoint(test, few_shot_pool, opts.k_shot);
    std::string shots = few_shot_context(few_shot_pool, opts.k_shot, opts.seed);
    HeadTable plus = compute_head_table(*scorer.positive, test, shots, opts.jobs);
    HeadTable minus = compute_head_table(*scorer.negative, test, shots, opts.jobs);
    return decide_from_tables(test, plus, &minus, scorer.weight);
}

std::vector<WeightPoint> weight_sweep(const LikraScorer& scorer, const std::vector<MCQItem>& test,
                                      const std::vector<MCQItem>& few_shot_pool,
                                      const std::vector<double>& weights, const EvalOptions& opts) {
    if (test.empty()) throw ContractError("weight_sweep: empty test set");
    for (double w : weights) {
        if (!(w >= 0) || !std::isfinite(w)) {
            throw ContractError("weight_sweep: weights must be finite and >= 0");
        }
    }
    check_pool_disjoint(test, few_shot_pool, opts.k_shot);
    std::string shots = few_shot_context(few_shot_pool, opts.k_shot, opts.seed);
    HeadTable plus = compute_head_table(*scorer.positive, test, shots, opts.jobs);
    HeadTable minus = compute_head_table(*scorer.negative, test, shots, opts.jobs);
    std::vector<WeightPoint> out;
    out.reserve(weights.size());
    for (double w : weights) {
        EvalReport r = decide_from_tables(test, plus, &minus, w);
        out.push_back({w, r.acc, r.acc_norm});
    }
    return out;
}

const char* to_string(AnswerType t) {
    switch (t) {
        case AnswerType::correct: return "correct";
        case AnswerType::incorrect: return "incorrect";
        case AnswerType::irrelevant: return "irrelevant";
        case AnswerType::unrelated: return "unrelated";
    }
    return "?";
}

AnswerTypeProbe build_probe(const Head& base_head, const std::vector<MCQItem>& test,
                            const std::vector<std::string>& unrelated_pool, uint64_t seed,
                            const std::string& shot_block, int jobs) {
    if (test.empty()) throw ContractError("build_probe: empty test set");
    if (unrelated_pool.empty()) throw ContractError("build_probe: empty unrelated pool");

    AnswerTypeProbe probe;
    probe.entries.resize(test.size());
    probe.base_per_char.resize(test.size());

    // Base per-character likelihood of every choice picks the fixed
    // "most likely incorrect" text.
    HeadTable base_table = compute_head_table(base_head, test, shot_block, jobs);

    for (size_t i = 0; i < test.size(); ++i) {
        const MCQItem& item = test[i];
        auto& entry = probe.entries[i];
        entry.item_id = item.id;
        entry.context = shot_block + "Question: " + item.question + "\nAnswer: ";
        entry.texts[static_cast<int>(AnswerType::correct)] = item.answer_text();

        int correct_idx = item.answer_index();
        int best_wrong = -1;
        for (size_t c = 0; c < item.choices.size(); ++c) {
            if (static_cast<int>(c) == correct_idx) continue;
            if (best_wrong < 0 ||
                base_table[i][c].per_char > base_table[i][static_cast<size_t>(best_wrong)].per_char) {
                best_wrong = static_cast<int>(c);
            }
        }
        entry.texts[static_cast<int>(AnswerType::incorrect)] =
            item.choices[static_cast<size_t>(best_wrong)].text;

        Rng rng(derive_seed(seed, "probe", i));
        // irrelevant: a wrong choice of a different test item
        for (int attempt = 0;; ++attempt) {
            if (attempt > 200) throw ContractError("build_probe: cannot draw irrelevant text");
            size_t j = rng() % test.size();
            if (j == i && test.size() > 1) continue;
            const MCQItem& other = test[j];
            int oc = other.answer_index();
            std::vector<const std::string*> wrong;
            for (size_t c = 0; c < other.choices.size(); ++c) {
                if (static_cast<int>(c) != oc) wrong.push_back(&other.choices[c].text);
            }
            if (wrong.empty()) continue;
            const std::string& cand = *wrong[rng() % wrong.size()];
            if (cand == item.answer_text()) continue;
            entry.texts[static_cast<int>(AnswerType::irrelevant)] = cand;
            break;
        }
        entry.texts[static_cast<int>(AnswerType::unrelated)] = unrelated_pool[rng() % unrelated_pool.size()];
    }

    parallel_over(test.size(), jobs, [&](size_t i) {
        for (int t = 0; t < kNumAnswerTypes; ++t) {
            probe.base_per_char[i][static_cast<size_t>(t)] =
                sequence_loglik(base_head, probe.entries[i].context, probe.entries[i].texts[static_cast<size_t>(t)])
                    .per_char;
        }
    });
    return probe;
}

std::array<double, kNumAnswerTypes> probe_deltas(const AnswerTypeProbe& probe, const Head& head,
                                                 int jobs) {
    if (probe.entries.empty()) throw ContractError("probe_deltas: empty probe");
    std::vector<std::array<double, kNumAnswerTypes>> per_entry(probe.entries.size());
    parallel_over(probe.entries.size(), jobs, [&](size_t i) {
        for (int t = 0; t < kNumAnswerTypes; ++t) {
            double pc =
                sequence_loglik(head, probe.entries[i].context, probe.entries[i].texts[static_cast<size_t>(t)])
                    .per_char;
            per_entry[i][static_cast<size_t>(t)] = pc - probe.base_per_char[i][static_cast<size_t>(t)];
        }
    });
    std::array<double, kNumAnswerTypes> mean{};
    for (const auto& e : per_entry) {
        for (int t = 0; t < kNumAnswerTypes; ++t) mean[static_cast<size_t>(t)] += e[static_cast<size_t>(t)];
    }
    for (auto& m : mean) m /= static_cast<double>(per_entry.size());
    return mean;
}

std::vector<TableRow> make_table_rows(const std::vector<MCQItem>& test, const HeadTable& plus,
                                      const HeadTable& minus) {
    std::vector<TableRow> rows;
    for (size_t i = 0; i < test.size(); ++i) {
        for (size_t c = 0; c < test[i].choices.size(); ++c) {
            rows.push_back({test[i].id, test[i].choices[c].label, plus[i][c].total, plus[i][c].per_char,
                            minus[i][c].total, minus[i][c].per_char});
        }
    }
    return rows;
}

void save_loglik_table(const std::string& path, const std::vector<TableRow>& rows) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write likelihood table: " + path);
    for (const auto& r : rows) {
        out << json{{"item_id", r.item_id},
                    {"choice_label", r.choice_label},
                    {"l_plus_total", r.l_plus_total},
                    {"l_plus_per_char", r.l_plus_per_char},
                    {"l_minus_total", r.l_minus_total},
                    {"l_minus_per_char", r.l_minus_per_char}}
                   .dump()
            << "\n";
    }
}

std::vector<TableRow> load_loglik_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open likelihood table: " + path);
    std::vector<TableRow> rows;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            json j = json::parse(line);
            TableRow r;
            r.item_id = j.at("item_id").get<std::string>();
            r.choice_label = j.at("choice_label").get<std::string>();
            r.l_plus_total = j.at("l_plus_total").get<double>();
            r.l_plus_per_char = j.at("l_plus_per_char").get<double>();
            r.l_minus_total = j.value("l_minus_total", 0.0);
            r.l_minus_per_char = j.value("l_minus_per_char", 0.0);
            rows.push_back(std::move(r));
        } catch (const json::exception& e) {
            throw ParseError(path + ": line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return rows;
}

EvalReport score_from_table(const std::vector<MCQItem>& test, const std::vector<TableRow>& rows,
                            double weight) {
    if (test.empty()) throw ContractError("score_from_table: empty test set");
    std::map<std::pair<std::string, std::string>, const TableRow*> index;
    for (const auto& r : rows) index[{r.item_id, r.choice_label}] = &r;

    HeadTable plus(test.size()), minus(test.size());
    std::vector<std::string> missing;
    for (size_t i = 0; i < test.size(); ++i) {
        const MCQItem& item = test[i];
        bool item_ok = true;
        for (const auto& choice : item.choices) {
            auto it = index.find({item.id, choice.label});
            if (it == index.end()) {
                item_ok = false;
                continue;
            }
            const TableRow* r = it->second;
            plus[i].push_back({r->l_plus_total, r->l_plus_per_char, 0});
            minus[i].push_back({r->l_minus_total, r->l_minus_per_char, 0});
        }
        if (!item_ok) missing.push_back(item.id);
    }
    if (!missing.empty()) {
        std::ostringstream os;
        os << "score_from_table: missing entries for " << missing.size() << " item(s):";
        for (size_t i = 0; i < missing.size() && i < 20; ++i) os << ' ' << missing[i];
        if (missing.size() > 20) os << " ...";
        throw ValidationError(os.str());
    }
    return decide_from_tables(test, plus, &minus, weight);
}

std::string report_to_json(const EvalReport& report) {
    json items = json::array();
    for (const auto& rec : report.items) {
        json choices = json::array();
        for (const auto& c : rec.choices) {
            json cj{{"label", c.label},
                    {"l_plus_total", c.plus.total},
                    {"l_plus_per_char", c.plus.per_char},
                    {"l_plus_per_byte", c.plus.per_byte},
                    {"score_total", c.score_total},
                    {"score_per_char", c.score_per_char}};
            if (c.minus) {
                cj["l_minus_total"] = c.minus->total;
                cj["l_minus_per_char"] = c.minus->per_char;
                cj["l_minus_per_byte"] = c.minus->per_byte;
            }
            choices.push_back(std::move(cj));
        }
        items.push_back(json{{"item_id", rec.item_id},
                             {"choices", choices},
                             {"correct_index", rec.correct_index},
                             {"chosen_total", rec.chosen_total},
                             {"chosen_norm", rec.chosen_norm},
                             {"tie_total", rec.tie_total},
                             {"tie_norm", rec.tie_norm},
                             {"correct_by_total", rec.chosen_total == rec.correct_index},
                             {"correct_by_norm", rec.chosen_norm == rec.correct_index}});
    }
    json j{{"acc", report.acc}, {"acc_norm", report.acc_norm}, {"items", items}};
    return j.dump(2);
}

void save_report_json(const std::string& path, const EvalReport& report) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write report: " + path);
    out << report_to_json(report) << "\n";
}

}  // namespace likra
