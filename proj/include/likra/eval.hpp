#pragma once

// Likelihood-ratio scoring and multiple-choice evaluation. Per-choice
// log-likelihoods are computed once per head into tables; scores, weight
// sweeps and external-table evaluation all share the same decision rule:
// argmax with lowest-index tie-break, acc over summed log-likelihoods and
// acc_norm over per-character ones.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "likra/datasets.hpp"
#include "likra/model.hpp"

namespace likra {

// Positive and negative heads over one shared base; score = L+ - w * L-.
struct LikraScorer {
    const Head* positive = nullptr;
    const Head* negative = nullptr;
    double weight = 1.0;

    LikraScorer(const Head* pos, const Head* neg, double w) : positive(pos), negative(neg), weight(w) {
        if (!pos || !neg || !pos->base || !neg->base) {
            throw ContractError("LikraScorer: both heads must be set");
        }
        if (pos->base != neg->base) {
            throw ContractError("LikraScorer: heads must share the same base weights");
        }
        if (!(w >= 0)) throw ContractError("LikraScorer: weight must be >= 0");
    }
};

struct ChoiceLogliks {
    double total = 0;
    double per_char = 0;
    double per_byte = 0;
};

// [item][choice] log-likelihoods for one head.
using HeadTable = std::vector<std::vector<ChoiceLogliks>>;

struct ChoiceRecord {
    std::string label;
    ChoiceLogliks plus;
    std::optional<ChoiceLogliks> minus;
    double score_total = 0;
    double score_per_char = 0;
};

struct ItemRecord {
    std::string item_id;
    std::vector<ChoiceRecord> choices;
    int correct_index = -1;
    int chosen_total = -1;   // argmax of score_total
    int chosen_norm = -1;    // argmax of score_per_char
    bool tie_total = false;  // tie broken by lowest index
    bool tie_norm = false;
};

struct EvalReport {
    double acc = 0;
    double acc_norm = 0;
    std::vector<ItemRecord> items;
};

struct EvalOptions {
    int k_shot = 0;
    uint64_t seed = 0;
    int jobs = 1;
};

// Per-character likelihood ratio for one answer string.
double likra_score(const LikraScorer& scorer, const std::string& context, const std::string& answer);

// Per-choice log-likelihoods for every test item under one head. The shot
// block is prepended to each item's "Question: ...\nAnswer: " context.
HeadTable compute_head_table(const Head& head, const std::vector<MCQItem>& test,
                             const std::string& shot_block, int jobs = 1);

// Decision rule shared by all evaluation paths. `minus` may be null
// (single-head evaluation, w ignored).
EvalReport decide_from_tables(const std::vector<MCQItem>& test, const HeadTable& plus,
                              const HeadTable* minus, double weight);

EvalReport evaluate_mcq(const Head& head, const std::vector<MCQItem>& test,
                        const std::vector<MCQItem>& few_shot_pool, const EvalOptions& opts);
EvalReport evaluate_mcq(const LikraScorer& scorer, const std::vector<MCQItem>& test,
                        const std::vector<MCQItem>& few_shot_pool, const EvalOptions& opts);

struct WeightPoint {
    double weight = 0;
    double acc = 0;
    double acc_norm = 0;
};

// One evaluation per weight over cached tables; likelihoods are computed
// once, only the combination varies.
std::vector<WeightPoint> weight_sweep(const LikraScorer& scorer, const std::vector<MCQItem>& test,
                                      const std::vector<MCQItem>& few_shot_pool,
                                      const std::vector<double>& weights, const EvalOptions& opts);

// ---- probability-mass probe (answer types vs training) ----

enum class AnswerType { correct = 0, incorrect = 1, irrelevant = 2, unrelated = 3 };
constexpr int kNumAnswerTypes = 4;
const char* to_string(AnswerType t);

// Texts fixed once under the base model: the most likely incorrect choice is
// selected by base per-character log-likelihood and never changes across
// checkpoints.
struct AnswerTypeProbe {
    struct Entry {
        std::string item_id;
        std::string context;  // shot block + "Question: ...\nAnswer: "
        std::array<std::string, kNumAnswerTypes> texts;
    };
    std::vector<Entry> entries;
    // base per-character log-likelihoods, [entry][type]
    std::vector<std::array<double, kNumAnswerTypes>> base_per_char;
};

AnswerTypeProbe build_probe(const Head& base_head, const std::vector<MCQItem>& test,
                            const std::vector<std::string>& unrelated_pool, uint64_t seed,
                            const std::string& shot_block = "", int jobs = 1);

// Mean per-character log-likelihood delta vs base for each answer type.
std::array<double, kNumAnswerTypes> probe_deltas(const AnswerTypeProbe& probe, const Head& head,
                                                 int jobs = 1);

// ---- external likelihood tables ----

struct TableRow {
    std::string item_id;
    std::string choice_label;
    double l_plus_total = 0;
    double l_plus_per_char = 0;
    double l_minus_total = 0;
    double l_minus_per_char = 0;
};

std::vector<TableRow> make_table_rows(const std::vector<MCQItem>& test, const HeadTable& plus,
                                      const HeadTable& minus);
void save_loglik_table(const std::string& path, const std::vector<TableRow>& rows);
std::vector<TableRow> load_loglik_table(const std::string& path);

// Same decision rule as evaluate_mcq, likelihoods sourced from the table.
// Missing (item, choice) entries raise ValidationError listing the item ids.
EvalReport score_from_table(const std::vector<MCQItem>& test, const std::vector<TableRow>& rows,
                            double weight);

// ---- report serialization ----

std::string report_to_json(const EvalReport& report);
void save_report_json(const std::string& path, const EvalReport& report);

}  // namespace likra
