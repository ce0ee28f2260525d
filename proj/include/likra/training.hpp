#pragma once

// Next-token pretraining over the synthetic corpus, answer-masked MLE
// fine-tuning of LoRA heads (identical procedure for positive and negative
// data), and learning-curve sweeps over nested training subsets.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "likra/datasets.hpp"
#include "likra/model.hpp"

namespace likra {

struct PretrainOptions {
    int steps = 0;
    uint64_t seed = 0;
    int batch_size = 16;
    double lr = 3e-4;
    int seq_len = 128;
    int snapshot_every = 50;       // divergence fallback granularity
    std::string log_path;          // optional JSONL {step, loss}
};

struct PretrainResult {
    double final_loss = 0;  // mean batch loss over the trailing window
    bool diverged = false;
    int steps_done = 0;
};

// MLE over the packed corpus stream. steps=0 returns the seed-determined
// initialization unchanged. On divergence (non-finite loss or parameters)
// the last snapshot is restored and `diverged` is set.
std::pair<BaseWeights, PretrainResult> pretrain(const std::vector<std::string>& corpus,
                                                const ModelConfig& model_config,
                                                const PretrainOptions& opts);

// Mean per-token negative log-likelihood of the packed corpus under a head;
// the pretraining objective measured without gradients.
double corpus_loss(const Head& head, const std::vector<std::string>& corpus, int seq_len = 128);

struct FinetuneConfig {
    int batch_size = 8;
    double lr = 1e-4;
    int epochs = 1;
    uint64_t seed = 0;
    double grad_clip_norm = 0;  // <= 0: off
    LoraConfig lora;
    std::string log_path;  // optional JSONL {step, loss}

    void validate() const {
        if (batch_size < 1) throw ContractError("finetune: batch_size must be >= 1");
        if (epochs < 1) throw ContractError("finetune: epochs must be >= 1");
        if (!(lr > 0)) throw ContractError("finetune: lr must be positive");
    }
};

// Trains a fresh adapter on examples of a single polarity over the frozen
// base; which polarity is purely a property of the data. An empty example
// list returns the untouched (no-op) adapter.
LoraAdapter finetune_head(BaseWeights& base, const std::vector<TrainExample>& examples,
                          const FinetuneConfig& cfg);

struct EvalMetrics {
    double acc = 0;
    double acc_norm = 0;
};

struct CurvePoint {
    int n_examples = 0;
    double acc = 0;
    double acc_norm = 0;
    std::string adapter_checksum;
};

using CurveEvalFn = std::function<EvalMetrics(int n, LoraAdapter& adapter)>;

// Trains one head per size on the first n examples of the seed-shuffled pool
// (subsets nest) and evaluates it via eval_fn.
std::vector<CurvePoint> learning_curve(BaseWeights& base, const std::vector<TrainExample>& pool,
                                       const std::vector<int>& sizes, Polarity polarity,
                                       const FinetuneConfig& cfg, const CurveEvalFn& eval_fn);

// The seed-shuffled pool order used by learning_curve (prefixes of this
// vector are the nested training subsets).
std::vector<TrainExample> shuffled_pool(const std::vector<TrainExample>& pool, uint64_t seed);

}  // namespace likra
