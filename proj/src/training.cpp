#include "likra/training.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "likra/adam.hpp"
#include "likra/tokenizer.hpp"

namespace likra {

namespace {

// BOS doc EOS BOS doc EOS ... as one flat stream.
std::vector<int32_t> pack_corpus(const std::vector<std::string>& corpus) {
    std::vector<int32_t> stream;
    for (const auto& doc : corpus) {
        stream.push_back(ByteTokenizer::kBos);
        auto ids = ByteTokenizer::encode(doc);
        stream.insert(stream.end(), ids.begin(), ids.end());
        stream.push_back(ByteTokenizer::kEos);
    }
    return stream;
}

std::vector<std::vector<int32_t>> make_windows(const std::vector<int32_t>& stream, int seq_len) {
    std::vector<std::vector<int32_t>> windows;
    size_t stride = static_cast<size_t>(seq_len) + 1;
    for (size_t start = 0; start < stream.size(); start += stride) {
        size_t end = std::min(stream.size(), start + stride);
        if (end - start >= 2) {
            windows.emplace_back(stream.begin() + static_cast<std::ptrdiff_t>(start),
                                 stream.begin() + static_cast<std::ptrdiff_t>(end));
        }
    }
    return windows;
}

class StepLog {
  public:
    explicit StepLog(const std::string& path) {
        if (!path.empty()) out_.open(path, std::ios::app);
    }
    void log(int64_t step, double loss) {
        if (out_.is_open()) {
            out_ << nlohmann::json{{"step", step}, {"loss", loss}}.dump() << "\n";
        }
    }

  private:
    std::ofstream out_;
};

std::vector<std::vector<float>> snapshot_params(std::vector<NamedParam<float>>& params) {
    std::vector<std::vector<float>> snap;
    snap.reserve(params.size());
    for (auto& p : params) snap.push_back(p.tensor.data());
    return snap;
}

void restore_params(std::vector<NamedParam<float>>& params,
                    const std::vector<std::vector<float>>& snap) {
    for (size_t i = 0; i < params.size(); ++i) params[i].tensor.data() = snap[i];
}

}  // namespace

std::pair<BaseWeights, PretrainResult> pretrain(const std::vector<std::string>& corpus,
                                                const ModelConfig& model_config,
                                                const PretrainOptions& opts) {
    if (corpus.empty()) throw ContractError("pretrain: empty corpus");
    if (opts.steps < 0) throw ContractError("pretrain: steps must be >= 0");
    model_config.validate();

    BaseWeights weights = BaseWeights::init(model_config, opts.seed);
    PretrainResult result;
    if (opts.steps == 0) return {std::move(weights), result};

    weights.set_requires_grad(true);
    auto params = weights.named_params();
    AdamConfig<float> acfg;
    acfg.lr = static_cast<float>(opts.lr);
    AdamOptimizer<float> opt(params, acfg);

    auto stream = pack_corpus(corpus);
    auto windows = make_windows(stream, std::min(opts.seq_len, model_config.max_seq_len - 1));
    if (windows.empty()) throw ContractError("pretrain: corpus packs to no training windows");

    Head head{&weights, nullptr};
    Rng order_rng(derive_seed(opts.seed, "pretrain-order"));
    std::vector<size_t> order(windows.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), order_rng);
    size_t cursor = 0;

    StepLog log(opts.log_path);
    auto snapshot = snapshot_params(params);
    std::vector<double> recent;

    for (int step = 0; step < opts.steps; ++step) {
        double batch_loss = 0;
        bool bad = false;
        try {
            opt.zero_grad();
            for (int b = 0; b < opts.batch_size; ++b) {
                if (cursor == order.size()) {
                    std::shuffle(order.begin(), order.end(), order_rng);
                    cursor = 0;
                }
                const auto& window = windows[order[cursor++]];
                Tensor loss = span_loss_tokens(head, window, 1, true);
                batch_loss += static_cast<double>(loss.item());
                loss.backward(1.0f / static_cast<float>(opts.batch_size));
            }
            batch_loss /= opts.batch_size;
            if (!std::isfinite(batch_loss)) bad = true;
            if (!bad) opt.step();
        } catch (const ContractError&) {
            bad = true;  // non-finite gradients or parameters
        }
        if (bad) {
            restore_params(params, snapshot);
            result.diverged = true;
            result.steps_done = step;
            result.final_loss = recent.empty() ? batch_loss
                                               : std::accumulate(recent.begin(), recent.end(), 0.0) /
                                                     static_cast<double>(recent.size());
            weights.set_requires_grad(false);
            return {std::move(weights), result};
        }
        log.log(step + 1, batch_loss);
        recent.push_back(batch_loss);
        if (recent.size() > 20) recent.erase(recent.begin());
        if ((step + 1) % opts.snapshot_every == 0) snapshot = snapshot_params(params);
    }
    result.steps_done = opts.steps;
    result.final_loss =
        std::accumulate(recent.begin(), recent.end(), 0.0) / static_cast<double>(recent.size());
    weights.set_requires_grad(false);
    return {std::move(weights), result};
}

double corpus_loss(const Head& head, const std::vector<std::string>& corpus, int seq_len) {
    auto stream = pack_corpus(corpus);
    auto windows = make_windows(stream, std::min(seq_len, head.base->config.max_seq_len - 1));
    double total = 0;
    int64_t tokens = 0;
    for (const auto& window : windows) {
        Tensor loss = span_loss_tokens(head, window, 1, false);
        total += static_cast<double>(loss.item());
        tokens += static_cast<int64_t>(window.size()) - 1;
    }
    return total / static_cast<double>(tokens);
}

LoraAdapter finetune_head(BaseWeights& base, const std::vector<TrainExample>& examples,
                          const FinetuneConfig& cfg) {
    cfg.validate();
    if (!examples.empty()) {
        Polarity polarity = examples.front().polarity;
        for (const auto& ex : examples) {
            if (ex.polarity != polarity) {
                throw ContractError("finetune_head: mixed polarities in example list; "
                                    "a head is trained on one polarity");
            }
        }
    }
    base.set_requires_grad(false);
    LoraAdapter adapter = LoraAdapter::init(base.config, cfg.lora, derive_seed(cfg.seed, "adapter-init"));
    if (examples.empty()) return adapter;

    adapter.set_requires_grad(true);
    AdamConfig<float> acfg;
    acfg.lr = static_cast<float>(cfg.lr);
    acfg.clip_norm = static_cast<float>(cfg.grad_clip_norm);
    AdamOptimizer<float> opt(adapter.named_params(), acfg);

    Head head{&base, &adapter};
    std::vector<size_t> order(examples.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(cfg.seed, "finetune-order"));

    StepLog log(cfg.log_path);
    int64_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        size_t i = 0;
        while (i < order.size()) {
            size_t batch_end = std::min(order.size(), i + static_cast<size_t>(cfg.batch_size));
            int count = static_cast<int>(batch_end - i);
            opt.zero_grad();
            double batch_loss = 0;
            for (; i < batch_end; ++i) {
                const TrainExample& ex = examples[order[i]];
                auto [ctx, tgt] = split_context_target(ex.question, ex.answer);
                Tensor loss = target_span_loss(head, ctx, tgt, true);
                batch_loss += static_cast<double>(loss.item());
                loss.backward(1.0f / static_cast<float>(count));
            }
            opt.step();
            log.log(++step, batch_loss / count);
        }
    }
    adapter.set_requires_grad(false);
    return adapter;
}

std::vector<TrainExample> shuffled_pool(const std::vector<TrainExample>& pool, uint64_t seed) {
    std::vector<TrainExample> out = pool;
    Rng rng(derive_seed(seed, "curve-pool"));
    std::shuffle(out.begin(), out.end(), rng);
    return out;
}

std::vector<CurvePoint> learning_curve(BaseWeights& base, const std::vector<TrainExample>& pool,
                                       const std::vector<int>& sizes, Polarity polarity,
                                       const FinetuneConfig& cfg, const CurveEvalFn& eval_fn) {
    for (size_t i = 1; i < sizes.size(); ++i) {
        if (sizes[i] <= sizes[i - 1]) throw ContractError("learning_curve: sizes must be ascending");
    }
    if (!sizes.empty() && sizes.back() > static_cast<int>(pool.size())) {
        throw ContractError("learning_curve: size " + std::to_string(sizes.back()) +
                            " exceeds pool size " + std::to_string(pool.size()));
    }
    if (!sizes.empty() && sizes.front() < 0) throw ContractError("learning_curve: sizes must be >= 0");
    for (const auto& ex : pool) {
        if (ex.polarity != polarity) {
            throw ContractError("learning_curve: pool contains examples of the wrong polarity");
        }
    }

    std::vector<TrainExample> shuffled = shuffled_pool(pool, cfg.seed);
    std::vector<CurvePoint> points;
    for (int n : sizes) {
        std::vector<TrainExample> subset(shuffled.begin(), shuffled.begin() + n);
        LoraAdapter adapter = finetune_head(base, subset, cfg);
        EvalMetrics m = eval_fn(n, adapter);
        points.push_back({n, m.acc, m.acc_norm, hex64(adapter.checksum())});
    }
    return points;
}

}  // namespace likra
