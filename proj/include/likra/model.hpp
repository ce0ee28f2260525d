#pragma once

// Tiny decoder-only transformer: learned absolute positions, pre-norm blocks,
// multi-head causal attention, GELU MLP, untied output projection. Low-rank
// adapters on the attention query/value projections turn one frozen base into
// many heads. Templated on the scalar type so the same forward pass runs in
// 32-bit for training and 64-bit for gradient verification.

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "likra/adam.hpp"
#include "likra/tensor.hpp"
#include "likra/tokenizer.hpp"
#include "likra/util.hpp"

namespace likra {

struct ModelConfig {
    int vocab_size = ByteTokenizer::kVocabSize;
    int n_layers = 4;
    int d_model = 128;
    int n_heads = 4;
    int d_ff = 512;
    int max_seq_len = 512;

    void validate() const {
        if (vocab_size < 2) throw ContractError("vocab_size must be >= 2");
        if (n_layers < 1 || d_model < 1 || n_heads < 1 || d_ff < 1 || max_seq_len < 1) {
            throw ContractError("model dimensions must be positive");
        }
        if (d_model % n_heads != 0) {
            throw ContractError("d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" +
                                std::to_string(n_heads) + ")");
        }
    }

    bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct BlockWeightsT {
    TensorT<T> ln1_g, ln1_b;
    TensorT<T> wq, bq, wk, bk, wv, bv, wo, bo;  // projections stored [out,in]
    TensorT<T> ln2_g, ln2_b;
    TensorT<T> w1, b1, w2, b2;
};

template <typename T>
struct BaseWeightsT {
    ModelConfig config;
    TensorT<T> tok_emb;  // [vocab, d]
    TensorT<T> pos_emb;  // [max_seq, d]
    std::vector<BlockWeightsT<T>> blocks;
    TensorT<T> lnf_g, lnf_b;
    TensorT<T> unembed;  // [vocab, d]

    static BaseWeightsT init(const ModelConfig& cfg, uint64_t seed) {
        cfg.validate();
        Rng rng(derive_seed(seed, "base-init"));
        const T std_w = T(0.02);
        BaseWeightsT w;
        w.config = cfg;
        w.tok_emb = TensorT<T>::randn({cfg.vocab_size, cfg.d_model}, rng, std_w);
        w.pos_emb = TensorT<T>::randn({cfg.max_seq_len, cfg.d_model}, rng, std_w);
        for (int l = 0; l < cfg.n_layers; ++l) {
            BlockWeightsT<T> b;
            b.ln1_g = TensorT<T>::full({cfg.d_model}, T(1));
            b.ln1_b = TensorT<T>::zeros({cfg.d_model});
            b.wq = TensorT<T>::randn({cfg.d_model, cfg.d_model}, rng, std_w);
            b.bq = TensorT<T>::zeros({cfg.d_model});
            b.wk = TensorT<T>::randn({cfg.d_model, cfg.d_model}, rng, std_w);
            b.bk = TensorT<T>::zeros({cfg.d_model});
            b.wv = TensorT<T>::randn({cfg.d_model, cfg.d_model}, rng, std_w);
            b.bv = TensorT<T>::zeros({cfg.d_model});
            b.wo = TensorT<T>::randn({cfg.d_model, cfg.d_model}, rng, std_w);
            b.bo = TensorT<T>::zeros({cfg.d_model});
            b.ln2_g = TensorT<T>::full({cfg.d_model}, T(1));
            b.ln2_b = TensorT<T>::zeros({cfg.d_model});
            b.w1 = TensorT<T>::randn({cfg.d_ff, cfg.d_model}, rng, std_w);
            b.b1 = TensorT<T>::zeros({cfg.d_ff});
            b.w2 = TensorT<T>::randn({cfg.d_model, cfg.d_ff}, rng, std_w);
            b.b2 = TensorT<T>::zeros({cfg.d_model});
            w.blocks.push_back(std::move(b));
        }
        w.lnf_g = TensorT<T>::full({cfg.d_model}, T(1));
        w.lnf_b = TensorT<T>::zeros({cfg.d_model});
        w.unembed = TensorT<T>::randn({cfg.vocab_size, cfg.d_model}, rng, std_w);
        return w;
    }

    // Fixed traversal order; checkpoint layout and checksums depend on it.
    std::vector<NamedParam<T>> named_params() {
        std::vector<NamedParam<T>> out;
        out.push_back({"tok_emb", tok_emb});
        out.push_back({"pos_emb", pos_emb});
        for (size_t l = 0; l < blocks.size(); ++l) {
            auto& b = blocks[l];
            std::string p = "block" + std::to_string(l) + ".";
            out.push_back({p + "ln1_g", b.ln1_g});
            out.push_back({p + "ln1_b", b.ln1_b});
            out.push_back({p + "wq", b.wq});
            out.push_back({p + "bq", b.bq});
            out.push_back({p + "wk", b.wk});
            out.push_back({p + "bk", b.bk});
            out.push_back({p + "wv", b.wv});
            out.push_back({p + "bv", b.bv});
            out.push_back({p + "wo", b.wo});
            out.push_back({p + "bo", b.bo});
            out.push_back({p + "ln2_g", b.ln2_g});
            out.push_back({p + "ln2_b", b.ln2_b});
            out.push_back({p + "w1", b.w1});
            out.push_back({p + "b1", b.b1});
            out.push_back({p + "w2", b.w2});
            out.push_back({p + "b2", b.b2});
        }
        out.push_back({"lnf_g", lnf_g});
        out.push_back({"lnf_b", lnf_b});
        out.push_back({"unembed", unembed});
        return out;
    }

    void set_requires_grad(bool v) {
        for (auto& p : named_params()) p.tensor.set_requires_grad(v);
    }

    uint64_t checksum() {
        uint64_t h = 1469598103934665603ull;
        for (auto& p : named_params()) {
            h = fnv1a64(p.name, h);
            h = fnv1a64(p.tensor.data().data(), p.tensor.data().size() * sizeof(T), h);
        }
        return h;
    }
};

struct LoraConfig {
    int rank = 8;
    double alpha = 16.0;
    // Adapted matrices; the minimal standard choice is query+value.
    bool target_q = true;
    bool target_v = true;

    double scaling() const { return alpha / rank; }
};

// One low-rank delta: W_eff = W + (alpha/rank) * B * A, with A [r, d_in]
// drawn from a small seeded Gaussian and B [d_out, r] zero, so a fresh
// adapter is exactly a no-op.
template <typename T>
struct LoraDeltaT {
    TensorT<T> a;  // [rank, d_in]
    TensorT<T> b;  // [d_out, rank]
};

template <typename T>
struct LoraAdapterT {
    LoraConfig cfg;
    struct LayerDeltas {
        std::optional<LoraDeltaT<T>> q, v;
    };
    std::vector<LayerDeltas> layers;

    static LoraAdapterT init(const ModelConfig& model, const LoraConfig& cfg, uint64_t seed) {
        if (cfg.rank < 1) throw ContractError("lora rank must be >= 1");
        Rng rng(derive_seed(seed, "lora-init"));
        const T a_std = T(0.02);
        LoraAdapterT ad;
        ad.cfg = cfg;
        for (int l = 0; l < model.n_layers; ++l) {
            LayerDeltas d;
            if (cfg.target_q) {
                d.q = LoraDeltaT<T>{TensorT<T>::randn({cfg.rank, model.d_model}, rng, a_std),
                                    TensorT<T>::zeros({model.d_model, cfg.rank})};
            }
            if (cfg.target_v) {
                d.v = LoraDeltaT<T>{TensorT<T>::randn({cfg.rank, model.d_model}, rng, a_std),
                                    TensorT<T>::zeros({model.d_model, cfg.rank})};
            }
            ad.layers.push_back(std::move(d));
        }
        return ad;
    }

    std::vector<NamedParam<T>> named_params() {
        std::vector<NamedParam<T>> out;
        for (size_t l = 0; l < layers.size(); ++l) {
            std::string p = "lora" + std::to_string(l) + ".";
            if (layers[l].q) {
                out.push_back({p + "q.a", layers[l].q->a});
                out.push_back({p + "q.b", layers[l].q->b});
            }
            if (layers[l].v) {
                out.push_back({p + "v.a", layers[l].v->a});
                out.push_back({p + "v.b", layers[l].v->b});
            }
        }
        return out;
    }

    void set_requires_grad(bool v) {
        for (auto& p : named_params()) p.tensor.set_requires_grad(v);
    }

    uint64_t checksum() {
        uint64_t h = 1469598103934665603ull;
        for (auto& p : named_params()) {
            h = fnv1a64(p.name, h);
            h = fnv1a64(p.tensor.data().data(), p.tensor.data().size() * sizeof(T), h);
        }
        return h;
    }
};

// A head is a frozen base plus an optional adapter; adapter == nullptr scores
// identically to the bare base.
template <typename T>
struct HeadT {
    const BaseWeightsT<T>* base = nullptr;
    const LoraAdapterT<T>* adapter = nullptr;
};

using BaseWeights = BaseWeightsT<float>;
using LoraAdapter = LoraAdapterT<float>;
using Head = HeadT<float>;

namespace detail {

template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
    return add_rowvec(matmul_nt(x, w), b);
}

template <typename T>
TensorT<T> lora_linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                       const std::optional<LoraDeltaT<T>>& delta, T scaling) {
    TensorT<T> y = linear(x, w, b);
    if (delta) {
        TensorT<T> lo = matmul_nt(matmul_nt(x, delta->a), delta->b);
        y = add(y, scale(lo, scaling));
    }
    return y;
}

}  // namespace detail

// Full forward pass over a token sequence; returns logits [len, vocab].
// Position t attends only to positions <= t.
template <typename T>
TensorT<T> forward(const HeadT<T>& head, std::span<const int32_t> tokens) {
    const BaseWeightsT<T>& w = *head.base;
    const ModelConfig& cfg = w.config;
    int len = static_cast<int>(tokens.size());
    if (len == 0) throw ContractError("forward: empty token sequence");
    if (len > cfg.max_seq_len) {
        throw ContractError("forward: sequence length " + std::to_string(len) + " exceeds max_seq_len " +
                            std::to_string(cfg.max_seq_len));
    }
    T lora_scale = head.adapter ? static_cast<T>(head.adapter->cfg.scaling()) : T(0);

    std::vector<int32_t> pos_ids(static_cast<size_t>(len));
    for (int i = 0; i < len; ++i) pos_ids[static_cast<size_t>(i)] = i;

    TensorT<T> x = add(embedding(w.tok_emb, tokens), embedding(w.pos_emb, pos_ids));

    int dh = cfg.d_model / cfg.n_heads;
    T inv_sqrt_dh = T(1) / std::sqrt(T(dh));
    for (int l = 0; l < cfg.n_layers; ++l) {
        const BlockWeightsT<T>& blk = w.blocks[static_cast<size_t>(l)];
        const auto* deltas = head.adapter ? &head.adapter->layers[static_cast<size_t>(l)] : nullptr;

        TensorT<T> h = layer_norm(x, blk.ln1_g, blk.ln1_b);
        TensorT<T> q = deltas ? detail::lora_linear(h, blk.wq, blk.bq, deltas->q, lora_scale)
                              : detail::linear(h, blk.wq, blk.bq);
        TensorT<T> k = detail::linear(h, blk.wk, blk.bk);
        TensorT<T> v = deltas ? detail::lora_linear(h, blk.wv, blk.bv, deltas->v, lora_scale)
                              : detail::linear(h, blk.wv, blk.bv);

        std::vector<TensorT<T>> ctx_heads;
        ctx_heads.reserve(static_cast<size_t>(cfg.n_heads));
        for (int hd = 0; hd < cfg.n_heads; ++hd) {
            TensorT<T> qh = slice_cols(q, hd * dh, dh);
            TensorT<T> kh = slice_cols(k, hd * dh, dh);
            TensorT<T> vh = slice_cols(v, hd * dh, dh);
            TensorT<T> scores = scale(matmul_nt(qh, kh), inv_sqrt_dh);
            TensorT<T> probs = causal_softmax(scores);
            ctx_heads.push_back(matmul(probs, vh));
        }
        TensorT<T> attn_out = detail::linear(concat_cols(ctx_heads), blk.wo, blk.bo);
        x = add(x, attn_out);

        TensorT<T> h2 = layer_norm(x, blk.ln2_g, blk.ln2_b);
        TensorT<T> mlp = detail::linear(gelu(detail::linear(h2, blk.w1, blk.b1)), blk.w2, blk.b2);
        x = add(x, mlp);
    }
    x = layer_norm(x, w.lnf_g, w.lnf_b);
    return matmul_nt(x, w.unembed);
}

struct SequenceLoglik {
    double total = 0;       // sum of log p over target tokens
    double per_char = 0;    // total / unicode chars in target
    double per_byte = 0;    // total / bytes in target
    int n_target_tokens = 0;
};

// Log-likelihood of `target_ids` following `context_ids`, summed over target
// positions only (context logits are ignored).
template <typename T>
double loglik_tokens(const HeadT<T>& head, std::span<const int32_t> context_ids,
                     std::span<const int32_t> target_ids) {
    if (target_ids.empty()) throw ContractError("loglik_tokens: empty target");
    std::vector<int32_t> toks(context_ids.begin(), context_ids.end());
    toks.insert(toks.end(), target_ids.begin(), target_ids.end());
    TensorT<T> logits = forward(head, toks);
    TensorT<T> logp = log_softmax_rows(logits);
    int ctx = static_cast<int>(context_ids.size());
    int vocab = logits.dim(1);
    double total = 0;
    // Row i predicts token i+1; with a non-empty context the first scored row
    // is ctx-1. An empty context is allowed only if the caller scores from
    // position 1 (first target token is unconditioned), which we forbid.
    if (ctx == 0) throw ContractError("loglik_tokens: empty context (need at least a BOS token)");
    for (size_t t = 0; t < target_ids.size(); ++t) {
        int row = ctx - 1 + static_cast<int>(t);
        total += static_cast<double>(logp.data()[static_cast<size_t>(row) * vocab + toks[static_cast<size_t>(row) + 1]]);
    }
    return total;
}

// Conditional log-likelihood of a target string after a context string.
// A BOS token is prepended; the score covers exactly the target bytes.
template <typename T>
SequenceLoglik sequence_loglik(const HeadT<T>& head, std::string_view context, std::string_view target) {
    if (target.empty()) throw ContractError("sequence_loglik: empty target");
    std::vector<int32_t> ctx_ids;
    ctx_ids.push_back(ByteTokenizer::kBos);
    auto cb = ByteTokenizer::encode(context);
    ctx_ids.insert(ctx_ids.end(), cb.begin(), cb.end());
    auto tgt_ids = ByteTokenizer::encode(target);

    SequenceLoglik out;
    out.total = loglik_tokens(head, ctx_ids, tgt_ids);
    out.n_target_tokens = static_cast<int>(tgt_ids.size());
    out.per_char = out.total / static_cast<double>(utf8_char_count(target));
    out.per_byte = out.total / static_cast<double>(target.size());
    return out;
}

// Mean (or summed) negative log-likelihood of the trailing span of `tokens`
// that follows the first `ctx_len` context tokens. Labels exist for every
// position but only span rows carry mask weight, so relabeling context
// positions cannot change the loss or its gradients.
template <typename T>
TensorT<T> span_loss_tokens(const HeadT<T>& head, std::span<const int32_t> tokens, int ctx_len,
                            bool mean = true) {
    int len = static_cast<int>(tokens.size());
    if (ctx_len < 1 || ctx_len >= len) {
        throw ContractError("span_loss_tokens: need 1 <= ctx_len < len, got ctx_len=" +
                            std::to_string(ctx_len) + " len=" + std::to_string(len));
    }
    // Next-token labels for rows 0..len-2; the final row has no label and
    // stays unmasked.
    std::vector<int32_t> labels(static_cast<size_t>(len), 0);
    std::vector<uint8_t> mask(static_cast<size_t>(len), 0);
    for (int i = 0; i + 1 < len; ++i) labels[static_cast<size_t>(i)] = tokens[static_cast<size_t>(i) + 1];
    // Rows ctx_len-1 .. len-2 predict the span tokens.
    for (int i = ctx_len - 1; i <= len - 2; ++i) mask[static_cast<size_t>(i)] = 1;
    TensorT<T> logits = forward(head, tokens);
    return nll_masked(log_softmax_rows(logits), labels, mask, mean);
}

// String-level wrapper: BOS + context bytes + target bytes, loss on the
// target span only.
template <typename T>
TensorT<T> target_span_loss(const HeadT<T>& head, std::string_view context, std::string_view target,
                            bool mean = true) {
    if (target.empty()) throw ContractError("target_span_loss: empty target");
    std::vector<int32_t> toks;
    toks.push_back(ByteTokenizer::kBos);
    auto cb = ByteTokenizer::encode(context);
    toks.insert(toks.end(), cb.begin(), cb.end());
    auto tb = ByteTokenizer::encode(target);
    toks.insert(toks.end(), tb.begin(), tb.end());
    return span_loss_tokens(head, toks, 1 + static_cast<int>(cb.size()), mean);
}

}  // namespace likra
