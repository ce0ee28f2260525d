#include "likra/checkpoint.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>
#include <vector>

namespace likra {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'L', 'I', 'K', 'R', 'A', 'C', 'K', 'P'};
constexpr uint32_t kVersion = 1;

enum class BlockKind : uint8_t { base = 0, adapter = 1 };

void write_u32(std::ofstream& out, uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::ifstream& in) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

void write_block(std::ofstream& out, BlockKind kind, const std::string& name, const Tensor& t) {
    uint8_t k = static_cast<uint8_t>(kind);
    out.write(reinterpret_cast<const char*>(&k), 1);
    uint16_t nlen = static_cast<uint16_t>(name.size());
    out.write(reinterpret_cast<const char*>(&nlen), sizeof(nlen));
    out.write(name.data(), nlen);
    uint8_t ndim = static_cast<uint8_t>(t.shape().size());
    out.write(reinterpret_cast<const char*>(&ndim), 1);
    for (int d : t.shape()) write_u32(out, static_cast<uint32_t>(d));
    out.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.data().size() * sizeof(float)));
}

struct Block {
    BlockKind kind;
    std::string name;
    std::vector<int> shape;
    std::vector<float> data;
};

struct Container {
    json header;
    std::vector<Block> blocks;
};

void write_container(const std::string& path, const json& header,
                     const std::vector<std::pair<BlockKind, NamedParam<float>>>& blocks) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write checkpoint: " + path);
    out.write(kMagic, sizeof(kMagic));
    write_u32(out, kVersion);
    std::string h = header.dump();
    write_u32(out, static_cast<uint32_t>(h.size()));
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    write_u32(out, static_cast<uint32_t>(blocks.size()));
    for (auto& [kind, p] : blocks) write_block(out, kind, p.name, p.tensor);
    if (!out) throw ValidationError("write failure on checkpoint: " + path);
}

Container read_container(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw ValidationError("not a likra checkpoint: " + path);
    }
    uint32_t version = read_u32(in);
    if (version != kVersion) {
        throw ValidationError("unsupported checkpoint version " + std::to_string(version) + " in " + path);
    }
    uint32_t hlen = read_u32(in);
    std::string h(hlen, '\0');
    in.read(h.data(), hlen);
    Container c;
    try {
        c.header = json::parse(h);
    } catch (const json::exception& e) {
        throw ValidationError("corrupt checkpoint header in " + path + ": " + e.what());
    }
    uint32_t n_blocks = read_u32(in);
    for (uint32_t b = 0; b < n_blocks; ++b) {
        Block blk;
        uint8_t kind = 0;
        in.read(reinterpret_cast<char*>(&kind), 1);
        blk.kind = static_cast<BlockKind>(kind);
        uint16_t nlen = 0;
        in.read(reinterpret_cast<char*>(&nlen), sizeof(nlen));
        blk.name.resize(nlen);
        in.read(blk.name.data(), nlen);
        uint8_t ndim = 0;
        in.read(reinterpret_cast<char*>(&ndim), 1);
        size_t numel = 1;
        for (int d = 0; d < ndim; ++d) {
            uint32_t dim = read_u32(in);
            blk.shape.push_back(static_cast<int>(dim));
            numel *= dim;
        }
        blk.data.resize(numel);
        in.read(reinterpret_cast<char*>(blk.data.data()),
                static_cast<std::streamsize>(numel * sizeof(float)));
        if (!in) throw ValidationError("truncated checkpoint: " + path);
        c.blocks.push_back(std::move(blk));
    }
    return c;
}

json model_config_json(const ModelConfig& cfg) {
    return json{{"vocab_size", cfg.vocab_size}, {"n_layers", cfg.n_layers},
                {"d_model", cfg.d_model},       {"n_heads", cfg.n_heads},
                {"d_ff", cfg.d_ff},             {"max_seq_len", cfg.max_seq_len}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig cfg;
    cfg.vocab_size = j.at("vocab_size").get<int>();
    cfg.n_layers = j.at("n_layers").get<int>();
    cfg.d_model = j.at("d_model").get<int>();
    cfg.n_heads = j.at("n_heads").get<int>();
    cfg.d_ff = j.at("d_ff").get<int>();
    cfg.max_seq_len = j.at("max_seq_len").get<int>();
    return cfg;
}

// Fill named parameters from blocks, enforcing exact name/shape agreement.
void fill_params(std::vector<NamedParam<float>> params, const std::vector<Block>& blocks,
                 const std::string& path) {
    if (params.size() != blocks.size()) {
        throw ValidationError(path + ": expected " + std::to_string(params.size()) +
                              " parameter blocks, found " + std::to_string(blocks.size()));
    }
    for (size_t i = 0; i < params.size(); ++i) {
        if (params[i].name != blocks[i].name) {
            throw ValidationError(path + ": block '" + blocks[i].name + "' where '" + params[i].name +
                                  "' was expected");
        }
        if (params[i].tensor.shape() != blocks[i].shape) {
            throw ValidationError(path + ": block '" + blocks[i].name + "' has shape " +
                                  shape_str(blocks[i].shape) + ", expected " +
                                  shape_str(params[i].tensor.shape()));
        }
        params[i].tensor.data() = blocks[i].data;
    }
}

}  // namespace

void save_base_checkpoint(const std::string& path, BaseWeights& weights,
                          const std::string& data_fingerprint) {
    json header;
    header["kind"] = "base";
    header["model"] = model_config_json(weights.config);
    header["checksum"] = hex64(weights.checksum());
    if (!data_fingerprint.empty()) header["data_fingerprint"] = data_fingerprint;
    std::vector<std::pair<BlockKind, NamedParam<float>>> blocks;
    for (auto& p : weights.named_params()) blocks.emplace_back(BlockKind::base, p);
    write_container(path, header, blocks);
}

CheckpointInfo read_checkpoint_info(const std::string& path) {
    Container c = read_container(path);
    CheckpointInfo info;
    info.kind = c.header.value("kind", "");
    info.model = model_config_from_json(c.header.at("model"));
    info.checksum = c.header.value("checksum", "");
    info.base_checksum = c.header.value("base_checksum", "");
    info.data_fingerprint = c.header.value("data_fingerprint", "");
    return info;
}

BaseWeights load_base_checkpoint(const std::string& path) {
    Container c = read_container(path);
    if (c.header.value("kind", "") != "base") {
        throw ValidationError(path + ": not a base checkpoint");
    }
    ModelConfig cfg = model_config_from_json(c.header.at("model"));
    BaseWeights w = BaseWeights::init(cfg, 0);
    fill_params(w.named_params(), c.blocks, path);
    std::string expect = c.header.value("checksum", "");
    if (!expect.empty() && expect != hex64(w.checksum())) {
        throw ValidationError(path + ": checksum mismatch, file is corrupt");
    }
    return w;
}

void save_adapter_checkpoint(const std::string& path, LoraAdapter& adapter, BaseWeights& base) {
    json header;
    header["kind"] = "adapter";
    header["model"] = model_config_json(base.config);
    header["lora"] = json{{"rank", adapter.cfg.rank},
                          {"alpha", adapter.cfg.alpha},
                          {"target_q", adapter.cfg.target_q},
                          {"target_v", adapter.cfg.target_v}};
    header["base_checksum"] = hex64(base.checksum());
    header["checksum"] = hex64(adapter.checksum());
    std::vector<std::pair<BlockKind, NamedParam<float>>> blocks;
    for (auto& p : adapter.named_params()) blocks.emplace_back(BlockKind::adapter, p);
    write_container(path, header, blocks);
}

LoraAdapter load_adapter_checkpoint(const std::string& path, BaseWeights& base) {
    Container c = read_container(path);
    if (c.header.value("kind", "") != "adapter") {
        throw ValidationError(path + ": not an adapter checkpoint");
    }
    ModelConfig cfg = model_config_from_json(c.header.at("model"));
    if (!(cfg == base.config)) {
        throw ValidationError(path + ": adapter was built for a different model configuration");
    }
    std::string want_base = c.header.value("base_checksum", "");
    if (want_base != hex64(base.checksum())) {
        throw ValidationError(path + ": adapter belongs to base " + want_base +
                              ", loaded base is " + hex64(base.checksum()));
    }
    const json& lj = c.header.at("lora");
    LoraConfig lc;
    lc.rank = lj.at("rank").get<int>();
    lc.alpha = lj.at("alpha").get<double>();
    lc.target_q = lj.at("target_q").get<bool>();
    lc.target_v = lj.at("target_v").get<bool>();
    LoraAdapter ad = LoraAdapter::init(cfg, lc, 0);
    fill_params(ad.named_params(), c.blocks, path);
    return ad;
}

std::string file_checksum_hex(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot hash file: " + path);
    uint64_t h = 1469598103934665603ull;
    char buf[65536];
    while (in) {
        in.read(buf, sizeof(buf));
        h = fnv1a64(buf, static_cast<size_t>(in.gcount()), h);
    }
    return hex64(h);
}

}  // namespace likra
