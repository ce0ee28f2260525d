#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace likra {

// Byte-level tokenizer: ids 0..255 are raw bytes, plus BOS/EOS/PAD markers.
// Total because every byte string maps to ids and back exactly.
struct ByteTokenizer {
    static constexpr int32_t kBos = 256;
    static constexpr int32_t kEos = 257;
    static constexpr int32_t kPad = 258;
    static constexpr int kVocabSize = 259;

    static std::vector<int32_t> encode(std::string_view text) {
        std::vector<int32_t> ids;
        ids.reserve(text.size());
        for (unsigned char c : text) ids.push_back(static_cast<int32_t>(c));
        return ids;
    }

    static std::string decode(std::span<const int32_t> ids) {
        std::string out;
        out.reserve(ids.size());
        for (int32_t id : ids) {
            if (id >= 0 && id < 256) out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
        }
        return out;
    }
};

}  // namespace likra
