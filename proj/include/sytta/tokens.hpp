// Copyright (c) 2026, the sytta authors
// SPDX-License-Identifier: Apache-2.0
//
// Byte-level token space: 256 raw bytes plus BOS/EOS/PAD. No external vocab.
#pragma once

#include "sytta/common.hpp"

#include <string>
#include <vector>

namespace sytta {

inline constexpr int kByteTokens = 256;
inline constexpr int kBos = 256;
inline constexpr int kEos = 257;
inline constexpr int kPad = 258;
inline constexpr int kVocabSize = 259;

enum class TokenRole { query, prefix, response };

struct TokenSeq {
    std::vector<int> ids;
    TokenRole role = TokenRole::query;

    int length() const { return static_cast<int>(ids.size()); }
    bool empty() const { return ids.empty(); }

    void validate(int vocab = kVocabSize) const {
        for (int t : ids)
            if (t < 0 || t >= vocab) throw DimensionError("token id out of vocabulary range");
        if (role == TokenRole::query && ids.empty())
            throw DimensionError("query token sequences must be nonempty");
    }
};

// [BOS, bytes..., EOS]
inline TokenSeq tokenize(const std::string& text) {
    TokenSeq s;
    s.ids.reserve(text.size() + 2);
    s.ids.push_back(kBos);
    for (unsigned char c : text) s.ids.push_back(static_cast<int>(c));
    s.ids.push_back(kEos);
    return s;
}

// [BOS, bytes...] — an open-ended context the model is expected to continue.
inline TokenSeq tokenize_prompt(const std::string& text) {
    TokenSeq s;
    s.ids.reserve(text.size() + 1);
    s.ids.push_back(kBos);
    for (unsigned char c : text) s.ids.push_back(static_cast<int>(c));
    return s;
}

// Inverse of tokenize up to the special markers, which are dropped.
inline std::string detokenize(const TokenSeq& seq) {
    std::string out;
    out.reserve(seq.ids.size());
    for (int t : seq.ids)
        if (t >= 0 && t < kByteTokens) out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
    return out;
}

} // namespace sytta
