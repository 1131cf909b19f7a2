#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dptdr/error.hpp"

namespace dptdr::text {

using TokenId = std::size_t;

inline constexpr TokenId kCls = 0;
inline constexpr TokenId kSep = 1;
inline constexpr TokenId kMask = 2;
inline constexpr TokenId kPad = 3;
inline constexpr TokenId kUnk = 4;
inline constexpr std::size_t kNumSpecials = 5;
inline constexpr std::array<std::string_view, kNumSpecials> kSpecialTokens{"[CLS]", "[SEP]", "[MASK]", "[PAD]",
                                                                           "[UNK]"};

inline bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

/// Lower-cased word tokenizer: runs of alphanumerics form words, every other
/// non-space character is a token of its own.
inline std::vector<std::string> tokenize(std::string_view text)
{
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c) != 0) {
            cur.push_back(static_cast<char>(std::tolower(c)));
            continue;
        }
        if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
        if (std::isspace(c) == 0) {
            out.emplace_back(1, ch);
        }
    }
    if (!cur.empty()) {
        out.push_back(std::move(cur));
    }
    return out;
}

inline bool is_punct_token(std::string_view tok) { return tok.size() == 1 && is_punct(tok[0]); }

/// Token vocabulary with the five specials pinned at ids 0-4.
class Vocabulary {
  public:
    Vocabulary()
    {
        for (auto s : kSpecialTokens) {
            add(std::string(s));
        }
    }

    /// Words at or above `min_freq`, ordered by descending frequency then
    /// lexicographically.
    static Vocabulary build(const std::vector<std::string>& texts, std::size_t min_freq = 1)
    {
        std::map<std::string, std::size_t> counts;
        for (const auto& t : texts) {
            for (auto& tok : tokenize(t)) {
                ++counts[tok];
            }
        }
        std::vector<std::pair<std::string, std::size_t>> words(counts.begin(), counts.end());
        std::stable_sort(words.begin(), words.end(),
                         [](const auto& a, const auto& b) { return a.second > b.second; });
        Vocabulary v;
        for (auto& [w, c] : words) {
            if (c >= min_freq && !v.contains(w)) {
                v.add(w);
            }
        }
        return v;
    }

    static Vocabulary from_tokens(const std::vector<std::string>& tokens)
    {
        if (tokens.size() < kNumSpecials) {
            throw ValidationError("vocabulary: missing special tokens");
        }
        for (std::size_t i = 0; i < kNumSpecials; ++i) {
            if (tokens[i] != kSpecialTokens[i]) {
                throw ValidationError("vocabulary: id " + std::to_string(i) + " must be " + std::string(kSpecialTokens[i]));
            }
        }
        Vocabulary v;
        for (std::size_t i = kNumSpecials; i < tokens.size(); ++i) {
            v.add(tokens[i]);
        }
        return v;
    }

    std::size_t size() const noexcept { return m_tokens.size(); }
    const std::vector<std::string>& tokens() const noexcept { return m_tokens; }
    bool contains(const std::string& tok) const { return m_ids.count(tok) != 0; }

    TokenId id(const std::string& tok) const
    {
        auto it = m_ids.find(tok);
        return it == m_ids.end() ? kUnk : it->second;
    }

    const std::string& token(TokenId id) const { return m_tokens.at(id); }

    /// [CLS] followed by the token ids of `text`. Unknown words map to
    /// [UNK]. Longer inputs are truncated to `max_len` ids when `truncate` is
    /// set, rejected otherwise.
    std::vector<TokenId> encode(std::string_view text, std::size_t max_len, bool truncate = true) const
    {
        std::vector<TokenId> ids{kCls};
        for (const auto& tok : tokenize(text)) {
            ids.push_back(id(tok));
        }
        if (ids.size() > max_len) {
            if (!truncate) {
                throw Error("sequence_too_long", "sequence of " + std::to_string(ids.size())
                                                     + " tokens exceeds max_seq_len " + std::to_string(max_len));
            }
            ids.resize(max_len);
        }
        return ids;
    }

  private:
    void add(std::string tok)
    {
        m_ids.emplace(tok, m_tokens.size());
        m_tokens.push_back(std::move(tok));
    }

    std::vector<std::string> m_tokens;
    std::unordered_map<std::string, TokenId> m_ids;
};

}  // namespace dptdr::text
