#pragma once

#include "mmkg/errors.hpp"

#include <algorithm>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mmkg {

inline std::vector<std::string> split_whitespace(std::string_view text)
{
    std::vector<std::string> out;
    std::istringstream in{std::string(text)};
    std::string tok;
    while (in >> tok) {
        out.push_back(tok);
    }
    return out;
}

// Token <-> id map with four reserved ids.
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kUnk = 3;

    Vocabulary()
        : tokens_{"<pad>", "<bos>", "<eos>", "<unk>"}
    {
        reindex();
    }

    explicit Vocabulary(std::vector<std::string> tokens)
        : tokens_(std::move(tokens))
    {
        if (tokens_.size() < 4 || tokens_[0] != "<pad>" || tokens_[1] != "<bos>" || tokens_[2] != "<eos>" ||
            tokens_[3] != "<unk>") {
            throw SchemaError("vocabulary must start with <pad> <bos> <eos> <unk>");
        }
        reindex();
        if (ids_.size() != tokens_.size()) {
            throw SchemaError("vocabulary contains duplicate tokens");
        }
    }

    // Whitespace tokens ordered by descending frequency, then lexicographically.
    static Vocabulary build(const std::vector<std::string>& texts)
    {
        std::map<std::string, std::size_t> counts;
        for (const auto& t : texts) {
            for (auto& tok : split_whitespace(t)) {
                ++counts[tok];
            }
        }
        std::vector<std::pair<std::string, std::size_t>> sorted(counts.begin(), counts.end());
        std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
        Vocabulary v;
        for (auto& [tok, n] : sorted) {
            if (!v.ids_.contains(tok)) {
                v.ids_.emplace(tok, static_cast<int>(v.tokens_.size()));
                v.tokens_.push_back(tok);
            }
        }
        return v;
    }

    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    int id(const std::string& token) const
    {
        auto it = ids_.find(token);
        return it == ids_.end() ? kUnk : it->second;
    }

    const std::string& token(int id) const
    {
        if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
            throw UnknownTokenId("token id " + std::to_string(id));
        }
        return tokens_[std::size_t(id)];
    }

    std::vector<int> encode(std::string_view text) const
    {
        std::vector<int> out;
        for (const auto& tok : split_whitespace(text)) {
            out.push_back(id(tok));
        }
        return out;
    }

    // Drops reserved ids.
    std::string decode(const std::vector<int>& ids) const
    {
        std::string out;
        for (int i : ids) {
            if (i <= kUnk) {
                continue;
            }
            if (!out.empty()) {
                out += ' ';
            }
            out += token(i);
        }
        return out;
    }

    bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

private:
    void reindex()
    {
        ids_.clear();
        for (std::size_t i = 0; i < tokens_.size(); ++i) {
            ids_.emplace(tokens_[i], static_cast<int>(i));
        }
    }

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
};

} // namespace mmkg
