#pragma once
// External knowledge base of (named entity, image) pairs used to train the
// cross-modal matcher. One image per entity.

#include "mmkg/codec.hpp"
#include "mmkg/errors.hpp"
#include "mmkg/io.hpp"
#include "mmkg/tensor.hpp"

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace mmkg::kb {

struct KnowledgeBaseEntry {
    std::string wiki_id;
    std::string name;
    std::vector<float> entity_embedding;
    std::vector<float> image_feature;
    bool operator==(const KnowledgeBaseEntry&) const = default;
};

class KnowledgeBase {
public:
    KnowledgeBase() = default;

    // Returns false (and keeps the existing entry) when wiki_id is taken.
    bool add(KnowledgeBaseEntry entry)
    {
        if (index_.contains(entry.wiki_id)) {
            return false;
        }
        index_.emplace(entry.wiki_id, entries_.size());
        entries_.push_back(std::move(entry));
        return true;
    }

    std::optional<std::size_t> position(const std::string& wiki_id) const
    {
        auto it = index_.find(wiki_id);
        if (it == index_.end()) {
            return std::nullopt;
        }
        return it->second;
    }

    const std::vector<KnowledgeBaseEntry>& entries() const { return entries_; }
    const KnowledgeBaseEntry& operator[](std::size_t i) const { return entries_[i]; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    bool operator==(const KnowledgeBase& o) const { return entries_ == o.entries_; }

private:
    std::vector<KnowledgeBaseEntry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct LoadResult {
    KnowledgeBase kb;
    std::size_t duplicates = 0;
};

inline KnowledgeBaseEntry parse_entry(const io::json& j, const DataConfig& cfg, const std::string& ctx)
{
    using namespace io::detail;
    KnowledgeBaseEntry e;
    e.wiki_id = get_string(j, "wiki_id", ctx);
    e.name = get_string(j, "name", ctx);
    e.entity_embedding = get_vector(j, "entity_embedding", ctx);
    e.image_feature = get_vector(j, "image_feature", ctx);
    if (e.entity_embedding.size() != cfg.d_e) {
        throw DimensionError(ctx + ": entity_embedding has dimension " +
                             std::to_string(e.entity_embedding.size()) + ", expected " +
                             std::to_string(cfg.d_e));
    }
    if (e.image_feature.size() != cfg.d_v) {
        throw DimensionError(ctx + ": image_feature has dimension " +
                             std::to_string(e.image_feature.size()) + ", expected " +
                             std::to_string(cfg.d_v));
    }
    return e;
}

inline io::json to_json(const KnowledgeBaseEntry& e)
{
    return {{"wiki_id", e.wiki_id},
            {"name", e.name},
            {"entity_embedding", codec::encode_floats(e.entity_embedding)},
            {"image_feature", codec::encode_floats(e.image_feature)}};
}

// First occurrence of a wiki_id wins; later ones are counted and dropped.
inline LoadResult load_kb(const std::filesystem::path& path, const DataConfig& cfg)
{
    LoadResult out;
    io::detail::for_each_jsonl_line(path, [&](const io::json& j, const std::string& ctx) {
        if (!out.kb.add(parse_entry(j, cfg, ctx))) {
            ++out.duplicates;
        }
    });
    return out;
}

inline void save_kb(const std::filesystem::path& path, const KnowledgeBase& kb)
{
    std::vector<io::json> rows;
    for (const auto& e : kb.entries()) {
        rows.push_back(to_json(e));
    }
    io::detail::write_lines(path, rows);
}

// Deterministic partition into (train, held_out); train receives
// round(ratio * n) entries. Both halves keep the input's relative order.
inline std::pair<KnowledgeBase, KnowledgeBase> split_kb(const KnowledgeBase& kb, double ratio, std::uint64_t seed)
{
    if (!(ratio > 0.0 && ratio < 1.0)) {
        throw RatioError("ratio must lie strictly between 0 and 1, got " + std::to_string(ratio));
    }
    std::vector<std::size_t> order(kb.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(kb.size())));
    std::vector<bool> in_train(kb.size(), false);
    for (std::size_t i = 0; i < n_train; ++i) {
        in_train[order[i]] = true;
    }
    KnowledgeBase train;
    KnowledgeBase held_out;
    for (std::size_t i = 0; i < kb.size(); ++i) {
        (in_train[i] ? train : held_out).add(kb[i]);
    }
    return {std::move(train), std::move(held_out)};
}

struct SynthConfig {
    std::size_t entities = 200;
    std::size_t clusters = 8;
    std::size_t d_e = 16;
    std::size_t d_v = 32;
    std::size_t latent_dim = 8;
    double cluster_spread = 1.0;
    double within_cluster_spread = 0.5;
    double noise = 0.05;
    std::uint64_t seed = 7;
};

// Clustered synthetic base. Each entity owns a latent point drawn around its
// cluster center; its text embedding and image feature are two fixed random
// linear views of that point plus independent noise, so the pairing is
// recoverable by linear projections while same-cluster entities act as hard
// negatives.
inline KnowledgeBase synth_kb(const SynthConfig& cfg)
{
    if (cfg.clusters == 0 || cfg.latent_dim == 0) {
        throw ConfigError("clusters and latent_dim must be positive");
    }
    std::mt19937_64 rng(cfg.seed);
    auto latent = static_cast<Eigen::Index>(cfg.latent_dim);
    Matrix text_view = gaussian_matrix(static_cast<Eigen::Index>(cfg.d_e), latent, 1.0 / std::sqrt(double(latent)), rng);
    Matrix image_view = gaussian_matrix(static_cast<Eigen::Index>(cfg.d_v), latent, 1.0 / std::sqrt(double(latent)), rng);
    Matrix centers = gaussian_matrix(static_cast<Eigen::Index>(cfg.clusters), latent, cfg.cluster_spread, rng);
    std::normal_distribution<double> within(0.0, cfg.within_cluster_spread);
    std::normal_distribution<double> noise(0.0, cfg.noise);

    KnowledgeBase kb;
    for (std::size_t i = 0; i < cfg.entities; ++i) {
        std::size_t k = i % cfg.clusters;
        Vector z = centers.row(static_cast<Eigen::Index>(k)).transpose();
        for (Eigen::Index c = 0; c < latent; ++c) {
            z[c] += within(rng);
        }
        Vector e = text_view * z;
        Vector v = image_view * z;
        for (Eigen::Index c = 0; c < e.size(); ++c) {
            e[c] += noise(rng);
        }
        for (Eigen::Index c = 0; c < v.size(); ++c) {
            v[c] += noise(rng);
        }
        KnowledgeBaseEntry entry;
        entry.wiki_id = "Q" + std::to_string(i + 1);
        entry.name = "entity_" + std::to_string(i + 1) + "_c" + std::to_string(k);
        entry.entity_embedding = to_floats(e);
        entry.image_feature = to_floats(v);
        kb.add(std::move(entry));
    }
    return kb;
}

} // namespace mmkg::kb
