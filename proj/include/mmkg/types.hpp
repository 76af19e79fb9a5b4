#pragma once
// Domain records shared by every stage of the pipeline: article and image
// annotations, the multi-modal graph, and caption records.

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mmkg {

// Dimensions and length limits. Full-scale defaults; desk-scale runs use
// d_e = 16, d_v = 32.
struct DataConfig {
    std::size_t d_e = 1024;
    std::size_t d_v = 2048;
    std::size_t max_article_len = 512;
    std::size_t max_caption_len = 50;
};

enum class EntityClass { Person, Org, Facility, Artifact, Gpe, Date, Other };

inline constexpr std::array<std::string_view, 7> kEntityClassNames = {
    "PERSON", "ORG", "FACILITY", "ARTIFACT", "GPE", "DATE", "OTHER"};

inline std::string_view to_string(EntityClass c)
{
    return kEntityClassNames[static_cast<std::size_t>(c)];
}

inline std::optional<EntityClass> parse_entity_class(std::string_view s)
{
    for (std::size_t i = 0; i < kEntityClassNames.size(); ++i) {
        if (kEntityClassNames[i] == s) {
            return static_cast<EntityClass>(i);
        }
    }
    return std::nullopt;
}

// Half-open byte range [start, end) into the article text.
struct Span {
    std::size_t start = 0;
    std::size_t end = 0;
    bool operator==(const Span&) const = default;
    auto operator<=>(const Span&) const = default;
};

// Row-major float32 matrix as stored on disk.
struct FeatureMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> data;

    float at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::vector<float> row(std::size_t r) const
    {
        return {data.begin() + static_cast<std::ptrdiff_t>(r * cols),
                data.begin() + static_cast<std::ptrdiff_t>((r + 1) * cols)};
    }
    bool operator==(const FeatureMatrix&) const = default;
};

struct EntityMention {
    std::string id;
    std::string surface;
    EntityClass entity_class = EntityClass::Other;
    Span char_span;
    std::optional<std::string> wiki_id;
    std::optional<std::vector<float>> embedding;
    bool operator==(const EntityMention&) const = default;
};

struct RelationTriple {
    std::string head_id;
    std::string relation_text;
    Span relation_span;
    std::string tail_id;
    std::optional<std::vector<float>> relation_embedding;
    bool operator==(const RelationTriple&) const = default;
};

// Mention ids sorted by span start.
struct CorefChain {
    std::vector<std::string> mention_ids;
    bool operator==(const CorefChain&) const = default;
};

struct ArticleAnnotations {
    std::string article_id;
    std::string text;
    std::vector<EntityMention> entities;
    std::vector<RelationTriple> triples;
    std::vector<CorefChain> coref_chains;
    std::optional<FeatureMatrix> token_features;

    const EntityMention* find_entity(std::string_view id) const
    {
        for (const auto& e : entities) {
            if (e.id == id) {
                return &e;
            }
        }
        return nullptr;
    }
    bool operator==(const ArticleAnnotations&) const = default;
};

enum class DetectionKind { Object, Face };

inline std::string_view to_string(DetectionKind k)
{
    return k == DetectionKind::Object ? "OBJECT" : "FACE";
}

struct BBox {
    double x = 0, y = 0, w = 0, h = 0;
    bool operator==(const BBox&) const = default;
};

struct Detection {
    DetectionKind kind = DetectionKind::Object;
    BBox bbox;
    double score = 0.0;
    std::string class_label;
    std::vector<float> feature;
    bool operator==(const Detection&) const = default;
};

struct ImageAnnotations {
    std::string image_id;
    FeatureMatrix global_features;
    std::vector<Detection> detections;
    bool operator==(const ImageAnnotations&) const = default;
};

enum class NodeKind { Head, Relation, Tail, Object, Face };
enum class EdgeKind { Triple, CorefRewire, CrossModal };

inline constexpr std::array<std::string_view, 5> kNodeKindNames = {
    "HEAD", "RELATION", "TAIL", "OBJECT", "FACE"};
inline constexpr std::array<std::string_view, 3> kEdgeKindNames = {
    "TRIPLE", "COREF_REWIRE", "CROSS_MODAL"};

inline std::string_view to_string(NodeKind k) { return kNodeKindNames[static_cast<std::size_t>(k)]; }
inline std::string_view to_string(EdgeKind k) { return kEdgeKindNames[static_cast<std::size_t>(k)]; }

inline bool is_text_kind(NodeKind k)
{
    return k == NodeKind::Head || k == NodeKind::Relation || k == NodeKind::Tail;
}
inline bool is_visual_kind(NodeKind k) { return !is_text_kind(k); }

struct GraphNode {
    std::string node_id;
    NodeKind kind = NodeKind::Head;
    std::string label;
    // Empty when a text node has no embedding.
    std::vector<float> feature;
    std::string source_ref;
    bool operator==(const GraphNode&) const = default;
};

struct GraphEdge {
    std::string src;
    std::string dst;
    EdgeKind kind = EdgeKind::Triple;
    bool operator==(const GraphEdge&) const = default;
};

struct MultiModalGraph {
    std::string article_id;
    std::string image_id;
    std::vector<GraphNode> nodes;
    std::vector<GraphEdge> edges;

    std::optional<std::size_t> index_of(std::string_view node_id) const
    {
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            if (nodes[i].node_id == node_id) {
                return i;
            }
        }
        return std::nullopt;
    }
    bool operator==(const MultiModalGraph&) const = default;
};

struct CaptionRecord {
    std::string image_id;
    std::string article_id;
    std::vector<int> caption_tokens;
    std::string caption_text;
    bool operator==(const CaptionRecord&) const = default;
};

} // namespace mmkg
