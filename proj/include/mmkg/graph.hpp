#pragma once
// Construction of the text sub-graph (triples + coreference collapsing), the
// image sub-graph (filtered detections), and their cross-modal merge.

#include "mmkg/errors.hpp"
#include "mmkg/io.hpp"
#include "mmkg/matcher.hpp"
#include "mmkg/types.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

namespace mmkg::graph {

// Node ids: "ent:<mention id>" for entities, "rel:<k>" for the k-th triple
// in canonical order, "obj:<k>" / "face:<k>" for retained detections.
inline std::string entity_node_id(const std::string& mention_id) { return "ent:" + mention_id; }

namespace detail {

struct UnionFind {
    std::vector<std::size_t> parent;
    explicit UnionFind(std::size_t n)
        : parent(n)
    {
        std::iota(parent.begin(), parent.end(), 0);
    }
    std::size_t find(std::size_t x)
    {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    }
    void unite(std::size_t a, std::size_t b) { parent[find(a)] = find(b); }
};

// Orders mentions by appearance: span start, then span end, then id.
inline bool appears_before(const EntityMention& a, const EntityMention& b)
{
    return std::tie(a.char_span.start, a.char_span.end, a.id) < std::tie(b.char_span.start, b.char_span.end, b.id);
}

} // namespace detail

// Maps every mention id to the id of the earliest mention among all
// mentions it is coreferent with (chains sharing a mention are merged).
inline std::unordered_map<std::string, std::string> coref_representatives(const ArticleAnnotations& a)
{
    std::unordered_map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < a.entities.size(); ++i) {
        pos.emplace(a.entities[i].id, i);
    }
    detail::UnionFind uf(a.entities.size());
    for (const auto& chain : a.coref_chains) {
        for (std::size_t k = 1; k < chain.mention_ids.size(); ++k) {
            auto x = pos.find(chain.mention_ids[0]);
            auto y = pos.find(chain.mention_ids[k]);
            if (x == pos.end() || y == pos.end()) {
                throw ReferenceError("coreference chain cites an unknown entity");
            }
            uf.unite(x->second, y->second);
        }
    }
    std::unordered_map<std::size_t, std::size_t> best;
    for (std::size_t i = 0; i < a.entities.size(); ++i) {
        std::size_t root = uf.find(i);
        auto it = best.find(root);
        if (it == best.end() || detail::appears_before(a.entities[i], a.entities[it->second])) {
            best[root] = i;
        }
    }
    std::unordered_map<std::string, std::string> rep;
    for (std::size_t i = 0; i < a.entities.size(); ++i) {
        rep.emplace(a.entities[i].id, a.entities[best[uf.find(i)]].id);
    }
    return rep;
}

// Builds the text sub-graph.
//  - each triple contributes head -> relation -> tail with its own relation
//    node;
//  - every mention is replaced by its coreference representative, and an
//    edge whose endpoint was replaced is tagged COREF_REWIRE;
//  - duplicate (src, dst) edges are collapsed, keeping the first.
// An entity node is HEAD when its representative heads any triple,
// otherwise TAIL. Triples are processed in a canonical order, so the result
// does not depend on input ordering.
inline MultiModalGraph build_text_subgraph(const ArticleAnnotations& a)
{
    std::unordered_map<std::string, const EntityMention*> by_id;
    for (const auto& e : a.entities) {
        by_id.emplace(e.id, &e);
    }
    for (const auto& t : a.triples) {
        if (!by_id.contains(t.head_id) || !by_id.contains(t.tail_id)) {
            throw ReferenceError("article '" + a.article_id + "': triple cites an unknown entity");
        }
    }
    const auto rep = coref_representatives(a);

    std::vector<std::size_t> order(a.triples.size());
    std::iota(order.begin(), order.end(), 0);
    auto key = [&](std::size_t i) {
        const auto& t = a.triples[i];
        const auto& h = *by_id.at(t.head_id);
        const auto& tl = *by_id.at(t.tail_id);
        return std::make_tuple(t.relation_span, h.char_span, tl.char_span, t.relation_text, t.head_id, t.tail_id);
    };
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return key(x) < key(y); });

    std::set<std::string> heads;
    for (const auto& t : a.triples) {
        heads.insert(rep.at(t.head_id));
    }

    MultiModalGraph g;
    g.article_id = a.article_id;
    std::unordered_map<std::string, std::size_t> node_pos;
    auto add_entity = [&](const std::string& mention_id) -> const std::string& {
        const EntityMention& m = *by_id.at(mention_id);
        std::string nid = entity_node_id(m.id);
        auto [it, inserted] = node_pos.emplace(nid, g.nodes.size());
        if (inserted) {
            GraphNode n;
            n.node_id = nid;
            n.kind = heads.contains(m.id) ? NodeKind::Head : NodeKind::Tail;
            n.label = m.surface;
            n.feature = m.embedding.value_or(std::vector<float>{});
            n.source_ref = m.id;
            g.nodes.push_back(std::move(n));
        }
        return g.nodes[it->second].node_id;
    };

    std::set<std::pair<std::string, std::string>> edge_seen;
    auto add_edge = [&](const std::string& src, const std::string& dst, EdgeKind kind) {
        if (edge_seen.emplace(src, dst).second) {
            g.edges.push_back({src, dst, kind});
        }
    };

    for (std::size_t k = 0; k < order.size(); ++k) {
        const RelationTriple& t = a.triples[order[k]];
        const std::string& head_rep = rep.at(t.head_id);
        const std::string& tail_rep = rep.at(t.tail_id);
        std::string head_node = add_entity(head_rep);

        GraphNode rel;
        rel.node_id = "rel:" + std::to_string(k);
        rel.kind = NodeKind::Relation;
        rel.label = t.relation_text;
        rel.source_ref = "span:" + std::to_string(t.relation_span.start) + "-" + std::to_string(t.relation_span.end);
        std::size_t rel_pos = g.nodes.size();
        node_pos.emplace(rel.node_id, rel_pos);
        g.nodes.push_back(std::move(rel));

        std::string tail_node = add_entity(tail_rep);

        // Relation features fall back to the mean of the endpoint features.
        GraphNode& r = g.nodes[rel_pos];
        if (t.relation_embedding) {
            r.feature = *t.relation_embedding;
        } else {
            const auto& hf = g.nodes[node_pos.at(head_node)].feature;
            const auto& tf = g.nodes[node_pos.at(tail_node)].feature;
            if (!hf.empty() && !tf.empty() && hf.size() == tf.size()) {
                r.feature.resize(hf.size());
                for (std::size_t c = 0; c < hf.size(); ++c) {
                    r.feature[c] = 0.5f * (hf[c] + tf[c]);
                }
            } else if (!hf.empty()) {
                r.feature = hf;
            } else {
                r.feature = tf;
            }
        }

        add_edge(head_node, r.node_id, head_rep == t.head_id ? EdgeKind::Triple : EdgeKind::CorefRewire);
        add_edge(r.node_id, tail_node, tail_rep == t.tail_id ? EdgeKind::Triple : EdgeKind::CorefRewire);
    }
    return g;
}

struct ImageLimits {
    std::size_t max_objects = 64;
    std::size_t max_faces = 4;
    double min_score = 0.3;
};

// Objects scoring below min_score are dropped; objects and faces are each
// ranked by descending score and truncated to their limits. No internal
// edges.
inline MultiModalGraph build_image_subgraph(const ImageAnnotations& img, const ImageLimits& limits = {})
{
    std::vector<const Detection*> objects;
    std::vector<const Detection*> faces;
    for (const auto& d : img.detections) {
        if (d.kind == DetectionKind::Face) {
            faces.push_back(&d);
        } else if (d.score >= limits.min_score) {
            objects.push_back(&d);
        }
    }
    auto rank = [](const Detection* x, const Detection* y) {
        return std::make_tuple(-x->score, x->bbox.x, x->bbox.y, x->bbox.w, x->bbox.h, x->class_label) <
               std::make_tuple(-y->score, y->bbox.x, y->bbox.y, y->bbox.w, y->bbox.h, y->class_label);
    };
    std::stable_sort(objects.begin(), objects.end(), rank);
    std::stable_sort(faces.begin(), faces.end(), rank);
    objects.resize(std::min(objects.size(), limits.max_objects));
    faces.resize(std::min(faces.size(), limits.max_faces));

    MultiModalGraph g;
    g.image_id = img.image_id;
    auto source_of = [&](const Detection* d) {
        return "det:" + std::to_string(d - img.detections.data());
    };
    for (std::size_t k = 0; k < objects.size(); ++k) {
        g.nodes.push_back({"obj:" + std::to_string(k), NodeKind::Object, objects[k]->class_label,
                           objects[k]->feature, source_of(objects[k])});
    }
    for (std::size_t k = 0; k < faces.size(); ++k) {
        g.nodes.push_back({"face:" + std::to_string(k), NodeKind::Face,
                           faces[k]->class_label.empty() ? "face" : faces[k]->class_label, faces[k]->feature,
                           source_of(faces[k])});
    }
    return g;
}

struct MergeOptions {
    double threshold = 0.4;
    // Restrict cross-modal edges to HEAD/TAIL nodes.
    bool entities_only = false;
};

// Union of both sub-graphs plus a CROSS_MODAL edge text -> visual for every
// pair whose matcher similarity exceeds the threshold.
inline MultiModalGraph build_mmkg(const MultiModalGraph& text_sg, const MultiModalGraph& image_sg,
                                  const matcher::MatcherParams& params, const MergeOptions& opts = {})
{
    std::vector<GraphNode> text_nodes;
    std::vector<GraphNode> visual_nodes;
    for (const auto& n : text_sg.nodes) {
        if (!is_text_kind(n.kind)) {
            throw SchemaError("text sub-graph contains visual node '" + n.node_id + "'");
        }
        if (!n.feature.empty() && n.feature.size() != params.d_e()) {
            throw DimensionError("text node '" + n.node_id + "' has dimension " + std::to_string(n.feature.size()));
        }
        text_nodes.push_back(n);
    }
    for (const auto& n : image_sg.nodes) {
        if (!is_visual_kind(n.kind)) {
            throw SchemaError("image sub-graph contains text node '" + n.node_id + "'");
        }
        visual_nodes.push_back(n);
    }
    MultiModalGraph g;
    g.article_id = text_sg.article_id;
    g.image_id = image_sg.image_id;
    g.nodes = text_sg.nodes;
    g.nodes.insert(g.nodes.end(), image_sg.nodes.begin(), image_sg.nodes.end());
    g.edges = text_sg.edges;
    g.edges.insert(g.edges.end(), image_sg.edges.begin(), image_sg.edges.end());
    for (const auto& m : matcher::match_entities(text_nodes, visual_nodes, params, opts.threshold, opts.entities_only)) {
        g.edges.push_back({m.text_node_id, m.visual_node_id, EdgeKind::CrossModal});
    }
    io::validate(g);
    return g;
}

struct GraphStats {
    std::array<std::size_t, 5> nodes_by_kind{};
    std::array<std::size_t, 3> edges_by_kind{};
    std::size_t node_count = 0;
    std::size_t edge_count = 0;
    std::size_t components = 0;
};

// Counts by kind and connected components of the undirected projection.
inline GraphStats graph_stats(const MultiModalGraph& g)
{
    GraphStats s;
    std::unordered_map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
        ++s.nodes_by_kind[static_cast<std::size_t>(g.nodes[i].kind)];
        pos.emplace(g.nodes[i].node_id, i);
    }
    detail::UnionFind uf(g.nodes.size());
    for (const auto& e : g.edges) {
        ++s.edges_by_kind[static_cast<std::size_t>(e.kind)];
        uf.unite(pos.at(e.src), pos.at(e.dst));
    }
    s.node_count = g.nodes.size();
    s.edge_count = g.edges.size();
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
        s.components += uf.find(i) == i ? 1 : 0;
    }
    return s;
}

// Keeps the nodes satisfying `keep` and the edges among them.
template <class Pred>
MultiModalGraph induced_subgraph(const MultiModalGraph& g, Pred&& keep)
{
    MultiModalGraph out;
    out.article_id = g.article_id;
    out.image_id = g.image_id;
    std::set<std::string> kept;
    for (const auto& n : g.nodes) {
        if (keep(n)) {
            out.nodes.push_back(n);
            kept.insert(n.node_id);
        }
    }
    for (const auto& e : g.edges) {
        if (kept.contains(e.src) && kept.contains(e.dst)) {
            out.edges.push_back(e);
        }
    }
    return out;
}

} // namespace mmkg::graph
