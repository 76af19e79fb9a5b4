#pragma once
// Two-layer graph attention encoder over the multi-modal graph.
//
// Inputs are projected per modality (text nodes from d_e, visual nodes from
// d_v) to d_in. Node i attends over {j : edge j -> i} plus itself:
//   alpha_ij = softmax_j LeakyReLU(a_dst . W h_i + a_src . W h_j)
// Layer 1 concatenates H heads of width d_model / H and applies ELU;
// layer 2 averages H heads of width d_model.

#include "mmkg/autodiff.hpp"
#include "mmkg/errors.hpp"
#include "mmkg/tensor.hpp"
#include "mmkg/types.hpp"

#include <nlohmann/json.hpp>

#include <random>
#include <string>
#include <unordered_map>
#include <vector>

namespace mmkg::gat {

struct GatConfig {
    std::size_t d_e = 1024;
    std::size_t d_v = 2048;
    std::size_t d_in = 1024;
    std::size_t d_model = 1024;
    std::size_t heads = 4;
    double leaky_slope = 0.2;
    bool add_reverse_edges = false;

    void validate() const
    {
        if (heads == 0) {
            throw ConfigError("GAT needs at least one head");
        }
        if (d_model % heads != 0) {
            throw ConfigError("d_model must be divisible by the head count");
        }
    }
};

inline nlohmann::json to_json(const GatConfig& c)
{
    return {{"d_e", c.d_e},         {"d_v", c.d_v},     {"d_in", c.d_in},
            {"d_model", c.d_model}, {"heads", c.heads}, {"leaky_slope", c.leaky_slope},
            {"add_reverse_edges", c.add_reverse_edges}};
}

inline GatConfig gat_config_from_json(const nlohmann::json& j)
{
    GatConfig c;
    c.d_e = j.at("d_e").get<std::size_t>();
    c.d_v = j.at("d_v").get<std::size_t>();
    c.d_in = j.at("d_in").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.leaky_slope = j.at("leaky_slope").get<double>();
    c.add_reverse_edges = j.at("add_reverse_edges").get<bool>();
    return c;
}

// Per-head projection W (d_out x d_in) and attention vector a (2 d_out x 1),
// first half scoring the attending node, second half the neighbor.
struct GatLayer {
    std::vector<Matrix> W;
    std::vector<Matrix> a;

    std::size_t heads() const { return W.size(); }

    template <class F>
    void for_each(F&& f, const std::string& prefix)
    {
        for (std::size_t h = 0; h < W.size(); ++h) {
            f(prefix + "W." + std::to_string(h), W[h]);
            f(prefix + "a." + std::to_string(h), a[h]);
        }
    }
    template <class F>
    void for_each(F&& f, const std::string& prefix) const
    {
        for (std::size_t h = 0; h < W.size(); ++h) {
            f(prefix + "W." + std::to_string(h), W[h]);
            f(prefix + "a." + std::to_string(h), a[h]);
        }
    }
};

struct GatParams {
    Matrix P_text;   // d_in x d_e
    Matrix P_visual; // d_in x d_v
    GatLayer layer1;
    GatLayer layer2;
    double leaky_slope = 0.2;

    template <class F>
    void for_each(F&& f)
    {
        f("gat.P_text", P_text);
        f("gat.P_visual", P_visual);
        layer1.for_each(f, "gat.l1.");
        layer2.for_each(f, "gat.l2.");
    }
    template <class F>
    void for_each(F&& f) const
    {
        f("gat.P_text", P_text);
        f("gat.P_visual", P_visual);
        layer1.for_each(f, "gat.l1.");
        layer2.for_each(f, "gat.l2.");
    }

    static GatParams random(const GatConfig& c, std::uint64_t seed)
    {
        c.validate();
        std::mt19937_64 rng(seed);
        auto glorot = [&](std::size_t out, std::size_t in) {
            return gaussian_matrix(Eigen::Index(out), Eigen::Index(in), std::sqrt(2.0 / double(in + out)), rng);
        };
        GatParams p;
        p.leaky_slope = c.leaky_slope;
        p.P_text = glorot(c.d_in, c.d_e);
        p.P_visual = glorot(c.d_in, c.d_v);
        const std::size_t d_head = c.d_model / c.heads;
        for (std::size_t h = 0; h < c.heads; ++h) {
            p.layer1.W.push_back(glorot(d_head, c.d_in));
            p.layer1.a.push_back(gaussian_matrix(Eigen::Index(2 * d_head), 1, 0.1, rng));
        }
        for (std::size_t h = 0; h < c.heads; ++h) {
            p.layer2.W.push_back(glorot(c.d_model, c.heads * d_head));
            p.layer2.a.push_back(gaussian_matrix(Eigen::Index(2 * c.d_model), 1, 0.1, rng));
        }
        return p;
    }
};

// Graph in matrix form: modality feature blocks, the permutation that puts
// [text rows; visual rows] back into node order, and the neighbor mask
// (row i, column j true when j sends to i or j == i).
struct GatInput {
    std::vector<std::string> node_ids;
    Matrix text_features;
    Matrix visual_features;
    std::vector<int> order;
    ad::Mask neighbors;

    std::size_t size() const { return node_ids.size(); }
};

inline GatInput prepare_input(const MultiModalGraph& g, std::size_t d_e, std::size_t d_v, bool add_reverse_edges = false)
{
    GatInput in;
    std::vector<std::vector<float>> text;
    std::vector<std::vector<float>> visual;
    std::vector<std::pair<bool, std::size_t>> slot;
    std::unordered_map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
        const auto& n = g.nodes[i];
        in.node_ids.push_back(n.node_id);
        pos.emplace(n.node_id, i);
        if (is_text_kind(n.kind)) {
            if (n.feature.size() != d_e) {
                throw DimensionError("text node '" + n.node_id + "' has feature dimension " +
                                     std::to_string(n.feature.size()) + ", expected " + std::to_string(d_e));
            }
            slot.emplace_back(true, text.size());
            text.push_back(n.feature);
        } else {
            if (n.feature.size() != d_v) {
                throw DimensionError("visual node '" + n.node_id + "' has feature dimension " +
                                     std::to_string(n.feature.size()) + ", expected " + std::to_string(d_v));
            }
            slot.emplace_back(false, visual.size());
            visual.push_back(n.feature);
        }
    }
    in.text_features = stack_rows(text, d_e);
    in.visual_features = stack_rows(visual, d_v);
    for (const auto& [is_text, k] : slot) {
        in.order.push_back(static_cast<int>(is_text ? k : text.size() + k));
    }
    const auto n = static_cast<Eigen::Index>(g.nodes.size());
    in.neighbors = ad::Mask::Constant(n, n, false);
    for (Eigen::Index i = 0; i < n; ++i) {
        in.neighbors(i, i) = true;
    }
    for (const auto& e : g.edges) {
        auto s = pos.find(e.src);
        auto d = pos.find(e.dst);
        if (s == pos.end() || d == pos.end()) {
            throw SchemaError("edge references a missing node");
        }
        in.neighbors(Eigen::Index(d->second), Eigen::Index(s->second)) = true;
        if (add_reverse_edges) {
            in.neighbors(Eigen::Index(s->second), Eigen::Index(d->second)) = true;
        }
    }
    return in;
}

inline GatInput prepare_input(const MultiModalGraph& g, const GatParams& p, bool add_reverse_edges = false)
{
    return prepare_input(g, std::size_t(p.P_text.cols()), std::size_t(p.P_visual.cols()), add_reverse_edges);
}

// ---------------------------------------------------------------------------
// Tape-level building blocks

template <ParameterSet P>
ad::Var project_inputs(ad::Binder<P>& bind, const GatParams& p, const GatInput& in)
{
    ad::Tape& t = bind.tape();
    std::vector<ad::Var> blocks;
    if (in.text_features.rows() > 0) {
        blocks.push_back(ad::matmul_nt(t, t.constant(in.text_features), bind(p.P_text)));
    }
    if (in.visual_features.rows() > 0) {
        blocks.push_back(ad::matmul_nt(t, t.constant(in.visual_features), bind(p.P_visual)));
    }
    ad::Var stacked = blocks.size() == 1 ? blocks[0] : ad::concat_rows(t, blocks);
    return ad::gather_rows(t, stacked, in.order);
}

struct HeadOutput {
    ad::Var alpha; // n x n attention
    ad::Var out;   // n x d_out
};

template <ParameterSet P>
HeadOutput attention_head(ad::Binder<P>& bind, const Matrix& W, const Matrix& a, ad::Var features,
                          const ad::Mask& neighbors, double slope)
{
    ad::Tape& t = bind.tape();
    const Eigen::Index d_out = W.rows();
    ad::Var wh = ad::matmul_nt(t, features, bind(W));
    ad::Var av = bind(a);
    ad::Var s_dst = ad::matmul(t, wh, ad::slice_rows(t, av, 0, d_out));
    ad::Var s_src = ad::matmul(t, wh, ad::slice_rows(t, av, d_out, d_out));
    ad::Var scores = ad::leaky_relu(t, ad::outer_sum(t, s_dst, s_src), slope);
    ad::Var alpha = ad::masked_softmax_rows(t, scores, neighbors);
    return {alpha, ad::matmul(t, alpha, wh)};
}

// Full encoder on a tape; returns the n x d_model encoding.
template <ParameterSet P>
ad::Var encode(ad::Binder<P>& bind, const GatParams& p, const GatInput& in)
{
    ad::Tape& t = bind.tape();
    ad::Var h0 = project_inputs(bind, p, in);
    std::vector<ad::Var> heads;
    for (std::size_t h = 0; h < p.layer1.heads(); ++h) {
        heads.push_back(attention_head(bind, p.layer1.W[h], p.layer1.a[h], h0, in.neighbors, p.leaky_slope).out);
    }
    ad::Var h1 = ad::elu(t, heads.size() == 1 ? heads[0] : ad::concat_cols(t, heads));
    heads.clear();
    for (std::size_t h = 0; h < p.layer2.heads(); ++h) {
        heads.push_back(attention_head(bind, p.layer2.W[h], p.layer2.a[h], h1, in.neighbors, p.leaky_slope).out);
    }
    return heads.size() == 1 ? heads[0] : ad::mean_of(t, heads);
}

// ---------------------------------------------------------------------------
// Value-level API

struct NodeEncoding {
    std::string node_id;
    Vector vector;
};

inline Matrix project_inputs(const MultiModalGraph& g, const GatParams& p)
{
    GatInput in = prepare_input(g, p);
    if (in.size() == 0) {
        return Matrix(0, p.P_text.rows());
    }
    ad::Tape t;
    ad::Binder<GatParams> bind(t, p, nullptr);
    return t.value(project_inputs(bind, p, in));
}

// Row-stochastic attention matrix per head for one layer.
inline std::vector<Matrix> attention_coefficients(const GatLayer& layer, const Matrix& features,
                                                  const ad::Mask& neighbors, double slope)
{
    ad::Tape t;
    TensorList none;
    ad::Binder<TensorList> bind(t, none, nullptr);
    ad::Var f = t.constant(features);
    std::vector<Matrix> out;
    for (std::size_t h = 0; h < layer.heads(); ++h) {
        out.push_back(t.value(attention_head(bind, layer.W[h], layer.a[h], f, neighbors, slope).alpha));
    }
    return out;
}

inline Matrix gat_forward_matrix(const MultiModalGraph& g, const GatParams& p, bool add_reverse_edges = false)
{
    GatInput in = prepare_input(g, p, add_reverse_edges);
    if (in.size() == 0) {
        return Matrix(0, p.layer2.W.empty() ? 0 : p.layer2.W[0].rows());
    }
    ad::Tape t;
    ad::Binder<GatParams> bind(t, p, nullptr);
    return t.value(encode(bind, p, in));
}

inline std::vector<NodeEncoding> gat_forward(const MultiModalGraph& g, const GatParams& p, bool add_reverse_edges = false)
{
    Matrix x = gat_forward_matrix(g, p, add_reverse_edges);
    std::vector<NodeEncoding> out;
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
        out.push_back({g.nodes[i].node_id, x.row(Eigen::Index(i)).transpose()});
    }
    return out;
}

// Gradients of sum(upstream .* encoding) with respect to every parameter.
inline GatParams gat_backward(const MultiModalGraph& g, const GatParams& p, const Matrix& upstream,
                              bool add_reverse_edges = false)
{
    GatParams grads = zeros_like(p);
    GatInput in = prepare_input(g, p, add_reverse_edges);
    if (in.size() == 0) {
        return grads;
    }
    ad::Tape t;
    ad::Binder<GatParams> bind(t, p, &grads);
    ad::Var out = encode(bind, p, in);
    t.backward(out, upstream);
    return grads;
}

} // namespace mmkg::gat
