#pragma once
// Naive decoder forward pass: one position at a time, attention as explicit
// loops over keys.

#include "mmkg/decoder.hpp"
#include "oracles/gat_reference.hpp"

#include <cmath>
#include <span>
#include <vector>

namespace mmkg::oracle {

inline Vec row_of(const Matrix& m, Eigen::Index r)
{
    Vec v(std::size_t(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        v[std::size_t(c)] = m(r, c);
    }
    return v;
}

inline Vec layer_norm(const Vec& x, const Matrix& g, const Matrix& b)
{
    double mean = 0.0;
    for (double v : x) {
        mean += v;
    }
    mean /= double(x.size());
    double var = 0.0;
    for (double v : x) {
        var += (v - mean) * (v - mean);
    }
    var /= double(x.size());
    Vec y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        y[i] = (x[i] - mean) / std::sqrt(var + 1e-5) * g(0, Eigen::Index(i)) + b(0, Eigen::Index(i));
    }
    return y;
}

// Attention of query rows over key rows; keys[s] visible to query t when
// visible(t, s).
template <class Visible>
std::vector<Vec> attend(const Matrix& Wq, const Matrix& Wk, const Matrix& Wv, const Matrix& Wo,
                        const std::vector<Vec>& queries, const std::vector<Vec>& keys, std::size_t heads,
                        Visible&& visible)
{
    std::vector<Vec> q, k, v;
    for (const auto& x : queries) {
        q.push_back(oracle::apply(Wq, x));
    }
    for (const auto& x : keys) {
        k.push_back(oracle::apply(Wk, x));
        v.push_back(oracle::apply(Wv, x));
    }
    const std::size_t d = q.empty() ? 0 : q[0].size();
    const std::size_t dh = d / heads;
    std::vector<Vec> out;
    for (std::size_t t = 0; t < q.size(); ++t) {
        Vec cat(d, 0.0);
        for (std::size_t h = 0; h < heads; ++h) {
            std::vector<double> w(keys.size(), 0.0);
            double mx = -1e300;
            for (std::size_t s = 0; s < keys.size(); ++s) {
                if (!visible(t, s)) {
                    continue;
                }
                double dot = 0.0;
                for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) {
                    dot += q[t][c] * k[s][c];
                }
                w[s] = dot / std::sqrt(double(dh));
                mx = std::max(mx, w[s]);
            }
            double z = 0.0;
            for (std::size_t s = 0; s < keys.size(); ++s) {
                w[s] = visible(t, s) ? std::exp(w[s] - mx) : 0.0;
                z += w[s];
            }
            for (std::size_t s = 0; s < keys.size(); ++s) {
                for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) {
                    cat[c] += w[s] / z * v[s][c];
                }
            }
        }
        out.push_back(oracle::apply(Wo, cat));
    }
    return out;
}

inline Matrix reference_logits(const decoder::DecoderParams& p, const Matrix& memory, std::span<const int> prefix)
{
    const std::size_t T = prefix.size();
    std::vector<Vec> x;
    for (std::size_t t = 0; t < T; ++t) {
        Vec e = row_of(p.tok_emb, prefix[t]);
        Vec pe = row_of(p.pos_emb, Eigen::Index(t));
        for (std::size_t c = 0; c < e.size(); ++c) {
            e[c] += pe[c];
        }
        x.push_back(e);
    }
    std::vector<Vec> mem;
    for (Eigen::Index r = 0; r < memory.rows(); ++r) {
        mem.push_back(row_of(memory, r));
    }
    auto add_into = [](std::vector<Vec>& dst, const std::vector<Vec>& src) {
        for (std::size_t t = 0; t < dst.size(); ++t) {
            for (std::size_t c = 0; c < dst[t].size(); ++c) {
                dst[t][c] += src[t][c];
            }
        }
    };
    for (const auto& L : p.layers) {
        std::vector<Vec> h;
        for (const auto& r : x) {
            h.push_back(layer_norm(r, L.ln1_g, L.ln1_b));
        }
        add_into(x, attend(L.Wq, L.Wk, L.Wv, L.Wo, h, h, p.heads, [](std::size_t t, std::size_t s) { return s <= t; }));
        h.clear();
        for (const auto& r : x) {
            h.push_back(layer_norm(r, L.ln2_g, L.ln2_b));
        }
        add_into(x, attend(L.Cq, L.Ck, L.Cv, L.Co, h, mem, p.heads, [](std::size_t, std::size_t) { return true; }));
        std::vector<Vec> ff;
        for (const auto& r : x) {
            Vec hh = layer_norm(r, L.ln3_g, L.ln3_b);
            Vec a = oracle::apply(L.W1, hh);
            for (std::size_t c = 0; c < a.size(); ++c) {
                a[c] = std::max(0.0, a[c] + L.b1(0, Eigen::Index(c)));
            }
            Vec o = oracle::apply(L.W2, a);
            for (std::size_t c = 0; c < o.size(); ++c) {
                o[c] += L.b2(0, Eigen::Index(c));
            }
            ff.push_back(o);
        }
        add_into(x, ff);
    }
    Matrix logits(Eigen::Index(T), p.W_out.rows());
    for (std::size_t t = 0; t < T; ++t) {
        Vec o = oracle::apply(p.W_out, layer_norm(x[t], p.lnf_g, p.lnf_b));
        for (std::size_t v = 0; v < o.size(); ++v) {
            logits(Eigen::Index(t), Eigen::Index(v)) = o[v] + p.b_out(0, Eigen::Index(v));
        }
    }
    return logits;
}

} // namespace mmkg::oracle
