#pragma once
// Dense matrices, parameter-set traversal, and tensor payloads for
// checkpoints.

#include "mmkg/codec.hpp"
#include "mmkg/errors.hpp"
#include "mmkg/types.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cmath>
#include <concepts>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mmkg {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

inline Vector to_vector(std::span<const float> v)
{
    Vector out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[static_cast<Eigen::Index>(i)] = v[i];
    }
    return out;
}

inline Matrix to_matrix(const FeatureMatrix& m)
{
    Matrix out(static_cast<Eigen::Index>(m.rows), static_cast<Eigen::Index>(m.cols));
    for (std::size_t r = 0; r < m.rows; ++r) {
        for (std::size_t c = 0; c < m.cols; ++c) {
            out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = m.at(r, c);
        }
    }
    return out;
}

inline std::vector<float> to_floats(const Vector& v)
{
    std::vector<float> out(static_cast<std::size_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        out[static_cast<std::size_t>(i)] = static_cast<float>(v[i]);
    }
    return out;
}

// Stack feature vectors as matrix rows.
inline Matrix stack_rows(const std::vector<std::vector<float>>& rows, std::size_t cols)
{
    Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != cols) {
            throw DimensionError("row " + std::to_string(r) + " has dimension " +
                                 std::to_string(rows[r].size()) + ", expected " + std::to_string(cols));
        }
        for (std::size_t c = 0; c < cols; ++c) {
            out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
        }
    }
    return out;
}

inline Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng)
{
    std::normal_distribution<double> dist(0.0, stddev);
    Matrix m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
        for (Eigen::Index r = 0; r < rows; ++r) {
            m(r, c) = dist(rng);
        }
    }
    return m;
}

// A parameter set exposes its tensors, in a fixed order, to a visitor
// taking (name, Matrix&). Optimizers, clipping and checkpoints all work
// through this.
template <class P>
concept ParameterSet = requires(P& p, const P& cp) {
    p.for_each([](std::string_view, Matrix&) {});
    cp.for_each([](std::string_view, const Matrix&) {});
};

// Ad-hoc parameter set over a list of tensors.
struct TensorList {
    std::vector<Matrix> tensors;

    template <class F>
    void for_each(F&& f)
    {
        for (std::size_t i = 0; i < tensors.size(); ++i) {
            f(std::to_string(i), tensors[i]);
        }
    }
    template <class F>
    void for_each(F&& f) const
    {
        for (std::size_t i = 0; i < tensors.size(); ++i) {
            f(std::to_string(i), tensors[i]);
        }
    }
};

template <ParameterSet P>
std::vector<Matrix*> tensor_ptrs(P& p)
{
    std::vector<Matrix*> out;
    p.for_each([&](std::string_view, Matrix& m) { out.push_back(&m); });
    return out;
}

template <ParameterSet P>
P zeros_like(const P& p)
{
    P out = p;
    out.for_each([](std::string_view, Matrix& m) { m.setZero(); });
    return out;
}

template <ParameterSet P>
double squared_norm(const P& p)
{
    double s = 0.0;
    p.for_each([&](std::string_view, const Matrix& m) { s += m.squaredNorm(); });
    return s;
}

template <ParameterSet P>
bool all_finite(const P& p)
{
    bool ok = true;
    p.for_each([&](std::string_view, const Matrix& m) { ok = ok && m.allFinite(); });
    return ok;
}

template <ParameterSet P>
std::size_t parameter_count(const P& p)
{
    std::size_t n = 0;
    p.for_each([&](std::string_view, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
}

// dst += scale * src, tensor by tensor.
template <ParameterSet P>
void accumulate(P& dst, const P& src, double scale = 1.0)
{
    auto d = tensor_ptrs(dst);
    std::size_t i = 0;
    src.for_each([&](std::string_view, const Matrix& m) { *d[i++] += scale * m; });
}

namespace tensor_io {

inline nlohmann::json encode(const Matrix& m)
{
    std::vector<float> data(static_cast<std::size_t>(m.size()));
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            data[k++] = static_cast<float>(m(r, c));
        }
    }
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", codec::encode_floats(data)}};
}

inline Matrix decode(const nlohmann::json& j, const std::string& name)
{
    if (!j.is_object() || !j.contains("rows") || !j.contains("cols") || !j.contains("data")) {
        throw SchemaError("tensor '" + name + "' is malformed");
    }
    auto rows = j.at("rows").get<Eigen::Index>();
    auto cols = j.at("cols").get<Eigen::Index>();
    auto data = codec::decode_floats(j.at("data").get<std::string>());
    if (static_cast<Eigen::Index>(data.size()) != rows * cols) {
        throw DimensionError("tensor '" + name + "' payload size mismatch");
    }
    Matrix m(rows, cols);
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            m(r, c) = data[k++];
        }
    }
    return m;
}

template <ParameterSet P>
nlohmann::json encode_all(const P& p, std::string_view prefix = "")
{
    nlohmann::json out = nlohmann::json::object();
    p.for_each([&](std::string_view name, const Matrix& m) {
        out[std::string(prefix) + std::string(name)] = encode(m);
    });
    return out;
}

// Fills every tensor of `p` from `j`; shapes must already match.
template <ParameterSet P>
void decode_all(P& p, const nlohmann::json& j, std::string_view prefix = "")
{
    p.for_each([&](std::string_view name, Matrix& m) {
        std::string key = std::string(prefix) + std::string(name);
        if (!j.contains(key)) {
            throw SchemaError("checkpoint is missing tensor '" + key + "'");
        }
        Matrix loaded = decode(j.at(key), key);
        if (loaded.rows() != m.rows() || loaded.cols() != m.cols()) {
            throw DimensionError("checkpoint tensor '" + key + "' has shape " +
                                 std::to_string(loaded.rows()) + "x" + std::to_string(loaded.cols()) +
                                 ", expected " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
        }
        m = std::move(loaded);
    });
}

} // namespace tensor_io

} // namespace mmkg
