#pragma once
// Optimization machinery shared by the matcher and captioner trainers:
// warmup + linear-decay learning-rate schedule, global-norm clipping, and
// Adam with decoupled weight decay.

#include "mmkg/errors.hpp"
#include "mmkg/tensor.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <string>

namespace mmkg::optim {

struct OptimConfig {
    double base_lr = 1e-4;
    double init_lr = 1e-7;
    long warmup_steps = 4000;
    long total_steps = 10000;
    double weight_decay = 1e-5;
    double clip_norm = 0.1;
    std::size_t batch_size = 16;
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    // Learning rate reached at total_steps.
    double final_lr = 0.0;

    void validate() const
    {
        if (!(init_lr > 0.0 && init_lr <= base_lr)) {
            throw ConfigError("require 0 < init_lr <= base_lr");
        }
        if (!(warmup_steps >= 0 && warmup_steps < total_steps)) {
            throw ConfigError("require 0 <= warmup_steps < total_steps");
        }
        if (!(clip_norm > 0.0)) {
            throw ConfigError("clip_norm must be positive");
        }
        if (batch_size == 0) {
            throw ConfigError("batch_size must be positive");
        }
        if (!(final_lr >= 0.0 && final_lr <= base_lr)) {
            throw ConfigError("require 0 <= final_lr <= base_lr");
        }
    }
};

inline nlohmann::json to_json(const OptimConfig& c)
{
    return {{"base_lr", c.base_lr},         {"init_lr", c.init_lr},   {"warmup_steps", c.warmup_steps},
            {"total_steps", c.total_steps}, {"weight_decay", c.weight_decay},
            {"clip_norm", c.clip_norm},     {"batch_size", c.batch_size}, {"seed", c.seed},
            {"beta1", c.beta1},             {"beta2", c.beta2},       {"epsilon", c.epsilon},
            {"final_lr", c.final_lr}};
}

// Missing keys keep their current values.
inline void update_from_json(OptimConfig& c, const nlohmann::json& j)
{
    auto take = [&](const char* key, auto& field) {
        if (j.contains(key)) {
            field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
        }
    };
    take("base_lr", c.base_lr);
    take("init_lr", c.init_lr);
    take("warmup_steps", c.warmup_steps);
    take("total_steps", c.total_steps);
    take("weight_decay", c.weight_decay);
    take("clip_norm", c.clip_norm);
    take("batch_size", c.batch_size);
    take("seed", c.seed);
    take("beta1", c.beta1);
    take("beta2", c.beta2);
    take("epsilon", c.epsilon);
    take("final_lr", c.final_lr);
}

// Linear ramp init_lr -> base_lr over [0, warmup], then linear decay
// base_lr -> final_lr over (warmup, total].
inline double lr_at_step(long step, const OptimConfig& c)
{
    if (step < 0 || step > c.total_steps) {
        throw StepOutOfRange("step " + std::to_string(step) + " outside [0, " +
                             std::to_string(c.total_steps) + "]");
    }
    if (step <= c.warmup_steps) {
        if (c.warmup_steps == 0) {
            return c.base_lr;
        }
        double t = static_cast<double>(step) / static_cast<double>(c.warmup_steps);
        return c.init_lr + t * (c.base_lr - c.init_lr);
    }
    double t = static_cast<double>(step - c.warmup_steps) /
               static_cast<double>(c.total_steps - c.warmup_steps);
    return c.base_lr + t * (c.final_lr - c.base_lr);
}

template <ParameterSet P>
double global_norm(const P& grads)
{
    return std::sqrt(squared_norm(grads));
}

// Rescales all gradients by clip_norm / g when the global L2 norm g exceeds
// clip_norm. Returns the norm before clipping.
template <ParameterSet P>
double clip_gradients(P& grads, double clip_norm)
{
    if (!(clip_norm > 0.0)) {
        throw ConfigError("clip_norm must be positive");
    }
    double norm = global_norm(grads);
    if (norm > clip_norm) {
        double scale = clip_norm / norm;
        grads.for_each([&](std::string_view, Matrix& m) { m *= scale; });
    }
    return norm;
}

template <ParameterSet P>
struct AdamState {
    P first_moment;
    P second_moment;
    long step = 0;

    explicit AdamState(const P& like)
        : first_moment(zeros_like(like))
        , second_moment(zeros_like(like))
    {
    }
};

// One Adam update with bias correction, followed by the decoupled
// weight-decay subtraction lr * wd * param (using the pre-update value).
template <ParameterSet P>
void adam_step(P& params, const P& grads, AdamState<P>& state, double lr, const OptimConfig& c)
{
    auto p = tensor_ptrs(params);
    auto m = tensor_ptrs(state.first_moment);
    auto v = tensor_ptrs(state.second_moment);
    std::vector<const Matrix*> g;
    grads.for_each([&](std::string_view, const Matrix& t) { g.push_back(&t); });
    if (p.size() != g.size() || p.size() != m.size()) {
        throw ShapeError("parameter and gradient sets differ in tensor count");
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i]->rows() != g[i]->rows() || p[i]->cols() != g[i]->cols() ||
            p[i]->rows() != m[i]->rows() || p[i]->cols() != m[i]->cols()) {
            throw ShapeError("tensor " + std::to_string(i) + " shape mismatch");
        }
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < p.size(); ++i) {
        *m[i] = c.beta1 * *m[i] + (1.0 - c.beta1) * *g[i];
        *v[i] = c.beta2 * *v[i] + (1.0 - c.beta2) * g[i]->cwiseProduct(*g[i]);
        Matrix update = (*m[i] / bc1).array() / ((*v[i] / bc2).array().sqrt() + c.epsilon);
        Matrix decay = lr * c.weight_decay * *p[i];
        *p[i] -= lr * update + decay;
    }
}

} // namespace mmkg::optim
