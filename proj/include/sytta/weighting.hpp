// Copyright (c) 2026, the sytta authors
// SPDX-License-Identifier: Apache-2.0
//
// Dynamic Importance Weighting: an EMA of the combined loss scale, loss-ratio
// weights scaled by base coefficients, a clipped weight ratio, and a
// sum-preserving rescale so w_ida + w_ocs stays at 2. Weights are computed
// from detached loss values; no gradient ever flows through them.
#pragma once

#include "sytta/common.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

namespace sytta {

enum class DiwMode { dynamic, static_weights };

struct DiwConfig {
    double beta = 0.9;       // EMA momentum
    double eps = 1e-8;       // denominator guard
    double lambda_ida = 1.0; // base coefficients
    double lambda_ocs = 1.0;
    double ratio_floor = 1e-3;
    double ratio_ceil = 1e3;
    DiwMode mode = DiwMode::dynamic;
    bool per_sample = true; // per-sample weight vectors vs one batch scalar pair

    void validate() const {
        if (!(beta >= 0.0 && beta < 1.0)) throw ConfigError("diw beta must be in [0,1)");
        if (!(eps > 0.0)) throw ConfigError("diw eps must be > 0");
        if (!(ratio_floor > 0.0 && ratio_floor <= ratio_ceil))
            throw ConfigError("diw ratio bounds must satisfy 0 < floor <= ceil");
        if (!(lambda_ida >= 0.0 && lambda_ocs >= 0.0))
            throw ConfigError("diw base coefficients must be >= 0");
    }
};

struct WeightPair {
    double ida = 1.0;
    double ocs = 1.0;
};

struct DiwState {
    double ema = 0.0;
    bool ema_initialized = false; // first observation seeds the EMA directly
    long step = 0;
    WeightPair last{1.0, 1.0};
    double last_alpha = 1.0;
    bool last_skipped = false;
};

namespace detail {

inline WeightPair ratio_weights(double l_ida, double l_ocs, double normalizer, const DiwConfig& cfg) {
    const double r_ida = l_ida / normalizer;
    const double r_ocs = l_ocs / normalizer;
    const double denom = r_ida + r_ocs;
    const double w_ida = 2.0 * cfg.lambda_ida * (r_ida / denom);
    const double w_ocs = 2.0 * cfg.lambda_ocs * (r_ocs / denom);
    double alpha = w_ida > 0.0 ? w_ocs / w_ida : std::numeric_limits<double>::infinity();
    alpha = std::clamp(alpha, cfg.ratio_floor, cfg.ratio_ceil);
    return {2.0 / (1.0 + alpha), 2.0 * alpha / (1.0 + alpha)};
}

inline double clipped_alpha(double l_ida, double l_ocs, double normalizer, const DiwConfig& cfg) {
    const double r_ida = l_ida / normalizer;
    const double r_ocs = l_ocs / normalizer;
    const double denom = r_ida + r_ocs;
    const double w_ida = 2.0 * cfg.lambda_ida * (r_ida / denom);
    const double w_ocs = 2.0 * cfg.lambda_ocs * (r_ocs / denom);
    const double alpha = w_ida > 0.0 ? w_ocs / w_ida : std::numeric_limits<double>::infinity();
    return std::clamp(alpha, cfg.ratio_floor, cfg.ratio_ceil);
}

} // namespace detail

// One weighting step. Both-zero losses are a no-op: previous weights are
// returned unchanged and the state is flagged. Static mode returns (1,1)
// while the EMA keeps tracking the loss scale.
inline WeightPair diw_step(DiwState& state, double l_ida, double l_ocs, const DiwConfig& cfg) {
    cfg.validate();
    if (l_ida < 0.0 || l_ocs < 0.0) throw InvariantError("diw_step: losses must be >= 0");
    if (l_ida == 0.0 && l_ocs == 0.0) {
        state.last_skipped = true;
        return state.last;
    }
    state.last_skipped = false;
    const double combined = l_ida + l_ocs;
    state.ema = state.ema_initialized ? cfg.beta * state.ema + (1.0 - cfg.beta) * combined : combined;
    state.ema_initialized = true;
    ++state.step;

    if (cfg.mode == DiwMode::static_weights) {
        state.last = {1.0, 1.0};
        state.last_alpha = 1.0;
        return state.last;
    }
    const double normalizer = state.ema + cfg.eps;
    state.last_alpha = detail::clipped_alpha(l_ida, l_ocs, normalizer, cfg);
    state.last = detail::ratio_weights(l_ida, l_ocs, normalizer, cfg);
    return state.last;
}

struct BatchWeights {
    std::vector<WeightPair> per_sample;
    WeightPair batch; // pair derived from the batch-mean losses
    double ema = 0.0;
    double alpha = 1.0;
    bool skipped = false;
};

// Batch form used by the adaptation loop: the EMA is updated once from the
// batch-mean losses; per-sample pairs use per-sample losses against the
// shared normalizer. Samples whose losses are both zero get neutral (1,1).
inline BatchWeights diw_step_batch(DiwState& state, std::span<const double> l_ida,
                                   std::span<const double> l_ocs, const DiwConfig& cfg) {
    cfg.validate();
    if (l_ida.size() != l_ocs.size() || l_ida.empty())
        throw DimensionError("diw_step_batch: loss vectors must be nonempty and equal length");
    const size_t n = l_ida.size();
    double mean_ida = 0.0, mean_ocs = 0.0;
    for (size_t i = 0; i < n; ++i) {
        if (l_ida[i] < 0.0 || l_ocs[i] < 0.0) throw InvariantError("diw_step_batch: losses must be >= 0");
        mean_ida += l_ida[i];
        mean_ocs += l_ocs[i];
    }
    mean_ida /= static_cast<double>(n);
    mean_ocs /= static_cast<double>(n);

    BatchWeights out;
    out.batch = diw_step(state, mean_ida, mean_ocs, cfg);
    out.ema = state.ema;
    out.alpha = state.last_alpha;
    out.skipped = state.last_skipped;

    out.per_sample.assign(n, out.batch);
    if (state.last_skipped || cfg.mode == DiwMode::static_weights || !cfg.per_sample) return out;

    const double normalizer = state.ema + cfg.eps;
    for (size_t i = 0; i < n; ++i) {
        if (l_ida[i] == 0.0 && l_ocs[i] == 0.0)
            out.per_sample[i] = {1.0, 1.0};
        else
            out.per_sample[i] = detail::ratio_weights(l_ida[i], l_ocs[i], normalizer, cfg);
    }
    return out;
}

} // namespace sytta
