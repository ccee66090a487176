// Copyright (c) 2026, the sytta authors
// SPDX-License-Identifier: Apache-2.0
//
// Adaptation losses. Input-side: gated question NLL. Output-side: prefix
// entropy (cumulative or averaged) plus a KL anchor to the base model's
// reference distributions. Everything runs in nats through the stabilized
// log-softmax pathway.
#pragma once

#include "sytta/model.hpp"
#include "sytta/tensor.hpp"

#include <cmath>

namespace sytta {

enum class EntropyMode { cumulative, average };
enum class KlDirection { reverse, forward };
enum class OcsComposition { eq7, alg1 };
enum class GateAmplification { proportional, off };

struct GateConfig {
    double threshold = 1.2; // nats/token; +inf gates every sample out
    GateAmplification amplification = GateAmplification::proportional;

    void validate() const {
        if (!(threshold > 0.0)) throw ConfigError("gate threshold must be > 0");
    }
};

// Gate factor from the base model's question NLL. Zero at or below the
// threshold; in proportional mode the factor is nll/threshold, which makes
// the gate continuous (value 1) at the threshold.
inline double gate_weight(double base_nll, const GateConfig& g) {
    g.validate();
    if (!(base_nll > g.threshold)) return 0.0;
    return g.amplification == GateAmplification::proportional ? base_nll / g.threshold : 1.0;
}

// Per-sample losses as graph scalars, with the bookkeeping the run log needs.
struct LossBundle {
    Tensor l_ida;
    Tensor l_ent;
    Tensor l_kl;
    Tensor l_ocs;
    double gate = 0.0;
    int m = 0; // question tokens
    int k = 0; // prefix tokens
    bool gated_in() const { return gate != 0.0; }
};

// Gated mean question NLL from precomputed logits over (at least) the
// question positions. The gate factor is a detached constant.
inline Tensor ida_loss_from_logits(const Tensor& logits, const std::vector<int>& question_ids,
                                   double gate_factor) {
    const int m = static_cast<int>(question_ids.size());
    if (m < 2) throw DimensionError("ida_loss: need at least 2 question tokens");
    std::vector<int> targets(question_ids.begin() + 1, question_ids.end());
    Tensor rows = slice_rows(logits, 0, m - 1);
    return scale(cross_entropy(rows, targets), gate_factor);
}

// Standalone form: runs its own adapted forward pass and evaluates the gate
// under the frozen base model (no gradient flows through the gate).
inline Tensor ida_loss(const ModelState& state, const ModelState& base, const TokenSeq& x,
                       const GateConfig& gate) {
    if (x.length() < 2) throw DimensionError("ida_loss: need at least 2 question tokens");
    const double g = gate_weight(question_nll(base, x, /*use_adapters=*/false), gate);
    Tensor logits = forward_logits(state, x, /*use_adapters=*/true);
    return ida_loss_from_logits(logits, x.ids, g);
}

// Shannon entropy over the k prefix positions. Both modes are derived from
// the same per-step mean so that cumulative == k * average bit-exactly.
inline Tensor entropy_loss(const Tensor& adapted_logits, EntropyMode mode) {
    const int k = adapted_logits.rows();
    if (k < 1) throw DimensionError("entropy_loss: need at least one prefix row");
    Tensor ls = log_softmax(adapted_logits);
    Tensor total = scale(sum(mul(sytta::exp(ls), ls)), -1.0);
    Tensor avg = scale(total, 1.0 / static_cast<double>(k));
    return mode == EntropyMode::average ? avg : scale(avg, static_cast<double>(k));
}

// KL between adapted and reference rows, summed over positions. Reference
// logits are treated as constants; only the adapted side carries gradient.
inline Tensor kl_loss(const Tensor& adapted_logits, const Tensor& ref_logits, KlDirection direction) {
    check_same_shape(adapted_logits, ref_logits, "kl_loss");
    Tensor ls_adapted = log_softmax(adapted_logits);
    Tensor ls_ref;
    {
        NoGradGuard nograd;
        ls_ref = log_softmax(ref_logits);
    }
    if (direction == KlDirection::reverse) {
        // sum_t sum_a p'(a) * (log p'(a) - log p_ref(a))
        return sum(mul(sytta::exp(ls_adapted), sub(ls_adapted, ls_ref)));
    }
    // forward: sum_t sum_a p_ref(a) * (log p_ref(a) - log p'(a))
    Tensor p_ref;
    {
        NoGradGuard nograd;
        p_ref = sytta::exp(ls_ref);
    }
    return sum(mul(p_ref, sub(ls_ref, ls_adapted)));
}

// OCS composite. Under eq7 the KL rides inside the DIW-weighted term; under
// alg1 OCS is entropy only and the batch formula adds the KL unweighted.
inline Tensor ocs_loss(const Tensor& l_ent, const Tensor& l_kl, double lambda_kl,
                       OcsComposition composition) {
    if (!(lambda_kl >= 0.0)) throw ConfigError("lambda_kl must be >= 0");
    if (composition == OcsComposition::eq7) return add(l_ent, scale(l_kl, lambda_kl));
    return l_ent;
}

} // namespace sytta
