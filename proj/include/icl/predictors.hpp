// Forward predictors: the reduced preconditioned form, full masked linear
// attention with prompt tokens and heads (single layer and residual stacks),
// the debiased PGD predictor, and the constructive equivalence between the
// last two.
//
// Token layout for task k: row 0 is the prompt token p_k, rows 1..n are
// [x_i; y_i], row n+1 is the query [x; 0]. The mask keeps the first n+1 rows
// in the value aggregation and drops the query row.
//
// A single layer predicts from the attention output directly (the query row
// of Attn(Z) through the head). A stack of L >= 2 layers residual-updates the
// whole sequence, Z <- Z + Attn(Z), and reads the query row of the final
// sequence through the head.
#pragma once

#include <optional>
#include <vector>

#include "icl/problem_spec.hpp"

namespace icl {

struct ReducedModel {
    Matrix weight_W;  // d x d
    Matrix prompts;   // K x d, row k = pbar_k (zero rows allowed)
};

// prediction = x' W (X'y + pbar_k)
double predict_reduced(const ReducedModel& model, const PromptInstance& inst);

struct FullAttentionLayer {
    Matrix w_query;  // (d+1) x (d+1)
    Matrix w_key;
    Matrix w_value;
};

struct FullModel {
    std::vector<FullAttentionLayer> layers;  // length L >= 1
    Matrix prompt_tokens;                    // K x (d+1), row k = full token p_k
    std::optional<Matrix> task_heads;        // K x (d+1); absent = shared head e_{d+1}
};

double predict_full(const FullModel& model, const PromptInstance& inst);

// prediction = x' W X' (y - X mu_k) + x' mu_k
double predict_pgd_debiased(const Matrix& W, const Vector& mu_k, const PromptInstance& inst);

// One-layer attention model (single task slot, index 0) whose prediction
// equals predict_pgd_debiased(W, mu_k, .) on every instance:
//   WqWk' = [[W, 0], [0, 0]], Wv = I,
//   p = [W^-1 mu; mu' W^-T mu + 1], h = [-mu; 1].
FullModel build_equivalent_attention(const Matrix& W, const Vector& mu_k);

}  // namespace icl
