// Closed-form optimal attention weights, prompts, and losses for the four
// training settings, plus the exact parametric population losses and the
// analytic gradient of the plain-training surface.
//
// All inverses are computed as linear solves against strictly-shifted
// matrices, guarded by a condition estimate of 1e12.
#pragma once

#include <optional>

#include "icl/problem_spec.hpp"

namespace icl {

enum class TrainingSetting { PlainTraining, FineTuning, JointTraining, DecoupledPGD };

const char* setting_name(TrainingSetting s);

struct AttentionSolution {
    TrainingSetting setting = TrainingSetting::PlainTraining;
    Matrix weight_W;                 // preconditioner W
    Matrix weight_W_bar;             // cov_x * W
    std::optional<Matrix> prompt_P;  // K x d, present for FineTuning / JointTraining
    double optimal_loss = 0.0;
};

struct GapReport {
    double gap_pt_ft = 0.0;        // L*_PT - L*_FT
    double gap_ft_jt = 0.0;        // L*_FT - L*_JT
    double delta_frobenius = 0.0;  // ||sigma_tilde - sigma_bar||_F
    int context_len_n = 0;
};

AttentionSolution solve_plain_training(const ProblemSpec& spec);
AttentionSolution solve_fine_tuning(const ProblemSpec& spec);
AttentionSolution solve_joint_training(const ProblemSpec& spec);
AttentionSolution solve_decoupled_pgd(const ProblemSpec& spec);

// Exact population risk of the reduced predictor with zero prompts at
// arbitrary W, and its analytic gradient.
double loss_plain_of_w(const Matrix& W, const ProblemSpec& spec);
Matrix grad_loss_plain(const Matrix& W, const ProblemSpec& spec);

// Exact population risk at arbitrary W with the induced optimal prompts
// P*(W) substituted in. Fine-tuning and joint training share this surface.
double loss_with_optimal_prompts_of_w(const Matrix& W, const ProblemSpec& spec);

// Row k = (W^-1 - n cov_x) mu_k. Throws SingularW past condition 1e12.
Matrix optimal_prompts_given_w(const Matrix& W, const ProblemSpec& spec);

// E[y^2] = tr(second_moment_mix * cov_x) + sigma^2; the normalization
// constant for reported curves.
double label_second_moment(const ProblemSpec& spec);

GapReport gap_report(const ProblemSpec& spec);

}  // namespace icl
