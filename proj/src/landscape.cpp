#include "icl/landscape.hpp"

#include <Eigen/LU>
#include <cmath>

#include "icl/errors.hpp"

namespace icl {
namespace {

constexpr double kRcondFloor = 1e-12;  // condition guard at 1e12

// B * M^-1 as a guarded linear solve (never an explicit inverse).
Matrix right_solve(const Matrix& B, const Matrix& M, const char* what) {
    Eigen::PartialPivLU<Matrix> lu(M.transpose());
    const double rcond = lu.rcond();
    if (!(rcond > kRcondFloor)) throw SingularW(1.0 / std::max(rcond, 1e-300));
    (void)what;
    return lu.solve(B.transpose()).transpose();
}

// cov_x^-1 * B. cov_x is SPD by validation; still guarded.
Matrix sigma_x_solve(const Matrix& cov_x, const Matrix& B) {
    Eigen::LDLT<Matrix> ldlt(cov_x);
    if (ldlt.info() != Eigen::Success || !(ldlt.rcond() > kRcondFloor))
        throw SingularSigmaX("cov_x solve failed (condition estimate " +
                             std::to_string(1.0 / std::max(ldlt.rcond(), 1e-300)) + ")");
    return ldlt.solve(B);
}

double parametric_loss(const Matrix& W, const ProblemSpec& spec, const MomentSummary& m,
                       bool with_prompts) {
    const double n = spec.context_len_n;
    const double s2 = spec.noise_sigma * spec.noise_sigma;
    Matrix quad = m.wishart_aggregate + n * s2 * spec.cov_x;
    Matrix linear = m.sigma_tilde;
    double constant = m.sigma_tilde.trace();
    if (with_prompts) {
        quad -= n * n * m.bias_gap * spec.cov_x;
        linear = m.sigma_bar;
        constant = m.sigma_bar.trace();
    }
    return (W * quad * W.transpose() * spec.cov_x).trace() -
           2.0 * n * (W * linear * spec.cov_x).trace() + constant + s2;
}

Matrix prompts_for(const Matrix& W, const ProblemSpec& spec, const MomentSummary& m) {
    Eigen::PartialPivLU<Matrix> lu(W);
    const double rcond = lu.rcond();
    if (!(rcond > kRcondFloor)) throw SingularW(1.0 / std::max(rcond, 1e-300));
    Matrix prompts(spec.num_tasks_K, spec.dim_d);
    for (int k = 0; k < spec.num_tasks_K; ++k) {
        const Vector& mu = spec.tasks[k].mean_mu;
        prompts.row(k) =
            (lu.solve(mu) - static_cast<double>(spec.context_len_n) * spec.cov_x * mu)
                .transpose();
    }
    return prompts;
}

}  // namespace

const char* setting_name(TrainingSetting s) {
    switch (s) {
        case TrainingSetting::PlainTraining: return "PT";
        case TrainingSetting::FineTuning: return "FT";
        case TrainingSetting::JointTraining: return "JT";
        case TrainingSetting::DecoupledPGD: return "PGD";
    }
    return "?";
}

AttentionSolution solve_plain_training(const ProblemSpec& spec) {
    const MomentSummary m = compute_moments(spec);
    const int d = spec.dim_d;
    const double n = spec.context_len_n;
    const double s2 = spec.noise_sigma * spec.noise_sigma;

    const Matrix shifted =
        (n + 1.0) * m.sigma_tilde + (m.sigma_tilde.trace() + s2) * Matrix::Identity(d, d);
    AttentionSolution sol;
    sol.setting = TrainingSetting::PlainTraining;
    sol.weight_W_bar = right_solve(m.sigma_tilde, shifted, "plain-training shift");
    sol.weight_W = sigma_x_solve(spec.cov_x, sol.weight_W_bar);
    sol.optimal_loss = m.sigma_tilde.trace() + s2 - n * (sol.weight_W_bar * m.sigma_tilde).trace();
    return sol;
}

AttentionSolution solve_fine_tuning(const ProblemSpec& spec) {
    const MomentSummary m = compute_moments(spec);
    AttentionSolution sol = solve_plain_training(spec);
    sol.setting = TrainingSetting::FineTuning;
    sol.prompt_P = prompts_for(sol.weight_W, spec, m);
    // Exact risk of (W*_PT, P*(W*_PT)). The boxed trace rearrangement in the
    // source theorem coincides with this whenever cov_x commutes with the
    // mean term; this form is exact for arbitrary cov_x.
    sol.optimal_loss = parametric_loss(sol.weight_W, spec, m, /*with_prompts=*/true);
    return sol;
}

AttentionSolution solve_joint_training(const ProblemSpec& spec) {
    const MomentSummary m = compute_moments(spec);
    const int d = spec.dim_d;
    const double n = spec.context_len_n;
    const double s2 = spec.noise_sigma * spec.noise_sigma;

    const Matrix shifted = (n + 1.0) * m.sigma_bar +
                           (m.sigma_tilde.trace() + s2) * Matrix::Identity(d, d) + m.bias_gap;
    AttentionSolution sol;
    sol.setting = TrainingSetting::JointTraining;
    sol.weight_W_bar = right_solve(m.sigma_bar, shifted, "joint-training shift");
    sol.weight_W = sigma_x_solve(spec.cov_x, sol.weight_W_bar);
    sol.prompt_P = prompts_for(sol.weight_W, spec, m);
    sol.optimal_loss = m.sigma_bar.trace() + s2 - n * (sol.weight_W_bar * m.sigma_bar).trace();
    return sol;
}

AttentionSolution solve_decoupled_pgd(const ProblemSpec& spec) {
    const MomentSummary m = compute_moments(spec);
    const int d = spec.dim_d;
    const double n = spec.context_len_n;
    const double s2 = spec.noise_sigma * spec.noise_sigma;

    const Matrix shifted =
        (n + 1.0) * m.sigma_bar + (m.sigma_bar.trace() + s2) * Matrix::Identity(d, d);
    AttentionSolution sol;
    sol.setting = TrainingSetting::DecoupledPGD;
    sol.weight_W_bar = right_solve(m.sigma_bar, shifted, "decoupled shift");
    sol.weight_W = sigma_x_solve(spec.cov_x, sol.weight_W_bar);
    sol.optimal_loss = m.sigma_bar.trace() + s2 - n * (sol.weight_W_bar * m.sigma_bar).trace();
    return sol;
}

double loss_plain_of_w(const Matrix& W, const ProblemSpec& spec) {
    return parametric_loss(W, spec, compute_moments(spec), /*with_prompts=*/false);
}

Matrix grad_loss_plain(const Matrix& W, const ProblemSpec& spec) {
    const MomentSummary m = compute_moments(spec);
    const double n = spec.context_len_n;
    const double s2 = spec.noise_sigma * spec.noise_sigma;
    const Matrix quad = m.wishart_aggregate + n * s2 * spec.cov_x;
    return 2.0 * spec.cov_x * W * quad - 2.0 * n * m.sigma_tilde * spec.cov_x;
}

double loss_with_optimal_prompts_of_w(const Matrix& W, const ProblemSpec& spec) {
    return parametric_loss(W, spec, compute_moments(spec), /*with_prompts=*/true);
}

Matrix optimal_prompts_given_w(const Matrix& W, const ProblemSpec& spec) {
    validate_spec(spec);
    if (W.rows() != spec.dim_d || W.cols() != spec.dim_d)
        throw DimensionMismatch("optimal_prompts_given_w: W must be d x d");
    return prompts_for(W, spec, compute_moments(spec));
}

double label_second_moment(const ProblemSpec& spec) {
    const MomentSummary m = compute_moments(spec);
    return (m.second_moment_mix * spec.cov_x).trace() + spec.noise_sigma * spec.noise_sigma;
}

GapReport gap_report(const ProblemSpec& spec) {
    const MomentSummary m = compute_moments(spec);
    const double pt = solve_plain_training(spec).optimal_loss;
    const double ft = solve_fine_tuning(spec).optimal_loss;
    const double jt = solve_joint_training(spec).optimal_loss;
    GapReport r;
    r.context_len_n = spec.context_len_n;
    r.gap_pt_ft = pt - ft;
    r.gap_ft_jt = ft - jt;
    r.delta_frobenius = m.bias_gap.norm();
    return r;
}

}  // namespace icl
