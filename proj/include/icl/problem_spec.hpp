// Multi-task in-context regression data model: spec types, validation,
// mixture moment summaries, and episode sampling.
//
// An episode for task k draws a regression vector beta ~ N(mu_k, cov_beta_k),
// then n+1 features x_i ~ N(0, cov_x) with labels y_i = x_i'beta + noise.
// The first n pairs form the context, the last is the query/target.
#pragma once

#include <Eigen/Dense>
#include <vector>

#include "icl/rng.hpp"

namespace icl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct TaskSpec {
    Vector mean_mu;      // d
    Matrix cov_beta;     // d x d, symmetric positive-definite
    double weight_pi;    // mixture probability
};

struct ProblemSpec {
    int dim_d = 0;
    int num_tasks_K = 0;
    int context_len_n = 0;
    double noise_sigma = 0.0;  // label-noise std
    Matrix cov_x;              // d x d, symmetric positive-definite
    std::vector<TaskSpec> tasks;

    // Copy with a different context length (experiment sweeps reuse one spec).
    ProblemSpec with_n(int n) const {
        ProblemSpec s = *this;
        s.context_len_n = n;
        return s;
    }
};

// Derived mixture statistics. sigma_bar/sigma_tilde carry the cov_x prefix and
// are generally non-symmetric for non-isotropic cov_x.
struct MomentSummary {
    Matrix sigma_bar;          // cov_x * sum_k pi_k cov_beta_k
    Matrix sigma_tilde;        // cov_x * sum_k pi_k (cov_beta_k + mu_k mu_k')
    Matrix mean_matrix;        // K x d, row k = mu_k'
    Matrix bias_gap;           // sigma_tilde - sigma_bar = cov_x * sum_k pi_k mu_k mu_k'
    Matrix second_moment_mix;  // sum_k pi_k (cov_beta_k + mu_k mu_k')
    Matrix wishart_aggregate;  // n tr(sigma_tilde) cov_x + n(n+1) sigma_tilde cov_x
};

// One sampled episode.
struct PromptInstance {
    Matrix context_X;  // n x d
    Vector context_y;  // n
    Vector query_x;    // d
    double target_y = 0.0;
    int task_index = 0;
};

// Throws NonPSDCovariance / WeightsNotNormalized / DimensionMismatch unless
// every invariant holds. Asymmetry beyond 1e-9 is rejected; smaller asymmetry
// is tolerated (callers see the symmetrized matrices via sanitize_spec).
void validate_spec(const ProblemSpec& spec);

// Symmetrizes covariances as (A + A')/2, then validates. JSON loading and
// random spec generators funnel through this.
ProblemSpec sanitize_spec(ProblemSpec spec);

MomentSummary compute_moments(const ProblemSpec& spec);

int sample_task_index(const ProblemSpec& spec, RngStream& rng);
Vector sample_task_vector(const ProblemSpec& spec, int task_index, RngStream& rng);
PromptInstance sample_instance(const ProblemSpec& spec, int task_index, RngStream& rng);

// Precomputed Cholesky factors for hot Monte-Carlo loops. sample_into reuses
// the caller's buffers; results are identical to sample_instance.
class EpisodeSampler {
  public:
    explicit EpisodeSampler(const ProblemSpec& spec);

    int sample_task(RngStream& rng) const;
    void sample_into(int task_index, RngStream& rng, PromptInstance& out) const;
    PromptInstance sample(int task_index, RngStream& rng) const;

    const ProblemSpec& spec() const { return spec_; }

  private:
    ProblemSpec spec_;
    Matrix chol_x_;                  // lower factor of cov_x
    std::vector<Matrix> chol_beta_;  // lower factor per task
    std::vector<double> cum_pi_;
};

// Lower Cholesky factor with the jitter fallback (1e-12 * tr/d on the
// diagonal) when the exact factorization fails.
Matrix psd_factor(const Matrix& cov, const char* name);

}  // namespace icl
