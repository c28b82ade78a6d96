#include "icl/problem_spec.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <string>

#include "icl/errors.hpp"

namespace icl {
namespace {

constexpr double kAsymmetryTol = 1e-9;
constexpr double kWeightSumTol = 1e-12;

double max_asymmetry(const Matrix& a) {
    return (a - a.transpose()).cwiseAbs().maxCoeff();
}

void check_covariance(const Matrix& a, int d, const std::string& name) {
    if (a.rows() != d || a.cols() != d)
        throw DimensionMismatch(name + " must be " + std::to_string(d) + "x" + std::to_string(d));
    if (max_asymmetry(a) > kAsymmetryTol) {
        // Report through the PSD error channel; an asymmetric matrix has no
        // meaningful eigenvalue to quote, so quote the symmetrized minimum.
        const Matrix sym = 0.5 * (a + a.transpose());
        const double min_eig = Eigen::SelfAdjointEigenSolver<Matrix>(sym).eigenvalues().minCoeff();
        throw NonPSDCovariance(name + " (asymmetry > 1e-9)", min_eig);
    }
    const Matrix sym = 0.5 * (a + a.transpose());
    const double min_eig = Eigen::SelfAdjointEigenSolver<Matrix>(sym).eigenvalues().minCoeff();
    if (!(min_eig > 0.0)) throw NonPSDCovariance(name, min_eig);
}

}  // namespace

void validate_spec(const ProblemSpec& spec) {
    if (spec.dim_d <= 0) throw DimensionMismatch("dim_d must be positive");
    if (spec.num_tasks_K <= 0) throw DimensionMismatch("num_tasks_K must be positive");
    if (spec.context_len_n <= 0) throw DimensionMismatch("context_len_n must be positive");
    if (!(spec.noise_sigma >= 0.0)) throw DimensionMismatch("noise_sigma must be nonnegative");
    if (static_cast<int>(spec.tasks.size()) != spec.num_tasks_K)
        throw DimensionMismatch("tasks list length must equal num_tasks_K");

    check_covariance(spec.cov_x, spec.dim_d, "cov_x");

    double weight_sum = 0.0;
    for (int k = 0; k < spec.num_tasks_K; ++k) {
        const TaskSpec& t = spec.tasks[k];
        if (t.mean_mu.size() != spec.dim_d)
            throw DimensionMismatch("task " + std::to_string(k) + " mean_mu has wrong length");
        if (t.weight_pi < 0.0) throw WeightsNotNormalized(std::abs(t.weight_pi));
        check_covariance(t.cov_beta, spec.dim_d, "cov_beta[" + std::to_string(k) + "]");
        weight_sum += t.weight_pi;
    }
    if (std::abs(weight_sum - 1.0) > kWeightSumTol)
        throw WeightsNotNormalized(std::abs(weight_sum - 1.0));
}

ProblemSpec sanitize_spec(ProblemSpec spec) {
    validate_spec(spec);
    spec.cov_x = 0.5 * (spec.cov_x + spec.cov_x.transpose()).eval();
    for (auto& t : spec.tasks) t.cov_beta = 0.5 * (t.cov_beta + t.cov_beta.transpose()).eval();
    return spec;
}

MomentSummary compute_moments(const ProblemSpec& spec) {
    validate_spec(spec);
    const int d = spec.dim_d;
    const int n = spec.context_len_n;

    Matrix cov_mix = Matrix::Zero(d, d);       // sum pi_k cov_beta_k
    Matrix mean_second = Matrix::Zero(d, d);   // sum pi_k mu_k mu_k'
    Matrix mean_matrix(spec.num_tasks_K, d);
    for (int k = 0; k < spec.num_tasks_K; ++k) {
        const TaskSpec& t = spec.tasks[k];
        cov_mix += t.weight_pi * t.cov_beta;
        mean_second += t.weight_pi * (t.mean_mu * t.mean_mu.transpose());
        mean_matrix.row(k) = t.mean_mu.transpose();
    }

    MomentSummary m;
    m.mean_matrix = mean_matrix;
    m.second_moment_mix = cov_mix + mean_second;
    m.sigma_bar = spec.cov_x * cov_mix;
    m.bias_gap = spec.cov_x * mean_second;
    m.sigma_tilde = m.sigma_bar + m.bias_gap;
    m.wishart_aggregate = static_cast<double>(n) * m.sigma_tilde.trace() * spec.cov_x +
                          static_cast<double>(n) * (n + 1.0) * m.sigma_tilde * spec.cov_x;
    return m;
}

Matrix psd_factor(const Matrix& cov, const char* name) {
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() == Eigen::Success) return llt.matrixL();
    const double jitter = 1e-12 * cov.trace() / static_cast<double>(cov.rows());
    Matrix boosted = cov + jitter * Matrix::Identity(cov.rows(), cov.cols());
    Eigen::LLT<Matrix> retry(boosted);
    if (retry.info() != Eigen::Success) {
        const double min_eig =
            Eigen::SelfAdjointEigenSolver<Matrix>(cov).eigenvalues().minCoeff();
        throw NonPSDCovariance(name, min_eig);
    }
    return retry.matrixL();
}

EpisodeSampler::EpisodeSampler(const ProblemSpec& spec) : spec_(sanitize_spec(spec)) {
    chol_x_ = psd_factor(spec_.cov_x, "cov_x");
    chol_beta_.reserve(spec_.tasks.size());
    double cum = 0.0;
    for (size_t k = 0; k < spec_.tasks.size(); ++k) {
        chol_beta_.push_back(psd_factor(spec_.tasks[k].cov_beta,
                                        ("cov_beta[" + std::to_string(k) + "]").c_str()));
        cum += spec_.tasks[k].weight_pi;
        cum_pi_.push_back(cum);
    }
    cum_pi_.back() = 1.0;  // guard against rounding in the cumulative sum
}

int EpisodeSampler::sample_task(RngStream& rng) const {
    const double u = rng.next_uniform();
    for (size_t k = 0; k < cum_pi_.size(); ++k)
        if (u <= cum_pi_[k]) return static_cast<int>(k);
    return static_cast<int>(cum_pi_.size()) - 1;
}

void EpisodeSampler::sample_into(int task_index, RngStream& rng, PromptInstance& out) const {
    const int d = spec_.dim_d;
    const int n = spec_.context_len_n;
    if (task_index < 0 || task_index >= spec_.num_tasks_K)
        throw DimensionMismatch("task_index out of range");

    out.context_X.resize(n, d);
    out.context_y.resize(n);
    out.query_x.resize(d);
    out.task_index = task_index;

    // Draw order is part of the determinism contract:
    // beta, then the n context features, the query feature, then noises.
    Vector z(d);
    for (int i = 0; i < d; ++i) z[i] = rng.next_gaussian();
    Vector beta = spec_.tasks[task_index].mean_mu +
                  chol_beta_[task_index].triangularView<Eigen::Lower>() * z;

    for (int row = 0; row < n; ++row) {
        for (int i = 0; i < d; ++i) z[i] = rng.next_gaussian();
        out.context_X.row(row) =
            (chol_x_.triangularView<Eigen::Lower>() * z).transpose();
    }
    for (int i = 0; i < d; ++i) z[i] = rng.next_gaussian();
    out.query_x = chol_x_.triangularView<Eigen::Lower>() * z;

    const double sigma = spec_.noise_sigma;
    for (int row = 0; row < n; ++row)
        out.context_y[row] = out.context_X.row(row).dot(beta) + sigma * rng.next_gaussian();
    out.target_y = out.query_x.dot(beta) + sigma * rng.next_gaussian();
}

PromptInstance EpisodeSampler::sample(int task_index, RngStream& rng) const {
    PromptInstance inst;
    sample_into(task_index, rng, inst);
    return inst;
}

int sample_task_index(const ProblemSpec& spec, RngStream& rng) {
    return EpisodeSampler(spec).sample_task(rng);
}

Vector sample_task_vector(const ProblemSpec& spec, int task_index, RngStream& rng) {
    validate_spec(spec);
    if (task_index < 0 || task_index >= spec.num_tasks_K)
        throw DimensionMismatch("task_index out of range");
    const Matrix chol = psd_factor(0.5 * (spec.tasks[task_index].cov_beta +
                                          spec.tasks[task_index].cov_beta.transpose()),
                                   "cov_beta");
    Vector z(spec.dim_d);
    for (int i = 0; i < spec.dim_d; ++i) z[i] = rng.next_gaussian();
    return spec.tasks[task_index].mean_mu + chol.triangularView<Eigen::Lower>() * z;
}

PromptInstance sample_instance(const ProblemSpec& spec, int task_index, RngStream& rng) {
    return EpisodeSampler(spec).sample(task_index, rng);
}

}  // namespace icl
