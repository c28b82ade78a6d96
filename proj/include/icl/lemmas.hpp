// Moment and derivative identities underpinning the closed forms, with
// Monte-Carlo verification plumbing.
//
//   E[X'X A X'X]   = n tr(cov A) cov + n(n+1) cov A cov,  rows of X ~ N(0, cov)
//   E[X'xi xi'X]   = n sigma^2 cov,                       xi ~ N(0, sigma^2 I)
//   d/dW tr(WAW'B) = B'WA' + BWA
#pragma once

#include <Eigen/Dense>
#include <cstdint>

#include "icl/problem_spec.hpp"
#include "icl/rng.hpp"

namespace icl {

Matrix wishart_quad_moment(const Matrix& cov_x, const Matrix& A, int n);
Matrix noise_quad_moment(const Matrix& cov_x, double sigma, int n);
Matrix trace_quad_derivative(const Matrix& W, const Matrix& A, const Matrix& B);

enum class MomentKind : std::uint8_t { Wishart, Noise };

struct MomentCheckParams {
    MomentKind kind = MomentKind::Wishart;
    Matrix cov_x;
    Matrix A;            // Wishart only
    double sigma = 1.0;  // Noise only
    int n = 1;
};

struct MomentCheckResult {
    Matrix analytic;
    Matrix empirical;
    Matrix entry_stderr;        // per-entry standard error of the empirical mean
    double rel_frobenius_error; // ||analytic - empirical||_F / max(||analytic||_F, 1e-30)
    long num_samples;
};

// Empirical average of the sampled matrix expression against the analytic
// value. Shards internally with a fixed shard layout, so the result depends
// only on (params, num_samples, rng), not on the thread count.
MomentCheckResult mc_moment_check(const MomentCheckParams& params, long num_samples,
                                  RngStream& rng);

}  // namespace icl
