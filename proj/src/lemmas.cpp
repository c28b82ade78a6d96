#include "icl/lemmas.hpp"

#include <cmath>
#include <vector>

#include "icl/errors.hpp"
#include "icl/parallel.hpp"

namespace icl {

Matrix wishart_quad_moment(const Matrix& cov_x, const Matrix& A, int n) {
    const auto d = cov_x.rows();
    if (cov_x.cols() != d || A.rows() != d || A.cols() != d)
        throw DimensionMismatch("wishart_quad_moment: cov_x and A must be square with equal size");
    const double nn = static_cast<double>(n);
    return nn * (cov_x * A).trace() * cov_x + nn * (nn + 1.0) * cov_x * A * cov_x;
}

Matrix noise_quad_moment(const Matrix& cov_x, double sigma, int n) {
    return static_cast<double>(n) * sigma * sigma * cov_x;
}

Matrix trace_quad_derivative(const Matrix& W, const Matrix& A, const Matrix& B) {
    const auto d = W.rows();
    if (W.cols() != d || A.rows() != d || A.cols() != d || B.rows() != d || B.cols() != d)
        throw DimensionMismatch("trace_quad_derivative: all matrices must be square with equal size");
    return B.transpose() * W * A.transpose() + B * W * A;
}

namespace {

constexpr int kShards = 64;

// One sampled term of the expectation being checked.
void sample_term(const MomentCheckParams& p, const Matrix& chol, RngStream& rng, Matrix& term,
                 Matrix& X, Vector& z) {
    const auto d = p.cov_x.rows();
    const int n = p.n;
    for (int row = 0; row < n; ++row) {
        for (int i = 0; i < d; ++i) z[i] = rng.next_gaussian();
        X.row(row) = (chol.triangularView<Eigen::Lower>() * z).transpose();
    }
    if (p.kind == MomentKind::Wishart) {
        const Matrix G = X.transpose() * X;
        term.noalias() = G * p.A * G;
    } else {
        Vector xi(n);
        for (int i = 0; i < n; ++i) xi[i] = p.sigma * rng.next_gaussian();
        const Vector v = X.transpose() * xi;
        term.noalias() = v * v.transpose();
    }
}

}  // namespace

MomentCheckResult mc_moment_check(const MomentCheckParams& params, long num_samples,
                                  RngStream& rng) {
    if (num_samples < 1000) throw DimensionMismatch("mc_moment_check: num_samples must be >= 1e3");
    const auto d = params.cov_x.rows();
    const Matrix chol = psd_factor(0.5 * (params.cov_x + params.cov_x.transpose()), "cov_x");

    std::vector<Matrix> sums(kShards), sq_sums(kShards);
    parallel_for(kShards, [&](int s) {
        RngStream stream = rng.substream(static_cast<std::uint64_t>(s));
        const long lo = num_samples * s / kShards;
        const long hi = num_samples * (s + 1) / kShards;
        Matrix sum = Matrix::Zero(d, d), sq = Matrix::Zero(d, d);
        Matrix term(d, d), X(params.n, d);
        Vector z(d);
        for (long i = lo; i < hi; ++i) {
            sample_term(params, chol, stream, term, X, z);
            sum += term;
            sq += term.cwiseProduct(term);
        }
        sums[s] = sum;
        sq_sums[s] = sq;
    });

    Matrix sum = Matrix::Zero(d, d), sq = Matrix::Zero(d, d);
    for (int s = 0; s < kShards; ++s) {  // fixed reduction order
        sum += sums[s];
        sq += sq_sums[s];
    }

    MomentCheckResult r;
    r.num_samples = num_samples;
    const double N = static_cast<double>(num_samples);
    r.empirical = sum / N;
    if (params.kind == MomentKind::Wishart)
        r.analytic = wishart_quad_moment(params.cov_x, params.A, params.n);
    else
        r.analytic = noise_quad_moment(params.cov_x, params.sigma, params.n);
    const Matrix var = (sq / N - r.empirical.cwiseProduct(r.empirical)).cwiseMax(0.0);
    r.entry_stderr = (var / N).cwiseSqrt();
    r.rel_frobenius_error =
        (r.analytic - r.empirical).norm() / std::max(r.analytic.norm(), 1e-30);
    return r;
}

}  // namespace icl
