#include "icl/trainer.hpp"

#include <atomic>
#include <cmath>
#include <limits>

#include "icl/errors.hpp"
#include "icl/landscape.hpp"
#include "icl/parallel.hpp"
#include "icl/serialization.hpp"

namespace icl {

namespace {

constexpr int kEvalShards = 64;

int square(int x) { return x * x; }

// Flat layout sizes.
int param_count(TrainVariant v, int d, int K, int L) {
    const int D = d + 1;
    switch (v) {
        case TrainVariant::PlainTraining: return d * d;
        case TrainVariant::FineTuning: return K * d;
        case TrainVariant::JointTraining: return d * d + K * d;
        case TrainVariant::JointWithHeads: return 3 * L * D * D + 2 * K * D;
    }
    return 0;
}

using ConstMap = Eigen::Map<const Matrix>;
using MutMap = Eigen::Map<Matrix>;

// Offsets into the JointWithHeads layout.
struct FullLayout {
    int D, K, L;
    int wq(int l) const { return 3 * l * D * D; }
    int wk(int l) const { return (3 * l + 1) * D * D; }
    int wv(int l) const { return (3 * l + 2) * D * D; }
    int prompts() const { return 3 * L * D * D; }
    int heads() const { return 3 * L * D * D + K * D; }
};

}  // namespace

const char* variant_name(TrainVariant v) {
    switch (v) {
        case TrainVariant::PlainTraining: return "PT";
        case TrainVariant::FineTuning: return "FT";
        case TrainVariant::JointTraining: return "JT";
        case TrainVariant::JointWithHeads: return "JT+heads";
    }
    return "?";
}

TrainableModel TrainableModel::create(const ProblemSpec& spec, const TrainSetting& setting) {
    validate_spec(spec);
    TrainableModel m;
    m.variant_ = setting.variant;
    m.d_ = spec.dim_d;
    m.K_ = spec.num_tasks_K;
    m.L_ = setting.variant == TrainVariant::JointWithHeads ? setting.depth_L : 1;
    if (m.L_ < 1) throw DimensionMismatch("depth_L must be >= 1");
    if (setting.variant == TrainVariant::FineTuning) {
        if (!setting.frozen_W) throw DimensionMismatch("FineTuning requires a frozen W");
        if (setting.frozen_W->rows() != m.d_ || setting.frozen_W->cols() != m.d_)
            throw DimensionMismatch("frozen W must be d x d");
        m.frozen_W_ = *setting.frozen_W;
    }
    m.params_ = Eigen::VectorXd::Zero(param_count(m.variant_, m.d_, m.K_, m.L_));
    return m;
}

void TrainableModel::initialize(RngStream& rng, double scale) {
    if (variant_ == TrainVariant::FineTuning) {
        params_.setZero();  // prompts start at zero around the frozen W
        return;
    }
    for (Eigen::Index i = 0; i < params_.size(); ++i) params_[i] = scale * rng.next_gaussian();
}

ReducedModel TrainableModel::reduced() const {
    ReducedModel r;
    switch (variant_) {
        case TrainVariant::PlainTraining:
            r.weight_W = ConstMap(params_.data(), d_, d_);
            r.prompts = Matrix::Zero(K_, d_);
            break;
        case TrainVariant::FineTuning:
            r.weight_W = frozen_W_;
            r.prompts = ConstMap(params_.data(), K_, d_);
            break;
        case TrainVariant::JointTraining:
            r.weight_W = ConstMap(params_.data(), d_, d_);
            r.prompts = ConstMap(params_.data() + square(d_), K_, d_);
            break;
        case TrainVariant::JointWithHeads:
            throw DimensionMismatch("JointWithHeads has no reduced form");
    }
    return r;
}

FullModel TrainableModel::full() const {
    if (variant_ != TrainVariant::JointWithHeads)
        throw DimensionMismatch("full() is only defined for JointWithHeads");
    const FullLayout lay{d_ + 1, K_, L_};
    FullModel f;
    f.layers.resize(L_);
    for (int l = 0; l < L_; ++l) {
        f.layers[l].w_query = ConstMap(params_.data() + lay.wq(l), lay.D, lay.D);
        f.layers[l].w_key = ConstMap(params_.data() + lay.wk(l), lay.D, lay.D);
        f.layers[l].w_value = ConstMap(params_.data() + lay.wv(l), lay.D, lay.D);
    }
    f.prompt_tokens = ConstMap(params_.data() + lay.prompts(), K_, lay.D);
    f.task_heads = Matrix(ConstMap(params_.data() + lay.heads(), K_, lay.D));
    return f;
}

double TrainableModel::predict(const PromptInstance& inst) const {
    if (variant_ == TrainVariant::JointWithHeads) return predict_full(full(), inst);
    return predict_reduced(reduced(), inst);
}

std::string TrainableModel::to_json_string() const {
    if (variant_ == TrainVariant::JointWithHeads) return model_to_json(full()).dump();
    return model_to_json(reduced()).dump();
}

namespace {

// ---- reduced-form loss/gradient ----

std::pair<double, Eigen::VectorXd> reduced_loss_grad(const TrainableModel& model,
                                                     std::span<const PromptInstance> batch,
                                                     bool want_grad) {
    const ReducedModel rm = model.reduced();
    const int d = model.dim();
    const int K = model.num_tasks();
    const TrainVariant variant = model.variant();
    const double inv_b = 1.0 / static_cast<double>(batch.size());

    Matrix dW = Matrix::Zero(d, d);
    Matrix dP = Matrix::Zero(K, d);
    double loss = 0.0;
    Vector aggregated(d), wt_x(d);
    for (const PromptInstance& inst : batch) {
        aggregated.noalias() = inst.context_X.transpose() * inst.context_y;
        aggregated += rm.prompts.row(inst.task_index).transpose();
        const double pred = inst.query_x.dot(rm.weight_W * aggregated);
        const double r = pred - inst.target_y;
        loss += r * r;
        if (!want_grad) continue;
        const double c = 2.0 * r * inv_b;
        if (variant != TrainVariant::FineTuning)
            dW.noalias() += c * inst.query_x * aggregated.transpose();
        if (variant != TrainVariant::PlainTraining) {
            wt_x.noalias() = rm.weight_W.transpose() * inst.query_x;
            dP.row(inst.task_index) += c * wt_x.transpose();
        }
    }
    loss *= inv_b;

    Eigen::VectorXd grad;
    if (want_grad) {
        grad.resize(model.params().size());
        switch (variant) {
            case TrainVariant::PlainTraining:
                MutMap(grad.data(), d, d) = dW;
                break;
            case TrainVariant::FineTuning:
                MutMap(grad.data(), K, d) = dP;
                break;
            case TrainVariant::JointTraining:
                MutMap(grad.data(), d, d) = dW;
                MutMap(grad.data() + d * d, K, d) = dP;
                break;
            default: break;
        }
    }
    return {loss, std::move(grad)};
}

// ---- full attention stack loss/gradient ----

struct LayerCache {
    Matrix Z;    // layer input
    Matrix A;    // Wq Wk'
    Matrix U;    // masked score matrix (Z A Z' with last column zeroed)
    Matrix out;  // U Z Wv
};

Matrix tokens_for(const FullModel& model, const PromptInstance& inst) {
    const auto n = inst.context_X.rows();
    const auto d = inst.context_X.cols();
    Matrix Z(n + 2, d + 1);
    Z.row(0) = model.prompt_tokens.row(inst.task_index);
    Z.block(1, 0, n, d) = inst.context_X;
    Z.col(d).segment(1, n) = inst.context_y;
    Z.row(n + 1).head(d) = inst.query_x.transpose();
    Z(n + 1, d) = 0.0;
    return Z;
}

double full_forward(const FullModel& model, const PromptInstance& inst,
                    std::vector<LayerCache>& caches, Matrix& Z_final) {
    const int L = static_cast<int>(model.layers.size());
    caches.resize(L);
    Matrix Z = tokens_for(model, inst);
    const auto query = Z.rows() - 1;
    for (int l = 0; l < L; ++l) {
        LayerCache& c = caches[l];
        c.Z = Z;
        c.A.noalias() = model.layers[l].w_query * model.layers[l].w_key.transpose();
        c.U.noalias() = c.Z * c.A * c.Z.transpose();
        c.U.col(c.U.cols() - 1).setZero();
        c.out.noalias() = c.U * c.Z * model.layers[l].w_value;
        if (L == 1) {
            Z_final = c.out;  // single layer reads the attention output directly
            return c.out.row(query).dot(model.task_heads->row(inst.task_index));
        }
        Z += c.out;
    }
    Z_final = Z;
    return Z.row(query).dot(model.task_heads->row(inst.task_index));
}

// Backprop through one layer: given dOut, accumulates parameter grads and
// returns the gradient w.r.t. the layer input.
Matrix layer_backward(const FullAttentionLayer& layer, const LayerCache& c, const Matrix& dOut,
                      Matrix& dWq, Matrix& dWk, Matrix& dWv) {
    const Matrix UZ = c.U * c.Z;
    dWv.noalias() += UZ.transpose() * dOut;
    const Matrix G = dOut * layer.w_value.transpose();  // d(UZ)
    Matrix dU = G * c.Z.transpose();
    dU.col(dU.cols() - 1).setZero();  // mask
    Matrix dZ = c.U.transpose() * G;
    const Matrix dA = c.Z.transpose() * dU * c.Z;
    dZ.noalias() += dU * c.Z * c.A.transpose();
    dZ.noalias() += dU.transpose() * c.Z * c.A;
    dWq.noalias() += dA * layer.w_key;
    dWk.noalias() += dA.transpose() * layer.w_query;
    return dZ;
}

std::pair<double, Eigen::VectorXd> full_loss_grad(const TrainableModel& model,
                                                  std::span<const PromptInstance> batch,
                                                  bool want_grad) {
    const FullModel fm = model.full();
    const int L = model.depth();
    const int K = model.num_tasks();
    const int D = model.dim() + 1;
    const FullLayout lay{D, K, L};
    const double inv_b = 1.0 / static_cast<double>(batch.size());

    Eigen::VectorXd grad = Eigen::VectorXd::Zero(model.params().size());
    std::vector<Matrix> dWq(L, Matrix::Zero(D, D)), dWk(L, Matrix::Zero(D, D)),
        dWv(L, Matrix::Zero(D, D));
    Matrix dPrompts = Matrix::Zero(K, D), dHeads = Matrix::Zero(K, D);

    double loss = 0.0;
    std::vector<LayerCache> caches;
    Matrix Z_final;
    for (const PromptInstance& inst : batch) {
        const double pred = full_forward(fm, inst, caches, Z_final);
        const double r = pred - inst.target_y;
        loss += r * r;
        if (!want_grad) continue;

        const double dpred = 2.0 * r * inv_b;
        const auto query = Z_final.rows() - 1;
        const int k = inst.task_index;
        dHeads.row(k) += dpred * Z_final.row(query);

        Matrix dZ = Matrix::Zero(Z_final.rows(), D);
        dZ.row(query) = dpred * fm.task_heads->row(k);
        if (L == 1) {
            dZ = layer_backward(fm.layers[0], caches[0], dZ, dWq[0], dWk[0], dWv[0]);
        } else {
            for (int l = L - 1; l >= 0; --l)
                dZ += layer_backward(fm.layers[l], caches[l], dZ, dWq[l], dWk[l], dWv[l]);
        }
        dPrompts.row(k) += dZ.row(0);
    }
    loss *= inv_b;

    if (want_grad) {
        for (int l = 0; l < L; ++l) {
            MutMap(grad.data() + lay.wq(l), D, D) = dWq[l];
            MutMap(grad.data() + lay.wk(l), D, D) = dWk[l];
            MutMap(grad.data() + lay.wv(l), D, D) = dWv[l];
        }
        MutMap(grad.data() + lay.prompts(), K, D) = dPrompts;
        MutMap(grad.data() + lay.heads(), K, D) = dHeads;
    }
    return {loss, std::move(grad)};
}

}  // namespace

std::pair<double, Eigen::VectorXd> loss_and_gradient(const TrainableModel& model,
                                                     std::span<const PromptInstance> batch) {
    if (batch.empty()) throw DimensionMismatch("empty batch");
    if (model.variant() == TrainVariant::JointWithHeads)
        return full_loss_grad(model, batch, true);
    return reduced_loss_grad(model, batch, true);
}

double empirical_loss(const TrainableModel& model, std::span<const PromptInstance> batch) {
    if (batch.empty()) throw DimensionMismatch("empty batch");
    if (model.variant() == TrainVariant::JointWithHeads)
        return full_loss_grad(model, batch, false).first;
    return reduced_loss_grad(model, batch, false).first;
}

Eigen::VectorXd loss_gradient(const TrainableModel& model,
                              std::span<const PromptInstance> batch) {
    return loss_and_gradient(model, batch).second;
}

AdamOptimizer::AdamOptimizer(Eigen::Index dim, const TrainConfig& cfg)
    : m_(Eigen::VectorXd::Zero(dim)),
      v_(Eigen::VectorXd::Zero(dim)),
      lr_(cfg.learning_rate),
      b1_(cfg.adam_beta1),
      b2_(cfg.adam_beta2),
      eps_(cfg.adam_eps) {}

void AdamOptimizer::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
    ++t_;
    m_ = b1_ * m_ + (1.0 - b1_) * grad;
    v_ = b2_ * v_ + (1.0 - b2_) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    params -= (lr_ / c1) * m_.cwiseQuotient(((v_ / c2).cwiseSqrt().array() + eps_).matrix());
}

RiskEstimate evaluate_risk(const std::function<double(const PromptInstance&)>& predictor,
                           const ProblemSpec& spec, long num_samples, RngStream& rng) {
    if (num_samples < 1000) throw DimensionMismatch("evaluate_risk: num_samples must be >= 1e3");
    const EpisodeSampler sampler(spec);

    std::vector<double> sums(kEvalShards, 0.0), sq_sums(kEvalShards, 0.0);
    parallel_for(kEvalShards, [&](int s) {
        RngStream stream = rng.substream(static_cast<std::uint64_t>(s));
        const long lo = num_samples * s / kEvalShards;
        const long hi = num_samples * (s + 1) / kEvalShards;
        PromptInstance inst;
        double sum = 0.0, sq = 0.0;
        for (long i = lo; i < hi; ++i) {
            const int k = sampler.sample_task(stream);
            sampler.sample_into(k, stream, inst);
            const double e = predictor(inst) - inst.target_y;
            const double se = e * e;
            sum += se;
            sq += se * se;
        }
        sums[s] = sum;
        sq_sums[s] = sq;
    });

    double sum = 0.0, sq = 0.0;
    for (int s = 0; s < kEvalShards; ++s) {  // fixed reduction order
        sum += sums[s];
        sq += sq_sums[s];
    }
    const double N = static_cast<double>(num_samples);
    RiskEstimate est;
    est.estimate = sum / N;
    const double var = std::max(0.0, sq / N - est.estimate * est.estimate) * N / (N - 1.0);
    est.stderr = std::sqrt(var / N);
    return est;
}

RiskEstimate evaluate_risk(const ReducedModel& model, const ProblemSpec& spec, long num_samples,
                           RngStream& rng) {
    return evaluate_risk([&](const PromptInstance& i) { return predict_reduced(model, i); },
                         spec, num_samples, rng);
}

RiskEstimate evaluate_risk(const FullModel& model, const ProblemSpec& spec, long num_samples,
                           RngStream& rng) {
    return evaluate_risk([&](const PromptInstance& i) { return predict_full(model, i); }, spec,
                         num_samples, rng);
}

RiskEstimate evaluate_risk(const TrainableModel& model, const ProblemSpec& spec,
                           long num_samples, RngStream& rng) {
    return evaluate_risk([&](const PromptInstance& i) { return model.predict(i); }, spec,
                         num_samples, rng);
}

TrainReport train(const ProblemSpec& spec, const TrainSetting& setting,
                  const TrainConfig& config) {
    validate_spec(spec);
    if (config.batch_size <= 0 || config.num_iters <= 0 || config.num_restarts <= 0)
        throw DimensionMismatch("batch_size, num_iters, num_restarts must be positive");
    if (!(config.adam_beta1 >= 0.0 && config.adam_beta1 < 1.0) ||
        !(config.adam_beta2 >= 0.0 && config.adam_beta2 < 1.0))
        throw DimensionMismatch("adam betas must lie in [0, 1)");

    TrainSetting resolved = setting;
    TrainReport report;
    if (setting.variant == TrainVariant::FineTuning) {
        if (resolved.frozen_W) {
            report.frozen_w_source = "provided";
        } else {
            resolved.frozen_W = solve_plain_training(spec).weight_W;
            report.frozen_w_source = "closed-form";
        }
    }

    const EpisodeSampler sampler(spec);
    const RngStream base(config.seed);

    struct RestartOutcome {
        double risk = std::numeric_limits<double>::infinity();
        double stderr = 0.0;
        bool diverged = false;
        std::string params_json;
    };
    std::vector<RestartOutcome> outcomes(config.num_restarts);

    // Risk at the restart-0 initialization, for descent sanity checks.
    {
        RngStream init_rng = base.substream(0);
        TrainableModel init_model = TrainableModel::create(spec, resolved);
        init_model.initialize(init_rng, config.init_scale);
        RngStream eval_rng = base.substream(0xFFFF0000ULL);
        const RiskEstimate e = evaluate_risk(init_model, spec, config.eval_samples, eval_rng);
        report.init_risk = e.estimate;
        report.init_risk_stderr = e.stderr;
    }

    // Restarts are independent; each owns substreams keyed by its index, so
    // the outcome is identical whether they run in parallel or not.
    parallel_for(config.num_restarts, [&](int r) {
        RngStream init_rng = base.substream(3 * static_cast<std::uint64_t>(r));
        RngStream batch_rng = base.substream(3 * static_cast<std::uint64_t>(r) + 1);
        RngStream eval_rng = base.substream(3 * static_cast<std::uint64_t>(r) + 2);

        TrainableModel model = TrainableModel::create(spec, resolved);
        model.initialize(init_rng, config.init_scale);
        AdamOptimizer adam(model.params().size(), config);

        std::vector<PromptInstance> batch(config.batch_size);
        RestartOutcome& out = outcomes[r];
        for (int it = 0; it < config.num_iters; ++it) {
            for (auto& inst : batch) {
                const int k = sampler.sample_task(batch_rng);
                sampler.sample_into(k, batch_rng, inst);
            }
            auto [loss, grad] = loss_and_gradient(model, batch);
            if (!std::isfinite(loss)) {
                out.diverged = true;  // recorded as +inf and skipped
                return;
            }
            adam.step(model.params(), grad);
        }
        const RiskEstimate e = evaluate_risk(model, spec, config.eval_samples, eval_rng);
        out.risk = e.estimate;
        out.stderr = e.stderr;
        out.params_json = model.to_json_string();
    });

    int best = -1;
    report.per_restart_risks.reserve(config.num_restarts);
    for (int r = 0; r < config.num_restarts; ++r) {
        report.per_restart_risks.push_back(outcomes[r].risk);
        if (outcomes[r].diverged) ++report.diverged_restarts;
        if (best < 0 || outcomes[r].risk < outcomes[best].risk) best = r;
    }
    if (outcomes[best].diverged || !std::isfinite(outcomes[best].risk))
        throw DivergenceDetected("every restart diverged");
    report.best_risk = outcomes[best].risk;
    report.risk_stderr = outcomes[best].stderr;
    report.final_params = outcomes[best].params_json;
    return report;
}

}  // namespace icl
