// Empirical-risk training for the four settings: plain training (W only),
// prompt fine-tuning (P only, W frozen), joint training (W and P), and the
// full attention stack with task prompts and task heads. Hand-written Adam,
// analytic backward passes, restart protocol, and sharded Monte-Carlo risk
// evaluation.
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "icl/predictors.hpp"
#include "icl/problem_spec.hpp"
#include "icl/rng.hpp"

namespace icl {

struct TrainConfig {
    double learning_rate = 1e-3;
    int batch_size = 8192;
    int num_iters = 20000;
    int num_restarts = 50;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double init_scale = 1e-2;
    std::uint64_t seed = 0;
    // Per-restart Monte-Carlo test-set size for the reported risk.
    long eval_samples = 100000;
};

enum class TrainVariant { PlainTraining, FineTuning, JointTraining, JointWithHeads };

const char* variant_name(TrainVariant v);

struct TrainSetting {
    TrainVariant variant = TrainVariant::PlainTraining;
    int depth_L = 1;  // attention stack depth for JointWithHeads
    // FineTuning freezes W here; when absent the exact closed-form optimum
    // is used and recorded in the report.
    std::optional<Matrix> frozen_W;
};

// Trainable parameters for one setting, stored flat for the optimizer with
// typed unpacking for prediction and serialization.
class TrainableModel {
  public:
    static TrainableModel create(const ProblemSpec& spec, const TrainSetting& setting);

    // Entrywise N(0, scale^2); FineTuning starts its prompts at zero.
    void initialize(RngStream& rng, double scale);

    double predict(const PromptInstance& inst) const;

    Eigen::VectorXd& params() { return params_; }
    const Eigen::VectorXd& params() const { return params_; }

    TrainVariant variant() const { return variant_; }
    int dim() const { return d_; }
    int num_tasks() const { return K_; }
    int depth() const { return L_; }

    ReducedModel reduced() const;  // PlainTraining / FineTuning / JointTraining
    FullModel full() const;        // JointWithHeads

    std::string to_json_string() const;

  private:
    TrainVariant variant_ = TrainVariant::PlainTraining;
    int d_ = 0, K_ = 0, L_ = 1;
    Matrix frozen_W_;  // FineTuning only
    Eigen::VectorXd params_;

    friend double empirical_loss(const TrainableModel&, std::span<const PromptInstance>);
    friend Eigen::VectorXd loss_gradient(const TrainableModel&, std::span<const PromptInstance>);
    friend std::pair<double, Eigen::VectorXd> loss_and_gradient(
        const TrainableModel&, std::span<const PromptInstance>);
};

// Mean squared prediction error over the batch.
double empirical_loss(const TrainableModel& model, std::span<const PromptInstance> batch);

// Exact gradient of empirical_loss w.r.t. the flat trainable parameters.
Eigen::VectorXd loss_gradient(const TrainableModel& model, std::span<const PromptInstance> batch);

std::pair<double, Eigen::VectorXd> loss_and_gradient(const TrainableModel& model,
                                                     std::span<const PromptInstance> batch);

class AdamOptimizer {
  public:
    AdamOptimizer(Eigen::Index dim, const TrainConfig& cfg);
    void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad);

  private:
    Eigen::VectorXd m_, v_;
    double lr_, b1_, b2_, eps_;
    long t_ = 0;
};

struct TrainReport {
    double best_risk = 0.0;  // min over restarts (diverged restarts count as +inf)
    std::vector<double> per_restart_risks;
    std::string final_params;  // JSON document of the best restart's model
    double risk_stderr = 0.0;
    double init_risk = 0.0;  // Monte-Carlo risk at the restart-0 initialization
    double init_risk_stderr = 0.0;
    int diverged_restarts = 0;
    std::string frozen_w_source;  // "closed-form" | "provided" (FineTuning only)
};

TrainReport train(const ProblemSpec& spec, const TrainSetting& setting, const TrainConfig& config);

struct RiskEstimate {
    double estimate = 0.0;
    double stderr = 0.0;
};

// Sample mean and standard error of the squared prediction error over fresh
// episodes with task frequencies pi. Sharded over a fixed 64-way layout, so
// the result depends only on (spec, num_samples, rng), never on threads.
RiskEstimate evaluate_risk(const std::function<double(const PromptInstance&)>& predictor,
                           const ProblemSpec& spec, long num_samples, RngStream& rng);
RiskEstimate evaluate_risk(const ReducedModel& model, const ProblemSpec& spec, long num_samples,
                           RngStream& rng);
RiskEstimate evaluate_risk(const FullModel& model, const ProblemSpec& spec, long num_samples,
                           RngStream& rng);
RiskEstimate evaluate_risk(const TrainableModel& model, const ProblemSpec& spec, long num_samples,
                           RngStream& rng);

}  // namespace icl
