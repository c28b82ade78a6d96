#include "icl/predictors.hpp"

#include <Eigen/LU>
#include <cmath>

#include "icl/errors.hpp"

namespace icl {
namespace {

void check_task(const Matrix& table, const PromptInstance& inst, const char* what) {
    if (inst.task_index < 0 || inst.task_index >= table.rows())
        throw DimensionMismatch(std::string(what) + ": task_index out of range");
}

// Token matrix for one instance: (n+2) x (d+1).
Matrix build_tokens(const Vector& prompt_token, const PromptInstance& inst) {
    const auto n = inst.context_X.rows();
    const auto d = inst.context_X.cols();
    if (prompt_token.size() != d + 1)
        throw DimensionMismatch("prompt token length must be d+1");
    if (inst.context_y.size() != n || inst.query_x.size() != d)
        throw DimensionMismatch("instance shapes are inconsistent");
    Matrix Z(n + 2, d + 1);
    Z.row(0) = prompt_token.transpose();
    Z.block(1, 0, n, d) = inst.context_X;
    Z.col(d).segment(1, n) = inst.context_y;
    Z.row(n + 1).head(d) = inst.query_x.transpose();
    Z(n + 1, d) = 0.0;
    return Z;
}

// (Z A Z') M Z Wv with M = diag(I_{n+1}, 0): the query row contributes
// nothing to the value aggregation.
Matrix attention_output(const FullAttentionLayer& layer, const Matrix& Z) {
    const Matrix A = layer.w_query * layer.w_key.transpose();
    Matrix scores = Z * A * Z.transpose();
    scores.col(scores.cols() - 1).setZero();  // mask
    return scores * Z * layer.w_value;
}

}  // namespace

double predict_reduced(const ReducedModel& model, const PromptInstance& inst) {
    check_task(model.prompts, inst, "predict_reduced");
    const auto d = inst.context_X.cols();
    if (model.weight_W.rows() != d || model.weight_W.cols() != d)
        throw DimensionMismatch("predict_reduced: W must be d x d");
    const Vector aggregated = inst.context_X.transpose() * inst.context_y +
                              model.prompts.row(inst.task_index).transpose();
    return inst.query_x.dot(model.weight_W * aggregated);
}

double predict_full(const FullModel& model, const PromptInstance& inst) {
    if (model.layers.empty()) throw DimensionMismatch("predict_full: model needs >= 1 layer");
    check_task(model.prompt_tokens, inst, "predict_full");
    const auto d = inst.context_X.cols();
    for (const auto& layer : model.layers)
        if (layer.w_query.rows() != d + 1 || layer.w_query.cols() != d + 1 ||
            layer.w_key.rows() != d + 1 || layer.w_value.rows() != d + 1)
            throw DimensionMismatch("predict_full: layer weights must be (d+1) x (d+1)");

    Matrix Z = build_tokens(model.prompt_tokens.row(inst.task_index).transpose(), inst);
    const auto query = Z.rows() - 1;

    Vector head;
    if (model.task_heads) {
        check_task(*model.task_heads, inst, "predict_full heads");
        head = model.task_heads->row(inst.task_index).transpose();
    } else {
        head = Vector::Zero(d + 1);
        head[d] = 1.0;
    }

    if (model.layers.size() == 1)
        return attention_output(model.layers[0], Z).row(query).dot(head);
    for (const auto& layer : model.layers) Z += attention_output(layer, Z);
    return Z.row(query).dot(head);
}

double predict_pgd_debiased(const Matrix& W, const Vector& mu_k, const PromptInstance& inst) {
    const auto d = inst.context_X.cols();
    if (W.rows() != d || W.cols() != d || mu_k.size() != d)
        throw DimensionMismatch("predict_pgd_debiased: shape mismatch");
    const Vector residual = inst.context_y - inst.context_X * mu_k;
    return inst.query_x.dot(W * (inst.context_X.transpose() * residual)) +
           inst.query_x.dot(mu_k);
}

FullModel build_equivalent_attention(const Matrix& W, const Vector& mu_k) {
    const auto d = W.rows();
    if (W.cols() != d || mu_k.size() != d)
        throw DimensionMismatch("build_equivalent_attention: shape mismatch");
    Eigen::PartialPivLU<Matrix> lu(W);
    const double rcond = lu.rcond();
    if (!(rcond > 1e-12)) throw SingularW(1.0 / std::max(rcond, 1e-300));
    const Vector w_inv_mu = lu.solve(mu_k);

    FullModel model;
    FullAttentionLayer layer;
    layer.w_query = Matrix::Zero(d + 1, d + 1);
    layer.w_query.topLeftCorner(d, d) = W;
    layer.w_key = Matrix::Identity(d + 1, d + 1);
    layer.w_value = Matrix::Identity(d + 1, d + 1);
    model.layers.push_back(std::move(layer));

    model.prompt_tokens.resize(1, d + 1);
    model.prompt_tokens.row(0).head(d) = w_inv_mu.transpose();
    // mu' W^-T mu equals mu' W^-1 mu as a scalar.
    model.prompt_tokens(0, d) = mu_k.dot(w_inv_mu) + 1.0;

    Matrix heads(1, d + 1);
    heads.row(0).head(d) = -mu_k.transpose();
    heads(0, d) = 1.0;
    model.task_heads = heads;
    return model;
}

}  // namespace icl
