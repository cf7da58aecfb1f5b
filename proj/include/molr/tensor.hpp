#pragma once
#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "molr/rng.hpp"

namespace molr {

using Mat = Eigen::MatrixXd;

// Reverse-mode autodiff over dense 2-D matrices (row vectors and scalars are
// 1xN and 1x1). All values are double; that is all the toy model needs.
struct TensorNode {
    Mat val;
    Mat grad;                  // sized lazily on first accumulation
    bool requires_grad = false;
    bool grad_ready = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    // Propagates this node's grad into parents' grads.
    std::function<void(TensorNode&)> backward_fn;

    void accumulate(const Mat& g) {
        if (!grad_ready) {
            grad = Mat::Zero(val.rows(), val.cols());
            grad_ready = true;
        }
        grad += g;
    }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

    static Tensor leaf(Mat value, bool requires_grad);
    static Tensor constant(Mat value);
    static Tensor scalar(double v);
    static Tensor random_gaussian(Eigen::Index rows, Eigen::Index cols, double stddev,
                                  Rng& rng, bool requires_grad = true);
    static Tensor zeros(Eigen::Index rows, Eigen::Index cols, bool requires_grad = false);

    bool valid() const { return node_ != nullptr; }
    const Mat& value() const { return node_->val; }
    Mat& mutable_value() { return node_->val; }
    const Mat& grad() const;
    bool has_grad() const { return node_ && node_->grad_ready; }
    bool requires_grad() const { return node_->requires_grad; }
    Eigen::Index rows() const { return node_->val.rows(); }
    Eigen::Index cols() const { return node_->val.cols(); }
    double item() const;
    void zero_grad() { node_->grad_ready = false; }

    std::shared_ptr<TensorNode> node() const { return node_; }

private:
    std::shared_ptr<TensorNode> node_;
};

// When false, ops do not record parents/backward closures (inference mode).
class GradMode {
public:
    static bool enabled();
    static void set(bool on);
};

struct NoGradScope {
    NoGradScope() : prev_(GradMode::enabled()) { GradMode::set(false); }
    ~NoGradScope() { GradMode::set(prev_); }
private:
    bool prev_;
};

// ---- ops ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);     // elementwise
Tensor scale(const Tensor& a, double s);
Tensor transpose(const Tensor& a);
Tensor slice_cols(const Tensor& a, Eigen::Index start, Eigen::Index n);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor sum(const Tensor& a);                      // -> 1x1
Tensor mean(const Tensor& a);                     // -> 1x1
Tensor gelu(const Tensor& a);
// axis: 1 = along each row (default), 0 = along each column
Tensor softmax(const Tensor& a, int axis = 1);
// gain is 1xN, applied per row after normalization
Tensor rms_norm_rows(const Tensor& a, const Tensor& gain, double eps = 1e-6);
// 1xN gain broadcast-multiplied over rows of a
Tensor row_broadcast_mul(const Tensor& a, const Tensor& g);
// gather rows `ids` of `table` (backward scatters)
Tensor embed_rows(const Tensor& table, const std::vector<int>& ids);
// mean negative log-likelihood of targets under row-wise softmax(logits),
// restricted to positions where mask[t] is true
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                     const std::vector<bool>& mask);
// 1xT tensor of log softmax(logits)[t, ids[t]]
Tensor picked_log_probs(const Tensor& logits, const std::vector<int>& ids);

void backward(const Tensor& loss);

// ---- optimizer ----
struct AdamState {
    std::vector<Mat> m, v;
    long step = 0;
};

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Applies one Adam update with bias correction to every param that has a
// gradient; params without grads are skipped. Grad clipping by global norm
// when clip_norm > 0.
void adam_step(std::vector<Tensor>& params, AdamState& state, const AdamConfig& cfg,
               double clip_norm = 0.0);

} // namespace molr
