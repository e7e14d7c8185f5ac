#pragma once

// Shallow ReLU MLP with a single logit output, stored as one flat parameter
// vector so optimizers, gradient checks and serialization all see the same
// layout. Per hidden layer l, in order:
//
//   W_l  (h_l x in_l, column-major)   b_l (h_l)   [gamma_l (h_l)  beta_l (h_l)]
//
// followed by the output layer W_out (1 x in), b_out (1). The bracketed
// batch-norm affine terms exist only when batch norm is enabled; their
// running statistics are buffers, not parameters.
//
// Hidden block: Linear -> [BatchNorm] -> ReLU -> Dropout. Input dropout is
// applied to the features before the first Linear.

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "bestn/rng.hpp"

namespace bestn {

struct MlpShape {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden;
    bool batch_norm = false;

    bool operator==(const MlpShape&) const = default;
};

std::size_t parameter_count(const MlpShape& shape);
std::size_t buffer_count(const MlpShape& shape);  // running mean + var

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

// Inverted-dropout masks for one mini-batch: entries are 0 or 1/(1-p).
struct DropoutMasks {
    Eigen::MatrixXd input;               // input_dim x batch, empty = no dropout
    std::vector<Eigen::MatrixXd> hidden;  // per hidden layer, empty = no dropout
};

class Mlp {
public:
    Mlp() = default;
    explicit Mlp(MlpShape shape);  // all parameters zero, running var one

    const MlpShape& shape() const { return shape_; }

    std::span<double> params() { return params_; }
    std::span<const double> params() const { return params_; }
    std::span<double> buffers() { return buffers_; }
    std::span<const double> buffers() const { return buffers_; }

    // Glorot-uniform weights, zero biases, unit gamma, zero beta.
    void init_glorot(Rng& rng);

    DropoutMasks sample_masks(std::size_t batch, double input_dropout, double dropout, Rng& rng) const;

    // Inference mode: no dropout, batch norm uses running statistics.
    // `inputs` is input_dim x batch; returns one logit per column.
    Eigen::VectorXd logits(const Eigen::MatrixXd& inputs) const;
    double logit(std::span<const double> input) const;

    // Training-mode forward pass (batch statistics, optional dropout) and,
    // when `grad` is non-null, backward pass. Returns the mean over the batch
    // of the weighted logistic loss
    //   w * y * softplus(-z) + (1 - y) * softplus(z).
    // Running statistics are updated only when `update_running_stats`.
    double loss(const Eigen::MatrixXd& inputs, std::span<const double> labels, double pos_weight,
                const DropoutMasks* masks, std::vector<double>* grad, bool update_running_stats = false);

private:
    struct LayerView;
    LayerView layer(std::size_t l) const;
    Eigen::MatrixXd weight(const LayerView& v) const;

    MlpShape shape_;
    std::vector<double> params_;
    std::vector<double> buffers_;  // per BN layer: running mean (h), running var (h)
};

}  // namespace bestn
