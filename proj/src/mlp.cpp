#include "bestn/mlp.hpp"

#include <cmath>

#include "bestn/error.hpp"

namespace bestn {

namespace {

using Eigen::ArrayXd;
using Eigen::Map;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// log(1 + exp(x)) without overflow.
double softplus(double x) {
    return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Eigen's vectorized loops peel a scalar head whose length depends on the
// operand address, and the head and the packet body may round differently.
// Everything is therefore computed on owned, aligned copies and only
// copied in and out of the flat parameter vectors, so training is bitwise
// reproducible run to run.
template <class T>
T owned(const std::vector<double>& flat, std::size_t offset, std::size_t n) {
    return Map<const T>(flat.data() + offset, static_cast<Eigen::Index>(n));
}

template <class T>
void store(const T& value, std::vector<double>& flat, std::size_t offset) {
    std::copy(value.data(), value.data() + value.size(), flat.begin() + static_cast<std::ptrdiff_t>(offset));
}

}  // namespace

struct Mlp::LayerView {
    std::size_t in = 0;
    std::size_t out = 0;
    std::size_t w = 0;      // offset of W
    std::size_t b = 0;      // offset of bias
    std::size_t gamma = 0;  // offsets of BN affine terms (valid if bn)
    std::size_t beta = 0;
    std::size_t rmean = 0;  // buffer offsets (valid if bn)
    std::size_t rvar = 0;
    bool bn = false;
};

std::size_t parameter_count(const MlpShape& shape) {
    std::size_t n = 0;
    std::size_t in = shape.input_dim;
    for (auto h : shape.hidden) {
        n += h * in + h + (shape.batch_norm ? 2 * h : 0);
        in = h;
    }
    return n + in + 1;
}

std::size_t buffer_count(const MlpShape& shape) {
    if (!shape.batch_norm) return 0;
    std::size_t n = 0;
    for (auto h : shape.hidden) n += 2 * h;
    return n;
}

Mlp::Mlp(MlpShape shape) : shape_(std::move(shape)) {
    if (shape_.input_dim == 0) throw UsageError("MLP input dim must be positive");
    for (auto h : shape_.hidden) {
        if (h == 0) throw UsageError("MLP hidden widths must be positive");
    }
    params_.assign(parameter_count(shape_), 0.0);
    buffers_.assign(buffer_count(shape_), 0.0);
    for (std::size_t l = 0; l < shape_.hidden.size(); ++l) {
        if (!shape_.batch_norm) break;
        const auto v = layer(l);
        std::fill_n(buffers_.begin() + static_cast<std::ptrdiff_t>(v.rvar), v.out, 1.0);
    }
}

Eigen::MatrixXd Mlp::weight(const LayerView& v) const {
    return Map<const MatrixXd>(params_.data() + v.w, static_cast<Eigen::Index>(v.out), static_cast<Eigen::Index>(v.in));
}

Mlp::LayerView Mlp::layer(std::size_t l) const {
    LayerView v;
    std::size_t p = 0;
    std::size_t buf = 0;
    std::size_t in = shape_.input_dim;
    for (std::size_t i = 0; i <= shape_.hidden.size(); ++i) {
        const bool output = i == shape_.hidden.size();
        const std::size_t out = output ? 1 : shape_.hidden[i];
        v.in = in;
        v.out = out;
        v.w = p;
        v.b = p + out * in;
        v.bn = !output && shape_.batch_norm;
        v.gamma = v.b + out;
        v.beta = v.gamma + out;
        v.rmean = buf;
        v.rvar = buf + out;
        if (i == l) return v;
        p += out * in + out + (v.bn ? 2 * out : 0);
        buf += v.bn ? 2 * out : 0;
        in = out;
    }
    return v;
}

void Mlp::init_glorot(Rng& rng) {
    std::fill(params_.begin(), params_.end(), 0.0);
    for (std::size_t l = 0; l <= shape_.hidden.size(); ++l) {
        const auto v = layer(l);
        const double limit = std::sqrt(6.0 / static_cast<double>(v.in + v.out));
        for (std::size_t i = 0; i < v.in * v.out; ++i) {
            params_[v.w + i] = (2.0 * uniform01(rng) - 1.0) * limit;
        }
        if (v.bn) std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(v.gamma), v.out, 1.0);
    }
}

DropoutMasks Mlp::sample_masks(std::size_t batch, double input_dropout, double dropout, Rng& rng) const {
    auto draw = [&](std::size_t rows, double p) {
        MatrixXd m(rows, batch);
        const double keep = 1.0 / (1.0 - p);
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = uniform01(rng) < p ? 0.0 : keep;
        }
        return m;
    };
    DropoutMasks masks;
    if (input_dropout > 0.0) masks.input = draw(shape_.input_dim, input_dropout);
    masks.hidden.resize(shape_.hidden.size());
    if (dropout > 0.0) {
        for (std::size_t l = 0; l < shape_.hidden.size(); ++l) masks.hidden[l] = draw(shape_.hidden[l], dropout);
    }
    return masks;
}

VectorXd Mlp::logits(const MatrixXd& inputs) const {
    if (static_cast<std::size_t>(inputs.rows()) != shape_.input_dim) {
        throw UsageError("input dimension " + std::to_string(inputs.rows()) + " does not match scorer dimension " +
                         std::to_string(shape_.input_dim));
    }
    MatrixXd a = inputs;
    for (std::size_t l = 0; l <= shape_.hidden.size(); ++l) {
        const auto v = layer(l);
        const MatrixXd w = weight(v);
        const VectorXd b = owned<VectorXd>(params_, v.b, v.out);
        MatrixXd z = w * a;
        z.colwise() += b;
        if (l == shape_.hidden.size()) return z.row(0).transpose();
        if (v.bn) {
            const ArrayXd gamma = owned<ArrayXd>(params_, v.gamma, v.out);
            const ArrayXd beta = owned<ArrayXd>(params_, v.beta, v.out);
            const ArrayXd rmean = owned<ArrayXd>(buffers_, v.rmean, v.out);
            const ArrayXd rvar = owned<ArrayXd>(buffers_, v.rvar, v.out);
            const ArrayXd scale = gamma / (rvar + kBatchNormEps).sqrt();
            const ArrayXd shift = beta - rmean * scale;
            z = ((z.array().colwise() * scale).colwise() + shift).matrix();
        }
        a = z.cwiseMax(0.0);
    }
    return {};
}

double Mlp::logit(std::span<const double> input) const {
    Map<const VectorXd> x(input.data(), static_cast<Eigen::Index>(input.size()));
    return logits(MatrixXd(x))(0);
}

double Mlp::loss(const MatrixXd& inputs, std::span<const double> labels, double pos_weight,
                 const DropoutMasks* masks, std::vector<double>* grad, bool update_running_stats) {
    const auto batch = inputs.cols();
    if (static_cast<std::size_t>(inputs.rows()) != shape_.input_dim) {
        throw UsageError("input dimension does not match scorer dimension");
    }
    if (static_cast<std::size_t>(batch) != labels.size() || batch == 0) {
        throw UsageError("batch size and label count differ");
    }
    const std::size_t depth = shape_.hidden.size();

    // Forward, caching what the backward pass needs.
    std::vector<MatrixXd> acts(depth + 1);     // input to each Linear
    std::vector<MatrixXd> pre_relu(depth);     // value fed to ReLU
    std::vector<MatrixXd> normalized(depth);   // BN x-hat
    std::vector<ArrayXd> inv_std(depth);
    acts[0] = inputs;
    if (masks && masks->input.size() > 0) acts[0] = acts[0].cwiseProduct(masks->input);
    MatrixXd z;
    for (std::size_t l = 0; l <= depth; ++l) {
        const auto v = layer(l);
        const MatrixXd w = weight(v);
        const VectorXd b = owned<VectorXd>(params_, v.b, v.out);
        z = w * acts[l];
        z.colwise() += b;
        if (l == depth) break;
        if (v.bn) {
            const VectorXd mean = z.rowwise().mean();
            MatrixXd centered = z.colwise() - mean;
            const VectorXd var = centered.array().square().rowwise().mean();
            inv_std[l] = (var.array() + kBatchNormEps).rsqrt();
            normalized[l] = centered.array().colwise() * inv_std[l];
            const ArrayXd gamma = owned<ArrayXd>(params_, v.gamma, v.out);
            const ArrayXd beta = owned<ArrayXd>(params_, v.beta, v.out);
            z = ((normalized[l].array().colwise() * gamma).colwise() + beta).matrix();
            if (update_running_stats) {
                const ArrayXd rmean = owned<ArrayXd>(buffers_, v.rmean, v.out);
                const ArrayXd rvar = owned<ArrayXd>(buffers_, v.rvar, v.out);
                const double unbias = batch > 1 ? static_cast<double>(batch) / static_cast<double>(batch - 1) : 1.0;
                store(ArrayXd((1.0 - kBatchNormMomentum) * rmean + kBatchNormMomentum * mean.array()), buffers_, v.rmean);
                store(ArrayXd((1.0 - kBatchNormMomentum) * rvar + kBatchNormMomentum * unbias * var.array()), buffers_,
                      v.rvar);
            }
        }
        pre_relu[l] = z;
        acts[l + 1] = z.cwiseMax(0.0);
        if (masks && l < masks->hidden.size() && masks->hidden[l].size() > 0) {
            acts[l + 1] = acts[l + 1].cwiseProduct(masks->hidden[l]);
        }
    }

    const double inv_batch = 1.0 / static_cast<double>(batch);
    double total = 0.0;
    MatrixXd delta(1, batch);  // dL/dz at the output
    for (Eigen::Index i = 0; i < batch; ++i) {
        const double y = labels[static_cast<std::size_t>(i)];
        const double logit = z(0, i);
        total += pos_weight * y * softplus(-logit) + (1.0 - y) * softplus(logit);
        const double s = sigmoid(logit);
        delta(0, i) = (pos_weight * y * (s - 1.0) + (1.0 - y) * s) * inv_batch;
    }
    const double mean_loss = total * inv_batch;
    if (!grad) return mean_loss;

    grad->assign(params_.size(), 0.0);
    for (std::size_t l = depth + 1; l-- > 0;) {
        const auto v = layer(l);
        store(MatrixXd(delta * acts[l].transpose()), *grad, v.w);
        store(VectorXd(delta.rowwise().sum()), *grad, v.b);
        if (l == 0) break;
        // Propagate into hidden layer l-1's output.
        const MatrixXd w = weight(v);
        MatrixXd d_act = w.transpose() * delta;
        const std::size_t h = l - 1;
        if (masks && h < masks->hidden.size() && masks->hidden[h].size() > 0) {
            d_act = d_act.cwiseProduct(masks->hidden[h]);
        }
        MatrixXd d_pre = (pre_relu[h].array() > 0.0).select(d_act, 0.0);
        const auto vh = layer(h);
        if (vh.bn) {
            const ArrayXd gamma = owned<ArrayXd>(params_, vh.gamma, vh.out);
            store(VectorXd(d_pre.cwiseProduct(normalized[h]).rowwise().sum()), *grad, vh.gamma);
            store(VectorXd(d_pre.rowwise().sum()), *grad, vh.beta);
            const MatrixXd d_norm = d_pre.array().colwise() * gamma;
            const VectorXd sum_d = d_norm.rowwise().sum();
            const VectorXd sum_dx = d_norm.cwiseProduct(normalized[h]).rowwise().sum();
            const double n = static_cast<double>(batch);
            MatrixXd centered = (n * d_norm).colwise() - sum_d;
            centered -= (normalized[h].array().colwise() * sum_dx.array()).matrix();
            delta = (centered.array().colwise() * (inv_std[h] / n)).matrix();
        } else {
            delta = std::move(d_pre);
        }
    }
    return mean_loss;
}

}  // namespace bestn
