#ifndef IMAP_NN_HPP
#define IMAP_NN_HPP

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "imap/common.hpp"

namespace imap {

/// Dimensions of one dense segment (a weight matrix or a bias column) inside a ParameterBlock.
struct SegmentShape {
    std::size_t rows = 0;
    std::size_t cols = 0;

    [[nodiscard]] std::size_t size() const noexcept { return rows * cols; }
    bool operator==(const SegmentShape&) const = default;
};

/**
 * Flat storage for the parameters of one approximator.
 *
 * Values are laid out segment after segment; each segment is a column-major matrix described by
 * the matching entry in `shapes`. Gradients use the same type (an adjoint block has the same
 * shapes as the parameters it belongs to).
 */
struct ParameterBlock {
    std::vector<double> values;
    std::vector<SegmentShape> shapes;

    ParameterBlock() = default;
    explicit ParameterBlock(std::vector<SegmentShape> segment_shapes) : shapes(std::move(segment_shapes))
    {
        std::size_t total = 0;
        for(const auto& s : shapes) {
            total += s.size();
        }
        values.assign(total, 0.0);
    }

    [[nodiscard]] static ParameterBlock zeros_like(const ParameterBlock& other)
    {
        return ParameterBlock(other.shapes);
    }

    [[nodiscard]] std::size_t size() const noexcept { return values.size(); }

    [[nodiscard]] bool consistent() const noexcept
    {
        std::size_t total = 0;
        for(const auto& s : shapes) {
            total += s.size();
        }
        return total == values.size();
    }

    [[nodiscard]] bool finite() const noexcept { return all_finite(values); }

    [[nodiscard]] bool same_layout(const ParameterBlock& other) const noexcept
    {
        return shapes == other.shapes && values.size() == other.values.size();
    }

    void zero() noexcept { std::fill(values.begin(), values.end(), 0.0); }

    [[nodiscard]] double squared_norm() const noexcept
    {
        return std::inner_product(values.begin(), values.end(), values.begin(), 0.0);
    }

    void scale(double factor) noexcept
    {
        for(double& v : values) {
            v *= factor;
        }
    }

    /// this += factor * other
    void add_scaled(const ParameterBlock& other, double factor)
    {
        if(!same_layout(other)) {
            throw DimensionError("ParameterBlock::add_scaled: layout mismatch");
        }
        for(std::size_t k = 0; k < values.size(); ++k) {
            values[k] += factor * other.values[k];
        }
    }

    /// Offset of segment `index` in the flat array.
    [[nodiscard]] std::size_t offset(std::size_t index) const
    {
        std::size_t off = 0;
        for(std::size_t k = 0; k < index; ++k) {
            off += shapes.at(k).size();
        }
        return off;
    }

    [[nodiscard]] Eigen::Map<Matrix> segment(std::size_t index)
    {
        const auto& s = shapes.at(index);
        return {values.data() + offset(index), static_cast<Eigen::Index>(s.rows), static_cast<Eigen::Index>(s.cols)};
    }

    [[nodiscard]] Eigen::Map<const Matrix> segment(std::size_t index) const
    {
        const auto& s = shapes.at(index);
        return {values.data() + offset(index), static_cast<Eigen::Index>(s.rows), static_cast<Eigen::Index>(s.cols)};
    }
};

/// Activations recorded by a forward pass, consumed by Mlp::backward.
struct Tape {
    std::vector<Matrix> activations;  // activations[0] is the input batch, the last one the output
    bool recorded = false;

    void clear()
    {
        activations.clear();
        recorded = false;
    }
};

/**
 * Dense multilayer perceptron: tanh on hidden layers, identity on the output layer.
 *
 * Inputs are batched column-wise (one sample per column). Evaluation is const and thread-safe on a
 * shared instance; gradients are accumulated into a caller-owned ParameterBlock.
 */
class Mlp {
  public:
    Mlp() = default;

    /// Zero-initialized network; `layer_sizes` = {input, hidden..., output}.
    explicit Mlp(std::vector<std::size_t> layer_sizes) : sizes_(std::move(layer_sizes))
    {
        if(sizes_.size() < 2) {
            throw DimensionError("Mlp needs at least an input and an output size");
        }
        std::vector<SegmentShape> shapes;
        for(std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
            if(sizes_[l] == 0 || sizes_[l + 1] == 0) {
                throw DimensionError("Mlp layer sizes must be positive");
            }
            shapes.push_back({sizes_[l + 1], sizes_[l]});
            shapes.push_back({sizes_[l + 1], 1});
        }
        params_ = ParameterBlock(std::move(shapes));
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases; the last layer's weights are
    /// multiplied by `output_scale`.
    [[nodiscard]] static Mlp random(std::vector<std::size_t> layer_sizes, Rng& rng, double output_scale = 1.0)
    {
        Mlp net(std::move(layer_sizes));
        const std::size_t n_layers = net.layer_count();
        for(std::size_t l = 0; l < n_layers; ++l) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(net.sizes_[l]));
            std::uniform_real_distribution<double> dist(-bound, bound);
            auto w = net.params_.segment(2 * l);
            const double scale = (l + 1 == n_layers) ? output_scale : 1.0;
            for(Eigen::Index c = 0; c < w.cols(); ++c) {
                for(Eigen::Index r = 0; r < w.rows(); ++r) {
                    w(r, c) = scale * dist(rng);
                }
            }
        }
        return net;
    }

    [[nodiscard]] std::size_t input_size() const noexcept { return sizes_.empty() ? 0 : sizes_.front(); }
    [[nodiscard]] std::size_t output_size() const noexcept { return sizes_.empty() ? 0 : sizes_.back(); }
    [[nodiscard]] std::size_t layer_count() const noexcept { return sizes_.empty() ? 0 : sizes_.size() - 1; }
    [[nodiscard]] const std::vector<std::size_t>& layer_sizes() const noexcept { return sizes_; }

    [[nodiscard]] ParameterBlock& parameters() noexcept { return params_; }
    [[nodiscard]] const ParameterBlock& parameters() const noexcept { return params_; }

    [[nodiscard]] Vector forward(std::span<const double> input) const
    {
        check_input(input.size());
        Matrix x = Eigen::Map<const Matrix>(input.data(), static_cast<Eigen::Index>(input.size()), 1);
        return forward_batch(x).col(0);
    }

    [[nodiscard]] Matrix forward_batch(const Matrix& inputs) const
    {
        check_input(static_cast<std::size_t>(inputs.rows()));
        Matrix a = inputs;
        const std::size_t n_layers = layer_count();
        for(std::size_t l = 0; l < n_layers; ++l) {
            Matrix z = params_.segment(2 * l) * a;
            z.colwise() += params_.segment(2 * l + 1).col(0);
            if(l + 1 < n_layers) {
                a = z.array().tanh().matrix();
            } else {
                a = std::move(z);
            }
        }
        return a;
    }

    /// Forward pass that records the activations needed by backward().
    Matrix forward_batch(const Matrix& inputs, Tape& tape) const
    {
        check_input(static_cast<std::size_t>(inputs.rows()));
        tape.activations.clear();
        tape.activations.reserve(layer_count() + 1);
        tape.activations.push_back(inputs);
        const std::size_t n_layers = layer_count();
        for(std::size_t l = 0; l < n_layers; ++l) {
            Matrix z = params_.segment(2 * l) * tape.activations.back();
            z.colwise() += params_.segment(2 * l + 1).col(0);
            if(l + 1 < n_layers) {
                tape.activations.push_back(z.array().tanh().matrix());
            } else {
                tape.activations.push_back(std::move(z));
            }
        }
        tape.recorded = true;
        return tape.activations.back();
    }

    /**
     * Accumulates d(objective)/d(parameters) into `grad` given `upstream` = d(objective)/d(output)
     * for the batch recorded in `tape`; returns d(objective)/d(input).
     */
    Matrix backward(const Tape& tape, const Matrix& upstream, ParameterBlock& grad) const
    {
        if(!tape.recorded || tape.activations.size() != layer_count() + 1) {
            throw PreconditionError("Mlp::backward called without a recorded forward pass");
        }
        if(!grad.same_layout(params_)) {
            throw DimensionError("Mlp::backward: gradient block layout does not match the network");
        }
        const Matrix& out = tape.activations.back();
        if(upstream.rows() != out.rows() || upstream.cols() != out.cols()) {
            throw DimensionError("Mlp::backward: upstream shape does not match the recorded output");
        }
        Matrix delta = upstream;
        for(std::size_t l = layer_count(); l-- > 0;) {
            const Matrix& a_prev = tape.activations[l];
            grad.segment(2 * l).noalias() += delta * a_prev.transpose();
            grad.segment(2 * l + 1).col(0) += delta.rowwise().sum();
            Matrix back = params_.segment(2 * l).transpose() * delta;
            if(l > 0) {
                // tanh'(z) = 1 - tanh(z)^2, and a_prev holds tanh(z) for hidden layers
                delta = (back.array() * (1.0 - a_prev.array().square())).matrix();
            } else {
                delta = std::move(back);
            }
        }
        return delta;
    }

  private:
    void check_input(std::size_t n) const
    {
        if(sizes_.empty()) {
            throw DimensionError("Mlp is empty");
        }
        if(n != input_size()) {
            throw DimensionError(
                "Mlp input has " + std::to_string(n) + " entries, expected " + std::to_string(input_size()));
        }
    }

    std::vector<std::size_t> sizes_;
    ParameterBlock params_;
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// First/second moment estimates for one ParameterBlock.
struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::int64_t step = 0;
};

/// One Adam update; a gradient holding NaN or inf aborts the step before anything is modified.
inline void adam_step(
    ParameterBlock& params, const ParameterBlock& grad, AdamState& state, double lr, const AdamConfig& cfg = {})
{
    if(!params.same_layout(grad)) {
        throw DimensionError("adam_step: gradient layout does not match parameters");
    }
    if(!grad.finite()) {
        throw NumericError("adam_step: non-finite gradient, step aborted");
    }
    if(state.m.empty()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    } else if(state.m.size() != params.size()) {
        throw DimensionError("adam_step: optimizer state does not match parameters");
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for(std::size_t k = 0; k < params.size(); ++k) {
        const double g = grad.values[k];
        state.m[k] = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * g;
        state.v[k] = cfg.beta2 * state.v[k] + (1.0 - cfg.beta2) * g * g;
        const double m_hat = state.m[k] / bc1;
        const double v_hat = state.v[k] / bc2;
        params.values[k] -= lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
}

/// Rescales the gradients so their joint L2 norm is at most `max_norm`; returns the norm before clipping.
inline double clip_grad_norm(std::span<ParameterBlock* const> grads, double max_norm)
{
    double sq = 0.0;
    for(const auto* g : grads) {
        sq += g->squared_norm();
    }
    const double norm = std::sqrt(sq);
    if(max_norm > 0 && norm > max_norm) {
        const double factor = max_norm / (norm + 1e-12);
        for(auto* g : grads) {
            g->scale(factor);
        }
    }
    return norm;
}

/// Adam over a fixed list of parameter blocks, one moment state per block.
class AdamOptimizer {
  public:
    AdamOptimizer() = default;
    explicit AdamOptimizer(AdamConfig cfg) : cfg_(cfg) {}

    void step(std::span<ParameterBlock* const> params, std::span<const ParameterBlock* const> grads, double lr)
    {
        if(params.size() != grads.size()) {
            throw DimensionError("AdamOptimizer::step: parameter and gradient lists differ in length");
        }
        for(const auto* g : grads) {
            if(!g->finite()) {
                throw NumericError("AdamOptimizer::step: non-finite gradient, step aborted");
            }
        }
        if(states_.size() < params.size()) {
            states_.resize(params.size());
        }
        for(std::size_t k = 0; k < params.size(); ++k) {
            adam_step(*params[k], *grads[k], states_[k], lr, cfg_);
        }
    }

    [[nodiscard]] const std::vector<AdamState>& states() const noexcept { return states_; }

  private:
    AdamConfig cfg_;
    std::vector<AdamState> states_;
};

}  // namespace imap

#endif  // IMAP_NN_HPP
