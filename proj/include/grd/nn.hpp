#pragma once

#include "grd/autodiff.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

namespace grd {

enum class Activation { ReLU };

struct MlpConfig {
    std::vector<int> layer_dims;  // input, hidden..., output
    Activation activation = Activation::ReLU;
    std::uint64_t seed = 0;
    /// Apply the activation after the last layer as well.
    bool activate_output = false;
};

/// Fully connected network. Parameters are stored as W0, b0, W1, b1, ...
/// with W_l of shape (layer_dims[l], layer_dims[l+1]) and b_l a 1 x out row.
class Mlp {
public:
    Mlp() = default;
    /// Glorot-uniform weights from `config.seed`, zero biases.
    explicit Mlp(MlpConfig config);

    Matrix forward(const Matrix& x) const;
    ad::Var forward(ad::Var x, std::span<const ad::Var> params) const;

    /// Registers the parameters as leaves on `tape`, in parameters() order.
    std::vector<ad::Var> bind(ad::Tape& tape) const;

    std::vector<Matrix*> parameters();
    std::vector<const Matrix*> parameters() const;
    std::size_t parameter_count() const { return 2 * weights_.size(); }

    int in_dim() const { return config_.layer_dims.front(); }
    int out_dim() const { return config_.layer_dims.back(); }
    const MlpConfig& config() const { return config_; }

    Matrix& weight(std::size_t layer) { return weights_.at(layer); }
    Matrix& bias(std::size_t layer) { return biases_.at(layer); }

private:
    MlpConfig config_;
    std::vector<Matrix> weights_;
    std::vector<Matrix> biases_;
};

struct AdamOptions {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    /// Optional L2 penalty coefficient; adds l2 * w to every gradient.
    double l2 = 0.0;
};

/// Adam over a fixed list of parameter matrices.
class Adam {
public:
    Adam() = default;
    Adam(std::vector<Matrix*> params, AdamOptions options);

    /// One update. Throws ShapeError on mismatched shapes and NumericError on
    /// non-finite gradients (parameters are left untouched in both cases).
    void step(std::span<const Matrix> grads);

    long step_count() const { return step_; }
    const AdamOptions& options() const { return options_; }
    void set_learning_rate(double lr) { options_.learning_rate = lr; }

private:
    std::vector<Matrix*> params_;
    std::vector<Matrix> first_;
    std::vector<Matrix> second_;
    AdamOptions options_;
    long step_ = 0;
};

/// Tracks the best training loss and counts epochs without improvement.
class EarlyStopping {
public:
    explicit EarlyStopping(int patience, double min_delta = 0.0)
        : patience_(patience), min_delta_(min_delta) {}

    /// Returns true if training should stop after this epoch.
    bool update(double loss);
    bool improved() const { return improved_; }
    double best() const { return best_; }

private:
    int patience_;
    double min_delta_;
    double best_ = std::numeric_limits<double>::infinity();
    int bad_epochs_ = 0;
    bool improved_ = false;
};

/// Snapshot/restore of a parameter list (used to keep the best epoch).
std::vector<Matrix> snapshot(std::span<Matrix* const> params);
void restore(std::span<Matrix* const> params, std::span<const Matrix> values);

nlohmann::json mlp_to_json(const Mlp& mlp);
Mlp mlp_from_json(const nlohmann::json& j);

}  // namespace grd
