#include "grd/nn.hpp"

#include "grd/rng.hpp"

#include <nlohmann/json.hpp>

#include <cmath>

namespace grd {

Mlp::Mlp(MlpConfig config) : config_(std::move(config)) {
    const auto& dims = config_.layer_dims;
    if (dims.size() < 2) throw std::invalid_argument("MlpConfig: need at least input and output dims");
    for (int d : dims) {
        if (d <= 0) throw std::invalid_argument("MlpConfig: layer dims must be positive");
    }
    Rng rng(config_.seed);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const double limit = std::sqrt(6.0 / static_cast<double>(dims[l] + dims[l + 1]));
        Matrix w(dims[l], dims[l + 1]);
        for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-limit, limit);
        weights_.push_back(std::move(w));
        biases_.push_back(Matrix::Zero(1, dims[l + 1]));
    }
}

Matrix Mlp::forward(const Matrix& x) const {
    if (x.cols() != in_dim()) {
        throw ShapeError("Mlp::forward: expected " + std::to_string(in_dim()) + " input columns, got " +
                         shape_string(x));
    }
    Matrix h = x;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        Matrix z = h * weights_[l];
        z.rowwise() += biases_[l].row(0);
        const bool last = l + 1 == weights_.size();
        if (!last || config_.activate_output) z = z.cwiseMax(0.0);
        h = std::move(z);
    }
    return h;
}

ad::Var Mlp::forward(ad::Var x, std::span<const ad::Var> params) const {
    if (x.cols() != in_dim()) {
        throw ShapeError("Mlp::forward: expected " + std::to_string(in_dim()) + " input columns, got " +
                         shape_string(x.value()));
    }
    if (params.size() != parameter_count()) throw std::invalid_argument("Mlp::forward: wrong parameter count");
    ad::Var h = x;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        h = ad::add(ad::matmul(h, params[2 * l]), params[2 * l + 1]);
        const bool last = l + 1 == weights_.size();
        if (!last || config_.activate_output) h = ad::relu(h);
    }
    return h;
}

std::vector<ad::Var> Mlp::bind(ad::Tape& tape) const {
    std::vector<ad::Var> out;
    out.reserve(parameter_count());
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        out.push_back(tape.parameter(weights_[l]));
        out.push_back(tape.parameter(biases_[l]));
    }
    return out;
}

std::vector<Matrix*> Mlp::parameters() {
    std::vector<Matrix*> out;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        out.push_back(&weights_[l]);
        out.push_back(&biases_[l]);
    }
    return out;
}

std::vector<const Matrix*> Mlp::parameters() const {
    std::vector<const Matrix*> out;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        out.push_back(&weights_[l]);
        out.push_back(&biases_[l]);
    }
    return out;
}

Adam::Adam(std::vector<Matrix*> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
    for (const Matrix* p : params_) {
        first_.push_back(Matrix::Zero(p->rows(), p->cols()));
        second_.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
}

void Adam::step(std::span<const Matrix> grads) {
    if (grads.size() != params_.size()) {
        throw ShapeError("Adam::step: got " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(params_.size()) + " parameters");
    }
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (grads[i].rows() != params_[i]->rows() || grads[i].cols() != params_[i]->cols()) {
            throw ShapeError("Adam::step: gradient " + shape_string(grads[i]) + " vs parameter " +
                             shape_string(*params_[i]));
        }
        if (!grads[i].allFinite()) throw NumericError("Adam::step: non-finite gradient");
    }
    ++step_;
    const double b1 = options_.beta1, b2 = options_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (std::size_t i = 0; i < grads.size(); ++i) {
        Matrix g = grads[i];
        if (options_.l2 != 0.0) g += options_.l2 * (*params_[i]);
        first_[i] = b1 * first_[i] + (1.0 - b1) * g;
        second_[i] = b2 * second_[i] + (1.0 - b2) * g.cwiseAbs2();
        const auto m_hat = first_[i].array() / c1;
        const auto v_hat = second_[i].array() / c2;
        params_[i]->array() -= options_.learning_rate * m_hat / (v_hat.sqrt() + options_.epsilon);
    }
}

bool EarlyStopping::update(double loss) {
    if (loss < best_ - min_delta_) {
        best_ = loss;
        bad_epochs_ = 0;
        improved_ = true;
        return false;
    }
    improved_ = false;
    ++bad_epochs_;
    return bad_epochs_ >= patience_;
}

std::vector<Matrix> snapshot(std::span<Matrix* const> params) {
    std::vector<Matrix> out;
    out.reserve(params.size());
    for (const Matrix* p : params) out.push_back(*p);
    return out;
}

void restore(std::span<Matrix* const> params, std::span<const Matrix> values) {
    if (params.size() != values.size()) throw ShapeError("restore: size mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) *params[i] = values[i];
}

nlohmann::json mlp_to_json(const Mlp& mlp) {
    nlohmann::json j;
    j["layer_dims"] = mlp.config().layer_dims;
    j["activation"] = "relu";
    j["seed"] = mlp.config().seed;
    j["activate_output"] = mlp.config().activate_output;
    nlohmann::json params = nlohmann::json::array();
    for (const Matrix* p : mlp.parameters()) {
        params.push_back(std::vector<double>(p->data(), p->data() + p->size()));
    }
    j["params"] = std::move(params);
    return j;
}

Mlp mlp_from_json(const nlohmann::json& j) {
    MlpConfig cfg;
    cfg.layer_dims = j.at("layer_dims").get<std::vector<int>>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.activate_output = j.value("activate_output", false);
    Mlp mlp(cfg);
    const auto& params = j.at("params");
    auto ptrs = mlp.parameters();
    if (params.size() != ptrs.size()) throw std::invalid_argument("mlp_from_json: parameter count mismatch");
    for (std::size_t i = 0; i < ptrs.size(); ++i) {
        const auto values = params[i].get<std::vector<double>>();
        if (static_cast<Eigen::Index>(values.size()) != ptrs[i]->size()) {
            throw std::invalid_argument("mlp_from_json: parameter size mismatch");
        }
        std::copy(values.begin(), values.end(), ptrs[i]->data());
    }
    return mlp;
}

}  // namespace grd
