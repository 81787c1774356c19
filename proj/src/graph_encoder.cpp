#include "grd/graph_encoder.hpp"

#include <nlohmann/json.hpp>

namespace grd {

GraphBatch::GraphBatch(std::span<const Graph* const> graphs) { build(graphs); }

GraphBatch::GraphBatch(const std::vector<Graph>& catalog, std::span<const int> ids) {
    std::vector<const Graph*> ptrs;
    ptrs.reserve(ids.size());
    for (int id : ids) ptrs.push_back(&catalog.at(static_cast<std::size_t>(id)));
    build(ptrs);
}

void GraphBatch::build(std::span<const Graph* const> graphs) {
    if (graphs.empty()) throw std::invalid_argument("GraphBatch: no graphs");
    const int dim = graphs.front()->feature_dim();
    int total = 0;
    for (const Graph* g : graphs) {
        if (g->feature_dim() != dim) throw ShapeError("GraphBatch: node feature dims differ");
        total += g->n_nodes();
    }
    features_.resize(total, dim);
    std::vector<Eigen::Triplet<double>> agg, pool;
    int offset = 0;
    for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
        const Graph& g = *graphs[gi];
        features_.middleRows(offset, g.n_nodes()) = g.node_features();
        for (int v = 0; v < g.n_nodes(); ++v) {
            const auto& nb = g.neighbors(v);
            for (int u : nb) agg.emplace_back(offset + v, offset + u, 1.0 / static_cast<double>(nb.size()));
            pool.emplace_back(static_cast<int>(gi), offset + v, 1.0 / g.n_nodes());
        }
        offset += g.n_nodes();
    }
    aggregate_.resize(total, total);
    aggregate_.setFromTriplets(agg.begin(), agg.end());
    readout_.resize(static_cast<Eigen::Index>(graphs.size()), total);
    readout_.setFromTriplets(pool.begin(), pool.end());
}

GraphEncoder::GraphEncoder(GraphEncoderConfig config) : config_(config) {
    if (config_.rounds < 1) throw std::invalid_argument("GraphEncoder: rounds must be >= 1");
    const int h = config_.hidden_dim;
    std::uint64_t s = config_.seed;
    for (int r = 0; r < config_.rounds; ++r) {
        const int in = r == 0 ? config_.node_dim : h;
        message_.emplace_back(MlpConfig{{in, h, h}, Activation::ReLU, derive_seed(s, "message/" + std::to_string(r))});
        update_.emplace_back(
            MlpConfig{{in + h, h, h}, Activation::ReLU, derive_seed(s, "update/" + std::to_string(r)), true});
    }
    output_ = Mlp(MlpConfig{{h, h, config_.out_dim}, Activation::ReLU, derive_seed(s, "output")});
}

Matrix GraphEncoder::encode(const GraphBatch& batch) const {
    if (batch.features().cols() != config_.node_dim) {
        throw ShapeError("GraphEncoder: node features have " + std::to_string(batch.features().cols()) +
                         " columns, encoder expects " + std::to_string(config_.node_dim));
    }
    Matrix h = batch.features();
    for (int r = 0; r < config_.rounds; ++r) {
        const Matrix msg = message_[r].forward(h);
        const Matrix agg = batch.aggregate() * msg;
        Matrix joined(h.rows(), h.cols() + agg.cols());
        joined << h, agg;
        h = update_[r].forward(joined);
    }
    const Matrix pooled = batch.readout() * h;
    return output_.forward(pooled);
}

Vector GraphEncoder::encode(const Graph& g) const {
    const Graph* ptr = &g;
    const GraphBatch batch(std::span<const Graph* const>(&ptr, 1));
    return encode(batch).row(0).transpose();
}

ad::Var GraphEncoder::encode(ad::Tape& tape, const GraphBatch& batch, std::span<const ad::Var> params) const {
    if (batch.features().cols() != config_.node_dim) {
        throw ShapeError("GraphEncoder: node features have " + std::to_string(batch.features().cols()) +
                         " columns, encoder expects " + std::to_string(config_.node_dim));
    }
    if (params.size() != parameter_count()) throw std::invalid_argument("GraphEncoder: wrong parameter count");
    std::size_t at = 0;
    auto take = [&](const Mlp& net) {
        auto sub = params.subspan(at, net.parameter_count());
        at += net.parameter_count();
        return sub;
    };
    ad::Var h = tape.constant(batch.features());
    for (int r = 0; r < config_.rounds; ++r) {
        const auto msg_params = take(message_[r]);
        const auto upd_params = take(update_[r]);
        const ad::Var msg = message_[r].forward(h, msg_params);
        const ad::Var agg = ad::sparse_matmul(batch.aggregate(), msg);
        h = update_[r].forward(ad::concat_cols(h, agg), upd_params);
    }
    const ad::Var pooled = ad::sparse_matmul(batch.readout(), h);
    return output_.forward(pooled, take(output_));
}

std::vector<ad::Var> GraphEncoder::bind(ad::Tape& tape) const {
    std::vector<ad::Var> out;
    for (int r = 0; r < config_.rounds; ++r) {
        for (const auto& v : message_[r].bind(tape)) out.push_back(v);
        for (const auto& v : update_[r].bind(tape)) out.push_back(v);
    }
    for (const auto& v : output_.bind(tape)) out.push_back(v);
    return out;
}

std::vector<Matrix*> GraphEncoder::parameters() {
    std::vector<Matrix*> out;
    for (int r = 0; r < config_.rounds; ++r) {
        for (Matrix* p : message_[r].parameters()) out.push_back(p);
        for (Matrix* p : update_[r].parameters()) out.push_back(p);
    }
    for (Matrix* p : output_.parameters()) out.push_back(p);
    return out;
}

std::vector<const Matrix*> GraphEncoder::parameters() const {
    std::vector<const Matrix*> out;
    for (int r = 0; r < config_.rounds; ++r) {
        for (const Matrix* p : message_[r].parameters()) out.push_back(p);
        for (const Matrix* p : update_[r].parameters()) out.push_back(p);
    }
    for (const Matrix* p : output_.parameters()) out.push_back(p);
    return out;
}

std::size_t GraphEncoder::parameter_count() const {
    std::size_t n = output_.parameter_count();
    for (int r = 0; r < config_.rounds; ++r) n += message_[r].parameter_count() + update_[r].parameter_count();
    return n;
}

nlohmann::json encoder_to_json(const GraphEncoder& enc) {
    nlohmann::json j;
    const auto& c = enc.config();
    j["node_dim"] = c.node_dim;
    j["hidden_dim"] = c.hidden_dim;
    j["out_dim"] = c.out_dim;
    j["rounds"] = c.rounds;
    j["seed"] = c.seed;
    nlohmann::json msgs = nlohmann::json::array(), upds = nlohmann::json::array();
    for (const auto& m : enc.message_nets()) msgs.push_back(mlp_to_json(m));
    for (const auto& u : enc.update_nets()) upds.push_back(mlp_to_json(u));
    j["message"] = std::move(msgs);
    j["update"] = std::move(upds);
    j["output"] = mlp_to_json(enc.output_net());
    return j;
}

GraphEncoder encoder_from_json(const nlohmann::json& j) {
    GraphEncoderConfig c;
    c.node_dim = j.at("node_dim").get<int>();
    c.hidden_dim = j.at("hidden_dim").get<int>();
    c.out_dim = j.at("out_dim").get<int>();
    c.rounds = j.at("rounds").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    GraphEncoder enc(c);
    for (int r = 0; r < c.rounds; ++r) {
        enc.message_nets()[r] = mlp_from_json(j.at("message").at(r));
        enc.update_nets()[r] = mlp_from_json(j.at("update").at(r));
    }
    enc.output_net() = mlp_from_json(j.at("output"));
    return enc;
}

}  // namespace grd
