#pragma once

#include "grd/graph.hpp"
#include "grd/nn.hpp"

#include <nlohmann/json_fwd.hpp>

#include <span>
#include <vector>

namespace grd {

/// Several graphs stacked block-diagonally so that one encoder pass embeds
/// all of them. Row g of the encoder output belongs to graphs[g].
class GraphBatch {
public:
    GraphBatch() = default;
    explicit GraphBatch(std::span<const Graph* const> graphs);
    GraphBatch(const std::vector<Graph>& catalog, std::span<const int> ids);

    int n_graphs() const { return static_cast<int>(readout_.rows()); }
    int n_nodes() const { return static_cast<int>(features_.rows()); }
    const Matrix& features() const { return features_; }
    /// Row-normalized adjacency: row v averages over the neighbours of v
    /// (an all-zero row for isolated nodes).
    const SparseMatrix& aggregate() const { return aggregate_; }
    /// Mean over the nodes of each graph.
    const SparseMatrix& readout() const { return readout_; }

private:
    void build(std::span<const Graph* const> graphs);

    Matrix features_;
    SparseMatrix aggregate_;
    SparseMatrix readout_;
};

struct GraphEncoderConfig {
    int node_dim = 1;
    int hidden_dim = 16;
    int out_dim = 16;
    int rounds = 2;
    std::uint64_t seed = 0;
};

/// Mean-aggregation message passing followed by a mean readout and a
/// two-layer output network. Each round r computes
///   m = message_r(h),  a = mean_{u in N(v)} m_u,  h' = update_r([h | a]).
/// Both aggregation and readout are means, so the embedding does not depend
/// on node labels.
class GraphEncoder {
public:
    GraphEncoder() = default;
    explicit GraphEncoder(GraphEncoderConfig config);

    Matrix encode(const GraphBatch& batch) const;
    Vector encode(const Graph& g) const;
    ad::Var encode(ad::Tape& tape, const GraphBatch& batch, std::span<const ad::Var> params) const;

    std::vector<ad::Var> bind(ad::Tape& tape) const;
    std::vector<Matrix*> parameters();
    std::vector<const Matrix*> parameters() const;
    std::size_t parameter_count() const;

    int out_dim() const { return config_.out_dim; }
    const GraphEncoderConfig& config() const { return config_; }

    const std::vector<Mlp>& message_nets() const { return message_; }
    const std::vector<Mlp>& update_nets() const { return update_; }
    const Mlp& output_net() const { return output_; }
    std::vector<Mlp>& message_nets() { return message_; }
    std::vector<Mlp>& update_nets() { return update_; }
    Mlp& output_net() { return output_; }

private:
    GraphEncoderConfig config_;
    std::vector<Mlp> message_;
    std::vector<Mlp> update_;
    Mlp output_;
};

nlohmann::json encoder_to_json(const GraphEncoder& enc);
GraphEncoder encoder_from_json(const nlohmann::json& j);

}  // namespace grd
