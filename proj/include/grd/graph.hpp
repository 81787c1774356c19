#pragma once

#include "grd/autodiff.hpp"
#include "grd/rng.hpp"

#include <nlohmann/json_fwd.hpp>

#include <span>
#include <utility>
#include <vector>

namespace grd {

using Edge = std::pair<int, int>;

/// Simple undirected graph with per-node features. Immutable after
/// construction; edges are stored canonically with u < v, sorted.
class Graph {
public:
    Graph() = default;
    /// Validates node indices and rejects self-loops and parallel edges.
    Graph(int n_nodes, std::vector<Edge> edges, Matrix node_features);

    /// Graph whose single node feature is the degree centrality deg/(n-1).
    static Graph with_degree_centrality(int n_nodes, std::vector<Edge> edges);

    int n_nodes() const { return n_; }
    const std::vector<Edge>& edges() const { return edges_; }
    const Matrix& node_features() const { return features_; }
    int feature_dim() const { return static_cast<int>(features_.cols()); }
    const std::vector<int>& neighbors(int v) const { return adjacency_.at(v); }
    int degree(int v) const { return static_cast<int>(adjacency_.at(v).size()); }
    bool has_edge(int u, int v) const;

private:
    int n_ = 0;
    std::vector<Edge> edges_;
    Matrix features_;
    std::vector<std::vector<int>> adjacency_;
};

/// Relabels nodes: node v of `g` becomes node perm[v].
Graph relabel_nodes(const Graph& g, std::span<const int> perm);

bool is_connected(const Graph& g);

/// Minimum number of vertices whose removal disconnects g (n-1 for K_n).
int vertex_connectivity(const Graph& g);
/// Mean BFS hop distance over unordered node pairs. Throws if disconnected.
double average_shortest_path(const Graph& g);

struct GraphStats {
    int connectivity = 0;         // nu(G)
    double avg_shortest_path = 0;  // l(G)
};

/// Throws std::invalid_argument for disconnected graphs.
GraphStats graph_statistics(const Graph& g);

struct WsParams {
    int n_nodes = 10;
    int k_neighbors = 4;
    double rewire_prob = 0.5;

    /// Neighbor count actually used for the ring lattice: odd k rounds down
    /// to the nearest even value, never below 2.
    int lattice_k() const;
};

/// Draws n in [10,120], k in [3,8], p in [0.1,1] uniformly.
WsParams sample_ws_params(Rng& rng);

class GenerationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Watts-Strogatz small-world graph, regenerated until connected. Node
/// features are degree centralities. Throws GenerationError after
/// `max_attempts` disconnected draws.
Graph generate_watts_strogatz(Rng& rng, const WsParams& params, int max_attempts = 10000);

nlohmann::json graph_to_json(const Graph& g);
Graph graph_from_json(const nlohmann::json& j);

}  // namespace grd
