#include "grd/graph.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <limits>
#include <queue>
#include <stdexcept>
#include <string>

namespace grd {

Graph::Graph(int n_nodes, std::vector<Edge> edges, Matrix node_features)
    : n_(n_nodes), features_(std::move(node_features)) {
    if (n_nodes <= 0) throw std::invalid_argument("Graph: n_nodes must be positive");
    if (features_.rows() != n_nodes) {
        throw std::invalid_argument("Graph: node_features has " + std::to_string(features_.rows()) +
                                    " rows for " + std::to_string(n_nodes) + " nodes");
    }
    for (auto& [u, v] : edges) {
        if (u < 0 || v < 0 || u >= n_nodes || v >= n_nodes) {
            throw std::invalid_argument("Graph: edge (" + std::to_string(u) + "," + std::to_string(v) +
                                        ") references an invalid node");
        }
        if (u == v) throw std::invalid_argument("Graph: self-loop at node " + std::to_string(u));
        if (u > v) std::swap(u, v);
    }
    std::sort(edges.begin(), edges.end());
    if (std::adjacent_find(edges.begin(), edges.end()) != edges.end()) {
        throw std::invalid_argument("Graph: parallel edges");
    }
    edges_ = std::move(edges);
    adjacency_.assign(n_, {});
    for (const auto& [u, v] : edges_) {
        adjacency_[u].push_back(v);
        adjacency_[v].push_back(u);
    }
    for (auto& nb : adjacency_) std::sort(nb.begin(), nb.end());
}

Graph Graph::with_degree_centrality(int n_nodes, std::vector<Edge> edges) {
    if (n_nodes <= 0) throw std::invalid_argument("Graph: n_nodes must be positive");
    Graph shape(n_nodes, std::move(edges), Matrix::Zero(n_nodes, 1));
    Matrix features(n_nodes, 1);
    const double denom = n_nodes > 1 ? static_cast<double>(n_nodes - 1) : 1.0;
    for (int v = 0; v < n_nodes; ++v) features(v, 0) = shape.degree(v) / denom;
    shape.features_ = std::move(features);
    return shape;
}

bool Graph::has_edge(int u, int v) const {
    const auto& nb = adjacency_.at(u);
    return std::binary_search(nb.begin(), nb.end(), v);
}

Graph relabel_nodes(const Graph& g, std::span<const int> perm) {
    const int n = g.n_nodes();
    if (static_cast<int>(perm.size()) != n) throw std::invalid_argument("relabel_nodes: bad permutation");
    std::vector<Edge> edges;
    edges.reserve(g.edges().size());
    for (const auto& [u, v] : g.edges()) edges.emplace_back(perm[u], perm[v]);
    Matrix features(n, g.feature_dim());
    for (int v = 0; v < n; ++v) features.row(perm[v]) = g.node_features().row(v);
    return Graph(n, std::move(edges), std::move(features));
}

namespace {

std::vector<int> bfs_distances(const Graph& g, int source) {
    std::vector<int> dist(g.n_nodes(), -1);
    std::queue<int> q;
    dist[source] = 0;
    q.push(source);
    while (!q.empty()) {
        const int u = q.front();
        q.pop();
        for (int w : g.neighbors(u)) {
            if (dist[w] < 0) {
                dist[w] = dist[u] + 1;
                q.push(w);
            }
        }
    }
    return dist;
}

// Unit-vertex-capacity max flow between non-adjacent s and t on the split
// graph (v_in = 2v, v_out = 2v+1). Returns the number of internally
// vertex-disjoint s-t paths, stopping early once `cutoff` is reached.
class SplitFlow {
public:
    explicit SplitFlow(const Graph& g) : n_(g.n_nodes()) {
        head_.assign(2 * n_, -1);
        for (int v = 0; v < n_; ++v) add_arc(2 * v, 2 * v + 1, 1);
        for (const auto& [u, v] : g.edges()) {
            add_arc(2 * u + 1, 2 * v, kInf);
            add_arc(2 * v + 1, 2 * u, kInf);
        }
        base_cap_ = cap_;
    }

    int local_connectivity(int s, int t, int cutoff) {
        cap_ = base_cap_;
        // Terminals are not removable.
        cap_[internal_arc(s)] = kInf;
        cap_[internal_arc(t)] = kInf;
        const int source = 2 * s + 1, sink = 2 * t;
        int flow = 0;
        std::vector<int> parent_arc(2 * n_);
        while (flow < cutoff) {
            std::fill(parent_arc.begin(), parent_arc.end(), -1);
            std::queue<int> q;
            q.push(source);
            parent_arc[source] = -2;
            while (!q.empty() && parent_arc[sink] == -1) {
                const int u = q.front();
                q.pop();
                for (int a = head_[u]; a != -1; a = next_[a]) {
                    const int w = to_[a];
                    if (cap_[a] > 0 && parent_arc[w] == -1) {
                        parent_arc[w] = a;
                        q.push(w);
                    }
                }
            }
            if (parent_arc[sink] == -1) break;
            for (int v = sink; v != source; v = to_[parent_arc[v] ^ 1]) {
                cap_[parent_arc[v]] -= 1;
                cap_[parent_arc[v] ^ 1] += 1;
            }
            ++flow;
        }
        return flow;
    }

private:
    static constexpr int kInf = std::numeric_limits<int>::max() / 4;

    void add_arc(int from, int to, int cap) {
        to_.push_back(to);
        cap_.push_back(cap);
        next_.push_back(head_[from]);
        head_[from] = static_cast<int>(to_.size()) - 1;
        to_.push_back(from);
        cap_.push_back(0);
        next_.push_back(head_[to]);
        head_[to] = static_cast<int>(to_.size()) - 1;
    }
    // The internal arc of v was the v-th arc pair added.
    static int internal_arc(int v) { return 2 * v; }

    int n_;
    std::vector<int> head_, next_, to_, cap_, base_cap_;
};

}  // namespace

bool is_connected(const Graph& g) {
    const auto dist = bfs_distances(g, 0);
    return std::none_of(dist.begin(), dist.end(), [](int d) { return d < 0; });
}

int vertex_connectivity(const Graph& g) {
    const int n = g.n_nodes();
    if (n <= 1) return 0;
    if (!is_connected(g)) return 0;
    const auto n_edges = static_cast<long>(g.edges().size());
    if (n_edges == static_cast<long>(n) * (n - 1) / 2) return n - 1;

    int v = 0;
    for (int u = 1; u < n; ++u) {
        if (g.degree(u) < g.degree(v)) v = u;
    }
    // A minimum separator either misses v (then it separates v from some
    // non-neighbour) or contains v (then it separates two neighbours of v).
    int best = g.degree(v);
    SplitFlow flow(g);
    for (int w = 0; w < n && best > 0; ++w) {
        if (w == v || g.has_edge(v, w)) continue;
        best = std::min(best, flow.local_connectivity(v, w, best));
    }
    const auto& nb = g.neighbors(v);
    for (std::size_t i = 0; i < nb.size(); ++i) {
        for (std::size_t j = i + 1; j < nb.size(); ++j) {
            if (g.has_edge(nb[i], nb[j])) continue;
            best = std::min(best, flow.local_connectivity(nb[i], nb[j], best));
        }
    }
    return best;
}

double average_shortest_path(const Graph& g) {
    const int n = g.n_nodes();
    if (n == 1) return 0.0;
    double total = 0.0;
    for (int s = 0; s < n; ++s) {
        const auto dist = bfs_distances(g, s);
        for (int t = s + 1; t < n; ++t) {
            if (dist[t] < 0) throw std::invalid_argument("average_shortest_path: graph is disconnected");
            total += dist[t];
        }
    }
    return total / (0.5 * n * (n - 1));
}

GraphStats graph_statistics(const Graph& g) {
    if (!is_connected(g)) throw std::invalid_argument("graph_statistics: graph is disconnected");
    return GraphStats{vertex_connectivity(g), average_shortest_path(g)};
}

int WsParams::lattice_k() const { return std::max(2, k_neighbors - (k_neighbors % 2)); }

WsParams sample_ws_params(Rng& rng) {
    WsParams p;
    p.n_nodes = rng.uniform_int(10, 120);
    p.k_neighbors = rng.uniform_int(3, 8);
    p.rewire_prob = rng.uniform(0.1, 1.0);
    return p;
}

namespace {

std::vector<Edge> watts_strogatz_edges(Rng& rng, int n, int k, double p) {
    std::vector<std::vector<char>> adj(n, std::vector<char>(n, 0));
    std::vector<int> degree(n, 0);
    auto link = [&](int a, int b) {
        adj[a][b] = adj[b][a] = 1;
        ++degree[a];
        ++degree[b];
    };
    auto unlink = [&](int a, int b) {
        adj[a][b] = adj[b][a] = 0;
        --degree[a];
        --degree[b];
    };
    for (int u = 0; u < n; ++u) {
        for (int j = 1; j <= k / 2; ++j) link(u, (u + j) % n);
    }
    std::vector<int> candidates;
    candidates.reserve(n);
    for (int j = 1; j <= k / 2; ++j) {
        for (int u = 0; u < n; ++u) {
            const int v = (u + j) % n;
            if (!adj[u][v]) continue;  // already moved by an earlier rewire
            if (rng.uniform() >= p) continue;
            if (degree[u] >= n - 1) continue;
            candidates.clear();
            for (int w = 0; w < n; ++w) {
                if (w != u && !adj[u][w]) candidates.push_back(w);
            }
            const int w = candidates[rng.uniform_index(candidates.size())];
            unlink(u, v);
            link(u, w);
        }
    }
    std::vector<Edge> edges;
    for (int u = 0; u < n; ++u) {
        for (int v = u + 1; v < n; ++v) {
            if (adj[u][v]) edges.emplace_back(u, v);
        }
    }
    return edges;
}

}  // namespace

Graph generate_watts_strogatz(Rng& rng, const WsParams& params, int max_attempts) {
    const int n = params.n_nodes;
    const int k = params.lattice_k();
    if (n < 3) throw std::invalid_argument("generate_watts_strogatz: need at least 3 nodes");
    if (k >= n) throw std::invalid_argument("generate_watts_strogatz: k must be smaller than n");
    if (params.rewire_prob < 0.0 || params.rewire_prob > 1.0) {
        throw std::invalid_argument("generate_watts_strogatz: rewire_prob outside [0,1]");
    }
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
        Graph g = Graph::with_degree_centrality(n, watts_strogatz_edges(rng, n, k, params.rewire_prob));
        if (is_connected(g)) return g;
    }
    throw GenerationError("generate_watts_strogatz: no connected graph after " +
                          std::to_string(max_attempts) + " attempts");
}

nlohmann::json graph_to_json(const Graph& g) {
    nlohmann::json j;
    j["n"] = g.n_nodes();
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& [u, v] : g.edges()) edges.push_back({u, v});
    j["edges"] = std::move(edges);
    nlohmann::json features = nlohmann::json::array();
    const Matrix& f = g.node_features();
    for (Eigen::Index r = 0; r < f.rows(); ++r) {
        features.push_back(std::vector<double>(f.row(r).data(), f.row(r).data() + f.cols()));
    }
    j["node_features"] = std::move(features);
    return j;
}

Graph graph_from_json(const nlohmann::json& j) {
    const int n = j.at("n").get<int>();
    std::vector<Edge> edges;
    for (const auto& e : j.at("edges")) edges.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
    const auto& rows = j.at("node_features");
    if (static_cast<int>(rows.size()) != n) throw std::invalid_argument("graph_from_json: feature rows != n");
    const auto d = n > 0 ? rows.at(0).size() : 0;
    Matrix features(n, static_cast<Eigen::Index>(d));
    for (int r = 0; r < n; ++r) {
        const auto row = rows[r].get<std::vector<double>>();
        if (row.size() != d) throw std::invalid_argument("graph_from_json: ragged node_features");
        for (std::size_t c = 0; c < d; ++c) features(r, static_cast<Eigen::Index>(c)) = row[c];
    }
    return Graph(n, std::move(edges), std::move(features));
}

}  // namespace grd
