#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace rwz {

/// Road segments with pairwise geographic distances in miles.
struct RoadNetwork {
    std::vector<std::string> segment_ids;
    Eigen::MatrixXd distance;   // N x N, zero diagonal
    Eigen::MatrixXd adjacency;  // N x N, 0/1

    std::size_t size() const { return segment_ids.size(); }
    /// Index of a segment id; throws SchemaError when unknown.
    std::size_t index_of(const std::string& id) const;
};

/// Validates the invariants and fills adjacency (nearest-neighbour links) if it is empty.
RoadNetwork make_network(std::vector<std::string> ids, Eigen::MatrixXd distance, Eigen::MatrixXd adjacency = {});

/// N x N distance CSV. The header row lists the segment ids; an optional
/// leading label column is accepted when every row starts with the matching id.
RoadNetwork load_distance_csv(const std::string& path);
/// Writes the labelled form accepted by load_distance_csv.
void write_distance_csv(const std::string& path, const RoadNetwork& network);

/// `segment_id,lat,lon` rows; distances are great-circle miles.
RoadNetwork load_segments_csv(const std::string& path);

double haversine_miles(double lat1, double lon1, double lat2, double lon2);

/// Incidence structure of a weighted hypergraph together with its degrees.
struct Hypergraph {
    Eigen::MatrixXd incidence;      // N x E, entries 0/1
    Eigen::VectorXd edge_weights;   // E, diagonal of W
    Eigen::VectorXd vertex_degrees; // N, d(v) = sum_e w(e) h(v,e)
    Eigen::VectorXd edge_degrees;   // E, delta(e) = sum_v h(v,e)

    std::size_t vertices() const { return static_cast<std::size_t>(incidence.rows()); }
    std::size_t edges() const { return static_cast<std::size_t>(incidence.cols()); }
};

inline constexpr int kAllNeighbors = -1;

/// Builds degrees from an explicit incidence matrix. Throws ShapeError on
/// non-binary entries, empty hyperedges or non-positive weights.
Hypergraph make_hypergraph(Eigen::MatrixXd incidence, Eigen::VectorXd edge_weights);

/// One hyperedge per segment: the segment itself plus its `k` nearest
/// segments by distance, ties broken by lower index. `k = kAllNeighbors`
/// puts every segment in every hyperedge. Edge weights are 1.
Hypergraph build_hypergraph(const RoadNetwork& network, int k);

/// D_v^{-1/2} H W D_e^{-1} H^T D_v^{-1/2}. Throws ShapeError for an isolated vertex.
Eigen::MatrixXd hypergraph_operator(const Hypergraph& hg);

/// Chebyshev polynomial of the first kind, T_k(x), by the three-term recurrence.
double chebyshev_term(int k, double x);

}  // namespace rwz
