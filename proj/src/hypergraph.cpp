#include "rwz/hypergraph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "csv.hpp"
#include "rwz/errors.hpp"

namespace rwz {

std::size_t RoadNetwork::index_of(const std::string& id) const {
    auto it = std::find(segment_ids.begin(), segment_ids.end(), id);
    if (it == segment_ids.end()) throw SchemaError("unknown segment '" + id + "'");
    return static_cast<std::size_t>(it - segment_ids.begin());
}

RoadNetwork make_network(std::vector<std::string> ids, Eigen::MatrixXd distance, Eigen::MatrixXd adjacency) {
    const auto n = static_cast<Eigen::Index>(ids.size());
    if (n < 1) throw SchemaError("road network needs at least one segment");
    if (distance.rows() != n || distance.cols() != n) {
        throw ShapeError("distance matrix is " + std::to_string(distance.rows()) + "x" + std::to_string(distance.cols()) +
                         " for " + std::to_string(n) + " segments");
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            const double d = distance(i, j);
            if (!std::isfinite(d) || d < 0.0) throw DataError("distance matrix has a negative or non-finite entry");
            if (i == j && d != 0.0) throw DataError("distance matrix diagonal must be zero");
        }
    }
    std::vector<std::string> sorted = ids;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) throw SchemaError("duplicate segment id");

    if (adjacency.size() == 0) {
        adjacency = Eigen::MatrixXd::Zero(n, n);
        for (Eigen::Index i = 0; i < n && n > 1; ++i) {
            Eigen::Index best = -1;
            for (Eigen::Index j = 0; j < n; ++j) {
                if (j != i && (best < 0 || distance(i, j) < distance(i, best))) best = j;
            }
            adjacency(i, best) = 1.0;
            adjacency(best, i) = 1.0;
        }
    } else {
        if (adjacency.rows() != n || adjacency.cols() != n) throw ShapeError("adjacency matrix has the wrong size");
        for (Eigen::Index k = 0; k < adjacency.size(); ++k) {
            const double a = adjacency.data()[k];
            if (a != 0.0 && a != 1.0) throw DataError("adjacency matrix must be 0/1");
        }
    }
    return RoadNetwork{std::move(ids), std::move(distance), std::move(adjacency)};
}

RoadNetwork load_distance_csv(const std::string& path) {
    const auto rows = csv::read_rows(path);
    if (rows.empty()) throw FormatError(path + ": empty distance file");
    std::vector<std::string> header = rows[0];
    const std::size_t body = rows.size() - 1;
    const bool labelled = header.size() == body + 1 && body > 0 && !rows[1].empty() && rows[1][0] == header[1];
    if (labelled) header.erase(header.begin());
    const std::size_t n = header.size();
    if (body != n) throw FormatError(path + ": expected " + std::to_string(n) + " rows, found " + std::to_string(body));
    Eigen::MatrixXd d(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        const auto& row = rows[i + 1];
        const std::size_t off = labelled ? 1 : 0;
        if (row.size() != n + off) throw FormatError(path + ": row " + std::to_string(i + 2) + " has wrong column count");
        if (labelled && row[0] != header[i]) {
            throw SchemaError(path + ": row label '" + row[0] + "' does not match column '" + header[i] + "'");
        }
        for (std::size_t j = 0; j < n; ++j) {
            d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                csv::to_double(row[j + off], path + " row " + std::to_string(i + 2));
        }
    }
    return make_network(std::move(header), std::move(d));
}

void write_distance_csv(const std::string& path, const RoadNetwork& network) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    out.precision(17);
    out << "segment_id";
    for (const auto& id : network.segment_ids) out << ',' << id;
    out << '\n';
    for (std::size_t i = 0; i < network.size(); ++i) {
        out << network.segment_ids[i];
        for (std::size_t j = 0; j < network.size(); ++j) {
            out << ',' << network.distance(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        }
        out << '\n';
    }
    if (!out) throw DataError("failed writing '" + path + "'");
}

double haversine_miles(double lat1, double lon1, double lat2, double lon2) {
    constexpr double kEarthRadiusMiles = 3958.7613;
    constexpr double kRad = M_PI / 180.0;
    const double dlat = (lat2 - lat1) * kRad;
    const double dlon = (lon2 - lon1) * kRad;
    const double a = std::sin(dlat / 2) * std::sin(dlat / 2) +
                     std::cos(lat1 * kRad) * std::cos(lat2 * kRad) * std::sin(dlon / 2) * std::sin(dlon / 2);
    return 2.0 * kEarthRadiusMiles * std::asin(std::min(1.0, std::sqrt(a)));
}

RoadNetwork load_segments_csv(const std::string& path) {
    auto rows = csv::read_rows(path);
    if (rows.size() < 2) throw FormatError(path + ": no segments");
    const auto& header = rows[0];
    if (header.size() != 3 || header[0] != "segment_id" || header[1] != "lat" || header[2] != "lon") {
        throw SchemaError(path + ": header must be segment_id,lat,lon");
    }
    std::vector<std::string> ids;
    std::vector<double> lat;
    std::vector<double> lon;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        if (rows[r].size() != 3) throw FormatError(path + ": row " + std::to_string(r + 1) + " needs 3 columns");
        ids.push_back(rows[r][0]);
        lat.push_back(csv::to_double(rows[r][1], path + " row " + std::to_string(r + 1)));
        lon.push_back(csv::to_double(rows[r][2], path + " row " + std::to_string(r + 1)));
    }
    const auto n = static_cast<Eigen::Index>(ids.size());
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const auto ui = static_cast<std::size_t>(i);
            const auto uj = static_cast<std::size_t>(j);
            d(i, j) = d(j, i) = haversine_miles(lat[ui], lon[ui], lat[uj], lon[uj]);
        }
    }
    return make_network(std::move(ids), std::move(d));
}

Hypergraph make_hypergraph(Eigen::MatrixXd incidence, Eigen::VectorXd edge_weights) {
    if (incidence.cols() != edge_weights.size()) throw ShapeError("edge weight count does not match hyperedge count");
    for (Eigen::Index k = 0; k < incidence.size(); ++k) {
        const double h = incidence.data()[k];
        if (h != 0.0 && h != 1.0) throw ShapeError("incidence entries must be 0 or 1");
    }
    for (Eigen::Index e = 0; e < edge_weights.size(); ++e) {
        if (!(edge_weights(e) > 0.0)) throw ShapeError("hyperedge weights must be positive");
    }
    Hypergraph hg;
    hg.edge_degrees = incidence.colwise().sum().transpose();
    for (Eigen::Index e = 0; e < hg.edge_degrees.size(); ++e) {
        if (hg.edge_degrees(e) == 0.0) throw ShapeError("hyperedge " + std::to_string(e) + " is empty");
    }
    hg.vertex_degrees = incidence * edge_weights;
    hg.incidence = std::move(incidence);
    hg.edge_weights = std::move(edge_weights);
    return hg;
}

Hypergraph build_hypergraph(const RoadNetwork& network, int k) {
    const auto n = static_cast<Eigen::Index>(network.size());
    if (k != kAllNeighbors && (k < 1 || k > n - 1)) {
        throw ParameterError("neighbor count " + std::to_string(k) + " outside [1, " + std::to_string(n - 1) + "]");
    }
    Eigen::MatrixXd incidence = Eigen::MatrixXd::Zero(n, n);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    for (Eigen::Index e = 0; e < n; ++e) {
        incidence(e, e) = 1.0;
        if (k == kAllNeighbors) {
            incidence.col(e).setOnes();
            continue;
        }
        std::iota(order.begin(), order.end(), Eigen::Index{0});
        order.erase(std::remove(order.begin(), order.end(), e), order.end());
        std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
            return network.distance(e, a) < network.distance(e, b);
        });
        for (int j = 0; j < k; ++j) incidence(order[static_cast<std::size_t>(j)], e) = 1.0;
        order.resize(static_cast<std::size_t>(n));
    }
    return make_hypergraph(std::move(incidence), Eigen::VectorXd::Ones(n));
}

Eigen::MatrixXd hypergraph_operator(const Hypergraph& hg) {
    for (Eigen::Index v = 0; v < hg.vertex_degrees.size(); ++v) {
        if (!(hg.vertex_degrees(v) > 0.0)) throw ShapeError("vertex " + std::to_string(v) + " belongs to no hyperedge");
    }
    const Eigen::VectorXd dv = hg.vertex_degrees.cwiseSqrt().cwiseInverse();
    const Eigen::VectorXd edge_scale = hg.edge_weights.cwiseQuotient(hg.edge_degrees);
    const Eigen::MatrixXd left = dv.asDiagonal() * hg.incidence;
    return left * edge_scale.asDiagonal() * left.transpose();
}

double chebyshev_term(int k, double x) {
    if (k < 0) throw ParameterError("Chebyshev order must be non-negative");
    if (k == 0) return 1.0;
    double prev = 1.0;
    double cur = x;
    for (int j = 2; j <= k; ++j) {
        const double next = 2.0 * x * cur - prev;
        prev = cur;
        cur = next;
    }
    return cur;
}

}  // namespace rwz
