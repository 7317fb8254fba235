#pragma once

// Squaring of an instance sequence into a zero-padded 2-D map, partitioning of
// that map into L x L equal regions, and the inverse flatten.

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "r2tmil/numerics.hpp"

namespace r2t {

/// Smallest s with s * s >= n.
inline std::size_t ceil_sqrt(std::size_t n) {
    std::size_t s = 0;
    while (s * s < n) ++s;
    return s;
}

/// Index arithmetic shared by everything that walks regions of a squared map.
/// Map cells are addressed by their row-major flat index; region l = a * L + b
/// covers map rows aM..aM+M-1 and cols bM..bM+M-1, row-major inside the region.
struct RegionGeometry {
    std::size_t per_side = 1;     // L
    std::size_t region_side = 1;  // M
    std::size_t valid = 0;        // instances that are not padding

    static RegionGeometry for_instances(std::size_t instances, std::size_t per_side) {
        if (instances == 0) throw std::invalid_argument("region: need at least one instance");
        if (per_side == 0) throw std::invalid_argument("region: L must be >= 1");
        const std::size_t side = ceil_sqrt(instances);
        const std::size_t n = ((side + per_side - 1) / per_side) * per_side;
        return {per_side, n / per_side, instances};
    }

    std::size_t side() const { return per_side * region_side; }
    std::size_t cells() const { return side() * side(); }
    std::size_t regions() const { return per_side * per_side; }
    std::size_t region_cells() const { return region_side * region_side; }

    std::size_t cell(std::size_t region, std::size_t pos) const {
        const std::size_t a = region / per_side;
        const std::size_t b = region % per_side;
        const std::size_t r = a * region_side + pos / region_side;
        const std::size_t c = b * region_side + pos % region_side;
        return r * side() + c;
    }

    bool is_valid_cell(std::size_t flat) const { return flat < valid; }
};

struct SquaredMap {
    Matrix cells;  // N^2 x D, row-major cell order
    std::size_t valid = 0;
    std::size_t side = 0;

    std::size_t pad_count() const { return side * side - valid; }
    std::size_t dim() const { return cells.cols(); }
};

/// N is the smallest multiple of L that is >= ceil(sqrt(I)).
inline SquaredMap square_and_pad(const Matrix& h, std::size_t per_side) {
    const auto geo = RegionGeometry::for_instances(h.rows(), per_side);
    SquaredMap map{Matrix(geo.cells(), h.cols()), h.rows(), geo.side()};
    std::copy(h.flat().begin(), h.flat().end(), map.cells.flat().begin());
    return map;
}

struct RegionSet {
    std::vector<Matrix> regions;  // L^2 matrices of M^2 x D
    std::size_t per_side = 0;
    std::size_t region_side = 0;
    std::vector<std::pair<std::size_t, std::size_t>> origins;  // (region row, region col)
};

inline RegionSet partition(const SquaredMap& map, std::size_t per_side) {
    if (per_side == 0 || map.side % per_side != 0)
        throw std::invalid_argument("partition: map side " + std::to_string(map.side) + " not divisible by L=" +
                                    std::to_string(per_side));
    const RegionGeometry geo{per_side, map.side / per_side, map.valid};
    RegionSet set{{}, per_side, geo.region_side, {}};
    set.regions.reserve(geo.regions());
    for (std::size_t l = 0; l < geo.regions(); ++l) {
        Matrix reg(geo.region_cells(), map.dim());
        for (std::size_t p = 0; p < geo.region_cells(); ++p) {
            const auto src = map.cells.row(geo.cell(l, p));
            std::copy(src.begin(), src.end(), reg.row(p).begin());
        }
        set.regions.push_back(std::move(reg));
        set.origins.emplace_back(l / per_side, l % per_side);
    }
    return set;
}

/// Row i of the result is the map cell at flat index i; padded cells are dropped.
inline Matrix flatten_back(const RegionSet& set, std::size_t valid) {
    const RegionGeometry geo{set.per_side, set.region_side, valid};
    if (valid > geo.cells())
        throw std::invalid_argument("flatten_back: I_valid=" + std::to_string(valid) + " exceeds N^2=" +
                                    std::to_string(geo.cells()));
    if (set.regions.size() != geo.regions()) throw std::invalid_argument("flatten_back: region count mismatch");
    const std::size_t d = set.regions.empty() ? 0 : set.regions.front().cols();
    Matrix out(valid, d);
    for (std::size_t l = 0; l < geo.regions(); ++l) {
        for (std::size_t p = 0; p < geo.region_cells(); ++p) {
            const std::size_t flat = geo.cell(l, p);
            if (flat >= valid) continue;
            const auto src = set.regions[l].row(p);
            std::copy(src.begin(), src.end(), out.row(flat).begin());
        }
    }
    return out;
}

/// Gathers the rows of a region out of an N^2 x D map.
inline Matrix gather_region(const Matrix& map, const RegionGeometry& geo, std::size_t region) {
    Matrix out(geo.region_cells(), map.cols());
    for (std::size_t p = 0; p < geo.region_cells(); ++p) {
        const auto src = map.row(geo.cell(region, p));
        std::copy(src.begin(), src.end(), out.row(p).begin());
    }
    return out;
}

inline void scatter_region(const Matrix& reg, const RegionGeometry& geo, std::size_t region, Matrix& map) {
    for (std::size_t p = 0; p < geo.region_cells(); ++p) {
        const auto src = reg.row(p);
        std::copy(src.begin(), src.end(), map.row(geo.cell(region, p)).begin());
    }
}

inline void scatter_add_region(const Matrix& reg, const RegionGeometry& geo, std::size_t region, Matrix& map) {
    for (std::size_t p = 0; p < geo.region_cells(); ++p) {
        auto dst = map.row(geo.cell(region, p));
        const auto src = reg.row(p);
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
}

/// First `rows` rows of m.
inline Matrix head_rows(const Matrix& m, std::size_t rows) {
    Matrix out(rows, m.cols());
    std::copy(m.data(), m.data() + rows * m.cols(), out.data());
    return out;
}

/// m placed in the first rows of a zero matrix with `rows` rows.
inline Matrix pad_rows(const Matrix& m, std::size_t rows) {
    Matrix out(rows, m.cols());
    std::copy(m.flat().begin(), m.flat().end(), out.data());
    return out;
}

}  // namespace r2t
