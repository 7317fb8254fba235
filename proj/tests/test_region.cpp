#include <gtest/gtest.h>

#include <set>

#include "r2tmil/region.hpp"

using namespace r2t;

namespace {

Matrix iota_rows(std::size_t n, std::size_t d) {
    Matrix m(n, d);
    for (std::size_t i = 0; i < m.size(); ++i) m.flat()[i] = static_cast<double>(i + 1);
    return m;
}

}  // namespace

TEST(SquareAndPad, SixtyFourInstancesTwoPerSide) {
    const SquaredMap map = square_and_pad(iota_rows(64, 3), 2);
    EXPECT_EQ(map.side, 8u);
    EXPECT_EQ(map.pad_count(), 0u);
    const RegionSet set = partition(map, 2);
    ASSERT_EQ(set.regions.size(), 4u);
    EXPECT_EQ(set.region_side, 4u);
    for (const auto& r : set.regions) EXPECT_EQ(r.rows(), 16u);
}

TEST(SquareAndPad, FiveInstancesPadToThreeByThree) {
    const Matrix h = iota_rows(5, 2);
    const SquaredMap map = square_and_pad(h, 1);
    EXPECT_EQ(map.side, 3u);
    EXPECT_EQ(map.pad_count(), 4u);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 2; ++j) EXPECT_EQ(map.cells(i, j), h(i, j));
    for (std::size_t i = 5; i < 9; ++i)
        for (std::size_t j = 0; j < 2; ++j) EXPECT_EQ(map.cells(i, j), 0.0);
}

TEST(SquareAndPad, SingleInstance) {
    const Matrix h = Matrix::from_rows({{4, 5, 6}});
    const SquaredMap map = square_and_pad(h, 1);
    EXPECT_EQ(map.side, 1u);
    EXPECT_EQ(map.cells, h);
    EXPECT_EQ(flatten_back(partition(map, 1), 1), h);
}

TEST(SquareAndPad, ZeroInstancesOrZeroLThrow) {
    EXPECT_THROW(square_and_pad(Matrix(0, 3), 1), std::invalid_argument);
    EXPECT_THROW(square_and_pad(Matrix(4, 3), 0), std::invalid_argument);
}

TEST(Partition, OnePerCellWhenLEqualsSide) {
    const SquaredMap map = square_and_pad(iota_rows(16, 1), 4);
    const RegionSet set = partition(map, 4);
    ASSERT_EQ(set.regions.size(), 16u);
    EXPECT_EQ(set.region_side, 1u);
}

TEST(Partition, FirstRegionOfFourByFourMap) {
    Matrix cells(16, 1);
    for (std::size_t i = 0; i < 16; ++i) cells(i, 0) = static_cast<double>(i);
    const SquaredMap map{cells, 16, 4};
    const RegionSet set = partition(map, 2);
    // map cells (0,0),(0,1),(1,0),(1,1) -> flat 0,1,4,5
    EXPECT_EQ(set.regions[0], Matrix::from_rows({{0}, {1}, {4}, {5}}));
    EXPECT_EQ(set.regions[3], Matrix::from_rows({{10}, {11}, {14}, {15}}));
    EXPECT_EQ(set.origins[1], (std::pair<std::size_t, std::size_t>{0, 1}));
    EXPECT_EQ(set.origins[2], (std::pair<std::size_t, std::size_t>{1, 0}));
}

TEST(Partition, IndivisibleSideThrows) {
    const SquaredMap map{Matrix(9, 1), 9, 3};
    EXPECT_THROW(partition(map, 2), std::invalid_argument);
}

TEST(FlattenBack, TooManyValidThrows) {
    const SquaredMap map = square_and_pad(iota_rows(5, 1), 1);
    EXPECT_THROW(flatten_back(partition(map, 1), 10), std::invalid_argument);
}

TEST(RegionProperty, RoundTripAndCoverage) {
    for (std::size_t l = 1; l <= 8; ++l) {
        for (std::size_t i = 1; i <= 500; ++i) {
            const Matrix h = iota_rows(i, 2);
            const SquaredMap map = square_and_pad(h, l);
            ASSERT_EQ(map.side % l, 0u);
            ASSERT_GE(map.side * map.side, i);
            ASSERT_LT(map.pad_count(), map.side * map.side);
            // smallest such multiple
            const std::size_t s = ceil_sqrt(i);
            ASSERT_GE(map.side, s);
            ASSERT_LT(map.side - l, s) << "I=" << i << " L=" << l;
            for (std::size_t c = i; c < map.side * map.side; ++c) {
                ASSERT_EQ(map.cells(c, 0), 0.0);
                ASSERT_EQ(map.cells(c, 1), 0.0);
            }
            const RegionSet set = partition(map, l);
            ASSERT_EQ(flatten_back(set, i), h) << "I=" << i << " L=" << l;

            const auto geo = RegionGeometry::for_instances(i, l);
            std::set<std::size_t> seen;
            for (std::size_t r = 0; r < geo.regions(); ++r)
                for (std::size_t p = 0; p < geo.region_cells(); ++p) seen.insert(geo.cell(r, p));
            ASSERT_EQ(seen.size(), geo.cells());
            ASSERT_EQ(*seen.rbegin(), geo.cells() - 1);
        }
    }
}

TEST(RegionGather, ScatterInvertsGather) {
    const auto geo = RegionGeometry::for_instances(30, 3);
    Matrix map = iota_rows(geo.cells(), 2);
    Matrix rebuilt(geo.cells(), 2);
    for (std::size_t r = 0; r < geo.regions(); ++r) scatter_region(gather_region(map, geo, r), geo, r, rebuilt);
    EXPECT_EQ(rebuilt, map);
}
