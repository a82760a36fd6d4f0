#include <doctest.h>

#include <random>
#include <set>

#include "rastream/raster.hpp"

using namespace rastream;

TEST_CASE("region intersection") {
    CHECK(intersect(Region(0, 0, 4, 4), Region(2, 2, 4, 4)) == Region(2, 2, 2, 2));
    CHECK(intersect(Region(0, 0, 4, 4), Region(0, 0, 4, 4)) == Region(0, 0, 4, 4));
    CHECK(intersect(Region(0, 0, 2, 2), Region(5, 5, 1, 1)).empty());
}

TEST_CASE("empty regions are canonical") {
    CHECK(Region(7, 9, 0, 3) == Region());
    CHECK(Region(1, 1, 2, 0) == Region(0, 0, 0, 0));
}

TEST_CASE("grow clamped") {
    const Region bounds(0, 0, 10, 10);
    CHECK(grow_clamped(Region(2, 2, 2, 2), 1, bounds) == Region(1, 1, 4, 4));
    CHECK(grow_clamped(Region(0, 0, 2, 2), 3, Region(0, 0, 4, 4)) == Region(0, 0, 4, 4));
    const Region r(3, 4, 2, 5);
    CHECK(grow_clamped(r, 0, bounds) == intersect(r, bounds));
}

TEST_CASE("region properties over random inputs") {
    std::mt19937 rng(42);
    std::uniform_int_distribution<std::int64_t> coord(-8, 16), size(0, 12), radius(0, 5);
    auto rand_region = [&] { return Region(coord(rng), coord(rng), size(rng), size(rng)); };
    for (int i = 0; i < 2000; ++i) {
        const Region a = rand_region(), b = rand_region(), c = rand_region();
        CHECK(intersect(a, b) == intersect(b, a));
        CHECK(intersect(intersect(a, b), c) == intersect(a, intersect(b, c)));
        CHECK(intersect(a, a) == a);

        const Region bounds(0, 0, 1 + size(rng), 1 + size(rng));
        const Region grown = grow_clamped(a, radius(rng), bounds);
        CHECK(bounds.contains(grown));
        CHECK(grown.contains(intersect(a, bounds)));
    }
}

TEST_CASE("pixel buffer flat indexing") {
    PixelBuffer buf(Region(0, 0, 3, 2), 2, SampleType::U8);
    CHECK(buf.sample_index(1, 0, 1) == 3);
    CHECK(buf.sample_index(2, 1, 0) == 10);

    PixelBuffer corner(Region(5, 5, 4, 4), 1, SampleType::U16);
    CHECK(corner.sample_index(5, 5, 0) == 0);

    // Brute-force bijectivity over all 12 sample slots.
    std::set<std::uint64_t> seen;
    for (std::int64_t y = 0; y < 2; ++y)
        for (std::int64_t x = 0; x < 3; ++x)
            for (int b = 0; b < 2; ++b) {
                const std::uint64_t idx = buf.sample_index(x, y, b);
                CHECK(idx < 12);
                seen.insert(idx);
            }
    CHECK(seen.size() == 12);
}

TEST_CASE("out-of-region access is rejected") {
    PixelBuffer buf(Region(0, 0, 3, 2), 2, SampleType::U8);
    CHECK_THROWS_AS(buf.get(3, 0, 0), ContractError);
    CHECK_THROWS_AS(buf.get(0, 0, 2), ContractError);
    CHECK_THROWS_AS(buf.set(-1, 0, 0, 1.0), ContractError);
}

TEST_CASE("get/set round-trips for all in-region coordinates") {
    for (const SampleType st : {SampleType::U8, SampleType::U16, SampleType::F32}) {
        PixelBuffer buf(Region(2, 3, 5, 4), 3, st);
        double v = 1.0;
        for (std::int64_t y = 3; y < 7; ++y)
            for (std::int64_t x = 2; x < 7; ++x)
                for (int b = 0; b < 3; ++b) {
                    buf.set(x, y, b, v);
                    CHECK(buf.get(x, y, b) == doctest::Approx(v).epsilon(1e-6));
                    v += 1.0;
                }
    }
}

TEST_CASE("integer division rounds half to even") {
    CHECK(div_round_half_even(7, 2) == 4);   // 3.5 -> 4
    CHECK(div_round_half_even(5, 2) == 2);   // 2.5 -> 2
    CHECK(div_round_half_even(9, 3) == 3);
    CHECK(div_round_half_even(10, 4) == 2);  // 2.5 -> 2
    CHECK(div_round_half_even(14, 4) == 4);  // 3.5 -> 4
}

TEST_CASE("image info byte accounting") {
    ImageInfo info;
    info.width = 42599;
    info.height = 47299;
    info.bands = 1;
    info.sample_type = SampleType::U16;
    CHECK(info.total_bytes() == 2ull * 42599 * 47299);  // no 32-bit overflow
}
