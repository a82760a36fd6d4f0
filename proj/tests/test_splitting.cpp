#include <doctest.h>

#include <algorithm>
#include <random>

#include "rastream/splitting.hpp"

using namespace rastream;

namespace {

ImageInfo make_info(std::int64_t w, std::int64_t h, int bands = 1,
                    SampleType st = SampleType::U16) {
    ImageInfo info;
    info.width = w;
    info.height = h;
    info.bands = bands;
    info.sample_type = st;
    return info;
}

void check_exact_tiling(const SplitScheme& scheme, const ImageInfo& info) {
    std::uint64_t area = 0;
    for (const Region& r : scheme.splits) {
        CHECK(info.full_region().contains(r));
        CHECK(!r.empty());
        area += r.area();
    }
    CHECK(area == static_cast<std::uint64_t>(info.width) * info.height);
    for (std::size_t i = 0; i < scheme.splits.size(); ++i)
        for (std::size_t j = i + 1; j < scheme.splits.size(); ++j)
            CHECK(intersect(scheme.splits[i], scheme.splits[j]).empty());
}

}  // namespace

TEST_CASE("striped split at production-like height") {
    const auto info = make_info(10699, 11899, 4);
    const SplitScheme scheme = striped_split(info, 8);
    REQUIRE(scheme.total() == 8);
    std::int64_t rows = 0;
    for (std::size_t i = 0; i + 1 < scheme.total(); ++i) {
        CHECK(scheme.splits[i].h == 1488);
        rows += scheme.splits[i].h;
    }
    CHECK(scheme.splits.back().h == 1483);
    CHECK(rows + scheme.splits.back().h == 11899);
    check_exact_tiling(scheme, info);
}

TEST_CASE("striped split edge cases") {
    const auto info = make_info(100, 80);
    const SplitScheme one = striped_split(info, 1);
    REQUIRE(one.total() == 1);
    CHECK(one.splits[0] == info.full_region());

    const SplitScheme clamped = striped_split(make_info(10, 3), 5);
    REQUIRE(clamped.total() == 3);
    for (const Region& r : clamped.splits) CHECK(r.h == 1);
}

TEST_CASE("tiled split") {
    const auto info = make_info(100, 80);
    const SplitScheme scheme = tiled_split(info, 64, 64);
    REQUIRE(scheme.total() == 4);
    CHECK(scheme.splits[0] == Region(0, 0, 64, 64));
    CHECK(scheme.splits[1] == Region(64, 0, 36, 64));
    CHECK(scheme.splits[2] == Region(0, 64, 64, 16));
    CHECK(scheme.splits[3] == Region(64, 64, 36, 16));

    const SplitScheme whole = tiled_split(info, 128, 96);
    CHECK(whole.total() == 1);
}

TEST_CASE("auto split count") {
    // XS-analogue sizing: ceil(total/budget) rounded up to a world multiple.
    const auto xs = make_info(10699, 11899, 4, SampleType::U16);
    const std::uint64_t total = xs.total_bytes();
    CHECK(total == 8ull * 10699 * 11899);
    const std::uint64_t budget = 64ull << 20;
    const std::int64_t expect = static_cast<std::int64_t>(((total + budget - 1) / budget + 7) / 8 * 8);
    CHECK(auto_split_count(xs, budget, 8) == expect);
    CHECK(auto_split_count(xs, budget, 8) == 16);

    const auto small = make_info(64, 64, 1, SampleType::U8);
    CHECK(auto_split_count(small, 1 << 20, 4) == 4);  // one split per rank minimum
    CHECK(auto_split_count(small, small.total_bytes() / 2 + 1, 1) == 2);
    CHECK_THROWS_AS(auto_split_count(small, 10, 1), Error);  // budget below one row
}

TEST_CASE("round-robin schedule") {
    const Schedule s = assign_splits(8, 2);
    CHECK(s.splits_for_rank(0) == std::vector<std::size_t>{0, 2, 4, 6});
    CHECK(s.splits_for_rank(1) == std::vector<std::size_t>{1, 3, 5, 7});

    const Schedule odd = assign_splits(5, 2);
    CHECK(odd.splits_for_rank(0).size() == 3);
    CHECK(odd.splits_for_rank(1).size() == 2);

    const Schedule solo = assign_splits(6, 1);
    CHECK(solo.splits_for_rank(0) == std::vector<std::size_t>{0, 1, 2, 3, 4, 5});
}

TEST_CASE("splitting and scheduling properties hold over random cases") {
    std::mt19937 rng(7);
    std::uniform_int_distribution<std::int64_t> dim(1, 300), tile(1, 96), splits(1, 40);
    std::uniform_int_distribution<int> world(1, 9);
    for (int i = 0; i < 1200; ++i) {
        const auto info = make_info(dim(rng), dim(rng));

        const SplitScheme striped = striped_split(info, splits(rng));
        check_exact_tiling(striped, info);
        const SplitScheme tiled = tiled_split(info, tile(rng), tile(rng));
        check_exact_tiling(tiled, info);

        // Determinism: identical inputs, identical schemes.
        const SplitScheme again = striped_split(info, striped.total());
        CHECK(again.splits == striped.splits);

        const int w = world(rng);
        const Schedule schedule = assign_splits(striped.total(), w);
        std::vector<std::size_t> counts(w, 0);
        for (int rank : schedule.assignment) ++counts[rank];
        const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
        CHECK(*hi - *lo <= 1);

        const std::uint64_t row = info.total_bytes() / info.height;
        const std::uint64_t budget = row * (1 + static_cast<std::uint64_t>(dim(rng)));
        const std::int64_t n = auto_split_count(info, budget, w);
        CHECK((n % w == 0 || n == info.height));
        CHECK(n <= info.height);
    }
}
