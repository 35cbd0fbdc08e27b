#include "epits/data.hpp"
#include "epits/synthetic.hpp"

#include "doctest.h"
#include "test_util.hpp"

#include <array>
#include <cmath>

using namespace epits;
using data::DiseaseDataset;
using data::TimeSeries;
using testutil::TempDir;

namespace {

TimeSeries make_series(const std::vector<double>& values, int start_week = 0,
                       const std::string& disease = "d", const std::string& region = "r") {
    TimeSeries ts;
    ts.disease = disease;
    ts.region = region;
    ts.values = Eigen::Map<const Vec>(values.data(), static_cast<Eigen::Index>(values.size()));
    for (std::size_t i = 0; i < values.size(); ++i)
        ts.month_stamps.push_back(harness::week_month(start_week + static_cast<int>(i)));
    return ts;
}

DiseaseDataset make_dataset(std::vector<TimeSeries> series, bool seasonal = false) {
    DiseaseDataset ds;
    ds.name = series.front().disease;
    ds.seasonal = seasonal;
    ds.series = std::move(series);
    return ds;
}

}  // namespace

TEST_CASE("load_csv groups rows into series") {
    TempDir dir("csv");
    testutil::write_text(dir.file("c.csv"),
                         "disease,region,date,value\n"
                         "measles,us,2001-01-01,1.5\n"
                         "measles,us,2001-01-08,2.5\n"
                         "measles,us,2001-01-15,3.5\n");
    const auto datasets = data::load_csv(dir.file("c.csv"));
    REQUIRE(datasets.size() == 1);
    CHECK(datasets[0].name == "measles");
    REQUIRE(datasets[0].series.size() == 1);
    const auto& ts = datasets[0].series[0];
    CHECK(ts.size() == 3);
    CHECK(ts.values[1] == 2.5);
    CHECK(ts.month_stamps == std::vector<int>{1, 1, 1});
    CHECK(ts.region == "us");
}

TEST_CASE("load_csv on an empty file returns an empty collection") {
    TempDir dir("csv");
    testutil::write_text(dir.file("empty.csv"), "");
    CHECK(data::load_csv(dir.file("empty.csv")).empty());
}

TEST_CASE("load_csv drops series with non-finite values") {
    TempDir dir("csv");
    testutil::write_text(dir.file("c.csv"),
                         "disease,region,date,value\n"
                         "flu,us,2001-01-01,1.0\n"
                         "flu,us,2001-01-08,NaN\n"
                         "flu,jp,2001-01-01,4.0\n");
    const auto datasets = data::load_csv(dir.file("c.csv"));
    REQUIRE(datasets.size() == 1);
    REQUIRE(datasets[0].series.size() == 1);
    CHECK(datasets[0].series[0].region == "jp");
}

TEST_CASE("load_csv reports the offending line") {
    TempDir dir("csv");
    testutil::write_text(dir.file("c.csv"),
                         "disease,region,date,value\n"
                         "flu,us,2001-01-01,1.0\n"
                         "flu,us,not-a-date,2.0\n");
    CHECK_THROWS_WITH_AS(data::load_csv(dir.file("c.csv")),
                         doctest::Contains("line 3"), ParseError);
}

TEST_CASE("load_csv honors the pre-train cutoff date") {
    TempDir dir("csv");
    testutil::write_text(dir.file("c.csv"),
                         "disease,region,date,value\n"
                         "flu,us,2001-01-01,1.0\n"
                         "flu,us,2001-01-08,2.0\n"
                         "flu,us,2001-01-15,3.0\n");
    const auto datasets = data::load_csv(dir.file("c.csv"), std::string("2001-01-08"));
    REQUIRE(datasets.size() == 1);
    CHECK(datasets[0].series[0].size() == 2);
}

TEST_CASE("filter_sparse keeps series of at least min_length") {
    auto ds = make_dataset({make_series(std::vector<double>(5, 1.0)),
                            make_series(std::vector<double>(10, 1.0)),
                            make_series(std::vector<double>(37, 1.0))});
    const auto out = data::filter_sparse({ds});
    REQUIRE(out.size() == 1);
    REQUIRE(out[0].series.size() == 2);
    CHECK(out[0].series[0].size() == 10);
    CHECK(out[0].series[1].size() == 37);

    SUBCASE("min_length 1 is the identity") {
        const auto all = data::filter_sparse({ds}, 1);
        CHECK(all[0].series.size() == 3);
    }
    SUBCASE("datasets with only short series are removed") {
        auto tiny = make_dataset({make_series({1.0, 2.0})});
        CHECK(data::filter_sparse({tiny}).empty());
    }
    SUBCASE("idempotent") {
        const auto twice = data::filter_sparse(data::filter_sparse({ds}));
        REQUIRE(twice.size() == 1);
        CHECK(twice[0].series.size() == 2);
    }
}

TEST_CASE("dataset_normalize pools series and stores stats") {
    auto ds = make_dataset({make_series({2.0, 4.0, 6.0})});
    const auto normalized = data::dataset_normalize(ds);
    REQUIRE(normalized.normalization_stats.has_value());
    CHECK(normalized.normalization_stats->mean == doctest::Approx(4.0));
    CHECK(normalized.normalization_stats->std == doctest::Approx(1.6329931618554518));
    CHECK(normalized.series[0].values[0] == doctest::Approx(-1.224744871391589));
    CHECK(normalized.series[0].values[1] == doctest::Approx(0.0));
    CHECK(normalized.series[0].values[2] == doctest::Approx(1.224744871391589));
}

TEST_CASE("dataset_normalize is idempotent on standardized data") {
    auto ds = make_dataset({make_series({1.0, -1.0, 0.5, -0.5, 2.0, -2.0})});
    const auto once = data::dataset_normalize(ds);
    const auto twice = data::dataset_normalize(once);
    for (int i = 0; i < once.series[0].size(); ++i)
        CHECK(std::abs(once.series[0].values[i] - twice.series[0].values[i]) < 1e-6);
}

TEST_CASE("dataset_normalize handles constant data via the epsilon guard") {
    auto ds = make_dataset({make_series({5.0, 5.0, 5.0})});
    const auto normalized = data::dataset_normalize(ds);
    CHECK(normalized.series[0].values.isZero(0.0));
    const auto back = data::dataset_denormalize(normalized);
    for (int i = 0; i < 3; ++i) CHECK(back.series[0].values[i] == doctest::Approx(5.0));
}

TEST_CASE("dataset_normalize round-trips and standardizes pooled values") {
    Rng rng(42);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<TimeSeries> series;
        const int n_series = 1 + static_cast<int>(bounded(rng, 4));
        for (int s = 0; s < n_series; ++s) {
            std::vector<double> values;
            const int n = 10 + static_cast<int>(bounded(rng, 40));
            for (int i = 0; i < n; ++i) values.push_back(uniform_in(rng, -50.0, 150.0));
            series.push_back(make_series(values));
        }
        auto ds = make_dataset(std::move(series));
        const auto normalized = data::dataset_normalize(ds);

        double sum = 0, sq = 0;
        int n = 0;
        for (const auto& ts : normalized.series) {
            sum += ts.values.sum();
            sq += ts.values.array().square().sum();
            n += ts.size();
        }
        const double mean = sum / n;
        const double var = sq / n - mean * mean;
        CHECK(std::abs(mean) < 1e-6);
        CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-6);

        const auto back = data::dataset_denormalize(normalized);
        for (std::size_t s = 0; s < back.series.size(); ++s)
            for (int i = 0; i < back.series[s].size(); ++i)
                CHECK(std::abs(back.series[s].values[i] - ds.series[s].values[i]) < 1e-9);
    }
}

namespace {

/// Independent tally oracle: argmax month of every (series, 52-week year).
int brute_force_peak_block(const DiseaseDataset& ds) {
    std::array<int, 4> tally{};
    for (const auto& ts : ds.series) {
        for (int start = 0; start < ts.size(); start += 52) {
            const int end = std::min(start + 52, ts.size());
            int best = start;
            for (int i = start; i < end; ++i)
                if (ts.values[i] > ts.values[best]) best = i;
            tally[static_cast<std::size_t>(
                data::month_block(ts.month_stamps[static_cast<std::size_t>(best)]))]++;
        }
    }
    int best = 0;
    for (int b = 1; b < 4; ++b)
        if (tally[static_cast<std::size_t>(b)] > tally[static_cast<std::size_t>(best)]) best = b;
    return best;
}

}  // namespace

TEST_CASE("detect_peak_season finds the January-peaking block") {
    // sinusoid cresting each January, three years of weekly data
    std::vector<double> values;
    int crest = 0;
    for (int t = 0; t < 52; ++t)
        if (harness::week_month(t) == 1) {
            crest = t;
            break;
        }
    for (int t = 0; t < 156; ++t)
        values.push_back(10.0 + 5.0 * std::cos(2.0 * M_PI * (t - crest) / 52.0));
    auto ds = make_dataset({make_series(values)}, true);

    const auto map = data::detect_peak_season(ds);
    CHECK(map.peak_block == 0);  // Dec-Feb
    CHECK(map.season_of_month(1) == 1);
    CHECK(map.season_of_month(3) == 2);   // Mar-May = s2
    CHECK(map.season_of_month(6) == 3);   // Jun-Aug = s3
    CHECK(map.season_of_month(9) == 4);   // Sep-Nov = s4
    CHECK(map.peak_block == brute_force_peak_block(ds));
}

TEST_CASE("season labels follow the peak block cyclically") {
    // a disease peaking in Sep-Nov gets s2 = Dec-Feb
    const auto map = data::make_season_map("flu-us", 3);
    CHECK(map.season_of_month(10) == 1);  // Sep-Nov
    CHECK(map.season_of_month(12) == 2);  // Dec-Feb
    CHECK(map.season_of_month(1) == 2);
    CHECK(map.season_of_month(4) == 3);
    CHECK(map.season_of_month(7) == 4);

    // labels form a bijection
    std::array<bool, 5> seen{};
    for (int b = 0; b < 4; ++b) seen[static_cast<std::size_t>(map.season_of_block(b))] = true;
    for (int s = 1; s <= 4; ++s) CHECK(seen[static_cast<std::size_t>(s)]);
}

TEST_CASE("detect_peak_season breaks block ties toward December") {
    // one peak in March (block 1), one in January (block 0): tie -> block 0
    std::vector<double> values(104, 1.0);
    TimeSeries ts = make_series(values);
    for (int i = 0; i < ts.size(); ++i) {
        if (ts.month_stamps[static_cast<std::size_t>(i)] == 1 && i < 52) ts.values[i] = 9.0;
        if (ts.month_stamps[static_cast<std::size_t>(i)] == 3 && i >= 52) ts.values[i] = 9.0;
    }
    auto ds = make_dataset({ts}, true);
    CHECK(data::detect_peak_season(ds).peak_block == 0);
}

TEST_CASE("detect_peak_season rejects non-seasonal datasets") {
    auto ds = make_dataset({make_series({1.0, 2.0, 3.0})}, false);
    CHECK_THROWS_WITH_AS(data::detect_peak_season(ds),
                         doctest::Contains("non-seasonal"), std::invalid_argument);
}

TEST_CASE("assign_segment_season follows the majority rule") {
    const auto map = data::make_season_map("d", 0);  // s1 = Dec-Feb
    CHECK(data::assign_segment_season({11, 12, 12, 12}, map) == 1);
    CHECK(data::assign_segment_season({2, 2, 3, 3}, map) == 1);  // tie -> Dec-Feb first
    CHECK(data::assign_segment_season({6, 6, 7, 8}, map) == 3);
}

TEST_CASE("assign_segment_season ignores month order") {
    const auto map = data::make_season_map("d", 2);
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<int> months;
        for (int i = 0; i < 6; ++i) months.push_back(1 + static_cast<int>(bounded(rng, 12)));
        auto shuffled = months;
        for (std::size_t i = shuffled.size(); i > 1; --i)
            std::swap(shuffled[i - 1], shuffled[bounded(rng, i)]);
        CHECK(data::assign_segment_season(months, map) ==
              data::assign_segment_season(shuffled, map));
    }
}
