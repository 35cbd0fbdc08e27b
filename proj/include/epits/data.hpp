#pragma once

#include "epits/common.hpp"

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace epits::data {

/// One univariate weekly series of an epidemic indicator.
struct TimeSeries {
    Vec values;                     // indicator per week
    std::vector<int> month_stamps;  // month 1-12 of each week
    std::string region;
    std::string disease;

    int size() const { return static_cast<int>(values.size()); }
};

struct NormStats {
    double mean = 0.0;
    double std = 1.0;
};

/// All series of one disease plus corpus metadata.
struct DiseaseDataset {
    std::string name;
    std::vector<TimeSeries> series;
    bool seasonal = false;
    std::optional<NormStats> normalization_stats;
};

// The year is split into four 3-month blocks in calendar order starting
// from December: 0 = Dec-Feb, 1 = Mar-May, 2 = Jun-Aug, 3 = Sep-Nov.
inline int month_block(int month) {
    if (month < 1 || month > 12) throw std::invalid_argument("month out of range 1-12");
    return (month % 12) / 3;
}

extern const std::array<const char*, 4> kBlockNames;

/// Disease-relative season labels: block -> season index 1..4, where
/// season 1 is the block with the most yearly peaks and 2..4 follow
/// cyclically.
struct SeasonMap {
    std::string disease;
    int peak_block = 0;             // block index of season 1
    std::array<int, 4> labels{};    // labels[block] = season index 1..4

    int season_of_block(int block) const { return labels[static_cast<std::size_t>(block)]; }
    int season_of_month(int month) const { return season_of_block(month_block(month)); }
};

/// Build the cyclic label assignment from the peak block.
SeasonMap make_season_map(const std::string& disease, int peak_block);

// -- ingestion ------------------------------------------------------------

/// Parse a `disease,region,date,value` CSV into datasets grouped by disease.
/// Rows dated after `cutoff` (ISO date, inclusive bound) are dropped when a
/// cutoff is given. Series containing non-finite values or breaking weekly
/// cadence are rejected with a warning on stderr.
std::vector<DiseaseDataset> load_csv(const std::string& path,
                                     const std::optional<std::string>& cutoff = std::nullopt);

/// Drop series shorter than min_length; drop datasets left empty.
std::vector<DiseaseDataset> filter_sparse(std::vector<DiseaseDataset> datasets,
                                          int min_length = 10);

// -- normalization --------------------------------------------------------

constexpr double kStdEpsilon = 1e-8;

/// Pooled z-score over every value of every series in the dataset
/// (population std, epsilon-guarded). Stats are stored for inversion.
DiseaseDataset dataset_normalize(DiseaseDataset dataset);

/// Inverse of dataset_normalize using the stored stats.
DiseaseDataset dataset_denormalize(DiseaseDataset dataset);

// -- seasons --------------------------------------------------------------

/// Find the month block with the most per-year peaks. A "year" is each
/// consecutive run of up to 52 weeks from the series start; ties go to
/// the earlier calendar block starting from December.
SeasonMap detect_peak_season(const DiseaseDataset& dataset);

/// Majority month block of the segment, mapped through the season labels.
/// Ties go to the chronologically first block.
int assign_segment_season(const std::vector<int>& segment_months, const SeasonMap& map);

}  // namespace epits::data
