#include "epits/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace epits::data {

const std::array<const char*, 4> kBlockNames = {"Dec-Feb", "Mar-May", "Jun-Aug", "Sep-Nov"};

SeasonMap make_season_map(const std::string& disease, int peak_block) {
    if (peak_block < 0 || peak_block > 3) throw std::invalid_argument("peak_block out of range");
    SeasonMap map;
    map.disease = disease;
    map.peak_block = peak_block;
    for (int i = 0; i < 4; ++i) {
        map.labels[static_cast<std::size_t>((peak_block + i) % 4)] = i + 1;
    }
    return map;
}

namespace {

struct Row {
    std::string disease;
    std::string region;
    std::string date;  // ISO YYYY-MM-DD
    int month = 0;
    double value = 0.0;
};

int parse_month(const std::string& date, int line) {
    // YYYY-MM-DD
    if (date.size() != 10 || date[4] != '-' || date[7] != '-')
        throw ParseError("malformed date '" + date + "'", line);
    for (int i : {0, 1, 2, 3, 5, 6, 8, 9}) {
        if (!std::isdigit(static_cast<unsigned char>(date[static_cast<std::size_t>(i)])))
            throw ParseError("malformed date '" + date + "'", line);
    }
    int month = std::stoi(date.substr(5, 2));
    int day = std::stoi(date.substr(8, 2));
    if (month < 1 || month > 12 || day < 1 || day > 31)
        throw ParseError("date out of range '" + date + "'", line);
    return month;
}

Row parse_row(const std::string& text, int line) {
    std::array<std::string, 4> fields;
    std::size_t start = 0;
    for (int i = 0; i < 4; ++i) {
        std::size_t comma = text.find(',', start);
        if (i < 3) {
            if (comma == std::string::npos)
                throw ParseError("expected 4 comma-separated fields", line);
            fields[static_cast<std::size_t>(i)] = text.substr(start, comma - start);
            start = comma + 1;
        } else {
            if (comma != std::string::npos)
                throw ParseError("expected 4 comma-separated fields", line);
            fields[3] = text.substr(start);
        }
    }
    Row row;
    row.disease = fields[0];
    row.region = fields[1];
    row.date = fields[2];
    row.month = parse_month(fields[2], line);
    if (row.disease.empty() || row.region.empty())
        throw ParseError("empty disease or region field", line);
    try {
        std::size_t used = 0;
        row.value = std::stod(fields[3], &used);
        if (used != fields[3].size()) throw std::invalid_argument("trailing junk");
    } catch (const std::exception&) {
        throw ParseError("malformed value '" + fields[3] + "'", line);
    }
    return row;
}

bool month_step_ok(int prev, int next) {
    return next == prev || next == prev % 12 + 1;
}

}  // namespace

std::vector<DiseaseDataset> load_csv(const std::string& path,
                                     const std::optional<std::string>& cutoff) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open corpus file: " + path);

    // (disease, region) -> dated rows, in file order
    std::map<std::pair<std::string, std::string>, std::vector<Row>> grouped;
    std::string text;
    int line = 0;
    bool saw_header = false;
    while (std::getline(in, text)) {
        ++line;
        if (!text.empty() && text.back() == '\r') text.pop_back();
        if (text.empty()) continue;
        if (!saw_header) {
            if (text != "disease,region,date,value")
                throw ParseError("expected header 'disease,region,date,value'", line);
            saw_header = true;
            continue;
        }
        Row row = parse_row(text, line);
        if (cutoff && row.date > *cutoff) continue;
        grouped[{row.disease, row.region}].push_back(std::move(row));
    }

    std::map<std::string, DiseaseDataset> by_disease;
    for (auto& [key, rows] : grouped) {
        std::stable_sort(rows.begin(), rows.end(),
                         [](const Row& a, const Row& b) { return a.date < b.date; });

        bool ok = true;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (!std::isfinite(rows[i].value)) {
                std::cerr << "warning: dropping series " << key.first << "/" << key.second
                          << ": non-finite value at " << rows[i].date << "\n";
                ok = false;
                break;
            }
            if (i > 0 && (rows[i].date <= rows[i - 1].date ||
                          !month_step_ok(rows[i - 1].month, rows[i].month))) {
                std::cerr << "warning: dropping series " << key.first << "/" << key.second
                          << ": weekly cadence broken at " << rows[i].date << "\n";
                ok = false;
                break;
            }
        }
        if (!ok) continue;

        TimeSeries ts;
        ts.disease = key.first;
        ts.region = key.second;
        ts.values.resize(static_cast<Eigen::Index>(rows.size()));
        ts.month_stamps.reserve(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            ts.values[static_cast<Eigen::Index>(i)] = rows[i].value;
            ts.month_stamps.push_back(rows[i].month);
        }
        auto& ds = by_disease[key.first];
        ds.name = key.first;
        ds.series.push_back(std::move(ts));
    }

    std::vector<DiseaseDataset> out;
    out.reserve(by_disease.size());
    for (auto& [name, ds] : by_disease) out.push_back(std::move(ds));
    return out;
}

std::vector<DiseaseDataset> filter_sparse(std::vector<DiseaseDataset> datasets, int min_length) {
    if (min_length < 1) throw std::invalid_argument("min_length must be >= 1");
    for (auto& ds : datasets) {
        std::erase_if(ds.series,
                      [min_length](const TimeSeries& ts) { return ts.size() < min_length; });
    }
    std::erase_if(datasets, [](const DiseaseDataset& ds) { return ds.series.empty(); });
    return datasets;
}

DiseaseDataset dataset_normalize(DiseaseDataset dataset) {
    double sum = 0.0;
    Eigen::Index n = 0;
    for (const auto& ts : dataset.series) {
        sum += ts.values.sum();
        n += ts.values.size();
    }
    if (n == 0) throw std::invalid_argument("dataset_normalize: dataset has no values");
    const double mean = sum / static_cast<double>(n);

    double sq = 0.0;
    for (const auto& ts : dataset.series) sq += (ts.values.array() - mean).square().sum();
    const double std = std::sqrt(sq / static_cast<double>(n));

    const double denom = std::max(std, kStdEpsilon);
    for (auto& ts : dataset.series) ts.values = (ts.values.array() - mean) / denom;
    dataset.normalization_stats = NormStats{mean, std};
    return dataset;
}

DiseaseDataset dataset_denormalize(DiseaseDataset dataset) {
    if (!dataset.normalization_stats)
        throw std::invalid_argument("dataset_denormalize: no stored stats");
    const auto stats = *dataset.normalization_stats;
    const double denom = std::max(stats.std, kStdEpsilon);
    for (auto& ts : dataset.series) ts.values = ts.values.array() * denom + stats.mean;
    dataset.normalization_stats.reset();
    return dataset;
}

SeasonMap detect_peak_season(const DiseaseDataset& dataset) {
    if (!dataset.seasonal)
        throw std::invalid_argument("season map undefined for non-seasonal disease");

    std::array<int, 4> tally{};
    for (const auto& ts : dataset.series) {
        const int n = ts.size();
        for (int start = 0; start < n; start += 52) {
            const int end = std::min(start + 52, n);
            int best = start;
            for (int i = start + 1; i < end; ++i) {
                if (ts.values[i] > ts.values[best]) best = i;
            }
            ++tally[static_cast<std::size_t>(
                month_block(ts.month_stamps[static_cast<std::size_t>(best)]))];
        }
    }

    int peak = 0;
    for (int b = 1; b < 4; ++b) {
        if (tally[static_cast<std::size_t>(b)] > tally[static_cast<std::size_t>(peak)]) peak = b;
    }
    return make_season_map(dataset.name, peak);
}

int assign_segment_season(const std::vector<int>& segment_months, const SeasonMap& map) {
    if (segment_months.empty())
        throw std::invalid_argument("assign_segment_season: empty segment");
    std::array<int, 4> counts{};
    for (int month : segment_months) ++counts[static_cast<std::size_t>(month_block(month))];
    int best = 0;
    for (int b = 1; b < 4; ++b) {
        if (counts[static_cast<std::size_t>(b)] > counts[static_cast<std::size_t>(best)]) best = b;
    }
    return map.season_of_block(best);
}

}  // namespace epits::data
