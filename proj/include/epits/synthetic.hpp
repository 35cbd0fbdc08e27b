#pragma once

#include "epits/common.hpp"
#include "epits/data.hpp"

#include <string>
#include <vector>

namespace epits::harness {

struct SyntheticDiseaseSpec {
    std::string name;
    int period = 52;         // weeks between seasonal peaks
    double amplitude = 1.0;
    double noise = 0.05;
    bool seasonal = true;
    int peak_month = 1;      // 1-12, where the seasonal curve crests
    int series_count = 2;    // one series per synthetic region
    int length = 208;        // weeks
    double level = -1.0;     // mean level; < 0 = amplitude (so the curve bottoms near zero)
};

struct SyntheticCorpusSpec {
    std::string out_dir;
    std::vector<SyntheticDiseaseSpec> diseases;

    void validate() const;
};

SyntheticCorpusSpec load_synthetic_spec(const std::string& path);

/// Seasonal diseases are noisy sinusoids cresting in the configured month;
/// non-seasonal diseases sit at a low level with occasional outbreak bumps.
/// Deterministic given the seed.
std::vector<data::DiseaseDataset> generate_synthetic_datasets(const SyntheticCorpusSpec& spec,
                                                              std::uint64_t seed);

/// Write one CSV per disease plus a corpus manifest into spec.out_dir;
/// returns the manifest path. Byte-identical across runs with one seed.
std::string generate_synthetic(const SyntheticCorpusSpec& spec, std::uint64_t seed);

// weekly ISO dates for generated corpora, starting 2000-01-03
std::string week_date(int week_index);
int week_month(int week_index);

}  // namespace epits::harness
