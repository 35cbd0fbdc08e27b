#include "epits/synthetic.hpp"

#include "json.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace epits::harness {

namespace {

// civil-date arithmetic (Hinnant's algorithms), days since 1970-01-01
long days_from_civil(int y, int m, int d) {
    y -= m <= 2;
    const long era = (y >= 0 ? y : y - 399) / 400;
    const auto yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = static_cast<unsigned>((153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1);
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<long>(doe) - 719468;
}

void civil_from_days(long z, int& y, int& m, int& d) {
    z += 719468;
    const long era = (z >= 0 ? z : z - 146096) / 146097;
    const auto doe = static_cast<unsigned long>(z - era * 146097);
    const unsigned long yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const long yr = static_cast<long>(yoe) + era * 400;
    const unsigned long doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned long mp = (5 * doy + 2) / 153;
    d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
    m = static_cast<int>(mp < 10 ? mp + 3 : mp - 9);
    y = static_cast<int>(yr + (m <= 2));
}

const long kStartDay = days_from_civil(2000, 1, 3);

}  // namespace

std::string week_date(int week_index) {
    int y, m, d;
    civil_from_days(kStartDay + 7L * week_index, y, m, d);
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", y, m, d);
    return buf;
}

int week_month(int week_index) {
    int y, m, d;
    civil_from_days(kStartDay + 7L * week_index, y, m, d);
    return m;
}

void SyntheticCorpusSpec::validate() const {
    if (diseases.empty()) throw ConfigError("synthetic spec lists no diseases");
    for (const auto& d : diseases) {
        if (d.name.empty()) throw ConfigError("synthetic disease needs a name");
        if (d.period < 4) throw ConfigError(d.name + ": period must be >= 4 weeks");
        if (d.length < d.period) throw ConfigError(d.name + ": length must be >= period");
        if (d.noise < 0) throw ConfigError(d.name + ": noise must be >= 0");
        if (d.peak_month < 1 || d.peak_month > 12)
            throw ConfigError(d.name + ": peak_month must be in 1-12");
        if (d.series_count < 1) throw ConfigError(d.name + ": series_count must be >= 1");
        if (d.amplitude <= 0) throw ConfigError(d.name + ": amplitude must be positive");
    }
}

SyntheticCorpusSpec load_synthetic_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open synthetic spec: " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& err) {
        throw ConfigError(std::string("synthetic spec: ") + err.what());
    }

    SyntheticCorpusSpec spec;
    spec.out_dir = j.value("out_dir", std::string("synthetic_corpus"));
    for (const auto& dj : j.value("diseases", nlohmann::json::array())) {
        SyntheticDiseaseSpec d;
        d.name = dj.value("name", std::string());
        d.period = dj.value("period", d.period);
        d.amplitude = dj.value("amplitude", d.amplitude);
        d.noise = dj.value("noise", d.noise);
        d.seasonal = dj.value("seasonal", d.seasonal);
        d.peak_month = dj.value("peak_month", d.peak_month);
        d.series_count = dj.value("series", d.series_count);
        d.length = dj.value("length", d.length);
        d.level = dj.value("level", d.level);
        spec.diseases.push_back(std::move(d));
    }
    spec.validate();
    return spec;
}

std::vector<data::DiseaseDataset> generate_synthetic_datasets(const SyntheticCorpusSpec& spec,
                                                              std::uint64_t seed) {
    spec.validate();
    std::vector<data::DiseaseDataset> datasets;
    datasets.reserve(spec.diseases.size());

    for (std::size_t di = 0; di < spec.diseases.size(); ++di) {
        const auto& d = spec.diseases[di];
        data::DiseaseDataset ds;
        ds.name = d.name;
        ds.seasonal = d.seasonal;

        // crest at the first mid-peak-month week
        int crest = 0;
        for (int t = 0; t < 52; ++t) {
            if (week_month(t) == d.peak_month) {
                crest = t + 2;
                break;
            }
        }
        const double level = d.level < 0 ? d.amplitude : d.level;

        for (int s = 0; s < d.series_count; ++s) {
            Rng rng(derive_seed(seed, di * 1000 + static_cast<std::size_t>(s)));
            const double scale = uniform_in(rng, 0.85, 1.15);

            data::TimeSeries ts;
            ts.disease = d.name;
            ts.region = "r" + std::to_string(s);
            ts.values.resize(d.length);
            ts.month_stamps.reserve(static_cast<std::size_t>(d.length));

            double bump = 0.0;
            for (int t = 0; t < d.length; ++t) {
                double v;
                if (d.seasonal) {
                    const double phase = 2.0 * M_PI * (t - crest) / d.period;
                    v = level + scale * d.amplitude * std::cos(phase);
                } else {
                    // mostly flat; rare outbreaks that decay over weeks
                    bump *= 0.7;
                    if (unit_double(rng) < 0.025) bump += scale * d.amplitude;
                    v = 0.1 * level + bump;
                }
                v += d.noise * gaussian(rng);
                ts.values[t] = v;
                ts.month_stamps.push_back(week_month(t));
            }
            ds.series.push_back(std::move(ts));
        }
        datasets.push_back(std::move(ds));
    }
    return datasets;
}

std::string generate_synthetic(const SyntheticCorpusSpec& spec, std::uint64_t seed) {
    const auto datasets = generate_synthetic_datasets(spec, seed);
    std::filesystem::create_directories(spec.out_dir);

    nlohmann::json manifest;
    manifest["datasets"] = nlohmann::json::array();

    for (const auto& ds : datasets) {
        const std::string file = ds.name + ".csv";
        std::ofstream out(std::filesystem::path(spec.out_dir) / file,
                          std::ios::trunc | std::ios::binary);
        if (!out) throw std::runtime_error("cannot write corpus file " + file);
        out << "disease,region,date,value\n";
        for (const auto& ts : ds.series) {
            for (int t = 0; t < ts.size(); ++t) {
                char value[40];
                std::snprintf(value, sizeof(value), "%.6f", ts.values[t]);
                out << ds.name << ',' << ts.region << ',' << week_date(t) << ',' << value
                    << '\n';
            }
        }
        manifest["datasets"].push_back({{"file", file}, {"seasonal", ds.seasonal}});
    }

    manifest["seed"] = seed;
    const auto manifest_path = std::filesystem::path(spec.out_dir) / "manifest.json";
    std::ofstream mout(manifest_path, std::ios::trunc | std::ios::binary);
    mout << manifest.dump(2) << '\n';
    return manifest_path.string();
}

}  // namespace epits::harness
