#include "epits/tasks.hpp"

#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <thread>

namespace epits::tasks {

PeakInfo peak_targets(const Vec& season_series) {
    if (season_series.size() == 0) throw std::invalid_argument("peak_targets: empty series");
    Eigen::Index idx = 0;
    const double intensity = season_series.maxCoeff(&idx);
    return {static_cast<int>(idx) + 1, intensity};
}

std::optional<int> onset_week(const Vec& season_series, double baseline) {
    if (!std::isfinite(baseline)) throw std::invalid_argument("onset baseline must be finite");
    for (Eigen::Index i = 0; i + 2 < season_series.size(); ++i) {
        if (season_series[i] > baseline && season_series[i + 1] > baseline &&
            season_series[i + 2] > baseline)
            return static_cast<int>(i) + 1;
    }
    return std::nullopt;
}

double rmse(const Vec& predictions, const Vec& truths) {
    if (predictions.size() != truths.size() || predictions.size() == 0)
        throw std::invalid_argument("rmse: length mismatch");
    return std::sqrt((predictions - truths).array().square().mean());
}

double peak_week_loss(const Vec& logits, int true_week) {
    if (true_week < 1 || true_week > logits.size())
        throw std::invalid_argument("peak_week_loss: true week outside logits range");
    const double m = logits.maxCoeff();
    const Vec shifted = logits.array() - m;
    return std::log(shifted.array().exp().sum()) - shifted[true_week - 1];
}

void RealtimeSpec::validate() const {
    if (horizon < 1) throw ConfigError("horizon must be >= 1");
    if (input_window < 1) throw ConfigError("input_window must be >= 1");
    if (eval_weeks.empty()) throw ConfigError("eval_weeks must be non-empty");
    if (season_len < 1) throw ConfigError("season_len must be >= 1");
    if (season_start < 1) throw ConfigError("season_start must be >= 1");
    if (season_example_stride < 1) throw ConfigError("season_example_stride must be >= 1");
    if (data_fraction <= 0.0 || data_fraction > 1.0)
        throw ConfigError("data_fraction must be in (0,1]");
    if (n_threads < 1) throw ConfigError("n_threads must be >= 1");
    if (probe.stage != train::Stage::Probe) throw ConfigError("probe config stage must be Probe");
    if (finetune.stage != train::Stage::Finetune)
        throw ConfigError("finetune config stage must be Finetune");
}

std::string EvalResult::to_json() const {
    nlohmann::json j;
    j["task"] = task;
    j["dataset"] = dataset;
    j["avg_rmse"] = avg_rmse;
    for (const auto& [horizon, score] : per_horizon) {
        j["per_horizon"][std::to_string(horizon)] = {{"rmse", score.first},
                                                     {"n", score.second}};
    }
    for (const auto& r : records) {
        j["records"].push_back({{"week", r.week},
                                {"horizon", r.horizon},
                                {"prediction", r.prediction},
                                {"truth", r.truth}});
    }
    j["skipped"] = skipped;
    return j.dump(2);
}

std::string EvalResult::to_csv() const {
    std::ostringstream out;
    out << "task,dataset,horizon,rmse,n\n";
    out.precision(12);
    int total = 0;
    for (const auto& [horizon, score] : per_horizon) {
        out << task << ',' << dataset << ',' << horizon << ',' << score.first << ','
            << score.second << '\n';
        total += score.second;
    }
    out << task << ',' << dataset << ",avg," << avg_rmse << ',' << total << '\n';
    return out.str();
}

namespace {

struct WeekOutcome {
    std::vector<PredictionRecord> records;
    std::vector<std::string> skipped;
};

struct NormalizedSlice {
    Vec values;       // normalized training window (possibly fraction-trimmed)
    int offset = 0;   // 0-based index of values[0] in the source series
    double mean = 0.0;
    double std = 1.0;

    double denorm(double v) const { return v * std::max(std, data::kStdEpsilon) + mean; }
};

/// Training window at week w: the most recent data_fraction of the first w
/// values, z-scored with stats drawn from that window alone.
NormalizedSlice make_slice(const Vec& series, int w, double fraction) {
    const auto keep = std::max<int>(1, static_cast<int>(std::ceil(fraction * w)));
    NormalizedSlice slice;
    slice.offset = w - keep;
    Vec raw = series.head(w).tail(keep);
    slice.mean = raw.mean();
    slice.std = std::sqrt((raw.array() - slice.mean).square().mean());
    slice.values = (raw.array() - slice.mean) / std::max(slice.std, data::kStdEpsilon);
    return slice;
}

void two_stage_fit(model::ModelParams& params, const train::SupervisedSet& set,
                   const RealtimeSpec& spec) {
    if (!spec.no_linear_probe && spec.probe.max_epochs > 0)
        train::linear_probe(params, set, spec.probe);
    if (spec.finetune.max_epochs > 0) train::fine_tune(params, set, spec.finetune);
}

WeekOutcome eval_forecast_week(const ModelFactory& factory, const data::TimeSeries& series,
                               const RealtimeSpec& spec, int w) {
    WeekOutcome outcome;
    const int iw = spec.input_window;
    const int k_max = spec.horizon;

    const NormalizedSlice slice = make_slice(series.values, w, spec.data_fraction);
    const auto len = static_cast<int>(slice.values.size());
    if (len < iw) {
        outcome.skipped.push_back("w=" + std::to_string(w) + ": window shorter than input");
        return outcome;
    }

    train::SupervisedSet set;
    set.kind = train::TaskKind::Forecast;
    set.instance_norm = spec.instance_norm;
    for (int t = iw; t + k_max <= len; ++t) {
        train::Example ex;
        ex.input = slice.values.segment(t - iw, iw);
        ex.target_values = slice.values.segment(t, k_max);
        set.examples.push_back(std::move(ex));
    }
    if (set.examples.size() < spec.min_train_examples) {
        outcome.skipped.push_back("w=" + std::to_string(w) + ": too few training examples");
        return outcome;
    }

    model::ModelParams params = factory();
    two_stage_fit(params, set, spec);

    const Vec input = slice.values.tail(iw);
    const Vec pred = train::predict(params, train::TaskKind::Forecast, input, spec.instance_norm);
    for (int k = 1; k <= k_max; ++k) {
        if (w + k > series.size()) {
            outcome.skipped.push_back("w=" + std::to_string(w) + ",k=" + std::to_string(k) +
                                      ": truth beyond series end");
            continue;
        }
        PredictionRecord rec;
        rec.week = w;
        rec.horizon = k;
        rec.prediction = slice.denorm(pred[k - 1]);
        rec.truth = series.values[w + k - 1];
        outcome.records.push_back(rec);
    }
    return outcome;
}

WeekOutcome eval_season_week(const ModelFactory& factory, const data::TimeSeries& series,
                             const RealtimeSpec& spec, int w) {
    WeekOutcome outcome;
    const int iw = spec.input_window;
    const int s0 = spec.season_start;  // 1-based first week of the current season

    const NormalizedSlice slice = make_slice(series.values, w, spec.data_fraction);

    // training pairs come from completed past seasons only
    train::SupervisedSet set;
    set.kind = spec.kind;
    set.instance_norm = spec.instance_norm;
    for (int start = s0 - spec.season_len; start >= 1; start -= spec.season_len) {
        // season window [start, start+season_len), entirely inside the slice
        const int lo = start - 1 - slice.offset;
        const int hi = lo + spec.season_len;
        if (lo < 0 || hi > slice.values.size()) continue;
        const Vec season = slice.values.segment(lo, spec.season_len);

        const PeakInfo peak = peak_targets(season);
        std::optional<int> onset;
        if (spec.kind == train::TaskKind::OnsetWeek) {
            // baseline lives on the raw scale; normalize it into slice space
            const double b = (spec.onset_baseline - slice.mean) /
                             std::max(slice.std, data::kStdEpsilon);
            onset = onset_week(season, b);
            if (!onset) continue;  // season never crossed the baseline
        }

        for (int j = 1; j <= spec.season_len; j += spec.season_example_stride) {
            const int end = lo + j;  // exclusive end of the input window in slice coords
            if (end < iw) continue;
            train::Example ex;
            ex.input = slice.values.segment(end - iw, iw);
            switch (spec.kind) {
                case train::TaskKind::PeakWeek: ex.target_week = peak.week; break;
                case train::TaskKind::PeakIntensity: ex.target_scalar = peak.intensity; break;
                case train::TaskKind::OnsetWeek: ex.target_week = *onset; break;
                case train::TaskKind::Forecast: break;
            }
            set.examples.push_back(std::move(ex));
        }
    }
    if (set.examples.size() < spec.min_train_examples) {
        outcome.skipped.push_back("w=" + std::to_string(w) + ": too few past seasons");
        return outcome;
    }

    // ground truth from the full current season (scoring only; the model
    // never sees data past week w)
    if (s0 - 1 + spec.season_len > series.size())
        throw ConfigError("current season extends past the series end");
    const Vec current = series.values.segment(s0 - 1, spec.season_len);
    double truth = 0.0;
    switch (spec.kind) {
        case train::TaskKind::PeakWeek: truth = peak_targets(current).week; break;
        case train::TaskKind::PeakIntensity: truth = peak_targets(current).intensity; break;
        case train::TaskKind::OnsetWeek: {
            const auto onset = onset_week(current, spec.onset_baseline);
            if (!onset) {
                outcome.skipped.push_back("w=" + std::to_string(w) +
                                          ": season has no onset above baseline");
                return outcome;
            }
            truth = *onset;
            break;
        }
        case train::TaskKind::Forecast: break;
    }

    const int w_slice = w - slice.offset;
    if (w_slice < iw) {
        outcome.skipped.push_back("w=" + std::to_string(w) + ": window shorter than input");
        return outcome;
    }

    model::ModelParams params = factory();
    two_stage_fit(params, set, spec);

    const Vec input = slice.values.segment(w_slice - iw, iw);
    const Vec out = train::predict(params, spec.kind, input, spec.instance_norm);

    PredictionRecord rec;
    rec.week = w;
    rec.horizon = 0;
    rec.prediction =
        spec.kind == train::TaskKind::PeakIntensity ? slice.denorm(out[0]) : out[0];
    rec.truth = truth;
    outcome.records.push_back(rec);
    return outcome;
}

}  // namespace

EvalResult realtime_eval(const ModelFactory& factory, const data::TimeSeries& series,
                         const RealtimeSpec& spec) {
    spec.validate();
    for (int w : spec.eval_weeks) {
        if (w < 1 || w > series.size())
            throw ConfigError("eval week " + std::to_string(w) + " outside the series");
    }

    std::vector<WeekOutcome> outcomes(spec.eval_weeks.size());
    auto eval_one = [&](std::size_t i) {
        const int w = spec.eval_weeks[i];
        outcomes[i] = spec.kind == train::TaskKind::Forecast
                          ? eval_forecast_week(factory, series, spec, w)
                          : eval_season_week(factory, series, spec, w);
    };

    if (spec.n_threads == 1 || spec.eval_weeks.size() == 1) {
        for (std::size_t i = 0; i < spec.eval_weeks.size(); ++i) eval_one(i);
    } else {
        std::atomic<std::size_t> next{0};
        const auto n_workers = std::min<std::size_t>(static_cast<std::size_t>(spec.n_threads),
                                                     spec.eval_weeks.size());
        std::vector<std::thread> workers;
        workers.reserve(n_workers);
        for (std::size_t t = 0; t < n_workers; ++t) {
            workers.emplace_back([&] {
                for (std::size_t i = next.fetch_add(1); i < outcomes.size();
                     i = next.fetch_add(1))
                    eval_one(i);
            });
        }
        for (auto& worker : workers) worker.join();
    }

    EvalResult result;
    result.task = train::task_kind_name(spec.kind);
    result.dataset = series.disease;
    std::map<int, std::vector<double>> squared;
    for (const auto& outcome : outcomes) {
        for (const auto& rec : outcome.records) {
            result.records.push_back(rec);
            const double d = rec.prediction - rec.truth;
            squared[rec.horizon].push_back(d * d);
        }
        result.skipped.insert(result.skipped.end(), outcome.skipped.begin(),
                              outcome.skipped.end());
    }

    double sum = 0.0;
    for (const auto& [horizon, errs] : squared) {
        const double mean =
            std::accumulate(errs.begin(), errs.end(), 0.0) / static_cast<double>(errs.size());
        const double score = std::sqrt(mean);
        result.per_horizon[horizon] = {score, static_cast<int>(errs.size())};
        sum += score;
    }
    result.avg_rmse = squared.empty() ? std::numeric_limits<double>::quiet_NaN()
                                      : sum / static_cast<double>(squared.size());
    return result;
}

}  // namespace epits::tasks
