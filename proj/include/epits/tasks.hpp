#pragma once

#include "epits/common.hpp"
#include "epits/data.hpp"
#include "epits/model.hpp"
#include "epits/train.hpp"

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace epits::tasks {

/// Week (1-based) and value of the series maximum, first occurrence on ties.
struct PeakInfo {
    int week = 1;
    double intensity = 0.0;
};

PeakInfo peak_targets(const Vec& season_series);

/// First week of the earliest run of >= 3 consecutive weeks strictly above
/// the baseline; nullopt when no such run exists.
std::optional<int> onset_week(const Vec& season_series, double baseline);

double rmse(const Vec& predictions, const Vec& truths);

/// Cross-entropy of week logits against the observed (1-based) week.
double peak_week_loss(const Vec& logits, int true_week);

// -- rolling real-time evaluation -----------------------------------------------

struct RealtimeSpec {
    train::TaskKind kind = train::TaskKind::Forecast;
    int horizon = 4;              // forecast weeks ahead
    int input_window = 32;        // weeks fed to the model
    std::vector<int> eval_weeks;  // current weeks w (1-based, weeks observed so far)

    // season tasks: the season under evaluation and its week range
    int season_start = 1;         // 1-based index into the series
    int season_len = 52;
    double onset_baseline = 2.2;
    int season_example_stride = 4;  // training examples per past season: every n-th week

    train::TrainConfig probe;     // stage must be Probe
    train::TrainConfig finetune;  // stage must be Finetune
    bool no_linear_probe = false;
    bool instance_norm = true;
    double data_fraction = 1.0;   // most recent fraction of the training window
    std::size_t min_train_examples = 2;
    int n_threads = 1;

    void validate() const;
};

struct PredictionRecord {
    int week = 0;      // current week w the model was fit at
    int horizon = 0;   // k for forecasting, 0 for season tasks
    double prediction = 0.0;
    double truth = 0.0;
};

struct EvalResult {
    std::string task;
    std::string dataset;
    std::map<int, std::pair<double, int>> per_horizon;  // horizon -> (rmse, n)
    double avg_rmse = 0.0;
    std::vector<PredictionRecord> records;
    std::vector<std::string> skipped;  // (w, k) pairs without enough data

    std::string to_json() const;
    std::string to_csv() const;  // task,dataset,horizon,rmse,n
};

using ModelFactory = std::function<model::ModelParams()>;

/// For each current week w: fine-tune a fresh copy of the factory's
/// parameters on data up to w only (two-stage unless no_linear_probe),
/// predict, and score against ground truth. Nothing after week w reaches
/// the model; season-task truth comes from the full season. Weeks are
/// independent and may be evaluated on several threads; results are
/// aggregated in week order regardless.
EvalResult realtime_eval(const ModelFactory& factory, const data::TimeSeries& series,
                         const RealtimeSpec& spec);

}  // namespace epits::tasks
