#pragma once

#include "epits/common.hpp"
#include "epits/data.hpp"
#include "epits/model.hpp"
#include "epits/ssl.hpp"
#include "epits/synthetic.hpp"
#include "epits/tasks.hpp"
#include "epits/train.hpp"

#include <optional>
#include <string>
#include <vector>

namespace epits::harness {

/// Full and cutoff-trimmed views of the corpus named by a manifest.
struct CorpusBundle {
    std::vector<data::DiseaseDataset> full;      // downstream evaluation
    std::vector<data::DiseaseDataset> pretrain;  // rows past each cutoff dropped
};

CorpusBundle load_manifest(const std::string& path, int min_length = 10);

struct AblationFlags {
    bool no_pretrain = false;
    bool no_linear_probe = false;
    bool no_segments = false;       // tokenize single time-stamps: P=1, S=1
    bool no_instance_norm = false;  // dataset-level normalization remains
    std::string exclude_disease;
    std::optional<ssl::Task> only_task;
    double data_fraction = 1.0;
};

/// One experiment: corpus, model, training, task and ablation switches.
/// JSON field paths mirror the structure here, so any scalar can be
/// overridden from the command line as e.g. `--set model.embed_dim=32`.
struct ExperimentConfig {
    std::string manifest;
    std::string output_dir = "out";
    std::vector<std::uint64_t> seeds{1};

    model::ModelConfig model;
    ssl::SSLConfig ssl;

    double learning_rate = 1e-4;
    int pretrain_epochs = 5000;
    int finetune_epochs = 200;
    int probe_epochs = -1;  // -1 = 20% of finetune_epochs
    int patience = 100;

    train::TaskKind task = train::TaskKind::Forecast;
    std::string task_dataset;
    std::string task_region;  // empty = first series of the dataset
    int input_window = 32;
    int eval_start = 0;  // first current week w (1-based)
    int eval_count = 4;
    int eval_step = 1;
    int season_start = 1;
    int season_len = 52;
    double onset_baseline = 2.2;
    int season_example_stride = 4;
    int n_threads = 1;

    AblationFlags ablations;

    void validate() const;
    std::vector<int> eval_weeks() const;

    /// Resolved copy with every default materialized (run provenance).
    std::string to_json() const;
};

ExperimentConfig load_experiment_config(const std::string& path,
                                        const std::vector<std::string>& overrides = {});

/// Model/ssl/realtime settings derived from the config for one seed, with
/// every ablation applied.
struct ResolvedRun {
    model::ModelConfig model;
    ssl::SSLConfig ssl;
    tasks::RealtimeSpec spec;
};

ResolvedRun resolve_run(const ExperimentConfig& config, std::uint64_t seed);

/// Pre-train (unless ablated), fine-tune and evaluate per seed; write
/// eval tables, train reports, checkpoints and provenance under
/// output_dir. Returns one EvalResult per seed, in seed order.
std::vector<tasks::EvalResult> run_experiment(const ExperimentConfig& config);

struct SweepRow {
    double fraction = 1.0;
    std::uint64_t seed = 0;
    double avg_rmse = 0.0;
    bool skipped = false;  // fraction left too little data to fit
};

/// Re-evaluate the experiment restricting fine-tuning to the most recent
/// fraction of each training window; pre-training is shared across rows.
std::vector<SweepRow> sweep_data_fraction(const ExperimentConfig& config,
                                          const std::vector<double>& fractions);

/// Render loss curves, per-horizon RMSE bars, prediction traces and (when
/// a sweep table exists) the RMSE-vs-fraction curve as SVG files.
std::vector<std::string> emit_plots(const std::string& results_dir);

}  // namespace epits::harness
