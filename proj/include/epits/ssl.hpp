#pragma once

#include "epits/common.hpp"
#include "epits/data.hpp"
#include "epits/model.hpp"

#include <optional>
#include <string>
#include <vector>

namespace epits::ssl {

enum class Task { RandMask, LastMask, PeakMask, SeasonDetect };

const char* task_name(Task task);
std::optional<Task> task_from_name(const std::string& name);

/// Which segments a masking task zeroes. RandMask and LastMask mask
/// max(1, floor(gamma*L)) segments for gamma > 0 and none for gamma == 0.
struct MaskSpec {
    Task task = Task::RandMask;
    double gamma = 0.0;
    std::vector<int> masked_indices;  // 0-based, sorted
};

int mask_count(double gamma, int n_segments);

/// One self-supervised batch for one task: one or more masked/labeled
/// segment sequences with their reconstruction or classification targets.
struct SSLBatch {
    struct Item {
        Mat inputs;                    // masked segments (L×P)
        Mat targets;                   // original segments (reconstruction tasks)
        std::optional<MaskSpec> mask;
        std::vector<int> season_labels;  // 1..4 per segment (SeasonDetect)
    };

    Task task = Task::RandMask;
    std::string dataset;
    std::vector<Item> items;
};

/// Zero a uniformly sampled set of segments; targets keep the originals.
SSLBatch rand_mask(const model::SegmentSequence& seq, double gamma, Rng& rng);

/// Zero the trailing fraction of segments.
SSLBatch last_mask(const model::SegmentSequence& seq, double gamma);

/// Zero every segment whose window covers the series argmax
/// (first occurrence on ties). raw_series is the unsegmented source of seq.
SSLBatch peak_mask(const model::SegmentSequence& seq, const Vec& raw_series);

/// Per-segment season labels via the dataset's season map; inputs unmasked.
SSLBatch season_targets(const model::SegmentSequence& seq, const data::SeasonMap& map);

/// Masking tasks: MSE over all segments (masked and unmasked alike).
/// SeasonDetect: mean cross-entropy over segments. Loss is averaged over
/// the batch items; optional gradients w.r.t. each prediction matrix.
double ssl_loss(const SSLBatch& batch, const std::vector<Mat>& predictions,
                std::vector<Mat>* grads = nullptr);

// -- batch sampling -----------------------------------------------------------

struct SSLConfig {
    double rand_gamma = 0.2;
    double last_gamma = 0.1;
    int window_len = 64;          // sampled training window, truncated to series length
    int windows_per_batch = 4;
    bool instance_norm = true;    // zero-masking then equals the instance mean
    std::optional<Task> only_task;  // ablation: pre-train on a single task

    void validate() const;
};

/// Pre-train corpus with per-dataset season maps precomputed for the
/// seasonal diseases.
struct Corpus {
    std::vector<data::DiseaseDataset> datasets;
    std::vector<std::optional<data::SeasonMap>> season_maps;

    bool empty() const { return datasets.empty(); }
};

Corpus make_corpus(std::vector<data::DiseaseDataset> datasets);

/// One multi-task draw: pick a dataset uniformly, sample contiguous windows
/// uniformly, emit a batch per applicable task (SeasonDetect only for
/// seasonal diseases).
std::vector<SSLBatch> sample_batch(const Corpus& corpus, const SSLConfig& ssl,
                                   const model::ModelConfig& model, Rng& rng);

}  // namespace epits::ssl
