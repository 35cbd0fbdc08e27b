#include "epits/ssl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace epits::ssl {

const char* task_name(Task task) {
    switch (task) {
        case Task::RandMask: return "RandMask";
        case Task::LastMask: return "LastMask";
        case Task::PeakMask: return "PeakMask";
        case Task::SeasonDetect: return "SeasonDetect";
    }
    return "?";
}

std::optional<Task> task_from_name(const std::string& name) {
    for (Task t : {Task::RandMask, Task::LastMask, Task::PeakMask, Task::SeasonDetect}) {
        if (name == task_name(t)) return t;
    }
    return std::nullopt;
}

int mask_count(double gamma, int n_segments) {
    if (gamma < 0.0 || gamma > 1.0) throw std::invalid_argument("gamma must be in [0,1]");
    if (gamma == 0.0) return 0;
    // nudge so exact products like 0.3*10 floor to the intended integer
    const int count = static_cast<int>(std::floor(gamma * n_segments + 1e-9));
    return std::min(n_segments, std::max(1, count));
}

namespace {

SSLBatch::Item masked_item(const model::SegmentSequence& seq, MaskSpec spec) {
    SSLBatch::Item item;
    item.targets = seq.segments;
    item.inputs = seq.segments;
    for (int idx : spec.masked_indices) item.inputs.row(idx).setZero();
    item.mask = std::move(spec);
    return item;
}

}  // namespace

SSLBatch rand_mask(const model::SegmentSequence& seq, double gamma, Rng& rng) {
    const int n = seq.length();
    const int count = mask_count(gamma, n);

    // partial Fisher-Yates over the index range
    std::vector<int> indices(static_cast<std::size_t>(n));
    std::iota(indices.begin(), indices.end(), 0);
    for (int i = 0; i < count; ++i) {
        const auto j = static_cast<int>(bounded(rng, static_cast<std::uint64_t>(n - i))) + i;
        std::swap(indices[static_cast<std::size_t>(i)], indices[static_cast<std::size_t>(j)]);
    }
    indices.resize(static_cast<std::size_t>(count));
    std::sort(indices.begin(), indices.end());

    SSLBatch batch;
    batch.task = Task::RandMask;
    batch.items.push_back(masked_item(seq, {Task::RandMask, gamma, std::move(indices)}));
    return batch;
}

SSLBatch last_mask(const model::SegmentSequence& seq, double gamma) {
    const int n = seq.length();
    const int count = mask_count(gamma, n);
    std::vector<int> indices;
    for (int i = n - count; i < n; ++i) indices.push_back(i);

    SSLBatch batch;
    batch.task = Task::LastMask;
    batch.items.push_back(masked_item(seq, {Task::LastMask, gamma, std::move(indices)}));
    return batch;
}

SSLBatch peak_mask(const model::SegmentSequence& seq, const Vec& raw_series) {
    if (raw_series.size() == 0) throw std::invalid_argument("peak_mask: empty series");
    Eigen::Index peak = 0;
    raw_series.maxCoeff(&peak);  // first occurrence on ties

    const int p = seq.segment_len();
    const int s = seq.stride;
    std::vector<int> indices;
    for (int l = 0; l < seq.length(); ++l) {
        const int lo = l * s;
        const int hi = lo + p - 1;
        if (lo <= peak && peak <= hi) indices.push_back(l);
    }

    SSLBatch batch;
    batch.task = Task::PeakMask;
    batch.items.push_back(masked_item(seq, {Task::PeakMask, 0.0, std::move(indices)}));
    return batch;
}

SSLBatch season_targets(const model::SegmentSequence& seq, const data::SeasonMap& map) {
    if (seq.segment_months.empty())
        throw std::invalid_argument("season_targets: sequence carries no month stamps");
    SSLBatch batch;
    batch.task = Task::SeasonDetect;
    SSLBatch::Item item;
    item.inputs = seq.segments;
    item.targets = seq.segments;
    item.season_labels.reserve(seq.segment_months.size());
    for (const auto& months : seq.segment_months)
        item.season_labels.push_back(data::assign_segment_season(months, map));
    batch.items.push_back(std::move(item));
    return batch;
}

double ssl_loss(const SSLBatch& batch, const std::vector<Mat>& predictions,
                std::vector<Mat>* grads) {
    if (predictions.size() != batch.items.size())
        throw std::invalid_argument("ssl_loss: one prediction per batch item required");
    if (batch.items.empty()) throw std::invalid_argument("ssl_loss: empty batch");
    if (grads) grads->resize(batch.items.size());

    const double weight = 1.0 / static_cast<double>(batch.items.size());
    double loss = 0.0;
    for (std::size_t i = 0; i < batch.items.size(); ++i) {
        const auto& item = batch.items[i];
        Mat* grad = grads ? &(*grads)[i] : nullptr;
        if (batch.task == Task::SeasonDetect) {
            std::vector<int> labels0;
            labels0.reserve(item.season_labels.size());
            for (int label : item.season_labels) labels0.push_back(label - 1);
            loss += weight * model::cross_entropy(predictions[i], labels0, grad);
        } else {
            loss += weight * model::mse_loss(predictions[i], item.targets, grad);
        }
        if (grad) *grad *= weight;
    }
    return loss;
}

void SSLConfig::validate() const {
    if (rand_gamma < 0 || rand_gamma > 1 || last_gamma < 0 || last_gamma > 1)
        throw ConfigError("ssl gamma values must be in [0,1]");
    if (window_len < 1) throw ConfigError("ssl window_len must be >= 1");
    if (windows_per_batch < 1) throw ConfigError("ssl windows_per_batch must be >= 1");
}

Corpus make_corpus(std::vector<data::DiseaseDataset> datasets) {
    Corpus corpus;
    corpus.datasets = std::move(datasets);
    corpus.season_maps.reserve(corpus.datasets.size());
    for (const auto& ds : corpus.datasets) {
        if (ds.seasonal) {
            corpus.season_maps.push_back(data::detect_peak_season(ds));
        } else {
            corpus.season_maps.push_back(std::nullopt);
        }
    }
    return corpus;
}

std::vector<SSLBatch> sample_batch(const Corpus& corpus, const SSLConfig& ssl,
                                   const model::ModelConfig& model, Rng& rng) {
    ssl.validate();
    if (corpus.empty()) throw std::invalid_argument("sample_batch: empty corpus");
    if (ssl.window_len < model.segment_len)
        throw ConfigError("ssl window_len shorter than segment length");

    const auto ds_idx = static_cast<std::size_t>(bounded(rng, corpus.datasets.size()));
    const auto& dataset = corpus.datasets[ds_idx];
    const auto& season_map = corpus.season_maps[ds_idx];

    const bool with_season = dataset.seasonal && season_map &&
                             (!ssl.only_task || *ssl.only_task == Task::SeasonDetect);

    std::vector<SSLBatch> batches;
    auto emit = [&](Task task) {
        if (ssl.only_task && *ssl.only_task != task) return;
        if (task == Task::SeasonDetect && !with_season) return;
        SSLBatch batch;
        batch.task = task;
        batch.dataset = dataset.name;
        batches.push_back(std::move(batch));
    };
    emit(Task::RandMask);
    emit(Task::LastMask);
    emit(Task::PeakMask);
    emit(Task::SeasonDetect);
    if (batches.empty()) return batches;

    struct Window {
        const data::TimeSeries* series;
        int start;
        int len;
    };

    for (int w = 0; w < ssl.windows_per_batch; ++w) {
        // choose a series long enough to segment, then a uniform window
        const Window window = [&] {
            for (int attempt = 0; attempt < 64; ++attempt) {
                const auto& ts =
                    dataset.series[static_cast<std::size_t>(bounded(rng, dataset.series.size()))];
                if (ts.size() >= model.segment_len) {
                    const int len = std::min(ssl.window_len, ts.size());
                    const int start =
                        static_cast<int>(bounded(rng, static_cast<std::uint64_t>(ts.size() - len + 1)));
                    return Window{&ts, start, len};
                }
            }
            throw std::invalid_argument("sample_batch: no series long enough to segment");
        }();

        Vec values = window.series->values.segment(window.start, window.len);
        if (ssl.instance_norm) values = model::instance_normalize(values).first;

        data::TimeSeries slice;
        slice.values = std::move(values);
        slice.month_stamps.assign(
            window.series->month_stamps.begin() + window.start,
            window.series->month_stamps.begin() + window.start + window.len);
        const model::SegmentSequence seq = model::segment(slice, model.segment_len, model.stride);

        for (auto& batch : batches) {
            switch (batch.task) {
                case Task::RandMask:
                    batch.items.push_back(rand_mask(seq, ssl.rand_gamma, rng).items[0]);
                    break;
                case Task::LastMask:
                    batch.items.push_back(last_mask(seq, ssl.last_gamma).items[0]);
                    break;
                case Task::PeakMask:
                    batch.items.push_back(peak_mask(seq, slice.values).items[0]);
                    break;
                case Task::SeasonDetect:
                    batch.items.push_back(season_targets(seq, *season_map).items[0]);
                    break;
            }
        }
    }
    return batches;
}

}  // namespace epits::ssl
