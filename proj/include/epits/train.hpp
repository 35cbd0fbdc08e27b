#pragma once

#include "epits/common.hpp"
#include "epits/model.hpp"
#include "epits/ssl.hpp"

#include <map>
#include <string>
#include <vector>

namespace epits::train {

enum class Stage { Pretrain, Probe, Finetune };
enum class BatchMode { FullDataset, Windowed };

struct TrainConfig {
    double learning_rate = 1e-4;
    int max_epochs = 5000;
    int patience = 100;
    BatchMode batch_mode = BatchMode::FullDataset;
    Stage stage = Stage::Pretrain;
    std::uint64_t seed = 0;

    int smooth_window = 50;       // pre-train loss smoothing for early stopping
    double val_fraction = 0.1;    // fine-tune holdout: final fraction of the window
    double converge_tol = 1e-10;

    void validate() const;
};

struct TrainReport {
    std::map<std::string, std::vector<double>> loss_curves;  // "total", per task, "train", "val"
    int stop_epoch = 0;
    std::string stop_reason;  // converged | patience | max
    double wall_seconds = 0.0;
    double final_val = 0.0;

    std::string to_json() const;
};

/// Adam over a fixed set of parameter blocks. Gradient views passed to
/// step() must mirror the target views block for block.
class AdamOptimizer {
public:
    AdamOptimizer(std::vector<model::ParamView> targets, double learning_rate);
    void step(const std::vector<model::ParamView>& grads);

private:
    std::vector<model::ParamView> targets_;
    std::vector<Vec> m_, v_;
    double lr_;
    long t_ = 0;
};

/// One multi-task forward/backward pass; accumulates gradients and returns
/// per-task losses keyed by task name.
std::map<std::string, double> ssl_step(const model::ModelParams& params,
                                       const std::vector<ssl::SSLBatch>& batches,
                                       model::ModelParams& grads);

/// Multi-task pre-training over the corpus with hard parameter sharing:
/// every SSL head trains through the one shared backbone. Early stopping
/// watches the smoothed total loss.
TrainReport pretrain(model::ModelParams& params, const ssl::Corpus& corpus,
                     const TrainConfig& config, const ssl::SSLConfig& ssl_config);

// -- supervised fine-tuning -----------------------------------------------------

enum class TaskKind { Forecast, PeakWeek, PeakIntensity, OnsetWeek };

const char* task_kind_name(TaskKind kind);

/// One supervised example: an input window (already in training scale) and
/// the target for the task kind.
struct Example {
    Vec input;
    Vec target_values;     // Forecast: next-K values
    double target_scalar = 0.0;  // PeakIntensity
    int target_week = 1;   // PeakWeek / OnsetWeek, 1-based
};

/// Time-ordered training set for one downstream task.
struct SupervisedSet {
    TaskKind kind = TaskKind::Forecast;
    std::vector<Example> examples;
    bool instance_norm = true;
};

model::TaskHead head_for(TaskKind kind);

/// Full-batch loss over examples [begin, end); optionally accumulates
/// gradients (head-only when backbone_frozen).
double supervised_loss(const model::ModelParams& params, const SupervisedSet& set,
                       std::size_t begin, std::size_t end, model::ModelParams* grads,
                       bool backbone_frozen = false);

/// Model output for one input window, instance-denormalized for value-scale
/// tasks; week tasks return the argmax week (1-based) as a single value.
Vec predict(const model::ModelParams& params, TaskKind kind, const Vec& input,
            bool instance_norm);

/// Stage one of fine-tuning: update only the task head, backbone frozen
/// (bit-identical before/after).
TrainReport linear_probe(model::ModelParams& params, const SupervisedSet& set,
                         const TrainConfig& config);

/// Stage two: update all parameters, early stopping on the held-out tail.
/// Requires config.stage == Finetune (the probe stage precedes it unless
/// the no-linear-probe ablation is active).
TrainReport fine_tune(model::ModelParams& params, const SupervisedSet& set,
                      const TrainConfig& config);

// -- checkpointing ----------------------------------------------------------------

/// Versioned little-endian binary with config, every weight as a 64-bit
/// float, the seed, and a trailing integrity checksum.
void save_checkpoint(const model::ModelParams& params, const std::string& path);
model::ModelParams load_checkpoint(const std::string& path);
model::ModelParams load_checkpoint(const std::string& path, const model::ModelConfig& expected);

}  // namespace epits::train
