#pragma once

#include "epits/common.hpp"
#include "epits/data.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace epits::model {

struct ModelConfig {
    int segment_len = 4;     // weeks per segment
    int stride = 1;          // weeks between segment starts
    int embed_dim = 64;
    int n_layers = 6;
    int n_heads = 8;
    int ffn_width = 0;       // 0 = 4 * embed_dim
    int horizon = 4;         // forecast head width (weeks ahead)
    int season_weeks = 52;   // week-classifier head width
    std::uint64_t seed = 0;

    int ffn() const { return ffn_width > 0 ? ffn_width : 4 * embed_dim; }
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

/// Tokenized view of one series: row l holds the values at positions
/// l*stride .. l*stride+segment_len-1 (0-based). Trailing values not
/// covered by a full segment are dropped.
struct SegmentSequence {
    Mat segments;                                   // L × P
    std::vector<std::vector<int>> segment_months;   // empty unless built from a TimeSeries
    int stride = 1;

    int length() const { return static_cast<int>(segments.rows()); }
    int segment_len() const { return static_cast<int>(segments.cols()); }
};

int segment_count(int series_len, int segment_len, int stride);
SegmentSequence segment(const Vec& series, int segment_len, int stride);
SegmentSequence segment(const data::TimeSeries& series, int segment_len, int stride);

/// Sinusoidal encoding of a (1-based) segment position. Entry d is
/// sin(pos / 10^(5d/D)) for even d and cos(pos / 10^(5(d-1)/D)) for odd d.
Vec positional_encoding(int pos, int dim);

// -- reversible instance normalization --------------------------------------

struct InstanceStats {
    double mean = 0.0;
    double std = 1.0;
};

std::pair<Vec, InstanceStats> instance_normalize(const Vec& series);
Vec instance_denormalize(const Vec& output, const InstanceStats& stats);

// -- parameters --------------------------------------------------------------

// Row-token convention throughout: activations are L×D with one row per
// segment, so a linear layer is y = x * w + b with w of shape in×out.
struct LinearParams {
    Mat w;
    Vec b;
};

struct LayerNormParams {
    Vec gamma;
    Vec beta;
};

struct EncoderLayerParams {
    LayerNormParams ln1, ln2;
    Mat wq, wk, wv, wo;
    Vec bq, bk, bv, bo;
    LinearParams ff1, ff2;
};

enum class TaskHead { Reconstruct, Season, Forecast, Scalar, Week };

/// All learnable values. The backbone (w1 + encoder layers) is shared by
/// every head; heads are independent output layers.
struct ModelParams {
    ModelConfig config;
    Mat w1;                                   // P×D segment projection
    std::vector<EncoderLayerParams> layers;
    LinearParams recon1, recon2;              // tokenwise D→ffn→P
    LinearParams season;                      // tokenwise D→4
    LinearParams forecast;                    // pooled D→horizon
    LinearParams scalar;                      // pooled D→1
    LinearParams week;                        // pooled D→season_weeks
};

/// Seeded initialization: weights uniform in ±sqrt(1/fan_in), biases zero,
/// layer-norm scales one.
ModelParams init_params(const ModelConfig& config);

/// Same shapes, all learnable values zero (gradient / optimizer storage).
ModelParams zeros_like(const ModelParams& params);

/// Contiguous view of one parameter block, in the fixed traversal order
/// shared by initialization, optimization and serialization.
struct ParamView {
    std::string name;
    double* ptr;
    Eigen::Index rows;
    Eigen::Index cols;

    std::size_t size() const { return static_cast<std::size_t>(rows * cols); }
};

std::vector<ParamView> param_views(ModelParams& params);
std::vector<ParamView> backbone_views(ModelParams& params);
std::vector<ParamView> head_views(ModelParams& params, TaskHead head);
std::size_t param_count(const ModelParams& params);

// -- forward / backward -------------------------------------------------------

struct LayerCache {
    Mat x;                    // layer input
    Mat xhat1, ln1;           // pre-attention norm: normalized rows, affine output
    Vec inv_std1;
    Mat q, k, v;
    std::vector<Mat> attn;    // per-head row-softmax weights (L×L)
    Mat ctx;                  // concatenated head outputs
    Mat a;                    // x + attention residual
    Mat xhat2, ln2;
    Vec inv_std2;
    Mat h_pre, h;             // feed-forward hidden, pre/post activation
};

struct EncodeCache {
    Mat input;                // L×P segment matrix as fed to the model
    Mat u;                    // embedded + positional
    std::vector<LayerCache> layers;
    Mat z;                    // encoder output, L×D
};

/// u^(l) = w1ᵀ x̂^(l) + pos(l), stacked as rows.
Mat embed_segments(const ModelParams& params, const Mat& segments);

/// Pre-norm encoder stack over embedded tokens u (L×D); returns z (L×D).
/// Throws NumericError naming the layer if an intermediate is non-finite.
Mat encoder_forward(const ModelParams& params, const Mat& u, EncodeCache* cache = nullptr);

/// embed_segments then encoder_forward.
Mat encode(const ModelParams& params, const Mat& segments, EncodeCache* cache = nullptr);

/// d(loss)/du for the encoder stack alone; accumulates layer gradients.
Mat encoder_forward_backward(const ModelParams& params, const EncodeCache& cache, const Mat& dz,
                             ModelParams& grads);

/// Accumulates d(loss)/d(params) into `grads` given d(loss)/dz.
void encode_backward(const ModelParams& params, const EncodeCache& cache, const Mat& dz,
                     ModelParams& grads);

struct ReconCache {
    Mat z, h_pre, h;
};

// Tokenwise heads.
Mat head_reconstruct(const ModelParams& params, const Mat& z, ReconCache* cache = nullptr);
void head_reconstruct_backward(const ModelParams& params, const ReconCache& cache, const Mat& dout,
                               ModelParams& grads, Mat& dz);
Mat head_season(const ModelParams& params, const Mat& z);
void head_season_backward(const ModelParams& params, const Mat& z, const Mat& dout,
                          ModelParams& grads, Mat& dz);

// Pooled heads: mean over token embeddings, then one linear map.
Vec head_forecast(const ModelParams& params, const Mat& z);
Vec head_scalar(const ModelParams& params, const Mat& z);
Vec head_week(const ModelParams& params, const Mat& z);
void pooled_head_backward(const LinearParams& head, const Mat& z, const Vec& dout,
                          LinearParams& head_grads, Mat& dz);

// -- losses --------------------------------------------------------------------

/// Mean squared error over all entries; optional gradient w.r.t. pred.
double mse_loss(const Mat& pred, const Mat& target, Mat* grad = nullptr);

/// Mean cross-entropy of logit rows against 0-based class labels.
double cross_entropy(const Mat& logits, const std::vector<int>& labels, Mat* grad = nullptr);

Vec softmax(const Vec& logits);

}  // namespace epits::model
