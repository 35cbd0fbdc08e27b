#include "epits/model.hpp"

#include <cmath>

namespace epits::model {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kInstanceEps = 1e-8;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    return cdf + x * pdf;
}

/// Row-wise layer norm; fills xhat (normalized rows) and inv_std.
Mat layer_norm(const Mat& x, const LayerNormParams& p, Mat& xhat, Vec& inv_std) {
    const Eigen::Index rows = x.rows();
    const Eigen::Index cols = x.cols();
    xhat.resize(rows, cols);
    inv_std.resize(rows);
    Mat out(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const double mu = x.row(r).mean();
        const double var = (x.row(r).array() - mu).square().mean();
        const double is = 1.0 / std::sqrt(var + kLayerNormEps);
        inv_std[r] = is;
        xhat.row(r) = (x.row(r).array() - mu) * is;
        out.row(r) = xhat.row(r).cwiseProduct(p.gamma.transpose()) + p.beta.transpose();
    }
    return out;
}

/// dL/dx for row-wise layer norm; accumulates gamma/beta gradients.
Mat layer_norm_backward(const Mat& dy, const Mat& xhat, const Vec& inv_std,
                        const LayerNormParams& p, LayerNormParams& g) {
    const Eigen::Index rows = dy.rows();
    g.gamma += (dy.cwiseProduct(xhat)).colwise().sum().transpose();
    g.beta += dy.colwise().sum().transpose();
    Mat dx(rows, dy.cols());
    for (Eigen::Index r = 0; r < rows; ++r) {
        const Eigen::RowVectorXd dxhat = dy.row(r).cwiseProduct(p.gamma.transpose());
        const double m1 = dxhat.mean();
        const double m2 = dxhat.cwiseProduct(xhat.row(r)).mean();
        dx.row(r) = inv_std[r] * (dxhat.array() - m1 - xhat.row(r).array() * m2);
    }
    return dx;
}

Mat linear(const Mat& x, const LinearParams& p) {
    return (x * p.w).rowwise() + p.b.transpose();
}

/// Accumulates weight/bias gradients and returns dL/dx.
Mat linear_backward(const Mat& x, const LinearParams& p, const Mat& dy, LinearParams& g) {
    g.w += x.transpose() * dy;
    g.b += dy.colwise().sum().transpose();
    return dy * p.w.transpose();
}

void init_matrix(Mat& m, Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    m.resize(rows, cols);
    const double bound = std::sqrt(1.0 / static_cast<double>(rows));
    for (Eigen::Index c = 0; c < cols; ++c)
        for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = uniform_in(rng, -bound, bound);
}

void init_linear(LinearParams& p, Eigen::Index in, Eigen::Index out, Rng& rng) {
    init_matrix(p.w, in, out, rng);
    p.b = Vec::Zero(out);
}

}  // namespace

void ModelConfig::validate() const {
    if (segment_len < 1) throw ConfigError("segment_len must be >= 1");
    if (stride < 1 || stride > segment_len) throw ConfigError("stride must be in [1, segment_len]");
    if (embed_dim < 2 || embed_dim % 2 != 0) throw ConfigError("embed_dim must be even");
    if (n_layers < 1) throw ConfigError("n_layers must be >= 1");
    if (n_heads < 1 || embed_dim % n_heads != 0)
        throw ConfigError("embed_dim must be divisible by n_heads");
    if (ffn_width < 0) throw ConfigError("ffn_width must be >= 0");
    if (horizon < 1) throw ConfigError("horizon must be >= 1");
    if (season_weeks < 1) throw ConfigError("season_weeks must be >= 1");
}

int segment_count(int series_len, int segment_len, int stride) {
    if (series_len < segment_len) throw std::invalid_argument("series shorter than segment length");
    return (series_len - segment_len) / stride + 1;
}

SegmentSequence segment(const Vec& series, int segment_len, int stride) {
    const int n = static_cast<int>(series.size());
    const int count = segment_count(n, segment_len, stride);
    SegmentSequence seq;
    seq.stride = stride;
    seq.segments.resize(count, segment_len);
    for (int l = 0; l < count; ++l)
        seq.segments.row(l) = series.segment(l * stride, segment_len).transpose();
    return seq;
}

SegmentSequence segment(const data::TimeSeries& series, int segment_len, int stride) {
    SegmentSequence seq = segment(series.values, segment_len, stride);
    seq.segment_months.resize(static_cast<std::size_t>(seq.length()));
    for (int l = 0; l < seq.length(); ++l) {
        auto& months = seq.segment_months[static_cast<std::size_t>(l)];
        months.assign(series.month_stamps.begin() + l * stride,
                      series.month_stamps.begin() + l * stride + segment_len);
    }
    return seq;
}

Vec positional_encoding(int pos, int dim) {
    if (pos < 0) throw std::invalid_argument("position must be >= 0");
    if (dim < 2 || dim % 2 != 0) throw std::invalid_argument("embedding dim must be even");
    Vec enc(dim);
    for (int d = 0; d < dim; d += 2) {
        const double freq = std::pow(10.0, 5.0 * d / dim);
        enc[d] = std::sin(pos / freq);
        enc[d + 1] = std::cos(pos / freq);
    }
    return enc;
}

std::pair<Vec, InstanceStats> instance_normalize(const Vec& series) {
    if (series.size() == 0) throw std::invalid_argument("instance_normalize: empty series");
    InstanceStats stats;
    stats.mean = series.mean();
    stats.std = std::sqrt((series.array() - stats.mean).square().mean());
    const double denom = std::max(stats.std, kInstanceEps);
    Vec normalized = (series.array() - stats.mean) / denom;
    return {std::move(normalized), stats};
}

Vec instance_denormalize(const Vec& output, const InstanceStats& stats) {
    return output.array() * std::max(stats.std, kInstanceEps) + stats.mean;
}

ModelParams init_params(const ModelConfig& config) {
    config.validate();
    const Eigen::Index p = config.segment_len;
    const Eigen::Index d = config.embed_dim;
    const Eigen::Index f = config.ffn();

    ModelParams params;
    params.config = config;
    Rng rng(config.seed);

    init_matrix(params.w1, p, d, rng);
    params.layers.resize(static_cast<std::size_t>(config.n_layers));
    for (auto& layer : params.layers) {
        layer.ln1.gamma = Vec::Ones(d);
        layer.ln1.beta = Vec::Zero(d);
        init_matrix(layer.wq, d, d, rng);
        layer.bq = Vec::Zero(d);
        init_matrix(layer.wk, d, d, rng);
        layer.bk = Vec::Zero(d);
        init_matrix(layer.wv, d, d, rng);
        layer.bv = Vec::Zero(d);
        init_matrix(layer.wo, d, d, rng);
        layer.bo = Vec::Zero(d);
        layer.ln2.gamma = Vec::Ones(d);
        layer.ln2.beta = Vec::Zero(d);
        init_linear(layer.ff1, d, f, rng);
        init_linear(layer.ff2, f, d, rng);
    }
    init_linear(params.recon1, d, f, rng);
    init_linear(params.recon2, f, p, rng);
    init_linear(params.season, d, 4, rng);
    init_linear(params.forecast, d, config.horizon, rng);
    init_linear(params.scalar, d, 1, rng);
    init_linear(params.week, d, config.season_weeks, rng);
    return params;
}

ModelParams zeros_like(const ModelParams& params) {
    ModelParams zero = params;
    for (auto& view : param_views(zero)) {
        Eigen::Map<Vec>(view.ptr, static_cast<Eigen::Index>(view.size())).setZero();
    }
    return zero;
}

namespace {

void push_mat(std::vector<ParamView>& views, const std::string& name, Mat& m) {
    views.push_back({name, m.data(), m.rows(), m.cols()});
}

void push_vec(std::vector<ParamView>& views, const std::string& name, Vec& v) {
    views.push_back({name, v.data(), v.size(), 1});
}

void push_linear(std::vector<ParamView>& views, const std::string& name, LinearParams& p) {
    push_mat(views, name + ".w", p.w);
    push_vec(views, name + ".b", p.b);
}

}  // namespace

std::vector<ParamView> backbone_views(ModelParams& params) {
    std::vector<ParamView> views;
    push_mat(views, "w1", params.w1);
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        auto& layer = params.layers[i];
        const std::string prefix = "layer" + std::to_string(i) + ".";
        push_vec(views, prefix + "ln1.gamma", layer.ln1.gamma);
        push_vec(views, prefix + "ln1.beta", layer.ln1.beta);
        push_mat(views, prefix + "wq", layer.wq);
        push_vec(views, prefix + "bq", layer.bq);
        push_mat(views, prefix + "wk", layer.wk);
        push_vec(views, prefix + "bk", layer.bk);
        push_mat(views, prefix + "wv", layer.wv);
        push_vec(views, prefix + "bv", layer.bv);
        push_mat(views, prefix + "wo", layer.wo);
        push_vec(views, prefix + "bo", layer.bo);
        push_vec(views, prefix + "ln2.gamma", layer.ln2.gamma);
        push_vec(views, prefix + "ln2.beta", layer.ln2.beta);
        push_linear(views, prefix + "ff1", layer.ff1);
        push_linear(views, prefix + "ff2", layer.ff2);
    }
    return views;
}

std::vector<ParamView> head_views(ModelParams& params, TaskHead head) {
    std::vector<ParamView> views;
    switch (head) {
        case TaskHead::Reconstruct:
            push_linear(views, "recon1", params.recon1);
            push_linear(views, "recon2", params.recon2);
            break;
        case TaskHead::Season:
            push_linear(views, "season", params.season);
            break;
        case TaskHead::Forecast:
            push_linear(views, "forecast", params.forecast);
            break;
        case TaskHead::Scalar:
            push_linear(views, "scalar", params.scalar);
            break;
        case TaskHead::Week:
            push_linear(views, "week", params.week);
            break;
    }
    return views;
}

std::vector<ParamView> param_views(ModelParams& params) {
    std::vector<ParamView> views = backbone_views(params);
    for (TaskHead head : {TaskHead::Reconstruct, TaskHead::Season, TaskHead::Forecast,
                          TaskHead::Scalar, TaskHead::Week}) {
        auto hv = head_views(params, head);
        views.insert(views.end(), hv.begin(), hv.end());
    }
    return views;
}

std::size_t param_count(const ModelParams& params) {
    std::size_t n = 0;
    for (const auto& view : param_views(const_cast<ModelParams&>(params))) n += view.size();
    return n;
}

Mat embed_segments(const ModelParams& params, const Mat& segments) {
    if (segments.cols() != params.w1.rows())
        throw ConfigError("embed_segments: segment width does not match projection");
    Mat u = segments * params.w1;
    for (Eigen::Index l = 0; l < u.rows(); ++l)
        u.row(l) += positional_encoding(static_cast<int>(l) + 1, params.config.embed_dim).transpose();
    return u;
}

Mat encoder_forward(const ModelParams& params, const Mat& u, EncodeCache* cache) {
    const int n_heads = params.config.n_heads;
    const Eigen::Index d = params.config.embed_dim;
    const Eigen::Index dh = d / n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    if (u.cols() != d) throw ConfigError("encoder_forward: token width does not match embed_dim");

    EncodeCache local;
    EncodeCache& c = cache ? *cache : local;
    c.u = u;
    c.layers.resize(params.layers.size());

    Mat x = c.u;
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        const auto& lp = params.layers[i];
        auto& lc = c.layers[i];
        lc.x = x;
        lc.ln1 = layer_norm(x, lp.ln1, lc.xhat1, lc.inv_std1);
        lc.q = (lc.ln1 * lp.wq).rowwise() + lp.bq.transpose();
        lc.k = (lc.ln1 * lp.wk).rowwise() + lp.bk.transpose();
        lc.v = (lc.ln1 * lp.wv).rowwise() + lp.bv.transpose();

        lc.ctx.resize(x.rows(), d);
        lc.attn.resize(static_cast<std::size_t>(n_heads));
        for (int h = 0; h < n_heads; ++h) {
            const auto qh = lc.q.middleCols(h * dh, dh);
            const auto kh = lc.k.middleCols(h * dh, dh);
            Mat scores = qh * kh.transpose() * scale;
            for (Eigen::Index r = 0; r < scores.rows(); ++r) {
                const double m = scores.row(r).maxCoeff();
                scores.row(r) = (scores.row(r).array() - m).exp();
                scores.row(r) /= scores.row(r).sum();
            }
            lc.attn[static_cast<std::size_t>(h)] = scores;
            lc.ctx.middleCols(h * dh, dh) = scores * lc.v.middleCols(h * dh, dh);
        }

        lc.a = x + ((lc.ctx * lp.wo).rowwise() + lp.bo.transpose());
        lc.ln2 = layer_norm(lc.a, lp.ln2, lc.xhat2, lc.inv_std2);
        lc.h_pre = (lc.ln2 * lp.ff1.w).rowwise() + lp.ff1.b.transpose();
        lc.h = lc.h_pre.unaryExpr([](double v) { return gelu(v); });
        x = lc.a + ((lc.h * lp.ff2.w).rowwise() + lp.ff2.b.transpose());

        if (!x.allFinite())
            throw NumericError("non-finite values in encoder layer " + std::to_string(i));
    }
    c.z = x;
    return x;
}

Mat encode(const ModelParams& params, const Mat& segments, EncodeCache* cache) {
    EncodeCache local;
    EncodeCache& c = cache ? *cache : local;
    c.input = segments;
    return encoder_forward(params, embed_segments(params, segments), &c);
}

Mat encoder_forward_backward(const ModelParams& params, const EncodeCache& cache, const Mat& dz,
                             ModelParams& grads) {
    const int n_heads = params.config.n_heads;
    const Eigen::Index d = params.config.embed_dim;
    const Eigen::Index dh = d / n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Mat dx = dz;
    for (std::size_t idx = params.layers.size(); idx-- > 0;) {
        const auto& lp = params.layers[idx];
        const auto& lc = cache.layers[idx];
        auto& lg = grads.layers[idx];

        // feed-forward sublayer: out = a + ff2(gelu(ff1(ln2(a))))
        Mat da = dx;
        Mat dh_post = linear_backward(lc.h, lp.ff2, dx, lg.ff2);
        Mat dh_pre = dh_post.cwiseProduct(lc.h_pre.unaryExpr([](double v) { return gelu_grad(v); }));
        Mat dln2 = linear_backward(lc.ln2, lp.ff1, dh_pre, lg.ff1);
        da += layer_norm_backward(dln2, lc.xhat2, lc.inv_std2, lp.ln2, lg.ln2);

        // attention sublayer: a = x + wo(concat_heads(attn * v))
        Mat dxl = da;
        lg.wo += lc.ctx.transpose() * da;
        lg.bo += da.colwise().sum().transpose();
        Mat dctx = da * lp.wo.transpose();

        Mat dq(dctx.rows(), d), dk(dctx.rows(), d), dv(dctx.rows(), d);
        for (int h = 0; h < n_heads; ++h) {
            const auto& attn = lc.attn[static_cast<std::size_t>(h)];
            const auto qh = lc.q.middleCols(h * dh, dh);
            const auto kh = lc.k.middleCols(h * dh, dh);
            const auto vh = lc.v.middleCols(h * dh, dh);
            const auto dctxh = dctx.middleCols(h * dh, dh);

            Mat dattn = dctxh * vh.transpose();
            dv.middleCols(h * dh, dh) = attn.transpose() * dctxh;

            // row softmax backward
            Mat dscores(attn.rows(), attn.cols());
            for (Eigen::Index r = 0; r < attn.rows(); ++r) {
                const double dot = dattn.row(r).dot(attn.row(r));
                dscores.row(r) = attn.row(r).array() * (dattn.row(r).array() - dot);
            }
            dq.middleCols(h * dh, dh) = dscores * kh * scale;
            dk.middleCols(h * dh, dh) = dscores.transpose() * qh * scale;
        }

        lg.wq += lc.ln1.transpose() * dq;
        lg.bq += dq.colwise().sum().transpose();
        lg.wk += lc.ln1.transpose() * dk;
        lg.bk += dk.colwise().sum().transpose();
        lg.wv += lc.ln1.transpose() * dv;
        lg.bv += dv.colwise().sum().transpose();
        Mat dln1 = dq * lp.wq.transpose() + dk * lp.wk.transpose() + dv * lp.wv.transpose();
        dxl += layer_norm_backward(dln1, lc.xhat1, lc.inv_std1, lp.ln1, lg.ln1);
        dx = std::move(dxl);
    }
    return dx;
}

void encode_backward(const ModelParams& params, const EncodeCache& cache, const Mat& dz,
                     ModelParams& grads) {
    const Mat du = encoder_forward_backward(params, cache, dz, grads);
    // embedding: u = segments * w1 + pos
    grads.w1 += cache.input.transpose() * du;
}

Mat head_reconstruct(const ModelParams& params, const Mat& z, ReconCache* cache) {
    ReconCache local;
    ReconCache& c = cache ? *cache : local;
    c.z = z;
    c.h_pre = linear(z, params.recon1);
    c.h = c.h_pre.unaryExpr([](double v) { return gelu(v); });
    return linear(c.h, params.recon2);
}

void head_reconstruct_backward(const ModelParams& params, const ReconCache& cache, const Mat& dout,
                               ModelParams& grads, Mat& dz) {
    Mat dh = linear_backward(cache.h, params.recon2, dout, grads.recon2);
    Mat dh_pre = dh.cwiseProduct(cache.h_pre.unaryExpr([](double v) { return gelu_grad(v); }));
    dz = linear_backward(cache.z, params.recon1, dh_pre, grads.recon1);
}

Mat head_season(const ModelParams& params, const Mat& z) { return linear(z, params.season); }

void head_season_backward(const ModelParams& params, const Mat& z, const Mat& dout,
                          ModelParams& grads, Mat& dz) {
    dz = linear_backward(z, params.season, dout, grads.season);
}

namespace {

Vec pooled_head(const LinearParams& head, const Mat& z) {
    const Eigen::RowVectorXd zbar = z.colwise().mean();
    return (zbar * head.w).transpose() + head.b;
}

}  // namespace

Vec head_forecast(const ModelParams& params, const Mat& z) { return pooled_head(params.forecast, z); }
Vec head_scalar(const ModelParams& params, const Mat& z) { return pooled_head(params.scalar, z); }
Vec head_week(const ModelParams& params, const Mat& z) { return pooled_head(params.week, z); }

void pooled_head_backward(const LinearParams& head, const Mat& z, const Vec& dout,
                          LinearParams& head_grads, Mat& dz) {
    const Eigen::RowVectorXd zbar = z.colwise().mean();
    head_grads.w += zbar.transpose() * dout.transpose();
    head_grads.b += dout;
    const Eigen::RowVectorXd dzbar = dout.transpose() * head.w.transpose();
    dz = Mat::Zero(z.rows(), z.cols());
    dz.rowwise() += dzbar / static_cast<double>(z.rows());
}

double mse_loss(const Mat& pred, const Mat& target, Mat* grad) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols())
        throw std::invalid_argument("mse_loss: shape mismatch");
    const auto n = static_cast<double>(pred.size());
    const Mat diff = pred - target;
    if (grad) *grad = 2.0 * diff / n;
    return diff.array().square().sum() / n;
}

double cross_entropy(const Mat& logits, const std::vector<int>& labels, Mat* grad) {
    if (static_cast<std::size_t>(logits.rows()) != labels.size())
        throw std::invalid_argument("cross_entropy: label count does not match logit rows");
    const auto rows = static_cast<double>(logits.rows());
    double loss = 0.0;
    if (grad) grad->resize(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const int label = labels[static_cast<std::size_t>(r)];
        if (label < 0 || label >= logits.cols())
            throw std::invalid_argument("cross_entropy: label out of range");
        const double m = logits.row(r).maxCoeff();
        const Eigen::RowVectorXd shifted = logits.row(r).array() - m;
        const double lse = std::log(shifted.array().exp().sum());
        loss += lse - shifted[label];
        if (grad) {
            grad->row(r) = (shifted.array() - lse).exp() / rows;
            (*grad)(r, label) -= 1.0 / rows;
        }
    }
    return loss / rows;
}

Vec softmax(const Vec& logits) {
    const double m = logits.maxCoeff();
    Vec e = (logits.array() - m).exp();
    return e / e.sum();
}

}  // namespace epits::model
