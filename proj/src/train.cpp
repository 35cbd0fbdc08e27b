#include "epits/train.hpp"

#include "json.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace epits::train {

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

double elapsed_seconds(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

void TrainConfig::validate() const {
    if (learning_rate < 0) throw ConfigError("learning_rate must be >= 0");
    if (max_epochs < 0) throw ConfigError("max_epochs must be >= 0");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (val_fraction < 0 || val_fraction >= 1) throw ConfigError("val_fraction must be in [0,1)");
    if (smooth_window < 1) throw ConfigError("smooth_window must be >= 1");
}

std::string TrainReport::to_json() const {
    nlohmann::json j;
    j["stop_epoch"] = stop_epoch;
    j["stop_reason"] = stop_reason;
    j["wall_seconds"] = wall_seconds;
    j["final_val"] = final_val;
    for (const auto& [name, curve] : loss_curves) j["losses"][name] = curve;
    return j.dump(2);
}

AdamOptimizer::AdamOptimizer(std::vector<model::ParamView> targets, double learning_rate)
    : targets_(std::move(targets)), lr_(learning_rate) {
    m_.reserve(targets_.size());
    v_.reserve(targets_.size());
    for (const auto& view : targets_) {
        m_.push_back(Vec::Zero(static_cast<Eigen::Index>(view.size())));
        v_.push_back(Vec::Zero(static_cast<Eigen::Index>(view.size())));
    }
}

void AdamOptimizer::step(const std::vector<model::ParamView>& grads) {
    if (grads.size() != targets_.size())
        throw std::invalid_argument("AdamOptimizer: gradient views do not match targets");
    ++t_;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < targets_.size(); ++i) {
        const auto n = static_cast<Eigen::Index>(targets_[i].size());
        if (grads[i].size() != targets_[i].size())
            throw std::invalid_argument("AdamOptimizer: gradient shape mismatch at " +
                                        targets_[i].name);
        Eigen::Map<Vec> p(targets_[i].ptr, n);
        Eigen::Map<const Vec> g(grads[i].ptr, n);
        m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * g;
        v_[i] = kBeta2 * v_[i].array() + (1.0 - kBeta2) * g.array().square();
        p.array() -= lr_ * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + kAdamEps);
    }
}

std::map<std::string, double> ssl_step(const model::ModelParams& params,
                                       const std::vector<ssl::SSLBatch>& batches,
                                       model::ModelParams& grads) {
    std::map<std::string, double> losses;
    for (const auto& batch : batches) {
        std::vector<Mat> predictions;
        std::vector<model::EncodeCache> caches(batch.items.size());
        std::vector<model::ReconCache> recon_caches(batch.items.size());
        predictions.reserve(batch.items.size());
        for (std::size_t i = 0; i < batch.items.size(); ++i) {
            const Mat z = model::encode(params, batch.items[i].inputs, &caches[i]);
            if (batch.task == ssl::Task::SeasonDetect) {
                predictions.push_back(model::head_season(params, z));
            } else {
                predictions.push_back(model::head_reconstruct(params, z, &recon_caches[i]));
            }
        }

        std::vector<Mat> pred_grads;
        const double loss = ssl::ssl_loss(batch, predictions, &pred_grads);
        losses[ssl::task_name(batch.task)] = loss;

        for (std::size_t i = 0; i < batch.items.size(); ++i) {
            Mat dz;
            if (batch.task == ssl::Task::SeasonDetect) {
                model::head_season_backward(params, caches[i].z, pred_grads[i], grads, dz);
            } else {
                model::head_reconstruct_backward(params, recon_caches[i], pred_grads[i], grads, dz);
            }
            model::encode_backward(params, caches[i], dz, grads);
        }
    }
    return losses;
}

TrainReport pretrain(model::ModelParams& params, const ssl::Corpus& corpus,
                     const TrainConfig& config, const ssl::SSLConfig& ssl_config) {
    config.validate();
    ssl_config.validate();
    const auto start = std::chrono::steady_clock::now();

    TrainReport report;
    AdamOptimizer adam(model::param_views(params), config.learning_rate);

    std::vector<double> totals;
    double best_smoothed = std::numeric_limits<double>::infinity();
    int wait = 0;
    report.stop_reason = "max";
    report.stop_epoch = config.max_epochs;

    for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(epoch)));
        const auto batches = ssl::sample_batch(corpus, ssl_config, params.config, rng);

        model::ModelParams grads = model::zeros_like(params);
        std::map<std::string, double> losses;
        try {
            losses = ssl_step(params, batches, grads);
        } catch (const NumericError& err) {
            throw NumericError(std::string(err.what()) + " [dataset " +
                               (batches.empty() ? "?" : batches.front().dataset) + ", epoch " +
                               std::to_string(epoch) + "]");
        }

        double total = 0.0;
        for (const auto& [name, value] : losses) {
            total += value;
            report.loss_curves[name].push_back(value);
        }
        if (!std::isfinite(total)) {
            throw NumericError("non-finite pre-train loss [dataset " + batches.front().dataset +
                               ", epoch " + std::to_string(epoch) + "]");
        }
        report.loss_curves["total"].push_back(total);
        totals.push_back(total);

        adam.step(model::param_views(grads));

        const auto window = std::min<std::size_t>(totals.size(),
                                                  static_cast<std::size_t>(config.smooth_window));
        const double smoothed =
            std::accumulate(totals.end() - static_cast<std::ptrdiff_t>(window), totals.end(), 0.0) /
            static_cast<double>(window);
        report.final_val = smoothed;

        if (smoothed < best_smoothed) {
            best_smoothed = smoothed;
            wait = 0;
        } else {
            ++wait;
        }
        if (smoothed <= config.converge_tol) {
            report.stop_reason = "converged";
            report.stop_epoch = epoch + 1;
            break;
        }
        if (wait >= config.patience) {
            report.stop_reason = "patience";
            report.stop_epoch = epoch + 1;
            break;
        }
    }

    report.wall_seconds = elapsed_seconds(start);
    return report;
}

const char* task_kind_name(TaskKind kind) {
    switch (kind) {
        case TaskKind::Forecast: return "forecast";
        case TaskKind::PeakWeek: return "peak_week";
        case TaskKind::PeakIntensity: return "peak_intensity";
        case TaskKind::OnsetWeek: return "onset_week";
    }
    return "?";
}

model::TaskHead head_for(TaskKind kind) {
    switch (kind) {
        case TaskKind::Forecast: return model::TaskHead::Forecast;
        case TaskKind::PeakWeek: return model::TaskHead::Week;
        case TaskKind::PeakIntensity: return model::TaskHead::Scalar;
        case TaskKind::OnsetWeek: return model::TaskHead::Week;
    }
    return model::TaskHead::Forecast;
}

namespace {

/// Loss and gradients for a single example. Value-scale predictions are
/// instance-denormalized before the loss, so gradients carry the scale.
double example_loss(const model::ModelParams& params, const SupervisedSet& set,
                    const Example& example, double weight, model::ModelParams* grads,
                    bool backbone_frozen) {
    Vec input = example.input;
    model::InstanceStats stats;
    if (set.instance_norm) std::tie(input, stats) = model::instance_normalize(input);
    const double sigma = set.instance_norm ? std::max(stats.std, 1e-8) : 1.0;
    const double mu = set.instance_norm ? stats.mean : 0.0;

    const auto seq = model::segment(input, params.config.segment_len, params.config.stride);
    model::EncodeCache cache;
    const Mat z = model::encode(params, seq.segments, &cache);

    double loss = 0.0;
    Vec dout;
    const model::LinearParams* head = nullptr;
    model::LinearParams* head_grad = nullptr;

    switch (set.kind) {
        case TaskKind::Forecast: {
            const Vec raw = model::head_forecast(params, z);
            const Vec pred = raw.array() * sigma + mu;
            const Vec diff = pred - example.target_values;
            const auto n = static_cast<double>(diff.size());
            loss = diff.squaredNorm() / n;
            dout = (2.0 / n) * diff * sigma;
            head = &params.forecast;
            if (grads) head_grad = &grads->forecast;
            break;
        }
        case TaskKind::PeakIntensity: {
            const Vec raw = model::head_scalar(params, z);
            const double pred = raw[0] * sigma + mu;
            const double diff = pred - example.target_scalar;
            loss = diff * diff;
            dout = Vec::Constant(1, 2.0 * diff * sigma);
            head = &params.scalar;
            if (grads) head_grad = &grads->scalar;
            break;
        }
        case TaskKind::PeakWeek:
        case TaskKind::OnsetWeek: {
            const Vec logits = model::head_week(params, z);
            const int label = example.target_week - 1;
            if (label < 0 || label >= logits.size())
                throw std::invalid_argument("week label out of range");
            const double m = logits.maxCoeff();
            const Vec shifted = logits.array() - m;
            const double lse = std::log(shifted.array().exp().sum());
            loss = lse - shifted[label];
            dout = (shifted.array() - lse).exp();
            dout[label] -= 1.0;
            head = &params.week;
            if (grads) head_grad = &grads->week;
            break;
        }
    }

    if (grads) {
        Mat dz;
        model::pooled_head_backward(*head, z, Vec(dout * weight), *head_grad, dz);
        if (!backbone_frozen) model::encode_backward(params, cache, dz, *grads);
    }
    return loss;
}

struct Split {
    std::size_t train_end;
    std::size_t total;
};

Split holdout_split(const SupervisedSet& set, double val_fraction) {
    const std::size_t total = set.examples.size();
    auto val = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(total)));
    if (val_fraction > 0 && val == 0 && total > 1) val = 1;
    return {total - val, total};
}

}  // namespace

double supervised_loss(const model::ModelParams& params, const SupervisedSet& set,
                       std::size_t begin, std::size_t end, model::ModelParams* grads,
                       bool backbone_frozen) {
    if (begin >= end || end > set.examples.size())
        throw std::invalid_argument("supervised_loss: empty example range");
    const double weight = 1.0 / static_cast<double>(end - begin);
    double loss = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
        loss += weight *
                example_loss(params, set, set.examples[i], weight, grads, backbone_frozen);
    }
    return loss;
}

Vec predict(const model::ModelParams& params, TaskKind kind, const Vec& input,
            bool instance_norm) {
    Vec x = input;
    model::InstanceStats stats;
    if (instance_norm) std::tie(x, stats) = model::instance_normalize(x);
    const auto seq = model::segment(x, params.config.segment_len, params.config.stride);
    const Mat z = model::encode(params, seq.segments);

    switch (kind) {
        case TaskKind::Forecast: {
            Vec out = model::head_forecast(params, z);
            return instance_norm ? model::instance_denormalize(out, stats) : out;
        }
        case TaskKind::PeakIntensity: {
            Vec out = model::head_scalar(params, z);
            return instance_norm ? model::instance_denormalize(out, stats) : out;
        }
        case TaskKind::PeakWeek:
        case TaskKind::OnsetWeek: {
            const Vec logits = model::head_week(params, z);
            Eigen::Index best = 0;
            logits.maxCoeff(&best);
            return Vec::Constant(1, static_cast<double>(best + 1));
        }
    }
    throw std::logic_error("predict: unknown task kind");
}

namespace {

struct CachedExample {
    Mat z;
    double sigma = 1.0;
    double mu = 0.0;
};

/// Head loss on a precomputed embedding; accumulates head gradients only.
double cached_head_loss(const model::ModelParams& params, const SupervisedSet& set,
                        const Example& example, const CachedExample& cached, double weight,
                        model::ModelParams* grads) {
    double loss = 0.0;
    Vec dout;
    const model::LinearParams* head = nullptr;
    model::LinearParams* head_grad = nullptr;

    switch (set.kind) {
        case TaskKind::Forecast: {
            const Vec raw = model::head_forecast(params, cached.z);
            const Vec diff = (raw.array() * cached.sigma + cached.mu).matrix() -
                             example.target_values;
            const auto n = static_cast<double>(diff.size());
            loss = diff.squaredNorm() / n;
            dout = (2.0 / n) * diff * cached.sigma;
            head = &params.forecast;
            if (grads) head_grad = &grads->forecast;
            break;
        }
        case TaskKind::PeakIntensity: {
            const Vec raw = model::head_scalar(params, cached.z);
            const double diff = raw[0] * cached.sigma + cached.mu - example.target_scalar;
            loss = diff * diff;
            dout = Vec::Constant(1, 2.0 * diff * cached.sigma);
            head = &params.scalar;
            if (grads) head_grad = &grads->scalar;
            break;
        }
        case TaskKind::PeakWeek:
        case TaskKind::OnsetWeek: {
            const Vec logits = model::head_week(params, cached.z);
            const int label = example.target_week - 1;
            if (label < 0 || label >= logits.size())
                throw std::invalid_argument("week label out of range");
            const double m = logits.maxCoeff();
            const Vec shifted = logits.array() - m;
            const double lse = std::log(shifted.array().exp().sum());
            loss = lse - shifted[label];
            dout = (shifted.array() - lse).exp();
            dout[label] -= 1.0;
            head = &params.week;
            if (grads) head_grad = &grads->week;
            break;
        }
    }

    if (grads) {
        Mat dz_unused;
        model::pooled_head_backward(*head, cached.z, Vec(dout * weight), *head_grad, dz_unused);
    }
    return loss;
}

/// Shared supervised training loop. The probe stage freezes the backbone
/// and optimizes only the task head, so each example is encoded once.
TrainReport supervised_train(model::ModelParams& params, const SupervisedSet& set,
                             const TrainConfig& config, bool head_only) {
    config.validate();
    if (set.examples.empty()) throw std::invalid_argument("supervised training set is empty");
    const auto start = std::chrono::steady_clock::now();

    const Split split = holdout_split(set, config.val_fraction);
    const std::size_t train_end = std::max<std::size_t>(split.train_end, 1);
    const bool has_val = train_end < split.total;

    TrainReport report;
    report.stop_reason = "max";
    report.stop_epoch = config.max_epochs;

    auto targets = head_only ? model::head_views(params, head_for(set.kind))
                             : model::param_views(params);
    AdamOptimizer adam(std::move(targets), config.learning_rate);

    std::vector<CachedExample> cache;
    if (head_only) {
        cache.reserve(set.examples.size());
        for (const auto& example : set.examples) {
            CachedExample ce;
            Vec input = example.input;
            if (set.instance_norm) {
                auto [normalized, stats] = model::instance_normalize(input);
                input = std::move(normalized);
                ce.sigma = std::max(stats.std, 1e-8);
                ce.mu = stats.mean;
            }
            const auto seq =
                model::segment(input, params.config.segment_len, params.config.stride);
            ce.z = model::encode(params, seq.segments);
            cache.push_back(std::move(ce));
        }
    }

    auto range_loss = [&](std::size_t begin, std::size_t end,
                          model::ModelParams* grads) -> double {
        if (!head_only) return supervised_loss(params, set, begin, end, grads, false);
        const double weight = 1.0 / static_cast<double>(end - begin);
        double loss = 0.0;
        for (std::size_t i = begin; i < end; ++i)
            loss += weight * cached_head_loss(params, set, set.examples[i], cache[i], weight,
                                              grads);
        return loss;
    };

    double best = std::numeric_limits<double>::infinity();
    int wait = 0;
    for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        model::ModelParams grads = model::zeros_like(params);
        const double train_loss = range_loss(0, train_end, &grads);
        if (!std::isfinite(train_loss))
            throw NumericError("non-finite " + std::string(task_kind_name(set.kind)) +
                               " training loss at epoch " + std::to_string(epoch));
        auto grad_views = head_only ? model::head_views(grads, head_for(set.kind))
                                    : model::param_views(grads);
        adam.step(grad_views);

        report.loss_curves["train"].push_back(train_loss);
        double watch = train_loss;
        if (has_val) {
            const double val_loss = range_loss(train_end, split.total, nullptr);
            report.loss_curves["val"].push_back(val_loss);
            watch = val_loss;
        }
        report.final_val = watch;

        if (watch < best) {
            best = watch;
            wait = 0;
        } else {
            ++wait;
        }
        if (watch <= config.converge_tol) {
            report.stop_reason = "converged";
            report.stop_epoch = epoch + 1;
            break;
        }
        if (wait >= config.patience) {
            report.stop_reason = "patience";
            report.stop_epoch = epoch + 1;
            break;
        }
    }

    report.wall_seconds = elapsed_seconds(start);
    return report;
}

}  // namespace

TrainReport linear_probe(model::ModelParams& params, const SupervisedSet& set,
                         const TrainConfig& config) {
    if (config.stage != Stage::Probe)
        throw ConfigError("linear_probe requires config.stage == Probe");
    return supervised_train(params, set, config, /*head_only=*/true);
}

TrainReport fine_tune(model::ModelParams& params, const SupervisedSet& set,
                      const TrainConfig& config) {
    if (config.stage != Stage::Finetune)
        throw ConfigError("fine_tune requires config.stage == Finetune");
    return supervised_train(params, set, config, /*head_only=*/false);
}

// -- checkpoint io ------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'E', 'P', 'I', 'T', 'S', 'C', 'K', '1'};

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
public:
    Reader(const std::string& buf, std::size_t offset) : buf_(buf), pos_(offset) {}

    std::uint64_t u64() {
        require(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + static_cast<std::size_t>(i)]))
                 << (8 * i);
        pos_ += 8;
        return v;
    }

    std::uint32_t u32() {
        require(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + static_cast<std::size_t>(i)]))
                 << (8 * i);
        pos_ += 4;
        return v;
    }

    double f64() { return std::bit_cast<double>(u64()); }

    std::string bytes(std::size_t n) {
        require(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::size_t pos() const { return pos_; }

private:
    void require(std::size_t n) const {
        if (pos_ + n > buf_.size()) throw IntegrityError("checkpoint truncated");
    }

    const std::string& buf_;
    std::size_t pos_;
};

}  // namespace

void save_checkpoint(const model::ModelParams& params, const std::string& path) {
    std::string payload;
    const auto& c = params.config;
    for (int field : {c.segment_len, c.stride, c.embed_dim, c.n_layers, c.n_heads, c.ffn_width,
                      c.horizon, c.season_weeks})
        put_u64(payload, static_cast<std::uint64_t>(field));
    put_u64(payload, c.seed);

    auto views = model::param_views(const_cast<model::ModelParams&>(params));
    put_u64(payload, views.size());
    for (const auto& view : views) {
        put_u32(payload, static_cast<std::uint32_t>(view.name.size()));
        payload += view.name;
        put_u64(payload, static_cast<std::uint64_t>(view.rows));
        put_u64(payload, static_cast<std::uint64_t>(view.cols));
        for (std::size_t i = 0; i < view.size(); ++i) put_f64(payload, view.ptr[i]);
    }

    std::string out(kMagic, sizeof(kMagic));
    out += payload;
    put_u64(out, fnv1a64(reinterpret_cast<const unsigned char*>(payload.data()), payload.size()));

    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw std::runtime_error("cannot write checkpoint: " + path);
    file.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!file) throw std::runtime_error("checkpoint write failed: " + path);
}

model::ModelParams load_checkpoint(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw std::runtime_error("cannot open checkpoint: " + path);
    std::string buf((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());

    if (buf.size() < sizeof(kMagic) + 8 || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
        throw IntegrityError("not a checkpoint file: " + path);

    const std::size_t payload_size = buf.size() - sizeof(kMagic) - 8;
    Reader trailer(buf, sizeof(kMagic) + payload_size);
    const std::uint64_t stored = trailer.u64();
    const std::uint64_t actual = fnv1a64(
        reinterpret_cast<const unsigned char*>(buf.data()) + sizeof(kMagic), payload_size);
    if (stored != actual) throw IntegrityError("checkpoint checksum mismatch: " + path);

    Reader r(buf, sizeof(kMagic));
    model::ModelConfig config;
    config.segment_len = static_cast<int>(r.u64());
    config.stride = static_cast<int>(r.u64());
    config.embed_dim = static_cast<int>(r.u64());
    config.n_layers = static_cast<int>(r.u64());
    config.n_heads = static_cast<int>(r.u64());
    config.ffn_width = static_cast<int>(r.u64());
    config.horizon = static_cast<int>(r.u64());
    config.season_weeks = static_cast<int>(r.u64());
    config.seed = r.u64();

    model::ModelParams params = model::init_params(config);
    auto views = model::param_views(params);
    const std::uint64_t n_blocks = r.u64();
    if (n_blocks != views.size()) throw IntegrityError("checkpoint block count mismatch");
    for (auto& view : views) {
        const std::uint32_t name_len = r.u32();
        const std::string name = r.bytes(name_len);
        const auto rows = static_cast<Eigen::Index>(r.u64());
        const auto cols = static_cast<Eigen::Index>(r.u64());
        if (name != view.name || rows != view.rows || cols != view.cols)
            throw IntegrityError("checkpoint block '" + name + "' does not match model layout");
        for (std::size_t i = 0; i < view.size(); ++i) view.ptr[i] = r.f64();
    }
    if (r.pos() != sizeof(kMagic) + payload_size)
        throw IntegrityError("checkpoint has trailing bytes");
    return params;
}

model::ModelParams load_checkpoint(const std::string& path, const model::ModelConfig& expected) {
    model::ModelParams params = load_checkpoint(path);
    if (!(params.config == expected))
        throw ConfigError("checkpoint config does not match expected model config");
    return params;
}

}  // namespace epits::train
