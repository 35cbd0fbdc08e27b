#include "epits/model.hpp"
#include "epits/synthetic.hpp"

#include "doctest.h"
#include "test_util.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace epits;
using model::ModelConfig;
using model::ModelParams;

namespace {

ModelConfig tiny_config(int segment_len = 4, int stride = 1) {
    ModelConfig config;
    config.segment_len = segment_len;
    config.stride = stride;
    config.embed_dim = 8;
    config.n_layers = 2;
    config.n_heads = 2;
    config.ffn_width = 16;
    config.horizon = 3;
    config.season_weeks = 12;
    config.seed = 99;
    return config;
}

}  // namespace

TEST_CASE("segment counts follow floor((T-P)/S)+1") {
    CHECK(model::segment_count(10, 4, 1) == 7);
    CHECK(model::segment_count(4, 4, 1) == 1);
    CHECK(model::segment_count(29, 4, 2) == 13);
    CHECK_THROWS_WITH_AS(model::segment_count(3, 4, 1), doctest::Contains("shorter"),
                         std::invalid_argument);
}

TEST_CASE("segments copy the strided windows") {
    Vec series(10);
    std::iota(series.begin(), series.end(), 1.0);
    const auto seq = model::segment(series, 4, 2);
    REQUIRE(seq.length() == 4);
    CHECK(seq.segments(0, 0) == 1.0);
    CHECK(seq.segments(1, 0) == 3.0);
    CHECK(seq.segments(3, 3) == 10.0);
    CHECK(seq.stride == 2);

    SUBCASE("stride == segment_len tiles the series prefix") {
        const auto tiled = model::segment(series, 5, 5);
        REQUIRE(tiled.length() == 2);
        Vec flat(10);
        for (int l = 0; l < tiled.length(); ++l)
            flat.segment(l * 5, 5) = tiled.segments.row(l).transpose();
        CHECK(flat.isApprox(series));
    }
}

TEST_CASE("segmenting a TimeSeries carries month stamps") {
    data::TimeSeries ts;
    ts.values = Vec::LinSpaced(8, 1.0, 8.0);
    for (int t = 0; t < 8; ++t) ts.month_stamps.push_back(harness::week_month(t));
    const auto seq = model::segment(ts, 4, 2);
    REQUIRE(seq.segment_months.size() == 3);
    CHECK(seq.segment_months[2] ==
          std::vector<int>(ts.month_stamps.begin() + 4, ts.month_stamps.begin() + 8));
}

TEST_CASE("positional encoding matches the dimension-indexed sinusoid") {
    const Vec zero = model::positional_encoding(0, 6);
    for (int d = 0; d < 6; d += 2) {
        CHECK(zero[d] == 0.0);
        CHECK(zero[d + 1] == 1.0);
    }

    const Vec one = model::positional_encoding(1, 4);
    CHECK(one[0] == doctest::Approx(0.8414709848078965));          // sin(1)
    CHECK(one[1] == doctest::Approx(std::cos(1.0)));
    CHECK(one[2] == doctest::Approx(std::sin(1.0 / std::pow(10.0, 5.0 * 2 / 4))));
    CHECK(one[3] == doctest::Approx(std::cos(1.0 / std::pow(10.0, 5.0 * 2 / 4))));
}

TEST_CASE("positional encodings are distinct over positions up to 10^4") {
    const int dim = 8;
    std::vector<Vec> encodings;
    encodings.reserve(10000);
    for (int l = 1; l <= 10000; ++l) encodings.push_back(model::positional_encoding(l, dim));

    std::vector<int> order(encodings.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        return std::lexicographical_compare(
            encodings[static_cast<std::size_t>(a)].begin(), encodings[static_cast<std::size_t>(a)].end(),
            encodings[static_cast<std::size_t>(b)].begin(), encodings[static_cast<std::size_t>(b)].end());
    });
    for (std::size_t i = 1; i < order.size(); ++i) {
        const auto& a = encodings[static_cast<std::size_t>(order[i - 1])];
        const auto& b = encodings[static_cast<std::size_t>(order[i])];
        CHECK((a - b).cwiseAbs().maxCoeff() > 0.0);
    }
}

TEST_CASE("embed_segments is the projection plus positional encoding") {
    auto params = model::init_params(tiny_config());
    Rng rng(3);
    Mat segments(5, 4);
    for (int r = 0; r < 5; ++r)
        segments.row(r) = testutil::random_vec(rng, 4).transpose();

    SUBCASE("zero projection leaves only the positional encoding") {
        params.w1.setZero();
        const Mat u = model::embed_segments(params, segments);
        for (int l = 0; l < 5; ++l)
            CHECK(u.row(l).transpose().isApprox(model::positional_encoding(l + 1, 8)));
    }
    SUBCASE("zero input leaves only the positional encoding") {
        const Mat u = model::embed_segments(params, Mat::Zero(5, 4));
        for (int l = 0; l < 5; ++l)
            CHECK(u.row(l).transpose().isApprox(model::positional_encoding(l + 1, 8)));
    }
    SUBCASE("doubling the input doubles the projected part") {
        const Mat u1 = model::embed_segments(params, segments);
        const Mat u2 = model::embed_segments(params, 2.0 * segments);
        Mat pos(5, 8);
        for (int l = 0; l < 5; ++l)
            pos.row(l) = model::positional_encoding(l + 1, 8).transpose();
        CHECK((u2 - pos).isApprox(2.0 * (u1 - pos)));
    }
}

TEST_CASE("a single token attends to itself with weight one") {
    const auto params = model::init_params(tiny_config());
    model::EncodeCache cache;
    Rng rng(5);
    Mat segments(1, 4);
    segments.row(0) = testutil::random_vec(rng, 4).transpose();
    model::encode(params, segments, &cache);
    for (const auto& layer : cache.layers)
        for (const auto& attn : layer.attn) CHECK(attn(0, 0) == 1.0);
}

TEST_CASE("attention rows sum to one in every head") {
    const auto params = model::init_params(tiny_config());
    model::EncodeCache cache;
    Rng rng(6);
    Mat segments(7, 4);
    for (int r = 0; r < 7; ++r) segments.row(r) = testutil::random_vec(rng, 4).transpose();
    model::encode(params, segments, &cache);
    for (const auto& layer : cache.layers)
        for (const auto& attn : layer.attn)
            for (Eigen::Index r = 0; r < attn.rows(); ++r)
                CHECK(std::abs(attn.row(r).sum() - 1.0) < 1e-6);
}

TEST_CASE("the encoder stack is permutation-equivariant over tokens") {
    const auto params = model::init_params(tiny_config());
    Rng rng(7);
    Mat u(3, 8);
    for (int r = 0; r < 3; ++r) u.row(r) = testutil::random_vec(rng, 8).transpose();

    const Mat z = model::encoder_forward(params, u);
    Mat permuted = u;
    permuted.row(0).swap(permuted.row(2));
    const Mat z2 = model::encoder_forward(params, permuted);

    CHECK((z2.row(0) - z.row(2)).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((z2.row(2) - z.row(0)).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((z2.row(1) - z.row(1)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("encoder output is bit-deterministic") {
    const auto params = model::init_params(tiny_config());
    Rng rng(8);
    Mat segments(6, 4);
    for (int r = 0; r < 6; ++r) segments.row(r) = testutil::random_vec(rng, 4).transpose();
    const Mat z1 = model::encode(params, segments);
    const Mat z2 = model::encode(params, segments);
    CHECK(std::memcmp(z1.data(), z2.data(), sizeof(double) * static_cast<std::size_t>(z1.size())) == 0);
}

TEST_CASE("non-finite intermediates raise a numeric error naming the layer") {
    auto params = model::init_params(tiny_config());
    params.layers[1].ff2.w.array() = std::numeric_limits<double>::infinity();
    Mat segments = Mat::Ones(3, 4);
    CHECK_THROWS_WITH_AS(model::encode(params, segments), doctest::Contains("layer 1"),
                         NumericError);
}

TEST_CASE("instance normalization round-trips") {
    Vec x(3);
    x << 1, 2, 3;
    const auto [normalized, stats] = model::instance_normalize(x);
    CHECK(std::abs(normalized.mean()) < 1e-12);
    const Vec back = model::instance_denormalize(normalized, stats);
    CHECK((back - x).cwiseAbs().maxCoeff() < 1e-9);

    SUBCASE("constant series maps to zeros and back") {
        const Vec c = Vec::Constant(3, 7.0);
        const auto [norm_c, stats_c] = model::instance_normalize(c);
        CHECK(norm_c.isZero(0.0));
        CHECK(model::instance_denormalize(norm_c, stats_c).isApprox(c));
    }
    SUBCASE("positive affine maps normalize identically") {
        Rng rng(12);
        const Vec r = testutil::random_vec(rng, 24, -3.0, 9.0);
        const Vec affine = 2.5 * r.array() + 13.0;
        const auto [n1, s1] = model::instance_normalize(r);
        const auto [n2, s2] = model::instance_normalize(affine);
        CHECK((n1 - n2).cwiseAbs().maxCoeff() < 1e-9);
    }
    SUBCASE("1000 random series stay within 1e-6") {
        Rng rng(13);
        for (int trial = 0; trial < 1000; ++trial) {
            const int n = 2 + static_cast<int>(bounded(rng, 60));
            const Vec v = testutil::random_vec(rng, n, -100.0, 100.0);
            const auto [norm, stats] = model::instance_normalize(v);
            CHECK((model::instance_denormalize(norm, stats) - v).cwiseAbs().maxCoeff() < 1e-6);
        }
    }
}

TEST_CASE("reconstruction head is tokenwise") {
    auto params = model::init_params(tiny_config());
    Rng rng(21);
    Mat z(5, 8);
    for (int r = 0; r < 5; ++r) z.row(r) = testutil::random_vec(rng, 8).transpose();

    const Mat out = model::head_reconstruct(params, z);
    CHECK(out.rows() == 5);
    CHECK(out.cols() == 4);

    SUBCASE("zero weights give zero predictions") {
        params.recon1.w.setZero();
        params.recon1.b.setZero();
        params.recon2.w.setZero();
        params.recon2.b.setZero();
        CHECK(model::head_reconstruct(params, z).isZero(0.0));
    }
    SUBCASE("perturbing one embedding changes only that row") {
        Mat z2 = z;
        z2.row(2).array() += 0.25;
        const Mat out2 = model::head_reconstruct(params, z2);
        for (int r = 0; r < 5; ++r) {
            if (r == 2)
                CHECK((out2.row(r) - out.row(r)).cwiseAbs().maxCoeff() > 1e-8);
            else
                CHECK((out2.row(r) - out.row(r)).cwiseAbs().maxCoeff() == 0.0);
        }
    }
}

TEST_CASE("head shapes match their task contracts") {
    const auto params = model::init_params(tiny_config());
    Rng rng(22);
    Mat z(6, 8);
    for (int r = 0; r < 6; ++r) z.row(r) = testutil::random_vec(rng, 8).transpose();

    CHECK(model::head_season(params, z).rows() == 6);
    CHECK(model::head_season(params, z).cols() == 4);
    CHECK(model::head_forecast(params, z).size() == 3);
    CHECK(model::head_scalar(params, z).size() == 1);
    CHECK(model::head_week(params, z).size() == 12);

    SUBCASE("zero forecast head yields zeros") {
        auto p = params;
        p.forecast.w.setZero();
        p.forecast.b.setZero();
        CHECK(model::head_forecast(p, z).isZero(0.0));
    }
}

TEST_CASE("losses match hand-computed values") {
    Mat pred(1, 2), target(1, 2);
    pred << 0, 0;
    target << 1, 1;
    CHECK(model::mse_loss(pred, target) == doctest::Approx(1.0));

    Mat same = target;
    CHECK(model::mse_loss(same, target) == doctest::Approx(0.0));

    CHECK_THROWS_AS(model::mse_loss(Mat::Zero(1, 2), Mat::Zero(2, 1)), std::invalid_argument);

    const Mat logits = Mat::Zero(3, 4);  // uniform over 4 classes
    CHECK(model::cross_entropy(logits, {0, 1, 3}) == doctest::Approx(std::log(4.0)));
    CHECK_THROWS_AS(model::cross_entropy(logits, {0, 1, 4}), std::invalid_argument);
}

TEST_CASE("checkpointable parameter traversal covers every block once") {
    auto params = model::init_params(tiny_config());
    const auto views = model::param_views(params);
    std::size_t total = 0;
    for (const auto& view : views) total += view.size();
    CHECK(total == model::param_count(params));

    // no duplicate names
    std::vector<std::string> names;
    for (const auto& view : views) names.push_back(view.name);
    std::sort(names.begin(), names.end());
    CHECK(std::adjacent_find(names.begin(), names.end()) == names.end());

    // head views partition the non-backbone parameters
    std::size_t backbone = 0;
    for (const auto& view : model::backbone_views(params)) backbone += view.size();
    std::size_t heads = 0;
    for (auto head : {model::TaskHead::Reconstruct, model::TaskHead::Season,
                      model::TaskHead::Forecast, model::TaskHead::Scalar, model::TaskHead::Week})
        for (const auto& view : model::head_views(params, head)) heads += view.size();
    CHECK(backbone + heads == total);
}

TEST_CASE("seeded initialization is reproducible and bounded") {
    const auto a = model::init_params(tiny_config());
    const auto b = model::init_params(tiny_config());
    auto va = model::param_views(const_cast<ModelParams&>(a));
    auto vb = model::param_views(const_cast<ModelParams&>(b));
    for (std::size_t i = 0; i < va.size(); ++i)
        CHECK(std::memcmp(va[i].ptr, vb[i].ptr, va[i].size() * sizeof(double)) == 0);

    // fan-in bound on the segment projection
    const double bound = std::sqrt(1.0 / 4.0);
    CHECK(a.w1.cwiseAbs().maxCoeff() <= bound);
}

TEST_CASE("model config validation rejects bad shapes") {
    ModelConfig config = tiny_config();
    config.stride = 5;
    CHECK_THROWS_AS(config.validate(), ConfigError);
    config = tiny_config();
    config.n_heads = 3;  // 8 % 3 != 0
    CHECK_THROWS_AS(config.validate(), ConfigError);
    config = tiny_config();
    config.embed_dim = 7;
    CHECK_THROWS_AS(config.validate(), ConfigError);
}
