#include "epits/model.hpp"
#include "epits/ssl.hpp"
#include "epits/train.hpp"

#include "doctest.h"
#include "gradcheck_util.hpp"
#include "test_util.hpp"

using namespace epits;

namespace {

// the tiny model used for every gradient check: D=8, one layer, two heads,
// L = (11-3)/2 + 1 = 5 tokens
model::ModelConfig check_config() {
    model::ModelConfig config;
    config.segment_len = 3;
    config.stride = 2;
    config.embed_dim = 8;
    config.n_layers = 1;
    config.n_heads = 2;
    config.ffn_width = 12;
    config.horizon = 2;
    config.season_weeks = 6;
    config.seed = 2024;
    return config;
}

model::SegmentSequence check_sequence(Rng& rng) {
    data::TimeSeries ts;
    ts.values = testutil::random_vec(rng, 11, -2.0, 2.0);
    ts.month_stamps = {11, 12, 12, 1, 1, 2, 3, 3, 4, 5, 6};
    const auto [normalized, stats] = model::instance_normalize(ts.values);
    ts.values = normalized;
    return model::segment(ts, 3, 2);
}

}  // namespace

TEST_CASE("analytic gradients match finite differences for all four SSL losses") {
    Rng rng(318);
    const auto seq = check_sequence(rng);
    auto params = model::init_params(check_config());

    std::vector<ssl::SSLBatch> batches;
    Rng mask_rng(77);
    batches.push_back(ssl::rand_mask(seq, 0.4, mask_rng));
    batches.push_back(ssl::last_mask(seq, 0.25));
    {
        Vec flat(11);
        for (int l = 0; l < seq.length(); ++l)
            flat.segment(l * 2, 3) = seq.segments.row(l).transpose();
        batches.push_back(ssl::peak_mask(seq, flat));
    }
    batches.push_back(ssl::season_targets(seq, data::make_season_map("d", 0)));

    for (const auto& batch : batches) {
        CAPTURE(ssl::task_name(batch.task));
        model::ModelParams grads = model::zeros_like(params);
        train::ssl_step(params, {batch}, grads);
        const auto report = testutil::check_gradients(
            params, grads, [&] { return testutil::ssl_forward_loss(params, batch); });
        INFO("worst: ", report.worst);
        CHECK(report.max_rel_err < 1e-4);
        CHECK(report.checked == model::param_count(params));
    }
}

TEST_CASE("analytic gradients match finite differences for the downstream heads") {
    Rng rng(319);
    auto params = model::init_params(check_config());

    for (auto kind : {train::TaskKind::Forecast, train::TaskKind::PeakIntensity,
                      train::TaskKind::PeakWeek}) {
        CAPTURE(train::task_kind_name(kind));
        train::SupervisedSet set;
        set.kind = kind;
        set.instance_norm = true;
        for (int i = 0; i < 2; ++i) {
            train::Example ex;
            ex.input = testutil::random_vec(rng, 11, -1.5, 1.5);
            ex.target_values = testutil::random_vec(rng, 2);
            ex.target_scalar = uniform_in(rng, -1.0, 1.0);
            ex.target_week = 1 + static_cast<int>(bounded(rng, 6));
            set.examples.push_back(std::move(ex));
        }

        model::ModelParams grads = model::zeros_like(params);
        train::supervised_loss(params, set, 0, set.examples.size(), &grads);
        const auto report = testutil::check_gradients(params, grads, [&] {
            return train::supervised_loss(params, set, 0, set.examples.size(), nullptr);
        });
        INFO("worst: ", report.worst);
        CHECK(report.max_rel_err < 1e-4);
    }
}

TEST_CASE("gradient checks also pass without instance normalization") {
    Rng rng(320);
    auto params = model::init_params(check_config());
    train::SupervisedSet set;
    set.kind = train::TaskKind::Forecast;
    set.instance_norm = false;
    train::Example ex;
    ex.input = testutil::random_vec(rng, 11);
    ex.target_values = testutil::random_vec(rng, 2);
    set.examples.push_back(std::move(ex));

    model::ModelParams grads = model::zeros_like(params);
    train::supervised_loss(params, set, 0, 1, &grads);
    const auto report = testutil::check_gradients(params, grads, [&] {
        return train::supervised_loss(params, set, 0, 1, nullptr);
    });
    CHECK(report.max_rel_err < 1e-4);
}
