#pragma once

#include "epits/model.hpp"
#include "epits/ssl.hpp"
#include "epits/train.hpp"

#include <functional>
#include <string>

namespace epits::testutil {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst;
    std::size_t checked = 0;
};

/// Central differences over every parameter, denominator-guarded relative
/// error against the analytic gradient.
inline GradCheckReport check_gradients(model::ModelParams& params,
                                       model::ModelParams& analytic,
                                       const std::function<double()>& loss_fn,
                                       double h = 1e-4, double guard = 1e-2) {
    GradCheckReport report;
    auto pviews = model::param_views(params);
    auto gviews = model::param_views(analytic);
    for (std::size_t b = 0; b < pviews.size(); ++b) {
        for (std::size_t i = 0; i < pviews[b].size(); ++i) {
            double& w = pviews[b].ptr[i];
            const double saved = w;
            w = saved + h;
            const double up = loss_fn();
            w = saved - h;
            const double down = loss_fn();
            w = saved;

            const double numeric = (up - down) / (2.0 * h);
            const double a = gviews[b].ptr[i];
            const double rel =
                std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), guard);
            ++report.checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst = pviews[b].name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return report;
}

/// Forward-only SSL loss (the finite-difference side of the check).
inline double ssl_forward_loss(const model::ModelParams& params, const ssl::SSLBatch& batch) {
    std::vector<Mat> predictions;
    predictions.reserve(batch.items.size());
    for (const auto& item : batch.items) {
        const Mat z = model::encode(params, item.inputs);
        if (batch.task == ssl::Task::SeasonDetect) {
            predictions.push_back(model::head_season(params, z));
        } else {
            predictions.push_back(model::head_reconstruct(params, z));
        }
    }
    return ssl::ssl_loss(batch, predictions);
}

}  // namespace epits::testutil
