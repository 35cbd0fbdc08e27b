#include "epits/harness.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;

namespace epits::harness {

namespace {

nlohmann::json parse_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& err) {
        // err.byte is a 1-based offset into the text; report the line
        std::size_t line = 1;
        for (std::size_t i = 0; i + 1 < err.byte && i < text.size(); ++i)
            if (text[i] == '\n') ++line;
        throw ConfigError(path + ":" + std::to_string(line) + ": " + err.what());
    }
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

train::TaskKind task_kind_from(const std::string& name) {
    for (auto kind : {train::TaskKind::Forecast, train::TaskKind::PeakWeek,
                      train::TaskKind::PeakIntensity, train::TaskKind::OnsetWeek}) {
        if (name == train::task_kind_name(kind)) return kind;
    }
    throw ConfigError("unknown task kind '" + name + "'");
}

}  // namespace

CorpusBundle load_manifest(const std::string& path, int min_length) {
    const nlohmann::json j = parse_json_file(path);
    if (!j.contains("datasets") || !j["datasets"].is_array() || j["datasets"].empty())
        throw ConfigError(path + ": manifest needs a non-empty 'datasets' array");

    const fs::path base = fs::path(path).parent_path();
    CorpusBundle bundle;
    for (const auto& entry : j["datasets"]) {
        const std::string file = entry.value("file", std::string());
        if (file.empty()) throw ConfigError(path + ": dataset entry without 'file'");
        const fs::path csv = base / file;
        if (!fs::exists(csv)) throw ConfigError("dataset file does not exist: " + csv.string());
        const bool seasonal = entry.value("seasonal", false);
        std::optional<std::string> cutoff;
        if (entry.contains("pretrain_cutoff")) cutoff = entry["pretrain_cutoff"].get<std::string>();

        for (auto& ds : data::load_csv(csv.string())) {
            ds.seasonal = seasonal;
            bundle.full.push_back(std::move(ds));
        }
        for (auto& ds : data::load_csv(csv.string(), cutoff)) {
            ds.seasonal = seasonal;
            bundle.pretrain.push_back(std::move(ds));
        }
    }
    bundle.full = data::filter_sparse(std::move(bundle.full), min_length);
    bundle.pretrain = data::filter_sparse(std::move(bundle.pretrain), min_length);
    return bundle;
}

void ExperimentConfig::validate() const {
    if (manifest.empty()) throw ConfigError("config needs a corpus manifest path");
    if (!fs::exists(manifest)) throw ConfigError("manifest does not exist: " + manifest);
    if (output_dir.empty()) throw ConfigError("config needs an output_dir");
    if (seeds.empty()) throw ConfigError("config needs at least one seed");
    model.validate();
    ssl.validate();
    if (learning_rate <= 0) throw ConfigError("learning_rate must be positive");
    if (pretrain_epochs < 1) throw ConfigError("pretrain_epochs must be >= 1");
    if (finetune_epochs < 0) throw ConfigError("finetune_epochs must be >= 0");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (task_dataset.empty()) throw ConfigError("task.dataset must name the evaluation disease");
    if (eval_start < 1) throw ConfigError("task.eval_start must be >= 1");
    if (eval_count < 1 || eval_step < 1) throw ConfigError("task.eval_count/eval_step must be >= 1");
    const int p = ablations.no_segments ? 1 : model.segment_len;
    if (input_window < p) throw ConfigError("task.input_window shorter than a segment");
    if (ablations.data_fraction <= 0 || ablations.data_fraction > 1)
        throw ConfigError("ablations.data_fraction must be in (0,1]");
    if (ablations.no_pretrain && ablations.only_task)
        throw ConfigError("ablations no_pretrain and only_task cannot be combined");
    if (n_threads < 1) throw ConfigError("n_threads must be >= 1");
}

std::vector<int> ExperimentConfig::eval_weeks() const {
    std::vector<int> weeks;
    weeks.reserve(static_cast<std::size_t>(eval_count));
    for (int i = 0; i < eval_count; ++i) weeks.push_back(eval_start + i * eval_step);
    return weeks;
}

namespace {

nlohmann::json config_to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["manifest"] = c.manifest;
    j["output_dir"] = c.output_dir;
    j["seeds"] = c.seeds;
    j["model"] = {{"segment_len", c.model.segment_len},
                  {"stride", c.model.stride},
                  {"embed_dim", c.model.embed_dim},
                  {"n_layers", c.model.n_layers},
                  {"n_heads", c.model.n_heads},
                  {"ffn_width", c.model.ffn_width},
                  {"horizon", c.model.horizon},
                  {"season_weeks", c.model.season_weeks}};
    j["ssl"] = {{"rand_gamma", c.ssl.rand_gamma},
                {"last_gamma", c.ssl.last_gamma},
                {"window_len", c.ssl.window_len},
                {"windows_per_batch", c.ssl.windows_per_batch}};
    j["train"] = {{"learning_rate", c.learning_rate},
                  {"pretrain_epochs", c.pretrain_epochs},
                  {"finetune_epochs", c.finetune_epochs},
                  {"probe_epochs", c.probe_epochs},
                  {"patience", c.patience}};
    j["task"] = {{"kind", train::task_kind_name(c.task)},
                 {"dataset", c.task_dataset},
                 {"region", c.task_region},
                 {"input_window", c.input_window},
                 {"eval_start", c.eval_start},
                 {"eval_count", c.eval_count},
                 {"eval_step", c.eval_step},
                 {"season_start", c.season_start},
                 {"season_len", c.season_len},
                 {"onset_baseline", c.onset_baseline},
                 {"season_example_stride", c.season_example_stride}};
    j["ablations"] = {{"no_pretrain", c.ablations.no_pretrain},
                      {"no_linear_probe", c.ablations.no_linear_probe},
                      {"no_segments", c.ablations.no_segments},
                      {"no_instance_norm", c.ablations.no_instance_norm},
                      {"exclude_disease", c.ablations.exclude_disease},
                      {"only_task",
                       c.ablations.only_task ? ssl::task_name(*c.ablations.only_task) : ""},
                      {"data_fraction", c.ablations.data_fraction}};
    j["n_threads"] = c.n_threads;
    return j;
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    c.manifest = j.value("manifest", c.manifest);
    c.output_dir = j.value("output_dir", c.output_dir);
    if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();

    if (j.contains("model")) {
        const auto& m = j["model"];
        c.model.segment_len = m.value("segment_len", c.model.segment_len);
        c.model.stride = m.value("stride", c.model.stride);
        c.model.embed_dim = m.value("embed_dim", c.model.embed_dim);
        c.model.n_layers = m.value("n_layers", c.model.n_layers);
        c.model.n_heads = m.value("n_heads", c.model.n_heads);
        c.model.ffn_width = m.value("ffn_width", c.model.ffn_width);
        c.model.horizon = m.value("horizon", c.model.horizon);
        c.model.season_weeks = m.value("season_weeks", c.model.season_weeks);
    }
    if (j.contains("ssl")) {
        const auto& s = j["ssl"];
        c.ssl.rand_gamma = s.value("rand_gamma", c.ssl.rand_gamma);
        c.ssl.last_gamma = s.value("last_gamma", c.ssl.last_gamma);
        c.ssl.window_len = s.value("window_len", c.ssl.window_len);
        c.ssl.windows_per_batch = s.value("windows_per_batch", c.ssl.windows_per_batch);
    }
    if (j.contains("train")) {
        const auto& t = j["train"];
        c.learning_rate = t.value("learning_rate", c.learning_rate);
        c.pretrain_epochs = t.value("pretrain_epochs", c.pretrain_epochs);
        c.finetune_epochs = t.value("finetune_epochs", c.finetune_epochs);
        c.probe_epochs = t.value("probe_epochs", c.probe_epochs);
        c.patience = t.value("patience", c.patience);
    }
    if (j.contains("task")) {
        const auto& t = j["task"];
        if (t.contains("kind")) c.task = task_kind_from(t["kind"].get<std::string>());
        c.task_dataset = t.value("dataset", c.task_dataset);
        c.task_region = t.value("region", c.task_region);
        c.input_window = t.value("input_window", c.input_window);
        c.eval_start = t.value("eval_start", c.eval_start);
        c.eval_count = t.value("eval_count", c.eval_count);
        c.eval_step = t.value("eval_step", c.eval_step);
        c.season_start = t.value("season_start", c.season_start);
        c.season_len = t.value("season_len", c.season_len);
        c.onset_baseline = t.value("onset_baseline", c.onset_baseline);
        c.season_example_stride = t.value("season_example_stride", c.season_example_stride);
    }
    if (j.contains("ablations")) {
        const auto& a = j["ablations"];
        c.ablations.no_pretrain = a.value("no_pretrain", false);
        c.ablations.no_linear_probe = a.value("no_linear_probe", false);
        c.ablations.no_segments = a.value("no_segments", false);
        c.ablations.no_instance_norm = a.value("no_instance_norm", false);
        c.ablations.exclude_disease = a.value("exclude_disease", std::string());
        const std::string only = a.value("only_task", std::string());
        if (!only.empty()) {
            c.ablations.only_task = ssl::task_from_name(only);
            if (!c.ablations.only_task)
                throw ConfigError("ablations.only_task: unknown SSL task '" + only + "'");
        }
        c.ablations.data_fraction = a.value("data_fraction", 1.0);
    }
    c.n_threads = j.value("n_threads", c.n_threads);
    return c;
}

void apply_override(nlohmann::json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("override must look like path.to.field=value: " + assignment);
    const std::string path = assignment.substr(0, eq);
    const std::string value = assignment.substr(eq + 1);

    nlohmann::json* node = &j;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot - start);
        if (key.empty()) throw ConfigError("bad override path: " + path);
        if (dot == std::string::npos) {
            nlohmann::json parsed = nlohmann::json::parse(value, nullptr, false);
            (*node)[key] = parsed.is_discarded() ? nlohmann::json(value) : parsed;
            return;
        }
        node = &(*node)[key];
        start = dot + 1;
    }
}

}  // namespace

std::string ExperimentConfig::to_json() const { return config_to_json(*this).dump(2); }

ExperimentConfig load_experiment_config(const std::string& path,
                                        const std::vector<std::string>& overrides) {
    nlohmann::json j = parse_json_file(path);
    for (const auto& assignment : overrides) apply_override(j, assignment);

    // relative paths in the config resolve against the config's directory
    ExperimentConfig config = config_from_json(j);
    const fs::path base = fs::path(path).parent_path();
    if (!config.manifest.empty() && fs::path(config.manifest).is_relative() &&
        !fs::exists(config.manifest))
        config.manifest = (base / config.manifest).string();

    if (const char* root = std::getenv("EPITS_OUTPUT_ROOT");
        root && *root && fs::path(config.output_dir).is_relative())
        config.output_dir = (fs::path(root) / config.output_dir).string();

    config.validate();
    return config;
}

ResolvedRun resolve_run(const ExperimentConfig& config, std::uint64_t seed) {
    ResolvedRun run;
    run.model = config.model;
    run.model.seed = seed;
    if (config.ablations.no_segments) {
        run.model.segment_len = 1;
        run.model.stride = 1;
    }

    run.ssl = config.ssl;
    run.ssl.instance_norm = !config.ablations.no_instance_norm;
    run.ssl.only_task = config.ablations.only_task;

    auto& spec = run.spec;
    spec.kind = config.task;
    spec.horizon = config.model.horizon;
    spec.input_window = config.input_window;
    spec.eval_weeks = config.eval_weeks();
    spec.season_start = config.season_start;
    spec.season_len = config.season_len;
    spec.onset_baseline = config.onset_baseline;
    spec.season_example_stride = config.season_example_stride;
    spec.no_linear_probe = config.ablations.no_linear_probe;
    spec.instance_norm = !config.ablations.no_instance_norm;
    spec.data_fraction = config.ablations.data_fraction;
    spec.n_threads = config.n_threads;

    const int probe_epochs =
        config.probe_epochs >= 0
            ? config.probe_epochs
            : static_cast<int>(std::ceil(0.2 * config.finetune_epochs));
    spec.probe.stage = train::Stage::Probe;
    spec.probe.learning_rate = config.learning_rate;
    spec.probe.max_epochs = probe_epochs;
    spec.probe.patience = config.patience;
    spec.probe.seed = seed;
    spec.finetune.stage = train::Stage::Finetune;
    spec.finetune.learning_rate = config.learning_rate;
    spec.finetune.max_epochs = config.finetune_epochs;
    spec.finetune.patience = config.patience;
    spec.finetune.seed = seed;
    return run;
}

namespace {

const data::TimeSeries& find_eval_series(const CorpusBundle& bundle,
                                         const ExperimentConfig& config) {
    for (const auto& ds : bundle.full) {
        if (ds.name != config.task_dataset) continue;
        if (config.task_region.empty()) return ds.series.front();
        for (const auto& ts : ds.series) {
            if (ts.region == config.task_region) return ts;
        }
    }
    throw ConfigError("task dataset/region not found in corpus: " + config.task_dataset +
                      (config.task_region.empty() ? "" : "/" + config.task_region));
}

ssl::Corpus build_pretrain_corpus(const CorpusBundle& bundle, const ExperimentConfig& config) {
    std::vector<data::DiseaseDataset> datasets;
    for (const auto& ds : bundle.pretrain) {
        if (!config.ablations.exclude_disease.empty() &&
            ds.name == config.ablations.exclude_disease)
            continue;
        datasets.push_back(data::dataset_normalize(ds));
    }
    if (datasets.empty()) throw ConfigError("pre-train corpus is empty after exclusions");
    return ssl::make_corpus(std::move(datasets));
}

struct SeedArtifacts {
    model::ModelParams params;
    std::optional<train::TrainReport> pretrain_report;
};

SeedArtifacts prepare_seed(const ExperimentConfig& config, const ssl::Corpus* corpus,
                           std::uint64_t seed) {
    const ResolvedRun run = resolve_run(config, seed);
    SeedArtifacts artifacts{model::init_params(run.model), std::nullopt};
    if (!config.ablations.no_pretrain) {
        train::TrainConfig tc;
        tc.stage = train::Stage::Pretrain;
        tc.batch_mode = train::BatchMode::Windowed;
        tc.learning_rate = config.learning_rate;
        tc.max_epochs = config.pretrain_epochs;
        tc.patience = config.patience;
        tc.seed = seed;
        artifacts.pretrain_report = train::pretrain(artifacts.params, *corpus, tc, run.ssl);
    }
    return artifacts;
}

}  // namespace

std::vector<tasks::EvalResult> run_experiment(const ExperimentConfig& config) {
    config.validate();
    const CorpusBundle bundle = load_manifest(config.manifest);
    const data::TimeSeries& series = find_eval_series(bundle, config);

    std::optional<ssl::Corpus> corpus;
    if (!config.ablations.no_pretrain) corpus = build_pretrain_corpus(bundle, config);

    fs::create_directories(config.output_dir);
    write_file(fs::path(config.output_dir) / "config.json", config.to_json() + "\n");

    std::vector<tasks::EvalResult> results;
    std::ostringstream summary;
    summary << "task,dataset,seed,avg_rmse\n";
    summary.precision(12);

    for (std::uint64_t seed : config.seeds) {
        const fs::path dir = fs::path(config.output_dir) / ("seed_" + std::to_string(seed));
        fs::create_directories(dir);
        write_file(dir / "config.json", config.to_json() + "\n");
        write_file(dir / "seed.txt", std::to_string(seed) + "\n");

        SeedArtifacts artifacts =
            prepare_seed(config, corpus ? &*corpus : nullptr, seed);
        if (artifacts.pretrain_report) {
            write_file(dir / "pretrain_report.json", artifacts.pretrain_report->to_json() + "\n");
            train::save_checkpoint(artifacts.params, (dir / "pretrained.ckpt").string());
        }

        const ResolvedRun run = resolve_run(config, seed);
        const model::ModelParams& pretrained = artifacts.params;
        tasks::EvalResult result = tasks::realtime_eval(
            [&pretrained] { return pretrained; }, series, run.spec);

        const std::string stem = "eval_" + std::string(train::task_kind_name(config.task));
        write_file(dir / (stem + ".json"), result.to_json() + "\n");
        write_file(dir / (stem + ".csv"), result.to_csv());
        summary << result.task << ',' << result.dataset << ',' << seed << ',' << result.avg_rmse
                << '\n';
        results.push_back(std::move(result));
    }

    write_file(fs::path(config.output_dir) / "summary.csv", summary.str());
    return results;
}

std::vector<SweepRow> sweep_data_fraction(const ExperimentConfig& config,
                                          const std::vector<double>& fractions) {
    config.validate();
    if (fractions.empty()) throw ConfigError("sweep needs at least one fraction");
    for (double f : fractions) {
        if (f <= 0.0 || f > 1.0) throw ConfigError("sweep fractions must lie in (0,1]");
    }

    const CorpusBundle bundle = load_manifest(config.manifest);
    const data::TimeSeries& series = find_eval_series(bundle, config);
    std::optional<ssl::Corpus> corpus;
    if (!config.ablations.no_pretrain) corpus = build_pretrain_corpus(bundle, config);

    fs::create_directories(config.output_dir);
    write_file(fs::path(config.output_dir) / "config.json", config.to_json() + "\n");

    std::vector<SweepRow> rows;
    for (std::uint64_t seed : config.seeds) {
        const SeedArtifacts artifacts =
            prepare_seed(config, corpus ? &*corpus : nullptr, seed);
        for (double fraction : fractions) {
            ResolvedRun run = resolve_run(config, seed);
            run.spec.data_fraction = fraction;

            SweepRow row;
            row.fraction = fraction;
            row.seed = seed;
            const model::ModelParams& pretrained = artifacts.params;
            const tasks::EvalResult result = tasks::realtime_eval(
                [&pretrained] { return pretrained; }, series, run.spec);
            row.skipped = result.records.empty();
            row.avg_rmse = result.avg_rmse;
            if (row.skipped)
                std::cerr << "sweep: fraction " << fraction << " seed " << seed
                          << " skipped (window too small)\n";
            rows.push_back(row);
        }
    }

    std::ostringstream csv;
    csv << "fraction,seed,avg_rmse,skipped\n";
    csv.precision(12);
    for (const auto& row : rows) {
        csv << row.fraction << ',' << row.seed << ',';
        if (row.skipped) {
            csv << "," << 1 << '\n';
        } else {
            csv << row.avg_rmse << ',' << 0 << '\n';
        }
    }
    write_file(fs::path(config.output_dir) / "sweep.csv", csv.str());

    // reporting only: note whether more data helped, without asserting it
    std::ostringstream trend;
    trend << "fraction trend (avg over seeds):\n";
    for (double fraction : fractions) {
        double sum = 0;
        int n = 0;
        for (const auto& row : rows) {
            if (row.fraction == fraction && !row.skipped) {
                sum += row.avg_rmse;
                ++n;
            }
        }
        trend << "  fraction " << fraction << ": "
              << (n ? std::to_string(sum / n) : std::string("skipped")) << "\n";
    }
    write_file(fs::path(config.output_dir) / "sweep_trend.txt", trend.str());
    return rows;
}

}  // namespace epits::harness
