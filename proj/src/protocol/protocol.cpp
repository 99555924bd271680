#include "clif/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "clif/encoder.hpp"
#include "clif/rng.hpp"

namespace clif {

using nlohmann::json;

namespace {

double mean_of(std::span<const double> v) {
    if (v.empty()) throw ProtocolError("mean of an empty list");
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_from(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
}

json summary_json(const Summary& s) { return {{"mean", s.mean}, {"std", s.std}}; }

Summary summary_from(const json& j) { return {j.at("mean").get<double>(), j.at("std").get<double>()}; }

json optional_summary_json(const std::optional<Summary>& s) { return s ? summary_json(*s) : json(nullptr); }

std::optional<Summary> optional_summary_from(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return summary_from(j.at(key));
}

}  // namespace

// ---- accuracy matrix -------------------------------------------------------

AccuracyMatrix::AccuracyMatrix(std::vector<std::string> tasks, bool joint) : tasks_(std::move(tasks)), joint_(joint) {
    if (tasks_.empty()) throw ProtocolError("accuracy matrix needs at least one task");
}

void AccuracyMatrix::add_row(std::vector<double> row) {
    if (complete()) throw ProtocolError("accuracy matrix is already complete");
    const std::size_t expected = joint_ ? tasks_.size() : rows_.size() + 1;
    if (row.size() != expected)
        throw ProtocolError("accuracy matrix row " + std::to_string(rows_.size() + 1) + " has " +
                            std::to_string(row.size()) + " entries, expected " + std::to_string(expected));
    for (double a : row)
        if (!(a >= 0.0 && a <= 1.0)) throw ProtocolError("accuracy outside [0, 1]");
    rows_.push_back(std::move(row));
}

std::optional<double> AccuracyMatrix::at(std::size_t i, std::size_t j) const {
    if (i >= rows_.size() || j >= rows_[i].size()) return std::nullopt;
    return rows_[i][j];
}

std::vector<double> AccuracyMatrix::instant() const {
    if (!complete()) throw ProtocolError("accuracy matrix is incomplete");
    if (joint_) return rows_[0];
    std::vector<double> out;
    for (std::size_t i = 0; i < rows_.size(); ++i) out.push_back(rows_[i][i]);
    return out;
}

std::vector<double> AccuracyMatrix::final_row() const {
    if (!complete()) throw ProtocolError("accuracy matrix is incomplete");
    return rows_.back();
}

json AccuracyMatrix::to_json() const { return {{"tasks", tasks_}, {"joint", joint_}, {"rows", rows_}}; }

AccuracyMatrix AccuracyMatrix::from_json(const json& j) {
    AccuracyMatrix m(j.at("tasks").get<std::vector<std::string>>(), j.at("joint").get<bool>());
    for (const auto& row : j.at("rows")) m.add_row(row.get<std::vector<double>>());
    return m;
}

// ---- metrics ---------------------------------------------------------------

Metrics aggregate_metrics(const AccuracyMatrix& matrix, const FewshotAccuracies& fewshot, bool report_final) {
    if (!matrix.complete()) throw ProtocolError("metrics need a complete accuracy matrix");
    Metrics m;
    const auto inst = matrix.instant();
    const auto fin = matrix.final_row();
    for (std::size_t i = 0; i < matrix.size(); ++i) m.inst_per_task[matrix.tasks()[i]] = inst[i];
    m.s_inst = mean_of(inst);
    if (report_final) {
        for (std::size_t i = 0; i < matrix.size(); ++i) m.final_per_task[matrix.tasks()[i]] = fin[i];
        m.s_final = mean_of(fin);
        m.forgetting = m.s_inst - *m.s_final;
    }
    std::vector<double> all;
    std::size_t resamples = 0;
    for (const auto& [task, accs] : fewshot) {
        if (accs.empty()) throw ProtocolError("few-shot task " + task + " has no accuracies");
        if (resamples != 0 && accs.size() != resamples)
            throw ProtocolError("few-shot task " + task + " has an inconsistent number of resamples");
        resamples = accs.size();
        m.fs_per_task[task] = mean_of(accs);
        all.insert(all.end(), accs.begin(), accs.end());
    }
    if (!all.empty()) m.s_fs = mean_of(all);
    return m;
}

json Metrics::to_json() const {
    return {{"s_inst", s_inst},
            {"s_final", optional_json(s_final)},
            {"forgetting", optional_json(forgetting)},
            {"s_fs", optional_json(s_fs)},
            {"inst_per_task", inst_per_task},
            {"final_per_task", final_per_task},
            {"fs_per_task", fs_per_task}};
}

Metrics Metrics::from_json(const json& j) {
    Metrics m;
    m.s_inst = j.at("s_inst").get<double>();
    m.s_final = optional_from(j, "s_final");
    m.forgetting = optional_from(j, "forgetting");
    m.s_fs = optional_from(j, "s_fs");
    m.inst_per_task = j.at("inst_per_task").get<std::map<std::string, double>>();
    m.final_per_task = j.at("final_per_task").get<std::map<std::string, double>>();
    m.fs_per_task = j.at("fs_per_task").get<std::map<std::string, double>>();
    return m;
}

std::optional<double> relative_improvement(double s, std::span<const double> baselines) {
    if (baselines.empty()) return std::nullopt;
    const double best = *std::max_element(baselines.begin(), baselines.end());
    if (!(best > 0.0)) return std::nullopt;
    return (s - best) / best * 100.0;
}

Summary summarize(std::span<const double> values) {
    Summary s;
    s.mean = mean_of(values);
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(sq / static_cast<double>(values.size()));
    return s;
}

MetricsReport build_report(std::vector<Metrics> per_seed) {
    if (per_seed.empty()) throw ProtocolError("a report needs at least one seed");
    MetricsReport r;
    auto collect = [&](auto field, const char* name) -> std::optional<Summary> {
        std::vector<double> v;
        for (const auto& m : per_seed)
            if (const std::optional<double> x = field(m)) v.push_back(*x);
        if (v.empty()) return std::nullopt;
        if (v.size() != per_seed.size()) throw ProtocolError(std::string("seeds disagree on whether ") + name + " exists");
        return summarize(v);
    };
    r.s_inst = *collect([](const Metrics& m) { return std::optional<double>(m.s_inst); }, "s_inst");
    r.s_final = collect([](const Metrics& m) { return m.s_final; }, "s_final");
    r.forgetting = collect([](const Metrics& m) { return m.forgetting; }, "forgetting");
    r.s_fs = collect([](const Metrics& m) { return m.s_fs; }, "s_fs");
    r.per_seed = std::move(per_seed);
    return r;
}

json MetricsReport::to_json() const {
    return {{"s_inst", summary_json(s_inst)},
            {"s_final", optional_summary_json(s_final)},
            {"forgetting", optional_summary_json(forgetting)},
            {"s_fs", optional_summary_json(s_fs)},
            {"delta_inst", optional_json(delta_inst)},
            {"delta_fs", optional_json(delta_fs)},
            {"std_kind", "population"}};
}

MetricsReport MetricsReport::from_json(const json& j) {
    MetricsReport r;
    r.s_inst = summary_from(j.at("s_inst"));
    r.s_final = optional_summary_from(j, "s_final");
    r.forgetting = optional_summary_from(j, "forgetting");
    r.s_fs = optional_summary_from(j, "s_fs");
    r.delta_inst = optional_from(j, "delta_inst");
    r.delta_fs = optional_from(j, "delta_fs");
    return r;
}

void apply_baselines(MetricsReport& report, std::span<const BaselineValues> baselines) {
    std::vector<double> inst, fs;
    for (const auto& b : baselines) {
        if (b.s_inst) inst.push_back(*b.s_inst);
        if (b.s_fs) fs.push_back(*b.s_fs);
    }
    report.delta_inst = relative_improvement(report.s_inst.mean, inst);
    report.delta_fs = report.s_fs ? relative_improvement(report.s_fs->mean, fs) : std::nullopt;
}

// ---- stream execution ------------------------------------------------------

const PreparedTask& PreparedBenchmark::task(const std::string& name) const {
    auto it = tasks.find(name);
    if (it == tasks.end()) throw ProtocolError("unknown task \"" + name + "\"");
    return it->second;
}

PreparedBenchmark prepare_benchmark(const FrozenEncoder& encoder, const Benchmark& benchmark) {
    PreparedBenchmark p;
    p.benchmark = &benchmark;
    for (const auto& [name, task] : benchmark.tasks) p.tasks.emplace(name, prepare_task(encoder, task));
    return p;
}

std::uint64_t episode_seed(std::size_t resample) { return derive_seed(seed_tag("episodes"), {resample}); }

std::uint64_t adaptation_seed(std::uint64_t run_seed, std::size_t resample, const std::string& task) {
    return derive_seed(run_seed, {seed_tag("adapt"), resample, fnv1a64(task)});
}

FewshotResult evaluate_fewshot(const Learner& learner, const PreparedBenchmark& prepared, const StreamSpec& stream,
                               std::uint64_t run_seed) {
    FewshotResult out;
    for (const auto& name : stream.fewshot) {
        const PreparedTask& source = prepared.task(name);
        auto& accs = out.accuracies[name];
        for (std::size_t r = 0; r < stream.resamples; ++r) {
            const Episode ep = sample_episode(prepared.benchmark->task(name), stream.k, episode_seed(r));
            for (const auto& w : ep.warnings) out.warnings.push_back(w);
            const PreparedTask episode = prepare_episode(learner.encoder(), ep, source);
            accs.push_back(learner.fewshot_accuracy(episode, adaptation_seed(run_seed, r, name)));
        }
    }
    return out;
}

namespace {

double mean_fewshot(const FewshotResult& r) {
    std::vector<double> all;
    for (const auto& [task, accs] : r.accuracies) all.insert(all.end(), accs.begin(), accs.end());
    return mean_of(all);
}

}  // namespace

StreamResult run_stream(Learner& learner, const PreparedBenchmark& prepared, const StreamSpec& stream,
                        const std::vector<std::string>& order, std::uint64_t run_seed, StreamOptions options) {
    std::vector<const PreparedTask*> tasks;
    for (const auto& name : order) tasks.push_back(&prepared.task(name));
    for (const auto& name : stream.fewshot) prepared.task(name);
    const bool curve = options.fewshot_curve && !stream.fewshot.empty();

    StreamResult out;
    auto checkpoint = [&](std::size_t trained) {
        if (!curve) return;
        out.final_fewshot = evaluate_fewshot(learner, prepared, stream, run_seed);
        out.curve.push_back({trained, order[trained - 1], mean_fewshot(*out.final_fewshot)});
    };

    if (is_joint(learner.config().algorithm)) {
        out.matrix = AccuracyMatrix(order, true);
        learner.train_joint(tasks);
        std::vector<double> row;
        for (const auto* t : tasks) row.push_back(learner.evaluate(*t));
        out.matrix.add_row(std::move(row));
        checkpoint(tasks.size());
        return out;
    }

    out.matrix = AccuracyMatrix(order);
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        learner.train_task(*tasks[i]);
        std::vector<double> row;
        for (std::size_t j = 0; j <= i; ++j) row.push_back(learner.evaluate(*tasks[j]));
        out.matrix.add_row(std::move(row));
        checkpoint(i + 1);
    }
    return out;
}

std::vector<std::string> order_by_score(const std::map<std::string, double>& scores, bool decreasing) {
    std::vector<std::pair<double, std::string>> v;
    for (const auto& [name, s] : scores) v.emplace_back(s, name);
    std::sort(v.begin(), v.end());
    std::vector<std::string> out;
    for (const auto& [s, name] : v) out.push_back(name);
    if (decreasing) std::reverse(out.begin(), out.end());
    return out;
}

std::vector<std::string> relevance_order(const FrozenEncoder& encoder, const LearnerConfig& config,
                                         const PreparedBenchmark& prepared, const StreamSpec& stream,
                                         std::uint64_t seed, bool decreasing, std::map<std::string, double>* relevance) {
    if (stream.fewshot.empty()) throw ProtocolError("relevance orders need few-shot tasks");
    std::map<std::string, double> scores;
    for (const auto& name : stream.upstream) {
        Learner learner(encoder, config, derive_seed(seed, {seed_tag("relevance"), fnv1a64(name)}));
        learner.train_task(prepared.task(name));
        scores[name] = mean_fewshot(evaluate_fewshot(learner, prepared, stream, seed));
    }
    if (relevance) *relevance = scores;
    return order_by_score(scores, decreasing);
}

// ---- seeds -----------------------------------------------------------------

namespace {

json curve_json(const std::vector<CurvePoint>& curve) {
    json out = json::array();
    for (const auto& p : curve)
        out.push_back({{"upstream_index", p.upstream_index}, {"task", p.task}, {"fs_accuracy", p.fs_accuracy}});
    return out;
}

}  // namespace

json SeedResult::to_json() const {
    return {{"seed", seed},       {"order", order},
            {"matrix", matrix.to_json()},
            {"fewshot", fewshot}, {"curve", curve_json(curve)},
            {"relevance", relevance},
            {"metrics", metrics.to_json()},
            {"warnings", warnings}};
}

SeedResult SeedResult::from_json(const json& j) {
    SeedResult r;
    r.seed = j.at("seed").get<std::uint64_t>();
    r.order = j.at("order").get<std::vector<std::string>>();
    r.matrix = AccuracyMatrix::from_json(j.at("matrix"));
    r.fewshot = j.at("fewshot").get<FewshotAccuracies>();
    for (const auto& p : j.at("curve"))
        r.curve.push_back({p.at("upstream_index").get<std::size_t>(), p.at("task").get<std::string>(),
                           p.at("fs_accuracy").get<double>()});
    r.relevance = j.at("relevance").get<std::map<std::string, double>>();
    r.metrics = Metrics::from_json(j.at("metrics"));
    r.warnings = j.at("warnings").get<std::vector<std::string>>();
    return r;
}

SeedResult run_seed(const FrozenEncoder& encoder, const PreparedBenchmark& prepared, const ExperimentConfig& config,
                    std::uint64_t seed) {
    const StreamSpec& stream = config.stream;
    SeedResult r;
    r.seed = seed;
    switch (stream.order) {
        case OrderTag::Default: r.order = stream.upstream; break;
        case OrderTag::Explicit: r.order = stream.explicit_order; break;
        case OrderTag::RelevanceIncreasing:
        case OrderTag::RelevanceDecreasing:
            r.order = relevance_order(encoder, config.learner, prepared, stream, seed,
                                      stream.order == OrderTag::RelevanceDecreasing, &r.relevance);
            break;
    }

    Learner learner(encoder, config.learner, seed);
    StreamResult s = run_stream(learner, prepared, stream, r.order, seed, config.options);
    FewshotResult fs = s.final_fewshot ? std::move(*s.final_fewshot) : evaluate_fewshot(learner, prepared, stream, seed);
    r.matrix = std::move(s.matrix);
    r.curve = std::move(s.curve);
    r.fewshot = std::move(fs.accuracies);
    r.warnings = std::move(fs.warnings);
    r.metrics = aggregate_metrics(r.matrix, r.fewshot, !is_single_task(config.learner.algorithm));
    return r;
}

Experiment repeat_over_seeds(const FrozenEncoder& encoder, const PreparedBenchmark& prepared,
                             const ExperimentConfig& config, std::span<const std::uint64_t> seeds) {
    if (seeds.empty()) throw ProtocolError("an experiment needs at least one seed");
    Experiment e;
    std::vector<Metrics> metrics;
    for (std::uint64_t seed : seeds) {
        try {
            e.seeds.push_back(run_seed(encoder, prepared, config, seed));
        } catch (const std::exception& ex) {
            throw ProtocolError("seed " + std::to_string(seed) + " failed: " + ex.what());
        }
        metrics.push_back(e.seeds.back().metrics);
    }
    e.report = build_report(std::move(metrics));
    return e;
}

std::vector<std::uint64_t> default_seeds(std::size_t n) {
    std::vector<std::uint64_t> out;
    for (std::uint64_t s = 1; s <= n; ++s) out.push_back(s);
    return out;
}

std::string format_percent(double accuracy) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", accuracy * 100.0);
    return buf;
}

}  // namespace clif
