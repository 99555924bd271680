#include "clif/cli.hpp"

#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "clif/encoder.hpp"

namespace clif::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void require_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [key, value] : j.items())
        if (!allowed.contains(key)) throw ConfigError(where + "." + key + ": unknown key");
}

bool non_negative_integer(const json& v) { return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0); }

template <typename T>
T field(const json& j, const std::string& key, const std::string& where) {
    const json& v = j.at(key);
    if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
        if (!non_negative_integer(v)) throw ConfigError(where + "." + key + ": expected a non-negative integer");
    } else if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw ConfigError(where + "." + key + ": expected a number");
    } else if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError(where + "." + key + ": expected true or false");
    } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError(where + "." + key + ": expected a string");
    }
    try {
        return v.get<T>();
    } catch (const json::exception&) {
        throw ConfigError(where + "." + key + ": wrong type");
    }
}

template <typename T>
void maybe(const json& j, const std::string& key, T& dst, const std::string& where) {
    if (j.contains(key)) dst = field<T>(j, key, where);
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void write_file(const fs::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << content;
    if (!out.flush()) throw std::runtime_error("cannot write " + p.string());
}

json parse_json_file(const fs::path& p, const char* what) {
    const std::string text = read_file(p);
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw std::runtime_error(std::string(what) + " " + p.string() + ": " + e.what());
    }
}

bool valid_run_id(const std::string& id) {
    if (id.empty() || id.front() == '.') return false;
    return std::all_of(id.begin(), id.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
    });
}

}  // namespace

// ---- configuration ---------------------------------------------------------

json learner_to_json(const LearnerConfig& c) {
    return {{"learning_rate", c.learning_rate},
            {"batch_size", c.batch_size},
            {"max_epochs", c.max_epochs},
            {"patience", c.patience},
            {"fewshot_epochs", c.fewshot_epochs},
            {"replay_interval", c.replay_interval},
            {"replay", c.replay},
            {"ewc_lambda", c.ewc_lambda},
            {"ewc_decay", c.ewc_decay},
            {"fisher_samples", c.fisher_samples},
            {"mbpa_neighbors", c.mbpa_neighbors},
            {"mbpa_local_steps", c.mbpa_local_steps},
            {"reg_strength", c.reg.strength},
            {"prior_samples", c.reg.prior_samples},
            {"upstream_sample_size", c.upstream_sample_size},
            {"use_fewshot_repr", c.use_fewshot_repr},
            {"fewshot_target", c.fewshot_target == FewshotTarget::Hypernet ? "hypernet" : "adapters"},
            {"adapter_hidden", c.adapter_hidden},
            {"head_hidden", c.head_hidden},
            {"hypernet_hidden", c.hypernet_hidden},
            {"hypernet_output_scale", c.hypernet_output_scale},
            {"embedding_init_std", c.embedding_init_std}};
}

LearnerConfig learner_from_json(const json& j, LearnerConfig c) {
    const std::string w = "config.learner";
    std::set<std::string> allowed;
    const json defaults = learner_to_json(c);
    for (const auto& [key, value] : defaults.items()) allowed.insert(key);
    require_keys(j, allowed, w);
    maybe(j, "learning_rate", c.learning_rate, w);
    maybe(j, "batch_size", c.batch_size, w);
    maybe(j, "max_epochs", c.max_epochs, w);
    maybe(j, "patience", c.patience, w);
    maybe(j, "fewshot_epochs", c.fewshot_epochs, w);
    maybe(j, "replay_interval", c.replay_interval, w);
    maybe(j, "replay", c.replay, w);
    maybe(j, "ewc_lambda", c.ewc_lambda, w);
    maybe(j, "ewc_decay", c.ewc_decay, w);
    maybe(j, "fisher_samples", c.fisher_samples, w);
    maybe(j, "mbpa_neighbors", c.mbpa_neighbors, w);
    maybe(j, "mbpa_local_steps", c.mbpa_local_steps, w);
    maybe(j, "reg_strength", c.reg.strength, w);
    maybe(j, "prior_samples", c.reg.prior_samples, w);
    maybe(j, "upstream_sample_size", c.upstream_sample_size, w);
    maybe(j, "use_fewshot_repr", c.use_fewshot_repr, w);
    maybe(j, "adapter_hidden", c.adapter_hidden, w);
    maybe(j, "head_hidden", c.head_hidden, w);
    maybe(j, "hypernet_hidden", c.hypernet_hidden, w);
    maybe(j, "hypernet_output_scale", c.hypernet_output_scale, w);
    maybe(j, "embedding_init_std", c.embedding_init_std, w);
    if (j.contains("fewshot_target")) {
        const auto t = field<std::string>(j, "fewshot_target", w);
        if (t == "hypernet") c.fewshot_target = FewshotTarget::Hypernet;
        else if (t == "adapters") c.fewshot_target = FewshotTarget::Adapters;
        else throw ConfigError(w + ".fewshot_target: expected \"hypernet\" or \"adapters\"");
    }
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config.") + e.what());
    }
    return c;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
    std::vector<std::uint64_t> out;
    std::stringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) {
        item.erase(0, item.find_first_not_of(" \t"));
        item.erase(item.find_last_not_of(" \t") + 1);
        if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos)
            throw ConfigError("seeds: \"" + s + "\" is not a comma-separated list of non-negative integers");
        out.push_back(std::stoull(item));
    }
    if (out.empty()) throw ConfigError("seeds: empty list");
    std::set<std::uint64_t> unique(out.begin(), out.end());
    if (unique.size() != out.size()) throw ConfigError("seeds: repeated seed");
    return out;
}

RunConfig parse_run_config(const json& j, const fs::path& base_dir) {
    const std::string w = "config";
    require_keys(j, {"run_id", "description", "benchmark", "algorithm", "learner", "stream", "seeds", "out"}, w);
    for (const char* key : {"run_id", "benchmark", "algorithm"})
        if (!j.contains(key)) throw ConfigError(w + "." + key + ": required");
    RunConfig c;
    c.run_id = field<std::string>(j, "run_id", w);
    if (!valid_run_id(c.run_id))
        throw ConfigError(w + ".run_id: use letters, digits, '-', '_' or '.' and do not start with '.'");
    c.benchmark = field<std::string>(j, "benchmark", w);
    c.benchmark_path = fs::path(c.benchmark);
    if (c.benchmark_path.is_relative() && !base_dir.empty()) c.benchmark_path = base_dir / c.benchmark_path;
    if (!fs::is_regular_file(c.benchmark_path))
        throw ConfigError(w + ".benchmark: manifest not found: " + c.benchmark_path.string());

    LearnerConfig base;
    try {
        base.algorithm = parse_algorithm(field<std::string>(j, "algorithm", w));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(w + ".algorithm: " + e.what());
    }
    c.learner = learner_from_json(j.value("learner", json::object()), base);

    if (j.contains("stream")) {
        c.stream = j.at("stream");
        require_keys(c.stream, {"upstream", "fewshot", "order", "seeds", "resamples", "k", "fewshot_curve"},
                     w + ".stream");
        maybe(c.stream, "fewshot_curve", c.fewshot_curve, w + ".stream");
        c.stream.erase("fewshot_curve");
    }
    if (j.contains("seeds")) {
        const json& s = j.at("seeds");
        if (!s.is_array() || s.empty()) throw ConfigError(w + ".seeds: expected a non-empty list of integers");
        std::string joined;
        for (const auto& x : s) {
            if (!non_negative_integer(x)) throw ConfigError(w + ".seeds: expected non-negative integers");
            joined += (joined.empty() ? "" : ",") + std::to_string(x.get<std::uint64_t>());
        }
        c.seeds = parse_seed_list(joined);
    }
    if (j.contains("out")) {
        c.out = fs::path(field<std::string>(j, "out", w));
        if (c.out->is_relative() && !base_dir.empty()) c.out = base_dir / *c.out;
    }
    return c;
}

RunConfig load_run_config(const fs::path& path) {
    if (!fs::is_regular_file(path)) throw ConfigError("config file not found: " + path.string());
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    return parse_run_config(j, path.parent_path());
}

json stream_to_json(const StreamSpec& s) {
    json order = s.order == OrderTag::Explicit ? json(s.explicit_order) : json(order_name(s.order));
    return {{"upstream", s.upstream}, {"fewshot", s.fewshot}, {"order", order},
            {"seeds", s.seeds},       {"resamples", s.resamples}, {"k", s.k}};
}

StreamSpec resolve_stream(const StreamSpec& manifest, const RunConfig& config) {
    const std::string w = "config.stream";
    StreamSpec s = manifest;
    const json& o = config.stream;
    try {
        if (o.contains("upstream")) s.upstream = o.at("upstream").get<std::vector<std::string>>();
        if (o.contains("fewshot")) s.fewshot = o.at("fewshot").get<std::vector<std::string>>();
    } catch (const json::exception&) {
        throw ConfigError(w + ": task lists must be arrays of strings");
    }
    maybe(o, "seeds", s.seeds, w);
    maybe(o, "resamples", s.resamples, w);
    maybe(o, "k", s.k, w);
    try {
        if (o.contains("order")) parse_order(o.at("order"), s, w + ".order");
        else if (o.contains("upstream") && s.order == OrderTag::Explicit) s.order = OrderTag::Default;
        s.validate();
    } catch (const std::exception& e) {
        throw ConfigError(std::string(w) + ": " + e.what());
    }
    return s;
}

// ---- records ---------------------------------------------------------------

std::string json_hash(const json& j) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
    return buf;
}

json RunRecord::to_json() const {
    json seeds_json = json::array();
    for (const auto& s : seeds) seeds_json.push_back(s.to_json());
    return {{"engine_version", engine_version},
            {"run_id", run_id},
            {"algorithm", algorithm},
            {"benchmark", benchmark},
            {"manifest_hash", manifest_hash},
            {"config_hash", config_hash},
            {"config", config},
            {"k", k},
            {"seeds", seeds_json},
            {"report", report.to_json()},
            {"wall_clock_seconds", wall_clock_seconds}};
}

RunRecord RunRecord::from_json(const json& j) {
    RunRecord r;
    r.engine_version = j.at("engine_version").get<std::string>();
    r.run_id = j.at("run_id").get<std::string>();
    r.algorithm = j.at("algorithm").get<std::string>();
    r.benchmark = j.at("benchmark").get<std::string>();
    r.manifest_hash = j.at("manifest_hash").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.config = j.at("config");
    r.k = j.at("k").get<std::size_t>();
    std::vector<Metrics> metrics;
    for (const auto& s : j.at("seeds")) {
        r.seeds.push_back(SeedResult::from_json(s));
        metrics.push_back(r.seeds.back().metrics);
    }
    r.report = build_report(std::move(metrics));
    r.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
    return r;
}

RunRecord load_record(const fs::path& path) {
    try {
        return RunRecord::from_json(parse_json_file(path, "record"));
    } catch (const json::exception& e) {
        throw std::runtime_error("record " + path.string() + ": " + e.what());
    }
}

namespace {

std::vector<SeedResult> run_workers(const FrozenEncoder& encoder, const PreparedBenchmark& prepared,
                                    const ExperimentConfig& exp, std::span<const std::uint64_t> seeds,
                                    std::size_t parallel, const fs::path& scratch) {
    fs::create_directories(scratch);
    auto result_path = [&](std::size_t i) { return scratch / ("seed-" + std::to_string(seeds[i]) + ".json"); };
    auto error_path = [&](std::size_t i) { return scratch / ("seed-" + std::to_string(seeds[i]) + ".err"); };

    std::map<pid_t, std::size_t> running;
    std::vector<bool> failed(seeds.size(), false);
    std::size_t next = 0;
    while (next < seeds.size() || !running.empty()) {
        while (running.size() < parallel && next < seeds.size()) {
            std::fflush(nullptr);
            const pid_t pid = fork();
            if (pid < 0) throw std::runtime_error("fork failed");
            if (pid == 0) {
                int code = 0;
                try {
                    const SeedResult r = run_seed(encoder, prepared, exp, seeds[next]);
                    const fs::path tmp = result_path(next).string() + ".tmp";
                    write_file(tmp, r.to_json().dump());
                    fs::rename(tmp, result_path(next));
                } catch (const std::exception& e) {
                    try {
                        write_file(error_path(next), e.what());
                    } catch (...) {
                    }
                    code = 1;
                }
                _exit(code);
            }
            running[pid] = next++;
        }
        int status = 0;
        const pid_t pid = waitpid(-1, &status, 0);
        if (pid < 0) throw std::runtime_error("waitpid failed");
        auto it = running.find(pid);
        if (it == running.end()) continue;
        failed[it->second] = !WIFEXITED(status) || WEXITSTATUS(status) != 0;
        running.erase(it);
    }

    std::vector<SeedResult> out;
    std::string failure;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        if (failed[i] && failure.empty()) {
            std::string why = "worker exited abnormally";
            if (fs::exists(error_path(i))) why = read_file(error_path(i));
            failure = "seed " + std::to_string(seeds[i]) + " failed: " + why;
        }
        if (!failed[i]) out.push_back(SeedResult::from_json(parse_json_file(result_path(i), "worker result")));
    }
    fs::remove_all(scratch);
    if (!failure.empty()) throw ProtocolError(failure);
    return out;
}

}  // namespace

RunRecord execute(const RunConfig& config, const RunOptions& options) {
    const auto start = std::chrono::steady_clock::now();
    Benchmark benchmark;
    try {
        benchmark = load_benchmark(config.benchmark_path);
    } catch (const DataError& e) {
        throw ConfigError(std::string("config.benchmark: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config.benchmark: ") + e.what());
    }
    ExperimentConfig exp;
    exp.learner = config.learner;
    exp.stream = resolve_stream(benchmark.stream, config);
    exp.options.fewshot_curve = config.fewshot_curve;
    for (const auto* list : {&exp.stream.upstream, &exp.stream.fewshot})
        for (const auto& name : *list)
            if (!benchmark.tasks.contains(name))
                throw ConfigError("config.stream: task \"" + name + "\" is not in benchmark " + benchmark.name);
    const std::vector<std::uint64_t> seeds = config.seeds.empty() ? default_seeds(exp.stream.seeds) : config.seeds;

    const FrozenEncoder encoder;
    const PreparedBenchmark prepared = prepare_benchmark(encoder, benchmark);

    RunRecord r;
    if (options.parallel > 1 && seeds.size() > 1) {
        if (options.scratch.empty()) throw std::invalid_argument("parallel runs need a scratch directory");
        r.seeds = run_workers(encoder, prepared, exp, seeds, options.parallel, options.scratch);
    } else {
        r.seeds = repeat_over_seeds(encoder, prepared, exp, seeds).seeds;
    }
    std::vector<Metrics> metrics;
    for (const auto& s : r.seeds) metrics.push_back(s.metrics);
    r.report = build_report(std::move(metrics));

    r.run_id = config.run_id;
    r.algorithm = algorithm_name(config.learner.algorithm);
    r.benchmark = benchmark.name;
    r.manifest_hash = json_hash(parse_json_file(config.benchmark_path, "manifest"));
    json stream = stream_to_json(exp.stream);
    stream["fewshot_curve"] = config.fewshot_curve;
    r.config = {{"run_id", config.run_id},
                {"benchmark", config.benchmark},
                {"algorithm", r.algorithm},
                {"learner", learner_to_json(config.learner)},
                {"stream", stream},
                {"seeds", seeds}};
    r.config_hash = json_hash(r.config);
    r.k = exp.stream.k;
    r.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
}

// ---- tables ----------------------------------------------------------------

namespace {

std::string pct(const std::optional<double>& v) { return v ? format_percent(*v) : ""; }

std::string delta_text(const std::optional<double>& d) {
    if (!d) return "";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%+.1f%%", *d);
    return std::string(buf) == "-0.0%" ? "+0.0%" : buf;
}

std::size_t display_width(const std::string& s) {
    std::size_t n = 0;
    for (unsigned char c : s) n += (c & 0xC0) != 0x80;
    return n;
}

std::string render(const std::vector<std::vector<std::string>>& rows, std::size_t left_columns) {
    std::vector<std::size_t> width;
    for (const auto& row : rows)
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (width.size() <= c) width.push_back(0);
            width[c] = std::max(width[c], display_width(row[c]));
        }
    std::string out;
    for (const auto& row : rows) {
        std::string line;
        for (std::size_t c = 0; c < row.size(); ++c) {
            const std::string pad(width[c] - display_width(row[c]), ' ');
            if (c > 0) line += "  ";
            line += c < left_columns ? row[c] + pad : pad + row[c];
        }
        line.erase(line.find_last_not_of(' ') + 1);
        out += line + "\n";
    }
    return out;
}

// Differing learner and stream keys, excluding the algorithm and run id.
std::string config_drift(const RunRecord& a, const RunRecord& b) {
    std::vector<std::string> keys;
    auto part = [](const json& config, const char* key) {
        return config.is_object() && config.contains(key) ? config.at(key) : json::object();
    };
    for (const char* section : {"learner", "stream"}) {
        const json x = part(a.config, section);
        const json y = part(b.config, section);
        std::set<std::string> names;
        for (const auto& [k, v] : x.items()) names.insert(k);
        for (const auto& [k, v] : y.items()) names.insert(k);
        for (const auto& k : names)
            if (x.value(k, json()) != y.value(k, json())) keys.push_back(std::string(section) + "." + k);
    }
    if (part(a.config, "seeds") != part(b.config, "seeds")) keys.push_back("seeds");
    std::string out;
    for (const auto& k : keys) out += (out.empty() ? "" : ", ") + k;
    return out;
}

std::string csv_join(const std::vector<std::string>& cells) {
    std::string out;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out += ",";
        out += cells[i];
    }
    return out + "\n";
}

}  // namespace

std::string metrics_csv(const RunRecord& record) {
    std::string out = "run_id,algorithm,seed,s_inst,s_final,s_fs,forgetting\n";
    for (const auto& s : record.seeds) {
        const Metrics& m = s.metrics;
        out += csv_join({record.run_id, record.algorithm, std::to_string(s.seed), format_percent(m.s_inst),
                         pct(m.s_final), pct(m.s_fs), pct(m.forgetting)});
    }
    const MetricsReport& r = record.report;
    auto mean = [](const std::optional<Summary>& s) { return s ? std::optional<double>(s->mean) : std::nullopt; };
    auto dev = [](const std::optional<Summary>& s) { return s ? std::optional<double>(s->std) : std::nullopt; };
    out += csv_join({record.run_id, record.algorithm, "mean", format_percent(r.s_inst.mean), pct(mean(r.s_final)),
                     pct(mean(r.s_fs)), pct(mean(r.forgetting))});
    out += csv_join({record.run_id, record.algorithm, "std", format_percent(r.s_inst.std), pct(dev(r.s_final)),
                     pct(dev(r.s_fs)), pct(dev(r.forgetting))});
    return out;
}

Table report_table(std::span<const RunRecord> records, std::span<const RunRecord> baselines) {
    Table t;
    std::vector<BaselineValues> base;
    for (const auto& b : baselines)
        base.push_back({b.run_id, b.report.s_inst.mean,
                        b.report.s_fs ? std::optional<double>(b.report.s_fs->mean) : std::nullopt});
    if (baselines.empty()) t.warnings.push_back("no baseline records given: improvement columns are empty");

    std::set<std::string> manifests;
    for (const auto& r : records) manifests.insert(r.manifest_hash);
    for (const auto& r : baselines) manifests.insert(r.manifest_hash);
    if (manifests.size() > 1) t.warnings.push_back("records were produced from different benchmark manifests");
    std::vector<const RunRecord*> all;
    for (const auto& r : records) all.push_back(&r);
    for (const auto& r : baselines) all.push_back(&r);
    for (const auto* r : all)
        if (r != all.front()) {
            const std::string drift = config_drift(*all.front(), *r);
            if (!drift.empty())
                t.warnings.push_back(r->run_id + " differs from " + all.front()->run_id + " in " + drift);
        }

    auto cell = [](const std::optional<Summary>& s) {
        return s ? format_percent(s->mean) + " ± " + format_percent(s->std) : std::string("-");
    };
    std::vector<std::vector<std::string>> rows{
        {"Run", "Algorithm", "Final Acc.", "Inst. Acc.", "F-S Acc.", "Δ Inst.", "Δ FS"}};
    t.csv = "run_id,algorithm,final_mean,final_std,inst_mean,inst_std,fs_mean,fs_std,delta_inst,delta_fs\n";
    for (const auto& r : records) {
        MetricsReport rep = r.report;
        apply_baselines(rep, base);
        auto or_dash = [](std::string s) { return s.empty() ? std::string("-") : s; };
        rows.push_back({r.run_id, r.algorithm, cell(rep.s_final), cell(rep.s_inst), cell(rep.s_fs),
                        or_dash(delta_text(rep.delta_inst)), or_dash(delta_text(rep.delta_fs))});
        auto mean = [](const std::optional<Summary>& s) { return s ? std::optional<double>(s->mean) : std::nullopt; };
        auto dev = [](const std::optional<Summary>& s) { return s ? std::optional<double>(s->std) : std::nullopt; };
        t.csv += csv_join({r.run_id, r.algorithm, pct(mean(rep.s_final)), pct(dev(rep.s_final)),
                           format_percent(rep.s_inst.mean), format_percent(rep.s_inst.std), pct(mean(rep.s_fs)),
                           pct(dev(rep.s_fs)), delta_text(rep.delta_inst), delta_text(rep.delta_fs)});
    }
    t.text = render(rows, 2);
    if (!baselines.empty()) {
        t.text += "\nBaselines (best of each metric):";
        for (const auto& b : baselines) t.text += " " + b.run_id;
        t.text += "\n";
    }
    return t;
}

std::string curve_csv(const RunRecord& record) {
    if (record.seeds.empty() || record.seeds.front().curve.empty())
        throw std::runtime_error("record " + record.run_id +
                                 " has no few-shot curve; rerun with \"stream\": {\"fewshot_curve\": true}");
    const std::size_t n = record.seeds.front().curve.size();
    std::string out = "upstream_index,task,fs_mean,fs_std\n";
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> v;
        std::string task = record.seeds.front().curve[i].task;
        for (const auto& s : record.seeds) {
            if (s.curve.size() != n) throw std::runtime_error("record " + record.run_id + ": seeds disagree on curve length");
            v.push_back(s.curve[i].fs_accuracy);
            if (s.curve[i].task != task) task = "*";
        }
        const Summary sum = summarize(v);
        out += csv_join({std::to_string(record.seeds.front().curve[i].upstream_index), task, format_percent(sum.mean),
                         format_percent(sum.std)});
    }
    return out;
}

std::string k_series_csv(std::span<const RunRecord> records) {
    std::vector<const RunRecord*> sorted;
    for (const auto& r : records) {
        if (!r.report.s_fs) throw std::runtime_error("record " + r.run_id + " has no few-shot accuracy");
        sorted.push_back(&r);
    }
    std::stable_sort(sorted.begin(), sorted.end(), [](const RunRecord* a, const RunRecord* b) {
        return a->k != b->k ? a->k < b->k : a->run_id < b->run_id;
    });
    std::string out = "k,run_id,fs_mean,fs_std\n";
    for (const auto* r : sorted)
        out += csv_join({std::to_string(r->k), r->run_id, format_percent(r->report.s_fs->mean),
                         format_percent(r->report.s_fs->std)});
    return out;
}

// ---- commands --------------------------------------------------------------

namespace {

struct RunFlags {
    std::string config;
    std::string out;
    std::string seeds;
    std::size_t parallel = 1;
    bool force = false;
};

fs::path output_root(const RunFlags& flags, const RunConfig& config) {
    if (!flags.out.empty()) return flags.out;
    if (const char* env = std::getenv(kOutputRootEnv); env && *env) return env;
    if (config.out) return *config.out;
    return kDefaultOutputRoot;
}

fs::path run_one(RunConfig config, const RunFlags& flags, std::ostream& out) {
    const fs::path dir = output_root(flags, config) / config.run_id;
    if (fs::exists(dir / "record.json") && !flags.force)
        throw ConfigError("run id \"" + config.run_id + "\" already exists in " + dir.parent_path().string() +
                          " (use --force to overwrite)");
    fs::create_directories(dir);
    const RunRecord r = execute(config, {flags.parallel, dir / ".work"});
    write_file(dir / "record.json", r.to_json().dump(2) + "\n");
    write_file(dir / "metrics.csv", metrics_csv(r));
    out << r.run_id << " (" << r.algorithm << ", " << r.seeds.size() << " seeds): inst "
        << format_percent(r.report.s_inst.mean) << "  final "
        << (r.report.s_final ? format_percent(r.report.s_final->mean) : "-") << "  few-shot "
        << (r.report.s_fs ? format_percent(r.report.s_fs->mean) : "-") << "\n"
        << "wrote " << (dir / "record.json").string() << "\n";
    return dir;
}

RunConfig configured(const RunFlags& flags) {
    RunConfig c = load_run_config(flags.config);
    if (!flags.seeds.empty()) c.seeds = parse_seed_list(flags.seeds);
    return c;
}

std::vector<RunRecord> load_records(const std::vector<std::string>& paths) {
    std::vector<RunRecord> out;
    for (const auto& p : paths) out.push_back(load_record(p));
    return out;
}

void add_run_flags(CLI::App* cmd, RunFlags& f) {
    cmd->add_option("--config", f.config, "Run configuration (JSON)")->required();
    cmd->add_option("--out", f.out, std::string("Output root (default: $") + kOutputRootEnv + ", the config's \"out\", or ./" +
                                        kDefaultOutputRoot + ")");
    cmd->add_option("--seeds", f.seeds, "Comma-separated seed list, e.g. \"1,2,3\"");
    cmd->add_option("--parallel", f.parallel, "Worker processes for independent seeds")->check(CLI::PositiveNumber);
    cmd->add_flag("--force", f.force, "Overwrite an existing run with the same id");
}

}  // namespace

int run_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Continual few-shot learning experiments", "clif"};
    app.require_subcommand(1);

    RunFlags run_flags, baseline_flags;
    auto* run = app.add_subcommand("run", "Train and evaluate one configuration over its seeds");
    add_run_flags(run, run_flags);
    auto* baselines = app.add_subcommand("baselines", "Run the single-task baselines of a configuration");
    add_run_flags(baselines, baseline_flags);

    std::vector<std::string> report_paths, baseline_paths;
    std::string report_csv;
    auto* report = app.add_subcommand("report", "Compare records in a table");
    report->add_option("records", report_paths, "record.json files")->required();
    report->add_option("--baseline", baseline_paths, "Baseline record.json (repeatable)")
        ->allow_extra_args(false)
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    report->add_option("--csv", report_csv, "Also write the table as CSV");

    std::vector<std::string> curve_paths;
    std::string curve_out;
    bool by_k = false;
    auto* curves = app.add_subcommand("curves", "Plot-ready few-shot series");
    curves->add_option("records", curve_paths, "record.json files")->required();
    curves->add_flag("--by-k", by_k, "Few-shot accuracy against k across records");
    curves->add_option("--csv", curve_out, "Write the series to this file instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*run) {
            run_one(configured(run_flags), run_flags, out);
        } else if (*baselines) {
            const RunConfig base = configured(baseline_flags);
            for (Algorithm a : {Algorithm::AdapterSingle, Algorithm::BihnetSingle}) {
                RunConfig c = base;
                c.learner.algorithm = a;
                c.run_id = base.run_id + "-" + algorithm_name(a);
                run_one(c, baseline_flags, out);
            }
        } else if (*report) {
            const auto records = load_records(report_paths);
            const auto bases = load_records(baseline_paths);
            const Table t = report_table(records, bases);
            for (const auto& w : t.warnings) err << "warning: " << w << "\n";
            out << t.text;
            if (!report_csv.empty()) write_file(report_csv, t.csv);
        } else if (*curves) {
            const auto records = load_records(curve_paths);
            std::string csv;
            if (by_k) {
                csv = k_series_csv(records);
            } else {
                for (const auto& r : records) csv += (records.size() > 1 ? "# " + r.run_id + "\n" : "") + curve_csv(r);
            }
            if (curve_out.empty()) out << csv;
            else write_file(curve_out, csv);
        }
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}

}  // namespace clif::cli
