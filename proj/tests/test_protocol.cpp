#include <doctest.h>

#include <cmath>

#include "clif/protocol.hpp"

using namespace clif;

namespace {

nlohmann::json tiny_manifest(std::size_t resamples = 2) {
    return {{"name", "tiny"},
            {"families",
             {{{"family", "keyword-topic"},
               {"prefix", "kt"},
               {"classes", 2},
               {"count", 4},
               {"keywords_per_class", 4},
               {"per_class", {{"train", 30}, {"validation", 10}, {"test", 20}}}}}},
            {"upstream", {"kt-1", "kt-2", "kt-3"}},
            {"fewshot", {"kt-4"}},
            {"seeds", 2},
            {"resamples", resamples},
            {"k", 4}};
}

EncoderConfig tiny_encoder() {
    EncoderConfig c;
    c.hash_buckets = 512;
    c.model_dim = 16;
    c.seed = 3;
    return c;
}

ExperimentConfig tiny_config(const Benchmark& b, Algorithm a) {
    ExperimentConfig c;
    c.learner.algorithm = a;
    c.learner.learning_rate = 3e-3;
    c.learner.max_epochs = 3;
    c.learner.patience = 2;
    c.learner.fewshot_epochs = 2;
    c.stream = b.stream;
    return c;
}

}  // namespace

TEST_CASE("metric arithmetic reproduces the published derived values") {
    // Diagonal mean 0.7992, last-row mean 0.1973.
    AccuracyMatrix m({"a", "b", "c"});
    m.add_row({1.0});
    m.add_row({0.5, 1.0});
    m.add_row({0.0969, 0.0974, 0.3976});
    const Metrics x = aggregate_metrics(m, {});
    CHECK(x.s_inst == doctest::Approx(0.7992).epsilon(1e-12));
    CHECK(*x.s_final == doctest::Approx(0.1973).epsilon(1e-12));
    CHECK(std::abs(*x.forgetting * 100.0 - 60.19) <= 0.05);
    CHECK(format_percent(*x.forgetting) == "60.19");

    const double fs_baselines[] = {59.00, 52.66};
    CHECK(*relative_improvement(60.09, fs_baselines) == doctest::Approx((60.09 - 59.00) / 59.00 * 100.0));
    CHECK(std::abs(*relative_improvement(60.09, fs_baselines) - 1.8) <= 0.05);
    const double inst_baselines[] = {74.98, 76.67};
    CHECK(std::abs(*relative_improvement(80.24, inst_baselines) - 4.7) <= 0.05);
    CHECK_FALSE(relative_improvement(1.0, std::span<const double>{}).has_value());
}

TEST_CASE("accuracy matrix shape law") {
    AccuracyMatrix m({"a", "b", "c"});
    CHECK_THROWS_AS(m.add_row({0.5, 0.5}), ProtocolError);
    m.add_row({0.9});
    m.add_row({0.8, 0.7});
    CHECK_FALSE(m.complete());
    CHECK_THROWS_AS(m.instant(), ProtocolError);
    m.add_row({0.6, 0.5, 1.0});
    CHECK(m.complete());
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(m.rows()[i].size() == i + 1);
        for (std::size_t j = 0; j < 3; ++j) CHECK(m.at(i, j).has_value() == (j <= i));
    }
    CHECK(m.instant() == std::vector<double>{0.9, 0.7, 1.0});
    CHECK(m.final_row() == std::vector<double>{0.6, 0.5, 1.0});
    CHECK_THROWS_AS(m.add_row({0.1}), ProtocolError);
    CHECK(AccuracyMatrix::from_json(m.to_json()) == m);

    AccuracyMatrix j({"a", "b"}, true);
    j.add_row({0.4, 0.6});
    CHECK(j.complete());
    CHECK(j.instant() == j.final_row());

    AccuracyMatrix bad({"a"});
    CHECK_THROWS_AS(bad.add_row({1.5}), ProtocolError);
}

TEST_CASE("aggregate metrics") {
    AccuracyMatrix m({"a", "b"});
    m.add_row({1.0});
    m.add_row({0.5, 0.8});
    FewshotAccuracies fs{{"x", {0.5, 0.7}}, {"y", {0.9, 0.1}}};
    const Metrics r = aggregate_metrics(m, fs);
    CHECK(r.s_inst == doctest::Approx(0.9));
    CHECK(*r.s_final == doctest::Approx(0.65));
    CHECK(*r.forgetting == doctest::Approx(0.25));
    CHECK(*r.s_fs == doctest::Approx(0.55));
    CHECK(r.fs_per_task.at("x") == doctest::Approx(0.6));
    CHECK(Metrics::from_json(r.to_json()) == r);

    const Metrics single = aggregate_metrics(m, fs, false);
    CHECK_FALSE(single.s_final.has_value());
    CHECK_FALSE(single.forgetting.has_value());

    FewshotAccuracies ragged{{"x", {0.5}}, {"y", {0.9, 0.1}}};
    CHECK_THROWS_AS(aggregate_metrics(m, ragged), ProtocolError);
    AccuracyMatrix open({"a", "b"});
    open.add_row({1.0});
    CHECK_THROWS_AS(aggregate_metrics(open, fs), ProtocolError);
}

TEST_CASE("seed summaries use the population deviation") {
    const double one[] = {0.42};
    CHECK(summarize(one).std == 0.0);
    const double three[] = {0.2, 0.4, 0.6};
    CHECK(summarize(three).mean == doctest::Approx(0.4));
    CHECK(summarize(three).std == doctest::Approx(std::sqrt(0.08 / 3.0)));

    Metrics a, b;
    a.s_inst = 0.8;
    b.s_inst = 0.6;
    a.s_fs = 0.5;
    b.s_fs = 0.7;
    MetricsReport r = build_report({a, b});
    CHECK(r.s_inst.mean == doctest::Approx(0.7));
    CHECK(r.s_inst.std == doctest::Approx(0.1));
    CHECK_FALSE(r.s_final.has_value());

    apply_baselines(r, std::span<const BaselineValues>{});
    CHECK_FALSE(r.delta_fs.has_value());
    const BaselineValues base[] = {{"p", 0.5, 0.4}, {"q", 0.7, std::nullopt}};
    apply_baselines(r, base);
    CHECK(*r.delta_inst == doctest::Approx(0.0));
    CHECK(*r.delta_fs == doctest::Approx(50.0));

    Metrics c = a;
    c.s_final = 0.5;
    CHECK_THROWS_AS(build_report({a, c}), ProtocolError);
}

TEST_CASE("order by score") {
    const std::map<std::string, double> tied{{"c", 0.5}, {"a", 0.5}, {"b", 0.5}};
    CHECK(order_by_score(tied, false) == std::vector<std::string>{"a", "b", "c"});
    const std::map<std::string, double> s{{"a", 0.9}, {"b", 0.1}, {"c", 0.5}};
    auto inc = order_by_score(s, false);
    auto dec = order_by_score(s, true);
    CHECK(inc == std::vector<std::string>{"b", "c", "a"});
    std::reverse(dec.begin(), dec.end());
    CHECK(dec == inc);
}

TEST_CASE("percent formatting") {
    CHECK(format_percent(0.79925) == "79.92");
    CHECK(format_percent(1.0) == "100.00");
    CHECK(format_percent(0.0) == "0.00");
}

TEST_CASE("stream runs") {
    const Benchmark b = build_benchmark(tiny_manifest());
    const FrozenEncoder enc(tiny_encoder());
    const PreparedBenchmark p = prepare_benchmark(enc, b);

    SUBCASE("a sequential run fills a triangle and evaluates every resample") {
        ExperimentConfig c = tiny_config(b, Algorithm::AdapterVanilla);
        c.options.fewshot_curve = true;
        const SeedResult r = run_seed(enc, p, c, 1);
        CHECK(r.matrix.complete());
        CHECK(r.matrix.rows().size() == 3);
        CHECK(r.fewshot.at("kt-4").size() == 2);
        REQUIRE(r.curve.size() == 3);
        CHECK(r.curve.back().fs_accuracy == doctest::Approx(*r.metrics.s_fs));
        CHECK(r.curve.front().task == "kt-1");

        ExperimentConfig plain = c;
        plain.options.fewshot_curve = false;
        const SeedResult q = run_seed(enc, p, plain, 1);
        CHECK(q.metrics == r.metrics);
        CHECK(q.curve.empty());

        const SeedResult back = SeedResult::from_json(nlohmann::json::parse(r.to_json().dump()));
        CHECK(back.metrics == r.metrics);
        CHECK(back.matrix == r.matrix);
        CHECK(back.curve.size() == 3);
    }
    SUBCASE("one upstream task: instant equals final") {
        StreamSpec s = b.stream;
        s.upstream = {"kt-2"};
        Learner l(enc, tiny_config(b, Algorithm::BihnetReg).learner, 4);
        const StreamResult r = run_stream(l, p, s, s.upstream, 4);
        CHECK(r.matrix.instant() == r.matrix.final_row());
    }
    SUBCASE("joint learners produce one row") {
        const SeedResult r = run_seed(enc, p, tiny_config(b, Algorithm::AdapterMtl), 2);
        CHECK(r.matrix.joint());
        CHECK(r.matrix.rows().size() == 1);
        CHECK(*r.metrics.forgetting == 0.0);
    }
    SUBCASE("single-task learners report no final accuracy") {
        const SeedResult r = run_seed(enc, p, tiny_config(b, Algorithm::AdapterSingle), 2);
        CHECK_FALSE(r.metrics.s_final.has_value());
        CHECK(r.matrix.instant() == r.matrix.final_row());
    }
    SUBCASE("unknown tasks fail before training") {
        Learner l(enc, tiny_config(b, Algorithm::AdapterVanilla).learner, 1);
        const auto before = l.checksum();
        CHECK_THROWS_AS(run_stream(l, p, b.stream, {"kt-1", "nope"}, 1), ProtocolError);
        CHECK(l.checksum() == before);
    }
    SUBCASE("majority few-shot accuracy equals the test majority rate") {
        const SeedResult r = run_seed(enc, p, tiny_config(b, Algorithm::Majority), 1);
        // Balanced episodes pick label 0; the balanced test split scores a half.
        for (double a : r.fewshot.at("kt-4")) CHECK(a == doctest::Approx(0.5));
    }
    SUBCASE("evaluation leaves the learner untouched") {
        Learner l(enc, tiny_config(b, Algorithm::BihnetReg).learner, 1);
        run_stream(l, p, b.stream, b.stream.upstream, 1);
        const auto before = l.checksum();
        const auto x = evaluate_fewshot(l, p, b.stream, 1);
        for (const auto& name : b.stream.upstream) l.evaluate(p.task(name));
        CHECK(evaluate_fewshot(l, p, b.stream, 1).accuracies == x.accuracies);
        CHECK(l.checksum() == before);
    }
}

TEST_CASE("seed repetition") {
    const Benchmark b = build_benchmark(tiny_manifest(1));
    const FrozenEncoder enc(tiny_encoder());
    const PreparedBenchmark p = prepare_benchmark(enc, b);
    const ExperimentConfig c = tiny_config(b, Algorithm::BihnetVanilla);

    const std::uint64_t forward[] = {1, 2};
    const std::uint64_t backward[] = {2, 1};
    const Experiment e = repeat_over_seeds(enc, p, c, forward);
    const Experiment f = repeat_over_seeds(enc, p, c, backward);
    CHECK(e.report.s_inst.mean == f.report.s_inst.mean);
    CHECK(e.report.s_fs->mean == f.report.s_fs->mean);
    CHECK(e.seeds[0].metrics == f.seeds[1].metrics);

    const std::uint64_t one[] = {1};
    CHECK(repeat_over_seeds(enc, p, c, one).report.s_inst.std == 0.0);
    CHECK(default_seeds(3) == std::vector<std::uint64_t>{1, 2, 3});
    CHECK(episode_seed(0) != episode_seed(1));
    CHECK(adaptation_seed(1, 0, "a") != adaptation_seed(2, 0, "a"));
}

TEST_CASE("relevance orders") {
    const Benchmark b = build_benchmark(tiny_manifest(1));
    const FrozenEncoder enc(tiny_encoder());
    const PreparedBenchmark p = prepare_benchmark(enc, b);
    ExperimentConfig c = tiny_config(b, Algorithm::BihnetVanilla);
    std::map<std::string, double> rel;
    const auto inc = relevance_order(enc, c.learner, p, b.stream, 1, false, &rel);
    const auto dec = relevance_order(enc, c.learner, p, b.stream, 1, true);
    CHECK(rel.size() == 3);
    CHECK(inc == order_by_score(rel, false));
    CHECK(std::vector<std::string>(dec.rbegin(), dec.rend()) == inc);

    c.stream.order = OrderTag::RelevanceDecreasing;
    const SeedResult r = run_seed(enc, p, c, 1);
    CHECK(r.order == dec);
    CHECK(r.relevance == rel);
}
