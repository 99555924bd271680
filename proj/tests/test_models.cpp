#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "clif/adapter_model.hpp"
#include "clif/bihnet.hpp"
#include "clif/binio.hpp"
#include "clif/encoder.hpp"
#include "clif/numcore/ops.hpp"
#include "clif/numcore/optim.hpp"

using namespace clif;
using namespace clif::num;

namespace {

EncoderConfig small_encoder(std::uint64_t seed = 5) {
    EncoderConfig c;
    c.hash_buckets = 512;
    c.model_dim = 8;
    c.num_layers = 2;
    c.seed = seed;
    return c;
}

AdapterShape small_shape() { return AdapterShape{8, 3, 2, 2}; }

AdapterWeights random_adapters(const AdapterShape& shape, Rng& rng, double scale = 0.3) {
    std::vector<double> flat(shape.parameter_count());
    for (double& x : flat) x = rng.normal(0.0, scale);
    return AdapterWeights::unflatten(shape, flat);
}

double cosine(const Vec& a, const Vec& b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    return ab / std::sqrt(aa * bb);
}

Tensor pooled_batch(const FrozenEncoder& enc, const std::vector<std::string>& texts) {
    std::vector<double> data;
    for (const auto& t : texts) {
        Vec p = enc.pool(t);
        data.insert(data.end(), p.begin(), p.end());
    }
    return Tensor(Shape{texts.size(), enc.dim()}, std::move(data));
}

// Reference forward written directly from the layer equations, used as an
// oracle for both the numeric and the tape model paths.
Vec reference_forward(const FrozenEncoder& enc, const Vec& h0, const AdapterWeights& w) {
    const std::size_t d = enc.dim();
    auto block = [&](const AdapterBlock& b, const Vec& x) {
        const std::size_t r = b.down_bias.size();
        Vec hid(r);
        for (std::size_t i = 0; i < r; ++i) {
            double s = b.down_bias[i];
            for (std::size_t j = 0; j < d; ++j) s += b.down.at(i, j) * x[j];
            hid[i] = std::max(0.0, s);
        }
        Vec out(d);
        for (std::size_t i = 0; i < d; ++i) {
            double s = b.up_bias[i];
            for (std::size_t j = 0; j < r; ++j) s += b.up.at(i, j) * hid[j];
            out[i] = x[i] + s;
        }
        return out;
    };
    Vec h = h0;
    for (std::size_t l = 0; l < enc.num_layers(); ++l) {
        Vec next(d);
        for (std::size_t i = 0; i < d; ++i) {
            double s = enc.layer_bias(l)[i];
            for (std::size_t j = 0; j < d; ++j) s += enc.layer_weight(l).at(i, j) * h[j];
            next[i] = h[i] + std::tanh(s);
        }
        h = block(w.layers[l], next);
    }
    return block(w.head, h);
}

}  // namespace

TEST_CASE("tokenize") {
    FrozenEncoder enc(small_encoder());
    CHECK(enc.tokenize("The cat") == enc.tokenize("the CAT"));
    CHECK(enc.tokenize("").empty());
    CHECK(enc.tokenize("a,b") == enc.tokenize("a b"));
    CHECK(enc.tokenize("a,b").size() == 2);
    CHECK(enc.tokenize("  --  ").empty());
    CHECK(enc.tokenize("caf\xc3\xa9 bar").size() == 2);
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("encode") {
    FrozenEncoder enc(small_encoder());
    auto acts = enc.encode("");
    REQUIRE(acts.size() == 3);
    CHECK(std::all_of(acts[0].begin(), acts[0].end(), [](double x) { return x == 0.0; }));
    CHECK(acts[1] == enc.apply_layer(0, acts[0]));
    CHECK(enc.encode("red green blue") == enc.encode("blue red green"));
    FrozenEncoder twin(small_encoder());
    CHECK(enc.encode("some words") == twin.encode("some words"));
    CHECK(enc.checksum() == twin.checksum());
    CHECK(FrozenEncoder(small_encoder(6)).checksum() != enc.checksum());
    CHECK(enc.represent_example("", "") == enc.encode_last(" [LABEL] "));
    CHECK(enc.represent_example("", "") != enc.encode_last(""));

    auto zero = FrozenEncoder::with_zero_layers(small_encoder());
    auto za = zero.encode("alpha beta");
    CHECK(za[0] == za[1]);
    CHECK(za[0] == za[2]);
}

TEST_CASE("encoder weight statistics") {
    EncoderConfig cfg;
    FrozenEncoder enc(cfg);
    const double d = static_cast<double>(cfg.model_dim);
    auto var_of = [](std::span<const double> v) {
        double m = 0, s = 0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        for (double x : v) s += (x - m) * (x - m);
        return s / static_cast<double>(v.size());
    };
    CHECK(var_of(enc.embeddings().data()) == doctest::Approx(1.0 / std::sqrt(d)).epsilon(0.03));
    CHECK(var_of(enc.layer_weight(0).data()) == doctest::Approx(1.0 / d).epsilon(0.05));
    CHECK(enc.parameter_count() == 4096 * 64 + 2 * (64 * 64 + 64));
}

TEST_CASE("example representations separate labels") {
    FrozenEncoder enc{EncoderConfig{}};
    Rng rng(11);
    const std::vector<std::string> words{"apple", "river", "stone", "cloud", "ember", "lumen", "quartz", "frost"};
    for (int i = 0; i < 100; ++i) {
        std::string x;
        for (int k = 0; k < 4; ++k) x += words[rng.index(words.size())] + " ";
        const std::string y = "label" + std::to_string(rng.index(50));
        const std::string y2 = y + "x";
        CHECK(enc.represent_example(x, y) != enc.represent_example(x, y2));
        CHECK(enc.represent_example(x, y) == enc.represent_example(x, y));
    }
    Vec e = enc.embed_label("sports");
    CHECK(cosine(e, e) == doctest::Approx(1.0));
    CHECK(enc.embed_label("sports") != enc.embed_label("politics"));
}

TEST_CASE("adapter parameter counts") {
    AdapterShape s;
    CHECK(s.layer_parameter_count() == 64 * 16 + 16 + 16 * 64 + 64);
    CHECK(s.head_parameter_count() == 64 * 16 + 16 + 16 * 64 + 64);
    CHECK(s.parameter_count() == 6384);  // 3 * 2128

    EncoderConfig e;
    auto direct = count_parameters(s, ParameterMode::Direct, e);
    auto hyper = count_parameters(s, ParameterMode::Hypernet, e);
    FrozenEncoder enc(e);
    CHECK(direct.trainable == 6384);
    CHECK(direct.total - direct.trainable == enc.parameter_count());
    CHECK(hyper.total - hyper.trainable == enc.parameter_count());
    CHECK(hyper.trainable == 65 * 32 + 33 * 6384);

    // Enumeration walk over the tensors actually allocated.
    ParamStore store;
    add_adapter_params(store, "a", AdapterWeights::zeros(s));
    CHECK(store.parameter_count() == direct.trainable);
    HyperNetwork hn(s);
    Rng rng(1);
    ParamStore hs;
    hn.init(hs, rng);
    CHECK(hs.parameter_count() == hyper.trainable);
    CHECK(hn.parameter_count() == hyper.trainable);
}

TEST_CASE("adapter flatten bijection") {
    const AdapterShape shape = small_shape();
    Rng rng(2);
    for (int i = 0; i < 100; ++i) {
        std::vector<double> flat(shape.parameter_count());
        for (double& x : flat) x = rng.normal();
        auto w = AdapterWeights::unflatten(shape, flat);
        CHECK(w.flatten() == flat);
        CHECK(w.shape().parameter_count() == shape.parameter_count());
    }
    CHECK_THROWS_AS(AdapterWeights::unflatten(shape, std::vector<double>(3)), ShapeError);
}

TEST_CASE("apply_adapters") {
    FrozenEncoder enc(small_encoder());
    const AdapterShape shape = small_shape();
    const std::string text = "one two three four";
    auto zero = AdapterWeights::zeros(shape);
    CHECK(apply_adapters(enc, enc.encode(text), zero) == enc.encode_last(text));

    Rng rng(9);
    auto w = random_adapters(shape, rng);
    Vec out = apply_adapters(enc, enc.pool(text), w);
    Vec ref = reference_forward(enc, enc.pool(text), w);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    CHECK(apply_adapters(enc, enc.pool(text), AdapterWeights::unflatten(shape, w.flatten())) == out);

    // Tape path agrees bitwise with the numeric path.
    Graph g;
    Var pooled = g.constant(pooled_batch(enc, {text, "five six"}));
    Var adapted = adapted_forward(g, enc, pooled, bind_constants(g, w));
    for (std::size_t j = 0; j < enc.dim(); ++j) CHECK(g.value(adapted).at(0, j) == out[j]);

    // Precomputed first layer gives the same outputs.
    Graph g2;
    std::vector<double> h1;
    for (const std::string& t : {text, std::string("five six")}) {
        Vec v = first_layer(enc, enc.pool(t));
        h1.insert(h1.end(), v.begin(), v.end());
    }
    Var from_first = adapted_forward(g2, enc, g2.constant(Tensor(Shape{2, enc.dim()}, h1)), bind_constants(g2, w),
                                     InputStage::FirstLayer);
    CHECK(g2.value(from_first) == g.value(adapted));
    CHECK(apply_adapters_from_first(enc, first_layer(enc, enc.pool(text)), w) == out);

    Vec wrong(enc.dim() + 1, 0.0);
    CHECK_THROWS_AS(apply_adapters(enc, wrong, w), ShapeError);
}

TEST_CASE("init_adapters is an identity with trainable down-projection") {
    FrozenEncoder enc(small_encoder());
    Rng rng(4);
    auto w = init_adapters(small_shape(), rng);
    CHECK(apply_adapters(enc, enc.encode("lorem ipsum"), w) == enc.encode_last("lorem ipsum"));
    CHECK(std::any_of(w.layers[0].down.data().begin(), w.layers[0].down.data().end(),
                      [](double x) { return x != 0.0; }));
}

TEST_CASE("score_labels") {
    CHECK(argmax_lowest(std::vector<double>{0.2, 0.9}) == 1);
    CHECK(argmax_lowest(std::vector<double>{0.5, 0.5}) == 0);
    CHECK_THROWS(argmax_lowest(std::vector<double>{}));

    FrozenEncoder enc(small_encoder());
    auto labels = make_label_set(enc, {"alpha", "beta", "gamma"});
    Rng rng(3);
    auto w = random_adapters(small_shape(), rng);
    auto p = score_labels(enc, "some input", labels, w, 1);
    CHECK(p.scores.size() == 3);
    CHECK(p.correct == (p.predicted_index == 1));

    // Scaling all scores leaves the prediction unchanged.
    std::vector<double> scaled = p.scores;
    for (double& s : scaled) s *= 3.5;
    CHECK(argmax_lowest(scaled) == p.predicted_index);

    // Adding a direction orthogonal to both label embeddings is invisible.
    auto two = make_label_set(enc, {"alpha", "beta"});
    Vec adapted = apply_adapters(enc, enc.pool("some input"), w);
    Vec e0(two.embeddings.data().begin(), two.embeddings.data().begin() + 8);
    Vec e1(two.embeddings.data().begin() + 8, two.embeddings.data().end());
    Vec v(8);
    for (double& x : v) x = rng.normal();
    auto project_out = [&](Vec& x, const Vec& e) {
        double xe = 0, ee = 0;
        for (std::size_t i = 0; i < 8; ++i) xe += x[i] * e[i], ee += e[i] * e[i];
        for (std::size_t i = 0; i < 8; ++i) x[i] -= xe / ee * e[i];
    };
    // Gram-Schmidt against the span of e0, e1.
    Vec e1o = e1;
    project_out(e1o, e0);
    project_out(v, e0);
    project_out(v, e1o);
    Vec shifted = adapted;
    for (std::size_t i = 0; i < 8; ++i) shifted[i] += 10.0 * v[i];
    auto s1 = label_scores(adapted, two);
    auto s2 = label_scores(shifted, two);
    CHECK(s1[0] == doctest::Approx(s2[0]).epsilon(1e-9));
    CHECK(s1[1] == doctest::Approx(s2[1]).epsilon(1e-9));

    LabelSet empty;
    empty.embeddings = Tensor(Shape{1, 8});
    CHECK_THROWS(score_labels(enc, "x", empty, w));
}

TEST_CASE("example loss") {
    FrozenEncoder enc(small_encoder());
    auto labels = make_label_set(enc, {"same", "same"});
    CHECK(example_loss(enc, "anything", 0, labels, AdapterWeights::zeros(small_shape())) ==
          doctest::Approx(std::log(2.0)));

    // 50 Adam steps on one example decrease the loss monotonically.
    auto three = make_label_set(enc, {"north", "south", "east"});
    const AdapterShape shape = small_shape();
    Rng rng(5);
    ParamStore store;
    add_adapter_params(store, "ad", init_adapters(shape, rng));
    AdamState adam(1e-2);
    Tensor pooled = pooled_batch(enc, {"walk toward the sea"});
    const std::uint64_t enc_sum = enc.checksum();
    double prev = 1e9;
    bool monotone = true;
    std::vector<std::size_t> target{2};
    for (int step = 0; step < 50; ++step) {
        Graph g;
        Var loss = batch_loss(g, enc, g.constant(pooled), target, three, bind_params(g, store, "ad", shape));
        const double l = g.value(loss).item();
        if (!(l < prev)) monotone = false;
        prev = l;
        g.backward(loss);
        adam_step(store, adam);
    }
    CHECK(monotone);
    CHECK(enc.checksum() == enc_sum);
    // Only adapter parameters exist in the store; the encoder never enters it.
    for (const auto& [name, e] : store.entries()) CHECK(name.rfind("ad.", 0) == 0);
}

TEST_CASE("adapter-model gradient check over 10 seeds") {
    FrozenEncoder enc(small_encoder());
    const AdapterShape shape = small_shape();
    auto labels = make_label_set(enc, {"red", "green", "blue"});
    Tensor pooled = pooled_batch(enc, {"a b c", "d e", "f g h i", "j"});
    std::vector<std::size_t> targets{0, 2, 1, 2};
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed);
        ParamStore store;
        add_adapter_params(store, "ad", random_adapters(shape, rng));
        auto build = [&](Graph& g, ParamStore& s) {
            return batch_loss(g, enc, g.constant(pooled), targets, labels, bind_params(g, s, "ad", shape));
        };
        auto report = grad_check(build, store);
        INFO("seed " << seed << " worst " << report.worst_param << "[" << report.worst_index << "]");
        CHECK(report.max_rel_error < 1e-4);
    }
}

TEST_CASE("task representation") {
    FrozenEncoder enc(small_encoder());
    std::vector<std::pair<std::string, std::string>> data{
        {"a b", "x"}, {"c d", "y"}, {"e f", "x"}, {"g h", "y"}, {"i j", "x"}};
    auto full = compute_task_representation(enc, data, data.size(), 3);
    CHECK(full.few == full.high);
    CHECK(full.sample_size == 5);
    auto big = compute_task_representation(enc, data, 50, 3);
    CHECK(big.few == big.high);
    CHECK(big.sample_size == 5);

    auto reversed = data;
    std::reverse(reversed.begin(), reversed.end());
    auto rev = compute_task_representation(enc, reversed, 2, 3);
    for (std::size_t i = 0; i < enc.dim(); ++i) CHECK(rev.high[i] == doctest::Approx(full.high[i]).epsilon(1e-14));

    auto one = compute_task_representation(enc, std::span(data).first(1), 1, 9);
    CHECK(one.high == enc.represent_example("a b", "x"));
    CHECK(one.few == one.high);

    auto s1 = compute_task_representation(enc, data, 2, 42);
    auto s2 = compute_task_representation(enc, data, 2, 42);
    CHECK(s1.few == s2.few);

    CHECK_THROWS(compute_task_representation(enc, std::span<const std::pair<std::string, std::string>>{}, 1, 1));
    CHECK_THROWS(compute_task_representation(enc, data, 0, 1));
}

TEST_CASE("hypernetwork generation") {
    const AdapterShape shape;  // defaults
    HyperNetwork hn(shape);
    FrozenEncoder enc{EncoderConfig{}};
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed);
        ParamStore store;
        hn.init(store, rng);
        Vec z = enc.represent_example("the quick brown fox " + std::to_string(seed), "animal");
        auto flat = hn.generate_flat(store, z);
        REQUIRE(flat.size() == shape.parameter_count());
        double max_abs = 0;
        for (double x : flat) max_abs = std::max(max_abs, std::abs(x));
        CHECK(max_abs < 0.1);
        CHECK(hn.generate_flat(store, z) == flat);

        // Tape generation is bitwise identical to the numeric path.
        Graph g;
        Var out = hn.generate(g, store, g.constant(Tensor::vector(z)));
        CHECK(g.value(out).storage() == flat);

        // Near-identity initial model.
        auto w = hn.generate_weights(store, z);
        Vec a = apply_adapters(enc, enc.pool("hello world"), w);
        Vec b = enc.encode_last("hello world");
        double diff = 0;
        for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
        CHECK(diff < 0.5);
    }
    Rng rng(1);
    ParamStore store;
    hn.init(store, rng);
    CHECK_THROWS_AS(hn.generate_flat(store, Vec(3)), ShapeError);
}

TEST_CASE("BiHNet gradient check over 10 seeds") {
    FrozenEncoder enc(small_encoder());
    const AdapterShape shape = small_shape();
    HyperNetwork hn(shape, 5);
    auto labels = make_label_set(enc, {"red", "green"});
    Tensor pooled = pooled_batch(enc, {"a b c", "d e", "f g h i"});
    std::vector<std::size_t> targets{0, 1, 1};
    TaskRepresentation rep;
    rep.high = enc.represent_example("a b c", "red");
    rep.few = enc.represent_example("d e", "green");
    RepresentationMemory memory;
    memory.add("prior", enc.represent_example("zz", "blue"));
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed);
        ParamStore store;
        hn.init(store, rng, 1.0);  // large output scale so adapters are far from zero
        memory.snapshot(hn, store);
        for (auto& [name, e] : store.entries())
            for (double& x : e.value.data()) x += rng.normal(0.0, 0.05);
        auto build = [&](Graph& g, ParamStore& s) {
            Var loss = bilevel_loss(g, s, hn, enc, rep, g.constant(pooled), targets, labels);
            Var reg = regularization_term(g, s, hn, memory, RegConfig{0.5, 1}, seed);
            return add(g, loss, scale(g, reg, 0.5));
        };
        auto report = grad_check(build, store);
        INFO("seed " << seed << " worst " << report.worst_param << "[" << report.worst_index << "]");
        CHECK(report.max_rel_error < 1e-4);
    }
}

TEST_CASE("bi-level identity") {
    FrozenEncoder enc(small_encoder());
    const AdapterShape shape = small_shape();
    HyperNetwork hn(shape, 4);
    Rng rng(8);
    ParamStore store;
    hn.init(store, rng, 0.5);
    std::vector<std::pair<std::string, std::string>> data{{"p q", "left"}, {"r s t", "right"}, {"u", "left"}};
    auto rep = compute_task_representation(enc, data, data.size(), 1);
    auto labels = make_label_set(enc, {"left", "right"});
    Tensor pooled = pooled_batch(enc, {"p q", "r s t", "u"});
    std::vector<std::size_t> targets{0, 1, 0};

    Graph g;
    Var z = concat_rows(g, {g.constant(Tensor::vector(rep.high)), g.constant(Tensor::vector(rep.few))});
    const Tensor& both = g.value(hn.generate(g, store, z));
    const std::size_t p = shape.parameter_count();
    CHECK(std::equal(both.data().begin(), both.data().begin() + p, both.data().begin() + p));

    Graph g2;
    const double bilevel = g2.value(bilevel_loss(g2, store, hn, enc, rep, g2.constant(pooled), targets, labels)).item();
    Graph g3;
    const double single = g3.value(generated_loss(g3, store, hn, enc, g3.constant(Tensor::vector(rep.high)),
                                                  g3.constant(pooled), targets, labels))
                              .item();
    CHECK(bilevel == 2.0 * single);
    Graph g4;
    CHECK(g4.value(bilevel_loss(g4, store, hn, enc, rep, g4.constant(pooled), targets, labels, false)).item() ==
          single);
}

TEST_CASE("bilevel loss drops on a separable task") {
    FrozenEncoder enc{EncoderConfig{}};
    HyperNetwork hn(AdapterShape{});
    Rng rng(17);
    ParamStore store;
    hn.init(store, rng);
    std::vector<std::string> texts;
    std::vector<std::size_t> targets;
    std::vector<std::pair<std::string, std::string>> data;
    const std::vector<std::string> names{"negative", "positive"};
    for (int i = 0; i < 32; ++i) {
        const std::size_t y = i % 2;
        texts.push_back((y ? std::string("wonderful ") : std::string("dreadful ")) + "item" + std::to_string(i));
        targets.push_back(y);
        data.emplace_back(texts.back(), names[y]);
    }
    auto rep = compute_task_representation(enc, data, 10, 3);
    auto labels = make_label_set(enc, names);
    Tensor pooled = pooled_batch(enc, texts);
    AdamState adam(1e-3);
    double first = 0, last = 0;
    for (int step = 0; step < 200; ++step) {
        Graph g;
        Var loss = bilevel_loss(g, store, hn, enc, rep, g.constant(pooled), targets, labels);
        if (step == 0) first = g.value(loss).item();
        last = g.value(loss).item();
        CHECK(std::isfinite(last));
        g.backward(loss);
        adam_step(store, adam);
    }
    CHECK(last < 0.2 * first);
}

TEST_CASE("regularizer") {
    const AdapterShape shape = small_shape();
    HyperNetwork hn(shape, 4);
    Rng rng(2);
    ParamStore store;
    hn.init(store, rng, 0.5);
    RepresentationMemory memory;
    Graph g0;
    CHECK(g0.value(regularization_term(g0, store, hn, memory, {}, 1)).item() == 0.0);
    memory.snapshot(hn, store);  // empty memory: no-op
    CHECK(memory.empty());

    FrozenEncoder enc(small_encoder());
    memory.add("t1", enc.represent_example("a", "b"));
    memory.add("t2", enc.represent_example("c", "d"));
    CHECK_THROWS(memory.add("t1", Vec(8)));
    // No snapshots yet: nothing to anchor.
    CHECK(regularization_value(store, hn, memory, RegConfig{1.0, 2}, 3) == 0.0);
    memory.snapshot(hn, store);
    const auto first = memory.entries()[0].snapshot;
    memory.snapshot(hn, store);
    CHECK(memory.entries()[0].snapshot == first);
    for (std::uint64_t s = 0; s < 5; ++s) {
        Graph g;
        CHECK(g.value(regularization_term(g, store, hn, memory, RegConfig{1.0, 2}, s)).item() == 0.0);
    }

    // Hand-set difference (1, 2, 0, ...) against the snapshot: penalty 5.
    RepresentationMemory m2;
    m2.add("only", memory.entries()[0].z_high);
    m2.snapshot(hn, store);
    auto restored = RepresentationMemory::deserialize(m2.serialize());
    CHECK(restored.entries()[0].snapshot == m2.entries()[0].snapshot);
    store.value(hn.b2())[0] += 1.0;
    store.value(hn.b2())[1] += 2.0;
    Graph g;
    CHECK(g.value(regularization_term(g, store, hn, m2, {}, 0)).item() == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(regularization_value(store, hn, m2, {}, 0) == doctest::Approx(5.0).epsilon(1e-12));
    store.value(hn.b2())[0] += 1.0;
    store.value(hn.b2())[1] += 2.0;
    CHECK(regularization_value(store, hn, m2, {}, 0) == doctest::Approx(20.0).epsilon(1e-12));

    CHECK(squared_distance(std::vector<double>{1, 2, 0}, std::vector<double>{0, 0, 0}) == 5.0);
    CHECK(sample_prior_tasks(0, 1, 5).empty());
    CHECK(sample_prior_tasks(3, 10, 5).size() == 3);
    CHECK(sample_prior_tasks(10, 1, 5) == sample_prior_tasks(10, 1, 5));
}

TEST_CASE("representation memory file round trip and privacy") {
    const AdapterShape shape = small_shape();
    HyperNetwork hn(shape, 4);
    Rng rng(6);
    ParamStore store;
    hn.init(store, rng);
    FrozenEncoder enc(small_encoder());
    const std::string sentinel = "SENTINELxyzzy secret training sentence";
    RepresentationMemory memory;
    memory.add("task-a", enc.represent_example(sentinel, "label"));
    memory.add("task-b", enc.represent_example(sentinel + " two", "label"));
    memory.snapshot(hn, store);

    const auto path = std::filesystem::temp_directory_path() / "clif_memory_roundtrip.bin";
    memory.save(path);
    auto loaded = RepresentationMemory::load(path);
    REQUIRE(loaded.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(loaded.entries()[i].task == memory.entries()[i].task);
        CHECK(loaded.entries()[i].z_high == memory.entries()[i].z_high);
        CHECK(loaded.entries()[i].snapshot == memory.entries()[i].snapshot);
    }
    auto bytes = memory.serialize();
    std::string raw(bytes.begin(), bytes.end());
    CHECK(raw.find("SENTINEL") == std::string::npos);
    CHECK(raw.find("secret") == std::string::npos);
    CHECK(raw.rfind("CLIFBIN", 0) == 0);
    std::filesystem::remove(path);

    auto truncated = bytes;
    truncated.resize(truncated.size() - 3);
    CHECK_THROWS_AS(RepresentationMemory::deserialize(truncated), binio::FormatError);
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(RepresentationMemory::deserialize(bad), binio::FormatError);
}
