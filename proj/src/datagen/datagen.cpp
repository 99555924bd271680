#include "clif/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "clif/encoder.hpp"
#include "clif/rng.hpp"

namespace clif {

using nlohmann::json;

namespace {

const std::vector<std::string> kTopicWords = {
    "sports",  "politics", "science", "music",  "food",    "travel",  "health",  "finance", "weather", "fashion",
    "history", "movies",   "gaming",  "nature", "space",   "law",     "art",     "school",  "family",  "cars",
    "garden",  "ocean",    "tech",    "crime",  "books",   "dance",   "energy",  "farming", "housing", "religion",
    "theater", "wildlife", "medicine", "poetry", "mining", "shipping", "aviation", "cooking", "fishing", "hiking"};

const std::vector<std::string> kBaseLabels = {"red", "green", "blue", "yellow", "purple", "orange", "black", "white",
                                              "brown", "silver"};

const std::vector<std::string> kTags = {"alpha", "beta",  "gamma", "delta",   "epsilon", "zeta",  "eta",
                                        "theta", "iota",  "kappa", "lambda",  "omicron", "sigma", "omega"};

// Words per the natural pool, suffixed once the pool is exhausted.
std::string natural_word(const std::vector<std::string>& pool, std::size_t i) {
    if (i < pool.size()) return pool[i];
    return pool[i % pool.size()] + std::to_string(i / pool.size());
}

void require_key_set(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw DataError(where + ": expected a JSON object");
    for (const auto& [key, value] : j.items())
        if (!allowed.count(key)) throw DataError(where + ": unknown field \"" + key + "\"");
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback, const std::string& where) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw DataError(where + "." + key + ": " + e.what());
    }
}

struct TextSampler {
    const std::vector<std::string>* fillers = nullptr;
    std::size_t min_fillers = 0;
    std::size_t max_fillers = 0;

    // Keywords plus fillers in shuffled order, joined by spaces.
    std::string make(Rng& rng, std::vector<std::string> words) const {
        const std::size_t nf = min_fillers + rng.index(max_fillers - min_fillers + 1);
        for (std::size_t i = 0; i < nf; ++i) words.push_back((*fillers)[rng.index(fillers->size())]);
        rng.shuffle(words);
        std::string out;
        for (const auto& w : words) {
            if (!out.empty()) out += ' ';
            out += w;
        }
        return out;
    }
};

// Draws `needed` distinct texts from `gen`; distinctness makes the splits
// disjoint by construction.
template <typename Gen>
std::vector<std::string> distinct_texts(std::size_t needed, Gen&& gen, std::unordered_set<std::string>& used,
                                        const std::string& task) {
    std::vector<std::string> out;
    std::size_t attempts = 0;
    while (out.size() < needed) {
        if (++attempts > needed * 200 + 1000)
            throw DataError("task " + task + ": vocabulary too small for the requested number of distinct examples");
        std::string t = gen();
        if (used.insert(t).second) out.push_back(std::move(t));
    }
    return out;
}

struct ClassTexts {
    std::size_t label;
    std::vector<std::string> texts;  // train, then validation, then test
};

Task assemble(const std::string& name, std::vector<std::string> labels, const std::vector<ClassTexts>& classes,
              const SplitSizes& sizes, double noise, std::uint64_t seed, std::string provenance) {
    Task t;
    t.name = name;
    t.labels = std::move(labels);
    t.provenance = std::move(provenance);
    for (const auto& c : classes) {
        std::size_t i = 0;
        for (; i < sizes.train; ++i) t.train.push_back({c.texts[i], c.label});
        for (; i < sizes.train + sizes.validation; ++i) t.validation.push_back({c.texts[i], c.label});
        for (; i < sizes.train + sizes.validation + sizes.test; ++i) t.test.push_back({c.texts[i], c.label});
    }
    Rng rng(derive_seed(seed, {seed_tag("splits")}));
    rng.shuffle(t.train);
    rng.shuffle(t.validation);
    rng.shuffle(t.test);
    if (noise > 0.0) {
        Rng nrng(derive_seed(seed, {seed_tag("noise")}));
        const auto flips = static_cast<std::size_t>(std::llround(noise * static_cast<double>(t.train.size())));
        for (std::size_t i : nrng.sample_without_replacement(t.train.size(), flips)) {
            const std::size_t shift = 1 + nrng.index(t.labels.size() - 1);
            t.train[i].label = (t.train[i].label + shift) % t.labels.size();
        }
    }
    t.validate();
    return t;
}

std::vector<Task> keyword_topic(const SyntheticFamilySpec& s) {
    const std::size_t kw_total = s.count * s.classes * s.keywords_per_class;
    const auto pool = pseudo_words(s.vocab_seed, s.filler_vocab + kw_total);
    const std::vector<std::string> fillers(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(s.filler_vocab));
    TextSampler sampler{&fillers, s.min_fillers, s.max_fillers};
    const std::size_t per_class = s.per_class.train + s.per_class.validation + s.per_class.test;
    std::vector<Task> out;
    for (std::size_t t = 0; t < s.count; ++t) {
        const std::string name = s.prefix + "-" + std::to_string(t + 1);
        std::vector<std::string> labels;
        std::vector<ClassTexts> classes;
        const std::uint64_t task_seed = derive_seed(s.text_seed, {t});
        Rng rng(task_seed);
        std::unordered_set<std::string> used;
        for (std::size_t c = 0; c < s.classes; ++c) {
            labels.push_back(natural_word(kTopicWords, t * s.classes + c));
            const std::size_t base = s.filler_vocab + (t * s.classes + c) * s.keywords_per_class;
            auto gen = [&] {
                std::vector<std::string> words;
                for (std::size_t k = 0; k < s.keywords_per_text; ++k)
                    words.push_back(pool[base + rng.index(s.keywords_per_class)]);
                return sampler.make(rng, words);
            };
            classes.push_back({c, distinct_texts(per_class, gen, used, name)});
        }
        out.push_back(assemble(name, labels, classes, s.per_class, s.noise, task_seed, "keyword-topic"));
    }
    return out;
}

std::vector<std::size_t> task_permutation(const SyntheticFamilySpec& s, std::size_t t) {
    std::vector<std::size_t> perm(s.classes);
    if (t < s.classes) {
        // Cyclic shifts form a Latin square: any two of the first C tasks
        // disagree on every group.
        for (std::size_t g = 0; g < s.classes; ++g) perm[g] = (g + t) % s.classes;
    } else {
        for (std::size_t g = 0; g < s.classes; ++g) perm[g] = g;
        Rng rng(derive_seed(s.vocab_seed, {seed_tag("permutation"), t}));
        rng.shuffle(perm);
    }
    return perm;
}

std::vector<Task> label_permuted(const SyntheticFamilySpec& s) {
    const auto pool = pseudo_words(s.vocab_seed, s.filler_vocab + s.classes * s.keywords_per_class);
    const std::vector<std::string> fillers(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(s.filler_vocab));
    TextSampler sampler{&fillers, s.min_fillers, s.max_fillers};
    const std::size_t per_class = s.per_class.train + s.per_class.validation + s.per_class.test;
    const auto& bases = s.base_labels.empty() ? kBaseLabels : s.base_labels;
    const auto& tags = s.tags.empty() ? kTags : s.tags;

    // One text generator shared by every task: identical inputs, different labels.
    Rng rng(s.text_seed);
    std::unordered_set<std::string> used;
    std::vector<std::vector<std::string>> group_texts;
    for (std::size_t g = 0; g < s.classes; ++g) {
        const std::size_t base = s.filler_vocab + g * s.keywords_per_class;
        auto gen = [&] {
            std::vector<std::string> words;
            for (std::size_t k = 0; k < s.keywords_per_text; ++k)
                words.push_back(pool[base + rng.index(s.keywords_per_class)]);
            return sampler.make(rng, words);
        };
        group_texts.push_back(distinct_texts(per_class, gen, used, s.prefix));
    }

    std::vector<Task> out;
    for (std::size_t t = 0; t < s.count; ++t) {
        std::vector<std::string> labels;
        for (std::size_t c = 0; c < s.classes; ++c) labels.push_back(natural_word(bases, c) + " " + natural_word(tags, t));
        const auto perm = task_permutation(s, t);
        std::vector<ClassTexts> classes;
        for (std::size_t g = 0; g < s.classes; ++g) classes.push_back({perm[g], group_texts[g]});
        std::ostringstream prov;
        prov << "label-permuted perm=";
        for (std::size_t g = 0; g < s.classes; ++g) prov << (g ? "," : "") << perm[g];
        out.push_back(assemble(s.prefix + "-" + std::to_string(t + 1), labels, classes, s.per_class, s.noise,
                               s.text_seed, prov.str()));
    }
    return out;
}

std::vector<Task> composition(const SyntheticFamilySpec& s) {
    std::size_t groups = 0;
    for (const auto& d : s.dimensions) groups += d.groups.size();
    const auto pool = pseudo_words(s.vocab_seed, s.filler_vocab + groups * s.keywords_per_class);
    const std::vector<std::string> fillers(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(s.filler_vocab));
    TextSampler sampler{&fillers, s.min_fillers, s.max_fillers};

    // keyword block offset of (dimension, group)
    std::map<std::pair<std::string, std::string>, std::size_t> block;
    std::size_t offset = s.filler_vocab;
    for (const auto& d : s.dimensions)
        for (const auto& g : d.groups) {
            block[{d.name, g}] = offset;
            offset += s.keywords_per_class;
        }

    const std::size_t per_class = s.per_class.train + s.per_class.validation + s.per_class.test;
    std::vector<Task> out;
    for (std::size_t t = 0; t < s.tasks.size(); ++t) {
        const auto& ct = s.tasks[t];
        const std::uint64_t task_seed = derive_seed(s.text_seed, {seed_tag(ct.name.c_str())});
        Rng rng(task_seed);
        std::unordered_set<std::string> used;
        std::vector<std::string> labels;
        std::vector<ClassTexts> classes;
        for (std::size_t c = 0; c < ct.classes.size(); ++c) {
            const auto& cls = ct.classes[c];
            labels.push_back(cls.label);
            auto gen = [&] {
                std::vector<std::string> words;
                for (const auto& d : s.dimensions) {
                    auto it = cls.require.find(d.name);
                    if (it == cls.require.end() && !s.distractors) continue;
                    const std::string& g = it != cls.require.end() ? it->second : d.groups[rng.index(d.groups.size())];
                    for (std::size_t k = 0; k < s.keywords_per_text; ++k)
                        words.push_back(pool[block.at({d.name, g}) + rng.index(s.keywords_per_class)]);
                }
                return sampler.make(rng, words);
            };
            classes.push_back({c, distinct_texts(per_class, gen, used, ct.name)});
        }
        out.push_back(assemble(ct.name, labels, classes, s.per_class, s.noise, task_seed, "composition"));
    }
    return out;
}

}  // namespace

void Task::validate() const {
    if (name.empty()) throw std::invalid_argument("task without a name");
    if (labels.size() < 2) throw std::invalid_argument("task " + name + ": needs at least 2 labels");
    std::set<std::string> distinct(labels.begin(), labels.end());
    if (distinct.size() != labels.size()) throw std::invalid_argument("task " + name + ": duplicate label strings");
    const std::pair<const char*, const std::vector<Example>*> splits[] = {
        {"train", &train}, {"validation", &validation}, {"test", &test}};
    for (const auto& [split, examples] : splits) {
        if (examples->empty()) throw std::invalid_argument("task " + name + ": empty " + split + " split");
        for (const auto& e : *examples)
            if (e.label >= labels.size())
                throw std::invalid_argument("task " + name + ": label index out of range in " + split);
    }
    std::vector<bool> seen(labels.size(), false);
    for (const auto& e : train) seen[e.label] = true;
    for (std::size_t c = 0; c < labels.size(); ++c)
        if (!seen[c]) throw std::invalid_argument("task " + name + ": label \"" + labels[c] + "\" absent from train");
}

std::string family_name(Family f) {
    switch (f) {
        case Family::KeywordTopic: return "keyword-topic";
        case Family::LabelPermuted: return "label-permuted";
        case Family::Composition: return "composition";
    }
    return "?";
}

Family parse_family(const std::string& s) {
    if (s == "keyword-topic") return Family::KeywordTopic;
    if (s == "label-permuted") return Family::LabelPermuted;
    if (s == "composition") return Family::Composition;
    throw DataError("unknown family \"" + s + "\"");
}

void SyntheticFamilySpec::validate() const {
    auto fail = [&](const std::string& m) { throw DataError("family " + prefix + ": " + m); };
    if (!(noise >= 0.0 && noise < 0.5)) fail("noise rate must be in [0, 0.5)");
    if (per_class.train == 0 || per_class.validation == 0 || per_class.test == 0)
        fail("every split needs at least one example per class");
    if (keywords_per_class == 0) fail("keywords_per_class must be positive");
    if (min_fillers > max_fillers) fail("min fillers exceeds max fillers");
    if (filler_vocab == 0 && max_fillers > 0) fail("fillers requested with an empty filler vocabulary");
    if (family == Family::Composition) {
        if (dimensions.empty()) fail("composition needs at least one dimension");
        if (tasks.empty()) fail("composition needs at least one task");
        std::set<std::string> dims;
        for (const auto& d : dimensions) {
            if (d.groups.size() < 2) fail("dimension " + d.name + " needs at least 2 groups");
            if (!dims.insert(d.name).second) fail("duplicate dimension " + d.name);
        }
        for (const auto& t : tasks) {
            if (t.classes.size() < 2) fail("task " + t.name + " needs at least 2 classes");
            std::set<std::map<std::string, std::string>> reqs;
            for (const auto& c : t.classes) {
                if (c.require.empty()) fail("class " + c.label + " has no requirement");
                for (const auto& [dim, group] : c.require) {
                    auto it = std::find_if(dimensions.begin(), dimensions.end(),
                                           [&](const Dimension& d) { return d.name == dim; });
                    if (it == dimensions.end()) fail("class " + c.label + " names unknown dimension " + dim);
                    if (std::find(it->groups.begin(), it->groups.end(), group) == it->groups.end())
                        fail("class " + c.label + " names unknown group " + group);
                }
                if (!reqs.insert(c.require).second) fail("task " + t.name + " has two classes with equal requirements");
            }
        }
    } else {
        if (classes < 2) fail("needs at least 2 classes");
        if (count == 0) fail("count must be positive");
        if (keywords_per_text == 0) fail("keywords_per_text must be positive");
    }
    if (family == Family::LabelPermuted) {
        if (!base_labels.empty() && base_labels.size() < classes) fail("fewer base labels than classes");
        if (!tags.empty() && tags.size() < count) fail("fewer tags than tasks");
    }
}

std::vector<std::string> pseudo_words(std::uint64_t seed, std::size_t count) {
    static const char kCons[] = "bdfgklmnprstvz";
    static const char kVow[] = "aeiou";
    Rng rng(derive_seed(seed, {seed_tag("pseudo-words")}));
    std::vector<std::string> out;
    std::unordered_set<std::string> seen;
    while (out.size() < count) {
        const std::size_t syllables = 2 + rng.index(2);
        std::string w;
        for (std::size_t i = 0; i < syllables; ++i) {
            w += kCons[rng.index(sizeof(kCons) - 1)];
            w += kVow[rng.index(sizeof(kVow) - 1)];
        }
        if (seen.insert(w).second) out.push_back(std::move(w));
    }
    return out;
}

std::vector<Task> generate_family(const SyntheticFamilySpec& spec) {
    spec.validate();
    switch (spec.family) {
        case Family::KeywordTopic: return keyword_topic(spec);
        case Family::LabelPermuted: return label_permuted(spec);
        case Family::Composition: return composition(spec);
    }
    return {};
}

Task load_jsonl(const std::filesystem::path& path, const std::string& name, SplitRatios ratios, std::uint64_t seed) {
    if (!(ratios.train > 0 && ratios.validation >= 0 && ratios.test >= 0) ||
        std::abs(ratios.train + ratios.validation + ratios.test - 1.0) > 1e-9)
        throw DataError("split ratios must be non-negative, with a positive train share, and sum to 1");
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset " + path.string());
    std::vector<std::pair<std::string, std::string>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": malformed JSON");
        }
        if (!j.is_object() || !j.contains("text") || !j.contains("label") || !j["text"].is_string() ||
            !j["label"].is_string())
            throw DataError(path.string() + ":" + std::to_string(lineno) +
                            ": expected an object with string fields \"text\" and \"label\"");
        rows.emplace_back(j["text"].get<std::string>(), j["label"].get<std::string>());
    }
    if (rows.empty()) throw DataError("dataset " + path.string() + " is empty");

    std::set<std::string> label_set;
    for (const auto& r : rows) label_set.insert(r.second);
    if (label_set.size() < 2) throw DataError("dataset " + path.string() + " has a single label");
    Task t;
    t.name = name;
    t.labels.assign(label_set.begin(), label_set.end());
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < t.labels.size(); ++i) index[t.labels[i]] = i;

    std::vector<std::vector<std::size_t>> strata(t.labels.size());
    for (std::size_t i = 0; i < rows.size(); ++i) strata[index[rows[i].second]].push_back(i);
    for (std::size_t c = 0; c < strata.size(); ++c) {
        auto& idx = strata[c];
        Rng rng(derive_seed(seed, {c}));
        rng.shuffle(idx);
        const double n = static_cast<double>(idx.size());
        const auto n_train = static_cast<std::size_t>(std::llround(n * ratios.train));
        const auto n_val = std::min(idx.size() - n_train, static_cast<std::size_t>(std::llround(n * ratios.validation)));
        if (n_train == 0) throw DataError("label \"" + t.labels[c] + "\" absent from the train split");
        for (std::size_t i = 0; i < idx.size(); ++i) {
            Example e{rows[idx[i]].first, c};
            if (i < n_train) t.train.push_back(std::move(e));
            else if (i < n_train + n_val) t.validation.push_back(std::move(e));
            else t.test.push_back(std::move(e));
        }
    }
    Rng rng(derive_seed(seed, {seed_tag("order")}));
    rng.shuffle(t.train);
    rng.shuffle(t.validation);
    rng.shuffle(t.test);

    std::set<std::pair<std::string, std::size_t>> train_pairs;
    for (const auto& e : t.train) train_pairs.insert({e.text, e.label});
    std::size_t dup = 0;
    for (const auto* split : {&t.validation, &t.test})
        for (const auto& e : *split) dup += train_pairs.count({e.text, e.label});
    t.provenance = "jsonl:" + path.filename().string() + " cross-split-duplicates=" + std::to_string(dup);
    try {
        t.validate();
    } catch (const std::invalid_argument& e) {
        throw DataError(e.what());
    }
    return t;
}

std::string task_to_jsonl(const Task& task) {
    std::string out;
    const std::pair<const char*, const std::vector<Example>*> splits[] = {
        {"train", &task.train}, {"validation", &task.validation}, {"test", &task.test}};
    for (const auto& [split, examples] : splits)
        for (const auto& e : *examples) {
            json j{{"split", split}, {"text", e.text}, {"label", task.labels[e.label]}};
            out += j.dump();
            out += '\n';
        }
    return out;
}

Episode sample_episode(const Task& task, std::size_t k, std::uint64_t resample_seed) {
    if (task.train.empty()) throw DataError("task " + task.name + ": empty train split");
    if (k == 0) throw DataError("k must be positive");
    Episode ep;
    ep.source = task.name;
    ep.k = k;
    ep.seed = resample_seed;
    ep.test = task.test;
    Rng rng(derive_seed(resample_seed, {fnv1a64(task.name)}));
    std::vector<std::vector<std::size_t>> by_class(task.labels.size());
    for (std::size_t i = 0; i < task.train.size(); ++i) by_class[task.train[i].label].push_back(i);
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        const auto& idx = by_class[c];
        if (idx.size() < k)
            ep.warnings.push_back("task " + task.name + ": class \"" + task.labels[c] + "\" has " +
                                  std::to_string(idx.size()) + " training examples, fewer than k=" +
                                  std::to_string(k));
        for (std::size_t j : rng.sample_without_replacement(idx.size(), k)) ep.train.push_back(task.train[idx[j]]);
    }
    rng.shuffle(ep.train);
    return ep;
}

std::string order_name(OrderTag t) {
    switch (t) {
        case OrderTag::Default: return "default";
        case OrderTag::RelevanceIncreasing: return "relevance_increasing";
        case OrderTag::RelevanceDecreasing: return "relevance_decreasing";
        case OrderTag::Explicit: return "explicit";
    }
    return "?";
}

void StreamSpec::validate() const {
    if (upstream.empty()) throw DataError("stream has no upstream tasks");
    std::set<std::string> up(upstream.begin(), upstream.end());
    if (up.size() != upstream.size()) throw DataError("duplicate upstream task");
    std::set<std::string> fs(fewshot.begin(), fewshot.end());
    if (fs.size() != fewshot.size()) throw DataError("duplicate few-shot task");
    for (const auto& f : fewshot)
        if (up.count(f)) throw DataError("task " + f + " is both upstream and few-shot");
    if (seeds == 0) throw DataError("seeds must be >= 1");
    if (k == 0) throw DataError("k must be >= 1");
    if (!fewshot.empty() && resamples == 0) throw DataError("resamples must be >= 1");
    if (order == OrderTag::Explicit) {
        std::set<std::string> ex(explicit_order.begin(), explicit_order.end());
        if (ex != up || explicit_order.size() != upstream.size())
            throw DataError("explicit order must be a permutation of the upstream tasks");
    }
}

const Task& Benchmark::task(const std::string& n) const {
    auto it = tasks.find(n);
    if (it == tasks.end()) throw DataError("benchmark " + name + ": unknown task " + n);
    return it->second;
}

SyntheticFamilySpec family_from_json(const json& j) {
    const std::string where = "family";
    require_key_set(j,
                    {"family", "prefix", "vocab_seed", "text_seed", "classes", "count", "per_class", "noise",
                     "keywords_per_class", "keywords_per_text", "fillers", "filler_vocab", "base_labels", "tags",
                     "dimensions", "tasks", "distractors"},
                    where);
    SyntheticFamilySpec s;
    if (!j.contains("family")) throw DataError("family: missing field \"family\"");
    s.family = parse_family(get_or<std::string>(j, "family", "", where));
    s.prefix = get_or<std::string>(j, "prefix", s.prefix, where);
    s.vocab_seed = get_or<std::uint64_t>(j, "vocab_seed", s.vocab_seed, where);
    s.text_seed = get_or<std::uint64_t>(j, "text_seed", s.text_seed, where);
    s.classes = get_or<std::size_t>(j, "classes", s.classes, where);
    s.count = get_or<std::size_t>(j, "count", s.count, where);
    s.noise = get_or<double>(j, "noise", s.noise, where);
    s.keywords_per_class = get_or<std::size_t>(j, "keywords_per_class", s.keywords_per_class, where);
    s.keywords_per_text = get_or<std::size_t>(j, "keywords_per_text", s.keywords_per_text, where);
    s.filler_vocab = get_or<std::size_t>(j, "filler_vocab", s.filler_vocab, where);
    s.distractors = get_or<bool>(j, "distractors", s.distractors, where);
    if (j.contains("per_class")) {
        const auto& p = j["per_class"];
        require_key_set(p, {"train", "validation", "test"}, where + ".per_class");
        s.per_class.train = get_or<std::size_t>(p, "train", s.per_class.train, where + ".per_class");
        s.per_class.validation = get_or<std::size_t>(p, "validation", s.per_class.validation, where + ".per_class");
        s.per_class.test = get_or<std::size_t>(p, "test", s.per_class.test, where + ".per_class");
    }
    if (j.contains("fillers")) {
        auto f = get_or<std::vector<std::size_t>>(j, "fillers", {}, where);
        if (f.size() != 2) throw DataError("family.fillers: expected [min, max]");
        s.min_fillers = f[0];
        s.max_fillers = f[1];
    }
    s.base_labels = get_or<std::vector<std::string>>(j, "base_labels", {}, where);
    s.tags = get_or<std::vector<std::string>>(j, "tags", {}, where);
    if (j.contains("dimensions")) {
        for (const auto& d : j["dimensions"]) {
            require_key_set(d, {"name", "groups"}, where + ".dimensions");
            s.dimensions.push_back({get_or<std::string>(d, "name", "", where + ".dimensions"),
                                    get_or<std::vector<std::string>>(d, "groups", {}, where + ".dimensions")});
        }
    }
    if (j.contains("tasks")) {
        for (const auto& t : j["tasks"]) {
            require_key_set(t, {"name", "classes"}, where + ".tasks");
            CompositionTask ct;
            ct.name = get_or<std::string>(t, "name", "", where + ".tasks");
            if (!t.contains("classes") || !t["classes"].is_array())
                throw DataError(where + ".tasks." + ct.name + ": missing classes");
            for (const auto& c : t["classes"]) {
                require_key_set(c, {"label", "require"}, where + ".tasks." + ct.name);
                ct.classes.push_back({get_or<std::string>(c, "label", "", where + ".tasks." + ct.name),
                                      get_or<std::map<std::string, std::string>>(c, "require", {},
                                                                                 where + ".tasks." + ct.name)});
            }
            s.tasks.push_back(std::move(ct));
        }
    }
    return s;
}

void parse_order(const json& o, StreamSpec& s, const std::string& where) {
    if (o.is_array()) {
        s.order = OrderTag::Explicit;
        s.explicit_order = o.get<std::vector<std::string>>();
        return;
    }
    if (!o.is_string()) throw DataError(where + ": expected an order tag or a task list");
    const auto tag = o.get<std::string>();
    if (tag == "default") s.order = OrderTag::Default;
    else if (tag == "relevance_increasing") s.order = OrderTag::RelevanceIncreasing;
    else if (tag == "relevance_decreasing") s.order = OrderTag::RelevanceDecreasing;
    else throw DataError(where + ": unknown order tag \"" + tag + "\"");
    s.explicit_order.clear();
}

Benchmark build_benchmark(const json& manifest, const std::filesystem::path& base_dir) {
    const std::string where = "manifest";
    require_key_set(manifest, {"name", "families", "jsonl", "upstream", "fewshot", "order", "seeds", "resamples", "k"},
                    where);
    Benchmark b;
    b.name = get_or<std::string>(manifest, "name", "benchmark", where);
    auto add_task = [&](Task t) {
        const std::string n = t.name;
        if (!b.tasks.emplace(n, std::move(t)).second) throw DataError("benchmark " + b.name + ": task name collision " + n);
    };
    if (manifest.contains("families"))
        for (const auto& f : manifest["families"])
            for (auto& t : generate_family(family_from_json(f))) add_task(std::move(t));
    if (manifest.contains("jsonl"))
        for (const auto& d : manifest["jsonl"]) {
            require_key_set(d, {"name", "path", "ratios", "seed"}, where + ".jsonl");
            const auto name = get_or<std::string>(d, "name", "", where + ".jsonl");
            auto path = std::filesystem::path(get_or<std::string>(d, "path", "", where + ".jsonl"));
            if (path.is_relative() && !base_dir.empty()) path = base_dir / path;
            SplitRatios r;
            if (d.contains("ratios")) {
                auto v = get_or<std::vector<double>>(d, "ratios", {}, where + ".jsonl");
                if (v.size() != 3) throw DataError(where + ".jsonl.ratios: expected [train, validation, test]");
                r = {v[0], v[1], v[2]};
            }
            add_task(load_jsonl(path, name, r, get_or<std::uint64_t>(d, "seed", 0, where + ".jsonl")));
        }
    auto& s = b.stream;
    s.upstream = get_or<std::vector<std::string>>(manifest, "upstream", {}, where);
    s.fewshot = get_or<std::vector<std::string>>(manifest, "fewshot", {}, where);
    s.seeds = get_or<std::size_t>(manifest, "seeds", s.seeds, where);
    s.resamples = get_or<std::size_t>(manifest, "resamples", s.resamples, where);
    s.k = get_or<std::size_t>(manifest, "k", s.k, where);
    if (manifest.contains("order")) parse_order(manifest["order"], s, where + ".order");
    s.validate();
    for (const auto& n : s.upstream) b.task(n);
    for (const auto& n : s.fewshot) b.task(n);
    return b;
}

Benchmark load_benchmark(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw DataError("cannot open manifest " + manifest_path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw DataError("manifest " + manifest_path.string() + ": " + e.what());
    }
    return build_benchmark(j, manifest_path.parent_path());
}

}  // namespace clif
