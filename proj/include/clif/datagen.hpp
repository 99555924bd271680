#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace clif {

struct Example {
    std::string text;
    std::size_t label = 0;

    friend bool operator==(const Example&, const Example&) = default;
};

/// A labeled classification dataset with fixed splits.
struct Task {
    std::string name;
    std::vector<std::string> labels;
    std::vector<Example> train;
    std::vector<Example> validation;
    std::vector<Example> test;
    std::string provenance;

    // Throws std::invalid_argument naming the violated invariant.
    void validate() const;
    std::size_t num_classes() const { return labels.size(); }
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SplitSizes {
    std::size_t train = 200;
    std::size_t validation = 50;
    std::size_t test = 100;
};

enum class Family { KeywordTopic, LabelPermuted, Composition };

std::string family_name(Family f);
Family parse_family(const std::string& s);

// One dimension of the composition family: a set of keyword groups, each
// named by the natural word that labels it.
struct Dimension {
    std::string name;
    std::vector<std::string> groups;
};

struct CompositionClass {
    std::string label;
    std::map<std::string, std::string> require;  // dimension -> group
};

struct CompositionTask {
    std::string name;
    std::vector<CompositionClass> classes;
};

struct SyntheticFamilySpec {
    Family family = Family::KeywordTopic;
    std::string prefix = "task";
    std::uint64_t vocab_seed = 1;
    std::uint64_t text_seed = 2;
    std::size_t classes = 2;
    std::size_t count = 1;  // tasks generated (keyword-topic, label-permuted)
    SplitSizes per_class;
    double noise = 0.0;  // fraction of training labels flipped
    std::size_t keywords_per_class = 12;
    std::size_t keywords_per_text = 1;
    std::size_t min_fillers = 1;
    std::size_t max_fillers = 2;
    std::size_t filler_vocab = 100;

    // label-permuted: shared base words and one tag word per task.
    std::vector<std::string> base_labels;
    std::vector<std::string> tags;

    // composition
    std::vector<Dimension> dimensions;
    std::vector<CompositionTask> tasks;
    // Add a random group's keyword for every dimension a class leaves free.
    bool distractors = true;

    void validate() const;
};

std::vector<Task> generate_family(const SyntheticFamilySpec& spec);

// Deterministic pseudo-words ("tavoki") drawn from a seeded syllable model.
std::vector<std::string> pseudo_words(std::uint64_t seed, std::size_t count);

struct SplitRatios {
    double train = 0.8;
    double validation = 0.1;
    double test = 0.1;
};

/// JSONL with one {"text": ..., "label": ...} object per line. Labels are
/// sorted; each label is shuffled and split by the ratios independently.
Task load_jsonl(const std::filesystem::path& path, const std::string& name, SplitRatios ratios, std::uint64_t seed);

// One line per example with a "split" field, in train/validation/test order.
std::string task_to_jsonl(const Task& task);

struct Episode {
    std::string source;
    std::size_t k = 0;
    std::uint64_t seed = 0;
    std::vector<Example> train;
    std::vector<Example> test;
    std::vector<std::string> warnings;
};

Episode sample_episode(const Task& task, std::size_t k, std::uint64_t resample_seed);

enum class OrderTag { Default, RelevanceIncreasing, RelevanceDecreasing, Explicit };

std::string order_name(OrderTag t);

struct StreamSpec {
    std::vector<std::string> upstream;
    std::vector<std::string> fewshot;
    OrderTag order = OrderTag::Default;
    std::vector<std::string> explicit_order;  // a permutation of `upstream`
    std::size_t seeds = 3;
    std::size_t resamples = 5;
    std::size_t k = 16;

    void validate() const;
};

struct Benchmark {
    std::string name;
    std::map<std::string, Task> tasks;
    StreamSpec stream;

    const Task& task(const std::string& name) const;
};

// Relative JSONL paths resolve against `base_dir`.
Benchmark build_benchmark(const nlohmann::json& manifest, const std::filesystem::path& base_dir = {});
Benchmark load_benchmark(const std::filesystem::path& manifest_path);

SyntheticFamilySpec family_from_json(const nlohmann::json& j);

// A tag string or an explicit task list. `where` prefixes error messages.
void parse_order(const nlohmann::json& order, StreamSpec& stream, const std::string& where);

}  // namespace clif
