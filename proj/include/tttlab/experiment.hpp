#pragma once

// One experiment cell: train on a split subset with a seed, then score JT,
// TTT-MMR and TTT-MMR-Geo on the random and geographic test splits.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tttlab/checkpoint.hpp"
#include "tttlab/splits.hpp"
#include "tttlab/train.hpp"
#include "tttlab/ttt.hpp"

namespace tttlab {

enum class Method { jt, ttt_mmr, ttt_mmr_geo };
enum class TestSplit { random, geo };

std::string to_string(Method m);
Method parse_method(std::string_view text);
std::string to_string(TestSplit s);
TestSplit parse_test_split(std::string_view text);

struct Architecture {
    std::size_t patch_size = 4;
    std::size_t embed_dim = 32;
    std::vector<std::string> input_modalities{"sentinel2"};
    std::vector<std::string> task_modalities;  // empty: all
};

nlohmann::json architecture_to_json(const Architecture& a);
Architecture architecture_from_json(const nlohmann::json& j);

ModelConfig model_config_for(const Dataset& dataset, const Architecture& arch);

// Training settings used by the bundled experiments (desk scale).
TrainConfig desk_train_config();

// Tiles of `ids`, normalized with `stats`, in id order.
std::vector<NormalizedTile> normalized_subset(const Dataset& dataset, std::span<const std::int64_t> ids,
                                              const NormStats& stats);

struct TrainedModel {
    Checkpoint checkpoint;
    std::vector<nlohmann::json> log;
};

// Normalization statistics come from the chosen training subset only.
TrainedModel train_on_split(const Dataset& dataset, const SplitSet& splits, int subset, const TrainConfig& config,
                            const Architecture& arch,
                            const std::function<void(const nlohmann::json&)>& on_epoch = {});

struct MethodResult {
    Method method = Method::jt;
    TestSplit split = TestSplit::random;
    double metric = 0.0;
    std::size_t iterations = 0;  // I*
    std::optional<IterationSelection> selection;
    TttRun run;
};

// Seed of the random test batching for a model trained with `train_seed`.
std::uint64_t ttt_seed_for(std::uint64_t train_seed);

// TTT batching for a method: random for ttt-mmr, geographic for ttt-mmr-geo.
TttConfig ttt_config_for(Method method, const TttConfig& base);

// Scores each method on each split. I* is chosen once per method on the
// validation split and shared by both test splits. Splits without tiles are
// skipped.
std::vector<MethodResult> evaluate_methods(const Dataset& dataset, const SplitSet& splits, const Checkpoint& checkpoint,
                                           const std::vector<Method>& methods, const std::vector<TestSplit>& test_splits,
                                           const TttConfig& base);

}  // namespace tttlab
