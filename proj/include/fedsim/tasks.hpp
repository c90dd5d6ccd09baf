#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "fedsim/core.hpp"

namespace fedsim {

enum class TaskKind { TextClassification, SequenceTagging };

std::string task_name(TaskKind k);
TaskKind task_from_name(const std::string& name);

struct Example {
  std::vector<int> tokens;
  int label = 0;            // TC
  std::vector<int> tags;    // ST, same length as tokens
};

struct Dataset {
  TaskKind kind = TaskKind::TextClassification;
  std::size_t vocab_size = 0;
  std::size_t n_classes = 0;  // class count (TC) or tag vocabulary size (ST)
  std::uint64_t seed = 0;
  std::vector<Example> train;
  std::vector<Example> test;
};

struct SyntheticTCConfig {
  std::size_t n_classes = 20;
  std::size_t vocab_size = 1000;
  std::size_t doc_length_min = 10;
  std::size_t doc_length_max = 40;
  // Concentration of the per-class token distributions; small values give
  // nearly disjoint class vocabularies, large values erase the signal.
  double skew = 0.1;
  std::size_t n_train = 2000;
  std::size_t n_test = 500;
  std::uint64_t seed = 0;
};

struct TaggingConfig {
  std::size_t tag_vocab = 37;  // O plus B/I for 18 entity types
  double entity_rate = 0.15;
  std::size_t vocab_size = 1000;
  std::size_t doc_length_min = 10;
  std::size_t doc_length_max = 30;
  std::size_t n_train = 600;
  std::size_t n_test = 200;
  std::uint64_t seed = 0;
};

// Per class, a token distribution from Dir(skew * uniform); labels balanced
// within +-1; deterministic given seed.
Dataset generate_tc_dataset(const SyntheticTCConfig& cfg);

// Background tokens plus injected typed entities whose surface tokens come
// from type-specific vocabulary ranges, BIO-tagged.
Dataset generate_st_dataset(const TaggingConfig& cfg);

std::string dataset_to_json(const Dataset& ds);
Dataset dataset_from_json(const std::string& text);

// Task glue the engine consumes: closed-form loss/gradient over a batch of
// train indices, evaluation on the held-out test split, and model layout.
struct TaskBinding {
  std::function<std::pair<double, Gradient>(const ParamVector&,
                                            const std::vector<std::size_t>&)>
      loss_and_grad;
  std::function<std::map<std::string, double>(const ParamVector&)> evaluate;
  std::function<ParamVector()> model_init;
  std::size_t n_train = 0;
};

// Linear softmax models on hashed n-gram features (one weight block per
// class/tag so block freezing has a natural granularity).
TaskBinding make_task_binding(const Dataset& ds, std::size_t feature_dim,
                              const std::vector<std::string>& freeze_blocks,
                              std::uint64_t feature_seed);

double accuracy(const std::vector<int>& preds, const std::vector<int>& golds);

// Micro F1 over non-Outside tags; tag 0 is Outside.
double token_f1(const std::vector<std::vector<int>>& preds,
                const std::vector<std::vector<int>>& golds);

struct Span {
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive
  int type = 0;
  bool operator==(const Span&) const = default;
};

// Relaxed BIO decoding: an I-X without a preceding B-X/I-X opens a span.
std::vector<Span> decode_bio(const std::vector<int>& tags);
std::vector<int> encode_bio(const std::vector<Span>& spans, std::size_t len);

double span_f1(const std::vector<std::vector<int>>& preds,
               const std::vector<std::vector<int>>& golds);

}  // namespace fedsim
