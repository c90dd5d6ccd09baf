#include "fedsim/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include <json.hpp>

#include "fedsim/errors.hpp"
#include "fedsim/partition.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

std::string task_name(TaskKind k) {
  return k == TaskKind::TextClassification ? "tc" : "st";
}

TaskKind task_from_name(const std::string& name) {
  if (name == "tc") return TaskKind::TextClassification;
  if (name == "st") return TaskKind::SequenceTagging;
  throw ConfigError("unknown task '" + name + "'");
}

namespace {

// Inverse-CDF sampling over a cumulative distribution.
std::size_t sample_cdf(Rng& rng, const std::vector<double>& cdf) {
  const double u = rng.uniform() * cdf.back();
  auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  if (it == cdf.end()) --it;
  return static_cast<std::size_t>(it - cdf.begin());
}

std::vector<double> to_cdf(const std::vector<double>& p) {
  std::vector<double> cdf(p.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    cdf[i] = acc;
  }
  return cdf;
}

std::size_t sample_length(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.uniform_int(hi - lo + 1));
}

// Balanced labels within +-1: round-robin classes, order shuffled.
std::vector<int> balanced_labels(std::size_t n, std::size_t n_classes, Rng& rng) {
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i)
    labels[i] = static_cast<int>(i % n_classes);
  rng.shuffle(labels);
  return labels;
}

}  // namespace

Dataset generate_tc_dataset(const SyntheticTCConfig& cfg) {
  if (cfg.n_classes < 2) throw ConfigError("tc: n_classes must be at least 2");
  if (cfg.doc_length_min > cfg.doc_length_max || cfg.doc_length_min == 0)
    throw ConfigError("tc: invalid doc length range");
  if (cfg.vocab_size < cfg.n_classes)
    throw ConfigError("tc: vocab smaller than class count");
  if (cfg.skew <= 0.0) throw ConfigError("tc: skew must be positive");

  std::vector<std::vector<double>> class_cdf(cfg.n_classes);
  for (std::size_t c = 0; c < cfg.n_classes; ++c) {
    Rng rng(derive_seed(cfg.seed, "tc/classdist", c));
    class_cdf[c] = to_cdf(rng.dirichlet(
        std::vector<double>(cfg.vocab_size, cfg.skew / cfg.vocab_size)));
  }

  Dataset ds;
  ds.kind = TaskKind::TextClassification;
  ds.vocab_size = cfg.vocab_size;
  ds.n_classes = cfg.n_classes;
  ds.seed = cfg.seed;

  auto make_split = [&](std::size_t n, const char* purpose) {
    Rng rng(derive_seed(cfg.seed, purpose));
    std::vector<int> labels = balanced_labels(n, cfg.n_classes, rng);
    std::vector<Example> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      out[i].label = labels[i];
      const std::size_t len =
          sample_length(rng, cfg.doc_length_min, cfg.doc_length_max);
      out[i].tokens.resize(len);
      for (std::size_t t = 0; t < len; ++t)
        out[i].tokens[t] =
            static_cast<int>(sample_cdf(rng, class_cdf[labels[i]]));
    }
    return out;
  };
  ds.train = make_split(cfg.n_train, "tc/train");
  ds.test = make_split(cfg.n_test, "tc/test");
  return ds;
}

Dataset generate_st_dataset(const TaggingConfig& cfg) {
  if (cfg.tag_vocab < 3 || cfg.tag_vocab % 2 == 0)
    throw ConfigError("st: tag_vocab must be odd (O plus B/I pairs)");
  if (cfg.doc_length_min > cfg.doc_length_max || cfg.doc_length_min == 0)
    throw ConfigError("st: invalid doc length range");
  if (cfg.entity_rate < 0.0 || cfg.entity_rate > 1.0)
    throw ConfigError("st: entity_rate must be in [0, 1]");
  const std::size_t n_types = (cfg.tag_vocab - 1) / 2;

  // Background tokens use the low 70% of the vocabulary; each entity type
  // owns a slice of the remainder so tags are learnable from tokens.
  const std::size_t bg_size = (cfg.vocab_size * 7) / 10;
  const std::size_t type_span =
      std::max<std::size_t>(1, (cfg.vocab_size - bg_size) / n_types);

  Dataset ds;
  ds.kind = TaskKind::SequenceTagging;
  ds.vocab_size = cfg.vocab_size;
  ds.n_classes = cfg.tag_vocab;
  ds.seed = cfg.seed;

  auto make_split = [&](std::size_t n, const char* purpose) {
    Rng rng(derive_seed(cfg.seed, purpose));
    std::vector<Example> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t len =
          sample_length(rng, cfg.doc_length_min, cfg.doc_length_max);
      auto& ex = out[i];
      ex.tokens.reserve(len);
      ex.tags.reserve(len);
      while (ex.tokens.size() < len) {
        if (rng.uniform() < cfg.entity_rate) {
          const std::size_t type = rng.uniform_int(n_types);
          std::size_t span = 1 + rng.uniform_int(3);
          span = std::min(span, len - ex.tokens.size());
          const std::size_t base =
              std::min(bg_size + type * type_span, cfg.vocab_size - type_span);
          for (std::size_t k = 0; k < span; ++k) {
            ex.tokens.push_back(
                static_cast<int>(base + rng.uniform_int(type_span)));
            ex.tags.push_back(static_cast<int>(k == 0 ? 1 + 2 * type
                                                      : 2 + 2 * type));
          }
        } else {
          ex.tokens.push_back(static_cast<int>(rng.uniform_int(bg_size)));
          ex.tags.push_back(0);
        }
      }
    }
    return out;
  };
  ds.train = make_split(cfg.n_train, "st/train");
  ds.test = make_split(cfg.n_test, "st/test");
  return ds;
}

std::string dataset_to_json(const Dataset& ds) {
  nlohmann::json j;
  j["version"] = 1;
  j["task"] = task_name(ds.kind);
  j["vocab_size"] = ds.vocab_size;
  j["n_classes"] = ds.n_classes;
  j["seed"] = ds.seed;
  auto dump_split = [&](const std::vector<Example>& split) {
    nlohmann::json arr = nlohmann::json::array();
    for (const Example& ex : split) {
      nlohmann::json e;
      e["tokens"] = ex.tokens;
      if (ds.kind == TaskKind::TextClassification)
        e["label"] = ex.label;
      else
        e["tags"] = ex.tags;
      arr.push_back(std::move(e));
    }
    return arr;
  };
  j["train"] = dump_split(ds.train);
  j["test"] = dump_split(ds.test);
  return j.dump();
}

Dataset dataset_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("dataset file: ") + e.what());
  }
  try {
    Dataset ds;
    ds.kind = task_from_name(j.at("task").get<std::string>());
    ds.vocab_size = j.at("vocab_size").get<std::size_t>();
    ds.n_classes = j.at("n_classes").get<std::size_t>();
    ds.seed = j.at("seed").get<std::uint64_t>();
    auto load_split = [&](const nlohmann::json& arr) {
      std::vector<Example> out;
      out.reserve(arr.size());
      for (const auto& e : arr) {
        Example ex;
        ex.tokens = e.at("tokens").get<std::vector<int>>();
        if (ds.kind == TaskKind::TextClassification)
          ex.label = e.at("label").get<int>();
        else {
          ex.tags = e.at("tags").get<std::vector<int>>();
          if (ex.tags.size() != ex.tokens.size())
            throw DataError("dataset file: tag/token length mismatch");
        }
        out.push_back(std::move(ex));
      }
      return out;
    };
    ds.train = load_split(j.at("train"));
    ds.test = load_split(j.at("test"));
    return ds;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("dataset file: ") + e.what());
  }
}

namespace {

std::string block_name(TaskKind kind, std::size_t c) {
  const char* prefix = kind == TaskKind::TextClassification ? "class_" : "tag_";
  std::string num = std::to_string(c);
  if (num.size() < 2) num.insert(num.begin(), '0');
  return prefix + num;
}

LayoutPtr make_task_layout(TaskKind kind, std::size_t n_classes,
                           std::size_t feature_dim,
                           const std::vector<std::string>& freeze_blocks) {
  std::vector<Block> blocks;
  blocks.reserve(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) {
    const std::string name = block_name(kind, c);
    const bool frozen = std::find(freeze_blocks.begin(), freeze_blocks.end(),
                                  name) != freeze_blocks.end();
    blocks.push_back({name, feature_dim, frozen});
  }
  for (const std::string& f : freeze_blocks) {
    bool known = false;
    for (const Block& b : blocks) known = known || b.name == f;
    if (!known) throw ConfigError("freeze: no block named '" + f + "'");
  }
  return make_layout(std::move(blocks));
}

// Softmax logits for one feature vector; returns probabilities.
std::vector<double> softmax_probs(const ParamVector& model,
                                  const std::vector<double>& f,
                                  std::size_t n_classes, std::size_t d) {
  std::vector<double> logits(n_classes, 0.0);
  for (std::size_t c = 0; c < n_classes; ++c) {
    const double* w = model.values.data() + c * d;
    double z = 0.0;
    for (std::size_t k = 0; k < d; ++k) z += w[k] * f[k];
    logits[c] = z;
  }
  const double zmax = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double& z : logits) {
    z = std::exp(z - zmax);
    sum += z;
  }
  for (double& z : logits) z /= sum;
  return logits;
}

struct TcFeatures {
  std::vector<std::vector<double>> train;
  std::vector<std::vector<double>> test;
};

struct StFeatures {
  // Per example, per token position.
  std::vector<std::vector<std::vector<double>>> train;
  std::vector<std::vector<std::vector<double>>> test;
};

std::vector<double> token_window_feature(const std::vector<int>& tokens,
                                         std::size_t i, std::size_t d,
                                         std::uint64_t seed) {
  std::vector<int> window;
  if (i > 0) window.push_back(tokens[i - 1]);
  window.push_back(tokens[i]);
  if (i + 1 < tokens.size()) window.push_back(tokens[i + 1]);
  return embed_text(window, d, seed);
}

}  // namespace

TaskBinding make_task_binding(const Dataset& ds, std::size_t feature_dim,
                              const std::vector<std::string>& freeze_blocks,
                              std::uint64_t feature_seed) {
  if (ds.train.empty()) throw EmptyDataset("task binding: empty train split");
  const std::size_t d = feature_dim;
  const std::size_t n_classes = ds.n_classes;
  LayoutPtr layout = make_task_layout(ds.kind, n_classes, d, freeze_blocks);

  TaskBinding binding;
  binding.n_train = ds.train.size();
  binding.model_init = [layout]() { return ParamVector(layout); };

  if (ds.kind == TaskKind::TextClassification) {
    auto feats = std::make_shared<TcFeatures>();
    feats->train.reserve(ds.train.size());
    for (const Example& ex : ds.train)
      feats->train.push_back(embed_text(ex.tokens, d, feature_seed));
    feats->test.reserve(ds.test.size());
    for (const Example& ex : ds.test)
      feats->test.push_back(embed_text(ex.tokens, d, feature_seed));

    auto train_labels = std::make_shared<std::vector<int>>();
    for (const Example& ex : ds.train) train_labels->push_back(ex.label);
    auto test_labels = std::make_shared<std::vector<int>>();
    for (const Example& ex : ds.test) test_labels->push_back(ex.label);

    binding.loss_and_grad = [feats, train_labels, layout, n_classes, d](
                                const ParamVector& model,
                                const std::vector<std::size_t>& batch) {
      if (batch.empty()) throw EmptyDataset("loss_and_grad: empty batch");
      Gradient grad(layout);
      double loss = 0.0;
      const double inv = 1.0 / static_cast<double>(batch.size());
      for (std::size_t idx : batch) {
        const auto& f = feats->train.at(idx);
        const int y = (*train_labels)[idx];
        const std::vector<double> p = softmax_probs(model, f, n_classes, d);
        loss -= std::log(std::max(p[static_cast<std::size_t>(y)], 1e-300));
        for (std::size_t c = 0; c < n_classes; ++c) {
          const double coef =
              (p[c] - (static_cast<int>(c) == y ? 1.0 : 0.0)) * inv;
          double* gw = grad.values.data() + c * d;
          for (std::size_t k = 0; k < d; ++k) gw[k] += coef * f[k];
        }
      }
      return std::make_pair(loss * inv, std::move(grad));
    };

    binding.evaluate = [feats, test_labels, n_classes,
                        d](const ParamVector& model) {
      std::vector<int> preds;
      preds.reserve(feats->test.size());
      for (const auto& f : feats->test) {
        const std::vector<double> p = softmax_probs(model, f, n_classes, d);
        preds.push_back(static_cast<int>(
            std::max_element(p.begin(), p.end()) - p.begin()));
      }
      return std::map<std::string, double>{
          {"accuracy", accuracy(preds, *test_labels)}};
    };
  } else {
    auto feats = std::make_shared<StFeatures>();
    auto embed_all = [&](const std::vector<Example>& split) {
      std::vector<std::vector<std::vector<double>>> out;
      out.reserve(split.size());
      for (const Example& ex : split) {
        std::vector<std::vector<double>> per_token;
        per_token.reserve(ex.tokens.size());
        for (std::size_t i = 0; i < ex.tokens.size(); ++i)
          per_token.push_back(token_window_feature(ex.tokens, i, d, feature_seed));
        out.push_back(std::move(per_token));
      }
      return out;
    };
    feats->train = embed_all(ds.train);
    feats->test = embed_all(ds.test);

    auto train_tags = std::make_shared<std::vector<std::vector<int>>>();
    for (const Example& ex : ds.train) train_tags->push_back(ex.tags);
    auto test_tags = std::make_shared<std::vector<std::vector<int>>>();
    for (const Example& ex : ds.test) test_tags->push_back(ex.tags);

    binding.loss_and_grad = [feats, train_tags, layout, n_classes, d](
                                const ParamVector& model,
                                const std::vector<std::size_t>& batch) {
      if (batch.empty()) throw EmptyDataset("loss_and_grad: empty batch");
      Gradient grad(layout);
      double loss = 0.0;
      std::size_t n_tokens = 0;
      for (std::size_t idx : batch) n_tokens += feats->train.at(idx).size();
      if (n_tokens == 0) throw EmptyDataset("loss_and_grad: batch has no tokens");
      const double inv = 1.0 / static_cast<double>(n_tokens);
      for (std::size_t idx : batch) {
        const auto& per_token = feats->train.at(idx);
        const auto& tags = (*train_tags)[idx];
        for (std::size_t i = 0; i < per_token.size(); ++i) {
          const auto& f = per_token[i];
          const int y = tags[i];
          const std::vector<double> p = softmax_probs(model, f, n_classes, d);
          loss -= std::log(std::max(p[static_cast<std::size_t>(y)], 1e-300));
          for (std::size_t c = 0; c < n_classes; ++c) {
            const double coef =
                (p[c] - (static_cast<int>(c) == y ? 1.0 : 0.0)) * inv;
            double* gw = grad.values.data() + c * d;
            for (std::size_t k = 0; k < d; ++k) gw[k] += coef * f[k];
          }
        }
      }
      return std::make_pair(loss * inv, std::move(grad));
    };

    binding.evaluate = [feats, test_tags, n_classes,
                        d](const ParamVector& model) {
      std::vector<std::vector<int>> preds;
      preds.reserve(feats->test.size());
      for (const auto& per_token : feats->test) {
        std::vector<int> seq;
        seq.reserve(per_token.size());
        for (const auto& f : per_token) {
          const std::vector<double> p = softmax_probs(model, f, n_classes, d);
          seq.push_back(static_cast<int>(
              std::max_element(p.begin(), p.end()) - p.begin()));
        }
        preds.push_back(std::move(seq));
      }
      return std::map<std::string, double>{
          {"token_f1", token_f1(preds, *test_tags)},
          {"span_f1", span_f1(preds, *test_tags)}};
    };
  }
  return binding;
}

double accuracy(const std::vector<int>& preds, const std::vector<int>& golds) {
  if (preds.size() != golds.size())
    throw LayoutError("accuracy: length mismatch");
  if (preds.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds[i] == golds[i]) correct++;
  return static_cast<double>(correct) / static_cast<double>(preds.size());
}

double token_f1(const std::vector<std::vector<int>>& preds,
                const std::vector<std::vector<int>>& golds) {
  if (preds.size() != golds.size())
    throw LayoutError("token_f1: sequence count mismatch");
  std::size_t tp = 0, pred_pos = 0, gold_pos = 0;
  for (std::size_t s = 0; s < preds.size(); ++s) {
    if (preds[s].size() != golds[s].size())
      throw LayoutError("token_f1: sequence length mismatch");
    for (std::size_t i = 0; i < preds[s].size(); ++i) {
      if (preds[s][i] != 0) pred_pos++;
      if (golds[s][i] != 0) gold_pos++;
      if (preds[s][i] != 0 && preds[s][i] == golds[s][i]) tp++;
    }
  }
  if (pred_pos == 0 && gold_pos == 0) return 1.0;
  if (pred_pos == 0 || gold_pos == 0 || tp == 0) return 0.0;
  const double p = static_cast<double>(tp) / static_cast<double>(pred_pos);
  const double r = static_cast<double>(tp) / static_cast<double>(gold_pos);
  return 2.0 * p * r / (p + r);
}

std::vector<Span> decode_bio(const std::vector<int>& tags) {
  std::vector<Span> spans;
  bool open = false;
  Span cur;
  auto close = [&]() {
    if (open) spans.push_back(cur);
    open = false;
  };
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const int t = tags[i];
    if (t == 0) {
      close();
      continue;
    }
    const int type = (t - 1) / 2;
    const bool is_begin = ((t - 1) % 2) == 0;
    if (is_begin || !open || cur.type != type) {
      // B-X always opens; a dangling I-X is treated as B-X.
      close();
      open = true;
      cur = {i, i + 1, type};
    } else {
      cur.end = i + 1;
    }
  }
  close();
  return spans;
}

std::vector<int> encode_bio(const std::vector<Span>& spans, std::size_t len) {
  std::vector<int> tags(len, 0);
  for (const Span& s : spans) {
    if (s.end > len || s.start >= s.end)
      throw LayoutError("encode_bio: span out of range");
    tags[s.start] = 1 + 2 * s.type;
    for (std::size_t i = s.start + 1; i < s.end; ++i) tags[i] = 2 + 2 * s.type;
  }
  return tags;
}

double span_f1(const std::vector<std::vector<int>>& preds,
               const std::vector<std::vector<int>>& golds) {
  if (preds.size() != golds.size())
    throw LayoutError("span_f1: sequence count mismatch");
  std::size_t tp = 0, n_pred = 0, n_gold = 0;
  for (std::size_t s = 0; s < preds.size(); ++s) {
    const std::vector<Span> p = decode_bio(preds[s]);
    const std::vector<Span> g = decode_bio(golds[s]);
    n_pred += p.size();
    n_gold += g.size();
    for (const Span& ps : p)
      if (std::find(g.begin(), g.end(), ps) != g.end()) tp++;
  }
  if (n_pred == 0 && n_gold == 0) return 1.0;
  if (n_pred == 0 || n_gold == 0 || tp == 0) return 0.0;
  const double p = static_cast<double>(tp) / static_cast<double>(n_pred);
  const double r = static_cast<double>(tp) / static_cast<double>(n_gold);
  return 2.0 * p * r / (p + r);
}

}  // namespace fedsim
