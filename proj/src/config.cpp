#include "fedsim/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::string& path,
                std::initializer_list<const char*> allowed) {
  if (!obj.is_object())
    throw ConfigError(path + ": expected an object");
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok)
      throw ConfigError(path + "." + key + ": unknown key");
  }
}

double get_number(const json& obj, const std::string& path, const char* key,
                  double fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_number())
    throw ConfigError(path + "." + key + ": expected a number");
  return obj[key].get<double>();
}

std::uint64_t get_uint(const json& obj, const std::string& path, const char* key,
                       std::uint64_t fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_number_unsigned())
    throw ConfigError(path + "." + key + ": expected a non-negative integer");
  return obj[key].get<std::uint64_t>();
}

bool get_bool(const json& obj, const std::string& path, const char* key,
              bool fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_boolean())
    throw ConfigError(path + "." + key + ": expected a boolean");
  return obj[key].get<bool>();
}

std::string get_string(const json& obj, const std::string& path, const char* key,
                       const std::string& fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_string())
    throw ConfigError(path + "." + key + ": expected a string");
  return obj[key].get<std::string>();
}

void require_positive(double v, const std::string& path) {
  if (!(v > 0.0)) throw ConfigError(path + ": must be positive");
}

}  // namespace

RunConfigFile parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j, "config",
             {"root_seed", "log_path", "data", "model", "partition",
              "federation", "client_opt", "server_opt"});

  RunConfigFile cfg;
  cfg.root_seed = get_uint(j, "config", "root_seed", 0);
  cfg.log_path = get_string(j, "config", "log_path", "");

  // data
  if (j.contains("data")) {
    const json& d = j["data"];
    check_keys(d, "data", {"task", "path", "generator"});
    cfg.data.task = task_from_name(get_string(d, "data", "task", "tc"));
    cfg.data.path = get_string(d, "data", "path", "");
    const json gen = d.contains("generator") ? d["generator"] : json::object();
    if (cfg.data.task == TaskKind::TextClassification) {
      check_keys(gen, "data.generator",
                 {"n_classes", "vocab_size", "doc_length_min", "doc_length_max",
                  "skew", "n_train", "n_test", "seed"});
      auto& tc = cfg.data.tc;
      tc.n_classes = get_uint(gen, "data.generator", "n_classes", tc.n_classes);
      tc.vocab_size = get_uint(gen, "data.generator", "vocab_size", tc.vocab_size);
      tc.doc_length_min =
          get_uint(gen, "data.generator", "doc_length_min", tc.doc_length_min);
      tc.doc_length_max =
          get_uint(gen, "data.generator", "doc_length_max", tc.doc_length_max);
      tc.skew = get_number(gen, "data.generator", "skew", tc.skew);
      tc.n_train = get_uint(gen, "data.generator", "n_train", tc.n_train);
      tc.n_test = get_uint(gen, "data.generator", "n_test", tc.n_test);
      tc.seed = get_uint(gen, "data.generator", "seed", cfg.root_seed);
      require_positive(tc.skew, "data.generator.skew");
      if (tc.n_classes < 2)
        throw ConfigError("data.generator.n_classes: must be at least 2");
    } else {
      check_keys(gen, "data.generator",
                 {"tag_vocab", "entity_rate", "vocab_size", "doc_length_min",
                  "doc_length_max", "n_train", "n_test", "seed"});
      auto& st = cfg.data.st;
      st.tag_vocab = get_uint(gen, "data.generator", "tag_vocab", st.tag_vocab);
      st.entity_rate =
          get_number(gen, "data.generator", "entity_rate", st.entity_rate);
      st.vocab_size = get_uint(gen, "data.generator", "vocab_size", st.vocab_size);
      st.doc_length_min =
          get_uint(gen, "data.generator", "doc_length_min", st.doc_length_min);
      st.doc_length_max =
          get_uint(gen, "data.generator", "doc_length_max", st.doc_length_max);
      st.n_train = get_uint(gen, "data.generator", "n_train", st.n_train);
      st.n_test = get_uint(gen, "data.generator", "n_test", st.n_test);
      st.seed = get_uint(gen, "data.generator", "seed", cfg.root_seed);
      if (st.entity_rate < 0.0 || st.entity_rate > 1.0)
        throw ConfigError("data.generator.entity_rate: must be in [0, 1]");
    }
  } else {
    cfg.data.tc.seed = cfg.root_seed;
    cfg.data.st.seed = cfg.root_seed;
  }

  // model
  if (j.contains("model")) {
    const json& m = j["model"];
    check_keys(m, "model", {"feature_dim", "freeze"});
    cfg.model.feature_dim =
        get_uint(m, "model", "feature_dim", cfg.model.feature_dim);
    if (cfg.model.feature_dim < 8)
      throw ConfigError("model.feature_dim: must be at least 8");
    if (m.contains("freeze")) {
      if (!m["freeze"].is_array())
        throw ConfigError("model.freeze: expected an array of block names");
      for (const auto& f : m["freeze"]) {
        if (!f.is_string())
          throw ConfigError("model.freeze: expected an array of block names");
        cfg.model.freeze.push_back(f.get<std::string>());
      }
    }
  }

  // partition
  {
    const json p = j.contains("partition") ? j["partition"] : json::object();
    check_keys(p, "partition",
               {"strategy", "n_clients", "alpha", "beta", "prior", "n_clusters",
                "seed", "path"});
    auto& spec = cfg.partition.spec;
    spec.strategy =
        strategy_from_name(get_string(p, "partition", "strategy", "label_dirichlet"));
    spec.n_clients = get_uint(p, "partition", "n_clients", 10);
    if (spec.n_clients == 0)
      throw ConfigError("partition.n_clients: must be positive");
    spec.alpha = get_number(p, "partition", "alpha", 1.0);
    require_positive(spec.alpha, "partition.alpha");
    spec.beta = get_number(p, "partition", "beta", 1.0);
    require_positive(spec.beta, "partition.beta");
    spec.n_clusters = get_uint(p, "partition", "n_clusters", 4);
    if (spec.n_clusters == 0)
      throw ConfigError("partition.n_clusters: must be positive");
    spec.seed = get_uint(p, "partition", "seed", cfg.root_seed);
    if (p.contains("prior")) {
      if (!p["prior"].is_array())
        throw ConfigError("partition.prior: expected an array of numbers");
      double sum = 0.0;
      for (const auto& x : p["prior"]) {
        if (!x.is_number())
          throw ConfigError("partition.prior: expected an array of numbers");
        spec.prior.push_back(x.get<double>());
        sum += spec.prior.back();
      }
      if (std::abs(sum - 1.0) > 1e-12)
        throw ConfigError("partition.prior: must sum to 1");
    }
    cfg.partition.path = get_string(p, "partition", "path", "");
  }

  // federation
  {
    const json f = j.contains("federation") ? j["federation"] : json::object();
    check_keys(f, "federation",
               {"rounds", "cohort_size", "local_epochs", "batch_size", "secure",
                "weight_by_size", "quant"});
    auto& fed = cfg.federation;
    fed.total_rounds = get_uint(f, "federation", "rounds", 10);
    fed.cohort_size =
        get_uint(f, "federation", "cohort_size", cfg.partition.spec.n_clients);
    fed.local_epochs = get_uint(f, "federation", "local_epochs", 1);
    fed.batch_size = get_uint(f, "federation", "batch_size", 32);
    fed.secure = get_bool(f, "federation", "secure", false);
    fed.weight_by_size = get_bool(f, "federation", "weight_by_size", true);
    fed.seed = cfg.root_seed;
    const json q = f.contains("quant") ? f["quant"] : json::object();
    check_keys(q, "federation.quant", {"bits", "clip", "headroom_bits"});
    fed.quant.bits = static_cast<unsigned>(
        get_uint(q, "federation.quant", "bits", fed.quant.bits));
    fed.quant.clip = get_number(q, "federation.quant", "clip", fed.quant.clip);
    fed.quant.headroom_bits = static_cast<unsigned>(get_uint(
        q, "federation.quant", "headroom_bits", fed.quant.headroom_bits));
    if (fed.secure) fed.quant.validate();
  }

  // client_opt
  {
    const json c = j.contains("client_opt") ? j["client_opt"] : json::object();
    check_keys(c, "client_opt",
               {"variant", "lr", "momentum", "beta1", "beta2", "eps",
                "weight_decay", "proximal_mu"});
    auto& opt = cfg.federation.client_opt;
    const std::string variant = get_string(c, "client_opt", "variant", "sgd");
    if (variant == "sgd")
      opt.variant = ClientOptVariant::Sgd;
    else if (variant == "adamw")
      opt.variant = ClientOptVariant::AdamW;
    else
      throw ConfigError("client_opt.variant: expected 'sgd' or 'adamw'");
    opt.lr = get_number(c, "client_opt", "lr",
                        opt.variant == ClientOptVariant::Sgd ? 0.1 : 0.001);
    opt.momentum = get_number(c, "client_opt", "momentum", 0.0);
    opt.beta1 = get_number(c, "client_opt", "beta1", 0.9);
    opt.beta2 = get_number(c, "client_opt", "beta2", 0.999);
    opt.eps = get_number(c, "client_opt", "eps", 1e-8);
    opt.weight_decay = get_number(c, "client_opt", "weight_decay", 0.0);
    opt.proximal_mu = get_number(c, "client_opt", "proximal_mu", 0.0);
    opt.validate();
  }

  // server_opt
  {
    const json s = j.contains("server_opt") ? j["server_opt"] : json::object();
    check_keys(s, "server_opt", {"preset", "lr", "momentum"});
    auto& opt = cfg.federation.server_opt;
    const std::string preset = get_string(s, "server_opt", "preset", "fedavg");
    if (preset == "fedavg")
      opt = ServerOptConfig::fedavg();
    else if (preset == "fedopt")
      opt = ServerOptConfig::fedopt();
    else
      throw ConfigError("server_opt.preset: expected 'fedavg' or 'fedopt'");
    opt.lr = get_number(s, "server_opt", "lr", opt.lr);
    opt.momentum = get_number(s, "server_opt", "momentum", opt.momentum);
    opt.validate();
  }

  if (cfg.federation.cohort_size > cfg.partition.spec.n_clients)
    throw ConfigError("federation.cohort_size: exceeds partition.n_clients");

  return cfg;
}

std::string serialize_config(const RunConfigFile& cfg) {
  json j;
  j["root_seed"] = cfg.root_seed;
  j["log_path"] = cfg.log_path;

  json d;
  d["task"] = task_name(cfg.data.task);
  d["path"] = cfg.data.path;
  json gen;
  if (cfg.data.task == TaskKind::TextClassification) {
    const auto& tc = cfg.data.tc;
    gen = {{"n_classes", tc.n_classes},
           {"vocab_size", tc.vocab_size},
           {"doc_length_min", tc.doc_length_min},
           {"doc_length_max", tc.doc_length_max},
           {"skew", tc.skew},
           {"n_train", tc.n_train},
           {"n_test", tc.n_test},
           {"seed", tc.seed}};
  } else {
    const auto& st = cfg.data.st;
    gen = {{"tag_vocab", st.tag_vocab},
           {"entity_rate", st.entity_rate},
           {"vocab_size", st.vocab_size},
           {"doc_length_min", st.doc_length_min},
           {"doc_length_max", st.doc_length_max},
           {"n_train", st.n_train},
           {"n_test", st.n_test},
           {"seed", st.seed}};
  }
  d["generator"] = std::move(gen);
  j["data"] = std::move(d);

  j["model"] = {{"feature_dim", cfg.model.feature_dim},
                {"freeze", cfg.model.freeze}};

  json p;
  p["strategy"] = strategy_name(cfg.partition.spec.strategy);
  p["n_clients"] = cfg.partition.spec.n_clients;
  p["alpha"] = cfg.partition.spec.alpha;
  p["beta"] = cfg.partition.spec.beta;
  if (!cfg.partition.spec.prior.empty()) p["prior"] = cfg.partition.spec.prior;
  p["n_clusters"] = cfg.partition.spec.n_clusters;
  p["seed"] = cfg.partition.spec.seed;
  p["path"] = cfg.partition.path;
  j["partition"] = std::move(p);

  j["federation"] = {{"rounds", cfg.federation.total_rounds},
                     {"cohort_size", cfg.federation.cohort_size},
                     {"local_epochs", cfg.federation.local_epochs},
                     {"batch_size", cfg.federation.batch_size},
                     {"secure", cfg.federation.secure},
                     {"weight_by_size", cfg.federation.weight_by_size},
                     {"quant",
                      {{"bits", cfg.federation.quant.bits},
                       {"clip", cfg.federation.quant.clip},
                       {"headroom_bits", cfg.federation.quant.headroom_bits}}}};

  const auto& c = cfg.federation.client_opt;
  j["client_opt"] = {
      {"variant", c.variant == ClientOptVariant::Sgd ? "sgd" : "adamw"},
      {"lr", c.lr},
      {"momentum", c.momentum},
      {"beta1", c.beta1},
      {"beta2", c.beta2},
      {"eps", c.eps},
      {"weight_decay", c.weight_decay},
      {"proximal_mu", c.proximal_mu}};

  const auto& s = cfg.federation.server_opt;
  j["server_opt"] = {{"preset", s.momentum > 0.0 ? "fedopt" : "fedavg"},
                     {"lr", s.lr},
                     {"momentum", s.momentum}};
  return j.dump(2);
}

std::string apply_overrides(
    const std::string& text,
    const std::vector<std::pair<std::string, std::string>>& overrides) {
  json j;
  try {
    j = text.empty() ? json::object() : json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  for (const auto& [path, value] : overrides) {
    json* node = &j;
    std::istringstream keys(path);
    std::string key, leaf;
    std::vector<std::string> parts;
    while (std::getline(keys, key, '.')) parts.push_back(key);
    if (parts.empty()) throw ConfigError("empty override key");
    leaf = parts.back();
    parts.pop_back();
    for (const std::string& part : parts) {
      if (!node->contains(part)) (*node)[part] = json::object();
      node = &(*node)[part];
      if (!node->is_object())
        throw ConfigError("override path " + path + " crosses a non-object");
    }
    json parsed;
    try {
      parsed = json::parse(value);
    } catch (const json::exception&) {
      parsed = value;  // plain string
    }
    (*node)[leaf] = std::move(parsed);
  }
  return j.dump();
}

Dataset realize_dataset(const RunConfigFile& cfg) {
  if (!cfg.data.path.empty()) {
    std::ifstream in(cfg.data.path);
    if (!in) throw DataError("cannot open dataset file " + cfg.data.path);
    std::stringstream buf;
    buf << in.rdbuf();
    Dataset ds = dataset_from_json(buf.str());
    if (ds.kind != cfg.data.task)
      throw ConfigError("data.task does not match the dataset file");
    return ds;
  }
  return cfg.data.task == TaskKind::TextClassification
             ? generate_tc_dataset(cfg.data.tc)
             : generate_st_dataset(cfg.data.st);
}

PartitionResult realize_partition(const RunConfigFile& cfg, const Dataset& ds) {
  if (!cfg.partition.path.empty()) {
    std::ifstream in(cfg.partition.path);
    if (!in) throw DataError("cannot open partition file " + cfg.partition.path);
    std::stringstream buf;
    buf << in.rdbuf();
    PartitionResult result = partition_from_json(buf.str());
    if (result.n_examples != ds.train.size())
      throw DataError("partition file does not cover the train split");
    return result;
  }

  const PartitionSpec& spec = cfg.partition.spec;
  switch (spec.strategy) {
    case PartitionStrategy::LabelDirichlet: {
      if (ds.kind != TaskKind::TextClassification)
        throw ConfigError(
            "partition.strategy: label_dirichlet needs a classification "
            "dataset; use cluster_dirichlet for tagging");
      std::vector<int> labels;
      for (const Example& ex : ds.train) labels.push_back(ex.label);
      return dirichlet_label_partition(labels, spec);
    }
    case PartitionStrategy::QuantityDirichlet:
      return quantity_partition(ds.train.size(), spec);
    case PartitionStrategy::ClusterDirichlet: {
      std::vector<std::vector<double>> embeddings;
      embeddings.reserve(ds.train.size());
      const std::uint64_t embed_seed = derive_seed(spec.seed, "partition/embed");
      for (const Example& ex : ds.train)
        embeddings.push_back(
            embed_text(ex.tokens, cfg.model.feature_dim, embed_seed));
      return cluster_feature_partition(embeddings, spec);
    }
    case PartitionStrategy::Natural: {
      // Synthetic corpora carry no sub-dataset ids; class labels stand in as
      // the natural grouping factor.
      if (ds.kind != TaskKind::TextClassification)
        throw ConfigError(
            "partition.strategy: natural needs a classification dataset");
      std::vector<int> groups;
      for (const Example& ex : ds.train) groups.push_back(ex.label);
      return natural_partition(groups);
    }
  }
  throw ConfigError("partition.strategy: unknown strategy");
}

TaskBinding realize_binding(const RunConfigFile& cfg, const Dataset& ds) {
  return make_task_binding(ds, cfg.model.feature_dim, cfg.model.freeze,
                           derive_seed(cfg.root_seed, "features"));
}

}  // namespace fedsim
