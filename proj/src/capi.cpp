#include "fedsim/fedsim.h"

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "fedsim/config.hpp"
#include "fedsim/engine.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/partition.hpp"
#include "fedsim/tasks.hpp"
#include "fedsim/transport.hpp"

struct fedsim_config {
  fedsim::RunConfigFile cfg;
};

struct fedsim_dataset {
  fedsim::Dataset ds;
};

struct fedsim_partition {
  fedsim::PartitionResult part;
};

namespace {

void set_error(fedsim_error* err, int code, const std::string& msg) {
  if (!err) return;
  err->code = code;
  std::snprintf(err->message, sizeof(err->message), "%s", msg.c_str());
}

// Runs fn, translating exceptions into status codes.
template <typename Fn>
int guarded(fedsim_error* err, Fn&& fn) {
  try {
    fn();
    set_error(err, FEDSIM_OK, "");
    return FEDSIM_OK;
  } catch (const fedsim::Error& e) {
    const int code = static_cast<int>(e.code());
    set_error(err, code, e.what());
    return code;
  } catch (const std::exception& e) {
    set_error(err, FEDSIM_ERR_INTERNAL, e.what());
    return FEDSIM_ERR_INTERNAL;
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw fedsim::DataError("cannot open file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw fedsim::DataError("cannot write file " + path);
  out << content;
}

// JSONL run log: resolved config first, then one record per round.
class RunLog {
 public:
  RunLog(const fedsim::RunConfigFile& cfg, const char* log_path,
         bool with_wall_ms)
      : with_wall_ms_(with_wall_ms) {
    std::string path = log_path ? log_path : "";
    if (path.empty()) path = cfg.log_path;
    if (path.empty()) return;
    out_.open(path);
    if (!out_) throw fedsim::DataError("cannot write log file " + path);
    write_header(cfg);
  }

  fedsim::RecordSink sink() {
    if (!out_.is_open()) return nullptr;
    return [this](const fedsim::RoundRecord& rec) {
      out_ << fedsim::round_record_to_json(rec, with_wall_ms_) << '\n';
      out_.flush();
    };
  }

 private:
  void write_header(const fedsim::RunConfigFile& cfg) {
    // Re-dump compactly so the log stays one record per line.
    const auto doc = nlohmann::json::parse(fedsim::serialize_config(cfg));
    out_ << "{\"config\":" << doc.dump() << "}\n";
  }

  std::ofstream out_;
  bool with_wall_ms_;
};

}  // namespace

extern "C" {

const char* fedsim_version(void) { return "0.1.0"; }

void fedsim_string_free(char* s) { std::free(s); }

int fedsim_config_parse(const char* json_text, const char* const* override_keys,
                        const char* const* override_values, size_t n_overrides,
                        fedsim_config** out, fedsim_error* err) {
  return guarded(err, [&] {
    if (!json_text || !out) throw fedsim::ConfigError("null argument");
    std::vector<std::pair<std::string, std::string>> overrides;
    for (size_t i = 0; i < n_overrides; ++i)
      overrides.emplace_back(override_keys[i], override_values[i]);
    const std::string text = fedsim::apply_overrides(json_text, overrides);
    auto* handle = new fedsim_config{fedsim::parse_config(text)};
    *out = handle;
  });
}

char* fedsim_config_dump(const fedsim_config* cfg) {
  if (!cfg) return nullptr;
  return dup_string(fedsim::serialize_config(cfg->cfg));
}

void fedsim_config_free(fedsim_config* cfg) { delete cfg; }

int fedsim_dataset_create(const fedsim_config* cfg, fedsim_dataset** out,
                          fedsim_error* err) {
  return guarded(err, [&] {
    if (!cfg || !out) throw fedsim::ConfigError("null argument");
    *out = new fedsim_dataset{fedsim::realize_dataset(cfg->cfg)};
  });
}

int fedsim_dataset_save(const fedsim_dataset* ds, const char* path,
                        fedsim_error* err) {
  return guarded(err, [&] {
    if (!ds || !path) throw fedsim::ConfigError("null argument");
    write_file(path, fedsim::dataset_to_json(ds->ds));
  });
}

void fedsim_dataset_free(fedsim_dataset* ds) { delete ds; }

int fedsim_partition_create(const fedsim_config* cfg, const fedsim_dataset* ds,
                            fedsim_partition** out, fedsim_error* err) {
  return guarded(err, [&] {
    if (!cfg || !ds || !out) throw fedsim::ConfigError("null argument");
    *out = new fedsim_partition{fedsim::realize_partition(cfg->cfg, ds->ds)};
  });
}

int fedsim_partition_save(const fedsim_partition* p, const char* json_path,
                          const char* jsd_csv_path, fedsim_error* err) {
  return guarded(err, [&] {
    if (!p || !json_path) throw fedsim::ConfigError("null argument");
    write_file(json_path, fedsim::partition_to_json(p->part));
    if (jsd_csv_path)
      write_file(jsd_csv_path,
                 fedsim::jsd_matrix_csv(fedsim::jsd_matrix(p->part)));
  });
}

int fedsim_partition_load(const char* path, fedsim_partition** out,
                          fedsim_error* err) {
  return guarded(err, [&] {
    if (!path || !out) throw fedsim::ConfigError("null argument");
    *out = new fedsim_partition{fedsim::partition_from_json(read_file(path))};
  });
}

char* fedsim_partition_inspect(const fedsim_partition* p) {
  if (!p) return nullptr;
  const fedsim::PartitionResult& part = p->part;
  std::ostringstream out;
  out << "strategy: " << fedsim::strategy_name(part.spec.strategy) << '\n';
  out << "clients: " << part.assignments.size() << ", examples: "
      << part.n_examples << ", labels: " << part.n_labels << '\n';
  out << "sizes:";
  for (const auto& a : part.assignments) out << ' ' << a.size();
  out << '\n';
  out << "label histograms:\n";
  for (std::size_t i = 0; i < part.label_matrix.size(); ++i) {
    out << "  client " << i << ":";
    for (std::size_t c : part.label_matrix[i]) out << ' ' << c;
    out << '\n';
  }
  try {
    const auto m = fedsim::jsd_matrix(part);
    out << "mean off-diagonal JSD: " << fedsim::mean_offdiagonal(m) << '\n';
  } catch (const fedsim::Error&) {
    out << "mean off-diagonal JSD: n/a\n";
  }
  return dup_string(out.str());
}

void fedsim_partition_free(fedsim_partition* p) { delete p; }

int fedsim_run_local(const fedsim_config* cfg, const fedsim_dataset* ds,
                     const fedsim_partition* p, const char* log_path,
                     int include_timestamps, fedsim_error* err) {
  return guarded(err, [&] {
    if (!cfg || !ds || !p) throw fedsim::ConfigError("null argument");
    const fedsim::RunConfigFile& conf = cfg->cfg;
    const fedsim::TaskBinding binding = fedsim::realize_binding(conf, ds->ds);
    if (p->part.n_examples != ds->ds.train.size())
      throw fedsim::DataError("partition does not cover the train split");
    RunLog log(conf, log_path, include_timestamps != 0);
    fedsim::LocalBusExecutor executor(binding, p->part.assignments,
                                      conf.federation);
    fedsim::run_federation(p->part.assignments.size(), conf.federation, binding,
                           executor, log.sink());
  });
}

int fedsim_run_centralized(const fedsim_config* cfg, const fedsim_dataset* ds,
                           const char* log_path, int include_timestamps,
                           fedsim_error* err) {
  return guarded(err, [&] {
    if (!cfg || !ds) throw fedsim::ConfigError("null argument");
    const fedsim::RunConfigFile& conf = cfg->cfg;
    const fedsim::TaskBinding binding = fedsim::realize_binding(conf, ds->ds);
    RunLog log(conf, log_path, include_timestamps != 0);
    fedsim::centralized_train(ds->ds.train.size(), conf.federation, binding,
                              log.sink());
  });
}

int fedsim_run_server(const fedsim_config* cfg, const fedsim_dataset* ds,
                      const char* bind_host, unsigned short port,
                      const char* log_path, int include_timestamps,
                      fedsim_error* err) {
  return guarded(err, [&] {
    if (!cfg || !ds || !bind_host) throw fedsim::ConfigError("null argument");
    const fedsim::RunConfigFile& conf = cfg->cfg;
    const fedsim::TaskBinding binding = fedsim::realize_binding(conf, ds->ds);
    RunLog log(conf, log_path, include_timestamps != 0);
    fedsim::TcpServerOptions options;
    options.bind_host = bind_host;
    options.port = port;
    options.n_clients = conf.partition.spec.n_clients;
    fedsim::TcpServer server(std::move(options));
    server.run(conf.federation, binding, log.sink());
  });
}

int fedsim_run_client(const fedsim_config* cfg, const fedsim_dataset* ds,
                      const fedsim_partition* p, const char* host,
                      unsigned short port, unsigned long long client_id,
                      fedsim_error* err) {
  return guarded(err, [&] {
    if (!cfg || !ds || !p || !host) throw fedsim::ConfigError("null argument");
    const fedsim::RunConfigFile& conf = cfg->cfg;
    if (client_id >= p->part.assignments.size())
      throw fedsim::ConfigError("client id out of range for the partition");
    const fedsim::TaskBinding binding = fedsim::realize_binding(conf, ds->ds);
    fedsim::run_client(host, port, client_id,
                       p->part.assignments[client_id], conf.federation,
                       binding);
  });
}

}  // extern "C"
