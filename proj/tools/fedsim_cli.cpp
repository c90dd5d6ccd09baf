// fedsim command-line front end. Links only against the C API.
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedsim/fedsim.h"

namespace {

struct ConfigDeleter {
  void operator()(fedsim_config* p) const { fedsim_config_free(p); }
};
struct DatasetDeleter {
  void operator()(fedsim_dataset* p) const { fedsim_dataset_free(p); }
};
struct PartitionDeleter {
  void operator()(fedsim_partition* p) const { fedsim_partition_free(p); }
};

using ConfigPtr = std::unique_ptr<fedsim_config, ConfigDeleter>;
using DatasetPtr = std::unique_ptr<fedsim_dataset, DatasetDeleter>;
using PartitionPtr = std::unique_ptr<fedsim_partition, PartitionDeleter>;

[[noreturn]] void die(const fedsim_error& err) {
  std::cerr << "error: " << err.message << "\n";
  std::exit(err.code == 0 ? 1 : err.code);
}

void check(int rc, const fedsim_error& err) {
  if (rc != FEDSIM_OK) die(err);
}

std::string read_file_or_die(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    std::cerr << "error: cannot open config file " << path << "\n";
    std::exit(FEDSIM_ERR_CONFIG);
  }
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Shared per-subcommand state: config file plus dotted-key overrides.
struct Common {
  std::string config_path;
  std::vector<std::string> sets;  // "section.key=value"

  ConfigPtr parse() const {
    std::string text = "{}";
    if (!config_path.empty()) text = read_file_or_die(config_path);
    std::vector<std::string> keys, values;
    for (const std::string& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) {
        std::cerr << "error: --set expects key=value, got '" << s << "'\n";
        std::exit(FEDSIM_ERR_CONFIG);
      }
      keys.push_back(s.substr(0, eq));
      values.push_back(s.substr(eq + 1));
    }
    std::vector<const char*> kp, vp;
    for (const auto& k : keys) kp.push_back(k.c_str());
    for (const auto& v : values) vp.push_back(v.c_str());
    fedsim_config* cfg = nullptr;
    fedsim_error err{};
    check(fedsim_config_parse(text.c_str(), kp.data(), vp.data(), kp.size(),
                              &cfg, &err),
          err);
    return ConfigPtr(cfg);
  }

  void attach(CLI::App* cmd) {
    cmd->add_option("-c,--config", config_path, "JSON config file");
    cmd->add_option("--set", sets,
                    "Override a config value, dotted path (key=value); "
                    "repeatable");
  }
};

DatasetPtr make_dataset(const fedsim_config* cfg) {
  fedsim_dataset* ds = nullptr;
  fedsim_error err{};
  check(fedsim_dataset_create(cfg, &ds, &err), err);
  return DatasetPtr(ds);
}

PartitionPtr make_partition(const fedsim_config* cfg, const fedsim_dataset* ds,
                            const std::string& load_path) {
  fedsim_partition* p = nullptr;
  fedsim_error err{};
  if (!load_path.empty())
    check(fedsim_partition_load(load_path.c_str(), &p, &err), err);
  else
    check(fedsim_partition_create(cfg, ds, &p, &err), err);
  return PartitionPtr(p);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fedsim: federated learning simulator"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(fedsim_version()));

  // partition: build and save a client partition plus its JSD matrix.
  Common part_common;
  std::string part_out = "partition.json";
  std::string part_jsd;
  bool part_inspect_flag = false;
  auto* cmd_partition =
      app.add_subcommand("partition", "Generate a client partition");
  part_common.attach(cmd_partition);
  cmd_partition->add_option("-o,--out", part_out, "Output partition file");
  cmd_partition->add_option("--jsd-out", part_jsd,
                            "Also write the pairwise JSD matrix (CSV)");
  cmd_partition->add_flag("--summary", part_inspect_flag,
                          "Print the partition summary");

  // gen-data: materialize the synthetic dataset to a manifest.
  Common gen_common;
  std::string gen_out = "dataset.json";
  auto* cmd_gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen_common.attach(cmd_gen);
  cmd_gen->add_option("-o,--out", gen_out, "Output dataset file");

  // run: federated training, local bus or distributed TCP roles.
  Common run_common;
  std::string run_log;
  std::string run_partition_path;
  bool run_no_ts = false;
  bool run_distributed = false;
  std::string run_role = "server";
  std::string run_bind = "127.0.0.1";
  std::string run_connect = "127.0.0.1";
  unsigned run_port = 7700;
  unsigned long long run_client_id = 0;
  auto* cmd_run = app.add_subcommand("run", "Run federated training");
  run_common.attach(cmd_run);
  cmd_run->add_option("--log", run_log, "JSONL metrics log path");
  cmd_run->add_option("--partition-file", run_partition_path,
                      "Load the partition instead of generating it");
  cmd_run->add_flag("--no-timestamps", run_no_ts,
                    "Omit wall-clock fields from the log");
  cmd_run->add_flag("--distributed", run_distributed,
                    "Run one TCP role instead of the in-process bus");
  cmd_run->add_option("--role", run_role, "server|client (with --distributed)")
      ->check(CLI::IsMember({"server", "client"}));
  cmd_run->add_option("--bind", run_bind, "Server bind address");
  cmd_run->add_option("--connect", run_connect, "Server address (client role)");
  cmd_run->add_option("--port", run_port, "TCP port")
      ->check(CLI::Range(1u, 65535u));
  cmd_run->add_option("--client-id", run_client_id, "Client id (client role)");

  // centralized: pooled-data baseline with the same trainer loop.
  Common cen_common;
  std::string cen_log;
  bool cen_no_ts = false;
  auto* cmd_cen =
      app.add_subcommand("centralized", "Train centralized on the pooled data");
  cen_common.attach(cmd_cen);
  cmd_cen->add_option("--log", cen_log, "JSONL metrics log path");
  cmd_cen->add_flag("--no-timestamps", cen_no_ts,
                    "Omit wall-clock fields from the log");

  // inspect: summarize a saved partition, or the resolved config.
  Common ins_common;
  std::string ins_partition_path;
  bool ins_config = false;
  auto* cmd_ins =
      app.add_subcommand("inspect", "Summarize a partition or resolved config");
  ins_common.attach(cmd_ins);
  cmd_ins->add_option("--partition-file", ins_partition_path,
                      "Partition file to summarize");
  cmd_ins->add_flag("--resolved-config", ins_config,
                    "Print the fully resolved config JSON");

  CLI11_PARSE(app, argc, argv);
  fedsim_error err{};

  if (cmd_partition->parsed()) {
    ConfigPtr cfg = part_common.parse();
    DatasetPtr ds = make_dataset(cfg.get());
    PartitionPtr p = make_partition(cfg.get(), ds.get(), "");
    check(fedsim_partition_save(p.get(), part_out.c_str(),
                                part_jsd.empty() ? nullptr : part_jsd.c_str(),
                                &err),
          err);
    if (part_inspect_flag) {
      char* text = fedsim_partition_inspect(p.get());
      std::cout << text;
      fedsim_string_free(text);
    }
    std::cout << "wrote " << part_out << "\n";
    return 0;
  }

  if (cmd_gen->parsed()) {
    ConfigPtr cfg = gen_common.parse();
    DatasetPtr ds = make_dataset(cfg.get());
    check(fedsim_dataset_save(ds.get(), gen_out.c_str(), &err), err);
    std::cout << "wrote " << gen_out << "\n";
    return 0;
  }

  if (cmd_run->parsed()) {
    ConfigPtr cfg = run_common.parse();
    DatasetPtr ds = make_dataset(cfg.get());
    const char* log = run_log.empty() ? nullptr : run_log.c_str();
    const int ts = run_no_ts ? 0 : 1;
    if (!run_distributed) {
      PartitionPtr p = make_partition(cfg.get(), ds.get(), run_partition_path);
      check(fedsim_run_local(cfg.get(), ds.get(), p.get(), log, ts, &err), err);
    } else if (run_role == "server") {
      check(fedsim_run_server(cfg.get(), ds.get(), run_bind.c_str(),
                              static_cast<unsigned short>(run_port), log, ts,
                              &err),
            err);
    } else {
      PartitionPtr p = make_partition(cfg.get(), ds.get(), run_partition_path);
      check(fedsim_run_client(cfg.get(), ds.get(), p.get(), run_connect.c_str(),
                              static_cast<unsigned short>(run_port),
                              run_client_id, &err),
            err);
    }
    return 0;
  }

  if (cmd_cen->parsed()) {
    ConfigPtr cfg = cen_common.parse();
    DatasetPtr ds = make_dataset(cfg.get());
    const char* log = cen_log.empty() ? nullptr : cen_log.c_str();
    check(fedsim_run_centralized(cfg.get(), ds.get(), log, cen_no_ts ? 0 : 1,
                                 &err),
          err);
    return 0;
  }

  if (cmd_ins->parsed()) {
    ConfigPtr cfg = ins_common.parse();
    if (ins_config) {
      char* text = fedsim_config_dump(cfg.get());
      std::cout << text << "\n";
      fedsim_string_free(text);
    }
    if (!ins_partition_path.empty()) {
      fedsim_partition* p = nullptr;
      check(fedsim_partition_load(ins_partition_path.c_str(), &p, &err), err);
      PartitionPtr guard(p);
      char* text = fedsim_partition_inspect(p);
      std::cout << text;
      fedsim_string_free(text);
    } else if (!ins_config) {
      std::cerr << "error: nothing to inspect; pass --partition-file or "
                   "--resolved-config\n";
      return FEDSIM_ERR_CONFIG;
    }
    return 0;
  }

  return 0;
}
