/* C API for the fedsim federated-learning simulator.
 *
 * All functionality is reached through opaque handles and integer status
 * codes; the CLI links only against this header. Functions returning int
 * yield FEDSIM_OK (0) on success and an error class otherwise, with details
 * in the optional fedsim_error out-parameter. Strings returned as char* are
 * heap-allocated; release them with fedsim_string_free.
 */
#ifndef FEDSIM_FEDSIM_H
#define FEDSIM_FEDSIM_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

enum {
  FEDSIM_OK = 0,
  FEDSIM_ERR_INTERNAL = 1,
  FEDSIM_ERR_CONFIG = 2,
  FEDSIM_ERR_DATA = 3,
  FEDSIM_ERR_TRANSPORT = 4,
  FEDSIM_ERR_SECURE = 5,
};

typedef struct fedsim_error {
  int code;
  char message[512];
} fedsim_error;

typedef struct fedsim_config fedsim_config;
typedef struct fedsim_dataset fedsim_dataset;
typedef struct fedsim_partition fedsim_partition;

const char* fedsim_version(void);
void fedsim_string_free(char* s);

/* Config: strict JSON with documented defaults. Overrides are dotted key
 * paths ("federation.rounds") applied before parsing; pass n_overrides = 0
 * for none. */
int fedsim_config_parse(const char* json_text, const char* const* override_keys,
                        const char* const* override_values, size_t n_overrides,
                        fedsim_config** out, fedsim_error* err);
/* Fully resolved config as JSON (defaults filled). */
char* fedsim_config_dump(const fedsim_config* cfg);
void fedsim_config_free(fedsim_config* cfg);

/* Dataset: generated or loaded according to the config's data section. */
int fedsim_dataset_create(const fedsim_config* cfg, fedsim_dataset** out,
                          fedsim_error* err);
int fedsim_dataset_save(const fedsim_dataset* ds, const char* path,
                        fedsim_error* err);
void fedsim_dataset_free(fedsim_dataset* ds);

/* Partition: generated per the config (or loaded from partition.path). */
int fedsim_partition_create(const fedsim_config* cfg, const fedsim_dataset* ds,
                            fedsim_partition** out, fedsim_error* err);
int fedsim_partition_save(const fedsim_partition* p, const char* json_path,
                          const char* jsd_csv_path, fedsim_error* err);
int fedsim_partition_load(const char* path, fedsim_partition** out,
                          fedsim_error* err);
/* Human-readable summary: per-client sizes, label histograms, JSD stats. */
char* fedsim_partition_inspect(const fedsim_partition* p);
void fedsim_partition_free(fedsim_partition* p);

/* Federated run on the in-process deterministic bus. Writes a JSONL log
 * (first record: resolved config) to log_path when non-NULL, else to the
 * config's log_path when set. include_timestamps = 0 omits wall_ms so logs
 * diff byte-identically between runs. */
int fedsim_run_local(const fedsim_config* cfg, const fedsim_dataset* ds,
                     const fedsim_partition* p, const char* log_path,
                     int include_timestamps, fedsim_error* err);

/* Centralized baseline on the pooled dataset. */
int fedsim_run_centralized(const fedsim_config* cfg, const fedsim_dataset* ds,
                           const char* log_path, int include_timestamps,
                           fedsim_error* err);

/* Distributed roles (TCP, loopback or LAN). The server evaluates and logs;
 * each client process slices its own shard from the shared partition. */
int fedsim_run_server(const fedsim_config* cfg, const fedsim_dataset* ds,
                      const char* bind_host, unsigned short port,
                      const char* log_path, int include_timestamps,
                      fedsim_error* err);
int fedsim_run_client(const fedsim_config* cfg, const fedsim_dataset* ds,
                      const fedsim_partition* p, const char* host,
                      unsigned short port, unsigned long long client_id,
                      fedsim_error* err);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* FEDSIM_FEDSIM_H */
