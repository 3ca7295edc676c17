// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

// C interface to the mahalign library. Every function returns a status code;
// on failure the message is available from mah_last_error() on the calling
// thread until the next call. Handles are opaque and owned by the caller.
// Text output is delivered through a write callback, which may be invoked
// several times per call.

#ifndef MAHALIGN_MAHALIGN_H_
#define MAHALIGN_MAHALIGN_H_

#include <stddef.h>
#include <stdint.h>

#if defined(MAHALIGN_BUILDING)
#define MAH_API __attribute__((visibility("default")))
#else
#define MAH_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mah_status {
  MAH_OK = 0,
  MAH_INVALID_ARGUMENT = 1,
  MAH_IO = 2,
  MAH_CHECKSUM = 3,
  MAH_CONTRACT = 4,
  MAH_NUMERIC = 5,
  MAH_INTERNAL = 6,
} mah_status;

typedef struct mah_config mah_config;
typedef struct mah_policy mah_policy;

typedef void (*mah_write_fn)(const char* data, size_t size, void* user);

MAH_API const char* mah_version(void);
MAH_API const char* mah_last_error(void);
MAH_API const char* mah_status_name(mah_status status);

// Configures logging from MAH_LOG_LEVEL. Idempotent.
MAH_API void mah_init_logging(void);

// ---- configuration ----
MAH_API mah_status mah_config_default(mah_config** out);
MAH_API mah_status mah_config_load(const char* path, mah_config** out);
MAH_API mah_status mah_config_parse(const char* text, mah_config** out);
MAH_API mah_status mah_config_set(mah_config* cfg, const char* key, const char* value);
MAH_API mah_status mah_config_write(const mah_config* cfg, mah_write_fn write, void* user);
MAH_API mah_status mah_config_validate(const mah_config* cfg);
MAH_API void mah_config_free(mah_config* cfg);

// ---- pipeline ----
MAH_API mah_status mah_run_pipeline(const mah_config* cfg);
MAH_API mah_status mah_run_phase(const mah_config* cfg, const char* phase);

// Finite-difference gradient check of the training losses plus the head
// isolation and backbone additivity checks. Writes a report; *passed is 1
// when every check holds.
MAH_API mah_status mah_gradcheck(uint64_t seed, double tolerance, mah_write_fn write,
                                 void* user, int* passed);

// Compares measured decode costs in a decode output directory with the
// predicted counts for both modes.
MAH_API mah_status mah_cost_report(const char* decode_dir, mah_write_fn write, void* user,
                                   int* passed);

// Token forwards for N steps of K candidates of length L after a prompt of
// length x, for cache-carrying and re-encoding decoders.
MAH_API mah_status mah_cost_estimate(uint64_t x, uint64_t n, uint64_t k, uint64_t l,
                                     uint64_t* cache_carry, uint64_t* re_encode);

// ---- policies ----
MAH_API mah_status mah_policy_load(const char* path, mah_policy** out);
MAH_API int mah_policy_num_heads(const mah_policy* policy);
// Samples a response to `prompt` from the head mixture `weights` (NULL for
// uniform) with plain decoding; at most max_tokens tokens.
MAH_API mah_status mah_policy_generate(const mah_policy* policy, const char* prompt,
                                       const double* weights, size_t num_weights,
                                       uint64_t seed, size_t max_tokens,
                                       mah_write_fn write, void* user);
MAH_API void mah_policy_free(mah_policy* policy);

#ifdef __cplusplus
}
#endif

#endif  // MAHALIGN_MAHALIGN_H_
