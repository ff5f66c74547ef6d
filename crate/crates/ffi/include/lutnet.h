#ifndef LUTNET_H
#define LUTNET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes of the C API.
typedef enum {
  LUTNET_STATUS_OK = 0,
  LUTNET_STATUS_NULL_POINTER = 1,
  LUTNET_STATUS_INVALID_ARGUMENT = 2,
  LUTNET_STATUS_IO = 3,
  LUTNET_STATUS_FORMAT = 4,
  LUTNET_STATUS_SHAPE = 5,
  LUTNET_STATUS_ENGINE = 6,
  LUTNET_STATUS_PANIC = 7,
} LutnetStatus;

// Which engine a handle runs.
typedef enum {
  LUTNET_ENGINE_KIND_LUT = 0,
  LUTNET_ENGINE_KIND_LOG = 1,
} LutnetEngineKind;

// Opaque engine handle.
typedef struct LutnetEngine LutnetEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a NUL-terminated static string.
const char *lutnet_version(void);

// Message of the last failed call on this thread, or null if none.
// The pointer stays valid until the next failing call on the same thread.
const char *lutnet_last_error(void);

// Load a `.lutq` or `.logq` model; the engine is chosen from the file magic.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
LutnetStatus lutnet_engine_open(const char *path, LutnetEngine **out);

// Release an engine. Null is ignored.
//
// # Safety
// `engine` must come from [`lutnet_engine_open`] and not be used afterwards.
void lutnet_engine_free(LutnetEngine *engine);

// # Safety
// `engine` must be a live handle and `kind` writable.
LutnetStatus lutnet_engine_kind(const LutnetEngine *engine, LutnetEngineKind *kind);

// Flattened input and output lengths.
//
// # Safety
// `engine` must be a live handle; `input_len` and `output_len` writable.
LutnetStatus lutnet_engine_shape(const LutnetEngine *engine, size_t *input_len, size_t *output_len);

// Run one input. `accumulators` receives the raw final-layer integers and
// `logits` their real values; either may be null to skip it.
//
// # Safety
// `input` must hold `input_len` values; non-null outputs must hold `output_len`.
LutnetStatus lutnet_engine_forward(const LutnetEngine *engine,
                                   const double *input,
                                   size_t input_len,
                                   int64_t *accumulators,
                                   double *logits,
                                   size_t output_len);

// Top-1 class of each of `n` row-major inputs.
//
// # Safety
// `inputs` must hold `n * input_len` values and `classes` `n` slots.
LutnetStatus lutnet_engine_classify(const LutnetEngine *engine,
                                    const double *inputs,
                                    size_t n,
                                    size_t input_len,
                                    size_t *classes);

// Leading zeros of a 32-bit word; 32 for zero.
uint32_t lutnet_nlz(uint32_t x);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LUTNET_H */
