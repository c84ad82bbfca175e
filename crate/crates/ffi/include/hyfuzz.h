#ifndef HYFUZZ_H
#define HYFUZZ_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * How an execution ended.
 */
typedef enum {
  HF_EXEC_STATUS_HALTED = 0,
  HF_EXEC_STATUS_CRASHED = 1,
  HF_EXEC_STATUS_BREAKPOINT_HIT = 2,
  HF_EXEC_STATUS_BUDGET_EXHAUSTED = 3,
} HfExecStatus;

/**
 * Result of solving one constraint pair.
 */
typedef enum {
  HF_PAIR_OUTCOME_SAT = 0,
  HF_PAIR_OUTCOME_UNSAT = 1,
  HF_PAIR_OUTCOME_UNKNOWN = 2,
  HF_PAIR_OUTCOME_VALIDATION_FAILED = 3,
  HF_PAIR_OUTCOME_SKIPPED = 4,
} HfPairOutcome;

/**
 * Result code of every fallible call.
 */
typedef enum {
  HF_STATUS_OK = 0,
  HF_STATUS_NULL_POINTER = 1,
  HF_STATUS_INVALID_UTF8 = 2,
  HF_STATUS_ASSEMBLY = 3,
  HF_STATUS_DECODE = 4,
  HF_STATUS_CONFIG = 5,
  HF_STATUS_VM = 6,
  HF_STATUS_INTEGRITY = 7,
  HF_STATUS_IO = 8,
  HF_STATUS_NO_SEEDS = 9,
  HF_STATUS_INDEX_OUT_OF_RANGE = 10,
  HF_STATUS_BUFFER_TOO_SMALL = 11,
  HF_STATUS_PANIC = 12,
} HfStatus;

/**
 * A mutable campaign configuration.
 */
typedef struct HfConfig HfConfig;

/**
 * A loaded program and its control-flow graph.
 */
typedef struct HfProgram HfProgram;

/**
 * A finished campaign.
 */
typedef struct HfReport HfReport;

/**
 * Summary of a single execution.
 */
typedef struct {
  HfExecStatus status;
  uint64_t steps;
  size_t edges;
  size_t violations;
  size_t leaks;
} HfExecResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *hf_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *hf_version(void);

/**
 * Assembles NUL-terminated source text.
 *
 * # Safety
 * `source` must be a valid C string and `out` a writable pointer.
 */
HfStatus hf_program_from_source(const char *source, HfProgram **out);

/**
 * Decodes a binary program container.
 *
 * # Safety
 * `data` must point to `len` readable bytes and `out` must be writable.
 */
HfStatus hf_program_from_bytes(const uint8_t *data, size_t len, HfProgram **out);

/**
 * Releases a program. Null is ignored.
 *
 * # Safety
 * `program` must come from this library and not be used afterwards.
 */
void hf_program_free(HfProgram *program);

/**
 * Declared input size in bytes, or 0 for a null handle.
 *
 * # Safety
 * `program` must be null or a live handle.
 */
uint32_t hf_program_input_size(const HfProgram *program);

/**
 * Number of CFG edges reachable from the entry, or 0 for a null handle.
 *
 * # Safety
 * `program` must be null or a live handle.
 */
size_t hf_program_reachable_edges(const HfProgram *program);

/**
 * Runs one input with `budget` steps. A zero budget selects the default.
 *
 * # Safety
 * `input` must point to `len` readable bytes and `out` must be writable.
 */
HfStatus hf_program_execute(const HfProgram *program,
                            const uint8_t *input,
                            size_t len,
                            uint64_t budget,
                            HfExecResult *out);

/**
 * Solves the branch from block `src` into block `dst` starting from
 * `witness`. On `Sat` the new input is copied to `buf` (capacity `cap`) and
 * its length stored in `out_len`.
 *
 * # Safety
 * Pointers must be valid for the lengths given; `outcome` and `out_len` must
 * be writable.
 */
HfStatus hf_solve_pair(const HfProgram *program,
                       const uint8_t *witness,
                       size_t witness_len,
                       uint32_t src,
                       uint32_t dst,
                       HfPairOutcome *outcome,
                       uint8_t *buf,
                       size_t cap,
                       size_t *out_len);

/**
 * Creates a configuration holding the defaults.
 *
 * # Safety
 * `out` must be writable.
 */
HfStatus hf_config_new(HfConfig **out);

/**
 * Sets one configuration key, using the same keys as the config file.
 *
 * # Safety
 * `config` must be a live handle; `key` and `value` valid C strings.
 */
HfStatus hf_config_set(HfConfig *config, const char *key, const char *value);

/**
 * Releases a configuration. Null is ignored.
 *
 * # Safety
 * `config` must come from this library and not be used afterwards.
 */
void hf_config_free(HfConfig *config);

/**
 * Runs a campaign from `count` seeds given as parallel pointer and length
 * arrays. A null `config` uses the defaults.
 *
 * # Safety
 * `seeds` and `lens` must hold `count` entries, each seed pointing to its
 * length in readable bytes; `out` must be writable.
 */
HfStatus hf_campaign_run(const HfProgram *program,
                         const HfConfig *config,
                         const uint8_t *const *seeds,
                         const size_t *lens,
                         size_t count,
                         HfReport **out);

/**
 * Edges covered by the campaign.
 *
 * # Safety
 * `report` must be null or a live handle.
 */
size_t hf_report_covered_edges(const HfReport *report);

/**
 * Reachable edges of the target program.
 *
 * # Safety
 * `report` must be null or a live handle.
 */
size_t hf_report_reachable_edges(const HfReport *report);

/**
 * Iterations the campaign ran.
 *
 * # Safety
 * `report` must be null or a live handle.
 */
uint64_t hf_report_iterations(const HfReport *report);

/**
 * Number of symbolic phases triggered.
 *
 * # Safety
 * `report` must be null or a live handle.
 */
size_t hf_report_symbolic_phases(const HfReport *report);

/**
 * Number of unique crashes.
 *
 * # Safety
 * `report` must be null or a live handle.
 */
size_t hf_report_crash_count(const HfReport *report);

/**
 * Kind name of crash `index`, owned by the report, or null when out of range.
 *
 * # Safety
 * `report` must be null or a live handle.
 */
const char *hf_report_crash_kind(const HfReport *report, size_t index);

/**
 * Copies the input of crash `index` into `buf`, storing its length in
 * `out_len` even when the buffer is too small.
 *
 * # Safety
 * `buf` must be writable for `cap` bytes and `out_len` writable.
 */
HfStatus hf_report_crash_input(const HfReport *report,
                               size_t index,
                               uint8_t *buf,
                               size_t cap,
                               size_t *out_len);

/**
 * Writes the report files into directory `dir`.
 *
 * # Safety
 * `report` must be a live handle and `dir` a valid C string.
 */
HfStatus hf_report_emit(const HfReport *report, const char *dir);

/**
 * Releases a report. Null is ignored.
 *
 * # Safety
 * `report` must come from this library and not be used afterwards.
 */
void hf_report_free(HfReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HYFUZZ_H */
