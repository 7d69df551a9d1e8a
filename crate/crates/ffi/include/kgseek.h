#ifndef KGSEEK_H
#define KGSEEK_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum KgsStatus {
  KGS_STATUS_OK = 0,
  KGS_STATUS_NULL_ARGUMENT = 1,
  KGS_STATUS_INVALID_UTF8 = 2,
  KGS_STATUS_IO = 3,
  KGS_STATUS_BAD_INPUT = 4,
  KGS_STATUS_SCORER_CONTRACT = 5,
  KGS_STATUS_CHECKPOINT = 6,
  KGS_STATUS_OUT_OF_RANGE = 7,
  KGS_STATUS_PANIC = 8,
} KgsStatus;

typedef struct KgsGraph KgsGraph;

typedef struct KgsResult KgsResult;

typedef struct KgsScorer KgsScorer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on this thread.
const char *kgs_last_error(void);

// Loads a tab-separated triple file.
//
// # Safety
// `path` must be a valid C string and `out` a valid pointer.
enum KgsStatus kgs_graph_load(const char *path, bool add_inverses, struct KgsGraph **out);

// Builds a graph from triple text held in memory.
//
// # Safety
// `text` must be a valid C string and `out` a valid pointer.
enum KgsStatus kgs_graph_parse(const char *text, bool add_inverses, struct KgsGraph **out);

// # Safety
// `graph` must come from this library and not be used afterwards.
void kgs_graph_free(struct KgsGraph *graph);

// # Safety
// `graph` must be null or a live handle.
size_t kgs_graph_num_entities(const struct KgsGraph *graph);

// Relation count, including the reserved `self` relation.
//
// # Safety
// `graph` must be null or a live handle.
size_t kgs_graph_num_relations(const struct KgsGraph *graph);

// # Safety
// `graph` must be null or a live handle.
size_t kgs_graph_num_edges(const struct KgsGraph *graph);

// Scorer giving every valid next relation equal probability.
//
// # Safety
// `out` must be a valid pointer.
enum KgsStatus kgs_scorer_uniform(struct KgsScorer **out);

// Scorer that follows the given gold sequences, e.g. `"directed starred"`.
// Several sequences are separated by `|`.
//
// # Safety
// `graph` must be a live handle, `gold` a valid C string and `out` a valid
// pointer.
enum KgsStatus kgs_scorer_oracle(const struct KgsGraph *graph,
                                 const char *gold,
                                 struct KgsScorer **out);

// Loads a trained scorer checkpoint and checks it against `graph`.
//
// # Safety
// `graph` must be a live handle, `path` a valid C string and `out` a valid
// pointer.
enum KgsStatus kgs_scorer_load(const struct KgsGraph *graph,
                               const char *path,
                               struct KgsScorer **out);

// # Safety
// `scorer` must come from this library and not be used afterwards.
void kgs_scorer_free(struct KgsScorer *scorer);

// Beam search from the `|`-separated anchor names. `question` may be null.
//
// # Safety
// `graph` and `scorer` must be live handles, `anchors` a valid C string,
// `question` null or a valid C string, and `out` a valid pointer.
enum KgsStatus kgs_seek(const struct KgsGraph *graph,
                        const struct KgsScorer *scorer,
                        const char *anchors,
                        const char *question,
                        size_t beam,
                        size_t tau_max,
                        size_t k,
                        struct KgsResult **out);

// # Safety
// `result` must come from this library and not be used afterwards.
void kgs_result_free(struct KgsResult *result);

// Number of ranked sequences (at most `k`).
//
// # Safety
// `result` must be null or a live handle.
size_t kgs_result_len(const struct KgsResult *result);

// Sequence at `rank` (0-based) as space-separated relation names, or null
// when out of range. Owned by `result`.
//
// # Safety
// `result` must be null or a live handle.
const char *kgs_result_sequence(const struct KgsResult *result, size_t rank);

// Negative log-likelihood of the sequence at `rank`, or NaN when out of range.
//
// # Safety
// `result` must be null or a live handle.
double kgs_result_nll(const struct KgsResult *result, size_t rank);

// # Safety
// `result` must be null or a live handle.
size_t kgs_result_num_candidates(const struct KgsResult *result);

// Name of candidate `i` in id order, or null when out of range. Owned by
// `result`.
//
// # Safety
// `result` must be null or a live handle.
const char *kgs_result_candidate(const struct KgsResult *result, size_t i);

// # Safety
// `result` must be null or a live handle.
uint64_t kgs_result_scorer_calls(const struct KgsResult *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KGSEEK_H */
