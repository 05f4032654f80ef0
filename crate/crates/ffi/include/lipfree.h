#ifndef LIPFREE_H
#define LIPFREE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LfGround {
  LF_GROUND_LINF = 0,
  LF_GROUND_L1 = 1,
  LF_GROUND_L2 = 2,
} LfGround;

typedef enum LfStatus {
  LF_STATUS_OK = 0,
  LF_STATUS_NULL_POINTER = 1,
  LF_STATUS_INVALID_UTF8 = 2,
  LF_STATUS_INVALID_ARGUMENT = 3,
  LF_STATUS_INVALID_METRIC = 4,
  LF_STATUS_PRECONDITION = 5,
  LF_STATUS_CERTIFICATE_FAILED = 6,
  LF_STATUS_SOLVER = 7,
  LF_STATUS_JSON = 8,
  LF_STATUS_IO = 9,
  LF_STATUS_PANIC = 10,
} LfStatus;

/**
 * Result of the extension pipeline at one scale.
 */
typedef struct LfBundle LfBundle;

/**
 * A finite metric space with a base point.
 */
typedef struct LfSpace LfSpace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version; static storage, do not free.
 */
const char *lf_version(void);

/**
 * Message for the last failure on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *lf_last_error_message(void);

void lf_string_free(char *s);

/**
 * Builds a space from a JSON description (`inline`, `grid` or `random`).
 */
enum LfStatus lf_space_from_json(const char *json, struct LfSpace **out);

/**
 * Lattice with `dims[k]` points along axis `k`.
 */
enum LfStatus lf_space_grid(const size_t *dims,
                            size_t ndims,
                            double spacing,
                            enum LfGround ground,
                            struct LfSpace **out);

/**
 * Number of points; 0 for a NULL handle.
 */
size_t lf_space_len(const struct LfSpace *space);

enum LfStatus lf_space_distance(const struct LfSpace *space, size_t i, size_t j, double *out);

void lf_space_free(struct LfSpace *space);

/**
 * `d^alpha` on the same points.
 */
enum LfStatus lf_snowflake(const struct LfSpace *space, double alpha, struct LfSpace **out);

/**
 * Free-space norm of `Σ weights[x] δ_x`, one weight per point.
 */
enum LfStatus lf_free_space_norm(const struct LfSpace *space,
                                 const double *weights,
                                 size_t len,
                                 double *out);

enum LfStatus lf_lipschitz_constant(const struct LfSpace *space,
                                    const double *values,
                                    size_t len,
                                    double *out);

/**
 * Net, cover, extension operator and `perturbations` seeded admissible
 * perturbations at scale `eps`. A negative `dim` leaves the cover order
 * unconstrained.
 */
enum LfStatus lf_prop33_run(const struct LfSpace *space,
                            double eps,
                            int64_t dim,
                            size_t perturbations,
                            uint64_t seed,
                            double tol,
                            struct LfBundle **out);

/**
 * Whether every certificate of the bundle passed; false for NULL.
 */
bool lf_bundle_pass(const struct LfBundle *bundle);

size_t lf_bundle_net_len(const struct LfBundle *bundle);

/**
 * Measured norm of the extension operator with respect to `bar_d`.
 */
enum LfStatus lf_bundle_e_norm(const struct LfBundle *bundle, double *out);

/**
 * Largest measured norm over the perturbation sweep; 0 without perturbations.
 */
enum LfStatus lf_bundle_max_g_norm(const struct LfBundle *bundle, double *out);

/**
 * `sup |d − bar_d|`.
 */
enum LfStatus lf_bundle_metric_gap(const struct LfBundle *bundle, double *out);

/**
 * Full report as JSON; release with [`lf_string_free`].
 */
enum LfStatus lf_bundle_to_json(const struct LfBundle *bundle, char **out);

void lf_bundle_free(struct LfBundle *bundle);

/**
 * Rechecks a pipeline report, a certificate set or a single certificate
 * given as JSON. `*pass` is set when the call succeeds.
 */
enum LfStatus lf_certificate_verify_json(const char *json, bool *pass);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LIPFREE_H */
