#ifndef DIRAC_MFP_H
#define DIRAC_MFP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DmfpStatus {
  DMFP_STATUS_OK = 0,
  DMFP_STATUS_NULL_POINTER = 1,
  DMFP_STATUS_INVALID_PARAMETER = 2,
  DMFP_STATUS_UNSUPPORTED_PARAMETER = 3,
  DMFP_STATUS_DEGENERATE_STATE = 4,
  DMFP_STATUS_NEWTON_DIVERGENCE = 5,
  DMFP_STATUS_INVALID_TARGET = 6,
  DMFP_STATUS_FORMAT = 7,
  DMFP_STATUS_EXTENSION = 8,
  DMFP_STATUS_UNNORMALIZED = 9,
  DMFP_STATUS_IO = 10,
  DMFP_STATUS_INTERNAL = 11,
  DMFP_STATUS_BUFFER_TOO_SMALL = 12,
  DMFP_STATUS_PANIC = 13,
} DmfpStatus;

/**
 * Opaque solved flow with its convergence record.
 */
typedef struct DmfpFlow DmfpFlow;

/**
 * Opaque self-similar profile.
 */
typedef struct DmfpProfile DmfpProfile;

/**
 * Opaque terminal density.
 */
typedef struct DmfpTerminal DmfpTerminal;

typedef struct DmfpProfileConstants {
  double theta;
  double alpha;
  double r_alpha;
  double kappa;
  /**
   * `alpha (1 - alpha) / 2`.
   */
  double coef;
} DmfpProfileConstants;

typedef struct DmfpCompatibility {
  double c_lower;
  double c_upper;
  double ratio_bound;
  bool pass;
} DmfpCompatibility;

/**
 * Grid and solver settings. `linear_solver` is 0 for the banded direct
 * solver, 1 for conjugate gradients.
 */
typedef struct DmfpSolveOptions {
  double eps;
  double t_final;
  size_t nt;
  size_t ny;
  size_t newton_max_iter;
  double residual_tol;
  uint32_t linear_solver;
  bool strict_target;
} DmfpSolveOptions;

typedef struct DmfpSolveReport {
  size_t iterations;
  double scaled_residual;
  double energy_initial;
  double energy_final;
  size_t backtracks;
  size_t linear_iterations;
} DmfpSolveReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *dmfp_version(void);

/**
 * Copies the last error message of this thread into `buf` (truncated and
 * NUL-terminated) and returns the full message length including the NUL,
 * or 0 when there is no error.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t dmfp_last_error_message(char *buf, size_t len);

/**
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum DmfpStatus dmfp_profile_new(double theta, struct DmfpProfile **out);

/**
 * # Safety
 * `p` must be null or a handle from [`dmfp_profile_new`] not yet freed.
 */
void dmfp_profile_free(struct DmfpProfile *p);

/**
 * # Safety
 * `p` must be a live profile handle and `out` writable.
 */
enum DmfpStatus dmfp_profile_constants(const struct DmfpProfile *p,
                                       struct DmfpProfileConstants *out);

/**
 * Profile density at `y`; NaN for a null handle.
 *
 * # Safety
 * `p` must be null or a live profile handle.
 */
double dmfp_profile_phi(const struct DmfpProfile *p, double y);

/**
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum DmfpStatus dmfp_terminal_power_bump(double a,
                                         double b,
                                         double theta,
                                         struct DmfpTerminal **out);

/**
 * Terminal density of the self-similar flow at `t_final`.
 *
 * # Safety
 * `p` must be a live profile handle and `out` a valid handle slot.
 */
enum DmfpStatus dmfp_terminal_self_similar(const struct DmfpProfile *p,
                                           double t_final,
                                           double eps,
                                           struct DmfpTerminal **out);

/**
 * Loads a two-column `x,m` CSV file.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string and `out` a valid handle slot.
 */
enum DmfpStatus dmfp_terminal_load_csv(const char *path, double theta, struct DmfpTerminal **out);

/**
 * # Safety
 * `m` must be null or a terminal handle not yet freed.
 */
void dmfp_terminal_free(struct DmfpTerminal *m);

/**
 * # Safety
 * `m` must be a live terminal handle and `out` writable.
 */
enum DmfpStatus dmfp_terminal_compatibility(const struct DmfpTerminal *m,
                                            double ratio_bound,
                                            struct DmfpCompatibility *out);

/**
 * Defaults: eps 1e-3, T 1, 128 x 128, banded direct solver.
 *
 * # Safety
 * `out` must be writable.
 */
enum DmfpStatus dmfp_solve_options_default(struct DmfpSolveOptions *out);

/**
 * Solves for the flow carrying the profile labels to `m`.
 *
 * # Safety
 * Handles must be live, `opts` readable and `out` a valid handle slot.
 */
enum DmfpStatus dmfp_solve(const struct DmfpProfile *p,
                           const struct DmfpTerminal *m,
                           const struct DmfpSolveOptions *opts,
                           struct DmfpFlow **out);

/**
 * # Safety
 * `f` must be null or a flow handle not yet freed.
 */
void dmfp_flow_free(struct DmfpFlow *f);

/**
 * Number of time and label intervals.
 *
 * # Safety
 * `f` must be a live flow handle; `nt` and `ny` writable.
 */
enum DmfpStatus dmfp_flow_dims(const struct DmfpFlow *f, size_t *nt, size_t *ny);

/**
 * # Safety
 * `f` must be a live flow handle and `out` writable.
 */
enum DmfpStatus dmfp_flow_report(const struct DmfpFlow *f, struct DmfpSolveReport *out);

/**
 * Copies `gamma` row-major, `(nt + 1) * (ny + 1)` values, time-major.
 *
 * # Safety
 * `f` must be a live flow handle and `buf` point to `len` writable doubles.
 */
enum DmfpStatus dmfp_flow_copy_gamma(const struct DmfpFlow *f, double *buf, size_t len);

/**
 * Copies the `nt + 1` time nodes.
 *
 * # Safety
 * `f` must be a live flow handle and `buf` point to `len` writable doubles.
 */
enum DmfpStatus dmfp_flow_copy_times(const struct DmfpFlow *f, double *buf, size_t len);

/**
 * Copies the `ny + 1` label nodes.
 *
 * # Safety
 * `f` must be a live flow handle and `buf` point to `len` writable doubles.
 */
enum DmfpStatus dmfp_flow_copy_labels(const struct DmfpFlow *f, double *buf, size_t len);

/**
 * Density at time node `i` on the image nodes `x = gamma(t_i, y_j)`, each
 * buffer holding at least `ny + 1` values.
 *
 * # Safety
 * `f` must be a live flow handle; `x` and `m` point to `len` writable doubles.
 */
enum DmfpStatus dmfp_flow_density(const struct DmfpFlow *f,
                                  size_t i,
                                  double *x,
                                  double *m,
                                  size_t len);

/**
 * Free-boundary positions at every time node, `nt + 1` values each.
 *
 * # Safety
 * `f` must be a live flow handle; `left` and `right` point to `len` writable
 * doubles.
 */
enum DmfpStatus dmfp_flow_boundary(const struct DmfpFlow *f,
                                   double *left,
                                   double *right,
                                   size_t len);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* DIRAC_MFP_H */
