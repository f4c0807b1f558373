#ifndef MCCPDE_H
#define MCCPDE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MccpdeRelaxation {
  // Cellwise relaxation on the FEM grid.
  MCCPDE_RELAXATION_POINTWISE = 0,
  // Fine control, averaged McCormick rows on the coarse grid.
  MCCPDE_RELAXATION_AVERAGED = 1,
  // Control on the coarse grid.
  MCCPDE_RELAXATION_FULLY_AVERAGED = 2,
} MccpdeRelaxation;

typedef enum MccpdeStatus {
  MCCPDE_STATUS_OK = 0,
  MCCPDE_STATUS_NULL_POINTER = 1,
  MCCPDE_STATUS_INVALID_ARGUMENT = 2,
  MCCPDE_STATUS_SOLVER = 3,
  MCCPDE_STATUS_INFEASIBLE_ENVELOPE = 4,
  MCCPDE_STATUS_SINGULAR = 5,
  MCCPDE_STATUS_PANIC = 6,
} MccpdeStatus;

// State bounds per coarse cell, as produced by bound tightening.
typedef struct MccpdeEnvelope MccpdeEnvelope;

// Problem data: `-u'' + u w = f` on `(0, 1)` with constant `f`, the control
// box and the tracking target.
typedef struct MccpdeProblem MccpdeProblem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer is
// valid until the next failing call on the same thread.
const char *mccpde_last_error(void);

// Creates a problem with `fem_n` FEM cells, source `f`, control box
// `[w_lo, w_hi]`, TV weight `alpha` and target `u_d ≡ 0`.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum MccpdeStatus mccpde_problem_new(size_t fem_n,
                                     double f,
                                     double w_lo,
                                     double w_hi,
                                     double alpha,
                                     struct MccpdeProblem **out);

// # Safety
// `p` must be null or a handle from `mccpde_problem_new` not yet freed.
void mccpde_problem_free(struct MccpdeProblem *p);

// Replaces the target by the piecewise linear function with the given
// `fem_n + 1` nodal values.
//
// # Safety
// `p` must be a live problem handle and `values` must point to `len` doubles.
enum MccpdeStatus mccpde_problem_set_target_nodal(struct MccpdeProblem *p,
                                                  const double *values,
                                                  size_t len);

// Nodal state of the piecewise constant control `w` with `n_w` equal cells;
// writes `fem_n + 1` values to `u`.
//
// # Safety
// `p` must be a live problem handle, `w` must point to `n_w` doubles and `u`
// to `n_u` writable doubles.
enum MccpdeStatus mccpde_solve_state(const struct MccpdeProblem *p,
                                     const double *w,
                                     size_t n_w,
                                     double *u,
                                     size_t n_u);

// Optimal value of a relaxation on `n_h` coarse cells under the a-priori
// state bounds, or under `env` when it is not null. The pointwise
// relaxation requires `n_h == fem_n`. `kind` is an `MccpdeRelaxation`.
//
// # Safety
// `p` must be a live problem handle, `env` null or a live envelope handle and
// `m` a writable double.
enum MccpdeStatus mccpde_lower_bound(const struct MccpdeProblem *p,
                                     int32_t kind,
                                     size_t n_h,
                                     const struct MccpdeEnvelope *env,
                                     double *m);

// Bound tightening for the fully averaged relaxation on `n_h` cells.
// Stores the tightened envelope in `out` and the relaxation value on it in
// `m`.
//
// # Safety
// `p` must be a live problem handle; `out` and `m` must be writable.
enum MccpdeStatus mccpde_obbt(const struct MccpdeProblem *p,
                              size_t n_h,
                              struct MccpdeEnvelope **out,
                              double *m);

// Number of cells of an envelope; zero for a null handle.
//
// # Safety
// `e` must be null or a live envelope handle.
size_t mccpde_envelope_cells(const struct MccpdeEnvelope *e);

// Copies the per-cell state bounds into `lo` and `hi`, each of length `n`.
//
// # Safety
// `e` must be a live envelope handle and `lo`, `hi` must point to `n`
// writable doubles.
enum MccpdeStatus mccpde_envelope_state_bounds(const struct MccpdeEnvelope *e,
                                               double *lo,
                                               double *hi,
                                               size_t n);

// # Safety
// `e` must be null or an envelope handle not yet freed.
void mccpde_envelope_free(struct MccpdeEnvelope *e);

// Quadratic error constant for the feasible control `w_hat` and the lower
// bound `j0` on the tracking term. With `tight` nonzero the state bounds are
// the solutions for the constant controls `w_hi` and `w_lo` (valid for
// `f ≥ 0`), otherwise the a-priori box.
//
// # Safety
// `p` must be a live problem handle, `w_hat` must point to `n_w` doubles and
// `c_quad` must be writable.
enum MccpdeStatus mccpde_c_quad(const struct MccpdeProblem *p,
                                const double *w_hat,
                                size_t n_w,
                                double j0,
                                int32_t tight,
                                double *c_quad);

// `m − c_quad·h²`.
double mccpde_validated_lower_bound(double m, double c_quad, double h);

// Feasible control on `n_w` cells and its objective. With `integer` nonzero
// the control is integral.
//
// # Safety
// `p` must be a live problem handle, `w` must point to `n_w` writable doubles
// and `obj` must be writable.
enum MccpdeStatus mccpde_upper_bound(const struct MccpdeProblem *p,
                                     size_t n_w,
                                     int32_t integer,
                                     double *w,
                                     double *obj);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MCCPDE_H */
