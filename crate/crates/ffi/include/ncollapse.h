#ifndef NCOLLAPSE_H
#define NCOLLAPSE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NcRegime {
  NC_REGIME_INTERIOR = 0,
  NC_REGIME_MINORITY_COLLAPSED = 1,
  NC_REGIME_MAJORITY_ONLY = 2,
  NC_REGIME_ZERO = 3,
} NcRegime;

/**
 * Result codes. Zero is success.
 */
typedef enum NcStatus {
  NC_STATUS_OK = 0,
  NC_STATUS_NULL_POINTER = 1,
  NC_STATUS_INVALID_ARGUMENT = 2,
  NC_STATUS_DIMENSION_MISMATCH = 3,
  NC_STATUS_DOMAIN = 4,
  NC_STATUS_REGIME = 5,
  NC_STATUS_NUMERIC = 6,
  NC_STATUS_TOO_LARGE = 7,
  NC_STATUS_BUFFER_TOO_SMALL = 8,
  NC_STATUS_PANIC = 9,
} NcStatus;

/**
 * Class sizes, sorted internally in decreasing order.
 */
typedef struct NcProblem NcProblem;

/**
 * Output of the numeric solver.
 */
typedef struct NcSolution NcSolution;

/**
 * Block parameters of the two-cluster solution. `xi` is NaN unless ν lies
 * strictly between √n_B and √n_A.
 */
typedef struct NcBlockParams {
  double a;
  double b;
  double c;
  double d;
  double m;
  double xi;
  enum NcRegime regime;
} NcBlockParams;

typedef struct NcRatioThreshold {
  double ratio;
  double raw;
  bool clamped;
} NcRatioThreshold;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the message of the last failure on this thread into `buf`,
 * NUL-terminated, and returns the full message length excluding the NUL.
 * Returns 0 when there is no message. Pass a null `buf` to query the length.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t nc_last_error_message(char *buf, size_t len);

/**
 * Static, NUL-terminated library version.
 */
const char *nc_version(void);

/**
 * Builds a problem from `len` class sizes.
 *
 * # Safety
 * `sizes` must point to `len` readable values and `out` to a writable handle slot.
 */
enum NcStatus nc_problem_new(const size_t *sizes, size_t len, struct NcProblem **out);

/**
 * # Safety
 * `problem` must be null or a handle from [`nc_problem_new`] not yet freed.
 */
void nc_problem_free(struct NcProblem *problem);

/**
 * Number of classes, 0 for a null handle.
 *
 * # Safety
 * `problem` must be null or a live handle.
 */
size_t nc_problem_num_classes(const struct NcProblem *problem);

/**
 * Solves the reduced problem with default solver options. Pass
 * `lambda_b = INFINITY` for the bias-free model.
 *
 * # Safety
 * `problem` must be a live handle and `out` a writable handle slot.
 */
enum NcStatus nc_solve_reduced(const struct NcProblem *problem,
                               double lambda_z,
                               double lambda_b,
                               struct NcSolution **out);

/**
 * # Safety
 * `solution` must be null or a handle from [`nc_solve_reduced`] not yet freed.
 */
void nc_solution_free(struct NcSolution *solution);

/**
 * Objective value, NaN for a null handle.
 *
 * # Safety
 * `solution` must be null or a live handle.
 */
double nc_solution_objective(const struct NcSolution *solution);

/**
 * # Safety
 * `solution` must be null or a live handle.
 */
double nc_solution_stationarity(const struct NcSolution *solution);

/**
 * # Safety
 * `solution` must be null or a live handle.
 */
double nc_solution_feasibility_margin(const struct NcSolution *solution);

/**
 * # Safety
 * `solution` must be null or a live handle.
 */
size_t nc_solution_iterations(const struct NcSolution *solution);

/**
 * # Safety
 * `solution` must be null or a live handle.
 */
bool nc_solution_converged(const struct NcSolution *solution);

/**
 * Number of classes K of the solution.
 *
 * # Safety
 * `solution` must be null or a live handle.
 */
size_t nc_solution_num_classes(const struct NcSolution *solution);

/**
 * Copies Z̄ (K×K, column-major, classes in sorted order) into `buf`.
 *
 * # Safety
 * `solution` must be a live handle and `buf` must point to `len` writable values.
 */
enum NcStatus nc_solution_zbar(const struct NcSolution *solution, double *buf, size_t len);

/**
 * Copies the bias vector (length K) into `buf`.
 *
 * # Safety
 * `solution` must be a live handle and `buf` must point to `len` writable values.
 */
enum NcStatus nc_solution_bias(const struct NcSolution *solution, double *buf, size_t len);

/**
 * Closed-form two-cluster solution with k_A classes of n_A samples and k_B
 * classes of n_B samples.
 *
 * # Safety
 * `out` must point to a writable [`NcBlockParams`].
 */
enum NcStatus nc_two_cluster_solve(size_t k_a,
                                   size_t k_b,
                                   size_t n_a,
                                   size_t n_b,
                                   double lambda_z,
                                   double lambda_b,
                                   struct NcBlockParams *out);

/**
 * λ_Z values √n_B/N and √n_A/N where minority collapse starts and where Z̄
 * becomes zero.
 *
 * # Safety
 * `minority` and `complete` must point to writable values.
 */
enum NcStatus nc_collapse_lambdas(size_t k_a,
                                  size_t k_b,
                                  size_t n_a,
                                  size_t n_b,
                                  double *minority,
                                  double *complete);

/**
 * Bias-free switch point λ* inside the collapse interval.
 *
 * # Safety
 * `out` must point to a writable value.
 */
enum NcStatus nc_lambda_star(size_t k_a, size_t k_b, size_t n_a, size_t n_b, double *out);

/**
 * Imbalance ratio n_A/n_B from which the minority classes collapse.
 *
 * # Safety
 * `out` must point to a writable [`NcRatioThreshold`].
 */
enum NcStatus nc_minority_collapse_ratio(double lambda_z,
                                         double n_b,
                                         size_t k_a,
                                         size_t k_b,
                                         struct NcRatioThreshold *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NCOLLAPSE_H */
