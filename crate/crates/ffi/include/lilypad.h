#ifndef LILYPAD_H
#define LILYPAD_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of a call.
 */
typedef enum LilypadStatus {
  LILYPAD_STATUS_OK = 0,
  LILYPAD_STATUS_INVALID_PARAMETERS = 1,
  LILYPAD_STATUS_INVALID_INPUT = 2,
  LILYPAD_STATUS_HORIZON_EXCEEDED = 3,
  LILYPAD_STATUS_ACCURACY = 4,
  LILYPAD_STATUS_INVALID_PAIRING = 5,
  LILYPAD_STATUS_TOO_LARGE = 6,
  LILYPAD_STATUS_IO = 7,
  LILYPAD_STATUS_NULL_POINTER = 8,
  LILYPAD_STATUS_PANIC = 9,
} LilypadStatus;

/**
 * A sampled or hand-built environment.
 */
typedef struct LilypadPointSet LilypadPointSet;

/**
 * Hitting times of one environment up to a horizon.
 */
typedef struct LilypadSolution LilypadSolution;

/**
 * Maximizer of `ξ(y)(t - H(y))`; `found` is 0 when no point has been hit.
 */
typedef struct LilypadMaximizer {
  uint8_t found;
  size_t index;
  double xi;
  double value;
  double near_tie_gap;
} LilypadMaximizer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Samples the Poisson environment in `B(0, radius)` with marks at least `delta`.
 *
 * # Safety
 * `out` must be valid for one pointer write.
 */
enum LilypadStatus lilypad_sample_poisson(size_t d,
                                          double alpha,
                                          double radius,
                                          double delta,
                                          uint64_t seed,
                                          struct LilypadPointSet **out);

/**
 * Builds an environment from `n` points: `coords` holds `n * d` values row
 * by row and `marks` holds `n` values.
 *
 * # Safety
 * `coords` and `marks` must be valid for the stated lengths (they may be null
 * when `n = 0`); `out` must be valid for one pointer write.
 */
enum LilypadStatus lilypad_point_set_from_points(size_t d,
                                                 double alpha,
                                                 double radius,
                                                 double delta,
                                                 const double *coords,
                                                 const double *marks,
                                                 size_t n,
                                                 struct LilypadPointSet **out);

/**
 * Number of points; 0 for a null handle.
 *
 * # Safety
 * `set` must be null or a live handle.
 */
size_t lilypad_point_set_len(const struct LilypadPointSet *set);

/**
 * Releases a point set; null is ignored.
 *
 * # Safety
 * `set` must be null or a live handle not used afterwards.
 */
void lilypad_point_set_free(struct LilypadPointSet *set);

/**
 * Solves hitting times up to `horizon` (may be infinite) with origin speed `delta`.
 *
 * The solution keeps its own reference to the point set.
 *
 * # Safety
 * `set` must be a live handle and `out` valid for one pointer write.
 */
enum LilypadStatus lilypad_solve(const struct LilypadPointSet *set,
                                 double delta,
                                 double horizon,
                                 struct LilypadSolution **out);

/**
 * Releases a solution; null is ignored.
 *
 * # Safety
 * `sol` must be null or a live handle not used afterwards.
 */
void lilypad_solution_free(struct LilypadSolution *sol);

/**
 * `h^δ(z)` for a point `z` of dimension `d`.
 *
 * # Safety
 * `sol` must be a live handle, `z` valid for `d` reads, `out` for one write.
 */
enum LilypadStatus lilypad_hitting_at(const struct LilypadSolution *sol,
                                      const double *z,
                                      size_t d,
                                      double *out);

/**
 * `m^δ(z, t)` for a point `z` of dimension `d`.
 *
 * # Safety
 * `sol` must be a live handle, `z` valid for `d` reads, `out` for one write.
 */
enum LilypadStatus lilypad_particles_at(const struct LilypadSolution *sol,
                                        const double *z,
                                        size_t d,
                                        double t,
                                        double *out);

/**
 * Maximizer at time `t`. When `pos` is non-null and a point is found, its
 * position is copied there; `pos_len` must then equal the dimension.
 *
 * # Safety
 * `sol` must be a live handle, `out` valid for one write and `pos` null or
 * valid for `pos_len` writes.
 */
enum LilypadStatus lilypad_maximizer(const struct LilypadSolution *sol,
                                     double t,
                                     struct LilypadMaximizer *out,
                                     double *pos,
                                     size_t pos_len);

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len - 1` bytes) and returns the full message length in
 * bytes, excluding the terminator. With a null `buf` nothing is copied.
 *
 * # Safety
 * `buf` must be null or valid for `len` writes.
 */
size_t lilypad_last_error_message(char *buf, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LILYPAD_H */
