#ifndef ML2O_H
#define ML2O_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum Ml2oStatus {
  ML2O_STATUS_OK = 0,
  ML2O_STATUS_NULL_POINTER = 1,
  ML2O_STATUS_INVALID_ARGUMENT = 2,
  ML2O_STATUS_SHAPE_MISMATCH = 3,
  ML2O_STATUS_NON_FINITE = 4,
  ML2O_STATUS_UNSUPPORTED = 5,
  ML2O_STATUS_NOT_FOUND = 6,
  ML2O_STATUS_CHECKPOINT = 7,
  ML2O_STATUS_CONFIG = 8,
  ML2O_STATUS_IO = 9,
  ML2O_STATUS_GUARD_VIOLATION = 10,
  ML2O_STATUS_DIVERGED = 11,
  ML2O_STATUS_PANIC = 12,
} Ml2oStatus;

/**
 * Which guard candidate was kept.
 */
typedef enum Ml2oGuardChoice {
  ML2O_GUARD_CHOICE_FALLBACK = 0,
  ML2O_GUARD_CHOICE_LEARNED = 1,
} Ml2oGuardChoice;

/**
 * Recurrent state of the learned optimizer for one iterate.
 */
typedef struct Ml2oLearnerState Ml2oLearnerState;

/**
 * Weights of the learned optimizer.
 */
typedef struct Ml2oParamsHandle Ml2oParamsHandle;

/**
 * A multi-objective problem.
 */
typedef struct Ml2oProblem Ml2oProblem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy of the calling thread's last error message, or null if there was
 * none. Release it with [`ml2o_string_free`].
 */
char *ml2o_last_error_message(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void ml2o_string_free(char *s);

/**
 * Library version as a static nul-terminated string.
 */
const char *ml2o_version(void);

/**
 * Identity-curvature quadratic pair with centers drawn from `seed`.
 */
enum Ml2oStatus ml2o_problem_quadratic_new(size_t dim,
                                           uint64_t seed,
                                           double noise_sigma,
                                           struct Ml2oProblem **out);

/**
 * Two-task toy network on a synthetic dataset.
 */
enum Ml2oStatus ml2o_problem_toy_mtl_new(uint64_t seed,
                                         size_t samples,
                                         size_t classes,
                                         size_t batch,
                                         struct Ml2oProblem **out);

/**
 * # Safety
 * `p` must be null or a handle from this library, not used afterwards.
 */
void ml2o_problem_free(struct Ml2oProblem *p);

enum Ml2oStatus ml2o_problem_shape(const struct Ml2oProblem *p, size_t *dim, size_t *objectives);

/**
 * Writes the `m` objective values at `x` into `losses`.
 */
enum Ml2oStatus ml2o_problem_eval(const struct Ml2oProblem *p,
                                  const double *x,
                                  size_t n,
                                  double *losses,
                                  size_t m);

/**
 * Writes the `m x n` Jacobian at `x`, row-major, into `jac` (length `m*n`).
 */
enum Ml2oStatus ml2o_problem_jacobian(const struct Ml2oProblem *p,
                                      const double *x,
                                      size_t n,
                                      double *jac,
                                      size_t len);

/**
 * Min-norm point of the convex hull of the rows of `w` (`m x n`, row-major).
 * `weights` gets `m` entries, `direction` the `n`-entry descent direction.
 */
enum Ml2oStatus ml2o_min_norm_solve(const double *w,
                                    size_t m,
                                    size_t n,
                                    double tol,
                                    size_t max_iter,
                                    double *weights,
                                    double *direction,
                                    bool *converged);

/**
 * Weights drawn from `U[-0.1, 0.1]`.
 */
enum Ml2oStatus ml2o_params_random(size_t objectives,
                                   size_t hidden,
                                   uint64_t seed,
                                   struct Ml2oParamsHandle **out);

enum Ml2oStatus ml2o_params_load(const char *path, struct Ml2oParamsHandle **out);

enum Ml2oStatus ml2o_params_save(const struct Ml2oParamsHandle *p, const char *path);

/**
 * # Safety
 * `p` must be null or a handle from this library, not used afterwards.
 */
void ml2o_params_free(struct Ml2oParamsHandle *p);

/**
 * Zero recurrent state for an `n`-coordinate iterate.
 */
enum Ml2oStatus ml2o_state_new(const struct Ml2oParamsHandle *params,
                               size_t n,
                               struct Ml2oLearnerState **out);

/**
 * # Safety
 * `s` must be null or a handle from this library, not used afterwards.
 */
void ml2o_state_free(struct Ml2oLearnerState *s);

/**
 * Learned update `g` (the iterate moves by `-alpha * g`) from the gradient
 * rows `y` (`m x n`). Advances `state` only on success.
 */
enum Ml2oStatus ml2o_learned_direction(const struct Ml2oParamsHandle *params,
                                       struct Ml2oLearnerState *state,
                                       const double *y,
                                       size_t m,
                                       size_t n,
                                       double *g);

/**
 * Compares the fallback and learned candidates from base point `z` on the
 * exact losses and writes the kept point into `next`.
 */
enum Ml2oStatus ml2o_guard_select(const struct Ml2oProblem *problem,
                                  const double *z,
                                  const double *fallback,
                                  const double *learned,
                                  size_t n,
                                  double *next,
                                  enum Ml2oGuardChoice *choice);

/**
 * Runs a JSON experiment config with the built-in problems and writes its
 * outputs into `out_dir`.
 */
enum Ml2oStatus ml2o_run_config(const char *config_path, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ML2O_H */
