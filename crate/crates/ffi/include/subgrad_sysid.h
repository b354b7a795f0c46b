#ifndef SUBGRAD_SYSID_H
#define SUBGRAD_SYSID_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SsidStatus {
  SSID_STATUS_OK = 0,
  SSID_STATUS_NULL_POINTER = 1,
  SSID_STATUS_INVALID_ARGUMENT = 2,
  SSID_STATUS_DIMENSION_MISMATCH = 3,
  SSID_STATUS_STATIONARY = 4,
  SSID_STATUS_MISSING_ORACLE = 5,
  SSID_STATUS_HORIZON_EXCEEDED = 6,
  SSID_STATUS_PARSE = 7,
  SSID_STATUS_IO = 8,
  SSID_STATUS_PANIC = 9,
} SsidStatus;

typedef enum SsidPolicyKind {
  SSID_POLICY_KIND_BEST = 0,
  SSID_POLICY_KIND_POLYAK = 1,
  SSID_POLICY_KIND_CONSTANT = 2,
  SSID_POLICY_KIND_DIMINISHING = 3,
  SSID_POLICY_KIND_BACKTRACKING = 4,
} SsidPolicyKind;

typedef struct SsidEstimator SsidEstimator;

typedef struct SsidSystem SsidSystem;

typedef struct SsidTrajectory SsidTrajectory;

// `value` is `β` for constant steps and `β₀` for diminishing steps; it is
// ignored otherwise.
typedef struct SsidPolicy {
  enum SsidPolicyKind kind;
  double value;
} SsidPolicy;

// One period of the estimator. Gap fields are NaN without a known system.
typedef struct SsidStepRecord {
  uint64_t period;
  double sol_gap;
  double loss_gap;
  double beta;
  double grad_norm;
  double cos_theta;
  // Bit set: 1 stationary, 2 negative Polyak gap, 4 no descent, 8 negative
  // step.
  uint32_t flags;
} SsidStepRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread. Valid until the next
// failing call on the same thread; never null.
const char *ssid_last_error(void);

// Draws a stable `n × n` system.
//
// # Safety
// `out` must be writable.
enum SsidStatus ssid_system_generate(size_t n, uint64_t seed, struct SsidSystem **out);

// Wraps a row-major `n × n` matrix with spectral norm below one.
//
// # Safety
// `data` must hold `n * n` doubles; `out` must be writable.
enum SsidStatus ssid_system_from_matrix(const double *data, size_t n, struct SsidSystem **out);

// Dimension, or 0 for a null handle.
//
// # Safety
// `sys` must be null or a live handle.
size_t ssid_system_dim(const struct SsidSystem *sys);

// Spectral norm, or NaN for a null handle.
//
// # Safety
// `sys` must be null or a live handle.
double ssid_system_rho(const struct SsidSystem *sys);

// Copies the matrix, row-major, into `out[0..n*n]`.
//
// # Safety
// `sys` must be a live handle and `out` must hold `len` doubles.
enum SsidStatus ssid_system_matrix(const struct SsidSystem *sys, double *out, size_t len);

// # Safety
// `sys` must be null or a handle not yet freed.
void ssid_system_free(struct SsidSystem *sys);

// Simulates `horizon` transitions with Gaussian disturbance lengths of
// scale `1/√n`. `x0` may be null for the zero state.
//
// # Safety
// `sys` must be live, `x0` null or `n` doubles, `out` writable.
enum SsidStatus ssid_simulate(const struct SsidSystem *sys,
                              double p,
                              uint64_t seed,
                              size_t horizon,
                              const double *x0,
                              struct SsidTrajectory **out);

// Number of transitions, or 0 for a null handle.
//
// # Safety
// `traj` must be null or a live handle.
size_t ssid_trajectory_horizon(const struct SsidTrajectory *traj);

// # Safety
// `traj` must be null or a live handle.
size_t ssid_trajectory_dim(const struct SsidTrajectory *traj);

// Copies `x_t` into `out[0..n]`.
//
// # Safety
// `traj` must be live and `out` must hold `len` doubles.
enum SsidStatus ssid_trajectory_state(const struct SsidTrajectory *traj,
                                      size_t t,
                                      double *out,
                                      size_t len);

// Whether the disturbance at `t` is nonzero.
//
// # Safety
// `traj` must be live and `out` writable.
enum SsidStatus ssid_trajectory_is_attacked(const struct SsidTrajectory *traj, size_t t, bool *out);

// Writes the trajectory CSV to a UTF-8 path.
//
// # Safety
// `traj` must be live and `path` a NUL-terminated string.
enum SsidStatus ssid_trajectory_write_csv(const struct SsidTrajectory *traj, const char *path);

// # Safety
// `traj` must be null or a handle not yet freed.
void ssid_trajectory_free(struct SsidTrajectory *traj);

// Streaming estimator starting at `Â^(1) = 0` with first state `x0`.
//
// # Safety
// `x0` must hold `n` doubles and `out` must be writable.
enum SsidStatus ssid_estimator_new(size_t n,
                                   const double *x0,
                                   struct SsidPolicy policy,
                                   struct SsidEstimator **out);

// Supplies the true matrix (row-major), enabling gap metrics and the best
// and Polyak steps.
//
// # Safety
// `est` must be live and `a_true` must hold `n * n` doubles.
enum SsidStatus ssid_estimator_set_truth(struct SsidEstimator *est, const double *a_true);

// Optimal-value estimate used by Polyak steps when the truth is unknown.
//
// # Safety
// `est` must be live.
enum SsidStatus ssid_estimator_set_f_star(struct SsidEstimator *est, double f_star);

// Appends the next state.
//
// # Safety
// `est` must be live and `x` must hold `n` doubles.
enum SsidStatus ssid_estimator_observe(struct SsidEstimator *est, const double *x);

// Takes one update. `record` may be null.
//
// # Safety
// `est` must be live; `record` null or writable.
enum SsidStatus ssid_estimator_step(struct SsidEstimator *est, struct SsidStepRecord *record);

// Copies the current estimate, row-major.
//
// # Safety
// `est` must be live and `out` must hold `len` doubles.
enum SsidStatus ssid_estimator_matrix(const struct SsidEstimator *est, double *out, size_t len);

// Current period `T`, or 0 for a null handle.
//
// # Safety
// `est` must be null or a live handle.
uint64_t ssid_estimator_period(const struct SsidEstimator *est);

// # Safety
// `est` must be null or a handle not yet freed.
void ssid_estimator_free(struct SsidEstimator *est);

// Runs periods `1..horizon` on a simulated trajectory and reports the
// final solution gap. `estimate` may be null; otherwise it receives the
// final matrix.
//
// # Safety
// Handles must be live; `final_gap` writable; `estimate` null or `len`
// doubles.
enum SsidStatus ssid_identify(const struct SsidSystem *sys,
                              const struct SsidTrajectory *traj,
                              struct SsidPolicy policy,
                              size_t horizon,
                              double *final_gap,
                              double *estimate,
                              size_t len);

// Burn-in estimate for a given `κ`.
//
// # Safety
// `out` must be writable.
enum SsidStatus ssid_burn_in_estimate(double kappa,
                                      double p,
                                      double rho,
                                      size_t n,
                                      double delta,
                                      double c_burn,
                                      uint64_t *out);

// Contraction rate `γ` for a given `κ`.
//
// # Safety
// `out` must be writable.
enum SsidStatus ssid_gamma_rate(double kappa, double p, double rho, double c_gamma, double *out);

// Least-squares fit on the first `periods` transitions, row-major.
//
// # Safety
// `traj` must be live and `out` must hold `len` doubles.
enum SsidStatus ssid_lse_fit(const struct SsidTrajectory *traj,
                             size_t periods,
                             double ridge,
                             double *out,
                             size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SUBGRAD_SYSID_H */
