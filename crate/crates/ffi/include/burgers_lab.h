#ifndef BURGERS_LAB_H
#define BURGERS_LAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result codes. `Ok` is zero; everything else is an error.
 */
typedef enum BlStatus {
  BL_STATUS_OK = 0,
  BL_STATUS_NULL_POINTER = 1,
  BL_STATUS_INVALID_UTF8 = 2,
  BL_STATUS_INVALID_PARAMETER = 3,
  BL_STATUS_CONFIG = 4,
  BL_STATUS_VALIDATION = 5,
  BL_STATUS_PRECONDITION = 6,
  BL_STATUS_NUMERICAL = 7,
  BL_STATUS_INDEX = 8,
  BL_STATUS_IO = 9,
  BL_STATUS_UNKNOWN_CHECK = 10,
  BL_STATUS_BUFFER_TOO_SMALL = 11,
  BL_STATUS_PANIC = 12,
} BlStatus;

/**
 * Opaque experiment (configuration plus lazily computed iterates).
 */
typedef struct BlExperiment BlExperiment;

/**
 * Opaque initial velocity field.
 */
typedef struct BlField BlField;

/**
 * Opaque zone layout.
 */
typedef struct BlLayout BlLayout;

/**
 * Opaque verification report.
 */
typedef struct BlReport BlReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message (empty after a success).
 *
 * # Safety
 * `buf` must be null or valid for `cap` bytes; `needed` null or writable.
 */
enum BlStatus bl_last_error(char *buf, size_t cap, size_t *needed);

/**
 * `Φ(t, x)` of the scalar comparison flow.
 *
 * # Safety
 * `out` must be writable.
 */
enum BlStatus bl_phi_flow(double kappa, double u, double x_min, double t, double x, double *out);

/**
 * Bound on every iterate of `B_{n+1} = c1 + c2 B_n^α`, `B_0 = a0`.
 *
 * # Safety
 * `out` must be writable.
 */
enum BlStatus bl_fixed_point_bound(double c1, double c2, double alpha, double a0, double *out);

/**
 * # Safety
 * `radii` must be valid for `n` reads; `out` writable.
 */
enum BlStatus bl_layout_new(const double *radii, size_t n, double kappa, struct BlLayout **out);

/**
 * Checks the layout rules. On a violation returns `Validation` and, when
 * the pointers are non-null, stores the offending radii pair.
 *
 * # Safety
 * `layout` must come from [`bl_layout_new`]; out pointers null or writable.
 */
enum BlStatus bl_layout_validate(const struct BlLayout *layout, double *r_lo, double *r_hi);

/**
 * Safe interval `I_i(t)` of safe zone `i` (1-based).
 *
 * # Safety
 * `layout` must come from [`bl_layout_new`]; out pointers writable.
 */
enum BlStatus bl_layout_safe_interval(const struct BlLayout *layout,
                                      size_t i,
                                      double t,
                                      double u,
                                      double c,
                                      bool viscous,
                                      double *lower,
                                      double *upper,
                                      bool *empty);

/**
 * # Safety
 * `layout` must be null or come from [`bl_layout_new`], and not be used again.
 */
void bl_layout_free(struct BlLayout *layout);

/**
 * Prototype field `U s(|x|) x/|x|` in dimension `dim`.
 *
 * # Safety
 * `out` must be writable.
 */
enum BlStatus bl_field_prototype(size_t dim, double u, double kappa, struct BlField **out);

/**
 * Evaluates `u_0(x)`; `x` and `value` both have `dim` entries.
 *
 * # Safety
 * `field` from a `bl_field_*` constructor; `x` readable and `value`
 * writable for `dim` doubles.
 */
enum BlStatus bl_field_eval(const struct BlField *field,
                            const double *x,
                            size_t dim,
                            double *value);

/**
 * Exact viscous solution `u(t, x)` (one-dimensional fields, η = 1).
 *
 * # Safety
 * `field` from a `bl_field_*` constructor; `out` writable.
 */
enum BlStatus bl_field_cole_hopf(const struct BlField *field, double t, double x, double *out);

/**
 * # Safety
 * `field` must be null or come from a `bl_field_*` constructor, and not be
 * used again.
 */
void bl_field_free(struct BlField *field);

/**
 * Parses and validates a TOML configuration.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` writable.
 */
enum BlStatus bl_experiment_from_toml(const char *toml, struct BlExperiment **out);

/**
 * Runs the named check (e.g. `"hyp1"`, `"mt_tail"`), computing iterates
 * first if the check needs them.
 *
 * # Safety
 * `exp` from [`bl_experiment_from_toml`]; `check` NUL-terminated; `out`
 * writable.
 */
enum BlStatus bl_experiment_run(struct BlExperiment *exp, const char *check, struct BlReport **out);

/**
 * # Safety
 * `exp` must be null or come from [`bl_experiment_from_toml`], and not be
 * used again.
 */
void bl_experiment_free(struct BlExperiment *exp);

/**
 * Whether the check passed, and its fitted constant.
 *
 * # Safety
 * `report` from [`bl_experiment_run`]; out pointers null or writable.
 */
enum BlStatus bl_report_summary(const struct BlReport *report, bool *pass, double *fitted);

/**
 * The report as JSON; see [`bl_last_error`] for the buffer protocol.
 *
 * # Safety
 * `report` from [`bl_experiment_run`]; `buf` null or valid for `cap`
 * bytes; `needed` null or writable.
 */
enum BlStatus bl_report_json(const struct BlReport *report, char *buf, size_t cap, size_t *needed);

/**
 * # Safety
 * `report` must be null or come from [`bl_experiment_run`], and not be
 * used again.
 */
void bl_report_free(struct BlReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BURGERS_LAB_H */
