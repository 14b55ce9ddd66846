#ifndef CELLMECH_H
#define CELLMECH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every call. Error categories share their values with the CLI exit codes.
 */
typedef enum {
  CM_STATUS_OK = 0,
  CM_STATUS_CONFIG = 2,
  CM_STATUS_DOMAIN = 3,
  CM_STATUS_CONVERGENCE = 4,
  CM_STATUS_DETECTION = 5,
  CM_STATUS_IO = 6,
  CM_STATUS_NULL_POINTER = 10,
  CM_STATUS_INVALID_UTF8 = 11,
  CM_STATUS_BUFFER_TOO_SMALL = 12,
  CM_STATUS_PANIC = 13,
} CmStatus;

/**
 * Material presets selectable from C.
 */
typedef enum {
  CM_PRESET_SIM_IV = 0,
  CM_PRESET_EXP_VB = 1,
} CmPreset;

/**
 * Opaque problem setup.
 */
typedef struct CmSetup CmSetup;

/**
 * Opaque converged solution.
 */
typedef struct CmSolution CmSolution;

/**
 * Scalar results of one solve, SI units.
 */
typedef struct {
  double psi_b;
  double force_n;
  double deformation_m;
  double pressure_pa;
  double lambda_a;
  double lambda_f;
  double c1_pa;
  double shooting_residual;
  double volume_residual;
  uint32_t iterations;
} CmSummary;

/**
 * One membrane sample with its tensions (N/m) and stresses (Pa).
 */
typedef struct {
  double psi;
  double lambda_m;
  double lambda_c;
  double t_m;
  double t_c;
  double sigma_m;
  double sigma_c;
  /**
   * Segment index: 0 = AB, 1 = BC, 2 = CD, 3 = DE, 4 = EF.
   */
  uint32_t segment;
} CmProfileSample;

/**
 * Deformed meridian point, m.
 */
typedef struct {
  double psi;
  double rho;
  double eta;
  uint32_t segment;
} CmShapePoint;

/**
 * One sweep point; unconverged points carry NaN values.
 */
typedef struct {
  double psi_b;
  double force_n;
  double deformation_m;
  double pressure_pa;
  bool converged;
} CmCurvePoint;

/**
 * Phase markers in s, forces in mN.
 */
typedef struct {
  double t_contact;
  double t_puncture;
  double t_relax_end;
  double t_retract;
  double peak_force;
} CmMarkers;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Length in bytes of the last error message on this thread, excluding the NUL.
 */
size_t cm_last_error_length(void);

/**
 * Copies the last error message (NUL-terminated, truncated to `cap`) and
 * returns the number of bytes the full message needs including the NUL.
 *
 * # Safety
 * `buf` must be null or point to `cap` writable bytes.
 */
size_t cm_last_error_message(char *buf, size_t cap);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cm_version(void);

/**
 * Elastic coefficient `C1` (Pa) of a preset at velocity `v` (mm/s) and acceleration `a` (mm/s^2).
 *
 * # Safety
 * `out` must be a valid pointer.
 */
CmStatus cm_elastic_coefficient(CmPreset preset, double v, double a, double *out);

/**
 * Default setup: 500 um cell, 3 um membrane, 40 um needle, simulation preset, 1 mm/s.
 *
 * # Safety
 * `out` must be a valid pointer; the handle is released with [`cm_setup_free`].
 */
CmStatus cm_setup_new_default(CmSetup **out);

/**
 * Setup from a TOML configuration document (same format as the CLI).
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
CmStatus cm_setup_from_toml(const char *toml, CmSetup **out);

/**
 * Changes the injection velocity (mm/s) and acceleration (mm/s^2).
 *
 * # Safety
 * `setup` must be a live handle.
 */
CmStatus cm_setup_set_speed(CmSetup *setup, double v, double a);

/**
 * # Safety
 * `setup` must be null or a handle from this library, released once.
 */
void cm_setup_free(CmSetup *setup);

/**
 * Solves the equilibrium at contact angle `psi_b` (rad).
 *
 * # Safety
 * `setup` must be a live handle and `out` a valid pointer; the solution is
 * released with [`cm_solution_free`].
 */
CmStatus cm_solve(const CmSetup *setup, double psi_b, CmSolution **out);

/**
 * # Safety
 * `solution` must be null or a handle from this library, released once.
 */
void cm_solution_free(CmSolution *solution);

/**
 * # Safety
 * `solution` must be a live handle and `out` a valid pointer.
 */
CmStatus cm_solution_summary(const CmSolution *solution, CmSummary *out);

/**
 * Tension profile. Call with `buf = NULL, cap = 0` to query the length.
 *
 * # Safety
 * `solution` must be a live handle, `buf` null or `cap` writable items, `len` valid.
 */
CmStatus cm_solution_profile(const CmSolution *solution,
                             CmProfileSample *buf,
                             size_t cap,
                             size_t *len);

/**
 * Deformed meridian. Call with `buf = NULL, cap = 0` to query the length.
 *
 * # Safety
 * As for [`cm_solution_profile`].
 */
CmStatus cm_solution_shape(const CmSolution *solution, CmShapePoint *buf, size_t cap, size_t *len);

/**
 * Sweeps the strictly increasing `grid` (rad) and writes one point per angle into `out`.
 *
 * # Safety
 * `grid` and `out` must each hold `n` items; `setup` must be a live handle.
 */
CmStatus cm_curve(const CmSetup *setup, const double *grid, size_t n, CmCurvePoint *out);

/**
 * Force (N) and contact angle (rad) at deformation `d` (m).
 *
 * # Safety
 * `setup` must be a live handle; `force` and `psi_b` valid pointers.
 */
CmStatus cm_force_at_deformation(const CmSetup *setup, double d, double *force, double *psi_b);

/**
 * Elastic coefficient (Pa) that best fits `n` measured points (m, N), searched in `[lo, hi]` Pa.
 *
 * # Safety
 * `deformation` and `force` must hold `n` items; `setup` live; `c1` valid.
 */
CmStatus cm_calibrate_c1(const CmSetup *setup,
                         const double *deformation,
                         const double *force,
                         size_t n,
                         double lo,
                         double hi,
                         double *c1);

/**
 * Detects injection phases in a force trace (s, mN). A positive `cutoff_hz`
 * applies the zero-phase low-pass first.
 *
 * # Safety
 * `time` and `force` must hold `n` items; `out` valid.
 */
CmStatus cm_detect_phases(const double *time,
                          const double *force,
                          size_t n,
                          double cutoff_hz,
                          double noise_window_s,
                          CmMarkers *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CELLMECH_H */
