#ifndef NLSESCAT_H
#define NLSESCAT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Direction of incidence.
#define NLS_LEFT_TO_RIGHT 0

#define NLS_RIGHT_TO_LEFT 1

typedef enum NlsStatus {
  NLS_STATUS_OK = 0,
  NLS_STATUS_NULL_POINTER = 1,
  NLS_STATUS_INVALID_ARGUMENT = 2,
  NLS_STATUS_NEGATIVE_RADICAND = 3,
  NLS_STATUS_DOMAIN = 4,
  NLS_STATUS_INTEGRATION_FAILED = 5,
  NLS_STATUS_NON_FINITE_STATE = 6,
  NLS_STATUS_CLOSED_INCOMING = 7,
  NLS_STATUS_DEGENERATE_AMPLITUDE = 8,
  NLS_STATUS_NO_RESONANCE = 9,
  NLS_STATUS_IO = 10,
  NLS_STATUS_PANIC = 99,
} NlsStatus;

// Opaque potential handle.
typedef struct NlsPotential NlsPotential;

typedef struct NlsParams {
  double mass;
  double hbar;
  double g;
  double mu;
} NlsParams;

typedef struct NlsScatterResult {
  double transmission;
  // Upstream reflected-to-incoming ratio; zero on resonance.
  double reflection;
  double k_in;
  double k_out;
  double amplitude_in_re;
  double amplitude_in_im;
  double phase;
  double current;
} NlsScatterResult;

typedef struct NlsResonance {
  double mu;
  double transmission;
  double reflection;
  uint64_t evaluations;
} NlsResonance;

// Transmissions of the full potential and its halves. Entries that failed
// are NaN with the reason in the matching `status` slot, ordered
// full LR, full RL, left LR, left RL, right LR, right RL.
typedef struct NlsSplitReport {
  double cut;
  double mu;
  double transmission[6];
  enum NlsStatus status[6];
  // `|T_R(→) − T_L(←)|`, NaN if either failed.
  double r1;
  // `|T_L(→) − T_R(←)|`, NaN if either failed.
  double r2;
} NlsSplitReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread. The pointer stays valid until
// the next failing call on the same thread.
const char *nls_last_error(void);

// Library version as a static NUL-terminated string.
const char *nls_version(void);

enum NlsStatus nls_potential_rectangular_well(double depth,
                                              double half_width,
                                              struct NlsPotential **out);

enum NlsStatus nls_potential_double_gaussian(double height,
                                             double offset,
                                             double width,
                                             struct NlsPotential **out);

// Linear interpolation through `n` samples with increasing `xs`.
//
// # Safety
// `xs` and `vs` must point to `n` readable doubles.
enum NlsStatus nls_potential_tabulated(const double *xs,
                                       const double *vs,
                                       uintptr_t n,
                                       struct NlsPotential **out);

// Splits at `cut` into the parts left and right of it. Both outputs are new
// handles owned by the caller.
//
// # Safety
// `pot` must be a live handle; `left` and `right` must be writable.
enum NlsStatus nls_potential_split(const struct NlsPotential *pot,
                                   double cut,
                                   struct NlsPotential **left,
                                   struct NlsPotential **right);

// `V(x)`, or NaN for a null handle.
//
// # Safety
// `pot` must be null or a live handle.
double nls_potential_eval(const struct NlsPotential *pot, double x);

// # Safety
// `pot` must be null or a handle not yet freed.
void nls_potential_free(struct NlsPotential *pot);

// Fixed-output scattering solve with outgoing amplitude `c`.
//
// # Safety
// `pot` must be a live handle; `p` readable; `out` writable.
enum NlsStatus nls_solve_transmission(const struct NlsPotential *pot,
                                      const struct NlsParams *p,
                                      double c_re,
                                      double c_im,
                                      int32_t dir,
                                      struct NlsScatterResult *out);

// Unit-transmission point in `[lo, hi]`; `p->mu` is ignored.
//
// # Safety
// `pot` must be a live handle; `p` readable; `out` writable.
enum NlsStatus nls_find_resonance(const struct NlsPotential *pot,
                                  const struct NlsParams *p,
                                  double lo,
                                  double hi,
                                  double c_re,
                                  double c_im,
                                  struct NlsResonance *out);

// Full and half-potential transmissions for one cut at `p->mu`. Individual
// solve failures are reported per entry; the call itself fails only on bad
// arguments.
//
// # Safety
// `pot` must be a live handle; `p` readable; `out` writable.
enum NlsStatus nls_split_check(const struct NlsPotential *pot,
                               const struct NlsParams *p,
                               double cut,
                               double c_re,
                               double c_im,
                               struct NlsSplitReport *out);

// Closed-form linear transmission of a rectangular well.
//
// # Safety
// `out` must be writable.
enum NlsStatus nls_rect_well_transmission(double energy,
                                          double depth,
                                          double half_width,
                                          double mass,
                                          double hbar,
                                          double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NLSESCAT_H */
