#ifndef PP_REPARAM_H
#define PP_REPARAM_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Covariate density families.
typedef enum PprDensityKind {
  // Exponential with rate `a`.
  PPR_DENSITY_KIND_EXPONENTIAL = 0,
  // Normal with mean `a` and standard deviation `b`.
  PPR_DENSITY_KIND_NORMAL = 1,
  // Uniform on `[a, b]`.
  PPR_DENSITY_KIND_UNIFORM = 2,
  // Kernel estimate of the supplied covariate values.
  PPR_DENSITY_KIND_KDE = 3,
} PprDensityKind;

// Result codes.
typedef enum PprStatus {
  PPR_STATUS_OK = 0,
  PPR_STATUS_NULL_POINTER = 1,
  PPR_STATUS_INVALID_ARGUMENT = 2,
  PPR_STATUS_DOMAIN = 3,
  PPR_STATUS_NUMERICAL = 4,
  PPR_STATUS_QUADRATURE = 5,
  PPR_STATUS_SELECTION = 6,
  PPR_STATUS_DIAGNOSTIC = 7,
  PPR_STATUS_DATA = 8,
  PPR_STATUS_CONFIG = 9,
  PPR_STATUS_IO = 10,
  PPR_STATUS_PANIC = 11,
} PprStatus;

// Posterior samples.
typedef struct PprChain PprChain;

// Exceedance data with its covariate density, if any.
typedef struct PprData PprData;

typedef struct PprDensitySpec {
  enum PprDensityKind kind;
  double a;
  double b;
} PprDensitySpec;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread; empty if none. The pointer is
// valid until the next failing call on the same thread.
const char *ppr_last_error(void);

// Stationary data: `n` exceedance values above `u` over `n_years` years.
//
// # Safety
// `values` must point to `n` doubles and `out` to writable storage.
enum PprStatus ppr_data_new(double u,
                            const double *values,
                            size_t n,
                            double n_years,
                            struct PprData **out_data);

// Covariate-in-location data. `covariates` are raw values for each exceedance;
// they are centred at the mean of the covariate density.
//
// # Safety
// `values` and `covariates` must point to `n` doubles; `density` and `out_data` must be valid.
enum PprStatus ppr_data_new_covariate(double u,
                                      const double *values,
                                      const double *covariates,
                                      size_t n,
                                      double n_years,
                                      const struct PprDensitySpec *density,
                                      struct PprData **out_data);

// # Safety
// `data` must come from a `ppr_data_new*` call and not be used afterwards.
void ppr_data_free(struct PprData *data);

// Number of exceedances.
//
// # Safety
// Pointers must be valid.
enum PprStatus ppr_data_len(const struct PprData *data, size_t *out_len);

// Two-step Halley approximation of the lower orthogonality root.
//
// # Safety
// `out_m` must be valid.
enum PprStatus ppr_halley_m1(double xi, double r, double *out_m);

// Halley approximation of the upper orthogonality root.
//
// # Safety
// `out_m` must be valid.
enum PprStatus ppr_halley_m2(double xi, double r, double *out_m);

// Numerical block-count selection with the automatic policy. For covariate
// data `m1` and `m2` are NaN and `chosen` is the zero-correlation root.
//
// # Safety
// Pointers must be valid; `out_m1` and `out_m2` may be null.
enum PprStatus ppr_select_m(const struct PprData *data,
                            double *out_m1,
                            double *out_m2,
                            double *out_chosen);

// Poisson process log-likelihood at `params` (μ, σ, ξ) or (μ⁽⁰⁾, μ⁽¹⁾, σ, ξ), block count `m`.
//
// # Safety
// `params` must point to `dim` doubles; other pointers must be valid.
enum PprStatus ppr_log_likelihood(const struct PprData *data,
                                  const double *params,
                                  size_t dim,
                                  double m,
                                  double *out_value);

// Move parameters of length 3 or 4 from block count `m` to `k`.
//
// # Safety
// `params` and `out_params` must point to `dim` doubles.
enum PprStatus ppr_transform(const double *params,
                             size_t dim,
                             double m,
                             double k,
                             double *out_params);

// Expected information at `params`, row-major `dim × dim`, with the
// observed exceedance count as rate.
//
// # Safety
// `params` must point to `dim` doubles and `out_matrix` to `dim * dim`.
enum PprStatus ppr_fisher_matrix(const struct PprData *data,
                                 const double *params,
                                 size_t dim,
                                 double m,
                                 double *out_matrix);

// Run one random-walk Metropolis chain at block count `m` under the flat
// prior on the `n_years` parameterisation. `init` may be null to start at
// the posterior mode. Proposal scales come from the information at the start.
//
// # Safety
// `init` must be null or point to the model dimension; `out_chain` must be valid.
enum PprStatus ppr_chain_run(const struct PprData *data,
                             double m,
                             const double *init,
                             size_t n_iter,
                             size_t burn_in,
                             uint64_t seed,
                             struct PprChain **out_chain);

// # Safety
// `chain` must come from this library and not be used afterwards.
void ppr_chain_free(struct PprChain *chain);

// Number of stored (post-burn-in) samples.
//
// # Safety
// Pointers must be valid.
enum PprStatus ppr_chain_rows(const struct PprChain *chain, size_t *out_rows);

// Number of parameters per sample.
//
// # Safety
// Pointers must be valid.
enum PprStatus ppr_chain_dim(const struct PprChain *chain, size_t *out_dim);

// Copy samples row-major into `buffer` of length `len` (rows × dim).
//
// # Safety
// `buffer` must point to `len` writable doubles.
enum PprStatus ppr_chain_copy_samples(const struct PprChain *chain, double *buffer, size_t len);

// Per-parameter acceptance rates into `buffer` of length dim.
//
// # Safety
// `buffer` must point to `len` writable doubles.
enum PprStatus ppr_chain_acceptance(const struct PprChain *chain, double *buffer, size_t len);

// New chain with every sample moved to block count `k`.
//
// # Safety
// Pointers must be valid.
enum PprStatus ppr_chain_back_transform(const struct PprChain *chain,
                                        double k,
                                        struct PprChain **out_chain);

// Per-parameter effective sample size into `buffer` of length dim.
//
// # Safety
// `buffer` must point to `len` writable doubles.
enum PprStatus ppr_chain_ess(const struct PprChain *chain, double *buffer, size_t len);

// `n`-year return level of annual-scale parameters (μ, σ, ξ).
//
// # Safety
// `out_level` must be valid.
enum PprStatus ppr_return_level(double mu, double sigma, double xi, double n, double *out_level);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PP_REPARAM_H */
