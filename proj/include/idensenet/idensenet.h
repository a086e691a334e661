/* C interface to the i-DenseNet flow library.
 *
 * Every function returns an idn_status. On failure the message is available
 * from idn_last_error() until the next call on the same thread. Strings
 * returned through char** must be released with idn_string_free().
 * Arrays are row-major with one sample per row.
 */
#ifndef IDENSENET_H
#define IDENSENET_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define IDN_API __declspec(dllexport)
#else
#define IDN_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum idn_status {
  IDN_OK = 0,
  IDN_ERR_INVALID_ARGUMENT = 1,
  IDN_ERR_SHAPE = 2,
  IDN_ERR_CONFIG = 3,
  IDN_ERR_IO = 4,
  /* fixed-point inversion did not reach the tolerance */
  IDN_ERR_CONVERGENCE = 5,
  /* det(I + J_g) <= 0 */
  IDN_ERR_LIPSCHITZ = 6,
  /* non-finite loss or gradient */
  IDN_ERR_NUMERIC = 7,
  IDN_ERR_INTERNAL = 8
} idn_status;

typedef enum idn_estimator_kind { IDN_ESTIMATOR_EXACT = 0, IDN_ESTIMATOR_TRUNCATED = 1, IDN_ESTIMATOR_ROULETTE = 2 } idn_estimator_kind;

typedef struct idn_estimator {
  idn_estimator_kind kind;
  int n_terms;       /* truncated */
  int n_probes;      /* truncated, roulette */
  double geom_p;     /* roulette */
  int n_exact_terms; /* roulette */
} idn_estimator;

typedef struct idn_model idn_model;

IDN_API const char* idn_version(void);
IDN_API const char* idn_last_error(void);
IDN_API const char* idn_status_name(idn_status status);
IDN_API void idn_string_free(char* s);
/* Exact estimator with the library defaults for the stochastic fields. */
IDN_API idn_estimator idn_estimator_default(void);
IDN_API idn_status idn_estimator_parse(const char* name, idn_estimator* out);

/* Model lifecycle. config_json is a run config object; absent keys keep their defaults and
 * NULL or "" means all defaults. */
IDN_API idn_status idn_model_create(const char* config_json, idn_model** out);
IDN_API idn_status idn_model_load(const char* checkpoint_path, idn_model** out);
IDN_API idn_status idn_model_save(idn_model* model, const char* checkpoint_path);
IDN_API void idn_model_free(idn_model* model);
IDN_API idn_status idn_model_dim(const idn_model* model, size_t* out);
IDN_API idn_status idn_model_param_count(idn_model* model, size_t* out);
IDN_API idn_status idn_model_config(const idn_model* model, char** json_out);

/* x: n x dim in, z: n x dim out. */
IDN_API idn_status idn_model_forward(idn_model* model, const double* x, size_t n, double* z);
/* logp: n values. */
IDN_API idn_status idn_model_log_prob(idn_model* model, const double* x, size_t n, const idn_estimator* estimator,
                                      uint64_t seed, double* logp);
IDN_API idn_status idn_model_invert(idn_model* model, const double* z, size_t n, double tol, int max_iter, double* x);
IDN_API idn_status idn_model_sample(idn_model* model, size_t n, uint64_t seed, double tol, int max_iter, double* x);
/* Re-estimate every spectral norm to convergence. */
IDN_API idn_status idn_model_refresh_spectral(idn_model* model);

/* Commands. Reports are JSON objects. */
IDN_API idn_status idn_train(const char* config_json, char** report_json);
/* options_json keys: dataset, n, seed. */
IDN_API idn_status idn_eval(const char* checkpoint_path, const char* options_json, const idn_estimator* estimator,
                            char** report_json);
IDN_API idn_status idn_sample_to_file(const char* checkpoint_path, size_t n, uint64_t seed, double tol, int max_iter,
                                      const char* out_csv, char** report_json);
IDN_API idn_status idn_invert_check(const char* checkpoint_path, size_t n, uint64_t seed, double tol, int max_iter,
                                    char** report_json);
/* options_json keys: xmin, xmax, ymin, ymax, resolution, threshold. Writes <out_prefix>.csv and <out_prefix>.ppm. */
IDN_API idn_status idn_density_grid(const char* checkpoint_path, const char* options_json, const char* out_prefix,
                                    char** report_json);
/* Distance-ratio table as CSV (activation,dim,mean,max). */
IDN_API idn_status idn_analyze(double scale, const size_t* dims, size_t n_dims, size_t n_pairs, uint64_t seed,
                               char** csv_out);
/* Certified Lipschitz constant of an activation, one value per beta. With n_betas = 0 one value
 * is written for the initial beta. */
IDN_API idn_status idn_bound(const char* activation, const double* betas, size_t n_betas, double* out);
/* n x 2 samples from moons, circles or checkerboard. */
IDN_API idn_status idn_sample_toy(const char* dataset, size_t n, uint64_t seed, double* out);

#ifdef __cplusplus
}
#endif

#endif /* IDENSENET_H */
