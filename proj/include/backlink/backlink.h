#ifndef BACKLINK_BACKLINK_H
#define BACKLINK_BACKLINK_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  ifdef BACKLINK_BUILDING
#    define BL_API __declspec(dllexport)
#  else
#    define BL_API __declspec(dllimport)
#  endif
#else
#  define BL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes double as process exit codes. */
typedef enum bl_status {
  BL_OK = 0,
  BL_ERR_VALIDATION = 1,
  BL_ERR_VERIFICATION = 2,
  BL_ERR_IO = 3
} bl_status;

typedef struct bl_experiment bl_experiment;

BL_API const char* bl_version(void);

/* Message of the last failed call on this thread; empty when none. */
BL_API const char* bl_last_error(void);

BL_API bl_status bl_experiment_from_file(const char* path, bl_experiment** out);
BL_API bl_status bl_experiment_from_string(const char* json, bl_experiment** out);
BL_API void bl_experiment_destroy(bl_experiment* exp);

BL_API bl_status bl_set_seed(bl_experiment* exp, uint64_t seed);
BL_API bl_status bl_set_seeds(bl_experiment* exp, size_t seeds);
BL_API bl_status bl_set_out_dir(bl_experiment* exp, const char* dir);
/* "sequential" or "pipeline" */
BL_API bl_status bl_set_mode(bl_experiment* exp, const char* mode);
BL_API bl_status bl_set_staleness(bl_experiment* exp, size_t staleness);
/* "wide" or "standard" */
BL_API bl_status bl_set_precision(bl_experiment* exp, const char* precision);

/* Validation warnings of the last run, newline separated. */
BL_API const char* bl_warnings(const bl_experiment* exp);
/* JSON summary of the last run. */
BL_API const char* bl_summary(const bl_experiment* exp);
/* Output directory the runs write to. */
BL_API const char* bl_out_dir(const bl_experiment* exp);

BL_API bl_status bl_run_train(bl_experiment* exp);
BL_API bl_status bl_run_gradcheck(bl_experiment* exp);
BL_API bl_status bl_run_costmodel(bl_experiment* exp);
BL_API bl_status bl_run_pipesim(bl_experiment* exp);

#ifdef __cplusplus
}
#endif

#endif
