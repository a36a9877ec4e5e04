/* C ABI for the vpmcf volume-preserving mean curvature flow simulator.
 *
 * All objects are opaque handles created and destroyed by this library.
 * Functions return VPMCF_OK (0) on success or a nonzero error code; the
 * codes match the CLI's exit codes. vpmcf_last_error_message() describes the
 * most recent failure of the calling thread.
 */

#ifndef VPMCF_H
#define VPMCF_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#define VPMCF_OK 0
#define VPMCF_ERR_ARGUMENT 1 /* null pointer, bad index, bad encoding */
#define VPMCF_ERR_CONFIG 2   /* invalid configuration or input data */
#define VPMCF_ERR_IO 3       /* file system failure */
#define VPMCF_ERR_SOLVER 4   /* inner solve or flow failure */

/* Opaque parsed run configuration. */
typedef struct VpmcfConfig VpmcfConfig;

/* Opaque finished flow: trajectory plus summary statistics. */
typedef struct VpmcfTrajectory VpmcfTrajectory;

/* Per-step scalars, mirroring one row of steps.csv. */
typedef struct VpmcfStepRecord {
    uint64_t k;                   /* 0-based step index */
    double time;                  /* (k + 1) * h */
    uint64_t volume_cells;        /* cell count of E_{k+1} */
    double perimeter_before;      /* P(E_k) */
    double perimeter_after;       /* P(E_{k+1}) */
    double lambda;                /* Lagrange multiplier, 1/length */
    double dissipation_term;      /* (1/h) int_{sym diff} |dbar| */
    double el_residual_median;    /* Euler-Lagrange residual quantiles */
    double el_residual_p90;
    double sup_boundary_distance; /* sup |dbar_{E_k}| on the new boundary */
    double sup_curvature;
    uint64_t flipped_cells;       /* cells placed by the volume fix-up */
    double inner_gap;             /* primal-dual gap of the accepted solve */
    double epsilon_fix;           /* per-step slack of the dissipation bound */
    double diameter;
    uint64_t components;          /* connected components of E_{k+1} */
} VpmcfStepRecord;

/* Most recent error message of this thread; valid until the next failing
 * call. Never null. */
const char *vpmcf_last_error_message(void);

/* Parse a configuration from its textual `key = value` form. */
int32_t vpmcf_config_parse(const char *text, VpmcfConfig **out);

/* Load a configuration file. */
int32_t vpmcf_config_load(const char *path, VpmcfConfig **out);

void vpmcf_config_free(VpmcfConfig *cfg);

/* Run the configured flow to completion. */
int32_t vpmcf_run(const VpmcfConfig *cfg, VpmcfTrajectory **out);

void vpmcf_trajectory_free(VpmcfTrajectory *t);

/* Number of completed steps. */
uint64_t vpmcf_trajectory_num_steps(const VpmcfTrajectory *t);

/* Grid dimensions of the run. */
int32_t vpmcf_trajectory_dims(const VpmcfTrajectory *t, uint64_t *nx,
                              uint64_t *ny);

/* Copy the scalars of step k (0-based). */
int32_t vpmcf_trajectory_step(const VpmcfTrajectory *t, uint64_t k,
                              VpmcfStepRecord *out);

/* Copy the cell mask of the set at physical time `time` (the last completed
 * step at or before it) into buf as 0/1 bytes, row-major, len >= nx*ny. */
int32_t vpmcf_trajectory_mask_at(const VpmcfTrajectory *t, double time,
                                 uint8_t *buf, uint64_t len);

/* Serialize the run summary as JSON; release the string with
 * vpmcf_string_free(). */
int32_t vpmcf_trajectory_summary_json(const VpmcfTrajectory *t, char **out);

void vpmcf_string_free(char *s);

/* Write steps.csv, summary.json and the mask snapshots to a directory. */
int32_t vpmcf_trajectory_write_outputs(const VpmcfTrajectory *t,
                                       const char *out_dir, int32_t with_pgm);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* VPMCF_H */
