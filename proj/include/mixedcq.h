/* C interface to the mixed constraint analysis library.
 *
 * All functions return MCQ_OK on success; on failure they return a status
 * code and leave a message readable through mcq_last_error() (thread local).
 * Strings returned through char** are heap-allocated UTF-8 JSON and must be
 * released with mcq_string_free().  Handles are opaque and freed with their
 * matching *_free call.  Option strings are JSON objects; pass NULL or "{}"
 * for defaults.
 */
#ifndef MIXEDCQ_H
#define MIXEDCQ_H

#ifdef __cplusplus
extern "C" {
#endif

typedef struct mcq_problem mcq_problem;
typedef struct mcq_trajectory mcq_trajectory;

typedef enum mcq_status {
  MCQ_OK = 0,
  MCQ_ERR_PARSE = 1,    /* expression or JSON syntax error */
  MCQ_ERR_VALIDATE = 2, /* schema or invariant violation */
  MCQ_ERR_DOMAIN = 3,   /* arithmetic domain error */
  MCQ_ERR_NUMERIC = 4,  /* numerical procedure failed */
  MCQ_ERR_IO = 5,       /* file not readable/writable */
  MCQ_ERR_BADARG = 6    /* null handle or malformed argument */
} mcq_status;

const char* mcq_last_error(void);
const char* mcq_version(void);
void mcq_string_free(char* s);

/* ---- problem and trajectory handles ---- */

mcq_status mcq_problem_from_json(const char* json_text, mcq_problem** out);
mcq_status mcq_problem_from_file(const char* path, mcq_problem** out);
mcq_status mcq_problem_to_json(const mcq_problem* problem, char** out_json);
void mcq_problem_free(mcq_problem* problem);

mcq_status mcq_trajectory_from_json(const mcq_problem* problem, const char* json_text,
                                    mcq_trajectory** out);
mcq_status mcq_trajectory_from_file(const mcq_problem* problem, const char* path,
                                    mcq_trajectory** out);
mcq_status mcq_trajectory_to_json(const mcq_trajectory* traj, char** out_json);
void mcq_trajectory_free(mcq_trajectory* traj);

/* ---- analysis entry points ---- */

/* Constraint-qualification report at a point.  point_json is
 * {"t": 0.0, "x": [...], "u": [...]}; NULL means the origin.  Options:
 * eps_act, lp_tol, radius, samples, seed, neighborhood (bool).  The report
 * carries one verdict per kind plus the structural-calmness verdict and the
 * velocity-map pseudo-Lipschitz certificate. */
mcq_status mcq_analyze_cq(const mcq_problem* problem, const char* point_json,
                          const char* opts_json, char** out_report);

/* Forward-Euler transcription + augmented-Lagrangian solve.  Options: tol,
 * max_outer, max_inner, penalty_init, penalty_growth.  out_converged: 1 on
 * convergence, 0 on best effort. */
mcq_status mcq_solve(const mcq_problem* problem, int grid_segments, const char* opts_json,
                     mcq_trajectory** out_traj, char** out_report, int* out_converged);

/* Necessary-condition certificate for a candidate trajectory.  Options:
 * eps_act, traj_tol, algebraic_tol, weier_tol, control_window, control_grid,
 * cq_stride, seed.  out_pass: 1 iff every clause passes. */
mcq_status mcq_verify(const mcq_problem* problem, const mcq_trajectory* traj,
                      const char* opts_json, char** out_certificate, int* out_pass);

/* Velocity-map estimators along a trajectory: bounded-slope constant and
 * margin, tempered-growth probe, pseudo-Lipschitz modulus near t0, and the
 * cluster-point list.  Options: eps, lambda_frac, samples, seed, u_window,
 * radius_const. */
mcq_status mcq_estimate_setmap(const mcq_problem* problem, const mcq_trajectory* traj,
                               const char* opts_json, char** out_report);

/* Seeded implication-chain audit over random smooth instances.
 * out_violations receives the number of broken implications. */
mcq_status mcq_audit(unsigned long long seed, int count, char** out_report,
                     int* out_violations);

#ifdef __cplusplus
}
#endif

#endif /* MIXEDCQ_H */
