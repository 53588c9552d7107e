#ifndef COVSTEER_H
#define COVSTEER_H

#include <stddef.h>
#include <stdint.h>

#if defined(COVSTEER_BUILDING_LIBRARY)
#define CS_API __attribute__((visibility("default")))
#else
#define CS_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum cs_status {
  CS_OK = 0,
  CS_ERR_INVALID_ARGUMENT = 1,
  CS_ERR_SCHEMA = 2,
  CS_ERR_DIMENSION = 3,
  CS_ERR_NOT_POSITIVE_DEFINITE = 4,
  CS_ERR_NOT_CONTROLLABLE = 5,
  CS_ERR_INFEASIBLE = 6,
  CS_ERR_NOT_ADMISSIBLE = 7,
  CS_ERR_NOT_HURWITZ = 8,
  CS_ERR_DIGEST_MISMATCH = 9,
  CS_ERR_NUMERICAL = 10, /* no convergence, iteration limit, Riccati escape, ... */
  CS_ERR_INTERNAL = 11
} cs_status;

typedef enum cs_method { CS_METHOD_AUTO = 0, CS_METHOD_SDP = 1, CS_METHOD_SCHRODINGER = 2 } cs_method;

typedef struct cs_model cs_model;
typedef struct cs_gaussian cs_gaussian;
typedef struct cs_matrix cs_matrix;
typedef struct cs_plan cs_plan;
typedef struct cs_policy cs_policy;
typedef struct cs_lqr cs_lqr;
typedef struct cs_sim cs_sim;

/* Message for the last failing call on this thread; never NULL. */
CS_API const char* cs_last_error(void);
CS_API const char* cs_status_name(cs_status s);
CS_API const char* cs_version(void);

/* Strings returned through char** are owned by the caller. */
CS_API void cs_string_free(char* s);

/* Warnings raised while loading (e.g. symmetrized input), one per line.
   Cleared by every load call. */
CS_API const char* cs_last_warnings(void);

/* Hex SHA-256 of a file's bytes. */
CS_API cs_status cs_file_digest(const char* path, char** hex_out);

CS_API cs_status cs_model_load(const char* path, cs_model** out);
CS_API cs_status cs_model_from_json(const char* json, cs_model** out);
CS_API void cs_model_free(cs_model* m);
CS_API size_t cs_model_states(const cs_model* m);
CS_API size_t cs_model_inputs(const cs_model* m);
CS_API cs_status cs_model_digest(const cs_model* m, char** hex_out);

/* Covariance file {"<key>": [[..]], "mean": [..] optional}. */
CS_API cs_status cs_gaussian_load(const char* path, const char* key, cs_gaussian** out);
CS_API cs_status cs_gaussian_from_json(const char* json, const char* key, cs_gaussian** out);
CS_API void cs_gaussian_free(cs_gaussian* g);

/* Symmetric matrix file {"<key>": [[..]]} (terminal weights). */
CS_API cs_status cs_matrix_load(const char* path, const char* key, cs_matrix** out);
CS_API void cs_matrix_free(cs_matrix* m);

/* Structural checks as a JSON object. sigma may be NULL. */
CS_API cs_status cs_check(const cs_model* m, const cs_gaussian* sigma, char** report_json);

CS_API cs_status cs_steer(const cs_model* m, const cs_gaussian* initial, const cs_gaussian* terminal,
                          double horizon, int steps, cs_method method, cs_plan** out);
CS_API cs_status cs_plan_load(const char* path, cs_plan** out);
CS_API cs_status cs_plan_save(const cs_plan* p, const char* path);
CS_API cs_status cs_plan_summary(const cs_plan* p, char** summary_json);
CS_API cs_status cs_plan_digest(const cs_plan* p, char** hex_out);
CS_API void cs_plan_free(cs_plan* p);

/* epsilon < 0 means no relaxation. A non-Hurwitz policy is returned with
   CS_OK; inspect "hurwitz" in the summary. */
CS_API cs_status cs_stationary(const cs_model* m, const cs_gaussian* sigma, double epsilon, cs_policy** out);
CS_API cs_status cs_policy_load(const char* path, cs_policy** out);
CS_API cs_status cs_policy_save(const cs_policy* p, const char* path);
CS_API cs_status cs_policy_summary(const cs_policy* p, char** summary_json);
CS_API cs_status cs_policy_digest(const cs_policy* p, char** hex_out);
CS_API int cs_policy_hurwitz(const cs_policy* p);
CS_API void cs_policy_free(cs_policy* p);

CS_API cs_status cs_lqr_solve(const cs_model* m, const cs_gaussian* sigma0, const cs_matrix* terminal_weight,
                              double horizon, int steps, cs_lqr** out);
CS_API cs_status cs_lqr_save(const cs_lqr* l, const char* path);
CS_API cs_status cs_lqr_summary(const cs_lqr* l, char** summary_json);
CS_API void cs_lqr_free(cs_lqr* l);

typedef struct cs_sim_config {
  int paths;
  uint64_t seed;
  int substeps;
  int threads;      /* 0: available parallelism */
  int retain_paths; /* sample paths kept for the trajectory file */
} cs_sim_config;

CS_API cs_sim_config cs_sim_config_default(void);

/* The plan must belong to the model unless force is nonzero
   (CS_ERR_DIGEST_MISMATCH otherwise). */
CS_API cs_status cs_simulate_plan(const cs_model* m, const cs_plan* p, const cs_sim_config* cfg, int force,
                                  cs_sim** out);
/* Starts from N(0, Sigma) of the policy. */
CS_API cs_status cs_simulate_policy(const cs_model* m, const cs_policy* p, double horizon, int steps,
                                    const cs_sim_config* cfg, int force, cs_sim** out);
CS_API cs_status cs_sim_write_traj(const cs_sim* s, const char* path, double t_offset);
CS_API cs_status cs_sim_write_stats(const cs_sim* s, const char* path, double t_offset);
CS_API cs_status cs_sim_summary(const cs_sim* s, char** summary_json);
CS_API void cs_sim_free(cs_sim* s);

#ifdef __cplusplus
}
#endif

#endif
