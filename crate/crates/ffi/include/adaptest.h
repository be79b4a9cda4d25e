#ifndef ADAPTEST_H
#define ADAPTEST_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * `0` = `a² p (1 − p)`, `1` = exact 3PL information.
 */
#define AD_INFO_PAPER 0

#define AD_INFO_EXACT_3PL 1

typedef enum AdStatus {
  AD_OK = 0,
  AD_ERR_NULL = 1,
  AD_ERR_INVALID_ARGUMENT = 2,
  AD_ERR_IO = 3,
  AD_ERR_PROTOCOL = 4,
  AD_ERR_BUFFER_TOO_SMALL = 5,
  AD_ERR_PANIC = 6,
} AdStatus;

typedef enum AdSessionStatus {
  AD_SESSION_ACTIVE = 0,
  AD_SESSION_CONVERGED = 1,
  AD_SESSION_EXHAUSTED_MAX = 2,
  AD_SESSION_BANK_EXHAUSTED = 3,
  AD_SESSION_ABORTED = 4,
} AdSessionStatus;

/**
 * Opaque item bank.
 */
typedef struct AdBank AdBank;

/**
 * Opaque adaptive-testing session.
 */
typedef struct AdSession AdSession;

typedef struct AdCatConfig {
  double se_threshold;
  size_t min_items;
  size_t max_items;
  size_t top_k;
  int info_form;
  uint64_t rng_seed;
  size_t quadrature_nodes;
} AdCatConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *ad_version(void);

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *ad_last_error_message(void);

/**
 * # Safety
 * `out` must be null or point to a writable double.
 */
enum AdStatus ad_icc_3pl(double a, double b, double c, double theta, double *out);

/**
 * # Safety
 * `out` must be null or point to a writable double.
 */
enum AdStatus ad_fisher_info(double a, double b, double c, double theta, int form, double *out);

/**
 * Loads a bank JSON file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum AdStatus ad_bank_load(const char *path, struct AdBank **out);

/**
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum AdStatus ad_bank_from_json(const char *json, struct AdBank **out);

/**
 * Number of items in the bank, filtered ones included; 0 for null.
 *
 * # Safety
 * `bank` must be null or a live handle.
 */
size_t ad_bank_len(const struct AdBank *bank);

/**
 * # Safety
 * `bank` must be null or a live handle.
 */
size_t ad_bank_operational_count(const struct AdBank *bank);

/**
 * # Safety
 * `bank` must be null or a handle not freed before. Sessions keep their own
 * reference, so they stay usable.
 */
void ad_bank_free(struct AdBank *bank);

struct AdCatConfig ad_cat_config_default(void);

/**
 * Starts a session. `config` may be null for the defaults and
 * `respondent_id` may be null for the empty id.
 *
 * # Safety
 * Pointers must be null or valid as described; `out` must be writable.
 */
enum AdStatus ad_session_new(const struct AdBank *bank,
                             const struct AdCatConfig *config,
                             const char *respondent_id,
                             struct AdSession **out);

/**
 * Writes the next item id (NUL-terminated) into `buf`. `*has_item` is set to
 * 0 once the session has ended. `*needed` receives the buffer size required,
 * terminator included; with a short buffer the call fails with
 * `AD_ERR_BUFFER_TOO_SMALL` and can be repeated.
 *
 * # Safety
 * `buf` must hold `buf_len` bytes; `needed` may be null.
 */
enum AdStatus ad_session_next_item(struct AdSession *session,
                                   char *buf,
                                   size_t buf_len,
                                   size_t *needed,
                                   int *has_item);

/**
 * Records the response (`correct` nonzero = correct) to the pending item.
 *
 * # Safety
 * `item_id` must be a NUL-terminated string; `status` may be null.
 */
enum AdStatus ad_session_submit(struct AdSession *session,
                                const char *item_id,
                                int correct,
                                enum AdSessionStatus *status);

/**
 * # Safety
 * `session` must be a live handle; `out` must be writable.
 */
enum AdStatus ad_session_theta(struct AdSession *session, double *out);

/**
 * Information-based standard error; infinite before any informative response.
 *
 * # Safety
 * `session` must be a live handle; `out` must be writable.
 */
enum AdStatus ad_session_se(struct AdSession *session, double *out);

/**
 * # Safety
 * `session` must be a live handle; `out` must be writable.
 */
enum AdStatus ad_session_status(struct AdSession *session, enum AdSessionStatus *out);

/**
 * # Safety
 * `session` must be a live handle; `out` must be writable.
 */
enum AdStatus ad_session_n_items(struct AdSession *session, size_t *out);

/**
 * # Safety
 * `session` must be null or a handle not freed before.
 */
void ad_session_free(struct AdSession *session);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADAPTEST_H */
