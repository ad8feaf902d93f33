#ifndef ENGAGE_H
#define ENGAGE_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result codes.
 */
typedef enum EngageStatus {
  ENGAGE_STATUS_OK = 0,
  ENGAGE_STATUS_NULL_POINTER = 1,
  ENGAGE_STATUS_INVALID_ARGUMENT = 2,
  ENGAGE_STATUS_CONFIG_PARSE = 3,
  ENGAGE_STATUS_IO = 4,
  ENGAGE_STATUS_DIMENSION = 5,
  ENGAGE_STATUS_OUT_OF_ORDER = 6,
  ENGAGE_STATUS_INSUFFICIENT_DATA = 7,
  ENGAGE_STATUS_DEGENERATE = 8,
  ENGAGE_STATUS_COMMAND_REJECTED = 9,
  ENGAGE_STATUS_BUFFER_TOO_SMALL = 10,
  ENGAGE_STATUS_PANIC = 11,
} EngageStatus;

/**
 * Parsed and validated session configuration.
 */
typedef struct EngageConfig EngageConfig;

/**
 * A live engine plus the tick being assembled and undelivered events.
 */
typedef struct EngageEngine EngageEngine;

/**
 * Pooled-variance two-sample t-test of equal means.
 */
typedef struct EngageTTest {
  double t;
  double df;
  double p;
} EngageTTest;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message (empty after a success).
 * Reading the message never changes it.
 *
 * # Safety
 * `buf` must hold `cap` bytes or be null; `needed` may be null.
 */
enum EngageStatus engage_last_error(char *buf, size_t cap, size_t *needed);

/**
 * Parses a TOML session configuration.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be writable.
 */
enum EngageStatus engage_config_from_toml(const char *toml, struct EngageConfig **out);

/**
 * Number of participants, instructor first.
 *
 * # Safety
 * `config` must come from [`engage_config_from_toml`].
 */
size_t engage_config_participant_count(const struct EngageConfig *config);

/**
 * # Safety
 * `config` must be null or come from [`engage_config_from_toml`], once.
 */
void engage_config_free(struct EngageConfig *config);

/**
 * Creates an engine. The configuration is copied and may be freed afterwards.
 *
 * # Safety
 * `config` must be valid; `out` must be writable.
 */
enum EngageStatus engage_engine_new(const struct EngageConfig *config,
                                    bool has_presentation,
                                    struct EngageEngine **out);

/**
 * # Safety
 * `engine` must be null or come from [`engage_engine_new`], once.
 */
void engage_engine_free(struct EngageEngine *engine);

/**
 * Starts assembling the tick at frame timestamp `ts`, discarding any tick
 * that was begun but not pushed.
 *
 * # Safety
 * `engine` must be valid.
 */
enum EngageStatus engage_engine_begin_tick(struct EngageEngine *engine, uint64_t ts);

/**
 * Sets the presentation frame (8-bit grayscale, row-major) of the open tick.
 *
 * # Safety
 * `engine` must be valid; `data` must hold `width * height` bytes.
 */
enum EngageStatus engage_engine_set_presentation(struct EngageEngine *engine,
                                                 size_t width,
                                                 size_t height,
                                                 const uint8_t *data);

/**
 * Sets participant `index`'s screen frame in the open tick.
 *
 * # Safety
 * `engine` must be valid; `data` must hold `width * height` bytes.
 */
enum EngageStatus engage_engine_set_screen(struct EngageEngine *engine,
                                           size_t index,
                                           size_t width,
                                           size_t height,
                                           const uint8_t *data);

/**
 * Sets participant `index`'s face record in the open tick. `landmarks` holds
 * 68 (x, y) pairs as 136 doubles, or is null when no face was detected.
 *
 * # Safety
 * `engine` must be valid; `landmarks` must be null or hold 136 doubles.
 */
enum EngageStatus engage_engine_set_face(struct EngageEngine *engine,
                                         size_t index,
                                         const double *landmarks);

/**
 * Processes the open tick. `events_ready` receives the number of score
 * events waiting to be read with [`engage_engine_next_event`].
 *
 * # Safety
 * `engine` must be valid; `events_ready` may be null.
 */
enum EngageStatus engage_engine_push(struct EngageEngine *engine, size_t *events_ready);

/**
 * Closes the session, scoring the open segment.
 *
 * # Safety
 * `engine` must be valid; `events_ready` may be null.
 */
enum EngageStatus engage_engine_finish(struct EngageEngine *engine, size_t *events_ready);

/**
 * Copies the oldest waiting score event as one JSON line and removes it.
 * On `BufferTooSmall` the event stays queued and `needed` gives the size.
 *
 * # Safety
 * `engine` must be valid; `buf` must hold `cap` bytes; `needed` may be null.
 */
enum EngageStatus engage_engine_next_event(struct EngageEngine *engine,
                                           char *buf,
                                           size_t cap,
                                           size_t *needed);

/**
 * Applies a mode command, e.g. `{"mode":"manual","slice":5}`.
 *
 * # Safety
 * `engine` must be valid; `command` must be a NUL-terminated string.
 */
enum EngageStatus engage_engine_command(struct EngageEngine *engine, const char *command);

/**
 * Symmetric chi-square distance between two count histograms of `bins` bins.
 *
 * # Safety
 * `a` and `b` must hold `bins` values; `out` must be writable.
 */
enum EngageStatus engage_chi_square(const uint64_t *a, const uint64_t *b, size_t bins, double *out);

/**
 * # Safety
 * `a` must hold `na` doubles, `b` must hold `nb`; `out` must be writable.
 */
enum EngageStatus engage_t_test(const double *a,
                                size_t na,
                                const double *b,
                                size_t nb,
                                struct EngageTTest *out);

/**
 * F-beta of specificity and negative predictive value; 0 if both are 0.
 */
double engage_f_beta(double specificity, double npv, double beta);

/**
 * Luma of one RGB pixel, rounded to nearest.
 */
uint8_t engage_grayscale(uint8_t r, uint8_t g, uint8_t b);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ENGAGE_H */
