/* C interface to the dualprune dataset-pruning engine. */

#ifndef DUALPRUNE_H
#define DUALPRUNE_H

/* Generated by cbindgen from dualprune-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of a dualprune call. Nonzero values match the CLI's exit codes.
 */
typedef enum DpStatus {
  DP_STATUS_OK = 0,
  /**
   * An argument or input value violates a precondition.
   */
  DP_STATUS_INVALID_ARGUMENT = 1,
  /**
   * File I/O failed or a file's contents are malformed.
   */
  DP_STATUS_IO_ERROR = 2,
  /**
   * A computation left its mathematical domain.
   */
  DP_STATUS_DOMAIN_ERROR = 3,
  /**
   * A required pointer argument was NULL (or a string was not UTF-8).
   */
  DP_STATUS_NULL_POINTER = 4,
} DpStatus;

/**
 * Subset-selection strategy, mirroring the CLI's `--strategy` values.
 */
typedef enum DpStrategy {
  DP_STRATEGY_DUAL = 0,
  DP_STRATEGY_LOSS_ONLY = 1,
  DP_STRATEGY_RANDOM_DYNAMIC = 2,
  DP_STRATEGY_FULL_DATA = 3,
} DpStrategy;

/**
 * Opaque adapter-pair handle.
 */
typedef struct DpAdapterPair DpAdapterPair;

/**
 * Opaque dataset handle.
 */
typedef struct DpDataset DpDataset;

/**
 * Opaque embedding-table handle.
 */
typedef struct DpEmbeddingTable DpEmbeddingTable;

/**
 * Opaque run-report handle.
 */
typedef struct DpRunReport DpRunReport;

/**
 * Experiment configuration. `hidden == 0` selects plain softmax regression.
 */
typedef struct DpRunConfig {
  double selection_ratio;
  uint32_t epochs;
  uint32_t batch_size;
  double learn_rate;
  double lr_decay;
  double lambda;
  double score_learn_rate;
  uint32_t steps_per_epoch;
  uint32_t refresh_every;
  uint32_t warmup_epochs;
  enum DpStrategy strategy;
  uint32_t hidden;
  double init_scale;
  uint64_t rng_seed;
} DpRunConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message for this thread, or NULL when the previous call
 * succeeded. The pointer is invalidated by the next dualprune call on the
 * same thread.
 */
const char *dp_last_error_message(void);

/**
 * Fills `config` with the engine defaults (dual strategy, ratio 0.5,
 * 30 epochs).
 *
 * # Safety
 * `config` must point to writable memory for one `DpRunConfig`.
 */
enum DpStatus dp_run_config_default(struct DpRunConfig *config);

/**
 * Generates separable Gaussian blobs with clean labels.
 *
 * # Safety
 * `out` must point to writable memory for one pointer.
 */
enum DpStatus dp_dataset_generate(uint32_t n_per_class,
                                  uint32_t num_classes,
                                  uint32_t feature_dim,
                                  double class_separation,
                                  double noise_std,
                                  uint64_t rng_seed,
                                  struct DpDataset **out);

/**
 * Loads a DPDS or CSV dataset file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum DpStatus dp_dataset_load(const char *path, struct DpDataset **out);

/**
 * Writes the dataset to `path` (CSV when the extension is `.csv`,
 * DPDS binary otherwise).
 *
 * # Safety
 * `ds` must be a live dataset handle; `path` a NUL-terminated string.
 */
enum DpStatus dp_dataset_save(const struct DpDataset *ds, const char *path);

/**
 * Returns a new dataset with `round(rate · N)` observed labels flipped.
 *
 * # Safety
 * `ds` must be a live dataset handle; `out` must be writable.
 */
enum DpStatus dp_dataset_inject_label_noise(const struct DpDataset *ds,
                                            double rate,
                                            uint64_t rng_seed,
                                            struct DpDataset **out);

/**
 * # Safety
 * `ds` must be NULL or a live dataset handle.
 */
uint32_t dp_dataset_num_samples(const struct DpDataset *ds);

/**
 * # Safety
 * `ds` must be NULL or a live dataset handle.
 */
uint32_t dp_dataset_num_classes(const struct DpDataset *ds);

/**
 * # Safety
 * `ds` must be NULL or a live dataset handle.
 */
uint32_t dp_dataset_feature_dim(const struct DpDataset *ds);

/**
 * Number of samples whose observed label disagrees with ground truth.
 *
 * # Safety
 * `ds` must be NULL or a live dataset handle.
 */
uint32_t dp_dataset_noisy_count(const struct DpDataset *ds);

/**
 * # Safety
 * `ds` must be NULL or an owned dataset handle; it is freed here.
 */
void dp_dataset_free(struct DpDataset *ds);

/**
 * Loads a DPEM image table and DPTE text table.
 *
 * # Safety
 * Both paths must be NUL-terminated strings; `out` must be writable.
 */
enum DpStatus dp_embeddings_load(const char *image_path,
                                 const char *text_path,
                                 uint32_t expected_n,
                                 uint32_t expected_c,
                                 struct DpEmbeddingTable **out);

/**
 * Builds a synthetic anchored embedding table for `ds`.
 *
 * # Safety
 * `ds` must be a live dataset handle; `out` must be writable.
 */
enum DpStatus dp_embeddings_synthesize(const struct DpDataset *ds,
                                       uint32_t embed_dim,
                                       double anchor_scale,
                                       double jitter_std,
                                       uint64_t rng_seed,
                                       struct DpEmbeddingTable **out);

/**
 * Writes the table as a DPEM file plus a DPTE file.
 *
 * # Safety
 * `table` must be a live handle; both paths NUL-terminated strings.
 */
enum DpStatus dp_embeddings_save(const struct DpEmbeddingTable *table,
                                 const char *image_path,
                                 const char *text_path);

/**
 * # Safety
 * `table` must be NULL or a live embedding-table handle.
 */
uint32_t dp_embeddings_dim(const struct DpEmbeddingTable *table);

/**
 * # Safety
 * `table` must be NULL or an owned handle; it is freed here.
 */
void dp_embeddings_free(struct DpEmbeddingTable *table);

/**
 * Identity adapter pair of the given dimension.
 *
 * # Safety
 * `out` must be writable.
 */
enum DpStatus dp_adapters_identity(uint32_t embed_dim, struct DpAdapterPair **out);

/**
 * Fine-tunes adapters on the table's (image, observed-label text) pairs.
 *
 * # Safety
 * `table` and `ds` must be live handles; `out` must be writable.
 */
enum DpStatus dp_adapters_train(const struct DpEmbeddingTable *table,
                                const struct DpDataset *ds,
                                uint32_t epochs,
                                uint32_t batch_size,
                                double learn_rate,
                                uint64_t rng_seed,
                                struct DpAdapterPair **out);

/**
 * Loads a DPAD adapter file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum DpStatus dp_adapters_load(const char *path, struct DpAdapterPair **out);

/**
 * Writes the pair as a DPAD file.
 *
 * # Safety
 * `adapters` must be a live handle; `path` a NUL-terminated string.
 */
enum DpStatus dp_adapters_save(const struct DpAdapterPair *adapters, const char *path);

/**
 * # Safety
 * `adapters` must be NULL or an owned handle; it is freed here.
 */
void dp_adapters_free(struct DpAdapterPair *adapters);

/**
 * Runs the pruning loop and returns a report handle.
 *
 * # Safety
 * `config`, `ds`, `table`, and `adapters` must be live; `out` writable.
 */
enum DpStatus dp_run_experiment(const struct DpRunConfig *config,
                                const struct DpDataset *ds,
                                const struct DpEmbeddingTable *table,
                                const struct DpAdapterPair *adapters,
                                struct DpRunReport **out);

/**
 * # Safety
 * `report` must be NULL or a live report handle.
 */
uint32_t dp_report_num_epochs(const struct DpRunReport *report);

/**
 * Final ground-truth accuracy of the run (0 for NULL).
 *
 * # Safety
 * `report` must be NULL or a live report handle.
 */
double dp_report_final_accuracy(const struct DpRunReport *report);

/**
 * # Safety
 * `report` must be NULL or a live report handle.
 */
uint64_t dp_report_total_forward_passes(const struct DpRunReport *report);

/**
 * # Safety
 * `report` must be NULL or a live report handle.
 */
uint64_t dp_report_total_backward_updates(const struct DpRunReport *report);

/**
 * Fraction of noisy samples selected in the given epoch (0 when out of
 * range).
 *
 * # Safety
 * `report` must be NULL or a live report handle.
 */
double dp_report_epoch_noisy_fraction(const struct DpRunReport *report, uint32_t epoch);

/**
 * Mean selected-noisy fraction over the post-warmup epochs.
 *
 * # Safety
 * `report` must be NULL or a live report handle.
 */
double dp_report_mean_post_warmup_noisy_fraction(const struct DpRunReport *report);

/**
 * Writes the report's JSONL metrics stream to `path`.
 *
 * # Safety
 * `report` must be a live handle; `path` a NUL-terminated string.
 */
enum DpStatus dp_report_write_jsonl(const struct DpRunReport *report, const char *path);

/**
 * # Safety
 * `report` must be NULL or an owned handle; it is freed here.
 */
void dp_report_free(struct DpRunReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DUALPRUNE_H */
