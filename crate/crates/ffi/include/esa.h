/* C interface for the esa annotation engine.
 *
 * Every handle returned through an out-parameter is owned by the caller and
 * must be released with the matching esa_*_free. Fallible functions return
 * ESA_OK or an error code; esa_last_error() then holds a message that stays
 * valid until the next failing call on the same thread. Passing a null
 * pointer where data is required yields ESA_ERR_INVARIANT.
 */

#ifndef ESA_H
#define ESA_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#define ESA_OK 0
#define ESA_ERR_CONFIG 2
#define ESA_ERR_IO 3
#define ESA_ERR_INVARIANT 4

typedef struct EsaImage EsaImage;
typedef struct EsaLabels EsaLabels;
typedef struct EsaProbs EsaProbs;
typedef struct EsaRegions EsaRegions;

/* Library version as a static NUL-terminated string. */
const char *esa_version(void);

/* Message of the most recent failing call on this thread; empty before the
 * first failure. */
const char *esa_last_error(void);

/* Releases a string returned by this library. */
void esa_string_free(char *s);

/* RGB images, PPM (P6, maxval 255) on disk. */
int32_t esa_image_read(const char *path, EsaImage **out);
int32_t esa_image_write(const EsaImage *img, const char *path);
int32_t esa_image_shape(const EsaImage *img, uint32_t *height, uint32_t *width);
void esa_image_free(EsaImage *img);

/* Label maps, PGM (P5, maxval 255) on disk; 255 marks unlabeled pixels.
 * classes bounds the valid label values. */
int32_t esa_labels_read(const char *path, uint32_t classes, EsaLabels **out);
int32_t esa_labels_write(const EsaLabels *labels, const char *path);
int32_t esa_labels_shape(const EsaLabels *labels, uint32_t *height, uint32_t *width,
                         uint32_t *classes);
void esa_labels_free(EsaLabels *labels);

/* Per-pixel class probabilities, ESAT tensors on disk. */
int32_t esa_probs_read(const char *path, EsaProbs **out);
int32_t esa_probs_write(const EsaProbs *probs, const char *path);
int32_t esa_probs_shape(const EsaProbs *probs, uint32_t *height, uint32_t *width,
                        uint32_t *channels);
void esa_probs_free(EsaProbs *probs);

/* Region partitions with optional per-region scores, ESAR on disk. */
int32_t esa_regions_read(const char *path, EsaRegions **out);
int32_t esa_regions_write(const EsaRegions *regions, const char *path);
int32_t esa_regions_count(const EsaRegions *regions, uint32_t *count);
void esa_regions_free(EsaRegions *regions);

/* Superpixel segmentation into roughly k compact regions. */
int32_t esa_slic(const EsaImage *img, uint32_t k, double compactness, uint32_t max_iters,
                 double min_region_ratio, EsaRegions **out);

/* Regular partition into cell-by-cell squares, clipped at the borders. */
int32_t esa_grid_regions(uint32_t height, uint32_t width, uint32_t cell, EsaRegions **out);

/* Fills height*width row-major per-pixel entropies. */
int32_t esa_pixel_entropy(const EsaProbs *probs, double *out_values);

/* Fills one score per region. mode is "uncertainty", "impurity" or
 * "product". out_scores must hold esa_regions_count values. */
int32_t esa_acquisition(const EsaProbs *probs, const EsaRegions *regions, const char *mode,
                        double *out_scores);

/* Greedy budgeted selection: the k highest-scoring ids outside the excluded
 * set, descending score, ties to the lower id. Writes at most k ids into
 * out_ids and the actual number into out_count. */
int32_t esa_select_topk(const double *scores, uint32_t count, const uint32_t *excluded,
                        uint32_t excluded_count, uint32_t k, uint32_t *out_ids,
                        uint32_t *out_count);

/* Majority class of a region under the ground truth; one simulated click. */
int32_t esa_oracle_label_region(const EsaLabels *gt, const EsaRegions *regions, uint32_t region,
                                uint8_t *out_label);

/* Mean IoU of a prediction against ground truth, unlabeled pixels skipped. */
int32_t esa_miou(const EsaLabels *gt, const EsaLabels *pred, double *out_miou);

/* Mean cross-entropy of the true-class probabilities over labeled pixels. */
int32_t esa_ce_loss(const EsaProbs *probs, const EsaLabels *labels, double *out_loss);

/* Negative loss over entries whose probability clears tau; nonzero above
 * selects entries greater than tau, zero selects entries below it. */
int32_t esa_negative_loss(const EsaProbs *probs, double tau, int32_t above, double *out_loss);

/* Runs the full annotation loop on in-memory synthetic data. config_json is
 * a flat JSON object of the same dotted keys the CLI accepts; paths.data and
 * paths.out must stay empty or unset since nothing touches the filesystem.
 * On success *out_report receives a JSON run report to release with
 * esa_string_free. */
int32_t esa_run_loop_json(const char *config_json, char **out_report);

#ifdef __cplusplus
}
#endif

#endif /* ESA_H */
