#ifndef PIXEL_RSMA_H
#define PIXEL_RSMA_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PrsStatus {
  PRS_STATUS_OK = 0,
  PRS_STATUS_NULL_POINTER = 1,
  PRS_STATUS_INVALID_ARGUMENT = 2,
  PRS_STATUS_CONFIG = 3,
  PRS_STATUS_PARSE = 4,
  PRS_STATUS_IO = 5,
  PRS_STATUS_MISSING_CODEBOOK = 6,
  /*
   Singular network, zero pattern, rank-deficient channel or solver stall.
   */
  PRS_STATUS_NUMERICAL = 7,
  PRS_STATUS_DIMENSION_MISMATCH = 8,
  PRS_STATUS_PANIC = 9,
} PrsStatus;

/*
 Pixel antenna with its pattern basis and coder table.
 */
typedef struct PrsAntenna PrsAntenna;

typedef struct PrsCodebook PrsCodebook;

typedef struct PrsComplex {
  double re;
  double im;
} PrsComplex;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread; empty after a success.
 The pointer stays valid until the next call on the same thread.
 */
const char *prs_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *prs_version(void);

/*
 Loads an antenna data file.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PrsStatus prs_antenna_load(const char *path, struct PrsAntenna **out);

/*
 Synthesizes a random passive antenna with `q` switches and `n_spatial`
 spatial samples from `seed`, identical to the one the CLI builds.

 # Safety
 `out` must be a valid pointer.
 */
enum PrsStatus prs_antenna_synthesize(size_t q,
                                      size_t n_spatial,
                                      uint64_t seed,
                                      struct PrsAntenna **out);

/*
 Writes the antenna's network and patterns to an antenna data file.

 # Safety
 `antenna` must come from this library; `path` must be NUL-terminated.
 */
enum PrsStatus prs_antenna_save(const struct PrsAntenna *antenna, const char *path);

/*
 # Safety
 `antenna` must come from this library and not be used afterwards. Null is ignored.
 */
void prs_antenna_free(struct PrsAntenna *antenna);

/*
 Number of RF switches `Q`, or 0 for a null handle.

 # Safety
 `antenna` must be null or come from this library.
 */
size_t prs_antenna_num_switches(const struct PrsAntenna *antenna);

/*
 Rank `r` of the pattern basis (length of a pattern coder), or 0 for a null handle.

 # Safety
 `antenna` must be null or come from this library.
 */
size_t prs_antenna_rank(const struct PrsAntenna *antenna);

/*
 Unit-norm pattern coder of the binary coder `bits` (one byte per switch,
 0 = closed, 1 = open). Writes `rank` entries to `out`.

 # Safety
 `bits` must hold `n_bits` bytes and `out` must hold `out_len` entries.
 */
enum PrsStatus prs_antenna_pattern_coder(const struct PrsAntenna *antenna,
                                         const uint8_t *bits,
                                         size_t n_bits,
                                         struct PrsComplex *out,
                                         size_t out_len);

/*
 Port currents `[i_A, i_1..i_Q]` for the coder `bits` driven by antenna
 current `i_a`. Writes `Q + 1` entries to `out`.

 # Safety
 `bits` must hold `n_bits` bytes and `out` must hold `out_len` entries.
 */
enum PrsStatus prs_antenna_port_currents(const struct PrsAntenna *antenna,
                                         const uint8_t *bits,
                                         size_t n_bits,
                                         struct PrsComplex i_a,
                                         struct PrsComplex *out,
                                         size_t out_len);

/*
 Loads a codebook file.

 # Safety
 `path` must be NUL-terminated and `out` a valid pointer.
 */
enum PrsStatus prs_codebook_load(const char *path, struct PrsCodebook **out);

/*
 Writes a codebook file.

 # Safety
 `codebook` must come from this library; `path` must be NUL-terminated.
 */
enum PrsStatus prs_codebook_save(const struct PrsCodebook *codebook, const char *path);

/*
 # Safety
 `codebook` must come from this library and not be used afterwards. Null is ignored.
 */
void prs_codebook_free(struct PrsCodebook *codebook);

/*
 Number of codewords `M`, or 0 for a null handle.

 # Safety
 `codebook` must be null or come from this library.
 */
size_t prs_codebook_len(const struct PrsCodebook *codebook);

/*
 Codeword length `Q`, or 0 for a null handle.

 # Safety
 `codebook` must be null or come from this library.
 */
size_t prs_codebook_num_switches(const struct PrsCodebook *codebook);

/*
 Copies codeword `index` into `out` as one byte per switch (1 = open).

 # Safety
 `out` must hold `out_len` bytes.
 */
enum PrsStatus prs_codebook_get(const struct PrsCodebook *codebook,
                                size_t index,
                                uint8_t *out,
                                size_t out_len);

/*
 Common and private SINR of `user` for the coded channel row `h`
 (`n_tx` entries) and precoder `p` (`n_tx x (n_users + 1)`, column 0 is
 the common stream).

 # Safety
 `h` must hold `n_tx` entries, `p` must hold `n_tx * (n_users + 1)`
 entries and the output pointers must be valid.
 */
enum PrsStatus prs_sinr(const struct PrsComplex *h,
                        const struct PrsComplex *p,
                        size_t n_tx,
                        size_t n_users,
                        size_t user,
                        double sigma2,
                        double *common,
                        double *private_);

/*
 Runs the experiment described by the config file and writes the results CSV.

 # Safety
 Both paths must be NUL-terminated strings.
 */
enum PrsStatus prs_run_experiment(const char *config_path, const char *out_csv);

/*
 Trains a codebook as configured, saves it to `out_path` and returns it
 through `out` when `out` is non-null.

 # Safety
 Both paths must be NUL-terminated strings; `out` must be null or valid.
 */
enum PrsStatus prs_train_codebook(const char *config_path,
                                  const char *out_path,
                                  struct PrsCodebook **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PIXEL_RSMA_H */
