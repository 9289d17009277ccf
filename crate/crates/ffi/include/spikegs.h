#ifndef SPIKEGS_H
#define SPIKEGS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Bumped whenever a signature or struct layout changes.
 */
#define SGS_ABI_VERSION 1

typedef enum SgsStatus {
  SGS_STATUS_OK = 0,
  SGS_STATUS_NULL_POINTER = 1,
  SGS_STATUS_INVALID_ARGUMENT = 2,
  SGS_STATUS_DIMENSION_MISMATCH = 3,
  SGS_STATUS_OUT_OF_BOUNDS = 4,
  SGS_STATUS_FORMAT = 5,
  SGS_STATUS_CONFIG = 6,
  SGS_STATUS_IO = 7,
  SGS_STATUS_BUFFER_TOO_SMALL = 8,
  SGS_STATUS_PANIC = 9,
} SgsStatus;

/*
 Gaussian cloud handle.
 */
typedef struct SgsCloud SgsCloud;

/*
 Mapping-network weights handle.
 */
typedef struct SgsSim SgsSim;

/*
 Spike stream handle.
 */
typedef struct SgsStream SgsStream;

/*
 Pinhole camera. `rotation` is the world-to-camera unit quaternion in
 `w, x, y, z` order and `translation` the world-to-camera offset; camera
 axes are x right, y down, z forward.
 */
typedef struct SgsCamera {
  double rotation[4];
  double translation[3];
  double fx;
  double fy;
  double cx;
  double cy;
  uint32_t width;
  uint32_t height;
  double near;
} SgsCamera;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

uint32_t sgs_abi_version(void);

/*
 Message for the last failed call on this thread; empty if none. The
 pointer stays valid until the next failing call on the same thread.
 */
const char *sgs_last_error(void);

/*
 # Safety
 `path` must be a NUL-terminated string and `out` writable.
 */
enum SgsStatus sgs_stream_read(const char *path, struct SgsStream **out);

/*
 # Safety
 `stream` must come from [`sgs_stream_read`]; output pointers writable.
 */
enum SgsStatus sgs_stream_dims(const struct SgsStream *stream,
                               uint32_t *width,
                               uint32_t *height,
                               uint32_t *num_readouts);

/*
 Writes 0 or 1 to `out`.

 # Safety
 `stream` must come from [`sgs_stream_read`]; `out` writable.
 */
enum SgsStatus sgs_stream_spike(const struct SgsStream *stream,
                                uint32_t x,
                                uint32_t y,
                                uint32_t k,
                                uint8_t *out);

/*
 # Safety
 `stream` must come from [`sgs_stream_read`] and not be used afterwards.
 Null is ignored.
 */
void sgs_stream_free(struct SgsStream *stream);

/*
 Windowed firing rate over the `len` readouts centred on `center`.

 # Safety
 `stream` must come from [`sgs_stream_read`]; `out` must hold `out_len`
 doubles.
 */
enum SgsStatus sgs_tfp(const struct SgsStream *stream,
                       uint32_t center,
                       uint32_t len,
                       double *out,
                       size_t out_len);

/*
 Inter-spike-interval reconstruction at readout `t`.

 # Safety
 As for [`sgs_tfp`].
 */
enum SgsStatus sgs_tfi(const struct SgsStream *stream, uint32_t t, double *out, size_t out_len);

/*
 # Safety
 `path` must be a NUL-terminated string and `out` writable.
 */
enum SgsStatus sgs_cloud_read(const char *path, struct SgsCloud **out);

/*
 # Safety
 `cloud` must come from [`sgs_cloud_read`]; `out` writable.
 */
enum SgsStatus sgs_cloud_len(const struct SgsCloud *cloud, size_t *out);

/*
 # Safety
 `cloud` must come from [`sgs_cloud_read`] and not be used afterwards.
 Null is ignored.
 */
void sgs_cloud_free(struct SgsCloud *cloud);

/*
 Renders `cloud` into `out`, which must hold `width * height` doubles.

 # Safety
 `cloud` must come from [`sgs_cloud_read`]; `camera` readable; `out` must
 hold `out_len` doubles.
 */
enum SgsStatus sgs_cloud_render(const struct SgsCloud *cloud,
                                const struct SgsCamera *camera,
                                double background,
                                double *out,
                                size_t out_len);

/*
 # Safety
 `path` must be a NUL-terminated string and `out` writable.
 */
enum SgsStatus sgs_sim_load(const char *path, struct SgsSim **out);

/*
 Mapping-network reconstruction at readout `center`.

 # Safety
 Handles must come from their loaders; `out` must hold `out_len` doubles.
 */
enum SgsStatus sgs_sim_forward(const struct SgsSim *sim,
                               const struct SgsStream *stream,
                               uint32_t center,
                               double *out,
                               size_t out_len);

/*
 # Safety
 `sim` must come from [`sgs_sim_load`] and not be used afterwards. Null is
 ignored.
 */
void sgs_sim_free(struct SgsSim *sim);

/*
 PSNR in dB with peak 1; identical images give +infinity.

 # Safety
 `a` and `b` must each hold `width * height` doubles; `out` writable.
 */
enum SgsStatus sgs_psnr(const double *a,
                        const double *b,
                        uint32_t width,
                        uint32_t height,
                        double *out);

/*
 # Safety
 As for [`sgs_psnr`].
 */
enum SgsStatus sgs_ssim(const double *a,
                        const double *b,
                        uint32_t width,
                        uint32_t height,
                        double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPIKEGS_H */
