//! C interface to `spikegs`.
//!
//! Objects cross the boundary as opaque handles created by `*_read`/`*_load`
//! and released by the matching `*_free`. Every fallible call returns an
//! [`SgsStatus`]; the message for the most recent failure on the calling
//! thread is available from [`sgs_last_error`]. Images are row-major `double`
//! buffers of `width * height` values.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use spikegs::recon::{tfi, tfp, ReconWindow};
use spikegs::sim_net::{sim_infer, SimNetParams};
use spikegs::spike_sim::SpikeStream;
use spikegs::splat::{render, GaussianCloud, Intrinsics, PinholeCamera};
use spikegs::{io, metrics, Error, GrayImage};

/// Bumped whenever a signature or struct layout changes.
pub const SGS_ABI_VERSION: u32 = 1;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SgsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    OutOfBounds = 4,
    Format = 5,
    Config = 6,
    Io = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Spike stream handle.
pub struct SgsStream(SpikeStream);

/// Gaussian cloud handle.
pub struct SgsCloud(GaussianCloud);

/// Mapping-network weights handle.
pub struct SgsSim(SimNetParams<f32>);

/// Pinhole camera. `rotation` is the world-to-camera unit quaternion in
/// `w, x, y, z` order and `translation` the world-to-camera offset; camera
/// axes are x right, y down, z forward.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SgsCamera {
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub near: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Fail(SgsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidArgument(_) => SgsStatus::InvalidArgument,
            Error::DimensionMismatch(_) => SgsStatus::DimensionMismatch,
            Error::OutOfBounds(_) => SgsStatus::OutOfBounds,
            Error::Format { .. } => SgsStatus::Format,
            Error::Config(_) => SgsStatus::Config,
            Error::Io { .. } => SgsStatus::Io,
        };
        Fail(status, e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SgsStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SgsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SgsStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            SgsStatus::Panic
        }
    }
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(SgsStatus::InvalidArgument, "path is not valid UTF-8".into()))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn copy_image(img: &GrayImage, out: *mut f64, out_len: usize) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if out_len < img.len() {
        return Err(Fail(
            SgsStatus::BufferTooSmall,
            format!("output holds {out_len} values, image needs {}", img.len()),
        ));
    }
    ptr::copy_nonoverlapping(img.as_slice().as_ptr(), out, img.len());
    Ok(())
}

unsafe fn image_arg(data: *const f64, width: u32, height: u32, what: &str) -> Result<GrayImage, Fail> {
    if data.is_null() {
        return Err(null(what));
    }
    let n = width as usize * height as usize;
    let v = std::slice::from_raw_parts(data, n).to_vec();
    Ok(GrayImage::from_vec(width as usize, height as usize, v)?)
}

#[no_mangle]
pub extern "C" fn sgs_abi_version() -> u32 {
    SGS_ABI_VERSION
}

/// Message for the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sgs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sgs_stream_read(path: *const c_char, out: *mut *mut SgsStream) -> SgsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let s = io::load_spk(path_arg(path)?)?;
        out.write(Box::into_raw(Box::new(SgsStream(s))));
        Ok(())
    })
}

/// # Safety
/// `stream` must come from [`sgs_stream_read`]; output pointers writable.
#[no_mangle]
pub unsafe extern "C" fn sgs_stream_dims(
    stream: *const SgsStream,
    width: *mut u32,
    height: *mut u32,
    num_readouts: *mut u32,
) -> SgsStatus {
    guard(|| {
        let s = &handle(stream, "stream")?.0;
        write_out(width, s.width() as u32, "width")?;
        write_out(height, s.height() as u32, "height")?;
        write_out(num_readouts, s.num_readouts() as u32, "num_readouts")
    })
}

/// Writes 0 or 1 to `out`.
///
/// # Safety
/// `stream` must come from [`sgs_stream_read`]; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sgs_stream_spike(stream: *const SgsStream, x: u32, y: u32, k: u32, out: *mut u8) -> SgsStatus {
    guard(|| {
        let s = &handle(stream, "stream")?.0;
        let (x, y, k) = (x as usize, y as usize, k as usize);
        if x >= s.width() || y >= s.height() || k >= s.num_readouts() {
            return Err(Fail(
                SgsStatus::OutOfBounds,
                format!(
                    "({x}, {y}, {k}) outside {}x{}x{}",
                    s.width(),
                    s.height(),
                    s.num_readouts()
                ),
            ));
        }
        write_out(out, s.get(x, y, k) as u8, "out")
    })
}

/// # Safety
/// `stream` must come from [`sgs_stream_read`] and not be used afterwards.
/// Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn sgs_stream_free(stream: *mut SgsStream) {
    if !stream.is_null() {
        drop(Box::from_raw(stream));
    }
}

/// Windowed firing rate over the `len` readouts centred on `center`.
///
/// # Safety
/// `stream` must come from [`sgs_stream_read`]; `out` must hold `out_len`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn sgs_tfp(
    stream: *const SgsStream,
    center: u32,
    len: u32,
    out: *mut f64,
    out_len: usize,
) -> SgsStatus {
    guard(|| {
        let s = &handle(stream, "stream")?.0;
        let img = tfp(s, ReconWindow::with_length(center as usize, len as usize)?)?;
        copy_image(&img, out, out_len)
    })
}

/// Inter-spike-interval reconstruction at readout `t`.
///
/// # Safety
/// As for [`sgs_tfp`].
#[no_mangle]
pub unsafe extern "C" fn sgs_tfi(stream: *const SgsStream, t: u32, out: *mut f64, out_len: usize) -> SgsStatus {
    guard(|| {
        let s = &handle(stream, "stream")?.0;
        let img = tfi(s, t as usize)?;
        copy_image(&img, out, out_len)
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sgs_cloud_read(path: *const c_char, out: *mut *mut SgsCloud) -> SgsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let c = io::load_cloud(path_arg(path)?)?;
        out.write(Box::into_raw(Box::new(SgsCloud(c))));
        Ok(())
    })
}

/// # Safety
/// `cloud` must come from [`sgs_cloud_read`]; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sgs_cloud_len(cloud: *const SgsCloud, out: *mut usize) -> SgsStatus {
    guard(|| write_out(out, handle(cloud, "cloud")?.0.len(), "out"))
}

/// # Safety
/// `cloud` must come from [`sgs_cloud_read`] and not be used afterwards.
/// Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn sgs_cloud_free(cloud: *mut SgsCloud) {
    if !cloud.is_null() {
        drop(Box::from_raw(cloud));
    }
}

/// Renders `cloud` into `out`, which must hold `width * height` doubles.
///
/// # Safety
/// `cloud` must come from [`sgs_cloud_read`]; `camera` readable; `out` must
/// hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sgs_cloud_render(
    cloud: *const SgsCloud,
    camera: *const SgsCamera,
    background: f64,
    out: *mut f64,
    out_len: usize,
) -> SgsStatus {
    guard(|| {
        let c = &handle(cloud, "cloud")?.0;
        let cam = handle(camera, "camera")?;
        let [w, x, y, z] = cam.rotation;
        let q = Quaternion::new(w, x, y, z);
        if !(q.norm() > 0.0) || !q.coords.iter().all(|v| v.is_finite()) {
            return Err(Fail(
                SgsStatus::InvalidArgument,
                "camera rotation is not a usable quaternion".into(),
            ));
        }
        let intr = Intrinsics {
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            width: cam.width as usize,
            height: cam.height as usize,
            near: cam.near,
        };
        intr.validate()?;
        let pose = PinholeCamera::new(UnitQuaternion::from_quaternion(q), Vector3::from(cam.translation), intr);
        let img = render(c, &pose, background).image;
        copy_image(&img, out, out_len)
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sgs_sim_load(path: *const c_char, out: *mut *mut SgsSim) -> SgsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = io::load_sim(path_arg(path)?)?;
        out.write(Box::into_raw(Box::new(SgsSim(p))));
        Ok(())
    })
}

/// Mapping-network reconstruction at readout `center`.
///
/// # Safety
/// Handles must come from their loaders; `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sgs_sim_forward(
    sim: *const SgsSim,
    stream: *const SgsStream,
    center: u32,
    out: *mut f64,
    out_len: usize,
) -> SgsStatus {
    guard(|| {
        let p = &handle(sim, "sim")?.0;
        let s = &handle(stream, "stream")?.0;
        let img = sim_infer(p, s, center as usize)?;
        copy_image(&img, out, out_len)
    })
}

/// # Safety
/// `sim` must come from [`sgs_sim_load`] and not be used afterwards. Null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn sgs_sim_free(sim: *mut SgsSim) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// PSNR in dB with peak 1; identical images give +infinity.
///
/// # Safety
/// `a` and `b` must each hold `width * height` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sgs_psnr(a: *const f64, b: *const f64, width: u32, height: u32, out: *mut f64) -> SgsStatus {
    guard(|| {
        let a = image_arg(a, width, height, "a")?;
        let b = image_arg(b, width, height, "b")?;
        write_out(out, metrics::psnr(&a, &b)?, "out")
    })
}

/// # Safety
/// As for [`sgs_psnr`].
#[no_mangle]
pub unsafe extern "C" fn sgs_ssim(a: *const f64, b: *const f64, width: u32, height: u32, out: *mut f64) -> SgsStatus {
    guard(|| {
        let a = image_arg(a, width, height, "a")?;
        let b = image_arg(b, width, height, "b")?;
        write_out(out, metrics::ssim(&a, &b)?, "out")
    })
}
