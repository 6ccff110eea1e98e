//! C ABI over the `hairsplat` crate.
//!
//! Objects cross the boundary as opaque handles created by `hs_*_new`,
//! `hs_*_read` or `hs_*_fit` and released with the matching `hs_*_free`.
//! Every fallible call returns an [`HsStatus`]; on failure the message is
//! kept per thread and can be copied out with [`hs_last_error_message`].
//!
//! Point arrays are flat `x, y, z` triples in `f64`. Images are row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use hairsplat::codec::{decode_strand, encode_strand, fit_basis, Point, Strand, StrandBasis, StrandCoefficients};
use hairsplat::hairmap::{PcaHairMap, DEFAULT_BALD_THRESHOLD, DEFAULT_NEAREST_WEIGHT};
use hairsplat::io;
use hairsplat::model::HairModel;
use hairsplat::optim::render_map;
use hairsplat::render::{RenderBuffers, RenderConfig};
use hairsplat::scalp::{CameraModel, HeadModel};
use hairsplat::Error;
use nalgebra::{Matrix3, Vector3};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Shape = 3,
    Underdetermined = 4,
    Degenerate = 5,
    State = 6,
    Diverged = 7,
    Format = 8,
    Config = 9,
    Io = 10,
    BufferTooSmall = 11,
    Panic = 12,
}

/// Strand PCA basis.
pub struct HsBasis(StrandBasis);
/// Hair map of per-texel coefficients and baldness.
pub struct HsHairMap(PcaHairMap);
/// Pinhole camera.
pub struct HsCamera(CameraModel);
/// Ellipsoidal head with a scalp cap.
pub struct HsHead(HeadModel);
/// Rendered silhouette, direction and depth images.
pub struct HsRender(RenderBuffers);

/// Rasterizer and model settings for `hs_render`.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HsRenderOptions {
    /// Dense strands per guide along each scalp axis.
    pub upsample: usize,
    pub width_scale: f64,
    pub epsilon: f64,
    pub opacity: f64,
    pub cutoff: f64,
    pub screen_blur: f64,
}

struct Failure {
    status: HsStatus,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidInput(_) => HsStatus::InvalidInput,
            Error::Shape(_) => HsStatus::Shape,
            Error::Underdetermined(_) => HsStatus::Underdetermined,
            Error::Degenerate(_) => HsStatus::Degenerate,
            Error::State(_) => HsStatus::State,
            Error::Diverged { .. } => HsStatus::Diverged,
            Error::Format(_) => HsStatus::Format,
            Error::Config(_) => HsStatus::Config,
            Error::File { .. } | Error::Io(_) => HsStatus::Io,
        };
        Failure { status, message: e.to_string() }
    }
}

fn fail(status: HsStatus, message: impl Into<String>) -> Failure {
    Failure { status, message: message.into() }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, turning errors and panics into a status plus a stored message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            HsStatus::Ok
        }
        Ok(Err(f)) => {
            set_last_error(&f.message);
            f.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("internal panic: {msg}"));
            HsStatus::Panic
        }
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(HsStatus::NullPointer, format!("{what} is null")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(HsStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(fail(HsStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn path(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(fail(HsStatus::NullPointer, "path is null"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| fail(HsStatus::InvalidInput, "path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(fail(HsStatus::NullPointer, "output handle pointer is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn release<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

fn check_len(got: usize, want: usize, what: &str) -> Result<(), Failure> {
    if got < want {
        return Err(fail(HsStatus::BufferTooSmall, format!("{what} holds {got} values, {want} needed")));
    }
    Ok(())
}

fn strand_from_flat(coords: &[f64]) -> Result<Strand, Failure> {
    Ok(Strand::from_flat(coords)?)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated and
/// always NUL-terminated when `len > 0`). Returns the full message length
/// including the terminator, or 0 when the last call succeeded.
///
/// # Safety
/// `buf` must point to `len` writable bytes or be null with `len == 0`.
#[no_mangle]
pub unsafe extern "C" fn hs_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n - 1) = 0;
        }
        bytes.len()
    })
}

/// Defaults matching the command-line tool.
#[no_mangle]
pub extern "C" fn hs_render_options_default() -> HsRenderOptions {
    let c = RenderConfig::default();
    HsRenderOptions {
        upsample: 2,
        width_scale: c.width_scale,
        epsilon: c.epsilon,
        opacity: c.opacity,
        cutoff: c.cutoff,
        screen_blur: c.screen_blur,
    }
}

// Basis

/// Fits a basis to `strand_count` strands of `point_count` points each,
/// stored back to back in `points`.
///
/// # Safety
/// `points` must hold `strand_count * point_count * 3` doubles; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn hs_basis_fit(
    points: *const f64,
    strand_count: usize,
    point_count: usize,
    num_components: usize,
    out: *mut *mut HsBasis,
) -> HsStatus {
    guard(|| {
        let stride = point_count * 3;
        let coords = slice(points, strand_count * stride, "points")?;
        if stride == 0 {
            return Err(fail(HsStatus::InvalidInput, "point_count must be positive"));
        }
        let strands = coords.chunks_exact(stride).map(strand_from_flat).collect::<Result<Vec<_>, _>>()?;
        emit(out, HsBasis(fit_basis(&strands, num_components)?))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hs_basis_read(path_: *const c_char, out: *mut *mut HsBasis) -> HsStatus {
    guard(|| emit(out, HsBasis(io::read_basis(&path(path_)?)?)))
}

/// # Safety
/// `basis` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hs_basis_write(basis: *const HsBasis, path_: *const c_char) -> HsStatus {
    guard(|| Ok(io::write_basis(&path(path_)?, &handle(basis, "basis")?.0)?))
}

/// Points per strand, or 0 for a null handle.
///
/// # Safety
/// `basis` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn hs_basis_point_count(basis: *const HsBasis) -> usize {
    basis.as_ref().map_or(0, |b| b.0.point_count())
}

/// Number of components, or 0 for a null handle.
///
/// # Safety
/// `basis` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn hs_basis_num_components(basis: *const HsBasis) -> usize {
    basis.as_ref().map_or(0, |b| b.0.num_components())
}

/// # Safety
/// `basis` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hs_basis_free(basis: *mut HsBasis) {
    release(basis)
}

/// Projects one strand onto the basis. `points` holds `point_count * 3`
/// doubles; `gamma` receives `num_components` coefficients.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn hs_encode(
    basis: *const HsBasis,
    points: *const f64,
    point_count: usize,
    gamma: *mut f64,
    gamma_len: usize,
) -> HsStatus {
    guard(|| {
        let b = &handle(basis, "basis")?.0;
        let strand = strand_from_flat(slice(points, point_count * 3, "points")?)?;
        check_len(gamma_len, b.num_components(), "gamma")?;
        let coeffs = encode_strand(&strand, b)?;
        slice_mut(gamma, gamma_len, "gamma")?[..coeffs.gamma.len()].copy_from_slice(&coeffs.gamma);
        Ok(())
    })
}

/// Reconstructs a strand from `gamma_len` coefficients into `points`, which
/// must hold `point_count * 3` doubles.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn hs_decode(
    basis: *const HsBasis,
    gamma: *const f64,
    gamma_len: usize,
    points: *mut f64,
    points_len: usize,
) -> HsStatus {
    guard(|| {
        let b = &handle(basis, "basis")?.0;
        let coeffs = StrandCoefficients::new(slice(gamma, gamma_len, "gamma")?.to_vec())?;
        let strand = decode_strand(&coeffs, b)?;
        let flat = strand.to_flat();
        check_len(points_len, flat.len(), "points")?;
        slice_mut(points, points_len, "points")?[..flat.len()].copy_from_slice(&flat);
        Ok(())
    })
}

// Hair map

/// Builds a `width` x `height` map with `num_components` coefficients per
/// texel (texel-major) and one baldness value per texel.
///
/// # Safety
/// `coeffs` must hold `width * height * num_components` doubles and
/// `baldness` `width * height`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hs_hairmap_new(
    width: usize,
    height: usize,
    num_components: usize,
    coeffs: *const f64,
    baldness: *const f64,
    out: *mut *mut HsHairMap,
) -> HsStatus {
    guard(|| {
        let n = width * height;
        let c = slice(coeffs, n * num_components, "coeffs")?.to_vec();
        let b = slice(baldness, n, "baldness")?.to_vec();
        emit(out, HsHairMap(PcaHairMap::new(width, height, num_components, c, b)?))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hs_hairmap_read(path_: *const c_char, out: *mut *mut HsHairMap) -> HsStatus {
    guard(|| emit(out, HsHairMap(io::read_hairmap(&path(path_)?)?)))
}

/// # Safety
/// `map` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hs_hairmap_write(map: *const HsHairMap, path_: *const c_char) -> HsStatus {
    guard(|| Ok(io::write_hairmap(&path(path_)?, &handle(map, "map")?.0)?))
}

/// Writes the map's width, height and component count; any output may be
/// null.
///
/// # Safety
/// `map` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn hs_hairmap_dims(
    map: *const HsHairMap,
    width: *mut usize,
    height: *mut usize,
    num_components: *mut usize,
) -> HsStatus {
    guard(|| {
        let m = &handle(map, "map")?.0;
        for (p, v) in [(width, m.width()), (height, m.height()), (num_components, m.num_components())] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Copies the coefficients (texel-major) into `out`.
///
/// # Safety
/// `map` must be a live handle and `out` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hs_hairmap_coeffs(map: *const HsHairMap, out: *mut f64, len: usize) -> HsStatus {
    guard(|| {
        let c = handle(map, "map")?.0.coeffs();
        check_len(len, c.len(), "out")?;
        slice_mut(out, len, "out")?[..c.len()].copy_from_slice(c);
        Ok(())
    })
}

/// # Safety
/// `map` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hs_hairmap_free(map: *mut HsHairMap) {
    release(map)
}

// Head and camera

/// The default head: an origin-centred ellipsoid with radii (0.9, 1.0, 1.1).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hs_head_default(out: *mut *mut HsHead) -> HsStatus {
    guard(|| emit(out, HsHead(HeadModel::default())))
}

/// Ellipsoid with the given centre and radii; the scalp spans polar angles
/// `[cap_min, cap_max]` measured from +z.
///
/// # Safety
/// `center` and `radii` must each hold 3 doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hs_head_new(
    center: *const f64,
    radii: *const f64,
    cap_min: f64,
    cap_max: f64,
    out: *mut *mut HsHead,
) -> HsStatus {
    guard(|| {
        let c = slice(center, 3, "center")?;
        let r = slice(radii, 3, "radii")?;
        let head = HeadModel { center: Point::new(c[0], c[1], c[2]), radii: Vector3::new(r[0], r[1], r[2]), cap: (cap_min, cap_max) };
        head.validate()?;
        emit(out, HsHead(head))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hs_head_read(path_: *const c_char, out: *mut *mut HsHead) -> HsStatus {
    guard(|| emit(out, HsHead(io::read_head(&path(path_)?)?)))
}

/// # Safety
/// `head` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hs_head_free(head: *mut HsHead) {
    release(head)
}

/// Pinhole camera. `rotation` is the row-major world-to-camera matrix and
/// `translation` its offset, so `x_cam = R x + t`.
///
/// # Safety
/// `rotation` must hold 9 doubles and `translation` 3; `out` must be writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn hs_camera_new(
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    rotation: *const f64,
    translation: *const f64,
    width: usize,
    height: usize,
    out: *mut *mut HsCamera,
) -> HsStatus {
    guard(|| {
        let r = slice(rotation, 9, "rotation")?;
        let t = slice(translation, 3, "translation")?;
        let cam = CameraModel {
            fx,
            fy,
            cx,
            cy,
            rotation: Matrix3::from_row_slice(r),
            translation: Vector3::new(t[0], t[1], t[2]),
            width,
            height,
        };
        cam.validate()?;
        emit(out, HsCamera(cam))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hs_camera_read(path_: *const c_char, out: *mut *mut HsCamera) -> HsStatus {
    guard(|| emit(out, HsCamera(io::read_camera(&path(path_)?)?)))
}

/// # Safety
/// `camera` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hs_camera_free(camera: *mut HsCamera) {
    release(camera)
}

// Rendering

/// Decodes `map` through `basis` on `head`, upsamples and rasterizes it
/// from `camera`. A null `options` uses `hs_render_options_default`.
///
/// # Safety
/// Handles must be live; `options` valid or null; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hs_render(
    basis: *const HsBasis,
    map: *const HsHairMap,
    head: *const HsHead,
    camera: *const HsCamera,
    options: *const HsRenderOptions,
    out: *mut *mut HsRender,
) -> HsStatus {
    guard(|| {
        let basis = &handle(basis, "basis")?.0;
        let map = &handle(map, "map")?.0;
        let head = &handle(head, "head")?.0;
        let cam = &handle(camera, "camera")?.0;
        let o = options.as_ref().copied().unwrap_or_else(|| hs_render_options_default());
        let config = RenderConfig {
            width_scale: o.width_scale,
            epsilon: o.epsilon,
            opacity: o.opacity,
            cutoff: o.cutoff,
            screen_blur: o.screen_blur,
        };
        config.validate()?;
        let model = HairModel::new(basis.clone(), head.clone(), map, o.upsample, DEFAULT_NEAREST_WEIGHT, DEFAULT_BALD_THRESHOLD)?;
        emit(out, HsRender(render_map(&model, map, cam, &config)?.without_trace()))
    })
}

/// # Safety
/// `render` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn hs_render_size(render: *const HsRender, width: *mut usize, height: *mut usize) -> HsStatus {
    guard(|| {
        let r = &handle(render, "render")?.0;
        if let Some(w) = width.as_mut() {
            *w = r.width;
        }
        if let Some(h) = height.as_mut() {
            *h = r.height;
        }
        Ok(())
    })
}

/// Silhouette in [0, 1], one value per pixel.
///
/// # Safety
/// `render` must be a live handle and `out` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hs_render_silhouette(render: *const HsRender, out: *mut f64, len: usize) -> HsStatus {
    guard(|| {
        let r = &handle(render, "render")?.0;
        check_len(len, r.pixels(), "out")?;
        slice_mut(out, len, "out")?[..r.pixels()].copy_from_slice(&r.silhouette);
        Ok(())
    })
}

/// Screen-space strand direction, two values per pixel.
///
/// # Safety
/// `render` must be a live handle and `out` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hs_render_direction(render: *const HsRender, out: *mut f64, len: usize) -> HsStatus {
    guard(|| {
        let r = &handle(render, "render")?.0;
        check_len(len, 2 * r.pixels(), "out")?;
        let out = slice_mut(out, len, "out")?;
        for (dst, d) in out.chunks_exact_mut(2).zip(&r.direction) {
            dst.copy_from_slice(d);
        }
        Ok(())
    })
}

/// Depth per pixel; `valid` (optional) receives 1 where depth is defined.
///
/// # Safety
/// `render` must be a live handle, `out` valid for `len` doubles and `valid`
/// null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn hs_render_depth(render: *const HsRender, out: *mut f64, valid: *mut u8, len: usize) -> HsStatus {
    guard(|| {
        let r = &handle(render, "render")?.0;
        let n = r.pixels();
        check_len(len, n, "out")?;
        slice_mut(out, len, "out")?[..n].copy_from_slice(&r.depth);
        if !valid.is_null() {
            for (dst, v) in slice_mut(valid, len, "valid")?.iter_mut().zip(&r.depth_valid) {
                *dst = u8::from(*v);
            }
        }
        Ok(())
    })
}

/// Writes the render as PFM/PGM files into directory `dir`.
///
/// # Safety
/// `render` must be a live handle; `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hs_render_write(render: *const HsRender, dir: *const c_char) -> HsStatus {
    guard(|| Ok(io::write_render(&path(dir)?, &handle(render, "render")?.0)?))
}

/// # Safety
/// `render` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hs_render_free(render: *mut HsRender) {
    release(render)
}
