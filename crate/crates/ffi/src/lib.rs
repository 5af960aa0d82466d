//! C ABI over the physicoupled toolkit.
//!
//! Objects cross the boundary as opaque handles (`PcSequence`, `PcModel`)
//! that the caller releases with the matching `*_free` function. Every
//! fallible call returns a `PcStatus`; on failure the message is kept per
//! thread and can be fetched with `pc_last_error_message`.
//!
//! Pointers passed in must be valid for the stated lengths. Strings are
//! NUL-terminated UTF-8.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use physicoupled::error::Error;
use physicoupled::grid::{read_sequence, write_sequence, DataType, GridSequence};
use physicoupled::pde::pde_error;
use physicoupled::stpcnn::{load_stpcnn, rollout, Physics, PhysicsSpec, Stpcnn};
use physicoupled::wave::{simulate, StartRule, WaveConfig};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PcStatus {
    Ok = 0,
    NullPointer = 1,
    /// Bad configuration, shape or contract violation.
    InvalidArgument = 2,
    /// Simulation parameters violate the CFL bound.
    Unstable = 3,
    /// Non-finite values, solver or training failure.
    Numerics = 4,
    Io = 5,
    /// Malformed file contents.
    Format = 6,
    /// The recovered PDE cannot be stepped.
    DegeneratePde = 7,
    /// Output buffer too small.
    BufferTooSmall = 8,
    /// A Rust panic was caught at the boundary.
    Internal = 9,
}

/// A gridded time series `[frames, height, width]`.
pub struct PcSequence(GridSequence);

/// A trained forecaster together with the physics backend it rolls out with.
pub struct PcModel {
    model: Stpcnn,
    physics: Physics,
}

/// Parameters of the reflected-wave simulator.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct PcWaveConfig {
    pub height: usize,
    pub width: usize,
    pub dt: f64,
    pub dx: f64,
    pub dy: f64,
    pub speed: f64,
    pub amplitude: f64,
    pub sigma2_x: f64,
    pub sigma2_y: f64,
    pub center_i: f64,
    pub center_j: f64,
    pub steps: usize,
    pub noise_std: f64,
    pub seed: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> PcStatus {
    match e {
        Error::Stability(_) => PcStatus::Unstable,
        Error::Numerics(_) | Error::Solver(_) | Error::Training { .. } => PcStatus::Numerics,
        Error::Io(_) => PcStatus::Io,
        Error::Format(_) | Error::Json(_) => PcStatus::Format,
        Error::DegeneratePde(_) => PcStatus::DegeneratePde,
        _ => PcStatus::InvalidArgument,
    }
}

struct Fail(PcStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(PcStatus::NullPointer, format!("{what} is null"))
}

/// Run `f`, recording its error and converting panics.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            PcStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            PcStatus::Internal
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(PcStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    // SAFETY: checked non-null; caller provides a writable slot.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// Defaults of the simulator: 16x16 grid, dt 0.1, c 3, centered bump.
#[no_mangle]
pub extern "C" fn pc_wave_config_default() -> PcWaveConfig {
    let d = WaveConfig::default();
    PcWaveConfig {
        height: d.height,
        width: d.width,
        dt: d.dt,
        dx: d.dx,
        dy: d.dy,
        speed: d.speed,
        amplitude: d.amplitude,
        sigma2_x: d.sigma2_x,
        sigma2_y: d.sigma2_y,
        center_i: d.center.0,
        center_j: d.center.1,
        steps: d.steps,
        noise_std: d.noise_std,
        seed: d.seed,
    }
}

/// Simulate one wave sequence into a new handle.
///
/// # Safety
/// `config` must point to a valid `PcWaveConfig`; `out` to a writable
/// handle slot.
#[no_mangle]
pub unsafe extern "C" fn pc_wave_simulate(
    config: *const PcWaveConfig,
    out: *mut *mut PcSequence,
) -> PcStatus {
    guard(|| {
        let c = ref_arg(config, "config")?;
        let cfg = WaveConfig {
            height: c.height,
            width: c.width,
            dt: c.dt,
            dx: c.dx,
            dy: c.dy,
            speed: c.speed,
            amplitude: c.amplitude,
            sigma2_x: c.sigma2_x,
            sigma2_y: c.sigma2_y,
            center: (c.center_i, c.center_j),
            steps: c.steps,
            noise_std: c.noise_std,
            seed: c.seed,
            start: StartRule::Taylor,
        };
        put(out, PcSequence(simulate(&cfg)?))
    })
}

/// Wrap `frames * height * width` row-major values (all cells active).
///
/// # Safety
/// `data` must hold `frames * height * width` doubles.
#[no_mangle]
pub unsafe extern "C" fn pc_sequence_new(
    frames: usize,
    height: usize,
    width: usize,
    data: *const f64,
    dt: f64,
    out: *mut *mut PcSequence,
) -> PcStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        let n = frames
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| Fail(PcStatus::InvalidArgument, "sequence size overflows".into()))?;
        let values = std::slice::from_raw_parts(data, n).to_vec();
        put(
            out,
            PcSequence(GridSequence::new(frames, height, width, values, dt)?),
        )
    })
}

/// Read a sequence directory.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn pc_sequence_read(
    dir: *const c_char,
    out: *mut *mut PcSequence,
) -> PcStatus {
    guard(|| {
        let dir = path_arg(dir, "dir")?;
        put(out, PcSequence(read_sequence(&dir)?))
    })
}

/// Write a sequence directory with `f64` samples.
///
/// # Safety
/// `seq` must be a live handle; `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pc_sequence_write(seq: *const PcSequence, dir: *const c_char) -> PcStatus {
    guard(|| {
        let seq = ref_arg(seq, "sequence")?;
        let dir = path_arg(dir, "dir")?;
        write_sequence(&seq.0, &dir, DataType::F64)?;
        Ok(())
    })
}

/// Dimensions of a sequence. Any output pointer may be null.
///
/// # Safety
/// `seq` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_sequence_dims(
    seq: *const PcSequence,
    frames: *mut usize,
    height: *mut usize,
    width: *mut usize,
) -> PcStatus {
    guard(|| {
        let s = &ref_arg(seq, "sequence")?.0;
        for (p, v) in [
            (frames, s.frames()),
            (height, s.height()),
            (width, s.width()),
        ] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Copy all values into `buf` (row-major `[frames, height, width]`).
///
/// # Safety
/// `seq` must be a live handle; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pc_sequence_copy(
    seq: *const PcSequence,
    buf: *mut f64,
    len: usize,
) -> PcStatus {
    guard(|| {
        let data = ref_arg(seq, "sequence")?.0.data();
        if buf.is_null() {
            return Err(null("buffer"));
        }
        if len < data.len() {
            return Err(Fail(
                PcStatus::BufferTooSmall,
                format!("buffer holds {len} values, need {}", data.len()),
            ));
        }
        std::ptr::copy_nonoverlapping(data.as_ptr(), buf, data.len());
        Ok(())
    })
}

/// # Safety
/// `seq` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pc_sequence_free(seq: *mut PcSequence) {
    if !seq.is_null() {
        drop(Box::from_raw(seq));
    }
}

/// Load a forecaster checkpoint. `physics` is `none`, `pde:<path>`,
/// `ode:<path>`, `truth-wave`, or null for the backend stored in the
/// checkpoint. `speed`, `dx`, `dy` parameterize the physics backend.
///
/// # Safety
/// `dir` and non-null `physics` must be NUL-terminated strings; `out` a
/// writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn pc_model_load(
    dir: *const c_char,
    physics: *const c_char,
    speed: f64,
    dx: f64,
    dy: f64,
    out: *mut *mut PcModel,
) -> PcStatus {
    guard(|| {
        let dir = path_arg(dir, "dir")?;
        let ck = physicoupled::stpcnn::Checkpoint::read(&dir)?;
        let text = if physics.is_null() {
            ck.config.physics.clone().unwrap_or_else(|| "none".into())
        } else {
            CStr::from_ptr(physics)
                .to_str()
                .map_err(|_| Fail(PcStatus::InvalidArgument, "physics is not UTF-8".into()))?
                .to_string()
        };
        let spec: PhysicsSpec = text.parse()?;
        let physics = Physics::load(&spec, speed, dx, dy)?;
        let model = load_stpcnn(&dir)?;
        put(out, PcModel { model, physics })
    })
}

/// Roll the model over `seq`: teacher-forced for `tf_steps` frames, then
/// closed loop for `horizon` steps. Frame `k` of the result forecasts time
/// `k + 1` of the input.
///
/// # Safety
/// `model` and `seq` must be live handles; `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn pc_model_rollout(
    model: *const PcModel,
    seq: *const PcSequence,
    tf_steps: usize,
    horizon: usize,
    out: *mut *mut PcSequence,
) -> PcStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let s = ref_arg(seq, "sequence")?;
        let r = rollout(&m.model, &s.0, tf_steps, horizon, &m.physics)?;
        put(out, PcSequence(r.predictions))
    })
}

/// Step at which a rollout's physics backend failed, or -1 if it never did
/// (or `seq` is not a rollout result).
///
/// # Safety
/// `seq` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pc_sequence_physics_fallback(seq: *const PcSequence) -> i64 {
    seq.as_ref()
        .and_then(|s| s.0.meta.get("physics_fallback_step"))
        .and_then(|v| v.parse().ok())
        .unwrap_or(-1)
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pc_model_free(model: *mut PcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// `sqrt(1 - |a.b| / (|a||b|))` for two coefficient vectors of length `n`.
///
/// # Safety
/// `a` and `b` must hold `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_pde_error(
    a: *const f64,
    b: *const f64,
    n: usize,
    out: *mut f64,
) -> PcStatus {
    guard(|| {
        if a.is_null() || b.is_null() || out.is_null() {
            return Err(null("argument"));
        }
        let (a, b) = (
            std::slice::from_raw_parts(a, n),
            std::slice::from_raw_parts(b, n),
        );
        *out = pde_error(a, b)?;
        Ok(())
    })
}

/// Copy the calling thread's last error message (NUL-terminated, possibly
/// truncated) into `buf` and return its full length in bytes excluding the
/// terminator. Pass a null `buf` to query the length.
///
/// # Safety
/// Non-null `buf` must hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn pc_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
