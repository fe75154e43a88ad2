//! C ABI over `pixel_rsma`.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `*_free`. Every fallible call returns a [`PrsStatus`]; the message
//! of the most recent failure on the calling thread is available from
//! [`prs_last_error`]. Complex arrays use [`PrsComplex`]; matrices are
//! column-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use pixel_rsma::antenna_file::{read_antenna_file, write_antenna_file};
use pixel_rsma::channel::{substream, synth_pixel_hardware, tag, ScenarioConfig};
use pixel_rsma::codebook::Codebook;
use pixel_rsma::config::ExperimentConfig;
use pixel_rsma::em_model::{normalized_pattern_coder, solve_port_currents, Antenna, AntennaCoder, DEFAULT_RANK_TOL};
use pixel_rsma::harness::{run_experiment, train_codebook_cmd, write_results};
use pixel_rsma::linalg::{CMatrix, C64};
use pixel_rsma::rsma::{sinr_pair, PrecoderMatrix};
use pixel_rsma::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Parse = 4,
    Io = 5,
    MissingCodebook = 6,
    /// Singular network, zero pattern, rank-deficient channel or solver stall.
    Numerical = 7,
    DimensionMismatch = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrsComplex {
    pub re: f64,
    pub im: f64,
}

impl From<C64> for PrsComplex {
    fn from(z: C64) -> Self {
        Self { re: z.re, im: z.im }
    }
}

impl From<PrsComplex> for C64 {
    fn from(z: PrsComplex) -> Self {
        C64::new(z.re, z.im)
    }
}

/// Pixel antenna with its pattern basis and coder table.
pub struct PrsAntenna {
    inner: Antenna,
}

pub struct PrsCodebook {
    inner: Codebook,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(err: &Error) -> PrsStatus {
    match err {
        Error::InvalidArgument(_) => PrsStatus::InvalidArgument,
        Error::Config { .. } => PrsStatus::Config,
        Error::Parse { .. } => PrsStatus::Parse,
        Error::Io(_) | Error::Csv(_) => PrsStatus::Io,
        Error::MissingCodebook(_) => PrsStatus::MissingCodebook,
        Error::DimensionMismatch { .. } => PrsStatus::DimensionMismatch,
        Error::SingularSubnetwork { .. }
        | Error::ZeroMatrix
        | Error::ZeroPattern { .. }
        | Error::RankDeficient { .. }
        | Error::SolverStall { .. } => PrsStatus::Numerical,
    }
}

struct Fail(PrsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(PrsStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(PrsStatus::InvalidArgument, msg.into())
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PrsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            PrsStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("internal panic: {msg}"));
            PrsStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn coder_arg(bits: *const u8, len: usize, q: usize) -> Result<AntennaCoder, Fail> {
    if bits.is_null() {
        return Err(null("bits"));
    }
    if len != q {
        return Err(Fail(
            PrsStatus::DimensionMismatch,
            format!("coder has {len} bits, antenna has {q} switches"),
        ));
    }
    Ok(AntennaCoder::from_bytes(std::slice::from_raw_parts(bits, len))?)
}

unsafe fn out_slice<'a, T>(p: *mut T, len: usize, need: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    if len < need {
        return Err(Fail(
            PrsStatus::DimensionMismatch,
            format!("{what} holds {len} entries, need {need}"),
        ));
    }
    Ok(std::slice::from_raw_parts_mut(p, need))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn prs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn prs_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version contains NUL"),
    };
    VERSION.as_ptr()
}

/// Loads an antenna data file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn prs_antenna_load(path: *const c_char, out: *mut *mut PrsAntenna) -> PrsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let (net, pats) = read_antenna_file(&path_arg(path, "path")?)?;
        let inner = Antenna::new(net, pats, DEFAULT_RANK_TOL)?.with_coder_table();
        *out = Box::into_raw(Box::new(PrsAntenna { inner }));
        Ok(())
    })
}

/// Synthesizes a random passive antenna with `q` switches and `n_spatial`
/// spatial samples from `seed`, identical to the one the CLI builds.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn prs_antenna_synthesize(
    q: usize,
    n_spatial: usize,
    seed: u64,
    out: *mut *mut PrsAntenna,
) -> PrsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = ScenarioConfig { n_switches: q, n_spatial, seed, ..ScenarioConfig::default() };
        cfg.validate()?;
        let (net, pats) = synth_pixel_hardware(&cfg, &mut substream(seed, &[tag::HARDWARE]));
        let inner = Antenna::new(net, pats, DEFAULT_RANK_TOL)?.with_coder_table();
        *out = Box::into_raw(Box::new(PrsAntenna { inner }));
        Ok(())
    })
}

/// Writes the antenna's network and patterns to an antenna data file.
///
/// # Safety
/// `antenna` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn prs_antenna_save(antenna: *const PrsAntenna, path: *const c_char) -> PrsStatus {
    guard(|| {
        let a = antenna.as_ref().ok_or_else(|| null("antenna"))?;
        write_antenna_file(&path_arg(path, "path")?, a.inner.network(), a.inner.patterns())?;
        Ok(())
    })
}

/// # Safety
/// `antenna` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn prs_antenna_free(antenna: *mut PrsAntenna) {
    if !antenna.is_null() {
        drop(Box::from_raw(antenna));
    }
}

/// Number of RF switches `Q`, or 0 for a null handle.
///
/// # Safety
/// `antenna` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn prs_antenna_num_switches(antenna: *const PrsAntenna) -> usize {
    antenna.as_ref().map_or(0, |a| a.inner.num_switches())
}

/// Rank `r` of the pattern basis (length of a pattern coder), or 0 for a null handle.
///
/// # Safety
/// `antenna` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn prs_antenna_rank(antenna: *const PrsAntenna) -> usize {
    antenna.as_ref().map_or(0, |a| a.inner.rank())
}

/// Unit-norm pattern coder of the binary coder `bits` (one byte per switch,
/// 0 = closed, 1 = open). Writes `rank` entries to `out`.
///
/// # Safety
/// `bits` must hold `n_bits` bytes and `out` must hold `out_len` entries.
#[no_mangle]
pub unsafe extern "C" fn prs_antenna_pattern_coder(
    antenna: *const PrsAntenna,
    bits: *const u8,
    n_bits: usize,
    out: *mut PrsComplex,
    out_len: usize,
) -> PrsStatus {
    guard(|| {
        let a = &antenna.as_ref().ok_or_else(|| null("antenna"))?.inner;
        let coder = coder_arg(bits, n_bits, a.num_switches())?;
        let (w, _) = normalized_pattern_coder(a.basis(), a.network(), &coder)?;
        let dst = out_slice(out, out_len, a.rank(), "out")?;
        for (d, z) in dst.iter_mut().zip(w.as_slice()) {
            *d = (*z).into();
        }
        Ok(())
    })
}

/// Port currents `[i_A, i_1..i_Q]` for the coder `bits` driven by antenna
/// current `i_a`. Writes `Q + 1` entries to `out`.
///
/// # Safety
/// `bits` must hold `n_bits` bytes and `out` must hold `out_len` entries.
#[no_mangle]
pub unsafe extern "C" fn prs_antenna_port_currents(
    antenna: *const PrsAntenna,
    bits: *const u8,
    n_bits: usize,
    i_a: PrsComplex,
    out: *mut PrsComplex,
    out_len: usize,
) -> PrsStatus {
    guard(|| {
        let a = &antenna.as_ref().ok_or_else(|| null("antenna"))?.inner;
        let coder = coder_arg(bits, n_bits, a.num_switches())?;
        let currents = solve_port_currents(a.network(), &coder, i_a.into())?;
        let dst = out_slice(out, out_len, a.num_switches() + 1, "out")?;
        for (d, z) in dst.iter_mut().zip(currents.as_slice()) {
            *d = (*z).into();
        }
        Ok(())
    })
}

/// Loads a codebook file.
///
/// # Safety
/// `path` must be NUL-terminated and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn prs_codebook_load(path: *const c_char, out: *mut *mut PrsCodebook) -> PrsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = Codebook::load(&path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(PrsCodebook { inner }));
        Ok(())
    })
}

/// Writes a codebook file.
///
/// # Safety
/// `codebook` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn prs_codebook_save(codebook: *const PrsCodebook, path: *const c_char) -> PrsStatus {
    guard(|| {
        let cb = codebook.as_ref().ok_or_else(|| null("codebook"))?;
        cb.inner.save(&path_arg(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `codebook` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn prs_codebook_free(codebook: *mut PrsCodebook) {
    if !codebook.is_null() {
        drop(Box::from_raw(codebook));
    }
}

/// Number of codewords `M`, or 0 for a null handle.
///
/// # Safety
/// `codebook` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn prs_codebook_len(codebook: *const PrsCodebook) -> usize {
    codebook.as_ref().map_or(0, |c| c.inner.len())
}

/// Codeword length `Q`, or 0 for a null handle.
///
/// # Safety
/// `codebook` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn prs_codebook_num_switches(codebook: *const PrsCodebook) -> usize {
    codebook.as_ref().map_or(0, |c| c.inner.num_switches())
}

/// Copies codeword `index` into `out` as one byte per switch (1 = open).
///
/// # Safety
/// `out` must hold `out_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn prs_codebook_get(
    codebook: *const PrsCodebook,
    index: usize,
    out: *mut u8,
    out_len: usize,
) -> PrsStatus {
    guard(|| {
        let cb = &codebook.as_ref().ok_or_else(|| null("codebook"))?.inner;
        if index >= cb.len() {
            return Err(invalid(format!("codeword {index} out of range for {} codewords", cb.len())));
        }
        let dst = out_slice(out, out_len, cb.num_switches(), "out")?;
        for (d, b) in dst.iter_mut().zip(cb.get(index).bits()) {
            *d = u8::from(*b);
        }
        Ok(())
    })
}

/// Common and private SINR of `user` for the coded channel row `h`
/// (`n_tx` entries) and precoder `p` (`n_tx x (n_users + 1)`, column 0 is
/// the common stream).
///
/// # Safety
/// `h` must hold `n_tx` entries, `p` must hold `n_tx * (n_users + 1)`
/// entries and the output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn prs_sinr(
    h: *const PrsComplex,
    p: *const PrsComplex,
    n_tx: usize,
    n_users: usize,
    user: usize,
    sigma2: f64,
    common: *mut f64,
    private: *mut f64,
) -> PrsStatus {
    guard(|| {
        if h.is_null() || p.is_null() || common.is_null() || private.is_null() {
            return Err(null("argument"));
        }
        if n_tx == 0 || user >= n_users {
            return Err(invalid("need n_tx >= 1 and user < n_users"));
        }
        if !(sigma2 > 0.0) {
            return Err(invalid("noise power must be positive"));
        }
        let row: Vec<C64> = std::slice::from_raw_parts(h, n_tx).iter().map(|&z| z.into()).collect();
        let cols = n_users + 1;
        let entries = std::slice::from_raw_parts(p, n_tx * cols).iter().map(|&z| C64::from(z));
        let pm = PrecoderMatrix::new(CMatrix::from_iterator(n_tx, cols, entries))?;
        let (gc, gp) = sinr_pair(&row, &pm, user, sigma2);
        *common = gc;
        *private = gp;
        Ok(())
    })
}

/// Runs the experiment described by the config file and writes the results CSV.
///
/// # Safety
/// Both paths must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn prs_run_experiment(config_path: *const c_char, out_csv: *const c_char) -> PrsStatus {
    guard(|| {
        let cfg = ExperimentConfig::load(&path_arg(config_path, "config_path")?)?;
        let out = path_arg(out_csv, "out_csv")?;
        write_results(&run_experiment(&cfg)?, &out)?;
        Ok(())
    })
}

/// Trains a codebook as configured, saves it to `out_path` and returns it
/// through `out` when `out` is non-null.
///
/// # Safety
/// Both paths must be NUL-terminated strings; `out` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn prs_train_codebook(
    config_path: *const c_char,
    out_path: *const c_char,
    out: *mut *mut PrsCodebook,
) -> PrsStatus {
    guard(|| {
        let config = path_arg(config_path, "config_path")?;
        let dst = path_arg(out_path, "out_path")?;
        let outcome = train_codebook_cmd(&config, &dst)?;
        if !out.is_null() {
            *out = Box::into_raw(Box::new(PrsCodebook { inner: outcome.codebook }));
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    #[test]
    fn status_codes_are_stable() {
        assert_eq!(PrsStatus::Ok as i32, 0);
        assert_eq!(status_of(&Error::InvalidArgument("x".into())), PrsStatus::InvalidArgument);
        assert_eq!(status_of(&Error::ZeroMatrix), PrsStatus::Numerical);
        assert_eq!(status_of(&Error::MissingCodebook("a".into())), PrsStatus::MissingCodebook);
    }

    #[test]
    fn panics_become_status() {
        let s = guard(|| panic!("boom"));
        assert_eq!(s, PrsStatus::Panic);
        let msg = unsafe { CStr::from_ptr(prs_last_error()) }.to_str().unwrap();
        assert!(msg.contains("boom"));
        assert_eq!(guard(|| Ok(())), PrsStatus::Ok);
        assert!(unsafe { CStr::from_ptr(prs_last_error()) }.to_bytes().is_empty());
    }

    #[test]
    fn null_handles_are_harmless() {
        unsafe {
            prs_antenna_free(ptr::null_mut());
            prs_codebook_free(ptr::null_mut());
            assert_eq!(prs_antenna_num_switches(ptr::null()), 0);
            assert_eq!(prs_codebook_len(ptr::null()), 0);
        }
    }
}
