//! C ABI for the vpmcf simulator.
//!
//! Conventions:
//! - all objects are opaque handles created and destroyed here;
//! - functions return `VPMCF_OK` (0) or a nonzero error code matching the
//!   CLI's exit codes (2 = config, 3 = io, 4 = solver, 1 = invalid argument);
//! - [`vpmcf_last_error_message`] returns a thread-local description of the
//!   most recent failure.
//!
//! The matching header is `include/vpmcf.h`.

use std::cell::RefCell;
use std::ffi::{c_char, c_double, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use vpmcf::config::RunConfig;
use vpmcf::flow::FlowTrajectory;
use vpmcf::output::{write_run_outputs, RunSummary};
use vpmcf::Error;

pub const VPMCF_OK: c_int = 0;
pub const VPMCF_ERR_ARGUMENT: c_int = 1;
pub const VPMCF_ERR_CONFIG: c_int = 2;
pub const VPMCF_ERR_IO: c_int = 3;
pub const VPMCF_ERR_SOLVER: c_int = 4;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).expect("no NUL"));
}

fn code_of(e: &Error) -> c_int {
    match e {
        Error::Io(_) => VPMCF_ERR_IO,
        Error::Convergence { .. } | Error::BracketExpansion(_) | Error::Containment { .. } => {
            VPMCF_ERR_SOLVER
        }
        _ => VPMCF_ERR_CONFIG,
    }
}

fn fail(e: &Error) -> c_int {
    set_error(&e.to_string());
    code_of(e)
}

fn fail_arg(msg: &str) -> c_int {
    set_error(msg);
    VPMCF_ERR_ARGUMENT
}

/// Opaque parsed run configuration.
pub struct VpmcfConfig(RunConfig);

/// Opaque finished flow: the trajectory plus its summary statistics.
pub struct VpmcfTrajectory {
    config: RunConfig,
    trajectory: FlowTrajectory,
    summary: RunSummary,
}

/// Per-step scalars, mirroring one row of steps.csv.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct VpmcfStepRecord {
    pub k: u64,
    pub time: c_double,
    pub volume_cells: u64,
    pub perimeter_before: c_double,
    pub perimeter_after: c_double,
    pub lambda: c_double,
    pub dissipation_term: c_double,
    pub el_residual_median: c_double,
    pub el_residual_p90: c_double,
    pub sup_boundary_distance: c_double,
    pub sup_curvature: c_double,
    pub flipped_cells: u64,
    pub inner_gap: c_double,
    pub epsilon_fix: c_double,
    pub diameter: c_double,
    pub components: u64,
}

unsafe fn cstr<'a>(p: *const c_char) -> Result<&'a str, c_int> {
    if p.is_null() {
        return Err(fail_arg("null string argument"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail_arg("string argument is not valid UTF-8"))
}

/// Most recent error message of this thread; valid until the next failing
/// call. Never null.
#[no_mangle]
pub extern "C" fn vpmcf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Parse a configuration from its textual `key = value` form.
#[no_mangle]
pub unsafe extern "C" fn vpmcf_config_parse(
    text: *const c_char,
    out: *mut *mut VpmcfConfig,
) -> c_int {
    if out.is_null() {
        return fail_arg("null output pointer");
    }
    let text = match cstr(text) {
        Ok(t) => t,
        Err(c) => return c,
    };
    match RunConfig::from_text(text) {
        Ok(cfg) => {
            *out = Box::into_raw(Box::new(VpmcfConfig(cfg)));
            VPMCF_OK
        }
        Err(e) => fail(&e),
    }
}

/// Load a configuration file.
#[no_mangle]
pub unsafe extern "C" fn vpmcf_config_load(
    path: *const c_char,
    out: *mut *mut VpmcfConfig,
) -> c_int {
    if out.is_null() {
        return fail_arg("null output pointer");
    }
    let path = match cstr(path) {
        Ok(p) => p,
        Err(c) => return c,
    };
    match RunConfig::load(Path::new(path)) {
        Ok(cfg) => {
            *out = Box::into_raw(Box::new(VpmcfConfig(cfg)));
            VPMCF_OK
        }
        Err(e) => fail(&e),
    }
}

#[no_mangle]
pub unsafe extern "C" fn vpmcf_config_free(cfg: *mut VpmcfConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Run the configured flow to completion.
#[no_mangle]
pub unsafe extern "C" fn vpmcf_run(
    cfg: *const VpmcfConfig,
    out: *mut *mut VpmcfTrajectory,
) -> c_int {
    if cfg.is_null() || out.is_null() {
        return fail_arg("null argument");
    }
    let cfg = &(*cfg).0;
    let result = catch_unwind(AssertUnwindSafe(|| -> Result<VpmcfTrajectory, Error> {
        let e0 = cfg.build_initial_set()?;
        let trajectory = vpmcf::flow::run(&e0, &cfg.flow_config()?)?;
        let summary = vpmcf::output::summarize(cfg, &trajectory)?;
        Ok(VpmcfTrajectory {
            config: cfg.clone(),
            trajectory,
            summary,
        })
    }));
    match result {
        Ok(Ok(t)) => {
            *out = Box::into_raw(Box::new(t));
            VPMCF_OK
        }
        Ok(Err(e)) => fail(&e),
        Err(_) => {
            set_error("internal panic during flow run");
            VPMCF_ERR_SOLVER
        }
    }
}

#[no_mangle]
pub unsafe extern "C" fn vpmcf_trajectory_free(t: *mut VpmcfTrajectory) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Number of completed steps.
#[no_mangle]
pub unsafe extern "C" fn vpmcf_trajectory_num_steps(t: *const VpmcfTrajectory) -> u64 {
    if t.is_null() {
        return 0;
    }
    (*t).trajectory.records.len() as u64
}

/// Grid dimensions of the run.
#[no_mangle]
pub unsafe extern "C" fn vpmcf_trajectory_dims(
    t: *const VpmcfTrajectory,
    nx: *mut u64,
    ny: *mut u64,
) -> c_int {
    if t.is_null() || nx.is_null() || ny.is_null() {
        return fail_arg("null argument");
    }
    *nx = (*t).trajectory.domain.nx as u64;
    *ny = (*t).trajectory.domain.ny as u64;
    VPMCF_OK
}

/// Copy the scalars of step `k` (0-based).
#[no_mangle]
pub unsafe extern "C" fn vpmcf_trajectory_step(
    t: *const VpmcfTrajectory,
    k: u64,
    out: *mut VpmcfStepRecord,
) -> c_int {
    if t.is_null() || out.is_null() {
        return fail_arg("null argument");
    }
    let records = &(*t).trajectory.records;
    let Some(r) = records.get(k as usize) else {
        return fail_arg("step index out of range");
    };
    *out = VpmcfStepRecord {
        k: r.k as u64,
        time: r.time,
        volume_cells: r.volume_cells as u64,
        perimeter_before: r.perimeter_before,
        perimeter_after: r.perimeter_after,
        lambda: r.lambda,
        dissipation_term: r.dissipation_term,
        el_residual_median: r.el_residual_median,
        el_residual_p90: r.el_residual_p90,
        sup_boundary_distance: r.sup_boundary_distance,
        sup_curvature: r.sup_curvature,
        flipped_cells: r.flipped_cells as u64,
        inner_gap: r.inner_gap,
        epsilon_fix: r.epsilon_fix,
        diameter: r.diameter,
        components: r.components as u64,
    };
    VPMCF_OK
}

/// Copy the cell mask of the set at physical time `time` (the last completed
/// step at or before it) into `buf` as 0/1 bytes, row-major, `len >= nx*ny`.
#[no_mangle]
pub unsafe extern "C" fn vpmcf_trajectory_mask_at(
    t: *const VpmcfTrajectory,
    time: c_double,
    buf: *mut u8,
    len: u64,
) -> c_int {
    if t.is_null() || buf.is_null() {
        return fail_arg("null argument");
    }
    let set = (*t).trajectory.set_at(time);
    let mask = set.mask();
    if (len as usize) < mask.len() {
        return fail_arg("mask buffer too small");
    }
    for (i, &b) in mask.iter().enumerate() {
        *buf.add(i) = b as u8;
    }
    VPMCF_OK
}

/// Serialize the run summary as JSON; the returned string must be released
/// with [`vpmcf_string_free`].
#[no_mangle]
pub unsafe extern "C" fn vpmcf_trajectory_summary_json(
    t: *const VpmcfTrajectory,
    out: *mut *mut c_char,
) -> c_int {
    if t.is_null() || out.is_null() {
        return fail_arg("null argument");
    }
    match serde_json::to_string_pretty(&(*t).summary) {
        Ok(json) => {
            *out = CString::new(json).expect("no NUL in JSON").into_raw();
            VPMCF_OK
        }
        Err(e) => {
            set_error(&format!("summary encoding: {e}"));
            VPMCF_ERR_CONFIG
        }
    }
}

#[no_mangle]
pub unsafe extern "C" fn vpmcf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Write steps.csv, summary.json and the mask snapshots to a directory.
#[no_mangle]
pub unsafe extern "C" fn vpmcf_trajectory_write_outputs(
    t: *const VpmcfTrajectory,
    out_dir: *const c_char,
    with_pgm: c_int,
) -> c_int {
    if t.is_null() {
        return fail_arg("null argument");
    }
    let dir = match cstr(out_dir) {
        Ok(d) => d,
        Err(c) => return c,
    };
    let t = &*t;
    match write_run_outputs(
        &t.config,
        &t.trajectory,
        Path::new(dir),
        with_pgm != 0,
    ) {
        Ok(_) => VPMCF_OK,
        Err(e) => fail(&e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;
    use std::ptr;

    fn test_config_text() -> CString {
        CString::new(
            "grid_nx = 48\n\
             grid_ny = 48\n\
             dx_length = 1.0\n\
             boundary = neumann\n\
             preset = ball\n\
             center_x_length = 24.0\n\
             center_y_length = 24.0\n\
             radius_length = 10.0\n\
             h_time = 16.0\n\
             t_end_time = 48.0\n\
             snapshot_factor = 1.5\n\
             perimeter = isotropic\n\
             mode = constrained\n\
             inner_tol_energy = 0.01\n\
             inner_max_iters = 10000\n\
             lambda_tol_cells = 1\n\
             seed = 0\n\
             override_resolution_guard = false\n",
        )
        .unwrap()
    }

    #[test]
    fn parse_run_inspect_free() {
        unsafe {
            let mut cfg: *mut VpmcfConfig = ptr::null_mut();
            assert_eq!(vpmcf_config_parse(test_config_text().as_ptr(), &mut cfg), VPMCF_OK);
            let mut traj: *mut VpmcfTrajectory = ptr::null_mut();
            assert_eq!(vpmcf_run(cfg, &mut traj), VPMCF_OK);

            let n = vpmcf_trajectory_num_steps(traj);
            assert_eq!(n, 3);
            let (mut nx, mut ny) = (0u64, 0u64);
            assert_eq!(vpmcf_trajectory_dims(traj, &mut nx, &mut ny), VPMCF_OK);
            assert_eq!((nx, ny), (48, 48));

            let mut rec = VpmcfStepRecord::default();
            assert_eq!(vpmcf_trajectory_step(traj, 0, &mut rec), VPMCF_OK);
            assert_eq!(rec.k, 0);
            assert!(rec.time > 0.0);
            assert!(rec.volume_cells > 0);
            assert_ne!(
                vpmcf_trajectory_step(traj, n, &mut rec),
                VPMCF_OK,
                "out-of-range index must fail"
            );

            let mut buf = vec![2u8; (nx * ny) as usize];
            assert_eq!(vpmcf_trajectory_mask_at(traj, 0.0, buf.as_mut_ptr(), nx * ny), VPMCF_OK);
            let count: u64 = buf.iter().map(|&b| b as u64).sum();
            assert!(buf.iter().all(|&b| b <= 1));
            assert_eq!(count, rec.volume_cells, "volume conserved from E_0");

            let mut json: *mut c_char = ptr::null_mut();
            assert_eq!(vpmcf_trajectory_summary_json(traj, &mut json), VPMCF_OK);
            let text = CStr::from_ptr(json).to_str().unwrap().to_owned();
            assert!(text.contains("\"num_steps\": 3"));
            vpmcf_string_free(json);

            vpmcf_trajectory_free(traj);
            vpmcf_config_free(cfg);
        }
    }

    #[test]
    fn config_error_reports_code_and_message() {
        unsafe {
            let bad = CString::new("grid_nx = -4\n").unwrap();
            let mut cfg: *mut VpmcfConfig = ptr::null_mut();
            let code = vpmcf_config_parse(bad.as_ptr(), &mut cfg);
            assert_eq!(code, VPMCF_ERR_CONFIG);
            let msg = CStr::from_ptr(vpmcf_last_error_message()).to_str().unwrap();
            assert!(!msg.is_empty());
        }
    }

    #[test]
    fn io_error_maps_to_io_code() {
        unsafe {
            let path = CString::new("/nonexistent/vpmcf.cfg").unwrap();
            let mut cfg: *mut VpmcfConfig = ptr::null_mut();
            assert_eq!(vpmcf_config_load(path.as_ptr(), &mut cfg), VPMCF_ERR_IO);
        }
    }

    #[test]
    fn null_arguments_are_rejected() {
        unsafe {
            assert_eq!(vpmcf_config_parse(ptr::null(), ptr::null_mut()), VPMCF_ERR_ARGUMENT);
            assert_eq!(vpmcf_run(ptr::null(), ptr::null_mut()), VPMCF_ERR_ARGUMENT);
            let msg = CStr::from_ptr(vpmcf_last_error_message()).to_str().unwrap();
            assert!(msg.contains("null"));
        }
    }

    #[test]
    fn write_outputs_creates_files() {
        unsafe {
            let mut cfg: *mut VpmcfConfig = ptr::null_mut();
            assert_eq!(vpmcf_config_parse(test_config_text().as_ptr(), &mut cfg), VPMCF_OK);
            let mut traj: *mut VpmcfTrajectory = ptr::null_mut();
            assert_eq!(vpmcf_run(cfg, &mut traj), VPMCF_OK);
            let dir = tempfile::tempdir().unwrap();
            let cdir = CString::new(dir.path().to_str().unwrap()).unwrap();
            assert_eq!(vpmcf_trajectory_write_outputs(traj, cdir.as_ptr(), 0), VPMCF_OK);
            assert!(dir.path().join("steps.csv").exists());
            assert!(dir.path().join("summary.json").exists());
            vpmcf_trajectory_free(traj);
            vpmcf_config_free(cfg);
        }
    }
}
