//! Run artifacts: per-step CSV, summary JSON with the full config echo,
//! mask snapshots and the cross-resolution study table. All numeric output
//! uses shortest-roundtrip formatting so identical runs produce
//! byte-identical files.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::Result;
use crate::flow::{
    ball_convergence_report, density_report, holder_modulus, multiplier_report,
    weak_form_residual, BallConvergenceReport, DensityReport, FlowTrajectory, MultiplierReport,
    WeakFormReport,
};
use crate::geometry::{save_mask, save_pgm, volume};

pub const STEPS_CSV_HEADER: &str = "k,time,volume_cells,perimeter_before,perimeter_after,\
lambda,dissipation_term,el_residual_median,el_residual_p90,sup_boundary_distance,\
sup_curvature,flipped_cells,inner_gap,epsilon_fix,diameter,components";

pub fn write_steps_csv(tr: &FlowTrajectory, w: &mut impl Write) -> Result<()> {
    writeln!(w, "{STEPS_CSV_HEADER}")?;
    for r in &tr.records {
        writeln!(
            w,
            "{},{:?},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{},{:?},{:?},{:?},{}",
            r.k,
            r.time,
            r.volume_cells,
            r.perimeter_before,
            r.perimeter_after,
            r.lambda,
            r.dissipation_term,
            r.el_residual_median,
            r.el_residual_p90,
            r.sup_boundary_distance,
            r.sup_curvature,
            r.flipped_cells,
            r.inner_gap,
            r.epsilon_fix,
            r.diameter,
            r.components
        )?;
    }
    Ok(())
}

/// All trajectory-level scalars, with the resolved config embedded.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: RunConfig,
    pub num_steps: usize,
    pub initial_volume: f64,
    pub final_volume: f64,
    pub initial_perimeter: f64,
    pub final_perimeter: f64,
    pub accumulated_epsilon_fix: f64,
    pub holder_modulus: f64,
    pub multiplier: MultiplierReport,
    pub ball_convergence: BallConvergenceReport,
    /// Residuals of the distributional identities (runs of >= 10 steps).
    pub weak_form: Option<WeakFormReport>,
    /// Density report of the first, middle and last step.
    pub density: Vec<DensityReport>,
    /// One interface layer's worth of volume, `P(E_0) * dx`: the unit in
    /// which symmetric-difference tolerances are stated.
    pub epsilon_grid_volume: f64,
}

pub fn summarize(cfg: &RunConfig, tr: &FlowTrajectory) -> Result<RunSummary> {
    let n = tr.records.len();
    let p0 = tr.records[0].perimeter_before;
    let pt = tr.records[n - 1].perimeter_after;
    let mut density = Vec::new();
    for k in [0, n / 2, n - 1] {
        if density.iter().all(|d: &DensityReport| d.k != k) {
            density.push(density_report(tr, k)?);
        }
    }
    Ok(RunSummary {
        config: cfg.clone(),
        num_steps: n,
        initial_volume: volume(&tr.sets[0]),
        final_volume: volume(tr.sets.last().expect("nonempty")),
        initial_perimeter: p0,
        final_perimeter: pt,
        accumulated_epsilon_fix: tr.records.iter().map(|r| r.epsilon_fix).sum(),
        holder_modulus: holder_modulus(tr)?,
        multiplier: multiplier_report(tr),
        ball_convergence: ball_convergence_report(tr)?,
        weak_form: if n >= 10 {
            Some(weak_form_residual(tr)?)
        } else {
            None
        },
        density,
        epsilon_grid_volume: p0 * tr.domain.dx,
    })
}

fn time_tag(t: f64) -> String {
    // fixed-width tag keeps directory listings sorted by time
    format!("{t:012.6}")
}

/// Write steps.csv, summary.json and the mask snapshots of a finished run.
pub fn write_run_outputs(
    cfg: &RunConfig,
    tr: &FlowTrajectory,
    out_dir: &Path,
    with_pgm: bool,
) -> Result<RunSummary> {
    fs::create_dir_all(out_dir)?;
    let mut csv = Vec::new();
    write_steps_csv(tr, &mut csv)?;
    fs::write(out_dir.join("steps.csv"), csv)?;

    let summary = summarize(cfg, tr)?;
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| crate::error::Error::InvalidConfig(format!("summary encoding: {e}")))?;
    fs::write(out_dir.join("summary.json"), json + "\n")?;

    let masks = out_dir.join("masks");
    fs::create_dir_all(&masks)?;
    for (t, set) in tr.snapshots() {
        save_mask(set, &masks.join(format!("t_{}.mask", time_tag(t))))?;
        if with_pgm {
            save_pgm(set, &masks.join(format!("t_{}.pgm", time_tag(t))))?;
        }
    }
    Ok(summary)
}

/// One row of the cross-resolution comparison: a fixed physical time, the
/// per-run perimeters and the symmetric differences between consecutive
/// ladder entries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyRow {
    pub time: f64,
    pub perimeters: Vec<f64>,
    pub sym_diffs: Vec<f64>,
}

/// Compare ladder runs at the snapshot times of the first (coarsest) run.
pub fn compose_study_rows(runs: &[(f64, FlowTrajectory)]) -> Result<Vec<StudyRow>> {
    let t_max = runs
        .iter()
        .map(|(_, tr)| tr.records.len() as f64 * tr.h)
        .fold(f64::INFINITY, f64::min);
    let coarsest = &runs[0].1;
    let mut rows = Vec::new();
    for &k in &coarsest.snapshot_steps {
        let t = k as f64 * coarsest.h;
        if t > t_max + 1e-9 {
            continue;
        }
        let sets: Vec<_> = runs.iter().map(|(_, tr)| tr.set_at(t)).collect();
        let perimeters = runs
            .iter()
            .zip(&sets)
            .map(|((_, tr), s)| crate::energy::perimeter(s, tr.kind, None))
            .collect();
        let mut sym_diffs = Vec::new();
        for pair in sets.windows(2) {
            sym_diffs.push(crate::geometry::sym_diff_volume(pair[0], pair[1])?);
        }
        rows.push(StudyRow {
            time: t,
            perimeters,
            sym_diffs,
        });
    }
    Ok(rows)
}

/// Per-run scalars repeated in the study summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyRunScalars {
    pub h: f64,
    pub holder_modulus: f64,
    pub max_abs_lambda_sqrt_h: f64,
    pub weak_form_residual: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudySummary {
    pub runs: Vec<StudyRunScalars>,
    pub rows: Vec<StudyRow>,
}

pub fn study_summary(runs: &[(f64, FlowTrajectory)]) -> Result<StudySummary> {
    let mut scalars = Vec::new();
    for (h, tr) in runs {
        scalars.push(StudyRunScalars {
            h: *h,
            holder_modulus: holder_modulus(tr)?,
            max_abs_lambda_sqrt_h: multiplier_report(tr).max_abs_lambda_sqrt_h,
            weak_form_residual: if tr.records.len() >= 10 {
                Some(weak_form_residual(tr)?.max_residual)
            } else {
                None
            },
        });
    }
    Ok(StudySummary {
        runs: scalars,
        rows: compose_study_rows(runs)?,
    })
}

pub fn write_study_csv(s: &StudySummary, w: &mut impl Write) -> Result<()> {
    for r in &s.runs {
        writeln!(
            w,
            "# h={:?} holder={:?} max_lambda_sqrt_h={:?} weak_form={}",
            r.h,
            r.holder_modulus,
            r.max_abs_lambda_sqrt_h,
            r.weak_form_residual
                .map(|v| format!("{v:?}"))
                .unwrap_or_else(|| "n/a".into())
        )?;
    }
    let n = s.runs.len();
    let mut header = String::from("time");
    for i in 0..n {
        header.push_str(&format!(",perimeter_h{i}"));
    }
    for i in 0..n.saturating_sub(1) {
        header.push_str(&format!(",symdiff_h{i}_h{}", i + 1));
    }
    writeln!(w, "{header}")?;
    for row in &s.rows {
        let mut line = format!("{:?}", row.time);
        for p in &row.perimeters {
            line.push_str(&format!(",{p:?}"));
        }
        for d in &row.sym_diffs {
            line.push_str(&format!(",{d:?}"));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}
