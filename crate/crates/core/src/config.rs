//! Run configuration: a flat key=value text format with units spelled out
//! in the key names, experiment presets, and validation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::energy::PerimeterKind;
use crate::error::{Error, Result};
use crate::flow::{FlowConfig, RESOLUTION_GUARD_CELLS};
use crate::geometry::{BinarySet, BoundaryCondition, GridDomain};
use crate::mmsolver::{StepConfig, StepMode};

/// Initial-set specification: a named preset with parameters, or a mask
/// file. Lengths are in physical units of the box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialSet {
    Ball {
        cx: f64,
        cy: f64,
        r: f64,
    },
    Ellipse {
        cx: f64,
        cy: f64,
        a: f64,
        b: f64,
    },
    /// Two equal balls with the given surface gap, side by side.
    TwoBalls {
        cx: f64,
        cy: f64,
        r: f64,
        gap: f64,
    },
    PerturbedCircle {
        cx: f64,
        cy: f64,
        r: f64,
        amplitude: f64,
        wavenumber: u32,
    },
    FromFile {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub grid_nx: usize,
    pub grid_ny: usize,
    pub dx_length: f64,
    pub boundary: BoundaryCondition,
    pub initial: InitialSet,
    pub h_time: f64,
    pub t_end_time: f64,
    pub snapshot_factor: f64,
    pub perimeter: PerimeterKind,
    pub mode: StepMode,
    pub inner_tol_energy: f64,
    pub inner_max_iters: usize,
    pub lambda_tol_cells: usize,
    pub seed: u64,
    pub override_resolution_guard: bool,
}

impl RunConfig {
    /// A ready-to-run ball preset in the unit box.
    pub fn ball_default() -> Self {
        let n = 128;
        let dx = 1.0 / n as f64;
        RunConfig {
            grid_nx: n,
            grid_ny: n,
            dx_length: dx,
            boundary: BoundaryCondition::Neumann,
            initial: InitialSet::Ball {
                cx: 0.5,
                cy: 0.5,
                r: 0.25,
            },
            h_time: (6.0 * dx).powi(2),
            t_end_time: 30.0 * (6.0 * dx).powi(2),
            snapshot_factor: 1.5,
            perimeter: PerimeterKind::Isotropic,
            mode: StepMode::VolumeConstrained,
            inner_tol_energy: 1e-4,
            inner_max_iters: 20_000,
            lambda_tol_cells: 0,
            seed: 0,
            override_resolution_guard: false,
        }
    }

    pub fn domain(&self) -> Result<GridDomain> {
        GridDomain::new(self.grid_nx, self.grid_ny, self.dx_length, self.boundary)
    }

    pub fn validate(&self) -> Result<()> {
        let _ = self.domain()?;
        if !(self.h_time > 0.0) {
            return Err(Error::InvalidConfig("h_time must be > 0".into()));
        }
        if !(self.t_end_time >= self.h_time) {
            return Err(Error::InvalidConfig(
                "t_end_time must allow at least one step".into(),
            ));
        }
        if !(self.snapshot_factor > 1.0) {
            return Err(Error::InvalidConfig("snapshot_factor must be > 1".into()));
        }
        if self.h_time.sqrt() < RESOLUTION_GUARD_CELLS * self.dx_length
            && !self.override_resolution_guard
        {
            return Err(Error::InvalidConfig(format!(
                "resolution guard: sqrt(h_time) = {:.4e} < {} * dx_length = {:.4e}; \
                 the dissipation band would be under-resolved \
                 (set override_resolution_guard = true to proceed)",
                self.h_time.sqrt(),
                RESOLUTION_GUARD_CELLS,
                RESOLUTION_GUARD_CELLS * self.dx_length
            )));
        }
        Ok(())
    }

    pub fn flow_config(&self) -> Result<FlowConfig> {
        self.validate()?;
        let mut step = StepConfig::new(self.h_time, self.perimeter)?;
        step.inner_tol = self.inner_tol_energy;
        step.inner_max_iters = self.inner_max_iters;
        step.lambda_tol = self.lambda_tol_cells;
        step.mode = self.mode;
        Ok(FlowConfig {
            step,
            t_end: self.t_end_time,
            snapshot_factor: self.snapshot_factor,
        })
    }

    /// Materialize the initial set on the configured grid.
    pub fn build_initial_set(&self) -> Result<BinarySet> {
        let d = self.domain()?;
        let set = match &self.initial {
            InitialSet::Ball { cx, cy, r } => BinarySet::disk(d, *cx, *cy, *r),
            InitialSet::Ellipse { cx, cy, a, b } => BinarySet::ellipse(d, *cx, *cy, *a, *b),
            InitialSet::TwoBalls { cx, cy, r, gap } => {
                let off = r + 0.5 * gap;
                BinarySet::from_fn(d, |x, y| {
                    let left = (x - (cx - off)).powi(2) + (y - cy).powi(2) <= r * r;
                    let right = (x - (cx + off)).powi(2) + (y - cy).powi(2) <= r * r;
                    left || right
                })
            }
            InitialSet::PerturbedCircle {
                cx,
                cy,
                r,
                amplitude,
                wavenumber,
            } => BinarySet::perturbed_disk(d, *cx, *cy, *r, *amplitude, *wavenumber),
            InitialSet::FromFile { path } => {
                let s = crate::geometry::load_mask(path)?;
                if s.domain != d {
                    return Err(Error::InvalidConfig(format!(
                        "mask file {} has grid {}x{} dx {:?}, config says {}x{} dx {:?}",
                        path.display(),
                        s.domain.nx,
                        s.domain.ny,
                        s.domain.dx,
                        d.nx,
                        d.ny,
                        d.dx
                    )));
                }
                s
            }
        };
        if set.is_empty() {
            return Err(Error::EmptySet);
        }
        if set.is_full() {
            return Err(Error::FullSet);
        }
        Ok(set)
    }

    /// Serialize as the flat key=value format; parsing this text yields an
    /// equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("grid_nx", self.grid_nx.to_string());
        kv("grid_ny", self.grid_ny.to_string());
        kv("dx_length", format!("{:?}", self.dx_length));
        kv(
            "boundary",
            match self.boundary {
                BoundaryCondition::Neumann => "neumann".into(),
                BoundaryCondition::Periodic => "periodic".into(),
            },
        );
        match &self.initial {
            InitialSet::Ball { cx, cy, r } => {
                kv("preset", "ball".into());
                kv("center_x_length", format!("{cx:?}"));
                kv("center_y_length", format!("{cy:?}"));
                kv("radius_length", format!("{r:?}"));
            }
            InitialSet::Ellipse { cx, cy, a, b } => {
                kv("preset", "ellipse".into());
                kv("center_x_length", format!("{cx:?}"));
                kv("center_y_length", format!("{cy:?}"));
                kv("axis_a_length", format!("{a:?}"));
                kv("axis_b_length", format!("{b:?}"));
            }
            InitialSet::TwoBalls { cx, cy, r, gap } => {
                kv("preset", "two-balls".into());
                kv("center_x_length", format!("{cx:?}"));
                kv("center_y_length", format!("{cy:?}"));
                kv("radius_length", format!("{r:?}"));
                kv("gap_length", format!("{gap:?}"));
            }
            InitialSet::PerturbedCircle {
                cx,
                cy,
                r,
                amplitude,
                wavenumber,
            } => {
                kv("preset", "perturbed-circle".into());
                kv("center_x_length", format!("{cx:?}"));
                kv("center_y_length", format!("{cy:?}"));
                kv("radius_length", format!("{r:?}"));
                kv("amplitude_length", format!("{amplitude:?}"));
                kv("wavenumber", wavenumber.to_string());
            }
            InitialSet::FromFile { path } => {
                kv("preset", "from-file".into());
                kv("mask_path", path.display().to_string());
            }
        }
        kv("h_time", format!("{:?}", self.h_time));
        kv("t_end_time", format!("{:?}", self.t_end_time));
        kv("snapshot_factor", format!("{:?}", self.snapshot_factor));
        kv(
            "perimeter",
            match self.perimeter {
                PerimeterKind::Anisotropic4 => "anisotropic4".into(),
                PerimeterKind::Isotropic => "isotropic".into(),
            },
        );
        kv(
            "mode",
            match self.mode {
                StepMode::VolumeConstrained => "constrained".into(),
                StepMode::Unconstrained => "unconstrained".into(),
            },
        );
        kv("inner_tol_energy", format!("{:?}", self.inner_tol_energy));
        kv("inner_max_iters", self.inner_max_iters.to_string());
        kv("lambda_tol_cells", self.lambda_tol_cells.to_string());
        kv("seed", self.seed.to_string());
        kv(
            "override_resolution_guard",
            self.override_resolution_guard.to_string(),
        );
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut map: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::InvalidConfig(format!(
                    "line {}: expected key = value, got {line:?}",
                    lineno + 1
                )));
            };
            if map
                .insert(k.trim().to_string(), v.trim().to_string())
                .is_some()
            {
                return Err(Error::InvalidConfig(format!(
                    "duplicate key {:?}",
                    k.trim()
                )));
            }
        }
        let mut take = |k: &str| -> Result<String> {
            map.remove(k)
                .ok_or_else(|| Error::InvalidConfig(format!("missing key {k:?}")))
        };
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::InvalidConfig(format!("key {k:?}: cannot parse {v:?}")))
        }
        let grid_nx = num("grid_nx", &take("grid_nx")?)?;
        let grid_ny = num("grid_ny", &take("grid_ny")?)?;
        let dx_length = num("dx_length", &take("dx_length")?)?;
        let boundary = match take("boundary")?.as_str() {
            "neumann" => BoundaryCondition::Neumann,
            "periodic" => BoundaryCondition::Periodic,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "boundary must be neumann or periodic, got {other:?}"
                )))
            }
        };
        let preset = take("preset")?;
        let initial = match preset.as_str() {
            "ball" => InitialSet::Ball {
                cx: num("center_x_length", &take("center_x_length")?)?,
                cy: num("center_y_length", &take("center_y_length")?)?,
                r: num("radius_length", &take("radius_length")?)?,
            },
            "ellipse" => InitialSet::Ellipse {
                cx: num("center_x_length", &take("center_x_length")?)?,
                cy: num("center_y_length", &take("center_y_length")?)?,
                a: num("axis_a_length", &take("axis_a_length")?)?,
                b: num("axis_b_length", &take("axis_b_length")?)?,
            },
            "two-balls" => InitialSet::TwoBalls {
                cx: num("center_x_length", &take("center_x_length")?)?,
                cy: num("center_y_length", &take("center_y_length")?)?,
                r: num("radius_length", &take("radius_length")?)?,
                gap: num("gap_length", &take("gap_length")?)?,
            },
            "perturbed-circle" => InitialSet::PerturbedCircle {
                cx: num("center_x_length", &take("center_x_length")?)?,
                cy: num("center_y_length", &take("center_y_length")?)?,
                r: num("radius_length", &take("radius_length")?)?,
                amplitude: num("amplitude_length", &take("amplitude_length")?)?,
                wavenumber: num("wavenumber", &take("wavenumber")?)?,
            },
            "from-file" => InitialSet::FromFile {
                path: PathBuf::from(take("mask_path")?),
            },
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown preset {other:?} (expected ball, ellipse, two-balls, \
                     perturbed-circle or from-file)"
                )))
            }
        };
        let cfg = RunConfig {
            grid_nx,
            grid_ny,
            dx_length,
            boundary,
            initial,
            h_time: num("h_time", &take("h_time")?)?,
            t_end_time: num("t_end_time", &take("t_end_time")?)?,
            snapshot_factor: num("snapshot_factor", &take("snapshot_factor")?)?,
            perimeter: match take("perimeter")?.as_str() {
                "anisotropic4" => PerimeterKind::Anisotropic4,
                "isotropic" => PerimeterKind::Isotropic,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "perimeter must be anisotropic4 or isotropic, got {other:?}"
                    )))
                }
            },
            mode: match take("mode")?.as_str() {
                "constrained" => StepMode::VolumeConstrained,
                "unconstrained" => StepMode::Unconstrained,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "mode must be constrained or unconstrained, got {other:?}"
                    )))
                }
            },
            inner_tol_energy: num("inner_tol_energy", &take("inner_tol_energy")?)?,
            inner_max_iters: num("inner_max_iters", &take("inner_max_iters")?)?,
            lambda_tol_cells: num("lambda_tol_cells", &take("lambda_tol_cells")?)?,
            seed: num("seed", &take("seed")?)?,
            override_resolution_guard: num(
                "override_resolution_guard",
                &take("override_resolution_guard")?,
            )?,
        };
        if let Some(k) = map.keys().next() {
            return Err(Error::InvalidConfig(format!("unknown key {k:?}")));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn roundtrip_every_preset() {
        let base = RunConfig::ball_default();
        let presets = vec![
            InitialSet::Ball {
                cx: 0.5,
                cy: 0.5,
                r: 0.25,
            },
            InitialSet::Ellipse {
                cx: 0.5,
                cy: 0.4,
                a: 0.3,
                b: 0.15,
            },
            InitialSet::TwoBalls {
                cx: 0.5,
                cy: 0.5,
                r: 0.12,
                gap: 0.1,
            },
            InitialSet::PerturbedCircle {
                cx: 0.5,
                cy: 0.5,
                r: 0.2,
                amplitude: 0.03,
                wavenumber: 5,
            },
            InitialSet::FromFile {
                path: PathBuf::from("/tmp/some.mask"),
            },
        ];
        for p in presets {
            let cfg = RunConfig {
                initial: p,
                ..base.clone()
            };
            let text = cfg.to_text();
            let back = RunConfig::from_text(&text).unwrap();
            assert_eq!(back, cfg, "roundtrip failed for\n{text}");
        }
    }

    #[test]
    fn resolution_guard_rejects_and_overrides() {
        let mut cfg = RunConfig::ball_default();
        cfg.h_time = (2.0 * cfg.dx_length).powi(2);
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        cfg.override_resolution_guard = true;
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_unknown_and_missing_keys() {
        let cfg = RunConfig::ball_default();
        let mut text = cfg.to_text();
        text.push_str("mystery_knob = 7\n");
        assert!(RunConfig::from_text(&text).is_err());
        let partial: String = cfg
            .to_text()
            .lines()
            .filter(|l| !l.starts_with("h_time"))
            .map(|l| format!("{l}\n"))
            .collect();
        assert!(RunConfig::from_text(&partial).is_err());
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let cfg = RunConfig::ball_default();
        let text = format!("# a comment\n\n{}\n# trailing\n", cfg.to_text());
        assert_eq!(RunConfig::from_text(&text).unwrap(), cfg);
    }

    #[test]
    fn two_balls_builds_two_components() {
        let mut cfg = RunConfig::ball_default();
        cfg.initial = InitialSet::TwoBalls {
            cx: 0.5,
            cy: 0.5,
            r: 0.12,
            gap: 0.1,
        };
        let s = cfg.build_initial_set().unwrap();
        let (_, n) = crate::geometry::connected_components(&s);
        assert_eq!(n, 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn roundtrip_random_scalars(h in 1e-6f64..1.0, t in 1e-3f64..100.0,
                                    seed in any::<u64>(), tol in 1e-9f64..1e-2) {
            let mut cfg = RunConfig::ball_default();
            cfg.h_time = h;
            cfg.t_end_time = t;
            cfg.seed = seed;
            cfg.inner_tol_energy = tol;
            let back = RunConfig::from_text(&cfg.to_text()).unwrap();
            prop_assert_eq!(back, cfg);
        }
    }
}
