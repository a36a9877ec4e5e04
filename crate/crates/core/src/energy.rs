//! Discrete perimeter functionals, boundary sampling and a mean-curvature
//! estimator.

use serde::{Deserialize, Serialize};

use crate::disttrans::{signed_distance, SignedDistanceField};
use crate::error::{Error, Result};
use crate::geometry::{BinarySet, BoundaryCondition, GridDomain};

/// Two mandatory perimeter discretizations: face counting matches the
/// enumeration oracle exactly, the l2 total variation does not pin
/// interfaces to lattice directions and is the default for flow runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PerimeterKind {
    /// Face counting: 4-neighbor in 2D. Always an integer multiple of dx.
    Anisotropic4,
    /// Discrete l2 total variation of the indicator via one-sided differences.
    Isotropic,
}

/// Half-open cell window `[i0, i1) x [j0, j1)` for localized perimeters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellBox {
    pub i0: usize,
    pub i1: usize,
    pub j0: usize,
    pub j1: usize,
}

impl CellBox {
    pub fn full(d: GridDomain) -> Self {
        CellBox {
            i0: 0,
            i1: d.nx,
            j0: 0,
            j1: d.ny,
        }
    }

    #[inline]
    pub fn contains(&self, i: usize, j: usize) -> bool {
        i >= self.i0 && i < self.i1 && j >= self.j0 && j < self.j1
    }
}

#[inline]
fn at(s: &BinarySet, i: usize, j: usize) -> f64 {
    if s.get(i, j) {
        1.0
    } else {
        0.0
    }
}

/// Forward difference of the indicator in x, honoring the boundary condition
/// (replicate for Neumann, wrap for Periodic); in units of indicator jumps.
#[inline]
fn fwd_dx(s: &BinarySet, i: usize, j: usize) -> f64 {
    let d = s.domain;
    match d.bc {
        BoundaryCondition::Neumann => {
            if i + 1 < d.nx {
                at(s, i + 1, j) - at(s, i, j)
            } else {
                0.0
            }
        }
        BoundaryCondition::Periodic => at(s, (i + 1) % d.nx, j) - at(s, i, j),
    }
}

#[inline]
fn fwd_dy(s: &BinarySet, i: usize, j: usize) -> f64 {
    let d = s.domain;
    match d.bc {
        BoundaryCondition::Neumann => {
            if j + 1 < d.ny {
                at(s, i, j + 1) - at(s, i, j)
            } else {
                0.0
            }
        }
        BoundaryCondition::Periodic => at(s, i, (j + 1) % d.ny) - at(s, i, j),
    }
}

/// Perimeter of a set, optionally localized to a cell window.
///
/// Anisotropic4 counts interface faces whose both incident cells lie in the
/// window; Isotropic sums the l2 norm of the one-sided indicator gradient
/// over window cells. Both scale by `dx^(d-1)`.
pub fn perimeter(s: &BinarySet, kind: PerimeterKind, window: Option<CellBox>) -> f64 {
    let d = s.domain;
    let w = window.unwrap_or_else(|| CellBox::full(d));
    let mut total = 0.0;
    match kind {
        PerimeterKind::Anisotropic4 => {
            let mut faces = 0usize;
            for j in w.j0..w.j1 {
                for i in w.i0..w.i1 {
                    let v = s.get(i, j);
                    // face to the right
                    let right = match d.bc {
                        BoundaryCondition::Neumann => (i + 1 < d.nx).then(|| (i + 1, j)),
                        BoundaryCondition::Periodic => Some(((i + 1) % d.nx, j)),
                    };
                    if let Some((ni, nj)) = right {
                        if w.contains(ni, nj) && s.get(ni, nj) != v {
                            faces += 1;
                        }
                    }
                    // face above
                    let up = match d.bc {
                        BoundaryCondition::Neumann => (j + 1 < d.ny).then(|| (i, j + 1)),
                        BoundaryCondition::Periodic => Some((i, (j + 1) % d.ny)),
                    };
                    if let Some((ni, nj)) = up {
                        if w.contains(ni, nj) && s.get(ni, nj) != v {
                            faces += 1;
                        }
                    }
                }
            }
            total = faces as f64 * d.face_area();
        }
        PerimeterKind::Isotropic => {
            for j in w.j0..w.j1 {
                for i in w.i0..w.i1 {
                    let gx = fwd_dx(s, i, j);
                    let gy = fwd_dy(s, i, j);
                    total += (gx * gx + gy * gy).sqrt();
                }
            }
            total *= d.face_area();
        }
    }
    total
}

/// A curvature sample on the interface band of a set.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryBandSample {
    pub cell: usize,
    /// Discrete mean curvature, 1/length; positive where the set is convex.
    pub curvature: f64,
    /// Signed distance of the sampled set at the cell (about +-dx/2).
    pub signed_distance: f64,
    /// Interface area attributed to the sample (half of its interface faces).
    pub area_weight: f64,
}

/// Half-width (in cells) of the averaging window used by the curvature
/// estimator.
const CURV_WINDOW: isize = 2;

/// Curvature along the interface band via the 5-point Laplacian of the exact
/// signed distance. The pointwise Laplacian of a digitized interface is
/// staircase noise (zero on flat runs, spikes at corners), so each sample
/// averages the Laplacian over a small window restricted to the band where
/// the distance field is smooth; the mean survives because the Laplacian of
/// the true distance varies slowly across the band. Samples within 2 cells
/// of the computational box are discarded (one-sided stencils corrupt the
/// estimate); under periodic boundaries the stencil wraps and nothing is
/// discarded.
pub fn curvature_estimate(s: &BinarySet) -> Result<Vec<BoundaryBandSample>> {
    let sdf = signed_distance(s)?;
    curvature_from_sdf(s, &sdf)
}

/// Same as [`curvature_estimate`] but reusing a precomputed distance field
/// of `s` itself.
pub fn curvature_from_sdf(
    s: &BinarySet,
    sdf: &SignedDistanceField,
) -> Result<Vec<BoundaryBandSample>> {
    let d = s.domain;
    if sdf.domain != d {
        return Err(Error::DomainMismatch("curvature stencil".into()));
    }
    let (nx, ny) = (d.nx as isize, d.ny as isize);
    let dx2 = d.dx * d.dx;
    let periodic = matches!(d.bc, BoundaryCondition::Periodic);
    // pointwise Laplacian wherever the full stencil exists; NAN elsewhere
    let lap: Vec<f64> = (0..d.cells())
        .map(|cell| {
            let (i, j) = d.coords(cell);
            let (i, j) = (i as isize, j as isize);
            if !periodic && (i == 0 || j == 0 || i == nx - 1 || j == ny - 1) {
                return f64::NAN;
            }
            let g = |ii: isize, jj: isize| {
                sdf.get(ii.rem_euclid(nx) as usize, jj.rem_euclid(ny) as usize)
            };
            (g(i - 1, j) + g(i + 1, j) + g(i, j - 1) + g(i, j + 1) - 4.0 * g(i, j)) / dx2
        })
        .collect();
    let band_width = (CURV_WINDOW + 1) as f64 * d.dx;
    let mut out = Vec::new();
    for &cell in &s.interface_cells() {
        let (i, j) = d.coords(cell);
        let (i, j) = (i as isize, j as isize);
        if !periodic && (i < 2 || j < 2 || i >= nx - 2 || j >= ny - 2) {
            continue;
        }
        let mut sum = 0.0;
        let mut count = 0usize;
        for dj in -CURV_WINDOW..=CURV_WINDOW {
            for di in -CURV_WINDOW..=CURV_WINDOW {
                let (ii, jj) = (i + di, j + dj);
                if !periodic && (ii < 0 || jj < 0 || ii >= nx || jj >= ny) {
                    continue;
                }
                let idx = d.idx(ii.rem_euclid(nx) as usize, jj.rem_euclid(ny) as usize);
                if lap[idx].is_nan() || sdf.values[idx].abs() > band_width {
                    continue;
                }
                sum += lap[idx];
                count += 1;
            }
        }
        let curvature = if count > 0 { sum / count as f64 } else { 0.0 };
        let faces = crate::geometry::face_neighbors(d, i as usize, j as usize)
            .into_iter()
            .filter(|&(ni, nj)| s.get(ni, nj) != s.get(i as usize, j as usize))
            .count();
        out.push(BoundaryBandSample {
            cell,
            curvature,
            signed_distance: sdf.values[cell],
            area_weight: faces as f64 * d.face_area() * 0.5,
        });
    }
    Ok(out)
}

/// Isoperimetric ratio `P^2 / (4 pi |E|)` using the given perimeter kind;
/// 1 for a continuum disk, larger otherwise.
pub fn isoperimetric_ratio(s: &BinarySet, kind: PerimeterKind) -> Result<f64> {
    if s.is_empty() {
        return Err(Error::EmptySet);
    }
    let p = perimeter(s, kind, None);
    let v = crate::geometry::volume(s);
    Ok(p * p / (4.0 * std::f64::consts::PI * v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{volume, BoundaryCondition, GridDomain};
    use proptest::prelude::*;

    fn grid(nx: usize, ny: usize, dx: f64) -> GridDomain {
        GridDomain::new(nx, ny, dx, BoundaryCondition::Neumann).unwrap()
    }

    #[test]
    fn single_cell_four_faces() {
        let d = grid(5, 5, 1.0);
        let mut s = BinarySet::empty(d);
        s.set_cell(d.idx(2, 2), true);
        assert_eq!(perimeter(&s, PerimeterKind::Anisotropic4, None), 4.0);
    }

    #[test]
    fn block_perimeter() {
        // a x b block: 2(a + b) at dx = 1
        let d = grid(12, 12, 1.0);
        let s = BinarySet::from_fn(d, |x, y| (2.0..7.0).contains(&x) && (3.0..6.0).contains(&y));
        assert_eq!(perimeter(&s, PerimeterKind::Anisotropic4, None), 16.0);
    }

    #[test]
    fn digitized_disk_isotropic_constant() {
        // One-sided differences are exact on one diagonal orientation but put
        // the x- and y-jumps on different cells on the other, overcounting it
        // by sqrt(2); averaged over a full circle of orientations the binary
        // l2 total variation lands at ~1.166x the true length, independent of
        // resolution. The constant is pinned here because flow diagnostics
        // only ever compare this perimeter against itself.
        let d = grid(64, 64, 1.0);
        let s = BinarySet::disk(d, 32.0, 32.0, 20.0);
        let p = perimeter(&s, PerimeterKind::Isotropic, None);
        let exact = 2.0 * std::f64::consts::PI * 20.0;
        assert!(
            (p / exact - 1.166).abs() < 0.02,
            "isotropic {p} vs exact {exact} (ratio {})",
            p / exact
        );
    }

    #[test]
    fn halfplane_curvature_zero() {
        let d = grid(16, 16, 1.0);
        let s = BinarySet::from_fn(d, |x, _| x < 8.0);
        let samples = curvature_estimate(&s).unwrap();
        assert!(!samples.is_empty());
        for smp in samples {
            assert!(smp.curvature.abs() < 1e-6);
        }
    }

    #[test]
    fn disk_curvature_one_over_r() {
        let d = grid(48, 48, 1.0);
        let r = 16.0;
        let s = BinarySet::disk(d, 24.0, 24.0, r);
        let mut curv: Vec<f64> = curvature_estimate(&s)
            .unwrap()
            .iter()
            .map(|b| b.curvature)
            .collect();
        curv.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = curv[curv.len() / 2];
        assert!(
            (median - 1.0 / r).abs() < 0.15 / r,
            "median {median} vs {}",
            1.0 / r
        );
        // complement flips the sign
        let comp = BinarySet::new(d, s.mask().iter().map(|&b| !b).collect()).unwrap();
        let mut curv_c: Vec<f64> = curvature_estimate(&comp)
            .unwrap()
            .iter()
            .map(|b| b.curvature)
            .collect();
        curv_c.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median_c = curv_c[curv_c.len() / 2];
        assert!((median_c + 1.0 / r).abs() < 0.15 / r);
    }

    #[test]
    fn curvature_rejects_empty_and_full() {
        let d = grid(8, 8, 1.0);
        assert!(curvature_estimate(&BinarySet::empty(d)).is_err());
        let full = BinarySet::new(d, vec![true; 64]).unwrap();
        assert!(curvature_estimate(&full).is_err());
    }

    #[test]
    fn isoperimetric_disk_square_two_disks() {
        let d = grid(128, 128, 1.0);
        let disk = BinarySet::disk(d, 64.0, 64.0, 20.0);
        let ratio = isoperimetric_ratio(&disk, PerimeterKind::Isotropic).unwrap();
        // grid floor: 1.166^2 from the digitization constant of the l2 TV
        assert!((1.30..=1.40).contains(&ratio), "disk ratio {ratio}");

        // square: anisotropic variant gives exactly 4/pi
        let sq = BinarySet::from_fn(d, |x, y| {
            (34.0..94.0).contains(&x) && (34.0..94.0).contains(&y)
        });
        let ratio_a = isoperimetric_ratio(&sq, PerimeterKind::Anisotropic4).unwrap();
        let four_over_pi = 4.0 / std::f64::consts::PI;
        assert!((ratio_a - four_over_pi).abs() < 1e-12);
        let ratio_i = isoperimetric_ratio(&sq, PerimeterKind::Isotropic).unwrap();
        assert!((ratio_i - four_over_pi).abs() / four_over_pi < 0.05);

        // two equal disjoint disks: ratio doubles
        let two = BinarySet::from_fn(d, |x, y| {
            let a = (x - 32.0).powi(2) + (y - 64.0).powi(2) <= 400.0;
            let b = (x - 96.0).powi(2) + (y - 64.0).powi(2) <= 400.0;
            a || b
        });
        let ratio2 = isoperimetric_ratio(&two, PerimeterKind::Isotropic).unwrap();
        assert!((ratio2 / ratio - 2.0).abs() < 0.05, "two-disk ratio {ratio2}");
    }

    #[test]
    fn window_localization() {
        let d = grid(12, 12, 1.0);
        let s = BinarySet::from_fn(d, |x, y| (3.0..9.0).contains(&x) && (3.0..9.0).contains(&y));
        let w1 = CellBox { i0: 0, i1: 6, j0: 0, j1: 12 };
        let w2 = CellBox::full(d);
        for kind in [PerimeterKind::Anisotropic4, PerimeterKind::Isotropic] {
            let p1 = perimeter(&s, kind, Some(w1));
            let p2 = perimeter(&s, kind, Some(w2));
            assert!(p1 <= p2 + 1e-12, "{kind:?}: {p1} > {p2}");
        }
    }

    fn shift_right(s: &BinarySet) -> BinarySet {
        let d = s.domain;
        BinarySet::from_fn(d, |x, y| {
            if x < d.dx {
                false
            } else {
                let i = ((x - d.dx) / d.dx) as usize;
                let j = (y / d.dx) as usize;
                s.get(i.min(d.nx - 1), j.min(d.ny - 1))
            }
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn perimeter_invariants(bits in proptest::collection::vec(any::<bool>(), 100)) {
            let d = grid(10, 10, 0.5);
            // keep the set away from box edges so translations stay inside
            let mut mask = vec![false; 100];
            for j in 2..8 {
                for i in 2..7 {
                    mask[j * 10 + i] = bits[j * 10 + i];
                }
            }
            let s = BinarySet::new(d, mask.clone()).unwrap();
            let comp = BinarySet::new(d, mask.iter().map(|&b| !b).collect()).unwrap();
            let aniso = perimeter(&s, PerimeterKind::Anisotropic4, None);
            let iso = perimeter(&s, PerimeterKind::Isotropic, None);
            // integer multiple of dx
            prop_assert!((aniso / d.dx - (aniso / d.dx).round()).abs() < 1e-9);
            // complement symmetry
            prop_assert!((aniso - perimeter(&comp, PerimeterKind::Anisotropic4, None)).abs() < 1e-12);
            prop_assert!((iso - perimeter(&comp, PerimeterKind::Isotropic, None)).abs() < 1e-12);
            // l1 >= l2 >= l1/sqrt(2)
            prop_assert!(aniso >= iso - 1e-12);
            prop_assert!(aniso <= 2f64.sqrt() * iso + 1e-12);
            // translation invariance
            let t = shift_right(&s);
            prop_assert!((aniso - perimeter(&t, PerimeterKind::Anisotropic4, None)).abs() < 1e-12);
            prop_assert!((iso - perimeter(&t, PerimeterKind::Isotropic, None)).abs() < 1e-12);
        }

        #[test]
        fn volume_is_exact_count(bits in proptest::collection::vec(any::<bool>(), 36)) {
            let d = grid(6, 6, 0.25);
            let s = BinarySet::new(d, bits.clone()).unwrap();
            let n = bits.iter().filter(|&&b| b).count();
            prop_assert_eq!(volume(&s), n as f64 * 0.0625);
        }
    }
}
