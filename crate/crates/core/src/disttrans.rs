//! Exact Euclidean signed distance fields on the grid.
//!
//! Distances are measured between cell centers with a separable lower-envelope
//! transform on squared distances, then offset by half a cell so the zero
//! level sits on the faces between set and complement cells.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{BinarySet, GridDomain, ScalarField};

/// Signed distance to the interface of a driving set: negative inside,
/// positive outside, `|value| >= dx/2` everywhere (face convention).
#[derive(Debug, Clone)]
pub struct SignedDistanceField {
    pub domain: GridDomain,
    pub values: Vec<f64>,
    /// Cell count of the set this field was computed from.
    pub source_cells: usize,
}

impl SignedDistanceField {
    pub fn to_scalar_field(&self) -> ScalarField {
        ScalarField::new(self.domain, self.values.clone()).expect("finite by construction")
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.domain.idx(i, j)]
    }
}

const INF: f64 = 1e30;

/// One-dimensional squared distance transform (lower envelope of parabolas).
/// Sample values at or above `INF` carry no parabola.
fn dt1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let Some(q0) = f.iter().position(|&x| x < INF) else {
        out.fill(INF);
        return;
    };
    let mut k = 0usize;
    v[0] = q0;
    z[0] = -INF;
    z[1] = INF;
    for q in (q0 + 1)..n {
        if f[q] >= INF {
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            if s <= z[k] {
                // z[0] = -inf, so k > 0 here
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = INF;
                break;
            }
        }
    }
    let mut k2 = 0usize;
    for q in 0..n {
        while z[k2 + 1] < q as f64 {
            k2 += 1;
        }
        let p = v[k2];
        let d = q as f64 - p as f64;
        out[q] = d * d + f[p];
    }
}

/// Squared distances (in index units) from every cell center to the nearest
/// cell center where `source` is true. Cells without any source get `INF`.
fn squared_distance_to(domain: GridDomain, source: &[bool]) -> Vec<f64> {
    let (nx, ny) = (domain.nx, domain.ny);
    // column pass: per (i), 1D transform along j of the 0/INF indicator
    let mut colpass = vec![0.0f64; nx * ny];
    colpass
        .par_chunks_mut(ny)
        .enumerate()
        .for_each(|(i, chunk)| {
            let mut f = vec![0.0f64; ny];
            let mut v = vec![0usize; ny];
            let mut z = vec![0.0f64; ny + 1];
            for j in 0..ny {
                f[j] = if source[j * nx + i] { 0.0 } else { INF };
            }
            if f.iter().all(|&x| x >= INF) {
                chunk.copy_from_slice(&f);
            } else {
                dt1d(&f, chunk, &mut v, &mut z);
            }
        });
    // row pass: per (j), 1D transform along i of the column-pass values
    let mut out = vec![0.0f64; nx * ny];
    out.par_chunks_mut(nx).enumerate().for_each(|(j, chunk)| {
        let mut f = vec![0.0f64; nx];
        let mut v = vec![0usize; nx];
        let mut z = vec![0.0f64; nx + 1];
        for i in 0..nx {
            f[i] = colpass[i * ny + j];
        }
        dt1d(&f, chunk, &mut v, &mut z);
    });
    out
}

/// Exact signed Euclidean distance field of a set.
///
/// For `x` in the set: `-(dist(x, complement centers) - dx/2)`; outside:
/// `dist(x, set centers) - dx/2`.
pub fn signed_distance(f: &BinarySet) -> Result<SignedDistanceField> {
    if f.is_empty() {
        return Err(Error::EmptySet);
    }
    if f.is_full() {
        return Err(Error::FullSet);
    }
    let d = f.domain;
    let mask = f.mask();
    let comp: Vec<bool> = mask.iter().map(|&b| !b).collect();
    let to_set = squared_distance_to(d, mask);
    let to_comp = squared_distance_to(d, &comp);
    let half = 0.5 * d.dx;
    let values: Vec<f64> = (0..d.cells())
        .map(|idx| {
            if mask[idx] {
                -(to_comp[idx].sqrt() * d.dx - half)
            } else {
                to_set[idx].sqrt() * d.dx - half
            }
        })
        .collect();
    Ok(SignedDistanceField {
        domain: d,
        values,
        source_cells: f.count(),
    })
}

/// All cells with `|d| <= width`, sorted by `|d|` ascending (ties by index).
pub fn restrict_to_band(d: &SignedDistanceField, width: f64) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64)> = d
        .values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v.abs() <= width)
        .map(|(i, &v)| (i, v))
        .collect();
    out.sort_by(|a, b| {
        a.1.abs()
            .partial_cmp(&b.1.abs())
            .unwrap()
            .then(a.0.cmp(&b.0))
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BoundaryCondition, GridDomain};
    use proptest::prelude::*;

    fn grid(nx: usize, ny: usize, dx: f64) -> GridDomain {
        GridDomain::new(nx, ny, dx, BoundaryCondition::Neumann).unwrap()
    }

    /// O(N^2) pairwise oracle, independent of the separable transform.
    fn brute_force_signed(f: &BinarySet) -> Vec<f64> {
        let d = f.domain;
        let mut out = vec![0.0; d.cells()];
        for a in 0..d.cells() {
            let (xa, ya) = d.center(a);
            let inside = f.mask()[a];
            let mut best = f64::INFINITY;
            for b in 0..d.cells() {
                if f.mask()[b] == inside {
                    continue;
                }
                let (xb, yb) = d.center(b);
                let dist = ((xa - xb).powi(2) + (ya - yb).powi(2)).sqrt();
                best = best.min(dist);
            }
            let v = best - 0.5 * d.dx;
            out[a] = if inside { -v } else { v };
        }
        out
    }

    #[test]
    fn single_cell_face_convention() {
        let d = grid(7, 7, 1.0);
        let mut s = BinarySet::empty(d);
        s.set_cell(d.idx(3, 3), true);
        let sdf = signed_distance(&s).unwrap();
        assert!((sdf.get(3, 3) + 0.5).abs() < 1e-12);
        assert!((sdf.get(4, 3) - 0.5).abs() < 1e-12);
        // two rows up, one column right: sqrt(5) - 1/2
        let expect = 5.0f64.sqrt() - 0.5;
        assert!((sdf.get(4, 5) - expect).abs() < 1e-12);
    }

    #[test]
    fn empty_and_full_error() {
        let d = grid(4, 4, 1.0);
        assert!(matches!(
            signed_distance(&BinarySet::empty(d)),
            Err(Error::EmptySet)
        ));
        let full = BinarySet::new(d, vec![true; 16]).unwrap();
        assert!(matches!(signed_distance(&full), Err(Error::FullSet)));
    }

    #[test]
    fn matches_brute_force_on_disk() {
        let d = grid(24, 20, 0.5);
        let s = BinarySet::disk(d, 6.0, 5.0, 3.2);
        let sdf = signed_distance(&s).unwrap();
        let oracle = brute_force_signed(&s);
        for (a, b) in sdf.values.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn band_halfplane_two_layers() {
        let d = grid(10, 10, 1.0);
        let s = BinarySet::from_fn(d, |x, _| x < 5.0);
        let sdf = signed_distance(&s).unwrap();
        // the face convention puts the first layers at exactly dx/2
        let band = restrict_to_band(&sdf, 0.5);
        assert_eq!(band.len(), 20);
        for (idx, _) in band {
            let (i, _) = d.coords(idx);
            assert!(i == 4 || i == 5);
        }
    }

    #[test]
    fn band_width_over_diameter_is_everything() {
        let d = grid(8, 8, 1.0);
        let s = BinarySet::disk(d, 4.0, 4.0, 2.0);
        let sdf = signed_distance(&s).unwrap();
        assert_eq!(restrict_to_band(&sdf, d.diameter()).len(), 64);
    }

    #[test]
    fn band_annulus_count_on_disk() {
        // disk of radius 10 dx, band width 2 dx: annulus of ~ 2*pi*10*4 cells
        let d = grid(64, 64, 1.0);
        let s = BinarySet::disk(d, 32.0, 32.0, 10.0);
        let sdf = signed_distance(&s).unwrap();
        let n = restrict_to_band(&sdf, 2.0).len() as f64;
        let expect = 2.0 * std::f64::consts::PI * 10.0 * 4.0;
        assert!((n - expect).abs() / expect < 0.2, "count {n} vs {expect}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn exact_vs_brute_force(bits in proptest::collection::vec(any::<bool>(), 64)) {
            prop_assume!(bits.iter().any(|&b| b) && bits.iter().any(|&b| !b));
            let d = grid(8, 8, 0.25);
            let s = BinarySet::new(d, bits).unwrap();
            let sdf = signed_distance(&s).unwrap();
            let oracle = brute_force_signed(&s);
            for (a, b) in sdf.values.iter().zip(&oracle) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn lipschitz_sign_and_complement(bits in proptest::collection::vec(any::<bool>(), 49)) {
            prop_assume!(bits.iter().any(|&b| b) && bits.iter().any(|&b| !b));
            let d = grid(7, 7, 0.5);
            let s = BinarySet::new(d, bits.clone()).unwrap();
            let comp = BinarySet::new(d, bits.iter().map(|&b| !b).collect()).unwrap();
            let sdf = signed_distance(&s).unwrap();
            let sdfc = signed_distance(&comp).unwrap();
            for idx in 0..d.cells() {
                // sign consistency and face convention
                prop_assert_eq!(sdf.values[idx] < 0.0, bits[idx]);
                prop_assert!(sdf.values[idx].abs() >= 0.5 * d.dx - 1e-12);
                prop_assert!(sdf.values[idx].abs() <= d.diameter());
                // antisymmetry under complement
                prop_assert!((sdf.values[idx] + sdfc.values[idx]).abs() < 1e-12);
            }
            // 1-Lipschitz across faces
            for j in 0..d.ny {
                for i in 0..d.nx {
                    if i + 1 < d.nx {
                        prop_assert!((sdf.get(i, j) - sdf.get(i + 1, j)).abs() <= d.dx + 1e-12);
                    }
                    if j + 1 < d.ny {
                        prop_assert!((sdf.get(i, j) - sdf.get(i, j + 1)).abs() <= d.dx + 1e-12);
                    }
                }
            }
        }
    }
}
