//! Uniform grid domain, binary sets, scalar fields and elementary measures.
//!
//! Cells are identified with their centers; a set is a union of closed
//! cells, so volume and symmetric difference reduce to exact cell counts.

use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryCondition {
    Neumann,
    Periodic,
}

impl fmt::Display for BoundaryCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundaryCondition::Neumann => write!(f, "neumann"),
            BoundaryCondition::Periodic => write!(f, "periodic"),
        }
    }
}

/// Uniform Cartesian lattice in 2D. Cell `(i, j)` has its center at
/// `((i + 1/2) dx, (j + 1/2) dx)` and fields are stored row-major
/// (`j * nx + i`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridDomain {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub bc: BoundaryCondition,
}

impl GridDomain {
    pub fn new(nx: usize, ny: usize, dx: f64, bc: BoundaryCondition) -> Result<Self> {
        if nx < 4 || ny < 4 {
            return Err(Error::InvalidGrid(format!(
                "all dims must be >= 4, got {nx}x{ny}"
            )));
        }
        if !(dx > 0.0) || !dx.is_finite() {
            return Err(Error::InvalidGrid(format!("spacing must be > 0, got {dx}")));
        }
        Ok(GridDomain { nx, ny, dx, bc })
    }

    #[inline]
    pub fn cells(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx, idx / self.nx)
    }

    /// Cell-center position of a cell index, in length units.
    #[inline]
    pub fn center(&self, idx: usize) -> (f64, f64) {
        let (i, j) = self.coords(idx);
        ((i as f64 + 0.5) * self.dx, (j as f64 + 0.5) * self.dx)
    }

    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.dx * self.dx
    }

    #[inline]
    pub fn face_area(&self) -> f64 {
        self.dx
    }

    /// Length of the box diagonal; an upper bound on any distance on the grid.
    pub fn diameter(&self) -> f64 {
        self.dx * ((self.nx * self.nx + self.ny * self.ny) as f64).sqrt()
    }
}

/// Per-cell indicator of a set; the discrete set of finite perimeter.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarySet {
    pub domain: GridDomain,
    mask: Vec<bool>,
}

impl BinarySet {
    pub fn new(domain: GridDomain, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != domain.cells() {
            return Err(Error::InvalidGrid(format!(
                "mask length {} does not match {}x{} grid",
                mask.len(),
                domain.nx,
                domain.ny
            )));
        }
        Ok(BinarySet { domain, mask })
    }

    pub fn empty(domain: GridDomain) -> Self {
        BinarySet {
            domain,
            mask: vec![false; domain.cells()],
        }
    }

    /// Build from a cell-center predicate in length units.
    pub fn from_fn(domain: GridDomain, f: impl Fn(f64, f64) -> bool) -> Self {
        let mask = (0..domain.cells())
            .map(|idx| {
                let (x, y) = domain.center(idx);
                f(x, y)
            })
            .collect();
        BinarySet { domain, mask }
    }

    /// Disk of radius `r` centered at `(cx, cy)`.
    pub fn disk(domain: GridDomain, cx: f64, cy: f64, r: f64) -> Self {
        Self::from_fn(domain, |x, y| {
            (x - cx).powi(2) + (y - cy).powi(2) <= r * r
        })
    }

    /// Axis-aligned ellipse with semi-axes `a` (x) and `b` (y).
    pub fn ellipse(domain: GridDomain, cx: f64, cy: f64, a: f64, b: f64) -> Self {
        Self::from_fn(domain, |x, y| {
            ((x - cx) / a).powi(2) + ((y - cy) / b).powi(2) <= 1.0
        })
    }

    /// Disk perturbed radially by `amplitude * cos(wavenumber * theta)`.
    pub fn perturbed_disk(
        domain: GridDomain,
        cx: f64,
        cy: f64,
        r: f64,
        amplitude: f64,
        wavenumber: u32,
    ) -> Self {
        Self::from_fn(domain, |x, y| {
            let (ux, uy) = (x - cx, y - cy);
            let theta = uy.atan2(ux);
            let rho = (ux * ux + uy * uy).sqrt();
            rho <= r + amplitude * (wavenumber as f64 * theta).cos()
        })
    }

    #[inline]
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.mask[self.domain.idx(i, j)]
    }

    pub fn set_cell(&mut self, idx: usize, value: bool) {
        self.mask[idx] = value;
    }

    /// Number of set cells.
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&b| b)
    }

    pub fn is_full(&self) -> bool {
        self.mask.iter().all(|&b| b)
    }

    /// Cells whose full face neighborhood is not uniformly in the same phase,
    /// i.e. cells adjacent to at least one interface face (both phases).
    pub fn interface_cells(&self) -> Vec<usize> {
        let d = self.domain;
        let mut out = Vec::new();
        for j in 0..d.ny {
            for i in 0..d.nx {
                let v = self.get(i, j);
                let mut boundary = false;
                for (ni, nj) in face_neighbors(d, i, j) {
                    if self.get(ni, nj) != v {
                        boundary = true;
                        break;
                    }
                }
                if boundary {
                    out.push(d.idx(i, j));
                }
            }
        }
        out
    }

    /// Maximum distance between interface cell centers; 0 for sets with no
    /// interface (empty or full grid), cell diagonal for a single cell.
    pub fn diameter(&self) -> f64 {
        let cells = self.interface_cells();
        if cells.is_empty() {
            return 0.0;
        }
        if cells.len() == 1 {
            return self.domain.dx * std::f64::consts::SQRT_2;
        }
        let pts: Vec<(f64, f64)> = cells.iter().map(|&c| self.domain.center(c)).collect();
        let mut best = 0.0f64;
        for a in 0..pts.len() {
            for b in (a + 1)..pts.len() {
                let dx = pts[a].0 - pts[b].0;
                let dy = pts[a].1 - pts[b].1;
                best = best.max(dx * dx + dy * dy);
            }
        }
        best.sqrt() + self.domain.dx * std::f64::consts::SQRT_2
    }

    /// True if any set cell lies within `margin` cells of the box edge.
    pub fn touches_margin(&self, margin: usize) -> bool {
        let d = self.domain;
        for j in 0..d.ny {
            for i in 0..d.nx {
                if self.get(i, j)
                    && (i < margin || j < margin || i >= d.nx - margin || j >= d.ny - margin)
                {
                    return true;
                }
            }
        }
        false
    }
}

/// Face-adjacent neighbors of `(i, j)` honoring the boundary condition
/// (Neumann clips, Periodic wraps).
pub fn face_neighbors(d: GridDomain, i: usize, j: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(4);
    match d.bc {
        BoundaryCondition::Neumann => {
            if i > 0 {
                out.push((i - 1, j));
            }
            if i + 1 < d.nx {
                out.push((i + 1, j));
            }
            if j > 0 {
                out.push((i, j - 1));
            }
            if j + 1 < d.ny {
                out.push((i, j + 1));
            }
        }
        BoundaryCondition::Periodic => {
            out.push(((i + d.nx - 1) % d.nx, j));
            out.push(((i + 1) % d.nx, j));
            out.push((i, (j + d.ny - 1) % d.ny));
            out.push((i, (j + 1) % d.ny));
        }
    }
    out
}

/// Volume of a set: (set-cell count) * dx^d, exact in counts.
pub fn volume(s: &BinarySet) -> f64 {
    s.count() as f64 * s.domain.cell_volume()
}

/// Volume of the symmetric difference of two sets on the same domain.
pub fn sym_diff_volume(a: &BinarySet, b: &BinarySet) -> Result<f64> {
    if a.domain != b.domain {
        return Err(Error::DomainMismatch(format!(
            "{}x{} vs {}x{}",
            a.domain.nx, a.domain.ny, b.domain.nx, b.domain.ny
        )));
    }
    let n = a
        .mask
        .iter()
        .zip(&b.mask)
        .filter(|(x, y)| x != y)
        .count();
    Ok(n as f64 * a.domain.cell_volume())
}

/// 4-connected component labels and component count. Label 0 is background.
pub fn connected_components(s: &BinarySet) -> (Vec<u32>, usize) {
    let d = s.domain;
    let mut labels = vec![0u32; d.cells()];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..d.cells() {
        if !s.mask()[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(idx) = stack.pop() {
            let (i, j) = d.coords(idx);
            for (ni, nj) in face_neighbors(d, i, j) {
                let n = d.idx(ni, nj);
                if s.mask()[n] && labels[n] == 0 {
                    labels[n] = next;
                    stack.push(n);
                }
            }
        }
    }
    (labels, next as usize)
}

/// Real value per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub domain: GridDomain,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(domain: GridDomain, values: Vec<f64>) -> Result<Self> {
        if values.len() != domain.cells() {
            return Err(Error::InvalidGrid(format!(
                "field length {} does not match {}x{} grid",
                values.len(),
                domain.nx,
                domain.ny
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(ScalarField { domain, values })
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.domain.idx(i, j)]
    }
}

const MASK_MAGIC: &str = "vpmcf-mask 1";
const FIELD_MAGIC: &str = "vpmcf-field 1";

/// Write a mask: textual header (dims, spacing, bc) then row-major bits,
/// one row of '0'/'1' characters per line.
pub fn save_mask(s: &BinarySet, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    write_mask(s, &mut w)
}

pub fn write_mask(s: &BinarySet, w: &mut impl Write) -> Result<()> {
    let d = s.domain;
    writeln!(w, "{MASK_MAGIC}")?;
    writeln!(w, "dims {} {}", d.nx, d.ny)?;
    writeln!(w, "spacing {:?}", d.dx)?;
    writeln!(w, "bc {}", d.bc)?;
    let mut line = String::with_capacity(d.nx + 1);
    for j in 0..d.ny {
        line.clear();
        for i in 0..d.nx {
            line.push(if s.get(i, j) { '1' } else { '0' });
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn load_mask(path: &Path) -> Result<BinarySet> {
    let file = std::fs::File::open(path)?;
    read_mask(&mut BufReader::new(file))
}

pub fn read_mask(r: &mut impl BufRead) -> Result<BinarySet> {
    let mut lines = r.lines();
    let mut next_line = |what: &str| -> Result<String> {
        lines
            .next()
            .ok_or_else(|| Error::MaskFormat(format!("truncated file, missing {what}")))?
            .map_err(Error::Io)
    };
    let magic = next_line("magic")?;
    if magic.trim() != MASK_MAGIC {
        return Err(Error::MaskFormat(format!("bad magic line {magic:?}")));
    }
    let dims = next_line("dims")?;
    let parts: Vec<&str> = dims.split_whitespace().collect();
    if parts.len() != 3 || parts[0] != "dims" {
        return Err(Error::MaskFormat(format!("bad dims line {dims:?}")));
    }
    if parts.len() > 3 {
        return Err(Error::MaskFormat("3D masks are not supported".into()));
    }
    let nx: usize = parts[1]
        .parse()
        .map_err(|_| Error::MaskFormat(format!("bad nx {:?}", parts[1])))?;
    let ny: usize = parts[2]
        .parse()
        .map_err(|_| Error::MaskFormat(format!("bad ny {:?}", parts[2])))?;
    if nx.checked_mul(ny).is_none() || nx * ny > (1 << 30) {
        return Err(Error::MaskFormat(format!("dimension overflow {nx}x{ny}")));
    }
    let spacing = next_line("spacing")?;
    let dx: f64 = spacing
        .strip_prefix("spacing ")
        .ok_or_else(|| Error::MaskFormat(format!("bad spacing line {spacing:?}")))?
        .trim()
        .parse()
        .map_err(|_| Error::MaskFormat(format!("bad spacing value {spacing:?}")))?;
    let bc_line = next_line("bc")?;
    let bc = match bc_line.strip_prefix("bc ").map(str::trim) {
        Some("neumann") => BoundaryCondition::Neumann,
        Some("periodic") => BoundaryCondition::Periodic,
        _ => return Err(Error::MaskFormat(format!("bad bc line {bc_line:?}"))),
    };
    let domain = GridDomain::new(nx, ny, dx, bc)
        .map_err(|e| Error::MaskFormat(format!("invalid header: {e}")))?;
    let mut mask = Vec::with_capacity(domain.cells());
    for j in 0..ny {
        let row = next_line(&format!("row {j}"))?;
        let row = row.trim();
        if row.len() != nx {
            return Err(Error::MaskFormat(format!(
                "row {j} has {} cells, expected {nx}",
                row.len()
            )));
        }
        for ch in row.chars() {
            match ch {
                '0' => mask.push(false),
                '1' => mask.push(true),
                _ => return Err(Error::MaskFormat(format!("bad cell character {ch:?}"))),
            }
        }
    }
    BinarySet::new(domain, mask)
}

/// 8-bit grayscale export for inspection: binary PGM, 0 or 255 per cell.
pub fn save_pgm(s: &BinarySet, path: &Path) -> Result<()> {
    let d = s.domain;
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write!(w, "P5\n{} {}\n255\n", d.nx, d.ny)?;
    let bytes: Vec<u8> = s.mask().iter().map(|&b| if b { 255 } else { 0 }).collect();
    w.write_all(&bytes)?;
    Ok(())
}

/// Raw dump of a scalar field: same textual header as masks followed by
/// row-major little-endian f64 bytes.
pub fn save_field(f: &ScalarField, path: &Path) -> Result<()> {
    let d = f.domain;
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{FIELD_MAGIC}")?;
    writeln!(w, "dims {} {}", d.nx, d.ny)?;
    writeln!(w, "spacing {:?}", d.dx)?;
    writeln!(w, "bc {}", d.bc)?;
    for v in f.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn load_field(path: &Path) -> Result<ScalarField> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);
    let mut header = Vec::new();
    for what in ["magic", "dims", "spacing", "bc"] {
        let mut line = String::new();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::MaskFormat(format!("truncated file, missing {what}")));
        }
        header.push(line.trim_end().to_string());
    }
    if header[0] != FIELD_MAGIC {
        return Err(Error::MaskFormat(format!("bad magic line {:?}", header[0])));
    }
    let dims: Vec<&str> = header[1].split_whitespace().collect();
    if dims.len() != 3 || dims[0] != "dims" {
        return Err(Error::MaskFormat(format!("bad dims line {:?}", header[1])));
    }
    let nx: usize = dims[1]
        .parse()
        .map_err(|_| Error::MaskFormat("bad nx".into()))?;
    let ny: usize = dims[2]
        .parse()
        .map_err(|_| Error::MaskFormat("bad ny".into()))?;
    let dx: f64 = header[2]
        .strip_prefix("spacing ")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::MaskFormat("bad spacing line".into()))?;
    let bc = match header[3].strip_prefix("bc ").map(str::trim) {
        Some("neumann") => BoundaryCondition::Neumann,
        Some("periodic") => BoundaryCondition::Periodic,
        _ => return Err(Error::MaskFormat("bad bc line".into())),
    };
    let domain = GridDomain::new(nx, ny, dx, bc)
        .map_err(|e| Error::MaskFormat(format!("invalid header: {e}")))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != domain.cells() * 8 {
        return Err(Error::MaskFormat(format!(
            "field payload has {} bytes, expected {}",
            bytes.len(),
            domain.cells() * 8
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ScalarField::new(domain, values)
}
