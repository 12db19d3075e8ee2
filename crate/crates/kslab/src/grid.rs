//! Masked Cartesian grids over convex planar domains.
//!
//! Cells are uniform squares of side `h`; a cell is Interior iff its center
//! lies strictly inside the continuum domain. Cell centers sit on the lattice
//! `k*h` in both axes, so domain tangency points on the axes fall exactly on
//! lattice points (excluded by strictness), which puts zero-value ghost
//! centers on the boundary itself wherever the extent is a multiple of `h`.

use crate::error::{Error, Result};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

/// Continuum domain description. `Ellipse { alpha, beta }` is the region
/// `alpha^2 x^2 + y^2 < beta^2` (semi-axes `beta/alpha`, `beta`), so
/// `alpha = 1, beta = 1` is the unit disk and small `alpha` a narrow ellipse.
#[derive(Debug, Clone, PartialEq)]
pub enum DomainSpec {
    Ellipse { alpha: f64, beta: f64 },
    Rectangle { half_width: f64, half_height: f64 },
    ConvexPolygon { vertices: Vec<(f64, f64)> },
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            DomainSpec::Ellipse { alpha, beta } => {
                if !(*alpha > 0.0 && *alpha <= 1.0) || !alpha.is_finite() {
                    return Err(Error::InvalidDomain(format!(
                        "ellipse alpha must lie in (0, 1], got {alpha}"
                    )));
                }
                if !(*beta > 0.0) || !beta.is_finite() {
                    return Err(Error::InvalidDomain(format!(
                        "ellipse beta must be positive, got {beta}"
                    )));
                }
                Ok(())
            }
            DomainSpec::Rectangle {
                half_width,
                half_height,
            } => {
                if !(*half_width > 0.0 && *half_height > 0.0)
                    || !half_width.is_finite()
                    || !half_height.is_finite()
                {
                    return Err(Error::InvalidDomain(format!(
                        "rectangle half-sides must be positive, got {half_width} x {half_height}"
                    )));
                }
                Ok(())
            }
            DomainSpec::ConvexPolygon { vertices } => {
                if vertices.len() < 3 {
                    return Err(Error::InvalidDomain(
                        "polygon needs at least 3 vertices".into(),
                    ));
                }
                let v = oriented_ccw(vertices)?;
                let n = v.len();
                for i in 0..n {
                    let a = v[i];
                    let b = v[(i + 1) % n];
                    let c = v[(i + 2) % n];
                    let cross = (b.0 - a.0) * (c.1 - b.1) - (b.1 - a.1) * (c.0 - b.0);
                    if cross <= 0.0 {
                        return Err(Error::InvalidDomain(format!(
                            "polygon is not strictly convex at vertex {}",
                            (i + 1) % n
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    /// Strict containment with a relative guard band of 1e-12: points within
    /// rounding distance of the boundary classify as exterior, so lattice
    /// points that hit the boundary exactly (ellipse poles, rectangle walls)
    /// are excluded deterministically at every resolution.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            DomainSpec::Ellipse { alpha, beta } => {
                let b2 = beta * beta;
                alpha * alpha * x * x + y * y < b2 * (1.0 - 1e-12)
            }
            DomainSpec::Rectangle {
                half_width,
                half_height,
            } => {
                x.abs() < half_width * (1.0 - 1e-12) && y.abs() < half_height * (1.0 - 1e-12)
            }
            DomainSpec::ConvexPolygon { vertices } => {
                let v = match oriented_ccw(vertices) {
                    Ok(v) => v,
                    Err(_) => return false,
                };
                let n = v.len();
                for i in 0..n {
                    let a = v[i];
                    let b = v[(i + 1) % n];
                    let (ex, ey) = (b.0 - a.0, b.1 - a.1);
                    let cross = ex * (y - a.1) - ey * (x - a.0);
                    let scale = (ex * ex + ey * ey).sqrt() * (1.0 + x.abs() + y.abs());
                    if cross <= 1e-12 * scale {
                        return false;
                    }
                }
                true
            }
        }
    }

    /// Half-extent of the bounding box (centered at the origin for the
    /// analytic shapes; polygons report their max coordinate magnitudes).
    pub fn bounding_half_extents(&self) -> (f64, f64) {
        match self {
            DomainSpec::Ellipse { alpha, beta } => (beta / alpha, *beta),
            DomainSpec::Rectangle {
                half_width,
                half_height,
            } => (*half_width, *half_height),
            DomainSpec::ConvexPolygon { vertices } => {
                let bx = vertices.iter().map(|v| v.0.abs()).fold(0.0, f64::max);
                let by = vertices.iter().map(|v| v.1.abs()).fold(0.0, f64::max);
                (bx, by)
            }
        }
    }

    pub fn area(&self) -> f64 {
        match self {
            DomainSpec::Ellipse { alpha, beta } => PI * beta * beta / alpha,
            DomainSpec::Rectangle {
                half_width,
                half_height,
            } => 4.0 * half_width * half_height,
            DomainSpec::ConvexPolygon { vertices } => shoelace_area(vertices).abs(),
        }
    }

    pub fn perimeter(&self) -> f64 {
        match self {
            DomainSpec::Ellipse { alpha, beta } => {
                // Semi-axes a >= b since alpha <= 1.
                let a = beta / alpha;
                let m = 1.0 - alpha * alpha;
                4.0 * a * elliptic_e(m)
            }
            DomainSpec::Rectangle {
                half_width,
                half_height,
            } => 4.0 * (half_width + half_height),
            DomainSpec::ConvexPolygon { vertices } => {
                let n = vertices.len();
                (0..n)
                    .map(|i| {
                        let a = vertices[i];
                        let b = vertices[(i + 1) % n];
                        ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt()
                    })
                    .sum()
            }
        }
    }

    /// Smallest width of the domain (diameter of the thinnest direction).
    pub fn min_thickness(&self) -> f64 {
        match self {
            DomainSpec::Ellipse { beta, .. } => 2.0 * beta,
            DomainSpec::Rectangle {
                half_width,
                half_height,
            } => 2.0 * half_width.min(*half_height),
            DomainSpec::ConvexPolygon { vertices } => {
                // Min width over edge normals; exact for convex polygons.
                let v = match oriented_ccw(vertices) {
                    Ok(v) => v,
                    Err(_) => return 0.0,
                };
                let n = v.len();
                let mut best = f64::INFINITY;
                for i in 0..n {
                    let a = v[i];
                    let b = v[(i + 1) % n];
                    let (ex, ey) = (b.0 - a.0, b.1 - a.1);
                    let len = (ex * ex + ey * ey).sqrt();
                    if len == 0.0 {
                        continue;
                    }
                    let (nx, ny) = (-ey / len, ex / len);
                    let mut lo = f64::INFINITY;
                    let mut hi = f64::NEG_INFINITY;
                    for p in &v {
                        let s = p.0 * nx + p.1 * ny;
                        lo = lo.min(s);
                        hi = hi.max(s);
                    }
                    best = best.min(hi - lo);
                }
                best
            }
        }
    }
}

fn shoelace_area(v: &[(f64, f64)]) -> f64 {
    let n = v.len();
    let mut s = 0.0;
    for i in 0..n {
        let a = v[i];
        let b = v[(i + 1) % n];
        s += a.0 * b.1 - b.0 * a.1;
    }
    0.5 * s
}

fn oriented_ccw(v: &[(f64, f64)]) -> Result<Vec<(f64, f64)>> {
    let s = shoelace_area(v);
    if s == 0.0 {
        return Err(Error::InvalidDomain("polygon has zero area".into()));
    }
    if s > 0.0 {
        Ok(v.to_vec())
    } else {
        Ok(v.iter().rev().cloned().collect())
    }
}

/// Complete elliptic integral of the second kind, parameter m = k^2, via the
/// arithmetic-geometric mean.
pub fn elliptic_e(m: f64) -> f64 {
    assert!((0.0..=1.0).contains(&m), "elliptic_e parameter out of range");
    if m == 0.0 {
        return PI / 2.0;
    }
    if m == 1.0 {
        return 1.0;
    }
    let mut a = 1.0_f64;
    let mut b = (1.0 - m).sqrt();
    let mut c = m.sqrt();
    let mut sum = 0.5 * c * c;
    let mut pow2 = 0.5;
    while c.abs() > 1e-17 {
        let an = 0.5 * (a + b);
        let bn = (a * b).sqrt();
        c = 0.5 * (a - b);
        a = an;
        b = bn;
        pow2 *= 2.0;
        sum += pow2 * c * c;
    }
    (PI / (2.0 * a)) * (1.0 - sum)
}

/// Perimeter/area report: `ratio` is L^2/A, which is at least 4*pi for any
/// planar domain and grows like 4/alpha for thin shapes.
#[derive(Debug, Clone, Copy)]
pub struct IsoperimetricReport {
    pub perimeter: f64,
    pub area: f64,
    pub ratio: f64,
}

pub fn isoperimetric_ratio(spec: &DomainSpec) -> Result<IsoperimetricReport> {
    spec.validate()?;
    let perimeter = spec.perimeter();
    let area = spec.area();
    Ok(IsoperimetricReport {
        perimeter,
        area,
        ratio: perimeter * perimeter / area,
    })
}

/// Neighbor slot order used throughout: [-x, +x, -y, +y].
pub const NBR_XM: usize = 0;
pub const NBR_XP: usize = 1;
pub const NBR_YM: usize = 2;
pub const NBR_YP: usize = 3;

#[derive(Debug)]
pub struct MaskedGrid {
    pub domain: DomainSpec,
    pub h: f64,
    pub nx: usize,
    pub ny: usize,
    /// Lattice coordinate of cell (0, 0); centers at (x0 + i*h, y0 + j*h).
    pub x0: f64,
    pub y0: f64,
    /// Flat (i + nx*j) indices of interior cells, ascending.
    interior: Vec<u32>,
    /// Flat index -> interior index, or -1.
    interior_of_flat: Vec<i32>,
    /// Per interior cell: interior index of each neighbor, or -1 for ghost.
    nbr: Vec<[i32; 4]>,
    /// BFS level to the nearest ghost-adjacent cell (0 = has a ghost neighbor).
    bdry_level: Vec<u32>,
}

impl MaskedGrid {
    pub fn interior_count(&self) -> usize {
        self.interior.len()
    }

    pub fn neighbors(&self, p: usize) -> &[i32; 4] {
        &self.nbr[p]
    }

    /// Cell-center coordinates of interior cell `p`.
    pub fn center(&self, p: usize) -> (f64, f64) {
        let flat = self.interior[p] as usize;
        let i = flat % self.nx;
        let j = flat / self.nx;
        (self.x0 + i as f64 * self.h, self.y0 + j as f64 * self.h)
    }

    /// Distance from the cell center to the staircase boundary, counted in
    /// whole-cell BFS levels: ghost-adjacent cells report h/2.
    pub fn distance_to_boundary(&self, p: usize) -> f64 {
        (self.bdry_level[p] as f64 + 0.5) * self.h
    }

    pub fn bdry_level(&self, p: usize) -> u32 {
        self.bdry_level[p]
    }

    /// Number of ghost (exterior) neighbors of interior cell `p`.
    pub fn ghost_count(&self, p: usize) -> usize {
        self.nbr[p].iter().filter(|&&q| q < 0).count()
    }

    /// Cell-count quadrature area, h^2 per interior cell.
    pub fn cell_area_total(&self) -> f64 {
        self.h * self.h * self.interior.len() as f64
    }

    /// out = -Delta x with zero ghost values (Dirichlet staircase boundary).
    pub fn apply_neg_laplacian_dirichlet(&self, x: &[f64], out: &mut [f64]) {
        let inv_h2 = 1.0 / (self.h * self.h);
        for p in 0..self.interior.len() {
            let mut s = 4.0 * x[p];
            for &q in &self.nbr[p] {
                if q >= 0 {
                    s -= x[q as usize];
                }
            }
            out[p] = s * inv_h2;
        }
    }

    /// out = -Delta x with zero-flux boundary faces (Neumann staircase).
    pub fn apply_neg_laplacian_neumann(&self, x: &[f64], out: &mut [f64]) {
        let inv_h2 = 1.0 / (self.h * self.h);
        for p in 0..self.interior.len() {
            let mut s = 0.0;
            for &q in &self.nbr[p] {
                if q >= 0 {
                    s += x[p] - x[q as usize];
                }
            }
            out[p] = s * inv_h2;
        }
    }

    /// Stable content hash of the discretization (h, extents, mask).
    pub fn fingerprint(&self) -> u64 {
        let mut hash: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                hash ^= b as u64;
                hash = hash.wrapping_mul(0x100000001b3);
            }
        };
        eat(&self.h.to_bits().to_le_bytes());
        eat(&(self.nx as u64).to_le_bytes());
        eat(&(self.ny as u64).to_le_bytes());
        eat(&self.x0.to_bits().to_le_bytes());
        eat(&self.y0.to_bits().to_le_bytes());
        for &f in &self.interior {
            eat(&f.to_le_bytes());
        }
        hash
    }
}

/// Build a masked grid at `resolution` cells per unit length.
///
/// Rejects resolutions under 8 cells across the smallest domain thickness and
/// masks whose widest row or column carries fewer than 4 interior cells.
pub fn build_grid(spec: &DomainSpec, resolution: u32) -> Result<Arc<MaskedGrid>> {
    spec.validate()?;
    if resolution == 0 {
        return Err(Error::GridTooCoarse("resolution must be positive".into()));
    }
    let h = 1.0 / resolution as f64;
    let thickness = spec.min_thickness();
    if thickness * resolution as f64 + 1e-12 < 8.0 {
        return Err(Error::GridTooCoarse(format!(
            "{:.1} cells across the smallest thickness {:.4}; need at least 8 \
             (resolution {resolution})",
            thickness * resolution as f64,
            thickness
        )));
    }

    let (bx, by) = spec.bounding_half_extents();
    let kx = (bx / h).ceil() as i64 + 1;
    let ky = (by / h).ceil() as i64 + 1;
    let nx = (2 * kx + 1) as usize;
    let ny = (2 * ky + 1) as usize;
    let x0 = -(kx as f64) * h;
    let y0 = -(ky as f64) * h;

    let mut mask = vec![false; nx * ny];
    let mut interior: Vec<u32> = Vec::new();
    for j in 0..ny {
        let y = y0 + j as f64 * h;
        for i in 0..nx {
            let x = x0 + i as f64 * h;
            if spec.contains(x, y) {
                mask[i + nx * j] = true;
                interior.push((i + nx * j) as u32);
            }
        }
    }
    if interior.is_empty() {
        return Err(Error::GridTooCoarse("no interior cells".into()));
    }

    // Widest cross-sections must resolve the domain.
    let mut row_max = 0usize;
    let mut col_counts = vec![0usize; nx];
    for j in 0..ny {
        let mut row = 0;
        for i in 0..nx {
            if mask[i + nx * j] {
                row += 1;
                col_counts[i] += 1;
            }
        }
        row_max = row_max.max(row);
    }
    let col_max = col_counts.iter().copied().max().unwrap_or(0);
    if row_max < 4 || col_max < 4 {
        return Err(Error::GridTooCoarse(format!(
            "widest cross-sections have {row_max} x {col_max} interior cells; need at least 4"
        )));
    }

    let mut interior_of_flat = vec![-1i32; nx * ny];
    for (p, &flat) in interior.iter().enumerate() {
        interior_of_flat[flat as usize] = p as i32;
    }

    let mut nbr = vec![[-1i32; 4]; interior.len()];
    for (p, &flat) in interior.iter().enumerate() {
        let flat = flat as usize;
        let i = flat % nx;
        let j = flat / nx;
        if i > 0 {
            nbr[p][NBR_XM] = interior_of_flat[flat - 1];
        }
        if i + 1 < nx {
            nbr[p][NBR_XP] = interior_of_flat[flat + 1];
        }
        if j > 0 {
            nbr[p][NBR_YM] = interior_of_flat[flat - nx];
        }
        if j + 1 < ny {
            nbr[p][NBR_YP] = interior_of_flat[flat + nx];
        }
    }

    // Edge-connectivity of the interior.
    let mut seen = vec![false; interior.len()];
    let mut queue = std::collections::VecDeque::new();
    seen[0] = true;
    queue.push_back(0usize);
    let mut reached = 1usize;
    while let Some(p) = queue.pop_front() {
        for &q in &nbr[p] {
            if q >= 0 && !seen[q as usize] {
                seen[q as usize] = true;
                reached += 1;
                queue.push_back(q as usize);
            }
        }
    }
    if reached != interior.len() {
        return Err(Error::GridTooCoarse(format!(
            "interior is disconnected ({} of {} cells reachable)",
            reached,
            interior.len()
        )));
    }

    // BFS levels from the ghost-adjacent layer.
    let mut bdry_level = vec![u32::MAX; interior.len()];
    let mut queue = std::collections::VecDeque::new();
    for p in 0..interior.len() {
        if nbr[p].iter().any(|&q| q < 0) {
            bdry_level[p] = 0;
            queue.push_back(p);
        }
    }
    while let Some(p) = queue.pop_front() {
        let next = bdry_level[p] + 1;
        for &q in &nbr[p] {
            if q >= 0 && bdry_level[q as usize] > next {
                bdry_level[q as usize] = next;
                queue.push_back(q as usize);
            }
        }
    }

    Ok(Arc::new(MaskedGrid {
        domain: spec.clone(),
        h,
        nx,
        ny,
        x0,
        y0,
        interior,
        interior_of_flat,
        nbr,
        bdry_level,
    }))
}

/// Boundary behavior a field carries into gradient and divergence stencils:
/// density-like fields close boundary faces (no flux), potential-like fields
/// see zero ghost values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryRole {
    DirichletZero,
    NoFlux,
}

#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Arc<MaskedGrid>,
    pub role: BoundaryRole,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &Arc<MaskedGrid>, role: BoundaryRole) -> Self {
        ScalarField {
            grid: Arc::clone(grid),
            role,
            values: vec![0.0; grid.interior_count()],
        }
    }

    pub fn from_fn(grid: &Arc<MaskedGrid>, role: BoundaryRole, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.interior_count());
        for p in 0..grid.interior_count() {
            let (x, y) = grid.center(p);
            values.push(f(x, y));
        }
        ScalarField {
            grid: Arc::clone(grid),
            role,
            values,
        }
    }

    pub fn from_values(grid: &Arc<MaskedGrid>, role: BoundaryRole, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.interior_count() {
            return Err(Error::InvalidInput(format!(
                "field length {} does not match interior count {}",
                values.len(),
                grid.interior_count()
            )));
        }
        Ok(ScalarField {
            grid: Arc::clone(grid),
            role,
            values,
        })
    }

    pub fn grid(&self) -> &Arc<MaskedGrid> {
        &self.grid
    }

    pub fn same_grid(&self, other: &ScalarField) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid)
    }

    /// h^2-weighted sum (cell-count quadrature of the field).
    pub fn integral(&self) -> f64 {
        let h2 = self.grid.h * self.grid.h;
        self.values.iter().sum::<f64>() * h2
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn linf_diff(&self, other: &ScalarField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

/// One face difference: `lo`/`hi` are interior indices on the minus/plus side
/// of the face (None = ghost), `value` the derivative along the +axis.
#[derive(Debug, Clone, Copy)]
pub struct FaceValue {
    pub axis: Axis,
    pub lo: Option<u32>,
    pub hi: Option<u32>,
    pub value: f64,
}

/// Face-centered gradient. Interior faces take central differences across the
/// face; boundary faces follow the field's declared role (zero value for
/// no-flux fields, one-sided difference against a zero ghost for potentials).
pub fn gradient(f: &ScalarField) -> Vec<FaceValue> {
    let g = f.grid();
    let inv_h = 1.0 / g.h;
    let mut faces = Vec::with_capacity(2 * g.interior_count());
    for p in 0..g.interior_count() {
        let nb = g.neighbors(p);
        for (slot, axis) in [(NBR_XP, Axis::X), (NBR_YP, Axis::Y)] {
            let q = nb[slot];
            if q >= 0 {
                faces.push(FaceValue {
                    axis,
                    lo: Some(p as u32),
                    hi: Some(q as u32),
                    value: (f.values[q as usize] - f.values[p]) * inv_h,
                });
            } else {
                faces.push(FaceValue {
                    axis,
                    lo: Some(p as u32),
                    hi: None,
                    value: match f.role {
                        BoundaryRole::DirichletZero => -f.values[p] * inv_h,
                        BoundaryRole::NoFlux => 0.0,
                    },
                });
            }
        }
        for (slot, axis) in [(NBR_XM, Axis::X), (NBR_YM, Axis::Y)] {
            if nb[slot] < 0 {
                faces.push(FaceValue {
                    axis,
                    lo: None,
                    hi: Some(p as u32),
                    value: match f.role {
                        BoundaryRole::DirichletZero => f.values[p] * inv_h,
                        BoundaryRole::NoFlux => 0.0,
                    },
                });
            }
        }
    }
    faces
}

/// Sum of squared face differences times h^2. For a DirichletZero field this
/// matches the quadratic form of the zero-ghost five-point Laplacian exactly.
pub fn dirichlet_energy(f: &ScalarField) -> f64 {
    let g = f.grid();
    let h2 = g.h * g.h;
    gradient(f).iter().map(|fv| fv.value * fv.value).sum::<f64>() * h2
}

/// Write interior cells as `x,y,value` CSV rows (header included).
pub fn write_field_csv(f: &ScalarField, path: &Path) -> Result<()> {
    let mut body = String::from("x,y,value\n");
    let g = f.grid();
    for p in 0..g.interior_count() {
        let (x, y) = g.center(p);
        let _ = writeln!(body, "{x},{y},{}", f.values[p]);
    }
    std::fs::write(path, body)?;
    Ok(())
}

/// Write a 16-bit binary PGM rendering; exterior cells are 0, interior cells
/// map linearly onto 1..=65535.
pub fn write_field_pgm(f: &ScalarField, path: &Path) -> Result<()> {
    let g = f.grid();
    let lo = f.min();
    let hi = f.max();
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut data = Vec::with_capacity(g.nx * g.ny * 2);
    for j in (0..g.ny).rev() {
        for i in 0..g.nx {
            let p = g.interior_of_flat[i + g.nx * j];
            let v: u16 = if p < 0 {
                0
            } else {
                let t = (f.values[p as usize] - lo) / span;
                1 + (t.clamp(0.0, 1.0) * 65534.0).round() as u16
            };
            data.extend_from_slice(&v.to_be_bytes());
        }
    }
    let mut out = std::fs::File::create(path)?;
    write!(out, "P5\n{} {}\n65535\n", g.nx, g.ny)?;
    out.write_all(&data)?;
    Ok(())
}
