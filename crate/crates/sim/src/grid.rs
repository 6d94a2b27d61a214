//! Uniform rectangular grids, complex fields on them and the FFT plan used
//! for spectral kinetic steps.
//!
//! Grids are row-major with the last axis contiguous. Coordinates are in
//! metres, wavenumbers in 1/m. Missing axes of a reduced grid read as zero,
//! so a y–z grid samples the `x = 0` plane.

use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use resttrap_core::units::constants::HBAR;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("axis {axis:?}: {reason}")]
    BadAxis { axis: AxisName, reason: &'static str },
    #[error("a grid needs 1 to 3 distinct axes, got {0}")]
    BadDims(usize),
    #[error("field has {got} values, grid has {want} points")]
    Length { want: usize, got: usize },
    #[error("field value at index {0} is not finite")]
    NonFinite(usize),
    #[error("snapshot format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisName {
    X,
    Y,
    Z,
}

impl AxisName {
    pub const ALL: [AxisName; 3] = [AxisName::X, AxisName::Y, AxisName::Z];

    /// Component index in an `[x, y, z]` point.
    pub fn index(self) -> usize {
        match self {
            Self::X => 0,
            Self::Y => 1,
            Self::Z => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub name: AxisName,
    pub points: usize,
    /// Periodic length, m.
    pub extent: f64,
    /// Coordinate of the first point, m.
    pub origin: f64,
}

impl Axis {
    pub fn new(name: AxisName, points: usize, extent: f64, origin: f64) -> Result<Self, GridError> {
        if points < 8 {
            return Err(GridError::BadAxis {
                axis: name,
                reason: "needs at least 8 points",
            });
        }
        if !(extent > 0.0 && extent.is_finite()) || !origin.is_finite() {
            return Err(GridError::BadAxis {
                axis: name,
                reason: "extent must be positive and finite",
            });
        }
        Ok(Self {
            name,
            points,
            extent,
            origin,
        })
    }

    /// Axis symmetric about zero (the point at 0 is included).
    pub fn centered(name: AxisName, points: usize, extent: f64) -> Result<Self, GridError> {
        let h = extent / points as f64;
        Self::new(name, points, extent, -h * (points / 2) as f64)
    }

    pub fn spacing(&self) -> f64 {
        self.extent / self.points as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        self.origin + i as f64 * self.spacing()
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.points).map(|i| self.coord(i)).collect()
    }

    /// DFT-ordered wavenumbers `2π j / L`, `j = 0, 1, …, n/2−1, −n/2, …, −1`.
    pub fn wavenumbers(&self) -> Vec<f64> {
        let n = self.points as i64;
        let dk = 2.0 * std::f64::consts::PI / self.extent;
        (0..n)
            .map(|j| if j < (n + 1) / 2 { j } else { j - n })
            .map(|j| j as f64 * dk)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    axes: Vec<Axis>,
    strides: Vec<usize>,
    len: usize,
}

impl Grid {
    pub fn new(axes: Vec<Axis>) -> Result<Self, GridError> {
        if axes.is_empty() || axes.len() > 3 {
            return Err(GridError::BadDims(axes.len()));
        }
        for (i, a) in axes.iter().enumerate() {
            if axes[..i].iter().any(|b| b.name == a.name) {
                return Err(GridError::BadDims(axes.len()));
            }
        }
        let mut strides = vec![1; axes.len()];
        for i in (0..axes.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * axes[i + 1].points;
        }
        let len = axes.iter().map(|a| a.points).product();
        Ok(Self { axes, strides, len })
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.points).collect()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn axis(&self, name: AxisName) -> Option<(usize, &Axis)> {
        self.axes.iter().enumerate().find(|(_, a)| a.name == name)
    }

    /// Axes of 3D space not represented on this grid.
    pub fn missing_axes(&self) -> Vec<AxisName> {
        AxisName::ALL
            .into_iter()
            .filter(|n| self.axis(*n).is_none())
            .collect()
    }

    /// Cell size `Π h_i`, m^d.
    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(|a| a.spacing()).product()
    }

    pub fn min_spacing(&self) -> f64 {
        self.axes.iter().map(|a| a.spacing()).fold(f64::INFINITY, f64::min)
    }

    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        self.strides
            .iter()
            .zip(&self.axes)
            .map(|(s, a)| (flat / s) % a.points)
            .collect()
    }

    /// `[x, y, z]` of a flat index.
    pub fn point(&self, flat: usize) -> [f64; 3] {
        let mut p = [0.0; 3];
        for (k, a) in self.axes.iter().enumerate() {
            p[a.name.index()] = a.coord((flat / self.strides[k]) % a.points);
        }
        p
    }

    pub fn points(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        (0..self.len).map(|i| self.point(i))
    }

    /// `|k|²` for every mode in DFT order, 1/m².
    pub fn k_squared(&self) -> Vec<f64> {
        let ks: Vec<Vec<f64>> = self.axes.iter().map(|a| a.wavenumbers()).collect();
        (0..self.len)
            .map(|flat| {
                ks.iter()
                    .enumerate()
                    .map(|(k, kv)| {
                        let v = kv[(flat / self.strides[k]) % kv.len()];
                        v * v
                    })
                    .sum()
            })
            .collect()
    }
}

/// Axis-aligned sub-volumes of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    Full,
    /// Points with coordinate `< bound` along `axis`.
    Below { axis: AxisName, bound: f64 },
    /// Points with coordinate `≥ bound` along `axis`; complement of `Below`.
    Above { axis: AxisName, bound: f64 },
    /// Half-open box `lo ≤ p < hi` in `[x, y, z]`.
    Box { lo: [f64; 3], hi: [f64; 3] },
}

impl Region {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        match *self {
            Self::Full => true,
            Self::Below { axis, bound } => p[axis.index()] < bound,
            Self::Above { axis, bound } => p[axis.index()] >= bound,
            Self::Box { lo, hi } => (0..3).all(|i| p[i] >= lo[i] && p[i] < hi[i]),
        }
    }

    pub fn mask(&self, grid: &Grid) -> Vec<bool> {
        grid.points().map(|p| self.contains(p)).collect()
    }

    pub fn is_empty_on(&self, grid: &Grid) -> bool {
        !grid.points().any(|p| self.contains(p))
    }
}

/// Complex order parameter normalised so that `Σ|ψ|² ΔV` is the atom number.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    grid: Grid,
    values: Vec<Complex64>,
    /// ms.
    pub time: f64,
    /// nK.
    pub barrier_height: f64,
}

impl FieldState {
    pub fn new(grid: Grid, values: Vec<Complex64>) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::Length {
                want: grid.len(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(GridError::NonFinite(i));
        }
        Ok(Self {
            grid,
            values,
            time: 0.0,
            barrier_height: 0.0,
        })
    }

    pub fn from_fn(grid: Grid, f: impl Fn([f64; 3]) -> Complex64) -> Result<Self, GridError> {
        let values = grid.points().map(f).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    /// The backing buffer; callers must keep its length.
    pub(crate) fn values_mut_vec(&mut self) -> &mut Vec<Complex64> {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Riemann sum of `|ψ|² ΔV` over `region`.
    pub fn norm_squared(&self, region: &Region) -> f64 {
        let dv = self.grid.cell_volume();
        match region {
            Region::Full => self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * dv,
            r => {
                self.values
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| r.contains(self.grid.point(*i)))
                    .map(|(_, v)| v.norm_sqr())
                    .sum::<f64>()
                    * dv
            }
        }
    }

    /// Same as [`Self::norm_squared`] with a precomputed mask.
    pub fn norm_squared_masked(&self, mask: &[bool]) -> f64 {
        self.values
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(v, _)| v.norm_sqr())
            .sum::<f64>()
            * self.grid.cell_volume()
    }

    pub fn total_norm(&self) -> f64 {
        self.norm_squared(&Region::Full)
    }

    pub fn density(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm_sqr()).collect()
    }

    /// Rescale so the total norm is `atoms`. No-op on a zero field.
    pub fn renormalize(&mut self, atoms: f64) {
        let n = self.total_norm();
        if n > 0.0 {
            let s = (atoms / n).sqrt();
            for v in &mut self.values {
                *v *= s;
            }
        }
    }
}

/// Pre-planned multidimensional FFT over a grid.
pub struct SpectralPlan {
    shape: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
    scratch: Vec<Complex64>,
    buffer: Vec<Complex64>,
    k2: Vec<f64>,
}

impl SpectralPlan {
    pub fn new(grid: &Grid) -> Self {
        let mut planner = FftPlanner::new();
        let shape = grid.shape();
        let forward: Vec<_> = shape.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inverse: Vec<_> = shape.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        let scratch_len = forward
            .iter()
            .chain(&inverse)
            .map(|f| f.get_inplace_scratch_len())
            .max()
            .unwrap_or(0);
        Self {
            forward,
            inverse,
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
            buffer: vec![Complex64::new(0.0, 0.0); grid.len()],
            k2: grid.k_squared(),
            shape,
        }
    }

    pub fn k_squared(&self) -> &[f64] {
        &self.k2
    }

    fn transform(&mut self, data: &mut [Complex64], inverse: bool) {
        let dims = self.shape.len();
        for axis in 0..dims {
            let n = self.shape[axis];
            let inner: usize = self.shape[axis + 1..].iter().product();
            let fft = if inverse { &self.inverse[axis] } else { &self.forward[axis] };
            if inner == 1 {
                fft.process_with_scratch(data, &mut self.scratch);
                continue;
            }
            let block = n * inner;
            for chunk in data.chunks_exact_mut(block) {
                let buf = &mut self.buffer[..block];
                for (i, row) in chunk.chunks_exact(inner).enumerate() {
                    for (j, v) in row.iter().enumerate() {
                        buf[j * n + i] = *v;
                    }
                }
                fft.process_with_scratch(buf, &mut self.scratch);
                for (i, row) in chunk.chunks_exact_mut(inner).enumerate() {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = buf[j * n + i];
                    }
                }
            }
        }
    }

    /// Unnormalised forward transform.
    pub fn forward(&mut self, data: &mut [Complex64]) {
        self.transform(data, false);
    }

    /// Inverse transform including the `1/len` factor.
    pub fn inverse(&mut self, data: &mut [Complex64]) {
        self.transform(data, true);
        let s = 1.0 / data.len() as f64;
        for v in data.iter_mut() {
            *v *= s;
        }
    }

    /// `data ← F⁻¹ diag(factors) F data`.
    pub fn apply_diagonal(&mut self, data: &mut [Complex64], factors: &[Complex64]) {
        self.forward(data);
        for (v, f) in data.iter_mut().zip(factors) {
            *v *= f;
        }
        self.inverse(data);
    }

    /// Multiply every mode by `exp(−iħk²dt/4m)`, half a kinetic step of
    /// length `dt` seconds.
    pub fn kinetic_half_step(&mut self, field: &mut FieldState, dt: f64, mass: f64) {
        let f = kinetic_factors(&self.k2, 0.5 * dt, mass, false);
        self.apply_diagonal(&mut field.values, &f);
    }
}

/// Kinetic propagator `exp(−iħk²τ/2m)` in real time, or `exp(−ħk²τ/2m)` in
/// imaginary time, for a step `tau` seconds.
pub fn kinetic_factors(k2: &[f64], tau: f64, mass: f64, imaginary: bool) -> Vec<Complex64> {
    let c = HBAR * tau / (2.0 * mass);
    k2.iter()
        .map(|&k| {
            if imaginary {
                Complex64::new((-c * k).exp(), 0.0)
            } else {
                Complex64::from_polar(1.0, -c * k)
            }
        })
        .collect()
}

const SNAPSHOT_MAGIC: &[u8] = b"RESTTRAP-FIELD 1\n";

#[derive(Serialize, Deserialize)]
struct SnapshotHeader {
    axes: Vec<Axis>,
    time_ms: f64,
    barrier_height_nk: f64,
    layout: String,
    value: String,
}

/// Write a field as a magic line, a one-line JSON header and row-major
/// little-endian `(re, im)` f64 pairs.
pub fn write_snapshot(path: &Path, field: &FieldState) -> Result<(), GridError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(SNAPSHOT_MAGIC)?;
    let header = SnapshotHeader {
        axes: field.grid.axes.clone(),
        time_ms: field.time,
        barrier_height_nk: field.barrier_height,
        layout: "row-major".into(),
        value: "complex128-le".into(),
    };
    serde_json::to_writer(&mut w, &header).map_err(|e| GridError::Format(e.to_string()))?;
    w.write_all(b"\n")?;
    for v in &field.values {
        w.write_all(&v.re.to_le_bytes())?;
        w.write_all(&v.im.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<FieldState, GridError> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut magic = vec![0u8; SNAPSHOT_MAGIC.len()];
    r.read_exact(&mut magic)?;
    if magic != SNAPSHOT_MAGIC {
        return Err(GridError::Format("bad magic".into()));
    }
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: SnapshotHeader = serde_json::from_str(&line).map_err(|e| GridError::Format(e.to_string()))?;
    let grid = Grid::new(header.axes)?;
    let mut values = Vec::with_capacity(grid.len());
    let mut b = [0u8; 16];
    for _ in 0..grid.len() {
        r.read_exact(&mut b)?;
        let re = f64::from_le_bytes(b[..8].try_into().expect("8 bytes"));
        let im = f64::from_le_bytes(b[8..].try_into().expect("8 bytes"));
        values.push(Complex64::new(re, im));
    }
    let mut f = FieldState::new(grid, values)?;
    f.time = header.time_ms;
    f.barrier_height = header.barrier_height_nk;
    Ok(f)
}

/// CSV of `|ψ|²` on the plane spanned by grid axes `a` and `b`, other axes
/// fixed at their central index. Coordinates in μm, density in m^−d.
pub fn write_density_slice(path: &Path, field: &FieldState, a: usize, b: usize) -> Result<(), GridError> {
    let g = &field.grid;
    if a >= g.dims() || b >= g.dims() || a == b {
        return Err(GridError::BadDims(g.dims()));
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{}_um,{}_um,density", axis_label(g.axes[a].name), axis_label(g.axes[b].name))?;
    let mut idx: Vec<usize> = g.axes.iter().map(|ax| ax.points / 2).collect();
    for i in 0..g.axes[a].points {
        for j in 0..g.axes[b].points {
            idx[a] = i;
            idx[b] = j;
            let flat: usize = idx.iter().zip(&g.strides).map(|(i, s)| i * s).sum();
            writeln!(
                w,
                "{:?},{:?},{:?}",
                g.axes[a].coord(i) * 1e6,
                g.axes[b].coord(j) * 1e6,
                field.values[flat].norm_sqr()
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

fn axis_label(n: AxisName) -> &'static str {
    match n {
        AxisName::X => "x",
        AxisName::Y => "y",
        AxisName::Z => "z",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid2() -> Grid {
        Grid::new(vec![
            Axis::centered(AxisName::Y, 32, 8e-6).unwrap(),
            Axis::centered(AxisName::Z, 16, 4e-6).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn axis_validation_and_wavenumbers() {
        assert!(Axis::new(AxisName::X, 4, 1.0, 0.0).is_err());
        assert!(Axis::new(AxisName::X, 8, 0.0, 0.0).is_err());
        let a = Axis::new(AxisName::X, 8, 8.0, 0.0).unwrap();
        let k = a.wavenumbers();
        let dk = 2.0 * std::f64::consts::PI / 8.0;
        assert_eq!(k[1], dk);
        assert_eq!(k[4], -4.0 * dk);
        assert_relative_eq!(k[4].abs(), std::f64::consts::PI / a.spacing());
        assert_eq!(k[7], -dk);
        let c = Axis::centered(AxisName::Y, 16, 16.0).unwrap();
        assert_eq!(c.coord(8), 0.0);
    }

    #[test]
    fn duplicate_axes_rejected() {
        let a = Axis::centered(AxisName::Y, 8, 1.0).unwrap();
        assert!(Grid::new(vec![a.clone(), a]).is_err());
        assert!(Grid::new(vec![]).is_err());
    }

    #[test]
    fn points_fill_missing_axes_with_zero() {
        let g = grid2();
        assert_eq!(g.missing_axes(), vec![AxisName::X]);
        let p = g.point(g.strides()[0] * 3 + 5);
        assert_eq!(p[0], 0.0);
        assert_relative_eq!(p[1], g.axes()[0].coord(3));
        assert_relative_eq!(p[2], g.axes()[1].coord(5));
    }

    #[test]
    fn uniform_norm_and_additivity() {
        let g = grid2();
        let vol = 8e-6 * 4e-6;
        let f = FieldState::from_fn(g, |_| Complex64::new(3.0, 4.0)).unwrap();
        assert_relative_eq!(f.total_norm(), 25.0 * vol, max_relative = 1e-12);
        let below = f.norm_squared(&Region::Below { axis: AxisName::Y, bound: 1e-6 });
        let above = f.norm_squared(&Region::Above { axis: AxisName::Y, bound: 1e-6 });
        assert_relative_eq!(below + above, f.total_norm(), max_relative = 1e-12);
        let boxed = f.norm_squared(&Region::Box { lo: [-1.0, -1e-6, -1.0], hi: [1.0, 1e-6, 1.0] });
        assert!(boxed <= below);
    }

    #[test]
    fn fft_round_trip_3d() {
        let g = Grid::new(vec![
            Axis::centered(AxisName::X, 8, 1.0).unwrap(),
            Axis::centered(AxisName::Y, 16, 1.0).unwrap(),
            Axis::centered(AxisName::Z, 12, 1.0).unwrap(),
        ])
        .unwrap();
        let mut plan = SpectralPlan::new(&g);
        let orig: Vec<Complex64> = (0..g.len())
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        let mut d = orig.clone();
        plan.forward(&mut d);
        plan.inverse(&mut d);
        for (a, b) in d.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn fft_diagonalises_laplacian() {
        // −∇² of a plane wave is k² times the wave.
        let g = grid2();
        let mut plan = SpectralPlan::new(&g);
        let (ky, kz) = (g.axes()[0].wavenumbers()[3], g.axes()[1].wavenumbers()[14]);
        let wave = |p: [f64; 3]| Complex64::from_polar(1.0, ky * p[1] + kz * p[2]);
        let f = FieldState::from_fn(g.clone(), wave).unwrap();
        let mut d = f.values().to_vec();
        let k2: Vec<Complex64> = plan.k_squared().iter().map(|&k| Complex64::new(k, 0.0)).collect();
        plan.apply_diagonal(&mut d, &k2);
        for (a, b) in d.iter().zip(f.values()) {
            assert!((a - b * (ky * ky + kz * kz)).norm() < 1e-9 * (ky * ky + kz * kz));
        }
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = grid2();
        let mut f = FieldState::from_fn(g, |p| Complex64::new(p[1] * 1e6, -p[2] * 1e6)).unwrap();
        f.time = 12.5;
        f.barrier_height = 290.0;
        let path = dir.path().join("field.bin");
        write_snapshot(&path, &f).unwrap();
        let back = read_snapshot(&path).unwrap();
        assert_eq!(back, f);
        write_density_slice(&dir.path().join("slice.csv"), &f, 0, 1).unwrap();
        let text = std::fs::read_to_string(dir.path().join("slice.csv")).unwrap();
        assert!(text.starts_with("y_um,z_um,density\n"));
        assert_eq!(text.lines().count(), 1 + 32 * 16);
    }
}
