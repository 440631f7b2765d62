//! Sampled momentum-space box, complex fields on it, finite-difference
//! differentiation and quadrature.

use std::io::{BufRead, Write};
use std::ops::{Add, Mul, Sub};
use std::sync::Arc;

use nalgebra::Vector3;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PhotonError, Result};
use crate::gauge::BerryGauge;
use crate::stencil::{AxisStencil, Stencil};

pub const DEFAULT_EPS_CONE: f64 = 1e-2;

/// Construction parameters of a [`KGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub center: [f64; 3],
    pub half_width: [f64; 3],
    pub n: [usize; 3],
    pub gauge: [f64; 3],
    #[serde(default = "default_eps_cone")]
    pub eps_cone: f64,
    /// Defaults to `1e-6·|center|`, or `1e-6` for a box centered on the origin.
    #[serde(default)]
    pub eps_k: Option<f64>,
}

fn default_eps_cone() -> f64 {
    DEFAULT_EPS_CONE
}

impl GridSpec {
    pub fn cube(center: Vector3<f64>, half_width: f64, n: usize, gauge: Vector3<f64>) -> Self {
        Self {
            center: center.into(),
            half_width: [half_width; 3],
            n: [n; 3],
            gauge: gauge.into(),
            eps_cone: DEFAULT_EPS_CONE,
            eps_k: None,
        }
    }

    pub fn build(&self) -> Result<Arc<KGrid>> {
        let gauge = BerryGauge::new(Vector3::from(self.gauge))?;
        build_grid(
            Vector3::from(self.center),
            Vector3::from(self.half_width),
            self.n,
            gauge,
            self.eps_cone,
            self.eps_k,
        )
    }
}

/// Uniform Cartesian lattice in k-space. Points are indexed with x slowest:
/// `idx = (i·n_y + j)·n_z + l`.
#[derive(Debug, Clone)]
pub struct KGrid {
    center: Vector3<f64>,
    half_width: Vector3<f64>,
    n: [usize; 3],
    spacing: Vector3<f64>,
    gauge: BerryGauge,
    eps_cone: f64,
    eps_k: f64,
    active: Vec<bool>,
    masked: usize,
    points: Vec<Vector3<f64>>,
}

/// Builds the grid and its singular-point mask.
///
/// A point is masked when `|k| < eps_k` or when `k` lies within `eps_cone`
/// of `±I`; every field reduction treats masked points as zero.
pub fn build_grid(
    center: Vector3<f64>,
    half_width: Vector3<f64>,
    n: [usize; 3],
    gauge: BerryGauge,
    eps_cone: f64,
    eps_k: Option<f64>,
) -> Result<Arc<KGrid>> {
    for a in 0..3 {
        if n[a] < 5 || n[a] % 2 == 0 {
            return Err(PhotonError::InvalidGrid(format!(
                "axis {a}: sample count {} must be odd and at least 5",
                n[a]
            )));
        }
        if !(half_width[a] > 0.0 && half_width[a].is_finite()) {
            return Err(PhotonError::InvalidGrid(format!(
                "axis {a}: half width must be positive"
            )));
        }
    }
    if !center.iter().all(|c| c.is_finite()) {
        return Err(PhotonError::InvalidGrid("center must be finite".into()));
    }
    if !(eps_cone > 0.0 && eps_cone < std::f64::consts::FRAC_PI_2) {
        return Err(PhotonError::InvalidGrid(format!(
            "singular-cone half angle {eps_cone} must lie in (0, pi/2); the Berry potential diverges on the gauge axis"
        )));
    }
    let eps_k = eps_k.unwrap_or_else(|| {
        let c = center.norm();
        if c > 0.0 {
            1e-6 * c
        } else {
            1e-6
        }
    });
    let spacing = Vector3::from_fn(|a, _| 2.0 * half_width[a] / (n[a] - 1) as f64);
    let mut grid = KGrid {
        center,
        half_width,
        n,
        spacing,
        gauge,
        eps_cone,
        eps_k,
        active: Vec::new(),
        masked: 0,
        points: Vec::new(),
    };
    let total = grid.len();
    grid.points = (0..total).map(|idx| grid.lattice_point(idx)).collect();
    let active: Vec<bool> = (0..total)
        .into_par_iter()
        .map(|idx| grid.gauge.is_regular(&grid.point(idx), eps_cone, eps_k))
        .collect();
    let masked = active.iter().filter(|a| !**a).count();
    let fraction = masked as f64 / total as f64;
    if fraction > 0.5 {
        return Err(PhotonError::MostlyMasked {
            masked,
            total,
            fraction,
        });
    }
    grid.active = active;
    grid.masked = masked;
    Ok(Arc::new(grid))
}

impl KGrid {
    pub fn len(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> [usize; 3] {
        self.n
    }

    pub fn center(&self) -> Vector3<f64> {
        self.center
    }

    pub fn half_width(&self) -> Vector3<f64> {
        self.half_width
    }

    pub fn spacing(&self) -> Vector3<f64> {
        self.spacing
    }

    pub fn gauge(&self) -> BerryGauge {
        self.gauge
    }

    pub fn eps_cone(&self) -> f64 {
        self.eps_cone
    }

    pub fn eps_k(&self) -> f64 {
        self.eps_k
    }

    /// Quadrature weight `Δk_x·Δk_y·Δk_z`.
    pub fn weight(&self) -> f64 {
        self.spacing.x * self.spacing.y * self.spacing.z
    }

    pub fn masked_count(&self) -> usize {
        self.masked
    }

    pub fn masked_fraction(&self) -> f64 {
        self.masked as f64 / self.len() as f64
    }

    pub fn is_active(&self, idx: usize) -> bool {
        self.active[idx]
    }

    pub fn active_mask(&self) -> &[bool] {
        &self.active
    }

    pub fn strides(&self) -> [usize; 3] {
        [self.n[1] * self.n[2], self.n[2], 1]
    }

    #[inline]
    pub fn index(&self, ijk: [usize; 3]) -> usize {
        (ijk[0] * self.n[1] + ijk[1]) * self.n[2] + ijk[2]
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let l = idx % self.n[2];
        let rest = idx / self.n[2];
        [rest / self.n[1], rest % self.n[1], l]
    }

    #[inline]
    pub fn point(&self, idx: usize) -> Vector3<f64> {
        self.points[idx]
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    fn lattice_point(&self, idx: usize) -> Vector3<f64> {
        let c = self.coords(idx);
        Vector3::from_fn(|a, _| {
            let offset = c[a] as f64 - ((self.n[a] - 1) / 2) as f64;
            self.center[a] + offset * self.spacing[a]
        })
    }

    /// Coordinates of the samples along one axis.
    pub fn axis_values(&self, axis: usize) -> Vec<f64> {
        let mid = ((self.n[axis] - 1) / 2) as f64;
        (0..self.n[axis])
            .map(|i| self.center[axis] + (i as f64 - mid) * self.spacing[axis])
            .collect()
    }

    /// True when the point lies within `layers` samples of any face.
    pub fn in_shell(&self, idx: usize, layers: usize) -> bool {
        let c = self.coords(idx);
        (0..3).any(|a| c[a] < layers || c[a] + layers >= self.n[a])
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            center: self.center.into(),
            half_width: self.half_width.into(),
            n: self.n,
            gauge: self.gauge.vector().into(),
            eps_cone: self.eps_cone,
            eps_k: Some(self.eps_k),
        }
    }

    pub fn same_lattice(&self, other: &KGrid) -> bool {
        self.n == other.n && self.center == other.center && self.half_width == other.half_width
    }
}

/// `C` complex values per grid point, with a per-point validity flag.
/// Invalid points are treated as zero by every reduction.
#[derive(Debug, Clone)]
pub struct Field<const C: usize> {
    grid: Arc<KGrid>,
    data: Vec<[Complex64; C]>,
    valid: Vec<bool>,
}

pub type ScalarField = Field<1>;
pub type SpinorField2 = Field<2>;
pub type VectorField3 = Field<3>;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

impl<const C: usize> Field<C> {
    pub fn zeros(grid: &Arc<KGrid>) -> Self {
        Self {
            grid: Arc::clone(grid),
            data: vec![[ZERO; C]; grid.len()],
            valid: grid.active.clone(),
        }
    }

    /// Evaluates `f` at every active point; masked points hold zero.
    pub fn from_fn<F>(grid: &Arc<KGrid>, f: F) -> Self
    where
        F: Fn(Vector3<f64>) -> [Complex64; C] + Sync,
    {
        let data = (0..grid.len())
            .into_par_iter()
            .map(|idx| {
                if grid.active[idx] {
                    f(grid.point(idx))
                } else {
                    [ZERO; C]
                }
            })
            .collect();
        Self {
            grid: Arc::clone(grid),
            data,
            valid: grid.active.clone(),
        }
    }

    /// Like [`Field::from_fn`], but points where `f` returns `None` are
    /// marked invalid.
    pub fn try_from_fn<F>(grid: &Arc<KGrid>, f: F) -> Self
    where
        F: Fn(usize, Vector3<f64>) -> Option<[Complex64; C]> + Sync,
    {
        let pairs: Vec<_> = (0..grid.len())
            .into_par_iter()
            .map(|idx| {
                if !grid.active[idx] {
                    return ([ZERO; C], false);
                }
                match f(idx, grid.point(idx)) {
                    Some(v) => (v, true),
                    None => ([ZERO; C], false),
                }
            })
            .collect();
        let (data, valid) = pairs.into_iter().unzip();
        Self {
            grid: Arc::clone(grid),
            data,
            valid,
        }
    }

    pub fn from_parts(
        grid: &Arc<KGrid>,
        data: Vec<[Complex64; C]>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        if data.len() != grid.len() || valid.len() != grid.len() {
            return Err(PhotonError::GridMismatch);
        }
        let valid = valid
            .into_iter()
            .zip(&grid.active)
            .map(|(v, a)| v && *a)
            .collect();
        Ok(Self {
            grid: Arc::clone(grid),
            data,
            valid,
        })
    }

    pub fn grid(&self) -> &Arc<KGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[[Complex64; C]] {
        &self.data
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn at(&self, idx: usize) -> [Complex64; C] {
        if self.valid[idx] {
            self.data[idx]
        } else {
            [ZERO; C]
        }
    }

    pub fn is_valid(&self, idx: usize) -> bool {
        self.valid[idx]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Pointwise map; validity is preserved.
    pub fn map<const D: usize, F>(&self, f: F) -> Field<D>
    where
        F: Fn(usize, &[Complex64; C]) -> [Complex64; D] + Sync,
    {
        let data = self
            .data
            .par_iter()
            .enumerate()
            .map(|(idx, v)| {
                if self.valid[idx] {
                    f(idx, v)
                } else {
                    [ZERO; D]
                }
            })
            .collect();
        Field {
            grid: Arc::clone(&self.grid),
            data,
            valid: self.valid.clone(),
        }
    }

    /// Pointwise combination of two fields; valid where both are.
    pub fn zip_map<const B: usize, const D: usize, F>(&self, other: &Field<B>, f: F) -> Field<D>
    where
        F: Fn(usize, &[Complex64; C], &[Complex64; B]) -> [Complex64; D] + Sync,
    {
        assert!(
            Arc::ptr_eq(&self.grid, &other.grid) || self.grid.same_lattice(&other.grid),
            "fields live on different grids"
        );
        let valid: Vec<bool> = self
            .valid
            .iter()
            .zip(&other.valid)
            .map(|(a, b)| *a && *b)
            .collect();
        let data = (0..self.data.len())
            .into_par_iter()
            .map(|idx| {
                if valid[idx] {
                    f(idx, &self.data[idx], &other.data[idx])
                } else {
                    [ZERO; D]
                }
            })
            .collect();
        Field {
            grid: Arc::clone(&self.grid),
            data,
            valid,
        }
    }

    /// Pointwise map that may invalidate points by returning `None`.
    pub fn try_map<const D: usize, F>(&self, f: F) -> Field<D>
    where
        F: Fn(usize, &[Complex64; C]) -> Option<[Complex64; D]> + Sync,
    {
        let mut data = vec![[ZERO; D]; self.data.len()];
        let mut valid = self.valid.clone();
        data.par_iter_mut()
            .zip(valid.par_iter_mut())
            .enumerate()
            .for_each(|(idx, (out, ok))| {
                if *ok {
                    match f(idx, &self.data[idx]) {
                        Some(v) => *out = v,
                        None => *ok = false,
                    }
                }
            });
        Field {
            grid: Arc::clone(&self.grid),
            data,
            valid,
        }
    }

    pub fn component(&self, c: usize) -> ScalarField {
        self.map(|_, v| [v[c]])
    }

    pub fn scale(&self, s: Complex64) -> Self {
        self.map(|_, v| v.map(|x| x * s))
    }

    /// Marks additional points invalid.
    pub fn restrict(&self, keep: &[bool]) -> Self {
        let valid = self.valid.iter().zip(keep).map(|(a, b)| *a && *b).collect();
        let mut out = self.clone();
        out.valid = valid;
        for (idx, v) in out.data.iter_mut().enumerate() {
            if !out.valid[idx] {
                *v = [ZERO; C];
            }
        }
        out
    }

    /// Pointwise `Σ_c |f_c|²` at a point (zero if invalid).
    #[inline]
    pub fn density_at(&self, idx: usize) -> f64 {
        self.at(idx).iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        (0..self.data.len())
            .map(|i| self.density_at(i).sqrt())
            .fold(0.0, f64::max)
    }

    /// `∫ f†f d³k` over valid points.
    pub fn norm_sqr(&self) -> f64 {
        self.weighted_norm_sqr(|_| true)
    }

    /// `∫ f†f d³k` restricted to points accepted by `keep`.
    pub fn weighted_norm_sqr<P: Fn(usize) -> bool>(&self, keep: P) -> f64 {
        let mut sum = 0.0;
        for idx in 0..self.data.len() {
            if self.valid[idx] && keep(idx) {
                sum += self.density_at(idx);
            }
        }
        sum * self.grid.weight()
    }

    /// `∫ f†g d³k` over points valid in both.
    pub fn inner(&self, other: &Self) -> Complex64 {
        let mut sum = ZERO;
        for idx in 0..self.data.len() {
            if self.valid[idx] && other.valid[idx] {
                for c in 0..C {
                    sum += self.data[idx][c].conj() * other.data[idx][c];
                }
            }
        }
        sum * self.grid.weight()
    }
}

impl<const C: usize> Add for &Field<C> {
    type Output = Field<C>;
    fn add(self, rhs: Self) -> Field<C> {
        self.zip_map(rhs, |_, a, b| std::array::from_fn(|c| a[c] + b[c]))
    }
}

impl<const C: usize> Sub for &Field<C> {
    type Output = Field<C>;
    fn sub(self, rhs: Self) -> Field<C> {
        self.zip_map(rhs, |_, a, b| std::array::from_fn(|c| a[c] - b[c]))
    }
}

impl<const C: usize> Mul<Complex64> for &Field<C> {
    type Output = Field<C>;
    fn mul(self, rhs: Complex64) -> Field<C> {
        self.scale(rhs)
    }
}

/// `∂f/∂k_axis` with the standard 4th-order stencil.
pub fn gradient<const C: usize>(field: &Field<C>, axis: usize) -> Field<C> {
    gradient_with(field, axis, Stencil::Fourth)
}

/// `∂f/∂k_axis` with a chosen stencil. A point whose stencil touches an
/// invalid sample is itself invalid.
pub fn gradient_with<const C: usize>(field: &Field<C>, axis: usize, stencil: Stencil) -> Field<C> {
    let grid = &field.grid;
    let ax = AxisStencil::new(stencil, grid.n[axis], grid.spacing[axis]);
    gradient_axis(field, axis, &ax)
}

pub(crate) fn gradient_axis<const C: usize>(
    field: &Field<C>,
    axis: usize,
    ax: &AxisStencil,
) -> Field<C> {
    let grid = &field.grid;
    let stride = grid.strides()[axis];
    let n = grid.n[axis];
    let line_of = |idx: usize| {
        let c = (idx / stride) % n;
        (c, idx - c * stride)
    };
    let valid: Vec<bool> = if field.valid.iter().all(|v| *v) {
        field.valid.clone()
    } else {
        (0..grid.len())
            .into_par_iter()
            .map(|idx| {
                if !field.valid[idx] {
                    return false;
                }
                let (c, base) = line_of(idx);
                let (start, coeffs) = ax.row(c);
                (0..coeffs.len()).all(|m| field.valid[base + (start + m) * stride])
            })
            .collect()
    };
    let mut data = vec![[ZERO; C]; grid.len()];
    data.par_iter_mut().enumerate().for_each(|(idx, out)| {
        if !valid[idx] {
            return;
        }
        let (c, base) = line_of(idx);
        let (start, coeffs) = ax.row(c);
        let mut src = base + start * stride;
        let mut acc = [ZERO; C];
        for w in coeffs {
            let v = &field.data[src];
            for k in 0..C {
                acc[k] += v[k] * *w;
            }
            src += stride;
        }
        *out = acc;
    });
    Field {
        grid: Arc::clone(grid),
        data,
        valid,
    }
}

/// `∇_k × F` with the standard stencil.
pub fn curl(field: &VectorField3) -> VectorField3 {
    curl_with(field, Stencil::Fourth)
}

pub fn curl_with(field: &VectorField3, stencil: Stencil) -> VectorField3 {
    let d: Vec<VectorField3> = (0..3).map(|a| gradient_with(field, a, stencil)).collect();
    // d[a] holds ∂_a F; curl_i = ∂_j F_k − ∂_k F_j
    let dz_dy = d[1].zip_map(&d[2], |_, dy, dz| [dy[2] - dz[1], dz[0], dy[0]]);
    dz_dy.zip_map(&d[0], |_, p, dx| [p[0], p[1] - dx[2], dx[1] - p[2]])
}

/// `∫ f d³k`: weight times the sum over valid points, in index order.
pub fn integrate(field: &ScalarField) -> Complex64 {
    let mut sum = ZERO;
    for idx in 0..field.data.len() {
        if field.valid[idx] {
            sum += field.data[idx][0];
        }
    }
    sum * field.grid.weight()
}

/// Header line of the portable field format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub center: [f64; 3],
    pub half_width: [f64; 3],
    pub n: [usize; 3],
    pub gauge: [f64; 3],
    pub eps_cone: f64,
    pub eps_k: f64,
    pub components: usize,
    /// Free-form metadata (state gauge, time, representation).
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub meta: serde_json::Value,
}

impl FieldHeader {
    pub fn grid_spec(&self) -> GridSpec {
        GridSpec {
            center: self.center,
            half_width: self.half_width,
            n: self.n,
            gauge: self.gauge,
            eps_cone: self.eps_cone,
            eps_k: Some(self.eps_k),
        }
    }
}

/// Writes a field as one JSON header line followed by a CSV table
/// `i,j,l,valid,re0,im0,...`.
pub fn write_field<W: Write, const C: usize>(
    mut out: W,
    field: &Field<C>,
    meta: serde_json::Value,
) -> Result<()> {
    let g = &field.grid;
    let header = FieldHeader {
        center: g.center.into(),
        half_width: g.half_width.into(),
        n: g.n,
        gauge: g.gauge.vector().into(),
        eps_cone: g.eps_cone,
        eps_k: g.eps_k,
        components: C,
        meta,
    };
    writeln!(out, "{}", serde_json::to_string(&header)?)?;
    let mut cols = vec!["i".to_string(), "j".into(), "l".into(), "valid".into()];
    for c in 0..C {
        cols.push(format!("re{c}"));
        cols.push(format!("im{c}"));
    }
    writeln!(out, "{}", cols.join(","))?;
    for idx in 0..g.len() {
        let [i, j, l] = g.coords(idx);
        let v = field.at(idx);
        write!(out, "{i},{j},{l},{}", u8::from(field.valid[idx]))?;
        for z in v.iter() {
            write!(out, ",{:e},{:e}", z.re, z.im)?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Reads a field written by [`write_field`], rebuilding its grid.
pub fn read_field<R: BufRead, const C: usize>(input: R) -> Result<(Field<C>, FieldHeader)> {
    let mut lines = input.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| PhotonError::Format("missing header".into()))??;
    let header: FieldHeader = serde_json::from_str(&header_line)?;
    if header.components != C {
        return Err(PhotonError::Format(format!(
            "expected {C} components, file has {}",
            header.components
        )));
    }
    let grid = header.grid_spec().build()?;
    lines
        .next()
        .ok_or_else(|| PhotonError::Format("missing column header".into()))??;
    let mut data = vec![[ZERO; C]; grid.len()];
    let mut valid = vec![false; grid.len()];
    let mut seen = 0usize;
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 + 2 * C {
            return Err(PhotonError::Format(format!("bad row: {line}")));
        }
        let parse_u = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| PhotonError::Format(format!("{s}: {e}")))
        };
        let parse_f = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| PhotonError::Format(format!("{s}: {e}")))
        };
        let ijk = [parse_u(parts[0])?, parse_u(parts[1])?, parse_u(parts[2])?];
        if (0..3).any(|a| ijk[a] >= grid.n[a]) {
            return Err(PhotonError::Format(format!("index out of range: {line}")));
        }
        let idx = grid.index(ijk);
        valid[idx] = parse_u(parts[3])? == 1;
        for c in 0..C {
            data[idx][c] = Complex64::new(parse_f(parts[4 + 2 * c])?, parse_f(parts[5 + 2 * c])?);
        }
        seen += 1;
    }
    if seen != grid.len() {
        return Err(PhotonError::Format(format!(
            "expected {} rows, found {seen}",
            grid.len()
        )));
    }
    let field = Field::from_parts(&grid, data, valid)?;
    Ok((field, header))
}
