//! Berry-gauge vector, the momentum-associated triad it fixes, the Berry
//! potential and field, and the rotation angle between two gauges.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{Matrix2, Matrix3, Matrix3x2, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{PhotonError, Result};
use crate::kgrid::{KGrid, ScalarField, VectorField3, DEFAULT_EPS_CONE};
use crate::stencil::{AxisStencil, Stencil};

/// Constant real unit vector `I` that fixes the transverse axes of the triad.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct BerryGauge(Vector3<f64>);

impl BerryGauge {
    /// Normalizes any nonzero finite vector.
    pub fn new(v: Vector3<f64>) -> Result<Self> {
        let n = v.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(PhotonError::InvalidGauge);
        }
        Ok(Self(v / n))
    }

    pub fn x() -> Self {
        Self(Vector3::x())
    }

    pub fn y() -> Self {
        Self(Vector3::y())
    }

    pub fn z() -> Self {
        Self(Vector3::z())
    }

    pub fn vector(&self) -> Vector3<f64> {
        self.0
    }

    /// Angle between `k` and the closer of `±I`.
    pub fn axis_angle(&self, k: &Vector3<f64>) -> f64 {
        self.0.cross(k).norm().atan2(self.0.dot(k).abs())
    }

    pub fn is_regular(&self, k: &Vector3<f64>, eps_cone: f64, eps_k: f64) -> bool {
        k.norm() >= eps_k && self.axis_angle(k) >= eps_cone
    }

    pub fn flipped(&self) -> Self {
        Self(-self.0)
    }
}

impl TryFrom<[f64; 3]> for BerryGauge {
    type Error = PhotonError;
    fn try_from(v: [f64; 3]) -> Result<Self> {
        Self::new(Vector3::from(v))
    }
}

impl From<BerryGauge> for [f64; 3] {
    fn from(g: BerryGauge) -> Self {
        g.0.into()
    }
}

/// Thresholds below which the triad is undefined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cutoffs {
    pub eps_cone: f64,
    pub eps_k: f64,
}

impl Default for Cutoffs {
    fn default() -> Self {
        Self {
            eps_cone: DEFAULT_EPS_CONE,
            eps_k: 1e-9,
        }
    }
}

impl Cutoffs {
    pub fn of_grid(grid: &KGrid) -> Self {
        Self {
            eps_cone: grid.eps_cone(),
            eps_k: grid.eps_k(),
        }
    }
}

/// Right-handed orthonormal frame `(u, v, w)` with `w = k/|k|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triad {
    pub u: Vector3<f64>,
    pub v: Vector3<f64>,
    pub w: Vector3<f64>,
}

impl Triad {
    /// The 3×2 matrix `ϖ = (u v)`.
    pub fn varpi(&self) -> Matrix3x2<f64> {
        Matrix3x2::from_columns(&[self.u, self.v])
    }

    pub fn varpi_complex(&self) -> Matrix3x2<Complex64> {
        self.varpi().map(Complex64::from)
    }

    /// `(u·a, v·a, w·a)`.
    pub fn components(&self, a: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(self.u.dot(a), self.v.dot(a), self.w.dot(a))
    }
}

/// Triad at `k` for gauge `I`: `v = I×k/|I×k|`, `u = v×k/k`.
pub fn triad_at(k: &Vector3<f64>, gauge: &BerryGauge) -> Result<Triad> {
    triad_at_with(k, gauge, Cutoffs::default())
}

pub fn triad_at_with(k: &Vector3<f64>, gauge: &BerryGauge, cut: Cutoffs) -> Result<Triad> {
    let kn = k.norm();
    if !(kn >= cut.eps_k) {
        return Err(PhotonError::ZeroWavevector {
            magnitude: kn,
            eps_k: cut.eps_k,
        });
    }
    let angle = gauge.axis_angle(k);
    if angle < cut.eps_cone {
        return Err(PhotonError::SingularGauge {
            angle,
            eps_cone: cut.eps_cone,
        });
    }
    let w = k / kn;
    let ixk = gauge.vector().cross(k);
    let v = ixk / ixk.norm();
    let u = v.cross(&w);
    Ok(Triad { u, v, w })
}

/// The quasi-unitary matrix `ϖ(k; I)`.
pub fn varpi_at(k: &Vector3<f64>, gauge: &BerryGauge) -> Result<Matrix3x2<Complex64>> {
    Ok(triad_at(k, gauge)?.varpi_complex())
}

/// `ϖ†ϖ` (should be `I₂`).
pub fn varpi_gram(varpi: &Matrix3x2<Complex64>) -> Matrix2<Complex64> {
    varpi.adjoint() * varpi
}

/// `ϖϖ†` (should be `I₃ − ww†`).
pub fn varpi_projector(varpi: &Matrix3x2<Complex64>) -> Matrix3<Complex64> {
    varpi * varpi.adjoint()
}

/// Berry potential `A_B = (I·k)/(k|I×k|) v`.
pub fn berry_potential(k: &Vector3<f64>, gauge: &BerryGauge) -> Result<Vector3<f64>> {
    berry_potential_with(k, gauge, Cutoffs::default())
}

pub fn berry_potential_with(
    k: &Vector3<f64>,
    gauge: &BerryGauge,
    cut: Cutoffs,
) -> Result<Vector3<f64>> {
    let t = triad_at_with(k, gauge, cut)?;
    Ok(potential_from_triad(k, gauge, &t))
}

#[inline]
pub(crate) fn potential_from_triad(k: &Vector3<f64>, gauge: &BerryGauge, t: &Triad) -> Vector3<f64> {
    let i = gauge.vector();
    t.v * (i.dot(k) / (k.norm() * i.cross(k).norm()))
}

/// Monopole field `H_B = −w/k²`, independent of the gauge.
pub fn berry_field_analytic(k: &Vector3<f64>) -> Result<Vector3<f64>> {
    let kn = k.norm();
    if !(kn >= Cutoffs::default().eps_k) {
        return Err(PhotonError::ZeroWavevector {
            magnitude: kn,
            eps_k: Cutoffs::default().eps_k,
        });
    }
    Ok(-k / (kn * kn * kn))
}

/// Rotation angle `φ ∈ (−π, π]` about `w` taking the triad of `from` to
/// that of `to`: `u' = u cos φ + v sin φ`.
pub fn gauge_angle(k: &Vector3<f64>, from: &BerryGauge, to: &BerryGauge) -> Result<f64> {
    gauge_angle_with(k, from, to, Cutoffs::default())
}

pub fn gauge_angle_with(
    k: &Vector3<f64>,
    from: &BerryGauge,
    to: &BerryGauge,
    cut: Cutoffs,
) -> Result<f64> {
    let a = triad_at_with(k, from, cut)?;
    let b = triad_at_with(k, to, cut)?;
    Ok(angle_between(&a, &b))
}

#[inline]
pub(crate) fn angle_between(from: &Triad, to: &Triad) -> f64 {
    let phi = to.u.dot(&from.v).atan2(to.u.dot(&from.u));
    if phi <= -PI {
        PI
    } else {
        phi
    }
}

/// `exp(−iσ̂₃φ)` with the helicity matrix `σ̂₃ = [[0, −i], [i, 0]]`; a real
/// rotation by `φ` in the `(u, v)` plane.
pub fn helicity_rotation(phi: f64) -> Matrix2<Complex64> {
    let (s, c) = phi.sin_cos();
    Matrix2::new(c, -s, s, c).map(Complex64::from)
}

/// Flux of `H_B` through a sphere by midpoint quadrature in `(θ, φ)`.
pub fn monopole_flux(center: Vector3<f64>, radius: f64, n_theta: usize, n_phi: usize) -> f64 {
    let dt = PI / n_theta as f64;
    let dp = 2.0 * PI / n_phi as f64;
    let mut flux = 0.0;
    for i in 0..n_theta {
        let th = (i as f64 + 0.5) * dt;
        let (st, ct) = th.sin_cos();
        for j in 0..n_phi {
            let ph = (j as f64 + 0.5) * dp;
            let n = Vector3::new(st * ph.cos(), st * ph.sin(), ct);
            let k = center + n * radius;
            if let Ok(h) = berry_field_analytic(&k) {
                flux += h.dot(&n) * radius * radius * st * dt * dp;
            }
        }
    }
    flux
}

/// Per-point triads of one gauge on a grid; `None` where the gauge is
/// singular or the grid point is masked.
#[derive(Debug, Clone)]
pub struct TriadField {
    grid: Arc<KGrid>,
    gauge: BerryGauge,
    triads: Vec<Option<Triad>>,
}

impl TriadField {
    pub fn new(grid: &Arc<KGrid>, gauge: BerryGauge) -> Self {
        use rayon::prelude::*;
        let cut = Cutoffs::of_grid(grid);
        let triads = (0..grid.len())
            .into_par_iter()
            .map(|idx| {
                if grid.is_active(idx) {
                    triad_at_with(&grid.point(idx), &gauge, cut).ok()
                } else {
                    None
                }
            })
            .collect();
        Self {
            grid: Arc::clone(grid),
            gauge,
            triads,
        }
    }

    pub fn grid(&self) -> &Arc<KGrid> {
        &self.grid
    }

    pub fn gauge(&self) -> BerryGauge {
        self.gauge
    }

    #[inline]
    pub fn get(&self, idx: usize) -> Option<&Triad> {
        self.triads[idx].as_ref()
    }

    pub fn regular_mask(&self) -> Vec<bool> {
        self.triads.iter().map(Option::is_some).collect()
    }
}

/// `A_B` sampled on the grid (real parts); invalid where the gauge is singular.
pub fn berry_potential_field(grid: &Arc<KGrid>, gauge: BerryGauge) -> VectorField3 {
    let triads = TriadField::new(grid, gauge);
    VectorField3::try_from_fn(grid, |idx, k| {
        triads
            .get(idx)
            .map(|t| potential_from_triad(&k, &gauge, t).map(Complex64::from).into())
    })
}

/// `H_B = −w/k²` sampled on the grid.
pub fn berry_field_grid(grid: &Arc<KGrid>) -> VectorField3 {
    VectorField3::try_from_fn(grid, |_, k| {
        berry_field_analytic(&k)
            .ok()
            .map(|h| h.map(Complex64::from).into())
    })
}

/// Gauge-change angle on the grid; invalid where either gauge is singular.
pub fn gauge_angle_field(grid: &Arc<KGrid>, from: BerryGauge, to: BerryGauge) -> ScalarField {
    let a = TriadField::new(grid, from);
    let b = TriadField::new(grid, to);
    ScalarField::try_from_fn(grid, |idx, _| match (a.get(idx), b.get(idx)) {
        (Some(ta), Some(tb)) => Some([Complex64::from(angle_between(ta, tb))]),
        _ => None,
    })
}

/// `∇_k φ` of a real angle field. Stencil samples are unwrapped to within
/// `π` of the value at the evaluation point before differencing.
pub fn angle_gradient(phi: &ScalarField, stencil: Stencil) -> VectorField3 {
    let grid = phi.grid();
    let strides = grid.strides();
    let shape = grid.shape();
    let axes: Vec<AxisStencil> = (0..3)
        .map(|a| AxisStencil::new(stencil, shape[a], grid.spacing()[a]))
        .collect();
    VectorField3::try_from_fn(grid, |idx, _| {
        if !phi.is_valid(idx) {
            return None;
        }
        let here = phi.at(idx)[0].re;
        let coords = grid.coords(idx);
        let mut out = [Complex64::from(0.0); 3];
        for a in 0..3 {
            let c = coords[a];
            let (start, coeffs) = axes[a].row(c);
            let base = idx - c * strides[a];
            let mut acc = 0.0;
            for (m, w) in coeffs.iter().enumerate() {
                let src = base + (start + m) * strides[a];
                if !phi.is_valid(src) {
                    return None;
                }
                let mut val = phi.at(src)[0].re;
                while val - here > PI {
                    val -= 2.0 * PI;
                }
                while val - here < -PI {
                    val += 2.0 * PI;
                }
                acc += w * val;
            }
            out[a] = Complex64::from(acc);
        }
        Some(out)
    })
}

fn interior_points(grid: &KGrid, shell: usize) -> impl Iterator<Item = usize> + '_ {
    (0..grid.len()).filter(move |idx| !grid.in_shell(*idx, shell))
}

fn vec_norm(v: [Complex64; 3]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `max |∇×A_B − H_B| / |H_B|` over valid points outside the stencil's
/// boundary shell.
pub fn curl_residual(grid: &Arc<KGrid>, gauge: BerryGauge, stencil: Stencil) -> f64 {
    let a = berry_potential_field(grid, gauge);
    let h = berry_field_grid(grid);
    let c = crate::kgrid::curl_with(&a, stencil);
    interior_points(grid, stencil.half_width())
        .filter(|idx| c.is_valid(*idx) && h.is_valid(*idx))
        .map(|idx| {
            let (x, y) = (c.at(idx), h.at(idx));
            vec_norm(std::array::from_fn(|i| x[i] - y[i])) / vec_norm(y)
        })
        .fold(0.0, f64::max)
}

/// `max |A'_B − A_B − ∇φ|` relative to the largest of `|A_B|`, `|A'_B|`
/// and `|∇φ|`, over points regular in both gauges and outside the
/// stencil's boundary shell.
pub fn potential_shift_residual(grid: &Arc<KGrid>, from: BerryGauge, to: BerryGauge, stencil: Stencil) -> f64 {
    let a = berry_potential_field(grid, from);
    let ap = berry_potential_field(grid, to);
    let g = angle_gradient(&gauge_angle_field(grid, from, to), stencil);
    let (mut worst, mut scale) = (0.0f64, 0.0f64);
    for idx in interior_points(grid, stencil.half_width()) {
        if !(a.is_valid(idx) && ap.is_valid(idx) && g.is_valid(idx)) {
            continue;
        }
        let (x, y, d) = (a.at(idx), ap.at(idx), g.at(idx));
        worst = worst.max(vec_norm(std::array::from_fn(|i| y[i] - x[i] - d[i])));
        scale = scale.max(vec_norm(d)).max(vec_norm(x)).max(vec_norm(y));
    }
    if scale == 0.0 {
        worst
    } else {
        worst / scale
    }
}
