//! Position-space synthesis: electric and magnetic fields, the
//! Coulomb-gauge vector potential, and the amplitudes `F(X, t)` and
//! `F̃(ξ, t)`.
//!
//! Synthesis is a direct quadrature over the k-grid. Samplings on regular
//! lattices take a separable fast path with the same result.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{Matrix3x2, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PhotonError, Result};
use crate::gauge::{BerryGauge, TriadField};
use crate::kgrid::{Field, KGrid, SpinorField2, VectorField3};
use crate::wavefunction::{TwoComponentWavefunction, VectorWavefunction};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Physical constants entering the synthesis prefactors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitSystem {
    pub hbar: f64,
    pub eps0: f64,
    pub mu0: f64,
    pub c: f64,
}

impl Default for UnitSystem {
    fn default() -> Self {
        Self::natural()
    }
}

impl UnitSystem {
    /// `ħ = ε₀ = μ₀ = c = 1`.
    pub fn natural() -> Self {
        Self {
            hbar: 1.0,
            eps0: 1.0,
            mu0: 1.0,
            c: 1.0,
        }
    }

    pub fn si() -> Self {
        Self {
            hbar: 1.054_571_817e-34,
            eps0: 8.854_187_812_8e-12,
            mu0: 1.256_637_062_12e-6,
            c: 299_792_458.0,
        }
    }

    pub fn omega(&self, k: &Vector3<f64>) -> f64 {
        self.c * k.norm()
    }

    /// `(ħω/2ε₀)^½`.
    pub fn e_prefactor(&self, omega: f64) -> f64 {
        (self.hbar * omega / (2.0 * self.eps0)).sqrt()
    }

    /// `(ħω/2μ₀)^½`.
    pub fn h_prefactor(&self, omega: f64) -> f64 {
        (self.hbar * omega / (2.0 * self.mu0)).sqrt()
    }

    /// `(ħ/2ε₀ω)^½`.
    pub fn a_prefactor(&self, omega: f64) -> f64 {
        (self.hbar / (2.0 * self.eps0 * omega)).sqrt()
    }
}

/// Regular lattice `origin + (a·Δx, b·Δy, c·Δz)`, indexed with x slowest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    pub origin: Vector3<f64>,
    pub spacing: Vector3<f64>,
    pub n: [usize; 3],
}

impl Lattice {
    pub fn len(&self) -> usize {
        self.n.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn axis(&self, a: usize) -> Vec<f64> {
        (0..self.n[a])
            .map(|i| self.origin[a] + i as f64 * self.spacing[a])
            .collect()
    }

    pub fn points(&self) -> Vec<Vector3<f64>> {
        let (xs, ys, zs) = (self.axis(0), self.axis(1), self.axis(2));
        let mut out = Vec::with_capacity(self.len());
        for x in &xs {
            for y in &ys {
                for z in &zs {
                    out.push(Vector3::new(*x, *y, *z));
                }
            }
        }
        out
    }

    /// Volume of one lattice cell.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().map(|h| h.abs()).product()
    }
}

/// Position samples at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialSampling {
    points: Vec<Vector3<f64>>,
    time: f64,
    lattice: Option<Lattice>,
}

impl SpatialSampling {
    pub fn new(points: Vec<Vector3<f64>>, time: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(PhotonError::InvalidSampling("no sample points".into()));
        }
        if !time.is_finite() || points.iter().any(|p| !p.iter().all(|x| x.is_finite())) {
            return Err(PhotonError::InvalidSampling("non-finite coordinate".into()));
        }
        Ok(Self {
            points,
            time,
            lattice: None,
        })
    }

    pub fn lattice(lattice: Lattice, time: f64) -> Result<Self> {
        if lattice.is_empty() {
            return Err(PhotonError::InvalidSampling("empty lattice".into()));
        }
        let mut s = Self::new(lattice.points(), time)?;
        s.lattice = Some(lattice);
        Ok(s)
    }

    /// Cube lattice of `n` points per axis spanning `center ± half_width`.
    pub fn cube(center: Vector3<f64>, half_width: f64, n: usize, time: f64) -> Result<Self> {
        if n < 2 {
            return Err(PhotonError::InvalidSampling("need at least two points per axis".into()));
        }
        let h = 2.0 * half_width / (n - 1) as f64;
        Self::lattice(
            Lattice {
                origin: center.add_scalar(-half_width),
                spacing: Vector3::repeat(h),
                n: [n; 3],
            },
            time,
        )
    }

    /// Lattice reciprocal to the k-grid: `N_a` points with spacing
    /// `2π/(N_a Δk_a)`, centered on `center`. On it the discrete transform
    /// is unitary.
    pub fn reciprocal(grid: &KGrid, center: Vector3<f64>, time: f64) -> Result<Self> {
        let n = grid.shape();
        let h = grid.spacing();
        let spacing = Vector3::from_fn(|a, _| 2.0 * PI / (n[a] as f64 * h[a]));
        let origin = Vector3::from_fn(|a, _| center[a] - ((n[a] - 1) / 2) as f64 * spacing[a]);
        Self::lattice(Lattice { origin, spacing, n }, time)
    }

    /// `n1 × n2` points on the plane `center + s·e1 + t·e2`, `|s|, |t| ≤ extent`,
    /// with `s` varying slowest. Planes spanned by two coordinate axes in
    /// increasing order are stored as lattices.
    pub fn plane(
        center: Vector3<f64>,
        e1: Vector3<f64>,
        e2: Vector3<f64>,
        extent: f64,
        n: [usize; 2],
        time: f64,
    ) -> Result<Self> {
        if n[0] < 2 || n[1] < 2 {
            return Err(PhotonError::InvalidSampling("need at least two points per direction".into()));
        }
        let mut points = Vec::with_capacity(n[0] * n[1]);
        for i in 0..n[0] {
            let s = -extent + 2.0 * extent * i as f64 / (n[0] - 1) as f64;
            for j in 0..n[1] {
                let t = -extent + 2.0 * extent * j as f64 / (n[1] - 1) as f64;
                points.push(center + e1 * s + e2 * t);
            }
        }
        let mut out = Self::new(points, time)?;
        if let (Some(a), Some(b)) = (unit_axis(&e1), unit_axis(&e2)) {
            if a < b {
                let mut spacing = Vector3::repeat(1.0);
                let mut n3 = [1; 3];
                let mut origin = center;
                for (axis, count) in [(a, n[0]), (b, n[1])] {
                    spacing[axis] = 2.0 * extent / (count - 1) as f64;
                    n3[axis] = count;
                    origin[axis] -= extent;
                }
                out.lattice = Some(Lattice {
                    origin,
                    spacing,
                    n: n3,
                });
            }
        }
        Ok(out)
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn lattice_info(&self) -> Option<&Lattice> {
        self.lattice.as_ref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Same points at another time.
    pub fn at_time(&self, time: f64) -> Self {
        Self {
            time,
            ..self.clone()
        }
    }

    /// Points shifted by `d`.
    pub fn shifted(&self, d: Vector3<f64>) -> Self {
        Self {
            points: self.points.iter().map(|p| p + d).collect(),
            time: self.time,
            lattice: self.lattice.map(|l| Lattice {
                origin: l.origin + d,
                ..l
            }),
        }
    }
}

fn unit_axis(e: &Vector3<f64>) -> Option<usize> {
    (0..3).find(|&a| e[a] == 1.0 && e.iter().filter(|x| **x == 0.0).count() == 2)
}

/// `(2π)^(−3/2) Σ_k Δ³k g(k) e^{ik·X}` at every sample point by direct
/// summation.
pub fn fourier_sum_direct<const C: usize>(g: &Field<C>, points: &[Vector3<f64>]) -> Vec<[Complex64; C]> {
    let grid = g.grid();
    let norm = grid.weight() * (2.0 * PI).powf(-1.5);
    let support: Vec<(Vector3<f64>, [Complex64; C])> = (0..grid.len())
        .filter(|idx| g.is_valid(*idx))
        .map(|idx| (grid.point(idx), g.at(idx)))
        .filter(|(_, v)| v.iter().any(|z| *z != ZERO))
        .collect();
    points
        .par_iter()
        .map(|x| {
            let mut acc = [ZERO; C];
            for (k, v) in &support {
                let ph = Complex64::from_polar(1.0, k.dot(x));
                for c in 0..C {
                    acc[c] += v[c] * ph;
                }
            }
            acc.map(|z| z * norm)
        })
        .collect()
}

/// Same sum on a regular lattice, evaluated axis by axis.
pub fn fourier_sum_lattice<const C: usize>(g: &Field<C>, lattice: &Lattice) -> Vec<[Complex64; C]> {
    let grid = g.grid();
    let nk = grid.shape();
    let nx = lattice.n;
    let norm = grid.weight() * (2.0 * PI).powf(-1.5);
    let kax: Vec<Vec<f64>> = (0..3).map(|a| grid.axis_values(a)).collect();
    let xax: Vec<Vec<f64>> = (0..3).map(|a| lattice.axis(a)).collect();
    let phases = |a: usize| -> Vec<Complex64> {
        // phases[x_index * nk + k_index]
        let mut out = Vec::with_capacity(nx[a] * nk[a]);
        for x in &xax[a] {
            for k in &kax[a] {
                out.push(Complex64::from_polar(1.0, k * x));
            }
        }
        out
    };
    let (pz, py, px) = (phases(2), phases(1), phases(0));

    // stage 1: (i, j, l) -> (i, j, c)
    let values: Vec<[Complex64; C]> = (0..grid.len()).map(|idx| g.at(idx)).collect();
    let mut t1 = vec![[ZERO; C]; nk[0] * nk[1] * nx[2]];
    t1.par_chunks_mut(nx[2]).enumerate().for_each(|(ij, out)| {
        let row = &values[ij * nk[2]..(ij + 1) * nk[2]];
        for (c, o) in out.iter_mut().enumerate() {
            let ph = &pz[c * nk[2]..(c + 1) * nk[2]];
            for (v, p) in row.iter().zip(ph) {
                for q in 0..C {
                    o[q] += v[q] * p;
                }
            }
        }
    });
    // stage 2: (i, j, c) -> (i, b, c)
    let mut t2 = vec![[ZERO; C]; nk[0] * nx[1] * nx[2]];
    t2.par_chunks_mut(nx[1] * nx[2]).enumerate().for_each(|(i, out)| {
        for b in 0..nx[1] {
            let ph = &py[b * nk[1]..(b + 1) * nk[1]];
            for (j, p) in ph.iter().enumerate() {
                let src = &t1[(i * nk[1] + j) * nx[2]..(i * nk[1] + j + 1) * nx[2]];
                let dst = &mut out[b * nx[2]..(b + 1) * nx[2]];
                for (o, v) in dst.iter_mut().zip(src) {
                    for q in 0..C {
                        o[q] += v[q] * p;
                    }
                }
            }
        }
    });
    // stage 3: (i, b, c) -> (a, b, c)
    let plane = nx[1] * nx[2];
    let mut out = vec![[ZERO; C]; nx[0] * plane];
    out.par_chunks_mut(plane).enumerate().for_each(|(a, dst)| {
        let ph = &px[a * nk[0]..(a + 1) * nk[0]];
        for (i, p) in ph.iter().enumerate() {
            let src = &t2[i * plane..(i + 1) * plane];
            for (o, v) in dst.iter_mut().zip(src) {
                for q in 0..C {
                    o[q] += v[q] * p;
                }
            }
        }
        for o in dst.iter_mut() {
            *o = o.map(|z| z * norm);
        }
    });
    out
}

fn fourier_sum<const C: usize>(g: &Field<C>, sampling: &SpatialSampling) -> Vec<[Complex64; C]> {
    match sampling.lattice_info() {
        Some(l) => fourier_sum_lattice(g, l),
        None => fourier_sum_direct(g, sampling.points()),
    }
}

/// Values evolved from `from` to `to`, times a real prefactor of `ω`.
fn weighted<const C: usize>(
    g: &Field<C>,
    from: f64,
    to: f64,
    units: &UnitSystem,
    pref: impl Fn(f64) -> f64 + Sync,
) -> Field<C> {
    let grid = Arc::clone(g.grid());
    let dt = to - from;
    g.map(move |idx, v| {
        let omega = units.omega(&grid.point(idx));
        let ph = Complex64::from_polar(pref(omega), -omega * dt);
        v.map(|z| z * ph)
    })
}

fn real_part(v: &[[Complex64; 3]]) -> Vec<Vector3<f64>> {
    v.iter()
        .map(|a| Vector3::new(2.0 * a[0].re, 2.0 * a[1].re, 2.0 * a[2].re))
        .collect()
}

fn w_cross(f: &VectorField3) -> VectorField3 {
    let grid = Arc::clone(f.grid());
    f.map(move |idx, v| {
        let k = grid.point(idx);
        let w = (k / k.norm()).map(Complex64::from);
        let c = w.cross(&Vector3::new(v[0], v[1], v[2]));
        [c[0], c[1], c[2]]
    })
}

/// Electric and magnetic fields at the sampling time (the state is evolved
/// from its own time).
pub fn synthesize_eh(
    f: &VectorWavefunction,
    sampling: &SpatialSampling,
    units: &UnitSystem,
) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
    let (t0, t) = (f.time(), sampling.time());
    let ge = weighted(f.field(), t0, t, units, |w| units.e_prefactor(w));
    let gh = weighted(&w_cross(f.field()), t0, t, units, |w| units.h_prefactor(w));
    (
        real_part(&fourier_sum(&ge, sampling)),
        real_part(&fourier_sum(&gh, sampling)),
    )
}

/// Coulomb-gauge vector potential at the sampling time.
pub fn synthesize_a(f: &VectorWavefunction, sampling: &SpatialSampling, units: &UnitSystem) -> Vec<Vector3<f64>> {
    let ga = weighted(f.field(), f.time(), sampling.time(), units, |w| units.a_prefactor(w));
    let minus_i = Complex64::new(0.0, -1.0);
    let v = fourier_sum(&ga, sampling);
    v.iter()
        .map(|a| Vector3::from_fn(|c, _| 2.0 * (a[c] * minus_i).re))
        .collect()
}

/// `F(X, t) = (2π)^(−3/2) ∫ f e^{ik·X} d³k`.
pub fn vector_f(f: &VectorWavefunction, sampling: &SpatialSampling, units: &UnitSystem) -> Vec<[Complex64; 3]> {
    let g = weighted(f.field(), f.time(), sampling.time(), units, |_| 1.0);
    fourier_sum(&g, sampling)
}

/// `F̃(ξ, t) = (2π)^(−3/2) ∫ f̃ e^{ik·ξ} d³k`.
pub fn position_amplitude(
    ft: &TwoComponentWavefunction,
    sampling: &SpatialSampling,
    units: &UnitSystem,
) -> Vec<[Complex64; 2]> {
    let g = weighted(ft.field(), ft.time(), sampling.time(), units, |_| 1.0);
    fourier_sum(&g, sampling)
}

/// Kernel `Π(r) = (2π)^(−3) ∫ ϖ(k) e^{ik·r} d³k` on the grid.
pub fn pi_kernel(grid: &Arc<KGrid>, gauge: BerryGauge, r: &Vector3<f64>) -> Matrix3x2<Complex64> {
    let triads = TriadField::new(grid, gauge);
    pi_kernel_with(&triads, r)
}

fn pi_kernel_with(triads: &TriadField, r: &Vector3<f64>) -> Matrix3x2<Complex64> {
    let grid = triads.grid();
    let mut acc = Matrix3x2::<Complex64>::zeros();
    for idx in 0..grid.len() {
        if let Some(t) = triads.get(idx) {
            let ph = Complex64::from_polar(1.0, grid.point(idx).dot(r));
            acc += t.varpi_complex() * ph;
        }
    }
    acc * Complex64::from(grid.weight() / (2.0 * PI).powi(3))
}

/// `F(X) = Σ_ξ Δ³ξ Π(X − ξ) F̃(ξ)` by direct double quadrature over the
/// samples of `F̃`.
pub fn vector_f_from_tilde(
    grid: &Arc<KGrid>,
    gauge: BerryGauge,
    tilde: &[[Complex64; 2]],
    xi: &SpatialSampling,
    cell_volume: f64,
    points: &[Vector3<f64>],
) -> Vec<[Complex64; 3]> {
    let triads = TriadField::new(grid, gauge);
    points
        .par_iter()
        .map(|x| {
            let mut acc = Vector3::<Complex64>::zeros();
            for (q, ft) in xi.points().iter().zip(tilde) {
                let pi = pi_kernel_with(&triads, &(x - q));
                acc += pi * nalgebra::Vector2::new(ft[0], ft[1]);
            }
            [acc[0] * cell_volume, acc[1] * cell_volume, acc[2] * cell_volume]
        })
        .collect()
}

/// `Σ |v|² · cell` over samples.
pub fn sample_norm_sqr<const C: usize>(values: &[[Complex64; C]], cell_volume: f64) -> f64 {
    values
        .iter()
        .map(|v| v.iter().map(|z| z.norm_sqr()).sum::<f64>())
        .sum::<f64>()
        * cell_volume
}

/// Centroid of `Σ_c |v_c|²` over the sample points.
pub fn intensity_centroid<const C: usize>(points: &[Vector3<f64>], values: &[[Complex64; C]]) -> Vector3<f64> {
    let mut num = Vector3::zeros();
    let mut den = 0.0;
    for (p, v) in points.iter().zip(values) {
        let d: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        num += p * d;
        den += d;
    }
    num / den
}

/// All synthesized quantities at one sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSnapshot {
    pub points: Vec<Vector3<f64>>,
    pub time: f64,
    pub e: Vec<Vector3<f64>>,
    pub h: Vec<Vector3<f64>>,
    pub a: Vec<Vector3<f64>>,
    pub f: Vec<[Complex64; 3]>,
    /// `F̃` when a two-component state was supplied.
    pub f_tilde: Option<Vec<[Complex64; 2]>>,
}

impl FieldSnapshot {
    pub fn synthesize(f: &VectorWavefunction, sampling: &SpatialSampling, units: &UnitSystem) -> Self {
        let (e, h) = synthesize_eh(f, sampling, units);
        Self {
            points: sampling.points().to_vec(),
            time: sampling.time(),
            e,
            h,
            a: synthesize_a(f, sampling, units),
            f: vector_f(f, sampling, units),
            f_tilde: None,
        }
    }

    pub fn with_tilde(mut self, ft: &TwoComponentWavefunction, units: &UnitSystem) -> Result<Self> {
        let s = SpatialSampling::new(self.points.clone(), self.time)?;
        self.f_tilde = Some(position_amplitude(ft, &s, units));
        Ok(self)
    }

    /// CSV with columns `x,y,z,Ex,Ey,Ez,Hx,Hy,Hz,Ax,Ay,Az,F2`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "x,y,z,Ex,Ey,Ez,Hx,Hy,Hz,Ax,Ay,Az,F2")?;
        for i in 0..self.points.len() {
            let f2: f64 = self.f[i].iter().map(|z| z.norm_sqr()).sum();
            let cols: Vec<String> = [self.points[i], self.e[i], self.h[i], self.a[i]]
                .iter()
                .flat_map(|v| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>())
                .chain(std::iter::once(format!("{f2:e}")))
                .collect();
            writeln!(out, "{}", cols.join(","))?;
        }
        Ok(())
    }
}

/// Result of a finite-difference divergence check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    /// `max |∇·V|` over the probe points.
    pub max_divergence: f64,
    /// `max ‖∇V‖_F` over the probe points.
    pub max_gradient: f64,
    pub relative: f64,
}

/// Divergence of a synthesized real vector field by 4th-order central
/// differences with step `step`, relative to the largest Frobenius norm of
/// the Jacobian.
pub fn divergence_check<F>(synth: F, probes: &[Vector3<f64>], time: f64, step: f64) -> Result<DivergenceReport>
where
    F: Fn(&SpatialSampling) -> Vec<Vector3<f64>>,
{
    let offsets = [-2.0, -1.0, 1.0, 2.0];
    let weights = [1.0 / 12.0, -8.0 / 12.0, 8.0 / 12.0, -1.0 / 12.0];
    let mut pts = Vec::with_capacity(probes.len() * 12);
    for p in probes {
        for a in 0..3 {
            for o in offsets {
                let mut q = *p;
                q[a] += o * step;
                pts.push(q);
            }
        }
    }
    let values = synth(&SpatialSampling::new(pts, time)?);
    let mut max_div = 0.0f64;
    let mut max_grad = 0.0f64;
    for (pi, _) in probes.iter().enumerate() {
        let mut jac = nalgebra::Matrix3::<f64>::zeros();
        for a in 0..3 {
            for (m, w) in weights.iter().enumerate() {
                let v = values[pi * 12 + a * 4 + m];
                for c in 0..3 {
                    jac[(c, a)] += w * v[c] / step;
                }
            }
        }
        max_div = max_div.max(jac.trace().abs());
        max_grad = max_grad.max(jac.norm());
    }
    Ok(DivergenceReport {
        max_divergence: max_div,
        max_gradient: max_grad,
        relative: if max_grad > 0.0 { max_div / max_grad } else { 0.0 },
    })
}

/// `max ‖∂A/∂t + E‖ / max ‖E‖` with `∂A/∂t` from a central difference of
/// half-step `dt`.
pub fn maxwell_residual(f: &VectorWavefunction, sampling: &SpatialSampling, units: &UnitSystem, dt: f64) -> f64 {
    let t = sampling.time();
    let ap = synthesize_a(f, &sampling.at_time(t + dt), units);
    let am = synthesize_a(f, &sampling.at_time(t - dt), units);
    let (e, _) = synthesize_eh(f, sampling, units);
    let emax = e.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let worst = ap
        .iter()
        .zip(&am)
        .zip(&e)
        .map(|((p, m), e)| ((p - m) / (2.0 * dt) + e).norm())
        .fold(0.0, f64::max);
    worst / emax
}

/// Spinor samples `F̃` mapped through `ϖ` of a given gauge; used by the
/// linearity check `F = Σ ϖ-weighted F̃` (same as synthesizing `ϖf̃`).
pub fn embed_then_synthesize(ft: &TwoComponentWavefunction, sampling: &SpatialSampling, units: &UnitSystem) -> Vec<[Complex64; 3]> {
    let f = crate::wavefunction::embed(ft);
    vector_f(&f, sampling, units)
}

/// Synthesis of each triad column weighted by the matching `f̃` component.
pub fn column_synthesis(ft: &TwoComponentWavefunction, sampling: &SpatialSampling, units: &UnitSystem) -> Vec<[Complex64; 3]> {
    let triads = TriadField::new(ft.grid(), ft.gauge());
    let cols: [VectorField3; 2] = std::array::from_fn(|c| {
        ft.field().try_map(|idx, v| {
            let t = triads.get(idx)?;
            let e = if c == 0 { t.u } else { t.v };
            Some([v[c] * e.x, v[c] * e.y, v[c] * e.z])
        })
    });
    let base = VectorWavefunction::new(cols[0].clone(), ft.time());
    let other = VectorWavefunction::new(cols[1].clone(), ft.time());
    match (base, other) {
        (Ok(a), Ok(b)) => {
            let fa = vector_f(&a, sampling, units);
            let fb = vector_f(&b, sampling, units);
            fa.iter()
                .zip(&fb)
                .map(|(x, y)| std::array::from_fn(|c| x[c] + y[c]))
                .collect()
        }
        _ => unreachable!("triad columns are transverse"),
    }
}

/// Displacement of the intensity centroid over one box-crossing time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TranslationReport {
    /// Edge of the window holding the packet, `2W`.
    pub window: f64,
    /// `T = 2W/c`.
    pub crossing_time: f64,
    pub start_centroid: [f64; 3],
    pub end_centroid: [f64; 3],
    /// `c·T`.
    pub expected_distance: f64,
    /// `|Δ − cT·d|/(cT)` with `d` the propagation direction.
    pub relative_error: f64,
}

/// Tracks the centroid of `Σ|v|²` produced by `synth` from `t0` to
/// `t0 + T`, where `T` is the time light needs to cross a window of edge
/// `2·half_window`. The sampling lattice of spacing `spacing` is the
/// bounding box of the windows centered on `start` and `start + cT·d`.
pub fn envelope_translation<const C: usize, F>(
    synth: F,
    start: Vector3<f64>,
    direction: Vector3<f64>,
    half_window: f64,
    spacing: f64,
    t0: f64,
    units: &UnitSystem,
) -> Result<TranslationReport>
where
    F: Fn(&SpatialSampling) -> Vec<[Complex64; C]>,
{
    if !(half_window > 0.0 && spacing > 0.0) {
        return Err(PhotonError::InvalidSampling("window and spacing must be positive".into()));
    }
    let d = direction.normalize();
    let t = 2.0 * half_window / units.c;
    let end = start + d * (units.c * t);
    let lo = start.inf(&end).add_scalar(-half_window);
    let hi = start.sup(&end).add_scalar(half_window);
    let n: [usize; 3] = std::array::from_fn(|a| ((hi[a] - lo[a]) / spacing).ceil() as usize + 1);
    let lattice = Lattice {
        origin: lo,
        spacing: Vector3::repeat(spacing),
        n,
    };
    let s0 = SpatialSampling::lattice(lattice, t0)?;
    let s1 = s0.at_time(t0 + t);
    let c0 = intensity_centroid(s0.points(), &synth(&s0));
    let c1 = intensity_centroid(s1.points(), &synth(&s1));
    let dist = units.c * t;
    Ok(TranslationReport {
        window: 2.0 * half_window,
        crossing_time: t,
        start_centroid: c0.into(),
        end_centroid: c1.into(),
        expected_distance: dist,
        relative_error: ((c1 - c0) - d * dist).norm() / dist,
    })
}

/// `max |F_direct − F_kernel| / max |F_direct|` where `F_kernel` convolves
/// `F̃` sampled on the reciprocal lattice with the kernel `Π`.
pub fn nonlocal_relation_residual(
    ft: &TwoComponentWavefunction,
    points: &[Vector3<f64>],
    units: &UnitSystem,
) -> Result<f64> {
    let grid = ft.grid();
    let xi = SpatialSampling::reciprocal(grid, Vector3::zeros(), ft.time())?;
    let cell = xi.lattice_info().map(|l| l.cell_volume()).unwrap_or(0.0);
    let tilde = position_amplitude(ft, &xi, units);
    let via_kernel = vector_f_from_tilde(grid, ft.gauge(), &tilde, &xi, cell, points);
    let direct = embed_then_synthesize(ft, &SpatialSampling::new(points.to_vec(), ft.time())?, units);
    let scale = direct
        .iter()
        .flat_map(|v| v.iter().map(|z| z.norm()))
        .fold(0.0, f64::max);
    let worst = direct
        .iter()
        .zip(&via_kernel)
        .flat_map(|(a, b)| (0..3).map(move |c| (a[c] - b[c]).norm()))
        .fold(0.0, f64::max);
    Ok(worst / scale)
}

/// Helper for tests and the CLI: the zero spinor field on a grid.
pub fn zero_state(grid: &Arc<KGrid>, gauge: BerryGauge) -> TwoComponentWavefunction {
    TwoComponentWavefunction::new(SpinorField2::zeros(grid), gauge, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kgrid::GridSpec;
    use crate::wavefunction::{embed, make_gaussian_packet, Helicity};

    // Angular width chosen so the packet fits the box.
    fn packet(n: usize, hw: f64) -> (Arc<KGrid>, TwoComponentWavefunction) {
        let k0 = Vector3::new(0.0, 0.0, 10.0);
        let div = hw / 65.0;
        let g = GridSpec::cube(k0, hw, n, Vector3::x()).build().unwrap();
        let p = make_gaussian_packet(&g, k0, div, Helicity::Plus, BerryGauge::x()).unwrap();
        (g, p)
    }

    #[test]
    fn lattice_fast_path_matches_direct() {
        let (_, p) = packet(13, 0.6);
        let f = embed(&p);
        let lat = Lattice {
            origin: Vector3::new(-1.0, -0.5, -2.0),
            spacing: Vector3::new(0.4, 0.25, 0.5),
            n: [5, 4, 7],
        };
        let fast = fourier_sum_lattice(f.field(), &lat);
        let slow = fourier_sum_direct(f.field(), &lat.points());
        let scale = slow.iter().flat_map(|v| v.iter().map(|z| z.norm())).fold(0.0, f64::max);
        for (a, b) in fast.iter().zip(&slow) {
            for c in 0..3 {
                assert!((a[c] - b[c]).norm() <= 1e-10 * scale);
            }
        }
    }

    #[test]
    fn zero_state_gives_zero_fields() {
        let (g, _) = packet(9, 0.6);
        let f = embed(&zero_state(&g, BerryGauge::x()));
        let s = SpatialSampling::cube(Vector3::zeros(), 1.0, 3, 0.0).unwrap();
        let snap = FieldSnapshot::synthesize(&f, &s, &UnitSystem::natural());
        assert!(snap.e.iter().chain(&snap.h).chain(&snap.a).all(|v| v.norm() == 0.0));
    }

    #[test]
    fn h_is_synthesis_of_w_cross_f() {
        let (_, p) = packet(13, 0.6);
        let f = embed(&p);
        let s = SpatialSampling::new(vec![Vector3::new(0.3, -0.2, 1.0), Vector3::new(0.0, 0.0, 0.0)], 0.4).unwrap();
        let u = UnitSystem::natural();
        let (_, h) = synthesize_eh(&f, &s, &u);
        let wf = VectorWavefunction::new(w_cross(f.field()), f.time()).unwrap();
        let (oracle, _) = synthesize_eh(&wf, &s, &u);
        for (a, b) in h.iter().zip(&oracle) {
            assert!((a - b).norm() <= 1e-10 * b.norm().max(1e-300));
        }
    }

    #[test]
    fn parseval_on_reciprocal_lattice() {
        let (g, p) = packet(9, 0.6);
        let s = SpatialSampling::reciprocal(&g, Vector3::zeros(), 0.0).unwrap();
        let ft = position_amplitude(&p, &s, &UnitSystem::natural());
        let cell = s.lattice_info().unwrap().cell_volume();
        let lhs = sample_norm_sqr(&ft, cell);
        assert!((lhs - p.norm_sqr()).abs() < 1e-10);
    }

    #[test]
    fn columns_reproduce_embedding() {
        let (_, p) = packet(9, 0.6);
        let s = SpatialSampling::new(vec![Vector3::new(0.5, 0.1, -0.3)], 0.0).unwrap();
        let u = UnitSystem::natural();
        let a = embed_then_synthesize(&p, &s, &u);
        let b = column_synthesis(&p, &s, &u);
        for c in 0..3 {
            assert!((a[0][c] - b[0][c]).norm() < 1e-12);
        }
    }

    #[test]
    fn narrow_packet_potential_scales_as_field_over_omega() {
        let (_, p) = packet(15, 0.7);
        let f = embed(&p);
        let s = SpatialSampling::plane(Vector3::zeros(), Vector3::x(), Vector3::z(), 3.0, [25, 25], 0.0).unwrap();
        let u = UnitSystem::natural();
        let (e, _) = synthesize_eh(&f, &s, &u);
        let a = synthesize_a(&f, &s, &u);
        let emax = e.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let amax = a.iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!((amax * 10.0 / emax - 1.0).abs() < 0.05);
    }

    #[test]
    fn kernel_relation_on_coarse_grid() {
        let (_, p) = packet(7, 0.6);
        let pts = [Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.5, -0.7, 2.0)];
        assert!(nonlocal_relation_residual(&p, &pts, &UnitSystem::natural()).unwrap() < 1e-3);
    }

    #[test]
    fn envelope_moves_at_light_speed() {
        let k0 = Vector3::new(0.0, 0.0, 10.0);
        let g = GridSpec::cube(k0, 3.25, 35, Vector3::x()).build().unwrap();
        let p = make_gaussian_packet(&g, k0, 0.05, Helicity::Minus, BerryGauge::x()).unwrap();
        let f = embed(&p);
        let u = UnitSystem::natural();
        let r = envelope_translation(|s| vector_f(&f, s, &u), Vector3::zeros(), k0, 6.0, 0.6, 0.0, &u).unwrap();
        assert!(r.relative_error < 0.02, "{r:?}");
    }

    #[test]
    fn si_units_rescale_prefactors() {
        let u = UnitSystem::si();
        let w = 1e15;
        assert!((u.e_prefactor(w) / u.a_prefactor(w) - w).abs() / w < 1e-12);
    }

    #[test]
    fn axis_plane_uses_lattice_with_same_points() {
        let c = Vector3::new(0.1, 0.2, 0.3);
        let s = SpatialSampling::plane(c, Vector3::x(), Vector3::z(), 2.0, [5, 7], 0.0).unwrap();
        let l = s.lattice_info().expect("lattice");
        for (a, b) in l.points().iter().zip(s.points()) {
            assert!((a - b).norm() < 1e-14);
        }
        let oblique = SpatialSampling::plane(c, Vector3::z(), Vector3::x(), 2.0, [5, 7], 0.0).unwrap();
        assert!(oblique.lattice_info().is_none());
    }

    #[test]
    fn sampling_validation() {
        assert!(SpatialSampling::new(vec![], 0.0).is_err());
        assert!(SpatialSampling::new(vec![Vector3::new(f64::NAN, 0.0, 0.0)], 0.0).is_err());
    }
}
