//! Vector and two-component wavefunctions and the maps between them.
//!
//! A vector wavefunction `f(k)` is transverse, `f†w = 0`. Given a Berry
//! gauge, `f̃ = ϖ†f` is an unconstrained two-component wavefunction and
//! `f = ϖf̃` recovers the vector form.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{Matrix2, Vector2, Vector3};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{PhotonError, Result};
use crate::gauge::{angle_between, helicity_rotation, BerryGauge, TriadField};
use crate::kgrid::{KGrid, ScalarField, SpinorField2, VectorField3};

/// Transversality tolerance relative to `max|f|`.
pub const TRANSVERSALITY_TOL: f64 = 1e-10;

/// Amplitude (relative to peak) above which a packet is considered to touch
/// the box edge or a singular point.
pub const PACKET_TAIL_TOL: f64 = 1e-8;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Helicity quantum number `σ = ±1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Helicity {
    #[serde(rename = "+1", alias = "plus")]
    Plus,
    #[serde(rename = "-1", alias = "minus")]
    Minus,
}

impl Helicity {
    pub fn value(self) -> f64 {
        match self {
            Helicity::Plus => 1.0,
            Helicity::Minus => -1.0,
        }
    }

    pub fn from_sign(sign: f64) -> Option<Self> {
        if sign == 1.0 {
            Some(Helicity::Plus)
        } else if sign == -1.0 {
            Some(Helicity::Minus)
        } else {
            None
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Helicity::Plus => Helicity::Minus,
            Helicity::Minus => Helicity::Plus,
        }
    }

    /// `α_σ = (1, iσ)/√2`, the eigenvector of `σ̂₃` with eigenvalue `σ`.
    pub fn eigenvector(self) -> [Complex64; 2] {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        [Complex64::from(r), Complex64::new(0.0, self.value() * r)]
    }
}

/// Transverse vector wavefunction on a k-grid.
#[derive(Debug, Clone)]
pub struct VectorWavefunction {
    field: VectorField3,
    time: f64,
}

impl VectorWavefunction {
    /// Checks transversality to `TRANSVERSALITY_TOL·max|f|`.
    pub fn new(field: VectorField3, time: f64) -> Result<Self> {
        let state = Self { field, time };
        let (violation, scale) = state.transversality();
        if violation > TRANSVERSALITY_TOL * scale {
            return Err(PhotonError::TransversalityViolated {
                violation,
                tolerance: TRANSVERSALITY_TOL * scale,
            });
        }
        Ok(state)
    }

    pub fn field(&self) -> &VectorField3 {
        &self.field
    }

    pub fn grid(&self) -> &Arc<KGrid> {
        self.field.grid()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// `(max|f†w|, max|f|)` over valid points.
    pub fn transversality(&self) -> (f64, f64) {
        let grid = self.field.grid();
        let mut worst = 0.0f64;
        for idx in 0..grid.len() {
            if !self.field.is_valid(idx) {
                continue;
            }
            let k = grid.point(idx);
            let w = k / k.norm();
            let f = self.field.at(idx);
            let dot: Complex64 = (0..3).map(|i| f[i].conj() * w[i]).sum();
            worst = worst.max(dot.norm());
        }
        (worst, self.field.max_abs())
    }

    pub fn norm_sqr(&self) -> f64 {
        self.field.norm_sqr()
    }

    /// Multiplies by `exp(−i|k|Δt)` (`c = 1`).
    pub fn evolve(&self, dt: f64) -> Self {
        Self {
            field: evolve_field(&self.field, dt),
            time: self.time + dt,
        }
    }

    pub fn with_time(self, time: f64) -> Self {
        Self { time, ..self }
    }
}

/// Two-component wavefunction in a declared gauge.
#[derive(Debug, Clone)]
pub struct TwoComponentWavefunction {
    field: SpinorField2,
    gauge: BerryGauge,
    time: f64,
}

impl TwoComponentWavefunction {
    pub fn new(field: SpinorField2, gauge: BerryGauge, time: f64) -> Self {
        Self { field, gauge, time }
    }

    pub fn field(&self) -> &SpinorField2 {
        &self.field
    }

    pub fn into_field(self) -> SpinorField2 {
        self.field
    }

    pub fn grid(&self) -> &Arc<KGrid> {
        self.field.grid()
    }

    pub fn gauge(&self) -> BerryGauge {
        self.gauge
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn norm_sqr(&self) -> f64 {
        self.field.norm_sqr()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm_sqr().sqrt();
        Self {
            field: self.field.scale(Complex64::from(1.0 / n)),
            ..self.clone()
        }
    }

    pub fn evolve(&self, dt: f64) -> Self {
        Self {
            field: evolve_field(&self.field, dt),
            gauge: self.gauge,
            time: self.time + dt,
        }
    }

    /// Linear combination `a·self + b·other` (same gauge and grid).
    pub fn combine(&self, a: Complex64, other: &Self, b: Complex64) -> Self {
        Self {
            field: self
                .field
                .zip_map(&other.field, |_, x, y| [a * x[0] + b * y[0], a * x[1] + b * y[1]]),
            gauge: self.gauge,
            time: self.time,
        }
    }
}

fn evolve_field<const C: usize>(
    field: &crate::kgrid::Field<C>,
    dt: f64,
) -> crate::kgrid::Field<C> {
    let grid = Arc::clone(field.grid());
    field.map(move |idx, v| {
        let phase = Complex64::new(0.0, -grid.point(idx).norm() * dt).exp();
        v.map(|z| z * phase)
    })
}

/// `f̃ = ϖ†f`. Points where the gauge is singular become invalid; an error is
/// raised if the state carries amplitude there.
pub fn project(f: &VectorWavefunction, gauge: BerryGauge) -> Result<TwoComponentWavefunction> {
    let (violation, scale) = f.transversality();
    if violation > TRANSVERSALITY_TOL * scale {
        return Err(PhotonError::TransversalityViolated {
            violation,
            tolerance: TRANSVERSALITY_TOL * scale,
        });
    }
    let grid = f.grid();
    let triads = TriadField::new(grid, gauge);
    check_singular_support(&f.field, &triads)?;
    let regular = triads.regular_mask();
    let field = f.field.restrict(&regular).map(|idx, v| {
        let t = triads.get(idx).expect("restricted to regular points");
        [
            v[0] * t.u.x + v[1] * t.u.y + v[2] * t.u.z,
            v[0] * t.v.x + v[1] * t.v.y + v[2] * t.v.z,
        ]
    });
    Ok(TwoComponentWavefunction::new(field, gauge, f.time))
}

/// `f = ϖf̃`; transverse by construction.
pub fn embed(ft: &TwoComponentWavefunction) -> VectorWavefunction {
    let triads = TriadField::new(ft.grid(), ft.gauge);
    let field: VectorField3 = ft.field.restrict(&triads.regular_mask()).map(|idx, v| {
        let t = triads.get(idx).expect("restricted to regular points");
        std::array::from_fn(|i| v[0] * t.u[i] + v[1] * t.v[i])
    });
    VectorWavefunction {
        field,
        time: ft.time,
    }
}

/// `f̃' = exp(iσ̂₃φ)f̃` with `φ` the gauge-change angle.
pub fn gauge_transform(
    ft: &TwoComponentWavefunction,
    target: BerryGauge,
) -> Result<TwoComponentWavefunction> {
    let grid = ft.grid();
    let from = TriadField::new(grid, ft.gauge);
    let to = TriadField::new(grid, target);
    check_singular_support(&ft.field, &to)?;
    let keep: Vec<bool> = (0..grid.len())
        .map(|idx| from.get(idx).is_some() && to.get(idx).is_some())
        .collect();
    let field = ft.field.restrict(&keep).map(|idx, v| {
        let phi = angle_between(from.get(idx).unwrap(), to.get(idx).unwrap());
        let r = helicity_rotation(-phi);
        let out = r * Vector2::new(v[0], v[1]);
        [out[0], out[1]]
    });
    Ok(TwoComponentWavefunction::new(field, target, ft.time))
}

fn check_singular_support<const C: usize>(
    field: &crate::kgrid::Field<C>,
    triads: &TriadField,
) -> Result<()> {
    let peak = field.max_abs();
    if peak == 0.0 {
        return Ok(());
    }
    let mut worst = 0.0f64;
    for idx in 0..field.grid().len() {
        if field.is_valid(idx) && triads.get(idx).is_none() {
            worst = worst.max(field.density_at(idx).sqrt() / peak);
        }
    }
    if worst > PACKET_TAIL_TOL {
        let grid = field.grid();
        return Err(PhotonError::SingularGauge {
            angle: 0.0,
            eps_cone: grid.eps_cone(),
        });
    }
    Ok(())
}

/// Rotation of the vector wavefunction about the wavevector,
/// `f' = exp(−i(Σ̂·w)φ)f`: a rotation by `φ(k)` about `w`.
pub fn rotate_about_wavevector(f: &VectorWavefunction, phi: &ScalarField) -> VectorWavefunction {
    let grid = Arc::clone(f.grid());
    let field = f.field.zip_map(phi, move |idx, v, p| {
        let k = grid.point(idx);
        let w = k / k.norm();
        let (s, c) = p[0].re.sin_cos();
        let fv = Vector3::new(v[0], v[1], v[2]);
        let wc = w.map(Complex64::from);
        let wxf = wc.cross(&fv);
        let wdf = wc.dot(&fv);
        let out = fv * Complex64::from(c) + wxf * Complex64::from(s) + wc * (wdf * (1.0 - c));
        [out[0], out[1], out[2]]
    });
    VectorWavefunction {
        field,
        time: f.time,
    }
}

/// Isotropic Gaussian helicity eigenpacket `α_σ·N·exp(−|k−k₀|²/(2s²))` with
/// `s = |k₀|·angular_width`, normalized under the grid quadrature.
pub fn make_gaussian_packet(
    grid: &Arc<KGrid>,
    k0: Vector3<f64>,
    angular_width: f64,
    helicity: Helicity,
    gauge: BerryGauge,
) -> Result<TwoComponentWavefunction> {
    let s = k0.norm() * angular_width;
    if !(s > 0.0 && s.is_finite()) {
        return Err(PhotonError::InvalidScenario(
            "packet width must be positive".into(),
        ));
    }
    let envelope = |k: &Vector3<f64>| (-(k - k0).norm_squared() / (2.0 * s * s)).exp();
    let triads = TriadField::new(grid, gauge);
    if triads.get(nearest_index(grid, &k0)).is_none() {
        return Err(PhotonError::PacketTouchesSingularCone { relative: 1.0 });
    }

    let shape = grid.shape();
    let mut edge = 0.0f64;
    let mut singular = 0.0f64;
    for idx in 0..grid.len() {
        let k = grid.point(idx);
        let e = envelope(&k);
        let c = grid.coords(idx);
        if (0..3).any(|a| c[a] == 0 || c[a] + 1 == shape[a]) {
            edge = edge.max(e);
        }
        if triads.get(idx).is_none() {
            singular = singular.max(e);
        }
    }
    if edge > PACKET_TAIL_TOL {
        return Err(PhotonError::PacketTouchesBoundary { relative: edge });
    }
    if singular > PACKET_TAIL_TOL {
        return Err(PhotonError::PacketTouchesSingularCone { relative: singular });
    }

    let alpha = helicity.eigenvector();
    let field = SpinorField2::try_from_fn(grid, |idx, k| {
        triads.get(idx)?;
        let e = Complex64::from(envelope(&k));
        Some([alpha[0] * e, alpha[1] * e])
    });
    Ok(TwoComponentWavefunction::new(field, gauge, 0.0).normalized())
}

fn nearest_index(grid: &KGrid, k: &Vector3<f64>) -> usize {
    let shape = grid.shape();
    let rel = k - grid.center();
    let h = grid.spacing();
    let ijk = std::array::from_fn(|a| {
        let mid = ((shape[a] - 1) / 2) as f64;
        (rel[a] / h[a] + mid).round().clamp(0.0, (shape[a] - 1) as f64) as usize
    });
    grid.index(ijk)
}

/// Haar-random unit spinor.
pub fn random_spinor<R: Rng + ?Sized>(rng: &mut R) -> [Complex64; 2] {
    let z: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
    let n = z.iter().map(|x| x * x).sum::<f64>().sqrt();
    [
        Complex64::new(z[0] / n, z[1] / n),
        Complex64::new(z[2] / n, z[3] / n),
    ]
}

/// Sampling ranges for random packets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketRanges {
    /// Center offset per axis, as a fraction of the half width.
    pub center_fraction: f64,
    /// Width range as fractions of the shortest box edge.
    pub width_min: f64,
    pub width_max: f64,
    /// Bounds on `|a_i|·s` and `|b|·s²`.
    pub linear_phase: f64,
    pub quadratic_phase: f64,
}

impl PacketRanges {
    /// Broad packets (widths 1/8 to 1/4 of the box) for operator identities
    /// checked away from the boundary.
    pub const SPREAD: Self = Self {
        center_fraction: 0.5,
        width_min: 0.125,
        width_max: 0.25,
        linear_phase: 0.5,
        quadratic_phase: 0.1,
    };

    /// Packets negligible (< 1e-8 of peak) at the box edge, for expectation
    /// values.
    pub const LOCALIZED: Self = Self {
        center_fraction: 0.25,
        width_min: 0.05,
        width_max: 0.0625,
        linear_phase: 0.5,
        quadratic_phase: 0.1,
    };
}

/// Parameters of a generic smooth test state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothPacket {
    pub center: Vector3<f64>,
    pub width: f64,
    pub spinor: [Complex64; 2],
    /// Linear phase coefficients (radians per unit k).
    pub linear_phase: Vector3<f64>,
    /// Quadratic phase coefficient (radians per unit k²).
    pub quadratic_phase: f64,
}

impl SmoothPacket {
    /// Draws a packet with [`PacketRanges::SPREAD`].
    pub fn random<R: Rng + ?Sized>(grid: &KGrid, gauge: &BerryGauge, rng: &mut R) -> Self {
        Self::random_with(grid, gauge, &PacketRanges::SPREAD, rng)
    }

    /// Draws a packet: center uniform within `center_fraction` of the half
    /// width (and away from masked points), width uniform in the given
    /// fractions of the shortest box edge, Haar-random polarization, and a
    /// phase `a·δ + b|δ|²` with `|a_i|·s ≤ linear_phase` and
    /// `|b|·s² ≤ quadratic_phase`.
    pub fn random_with<R: Rng + ?Sized>(
        grid: &KGrid,
        gauge: &BerryGauge,
        ranges: &PacketRanges,
        rng: &mut R,
    ) -> Self {
        let hw = grid.half_width();
        let edge = 2.0 * hw.min();
        let cf = ranges.center_fraction;
        loop {
            let center = grid.center()
                + Vector3::from_fn(|a, _| rng.random_range(-cf..=cf) * hw[a]);
            let width = rng.random_range(edge * ranges.width_min..=edge * ranges.width_max);
            let clear = 3.0 * width / center.norm();
            if !gauge.is_regular(&center, grid.eps_cone().max(clear), grid.eps_k()) {
                continue;
            }
            let spinor = random_spinor(rng);
            let lp = ranges.linear_phase;
            let linear_phase = Vector3::from_fn(|_, _| rng.random_range(-lp..=lp) / width);
            let qp = ranges.quadratic_phase;
            let quadratic_phase = rng.random_range(-qp..=qp) / (width * width);
            return Self {
                center,
                width,
                spinor,
                linear_phase,
                quadratic_phase,
            };
        }
    }

    pub fn amplitude(&self, k: &Vector3<f64>) -> Complex64 {
        let d = k - self.center;
        let r2 = d.norm_squared();
        let phase = self.linear_phase.dot(&d) + self.quadratic_phase * r2;
        Complex64::from_polar((-r2 / (2.0 * self.width * self.width)).exp(), phase)
    }

    /// Samples the packet on the grid in `gauge`, normalized.
    pub fn sample(&self, grid: &Arc<KGrid>, gauge: BerryGauge) -> TwoComponentWavefunction {
        let triads = TriadField::new(grid, gauge);
        let field = SpinorField2::try_from_fn(grid, |idx, k| {
            triads.get(idx)?;
            let a = self.amplitude(&k);
            Some([self.spinor[0] * a, self.spinor[1] * a])
        });
        TwoComponentWavefunction::new(field, gauge, 0.0).normalized()
    }
}

/// Unitary `exp(iσ̂₃φ)` acting on two-component values.
pub fn gauge_phase_matrix(phi: f64) -> Matrix2<Complex64> {
    helicity_rotation(-phi)
}

/// Local helicity phase `exp(−iσφ)` picked up by a helicity eigenstate
/// when the vector wavefunction is rotated by `φ` about `w`.
pub fn helicity_phase(helicity: Helicity, phi: f64) -> Complex64 {
    (-I * helicity.value() * phi).exp()
}

/// Two-pi periodicity helper for phase comparisons.
pub fn wrap_angle(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y <= -PI {
        PI
    } else {
        y
    }
}

#[allow(dead_code)]
fn zero2() -> [Complex64; 2] {
    [ZERO; 2]
}
