//! Operators of the two-component representation, expectation values, the
//! Poincaré vector and a commutator-verification harness.
//!
//! Every operator acts on [`SpinorField2`] values. Vector operators carry
//! one component map per Cartesian index. Differential operators use the
//! stencil of their [`OperatorSet`].

use std::fmt;
use std::sync::Arc;

use nalgebra::{Matrix2, Vector2, Vector3};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{commutator, third_index, PauliSet};
use crate::error::{PhotonError, Result};
use crate::gauge::{potential_from_triad, BerryGauge, TriadField};
use crate::kgrid::{gradient_axis, KGrid, SpinorField2, VectorField3};
use crate::stencil::{AxisStencil, Stencil};
use crate::wavefunction::{PacketRanges, SmoothPacket, TwoComponentWavefunction};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Highest stencil order used by default.
pub const DEFAULT_ORDER: usize = 16;

pub type ComponentFn = Arc<dyn Fn(&SpinorField2) -> SpinorField2 + Send + Sync>;

/// A named linear operator with one component map per Cartesian index
/// (a single map for scalar operators).
#[derive(Clone)]
pub struct LinearOperator {
    name: String,
    gauge: Option<BerryGauge>,
    components: Vec<ComponentFn>,
}

impl fmt::Debug for LinearOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinearOperator")
            .field("name", &self.name)
            .field("gauge", &self.gauge)
            .field("components", &self.components.len())
            .finish()
    }
}

impl LinearOperator {
    pub fn new(name: impl Into<String>, gauge: Option<BerryGauge>, components: Vec<ComponentFn>) -> Self {
        assert!(!components.is_empty(), "operator needs at least one component");
        Self {
            name: name.into(),
            gauge,
            components,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// The gauge the operator is tied to; `None` for gauge-independent ones.
    pub fn gauge(&self) -> Option<BerryGauge> {
        self.gauge
    }

    pub fn gauge_dependent(&self) -> bool {
        self.gauge.is_some()
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn component(&self, i: usize) -> &ComponentFn {
        &self.components[i]
    }

    pub fn apply_component(&self, i: usize, f: &SpinorField2) -> SpinorField2 {
        (self.components[i])(f)
    }

    pub fn apply_field(&self, f: &SpinorField2) -> Vec<SpinorField2> {
        self.components.iter().map(|c| c(f)).collect()
    }

    pub fn apply(&self, state: &TwoComponentWavefunction) -> Result<Vec<TwoComponentWavefunction>> {
        self.check_state(state)?;
        Ok(self
            .apply_field(state.field())
            .into_iter()
            .map(|f| TwoComponentWavefunction::new(f, state.gauge(), state.time()))
            .collect())
    }

    /// `⟨f̃|A|f̃⟩/⟨f̃|f̃⟩` per component.
    pub fn expectation(&self, state: &TwoComponentWavefunction) -> Result<Vec<Complex64>> {
        self.check_state(state)?;
        let f = state.field();
        let norm = f.norm_sqr();
        if norm == 0.0 {
            return Err(PhotonError::ZeroIntensity);
        }
        Ok(self.components.iter().map(|c| f.inner(&c(f)) / norm).collect())
    }

    fn check_state(&self, state: &TwoComponentWavefunction) -> Result<()> {
        match self.gauge {
            Some(g) if g != state.gauge() => Err(PhotonError::IncompatibleGauge {
                left: gauge_label(&g),
                right: gauge_label(&state.gauge()),
            }),
            _ => Ok(()),
        }
    }

    /// `self + other`, component by component.
    pub fn plus(&self, other: &LinearOperator, name: impl Into<String>) -> Result<Self> {
        let gauge = merge_gauges(self.gauge, other.gauge)?;
        assert_eq!(self.len(), other.len(), "component counts differ");
        let components = self
            .components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| {
                let (a, b) = (Arc::clone(a), Arc::clone(b));
                Arc::new(move |f: &SpinorField2| &a(f) + &b(f)) as ComponentFn
            })
            .collect();
        Ok(Self::new(name, gauge, components))
    }

    /// `(P×Q)_i = ε_ijk P_j Q_k`, with `P` applied last.
    pub fn cross(&self, other: &LinearOperator, name: impl Into<String>) -> Result<Self> {
        let gauge = merge_gauges(self.gauge, other.gauge)?;
        assert!(self.len() == 3 && other.len() == 3, "cross needs vector operators");
        let components = (0..3)
            .map(|i| {
                let (j, k) = ((i + 1) % 3, (i + 2) % 3);
                let (pj, qk) = (Arc::clone(&self.components[j]), Arc::clone(&other.components[k]));
                let (pk, qj) = (Arc::clone(&self.components[k]), Arc::clone(&other.components[j]));
                Arc::new(move |f: &SpinorField2| &pj(&qk(f)) - &pk(&qj(f))) as ComponentFn
            })
            .collect();
        Ok(Self::new(name, gauge, components))
    }

    pub fn scaled(&self, s: Complex64, name: impl Into<String>) -> Self {
        let components = self
            .components
            .iter()
            .map(|a| {
                let a = Arc::clone(a);
                Arc::new(move |f: &SpinorField2| a(f).scale(s)) as ComponentFn
            })
            .collect();
        Self::new(name, self.gauge, components)
    }
}

fn gauge_label(g: &BerryGauge) -> String {
    let v = g.vector();
    format!("I = ({:.6}, {:.6}, {:.6})", v.x, v.y, v.z)
}

fn merge_gauges(a: Option<BerryGauge>, b: Option<BerryGauge>) -> Result<Option<BerryGauge>> {
    match (a, b) {
        (Some(x), Some(y)) if x != y => Err(PhotonError::IncompatibleGauge {
            left: gauge_label(&x),
            right: gauge_label(&y),
        }),
        (Some(x), _) | (_, Some(x)) => Ok(Some(x)),
        _ => Ok(None),
    }
}

#[inline]
fn sigma3(v: &[Complex64; 2]) -> [Complex64; 2] {
    [-I * v[1], I * v[0]]
}

/// Gauge-dependent per-point geometry.
#[derive(Debug, Clone, Copy)]
struct PointGeometry {
    /// `A_B`.
    potential: Vector3<f64>,
    /// `(I·k)/|I×k| u`, the coefficient of `σ̂₃` in `m̂`.
    m: Vector3<f64>,
    /// `(I×v)/(I·u)`, the coefficient of `σ̂₃` in `ĵ − λ̂`.
    j: Vector3<f64>,
}

/// Builder for the operators of one grid and gauge.
#[derive(Clone)]
pub struct OperatorSet {
    grid: Arc<KGrid>,
    gauge: BerryGauge,
    stencil: Stencil,
    axes: Arc<[AxisStencil; 3]>,
    triads: Arc<TriadField>,
    geometry: Arc<Vec<Option<PointGeometry>>>,
}

impl fmt::Debug for OperatorSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OperatorSet")
            .field("gauge", &self.gauge)
            .field("stencil", &self.stencil)
            .field("shape", &self.grid.shape())
            .finish()
    }
}

/// Highest even order up to [`DEFAULT_ORDER`] that fits the shortest axis.
pub fn default_stencil(grid: &KGrid) -> Stencil {
    let n = grid.shape().into_iter().min().unwrap_or(0);
    let order = DEFAULT_ORDER.min((n - 1) & !1);
    Stencil::Central(order.max(2))
}

impl OperatorSet {
    pub fn new(grid: &Arc<KGrid>, gauge: BerryGauge) -> Self {
        Self::with_stencil(grid, gauge, default_stencil(grid)).expect("default stencil fits the grid")
    }

    pub fn with_stencil(grid: &Arc<KGrid>, gauge: BerryGauge, stencil: Stencil) -> Result<Self> {
        let shape = grid.shape();
        if !stencil.is_valid() || shape.iter().any(|n| *n < stencil.min_points()) {
            return Err(PhotonError::InvalidGrid(format!(
                "stencil {stencil:?} does not fit a {shape:?} grid"
            )));
        }
        let h = grid.spacing();
        let axes = Arc::new(std::array::from_fn(|a| AxisStencil::new(stencil, shape[a], h[a])));
        let triads = Arc::new(TriadField::new(grid, gauge));
        let iv = gauge.vector();
        let geometry = (0..grid.len())
            .into_par_iter()
            .map(|idx| {
                let t = triads.get(idx)?;
                let k = grid.point(idx);
                Some(PointGeometry {
                    potential: potential_from_triad(&k, &gauge, t),
                    m: t.u * (iv.dot(&k) / iv.cross(&k).norm()),
                    j: iv.cross(&t.v) / iv.dot(&t.u),
                })
            })
            .collect();
        Ok(Self {
            grid: Arc::clone(grid),
            gauge,
            stencil,
            axes,
            triads,
            geometry: Arc::new(geometry),
        })
    }

    pub fn grid(&self) -> &Arc<KGrid> {
        &self.grid
    }

    pub fn gauge(&self) -> BerryGauge {
        self.gauge
    }

    pub fn stencil(&self) -> Stencil {
        self.stencil
    }

    /// Boundary layers on which the stencil is one-sided.
    pub fn boundary_shell(&self) -> usize {
        self.stencil.half_width()
    }

    /// `∂f/∂k_axis` with this set's stencil.
    pub fn derivative(&self, f: &SpinorField2, axis: usize) -> SpinorField2 {
        gradient_axis(f, axis, &self.axes[axis])
    }

    fn pointwise<F>(&self, name: &str, gauge: Option<BerryGauge>, f: F) -> LinearOperator
    where
        F: Fn(usize, usize, &[Complex64; 2]) -> Option<[Complex64; 2]> + Send + Sync + 'static,
    {
        let f = Arc::new(f);
        let components = (0..3)
            .map(|axis| {
                let f = Arc::clone(&f);
                Arc::new(move |field: &SpinorField2| pointwise_map(field, |idx, v| f(axis, idx, v)))
                    as ComponentFn
            })
            .collect();
        LinearOperator::new(name, gauge, components)
    }

    /// `ŝ = σ̂₃w`; gauge-independent.
    pub fn spin(&self) -> LinearOperator {
        let grid = Arc::clone(&self.grid);
        self.pointwise("s", None, move |axis, idx, v| {
            let k = grid.point(idx);
            let w = k[axis] / k.norm();
            Some(sigma3(v).map(|z| z * w))
        })
    }

    /// `p̂ = k`.
    pub fn momentum(&self) -> LinearOperator {
        let grid = Arc::clone(&self.grid);
        self.pointwise("p", None, move |axis, idx, v| {
            let k = grid.point(idx)[axis];
            Some(v.map(|z| z * k))
        })
    }

    /// `ω = |k|` (scalar).
    pub fn omega(&self) -> LinearOperator {
        let grid = Arc::clone(&self.grid);
        let c: ComponentFn = Arc::new(move |field: &SpinorField2| {
            pointwise_map(field, |idx, v| {
                let w = grid.point(idx).norm();
                Some(v.map(|z| z * w))
            })
        });
        LinearOperator::new("omega", None, vec![c])
    }

    /// Canonical position `ξ̂ = i∇_k`.
    pub fn canonical_position(&self) -> LinearOperator {
        let components = (0..3)
            .map(|axis| {
                let set = self.clone();
                Arc::new(move |f: &SpinorField2| set.derivative(f, axis).scale(I)) as ComponentFn
            })
            .collect();
        LinearOperator::new("xi", None, components)
    }

    /// `b̂ = σ̂₃A_B`.
    pub fn b_analytic(&self) -> LinearOperator {
        let geo = Arc::clone(&self.geometry);
        self.pointwise("b", Some(self.gauge), move |axis, idx, v| {
            let a = geo[idx]?.potential[axis];
            Some(sigma3(v).map(|z| z * a))
        })
    }

    /// `b̂ = iϖ†(∇_kϖ)` with the derivative of `ϖ` taken by finite
    /// differences of the triad columns.
    pub fn b_numeric(&self) -> LinearOperator {
        let mats = Arc::new(self.connection_matrices());
        self.pointwise("b_numeric", Some(self.gauge), move |axis, idx, v| {
            let m = mats[idx].as_ref()?[axis];
            let out = m * Vector2::new(v[0], v[1]);
            Some([out[0], out[1]])
        })
    }

    /// `iϖ†∂_aϖ` per point and axis; `None` where the stencil meets a
    /// singular point.
    pub fn connection_matrices(&self) -> Vec<Option<[Matrix2<Complex64>; 3]>> {
        let cols: [VectorField3; 2] = std::array::from_fn(|c| {
            VectorField3::try_from_fn(&self.grid, |idx, _| {
                let t = self.triads.get(idx)?;
                let e = if c == 0 { t.u } else { t.v };
                Some([e.x.into(), e.y.into(), e.z.into()])
            })
        });
        let d: Vec<[VectorField3; 2]> = (0..3)
            .map(|a| std::array::from_fn(|c| gradient_axis(&cols[c], a, &self.axes[a])))
            .collect();
        (0..self.grid.len())
            .map(|idx| {
                let t = self.triads.get(idx)?;
                let mut out = [Matrix2::zeros(); 3];
                for (a, da) in d.iter().enumerate() {
                    if !da[0].is_valid(idx) || !da[1].is_valid(idx) {
                        return None;
                    }
                    let du = Vector3::from(da[0].at(idx)).map(|z| z.re);
                    let dv = Vector3::from(da[1].at(idx)).map(|z| z.re);
                    let m = Matrix2::new(t.u.dot(&du), t.u.dot(&dv), t.v.dot(&du), t.v.dot(&dv));
                    out[a] = m.map(|x| I * x);
                }
                Some(out)
            })
            .collect()
    }

    /// Laboratory position `x̂ = ξ̂ + b̂`.
    pub fn position(&self) -> LinearOperator {
        self.canonical_position()
            .plus(&self.b_analytic(), "x")
            .expect("same gauge")
    }

    /// Canonical OAM `λ̂ = −p̂×ξ̂ = −i k×∇_k`.
    pub fn canonical_oam(&self) -> LinearOperator {
        let components = (0..3)
            .map(|i| {
                let set = self.clone();
                let (j, k) = ((i + 1) % 3, (i + 2) % 3);
                Arc::new(move |f: &SpinorField2| {
                    let dk = set.derivative(f, k);
                    let dj = set.derivative(f, j);
                    let points = set.grid.points();
                    dk.zip_map(&dj, |idx, a, b| {
                        let q = points[idx];
                        let (kj, kk) = (q[j], q[k]);
                        [-I * (a[0] * kj - b[0] * kk), -I * (a[1] * kj - b[1] * kk)]
                    })
                }) as ComponentFn
            })
            .collect();
        LinearOperator::new("lambda", None, components)
    }

    /// `m̂ = b̂×p̂ = σ̂₃ (I·k)/|I×k| u`.
    pub fn m(&self) -> LinearOperator {
        let geo = Arc::clone(&self.geometry);
        self.pointwise("m", Some(self.gauge), move |axis, idx, v| {
            let a = geo[idx]?.m[axis];
            Some(sigma3(v).map(|z| z * a))
        })
    }

    /// OAM `l̂ = λ̂ + m̂`.
    pub fn oam(&self) -> LinearOperator {
        self.canonical_oam().plus(&self.m(), "l").expect("same gauge")
    }

    /// OAM built as `−p̂×x̂`.
    pub fn oam_from_position(&self) -> LinearOperator {
        self.momentum()
            .cross(&self.position(), "l_tmp")
            .expect("same gauge")
            .scaled(Complex64::from(-1.0), "l_px")
    }

    /// Total angular momentum `ĵ = ŝ + l̂`.
    pub fn total_j(&self) -> LinearOperator {
        self.spin().plus(&self.oam(), "j").expect("same gauge")
    }

    /// `ĵ = λ̂ + σ̂₃ (I×v)/(I·u)`.
    pub fn total_j_closed(&self) -> LinearOperator {
        let geo = Arc::clone(&self.geometry);
        let rest = self.pointwise("j_rest", Some(self.gauge), move |axis, idx, v| {
            let a = geo[idx]?.j[axis];
            Some(sigma3(v).map(|z| z * a))
        });
        self.canonical_oam().plus(&rest, "j_closed").expect("same gauge")
    }

    /// `H_B = −w/k²` as a multiplier by `iσ̂₃(H_B)_k` on component `k`, the
    /// right-hand side of `[x̂_i, x̂_j] = iε_ijk σ̂₃(H_B)_k`.
    pub fn berry_field_sigma3(&self) -> LinearOperator {
        let grid = Arc::clone(&self.grid);
        self.pointwise("i sigma3 H_B", None, move |axis, idx, v| {
            let k = grid.point(idx);
            let h = -k[axis] / (k.norm() * k.norm_squared());
            Some(sigma3(v).map(|z| z * I * h))
        })
    }

    /// Identity operator (scalar).
    pub fn identity(&self) -> LinearOperator {
        LinearOperator::new("1", None, vec![Arc::new(|f: &SpinorField2| f.clone())])
    }

    /// Seeded random smooth packets ([`PacketRanges::SPREAD`]) in this
    /// set's gauge.
    pub fn random_states(&self, trials: usize, seed: u64) -> Vec<TwoComponentWavefunction> {
        self.random_states_with(&PacketRanges::SPREAD, trials, seed)
    }

    pub fn random_states_with(
        &self,
        ranges: &PacketRanges,
        trials: usize,
        seed: u64,
    ) -> Vec<TwoComponentWavefunction> {
        random_packets(&self.grid, self.gauge, ranges, trials, seed)
            .iter()
            .map(|p| p.sample(&self.grid, self.gauge))
            .collect()
    }
}

/// Seeded random packet parameters; the same seed gives the same packets on
/// any grid with the same box.
pub fn random_packets(
    grid: &KGrid,
    gauge: BerryGauge,
    ranges: &PacketRanges,
    trials: usize,
    seed: u64,
) -> Vec<SmoothPacket> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..trials)
        .map(|_| SmoothPacket::random_with(grid, &gauge, ranges, &mut rng))
        .collect()
}

fn pointwise_map<F>(field: &SpinorField2, f: F) -> SpinorField2
where
    F: Fn(usize, &[Complex64; 2]) -> Option<[Complex64; 2]> + Sync,
{
    field.try_map(f)
}

/// Poincaré vector `ς = f̃†σ̂f̃ / f̃†f̃` in triad components.
pub fn poincare_at(v: &[Complex64; 2]) -> Result<[f64; 3]> {
    let n = v[0].norm_sqr() + v[1].norm_sqr();
    if !(n > 0.0) {
        return Err(PhotonError::ZeroIntensity);
    }
    let z = v[0].conj() * v[1];
    Ok([
        (v[0].norm_sqr() - v[1].norm_sqr()) / n,
        2.0 * z.re / n,
        2.0 * z.im / n,
    ])
}

/// Poincaré vector field and its intensity-weighted average.
#[derive(Debug, Clone, PartialEq)]
pub struct PoincareField {
    /// Per point; `None` at invalid or dark points.
    pub local: Vec<Option<[f64; 3]>>,
    /// `∫f̃†σ̂_i f̃ / ∫f̃†f̃`.
    pub integrated: [f64; 3],
}

/// Points with `f̃†f̃ ≤ dark·max f̃†f̃` are skipped.
pub fn poincare_vector(state: &TwoComponentWavefunction, dark: f64) -> Result<PoincareField> {
    let f = state.field();
    let grid = f.grid();
    let peak = (0..grid.len()).map(|i| f.density_at(i)).fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(PhotonError::ZeroIntensity);
    }
    let mut sum = [0.0; 3];
    let mut total = 0.0;
    let local = (0..grid.len())
        .map(|idx| {
            let d = f.density_at(idx);
            if !f.is_valid(idx) || d <= dark * peak {
                return None;
            }
            let s = poincare_at(&f.at(idx)).ok()?;
            for c in 0..3 {
                sum[c] += s[c] * d;
            }
            total += d;
            Some(s)
        })
        .collect();
    Ok(PoincareField {
        local,
        integrated: sum.map(|x| x / total),
    })
}

/// Stokes parameters expected after a gauge change by `φ`.
pub fn rotate_stokes(s: [f64; 3], phi: f64) -> [f64; 3] {
    let (sn, cs) = (2.0 * phi).sin_cos();
    [s[0] * cs + s[1] * sn, -s[0] * sn + s[1] * cs, s[2]]
}

/// Largest deviation, over points brighter than `dark·peak`, between the
/// local Stokes parameters after the gauge change to `target` and those
/// rotated by `2φ`.
pub fn stokes_rotation_residual(state: &TwoComponentWavefunction, target: BerryGauge, dark: f64) -> Result<f64> {
    let moved = crate::wavefunction::gauge_transform(state, target)?;
    let phi = crate::gauge::gauge_angle_field(state.grid(), state.gauge(), target);
    let before = poincare_vector(state, dark)?;
    let after = poincare_vector(&moved, dark)?;
    let mut worst = 0.0f64;
    for (idx, (a, b)) in before.local.iter().zip(&after.local).enumerate() {
        if let (Some(a), Some(b), true) = (a, b, phi.is_valid(idx)) {
            let r = rotate_stokes(*a, phi.at(idx)[0].re);
            for c in 0..3 {
                worst = worst.max((r[c] - b[c]).abs());
            }
        }
    }
    Ok(worst)
}

/// `‖f‖` over valid points outside a boundary shell.
pub fn interior_norm(f: &SpinorField2, shell: usize) -> f64 {
    let grid = f.grid();
    f.weighted_norm_sqr(|idx| !grid.in_shell(idx, shell)).sqrt()
}

/// Residual statistics over a set of trial states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub max: f64,
    pub median: f64,
    pub per_trial: Vec<f64>,
}

impl ResidualStats {
    pub fn from_trials(per_trial: Vec<f64>) -> Self {
        let mut sorted = per_trial.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = match n {
            0 => 0.0,
            _ if n % 2 == 1 => sorted[n / 2],
            _ => 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]),
        };
        Self {
            max: sorted.last().copied().unwrap_or(0.0),
            median,
            per_trial,
        }
    }
}

/// `‖([A_i, B_j] − E)f̃‖ / ‖f̃‖` for each state, with norms taken outside a
/// boundary shell of `shell` layers.
pub fn commutator_residual(
    a: (&LinearOperator, usize),
    b: (&LinearOperator, usize),
    expected: &dyn Fn(&SpinorField2) -> SpinorField2,
    states: &[TwoComponentWavefunction],
    shell: usize,
) -> Result<ResidualStats> {
    merge_gauges(a.0.gauge(), b.0.gauge())?;
    let per_trial = states
        .iter()
        .map(|s| {
            a.0.check_state(s)?;
            b.0.check_state(s)?;
            let f = s.field();
            let ab = a.0.apply_component(a.1, &b.0.apply_component(b.1, f));
            let ba = b.0.apply_component(b.1, &a.0.apply_component(a.1, f));
            let r = &(&ab - &ba) - &expected(f);
            Ok(interior_norm(&r, shell) / interior_norm(f, shell))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ResidualStats::from_trials(per_trial))
}

/// Right-hand side of a commutation relation `[A_i, B_j] = …`.
#[derive(Clone)]
pub enum Expected {
    Zero,
    /// `iδ_ij`.
    Delta,
    /// `c·ε_ijk C_k`.
    Levi(Complex64, LinearOperator),
    /// `c·ε_ijk (C_k − D_k)`.
    LeviDifference(Complex64, LinearOperator, LinearOperator),
}

impl Expected {
    /// The right-hand side for `(i, j)`, or `None` when it vanishes. Applied
    /// operator components are memoized in `cache` by index `k`.
    fn apply_cached(
        &self,
        i: usize,
        j: usize,
        f: &SpinorField2,
        cache: &mut [Option<SpinorField2>],
    ) -> Option<SpinorField2> {
        match self {
            Expected::Zero => None,
            Expected::Delta if i == j => Some(f.scale(I)),
            Expected::Delta => None,
            Expected::Levi(c, op) => {
                let (k, e) = third_index(i, j)?;
                let v = cache[k].get_or_insert_with(|| op.apply_component(k, f));
                Some(v.scale(*c * e))
            }
            Expected::LeviDifference(c, p, q) => {
                let (k, e) = third_index(i, j)?;
                let v = cache[k]
                    .get_or_insert_with(|| &p.apply_component(k, f) - &q.apply_component(k, f));
                Some(v.scale(*c * e))
            }
        }
    }

    /// The right-hand side for `(i, j)` applied to `f`.
    pub fn apply(&self, i: usize, j: usize, f: &SpinorField2) -> SpinorField2 {
        let zero = || f.map(|_, _| [ZERO; 2]);
        match self {
            Expected::Zero => zero(),
            Expected::Delta if i == j => f.scale(I),
            Expected::Delta => zero(),
            Expected::Levi(c, op) => match third_index(i, j) {
                Some((k, e)) => op.apply_component(k, f).scale(*c * e),
                None => zero(),
            },
            Expected::LeviDifference(c, p, q) => match third_index(i, j) {
                Some((k, e)) => (&p.apply_component(k, f) - &q.apply_component(k, f)).scale(*c * e),
                None => zero(),
            },
        }
    }
}

/// One checked commutation relation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommutatorCheck {
    pub identity: String,
    pub residual_max: f64,
    pub residual_median: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Whether the relation involves finite differences.
    pub differential: bool,
}

/// Residual of `[A_i, B_j] = expected` maximized over the index pairs for
/// each state.
#[allow(clippy::too_many_arguments)]
pub fn commutator_check(
    identity: &str,
    a: &LinearOperator,
    b: &LinearOperator,
    expected: &Expected,
    states: &[TwoComponentWavefunction],
    shell: usize,
    tolerance: f64,
    differential: bool,
) -> Result<CommutatorCheck> {
    merge_gauges(a.gauge(), b.gauge())?;
    let same = a.len() == b.len()
        && a.components.iter().zip(&b.components).all(|(x, y)| Arc::ptr_eq(x, y));
    let per_trial = states
        .iter()
        .map(|s| {
            a.check_state(s)?;
            b.check_state(s)?;
            let f = s.field();
            let norm = interior_norm(f, shell);
            let af = a.apply_field(f);
            let bf = if same { af.clone() } else { b.apply_field(f) };
            let mut cache: Vec<Option<SpinorField2>> = vec![None; 3];
            let mut worst = 0.0f64;
            for (i, afi) in af.iter().enumerate() {
                for (j, bfj) in bf.iter().enumerate() {
                    // [A_j, A_i] is the negative of [A_i, A_j]
                    if same && j <= i {
                        continue;
                    }
                    let ab = a.apply_component(i, bfj);
                    let ba = b.apply_component(j, afi);
                    let mut r = &ab - &ba;
                    if let Some(e) = expected.apply_cached(i, j, f, &mut cache) {
                        r = &r - &e;
                    }
                    worst = worst.max(interior_norm(&r, shell) / norm);
                }
            }
            Ok(worst)
        })
        .collect::<Result<Vec<f64>>>()?;
    let stats = ResidualStats::from_trials(per_trial);
    Ok(CommutatorCheck {
        identity: identity.to_string(),
        residual_max: stats.max,
        residual_median: stats.median,
        tolerance,
        passed: stats.max <= tolerance,
        differential,
    })
}

/// Tolerances of the commutator table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CommutatorTolerances {
    pub algebraic: f64,
    pub xi_xi: f64,
    pub xi_p: f64,
    pub lambda: f64,
    pub oam: f64,
    pub total_j: f64,
    pub position: f64,
    pub motion: f64,
}

impl Default for CommutatorTolerances {
    fn default() -> Self {
        Self {
            algebraic: 1e-12,
            xi_xi: 1e-8,
            xi_p: 1e-6,
            lambda: 1e-5,
            oam: 1e-4,
            total_j: 1e-4,
            position: 1e-3,
            motion: 1e-5,
        }
    }
}

/// Pauli algebra `[σ̂_i, σ̂_j] = 2iε_ijk σ̂_k`; returns the largest entry
/// deviation.
pub fn pauli_algebra_residual() -> f64 {
    let p = PauliSet::new();
    let mut worst = 0.0f64;
    for i in 0..3 {
        for j in 0..3 {
            let mut expect = Matrix2::zeros();
            if let Some((k, e)) = third_index(i, j) {
                expect = p.sigma[k] * (2.0 * I * e);
            }
            worst = worst.max((commutator(&p.sigma[i], &p.sigma[j]) - expect).camax());
        }
    }
    worst
}

impl OperatorSet {
    /// The full commutator table on the given states.
    pub fn commutator_table(
        &self,
        states: &[TwoComponentWavefunction],
        tol: &CommutatorTolerances,
    ) -> Result<Vec<CommutatorCheck>> {
        let shell = self.boundary_shell();
        let (s, p, xi, b) = (self.spin(), self.momentum(), self.canonical_position(), self.b_analytic());
        let (lam, m, l, j, x) = (self.canonical_oam(), self.m(), self.oam(), self.total_j(), self.position());
        let omega = self.omega();
        let h = self.berry_field_sigma3();
        let i = Complex64::new(0.0, 1.0);

        let pauli = pauli_algebra_residual();
        let mut out = vec![CommutatorCheck {
            identity: "[sigma_i, sigma_j] = 2i eps_ijk sigma_k".into(),
            residual_max: pauli,
            residual_median: pauli,
            tolerance: tol.algebraic,
            passed: pauli <= tol.algebraic,
            differential: false,
        }];
        let table: Vec<(&str, &LinearOperator, &LinearOperator, Expected, f64, bool)> = vec![
            ("[s_i, s_j] = 0", &s, &s, Expected::Zero, tol.algebraic, false),
            ("[p_i, p_j] = 0", &p, &p, Expected::Zero, tol.algebraic, false),
            ("[b_i, b_j] = 0", &b, &b, Expected::Zero, tol.algebraic, false),
            ("[m_i, m_j] = 0", &m, &m, Expected::Zero, tol.algebraic, false),
            ("[xi_i, xi_j] = 0", &xi, &xi, Expected::Zero, tol.xi_xi, true),
            ("[xi_i, p_j] = i delta_ij", &xi, &p, Expected::Delta, tol.xi_p, true),
            (
                "[lambda_i, lambda_j] = i eps_ijk lambda_k",
                &lam,
                &lam,
                Expected::Levi(i, lam.clone()),
                tol.lambda,
                true,
            ),
            (
                "[l_i, l_j] = i eps_ijk (l_k - s_k)",
                &l,
                &l,
                Expected::LeviDifference(i, l.clone(), s.clone()),
                tol.oam,
                true,
            ),
            (
                "[l_i, s_j] = i eps_ijk s_k",
                &l,
                &s,
                Expected::Levi(i, s.clone()),
                tol.oam,
                true,
            ),
            (
                "[j_i, j_j] = i eps_ijk j_k",
                &j,
                &j,
                Expected::Levi(i, j.clone()),
                tol.total_j,
                true,
            ),
            (
                "[x_i, x_j] = i eps_ijk sigma3 (H_B)_k",
                &x,
                &x,
                Expected::Levi(Complex64::from(1.0), h.clone()),
                tol.position,
                true,
            ),
            ("[p, omega] = 0", &p, &omega, Expected::Zero, tol.algebraic, false),
            ("[s, omega] = 0", &s, &omega, Expected::Zero, tol.algebraic, false),
            ("[b, omega] = 0", &b, &omega, Expected::Zero, tol.algebraic, false),
            ("[m, omega] = 0", &m, &omega, Expected::Zero, tol.algebraic, false),
            ("[lambda, omega] = 0", &lam, &omega, Expected::Zero, tol.motion, true),
            ("[l, omega] = 0", &l, &omega, Expected::Zero, tol.motion, true),
            ("[j, omega] = 0", &j, &omega, Expected::Zero, tol.motion, true),
        ];
        for (name, a, bop, e, t, diff) in table {
            out.push(commutator_check(name, a, bop, &e, states, shell, t, diff)?);
        }
        Ok(out)
    }
}

/// Largest pointwise deviation between two operators on the given states,
/// relative to `‖f̃‖`, outside the boundary shell.
pub fn operator_difference(
    a: &LinearOperator,
    b: &LinearOperator,
    states: &[TwoComponentWavefunction],
    shell: usize,
) -> f64 {
    let mut worst = 0.0f64;
    for s in states {
        let f = s.field();
        let n = interior_norm(f, shell);
        for c in 0..a.len() {
            let d = &a.apply_component(c, f) - &b.apply_component(c, f);
            worst = worst.max(interior_norm(&d, shell) / n);
        }
    }
    worst
}

/// Expectation value entry of an [`OperatorReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectationEntry {
    pub operator: String,
    pub value: Vec<Complex64>,
    /// `max |Im| / |value|`.
    pub imaginary_ratio: f64,
    pub self_adjoint_ok: bool,
}

impl ExpectationEntry {
    pub fn new(operator: &str, value: Vec<Complex64>) -> Self {
        let mag = value.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let im = value.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
        let ratio = if mag > 0.0 { im / mag } else { 0.0 };
        Self {
            operator: operator.to_string(),
            value,
            imaginary_ratio: ratio,
            self_adjoint_ok: ratio <= 1e-8,
        }
    }
}

/// Grid metadata carried by reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub center: [f64; 3],
    pub half_width: [f64; 3],
    pub n: [usize; 3],
    pub gauge: [f64; 3],
    pub eps_cone: f64,
    pub eps_k: f64,
    pub masked_fraction: f64,
}

impl GridSummary {
    pub fn of(grid: &KGrid, gauge: BerryGauge) -> Self {
        Self {
            center: grid.center().into(),
            half_width: grid.half_width().into(),
            n: grid.shape(),
            gauge: gauge.vector().into(),
            eps_cone: grid.eps_cone(),
            eps_k: grid.eps_k(),
            masked_fraction: grid.masked_fraction(),
        }
    }
}

/// Expectation values and commutator residuals for one grid and gauge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorReport {
    pub grid: GridSummary,
    pub stencil: Stencil,
    pub boundary_shell: usize,
    pub trials: usize,
    pub expectations: Vec<ExpectationEntry>,
    pub commutators: Vec<CommutatorCheck>,
}

impl OperatorReport {
    pub fn passed(&self) -> bool {
        self.commutators.iter().all(|c| c.passed) && self.expectations.iter().all(|e| e.self_adjoint_ok)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

impl OperatorSet {
    /// Expectations of all self-adjoint operators on `state` plus the
    /// commutator table on `states`.
    pub fn report(
        &self,
        state: &TwoComponentWavefunction,
        states: &[TwoComponentWavefunction],
        tol: &CommutatorTolerances,
    ) -> Result<OperatorReport> {
        let ops = [
            self.spin(),
            self.momentum(),
            self.canonical_position(),
            self.b_analytic(),
            self.position(),
            self.canonical_oam(),
            self.m(),
            self.oam(),
            self.total_j(),
            self.omega(),
        ];
        let expectations = ops
            .iter()
            .map(|op| Ok(ExpectationEntry::new(op.name(), op.expectation(state)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(OperatorReport {
            grid: GridSummary::of(&self.grid, self.gauge),
            stencil: self.stencil,
            boundary_shell: self.boundary_shell(),
            trials: states.len(),
            expectations,
            commutators: self.commutator_table(states, tol)?,
        })
    }
}

/// Real parts of a 3-component expectation.
pub fn real3(v: &[Complex64]) -> Vector3<f64> {
    Vector3::new(v[0].re, v[1].re, v[2].re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauge::{berry_potential, gauge_angle_field, triad_at};
    use crate::kgrid::GridSpec;
    use crate::wavefunction::{gauge_transform, make_gaussian_packet, Helicity};
    use proptest::prelude::*;

    fn grid(n: usize) -> Arc<KGrid> {
        let th = std::f64::consts::FRAC_PI_4;
        GridSpec::cube(Vector3::new(th.sin(), 0.0, th.cos()) * 10.0, 0.5, n, Vector3::z())
            .build()
            .unwrap()
    }

    #[test]
    fn default_stencil_adapts_to_grid() {
        assert_eq!(default_stencil(&grid(33)), Stencil::Central(16));
        assert_eq!(default_stencil(&grid(13)), Stencil::Central(12));
        assert_eq!(default_stencil(&grid(7)), Stencil::Central(6));
    }

    #[test]
    fn operators_are_linear() {
        let g = grid(17);
        let set = OperatorSet::new(&g, BerryGauge::z());
        let st = set.random_states(2, 4);
        let (a, b) = (Complex64::new(0.3, -1.2), Complex64::new(-0.7, 0.4));
        let combo = st[0].combine(a, &st[1], b);
        for op in [set.spin(), set.canonical_position(), set.position(), set.oam(), set.total_j()] {
            for c in 0..3 {
                let lhs = op.apply_component(c, combo.field());
                let rhs = &op.apply_component(c, st[0].field()).scale(a)
                    + &op.apply_component(c, st[1].field()).scale(b);
                let d = (&lhs - &rhs).max_abs();
                assert!(d <= 1e-10 * lhs.max_abs(), "{} {d}", op.name());
            }
        }
    }

    #[test]
    fn spin_is_gauge_independent_and_projects_pauli_vector() {
        let g = grid(9);
        let a = OperatorSet::new(&g, BerryGauge::z());
        let b = OperatorSet::new(&g, BerryGauge::x());
        let st = a.random_states(1, 1);
        assert!(!a.spin().gauge_dependent());
        for c in 0..3 {
            let d = (&a.spin().apply_component(c, st[0].field())
                - &b.spin().apply_component(c, st[0].field()))
                .max_abs();
            assert_eq!(d, 0.0);
        }
        // σ̂ = σ̂₁u + σ̂₂v + σ̂₃w projected on w is σ̂₃
        let t = triad_at(&Vector3::new(1.0, 2.0, 3.0), &BerryGauge::z()).unwrap();
        let p = PauliSet::new();
        let proj = p.sigma[0] * Complex64::from(t.u.dot(&t.w))
            + p.sigma[1] * Complex64::from(t.v.dot(&t.w))
            + p.sigma[2] * Complex64::from(t.w.dot(&t.w));
        assert!((proj - p.helicity()).camax() < 1e-15);
    }

    #[test]
    fn b_numeric_matches_analytic() {
        let g = grid(33);
        let set = OperatorSet::new(&g, BerryGauge::z());
        let mats = set.connection_matrices();
        let s3 = PauliSet::new().helicity();
        let mut worst = 0.0f64;
        let mut amax = 0.0f64;
        for idx in 0..g.len() {
            let a = berry_potential(&g.point(idx), &BerryGauge::z()).unwrap();
            amax = amax.max(a.norm());
            if let Some(m) = &mats[idx] {
                for ax in 0..3 {
                    worst = worst.max((m[ax] - s3 * Complex64::from(a[ax])).camax());
                }
            }
        }
        assert!(worst <= 1e-4 * amax, "{worst}");
    }

    #[test]
    fn m_is_b_cross_p() {
        let g = grid(9);
        let set = OperatorSet::new(&g, BerryGauge::new(Vector3::new(0.2, -0.4, 1.0)).unwrap());
        let bxp = set.b_analytic().cross(&set.momentum(), "bxp").unwrap();
        let st = set.random_states(3, 8);
        assert!(operator_difference(&set.m(), &bxp, &st, 0) <= 1e-10);
    }

    #[test]
    fn oam_and_total_j_constructions_agree() {
        let g = grid(21);
        let set = OperatorSet::new(&g, BerryGauge::z());
        let st = set.random_states(3, 2);
        let shell = set.boundary_shell();
        assert!(operator_difference(&set.oam(), &set.oam_from_position(), &st, shell) <= 1e-8);
        assert!(operator_difference(&set.total_j(), &set.total_j_closed(), &st, shell) <= 1e-8);
    }

    #[test]
    fn identical_operators_commute_exactly() {
        let g = grid(17);
        let set = OperatorSet::new(&g, BerryGauge::z());
        let st = set.random_states(2, 6);
        let xi = set.canonical_position();
        for c in 0..3 {
            let r = commutator_residual((&xi, c), (&xi, c), &|f: &SpinorField2| f.scale(ZERO), &st, 0)
                .unwrap();
            assert_eq!(r.max, 0.0);
        }
    }

    #[test]
    fn canonical_conjugacy_in_the_bulk() {
        let g = grid(33);
        let set = OperatorSet::new(&g, BerryGauge::z());
        let st = set.random_states(3, 12);
        let shell = set.boundary_shell();
        let (xi, p) = (set.canonical_position(), set.momentum());
        let diag = commutator_residual((&xi, 0), (&p, 0), &|f: &SpinorField2| f.scale(I), &st, shell).unwrap();
        assert!(diag.max <= 1e-6, "{diag:?}");
        let off = commutator_residual((&xi, 0), (&p, 1), &|f: &SpinorField2| f.scale(ZERO), &st, shell).unwrap();
        assert!(off.max <= 1e-6, "{off:?}");
    }

    #[test]
    fn incompatible_gauges_are_rejected() {
        let g = grid(9);
        let a = OperatorSet::new(&g, BerryGauge::z());
        let b = OperatorSet::new(&g, BerryGauge::x());
        let st = a.random_states(1, 0);
        let e = commutator_residual((&a.b_analytic(), 0), (&b.b_analytic(), 1), &|f: &SpinorField2| f.clone(), &st, 0)
            .unwrap_err();
        assert!(matches!(e, PhotonError::IncompatibleGauge { .. }));
        assert!(b.m().expectation(&st[0]).is_err());
    }

    #[test]
    fn poincare_examples() {
        let s = poincare_at(&Helicity::Plus.eigenvector()).unwrap();
        assert!((s[0]).abs() < 1e-15 && s[1].abs() < 1e-15 && (s[2] - 1.0).abs() < 1e-15);
        let s = poincare_at(&Helicity::Minus.eigenvector()).unwrap();
        assert!((s[2] + 1.0).abs() < 1e-15);
        assert_eq!(poincare_at(&[Complex64::from(1.0), ZERO]).unwrap(), [1.0, 0.0, 0.0]);
        assert!(matches!(poincare_at(&[ZERO, ZERO]), Err(PhotonError::ZeroIntensity)));
    }

    #[test]
    fn stokes_rotate_under_gauge_change() {
        let g = grid(11);
        let set = OperatorSet::new(&g, BerryGauge::z());
        let st = &set.random_states(1, 21)[0];
        let gp = BerryGauge::new(Vector3::new(1.0, 0.3, 0.2)).unwrap();
        let moved = gauge_transform(st, gp).unwrap();
        let phi = gauge_angle_field(&g, BerryGauge::z(), gp);
        let (a, b) = (poincare_vector(st, 0.0).unwrap(), poincare_vector(&moved, 0.0).unwrap());
        for idx in 0..g.len() {
            if let (Some(x), Some(y)) = (a.local[idx], b.local[idx]) {
                let e = rotate_stokes(x, phi.at(idx)[0].re);
                for c in 0..3 {
                    assert!((y[c] - e[c]).abs() <= 1e-12);
                }
            }
        }
        assert!(stokes_rotation_residual(st, gp, 0.0).unwrap() <= 1e-12);
    }

    #[test]
    fn helicity_packet_expectations() {
        let k0 = Vector3::new(0.0, 6.0, 8.0);
        let g = GridSpec::cube(k0, 0.7, 29, Vector3::z()).build().unwrap();
        let set = OperatorSet::new(&g, BerryGauge::z());
        let p = make_gaussian_packet(&g, k0, 0.01, Helicity::Minus, BerryGauge::z()).unwrap();
        let s = real3(&set.spin().expectation(&p).unwrap());
        assert!((s + k0 / k0.norm()).norm() < 1e-3);
        let mom = real3(&set.momentum().expectation(&p).unwrap());
        assert!((mom - k0).norm() < 1e-6);
        let xi = real3(&set.canonical_position().expectation(&p).unwrap());
        assert!(xi.norm() < 1e-6, "{xi}");
        let x = real3(&set.position().expectation(&p).unwrap());
        let b = real3(&set.b_analytic().expectation(&p).unwrap());
        assert!((x - b).norm() < 1e-6);
        let pz = poincare_vector(&p, 0.0).unwrap();
        assert!((pz.integrated[2] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_packet_has_no_canonical_oam_along_axis() {
        let k0 = Vector3::new(3.0, 0.0, 4.0);
        let g = GridSpec::cube(k0, 0.7, 29, Vector3::z()).build().unwrap();
        let set = OperatorSet::new(&g, BerryGauge::z());
        let p = make_gaussian_packet(&g, k0, 0.02, Helicity::Plus, BerryGauge::z()).unwrap();
        let lam = real3(&set.canonical_oam().expectation(&p).unwrap());
        assert!(lam.dot(&(k0 / k0.norm())).abs() < 1e-6);
    }

    #[test]
    fn report_serializes() {
        let g = grid(17);
        let set = OperatorSet::new(&g, BerryGauge::z());
        let st = set.random_states(2, 3);
        let wide = GridSpec::cube(g.center(), 1.0, 41, Vector3::z()).build().unwrap();
        let local = OperatorSet::new(&wide, BerryGauge::z());
        let probe = local.random_states_with(&PacketRanges::LOCALIZED, 1, 3);
        assert!(set.report(&st[0], &st, &CommutatorTolerances::default()).is_ok());
        let r = local.report(&probe[0], &local.random_states(1, 3), &CommutatorTolerances::default()).unwrap();
        let json = r.to_json().unwrap();
        let back: OperatorReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.commutators.len(), r.commutators.len());
        for e in &r.expectations {
            println!("{} {:e}", e.operator, e.imaginary_ratio);
        }
        assert!(r.expectations.iter().all(|e| e.self_adjoint_ok));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn poincare_vector_is_unit_for_pure_states(
            a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0, d in -1.0f64..1.0,
        ) {
            prop_assume!(a * a + b * b + c * c + d * d > 1e-6);
            let s = poincare_at(&[Complex64::new(a, b), Complex64::new(c, d)]).unwrap();
            let n = (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt();
            prop_assert!((n - 1.0).abs() < 1e-12);
        }

        #[test]
        fn stokes_rotation_composes(phi1 in -3.0f64..3.0, phi2 in -3.0f64..3.0) {
            let s = [0.3, -0.5, 0.81];
            let a = rotate_stokes(rotate_stokes(s, phi1), phi2);
            let b = rotate_stokes(s, phi1 + phi2);
            for c in 0..3 {
                prop_assert!((a[c] - b[c]).abs() < 1e-12);
            }
        }
    }
}
