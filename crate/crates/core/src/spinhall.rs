//! Helicity-dependent transverse barycenter shift of Gaussian packets as the
//! Berry gauge tilts away from the propagation axis, and the accompanying
//! Berry phase.
//!
//! The interface is not simulated. A scenario fixes the angle `Θ` between
//! the gauge vector `I = ẑ` and the central wavevector
//! `k₀ = |k₀|(sin Θ, 0, cos Θ)` directly.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use nalgebra::Vector3;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PhotonError, Result};
use crate::gauge::{gauge_angle_field, BerryGauge};
use crate::kgrid::{GridSpec, KGrid, DEFAULT_EPS_CONE};
use crate::operators::{real3, OperatorSet};
use crate::stencil::Stencil;
use crate::wavefunction::{
    embed, make_gaussian_packet, project, wrap_angle, Helicity, TwoComponentWavefunction, VectorWavefunction,
};

/// Box half-width in units of the packet width `|k₀|·divergence`. The
/// Gaussian falls below `1e-8` of its peak at `≈ 6.07` widths.
pub const BOX_WIDTHS: f64 = 6.5;

/// Tolerance of the `⟨b̂⟩ = ⟨x̂⟩` consistency check.
pub const BARYCENTER_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinHallScenario {
    /// `|k₀|`.
    pub k0: f64,
    /// Angle between `I` and `k₀` in radians.
    pub theta: f64,
    pub helicity: Helicity,
    /// Angular width of the packet in radians.
    pub divergence: f64,
    /// Points per axis of the k-grid.
    pub n: usize,
}

impl SpinHallScenario {
    pub fn new(k0: f64, theta: f64, helicity: Helicity, divergence: f64, n: usize) -> Result<Self> {
        let s = Self {
            k0,
            theta,
            helicity,
            divergence,
            n,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PhotonError::InvalidScenario(m));
        if !(self.k0 > 0.0 && self.k0.is_finite()) {
            return bad(format!("|k0| = {} must be positive", self.k0));
        }
        if !(self.theta > 0.0 && self.theta < PI) {
            return bad(format!("theta = {} must lie in (0, pi)", self.theta));
        }
        if !(self.divergence > 0.0) || self.divergence > self.theta / 20.0 {
            return bad(format!(
                "divergence {} must be positive and at most theta/20 = {}",
                self.divergence,
                self.theta / 20.0
            ));
        }
        let clearance = self.theta.min(PI - self.theta);
        let reach = DEFAULT_EPS_CONE + 2.0 * BOX_WIDTHS * self.divergence;
        if clearance <= reach {
            return bad(format!(
                "packet box reaches the singular cone (clearance {clearance:.3e} rad, needs > {reach:.3e})"
            ));
        }
        if self.n < 5 || self.n % 2 == 0 {
            return bad(format!("grid resolution {} must be odd and at least 5", self.n));
        }
        Ok(())
    }

    pub fn gauge(&self) -> BerryGauge {
        BerryGauge::z()
    }

    pub fn central_wavevector(&self) -> Vector3<f64> {
        self.k0 * Vector3::new(self.theta.sin(), 0.0, self.theta.cos())
    }

    /// `v₀ = I×k₀/|I×k₀|`.
    pub fn v0(&self) -> Vector3<f64> {
        self.gauge().vector().cross(&self.central_wavevector()).normalize()
    }

    /// `(σ/|k₀|)·cot Θ·v₀`.
    pub fn predicted_b(&self) -> Vector3<f64> {
        self.v0() * (self.helicity.value() / self.k0 / self.theta.tan())
    }

    pub fn grid(&self) -> Result<Arc<KGrid>> {
        let hw = BOX_WIDTHS * self.k0 * self.divergence;
        GridSpec::cube(self.central_wavevector(), hw, self.n, self.gauge().vector()).build()
    }

    pub fn packet(&self, grid: &Arc<KGrid>) -> Result<TwoComponentWavefunction> {
        make_gaussian_packet(grid, self.central_wavevector(), self.divergence, self.helicity, self.gauge())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftResult {
    pub scenario: SpinHallScenario,
    pub measured_b: [f64; 3],
    pub predicted_b: [f64; 3],
    /// Signed magnitude of the prediction along `v₀`.
    pub predicted_magnitude: f64,
    /// `|measured − predicted|/|predicted|`, or `|measured|·k₀` when the
    /// prediction vanishes.
    pub relative_error: f64,
    /// `|⟨x̂⟩ − ⟨b̂⟩|`.
    pub barycenter_residual: f64,
    /// `|measured·k̂₀|`.
    pub longitudinal_component: f64,
}

impl ShiftResult {
    pub fn orthogonal_to_k0(&self) -> bool {
        let b = Vector3::from(self.measured_b);
        self.longitudinal_component <= 1e-3 * b.norm() + 1e-9
    }

    pub fn barycenter_consistent(&self) -> bool {
        self.barycenter_residual <= BARYCENTER_TOL
    }
}

/// Measures `⟨b̂⟩` of the helicity eigenpacket with the analytic
/// `σ̂₃A_B` integrand and compares it with `(σ/k₀)cot Θ v₀`.
pub fn run_scenario(s: &SpinHallScenario) -> Result<ShiftResult> {
    s.validate()?;
    let grid = s.grid()?;
    let packet = s.packet(&grid)?;
    let ops = OperatorSet::new(&grid, s.gauge());
    let b = real3(&ops.b_analytic().expectation(&packet)?);
    let x = real3(&ops.position().expectation(&packet)?);
    let predicted = s.predicted_b();
    let relative_error = if predicted.norm() > 0.0 && s.theta.tan().is_finite() && (s.theta - PI / 2.0).abs() > 1e-12 {
        (b - predicted).norm() / predicted.norm()
    } else {
        b.norm() * s.k0
    };
    let khat = s.central_wavevector().normalize();
    Ok(ShiftResult {
        scenario: *s,
        measured_b: b.into(),
        predicted_b: predicted.into(),
        predicted_magnitude: s.helicity.value() / s.k0 / s.theta.tan(),
        relative_error,
        barycenter_residual: (x - b).norm(),
        longitudinal_component: b.dot(&khat).abs(),
    })
}

/// Relative difference between `⟨b̂⟩` from the analytic integrand and from
/// the numerical connection `iϖ†∂ϖ` at resolution `n`.
pub fn numeric_cross_check(s: &SpinHallScenario, n: usize) -> Result<f64> {
    let mut low = *s;
    low.n = n;
    low.validate()?;
    let grid = low.grid()?;
    let packet = low.packet(&grid)?;
    let ops = OperatorSet::with_stencil(&grid, low.gauge(), Stencil::Fourth)?;
    let a = real3(&ops.b_analytic().expectation(&packet)?);
    let b = real3(&ops.b_numeric().expectation(&packet)?);
    Ok((a - b).norm() / a.norm().max(f64::MIN_POSITIVE))
}

/// One row of a `Θ` scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub theta: f64,
    pub result: Option<ShiftResult>,
    /// Why the row was skipped.
    pub skipped: Option<String>,
}

/// Scans `Θ` at fixed helicity, `|k₀|`, divergence and resolution. Rows
/// keep the input order; infeasible angles are skipped and flagged.
pub fn scan_theta(helicity: Helicity, k0: f64, thetas: &[f64], divergence: f64, n: usize) -> Vec<ScanRow> {
    thetas
        .par_iter()
        .map(|&theta| {
            let s = SpinHallScenario {
                k0,
                theta,
                helicity,
                divergence,
                n,
            };
            match run_scenario(&s) {
                Ok(r) => ScanRow {
                    theta,
                    result: Some(r),
                    skipped: None,
                },
                Err(e) => ScanRow {
                    theta,
                    result: None,
                    skipped: Some(e.to_string()),
                },
            }
        })
        .collect()
}

/// CSV with columns `theta,sigma,k0,predicted,measured_x,measured_y,measured_z,relative_error`.
/// Skipped rows carry empty numeric fields.
pub fn write_scan_csv<W: Write>(rows: &[ScanRow], mut out: W) -> Result<()> {
    writeln!(out, "theta,sigma,k0,predicted,measured_x,measured_y,measured_z,relative_error")?;
    for row in rows {
        match &row.result {
            Some(r) => writeln!(
                out,
                "{:e},{},{:e},{:e},{:e},{:e},{:e},{:e}",
                row.theta,
                r.scenario.helicity.value(),
                r.scenario.k0,
                r.predicted_magnitude,
                r.measured_b[0],
                r.measured_b[1],
                r.measured_b[2],
                r.relative_error
            )?,
            None => writeln!(out, "{:e},,,,,,,", row.theta)?,
        }
    }
    Ok(())
}

/// Result of fitting `f'/f` to `exp(−iσφ)` point by point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerryPhaseReport {
    /// Helicity used for the fit: the sign of `⟨σ̂₃⟩`.
    pub helicity: Helicity,
    /// `⟨σ̂₃⟩`.
    pub mean_helicity: f64,
    pub max_modulus_deviation: f64,
    pub max_phase_deviation: f64,
    pub fitted_points: usize,
    pub skipped_points: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Re-embeds the two-component amplitude of `f` with the triad of `to` and
/// checks that every point picks up the helicity phase `exp(−iσφ)`.
pub fn berry_phase_check(f: &VectorWavefunction, from: BerryGauge, to: BerryGauge) -> Result<BerryPhaseReport> {
    let ft = project(f, from)?;
    let grid = ft.grid();
    let relabelled = TwoComponentWavefunction::new(ft.field().clone(), to, ft.time());
    let fp = embed(&relabelled);
    let phi = gauge_angle_field(grid, from, to);

    let norm = ft.norm_sqr();
    if norm == 0.0 {
        return Err(PhotonError::ZeroIntensity);
    }
    let mean_helicity = ft
        .field()
        .values()
        .iter()
        .map(|v| 2.0 * (v[0].conj() * v[1]).im)
        .sum::<f64>()
        * grid.weight()
        / norm;
    let helicity = if mean_helicity >= 0.0 { Helicity::Plus } else { Helicity::Minus };
    let sigma = helicity.value();

    let (mut dm, mut dp) = (0.0f64, 0.0f64);
    let (mut fitted, mut skipped) = (0, 0);
    for idx in 0..grid.len() {
        let (a, b) = (f.field().at(idx), fp.field().at(idx));
        let den: f64 = a.iter().map(|z| z.norm_sqr()).sum();
        if !phi.is_valid(idx) || !fp.field().is_valid(idx) || den < f64::MIN_POSITIVE {
            skipped += 1;
            continue;
        }
        let ratio: Complex64 = a.iter().zip(&b).map(|(x, y)| x.conj() * y).sum::<Complex64>() / den;
        let expected = -sigma * phi.at(idx)[0].re;
        dm = dm.max((ratio.norm() - 1.0).abs());
        dp = dp.max(wrap_angle(ratio.arg() - expected).abs());
        fitted += 1;
    }
    let tolerance = 1e-10;
    Ok(BerryPhaseReport {
        helicity,
        mean_helicity,
        max_modulus_deviation: dm,
        max_phase_deviation: dp,
        fitted_points: fitted,
        skipped_points: skipped,
        tolerance,
        passed: fitted > 0 && dm <= tolerance && dp <= tolerance,
    })
}
