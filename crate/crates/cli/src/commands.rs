//! The four subcommands. Each writes its outputs into the output directory
//! and returns whether every check passed.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{Matrix2, Matrix3, Vector3};
use num_complex::Complex64;
use photon_core::fields::{
    divergence_check, intensity_centroid, maxwell_residual, synthesize_a, synthesize_eh, zero_state, FieldSnapshot,
    SpatialSampling,
};
use photon_core::gauge::{curl_residual, monopole_flux, potential_shift_residual, varpi_at, varpi_gram, varpi_projector};
use photon_core::kgrid::{GridSpec, KGrid};
use photon_core::operators::{stokes_rotation_residual, GridSummary, OperatorSet};
use photon_core::spinhall::{berry_phase_check, scan_theta, write_scan_csv, ScanRow, BOX_WIDTHS};
use photon_core::stencil::Stencil;
use photon_core::wavefunction::{embed, gauge_transform, make_gaussian_packet, project, PacketRanges};
use photon_core::{BerryGauge, Helicity};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{write_atomic, write_json};

/// One residual with its tolerance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub identity: String,
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    pub fn new(identity: impl Into<String>, residual: f64, tolerance: f64) -> Self {
        Self {
            identity: identity.into(),
            residual,
            tolerance,
            passed: residual <= tolerance,
        }
    }
}

/// What a command produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub passed: bool,
    pub first_failure: Option<String>,
    pub files: Vec<PathBuf>,
}

fn first_failure(checks: &[Check]) -> Option<String> {
    checks
        .iter()
        .find(|c| !c.passed)
        .map(|c| format!("{} (residual {:.3e} > {:.3e})", c.identity, c.residual, c.tolerance))
}

#[derive(Serialize)]
struct ChecksReport<'a> {
    command: &'a str,
    seed: u64,
    grid: GridSummary,
    covariance_grid: GridSummary,
    gauge: [f64; 3],
    gauge_prime: [f64; 3],
    passed: bool,
    first_failure: Option<String>,
    checks: Vec<Check>,
}

fn unitarity_checks(cfg: &RunConfig, grid: &KGrid, gauge: BerryGauge) -> Vec<Check> {
    let (mut gram, mut proj) = (0.0f64, 0.0f64);
    for k in grid.points() {
        if let Ok(varpi) = varpi_at(k, &gauge) {
            let w = k.normalize().map(Complex64::from);
            gram = gram.max((varpi_gram(&varpi) - Matrix2::identity()).camax());
            proj = proj.max((varpi_projector(&varpi) - (Matrix3::identity() - w * w.adjoint())).camax());
        }
    }
    let t = cfg.tolerances.unitarity;
    vec![
        Check::new("varpi^dag varpi = I2", gram, t),
        Check::new("varpi varpi^dag = I3 - w w^dag", proj, t),
    ]
}

fn round_trip_check(cfg: &RunConfig, set: &OperatorSet) -> Result<Check, CliError> {
    let mut worst = 0.0f64;
    for ft in set.random_states(cfg.trials, cfg.seed) {
        let f = embed(&ft);
        let back = project(&f, set.gauge())?;
        let again = embed(&back);
        let scale = ft.field().max_abs();
        worst = worst
            .max((ft.field() - back.field()).max_abs() / scale)
            .max((f.field() - again.field()).max_abs() / scale);
    }
    Ok(Check::new("project(embed(f~)) = f~ and embed(project(f)) = f", worst, cfg.tolerances.round_trip))
}

fn packet_divergence(cfg: &RunConfig, grid: &KGrid, k0: &Vector3<f64>) -> f64 {
    cfg.packet
        .divergence
        .unwrap_or_else(|| grid.half_width().min() / (BOX_WIDTHS * k0.norm()))
}

/// Residuals of the gauge change `gauge → gauge'`.
fn gauge_change_checks(cfg: &RunConfig, grid: &Arc<KGrid>, cov: &Arc<KGrid>) -> Result<Vec<Check>, CliError> {
    let (g, gp) = (cfg.gauge()?, cfg.gauge_prime()?);
    let tol = &cfg.tolerances;
    let mut out = vec![Check::new(
        "A'_B - A_B = grad phi",
        potential_shift_residual(grid, g, gp, Stencil::Fourth),
        tol.potential_shift,
    )];

    let (a, b) = (OperatorSet::new(cov, g), OperatorSet::new(cov, gp));
    let states = a.random_states_with(&PacketRanges::LOCALIZED, cfg.trials, cfg.seed);
    let names = ["<x>", "<p>", "<s>", "<omega>"];
    let ops = |s: &OperatorSet| [s.position(), s.momentum(), s.spin(), s.omega()];
    let (oa, ob) = (ops(&a), ops(&b));
    let mut worst = [0.0f64; 5];
    let mut stokes = 0.0f64;
    for s in &states {
        let sp = gauge_transform(s, gp)?;
        for i in 0..4 {
            let (x, y) = (oa[i].expectation(s)?, ob[i].expectation(&sp)?);
            let d = x.iter().zip(&y).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
            worst[i] = worst[i].max(d);
        }
        worst[4] = worst[4].max((s.norm_sqr() - sp.norm_sqr()).abs());
        stokes = stokes.max(stokes_rotation_residual(s, gp, 1e-20)?);
    }
    for (i, name) in names.iter().enumerate() {
        out.push(Check::new(format!("{name} invariant under gauge change"), worst[i], tol.invariance));
    }
    out.push(Check::new("norm invariant under gauge change", worst[4], tol.invariance));
    out.push(Check::new("Stokes parameters rotate by 2 phi, s3 invariant", stokes, tol.stokes));

    let k0 = cfg.packet.k0.map(Vector3::from).unwrap_or_else(|| cov.center());
    let div = packet_divergence(cfg, cov, &k0);
    let mut phase = 0.0f64;
    for &h in &cfg.packet.helicities {
        let packet = make_gaussian_packet(cov, k0, div, h, g)?;
        let r = berry_phase_check(&embed(&packet), g, gp)?;
        phase = phase.max(r.max_phase_deviation).max(r.max_modulus_deviation);
    }
    out.push(Check::new("helicity eigenstates gain exp(-i sigma phi)", phase, tol.berry_phase));
    Ok(out)
}

fn checks_report(
    cfg: &RunConfig,
    out: &Path,
    command: &str,
    file: &str,
    grid: &KGrid,
    cov: &KGrid,
    checks: Vec<Check>,
) -> Result<Outcome, CliError> {
    let passed = checks.iter().all(|c| c.passed);
    let report = ChecksReport {
        command,
        seed: cfg.seed,
        grid: GridSummary::of(grid, cfg.gauge()?),
        covariance_grid: GridSummary::of(cov, cfg.gauge()?),
        gauge: cfg.gauge,
        gauge_prime: cfg.gauge_prime,
        passed,
        first_failure: first_failure(&checks),
        checks,
    };
    let path = write_json(out, file, &report)?;
    Ok(Outcome {
        passed,
        first_failure: report.first_failure,
        files: vec![path],
    })
}

/// Quasi-unitarity, Berry geometry, the commutator table and the gauge-change
/// identities. Writes `verify.json`.
pub fn verify(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let grid = cfg.build_grid()?;
    let cov = cfg.build_covariance_grid()?;
    let gauge = cfg.gauge()?;
    let set = OperatorSet::new(&grid, gauge);

    let mut checks = unitarity_checks(cfg, &grid, gauge);
    checks.push(round_trip_check(cfg, &set)?);
    checks.push(Check::new(
        "curl A_B = H_B = -w/k^2",
        curl_residual(&grid, gauge, Stencil::Fourth),
        cfg.tolerances.curl,
    ));
    let flux = monopole_flux(Vector3::zeros(), grid.center().norm(), 64, 128);
    let four_pi = 4.0 * std::f64::consts::PI;
    checks.push(Check::new(
        "flux of H_B through a sphere = -4 pi",
        (flux + four_pi).abs() / four_pi,
        cfg.tolerances.flux,
    ));
    let states = set.random_states(cfg.trials, cfg.seed);
    for c in set.commutator_table(&states, &cfg.tolerances.commutators)? {
        checks.push(Check {
            identity: c.identity,
            residual: c.residual_max,
            tolerance: c.tolerance,
            passed: c.passed,
        });
    }
    checks.extend(gauge_change_checks(cfg, &grid, &cov)?);
    checks_report(cfg, out, "verify", "verify.json", &grid, &cov, checks)
}

/// Gauge change `I → I'`. Writes `gauge_demo.json`.
pub fn gauge_demo(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let grid = cfg.build_grid()?;
    let cov = cfg.build_covariance_grid()?;
    let checks = gauge_change_checks(cfg, &grid, &cov)?;
    checks_report(cfg, out, "gauge-demo", "gauge_demo.json", &grid, &cov, checks)
}

#[derive(Serialize)]
struct ScanSummary {
    command: &'static str,
    k0: f64,
    divergence: f64,
    n: usize,
    tolerance: f64,
    blocks: Vec<ScanBlock>,
    /// `max |b₊ + b₋| / |b₊|` over angles computed for both helicities.
    antisymmetry: Option<f64>,
    passed: bool,
    first_failure: Option<String>,
}

#[derive(Serialize)]
struct ScanBlock {
    helicity: Helicity,
    rows: Vec<ScanRow>,
}

/// Spin-Hall shift scan. Writes `shift_scan.csv` (one block of rows per
/// helicity) and `shift_scan.json`.
pub fn shift_scan(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let scan = &cfg.scan;
    if scan.thetas.is_empty() {
        return Err(CliError::Usage("scan.thetas is empty".into()));
    }
    if scan.helicities.is_empty() {
        return Err(CliError::Usage("scan.helicities is empty".into()));
    }
    let blocks: Vec<ScanBlock> = scan
        .helicities
        .iter()
        .map(|&h| ScanBlock {
            helicity: h,
            rows: scan_theta(h, scan.k0, &scan.thetas, scan.divergence, scan.n),
        })
        .collect();

    let tol = cfg.tolerances.shift;
    let mut failure = None;
    for b in &blocks {
        for r in b.rows.iter().filter_map(|r| r.result.as_ref()) {
            // at Θ = π/2 the error is |b|·k₀, held to 1e-4
            let limit = if r.predicted_magnitude.abs() < 1e-12 { 1e-4 } else { tol };
            if failure.is_none() && (r.relative_error > limit || !r.barycenter_consistent()) {
                failure = Some(format!(
                    "sigma {:+}, theta {:.6}: relative error {:.3e}",
                    b.helicity.value(),
                    r.scenario.theta,
                    r.relative_error
                ));
            }
        }
    }
    let plus = blocks.iter().find(|b| b.helicity == Helicity::Plus);
    let minus = blocks.iter().find(|b| b.helicity == Helicity::Minus);
    let antisymmetry = match (plus, minus) {
        (Some(p), Some(m)) => Some(
            p.rows
                .iter()
                .zip(&m.rows)
                .filter_map(|(a, b)| Some((a.result.as_ref()?, b.result.as_ref()?)))
                .map(|(a, b)| {
                    let (x, y) = (Vector3::from(a.measured_b), Vector3::from(b.measured_b));
                    if x.norm() > 0.0 {
                        (x + y).norm() / x.norm()
                    } else {
                        (x + y).norm()
                    }
                })
                .fold(0.0, f64::max),
        ),
        _ => None,
    };
    if let Some(a) = antisymmetry {
        if failure.is_none() && a > 1e-6 {
            failure = Some(format!("helicity antisymmetry {a:.3e} > 1e-6"));
        }
    }

    let mut csv = Vec::new();
    let all_rows: Vec<ScanRow> = blocks.iter().flat_map(|b| b.rows.clone()).collect();
    write_scan_csv(&all_rows, &mut csv)?;
    let csv_path = write_atomic(out, "shift_scan.csv", &csv)?;
    let summary = ScanSummary {
        command: "shift-scan",
        k0: scan.k0,
        divergence: scan.divergence,
        n: scan.n,
        tolerance: tol,
        blocks,
        antisymmetry,
        passed: failure.is_none(),
        first_failure: failure.clone(),
    };
    let json_path = write_json(out, "shift_scan.json", &summary)?;
    Ok(Outcome {
        passed: failure.is_none(),
        first_failure: failure,
        files: vec![csv_path, json_path],
    })
}

#[derive(Serialize)]
struct SnapshotSummary {
    time: f64,
    file: String,
    max_e: f64,
    max_h: f64,
    max_a: f64,
    /// Centroid of `|F|²` over the plane; absent for a dark snapshot.
    centroid: Option<[f64; 3]>,
}

#[derive(Serialize)]
struct FieldsSummary {
    command: &'static str,
    grid: GridSummary,
    zero_state: bool,
    snapshots: Vec<SnapshotSummary>,
    checks: Vec<Check>,
    passed: bool,
    first_failure: Option<String>,
}

/// Plane snapshots of `E`, `H`, `A` and `|F|²`. Writes `fields_t{i}.csv`
/// per time and `fields.json`.
pub fn fields(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let fc = &cfg.fields;
    if fc.times.is_empty() {
        return Err(CliError::Usage("fields.times is empty".into()));
    }
    let units = fc.units.system();
    let k0 = Vector3::from(fc.k0);
    let gauge = BerryGauge::new(Vector3::from(fc.gauge))?;
    let hw = BOX_WIDTHS * k0.norm() * fc.divergence;
    let grid = GridSpec::cube(k0, hw, fc.grid_n, gauge.vector()).build()?;
    let ft = if fc.zero_state {
        zero_state(&grid, gauge)
    } else {
        make_gaussian_packet(&grid, k0, fc.divergence, fc.helicity, gauge)?
    };
    let f = embed(&ft);

    let p = &fc.plane;
    let (e1, e2) = (Vector3::from(p.e1), Vector3::from(p.e2));
    let mut files = Vec::new();
    let mut snapshots = Vec::new();
    for (i, &t) in fc.times.iter().enumerate() {
        let sampling = SpatialSampling::plane(Vector3::from(p.center), e1, e2, p.extent, p.n, t)?;
        let snap = FieldSnapshot::synthesize(&f, &sampling, &units);
        let mut csv = Vec::new();
        snap.write_csv(&mut csv)?;
        let name = format!("fields_t{i}.csv");
        files.push(write_atomic(out, &name, &csv)?);
        let max = |v: &[Vector3<f64>]| v.iter().map(|x| x.norm()).fold(0.0, f64::max);
        let dark = snap.f.iter().all(|v| v.iter().all(|z| *z == Complex64::from(0.0)));
        snapshots.push(SnapshotSummary {
            time: t,
            file: name,
            max_e: max(&snap.e),
            max_h: max(&snap.h),
            max_a: max(&snap.a),
            centroid: (!dark).then(|| intensity_centroid(&snap.points, &snap.f).into()),
        });
    }

    let mut checks = Vec::new();
    if !fc.zero_state {
        let c = Vector3::from(p.center);
        let probes: Vec<Vector3<f64>> = [-1.0, 0.0, 1.0]
            .iter()
            .flat_map(|s| [-1.0, 0.0, 1.0].map(|t| c + e1 * *s + e2 * t))
            .collect();
        let t0 = fc.times[0];
        let step = fc.divergence_step;
        let coulomb = divergence_check(|s| synthesize_a(&f, s, &units), &probes, t0, step)?;
        checks.push(Check::new("Coulomb condition div A = 0", coulomb.relative, cfg.tolerances.coulomb));
        let div_e = divergence_check(|s| synthesize_eh(&f, s, &units).0, &probes, t0, step)?;
        checks.push(Check::new("div E = 0", div_e.relative, cfg.tolerances.divergence_e));
        let sampling = SpatialSampling::new(probes, t0)?;
        let dt = 1e-3 / units.omega(&k0);
        checks.push(Check::new(
            "E = -dA/dt",
            maxwell_residual(&f, &sampling, &units, dt),
            cfg.tolerances.maxwell,
        ));
        if let (Some(first), Some(last)) = (snapshots.first(), snapshots.last()) {
            if fc.times.len() > 1 {
                if let (Some(a), Some(b)) = (first.centroid, last.centroid) {
                    let dist = units.c * (last.time - first.time);
                    let moved = Vector3::from(b) - Vector3::from(a);
                    let err = (moved - k0.normalize() * dist).norm() / dist.abs();
                    checks.push(Check::new("envelope moves at c along k0", err, cfg.tolerances.envelope));
                }
            }
        }
    }
    let passed = checks.iter().all(|c| c.passed);
    let summary = FieldsSummary {
        command: "fields",
        grid: GridSummary::of(&grid, gauge),
        zero_state: fc.zero_state,
        snapshots,
        first_failure: first_failure(&checks),
        checks,
        passed,
    };
    files.push(write_json(out, "fields.json", &summary)?);
    Ok(Outcome {
        passed,
        first_failure: summary.first_failure,
        files,
    })
}
