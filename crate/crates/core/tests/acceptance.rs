//! Acceptance suite. Prints one PASS/FAIL line per criterion followed by
//! indented detail lines, and exits nonzero if any criterion fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{Matrix2, Matrix3, Vector3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, UnitSphere};

use photon_core::fields::{
    divergence_check, envelope_translation, maxwell_residual, position_amplitude, sample_norm_sqr, synthesize_a,
    synthesize_eh, vector_f, SpatialSampling, UnitSystem,
};
use photon_core::gauge::{
    curl_residual, monopole_flux, potential_shift_residual, varpi_at, varpi_gram, varpi_projector, BerryGauge,
};
use photon_core::kgrid::{GridSpec, KGrid, VectorField3};
use photon_core::operators::{stokes_rotation_residual, CommutatorTolerances, OperatorSet};
use photon_core::spinhall::{berry_phase_check, run_scenario, SpinHallScenario};
use photon_core::stencil::Stencil;
use photon_core::wavefunction::{
    embed, gauge_transform, make_gaussian_packet, project, Helicity, PacketRanges, VectorWavefunction,
};

struct Outcome {
    passed: bool,
    summary: String,
    details: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Self {
            passed: true,
            summary: String::new(),
            details: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, line: String) {
        self.passed &= ok;
        self.details.push(format!("{} {line}", if ok { "ok  " } else { "FAIL" }));
    }
}

fn off_axis_center(theta: f64) -> Vector3<f64> {
    10.0 * Vector3::new(theta.sin(), 0.0, theta.cos())
}

fn quasi_unitarity() -> Outcome {
    let mut out = Outcome::new();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let gauge = BerryGauge::new(Vector3::new(0.3, -0.5, 0.8)).unwrap();
    let (mut gram, mut proj, mut used) = (0.0f64, 0.0f64, 0);
    while used < 10_000 {
        let k = Vector3::from_fn(|_, _| rng.random_range(-10.0..10.0));
        let Ok(varpi) = varpi_at(&k, &gauge) else { continue };
        let w = k.normalize().map(Complex64::from);
        gram = gram.max((varpi_gram(&varpi) - Matrix2::identity()).camax());
        proj = proj.max((varpi_projector(&varpi) - (Matrix3::identity() - w * w.adjoint())).camax());
        used += 1;
    }
    out.check(gram <= 1e-12, format!("max |varpi^dag varpi - I2| = {gram:.2e} over {used} points (tol 1e-12)"));
    out.check(proj <= 1e-12, format!("max |varpi varpi^dag - (I3 - w w^dag)| = {proj:.2e} (tol 1e-12)"));

    let grid = GridSpec::cube(off_axis_center(0.9), 0.5, 9, gauge.vector()).build().unwrap();
    let (mut to_vec, mut to_spinor) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let f = random_transverse(&grid, &mut rng);
        let back = embed(&project(&f, gauge).unwrap());
        to_vec = to_vec.max(max_diff3(f.field(), back.field()) / f.field().max_abs());
        let ft = project(&f, gauge).unwrap();
        let again = project(&embed(&ft), gauge).unwrap();
        let d = (ft.field() - again.field()).max_abs() / ft.field().max_abs();
        to_spinor = to_spinor.max(d);
    }
    out.check(to_vec <= 1e-10, format!("embed(project(f)) = f: {to_vec:.2e} over 20 states (tol 1e-10)"));
    out.check(to_spinor <= 1e-10, format!("project(embed(f~)) = f~: {to_spinor:.2e} (tol 1e-10)"));
    let t = start.elapsed();
    out.check(t < Duration::from_secs(10), format!("runtime {t:.2?} (limit 10 s)"));
    out.summary = format!("quasi-unitarity gram {gram:.1e}, projector {proj:.1e}, round trips {:.1e}", to_vec.max(to_spinor));
    out
}

fn random_transverse(grid: &Arc<KGrid>, rng: &mut ChaCha8Rng) -> VectorWavefunction {
    let raw: Vec<[Complex64; 3]> = (0..grid.len())
        .map(|_| {
            std::array::from_fn(|_| {
                Complex64::new(StandardNormal.sample(&mut *rng), StandardNormal.sample(&mut *rng))
            })
        })
        .collect();
    let field = VectorField3::try_from_fn(grid, |idx, k| {
        let w = k.normalize().map(Complex64::from);
        let v = Vector3::from(raw[idx]);
        let t = v - w * w.dot(&v);
        Some([t[0], t[1], t[2]])
    });
    VectorWavefunction::new(field, 0.0).unwrap()
}

fn max_diff3(a: &VectorField3, b: &VectorField3) -> f64 {
    (a - b).max_abs()
}

fn commutator_table() -> Outcome {
    let mut out = Outcome::new();
    let start = Instant::now();
    let tol = CommutatorTolerances::default();
    let run = |n: usize| {
        let grid = GridSpec::cube(off_axis_center(PI / 4.0), 0.5, n, Vector3::z()).build().unwrap();
        let set = OperatorSet::new(&grid, BerryGauge::z());
        let states = set.random_states(10, 7);
        set.commutator_table(&states, &tol).unwrap()
    };
    let coarse = run(33);
    let fine = run(49);
    // identities named by the criterion; the table also carries extra rows
    let required = [
        "[s_i, s_j] = 0",
        "[sigma_i, sigma_j] = 2i eps_ijk sigma_k",
        "[xi_i, p_j] = i delta_ij",
        "[lambda_i, lambda_j] = i eps_ijk lambda_k",
        "[l_i, l_j] = i eps_ijk (l_k - s_k)",
        "[l_i, s_j] = i eps_ijk s_k",
        "[j_i, j_j] = i eps_ijk j_k",
        "[x_i, x_j] = i eps_ijk sigma3 (H_B)_k",
    ];
    let mut worst_ratio = f64::INFINITY;
    for (c, f) in coarse.iter().zip(&fine) {
        let needed = required.contains(&c.identity.as_str());
        let tag = if needed { "" } else { " (extra)" };
        if c.differential {
            let ratio = c.residual_max / f.residual_max;
            let floor = c.residual_max <= 1e-12 && f.residual_max <= 1e-12;
            let line = format!(
                "{}{tag}: 33^3 {:.2e}, 49^3 {:.2e}, reduction {ratio:.1}x (tol {:.0e}, need >= 2x{})",
                c.identity,
                c.residual_max,
                f.residual_max,
                c.tolerance,
                if floor { "; at roundoff floor on both grids" } else { "" }
            );
            if needed {
                worst_ratio = worst_ratio.min(ratio);
                out.check(c.passed && f.passed && ratio >= 2.0, line);
            } else {
                out.check(c.passed && f.passed && (ratio >= 2.0 || floor), line);
            }
        } else {
            out.check(
                c.passed && f.passed,
                format!("{}{tag}: 33^3 {:.2e} (tol {:.0e})", c.identity, c.residual_max, c.tolerance),
            );
        }
    }
    for r in required {
        out.check(coarse.iter().any(|c| c.identity == r), format!("identity present: {r}"));
    }
    let t = start.elapsed();
    out.check(t < Duration::from_secs(120), format!("runtime {t:.2?} (limit 120 s)"));
    out.summary = format!(
        "{} identities on 33^3 and 49^3, smallest refinement gain {worst_ratio:.0}x",
        coarse.len()
    );
    out
}

fn berry_geometry() -> Outcome {
    let mut out = Outcome::new();
    let grid = GridSpec::cube(off_axis_center(0.8), 0.5, 33, Vector3::z()).build().unwrap();
    let curl = curl_residual(&grid, BerryGauge::z(), Stencil::Fourth);
    out.check(curl <= 1e-4, format!("curl A_B = -w/k^2 on 33^3: {curl:.2e} (tol 1e-4)"));
    let to = BerryGauge::new(Vector3::new(1.0, 0.4, -0.3)).unwrap();
    let shift = potential_shift_residual(&grid, BerryGauge::z(), to, Stencil::Fourth);
    out.check(shift <= 1e-4, format!("A'_B - A_B = grad phi: {shift:.2e} (tol 1e-4)"));
    let flux = monopole_flux(Vector3::new(0.2, -0.1, 0.3), 1.5, 64, 128);
    let rel = (flux + 4.0 * PI).abs() / (4.0 * PI);
    out.check(rel <= 0.01, format!("monopole flux {flux:.6} vs -4 pi: {rel:.2e} (tol 1e-2)"));
    out.summary = format!("curl {curl:.1e}, gauge shift {shift:.1e}, flux error {rel:.1e}");
    out
}

/// Random gauge vectors whose singular cones stay well clear of the box.
fn random_gauge(rng: &mut ChaCha8Rng, grid: &KGrid) -> BerryGauge {
    let c = grid.center();
    let box_radius = (grid.half_width().norm() / c.norm()).asin();
    loop {
        let v: [f64; 3] = UnitSphere.sample(rng);
        let g = BerryGauge::new(Vector3::from(v)).unwrap();
        let angle = g.axis_angle(&c).min(g.flipped().axis_angle(&c));
        if angle > box_radius + 0.5 {
            return g;
        }
    }
}

fn gauge_covariance() -> Outcome {
    let mut out = Outcome::new();
    let grid = GridSpec::cube(off_axis_center(PI / 4.0), 1.0, 49, Vector3::z()).build().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut dx, mut dp, mut ds, mut dn, mut dw) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let (mut stokes, mut phase) = (0.0f64, 0.0f64);
    for pair in 0..5 {
        let (g, gp) = (random_gauge(&mut rng, &grid), random_gauge(&mut rng, &grid));
        let (a, b) = (OperatorSet::new(&grid, g), OperatorSet::new(&grid, gp));
        let states = a.random_states_with(&PacketRanges::LOCALIZED, 10, 100 + pair);
        let ops = |s: &OperatorSet| [s.position(), s.momentum(), s.spin(), s.omega()];
        let (oa, ob) = (ops(&a), ops(&b));
        for s in &states {
            let sp = gauge_transform(s, gp).unwrap();
            let diff = |i: usize| {
                let (x, y) = (oa[i].expectation(s).unwrap(), ob[i].expectation(&sp).unwrap());
                x.iter().zip(&y).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max)
            };
            dx = dx.max(diff(0));
            dp = dp.max(diff(1));
            ds = ds.max(diff(2));
            dw = dw.max(diff(3));
            dn = dn.max((s.norm_sqr() - sp.norm_sqr()).abs());
            stokes = stokes.max(stokes_rotation_residual(s, gp, 1e-20).unwrap());
        }
        for h in [Helicity::Plus, Helicity::Minus] {
            let k0 = grid.center();
            let packet = make_gaussian_packet(&grid, k0, 1.0 / (6.5 * k0.norm()), h, g).unwrap();
            let r = berry_phase_check(&embed(&packet), g, gp).unwrap();
            phase = phase.max(r.max_phase_deviation).max(r.max_modulus_deviation);
        }
    }
    for (name, v) in [("<x>", dx), ("<p>", dp), ("<s>", ds), ("norm", dn), ("<omega>", dw)] {
        out.check(v <= 1e-6, format!("{name} invariance over 10 states x 5 gauge pairs: {v:.2e} (tol 1e-6)"));
    }
    out.check(stokes <= 1e-12, format!("Stokes rotate by 2 phi, s3 fixed: {stokes:.2e} (tol 1e-12)"));
    out.check(phase <= 1e-10, format!("helicity Berry-phase fit: {phase:.2e} (tol 1e-10)"));
    out.summary = format!("max invariance residual {:.1e}, Stokes {stokes:.1e}, Berry phase {phase:.1e}", dx.max(dp).max(ds).max(dn).max(dw));
    out
}

fn spin_hall() -> Outcome {
    let mut out = Outcome::new();
    let mut worst = 0.0f64;
    for deg in [30.0f64, 45.0, 60.0] {
        let mut b = Vec::new();
        for h in [Helicity::Plus, Helicity::Minus] {
            let start = Instant::now();
            let s = SpinHallScenario::new(10.0, deg.to_radians(), h, 0.01, 33).unwrap();
            let r = run_scenario(&s).unwrap();
            let t = start.elapsed();
            worst = worst.max(r.relative_error);
            out.check(
                r.relative_error <= 0.02 && t < Duration::from_secs(60),
                format!(
                    "Theta {deg} sigma {:+}: <b> = ({:.6}, {:.6}, {:.6}), predicted {:.6} along v0, error {:.2e} (tol 2e-2), {t:.2?}",
                    h.value(),
                    r.measured_b[0],
                    r.measured_b[1],
                    r.measured_b[2],
                    r.predicted_magnitude,
                    r.relative_error
                ),
            );
            out.check(
                r.barycenter_consistent() && r.orthogonal_to_k0(),
                format!("Theta {deg} sigma {:+}: |<x> - <b>| = {:.2e}, |<b>.k0| = {:.2e}", h.value(), r.barycenter_residual, r.longitudinal_component),
            );
            b.push(Vector3::from(r.measured_b));
        }
        let anti = (b[0] + b[1]).norm() / b[0].norm();
        out.check(anti <= 1e-6, format!("Theta {deg}: sign antisymmetry {anti:.2e} (tol 1e-6)"));
    }
    let r = run_scenario(&SpinHallScenario::new(10.0, PI / 2.0, Helicity::Plus, 0.01, 33).unwrap()).unwrap();
    let m = Vector3::from(r.measured_b).norm();
    out.check(m <= 1e-5, format!("Theta 90: |<b>| = {m:.2e} (tol 1e-4/k0 = 1e-5)"));
    out.summary = format!("largest relative error {worst:.1e}, |<b>| at 90 deg {m:.1e}");
    out
}

fn field_synthesis() -> Outcome {
    let mut out = Outcome::new();
    let units = UnitSystem::natural();
    let k0 = Vector3::new(0.0, 0.0, 10.0);
    let div = 0.05;
    let grid = GridSpec::cube(k0, 6.5 * 10.0 * div, 35, Vector3::x()).build().unwrap();
    let ft = make_gaussian_packet(&grid, k0, div, Helicity::Plus, BerryGauge::x()).unwrap();
    let f = embed(&ft);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let probes: Vec<Vector3<f64>> = (0..20)
        .map(|_| Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0)))
        .collect();
    let coulomb = divergence_check(|s| synthesize_a(&f, s, &units), &probes, 0.0, 0.01).unwrap();
    out.check(
        coulomb.relative <= 1e-4,
        format!("Coulomb condition div A / |grad A| = {:.2e} (tol 1e-4)", coulomb.relative),
    );
    let div_e = divergence_check(|s| synthesize_eh(&f, s, &units).0, &probes, 0.0, 0.01).unwrap();
    out.check(div_e.relative <= 1e-3, format!("div E / |grad E| = {:.2e} (tol 1e-3)", div_e.relative));

    let xi = SpatialSampling::reciprocal(&grid, Vector3::zeros(), 0.0).unwrap();
    let cell = xi.lattice_info().unwrap().cell_volume();
    let p_tilde = (sample_norm_sqr(&position_amplitude(&ft, &xi, &units), cell) / ft.norm_sqr() - 1.0).abs();
    out.check(p_tilde <= 1e-3, format!("Parseval for F~(xi): {p_tilde:.2e} (tol 1e-3)"));
    let p_vec = (sample_norm_sqr(&vector_f(&f, &xi, &units), cell) / f.norm_sqr() - 1.0).abs();
    out.check(p_vec <= 1e-3, format!("Parseval for F(X): {p_vec:.2e} (tol 1e-3)"));

    let sampling = SpatialSampling::new(probes.clone(), 0.3).unwrap();
    let maxwell = maxwell_residual(&f, &sampling, &units, 1e-3);
    out.check(maxwell <= 1e-3, format!("E = -dA/dt: {maxwell:.2e} (tol 1e-3)"));

    let fwd = envelope_translation(|s| vector_f(&f, s, &units), Vector3::zeros(), k0, 6.0, 0.6, 0.0, &units).unwrap();
    out.check(
        fwd.relative_error <= 0.02,
        format!(
            "|F|^2 centroid moves {:.4} in T = {:.1} vs cT = {:.1}: {:.2e} (tol 2e-2)",
            (Vector3::from(fwd.end_centroid) - Vector3::from(fwd.start_centroid)).norm(),
            fwd.crossing_time,
            fwd.expected_distance,
            fwd.relative_error
        ),
    );
    let two = |s: &SpatialSampling| position_amplitude(&ft, s, &units);
    let tilde = envelope_translation(two, Vector3::zeros(), k0, 6.0, 0.6, 0.0, &units).unwrap();
    out.check(tilde.relative_error <= 0.02, format!("|F~|^2 centroid translation: {:.2e} (tol 2e-2)", tilde.relative_error));
    out.summary = format!(
        "Coulomb {:.1e}, Parseval {:.1e}, Maxwell {maxwell:.1e}, envelope {:.1e}",
        coulomb.relative,
        p_tilde.max(p_vec),
        fwd.relative_error.max(tilde.relative_error)
    );
    out
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 6] = [
        ("1 quasi-unitarity", quasi_unitarity),
        ("2 commutator table", commutator_table),
        ("3 Berry-gauge geometry", berry_geometry),
        ("4 gauge covariance", gauge_covariance),
        ("5 spin-Hall shift", spin_hall),
        ("6 field synthesis", field_synthesis),
    ];
    let mut all = true;
    for (name, run) in criteria {
        let start = Instant::now();
        let o = run();
        all &= o.passed;
        println!(
            "{} criterion {name}: {} [{:.1?}]",
            if o.passed { "PASS" } else { "FAIL" },
            o.summary,
            start.elapsed()
        );
        for d in &o.details {
            println!("    {d}");
        }
    }
    println!("acceptance: {}", if all { "all criteria passed" } else { "some criteria FAILED" });
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

