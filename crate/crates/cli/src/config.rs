//! Run configuration: one JSON document, natural units, angles in radians.
//! Every field has a default, so `{}` is a valid configuration.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use nalgebra::Vector3;
use photon_core::fields::UnitSystem;
use photon_core::kgrid::{GridSpec, KGrid, DEFAULT_EPS_CONE};
use photon_core::operators::CommutatorTolerances;
use photon_core::{BerryGauge, Helicity, PhotonError};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridConfig,
    /// Berry-gauge vector `I`; need not be normalized.
    pub gauge: [f64; 3],
    /// Second gauge `I'` for gauge-change checks.
    pub gauge_prime: [f64; 3],
    pub packet: PacketConfig,
    /// Random states per randomized check.
    pub trials: usize,
    pub covariance: CovarianceConfig,
    pub scan: ScanConfig,
    pub fields: FieldsConfig,
    pub tolerances: Tolerances,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            grid: GridConfig::default(),
            gauge: [0.0, 0.0, 1.0],
            gauge_prime: [1.0, 0.0, 0.0],
            packet: PacketConfig::default(),
            trials: 10,
            covariance: CovarianceConfig::default(),
            scan: ScanConfig::default(),
            fields: FieldsConfig::default(),
            tolerances: Tolerances::default(),
            seed: 7,
        }
    }
}

/// k-grid used by `verify` and `gauge-demo`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub center: [f64; 3],
    pub half_width: f64,
    pub n: usize,
    pub eps_cone: f64,
    pub eps_k: Option<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        let th = PI / 4.0;
        Self {
            center: [10.0 * th.sin(), 0.0, 10.0 * th.cos()],
            half_width: 0.5,
            n: 33,
            eps_cone: DEFAULT_EPS_CONE,
            eps_k: None,
        }
    }
}

/// Helicity packet for Berry-phase fits; centered on the grid by default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PacketConfig {
    pub k0: Option<[f64; 3]>,
    /// Angular width; defaults to the widest packet that fits the grid.
    pub divergence: Option<f64>,
    pub helicities: Vec<Helicity>,
}

impl Default for PacketConfig {
    fn default() -> Self {
        Self {
            k0: None,
            divergence: None,
            helicities: vec![Helicity::Plus, Helicity::Minus],
        }
    }
}

/// Finer grid, same center, for gauge-invariance of expectation values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovarianceConfig {
    pub half_width: f64,
    pub n: usize,
}

impl Default for CovarianceConfig {
    fn default() -> Self {
        Self { half_width: 1.0, n: 49 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub k0: f64,
    pub thetas: Vec<f64>,
    pub divergence: f64,
    pub helicities: Vec<Helicity>,
    pub n: usize,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            k0: 10.0,
            thetas: vec![PI / 6.0, PI / 4.0, PI / 3.0, PI / 2.0],
            divergence: 0.01,
            helicities: vec![Helicity::Plus, Helicity::Minus],
            n: 33,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    Natural,
    Si,
}

impl Units {
    pub fn system(self) -> UnitSystem {
        match self {
            Units::Natural => UnitSystem::natural(),
            Units::Si => UnitSystem::si(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlaneConfig {
    pub center: [f64; 3],
    pub e1: [f64; 3],
    pub e2: [f64; 3],
    pub extent: f64,
    pub n: [usize; 2],
}

impl Default for PlaneConfig {
    fn default() -> Self {
        Self {
            center: [0.0; 3],
            e1: [1.0, 0.0, 0.0],
            e2: [0.0, 0.0, 1.0],
            extent: 12.0,
            n: [61, 61],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldsConfig {
    pub k0: [f64; 3],
    pub divergence: f64,
    pub helicity: Helicity,
    pub gauge: [f64; 3],
    /// Points per axis of the packet's k-grid.
    pub grid_n: usize,
    pub plane: PlaneConfig,
    pub times: Vec<f64>,
    pub units: Units,
    /// Synthesize the zero wavefunction instead of the packet.
    pub zero_state: bool,
    /// Finite-difference step of the divergence checks.
    pub divergence_step: f64,
}

impl Default for FieldsConfig {
    fn default() -> Self {
        Self {
            k0: [0.0, 0.0, 10.0],
            divergence: 0.05,
            helicity: Helicity::Plus,
            gauge: [1.0, 0.0, 0.0],
            grid_n: 35,
            plane: PlaneConfig::default(),
            times: vec![0.0, 6.0],
            units: Units::Natural,
            zero_state: false,
            divergence_step: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub commutators: CommutatorTolerances,
    pub unitarity: f64,
    pub round_trip: f64,
    pub curl: f64,
    pub potential_shift: f64,
    pub flux: f64,
    pub invariance: f64,
    pub stokes: f64,
    pub berry_phase: f64,
    pub shift: f64,
    pub coulomb: f64,
    pub divergence_e: f64,
    pub maxwell: f64,
    pub envelope: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            commutators: CommutatorTolerances::default(),
            unitarity: 1e-12,
            round_trip: 1e-10,
            curl: 1e-4,
            potential_shift: 1e-4,
            flux: 1e-2,
            invariance: 1e-6,
            stokes: 1e-12,
            berry_phase: 1e-10,
            shift: 0.02,
            coulomb: 1e-4,
            divergence_e: 1e-3,
            maxwell: 1e-3,
            envelope: 0.02,
        }
    }
}

fn gauge_from(v: [f64; 3], what: &str) -> Result<BerryGauge, CliError> {
    BerryGauge::new(Vector3::from(v)).map_err(|_| CliError::Config(format!("{what} {v:?} is not a nonzero finite vector")))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.grid.eps_cone > 0.0) {
            return Err(CliError::Config(
                PhotonError::SingularGauge {
                    angle: 0.0,
                    eps_cone: self.grid.eps_cone,
                }
                .to_string()
                    + "; eps_cone must be positive so the singular cone is excluded",
            ));
        }
        self.gauge()?;
        self.gauge_prime()?;
        gauge_from(self.fields.gauge, "fields.gauge")?;
        if self.trials == 0 {
            return Err(CliError::Config("trials must be positive".into()));
        }
        Ok(())
    }

    pub fn gauge(&self) -> Result<BerryGauge, CliError> {
        gauge_from(self.gauge, "gauge")
    }

    pub fn gauge_prime(&self) -> Result<BerryGauge, CliError> {
        gauge_from(self.gauge_prime, "gauge_prime")
    }

    fn spec(&self, half_width: f64, n: usize) -> GridSpec {
        GridSpec {
            center: self.grid.center,
            half_width: [half_width; 3],
            n: [n; 3],
            gauge: self.gauge,
            eps_cone: self.grid.eps_cone,
            eps_k: self.grid.eps_k,
        }
    }

    pub fn build_grid(&self) -> Result<Arc<KGrid>, CliError> {
        Ok(self.spec(self.grid.half_width, self.grid.n).build()?)
    }

    pub fn build_covariance_grid(&self) -> Result<Arc<KGrid>, CliError> {
        Ok(self.spec(self.covariance.half_width, self.covariance.n).build()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = RunConfig::parse("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        assert!((Vector3::from(c.grid.center).norm() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn zero_cone_is_a_config_error() {
        let e = RunConfig::parse(r#"{"grid": {"eps_cone": 0.0}}"#).unwrap_err();
        assert!(matches!(e, CliError::Config(ref m) if m.contains("singular cone")));
    }

    #[test]
    fn rejects_unknown_fields_and_zero_gauges() {
        assert!(RunConfig::parse(r#"{"gird": {}}"#).is_err());
        assert!(RunConfig::parse(r#"{"gauge": [0, 0, 0]}"#).is_err());
    }

    #[test]
    fn helicities_parse_as_signs() {
        let c = RunConfig::parse(r#"{"scan": {"helicities": ["-1"]}}"#).unwrap();
        assert_eq!(c.scan.helicities, vec![Helicity::Minus]);
    }
}
