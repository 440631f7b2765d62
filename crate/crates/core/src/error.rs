use thiserror::Error;

#[derive(Debug, Error)]
pub enum PhotonError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("{masked} of {total} grid points masked ({fraction:.3}); more than half the box lies in the singular cone or at the origin")]
    MostlyMasked {
        masked: usize,
        total: usize,
        fraction: f64,
    },

    #[error("gauge vector must be a nonzero finite 3-vector")]
    InvalidGauge,

    #[error("wavevector lies inside the singular cone of the gauge vector (angle {angle:.3e} rad < {eps_cone:.3e} rad)")]
    SingularGauge { angle: f64, eps_cone: f64 },

    #[error("wavevector magnitude {magnitude:.3e} is below the cutoff {eps_k:.3e}")]
    ZeroWavevector { magnitude: f64, eps_k: f64 },

    #[error("vector wavefunction violates transversality: max |f·w| = {violation:.3e} exceeds {tolerance:.3e}")]
    TransversalityViolated { violation: f64, tolerance: f64 },

    #[error("packet amplitude {relative:.3e} (relative to peak) reaches the box boundary")]
    PacketTouchesBoundary { relative: f64 },

    #[error("packet amplitude {relative:.3e} (relative to peak) reaches a masked or singular point")]
    PacketTouchesSingularCone { relative: f64 },

    #[error("zero intensity at the evaluated point")]
    ZeroIntensity,

    #[error("operators {left} and {right} are declared in different gauges")]
    IncompatibleGauge { left: String, right: String },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid sampling: {0}")]
    InvalidSampling(String),

    #[error("malformed field file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PhotonError>;
