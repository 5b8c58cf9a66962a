use thiserror::Error;

/// Errors raised by the geometry kernels.
///
/// Variants are grouped loosely by the stage that raises them; the CLI maps
/// [`Error::is_degeneracy`] to its numerical-degeneracy exit code.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point {point:?} is outside the chart domain")]
    Domain { point: Vec<f64> },

    #[error("evaluation produced a non-finite value at {point:?}")]
    Evaluation { point: Vec<f64> },

    #[error("differential is rank deficient at {point:?} (smallest singular value {sigma:e})")]
    ImmersionDegenerate { point: Vec<f64>, sigma: f64 },

    #[error("normal frame construction failed: {0}")]
    Frame(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("shape operators do not commute (commutator norm {commutator:e} > {tol:e})")]
    NotFlatNormalBundle { commutator: f64, tol: f64 },

    #[error("principal normal clustering is ambiguous: link length {gap:e} near cluster tolerance {tol:e}")]
    ClusterResolution { gap: f64, tol: f64 },

    #[error("number of principal normals varies across samples: {strata:?}")]
    NonProper { strata: Vec<(usize, usize)> },

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("numerical rank is ambiguous: singular value gap {gap:e}")]
    Rank { gap: f64 },

    #[error("quasiumbilicity violated: <xi_{i}, xi_{j}> = {value:e}")]
    Quasiumbilicity { i: usize, j: usize, value: f64 },

    #[error("coordinate net is not orthogonal (cosine {cosine:e} at {point:?})")]
    Net { point: Vec<f64>, cosine: f64 },

    #[error("conformal structure mismatch: residual {residual:e} at {point:?}")]
    ConformalStructure { point: Vec<f64>, residual: f64 },

    #[error("conformal factor must be positive, got {0}")]
    Factor(f64),

    #[error("vector is not on the model set: <<V,w>> - 1 = {w_defect:e}, <<V,V>> = {null_defect:e}")]
    ModelMembership { w_defect: f64, null_defect: f64 },

    #[error("point {point:?} maps near infinity (|<<F,w>>| = {value:e})")]
    Pole { point: Vec<f64>, value: f64 },

    #[error("Ribaucour transform is singular: <<R,R>> = {value:e} at grid point {index}")]
    SingularTransform { index: usize, value: f64 },

    #[error("Ribaucour transform is degenerate: rank margin {margin:e} at grid point {index}")]
    DegenerateTransform { index: usize, margin: f64 },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("null-space dimension is ambiguous around threshold {threshold:e}; spectrum head {spectrum:?}")]
    DimensionAmbiguity { threshold: f64, spectrum: Vec<f64> },

    #[error("curve data invalid: {0}")]
    Curve(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),
}

impl Error {
    /// True for failures caused by degenerate numerical input rather than
    /// a violated check or bad configuration.
    pub fn is_degeneracy(&self) -> bool {
        matches!(
            self,
            Error::ImmersionDegenerate { .. }
                | Error::Frame(_)
                | Error::SingularTransform { .. }
                | Error::DegenerateTransform { .. }
                | Error::DegenerateInput(_)
                | Error::DimensionAmbiguity { .. }
                | Error::Rank { .. }
                | Error::ClusterResolution { .. }
                | Error::Pole { .. }
                | Error::LinearAlgebra(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
