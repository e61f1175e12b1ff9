//! The trained model and its versioned JSON document.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::constraints::{build_constraints, check_feasible, Constraint, ConstraintError, ConstraintSet};
use crate::grid::{GridError, GridKind, GridSpec, QoEGrid};
use crate::qp::SolveStatus;
use crate::scalar::Scalar;

pub const MODEL_FORMAT: &str = "ksqi-model";
pub const MODEL_VERSION: u32 = 1;
/// Feasibility tolerance enforced on every model that is constructed or loaded.
pub const FEASIBILITY_TOL: f64 = 1e-6;

/// `FEASIBILITY_TOL`, widened to a few hundred ulps of the largest grid
/// value when that is coarser (only ever for `f32`).
pub fn feasibility_tol<T: Scalar>(g: &QoEGrid<T>) -> T {
    let scale = g.as_slice().iter().fold(T::one(), |m, v| m.max(v.abs()));
    T::lit(FEASIBILITY_TOL).max(T::lit(256.0) * T::epsilon() * scale)
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("malformed model document: {0}")]
    Parse(String),
    #[error("not a model document (format '{0}')")]
    WrongFormat(String),
    #[error("unsupported model version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u64, supported: u32 },
    #[error("{kind:?} grid violates {count} constraint rows, worst {worst_label} by {worst}")]
    Infeasible {
        kind: GridKind,
        count: usize,
        worst_label: String,
        worst: f64,
    },
    #[error("grid shape does not match the model spec")]
    Shape,
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
}

/// Short account of one QP solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub status: SolveStatus,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MosRescaling {
    pub dataset: String,
    pub from: (f64, f64),
    pub to: (f64, f64),
}

/// Training metadata stored alongside the grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset: Option<String>,
    pub seed: Option<u64>,
    /// Constraint families the grids were fitted (and are verified) under.
    pub constraints: Vec<Constraint>,
    /// Native MOS ranges that were mapped onto `[0, P]` before fitting.
    pub mos_rescaling: Vec<MosRescaling>,
    pub first_chunk_adaptation: bool,
    pub rebuffer_sessions: usize,
    pub adaptation_sessions: usize,
    pub rebuffering_solve: Option<SolveSummary>,
    pub adaptation_solve: Option<SolveSummary>,
}

impl Default for Provenance {
    fn default() -> Self {
        Self {
            dataset: None,
            seed: None,
            constraints: Constraint::REBUFFERING
                .into_iter()
                .chain(Constraint::ADAPTATION)
                .collect(),
            mos_rescaling: Vec::new(),
            first_chunk_adaptation: true,
            rebuffer_sessions: 0,
            adaptation_sessions: 0,
            rebuffering_solve: None,
            adaptation_solve: None,
        }
    }
}

impl Provenance {
    pub fn constraint_set(&self) -> ConstraintSet {
        self.constraints.iter().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KsqiModel<T> {
    s_grid: QoEGrid<T>,
    a_grid: QoEGrid<T>,
    spec: GridSpec<T>,
    lambda: T,
    provenance: Provenance,
}

impl<T: Scalar> KsqiModel<T> {
    /// Builds a model, checking both grids against the constraint families
    /// listed in `provenance`.
    pub fn new(
        s_grid: QoEGrid<T>,
        a_grid: QoEGrid<T>,
        lambda: T,
        provenance: Provenance,
    ) -> Result<Self, ModelError> {
        let spec = s_grid.spec;
        if a_grid.spec != spec || s_grid.kind != GridKind::Rebuffering || a_grid.kind != GridKind::Adaptation {
            return Err(ModelError::Shape);
        }
        spec.validate()?;
        let m = Self {
            s_grid,
            a_grid,
            spec,
            lambda,
            provenance,
        };
        m.verify()?;
        Ok(m)
    }

    pub fn verify(&self) -> Result<(), ModelError> {
        let enabled = self.provenance.constraint_set();
        for g in [&self.s_grid, &self.a_grid] {
            let cs = build_constraints(&self.spec, g.kind, &enabled)?;
            let v = check_feasible(g, &cs, feasibility_tol(g))?;
            if let Some(worst) = v.iter().max_by(|a, b| a.residual.partial_cmp(&b.residual).unwrap()) {
                return Err(ModelError::Infeasible {
                    kind: g.kind,
                    count: v.len(),
                    worst_label: worst.label.to_string(),
                    worst: worst.residual.as_f64(),
                });
            }
        }
        Ok(())
    }

    pub fn s_grid(&self) -> &QoEGrid<T> {
        &self.s_grid
    }

    pub fn a_grid(&self) -> &QoEGrid<T> {
        &self.a_grid
    }

    pub fn spec(&self) -> &GridSpec<T> {
        &self.spec
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn to_json(&self) -> String {
        let doc = ModelDoc {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            spec: self.spec,
            lambda: self.lambda,
            s_grid: self.s_grid.rows(),
            a_grid: self.a_grid.rows(),
            provenance: self.provenance.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let raw: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
        let format = raw.get("format").and_then(|v| v.as_str()).unwrap_or("");
        if format != MODEL_FORMAT {
            return Err(ModelError::WrongFormat(format.to_string()));
        }
        let version = raw
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| ModelError::Parse("missing version".into()))?;
        if version != u64::from(MODEL_VERSION) {
            return Err(ModelError::UnsupportedVersion {
                found: version,
                supported: MODEL_VERSION,
            });
        }
        let doc: ModelDoc<T> =
            serde_json::from_value(raw).map_err(|e| ModelError::Parse(e.to_string()))?;
        doc.spec.validate()?;
        let grid = |kind, rows: Vec<Vec<T>>| -> Result<QoEGrid<T>, ModelError> {
            if rows.len() != doc.spec.side() || rows.iter().any(|r| r.len() != doc.spec.side()) {
                return Err(ModelError::Shape);
            }
            Ok(QoEGrid::from_vec(kind, doc.spec, rows.concat())?)
        };
        let s = grid(GridKind::Rebuffering, doc.s_grid)?;
        let a = grid(GridKind::Adaptation, doc.a_grid)?;
        Self::new(s, a, doc.lambda, doc.provenance)
    }

    /// Hex SHA-256 of the serialized document.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct ModelDoc<T> {
    format: String,
    version: u32,
    spec: GridSpec<T>,
    lambda: T,
    s_grid: Vec<Vec<T>>,
    a_grid: Vec<Vec<T>>,
    provenance: Provenance,
}
