//! Thermo-elastic error computation and correction: maps a predicted
//! thermal field to TCP drift along a serial kinematic chain, and drift
//! to compensation offsets.
//!
//! The deliberate simplification here is a 1D series chain: each
//! element expands along its axis by `length * cte * delta_t`, driven by
//! the mean temperature of the nodes assigned to it, and per-axis drift
//! is the sum over the chain. Orientation errors reduce to the angular
//! deviation of a paired-element stage.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::NodeTimeSeries;
use crate::scalar::Scalar;

/// Reference temperature T20 = 20 C in kelvin.
pub const T_REFERENCE: f64 = 293.15;

pub const DEFAULT_CHAIN_TOML: &str = include_str!("../config/chain5.toml");

#[derive(Debug, Error)]
pub enum ErrorChainError {
    #[error("element {element:?} references node {node_id:?} absent from the field")]
    UnmappedNode { element: String, node_id: String },
    #[error("invalid chain: {detail}")]
    BadChain { detail: String },
    #[error("row {row} out of range for a field of {len} steps")]
    RowOutOfRange { row: usize, len: usize },
    #[error("malformed chain config: {detail}")]
    MalformedConfig { detail: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Machine axis an element expands along.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }
}

fn default_reference_temp() -> f64 {
    T_REFERENCE
}

/// One element of the serial kinematic chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralElement {
    pub id: String,
    pub axis: Axis,
    /// Nominal length x, metres.
    pub length: f64,
    /// Coefficient of thermal expansion alpha, 1/K.
    pub cte: f64,
    /// CTE uncertainty u(alpha), 1/K. Included with its nominal sign,
    /// so a positive value gives the worst-case position bound.
    #[serde(default)]
    pub cte_uncertainty: f64,
    /// Young's modulus E, pascal.
    pub youngs_modulus: f64,
    /// Reference temperature T20, kelvin.
    #[serde(default = "default_reference_temp")]
    pub reference_temp: f64,
    /// Geometric error delta(x), metres.
    #[serde(default)]
    pub geometric_error: f64,
    /// Nodes whose mean temperature drives this element.
    #[serde(default)]
    pub nodes: Vec<String>,
}

impl StructuralElement {
    pub fn validate(&self) -> Result<(), ErrorChainError> {
        let bad = |detail: String| {
            Err(ErrorChainError::BadChain {
                detail: format!("element {:?}: {detail}", self.id),
            })
        };
        if self.length <= 0.0 || !self.length.is_finite() {
            return bad(format!("length {} must be positive", self.length));
        }
        if self.cte <= 0.0 || !self.cte.is_finite() {
            return bad(format!("cte {} must be positive", self.cte));
        }
        if self.cte_uncertainty < 0.0 || !self.cte_uncertainty.is_finite() {
            return bad(format!(
                "cte uncertainty {} must be non-negative",
                self.cte_uncertainty
            ));
        }
        if self.youngs_modulus <= 0.0 || !self.youngs_modulus.is_finite() {
            return bad(format!(
                "Young's modulus {} must be positive",
                self.youngs_modulus
            ));
        }
        if !self.reference_temp.is_finite() || !self.geometric_error.is_finite() {
            return bad("reference temperature and geometric error must be finite".into());
        }
        Ok(())
    }
}

/// The serial chain from machine base to tool center point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicChain {
    #[serde(rename = "element")]
    pub elements: Vec<StructuralElement>,
}

impl KinematicChain {
    pub fn validate(&self) -> Result<(), ErrorChainError> {
        if self.elements.is_empty() {
            return Err(ErrorChainError::BadChain {
                detail: "chain has no elements".into(),
            });
        }
        for element in &self.elements {
            element.validate()?;
            if element.nodes.is_empty() {
                return Err(ErrorChainError::BadChain {
                    detail: format!("element {:?} has no nodes assigned", element.id),
                });
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ErrorChainError> {
        let chain: Self =
            toml::from_str(text).map_err(|e| ErrorChainError::MalformedConfig {
                detail: e.to_string(),
            })?;
        chain.validate()?;
        Ok(chain)
    }

    pub fn from_toml_path(path: impl AsRef<Path>) -> Result<Self, ErrorChainError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// The chain shipped with the default 29-node machine.
    pub fn default_chain() -> Self {
        Self::from_toml_str(DEFAULT_CHAIN_TOML).expect("embedded chain config is valid")
    }
}

/// Thermal strain of Eq. 4: eps_th = alpha * delta_t.
pub fn thermal_strain(cte: f64, delta_t: f64) -> f64 {
    cte * delta_t
}

/// Thermal stress of Eq. 6: pi_th = E * alpha * delta_t. Computed
/// through [`thermal_strain`] so pi_th = E * eps_th holds bit for bit.
pub fn thermal_stress(youngs_modulus: f64, cte: f64, delta_t: f64) -> f64 {
    youngs_modulus * thermal_strain(cte, delta_t)
}

/// Axis position under expansion and CTE uncertainty:
/// `X = -[x(1 + (alpha + u(alpha)) (T_i - T20))] + delta(x)`.
pub fn axis_position(element: &StructuralElement, temperature: f64) -> f64 {
    let dt = temperature - element.reference_temp;
    -(element.length * (1.0 + (element.cte + element.cte_uncertainty) * dt))
        + element.geometric_error
}

/// One element's share of the drift at one time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementContribution {
    pub element: String,
    pub axis: Axis,
    /// Mean node temperature minus the element's reference, kelvin.
    pub delta_t: f64,
    /// alpha * delta_t.
    pub strain: f64,
    /// E * alpha * delta_t.
    pub stress: f64,
    /// length * strain, metres along the element's axis.
    pub elongation: f64,
}

/// TCP drift at one time step, with the per-element breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftEstimate {
    /// TCP displacement per axis (x, y, z), metres.
    pub drift: [f64; 3],
    /// Length-weighted mean element strain.
    pub strain: f64,
    /// Effective stress: length-weighted mean modulus times `strain`,
    /// so stress = E_eff * strain holds identically.
    pub stress: f64,
    pub contributions: Vec<ElementContribution>,
}

impl DriftEstimate {
    pub fn axis(&self, axis: Axis) -> f64 {
        self.drift[axis.index()]
    }
}

/// Drift for one snapshot of the field: per-axis sum over chain
/// elements of `length * cte * (mean node delta_t)`.
pub fn tcp_drift<F: Scalar>(
    field: &NodeTimeSeries<F>,
    row: usize,
    chain: &KinematicChain,
) -> Result<DriftEstimate, ErrorChainError> {
    chain.validate()?;
    if row >= field.len() {
        return Err(ErrorChainError::RowOutOfRange {
            row,
            len: field.len(),
        });
    }
    let column: HashMap<&str, usize> = field
        .node_ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut drift = [0.0; 3];
    let mut contributions = Vec::with_capacity(chain.elements.len());
    let mut length_sum = 0.0;
    let mut weighted_strain = 0.0;
    let mut weighted_modulus = 0.0;
    for element in &chain.elements {
        let mut sum = 0.0;
        for node in &element.nodes {
            let &c = column
                .get(node.as_str())
                .ok_or_else(|| ErrorChainError::UnmappedNode {
                    element: element.id.clone(),
                    node_id: node.clone(),
                })?;
            sum += field.values().get2(row, c).to64();
        }
        let delta_t = sum / element.nodes.len() as f64 - element.reference_temp;
        let strain = thermal_strain(element.cte, delta_t);
        let stress = thermal_stress(element.youngs_modulus, element.cte, delta_t);
        let elongation = element.length * strain;
        drift[element.axis.index()] += elongation;
        length_sum += element.length;
        weighted_strain += element.length * strain;
        weighted_modulus += element.length * element.youngs_modulus;
        contributions.push(ElementContribution {
            element: element.id.clone(),
            axis: element.axis,
            delta_t,
            strain,
            stress,
            elongation,
        });
    }
    let strain = weighted_strain / length_sum;
    let stress = (weighted_modulus / length_sum) * strain;
    Ok(DriftEstimate {
        drift,
        strain,
        stress,
        contributions,
    })
}

/// [`tcp_drift`] at every time step of the field.
pub fn drift_trace<F: Scalar>(
    field: &NodeTimeSeries<F>,
    chain: &KinematicChain,
) -> Result<Vec<DriftEstimate>, ErrorChainError> {
    (0..field.len()).map(|row| tcp_drift(field, row, chain)).collect()
}

/// Pure-negation compensation: offset = -drift per axis, so applying
/// the offset cancels the drift exactly.
pub fn compensation_offset(drift: &DriftEstimate) -> [f64; 3] {
    drift.drift.map(|d| -d)
}

/// Angular deviation of a paired-element stage:
/// `dtheta ~= (dl_top - dl_bottom) / separation` (radians).
pub fn orientation_deviation(
    elongation_top: f64,
    elongation_bottom: f64,
    separation: f64,
) -> Result<f64, ErrorChainError> {
    if separation <= 0.0 || !separation.is_finite() {
        return Err(ErrorChainError::BadChain {
            detail: format!("pair separation {separation} must be positive"),
        });
    }
    Ok((elongation_top - elongation_bottom) / separation)
}

fn write_trace_csv(
    path: impl AsRef<Path>,
    label: &str,
    timestamps: &[f64],
    rows: impl Iterator<Item = [f64; 3]>,
) -> Result<(), ErrorChainError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "time".to_string(),
        format!("{label}_x"),
        format!("{label}_y"),
        format!("{label}_z"),
    ])?;
    for (time, row) in timestamps.iter().zip(rows) {
        w.write_record(&[
            time.to_string(),
            row[0].to_string(),
            row[1].to_string(),
            row[2].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the drift trace: time, drift_x, drift_y, drift_z.
pub fn write_drift_csv(
    path: impl AsRef<Path>,
    timestamps: &[f64],
    drifts: &[DriftEstimate],
) -> Result<(), ErrorChainError> {
    if timestamps.len() != drifts.len() {
        return Err(ErrorChainError::BadChain {
            detail: format!(
                "{} timestamps for {} drift estimates",
                timestamps.len(),
                drifts.len()
            ),
        });
    }
    write_trace_csv(path, "drift", timestamps, drifts.iter().map(|d| d.drift))
}

/// Writes the compensation trace: time, offset_x, offset_y, offset_z.
pub fn write_offset_csv(
    path: impl AsRef<Path>,
    timestamps: &[f64],
    drifts: &[DriftEstimate],
) -> Result<(), ErrorChainError> {
    if timestamps.len() != drifts.len() {
        return Err(ErrorChainError::BadChain {
            detail: format!(
                "{} timestamps for {} drift estimates",
                timestamps.len(),
                drifts.len()
            ),
        });
    }
    write_trace_csv(
        path,
        "offset",
        timestamps,
        drifts.iter().map(compensation_offset),
    )
}
