//! Correlation-based node reduction.
//!
//! Highly correlated sensor nodes carry redundant information: when
//! |ρ_kj| exceeds a threshold τ, node k can be dropped and later
//! reconstructed from its retained parent j by the affine map
//! `node_k = m·node_j + b` with `m = ρ_kj·σ_k/σ_j` and
//! `b = μ_k − m·μ_j`. The retained set is chosen by a greedy sweep in
//! ascending node index; parents are the argmax of |ρ| over the final
//! retained set. Statistics are fitted on training data only.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::NodeTimeSeries;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("every node is degenerate; nothing can anchor a plan")]
    AllDegenerate,
    #[error("expected {expected} retained columns, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("threshold must lie in (0,1), got {tau}")]
    BadThreshold { tau: f64 },
    #[error("runs disagree on node ids: {detail}")]
    NodeMismatch { detail: String },
    #[error("correlation matrix is malformed: {detail}")]
    BadMatrix { detail: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("plan serialization: {0}")]
    Json(#[from] serde_json::Error),
}

/// Pearson correlations plus the per-node moments they were computed
/// from (population 1/T convention). A degenerate node (σ = 0) has
/// zero correlation everywhere, including its own diagonal, and is
/// flagged.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    node_ids: Vec<String>,
    rho: Vec<f64>,
    mean: Vec<f64>,
    std: Vec<f64>,
    degenerate: Vec<bool>,
}

impl CorrelationMatrix {
    /// Assembles a matrix from precomputed parts, validating symmetry
    /// and bounds. Mostly useful for constructing exact test cases.
    pub fn from_parts(
        node_ids: Vec<String>,
        rho: Vec<f64>,
        mean: Vec<f64>,
        std: Vec<f64>,
        degenerate: Vec<bool>,
    ) -> Result<Self, SelectError> {
        let d = node_ids.len();
        let bad = |detail: String| Err(SelectError::BadMatrix { detail });
        if rho.len() != d * d || mean.len() != d || std.len() != d || degenerate.len() != d {
            return bad(format!("inconsistent dimensions for d = {d}"));
        }
        for k in 0..d {
            for l in 0..d {
                let v = rho[k * d + l];
                if (v - rho[l * d + k]).abs() > 1e-12 {
                    return bad(format!("not symmetric at ({k},{l})"));
                }
                if v.abs() > 1.0 + 1e-12 {
                    return bad(format!("|rho| > 1 at ({k},{l}): {v}"));
                }
            }
            let expect_diag = if degenerate[k] { 0.0 } else { 1.0 };
            if (rho[k * d + k] - expect_diag).abs() > 1e-12 {
                return bad(format!("diagonal of node {k} must be {expect_diag}"));
            }
        }
        Ok(Self {
            node_ids,
            rho,
            mean,
            std,
            degenerate,
        })
    }

    pub fn dim(&self) -> usize {
        self.node_ids.len()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn rho(&self, k: usize, l: usize) -> f64 {
        self.rho[k * self.dim() + l]
    }

    pub fn mean(&self, k: usize) -> f64 {
        self.mean[k]
    }

    pub fn std(&self, k: usize) -> f64 {
        self.std[k]
    }

    pub fn is_degenerate(&self, k: usize) -> bool {
        self.degenerate[k]
    }
}

/// Correlations of one series' columns.
pub fn pearson_matrix<F: Scalar>(series: &NodeTimeSeries<F>) -> CorrelationMatrix {
    pearson_from_values(series.values(), series.node_ids().to_vec())
}

/// Correlations of a bare `[T, d]` matrix, for data that has already
/// been normalized or pooled out of its series wrapper.
pub fn pearson_matrix_values<F: Scalar>(
    values: &Tensor<F>,
    node_ids: &[String],
) -> CorrelationMatrix {
    assert_eq!(
        values.cols(),
        node_ids.len(),
        "node id count must match matrix width"
    );
    pearson_from_values(values, node_ids.to_vec())
}

/// Correlations pooled over several runs (the union of their rows).
/// All runs must list identical nodes in identical order.
pub fn pearson_matrix_runs<F: Scalar>(
    runs: &[&NodeTimeSeries<F>],
) -> Result<CorrelationMatrix, SelectError> {
    assert!(!runs.is_empty(), "need at least one run");
    let first = runs[0];
    for run in &runs[1..] {
        if run.node_ids() != first.node_ids() {
            return Err(SelectError::NodeMismatch {
                detail: format!(
                    "{:?} vs {:?}",
                    first.node_ids(),
                    run.node_ids()
                ),
            });
        }
    }
    let mut pooled = first.values().clone();
    for run in &runs[1..] {
        pooled = pooled.concat_rows(run.values());
    }
    Ok(pearson_from_values(&pooled, first.node_ids().to_vec()))
}

fn pearson_from_values<F: Scalar>(values: &Tensor<F>, node_ids: Vec<String>) -> CorrelationMatrix {
    let (t, d) = (values.rows(), values.cols());
    assert!(t >= 2, "need at least 2 rows for correlations");
    let inv_t = 1.0 / t as f64;
    let mut mean = vec![0.0; d];
    for r in 0..t {
        for (c, m) in mean.iter_mut().enumerate() {
            *m += values.get2(r, c).to64();
        }
    }
    for m in &mut mean {
        *m *= inv_t;
    }
    // Centered second moments, population convention.
    let mut cov = vec![0.0; d * d];
    for r in 0..t {
        let centered: Vec<f64> = (0..d).map(|c| values.get2(r, c).to64() - mean[c]).collect();
        for k in 0..d {
            for l in k..d {
                cov[k * d + l] += centered[k] * centered[l];
            }
        }
    }
    for v in &mut cov {
        *v *= inv_t;
    }
    let std: Vec<f64> = (0..d).map(|k| cov[k * d + k].sqrt()).collect();
    // A constant column leaves roundoff residue ~1e-13 after centering,
    // so degeneracy is a relative test, not an exact zero test.
    let degenerate: Vec<bool> = std
        .iter()
        .zip(&mean)
        .map(|(&s, &m)| s <= 1e-12 * m.abs().max(1.0))
        .collect();
    let mut rho = vec![0.0; d * d];
    for k in 0..d {
        rho[k * d + k] = if degenerate[k] { 0.0 } else { 1.0 };
        for l in k + 1..d {
            let v = if degenerate[k] || degenerate[l] {
                0.0
            } else {
                cov[k * d + l] / (std[k] * std[l])
            };
            rho[k * d + l] = v;
            rho[l * d + k] = v;
        }
    }
    CorrelationMatrix {
        node_ids,
        rho,
        mean,
        std,
        degenerate,
    }
}

/// Affine reconstruction of one discarded node from its parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParentMap {
    /// Index of the retained parent node (into the full node list).
    pub parent: usize,
    pub slope: f64,
    pub intercept: f64,
}

/// Which nodes to keep, and how to rebuild the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionPlan {
    pub tau: f64,
    pub node_ids: Vec<String>,
    /// Retained node indices, ascending.
    pub retained: Vec<usize>,
    /// Discarded node index → its reconstruction map.
    pub parents: BTreeMap<usize, ParentMap>,
    /// Degenerate nodes (always retained, never parents of anything
    /// and never reconstructed).
    pub degenerate: Vec<usize>,
    /// Human-readable provenance: which data the statistics came from.
    pub fitted_on: String,
}

/// Greedy sweep in ascending index: node k is retained unless an
/// already-retained node j has |ρ_kj| > τ. Parents are then assigned
/// as the argmax of |ρ_kj| over the **final** retained set (ties to
/// the lowest index). Degenerate nodes are always retained.
pub fn build_plan(
    corr: &CorrelationMatrix,
    tau: f64,
    fitted_on: impl Into<String>,
) -> Result<SelectionPlan, SelectError> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(SelectError::BadThreshold { tau });
    }
    let d = corr.dim();
    if (0..d).all(|k| corr.is_degenerate(k)) {
        return Err(SelectError::AllDegenerate);
    }
    let mut retained: Vec<usize> = Vec::new();
    let mut discarded: Vec<usize> = Vec::new();
    for k in 0..d {
        if corr.is_degenerate(k) {
            retained.push(k);
            continue;
        }
        let redundant = retained
            .iter()
            .any(|&j| !corr.is_degenerate(j) && corr.rho(k, j).abs() > tau);
        if redundant {
            discarded.push(k);
        } else {
            retained.push(k);
        }
    }
    let mut parents = BTreeMap::new();
    for &k in &discarded {
        let parent = retained
            .iter()
            .copied()
            .filter(|&j| !corr.is_degenerate(j))
            .max_by(|&a, &b| {
                corr.rho(k, a)
                    .abs()
                    .partial_cmp(&corr.rho(k, b).abs())
                    .expect("correlations are finite")
                    // On a tie keep the lower index: `max_by` returns the
                    // later element of equal pairs, so order the earlier
                    // one as greater.
                    .then(b.cmp(&a))
            })
            .expect("at least one non-degenerate retained node exists");
        debug_assert!(corr.rho(k, parent).abs() > tau);
        let slope = corr.rho(k, parent) * corr.std(k) / corr.std(parent);
        let intercept = corr.mean(k) - slope * corr.mean(parent);
        parents.insert(
            k,
            ParentMap {
                parent,
                slope,
                intercept,
            },
        );
    }
    Ok(SelectionPlan {
        tau,
        node_ids: corr.node_ids().to_vec(),
        retained,
        parents,
        degenerate: (0..d).filter(|&k| corr.is_degenerate(k)).collect(),
        fitted_on: fitted_on.into(),
    })
}

impl SelectionPlan {
    /// Full node count d.
    pub fn dim(&self) -> usize {
        self.node_ids.len()
    }

    /// Retained node count J.
    pub fn n_retained(&self) -> usize {
        self.retained.len()
    }

    pub fn retained_ids(&self) -> Vec<String> {
        self.retained
            .iter()
            .map(|&k| self.node_ids[k].clone())
            .collect()
    }

    /// Projects a full `[T, d]` matrix onto the retained columns
    /// `[T, J]`, in retained order.
    pub fn project<F: Scalar>(&self, full: &Tensor<F>) -> Result<Tensor<F>, SelectError> {
        if full.cols() != self.dim() {
            return Err(SelectError::DimensionMismatch {
                expected: self.dim(),
                found: full.cols(),
            });
        }
        let t = full.rows();
        let mut data = Vec::with_capacity(t * self.retained.len());
        for r in 0..t {
            for &k in &self.retained {
                data.push(full.get2(r, k));
            }
        }
        Ok(Tensor::matrix(t, self.retained.len(), data))
    }

    /// Rebuilds the full `[T, d]` matrix from retained values `[T, J]`:
    /// retained nodes are copied through, discarded nodes filled by
    /// their affine parent maps.
    pub fn reconstruct<F: Scalar>(&self, retained: &Tensor<F>) -> Result<Tensor<F>, SelectError> {
        if retained.cols() != self.retained.len() {
            return Err(SelectError::DimensionMismatch {
                expected: self.retained.len(),
                found: retained.cols(),
            });
        }
        let t = retained.rows();
        let d = self.dim();
        // Column of each retained node inside the reduced matrix.
        let mut reduced_col = vec![usize::MAX; d];
        for (j, &k) in self.retained.iter().enumerate() {
            reduced_col[k] = j;
        }
        let mut out = Tensor::zeros(&[t, d]);
        for r in 0..t {
            for &k in &self.retained {
                out.set2(r, k, retained.get2(r, reduced_col[k]));
            }
            for (&k, map) in &self.parents {
                let parent_value = retained.get2(r, reduced_col[map.parent]);
                let v = F::of(map.slope) * parent_value + F::of(map.intercept);
                out.set2(r, k, v);
            }
        }
        Ok(out)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<(), SelectError> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self, SelectError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}
