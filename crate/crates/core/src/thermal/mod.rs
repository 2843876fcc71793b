//! Lumped thermal-network generator for synthetic machine-tool runs.
//!
//! The machine is a graph of thermal capacitances joined by
//! conductances, with convective film exchange to the ambient air (or
//! to the ground under the bed), grey-body radiation to the
//! surroundings, and constant imposed heat-flux sources. Integration is
//! explicit Euler with a checked stability bound:
//!
//! ```text
//! C_i (T_i' − T_i)/dt = Σ_j G_ij (T_j − T_i)
//!                       − h_i A_i (T_i − T_bath)
//!                       − ε_i ς A_i (T_i⁴ − T_surr⁴)
//!                       + Q_int,i
//! ```
//!
//! Internal math runs in f64; exported series are generic over the
//! crate scalar.

pub mod config;

pub use config::MachineConfig;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::{DatasetError, InitialConditions, NodeTimeSeries, Quantity};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Stefan–Boltzmann constant, W/(m²·K⁴).
pub const STEFAN_BOLTZMANN: f64 = 5.67e-8;

/// Reference air film coefficient, W/(m²·K). Ambient convection
/// entries store their h at this film coefficient and scale linearly
/// with the per-run value.
pub const FILM_REFERENCE: f64 = 10.0;

/// Temperature used to linearize radiation in the stability bound;
/// above any sane machine temperature, so the bound is conservative.
const STABILITY_LINEARIZATION_K: f64 = 400.0;

/// Runaway guard: any node beyond this magnitude aborts the run.
const TEMP_SANITY_K: f64 = 1.0e4;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unstable at step {step}: node {node} reached {temp} K")]
    Unstable { step: usize, node: usize, temp: f64 },
    #[error("non-finite temperature at step {step}, node {node}")]
    NonFinite { step: usize, node: usize },
    #[error("dt = {dt} s exceeds the explicit stability bound {bound} s")]
    StepExceedsStabilityBound { dt: f64, bound: f64 },
    #[error("network defines {expected} sources but initial conditions carry {found} magnitudes")]
    SourceCountMismatch { expected: usize, found: usize },
    #[error("invalid network: {detail}")]
    BadNetwork { detail: String },
    #[error("invalid sim config: {detail}")]
    BadConfig { detail: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Which constant-temperature bath a convection entry exchanges with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bath {
    /// Ambient air at T∞; the coefficient scales with the run's film
    /// coefficient (h_eff = h · film/[`FILM_REFERENCE`]).
    Ambient,
    /// Ground contact under the bed; fixed coefficient, fixed
    /// ground temperature.
    Ground,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Convection {
    pub node: usize,
    pub area: f64,
    pub h: f64,
    pub bath: Bath,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Radiation {
    pub node: usize,
    pub area: f64,
    pub emissivity: f64,
}

/// Site of a constant imposed heat flux; the magnitude (W/m²) comes
/// from the run's initial conditions, so Q = magnitude · area.
#[derive(Debug, Clone, PartialEq)]
pub struct Source {
    pub node: usize,
    pub area: f64,
}

/// Validated lumped thermal network.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermalNetwork {
    node_ids: Vec<String>,
    capacitance: Vec<f64>,
    /// Undirected conduction edges (i < j, G in W/K).
    edges: Vec<(usize, usize, f64)>,
    convection: Vec<Convection>,
    radiation: Vec<Radiation>,
    sources: Vec<Source>,
    sensor_nodes: Vec<usize>,
}

impl ThermalNetwork {
    pub fn new(
        node_ids: Vec<String>,
        capacitance: Vec<f64>,
        edges: Vec<(usize, usize, f64)>,
        convection: Vec<Convection>,
        radiation: Vec<Radiation>,
        sources: Vec<Source>,
        sensor_nodes: Vec<usize>,
    ) -> Result<Self, SimError> {
        let n = node_ids.len();
        let bad = |detail: String| Err(SimError::BadNetwork { detail });
        if n < 2 {
            return bad(format!("need at least 2 nodes, got {n}"));
        }
        if capacitance.len() != n {
            return bad(format!("{} capacitances for {n} nodes", capacitance.len()));
        }
        if let Some(i) = capacitance.iter().position(|&c| !(c.is_finite() && c > 0.0)) {
            return bad(format!("capacitance of node {i} must be > 0"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for &(a, b, g) in &edges {
            if a >= n || b >= n {
                return bad(format!("edge ({a},{b}) references missing node"));
            }
            if a == b {
                return bad(format!("self-loop on node {a}"));
            }
            if !(g.is_finite() && g >= 0.0) {
                return bad(format!("edge ({a},{b}) conductance must be >= 0, got {g}"));
            }
            let key = (a.min(b), a.max(b));
            if !seen.insert(key) {
                return bad(format!("duplicate edge between {} and {}", key.0, key.1));
            }
        }
        for c in &convection {
            if c.node >= n {
                return bad(format!("convection on missing node {}", c.node));
            }
            if !(c.area.is_finite() && c.area >= 0.0 && c.h.is_finite() && c.h >= 0.0) {
                return bad(format!("convection on node {} has bad area/h", c.node));
            }
        }
        for r in &radiation {
            if r.node >= n {
                return bad(format!("radiation on missing node {}", r.node));
            }
            if !(0.0..=1.0).contains(&r.emissivity) || !(r.area.is_finite() && r.area >= 0.0) {
                return bad(format!("radiation on node {} has bad area/emissivity", r.node));
            }
        }
        for s in &sources {
            if s.node >= n {
                return bad(format!("source on missing node {}", s.node));
            }
            if !(s.area.is_finite() && s.area > 0.0) {
                return bad(format!("source on node {} must have area > 0", s.node));
            }
        }
        if sensor_nodes.len() < 2 {
            return bad("need at least 2 sensor nodes".into());
        }
        let mut sensor_seen = std::collections::BTreeSet::new();
        for &s in &sensor_nodes {
            if s >= n {
                return bad(format!("sensor references missing node {s}"));
            }
            if !sensor_seen.insert(s) {
                return bad(format!("duplicate sensor node {s}"));
            }
        }
        Ok(Self {
            node_ids,
            capacitance,
            edges,
            convection,
            radiation,
            sources,
            sensor_nodes,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.node_ids.iter().position(|n| n == id)
    }

    pub fn capacitance(&self) -> &[f64] {
        &self.capacitance
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn sources(&self) -> &[Source] {
        &self.sources
    }

    pub fn sensor_nodes(&self) -> &[usize] {
        &self.sensor_nodes
    }

    fn effective_h(&self, c: &Convection, ics: &InitialConditions) -> f64 {
        match c.bath {
            Bath::Ambient => c.h * ics.film_coefficient / FILM_REFERENCE,
            Bath::Ground => c.h,
        }
    }

    fn bath_temp(&self, c: &Convection, ics: &InitialConditions) -> f64 {
        match c.bath {
            Bath::Ambient => ics.ambient_temp,
            Bath::Ground => ics.ground_temp,
        }
    }

    /// Net power into every node: conduction + sources − convection −
    /// radiation. The surroundings for radiation are at ambient
    /// temperature.
    pub fn node_net_power(&self, state: &[f64], ics: &InitialConditions) -> Vec<f64> {
        debug_assert_eq!(state.len(), self.n_nodes());
        let mut power = vec![0.0; self.n_nodes()];
        for &(a, b, g) in &self.edges {
            let flow = g * (state[b] - state[a]);
            power[a] += flow;
            power[b] -= flow;
        }
        for c in &self.convection {
            let h = self.effective_h(c, ics);
            power[c.node] -= h * c.area * (state[c.node] - self.bath_temp(c, ics));
        }
        let t_surr = ics.ambient_temp;
        for r in &self.radiation {
            let ts = state[r.node];
            power[r.node] -=
                r.emissivity * STEFAN_BOLTZMANN * r.area * (ts.powi(4) - t_surr.powi(4));
        }
        for (s, &q) in self.sources.iter().zip(&ics.heat_flux_magnitudes) {
            power[s.node] += q * s.area;
        }
        power
    }

    /// One explicit Euler step of the network ODE.
    pub fn step(
        &self,
        state: &[f64],
        ics: &InitialConditions,
        dt: f64,
    ) -> Result<Vec<f64>, SimError> {
        let power = self.node_net_power(state, ics);
        let mut next = Vec::with_capacity(state.len());
        for (i, (&t, &p)) in state.iter().zip(&power).enumerate() {
            let t_next = t + dt / self.capacitance[i] * p;
            if !t_next.is_finite() {
                return Err(SimError::NonFinite { step: 0, node: i });
            }
            if t_next.abs() > TEMP_SANITY_K {
                return Err(SimError::Unstable {
                    step: 0,
                    node: i,
                    temp: t_next,
                });
            }
            next.push(t_next);
        }
        Ok(next)
    }

    /// Instantaneous lossy balance: total generation minus total
    /// dissipation (convective + radiative). Conduction is internal and
    /// cancels, so this equals Σ_i C_i·dT_i/dt.
    pub fn heat_balance(&self, state: &[f64], ics: &InitialConditions) -> f64 {
        self.node_net_power(state, ics).iter().sum()
    }

    /// Largest stable explicit-Euler step: min_i C_i / (Σ_j G_ij +
    /// Σ h·A + Σ 4εςA·T³) with radiation linearized at a conservative
    /// temperature.
    pub fn stability_bound(&self, ics: &InitialConditions) -> f64 {
        let mut loss = vec![0.0; self.n_nodes()];
        for &(a, b, g) in &self.edges {
            loss[a] += g;
            loss[b] += g;
        }
        for c in &self.convection {
            loss[c.node] += self.effective_h(c, ics) * c.area;
        }
        for r in &self.radiation {
            loss[r.node] += 4.0
                * r.emissivity
                * STEFAN_BOLTZMANN
                * r.area
                * STABILITY_LINEARIZATION_K.powi(3);
        }
        self.capacitance
            .iter()
            .zip(&loss)
            .map(|(&c, &l)| if l > 0.0 { c / l } else { f64::INFINITY })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Integration settings for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Step size, seconds.
    pub dt: f64,
    /// Number of Euler steps; the exported series has `steps/record_every + 1`
    /// rows including the initial state.
    pub steps: usize,
    /// Record every k-th step (1 = every step).
    pub record_every: usize,
    pub initial_conditions: InitialConditions,
    pub rng_seed: u64,
}

impl SimConfig {
    pub fn validate(&self, network: &ThermalNetwork) -> Result<(), SimError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(SimError::BadConfig {
                detail: format!("dt must be > 0, got {}", self.dt),
            });
        }
        if self.steps == 0 || self.record_every == 0 {
            return Err(SimError::BadConfig {
                detail: "steps and record_every must be >= 1".into(),
            });
        }
        self.initial_conditions.validate().map_err(SimError::from)?;
        let expected = network.sources.len();
        let found = self.initial_conditions.heat_flux_magnitudes.len();
        if expected != found {
            return Err(SimError::SourceCountMismatch { expected, found });
        }
        let bound = network.stability_bound(&self.initial_conditions);
        if self.dt >= bound {
            return Err(SimError::StepExceedsStabilityBound {
                dt: self.dt,
                bound,
            });
        }
        Ok(())
    }
}

/// One generated run: sensor temperatures plus the paired net
/// heat-flux-density series on the same time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SimRun<F> {
    pub temperature: NodeTimeSeries<F>,
    pub heat_flux: NodeTimeSeries<F>,
}

/// Integrates the network and exports the sensor nodes.
///
/// The flux series holds each sensor's net power divided by its total
/// convection area (W/m²; unit area for nodes without convective
/// surface). Deterministic: no noise is injected.
pub fn simulate_run<F: Scalar>(
    network: &ThermalNetwork,
    config: &SimConfig,
    run_id: &str,
) -> Result<SimRun<F>, SimError> {
    config.validate(network)?;
    let ics = &config.initial_conditions;
    let n = network.n_nodes();

    let mut ref_area = vec![0.0; n];
    for c in &network.convection {
        ref_area[c.node] += c.area;
    }
    for a in &mut ref_area {
        if *a == 0.0 {
            *a = 1.0;
        }
    }

    let mut state = vec![ics.initial_system_temp; n];
    let rows = config.steps / config.record_every + 1;
    let sensors = &network.sensor_nodes;
    let mut timestamps = Vec::with_capacity(rows);
    let mut temp_data = Vec::with_capacity(rows * sensors.len());
    let mut flux_data = Vec::with_capacity(rows * sensors.len());

    let mut record = |step_idx: usize, state: &[f64]| {
        timestamps.push(F::of(step_idx as f64 * config.dt));
        let power = network.node_net_power(state, ics);
        for &s in sensors {
            temp_data.push(F::of(state[s]));
            flux_data.push(F::of(power[s] / ref_area[s]));
        }
    };

    record(0, &state);
    for step_idx in 1..=config.steps {
        state = network.step(&state, ics, config.dt).map_err(|e| match e {
            SimError::Unstable { node, temp, .. } => SimError::Unstable {
                step: step_idx,
                node,
                temp,
            },
            SimError::NonFinite { node, .. } => SimError::NonFinite {
                step: step_idx,
                node,
            },
            other => other,
        })?;
        if step_idx % config.record_every == 0 {
            record(step_idx, &state);
        }
    }

    let sensor_ids: Vec<String> = sensors
        .iter()
        .map(|&s| network.node_ids[s].clone())
        .collect();
    let rows = timestamps.len();
    let temperature = NodeTimeSeries::new(
        run_id,
        Quantity::Temperature,
        timestamps.clone(),
        Tensor::matrix(rows, sensor_ids.len(), temp_data),
        sensor_ids.clone(),
        ics.clone(),
    )?;
    let heat_flux = NodeTimeSeries::new(
        run_id,
        Quantity::HeatFlux,
        timestamps,
        Tensor::matrix(rows, sensor_ids.len(), flux_data),
        sensor_ids,
        ics.clone(),
    )?;
    Ok(SimRun {
        temperature,
        heat_flux,
    })
}

/// Uniform sampling ranges for per-run operating conditions.
/// Ground temperature is fixed; runs differ only in the conditions
/// listed here.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteRanges {
    /// Ambient air temperature T∞, kelvin.
    pub ambient_temp: (f64, f64),
    /// Uniform initial system temperature, kelvin.
    pub initial_temp: (f64, f64),
    /// Air film coefficient, W/(m²·K).
    pub film_coefficient: (f64, f64),
    /// Constant source magnitude per source site, W/m².
    pub heat_flux: (f64, f64),
}

impl Default for SuiteRanges {
    fn default() -> Self {
        Self {
            ambient_temp: (288.15, 303.15),
            initial_temp: (290.15, 305.15),
            film_coefficient: (5.0, 25.0),
            heat_flux: (100.0, 1500.0),
        }
    }
}

/// Generates `n_runs` runs whose initial conditions are sampled from
/// `ranges`; everything else (network, grid, ground temperature) is
/// shared. Run ids are `RUN1..RUNn`. Reproducible per seed.
pub fn make_run_suite<F: Scalar>(
    network: &ThermalNetwork,
    base: &SimConfig,
    ranges: &SuiteRanges,
    n_runs: usize,
    rng_seed: u64,
) -> Result<Vec<SimRun<F>>, SimError> {
    assert!(n_runs >= 1, "n_runs must be >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut runs = Vec::with_capacity(n_runs);
    for i in 0..n_runs {
        let sample = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
            if lo == hi {
                lo
            } else {
                rng.gen_range(lo..hi)
            }
        };
        let ics = InitialConditions {
            ambient_temp: sample(&mut rng, ranges.ambient_temp),
            ground_temp: base.initial_conditions.ground_temp,
            initial_system_temp: sample(&mut rng, ranges.initial_temp),
            heat_flux_magnitudes: (0..network.sources.len())
                .map(|_| sample(&mut rng, ranges.heat_flux))
                .collect(),
            film_coefficient: sample(&mut rng, ranges.film_coefficient),
        };
        let config = SimConfig {
            initial_conditions: ics,
            rng_seed: rng_seed.wrapping_add(i as u64),
            ..base.clone()
        };
        runs.push(simulate_run(network, &config, &format!("RUN{}", i + 1))?);
    }
    Ok(runs)
}
