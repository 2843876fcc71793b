//! Declarative network + simulation config, TOML on disk.
//!
//! One file carries the node list, adjacency (conduction edges),
//! boundary entries, source sites, the integration grid, and the
//! sampling ranges for run suites. The default 29-node machine is
//! embedded in the binary.

use std::path::Path;

use serde::Deserialize;

use super::{Bath, Convection, Radiation, SimConfig, SimError, Source, SuiteRanges, ThermalNetwork};
use crate::dataset::InitialConditions;

/// The built-in 29-sensor machine description.
pub const DEFAULT_MACHINE_TOML: &str = include_str!("../../config/machine29.toml");

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileRoot {
    dt: f64,
    steps: usize,
    #[serde(default = "default_record_every")]
    record_every: usize,
    #[serde(default)]
    rng_seed: u64,
    #[serde(default)]
    ranges: Option<FileRanges>,
    sensors: FileSensors,
    nodes: Vec<FileNode>,
    #[serde(default)]
    edges: Vec<FileEdge>,
    #[serde(default)]
    convection: Vec<FileConvection>,
    #[serde(default)]
    radiation: Vec<FileRadiation>,
    #[serde(default)]
    sources: Vec<FileSource>,
}

fn default_record_every() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum FileSensors {
    All(String),
    List(Vec<String>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileNode {
    id: String,
    capacitance: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileEdge {
    a: String,
    b: String,
    conductance: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConvection {
    node: String,
    area: f64,
    h: f64,
    bath: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileRadiation {
    node: String,
    area: f64,
    emissivity: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileSource {
    node: String,
    area: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileRanges {
    ambient_temp: (f64, f64),
    initial_temp: (f64, f64),
    film_coefficient: (f64, f64),
    heat_flux: (f64, f64),
}

/// Everything a config file describes: the network, the integration
/// settings (with default initial conditions), and suite sampling
/// ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct MachineConfig {
    pub network: ThermalNetwork,
    pub sim: SimConfig,
    pub ranges: SuiteRanges,
}

impl MachineConfig {
    /// The embedded 29-node default machine.
    pub fn default_machine() -> Self {
        Self::from_toml_str(DEFAULT_MACHINE_TOML)
            .expect("embedded machine config must parse")
    }

    pub fn from_toml_path(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| SimError::BadConfig {
            detail: format!("{}: {e}", path.as_ref().display()),
        })?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        let file: FileRoot = toml::from_str(text).map_err(|e| SimError::BadConfig {
            detail: e.to_string(),
        })?;

        let node_ids: Vec<String> = file.nodes.iter().map(|n| n.id.clone()).collect();
        let capacitance: Vec<f64> = file.nodes.iter().map(|n| n.capacitance).collect();
        let index = |id: &str| {
            node_ids
                .iter()
                .position(|n| n == id)
                .ok_or_else(|| SimError::BadConfig {
                    detail: format!("unknown node id {id:?}"),
                })
        };

        let mut edges = Vec::with_capacity(file.edges.len());
        for e in &file.edges {
            edges.push((index(&e.a)?, index(&e.b)?, e.conductance));
        }
        let mut convection = Vec::with_capacity(file.convection.len());
        for c in &file.convection {
            let bath = match c.bath.as_str() {
                "ambient" => Bath::Ambient,
                "ground" => Bath::Ground,
                other => {
                    return Err(SimError::BadConfig {
                        detail: format!("bath must be \"ambient\" or \"ground\", got {other:?}"),
                    })
                }
            };
            convection.push(Convection {
                node: index(&c.node)?,
                area: c.area,
                h: c.h,
                bath,
            });
        }
        let mut radiation = Vec::with_capacity(file.radiation.len());
        for r in &file.radiation {
            radiation.push(Radiation {
                node: index(&r.node)?,
                area: r.area,
                emissivity: r.emissivity,
            });
        }
        let mut sources = Vec::with_capacity(file.sources.len());
        for s in &file.sources {
            sources.push(Source {
                node: index(&s.node)?,
                area: s.area,
            });
        }
        let sensor_nodes = match &file.sensors {
            FileSensors::All(word) if word == "all" => (0..node_ids.len()).collect(),
            FileSensors::All(word) => {
                return Err(SimError::BadConfig {
                    detail: format!("sensors must be \"all\" or a node list, got {word:?}"),
                })
            }
            FileSensors::List(ids) => {
                let mut out = Vec::with_capacity(ids.len());
                for id in ids {
                    out.push(index(id)?);
                }
                out
            }
        };

        let n_sources = sources.len();
        let network = ThermalNetwork::new(
            node_ids,
            capacitance,
            edges,
            convection,
            radiation,
            sources,
            sensor_nodes,
        )?;

        let ranges = match file.ranges {
            Some(r) => SuiteRanges {
                ambient_temp: r.ambient_temp,
                initial_temp: r.initial_temp,
                film_coefficient: r.film_coefficient,
                heat_flux: r.heat_flux,
            },
            None => SuiteRanges::default(),
        };

        // Default conditions: quiescent midpoints of the ranges with
        // sources at the low end, so the config validates standalone.
        let mid = |(lo, hi): (f64, f64)| 0.5 * (lo + hi);
        let initial_conditions = InitialConditions {
            ambient_temp: mid(ranges.ambient_temp),
            ground_temp: InitialConditions::default().ground_temp,
            initial_system_temp: mid(ranges.initial_temp),
            heat_flux_magnitudes: vec![ranges.heat_flux.0; n_sources],
            film_coefficient: mid(ranges.film_coefficient),
        };
        let sim = SimConfig {
            dt: file.dt,
            steps: file.steps,
            record_every: file.record_every,
            initial_conditions,
            rng_seed: file.rng_seed,
        };
        sim.validate(&network)?;
        Ok(Self {
            network,
            sim,
            ranges,
        })
    }
}
