//! Generation configs (TOML) and self-contained scenario files (JSON).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::digraph::{DigraphFile, SensorDigraph};
use crate::error::{Error, Result};
use crate::netgen::{
    channel_pathloss, channel_rayleigh_with, delays_from_geometry, place_nodes, random_multi_root, random_qsc,
    random_sc, threshold_prune, DelayMatrix, DelayTable, NodeGeometry, RayleighConvention, ReferenceTopology,
};
use crate::sim::SimConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    /// Channels drawn on a random geometry (see `channel_mode`).
    Geometric,
    /// The three 14-node reference digraphs.
    Reference,
    RandomQsc,
    RandomSc,
    RandomMultiRoot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelMode {
    Rayleigh,
    /// Deterministic path loss with unit fading.
    Pathloss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DelayMode {
    None,
    /// `delay_steps * T_s` on every link.
    Uniform,
    /// Propagation delays; rescaled so the largest is `delay_steps * T_s`
    /// when `delay_steps` is given.
    Geometry,
}

fn default_eta() -> f64 {
    2.0
}
fn default_speed() -> f64 {
    1.0
}
fn default_side() -> f64 {
    1.0
}
fn default_horizon() -> usize {
    10_000
}
fn default_g_range() -> (f64, f64) {
    (1.0, 3.0)
}
fn default_weight_range() -> (f64, f64) {
    (0.5, 2.0)
}
fn default_extra() -> f64 {
    0.15
}
fn default_roots() -> usize {
    2
}

/// Input of `gen`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub seed: u64,
    pub n: usize,
    #[serde(rename = "D", default = "default_side")]
    pub d_side: f64,
    #[serde(rename = "T_s")]
    pub t_step: f64,
    #[serde(rename = "K")]
    pub k_gain: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// One value for all nodes or one per node.
    #[serde(default)]
    pub powers: Option<Vec<f64>>,
    #[serde(default)]
    pub threshold: f64,
    pub delay_mode: DelayMode,
    #[serde(default)]
    pub delay_steps: Option<f64>,
    #[serde(default = "default_speed")]
    pub speed: f64,
    pub topology: Topology,
    #[serde(default)]
    pub channel_mode: Option<ChannelMode>,
    #[serde(default)]
    pub rayleigh_convention: RayleighConvention,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub c_weights: Option<Vec<f64>>,
    #[serde(default)]
    pub g_values: Option<Vec<f64>>,
    /// Range for random forcing terms when `g_values` is absent.
    #[serde(default = "default_g_range")]
    pub g_range: (f64, f64),
    /// Link weight range for random topologies.
    #[serde(default = "default_weight_range")]
    pub weight_range: (f64, f64),
    /// Extra-link probability for random topologies.
    #[serde(default = "default_extra")]
    pub extra_links: f64,
    #[serde(default = "default_roots")]
    pub roots: usize,
    #[serde(default)]
    pub noise_std: f64,
}

impl GenConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: GenConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if self.topology == Topology::Reference && self.n != ReferenceTopology::NODES {
            return bad(format!(
                "reference topologies have {} nodes, got n = {}",
                ReferenceTopology::NODES,
                self.n
            ));
        }
        if !(self.t_step > 0.0) || !(self.k_gain > 0.0) {
            return bad("T_s and K must be positive".into());
        }
        if !(self.d_side > 0.0) || !(self.speed > 0.0) || !(self.eta > 0.0) {
            return bad("D, speed and eta must be positive".into());
        }
        if self.horizon == 0 {
            return bad("horizon must be positive".into());
        }
        if self.delay_mode == DelayMode::Uniform && self.delay_steps.is_none() {
            return bad("uniform delay mode needs delay_steps".into());
        }
        if let Some(s) = self.delay_steps {
            if !(s >= 0.0) {
                return bad(format!("delay_steps must be nonnegative, got {s}"));
            }
        }
        for (name, v) in [("c_weights", &self.c_weights), ("g_values", &self.g_values)] {
            if let Some(v) = v {
                if v.len() != self.n {
                    return bad(format!("{name} has {} entries for {} nodes", v.len(), self.n));
                }
            }
        }
        if let Some(p) = &self.powers {
            if p.len() != 1 && p.len() != self.n {
                return bad(format!("powers must have 1 or {} entries", self.n));
            }
        }
        Ok(())
    }

    fn powers_vec(&self) -> Vec<f64> {
        match &self.powers {
            None => vec![1.0; self.n],
            Some(p) if p.len() == 1 => vec![p[0]; self.n],
            Some(p) => p.clone(),
        }
    }

    /// One scenario per generated topology (three for `reference`).
    pub fn generate(&self) -> Result<Vec<Scenario>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let geo_seed: u64 = rng.random();
        let ch_seed: u64 = rng.random();
        let mut geom = place_nodes(self.n, self.d_side, geo_seed)?
            .with_powers(self.powers_vec())?
            .with_path_loss_exponent(self.eta)?
            .with_speed(self.speed)?;
        if self.delay_mode == DelayMode::Geometry {
            if let Some(steps) = self.delay_steps {
                if self.n >= 2 && steps > 0.0 {
                    geom.scale_to_max_delay(steps * self.t_step)?;
                }
            }
        }
        let delays = match self.delay_mode {
            DelayMode::None => DelayMatrix::zeros(self.n),
            DelayMode::Uniform => DelayMatrix::uniform(self.n, self.delay_steps.unwrap_or(0.0) * self.t_step)?,
            DelayMode::Geometry => delays_from_geometry(&geom),
        };

        let graphs: Vec<(String, SensorDigraph)> = match self.topology {
            Topology::Reference => ReferenceTopology::ALL
                .iter()
                .map(|t| (t.name().to_string(), t.digraph()))
                .collect(),
            Topology::Geometric => {
                let g = match self.channel_mode.unwrap_or(ChannelMode::Rayleigh) {
                    ChannelMode::Rayleigh => channel_rayleigh_with(&geom, ch_seed, self.rayleigh_convention),
                    ChannelMode::Pathloss => {
                        channel_pathloss(&geom, &nalgebra::DMatrix::from_element(self.n, self.n, 1.0))?
                    }
                };
                vec![("geometric".into(), threshold_prune(&g, self.threshold)?)]
            }
            Topology::RandomQsc => vec![(
                "random-qsc".into(),
                random_qsc(self.n, self.extra_links, self.weight_range, &mut rng),
            )],
            Topology::RandomSc => vec![(
                "random-sc".into(),
                random_sc(self.n, self.extra_links, self.weight_range, &mut rng),
            )],
            Topology::RandomMultiRoot => vec![(
                "random-multi-root".into(),
                random_multi_root(self.n, self.roots, self.extra_links, self.weight_range, &mut rng)?,
            )],
        };

        let g_values = match &self.g_values {
            Some(v) => v.clone(),
            None => (0..self.n)
                .map(|_| rng.random_range(self.g_range.0..=self.g_range.1))
                .collect(),
        };
        let sim = SimConfig {
            t_step: self.t_step,
            k_gain: self.k_gain,
            c_weights: self.c_weights.clone().unwrap_or_else(|| vec![1.0; self.n]),
            horizon: self.horizon,
            init: Default::default(),
            noise_std: self.noise_std,
            rng_seed: self.seed,
        };
        let keep_geometry = self.topology == Topology::Geometric || self.delay_mode == DelayMode::Geometry;
        Ok(graphs
            .into_iter()
            .map(|(name, g)| Scenario {
                schema: SCHEMA_VERSION,
                name,
                seed: self.seed,
                digraph: g.to_file(),
                delays: delays.to_table(),
                sim: sim.clone(),
                g_values: g_values.clone(),
                geometry: keep_geometry.then(|| geom.clone()),
            })
            .collect())
    }
}

/// Everything needed to run or predict one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    pub name: String,
    pub seed: u64,
    pub digraph: DigraphFile,
    pub delays: DelayTable,
    pub sim: SimConfig,
    pub g_values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<NodeGeometry>,
}

impl Scenario {
    pub fn new(name: &str, g: &SensorDigraph, delays: &DelayMatrix, sim: SimConfig, g_values: Vec<f64>) -> Self {
        Self {
            schema: SCHEMA_VERSION,
            name: name.into(),
            seed: sim.rng_seed,
            digraph: g.to_file(),
            delays: delays.to_table(),
            sim,
            g_values,
            geometry: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::Parse(format!(
                "unsupported scenario schema {} (expected {SCHEMA_VERSION})",
                self.schema
            )));
        }
        let (g, d) = self.build()?;
        if d.n() != g.n() {
            return Err(Error::Dimension(format!(
                "delays for {} nodes, digraph has {}",
                d.n(),
                g.n()
            )));
        }
        if self.g_values.len() != g.n() {
            return Err(Error::Dimension(format!(
                "{} forcing terms for {} nodes",
                self.g_values.len(),
                g.n()
            )));
        }
        self.sim.validate(g.n())
    }

    pub fn digraph(&self) -> Result<SensorDigraph> {
        SensorDigraph::from_file(&self.digraph)
    }

    pub fn delays(&self) -> Result<DelayMatrix> {
        DelayMatrix::from_table(&self.delays)
    }

    pub fn build(&self) -> Result<(SensorDigraph, DelayMatrix)> {
        Ok((self.digraph()?, self.delays()?))
    }
}
