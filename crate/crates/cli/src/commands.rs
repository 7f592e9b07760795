use std::fs;
use std::io::BufWriter;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use selfsync::montecarlo::{run_montecarlo, MonteCarloConfig};
use selfsync::protocols::{gamma_estimation_protocol, predict_clusters, two_step_unbias, Probe};
use selfsync::scenario::{GenConfig, Scenario};
use selfsync::spectral::{cluster_gammas, empirical_rate, gamma_left_eigenvector, rate_kappa_bound, rate_no_delay};
use selfsync::{
    detect_sync, simulate, ConnectivityClass, Error, Normalization, PassMode, SensorDigraph, SimConfig, SyncOptions,
    SyncTolerance,
};

use crate::report::{Comparison, Digest, InspectReport, MonteCarloFile, Rates, RunReport, REPORT_SCHEMA};
use crate::{Mode, Passes, RunArgs};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_MALFORMED: u8 = 2;
pub const EXIT_NOT_SYNCHRONIZED: u8 = 3;

pub fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(
            Error::Parse(_)
            | Error::InvalidParameter(_)
            | Error::Dimension(_)
            | Error::NotSquare { .. }
            | Error::NegativeWeight { .. }
            | Error::NonFiniteWeight { .. }
            | Error::SelfLoop { .. },
        ) => EXIT_MALFORMED,
        Some(Error::NotSynchronized { .. } | Error::NotQuasiStronglyConnected { .. } | Error::NoSingleRoot { .. }) => {
            EXIT_NOT_SYNCHRONIZED
        }
        _ => EXIT_FAILURE,
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = read(path)?;
    Scenario::from_json(&text).with_context(|| format!("invalid scenario {}", path.display()))
}

pub fn gen(config: &Path, dir: &Path, seed: Option<u64>) -> Result<u8> {
    let text = read(config)?;
    let mut cfg = GenConfig::from_toml(&text).with_context(|| format!("invalid config {}", config.display()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let scenarios = cfg.generate()?;
    out_dir(dir)?;
    for s in &scenarios {
        let file = |suffix: &str| dir.join(format!("{}{suffix}", s.name));
        fs::write(file(".json"), s.to_json() + "\n")?;
        write_json(&file(".digraph.json"), &s.digraph)?;
        write_json(&file(".delays.json"), &s.delays)?;
        if let Some(geom) = &s.geometry {
            write_json(&file(".geometry.json"), geom)?;
        }
        println!("{}", file(".json").display());
    }
    Ok(EXIT_OK)
}

/// Rate figures that need no simulation, on the gain-scaled Laplacian.
fn static_rates(g: &SensorDigraph, sim: &SimConfig) -> Rates {
    let l = g.laplacian().row_scaled(&sim.gains());
    let scc = g.scc_decompose();
    let kappa_bound = if scc.class == ConnectivityClass::StronglyConnected && g.n() > 1 {
        gamma_left_eigenvector(&l, &scc, Normalization::InfNormOne)
            .and_then(|gm| rate_kappa_bound(&l, &gm))
            .ok()
    } else {
        None
    };
    Rates {
        no_delay: rate_no_delay(&l).ok(),
        kappa_bound,
        empirical: None,
    }
}

pub fn run(a: &RunArgs) -> Result<u8> {
    let mut s = load_scenario(&a.scenario)?;
    if let Some(seed) = a.seed {
        s.sim.rng_seed = seed;
    }
    if let Some(h) = a.horizon {
        s.sim.horizon = h;
    }
    if let Some(tol) = a.tol {
        if tol.is_nan() || tol <= 0.0 {
            return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")).into());
        }
    }
    s.validate()?;
    let (g, d) = s.build()?;
    let opts = SyncOptions {
        tol: a.tol.map_or(SyncTolerance::default(), SyncTolerance::Relative),
        window: a.window,
        ..Default::default()
    };
    out_dir(&a.out_dir)?;
    let scc = g.scc_decompose();
    let mut report = RunReport {
        schema: REPORT_SCHEMA,
        mode: a.mode.name().into(),
        scenario: Digest::of(&s, scc.class, g.edge_count(), d.tau_max()),
        global: false,
        prediction: None,
        measured: None,
        comparisons: vec![],
        rates: static_rates(&g, &s.sim),
        unbias: None,
        traces: vec![],
    };
    let mut code = EXIT_OK;
    match a.mode {
        Mode::Simulate => {
            let traj = simulate(&g, &d, &s.sim, &s.g_values)?;
            let sync = detect_sync(&traj, &opts);
            // the discrete run realizes the delays rounded to whole steps
            let pred = predict_clusters(&g, &d.quantized(s.sim.t_step), &s.sim, &s.g_values)?;
            report.comparisons = pred
                .clusters
                .iter()
                .map(|p| {
                    let measured = sync
                        .cluster_of(p.nodes[0])
                        .filter(|c| p.nodes.iter().all(|i| c.nodes.contains(i)))
                        .map(|c| c.scalar());
                    Comparison {
                        nodes: p.nodes.clone(),
                        predicted: p.omega_star,
                        measured,
                        rel_err: measured.map(|m| (m - p.omega_star).abs() / p.omega_star.abs()),
                    }
                })
                .collect();
            if let (true, Some(w)) = (sync.global, pred.omega_star) {
                report.rates.empirical = empirical_rate(&traj, &vec![w; g.n()], sync.tolerance).ok();
            }
            let trace = "trace.csv";
            let file = fs::File::create(a.out_dir.join(trace))?;
            traj.write_csv(BufWriter::new(file), a.every)?;
            report.traces.push(trace.into());
            report.global = sync.global;
            if !sync.settled() {
                code = EXIT_NOT_SYNCHRONIZED;
            }
            report.prediction = Some(pred);
            report.measured = Some(sync);
        }
        Mode::Predict => {
            let pred = predict_clusters(&g, &d, &s.sim, &s.g_values)?;
            report.comparisons = pred
                .clusters
                .iter()
                .map(|p| Comparison {
                    nodes: p.nodes.clone(),
                    predicted: p.omega_star,
                    measured: None,
                    rel_err: None,
                })
                .collect();
            report.global = pred.global;
            report.prediction = Some(pred);
        }
        Mode::Unbias2 | Mode::GammaProtocol => {
            let pass = match a.passes {
                Passes::Simulate => PassMode::Simulate(opts),
                Passes::Predict => PassMode::Predict,
            };
            let outcome = if a.mode == Mode::Unbias2 {
                two_step_unbias(&g, &d, &s.sim, &s.g_values, &pass)
            } else {
                gamma_estimation_protocol(&g, &d, &s.sim, &s.g_values, &pass, Probe::RootComponent)
            };
            match outcome {
                Ok(u) => {
                    report.global = true;
                    report.unbias = Some(u);
                }
                Err(
                    e @ (Error::NotSynchronized { .. }
                    | Error::NotQuasiStronglyConnected { .. }
                    | Error::NoSingleRoot { .. }),
                ) => {
                    eprintln!("protocol did not complete: {e}");
                    code = EXIT_NOT_SYNCHRONIZED;
                }
                Err(e) => return Err(e.into()),
            }
            report.prediction = Some(predict_clusters(&g, &d, &s.sim, &s.g_values)?);
        }
    }
    let path = a.out_dir.join("report.json");
    write_json(&path, &report)?;
    println!("{}", path.display());
    Ok(code)
}

pub fn montecarlo(
    config: Option<&Path>,
    trials: Option<usize>,
    seed: Option<u64>,
    horizon: Option<usize>,
    dir: &Path,
) -> Result<u8> {
    let mut cfg = match config {
        Some(p) => MonteCarloConfig::from_toml(&read(p)?).with_context(|| format!("invalid config {}", p.display()))?,
        None => MonteCarloConfig::default(),
    };
    if let Some(t) = trials {
        cfg.trials = t;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(h) = horizon {
        cfg.horizon = h;
    }
    let rep = run_montecarlo(&cfg)?;
    out_dir(dir)?;
    let curves = "montecarlo.csv";
    rep.write_csv(BufWriter::new(fs::File::create(dir.join(curves))?))?;
    let path = dir.join("montecarlo.json");
    write_json(
        &path,
        &MonteCarloFile {
            schema: REPORT_SCHEMA,
            config: rep.config.clone(),
            coupling_noise_std: rep.coupling_noise_std,
            summary: rep.summary.clone(),
            curves: curves.into(),
        },
    )?;
    println!("{}", path.display());
    Ok(EXIT_OK)
}

pub fn inspect(path: &Path) -> Result<u8> {
    let s = load_scenario(path)?;
    let (g, d) = s.build()?;
    let scc = g.scc_decompose();
    let report = InspectReport {
        schema: REPORT_SCHEMA,
        scenario: Digest::of(&s, scc.class, g.edge_count(), d.tau_max()),
        components: scc.components.clone(),
        roots: scc.root_node_sets().iter().map(|r| r.to_vec()).collect(),
        gamma: cluster_gammas(&g.laplacian(), &scc, Normalization::SumOne)?,
        rates: static_rates(&g, &s.sim),
        prediction: predict_clusters(&g, &d, &s.sim, &s.g_values)?,
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(EXIT_OK)
}
