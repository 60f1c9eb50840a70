//! Experiment configuration, the suite driver and its artifacts.
//!
//! A configuration is a plain `key = value` file; command-line overrides
//! are applied on top. Every numeric artifact embeds the configuration
//! (without the output directory, which only says where files go) so two
//! runs of the same configuration produce byte-identical files. Floats are
//! written in shortest round-trip form.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::carpet::{build_graph, hausdorff_dimension, validate_params, CarpetGraph, CarpetParams};
use crate::coupling::{self, CouplingEstimate, Coupler, UpgradeEstimate};
use crate::error::{Error, Result};
use crate::fit::{chi_square_test, ChiSquareTest, ExponentEstimate};
use crate::harmonic::{self, BoxDomain, HarnackReport, HittingSpec};
use crate::heat::{self, RegimeFit, TransitionOperator};
use crate::network::Network;
use crate::par;
use crate::resistance::{self, CapacityReport, FaceResistance, ResistanceReport};
use crate::rng;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Combinatorics,
    Oracles,
    Harnack,
    Exponents,
    Regimes,
    Hitting,
    Coupling,
    Resistance,
    Capacity,
}

impl Experiment {
    /// Every experiment, in the order the suite runs them.
    pub const ALL: [Experiment; 9] = [
        Experiment::Combinatorics,
        Experiment::Oracles,
        Experiment::Harnack,
        Experiment::Exponents,
        Experiment::Regimes,
        Experiment::Hitting,
        Experiment::Coupling,
        Experiment::Resistance,
        Experiment::Capacity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Combinatorics => "combinatorics",
            Experiment::Oracles => "oracles",
            Experiment::Harnack => "harnack",
            Experiment::Exponents => "exponents",
            Experiment::Regimes => "regimes",
            Experiment::Hitting => "hitting",
            Experiment::Coupling => "coupling",
            Experiment::Resistance => "resistance",
            Experiment::Capacity => "capacity",
        }
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub d: i64,
    pub k: i64,
    pub a: i64,
    pub seed: u64,
    pub tolerance: f64,
    pub experiments: Vec<Experiment>,
    pub output_dir: PathBuf,
    pub fail_fast: bool,
    pub count_level: u32,
    pub harnack_levels: Vec<u32>,
    pub exponent_level: u32,
    pub ds_window: (u64, u64),
    pub dw_levels: Vec<u32>,
    pub regime_level: u32,
    pub regime_times: Vec<u64>,
    pub regime_samples: usize,
    /// Walk steps per unit of diffusion time; `None` uses the Brownian
    /// normalisation `2 d`.
    pub regime_steps_per_time: Option<f64>,
    pub hitting_level: u32,
    pub hitting_levels: Vec<u32>,
    pub hitting_pairs: usize,
    pub hitting_c1: f64,
    pub hitting_c2: f64,
    pub coupling_graph_level: u32,
    pub coupling_levels: Vec<u32>,
    pub coupling_trials: usize,
    pub coupling_max_steps: u64,
    pub marginal_trials: usize,
    pub marginal_steps: u64,
    pub upgrade_m: u32,
    pub upgrade_renewals: usize,
    pub face_levels: Vec<u32>,
    pub capacity_d: i64,
    pub capacity_k: i64,
    pub capacity_a: i64,
    pub capacity_count_level: u32,
    pub capacity_graph_level: u32,
    pub capacity_levels: Vec<u32>,
    pub capacity_sides: Vec<i64>,
    pub capacity_ds_window: (u64, u64),
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            d: 2,
            k: 3,
            a: 1,
            seed: 42,
            tolerance: crate::solver::DEFAULT_TOLERANCE,
            experiments: Experiment::ALL.to_vec(),
            output_dir: PathBuf::from("carpet-out"),
            fail_fast: false,
            count_level: 5,
            harnack_levels: vec![2, 3, 4],
            exponent_level: 5,
            ds_window: (16, 2048),
            dw_levels: vec![1, 2, 3],
            regime_level: 4,
            regime_times: vec![64, 128, 256, 512],
            regime_samples: 40,
            regime_steps_per_time: None,
            hitting_level: 5,
            hitting_levels: vec![1, 2, 3],
            hitting_pairs: 50,
            hitting_c1: 2.0,
            hitting_c2: 4.0,
            coupling_graph_level: 4,
            coupling_levels: vec![2, 3],
            coupling_trials: 10_000,
            coupling_max_steps: coupling::DEFAULT_MAX_STEPS,
            marginal_trials: 100_000,
            marginal_steps: 5,
            upgrade_m: 0,
            upgrade_renewals: coupling::DEFAULT_RENEWALS,
            face_levels: vec![1, 2, 3, 4],
            capacity_d: 3,
            capacity_k: 3,
            capacity_a: 1,
            capacity_count_level: 3,
            capacity_graph_level: 4,
            capacity_levels: vec![2, 3, 4],
            capacity_sides: vec![1, 2, 3],
            capacity_ds_window: (16, 256),
        }
    }
}

fn parse_scalar<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_scalar(key, v)).collect()
}

fn parse_pair<T: FromStr>(key: &str, value: &str) -> Result<(T, T)> {
    let v: Vec<T> = parse_list(key, value)?;
    match <[T; 2]>::try_from(v) {
        Ok([lo, hi]) => Ok((lo, hi)),
        Err(_) => Err(Error::Config(format!("`{key}` expects two comma-separated values"))),
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Reads `key = value` lines. Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected `key = value`, found `{line}`"),
            })?;
            cfg.set(key.trim(), value.trim()).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        ExperimentConfig::parse(&fs::read_to_string(path)?)
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "d" => self.d = parse_scalar(key, v)?,
            "k" => self.k = parse_scalar(key, v)?,
            "a" => self.a = parse_scalar(key, v)?,
            "seed" => self.seed = parse_scalar(key, v)?,
            "tolerance" => self.tolerance = parse_scalar(key, v)?,
            "experiments" => {
                self.experiments = if v == "all" {
                    Experiment::ALL.to_vec()
                } else {
                    parse_list(key, v)?
                }
            }
            "output_dir" => self.output_dir = PathBuf::from(v),
            "fail_fast" => self.fail_fast = parse_scalar(key, v)?,
            "count_level" => self.count_level = parse_scalar(key, v)?,
            "harnack_levels" => self.harnack_levels = parse_list(key, v)?,
            "exponent_level" => self.exponent_level = parse_scalar(key, v)?,
            "ds_window" => self.ds_window = parse_pair(key, v)?,
            "dw_levels" => self.dw_levels = parse_list(key, v)?,
            "regime_level" => self.regime_level = parse_scalar(key, v)?,
            "regime_times" => self.regime_times = parse_list(key, v)?,
            "regime_samples" => self.regime_samples = parse_scalar(key, v)?,
            "regime_steps_per_time" => {
                self.regime_steps_per_time = if v == "auto" { None } else { Some(parse_scalar(key, v)?) }
            }
            "hitting_level" => self.hitting_level = parse_scalar(key, v)?,
            "hitting_levels" => self.hitting_levels = parse_list(key, v)?,
            "hitting_pairs" => self.hitting_pairs = parse_scalar(key, v)?,
            "hitting_c1" => self.hitting_c1 = parse_scalar(key, v)?,
            "hitting_c2" => self.hitting_c2 = parse_scalar(key, v)?,
            "coupling_graph_level" => self.coupling_graph_level = parse_scalar(key, v)?,
            "coupling_levels" => self.coupling_levels = parse_list(key, v)?,
            "coupling_trials" => self.coupling_trials = parse_scalar(key, v)?,
            "coupling_max_steps" => self.coupling_max_steps = parse_scalar(key, v)?,
            "marginal_trials" => self.marginal_trials = parse_scalar(key, v)?,
            "marginal_steps" => self.marginal_steps = parse_scalar(key, v)?,
            "upgrade_m" => self.upgrade_m = parse_scalar(key, v)?,
            "upgrade_renewals" => self.upgrade_renewals = parse_scalar(key, v)?,
            "face_levels" => self.face_levels = parse_list(key, v)?,
            "capacity_d" => self.capacity_d = parse_scalar(key, v)?,
            "capacity_k" => self.capacity_k = parse_scalar(key, v)?,
            "capacity_a" => self.capacity_a = parse_scalar(key, v)?,
            "capacity_count_level" => self.capacity_count_level = parse_scalar(key, v)?,
            "capacity_graph_level" => self.capacity_graph_level = parse_scalar(key, v)?,
            "capacity_levels" => self.capacity_levels = parse_list(key, v)?,
            "capacity_sides" => self.capacity_sides = parse_list(key, v)?,
            "capacity_ds_window" => self.capacity_ds_window = parse_pair(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Canonical `key -> value` rendering of everything that affects numbers.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let names: Vec<&str> = self.experiments.iter().map(|e| e.name()).collect();
        let entries: Vec<(&str, String)> = vec![
            ("d", self.d.to_string()),
            ("k", self.k.to_string()),
            ("a", self.a.to_string()),
            ("seed", self.seed.to_string()),
            ("tolerance", self.tolerance.to_string()),
            ("experiments", names.join(",")),
            ("fail_fast", self.fail_fast.to_string()),
            ("count_level", self.count_level.to_string()),
            ("harnack_levels", join(&self.harnack_levels)),
            ("exponent_level", self.exponent_level.to_string()),
            ("ds_window", format!("{},{}", self.ds_window.0, self.ds_window.1)),
            ("dw_levels", join(&self.dw_levels)),
            ("regime_level", self.regime_level.to_string()),
            ("regime_times", join(&self.regime_times)),
            ("regime_samples", self.regime_samples.to_string()),
            (
                "regime_steps_per_time",
                self.regime_steps_per_time.map_or("auto".into(), |v| v.to_string()),
            ),
            ("hitting_level", self.hitting_level.to_string()),
            ("hitting_levels", join(&self.hitting_levels)),
            ("hitting_pairs", self.hitting_pairs.to_string()),
            ("hitting_c1", self.hitting_c1.to_string()),
            ("hitting_c2", self.hitting_c2.to_string()),
            ("coupling_graph_level", self.coupling_graph_level.to_string()),
            ("coupling_levels", join(&self.coupling_levels)),
            ("coupling_trials", self.coupling_trials.to_string()),
            ("coupling_max_steps", self.coupling_max_steps.to_string()),
            ("marginal_trials", self.marginal_trials.to_string()),
            ("marginal_steps", self.marginal_steps.to_string()),
            ("upgrade_m", self.upgrade_m.to_string()),
            ("upgrade_renewals", self.upgrade_renewals.to_string()),
            ("face_levels", join(&self.face_levels)),
            ("capacity_d", self.capacity_d.to_string()),
            ("capacity_k", self.capacity_k.to_string()),
            ("capacity_a", self.capacity_a.to_string()),
            ("capacity_count_level", self.capacity_count_level.to_string()),
            ("capacity_graph_level", self.capacity_graph_level.to_string()),
            ("capacity_levels", join(&self.capacity_levels)),
            ("capacity_sides", join(&self.capacity_sides)),
            (
                "capacity_ds_window",
                format!("{},{}", self.capacity_ds_window.0, self.capacity_ds_window.1),
            ),
        ];
        entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// SHA-256 of the canonical echo, one `key=value` line per entry.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.echo() {
            h.update(format!("{k}={v}\n").as_bytes());
        }
        hex(&h.finalize())
    }

    pub fn params(&self) -> Result<CarpetParams> {
        Ok(validate_params(self.d, self.k, self.a)?)
    }

    pub fn capacity_params(&self) -> Result<CarpetParams> {
        Ok(validate_params(self.capacity_d, self.capacity_k, self.capacity_a)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.params()?;
        if self.experiments.contains(&Experiment::Capacity) {
            self.capacity_params()?;
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        if self.hitting_c1 <= 1.0 || self.hitting_c2 <= self.hitting_c1 {
            return Err(Error::Config("hitting factors need 1 < c1 < c2".into()));
        }
        Ok(())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// Experiments

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountCheck {
    pub d: usize,
    pub k: u64,
    pub a: u64,
    pub level: u32,
    pub count: u64,
    pub expected: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinatoricsSummary {
    pub counts: Vec<CountCheck>,
    /// Length of the level-1 graph when it is a single cycle.
    pub level_one_cycle: Option<usize>,
}

fn enumerate_counts(params: &CarpetParams, top: u32) -> Result<Vec<CountCheck>> {
    (0..=top)
        .map(|n| {
            let g = build_graph(n, params)?;
            let per = params.k().pow(params.d() as u32) - params.a().pow(params.d() as u32);
            Ok(CountCheck {
                d: params.d(),
                k: params.k(),
                a: params.a(),
                level: n,
                count: g.len() as u64,
                expected: per.pow(n),
            })
        })
        .collect()
}

fn single_cycle(net: &Network) -> Option<usize> {
    (net.len() > 2 && net.is_connected() && (0..net.len()).all(|v| net.degree(v) == 2)).then_some(net.len())
}

pub fn combinatorics(cfg: &ExperimentConfig) -> Result<CombinatoricsSummary> {
    let params = cfg.params()?;
    let mut counts = enumerate_counts(&params, cfg.count_level)?;
    if let Ok(p3) = cfg.capacity_params() {
        counts.extend(enumerate_counts(&p3, cfg.capacity_count_level)?);
    }
    let level_one = build_graph(1, &params)?;
    Ok(CombinatoricsSummary {
        counts,
        level_one_cycle: single_cycle(level_one.network()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    /// Harmonic values at cycle positions 1, 2, 3 with 0 at position 0 and
    /// 1 at position 4 of the 8-cycle.
    pub cycle_values: Vec<f64>,
    /// End-to-end resistance of a 2-edge path.
    pub series: f64,
    /// Resistance between antipodal vertices of the 8-cycle.
    pub parallel: f64,
}

pub fn oracles(cfg: &ExperimentConfig) -> Result<OracleSummary> {
    let cycle = Network::cycle(8);
    let domain = BoxDomain::new(&cycle, vec![1, 2, 3, 5, 6, 7], vec![0, 4])?;
    let h = harmonic::solve_dirichlet(&domain, &[0.0, 1.0], cfg.tolerance)?;
    Ok(OracleSummary {
        cycle_values: (1..=3).map(|v| h.value(v)).collect(),
        series: resistance::effective_resistance(&Network::path(3), &[0], &[2], cfg.tolerance)?,
        parallel: resistance::effective_resistance(&cycle, &[0], &[4], cfg.tolerance)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnackSweep {
    pub graph_level: u32,
    pub reports: Vec<HarnackReport>,
    /// `C_H(n+1) / C_H(n)` for consecutive requested levels.
    pub ratios: Vec<f64>,
}

pub fn harnack(cfg: &ExperimentConfig) -> Result<HarnackSweep> {
    let top = *cfg
        .harnack_levels
        .iter()
        .max()
        .ok_or_else(|| Error::Config("harnack_levels is empty".into()))?;
    let graph = build_graph(top, &cfg.params()?)?;
    let reports = cfg
        .harnack_levels
        .iter()
        .map(|&n| harmonic::harnack_constant(&graph, n, cfg.tolerance))
        .collect::<Result<Vec<_>>>()?;
    let ratios = reports.windows(2).map(|w| w[1].constant / w[0].constant).collect();
    Ok(HarnackSweep {
        graph_level: top,
        reports,
        ratios,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentSummary {
    pub level: u32,
    pub source: usize,
    pub hausdorff: f64,
    /// `(t, p_t(x, x))` for dyadic `t` up to the top of the fit window.
    pub diagonal: Vec<(u64, f64)>,
    pub ds: ExponentEstimate,
    /// `(r, E tau(x, r))`.
    pub exit_times: Vec<(f64, f64)>,
    pub dw: ExponentEstimate,
    /// `2 d_f / d_s`.
    pub predicted_dw: f64,
    /// `|d_w - 2 d_f / d_s|`.
    pub relation_gap: f64,
}

/// Diagonal decay from the central vertex and the spectral dimension fitted
/// over `window`.
pub fn spectral_estimate(graph: &CarpetGraph, window: (u64, u64)) -> Result<(usize, Vec<(u64, f64)>, ExponentEstimate)> {
    let x = graph.central_vertex();
    let op = TransitionOperator::new(graph.network());
    let times = heat::dyadic_times(1, window.1);
    let diagonal = heat::diagonal_series(&op, x, &times);
    let ds = heat::estimate_ds(&op, x, &times, window)?;
    Ok((x, diagonal, ds))
}

pub fn exponents(cfg: &ExperimentConfig) -> Result<ExponentSummary> {
    let params = cfg.params()?;
    let graph = build_graph(cfg.exponent_level, &params)?;
    let (x, diagonal, ds) = spectral_estimate(&graph, cfg.ds_window)?;
    let radii: Vec<f64> = cfg
        .dw_levels
        .iter()
        .map(|&m| (params.k() as f64).powi(m as i32))
        .collect();
    let times = par::map_slice(&radii, |&r| harmonic::expected_exit_time(&graph, x, r));
    let times = times.into_iter().collect::<Result<Vec<f64>>>()?;
    let dw = heat::dw_from_exit_times(&radii, &times)?;
    let hausdorff = hausdorff_dimension(&params);
    let predicted_dw = 2.0 * hausdorff / ds.value;
    Ok(ExponentSummary {
        level: cfg.exponent_level,
        source: x,
        hausdorff,
        diagonal,
        ds,
        exit_times: radii.into_iter().zip(times).collect(),
        relation_gap: (dw.value - predicted_dw).abs(),
        predicted_dw,
        dw,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSample {
    pub y: usize,
    pub steps: u64,
    pub distance: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSummary {
    pub level: u32,
    pub source: usize,
    pub ds: f64,
    pub dw: f64,
    pub samples: Vec<RegimeSample>,
    pub fit: RegimeFit,
}

/// Off-diagonal regime fits using exponents from [`exponents`].
pub fn regimes(cfg: &ExperimentConfig, exps: &ExponentSummary) -> Result<RegimeSummary> {
    let graph = build_graph(cfg.regime_level, &cfg.params()?)?;
    let x = graph.central_vertex();
    let op = TransitionOperator::new(graph.network());
    let mut times = cfg.regime_times.clone();
    times.sort_unstable();
    times.dedup();
    let rows = heat::heat_kernel_rows(&op, x, &times);
    let mut samples = Vec::new();
    for row in &rows {
        let support: Vec<usize> = (0..graph.len())
            .filter(|&y| y != x && row.probs[y] > heat::PROBABILITY_FLOOR)
            .collect();
        if support.is_empty() {
            continue;
        }
        let mut rng = rng::stream(cfg.seed, "regime", row.time);
        for _ in 0..cfg.regime_samples {
            let y = support[rng.random_range(0..support.len())];
            samples.push(RegimeSample {
                y,
                steps: row.time,
                distance: graph.lattice().dist(x, y),
                probability: row.probs[y],
            });
        }
    }
    let pairs: Vec<(usize, u64)> = samples.iter().map(|s| (s.y, s.steps)).collect();
    let fit = heat::regime_fit(
        &op,
        graph.lattice(),
        x,
        &pairs,
        exps.ds.value,
        exps.dw.value,
        cfg.regime_steps_per_time
            .unwrap_or_else(|| heat::brownian_steps_per_time(graph.params().d())),
    )?;
    Ok(RegimeSummary {
        level: cfg.regime_level,
        source: x,
        ds: exps.ds.value,
        dw: exps.dw.value,
        samples,
        fit,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingPair {
    pub x: usize,
    pub y: usize,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingLevel {
    pub m: u32,
    pub radius: f64,
    pub pairs: Vec<HittingPair>,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingSummary {
    pub level: u32,
    pub c1: f64,
    pub c2: f64,
    pub levels: Vec<HittingLevel>,
    /// Largest over smallest of the per-level minima.
    pub variation: f64,
}

pub fn hitting(cfg: &ExperimentConfig) -> Result<HittingSummary> {
    let params = cfg.params()?;
    let graph = build_graph(cfg.hitting_level, &params)?;
    let mut levels = Vec::new();
    for &m in &cfg.hitting_levels {
        let radius = (params.k() as f64).powi(m as i32);
        let mut rng = rng::stream(cfg.seed, "hitting", m as u64);
        let pairs = harmonic::sample_hitting_pairs(&graph, radius, cfg.hitting_c1, cfg.hitting_c2, cfg.hitting_pairs, &mut rng)?;
        let mut centers: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        centers.sort_unstable();
        centers.dedup();
        let fields = par::map_slice(&centers, |&x| -> Result<Vec<f64>> {
            let spec = HittingSpec::new(x, radius, cfg.hitting_c1, cfg.hitting_c2)?;
            Ok(harmonic::hitting_field(&graph, &spec, cfg.tolerance)?.values)
        });
        let fields = fields.into_iter().collect::<Result<Vec<_>>>()?;
        let pairs: Vec<HittingPair> = pairs
            .iter()
            .map(|&(x, y)| HittingPair {
                x,
                y,
                probability: fields[centers.binary_search(&x).expect("center present")][y],
            })
            .collect();
        let probs: Vec<f64> = pairs.iter().map(|p| p.probability).collect();
        levels.push(HittingLevel {
            m,
            radius,
            min: probs.iter().copied().fold(f64::INFINITY, f64::min),
            max: probs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean: probs.iter().sum::<f64>() / probs.len() as f64,
            pairs,
        });
    }
    let mins: Vec<f64> = levels.iter().map(|l| l.min).collect();
    let variation = mins.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        / mins.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(HittingSummary {
        level: cfg.hitting_level,
        c1: cfg.hitting_c1,
        c2: cfg.hitting_c2,
        levels,
        variation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingLevel {
    pub n: u32,
    pub rho: f64,
    /// Inner pair realising `rho`.
    pub rho_pair: (usize, usize),
    /// Walks started from the origin and its first-axis neighbour.
    pub adjacent: CouplingEstimate,
    /// Walks started from `rho_pair`.
    pub rho_pair_estimate: CouplingEstimate,
    /// `1 - p + 3 SE` for the walks from `rho_pair`.
    pub bound: f64,
    pub upgrade: UpgradeEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingSummary {
    pub graph_level: u32,
    pub levels: Vec<CouplingLevel>,
    /// Start pair of the marginal test.
    pub marginal_start: (usize, usize),
    pub marginal: ChiSquareTest,
}

pub fn coupling(cfg: &ExperimentConfig) -> Result<CouplingSummary> {
    let graph = build_graph(cfg.coupling_graph_level, &cfg.params()?)?;
    let d = graph.params().d();
    let origin = graph
        .find(&vec![0; d])
        .ok_or_else(|| Error::Config("the origin cell is not in the carpet".into()))?;
    let mut e1 = vec![0; d];
    e1[0] = 1;
    let neighbour = graph
        .find(&e1)
        .ok_or_else(|| Error::Config("the origin has no first-axis neighbour".into()))?;
    let mut levels = Vec::new();
    for &n in &cfg.coupling_levels {
        let report = harmonic::harnack_constant(&graph, n, cfg.tolerance)?;
        let coupler = Coupler::new(&graph, n)?;
        let run = |x, y| {
            coupling::coupling_probability(&coupler, x, y, n, cfg.coupling_trials, cfg.coupling_max_steps, cfg.seed, false)
        };
        let adjacent = run(origin, neighbour)?;
        let (a, b) = report.rho_pair;
        let rho_pair_estimate = run(a, b)?;
        let upgrade = coupling::upgrade_probability(
            &coupler,
            cfg.upgrade_m,
            n,
            cfg.upgrade_renewals,
            cfg.coupling_trials,
            cfg.coupling_max_steps,
            cfg.seed,
        )?;
        levels.push(CouplingLevel {
            n,
            rho: report.rho,
            rho_pair: report.rho_pair,
            bound: 1.0 - rho_pair_estimate.probability + 3.0 * rho_pair_estimate.standard_error,
            adjacent,
            rho_pair_estimate,
            upgrade,
        });
    }
    let first = levels
        .first()
        .ok_or_else(|| Error::Config("coupling_levels is empty".into()))?;
    let marginal_start = first.rho_pair;
    let coupler = Coupler::new(&graph, first.n)?;
    let (x0, y0) = marginal_start;
    let ends = coupling::marginal_positions(&coupler, x0, y0, cfg.marginal_steps, cfg.marginal_trials, cfg.seed)?;
    let mut observed = vec![0u64; graph.len()];
    for v in ends {
        observed[v] += 1;
    }
    let op = TransitionOperator::new(graph.network());
    let row = heat::heat_kernel_row(&op, y0, cfg.marginal_steps);
    let marginal = chi_square_test(&observed, &row.probs, 5.0)?;
    Ok(CouplingSummary {
        graph_level: cfg.coupling_graph_level,
        levels,
        marginal_start,
        marginal,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResistanceSummary {
    pub faces: Vec<FaceResistance>,
    /// `R(n+1) / R(n)` for consecutive face levels.
    pub ratios: Vec<f64>,
    /// Resistance from the origin cell to increasingly distant grounds.
    pub origin: ResistanceReport,
}

pub fn resistance_scaling(cfg: &ExperimentConfig) -> Result<ResistanceSummary> {
    let params = cfg.params()?;
    let faces = cfg
        .face_levels
        .iter()
        .map(|&n| resistance::face_resistance(&params, n, cfg.tolerance))
        .collect::<Result<Vec<_>>>()?;
    let ratios = faces.windows(2).map(|w| w[1].value / w[0].value).collect();
    let top = cfg.face_levels.iter().copied().max().unwrap_or(1).max(1);
    let graph = build_graph(top, &params)?;
    let levels: Vec<u32> = (1..=top).collect();
    let origin = resistance::resistance_to_infinity(&graph, &[0], &levels, cfg.tolerance)?;
    Ok(ResistanceSummary { faces, ratios, origin })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum CapacityOutcome {
    Checked { report: CapacityReport },
    /// The spectral dimension estimate does not clear 2 by three standard errors.
    HypothesisNotMet { ds: f64, ds_se: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacitySummary {
    pub d: usize,
    pub k: u64,
    pub a: u64,
    pub graph_level: u32,
    pub ds: ExponentEstimate,
    pub outcome: CapacityOutcome,
}

pub fn capacity(cfg: &ExperimentConfig) -> Result<CapacitySummary> {
    let params = cfg.capacity_params()?;
    let graph = build_graph(cfg.capacity_graph_level, &params)?;
    let (_, _, ds) = spectral_estimate(&graph, cfg.capacity_ds_window)?;
    let outcome = if ds.value - 3.0 * ds.standard_error > 2.0 {
        let sets: Vec<Vec<usize>> = cfg
            .capacity_sides
            .iter()
            .map(|&s| resistance::corner_box(&graph, s))
            .collect();
        CapacityOutcome::Checked {
            report: resistance::capacity_volume_check(
                &graph,
                &sets,
                &cfg.capacity_levels,
                ds.value,
                ds.standard_error,
                cfg.tolerance,
            )?,
        }
    } else {
        CapacityOutcome::HypothesisNotMet {
            ds: ds.value,
            ds_se: ds.standard_error,
        }
    };
    Ok(CapacitySummary {
        d: params.d(),
        k: params.k(),
        a: params.a(),
        graph_level: cfg.capacity_graph_level,
        ds,
        outcome,
    })
}

// ---------------------------------------------------------------------------
// Acceptance verdicts

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    HypothesisNotMet,
    NotEvaluated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u32,
    pub name: String,
    pub verdict: Verdict,
    pub detail: String,
}

fn verdict(id: u32, name: &str, ok: bool, detail: String) -> CriterionResult {
    CriterionResult {
        id,
        name: name.into(),
        verdict: if ok { Verdict::Pass } else { Verdict::Fail },
        detail,
    }
}

pub fn judge_combinatorics(s: &CombinatoricsSummary, params: &CarpetParams) -> CriterionResult {
    let counts_ok = s.counts.iter().all(|c| c.count == c.expected);
    let standard = params.d() == 2 && params.k() == 3 && params.a() == 1;
    let cycle_ok = !standard || s.level_one_cycle == Some(8);
    verdict(
        1,
        "cell counts and level-1 cycle",
        counts_ok && cycle_ok,
        format!("{} counts checked, level-1 cycle {:?}", s.counts.len(), s.level_one_cycle),
    )
}

pub fn judge_oracles(s: &OracleSummary) -> CriterionResult {
    let tol = 1e-10;
    let ok = s.cycle_values.len() == 3
        && s.cycle_values.iter().zip([0.25, 0.5, 0.75]).all(|(v, w)| (v - w).abs() <= tol)
        && (s.series - 2.0).abs() <= tol
        && (s.parallel - 2.0).abs() <= tol;
    verdict(
        2,
        "solver oracles",
        ok,
        format!("cycle {:?}, series {}, parallel {}", s.cycle_values, s.series, s.parallel),
    )
}

pub fn judge_harnack(s: &HarnackSweep) -> CriterionResult {
    let ok = !s.ratios.is_empty() && s.ratios.iter().all(|r| (0.8..=1.25).contains(r));
    let constants: Vec<f64> = s.reports.iter().map(|r| r.constant).collect();
    verdict(3, "Harnack constant stability", ok, format!("C_H {constants:?}, ratios {:?}", s.ratios))
}

pub fn judge_exponents(s: &ExponentSummary) -> CriterionResult {
    let ds = s.ds.value;
    let dw = s.dw.value;
    let ok = ds > 1.0 && ds < s.hausdorff && dw > 2.0 && s.relation_gap <= 0.10 * dw;
    verdict(
        4,
        "exponent chain",
        ok,
        format!("d_f {}, d_s {ds}, d_w {dw}, 2d_f/d_s {}", s.hausdorff, s.predicted_dw),
    )
}

pub fn judge_regimes(s: &RegimeSummary) -> CriterionResult {
    let good = |e: &Option<ExponentEstimate>, n: usize| e.as_ref().is_some_and(|e| e.r_squared >= 0.9) && n >= 20;
    let ok = good(&s.fit.sub_gaussian, s.fit.sub_gaussian_pairs) && good(&s.fit.gaussian, s.fit.gaussian_pairs);
    let r2 = |e: &Option<ExponentEstimate>| e.as_ref().map(|e| e.r_squared);
    verdict(
        5,
        "regime fits",
        ok,
        format!(
            "sub-Gaussian R2 {:?} over {}, Gaussian R2 {:?} over {}",
            r2(&s.fit.sub_gaussian),
            s.fit.sub_gaussian_pairs,
            r2(&s.fit.gaussian),
            s.fit.gaussian_pairs
        ),
    )
}

pub fn judge_hitting(s: &HittingSummary) -> CriterionResult {
    let floor = s.levels.iter().map(|l| l.min).fold(f64::INFINITY, f64::min);
    let ok = !s.levels.is_empty() && floor >= 0.01 && s.variation < 2.0;
    verdict(6, "hitting probability floor", ok, format!("min {floor}, variation {}", s.variation))
}

pub fn judge_coupling(s: &CouplingSummary) -> CriterionResult {
    let marginal_ok = s.marginal.p_value >= 1e-3;
    let strength_ok = s.levels.iter().all(|l| l.adjacent.probability >= 0.05 && l.rho <= l.bound);
    let detail: Vec<String> = s
        .levels
        .iter()
        .map(|l| {
            format!(
                "n={}: p_adj {}, rho {}, bound {}",
                l.n, l.adjacent.probability, l.rho, l.bound
            )
        })
        .collect();
    verdict(
        7,
        "coupling validity and strength",
        marginal_ok && strength_ok && !s.levels.is_empty(),
        format!("marginal p-value {}; {}", s.marginal.p_value, detail.join("; ")),
    )
}

pub fn judge_capacity(s: &CapacitySummary) -> CriterionResult {
    match &s.outcome {
        CapacityOutcome::HypothesisNotMet { ds, ds_se } => CriterionResult {
            id: 8,
            name: "capacity-volume constant".into(),
            verdict: Verdict::HypothesisNotMet,
            detail: format!("d_s {ds} +- {ds_se} does not exceed 2"),
        },
        CapacityOutcome::Checked { report } => verdict(
            8,
            "capacity-volume constant",
            report.spread.is_some_and(|s| s <= 5.0),
            format!("d_s {}, spread {:?}", report.spectral_dimension, report.spread),
        ),
    }
}

// ---------------------------------------------------------------------------
// Suite

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub experiment: Experiment,
    pub status: Status,
    pub error: Option<String>,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub tool_version: String,
    pub config: BTreeMap<String, String>,
    pub output_dir: PathBuf,
    pub experiments: Vec<ExperimentRecord>,
    pub criteria: Vec<CriterionResult>,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn failed(&self) -> bool {
        self.experiments.iter().any(|e| e.status == Status::Failed)
            || self.criteria.iter().any(|c| c.verdict == Verdict::Fail)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

#[derive(Serialize)]
struct Artifact<'a, T> {
    tool_version: &'a str,
    config_hash: &'a str,
    config: &'a BTreeMap<String, String>,
    result: &'a T,
}

#[derive(Deserialize)]
struct ArtifactIn<T> {
    result: T,
}

struct Writer<'c> {
    dir: PathBuf,
    hash: String,
    echo: BTreeMap<String, String>,
    cfg: &'c ExperimentConfig,
    written: Vec<String>,
}

impl Writer<'_> {
    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let body = serde_json::to_string_pretty(&Artifact {
            tool_version: TOOL_VERSION,
            config_hash: &self.hash,
            config: &self.echo,
            result: value,
        })?;
        fs::write(self.dir.join(name), body + "\n")?;
        self.written.push(name.into());
        Ok(())
    }

    fn csv(&mut self, name: &str, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
        let mut out = String::new();
        out.push_str(&format!("# carpet {TOOL_VERSION} config_hash={}\n", self.hash));
        for (k, v) in &self.echo {
            out.push_str(&format!("# {k} = {v}\n"));
        }
        out.push_str(header);
        out.push('\n');
        for r in rows {
            out.push_str(&r);
            out.push('\n');
        }
        fs::write(self.dir.join(name), out)?;
        self.written.push(name.into());
        Ok(())
    }
}

#[derive(Default)]
struct Cache {
    exponents: Option<ExponentSummary>,
}

fn run_one(exp: Experiment, w: &mut Writer<'_>, cache: &mut Cache) -> Result<Vec<CriterionResult>> {
    let cfg = w.cfg;
    match exp {
        Experiment::Combinatorics => {
            let s = combinatorics(cfg)?;
            w.json("combinatorics.json", &s)?;
            Ok(vec![judge_combinatorics(&s, &cfg.params()?)])
        }
        Experiment::Oracles => {
            let s = oracles(cfg)?;
            w.json("oracles.json", &s)?;
            Ok(vec![judge_oracles(&s)])
        }
        Experiment::Harnack => {
            let s = harnack(cfg)?;
            w.json("harnack.json", &s)?;
            w.csv(
                "harnack.csv",
                "n,constant,rho,boundary_solves,max_residual",
                s.reports.iter().map(|r| {
                    format!("{},{},{},{},{}", r.level, r.constant, r.rho, r.boundary_solves, r.max_residual)
                }),
            )?;
            Ok(vec![judge_harnack(&s)])
        }
        Experiment::Exponents => {
            let s = exponents(cfg)?;
            w.json("exponents.json", &s)?;
            w.csv("diagonal.csv", "t,p_tt", s.diagonal.iter().map(|(t, p)| format!("{t},{p}")))?;
            w.csv("exit_times.csv", "r,mean_exit_time", s.exit_times.iter().map(|(r, t)| format!("{r},{t}")))?;
            let verdict = judge_exponents(&s);
            cache.exponents = Some(s);
            Ok(vec![verdict])
        }
        Experiment::Regimes => {
            if cache.exponents.is_none() {
                cache.exponents = Some(exponents(cfg)?);
            }
            let s = regimes(cfg, cache.exponents.as_ref().expect("just filled"))?;
            w.json("regimes.json", &s)?;
            w.csv(
                "regime_samples.csv",
                "y,steps,distance,probability",
                s.samples.iter().map(|r| format!("{},{},{},{}", r.y, r.steps, r.distance, r.probability)),
            )?;
            Ok(vec![judge_regimes(&s)])
        }
        Experiment::Hitting => {
            let s = hitting(cfg)?;
            w.json("hitting.json", &s)?;
            w.csv(
                "hitting_pairs.csv",
                "m,radius,x,y,probability",
                s.levels.iter().flat_map(|l| {
                    l.pairs.iter().map(move |p| format!("{},{},{},{},{}", l.m, l.radius, p.x, p.y, p.probability))
                }),
            )?;
            Ok(vec![judge_hitting(&s)])
        }
        Experiment::Coupling => {
            let s = coupling(cfg)?;
            w.json("coupling.json", &s)?;
            Ok(vec![judge_coupling(&s)])
        }
        Experiment::Resistance => {
            let s = resistance_scaling(cfg)?;
            w.json("resistance.json", &s)?;
            w.csv(
                "face_resistance.csv",
                "n,resistance",
                s.faces.iter().map(|f| format!("{},{}", f.level, f.value)),
            )?;
            Ok(Vec::new())
        }
        Experiment::Capacity => {
            let s = capacity(cfg)?;
            w.json("capacity.json", &s)?;
            Ok(vec![judge_capacity(&s)])
        }
    }
}

/// Runs the selected experiments in dependency order, writing artifacts
/// and `manifest.json` into the output directory. A failing experiment is
/// recorded and the suite moves on unless `fail_fast` is set.
pub fn run_suite(cfg: &ExperimentConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let started = Instant::now();
    fs::create_dir_all(&cfg.output_dir)?;
    let mut writer = Writer {
        dir: cfg.output_dir.clone(),
        hash: cfg.hash(),
        echo: cfg.echo(),
        cfg,
        written: Vec::new(),
    };
    let mut cache = Cache::default();
    let mut records = Vec::new();
    let mut criteria = Vec::new();
    for exp in Experiment::ALL {
        if !cfg.experiments.contains(&exp) {
            continue;
        }
        let t = Instant::now();
        writer.written.clear();
        let outcome = run_one(exp, &mut writer, &mut cache);
        let failed = outcome.is_err();
        let error = match outcome {
            Ok(c) => {
                criteria.extend(c);
                None
            }
            Err(e) => Some(e.to_string()),
        };
        records.push(ExperimentRecord {
            experiment: exp,
            status: if failed { Status::Failed } else { Status::Ok },
            error,
            artifacts: std::mem::take(&mut writer.written),
            seconds: t.elapsed().as_secs_f64(),
        });
        if failed && cfg.fail_fast {
            break;
        }
    }
    if !records.is_empty() {
        criteria.push(CriterionResult {
            id: 9,
            name: "determinism".into(),
            verdict: Verdict::NotEvaluated,
            detail: "needs two runs; compare the artifacts of both".into(),
        });
    }
    criteria.sort_by_key(|c| c.id);
    let manifest = RunManifest {
        config_hash: writer.hash.clone(),
        tool_version: TOOL_VERSION.into(),
        config: writer.echo.clone(),
        output_dir: cfg.output_dir.clone(),
        experiments: records,
        criteria,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    fs::write(
        cfg.output_dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(manifest)
}

/// Names of the numeric artifacts listed in a manifest.
pub fn artifact_names(manifest: &RunManifest) -> Vec<String> {
    manifest
        .experiments
        .iter()
        .flat_map(|e| e.artifacts.iter().cloned())
        .collect()
}

// ---------------------------------------------------------------------------
// Report

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub text: String,
    /// Plot-data files written, relative to the report directory.
    pub plot_files: Vec<String>,
    /// Artifacts listed in the manifest but missing or unreadable.
    pub gaps: Vec<String>,
    /// The manifest lists no experiments.
    pub empty: bool,
}

fn load_result<T: DeserializeOwned>(dir: &Path, name: &str, gaps: &mut Vec<String>) -> Option<T> {
    let parsed = fs::read_to_string(dir.join(name))
        .ok()
        .and_then(|s| serde_json::from_str::<ArtifactIn<T>>(&s).ok());
    if parsed.is_none() {
        gaps.push(name.to_string());
    }
    parsed.map(|a| a.result)
}

fn write_plot(dir: &Path, name: &str, header: &str, rows: &[String], files: &mut Vec<String>) -> Result<()> {
    let mut f = fs::File::create(dir.join(name))?;
    writeln!(f, "{header}")?;
    for r in rows {
        writeln!(f, "{r}")?;
    }
    files.push(name.to_string());
    Ok(())
}

fn fit_rows(points: &[(f64, f64)], slope: f64, intercept: f64) -> Vec<String> {
    points
        .iter()
        .map(|&(x, y)| {
            let fit = intercept + slope * x;
            format!("{x},{y},{fit},{}", y - fit)
        })
        .collect()
}

fn fmt_estimate(e: &ExponentEstimate) -> String {
    format!("{:.4} +- {:.4} (R2 {:.4}, {} points)", e.value, e.standard_error, e.r_squared, e.points)
}

/// Builds a human-readable summary plus plot-data files (log-log series,
/// fit lines and residuals) from the artifacts a manifest lists.
pub fn export_report(manifest: &RunManifest, report_dir: &Path) -> Result<Report> {
    let dir = &manifest.output_dir;
    let mut gaps = Vec::new();
    let mut files = Vec::new();
    let mut text = String::new();
    if manifest.experiments.is_empty() {
        return Ok(Report {
            text,
            plot_files: files,
            gaps,
            empty: true,
        });
    }
    fs::create_dir_all(report_dir)?;
    for name in artifact_names(manifest) {
        if !dir.join(&name).is_file() {
            gaps.push(name);
        }
    }
    text.push_str(&format!(
        "carpet {} report, config {}\n\n",
        manifest.tool_version, manifest.config_hash
    ));
    let listed = |name: &str| artifact_names(manifest).iter().any(|a| a == name);

    if listed("harnack.json") {
        if let Some(s) = load_result::<HarnackSweep>(dir, "harnack.json", &mut gaps) {
            text.push_str("Harnack sweep\n  n  C_H(n)              rho(n)\n");
            for r in &s.reports {
                text.push_str(&format!("  {:<2} {:<19.12} {:.12}\n", r.level, r.constant, r.rho));
            }
            text.push('\n');
            let rows: Vec<String> = s.reports.iter().map(|r| format!("{},{},{}", r.level, r.constant, r.rho)).collect();
            write_plot(report_dir, "plot_harnack.csv", "n,constant,rho", &rows, &mut files)?;
        }
    }
    if listed("exponents.json") {
        if let Some(s) = load_result::<ExponentSummary>(dir, "exponents.json", &mut gaps) {
            text.push_str("Exponents\n");
            text.push_str(&format!("  d_f   {:.6}\n", s.hausdorff));
            text.push_str(&format!("  d_s   {}\n", fmt_estimate(&s.ds)));
            text.push_str(&format!("  d_w   {}\n", fmt_estimate(&s.dw)));
            text.push_str(&format!("  2d_f/d_s {:.4}, gap {:.4}\n\n", s.predicted_dw, s.relation_gap));
            let (lo, hi) = s.ds.fit_window;
            let pts: Vec<(f64, f64)> = s
                .diagonal
                .iter()
                .filter(|(t, p)| (*t as f64) >= lo && (*t as f64) <= hi && *p > 0.0)
                .map(|&(t, p)| ((t as f64).ln(), p.ln()))
                .collect();
            let rows = fit_rows(&pts, s.ds.fit.slope, s.ds.fit.intercept);
            write_plot(report_dir, "plot_diagonal.csv", "ln_t,ln_p,fit,residual", &rows, &mut files)?;
            let pts: Vec<(f64, f64)> = s.exit_times.iter().map(|&(r, t)| (r.ln(), t.ln())).collect();
            let rows = fit_rows(&pts, s.dw.fit.slope, s.dw.fit.intercept);
            write_plot(report_dir, "plot_exit_times.csv", "ln_r,ln_exit_time,fit,residual", &rows, &mut files)?;
        }
    }
    if listed("regimes.json") {
        if let Some(s) = load_result::<RegimeSummary>(dir, "regimes.json", &mut gaps) {
            text.push_str("Regime fits\n");
            for (name, e, n) in [
                ("sub-Gaussian", &s.fit.sub_gaussian, s.fit.sub_gaussian_pairs),
                ("Gaussian", &s.fit.gaussian, s.fit.gaussian_pairs),
            ] {
                match e {
                    Some(e) => text.push_str(&format!("  {name:<13} slope {} over {n} pairs\n", fmt_estimate(e))),
                    None => text.push_str(&format!("  {name:<13} no fit ({n} pairs)\n")),
                }
            }
            text.push('\n');
            let spt = s.fit.steps_per_time;
            let (mut sub, mut gau) = (Vec::new(), Vec::new());
            for r in &s.samples {
                if !(r.probability > heat::PROBABILITY_FLOOR) {
                    continue;
                }
                let t = r.steps as f64 / spt;
                if r.distance <= t {
                    sub.push(((r.distance.powf(s.dw) / t).powf(1.0 / (s.dw - 1.0)), -(r.probability * t.powf(s.ds / 2.0)).ln()));
                } else {
                    gau.push((r.distance * r.distance / t, -r.probability.ln()));
                }
            }
            if let Some(e) = &s.fit.sub_gaussian {
                let rows = fit_rows(&sub, e.fit.slope, e.fit.intercept);
                write_plot(report_dir, "plot_sub_gaussian.csv", "scaled_distance,neg_log_p,fit,residual", &rows, &mut files)?;
            }
            if let Some(e) = &s.fit.gaussian {
                let rows = fit_rows(&gau, e.fit.slope, e.fit.intercept);
                write_plot(report_dir, "plot_gaussian.csv", "r2_over_t,neg_log_p,fit,residual", &rows, &mut files)?;
            }
        }
    }
    if listed("hitting.json") {
        if let Some(s) = load_result::<HittingSummary>(dir, "hitting.json", &mut gaps) {
            text.push_str(&format!("Hitting probabilities (c1 {}, c2 {})\n", s.c1, s.c2));
            for l in &s.levels {
                text.push_str(&format!("  m={} r={} min {:.6} mean {:.6} max {:.6}\n", l.m, l.radius, l.min, l.mean, l.max));
            }
            text.push_str(&format!("  variation of minima {:.4}\n\n", s.variation));
            let rows: Vec<String> = s.levels.iter().map(|l| format!("{},{},{},{},{}", l.m, l.radius, l.min, l.mean, l.max)).collect();
            write_plot(report_dir, "plot_hitting.csv", "m,radius,min,mean,max", &rows, &mut files)?;
        }
    }
    if listed("coupling.json") {
        if let Some(s) = load_result::<CouplingSummary>(dir, "coupling.json", &mut gaps) {
            text.push_str("Coupling\n");
            for l in &s.levels {
                text.push_str(&format!(
                    "  n={} p_adjacent {:.4} +- {:.4}  p_rho_pair {:.4} +- {:.4}  rho {:.6}  bound {:.6}  upgrade {:.4}\n",
                    l.n,
                    l.adjacent.probability,
                    l.adjacent.standard_error,
                    l.rho_pair_estimate.probability,
                    l.rho_pair_estimate.standard_error,
                    l.rho,
                    l.bound,
                    l.upgrade.probability
                ));
            }
            text.push_str(&format!(
                "  marginal chi-square {:.3} on {} dof, p-value {:.4}\n\n",
                s.marginal.statistic, s.marginal.degrees_of_freedom, s.marginal.p_value
            ));
        }
    }
    if listed("resistance.json") {
        if let Some(s) = load_result::<ResistanceSummary>(dir, "resistance.json", &mut gaps) {
            text.push_str("Face resistance\n");
            for f in &s.faces {
                text.push_str(&format!("  n={} R={}\n", f.level, f.value));
            }
            text.push_str(&format!("  ratios {:?}\n", s.ratios));
            text.push_str(&format!("  origin to infinity: {:?}\n\n", s.origin.extrapolation));
            let pts: Vec<(f64, f64)> = s
                .faces
                .iter()
                .filter(|f| f.value > 0.0)
                .map(|f| (f.level as f64, f.value.ln()))
                .collect();
            let rows: Vec<String> = pts.iter().map(|(n, r)| format!("{n},{r}")).collect();
            write_plot(report_dir, "plot_face_resistance.csv", "n,ln_resistance", &rows, &mut files)?;
        }
    }
    if listed("capacity.json") {
        if let Some(s) = load_result::<CapacitySummary>(dir, "capacity.json", &mut gaps) {
            text.push_str(&format!("Capacity check (d={}, k={}, a={})\n", s.d, s.k, s.a));
            text.push_str(&format!("  d_s {}\n", fmt_estimate(&s.ds)));
            match &s.outcome {
                CapacityOutcome::HypothesisNotMet { ds, .. } => {
                    text.push_str(&format!("  hypothesis not met: d_s {ds} does not exceed 2\n\n"))
                }
                CapacityOutcome::Checked { report } => {
                    text.push_str(&format!("  zeta {:.4} +- {:.4}\n", report.zeta, report.zeta_se));
                    for e in &report.entries {
                        text.push_str(&format!(
                            "  |A|={} R_N={:?} R={:?} c={:?}\n",
                            e.size,
                            e.report.resistances,
                            e.report.extrapolated(),
                            e.constant
                        ));
                    }
                    text.push_str(&format!("  spread {:?}\n\n", report.spread));
                }
            }
        }
    }
    text.push_str("Criteria\n");
    for c in &manifest.criteria {
        text.push_str(&format!("  {} {:?}: {} ({})\n", c.id, c.verdict, c.name, c.detail));
    }
    if !gaps.is_empty() {
        gaps.sort();
        gaps.dedup();
        text.push_str(&format!("\nMissing artifacts: {}\n", gaps.join(", ")));
    }
    fs::write(report_dir.join("report.txt"), &text)?;
    files.push("report.txt".into());
    Ok(Report {
        text,
        plot_files: files,
        gaps,
        empty: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_override() {
        let mut cfg = ExperimentConfig::parse("# comment\nseed = 7\nharnack_levels = 2,3\n\nexperiments = harnack,oracles\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.harnack_levels, vec![2, 3]);
        assert_eq!(cfg.experiments, vec![Experiment::Harnack, Experiment::Oracles]);
        cfg.apply_override("seed=9").unwrap();
        assert_eq!(cfg.seed, 9);
        assert!(cfg.apply_override("nonsense=1").is_err());
        assert!(matches!(ExperimentConfig::parse("seed 7"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(ExperimentConfig::parse("\nseed = x"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn echo_round_trips_through_parse() {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = 123;
        cfg.ds_window = (8, 512);
        let text: String = cfg.echo().iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        let back = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(back.echo(), cfg.echo());
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn output_dir_does_not_change_the_hash() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.output_dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
    }

    #[test]
    fn empty_selector_gives_empty_manifest() {
        let dir = std::env::temp_dir().join(format!("carpet-empty-{}", std::process::id()));
        let mut cfg = ExperimentConfig::default();
        cfg.experiments.clear();
        cfg.output_dir = dir.clone();
        let m = run_suite(&cfg).unwrap();
        assert!(m.experiments.is_empty() && m.criteria.is_empty());
        assert_eq!(m.config["experiments"], "");
        let r = export_report(&m, &dir.join("report")).unwrap();
        assert!(r.empty);
        fs::remove_dir_all(dir).unwrap();
    }
}
