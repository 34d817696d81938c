//! Monte-Carlo experiments: scenario configuration, per-draw evaluation of
//! every precoding scheme, sweeps, the sphere experiment, and the CSV/JSON
//! artifacts they write.
//!
//! Seeds: with master seed `s`, features use `derive_named(s, "train")` /
//! `"test"`, draw `d` uses `derive(derive_named(s, "channel"), d)` for the
//! channel, `derive(derive_named(s, "noise"), d)` for receiver noise, and
//! `derive(derive_named(s, scheme), d)` for the scheme's own randomness.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{identity_precoder, iwf_precoder, lmmse_nmse, lmmse_precoder, proposed_latency, random_precoder};
use crate::bca::{random_init, solve_bca};
use crate::channel::{dbm_to_watts, draw_channel, ChannelDims, ChannelRealization, LinkBudget};
use crate::classifier::eval_accuracy;
use crate::error::{Error, Result};
use crate::feature_model::{estimate_stats, sample_gm, signal_dims, FeatureStats, GmSpec, SampleSet};
use crate::linalg::{real_part, CMat, Field};
use crate::objective::{delta_r, Mcr2Params, PrecoderSet};
use crate::pga::{ellipsoid_volume, solve_pga};
use crate::seeds;
use crate::solver::{InitMode, SolverOptions, SolverReport};

/// A precoding scheme evaluated by the harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scheme {
    /// Coding-rate-reduction precoder by block coordinate ascent.
    #[serde(rename = "mcr2")]
    Mcr2,
    /// Same objective, projected gradient ascent.
    #[serde(rename = "mcr2-pga")]
    Mcr2Pga,
    #[serde(rename = "lmmse")]
    Lmmse,
    #[serde(rename = "iwf")]
    Iwf,
    #[serde(rename = "random")]
    Random,
    #[serde(rename = "identity")]
    Identity,
}

impl Scheme {
    pub const ALL: [Scheme; 6] = [Scheme::Mcr2, Scheme::Mcr2Pga, Scheme::Lmmse, Scheme::Iwf, Scheme::Random, Scheme::Identity];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Mcr2 => "mcr2",
            Scheme::Mcr2Pga => "mcr2-pga",
            Scheme::Lmmse => "lmmse",
            Scheme::Iwf => "iwf",
            Scheme::Random => "random",
            Scheme::Identity => "identity",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown scheme `{s}`")))
    }
}

/// Where the feature distribution comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureSource {
    /// [`GmSpec::synthetic`] with the given parameters.
    Synthetic {
        classes: usize,
        rank: usize,
        spread: f64,
        seed: u64,
    },
    /// An explicit mixture.
    Mixture { spec: GmSpec },
}

impl FeatureSource {
    pub fn spec(&self, dim: usize) -> Result<GmSpec> {
        match self {
            FeatureSource::Synthetic { classes, rank, spread, seed } => GmSpec::synthetic(*classes, dim, *rank, *spread, *seed),
            FeatureSource::Mixture { spec } => Ok(spec.clone()),
        }
    }
}

/// One Monte-Carlo scenario. Defaults: two devices, `D_k = 8`, `N_t = 4`, `N_r = 8`, `T = 1`, `B = 10 kHz`,
/// `N0 = −170 dBm/Hz`, `d = 240 m`, `κ = 1`, `ε = 1e-3`, `P₀ = 0 dBm`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub mode: Field,
    /// Real feature dimension `D_k` per device.
    pub feature_dims: Vec<usize>,
    pub tx_antennas: usize,
    pub rx_antennas: usize,
    pub slots: usize,
    /// Per-device transmit power `P₀`; the budget on `tr(V_k Σ^{(kk)} V_k^H)` is `T P₀`.
    pub p0_dbm: f64,
    pub bandwidth_hz: f64,
    pub noise_density_dbm_hz: f64,
    pub distance_m: f64,
    pub rician_k: f64,
    /// One channel draw reused over the `T` slots.
    pub block_fading: bool,
    /// Divide the channel by `δ₀` so the noise has unit power. `ε` then sets
    /// the coding precision relative to the noise level.
    pub normalize_noise: bool,
    pub eps: f64,
    pub features: FeatureSource,
    pub train_samples: usize,
    pub test_samples: usize,
    pub noise_trials: usize,
    pub channel_draws: usize,
    pub schemes: Vec<Scheme>,
    pub solver: SolverOptions,
    pub seed: u64,
    /// Store the per-iteration objective of iterative schemes in `traces.json`.
    pub keep_traces: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            mode: Field::Complex,
            feature_dims: vec![8, 8],
            tx_antennas: 4,
            rx_antennas: 8,
            slots: 1,
            p0_dbm: 0.0,
            bandwidth_hz: 10e3,
            noise_density_dbm_hz: -170.0,
            distance_m: 240.0,
            rician_k: 1.0,
            block_fading: true,
            normalize_noise: true,
            eps: 1e-3,
            features: FeatureSource::Synthetic {
                classes: 10,
                rank: 3,
                spread: 0.5,
                seed: 1,
            },
            train_samples: 2000,
            test_samples: 1000,
            noise_trials: 1,
            channel_draws: 100,
            schemes: vec![Scheme::Mcr2, Scheme::Lmmse, Scheme::Iwf, Scheme::Random],
            solver: SolverOptions::default(),
            seed: 0,
            keep_traces: true,
        }
    }
}

impl ScenarioConfig {
    pub fn devices(&self) -> usize {
        self.feature_dims.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dims.iter().sum()
    }

    pub fn p0_watts(&self) -> f64 {
        dbm_to_watts(self.p0_dbm)
    }

    /// `T P₀` for every device.
    pub fn budgets(&self) -> Vec<f64> {
        vec![self.slots as f64 * self.p0_watts(); self.devices()]
    }

    pub fn tx_dims(&self) -> Vec<usize> {
        vec![self.slots * self.tx_antennas; self.devices()]
    }

    pub fn link_budget(&self) -> LinkBudget {
        LinkBudget {
            bandwidth_hz: self.bandwidth_hz,
            noise_density_dbm_hz: self.noise_density_dbm_hz,
            distance_m: self.distance_m,
            rician_k: self.rician_k,
            power_budgets_w: vec![self.p0_watts(); self.devices()],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dims.is_empty() || self.feature_dims.contains(&0) {
            return Err(Error::InvalidInput("every device needs a positive feature dimension".into()));
        }
        if !self.feature_dim().is_multiple_of(2) {
            return Err(Error::InvalidInput(format!("total feature dimension {} must be even", self.feature_dim())));
        }
        signal_dims(&self.feature_dims, self.mode)?;
        if [self.tx_antennas, self.rx_antennas, self.slots, self.train_samples, self.test_samples, self.noise_trials, self.channel_draws]
            .contains(&0)
        {
            return Err(Error::InvalidInput("antenna, slot and Monte-Carlo counts must be at least 1".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::InvalidInput("no schemes requested".into()));
        }
        if !(self.eps > 0.0) || !self.p0_dbm.is_finite() {
            return Err(Error::InvalidInput("ε must be positive and P₀ finite".into()));
        }
        self.link_budget().validate()?;
        self.solver.validate()?;
        let spec = self.features.spec(self.feature_dim())?;
        if spec.dim() != self.feature_dim() {
            return Err(Error::InvalidInput(format!(
                "feature mixture has dimension {}, scenario expects {}",
                spec.dim(),
                self.feature_dim()
            )));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Training statistics and the held-out test set of a scenario.
#[derive(Clone, Debug)]
pub struct FeatureData {
    pub spec: GmSpec,
    pub stats: FeatureStats,
    pub test: SampleSet,
}

pub fn prepare_features(cfg: &ScenarioConfig) -> Result<FeatureData> {
    let spec = cfg.features.spec(cfg.feature_dim())?;
    let train = sample_gm(&spec, cfg.train_samples, seeds::derive_named(cfg.seed, "train"))?;
    let test = sample_gm(&spec, cfg.test_samples, seeds::derive_named(cfg.seed, "test"))?;
    let stats = estimate_stats(&train, &cfg.feature_dims, cfg.mode)?;
    Ok(FeatureData { spec, stats, test })
}

/// The channel of draw `d`, normalized when the scenario asks for it.
pub fn scenario_channel(cfg: &ScenarioConfig, draw: usize) -> Result<ChannelRealization> {
    let dims = ChannelDims::uniform(cfg.devices(), cfg.rx_antennas, cfg.tx_antennas, cfg.slots);
    let seed = seeds::derive(seeds::derive_named(cfg.seed, "channel"), draw as u64);
    let chan = draw_channel(&dims, &cfg.link_budget(), cfg.mode, cfg.block_fading, seed)?;
    if cfg.normalize_noise {
        chan.normalized()
    } else {
        Ok(chan)
    }
}

pub fn scheme_seed(master: u64, scheme: Scheme, draw: usize) -> u64 {
    seeds::derive(seeds::derive_named(master, scheme.name()), draw as u64)
}

pub fn noise_seed(master: u64, draw: usize) -> u64 {
    seeds::derive(seeds::derive_named(master, "noise"), draw as u64)
}

/// Computes one scheme's precoder for a draw. Both objective-based schemes
/// start from the same seeded random point.
pub fn design_precoder(
    scheme: Scheme,
    cfg: &ScenarioConfig,
    draw: usize,
    chan: &ChannelRealization,
    stats: &FeatureStats,
) -> Result<(PrecoderSet, Option<SolverReport>)> {
    let budgets = cfg.budgets();
    let params = Mcr2Params::new(cfg.eps, chan)?;
    let opts = SolverOptions {
        seed: scheme_seed(cfg.seed, scheme, draw),
        ..cfg.solver.clone()
    };
    let start = |opts: &SolverOptions| -> Result<PrecoderSet> {
        match cfg.solver.init {
            InitMode::Random => random_init(chan, stats, &budgets, scheme_seed(cfg.seed, Scheme::Mcr2, draw)),
            InitMode::Lmmse => Ok(lmmse_precoder(chan, stats, &budgets, opts)?.0),
        }
    };
    Ok(match scheme {
        Scheme::Mcr2 => {
            let (v, r) = solve_bca(&start(&opts)?, chan, stats, &params, &opts)?;
            (v, Some(r))
        }
        Scheme::Mcr2Pga => {
            let (v, r) = solve_pga(&start(&opts)?, chan, stats, &params, &opts)?;
            (v, Some(r))
        }
        Scheme::Lmmse => {
            let (v, r) = lmmse_precoder(chan, stats, &budgets, &opts)?;
            (v, Some(r))
        }
        Scheme::Iwf => {
            let (v, r) = iwf_precoder(chan, stats, &budgets, &opts)?;
            (v, Some(r))
        }
        Scheme::Random => (random_precoder(&cfg.tx_dims(), stats, &budgets, opts.seed)?, None),
        Scheme::Identity => (identity_precoder(&cfg.tx_dims(), &stats.device_dims, cfg.p0_watts())?, None),
    })
}

/// Metrics of one scheme on one channel draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeResult {
    pub scheme: Scheme,
    pub delta_r: f64,
    pub accuracy: f64,
    pub nmse: f64,
    pub latency_s: f64,
    /// `max_k tr(V_k Σ^{(kk)} V_k^H) / budget_k`.
    pub power_ratio: f64,
    pub iterations: usize,
    pub converged: bool,
    pub confusion: Vec<Vec<u64>>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub trace: Vec<f64>,
    pub precoder: PrecoderSet,
}

impl SchemeResult {
    pub const METRICS: [&'static str; 7] = ["delta_r", "accuracy", "nmse", "latency_s", "power_ratio", "iterations", "converged"];

    pub fn metric(&self, name: &str) -> Option<f64> {
        Some(match name {
            "delta_r" => self.delta_r,
            "accuracy" => self.accuracy,
            "nmse" => self.nmse,
            "latency_s" => self.latency_s,
            "power_ratio" => self.power_ratio,
            "iterations" => self.iterations as f64,
            "converged" => f64::from(u8::from(self.converged)),
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrawRecord {
    pub draw: usize,
    pub results: Vec<SchemeResult>,
}

/// Mean and standard error of one metric over draws.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub scheme: Scheme,
    pub metric: String,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ScenarioConfig,
    pub config_hash: String,
    pub aggregates: Vec<Aggregate>,
    pub draws: Vec<DrawRecord>,
}

impl RunRecord {
    pub fn aggregate(&self, scheme: Scheme, metric: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.scheme == scheme && a.metric == metric)
    }

    /// Metric values of `scheme` in draw order.
    pub fn series(&self, scheme: Scheme, metric: &str) -> Vec<f64> {
        self.draws
            .iter()
            .filter_map(|d| d.results.iter().find(|r| r.scheme == scheme))
            .filter_map(|r| r.metric(metric))
            .collect()
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn evaluate_draw(cfg: &ScenarioConfig, data: &FeatureData, draw: usize) -> Result<DrawRecord> {
    let chan = scenario_channel(cfg, draw).map_err(|e| Error::Scenario {
        draw,
        scheme: "channel".into(),
        source: Box::new(e),
    })?;
    let params = Mcr2Params::new(cfg.eps, &chan)?;
    let mut results = Vec::with_capacity(cfg.schemes.len());
    for &scheme in &cfg.schemes {
        let run = || -> Result<SchemeResult> {
            let (v, report) = design_precoder(scheme, cfg, draw, &chan, &data.stats)?;
            let acc = eval_accuracy(&v, &chan, &data.stats, &data.test, cfg.noise_trials, noise_seed(cfg.seed, draw))?;
            let power_ratio = v
                .powers(&data.stats)
                .iter()
                .zip(&v.budgets)
                .map(|(p, b)| if *b > 0.0 { p / b } else { f64::INFINITY })
                .fold(0.0, f64::max);
            let (iterations, converged, trace) = match report {
                Some(r) => (r.iterations, r.converged, if cfg.keep_traces { r.trace } else { Vec::new() }),
                None => (0, true, Vec::new()),
            };
            Ok(SchemeResult {
                scheme,
                delta_r: delta_r(&v, &chan, &data.stats, &params)?,
                accuracy: acc.accuracy,
                nmse: lmmse_nmse(&v, &chan, &data.stats)?,
                latency_s: proposed_latency(cfg.slots, cfg.bandwidth_hz),
                power_ratio,
                iterations,
                converged,
                confusion: acc.confusion,
                trace,
                precoder: v,
            })
        };
        results.push(run().map_err(|e| Error::Scenario {
            draw,
            scheme: scheme.name().into(),
            source: Box::new(e),
        })?);
    }
    Ok(DrawRecord { draw, results })
}

fn aggregate(cfg: &ScenarioConfig, draws: &[DrawRecord]) -> Vec<Aggregate> {
    let mut out = Vec::new();
    for &scheme in &cfg.schemes {
        for metric in SchemeResult::METRICS {
            let xs: Vec<f64> = draws
                .iter()
                .filter_map(|d| d.results.iter().find(|r| r.scheme == scheme))
                .filter_map(|r| r.metric(metric))
                .collect();
            let (mean, stderr) = mean_stderr(&xs);
            out.push(Aggregate {
                scheme,
                metric: metric.to_string(),
                mean,
                stderr,
                n: xs.len(),
            });
        }
    }
    out
}

/// Runs every channel draw in parallel and aggregates in draw order.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let data = prepare_features(cfg)?;
    let draws = (0..cfg.channel_draws)
        .into_par_iter()
        .map(|d| evaluate_draw(cfg, &data, d))
        .collect::<Result<Vec<_>>>()?;
    Ok(RunRecord {
        config: cfg.clone(),
        config_hash: cfg.hash(),
        aggregates: aggregate(cfg, &draws),
        draws,
    })
}

#[derive(Serialize)]
struct RunSummary<'a> {
    config: &'a ScenarioConfig,
    config_hash: &'a str,
    aggregates: &'a [Aggregate],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub draw: usize,
    pub scheme: Scheme,
    pub delta_r: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub accuracy: Vec<f64>,
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Writes `run.json` (config, hash, aggregates), `draws.json` (per-draw
/// records with precoders), `results.csv` (long: draw, scheme, metric,
/// value), `aggregate.csv`, `confusion.csv` and, when traces were kept,
/// `traces.json`.
pub fn write_run(record: &RunRecord, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(
        &dir.join("run.json"),
        &RunSummary {
            config: &record.config,
            config_hash: &record.config_hash,
            aggregates: &record.aggregates,
        },
    )?;
    write_json(&dir.join("draws.json"), &record.draws)?;

    let mut w = csv::Writer::from_path(dir.join("results.csv"))?;
    w.write_record(["draw", "scheme", "metric", "value"])?;
    for d in &record.draws {
        for r in &d.results {
            for metric in SchemeResult::METRICS {
                let value = r.metric(metric).expect("known metric");
                w.write_record([d.draw.to_string(), r.scheme.to_string(), metric.to_string(), value.to_string()])?;
            }
        }
    }
    w.flush()?;

    write_aggregate_csv(&record.aggregates, &dir.join("aggregate.csv"))?;

    let mut w = csv::Writer::from_path(dir.join("confusion.csv"))?;
    w.write_record(["draw", "scheme", "true_class", "predicted_class", "count"])?;
    for d in &record.draws {
        for r in &d.results {
            for (t, row) in r.confusion.iter().enumerate() {
                for (p, n) in row.iter().enumerate() {
                    w.write_record([d.draw.to_string(), r.scheme.to_string(), t.to_string(), p.to_string(), n.to_string()])?;
                }
            }
        }
    }
    w.flush()?;

    let traces: Vec<TraceEntry> = record
        .draws
        .iter()
        .flat_map(|d| {
            d.results.iter().filter(|r| !r.trace.is_empty()).map(move |r| TraceEntry {
                draw: d.draw,
                scheme: r.scheme,
                delta_r: r.trace.clone(),
                accuracy: Vec::new(),
            })
        })
        .collect();
    if !traces.is_empty() {
        write_json(&dir.join("traces.json"), &traces)?;
    }
    Ok(())
}

/// One row per scheme: `scheme, <metric>_mean, <metric>_stderr, ...`.
pub fn write_aggregate_csv(aggregates: &[Aggregate], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["scheme".to_string(), "n".to_string()];
    for m in SchemeResult::METRICS {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_stderr"));
    }
    w.write_record(&header)?;
    let mut by_scheme: BTreeMap<Scheme, Vec<&Aggregate>> = BTreeMap::new();
    for a in aggregates {
        by_scheme.entry(a.scheme).or_default().push(a);
    }
    for (scheme, rows) in by_scheme {
        let mut rec = vec![scheme.to_string(), rows.first().map_or(0, |a| a.n).to_string()];
        for m in SchemeResult::METRICS {
            let a = rows.iter().find(|a| a.metric == m).expect("every metric aggregated");
            rec.push(a.mean.to_string());
            rec.push(a.stderr.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Scenario parameter varied by [`sweep`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// `P₀` in dBm.
    Power,
    Slots,
    RxAntennas,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Power => "p0_dbm",
            SweepAxis::Slots => "slots",
            SweepAxis::RxAntennas => "rx_antennas",
        }
    }

    pub fn apply(self, cfg: &ScenarioConfig, value: f64) -> Result<ScenarioConfig> {
        let mut out = cfg.clone();
        let count = || -> Result<usize> {
            if value >= 1.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::InvalidInput(format!("{} must be a positive integer, got {value}", self.name())))
            }
        };
        match self {
            SweepAxis::Power => out.p0_dbm = value,
            SweepAxis::Slots => out.slots = count()?,
            SweepAxis::RxAntennas => out.rx_antennas = count()?,
        }
        Ok(out)
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "power" | "p0_dbm" => Ok(SweepAxis::Power),
            "slots" | "t" => Ok(SweepAxis::Slots),
            "rx_antennas" | "nr" => Ok(SweepAxis::RxAntennas),
            _ => Err(Error::InvalidInput(format!("unknown sweep axis `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub record: RunRecord,
}

/// Runs the scenario once per axis value.
pub fn sweep(cfg: &ScenarioConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(Error::InvalidInput("sweep needs at least one value".into()));
    }
    values
        .iter()
        .map(|&value| {
            let point = axis.apply(cfg, value)?;
            Ok(SweepPoint {
                value,
                record: run_scenario(&point)?,
            })
        })
        .collect()
}

/// Writes `sweep.csv` (one row per value and scheme with mean and standard
/// error columns), `results.csv` (long, with the axis value first) and `run.json`.
pub fn write_sweep(points: &[SweepPoint], axis: SweepAxis, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("sweep.csv"))?;
    let mut header = vec![axis.name().to_string(), "scheme".to_string()];
    for m in SchemeResult::METRICS {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_stderr"));
    }
    w.write_record(&header)?;
    for p in points {
        for &scheme in &p.record.config.schemes {
            let mut rec = vec![p.value.to_string(), scheme.to_string()];
            for m in SchemeResult::METRICS {
                let a = p.record.aggregate(scheme, m).expect("every metric aggregated");
                rec.push(a.mean.to_string());
                rec.push(a.stderr.to_string());
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("results.csv"))?;
    w.write_record([axis.name(), "draw", "scheme", "metric", "value"])?;
    for p in points {
        for d in &p.record.draws {
            for r in &d.results {
                for m in SchemeResult::METRICS {
                    let v = r.metric(m).expect("known metric");
                    w.write_record([p.value.to_string(), d.draw.to_string(), r.scheme.to_string(), m.to_string(), v.to_string()])?;
                }
            }
        }
    }
    w.flush()?;

    #[derive(Serialize)]
    struct Point<'a> {
        value: f64,
        config_hash: &'a str,
        aggregates: &'a [Aggregate],
    }
    #[derive(Serialize)]
    struct Summary<'a> {
        axis: SweepAxis,
        base: &'a ScenarioConfig,
        points: Vec<Point<'a>>,
    }
    write_json(
        &dir.join("run.json"),
        &Summary {
            axis,
            base: &points[0].record.config,
            points: points
                .iter()
                .map(|p| Point {
                    value: p.value,
                    config_hash: &p.record.config_hash,
                    aggregates: &p.record.aggregates,
                })
                .collect(),
        },
    )
}

/// ΔR and Monte-Carlo accuracy of the BCA precoder after each of the first
/// `iterations` outer iterations (index 0 is the starting point). Every
/// iterate is scored with the same noise seed.
pub fn monotonicity_study(cfg: &ScenarioConfig, data: &FeatureData, draw: usize, iterations: usize) -> Result<TraceEntry> {
    let chan = scenario_channel(cfg, draw)?;
    let params = Mcr2Params::new(cfg.eps, &chan)?;
    let budgets = cfg.budgets();
    let v0 = random_init(&chan, &data.stats, &budgets, scheme_seed(cfg.seed, Scheme::Mcr2, draw))?;
    let opts = SolverOptions {
        max_iters: iterations,
        tol: f64::MIN_POSITIVE,
        record_history: true,
        ..cfg.solver.clone()
    };
    let (_, report) = solve_bca(&v0, &chan, &data.stats, &params, &opts)?;
    let accuracy = report
        .history
        .par_iter()
        .map(|v| Ok(eval_accuracy(v, &chan, &data.stats, &data.test, cfg.noise_trials, noise_seed(cfg.seed, draw))?.accuracy))
        .collect::<Result<Vec<_>>>()?;
    Ok(TraceEntry {
        draw,
        scheme: Scheme::Mcr2,
        delta_r: report.trace,
        accuracy,
    })
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(x: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..x.len()).collect();
        idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
        let mut r = vec![0.0; x.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    assert_eq!(a.len(), b.len(), "spearman needs paired samples");
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// The three-class sphere experiment: one real 3x3 device, unit noise power.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SphereConfig {
    /// `P₀ / δ₀²` in dB.
    pub snr_db: f64,
    pub channel_draws: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub noise_trials: usize,
    pub eps: f64,
    pub solver: SolverOptions,
    pub seed: u64,
}

impl Default for SphereConfig {
    fn default() -> Self {
        Self {
            snr_db: 30.0,
            channel_draws: 100,
            train_samples: 300,
            test_samples: 300,
            noise_trials: 10,
            eps: 1e-3,
            solver: SolverOptions::default(),
            seed: 0,
        }
    }
}

impl SphereConfig {
    pub fn p0(&self) -> f64 {
        10f64.powf(self.snr_db / 10.0)
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(serde_json::to_string(self).expect("config serializes").as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Per-draw outcome of the sphere experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphereDraw {
    pub draw: usize,
    pub mcr2_accuracy: f64,
    pub identity_accuracy: f64,
    pub mcr2_volume: f64,
    pub identity_volume: f64,
    pub mcr2_delta_r: f64,
    pub identity_delta_r: f64,
    /// `tr(VΣVᵀ) / P₀` of `√P₀ I`, reported rather than enforced.
    pub identity_power_ratio: f64,
}

/// Received noise-free features and ellipsoids of one scheme on the first draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeGeometry {
    pub scheme: Scheme,
    /// `H V z` per test sample, row-wise.
    pub received: Vec<[f64; 3]>,
    /// `H V Vᵀ Hᵀ`, row-major.
    pub ellipsoid: [[f64; 3]; 3],
    pub volume: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub snr_db: f64,
    pub labels: Vec<usize>,
    pub schemes: Vec<SchemeGeometry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphereRecord {
    pub config: SphereConfig,
    pub config_hash: String,
    pub draws: Vec<SphereDraw>,
    pub geometry: Geometry,
}

impl SphereRecord {
    pub fn accuracies(&self, scheme: Scheme) -> Vec<f64> {
        self.draws
            .iter()
            .map(|d| if scheme == Scheme::Identity { d.identity_accuracy } else { d.mcr2_accuracy })
            .collect()
    }

    pub fn volumes(&self, scheme: Scheme) -> Vec<f64> {
        self.draws
            .iter()
            .map(|d| if scheme == Scheme::Identity { d.identity_volume } else { d.mcr2_volume })
            .collect()
    }
}

fn to_rows(m: &CMat) -> [[f64; 3]; 3] {
    let r = real_part(m);
    [[r[(0, 0)], r[(0, 1)], r[(0, 2)]], [r[(1, 0)], r[(1, 1)], r[(1, 2)]], [r[(2, 0)], r[(2, 1)], r[(2, 2)]]]
}

/// MCR² (BCA) against `V = √P₀ I` on real i.i.d. channels. Channel draw `d`
/// depends only on the seed, so runs at different SNRs share channels.
pub fn sphere_experiment(cfg: &SphereConfig) -> Result<SphereRecord> {
    if cfg.channel_draws == 0 || cfg.train_samples == 0 || cfg.test_samples == 0 || cfg.noise_trials == 0 {
        return Err(Error::InvalidInput("sphere experiment counts must be at least 1".into()));
    }
    let spec = GmSpec::sphere_three_class();
    let train = sample_gm(&spec, cfg.train_samples, seeds::derive_named(cfg.seed, "train"))?;
    let test = sample_gm(&spec, cfg.test_samples, seeds::derive_named(cfg.seed, "test"))?;
    let stats = estimate_stats(&train, &[3], Field::Real)?;
    let p0 = cfg.p0();
    let dims = ChannelDims::uniform(1, 3, 3, 1);
    let link = LinkBudget::standard(1, 0.0);
    let channel = |d: usize| -> Result<ChannelRealization> {
        let seed = seeds::derive(seeds::derive_named(cfg.seed, "channel"), d as u64);
        draw_channel(&dims, &link, Field::Real, true, seed)?.with_noise_power(1.0)
    };
    let run = |d: usize| -> Result<(SphereDraw, [PrecoderSet; 2], ChannelRealization)> {
        let chan = channel(d)?;
        let params = Mcr2Params::new(cfg.eps, &chan)?;
        let opts = SolverOptions {
            seed: seeds::derive(seeds::derive_named(cfg.seed, "mcr2"), d as u64),
            ..cfg.solver.clone()
        };
        let v0 = random_init(&chan, &stats, &[p0], opts.seed)?;
        let (vm, _) = solve_bca(&v0, &chan, &stats, &params, &opts)?;
        let vi = identity_precoder(&[3], &[3], p0)?;
        let noise = seeds::derive(seeds::derive_named(cfg.seed, "noise"), d as u64);
        let h = chan.stacked();
        let rec = SphereDraw {
            draw: d,
            mcr2_accuracy: eval_accuracy(&vm, &chan, &stats, &test, cfg.noise_trials, noise)?.accuracy,
            identity_accuracy: eval_accuracy(&vi, &chan, &stats, &test, cfg.noise_trials, noise)?.accuracy,
            mcr2_volume: ellipsoid_volume(&(h * vm.assembled()))?,
            identity_volume: ellipsoid_volume(&(h * vi.assembled()))?,
            mcr2_delta_r: delta_r(&vm, &chan, &stats, &params)?,
            identity_delta_r: delta_r(&vi, &chan, &stats, &params)?,
            identity_power_ratio: vi.power(0, &stats) / p0,
        };
        Ok((rec, [vm, vi], chan))
    };
    let outcomes = (0..cfg.channel_draws).into_par_iter().map(run).collect::<Result<Vec<_>>>()?;
    let (first, precoders, chan) = &outcomes[0];
    let h = chan.stacked();
    let schemes = [(Scheme::Mcr2, first.mcr2_accuracy, first.mcr2_volume), (Scheme::Identity, first.identity_accuracy, first.identity_volume)]
        .iter()
        .zip(precoders)
        .map(|(&(scheme, accuracy, volume), v)| {
            let a = h * v.assembled();
            let ar = real_part(&a);
            let received = test
                .features
                .column_iter()
                .map(|z| {
                    let y = &ar * z;
                    [y[0], y[1], y[2]]
                })
                .collect();
            SchemeGeometry {
                scheme,
                received,
                ellipsoid: to_rows(&(&a * a.adjoint())),
                volume,
                accuracy,
            }
        })
        .collect();
    let geometry = Geometry {
        snr_db: cfg.snr_db,
        labels: test.labels.clone(),
        schemes,
    };
    Ok(SphereRecord {
        config: cfg.clone(),
        config_hash: cfg.hash(),
        draws: outcomes.into_iter().map(|(d, _, _)| d).collect(),
        geometry,
    })
}

/// Writes `geometry.json`, `results.csv` (long: draw, scheme, metric, value) and `run.json`.
pub fn write_sphere(record: &SphereRecord, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("geometry.json"), &record.geometry)?;
    let mut w = csv::Writer::from_path(dir.join("results.csv"))?;
    w.write_record(["draw", "scheme", "metric", "value"])?;
    for d in &record.draws {
        let rows = [
            ("mcr2", "accuracy", d.mcr2_accuracy),
            ("mcr2", "volume", d.mcr2_volume),
            ("mcr2", "delta_r", d.mcr2_delta_r),
            ("identity", "accuracy", d.identity_accuracy),
            ("identity", "volume", d.identity_volume),
            ("identity", "delta_r", d.identity_delta_r),
            ("identity", "power_ratio", d.identity_power_ratio),
        ];
        for (scheme, metric, value) in rows {
            w.write_record([d.draw.to_string(), scheme.to_string(), metric.to_string(), value.to_string()])?;
        }
    }
    w.flush()?;

    #[derive(Serialize)]
    struct Summary<'a> {
        config: &'a SphereConfig,
        config_hash: &'a str,
        mcr2_accuracy: (f64, f64),
        identity_accuracy: (f64, f64),
        mcr2_median_volume: f64,
        identity_median_volume: f64,
    }
    write_json(
        &dir.join("run.json"),
        &Summary {
            config: &record.config,
            config_hash: &record.config_hash,
            mcr2_accuracy: mean_stderr(&record.accuracies(Scheme::Mcr2)),
            identity_accuracy: mean_stderr(&record.accuracies(Scheme::Identity)),
            mcr2_median_volume: median(&record.volumes(Scheme::Mcr2)),
            identity_median_volume: median(&record.volumes(Scheme::Identity)),
        },
    )
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
