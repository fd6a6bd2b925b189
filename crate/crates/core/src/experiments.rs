//! Reproducible experiment harness: the Laplace AIF-vs-IF tradeoff, the
//! regression AIF-vs-K sweep and Monte Carlo convergence of the
//! location-scale AIF.
//!
//! Every random draw comes from `ChaCha8Rng::seed_from_u64(seed)` with a
//! per-replicate stream, so adding replicates leaves earlier ones unchanged.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::density::{self, BaseDensity};
use crate::designer::{best_split, if_profile_of_spec, Convention};
use crate::error::{AifError, Result};
use crate::estimator::SolveConfig;
use crate::location_scale::{huber_fisher_beta, huber_proposal2, ls_aif, mean_std, population_aif, sample_ls_aif};
use crate::regression::{mean_stderr, regression_aif, RegressionData, RegressionEstimator, RegressionScheme};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Tradeoff,
    RegressionSweep,
    Convergence,
}

impl ExperimentKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tradeoff" => Ok(Self::Tradeoff),
            "regression_sweep" | "sweep" => Ok(Self::RegressionSweep),
            "convergence" => Ok(Self::Convergence),
            other => Err(AifError::Config(format!(
                "unknown experiment '{other}' (expected tradeoff, regression_sweep or convergence)"
            ))),
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            Self::Tradeoff => "tradeoff",
            Self::RegressionSweep => "regression_sweep",
            Self::Convergence => "convergence",
        }
    }
}

/// Law of the covariate entries; all have mean 0 and variance 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateLaw {
    Normal,
    Uniform,
    Rademacher,
}

impl CovariateLaw {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "normal" | "gaussian" => Ok(Self::Normal),
            "uniform" => Ok(Self::Uniform),
            "rademacher" | "sign" => Ok(Self::Rademacher),
            other => Err(AifError::Config(format!(
                "unknown covariate law '{other}' (expected normal, uniform or rademacher)"
            ))),
        }
    }

    fn draw(self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Self::Normal => StandardNormal.sample(rng),
            Self::Uniform => 3f64.sqrt() * (2.0 * rng.random::<f64>() - 1.0),
            Self::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }
}

/// Everything that determines an experiment's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub n_replicates: usize,
    /// Regression dimension.
    pub q: usize,
    /// Sample size per regression dataset.
    pub n: usize,
    /// Standard deviation of the regression noise; `√2` is variance 2.
    pub noise_std: f64,
    pub covariates: CovariateLaw,
    pub p: f64,
    pub k_grid: Vec<f64>,
    pub xi_grid: Vec<f64>,
    pub n_grid: Vec<usize>,
    pub split_resolution: usize,
    /// Base density for the location-scale experiments.
    pub density: String,
    /// Clip level of Huber's Proposal 2 in the convergence study.
    pub huber_k: f64,
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect()
}

impl ExperimentConfig {
    /// Defaults small enough for a laptop.
    pub fn desk(kind: ExperimentKind) -> Self {
        let base = Self {
            kind,
            seed: 20_240_601,
            n_replicates: 20,
            q: 3,
            n: 100,
            noise_std: 2f64.sqrt(),
            covariates: CovariateLaw::Normal,
            p: 1.0,
            k_grid: Vec::new(),
            xi_grid: Vec::new(),
            n_grid: Vec::new(),
            split_resolution: 12,
            density: "laplace".into(),
            huber_k: 1.5,
        };
        match kind {
            ExperimentKind::RegressionSweep => Self {
                k_grid: linspace(3.05, 5.0, 14),
                ..base
            },
            ExperimentKind::Tradeoff => Self {
                k_grid: linspace(1.0, 8.0, 15),
                xi_grid: linspace(1.5, 20.0, 38),
                ..base
            },
            ExperimentKind::Convergence => Self {
                n_grid: vec![100, 1_000, 10_000, 100_000],
                density: "normal".into(),
                ..base
            },
        }
    }

    /// The published protocol sizes.
    pub fn full(kind: ExperimentKind) -> Self {
        let desk = Self::desk(kind);
        match kind {
            ExperimentKind::RegressionSweep => Self {
                q: 5,
                n: 500,
                n_replicates: 100,
                k_grid: linspace(3.05, 5.0, 40),
                ..desk
            },
            ExperimentKind::Tradeoff => Self {
                k_grid: linspace(1.0, 10.0, 46),
                xi_grid: linspace(1.5, 30.0, 115),
                split_resolution: 24,
                ..desk
            },
            ExperimentKind::Convergence => Self {
                n_replicates: 100,
                ..desk
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AifError::Config(m));
        if self.n_replicates == 0 {
            return bad("n_replicates must be at least 1".into());
        }
        if !(self.p >= 1.0) {
            return Err(AifError::PNotSupported(self.p));
        }
        match self.kind {
            ExperimentKind::RegressionSweep => {
                if self.q == 0 || self.n <= self.q {
                    return bad(format!("need N > q >= 1, got q = {}, N = {}", self.q, self.n));
                }
                if !(self.noise_std > 0.0) {
                    return bad(format!("noise_std must be positive, got {}", self.noise_std));
                }
                if self.k_grid.is_empty() || self.k_grid.iter().any(|k| !(*k > 0.0)) {
                    return bad("k_grid must be non-empty and positive".into());
                }
            }
            ExperimentKind::Tradeoff => {
                if self.k_grid.iter().any(|k| !(*k > 0.0)) || self.xi_grid.iter().any(|x| !(*x > 0.0)) {
                    return bad("k_grid and xi_grid must be positive".into());
                }
            }
            ExperimentKind::Convergence => {
                if self.n_grid.len() < 2 || self.n_grid.iter().any(|n| *n < 2) {
                    return bad("n_grid needs at least two sizes, each >= 2".into());
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// Applies `key=value` overrides (the same keys as the JSON fields).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = |v: &str| -> Result<f64> {
            v.trim()
                .parse::<f64>()
                .map_err(|_| AifError::Config(format!("{key}: '{v}' is not a number")))
        };
        let int = |v: &str| -> Result<usize> {
            v.trim()
                .parse::<usize>()
                .map_err(|_| AifError::Config(format!("{key}: '{v}' is not a non-negative integer")))
        };
        let list = |v: &str| -> Result<Vec<f64>> { v.split(',').filter(|s| !s.trim().is_empty()).map(num).collect() };
        match key {
            "seed" => {
                self.seed = value
                    .trim()
                    .parse()
                    .map_err(|_| AifError::Config(format!("seed: '{value}' is not a 64-bit integer")))?
            }
            "n_replicates" | "replicates" => self.n_replicates = int(value)?,
            "q" => self.q = int(value)?,
            "n" => self.n = int(value)?,
            "noise_std" => self.noise_std = num(value)?,
            "covariates" => self.covariates = CovariateLaw::parse(value.trim())?,
            "p" => self.p = num(value)?,
            "k_grid" => self.k_grid = list(value)?,
            "xi_grid" => self.xi_grid = list(value)?,
            "n_grid" => {
                self.n_grid = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(int)
                    .collect::<Result<_>>()?
            }
            "split_resolution" => self.split_resolution = int(value)?,
            "density" => self.density = value.trim().to_string(),
            "huber_k" => self.huber_k = num(value)?,
            other => return Err(AifError::Config(format!("unknown experiment key '{other}'"))),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub cell: String,
    pub metric: String,
    pub value: f64,
    pub replicate: Option<usize>,
}

/// Two-column data for one plotted curve.
#[derive(Debug, Clone, Serialize)]
pub struct PlotSeries {
    pub name: String,
    pub x_label: String,
    pub y_label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResultTable {
    pub experiment: String,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub code_version: String,
    rows: Vec<ResultRow>,
    pub series: Vec<PlotSeries>,
    pub notes: Vec<String>,
}

impl ResultTable {
    pub fn new(config: &ExperimentConfig) -> Self {
        Self {
            experiment: config.kind.id().to_string(),
            config: config.clone(),
            config_hash: config.hash(),
            code_version: CODE_VERSION.to_string(),
            rows: Vec::new(),
            series: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn push(&mut self, cell: &str, metric: &str, value: f64, replicate: Option<usize>) {
        self.rows.push(ResultRow {
            cell: cell.to_string(),
            metric: metric.to_string(),
            value,
            replicate,
        });
    }

    /// Rows ordered by `(cell, replicate)`, stable within ties.
    pub fn rows(&self) -> Vec<ResultRow> {
        let mut r = self.rows.clone();
        r.sort_by(|a, b| a.cell.cmp(&b.cell).then(a.replicate.cmp(&b.replicate)));
        r
    }

    /// The summary value (no replicate) of `metric` in `cell`.
    pub fn value(&self, cell: &str, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.cell == cell && r.metric == metric && r.replicate.is_none())
            .map(|r| r.value)
    }

    /// Distinct cells with a given prefix, in emission order.
    pub fn cells_with_prefix(&self, prefix: &str) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in self.rows() {
            if r.cell.starts_with(prefix) && out.last() != Some(&r.cell) {
                out.push(r.cell.clone());
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("experiment,cell,metric,value,replicate\n");
        for r in self.rows() {
            let rep = r.replicate.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{},{}", self.experiment, r.cell, r.metric, r.value, rep);
        }
        s
    }

    pub fn manifest(&self, elapsed: Duration, files: &[PathBuf]) -> serde_json::Value {
        serde_json::json!({
            "experiment": self.experiment,
            "config": self.config,
            "config_hash": self.config_hash,
            "code_version": self.code_version,
            "rows": self.rows.len(),
            "elapsed_seconds": elapsed.as_secs_f64(),
            "files": files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
            "notes": self.notes,
        })
    }

    /// Writes `<id>.csv`, one `<id>_<series>.csv` per curve and
    /// `<id>_manifest.json` into `dir`.
    pub fn write(&self, dir: &Path, elapsed: Duration) -> Result<Vec<PathBuf>> {
        let io = |e: std::io::Error, p: &Path| AifError::Input(format!("{}: {e}", p.display()));
        fs::create_dir_all(dir).map_err(|e| io(e, dir))?;
        let mut files = Vec::new();
        let main = dir.join(format!("{}.csv", self.experiment));
        fs::write(&main, self.to_csv()).map_err(|e| io(e, &main))?;
        files.push(main);
        for s in &self.series {
            let path = dir.join(format!("{}_{}.csv", self.experiment, s.name));
            let mut text = format!("{},{}\n", s.x_label, s.y_label);
            for (x, y) in &s.points {
                let _ = writeln!(text, "{x},{y}");
            }
            fs::write(&path, text).map_err(|e| io(e, &path))?;
            files.push(path);
        }
        let manifest = dir.join(format!("{}_manifest.json", self.experiment));
        let body = serde_json::to_string_pretty(&self.manifest(elapsed, &files)).expect("manifest serializes");
        fs::write(&manifest, body).map_err(|e| io(e, &manifest))?;
        files.push(manifest);
        Ok(files)
    }
}

fn k_cell(prefix: &str, k: f64) -> String {
    format!("{prefix}/K={k:09.5}")
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The regression datasets of the AIF-vs-K study: `θ ~ N(0, I)` from stream
/// 0, then dataset `r` from stream `r + 1` with
/// `yₙ = θᵀxₙ + noise_std·εₙ`.
pub fn sweep_datasets(cfg: &ExperimentConfig) -> Result<(Vec<f64>, Vec<RegressionData>)> {
    let mut rng0 = rng_for(cfg.seed, 0);
    let theta: Vec<f64> = (0..cfg.q).map(|_| StandardNormal.sample(&mut rng0)).collect();
    let th = DVector::from_column_slice(&theta);
    let data = (0..cfg.n_replicates)
        .map(|r| {
            let mut rng = rng_for(cfg.seed, r as u64 + 1);
            let x = DMatrix::from_fn(cfg.q, cfg.n, |_, _| cfg.covariates.draw(&mut rng));
            let noise: Vec<f64> = (0..cfg.n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let y = DVector::from_fn(cfg.n, |k, _| x.column(k).dot(&th) + cfg.noise_std * noise[k]);
            RegressionData::new(x, y)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((theta, data))
}

struct RegCell {
    aif: Result<f64>,
    clipped: usize,
}

fn regression_cell(data: &RegressionData, scheme: RegressionScheme, p: f64) -> RegCell {
    let cfg = SolveConfig::default();
    match regression_aif(data, scheme, p, &cfg) {
        Ok(rep) => {
            let clipped = RegressionEstimator::new(scheme, data.q())
                .and_then(|e| e.c_weights(data, &rep.theta))
                .map(|c| c.iter().filter(|v| **v == 0.0).count())
                .unwrap_or(0);
            RegCell {
                aif: Ok(rep.aif),
                clipped,
            }
        }
        Err(e) => RegCell {
            aif: Err(e),
            clipped: 0,
        },
    }
}

/// Mean regression AIF per scheme and clip level over replicated datasets.
///
/// Cells are `ols` and `<scheme>/K=<k>`; per replicate they carry `aif` and
/// `clipped` (points with a clipped residual), and as summaries
/// `mean_aif`, `stderr`, `n_fail`, `mean_clipped`.
pub fn run_regression_sweep(cfg: &ExperimentConfig) -> Result<ResultTable> {
    cfg.validate()?;
    let (theta, datasets) = sweep_datasets(cfg)?;
    let schemes = [
        RegressionScheme::Huber { k: 1.0 },
        RegressionScheme::Mallows { k: 1.0 },
        RegressionScheme::Schweppe { k: 1.0 },
    ];
    let per_rep: Vec<(RegCell, Vec<RegCell>)> = datasets
        .par_iter()
        .map(|d| {
            let ols = regression_cell(d, RegressionScheme::Ols, cfg.p);
            let cells = schemes
                .iter()
                .flat_map(|s| cfg.k_grid.iter().map(move |&k| s.with_k(k)))
                .map(|s| regression_cell(d, s, cfg.p))
                .collect();
            (ols, cells)
        })
        .collect();

    let mut table = ResultTable::new(cfg);
    for (j, t) in theta.iter().enumerate() {
        table.push("theta", &format!("theta_{j}"), *t, None);
    }
    let summarize = |table: &mut ResultTable, cell: &str, vals: Vec<&RegCell>| -> f64 {
        let mut ok = Vec::new();
        let mut fails = 0usize;
        let mut clipped = 0usize;
        for (r, c) in vals.iter().enumerate() {
            match &c.aif {
                Ok(v) => {
                    table.push(cell, "aif", *v, Some(r));
                    table.push(cell, "clipped", c.clipped as f64, Some(r));
                    ok.push(*v);
                    clipped += c.clipped;
                }
                Err(e) => {
                    fails += 1;
                    tracing::warn!(cell, replicate = r, error = %e, "regression cell failed");
                }
            }
        }
        let (mean, se) = mean_stderr(&ok);
        table.push(cell, "mean_aif", mean, None);
        table.push(cell, "stderr", se, None);
        table.push(cell, "n_fail", fails as f64, None);
        table.push(cell, "mean_clipped", clipped as f64 / ok.len().max(1) as f64, None);
        mean
    };
    let ols_mean = summarize(&mut table, "ols", per_rep.iter().map(|(o, _)| o).collect());
    let mut series = vec![PlotSeries {
        name: "ols".into(),
        x_label: "K".into(),
        y_label: "mean_aif".into(),
        points: cfg.k_grid.iter().map(|&k| (k, ols_mean)).collect(),
    }];
    let mut idx = 0;
    for s in &schemes {
        let mut points = Vec::new();
        for &k in &cfg.k_grid {
            let cell = k_cell(s.name(), k);
            let mean = summarize(&mut table, &cell, per_rep.iter().map(|(_, c)| &c[idx]).collect());
            points.push((k, mean));
            idx += 1;
        }
        series.push(PlotSeries {
            name: s.name().into(),
            x_label: "K".into(),
            y_label: "mean_aif".into(),
            points,
        });
    }
    table.series = series;
    Ok(table)
}

/// Huber's Proposal 2 under `f₀`: `(γ*_u, population AIF, β)`.
pub fn huber_tradeoff_point(k: f64, f0: &dyn BaseDensity) -> Result<(f64, f64, f64)> {
    let beta = huber_fisher_beta(k, f0)?;
    let spec = huber_proposal2(k, f0)?;
    let aif = population_aif(&spec, f0)?.value;
    let profile = if_profile_of_spec(&spec, f0, Some((k, k * k - beta)))?;
    Ok((profile.gamma_u_star, aif, beta))
}

/// The Laplace AIF-vs-IF tradeoff.
///
/// Cells:
/// - `huber/K=<k>`: `gamma_u`, `aif`, `beta` of Huber's Proposal 2.
/// - `matched/K=<k>`: the optimal frontier evaluated at Huber's `γ*_u`, under
///   both conventions (`fisher_aif`, `uncentered_aif`, with their splits).
/// - `frontier_fisher/xi=<ξ>`, `frontier_uncentered/xi=<ξ>`: the frontier on the
///   configured `ξ` grid; infeasible `ξ` get `gap = 1`.
/// - `meanstd`: `gamma_u = ∞` and the finite-sample AIF (distribution-free).
pub fn run_tradeoff(cfg: &ExperimentConfig) -> Result<ResultTable> {
    cfg.validate()?;
    let f0: Arc<dyn BaseDensity> = density::by_name(&cfg.density)?;
    let mut table = ResultTable::new(cfg);

    let huber: Vec<Result<(f64, f64, f64)>> = cfg
        .k_grid
        .par_iter()
        .map(|&k| huber_tradeoff_point(k, f0.as_ref()))
        .collect();
    let mut huber_points = Vec::new();
    for (&k, h) in cfg.k_grid.iter().zip(&huber) {
        let cell = k_cell("huber", k);
        match h {
            Ok((g, aif, beta)) => {
                table.push(&cell, "gamma_u", *g, None);
                table.push(&cell, "aif", *aif, None);
                table.push(&cell, "beta", *beta, None);
                huber_points.push((k, *g, *aif));
            }
            Err(e) => {
                table.notes.push(format!("huber K = {k}: {e}"));
                table.push(&cell, "gap", 1.0, None);
            }
        }
    }

    let matched: Vec<_> = huber_points
        .par_iter()
        .map(|&(k, g, _)| {
            let fisher = best_split(f0.clone(), g, cfg.split_resolution, Convention::FisherConsistent);
            let uncentered = best_split(f0.clone(), g, cfg.split_resolution, Convention::Uncentered);
            (k, fisher, uncentered)
        })
        .collect();
    for ((k, fisher, uncentered), &(_, g, h_aif)) in matched.into_iter().zip(&huber_points) {
        let cell = k_cell("matched", k);
        table.push(&cell, "gamma_u", g, None);
        table.push(&cell, "huber_aif", h_aif, None);
        for (tag, res) in [("fisher", fisher), ("uncentered", uncentered)] {
            match res {
                Ok(Some(pt)) => {
                    table.push(&cell, &format!("{tag}_aif"), pt.aif, None);
                    table.push(&cell, &format!("{tag}_xi1"), pt.xi1, None);
                    table.push(&cell, &format!("{tag}_gamma_u"), pt.gamma_u, None);
                }
                Ok(None) => {
                    table.push(&cell, &format!("{tag}_gap"), 1.0, None);
                    table
                        .notes
                        .push(format!("{tag} frontier infeasible at xi = {g} (huber K = {k})"));
                }
                Err(e) => {
                    table.push(&cell, &format!("{tag}_gap"), 1.0, None);
                    table.notes.push(format!("{tag} frontier failed at xi = {g}: {e}"));
                }
            }
        }
    }

    let mut series = vec![PlotSeries {
        name: "huber".into(),
        x_label: "gamma_u".into(),
        y_label: "aif".into(),
        points: huber_points.iter().map(|&(_, g, a)| (g, a)).collect(),
    }];
    for conv in [Convention::FisherConsistent, Convention::Uncentered] {
        let prefix = format!("frontier_{}", conv.name());
        let frontier: Vec<_> = cfg
            .xi_grid
            .par_iter()
            .map(|&xi| (xi, best_split(f0.clone(), xi, cfg.split_resolution, conv)))
            .collect();
        let mut points = Vec::new();
        for (xi, res) in frontier {
            let cell = format!("{prefix}/xi={xi:09.5}");
            match res {
                Ok(Some(pt)) => {
                    table.push(&cell, "xi1", pt.xi1, None);
                    table.push(&cell, "xi2", pt.xi2, None);
                    table.push(&cell, "aif", pt.aif, None);
                    table.push(&cell, "gamma_u", pt.gamma_u, None);
                    points.push((pt.gamma_u, pt.aif));
                }
                Ok(None) => {
                    table.push(&cell, "gap", 1.0, None);
                    tracing::info!(xi, convention = conv.name(), "frontier gap: no feasible split");
                }
                Err(e) => {
                    table.push(&cell, "gap", 1.0, None);
                    table.notes.push(format!("{prefix} at xi = {xi}: {e}"));
                }
            }
        }
        series.push(PlotSeries {
            name: prefix,
            x_label: "gamma_u".into(),
            y_label: "aif".into(),
            points,
        });
    }

    // Coupled mean/std: its AIF is √2 on every dataset; shown on a draw.
    let mut rng = rng_for(cfg.seed, 0);
    let sample: Vec<f64> = (0..1000).map(|_| f0.sample(&mut rng)).collect();
    let ms = ls_aif(&mean_std(), &sample, 2.0, None, &SolveConfig::default())?;
    table.push("meanstd", "gamma_u", f64::INFINITY, None);
    table.push("meanstd", "aif", ms.aif, None);
    table.series = series;
    Ok(table)
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Finite-sample against population AIF for Huber's Proposal 2 and for the
/// coupled mean/std. Replicate `r` at size `N` uses stream `N·2³² + r`.
///
/// Cells `huber2/N=<n>` carry per-replicate `aif` and `abs_error` and the
/// summaries `population`, `mean_abs_error`, `stderr`; cell `fit` has the
/// log-log `slope` of mean error against `N`; cells `meanstd/N=<n>` carry
/// `max_abs_error` against `√2`.
pub fn run_convergence(cfg: &ExperimentConfig) -> Result<ResultTable> {
    cfg.validate()?;
    let f0: Arc<dyn BaseDensity> = density::by_name(&cfg.density)?;
    let spec = huber_proposal2(cfg.huber_k, f0.as_ref())?;
    let population = population_aif(&spec, f0.as_ref())?.value;
    let ms = mean_std();
    let jobs: Vec<(usize, usize)> = cfg
        .n_grid
        .iter()
        .flat_map(|&n| (0..cfg.n_replicates).map(move |r| (n, r)))
        .collect();
    let results: Vec<Result<(f64, f64)>> = jobs
        .par_iter()
        .map(|&(n, r)| {
            let stream = ((n as u64) << 32) | r as u64;
            let mut rng = rng_for(cfg.seed, stream);
            let huber = sample_ls_aif(&spec, f0.as_ref(), n, &mut rng)?;
            let mut rng = rng_for(cfg.seed ^ 0x9e37_79b9_7f4a_7c15, stream);
            let meanstd = sample_ls_aif(&ms, f0.as_ref(), n, &mut rng)?;
            Ok((huber, meanstd))
        })
        .collect();

    let mut table = ResultTable::new(cfg);
    let mut ns = Vec::new();
    let mut errs = Vec::new();
    for (i, &n) in cfg.n_grid.iter().enumerate() {
        let cell = format!("huber2/N={n:09}");
        let ms_cell = format!("meanstd/N={n:09}");
        let mut e = Vec::new();
        let mut ms_max = 0.0f64;
        for r in 0..cfg.n_replicates {
            match &results[i * cfg.n_replicates + r] {
                Ok((h, m)) => {
                    table.push(&cell, "aif", *h, Some(r));
                    table.push(&cell, "abs_error", (h - population).abs(), Some(r));
                    e.push((h - population).abs());
                    ms_max = ms_max.max((m - 2f64.sqrt()).abs());
                }
                Err(err) => {
                    table.notes.push(format!("N = {n}, replicate {r}: {err}"));
                }
            }
        }
        let (mean, se) = mean_stderr(&e);
        table.push(&cell, "population", population, None);
        table.push(&cell, "mean_abs_error", mean, None);
        table.push(&cell, "stderr", se, None);
        table.push(&cell, "relative_error", mean / population, None);
        table.push(&ms_cell, "max_abs_error", ms_max, None);
        ns.push(n as f64);
        errs.push(mean);
    }
    let slope = loglog_slope(&ns, &errs);
    table.push("fit", "slope", slope, None);
    table.series = vec![PlotSeries {
        name: "huber2_error".into(),
        x_label: "n".into(),
        y_label: "mean_abs_error".into(),
        points: ns.into_iter().zip(errs).collect(),
    }];
    Ok(table)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(ResultTable, Duration)> {
    let start = Instant::now();
    let table = match cfg.kind {
        ExperimentKind::Tradeoff => run_tradeoff(cfg)?,
        ExperimentKind::RegressionSweep => run_regression_sweep(cfg)?,
        ExperimentKind::Convergence => run_convergence(cfg)?,
    };
    Ok((table, start.elapsed()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_hash_tracks_content() {
        let a = ExperimentConfig::desk(ExperimentKind::RegressionSweep);
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.set("seed", "7").unwrap();
        assert_ne!(a.hash(), b.hash());
        assert!(b.set("colour", "red").is_err());
    }

    #[test]
    fn datasets_do_not_depend_on_replicate_count() {
        let mut cfg = ExperimentConfig::desk(ExperimentKind::RegressionSweep);
        cfg.n_replicates = 2;
        let (_, a) = sweep_datasets(&cfg).unwrap();
        cfg.n_replicates = 5;
        let (_, b) = sweep_datasets(&cfg).unwrap();
        assert_eq!(a[1].x, b[1].x);
        assert_eq!(a[1].y, b[1].y);
    }

    #[test]
    fn slope_of_a_power_law() {
        let x = [10.0, 100.0, 1000.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-0.5)).collect();
        assert!((loglog_slope(&x, &y) + 0.5).abs() < 1e-12);
    }
}
