//! Config-driven experiment runs on the path-following benchmark.
//!
//! One run plays `episodes` episodes of the optimistic learner and records a
//! [`MetricsRow`] per episode. [`emit_outputs`] writes `metrics.csv`,
//! `config.json` (the fully resolved config, including the materialized mass
//! sets), `summary.json` and optionally `trajectories.csv`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::benchmark::{context_for_mass, sample_mass, Benchmark, BenchmarkConfig};
use crate::decoder::{decoder_error, Decoder};
use crate::env::{episode_regret, run_episode, EpisodeRecord};
use crate::learner::{beta, output_policy_map, select_optimistic_with, Hyperparams, LearnerState};
use crate::lqr::Dimensions;
use crate::par::Exec;
use crate::{Error, Result};

pub const METRICS_HEADER: &str =
    "episode,frobenius_error,mean_control_error,episode_regret,cumulative_regret,det_v,beta_used";
pub const TRAJECTORY_HEADER: &str = "episode,h,x1,x2,x3,x4,x5,u1,u2,target_x,target_y";

/// Relative slack for the `det(V)` bound.
const DET_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub benchmark: BenchmarkConfig,
    pub hyperparams: Hyperparams,
    /// Number of training episodes `K`.
    pub episodes: usize,
    pub horizon: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub emit_trajectories: bool,
    /// Test-set evaluation interval; the last episode is always evaluated.
    pub eval_every: usize,
    /// Materialized from the seed when absent.
    pub train_masses: Option<Vec<f64>>,
    pub test_masses: Option<Vec<f64>>,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            benchmark: BenchmarkConfig::default(),
            hyperparams: Hyperparams::default(),
            episodes: 100,
            horizon: 20,
            seed: 0,
            output_dir: PathBuf::from("results"),
            emit_trajectories: false,
            eval_every: 1,
            train_masses: None,
            test_masses: None,
            exec: Exec::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = if text.trim_start().starts_with('{') {
            serde_json::from_str(text)?
        } else {
            toml::from_str(text)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::ConfigInvalid(msg));
        if self.episodes == 0 {
            return invalid("episodes must be >= 1".into());
        }
        if self.horizon < 2 {
            return invalid("horizon must be >= 2".into());
        }
        if self.eval_every == 0 {
            return invalid("eval_every must be >= 1".into());
        }
        self.benchmark
            .validate()
            .and_then(|_| self.hyperparams.validate())
            .map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        for (name, set) in [("train_masses", &self.train_masses), ("test_masses", &self.test_masses)] {
            if let Some(ms) = set {
                if ms.is_empty() || ms.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
                    return invalid(format!("{name} must be nonempty and positive"));
                }
            }
        }
        Ok(())
    }

    /// Fills in the mass sets from the seed. Idempotent.
    pub fn resolve(&self) -> Result<Self> {
        self.validate()?;
        let mut out = self.clone();
        let mut rng = stream_rng(self.seed, 0);
        let train: Vec<f64> = (0..self.benchmark.n_train_masses)
            .map(|_| sample_mass(&self.benchmark, &mut rng))
            .collect();
        let test: Vec<f64> = (0..self.benchmark.n_test_masses)
            .map(|_| sample_mass(&self.benchmark, &mut rng))
            .collect();
        out.train_masses.get_or_insert(train);
        out.test_masses.get_or_insert(test);
        Ok(out)
    }
}

/// Independent deterministic stream `stream` of the root `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub episode: usize,
    /// `‖Θ̂ − Θ_*‖_F` after this episode's update.
    pub frobenius_error: f64,
    pub mean_control_error: Option<f64>,
    pub episode_regret: f64,
    pub cumulative_regret: f64,
    pub det_v: f64,
    pub beta_used: f64,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    /// Resolved config (mass sets filled in).
    pub config: ExperimentConfig,
    pub rows: Vec<MetricsRow>,
    /// `(episode, record)` pairs, kept only with `emit_trajectories`.
    pub trajectories: Vec<(usize, EpisodeRecord)>,
    /// The output decoder, drawn uniformly from the optimist history.
    pub policy_map: Decoder,
    pub policy_map_control_error: f64,
    pub final_estimate: Decoder,
    /// Largest `‖z‖²` seen during the run.
    pub max_feature_sq: f64,
    /// Per episode, `tr[(Θ_* − Θ̂) V (Θ_* − Θ̂)ᵀ]` at selection time; compare
    /// with the row's `beta_used` to check coverage of the true decoder.
    pub true_decoder_distance: Vec<f64>,
}

/// Runs the online learning loop described by `config`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let config = config.resolve()?;
    let bench = Benchmark::new(config.benchmark.clone(), config.horizon)?;
    let train = config.train_masses.as_deref().unwrap_or_default();
    let test = config.test_masses.as_deref().unwrap_or_default();
    let hp = &config.hyperparams;
    let dims = Dimensions::new(5, 2, 5, 2)?;
    let x1 = bench.costs.x_init().clone();

    let mut state = LearnerState::new(dims);
    let mut rows = Vec::with_capacity(config.episodes);
    let mut trajectories = Vec::new();
    let mut cumulative = 0.0;
    let mut true_decoder_distance = Vec::with_capacity(config.episodes);

    for k in 1..=config.episodes {
        let mut episode = || -> Result<(MetricsRow, EpisodeRecord)> {
            let mut rng = stream_rng(config.seed, k as u64);
            let ctx = context_for_mass(train[(k - 1) % train.len()])?;
            let beta_used = beta(&state, hp, config.horizon);
            true_decoder_distance.push(state.ellipsoid_distance(&bench.theta_star)?);
            let sel = select_optimistic_with(
                &mut state, &ctx, &bench.costs, &x1, hp, beta_used, config.exec, &mut rng,
            )?;
            let record = run_episode(
                &bench.theta_star,
                &sel.theta,
                &ctx,
                &bench.costs,
                &bench.noise,
                &mut rng,
            )?;
            for (z, next) in record.features.iter().zip(&record.states[1..]) {
                state.record_transition(z, next)?;
            }
            state.end_episode()?;

            let det_v = state.det_v()?;
            let bound = state.det_bound(state.max_feature_sq());
            if det_v > bound * (1.0 + DET_SLACK) {
                return Err(Error::NumericalFailure(format!(
                    "det(V) = {det_v:e} exceeds its bound {bound:e}"
                )));
            }
            let regret = episode_regret(&record);
            cumulative += regret;
            let evaluate = k % config.eval_every == 0 || k == config.episodes;
            let mean_control_error = if evaluate {
                Some(bench.mean_control_error(state.theta_hat(), test, config.exec)?)
            } else {
                None
            };
            let row = MetricsRow {
                episode: k,
                frobenius_error: decoder_error(state.theta_hat(), &bench.theta_star)?,
                mean_control_error,
                episode_regret: regret,
                cumulative_regret: cumulative,
                det_v,
                beta_used,
            };
            Ok((row, record))
        };
        let (row, record) = episode().map_err(|e| e.in_episode(k))?;
        rows.push(row);
        if config.emit_trajectories {
            trajectories.push((k, record));
        }
    }

    let mut rng = stream_rng(config.seed, config.episodes as u64 + 1);
    let policy_map = output_policy_map(&state, &mut rng)?;
    let policy_map_control_error = bench.mean_control_error(&policy_map, test, config.exec)?;
    Ok(ExperimentOutput {
        rows,
        trajectories,
        policy_map,
        policy_map_control_error,
        final_estimate: state.theta_hat().clone(),
        max_feature_sq: state.max_feature_sq(),
        true_decoder_distance,
        config,
    })
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let mce = r.mean_control_error.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.episode,
            r.frobenius_error,
            mce,
            r.episode_regret,
            r.cumulative_regret,
            r.det_v,
            r.beta_used
        );
    }
    out
}

pub fn trajectories_csv(records: &[(usize, EpisodeRecord)], bench: &Benchmark) -> String {
    let mut out = String::from(TRAJECTORY_HEADER);
    out.push('\n');
    for (episode, rec) in records {
        for (i, x) in rec.states.iter().enumerate() {
            let [tx, ty] = bench.trajectory.targets[i];
            let _ = write!(out, "{episode},{}", i + 1);
            for v in x.iter() {
                let _ = write!(out, ",{v}");
            }
            match rec.actions.get(i) {
                Some(u) => {
                    let _ = write!(out, ",{},{}", u[0], u[1]);
                }
                None => out.push_str(",,"),
            }
            let _ = writeln!(out, ",{tx},{ty}");
        }
    }
    out
}

#[derive(Serialize)]
struct Summary {
    episodes: usize,
    final_frobenius_error: f64,
    final_mean_control_error: Option<f64>,
    cumulative_regret: f64,
    policy_map_control_error: f64,
    max_feature_norm: f64,
    policy_map: Vec<Vec<f64>>,
    final_estimate: Vec<Vec<f64>>,
}

/// Writes the run's files into `dir`; returns the written paths.
pub fn emit_outputs(output: &ExperimentOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    if output.rows.is_empty() {
        return Err(Error::Invalid {
            what: "metrics",
            reason: "no rows to emit".into(),
        });
    }
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, body)?;
        written.push(path);
        Ok(())
    };
    put("metrics.csv", metrics_csv(&output.rows))?;
    put("config.json", output.config.to_json()?)?;

    let last = output.rows.last().expect("nonempty");
    let summary = Summary {
        episodes: output.rows.len(),
        final_frobenius_error: last.frobenius_error,
        final_mean_control_error: last.mean_control_error,
        cumulative_regret: last.cumulative_regret,
        policy_map_control_error: output.policy_map_control_error,
        max_feature_norm: output.max_feature_sq.sqrt(),
        policy_map: output.policy_map.rows(),
        final_estimate: output.final_estimate.rows(),
    };
    put("summary.json", serde_json::to_string_pretty(&summary)? + "\n")?;

    if output.config.emit_trajectories {
        let bench = Benchmark::new(output.config.benchmark.clone(), output.config.horizon)?;
        put("trajectories.csv", trajectories_csv(&output.trajectories, &bench))?;
    }
    Ok(written)
}
