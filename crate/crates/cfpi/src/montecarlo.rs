//! Monte-Carlo comparison of the preintegration models.
//!
//! Every run synthesizes one measurement set and feeds the identical set to
//! each model. Runs execute in parallel but are collected in run order, so
//! the report depends only on the scenario and its seed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::ser::{SerializeMap, Serializer};
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use crate::estimator::{nees, run_estimator};
use crate::manifold::Pose;
use crate::preintegration::PreintModel;
use crate::scenario::ScenarioConfig;
use crate::simulator::export::write_truth_csv;
use crate::simulator::{compute_metrics, simulate, RunMetrics, Simulation, SEGMENT_LENGTHS};

/// Per-step errors of one run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRow {
    pub t: f64,
    pub pos_err_m: f64,
    pub ori_err_deg: f64,
    pub nees: Option<f64>,
}

/// One model on one run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRecord {
    pub run: usize,
    pub pos_rmse_m: f64,
    pub ori_rmse_deg: f64,
    #[serde(serialize_with = "segments")]
    pub odo_err_m: Vec<(f64, Option<f64>)>,
    pub nees_mean: Option<f64>,
    pub diverged: Option<String>,
    #[serde(skip)]
    pub steps: Vec<StepRow>,
}

/// Aggregates over the runs of one model that did not diverge.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelSummary {
    pub pos_rmse_m: f64,
    pub ori_rmse_deg: f64,
    #[serde(serialize_with = "segments")]
    pub odo_err_m: Vec<(f64, Option<f64>)>,
    pub nees_mean: Option<f64>,
    pub diverged_runs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelReport {
    pub model: PreintModel,
    pub summary: ModelSummary,
    pub pos_rmse_std: f64,
    pub ori_rmse_std: f64,
    pub runs: Vec<RunRecord>,
}

/// Wall-clock time per stage, summed over runs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageTiming {
    pub simulate: Duration,
    pub estimate: Duration,
    pub total: Duration,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchmarkReport {
    pub config: ScenarioConfig,
    pub models: Vec<ModelReport>,
    /// Kept out of the written files so that they stay reproducible.
    #[serde(skip)]
    pub timing: StageTiming,
    #[serde(skip)]
    pub truth: Vec<(f64, crate::manifold::ImuState)>,
}

fn segments<S: Serializer>(v: &[(f64, Option<f64>)], s: S) -> Result<S::Ok, S::Error> {
    let mut m = s.serialize_map(Some(v.len()))?;
    for (len, e) in v {
        m.serialize_entry(&format!("{len}"), e)?;
    }
    m.end()
}

fn mean(v: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (n, s) = v.into_iter().fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    (n > 0).then(|| s / n as f64)
}

fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn evaluate(sim: &Simulation, model: PreintModel, cfg: &ScenarioConfig, run: usize) -> RunRecord {
    let out = run_estimator(sim, model, &cfg.imu.noise, &cfg.camera, &cfg.estimator);
    let est: Vec<Pose> = out.steps.iter().map(|s| s.state.pose()).collect();
    let truth: Vec<Pose> = out.steps.iter().map(|s| sim.frames[s.frame].truth.pose()).collect();
    let nees_seq: Vec<Option<f64>> = out
        .steps
        .iter()
        .map(|s| s.covariance.as_ref().and_then(|c| nees(&s.state, &sim.frames[s.frame].truth, c)))
        .collect();
    let diverged = out.diverged.or_else(|| (out.steps.len() < sim.frames.len()).then(|| "run stopped early".into()));
    let m = compute_metrics(&est, &truth, nees_seq, &SEGMENT_LENGTHS).unwrap_or_else(|_| RunMetrics {
        pos_rmse_m: f64::NAN,
        ori_rmse_deg: f64::NAN,
        odo_err_m: SEGMENT_LENGTHS.iter().map(|l| (*l, None)).collect(),
        ..Default::default()
    });
    let steps = out
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| StepRow { t: s.t, pos_err_m: m.pos_err_m[i], ori_err_deg: m.ori_err_deg[i], nees: m.nees[i] })
        .collect();
    RunRecord {
        run,
        pos_rmse_m: m.pos_rmse_m,
        ori_rmse_deg: m.ori_rmse_deg,
        odo_err_m: m.odo_err_m,
        nees_mean: mean(m.nees.iter().flatten().copied()),
        diverged,
        steps,
    }
}

/// Recomputes the aggregates of a model from its runs.
pub fn summarize(runs: &[RunRecord]) -> ModelSummary {
    let ok: Vec<&RunRecord> = runs.iter().filter(|r| r.diverged.is_none()).collect();
    let odo_err_m = SEGMENT_LENGTHS
        .iter()
        .enumerate()
        .map(|(i, l)| (*l, mean(ok.iter().filter_map(|r| r.odo_err_m.get(i).and_then(|e| e.1)))))
        .collect();
    ModelSummary {
        pos_rmse_m: mean(ok.iter().map(|r| r.pos_rmse_m)).unwrap_or(f64::NAN),
        ori_rmse_deg: mean(ok.iter().map(|r| r.ori_rmse_deg)).unwrap_or(f64::NAN),
        odo_err_m,
        nees_mean: mean(ok.iter().flat_map(|r| r.steps.iter().filter_map(|s| s.nees))),
        diverged_runs: runs.len() - ok.len(),
    }
}

/// Records of one run, simulation and estimation time, and (run 0 only) truth.
type RunOutput = (Vec<RunRecord>, Duration, Duration, Option<Vec<(f64, crate::manifold::ImuState)>>);

/// Runs every model of the scenario on `config.runs` synthesized runs.
pub fn run_monte_carlo(config: &ScenarioConfig) -> BenchmarkReport {
    let start = Instant::now();
    let per_run: Vec<RunOutput> = (0..config.runs)
        .into_par_iter()
        .map(|run| {
            let t0 = Instant::now();
            let sim = simulate(&config.trajectory, &config.imu, &config.camera, config.seed, run as u64);
            let t_sim = t0.elapsed();
            let t1 = Instant::now();
            let recs = config.models.iter().map(|m| evaluate(&sim, *m, config, run)).collect();
            let truth = (run == 0).then(|| sim.frames.iter().map(|f| (f.t, f.truth)).collect());
            (recs, t_sim, t1.elapsed(), truth)
        })
        .collect();

    let mut timing = StageTiming::default();
    let mut truth = Vec::new();
    let mut by_model: Vec<Vec<RunRecord>> = vec![Vec::with_capacity(config.runs); config.models.len()];
    for (recs, ts, te, tr) in per_run {
        timing.simulate += ts;
        timing.estimate += te;
        if let Some(tr) = tr {
            truth = tr;
        }
        for (i, r) in recs.into_iter().enumerate() {
            by_model[i].push(r);
        }
    }
    let models = config
        .models
        .iter()
        .zip(by_model)
        .map(|(m, runs)| {
            let ok: Vec<&RunRecord> = runs.iter().filter(|r| r.diverged.is_none()).collect();
            ModelReport {
                model: *m,
                summary: summarize(&runs),
                pos_rmse_std: std_dev(&ok.iter().map(|r| r.pos_rmse_m).collect::<Vec<_>>()),
                ori_rmse_std: std_dev(&ok.iter().map(|r| r.ori_rmse_deg).collect::<Vec<_>>()),
                runs,
            }
        })
        .collect();
    timing.total = start.elapsed();
    BenchmarkReport { config: config.clone(), models, timing, truth }
}

impl BenchmarkReport {
    pub fn model(&self, m: PreintModel) -> Option<&ModelReport> {
        self.models.iter().find(|r| r.model == m)
    }

    /// `model → summary` in the configured model order.
    pub fn summary_json(&self) -> String {
        struct Summary<'a>(&'a [ModelReport]);
        impl Serialize for Summary<'_> {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                let mut m = s.serialize_map(Some(self.0.len()))?;
                for r in self.0 {
                    m.serialize_entry(r.model.name(), &r.summary)?;
                }
                m.end()
            }
        }
        serde_json::to_string_pretty(&Summary(&self.models)).expect("summary serializes")
    }

    /// Writes `summary.json`, `report.json`, one `<model>.csv` of per-step
    /// errors and `ground_truth.csv` for run 0.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("summary.json"), self.summary_json() + "\n")?;
        let report = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(dir.join("report.json"), report + "\n")?;
        for m in &self.models {
            let mut w = csv::Writer::from_writer(BufWriter::new(File::create(dir.join(format!("{}.csv", m.model.name())))?));
            w.write_record(["run", "t", "pos_err_m", "ori_err_deg", "nees"])?;
            for r in &m.runs {
                for s in &r.steps {
                    let nees = s.nees.map(|v| v.to_string()).unwrap_or_default();
                    w.write_record([r.run.to_string(), s.t.to_string(), s.pos_err_m.to_string(), s.ori_err_deg.to_string(), nees])?;
                }
            }
            w.flush()?;
        }
        let mut f = BufWriter::new(File::create(dir.join("ground_truth.csv"))?);
        write_truth_csv(&mut f, self.truth.iter().copied()).map_err(std::io::Error::other)?;
        f.flush()
    }
}

/// Two-sided `confidence` band of the mean of `runs` NEES samples of a
/// `dof`-dimensional state: `χ²_{dof·runs}` quantiles divided by `runs`.
pub fn nees_band(dof: usize, runs: usize, confidence: f64) -> (f64, f64) {
    let k = (dof * runs) as f64;
    let chi = ChiSquared::new(k).expect("positive degrees of freedom");
    let a = (1.0 - confidence) / 2.0;
    (chi.inverse_cdf(a) / runs as f64, chi.inverse_cdf(1.0 - a) / runs as f64)
}

/// Per-step NEES averaged over the runs that have a value at every step.
pub fn mean_nees_by_step(report: &ModelReport) -> (Vec<f64>, usize) {
    let runs: Vec<&RunRecord> = report
        .runs
        .iter()
        .filter(|r| r.diverged.is_none() && r.steps.iter().all(|s| s.nees.is_some()))
        .collect();
    let Some(first) = runs.first() else { return (Vec::new(), 0) };
    let n = first.steps.len();
    let v = (0..n).map(|k| runs.iter().map(|r| r.steps[k].nees.unwrap()).sum::<f64>() / runs.len() as f64).collect();
    (v, runs.len())
}

/// Paired one-sided t-test of `mean(a − b) < 0`. Returns `(t, p)`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len();
    if n < 2 {
        return (f64::NAN, 1.0);
    }
    let m = d.iter().sum::<f64>() / n as f64;
    let s = std_dev(&d);
    if s == 0.0 {
        return if m < 0.0 { (f64::NEG_INFINITY, 0.0) } else { (f64::INFINITY, 1.0) };
    }
    let t = m / (s / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("valid degrees of freedom");
    (t, dist.cdf(t))
}
