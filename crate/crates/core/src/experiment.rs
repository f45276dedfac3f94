//! Experiment drivers behind the CLI. Reports are plain text whose bytes
//! depend only on the configuration and seed; the wall clock sits on its
//! own trailing line.

use std::fmt::Write as _;

use log::{info, warn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indep::DindepKind;
use crate::infer::{
    environment_components, infer_pooled, infer_rule1, infer_rule2, infer_thresholded, vote_environments,
    vote_thresholded, Rule,
};
use crate::mosaic::{
    decide_all, random_training, threshold_search, weighted_accuracy, EnsembleConfig, MosaicScore,
    TesseraPool, ThresholdSearch,
};
use crate::nn::{MlpConfig, TrainConfig, Topology};
use crate::pair::{CausalPair, Cause, InputOrder, Verdict};
use crate::par;
use crate::rng::{derive_seed, rng};
use crate::synth::{generate_pairs, SynthConfig};
use crate::tcl::fit_tessera;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    /// Labeled training pairs and separate test pairs.
    MultiPair,
    /// One aligned system observed in several environments.
    MultiEnv,
    /// Multi-environment with independence tests and undecided outputs.
    Thresholded,
}

impl Setting {
    pub fn label(self) -> &'static str {
        match self {
            Setting::MultiPair => "multi_pair",
            Setting::MultiEnv => "multi_env",
            Setting::Thresholded => "thresholded",
        }
    }
}

/// The artificial-data grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub settings: Vec<Setting>,
    /// Rules of the multi-pair setting.
    pub rules: Vec<Rule>,
    pub measures: Vec<DindepKind>,
    /// Topologies of the multi-pair setting; the environment settings
    /// always use a fully connected extractor.
    pub topologies: Vec<Topology>,
    pub widths: Vec<usize>,
    pub pair_counts: Vec<usize>,
    /// Mixing functions per grid cell.
    pub mixings: usize,
    /// Test level of the thresholded setting.
    pub alpha: f64,
    /// Use full (non-triangular) mixings in the thresholded setting.
    pub confounded: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            settings: vec![Setting::MultiPair, Setting::MultiEnv],
            rules: vec![Rule::Rule1, Rule::Rule2],
            measures: vec![DindepKind::DcorComplement],
            topologies: vec![Topology::Structural, Topology::FullyConnected],
            widths: vec![4, 40],
            pair_counts: vec![10, 20, 30, 40, 50],
            mixings: 20,
            alpha: 0.05,
            confounded: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mixings == 0 {
            return Err(Error::Config("mixings must be at least 1".into()));
        }
        if self.widths.contains(&0) || self.widths.contains(&1) {
            return Err(Error::Config("widths must be at least 2".into()));
        }
        if self.pair_counts.iter().any(|&p| p < 3) {
            return Err(Error::Config("pair counts must be at least 3".into()));
        }
        if self.rules.contains(&Rule::Pooled) {
            return Err(Error::Config(
                "the pooled rule belongs to the multi_env setting, not to rules".into(),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

/// One job of the grid: a mixing function under one condition.
#[derive(Debug, Clone, Copy)]
struct Job {
    setting: Setting,
    topology: Topology,
    width: usize,
    pairs: usize,
    mixing: usize,
}

/// Accuracy of one run and its fraction of undecided outputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOutcome {
    pub accuracy: f64,
    pub inconclusive: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub setting: Setting,
    pub rule: String,
    pub measure: Option<DindepKind>,
    pub topology: Topology,
    pub width: usize,
    pub pairs: usize,
    /// Indexed by mixing function; `None` marks a failed run.
    pub runs: Vec<Option<RunOutcome>>,
}

impl Cell {
    fn done(&self) -> impl Iterator<Item = &RunOutcome> {
        self.runs.iter().flatten()
    }

    pub fn accuracy(&self) -> Option<f64> {
        mean(self.done().map(|r| r.accuracy))
    }

    pub fn inconclusive(&self) -> Option<f64> {
        mean(self.done().map(|r| r.inconclusive))
    }

    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.is_none()).count()
    }

    pub fn series(&self) -> String {
        format!(
            "{}/{}/{}/{}/w{}",
            self.setting.label(),
            self.rule,
            self.measure.map_or("-", DindepKind::label),
            topology_label(self.topology),
            self.width
        )
    }
}

fn mean(it: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn topology_label(t: Topology) -> &'static str {
    match t {
        Topology::Structural => "structural",
        Topology::FullyConnected => "fully_connected",
    }
}

#[derive(Debug, Clone)]
pub struct ArtificialReport {
    pub seed: u64,
    pub config_snapshot: String,
    pub cells: Vec<Cell>,
    pub wall_clock_seconds: f64,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".into(), |v| format!("{v:.6}"))
}

fn push_snapshot(out: &mut String, snapshot: &str) {
    out.push_str("# config:\n");
    for line in snapshot.lines() {
        writeln!(out, "#   {line}").unwrap();
    }
}

impl ArtificialReport {
    /// Everything except the wall clock.
    pub fn body(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# experiment: artificial").unwrap();
        writeln!(out, "# seed: {}", self.seed).unwrap();
        push_snapshot(&mut out, &self.config_snapshot);
        out.push_str("setting\trule\tmeasure\ttopology\twidth\tpairs\taccuracy\tinconclusive\truns\tfailed\tper_run\n");
        for c in &self.cells {
            let per_run: Vec<String> = c
                .runs
                .iter()
                .map(|r| r.map_or_else(|| "x".into(), |r| format!("{:.4}", r.accuracy)))
                .collect();
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                c.setting.label(),
                c.rule,
                c.measure.map_or("-", DindepKind::label),
                topology_label(c.topology),
                c.width,
                c.pairs,
                fmt_opt(c.accuracy()),
                fmt_opt(c.inconclusive()),
                c.runs.len(),
                c.failures(),
                per_run.join(",")
            )
            .unwrap();
        }
        out
    }

    pub fn render(&self) -> String {
        format!("{}# wall_clock_seconds: {:.3}\n", self.body(), self.wall_clock_seconds)
    }

    /// `series pairs accuracy` rows, one series per condition.
    pub fn plot_data(&self) -> String {
        let mut out = String::from("series\tpairs\taccuracy\n");
        let mut cells: Vec<&Cell> = self.cells.iter().collect();
        cells.sort_by(|a, b| a.series().cmp(&b.series()).then(a.pairs.cmp(&b.pairs)));
        for c in cells {
            writeln!(out, "{}\t{}\t{}", c.series(), c.pairs, fmt_opt(c.accuracy())).unwrap();
        }
        out
    }

    pub fn cell(&self, setting: Setting, rule: &str, measure: Option<DindepKind>, topology: Topology, width: usize, pairs: usize) -> Option<&Cell> {
        self.cells.iter().find(|c| {
            c.setting == setting
                && c.rule == rule
                && c.measure == measure
                && c.topology == topology
                && c.width == width
                && c.pairs == pairs
        })
    }
}

/// Row labels a job of `setting` produces, in report order.
fn row_keys(setting: Setting, cfg: &ExperimentConfig) -> Vec<(String, Option<DindepKind>)> {
    let mut keys = Vec::new();
    match setting {
        Setting::MultiPair => {
            for rule in &cfg.rules {
                if *rule == Rule::Thresholded {
                    keys.push((rule.label().to_string(), Some(DindepKind::HsicPValue)));
                } else {
                    for &m in &cfg.measures {
                        keys.push((rule.label().to_string(), Some(m)));
                    }
                }
            }
        }
        Setting::MultiEnv => {
            for &m in &cfg.measures {
                for r in ["vote", "pooled", "per_env"] {
                    keys.push((r.to_string(), Some(m)));
                }
            }
        }
        Setting::Thresholded => {
            for r in ["vote", "per_env"] {
                keys.push((r.to_string(), Some(DindepKind::HsicPValue)));
            }
        }
    }
    keys
}

/// Run the artificial grid. Every job derives its seeds from
/// `(seed, mixing, pairs, ...)`, so the report does not depend on the
/// number of worker threads.
pub fn run_artificial(
    synth: &SynthConfig,
    mlp: &MlpConfig,
    train: &TrainConfig,
    cfg: &ExperimentConfig,
    seed: u64,
    config_snapshot: &str,
) -> Result<ArtificialReport> {
    synth.validate()?;
    mlp.validate()?;
    train.validate()?;
    cfg.validate()?;
    let start = std::time::Instant::now();

    let mut jobs = Vec::new();
    for &setting in &cfg.settings {
        let topologies = match setting {
            Setting::MultiPair => cfg.topologies.clone(),
            _ => vec![Topology::FullyConnected],
        };
        for &topology in &topologies {
            for &width in &cfg.widths {
                for &pairs in &cfg.pair_counts {
                    for mixing in 0..cfg.mixings {
                        jobs.push(Job {
                            setting,
                            topology,
                            width,
                            pairs,
                            mixing,
                        });
                    }
                }
            }
        }
    }
    info!("artificial grid: {} jobs", jobs.len());
    let results = par::map(jobs.clone(), |job| {
        let out = run_job(job, synth, mlp, train, cfg, seed);
        if let Err(e) = &out {
            warn!(
                "{} width {} pairs {} mixing {}: {e}",
                job.setting.label(),
                job.width,
                job.pairs,
                job.mixing
            );
        }
        out.ok()
    });

    let mut cells: Vec<Cell> = Vec::new();
    for (job, res) in jobs.iter().zip(results) {
        let keys = row_keys(job.setting, cfg);
        for (k, (rule, measure)) in keys.into_iter().enumerate() {
            let idx = match cells.iter().position(|c| {
                c.setting == job.setting
                    && c.rule == rule
                    && c.measure == measure
                    && c.topology == job.topology
                    && c.width == job.width
                    && c.pairs == job.pairs
            }) {
                Some(i) => i,
                None => {
                    cells.push(Cell {
                        setting: job.setting,
                        rule,
                        measure,
                        topology: job.topology,
                        width: job.width,
                        pairs: job.pairs,
                        runs: Vec::new(),
                    });
                    cells.len() - 1
                }
            };
            cells[idx].runs.push(res.as_ref().map(|r| r[k]));
        }
    }
    Ok(ArtificialReport {
        seed,
        config_snapshot: config_snapshot.to_string(),
        cells,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    })
}

fn topology_code(t: Topology) -> u64 {
    match t {
        Topology::FullyConnected => 0,
        Topology::Structural => 1,
    }
}

fn run_job(
    job: Job,
    synth: &SynthConfig,
    mlp: &MlpConfig,
    train: &TrainConfig,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<Vec<RunOutcome>> {
    let m = job.mixing as u64;
    let p = job.pairs as u64;
    let synth = SynthConfig {
        triangular: synth.triangular && !(job.setting == Setting::Thresholded && cfg.confounded),
        ..synth.clone()
    };
    // one mixing per index, shared by every condition for paired comparisons
    let net = synth.mixing(derive_seed(seed, &[m, 0, synth.triangular as u64]))?;
    let spec = synth.sources(job.pairs, derive_seed(seed, &[m, 1, p]));
    let mut pairs: Vec<CausalPair> = generate_pairs(&net, &spec, synth.n_per_pair, derive_seed(seed, &[m, 2, p]))?
        .iter()
        .map(|g| g.to_causal_pair())
        .collect();
    let mlp = MlpConfig {
        topology: job.topology,
        hidden_width: job.width,
        sub_widths: None,
        ..mlp.clone()
    };
    let train = TrainConfig {
        seed: derive_seed(seed, &[m, 6, p, job.width as u64, topology_code(job.topology)]),
        ..train.clone()
    };
    let mut swap_rng = rng(derive_seed(seed, &[m, 5, p]));

    match job.setting {
        Setting::MultiPair => {
            let tspec = synth.sources(job.pairs, derive_seed(seed, &[m, 3, p]));
            let test: Vec<CausalPair> = generate_pairs(&net, &tspec, synth.n_per_pair, derive_seed(seed, &[m, 4, p]))?
                .iter()
                .map(|g| {
                    let pair = g.to_causal_pair();
                    if swap_rng.random_bool(0.5) {
                        pair.reordered(InputOrder::Swapped)
                    } else {
                        pair
                    }
                })
                .collect();
            let model = fit_tessera(format!("m{m}"), &pairs, &mlp, &train)?;
            let keys = row_keys(Setting::MultiPair, cfg);
            let mut credit = vec![0.0; keys.len()];
            let mut undecided = vec![0usize; keys.len()];
            for t in &test {
                let truth = t.cause.expect("generated pairs are labeled");
                let c = model.hica_both(&t.points)?;
                for (k, (rule, measure)) in keys.iter().enumerate() {
                    let measure = measure.expect("multi-pair rows name a measure");
                    let d = match rule.as_str() {
                        "rule1" => infer_rule1(&c, measure)?,
                        "rule2" => infer_rule2(&t.points, &c, measure)?,
                        _ => infer_thresholded(&t.points, &c, cfg.alpha)?,
                    };
                    credit[k] += d.verdict.credit(truth);
                    undecided[k] += (d.verdict == Verdict::Inconclusive) as usize;
                }
            }
            let n = test.len() as f64;
            Ok(credit
                .iter()
                .zip(&undecided)
                .map(|(&c, &u)| RunOutcome {
                    accuracy: c / n,
                    inconclusive: u as f64 / n,
                })
                .collect())
        }
        Setting::MultiEnv | Setting::Thresholded => {
            let truth = if swap_rng.random_bool(0.5) {
                pairs = pairs.iter().map(|q| q.reordered(InputOrder::Swapped)).collect();
                Cause::X2
            } else {
                Cause::X1
            };
            let model = fit_tessera(format!("m{m}"), &pairs, &mlp, &train)?;
            let comps = environment_components(&model, &pairs)?;
            let per_env = |v: &crate::infer::EnvironmentVote| {
                let n = v.per_environment.len() as f64;
                RunOutcome {
                    accuracy: v.per_environment.iter().map(|d| d.verdict.credit(truth)).sum::<f64>() / n,
                    inconclusive: v
                        .per_environment
                        .iter()
                        .filter(|d| d.verdict == Verdict::Inconclusive)
                        .count() as f64
                        / n,
                }
            };
            let single = |v: Verdict| RunOutcome {
                accuracy: v.credit(truth),
                inconclusive: (v == Verdict::Inconclusive) as u8 as f64,
            };
            let mut out = Vec::new();
            if job.setting == Setting::MultiEnv {
                for &measure in &cfg.measures {
                    let vote = vote_environments(&pairs, &comps, measure)?;
                    let pooled = infer_pooled(&pairs, &comps, measure)?;
                    out.push(single(vote.winner));
                    out.push(single(pooled.verdict));
                    out.push(per_env(&vote));
                }
            } else {
                let vote = vote_thresholded(&pairs, &comps, cfg.alpha)?;
                out.push(single(vote.winner));
                out.push(per_env(&vote));
            }
            Ok(out)
        }
    }
}

/// Ensemble run over labeled pairs.
#[derive(Debug, Clone)]
pub struct TcepReport {
    pub seed: u64,
    pub config_snapshot: String,
    pub dataset_hash: Option<String>,
    pub excluded: usize,
    pub weights: Vec<f64>,
    pub decisions: Vec<MosaicScore>,
    pub weighted: f64,
    pub unweighted: f64,
    pub models: usize,
    pub failed_models: usize,
    pub search: ThresholdSearch,
    pub thre_t: f64,
    pub thre_v: f64,
    pub wall_clock_seconds: f64,
}

impl TcepReport {
    pub fn body(&self, pool: &TesseraPool) -> String {
        let mut out = String::new();
        writeln!(out, "# experiment: tcep").unwrap();
        writeln!(out, "# seed: {}", self.seed).unwrap();
        if let Some(h) = &self.dataset_hash {
            writeln!(out, "# dataset_sha256: {h}").unwrap();
        }
        writeln!(
            out,
            "# pairs: {} evaluated, {} multivariate excluded",
            self.decisions.len(),
            self.excluded
        )
        .unwrap();
        writeln!(out, "# models: {} trained, {} failed", self.models, self.failed_models).unwrap();
        push_snapshot(&mut out, &self.config_snapshot);
        out.push_str("pair_id\tweight\ttruth\tdecision\tscore\ttesserae\tempty_pool\n");
        for (k, d) in self.decisions.iter().enumerate() {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{:.6}\t{}\t{}",
                d.pair_id,
                self.weights[k],
                pool.truth[k],
                d.verdict,
                d.score,
                d.tesserae.len(),
                d.empty_pool
            )
            .unwrap();
        }
        writeln!(
            out,
            "# accuracy at ThreT={:.4} ThreV={:.4}: weighted {:.6} unweighted {:.6}",
            self.thre_t, self.thre_v, self.weighted, self.unweighted
        )
        .unwrap();
        let kept = self.search.runs.iter().filter(|r| r.kept).count();
        writeln!(out, "# threshold search: {kept} of {} settings kept", self.search.runs.len()).unwrap();
        for (name, s) in [("weighted", self.search.weighted), ("unweighted", self.search.unweighted)] {
            match s {
                Some(s) => writeln!(
                    out,
                    "# {name}: median {:.6} std {:.6} std_error {:.6}",
                    s.median, s.std, s.std_error
                )
                .unwrap(),
                None => writeln!(out, "# {name}: no surviving threshold setting").unwrap(),
            }
        }
        if !self.search.runs.is_empty() {
            out.push_str("thre_t\tthre_v\tsparse_pairs\tkept\tweighted\tunweighted\n");
            for r in &self.search.runs {
                writeln!(
                    out,
                    "{:.6}\t{:.6}\t{}\t{}\t{:.6}\t{:.6}",
                    r.thre_t, r.thre_v, r.sparse_pairs, r.kept, r.weighted, r.unweighted
                )
                .unwrap();
            }
        }
        out
    }

    pub fn render(&self, pool: &TesseraPool) -> String {
        format!("{}# wall_clock_seconds: {:.3}\n", self.body(pool), self.wall_clock_seconds)
    }
}

/// Random training, selection and scoring over labeled pairs, with the
/// threshold search.
pub fn run_tcep(
    pairs: &[CausalPair],
    cfg: &EnsembleConfig,
    dataset_hash: Option<String>,
    excluded: usize,
    config_snapshot: &str,
) -> Result<(TcepReport, TesseraPool)> {
    let start = std::time::Instant::now();
    info!("training {} sets x {} retries", cfg.n_models, cfg.retries);
    let entries = random_training(pairs, cfg)?;
    let failed_models = entries.iter().filter(|e| e.model.is_none()).count();
    info!("evaluating pool");
    let pool = TesseraPool::evaluate(pairs, entries, cfg.measure)?;
    let weights: Vec<f64> = pairs.iter().map(|p| p.weight).collect();
    let decisions = decide_all(&pool, cfg.thre_t, cfg.thre_v, cfg.scoring);
    let verdicts: Vec<Verdict> = decisions.iter().map(|d| d.verdict).collect();
    let (weighted, unweighted) = weighted_accuracy(&verdicts, &weights, &pool.truth)?;
    let search = threshold_search(&pool, &weights, cfg)?;
    let report = TcepReport {
        seed: cfg.seed,
        config_snapshot: config_snapshot.to_string(),
        dataset_hash,
        excluded,
        weights,
        decisions,
        weighted,
        unweighted,
        models: pool.len(),
        failed_models,
        search,
        thre_t: cfg.thre_t,
        thre_v: cfg.thre_v,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((report, pool))
}

/// Labeled pairs for a small end-to-end run: several mixing functions,
/// each contributing a few pairs, with random orientation.
pub fn pseudo_benchmark(synth: &SynthConfig, n_pairs: usize, mixings: usize, seed: u64) -> Result<Vec<CausalPair>> {
    synth.validate()?;
    if mixings == 0 {
        return Err(Error::Config("pseudo benchmark needs at least one mixing".into()));
    }
    let mut out = Vec::with_capacity(n_pairs);
    let mut swap = rng(derive_seed(seed, &[2]));
    let mut weights = rng(derive_seed(seed, &[3]));
    let per = n_pairs.div_ceil(mixings);
    for m in 0..mixings {
        let take = per.min(n_pairs - out.len());
        if take == 0 {
            break;
        }
        let net = synth.mixing(derive_seed(seed, &[0, m as u64]))?;
        let spec = synth.sources(take, derive_seed(seed, &[1, m as u64]));
        for g in generate_pairs(&net, &spec, synth.n_per_pair, derive_seed(seed, &[4, m as u64]))? {
            let pair = g.to_causal_pair();
            let mut pair = if swap.random_bool(0.5) {
                pair.reordered(InputOrder::Swapped)
            } else {
                pair
            };
            pair.id = format!("{:04}", out.len() + 1);
            // weights in {0.5, 1}, like the benchmark's down-weighted groups
            pair.weight = if weights.random_bool(0.25) { 0.5 } else { 1.0 };
            out.push(pair);
        }
    }
    Ok(out)
}
