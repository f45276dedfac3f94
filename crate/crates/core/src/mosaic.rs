//! The ensemble: many models trained on random subsets of labeled pairs,
//! filtered by training and leave-one-out validation accuracy, whose
//! per-pair evidence is summed into one score.

use log::{debug, warn};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indep::DindepKind;
use crate::infer::{decide_rule1, rule1_values};
use crate::nn::{classification_accuracy, MlpConfig, OutputActivation, TrainConfig};
use crate::pair::{CausalPair, Cause, Point, Standardization, Verdict};
use crate::par;
use crate::rng::{derive_seed, permutation, rng};
use crate::tcl::{fit_tessera, TclModel};

/// How the selected tesserae's evidence is summed. `w` is a tessera's
/// own independence level, `a` and `b` its values on the pair under the
/// identity and swapped orders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scoring {
    /// `w * a` when `a > b`, else `-w * b`.
    WinnerWeighted,
    /// `w * (a - b)`.
    MarginWeighted,
    /// `w * sign(a - b)`.
    VoteWeighted,
    /// `a - b`.
    Margin,
}

/// Random-search space for the hyperparameters of each training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub depth: [usize; 2],
    /// Even widths are drawn from this inclusive range.
    pub width: [usize; 2],
    /// Log-uniform.
    pub learning_rate: [f64; 2],
    pub momentum: Vec<f64>,
    pub batch_size: Vec<usize>,
    pub max_steps: [usize; 2],
    pub decay_factor: [f64; 2],
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            depth: [2, 8],
            width: [8, 64],
            learning_rate: [1e-3, 1e-1],
            momentum: vec![0.5, 0.9],
            batch_size: vec![64, 128, 256],
            max_steps: [2000, 10000],
            decay_factor: [0.1, 1.0],
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let ordered = |name: &str, lo: f64, hi: f64| {
            if lo <= hi {
                Ok(())
            } else {
                Err(Error::Config(format!("search range {name} is empty: [{lo}, {hi}]")))
            }
        };
        ordered("depth", self.depth[0] as f64, self.depth[1] as f64)?;
        ordered("width", self.width[0] as f64, self.width[1] as f64)?;
        ordered("learning_rate", self.learning_rate[0], self.learning_rate[1])?;
        ordered("max_steps", self.max_steps[0] as f64, self.max_steps[1] as f64)?;
        ordered("decay_factor", self.decay_factor[0], self.decay_factor[1])?;
        if self.depth[0] == 0 || self.width[1] < 2 || self.max_steps[0] == 0 {
            return Err(Error::Config("depth, width and max_steps must be positive".into()));
        }
        if !(self.learning_rate[0] > 0.0) {
            return Err(Error::Config("learning_rate range must be positive".into()));
        }
        if !(self.decay_factor[0] > 0.0 && self.decay_factor[1] <= 1.0) {
            return Err(Error::Config("decay_factor range must lie in (0, 1]".into()));
        }
        if self.momentum.is_empty() || self.batch_size.is_empty() {
            return Err(Error::Config("momentum and batch_size choices must be non-empty".into()));
        }
        if self.momentum.iter().any(|m| !(0.0..1.0).contains(m)) || self.batch_size.contains(&0) {
            return Err(Error::Config("momentum choices must lie in [0, 1) and batch sizes be positive".into()));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, r: &mut R) -> Hyper {
        let half = [self.width[0].div_ceil(2).max(1), (self.width[1] / 2).max(1)];
        let (llo, lhi) = (self.learning_rate[0].ln(), self.learning_rate[1].ln());
        Hyper {
            depth: r.random_range(self.depth[0]..=self.depth[1]),
            width: 2 * r.random_range(half[0]..=half[1].max(half[0])),
            learning_rate: (llo + (lhi - llo) * r.random::<f64>()).exp(),
            momentum: self.momentum[r.random_range(0..self.momentum.len())],
            batch_size: self.batch_size[r.random_range(0..self.batch_size.len())],
            max_steps: r.random_range(self.max_steps[0]..=self.max_steps[1]),
            decay_factor: self.decay_factor[0]
                + (self.decay_factor[1] - self.decay_factor[0]) * r.random::<f64>(),
        }
    }
}

/// One draw from the search space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub depth: usize,
    pub width: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub decay_factor: f64,
}

impl Hyper {
    pub fn mlp(&self, template: &MlpConfig) -> MlpConfig {
        MlpConfig {
            depth: self.depth,
            hidden_width: self.width,
            sub_widths: None,
            ..template.clone()
        }
    }

    pub fn train(&self, seed: u64, standardization: Standardization) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            decay_factor: self.decay_factor,
            max_steps: self.max_steps,
            batch_size: self.batch_size,
            seed,
            standardization,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    #[serde(rename = "N")]
    pub n_models: usize,
    #[serde(rename = "M")]
    pub retries: usize,
    pub set_size: [usize; 2],
    #[serde(rename = "ThreT")]
    pub thre_t: f64,
    #[serde(rename = "ThreV")]
    pub thre_v: f64,
    pub scoring: Scoring,
    pub measure: DindepKind,
    pub seed: u64,
    /// Threshold pairs drawn for the search; 0 disables it.
    pub threshold_samples: usize,
    pub threshold_range: [f64; 2],
    /// A threshold setting is discarded when more than `max_sparse_pairs`
    /// pairs end up with fewer than `min_tesserae` tesserae.
    pub min_tesserae: usize,
    pub max_sparse_pairs: usize,
    pub standardization: Standardization,
    /// Architecture template; depth and width come from the search.
    pub mlp: MlpConfig,
    pub search: SearchSpace,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            n_models: 300,
            retries: 10,
            set_size: [4, 32],
            thre_t: 0.7,
            thre_v: 0.7,
            scoring: Scoring::Margin,
            measure: DindepKind::DcorComplement,
            seed: 0,
            threshold_samples: 100,
            threshold_range: [0.65, 0.75],
            min_tesserae: 2,
            max_sparse_pairs: 10,
            standardization: Standardization::PerPair,
            mlp: MlpConfig {
                output_activation: OutputActivation::Maxout,
                ..MlpConfig::structural(4, 40)
            },
            search: SearchSpace::default(),
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_models == 0 || self.retries == 0 {
            return Err(Error::Config("N and M must be at least 1".into()));
        }
        for (name, v) in [("ThreT", self.thre_t), ("ThreV", self.thre_v)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        let [lo, hi] = self.threshold_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!("threshold_range [{lo}, {hi}] must lie in [0, 1]")));
        }
        if self.set_size[0] < 2 || self.set_size[0] > self.set_size[1] {
            return Err(Error::Config(format!(
                "set_size [{}, {}] must satisfy 2 <= min <= max",
                self.set_size[0], self.set_size[1]
            )));
        }
        self.mlp.validate()?;
        self.search.validate()
    }
}

/// Result of one training set of the random training stage.
#[derive(Debug, Clone)]
pub struct PoolEntry {
    /// Indices into the pair list.
    pub set: Vec<usize>,
    /// `None` when every retry failed.
    pub model: Option<TclModel>,
    pub cacc: f64,
    pub hyper: Option<Hyper>,
    pub seed: u64,
}

/// Split `points` into two random halves.
fn split_half(points: &[Point], seed: u64) -> (Vec<Point>, Vec<Point>) {
    let idx = permutation(&mut rng(seed), points.len());
    let k = points.len() / 2;
    (
        idx[..k].iter().map(|&i| points[i]).collect(),
        idx[k..].iter().map(|&i| points[i]).collect(),
    )
}

fn train_one_set(pairs: &[CausalPair], cfg: &EnsembleConfig, n: usize) -> Result<PoolEntry> {
    let mut r = rng(derive_seed(cfg.seed, &[n as u64]));
    let max = cfg.set_size[1].min(pairs.len() - 1);
    let size = r.random_range(cfg.set_size[0].min(max)..=max);
    let mut set: Vec<usize> = sample(&mut r, pairs.len(), size).into_vec();
    set.sort_unstable();

    let mut train = Vec::with_capacity(size);
    let mut held = Vec::with_capacity(size);
    let mut held_labels = Vec::new();
    for (class, &i) in set.iter().enumerate() {
        let aligned = pairs[i].aligned()?;
        let (a, b) = split_half(&aligned.points, derive_seed(cfg.seed, &[n as u64, i as u64, 1]));
        held_labels.extend(std::iter::repeat_n(class, b.len()));
        held.push(b);
        train.push(CausalPair { points: a, ..aligned });
    }

    let mut best: Option<(TclModel, f64, Hyper, u64)> = None;
    for m in 0..cfg.retries {
        let seed = derive_seed(cfg.seed, &[n as u64, m as u64]);
        let hyper = cfg.search.sample(&mut rng(seed));
        let mlp = hyper.mlp(&cfg.mlp);
        let train_cfg = hyper.train(seed, cfg.standardization);
        let model = match fit_tessera(format!("t{n:04}"), &train, &mlp, &train_cfg) {
            Ok(model) => model,
            Err(e) => {
                debug!("set {n} retry {m}: {e}");
                continue;
            }
        };
        let held_points: Vec<Point> = held.iter().flat_map(|h| model.mlp.prepare(h)).collect();
        let cacc = classification_accuracy(&model.mlp.model, &held_points, &held_labels)?;
        if best.as_ref().is_none_or(|b| cacc > b.1) {
            best = Some((model, cacc, hyper, seed));
        }
    }
    Ok(match best {
        Some((model, cacc, hyper, seed)) => PoolEntry {
            set,
            model: Some(model),
            cacc,
            hyper: Some(hyper),
            seed,
        },
        None => {
            warn!("all {} trainings of set {n} failed; the set is skipped", cfg.retries);
            PoolEntry {
                set,
                model: None,
                cacc: 0.0,
                hyper: None,
                seed: 0,
            }
        }
    })
}

/// Train `N` sets, each `M` times with random hyperparameters, keeping
/// the model with the best held-out pair-classification accuracy.
pub fn random_training(pairs: &[CausalPair], cfg: &EnsembleConfig) -> Result<Vec<PoolEntry>> {
    cfg.validate()?;
    if pairs.len() <= cfg.set_size[1] {
        return Err(Error::Config(format!(
            "{} labeled pairs cannot supply training sets of up to {} pairs plus a held-out pair",
            pairs.len(),
            cfg.set_size[1]
        )));
    }
    for p in pairs {
        p.validate()?;
        if p.cause.is_none() {
            return Err(Error::InvalidInput(format!("pair {} has no direction label", p.id)));
        }
        if p.len() < 4 {
            return Err(Error::InvalidInput(format!("pair {} has fewer than 4 points", p.id)));
        }
    }
    par::map((0..cfg.n_models).collect(), |n| train_one_set(pairs, cfg, n))
        .into_iter()
        .collect()
}

/// Rule-1 evidence of one model on one pair in its native orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairEval {
    /// Independence under the identity order.
    pub w1: f64,
    /// Independence under the swapped order.
    pub w2: f64,
}

impl PairEval {
    pub fn cause(&self) -> Cause {
        decide_rule1([self.w1, self.w2]).verdict.cause().expect("rule 1 always decides")
    }

    /// Value of the order that puts `cause` first.
    pub fn aligned(&self, cause: Cause) -> f64 {
        match cause {
            Cause::X1 => self.w1,
            Cause::X2 => self.w2,
        }
    }
}

/// Models with their training sets and every accuracy table the
/// selection needs.
#[derive(Debug, Clone)]
pub struct TesseraPool {
    pub pair_ids: Vec<String>,
    pub truth: Vec<Cause>,
    pub entries: Vec<PoolEntry>,
    /// `evals[n][s]`; empty row for a failed entry.
    pub evals: Vec<Vec<PairEval>>,
    pub tacc: Vec<f64>,
    /// `vacc[n][l]`, `None` for `l` in `T_n`.
    pub vacc: Vec<Vec<Option<f64>>>,
    /// Mean aligned independence over the model's own training pairs.
    pub w_n: Vec<f64>,
}

impl TesseraPool {
    /// Evaluate every model on every pair and derive the tables.
    pub fn evaluate(pairs: &[CausalPair], entries: Vec<PoolEntry>, measure: DindepKind) -> Result<TesseraPool> {
        let truth = pairs
            .iter()
            .map(|p| {
                p.cause
                    .ok_or_else(|| Error::InvalidInput(format!("pair {} has no direction label", p.id)))
            })
            .collect::<Result<Vec<_>>>()?;
        let evals = par::map(entries.iter().collect(), |e: &PoolEntry| -> Result<Vec<PairEval>> {
            let Some(model) = &e.model else {
                return Ok(Vec::new());
            };
            pairs
                .iter()
                .map(|p| {
                    let c = model.hica_both(&p.points)?;
                    let [w1, w2] = rule1_values(&c, measure)?;
                    Ok(PairEval { w1, w2 })
                })
                .collect()
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let pool = TesseraPool::from_tables(
            pairs.iter().map(|p| p.id.clone()).collect(),
            truth,
            entries,
            evals,
        );
        Ok(pool)
    }

    /// Derive `tacc`, `vacc` and `w_n` from the evaluation table.
    pub fn from_tables(
        pair_ids: Vec<String>,
        truth: Vec<Cause>,
        entries: Vec<PoolEntry>,
        evals: Vec<Vec<PairEval>>,
    ) -> TesseraPool {
        let s = pair_ids.len();
        let mut tacc = Vec::with_capacity(entries.len());
        let mut vacc = Vec::with_capacity(entries.len());
        let mut w_n = Vec::with_capacity(entries.len());
        for (e, ev) in entries.iter().zip(&evals) {
            if ev.is_empty() {
                tacc.push(0.0);
                vacc.push(vec![None; s]);
                w_n.push(0.0);
                continue;
            }
            let credit = |k: usize| Verdict::Cause(ev[k].cause()).credit(truth[k]);
            let in_set: Vec<bool> = (0..s).map(|k| e.set.binary_search(&k).is_ok()).collect();
            let t = e.set.iter().map(|&k| credit(k)).sum::<f64>() / e.set.len() as f64;
            let w = e.set.iter().map(|&k| ev[k].aligned(truth[k])).sum::<f64>() / e.set.len() as f64;
            let outside: Vec<usize> = (0..s).filter(|&k| !in_set[k]).collect();
            let total: f64 = outside.iter().map(|&k| credit(k)).sum();
            let mut v = vec![None; s];
            if outside.len() >= 2 {
                for &l in &outside {
                    v[l] = Some((total - credit(l)) / (outside.len() - 1) as f64);
                }
            }
            tacc.push(t);
            vacc.push(v);
            w_n.push(w);
        }
        TesseraPool {
            pair_ids,
            truth,
            entries,
            evals,
            tacc,
            vacc,
            w_n,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// For every pair, the models that did not train on it and pass both
/// accuracy thresholds.
pub fn select_tesserae(pool: &TesseraPool, thre_t: f64, thre_v: f64) -> Vec<Vec<usize>> {
    (0..pool.pair_ids.len())
        .map(|s| {
            (0..pool.len())
                .filter(|&n| {
                    pool.entries[n].model.is_some()
                        && pool.entries[n].set.binary_search(&s).is_err()
                        && pool.tacc[n] > thre_t
                        && pool.vacc[n][s].is_some_and(|v| v > thre_v)
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MosaicScore {
    pub pair_id: String,
    pub tesserae: Vec<usize>,
    pub w_n: Vec<f64>,
    pub w_ns: Vec<[f64; 2]>,
    /// +1 for cause 1, -1 for cause 2.
    pub votes: Vec<i8>,
    pub score: f64,
    pub verdict: Verdict,
    pub empty_pool: bool,
}

/// Sum the evidence of the selected tesserae for pair `s`.
pub fn ensemble_decide(s: usize, tesserae: &[usize], pool: &TesseraPool, scoring: Scoring) -> MosaicScore {
    let w_n: Vec<f64> = tesserae.iter().map(|&n| pool.w_n[n]).collect();
    let w_ns: Vec<[f64; 2]> = tesserae
        .iter()
        .map(|&n| {
            let e = pool.evals[n][s];
            [e.w1, e.w2]
        })
        .collect();
    let score = score_terms(&w_n, &w_ns, scoring);
    let votes = w_ns.iter().map(|w| if w[0] >= w[1] { 1 } else { -1 }).collect();
    MosaicScore {
        pair_id: pool.pair_ids[s].clone(),
        tesserae: tesserae.to_vec(),
        w_n,
        w_ns,
        votes,
        score,
        verdict: verdict_of(score),
        empty_pool: tesserae.is_empty(),
    }
}

pub fn verdict_of(score: f64) -> Verdict {
    if score > 0.0 {
        Verdict::Cause(Cause::X1)
    } else if score < 0.0 {
        Verdict::Cause(Cause::X2)
    } else {
        Verdict::Inconclusive
    }
}

/// The four aggregation formulas over per-tessera weights.
pub fn score_terms(w_n: &[f64], w_ns: &[[f64; 2]], scoring: Scoring) -> f64 {
    w_n.iter()
        .zip(w_ns)
        .map(|(&wn, &[a, b])| match scoring {
            Scoring::WinnerWeighted => {
                if a > b {
                    a * wn
                } else if a < b {
                    -b * wn
                } else {
                    0.0
                }
            }
            Scoring::MarginWeighted => wn * (a - b),
            Scoring::VoteWeighted => wn * if a >= b { 1.0 } else { -1.0 },
            Scoring::Margin => a - b,
        })
        .sum()
}

/// `(weighted, unweighted)` accuracy in `[0, 1]`; undecided counts half.
pub fn weighted_accuracy(verdicts: &[Verdict], weights: &[f64], truth: &[Cause]) -> Result<(f64, f64)> {
    if verdicts.len() != weights.len() || verdicts.len() != truth.len() {
        return Err(Error::Dimension {
            expected: verdicts.len(),
            got: weights.len().min(truth.len()),
        });
    }
    if verdicts.is_empty() {
        return Err(Error::InvalidInput("accuracy over no pairs".into()));
    }
    let credit: Vec<f64> = verdicts.iter().zip(truth).map(|(v, &t)| v.credit(t)).collect();
    let wsum: f64 = weights.iter().sum();
    let weighted = credit.iter().zip(weights).map(|(c, w)| c * w).sum::<f64>() / wsum;
    let unweighted = credit.iter().sum::<f64>() / credit.len() as f64;
    Ok((weighted, unweighted))
}

/// Decisions for every pair at one threshold setting.
pub fn decide_all(pool: &TesseraPool, thre_t: f64, thre_v: f64, scoring: Scoring) -> Vec<MosaicScore> {
    select_tesserae(pool, thre_t, thre_v)
        .iter()
        .enumerate()
        .map(|(s, tsr)| ensemble_decide(s, tsr, pool, scoring))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdRun {
    pub thre_t: f64,
    pub thre_v: f64,
    pub sparse_pairs: usize,
    pub kept: bool,
    pub weighted: f64,
    pub unweighted: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spread {
    pub median: f64,
    pub std: f64,
    pub std_error: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Option<Spread> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        };
        let mean = v.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Spread {
            median,
            std,
            std_error: std / (n as f64).sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSearch {
    pub runs: Vec<ThresholdRun>,
    pub weighted: Option<Spread>,
    pub unweighted: Option<Spread>,
}

/// Draw threshold pairs uniformly in the configured square, drop those
/// that leave too many pairs under-covered and summarize the rest.
pub fn threshold_search(pool: &TesseraPool, weights: &[f64], cfg: &EnsembleConfig) -> Result<ThresholdSearch> {
    let mut r = rng(derive_seed(cfg.seed, &[u64::MAX]));
    let [lo, hi] = cfg.threshold_range;
    let mut runs = Vec::with_capacity(cfg.threshold_samples);
    for _ in 0..cfg.threshold_samples {
        let thre_t = lo + (hi - lo) * r.random::<f64>();
        let thre_v = lo + (hi - lo) * r.random::<f64>();
        let tsr = select_tesserae(pool, thre_t, thre_v);
        let sparse_pairs = tsr.iter().filter(|t| t.len() < cfg.min_tesserae).count();
        let verdicts: Vec<Verdict> = tsr
            .iter()
            .enumerate()
            .map(|(s, t)| ensemble_decide(s, t, pool, cfg.scoring).verdict)
            .collect();
        let (weighted, unweighted) = weighted_accuracy(&verdicts, weights, &pool.truth)?;
        runs.push(ThresholdRun {
            thre_t,
            thre_v,
            sparse_pairs,
            kept: sparse_pairs <= cfg.max_sparse_pairs,
            weighted,
            unweighted,
        });
    }
    let kept = |f: fn(&ThresholdRun) -> f64| -> Vec<f64> { runs.iter().filter(|r| r.kept).map(f).collect() };
    Ok(ThresholdSearch {
        weighted: Spread::of(&kept(|r| r.weighted)),
        unweighted: Spread::of(&kept(|r| r.unweighted)),
        runs,
    })
}

/// Evidence of a stored pool on an unseen pair. A model qualifies when
/// its training accuracy passes `thre_t` and its accuracy over every
/// labeled pair outside its training set passes `thre_v`.
pub fn decide_new_pair(
    pool: &TesseraPool,
    pair_id: &str,
    points: &[Point],
    thre_t: f64,
    thre_v: f64,
    scoring: Scoring,
    measure: DindepKind,
) -> Result<MosaicScore> {
    let mut tesserae = Vec::new();
    for (n, e) in pool.entries.iter().enumerate() {
        if e.model.is_none() || pool.tacc[n] <= thre_t {
            continue;
        }
        let outside: Vec<usize> = (0..pool.pair_ids.len()).filter(|k| e.set.binary_search(k).is_err()).collect();
        if outside.is_empty() {
            continue;
        }
        let ev = &pool.evals[n];
        let v = outside
            .iter()
            .map(|&k| Verdict::Cause(ev[k].cause()).credit(pool.truth[k]))
            .sum::<f64>()
            / outside.len() as f64;
        if v > thre_v {
            tesserae.push(n);
        }
    }
    let w_ns = tesserae
        .iter()
        .map(|&n| {
            let model = pool.entries[n].model.as_ref().expect("selected models exist");
            rule1_values(&model.hica_both(points)?, measure)
        })
        .collect::<Result<Vec<[f64; 2]>>>()?;
    let w_n: Vec<f64> = tesserae.iter().map(|&n| pool.w_n[n]).collect();
    let score = score_terms(&w_n, &w_ns, scoring);
    Ok(MosaicScore {
        pair_id: pair_id.to_string(),
        votes: w_ns.iter().map(|w| if w[0] >= w[1] { 1 } else { -1 }).collect(),
        empty_pool: tesserae.is_empty(),
        tesserae,
        w_n,
        w_ns,
        score,
        verdict: verdict_of(score),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(set: Vec<usize>) -> PoolEntry {
        PoolEntry {
            set,
            model: None,
            cacc: 0.0,
            hyper: None,
            seed: 0,
        }
    }

    /// A pool whose tables are set by hand. Entries carry no model.
    fn hand_pool(sets: Vec<Vec<usize>>, evals: Vec<Vec<PairEval>>, truth: Vec<Cause>) -> TesseraPool {
        let ids = (0..truth.len()).map(|i| format!("{i}")).collect();
        TesseraPool::from_tables(ids, truth, sets.into_iter().map(entry).collect(), evals)
    }

    fn ev(w1: f64, w2: f64) -> PairEval {
        PairEval { w1, w2 }
    }

    #[test]
    fn scoring_formulas() {
        assert_eq!(score_terms(&[1.0], &[[0.8, 0.3]], Scoring::Margin), 0.5);
        let two = [[0.8, 0.3], [0.2, 0.9]];
        assert!((score_terms(&[1.0, 1.0], &two, Scoring::Margin) + 0.2).abs() < 1e-12);
        assert_eq!(score_terms(&[1.0, 1.0], &two, Scoring::VoteWeighted), 0.0);
        assert_eq!(verdict_of(0.0), Verdict::Inconclusive);
        assert!((score_terms(&[0.5, 2.0], &two, Scoring::MarginWeighted) - (0.25 - 1.4)).abs() < 1e-12);
        assert!((score_terms(&[0.5, 2.0], &two, Scoring::WinnerWeighted) - (0.4 - 1.8)).abs() < 1e-12);
    }

    #[test]
    fn weighted_accuracy_examples() {
        let c1 = Verdict::Cause(Cause::X1);
        let truth = [Cause::X1, Cause::X2];
        assert_eq!(weighted_accuracy(&[c1, Verdict::Cause(Cause::X2)], &[3.0, 0.5], &truth).unwrap(), (1.0, 1.0));
        let (w, u) = weighted_accuracy(&[c1, c1], &[2.0, 1.0], &truth).unwrap();
        assert!((w - 2.0 / 3.0).abs() < 1e-12 && (u - 0.5).abs() < 1e-12);
        let (w, _) = weighted_accuracy(&[Verdict::Inconclusive], &[1.0], &[Cause::X1]).unwrap();
        assert_eq!(w, 0.5);
    }

    #[test]
    fn loocv_tables() {
        // 5 pairs, all caused by X1; model 0 trained on {0, 1}
        let truth = vec![Cause::X1; 5];
        let evals = vec![vec![ev(0.9, 0.1), ev(0.9, 0.1), ev(0.9, 0.1), ev(0.1, 0.9), ev(0.9, 0.1)]];
        let pool = hand_pool(vec![vec![0, 1]], evals, truth);
        assert_eq!(pool.tacc[0], 1.0);
        assert!((pool.w_n[0] - 0.9).abs() < 1e-12);
        assert_eq!(pool.vacc[0][0], None);
        assert_eq!(pool.vacc[0][1], None);
        // leaving out pair 3 (the wrong one) gives 2/2, others 1/2
        assert_eq!(pool.vacc[0][3], Some(1.0));
        assert_eq!(pool.vacc[0][2], Some(0.5));
        assert_eq!(pool.vacc[0][4], Some(0.5));
    }

    #[test]
    fn selection_matches_brute_force() {
        let truth: Vec<Cause> = (0..8).map(|i| if i % 3 == 0 { Cause::X2 } else { Cause::X1 }).collect();
        let mut r = rng(9);
        let mut sets = Vec::new();
        let mut evals = Vec::new();
        for _ in 0..10 {
            let mut s: Vec<usize> = sample(&mut r, 8, 3).into_vec();
            s.sort_unstable();
            sets.push(s);
            evals.push((0..8).map(|_| ev(r.random(), r.random())).collect());
        }
        let mut pool = hand_pool(sets, evals, truth);
        // mark every entry usable
        let template = fit_dummy();
        for e in &mut pool.entries {
            e.model = Some(template.clone());
        }
        for (tt, tv) in [(0.0, 0.0), (0.3, 0.5), (0.6, 0.4), (1.01, 0.0)] {
            let got = select_tesserae(&pool, tt, tv);
            for s in 0..8 {
                let mut want = Vec::new();
                for n in 0..10 {
                    let inside = pool.entries[n].set.contains(&s);
                    if !inside && pool.tacc[n] > tt && pool.vacc[n][s].unwrap() > tv {
                        want.push(n);
                    }
                }
                assert_eq!(got[s], want, "thresholds ({tt}, {tv}), pair {s}");
                for &n in &got[s] {
                    assert!(!pool.entries[n].set.contains(&s));
                }
            }
            if tt == 0.0 && tv == 0.0 {
                for (s, g) in got.iter().enumerate() {
                    let outside: Vec<usize> = (0..10)
                        .filter(|&n| !pool.entries[n].set.contains(&s) && pool.tacc[n] > 0.0)
                        .collect();
                    assert_eq!(*g, outside);
                }
            }
            if tt > 1.0 {
                assert!(got.iter().all(|g| g.is_empty()));
            }
        }
    }

    fn fit_dummy() -> TclModel {
        use crate::lica::LinearUnmixing;
        use crate::nn::{MlpModel, TrainedMlp};
        let cfg = MlpConfig::structural(1, 2);
        TclModel {
            id: "dummy".into(),
            mlp: TrainedMlp {
                model: MlpModel::zeros(&cfg, 2).unwrap(),
                standardization: Standardization::None,
                pooled: crate::pair::Standardizer::IDENTITY,
                train_accuracy: 0.0,
                losses: Vec::new(),
            },
            training_ids: Vec::new(),
            unmixing: Some(LinearUnmixing {
                mean: [0.0; 2],
                whitening: [[1.0, 0.0], [0.0, 1.0]],
                rotation: [[1.0, 0.0], [0.0, 1.0]],
                converged: true,
                iterations: 0,
            }),
        }
    }

    #[test]
    fn empty_selection_is_inconclusive() {
        let pool = hand_pool(vec![vec![0]], vec![vec![ev(0.9, 0.1); 3]], vec![Cause::X1; 3]);
        let d = ensemble_decide(1, &[], &pool, Scoring::Margin);
        assert!(d.empty_pool);
        assert_eq!(d.verdict, Verdict::Inconclusive);
    }

    #[test]
    fn weighted_votes_with_equal_weights_are_majority() {
        use crate::infer::majority;
        let mut r = rng(4);
        for _ in 0..200 {
            let k = r.random_range(1..8);
            let w_ns: Vec<[f64; 2]> = (0..k).map(|_| [r.random(), r.random()]).collect();
            let votes: Vec<Verdict> = w_ns
                .iter()
                .map(|w| Verdict::Cause(if w[0] >= w[1] { Cause::X1 } else { Cause::X2 }))
                .collect();
            let s = score_terms(&vec![0.7; k], &w_ns, Scoring::VoteWeighted);
            assert_eq!(verdict_of(s), majority(&votes).0);
        }
    }

    #[test]
    fn raising_w1_never_flips_toward_cause_two() {
        let mut r = rng(5);
        for _ in 0..200 {
            let k = r.random_range(1..6);
            let w_n: Vec<f64> = (0..k).map(|_| r.random()).collect();
            let mut w_ns: Vec<[f64; 2]> = (0..k).map(|_| [r.random(), r.random()]).collect();
            for scoring in [Scoring::MarginWeighted, Scoring::Margin] {
                let before = score_terms(&w_n, &w_ns, scoring);
                let i = r.random_range(0..k);
                w_ns[i][0] += r.random::<f64>();
                let after = score_terms(&w_n, &w_ns, scoring);
                if before > 0.0 {
                    assert!(after > 0.0);
                }
            }
        }
    }

    #[test]
    fn spread_summary() {
        let s = Spread::of(&[0.6, 0.8, 0.7]).unwrap();
        assert!((s.median - 0.7).abs() < 1e-12);
        assert!((s.std - 0.1).abs() < 1e-12);
        assert!(Spread::of(&[]).is_none());
    }

    #[test]
    fn search_space_draws_stay_in_range() {
        let space = SearchSpace::default();
        let mut r = rng(3);
        for _ in 0..500 {
            let h = space.sample(&mut r);
            assert!((2..=8).contains(&h.depth));
            assert!((8..=64).contains(&h.width) && h.width % 2 == 0);
            assert!((1e-3..=1e-1).contains(&h.learning_rate));
            assert!([64, 128, 256].contains(&h.batch_size));
            assert!((2000..=10000).contains(&h.max_steps));
            assert!((0.1..=1.0).contains(&h.decay_factor));
        }
    }

    #[test]
    fn config_validation() {
        assert!(EnsembleConfig::default().validate().is_ok());
        assert!(EnsembleConfig { thre_t: 1.5, ..EnsembleConfig::default() }.validate().is_err());
        assert!(EnsembleConfig { n_models: 0, ..EnsembleConfig::default() }.validate().is_err());
    }
}
