//! Direction inference rules.
//!
//! The pure `decide_*` functions turn a table of independence degrees into
//! a decision; the `infer_*` functions compute that table from components.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indep::{dindep, hsic_pvalue, DindepKind, PValueMode};
use crate::nn::{MlpConfig, TrainConfig};
use crate::pair::{CausalPair, Cause, InputOrder, Point, Verdict};
use crate::tcl::{fit_tessera, ComponentPair, TclModel};

/// Fewer environments cannot satisfy the rank condition.
pub const MIN_ENVIRONMENTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Rule1,
    Rule2,
    Pooled,
    Thresholded,
}

impl Rule {
    pub fn label(self) -> &'static str {
        match self {
            Rule::Rule1 => "rule1",
            Rule::Rule2 => "rule2",
            Rule::Pooled => "pooled",
            Rule::Thresholded => "thresholded",
        }
    }
}

/// One evaluated trial. Rule 1 fills only `order`; the rule-2 grid fills
/// `variable`, `component` and `order`; the environment rules leave
/// `order` empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trial {
    pub order: Option<InputOrder>,
    pub variable: Option<Cause>,
    /// 0 or 1.
    pub component: Option<usize>,
    pub value: f64,
}

impl fmt::Display for Trial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut tag = String::new();
        if let Some(v) = self.variable {
            write!(tag, "x{v}").unwrap();
        }
        if let Some(j) = self.component {
            write!(tag, "c{}", j + 1).unwrap();
        }
        if let Some(o) = self.order {
            tag.push_str(o.label());
        }
        write!(f, "{tag}={:.6}", self.value)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionDecision {
    pub verdict: Verdict,
    pub evidence: Vec<Trial>,
    pub rule: Rule,
    /// Set when the maximum was shared and the deterministic tie rule
    /// picked the answer.
    pub tie: bool,
}

impl DirectionDecision {
    /// Best value for cause 1 minus best value for cause 2.
    pub fn margin(&self) -> f64 {
        let best = |c: Cause| {
            self.evidence
                .iter()
                .filter(|t| trial_cause(t) == Some(c))
                .map(|t| t.value)
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let m = best(Cause::X1) - best(Cause::X2);
        if m.is_finite() {
            m
        } else {
            0.0
        }
    }

    /// Tab-separated `pair_id rule cause margin evidence...`.
    pub fn results_line(&self, pair_id: &str) -> String {
        let mut line = format!(
            "{pair_id}\t{}\t{}\t{:.6}",
            self.rule.label(),
            self.verdict,
            self.margin()
        );
        for t in &self.evidence {
            write!(line, "\t{t}").unwrap();
        }
        if self.tie {
            line.push_str("\ttie");
        }
        line
    }
}

/// The cause a single trial votes for.
fn trial_cause(t: &Trial) -> Option<Cause> {
    t.variable.or(t.order.map(InputOrder::first))
}

/// First maximum in iteration order.
fn argmax(trials: &[Trial]) -> (usize, bool) {
    let mut best = 0;
    for (k, t) in trials.iter().enumerate().skip(1) {
        if t.value > trials[best].value {
            best = k;
        }
    }
    let top = trials[best].value;
    let shared = trials.iter().filter(|t| t.value == top).count() > 1;
    (best, shared)
}

fn decide_by_argmax(evidence: Vec<Trial>, rule: Rule) -> DirectionDecision {
    let (best, shared) = argmax(&evidence);
    let cause = trial_cause(&evidence[best]).expect("every trial names a cause");
    DirectionDecision {
        verdict: Verdict::Cause(cause),
        evidence,
        rule,
        tie: shared,
    }
}

/// Rule 1 from the two orders' component independence; ties go to the
/// identity order.
pub fn decide_rule1(values: [f64; 2]) -> DirectionDecision {
    let evidence = InputOrder::BOTH
        .iter()
        .zip(values)
        .map(|(&o, value)| Trial {
            order: Some(o),
            variable: None,
            component: None,
            value,
        })
        .collect();
    decide_by_argmax(evidence, Rule::Rule1)
}

/// Index into the rule-2 value grid.
pub fn grid_index(variable: Cause, component: usize, order: InputOrder) -> usize {
    let o = match order {
        InputOrder::Identity => 0,
        InputOrder::Swapped => 1,
    };
    (variable.index() - 1) * 4 + component * 2 + o
}

fn rule2_trials(values: [f64; 8]) -> Vec<Trial> {
    let mut out = Vec::with_capacity(8);
    for variable in [Cause::X1, Cause::X2] {
        for component in 0..2 {
            for order in InputOrder::BOTH {
                out.push(Trial {
                    order: Some(order),
                    variable: Some(variable),
                    component: Some(component),
                    value: values[grid_index(variable, component, order)],
                });
            }
        }
    }
    out
}

/// Rule 2 from the 8 values laid out by [`grid_index`]. The first maximum
/// in `(i, j, order)` order wins.
pub fn decide_rule2(values: [f64; 8]) -> DirectionDecision {
    decide_by_argmax(rule2_trials(values), Rule::Rule2)
}

/// Argmax over `(i, j)` without input permutation; `values[i][j]`.
pub fn decide_simplified(values: [[f64; 2]; 2], rule: Rule) -> DirectionDecision {
    let mut evidence = Vec::with_capacity(4);
    for (i, row) in values.iter().enumerate() {
        for (j, &value) in row.iter().enumerate() {
            evidence.push(Trial {
                order: None,
                variable: Cause::from_index(i + 1),
                component: Some(j),
                value,
            });
        }
    }
    decide_by_argmax(evidence, rule)
}

fn check_orders(c: &[ComponentPair; 2]) -> Result<()> {
    if c[0].order != InputOrder::Identity || c[1].order != InputOrder::Swapped {
        return Err(Error::Usage(
            "component pairs must be given in identity, swapped order".into(),
        ));
    }
    if c[0].model_id != c[1].model_id {
        return Err(Error::Usage("component pairs come from different models".into()));
    }
    Ok(())
}

/// Independence between the two components of each order.
pub fn rule1_values(c: &[ComponentPair; 2], measure: DindepKind) -> Result<[f64; 2]> {
    check_orders(c)?;
    Ok([
        dindep(&c[0].column(0), &c[0].column(1), measure)?,
        dindep(&c[1].column(0), &c[1].column(1), measure)?,
    ])
}

pub fn infer_rule1(c: &[ComponentPair; 2], measure: DindepKind) -> Result<DirectionDecision> {
    Ok(decide_rule1(rule1_values(c, measure)?))
}

fn column(points: &[Point], k: usize) -> Vec<f64> {
    points.iter().map(|p| p[k]).collect()
}

fn grid_values<F>(points: &[Point], c: &[ComponentPair; 2], mut f: F) -> Result<[f64; 8]>
where
    F: FnMut(&[f64], &[f64]) -> Result<f64>,
{
    check_orders(c)?;
    let mut values = [0.0; 8];
    for variable in [Cause::X1, Cause::X2] {
        let x = column(points, variable.index() - 1);
        for component in 0..2 {
            for (k, order) in InputOrder::BOTH.into_iter().enumerate() {
                values[grid_index(variable, component, order)] = f(&x, &c[k].column(component))?;
            }
        }
    }
    Ok(values)
}

pub fn infer_rule2(
    points: &[Point],
    c: &[ComponentPair; 2],
    measure: DindepKind,
) -> Result<DirectionDecision> {
    let values = grid_values(points, c, |x, y| dindep(x, y, measure))?;
    Ok(decide_rule2(values))
}

/// How the training pairs of [`train_and_infer`] are brought into alignment.
#[derive(Debug, Clone, PartialEq)]
pub enum DirectionInfo {
    /// The cause of every pair.
    CauseIndices(Vec<Cause>),
    /// An order per pair that makes the set aligned without saying which
    /// side is the cause.
    Permutations(Vec<InputOrder>),
}

pub fn align(pairs: &[CausalPair], info: &DirectionInfo) -> Result<Vec<CausalPair>> {
    let orders: Vec<InputOrder> = match info {
        DirectionInfo::CauseIndices(c) => c.iter().map(|&c| InputOrder::cause_first(c)).collect(),
        DirectionInfo::Permutations(p) => p.clone(),
    };
    if orders.len() != pairs.len() {
        return Err(Error::Dimension {
            expected: pairs.len(),
            got: orders.len(),
        });
    }
    Ok(pairs.iter().zip(orders).map(|(p, o)| p.reordered(o)).collect())
}

/// Align, train, fit the unmixing and apply `rule` to the test pair.
pub fn train_and_infer(
    train: &[CausalPair],
    info: &DirectionInfo,
    test: &[Point],
    rule: Rule,
    mlp: &MlpConfig,
    train_cfg: &TrainConfig,
    measure: DindepKind,
) -> Result<(DirectionDecision, TclModel)> {
    let aligned = align(train, info)?;
    let model = fit_tessera("train_and_infer", &aligned, mlp, train_cfg)?;
    let c = model.hica_both(test)?;
    let decision = match rule {
        Rule::Rule1 => infer_rule1(&c, measure)?,
        Rule::Rule2 => infer_rule2(test, &c, measure)?,
        Rule::Thresholded => infer_thresholded(test, &c, 0.05)?,
        Rule::Pooled => {
            return Err(Error::Usage("the pooled rule needs several environments".into()))
        }
    };
    Ok((decision, model))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentVote {
    pub per_environment: Vec<DirectionDecision>,
    pub winner: Verdict,
    /// `|votes for 1 - votes for 2|`.
    pub margin: usize,
}

/// Majority over decided votes; an exact tie is inconclusive.
pub fn majority(votes: &[Verdict]) -> (Verdict, usize) {
    let ones = votes.iter().filter(|v| **v == Verdict::Cause(Cause::X1)).count();
    let twos = votes.iter().filter(|v| **v == Verdict::Cause(Cause::X2)).count();
    let winner = match ones.cmp(&twos) {
        std::cmp::Ordering::Greater => Verdict::Cause(Cause::X1),
        std::cmp::Ordering::Less => Verdict::Cause(Cause::X2),
        std::cmp::Ordering::Equal => Verdict::Inconclusive,
    };
    (winner, ones.abs_diff(twos))
}

fn simplified_values(points: &[Point], c: &ComponentPair, measure: DindepKind) -> Result<[[f64; 2]; 2]> {
    let mut v = [[0.0; 2]; 2];
    for (i, row) in v.iter_mut().enumerate() {
        let x = column(points, i);
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = dindep(&x, &c.column(j), measure)?;
        }
    }
    Ok(v)
}

/// Per-environment simplified rule 2 and a majority vote, given
/// identity-order components of every environment.
pub fn vote_environments(
    environments: &[CausalPair],
    components: &[ComponentPair],
    measure: DindepKind,
) -> Result<EnvironmentVote> {
    check_environments(environments, components)?;
    let per_environment = environments
        .iter()
        .zip(components)
        .map(|(e, c)| Ok(decide_simplified(simplified_values(&e.points, c, measure)?, Rule::Rule2)))
        .collect::<Result<Vec<_>>>()?;
    let votes: Vec<Verdict> = per_environment.iter().map(|d| d.verdict).collect();
    let (winner, margin) = majority(&votes);
    Ok(EnvironmentVote {
        per_environment,
        winner,
        margin,
    })
}

fn check_environments(environments: &[CausalPair], components: &[ComponentPair]) -> Result<()> {
    if environments.len() != components.len() {
        return Err(Error::Dimension {
            expected: environments.len(),
            got: components.len(),
        });
    }
    if environments.is_empty() {
        return Err(Error::InvalidInput("no environments".into()));
    }
    for (e, c) in environments.iter().zip(components) {
        if e.len() != c.components.len() {
            return Err(Error::Dimension {
                expected: e.len(),
                got: c.components.len(),
            });
        }
    }
    Ok(())
}

/// Train one model on all environments, then vote. Environments must
/// already be aligned.
pub fn infer_multi_env(
    environments: &[CausalPair],
    measure: DindepKind,
    mlp: &MlpConfig,
    train: &TrainConfig,
) -> Result<(EnvironmentVote, TclModel)> {
    if environments.len() < MIN_ENVIRONMENTS {
        return Err(Error::DegenerateTask(format!(
            "multi-environment inference needs at least {MIN_ENVIRONMENTS} environments, got {}",
            environments.len()
        )));
    }
    let model = fit_tessera("environments", environments, mlp, train)?;
    let components = environment_components(&model, environments)?;
    Ok((vote_environments(environments, &components, measure)?, model))
}

pub fn environment_components(model: &TclModel, environments: &[CausalPair]) -> Result<Vec<ComponentPair>> {
    environments
        .iter()
        .map(|e| model.hica(&e.points, InputOrder::Identity))
        .collect()
}

/// The pooled baseline: concatenate every environment per variable and
/// per component, then one argmax over `(i, j)`.
pub fn infer_pooled(
    environments: &[CausalPair],
    components: &[ComponentPair],
    measure: DindepKind,
) -> Result<DirectionDecision> {
    check_environments(environments, components)?;
    let xs: [Vec<f64>; 2] = [0, 1].map(|i| {
        environments
            .iter()
            .flat_map(|e| e.points.iter().map(move |p| p[i]))
            .collect()
    });
    let cs: [Vec<f64>; 2] = [0, 1].map(|j| {
        components
            .iter()
            .flat_map(|c| c.components.iter().map(move |p| p[j]))
            .collect()
    });
    let mut v = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            v[i][j] = dindep(&xs[i], &cs[j], measure)?;
        }
    }
    Ok(decide_simplified(v, Rule::Pooled))
}

/// Causes of the trials whose p-value exceeds `alpha`. One cause → that
/// cause; none or both → inconclusive.
pub fn decide_thresholded(pvalues: [f64; 8], alpha: f64) -> DirectionDecision {
    let evidence = rule2_trials(pvalues);
    let accepted: Vec<Cause> = evidence
        .iter()
        .filter(|t| t.value > alpha)
        .filter_map(trial_cause)
        .collect();
    let verdict = match accepted.first() {
        Some(&c) if accepted.iter().all(|&a| a == c) => Verdict::Cause(c),
        _ => Verdict::Inconclusive,
    };
    DirectionDecision {
        verdict,
        evidence,
        rule: Rule::Thresholded,
        tie: false,
    }
}

/// The rule-2 grid with HSIC tests at level `alpha`.
pub fn infer_thresholded(points: &[Point], c: &[ComponentPair; 2], alpha: f64) -> Result<DirectionDecision> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let p = grid_values(points, c, |x, y| hsic_pvalue(x, y, PValueMode::GammaApprox))?;
    Ok(decide_thresholded(p, alpha))
}

/// The thresholded rule per environment without input permutation, then
/// a majority vote over the decided environments.
pub fn vote_thresholded(
    environments: &[CausalPair],
    components: &[ComponentPair],
    alpha: f64,
) -> Result<EnvironmentVote> {
    check_environments(environments, components)?;
    let mut per_environment = Vec::with_capacity(environments.len());
    for (e, c) in environments.iter().zip(components) {
        let mut p = [1.0; 8];
        for i in 0..2 {
            let x = column(&e.points, i);
            for j in 0..2 {
                let v = hsic_pvalue(&x, &c.column(j), PValueMode::GammaApprox)?;
                let var = Cause::from_index(i + 1).expect("index 1 or 2");
                p[grid_index(var, j, InputOrder::Identity)] = v;
                // the absent swapped trials never accept
                p[grid_index(var, j, InputOrder::Swapped)] = 0.0;
            }
        }
        per_environment.push(decide_thresholded(p, alpha));
    }
    let votes: Vec<Verdict> = per_environment.iter().map(|d| d.verdict).collect();
    let (winner, margin) = majority(&votes);
    Ok(EnvironmentVote {
        per_environment,
        winner,
        margin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule1_argmax_and_tie() {
        assert_eq!(decide_rule1([0.9, 0.2]).verdict, Verdict::Cause(Cause::X1));
        assert_eq!(decide_rule1([0.2, 0.9]).verdict, Verdict::Cause(Cause::X2));
        let t = decide_rule1([0.5, 0.5]);
        assert!(t.tie);
        assert_eq!(t.verdict, Verdict::Cause(Cause::X1));
        assert_eq!(t.evidence.len(), 2);
    }

    #[test]
    fn rule2_unique_maximum() {
        let mut v = [0.1; 8];
        v[grid_index(Cause::X2, 0, InputOrder::Swapped)] = 0.9;
        let d = decide_rule2(v);
        assert_eq!(d.verdict, Verdict::Cause(Cause::X2));
        assert!(!d.tie);
        assert_eq!(d.evidence.len(), 8);
    }

    #[test]
    fn rule2_all_equal_is_flagged_tie_for_one() {
        let d = decide_rule2([0.4; 8]);
        assert!(d.tie);
        assert_eq!(d.verdict, Verdict::Cause(Cause::X1));
    }

    #[test]
    fn decision_depends_only_on_ordering() {
        let v = [0.3, 0.1, 0.7, 0.2, 0.65, 0.05, 0.5, 0.69];
        let scaled = v.map(|x| x * 0.37);
        assert_eq!(decide_rule2(v).verdict, decide_rule2(scaled).verdict);
    }

    #[test]
    fn majority_voting() {
        let c1 = Verdict::Cause(Cause::X1);
        let c2 = Verdict::Cause(Cause::X2);
        assert_eq!(majority(&[c1, c1, c1, c2]), (c1, 2));
        assert_eq!(majority(&[c1, c2]), (Verdict::Inconclusive, 0));
        assert_eq!(majority(&[c2, c2, c2]), (c2, 3));
    }

    #[test]
    fn thresholded_cases() {
        assert_eq!(decide_thresholded([0.01; 8], 0.05).verdict, Verdict::Inconclusive);
        let mut p = [0.0; 8];
        p[grid_index(Cause::X1, 1, InputOrder::Identity)] = 0.3;
        assert_eq!(decide_thresholded(p, 0.05).verdict, Verdict::Cause(Cause::X1));
        p[grid_index(Cause::X1, 0, InputOrder::Swapped)] = 0.2;
        assert_eq!(decide_thresholded(p, 0.05).verdict, Verdict::Cause(Cause::X1));
        p[grid_index(Cause::X2, 0, InputOrder::Swapped)] = 0.2;
        assert_eq!(decide_thresholded(p, 0.05).verdict, Verdict::Inconclusive);
    }

    #[test]
    fn simplified_and_pooled_argmax() {
        let d = decide_simplified([[0.9, 0.1], [0.2, 0.3]], Rule::Pooled);
        assert_eq!(d.verdict, Verdict::Cause(Cause::X1));
        assert_eq!(d.rule, Rule::Pooled);
        let d = decide_simplified([[0.1, 0.1], [0.2, 0.3]], Rule::Rule2);
        assert_eq!(d.verdict, Verdict::Cause(Cause::X2));
    }

    #[test]
    fn results_line_layout() {
        let line = decide_rule1([0.9, 0.2]).results_line("0007");
        assert_eq!(line, "0007\trule1\t1\t0.700000\ta0=0.900000\ta1=0.200000");
    }

    #[test]
    fn align_from_cause_indices() {
        let p = CausalPair::new("a", vec![[1.0, 2.0]]);
        let out = align(&[p.clone(), p.clone()], &DirectionInfo::CauseIndices(vec![Cause::X1, Cause::X2])).unwrap();
        assert_eq!(out[0].points, vec![[1.0, 2.0]]);
        assert_eq!(out[1].points, vec![[2.0, 1.0]]);
        assert!(align(&[p], &DirectionInfo::Permutations(vec![])).is_err());
    }
}
