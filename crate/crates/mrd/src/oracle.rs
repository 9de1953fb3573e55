//! Exact moments by visiting every equiprobable assignment of a small design,
//! and a seeded Monte-Carlo counterpart with jackknife standard errors.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::core::{classify_cells, smrd_assignment, AssignmentMatrix, AxisAssignments, Cell, ExposureType, PopulationDims, Rule, TypeMatrix};
use crate::designs::{stream_rng, DesignSpec, Draw};
use crate::error::{MrdError, Result};
use crate::estimators::{spillover_estimates, type_means_for};
use crate::outcomes::{realize, ObservedMatrix, PotentialOutcomeBank};
use crate::stats::{self, CoMoments, Moments};
use crate::variance::{effect_bounds, sigma_hats, Effect};

/// Default ceiling on the number of supports visited.
pub const DEFAULT_SUPPORT_CAP: u64 = 10_000_000;

/// Supports per parallel chunk; fixed so the merge order never depends on
/// the worker count.
const CHUNK: usize = 1024;

/// Registered statistic ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Statistic {
    Mean(ExposureType),
    Effect(Effect),
    Theta,
    SigmaHat(ExposureType),
    BoundLo(Effect),
    BoundHi(Effect),
    /// Mean outcome over treated cells, for designs without exposure types.
    TreatedMean,
    ControlMean,
    DiffInMeans,
}

impl Statistic {
    /// Type means, effects and Σ̂ for the four SMRD types.
    pub fn smrd_default() -> Vec<Statistic> {
        let mut v: Vec<Statistic> = ExposureType::SMRD.iter().map(|&t| Statistic::Mean(t)).collect();
        v.extend(Effect::ALL.iter().map(|&e| Statistic::Effect(e)));
        v.extend(ExposureType::SMRD.iter().map(|&t| Statistic::SigmaHat(t)));
        v
    }

    fn needs_types(self) -> bool {
        !matches!(self, Statistic::TreatedMean | Statistic::ControlMean | Statistic::DiffInMeans)
    }

    fn needs_sigma(self) -> bool {
        matches!(self, Statistic::SigmaHat(_) | Statistic::BoundLo(_) | Statistic::BoundHi(_))
    }
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Statistic::Mean(t) => write!(f, "mean_{}", t.name()),
            Statistic::Effect(e) => f.write_str(e.name()),
            Statistic::Theta => f.write_str("theta"),
            Statistic::SigmaHat(t) => write!(f, "sigma_hat_{}", t.name()),
            Statistic::BoundLo(e) => write!(f, "bound_lo_{}", e.name()),
            Statistic::BoundHi(e) => write!(f, "bound_hi_{}", e.name()),
            Statistic::TreatedMean => f.write_str("treated_mean"),
            Statistic::ControlMean => f.write_str("control_mean"),
            Statistic::DiffInMeans => f.write_str("diff_in_means"),
        }
    }
}

impl FromStr for Statistic {
    type Err = MrdError;

    fn from_str(s: &str) -> Result<Self> {
        let effect = |name: &str| Effect::ALL.into_iter().find(|e| e.name() == name);
        let ty = |name: &str| ExposureType::parse(name).ok();
        let parsed = match s {
            "theta" => Some(Statistic::Theta),
            "treated_mean" => Some(Statistic::TreatedMean),
            "control_mean" => Some(Statistic::ControlMean),
            "diff_in_means" => Some(Statistic::DiffInMeans),
            _ => {
                if let Some(e) = effect(s) {
                    Some(Statistic::Effect(e))
                } else if let Some(r) = s.strip_prefix("mean_") {
                    ty(r).map(Statistic::Mean)
                } else if let Some(r) = s.strip_prefix("sigma_hat_") {
                    ty(r).map(Statistic::SigmaHat)
                } else if let Some(r) = s.strip_prefix("bound_lo_") {
                    effect(r).map(Statistic::BoundLo)
                } else if let Some(r) = s.strip_prefix("bound_hi_") {
                    effect(r).map(Statistic::BoundHi)
                } else {
                    None
                }
            }
        };
        parsed.ok_or_else(|| MrdError::Parameter(format!("unknown statistic '{s}'")))
    }
}

impl From<Statistic> for String {
    fn from(s: Statistic) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for Statistic {
    type Error = MrdError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// One realized assignment with its outcomes.
#[derive(Debug, Clone)]
pub struct Realization {
    pub assignment: AssignmentMatrix,
    pub types: Option<TypeMatrix>,
    pub observed: ObservedMatrix,
}

impl Realization {
    /// Outcomes for an assignment without exposure types: the bank's ALI
    /// model when attached, otherwise Y(t) on treated and Y(c) on control cells.
    pub fn from_assignment(bank: &PotentialOutcomeBank, w: AssignmentMatrix) -> Result<Self> {
        let dims = w.dims();
        let values = match bank.ali() {
            Some(ali) => ali.outcomes(&w)?,
            None => {
                let (c, t) = (bank.values(ExposureType::C)?, bank.values(ExposureType::T)?);
                w.cells().iter().enumerate().map(|(k, cell)| if cell.is_treated() { t[k] } else { c[k] }).collect()
            }
        };
        Ok(Realization { assignment: w, types: None, observed: ObservedMatrix { dims, values } })
    }

    pub fn from_types(bank: &PotentialOutcomeBank, assignment: AssignmentMatrix, types: TypeMatrix) -> Result<Self> {
        let observed = realize(bank, &types)?;
        Ok(Realization { assignment, types: Some(types), observed })
    }

    pub fn from_draw(bank: &PotentialOutcomeBank, draw: Draw) -> Result<Self> {
        match draw {
            Draw::Smrd(d) => Self::from_types(bank, d.assignment, d.types),
            Draw::Synergistic(d) => Self::from_types(bank, d.assignment, d.types),
            other => match other.assignment() {
                Some(w) => Self::from_assignment(bank, w.clone()),
                None => Err(MrdError::DesignMismatch("design has no assignment matrix".into())),
            },
        }
    }
}

/// Evaluates registered statistics; bound statistics use `cross_scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluator {
    pub cross_scale: f64,
}

impl Default for Evaluator {
    fn default() -> Self {
        Evaluator { cross_scale: 1.0 }
    }
}

impl Evaluator {
    pub fn evaluate(&self, r: &Realization, stats_: &[Statistic]) -> Result<Vec<f64>> {
        let typed = stats_.iter().any(|s| s.needs_types());
        let (means, est) = if typed {
            let types = r
                .types
                .as_ref()
                .ok_or_else(|| MrdError::DesignMismatch("statistic needs exposure types".into()))?;
            let m = type_means_for(&r.observed, types, &ExposureType::SMRD)?;
            let e = spillover_estimates(&m)?;
            (Some(m), Some(e))
        } else {
            (None, None)
        };
        let sigma = if stats_.iter().any(|s| s.needs_sigma()) {
            let s = sigma_hats(&r.observed, r.types.as_ref().expect("checked above"))?;
            Some(s.map(|x| x.value))
        } else {
            None
        };
        let split = || {
            let (mut t, mut c) = (vec![], vec![]);
            for (y, cell) in r.observed.values.iter().zip(r.assignment.cells()) {
                if *cell == Cell::T { t.push(*y) } else { c.push(*y) }
            }
            (stats::mean(&t), stats::mean(&c))
        };
        stats_
            .iter()
            .map(|s| {
                Ok(match *s {
                    Statistic::Mean(t) => means.as_ref().expect("typed").get(t)?,
                    Statistic::Effect(e) => {
                        let e_ = est.expect("typed");
                        match e {
                            Effect::Tau => e_.tau,
                            Effect::Direct => e_.tau_direct,
                            Effect::SpillB => e_.tau_spill_b,
                            Effect::SpillS => e_.tau_spill_s,
                        }
                    }
                    Statistic::Theta => est.expect("typed").theta.ok_or(MrdError::LiftUndefined)?,
                    Statistic::SigmaHat(t) => {
                        let k = ExposureType::SMRD
                            .iter()
                            .position(|x| *x == t)
                            .ok_or_else(|| MrdError::DesignMismatch(format!("no Σ̂ for type {}", t.name())))?;
                        sigma.expect("computed")[k]
                    }
                    Statistic::BoundLo(e) => effect_bounds(sigma.expect("computed"), self.cross_scale, e).lo,
                    Statistic::BoundHi(e) => effect_bounds(sigma.expect("computed"), self.cross_scale, e).hi,
                    Statistic::TreatedMean => split().0,
                    Statistic::ControlMean => split().1,
                    Statistic::DiffInMeans => {
                        let (t, c) = split();
                        t - c
                    }
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatisticMoments {
    pub statistic: Statistic,
    pub mean: f64,
    /// Exact design variance (enumeration) or sample variance (Monte Carlo).
    pub variance: f64,
    pub se_mean: Option<f64>,
    pub se_variance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupportRow {
    /// Buyer and seller labels (or the matrix) identifying the support point.
    pub key: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnumerationResult {
    pub support_size: u64,
    pub exact: bool,
    pub statistics: Vec<StatisticMoments>,
    /// Covariances between statistics, in the order of `statistics`.
    pub covariance: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<SupportRow>>,
}

impl EnumerationResult {
    pub fn get(&self, s: Statistic) -> Option<&StatisticMoments> {
        self.statistics.iter().find(|m| m.statistic == s)
    }

    pub fn mean(&self, s: Statistic) -> f64 {
        self.get(s).map_or(f64::NAN, |m| m.mean)
    }

    pub fn variance(&self, s: Statistic) -> f64 {
        self.get(s).map_or(f64::NAN, |m| m.variance)
    }

    pub fn covariance(&self, a: Statistic, b: Statistic) -> f64 {
        let pos = |s| self.statistics.iter().position(|m| m.statistic == s);
        match (pos(a), pos(b)) {
            (Some(x), Some(y)) => self.covariance[x][y],
            _ => f64::NAN,
        }
    }

    /// Per-assignment table as CSV: key, then one column per statistic.
    pub fn write_table_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let table = self.table.as_ref().ok_or_else(|| MrdError::Parameter("no table recorded".into()))?;
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["support".to_string()];
        header.extend(self.statistics.iter().map(|m| m.statistic.to_string()));
        wtr.write_record(&header)?;
        for row in table {
            let mut rec = vec![row.key.clone()];
            rec.extend(row.values.iter().map(|v| v.to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k.min(n));
    (0..k).fold(1u128, |acc, t| acc * (n - t) as u128 / (t + 1) as u128)
}

/// All k-subsets of n as 0/1 labels, in increasing bitmask order (Gosper).
pub fn subsets(n: usize, k: usize) -> Result<Vec<Vec<i32>>> {
    if n > 63 {
        return Err(MrdError::Size(format!("axis of {n} units is too long to enumerate")));
    }
    if k > n {
        return Err(MrdError::Dimension(format!("cannot choose {k} of {n}")));
    }
    let to_labels = |x: u64| (0..n).map(|b| (x >> b & 1) as i32).collect::<Vec<_>>();
    if k == 0 {
        return Ok(vec![vec![0; n]]);
    }
    let limit = 1u64 << n;
    let mut x = (1u64 << k) - 1;
    let mut out = vec![];
    while x < limit {
        out.push(to_labels(x));
        let c = x & x.wrapping_neg();
        let r = x + c;
        x = (((r ^ x) >> 2) / c) | r;
    }
    Ok(out)
}

fn labels_key(v: &[i32]) -> String {
    v.iter().map(|x| x.to_string()).collect()
}

/// Materialized support of a design small enough to enumerate.
enum Support {
    Axes { rule: Option<Rule>, buyers: Vec<Vec<i32>>, sellers: Vec<Vec<i32>>, dims: PopulationDims },
    Matrices(Vec<AssignmentMatrix>),
}

impl Support {
    fn len(&self) -> usize {
        match self {
            Support::Axes { buyers, sellers, .. } => buyers.len() * sellers.len(),
            Support::Matrices(m) => m.len(),
        }
    }

    fn realize(&self, bank: &PotentialOutcomeBank, k: usize) -> Result<(String, Realization)> {
        match self {
            Support::Axes { rule, buyers, sellers, dims } => {
                let (b, s) = (&buyers[k / sellers.len()], &sellers[k % sellers.len()]);
                let key = format!("{}|{}", labels_key(b), labels_key(s));
                let axis = AxisAssignments::new(b.clone(), s.clone());
                match rule {
                    Some(rule) => {
                        let types = classify_cells(&axis, *rule)?;
                        let w = smrd_assignment(&axis, *rule)?;
                        Ok((key, Realization::from_types(bank, w, types)?))
                    }
                    None => {
                        // single-axis designs: one axis is all ones
                        let w = AssignmentMatrix::from_fn(*dims, |i, j| Cell::from_bool(b[i] == 1 && s[j] == 1));
                        Ok((key, Realization::from_assignment(bank, w)?))
                    }
                }
            }
            Support::Matrices(ms) => {
                let w = ms[k].clone();
                let key = w.cells().iter().map(|c| if c.is_treated() { '1' } else { '0' }).collect();
                Ok((key, Realization::from_assignment(bank, w)?))
            }
        }
    }
}

fn check_cap(size: u128, cap: u64) -> Result<()> {
    if size > cap as u128 {
        return Err(MrdError::Size(format!(
            "{size} supports exceed the cap of {cap}; use montecarlo_design_moments instead"
        )));
    }
    Ok(())
}

/// Every binary matrix with J_T treated per row and I_T per column.
fn crmd_matrices(dims: PopulationDims, cap: u64) -> Result<Vec<AssignmentMatrix>> {
    let rows = subsets(dims.j, dims.j_t)?;
    let mut out = vec![];
    let mut col_counts = vec![0usize; dims.j];
    let mut chosen: Vec<usize> = vec![];
    fn dfs(
        dims: PopulationDims,
        rows: &[Vec<i32>],
        col_counts: &mut Vec<usize>,
        chosen: &mut Vec<usize>,
        out: &mut Vec<AssignmentMatrix>,
        cap: u64,
    ) -> Result<()> {
        let depth = chosen.len();
        if depth == dims.i {
            if col_counts.iter().all(|&c| c == dims.i_t) {
                check_cap(out.len() as u128 + 1, cap)?;
                out.push(AssignmentMatrix::from_fn(dims, |i, j| Cell::from_bool(rows[chosen[i]][j] == 1)));
            }
            return Ok(());
        }
        let left = dims.i - depth - 1;
        for (r, row) in rows.iter().enumerate() {
            let ok = row.iter().zip(col_counts.iter()).all(|(&x, &c)| {
                let c2 = c + x as usize;
                c2 <= dims.i_t && c2 + left >= dims.i_t
            });
            if !ok {
                continue;
            }
            for (c, &x) in col_counts.iter_mut().zip(row) {
                *c += x as usize;
            }
            chosen.push(r);
            dfs(dims, rows, col_counts, chosen, out, cap)?;
            chosen.pop();
            for (c, &x) in col_counts.iter_mut().zip(row) {
                *c -= x as usize;
            }
        }
        Ok(())
    }
    check_cap(binomial(dims.j, dims.j_t), cap)?;
    dfs(dims, &rows, &mut col_counts, &mut chosen, &mut out, cap)?;
    Ok(out)
}

fn support_of(spec: &DesignSpec, cap: u64) -> Result<Support> {
    let axes = |dims: PopulationDims, rule: Option<Rule>, bk: usize, sk: usize| -> Result<Support> {
        dims.validate()?;
        check_cap(binomial(dims.i, bk) * binomial(dims.j, sk), cap)?;
        Ok(Support::Axes { rule, buyers: subsets(dims.i, bk)?, sellers: subsets(dims.j, sk)?, dims })
    };
    match spec {
        DesignSpec::SmrdConjunctive { dims } => axes(*dims, Some(Rule::Conjunctive), dims.i_t, dims.j_t),
        DesignSpec::SmrdDisjunctive { dims } => axes(*dims, Some(Rule::Disjunctive), dims.i_t, dims.j_t),
        DesignSpec::BuyerSrd { dims } => axes(*dims, None, dims.i_t, dims.j),
        DesignSpec::SellerSrd { dims } => axes(*dims, None, dims.i, dims.j_t),
        DesignSpec::Crmd { dims, .. } => {
            dims.validate()?;
            if dims.i_t * dims.j != dims.j_t * dims.i {
                return Err(MrdError::Infeasible("row and column fractions differ".into()));
            }
            Ok(Support::Matrices(crmd_matrices(*dims, cap)?))
        }
        _ => Err(MrdError::DesignMismatch("enumeration covers SMRD, SRD and CRMD only".into())),
    }
}

#[derive(Debug, Clone, Default)]
struct Accumulator {
    single: Vec<Moments>,
    /// Upper triangle, row-major.
    pairs: Vec<CoMoments>,
}

impl Accumulator {
    fn new(k: usize) -> Self {
        Accumulator { single: vec![Moments::default(); k], pairs: vec![CoMoments::default(); k * (k + 1) / 2] }
    }

    fn push(&mut self, v: &[f64]) {
        let k = v.len();
        for a in 0..k {
            self.single[a].push(v[a]);
        }
        let mut p = 0;
        for a in 0..k {
            for b in a..k {
                self.pairs[p].push(v[a], v[b]);
                p += 1;
            }
        }
    }

    fn merge(&self, o: &Accumulator) -> Accumulator {
        Accumulator {
            single: self.single.iter().zip(&o.single).map(|(a, b)| a.merge(b)).collect(),
            pairs: self.pairs.iter().zip(&o.pairs).map(|(a, b)| a.merge(b)).collect(),
        }
    }

    fn covariance(&self, k: usize) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; k]; k];
        let mut p = 0;
        for a in 0..k {
            for b in a..k {
                let c = self.pairs[p].population_covariance();
                m[a][b] = c;
                m[b][a] = c;
                p += 1;
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnumerationOptions {
    pub cap: u64,
    pub record_table: bool,
    pub evaluator: Evaluator,
}

impl Default for EnumerationOptions {
    fn default() -> Self {
        EnumerationOptions { cap: DEFAULT_SUPPORT_CAP, record_table: false, evaluator: Evaluator::default() }
    }
}

/// Exact mean, variance and covariances of each statistic over the design's
/// uniform support.
pub fn enumerate_design_moments(
    spec: &DesignSpec,
    bank: &PotentialOutcomeBank,
    statistics: &[Statistic],
    opts: EnumerationOptions,
) -> Result<EnumerationResult> {
    let support = support_of(spec, opts.cap)?;
    let n = support.len();
    let k = statistics.len();
    let chunks: Vec<(Accumulator, Vec<SupportRow>)> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| -> Result<(Accumulator, Vec<SupportRow>)> {
            let mut acc = Accumulator::new(k);
            let mut rows = vec![];
            for idx in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let (key, r) = support.realize(bank, idx)?;
                let v = opts.evaluator.evaluate(&r, statistics)?;
                acc.push(&v);
                if opts.record_table {
                    rows.push(SupportRow { key, values: v });
                }
            }
            Ok((acc, rows))
        })
        .collect::<Result<_>>()?;
    let mut total = Accumulator::new(k);
    let mut table = vec![];
    for (acc, rows) in chunks {
        total = total.merge(&acc);
        table.extend(rows);
    }
    Ok(EnumerationResult {
        support_size: n as u64,
        exact: true,
        statistics: statistics
            .iter()
            .zip(&total.single)
            .map(|(&s, m)| StatisticMoments {
                statistic: s,
                mean: m.mean,
                variance: m.population_variance(),
                se_mean: None,
                se_variance: None,
            })
            .collect(),
        covariance: total.covariance(k),
        table: opts.record_table.then_some(table),
    })
}

/// Second implementation for cross-checks: nested loops over index
/// combinations and textbook two-pass moments. SMRD only.
pub fn naive_smrd_moments(
    dims: PopulationDims,
    rule: Rule,
    bank: &PotentialOutcomeBank,
    statistics: &[Statistic],
) -> Result<Vec<(f64, f64)>> {
    fn combos(n: usize, k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for x in start..n {
            cur.push(x);
            combos(n, k, x + 1, cur, out);
            cur.pop();
        }
    }
    let mut bs = vec![];
    combos(dims.i, dims.i_t, 0, &mut vec![], &mut bs);
    let mut ss = vec![];
    combos(dims.j, dims.j_t, 0, &mut vec![], &mut ss);
    let mut values: Vec<Vec<f64>> = vec![vec![]; statistics.len()];
    for b in &bs {
        for s in &ss {
            let mut bl = vec![0; dims.i];
            b.iter().for_each(|&i| bl[i] = 1);
            let mut sl = vec![0; dims.j];
            s.iter().for_each(|&j| sl[j] = 1);
            let axis = AxisAssignments::new(bl, sl);
            let r = Realization::from_types(bank, smrd_assignment(&axis, rule)?, classify_cells(&axis, rule)?)?;
            for (col, v) in values.iter_mut().zip(Evaluator::default().evaluate(&r, statistics)?) {
                col.push(v);
            }
        }
    }
    Ok(values
        .iter()
        .map(|v| (stats::mean(v), stats::sum_sq_dev(v) / v.len() as f64))
        .collect())
}

/// Seeded Monte-Carlo moments; replica r uses RNG stream r of `seed`.
pub fn montecarlo_design_moments(
    spec: &DesignSpec,
    bank: &PotentialOutcomeBank,
    statistics: &[Statistic],
    replicas: usize,
    seed: u64,
    evaluator: Evaluator,
) -> Result<EnumerationResult> {
    if replicas < 2 {
        return Err(MrdError::Parameter("Monte Carlo needs at least 2 replicas".into()));
    }
    let rows: Vec<Vec<f64>> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let draw = spec.sample(&mut stream_rng(seed, r as u64))?;
            evaluator.evaluate(&Realization::from_draw(bank, draw)?, statistics)
        })
        .collect::<Result<_>>()?;
    let k = statistics.len();
    let mut acc = Accumulator::new(k);
    rows.iter().for_each(|v| acc.push(v));
    let n = replicas as f64;
    let mut covariance = acc.covariance(k);
    covariance.iter_mut().flatten().for_each(|c| *c *= n / (n - 1.0));
    Ok(EnumerationResult {
        support_size: replicas as u64,
        exact: false,
        statistics: (0..k)
            .map(|a| {
                let col: Vec<f64> = rows.iter().map(|v| v[a]).collect();
                let (se_m, se_v) = stats::jackknife_se(&col);
                StatisticMoments {
                    statistic: statistics[a],
                    mean: stats::mean(&col),
                    variance: stats::sample_variance(&col),
                    se_mean: Some(se_m),
                    se_variance: Some(se_v),
                }
            })
            .collect(),
        covariance,
        table: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::outcomes::{population_estimands, AliModel};
    use crate::variance::bank_moments;
    use std::collections::HashSet;

    fn dims(i: usize, j: usize, it: usize, jt: usize) -> PopulationDims {
        PopulationDims::new(i, j, it, jt).unwrap()
    }

    fn ali_bank(d: PopulationDims, seed: u64) -> PotentialOutcomeBank {
        AliModel::random(d, &mut stream_rng(seed, 0)).bank(d).unwrap()
    }

    #[test]
    fn gosper_counts_and_order() {
        let s = subsets(5, 2).unwrap();
        assert_eq!(s.len(), 10);
        assert_eq!(s[0], vec![1, 1, 0, 0, 0]);
        assert_eq!(s[1], vec![1, 0, 1, 0, 0]);
        assert_eq!(subsets(4, 0).unwrap(), vec![vec![0; 4]]);
        assert_eq!(subsets(3, 3).unwrap(), vec![vec![1; 3]]);
    }

    #[test]
    fn support_sizes() {
        let stats_ = [Statistic::Mean(ExposureType::T)];
        for (d, n) in [(dims(2, 2, 1, 1), 4), (dims(4, 4, 2, 2), 36), (dims(3, 5, 1, 2), 30)] {
            let r = enumerate_design_moments(&DesignSpec::SmrdConjunctive { dims: d }, &ali_bank(d, 1), &stats_, Default::default()).unwrap();
            assert_eq!(r.support_size, n);
        }
    }

    #[test]
    fn tau_mean_is_population_tau() {
        let d = dims(4, 4, 2, 2);
        let bank = ali_bank(d, 2);
        let r = enumerate_design_moments(&DesignSpec::SmrdConjunctive { dims: d }, &bank, &Statistic::smrd_default(), Default::default()).unwrap();
        let pop = population_estimands(&bank);
        assert!(stats::rel_err(r.mean(Statistic::Effect(Effect::Tau)), pop.tau_p.unwrap(), 1e-300) < 1e-12);
        let naive = naive_smrd_moments(d, Rule::Conjunctive, &bank, &Statistic::smrd_default()).unwrap();
        for (m, (nm, nv)) in r.statistics.iter().zip(naive) {
            assert!((m.mean - nm).abs() < 1e-12 * (1.0 + nm.abs()), "{}", m.statistic);
            assert!((m.variance - nv).abs() < 1e-10 * (1.0 + nv.abs()), "{}", m.statistic);
        }
    }

    #[test]
    fn visits_each_support_once() {
        let d = dims(4, 5, 2, 2);
        let opts = EnumerationOptions { record_table: true, ..Default::default() };
        let r = enumerate_design_moments(&DesignSpec::SmrdConjunctive { dims: d }, &ali_bank(d, 3), &[Statistic::Mean(ExposureType::C)], opts).unwrap();
        let table = r.table.unwrap();
        let keys: HashSet<_> = table.iter().map(|row| row.key.clone()).collect();
        assert_eq!(keys.len(), 60);
        assert_eq!(table.len(), 60);
    }

    #[test]
    fn cap_exceeded_is_a_size_error() {
        let d = dims(30, 30, 15, 15);
        let bank = PotentialOutcomeBank::constant(d, &ExposureType::SMRD.map(|t| (t, 0.0))).unwrap();
        let opts = EnumerationOptions { cap: 1000, ..Default::default() };
        let err = enumerate_design_moments(&DesignSpec::SmrdConjunctive { dims: d }, &bank, &[Statistic::Theta], opts).unwrap_err();
        assert!(matches!(err, MrdError::Size(ref m) if m.contains("montecarlo")));
    }

    #[test]
    fn crmd_support_is_margin_preserving() {
        let d = dims(4, 4, 2, 2);
        let bank = ali_bank(d, 4);
        let opts = EnumerationOptions { record_table: true, ..Default::default() };
        let r = enumerate_design_moments(&DesignSpec::Crmd { dims: d, swaps: None }, &bank, &[Statistic::DiffInMeans], opts).unwrap();
        // 4x4 binary matrices with all margins 2
        assert_eq!(r.support_size, 90);
        let keys: HashSet<_> = r.table.unwrap().into_iter().map(|row| row.key).collect();
        assert_eq!(keys.len(), 90);
    }

    #[test]
    fn srd_supports() {
        let d = dims(5, 3, 2, 1);
        let bank = ali_bank(d, 5);
        let s = [Statistic::TreatedMean, Statistic::DiffInMeans];
        let b = enumerate_design_moments(&DesignSpec::BuyerSrd { dims: d }, &bank, &s, Default::default()).unwrap();
        assert_eq!(b.support_size, 10);
        let sl = enumerate_design_moments(&DesignSpec::SellerSrd { dims: d }, &bank, &s, Default::default()).unwrap();
        assert_eq!(sl.support_size, 3);
    }

    #[test]
    fn montecarlo_agrees_with_enumeration() {
        let d = dims(4, 4, 2, 2);
        let bank = ali_bank(d, 6);
        let spec = DesignSpec::SmrdConjunctive { dims: d };
        let s = Statistic::smrd_default();
        let exact = enumerate_design_moments(&spec, &bank, &s, Default::default()).unwrap();
        let mc = montecarlo_design_moments(&spec, &bank, &s, 4000, 11, Evaluator::default()).unwrap();
        for (e, m) in exact.statistics.iter().zip(&mc.statistics) {
            let se = m.se_mean.unwrap();
            assert!((e.mean - m.mean).abs() <= 4.0 * se + 1e-12, "{}: {} vs {} (se {se})", e.statistic, e.mean, m.mean);
        }
    }

    #[test]
    fn montecarlo_constant_bank_has_zero_variance() {
        let d = dims(6, 6, 3, 2);
        let bank = PotentialOutcomeBank::constant(d, &ExposureType::SMRD.map(|t| (t, 1.5))).unwrap();
        let s = [Statistic::Mean(ExposureType::T), Statistic::Effect(Effect::Tau)];
        let mc = montecarlo_design_moments(&DesignSpec::SmrdConjunctive { dims: d }, &bank, &s, 50, 1, Evaluator::default()).unwrap();
        assert!(mc.statistics.iter().all(|m| m.variance.abs() < 1e-24));
        let again = montecarlo_design_moments(&DesignSpec::SmrdConjunctive { dims: d }, &bank, &s, 50, 1, Evaluator::default()).unwrap();
        assert_eq!(mc, again);
    }

    #[test]
    fn enumerated_covariances_match_closed_form() {
        let d = dims(3, 5, 1, 2);
        let bank = ali_bank(d, 7);
        let means: Vec<Statistic> = ExposureType::SMRD.iter().map(|&t| Statistic::Mean(t)).collect();
        let r = enumerate_design_moments(&DesignSpec::SmrdConjunctive { dims: d }, &bank, &means, Default::default()).unwrap();
        let m = bank_moments(&bank).unwrap();
        for a in ExposureType::SMRD {
            for b in ExposureType::SMRD {
                let e = r.covariance(Statistic::Mean(a), Statistic::Mean(b));
                assert!((e - m.covariance(a, b)).abs() < 1e-10 * m.variance(ExposureType::T).max(1e-12));
            }
        }
    }

    #[test]
    fn statistic_ids_round_trip() {
        let mut all = Statistic::smrd_default();
        all.extend([Statistic::Theta, Statistic::BoundLo(Effect::SpillB), Statistic::BoundHi(Effect::Direct), Statistic::DiffInMeans]);
        for s in all {
            assert_eq!(s.to_string().parse::<Statistic>().unwrap(), s);
            let js = serde_json::to_string(&s).unwrap();
            assert_eq!(serde_json::from_str::<Statistic>(&js).unwrap(), s);
        }
        assert!("mean_x".parse::<Statistic>().is_err());
    }

    #[test]
    fn enumeration_is_order_robust() {
        let d = dims(5, 5, 2, 2);
        let bank = ali_bank(d, 8);
        let s = Statistic::smrd_default();
        let opts = EnumerationOptions { record_table: true, ..Default::default() };
        let r = enumerate_design_moments(&DesignSpec::SmrdConjunctive { dims: d }, &bank, &s, opts).unwrap();
        let mut rows = r.table.clone().unwrap();
        rows.reverse();
        for (k, m) in r.statistics.iter().enumerate() {
            let col: Vec<f64> = rows.iter().map(|row| row.values[k]).collect();
            let mut acc = Moments::default();
            col.iter().for_each(|x| acc.push(*x));
            assert!((acc.mean - m.mean).abs() < 1e-12 * (1.0 + m.mean.abs()));
            assert!((acc.population_variance() - m.variance).abs() < 1e-12 * (1.0 + m.variance.abs()));
        }
    }
}
