//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so the lines always reach the output.
//! The process fails if any criterion fails that is not listed in
//! `KNOWN_UNATTAINABLE`; those still print FAIL.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::Rng;

use mrd::core::{AssignmentMatrix, Cell, ExposureType, PopulationDims};
use mrd::designs::{sample_synergistic, stream_rng, DesignSpec, SynergisticSpec};
use mrd::estimators::synergy_statistic;
use mrd::harness::{run_replication, run_scaling_study, write_replication, ExperimentConfig};
use mrd::oracle::{enumerate_design_moments, EnumerationOptions, EnumerationResult, Evaluator, Statistic};
use mrd::outcomes::{
    lift_estimands, population_estimands, realize, verify_interference_class, AliModel, InterferenceClass,
    PotentialOutcomeBank,
};
use mrd::stats::rel_err;
use mrd::variance::{bank_moments, Effect, MomentReport};

/// Criterion 5 cannot hold on every bank; see the README.
const KNOWN_UNATTAINABLE: [u32; 1] = [5];

const SMRD: [ExposureType; 4] = ExposureType::SMRD;
const BANKS: u64 = 20;

struct Verdict {
    id: u32,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// Arbitrary bank: every (cell, type) value i.i.d. uniform on [-3, 5).
fn random_bank(d: PopulationDims, k: u64) -> PotentialOutcomeBank {
    let mut rng = stream_rng(k, 7);
    let vals = SMRD.iter().map(|&t| (t, (0..d.cells()).map(|_| rng.gen_range(-3.0..5.0)).collect())).collect();
    PotentialOutcomeBank::new(d, vals).unwrap()
}

fn dims(i: usize, j: usize, it: usize, jt: usize) -> PopulationDims {
    PopulationDims::new(i, j, it, jt).unwrap()
}

fn means_and_effects() -> Vec<Statistic> {
    let mut v: Vec<Statistic> = SMRD.iter().map(|&t| Statistic::Mean(t)).collect();
    v.extend(Effect::ALL.iter().map(|&e| Statistic::Effect(e)));
    v
}

fn enumerate(d: PopulationDims, bank: &PotentialOutcomeBank, stats: &[Statistic], cross_scale: f64) -> EnumerationResult {
    let opts = EnumerationOptions { evaluator: Evaluator { cross_scale }, ..Default::default() };
    enumerate_design_moments(&DesignSpec::SmrdConjunctive { dims: d }, bank, stats, opts).unwrap()
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed())
}

fn criterion_1() -> Verdict {
    let d = dims(4, 4, 2, 2);
    let ((worst, supports), took) = timed(|| {
        let mut worst: f64 = 0.0;
        let mut supports = 0;
        for k in 0..BANKS {
            let bank = random_bank(d, k);
            let pop = population_estimands(&bank);
            let r = enumerate(d, &bank, &means_and_effects(), 1.0);
            supports = r.support_size;
            for t in SMRD {
                worst = worst.max(rel_err(r.mean(Statistic::Mean(t)), pop.mean(t).unwrap(), 1e-300));
            }
            let targets = [
                (Effect::Tau, pop.tau_p),
                (Effect::Direct, pop.tau_direct),
                (Effect::SpillB, pop.tau_spill_b),
                (Effect::SpillS, pop.tau_spill_s),
            ];
            for (e, t) in targets {
                worst = worst.max(rel_err(r.mean(Statistic::Effect(e)), t.unwrap(), 1e-300));
            }
        }
        (worst, supports)
    });
    Verdict {
        id: 1,
        name: "unbiasedness of type means and effects",
        passed: supports == 36 && worst <= 1e-12 && took < Duration::from_secs(1),
        detail: format!("{BANKS} banks x {supports} supports, max rel err {worst:.2e} (tol 1e-12), {took:.2?} (limit 1s)"),
    }
}

/// Banks for criteria 2 and 3: the criterion-1 instance plus (3,5,1,2).
fn moment_instances() -> Vec<(PopulationDims, u64)> {
    let mut v = vec![];
    for d in [dims(4, 4, 2, 2), dims(3, 5, 1, 2)] {
        for k in 0..BANKS {
            v.push((d, k));
        }
    }
    v
}

fn criterion_2() -> Verdict {
    let (worst, took) = timed(|| {
        let mut worst: f64 = 0.0;
        for (d, k) in moment_instances() {
            let bank = random_bank(d, k);
            let m = bank_moments(&bank).unwrap();
            let r = enumerate(d, &bank, &means_and_effects(), 1.0);
            for t in SMRD {
                worst = worst.max(rel_err(r.variance(Statistic::Mean(t)), m.variance(t), 1e-300));
            }
            for e in Effect::ALL {
                worst = worst.max(rel_err(r.variance(Statistic::Effect(e)), m.effect_variance(e), 1e-300));
            }
        }
        worst
    });
    Verdict {
        id: 2,
        name: "closed-form variances of type means and effects",
        passed: worst <= 1e-10 && took < Duration::from_secs(1),
        detail: format!("{} instances incl. 30-support (3,5,1,2), max rel err {worst:.2e} (tol 1e-10), {took:.2?} (limit 1s)", 2 * BANKS),
    }
}

fn criterion_3() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    for (d, k) in moment_instances() {
        let bank = random_bank(d, k);
        let m: MomentReport = bank_moments(&bank).unwrap();
        let r = enumerate(d, &bank, &means_and_effects(), 1.0);
        for a in SMRD {
            for b in SMRD {
                if a.index() < b.index() {
                    let e = r.covariance(Statistic::Mean(a), Statistic::Mean(b));
                    worst = worst.max(rel_err(e, m.covariance(a, b), 1e-300));
                    pairs += 1;
                }
            }
        }
    }
    Verdict {
        id: 3,
        name: "closed-form covariances between type means",
        passed: worst <= 1e-10 && pairs == 6 * 2 * BANKS,
        detail: format!("{pairs} pair checks, max rel err {worst:.2e} (tol 1e-10)"),
    }
}

fn sigma_stats() -> Vec<Statistic> {
    let mut v: Vec<Statistic> = SMRD.iter().map(|&t| Statistic::SigmaHat(t)).collect();
    for e in [Effect::Tau, Effect::SpillB, Effect::SpillS] {
        v.push(Statistic::BoundLo(e));
        v.push(Statistic::BoundHi(e));
    }
    v
}

fn criterion_4() -> Verdict {
    let d = dims(5, 5, 2, 2);
    let mut worst: f64 = 0.0;
    let mut supports = 0;
    for k in 0..BANKS {
        let bank = random_bank(d, k);
        let m = bank_moments(&bank).unwrap();
        let r = enumerate(d, &bank, &sigma_stats(), 1.0);
        supports = r.support_size;
        for t in SMRD {
            worst = worst.max(rel_err(r.mean(Statistic::SigmaHat(t)), m.variance(t), 1e-300));
        }
    }
    Verdict {
        id: 4,
        name: "sigma-hat unbiased for V(type mean)",
        passed: supports == 100 && worst <= 1e-10,
        detail: format!("{BANKS} banks x {supports} supports, max rel err {worst:.2e} (tol 1e-10)"),
    }
}

/// Banks (out of 20) on which E[lo] <= V <= E[hi] holds for all three effects.
fn sandwich_count(cross_scale: f64) -> (u64, f64) {
    let d = dims(5, 5, 2, 2);
    let mut ok = 0;
    let mut worst: f64 = 0.0;
    for k in 0..BANKS {
        let bank = random_bank(d, k);
        let m = bank_moments(&bank).unwrap();
        let r = enumerate(d, &bank, &sigma_stats(), cross_scale);
        let mut all = true;
        for e in [Effect::Tau, Effect::SpillB, Effect::SpillS] {
            let v = m.effect_variance(e);
            let (lo, hi) = (r.mean(Statistic::BoundLo(e)), r.mean(Statistic::BoundHi(e)));
            let miss = ((lo - v).max(0.0) + (v - hi).max(0.0)) / v;
            worst = worst.max(miss);
            all &= miss == 0.0;
        }
        ok += all as u64;
    }
    (ok, worst)
}

fn criterion_5() -> Verdict {
    let (lit, lit_worst) = sandwich_count(1.0);
    let (cs, cs_worst) = sandwich_count(2.0);
    Verdict {
        id: 5,
        name: "bound sandwich E[lo] <= V <= E[hi]",
        passed: lit == BANKS,
        detail: format!(
            "published cross term: {lit}/{BANKS} banks (worst miss {lit_worst:.1e} of V); \
             full Cauchy-Schwarz factor 2: {cs}/{BANKS} banks (worst miss {cs_worst:.1e} of V)"
        ),
    }
}

fn criterion_6() -> Verdict {
    let cfg = ExperimentConfig::from_path(&configs().join("fig2.json")).unwrap();
    let (out, took) = timed(|| run_replication(&cfg, 0).unwrap());
    let mut worst_z: f64 = 0.0;
    let mut worst_q: f64 = 0.0;
    let n = cfg.replicas as f64;
    for row in &out.report.summary {
        let (target, sd) = (row.target.unwrap(), row.target_sd.unwrap());
        worst_z = worst_z.max((row.mean - target).abs() / (sd / n.sqrt()));
        for (q, tq) in row.quantiles.iter().zip(row.theory_quantiles.as_ref().unwrap()) {
            worst_q = worst_q.max((q - tq).abs() / sd);
        }
    }
    Verdict {
        id: 6,
        name: "Gaussian ALI replication (I=100, J=110, N_MC=5000)",
        passed: out.report.summary.len() == 4 && worst_z <= 3.0 && worst_q <= 0.1 && took < Duration::from_secs(60),
        detail: format!(
            "max |mean - target| = {worst_z:.2} SE (tol 3), max quantile gap = {worst_q:.3} SD (tol 0.1), {took:.2?} (limit 60s)"
        ),
    }
}

fn criterion_7() -> Verdict {
    let cfg = ExperimentConfig::from_path(&configs().join("scaling.json")).unwrap();
    let (rep, took) = timed(|| run_scaling_study(&cfg, 0).unwrap());
    let trail: Vec<String> = rep.rows.iter().map(|r| format!("{:.3e}", r.sigma_hat[ExposureType::T.index()])).collect();
    Verdict {
        id: 7,
        name: "mean sigma-hat decreases along the size ladder",
        passed: rep.rows.len() == 5 && rep.sigma_hat_decreasing.iter().all(|x| *x) && took < Duration::from_secs(300),
        detail: format!(
            "decreasing per type (c, ib, is, t) = {:?}; sigma_hat_t: {}; {took:.2?} (limit 300s)",
            rep.sigma_hat_decreasing,
            trail.join(" > ")
        ),
    }
}

fn criterion_8() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut rng = stream_rng(8, 0);
    for k in 0..100 {
        let (i, j) = (rng.gen_range(2..15), rng.gen_range(2..15));
        let d = PopulationDims::new(i, j, rng.gen_range(1..i), rng.gen_range(1..j)).unwrap();
        let l = lift_estimands(&AliModel::random(d, &mut stream_rng(k, 1)));
        worst = worst.max(rel_err(l.theta_b, l.theta, 1e-300)).max(rel_err(l.theta_s, l.theta, 1e-300));
    }
    Verdict {
        id: 8,
        name: "lift identical across pair, buyer and seller aggregation",
        passed: worst <= 1e-12,
        detail: format!("100 random ALI models, max rel err {worst:.2e} (tol 1e-12)"),
    }
}

fn criterion_9() -> Verdict {
    let spec = SynergisticSpec { buyers: 60, sellers: 60, pi: 0.5, q: 0.5, fixed_counts: None };
    let d = PopulationDims::grid(60, 60).unwrap();
    let n = d.cells();
    let mut rng = stream_rng(9, 0);
    let mut bern = |p: f64| -> Vec<f64> { (0..n).map(|_| (rng.gen::<f64>() < p) as u8 as f64).collect() };
    // null: Y(ibs) = max over c, ib, is, so no cell responds only to ibs
    let (c, ib, is, t) = (bern(0.3), bern(0.3), bern(0.3), bern(0.5));
    let ibs: Vec<f64> = (0..n).map(|k| c[k].max(ib[k]).max(is[k])).collect();
    use ExposureType as E;
    let null = PotentialOutcomeBank::new(d, vec![(E::C, c), (E::Ib, ib), (E::Is, is), (E::T, t.clone()), (E::Ibs, ibs)]).unwrap();
    let zeros = vec![0.0; n];
    let alt = PotentialOutcomeBank::new(
        d,
        vec![(E::C, zeros.clone()), (E::Ib, zeros.clone()), (E::Is, zeros), (E::T, t), (E::Ibs, vec![1.0; n])],
    )
    .unwrap();
    let (mut null_ok, mut alt_ok, mut max_null) = (0, 0, f64::NEG_INFINITY);
    for r in 0..1000u64 {
        let draw = sample_synergistic(&spec, &mut stream_rng(9, r)).unwrap();
        let s0 = synergy_statistic(&realize(&null, &draw.types).unwrap(), &draw.types).unwrap();
        max_null = max_null.max(s0.statistic);
        null_ok += (s0.statistic <= 0.0) as u32;
        let s1 = synergy_statistic(&realize(&alt, &draw.types).unwrap(), &draw.types).unwrap();
        alt_ok += (s1.statistic > 0.0 && s1.detected == Some(true)) as u32;
    }
    Verdict {
        id: 9,
        name: "synergy statistic: null <= 0, ibs-only alternative detected",
        passed: null_ok == 1000 && alt_ok == 1000,
        detail: format!("null <= 0 on {null_ok}/1000 draws (max {max_null:.3}); alternative detected on {alt_ok}/1000"),
    }
}

fn criterion_10() -> Verdict {
    let mut pairs = 0;
    let mut ali_ok = true;
    for (k, (i, j)) in [(2, 2), (2, 3), (3, 3), (2, 5), (2, 6), (3, 4), (4, 3)].into_iter().enumerate() {
        let d = PopulationDims::grid(i, j).unwrap();
        let ali = AliModel::random(d, &mut stream_rng(10, k as u64));
        let rep = verify_interference_class(|w| ali.outcomes(w).unwrap(), InterferenceClass::Local, d, 0, &mut stream_rng(10, 0)).unwrap();
        ali_ok &= rep.exhaustive && rep.passed();
        pairs += rep.pairs_checked;
    }
    let d = PopulationDims::grid(3, 4).unwrap();
    // depends on which seller is treated in the row, not on the share
    let first_seller = |w: &AssignmentMatrix| -> Vec<f64> {
        let dm = w.dims();
        (0..dm.cells()).map(|k| w.get(k / dm.j, 0).is_treated() as u8 as f64).collect()
    };
    // depends on a cell outside the row and column
    let corner = |w: &AssignmentMatrix| -> Vec<f64> {
        let dm = w.dims();
        let far = (w.get(dm.i - 1, dm.j - 1) == Cell::T) as u8 as f64;
        (0..dm.cells()).map(|k| if k == 0 { far } else { 0.0 }).collect()
    };
    let mut counter_ok = true;
    let mut reported = vec![];
    for g in [&first_seller as &dyn Fn(&AssignmentMatrix) -> Vec<f64>, &corner] {
        let rep = verify_interference_class(g, InterferenceClass::Local, d, 0, &mut stream_rng(10, 1)).unwrap();
        match rep.violation {
            Some(v) => {
                counter_ok &= v.y != v.y_prime && v.w != v.w_prime;
                reported.push(format!("cell {:?}", v.cell));
            }
            None => counter_ok = false,
        }
    }
    Verdict {
        id: 10,
        name: "interference checker: ALI passes, counterexamples fail",
        passed: ali_ok && counter_ok,
        detail: format!(
            "ALI on 7 grids with I*J <= 12: {pairs} exhaustive pairs, all agree = {ali_ok}; counterexamples reported at {}",
            reported.join(", ")
        ),
    }
}

fn criterion_11() -> Verdict {
    let cfg = ExperimentConfig::from_path(&configs().join("small.json")).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let mut files = vec![];
    for (k, threads) in [1usize, 4, 1, 4].into_iter().enumerate() {
        let dir = tmp.path().join(k.to_string());
        write_replication(&run_replication(&cfg, threads).unwrap(), &dir).unwrap();
        files.push(std::fs::read(dir.join("summary.csv")).unwrap());
    }
    let same = files.windows(2).all(|w| w[0] == w[1]);
    Verdict {
        id: 11,
        name: "byte-identical summary.csv across runs and thread counts",
        passed: same && !files[0].is_empty(),
        detail: format!("2 runs x threads {{1, 4}}, {} bytes each, identical = {same}", files[0].len()),
    }
}

fn main() {
    let criteria: [fn() -> Verdict; 11] = [
        criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7, criterion_8,
        criterion_9, criterion_10, criterion_11,
    ];
    let mut unexpected = 0;
    for c in criteria {
        let v = c();
        let known = KNOWN_UNATTAINABLE.contains(&v.id);
        let tag = match (v.passed, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("criterion {:>2} {tag}: {} | {}", v.id, v.name, v.detail);
        if !v.passed && !known {
            unexpected += 1;
        }
    }
    if unexpected > 0 {
        eprintln!("{unexpected} acceptance criteria failed");
        std::process::exit(1);
    }
}
