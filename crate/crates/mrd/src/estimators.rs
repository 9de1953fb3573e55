//! Point estimators from one realized draw.

use serde::Serialize;

use crate::core::{ExposureType, TypeMatrix};
use crate::designs::ComparisonGroup;
use crate::error::{MrdError, Result};
use crate::outcomes::ObservedMatrix;
use crate::stats;

/// Per-type sample means Ȳ_ω with their cell counts N_ω.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TypeMeans {
    pub counts: [usize; 5],
    pub means: [Option<f64>; 5],
}

impl TypeMeans {
    pub fn get(&self, ty: ExposureType) -> Result<f64> {
        self.means[ty.index()].ok_or_else(|| MrdError::EmptyType(ty.name().into()))
    }

    pub fn count(&self, ty: ExposureType) -> usize {
        self.counts[ty.index()]
    }
}

fn check_dims(observed: &ObservedMatrix, types: &TypeMatrix) -> Result<()> {
    let (a, b) = (observed.dims, types.dims());
    if (a.i, a.j) != (b.i, b.j) {
        return Err(MrdError::Dimension(format!(
            "observed is {}x{}, types are {}x{}",
            a.i, a.j, b.i, b.j
        )));
    }
    Ok(())
}

/// Means over the cells of each type in `declared`; an empty declared type is an error.
pub fn type_means_for(
    observed: &ObservedMatrix,
    types: &TypeMatrix,
    declared: &[ExposureType],
) -> Result<TypeMeans> {
    check_dims(observed, types)?;
    let mut buckets: [Vec<f64>; 5] = Default::default();
    for (y, ty) in observed.values.iter().zip(types.types()) {
        buckets[ty.index()].push(*y);
    }
    let mut means = [None; 5];
    for ty in declared {
        let b = &buckets[ty.index()];
        if b.is_empty() {
            return Err(MrdError::EmptyType(ty.name().into()));
        }
        means[ty.index()] = Some(stats::mean(b));
    }
    Ok(TypeMeans { counts: types.counts(), means })
}

/// Means for every type present in the type matrix.
pub fn type_means(observed: &ObservedMatrix, types: &TypeMatrix) -> Result<TypeMeans> {
    type_means_for(observed, types, &types.present())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpilloverEstimates {
    pub tau_direct: f64,
    pub tau_spill_b: f64,
    pub tau_spill_s: f64,
    /// τ̂(p^B, p^S) = Ȳ_t − Ȳ_c.
    pub tau: f64,
    /// (Ȳ_t − Ȳ_c)/Ȳ_c; a ratio estimator, biased in finite samples.
    /// `None` when Ȳ_c = 0.
    pub theta: Option<f64>,
}

/// Plug-in effects from the four SMRD type means.
///
/// A zero control mean leaves `theta` empty; use [`lift_estimate`] to get it
/// as a hard error instead.
pub fn spillover_estimates(means: &TypeMeans) -> Result<SpilloverEstimates> {
    use ExposureType::*;
    let (c, ib, is, t) = (means.get(C)?, means.get(Ib)?, means.get(Is)?, means.get(T)?);
    Ok(SpilloverEstimates {
        tau_direct: t - ib - is + c,
        tau_spill_b: ib - c,
        tau_spill_s: is - c,
        tau: t - c,
        theta: if c == 0.0 { None } else { Some((t - c) / c) },
    })
}

pub fn lift_estimate(means: &TypeMeans) -> Result<f64> {
    spillover_estimates(means)?.theta.ok_or(MrdError::LiftUndefined)
}

/// Column order of the flat estimate record.
pub const ESTIMATE_COLUMNS: [&str; 13] = [
    "N_c", "N_ib", "N_is", "N_t", "Y_c", "Y_ib", "Y_is", "Y_t", "tau_direct", "tau_spill_B",
    "tau_spill_S", "tau", "theta",
];

/// One flat record of counts, means and effects, in [`ESTIMATE_COLUMNS`] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimateRecord {
    #[serde(rename = "N_c")]
    pub n_c: usize,
    #[serde(rename = "N_ib")]
    pub n_ib: usize,
    #[serde(rename = "N_is")]
    pub n_is: usize,
    #[serde(rename = "N_t")]
    pub n_t: usize,
    #[serde(rename = "Y_c")]
    pub y_c: f64,
    #[serde(rename = "Y_ib")]
    pub y_ib: f64,
    #[serde(rename = "Y_is")]
    pub y_is: f64,
    #[serde(rename = "Y_t")]
    pub y_t: f64,
    pub tau_direct: f64,
    #[serde(rename = "tau_spill_B")]
    pub tau_spill_b: f64,
    #[serde(rename = "tau_spill_S")]
    pub tau_spill_s: f64,
    pub tau: f64,
    pub theta: Option<f64>,
}

impl EstimateRecord {
    pub fn new(means: &TypeMeans, est: &SpilloverEstimates) -> Result<Self> {
        use ExposureType::*;
        Ok(EstimateRecord {
            n_c: means.count(C),
            n_ib: means.count(Ib),
            n_is: means.count(Is),
            n_t: means.count(T),
            y_c: means.get(C)?,
            y_ib: means.get(Ib)?,
            y_is: means.get(Is)?,
            y_t: means.get(T)?,
            tau_direct: est.tau_direct,
            tau_spill_b: est.tau_spill_b,
            tau_spill_s: est.tau_spill_s,
            tau: est.tau,
            theta: est.theta,
        })
    }

    /// One-row CSV with header.
    pub fn to_csv(&self) -> Result<String> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.serialize(self)?;
        let bytes = wtr.into_inner().map_err(|e| MrdError::Io(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Averages over the equilibrium index sets and the two contrasts built from them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumComparisons {
    pub y_cc_s: f64,
    pub y_tc_s: f64,
    pub y_ct_s: f64,
    pub y_c_b: f64,
    pub n_cc_s: usize,
    pub n_tc_s: usize,
    pub n_ct_s: usize,
    pub n_c_b: usize,
    /// Ȳ_{TC;S} − Ȳ_{CC;S}: indirect effect through buyer-side promotions.
    pub indirect: f64,
    /// Ȳ_{CT;S} − Ȳ_{CC;S}: direct effect under control promotions.
    pub direct: f64,
    /// Groups are exact index sets; the promotion interpretation assumes
    /// buyers' treated shares are close to 0 or 1.
    pub note: &'static str,
}

pub fn equilibrium_comparisons(
    observed: &ObservedMatrix,
    groups: &[ComparisonGroup],
) -> Result<EquilibriumComparisons> {
    if groups.len() != observed.values.len() {
        return Err(MrdError::Dimension("group labels and outcomes differ in length".into()));
    }
    let avg = |g: ComparisonGroup| -> Result<(f64, usize)> {
        let xs: Vec<f64> = observed
            .values
            .iter()
            .zip(groups)
            .filter(|(_, &l)| l == g)
            .map(|(y, _)| *y)
            .collect();
        if xs.is_empty() {
            return Err(MrdError::EmptyIndexSet(g.label().into()));
        }
        Ok((stats::mean(&xs), xs.len()))
    };
    let (cc, ncc) = avg(ComparisonGroup::CcS)?;
    let (tc, ntc) = avg(ComparisonGroup::TcS)?;
    let (ct, nct) = avg(ComparisonGroup::CtS)?;
    let (cb, ncb) = avg(ComparisonGroup::CB)?;
    Ok(EquilibriumComparisons {
        y_cc_s: cc,
        y_tc_s: tc,
        y_ct_s: ct,
        y_c_b: cb,
        n_cc_s: ncc,
        n_tc_s: ntc,
        n_ct_s: nct,
        n_c_b: ncb,
        indirect: tc - cc,
        direct: ct - cc,
        note: "promotion channel approximated by buyer assignment",
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SynergyResult {
    /// Ȳ_ibs − Ȳ_c − Ȳ_is − Ȳ_ib.
    pub statistic: f64,
    /// `Some(statistic > 0)` for outcomes in [0, 1]; `None` otherwise, since
    /// the detection guarantee only covers binary outcomes.
    pub detected: Option<bool>,
}

pub fn synergy_from_means(means: &TypeMeans, outcomes_in_unit_interval: bool) -> Result<SynergyResult> {
    use ExposureType::*;
    let ibs = means.means[Ibs.index()]
        .ok_or_else(|| MrdError::DesignMismatch("synergy statistic needs type ibs".into()))?;
    let statistic = ibs - means.get(C)? - means.get(Is)? - means.get(Ib)?;
    Ok(SynergyResult {
        statistic,
        detected: outcomes_in_unit_interval.then_some(statistic > 0.0),
    })
}

pub fn synergy_statistic(observed: &ObservedMatrix, types: &TypeMatrix) -> Result<SynergyResult> {
    use ExposureType::*;
    if types.count(Ibs) == 0 {
        return Err(MrdError::DesignMismatch("no ibs cells; not a synergistic design".into()));
    }
    let means = type_means_for(observed, types, &[C, Ib, Is, Ibs])?;
    let unit = observed.values.iter().all(|y| (0.0..=1.0).contains(y));
    synergy_from_means(&means, unit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::{classify_cells, AxisAssignments, PopulationDims, Rule};
    use crate::designs::{equilibrium_assignment, sample_smrd, stream_rng, EquilibriumAxis, SellerGroup};
    use crate::outcomes::{population_estimands, realize, AliModel};
    use crate::core::Cell;
    use proptest::prelude::*;

    fn means_of(vals: [(ExposureType, f64); 4]) -> TypeMeans {
        let mut means = [None; 5];
        for (t, v) in vals {
            means[t.index()] = Some(v);
        }
        TypeMeans { counts: [1; 5], means }
    }

    #[test]
    fn constant_observed_means() {
        let d = PopulationDims::new(4, 5, 2, 3).unwrap();
        let draw = sample_smrd(d, Rule::Conjunctive, &mut stream_rng(1, 0)).unwrap();
        let y = ObservedMatrix { dims: d, values: vec![2.5; 20] };
        let m = type_means(&y, &draw.types).unwrap();
        for ty in ExposureType::SMRD {
            assert_eq!(m.get(ty).unwrap(), 2.5);
        }
    }

    #[test]
    fn two_by_two_means() {
        let tm = classify_cells(&AxisAssignments::new(vec![1, 0], vec![1, 0]), Rule::Conjunctive).unwrap();
        let y = ObservedMatrix { dims: tm.dims(), values: vec![4.0, 2.0, 3.0, 0.0] };
        let m = type_means(&y, &tm).unwrap();
        use ExposureType::*;
        assert_eq!((m.get(T).unwrap(), m.get(Ib).unwrap(), m.get(Is).unwrap(), m.get(C).unwrap()), (4.0, 2.0, 3.0, 0.0));
        let est = spillover_estimates(&m).unwrap();
        assert_eq!((est.tau_direct, est.tau_spill_b, est.tau_spill_s, est.tau), (-1.0, 2.0, 3.0, 4.0));
        assert_eq!(est.theta, None);
        assert_eq!(lift_estimate(&m), Err(MrdError::LiftUndefined));
    }

    #[test]
    fn empty_declared_type_is_an_error() {
        let tm = classify_cells(&AxisAssignments::new(vec![1, 1], vec![1, 0]), Rule::Conjunctive).unwrap();
        let y = ObservedMatrix { dims: tm.dims(), values: vec![1.0; 4] };
        let err = type_means_for(&y, &tm, &ExposureType::SMRD).unwrap_err();
        assert_eq!(err, MrdError::EmptyType("c".into()));
    }

    #[test]
    fn degenerate_ali_means_give_tau() {
        use ExposureType::*;
        let est = spillover_estimates(&means_of([(T, 6.0), (Ib, 0.5), (Is, 1.5), (C, 0.0)])).unwrap();
        assert_eq!(est.tau, 6.0);
    }

    #[test]
    fn unbiased_over_all_36_assignments() {
        let d = PopulationDims::new(4, 4, 2, 2).unwrap();
        let bank = AliModel::random(d, &mut stream_rng(3, 0)).bank(d).unwrap();
        let pop = population_estimands(&bank);
        let mut sums = [0.0f64; 5];
        let mut n = 0;
        let subsets: Vec<Vec<i32>> = (0u32..16)
            .filter(|b| b.count_ones() == 2)
            .map(|b| (0..4).map(|k| (b >> k & 1) as i32).collect())
            .collect();
        for rb in &subsets {
            for cb in &subsets {
                let tm = classify_cells(&AxisAssignments::new(rb.clone(), cb.clone()), Rule::Conjunctive).unwrap();
                let y = realize(&bank, &tm).unwrap();
                let m = type_means(&y, &tm).unwrap();
                let e = spillover_estimates(&m).unwrap();
                sums[0] += m.get(ExposureType::T).unwrap();
                sums[1] += e.tau_direct;
                sums[2] += e.tau_spill_b;
                sums[3] += e.tau_spill_s;
                sums[4] += e.tau;
                n += 1;
            }
        }
        assert_eq!(n, 36);
        let targets = [pop.mean(ExposureType::T).unwrap(), pop.tau_direct.unwrap(), pop.tau_spill_b.unwrap(), pop.tau_spill_s.unwrap(), pop.tau_p.unwrap()];
        for (s, t) in sums.iter().zip(targets) {
            assert!(stats::rel_err(s / 36.0, t, 1e-300) < 1e-12);
        }
    }

    #[test]
    fn estimate_record_column_order() {
        use ExposureType::*;
        let m = means_of([(T, 4.0), (Ib, 2.0), (Is, 3.0), (C, 1.0)]);
        let rec = EstimateRecord::new(&m, &spillover_estimates(&m).unwrap()).unwrap();
        let csv = rec.to_csv().unwrap();
        let header = csv.lines().next().unwrap();
        assert_eq!(header, ESTIMATE_COLUMNS.join(","));
        let js = serde_json::to_value(rec).unwrap();
        assert_eq!(js["theta"], 3.0);
    }

    fn worked_equilibrium() -> crate::designs::EquilibriumDraw {
        use Cell::{C, T};
        use SellerGroup::{B, S};
        equilibrium_assignment(&EquilibriumAxis {
            x_s: vec![B, B, B, S, S, S, S, S],
            w_b: vec![C, C, T, C, T],
            w_s: vec![C, C, C, T, C, T, C, C],
        })
        .unwrap()
    }

    #[test]
    fn equilibrium_red_indicator() {
        let d = worked_equilibrium();
        let values = d.groups.iter().map(|g| if *g == ComparisonGroup::CcS { 1.0 } else { 0.0 }).collect();
        let y = ObservedMatrix { dims: d.assignment.dims(), values };
        let c = equilibrium_comparisons(&y, &d.groups).unwrap();
        assert_eq!(c.y_cc_s, 1.0);
        assert_eq!(c.y_tc_s, 0.0);
        assert_eq!((c.n_cc_s, c.n_tc_s, c.n_ct_s, c.n_c_b), (9, 6, 6, 9));
    }

    #[test]
    fn equilibrium_all_equal_outcomes() {
        let d = worked_equilibrium();
        let y = ObservedMatrix { dims: d.assignment.dims(), values: vec![3.0; 40] };
        let c = equilibrium_comparisons(&y, &d.groups).unwrap();
        assert_eq!((c.indirect, c.direct), (0.0, 0.0));
    }

    #[test]
    fn equilibrium_empty_set_named() {
        let d = worked_equilibrium();
        let groups: Vec<_> = d.groups.iter().map(|g| if *g == ComparisonGroup::CtS { ComparisonGroup::TtS } else { *g }).collect();
        let y = ObservedMatrix { dims: d.assignment.dims(), values: vec![0.0; 40] };
        assert_eq!(equilibrium_comparisons(&y, &groups).unwrap_err(), MrdError::EmptyIndexSet("CT;S".into()));
    }

    #[test]
    fn synergy_examples() {
        use ExposureType::*;
        let mut m = means_of([(C, 0.0), (Ib, 0.0), (Is, 0.0), (T, 0.5)]);
        m.means[Ibs.index()] = Some(1.0);
        let r = synergy_from_means(&m, true).unwrap();
        assert_eq!((r.statistic, r.detected), (1.0, Some(true)));
        m.means[Ibs.index()] = Some(0.0);
        let r = synergy_from_means(&m, true).unwrap();
        assert_eq!((r.statistic, r.detected), (0.0, Some(false)));
        assert_eq!(synergy_from_means(&m, false).unwrap().detected, None);
        m.means[Ibs.index()] = None;
        assert!(matches!(synergy_from_means(&m, true), Err(MrdError::DesignMismatch(_))));
    }

    #[test]
    fn synergy_requires_ibs_cells() {
        let tm = classify_cells(&AxisAssignments::new(vec![1, 0], vec![1, 0]), Rule::Conjunctive).unwrap();
        let y = ObservedMatrix { dims: tm.dims(), values: vec![0.0; 4] };
        assert!(matches!(synergy_statistic(&y, &tm), Err(MrdError::DesignMismatch(_))));
    }

    proptest! {
        #[test]
        fn linear_identity_and_relabeling(seed in 0u64..500, shift in 0usize..6) {
            let d = PopulationDims::new(5, 6, 2, 3).unwrap();
            let mut rng = stream_rng(seed, 1);
            let bank = AliModel::random(d, &mut rng).bank(d).unwrap();
            let draw = sample_smrd(d, Rule::Conjunctive, &mut rng).unwrap();
            let y = realize(&bank, &draw.types).unwrap();
            let e = spillover_estimates(&type_means(&y, &draw.types).unwrap()).unwrap();
            prop_assert!((e.tau - (e.tau_direct + e.tau_spill_b + e.tau_spill_s)).abs() < 1e-12);
            // relabel sellers jointly in outcomes and types
            let perm = |k: usize| (k / 6) * 6 + (k % 6 + shift) % 6;
            let y2 = ObservedMatrix { dims: d, values: (0..30).map(|k| y.values[perm(k)]).collect() };
            let t2 = TypeMatrix::new(d, (0..30).map(|k| draw.types.types()[perm(k)]).collect()).unwrap();
            let e2 = spillover_estimates(&type_means(&y2, &t2).unwrap()).unwrap();
            prop_assert!((e.tau - e2.tau).abs() < 1e-12);
            prop_assert!((e.tau_direct - e2.tau_direct).abs() < 1e-12);
        }
    }
}
