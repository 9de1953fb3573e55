//! Exact design-based moments of the SMRD type means, the unbiased variance
//! estimator Σ̂ and Cauchy–Schwarz bounds for effects with unidentified
//! cross-type covariances.

use nalgebra::{Matrix4, SymmetricEigen};
use serde::Serialize;

use crate::core::{ExposureType, PopulationDims, TypeMatrix};
use crate::error::{MrdError, Result};
use crate::outcomes::{ObservedMatrix, PotentialOutcomeBank};
use crate::stats;

/// Relative tolerance for exact-identity checks, scaled by the largest |value|.
pub const IDENTITY_TOL: f64 = 1e-10;

const SMRD: [ExposureType; 4] = ExposureType::SMRD;

/// Two-way ANOVA split of one type's potential outcomes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TypeDeviations {
    pub grand_mean: f64,
    pub buyer: Vec<f64>,
    pub seller: Vec<f64>,
    /// Row-major; every row and column sums to zero.
    pub interaction: Vec<f64>,
}

fn deviations(values: &[f64], i: usize, j: usize) -> TypeDeviations {
    let grand_mean = stats::mean(values);
    let row_means: Vec<f64> = (0..i).map(|r| stats::mean(&values[r * j..(r + 1) * j])).collect();
    let col_means: Vec<f64> = (0..j)
        .map(|c| stats::mean(&(0..i).map(|r| values[r * j + c]).collect::<Vec<_>>()))
        .collect();
    let interaction = (0..i * j)
        .map(|k| values[k] - row_means[k / j] - col_means[k % j] + grand_mean)
        .collect();
    TypeDeviations {
        grand_mean,
        buyer: row_means.iter().map(|m| m - grand_mean).collect(),
        seller: col_means.iter().map(|m| m - grand_mean).collect(),
        interaction,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationDecomposition {
    pub dims: PopulationDims,
    pub types: Vec<(ExposureType, TypeDeviations)>,
}

impl DeviationDecomposition {
    pub fn get(&self, ty: ExposureType) -> Result<&TypeDeviations> {
        self.types
            .iter()
            .find(|(t, _)| *t == ty)
            .map(|(_, d)| d)
            .ok_or_else(|| MrdError::EmptyType(ty.name().into()))
    }

    /// Ȳ̄ + Ẏ^B_i + Ẏ^S_j + Ẏ_ij, cell by cell.
    pub fn reconstruct(&self, ty: ExposureType) -> Result<Vec<f64>> {
        let d = self.get(ty)?;
        let j = self.dims.j;
        Ok((0..d.interaction.len())
            .map(|k| d.grand_mean + d.buyer[k / j] + d.seller[k % j] + d.interaction[k])
            .collect())
    }
}

pub fn decompose(bank: &PotentialOutcomeBank) -> DeviationDecomposition {
    let dims = bank.dims();
    let types = bank
        .types()
        .into_iter()
        .map(|ty| {
            let v = bank.values(ty).expect("listed type is present");
            (ty, deviations(v, dims.i, dims.j))
        })
        .collect();
    DeviationDecomposition { dims, types }
}

/// S² triple: buyer, seller and interaction dispersions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Dispersion {
    pub buyer: f64,
    pub seller: f64,
    pub interaction: f64,
}

fn dispersion(d: &TypeDeviations, i: usize, j: usize) -> Dispersion {
    let ss = |xs: &[f64]| xs.iter().map(|x| x * x).sum::<f64>();
    Dispersion {
        buyer: ss(&d.buyer) / (i - 1) as f64,
        seller: ss(&d.seller) / (j - 1) as f64,
        interaction: ss(&d.interaction) / ((i - 1) * (j - 1)) as f64,
    }
}

/// Single and pairwise-difference dispersions over the SMRD types.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceComponents {
    pub dims: PopulationDims,
    pub single: [Dispersion; 4],
    /// Indexed [a][b] in canonical type order; symmetric, zero diagonal.
    pub pair: [[Dispersion; 4]; 4],
}

impl VarianceComponents {
    pub fn single(&self, ty: ExposureType) -> Dispersion {
        self.single[ty.index()]
    }

    pub fn pair(&self, a: ExposureType, b: ExposureType) -> Dispersion {
        self.pair[a.index()][b.index()]
    }
}

fn require_smrd(bank: &PotentialOutcomeBank) -> Result<()> {
    for ty in SMRD {
        if !bank.has(ty) {
            return Err(MrdError::EmptyType(ty.name().into()));
        }
    }
    Ok(())
}

/// S² components from the bank's deviations; the pairwise ones are the
/// dispersions of Y(ω) − Y(ω′).
pub fn population_variance_components(bank: &PotentialOutcomeBank) -> Result<VarianceComponents> {
    let dims = bank.dims();
    let (i, j) = (dims.i, dims.j);
    if i < 2 || j < 2 {
        return Err(MrdError::Dimension(format!("need I, J >= 2, got {i}x{j}")));
    }
    require_smrd(bank)?;
    let mut single = [Dispersion::default(); 4];
    let mut pair = [[Dispersion::default(); 4]; 4];
    for a in SMRD {
        let ya = bank.values(a)?;
        single[a.index()] = dispersion(&deviations(ya, i, j), i, j);
        for b in SMRD {
            if b.index() <= a.index() {
                continue;
            }
            let yb = bank.values(b)?;
            let diff: Vec<f64> = ya.iter().zip(yb).map(|(x, y)| x - y).collect();
            let d = dispersion(&deviations(&diff, i, j), i, j);
            pair[a.index()][b.index()] = d;
            pair[b.index()][a.index()] = d;
        }
    }
    Ok(VarianceComponents { dims, single, pair })
}

/// Number of buyers on a type's side of the buyer randomization.
fn buyer_side(dims: PopulationDims, ty: ExposureType) -> usize {
    if ty.buyer_selected() { dims.i_t } else { dims.i_c() }
}

fn seller_side(dims: PopulationDims, ty: ExposureType) -> usize {
    if ty.seller_selected() { dims.j_t } else { dims.j_c() }
}

/// C(Ȳ_a, Ȳ_b) under SMRD sampling.
///
/// Buyer terms: same side gives (1/n − 1/I)·S_ab, opposite sides give
/// −S_ab/I; sellers likewise; the interaction term is the product of both
/// factors. S_ab is recovered from the difference dispersion.
pub fn type_covariance(comp: &VarianceComponents, a: ExposureType, b: ExposureType) -> f64 {
    let d = comp.dims;
    let (i, j) = (d.i as f64, d.j as f64);
    let kb = if a.buyer_selected() == b.buyer_selected() {
        1.0 / buyer_side(d, a) as f64 - 1.0 / i
    } else {
        -1.0 / i
    };
    let ks = if a.seller_selected() == b.seller_selected() {
        1.0 / seller_side(d, a) as f64 - 1.0 / j
    } else {
        -1.0 / j
    };
    let (sa, sb) = (comp.single(a), comp.single(b));
    let cross = |x: f64, y: f64, diff: f64| 0.5 * (x + y - diff);
    let (xb, xs, xbs) = if a == b {
        (sa.buyer, sa.seller, sa.interaction)
    } else {
        let p = comp.pair(a, b);
        (
            cross(sa.buyer, sb.buyer, p.buyer),
            cross(sa.seller, sb.seller, p.seller),
            cross(sa.interaction, sb.interaction, p.interaction),
        )
    };
    kb * xb + ks * xs + kb * ks * xbs
}

/// Coefficients of (c, ib, is, t) for each effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effect {
    Tau,
    Direct,
    SpillB,
    SpillS,
}

impl Effect {
    pub const ALL: [Effect; 4] = [Effect::Tau, Effect::Direct, Effect::SpillB, Effect::SpillS];

    pub fn coefficients(self) -> [f64; 4] {
        match self {
            Effect::Tau => [-1.0, 0.0, 0.0, 1.0],
            Effect::Direct => [1.0, -1.0, -1.0, 1.0],
            Effect::SpillB => [-1.0, 1.0, 0.0, 0.0],
            Effect::SpillS => [-1.0, 0.0, 1.0, 0.0],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Effect::Tau => "tau",
            Effect::Direct => "tau_direct",
            Effect::SpillB => "tau_spill_B",
            Effect::SpillS => "tau_spill_S",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentReport {
    /// Covariance matrix of (Ȳ_c, Ȳ_ib, Ȳ_is, Ȳ_t).
    pub covariance: [[f64; 4]; 4],
    pub v_tau: f64,
    pub v_direct: f64,
    pub v_spill_b: f64,
    pub v_spill_s: f64,
    /// Smallest eigenvalue of `covariance`.
    pub min_eigenvalue: f64,
    pub psd: bool,
}

impl MomentReport {
    pub fn variance(&self, ty: ExposureType) -> f64 {
        self.covariance[ty.index()][ty.index()]
    }

    pub fn covariance(&self, a: ExposureType, b: ExposureType) -> f64 {
        self.covariance[a.index()][b.index()]
    }

    pub fn effect_variance(&self, e: Effect) -> f64 {
        match e {
            Effect::Tau => self.v_tau,
            Effect::Direct => self.v_direct,
            Effect::SpillB => self.v_spill_b,
            Effect::SpillS => self.v_spill_s,
        }
    }
}

fn quadratic_form(cov: &[[f64; 4]; 4], w: [f64; 4]) -> f64 {
    let mut v = 0.0;
    for a in 0..4 {
        for b in 0..4 {
            v += w[a] * w[b] * cov[a][b];
        }
    }
    v
}

pub fn closed_form_moments(comp: &VarianceComponents) -> Result<MomentReport> {
    let d = comp.dims;
    if d.i_t == 0 || d.i_t >= d.i || d.j_t == 0 || d.j_t >= d.j {
        return Err(MrdError::Degenerate(format!(
            "need 1 <= I_T <= I-1 and 1 <= J_T <= J-1, got I_T={} of {}, J_T={} of {}",
            d.i_t, d.i, d.j_t, d.j
        )));
    }
    let mut covariance = [[0.0; 4]; 4];
    for a in SMRD {
        for b in SMRD {
            covariance[a.index()][b.index()] = type_covariance(comp, a, b);
        }
    }
    let m = Matrix4::from_fn(|r, c| covariance[r][c]);
    let min_eigenvalue = SymmetricEigen::new(m).eigenvalues.min();
    let trace = m.trace();
    Ok(MomentReport {
        v_tau: quadratic_form(&covariance, Effect::Tau.coefficients()),
        v_direct: quadratic_form(&covariance, Effect::Direct.coefficients()),
        v_spill_b: quadratic_form(&covariance, Effect::SpillB.coefficients()),
        v_spill_s: quadratic_form(&covariance, Effect::SpillS.coefficients()),
        covariance,
        min_eigenvalue,
        psd: min_eigenvalue >= -IDENTITY_TOL * trace.abs().max(f64::MIN_POSITIVE),
    })
}

/// Bank to moments in one call.
pub fn bank_moments(bank: &PotentialOutcomeBank) -> Result<MomentReport> {
    closed_form_moments(&population_variance_components(bank)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LiftVariance {
    pub value: f64,
    /// Always true: a first-order expansion, not an exact variance.
    pub approximate: bool,
}

/// Delta-method variance of θ̂ = (Ȳ_t − Ȳ_c)/Ȳ_c around the population means.
pub fn lift_variance(moments: &MomentReport, mean_c: f64, mean_t: f64) -> Result<LiftVariance> {
    if mean_c == 0.0 {
        return Err(MrdError::LiftUndefined);
    }
    use ExposureType::{C, T};
    let value = (mean_c * mean_c * moments.variance(T) + mean_t * mean_t * moments.variance(C)
        - 2.0 * mean_c * mean_t * moments.covariance(C, T))
        / mean_c.powi(4);
    Ok(LiftVariance { value, approximate: true })
}

/// Σ̂ for one type with its ingredients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SigmaHat {
    pub ty: ExposureType,
    pub value: f64,
    /// α^B = sqrt((I − I_ω)/((I − 1)·I_ω)).
    pub alpha_b: f64,
    pub alpha_s: f64,
    pub gamma: f64,
    pub b_hat_b: f64,
    pub b_hat_s: f64,
}

/// Unbiased estimator of V(Ȳ_ω) from the observed block of type ω.
///
/// The block is the I_ω × J_ω submatrix of rows and columns on ω's side of
/// each randomization; every cell in it has type ω under an SMRD.
pub fn sigma_hat(observed: &ObservedMatrix, types: &TypeMatrix, ty: ExposureType) -> Result<SigmaHat> {
    let dims = types.dims();
    if (observed.dims.i, observed.dims.j) != (dims.i, dims.j) {
        return Err(MrdError::Dimension("observed and type matrices differ in shape".into()));
    }
    let (i, j) = (dims.i, dims.j);
    let rows: Vec<usize> = (0..i).filter(|&r| (0..j).any(|c| types.get(r, c) == ty)).collect();
    let cols: Vec<usize> = (0..j).filter(|&c| (0..i).any(|r| types.get(r, c) == ty)).collect();
    let (iw, jw) = (rows.len(), cols.len());
    if iw < 2 || jw < 2 {
        return Err(MrdError::InsufficientReplication { ty: ty.name().into(), rows: iw, cols: jw });
    }
    if rows.iter().any(|&r| cols.iter().any(|&c| types.get(r, c) != ty)) {
        return Err(MrdError::DesignMismatch(format!(
            "cells of type {} do not form a block",
            ty.name()
        )));
    }
    let y = |r: usize, c: usize| observed.get(rows[r], cols[c]);
    let row_means: Vec<f64> =
        (0..iw).map(|r| stats::mean(&(0..jw).map(|c| y(r, c)).collect::<Vec<_>>())).collect();
    let col_means: Vec<f64> =
        (0..jw).map(|c| stats::mean(&(0..iw).map(|r| y(r, c)).collect::<Vec<_>>())).collect();
    let grand = stats::mean(&row_means);

    let (fi, fj, fiw, fjw) = (i as f64, j as f64, iw as f64, jw as f64);
    let s2_b = row_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / fiw;
    let s2_s = col_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / fjw;
    let mut s2_bs = 0.0;
    let mut within_rows = 0.0;
    let mut within_cols = 0.0;
    for r in 0..iw {
        for c in 0..jw {
            let v = y(r, c);
            s2_bs += (v - row_means[r] - col_means[c] + grand).powi(2);
            within_rows += (v - row_means[r]).powi(2);
            within_cols += (v - col_means[c]).powi(2);
        }
    }
    s2_bs /= fiw * fjw;

    let a = (fi - fiw) / ((fi - 1.0) * fiw);
    let c = (fj - fjw) / ((fj - 1.0) * fjw);
    let gamma = a * s2_b + c * s2_s + a * c * s2_bs;
    // average over rows of the estimated variance of each row mean
    let b_hat_b = (fj - fjw) / (fjw * fj) * within_rows / (fiw * (fjw - 1.0));
    let b_hat_s = (fi - fiw) / (fiw * fi) * within_cols / (fjw * (fiw - 1.0));
    let value = gamma / ((1.0 - a) * (1.0 - c)) - a / (1.0 - a) * b_hat_b - c / (1.0 - c) * b_hat_s;
    Ok(SigmaHat { ty, value, alpha_b: a.sqrt(), alpha_s: c.sqrt(), gamma, b_hat_b, b_hat_s })
}

/// Σ̂ for the four SMRD types, in canonical order.
pub fn sigma_hats(observed: &ObservedMatrix, types: &TypeMatrix) -> Result<[SigmaHat; 4]> {
    let v: Vec<SigmaHat> = SMRD.iter().map(|&ty| sigma_hat(observed, types, ty)).collect::<Result<_>>()?;
    Ok([v[0], v[1], v[2], v[3]])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
    /// Some Σ̂ entering the bound was negative and was replaced by 0.
    pub clamped: bool,
}

/// Variance bounds for every effect from the four Σ̂ (canonical order).
///
/// Each unknown covariance is replaced by ±`cross_scale`·sqrt(Σ̂_ω Σ̂_ω′).
/// `cross_scale = 1` gives the published form; `2` is the full
/// Cauchy–Schwarz envelope, since V(X − Y) = V(X) + V(Y) − 2C(X, Y).
pub fn spillover_variance_bounds(sigma: [f64; 4], cross_scale: f64) -> [(Effect, Bounds); 4] {
    let clamped_any = |w: [f64; 4]| (0..4).any(|k| w[k] != 0.0 && sigma[k] < 0.0);
    let s: Vec<f64> = sigma.iter().map(|x| x.max(0.0)).collect();
    Effect::ALL.map(|e| {
        let w = e.coefficients();
        let base: f64 = (0..4).filter(|&k| w[k] != 0.0).map(|k| s[k]).sum();
        let mut cross = 0.0;
        for a in 0..4 {
            for b in a + 1..4 {
                if w[a] != 0.0 && w[b] != 0.0 {
                    cross += (s[a] * s[b]).sqrt();
                }
            }
        }
        let half = cross_scale * cross;
        (e, Bounds { lo: base - half, hi: base + half, clamped: clamped_any(w) })
    })
}

/// Bounds for a single effect.
pub fn effect_bounds(sigma: [f64; 4], cross_scale: f64, effect: Effect) -> Bounds {
    spillover_variance_bounds(sigma, cross_scale)
        .into_iter()
        .find(|(e, _)| *e == effect)
        .map(|(_, b)| b)
        .expect("every effect has bounds")
}
