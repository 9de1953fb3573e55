//! Potential-outcome banks, the additive local interference model, population
//! estimands, and empirical checks of interference assumptions.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::core::{consistency_report, AssignmentMatrix, Cell, ExposureType, PopulationDims, TypeMatrix};
use crate::error::{MrdError, Result};

/// Per cell, one outcome per declared exposure type.
///
/// `dims.i_t` and `dims.j_t` record the design the bank is valid for.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialOutcomeBank {
    dims: PopulationDims,
    values: [Option<Vec<f64>>; 5],
    ali: Option<AliModel>,
}

impl PotentialOutcomeBank {
    pub fn new(dims: PopulationDims, values: Vec<(ExposureType, Vec<f64>)>) -> Result<Self> {
        dims.validate()?;
        let mut slots: [Option<Vec<f64>>; 5] = Default::default();
        for (ty, v) in values {
            if v.len() != dims.cells() {
                return Err(MrdError::Dimension(format!(
                    "type {ty}: expected {} values, got {}",
                    dims.cells(),
                    v.len()
                )));
            }
            if let Some(bad) = v.iter().position(|x| !x.is_finite()) {
                return Err(MrdError::Parameter(format!("type {ty}: non-finite value at cell {bad}")));
            }
            slots[ty.index()] = Some(v);
        }
        Ok(PotentialOutcomeBank { dims, values: slots, ali: None })
    }

    /// Bank whose outcome for type ω is the same constant in every cell.
    pub fn constant(dims: PopulationDims, per_type: &[(ExposureType, f64)]) -> Result<Self> {
        Self::new(dims, per_type.iter().map(|&(t, v)| (t, vec![v; dims.cells()])).collect())
    }

    pub fn with_ali(mut self, ali: AliModel) -> Self {
        self.ali = Some(ali);
        self
    }

    pub fn dims(&self) -> PopulationDims {
        self.dims
    }

    pub fn ali(&self) -> Option<&AliModel> {
        self.ali.as_ref()
    }

    pub fn has(&self, ty: ExposureType) -> bool {
        self.values[ty.index()].is_some()
    }

    pub fn types(&self) -> Vec<ExposureType> {
        ExposureType::ALL.into_iter().filter(|t| self.has(*t)).collect()
    }

    pub fn values(&self, ty: ExposureType) -> Result<&[f64]> {
        self.values[ty.index()]
            .as_deref()
            .ok_or_else(|| MrdError::Coverage(ty.name().into()))
    }

    pub fn value(&self, i: usize, j: usize, ty: ExposureType) -> Result<f64> {
        Ok(self.values(ty)?[i * self.dims.j + j])
    }

    /// Largest absolute value in the bank, used to scale tolerances.
    pub fn scale(&self) -> f64 {
        self.values.iter().flatten().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Long-format CSV with columns (i, j, type, value).
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["i", "j", "type", "value"])?;
        for i in 0..self.dims.i {
            for j in 0..self.dims.j {
                for ty in self.types() {
                    let v = self.value(i, j, ty)?;
                    wtr.write_record(&[i.to_string(), j.to_string(), ty.name().into(), v.to_string()])?;
                }
            }
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R, dims: PopulationDims) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut cols: HashMap<ExposureType, Vec<Option<f64>>> = HashMap::new();
        for rec in rdr.records() {
            let rec = rec?;
            let field = |k: usize| rec.get(k).unwrap_or("").trim().to_string();
            let parse_idx = |s: String| {
                s.parse::<usize>().map_err(|e| MrdError::Parameter(format!("bad index {s:?}: {e}")))
            };
            let (i, j) = (parse_idx(field(0))?, parse_idx(field(1))?);
            let ty = ExposureType::parse(&field(2))?;
            let v: f64 = field(3)
                .parse()
                .map_err(|e| MrdError::Parameter(format!("bad value {:?}: {e}", field(3))))?;
            if i >= dims.i || j >= dims.j {
                return Err(MrdError::Dimension(format!("cell ({i},{j}) outside {}x{}", dims.i, dims.j)));
            }
            cols.entry(ty).or_insert_with(|| vec![None; dims.cells()])[i * dims.j + j] = Some(v);
        }
        let mut values = Vec::new();
        for (ty, col) in cols {
            let filled: Option<Vec<f64>> = col.into_iter().collect();
            values.push((ty, filled.ok_or_else(|| MrdError::Coverage(format!("{ty} (incomplete)")))?));
        }
        Self::new(dims, values)
    }
}

/// Spillover curve h(x) = linear·x + quadratic·x², so h(0) = 0 by construction.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SpillCurve {
    pub linear: f64,
    pub quadratic: f64,
}

impl SpillCurve {
    pub fn eval(&self, x: f64) -> f64 {
        self.linear * x + self.quadratic * x * x
    }
}

/// Additive local interference: Y_ij(W) = h_ij(w_ij) + h^B_ij(w̄^B_i) + h^S_ij(w̄^S_j),
/// where w̄^B_i is buyer i's treated share and w̄^S_j seller j's.
#[derive(Debug, Clone, PartialEq)]
pub struct AliModel {
    pub dims: PopulationDims,
    pub h_control: Vec<f64>,
    pub h_treated: Vec<f64>,
    pub buyer_spill: Vec<SpillCurve>,
    pub seller_spill: Vec<SpillCurve>,
}

impl AliModel {
    pub fn new(
        dims: PopulationDims,
        h_control: Vec<f64>,
        h_treated: Vec<f64>,
        buyer_spill: Vec<SpillCurve>,
        seller_spill: Vec<SpillCurve>,
    ) -> Result<Self> {
        let n = dims.cells();
        if [h_control.len(), h_treated.len(), buyer_spill.len(), seller_spill.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(MrdError::Dimension(format!("ALI model needs {n} entries per component")));
        }
        Ok(AliModel { dims, h_control, h_treated, buyer_spill, seller_spill })
    }

    /// Random model with standard normal coefficients, for tests and oracles.
    pub fn random<R: Rng + ?Sized>(dims: PopulationDims, rng: &mut R) -> Self {
        let n = dims.cells();
        let mut z = || rng.sample::<f64, _>(StandardNormal);
        let h_control = (0..n).map(|_| 5.0 + z()).collect();
        let h_treated = (0..n).map(|_| 6.0 + z()).collect();
        let buyer_spill = (0..n).map(|_| SpillCurve { linear: z(), quadratic: z() }).collect();
        let seller_spill = (0..n).map(|_| SpillCurve { linear: z(), quadratic: z() }).collect();
        AliModel { dims, h_control, h_treated, buyer_spill, seller_spill }
    }

    fn direct(&self, k: usize, cell: Cell) -> f64 {
        match cell {
            Cell::C => self.h_control[k],
            Cell::T => self.h_treated[k],
        }
    }

    /// Outcomes of every cell under an arbitrary assignment.
    pub fn outcomes(&self, w: &AssignmentMatrix) -> Result<Vec<f64>> {
        let d = w.dims();
        if (d.i, d.j) != (self.dims.i, self.dims.j) {
            return Err(MrdError::Dimension("assignment and model sizes differ".into()));
        }
        let rep = consistency_report(w);
        let to_f = |f: &crate::core::Fraction| *f.numer() as f64 / *f.denom() as f64;
        let mut out = Vec::with_capacity(d.cells());
        for i in 0..d.i {
            for j in 0..d.j {
                let k = i * d.j + j;
                out.push(
                    self.direct(k, w.get(i, j))
                        + self.buyer_spill[k].eval(to_f(&rep.buyer_fractions[i]))
                        + self.seller_spill[k].eval(to_f(&rep.seller_fractions[j])),
                );
            }
        }
        Ok(out)
    }

    /// Bank for the conjunctive SMRD with I_T, J_T taken from `dims`.
    ///
    /// A buyer selected into the experiment sees a share J_T/J of treated
    /// sellers, so ib picks up h^B(p^S) and is picks up h^S(p^B).
    pub fn bank(&self, dims: PopulationDims) -> Result<PotentialOutcomeBank> {
        if (dims.i, dims.j) != (self.dims.i, self.dims.j) {
            return Err(MrdError::Dimension("bank and model sizes differ".into()));
        }
        let (pb, ps) = (dims.p_b(), dims.p_s());
        let n = dims.cells();
        let mut c = Vec::with_capacity(n);
        let mut ib = Vec::with_capacity(n);
        let mut is = Vec::with_capacity(n);
        let mut t = Vec::with_capacity(n);
        for k in 0..n {
            let hb = self.buyer_spill[k].eval(ps);
            let hs = self.seller_spill[k].eval(pb);
            c.push(self.h_control[k]);
            ib.push(self.h_control[k] + hb);
            is.push(self.h_control[k] + hs);
            t.push(self.h_treated[k] + hb + hs);
        }
        Ok(PotentialOutcomeBank::new(
            dims,
            vec![
                (ExposureType::C, c),
                (ExposureType::Ib, ib),
                (ExposureType::Is, is),
                (ExposureType::T, t),
            ],
        )?
        .with_ali(self.clone()))
    }

    /// Outcome when every pair is treated.
    pub fn all_treated(&self, k: usize) -> f64 {
        self.h_treated[k] + self.buyer_spill[k].eval(1.0) + self.seller_spill[k].eval(1.0)
    }

    pub fn all_control(&self, k: usize) -> f64 {
        self.h_control[k]
    }
}

/// Gaussian component law: N(scale·mean, sd²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub mean: f64,
    pub sd: f64,
}

/// Gaussian ALI laws F_ℓ = N(p^ℓ μ_ℓ, σ_ℓ²) with p^0 = p^1 = 1.
///
/// Types draw c ~ F_0, ib ~ F_0 + F_B, is ~ F_0 + F_S, t ~ F_1 + F_B + F_S.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianAliParams {
    pub control: Component,
    pub buyer_spillover: Component,
    pub seller_spillover: Component,
    pub treated: Component,
    /// Draw each component once per cell and share it across types.
    #[serde(default)]
    pub shared_components: bool,
}

impl GaussianAliParams {
    /// Parameters named by type: (μ, σ) for c, ib, is, t.
    pub fn from_type_params(c: (f64, f64), ib: (f64, f64), is: (f64, f64), t: (f64, f64)) -> Self {
        let comp = |(mean, sd)| Component { mean, sd };
        GaussianAliParams {
            control: comp(c),
            buyer_spillover: comp(ib),
            seller_spillover: comp(is),
            treated: comp(t),
            shared_components: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, c) in [
            ("control", self.control),
            ("buyer_spillover", self.buyer_spillover),
            ("seller_spillover", self.seller_spillover),
            ("treated", self.treated),
        ] {
            if !(c.sd >= 0.0) || !c.sd.is_finite() || !c.mean.is_finite() {
                return Err(MrdError::Parameter(format!(
                    "{name}: need finite mean and sd >= 0, got mean {} sd {}",
                    c.mean, c.sd
                )));
            }
        }
        Ok(())
    }
}

fn draw<R: Rng + ?Sized>(rng: &mut R, c: Component, scale: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    scale * c.mean + c.sd * z
}

/// Gaussian ALI bank for the SMRD described by `dims`.
///
/// Independent mode draws fresh components per (cell, type). Shared mode
/// draws one set per cell and attaches the implied ALI model, with spillover
/// curves linear through the origin and matched at the design's shares.
pub fn gaussian_ali_bank<R: Rng + ?Sized>(
    dims: PopulationDims,
    params: &GaussianAliParams,
    rng: &mut R,
) -> Result<PotentialOutcomeBank> {
    dims.validate()?;
    params.validate()?;
    let (pb, ps) = (dims.p_b(), dims.p_s());
    let n = dims.cells();
    let (f0, fb, fs, f1) =
        (params.control, params.buyer_spillover, params.seller_spillover, params.treated);
    if params.shared_components {
        if pb == 0.0 || ps == 0.0 {
            return Err(MrdError::Parameter("shared components need I_T, J_T > 0".into()));
        }
        let mut h_control = Vec::with_capacity(n);
        let mut h_treated = Vec::with_capacity(n);
        let mut buyer_spill = Vec::with_capacity(n);
        let mut seller_spill = Vec::with_capacity(n);
        for _ in 0..n {
            h_control.push(draw(rng, f0, 1.0));
            h_treated.push(draw(rng, f1, 1.0));
            let b = draw(rng, fb, pb);
            let s = draw(rng, fs, ps);
            // ib sees share p^S on its row, is sees share p^B on its column
            buyer_spill.push(SpillCurve { linear: b / ps, quadratic: 0.0 });
            seller_spill.push(SpillCurve { linear: s / pb, quadratic: 0.0 });
        }
        let model = AliModel::new(dims, h_control, h_treated, buyer_spill, seller_spill)?;
        return model.bank(dims);
    }
    let mut c = Vec::with_capacity(n);
    let mut ib = Vec::with_capacity(n);
    let mut is = Vec::with_capacity(n);
    let mut t = Vec::with_capacity(n);
    for _ in 0..n {
        c.push(draw(rng, f0, 1.0));
        ib.push(draw(rng, f0, 1.0) + draw(rng, fb, pb));
        is.push(draw(rng, f0, 1.0) + draw(rng, fs, ps));
        t.push(draw(rng, f1, 1.0) + draw(rng, fb, pb) + draw(rng, fs, ps));
    }
    PotentialOutcomeBank::new(
        dims,
        vec![
            (ExposureType::C, c),
            (ExposureType::Ib, ib),
            (ExposureType::Is, is),
            (ExposureType::T, t),
        ],
    )
}

/// Realized outcomes Y_ij = Y_ij(T_ij).
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedMatrix {
    pub dims: PopulationDims,
    pub values: Vec<f64>,
}

impl ObservedMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.dims.j + j]
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.values[i * self.dims.j..(i + 1) * self.dims.j].iter().sum()
    }
}

pub fn realize(bank: &PotentialOutcomeBank, types: &TypeMatrix) -> Result<ObservedMatrix> {
    let (bd, td) = (bank.dims(), types.dims());
    if (bd.i, bd.j) != (td.i, td.j) {
        return Err(MrdError::Dimension(format!(
            "bank is {}x{}, types are {}x{}",
            bd.i, bd.j, td.i, td.j
        )));
    }
    for ty in types.present() {
        bank.values(ty)?;
    }
    let values = types
        .types()
        .iter()
        .enumerate()
        .map(|(k, ty)| bank.values[ty.index()].as_ref().expect("checked")[k])
        .collect();
    Ok(ObservedMatrix { dims: td, values })
}

/// Estimands that need full-treatment and full-control outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LiftEstimands {
    pub theta: f64,
    pub theta_b: f64,
    pub theta_s: f64,
    pub tau: f64,
    pub tau_b: f64,
    pub tau_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PopulationEstimands {
    /// Ȳ̄(ω) in canonical type order; `None` for types the bank lacks.
    pub means: [Option<f64>; 5],
    pub tau_direct: Option<f64>,
    pub tau_spill_b: Option<f64>,
    pub tau_spill_s: Option<f64>,
    /// τ(p^B, p^S) = Ȳ̄(t) − Ȳ̄(c).
    pub tau_p: Option<f64>,
    pub lift: Option<LiftEstimands>,
}

impl PopulationEstimands {
    pub fn mean(&self, ty: ExposureType) -> Option<f64> {
        self.means[ty.index()]
    }
}

pub fn population_estimands(bank: &PotentialOutcomeBank) -> PopulationEstimands {
    let mut means = [None; 5];
    for ty in bank.types() {
        means[ty.index()] = Some(crate::stats::mean(bank.values(ty).expect("present")));
    }
    let m = |t: ExposureType| means[t.index()];
    use ExposureType::*;
    let four = |f: &dyn Fn(f64, f64, f64, f64) -> f64| match (m(C), m(Ib), m(Is), m(T)) {
        (Some(c), Some(ib), Some(is), Some(t)) => Some(f(c, ib, is, t)),
        _ => None,
    };
    PopulationEstimands {
        tau_direct: four(&|c, ib, is, t| t - ib - is + c),
        tau_spill_b: m(Ib).zip(m(C)).map(|(ib, c)| ib - c),
        tau_spill_s: m(Is).zip(m(C)).map(|(is, c)| is - c),
        tau_p: m(T).zip(m(C)).map(|(t, c)| t - c),
        lift: bank.ali().map(lift_estimands),
        means,
    }
}

/// Lift and ATE computed along three aggregation paths: all cells, buyer
/// row totals, seller column totals.
pub fn lift_estimands(ali: &AliModel) -> LiftEstimands {
    let d = ali.dims;
    let (i_n, j_n) = (d.i, d.j);
    let cells = d.cells() as f64;
    let y1: f64 = (0..d.cells()).map(|k| ali.all_treated(k)).sum();
    let y0: f64 = (0..d.cells()).map(|k| ali.all_control(k)).sum();
    let row = |i: usize, f: &dyn Fn(usize) -> f64| (0..j_n).map(|j| f(i * j_n + j)).sum::<f64>();
    let col = |j: usize, f: &dyn Fn(usize) -> f64| (0..i_n).map(|i| f(i * j_n + j)).sum::<f64>();
    let treat = |k| ali.all_treated(k);
    let ctrl = |k| ali.all_control(k);
    let rb1: Vec<f64> = (0..i_n).map(|i| row(i, &treat)).collect();
    let rb0: Vec<f64> = (0..i_n).map(|i| row(i, &ctrl)).collect();
    let cs1: Vec<f64> = (0..j_n).map(|j| col(j, &treat)).collect();
    let cs0: Vec<f64> = (0..j_n).map(|j| col(j, &ctrl)).collect();
    let tau_b = rb1.iter().zip(&rb0).map(|(a, b)| a - b).sum::<f64>() / i_n as f64;
    let tau_s = cs1.iter().zip(&cs0).map(|(a, b)| a - b).sum::<f64>() / j_n as f64;
    LiftEstimands {
        theta: (y1 - y0) / y0,
        theta_b: tau_b / (rb0.iter().sum::<f64>() / i_n as f64),
        theta_s: tau_s / (cs0.iter().sum::<f64>() / j_n as f64),
        tau: (y1 - y0) / cells,
        tau_b,
        tau_s,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterferenceClass {
    /// Y_ij depends on w_ij only.
    Strong,
    /// Y_ij depends on seller j's column only.
    Sellers,
    /// Y_ij depends on buyer i's row only.
    Buyers,
    /// Y_ij depends on w_ij and the row and column treated shares.
    Local,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub cell: (usize, usize),
    pub w: AssignmentMatrix,
    pub w_prime: AssignmentMatrix,
    pub y: f64,
    pub y_prime: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterferenceReport {
    pub class: InterferenceClass,
    pub exhaustive: bool,
    pub pairs_checked: usize,
    pub violation: Option<Violation>,
}

impl InterferenceReport {
    pub fn passed(&self) -> bool {
        self.violation.is_none()
    }
}

/// Largest I·J accepted by [`verify_interference_class`].
pub const MAX_INTERFERENCE_CELLS: usize = 16;
/// Up to this many cells every matrix is enumerated.
pub const EXHAUSTIVE_INTERFERENCE_CELLS: usize = 12;

fn key_for(class: InterferenceClass, w: &AssignmentMatrix, i: usize, j: usize) -> Vec<u8> {
    let d = w.dims();
    match class {
        InterferenceClass::Strong => vec![w.get(i, j) as u8],
        InterferenceClass::Sellers => (0..d.i).map(|r| w.get(r, j) as u8).collect(),
        InterferenceClass::Buyers => (0..d.j).map(|c| w.get(i, c) as u8).collect(),
        InterferenceClass::Local => {
            vec![w.get(i, j) as u8, w.row_treated(i) as u8, w.col_treated(j) as u8]
        }
    }
}

fn matrix_from_bits(dims: PopulationDims, bits: u32) -> AssignmentMatrix {
    AssignmentMatrix::from_fn(dims, |i, j| Cell::from_bool(bits >> (i * dims.j + j) & 1 == 1))
}

/// Random W' agreeing with `w` on everything the class holds fixed at (i, j).
fn partner<R: Rng + ?Sized>(
    class: InterferenceClass,
    w: &AssignmentMatrix,
    i: usize,
    j: usize,
    rng: &mut R,
) -> AssignmentMatrix {
    let d = w.dims();
    let mut wp = w.clone();
    let coin = |rng: &mut R| Cell::from_bool(rng.gen::<bool>());
    for r in 0..d.i {
        for c in 0..d.j {
            let free = match class {
                InterferenceClass::Strong => (r, c) != (i, j),
                InterferenceClass::Sellers => c != j,
                InterferenceClass::Buyers => r != i,
                InterferenceClass::Local => r != i && c != j,
            };
            if free {
                wp.set(r, c, coin(rng));
            }
        }
    }
    if class == InterferenceClass::Local {
        use rand::seq::SliceRandom;
        let mut row: Vec<Cell> = (0..d.j).filter(|&c| c != j).map(|c| w.get(i, c)).collect();
        row.shuffle(rng);
        for (c, v) in (0..d.j).filter(|&c| c != j).zip(row) {
            wp.set(i, c, v);
        }
        let mut col: Vec<Cell> = (0..d.i).filter(|&r| r != i).map(|r| w.get(r, j)).collect();
        col.shuffle(rng);
        for (r, v) in (0..d.i).filter(|&r| r != i).zip(col) {
            wp.set(r, j, v);
        }
    }
    wp
}

/// Checks Y_ij(W) = Y_ij(W') over pairs the class deems equivalent.
///
/// Up to [`EXHAUSTIVE_INTERFERENCE_CELLS`] cells every matrix is visited, so
/// every qualifying pair is covered. Larger instances draw `samples` random
/// matrices and one random qualifying partner per cell.
pub fn verify_interference_class<F, R>(
    generator: F,
    class: InterferenceClass,
    dims: PopulationDims,
    samples: usize,
    rng: &mut R,
) -> Result<InterferenceReport>
where
    F: Fn(&AssignmentMatrix) -> Vec<f64>,
    R: Rng + ?Sized,
{
    dims.validate()?;
    let n = dims.cells();
    if n > MAX_INTERFERENCE_CELLS {
        return Err(MrdError::Size(format!(
            "interference check needs I*J <= {MAX_INTERFERENCE_CELLS}, got {n}"
        )));
    }
    let tol = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()));
    let mut report = InterferenceReport { class, exhaustive: n <= EXHAUSTIVE_INTERFERENCE_CELLS, pairs_checked: 0, violation: None };
    if report.exhaustive {
        let mut first: Vec<HashMap<Vec<u8>, (u32, f64)>> = vec![HashMap::new(); n];
        for bits in 0..(1u32 << n) {
            let w = matrix_from_bits(dims, bits);
            let y = generator(&w);
            for i in 0..dims.i {
                for j in 0..dims.j {
                    let k = i * dims.j + j;
                    match first[k].get(&key_for(class, &w, i, j)) {
                        Some(&(b0, y0)) => {
                            report.pairs_checked += 1;
                            if !tol(y0, y[k]) {
                                report.violation = Some(Violation {
                                    cell: (i, j),
                                    w: matrix_from_bits(dims, b0),
                                    w_prime: w,
                                    y: y0,
                                    y_prime: y[k],
                                });
                                return Ok(report);
                            }
                        }
                        None => {
                            first[k].insert(key_for(class, &w, i, j), (bits, y[k]));
                        }
                    }
                }
            }
        }
        return Ok(report);
    }
    for _ in 0..samples {
        let w = matrix_from_bits(dims, rng.gen_range(0..(1u32 << n)));
        let y = generator(&w);
        for i in 0..dims.i {
            for j in 0..dims.j {
                let wp = partner(class, &w, i, j, rng);
                debug_assert_eq!(key_for(class, &w, i, j), key_for(class, &wp, i, j));
                let yp = generator(&wp)[i * dims.j + j];
                report.pairs_checked += 1;
                if !tol(y[i * dims.j + j], yp) {
                    report.violation = Some(Violation { cell: (i, j), y: y[i * dims.j + j], y_prime: yp, w: w.clone(), w_prime: wp });
                    return Ok(report);
                }
            }
        }
    }
    Ok(report)
}
