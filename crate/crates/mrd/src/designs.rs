//! Samplers for every design class: single-axis experiments, completely
//! randomized MRDs, simple and general MRDs, equilibrium, synergistic,
//! clustered and three-axis designs.
//!
//! All samplers take an explicit generator so that replicas are reproducible.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::core::{
    classify_cells, smrd_assignment, AssignmentMatrix, AxisAssignments, Cell, ExposureType,
    PopulationDims, Rule, TypeMatrix,
};
use crate::error::{MrdError, Result};

/// Generator used throughout. ChaCha is counter based, so independent
/// streams come from `set_stream` rather than from reseeding.
pub type DesignRng = ChaCha8Rng;

/// Stream `stream` of the generator seeded by `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> DesignRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform k-subset of n as 0/1 labels, by partial Fisher-Yates.
pub fn choose_labels<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Vec<i32> {
    let mut idx: Vec<usize> = (0..n).collect();
    let (chosen, _) = idx.partial_shuffle(rng, k);
    let mut labels = vec![0; n];
    for &c in chosen.iter() {
        labels[c] = 1;
    }
    labels
}

fn require_interior(what: &str, k: usize, n: usize) -> Result<()> {
    if k == 0 || k >= n {
        return Err(MrdError::Degenerate(format!(
            "{what}: need 0 < count < {n}, got {k}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Buyer,
    Seller,
}

/// Single randomized design: whole rows (buyer axis) or whole columns
/// (seller axis) are treated.
pub fn sample_srd<R: Rng + ?Sized>(
    dims: PopulationDims,
    axis: Axis,
    rng: &mut R,
) -> Result<AssignmentMatrix> {
    dims.validate()?;
    match axis {
        Axis::Buyer => {
            require_interior("buyer experiment I_T", dims.i_t, dims.i)?;
            let rows = choose_labels(dims.i, dims.i_t, rng);
            Ok(AssignmentMatrix::from_fn(dims, |i, _| Cell::from_bool(rows[i] == 1)))
        }
        Axis::Seller => {
            require_interior("seller experiment J_T", dims.j_t, dims.j)?;
            let cols = choose_labels(dims.j, dims.j_t, rng);
            Ok(AssignmentMatrix::from_fn(dims, |_, j| Cell::from_bool(cols[j] == 1)))
        }
    }
}

/// Default length of the swap chain used by [`sample_crmd`].
pub fn default_crmd_swaps(dims: PopulationDims) -> usize {
    50 * dims.cells()
}

/// Completely randomized MRD: every row has J_T treated cells and every
/// column I_T, which requires I_T/I = J_T/J.
///
/// Starts from a cyclic feasible matrix with rows and columns permuted, then
/// runs `swaps` checkerboard swaps. Uniform only in the chain limit.
pub fn sample_crmd<R: Rng + ?Sized>(
    dims: PopulationDims,
    swaps: Option<usize>,
    rng: &mut R,
) -> Result<AssignmentMatrix> {
    dims.validate()?;
    if dims.i_t * dims.j != dims.j_t * dims.i {
        return Err(MrdError::Infeasible(format!(
            "row fraction {}/{} differs from column fraction {}/{}",
            dims.j_t, dims.j, dims.i_t, dims.i
        )));
    }
    require_interior("completely randomized J_T", dims.j_t, dims.j)?;
    let (r, jn) = (dims.j_t, dims.j);
    let mut rows: Vec<usize> = (0..dims.i).collect();
    let mut cols: Vec<usize> = (0..dims.j).collect();
    rows.shuffle(rng);
    cols.shuffle(rng);
    // Row k treats columns k*r .. k*r+r (mod J); consecutive blocks give
    // every column exactly I*r/J = I_T treated cells.
    let mut w = AssignmentMatrix::filled(dims, Cell::C);
    for (k, &i) in rows.iter().enumerate() {
        for off in 0..r {
            w.set(i, cols[(k * r + off) % jn], Cell::T);
        }
    }
    let swaps = swaps.unwrap_or_else(|| default_crmd_swaps(dims));
    if dims.i < 2 || dims.j < 2 {
        return Ok(w);
    }
    for _ in 0..swaps {
        let i1 = rng.gen_range(0..dims.i);
        let i2 = rng.gen_range(0..dims.i);
        let j1 = rng.gen_range(0..dims.j);
        let j2 = rng.gen_range(0..dims.j);
        if i1 == i2 || j1 == j2 {
            continue;
        }
        let (a, b, c, d) = (w.get(i1, j1), w.get(i1, j2), w.get(i2, j1), w.get(i2, j2));
        if a == d && b == c && a != b {
            w.set(i1, j1, b);
            w.set(i1, j2, a);
            w.set(i2, j1, a);
            w.set(i2, j2, b);
        }
    }
    Ok(w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmrdDraw {
    pub axis: AxisAssignments,
    pub assignment: AssignmentMatrix,
    pub types: TypeMatrix,
}

/// Simple MRD: independent uniform I_T-subset of buyers and J_T-subset of sellers.
pub fn sample_smrd<R: Rng + ?Sized>(
    dims: PopulationDims,
    rule: Rule,
    rng: &mut R,
) -> Result<SmrdDraw> {
    dims.validate()?;
    require_interior("buyer I_T", dims.i_t, dims.i)?;
    require_interior("seller J_T", dims.j_t, dims.j)?;
    let axis = AxisAssignments::new(
        choose_labels(dims.i, dims.i_t, rng),
        choose_labels(dims.j, dims.j_t, rng),
    );
    Ok(SmrdDraw {
        assignment: smrd_assignment(&axis, rule)?,
        types: classify_cells(&axis, rule)?,
        axis,
    })
}

/// Maps a tuple of axis labels to a cell assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Combinator {
    /// Treated iff the labels sum to at least `threshold`.
    SumAtLeast { threshold: i32 },
    /// Treated iff every label equals `level`.
    AllEqual { level: i32 },
    /// Treated iff the product of the labels equals `value`.
    ProductEquals { value: i32 },
    /// Explicit lookup; combinations not listed are undefined.
    Table { entries: Vec<TableEntry> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableEntry {
    pub labels: Vec<i32>,
    pub cell: Cell,
}

impl Combinator {
    pub fn apply(&self, labels: &[i32]) -> Option<Cell> {
        match self {
            Combinator::SumAtLeast { threshold } => {
                Some(Cell::from_bool(labels.iter().sum::<i32>() >= *threshold))
            }
            Combinator::AllEqual { level } => Some(Cell::from_bool(labels.iter().all(|l| l == level))),
            Combinator::ProductEquals { value } => {
                Some(Cell::from_bool(labels.iter().product::<i32>() == *value))
            }
            Combinator::Table { entries } => {
                entries.iter().find(|e| e.labels == labels).map(|e| e.cell)
            }
        }
    }

    /// Checks that every combination of the given level sets is defined.
    pub fn check_total(&self, level_sets: &[Vec<i32>]) -> Result<()> {
        let mut tuple = vec![0; level_sets.len()];
        self.check_rec(level_sets, 0, &mut tuple)
    }

    fn check_rec(&self, sets: &[Vec<i32>], depth: usize, tuple: &mut Vec<i32>) -> Result<()> {
        if depth == sets.len() {
            if let Combinator::Table { entries } = self {
                if entries.iter().any(|e| e.labels.len() != sets.len()) {
                    return Err(MrdError::InvalidCombinator(format!(
                        "table entries must have {} labels",
                        sets.len()
                    )));
                }
            }
            return match self.apply(tuple) {
                Some(_) => Ok(()),
                None => Err(MrdError::InvalidCombinator(format!("undefined at labels {tuple:?}"))),
            };
        }
        for &l in &sets[depth] {
            tuple[depth] = l;
            self.check_rec(sets, depth + 1, tuple)?;
        }
        Ok(())
    }
}

/// How many units on one axis receive each level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelCount {
    pub level: i32,
    pub count: usize,
}

fn axis_size(levels: &[LevelCount]) -> usize {
    levels.iter().map(|l| l.count).sum()
}

fn level_set(levels: &[LevelCount]) -> Result<Vec<i32>> {
    let set: BTreeSet<i32> = levels.iter().map(|l| l.level).collect();
    if set.len() != levels.len() {
        return Err(MrdError::Parameter("duplicate level in level counts".into()));
    }
    if levels.iter().any(|l| l.count == 0) {
        return Err(MrdError::Parameter("every declared level needs a positive count".into()));
    }
    Ok(set.into_iter().collect())
}

/// Uniform permutation of the label multiset.
fn sample_levels<R: Rng + ?Sized>(levels: &[LevelCount], rng: &mut R) -> Vec<i32> {
    let mut labels: Vec<i32> =
        levels.iter().flat_map(|l| std::iter::repeat(l.level).take(l.count)).collect();
    labels.shuffle(rng);
    labels
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneralMrdSpec {
    pub buyer_levels: Vec<LevelCount>,
    pub seller_levels: Vec<LevelCount>,
    pub combinator: Combinator,
}

impl GeneralMrdSpec {
    pub fn dims(&self) -> Result<PopulationDims> {
        PopulationDims::grid(axis_size(&self.buyer_levels), axis_size(&self.seller_levels))
    }

    /// Validates levels and totality of f, and rejects designs whose treated
    /// share is 0 or 1 on every draw.
    pub fn validate(&self) -> Result<()> {
        self.dims()?;
        let lb = level_set(&self.buyer_levels)?;
        let ls = level_set(&self.seller_levels)?;
        self.combinator.check_total(&[lb, ls])?;
        let mut treated = 0;
        for b in &self.buyer_levels {
            for s in &self.seller_levels {
                if self.combinator.apply(&[b.level, s.level]) == Some(Cell::T) {
                    treated += b.count * s.count;
                }
            }
        }
        let total = self.dims()?.cells();
        if treated == 0 || treated == total {
            return Err(MrdError::Degenerate(format!(
                "combinator treats {treated} of {total} cells on every draw"
            )));
        }
        Ok(())
    }
}

/// W_ij = f(W^B_i, W^S_j) for fixed labels.
pub fn general_mrd_assignment(
    axis: &AxisAssignments,
    combinator: &Combinator,
) -> Result<AssignmentMatrix> {
    let dims = PopulationDims::grid(axis.buyer.len(), axis.seller.len())?;
    let mut cells = Vec::with_capacity(dims.cells());
    for &b in &axis.buyer {
        for &s in &axis.seller {
            cells.push(combinator.apply(&[b, s]).ok_or_else(|| {
                MrdError::InvalidCombinator(format!("undefined at labels [{b}, {s}]"))
            })?);
        }
    }
    AssignmentMatrix::new(dims, cells)
}

pub fn sample_general_mrd<R: Rng + ?Sized>(
    spec: &GeneralMrdSpec,
    rng: &mut R,
) -> Result<(AxisAssignments, AssignmentMatrix)> {
    spec.validate()?;
    let axis = AxisAssignments::new(
        sample_levels(&spec.buyer_levels, rng),
        sample_levels(&spec.seller_levels, rng),
    );
    let w = general_mrd_assignment(&axis, &spec.combinator)?;
    Ok((axis, w))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SellerGroup {
    /// Columns that follow the buyer experiment.
    B,
    /// Columns that follow the seller experiment.
    S,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquilibriumAxis {
    pub x_s: Vec<SellerGroup>,
    pub w_b: Vec<Cell>,
    /// Ignored for group-B sellers.
    pub w_s: Vec<Cell>,
}

/// Index set of a cell in the equilibrium design, named by
/// (buyer assignment, seller assignment; seller group).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ComparisonGroup {
    CcS,
    TcS,
    CtS,
    TtS,
    CB,
    TB,
}

impl ComparisonGroup {
    pub const ALL: [ComparisonGroup; 6] = [
        ComparisonGroup::CcS,
        ComparisonGroup::TcS,
        ComparisonGroup::CtS,
        ComparisonGroup::TtS,
        ComparisonGroup::CB,
        ComparisonGroup::TB,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ComparisonGroup::CcS => "CC;S",
            ComparisonGroup::TcS => "TC;S",
            ComparisonGroup::CtS => "CT;S",
            ComparisonGroup::TtS => "TT;S",
            ComparisonGroup::CB => "C•;B",
            ComparisonGroup::TB => "T•;B",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquilibriumSpec {
    pub buyers: usize,
    pub sellers: usize,
    /// Sellers placed in group B; the rest form group S.
    pub b_sellers: usize,
    pub treated_buyers: usize,
    /// Treated sellers within group S.
    pub treated_s_sellers: usize,
}

impl EquilibriumSpec {
    pub fn validate(&self) -> Result<()> {
        PopulationDims::grid(self.buyers, self.sellers)?;
        if self.b_sellers == 0 || self.b_sellers >= self.sellers {
            return Err(MrdError::InvalidSplit(format!(
                "group B has {} of {} sellers; both groups must be non-empty",
                self.b_sellers, self.sellers
            )));
        }
        let s = self.sellers - self.b_sellers;
        if self.treated_buyers == 0 || self.treated_buyers >= self.buyers {
            return Err(MrdError::InvalidSplit(format!(
                "buyer experiment treats {} of {} buyers",
                self.treated_buyers, self.buyers
            )));
        }
        if self.treated_s_sellers == 0 || self.treated_s_sellers >= s {
            return Err(MrdError::InvalidSplit(format!(
                "seller experiment treats {} of {} group-S sellers",
                self.treated_s_sellers, s
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumDraw {
    pub axis: EquilibriumAxis,
    pub assignment: AssignmentMatrix,
    pub groups: Vec<ComparisonGroup>,
}

/// Assignment and comparison labels implied by fixed equilibrium axes.
pub fn equilibrium_assignment(axis: &EquilibriumAxis) -> Result<EquilibriumDraw> {
    if axis.x_s.len() != axis.w_s.len() {
        return Err(MrdError::Dimension("x_s and w_s lengths differ".into()));
    }
    let dims = PopulationDims::grid(axis.w_b.len(), axis.x_s.len())?;
    let mut groups = Vec::with_capacity(dims.cells());
    let mut cells = Vec::with_capacity(dims.cells());
    for &wb in &axis.w_b {
        for (&x, &ws) in axis.x_s.iter().zip(&axis.w_s) {
            let (cell, g) = match (x, wb, ws) {
                (SellerGroup::B, Cell::C, _) => (Cell::C, ComparisonGroup::CB),
                (SellerGroup::B, Cell::T, _) => (Cell::T, ComparisonGroup::TB),
                (SellerGroup::S, Cell::C, Cell::C) => (Cell::C, ComparisonGroup::CcS),
                (SellerGroup::S, Cell::T, Cell::C) => (Cell::C, ComparisonGroup::TcS),
                (SellerGroup::S, Cell::C, Cell::T) => (Cell::T, ComparisonGroup::CtS),
                (SellerGroup::S, Cell::T, Cell::T) => (Cell::T, ComparisonGroup::TtS),
            };
            cells.push(cell);
            groups.push(g);
        }
    }
    Ok(EquilibriumDraw {
        axis: axis.clone(),
        assignment: AssignmentMatrix::new(dims, cells)?,
        groups,
    })
}

/// Splits sellers into groups B and S with fixed sizes, then runs a buyer
/// experiment on group B and a seller experiment on group S.
pub fn sample_equilibrium<R: Rng + ?Sized>(
    spec: &EquilibriumSpec,
    rng: &mut R,
) -> Result<EquilibriumDraw> {
    spec.validate()?;
    let in_b = choose_labels(spec.sellers, spec.b_sellers, rng);
    let s_members: Vec<usize> = (0..spec.sellers).filter(|&j| in_b[j] == 0).collect();
    let s_treated = choose_labels(s_members.len(), spec.treated_s_sellers, rng);
    let mut w_s = vec![Cell::C; spec.sellers];
    for (k, &j) in s_members.iter().enumerate() {
        w_s[j] = Cell::from_bool(s_treated[k] == 1);
    }
    let axis = EquilibriumAxis {
        x_s: in_b
            .iter()
            .map(|&b| if b == 1 { SellerGroup::B } else { SellerGroup::S })
            .collect(),
        w_b: choose_labels(spec.buyers, spec.treated_buyers, rng)
            .into_iter()
            .map(|l| Cell::from_bool(l == 1))
            .collect(),
        w_s,
    };
    equilibrium_assignment(&axis)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelTriple {
    pub minus: usize,
    pub zero: usize,
    pub plus: usize,
}

impl LevelTriple {
    fn total(&self) -> usize {
        self.minus + self.zero + self.plus
    }

    fn as_levels(&self) -> [LevelCount; 3] {
        [
            LevelCount { level: -1, count: self.minus },
            LevelCount { level: 0, count: self.zero },
            LevelCount { level: 1, count: self.plus },
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynergisticSpec {
    pub buyers: usize,
    pub sellers: usize,
    /// Probability that a buyer label is nonzero.
    pub pi: f64,
    /// Probability that a seller label is nonzero.
    pub q: f64,
    /// When set, labels are a uniform permutation of these counts instead of i.i.d.
    #[serde(default)]
    pub fixed_counts: Option<(LevelTriple, LevelTriple)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynergisticDraw {
    pub axis: AxisAssignments,
    pub assignment: AssignmentMatrix,
    pub types: TypeMatrix,
}

/// Exposure type under the three-level design; treated iff the product is 1.
pub fn synergistic_type(b: i32, s: i32) -> ExposureType {
    match (b, s) {
        (0, 0) => ExposureType::C,
        (_, 0) => ExposureType::Ib,
        (0, _) => ExposureType::Is,
        _ if b * s == 1 => ExposureType::T,
        _ => ExposureType::Ibs,
    }
}

pub fn synergistic_types(axis: &AxisAssignments) -> Result<TypeMatrix> {
    let dims = PopulationDims::grid(axis.buyer.len(), axis.seller.len())?;
    let valid = |v: &[i32]| v.iter().all(|x| (-1..=1).contains(x));
    if !valid(&axis.buyer) || !valid(&axis.seller) {
        return Err(MrdError::InvalidAxis("labels must lie in {-1, 0, 1}".into()));
    }
    let mut types = Vec::with_capacity(dims.cells());
    for &b in &axis.buyer {
        for &s in &axis.seller {
            types.push(synergistic_type(b, s));
        }
    }
    TypeMatrix::new(dims, types)
}

fn iid_three_level<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Vec<i32> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.gen();
            if u < p / 2.0 {
                -1
            } else if u < p {
                1
            } else {
                0
            }
        })
        .collect()
}

pub fn sample_synergistic<R: Rng + ?Sized>(
    spec: &SynergisticSpec,
    rng: &mut R,
) -> Result<SynergisticDraw> {
    PopulationDims::grid(spec.buyers, spec.sellers)?;
    for (name, p) in [("pi", spec.pi), ("q", spec.q)] {
        if !(p > 0.0 && p < 1.0) {
            return Err(MrdError::Parameter(format!("{name} must lie in (0, 1), got {p}")));
        }
    }
    let axis = match &spec.fixed_counts {
        None => AxisAssignments::new(
            iid_three_level(spec.buyers, spec.pi, rng),
            iid_three_level(spec.sellers, spec.q, rng),
        ),
        Some((b, s)) => {
            if b.total() != spec.buyers || s.total() != spec.sellers {
                return Err(MrdError::Parameter(
                    "fixed level counts must sum to the axis sizes".into(),
                ));
            }
            AxisAssignments::new(
                sample_levels(&b.as_levels(), rng),
                sample_levels(&s.as_levels(), rng),
            )
        }
    };
    let types = synergistic_types(&axis)?;
    Ok(SynergisticDraw { assignment: types.conjunctive_assignment(), types, axis })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterMap {
    pub cluster_of: Vec<usize>,
    pub num_clusters: usize,
}

impl ClusterMap {
    pub fn new(cluster_of: Vec<usize>, num_clusters: usize) -> Result<Self> {
        let m = ClusterMap { cluster_of, num_clusters };
        m.validate()?;
        Ok(m)
    }

    /// `num_clusters` consecutive blocks of `size` buyers.
    pub fn blocks(num_clusters: usize, size: usize) -> Result<Self> {
        Self::new((0..num_clusters * size).map(|i| i / size).collect(), num_clusters)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.num_clusters];
        for &c in &self.cluster_of {
            if c >= self.num_clusters {
                return Err(MrdError::Parameter(format!(
                    "cluster id {c} out of range 0..{}",
                    self.num_clusters
                )));
            }
            seen[c] = true;
        }
        if self.cluster_of.is_empty() || seen.iter().any(|s| !s) {
            return Err(MrdError::Parameter("every cluster must be non-empty".into()));
        }
        Ok(())
    }

    pub fn buyers(&self) -> usize {
        self.cluster_of.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterVariant {
    BuyerUnit,
    BuyerCluster,
    PerSellerCluster,
    MixedRandomization,
    MixedBuyerSeller,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusteredSpec {
    pub variant: ClusterVariant,
    pub clusters: ClusterMap,
    pub sellers: usize,
    /// Treated share of buyers (unit level) or clusters (cluster level).
    pub buyer_fraction: f64,
    /// Sellers in the cluster-randomized group (mixed randomization) or the
    /// buyer-experiment group (mixed buyer/seller).
    #[serde(default)]
    pub seller_split: usize,
    /// Treated sellers in the seller-experiment group (mixed buyer/seller).
    #[serde(default)]
    pub treated_sellers: usize,
}

/// Per-seller group label attached to mixed clustered designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SellerLabel {
    /// Cluster-randomized seller.
    Cluster,
    /// Unit-randomized seller.
    Unit,
    /// Seller following the buyer experiment.
    BuyerExperiment,
    /// Seller in the seller experiment.
    SellerExperiment,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteredDraw {
    pub assignment: AssignmentMatrix,
    pub seller_labels: Option<Vec<SellerLabel>>,
}

fn floor_count(what: &str, fraction: f64, n: usize) -> Result<usize> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(MrdError::Parameter(format!("{what} fraction {fraction} outside [0, 1]")));
    }
    let k = (fraction * n as f64).floor() as usize;
    if k == 0 || k >= n {
        return Err(MrdError::Infeasible(format!(
            "{what}: floor({fraction} * {n}) = {k} leaves one arm empty"
        )));
    }
    Ok(k)
}

impl ClusteredSpec {
    fn treated_clusters(&self) -> Result<usize> {
        floor_count("treated clusters", self.buyer_fraction, self.clusters.num_clusters)
    }

    fn treated_units(&self) -> Result<usize> {
        floor_count("treated buyers", self.buyer_fraction, self.clusters.buyers())
    }

    pub fn validate(&self) -> Result<()> {
        self.clusters.validate()?;
        PopulationDims::grid(self.clusters.buyers(), self.sellers)?;
        match self.variant {
            ClusterVariant::BuyerUnit => {
                self.treated_units()?;
            }
            ClusterVariant::BuyerCluster | ClusterVariant::PerSellerCluster => {
                self.treated_clusters()?;
            }
            ClusterVariant::MixedRandomization => {
                self.treated_clusters()?;
                self.treated_units()?;
                split_check(self.seller_split, self.sellers)?;
            }
            ClusterVariant::MixedBuyerSeller => {
                self.treated_clusters()?;
                split_check(self.seller_split, self.sellers)?;
                let s = self.sellers - self.seller_split;
                if self.treated_sellers == 0 || self.treated_sellers >= s {
                    return Err(MrdError::Infeasible(format!(
                        "seller experiment treats {} of {s} sellers",
                        self.treated_sellers
                    )));
                }
            }
        }
        Ok(())
    }
}

fn split_check(k: usize, n: usize) -> Result<()> {
    if k == 0 || k >= n {
        return Err(MrdError::InvalidSplit(format!(
            "seller split puts {k} of {n} sellers in the first group"
        )));
    }
    Ok(())
}

fn cluster_column<R: Rng + ?Sized>(spec: &ClusteredSpec, rng: &mut R) -> Result<Vec<bool>> {
    let chosen = choose_labels(spec.clusters.num_clusters, spec.treated_clusters()?, rng);
    Ok(spec.clusters.cluster_of.iter().map(|&c| chosen[c] == 1).collect())
}

fn unit_column<R: Rng + ?Sized>(spec: &ClusteredSpec, rng: &mut R) -> Result<Vec<bool>> {
    Ok(choose_labels(spec.clusters.buyers(), spec.treated_units()?, rng)
        .into_iter()
        .map(|l| l == 1)
        .collect())
}

fn columns_to_matrix(i: usize, cols: &[Vec<bool>]) -> Result<AssignmentMatrix> {
    let dims = PopulationDims::grid(i, cols.len())?;
    Ok(AssignmentMatrix::from_fn(dims, |r, c| Cell::from_bool(cols[c][r])))
}

pub fn sample_clustered<R: Rng + ?Sized>(
    spec: &ClusteredSpec,
    rng: &mut R,
) -> Result<ClusteredDraw> {
    spec.validate()?;
    let j = spec.sellers;
    let (cols, labels) = match spec.variant {
        ClusterVariant::BuyerUnit => (vec![unit_column(spec, rng)?; j], None),
        ClusterVariant::BuyerCluster => (vec![cluster_column(spec, rng)?; j], None),
        ClusterVariant::PerSellerCluster => {
            ((0..j).map(|_| cluster_column(spec, rng)).collect::<Result<Vec<_>>>()?, None)
        }
        ClusterVariant::MixedRandomization => {
            let in_c = choose_labels(j, spec.seller_split, rng);
            let mut cols = Vec::with_capacity(j);
            let mut labels = Vec::with_capacity(j);
            for &c in &in_c {
                if c == 1 {
                    cols.push(cluster_column(spec, rng)?);
                    labels.push(SellerLabel::Cluster);
                } else {
                    cols.push(unit_column(spec, rng)?);
                    labels.push(SellerLabel::Unit);
                }
            }
            (cols, Some(labels))
        }
        ClusterVariant::MixedBuyerSeller => {
            let in_b = choose_labels(j, spec.seller_split, rng);
            let buyer_col = cluster_column(spec, rng)?;
            let s_treated = choose_labels(j - spec.seller_split, spec.treated_sellers, rng);
            let i = spec.clusters.buyers();
            let mut s_pos = 0;
            let mut cols = Vec::with_capacity(j);
            let mut labels = Vec::with_capacity(j);
            for &b in &in_b {
                if b == 1 {
                    cols.push(buyer_col.clone());
                    labels.push(SellerLabel::BuyerExperiment);
                } else {
                    cols.push(vec![s_treated[s_pos] == 1; i]);
                    s_pos += 1;
                    labels.push(SellerLabel::SellerExperiment);
                }
            }
            (cols, Some(labels))
        }
    };
    Ok(ClusteredDraw {
        assignment: columns_to_matrix(spec.clusters.buyers(), &cols)?,
        seller_labels: labels,
    })
}

/// I×J×K grid over {C, T}, stored with k fastest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorAssignment {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    cells: Vec<Cell>,
}

impl TensorAssignment {
    pub fn get(&self, i: usize, j: usize, k: usize) -> Cell {
        self.cells[(i * self.j + j) * self.k + k]
    }

    pub fn treated_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_treated()).count()
    }

    /// The I×J matrix at a fixed third index.
    pub fn slice(&self, k: usize) -> AssignmentMatrix {
        let dims = PopulationDims { i: self.i, j: self.j, i_t: 0, j_t: 0 };
        AssignmentMatrix::from_fn(dims, |i, j| self.get(i, j, k))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorSpec {
    pub buyer_levels: Vec<LevelCount>,
    pub seller_levels: Vec<LevelCount>,
    pub third_levels: Vec<LevelCount>,
    pub combinator: Combinator,
}

pub fn sample_tensor<R: Rng + ?Sized>(
    spec: &TensorSpec,
    rng: &mut R,
) -> Result<(Vec<Vec<i32>>, TensorAssignment)> {
    let sets = [
        level_set(&spec.buyer_levels)?,
        level_set(&spec.seller_levels)?,
        level_set(&spec.third_levels)?,
    ];
    spec.combinator.check_total(&sets)?;
    let (i, j, k) = (
        axis_size(&spec.buyer_levels),
        axis_size(&spec.seller_levels),
        axis_size(&spec.third_levels),
    );
    let lb = sample_levels(&spec.buyer_levels, rng);
    let ls = sample_levels(&spec.seller_levels, rng);
    let lk = sample_levels(&spec.third_levels, rng);
    let mut cells = Vec::with_capacity(i * j * k);
    for &b in &lb {
        for &s in &ls {
            for &t in &lk {
                cells.push(spec.combinator.apply(&[b, s, t]).expect("checked total"));
            }
        }
    }
    Ok((vec![lb, ls, lk], TensorAssignment { i, j, k, cells }))
}

/// Declarative design description, read from JSON configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DesignSpec {
    BuyerSrd { dims: PopulationDims },
    SellerSrd { dims: PopulationDims },
    Crmd { dims: PopulationDims, #[serde(default)] swaps: Option<usize> },
    SmrdConjunctive { dims: PopulationDims },
    SmrdDisjunctive { dims: PopulationDims },
    GeneralMrd { spec: GeneralMrdSpec },
    Equilibrium { spec: EquilibriumSpec },
    Synergistic { spec: SynergisticSpec },
    Clustered { spec: ClusteredSpec },
    Tensor { spec: TensorSpec },
}

/// One draw from any design.
#[derive(Debug, Clone, PartialEq)]
pub enum Draw {
    Matrix(AssignmentMatrix),
    Smrd(SmrdDraw),
    General { axis: AxisAssignments, assignment: AssignmentMatrix },
    Equilibrium(EquilibriumDraw),
    Synergistic(SynergisticDraw),
    Clustered(ClusteredDraw),
    Tensor { labels: Vec<Vec<i32>>, tensor: TensorAssignment },
}

impl Draw {
    pub fn assignment(&self) -> Option<&AssignmentMatrix> {
        match self {
            Draw::Matrix(w) => Some(w),
            Draw::Smrd(d) => Some(&d.assignment),
            Draw::General { assignment, .. } => Some(assignment),
            Draw::Equilibrium(d) => Some(&d.assignment),
            Draw::Synergistic(d) => Some(&d.assignment),
            Draw::Clustered(d) => Some(&d.assignment),
            Draw::Tensor { .. } => None,
        }
    }

    pub fn types(&self) -> Option<&TypeMatrix> {
        match self {
            Draw::Smrd(d) => Some(&d.types),
            Draw::Synergistic(d) => Some(&d.types),
            _ => None,
        }
    }
}

impl DesignSpec {
    /// SMRD dimensions and rule, when the spec is a simple MRD.
    pub fn smrd(&self) -> Option<(PopulationDims, Rule)> {
        match self {
            DesignSpec::SmrdConjunctive { dims } => Some((*dims, Rule::Conjunctive)),
            DesignSpec::SmrdDisjunctive { dims } => Some((*dims, Rule::Disjunctive)),
            _ => None,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Draw> {
        Ok(match self {
            DesignSpec::BuyerSrd { dims } => Draw::Matrix(sample_srd(*dims, Axis::Buyer, rng)?),
            DesignSpec::SellerSrd { dims } => Draw::Matrix(sample_srd(*dims, Axis::Seller, rng)?),
            DesignSpec::Crmd { dims, swaps } => Draw::Matrix(sample_crmd(*dims, *swaps, rng)?),
            DesignSpec::SmrdConjunctive { dims } => {
                Draw::Smrd(sample_smrd(*dims, Rule::Conjunctive, rng)?)
            }
            DesignSpec::SmrdDisjunctive { dims } => {
                Draw::Smrd(sample_smrd(*dims, Rule::Disjunctive, rng)?)
            }
            DesignSpec::GeneralMrd { spec } => {
                let (axis, assignment) = sample_general_mrd(spec, rng)?;
                Draw::General { axis, assignment }
            }
            DesignSpec::Equilibrium { spec } => Draw::Equilibrium(sample_equilibrium(spec, rng)?),
            DesignSpec::Synergistic { spec } => Draw::Synergistic(sample_synergistic(spec, rng)?),
            DesignSpec::Clustered { spec } => Draw::Clustered(sample_clustered(spec, rng)?),
            DesignSpec::Tensor { spec } => {
                let (labels, tensor) = sample_tensor(spec, rng)?;
                Draw::Tensor { labels, tensor }
            }
        })
    }
}
