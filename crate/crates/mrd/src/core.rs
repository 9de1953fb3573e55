//! Populations, assignment matrices, exposure types and consistency diagnostics.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{MrdError, Result};

/// Buyer and seller counts plus the number selected on each axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationDims {
    pub i: usize,
    pub j: usize,
    pub i_t: usize,
    pub j_t: usize,
}

impl PopulationDims {
    pub fn new(i: usize, j: usize, i_t: usize, j_t: usize) -> Result<Self> {
        let d = PopulationDims { i, j, i_t, j_t };
        d.validate()?;
        Ok(d)
    }

    /// Dimensions with no selection, for designs that do not use I_T/J_T.
    pub fn grid(i: usize, j: usize) -> Result<Self> {
        Self::new(i, j, 0, 0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.i == 0 || self.j == 0 {
            return Err(MrdError::Dimension(format!(
                "need I >= 1 and J >= 1, got I={} J={}",
                self.i, self.j
            )));
        }
        if self.i_t > self.i || self.j_t > self.j {
            return Err(MrdError::Dimension(format!(
                "selected counts exceed population: I_T={} I={} J_T={} J={}",
                self.i_t, self.i, self.j_t, self.j
            )));
        }
        Ok(())
    }

    pub fn i_c(&self) -> usize {
        self.i - self.i_t
    }

    pub fn j_c(&self) -> usize {
        self.j - self.j_t
    }

    pub fn cells(&self) -> usize {
        self.i * self.j
    }

    /// p^B = I_T / I.
    pub fn p_b(&self) -> f64 {
        self.i_t as f64 / self.i as f64
    }

    /// p^S = J_T / J.
    pub fn p_s(&self) -> f64 {
        self.j_t as f64 / self.j as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Cell {
    C,
    T,
}

impl Cell {
    pub fn from_bool(treated: bool) -> Self {
        if treated {
            Cell::T
        } else {
            Cell::C
        }
    }

    pub fn is_treated(self) -> bool {
        self == Cell::T
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "C" => Ok(Cell::C),
            "T" => Ok(Cell::T),
            other => Err(MrdError::Parameter(format!("cell must be C or T, got {other:?}"))),
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Cell::C => "C",
            Cell::T => "T",
        })
    }
}

/// Row-major I×J grid over {C, T}.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AssignmentMatrix {
    dims: PopulationDims,
    cells: Vec<Cell>,
}

impl AssignmentMatrix {
    pub fn new(dims: PopulationDims, cells: Vec<Cell>) -> Result<Self> {
        dims.validate()?;
        if cells.len() != dims.cells() {
            return Err(MrdError::Dimension(format!(
                "expected {} cells, got {}",
                dims.cells(),
                cells.len()
            )));
        }
        Ok(AssignmentMatrix { dims, cells })
    }

    pub fn filled(dims: PopulationDims, cell: Cell) -> Self {
        AssignmentMatrix { dims, cells: vec![cell; dims.cells()] }
    }

    pub fn from_fn(dims: PopulationDims, mut f: impl FnMut(usize, usize) -> Cell) -> Self {
        let mut cells = Vec::with_capacity(dims.cells());
        for i in 0..dims.i {
            for j in 0..dims.j {
                cells.push(f(i, j));
            }
        }
        AssignmentMatrix { dims, cells }
    }

    /// Parses rows of `C`/`T` characters, whitespace ignored. I_T and J_T are set to zero.
    pub fn parse_rows(rows: &[&str]) -> Result<Self> {
        let parsed: Vec<Vec<Cell>> = rows
            .iter()
            .map(|r| {
                r.chars()
                    .filter(|c| !c.is_whitespace() && *c != ',')
                    .map(|c| Cell::parse(&c.to_string()))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let j = parsed.first().map_or(0, Vec::len);
        if parsed.iter().any(|r| r.len() != j) {
            return Err(MrdError::Dimension("ragged rows".into()));
        }
        let dims = PopulationDims::grid(parsed.len(), j)?;
        AssignmentMatrix::new(dims, parsed.into_iter().flatten().collect())
    }

    pub fn dims(&self) -> PopulationDims {
        self.dims
    }

    pub fn get(&self, i: usize, j: usize) -> Cell {
        self.cells[i * self.dims.j + j]
    }

    pub fn set(&mut self, i: usize, j: usize, cell: Cell) {
        self.cells[i * self.dims.j + j] = cell;
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn treated_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_treated()).count()
    }

    pub fn row_treated(&self, i: usize) -> usize {
        self.cells[i * self.dims.j..(i + 1) * self.dims.j]
            .iter()
            .filter(|c| c.is_treated())
            .count()
    }

    pub fn col_treated(&self, j: usize) -> usize {
        (0..self.dims.i).filter(|&i| self.get(i, j).is_treated()).count()
    }

    pub fn complement(&self) -> Self {
        AssignmentMatrix {
            dims: self.dims,
            cells: self.cells.iter().map(|c| Cell::from_bool(!c.is_treated())).collect(),
        }
    }

    /// CSV with a header of seller indices and one row per buyer.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_grid_csv(w, self.dims, |i, j| self.get(i, j).to_string())
    }
}

impl fmt::Display for AssignmentMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.dims.i {
            for j in 0..self.dims.j {
                write!(f, "{}", self.get(i, j))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

fn write_grid_csv<W: Write>(
    w: W,
    dims: PopulationDims,
    cell: impl Fn(usize, usize) -> String,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["buyer".to_string()];
    header.extend((0..dims.j).map(|j| j.to_string()));
    wtr.write_record(&header)?;
    for i in 0..dims.i {
        let mut row = vec![i.to_string()];
        row.extend((0..dims.j).map(|j| cell(i, j)));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Exposure type of a cell. Declaration order is the canonical output order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExposureType {
    C,
    Ib,
    Is,
    T,
    Ibs,
}

impl ExposureType {
    pub const ALL: [ExposureType; 5] = [
        ExposureType::C,
        ExposureType::Ib,
        ExposureType::Is,
        ExposureType::T,
        ExposureType::Ibs,
    ];
    /// The four types of a simple MRD.
    pub const SMRD: [ExposureType; 4] =
        [ExposureType::C, ExposureType::Ib, ExposureType::Is, ExposureType::T];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ExposureType::C => "c",
            ExposureType::Ib => "ib",
            ExposureType::Is => "is",
            ExposureType::T => "t",
            ExposureType::Ibs => "ibs",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        ExposureType::ALL
            .into_iter()
            .find(|t| t.name() == s.trim())
            .ok_or_else(|| MrdError::Parameter(format!("unknown exposure type {s:?}")))
    }

    /// Whether the pair is treated.
    pub fn is_treated(self) -> bool {
        self == ExposureType::T
    }

    /// Swaps consistent control and treatment; ib and is keep their names
    /// because complementing preserves which side is inconsistent.
    pub fn complement(self) -> Self {
        match self {
            ExposureType::C => ExposureType::T,
            ExposureType::T => ExposureType::C,
            other => other,
        }
    }

    /// Side of the buyer randomization: true when the buyer label is 1 under
    /// the conjunctive rule.
    pub fn buyer_selected(self) -> bool {
        matches!(self, ExposureType::T | ExposureType::Ib)
    }

    pub fn seller_selected(self) -> bool {
        matches!(self, ExposureType::T | ExposureType::Is)
    }
}

impl fmt::Display for ExposureType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Row-major I×J grid of exposure types with per-type counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeMatrix {
    dims: PopulationDims,
    types: Vec<ExposureType>,
    counts: [usize; 5],
}

impl TypeMatrix {
    pub fn new(dims: PopulationDims, types: Vec<ExposureType>) -> Result<Self> {
        dims.validate()?;
        if types.len() != dims.cells() {
            return Err(MrdError::Dimension(format!(
                "expected {} cells, got {}",
                dims.cells(),
                types.len()
            )));
        }
        let mut counts = [0usize; 5];
        for t in &types {
            counts[t.index()] += 1;
        }
        Ok(TypeMatrix { dims, types, counts })
    }

    pub fn dims(&self) -> PopulationDims {
        self.dims
    }

    pub fn get(&self, i: usize, j: usize) -> ExposureType {
        self.types[i * self.dims.j + j]
    }

    pub fn types(&self) -> &[ExposureType] {
        &self.types
    }

    pub fn count(&self, ty: ExposureType) -> usize {
        self.counts[ty.index()]
    }

    pub fn counts(&self) -> [usize; 5] {
        self.counts
    }

    /// Types with at least one cell, in canonical order.
    pub fn present(&self) -> Vec<ExposureType> {
        ExposureType::ALL.into_iter().filter(|t| self.count(*t) > 0).collect()
    }

    /// Assignment implied by the types: only `t` cells are treated, except for
    /// disjunctive designs, which must supply their own matrix.
    pub fn conjunctive_assignment(&self) -> AssignmentMatrix {
        AssignmentMatrix {
            dims: self.dims,
            cells: self.types.iter().map(|t| Cell::from_bool(t.is_treated())).collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_grid_csv(w, self.dims, |i, j| self.get(i, j).name().to_string())
    }
}

/// Per-axis integer labels W^B_i and W^S_j.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AxisAssignments {
    pub buyer: Vec<i32>,
    pub seller: Vec<i32>,
}

impl AxisAssignments {
    pub fn new(buyer: Vec<i32>, seller: Vec<i32>) -> Self {
        AxisAssignments { buyer, seller }
    }

    fn check_binary(&self) -> Result<()> {
        let bad = |v: &[i32]| v.iter().position(|&x| x != 0 && x != 1);
        if let Some(p) = bad(&self.buyer) {
            return Err(MrdError::InvalidAxis(format!(
                "buyer {p} has label {}, expected 0 or 1",
                self.buyer[p]
            )));
        }
        if let Some(p) = bad(&self.seller) {
            return Err(MrdError::InvalidAxis(format!(
                "seller {p} has label {}, expected 0 or 1",
                self.seller[p]
            )));
        }
        if self.buyer.is_empty() || self.seller.is_empty() {
            return Err(MrdError::InvalidAxis("empty label vector".into()));
        }
        Ok(())
    }

    /// Dimensions implied by binary labels: I_T and J_T count the ones.
    pub fn dims(&self) -> Result<PopulationDims> {
        self.check_binary()?;
        PopulationDims::new(
            self.buyer.len(),
            self.seller.len(),
            self.buyer.iter().filter(|&&x| x == 1).count(),
            self.seller.iter().filter(|&&x| x == 1).count(),
        )
    }

    pub fn complement(&self) -> Self {
        AxisAssignments {
            buyer: self.buyer.iter().map(|x| 1 - x).collect(),
            seller: self.seller.iter().map(|x| 1 - x).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    /// Treated iff both labels are 1.
    Conjunctive,
    /// Control iff both labels are 0.
    Disjunctive,
}

/// Maps binary axis labels to exposure types.
///
/// Disjunctive designs are the complement of a conjunctive design on the
/// complemented labels, so their types are the complemented conjunctive types.
pub fn classify_cells(axis: &AxisAssignments, rule: Rule) -> Result<TypeMatrix> {
    let dims = axis.dims()?;
    let conj = |b: i32, s: i32| match (b, s) {
        (1, 1) => ExposureType::T,
        (1, 0) => ExposureType::Ib,
        (0, 1) => ExposureType::Is,
        _ => ExposureType::C,
    };
    let mut types = Vec::with_capacity(dims.cells());
    for &b in &axis.buyer {
        for &s in &axis.seller {
            types.push(match rule {
                Rule::Conjunctive => conj(b, s),
                Rule::Disjunctive => conj(1 - b, 1 - s).complement(),
            });
        }
    }
    TypeMatrix::new(dims, types)
}

/// Assignment matrix of a simple MRD under the given rule.
pub fn smrd_assignment(axis: &AxisAssignments, rule: Rule) -> Result<AssignmentMatrix> {
    let dims = axis.dims()?;
    Ok(AssignmentMatrix::from_fn(dims, |i, j| {
        let (b, s) = (axis.buyer[i] == 1, axis.seller[j] == 1);
        Cell::from_bool(match rule {
            Rule::Conjunctive => b && s,
            Rule::Disjunctive => b || s,
        })
    }))
}

pub type Fraction = Ratio<u64>;

/// Treated fractions per unit and the distinct values they take.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsistencyReport {
    pub buyer_fractions: Vec<Fraction>,
    pub seller_fractions: Vec<Fraction>,
    pub grand_fraction: Fraction,
    pub v_b: BTreeSet<Fraction>,
    pub v_s: BTreeSet<Fraction>,
}

impl ConsistencyReport {
    /// Buyers whose pairs are all treated or all control.
    pub fn consistent_buyers(&self) -> usize {
        self.buyer_fractions.iter().filter(|f| is_consistent(f)).count()
    }

    pub fn consistent_sellers(&self) -> usize {
        self.seller_fractions.iter().filter(|f| is_consistent(f)).count()
    }
}

fn is_consistent(f: &Fraction) -> bool {
    *f.numer() == 0 || f.numer() == f.denom()
}

pub fn consistency_report(w: &AssignmentMatrix) -> ConsistencyReport {
    let d = w.dims();
    let buyer_fractions: Vec<Fraction> =
        (0..d.i).map(|i| Fraction::new(w.row_treated(i) as u64, d.j as u64)).collect();
    let seller_fractions: Vec<Fraction> =
        (0..d.j).map(|j| Fraction::new(w.col_treated(j) as u64, d.i as u64)).collect();
    ConsistencyReport {
        grand_fraction: Fraction::new(w.treated_count() as u64, d.cells() as u64),
        v_b: buyer_fractions.iter().copied().collect(),
        v_s: seller_fractions.iter().copied().collect(),
        buyer_fractions,
        seller_fractions,
    }
}
