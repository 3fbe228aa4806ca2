//! Exact Pauli-string algebra, observable tables with their contexts,
//! noncontextual valuation search, parity certificates, and valuations read
//! off position (computational-basis) diagonals.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex;
use num_traits::{Float, One, Zero};
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::error::{invalid, Error, Result};
use crate::inference::{
    adjoint, apply_device, group_eigenvalues, hermitian_eigen, mat_vec, phase_fix, CMatrix,
    DiscreteDistribution, HermitianOperator, PointerDevice, StateVector,
};
use crate::scalar::Real;

/// Largest number of cells [`valuation_search`] enumerates.
pub const MAX_ENUMERATION_CELLS: usize = 20;

/// Largest qubit count turned into dense matrices.
pub const MAX_MATRIX_QUBITS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PauliLetter {
    I,
    X,
    Y,
    Z,
}

impl PauliLetter {
    pub fn from_char(c: char) -> Option<Self> {
        match c {
            'I' => Some(Self::I),
            'X' => Some(Self::X),
            'Y' => Some(Self::Y),
            'Z' => Some(Self::Z),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Self::I => 'I',
            Self::X => 'X',
            Self::Y => 'Y',
            Self::Z => 'Z',
        }
    }

    /// Single-qubit product `self · other = i^k · letter`.
    pub fn product(self, other: Self) -> (Phase, Self) {
        use PauliLetter::*;
        match (self, other) {
            (I, p) | (p, I) => (Phase::PLUS_ONE, p),
            (a, b) if a == b => (Phase::PLUS_ONE, I),
            (X, Y) => (Phase::PLUS_I, Z),
            (Y, Z) => (Phase::PLUS_I, X),
            (Z, X) => (Phase::PLUS_I, Y),
            (Y, X) => (Phase::MINUS_I, Z),
            (Z, Y) => (Phase::MINUS_I, X),
            (X, Z) => (Phase::MINUS_I, Y),
            _ => unreachable!("all letter pairs covered"),
        }
    }

    fn matrix<T: Real>(self) -> [Complex<T>; 4] {
        let o = Complex::<T>::one();
        let z = Complex::<T>::zero();
        let i = Complex::new(T::zero(), T::one());
        match self {
            Self::I => [o, z, z, o],
            Self::X => [z, o, o, z],
            Self::Y => [z, -i, i, z],
            Self::Z => [o, z, z, -o],
        }
    }
}

/// Global phase `i^k`, `k ∈ {0, 1, 2, 3}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct Phase(u8);

impl Phase {
    pub const PLUS_ONE: Phase = Phase(0);
    pub const PLUS_I: Phase = Phase(1);
    pub const MINUS_ONE: Phase = Phase(2);
    pub const MINUS_I: Phase = Phase(3);

    pub fn power(self) -> u8 {
        self.0
    }

    /// `Some(±1)` for real phases.
    pub fn sign(self) -> Option<i8> {
        match self.0 {
            0 => Some(1),
            2 => Some(-1),
            _ => None,
        }
    }

    pub fn to_complex<T: Real>(self) -> Complex<T> {
        let (o, z) = (T::one(), T::zero());
        match self.0 {
            0 => Complex::new(o, z),
            1 => Complex::new(z, o),
            2 => Complex::new(-o, z),
            _ => Complex::new(z, -o),
        }
    }

    fn prefix(self) -> &'static str {
        ["", "i", "-", "-i"][self.0 as usize]
    }
}

impl std::ops::Mul for Phase {
    type Output = Phase;

    fn mul(self, other: Phase) -> Phase {
        Phase((self.0 + other.0) % 4)
    }
}

/// Phase-tracked `N`-qubit Pauli word. The first letter acts on the most
/// significant qubit of the dense matrix.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PauliString {
    phase: Phase,
    letters: Vec<PauliLetter>,
}

impl PauliString {
    pub fn new(phase: Phase, letters: Vec<PauliLetter>) -> Result<Self> {
        if letters.is_empty() {
            return Err(invalid("pauli", "string needs at least one letter"));
        }
        Ok(Self { phase, letters })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            phase: Phase::PLUS_ONE,
            letters: vec![PauliLetter::I; n.max(1)],
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn letters(&self) -> &[PauliLetter] {
        &self.letters
    }

    pub fn n_qubits(&self) -> usize {
        self.letters.len()
    }

    pub fn is_identity_up_to_phase(&self) -> bool {
        self.letters.iter().all(|&l| l == PauliLetter::I)
    }

    /// `Some(±1)` when the string is `±I…I`.
    pub fn identity_sign(&self) -> Option<i8> {
        if self.is_identity_up_to_phase() {
            self.phase.sign()
        } else {
            None
        }
    }

    pub fn negated(&self) -> Self {
        Self {
            phase: self.phase * Phase::MINUS_ONE,
            letters: self.letters.clone(),
        }
    }

    /// Dense `2^N × 2^N` matrix.
    pub fn to_matrix<T: Real>(&self) -> Result<CMatrix<T>> {
        to_matrix(self)
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.phase.prefix())?;
        for l in &self.letters {
            write!(f, "{}", l.as_char())?;
        }
        Ok(())
    }
}

impl Serialize for PauliString {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl FromStr for PauliString {
    type Err = Error;

    /// Accepts an optional `+`/`-` followed by an optional `i`, then letters
    /// from `IXYZ`, e.g. `ZX`, `-YY`, `+iZ`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (negative, rest) = match s.strip_prefix('-') {
            Some(r) => (true, r),
            None => (false, s.strip_prefix('+').unwrap_or(s)),
        };
        let (imaginary, rest) = match rest.strip_prefix('i') {
            Some(r) => (true, r),
            None => (false, rest),
        };
        let letters = rest
            .chars()
            .map(|c| {
                PauliLetter::from_char(c).ok_or_else(|| {
                    invalid("pauli", format!("`{c}` in `{s}` is not one of I, X, Y, Z"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let phase = Phase(match (negative, imaginary) {
            (false, false) => 0,
            (false, true) => 1,
            (true, false) => 2,
            (true, true) => 3,
        });
        Self::new(phase, letters)
    }
}

fn check_lengths(p: &PauliString, q: &PauliString) -> Result<()> {
    if p.n_qubits() == q.n_qubits() {
        Ok(())
    } else {
        Err(Error::PauliLength {
            left: p.n_qubits(),
            right: q.n_qubits(),
        })
    }
}

/// Exact product `P · Q`.
pub fn pauli_mul(p: &PauliString, q: &PauliString) -> Result<PauliString> {
    check_lengths(p, q)?;
    let mut phase = p.phase * q.phase;
    let letters = p
        .letters
        .iter()
        .zip(&q.letters)
        .map(|(&a, &b)| {
            let (ph, l) = a.product(b);
            phase = phase * ph;
            l
        })
        .collect();
    Ok(PauliString { phase, letters })
}

/// `P` and `Q` commute iff they carry distinct non-identity letters at an
/// even number of positions.
pub fn pauli_commutes(p: &PauliString, q: &PauliString) -> Result<bool> {
    check_lengths(p, q)?;
    let clashes = p
        .letters
        .iter()
        .zip(&q.letters)
        .filter(|(&a, &b)| a != PauliLetter::I && b != PauliLetter::I && a != b)
        .count();
    Ok(clashes % 2 == 0)
}

/// Dense matrix of a Pauli string (Kronecker product, leftmost letter
/// outermost, times the phase).
pub fn to_matrix<T: Real>(p: &PauliString) -> Result<CMatrix<T>> {
    if p.n_qubits() > MAX_MATRIX_QUBITS {
        return Err(invalid(
            "pauli",
            format!(
                "{} qubits exceed the dense limit of {MAX_MATRIX_QUBITS}",
                p.n_qubits()
            ),
        ));
    }
    let mut m = CMatrix::<T>::from_element(1, 1, p.phase.to_complex());
    for l in &p.letters {
        let single = DMatrix::from_row_slice(2, 2, &l.matrix::<T>());
        m = m.kronecker(&single);
    }
    Ok(m)
}

/// A commuting set of table cells, given as `(row, column)` positions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Context {
    pub name: String,
    pub cells: Vec<(usize, usize)>,
}

/// Which contexts a grid declares by default.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContextLayout {
    Rows,
    Columns,
    RowsAndColumns,
}

/// `r × c` grid of Pauli observables with its contexts.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ObservableTable {
    rows: usize,
    cols: usize,
    entries: Vec<PauliString>,
    contexts: Vec<Context>,
}

impl ObservableTable {
    /// Validates that the entries share a qubit count and are Hermitian, and
    /// that every context commutes and multiplies to `±I`.
    pub fn new(grid: Vec<Vec<PauliString>>, contexts: Vec<Context>) -> Result<Self> {
        let rows = grid.len();
        let cols = grid.first().map_or(0, Vec::len);
        if rows == 0 || cols == 0 {
            return Err(invalid("table", "grid must be nonempty"));
        }
        if grid.iter().any(|r| r.len() != cols) {
            return Err(invalid("table", "rows must all have the same length"));
        }
        let entries: Vec<PauliString> = grid.into_iter().flatten().collect();
        for e in &entries {
            check_lengths(&entries[0], e)?;
            if e.phase.sign().is_none() {
                return Err(invalid("table", format!("entry `{e}` is not Hermitian")));
            }
        }
        if contexts.is_empty() {
            return Err(invalid("contexts", "table needs at least one context"));
        }
        for c in &contexts {
            if c.cells.is_empty() {
                return Err(invalid(
                    "contexts",
                    format!("context `{}` is empty", c.name),
                ));
            }
            for (k, &(r, col)) in c.cells.iter().enumerate() {
                if r >= rows || col >= cols {
                    return Err(Error::IndexOutOfRange {
                        index: r * cols + col,
                        size: rows * cols,
                    });
                }
                if c.cells[..k].contains(&(r, col)) {
                    return Err(invalid(
                        "contexts",
                        format!("context `{}` repeats cell ({r}, {col})", c.name),
                    ));
                }
            }
        }
        let table = Self {
            rows,
            cols,
            entries,
            contexts,
        };
        for (ci, c) in table.contexts.iter().enumerate() {
            for (k, &a) in c.cells.iter().enumerate() {
                for &b in &c.cells[k + 1..] {
                    if !pauli_commutes(table.entry(a.0, a.1), table.entry(b.0, b.1))? {
                        return Err(Error::NonCommutingContext { context: ci });
                    }
                }
            }
            if table.context_product(ci)?.identity_sign().is_none() {
                return Err(Error::ContextProductNotIdentity { context: ci });
            }
        }
        Ok(table)
    }

    /// Grid with its rows and/or columns as contexts.
    pub fn with_layout(grid: Vec<Vec<PauliString>>, layout: ContextLayout) -> Result<Self> {
        let rows = grid.len();
        let cols = grid.first().map_or(0, Vec::len);
        Self::new(grid, layout_contexts(rows, cols, layout))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn n_cells(&self) -> usize {
        self.entries.len()
    }

    pub fn n_qubits(&self) -> usize {
        self.entries[0].n_qubits()
    }

    pub fn entry(&self, row: usize, col: usize) -> &PauliString {
        &self.entries[row * self.cols + col]
    }

    pub fn entries(&self) -> &[PauliString] {
        &self.entries
    }

    pub fn contexts(&self) -> &[Context] {
        &self.contexts
    }

    fn cell_index(&self, (r, c): (usize, usize)) -> usize {
        r * self.cols + c
    }

    /// Left-to-right product of a context's members.
    pub fn context_product(&self, context: usize) -> Result<PauliString> {
        let c = self.contexts.get(context).ok_or(Error::IndexOutOfRange {
            index: context,
            size: self.contexts.len(),
        })?;
        let mut acc = PauliString::identity(self.n_qubits());
        for &(r, col) in &c.cells {
            acc = pauli_mul(&acc, self.entry(r, col))?;
        }
        Ok(acc)
    }

    /// Number of contexts each cell belongs to, row-major.
    pub fn membership(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_cells()];
        for c in &self.contexts {
            for &cell in &c.cells {
                counts[self.cell_index(cell)] += 1;
            }
        }
        counts
    }

    /// Same grid with one context removed, skipping validation of the rest.
    pub fn without_context(&self, context: usize) -> Result<Self> {
        if context >= self.contexts.len() {
            return Err(Error::IndexOutOfRange {
                index: context,
                size: self.contexts.len(),
            });
        }
        let mut t = self.clone();
        t.contexts.remove(context);
        Ok(t)
    }
}

fn layout_contexts(rows: usize, cols: usize, layout: ContextLayout) -> Vec<Context> {
    let mut out = Vec::new();
    if matches!(layout, ContextLayout::Rows | ContextLayout::RowsAndColumns) {
        for r in 0..rows {
            out.push(Context {
                name: format!("row {}", r + 1),
                cells: (0..cols).map(|c| (r, c)).collect(),
            });
        }
    }
    if matches!(
        layout,
        ContextLayout::Columns | ContextLayout::RowsAndColumns
    ) {
        for c in 0..cols {
            out.push(Context {
                name: format!("column {}", c + 1),
                cells: (0..rows).map(|r| (r, c)).collect(),
            });
        }
    }
    out
}

fn pauli_grid(rows: &[&[&str]]) -> Vec<Vec<PauliString>> {
    rows.iter()
        .map(|r| {
            r.iter()
                .map(|s| s.parse().expect("valid literal"))
                .collect()
        })
        .collect()
}

/// The Peres-Mermin square with its three rows and three columns as
/// contexts:
///
/// ```text
/// ZI IX ZX
/// IZ XI XZ
/// ZZ XX YY
/// ```
pub fn mermin_square() -> ObservableTable {
    let grid = pauli_grid(&[
        &["ZI", "IX", "ZX"],
        &["IZ", "XI", "XZ"],
        &["ZZ", "XX", "YY"],
    ]);
    ObservableTable::with_layout(grid, ContextLayout::RowsAndColumns).expect("valid square")
}

/// Parses the plain-text table format.
///
/// One row per line, cells separated by whitespace, each cell a Pauli string
/// with an optional leading `+` or `-`. Blank lines and lines starting with
/// `#` are ignored. Directives choose the contexts:
///
/// ```text
/// @contexts rows|columns|rows+columns
/// @context r,c r,c …        (zero-based cells; may repeat)
/// ```
///
/// Without any directive the rows and columns are the contexts. Explicit
/// `@context` lines are appended after a layout directive.
pub fn parse_table(text: &str) -> Result<ObservableTable> {
    let mut grid: Vec<Vec<PauliString>> = Vec::new();
    let mut layout: Option<ContextLayout> = None;
    let mut explicit: Vec<(usize, Vec<(usize, usize)>)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        if let Some(rest) = line.strip_prefix("@contexts") {
            layout = Some(match rest.trim() {
                "rows" => ContextLayout::Rows,
                "columns" => ContextLayout::Columns,
                "rows+columns" => ContextLayout::RowsAndColumns,
                other => return Err(parse_err(format!("unknown context layout `{other}`"))),
            });
        } else if let Some(rest) = line.strip_prefix("@context") {
            let cells = rest
                .split_whitespace()
                .map(|tok| {
                    let (r, c) = tok
                        .split_once(',')
                        .ok_or_else(|| parse_err(format!("cell `{tok}` is not `row,col`")))?;
                    let r = r
                        .trim()
                        .parse::<usize>()
                        .map_err(|e| parse_err(format!("{tok}: {e}")))?;
                    let c = c
                        .trim()
                        .parse::<usize>()
                        .map_err(|e| parse_err(format!("{tok}: {e}")))?;
                    Ok((r, c))
                })
                .collect::<Result<Vec<_>>>()?;
            if cells.is_empty() {
                return Err(parse_err("empty @context".into()));
            }
            explicit.push((line_no, cells));
        } else if line.starts_with('@') {
            return Err(parse_err(format!("unknown directive `{line}`")));
        } else {
            let row = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<PauliString>()
                        .map_err(|e| parse_err(e.to_string()))
                })
                .collect::<Result<Vec<_>>>()?;
            if !explicit.is_empty() {
                return Err(parse_err("grid rows must precede @context lines".into()));
            }
            grid.push(row);
        }
    }
    if grid.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: "no table rows".into(),
        });
    }
    let rows = grid.len();
    let cols = grid[0].len();
    let mut contexts = match (layout, explicit.is_empty()) {
        (Some(l), _) => layout_contexts(rows, cols, l),
        (None, true) => layout_contexts(rows, cols, ContextLayout::RowsAndColumns),
        (None, false) => Vec::new(),
    };
    for (k, (_, cells)) in explicit.into_iter().enumerate() {
        contexts.push(Context {
            name: format!("context {}", k + 1),
            cells,
        });
    }
    ObservableTable::new(grid, contexts)
}

/// Writes a table in the format read by [`parse_table`].
pub fn format_table(table: &ObservableTable) -> String {
    let mut out = String::new();
    for r in 0..table.rows {
        let row: Vec<String> = (0..table.cols)
            .map(|c| table.entry(r, c).to_string())
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    for c in &table.contexts {
        let cells: Vec<String> = c
            .cells
            .iter()
            .map(|(r, col)| format!("{r},{col}"))
            .collect();
        out.push_str(&format!("@context {}\n", cells.join(" ")));
    }
    out
}

/// Product of one context.
#[derive(Clone, Debug, Serialize)]
pub struct ContextProduct {
    pub context: String,
    pub product: PauliString,
    pub sign: i8,
}

/// Products of every context and their overall sign.
#[derive(Clone, Debug, Serialize)]
pub struct ContextProductReport {
    pub products: Vec<ContextProduct>,
    /// Indices of the contexts whose product is `-I`.
    pub negative_contexts: Vec<usize>,
    /// Product of all context products.
    pub grand_product: PauliString,
    pub grand_sign: i8,
}

/// Ordered product of every context.
pub fn context_products(table: &ObservableTable) -> Result<ContextProductReport> {
    let mut products = Vec::with_capacity(table.contexts.len());
    let mut grand = PauliString::identity(table.n_qubits());
    for (i, c) in table.contexts.iter().enumerate() {
        let product = table.context_product(i)?;
        let sign = product
            .identity_sign()
            .ok_or(Error::ContextProductNotIdentity { context: i })?;
        grand = pauli_mul(&grand, &product)?;
        products.push(ContextProduct {
            context: c.name.clone(),
            product,
            sign,
        });
    }
    let negative_contexts = products
        .iter()
        .enumerate()
        .filter(|(_, p)| p.sign < 0)
        .map(|(i, _)| i)
        .collect();
    let grand_sign = grand.identity_sign().expect("product of signed identities");
    Ok(ContextProductReport {
        products,
        negative_contexts,
        grand_product: grand,
        grand_sign,
    })
}

/// Assignment of `±1` to every cell, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Valuation {
    rows: usize,
    cols: usize,
    values: Vec<i8>,
}

impl Valuation {
    /// Bit `k` of `mask` set means cell `k` (row-major) takes `-1`.
    pub fn from_mask(rows: usize, cols: usize, mask: u32) -> Self {
        let values = (0..rows * cols)
            .map(|k| if mask >> k & 1 == 1 { -1 } else { 1 })
            .collect();
        Self { rows, cols, values }
    }

    pub fn get(&self, row: usize, col: usize) -> i8 {
        self.values[row * self.cols + col]
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    /// `v(context product) = Π v(member)` for every context.
    pub fn satisfies(&self, table: &ObservableTable) -> Result<bool> {
        for (i, c) in table.contexts.iter().enumerate() {
            let sign = table
                .context_product(i)?
                .identity_sign()
                .ok_or(Error::ContextProductNotIdentity { context: i })?;
            let prod: i8 = c.cells.iter().map(|&(r, col)| self.get(r, col)).product();
            if prod != sign {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

impl Serialize for Valuation {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let grid: Vec<&[i8]> = self.values.chunks(self.cols).collect();
        grid.serialize(s)
    }
}

/// Count of satisfying valuations once one context is ignored.
#[derive(Clone, Debug, Serialize)]
pub struct Relaxation {
    pub dropped_context: String,
    pub satisfying: u64,
}

/// Exhaustive search over all `2^cells` valuations.
#[derive(Clone, Debug, Serialize)]
pub struct ValuationSearchReport {
    pub cells: usize,
    pub assignments: u64,
    pub satisfying: Vec<Valuation>,
    pub relaxations: Vec<Relaxation>,
}

impl ValuationSearchReport {
    pub fn n_satisfying(&self) -> usize {
        self.satisfying.len()
    }
}

/// Enumerates every `±1` valuation and keeps those that respect
/// `v(Π A) = Π v(A)` on all contexts. Also counts, for each context, the
/// valuations that satisfy all the others.
pub fn valuation_search(table: &ObservableTable) -> Result<ValuationSearchReport> {
    let cells = table.n_cells();
    if cells > MAX_ENUMERATION_CELLS {
        return Err(Error::EnumerationBound {
            cells,
            max: MAX_ENUMERATION_CELLS,
        });
    }
    let products = context_products(table)?;
    let constraints: Vec<(u32, u32)> = table
        .contexts
        .iter()
        .zip(&products.products)
        .map(|(c, p)| {
            let mask = c
                .cells
                .iter()
                .fold(0u32, |m, &cell| m | 1 << table.cell_index(cell));
            (mask, u32::from(p.sign < 0))
        })
        .collect();
    let n_ctx = constraints.len();
    let total: u32 = 1 << cells;

    const CHUNK: u32 = 1 << 12;
    let chunks: Vec<(Vec<u32>, Vec<u64>)> = (0..total.div_ceil(CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut found = Vec::new();
            let mut relaxed = vec![0u64; n_ctx];
            let start = chunk * CHUNK;
            let end = (start + CHUNK).min(total);
            for mask in start..end {
                let mut violated = 0usize;
                let mut which = 0usize;
                for (k, &(cmask, parity)) in constraints.iter().enumerate() {
                    if (mask & cmask).count_ones() & 1 != parity {
                        violated += 1;
                        which = k;
                        if violated > 1 {
                            break;
                        }
                    }
                }
                match violated {
                    0 => {
                        found.push(mask);
                        relaxed.iter_mut().for_each(|r| *r += 1);
                    }
                    1 => relaxed[which] += 1,
                    _ => {}
                }
            }
            (found, relaxed)
        })
        .collect();

    let mut satisfying = Vec::new();
    let mut relaxed = vec![0u64; n_ctx];
    for (found, counts) in chunks {
        satisfying.extend(
            found
                .into_iter()
                .map(|m| Valuation::from_mask(table.rows, table.cols, m)),
        );
        relaxed.iter_mut().zip(counts).for_each(|(a, b)| *a += b);
    }
    let relaxations = table
        .contexts
        .iter()
        .zip(relaxed)
        .map(|(c, satisfying)| Relaxation {
            dropped_context: c.name.clone(),
            satisfying,
        })
        .collect();
    Ok(ValuationSearchReport {
        cells,
        assignments: u64::from(total),
        satisfying,
        relaxations,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Contradiction,
    Consistent,
}

/// Sign-counting argument: the product of all context valuations must equal
/// both the product of context signs and `Π v(A)^{multiplicity}`, which is
/// `+1` when every cell sits in an even number of contexts.
#[derive(Clone, Debug, Serialize)]
pub struct ParityCertificate {
    pub sign_product: i8,
    pub forced_product: i8,
    pub verdict: Verdict,
    pub negative_contexts: Vec<String>,
}

pub fn parity_certificate(table: &ObservableTable) -> Result<ParityCertificate> {
    for (k, &count) in table.membership().iter().enumerate() {
        if count % 2 != 0 {
            return Err(Error::NotParityProof {
                row: k / table.cols,
                col: k % table.cols,
                count,
            });
        }
    }
    let products = context_products(table)?;
    let negative_contexts = products
        .negative_contexts
        .iter()
        .map(|&i| products.products[i].context.clone())
        .collect();
    let sign_product = products.grand_sign;
    Ok(ParityCertificate {
        sign_product,
        forced_product: 1,
        verdict: if sign_product < 0 {
            Verdict::Contradiction
        } else {
            Verdict::Consistent
        },
        negative_contexts,
    })
}

/// `v_x(A) = ⟨x₀|A|x₀⟩`.
pub fn position_valuation<T: Real>(op: &HermitianOperator<T>, x0: usize) -> Result<T> {
    matrix_diagonal(op.matrix(), x0)
}

fn matrix_diagonal<T: Real>(m: &CMatrix<T>, x0: usize) -> Result<T> {
    if x0 >= m.nrows() {
        return Err(Error::IndexOutOfRange {
            index: x0,
            size: m.nrows(),
        });
    }
    Ok(m[(x0, x0)].re)
}

/// Position valuation of one context compared with its members.
#[derive(Clone, Debug, Serialize)]
pub struct ContextValuation<T> {
    pub context: String,
    /// `v_x` of the context product.
    pub value: T,
    /// `Π_j v_x(member_j)`.
    pub member_product: T,
    pub holds: bool,
}

/// Position valuations of a table at one basis state.
#[derive(Clone, Debug, Serialize)]
pub struct PositionValuationReport<T> {
    pub x0: usize,
    /// Row-major `v_x(A^{ij})`.
    pub cell_values: Vec<T>,
    pub contexts: Vec<ContextValuation<T>>,
    /// Names of the contexts where the product relation fails.
    pub violations: Vec<String>,
    /// `Π_contexts v_x(context product)`.
    pub context_grand_product: T,
    /// `Π_contexts Π_members v_x(member)`.
    pub member_grand_product: T,
    /// `Π_ij v_x(A^{ij})²`.
    pub squares_product: T,
    pub squares_nonnegative: bool,
    /// True when some context violates `v(Π A) = Π v(A)`.
    pub relation_fails: bool,
}

/// Reads every cell and every context product off the diagonal at `x0`
/// and checks the product relation context by context.
pub fn hybrid_check<T: Real>(
    table: &ObservableTable,
    x0: usize,
) -> Result<PositionValuationReport<T>> {
    if table.n_qubits() > MAX_MATRIX_QUBITS {
        return Err(invalid("table", "too many qubits for dense matrices"));
    }
    let dim = 1usize << table.n_qubits();
    if x0 >= dim {
        return Err(Error::IndexOutOfRange {
            index: x0,
            size: dim,
        });
    }
    let cell_values = table
        .entries
        .iter()
        .map(|p| matrix_diagonal(&to_matrix::<T>(p)?, x0))
        .collect::<Result<Vec<T>>>()?;
    let tol = T::tol(1e-12);
    let mut contexts = Vec::with_capacity(table.contexts.len());
    let mut violations = Vec::new();
    let mut context_grand = T::one();
    let mut member_grand = T::one();
    for (i, c) in table.contexts.iter().enumerate() {
        let product = to_matrix::<T>(&table.context_product(i)?)?;
        let value = matrix_diagonal(&product, x0)?;
        let member_product: T = c
            .cells
            .iter()
            .map(|&cell| cell_values[table.cell_index(cell)])
            .fold(T::one(), |a, b| a * b);
        let holds = Float::abs(value - member_product) <= tol;
        if !holds {
            violations.push(c.name.clone());
        }
        context_grand *= value;
        member_grand *= member_product;
        contexts.push(ContextValuation {
            context: c.name.clone(),
            value,
            member_product,
            holds,
        });
    }
    let squares_product = cell_values.iter().fold(T::one(), |a, &v| a * v * v);
    Ok(PositionValuationReport {
        x0,
        cell_values,
        contexts,
        relation_fails: !violations.is_empty(),
        violations,
        context_grand_product: context_grand,
        member_grand_product: member_grand,
        squares_nonnegative: squares_product >= T::zero(),
        squares_product,
    })
}

/// Pointer read-out of one context's joint eigenbasis.
#[derive(Clone, Debug, Serialize)]
pub struct ContextSelectionReport<T: Real> {
    pub context: String,
    pub members: Vec<PauliString>,
    /// Joint eigenvalues `(±1, …)` of each pointer cell, one per member.
    pub joint_eigenvalues: Vec<Vec<i8>>,
    pub distribution: DiscreteDistribution<String, T>,
    #[serde(skip)]
    pub device: PointerDevice<T>,
}

/// Common eigenbasis of commuting Hermitian matrices by sequential
/// eigenspace refinement. Returns the basis (as columns) and, per column,
/// the eigenvalue of every matrix.
pub fn joint_eigenbasis<T: Real>(matrices: &[CMatrix<T>]) -> Result<(CMatrix<T>, Vec<Vec<T>>)> {
    let dim = matrices
        .first()
        .map(|m| m.nrows())
        .ok_or_else(|| invalid("matrices", "need at least one matrix"))?;
    // Each block is a set of orthonormal columns spanning a joint eigenspace.
    let mut blocks: Vec<(CMatrix<T>, Vec<T>)> = vec![(CMatrix::identity(dim, dim), Vec::new())];
    for m in matrices {
        let mut next = Vec::new();
        for (q, labels) in blocks {
            let restricted = adjoint(&q) * m * &q;
            let eigen = hermitian_eigen(&restricted);
            for (value, members) in group_eigenvalues(&eigen.values) {
                let cols: Vec<Vec<Complex<T>>> = members
                    .iter()
                    .map(|&j| {
                        let v: Vec<Complex<T>> = eigen.vectors.column(j).iter().copied().collect();
                        mat_vec(&q, &v)
                    })
                    .collect();
                let sub = CMatrix::from_fn(dim, cols.len(), |i, j| cols[j][i]);
                let mut l = labels.clone();
                l.push(value);
                next.push((sub, l));
            }
        }
        blocks = next;
    }
    let mut columns = Vec::with_capacity(dim);
    let mut labels = Vec::with_capacity(dim);
    for (q, l) in blocks {
        for j in 0..q.ncols() {
            let mut v: Vec<Complex<T>> = q.column(j).iter().copied().collect();
            phase_fix(&mut v);
            columns.push(v);
            labels.push(l.clone());
        }
    }
    let basis = CMatrix::from_fn(dim, dim, |i, j| columns[j][i]);
    Ok((basis, labels))
}

/// Builds the pointer device for context `context` of `table` and reads the
/// state through it. Cells are named by their joint eigenvalues, e.g.
/// `+1,-1,-1`, with `#k` appended when a joint eigenspace is degenerate.
pub fn context_selection_pipeline<T: Real>(
    state: &StateVector<T>,
    table: &ObservableTable,
    context: usize,
) -> Result<ContextSelectionReport<T>> {
    let c = table.contexts.get(context).ok_or(Error::IndexOutOfRange {
        index: context,
        size: table.contexts.len(),
    })?;
    let members: Vec<PauliString> = c
        .cells
        .iter()
        .map(|&(r, col)| table.entry(r, col).clone())
        .collect();
    for (k, a) in members.iter().enumerate() {
        for b in &members[k + 1..] {
            if !pauli_commutes(a, b)? {
                return Err(Error::NonCommutingContext { context });
            }
        }
    }
    let matrices = members
        .iter()
        .map(to_matrix::<T>)
        .collect::<Result<Vec<_>>>()?;
    if matrices[0].nrows() != state.dim() {
        return Err(Error::DimensionMismatch {
            expected: matrices[0].nrows(),
            found: state.dim(),
        });
    }
    let (basis, values) = joint_eigenbasis(&matrices)?;
    let joint_eigenvalues: Vec<Vec<i8>> = values
        .iter()
        .map(|vs| {
            vs.iter()
                .map(|&v| if v < T::zero() { -1 } else { 1 })
                .collect()
        })
        .collect();
    let base_names: Vec<String> = joint_eigenvalues
        .iter()
        .map(|vs| {
            vs.iter()
                .map(|&v| if v < 0 { "-1" } else { "+1" })
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect();
    let cells: Vec<String> = base_names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let repeats = base_names.iter().filter(|n| *n == name).count();
            if repeats > 1 {
                let k = base_names[..i].iter().filter(|n| *n == name).count();
                format!("{name}#{k}")
            } else {
                name.clone()
            }
        })
        .collect();
    let device = PointerDevice::new(basis, cells)?;
    let distribution = apply_device(state, &device)?;
    Ok(ContextSelectionReport {
        context: c.name.clone(),
        members,
        joint_eigenvalues,
        distribution,
        device,
    })
}
