//! Normalized one- and two-qubit Pauli generators and weight-graded Pauli
//! expansions.
//!
//! Qubit 1 is the leftmost tensor factor, i.e. the most significant bit of a
//! computational-basis index. Every stored generator carries the `1/sqrt(N)`
//! factor so that `Tr(tau_a tau_b) = delta_ab`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{hermiticity_error, trace, CMatrix, C64, I, ONE, ZERO};

/// Version tag of the generator ordering. Bump when the ordering changes so
/// saved fields are never read against the wrong basis.
pub const BASIS_ORDERING_VERSION: &str = "weight-lex-v1";

/// Default largest qubit count for the full `4^n - 1` expansion.
pub const FULL_EXPANSION_MAX_QUBITS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn label(self) -> char {
        match self {
            Axis::X => 'x',
            Axis::Y => 'y',
            Axis::Z => 'z',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    /// Even number of `sigma_y` factors; the matrix is real.
    Symmetric,
    /// Odd number of `sigma_y` factors; the matrix is purely imaginary.
    Antisymmetric,
}

impl Parity {
    /// Sign picked up under complex conjugation, `tau* = sign * tau`.
    pub fn conjugation_sign(self) -> f64 {
        match self {
            Parity::Symmetric => 1.0,
            Parity::Antisymmetric => -1.0,
        }
    }
}

/// A one- or two-qubit Pauli generator label such as `sigma^{13}_{xy}`.
///
/// Qubit positions are 1-based and strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GeneratorIndex {
    qubits: Vec<usize>,
    axes: Vec<Axis>,
}

impl GeneratorIndex {
    pub fn new(qubits: Vec<usize>, axes: Vec<Axis>) -> Result<Self> {
        if qubits.len() != axes.len() {
            return Err(invalid("qubit and axis lists differ in length"));
        }
        if !(1..=2).contains(&qubits.len()) {
            return Err(invalid("a generator acts on one or two qubits"));
        }
        if qubits.contains(&0) {
            return Err(invalid("qubit positions are 1-based"));
        }
        if qubits.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("qubit positions must be strictly increasing"));
        }
        Ok(Self { qubits, axes })
    }

    pub fn single(qubit: usize, axis: Axis) -> Result<Self> {
        Self::new(vec![qubit], vec![axis])
    }

    pub fn pair(q1: usize, a1: Axis, q2: usize, a2: Axis) -> Result<Self> {
        Self::new(vec![q1, q2], vec![a1, a2])
    }

    pub fn qubits(&self) -> &[usize] {
        &self.qubits
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn weight(&self) -> usize {
        self.qubits.len()
    }

    /// Expands to a full Pauli string over `n` qubits.
    pub fn to_string_over(&self, n: usize) -> Result<PauliString> {
        if self.qubits.iter().any(|&q| q > n) {
            return Err(invalid(format!(
                "generator {self} does not fit in {n} qubits"
            )));
        }
        let mut ops = vec![None; n];
        for (&q, &a) in self.qubits.iter().zip(&self.axes) {
            ops[q - 1] = Some(a);
        }
        Ok(PauliString { ops })
    }
}

impl fmt::Display for GeneratorIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s")?;
        for q in &self.qubits {
            write!(f, "{q}")?;
        }
        write!(f, "_")?;
        for a in &self.axes {
            write!(f, "{}", a.label())?;
        }
        Ok(())
    }
}

/// Symmetric iff the number of `y` axes is even.
pub fn parity_of(idx: &GeneratorIndex) -> Parity {
    let ys = idx.axes.iter().filter(|&&a| a == Axis::Y).count();
    if ys % 2 == 0 {
        Parity::Symmetric
    } else {
        Parity::Antisymmetric
    }
}

/// A full tensor product of Paulis and identities, `None` meaning identity.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PauliString {
    ops: Vec<Option<Axis>>,
}

impl PauliString {
    pub fn n(&self) -> usize {
        self.ops.len()
    }

    pub fn weight(&self) -> usize {
        self.ops.iter().filter(|o| o.is_some()).count()
    }

    /// Enumerates every non-identity string on `n` qubits.
    pub fn all_nontrivial(n: usize) -> impl Iterator<Item = PauliString> {
        let total = 1usize << (2 * n);
        (1..total).map(move |code| {
            let ops = (0..n)
                .map(|q| match (code >> (2 * (n - 1 - q))) & 3 {
                    0 => None,
                    1 => Some(Axis::X),
                    2 => Some(Axis::Y),
                    _ => Some(Axis::Z),
                })
                .collect();
            PauliString { ops }
        })
    }

    /// Sparse form scaled by `1/sqrt(N)`.
    pub fn sparse(&self) -> SparsePauli {
        let n = self.ops.len();
        let dim = 1usize << n;
        let mut flip = 0usize;
        let mut sign_mask = 0usize;
        let mut ys = 0u32;
        for (q, op) in self.ops.iter().enumerate() {
            let bit = 1usize << (n - 1 - q);
            match op {
                None => {}
                Some(Axis::X) => flip |= bit,
                Some(Axis::Y) => {
                    flip |= bit;
                    sign_mask |= bit;
                    ys += 1;
                }
                Some(Axis::Z) => sign_mask |= bit,
            }
        }
        let scale = 1.0 / (dim as f64).sqrt();
        let base = match ys % 4 {
            0 => ONE,
            1 => I,
            2 => -ONE,
            _ => -I,
        } * scale;
        let phases = (0..dim)
            .map(|j| {
                if (j & sign_mask).count_ones().is_multiple_of(2) {
                    base
                } else {
                    -base
                }
            })
            .collect();
        SparsePauli { flip, phases }
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for op in &self.ops {
            let ch = match op {
                None => 'I',
                Some(Axis::X) => 'X',
                Some(Axis::Y) => 'Y',
                Some(Axis::Z) => 'Z',
            };
            write!(f, "{ch}")?;
        }
        Ok(())
    }
}

/// A normalized Pauli string stored as one nonzero per column: entry
/// `(j ^ flip, j)` equals `phases[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePauli {
    pub flip: usize,
    pub phases: Vec<C64>,
}

impl SparsePauli {
    pub fn dim(&self) -> usize {
        self.phases.len()
    }

    /// `Tr(tau A)`.
    pub fn trace_with(&self, a: &CMatrix) -> C64 {
        let mut acc = ZERO;
        for (j, &p) in self.phases.iter().enumerate() {
            acc += p * a[(j, j ^ self.flip)];
        }
        acc
    }

    /// `Re Tr(tau (A + A†)) = 2 Re Tr(tau A)` for Hermitian `tau`.
    pub fn hermitian_part_trace(&self, a: &CMatrix) -> f64 {
        2.0 * self.trace_with(a).re
    }

    /// `target += coeff * tau`.
    pub fn add_scaled_to(&self, coeff: f64, target: &mut CMatrix) {
        for (j, &p) in self.phases.iter().enumerate() {
            target[(j ^ self.flip, j)] += p * coeff;
        }
    }

    pub fn to_dense(&self) -> CMatrix {
        let mut m = CMatrix::zeros(self.dim(), self.dim());
        self.add_scaled_to(1.0, &mut m);
        m
    }
}

/// The ordered control basis on `n` qubits.
#[derive(Debug, Clone)]
pub struct GeneratorTable {
    n: usize,
    entries: Vec<GeneratorIndex>,
    sparse: Vec<SparsePauli>,
    matrices: Vec<CMatrix>,
    parity: Vec<Parity>,
    weight: Vec<usize>,
}

/// Number of one- and two-qubit generators on `n` qubits.
pub fn generator_count(n: usize) -> usize {
    9 * n * (n.saturating_sub(1)) / 2 + 3 * n
}

/// Builds the basis in its fixed order: weight-1 generators by (qubit, axis),
/// then weight-2 generators by (first qubit, second qubit, first axis,
/// second axis).
pub fn enumerate_basis(n: usize) -> Result<GeneratorTable> {
    if n < 1 {
        return Err(invalid("qubit count must be at least 1"));
    }
    if n > 12 {
        return Err(invalid(format!(
            "{n} qubits is beyond the dense representation"
        )));
    }
    let mut entries = Vec::with_capacity(generator_count(n));
    for q in 1..=n {
        for a in Axis::ALL {
            entries.push(GeneratorIndex::single(q, a)?);
        }
    }
    for q1 in 1..=n {
        for q2 in (q1 + 1)..=n {
            for a1 in Axis::ALL {
                for a2 in Axis::ALL {
                    entries.push(GeneratorIndex::pair(q1, a1, q2, a2)?);
                }
            }
        }
    }
    let sparse: Vec<SparsePauli> = entries
        .iter()
        .map(|e| e.to_string_over(n).map(|s| s.sparse()))
        .collect::<Result<_>>()?;
    let matrices = sparse.iter().map(SparsePauli::to_dense).collect();
    let parity = entries.iter().map(parity_of).collect();
    let weight = entries.iter().map(GeneratorIndex::weight).collect();
    Ok(GeneratorTable {
        n,
        entries,
        sparse,
        matrices,
        parity,
        weight,
    })
}

impl GeneratorTable {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[GeneratorIndex] {
        &self.entries
    }

    pub fn sparse(&self) -> &[SparsePauli] {
        &self.sparse
    }

    pub fn matrices(&self) -> &[CMatrix] {
        &self.matrices
    }

    pub fn parity(&self) -> &[Parity] {
        &self.parity
    }

    pub fn weight(&self) -> &[usize] {
        &self.weight
    }

    pub fn labels(&self) -> Vec<String> {
        self.entries.iter().map(ToString::to_string).collect()
    }

    pub fn position(&self, idx: &GeneratorIndex) -> Option<usize> {
        self.entries.iter().position(|e| e == idx)
    }

    /// `c_a = Tr(tau_a (A + A†))` for every generator.
    pub fn hermitian_projections(&self, a: &CMatrix) -> Vec<f64> {
        self.sparse
            .iter()
            .map(|s| s.hermitian_part_trace(a))
            .collect()
    }
}

/// Coefficients of a traceless Hermitian operator in the normalized Pauli
/// basis, with the squared norm carried by each weight.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PauliExpansion {
    pub n: usize,
    pub coefficients: BTreeMap<String, f64>,
    pub weight_norms: BTreeMap<usize, f64>,
}

impl PauliExpansion {
    /// Rebuilds `sum_s c_s tau_s`.
    pub fn reconstruct(&self) -> Result<CMatrix> {
        let dim = 1usize << self.n;
        let mut m = CMatrix::zeros(dim, dim);
        for s in PauliString::all_nontrivial(self.n) {
            if let Some(&c) = self.coefficients.get(&s.to_string()) {
                s.sparse().add_scaled_to(c, &mut m);
            }
        }
        Ok(m)
    }

    /// The part of the expansion carried by strings of the given weights.
    pub fn project_weights(&self, keep: impl Fn(usize) -> bool) -> CMatrix {
        let dim = 1usize << self.n;
        let mut m = CMatrix::zeros(dim, dim);
        for s in PauliString::all_nontrivial(self.n) {
            if !keep(s.weight()) {
                continue;
            }
            if let Some(&c) = self.coefficients.get(&s.to_string()) {
                s.sparse().add_scaled_to(c, &mut m);
            }
        }
        m
    }
}

/// Expands a traceless Hermitian `a` over all `4^n - 1` normalized strings.
///
/// Refuses `n > 4` unless `allow_large` is set.
pub fn expand_traceless(a: &CMatrix, n: usize, allow_large: bool) -> Result<PauliExpansion> {
    let dim = 1usize << n;
    if a.nrows() != dim || a.ncols() != dim {
        return Err(invalid(format!(
            "operator is {}x{}, expected {dim}x{dim}",
            a.nrows(),
            a.ncols()
        )));
    }
    if n > FULL_EXPANSION_MAX_QUBITS && !allow_large {
        return Err(invalid(format!(
            "full expansion on {n} qubits requires the large-expansion override"
        )));
    }
    let scale = crate::linalg::max_abs(a).max(1.0);
    if hermiticity_error(a) > 1e-10 * scale {
        return Err(invalid("operator is not Hermitian"));
    }
    if trace(a).norm() > 1e-10 * scale * dim as f64 {
        return Err(invalid("operator is not traceless"));
    }
    let mut coefficients = BTreeMap::new();
    let mut weight_norms: BTreeMap<usize, f64> = (1..=n).map(|w| (w, 0.0)).collect();
    for s in PauliString::all_nontrivial(n) {
        let c = s.sparse().trace_with(a).re;
        *weight_norms.entry(s.weight()).or_default() += c * c;
        coefficients.insert(s.to_string(), c);
    }
    Ok(PauliExpansion {
        n,
        coefficients,
        weight_norms,
    })
}
