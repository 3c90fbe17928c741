//! Target unitaries, the textbook QFT circuit, and exact optimal times of
//! one- and two-qubit gates.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{c, eigenvalues_normal, identity, unitarity_error, CMatrix, C64, ONE, ZERO};
use crate::propagation::T2_MAX;

/// Elementary gates; qubit positions are 1-based, qubit 1 most significant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateSpec {
    WalshHadamard(usize),
    /// `diag(1, exp(2 pi i / 2^level))` on `target`, controlled by `control`.
    PhaseShift {
        level: u32,
        target: usize,
        control: usize,
    },
    Swap(usize, usize),
    Cnot {
        control: usize,
        target: usize,
    },
    PauliX(usize),
    PauliZ(usize),
}

impl GateSpec {
    fn qubits(&self) -> Vec<usize> {
        match *self {
            GateSpec::WalshHadamard(q) | GateSpec::PauliX(q) | GateSpec::PauliZ(q) => vec![q],
            GateSpec::PhaseShift {
                target, control, ..
            } => vec![target, control],
            GateSpec::Swap(a, b) => vec![a, b],
            GateSpec::Cnot { control, target } => vec![control, target],
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        let qs = self.qubits();
        if qs.iter().any(|&q| q == 0 || q > n) {
            return Err(invalid(format!(
                "{self:?} addresses a qubit outside 1..={n}"
            )));
        }
        if qs.len() == 2 && qs[0] == qs[1] {
            return Err(invalid(format!("{self:?} needs two distinct qubits")));
        }
        if let GateSpec::PhaseShift { level, .. } = self {
            if *level < 1 {
                return Err(invalid("phase level starts at 1"));
            }
        }
        Ok(())
    }

    /// The gate as a 2x2 or 4x4 matrix on its own qubits, in the order
    /// returned by `qubits()`.
    fn local_matrix(&self) -> CMatrix {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        match *self {
            GateSpec::WalshHadamard(_) => {
                CMatrix::from_row_slice(2, 2, &[c(s, 0.0), c(s, 0.0), c(s, 0.0), c(-s, 0.0)])
            }
            GateSpec::PauliX(_) => CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]),
            GateSpec::PauliZ(_) => CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE]),
            GateSpec::PhaseShift { level, .. } => {
                let mut m = identity(4);
                m[(3, 3)] = phase_factor(level);
                m
            }
            GateSpec::Swap(..) => permutation(&[0, 2, 1, 3]),
            GateSpec::Cnot { .. } => permutation(&[0, 1, 3, 2]),
        }
    }
}

fn phase_factor(level: u32) -> C64 {
    C64::from_polar(1.0, 2.0 * PI / 2f64.powi(level as i32))
}

/// Matrix with `|perm[j]><j|` columns.
fn permutation(perm: &[usize]) -> CMatrix {
    let mut m = CMatrix::zeros(perm.len(), perm.len());
    for (col, &row) in perm.iter().enumerate() {
        m[(row, col)] = ONE;
    }
    m
}

fn bit(index: usize, qubit: usize, n: usize) -> usize {
    (index >> (n - qubit)) & 1
}

/// Embeds a gate into the `2^n`-dimensional register.
pub fn gate_matrix(spec: &GateSpec, n: usize) -> Result<CMatrix> {
    spec.validate(n)?;
    let qs = spec.qubits();
    let local = spec.local_matrix();
    let dim = 1usize << n;
    let mask: usize = qs.iter().map(|&q| 1usize << (n - q)).sum();
    let local_index = |i: usize| qs.iter().fold(0usize, |acc, &q| (acc << 1) | bit(i, q, n));
    let mut m = CMatrix::zeros(dim, dim);
    for row in 0..dim {
        for col in 0..dim {
            if row & !mask != col & !mask {
                continue;
            }
            m[(row, col)] = local[(local_index(row), local_index(col))];
        }
    }
    Ok(m)
}

#[derive(Debug, Clone)]
pub struct TargetUnitary {
    pub label: String,
    pub n: usize,
    pub matrix: CMatrix,
}

impl TargetUnitary {
    fn checked(label: String, n: usize, matrix: CMatrix) -> Result<Self> {
        let err = unitarity_error(&matrix);
        if err > 1e-10 {
            return Err(invalid(format!("{label} is not unitary (error {err:.2e})")));
        }
        Ok(Self { label, n, matrix })
    }
}

/// `U|x> = N^{-1/2} sum_k exp(2 pi i k x / N) |k>`.
pub fn qft_unitary(n: usize) -> Result<TargetUnitary> {
    if n < 1 {
        return Err(invalid("qubit count must be at least 1"));
    }
    let dim = 1usize << n;
    let scale = 1.0 / (dim as f64).sqrt();
    let matrix = CMatrix::from_fn(dim, dim, |k, x| {
        let phase = 2.0 * PI * ((k * x) % dim) as f64 / dim as f64;
        C64::from_polar(scale, phase)
    });
    TargetUnitary::checked(format!("qft{n}"), n, matrix)
}

/// Textbook QFT circuit in application order: for each qubit `q`, a
/// Walsh-Hadamard followed by phase shifts of increasing level controlled by
/// the later qubits, then the reversing swaps.
pub fn qft_gate_sequence(n: usize) -> Result<Vec<GateSpec>> {
    if n < 1 {
        return Err(invalid("qubit count must be at least 1"));
    }
    let mut seq = Vec::with_capacity(n * (n + 1) / 2 + n / 2);
    for q in 1..=n {
        seq.push(GateSpec::WalshHadamard(q));
        for level in 2..=(n - q + 1) {
            seq.push(GateSpec::PhaseShift {
                level: level as u32,
                target: q,
                control: q + level - 1,
            });
        }
    }
    for j in 1..=n / 2 {
        seq.push(GateSpec::Swap(j, n - j + 1));
    }
    Ok(seq)
}

/// Product of a gate sequence given in application order.
pub fn compile(seq: &[GateSpec], n: usize) -> Result<CMatrix> {
    let mut u = identity(1 << n);
    for g in seq {
        u = gate_matrix(g, n)? * u;
    }
    Ok(u)
}

/// Coefficients `alpha_k = (k+1)^{1/3} exp(i sqrt(k))`, `k = 0..N-1`.
pub fn asym_alpha(dim: usize) -> Vec<C64> {
    (0..dim)
        .map(|k| C64::from_polar(((k + 1) as f64).cbrt(), (k as f64).sqrt()))
        .collect()
}

/// Upper-Hessenberg unitary whose first column is proportional to `alpha`.
///
/// Column `j >= 1` holds `alpha_0..alpha_{j-1}`, then
/// `beta_j = -(sum_{i<j} |alpha_i|^2) / conj(alpha_j)`, then zeros; every
/// column is normalized.
pub fn asym_unitary(n: usize) -> Result<TargetUnitary> {
    if n < 1 {
        return Err(invalid("qubit count must be at least 1"));
    }
    let dim = 1usize << n;
    let alpha = asym_alpha(dim);
    let mut matrix = CMatrix::zeros(dim, dim);
    let mut partial = 0.0;
    for j in 0..dim {
        if j == 0 {
            for (i, &a) in alpha.iter().enumerate() {
                matrix[(i, 0)] = a;
            }
        } else {
            for i in 0..j {
                matrix[(i, j)] = alpha[i];
            }
            matrix[(j, j)] = -partial / alpha[j].conj();
        }
        partial += alpha[j].norm_sqr();
        let norm = matrix
            .column(j)
            .iter()
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            .sqrt();
        for i in 0..dim {
            matrix[(i, j)] /= norm;
        }
    }
    TargetUnitary::checked(format!("asym{n}"), n, matrix)
}

pub fn cnot() -> CMatrix {
    permutation(&[0, 1, 3, 2])
}

pub fn swap() -> CMatrix {
    permutation(&[0, 2, 1, 3])
}

/// Looks up a named target on `n` qubits.
pub fn named_target(name: &str, n: usize) -> Result<TargetUnitary> {
    match name {
        "qft" => qft_unitary(n),
        "asym" => asym_unitary(n),
        "cnot" | "swap" if n == 2 => {
            let m = if name == "cnot" { cnot() } else { swap() };
            TargetUnitary::checked(name.to_string(), 2, m)
        }
        "hadamard" | "w" if n == 1 => {
            TargetUnitary::checked("w".into(), 1, gate_matrix(&GateSpec::WalshHadamard(1), 1)?)
        }
        _ => Err(invalid(format!("unknown target {name:?} on {n} qubits"))),
    }
}

/// Window of integer branch offsets searched per eigenphase.
pub const BRANCH_WINDOW: i32 = 2;

/// Exact optimal time (units of `1/omega`) of a one- or two-qubit gate:
/// `T = (1/2 omega) sqrt(min_{chi, m} sum_j (theta_j + 2 pi m_j - chi)^2)`.
///
/// One-qubit gates enter as `U (x) 1`. Eigenphases sit in `(-pi, pi]`; the
/// minimum over `m_j` is searched in `-window..=window` with `chi` the mean
/// of the shifted phases.
pub fn two_qubit_optimal_time(u: &CMatrix, omega: f64) -> Result<f64> {
    two_qubit_optimal_time_window(u, omega, BRANCH_WINDOW)
}

pub fn two_qubit_optimal_time_window(u: &CMatrix, omega: f64, window: i32) -> Result<f64> {
    let embedded = match (u.nrows(), u.ncols()) {
        (2, 2) => u.kronecker(&identity(2)),
        (4, 4) => u.clone(),
        (r, cc) => return Err(invalid(format!("expected a 2x2 or 4x4 gate, got {r}x{cc}"))),
    };
    let phases: Vec<f64> = eigenvalues_normal(&embedded)
        .iter()
        .map(|z| principal_phase(z.arg()))
        .collect();
    Ok(0.5 / omega * min_phase_spread(&phases, window).sqrt())
}

fn principal_phase(theta: f64) -> f64 {
    // atan2 lands in [-pi, pi]; fold -pi onto pi
    if theta <= -PI {
        theta + 2.0 * PI
    } else {
        theta
    }
}

/// `min_{m, chi} sum_j (theta_j + 2 pi m_j - chi)^2` by exhaustive search.
fn min_phase_spread(phases: &[f64], window: i32) -> f64 {
    let span = (2 * window + 1) as usize;
    let total = span.pow(phases.len() as u32);
    let mut best = f64::INFINITY;
    let mut shifted = vec![0.0; phases.len()];
    for code in 0..total {
        let mut rest = code;
        for (j, &theta) in phases.iter().enumerate() {
            let m = (rest % span) as i32 - window;
            rest /= span;
            shifted[j] = theta + 2.0 * PI * m as f64;
        }
        let mean = shifted.iter().sum::<f64>() / shifted.len() as f64;
        let spread: f64 = shifted.iter().map(|x| (x - mean).powi(2)).sum();
        best = best.min(spread);
    }
    best
}

/// Time cost of a gate sequence: the sum of exact per-gate times.
pub fn sequence_time_cost(seq: &[GateSpec], omega: f64) -> Result<f64> {
    seq.iter().try_fold(0.0, |acc, g| {
        let qs = g.qubits();
        g.validate(qs.iter().copied().max().unwrap_or(1))?;
        Ok(acc + two_qubit_optimal_time(&g.local_matrix(), omega)?)
    })
}

/// Closed-form time cost of the textbook QFT circuit in units of `T2_MAX`;
/// an upper bound on the optimal QFT time.
pub fn qft_time_upper_bound(n: usize) -> Result<f64> {
    if n < 1 {
        return Err(invalid("qubit count must be at least 1"));
    }
    let nf = n as f64;
    let sqrt35 = (3.0f64 / 5.0).sqrt();
    Ok(2.0 * nf / 5f64.sqrt()
        + sqrt35 * (nf - 2.0 + 1.0 / 2f64.powi(n as i32 - 1) + (n / 2) as f64))
}

/// Convenience: exact optimal time in units of `T2_MAX`.
pub fn relative_optimal_time(u: &CMatrix) -> Result<f64> {
    Ok(two_qubit_optimal_time(u, 1.0)? / T2_MAX)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_abs_diff, I};
    use crate::propagation::trace_fidelity;

    #[test]
    fn qft_small_cases() {
        let w = gate_matrix(&GateSpec::WalshHadamard(1), 1).unwrap();
        assert!(max_abs_diff(&qft_unitary(1).unwrap().matrix, &w) < 1e-15);
        let q2 = qft_unitary(2).unwrap().matrix;
        let powers = [ONE, I, -ONE, -I];
        for k in 0..4 {
            for x in 0..4 {
                assert!((q2[(k, x)] - powers[(k * x) % 4] * 0.5).norm() < 1e-15);
            }
        }
        for n in 1..=5 {
            let q = qft_unitary(n).unwrap().matrix;
            assert!(max_abs_diff(&q, &q.transpose()) < 1e-12);
        }
    }

    #[test]
    fn gate_examples() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let w = gate_matrix(&GateSpec::WalshHadamard(1), 1).unwrap();
        assert!((w[(1, 1)] - c(-s, 0.0)).norm() < 1e-15 && (w[(0, 1)] - c(s, 0.0)).norm() < 1e-15);
        let r2 = GateSpec::PhaseShift {
            level: 2,
            target: 1,
            control: 2,
        }
        .local_matrix();
        assert!((r2[(3, 3)] - I).norm() < 1e-15);
        let swap = gate_matrix(&GateSpec::Swap(1, 2), 2).unwrap();
        // |01> is index 1, |10> is index 2
        assert_eq!(swap[(2, 1)], ONE);
        assert_eq!(swap[(1, 1)], ZERO);
        assert!(gate_matrix(&GateSpec::Swap(1, 3), 2).is_err());
        assert!(gate_matrix(
            &GateSpec::Cnot {
                control: 2,
                target: 2
            },
            3
        )
        .is_err());
        let cn = gate_matrix(
            &GateSpec::Cnot {
                control: 1,
                target: 2,
            },
            2,
        )
        .unwrap();
        assert!(max_abs_diff(&cn, &cnot()) < 1e-15);
    }

    #[test]
    fn gate_counts() {
        assert_eq!(
            qft_gate_sequence(1).unwrap(),
            vec![GateSpec::WalshHadamard(1)]
        );
        for n in 1..=8 {
            assert_eq!(qft_gate_sequence(n).unwrap().len(), n * (n + 1) / 2 + n / 2);
        }
        assert_eq!(qft_gate_sequence(3).unwrap().len(), 7);
    }

    #[test]
    fn compiled_circuit_matches_qft() {
        for n in 1..=4 {
            let u = compile(&qft_gate_sequence(n).unwrap(), n).unwrap();
            let f = trace_fidelity(&u, &qft_unitary(n).unwrap().matrix).unwrap();
            assert!((1.0 - f).abs() < 1e-10, "n={n} F={f}");
        }
    }

    #[test]
    fn asym_construction() {
        for n in 1..=5 {
            let t = asym_unitary(n).unwrap();
            assert!(unitarity_error(&t.matrix) < 1e-10);
            let alpha = asym_alpha(1 << n);
            let ratio = t.matrix[(0, 0)] / alpha[0];
            for (i, a) in alpha.iter().enumerate() {
                assert!((t.matrix[(i, 0)] - a * ratio).norm() < 1e-12);
            }
        }
        // beta_1 = -|alpha_0|^2 / conj(alpha_1) = -1 / (2^{1/3} e^{-i})
        let t = asym_unitary(1).unwrap();
        let beta1 = -ONE / (C64::from_polar(2f64.cbrt(), -1.0));
        let col_scale = t.matrix[(0, 1)] / asym_alpha(2)[0];
        assert!((t.matrix[(1, 1)] - beta1 * col_scale).norm() < 1e-12);
        // first-column moduli all differ
        let first: Vec<f64> = (0..8)
            .map(|i| asym_unitary(3).unwrap().matrix[(i, 0)].norm())
            .collect();
        for i in 0..8 {
            for j in i + 1..8 {
                assert!((first[i] - first[j]).abs() > 1e-6);
            }
        }
    }

    #[test]
    fn quoted_two_qubit_times() {
        let t2 = T2_MAX;
        let sqrt3pi4 = 3f64.sqrt() * PI / 4.0;
        assert!((two_qubit_optimal_time(&cnot(), 1.0).unwrap() - sqrt3pi4).abs() < 1e-12);
        assert!((two_qubit_optimal_time(&swap(), 1.0).unwrap() - sqrt3pi4).abs() < 1e-12);
        let hardest = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![ONE, I, -ONE, -I]));
        assert!((two_qubit_optimal_time(&hardest, 1.0).unwrap() - t2).abs() < 1e-12);
        let w = gate_matrix(&GateSpec::WalshHadamard(1), 1).unwrap();
        assert!((two_qubit_optimal_time(&w, 1.0).unwrap() - PI / 2.0).abs() < 1e-12);
        for level in 2..=5u32 {
            let r = GateSpec::PhaseShift {
                level,
                target: 1,
                control: 2,
            }
            .local_matrix();
            let expect = (3f64 / 5.0).sqrt() / 2f64.powi(level as i32 - 1);
            assert!((relative_optimal_time(&r).unwrap() - expect).abs() < 1e-12);
        }
        assert!(two_qubit_optimal_time(&identity(8), 1.0).is_err());
    }

    #[test]
    fn time_is_phase_and_permutation_invariant() {
        let q2 = qft_unitary(2).unwrap().matrix;
        let base = two_qubit_optimal_time(&q2, 1.0).unwrap();
        for phase in [0.3, 1.7, -2.9, PI] {
            let t = two_qubit_optimal_time(&(&q2 * C64::from_polar(1.0, phase)), 1.0).unwrap();
            assert!((t - base).abs() < 1e-12);
        }
        let sw = swap();
        let conj = &sw * &q2 * &sw;
        assert!((two_qubit_optimal_time(&conj, 1.0).unwrap() - base).abs() < 1e-12);
        let wide = two_qubit_optimal_time_window(&q2, 1.0, 4).unwrap();
        assert!((wide - base).abs() < 1e-12);
    }

    #[test]
    fn sequence_costs() {
        assert_eq!(sequence_time_cost(&[], 1.0).unwrap(), 0.0);
        let w = [GateSpec::WalshHadamard(1)];
        assert!((sequence_time_cost(&w, 1.0).unwrap() - PI / 2.0).abs() < 1e-12);
        for n in 1..=6 {
            let cost = sequence_time_cost(&qft_gate_sequence(n).unwrap(), 1.0).unwrap() / T2_MAX;
            assert!(
                (cost - qft_time_upper_bound(n).unwrap()).abs() < 1e-12,
                "n={n}"
            );
        }
    }

    #[test]
    fn upper_bound_values() {
        assert!((qft_time_upper_bound(1).unwrap() - 2.0 / 5f64.sqrt()).abs() < 1e-15);
        let n2 = 4.0 / 5f64.sqrt() + 1.5 * (0.6f64).sqrt();
        assert!((qft_time_upper_bound(2).unwrap() - n2).abs() < 1e-15);
        let vals: Vec<f64> = (1..=40).map(|n| qft_time_upper_bound(n).unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[1] > w[0]));
        let slope = vals[39] / 40.0;
        assert!((slope - vals[38] / 39.0).abs() < 0.02);
    }
}
