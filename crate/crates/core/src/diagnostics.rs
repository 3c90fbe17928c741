//! Numerical checks of the structure of optimal solutions: constancy of the
//! multiplier and of the one-qubit Hamiltonian, time-reversal symmetry, the
//! costate commutator flow, and the first two graded evolution equations.
//!
//! None of these hold exactly at finite fidelity or finite `dt`; every check
//! returns a number and compares it against an explicit tolerance.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::krotov::KrotovState;
use crate::linalg::{c, identity, max_abs, trace, CMatrix, I};
use crate::pauli::{expand_traceless, GeneratorTable, Parity};
use crate::propagation::{assemble_hamiltonian, ControlField, UnitaryTrajectory};

pub const TIME_REVERSAL_TOLERANCE: f64 = 5e-2;
pub const ONE_QUBIT_TOLERANCE: f64 = 1e-2;
pub const LAMBDA_TOLERANCE: f64 = 1e-3;
pub const LEAKAGE_TOLERANCE: f64 = 1e-6;

/// Relative standard deviation `std / |mean|` of a multiplier record.
pub fn lambda_constancy(record: &[f64]) -> Result<f64> {
    if record.is_empty() {
        return Err(Error::DegenerateRecord("empty multiplier record".into()));
    }
    let (mean, rel) = crate::krotov::mean_and_rel_std(record);
    if mean.abs() < 1e-14 {
        return Err(Error::DegenerateRecord(format!(
            "multiplier mean {mean:.3e}"
        )));
    }
    Ok(rel)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneQubitReport {
    /// `(label, max_t h_a - min_t h_a)` for each weight-1 generator.
    pub ranges: Vec<(String, f64)>,
    pub max_range: f64,
    /// `max_range / (sqrt(N) omega)`.
    pub relative: f64,
}

impl OneQubitReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.relative < tolerance
    }
}

pub fn one_qubit_constancy(field: &ControlField, basis: &GeneratorTable) -> Result<OneQubitReport> {
    check_basis(field, basis)?;
    let labels = basis.labels();
    let mut ranges = Vec::new();
    for a in 0..basis.len() {
        if basis.weight()[a] != 1 {
            continue;
        }
        let series = field.component(a);
        let hi = series.iter().cloned().fold(f64::MIN, f64::max);
        let lo = series.iter().cloned().fold(f64::MAX, f64::min);
        ranges.push((labels[a].clone(), hi - lo));
    }
    let max_range = ranges.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(OneQubitReport {
        ranges,
        max_range,
        relative: max_range / field.radius(),
    })
}

fn check_basis(field: &ControlField, basis: &GeneratorTable) -> Result<()> {
    if field.n() != basis.n() || field.generator_count() != basis.len() {
        return Err(invalid("field and basis disagree on the qubit count"));
    }
    Ok(())
}

/// Class key `"1s"`, `"1a"`, `"2s"` or `"2a"`.
pub fn class_key(weight: usize, parity: Parity) -> String {
    let p = match parity {
        Parity::Symmetric => 's',
        Parity::Antisymmetric => 'a',
    };
    format!("{weight}{p}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetryReport {
    pub labels: Vec<String>,
    /// `residuals[a][m]`, one series per generator.
    pub residuals: Vec<Vec<f64>>,
    /// Largest absolute residual per generator class, relative to
    /// `sqrt(N) omega`.
    pub class_max: BTreeMap<String, f64>,
    pub aggregate: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Residual of the time-reversal property: symmetric components even and
/// antisymmetric ones odd about the midpoint, pairing slice `m` with
/// `M - 1 - m`.
pub fn time_reversal_residual(
    field: &ControlField,
    basis: &GeneratorTable,
    tolerance: f64,
) -> Result<SymmetryReport> {
    check_basis(field, basis)?;
    let slices = field.slices();
    let radius = field.radius();
    let mut residuals = Vec::with_capacity(basis.len());
    let mut class_max: BTreeMap<String, f64> = BTreeMap::new();
    for a in 0..basis.len() {
        let parity = basis.parity()[a];
        let sign = parity.conjugation_sign();
        let series = field.component(a);
        let r: Vec<f64> = (0..slices)
            .map(|m| series[m] - sign * series[slices - 1 - m])
            .collect();
        let worst = r.iter().fold(0.0_f64, |acc, x| acc.max(x.abs())) / radius;
        let slot = class_max
            .entry(class_key(basis.weight()[a], parity))
            .or_insert(0.0);
        *slot = slot.max(worst);
        residuals.push(r);
    }
    let aggregate = class_max.values().cloned().fold(0.0, f64::max);
    Ok(SymmetryReport {
        labels: basis.labels(),
        residuals,
        class_max,
        aggregate,
        tolerance,
        passed: aggregate < tolerance,
    })
}

#[derive(Debug, Clone)]
pub struct ReversedSolution {
    pub u_traj: UnitaryTrajectory,
    pub v_traj: UnitaryTrajectory,
    pub field: ControlField,
    pub lambda_record: Vec<f64>,
}

/// `U_rev(t) = U*(T-t) U^T(T)`, `V_rev(t) = V*(T-t) U^T(T)`,
/// `H_rev(t) = H*(T-t)`, `lambda_rev(t) = lambda(T-t)`.
///
/// Since `tau_a* = +-tau_a`, the reversed coefficients are
/// `h_rev,a(m) = +-h_a(M-1-m)` with the sign set by parity.
pub fn time_reverse_solution(
    u_traj: &UnitaryTrajectory,
    v_traj: &UnitaryTrajectory,
    field: &ControlField,
    lambda_record: &[f64],
    basis: &GeneratorTable,
) -> Result<ReversedSolution> {
    check_basis(field, basis)?;
    let slices = field.slices();
    if u_traj.len() != slices + 1 || v_traj.len() != slices + 1 || lambda_record.len() != slices {
        return Err(invalid(
            "trajectories, field and multiplier are on different grids",
        ));
    }
    let right = u_traj.last().transpose();
    let reverse = |traj: &UnitaryTrajectory| UnitaryTrajectory {
        matrices: (0..=slices)
            .map(|m| traj.matrices[slices - m].conjugate() * &right)
            .collect(),
    };
    let k = basis.len();
    let mut values = Vec::with_capacity(slices * k);
    for m in 0..slices {
        let src = field.slice(slices - 1 - m);
        values.extend(
            src.iter()
                .zip(basis.parity())
                .map(|(h, p)| p.conjugation_sign() * h),
        );
    }
    let reversed_field =
        ControlField::from_normalized(*field.grid(), basis, field.omega(), values)?;
    Ok(ReversedSolution {
        u_traj: reverse(u_traj),
        v_traj: reverse(v_traj),
        field: reversed_field,
        lambda_record: lambda_record.iter().rev().cloned().collect(),
    })
}

/// `max_m |X_{m+1} - exp(-i H_m dt) X_m|`: how far a trajectory is from
/// solving the discrete Schrödinger equation for `field`.
pub fn schrodinger_residual(
    traj: &UnitaryTrajectory,
    field: &ControlField,
    basis: &GeneratorTable,
) -> Result<f64> {
    check_basis(field, basis)?;
    if traj.len() != field.slices() + 1 {
        return Err(invalid("trajectory and field are on different grids"));
    }
    let dt = field.grid().dt();
    let mut worst = 0.0_f64;
    for m in 0..field.slices() {
        let h = assemble_hamiltonian(field.slice(m), basis)?;
        let step = crate::linalg::hermitian_exp(&h, dt);
        let diff = &traj.matrices[m + 1] - step * &traj.matrices[m];
        worst = worst.max(max_abs(&diff));
    }
    Ok(worst)
}

/// `F = U V† + V U†`, which evolves as `i dF/dt = [H, F]`.
pub fn costate_bilinear(u: &CMatrix, v: &CMatrix) -> CMatrix {
    let w = u * v.adjoint();
    &w + w.adjoint()
}

fn costate_of(state: &KrotovState) -> Result<&UnitaryTrajectory> {
    let v = state
        .v_traj
        .as_ref()
        .ok_or_else(|| invalid("state carries no costate trajectory"))?;
    if v.len() != state.u_traj.len() {
        return Err(invalid("costate and forward trajectory lengths differ"));
    }
    Ok(v)
}

/// `max_m |(F_{m+1} - F_{m-1}) / 2dt + i [H_m, F_m]|` over interior grid
/// points, with `F_m` built from the grid values of `U` and `V`.
///
/// The costate must belong to the state's field; see
/// [`crate::krotov::consistent_state`].
pub fn costate_commutator_residual(state: &KrotovState, basis: &GeneratorTable) -> Result<f64> {
    check_basis(&state.field, basis)?;
    let slices = state.field.slices();
    if slices < 3 {
        return Err(invalid("commutator residual needs at least three slices"));
    }
    let v = costate_of(state)?;
    let dt = state.field.grid().dt();
    let f: Vec<CMatrix> = (0..=slices)
        .map(|m| costate_bilinear(&state.u_traj.matrices[m], &v.matrices[m]))
        .collect();
    let mut worst = 0.0_f64;
    for m in 1..slices {
        let h = assemble_hamiltonian(state.field.slice(m), basis)?;
        let comm = &h * &f[m] - &f[m] * &h;
        let residual = (&f[m + 1] - &f[m - 1]) / c(2.0 * dt, 0.0) + comm * I;
        worst = worst.max(max_abs(&residual));
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradedReport {
    /// `max_m |dH_1/dt|` (max-entry norm, central differences over slices).
    pub h1_rate: f64,
    /// `max_m |i lambda dH_2/dt - [H_2, F_3]_2|`.
    pub h2_residual: f64,
    /// `max_m |(F_m)_{w<=2} - lambda_m H_m| / lambda_m`.
    pub leakage: f64,
}

/// First two lines of the graded system, `i dH_1/dt = 0` and
/// `i lambda dH_2/dt = [H_2, F_3]_2`.
///
/// `F_m` is taken from the straddle pair `(U_m, V_{m+1})`, the same pair
/// that sets the control on slice `m`, so that its weight-1 and weight-2
/// part equals `lambda_m H_m` at a fixed point of the sweeps. Larger
/// leakage means the state is not stationary and is reported as
/// [`Error::DecompositionInconsistency`].
pub fn graded_residual(
    state: &KrotovState,
    basis: &GeneratorTable,
    leakage_tolerance: f64,
) -> Result<GradedReport> {
    check_basis(&state.field, basis)?;
    let n = basis.n();
    let slices = state.field.slices();
    if slices < 3 {
        return Err(invalid("graded residual needs at least three slices"));
    }
    let v = costate_of(state)?;
    let dt = state.field.grid().dt();
    let dim = basis.dim();

    let mut h1 = Vec::with_capacity(slices);
    let mut h2 = Vec::with_capacity(slices);
    let mut f3 = Vec::with_capacity(slices);
    let mut leakage = 0.0_f64;
    for m in 0..slices {
        let lambda = state.lambda_record[m];
        let h = assemble_hamiltonian(state.field.slice(m), basis)?;
        let mut f = costate_bilinear(&state.u_traj.matrices[m], &v.matrices[m + 1]);
        let shift = trace(&f) / c(dim as f64, 0.0);
        f -= identity(dim) * shift;
        let exp = expand_traceless(&f, n, false)?;
        let low = exp.project_weights(|w| w <= 2);
        if lambda > 0.0 {
            leakage = leakage.max(max_abs(&(&low - &h * c(lambda, 0.0))) / lambda);
        } else {
            leakage = f64::INFINITY;
        }
        let h_exp = expand_traceless(&h, n, false)?;
        h1.push(h_exp.project_weights(|w| w == 1));
        h2.push(h_exp.project_weights(|w| w == 2));
        f3.push(exp.project_weights(|w| w == 3));
    }
    if leakage > leakage_tolerance {
        return Err(Error::DecompositionInconsistency {
            leakage,
            tolerance: leakage_tolerance,
        });
    }

    let mut h1_rate = 0.0_f64;
    let mut h2_residual = 0.0_f64;
    for m in 1..slices - 1 {
        let d1 = (&h1[m + 1] - &h1[m - 1]) / c(2.0 * dt, 0.0);
        h1_rate = h1_rate.max(max_abs(&d1));
        let d2 = (&h2[m + 1] - &h2[m - 1]) / c(2.0 * dt, 0.0);
        let comm = &h2[m] * &f3[m] - &f3[m] * &h2[m];
        let comm2 = if n >= 3 {
            expand_traceless(&anti_to_hermitian(&comm), n, false)?.project_weights(|w| w == 2)
                * (-I)
        } else {
            CMatrix::zeros(dim, dim)
        };
        let lhs = d2 * (I * c(state.lambda_record[m], 0.0));
        h2_residual = h2_residual.max(max_abs(&(lhs - comm2)));
    }
    Ok(GradedReport {
        h1_rate,
        h2_residual,
        leakage,
    })
}

/// Commutators of Hermitian matrices are anti-Hermitian; `i [A, B]` is
/// Hermitian and expandable.
fn anti_to_hermitian(m: &CMatrix) -> CMatrix {
    m * I
}
