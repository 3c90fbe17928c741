//! Piecewise-constant control fields and exact slice-by-slice propagation.

use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};
use crate::linalg::{hermitian_exp, hermiticity_error, identity, max_abs, CMatrix};
use crate::pauli::GeneratorTable;

/// Optimal time of the hardest two-qubit gate, in units of `1/omega`.
pub const T2_MAX: f64 = 2.236_067_977_499_79 * PI / 4.0;

/// Default slice count for a total time `t` (units of `1/omega`).
pub fn default_slices(t: f64) -> usize {
    let by_time = (200.0 * t / T2_MAX).ceil();
    if by_time.is_finite() && by_time > 100.0 {
        by_time as usize
    } else {
        100
    }
}

/// Uniform discretization of `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    total: f64,
    slices: usize,
}

impl TimeGrid {
    pub fn new(total: f64, slices: usize) -> Result<Self> {
        if slices < 1 {
            return Err(invalid("time grid needs at least one slice"));
        }
        if !(total > 0.0 && total.is_finite()) {
            return Err(invalid(format!("total time must be positive, got {total}")));
        }
        Ok(Self { total, slices })
    }

    /// Grid for a time given in units of `T2_MAX`, with the default slice count.
    pub fn from_relative(t_rel: f64) -> Result<Self> {
        let t = t_rel * T2_MAX;
        Self::new(t, default_slices(t))
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn relative(&self) -> f64 {
        self.total / T2_MAX
    }

    pub fn slices(&self) -> usize {
        self.slices
    }

    pub fn dt(&self) -> f64 {
        self.total / self.slices as f64
    }
}

/// Coefficients `h_a` held constant on each slice `[m dt, (m+1) dt)`.
///
/// Every slice lies on the sphere `sum_a h_a^2 = N omega^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlField {
    grid: TimeGrid,
    omega: f64,
    n: usize,
    k: usize,
    values: Vec<f64>,
}

impl ControlField {
    /// Wraps values that are already normalized. Checks the sphere
    /// constraint to `1e-10` relative.
    pub fn from_normalized(
        grid: TimeGrid,
        basis: &GeneratorTable,
        omega: f64,
        values: Vec<f64>,
    ) -> Result<Self> {
        let k = basis.len();
        if values.len() != grid.slices() * k {
            return Err(invalid(format!(
                "field has {} values, expected {} slices x {k} generators",
                values.len(),
                grid.slices()
            )));
        }
        let field = Self {
            grid,
            omega,
            n: basis.n(),
            k,
            values,
        };
        let err = field.normalization_error();
        if err > 1e-10 {
            return Err(invalid(format!("field slices off the sphere by {err:.3e}")));
        }
        Ok(field)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn generator_count(&self) -> usize {
        self.k
    }

    pub fn slices(&self) -> usize {
        self.grid.slices()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn slice(&self, m: usize) -> &[f64] {
        &self.values[m * self.k..(m + 1) * self.k]
    }

    pub(crate) fn slice_mut(&mut self, m: usize) -> &mut [f64] {
        &mut self.values[m * self.k..(m + 1) * self.k]
    }

    /// Radius of the constraint sphere, `sqrt(N) omega`.
    pub fn radius(&self) -> f64 {
        ((1usize << self.n) as f64).sqrt() * self.omega
    }

    /// Time series of coefficient `a`.
    pub fn component(&self, a: usize) -> Vec<f64> {
        (0..self.slices()).map(|m| self.slice(m)[a]).collect()
    }

    /// Largest relative deviation of a slice norm from the sphere radius.
    pub fn normalization_error(&self) -> f64 {
        let r = self.radius();
        (0..self.slices())
            .map(|m| (self.slice(m).iter().map(|h| h * h).sum::<f64>().sqrt() - r).abs() / r)
            .fold(0.0, f64::max)
    }

    /// Same coefficients on a grid of total time `t_new`; slice count fixed.
    pub fn with_total_time(&self, t_new: f64) -> Result<Self> {
        let grid = TimeGrid::new(t_new, self.slices())?;
        Ok(Self {
            grid,
            ..self.clone()
        })
    }
}

/// `U_0 .. U_M` on the grid points.
#[derive(Debug, Clone)]
pub struct UnitaryTrajectory {
    pub matrices: Vec<CMatrix>,
}

impl UnitaryTrajectory {
    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn first(&self) -> &CMatrix {
        &self.matrices[0]
    }

    pub fn last(&self) -> &CMatrix {
        self.matrices.last().expect("trajectory is never empty")
    }

    /// Worst `U†U - 1` over the trajectory. The costate carries a scale, so
    /// this is only meaningful for forward trajectories.
    pub fn unitarity_error(&self) -> f64 {
        self.matrices
            .iter()
            .map(crate::linalg::unitarity_error)
            .fold(0.0, f64::max)
    }
}

/// `H = sum_a h_a tau_a`.
pub fn assemble_hamiltonian(slice: &[f64], basis: &GeneratorTable) -> Result<CMatrix> {
    if slice.len() != basis.len() {
        return Err(invalid(format!(
            "{} coefficients for a basis of {}",
            slice.len(),
            basis.len()
        )));
    }
    let dim = basis.dim();
    let mut h = CMatrix::zeros(dim, dim);
    for (s, &coeff) in basis.sparse().iter().zip(slice) {
        if coeff != 0.0 {
            s.add_scaled_to(coeff, &mut h);
        }
    }
    Ok(h)
}

/// `exp(-i H dt)` for Hermitian `H`.
pub fn step_propagator(h: &CMatrix, dt: f64) -> Result<CMatrix> {
    crate::linalg::ensure_square(h, "Hamiltonian")?;
    if hermiticity_error(h) > 1e-10 * max_abs(h).max(1.0) {
        return Err(invalid("Hamiltonian is not Hermitian"));
    }
    Ok(hermitian_exp(h, dt))
}

pub(crate) fn slice_propagator(slice: &[f64], basis: &GeneratorTable, dt: f64) -> CMatrix {
    let h = assemble_hamiltonian(slice, basis).expect("slice length checked by the field");
    hermitian_exp(&h, dt)
}

fn check_field(field: &ControlField, basis: &GeneratorTable) -> Result<()> {
    if field.n() != basis.n() || field.generator_count() != basis.len() {
        return Err(invalid("field and basis disagree on the qubit count"));
    }
    Ok(())
}

/// Forward Schrödinger propagation from `U_0 = 1`.
pub fn propagate_forward(
    field: &ControlField,
    basis: &GeneratorTable,
) -> Result<UnitaryTrajectory> {
    check_field(field, basis)?;
    let dt = field.grid().dt();
    let mut matrices = Vec::with_capacity(field.slices() + 1);
    matrices.push(identity(basis.dim()));
    for m in 0..field.slices() {
        let step = slice_propagator(field.slice(m), basis, dt);
        let next = step * &matrices[m];
        matrices.push(next);
    }
    Ok(UnitaryTrajectory { matrices })
}

/// Backward propagation of a terminal value: `V_m = exp(+i H_m dt) V_{m+1}`.
///
/// The map is linear, so any overall scale on `v_t` is carried through.
pub fn propagate_backward(
    v_t: &CMatrix,
    field: &ControlField,
    basis: &GeneratorTable,
) -> Result<UnitaryTrajectory> {
    check_field(field, basis)?;
    if v_t.nrows() != basis.dim() || v_t.ncols() != basis.dim() {
        return Err(invalid("terminal value has the wrong dimension"));
    }
    let dt = field.grid().dt();
    let m_total = field.slices();
    let mut matrices = vec![CMatrix::zeros(0, 0); m_total + 1];
    matrices[m_total] = v_t.clone();
    for m in (0..m_total).rev() {
        let step = slice_propagator(field.slice(m), basis, -dt);
        matrices[m] = step * &matrices[m + 1];
    }
    Ok(UnitaryTrajectory { matrices })
}

/// `|Tr U† U_f| / N`.
pub fn trace_fidelity(u: &CMatrix, u_f: &CMatrix) -> Result<f64> {
    if u.shape() != u_f.shape() || u.nrows() != u.ncols() {
        return Err(invalid(format!(
            "fidelity of {:?} against {:?}",
            u.shape(),
            u_f.shape()
        )));
    }
    let overlap = crate::linalg::inner(u, u_f);
    Ok((overlap.norm() / u.nrows() as f64).min(1.0))
}

/// Scales every slice of `raw` (row-major, `M x K`) onto the sphere of
/// radius `sqrt(N) omega`.
pub fn normalize_field(
    raw: &[f64],
    grid: TimeGrid,
    basis: &GeneratorTable,
    omega: f64,
) -> Result<ControlField> {
    let k = basis.len();
    if raw.len() != grid.slices() * k {
        return Err(invalid(format!(
            "raw field has {} values, expected {}",
            raw.len(),
            grid.slices() * k
        )));
    }
    if !(omega > 0.0) {
        return Err(invalid("omega must be positive"));
    }
    let radius = ((basis.dim()) as f64).sqrt() * omega;
    let mut values = raw.to_vec();
    for (m, chunk) in values.chunks_mut(k).enumerate() {
        let norm = chunk.iter().map(|h| h * h).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::DegenerateInput(format!("slice {m} has zero norm")));
        }
        let s = radius / norm;
        chunk.iter_mut().for_each(|h| *h *= s);
    }
    ControlField::from_normalized(grid, basis, omega, values)
}

/// `det(exp(-i H dt))`, used to check tracelessness of the generator span.
pub fn propagator_determinant(h: &CMatrix, dt: f64) -> crate::linalg::C64 {
    hermitian_exp(h, dt).determinant()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, max_abs_diff, trace_of_product};
    use crate::pauli::enumerate_basis;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn random_field(n: usize, t: f64, m: usize, seed: u64) -> (GeneratorTable, ControlField) {
        let basis = enumerate_basis(n).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f64> = (0..m * basis.len())
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let field = normalize_field(&raw, TimeGrid::new(t, m).unwrap(), &basis, 1.0).unwrap();
        (basis, field)
    }

    #[test]
    fn t2max_value() {
        assert!((T2_MAX - 5f64.sqrt() * PI / 4.0).abs() < 1e-14);
        assert_eq!(default_slices(0.5 * T2_MAX), 100);
        assert_eq!(default_slices(1.0 * T2_MAX), 200);
    }

    #[test]
    fn hamiltonian_examples() {
        let basis = enumerate_basis(1).unwrap();
        let zero = assemble_hamiltonian(&[0.0; 3], &basis).unwrap();
        assert_eq!(max_abs(&zero), 0.0);
        let h = assemble_hamiltonian(&[0.0, 0.0, 1.0], &basis).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((h[(0, 0)] - c(s, 0.0)).norm() < 1e-15);
        assert!((h[(1, 1)] - c(-s, 0.0)).norm() < 1e-15);
        assert!(assemble_hamiltonian(&[1.0; 2], &basis).is_err());
    }

    #[test]
    fn hamiltonian_square_trace_is_coefficient_norm() {
        let basis = enumerate_basis(2).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let slice: Vec<f64> = (0..basis.len())
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let h = assemble_hamiltonian(&slice, &basis).unwrap();
        let tr = trace_of_product(&h, &h).re;
        let norm: f64 = slice.iter().map(|x| x * x).sum();
        assert!((tr - norm).abs() < 1e-12);
    }

    #[test]
    fn step_propagator_examples() {
        let basis = enumerate_basis(1).unwrap();
        let zero = CMatrix::zeros(2, 2);
        assert!(max_abs_diff(&step_propagator(&zero, 1.0).unwrap(), &identity(2)) < 1e-15);
        let h = assemble_hamiltonian(&[0.0, 0.0, 1.0], &basis).unwrap();
        let e = step_propagator(&h, PI * 2f64.sqrt()).unwrap();
        assert!(max_abs_diff(&e, &(-identity(2))) < 1e-12);
        let mut bad = CMatrix::zeros(2, 2);
        bad[(0, 1)] = c(1.0, 0.0);
        assert!(step_propagator(&bad, 1.0).is_err());
    }

    #[test]
    fn step_determinant_is_one() {
        let (basis, field) = random_field(3, 2.0, 5, 9);
        for m in 0..5 {
            let h = assemble_hamiltonian(field.slice(m), &basis).unwrap();
            let det = propagator_determinant(&h, 0.37);
            assert!((det - c(1.0, 0.0)).norm() < 1e-10);
        }
    }

    #[test]
    fn constant_x_rotation_reaches_sigma_x() {
        // n=1, h on sigma_x at radius sqrt(2): H = sigma_x, so T = pi/2
        // gives exp(-i pi/2 sigma_x) = -i sigma_x.
        let basis = enumerate_basis(1).unwrap();
        let grid = TimeGrid::new(PI / 2.0, 10).unwrap();
        let values: Vec<f64> = (0..10).flat_map(|_| [2f64.sqrt(), 0.0, 0.0]).collect();
        let field = ControlField::from_normalized(grid, &basis, 1.0, values).unwrap();
        let traj = propagate_forward(&field, &basis).unwrap();
        let x = basis.matrices()[0].clone() * c(2f64.sqrt(), 0.0);
        assert!(max_abs_diff(traj.last(), &(&x * c(0.0, -1.0))) < 1e-12);
        assert!((trace_fidelity(traj.last(), &x).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tiny_time_gives_identity() {
        let (basis, field) = random_field(2, 1e-12, 1, 1);
        let traj = propagate_forward(&field, &basis).unwrap();
        assert!(max_abs_diff(traj.last(), &identity(4)) < 1e-10);
    }

    #[test]
    fn long_trajectory_stays_unitary() {
        let (basis, field) = random_field(2, 50.0, 10_000, 5);
        let traj = propagate_forward(&field, &basis).unwrap();
        assert!(traj.unitarity_error() < 1e-10);
    }

    #[test]
    fn backward_round_trip_and_linearity() {
        let (basis, field) = random_field(2, 3.0, 40, 2);
        let u = propagate_forward(&field, &basis).unwrap();
        let v_t = u.last().clone();
        let back = propagate_backward(&v_t, &field, &basis).unwrap();
        assert!(max_abs_diff(&back.matrices[0], &identity(4)) < 1e-9);
        let scale = c(0.3, -1.2);
        let scaled = propagate_backward(&(&v_t * scale), &field, &basis).unwrap();
        for (a, b) in scaled.matrices.iter().zip(&back.matrices) {
            assert!(max_abs_diff(a, &(b * scale)) < 1e-12);
        }
        // forward re-propagation of V_0 returns V_T
        let mut v = back.matrices[0].clone();
        for m in 0..field.slices() {
            v = slice_propagator(field.slice(m), &basis, field.grid().dt()) * v;
        }
        assert!(max_abs_diff(&v, &v_t) < 1e-9);
    }

    #[test]
    fn backward_with_zero_rotation_is_constant() {
        // A vanishing duration stands in for a zero field, which the sphere
        // constraint forbids.
        let (basis, field) = random_field(1, 1e-300, 4, 8);
        let v_t = identity(2) * c(0.0, 0.5);
        let back = propagate_backward(&v_t, &field, &basis).unwrap();
        assert!(back.matrices.iter().all(|v| max_abs_diff(v, &v_t) < 1e-15));
    }

    fn two_qubit_gate(perm: [usize; 4]) -> CMatrix {
        let mut g = CMatrix::zeros(4, 4);
        for (col, &row) in perm.iter().enumerate() {
            g[(row, col)] = c(1.0, 0.0);
        }
        g
    }

    #[test]
    fn fidelity_examples() {
        let cnot = two_qubit_gate([0, 1, 3, 2]);
        let swap = two_qubit_gate([0, 2, 1, 3]);
        let id = identity(4);
        assert!((trace_fidelity(&cnot, &cnot).unwrap() - 1.0).abs() < 1e-15);
        assert!((trace_fidelity(&id, &cnot).unwrap() - 0.5).abs() < 1e-15);
        assert!((trace_fidelity(&id, &swap).unwrap() - 0.5).abs() < 1e-15);
        let phased = &cnot * crate::linalg::C64::from_polar(1.0, 0.7);
        assert!((trace_fidelity(&phased, &cnot).unwrap() - 1.0).abs() < 1e-15);
        assert!(trace_fidelity(&identity(2), &cnot).is_err());
    }

    #[test]
    fn normalization() {
        let basis = enumerate_basis(1).unwrap();
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let r = 2f64.sqrt();
        let on_sphere = vec![r, 0.0, 0.0, 0.0, 0.0, r];
        let f = normalize_field(&on_sphere, grid, &basis, 1.0).unwrap();
        assert_eq!(f.values(), &on_sphere[..]);
        let doubled = vec![2.0 * r, 0.0, 0.0, 0.0, 0.0, r];
        let f = normalize_field(&doubled, grid, &basis, 1.0).unwrap();
        assert!((f.slice(0)[0] - r).abs() < 1e-15);
        let zero = vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        assert!(matches!(
            normalize_field(&zero, grid, &basis, 1.0),
            Err(Error::DegenerateInput(_))
        ));
        let (_, f) = random_field(3, 1.0, 50, 4);
        assert!(f.normalization_error() < 1e-12);
    }

    #[test]
    fn recycling_keeps_slices() {
        let (_, f) = random_field(2, 1.0, 20, 4);
        let g = f.with_total_time(2.0).unwrap();
        assert_eq!(f.values(), g.values());
        assert!((g.grid().dt() - 2.0 * f.grid().dt()).abs() < 1e-15);
        let same = f.with_total_time(1.0).unwrap();
        assert_eq!(same, f);
    }

    #[test]
    fn discretization_order_on_smooth_field() {
        // A smooth field sampled at slice midpoints; halving dt should cut
        // the fidelity defect against a fine reference roughly fourfold.
        let basis = enumerate_basis(2).unwrap();
        let t = 2.0;
        let smooth = |time: f64| -> Vec<f64> {
            (0..basis.len())
                .map(|a| ((a as f64 + 1.0) * 0.3 * time + a as f64).sin() + 0.2)
                .collect()
        };
        let build = |m: usize| {
            let grid = TimeGrid::new(t, m).unwrap();
            let dt = grid.dt();
            let raw: Vec<f64> = (0..m).flat_map(|i| smooth((i as f64 + 0.5) * dt)).collect();
            let f = normalize_field(&raw, grid, &basis, 1.0).unwrap();
            propagate_forward(&f, &basis).unwrap().last().clone()
        };
        let reference = build(4096);
        let e1 = 1.0 - trace_fidelity(&build(32), &reference).unwrap();
        let e2 = 1.0 - trace_fidelity(&build(64), &reference).unwrap();
        // fidelity defect is quadratic in the operator error, which is O(dt^2)
        let ratio = e1 / e2;
        assert!(ratio > 8.0, "ratio {ratio}");
        let g1 = crate::linalg::max_abs_diff(&build(32), &reference);
        let g2 = crate::linalg::max_abs_diff(&build(64), &reference);
        assert!(
            (g1 / g2 - 4.0).abs() < 0.6,
            "operator error ratio {}",
            g1 / g2
        );
    }
}
