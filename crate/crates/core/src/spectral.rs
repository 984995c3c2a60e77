//! Closed-loop matrix `A = kDBᵀ`, its Metzler eigenstructure, and the
//! closed-form steady-state predictions derived from it.
//!
//! For a strongly connected graph `A` is an irreducible rate matrix: zero row
//! sums, nonnegative off-diagonals, a simple eigenvalue at zero with right
//! eigenvector `1` and a positive left eigenvector `z` (normalized `1ᵀz = 1`).
//! Every other eigenvalue has strictly negative real part, so `e^{At} → 1zᵀ`.
//!
//! The stable block is represented without diagonalizing `A`. `T₂` is an
//! orthonormal basis of `z⊥ = range(A)`, which is `A`-invariant, so
//! `A T₂ = T₂ Λ` with `Λ = T₂ᵀ A T₂` and `V₂ᵀ = T₂ᵀ (I − 1zᵀ)`. This works
//! for defective `A` as well.

use nalgebra::{Complex, DMatrix, DVector};

use crate::dynamics::SystemParams;
use crate::error::{Error, Result};
use crate::graph::{IncidenceSet, Topology};

/// Number of slowest e-foldings used as the default "t → ∞" horizon.
pub const HORIZON_EFOLDS: f64 = 50.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopMatrix {
    /// `k D Bᵀ`, `n x n`.
    pub a: DMatrix<f64>,
    /// `k D (λ − β_off)`, length `n`.
    pub r: DVector<f64>,
    pub k: f64,
}

impl ClosedLoopMatrix {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
}

/// Builds `A = kDBᵀ` and `r = kD(λ − β_off)`. Offsets must be explicit.
pub fn build_closed_loop(inc: &IncidenceSet, params: &SystemParams) -> Result<ClosedLoopMatrix> {
    let (n, m) = inc.dest.shape();
    if !(params.k > 0.0 && params.k.is_finite()) {
        return Err(Error::param("k", format!("gain must be positive, got {}", params.k)));
    }
    Error::check_len("lambda", params.lambda.len(), m)?;
    Error::check_len("omega_u", params.omega_u.len(), n)?;
    Error::check_len("q", params.q.len(), n)?;
    let beta_off = params.beta_off.explicit()?;
    Error::check_len("beta_off", beta_off.len(), m)?;

    let a = (&inc.dest * inc.incidence.transpose()) * params.k;
    let r = (&inc.dest * (&params.lambda - beta_off)) * params.k;
    Ok(ClosedLoopMatrix { a, r, k: params.k })
}

/// Strongly connected test on the sparsity pattern of a Metzler matrix:
/// `a[(i, j)] > 0` for `i != j` is an arc `j -> i`.
fn metzler_pattern_topology(a: &DMatrix<f64>) -> Result<Topology> {
    let n = a.nrows();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && a[(i, j)] > 0.0 {
                edges.push(crate::graph::Edge::new(j, i));
            }
        }
    }
    Topology::new(n, edges)
}

#[derive(Debug, Clone)]
pub struct SpectralData {
    /// Positive left null vector of `A` with `1ᵀz = 1`.
    pub z: DVector<f64>,
    /// Spectral projector `1zᵀ` of the zero eigenvalue.
    pub w: DMatrix<f64>,
    /// Always zero for a rate matrix; kept as the measured `‖zᵀA‖∞`.
    pub metzler_residual: f64,
    /// `(n−1) x (n−1)` restriction of `A` to `z⊥`.
    pub stable_block: DMatrix<f64>,
    /// `n x (n−1)`, orthonormal basis of `z⊥`.
    pub t2: DMatrix<f64>,
    /// `n x (n−1)`, with `V₂ᵀ T₂ = I` and `V₂ᵀ 1 = 0`.
    pub v2: DMatrix<f64>,
    /// Group inverse of `A` from the bordered system.
    pub group_inverse: DMatrix<f64>,
    /// Eigenvalues of the stable block, sorted by decreasing real part.
    pub stable_eigenvalues: Vec<Complex<f64>>,
}

impl SpectralData {
    pub fn n(&self) -> usize {
        self.z.len()
    }

    /// `|Re λ₂|` of the slowest stable eigenvalue.
    pub fn slowest_rate(&self) -> f64 {
        self.stable_eigenvalues
            .first()
            .map(|l| -l.re)
            .unwrap_or(f64::INFINITY)
    }

    /// `50 / |Re λ₂|`. A single-node system has nothing to converge and
    /// reports zero.
    pub fn convergence_horizon(&self) -> f64 {
        let rate = self.slowest_rate();
        if rate.is_finite() {
            HORIZON_EFOLDS / rate
        } else {
            0.0
        }
    }

    /// Full spectrum of `A`: zero followed by the stable eigenvalues.
    pub fn spectrum(&self) -> Vec<Complex<f64>> {
        std::iter::once(Complex::new(0.0, 0.0))
            .chain(self.stable_eigenvalues.iter().copied())
            .collect()
    }

    /// `T₂ Λ⁻¹ V₂ᵀ`, the eigen-factor route to the group inverse.
    pub fn group_inverse_from_factors(&self) -> Result<DMatrix<f64>> {
        if self.stable_block.nrows() == 0 {
            return Ok(DMatrix::zeros(self.n(), self.n()));
        }
        let inv = self
            .stable_block
            .clone()
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("stable block is singular".into()))?;
        Ok(&self.t2 * inv * self.v2.transpose())
    }
}

/// Computes `z`, `W`, the stable block and the group inverse of `A`.
pub fn metzler_eigenvector(clm: &ClosedLoopMatrix) -> Result<SpectralData> {
    let a = &clm.a;
    let n = a.nrows();
    if let Some(node) = metzler_pattern_topology(a)?.unreachable_node() {
        return Err(Error::NotStronglyConnected { node: node + 1 });
    }

    // Rows of Aᵀ sum to zero and have rank n−1, so any one of them can be
    // swapped for the normalization 1ᵀz = 1.
    let mut system = a.transpose();
    system.row_mut(n - 1).fill(1.0);
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let lu = system.clone().lu();
    let mut z = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("null space solve for z failed".into()))?;
    // one round of iterative refinement
    let resid = &rhs - &system * &z;
    if let Some(dz) = lu.solve(&resid) {
        z += dz;
    }
    if z.iter().any(|&v| v <= 0.0 || !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "left null vector is not positive: {:?}",
            z.as_slice()
        )));
    }
    let norm_a = inf_norm(a);
    let metzler_residual = row_inf_norm(&(z.transpose() * a));
    if metzler_residual > 1e-12 * norm_a.max(f64::MIN_POSITIVE) {
        return Err(Error::Numerical(format!(
            "zᵀA residual {metzler_residual:e} exceeds 1e-12·‖A‖∞"
        )));
    }

    let ones = DVector::from_element(n, 1.0);
    let w = &ones * z.transpose();

    let t2 = complement_basis(&z);
    let stable_block = t2.transpose() * a * &t2;
    let v2 = (DMatrix::identity(n, n) - w.transpose()) * &t2;

    let mut stable_eigenvalues: Vec<Complex<f64>> = if n > 1 {
        stable_block.complex_eigenvalues().iter().copied().collect()
    } else {
        Vec::new()
    };
    stable_eigenvalues.sort_by(|x, y| y.re.total_cmp(&x.re).then(y.im.total_cmp(&x.im)));
    if let Some(worst) = stable_eigenvalues.first() {
        if worst.re >= 0.0 {
            return Err(Error::Numerical(format!(
                "stable block has eigenvalue {worst} with nonnegative real part"
            )));
        }
    }

    let group_inverse = bordered_group_inverse(a, &z)?;

    Ok(SpectralData {
        z,
        w,
        metzler_residual,
        stable_block,
        t2,
        v2,
        group_inverse,
        stable_eigenvalues,
    })
}

/// Columns 2..n of the Householder reflector that maps `z/‖z‖` to `±e₁`.
fn complement_basis(z: &DVector<f64>) -> DMatrix<f64> {
    let n = z.len();
    let u = z.normalize();
    let mut v = u.clone();
    v[0] += if u[0] >= 0.0 { 1.0 } else { -1.0 };
    let vv = v.dot(&v);
    let h = DMatrix::identity(n, n) - (&v * v.transpose()) * (2.0 / vv);
    h.columns(1, n - 1).into_owned()
}

/// Solves `[[A, 1], [zᵀ, 0]] [G; μᵀ] = [I; 0]`. The top block is the unique
/// `G` with `AG = I − W` and `zᵀG = 0`, i.e. the group inverse of `A`.
fn bordered_group_inverse(a: &DMatrix<f64>, z: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut bordered = DMatrix::zeros(n + 1, n + 1);
    bordered.view_mut((0, 0), (n, n)).copy_from(a);
    bordered.view_mut((0, n), (n, 1)).fill(1.0);
    bordered.view_mut((n, 0), (1, n)).copy_from(&z.transpose());
    let mut rhs = DMatrix::zeros(n + 1, n);
    rhs.view_mut((0, 0), (n, n)).fill_with_identity();
    let sol = bordered
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("bordered system is singular".into()))?;
    Ok(sol.rows(0, n).into_owned())
}

/// Consensus frequency `W(q + ω_u)`, valid when offsets are feasible.
pub fn predict_omega_ss(sd: &SpectralData, params: &SystemParams) -> DVector<f64> {
    &sd.w * (&params.q + &params.omega_u)
}

/// `W(q + r + ω_u)`, valid for any offsets.
pub fn predict_omega_ss_general(
    sd: &SpectralData,
    clm: &ClosedLoopMatrix,
    params: &SystemParams,
) -> DVector<f64> {
    &sd.w * (&params.q + &clm.r + &params.omega_u)
}

/// Steady-state correction for controller offset `q`:
/// `F(q) = (W − I)ω_u + W(q + r)`.
pub fn f_map(
    sd: &SpectralData,
    clm: &ClosedLoopMatrix,
    params: &SystemParams,
    q: &DVector<f64>,
) -> DVector<f64> {
    let drift = &sd.w * &params.omega_u - &params.omega_u;
    drift + &sd.w * (q + &clm.r)
}

/// Limit of the buffer occupancy for a fixed offset `q`:
/// `λ − Bᵀ G (ω_u + q + r)`.
pub fn predict_beta_ss(
    sd: &SpectralData,
    inc: &IncidenceSet,
    clm: &ClosedLoopMatrix,
    params: &SystemParams,
    q: &DVector<f64>,
) -> DVector<f64> {
    let drive = &params.omega_u + q + &clm.r;
    &params.lambda - inc.incidence.transpose() * (&sd.group_inverse * drive)
}

/// `e^{At}` for `t ≥ 0`.
pub fn matrix_exponential(a: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::param("t", format!("must be finite and nonnegative, got {t}")));
    }
    Ok((a * t).exp())
}

/// Heuristic Jordan-block detector: clusters real eigenvalues within `1e-6`
/// and compares algebraic multiplicity with the nullity of `A − μI`.
/// Complex clusters are not examined.
pub fn is_defective(a: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    if n < 2 {
        return false;
    }
    let mut eig: Vec<Complex<f64>> = a.complex_eigenvalues().iter().copied().collect();
    eig.sort_by(|x, y| x.re.total_cmp(&y.re));
    let scale = inf_norm(a).max(1.0);
    let mut i = 0;
    while i < eig.len() {
        let mut j = i + 1;
        while j < eig.len() && (eig[j] - eig[i]).norm() < 1e-6 * scale {
            j += 1;
        }
        let mult = j - i;
        let centre = eig[i..j].iter().map(|c| c.re).sum::<f64>() / mult as f64;
        let real = eig[i..j].iter().all(|c| c.im.abs() < 1e-6 * scale);
        if mult > 1 && real {
            let shifted = a - DMatrix::identity(n, n) * centre;
            let sv = shifted.singular_values();
            let nullity = sv.iter().filter(|&&s| s < 1e-6 * scale).count();
            if nullity < mult {
                return true;
            }
        }
        i = j;
    }
    false
}

pub(crate) fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn row_inf_norm(v: &nalgebra::RowDVector<f64>) -> f64 {
    v.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Offsets, SystemParams};
    use crate::graph::{build_incidence, Topology};
    use approx::assert_abs_diff_eq;

    fn closed_loop(n: usize, pairs: &[(usize, usize)], k: f64) -> (IncidenceSet, ClosedLoopMatrix) {
        let topo = Topology::from_one_based(n, pairs).unwrap();
        let inc = build_incidence(&topo);
        let mut params = SystemParams::uniform(&topo, k, DVector::from_element(n, 1.0), 10.0);
        params.beta_off = Offsets::Explicit(params.lambda.clone());
        let clm = build_closed_loop(&inc, &params).unwrap();
        (inc, clm)
    }

    #[test]
    fn two_cycle_matrix() {
        let (_, clm) = closed_loop(2, &[(1, 2), (2, 1)], 0.1);
        assert_eq!(clm.a, DMatrix::from_row_slice(2, 2, &[-0.1, 0.1, 0.1, -0.1]));
        assert_eq!(clm.r, DVector::zeros(2));
    }

    #[test]
    fn ring_plus_chord_matrix() {
        let (_, clm) = closed_loop(3, &[(1, 2), (2, 3), (3, 1), (1, 3)], 1.0);
        // Row i gets +1 at each in-neighbour and −in_degree on the diagonal.
        let expected = DMatrix::from_row_slice(3, 3, &[-1., 0., 1., 1., -1., 0., 1., 1., -2.]);
        assert_eq!(clm.a, expected);
    }

    #[test]
    fn rejects_unmaterialized_offsets() {
        let topo = Topology::from_one_based(2, &[(1, 2), (2, 1)]).unwrap();
        let params = SystemParams::uniform(&topo, 0.1, DVector::from_element(2, 1.0), 10.0);
        let err = build_closed_loop(&build_incidence(&topo), &params).unwrap_err();
        assert_eq!(err, Error::OffsetsNotMaterialized);
    }

    #[test]
    fn dimension_mismatch() {
        let topo = Topology::from_one_based(2, &[(1, 2), (2, 1)]).unwrap();
        let mut params = SystemParams::uniform(&topo, 0.1, DVector::from_element(2, 1.0), 10.0);
        params.beta_off = Offsets::Explicit(DVector::from_element(3, 10.0));
        let err = build_closed_loop(&build_incidence(&topo), &params).unwrap_err();
        assert!(matches!(err, Error::Dimension { what: "beta_off", got: 3, expected: 2 }));
    }

    #[test]
    fn symmetric_z() {
        let (_, clm) = closed_loop(2, &[(1, 2), (2, 1)], 0.1);
        let sd = metzler_eigenvector(&clm).unwrap();
        assert_abs_diff_eq!(sd.z[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(sd.z[1], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(sd.slowest_rate(), 0.2, epsilon = 1e-14);

        let (_, ring) = closed_loop(3, &[(1, 2), (2, 3), (3, 1)], 1.0);
        let sd = metzler_eigenvector(&ring).unwrap();
        for v in sd.z.iter() {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-14);
        }
        // circulant: e^{±2πi/3} − 1
        assert_eq!(sd.stable_eigenvalues.len(), 2);
        for ev in &sd.stable_eigenvalues {
            assert_abs_diff_eq!(ev.re, -1.5, epsilon = 1e-12);
            assert_abs_diff_eq!(ev.im.abs(), 3f64.sqrt() / 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn ring_plus_chord_z() {
        let (_, clm) = closed_loop(3, &[(1, 2), (2, 3), (3, 1), (1, 3)], 1.0);
        let sd = metzler_eigenvector(&clm).unwrap();
        // hand check: 0.5·(−1,0,1) + 0.25·(1,−1,0) + 0.25·(1,1,−2) = 0
        assert_abs_diff_eq!(sd.z, DVector::from_vec(vec![0.5, 0.25, 0.25]), epsilon = 1e-15);
    }

    #[test]
    fn reducible_matrix_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.1, -0.1]);
        let clm = ClosedLoopMatrix { a, r: DVector::zeros(2), k: 0.1 };
        let err = metzler_eigenvector(&clm).unwrap_err();
        assert!(err.to_string().contains("not strongly connected"));
    }

    #[test]
    fn group_inverse_routes_agree() {
        let (_, clm) = closed_loop(4, &[(1, 2), (2, 3), (3, 4), (4, 1), (1, 3), (4, 2)], 0.7);
        let sd = metzler_eigenvector(&clm).unwrap();
        let g = &sd.group_inverse;
        let n = 4;
        let i_minus_w = DMatrix::identity(n, n) - &sd.w;
        assert_abs_diff_eq!(g * &clm.a, i_minus_w.clone(), epsilon = 1e-12);
        assert_abs_diff_eq!(&clm.a * g, i_minus_w, epsilon = 1e-12);
        assert_abs_diff_eq!(g * &sd.w, DMatrix::zeros(n, n), epsilon = 1e-12);
        let via_factors = sd.group_inverse_from_factors().unwrap();
        assert_abs_diff_eq!(via_factors, g.clone(), epsilon = 1e-12);
        // A = T₂ Λ V₂ᵀ
        assert_abs_diff_eq!(&sd.t2 * &sd.stable_block * sd.v2.transpose(), clm.a.clone(), epsilon = 1e-12);
    }

    #[test]
    fn e1_predictions() {
        let topo = Topology::from_one_based(2, &[(1, 2), (2, 1)]).unwrap();
        let inc = build_incidence(&topo);
        let mut params =
            SystemParams::uniform(&topo, 0.1, DVector::from_vec(vec![1.00, 1.02]), 10.0);
        params.beta_off = Offsets::Explicit(DVector::from_vec(vec![10.0, 10.0]));
        let clm = build_closed_loop(&inc, &params).unwrap();
        let sd = metzler_eigenvector(&clm).unwrap();

        let omega = predict_omega_ss(&sd, &params);
        assert_abs_diff_eq!(omega, DVector::from_element(2, 1.01), epsilon = 1e-15);

        let zero = DVector::zeros(2);
        let f0 = f_map(&sd, &clm, &params, &zero);
        assert_abs_diff_eq!(f0, DVector::from_vec(vec![0.01, -0.01]), epsilon = 1e-15);

        // Equilibrium algebra: c_ss = k(β_ss − β_off) at each destination,
        // so β_{2→1} = 10 + 0.01/0.1 and β_{1→2} = 10 − 0.01/0.1.
        let beta = predict_beta_ss(&sd, &inc, &clm, &params, &zero);
        assert_abs_diff_eq!(beta, DVector::from_vec(vec![9.9, 10.1]), epsilon = 1e-13);

        // F(F(0)) = (W − I)ω_u under feasibility
        let ff = f_map(&sd, &clm, &params, &f0);
        assert_abs_diff_eq!(ff, f0, epsilon = 1e-15);
    }

    #[test]
    fn weighted_consensus() {
        let topo = Topology::from_one_based(3, &[(1, 2), (2, 3), (3, 1), (1, 3)]).unwrap();
        let inc = build_incidence(&topo);
        let mut params =
            SystemParams::uniform(&topo, 1.0, DVector::from_vec(vec![0.96, 1.00, 1.08]), 10.0);
        params.beta_off = Offsets::Explicit(params.lambda.clone());
        let clm = build_closed_loop(&inc, &params).unwrap();
        let sd = metzler_eigenvector(&clm).unwrap();
        // 0.5·0.96 + 0.25·1.00 + 0.25·1.08
        let omega = predict_omega_ss(&sd, &params);
        assert_abs_diff_eq!(omega, DVector::from_element(3, 1.00), epsilon = 1e-14);

        params.omega_u = DVector::from_element(3, 1.0);
        let omega = predict_omega_ss(&sd, &params);
        assert_abs_diff_eq!(omega, DVector::from_element(3, 1.0), epsilon = 1e-15);
        let f0 = f_map(&sd, &clm, &params, &DVector::zeros(3));
        assert_abs_diff_eq!(f0, DVector::zeros(3), epsilon = 1e-15);
        let beta = predict_beta_ss(&sd, &inc, &clm, &params, &DVector::zeros(3));
        assert_abs_diff_eq!(beta, params.lambda.clone(), epsilon = 1e-13);
    }

    #[test]
    fn exponential_closed_form() {
        let (_, clm) = closed_loop(2, &[(1, 2), (2, 1)], 0.1);
        let e = matrix_exponential(&clm.a, 5.0).unwrap();
        let d = (-1.0f64).exp();
        let expected = DMatrix::from_row_slice(2, 2, &[1. + d, 1. - d, 1. - d, 1. + d]) * 0.5;
        assert_abs_diff_eq!(e, expected, epsilon = 1e-14);
        assert_eq!(matrix_exponential(&clm.a, 0.0).unwrap(), DMatrix::identity(2, 2));
        assert!(matrix_exponential(&clm.a, -1.0).is_err());
    }

    #[test]
    fn exponential_limit_is_projector() {
        let (_, clm) = closed_loop(3, &[(1, 2), (2, 3), (3, 1), (1, 3)], 1.0);
        let sd = metzler_eigenvector(&clm).unwrap();
        let e = matrix_exponential(&clm.a, sd.convergence_horizon()).unwrap();
        assert_abs_diff_eq!(e, sd.w.clone(), epsilon = 1e-8);
    }

    #[test]
    fn defective_detection() {
        let j = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, -1.0]);
        assert!(is_defective(&j));
        assert!(!is_defective(&DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0])));
        let (_, clm) = closed_loop(2, &[(1, 2), (2, 1)], 0.1);
        assert!(!is_defective(&clm.a));
    }
}
