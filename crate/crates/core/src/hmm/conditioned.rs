use serde::{Deserialize, Serialize};

use super::Hmm;
use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};

/// Tolerance for stochasticity of parameters derived from a factorization.
pub const FACTOR_TOL: f64 = 1e-6;

/// HMM factorized through d-dimensional state representations whose
/// leading `d_s` coordinates are semantic and trailing `d_c` coordinates
/// encode the condition.
///
/// * `T(s, s') = phi_sem(s)^T A' phi_sem(s') + phi_cond(s)^T phi_cond(s')`
/// * `B(s, o) = phi(s)^T psi(o)`
/// * `pi(s) = phi_pi^T phi(s)`
#[derive(Debug, Clone)]
pub struct ConditionedHmm {
    pub d_s: usize,
    pub d_c: usize,
    /// d x n, column s is phi_s.
    pub phi: Mat,
    /// d x m, column o is psi_o.
    pub psi: Mat,
    pub a_prime: Mat,
    pub phi_pi: Vector,
}

impl ConditionedHmm {
    pub fn new(
        d_s: usize,
        d_c: usize,
        phi: Mat,
        psi: Mat,
        a_prime: Mat,
        phi_pi: Vector,
    ) -> Result<Self> {
        let d = d_s + d_c;
        if d_c == 0 {
            return Err(Error::input(
                "condition block must have at least one dimension",
            ));
        }
        if phi.nrows() != d || psi.nrows() != d || phi_pi.len() != d {
            return Err(Error::input(format!(
                "representation dims must equal d_s + d_c = {d}"
            )));
        }
        if a_prime.shape() != (d_s, d_s) {
            return Err(Error::input(format!(
                "A' must be {d_s}x{d_s}, got {:?}",
                a_prime.shape()
            )));
        }
        Ok(Self {
            d_s,
            d_c,
            phi,
            psi,
            a_prime,
            phi_pi,
        })
    }

    pub fn dim(&self) -> usize {
        self.d_s + self.d_c
    }

    pub fn states(&self) -> usize {
        self.phi.ncols()
    }

    /// Block-diagonal kernel `diag(A', I_dc)` so that `T = Phi^T M Phi`.
    pub fn kernel(&self) -> Mat {
        let d = self.dim();
        let mut m = Mat::identity(d, d);
        m.view_mut((0, 0), (self.d_s, self.d_s))
            .copy_from(&self.a_prime);
        m
    }

    pub fn derived_t(&self) -> Mat {
        self.phi.transpose() * self.kernel() * &self.phi
    }

    pub fn derived_b(&self) -> Mat {
        self.phi.tr_mul(&self.psi)
    }

    pub fn derived_pi(&self) -> Vector {
        self.initial_from(&self.phi_pi)
    }

    pub fn initial_from(&self, phi_pi: &Vector) -> Vector {
        self.phi.tr_mul(phi_pi)
    }

    /// Materializes the explicit HMM. Entries within [`FACTOR_TOL`] of
    /// valid are clamped and rows renormalized.
    pub fn realize(&self) -> Result<Hmm> {
        let t = validate_rows("T", self.derived_t())?;
        let b = validate_rows("B", self.derived_b())?;
        let pi = validate_rows(
            "pi",
            Mat::from_row_slice(1, self.states(), self.derived_pi().as_slice()),
        )?;
        Hmm::new(pi.row(0).transpose(), t, b)
    }
}

fn validate_rows(label: &str, mut m: Mat) -> Result<Mat> {
    for (r, mut row) in m.row_iter_mut().enumerate() {
        let min = row.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(min >= -FACTOR_TOL) {
            return Err(Error::InvalidFactorization(format!(
                "{label} row {r} has entry {min}"
            )));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > FACTOR_TOL {
            return Err(Error::InvalidFactorization(format!(
                "{label} row {r} sums to {sum}"
            )));
        }
        row.apply(|x| *x = x.max(0.0));
        let sum: f64 = row.iter().sum();
        row /= sum;
    }
    Ok(m)
}

/// Residuals of the three representation conditions: equal per-dimension
/// energy, pairwise orthogonality of dimensions, and vanishing third-order
/// moments involving a condition dimension.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub r_norm: f64,
    pub r_indep: f64,
    pub r_cond: f64,
    /// Mean per-dimension squared sum (the common energy constant).
    pub c_hat: f64,
    /// `||Phi Phi^T - c_hat I||_F / c_hat`, the row-orthonormality defect.
    pub c2_defect: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Third-order moment `sum_s phi_{i,s} phi_{j,s} phi_{k,s}`.
pub(crate) fn triple_moment(phi: &Mat, i: usize, j: usize, k: usize) -> f64 {
    let (ri, rj, rk) = (phi.row(i), phi.row(j), phi.row(k));
    (0..phi.ncols()).map(|s| ri[s] * rj[s] * rk[s]).sum()
}

pub fn check_assumption1(phi: &Mat, d_s: usize, tol: f64) -> Result<AssumptionReport> {
    let d = phi.nrows();
    if d_s >= d {
        return Err(Error::input(format!(
            "d_s = {d_s} leaves no condition dimension (d = {d})"
        )));
    }
    let gram = phi * phi.transpose();
    let energies: Vec<f64> = (0..d).map(|i| gram[(i, i)]).collect();
    let c_hat = energies.iter().sum::<f64>() / d as f64;
    let r_norm = energies
        .iter()
        .map(|e| (e - c_hat).abs())
        .fold(0.0, f64::max);
    let mut r_indep = 0.0_f64;
    for i in 0..d {
        for j in 0..d {
            if i != j {
                r_indep = r_indep.max(gram[(i, j)].abs());
            }
        }
    }
    let mut r_cond = 0.0_f64;
    for k in d_s..d {
        for i in 0..d {
            for j in i..d {
                if i == j && j == k {
                    continue;
                }
                r_cond = r_cond.max(triple_moment(phi, i, j, k).abs());
            }
        }
    }
    let c2_defect = if c_hat > 0.0 {
        (&gram - Mat::identity(d, d) * c_hat).norm() / c_hat
    } else {
        f64::INFINITY
    };
    Ok(AssumptionReport {
        r_norm,
        r_indep,
        r_cond,
        c_hat,
        c2_defect,
        tol,
        pass: r_norm <= tol && r_indep <= tol && r_cond <= tol,
    })
}

/// Shifts the condition block of `phi_pi` by `delta` (length d_c) and
/// returns the shifted representation together with its initial
/// distribution normalized to sum 1. The semantic block is copied exactly.
pub fn shift_condition(
    chmm: &ConditionedHmm,
    phi_pi: &Vector,
    delta: &[f64],
) -> Result<(Vector, Vector)> {
    if delta.len() != chmm.d_c || phi_pi.len() != chmm.dim() {
        return Err(Error::input("condition shift has wrong dimension"));
    }
    let mut shifted = phi_pi.clone();
    for (k, dv) in delta.iter().enumerate() {
        shifted[chmm.d_s + k] += dv;
    }
    let raw = chmm.initial_from(&shifted);
    if raw.iter().any(|&p| p < -FACTOR_TOL) {
        return Err(Error::InvalidFactorization(
            "shifted initial distribution has negative mass".into(),
        ));
    }
    let clamped = raw.map(|p| p.max(0.0));
    let total = clamped.sum();
    if !(total > 0.0) {
        return Err(Error::InvalidFactorization(
            "shifted initial distribution has no mass".into(),
        ));
    }
    Ok((shifted, clamped / total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::random::random_stochastic;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Phi = identity with d = n: T = diag(A', I), B = Psi^T, pi = phi_pi.
    fn basis_plugin(t_sem: &Mat, b: &Mat, pi: &Vector) -> ConditionedHmm {
        let d_s = t_sem.nrows();
        let n = d_s + 1;
        ConditionedHmm::new(
            d_s,
            1,
            Mat::identity(n, n),
            b.clone(),
            t_sem.clone(),
            pi.clone(),
        )
        .unwrap()
    }

    #[test]
    fn basis_plugin_recovers_stochastic_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t_sem = random_stochastic(3, 3, &mut rng);
        let b = random_stochastic(4, 5, &mut rng);
        let pi = Vector::from_vec(vec![0.1, 0.2, 0.3, 0.4]);
        let hmm = basis_plugin(&t_sem, &b, &pi).realize().unwrap();
        let mut expect = Mat::identity(4, 4);
        expect.view_mut((0, 0), (3, 3)).copy_from(&t_sem);
        assert!((hmm.transitions() - expect).norm() < 1e-15);
        assert!((hmm.emissions() - &b).norm() < 1e-15);
        assert!((hmm.pi() - pi).norm() < 1e-15);
    }

    #[test]
    fn negative_derived_entry_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let t_sem = Mat::from_row_slice(2, 2, &[1.0 + 1e-3, -1e-3, 0.5, 0.5]);
        let b = random_stochastic(3, 3, &mut rng);
        let chmm = basis_plugin(&t_sem, &b, &Vector::from_vec(vec![0.3, 0.3, 0.4]));
        assert!(matches!(
            chmm.realize(),
            Err(Error::InvalidFactorization(_))
        ));
    }

    #[test]
    fn scaled_orthonormal_rows_have_zero_norm_and_indep_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let q = crate::linalg::random_orthogonal(6, &mut rng);
        let c: f64 = 2.5;
        let phi = q.rows(0, 3).into_owned() * c.sqrt();
        let rep = check_assumption1(&phi, 2, 1e-9).unwrap();
        assert!(rep.r_norm < 1e-12 && rep.r_indep < 1e-12);
        assert!((rep.c_hat - c).abs() < 1e-12);
        assert!(rep.c2_defect < 1e-12);
    }

    #[test]
    fn identical_rows_are_maximally_dependent() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let q = crate::linalg::random_orthogonal(5, &mut rng);
        let mut phi = q.rows(0, 3).into_owned();
        let r0 = phi.row(0).into_owned();
        phi.row_mut(1).copy_from(&r0);
        let rep = check_assumption1(&phi, 2, 1e-9).unwrap();
        assert!((rep.r_indep - rep.c_hat).abs() < 1e-12);
        assert!(!rep.pass);
    }

    #[test]
    fn requires_condition_dimension() {
        let phi = Mat::identity(3, 3);
        assert!(check_assumption1(&phi, 3, 1e-6).is_err());
    }

    #[test]
    fn shift_keeps_semantic_block_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let t_sem = random_stochastic(2, 2, &mut rng);
        let b = random_stochastic(3, 2, &mut rng);
        let pi = Vector::from_vec(vec![0.3, 0.3, 0.4]);
        let chmm = basis_plugin(&t_sem, &b, &pi);
        let (shifted, pi2) = shift_condition(&chmm, &pi, &[0.4]).unwrap();
        assert_eq!(shifted[0], pi[0]);
        assert_eq!(shifted[1], pi[1]);
        assert!((pi2.sum() - 1.0).abs() < 1e-15);
        assert!((pi2[2] - 0.8 / 1.4).abs() < 1e-15);
    }
}
