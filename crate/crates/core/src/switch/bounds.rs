use super::{SwitchMatrix, SwitchedLm};
use crate::enumerate::DEFAULT_BUDGET;
use crate::error::{Error, Result};
use crate::linalg::{compensated_sum, spectral_norm, Mat};
use crate::lm::{enumerate_seq_dist, SoftmaxLm};

/// Slack added to a bound before comparing.
pub const BOUND_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct BoundCheck {
    pub lhs: f64,
    pub bound: f64,
    pub pass: bool,
}

impl BoundCheck {
    fn new(lhs: f64, bound: f64) -> Self {
        Self {
            lhs,
            bound,
            pass: lhs <= bound + BOUND_SLACK,
        }
    }
}

/// `sum_i eps_i W_i` as a switch with unit switch value.
pub fn compose(switches: &[(Mat, f64)]) -> Result<SwitchMatrix> {
    let Some((first, _)) = switches.first() else {
        return Err(Error::input("nothing to compose"));
    };
    let d = first.nrows();
    let mut total = Mat::zeros(d, d);
    for (w, eps) in switches {
        if w.shape() != (d, d) {
            return Err(Error::input(format!(
                "cannot compose {:?} with {d}x{d}",
                w.shape()
            )));
        }
        total += w * *eps;
    }
    SwitchMatrix::new(total, Mat::zeros(d, d), 1.0)
}

fn dist(lm: &SoftmaxLm, w: &Mat, eps: f64, len: usize) -> Result<Vec<f64>> {
    enumerate_seq_dist(&SwitchedLm::new(lm, w.clone(), eps)?, len, DEFAULT_BUDGET)
}

/// Distance of `P(.|k eps W)` from the interpolation `(1-k) P + k P(.|eps W)`
/// over all length-`len` sequences, against `2|k(1-k)| eps^2 L^2 lam (e^lam - 1)`
/// with `lam` the spectral norm of `W`.
pub fn theorem2_check(lm: &SoftmaxLm, w: &Mat, eps: f64, k: f64, len: usize) -> Result<BoundCheck> {
    let base = dist(lm, w, 0.0, len)?;
    let one = dist(lm, w, eps, len)?;
    let scaled = dist(lm, w, k * eps, len)?;
    let lhs = compensated_sum(
        scaled
            .iter()
            .zip(base.iter().zip(&one))
            .map(|(s, (b, o))| (s - ((1.0 - k) * b + k * o)).abs()),
    );
    let lam = spectral_norm(w);
    let l = len as f64;
    let bound = 2.0 * (k * (1.0 - k)).abs() * eps * eps * l * l * lam * lam.exp_m1();
    Ok(BoundCheck::new(lhs, bound))
}

/// Distance of `P(.|eps(W1+W2))` from `P(.|eps W1) + P(.|eps W2) - P` against
/// `10 eps d L^2 D^2`, `D` the larger spectral norm.
pub fn theorem3_check(
    lm: &SoftmaxLm,
    w1: &Mat,
    w2: &Mat,
    eps: f64,
    len: usize,
) -> Result<BoundCheck> {
    if w1.shape() != w2.shape() {
        return Err(Error::input("switches must have equal shape"));
    }
    let base = dist(lm, w1, 0.0, len)?;
    let p1 = dist(lm, w1, eps, len)?;
    let p2 = dist(lm, w2, eps, len)?;
    let both = dist(lm, &(w1 + w2), eps, len)?;
    // grouped so that a zero switch cancels exactly
    let lhs =
        compensated_sum((0..base.len()).map(|i| ((both[i] - p1[i]) - (p2[i] - base[i])).abs()));
    let big_d = spectral_norm(w1).max(spectral_norm(w2));
    let l = len as f64;
    let bound = 10.0 * eps * lm.dim() as f64 * l * l * big_d * big_d;
    Ok(BoundCheck::new(lhs, bound))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gaussian;
    use crate::lm::LanguageModel;
    use crate::switch::testutil::{random_lm, trained_lm};
    use crate::switch::{switched_conditional, EPS0};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn compose_single_and_cancel() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = gaussian(3, 3, 1.0, &mut rng);
        assert_eq!(compose(&[(w.clone(), 0.5)]).unwrap().w, &w * 0.5);
        let zero = compose(&[(w.clone(), 0.5), (-&w, 0.5)]).unwrap();
        assert_eq!(zero.w, Mat::zeros(3, 3));
        let lm = random_lm(4, 3, 0);
        assert_eq!(
            switched_conditional(&lm, &zero, 1.0, &[1]).unwrap(),
            lm.conditional(&[1]).unwrap()
        );
        assert!(compose(&[(w, 1.0), (Mat::zeros(2, 2), 1.0)]).is_err());
    }

    #[test]
    fn compose_equals_presummed_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (w1, w2) = (gaussian(3, 3, 1.0, &mut rng), gaussian(3, 3, 1.0, &mut rng));
        let lm = random_lm(4, 3, 1);
        let composed = compose(&[(w1.clone(), 0.2), (w2.clone(), -0.1)]).unwrap();
        let summed = SwitchMatrix::new(&w1 * 0.2 + &w2 * -0.1, Mat::zeros(3, 3), 1.0).unwrap();
        assert_eq!(
            switched_conditional(&lm, &composed, 1.0, &[2]).unwrap(),
            switched_conditional(&lm, &summed, 1.0, &[2]).unwrap()
        );
    }

    #[test]
    fn theorem2_endpoints_are_exact() {
        let lm = random_lm(3, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = gaussian(3, 3, 1.0, &mut rng);
        for k in [0.0, 1.0] {
            let r = theorem2_check(&lm, &w, EPS0, k, 3).unwrap();
            assert!(r.lhs < 1e-12 && r.pass);
        }
    }

    #[test]
    fn theorem2_holds_on_trained_model() {
        let (lm, _) = trained_lm(3, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = gaussian(4, 4, 4.0, &mut rng);
        for k in [-1.0, -0.5, 0.25, 0.5, 0.75, 1.5, 2.0] {
            let r = theorem2_check(&lm, &w, EPS0, k, 3).unwrap();
            assert!(r.pass, "k={k}: {r:?}");
            assert!(r.lhs > 0.0);
        }
    }

    #[test]
    fn theorem3_zero_switch_is_exact() {
        let lm = random_lm(3, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = gaussian(3, 3, 1.0, &mut rng);
        let z = Mat::zeros(3, 3);
        assert_eq!(theorem3_check(&lm, &w, &z, EPS0, 3).unwrap().lhs, 0.0);
        assert_eq!(theorem3_check(&lm, &z, &w, EPS0, 3).unwrap().lhs, 0.0);
        assert_eq!(theorem3_check(&lm, &z, &z, EPS0, 3).unwrap().lhs, 0.0);
    }

    #[test]
    fn theorem3_shrinks_with_eps() {
        let (lm, _) = trained_lm(3, 4, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (w1, w2) = (gaussian(4, 4, 4.0, &mut rng), gaussian(4, 4, 4.0, &mut rng));
        let full = theorem3_check(&lm, &w1, &w2, EPS0, 3).unwrap();
        let half = theorem3_check(&lm, &w1, &w2, EPS0 / 2.0, 3).unwrap();
        assert!(full.pass && half.pass);
        assert!(half.lhs <= full.lhs);
    }

    #[test]
    fn switched_distribution_is_normalized() {
        let (lm, _) = trained_lm(3, 4, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w = gaussian(4, 4, 1.0, &mut rng);
        for eps in [0.0, EPS0, 0.5, -2.0] {
            let total: f64 = dist(&lm, &w, eps, 3).unwrap().iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }
}
