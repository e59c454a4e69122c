//! Explicit and factorized hidden Markov models, their language-model view,
//! and the initial-condition switch construction.

mod conditioned;
mod theorem;
mod view;

pub use conditioned::{check_assumption1, shift_condition, AssumptionReport, ConditionedHmm};
pub use theorem::{
    build_helper_wprime, construct_switch, switched_view_conditional, verify_lemmas,
    verify_theorem1, LemmaReport, SwitchConstruction, Theorem1Report, PINV_TOL,
};
pub use view::{build_lm_view, LmView};

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};

/// Stochasticity tolerance for explicit HMM parameters.
pub const STOCHASTIC_TOL: f64 = 1e-9;

/// Discrete HMM with initial distribution `pi`, transitions `t` (n x n)
/// and emissions `b` (n x m). `b[(s, o)] = P(o | s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hmm {
    pi: Vector,
    t: Mat,
    b: Mat,
}

fn check_distribution(label: &str, values: impl Iterator<Item = f64>) -> Result<()> {
    let mut sum = 0.0;
    for v in values {
        if !(v >= 0.0) {
            return Err(Error::input(format!(
                "{label} has negative or NaN entry {v}"
            )));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::input(format!("{label} sums to {sum}, expected 1")));
    }
    Ok(())
}

impl Hmm {
    pub fn new(pi: Vector, t: Mat, b: Mat) -> Result<Self> {
        let n = pi.len();
        if n == 0 {
            return Err(Error::input("hmm needs at least one state"));
        }
        if t.shape() != (n, n) || b.nrows() != n || b.ncols() == 0 {
            return Err(Error::input(format!(
                "inconsistent shapes: pi {n}, T {:?}, B {:?}",
                t.shape(),
                b.shape()
            )));
        }
        check_distribution("pi", pi.iter().cloned())?;
        for s in 0..n {
            check_distribution(&format!("T row {s}"), t.row(s).iter().cloned())?;
            check_distribution(&format!("B row {s}"), b.row(s).iter().cloned())?;
        }
        Ok(Self { pi, t, b })
    }

    pub fn states(&self) -> usize {
        self.pi.len()
    }

    pub fn observations(&self) -> usize {
        self.b.ncols()
    }

    pub fn pi(&self) -> &Vector {
        &self.pi
    }

    pub fn transitions(&self) -> &Mat {
        &self.t
    }

    pub fn emissions(&self) -> &Mat {
        &self.b
    }

    /// Same chain with a different initial distribution.
    pub fn with_initial(&self, pi: Vector) -> Result<Self> {
        Self::new(pi, self.t.clone(), self.b.clone())
    }

    fn check_tokens(&self, obs: &[usize]) -> Result<()> {
        let m = self.observations();
        match obs.iter().find(|&&o| o >= m) {
            Some(o) => Err(Error::input(format!(
                "token id {o} out of range for {m} observations"
            ))),
            None => Ok(()),
        }
    }

    /// Unnormalized state weights before emitting the token that follows
    /// `prefix`: `pi^T prod_t diag(p(o_t)) T`. Their sum is P(prefix).
    pub fn forward(&self, prefix: &[usize]) -> Result<Vector> {
        self.check_tokens(prefix)?;
        let mut alpha = self.pi.clone();
        for &o in prefix {
            alpha = self.advance(&alpha, o);
        }
        Ok(alpha)
    }

    fn advance(&self, alpha: &Vector, o: usize) -> Vector {
        let weighted = alpha.component_mul(&self.b.column(o));
        self.t.tr_mul(&weighted)
    }

    /// Probability of a fixed-length observation sequence via the forward
    /// product `pi^T (prod diag(p(o_t)) T) p(o_T)`.
    pub fn seq_prob(&self, obs: &[usize]) -> Result<f64> {
        if obs.is_empty() {
            return Err(Error::input("sequence must contain at least one token"));
        }
        self.check_tokens(obs)?;
        let (last, head) = obs.split_last().expect("non-empty");
        let mut alpha = self.pi.clone();
        for &o in head {
            alpha = self.advance(&alpha, o);
        }
        Ok(alpha.dot(&self.b.column(*last)))
    }

    /// `P(o | prefix)` for every observation.
    pub fn next_token_dist(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        let alpha = self.forward(prefix)?;
        let scores: Vec<f64> = (0..self.observations())
            .map(|o| alpha.dot(&self.b.column(o)))
            .collect();
        let total: f64 = scores.iter().sum();
        if !(total > 0.0) {
            return Err(Error::DegeneratePrefix {
                prefix: prefix.to_vec(),
            });
        }
        Ok(scores.into_iter().map(|x| x / total).collect())
    }
}

/// Random generators for tests and randomized verification.
pub mod random {
    use super::*;
    use rand::Rng;

    /// Row-stochastic matrix with entries bounded away from zero.
    pub fn random_stochastic<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Mat {
        let mut m = Mat::from_fn(rows, cols, |_, _| rng.gen_range(0.05..1.0));
        for mut r in m.row_iter_mut() {
            let s: f64 = r.iter().sum();
            r /= s;
        }
        m
    }

    /// HMM with strictly positive parameters.
    pub fn random_hmm<R: Rng>(n: usize, m: usize, rng: &mut R) -> Hmm {
        let pi = random_stochastic(1, n, rng)
            .transpose()
            .column(0)
            .into_owned();
        Hmm::new(
            pi,
            random_stochastic(n, n, rng),
            random_stochastic(n, m, rng),
        )
        .unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::random::*;
    use super::*;
    use crate::enumerate::{all_prefixes, map_sequences, DEFAULT_BUDGET};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_state() -> Hmm {
        Hmm::new(
            Vector::from_vec(vec![1.0, 0.0]),
            Mat::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]),
            Mat::identity(2, 2),
        )
        .unwrap()
    }

    /// Sums over hidden paths explicitly.
    fn brute_force_prob(h: &Hmm, obs: &[usize]) -> f64 {
        let n = h.states();
        let paths = n.pow(obs.len() as u32);
        (0..paths)
            .map(|idx| {
                let path = crate::enumerate::decode_index(idx, n, obs.len());
                let mut p = h.pi()[path[0]] * h.emissions()[(path[0], obs[0])];
                for t in 1..obs.len() {
                    p *= h.transitions()[(path[t - 1], path[t])] * h.emissions()[(path[t], obs[t])];
                }
                p
            })
            .sum()
    }

    #[test]
    fn two_state_example() {
        let h = two_state();
        assert!((h.seq_prob(&[0, 1]).unwrap() - 0.5).abs() < 1e-15);
        let d = h.next_token_dist(&[0]).unwrap();
        assert!((d[0] - 0.5).abs() < 1e-15 && (d[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn length_one_is_pi_dot_emission() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = random_hmm(4, 3, &mut rng);
        for o in 0..3 {
            let expect = h.pi().dot(&h.emissions().column(o));
            assert_eq!(h.seq_prob(&[o]).unwrap(), expect);
        }
    }

    #[test]
    fn deterministic_chain_has_probability_one() {
        let t = Mat::from_row_slice(3, 3, &[0., 1., 0., 0., 0., 1., 1., 0., 0.]);
        let b = Mat::from_row_slice(3, 3, &[0., 0., 1., 1., 0., 0., 0., 1., 0.]);
        let h = Hmm::new(Vector::from_vec(vec![1., 0., 0.]), t, b).unwrap();
        assert_eq!(h.seq_prob(&[2, 0, 1, 2]).unwrap(), 1.0);
    }

    #[test]
    fn uniform_hmm_gives_uniform_conditionals() {
        let n = 3;
        let m = 4;
        let h = Hmm::new(
            Vector::from_element(n, 1.0 / n as f64),
            Mat::from_element(n, n, 1.0 / n as f64),
            Mat::from_element(n, m, 1.0 / m as f64),
        )
        .unwrap();
        for p in h.next_token_dist(&[1, 3]).unwrap() {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_prefix_is_first_emission_marginal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = random_hmm(3, 5, &mut rng);
        let d = h.next_token_dist(&[]).unwrap();
        let marginal = h.emissions().tr_mul(h.pi());
        for o in 0..5 {
            assert!((d[o] - marginal[o]).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_out_of_range_and_degenerate() {
        let h = two_state();
        assert!(matches!(h.seq_prob(&[2]), Err(Error::Input(_))));
        assert!(matches!(h.seq_prob(&[]), Err(Error::Input(_))));
        assert!(matches!(
            h.next_token_dist(&[1]),
            Err(Error::DegeneratePrefix { .. })
        ));
    }

    #[test]
    fn rejects_non_stochastic() {
        let r = Hmm::new(
            Vector::from_vec(vec![0.5, 0.6]),
            Mat::identity(2, 2),
            Mat::identity(2, 2),
        );
        assert!(r.is_err());
    }

    #[test]
    fn forward_matches_brute_force_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let h = random_hmm(3, 3, &mut rng);
            let seq: Vec<usize> = (0..4).map(|_| rng.gen_range(0..3)).collect();
            let a = h.seq_prob(&seq).unwrap();
            let b = brute_force_prob(&h, &seq);
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn chain_rule_and_normalization_on_random_hmms() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let n = rng.gen_range(1..=6);
            let m = rng.gen_range(1..=6);
            let h = random_hmm(n, m, &mut rng);
            for prefix in all_prefixes(m, 3, DEFAULT_BUDGET).unwrap() {
                if prefix.is_empty() {
                    continue;
                }
                let mut chained = 1.0;
                for t in 0..prefix.len() {
                    chained *= h.next_token_dist(&prefix[..t]).unwrap()[prefix[t]];
                }
                assert!((h.seq_prob(&prefix).unwrap() - chained).abs() < 1e-12);
            }
            let total: f64 = map_sequences(m, 3, DEFAULT_BUDGET, |s| h.seq_prob(s).unwrap())
                .unwrap()
                .iter()
                .sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }
}
