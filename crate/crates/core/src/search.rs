//! Gradient search for state representations that satisfy the
//! representation conditions while inducing a stochastic transition
//! matrix `T = Phi^T Phi`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::enumerate::{all_prefixes, DEFAULT_BUDGET};
use crate::error::{Error, Result};
use crate::hmm::{
    build_helper_wprime, check_assumption1, construct_switch, shift_condition, verify_lemmas,
    verify_theorem1, AssumptionReport, ConditionedHmm, LemmaReport, LmView, Theorem1Report,
};
use crate::linalg::{self, Mat, Vector};
use crate::optim::{Adam, AdamConfig, Plateau};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchConfig {
    pub n: usize,
    pub d_s: usize,
    pub d_c: usize,
    pub init_var: f64,
    pub lr: f64,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub max_steps: usize,
    pub target_loss: f64,
    pub seeds: Vec<u64>,
}

impl Default for SearchConfig {
    /// Desk-scale problem: 40 states, 7 semantic and 1 condition dimension.
    fn default() -> Self {
        Self {
            n: 40,
            d_s: 7,
            d_c: 1,
            init_var: 1e-3,
            lr: 1e-3,
            plateau_patience: 100,
            plateau_factor: 0.5,
            max_steps: 100_000,
            target_loss: 1e-5,
            seeds: vec![0, 1, 2, 3],
        }
    }
}

impl SearchConfig {
    /// 200 states, 20 semantic dimensions, 500k steps.
    pub fn full_scale() -> Self {
        Self {
            n: 200,
            d_s: 20,
            max_steps: 500_000,
            ..Self::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.d_s + self.d_c
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_c < 1 {
            return Err(Error::input("d_c must be at least 1"));
        }
        if self.n <= self.dim() {
            return Err(Error::input(format!(
                "n = {} must exceed d_s + d_c = {}",
                self.n,
                self.dim()
            )));
        }
        if !(self.lr > 0.0) || !(self.init_var > 0.0) {
            return Err(Error::input("lr and init_var must be positive"));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::input("plateau_factor must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Rough work estimate above which a run takes more than a few minutes.
    pub fn is_long_running(&self) -> bool {
        let per_step = (self.n * self.n * self.dim()) as f64;
        per_step * self.max_steps as f64 > 1e11
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub norm: f64,
    pub dist: f64,
    pub independence: f64,
    pub conditional: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.norm + self.dist + self.independence + self.conditional
    }
}

/// Third-order moments `tau[i][j][k - d_s]` with the all-equal entries
/// zeroed (they are not constrained).
fn masked_moments(phi: &Mat, d_s: usize) -> Vec<f64> {
    let (d, n) = phi.shape();
    let d_c = d - d_s;
    let mut tau = vec![0.0; d * d * d_c];
    for i in 0..d {
        for j in i..d {
            for kc in 0..d_c {
                let k = d_s + kc;
                if i == j && j == k {
                    continue;
                }
                let mut acc = 0.0;
                for s in 0..n {
                    acc += phi[(i, s)] * phi[(j, s)] * phi[(k, s)];
                }
                tau[(i * d + j) * d_c + kc] = acc;
                tau[(j * d + i) * d_c + kc] = acc;
            }
        }
    }
    tau
}

struct Evaluation {
    terms: LossTerms,
    grad: Option<Mat>,
}

fn evaluate(phi: &Mat, d_s: usize, with_grad: bool) -> Evaluation {
    let (d, n) = phi.shape();
    let d_c = d - d_s;

    // equal energy per dimension
    let gram = phi * phi.transpose();
    let mean = (0..d).map(|i| gram[(i, i)]).sum::<f64>() / d as f64;
    let norm_res: Vec<f64> = (0..d).map(|i| gram[(i, i)] - mean).collect();
    let norm = norm_res.iter().map(|r| r * r).sum();

    // stochastic T = Phi^T Phi
    let t = phi.tr_mul(phi);
    let u: Vector = phi.column_sum();
    let row_res: Vector = phi.tr_mul(&u).add_scalar(-1.0);
    let hinge: f64 = t.iter().map(|&x| (-x).max(0.0)).sum();
    let dist = hinge + row_res.norm_squared();

    // orthogonal dimensions
    let mut off = gram.clone();
    off.fill_diagonal(0.0);
    let independence = off.norm_squared();

    let tau = masked_moments(phi, d_s);
    let conditional = tau.iter().map(|x| x * x).sum();

    let terms = LossTerms {
        norm,
        dist,
        independence,
        conditional,
    };
    if !with_grad {
        return Evaluation { terms, grad: None };
    }

    let mut grad = Mat::zeros(d, n);
    for s in 0..n {
        for i in 0..d {
            grad[(i, s)] = 4.0 * norm_res[i] * phi[(i, s)];
        }
    }
    let active = t.map(|x| if x < 0.0 { -1.0 } else { 0.0 });
    grad += phi * active * 2.0;
    grad += &u * row_res.transpose() * 2.0;
    let phi_r = phi * &row_res;
    for mut col in grad.column_iter_mut() {
        col.axpy(2.0, &phi_r, 1.0);
    }
    grad += off * phi * 4.0;
    for a in 0..d {
        for s in 0..n {
            let mut acc = 0.0;
            for j in 0..d {
                for kc in 0..d_c {
                    acc += 4.0 * tau[(a * d + j) * d_c + kc] * phi[(j, s)] * phi[(d_s + kc, s)];
                }
            }
            if a >= d_s {
                let kc = a - d_s;
                for i in 0..d {
                    for j in 0..d {
                        acc += 2.0 * tau[(i * d + j) * d_c + kc] * phi[(i, s)] * phi[(j, s)];
                    }
                }
            }
            grad[(a, s)] += acc;
        }
    }
    Evaluation {
        terms,
        grad: Some(grad),
    }
}

pub fn loss_terms(phi: &Mat, d_s: usize) -> LossTerms {
    evaluate(phi, d_s, false).terms
}

/// Analytic gradient of the total loss (subgradient 0 at the hinge kink).
pub fn loss_gradient(phi: &Mat, d_s: usize) -> Mat {
    evaluate(phi, d_s, true).grad.expect("requested")
}

/// True when a step of size `h` on entry (a, s) could flip the sign of an
/// entry of `T = Phi^T Phi`, where the hinge term is not differentiable.
fn near_hinge_kink(phi: &Mat, t: &Mat, a: usize, s: usize, h: f64) -> bool {
    (0..phi.ncols()).any(|u| {
        let slope = if u == s {
            2.0 * phi[(a, s)].abs() + h
        } else {
            phi[(a, u)].abs()
        };
        t[(s, u)].abs() <= 2.0 * h * slope
    })
}

/// Relative error between the analytic gradient and central differences
/// on `samples` random coordinates, skipping coordinates within a step of
/// the hinge kink.
pub fn gradient_check<R: Rng>(phi: &Mat, d_s: usize, samples: usize, h: f64, rng: &mut R) -> f64 {
    let grad = loss_gradient(phi, d_s);
    let t = phi.tr_mul(phi);
    let d = phi.nrows();
    let mut num = Vec::with_capacity(samples);
    let mut ana = Vec::with_capacity(samples);
    let mut attempts = 0;
    while num.len() < samples && attempts < 100 * samples {
        attempts += 1;
        let idx = rng.gen_range(0..phi.len());
        if near_hinge_kink(phi, &t, idx % d, idx / d, h) {
            continue;
        }
        let mut plus = phi.clone();
        let mut minus = phi.clone();
        plus[idx] += h;
        minus[idx] -= h;
        let fd = (loss_terms(&plus, d_s).total() - loss_terms(&minus, d_s).total()) / (2.0 * h);
        num.push(fd);
        ana.push(grad[idx]);
    }
    let diff: f64 = num
        .iter()
        .zip(&ana)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = num.iter().map(|a| a * a).sum::<f64>().sqrt();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchResult {
    pub seed: u64,
    #[serde(skip)]
    pub phi: Mat,
    pub d_s: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub loss_terms: LossTerms,
    pub steps_used: usize,
    pub converged: bool,
    /// Step at which the loss became non-finite.
    pub diverged_at: Option<usize>,
    /// Best loss so far, sampled every 1000 steps.
    pub best_trace: Vec<(usize, f64)>,
    /// Finite-difference gradient errors at every 10k-step checkpoint.
    pub gradient_checks: Vec<(usize, f64)>,
}

pub const CHECKPOINT_EVERY: usize = 10_000;
const TRACE_EVERY: usize = 1_000;

/// Runs one seed. Keeps the best iterate seen.
pub fn search_seed(cfg: &SearchConfig, seed: u64) -> Result<SearchResult> {
    cfg.validate()?;
    let d = cfg.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phi = linalg::gaussian(d, cfg.n, cfg.init_var, &mut rng);
    let mut check_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut adam = Adam::new(phi.len(), AdamConfig::with_lr(cfg.lr));
    let mut plateau = Plateau::new(cfg.plateau_patience, cfg.plateau_factor);
    let mut lr = cfg.lr;

    let initial = loss_terms(&phi, cfg.d_s);
    let mut best_phi = phi.clone();
    let mut best_terms = initial;
    let mut result = SearchResult {
        seed,
        phi: Mat::zeros(0, 0),
        d_s: cfg.d_s,
        initial_loss: initial.total(),
        final_loss: initial.total(),
        loss_terms: initial,
        steps_used: 0,
        converged: false,
        diverged_at: None,
        best_trace: vec![(0, initial.total())],
        gradient_checks: Vec::new(),
    };

    for step in 0..cfg.max_steps {
        let eval = evaluate(&phi, cfg.d_s, true);
        let loss = eval.terms.total();
        if !loss.is_finite() {
            result.diverged_at = Some(step);
            break;
        }
        if loss < best_terms.total() {
            best_terms = eval.terms;
            best_phi.copy_from(&phi);
        }
        if step > 0 && step % CHECKPOINT_EVERY == 0 {
            let err = gradient_check(&phi, cfg.d_s, 5, 1e-6, &mut check_rng);
            result.gradient_checks.push((step, err));
        }
        if step % TRACE_EVERY == 0 && step > 0 {
            result.best_trace.push((step, best_terms.total()));
        }
        result.steps_used = step;
        if loss < cfg.target_loss {
            break;
        }
        lr = plateau.observe(loss, lr);
        adam.config.lr = lr;
        let grad = eval.grad.expect("requested");
        adam.step(phi.as_mut_slice(), grad.as_slice());
        result.steps_used = step + 1;
    }
    if result.diverged_at.is_none() {
        let last = loss_terms(&phi, cfg.d_s);
        if last.total() < best_terms.total() {
            best_terms = last;
            best_phi.copy_from(&phi);
        }
    }
    result.phi = best_phi;
    result.loss_terms = best_terms;
    result.final_loss = best_terms.total();
    result.converged = result.final_loss < cfg.target_loss;
    Ok(result)
}

/// Runs every configured seed; seeds execute in parallel, results are
/// ordered as in `cfg.seeds`.
pub fn search(cfg: &SearchConfig) -> Result<Vec<SearchResult>> {
    cfg.validate()?;
    cfg.seeds
        .par_iter()
        .map(|&seed| search_seed(cfg, seed))
        .collect()
}

/// Outcome of projecting a representation onto the exact constraint set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefineReport {
    pub initial_residual: f64,
    pub final_residual: f64,
    pub iterations: usize,
    /// Max absolute entry change.
    pub displacement: f64,
}

struct Residuals {
    values: Vec<f64>,
    jacobian: Option<Mat>,
}

/// Residuals of `Phi Phi^T = I`, unit row sums of `Phi^T Phi`, the
/// condition-dimension moments and negative entries of `Phi^T Phi`.
fn constraint_residuals(phi: &Mat, d_s: usize, with_jacobian: bool) -> Residuals {
    let (d, n) = phi.shape();
    let idx = |a: usize, s: usize| a + s * d;
    let gram = phi * phi.transpose();
    let u: Vector = phi.column_sum();
    let t = phi.tr_mul(phi);

    let mut values = Vec::new();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let push_row = |rows: &mut Vec<Vec<(usize, f64)>>, entries: Vec<(usize, f64)>| {
        if with_jacobian {
            rows.push(entries);
        }
    };

    for i in 0..d {
        for j in i..d {
            values.push(gram[(i, j)] - if i == j { 1.0 } else { 0.0 });
            let mut e = Vec::with_capacity(2 * n);
            if with_jacobian {
                for s in 0..n {
                    e.push((idx(i, s), phi[(j, s)]));
                    e.push((idx(j, s), phi[(i, s)]));
                }
            }
            push_row(&mut rows, e);
        }
    }
    for tcol in 0..n {
        values.push(phi.column(tcol).dot(&u) - 1.0);
        let mut e = Vec::with_capacity(d * (n + 1));
        if with_jacobian {
            for a in 0..d {
                for s in 0..n {
                    e.push((idx(a, s), phi[(a, tcol)]));
                }
                e.push((idx(a, tcol), u[a]));
            }
        }
        push_row(&mut rows, e);
    }
    for k in d_s..d {
        for i in 0..d {
            for j in i..d {
                if i == j && j == k {
                    continue;
                }
                let mut acc = 0.0;
                let mut e = Vec::with_capacity(3 * n);
                for s in 0..n {
                    let (pi, pj, pk) = (phi[(i, s)], phi[(j, s)], phi[(k, s)]);
                    acc += pi * pj * pk;
                    if with_jacobian {
                        e.push((idx(i, s), pj * pk));
                        e.push((idx(j, s), pi * pk));
                        e.push((idx(k, s), pi * pj));
                    }
                }
                values.push(acc);
                push_row(&mut rows, e);
            }
        }
    }
    for s in 0..n {
        for tcol in s..n {
            if t[(s, tcol)] < 0.0 {
                values.push(t[(s, tcol)]);
                let mut e = Vec::with_capacity(2 * d);
                if with_jacobian {
                    for a in 0..d {
                        e.push((idx(a, s), phi[(a, tcol)]));
                        e.push((idx(a, tcol), phi[(a, s)]));
                    }
                }
                push_row(&mut rows, e);
            }
        }
    }
    let jacobian = with_jacobian.then(|| {
        let mut j = Mat::zeros(values.len(), d * n);
        for (r, entries) in rows.iter().enumerate() {
            for &(c, v) in entries {
                j[(r, c)] += v;
            }
        }
        j
    });
    Residuals { values, jacobian }
}

fn residual_norm(phi: &Mat, d_s: usize) -> f64 {
    constraint_residuals(phi, d_s, false)
        .values
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

/// Damped Gauss-Newton (Levenberg-Marquardt) projection of `phi` onto the
/// constraint set, taking minimum-norm steps. Stops when the residual norm
/// drops below `tol` or after `max_iter` iterations.
pub fn refine(phi: &Mat, d_s: usize, max_iter: usize, tol: f64) -> (Mat, RefineReport) {
    let start = phi.clone();
    let mut cur = phi.clone();
    let mut res = residual_norm(&cur, d_s);
    let initial_residual = res;
    let mut mu = 1e-6;
    let mut iterations = 0;
    while iterations < max_iter && res > tol {
        iterations += 1;
        let r = constraint_residuals(&cur, d_s, true);
        let j = r.jacobian.expect("requested");
        let rv = Vector::from_vec(r.values);
        let jjt = &j * j.transpose();
        let mut accepted = false;
        for _ in 0..12 {
            let mut sys = jjt.clone();
            for i in 0..sys.nrows() {
                sys[(i, i)] += mu;
            }
            let Some(y) = sys.lu().solve(&rv) else {
                mu *= 10.0;
                continue;
            };
            let step = j.tr_mul(&y);
            let mut cand = cur.clone();
            for (c, s) in cand.iter_mut().zip(step.iter()) {
                *c -= s;
            }
            let cand_res = residual_norm(&cand, d_s);
            if cand_res < res {
                cur = cand;
                res = cand_res;
                mu = (mu / 10.0).max(1e-15);
                accepted = true;
                break;
            }
            mu *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    let displacement = (&cur - &start).amax();
    (
        cur,
        RefineReport {
            initial_residual,
            final_residual: res,
            iterations,
            displacement,
        },
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExportConfig {
    /// Observation alphabet size of the exported chain.
    pub observations: usize,
    pub seed: u64,
    pub refine_iters: usize,
    pub refine_tol: f64,
}

impl Default for ExportConfig {
    fn default() -> Self {
        Self {
            observations: 6,
            seed: 0,
            refine_iters: 200,
            refine_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Export {
    pub chmm: ConditionedHmm,
    pub refine: RefineReport,
    pub assumption: AssumptionReport,
}

fn dirichlet<R: Rng>(len: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(1.0, 1.0).expect("valid");
    let draws: Vec<f64> = (0..len).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|x| x / total).collect()
}

/// Builds a conditioned HMM from a converged search result with `A' = I`.
/// The representation is first refined onto the exact constraint set;
/// `Psi = (Phi Phi^T)^-1 Phi B_target` for a target emission matrix mixing
/// uniform rows with Dirichlet noise; `phi_pi = Phi w` for a Dirichlet
/// weight vector w, so `pi = T^T w` is a distribution.
pub fn export_chmm(result: &SearchResult, cfg: &ExportConfig) -> Result<Export> {
    if !result.converged {
        return Err(Error::ExportRefused(format!(
            "seed {} did not converge (loss {:.3e})",
            result.seed, result.final_loss
        )));
    }
    if cfg.observations < 2 {
        return Err(Error::input("need at least two observations"));
    }
    let d_s = result.d_s;
    let (phi, refine) = refine(&result.phi, d_s, cfg.refine_iters, cfg.refine_tol);
    let (d, n) = phi.shape();
    let d_c = d - d_s;
    let m = cfg.observations;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let gram_inv = (&phi * phi.transpose())
        .try_inverse()
        .ok_or_else(|| Error::Factorization("Phi Phi^T is singular".into()))?;
    let solve = &gram_inv * &phi;
    let noise = Mat::from_fn(n, m, |_, _| 0.0);
    let noise = {
        let mut noise = noise;
        for s in 0..n {
            let row = dirichlet(m, &mut rng);
            for o in 0..m {
                noise[(s, o)] = row[o];
            }
        }
        noise
    };
    let uniform = Mat::from_element(n, m, 1.0 / m as f64);
    let mut mix = 0.5;
    let psi = loop {
        let target = &uniform * (1.0 - mix) + &noise * mix;
        let psi = &solve * target;
        let b = phi.tr_mul(&psi);
        if b.min() >= 0.1 / m as f64 || mix < 1e-3 {
            break psi;
        }
        mix *= 0.5;
    };

    let phi_pi = loop {
        let w = Vector::from_vec(dirichlet(n, &mut rng));
        let candidate = &phi * w;
        if (d_s..d).all(|k| candidate[k].abs() > 1e-6) {
            break candidate;
        }
    };
    let chmm = ConditionedHmm::new(d_s, d_c, phi, psi, Mat::identity(d_s, d_s), phi_pi)?;
    chmm.realize()?;
    let assumption = check_assumption1(&chmm.phi, d_s, 1e-3)?;
    Ok(Export {
        chmm,
        refine,
        assumption,
    })
}

/// End-to-end certification of the initial-condition switch on an
/// exported factorization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Certification {
    pub assumption: AssumptionReport,
    pub lemmas: LemmaReport,
    pub theorem1: Theorem1Report,
    pub condition_shift: f64,
    /// Max L1 between original and shifted chain conditionals over the same
    /// prefixes; shows the switch has something to reproduce.
    pub condition_effect: f64,
    pub pinv_condition: f64,
}

/// Shifts the condition block of the initial representation as far as
/// keeps the shifted initial distribution nonnegative (half the admissible
/// range), builds the switch and enumerates prefixes up to `max_len`.
pub fn certify(chmm: &ConditionedHmm, max_len: usize) -> Result<Certification> {
    let hmm = chmm.realize()?;
    let n = chmm.states();
    let view = LmView::with_projection(&hmm, Mat::identity(n, n), false)?;
    let pi = chmm.derived_pi();
    let direction: Vector = chmm.phi.rows(chmm.d_s, chmm.d_c).row_sum().transpose();
    let mut limit = f64::INFINITY;
    for s in 0..n {
        if direction[s] < 0.0 {
            limit = limit.min(pi[s].max(0.0) / -direction[s]);
        }
    }
    let scale = chmm.phi_pi.rows(chmm.d_s, chmm.d_c).amax();
    let shift = 0.5 * limit.min(scale);
    let delta = vec![shift; chmm.d_c];
    let (phi_pi2, pi2) = shift_condition(chmm, &chmm.phi_pi, &delta)?;
    let wprime = build_helper_wprime(chmm, &chmm.phi_pi, &phi_pi2)?;
    let sw = construct_switch(chmm, &view, &wprime)?;
    let theorem1 = verify_theorem1(&view, &sw.w, &pi2, max_len)?;
    let shifted = hmm.with_initial(pi2.clone())?;
    let mut condition_effect: f64 = 0.0;
    for prefix in all_prefixes(hmm.observations(), max_len, DEFAULT_BUDGET)? {
        if let (Ok(a), Ok(b)) = (
            hmm.next_token_dist(&prefix),
            shifted.next_token_dist(&prefix),
        ) {
            condition_effect = condition_effect.max(linalg::l1_distance(&a, &b));
        }
    }
    Ok(Certification {
        assumption: check_assumption1(&chmm.phi, chmm.d_s, 1e-3)?,
        lemmas: verify_lemmas(chmm, &wprime)?,
        theorem1,
        condition_shift: shift,
        condition_effect,
        pinv_condition: sw.condition,
    })
}
