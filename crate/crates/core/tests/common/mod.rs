//! Independent reference computations and random input generators shared by
//! the integration suites. Every oracle here works in moment form with dense
//! inverses, deliberately avoiding the information-form code paths under test.

#![allow(dead_code)]

pub mod props;

use cgfb::cgfb::MessagePasser;
use cgfb::gauss::CanonicalGaussian;
use cgfb::model::AggregateEntry;
use cgfb::model::GhmmParams;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn normal_vector(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// `L L^T / d + floor I`: SPD with condition number bounded by roughly `(1 + 4 / floor)`.
pub fn random_spd(rng: &mut ChaCha8Rng, d: usize, floor: f64) -> DMatrix<f64> {
    let l = normal_matrix(rng, d, d);
    (&l * l.transpose()) / d as f64 + DMatrix::identity(d, d) * floor
}

pub fn inv(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().try_inverse().expect("oracle input is invertible")
}

pub fn sym(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Random model with `d_x` states and `d_o` outputs. Dynamics are scaled to
/// spectral norm at most 1.1 so short chains stay well conditioned.
pub fn random_model(rng: &mut ChaCha8Rng, d_x: usize, d_o: usize) -> GhmmParams {
    let mut a = normal_matrix(rng, d_x, d_x);
    let norm = a.clone().svd(false, false).singular_values.max();
    if norm > 1.1 {
        a *= 1.1 / norm;
    }
    GhmmParams::new(
        a,
        random_spd(rng, d_x, 0.2),
        normal_matrix(rng, d_o, d_x),
        random_spd(rng, d_o, 0.2),
        normal_vector(rng, d_x),
        random_spd(rng, d_x, 0.5),
    )
    .expect("random model is valid")
}

/// Canonical Gaussian with SPD precision.
pub fn random_proper(rng: &mut ChaCha8Rng, d: usize) -> CanonicalGaussian {
    CanonicalGaussian::new(random_spd(rng, d, 0.3), normal_vector(rng, d)).unwrap()
}

/// `max |a - b| / max |b|`, the norm-wise relative deviation.
pub fn rel_dev(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let scale = b.amax();
    let diff = (a - b).amax();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

pub fn rel_dev_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    rel_dev(
        &DMatrix::from_column_slice(a.len(), 1, a.as_slice()),
        &DMatrix::from_column_slice(b.len(), 1, b.as_slice()),
    )
}

/// Worst relative deviation of both parameters of a canonical Gaussian.
pub fn canonical_dev(got: &CanonicalGaussian, want: &(DMatrix<f64>, DVector<f64>)) -> f64 {
    rel_dev(got.info_matrix(), &want.0).max(rel_dev_vec(got.info_vector(), &want.1))
}

fn moments(g: &CanonicalGaussian, extra: &CanonicalGaussian) -> (DVector<f64>, DMatrix<f64>) {
    let cov = inv(&(g.info_matrix() + extra.info_matrix()));
    let mean = &cov * (g.info_vector() + extra.info_vector());
    (mean, cov)
}

fn canonical_of(mean: &DVector<f64>, cov: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let p = inv(cov);
    let eta = &p * mean;
    (sym(p), eta)
}

/// Push the belief at `t - 1` through the dynamics: `N(A m, A S A^T + Q)`.
pub fn forward_oracle(
    p: &GhmmParams,
    fwd: &CanonicalGaussian,
    up: &CanonicalGaussian,
) -> (DMatrix<f64>, DVector<f64>) {
    let (m, s) = moments(fwd, up);
    canonical_of(&(&p.a * m), &(&p.a * s * p.a.transpose() + &p.q))
}

/// `x -> N(m; A x, Q + S)` where `N(m, S)` is the belief at `t + 1` from the future.
pub fn backward_oracle(
    p: &GhmmParams,
    bwd: &CanonicalGaussian,
    up: &CanonicalGaussian,
) -> (DMatrix<f64>, DVector<f64>) {
    let (m, s) = moments(bwd, up);
    let k = inv(&(&p.q + s));
    let at_k = p.a.transpose() * k;
    (sym(&at_k * &p.a), at_k * m)
}

/// Predictive density of the output: `N(C m, C S C^T + R)`.
pub fn downward_oracle(
    p: &GhmmParams,
    fwd: &CanonicalGaussian,
    bwd: &CanonicalGaussian,
) -> (DMatrix<f64>, DVector<f64>) {
    let (m, s) = moments(fwd, bwd);
    canonical_of(&(&p.c * m), &(&p.c * s * p.c.transpose() + &p.r))
}

/// Divide the aggregate by the downward message to get `N(m_J, J^-1)` over the
/// output, then pull it through the emission: `x -> N(m_J; C x, R + J^-1)`.
/// Requires `J = P_hat^-1 - Lambda_d` to be SPD.
pub fn upward_oracle(
    p: &GhmmParams,
    mu_hat: &DVector<f64>,
    p_hat: &DMatrix<f64>,
    down: &CanonicalGaussian,
) -> (DMatrix<f64>, DVector<f64>) {
    let p_inv = inv(p_hat);
    let j = &p_inv - down.info_matrix();
    let j_inv = inv(&j);
    let m_j = &j_inv * (&p_inv * mu_hat - down.info_vector());
    let k = inv(&(&p.r + j_inv));
    let ct_k = p.c.transpose() * k;
    (sym(&ct_k * &p.c), ct_k * m_j)
}

/// Information-form measurement update:
/// `P+ = (P^-1 + C^T R^-1 C)^-1`, `mu+ = P+ (P^-1 mu + C^T R^-1 o)`.
pub fn info_form_correct(
    p: &GhmmParams,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    obs: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let p_inv = inv(cov);
    let r_inv = inv(&p.r);
    let post = inv(&(&p_inv + p.c.transpose() * &r_inv * &p.c));
    let mean = &post * (p_inv * mean + p.c.transpose() * r_inv * obs);
    (mean, sym(post))
}

pub fn max_dev_trajectories(
    a: &cgfb::cgfb::MarginalTrajectory,
    b: &cgfb::cgfb::MarginalTrajectory,
) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| rel_dev_vec(x.mean(), y.mean()).max(rel_dev(x.cov(), y.cov())))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Update {
    Forward,
    Backward,
    Downward,
    Upward,
}

/// Relative deviation between one information-form update and its moment-form
/// oracle on random inputs drawn from `seed`.
pub fn update_deviation(kind: Update, seed: u64) -> f64 {
    let mut r = rng(seed);
    let d_x = 1 + (seed % 4) as usize;
    let d_o = 1 + ((seed / 4) % 3) as usize;
    let p = random_model(&mut r, d_x, d_o);
    let passer = MessagePasser::new(&p).unwrap();
    match kind {
        Update::Forward => {
            let (f, u) = (random_proper(&mut r, d_x), random_proper(&mut r, d_x));
            canonical_dev(
                &passer.forward(&f, &u, 1).unwrap(),
                &forward_oracle(&p, &f, &u),
            )
        }
        Update::Backward => {
            let (b, u) = (random_proper(&mut r, d_x), random_proper(&mut r, d_x));
            canonical_dev(
                &passer.backward(&b, &u, 0).unwrap(),
                &backward_oracle(&p, &b, &u),
            )
        }
        Update::Downward => {
            let (f, b) = (random_proper(&mut r, d_x), random_proper(&mut r, d_x));
            canonical_dev(
                &passer.downward(&f, &b, 0).unwrap(),
                &downward_oracle(&p, &f, &b),
            )
        }
        Update::Upward => {
            // P_hat^-1 = Lambda_d + J with J SPD, so the oracle's division is proper.
            let down = random_proper(&mut r, d_o);
            let j = random_spd(&mut r, d_o, 0.3);
            let p_hat = sym(inv(&(down.info_matrix() + j)));
            let mu_hat = normal_vector(&mut r, d_o);
            let entry = AggregateEntry::population(mu_hat.clone(), p_hat.clone()).unwrap();
            canonical_dev(
                &passer.upward(&entry, &down, 0).unwrap(),
                &upward_oracle(&p, &mu_hat, &p_hat, &down),
            )
        }
    }
}
