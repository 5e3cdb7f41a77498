//! Property checks parameterized by a seed. Each returns `Err` with a
//! description of the first violated invariant.

#![allow(dead_code)]

use cgfb::cgfb::{run_cgfb, CgfbConfig, MessagePasser};
use cgfb::gauss::{
    canonical_product, max_asymmetry, min_eigenvalue, CanonicalGaussian, MomentGaussian,
};
use cgfb::kalman::kf_correct;
use cgfb::model::{fit_aggregate, simulate, AggregateObservations, GhmmParams};
use cgfb::tolerances::TAU_SYM;
use cgfb::window::{SlidingWindowFilter, WindowVariant};
use nalgebra::DMatrix;

use super::*;

pub type Outcome = std::result::Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Outcome {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn symmetric(m: &DMatrix<f64>) -> bool {
    max_asymmetry(m) <= TAU_SYM * m.amax().max(1.0)
}

/// Moment -> canonical -> moment reproduces the input.
pub fn round_trip(seed: u64, d: usize) -> Outcome {
    let mut r = rng(seed);
    let g = MomentGaussian::new(normal_vector(&mut r, d), random_spd(&mut r, d, 0.1)).unwrap();
    let back = g.to_canonical().unwrap().to_moment().unwrap();
    let dev = rel_dev_vec(back.mean(), g.mean()).max(rel_dev(back.cov(), g.cov()));
    ensure(dev <= 1e-10, || format!("round trip deviation {dev:e}"))
}

/// Products do not depend on factor order or grouping.
pub fn product_order(seed: u64, d: usize) -> Outcome {
    let mut r = rng(seed);
    let f: Vec<CanonicalGaussian> = (0..3).map(|_| random_proper(&mut r, d)).collect();
    let abc = canonical_product([&f[0], &f[1], &f[2]]).unwrap();
    let cba = canonical_product([&f[2], &f[1], &f[0]]).unwrap();
    let ab = canonical_product([&f[0], &f[1]]).unwrap();
    let ab_c = canonical_product([&ab, &f[2]]).unwrap();
    let scale = abc.info_matrix().amax().max(abc.info_vector().amax());
    let dev = abc.max_abs_diff(&cba).max(abc.max_abs_diff(&ab_c));
    ensure(dev <= 1e-13 * scale, || {
        format!("product depends on order: {dev:e}")
    })
}

fn population_case(seed: u64) -> (GhmmParams, AggregateObservations) {
    let agents = 5 + (seed % 60) as usize;
    let steps = 1 + ((seed / 60) % 12) as usize;
    let p = GhmmParams::reference(0.05);
    let agg = fit_aggregate(&simulate(&p, agents, steps, seed).unwrap()).unwrap();
    (p, agg)
}

/// Along every sweep: the boundaries stay pinned, all messages are symmetric,
/// forward and downward messages are PSD, and every marginal is proper.
pub fn sweep_invariants(seed: u64) -> Outcome {
    let (p, agg) = population_case(seed);
    let passer = MessagePasser::new(&p).unwrap();
    let prior = passer.initial_forward().clone();
    let n = agg.len();
    let mut msgs = passer.initial_messages(n, &prior).unwrap();
    for sweep in 0..30 {
        let residual = passer
            .sweep(&agg.entries, &mut msgs, 0.0)
            .map_err(|e| format!("sweep {sweep} failed: {e}"))?;
        ensure(msgs.fwd[0] == prior, || {
            format!("forward boundary moved at sweep {sweep}")
        })?;
        ensure(msgs.bwd[n - 1] == CanonicalGaussian::flat(2), || {
            format!("backward boundary moved at sweep {sweep}")
        })?;
        for t in 0..n {
            for (name, m) in [
                ("fwd", &msgs.fwd[t]),
                ("bwd", &msgs.bwd[t]),
                ("up", &msgs.up[t]),
                ("down", &msgs.down[t]),
            ] {
                ensure(symmetric(m.info_matrix()), || {
                    format!("{name}[{t}] asymmetric at sweep {sweep}")
                })?;
            }
            ensure(min_eigenvalue(msgs.fwd[t].info_matrix()) >= -1e-10, || {
                format!("fwd[{t}] not PSD")
            })?;
            ensure(min_eigenvalue(msgs.down[t].info_matrix()) >= -1e-10, || {
                format!("down[{t}] not PSD")
            })?;
        }
        let marginals = passer
            .marginals(&msgs)
            .map_err(|e| format!("improper marginal at sweep {sweep}: {e}"))?;
        for g in marginals.iter() {
            ensure(symmetric(g.cov()), || {
                "marginal covariance asymmetric".into()
            })?;
        }
        if residual <= 1e-12 {
            break;
        }
    }
    Ok(())
}

/// One more sweep from a converged state moves no parameter by more than the tolerance.
pub fn stationarity(seed: u64) -> Outcome {
    let (p, agg) = population_case(seed);
    let config = CgfbConfig::default();
    let out = run_cgfb(&p, &agg, &config).map_err(|e| e.to_string())?;
    let passer = MessagePasser::new(&p).unwrap();
    let mut msgs = out.messages.clone();
    let residual = passer
        .sweep(&agg.entries, &mut msgs, 0.0)
        .map_err(|e| e.to_string())?;
    ensure(residual <= config.conv_tol, || {
        format!(
            "extra sweep moved messages by {residual:e} > {:e}",
            config.conv_tol
        )
    })
}

/// Same inputs, same seed: bit-identical simulation and inference.
pub fn determinism(seed: u64) -> Outcome {
    let p = GhmmParams::reference(0.05);
    let agents = 2 + (seed % 20) as usize;
    let a = simulate(&p, agents, 6, seed).unwrap();
    let b = simulate(&p, agents, 6, seed).unwrap();
    ensure(a == b, || "simulation not reproducible".into())?;
    let agg = fit_aggregate(&a).unwrap();
    let x = run_cgfb(&p, &agg, &CgfbConfig::default()).map_err(|e| e.to_string())?;
    let y = run_cgfb(&p, &agg, &CgfbConfig::default()).map_err(|e| e.to_string())?;
    ensure(
        x.messages == y.messages && x.marginals == y.marginals,
        || "inference not reproducible".into(),
    )
}

/// The Joseph-form correction is symmetric PD and matches the information form.
pub fn kalman_correction(seed: u64, d_x: usize, d_o: usize) -> Outcome {
    let mut r = rng(seed);
    let p = random_model(&mut r, d_x, d_o);
    let mean = normal_vector(&mut r, d_x);
    let cov = random_spd(&mut r, d_x, 0.2);
    let obs = normal_vector(&mut r, d_o);
    let k = kf_correct(&p, &mean, &cov, &obs).map_err(|e| e.to_string())?;
    let (m, c) = info_form_correct(&p, &mean, &cov, &obs);
    ensure(symmetric(&k.cov), || {
        "posterior covariance asymmetric".into()
    })?;
    ensure(min_eigenvalue(&k.cov) > 0.0, || {
        "posterior covariance not PD".into()
    })?;
    let dev = rel_dev_vec(&k.mean, &m).max(rel_dev(&k.cov, &c));
    ensure(dev <= 1e-10, || {
        format!("covariance and information forms differ by {dev:e}")
    })
}

/// Fitted aggregate covariances are symmetric PD.
pub fn aggregate_proper(seed: u64) -> Outcome {
    let mut r = rng(seed);
    let d_x = 1 + (seed % 3) as usize;
    let d_o = 1 + ((seed / 3) % 2) as usize;
    let p = random_model(&mut r, d_x, d_o);
    let agents = 2 + (seed % 40) as usize;
    let agg = fit_aggregate(&simulate(&p, agents, 4, seed).unwrap()).map_err(|e| e.to_string())?;
    for e in &agg.entries {
        let ph = e.p_hat(&p);
        ensure(symmetric(ph), || "P_hat asymmetric".into())?;
        ensure(min_eigenvalue(ph) > 0.0, || "P_hat not PD".into())?;
    }
    Ok(())
}

/// The window never holds more than `K` steps and always reports a proper density.
pub fn window_bounded(seed: u64) -> Outcome {
    let k = 1 + (seed % 6) as usize;
    let p = GhmmParams::reference(0.05);
    let agg = fit_aggregate(&simulate(&p, 30, 12, seed).unwrap()).unwrap();
    let mut f = SlidingWindowFilter::new(
        &p,
        k,
        WindowVariant::WithPrior,
        cgfb::window::window_config(),
    )
    .unwrap();
    for (t, e) in agg.entries.into_iter().enumerate() {
        let out = f.step(e).map_err(|e| e.to_string())?;
        ensure(f.state().buffer().len() == k.min(t + 1), || {
            format!("buffer length wrong at t={t}")
        })?;
        ensure(min_eigenvalue(out.filtered.cov()) > 0.0, || {
            format!("improper filter density at t={t}")
        })?;
    }
    Ok(())
}

/// Until the window fills, each step equals the last marginal of a full-chain
/// run on the observations so far.
pub fn window_exact_before_saturation(seed: u64) -> Outcome {
    let p = GhmmParams::reference(0.05);
    let agents = 10 + (seed % 50) as usize;
    let k = 3 + (seed % 5) as usize;
    let agg = fit_aggregate(&simulate(&p, agents, k, seed).unwrap()).unwrap();
    let tight = CgfbConfig {
        max_iters: 2000,
        conv_tol: 1e-14,
        damping: 0.0,
    };
    let mut f = SlidingWindowFilter::new(&p, k, WindowVariant::WithPrior, tight).unwrap();
    for t in 0..k {
        let out = f.step(agg.entries[t].clone()).map_err(|e| e.to_string())?;
        let prefix = AggregateObservations::new(agg.entries[..=t].to_vec());
        let full = run_cgfb(&p, &prefix, &tight).map_err(|e| e.to_string())?;
        let last = full.marginals.last().unwrap();
        let dev = rel_dev_vec(out.filtered.mean(), last.mean())
            .max(rel_dev(out.filtered.cov(), last.cov()));
        ensure(dev <= 1e-10, || {
            format!("window differs from full chain at t={t} by {dev:e}")
        })?;
    }
    Ok(())
}
