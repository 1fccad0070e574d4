//! Reverse-mode differentiation over small dense matrices.
//!
//! Objectives are closures that record a scalar computation on a [`Tape`]
//! given tape handles for a [`ParamSet`]. Gradients through an inner
//! gradient-descent loop are obtained by keeping the inner backward passes on
//! the tape and differentiating the outer loss through them.

mod checkpoint;
mod params;
mod tape;

pub use checkpoint::{
    load_params, params_from_bytes, params_from_text, params_to_bytes, params_to_text, save_params,
    CheckpointFormat,
};
pub use params::{GradRecord, ParamSet, ParamVars};
pub use tape::{Activation, Tape, Var};

pub(crate) use tape::sigmoid;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Whether meta-gradients differentiate through inner updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MetaOrder {
    /// Exact gradient through every inner update.
    #[default]
    Second,
    /// Adapted parameters are treated as an identity function of the initial
    /// ones: the outer gradient at the adapted point is applied as is.
    First,
}

impl std::str::FromStr for MetaOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "second" => Ok(MetaOrder::Second),
            "first" => Ok(MetaOrder::First),
            other => Err(Error::Config(format!("unknown meta order '{other}'"))),
        }
    }
}

impl std::fmt::Display for MetaOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MetaOrder::Second => "second",
            MetaOrder::First => "first",
        })
    }
}

fn scalar_value(tape: &Tape, v: Var) -> Result<f64> {
    let t = tape.value(v);
    if t.shape() != [1, 1] {
        return Err(Error::shape(
            "objective",
            format!("{:?} is not scalar", t.shape()),
        ));
    }
    Ok(t.item())
}

/// Value and gradient of `objective` at `params`.
pub fn grad<F>(params: &ParamSet, objective: F) -> Result<(f64, GradRecord)>
where
    F: FnOnce(&mut Tape, &ParamVars) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params);
    let out = objective(&mut tape, &vars)?;
    let value = scalar_value(&tape, out)?;
    let grads = tape.gradients(out, &vars.vars())?;
    Ok((value, vars.grads_to_record(grads)))
}

/// Runs `steps` gradient steps of size `inner_lr` on `inner`, starting from
/// `initial`, and returns the value of `outer` at the adapted point with its
/// gradient with respect to `initial`.
pub fn grad_through_updates<I, O>(
    initial: &ParamSet,
    mut inner: I,
    outer: O,
    steps: usize,
    inner_lr: f64,
    order: MetaOrder,
) -> Result<(f64, GradRecord)>
where
    I: FnMut(&mut Tape, &ParamVars) -> Result<Var>,
    O: FnOnce(&mut Tape, &ParamVars) -> Result<Var>,
{
    match order {
        MetaOrder::Second => {
            let mut tape = Tape::new();
            let start = ParamVars::register(&mut tape, initial);
            let mut current = start.clone();
            for _ in 0..steps {
                let loss = inner(&mut tape, &current)?;
                let g = tape.backward(loss, &current.vars())?;
                current = current.descend(&mut tape, &g, inner_lr)?;
            }
            let out = outer(&mut tape, &current)?;
            let value = scalar_value(&tape, out)?;
            let grads = tape.gradients(out, &start.vars())?;
            Ok((value, start.grads_to_record(grads)))
        }
        MetaOrder::First => {
            let mut current = initial.clone();
            for _ in 0..steps {
                let (_, g) = grad(&current, &mut inner)?;
                current.add_scaled(&g, -inner_lr)?;
            }
            grad(&current, outer)
        }
    }
}

/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Debug)]
pub struct FiniteDiffReport {
    pub max_rel_error: f64,
    pub coordinates: usize,
    /// Coordinate with the largest error: parameter name and flat index.
    pub worst: Option<(String, usize)>,
}

/// Central-difference check of `objective` on a deterministic random subset
/// of `sample` coordinates. Relative error uses the denominator
/// `max(|analytic|, |numeric|, 1e-8)`. Failures of the objective are reported
/// as an infinite error rather than returned.
pub fn finite_diff_check<F>(
    params: &ParamSet,
    objective: F,
    step: f64,
    sample: usize,
    seed: u64,
) -> FiniteDiffReport
where
    F: Fn(&mut Tape, &ParamVars) -> Result<Var>,
{
    let failed = |coordinates| FiniteDiffReport {
        max_rel_error: f64::INFINITY,
        coordinates,
        worst: None,
    };
    if step <= 0.0 || !step.is_finite() {
        return failed(0);
    }
    let Ok((_, analytic)) = grad(params, &objective) else {
        return failed(0);
    };
    let eval = |p: &ParamSet| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = ParamVars::constants(&mut tape, p);
        let out = objective(&mut tape, &vars)?;
        scalar_value(&tape, out)
    };

    let coords: Vec<(String, usize)> = params
        .iter()
        .flat_map(|(name, t)| (0..t.len()).map(move |i| (name.to_string(), i)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = sample_indices(&mut rng, coords.len(), sample.min(coords.len())).into_vec();

    let mut report = FiniteDiffReport {
        max_rel_error: 0.0,
        coordinates: picked.len(),
        worst: None,
    };
    let mut probe = params.clone();
    for idx in picked {
        let (name, i) = &coords[idx];
        let original = params.get(name).expect("listed").data()[*i];
        let mut shifted = |delta: f64| {
            probe.get_mut(name).expect("listed").data_mut()[*i] = original + delta;
            let v = eval(&probe);
            probe.get_mut(name).expect("listed").data_mut()[*i] = original;
            v
        };
        let (Ok(plus), Ok(minus)) = (shifted(step), shifted(-step)) else {
            return failed(report.coordinates);
        };
        let numeric = (plus - minus) / (2.0 * step);
        let exact = analytic.get(name).expect("listed").data()[*i];
        let rel = (exact - numeric).abs() / exact.abs().max(numeric.abs()).max(1e-8);
        if report.worst.is_none() || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some((name.clone(), *i));
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::Rng;

    fn scalar_params(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("p", Tensor::scalar(v));
        p
    }

    fn half_square(tape: &mut Tape, v: &ParamVars) -> Result<Var> {
        let p = v.get("p")?;
        let sq = tape.mul(p, p)?;
        tape.scale(sq, 0.5)
    }

    #[test]
    fn grad_of_square_at_three() {
        let (value, g) = grad(&scalar_params(3.0), |tape, v| {
            let p = v.get("p")?;
            tape.mul(p, p)
        })
        .unwrap();
        assert_eq!(value, 9.0);
        assert_eq!(g.get("p").unwrap().item(), 6.0);
    }

    #[test]
    fn grad_of_sigmoid_sum_at_zero() {
        let mut p = ParamSet::new();
        p.insert("p", Tensor::zeros(3, 4));
        let (_, g) = grad(&p, |tape, v| {
            let s = tape.sigmoid(v.get("p")?)?;
            tape.sum_all(s)
        })
        .unwrap();
        assert!(g.get("p").unwrap().data().iter().all(|&x| x == 0.25));
    }

    #[test]
    fn quadratic_meta_gradient_matches_closed_form() {
        let (theta, lr) = (1.7, 0.3);
        for order in [MetaOrder::Second, MetaOrder::First] {
            let (_, g) = grad_through_updates(
                &scalar_params(theta),
                half_square,
                half_square,
                1,
                lr,
                order,
            )
            .unwrap();
            let expected = match order {
                MetaOrder::Second => (1.0 - lr) * (1.0 - lr) * theta,
                MetaOrder::First => (1.0 - lr) * theta,
            };
            assert!((g.get("p").unwrap().item() - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_steps_or_zero_rate_reduce_to_plain_grad() {
        let p = scalar_params(0.8);
        let plain = grad(&p, half_square).unwrap().1;
        for (steps, lr) in [(0, 0.5), (4, 0.0)] {
            for order in [MetaOrder::Second, MetaOrder::First] {
                let g = grad_through_updates(&p, half_square, half_square, steps, lr, order)
                    .unwrap()
                    .1;
                assert!(g.bitwise_eq(&plain));
            }
        }
    }

    #[test]
    fn linear_objective_has_exact_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ParamSet::new();
        p.insert_uniform("w", 3, 4, 1.0, &mut rng);
        let c = Tensor::new(
            4,
            1,
            (0..4).map(|i| rng.random::<f64>() + i as f64).collect(),
        )
        .unwrap();
        let report = finite_diff_check(
            &p,
            |tape, v| {
                let cv = tape.constant(c.clone());
                let y = tape.matmul(v.get("w")?, cv)?;
                tape.sum_all(y)
            },
            1e-3,
            12,
            0,
        );
        assert_eq!(report.coordinates, 12);
        assert!(report.max_rel_error < 1e-9, "{report:?}");
    }

    #[test]
    fn sigmoid_chain_depth_three() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = ParamSet::new();
        p.insert_uniform("x", 2, 3, 2.0, &mut rng);
        let report = finite_diff_check(
            &p,
            |tape, v| {
                let mut h = v.get("x")?;
                for _ in 0..3 {
                    h = tape.sigmoid(h)?;
                }
                tape.sum_all(h)
            },
            1e-5,
            6,
            3,
        );
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn failing_objective_reports_infinity() {
        let report = finite_diff_check(
            &scalar_params(1.0),
            |_, _| Err(Error::Config("boom".into())),
            1e-5,
            1,
            0,
        );
        assert!(report.max_rel_error.is_infinite());
    }
}
