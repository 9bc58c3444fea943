//! Central finite differences against tape gradients.

use std::io::Write;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::params::{ParamId, ParamStore};
use crate::autodiff::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Step multipliers tried, in order, by [`FdOptions::step_retry`].
pub const RETRY_STEPS: [f64; 5] = [0.1, 0.01, 0.001, 10.0, 100.0];

#[derive(Clone, Copy, Debug)]
pub struct FdOptions {
    pub h: f64,
    pub tol: f64,
    /// Check at most this many coordinates per parameter tensor (sampled
    /// without replacement); `None` checks all of them.
    pub max_coords: Option<usize>,
    pub seed: u64,
    /// Re-difference a failing coordinate at each step in [`RETRY_STEPS`]
    /// (multiples of `h`) and accept the first estimate that agrees. Finer
    /// steps resolve differences that straddle a ReLU or max-pool kink;
    /// coarser ones lift near-zero gradients above the round-off floor.
    pub step_retry: bool,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            tol: 1e-4,
            max_coords: None,
            seed: 0,
            step_retry: false,
        }
    }
}

/// Worst coordinate of one parameter tensor.
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
    pub checked: usize,
    /// Coordinates accepted only at a retry step.
    pub retries: usize,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub rows: Vec<ParamCheck>,
    pub max_rel_err: f64,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn merge(&mut self, other: GradCheckReport) {
        let was_empty = self.rows.is_empty();
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.pass = (was_empty || self.pass) && other.pass;
        self.rows.extend(other.rows);
    }

    /// CSV with header `parameter,analytic,numeric,rel_err`.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["parameter", "analytic", "numeric", "rel_err"])?;
        for r in &self.rows {
            out.write_record([
                r.name.clone(),
                format!("{:e}", r.analytic),
                format!("{:e}", r.numeric),
                format!("{:e}", r.rel_err),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compare tape gradients of `loss` with `(f(θ+h·e_i) − f(θ−h·e_i)) / 2h`.
///
/// `loss` must build a scalar on the tape it is handed and be
/// deterministic. Meant to run in `f64`.
pub fn finite_diff_check<T, F>(
    store: &mut ParamStore<T>,
    ids: &[ParamId],
    loss: F,
    opts: FdOptions,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&ParamStore<T>, &mut Tape<T>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let root = loss(store, &mut tape)?;
    let analytic = tape.backward(root)?.by_param();
    drop(tape);

    let eval = |store: &ParamStore<T>, name: &str| -> Result<f64> {
        let mut tape = Tape::new();
        let root = loss(store, &mut tape)?;
        let v = tape.value(root).data()[0].to_f64().unwrap_or(f64::NAN);
        if !v.is_finite() {
            return Err(Error::OracleFailure(name.to_string()));
        }
        Ok(v)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        pass: true,
        ..Default::default()
    };
    for &id in ids {
        let name = store.get(id).name.clone();
        let len = store.get(id).value.len();
        let coords: Vec<usize> = match opts.max_coords {
            Some(k) if k < len => sample(&mut rng, len, k).into_vec(),
            _ => (0..len).collect(),
        };
        let grad = analytic.get(&id);
        let mut worst = ParamCheck {
            name: name.clone(),
            analytic: 0.0,
            numeric: 0.0,
            rel_err: 0.0,
            checked: coords.len(),
            retries: 0,
        };
        for i in coords {
            let a = grad.map_or(0.0, |g| g.data()[i].to_f64().unwrap());
            let mut central = |step: f64| -> Result<f64> {
                let orig = store.get(id).value.data()[i];
                store.get_mut(id).value.data_mut()[i] = orig + T::of(step);
                let plus = eval(store, &name);
                store.get_mut(id).value.data_mut()[i] = orig - T::of(step);
                let minus = eval(store, &name);
                store.get_mut(id).value.data_mut()[i] = orig;
                Ok((plus? - minus?) / (2.0 * step))
            };
            let mut n = central(opts.h)?;
            let mut e = relative_error(a, n);
            if opts.step_retry && e >= opts.tol {
                for scale in RETRY_STEPS {
                    let fine = central(opts.h * scale)?;
                    let fine_err = relative_error(a, fine);
                    if fine_err < opts.tol {
                        worst.retries += 1;
                        n = fine;
                        e = fine_err;
                        break;
                    }
                }
            }
            if e >= worst.rel_err {
                worst.analytic = a;
                worst.numeric = n;
                worst.rel_err = e;
            }
        }
        report.max_rel_err = report.max_rel_err.max(worst.rel_err);
        report.pass &= worst.rel_err < opts.tol;
        report.rows.push(worst);
    }
    Ok(report)
}
