//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradcheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Maximum tolerated relative error.
    pub tol: f64,
    /// Coordinates whose absolute error is below this are treated as exact.
    pub abs_floor: f64,
    /// Check a seeded random subset of at most this many coordinates.
    pub max_coords: Option<usize>,
    /// Seed for the output projection and coordinate sampling.
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            step: 1e-5,
            tol: 1e-3,
            abs_floor: 1e-6,
            max_coords: None,
            seed: 0x5eed,
        }
    }
}

impl GradcheckConfig {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_coords(mut self, n: usize) -> Self {
        self.max_coords = Some(n);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Worst relative error per input tensor.
    pub per_input: Vec<f64>,
    pub coords_checked: usize,
    pub tol: f64,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn ensure(self) -> Result<Self> {
        if self.passed {
            Ok(self)
        } else {
            Err(Error::GradcheckFailed {
                max_rel: self.max_rel_err,
                tol: self.tol,
            })
        }
    }
}

/// Compares the tape gradient of `f` at `inputs` with central differences.
///
/// Non-scalar outputs are reduced with a fixed random projection `Σ rᵢ·yᵢ`.
pub fn gradcheck<F>(f: F, inputs: &[Tensor<f64>], cfg: &GradcheckConfig) -> Result<GradcheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<Tensor<f64>> {
        let tape = Tape::new();
        let vars = xs
            .iter()
            .map(|x| tape.constant(x.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok((*f(&tape, &vars)?.value()).clone())
    };

    let base = eval(inputs)?;
    let again = eval(inputs)?;
    if base.shape() != again.shape()
        || base.data().iter().zip(again.data()).any(|(a, b)| a.to_bits() != b.to_bits())
    {
        return Err(Error::NonDeterministic);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let proj: Vec<f64> = if base.numel() == 1 {
        vec![1.0]
    } else {
        (0..base.numel()).map(|_| rng.random_range(-1.0..1.0)).collect()
    };
    let scalarize = |y: &Tensor<f64>| -> f64 { y.data().iter().zip(&proj).map(|(a, b)| a * b).sum() };

    let analytic: Vec<Vec<f64>> = {
        let tape = Tape::new();
        let vars = inputs
            .iter()
            .map(|x| tape.param(x.clone()))
            .collect::<Result<Vec<_>>>()?;
        let y = f(&tape, &vars)?;
        let loss = if base.numel() == 1 {
            y.reshape(&[1])?
        } else {
            let r = tape.constant(Tensor::new(&y.shape(), proj.clone())?)?;
            y.mul(r)?.sum()?
        };
        let grads = tape.backward(loss)?;
        vars.iter().map(|&v| grads.wrt(v).into_data()).collect()
    };

    let all: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j)))
        .collect();
    let coords: Vec<(usize, usize)> = match cfg.max_coords {
        Some(n) if n < all.len() => {
            let mut picked = sample(&mut rng, all.len(), n).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|k| all[k]).collect()
        }
        _ => all,
    };

    let mut per_input = vec![0.0f64; inputs.len()];
    let mut max_abs = 0.0f64;
    let mut work = inputs.to_vec();
    for &(i, j) in &coords {
        let orig = work[i].data()[j];
        work[i].data_mut()[j] = orig + cfg.step;
        let plus = scalarize(&eval(&work)?);
        work[i].data_mut()[j] = orig - cfg.step;
        let minus = scalarize(&eval(&work)?);
        work[i].data_mut()[j] = orig;

        let numeric = (plus - minus) / (2.0 * cfg.step);
        let a = analytic[i][j];
        let diff = (a - numeric).abs();
        max_abs = max_abs.max(diff);
        let rel = if diff <= cfg.abs_floor {
            0.0
        } else {
            diff / a.abs().max(numeric.abs())
        };
        per_input[i] = per_input[i].max(rel);
    }
    let max_rel = per_input.iter().copied().fold(0.0, f64::max);
    Ok(GradcheckReport {
        max_rel_err: max_rel,
        max_abs_err: max_abs,
        per_input,
        coords_checked: coords.len(),
        tol: cfg.tol,
        passed: max_rel <= cfg.tol,
    })
}
