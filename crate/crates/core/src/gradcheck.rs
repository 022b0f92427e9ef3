//! Central finite-difference oracle for tape gradients.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::Rng as _;

use crate::params::{seeded, ParamStore};
use crate::tape::{Mode, Tape, Var};
use crate::tensor::Tensor;
use crate::Result;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tol: f64,
    /// Denominator floor of the relative error, so coordinates whose true
    /// gradient is ~0 are judged by absolute error instead.
    pub floor: f64,
    pub max_coords: usize,
    pub mode: Mode,
    pub seed: u64,
    /// Multiplies every analytic gradient by `1 + corrupt`. Negative control.
    pub corrupt: Option<f64>,
    /// Only parameters whose name starts with this are checked.
    pub prefix: Option<String>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tol: 1e-4,
            floor: 1e-4,
            max_coords: 200,
            mode: Mode::Train,
            seed: 0,
            corrupt: None,
            prefix: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct TensorReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    /// Worst coordinates first, at most five.
    pub worst: Vec<Mismatch>,
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub tol: f64,
    pub tensors: Vec<TensorReport>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.max_rel_err < self.tol)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_err).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &TensorReport> {
        self.tensors.iter().filter(|t| t.max_rel_err >= self.tol)
    }
}

/// Compares tape gradients with central differences for every trainable
/// parameter in `store` and every tensor in `inputs`.
///
/// `f` builds the forward pass; its output is reduced to a scalar by a fixed
/// pseudo-random weighting of the output entries, so symmetric cancellations
/// (e.g. normalized outputs summing to zero) cannot hide errors.
pub fn grad_check<F>(store: &ParamStore<f64>, inputs: &[Tensor<f64>], f: F, opts: &GradCheckOptions) -> Result<GradReport>
where
    F: Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var>,
{
    let mut rng = seeded(opts.seed);
    let mut weights: Option<Tensor<f64>> = None;

    let mut eval = |store: &ParamStore<f64>, inputs: &[Tensor<f64>], grads: bool| -> Result<(f64, Vec<Tensor<f64>>, Vec<Tensor<f64>>)> {
        let mut tape = Tape::new(store, opts.mode);
        let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let w = weights.get_or_insert_with(|| {
            let shape = tape.shape(out).to_vec();
            let data = (0..tape.value(out).numel())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            Tensor::new(shape, data).expect("shape")
        });
        let wv = tape.constant(w.clone());
        let prod = tape.mul(out, wv)?;
        let loss = tape.sum_all(prod);
        let value = tape.value(loss).item();
        if !grads {
            return Ok((value, Vec::new(), Vec::new()));
        }
        let g = tape.backward(loss)?;
        let pg = store
            .trainable_ids()
            .map(|id| {
                g.param(id)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(store.value(id).shape()))
            })
            .collect();
        let ig = vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| g.wrt(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        Ok((value, pg, ig))
    };

    let (_, param_grads, input_grads) = eval(store, inputs, true)?;
    let mut coord_rng = seeded(opts.seed ^ 0x5eed);
    let mut tensors = Vec::new();

    let ids: Vec<_> = store.trainable_ids().collect();
    for (id, analytic) in ids.iter().zip(&param_grads) {
        if opts.prefix.as_deref().is_some_and(|p| !store.name(*id).starts_with(p)) {
            continue;
        }
        let n = analytic.numel();
        let coords = pick(n, opts.max_coords, &mut coord_rng);
        let mut scratch = store.clone();
        let mut mismatches = Vec::new();
        for &c in &coords {
            let orig = store.value(*id).data()[c];
            scratch.value_mut(*id).data_mut()[c] = orig + opts.step;
            let (up, _, _) = eval(&scratch, inputs, false)?;
            scratch.value_mut(*id).data_mut()[c] = orig - opts.step;
            let (down, _, _) = eval(&scratch, inputs, false)?;
            scratch.value_mut(*id).data_mut()[c] = orig;
            mismatches.push(compare(c, analytic.data()[c], (up - down) / (2.0 * opts.step), opts));
        }
        tensors.push(summarize(String::from(store.name(*id)), mismatches));
    }

    for (i, analytic) in input_grads.iter().enumerate() {
        let coords = pick(analytic.numel(), opts.max_coords, &mut coord_rng);
        let mut scratch: Vec<Tensor<f64>> = inputs.to_vec();
        let mut mismatches = Vec::new();
        for &c in &coords {
            let orig = inputs[i].data()[c];
            scratch[i].data_mut()[c] = orig + opts.step;
            let (up, _, _) = eval(store, &scratch, false)?;
            scratch[i].data_mut()[c] = orig - opts.step;
            let (down, _, _) = eval(store, &scratch, false)?;
            scratch[i].data_mut()[c] = orig;
            mismatches.push(compare(c, analytic.data()[c], (up - down) / (2.0 * opts.step), opts));
        }
        tensors.push(summarize(format!("input{i}"), mismatches));
    }

    Ok(GradReport {
        tol: opts.tol,
        tensors,
    })
}

fn pick(n: usize, max: usize, rng: &mut crate::params::Rng) -> Vec<usize> {
    if n <= max {
        (0..n).collect()
    } else {
        let mut v = sample(rng, n, max).into_vec();
        v.sort_unstable();
        v
    }
}

fn compare(coord: usize, analytic: f64, numeric: f64, opts: &GradCheckOptions) -> Mismatch {
    let analytic = match opts.corrupt {
        Some(c) => analytic * (1.0 + c) + c,
        None => analytic,
    };
    let denom = analytic.abs().max(numeric.abs()).max(opts.floor);
    Mismatch {
        coord,
        analytic,
        numeric,
        rel_err: (analytic - numeric).abs() / denom,
    }
}

fn summarize(name: String, mut m: Vec<Mismatch>) -> TensorReport {
    m.sort_by(|a, b| b.rel_err.total_cmp(&a.rel_err));
    let max_rel_err = m.first().map_or(0.0, |w| w.rel_err);
    let checked = m.len();
    m.truncate(5);
    TensorReport {
        name,
        checked,
        max_rel_err,
        worst: m,
    }
}
