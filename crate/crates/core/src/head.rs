//! Reverse splitting: per-resolution patch forecasts from the MRP
//! positions, summed over resolutions.

use alloc::format;
use alloc::vec::Vec;

use crate::layout::{TokenFamily, TokenLayout};
use crate::nn::Linear;
use crate::params::{ParamStore, Rng};
use crate::patch::{PatchPlan, ResolutionSet};
use crate::tape::{Tape, Var};
use crate::{Error, Real, Result};

#[derive(Clone, Debug)]
pub struct ReverseSplitter {
    pub resolutions: ResolutionSet,
    /// Plans over the horizon `f`.
    pub plans: Vec<PatchPlan>,
    /// `[d_m → p_k + 1]` per resolution.
    pub projections: Vec<Linear>,
    pub horizon: usize,
}

impl ReverseSplitter {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        resolutions: &ResolutionSet,
        horizon: usize,
        d_model: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let plans = resolutions
            .as_slice()
            .iter()
            .map(|&k| PatchPlan::new(horizon, k))
            .collect::<Result<Vec<_>>>()?;
        let projections = plans
            .iter()
            .map(|p| Linear::new(store, &format!("{name}.k{}", p.k), d_model, p.width(), true, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            resolutions: resolutions.clone(),
            plans,
            projections,
            horizon,
        })
    }

    /// One `[B, C, f]` forecast per resolution.
    pub fn partials<T: Real>(&self, t: &mut Tape<'_, T>, encoded: Var, layout: &TokenLayout) -> Result<Vec<Var>> {
        let seg = layout
            .segment(TokenFamily::Mrp)
            .filter(|s| s.len == self.resolutions.token_count())
            .ok_or_else(|| Error::config("layout", "MRP segment does not match the head's resolution set"))?;
        let s = t.shape(encoded).to_vec();
        if s.len() != 4 || s[2] != layout.total() {
            return Err(Error::config("layout", format!("encoded shape {s:?} disagrees with {} tokens", layout.total())));
        }
        let offsets = self.resolutions.offsets();
        let mut out = Vec::with_capacity(self.plans.len());
        for ((plan, proj), off) in self.plans.iter().zip(&self.projections).zip(offsets) {
            let tokens = t.narrow(encoded, 2, seg.start + off, plan.k)?;
            let patches = proj.forward(t, tokens)?;
            let flat = t.reshape(patches, &[s[0], s[1], plan.k * plan.width()])?;
            out.push(t.gather(flat, 2, plan.truncation_index())?);
        }
        Ok(out)
    }

    /// `[B, C, n, d_m] → [B, C, f]`.
    pub fn forward<T: Real>(&self, t: &mut Tape<'_, T>, encoded: Var, layout: &TokenLayout) -> Result<Var> {
        let parts = self.partials(t, encoded, layout)?;
        let mut acc = parts[0];
        for &p in &parts[1..] {
            acc = t.add(acc, p)?;
        }
        Ok(acc)
    }
}

/// Parameter counts of the reverse-splitting head and of a flattening head
/// over the same tokens.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct HeadParamCount {
    /// `d_m · Σ(p_k + 1)`
    pub weights: usize,
    /// `Σ(p_k + 1)`
    pub biases: usize,
    /// `d_m · f · Σk`
    pub flattening: usize,
}

pub fn head_param_count(resolutions: &ResolutionSet, horizon: usize, d_model: usize) -> Result<HeadParamCount> {
    let mut widths = 0;
    for &k in resolutions.as_slice() {
        widths += PatchPlan::new(horizon, k)?.width();
    }
    Ok(HeadParamCount {
        weights: d_model * widths,
        biases: widths,
        flattening: d_model * horizon * resolutions.token_count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, GradCheckOptions};
    use crate::params::seeded;
    use crate::tape::Mode;
    use crate::tensor::Tensor;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = seeded(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn setup(ks: Vec<usize>, f: usize, extra: usize) -> (ParamStore<f64>, ReverseSplitter, TokenLayout) {
        let r = ResolutionSet::new(ks).unwrap();
        let mut store = ParamStore::new();
        let h = ReverseSplitter::new(&mut store, "head", &r, f, 3, &mut seeded(2)).unwrap();
        for id in store.trainable_ids().collect::<Vec<_>>() {
            let v = store.value(id).map(|x| x + 0.05);
            *store.value_mut(id) = v;
        }
        let mut layout = TokenLayout::default();
        layout.push(TokenFamily::Mrp, r.token_count());
        layout.push(TokenFamily::Static, extra);
        (store, h, layout)
    }

    fn run(store: &ParamStore<f64>, h: &ReverseSplitter, layout: &TokenLayout, x: Tensor<f64>) -> Tensor<f64> {
        let mut t = Tape::new(store, Mode::Eval);
        let v = t.input(x);
        let y = h.forward(&mut t, v, layout).unwrap();
        t.value(y).clone()
    }

    #[test]
    fn count_examples() {
        let c = head_param_count(&ResolutionSet::new(vec![1, 2, 4, 16]).unwrap(), 16, 64).unwrap();
        assert_eq!(c.weights, 2112);
        let c = head_param_count(&ResolutionSet::new(vec![1, 2, 3, 4, 6, 8]).unwrap(), 24, 64).unwrap();
        assert_eq!((c.weights, c.flattening), (4032, 36864));
        let c = head_param_count(&ResolutionSet::new(vec![1]).unwrap(), 10, 8).unwrap();
        assert_eq!((c.weights, c.flattening), (88, 80));
    }

    #[test]
    fn count_matches_built_head() {
        let r = ResolutionSet::new(vec![1, 3, 5]).unwrap();
        let mut store = ParamStore::<f64>::new();
        ReverseSplitter::new(&mut store, "head", &r, 11, 6, &mut seeded(0)).unwrap();
        let c = head_param_count(&r, 11, 6).unwrap();
        assert_eq!(store.param_count(), c.weights + c.biases);
    }

    #[test]
    fn aux_positions_are_ignored() {
        let (s, h, layout) = setup(vec![1, 2], 5, 3);
        let x = rand_tensor(&[2, 1, 6, 3], 1);
        let mut y = x.clone();
        for b in 0..2 {
            for p in 3..6 {
                for j in 0..3 {
                    y.set(&[b, 0, p, j], 100.0);
                }
            }
        }
        assert_eq!(run(&s, &h, &layout, x), run(&s, &h, &layout, y));
    }

    #[test]
    fn single_surviving_resolution() {
        let (mut s, h, layout) = setup(vec![1, 2, 4], 8, 0);
        for l in &h.projections[1..] {
            let z = Tensor::zeros(s.value(l.w).shape());
            *s.value_mut(l.w) = z;
            let z = Tensor::zeros(s.value(l.b.unwrap()).shape());
            *s.value_mut(l.b.unwrap()) = z;
        }
        let x = rand_tensor(&[1, 1, 7, 3], 4);
        let y = run(&s, &h, &layout, x.clone());
        let w = s.value(h.projections[0].w);
        let b = s.value(h.projections[0].b.unwrap());
        for o in 0..8 {
            let expect: f64 = (0..3).map(|j| x.get(&[0, 0, 0, j]) * w.get(&[j, o])).sum::<f64>() + b.data()[o];
            assert!((y.data()[o] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn truncation_drops_last_element_of_short_patches() {
        // f=5, k=2: patches of 3 and 2, projected to width 3
        let (s, h, layout) = setup(vec![2], 5, 0);
        let x = rand_tensor(&[1, 1, 2, 3], 8);
        let y = run(&s, &h, &layout, x.clone());
        let w = s.value(h.projections[0].w);
        let b = s.value(h.projections[0].b.unwrap());
        let proj = |tok: usize, o: usize| (0..3).map(|j| x.get(&[0, 0, tok, j]) * w.get(&[j, o])).sum::<f64>() + b.data()[o];
        let expect = [proj(0, 0), proj(0, 1), proj(0, 2), proj(1, 0), proj(1, 1)];
        for (a, e) in y.data().iter().zip(expect) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn additive_over_resolutions() {
        let (s, h, layout) = setup(vec![1, 2, 3], 7, 2);
        let x = rand_tensor(&[2, 2, 8, 3], 3);
        let mut t = Tape::new(&s, Mode::Eval);
        let v = t.input(x);
        let parts = h.partials(&mut t, v, &layout).unwrap();
        let mut sum = Tensor::zeros(&[2, 2, 7]);
        for p in parts {
            sum.add_assign(t.value(p));
        }
        let y = h.forward(&mut t, v, &layout).unwrap();
        assert!(t.value(y).max_abs_diff(&sum) < 1e-15);
    }

    #[test]
    fn head_gradcheck() {
        let (s, h, layout) = setup(vec![1, 2], 5, 1);
        let x = rand_tensor(&[2, 1, 4, 3], 5);
        let r = grad_check(&s, &[x], |t, v| h.forward(t, v[0], &layout), &GradCheckOptions::default()).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn output_length_and_counts(mask in 1u32..(1 << 10), extra in 0usize..20, d in 1usize..9) {
            let ks: Vec<usize> = (0..10).filter(|i| mask & (1 << i) != 0).map(|i| i + 1).collect();
            let f = ks.iter().max().unwrap() + extra;
            let r = ResolutionSet::new(ks.clone()).unwrap();
            let c = head_param_count(&r, f, d).unwrap();
            let direct: usize = ks.iter().map(|&k| f / k + 1).sum();
            prop_assert_eq!(c.weights, d * direct);
            if r.token_count() >= 2 {
                prop_assert!(c.weights < c.flattening);
            }
            let mut store = ParamStore::<f64>::new();
            let h = ReverseSplitter::new(&mut store, "h", &r, f, d, &mut seeded(1)).unwrap();
            let mut layout = TokenLayout::default();
            layout.push(TokenFamily::Mrp, r.token_count());
            let mut t = Tape::new(&store, Mode::Eval);
            let v = t.input(Tensor::zeros(&[1, 1, r.token_count(), d]));
            let y = h.forward(&mut t, v, &layout).unwrap();
            prop_assert_eq!(t.shape(y), &[1, 1, f]);
        }
    }
}
