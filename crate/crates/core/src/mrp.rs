//! Multiple-resolution patching of the past observations.

use alloc::format;
use alloc::vec::Vec;

use crate::nn::Linear;
use crate::params::{ParamStore, Rng};
use crate::patch::{PatchPlan, ResolutionSet};
use crate::tape::{Tape, Var};
use crate::{Error, Real, Result};

/// One shared projection `[b_k + 1 → d_m]` per resolution.
#[derive(Clone, Debug)]
pub struct MrpTokenizer {
    pub resolutions: ResolutionSet,
    pub plans: Vec<PatchPlan>,
    pub projections: Vec<Linear>,
    pub lookback: usize,
}

impl MrpTokenizer {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        resolutions: &ResolutionSet,
        lookback: usize,
        d_model: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let plans = resolutions
            .as_slice()
            .iter()
            .map(|&k| PatchPlan::new(lookback, k))
            .collect::<Result<Vec<_>>>()?;
        let projections = plans
            .iter()
            .map(|p| Linear::new(store, &format!("{name}.k{}", p.k), p.width(), d_model, true, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            resolutions: resolutions.clone(),
            plans,
            projections,
            lookback,
        })
    }

    pub fn token_count(&self) -> usize {
        self.resolutions.token_count()
    }

    /// `[B, C, l] → [B, C, Σk, d_m]`, ascending k then patch position.
    pub fn forward<T: Real>(&self, t: &mut Tape<'_, T>, past: Var) -> Result<Var> {
        let s = t.shape(past).to_vec();
        if s.len() != 3 || s[2] != self.lookback {
            return Err(Error::shape("mrp", &s, &[0, 0, self.lookback]));
        }
        let mut parts = Vec::with_capacity(self.plans.len());
        for (plan, proj) in self.plans.iter().zip(&self.projections) {
            let patches = t.gather(past, 2, plan.padded_index())?;
            let patches = t.reshape(patches, &[s[0], s[1], plan.k, plan.width()])?;
            parts.push(proj.forward(t, patches)?);
        }
        t.concat(&parts, 2)
    }

    pub fn param_count(&self) -> usize {
        self.projections.iter().map(Linear::param_count).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::seeded;
    use crate::tape::Mode;
    use crate::tensor::Tensor;
    use alloc::vec;

    fn build(ks: Vec<usize>, l: usize, d: usize) -> (ParamStore<f64>, MrpTokenizer) {
        let mut store = ParamStore::new();
        let mut rng = seeded(11);
        let m = MrpTokenizer::new(&mut store, "mrp", &ResolutionSet::new(ks).unwrap(), l, d, &mut rng).unwrap();
        for id in store.trainable_ids().collect::<Vec<_>>() {
            let v = store.value(id).map(|x| x + 0.1);
            *store.value_mut(id) = v;
        }
        (store, m)
    }

    fn run(store: &ParamStore<f64>, m: &MrpTokenizer, x: Tensor<f64>) -> Tensor<f64> {
        let mut t = Tape::new(store, Mode::Eval);
        let v = t.input(x);
        let y = m.forward(&mut t, v).unwrap();
        t.value(y).clone()
    }

    #[test]
    fn default_token_count() {
        let (s, m) = build(vec![1, 2, 3, 4, 6, 8], 32, 4);
        let y = run(&s, &m, Tensor::zeros(&[2, 3, 32]));
        assert_eq!(y.shape(), &[2, 3, 24, 4]);
    }

    #[test]
    fn zero_input_gives_bias() {
        let (s, m) = build(vec![1, 2], 5, 3);
        let y = run(&s, &m, Tensor::zeros(&[1, 1, 5]));
        let b1 = s.value(m.projections[0].b.unwrap()).data().to_vec();
        let b2 = s.value(m.projections[1].b.unwrap()).data().to_vec();
        assert_eq!(&y.data()[0..3], &b1[..]);
        assert_eq!(&y.data()[3..6], &b2[..]);
        assert_eq!(&y.data()[6..9], &b2[..]);
    }

    #[test]
    fn single_resolution_matches_matvec() {
        let (s, m) = build(vec![1], 4, 2);
        let x = [0.5, -1.0, 2.0, 0.25];
        let y = run(&s, &m, Tensor::from_f64(&[1, 1, 4], &x).unwrap());
        let w = s.value(m.projections[0].w);
        let b = s.value(m.projections[0].b.unwrap());
        // width is 5: one left pad then the series
        let padded = [0.0, 0.5, -1.0, 2.0, 0.25];
        for j in 0..2 {
            let expect: f64 = (0..5).map(|i| padded[i] * w.get(&[i, j])).sum::<f64>() + b.data()[j];
            assert!((y.data()[j] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn locality() {
        let (s, m) = build(vec![1, 2, 3], 9, 2);
        let base = Tensor::from_f64(&[1, 1, 9], &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]).unwrap();
        let y0 = run(&s, &m, base.clone());
        let mut bumped = base;
        bumped.data_mut()[4] += 1.0;
        let y1 = run(&s, &m, bumped);
        let changed: Vec<usize> = (0..6)
            .filter(|&tok| (0..2).any(|j| y0.data()[tok * 2 + j] != y1.data()[tok * 2 + j]))
            .collect();
        // step 4 lives in the k=1 patch, the first k=2 patch [0..5) and the middle k=3 patch [3..6)
        assert_eq!(changed, vec![0, 1, 4]);
    }

    #[test]
    fn channel_permutation_commutes() {
        let (s, m) = build(vec![1, 2], 6, 3);
        let x = Tensor::from_f64(&[1, 2, 6], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, -1.0, 0.0, 1.0, 0.5, 0.25, 2.0]).unwrap();
        let y = run(&s, &m, x.clone());
        let xp = x.permute(&[0, 1, 2]).unwrap().gather(1, &[Some(1), Some(0)]).unwrap();
        let yp = run(&s, &m, xp);
        assert_eq!(yp, y.gather(1, &[Some(1), Some(0)]).unwrap());
    }
}
