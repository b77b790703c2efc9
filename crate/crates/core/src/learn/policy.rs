//! Gaussian actor-critic with a state-independent log standard deviation.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::mlp::{Mlp, MlpCache, NetScalar};

/// `0.5 · ln(2π)`.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyNet<T> {
    pub actor: Mlp<T>,
    pub critic: Mlp<T>,
    pub log_std: Vec<T>,
}

/// Forward activations of both heads for one batch.
pub struct PolicyCache<T> {
    pub means: Array2<T>,
    pub values: Array1<T>,
    pub actor: MlpCache<T>,
    pub critic: MlpCache<T>,
}

impl<T: NetScalar> PolicyNet<T> {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        act_dim: usize,
        hidden: &[usize],
        init_std: f64,
        slope: f64,
        rng: &mut R,
    ) -> Self {
        let sizes = |out: usize| {
            let mut s = vec![obs_dim];
            s.extend_from_slice(hidden);
            s.push(out);
            s
        };
        let actor = Mlp::new(&sizes(act_dim), slope, 0.01, rng);
        let critic = Mlp::new(&sizes(1), slope, 1.0, rng);
        Self {
            actor,
            critic,
            log_std: vec![T::lit(init_std.ln()); act_dim],
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn num_params(&self) -> usize {
        self.actor.num_params() + self.critic.num_params() + self.log_std.len()
    }

    /// Parameters as one vector: actor, critic, log std.
    pub fn flat_params(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.num_params());
        v.extend_from_slice(self.actor.params());
        v.extend_from_slice(self.critic.params());
        v.extend_from_slice(&self.log_std);
        v
    }

    pub fn set_flat_params(&mut self, p: &[T]) {
        assert_eq!(p.len(), self.num_params());
        let (a, rest) = p.split_at(self.actor.num_params());
        let (c, s) = rest.split_at(self.critic.num_params());
        self.actor.params_mut().copy_from_slice(a);
        self.critic.params_mut().copy_from_slice(c);
        self.log_std.copy_from_slice(s);
    }

    /// Apply `f(param, index)` to every parameter in flat order.
    pub fn for_each_param(&mut self, mut f: impl FnMut(usize, &mut T)) {
        let mut i = 0;
        for p in self
            .actor
            .params_mut()
            .iter_mut()
            .chain(self.critic.params_mut().iter_mut())
        {
            f(i, p);
            i += 1;
        }
        for p in self.log_std.iter_mut() {
            f(i, p);
            i += 1;
        }
    }

    pub fn std(&self) -> Vec<T> {
        self.log_std.iter().map(|l| l.exp()).collect()
    }

    pub fn means(&self, obs: ArrayView2<T>) -> Array2<T> {
        self.actor.forward(obs)
    }

    pub fn values(&self, obs: ArrayView2<T>) -> Array1<T> {
        self.critic.forward(obs).index_axis_move(Axis(1), 0)
    }

    pub fn forward_cached(&self, obs: ArrayView2<T>) -> PolicyCache<T> {
        let (means, actor) = self.actor.forward_cached(obs);
        let (v, critic) = self.critic.forward_cached(obs);
        PolicyCache {
            means,
            values: v.index_axis_move(Axis(1), 0),
            actor,
            critic,
        }
    }

    /// Diagonal Gaussian log density of `a` around `mean`.
    pub fn log_prob(&self, mean: &[T], a: &[T]) -> T {
        let mut lp = T::ZERO;
        for ((&m, &x), &ls) in mean.iter().zip(a).zip(&self.log_std) {
            let z = (x - m) / ls.exp();
            lp -= T::HALF * z * z + ls + T::lit(HALF_LN_2PI);
        }
        lp
    }

    /// Entropy of the action distribution (the same for every state).
    pub fn entropy(&self) -> T {
        self.log_std
            .iter()
            .fold(T::ZERO, |acc, &ls| acc + ls + T::lit(0.5 + HALF_LN_2PI))
    }

    /// Sample actions for a batch; returns actions, log densities and values.
    pub fn sample<R: Rng + ?Sized>(&self, obs: ArrayView2<T>, rng: &mut R) -> (Array2<T>, Array1<T>, Array1<T>) {
        let means = self.means(obs);
        let values = self.values(obs);
        let std = self.std();
        let mut actions = means.clone();
        let mut logp = Array1::zeros(obs.nrows());
        for (i, mut row) in actions.rows_mut().into_iter().enumerate() {
            for (j, a) in row.iter_mut().enumerate() {
                let e: f64 = StandardNormal.sample(rng);
                *a += std[j] * T::lit(e);
            }
            logp[i] = self.log_prob(means.row(i).as_slice().unwrap(), row.as_slice().unwrap());
        }
        (actions, logp, values)
    }
}
