//! Fully connected network with leaky-ReLU hidden layers and hand-written backprop.
//!
//! All weights and biases live in one flat buffer so optimizers, checkpoints
//! and finite-difference checks can treat the parameters as a single vector.

use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis, LinalgScalar, ScalarOperand};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::num::Real;

/// Scalars usable by the learning code.
pub trait NetScalar: Real + LinalgScalar + ScalarOperand {
    fn as_f64(self) -> f64 {
        Real::to_f64(self)
    }
}
impl<T: Real + LinalgScalar + ScalarOperand> NetScalar for T {}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    sizes: Vec<usize>,
    params: Vec<T>,
    slope: T,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct MlpCache<T> {
    /// Input to each layer (`inputs[0]` is the network input).
    inputs: Vec<Array2<T>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Array2<T>>,
}

impl<T: NetScalar> Mlp<T> {
    /// Network with the given layer widths, `sizes[0]` inputs and `sizes.last()` outputs.
    ///
    /// Hidden layers use Glorot-uniform weights; the output layer is scaled by `out_gain`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], slope: f64, out_gain: f64, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&s| s > 0), "invalid layer sizes");
        let mut net = Self::zeros(sizes, slope);
        let layers = sizes.len() - 1;
        for l in 0..layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let gain = if l + 1 == layers { out_gain } else { 1.0 };
            let bound = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            let (w, _) = net.layer_range(l);
            for p in &mut net.params[w] {
                *p = T::lit(dist.sample(rng));
            }
        }
        net
    }

    pub fn zeros(sizes: &[usize], slope: f64) -> Self {
        let n = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Self {
            sizes: sizes.to_vec(),
            params: vec![T::ZERO; n],
            slope: T::lit(slope),
        }
    }

    pub fn from_params(sizes: &[usize], slope: f64, params: Vec<T>) -> Option<Self> {
        let mut net = Self::zeros(sizes, slope);
        (net.params.len() == params.len()).then(|| {
            net.params = params;
            net
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn slope(&self) -> T {
        self.slope
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// Index ranges of layer `l`'s weights and biases in the flat buffer.
    fn layer_range(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let mut off = 0;
        for k in 0..l {
            off += self.sizes[k] * self.sizes[k + 1] + self.sizes[k + 1];
        }
        let nw = self.sizes[l] * self.sizes[l + 1];
        (off..off + nw, off + nw..off + nw + self.sizes[l + 1])
    }

    fn weight(&self, l: usize) -> ArrayView2<'_, T> {
        let (w, _) = self.layer_range(l);
        ArrayView2::from_shape((self.sizes[l], self.sizes[l + 1]), &self.params[w]).unwrap()
    }

    fn bias(&self, l: usize) -> ArrayView1<'_, T> {
        let (_, b) = self.layer_range(l);
        ArrayView1::from(&self.params[b])
    }

    fn leaky(&self, x: T) -> T {
        if x > T::ZERO {
            x
        } else {
            x * self.slope
        }
    }

    /// Outputs for a `(batch, inputs)` matrix.
    pub fn forward(&self, x: ArrayView2<T>) -> Array2<T> {
        self.forward_impl(x, None)
    }

    /// Forward pass that also records what [`Mlp::backward`] needs.
    pub fn forward_cached(&self, x: ArrayView2<T>) -> (Array2<T>, MlpCache<T>) {
        let mut cache = MlpCache {
            inputs: Vec::new(),
            pre: Vec::new(),
        };
        let y = self.forward_impl(x, Some(&mut cache));
        (y, cache)
    }

    fn forward_impl(&self, x: ArrayView2<T>, mut cache: Option<&mut MlpCache<T>>) -> Array2<T> {
        let layers = self.sizes.len() - 1;
        let mut h = x.to_owned();
        for l in 0..layers {
            let mut z = h.dot(&self.weight(l));
            z += &self.bias(l);
            if let Some(c) = cache.as_deref_mut() {
                c.inputs.push(std::mem::replace(&mut h, Array2::zeros((0, 0))));
            }
            if l + 1 == layers {
                return z;
            }
            if let Some(c) = cache.as_deref_mut() {
                c.pre.push(z.clone());
            }
            z.mapv_inplace(|v| self.leaky(v));
            h = z;
        }
        unreachable!()
    }

    /// Accumulate parameter gradients into `grad` given `dL/dy`; returns `dL/dx`.
    pub fn backward(&self, cache: &MlpCache<T>, grad_out: ArrayView2<T>, grad: &mut [T]) -> Array2<T> {
        assert_eq!(grad.len(), self.params.len());
        let layers = self.sizes.len() - 1;
        let mut g = grad_out.to_owned();
        for l in (0..layers).rev() {
            let (wr, br) = self.layer_range(l);
            let (gw_slice, rest) = grad[wr.start..br.end].split_at_mut(wr.len());
            let mut gw = ArrayViewMut2::from_shape((self.sizes[l], self.sizes[l + 1]), gw_slice).unwrap();
            gw += &cache.inputs[l].t().dot(&g);
            for (b, s) in rest.iter_mut().zip(g.sum_axis(Axis(0)).iter()) {
                *b += *s;
            }
            let mut gx = g.dot(&self.weight(l).t());
            if l > 0 {
                let slope = self.slope;
                ndarray::Zip::from(&mut gx)
                    .and(&cache.pre[l - 1])
                    .for_each(|d, &z| {
                        if z <= T::ZERO {
                            *d *= slope;
                        }
                    });
            }
            g = gx;
        }
        g
    }
}
