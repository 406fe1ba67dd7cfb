use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::encoder::EncoderOutput;
use super::{init_uniform, mix_layers, softmax};
use crate::Scalar;

/// Deep biaffine function over head/modifier projections of the
/// layer-mixed encoder states:
///
/// `score(i, j) = v_i' U v_j + b_head . v_i + b_mod . v_j + b`
///
/// with `v_i = ReLU(W_head mix(alpha_head)_i + c_head)` and likewise for
/// the modifier side.
#[derive(Clone, Debug, PartialEq)]
pub struct Dbf<T> {
    pub alpha_head: Array1<T>,
    pub alpha_mod: Array1<T>,
    pub w_head: Array2<T>,
    pub c_head: Array1<T>,
    pub w_mod: Array2<T>,
    pub c_mod: Array1<T>,
    pub u: Array2<T>,
    pub b_head: Array1<T>,
    pub b_mod: Array1<T>,
    /// Scalar bias, stored as a one-element block.
    pub b: Array1<T>,
}

/// Forward activations of one DBF for one sentence.
#[derive(Clone, Debug)]
pub struct Projection<T> {
    pub weights_head: Array1<T>,
    pub weights_mod: Array1<T>,
    pub mixed_head: Array2<T>,
    pub mixed_mod: Array2<T>,
    pub v_head: Array2<T>,
    pub v_mod: Array2<T>,
}

impl<T: Scalar> Dbf<T> {
    pub fn new<R: Rng>(layers: usize, dim: usize, hidden: usize, rng: &mut R) -> Self {
        Dbf {
            alpha_head: Array1::zeros(layers),
            alpha_mod: Array1::zeros(layers),
            w_head: init_uniform(hidden, dim, rng),
            c_head: Array1::zeros(hidden),
            w_mod: init_uniform(hidden, dim, rng),
            c_mod: Array1::zeros(hidden),
            u: init_uniform(hidden, hidden, rng),
            b_head: Array1::zeros(hidden),
            b_mod: Array1::zeros(hidden),
            b: Array1::zeros(1),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Dbf {
            alpha_head: Array1::zeros(self.alpha_head.raw_dim()),
            alpha_mod: Array1::zeros(self.alpha_mod.raw_dim()),
            w_head: Array2::zeros(self.w_head.raw_dim()),
            c_head: Array1::zeros(self.c_head.raw_dim()),
            w_mod: Array2::zeros(self.w_mod.raw_dim()),
            c_mod: Array1::zeros(self.c_mod.raw_dim()),
            u: Array2::zeros(self.u.raw_dim()),
            b_head: Array1::zeros(self.b_head.raw_dim()),
            b_mod: Array1::zeros(self.b_mod.raw_dim()),
            b: Array1::zeros(1),
        }
    }

    pub fn hidden(&self) -> usize {
        self.u.nrows()
    }

    pub fn project(&self, enc: &EncoderOutput<T>) -> Projection<T> {
        let weights_head = softmax(self.alpha_head.view());
        let weights_mod = softmax(self.alpha_mod.view());
        let mixed_head = mix_layers(enc, self.alpha_head.view());
        let mixed_mod = mix_layers(enc, self.alpha_mod.view());
        let relu = |x: T| if x > T::zero() { x } else { T::zero() };
        let v_head = (mixed_head.dot(&self.w_head.t()) + &self.c_head).mapv(relu);
        let v_mod = (mixed_mod.dot(&self.w_mod.t()) + &self.c_mod).mapv(relu);
        Projection {
            weights_head,
            weights_mod,
            mixed_head,
            mixed_mod,
            v_head,
            v_mod,
        }
    }

    /// All pair scores, `[head, dependent]`, positions `0..=n` on both axes.
    pub fn scores(&self, p: &Projection<T>) -> Array2<T> {
        let bilinear = p.v_head.dot(&self.u).dot(&p.v_mod.t());
        let head_term = p.v_head.dot(&self.b_head).insert_axis(Axis(1));
        let mod_term = p.v_mod.dot(&self.b_mod).insert_axis(Axis(0));
        bilinear + &head_term + &mod_term + self.b[0]
    }

    pub fn pair_score(&self, p: &Projection<T>, head: usize, dep: usize) -> T {
        let vh = p.v_head.row(head);
        let vm = p.v_mod.row(dep);
        vh.dot(&self.u.dot(&vm)) + vh.dot(&self.b_head) + vm.dot(&self.b_mod) + self.b[0]
    }

    /// Accumulate gradients for loss gradient `d_scores` (same layout as
    /// [`Dbf::scores`]); encoder-layer gradients are added to `d_layers`.
    pub fn backward(
        &self,
        enc: &EncoderOutput<T>,
        p: &Projection<T>,
        d_scores: &Array2<T>,
        grad: &mut Dbf<T>,
        d_layers: &mut [Array2<T>],
    ) {
        let row_sums = d_scores.sum_axis(Axis(1));
        let col_sums = d_scores.sum_axis(Axis(0));

        grad.u += &p.v_head.t().dot(d_scores).dot(&p.v_mod);
        grad.b_head += &p.v_head.t().dot(&row_sums);
        grad.b_mod += &p.v_mod.t().dot(&col_sums);
        grad.b[0] = grad.b[0] + d_scores.sum();

        let d_v_head = d_scores.dot(&p.v_mod.dot(&self.u.t()))
            + &col(&row_sums).dot(&row(&self.b_head));
        let d_v_mod = d_scores.t().dot(&p.v_head.dot(&self.u))
            + &col(&col_sums).dot(&row(&self.b_mod));

        let gate = |d: &Array2<T>, v: &Array2<T>| {
            ndarray::Zip::from(d)
                .and(v)
                .map_collect(|&d, &v| if v > T::zero() { d } else { T::zero() })
        };
        let d_pre_head = gate(&d_v_head, &p.v_head);
        let d_pre_mod = gate(&d_v_mod, &p.v_mod);

        grad.w_head += &d_pre_head.t().dot(&p.mixed_head);
        grad.c_head += &d_pre_head.sum_axis(Axis(0));
        grad.w_mod += &d_pre_mod.t().dot(&p.mixed_mod);
        grad.c_mod += &d_pre_mod.sum_axis(Axis(0));

        let d_mixed_head = d_pre_head.dot(&self.w_head);
        let d_mixed_mod = d_pre_mod.dot(&self.w_mod);

        mix_backward(enc, &p.weights_head, &d_mixed_head, &mut grad.alpha_head, d_layers);
        mix_backward(enc, &p.weights_mod, &d_mixed_mod, &mut grad.alpha_mod, d_layers);
    }

    pub fn blocks(&self) -> Vec<&[T]> {
        vec![
            self.alpha_head.as_slice().expect("contiguous"),
            self.alpha_mod.as_slice().expect("contiguous"),
            self.w_head.as_slice().expect("contiguous"),
            self.c_head.as_slice().expect("contiguous"),
            self.w_mod.as_slice().expect("contiguous"),
            self.c_mod.as_slice().expect("contiguous"),
            self.u.as_slice().expect("contiguous"),
            self.b_head.as_slice().expect("contiguous"),
            self.b_mod.as_slice().expect("contiguous"),
            self.b.as_slice().expect("contiguous"),
        ]
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        vec![
            self.alpha_head.as_slice_mut().expect("contiguous"),
            self.alpha_mod.as_slice_mut().expect("contiguous"),
            self.w_head.as_slice_mut().expect("contiguous"),
            self.c_head.as_slice_mut().expect("contiguous"),
            self.w_mod.as_slice_mut().expect("contiguous"),
            self.c_mod.as_slice_mut().expect("contiguous"),
            self.u.as_slice_mut().expect("contiguous"),
            self.b_head.as_slice_mut().expect("contiguous"),
            self.b_mod.as_slice_mut().expect("contiguous"),
            self.b.as_slice_mut().expect("contiguous"),
        ]
    }
}

fn col<T: Scalar>(v: &Array1<T>) -> Array2<T> {
    v.view().insert_axis(Axis(1)).to_owned()
}

fn row<T: Scalar>(v: &Array1<T>) -> Array2<T> {
    v.view().insert_axis(Axis(0)).to_owned()
}

/// Backward pass of the softmax-weighted layer mix.
fn mix_backward<T: Scalar>(
    enc: &EncoderOutput<T>,
    weights: &Array1<T>,
    d_mixed: &Array2<T>,
    d_alpha: &mut Array1<T>,
    d_layers: &mut [Array2<T>],
) {
    let per_layer: Vec<T> = enc
        .layers
        .iter()
        .map(|layer| (layer * d_mixed).sum())
        .collect();
    let expected: T = weights.iter().zip(&per_layer).map(|(&w, &g)| w * g).sum();
    for (l, (&w, &g)) in weights.iter().zip(&per_layer).enumerate() {
        d_alpha[l] = d_alpha[l] + w * (g - expected);
        d_layers[l].scaled_add(w, d_mixed);
    }
}
