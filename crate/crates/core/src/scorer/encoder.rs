use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;

use super::init_uniform;
use crate::Scalar;

/// Hidden states of every encoder layer, positions `0..=n` (0 is the
/// root). Layer 0 holds the embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput<T> {
    pub layers: Vec<Array2<T>>,
}

impl<T: Scalar> EncoderOutput<T> {
    /// Number of positions, including the root.
    pub fn positions(&self) -> usize {
        self.layers[0].nrows()
    }

    pub fn width(&self) -> usize {
        self.layers[0].ncols()
    }
}

/// Elman recurrent cell: `h_t = tanh(W_in x_t + W_rec h_prev + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RnnCell<T> {
    pub w_in: Array2<T>,
    pub w_rec: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> RnnCell<T> {
    fn new<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        RnnCell {
            w_in: init_uniform(hidden, input, rng),
            w_rec: init_uniform(hidden, hidden, rng),
            bias: Array1::zeros(hidden),
        }
    }

    fn zeros_like(&self) -> Self {
        RnnCell {
            w_in: Array2::zeros(self.w_in.raw_dim()),
            w_rec: Array2::zeros(self.w_rec.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }

    /// Run over `input` rows in the given direction.
    fn forward(&self, input: &Array2<T>, reverse: bool) -> Array2<T> {
        let steps = input.nrows();
        let hidden = self.bias.len();
        let projected = input.dot(&self.w_in.t()) + &self.bias;
        let mut out = Array2::zeros((steps, hidden));
        let mut prev: Option<usize> = None;
        for k in 0..steps {
            let t = if reverse { steps - 1 - k } else { k };
            let mut a = projected.row(t).to_owned();
            if let Some(p) = prev {
                a += &self.w_rec.dot(&out.row(p));
            }
            out.row_mut(t).assign(&a.mapv(T::tanh));
            prev = Some(t);
        }
        out
    }

    /// Backpropagate `d_out_rows` through the recurrence; returns the gradient
    /// with respect to the input rows.
    fn backward(
        &self,
        input: &Array2<T>,
        out: &Array2<T>,
        d_out_rows: &Array2<T>,
        reverse: bool,
        grad: &mut RnnCell<T>,
    ) -> Array2<T> {
        let steps = input.nrows();
        let hidden = self.bias.len();
        let mut d_pre = Array2::zeros((steps, hidden));
        let mut carry: Array1<T> = Array1::zeros(hidden);

        for k in (0..steps).rev() {
            let t = if reverse { steps - 1 - k } else { k };
            let dh = &d_out_rows.row(t) + &carry;
            let h = out.row(t);
            let da = ndarray::Zip::from(&dh)
                .and(&h)
                .map_collect(|&g, &h| g * (T::one() - h * h));
            let prev = if reverse {
                (t + 1 < steps).then_some(t + 1)
            } else {
                t.checked_sub(1)
            };
            if let Some(p) = prev {
                let h_prev = out.row(p);
                grad.w_rec += &outer(&da.view(), &h_prev);
                carry = self.w_rec.t().dot(&da);
            } else {
                carry.fill(T::zero());
            }
            d_pre.row_mut(t).assign(&da);
        }

        grad.w_in += &d_pre.t().dot(input);
        grad.bias += &d_pre.sum_axis(Axis(0));
        d_pre.dot(&self.w_in)
    }
}

fn outer<T: Scalar>(a: &ArrayView1<'_, T>, b: &ArrayView1<'_, T>) -> Array2<T> {
    let col = a.view().insert_axis(Axis(1));
    let row = b.view().insert_axis(Axis(0));
    col.dot(&row)
}

/// Bidirectional layer; output is `[forward; backward]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BiRnn<T> {
    pub forward: RnnCell<T>,
    pub backward: RnnCell<T>,
}

/// Word embeddings, a learned root vector and a stack of bidirectional
/// recurrent layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder<T> {
    pub embeddings: Array2<T>,
    pub root: Array1<T>,
    pub layers: Vec<BiRnn<T>>,
}

impl<T: Scalar> Encoder<T> {
    pub fn new<R: Rng>(vocab_rows: usize, dim: usize, layers: usize, rng: &mut R) -> Self {
        assert!(dim % 2 == 0, "encoder width must be even");
        let half = dim / 2;
        Encoder {
            embeddings: init_uniform(vocab_rows, dim, rng),
            root: init_uniform(1, dim, rng).row(0).to_owned(),
            layers: (0..layers)
                .map(|_| BiRnn {
                    forward: RnnCell::new(dim, half, rng),
                    backward: RnnCell::new(dim, half, rng),
                })
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Encoder {
            embeddings: Array2::zeros(self.embeddings.raw_dim()),
            root: Array1::zeros(self.root.raw_dim()),
            layers: self
                .layers
                .iter()
                .map(|l| BiRnn {
                    forward: l.forward.zeros_like(),
                    backward: l.backward.zeros_like(),
                })
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.root.len()
    }

    pub fn forward(&self, word_ids: &[usize]) -> EncoderOutput<T> {
        let dim = self.dim();
        let mut x = Array2::zeros((word_ids.len() + 1, dim));
        x.row_mut(0).assign(&self.root);
        for (i, &id) in word_ids.iter().enumerate() {
            x.row_mut(i + 1).assign(&self.embeddings.row(id));
        }

        let mut layers = vec![x];
        for layer in &self.layers {
            let input = layers.last().expect("layer 0");
            let fw = layer.forward.forward(input, false);
            let bw = layer.backward.forward(input, true);
            let half = fw.ncols();
            let mut out = Array2::zeros((input.nrows(), 2 * half));
            out.slice_mut(s![.., ..half]).assign(&fw);
            out.slice_mut(s![.., half..]).assign(&bw);
            layers.push(out);
        }

        EncoderOutput { layers }
    }

    /// Accumulate parameter gradients given the loss gradient for every
    /// layer of `out` (consumed).
    pub fn backward(&self, word_ids: &[usize], out: &EncoderOutput<T>, mut d_layers: Vec<Array2<T>>, grad: &mut Encoder<T>) {
        for l in (1..d_layers.len()).rev() {
            let layer = &self.layers[l - 1];
            let half = layer.forward.bias.len();
            let input = &out.layers[l - 1];
            let output = &out.layers[l];
            let fw_out = output.slice(s![.., ..half]).to_owned();
            let bw_out = output.slice(s![.., half..]).to_owned();
            let d_fw = d_layers[l].slice(s![.., ..half]).to_owned();
            let d_bw = d_layers[l].slice(s![.., half..]).to_owned();
            let grad_layer = &mut grad.layers[l - 1];

            let dx_fw = layer
                .forward
                .backward(input, &fw_out, &d_fw, false, &mut grad_layer.forward);
            let dx_bw = layer
                .backward
                .backward(input, &bw_out, &d_bw, true, &mut grad_layer.backward);
            d_layers[l - 1] += &dx_fw;
            d_layers[l - 1] += &dx_bw;
        }

        let d_x = &d_layers[0];
        grad.root += &d_x.row(0);
        for (i, &id) in word_ids.iter().enumerate() {
            let mut row = grad.embeddings.row_mut(id);
            row += &d_x.row(i + 1);
        }
    }

    pub fn blocks(&self) -> Vec<&[T]> {
        let mut blocks = vec![slice(&self.embeddings), self.root.as_slice().expect("contiguous")];
        for l in &self.layers {
            for c in [&l.forward, &l.backward] {
                blocks.push(slice(&c.w_in));
                blocks.push(slice(&c.w_rec));
                blocks.push(c.bias.as_slice().expect("contiguous"));
            }
        }
        blocks
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        let mut blocks = vec![
            self.embeddings.as_slice_mut().expect("contiguous"),
            self.root.as_slice_mut().expect("contiguous"),
        ];
        for l in &mut self.layers {
            for c in [&mut l.forward, &mut l.backward] {
                blocks.push(c.w_in.as_slice_mut().expect("contiguous"));
                blocks.push(c.w_rec.as_slice_mut().expect("contiguous"));
                blocks.push(c.bias.as_slice_mut().expect("contiguous"));
            }
        }
        blocks
    }
}

fn slice<T>(a: &Array2<T>) -> &[T] {
    a.as_slice().expect("contiguous")
}
