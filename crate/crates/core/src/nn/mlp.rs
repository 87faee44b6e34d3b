use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;

use crate::{Error, Result, Rng};

pub const MAX_PARAMS: usize = 200_000;

/// Layer widths from input to output.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Layout {
    sizes: Vec<usize>,
}

impl Layout {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::LayoutMismatch(format!(
                "layer sizes {sizes:?} need at least two positive widths"
            )));
        }
        let layout = Self { sizes };
        let n = layout.n_params();
        if n > MAX_PARAMS {
            return Err(Error::LayoutMismatch(format!(
                "{n} parameters exceeds the limit of {MAX_PARAMS}"
            )));
        }
        Ok(layout)
    }

    /// `[input, hidden..., output]`.
    pub fn mlp(input: usize, hidden: &[usize], output: usize) -> Result<Self> {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        Self::new(sizes)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("layout is never empty")
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Offsets of (weights, biases) of each layer in the flat vector.
    fn offsets(&self) -> Vec<(usize, usize)> {
        let mut at = 0;
        self.sizes
            .windows(2)
            .map(|w| {
                let weights = at;
                at += w[0] * w[1];
                let biases = at;
                at += w[1];
                (weights, biases)
            })
            .collect()
    }
}

/// Cached activations from a batched forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    /// Input to each layer; `inputs[0]` is the network input.
    inputs: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn into_output(self) -> Array2<f64> {
        self.output
    }
}

/// Fully connected network with tanh hidden units and a linear output.
/// Weights of each layer are stored row-major as `in × out`, followed by the
/// biases, all in one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layout: Layout,
    params: Vec<f64>,
}

impl Mlp {
    /// Uniform init in `±1/√fan_in`; the output layer is further scaled by
    /// `output_scale`.
    pub fn new(layout: Layout, output_scale: f64, rng: &mut Rng) -> Self {
        let mut params = vec![0.0; layout.n_params()];
        let last = layout.n_layers() - 1;
        for (l, ((w, b), dims)) in layout.offsets().into_iter().zip(layout.sizes.windows(2)).enumerate() {
            let bound = 1.0 / (dims[0] as f64).sqrt() * if l == last { output_scale } else { 1.0 };
            for p in &mut params[w..b + dims[1]] {
                *p = rng.random_range(-bound..=bound);
            }
        }
        Self { layout, params }
    }

    pub fn from_params(layout: Layout, params: Vec<f64>) -> Result<Self> {
        if params.len() != layout.n_params() {
            return Err(Error::dim("network parameters", layout.n_params(), params.len()));
        }
        Ok(Self { layout, params })
    }

    pub fn zeros(layout: Layout) -> Self {
        let params = vec![0.0; layout.n_params()];
        Self { layout, params }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.layout.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layout.output_dim()
    }

    fn layer(&self, l: usize, (w, b): (usize, usize)) -> (ArrayView2<'_, f64>, &[f64]) {
        let (n_in, n_out) = (self.layout.sizes[l], self.layout.sizes[l + 1]);
        let weights =
            ArrayView2::from_shape((n_in, n_out), &self.params[w..b]).expect("layout offsets match parameter length");
        (weights, &self.params[b..b + n_out])
    }

    fn check_input(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::dim("network input", self.input_dim(), x.ncols()));
        }
        Ok(())
    }

    /// Batched forward pass keeping what `backward` needs.
    pub fn forward_tape(&self, x: ArrayView2<'_, f64>) -> Result<Tape> {
        self.check_input(&x)?;
        let last = self.layout.n_layers() - 1;
        let mut inputs = Vec::with_capacity(last + 1);
        let mut h = x.to_owned();
        for (l, off) in self.layout.offsets().into_iter().enumerate() {
            let (w, b) = self.layer(l, off);
            let mut z = h.dot(&w);
            z += &ArrayView2::from_shape((1, b.len()), b).expect("bias row");
            if l < last {
                z.mapv_inplace(f64::tanh);
            }
            inputs.push(h);
            h = z;
        }
        Ok(Tape { inputs, output: h })
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.forward_tape(x)?.output)
    }

    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        Ok(self.forward(view)?.into_raw_vec_and_offset().0)
    }

    /// Reverse pass. `upstream` is ∂L/∂output for every row; parameter
    /// gradients are summed over the batch and added into `grads`.
    /// Returns ∂L/∂input.
    pub fn backward(&self, tape: &Tape, upstream: ArrayView2<'_, f64>, grads: &mut [f64]) -> Result<Array2<f64>> {
        if upstream.dim() != tape.output.dim() {
            return Err(Error::LayoutMismatch(format!(
                "upstream gradient {:?} does not match output {:?}",
                upstream.dim(),
                tape.output.dim()
            )));
        }
        if grads.len() != self.params.len() {
            return Err(Error::dim("gradient buffer", self.params.len(), grads.len()));
        }
        let offsets = self.layout.offsets();
        let mut delta = upstream.to_owned();
        for l in (0..self.layout.n_layers()).rev() {
            let (w_off, b_off) = offsets[l];
            let (w, _) = self.layer(l, offsets[l]);
            let input = &tape.inputs[l];
            let dw = input.t().dot(&delta);
            for (g, d) in grads[w_off..b_off].iter_mut().zip(dw.iter()) {
                *g += d;
            }
            let db: Array1<f64> = delta.sum_axis(Axis(0));
            for (g, d) in grads[b_off..b_off + db.len()].iter_mut().zip(db.iter()) {
                *g += d;
            }
            let mut prev = delta.dot(&w.t());
            if l > 0 {
                // input of layer l is tanh output of layer l-1
                prev.zip_mut_with(input, |d, a| *d *= 1.0 - a * a);
            }
            delta = prev;
        }
        Ok(delta)
    }
}
