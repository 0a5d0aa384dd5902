//! Dense ReLU networks over row-major batches. Weights are stored `[out, in]`
//! row-major followed by the bias.

use rand::Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, PartialEq)]
pub struct MlpLayout {
    pub dims: Vec<usize>,
    /// Offset of each layer's weight block within the owning parameter vector.
    offsets: Vec<usize>,
    len: usize,
}

/// Initialisation of the final layer.
#[derive(Debug, Clone, Copy)]
pub enum FinalInit {
    Zero,
    /// He init with the listed output rows zeroed.
    HeExcept(&'static [usize]),
}

impl MlpLayout {
    pub fn new(dims: &[usize], base: usize) -> Self {
        let mut offsets = Vec::with_capacity(dims.len() - 1);
        let mut off = base;
        for w in dims.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        Self {
            dims: dims.to_vec(),
            offsets,
            len: off - base,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.offsets.len()
    }

    /// (weight range, bias range) of layer `l` in the parameter vector.
    pub fn layer_ranges(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let (i, o) = (self.dims[l], self.dims[l + 1]);
        let w = self.offsets[l];
        (w..w + i * o, w + i * o..w + i * o + o)
    }

    pub fn init(&self, params: &mut [f64], rng: &mut impl Rng, last: FinalInit) {
        for l in 0..self.num_layers() {
            let (wr, br) = self.layer_ranges(l);
            let (fan_in, out) = (self.dims[l], self.dims[l + 1]);
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
            let w = &mut params[wr];
            let is_last = l + 1 == self.num_layers();
            for r in 0..out {
                let zero = is_last
                    && match last {
                        FinalInit::Zero => true,
                        FinalInit::HeExcept(rows) => rows.contains(&r),
                    };
                for c in 0..fan_in {
                    w[r * fan_in + c] = if zero { 0.0 } else { normal.sample(rng) };
                }
            }
            params[br].fill(0.0);
        }
    }

    /// Forward pass over `n` rows. Returns every layer's output; hidden
    /// outputs are post-ReLU, the last is linear.
    pub fn forward(&self, params: &[f64], input: &[f64], n: usize) -> Vec<Vec<f64>> {
        debug_assert_eq!(input.len(), n * self.input_dim());
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.num_layers());
        for l in 0..self.num_layers() {
            let (i, o) = (self.dims[l], self.dims[l + 1]);
            let x: &[f64] = if l == 0 { input } else { &acts[l - 1] };
            let (wr, br) = self.layer_ranges(l);
            let bias = &params[br];
            let mut y = Vec::with_capacity(n * o);
            for _ in 0..n {
                y.extend_from_slice(bias);
            }
            if n > 0 {
                // y[n, o] += x[n, i] · Wᵀ
                unsafe {
                    matrixmultiply::dgemm(
                        n,
                        i,
                        o,
                        1.0,
                        x.as_ptr(),
                        i as isize,
                        1,
                        params[wr].as_ptr(),
                        1,
                        i as isize,
                        1.0,
                        y.as_mut_ptr(),
                        o as isize,
                        1,
                    );
                }
            }
            if l + 1 < self.num_layers() {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(y);
        }
        acts
    }

    /// Backpropagates `d_out` through the cached forward pass. Parameter
    /// gradients are added into `grad` when given; returns `dL/d input`.
    pub fn backward(
        &self,
        params: &[f64],
        input: &[f64],
        acts: &[Vec<f64>],
        d_out: &[f64],
        n: usize,
        mut grad: Option<&mut [f64]>,
    ) -> Vec<f64> {
        let mut dy = d_out.to_vec();
        for l in (0..self.num_layers()).rev() {
            let (i, o) = (self.dims[l], self.dims[l + 1]);
            if l + 1 < self.num_layers() {
                for (d, a) in dy.iter_mut().zip(&acts[l]) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let x: &[f64] = if l == 0 { input } else { &acts[l - 1] };
            let (wr, br) = self.layer_ranges(l);
            if let Some(g) = grad.as_deref_mut() {
                if n > 0 {
                    // dW[o, i] += dyᵀ · x
                    unsafe {
                        matrixmultiply::dgemm(
                            o,
                            n,
                            i,
                            1.0,
                            dy.as_ptr(),
                            1,
                            o as isize,
                            x.as_ptr(),
                            i as isize,
                            1,
                            1.0,
                            g[wr.clone()].as_mut_ptr(),
                            i as isize,
                            1,
                        );
                    }
                }
                let gb = &mut g[br];
                for row in dy.chunks_exact(o) {
                    for (b, d) in gb.iter_mut().zip(row) {
                        *b += d;
                    }
                }
            }
            let mut dx = vec![0.0; n * i];
            if n > 0 {
                // dx[n, i] = dy[n, o] · W[o, i]
                unsafe {
                    matrixmultiply::dgemm(
                        n,
                        o,
                        i,
                        1.0,
                        dy.as_ptr(),
                        o as isize,
                        1,
                        params[wr].as_ptr(),
                        i as isize,
                        1,
                        0.0,
                        dx.as_mut_ptr(),
                        i as isize,
                        1,
                    );
                }
            }
            dy = dx;
        }
        dy
    }
}
