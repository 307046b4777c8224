//! Batched dense networks with exact gradients and Hessian–vector products.
//!
//! The HVP is computed with the R-operator (forward-mode directional
//! derivative pushed through reverse-mode backprop), so it is exact for both
//! the convex heads and the tanh MLP.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use super::{Activation, ModelSpec, OutputLoss};

/// Shape of one dense layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
    pub offset: usize,
}

impl LayerShape {
    fn weights<'a>(&self, w: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.fan_out, self.fan_in), &w[self.offset..self.offset + self.fan_out * self.fan_in])
            .expect("layer slice")
    }

    fn bias<'a>(&self, w: &'a [f64]) -> &'a [f64] {
        let start = self.offset + self.fan_out * self.fan_in;
        &w[start..start + self.fan_out]
    }

    fn write(&self, out: &mut [f64], gw: &Array2<f64>, gb: &Array1<f64>) {
        let nw = self.fan_out * self.fan_in;
        for (dst, src) in out[self.offset..self.offset + nw].iter_mut().zip(gw.iter()) {
            *dst = *src;
        }
        for (dst, src) in out[self.offset + nw..self.offset + nw + self.fan_out].iter_mut().zip(gb.iter()) {
            *dst = *src;
        }
    }
}

pub(crate) fn layer_shapes(spec: &ModelSpec) -> Vec<LayerShape> {
    let sizes = spec.sizes();
    let mut offset = 0;
    sizes
        .windows(2)
        .map(|pair| {
            let shape = LayerShape { fan_in: pair[0], fan_out: pair[1], offset };
            offset += pair[0] * pair[1] + pair[1];
            shape
        })
        .collect()
}

fn affine(input: &ArrayView2<f64>, layer: &LayerShape, w: &[f64]) -> Array2<f64> {
    let mut z = input.dot(&layer.weights(w).t());
    let b = layer.bias(w);
    for mut row in z.rows_mut() {
        row.iter_mut().zip(b).for_each(|(z, b)| *z += b);
    }
    z
}

fn act(a: Activation, z: &Array2<f64>) -> Array2<f64> {
    match a {
        Activation::Tanh => z.mapv(f64::tanh),
        Activation::Relu => z.mapv(|v| v.max(0.0)),
    }
}

/// σ'(z) expressed through the stored activation output.
fn act_prime(a: Activation, z: &Array2<f64>, out: &Array2<f64>) -> Array2<f64> {
    match a {
        Activation::Tanh => out.mapv(|t| 1.0 - t * t),
        // kink at 0 uses the zero subgradient
        Activation::Relu => z.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }),
    }
}

fn act_second(a: Activation, out: &Array2<f64>) -> Option<Array2<f64>> {
    match a {
        Activation::Tanh => Some(out.mapv(|t| -2.0 * t * (1.0 - t * t))),
        Activation::Relu => None,
    }
}

/// Cached forward pass: pre-activations and activations per layer.
pub(crate) struct Forward {
    /// `acts[0]` is the input batch, `acts[l]` the output of layer `l`.
    acts: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

impl Forward {
    pub fn logits(&self) -> &Array2<f64> {
        self.pre.last().expect("at least one layer")
    }
}

pub(crate) fn forward(spec: &ModelSpec, layers: &[LayerShape], w: &[f64], x: ArrayView2<f64>) -> Forward {
    let mut acts = vec![x.to_owned()];
    let mut pre = Vec::with_capacity(layers.len());
    for (l, layer) in layers.iter().enumerate() {
        let z = affine(&acts[l].view(), layer, w);
        if l + 1 < layers.len() {
            acts.push(act(spec.activation, &z));
        }
        pre.push(z);
    }
    Forward { acts, pre }
}

fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut s = z.clone();
    for mut row in s.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let total = row.sum();
        row.mapv_inplace(|v| v / total);
    }
    s
}

/// Per-example losses of the output head.
pub(crate) fn example_losses(loss: OutputLoss, logits: &Array2<f64>, labels: &[usize]) -> Vec<f64> {
    logits
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &y)| match loss {
            OutputLoss::CrossEntropy => {
                let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                lse - row[y]
            }
            OutputLoss::SquaredError => {
                0.5 * row
                    .iter()
                    .enumerate()
                    .map(|(k, v)| {
                        let t = if k == y { 1.0 } else { 0.0 };
                        (v - t) * (v - t)
                    })
                    .sum::<f64>()
            }
        })
        .collect()
}

/// dℓ/dz at the output, divided by the batch size.
fn output_delta(loss: OutputLoss, logits: &Array2<f64>, labels: &[usize]) -> (Array2<f64>, Option<Array2<f64>>) {
    let n = labels.len() as f64;
    match loss {
        OutputLoss::CrossEntropy => {
            let s = softmax_rows(logits);
            let mut d = s.clone();
            for (mut row, &y) in d.rows_mut().into_iter().zip(labels) {
                row[y] -= 1.0;
            }
            d.mapv_inplace(|v| v / n);
            (d, Some(s))
        }
        OutputLoss::SquaredError => {
            let mut d = logits.clone();
            for (mut row, &y) in d.rows_mut().into_iter().zip(labels) {
                row[y] -= 1.0;
            }
            d.mapv_inplace(|v| v / n);
            (d, None)
        }
    }
}

/// Gradient of the mean data loss (no damping term).
pub(crate) fn gradient(spec: &ModelSpec, layers: &[LayerShape], w: &[f64], fwd: &Forward, labels: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; w.len()];
    let (mut delta, _) = output_delta(spec.output_loss(), fwd.logits(), labels);
    for l in (0..layers.len()).rev() {
        let layer = &layers[l];
        let gw = delta.t().dot(&fwd.acts[l]);
        let gb = delta.sum_axis(Axis(0));
        layer.write(&mut out, &gw, &gb);
        if l > 0 {
            let e = delta.dot(&layer.weights(w));
            let dprime = act_prime(spec.activation, &fwd.pre[l - 1], &fwd.acts[l]);
            delta = e * dprime;
        }
    }
    out
}

/// Hessian of the mean data loss applied to `v` (no damping term).
pub(crate) fn hessian_vector(
    spec: &ModelSpec,
    layers: &[LayerShape],
    w: &[f64],
    fwd: &Forward,
    labels: &[usize],
    v: &[f64],
) -> Vec<f64> {
    let n_layers = layers.len();
    // R-forward pass
    let batch = labels.len();
    let mut r_acts: Vec<Option<Array2<f64>>> = vec![None]; // R(input) = 0
    let mut r_pre = Vec::with_capacity(n_layers);
    for (l, layer) in layers.iter().enumerate() {
        let mut rz = affine(&fwd.acts[l].view(), layer, v);
        if let Some(ra) = &r_acts[l] {
            rz += &ra.dot(&layer.weights(w).t());
        }
        if l + 1 < n_layers {
            let dprime = act_prime(spec.activation, &fwd.pre[l], &fwd.acts[l + 1]);
            r_acts.push(Some(&rz * &dprime));
        }
        r_pre.push(rz);
    }

    let (mut delta, probs) = output_delta(spec.output_loss(), fwd.logits(), labels);
    let rz_out = r_pre.last().expect("at least one layer");
    let mut r_delta = match probs {
        Some(s) => {
            // R(softmax) = s ⊙ (Rz − <s, Rz>)
            let mut rd = Array2::zeros((batch, s.ncols()));
            Zip::from(rd.rows_mut()).and(s.rows()).and(rz_out.rows()).for_each(|mut out, s, rz| {
                let inner: f64 = s.iter().zip(rz.iter()).map(|(a, b)| a * b).sum();
                Zip::from(&mut out).and(&s).and(&rz).for_each(|o, &s, &r| *o = s * (r - inner));
            });
            rd
        }
        None => rz_out.clone(),
    };
    r_delta.mapv_inplace(|x| x / batch as f64);

    let mut out = vec![0.0; w.len()];
    for l in (0..n_layers).rev() {
        let layer = &layers[l];
        let mut hw = r_delta.t().dot(&fwd.acts[l]);
        if let Some(ra) = &r_acts[l] {
            hw += &delta.t().dot(ra);
        }
        let hb = r_delta.sum_axis(Axis(0));
        layer.write(&mut out, &hw, &hb);
        if l > 0 {
            let wl = layer.weights(w);
            let vl = layer.weights(v);
            let e = delta.dot(&wl);
            let re = r_delta.dot(&wl) + delta.dot(&vl);
            let dprime = act_prime(spec.activation, &fwd.pre[l - 1], &fwd.acts[l]);
            let mut next_r = &re * &dprime;
            if let Some(d2) = act_second(spec.activation, &fwd.acts[l]) {
                next_r += &(&e * &d2 * &r_pre[l - 1]);
            }
            delta = e * dprime;
            r_delta = next_r;
        }
    }
    out
}
