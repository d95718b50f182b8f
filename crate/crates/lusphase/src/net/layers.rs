//! Trainable layers with manual forward/backward passes.
//!
//! Every layer keeps a stack of forward caches so the same (shared)
//! layer can be applied to several streams before backpropagation;
//! backward pops in reverse order and accumulates parameter gradients.

use rand::Rng;

use super::tensor::Tensor;
use crate::imgcore::GrayImage;
use crate::{Error, Result};

/// Kaiming-uniform sample bound for the given fan-in.
fn kaiming_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

fn kaiming_fill(rng: &mut impl Rng, tensor: &mut Tensor, fan_in: usize) {
    let bound = kaiming_bound(fan_in);
    for v in tensor.data_mut() {
        *v = (rng.gen::<f64>() * 2.0 - 1.0) * bound;
    }
}

/// 2-D cross-correlation with same-padding `(k-1)/2` under symmetric
/// boundary extension; output spatial size is `ceil(in/stride)`.
#[derive(Debug)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    cache: Vec<Tensor>,
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut weight = Tensor::zeros(&[out_channels, in_channels, kernel, kernel]);
        kaiming_fill(rng, &mut weight, in_channels * kernel * kernel);
        Conv2d {
            weight,
            bias: Tensor::zeros(&[out_channels]),
            stride,
            cache: Vec::new(),
        }
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[3]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    fn out_size(&self, input: usize) -> usize {
        input.div_ceil(self.stride)
    }

    /// Reflected source indices for every (output, kernel tap) pair along
    /// one axis.
    fn index_table(&self, out_len: usize, in_len: usize) -> Vec<usize> {
        let k = self.kernel();
        let pad = (k - 1) / 2;
        let mut table = Vec::with_capacity(out_len * k);
        for o in 0..out_len {
            for tap in 0..k {
                let i = (o * self.stride + tap) as isize - pad as isize;
                table.push(GrayImage::reflect_index(i, in_len));
            }
        }
        table
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != self.in_channels() {
            return Err(Error::Shape(format!(
                "conv expects [N, {}, H, W], got {shape:?}",
                self.in_channels()
            )));
        }
        let (batch, in_ch, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let (out_ch, k) = (self.out_channels(), self.kernel());
        let (oh, ow) = (self.out_size(h), self.out_size(w));
        let rows = self.index_table(oh, h);
        let cols = self.index_table(ow, w);

        let mut out = Tensor::zeros(&[batch, out_ch, oh, ow]);
        let wdata = self.weight.data();
        let xdata = x.data();
        let odata = out.data_mut();
        for n in 0..batch {
            for d in 0..out_ch {
                let out_base = (n * out_ch + d) * oh * ow;
                let b = self.bias.data()[d];
                odata[out_base..out_base + oh * ow]
                    .iter_mut()
                    .for_each(|v| *v = b);
                for c in 0..in_ch {
                    let w_dc = &wdata[((d * in_ch) + c) * k * k..((d * in_ch) + c + 1) * k * k];
                    let x_nc = &xdata[(n * in_ch + c) * h * w..(n * in_ch + c + 1) * h * w];
                    for oy in 0..oh {
                        let row_map = &rows[oy * k..(oy + 1) * k];
                        for (ky, &iy) in row_map.iter().enumerate() {
                            let x_row = &x_nc[iy * w..(iy + 1) * w];
                            let w_row = &w_dc[ky * k..(ky + 1) * k];
                            let out_row = out_base + oy * ow;
                            for ox in 0..ow {
                                let col_map = &cols[ox * k..(ox + 1) * k];
                                let mut acc = 0.0;
                                for (kx, &ix) in col_map.iter().enumerate() {
                                    acc += w_row[kx] * x_row[ix];
                                }
                                odata[out_row + ox] += acc;
                            }
                        }
                    }
                }
            }
        }
        self.cache.push(x.clone());
        Ok(out)
    }

    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let x = self
            .cache
            .pop()
            .ok_or_else(|| Error::State("conv backward without cached forward".into()))?;
        let (batch, in_ch, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (out_ch, k) = (self.out_channels(), self.kernel());
        let (oh, ow) = (self.out_size(h), self.out_size(w));
        if upstream.shape() != [batch, out_ch, oh, ow] {
            return Err(Error::Shape(format!(
                "conv upstream {:?} does not match output [{batch}, {out_ch}, {oh}, {ow}]",
                upstream.shape()
            )));
        }
        let rows = self.index_table(oh, h);
        let cols = self.index_table(ow, w);

        let mut dx = Tensor::zeros(&[batch, in_ch, h, w]);
        {
            let wdata = self.weight.data();
            let up = upstream.data();
            let dxd = dx.data_mut();
            for n in 0..batch {
                for d in 0..out_ch {
                    let up_base = (n * out_ch + d) * oh * ow;
                    for c in 0..in_ch {
                        let w_dc =
                            &wdata[((d * in_ch) + c) * k * k..((d * in_ch) + c + 1) * k * k];
                        let dx_nc = (n * in_ch + c) * h * w;
                        for oy in 0..oh {
                            let row_map = &rows[oy * k..(oy + 1) * k];
                            for ox in 0..ow {
                                let g = up[up_base + oy * ow + ox];
                                if g == 0.0 {
                                    continue;
                                }
                                let col_map = &cols[ox * k..(ox + 1) * k];
                                for (ky, &iy) in row_map.iter().enumerate() {
                                    let w_row = &w_dc[ky * k..(ky + 1) * k];
                                    let dx_row = dx_nc + iy * w;
                                    for (kx, &ix) in col_map.iter().enumerate() {
                                        dxd[dx_row + ix] += w_row[kx] * g;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        {
            let xdata = x.data();
            let up = upstream.data();
            let dw = self.weight.grad_mut();
            for n in 0..batch {
                for d in 0..out_ch {
                    let up_base = (n * out_ch + d) * oh * ow;
                    for c in 0..in_ch {
                        let dw_dc = ((d * in_ch) + c) * k * k;
                        let x_nc = &xdata[(n * in_ch + c) * h * w..(n * in_ch + c + 1) * h * w];
                        for oy in 0..oh {
                            let row_map = &rows[oy * k..(oy + 1) * k];
                            for ox in 0..ow {
                                let g = up[up_base + oy * ow + ox];
                                if g == 0.0 {
                                    continue;
                                }
                                let col_map = &cols[ox * k..(ox + 1) * k];
                                for (ky, &iy) in row_map.iter().enumerate() {
                                    let x_row = &x_nc[iy * w..(iy + 1) * w];
                                    for (kx, &ix) in col_map.iter().enumerate() {
                                        dw[dw_dc + ky * k + kx] += x_row[ix] * g;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            let db = self.bias.grad_mut();
            for n in 0..batch {
                for (d, db_d) in db.iter_mut().enumerate() {
                    let up_base = (n * out_ch + d) * oh * ow;
                    *db_d += up[up_base..up_base + oh * ow].iter().sum::<f64>();
                }
            }
        }
        Ok(dx)
    }

    pub fn clear_cache(&mut self) {
        self.cache.clear();
    }

    #[cfg(test)]
    pub(crate) fn cache_is_empty(&self) -> bool {
        self.cache.is_empty()
    }
}

/// Elementwise rectifier.
#[derive(Debug, Default)]
pub struct Relu {
    masks: Vec<Vec<bool>>,
}

impl Relu {
    pub fn new() -> Self {
        Relu { masks: Vec::new() }
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let mask: Vec<bool> = x.data().iter().map(|&v| v > 0.0).collect();
        let mut out = x.clone();
        for (v, &keep) in out.data_mut().iter_mut().zip(&mask) {
            if !keep {
                *v = 0.0;
            }
        }
        self.masks.push(mask);
        out
    }

    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let mask = self
            .masks
            .pop()
            .ok_or_else(|| Error::State("relu backward without cached forward".into()))?;
        if mask.len() != upstream.len() {
            return Err(Error::Shape(format!(
                "relu upstream length {} does not match cached {}",
                upstream.len(),
                mask.len()
            )));
        }
        let mut out = upstream.clone();
        for (v, &keep) in out.data_mut().iter_mut().zip(&mask) {
            if !keep {
                *v = 0.0;
            }
        }
        Ok(out)
    }

    pub fn clear_cache(&mut self) {
        self.masks.clear();
    }
}

/// Fully connected layer `y = W x + b`.
#[derive(Debug)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
    cache: Vec<Tensor>,
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        let mut weight = Tensor::zeros(&[out_features, in_features]);
        kaiming_fill(rng, &mut weight, in_features);
        Linear {
            weight,
            bias: Tensor::zeros(&[out_features]),
            cache: Vec::new(),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 2 || x.shape()[1] != self.in_features() {
            return Err(Error::Shape(format!(
                "linear expects [N, {}], got {:?}",
                self.in_features(),
                x.shape()
            )));
        }
        let (batch, d_in, d_out) = (x.shape()[0], self.in_features(), self.out_features());
        let mut out = Tensor::zeros(&[batch, d_out]);
        let odata = out.data_mut();
        for n in 0..batch {
            let x_row = &x.data()[n * d_in..(n + 1) * d_in];
            for o in 0..d_out {
                let w_row = &self.weight.data()[o * d_in..(o + 1) * d_in];
                let mut acc = self.bias.data()[o];
                for i in 0..d_in {
                    acc += w_row[i] * x_row[i];
                }
                odata[n * d_out + o] = acc;
            }
        }
        self.cache.push(x.clone());
        Ok(out)
    }

    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let x = self
            .cache
            .pop()
            .ok_or_else(|| Error::State("linear backward without cached forward".into()))?;
        let (batch, d_in, d_out) = (x.shape()[0], self.in_features(), self.out_features());
        if upstream.shape() != [batch, d_out] {
            return Err(Error::Shape(format!(
                "linear upstream {:?} does not match [{batch}, {d_out}]",
                upstream.shape()
            )));
        }
        let mut dx = Tensor::zeros(&[batch, d_in]);
        let dxd = dx.data_mut();
        for n in 0..batch {
            for o in 0..d_out {
                let g = upstream.data()[n * d_out + o];
                let w_row = &self.weight.data()[o * d_in..(o + 1) * d_in];
                for i in 0..d_in {
                    dxd[n * d_in + i] += w_row[i] * g;
                }
            }
        }
        {
            let dw = self.weight.grad_mut();
            for n in 0..batch {
                let x_row = &x.data()[n * d_in..(n + 1) * d_in];
                for o in 0..d_out {
                    let g = upstream.data()[n * d_out + o];
                    for i in 0..d_in {
                        dw[o * d_in + i] += x_row[i] * g;
                    }
                }
            }
            let db = self.bias.grad_mut();
            for n in 0..batch {
                for (o, db_o) in db.iter_mut().enumerate() {
                    *db_o += upstream.data()[n * d_out + o];
                }
            }
        }
        Ok(dx)
    }

    pub fn clear_cache(&mut self) {
        self.cache.clear();
    }
}

/// Global average pooling `[N, C, H, W] -> [N, C]`.
#[derive(Debug, Default)]
pub struct GlobalAvgPool {
    shapes: Vec<Vec<usize>>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        GlobalAvgPool { shapes: Vec::new() }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 4 {
            return Err(Error::Shape(format!(
                "pool expects [N, C, H, W], got {:?}",
                x.shape()
            )));
        }
        let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let area = (h * w) as f64;
        let mut out = Tensor::zeros(&[n, c]);
        let odata = out.data_mut();
        for i in 0..n {
            for j in 0..c {
                let base = (i * c + j) * h * w;
                odata[i * c + j] = x.data()[base..base + h * w].iter().sum::<f64>() / area;
            }
        }
        self.shapes.push(x.shape().to_vec());
        Ok(out)
    }

    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let shape = self
            .shapes
            .pop()
            .ok_or_else(|| Error::State("pool backward without cached forward".into()))?;
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        if upstream.shape() != [n, c] {
            return Err(Error::Shape(format!(
                "pool upstream {:?} does not match [{n}, {c}]",
                upstream.shape()
            )));
        }
        let area = (h * w) as f64;
        let mut dx = Tensor::zeros(&shape);
        let dxd = dx.data_mut();
        for i in 0..n {
            for j in 0..c {
                let g = upstream.data()[i * c + j] / area;
                let base = (i * c + j) * h * w;
                dxd[base..base + h * w].iter_mut().for_each(|v| *v = g);
            }
        }
        Ok(dx)
    }

    pub fn clear_cache(&mut self) {
        self.shapes.clear();
    }
}

/// Row-wise softmax probabilities of a `[N, K]` logit tensor.
pub fn softmax(logits: &Tensor) -> Result<Vec<Vec<f64>>> {
    if logits.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "softmax expects [N, K], got {:?}",
            logits.shape()
        )));
    }
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let row = &logits.data()[i * k..(i + 1) * k];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&z| (z - m).exp()).collect();
        let sum: f64 = exps.iter().sum();
        rows.push(exps.into_iter().map(|e| e / sum).collect());
    }
    Ok(rows)
}

/// Mean cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "label count {} does not match batch {n}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Domain(format!("label {bad} out of range for {k} classes")));
    }
    let probs = softmax(logits)?;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(&[n, k]);
    let gdata = grad.data_mut();
    for (i, row) in probs.iter().enumerate() {
        loss -= row[labels[i]].max(f64::MIN_POSITIVE).ln();
        for j in 0..k {
            let target = if j == labels[i] { 1.0 } else { 0.0 };
            gdata[i * k + j] = (row[j] - target) / n as f64;
        }
    }
    Ok((loss / n as f64, grad))
}
