use rand::Rng;

use super::{gemm, mismatch, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

/// `act(x · w + b)` for a batch `x` of shape `n × in`, `w` of `in × out`.
pub fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor, act: Activation) -> Result<Tensor, TensorError> {
    let (n, fan_in) = (x.rows(), x.cols());
    let fan_out = w.cols();
    if w.rows() != fan_in || b.len() != fan_out {
        return Err(mismatch(
            "dense",
            format!("x {n}x{fan_in}, w {}x{}, b {}", w.rows(), w.cols(), b.len()),
        ));
    }
    let mut out = Tensor::zeros(&[n, fan_out]);
    for r in 0..n {
        out.row_slice_mut(r).copy_from_slice(b.data());
    }
    gemm(
        1.0,
        x.data(),
        (n, fan_in),
        false,
        w.data(),
        (fan_in, fan_out),
        false,
        1.0,
        out.data_mut(),
    );
    if act == Activation::Tanh {
        out.data_mut().iter_mut().for_each(|v| *v = v.tanh());
    }
    Ok(out)
}

/// Backward of [`dense_forward`]. `out` is the forward output. Accumulates into
/// `gw`/`gb` and returns the gradient with respect to `x`.
pub fn dense_backward(
    x: &Tensor,
    w: &Tensor,
    out: &Tensor,
    act: Activation,
    grad_out: &Tensor,
    gw: &mut Tensor,
    gb: &mut Tensor,
) -> Result<Tensor, TensorError> {
    let (n, fan_in) = (x.rows(), x.cols());
    let fan_out = w.cols();
    if grad_out.rows() != n || grad_out.cols() != fan_out || out.len() != grad_out.len() {
        return Err(mismatch(
            "dense_backward",
            format!("grad {}x{} for output {n}x{fan_out}", grad_out.rows(), grad_out.cols()),
        ));
    }
    if gw.shape() != w.shape() || gb.len() != fan_out {
        return Err(mismatch("dense_backward", "gradient buffers".into()));
    }
    let dz: Vec<f64> = match act {
        Activation::Identity => grad_out.data().to_vec(),
        Activation::Tanh => grad_out
            .data()
            .iter()
            .zip(out.data())
            .map(|(g, y)| g * (1.0 - y * y))
            .collect(),
    };
    gemm(
        1.0,
        x.data(),
        (n, fan_in),
        true,
        &dz,
        (n, fan_out),
        false,
        1.0,
        gw.data_mut(),
    );
    let gbd = gb.data_mut();
    for r in 0..n {
        for (g, d) in gbd.iter_mut().zip(&dz[r * fan_out..(r + 1) * fan_out]) {
            *g += d;
        }
    }
    let mut dx = Tensor::zeros(&[n, fan_in]);
    gemm(
        1.0,
        &dz,
        (n, fan_out),
        false,
        w.data(),
        (fan_in, fan_out),
        true,
        0.0,
        dx.data_mut(),
    );
    Ok(dx)
}

/// LSTM kernels. Gate blocks along the `4H` axis are ordered input, forget,
/// candidate, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights<'a> {
    pub wx: &'a Tensor,
    pub wh: &'a Tensor,
    pub b: &'a Tensor,
}

#[derive(Debug)]
pub struct LstmGrads<'a> {
    pub wx: &'a mut Tensor,
    pub wh: &'a mut Tensor,
    pub b: &'a mut Tensor,
}

impl LstmWeights<'_> {
    fn hidden(&self) -> usize {
        self.wh.rows()
    }

    fn check(&self, x: &Tensor, h: &Tensor, c: &Tensor) -> Result<(), TensorError> {
        let hs = self.hidden();
        let b = x.rows();
        let ok = self.wh.cols() == 4 * hs
            && self.wx.cols() == 4 * hs
            && self.b.len() == 4 * hs
            && self.wx.rows() == x.cols()
            && h.rows() == b
            && c.rows() == b
            && h.cols() == hs
            && c.cols() == hs;
        if ok {
            Ok(())
        } else {
            Err(mismatch(
                "lstm",
                format!(
                    "x {}x{}, h {}x{}, c {}x{}, wx {:?}, wh {:?}, b {:?}",
                    x.rows(),
                    x.cols(),
                    h.rows(),
                    h.cols(),
                    c.rows(),
                    c.cols(),
                    self.wx.shape(),
                    self.wh.shape(),
                    self.b.shape()
                ),
            ))
        }
    }
}

/// Everything one LSTM step needs for its backward pass.
#[derive(Debug, Clone)]
pub struct LstmStepCache {
    pub x: Tensor,
    pub h_prev: Tensor,
    pub c_prev: Tensor,
    /// Activated gates `[i | f | g | o]`, `B × 4H`.
    pub gates: Tensor,
    pub c: Tensor,
    pub tanh_c: Tensor,
    pub h: Tensor,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn lstm_step(
    x: &Tensor,
    h_prev: &Tensor,
    c_prev: &Tensor,
    w: LstmWeights<'_>,
) -> Result<LstmStepCache, TensorError> {
    w.check(x, h_prev, c_prev)?;
    let (b, hs) = (x.rows(), w.hidden());
    let mut gates = Tensor::zeros(&[b, 4 * hs]);
    for r in 0..b {
        gates.row_slice_mut(r).copy_from_slice(w.b.data());
    }
    gemm(
        1.0,
        x.data(),
        (b, x.cols()),
        false,
        w.wx.data(),
        (w.wx.rows(), 4 * hs),
        false,
        1.0,
        gates.data_mut(),
    );
    gemm(
        1.0,
        h_prev.data(),
        (b, hs),
        false,
        w.wh.data(),
        (hs, 4 * hs),
        false,
        1.0,
        gates.data_mut(),
    );
    let mut c = Tensor::zeros(&[b, hs]);
    let mut tanh_c = Tensor::zeros(&[b, hs]);
    let mut h = Tensor::zeros(&[b, hs]);
    for r in 0..b {
        let g = gates.row_slice_mut(r);
        for k in 0..hs {
            g[k] = sigmoid(g[k]);
            g[hs + k] = sigmoid(g[hs + k]);
            g[2 * hs + k] = g[2 * hs + k].tanh();
            g[3 * hs + k] = sigmoid(g[3 * hs + k]);
        }
        let g = gates.row_slice(r);
        let cp = c_prev.row_slice(r);
        let (cr, tr, hr) = (
            &mut c.data_mut()[r * hs..(r + 1) * hs],
            &mut tanh_c.data_mut()[r * hs..(r + 1) * hs],
            &mut h.data_mut()[r * hs..(r + 1) * hs],
        );
        for k in 0..hs {
            cr[k] = g[hs + k] * cp[k] + g[k] * g[2 * hs + k];
            tr[k] = cr[k].tanh();
            hr[k] = g[3 * hs + k] * tr[k];
        }
    }
    Ok(LstmStepCache {
        x: x.clone(),
        h_prev: h_prev.clone(),
        c_prev: c_prev.clone(),
        gates,
        c,
        tanh_c,
        h,
    })
}

/// Gradient on the gate pre-activations and on `c_prev` for one step.
fn gate_grads(cache: &LstmStepCache, dh: &Tensor, dc: &Tensor) -> Result<(Vec<f64>, Tensor), TensorError> {
    let (b, hs) = (cache.h.rows(), cache.h.cols());
    if dh.rows() != b || dh.cols() != hs || dc.rows() != b || dc.cols() != hs {
        return Err(mismatch("lstm_backward", "upstream gradient shape".into()));
    }
    let mut dz = vec![0.0; b * 4 * hs];
    let mut dc_prev = Tensor::zeros(&[b, hs]);
    for r in 0..b {
        let g = cache.gates.row_slice(r);
        let t = cache.tanh_c.row_slice(r);
        let cp = cache.c_prev.row_slice(r);
        let dhr = dh.row_slice(r);
        let dcr = dc.row_slice(r);
        let dzr = &mut dz[r * 4 * hs..(r + 1) * 4 * hs];
        let dcp = dc_prev.row_slice_mut(r);
        for k in 0..hs {
            let (i, f, gg, o) = (g[k], g[hs + k], g[2 * hs + k], g[3 * hs + k]);
            let d_o = dhr[k] * t[k];
            let dct = dcr[k] + dhr[k] * o * (1.0 - t[k] * t[k]);
            dzr[k] = dct * gg * i * (1.0 - i);
            dzr[hs + k] = dct * cp[k] * f * (1.0 - f);
            dzr[2 * hs + k] = dct * i * (1.0 - gg * gg);
            dzr[3 * hs + k] = d_o * o * (1.0 - o);
            dcp[k] = dct * f;
        }
    }
    Ok((dz, dc_prev))
}

/// Backward of one [`lstm_step`] given upstream gradients on `h` and `c`.
/// Accumulates kernel gradients and returns `(dx, dh_prev, dc_prev)`.
pub fn lstm_step_backward(
    cache: &LstmStepCache,
    dh: &Tensor,
    dc: &Tensor,
    w: LstmWeights<'_>,
    grads: &mut LstmGrads<'_>,
) -> Result<(Tensor, Tensor, Tensor), TensorError> {
    let (dz, dc_prev) = gate_grads(cache, dh, dc)?;
    let (b, hs, nin) = (cache.h.rows(), cache.h.cols(), cache.x.cols());
    gemm(1.0, cache.x.data(), (b, nin), true, &dz, (b, 4 * hs), false, 1.0, grads.wx.data_mut());
    gemm(1.0, cache.h_prev.data(), (b, hs), true, &dz, (b, 4 * hs), false, 1.0, grads.wh.data_mut());
    for r in 0..b {
        for (g, d) in grads.b.data_mut().iter_mut().zip(&dz[r * 4 * hs..(r + 1) * 4 * hs]) {
            *g += d;
        }
    }
    let mut dx = Tensor::zeros(&[b, nin]);
    gemm(1.0, &dz, (b, 4 * hs), false, w.wx.data(), (nin, 4 * hs), true, 0.0, dx.data_mut());
    let mut dh_prev = Tensor::zeros(&[b, hs]);
    gemm(1.0, &dz, (b, 4 * hs), false, w.wh.data(), (hs, 4 * hs), true, 0.0, dh_prev.data_mut());
    Ok((dx, dh_prev, dc_prev))
}

/// Runs the cell over a sequence of `B × in` inputs from `(h0, c0)`.
pub fn lstm_forward_seq(
    xs: &[Tensor],
    h0: &Tensor,
    c0: &Tensor,
    w: LstmWeights<'_>,
) -> Result<Vec<LstmStepCache>, TensorError> {
    let mut caches: Vec<LstmStepCache> = Vec::with_capacity(xs.len());
    for x in xs {
        let step = match caches.last() {
            Some(prev) => lstm_step(x, &prev.h, &prev.c, w)?,
            None => lstm_step(x, h0, c0, w)?,
        };
        caches.push(step);
    }
    Ok(caches)
}

/// Backpropagation through time. `dhs[t]` is the external gradient on `h_t`.
/// Kernel gradients are accumulated with one stacked product at the end.
/// Returns the gradients on each input `x_t`.
pub fn lstm_backward_seq(
    caches: &[LstmStepCache],
    dhs: &[Tensor],
    w: LstmWeights<'_>,
    grads: &mut LstmGrads<'_>,
) -> Result<Vec<Tensor>, TensorError> {
    if caches.len() != dhs.len() {
        return Err(mismatch(
            "lstm_backward_seq",
            format!("{} steps, {} gradients", caches.len(), dhs.len()),
        ));
    }
    let Some(first) = caches.first() else {
        return Ok(Vec::new());
    };
    let (b, hs, nin) = (first.h.rows(), first.h.cols(), first.x.cols());
    let steps = caches.len();
    let mut dz_all = vec![0.0; steps * b * 4 * hs];
    let mut dxs = vec![Tensor::zeros(&[b, nin]); steps];
    let mut dh_next = Tensor::zeros(&[b, hs]);
    let mut dc_next = Tensor::zeros(&[b, hs]);
    for t in (0..steps).rev() {
        let mut dh = dhs[t].clone();
        dh.add_assign(&dh_next)?;
        let (dz, dc_prev) = gate_grads(&caches[t], &dh, &dc_next)?;
        gemm(1.0, &dz, (b, 4 * hs), false, w.wx.data(), (nin, 4 * hs), true, 0.0, dxs[t].data_mut());
        let mut dh_prev = Tensor::zeros(&[b, hs]);
        gemm(1.0, &dz, (b, 4 * hs), false, w.wh.data(), (hs, 4 * hs), true, 0.0, dh_prev.data_mut());
        dz_all[t * b * 4 * hs..(t + 1) * b * 4 * hs].copy_from_slice(&dz);
        dh_next = dh_prev;
        dc_next = dc_prev;
    }
    let xs: Vec<&Tensor> = caches.iter().map(|c| &c.x).collect();
    let hp: Vec<&Tensor> = caches.iter().map(|c| &c.h_prev).collect();
    let x_all = Tensor::vstack(&xs)?;
    let h_all = Tensor::vstack(&hp)?;
    let rows = steps * b;
    gemm(1.0, x_all.data(), (rows, nin), true, &dz_all, (rows, 4 * hs), false, 1.0, grads.wx.data_mut());
    gemm(1.0, h_all.data(), (rows, hs), true, &dz_all, (rows, 4 * hs), false, 1.0, grads.wh.data_mut());
    let gb = grads.b.data_mut();
    for r in 0..rows {
        for (g, d) in gb.iter_mut().zip(&dz_all[r * 4 * hs..(r + 1) * 4 * hs]) {
            *g += d;
        }
    }
    Ok(dxs)
}

/// Row `index` of an embedding table.
pub fn embed(table: &Tensor, index: usize) -> Result<&[f64], TensorError> {
    if index >= table.rows() {
        return Err(TensorError::IndexOutOfRange {
            index,
            len: table.rows(),
        });
    }
    Ok(table.row_slice(index))
}

/// Adds `upstream` into row `index` of the table gradient.
pub fn embed_backward(grad_table: &mut Tensor, index: usize, upstream: &[f64]) -> Result<(), TensorError> {
    if index >= grad_table.rows() {
        return Err(TensorError::IndexOutOfRange {
            index,
            len: grad_table.rows(),
        });
    }
    if upstream.len() != grad_table.cols() {
        return Err(mismatch(
            "embed_backward",
            format!("upstream {} vs width {}", upstream.len(), grad_table.cols()),
        ));
    }
    for (g, u) in grad_table.row_slice_mut(index).iter_mut().zip(upstream) {
        *g += u;
    }
    Ok(())
}

/// A categorical distribution held as probabilities and log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Categorical {
    pub probs: Vec<f64>,
    pub log_probs: Vec<f64>,
}

impl Categorical {
    pub fn from_logits(logits: &[f64]) -> Result<Self, TensorError> {
        if logits.is_empty() || logits.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFiniteLogits);
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
        let log_z = max + sum.ln();
        let log_probs: Vec<f64> = logits.iter().map(|z| z - log_z).collect();
        let probs = log_probs.iter().map(|l| l.exp()).collect();
        Ok(Self { probs, log_probs })
    }

    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .zip(&self.log_probs)
            .map(|(p, l)| p * l)
            .sum::<f64>()
    }

    /// Inverse-CDF draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = 0;
        for (k, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                last = k;
            }
            acc += p;
            if u < acc {
                return k;
            }
        }
        last
    }

    /// Most likely outcome, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, &l) in self.log_probs.iter().enumerate() {
            if l > self.log_probs[best] {
                best = k;
            }
        }
        best
    }
}

pub fn softmax(logits: &[f64]) -> Result<Vec<f64>, TensorError> {
    Ok(Categorical::from_logits(logits)?.probs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalSample {
    pub probs: Vec<f64>,
    pub sample: usize,
    pub log_prob: f64,
    pub entropy: f64,
}

pub fn softmax_categorical<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> Result<CategoricalSample, TensorError> {
    let dist = Categorical::from_logits(logits)?;
    let sample = dist.sample(rng);
    Ok(CategoricalSample {
        log_prob: dist.log_probs[sample],
        entropy: dist.entropy(),
        sample,
        probs: dist.probs,
    })
}

/// Gradient on the logits of `d_logp · log p(action) + d_entropy · H`.
pub fn categorical_backward(dist: &Categorical, action: usize, d_logp: f64, d_entropy: f64) -> Vec<f64> {
    let h = dist.entropy();
    dist.probs
        .iter()
        .zip(&dist.log_probs)
        .enumerate()
        .map(|(k, (&p, &l))| {
            let onehot = if k == action { 1.0 } else { 0.0 };
            d_logp * (onehot - p) - d_entropy * p * (l + h)
        })
        .collect()
}
