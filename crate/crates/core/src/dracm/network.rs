//! Encoder (server embedding + LSTM) and dense heads, with batched forward
//! and backward passes over whole trajectories.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Observation;
use crate::tensorcore::{
    dense_backward, dense_forward, embed, embed_backward, lstm_backward_seq, lstm_forward_seq, lstm_step, uniform_init,
    Activation, LstmGrads, LstmStepCache, LstmWeights, ParamId, ParamStore, Tensor, TensorError,
};

/// Scales mapping the largest configured rate, cycles, and data size near 1.
pub const RHO_SCALE: f64 = 6e7;
pub const CYCLES_SCALE: f64 = 4e11;
pub const DATA_SCALE: f64 = 4e7;
pub const SCALAR_FEATURES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub servers: usize,
    pub embed_dim: usize,
    pub lstm_hidden: usize,
    pub head_hidden: usize,
}

impl ModelDims {
    pub fn new(servers: usize) -> Self {
        Self {
            servers,
            embed_dim: 2,
            lstm_hidden: 256,
            head_hidden: 128,
        }
    }

    pub fn input_width(&self) -> usize {
        2 * self.embed_dim + SCALAR_FEATURES
    }
}

/// Encoder input for one slot: the local server, the previous serving node,
/// and the scaled numeric part of the observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInput {
    pub u: usize,
    pub prev_action: usize,
    pub scalars: [f64; SCALAR_FEATURES],
}

impl StepInput {
    pub fn new(obs: &Observation, prev_action: usize) -> Self {
        Self {
            u: obs.u.index(),
            prev_action,
            scalars: [obs.rho / RHO_SCALE, obs.c / CYCLES_SCALE, obs.data / DATA_SCALE],
        }
    }
}

/// The vector `e_t` fed to the LSTM: both embeddings then the scalars.
pub fn featurize(obs: &Observation, prev_action: usize, table: &Tensor) -> Result<Vec<f64>, TensorError> {
    let input = StepInput::new(obs, prev_action);
    let mut e = Vec::with_capacity(2 * table.cols() + SCALAR_FEATURES);
    e.extend_from_slice(embed(table, input.u)?);
    e.extend_from_slice(embed(table, input.prev_action)?);
    e.extend_from_slice(&input.scalars);
    Ok(e)
}

fn param(store: &ParamStore, name: &str) -> Result<ParamId, TensorError> {
    store.id(name)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Encoder {
    pub dims: ModelDims,
    embed: ParamId,
    wx: ParamId,
    wh: ParamId,
    b: ParamId,
}

/// Forward activations of the encoder over `T` steps of a `B`-trajectory batch.
#[derive(Debug, Clone)]
pub struct EncoderPass {
    inputs: Vec<Vec<StepInput>>,
    caches: Vec<LstmStepCache>,
}

impl EncoderPass {
    pub fn steps(&self) -> usize {
        self.caches.len()
    }

    pub fn batch(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    /// Hidden state `h_t`, `B × H`.
    pub fn hidden(&self, t: usize) -> &Tensor {
        &self.caches[t].h
    }

    /// All hidden states stacked time-major: row `t · B + b`.
    pub fn stacked_hidden(&self) -> Tensor {
        let hs: Vec<&Tensor> = self.caches.iter().map(|c| &c.h).collect();
        Tensor::vstack(&hs).expect("equal widths")
    }
}

/// Recurrent state carried between single-step encoder calls.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    pub h: Tensor,
    pub c: Tensor,
}

impl Encoder {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        dims: ModelDims,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        let (nin, hs) = (dims.input_width(), dims.lstm_hidden);
        let embed = store.add(
            &format!("{prefix}.embed"),
            uniform_init(&[dims.servers, dims.embed_dim], 0.1, rng),
        )?;
        let wx = store.add(
            &format!("{prefix}.lstm.wx"),
            uniform_init(&[nin, 4 * hs], 1.0 / (nin as f64).sqrt(), rng),
        )?;
        let wh = store.add(
            &format!("{prefix}.lstm.wh"),
            uniform_init(&[hs, 4 * hs], 1.0 / (hs as f64).sqrt(), rng),
        )?;
        let mut bias = Tensor::zeros(&[4 * hs]);
        bias.data_mut()[hs..2 * hs].fill(1.0);
        let b = store.add(&format!("{prefix}.lstm.b"), bias)?;
        Ok(Self { dims, embed, wx, wh, b })
    }

    pub fn lookup(store: &ParamStore, prefix: &str, dims: ModelDims) -> Result<Self, TensorError> {
        let enc = Self {
            dims,
            embed: param(store, &format!("{prefix}.embed"))?,
            wx: param(store, &format!("{prefix}.lstm.wx"))?,
            wh: param(store, &format!("{prefix}.lstm.wh"))?,
            b: param(store, &format!("{prefix}.lstm.b"))?,
        };
        let expect = [
            (enc.embed, vec![dims.servers, dims.embed_dim]),
            (enc.wx, vec![dims.input_width(), 4 * dims.lstm_hidden]),
            (enc.wh, vec![dims.lstm_hidden, 4 * dims.lstm_hidden]),
            (enc.b, vec![4 * dims.lstm_hidden]),
        ];
        for (id, shape) in expect {
            if store.value(id).shape() != shape.as_slice() {
                return Err(TensorError::ShapeMismatch {
                    op: "encoder lookup",
                    detail: format!("{} has shape {:?}", store.names()[id.index()], store.value(id).shape()),
                });
            }
        }
        Ok(enc)
    }

    pub fn embed_id(&self) -> ParamId {
        self.embed
    }

    fn weights<'a>(&self, store: &'a ParamStore) -> LstmWeights<'a> {
        LstmWeights {
            wx: store.value(self.wx),
            wh: store.value(self.wh),
            b: store.value(self.b),
        }
    }

    fn input_matrix(&self, store: &ParamStore, inputs: &[StepInput]) -> Result<Tensor, TensorError> {
        let table = store.value(self.embed);
        let width = self.dims.input_width();
        let mut x = Tensor::zeros(&[inputs.len(), width]);
        for (r, inp) in inputs.iter().enumerate() {
            let row = x.row_slice_mut(r);
            let d = self.dims.embed_dim;
            row[..d].copy_from_slice(embed(table, inp.u)?);
            row[d..2 * d].copy_from_slice(embed(table, inp.prev_action)?);
            row[2 * d..].copy_from_slice(&inp.scalars);
        }
        Ok(x)
    }

    pub fn initial_state(&self, batch: usize) -> RecurrentState {
        RecurrentState {
            h: Tensor::zeros(&[batch, self.dims.lstm_hidden]),
            c: Tensor::zeros(&[batch, self.dims.lstm_hidden]),
        }
    }

    /// Advances `state` by one slot for each row of the batch; returns the new `h`.
    pub fn step(
        &self,
        store: &ParamStore,
        state: &mut RecurrentState,
        inputs: &[StepInput],
    ) -> Result<Tensor, TensorError> {
        let x = self.input_matrix(store, inputs)?;
        let cache = lstm_step(&x, &state.h, &state.c, self.weights(store))?;
        state.h = cache.h.clone();
        state.c = cache.c;
        Ok(cache.h)
    }

    /// `inputs[t][b]`: slot `t` of trajectory `b`, starting from zero state.
    pub fn forward(&self, store: &ParamStore, inputs: &[Vec<StepInput>]) -> Result<EncoderPass, TensorError> {
        let batch = inputs.first().map_or(0, Vec::len);
        if inputs.iter().any(|row| row.len() != batch) {
            return Err(TensorError::ShapeMismatch {
                op: "encoder",
                detail: "ragged batch".into(),
            });
        }
        let xs = inputs
            .iter()
            .map(|row| self.input_matrix(store, row))
            .collect::<Result<Vec<_>, _>>()?;
        let s0 = self.initial_state(batch);
        let caches = lstm_forward_seq(&xs, &s0.h, &s0.c, self.weights(store))?;
        Ok(EncoderPass {
            inputs: inputs.to_vec(),
            caches,
        })
    }

    /// Accumulates parameter gradients given `dh` stacked like
    /// [`EncoderPass::stacked_hidden`].
    pub fn backward(&self, store: &mut ParamStore, pass: &EncoderPass, dh: &Tensor) -> Result<(), TensorError> {
        let (steps, batch, hs) = (pass.steps(), pass.batch(), self.dims.lstm_hidden);
        if dh.rows() != steps * batch || dh.cols() != hs {
            return Err(TensorError::ShapeMismatch {
                op: "encoder backward",
                detail: format!("dh {}x{}", dh.rows(), dh.cols()),
            });
        }
        let dhs: Vec<Tensor> = (0..steps)
            .map(|t| {
                Tensor::from_vec(&[batch, hs], dh.data()[t * batch * hs..(t + 1) * batch * hs].to_vec())
                    .expect("slice length")
            })
            .collect();
        let (values, grads) = store.split_mut();
        let w = LstmWeights {
            wx: &values[self.wx.index()],
            wh: &values[self.wh.index()],
            b: &values[self.b.index()],
        };
        let [gwx, gwh, gb, gembed] = grads
            .get_disjoint_mut([self.wx.index(), self.wh.index(), self.b.index(), self.embed.index()])
            .expect("distinct encoder parameters");
        let dxs = lstm_backward_seq(&pass.caches, &dhs, w, &mut LstmGrads { wx: gwx, wh: gwh, b: gb })?;
        let d = self.dims.embed_dim;
        for (row_inputs, dx) in pass.inputs.iter().zip(&dxs) {
            for (r, inp) in row_inputs.iter().enumerate() {
                let g = dx.row_slice(r);
                embed_backward(gembed, inp.u, &g[..d])?;
                embed_backward(gembed, inp.prev_action, &g[d..2 * d])?;
            }
        }
        Ok(())
    }
}

/// Two-layer head: tanh hidden layer, linear output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Head {
    pub outputs: usize,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone)]
pub struct HeadPass {
    pub hidden: Tensor,
    pub out: Tensor,
}

impl Head {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        let w1 = store.add(
            &format!("{prefix}.w1"),
            uniform_init(&[input, hidden], 1.0 / (input as f64).sqrt(), rng),
        )?;
        let b1 = store.add(&format!("{prefix}.b1"), Tensor::zeros(&[hidden]))?;
        let w2 = store.add(
            &format!("{prefix}.w2"),
            uniform_init(&[hidden, outputs], 1.0 / (hidden as f64).sqrt(), rng),
        )?;
        let b2 = store.add(&format!("{prefix}.b2"), Tensor::zeros(&[outputs]))?;
        Ok(Self { outputs, w1, b1, w2, b2 })
    }

    pub fn lookup(store: &ParamStore, prefix: &str, outputs: usize) -> Result<Self, TensorError> {
        let head = Self {
            outputs,
            w1: param(store, &format!("{prefix}.w1"))?,
            b1: param(store, &format!("{prefix}.b1"))?,
            w2: param(store, &format!("{prefix}.w2"))?,
            b2: param(store, &format!("{prefix}.b2"))?,
        };
        if store.value(head.w2).cols() != outputs {
            return Err(TensorError::ShapeMismatch {
                op: "head lookup",
                detail: format!("{prefix} has {} outputs, expected {outputs}", store.value(head.w2).cols()),
            });
        }
        Ok(head)
    }

    /// Every parameter of the head, in registration order.
    pub fn params(&self) -> [ParamId; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }

    pub fn forward(&self, store: &ParamStore, h: &Tensor) -> Result<HeadPass, TensorError> {
        let hidden = dense_forward(h, store.value(self.w1), store.value(self.b1), Activation::Tanh)?;
        let out = dense_forward(&hidden, store.value(self.w2), store.value(self.b2), Activation::Identity)?;
        Ok(HeadPass { hidden, out })
    }

    /// Accumulates head gradients and returns the gradient on `h`.
    pub fn backward(
        &self,
        store: &mut ParamStore,
        h: &Tensor,
        pass: &HeadPass,
        d_out: &Tensor,
    ) -> Result<Tensor, TensorError> {
        let (values, grads) = store.split_mut();
        let [gw1, gb1, gw2, gb2] = grads
            .get_disjoint_mut([self.w1.index(), self.b1.index(), self.w2.index(), self.b2.index()])
            .expect("distinct head parameters");
        let d_hidden = dense_backward(
            &pass.hidden,
            &values[self.w2.index()],
            &pass.out,
            Activation::Identity,
            d_out,
            gw2,
            gb2,
        )?;
        dense_backward(h, &values[self.w1.index()], &pass.hidden, Activation::Tanh, &d_hidden, gw1, gb1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::ServerId;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obs(u: usize, rho: f64, c: f64, data: f64) -> Observation {
        Observation {
            u: ServerId(u),
            rho,
            c,
            data,
        }
    }

    #[test]
    fn featurize_shapes_and_scales() {
        let mut table = Tensor::zeros(&[4, 2]);
        table.row_slice_mut(1).copy_from_slice(&[0.1, 0.2]);
        table.row_slice_mut(3).copy_from_slice(&[-0.3, 0.4]);
        let e = featurize(&obs(1, 6e7, 0.0, 0.0), 3, &table).unwrap();
        assert_eq!(e.len(), 7);
        assert_eq!(&e[..4], &[0.1, 0.2, -0.3, 0.4]);
        assert_eq!(e[4], 1.0);
        assert_eq!(&e[5..], &[0.0, 0.0]);
        assert!(featurize(&obs(4, 1.0, 0.0, 0.0), 0, &table).is_err());
    }

    #[test]
    fn step_matches_full_forward() {
        let dims = ModelDims {
            servers: 5,
            embed_dim: 2,
            lstm_hidden: 6,
            head_hidden: 4,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let enc = Encoder::register(&mut store, "enc", dims, &mut rng).unwrap();
        let inputs: Vec<Vec<StepInput>> = (0..4)
            .map(|t| {
                (0..2)
                    .map(|b| StepInput::new(&obs((t + b) % 5, 3e7, 1e10 * t as f64, 2e6), (t + 2 * b) % 5))
                    .collect()
            })
            .collect();
        let pass = enc.forward(&store, &inputs).unwrap();
        let mut state = enc.initial_state(2);
        for (t, row) in inputs.iter().enumerate() {
            let h = enc.step(&store, &mut state, row).unwrap();
            assert_eq!(&h, pass.hidden(t));
        }
        assert_eq!(Encoder::lookup(&store, "enc", dims).unwrap(), enc);
        assert!(Encoder::lookup(&store, "other", dims).is_err());
    }

    fn small() -> (Encoder, ParamStore) {
        let dims = ModelDims {
            servers: 4,
            embed_dim: 2,
            lstm_hidden: 5,
            head_hidden: 3,
        };
        let mut store = ParamStore::new();
        let enc = Encoder::register(&mut store, "enc", dims, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        (enc, store)
    }

    fn sequence(first_rho: f64) -> Vec<Vec<StepInput>> {
        (0..5)
            .map(|t| {
                let rho = if t == 0 { first_rho } else { 2e7 };
                vec![StepInput::new(&obs(t % 4, rho, 5e10, 1e6), (t + 1) % 4)]
            })
            .collect()
    }

    #[test]
    fn zero_parameters_give_zero_hidden_states() {
        let (enc, mut store) = small();
        for p in 0..store.len() {
            store.value_mut(crate::tensorcore::ParamId(p)).fill(0.0);
        }
        let pass = enc.forward(&store, &sequence(3e7)).unwrap();
        assert!(pass.stacked_hidden().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn last_hidden_state_depends_on_first_observation() {
        let (enc, store) = small();
        let a = enc.forward(&store, &sequence(3e7)).unwrap();
        let b = enc.forward(&store, &sequence(5e7)).unwrap();
        let again = enc.forward(&store, &sequence(3e7)).unwrap();
        assert_eq!(a.hidden(4), again.hidden(4));
        let diff: f64 = a.hidden(4).data().iter().zip(b.hidden(4).data()).map(|(x, y)| (x - y).abs()).sum();
        assert!(diff > 1e-9, "diff {diff}");
    }
}
