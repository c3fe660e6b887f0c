use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Tensor, TensorError};

/// Handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors, each paired with a gradient buffer of equal shape.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<ParamId, TensorError> {
        if self.index.contains_key(name) {
            return Err(TensorError::DuplicateParam(name.to_string()));
        }
        let id = self.values.len();
        self.grads.push(Tensor::zeros(value.shape()));
        self.values.push(value);
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Result<ParamId, TensorError> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id.0]
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn grads(&self) -> &[Tensor] {
        &self.grads
    }

    /// Values for reading next to gradients for writing.
    pub fn split_mut(&mut self) -> (&[Tensor], &mut [Tensor]) {
        (&self.values, &mut self.grads)
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(0.0));
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Overwrites values with those of a store of identical layout.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<(), TensorError> {
        if self.names != other.names || self.values.iter().zip(&other.values).any(|(a, b)| a.shape() != b.shape()) {
            return Err(TensorError::ShapeMismatch {
                op: "copy_values_from",
                detail: "stores have different layouts".into(),
            });
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            a.data_mut().copy_from_slice(b.data());
        }
        Ok(())
    }

    pub fn grads_finite(&self) -> bool {
        self.grads.iter().all(Tensor::is_finite)
    }
}

/// Tensor with entries drawn from `U(-scale, scale)`.
pub fn uniform_init<R: Rng + ?Sized>(shape: &[usize], scale: f64, rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale).collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for every parameter of a store.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = params.values.iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    /// One bias-corrected Adam step on the store's gradients; gradients are
    /// zeroed afterwards.
    pub fn update(&mut self, params: &mut ParamStore) {
        assert_eq!(self.m.len(), params.len(), "optimizer built for another store");
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((value, grad), (m, v)) in params
            .values
            .iter_mut()
            .zip(&params.grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((p, &g), mi), vi) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        params.zero_grads();
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_MAGIC: &[u8; 8] = b"MIGCKPT\0";

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    total: usize,
    params: Vec<ManifestEntry>,
}

fn with_ext(base: &Path, ext: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

/// Writes `<base>.bin` (magic, version, count, little-endian f64 values) and
/// `<base>.json` (name → shape and offset).
pub fn save_checkpoint(params: &ParamStore, base: impl AsRef<Path>) -> Result<(), TensorError> {
    let base = base.as_ref();
    let mut entries = Vec::with_capacity(params.len());
    let mut offset = 0;
    let mut blob = Vec::with_capacity(8 + 4 + 8 + params.num_scalars() * 8);
    blob.extend_from_slice(CHECKPOINT_MAGIC);
    blob.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    blob.extend_from_slice(&(params.num_scalars() as u64).to_le_bytes());
    for (name, value) in params.names.iter().zip(&params.values) {
        entries.push(ManifestEntry {
            name: name.clone(),
            shape: value.shape().to_vec(),
            offset,
        });
        offset += value.len();
        for v in value.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        total: offset,
        params: entries,
    };
    fs::File::create(with_ext(base, ".bin"))?.write_all(&blob)?;
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
    fs::write(with_ext(base, ".json"), json)?;
    Ok(())
}

pub fn load_checkpoint(base: impl AsRef<Path>) -> Result<ParamStore, TensorError> {
    let base = base.as_ref();
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(with_ext(base, ".json"))?)
        .map_err(|e| TensorError::Checkpoint(e.to_string()))?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(TensorError::Checkpoint(format!("unsupported version {}", manifest.version)));
    }
    let mut blob = Vec::new();
    fs::File::open(with_ext(base, ".bin"))?.read_to_end(&mut blob)?;
    if blob.len() < 20 || &blob[..8] != CHECKPOINT_MAGIC {
        return Err(TensorError::Checkpoint("bad header".into()));
    }
    let version = u32::from_le_bytes(blob[8..12].try_into().expect("4 bytes"));
    let count = u64::from_le_bytes(blob[12..20].try_into().expect("8 bytes")) as usize;
    if version != CHECKPOINT_VERSION || count != manifest.total || blob.len() != 20 + 8 * count {
        return Err(TensorError::Checkpoint("header does not match manifest".into()));
    }
    let values: Vec<f64> = blob[20..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut store = ParamStore::new();
    for e in manifest.params {
        let n: usize = e.shape.iter().product();
        let slice = values
            .get(e.offset..e.offset + n)
            .ok_or_else(|| TensorError::Checkpoint(format!("{} out of range", e.name)))?;
        store.add(&e.name, Tensor::from_vec(&e.shape, slice.to_vec())?)?;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.add("a", Tensor::zeros(&[2])).unwrap();
        assert!(matches!(s.add("a", Tensor::zeros(&[1])), Err(TensorError::DuplicateParam(_))));
        assert!(matches!(s.id("b"), Err(TensorError::UnknownParam(_))));
    }

    #[test]
    fn zero_gradients_leave_parameters_alone() {
        let mut s = ParamStore::new();
        s.add("p", Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap()).unwrap();
        let before = s.clone();
        let mut opt = AdamState::new(&s, AdamConfig::default());
        for _ in 0..5 {
            opt.update(&mut s);
        }
        assert_eq!(s.values(), before.values());
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = ParamStore::new();
        let p = s.add("p", Tensor::from_vec(&[1], vec![2.0]).unwrap()).unwrap();
        let mut opt = AdamState::new(&s, AdamConfig::default());
        s.grad_mut(p).data_mut()[0] = 1.0;
        opt.update(&mut s);
        let moved = 2.0 - s.value(p).data()[0];
        assert!((moved - 5e-4).abs() < 1e-10, "moved {moved}");
        assert_eq!(s.grad(p).data()[0], 0.0);
    }

    #[test]
    fn moments_follow_recurrence() {
        let mut s = ParamStore::new();
        let p = s.add("p", Tensor::from_vec(&[1], vec![0.0]).unwrap()).unwrap();
        let mut opt = AdamState::new(&s, AdamConfig::default());
        for _ in 0..2 {
            s.grad_mut(p).data_mut()[0] = 2.0;
            opt.update(&mut s);
        }
        // m2 = 0.9·0.2 + 0.1·2 = 0.38 ; v2 = 0.999·0.004 + 0.001·4 = 0.007996
        assert!((opt.m[0].data()[0] - 0.38).abs() < 1e-15);
        assert!((opt.v[0].data()[0] - 0.007996).abs() < 1e-15);
        // both bias-corrected moments equal the constant gradient, so each step is ≈ lr
        assert!((s.value(p).data()[0] + 2.0 * 5e-4).abs() < 1e-9);
    }

    #[test]
    fn zero_learning_rate_freezes_values() {
        let mut s = ParamStore::new();
        let p = s.add("p", Tensor::from_vec(&[2], vec![0.3, 0.4]).unwrap()).unwrap();
        let mut opt = AdamState::new(
            &s,
            AdamConfig {
                lr: 0.0,
                ..AdamConfig::default()
            },
        );
        s.grad_mut(p).data_mut().copy_from_slice(&[1.0, -1.0]);
        opt.update(&mut s);
        assert_eq!(s.value(p).data(), &[0.3, 0.4]);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("model");
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut s = ParamStore::new();
        s.add("enc.w", uniform_init(&[3, 4], 1.0, &mut rng)).unwrap();
        s.add("enc.b", uniform_init(&[4], 1.0, &mut rng)).unwrap();
        save_checkpoint(&s, &base).unwrap();
        let back = load_checkpoint(&base).unwrap();
        assert_eq!(back.names(), s.names());
        assert_eq!(back.values(), s.values());

        let mut bytes = std::fs::read(dir.path().join("model.bin")).unwrap();
        bytes[0] = b'X';
        std::fs::write(dir.path().join("model.bin"), bytes).unwrap();
        assert!(matches!(load_checkpoint(&base), Err(TensorError::Checkpoint(_))));
    }
}
