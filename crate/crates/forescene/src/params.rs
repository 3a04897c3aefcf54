//! Named parameter storage, initialization, and the Adam optimizer.

use crate::error::{Error, Result};
use indexmap::IndexMap;
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

/// Gradients keyed by parameter name, as returned by `Tape::param_grads`.
pub type GradMap = IndexMap<String, Array2<f64>>;

/// Ordered map of named weight matrices. Prefixes group parameters by
/// subsystem (`feat.`, `enc.`, `dec.`, `dit.`), which is how the decoder
/// weight penalty and the checkpoint format address them.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    map: IndexMap<String, Array2<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Array2<f64>) {
        debug_assert!(!self.map.contains_key(name), "duplicate param {name}");
        self.map.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> &Array2<f64> {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Array2<f64> {
        self.map
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array2<f64>)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.map.values().map(|v| v.len()).sum()
    }

    /// Sum of squared entries over all parameters whose name starts with
    /// `prefix`.
    pub fn sq_norm_with_prefix(&self, prefix: &str) -> f64 {
        self.map
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.iter().map(|x| x * x).sum::<f64>())
            .sum()
    }

    pub fn names_with_prefix(&self, prefix: &str) -> Vec<String> {
        self.map
            .keys()
            .filter(|k| k.starts_with(prefix))
            .cloned()
            .collect()
    }

    pub fn any_non_finite(&self) -> Option<String> {
        for (k, v) in &self.map {
            if v.iter().any(|x| !x.is_finite()) {
                return Some(k.clone());
            }
        }
        None
    }
}

/// Initializers used when building model parameters.
pub struct Init;

impl Init {
    /// Gaussian with Xavier/Glorot scale `sqrt(2 / (fan_in + fan_out))`.
    pub fn xavier(rng: &mut ChaCha12Rng, rows: usize, cols: usize) -> Array2<f64> {
        let std = (2.0 / (rows + cols) as f64).sqrt();
        Array2::from_shape_fn((rows, cols), |_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
    }

    pub fn normal(rng: &mut ChaCha12Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
    }

    pub fn uniform(rng: &mut ChaCha12Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(lo..hi))
    }

    pub fn zeros(rows: usize, cols: usize) -> Array2<f64> {
        Array2::zeros((rows, cols))
    }

    pub fn ones(rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_elem((rows, cols), 1.0)
    }
}

/// Adam with optional cosine-annealed learning rate, one moment pair per
/// parameter entry.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: IndexMap<String, Array2<f64>>,
    v: IndexMap<String, Array2<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: IndexMap::new(), v: IndexMap::new(), t: 0 }
    }

    /// One update with the given learning rate (callers apply their own
    /// schedule).
    pub fn step(&mut self, params: &mut ParamStore, grads: &GradMap, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, g) in grads {
            let p = params.get_mut(name);
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(g.raw_dim()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(g.raw_dim()));
            for ((pe, ge), (me, ve)) in p.iter_mut().zip(g.iter()).zip(m.iter_mut().zip(v.iter_mut()))
            {
                *me = self.beta1 * *me + (1.0 - self.beta1) * ge;
                *ve = self.beta2 * *ve + (1.0 - self.beta2) * ge * ge;
                let mh = *me / bc1;
                let vh = *ve / bc2;
                *pe -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Cosine annealing from `lr0` down to `lr0 * floor_frac` over `total` steps.
pub fn cosine_lr(lr0: f64, step: usize, total: usize, floor_frac: f64) -> f64 {
    if total <= 1 {
        return lr0;
    }
    let progress = (step as f64 / (total - 1) as f64).clamp(0.0, 1.0);
    let lo = lr0 * floor_frac;
    lo + (lr0 - lo) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Sum gradient maps in a fixed order (first map's key order), averaging by
/// `1/count` when `count > 1`. Order-stable so batched training is
/// reproducible regardless of how samples were scheduled.
pub fn merge_grads(mut maps: Vec<GradMap>, average: bool) -> GradMap {
    let count = maps.len().max(1) as f64;
    let mut acc = maps.remove(0);
    for m in maps {
        for (k, g) in m {
            match acc.get_mut(&k) {
                Some(a) => *a += &g,
                None => {
                    acc.insert(k, g);
                }
            }
        }
    }
    if average && count > 1.0 {
        for g in acc.values_mut() {
            *g /= count;
        }
    }
    acc
}

// ---------------------------------------------------------------------------
// Checkpoint format: `FSCK0001` magic, little-endian u32 JSON-header length,
// JSON header (version, config fingerprint, entry names and shapes), then all
// entries' f64 data little-endian in header order.
// ---------------------------------------------------------------------------

const CKPT_MAGIC: &[u8; 8] = b"FSCK0001";

#[derive(serde::Serialize, serde::Deserialize)]
struct CkptHeader {
    version: u32,
    fingerprint: String,
    entries: Vec<CkptEntry>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct CkptEntry {
    name: String,
    rows: usize,
    cols: usize,
}

/// Serialize a parameter store with a config fingerprint.
pub fn write_checkpoint(params: &ParamStore, fingerprint: &str) -> Vec<u8> {
    let header = CkptHeader {
        version: 1,
        fingerprint: fingerprint.to_string(),
        entries: params
            .iter()
            .map(|(name, v)| CkptEntry { name: name.clone(), rows: v.nrows(), cols: v.ncols() })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header).expect("checkpoint header");
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    for (_, v) in params.iter() {
        for &x in v.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

/// Parse a checkpoint produced by [`write_checkpoint`]. Returns the store and
/// the recorded config fingerprint.
pub fn read_checkpoint(bytes: &[u8]) -> Result<(ParamStore, String)> {
    let fail = |m: &str| Error::Format(format!("checkpoint: {m}"));
    if bytes.len() < 12 || &bytes[0..8] != CKPT_MAGIC {
        return Err(fail("bad magic"));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + hlen {
        return Err(fail("truncated header"));
    }
    let header: CkptHeader =
        serde_json::from_slice(&bytes[12..12 + hlen]).map_err(|e| fail(&e.to_string()))?;
    if header.version != 1 {
        return Err(fail(&format!("unsupported version {}", header.version)));
    }
    let mut offset = 12 + hlen;
    let mut store = ParamStore::new();
    for e in &header.entries {
        let n = e.rows * e.cols;
        let end = offset + n * 8;
        if bytes.len() < end {
            return Err(fail(&format!("truncated data for {}", e.name)));
        }
        let mut data = Vec::with_capacity(n);
        for chunk in bytes[offset..end].chunks_exact(8) {
            data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        let arr = Array2::from_shape_vec((e.rows, e.cols), data)
            .map_err(|e| fail(&e.to_string()))?;
        store.insert(&e.name, arr);
        offset = end;
    }
    if offset != bytes.len() {
        return Err(fail("trailing bytes"));
    }
    Ok((store, header.fingerprint))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn adam_reduces_quadratic() {
        // f(p) = sum(p^2), gradient 2p: a few steps shrink the loss.
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        store.insert("p", Init::normal(&mut rng, 4, 4, 1.0));
        let mut opt = Adam::new(0.05);
        let loss = |s: &ParamStore| s.get("p").iter().map(|x| x * x).sum::<f64>();
        let l0 = loss(&store);
        for _ in 0..50 {
            let g = store.get("p").mapv(|x| 2.0 * x);
            let mut grads = GradMap::new();
            grads.insert("p".into(), g);
            opt.step(&mut store, &grads, 0.05);
        }
        assert!(loss(&store) < l0 * 0.1);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert!((cosine_lr(1.0, 0, 100, 0.01) - 1.0).abs() < 1e-12);
        assert!((cosine_lr(1.0, 99, 100, 0.01) - 0.01).abs() < 1e-12);
        let mid = cosine_lr(1.0, 50, 101, 0.0);
        assert!((mid - 0.5).abs() < 1e-9);
    }

    #[test]
    fn checkpoint_roundtrip_bit_exact() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        store.insert("enc.w1", Init::xavier(&mut rng, 3, 5));
        store.insert("dec.q", Init::normal(&mut rng, 2, 2, 0.3));
        let bytes = write_checkpoint(&store, "cfg-abc");
        let (loaded, fp) = read_checkpoint(&bytes).unwrap();
        assert_eq!(fp, "cfg-abc");
        assert_eq!(loaded.len(), 2);
        for (name, v) in store.iter() {
            assert_eq!(loaded.get(name), v);
        }
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        assert!(read_checkpoint(b"not a checkpoint").is_err());
        let mut store = ParamStore::new();
        store.insert("a", Init::zeros(1, 1));
        let mut bytes = write_checkpoint(&store, "x");
        bytes.truncate(bytes.len() - 3);
        assert!(read_checkpoint(&bytes).is_err());
    }
}
