//! Named parameters, Adam state and checkpoint files.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

const MAGIC: &[u8; 4] = b"3DWP";
const VERSION: u8 = 1;
const META_PREFIX: &str = "meta.";

#[derive(Clone, Debug)]
pub struct ParamEntry {
    /// Logical dimensions, e.g. `[C_out, C_in, K, K]` for a convolution weight.
    pub dims: Vec<usize>,
    pub value: Arc<Tensor3>,
    pub grad: Option<Tensor3>,
    m: Tensor3,
    v: Tensor3,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
    meta: BTreeMap<String, Vec<f64>>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, dims: Vec<usize>, value: Tensor3) -> Result<()> {
        let name = name.into();
        if name.starts_with(META_PREFIX) {
            return Err(Error::Argument(format!("parameter name {name} uses the reserved prefix")));
        }
        if dims.iter().product::<usize>() != value.len() {
            return Err(Error::Shape(format!("{name}: dims {dims:?} do not match {} values", value.len())));
        }
        if self.entries.contains_key(&name) {
            return Err(Error::Argument(format!("duplicate parameter {name}")));
        }
        let (c, h, w) = value.shape();
        let entry = ParamEntry { dims, value: Arc::new(value), grad: None, m: Tensor3::zeros(c, h, w), v: Tensor3::zeros(c, h, w) };
        self.entries.insert(name, entry);
        Ok(())
    }

    pub fn value(&self, name: &str) -> Result<&Arc<Tensor3>> {
        self.entries.get(name).map(|e| &e.value).ok_or_else(|| Error::Config(format!("unknown parameter {name}")))
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.get(name)
    }

    /// Replace the value of an existing parameter; the shape must not change.
    pub fn set_value(&mut self, name: &str, value: Tensor3) -> Result<()> {
        let e = self.entries.get_mut(name).ok_or_else(|| Error::Config(format!("unknown parameter {name}")))?;
        if !e.value.same_shape(&value) {
            return Err(Error::Shape(format!("{name}: {:?} vs {:?}", e.value.shape(), value.shape())));
        }
        e.value = Arc::new(value);
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    /// Scalar count over the parameters whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.entries.iter().filter(|(k, _)| k.starts_with(prefix)).map(|(_, e)| e.value.len()).sum()
    }

    pub fn set_meta(&mut self, key: &str, values: Vec<f64>) {
        self.meta.insert(key.to_string(), values);
    }

    pub fn meta(&self, key: &str) -> Option<&[f64]> {
        self.meta.get(key).map(Vec::as_slice)
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Set every gradient to zero.
    pub fn zero_grad(&mut self) {
        for e in self.entries.values_mut() {
            let (c, h, w) = e.value.shape();
            e.grad = Some(Tensor3::zeros(c, h, w));
        }
    }

    /// Add `grads` (by name) into the stored gradients. Gradients that were
    /// not zeroed first start from zero.
    pub fn accumulate(&mut self, grads: &BTreeMap<String, Tensor3>) -> Result<()> {
        for (name, g) in grads {
            let e = self.entries.get_mut(name).ok_or_else(|| Error::Config(format!("unknown parameter {name}")))?;
            if !e.value.same_shape(g) {
                return Err(Error::Shape(format!("{name}: gradient {:?} vs value {:?}", g.shape(), e.value.shape())));
            }
            match &mut e.grad {
                Some(acc) => acc.add_assign(g),
                slot => *slot = Some(g.clone()),
            }
        }
        Ok(())
    }

    /// Largest absolute gradient entry, and whether all gradients are finite.
    pub fn grad_stats(&self) -> (f64, bool) {
        let mut max = 0.0f64;
        let mut finite = true;
        for e in self.entries.values() {
            if let Some(g) = &e.grad {
                finite &= g.is_finite();
                max = g.data().iter().fold(max, |m, v| m.max(v.abs()));
            }
        }
        (max, finite)
    }

    /// One bias-corrected Adam update over all parameters, then clears the
    /// gradients.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        if let Some((name, _)) = self.entries.iter().find(|(_, e)| e.grad.is_none()) {
            return Err(Error::State(format!("no gradient for {name}")));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for e in self.entries.values_mut() {
            let g = e.grad.take().expect("checked above");
            let value = Arc::make_mut(&mut e.value);
            for i in 0..g.len() {
                let gi = g.data()[i];
                let m = cfg.beta1 * e.m.data()[i] + (1.0 - cfg.beta1) * gi;
                let v = cfg.beta2 * e.v.data()[i] + (1.0 - cfg.beta2) * gi * gi;
                e.m.data_mut()[i] = m;
                e.v.data_mut()[i] = v;
                value.data_mut()[i] -= cfg.lr * (m / c1) / ((v / c2).sqrt() + cfg.eps);
            }
        }
        Ok(())
    }

    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&[VERSION])?;
        let count = self.entries.len() + self.meta.len();
        out.write_all(&(count as u32).to_le_bytes())?;
        let metas = self.meta.iter().map(|(k, v)| (format!("{META_PREFIX}{k}"), vec![v.len()], v.as_slice()));
        let params = self.entries.iter().map(|(k, e)| (k.clone(), e.dims.clone(), e.value.data()));
        for (name, dims, data) in metas.chain(params) {
            out.write_all(&(name.len() as u32).to_le_bytes())?;
            out.write_all(name.as_bytes())?;
            out.write_all(&(dims.len() as u32).to_le_bytes())?;
            for d in &dims {
                out.write_all(&(*d as u32).to_le_bytes())?;
            }
            for v in data {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    /// Parse a checkpoint. Parameter tensors come back as `(C, H, W)` with
    /// `C = dims[0]`, `H = dims[1]` and `W` the product of the rest; callers
    /// normally go through [`ParamStore::load_into`].
    pub fn read_from(input: &mut impl Read) -> Result<ParamStore> {
        let mut r = Reader(input);
        let mut magic = [0u8; 4];
        r.exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Config("not a checkpoint file".into()));
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(Error::Config(format!("unsupported checkpoint version {version}")));
        }
        let count = r.u32()? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            if len > 4096 {
                return Err(Error::Config("corrupt checkpoint: name too long".into()));
            }
            let mut name = vec![0u8; len];
            r.exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Config("corrupt checkpoint: bad name".into()))?;
            let rank = r.u32()? as usize;
            if rank > 8 {
                return Err(Error::Config(format!("corrupt checkpoint: rank {rank}")));
            }
            let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            if n > 1 << 28 {
                return Err(Error::Config("corrupt checkpoint: tensor too large".into()));
            }
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            if let Some(key) = name.strip_prefix(META_PREFIX) {
                store.meta.insert(key.to_string(), data);
                continue;
            }
            let (c, h) = (dims.first().copied().unwrap_or(1), dims.get(1).copied().unwrap_or(1));
            let w = dims.iter().skip(2).product();
            let t = Tensor3::from_vec(c, h, w, data).map_err(|e| Error::Config(e.to_string()))?;
            store.insert(name, dims, t).map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(store)
    }

    pub fn load(path: &Path) -> Result<ParamStore> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }

    /// Copy values from `other` into this store. Names and logical shapes
    /// must match exactly.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        for (name, e) in &self.entries {
            match other.entries.get(name) {
                None => return Err(Error::Config(format!("checkpoint lacks parameter {name}"))),
                Some(o) if o.dims != e.dims => {
                    return Err(Error::Config(format!("{name}: checkpoint shape {:?}, model expects {:?}", o.dims, e.dims)))
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = other.entries.keys().find(|k| !self.entries.contains_key(*k)) {
            return Err(Error::Config(format!("checkpoint has unexpected parameter {extra}")));
        }
        for (name, e) in self.entries.iter_mut() {
            let src = &other.entries[name].value;
            let (c, h, w) = e.value.shape();
            e.value = Arc::new(Tensor3::from_vec(c, h, w, src.data().to_vec())?);
        }
        for (k, v) in &other.meta {
            self.meta.insert(k.clone(), v.clone());
        }
        Ok(())
    }

    pub fn load_into(&mut self, path: &Path) -> Result<()> {
        let other = Self::load(path)?;
        self.load_from(&other)
    }
}

struct Reader<'r, R>(&'r mut R);

impl<R: Read> Reader<'_, R> {
    fn exact(&mut self, buf: &mut [u8]) -> Result<()> {
        self.0.read_exact(buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Config("truncated checkpoint".into()),
            _ => Error::from(e),
        })
    }

    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.exact(&mut b)?;
        Ok(b[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("p", vec![1], Tensor3::scalar(v)).unwrap();
        s
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut s = scalar_store(0.5);
        s.zero_grad();
        s.accumulate(&BTreeMap::from([("p".to_string(), Tensor3::scalar(1.0))])).unwrap();
        s.adam_step(&AdamConfig::default()).unwrap();
        let p = s.value("p").unwrap().item();
        assert!((0.5 - p - 1e-4).abs() < 1e-10, "{p}");
    }

    #[test]
    fn adam_zero_gradient_keeps_values() {
        let mut s = scalar_store(0.5);
        for _ in 0..5 {
            s.zero_grad();
            s.adam_step(&AdamConfig::default()).unwrap();
        }
        assert_eq!(s.value("p").unwrap().item(), 0.5);
    }

    #[test]
    fn adam_descends() {
        let mut s = scalar_store(0.0);
        for _ in 0..50 {
            s.zero_grad();
            s.accumulate(&BTreeMap::from([("p".to_string(), Tensor3::scalar(-3.0))])).unwrap();
            s.adam_step(&AdamConfig { lr: 0.01, ..Default::default() }).unwrap();
        }
        assert!(s.value("p").unwrap().item() > 0.4);
    }

    #[test]
    fn adam_without_gradients_is_state_error() {
        let mut s = scalar_store(0.0);
        assert!(matches!(s.adam_step(&AdamConfig::default()), Err(Error::State(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut s = ParamStore::new();
        s.insert("a.w", vec![2, 3, 2, 2], Tensor3::from_fn(2, 3, 4, |c, y, x| (c * 100 + y * 10 + x) as f64 * 0.1)).unwrap();
        s.insert("a.b", vec![2], Tensor3::from_vec(2, 1, 1, vec![1.5, -2.0]).unwrap()).unwrap();
        s.set_meta("config", vec![1.0, 2.0]);
        let mut buf = Vec::new();
        s.write_to(&mut buf).unwrap();
        let back = ParamStore::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.meta("config"), Some(&[1.0, 2.0][..]));
        let mut fresh = ParamStore::new();
        fresh.insert("a.w", vec![2, 3, 2, 2], Tensor3::zeros(2, 3, 4)).unwrap();
        fresh.insert("a.b", vec![2], Tensor3::zeros(2, 1, 1)).unwrap();
        fresh.load_from(&back).unwrap();
        for n in ["a.w", "a.b"] {
            assert_eq!(fresh.value(n).unwrap().data(), s.value(n).unwrap().data());
        }
        let mut truncated = &buf[..buf.len() - 3];
        assert!(matches!(ParamStore::read_from(&mut truncated), Err(Error::Config(_))));
    }

    #[test]
    fn shape_mismatch_on_load_is_config_error() {
        let src = scalar_store(1.0);
        let mut dst = ParamStore::new();
        dst.insert("p", vec![2], Tensor3::zeros(2, 1, 1)).unwrap();
        assert!(matches!(dst.load_from(&src), Err(Error::Config(_))));
    }
}
