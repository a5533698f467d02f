use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AVCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Contents of a checkpoint file: the configuration echo and the named
/// parameter arrays in registry order.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config_text: String,
    pub params: Vec<(String, Tensor<f32>)>,
}

// Layout, all integers u32 little-endian:
//   "AVCK" version config_len config_utf8 n_params
//   per param: name_len name_utf8 rank dims... f32 LE data
pub fn save_checkpoint<S: Scalar>(
    path: &Path,
    config_text: &str,
    store: &ParamStore<S>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    let u32le = |n: usize| (n as u32).to_le_bytes();
    put(CHECKPOINT_MAGIC)?;
    put(&CHECKPOINT_VERSION.to_le_bytes())?;
    put(&u32le(config_text.len()))?;
    put(config_text.as_bytes())?;
    put(&u32le(store.len()))?;
    for p in store.iter() {
        put(&u32le(p.name.len()))?;
        put(p.name.as_bytes())?;
        put(&u32le(p.value.ndim()))?;
        for &d in p.value.shape() {
            put(&u32le(d))?;
        }
        let mut buf = Vec::with_capacity(4 * p.value.len());
        for v in p.value.data() {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        put(&buf)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

struct Reader<'a, R> {
    inner: R,
    path: &'a Path,
}

impl<R: Read> Reader<'_, R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::format(self.path, "truncated checkpoint"))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.bytes(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.bytes(n)?)
            .map_err(|_| Error::format(self.path, "invalid UTF-8 in checkpoint"))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        inner: BufReader::new(file),
        path,
    };
    if r.bytes(4)? != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "bad magic, expected AVCK"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(Error::format(
            path,
            format!("unsupported checkpoint version {version}"),
        ));
    }
    let config_text = r.string()?;
    let n = r.u32()?;
    let mut params = Vec::with_capacity(n);
    for _ in 0..n {
        let name = r.string()?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let raw = r.bytes(4 * len)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let t = Tensor::new(&shape, data)
            .map_err(|e| Error::format(path, format!("parameter {name}: {e}")))?;
        params.push((name, t));
    }
    let mut rest = Vec::new();
    r.inner
        .read_to_end(&mut rest)
        .map_err(|e| Error::io(path, e))?;
    if !rest.is_empty() {
        return Err(Error::format(path, "trailing bytes after parameters"));
    }
    Ok(Checkpoint {
        config_text,
        params,
    })
}

impl Checkpoint {
    /// Copies the stored arrays into `store`, checking names and shapes.
    pub fn restore<S: Scalar>(&self, store: &mut ParamStore<S>) -> Result<()> {
        let values: Vec<(String, Tensor<S>)> = self
            .params
            .iter()
            .map(|(n, t)| (n.clone(), t.cast()))
            .collect();
        store.load_values(&values)
    }
}
