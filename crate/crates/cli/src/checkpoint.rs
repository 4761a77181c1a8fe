//! Binary checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "SSTCKPT1" | version u32 | config: len u64 + UTF-8
//! counters: steps, iterations, resvds, merges, refreshes, degenerate (u64 each)
//! rng: flag u8 [seed 32 bytes | stream u64 | word_pos u128]
//! layer count u64, then per layer a tag byte and its payload
//! ```
//!
//! Optimizer moments are not stored.

use std::path::Path;

use sst_core::backprop::{Activation, ActivationLayer, Layer, Network};
use sst_core::layers::{Bias, DenseLinear, HyperbolicSpectralLinear, LoraLinear, SpectralLinear};
use sst_core::linalg::Matrix;
use sst_core::optim::{RngState, ScheduleCounters};
use sst_core::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SSTCKPT1";
pub const VERSION: u32 = 1;

const TAG_DENSE: u8 = 1;
const TAG_LORA: u8 = 2;
const TAG_SPECTRAL: u8 = 3;
const TAG_HYPERBOLIC: u8 = 4;
const TAG_BIAS: u8 = 5;
const TAG_ACTIVATION: u8 = 6;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    /// Canonical config text of the run that produced the model.
    pub config: String,
    pub counters: ScheduleCounters,
    pub rng: Option<RngState>,
    pub model: Network,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }

    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
    }

    fn matrix(&mut self, m: &Matrix) {
        self.usize(m.rows());
        self.usize(m.cols());
        self.f64s(m.as_slice());
    }

    fn spectral(&mut self, s: &SpectralLinear) {
        self.matrix(s.u());
        self.usize(s.sigma().len());
        self.f64s(s.sigma());
        self.matrix(s.vt());
        self.usize(s.active().len());
        for &i in s.active() {
            self.usize(i);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            bad(format!("truncated at byte {} (wanted {n} more)", self.at))
        })?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| bad(format!("length {v} does not fit in memory")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| bad("payload length overflow"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(self.f64s(1)?[0])
    }

    fn matrix(&mut self) -> Result<Matrix> {
        let rows = self.usize()?;
        let cols = self.usize()?;
        let n = rows.checked_mul(cols).ok_or_else(|| bad("matrix size overflow"))?;
        Ok(Matrix::from_vec(rows, cols, self.f64s(n)?)?)
    }

    fn spectral(&mut self) -> Result<SpectralLinear> {
        let u = self.matrix()?;
        let k = self.usize()?;
        let sigma = self.f64s(k)?;
        let vt = self.matrix()?;
        let r = self.usize()?;
        let active = (0..r).map(|_| self.usize()).collect::<Result<Vec<_>>>()?;
        SpectralLinear::from_parts(u, sigma, vt, active)
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer { buf: Vec::new() };
        w.buf.extend_from_slice(MAGIC);
        w.buf.extend_from_slice(&VERSION.to_le_bytes());
        w.usize(self.config.len());
        w.buf.extend_from_slice(self.config.as_bytes());
        let c = &self.counters;
        for v in [c.steps, c.iterations, c.resvds, c.merges, c.refreshes, c.degenerate] {
            w.u64(v);
        }
        match &self.rng {
            None => w.u8(0),
            Some(r) => {
                w.u8(1);
                w.buf.extend_from_slice(&r.seed);
                w.u64(r.stream);
                w.buf.extend_from_slice(&r.word_pos.to_le_bytes());
            }
        }
        w.usize(self.model.len());
        for layer in self.model.layers() {
            match layer {
                Layer::Dense(d) => {
                    w.u8(TAG_DENSE);
                    w.matrix(d.weight());
                }
                Layer::Lora(l) => {
                    w.u8(TAG_LORA);
                    w.u8(l.is_frozen() as u8);
                    w.matrix(l.base());
                    w.matrix(l.b());
                    w.matrix(l.a());
                }
                Layer::Spectral(s) => {
                    w.u8(TAG_SPECTRAL);
                    w.spectral(s);
                }
                Layer::Hyperbolic(h) => {
                    w.u8(TAG_HYPERBOLIC);
                    w.spectral(h.inner());
                    w.f64s(&[h.curvature()]);
                    w.u8(h.v_trainable() as u8);
                    w.usize(h.v().len());
                    w.f64s(h.v());
                }
                Layer::Bias(b) => {
                    w.u8(TAG_BIAS);
                    w.usize(b.dim());
                    w.f64s(b.values());
                }
                Layer::Activation(a) => {
                    w.u8(TAG_ACTIVATION);
                    w.u8(match a.kind() {
                        Activation::Relu => 0,
                        Activation::Tanh => 1,
                    });
                }
            }
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(MAGIC.len()).map_err(|_| bad("file too short for a header"))? != MAGIC {
            return Err(bad("bad magic bytes"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!("format version {version}, this build reads {VERSION}")));
        }
        let len = r.usize()?;
        let config = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| bad("config text is not UTF-8"))?;
        let counters = ScheduleCounters {
            steps: r.u64()?,
            iterations: r.u64()?,
            resvds: r.u64()?,
            merges: r.u64()?,
            refreshes: r.u64()?,
            degenerate: r.u64()?,
        };
        let rng = match r.u8()? {
            0 => None,
            1 => Some(RngState {
                seed: r.take(32)?.try_into().expect("32 bytes"),
                stream: r.u64()?,
                word_pos: u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes")),
            }),
            other => return Err(bad(format!("rng flag {other}"))),
        };
        let count = r.usize()?;
        let mut layers = Vec::new();
        for k in 0..count {
            let layer = match r.u8()? {
                TAG_DENSE => Layer::Dense(DenseLinear::new(r.matrix()?)),
                TAG_LORA => {
                    let frozen = r.u8()? != 0;
                    let (w0, b, a) = (r.matrix()?, r.matrix()?, r.matrix()?);
                    Layer::Lora(LoraLinear::from_parts(w0, b, a, frozen)?)
                }
                TAG_SPECTRAL => Layer::Spectral(r.spectral()?),
                TAG_HYPERBOLIC => {
                    let inner = r.spectral()?;
                    let mut h = HyperbolicSpectralLinear::new(inner, r.f64()?)?;
                    h.set_v_trainable(r.u8()? != 0);
                    let n = r.usize()?;
                    *h.v_mut() = r.f64s(n)?;
                    Layer::Hyperbolic(h)
                }
                TAG_BIAS => {
                    let n = r.usize()?;
                    Layer::Bias(Bias::new(r.f64s(n)?))
                }
                TAG_ACTIVATION => Layer::Activation(ActivationLayer::new(match r.u8()? {
                    0 => Activation::Relu,
                    1 => Activation::Tanh,
                    other => return Err(bad(format!("layer {k}: activation kind {other}"))),
                })),
                tag => return Err(bad(format!("layer {k}: unknown tag {tag}"))),
            };
            layers.push(layer);
        }
        if r.at != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - r.at)));
        }
        Ok(Self {
            config,
            counters,
            rng,
            model: Network::new(layers),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_bytes()?)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn every_kind() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut m = |r, c| Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
        let spectral = SpectralLinear::from_weight(&m(4, 5), 2).unwrap();
        let mut hyper = HyperbolicSpectralLinear::new(SpectralLinear::from_weight(&m(3, 4), 1).unwrap(), -0.5).unwrap();
        hyper.v_mut()[1] = 0.1 + f64::EPSILON;
        let lora = LoraLinear::from_parts(m(4, 4), m(4, 2), m(2, 4), true).unwrap();
        let model = Network::new(vec![
            Layer::Dense(DenseLinear::new(m(5, 3))),
            Layer::Bias(Bias::new(vec![1.0 / 3.0, -0.0, 2.5, f64::MIN_POSITIVE, 7.0])),
            Layer::relu(),
            Layer::Spectral(spectral),
            Layer::tanh(),
            Layer::Lora(lora),
            Layer::Hyperbolic(hyper),
        ]);
        let mut stream = ChaCha8Rng::seed_from_u64(3);
        stream.set_stream(2);
        let _: u64 = stream.random();
        Checkpoint {
            config: "[method]\nname = sst\n".into(),
            counters: ScheduleCounters {
                steps: 10,
                iterations: 3,
                resvds: 1,
                merges: 0,
                refreshes: 0,
                degenerate: 2,
            },
            rng: Some(RngState::capture(&stream)),
            model,
        }
    }

    #[test]
    fn save_load_save_identical_bytes() {
        let ck = every_kind();
        let bytes = ck.to_bytes().unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.model, ck.model);
        assert_eq!(back.counters, ck.counters);
        assert_eq!(back.rng, ck.rng);
        assert_eq!(back.config, ck.config);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn version_and_corruption_rejected() {
        let mut bytes = every_kind().to_bytes().unwrap();
        let good = bytes.clone();
        bytes[8] = 2;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Checkpoint(m)) if m.contains("version")));
        let mut bytes = good.clone();
        bytes[0] = b'X';
        assert!(Checkpoint::from_bytes(&bytes).is_err());
        assert!(Checkpoint::from_bytes(&good[..good.len() - 1]).is_err());
        let mut bytes = good;
        bytes.push(0);
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
