//! Checkpoint layout: a UTF-8 header terminated by the line `end`, followed
//! immediately by every tensor's values as little-endian f64, in header order.
//!
//! ```text
//! rdwt-checkpoint 1
//! epoch 12
//! best_val_loss 3fd5c28f5c28f5c3
//! rng <64 hex seed> <stream> <word position>
//! adam_steps 96
//! config 49
//! preset=tiny
//! ...
//! tensors 120
//! param conv.spatial f64 [8,3,1]
//! buffer conv.bn1.mean f64 [4]
//! adam_m conv.spatial f64 [8,3,1]
//! adam_v conv.spatial f64 [8,3,1]
//! ...
//! end
//! ```

use std::path::Path;

use rand_chacha::ChaCha8Rng;

use super::adam::Adam;
use crate::backbone::Model;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::ndarr::Tensor;
use crate::params::ParamStore;

pub const CHECKPOINT_MAGIC: &str = "rdwt-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Position of a ChaCha stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub params: ParamStore,
    pub buffers: ParamStore,
    pub adam: Adam,
    pub epoch: usize,
    pub best_val_loss: f64,
    pub rng: RngState,
}

fn shape_str(s: &[usize]) -> String {
    format!("[{}]", s.iter().map(usize::to_string).collect::<Vec<_>>().join(","))
}

fn err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

impl Checkpoint {
    pub fn model(&self) -> Result<Model> {
        Model::from_parts(self.config.model.clone(), self.params.clone(), self.buffers.clone())
    }

    fn sections(&self) -> [(&'static str, &ParamStore); 4] {
        [
            ("param", &self.params),
            ("buffer", &self.buffers),
            ("adam_m", &self.adam.m),
            ("adam_v", &self.adam.v),
        ]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut head = String::new();
        head += &format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n");
        head += &format!("epoch {}\n", self.epoch);
        head += &format!("best_val_loss {:016x}\n", self.best_val_loss.to_bits());
        let seed: String = self.rng.seed.iter().map(|b| format!("{b:02x}")).collect();
        head += &format!("rng {seed} {} {}\n", self.rng.stream, self.rng.word_pos);
        head += &format!("adam_steps {}\n", self.adam.t);
        let kv = self.config.to_kv();
        head += &format!("config {}\n", kv.len());
        for (k, v) in &kv {
            head += &format!("{k}={v}\n");
        }
        let count: usize = self.sections().iter().map(|(_, s)| s.len()).sum();
        head += &format!("tensors {count}\n");
        for (kind, store) in self.sections() {
            for (name, t) in store.iter() {
                head += &format!("{kind} {name} f64 {}\n", shape_str(t.shape()));
            }
        }
        head += "end\n";
        let mut out = head.into_bytes();
        for (_, store) in self.sections() {
            for (_, t) in store.iter() {
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let end = buf
            .windows(5)
            .position(|w| w == b"\nend\n")
            .ok_or_else(|| err(0, "no `end` line terminating the header"))?
            + 5;
        let head = std::str::from_utf8(&buf[..end]).map_err(|e| err(e.valid_up_to(), "header is not UTF-8"))?;
        let mut lines = head.lines().scan(0usize, |off, l| {
            let at = *off;
            *off += l.len() + 1;
            Some((at, l))
        });
        let mut next = |what: &str| lines.next().ok_or_else(|| err(end, format!("header ends before {what}")));

        let (at, l) = next("magic")?;
        if l != format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}") {
            return Err(err(at, format!("expected `{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}`, found `{l}`")));
        }
        let field = |line: (usize, &str), key: &str| -> Result<(usize, Vec<String>)> {
            let (at, l) = line;
            let mut parts = l.split(' ');
            if parts.next() != Some(key) {
                return Err(err(at, format!("expected `{key}` line, found `{l}`")));
            }
            Ok((at, parts.map(str::to_string).collect()))
        };
        let parse = |at: usize, s: &str, what: &str| -> Result<u128> {
            s.parse::<u128>().map_err(|_| err(at, format!("bad {what} `{s}`")))
        };

        let (at, v) = field(next("epoch")?, "epoch")?;
        let epoch = parse(at, v.first().map_or("", String::as_str), "epoch")? as usize;
        let (at, v) = field(next("best_val_loss")?, "best_val_loss")?;
        let bits = u64::from_str_radix(v.first().map_or("", String::as_str), 16)
            .map_err(|_| err(at, "bad best_val_loss bits"))?;
        let (at, v) = field(next("rng")?, "rng")?;
        if v.len() != 3 || v[0].len() != 64 {
            return Err(err(at, "rng line needs <64 hex seed> <stream> <word position>"));
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&v[0][2 * i..2 * i + 2], 16).map_err(|_| err(at, "bad rng seed"))?;
        }
        let rng = RngState {
            seed,
            stream: parse(at, &v[1], "rng stream")? as u64,
            word_pos: parse(at, &v[2], "rng position")?,
        };
        let (at, v) = field(next("adam_steps")?, "adam_steps")?;
        let steps = parse(at, v.first().map_or("", String::as_str), "adam step count")? as u64;
        let (at, v) = field(next("config")?, "config")?;
        let n = parse(at, v.first().map_or("", String::as_str), "config line count")? as usize;
        let mut text = String::new();
        for _ in 0..n {
            text += next("config entries")?.1;
            text.push('\n');
        }
        let config = RunConfig::parse(&text).map_err(|e| err(at, format!("embedded config: {e}")))?;

        let (at, v) = field(next("tensors")?, "tensors")?;
        let count = parse(at, v.first().map_or("", String::as_str), "tensor count")? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let (at, l) = next("tensor entries")?;
            let parts: Vec<&str> = l.split(' ').collect();
            let [kind, name, dtype, shape] = parts[..] else {
                return Err(err(at, format!("malformed tensor entry `{l}`")));
            };
            if dtype != "f64" {
                return Err(err(at, format!("unsupported dtype `{dtype}`")));
            }
            let dims = shape
                .strip_prefix('[')
                .and_then(|s| s.strip_suffix(']'))
                .ok_or_else(|| err(at, format!("bad shape `{shape}`")))?;
            let dims: Vec<usize> = if dims.is_empty() {
                vec![]
            } else {
                dims.split(',')
                    .map(|d| d.parse().map_err(|_| err(at, format!("bad shape `{shape}`"))))
                    .collect::<Result<_>>()?
            };
            entries.push((at, kind.to_string(), name.to_string(), dims));
        }
        let (at, l) = next("end")?;
        if l != "end" {
            return Err(err(at, format!("expected `end`, found `{l}`")));
        }

        let want: usize = entries.iter().map(|e| 8 * e.3.iter().product::<usize>()).sum();
        if buf.len() - end != want {
            return Err(err(
                buf.len().min(end + want),
                format!("tensor payload has {} bytes, header implies {want}", buf.len() - end),
            ));
        }
        let mut stores: [ParamStore; 4] = Default::default();
        let mut pos = end;
        for (at, kind, name, dims) in entries {
            let n: usize = dims.iter().product();
            let data = buf[pos..pos + 8 * n]
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            pos += 8 * n;
            let slot = match kind.as_str() {
                "param" => 0,
                "buffer" => 1,
                "adam_m" => 2,
                "adam_v" => 3,
                other => return Err(err(at, format!("unknown tensor kind `{other}`"))),
            };
            stores[slot].insert(name, Tensor::new(dims, data)?);
        }
        let [params, buffers, m, v] = stores;
        let t = &config.train;
        let adam = Adam {
            lr: t.lr,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.adam_eps,
            t: steps,
            m,
            v,
        };
        Ok(Self {
            config,
            params,
            buffers,
            adam,
            epoch,
            best_val_loss: f64::from_bits(bits),
            rng,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn sample() -> Checkpoint {
        let config = RunConfig::tiny();
        let model = Model::new(config.model.clone(), 9).unwrap();
        let mut adam = Adam::new(&model.params, &config.train);
        adam.t = 17;
        adam.m.get_mut("cls.b").unwrap().data_mut()[0] = 0.25;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        rng.set_stream(2);
        let _: u64 = rng.random();
        Checkpoint {
            config,
            params: model.params,
            buffers: model.buffers,
            adam,
            epoch: 4,
            best_val_loss: 0.1 + 0.2,
            rng: RngState::capture(&rng),
        }
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.best_val_loss.to_bits(), (0.1f64 + 0.2).to_bits());
        let mut a = c.rng.restore();
        let mut b = back.rng.restore();
        assert_eq!(a.random::<u64>(), b.random::<u64>());
    }

    #[test]
    fn header_is_text() {
        let bytes = sample().to_bytes();
        let text = String::from_utf8_lossy(&bytes);
        assert!(text.starts_with("rdwt-checkpoint 1\nepoch 4\n"));
        assert!(text.contains("\nparam cls.w f64 [8,2]\n"));
        assert!(text.contains("\nbuffer conv.bn1.var f64 [4]\n"));
    }

    #[test]
    fn damage_is_reported() {
        let bytes = sample().to_bytes();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8]), Err(Error::Format { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'x';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
        assert!(Checkpoint::from_bytes(b"junk").is_err());
    }
}
