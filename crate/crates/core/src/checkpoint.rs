//! Versioned little-endian binary checkpoints.
//!
//! Model file: `MFLM`, version, architecture, parameter count, parameters.
//! State file: `MFLS`, version, round, global model, optional server
//! velocity, optional global control variate, then per party its id,
//! sample count, previous models and optional control variate.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fed::{Federation, GlobalState};
use crate::nn::{Architecture, Network, ParamVector};

const MODEL_MAGIC: &[u8; 4] = b"MFLM";
const STATE_MAGIC: &[u8; 4] = b"MFLS";
pub const FORMAT_VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn len(&mut self, v: usize) {
        self.u64(v as u64);
    }

    fn params(&mut self, p: &ParamVector) {
        self.len(p.len());
        for &x in p.as_slice() {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }

    fn opt_params(&mut self, p: Option<&ParamVector>) {
        match p {
            Some(p) => {
                self.0.push(1);
                self.params(p);
            }
            None => self.0.push(0),
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
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

    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Checkpoint(format!("length {v} does not fit")))
    }

    fn params(&mut self) -> Result<ParamVector> {
        let n = self.len()?;
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("length overflow".into()))?,
        )?;
        Ok(ParamVector::new(
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        ))
    }

    fn opt_params(&mut self) -> Result<Option<ParamVector>> {
        match self.u8()? {
            0 => Ok(None),
            1 => self.params().map(Some),
            t => Err(Error::Checkpoint(format!("bad option tag {t}"))),
        }
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::Checkpoint("not a checkpoint of the expected kind".into()));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version}, this build reads {FORMAT_VERSION}"
            )));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}

pub fn encode_model(net: &Network) -> Vec<u8> {
    let arch = net.architecture();
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MODEL_MAGIC);
    w.u32(FORMAT_VERSION);
    w.len(arch.input_dim);
    w.len(arch.encoder_widths.len());
    for &width in &arch.encoder_widths {
        w.len(width);
    }
    w.len(arch.projection_hidden);
    w.len(arch.projection_dim);
    w.len(arch.num_classes);
    w.params(net.params());
    w.0
}

pub fn decode_model(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.header(MODEL_MAGIC)?;
    let input_dim = r.len()?;
    let depth = r.len()?;
    if depth > bytes.len() {
        return Err(Error::Checkpoint(format!("implausible encoder depth {depth}")));
    }
    let encoder_widths = (0..depth).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
    let arch = Architecture {
        input_dim,
        encoder_widths,
        projection_hidden: r.len()?,
        projection_dim: r.len()?,
        num_classes: r.len()?,
    };
    arch.validate()
        .map_err(|e| Error::Checkpoint(format!("bad architecture: {e}")))?;
    let params = r.params()?;
    r.finish()?;
    Network::from_vector(&arch, params)
}

pub fn save_model(path: &Path, net: &Network) -> Result<()> {
    write_file(path, &encode_model(net))
}

pub fn load_model(path: &Path) -> Result<Network> {
    decode_model(&read_file(path)?)
}

pub fn encode_state(fed: &Federation) -> Vec<u8> {
    let g = fed.global();
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(STATE_MAGIC);
    w.u32(FORMAT_VERSION);
    w.len(g.round);
    w.params(&g.model);
    w.opt_params(g.server_velocity.as_ref());
    w.opt_params(g.control_variate.as_ref());
    w.len(fed.parties().len());
    for party in fed.parties() {
        w.len(party.id);
        w.len(party.sample_count());
        w.len(party.prev_models().len());
        for m in party.prev_models() {
            w.params(m);
        }
        w.opt_params(party.control_variate());
    }
    w.0
}

/// Load a state written by [`encode_state`] into a federation built from
/// the same configuration, partition and data.
pub fn decode_state_into(bytes: &[u8], fed: &mut Federation) -> Result<()> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.header(STATE_MAGIC)?;
    let expected = fed.global().model.len();
    let check = |p: &ParamVector, what: &str| {
        if p.len() == expected {
            Ok(())
        } else {
            Err(Error::Checkpoint(format!(
                "{what} has {} parameters, expected {expected}",
                p.len()
            )))
        }
    };
    let round = r.len()?;
    let model = r.params()?;
    check(&model, "global model")?;
    let server_velocity = r.opt_params()?;
    let control_variate = r.opt_params()?;
    for p in server_velocity.iter().chain(&control_variate) {
        check(p, "server buffer")?;
    }
    let n = r.len()?;
    if n != fed.parties().len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {n} parties, federation has {}",
            fed.parties().len()
        )));
    }
    let mut restored = Vec::with_capacity(n);
    for party in fed.parties() {
        let (id, count) = (r.len()?, r.len()?);
        if id != party.id || count != party.sample_count() {
            return Err(Error::Checkpoint(format!(
                "party {id} with {count} samples does not match party {} with {}",
                party.id,
                party.sample_count()
            )));
        }
        let depth = r.len()?;
        let mut prev = Vec::with_capacity(depth.min(1024));
        for _ in 0..depth {
            let m = r.params()?;
            check(&m, "previous model")?;
            prev.push(m);
        }
        let control = r.opt_params()?;
        if let Some(c) = &control {
            check(c, "party control variate")?;
        }
        restored.push((prev, control));
    }
    r.finish()?;

    fed.replace_global(GlobalState {
        round,
        model,
        server_velocity,
        control_variate,
    });
    for (party, (prev, control)) in fed.parties_mut().iter_mut().zip(restored) {
        party.restore(prev, control);
    }
    Ok(())
}

pub fn save_state(path: &Path, fed: &Federation) -> Result<()> {
    write_file(path, &encode_state(fed))
}

pub fn load_state_into(path: &Path, fed: &mut Federation) -> Result<()> {
    decode_state_into(&read_file(path)?, fed)
}
