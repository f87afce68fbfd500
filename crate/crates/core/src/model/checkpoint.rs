//! Flat binary checkpoints.
//!
//! Little endian throughout: magic `MLCK`, version `u32`, scalar width `u64`,
//! the architecture header (encoder tag and widths, projector tag, widths or
//! pattern table shape, epsilon, pattern labels, trainable-pattern flag),
//! then every parameter array in flat order. Pattern arrays are stored even
//! when they are frozen.

use std::io::{Read, Write};

use ndarray::{Array1, Array2};

use super::{Activation, Dense, Encoder, InverseDistanceProjector, LinearEncoder, MlpNetwork, Model, Projector};
use crate::error::{bail, Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"MLCK";
const VERSION: u32 = 1;

struct Writer<T> {
    buf: Vec<u8>,
    _t: std::marker::PhantomData<T>,
}

impl<T: Scalar> Writer<T> {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: usize) {
        self.buf.extend_from_slice(&(v as u64).to_le_bytes());
    }
    fn scalars<'a>(&mut self, vs: impl IntoIterator<Item = &'a T>) {
        for v in vs {
            v.write_le(&mut self.buf);
        }
    }
    fn mlp_header(&mut self, m: &MlpNetwork<T>) {
        self.u32(m.activation.tag());
        self.u32(m.activate_output as u32);
        let sizes = m.layer_sizes();
        self.u64(sizes.len());
        for s in sizes {
            self.u64(s);
        }
    }
    fn mlp_params(&mut self, m: &MlpNetwork<T>) {
        for l in &m.layers {
            self.scalars(l.weight.iter());
            self.scalars(l.bias.iter());
        }
    }
}

pub fn write_checkpoint<T: Scalar, W: Write>(model: &Model<T>, mut out: W) -> Result<()> {
    let mut w = Writer::<T> { buf: Vec::new(), _t: std::marker::PhantomData };
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.u64(T::BYTES);
    match &model.encoder {
        Encoder::Linear(e) => {
            w.u32(0);
            w.u64(e.output_dim());
            w.u64(e.input_dim());
        }
        Encoder::Mlp(m) => {
            w.u32(1);
            w.mlp_header(m);
        }
    }
    match &model.projector {
        Projector::Identity => w.u32(0),
        Projector::InverseDistance(p) => {
            w.u32(1);
            w.u64(p.num_patterns());
            w.u64(p.dim());
            w.u64(p.num_classes);
            w.scalars([p.epsilon].iter());
            for &l in &p.pattern_labels {
                w.u64(l);
            }
        }
        Projector::Mlp(m) => {
            w.u32(2);
            w.mlp_header(m);
        }
    }
    w.u32(model.train_patterns as u32);
    match &model.encoder {
        Encoder::Linear(e) => w.scalars(e.weight.iter()),
        Encoder::Mlp(m) => w.mlp_params(m),
    }
    match &model.projector {
        Projector::Identity => {}
        Projector::InverseDistance(p) => w.scalars(p.patterns.iter()),
        Projector::Mlp(m) => w.mlp_params(m),
    }
    out.write_all(&w.buf)?;
    Ok(())
}

struct Reader<'a, T> {
    buf: &'a [u8],
    pos: usize,
    _t: std::marker::PhantomData<T>,
}

impl<'a, T: Scalar> Reader<'a, T> {
    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        if self.pos + k > self.buf.len() {
            bail!(Format, "truncated checkpoint");
        }
        let s = &self.buf[self.pos..self.pos + k];
        self.pos += k;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        // Guards against absurd sizes from corrupted headers.
        if v > (1 << 40) {
            bail!(Format, "implausible size {v} in checkpoint");
        }
        Ok(v as usize)
    }
    fn scalar(&mut self) -> Result<T> {
        Ok(T::read_le(self.take(T::BYTES)?))
    }
    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<T>> {
        let mut m = Array2::zeros((rows, cols));
        for v in m.iter_mut() {
            *v = self.scalar()?;
        }
        Ok(m)
    }
    fn mlp_header(&mut self) -> Result<(Activation, bool, Vec<usize>)> {
        let act = Activation::from_tag(self.u32()?).ok_or_else(|| Error::Format("unknown activation".into()))?;
        let activate_output = self.u32()? != 0;
        let n = self.u64()?;
        let sizes = (0..n).map(|_| self.u64()).collect::<Result<Vec<_>>>()?;
        if sizes.len() < 2 {
            bail!(Format, "MLP needs at least one layer");
        }
        Ok((act, activate_output, sizes))
    }
    fn mlp(&mut self, header: (Activation, bool, Vec<usize>)) -> Result<MlpNetwork<T>> {
        let (act, activate_output, sizes) = header;
        let mut layers = Vec::new();
        for w in sizes.windows(2) {
            let weight = self.matrix(w[1], w[0])?;
            let mut bias = Array1::zeros(w[1]);
            for v in bias.iter_mut() {
                *v = self.scalar()?;
            }
            layers.push(Dense { weight, bias });
        }
        MlpNetwork::new(layers, act, activate_output)
    }
}

enum EncHeader {
    Linear(usize, usize),
    Mlp((Activation, bool, Vec<usize>)),
}

enum ProjHeader<T> {
    Identity,
    Idp { k: usize, m: usize, c: usize, eps: T, labels: Vec<usize> },
    Mlp((Activation, bool, Vec<usize>)),
}

pub fn read_checkpoint<T: Scalar, R: Read>(mut input: R) -> Result<Model<T>> {
    let mut raw = Vec::new();
    input.read_to_end(&mut raw)?;
    let mut r = Reader::<T> { buf: &raw, pos: 0, _t: std::marker::PhantomData };
    if r.take(4)? != MAGIC {
        bail!(Format, "not a checkpoint file");
    }
    let version = r.u32()?;
    if version != VERSION {
        bail!(Format, "unsupported checkpoint version {version}");
    }
    let width = r.u64()?;
    if width != T::BYTES {
        bail!(Format, "checkpoint stores {width}-byte scalars, reader expects {}", T::BYTES);
    }
    let enc = match r.u32()? {
        0 => EncHeader::Linear(r.u64()?, r.u64()?),
        1 => EncHeader::Mlp(r.mlp_header()?),
        t => bail!(Format, "unknown encoder tag {t}"),
    };
    let proj = match r.u32()? {
        0 => ProjHeader::Identity,
        1 => {
            let (k, m, c) = (r.u64()?, r.u64()?, r.u64()?);
            let eps = r.scalar()?;
            let labels = (0..k).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
            ProjHeader::Idp { k, m, c, eps, labels }
        }
        2 => ProjHeader::Mlp(r.mlp_header()?),
        t => bail!(Format, "unknown projector tag {t}"),
    };
    let train_patterns = r.u32()? != 0;
    let encoder = match enc {
        EncHeader::Linear(m, d) => Encoder::Linear(LinearEncoder::new(r.matrix(m, d)?)),
        EncHeader::Mlp(h) => Encoder::Mlp(r.mlp(h)?),
    };
    let projector = match proj {
        ProjHeader::Identity => Projector::Identity,
        ProjHeader::Idp { k, m, c, eps, labels } => {
            Projector::InverseDistance(InverseDistanceProjector::new(r.matrix(k, m)?, labels, c, eps)?)
        }
        ProjHeader::Mlp(h) => Projector::Mlp(r.mlp(h)?),
    };
    if r.pos != raw.len() {
        bail!(Format, "trailing bytes after checkpoint");
    }
    Ok(Model { encoder, projector, train_patterns })
}
