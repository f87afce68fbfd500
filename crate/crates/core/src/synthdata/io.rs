//! Flat dataset layouts.
//!
//! CSV: one metadata record `n,d,d1,C,C_prime,sigma,seed` followed by its
//! values, then a column header `x0..x{d-1},clean,random,cluster` and one row
//! per sample. Floats use the shortest representation that parses back to
//! the same bits.
//!
//! Binary (little endian): magic `MLDS`, format version `u32`, then `u64`
//! fields `n, d, d1, C, C_prime, seed, scalar_bytes`, `f64` sigma, the
//! `C x d1` cluster means, and per sample `d` scalars followed by three
//! `u64` label fields (clean, random, cluster).

use std::io::{Read, Write};

use ndarray::Array2;

use super::LabeledDataset;
use crate::error::{bail, Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"MLDS";
const VERSION: u32 = 1;
const META: [&str; 7] = ["n", "d", "d1", "C", "C_prime", "sigma", "seed"];

pub fn write_dataset_csv<T: Scalar, W: Write>(ds: &LabeledDataset<T>, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    w.write_record(META)?;
    w.write_record([
        ds.len().to_string(),
        ds.dim().to_string(),
        ds.d1.to_string(),
        ds.num_classes.to_string(),
        ds.num_random_classes.to_string(),
        ds.sigma.to_string(),
        ds.seed.to_string(),
    ])?;
    let mut header: Vec<String> = (0..ds.dim()).map(|j| format!("x{j}")).collect();
    header.extend(["clean", "random", "cluster"].map(String::from));
    w.write_record(&header)?;
    for i in 0..ds.len() {
        let mut rec: Vec<String> = ds.inputs.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(ds.clean_labels[i].to_string());
        rec.push(ds.random_labels[i].to_string());
        rec.push(ds.true_cluster[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn field<F: std::str::FromStr>(rec: &csv::StringRecord, i: usize, what: &str) -> Result<F> {
    rec.get(i)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::Format(format!("bad or missing {what} in column {i}")))
}

/// Reads the CSV layout. Cluster means are not part of it and come back empty.
pub fn read_dataset_csv<T: Scalar, R: Read>(input: R) -> Result<LabeledDataset<T>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(input);
    let mut records = r.records();
    let mut next = |what: &str| -> Result<csv::StringRecord> {
        records.next().ok_or_else(|| Error::Format(format!("missing {what}")))?.map_err(Error::from)
    };
    let names = next("metadata header")?;
    if names.iter().collect::<Vec<_>>() != META {
        bail!(Format, "unexpected metadata header");
    }
    let meta = next("metadata values")?;
    let n: usize = field(&meta, 0, "n")?;
    let d: usize = field(&meta, 1, "d")?;
    let d1: usize = field(&meta, 2, "d1")?;
    let num_classes: usize = field(&meta, 3, "C")?;
    let num_random_classes: usize = field(&meta, 4, "C_prime")?;
    let sigma: f64 = field(&meta, 5, "sigma")?;
    let seed: u64 = field(&meta, 6, "seed")?;
    let _columns = next("column header")?;

    let mut inputs = Array2::zeros((n, d));
    let (mut clean, mut random, mut cluster) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..n {
        let rec = next("sample row")?;
        if rec.len() != d + 3 {
            bail!(Format, "row {i} has {} fields, expected {}", rec.len(), d + 3);
        }
        for j in 0..d {
            inputs[[i, j]] = field::<T>(&rec, j, "coordinate")?;
        }
        clean.push(field(&rec, d, "clean label")?);
        random.push(field(&rec, d + 1, "random label")?);
        cluster.push(field(&rec, d + 2, "cluster")?);
    }
    let ds = LabeledDataset {
        inputs,
        d1,
        clean_labels: clean,
        num_classes,
        random_labels: random,
        num_random_classes,
        true_cluster: cluster,
        cluster_means: Array2::zeros((0, d1)),
        sigma,
        seed,
    };
    ds.check_consistent()?;
    Ok(ds)
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub fn write_dataset_binary<T: Scalar, W: Write>(ds: &LabeledDataset<T>, mut out: W) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for v in [ds.len(), ds.dim(), ds.d1, ds.num_classes, ds.num_random_classes] {
        put_u64(&mut buf, v as u64);
    }
    put_u64(&mut buf, ds.seed);
    put_u64(&mut buf, T::BYTES as u64);
    buf.extend_from_slice(&ds.sigma.to_le_bytes());
    put_u64(&mut buf, ds.cluster_means.nrows() as u64);
    for &m in ds.cluster_means.iter() {
        m.write_le(&mut buf);
    }
    for i in 0..ds.len() {
        for &v in ds.inputs.row(i) {
            v.write_le(&mut buf);
        }
        put_u64(&mut buf, ds.clean_labels[i] as u64);
        put_u64(&mut buf, ds.random_labels[i] as u64);
        put_u64(&mut buf, ds.true_cluster[i] as u64);
    }
    out.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        if self.pos + k > self.buf.len() {
            bail!(Format, "truncated dataset file");
        }
        let s = &self.buf[self.pos..self.pos + k];
        self.pos += k;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("size field overflows".into()))
    }

    fn scalar<T: Scalar>(&mut self) -> Result<T> {
        Ok(T::read_le(self.take(T::BYTES)?))
    }
}

pub fn read_dataset_binary<T: Scalar, R: Read>(mut input: R) -> Result<LabeledDataset<T>> {
    let mut raw = Vec::new();
    input.read_to_end(&mut raw)?;
    let mut c = Cursor { buf: &raw, pos: 0 };
    if c.take(4)? != MAGIC {
        bail!(Format, "not a dataset file");
    }
    let version = u32::from_le_bytes(c.take(4)?.try_into().unwrap());
    if version != VERSION {
        bail!(Format, "unsupported dataset version {version}");
    }
    let n = c.usize()?;
    let d = c.usize()?;
    let d1 = c.usize()?;
    let num_classes = c.usize()?;
    let num_random_classes = c.usize()?;
    let seed = c.u64()?;
    let width = c.usize()?;
    if width != T::BYTES {
        bail!(Format, "file stores {width}-byte scalars, reader expects {}", T::BYTES);
    }
    let sigma = f64::from_le_bytes(c.take(8)?.try_into().unwrap());
    let mean_rows = c.usize()?;
    let mut cluster_means = Array2::zeros((mean_rows, d1));
    for v in cluster_means.iter_mut() {
        *v = c.scalar()?;
    }
    let mut inputs = Array2::zeros((n, d));
    let (mut clean, mut random, mut cluster) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..n {
        for j in 0..d {
            inputs[[i, j]] = c.scalar()?;
        }
        clean.push(c.usize()?);
        random.push(c.usize()?);
        cluster.push(c.usize()?);
    }
    if c.pos != raw.len() {
        bail!(Format, "trailing bytes after dataset");
    }
    let ds = LabeledDataset {
        inputs,
        d1,
        clean_labels: clean,
        num_classes,
        random_labels: random,
        num_random_classes,
        true_cluster: cluster,
        cluster_means,
        sigma,
        seed,
    };
    ds.check_consistent()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate_toy_data, randomize_labels, LabelSpace, ToyDataConfig};

    fn sample() -> LabeledDataset<f64> {
        let ds =
            generate_toy_data(&ToyDataConfig { n: 37, d: 6, d1: 2, num_classes: 4, seed: 99, ..Default::default() })
                .unwrap();
        randomize_labels(&ds, LabelSpace::Classes(5), 1.0, 1).unwrap()
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let ds = sample();
        let mut buf = Vec::new();
        write_dataset_binary(&ds, &mut buf).unwrap();
        let back: LabeledDataset<f64> = read_dataset_binary(buf.as_slice()).unwrap();
        assert_eq!(back, ds);
        assert!(read_dataset_binary::<f32, _>(buf.as_slice()).is_err());
        assert!(read_dataset_binary::<f64, _>(&buf[..buf.len() - 1]).is_err());
    }

    #[test]
    fn csv_round_trip_keeps_every_field_but_means() {
        let ds = sample();
        let mut buf = Vec::new();
        write_dataset_csv(&ds, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("n,d,d1,C,C_prime,sigma,seed\n37,6,2,4,5,1,99\n"));
        let back: LabeledDataset<f64> = read_dataset_csv(buf.as_slice()).unwrap();
        assert_eq!(back.inputs, ds.inputs);
        assert_eq!(back.random_labels, ds.random_labels);
        assert_eq!(back.clean_labels, ds.clean_labels);
        assert_eq!(back.true_cluster, ds.true_cluster);
        assert_eq!(back.cluster_means.nrows(), 0);
    }

    #[test]
    fn csv_rejects_garbage() {
        assert!(read_dataset_csv::<f64, _>("a,b\n1,2\n".as_bytes()).is_err());
    }
}
