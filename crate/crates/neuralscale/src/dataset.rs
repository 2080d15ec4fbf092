//! Desk-scale datasets: synthetic generators plus a simple binary tensor file.
//!
//! Two built-in generators cover the two input kinds: Gaussian blobs for
//! dense networks and procedural 16x16 RGB textures (oriented gratings) for
//! convolutional families. Both are pure functions of their seed.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// One labelled split: features in [n][c][h][w] layout (dense data uses
/// h = w = 1) plus integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub features: Vec<f64>,
    pub labels: Vec<u32>,
}

impl Split {
    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        let len = self.sample_len();
        &self.features[i * len..(i + 1) * len]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Split,
    pub val: Split,
    pub num_classes: usize,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        if self.train.n == 0 || self.val.n == 0 {
            return Err(Error::EmptyDataset);
        }
        for split in [&self.train, &self.val] {
            if split.features.len() != split.n * split.sample_len()
                || split.labels.len() != split.n
            {
                return Err(Error::InvalidArgument("split shape mismatch".into()));
            }
            if let Some(&l) = split.labels.iter().find(|&&l| l as usize >= self.num_classes) {
                return Err(Error::InvalidArgument(format!(
                    "label {l} out of range for {} classes",
                    self.num_classes
                )));
            }
        }
        Ok(())
    }
}

/// Gaussian blob classification data for dense networks.
///
/// Class means sit on scaled random directions; samples get unit-variance
/// noise. `separation` around 4-5 gives linearly separable data, 2 gives an
/// honest desk-scale task.
pub fn gaussian_blobs(
    dim: usize,
    num_classes: usize,
    n_train: usize,
    n_val: usize,
    separation: f64,
    seed: u64,
) -> Dataset {
    let mut rng = Rng::derive(seed, 0x01);
    let mut means = vec![0.0; num_classes * dim];
    for m in means.iter_mut() {
        *m = rng.normal();
    }
    // Normalize each mean to length `separation`.
    for k in 0..num_classes {
        let row = &mut means[k * dim..(k + 1) * dim];
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        for x in row.iter_mut() {
            *x *= separation / norm;
        }
    }
    let make_split = |n: usize, rng: &mut Rng| {
        let mut features = Vec::with_capacity(n * dim);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let k = i % num_classes; // balanced
            labels.push(k as u32);
            for d in 0..dim {
                features.push(means[k * dim + d] + rng.normal());
            }
        }
        Split { n, c: dim, h: 1, w: 1, features, labels }
    };
    let train = make_split(n_train, &mut rng);
    let val = make_split(n_val, &mut rng);
    Dataset { train, val, num_classes }
}

/// Procedural texture classification data for convolutional networks:
/// each class is an oriented sinusoidal grating with additive noise.
pub fn textures(
    num_classes: usize,
    n_train: usize,
    n_val: usize,
    side: usize,
    seed: u64,
) -> Dataset {
    let mut rng = Rng::derive(seed, 0x02);
    let channels = 3;
    let make_split = |n: usize, rng: &mut Rng| {
        let mut features = Vec::with_capacity(n * channels * side * side);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let k = i % num_classes;
            labels.push(k as u32);
            let angle = std::f64::consts::PI * k as f64 / num_classes as f64;
            let freq = 0.5 + 0.35 * (k % 3) as f64;
            let phase = rng.uniform() * std::f64::consts::TAU;
            let (sa, ca) = angle.sin_cos();
            for ch in 0..channels {
                let ch_scale = 1.0 - 0.2 * ch as f64;
                for y in 0..side {
                    for x in 0..side {
                        let t = freq * (ca * x as f64 + sa * y as f64) + phase;
                        features.push(ch_scale * t.sin() + 0.3 * rng.normal());
                    }
                }
            }
        }
        Split { n, c: channels, h: side, w: side, features, labels }
    };
    let train = make_split(n_train, &mut rng);
    let val = make_split(n_val, &mut rng);
    Dataset { train, val, num_classes }
}

// ---------------------------------------------------------------------------
// Binary dataset file
// ---------------------------------------------------------------------------
//
// Little-endian layout:
//   magic   b"NSDS"
//   version u16 (currently 1)
//   dtype   u8  (2 = f64; the only dtype written by this crate)
//   flags   u8  (reserved, 0)
//   classes u32
//   then two sections (train, val), each:
//     n u32, c u32, h u32, w u32,
//     features: n*c*h*w little-endian f64,
//     labels:   n little-endian u32

const MAGIC: &[u8; 4] = b"NSDS";
const VERSION: u16 = 1;
const DTYPE_F64: u8 = 2;

fn write_split(w: &mut impl Write, s: &Split) -> Result<()> {
    for v in [s.n, s.c, s.h, s.w] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    for x in &s.features {
        w.write_all(&x.to_le_bytes())?;
    }
    for l in &s.labels {
        w.write_all(&l.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_split(r: &mut impl Read) -> Result<Split> {
    let n = read_u32(r)? as usize;
    let c = read_u32(r)? as usize;
    let h = read_u32(r)? as usize;
    let w = read_u32(r)? as usize;
    let len = n
        .checked_mul(c)
        .and_then(|x| x.checked_mul(h))
        .and_then(|x| x.checked_mul(w))
        .ok_or_else(|| Error::InvalidArgument("dataset shape overflow".into()))?;
    let mut features = vec![0.0f64; len];
    let mut buf = [0u8; 8];
    for x in features.iter_mut() {
        r.read_exact(&mut buf)?;
        *x = f64::from_le_bytes(buf);
    }
    let mut labels = vec![0u32; n];
    for l in labels.iter_mut() {
        *l = read_u32(r)?;
    }
    Ok(Split { n, c, h, w, features, labels })
}

pub fn save_dataset(path: &Path, data: &Dataset) -> Result<()> {
    data.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[DTYPE_F64, 0])?;
    w.write_all(&(data.num_classes as u32).to_le_bytes())?;
    write_split(&mut w, &data.train)?;
    write_split(&mut w, &data.val)?;
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::SchemaMismatch {
            expected: String::from_utf8_lossy(MAGIC).into_owned(),
            got: String::from_utf8_lossy(&magic).into_owned(),
        });
    }
    let mut vbuf = [0u8; 2];
    r.read_exact(&mut vbuf)?;
    let version = u16::from_le_bytes(vbuf);
    if version != VERSION {
        return Err(Error::SchemaMismatch {
            expected: format!("dataset v{VERSION}"),
            got: format!("dataset v{version}"),
        });
    }
    let mut db = [0u8; 2];
    r.read_exact(&mut db)?;
    if db[0] != DTYPE_F64 {
        return Err(Error::InvalidArgument(format!("unsupported dtype {}", db[0])));
    }
    let num_classes = read_u32(&mut r)? as usize;
    let train = read_split(&mut r)?;
    let val = read_split(&mut r)?;
    let data = Dataset { train, val, num_classes };
    data.validate()?;
    Ok(data)
}
