//! Binary container for factors and datasets.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic       8 bytes  "CMTFBIN\0"
//! version     u32      FORMAT_VERSION
//! n_blocks    u32
//! n_blocks × block:
//!   name_len  u32, then name_len bytes of UTF-8
//!   kind      u8       0 = matrix, 1 = third-order tensor, 2 = matrix list
//!   dims      matrix: rows u64, cols u64
//!             tensor: I u64, J u64, K u64
//!             list:   count u64, then rows u64, cols u64 per entry
//!   payload   f64 values, column-major (tensor: i fastest, then j, then k;
//!             list: entries back to back)
//! ```
//!
//! Factor sets use block names `factors/<d>/<kind>/<mode>` and datasets use
//! `data/<d>`; readers skip blocks they do not recognise.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Dataset, DecompositionKind, FactorMatrix, FactorSet, Factors};
use crate::scalar::Scalar;
use crate::tensor::{DenseMatrix, DenseTensor3, RaggedTensor};

pub const MAGIC: [u8; 8] = *b"CMTFBIN\0";
pub const FORMAT_VERSION: u32 = 1;

const KIND_MATRIX: u8 = 0;
const KIND_TENSOR: u8 = 1;
const KIND_LIST: u8 = 2;
const MAX_NAME_LEN: u32 = 4096;

/// Payload of one block.
#[derive(Clone, Debug, PartialEq)]
pub enum Block<T> {
    Matrix(DenseMatrix<T>),
    Tensor(DenseTensor3<T>),
    MatrixList(Vec<DenseMatrix<T>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedBlock<T> {
    pub name: String,
    pub block: Block<T>,
}

impl<T> NamedBlock<T> {
    pub fn new(name: impl Into<String>, block: Block<T>) -> Self {
        Self {
            name: name.into(),
            block,
        }
    }
}

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_u64(w: &mut impl Write, v: usize) -> Result<()> {
    Ok(w.write_all(&(v as u64).to_le_bytes())?)
}

fn put_values<T: Scalar>(w: &mut impl Write, values: &[T]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_f64_lossy().to_le_bytes())?;
    }
    Ok(())
}

/// Writes `blocks` to `w`.
pub fn write_blocks<T: Scalar>(w: &mut impl Write, blocks: &[NamedBlock<T>]) -> Result<()> {
    w.write_all(&MAGIC)?;
    put_u32(w, FORMAT_VERSION)?;
    let n = u32::try_from(blocks.len()).map_err(|_| Error::Format("too many blocks".into()))?;
    put_u32(w, n)?;
    for b in blocks {
        let name = b.name.as_bytes();
        if name.len() > MAX_NAME_LEN as usize {
            return Err(Error::Format(format!("block name longer than {MAX_NAME_LEN} bytes")));
        }
        put_u32(w, name.len() as u32)?;
        w.write_all(name)?;
        match &b.block {
            Block::Matrix(m) => {
                w.write_all(&[KIND_MATRIX])?;
                put_u64(w, m.rows())?;
                put_u64(w, m.cols())?;
                put_values(w, m.values())?;
            }
            Block::Tensor(t) => {
                let (i, j, k) = t.dims();
                w.write_all(&[KIND_TENSOR])?;
                put_u64(w, i)?;
                put_u64(w, j)?;
                put_u64(w, k)?;
                put_values(w, t.values())?;
            }
            Block::MatrixList(list) => {
                w.write_all(&[KIND_LIST])?;
                put_u64(w, list.len())?;
                for m in list {
                    put_u64(w, m.rows())?;
                    put_u64(w, m.cols())?;
                }
                for m in list {
                    put_values(w, m.values())?;
                }
            }
        }
    }
    Ok(())
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("unexpected end of file".into())
    } else {
        e.into()
    }
}

fn get_bytes<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(buf)
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(get_bytes(r)?))
}

fn get_dim(r: &mut impl Read) -> Result<usize> {
    let v = u64::from_le_bytes(get_bytes(r)?);
    usize::try_from(v).map_err(|_| Error::Format(format!("dimension {v} does not fit in memory")))
}

fn count(dims: &[usize]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format(format!("dimensions {dims:?} overflow")))
}

fn get_values<T: Scalar>(r: &mut impl Read, n: usize) -> Result<Vec<T>> {
    // Read in chunks so a corrupt header cannot trigger a huge allocation.
    let mut out = Vec::with_capacity(n.min(1 << 16));
    let mut buf = vec![0u8; 8 * n.min(1 << 13)];
    let mut left = n;
    while left > 0 {
        let take = left.min(buf.len() / 8);
        r.read_exact(&mut buf[..8 * take]).map_err(truncated)?;
        out.extend(buf[..8 * take].chunks_exact(8).map(|c| {
            T::lit(f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        }));
        left -= take;
    }
    Ok(out)
}

/// Reads every block from `r`.
pub fn read_blocks<T: Scalar>(r: &mut impl Read) -> Result<Vec<NamedBlock<T>>> {
    let magic: [u8; 8] = get_bytes(r)?;
    if magic != MAGIC {
        return Err(Error::Format("bad magic; not a factor/data container".into()));
    }
    let version = get_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let n = get_u32(r)?;
    let mut blocks = Vec::with_capacity(n.min(1024) as usize);
    for _ in 0..n {
        let len = get_u32(r)?;
        if len > MAX_NAME_LEN {
            return Err(Error::Format(format!("block name length {len} exceeds {MAX_NAME_LEN}")));
        }
        let mut name = vec![0u8; len as usize];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("block name is not UTF-8".into()))?;
        let [kind] = get_bytes::<1>(r)?;
        let block = match kind {
            KIND_MATRIX => {
                let (rows, cols) = (get_dim(r)?, get_dim(r)?);
                let values = get_values(r, count(&[rows, cols])?)?;
                Block::Matrix(DenseMatrix::from_col_major(rows, cols, values)?)
            }
            KIND_TENSOR => {
                let dims = (get_dim(r)?, get_dim(r)?, get_dim(r)?);
                let values = get_values(r, count(&[dims.0, dims.1, dims.2])?)?;
                Block::Tensor(DenseTensor3::from_values(dims, values)?)
            }
            KIND_LIST => {
                let len = get_dim(r)?;
                let mut shapes = Vec::with_capacity(len.min(1 << 16));
                for _ in 0..len {
                    shapes.push((get_dim(r)?, get_dim(r)?));
                }
                let mut list = Vec::with_capacity(shapes.len());
                for (rows, cols) in shapes {
                    let values = get_values(r, count(&[rows, cols])?)?;
                    list.push(DenseMatrix::from_col_major(rows, cols, values)?);
                }
                Block::MatrixList(list)
            }
            other => return Err(Error::Format(format!("block `{name}` has unknown kind {other}"))),
        };
        blocks.push(NamedBlock { name, block });
    }
    Ok(blocks)
}

pub fn save_blocks<T: Scalar>(path: &Path, blocks: &[NamedBlock<T>]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    write_blocks(&mut w, blocks)?;
    w.flush()?;
    Ok(())
}

pub fn load_blocks<T: Scalar>(path: &Path) -> Result<Vec<NamedBlock<T>>> {
    let file = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_blocks(&mut BufReader::new(file)).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Blocks describing every factor of `fs`.
pub fn factor_blocks<T: Scalar>(fs: &FactorSet<T>) -> Vec<NamedBlock<T>> {
    let mut out = Vec::new();
    for (d, f) in fs.decompositions.iter().enumerate() {
        for (m, fm) in f.modes.iter().enumerate() {
            let block = match fm {
                FactorMatrix::Dense(x) => Block::Matrix(x.clone()),
                FactorMatrix::Slices(s) => Block::MatrixList(s.clone()),
            };
            out.push(NamedBlock::new(format!("factors/{d}/{}/{m}", f.kind.name()), block));
        }
    }
    out
}

/// Rebuilds a factor set from the `factors/...` blocks.
pub fn factor_set_from_blocks<T: Scalar>(blocks: &[NamedBlock<T>]) -> Result<FactorSet<T>> {
    let mut found: Vec<(usize, DecompositionKind, usize, &Block<T>)> = Vec::new();
    for b in blocks {
        let mut parts = b.name.split('/');
        if parts.next() != Some("factors") {
            continue;
        }
        let bad = || Error::Format(format!("malformed factor block name `{}`", b.name));
        let d: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let kind: DecompositionKind = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let m: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        if parts.next().is_some() {
            return Err(bad());
        }
        found.push((d, kind, m, &b.block));
    }
    if found.is_empty() {
        return Err(Error::Format("no factor blocks".into()));
    }
    found.sort_by_key(|&(d, _, m, _)| (d, m));
    let n_dec = found.last().map_or(0, |f| f.0 + 1);
    let mut decompositions = Vec::with_capacity(n_dec);
    for d in 0..n_dec {
        let entries: Vec<_> = found.iter().filter(|f| f.0 == d).collect();
        let Some(&&(_, kind, _, _)) = entries.first() else {
            return Err(Error::Format(format!("decomposition {d} has no factor blocks")));
        };
        if entries.len() != kind.num_modes()
            || entries.iter().enumerate().any(|(i, e)| e.2 != i || e.1 != kind)
        {
            return Err(Error::Format(format!(
                "decomposition {d}: expected modes 0..{} of kind {}",
                kind.num_modes(),
                kind.name()
            )));
        }
        let mut modes = Vec::with_capacity(entries.len());
        for e in &entries {
            let varying = kind == DecompositionKind::Parafac2 && e.2 == crate::model::PARAFAC2_B;
            modes.push(match (e.3, varying) {
                (Block::Matrix(x), false) => FactorMatrix::Dense(x.clone()),
                (Block::MatrixList(s), true) => FactorMatrix::Slices(s.clone()),
                _ => {
                    return Err(Error::Format(format!(
                        "decomposition {d} mode {}: wrong block kind",
                        e.2
                    )))
                }
            });
        }
        let rank = modes[0].cols();
        if modes.iter().any(|m| match m {
            FactorMatrix::Dense(x) => x.cols() != rank,
            FactorMatrix::Slices(s) => s.iter().any(|x| x.cols() != rank),
        }) {
            return Err(Error::Format(format!("decomposition {d}: inconsistent rank")));
        }
        decompositions.push(Factors { kind, modes });
    }
    Ok(FactorSet::new(decompositions))
}

/// Blocks for a list of datasets, named `data/<d>`.
pub fn dataset_blocks<T: Scalar>(datasets: &[Dataset<T>]) -> Vec<NamedBlock<T>> {
    datasets
        .iter()
        .enumerate()
        .map(|(d, x)| {
            let block = match x {
                Dataset::Matrix(m) => Block::Matrix(m.clone()),
                Dataset::Tensor(t) => Block::Tensor(t.clone()),
                Dataset::Ragged(r) => Block::MatrixList(r.slices().to_vec()),
            };
            NamedBlock::new(format!("data/{d}"), block)
        })
        .collect()
}

/// Datasets from the `data/<d>` blocks, in index order.
pub fn datasets_from_blocks<T: Scalar>(blocks: &[NamedBlock<T>]) -> Result<Vec<Dataset<T>>> {
    let mut found = Vec::new();
    for b in blocks {
        if let Some(rest) = b.name.strip_prefix("data/") {
            let d: usize = rest
                .parse()
                .map_err(|_| Error::Format(format!("malformed data block name `{}`", b.name)))?;
            found.push((d, &b.block));
        }
    }
    found.sort_by_key(|f| f.0);
    found
        .iter()
        .enumerate()
        .map(|(i, &(d, block))| {
            if i != d {
                return Err(Error::Format(format!("data blocks are not numbered 0..{}", found.len())));
            }
            Ok(match block {
                Block::Matrix(m) => Dataset::Matrix(m.clone()),
                Block::Tensor(t) => Dataset::Tensor(t.clone()),
                Block::MatrixList(s) => Dataset::Ragged(RaggedTensor::new(s.clone())?),
            })
        })
        .collect()
}

pub fn save_factors<T: Scalar>(path: &Path, fs: &FactorSet<T>) -> Result<()> {
    save_blocks(path, &factor_blocks(fs))
}

pub fn load_factors<T: Scalar>(path: &Path) -> Result<FactorSet<T>> {
    factor_set_from_blocks(&load_blocks(path)?).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}
