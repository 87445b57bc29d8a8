//! Binary parameter container: `MFD1`, a format version, the block count,
//! then per block its shape and little-endian `f64` entries.

use std::io::{Read, Write};
use std::path::Path;

use crate::autodiff::Matrix;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MFD1";
pub const VERSION: u32 = 1;

pub fn write_blocks(mut out: impl Write, blocks: &[&Matrix]) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(blocks.len() as u32).to_le_bytes())?;
    for m in blocks {
        out.write_all(&(m.rows() as u64).to_le_bytes())?;
        out.write_all(&(m.cols() as u64).to_le_bytes())?;
        for v in m.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()
}

fn read_array<const N: usize>(input: &mut impl Read, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    input
        .read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated while reading {what}: {e}")))?;
    Ok(buf)
}

pub fn read_blocks(mut input: impl Read) -> Result<Vec<Matrix>> {
    let magic: [u8; 4] = read_array(&mut input, "magic bytes")?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic bytes {magic:?}")));
    }
    let version = u32::from_le_bytes(read_array(&mut input, "version")?);
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let count = u32::from_le_bytes(read_array(&mut input, "block count")?);
    let mut blocks = Vec::with_capacity(count as usize);
    for k in 0..count {
        let rows = u64::from_le_bytes(read_array(&mut input, "block shape")?) as usize;
        let cols = u64::from_le_bytes(read_array(&mut input, "block shape")?) as usize;
        let len = rows
            .checked_mul(cols)
            .filter(|&l| l <= 1 << 32)
            .ok_or_else(|| Error::Checkpoint(format!("block {k} has implausible shape {rows}x{cols}")))?;
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f64::from_le_bytes(read_array(&mut input, "block data")?));
        }
        blocks.push(Matrix::from_vec(rows, cols, data)?);
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest).map_err(|e| Error::Checkpoint(e.to_string()))? != 0 {
        return Err(Error::Checkpoint("trailing bytes after the last block".into()));
    }
    Ok(blocks)
}

pub fn save(path: &Path, blocks: &[&Matrix]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|source| Error::Write {
        path: path.to_path_buf(),
        source,
    })?;
    write_blocks(std::io::BufWriter::new(file), blocks).map_err(|source| Error::Write {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load(path: &Path) -> Result<Vec<Matrix>> {
    let file = std::fs::File::open(path).map_err(|source| Error::Load {
        path: path.to_path_buf(),
        source,
    })?;
    read_blocks(std::io::BufReader::new(file))
}
