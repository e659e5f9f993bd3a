//! Binary index snapshots.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "AIVFIDX\0"
//! version    u32      currently 1
//! dim        u32
//! metric     u8       0 = l2, 1 = inner product
//! levels     u32      stored levels, root included
//! next_pid   u64
//! max_norm²  f32
//! per level:
//!   count    u32
//!   per partition:
//!     pid    u64
//!     rows   u64
//!     ids    rows × u64
//!     data   rows × dim × f32
//! ```
//!
//! Partition statistics are not stored.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::index::{MultiLevelIndex, Partition, PartitionId};
use crate::kernels::Metric;

const MAGIC: &[u8; 8] = b"AIVFIDX\0";
const VERSION: u32 = 1;

pub fn write_index_to<W: Write>(mut w: W, index: &MultiLevelIndex) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(index.dim() as u32).to_le_bytes())?;
    w.write_all(&[match index.metric() {
        Metric::L2 => 0u8,
        Metric::InnerProduct => 1,
    }])?;
    w.write_all(&((index.root_level() + 1) as u32).to_le_bytes())?;
    w.write_all(&index.next_partition_id().to_le_bytes())?;
    w.write_all(&index.max_norm_sq().to_le_bytes())?;
    for level in index.raw_levels() {
        w.write_all(&(level.len() as u32).to_le_bytes())?;
        for (pid, p) in level {
            w.write_all(&pid.0.to_le_bytes())?;
            w.write_all(&(p.len() as u64).to_le_bytes())?;
            for id in p.ids() {
                w.write_all(&id.to_le_bytes())?;
            }
            for x in p.data() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::parse(
                format!("byte offset {}", self.pos),
                format!("truncated snapshot while reading {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn read_index_from<R: Read>(mut r: R) -> Result<MultiLevelIndex> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    if c.take(8, "magic")? != MAGIC {
        return Err(Error::parse("byte offset 0", "not an index snapshot"));
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::parse(
            "byte offset 8",
            format!("unsupported snapshot version {version}"),
        ));
    }
    let dim = c.u32("dimension")? as usize;
    let metric = match c.take(1, "metric")?[0] {
        0 => Metric::L2,
        1 => Metric::InnerProduct,
        m => {
            return Err(Error::parse(
                "byte offset 16",
                format!("unknown metric tag {m}"),
            ))
        }
    };
    let n_levels = c.u32("level count")? as usize;
    let next_pid = c.u64("partition counter")?;
    let max_norm_sq = c.f32("max norm")?;
    if dim == 0 || n_levels < 2 {
        return Err(Error::parse(
            "header",
            "snapshot has no dimension or levels",
        ));
    }
    let mut levels = Vec::with_capacity(n_levels);
    for _ in 0..n_levels {
        let count = c.u32("partition count")?;
        let mut level = BTreeMap::new();
        for _ in 0..count {
            let pid = PartitionId(c.u64("partition id")?);
            let rows = c.u64("row count")? as usize;
            let ids = c
                .take(rows.saturating_mul(8), "ids")?
                .chunks_exact(8)
                .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            let data = c
                .take(rows.saturating_mul(dim).saturating_mul(4), "vectors")?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            level.insert(pid, Partition::from_parts(ids, data));
        }
        levels.push(level);
    }
    if c.pos != bytes.len() {
        return Err(Error::parse(
            format!("byte offset {}", c.pos),
            "trailing bytes after snapshot",
        ));
    }
    MultiLevelIndex::from_raw(dim, metric, next_pid, max_norm_sq, levels)
}

pub fn save_index(path: impl AsRef<Path>, index: &MultiLevelIndex) -> Result<()> {
    write_index_to(BufWriter::new(File::create(path)?), index)
}

pub fn load_index(path: impl AsRef<Path>) -> Result<MultiLevelIndex> {
    read_index_from(BufReader::new(File::open(path)?))
}
