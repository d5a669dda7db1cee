//! Binary container for [`HybridButterfly`].
//!
//! All integers and scalars are little-endian. Layout:
//!
//! | section      | contents |
//! |--------------|----------|
//! | header       | magic `BFLY`, version `u16`, scalar tag `u8` (0 real, 1 complex), reserved `u8`, `L: u32`, `l_m: u32`, `m: u64`, `n: u64`, `nnz: u64` |
//! | row tree     | `m: u64`, `m` × `u64` ordering, `2^L + 1` × `u64` leaf boundaries |
//! | column tree  | same for the column tree |
//! | rank profile | U-side ranks for levels `l_m..=L`, then V-side ranks for levels `0..=l_m`, `2^L` × `u32` per level |
//! | blocks       | `V` leaves, `W` levels `1..=l_m`, `B`, `R` levels `l_m..L`, `U` leaves; each block `rows: u32`, `cols: u32`, entries column-major |

use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{ButterflyParts, HybridButterfly};
use crate::error::{Error, Result};
use crate::hier::PartitionTree;
use crate::linalg::{Scalar, ScalarKind};

const MAGIC: &[u8; 4] = b"BFLY";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_BYTES: usize = 40;

/// Fixed-size header, readable without loading the factor blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContainerHeader {
    pub version: u16,
    pub scalar: ScalarKind,
    #[serde(rename = "L")]
    pub levels: usize,
    pub l_m: usize,
    pub m: usize,
    pub n: usize,
    pub nnz: u64,
}

pub fn write_butterfly<T: Scalar, W: Write>(bf: &HybridButterfly<T>, mut sink: W) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(T::KIND.tag());
    out.push(0);
    out.extend_from_slice(&(bf.levels as u32).to_le_bytes());
    out.extend_from_slice(&(bf.center as u32).to_le_bytes());
    out.extend_from_slice(&(bf.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(bf.cols() as u64).to_le_bytes());
    out.extend_from_slice(&bf.memory_report().nnz.to_le_bytes());

    for tree in [&bf.row_tree, &bf.col_tree] {
        out.extend_from_slice(&(tree.size() as u64).to_le_bytes());
        for &o in tree.order() {
            out.extend_from_slice(&(o as u64).to_le_bytes());
        }
        for &b in tree.leaf_bounds() {
            out.extend_from_slice(&(b as u64).to_le_bytes());
        }
    }

    let profile = bf.rank_profile();
    for r in profile.u.iter().chain(profile.v.iter()).flatten() {
        out.extend_from_slice(&(*r as u32).to_le_bytes());
    }

    for b in bf.all_blocks() {
        out.extend_from_slice(&(b.nrows() as u32).to_le_bytes());
        out.extend_from_slice(&(b.ncols() as u32).to_le_bytes());
        for &z in b.iter() {
            z.write_le(&mut out);
        }
    }
    sink.write_all(&out)?;
    Ok(())
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize, section: &'static str) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < len {
            return Err(Error::Format {
                offset: self.data.len() as u64,
                section,
                message: format!(
                    "stream truncated: needed {len} bytes at offset {}, {} available",
                    self.pos,
                    self.data.len() - self.pos
                ),
            });
        }
        let s = &self.data[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u32(&mut self, section: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, section)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, section: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, section)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self, section: &'static str) -> Result<usize> {
        let at = self.pos;
        let v = self.u64(section)?;
        usize::try_from(v).map_err(|_| self.fail(at, section, format!("value {v} out of range")))
    }

    fn fail(&self, offset: usize, section: &'static str, message: String) -> Error {
        Error::Format {
            offset: offset as u64,
            section,
            message,
        }
    }
}

fn parse_header(cur: &mut Cursor<'_>) -> Result<ContainerHeader> {
    const S: &str = "header";
    let magic = cur.take(4, S)?;
    if magic != MAGIC {
        return Err(cur.fail(0, S, format!("bad magic {magic:?}")));
    }
    let version = u16::from_le_bytes(cur.take(2, S)?.try_into().expect("2 bytes"));
    if version != FORMAT_VERSION {
        return Err(cur.fail(4, S, format!("unsupported version {version}")));
    }
    let tag = cur.take(1, S)?[0];
    let scalar =
        ScalarKind::from_tag(tag).ok_or_else(|| cur.fail(6, S, format!("unknown scalar tag {tag}")))?;
    cur.take(1, S)?;
    let levels = cur.u32(S)? as usize;
    let l_m = cur.u32(S)? as usize;
    if levels > 40 || l_m > levels {
        return Err(cur.fail(8, S, format!("invalid level pair L={levels}, l_m={l_m}")));
    }
    let m = cur.usize(S)?;
    let n = cur.usize(S)?;
    let nnz = cur.u64(S)?;
    Ok(ContainerHeader {
        version,
        scalar,
        levels,
        l_m,
        m,
        n,
        nnz,
    })
}

/// Reads only the fixed-size header.
pub fn inspect_header<R: Read>(mut source: R) -> Result<ContainerHeader> {
    let mut buf = Vec::with_capacity(HEADER_BYTES);
    source.by_ref().take(HEADER_BYTES as u64).read_to_end(&mut buf)?;
    parse_header(&mut Cursor { data: &buf, pos: 0 })
}

fn parse_tree(cur: &mut Cursor<'_>, section: &'static str, size: usize, levels: usize) -> Result<PartitionTree> {
    let at = cur.pos;
    let stored = cur.usize(section)?;
    if stored != size {
        return Err(cur.fail(at, section, format!("tree size {stored} disagrees with header {size}")));
    }
    if size.checked_mul(8).is_none_or(|b| b > cur.data.len()) {
        return Err(cur.fail(at, section, format!("tree size {size} exceeds stream")));
    }
    let order = (0..size).map(|_| cur.usize(section)).collect::<Result<Vec<_>>>()?;
    let bounds = (0..(1usize << levels) + 1)
        .map(|_| cur.usize(section))
        .collect::<Result<Vec<_>>>()?;
    PartitionTree::from_order_and_leaves(order, bounds).map_err(|e| cur.fail(at, section, e.to_string()))
}

/// Reads a full container, validating every section.
pub fn read_butterfly<T: Scalar, R: Read>(mut source: R) -> Result<HybridButterfly<T>> {
    let mut data = Vec::new();
    source.read_to_end(&mut data)?;
    let mut cur = Cursor { data: &data, pos: 0 };
    let h = parse_header(&mut cur)?;
    if h.scalar != T::KIND {
        return Err(cur.fail(6, "header", format!("container holds {:?} scalars", h.scalar)));
    }
    let big_l = h.levels;
    let row_tree = parse_tree(&mut cur, "row tree", h.m, big_l)?;
    let col_tree = parse_tree(&mut cur, "column tree", h.n, big_l)?;

    const RP: &str = "rank profile";
    let nb = 1usize << big_l;
    let mut level_ranks = |count: usize| -> Result<Vec<Vec<usize>>> {
        (0..count)
            .map(|_| (0..nb).map(|_| cur.u32(RP).map(|r| r as usize)).collect())
            .collect()
    };
    let u_ranks = level_ranks(big_l - h.l_m + 1)?;
    let v_ranks = level_ranks(h.l_m + 1)?;

    const BS: &str = "blocks";
    let mut read_block = |rows: usize, cols: usize| -> Result<DMatrix<T>> {
        let at = cur.pos;
        let (r, c) = (cur.u32(BS)? as usize, cur.u32(BS)? as usize);
        if (r, c) != (rows, cols) {
            return Err(cur.fail(
                at,
                BS,
                format!("block is {r}x{c}, rank profile implies {rows}x{cols}"),
            ));
        }
        let bytes = cur.take(r * c * T::BYTES, BS)?;
        let entries = bytes.chunks_exact(T::BYTES).map(T::read_le).collect();
        Ok(DMatrix::from_vec(r, c, entries))
    };

    let rb = row_tree.leaf_bounds().to_vec();
    let cb = col_tree.leaf_bounds().to_vec();
    let v_leaf = (0..nb)
        .map(|v| read_block(cb[v + 1] - cb[v], v_ranks[0][v]))
        .collect::<Result<Vec<_>>>()?;
    let mut w_transfer = Vec::new();
    for l in 1..=h.l_m {
        let level = (0..nb)
            .map(|idx| {
                let (c0, c1) = super::v_children(big_l, l, idx);
                read_block(v_ranks[l - 1][c0] + v_ranks[l - 1][c1], v_ranks[l][idx])
            })
            .collect::<Result<Vec<_>>>()?;
        w_transfer.push(level);
    }
    let core = (0..nb)
        .map(|idx| read_block(u_ranks[0][idx], v_ranks[h.l_m][idx]))
        .collect::<Result<Vec<_>>>()?;
    let mut u_transfer = Vec::new();
    for l in h.l_m..big_l {
        let level = (0..nb)
            .map(|idx| {
                let (c0, c1) = super::u_children(big_l, l, idx);
                let child = &u_ranks[l + 1 - h.l_m];
                read_block(child[c0] + child[c1], u_ranks[l - h.l_m][idx])
            })
            .collect::<Result<Vec<_>>>()?;
        u_transfer.push(level);
    }
    let u_leaf = (0..nb)
        .map(|t| read_block(rb[t + 1] - rb[t], u_ranks[big_l - h.l_m][t]))
        .collect::<Result<Vec<_>>>()?;
    if cur.pos != data.len() {
        return Err(cur.fail(cur.pos, BS, format!("{} trailing bytes", data.len() - cur.pos)));
    }

    let bf = HybridButterfly::new(ButterflyParts {
        row_tree,
        col_tree,
        center: h.l_m,
        u_leaf,
        u_transfer,
        core,
        w_transfer,
        v_leaf,
    })
    .map_err(|e| Error::Format {
        offset: HEADER_BYTES as u64,
        section: BS,
        message: e.to_string(),
    })?;
    if bf.memory_report().nnz != h.nnz {
        return Err(Error::Format {
            offset: 32,
            section: "header",
            message: format!("header nnz {} disagrees with stored blocks", h.nnz),
        });
    }
    Ok(bf)
}
