//! Checkpoint container.
//!
//! `<stem>.bin`, little-endian:
//!
//! ```text
//! magic    8 bytes  "STGRIDCK"
//! version  u32      1
//! ndims    u32      number of u32 dims that follow
//! dims     u32 x ndims: height, width, states, observations, latent,
//!                       conv1, conv2, q_hidden, actions
//! sections repeated until EOF:
//!   tag    4 bytes  "SYS0" autoencoder | "QON0" online Q | "QTG0" target Q
//!   count  u64
//!   values count x f64
//! ```
//!
//! Parameter order inside each section is the network's flat layout, listed
//! segment by segment in the `<stem>.manifest.txt` sidecar. `<stem>.resume.json`
//! holds the rest of the loop state (random streams, replay memories,
//! optimiser moments, latent state) so a resumed run continues bit-exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::PolicyKind;
use crate::error::{Error, Result};
use crate::orchestrator::{LoopState, Workbench};

pub const MAGIC: &[u8; 8] = b"STGRIDCK";
pub const VERSION: u32 = 1;
pub const TAG_SYS: [u8; 4] = *b"SYS0";
pub const TAG_Q_ONLINE: [u8; 4] = *b"QON0";
pub const TAG_Q_TARGET: [u8; 4] = *b"QTG0";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub dims: Vec<u32>,
    pub sections: Vec<([u8; 4], Vec<f64>)>,
}

impl Checkpoint {
    pub fn section(&self, tag: [u8; 4]) -> Result<&[f64]> {
        self.sections
            .iter()
            .find(|(t, _)| *t == tag)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::Checkpoint(format!("missing section {}", String::from_utf8_lossy(&tag))))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for (tag, values) in &self.sections {
            out.extend_from_slice(tag);
            out.extend_from_slice(&(values.len() as u64).to_le_bytes());
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let ndims = cur.u32()? as usize;
        let dims = (0..ndims).map(|_| cur.u32()).collect::<Result<Vec<_>>>()?;
        let mut sections = Vec::new();
        while cur.pos < bytes.len() {
            let tag: [u8; 4] = cur.take(4)?.try_into().expect("4 bytes");
            let count = u64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes")) as usize;
            let len = count.checked_mul(8).ok_or_else(|| Error::Checkpoint("section too large".into()))?;
            let values = cur
                .take(len)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            sections.push((tag, values));
        }
        Ok(Checkpoint { dims, sections })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos.saturating_add(n))
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResumeFile {
    pub policy: PolicyKind,
    pub seed: u64,
    pub state: LoopState,
}

pub fn dims_of(wb: &Workbench) -> Vec<u32> {
    let c = wb.config();
    [
        c.grid.height,
        c.grid.width,
        c.grid.states,
        c.grid.observations,
        c.autoencoder.latent,
        c.autoencoder.conv1_channels,
        c.autoencoder.conv2_channels,
        c.agent.hidden,
        c.agent.actions,
    ]
    .iter()
    .map(|&d| d as u32)
    .collect()
}

pub fn manifest(wb: &Workbench, ck: &Checkpoint) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "stgrid checkpoint v{VERSION}");
    let _ = writeln!(s, "iteration {}", wb.iteration());
    let _ = writeln!(s, "policy {}", wb.policy().flag());
    let _ = writeln!(s, "seed {}", wb.seed());
    let names = ["height", "width", "states", "observations", "latent", "conv1", "conv2", "q_hidden", "actions"];
    for (n, d) in names.iter().zip(&ck.dims) {
        let _ = writeln!(s, "dim {n} {d}");
    }
    for (tag, values) in &ck.sections {
        let _ = writeln!(s, "section {} {} f64", String::from_utf8_lossy(tag), values.len());
    }
    for seg in wb.net().layout().segments() {
        let _ = writeln!(s, "SYS0 {} offset {} len {}", seg.name, seg.offset, seg.len);
    }
    s
}

/// Writes `<dir>/checkpoint_<n>.{bin,manifest.txt,resume.json}` and returns the `.bin` path.
pub fn save(wb: &Workbench, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let stem = dir.join(format!("checkpoint_{}", wb.iteration()));
    let ck = Checkpoint {
        dims: dims_of(wb),
        sections: vec![
            (TAG_SYS, wb.net().values.clone()),
            (TAG_Q_ONLINE, wb.qnet().online.clone()),
            (TAG_Q_TARGET, wb.qnet().target.clone()),
        ],
    };
    let bin = stem.with_extension("bin");
    fs::write(&bin, ck.encode())?;
    fs::write(stem.with_extension("manifest.txt"), manifest(wb, &ck))?;
    let resume = ResumeFile {
        policy: wb.policy(),
        seed: wb.seed(),
        state: wb.snapshot(),
    };
    fs::write(stem.with_extension("resume.json"), serde_json::to_vec(&resume)?)?;
    Ok(bin)
}

/// Rebuilds a workbench from a `.bin` path and its `.resume.json` sibling.
pub fn load(config: &crate::config::RunConfig, bin: &Path) -> Result<Workbench> {
    let ck = Checkpoint::decode(&fs::read(bin)?)?;
    let resume: ResumeFile = serde_json::from_slice(&fs::read(bin.with_extension("resume.json"))?)?;
    let wb = Workbench::restore(
        config,
        resume.policy,
        resume.seed,
        resume.state,
        ck.section(TAG_SYS)?.to_vec(),
        ck.section(TAG_Q_ONLINE)?.to_vec(),
        ck.section(TAG_Q_TARGET)?.to_vec(),
    )?;
    if dims_of(&wb) != ck.dims {
        return Err(Error::Checkpoint("checkpoint dims do not match the configuration".into()));
    }
    Ok(wb)
}
