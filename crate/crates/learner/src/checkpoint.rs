//! Binary checkpoint of a [`PolicySet`].
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic  b"ENTSIMCK"
//! u32    format version (1)
//! u32    role count
//! per role:
//!   u8 name length, name bytes
//!   u32 actor count
//!   per actor: network, then u64 log-std count and that many f64
//!   critic network
//! network: u32 layer-size count, that many u64 sizes,
//!          u64 parameter count, that many f64
//! ```

use std::io::{Read, Write};
use std::path::Path;

use entsim_core::environment::Role;

use crate::error::{LearnerError, Result};
use crate::mlp::Mlp;
use crate::trainer::PolicySet;

const MAGIC: &[u8; 8] = b"ENTSIMCK";
const VERSION: u32 = 1;

fn put_net(out: &mut Vec<u8>, net: &Mlp) {
    out.extend((net.sizes().len() as u32).to_le_bytes());
    for &s in net.sizes() {
        out.extend((s as u64).to_le_bytes());
    }
    put_floats(out, &net.params);
}

fn put_floats(out: &mut Vec<u8>, v: &[f64]) {
    out.extend((v.len() as u64).to_le_bytes());
    for x in v {
        out.extend(x.to_le_bytes());
    }
}

pub fn to_bytes(set: &PolicySet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend(MAGIC);
    out.extend(VERSION.to_le_bytes());
    out.extend((Role::ALL.len() as u32).to_le_bytes());
    for (slot, role) in Role::ALL.iter().enumerate() {
        let name = role.name().as_bytes();
        out.push(name.len() as u8);
        out.extend(name);
        out.extend((set.actors[slot].len() as u32).to_le_bytes());
        for a in &set.actors[slot] {
            put_net(&mut out, &a.net);
            put_floats(&mut out, &a.log_std);
        }
        put_net(&mut out, &set.critics[slot]);
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| LearnerError::Checkpoint("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn floats(&mut self, what: &str, expected: usize) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        if n != expected {
            return Err(LearnerError::Checkpoint(format!("{what}: {n} values, expected {expected}")));
        }
        Ok(self.take(8 * n)?.chunks(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn net(&mut self, what: &str, expected: &Mlp) -> Result<Vec<f64>> {
        let count = self.u32()? as usize;
        let sizes = (0..count).map(|_| self.u64().map(|s| s as usize)).collect::<Result<Vec<_>>>()?;
        if sizes != expected.sizes() {
            return Err(LearnerError::Checkpoint(format!(
                "{what}: layer sizes {sizes:?} incompatible with {:?}",
                expected.sizes()
            )));
        }
        self.floats(what, expected.params.len())
    }
}

/// Overwrite the parameters of `set` from a checkpoint with matching shapes.
pub fn load_bytes(set: &mut PolicySet, bytes: &[u8]) -> Result<()> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(LearnerError::Checkpoint("not a checkpoint file".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(LearnerError::Checkpoint(format!("unsupported version {version}")));
    }
    if c.u32()? as usize != Role::ALL.len() {
        return Err(LearnerError::Checkpoint("role count mismatch".into()));
    }
    // Parse into a copy so a failed load leaves `set` untouched.
    let mut next = set.clone();
    for (slot, role) in Role::ALL.iter().enumerate() {
        let len = c.take(1)?[0] as usize;
        let name = c.take(len)?;
        if name != role.name().as_bytes() {
            return Err(LearnerError::Checkpoint(format!(
                "expected role {}, found {}",
                role.name(),
                String::from_utf8_lossy(name)
            )));
        }
        let count = c.u32()? as usize;
        if count != next.actors[slot].len() {
            return Err(LearnerError::Checkpoint(format!(
                "{} actors: {count} stored, {} expected",
                role.name(),
                next.actors[slot].len()
            )));
        }
        for (i, actor) in next.actors[slot].iter_mut().enumerate() {
            actor.net.params = c.net(&format!("{} actor {i}", role.name()), &actor.net)?;
            actor.log_std = c.floats(&format!("{} actor {i} log-std", role.name()), actor.log_std.len())?;
        }
        let critic = &mut next.critics[slot];
        critic.params = c.net(&format!("{} critic", role.name()), critic)?;
    }
    if c.pos != bytes.len() {
        return Err(LearnerError::Checkpoint("trailing bytes".into()));
    }
    *set = next;
    Ok(())
}

pub fn save(set: &PolicySet, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&to_bytes(set))?;
    Ok(())
}

pub fn load(set: &mut PolicySet, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    load_bytes(set, &bytes)
}
