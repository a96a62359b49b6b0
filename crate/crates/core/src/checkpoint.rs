//! Single-file checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "HDYNCKPT"
//! version  u32
//! count    u32      number of sections
//! section  u16 name length, name (UTF-8), u64 payload length, payload
//! ...
//! crc32    u32      over every preceding byte
//! ```
//!
//! A continual run is stored as the sections `config` (TOML text),
//! `progress`, and when present `hypernet`, `agent`, `buffers` and `rng`.
//! Binary payloads use bincode's default encoding, so a [`ParamVector`] is a
//! u64 length followed by little-endian f64 values.
//!
//! [`ParamVector`]: crate::diffnet::ParamVector

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::dyna::{BufferSet, ContinualRun, RunParts, RunProgress, StageRngs};
use crate::error::{Error, Result};
use crate::hyperworld::Hypernet;
use crate::sac::Agent;

pub const MAGIC: [u8; 8] = *b"HDYNCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Container {
    sections: Vec<(String, Vec<u8>)>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a section; names must be unique.
    pub fn push(&mut self, name: &str, payload: Vec<u8>) -> Result<()> {
        if self.get(name).is_some() {
            return Err(Error::contract(format!(
                "duplicate checkpoint section {name:?}"
            )));
        }
        if name.len() > u16::MAX as usize {
            return Err(Error::contract("checkpoint section name too long"));
        }
        self.sections.push((name.to_string(), payload));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, p)| p.as_slice())
    }

    pub fn sections(&self) -> impl Iterator<Item = (&str, usize)> {
        self.sections.iter().map(|(n, p)| (n.as_str(), p.len()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (name, payload) in &self.sections {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(payload);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |what: &str| Error::CorruptCheckpoint(what.to_string());
        if bytes.len() < MAGIC.len() + 12 {
            return Err(corrupt("file too short"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        if crc32fast::hash(body) != stored {
            return Err(corrupt("checksum mismatch"));
        }
        if body[..8] != MAGIC {
            return Err(corrupt("bad magic header"));
        }
        let mut r = Reader { buf: &body[8..] };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: VERSION,
            });
        }
        let count = r.u32()?;
        let mut c = Container::new();
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| corrupt("section name is not UTF-8"))?;
            let len = usize::try_from(r.u64()?).map_err(|_| corrupt("section too large"))?;
            let payload = r.take(len)?.to_vec();
            c.push(name, payload)
                .map_err(|_| corrupt("duplicate section"))?;
        }
        if !r.buf.is_empty() {
            return Err(corrupt("trailing bytes after the last section"));
        }
        Ok(c)
    }

    /// Writes via a temporary file and rename so a crash never leaves a
    /// half-written checkpoint under `path`.
    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.buf.len() {
            return Err(Error::CorruptCheckpoint(
                "section runs past the end of the file".into(),
            ));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn encode<T: Serialize>(value: &T) -> Vec<u8> {
    bincode::serialize(value).expect("in-memory serialization cannot fail")
}

fn decode<T: DeserializeOwned>(c: &Container, name: &str) -> Result<Option<T>> {
    c.get(name)
        .map(|bytes| {
            bincode::deserialize(bytes)
                .map_err(|e| Error::CorruptCheckpoint(format!("section {name:?}: {e}")))
        })
        .transpose()
}

fn required<T: DeserializeOwned>(c: &Container, name: &str) -> Result<T> {
    decode(c, name)?.ok_or_else(|| Error::CorruptCheckpoint(format!("missing section {name:?}")))
}

pub fn encode_run(run: &ContinualRun) -> Result<Container> {
    let parts = run.to_parts();
    let mut c = Container::new();
    c.push("config", parts.config.to_toml().into_bytes())?;
    c.push("progress", encode(&parts.progress))?;
    if let Some(h) = &parts.hypernet {
        c.push("hypernet", encode(h))?;
    }
    if let Some(a) = &parts.agent {
        c.push("agent", encode(a))?;
    }
    if let Some(b) = &parts.buffers {
        c.push("buffers", encode(b))?;
    }
    if let Some(r) = &parts.rngs {
        c.push("rng", encode(r))?;
    }
    Ok(c)
}

pub fn decode_run(c: &Container) -> Result<ContinualRun> {
    let text = c
        .get("config")
        .ok_or_else(|| Error::CorruptCheckpoint("missing section \"config\"".into()))?;
    let text = std::str::from_utf8(text)
        .map_err(|_| Error::CorruptCheckpoint("config is not UTF-8".into()))?;
    let config = ExperimentConfig::parse(text)?;
    let progress: RunProgress = required(c, "progress")?;
    let hypernet: Option<Hypernet> = decode(c, "hypernet")?;
    let agent: Option<Agent> = decode(c, "agent")?;
    let buffers: Option<BufferSet> = decode(c, "buffers")?;
    let rngs: Option<StageRngs> = decode(c, "rng")?;
    ContinualRun::from_parts(RunParts {
        config,
        progress,
        hypernet,
        agent,
        buffers,
        rngs,
    })
}

pub fn save(path: &Path, run: &ContinualRun) -> Result<()> {
    encode_run(run)?.write(path)
}

pub fn load(path: &Path) -> Result<ContinualRun> {
    decode_run(&Container::read(path)?)
}

/// Human-readable description of a checkpoint.
pub fn inspect(path: &Path) -> Result<String> {
    let c = Container::read(path)?;
    let run = decode_run(&c)?;
    let mut out = format!("checkpoint {} (format version {VERSION})\n", path.display());
    for (name, len) in c.sections() {
        out.push_str(&format!("  section {name:<9} {len} bytes\n"));
    }
    out.push_str(&format!(
        "variant: {}\nscenario: {}\n",
        run.variant(),
        run.scenario()
    ));
    out.push_str(&format!("master_seed: {}\n", run.config().master_seed));
    for r in run.reports() {
        let last = r
            .episode_returns
            .last()
            .map(|x| format!("{x:.3}"))
            .unwrap_or_else(|| "-".into());
        out.push_str(&format!(
            "task {}: {} episodes complete, last return {last}{}\n",
            r.task_id,
            r.episodes(),
            if r.halted.is_some() { " (halted)" } else { "" }
        ));
    }
    if let Some(cur) = run.current() {
        out.push_str(&format!(
            "task {} in progress: {} episodes complete, {} real transitions stored\n",
            cur.task().id(),
            cur.report().episodes(),
            cur.buffers().m_alpha.len()
        ));
    }
    let ids = run.snapshot().task_ids();
    out.push_str(&format!("snapshot tasks: {ids:?}\n"));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new();
        c.push("alpha", vec![1, 2, 3]).unwrap();
        c.push("empty", Vec::new()).unwrap();
        c
    }

    #[test]
    fn container_round_trip() {
        let c = sample();
        let back = Container::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.get("alpha"), Some(&[1u8, 2, 3][..]));
        assert!(back.get("missing").is_none());
    }

    #[test]
    fn truncation_and_bit_flips_are_detected() {
        let bytes = sample().to_bytes();
        for cut in [0, 5, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                Container::from_bytes(&bytes[..cut]),
                Err(Error::CorruptCheckpoint(_))
            ));
        }
        let mut flipped = bytes.clone();
        flipped[14] ^= 0x40;
        assert!(matches!(
            Container::from_bytes(&flipped),
            Err(Error::CorruptCheckpoint(_))
        ));
    }

    #[test]
    fn unknown_version_is_reported() {
        let mut bytes = sample().to_bytes();
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        let n = bytes.len();
        let crc = crc32fast::hash(&bytes[..n - 4]);
        bytes[n - 4..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(
            Container::from_bytes(&bytes),
            Err(Error::CheckpointVersion {
                found: 7,
                expected: VERSION
            })
        ));
    }

    #[test]
    fn duplicate_sections_rejected() {
        let mut c = sample();
        assert!(c.push("alpha", vec![]).is_err());
    }
}
