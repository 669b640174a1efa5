//! Binary replay-dataset archive.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic            8 bytes  "VENTRL01"
//! reward_mode      u8       0 = terminal_only, 1 = shaped
//! state_dim        u32
//! n_episodes       u64
//!   id_len u32, id utf-8, start u64, len u64
//! n_transitions    u64
//!   state f64×dim, action u16, reward f64, terminal u8,
//!   has_next u8, [next_state f64×dim], episode u64, step_index u32
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{EpisodeSpan, ReplayDataset, RewardMode, Transition};
use crate::mdp::{Action, StateVector};
use crate::{Error, Result};

pub const DATASET_MAGIC: &[u8; 8] = b"VENTRL01";

pub fn save_dataset(ds: &ReplayDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_dataset(ds, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<ReplayDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    read_dataset(&mut r).map_err(|e| match e {
        ReadError::Io(e) => Error::io(path, e),
        ReadError::Format(e) => e,
    })
}

fn write_dataset<W: Write>(ds: &ReplayDataset, w: &mut W) -> std::io::Result<()> {
    w.write_all(DATASET_MAGIC)?;
    w.write_u8(match ds.reward_mode {
        RewardMode::TerminalOnly => 0,
        RewardMode::Shaped => 1,
    })?;
    let dim = ds.state_dim().unwrap_or(0);
    w.write_u32::<LittleEndian>(dim as u32)?;
    w.write_u64::<LittleEndian>(ds.episodes.len() as u64)?;
    for span in &ds.episodes {
        w.write_u32::<LittleEndian>(span.id.len() as u32)?;
        w.write_all(span.id.as_bytes())?;
        w.write_u64::<LittleEndian>(span.start as u64)?;
        w.write_u64::<LittleEndian>(span.len as u64)?;
    }
    w.write_u64::<LittleEndian>(ds.transitions.len() as u64)?;
    for t in &ds.transitions {
        for &v in t.state.as_slice() {
            w.write_f64::<LittleEndian>(v)?;
        }
        w.write_u16::<LittleEndian>(t.action.flat() as u16)?;
        w.write_f64::<LittleEndian>(t.reward)?;
        w.write_u8(t.terminal as u8)?;
        match &t.next_state {
            Some(s) => {
                w.write_u8(1)?;
                for &v in s.as_slice() {
                    w.write_f64::<LittleEndian>(v)?;
                }
            }
            None => w.write_u8(0)?,
        }
        w.write_u64::<LittleEndian>(t.episode as u64)?;
        w.write_u32::<LittleEndian>(t.step_index as u32)?;
    }
    Ok(())
}

enum ReadError {
    Io(std::io::Error),
    Format(Error),
}

impl From<std::io::Error> for ReadError {
    fn from(e: std::io::Error) -> Self {
        ReadError::Io(e)
    }
}

impl From<Error> for ReadError {
    fn from(e: Error) -> Self {
        ReadError::Format(e)
    }
}

fn read_vec<R: Read>(r: &mut R, dim: usize) -> std::io::Result<Vec<f64>> {
    let mut v = vec![0.0; dim];
    r.read_f64_into::<LittleEndian>(&mut v)?;
    Ok(v)
}

fn read_dataset<R: Read>(r: &mut R) -> Result<ReplayDataset, ReadError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        let found = String::from_utf8_lossy(&magic).into_owned();
        if magic.starts_with(b"VENTRL") {
            return Err(Error::Version {
                found,
                expected: String::from_utf8_lossy(DATASET_MAGIC).into_owned(),
            }
            .into());
        }
        return Err(Error::Schema(format!("not a replay dataset (magic {found:?})")).into());
    }
    let reward_mode = match r.read_u8()? {
        0 => RewardMode::TerminalOnly,
        1 => RewardMode::Shaped,
        other => return Err(Error::Schema(format!("unknown reward mode tag {other}")).into()),
    };
    let dim = r.read_u32::<LittleEndian>()? as usize;
    let n_episodes = r.read_u64::<LittleEndian>()? as usize;
    let mut episodes = Vec::with_capacity(n_episodes.min(1 << 20));
    for _ in 0..n_episodes {
        let id_len = r.read_u32::<LittleEndian>()? as usize;
        let mut id = vec![0u8; id_len];
        r.read_exact(&mut id)?;
        let id = String::from_utf8(id)
            .map_err(|_| Error::Schema("episode id is not valid UTF-8".into()))?;
        let start = r.read_u64::<LittleEndian>()? as usize;
        let len = r.read_u64::<LittleEndian>()? as usize;
        episodes.push(EpisodeSpan { id, start, len });
    }
    let n = r.read_u64::<LittleEndian>()? as usize;
    let mut transitions = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        let state = StateVector(read_vec(r, dim)?);
        let action = Action::from_flat(r.read_u16::<LittleEndian>()? as usize)?;
        let reward = r.read_f64::<LittleEndian>()?;
        let terminal = r.read_u8()? != 0;
        let next_state = match r.read_u8()? {
            0 => None,
            _ => Some(StateVector(read_vec(r, dim)?)),
        };
        let episode = r.read_u64::<LittleEndian>()? as usize;
        let step_index = r.read_u32::<LittleEndian>()? as usize;
        transitions.push(Transition {
            state,
            action,
            reward,
            next_state,
            terminal,
            episode,
            step_index,
        });
    }
    Ok(ReplayDataset::new(transitions, episodes, reward_mode)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_dataset_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.ventrl");
        let ds = ReplayDataset::empty(RewardMode::Shaped);
        save_dataset(&ds, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), ds);
    }

    #[test]
    fn version_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("old.ventrl");
        let ds = ReplayDataset::empty(RewardMode::TerminalOnly);
        save_dataset(&ds, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[7] = b'0';
        bytes[6] = b'9';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Version { .. })));

        std::fs::write(&path, b"NOTADATASET").unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Schema(_))));
    }
}
