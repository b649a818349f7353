//! Experience replay: a ring buffer of transitions with a seedable uniform
//! sampler, plus a length-prefixed binary snapshot format.
//!
//! Snapshot layout (little-endian):
//!
//! ```text
//! b"TNRB" | version: u16 | state_dim: u32 | capacity: u64 | count: u64
//! count x ( len: u32 | s: [f64; dim] | a: [f64; 2] | r: f64 | s_next: [f64; dim] | done: u8 )
//! ```

use std::collections::VecDeque;
use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::td3::state::{Action, StateVector};

const MAGIC: &[u8; 4] = b"TNRB";
const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: StateVector,
    pub a: Action,
    pub r: f64,
    pub s_next: StateVector,
    pub done: bool,
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, items: VecDeque::with_capacity(capacity.min(1 << 16)) }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Uniform sample with replacement; `None` until `batch_size` items exist.
    pub fn sample<R: Rng>(&self, batch_size: usize, rng: &mut R) -> Option<Vec<&Transition>> {
        if batch_size == 0 || self.items.len() < batch_size {
            return None;
        }
        Some((0..batch_size).map(|_| &self.items[rng.gen_range(0..self.items.len())]).collect())
    }

    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        let dim = self.items.front().map_or(0, |t| t.s.dim());
        w.write_all(MAGIC)?;
        w.write_u16::<LittleEndian>(VERSION)?;
        w.write_u32::<LittleEndian>(dim as u32)?;
        w.write_u64::<LittleEndian>(self.capacity as u64)?;
        w.write_u64::<LittleEndian>(self.items.len() as u64)?;
        let record_len = (8 * (2 * dim + 3) + 1) as u32;
        for t in &self.items {
            if t.s.dim() != dim || t.s_next.dim() != dim {
                return Err(Error::Shape { expected: dim, got: t.s.dim().max(t.s_next.dim()) });
            }
            w.write_u32::<LittleEndian>(record_len)?;
            for v in t.s.to_vec() {
                w.write_f64::<LittleEndian>(v)?;
            }
            w.write_f64::<LittleEndian>(t.a.linear)?;
            w.write_f64::<LittleEndian>(t.a.angular)?;
            w.write_f64::<LittleEndian>(t.r)?;
            for v in t.s_next.to_vec() {
                w.write_f64::<LittleEndian>(v)?;
            }
            w.write_u8(t.done as u8)?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Self> {
        let corrupt = |what: &str| Error::Validation(format!("replay snapshot: {what}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(corrupt("bad magic"));
        }
        if r.read_u16::<LittleEndian>()? != VERSION {
            return Err(corrupt("unsupported version"));
        }
        let dim = r.read_u32::<LittleEndian>()? as usize;
        let capacity = r.read_u64::<LittleEndian>()? as usize;
        let count = r.read_u64::<LittleEndian>()? as usize;
        if capacity == 0 || count > capacity {
            return Err(corrupt("count exceeds capacity"));
        }
        let expected_len = 8 * (2 * dim + 3) + 1;
        let mut buf = ReplayBuffer::new(capacity);
        let read_vec = |r: &mut R, n: usize| -> Result<Vec<f64>> {
            (0..n).map(|_| Ok(r.read_f64::<LittleEndian>()?)).collect()
        };
        for _ in 0..count {
            if r.read_u32::<LittleEndian>()? as usize != expected_len {
                return Err(corrupt("record length mismatch"));
            }
            let s = StateVector::from_slice(&read_vec(&mut r, dim)?)?;
            let a = Action { linear: r.read_f64::<LittleEndian>()?, angular: r.read_f64::<LittleEndian>()? };
            let reward = r.read_f64::<LittleEndian>()?;
            let s_next = StateVector::from_slice(&read_vec(&mut r, dim)?)?;
            let done = match r.read_u8()? {
                0 => false,
                1 => true,
                _ => return Err(corrupt("done flag must be 0 or 1")),
            };
            buf.push(Transition { s, a, r: reward, s_next, done });
        }
        Ok(buf)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_snapshot(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_snapshot(std::io::BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn transition(i: usize) -> Transition {
        let s = StateVector { lidar_bins: vec![i as f64, 0.5], goal_dist: 0.1, goal_heading: -0.2, prev_v: 0.3, prev_w: 0.4 };
        Transition { s: s.clone(), a: Action::new(0.1, -0.1), r: i as f64 * 0.5, s_next: s, done: i.is_multiple_of(3) }
    }

    #[test]
    fn sampling_waits_for_batch() {
        let mut b = ReplayBuffer::new(10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        b.push(transition(0));
        assert!(b.sample(2, &mut rng).is_none());
        b.push(transition(1));
        assert_eq!(b.sample(2, &mut rng).unwrap().len(), 2);
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let mut b = ReplayBuffer::new(100);
        (0..50).for_each(|i| b.push(transition(i)));
        let pick = |seed| -> Vec<f64> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            b.sample(8, &mut rng).unwrap().iter().map(|t| t.r).collect()
        };
        assert_eq!(pick(9), pick(9));
    }

    #[test]
    fn snapshot_round_trip() {
        let mut b = ReplayBuffer::new(5);
        (0..7).for_each(|i| b.push(transition(i)));
        let mut bytes = Vec::new();
        b.write_snapshot(&mut bytes).unwrap();
        let back = ReplayBuffer::read_snapshot(bytes.as_slice()).unwrap();
        assert_eq!(back.capacity(), 5);
        assert!(back.iter().eq(b.iter()));

        bytes[0] = b'X';
        assert!(ReplayBuffer::read_snapshot(bytes.as_slice()).is_err());
    }

    #[test]
    fn truncated_snapshot_rejected() {
        let mut b = ReplayBuffer::new(5);
        (0..3).for_each(|i| b.push(transition(i)));
        let mut bytes = Vec::new();
        b.write_snapshot(&mut bytes).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(ReplayBuffer::read_snapshot(bytes.as_slice()).is_err());
    }

    proptest! {
        #[test]
        fn keeps_last_capacity_items(cap in 1usize..20, extra in 0usize..30) {
            let mut b = ReplayBuffer::new(cap);
            let n = cap + extra;
            (0..n).for_each(|i| b.push(transition(i)));
            prop_assert_eq!(b.len(), cap);
            let kept: Vec<f64> = b.iter().map(|t| t.r).collect();
            let want: Vec<f64> = (n - cap..n).map(|i| i as f64 * 0.5).collect();
            prop_assert_eq!(kept, want);
        }
    }
}
