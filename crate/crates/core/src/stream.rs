//! Time-tag records and streams.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CHANNEL_A: u8 = 0;
pub const CHANNEL_B: u8 = 1;
pub const CHANNEL_SYNC: u8 = 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StreamError {
    #[error("tag {index} is out of order (t = {t} ps follows a later tag)")]
    Unsorted { index: usize, t: u64 },
}

/// One detection event: channel and timestamp in picoseconds from acquisition start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimeTag {
    pub channel: u8,
    pub t: u64,
}

impl TimeTag {
    pub fn new(channel: u8, t: u64) -> Self {
        Self { channel, t }
    }

    #[inline]
    pub fn key(&self) -> (u64, u8) {
        (self.t, self.channel)
    }
}

/// Tags sorted by time, ties broken by channel.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TimeTagStream {
    tags: Vec<TimeTag>,
    duration_ps: u64,
    n_channels: u16,
}

fn check_sorted(tags: &[TimeTag]) -> Result<(), StreamError> {
    match tags.windows(2).position(|w| w[1].key() < w[0].key()) {
        Some(i) => Err(StreamError::Unsorted {
            index: i + 1,
            t: tags[i + 1].t,
        }),
        None => Ok(()),
    }
}

impl TimeTagStream {
    /// Wraps already-sorted tags. The channel count is inferred when `n_channels` is 0.
    pub fn new(tags: Vec<TimeTag>, duration_ps: u64, n_channels: u16) -> Result<Self, StreamError> {
        check_sorted(&tags)?;
        let inferred = tags.iter().map(|t| t.channel as u16 + 1).max().unwrap_or(0);
        Ok(Self {
            tags,
            duration_ps,
            n_channels: n_channels.max(inferred),
        })
    }

    pub fn empty(duration_ps: u64, n_channels: u16) -> Self {
        Self {
            tags: Vec::new(),
            duration_ps,
            n_channels,
        }
    }

    pub fn tags(&self) -> &[TimeTag] {
        &self.tags
    }

    pub fn into_tags(self) -> Vec<TimeTag> {
        self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn duration_ps(&self) -> u64 {
        self.duration_ps
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_ps as f64 * 1e-12
    }

    pub fn n_channels(&self) -> u16 {
        self.n_channels
    }

    /// Timestamps of a single channel, in order.
    pub fn channel_times(&self, channel: u8) -> Vec<u64> {
        self.tags.iter().filter(|t| t.channel == channel).map(|t| t.t).collect()
    }

    pub fn count(&self, channel: u8) -> usize {
        self.tags.iter().filter(|t| t.channel == channel).count()
    }

    /// Adds a constant offset to every timestamp and to the duration.
    pub fn shifted(&self, offset_ps: u64) -> Self {
        Self {
            tags: self
                .tags
                .iter()
                .map(|t| TimeTag::new(t.channel, t.t + offset_ps))
                .collect(),
            duration_ps: self.duration_ps + offset_ps,
            n_channels: self.n_channels,
        }
    }
}

/// Sorted merge of two streams. Equal `(t, channel)` keys keep `a` before `b`.
pub fn merge_streams(a: &TimeTagStream, b: &TimeTagStream) -> Result<TimeTagStream, StreamError> {
    check_sorted(&a.tags)?;
    check_sorted(&b.tags)?;
    let (x, y) = (&a.tags, &b.tags);
    let mut out = Vec::with_capacity(x.len() + y.len());
    let (mut i, mut j) = (0, 0);
    while i < x.len() && j < y.len() {
        if y[j].key() < x[i].key() {
            out.push(y[j]);
            j += 1;
        } else {
            out.push(x[i]);
            i += 1;
        }
    }
    out.extend_from_slice(&x[i..]);
    out.extend_from_slice(&y[j..]);
    Ok(TimeTagStream {
        tags: out,
        duration_ps: a.duration_ps.max(b.duration_ps),
        n_channels: a.n_channels.max(b.n_channels),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stream(tags: &[(u8, u64)]) -> TimeTagStream {
        let v = tags.iter().map(|&(c, t)| TimeTag::new(c, t)).collect();
        TimeTagStream::new(v, 1_000_000, 2).unwrap()
    }

    #[test]
    fn unsorted_rejected() {
        let v = vec![TimeTag::new(0, 10), TimeTag::new(0, 5)];
        assert_eq!(
            TimeTagStream::new(v, 100, 1),
            Err(StreamError::Unsorted { index: 1, t: 5 })
        );
        // Same time, channel out of order.
        let v = vec![TimeTag::new(1, 10), TimeTag::new(0, 10)];
        assert!(TimeTagStream::new(v, 100, 2).is_err());
    }

    #[test]
    fn merge_with_empty_is_identity() {
        let x = stream(&[(0, 1), (1, 4), (0, 9)]);
        let e = TimeTagStream::empty(0, 2);
        assert_eq!(merge_streams(&x, &e).unwrap().tags(), x.tags());
        assert_eq!(merge_streams(&e, &x).unwrap().tags(), x.tags());
    }

    #[test]
    fn ties_break_by_channel() {
        let x = stream(&[(1, 5)]);
        let y = stream(&[(0, 5)]);
        let m = merge_streams(&x, &y).unwrap();
        assert_eq!(m.tags(), &[TimeTag::new(0, 5), TimeTag::new(1, 5)]);
    }

    proptest! {
        #[test]
        fn merge_is_sorted_and_commutative(
            mut a in proptest::collection::vec((0u8..3, 0u64..1000), 0..50),
            mut b in proptest::collection::vec((0u8..3, 1000u64..2000), 0..50),
        ) {
            a.sort_by_key(|&(c, t)| (t, c));
            b.sort_by_key(|&(c, t)| (t, c));
            let (sa, sb) = (stream(&a), stream(&b));
            let ab = merge_streams(&sa, &sb).unwrap();
            let ba = merge_streams(&sb, &sa).unwrap();
            prop_assert_eq!(ab.len(), a.len() + b.len());
            prop_assert!(ab.tags().windows(2).all(|w| w[0].key() <= w[1].key()));
            prop_assert_eq!(ab.tags(), ba.tags());
        }
    }
}
