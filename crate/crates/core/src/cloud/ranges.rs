use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Inclusive page range `[first, last]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PageRange {
    pub first: u32,
    pub last: u32,
}

impl PageRange {
    pub fn new(first: u32, last: u32) -> Self {
        debug_assert!(first <= last);
        Self { first, last }
    }

    pub fn len(&self) -> u64 {
        (self.last - self.first) as u64 + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn iter(&self) -> impl Iterator<Item = u32> {
        self.first..=self.last
    }
}

impl fmt::Display for PageRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.first, self.last)
    }
}

impl Serialize for PageRange {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.first, self.last].serialize(s)
    }
}

impl<'de> Deserialize<'de> for PageRange {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [first, last] = <[u32; 2]>::deserialize(d)?;
        if first > last {
            return Err(serde::de::Error::custom("range start after end"));
        }
        Ok(PageRange { first, last })
    }
}

/// Set of page numbers stored as disjoint, non-adjacent inclusive ranges.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RangeSet {
    // start -> end (inclusive)
    ranges: BTreeMap<u32, u32>,
}

impl RangeSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, p: u32) -> bool {
        self.ranges
            .range(..=p)
            .next_back()
            .is_some_and(|(_, end)| *end >= p)
    }

    /// Returns true if `p` was not present.
    pub fn insert(&mut self, p: u32) -> bool {
        if self.contains(p) {
            return false;
        }
        self.insert_range(p, p);
        true
    }

    pub fn insert_range(&mut self, first: u32, last: u32) {
        debug_assert!(first <= last);
        let mut lo = first;
        let mut hi = last;
        // Absorb a predecessor that overlaps or touches.
        if let Some((&s, &e)) = self.ranges.range(..=first).next_back() {
            if e as u64 + 1 >= first as u64 {
                lo = s;
                hi = hi.max(e);
            }
        }
        // Absorb successors that start inside or right after.
        let upper = hi.saturating_add(1);
        let doomed: Vec<u32> = self.ranges.range(lo..=upper).map(|(s, _)| *s).collect();
        for s in doomed {
            let e = self.ranges.remove(&s).unwrap();
            hi = hi.max(e);
        }
        self.ranges.insert(lo, hi);
    }

    pub fn extend(&mut self, other: &RangeSet) {
        for r in other.ranges() {
            self.insert_range(r.first, r.last);
        }
    }

    pub fn union(&self, other: &RangeSet) -> RangeSet {
        let mut out = self.clone();
        out.extend(other);
        out
    }

    /// Pages in `self` but not in `other`.
    pub fn difference(&self, other: &RangeSet) -> RangeSet {
        RangeSet::from_ranges(self.ranges().flat_map(|r| other.gaps(r.first, r.last)))
    }

    /// The part of the set at or below `max`.
    pub fn truncated(&self, max: u32) -> RangeSet {
        RangeSet::from_ranges(
            self.ranges()
                .filter(|r| r.first <= max)
                .map(|r| PageRange::new(r.first, r.last.min(max))),
        )
    }

    pub fn first(&self) -> Option<u32> {
        self.ranges.keys().next().copied()
    }

    pub fn ranges(&self) -> impl Iterator<Item = PageRange> + '_ {
        self.ranges.iter().map(|(s, e)| PageRange::new(*s, *e))
    }

    pub fn len(&self) -> u64 {
        self.ranges().map(|r| r.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn intersects(&self, other: &RangeSet) -> bool {
        other
            .ranges()
            .any(|r| self.gaps(r.first, r.last) != vec![r])
    }

    /// Ascending maximal ranges of `[lo, hi]` not in the set.
    pub fn gaps(&self, lo: u32, hi: u32) -> Vec<PageRange> {
        let mut out = Vec::new();
        if lo > hi {
            return out;
        }
        let mut cursor = lo as u64;
        let start_key = self
            .ranges
            .range(..=lo)
            .next_back()
            .map(|(s, _)| *s)
            .unwrap_or(lo);
        for (&s, &e) in self.ranges.range(start_key..=hi) {
            if (e as u64) < cursor {
                continue;
            }
            if (s as u64) > cursor {
                out.push(PageRange::new(cursor as u32, s - 1));
            }
            cursor = e as u64 + 1;
            if cursor > hi as u64 {
                break;
            }
        }
        if cursor <= hi as u64 {
            out.push(PageRange::new(cursor as u32, hi));
        }
        out
    }

    pub fn from_ranges(ranges: impl IntoIterator<Item = PageRange>) -> Self {
        let mut s = Self::new();
        for r in ranges {
            s.insert_range(r.first, r.last);
        }
        s
    }
}

impl FromIterator<u32> for RangeSet {
    fn from_iter<I: IntoIterator<Item = u32>>(iter: I) -> Self {
        let mut s = Self::new();
        for p in iter {
            s.insert(p);
        }
        s
    }
}

impl Serialize for RangeSet {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.ranges())
    }
}

impl<'de> Deserialize<'de> for RangeSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(RangeSet::from_ranges(Vec::<PageRange>::deserialize(d)?))
    }
}
