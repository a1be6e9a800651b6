//! Bounded max-heap holding the `r` best neighbors seen so far.

use alloc::collections::BinaryHeap;
use alloc::vec::Vec;
use core::cmp::Ordering;

/// Distance types a [`NeighborSet`] can rank: float distances and the
/// 8-bit quantized distances produced by the table-lookup kernels.
pub trait Score: Copy + core::fmt::Debug {
    fn total_cmp(&self, other: &Self) -> Ordering;
}

impl Score for f32 {
    #[inline]
    fn total_cmp(&self, other: &Self) -> Ordering {
        f32::total_cmp(self, other)
    }
}

macro_rules! int_score {
    ($($t:ty),*) => {$(
        impl Score for $t {
            #[inline]
            fn total_cmp(&self, other: &Self) -> Ordering {
                self.cmp(other)
            }
        }
    )*};
}
int_score!(u8, u16, u32);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor<D = f32> {
    pub id: u32,
    pub distance: D,
}

#[derive(Debug, Clone, Copy)]
struct Entry<D>(D, u32);

impl<D: Score> PartialEq for Entry<D> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<D: Score> Eq for Entry<D> {}
impl<D: Score> PartialOrd for Entry<D> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<D: Score> Ord for Entry<D> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// The `capacity` smallest `(distance, id)` pairs added so far.
///
/// Pairs are ordered lexicographically, so among equal distances the
/// smaller id wins. The final content does not depend on insertion order.
#[derive(Debug, Clone)]
pub struct NeighborSet<D: Score = f32> {
    capacity: usize,
    heap: BinaryHeap<Entry<D>>,
}

impl<D: Score> NeighborSet<D> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "neighbor set capacity must be at least 1");
        Self {
            capacity,
            heap: BinaryHeap::with_capacity(capacity + 1),
        }
    }

    #[inline]
    pub fn capacity(&self) -> usize {
        self.capacity
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.heap.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    #[inline]
    pub fn is_full(&self) -> bool {
        self.heap.len() >= self.capacity
    }

    /// Distance of the current worst retained neighbor, once the set is full.
    #[inline]
    pub fn threshold(&self) -> Option<D> {
        if self.is_full() {
            self.heap.peek().map(|e| e.0)
        } else {
            None
        }
    }

    /// Offers a candidate. Returns whether it was retained.
    #[inline]
    pub fn add(&mut self, id: u32, distance: D) -> bool {
        let entry = Entry(distance, id);
        if self.heap.len() < self.capacity {
            self.heap.push(entry);
            return true;
        }
        let mut top = self.heap.peek_mut().expect("capacity >= 1");
        if entry < *top {
            *top = entry;
            true
        } else {
            false
        }
    }

    pub fn extend<I: IntoIterator<Item = Neighbor<D>>>(&mut self, items: I) {
        for n in items {
            self.add(n.id, n.distance);
        }
    }

    /// Neighbors in ascending `(distance, id)` order.
    pub fn into_sorted(self) -> Vec<Neighbor<D>> {
        self.heap
            .into_sorted_vec()
            .into_iter()
            .map(|Entry(distance, id)| Neighbor { id, distance })
            .collect()
    }

    pub fn to_sorted(&self) -> Vec<Neighbor<D>> {
        self.clone().into_sorted()
    }

    pub fn ids(&self) -> Vec<u32> {
        self.to_sorted().into_iter().map(|n| n.id).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn keeps_smallest_and_breaks_ties_by_id() {
        let mut s = NeighborSet::new(2);
        s.add(5, 1.0f32);
        s.add(2, 1.0);
        s.add(9, 0.5);
        s.add(1, 1.0);
        let out = s.into_sorted();
        assert_eq!(
            out,
            vec![
                Neighbor { id: 9, distance: 0.5 },
                Neighbor { id: 1, distance: 1.0 }
            ]
        );
    }

    #[test]
    fn threshold_only_when_full() {
        let mut s = NeighborSet::new(3);
        s.add(0, 3u8);
        s.add(1, 7u8);
        assert_eq!(s.threshold(), None);
        s.add(2, 5u8);
        assert_eq!(s.threshold(), Some(7));
    }

    proptest! {
        #[test]
        fn insertion_order_does_not_matter(
            items in proptest::collection::vec((0u32..50, 0u8..20), 1..80),
            r in 1usize..10,
            seed in any::<u64>(),
        ) {
            let mut a = NeighborSet::new(r);
            for &(id, d) in &items {
                a.add(id, d);
            }
            let mut shuffled = items.clone();
            // deterministic Fisher-Yates driven by the seed
            let mut state = seed | 1;
            for i in (1..shuffled.len()).rev() {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                let j = (state % (i as u64 + 1)) as usize;
                shuffled.swap(i, j);
            }
            let mut b = NeighborSet::new(r);
            for &(id, d) in &shuffled {
                b.add(id, d);
            }
            let mut oracle: Vec<(u8, u32)> = items.iter().map(|&(id, d)| (d, id)).collect();
            oracle.sort();
            oracle.truncate(r);
            let got: Vec<(u8, u32)> = a.into_sorted().into_iter().map(|n| (n.distance, n.id)).collect();
            prop_assert_eq!(&got, &oracle);
            let got_b: Vec<(u8, u32)> = b.into_sorted().into_iter().map(|n| (n.distance, n.id)).collect();
            prop_assert_eq!(got_b, oracle);
        }
    }
}
