use std::collections::VecDeque;

use serde::Serialize;

use crate::regset::{RegSet, MAX_REGISTERS};

/// Two-queue allocator for cache banks (per warp) or warp rows (global).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AddressAllocationUnit {
    unused: VecDeque<usize>,
    occupied: VecDeque<usize>,
    capacity: usize,
}

impl AddressAllocationUnit {
    pub fn new(capacity: usize) -> Self {
        AddressAllocationUnit { unused: (0..capacity).collect(), occupied: VecDeque::new(), capacity }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn free_count(&self) -> usize {
        self.unused.len()
    }

    pub fn unused(&self) -> impl Iterator<Item = usize> + '_ {
        self.unused.iter().copied()
    }

    pub fn occupied(&self) -> impl Iterator<Item = usize> + '_ {
        self.occupied.iter().copied()
    }

    /// Head of the unused queue moves to the occupied queue.
    pub fn allocate(&mut self) -> Option<usize> {
        let id = self.unused.pop_front()?;
        self.occupied.push_back(id);
        Some(id)
    }

    /// Returns `false` when `id` was not allocated.
    pub fn release(&mut self, id: usize) -> bool {
        match self.occupied.iter().position(|&x| x == id) {
            Some(pos) => {
                self.occupied.remove(pos);
                self.unused.push_back(id);
                true
            }
            None => false,
        }
    }

    /// Sizes add up to the capacity and the queues are disjoint.
    pub fn is_conserved(&self) -> bool {
        if self.unused.len() + self.occupied.len() != self.capacity {
            return false;
        }
        let mut seen = vec![false; self.capacity];
        self.unused.iter().chain(&self.occupied).all(|&id| id < self.capacity && !std::mem::replace(&mut seen[id], true))
    }
}

/// Per-warp metadata kept next to the register cache.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WarpControlBlock {
    /// Cache bank of each architectural register, when cached.
    pub address_table: Vec<Option<usize>>,
    /// Row shared by all of this warp's registers in every cache bank.
    pub warp_offset: Option<usize>,
    /// Prefetch vector of the interval the warp is in.
    pub working_set: RegSet,
    pub liveness: RegSet,
    pub valid: RegSet,
    pub banks: AddressAllocationUnit,
}

impl WarpControlBlock {
    pub fn new(cache_banks: usize) -> Self {
        WarpControlBlock {
            address_table: vec![None; MAX_REGISTERS],
            warp_offset: None,
            working_set: RegSet::new(),
            liveness: RegSet::new(),
            valid: RegSet::new(),
            banks: AddressAllocationUnit::new(cache_banks),
        }
    }

    /// Gives `reg` a cache bank; `None` when every bank is taken.
    pub fn allocate(&mut self, reg: u16) -> Option<usize> {
        if self.valid.contains(reg) {
            return self.address_table[reg as usize];
        }
        let bank = self.banks.allocate()?;
        self.address_table[reg as usize] = Some(bank);
        self.valid.insert(reg);
        Some(bank)
    }

    pub fn evict(&mut self, reg: u16) {
        if let Some(bank) = self.address_table[reg as usize].take() {
            self.banks.release(bank);
        }
        self.valid.remove(reg);
    }

    pub fn evict_all(&mut self) {
        for r in self.valid.iter().collect::<Vec<_>>() {
            self.evict(r);
        }
    }

    /// No two valid registers share a cache bank.
    pub fn one_register_per_bank(&self) -> bool {
        let mut seen = vec![false; self.banks.capacity()];
        self.valid.iter().all(|r| match self.address_table[r as usize] {
            Some(b) => !std::mem::replace(&mut seen[b], true),
            None => false,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Line {
    warp: usize,
    reg: u16,
    dirty: bool,
    stamp: u64,
}

/// Conventional set-associative register cache keyed by (warp, register)
/// with LRU replacement, allocate-on-miss and write-back.
#[derive(Debug, Clone)]
pub struct RegisterCache {
    sets: Vec<Vec<Line>>,
    ways: usize,
    clock: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheAccess {
    pub hit: bool,
    /// A dirty line was evicted to make room.
    pub writeback: bool,
}

impl RegisterCache {
    pub fn new(entries: usize, ways: usize) -> Self {
        let ways = ways.max(1);
        let sets = (entries / ways).max(1);
        RegisterCache { sets: vec![Vec::with_capacity(ways); sets], ways, clock: 0 }
    }

    fn set_of(&self, warp: usize, reg: u16) -> usize {
        (warp + reg as usize) % self.sets.len()
    }

    pub fn access(&mut self, warp: usize, reg: u16, write: bool) -> CacheAccess {
        self.clock += 1;
        let stamp = self.clock;
        let ways = self.ways;
        let set_idx = self.set_of(warp, reg);
        let set = &mut self.sets[set_idx];
        if let Some(line) = set.iter_mut().find(|l| l.warp == warp && l.reg == reg) {
            line.stamp = stamp;
            line.dirty |= write;
            return CacheAccess { hit: true, writeback: false };
        }
        let mut writeback = false;
        if set.len() == ways {
            let victim = (0..set.len()).min_by_key(|&i| set[i].stamp).expect("full set is non-empty");
            writeback = set[victim].dirty;
            set.swap_remove(victim);
        }
        set.push(Line { warp, reg, dirty: write, stamp });
        CacheAccess { hit: false, writeback }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aau_round_trip() {
        let mut a = AddressAllocationUnit::new(4);
        let x = a.allocate().unwrap();
        let y = a.allocate().unwrap();
        assert_eq!((x, y), (0, 1));
        assert!(a.is_conserved());
        assert!(a.release(x));
        assert!(!a.release(x));
        assert!(a.release(y));
        let mut u: Vec<_> = a.unused().collect();
        u.sort_unstable();
        assert_eq!(u, vec![0, 1, 2, 3]);
        assert!(a.is_conserved());
    }

    #[test]
    fn aau_exhausts() {
        let mut a = AddressAllocationUnit::new(2);
        assert!(a.allocate().is_some());
        assert!(a.allocate().is_some());
        assert_eq!(a.allocate(), None);
        assert!(a.is_conserved());
    }

    #[test]
    fn wcb_one_register_per_bank() {
        let mut w = WarpControlBlock::new(3);
        for r in [4, 9, 200] {
            w.allocate(r).unwrap();
        }
        assert_eq!(w.allocate(7), None);
        assert_eq!(w.allocate(9), w.address_table[9]);
        assert!(w.one_register_per_bank());
        w.evict(9);
        assert!(w.allocate(7).is_some());
        w.evict_all();
        assert!(w.valid.is_empty());
        assert_eq!(w.banks.free_count(), 3);
    }

    #[test]
    fn lru_replacement() {
        let mut c = RegisterCache::new(2, 2);
        assert!(!c.access(0, 0, true).hit);
        assert!(!c.access(0, 1, false).hit);
        assert!(c.access(0, 0, false).hit);
        let a = c.access(0, 2, false);
        assert!(!a.hit && !a.writeback);
        let b = c.access(0, 3, false);
        assert!(!b.hit && b.writeback);
    }
}
