//! Virtual-to-physical page mapping and page-table entry placement.

use std::collections::HashMap;

/// Base of the physical region holding synthesized page-table entries.
pub const PTE_REGION_BASE: u64 = 1 << 44;
/// Virtual-address bits resolved by each page-table level.
pub const BITS_PER_LEVEL: u32 = 9;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("physical memory exhausted after mapping {mapped} pages")]
pub struct FramesExhausted {
    pub mapped: u64,
}

/// First-touch page allocator. The i-th distinct virtual page gets frame
/// `permute(i)`, a keyed bijection of the frame-number space.
#[derive(Debug, Clone)]
pub struct VirtualMemory {
    page_size: u64,
    frame_bits: u32,
    keys: [(u64, u64); 3],
    next_index: u64,
    map: HashMap<u64, u64>,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl VirtualMemory {
    /// `capacity` and `page_size` are powers of two with `page_size <= capacity`.
    pub fn new(seed: u64, capacity: u64, page_size: u64) -> Self {
        assert!(capacity.is_power_of_two() && page_size.is_power_of_two() && page_size <= capacity);
        let mut state = seed;
        let mut key = || (splitmix64(&mut state) | 1, splitmix64(&mut state));
        VirtualMemory {
            page_size,
            frame_bits: (capacity / page_size).trailing_zeros(),
            keys: [key(), key(), key()],
            next_index: 0,
            map: HashMap::new(),
        }
    }

    pub fn page_size(&self) -> u64 {
        self.page_size
    }

    pub fn frame_count(&self) -> u64 {
        1 << self.frame_bits
    }

    pub fn mapped_pages(&self) -> u64 {
        self.map.len() as u64
    }

    fn permute(&self, i: u64) -> u64 {
        let bits = self.frame_bits;
        if bits == 0 {
            return 0;
        }
        let mask = if bits == 64 { u64::MAX } else { (1 << bits) - 1 };
        let shift = bits.div_ceil(2);
        let mut x = i;
        for &(mul, add) in &self.keys {
            x = x.wrapping_mul(mul).wrapping_add(add) & mask;
            x ^= x >> shift;
        }
        x
    }

    /// Frame number for a virtual page number, allocating on first touch.
    /// Frame 0 is never handed out so that physical address 0 stays unused.
    pub fn frame_of(&mut self, vpage: u64) -> Result<u64, FramesExhausted> {
        if let Some(&f) = self.map.get(&vpage) {
            return Ok(f);
        }
        loop {
            if self.next_index >= self.frame_count() {
                return Err(FramesExhausted {
                    mapped: self.mapped_pages(),
                });
            }
            let f = self.permute(self.next_index);
            self.next_index += 1;
            if f != 0 {
                self.map.insert(vpage, f);
                return Ok(f);
            }
        }
    }

    /// Physical byte address for a virtual byte address.
    pub fn translate(&mut self, vaddr: u64) -> Result<u64, FramesExhausted> {
        let frame = self.frame_of(vaddr / self.page_size)?;
        Ok(frame * self.page_size + vaddr % self.page_size)
    }
}

/// Physical address of the level-`level` entry (1 = root) for virtual page `vpage`
/// in a `levels`-deep table.
pub fn pte_address(vpage: u64, level: u32, levels: u32) -> u64 {
    debug_assert!((1..=levels).contains(&level));
    let prefix = vpage >> (BITS_PER_LEVEL * (levels - level));
    PTE_REGION_BASE + ((level as u64) << 40) + prefix * 8
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn mapping_is_stable_and_injective() {
        let mut vm = VirtualMemory::new(1, 1 << 32, 4096);
        let frames: Vec<u64> = (0..1000).map(|p| vm.frame_of(p * 7).unwrap()).collect();
        let distinct: HashSet<_> = frames.iter().collect();
        assert_eq!(distinct.len(), 1000);
        assert!(!frames.contains(&0));
        for (i, &f) in frames.iter().enumerate() {
            assert_eq!(vm.frame_of(i as u64 * 7).unwrap(), f);
        }
    }

    #[test]
    fn same_seed_same_mapping_different_seed_differs() {
        let run = |seed| {
            let mut vm = VirtualMemory::new(seed, 1 << 32, 4096);
            (0..100).map(|p| vm.frame_of(p).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(1), run(1));
        assert_ne!(run(1), run(2));
    }

    #[test]
    fn exhaustion_is_an_error() {
        let mut vm = VirtualMemory::new(3, 8 * 4096, 4096);
        for p in 0..7 {
            vm.frame_of(p).unwrap();
        }
        assert_eq!(vm.frame_of(99), Err(FramesExhausted { mapped: 7 }));
        // already-mapped pages still resolve
        assert!(vm.frame_of(3).is_ok());
    }

    #[test]
    fn permutation_covers_small_space() {
        let vm = VirtualMemory::new(42, 64 * 4096, 4096);
        let all: HashSet<u64> = (0..64).map(|i| vm.permute(i)).collect();
        assert_eq!(all.len(), 64);
    }

    #[test]
    fn translate_keeps_offset() {
        let mut vm = VirtualMemory::new(0, 1 << 30, 4096);
        let pa = vm.translate(0x5123).unwrap();
        assert_eq!(pa % 4096, 0x123);
        assert_eq!(vm.translate(0x5fff).unwrap(), pa - 0x123 + 0xfff);
    }

    #[test]
    fn neighbouring_pages_share_upper_pte_blocks() {
        let levels = 4;
        for level in 1..levels {
            assert_eq!(pte_address(0x1000, level, levels) / 64, pte_address(0x1001, level, levels) / 64);
        }
        assert_ne!(pte_address(0x1000, 4, 4), pte_address(0x1001, 4, 4));
        // eight leaf entries per 64-byte block
        assert_eq!(pte_address(0x1000, 4, 4) / 64, pte_address(0x1007, 4, 4) / 64);
        assert_ne!(pte_address(0x1000, 4, 4) / 64, pte_address(0x1008, 4, 4) / 64);
    }
}
