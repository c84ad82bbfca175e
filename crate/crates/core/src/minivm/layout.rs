use std::sync::Arc;

/// Default size of VM data memory.
pub const DEFAULT_MEM_SIZE: u32 = 0x1_0000;

/// Default per-execution step budget.
pub const DEFAULT_STEP_BUDGET: u64 = 1_000_000;

/// Fixed data-memory map.
///
/// ```text
/// [0, null_guard)            unmapped, any access crashes
/// [null_guard, heap_start)   globals, unchecked
/// [heap_start, heap_end)     heap, shadowed
/// [heap_end, mem_size)       stack, r7 starts at mem_size
/// ```
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MemoryLayout {
    pub mem_size: u32,
    pub null_guard: u32,
    pub heap_start: u32,
    pub heap_end: u32,
}

impl Default for MemoryLayout {
    fn default() -> Self {
        MemoryLayout {
            mem_size: DEFAULT_MEM_SIZE,
            null_guard: 0x100,
            heap_start: 0x1000,
            heap_end: 0xC000,
        }
    }
}

impl MemoryLayout {
    /// Layout for a custom memory size; the top 16 KiB stay reserved for the
    /// stack. Sizes below 32 KiB are rounded up.
    pub fn with_mem_size(mem_size: u32) -> Self {
        let mem_size = mem_size.max(0x8000);
        MemoryLayout {
            mem_size,
            heap_end: mem_size - 0x4000,
            ..MemoryLayout::default()
        }
    }

    pub fn is_heap(&self, addr: u32) -> bool {
        addr >= self.heap_start && addr < self.heap_end
    }

    pub fn stack_top(&self) -> u32 {
        self.mem_size
    }
}

const PAGE_SHIFT: u32 = 12;
const PAGE_SIZE: usize = 1 << PAGE_SHIFT;

/// Copy-on-write paged byte array.
///
/// Untouched pages are implicit and read as `fill`, so fresh instances and
/// clones (snapshots, forked symbolic paths) are cheap.
#[derive(Clone, Debug)]
pub struct PagedBytes {
    pages: Vec<Option<Arc<[u8; PAGE_SIZE]>>>,
    len: u32,
    fill: u8,
}

impl PagedBytes {
    pub fn new(len: u32, fill: u8) -> Self {
        let n = (len as usize).div_ceil(PAGE_SIZE);
        PagedBytes {
            pages: vec![None; n],
            len,
            fill,
        }
    }

    pub fn len(&self) -> u32 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, addr: u32) -> u8 {
        debug_assert!(addr < self.len);
        match &self.pages[(addr >> PAGE_SHIFT) as usize] {
            Some(page) => page[(addr as usize) & (PAGE_SIZE - 1)],
            None => self.fill,
        }
    }

    #[inline]
    pub fn set(&mut self, addr: u32, value: u8) {
        debug_assert!(addr < self.len);
        let fill = self.fill;
        let slot = &mut self.pages[(addr >> PAGE_SHIFT) as usize];
        if slot.is_none() && value == fill {
            return;
        }
        let page = slot.get_or_insert_with(|| Arc::new([fill; PAGE_SIZE]));
        Arc::make_mut(page)[(addr as usize) & (PAGE_SIZE - 1)] = value;
    }
}

impl PartialEq for PagedBytes {
    fn eq(&self, other: &Self) -> bool {
        if self.len != other.len {
            return false;
        }
        let blank_a = [self.fill; PAGE_SIZE];
        let blank_b = [other.fill; PAGE_SIZE];
        self.pages.iter().zip(&other.pages).all(|(a, b)| {
            let a: &[u8; PAGE_SIZE] = a.as_deref().unwrap_or(&blank_a);
            let b: &[u8; PAGE_SIZE] = b.as_deref().unwrap_or(&blank_b);
            a == b
        })
    }
}

impl Eq for PagedBytes {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clone_is_copy_on_write() {
        let mut a = PagedBytes::new(0x3000, 0);
        a.set(0x1234, 7);
        let mut b = a.clone();
        b.set(0x1234, 9);
        assert_eq!(a.get(0x1234), 7);
        assert_eq!(b.get(0x1234), 9);
        assert_ne!(a, b);
        b.set(0x1234, 7);
        assert_eq!(a, b);
    }

    #[test]
    fn implicit_pages_compare_equal_to_filled_pages() {
        let a = PagedBytes::new(0x2000, 3);
        let mut b = PagedBytes::new(0x2000, 3);
        b.set(5, 1);
        b.set(5, 3);
        assert_eq!(a, b);
        assert_eq!(a.get(0x1fff), 3);
    }
}
