//! Plain process memory for workloads running under the debugger backend.
//!
//! The image lives in an anonymous mapping followed by an inaccessible guard
//! page. Any access outside the image touches the guard page, so a corrupted
//! offset ends the process with a genuine SIGSEGV rather than a Rust panic.

use std::ptr::NonNull;

use super::memory::{Access, Fault, Memory};

pub struct NativeMemory {
    base: NonNull<u8>,
    len: usize,
    map_len: usize,
    page: usize,
}

impl NativeMemory {
    pub fn new(image: &[u8]) -> std::io::Result<Self> {
        // SAFETY: sysconf has no preconditions.
        let page = unsafe { libc::sysconf(libc::_SC_PAGESIZE) } as usize;
        let data_len = image.len().div_ceil(page).max(1) * page;
        let map_len = data_len + page;
        // SAFETY: fresh private anonymous mapping; checked for MAP_FAILED.
        let ptr = unsafe {
            libc::mmap(
                std::ptr::null_mut(),
                map_len,
                libc::PROT_READ | libc::PROT_WRITE,
                libc::MAP_PRIVATE | libc::MAP_ANONYMOUS,
                -1,
                0,
            )
        };
        if ptr == libc::MAP_FAILED {
            return Err(std::io::Error::last_os_error());
        }
        let base = ptr.cast::<u8>();
        // SAFETY: the guard page lies inside the mapping created above.
        if unsafe { libc::mprotect(base.add(data_len).cast(), page, libc::PROT_NONE) } != 0 {
            return Err(std::io::Error::last_os_error());
        }
        // SAFETY: image.len() <= data_len bytes are writable.
        unsafe { std::ptr::copy_nonoverlapping(image.as_ptr(), base, image.len()) };
        Ok(NativeMemory {
            base: NonNull::new(base).expect("mmap never returns null on success"),
            len: image.len(),
            map_len,
            page,
        })
    }

    pub fn base(&self) -> u64 {
        self.base.as_ptr() as u64
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn check(&self, addr: u64, n: usize) -> usize {
        match addr.checked_add(n as u64) {
            Some(end) if end <= self.len as u64 => addr as usize,
            _ => self.fault(),
        }
    }

    /// Reads the guard page; the kernel delivers SIGSEGV.
    fn fault(&self) -> ! {
        let guard = self.map_len - self.page;
        // SAFETY: the address is inside our own mapping; the read traps.
        unsafe {
            std::ptr::read_volatile(self.base.as_ptr().add(guard));
        }
        unreachable!("guard page read returned");
    }
}

impl Memory for NativeMemory {
    fn load(&mut self, addr: u64, buf: &mut [u8], _: Access) -> Result<(), Fault> {
        let at = self.check(addr, buf.len());
        // SAFETY: `check` proved [at, at + len) is inside the image.
        unsafe { std::ptr::copy_nonoverlapping(self.base.as_ptr().add(at), buf.as_mut_ptr(), buf.len()) };
        Ok(())
    }

    fn store(&mut self, addr: u64, data: &[u8]) -> Result<(), Fault> {
        let at = self.check(addr, data.len());
        // SAFETY: as in `load`.
        unsafe { std::ptr::copy_nonoverlapping(data.as_ptr(), self.base.as_ptr().add(at), data.len()) };
        Ok(())
    }
}

impl Drop for NativeMemory {
    fn drop(&mut self) {
        // SAFETY: unmapping exactly the mapping created in `new`.
        unsafe { libc::munmap(self.base.as_ptr().cast(), self.map_len) };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn in_bounds_access() {
        let mut m = NativeMemory::new(&[1, 2, 3, 4, 5]).unwrap();
        assert_eq!(m.read_u32(1).unwrap(), u32::from_le_bytes([2, 3, 4, 5]));
        m.store(0, &[9]).unwrap();
        assert_eq!(m.read_vec(0, 2).unwrap(), vec![9, 2]);
        assert_eq!(m.len(), 5);
    }
}
