//! Allocator tuning for training workloads.
//!
//! Every simulation step allocates several `batch × hidden` buffers that are
//! freed after the backward pass. With glibc defaults, buffers above the
//! mmap threshold are mapped and unmapped each time and the heap top is
//! trimmed, so most of the run goes to page faults. Raising both thresholds
//! keeps that memory in the process.

#[cfg(all(target_os = "linux", target_env = "gnu"))]
pub fn retain_freed_memory() {
    const M_TRIM_THRESHOLD: libc::c_int = -1;
    const M_MMAP_THRESHOLD: libc::c_int = -3;
    // SAFETY: mallopt only adjusts allocator parameters.
    unsafe {
        libc::mallopt(M_MMAP_THRESHOLD, 64 << 20);
        libc::mallopt(M_TRIM_THRESHOLD, 512 << 20);
    }
}

#[cfg(not(all(target_os = "linux", target_env = "gnu")))]
pub fn retain_freed_memory() {}
