//! Scoped flush-to-zero for the calling thread.
//!
//! Long training runs drive some activations and optimizer moments into the
//! subnormal range, where x86 arithmetic is an order of magnitude slower.
//! Flushing them to zero keeps the per-step cost flat and stays deterministic.

/// Enables flush-to-zero and denormals-are-zero until dropped, then restores
/// the previous mode. A no-op on targets without the control register.
pub struct FlushDenormals {
    #[cfg(all(target_arch = "x86_64", target_feature = "sse"))]
    previous: u32,
}

#[cfg(all(target_arch = "x86_64", target_feature = "sse"))]
#[allow(deprecated)]
impl FlushDenormals {
    const FTZ_DAZ: u32 = 0x8040;

    pub fn new() -> Self {
        use std::arch::x86_64::{_mm_getcsr, _mm_setcsr};
        // SAFETY: SSE is available; only the FTZ and DAZ bits change.
        let previous = unsafe { _mm_getcsr() };
        unsafe { _mm_setcsr(previous | Self::FTZ_DAZ) };
        Self { previous }
    }
}

#[cfg(all(target_arch = "x86_64", target_feature = "sse"))]
#[allow(deprecated)]
impl Drop for FlushDenormals {
    fn drop(&mut self) {
        // SAFETY: restores the register value read in `new`.
        unsafe { std::arch::x86_64::_mm_setcsr(self.previous) };
    }
}

#[cfg(not(all(target_arch = "x86_64", target_feature = "sse")))]
impl FlushDenormals {
    pub fn new() -> Self {
        Self {}
    }
}

impl Default for FlushDenormals {
    fn default() -> Self {
        Self::new()
    }
}
