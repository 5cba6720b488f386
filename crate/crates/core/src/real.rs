use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar the network is generic over.
///
/// Training and checkpoints use `f32`; gradient checks run the same code in `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    fn c(x: f64) -> Self;

    fn f64(self) -> f64;

    /// `exp` for non-positive arguments (softmax after max subtraction).
    /// The `f32` version is a branch-free polynomial that vectorizes.
    #[inline(always)]
    fn exp_nonpos(self) -> Self {
        self.exp()
    }
}

impl Real for f32 {
    #[inline(always)]
    fn c(x: f64) -> Self {
        x as f32
    }

    #[inline(always)]
    fn f64(self) -> f64 {
        self as f64
    }

    #[inline(always)]
    fn exp_nonpos(self) -> Self {
        // Cody-Waite reduction x = n ln2 + r, |r| <= ln2/2, then a degree-6
        // polynomial; below -87 the result flushes to zero.
        let x = self.max(-87.0);
        // Adding 1.5·2^23 rounds to nearest without a libm call.
        let n = (x * std::f32::consts::LOG2_E + 12_582_912.0) - 12_582_912.0;
        let r = (x - n * 0.693_145_75) - n * 1.428_606_8e-6;
        let p = 1.0
            + r * (1.0
                + r * (0.5 + r * (0.166_666_67 + r * (0.041_666_668 + r * (0.008_333_334 + r * 0.001_388_888_9)))));
        let scale = f32::from_bits(((n as i32 + 127) as u32) << 23);
        if self < -87.0 {
            0.0
        } else {
            p * scale
        }
    }
}

impl Real for f64 {
    #[inline(always)]
    fn c(x: f64) -> Self {
        x
    }

    #[inline(always)]
    fn f64(self) -> f64 {
        self
    }
}
