use num_complex::Complex64;

use crate::error::{Error, Result};

/// Zeroth-order Hankel function of the second kind, `J₀(x) − i Y₀(x)`.
///
/// `J₀` and `Y₀` come from `libm` (rational approximations on `[0, 8]`,
/// asymptotic expansions with rational corrections beyond). The function
/// is singular at the origin, so `x` must be positive and finite.
pub fn hankel_h0_second_kind(x: f64) -> Result<Complex64> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::Domain(format!(
            "H0(2) requires a positive finite argument, got {x}"
        )));
    }
    Ok(Complex64::new(libm::j0(x), -libm::y0(x)))
}
