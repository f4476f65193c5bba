use crate::error::{Error, Result};

pub const LATTICE: [i32; 4] = [-1, 0, 1, 2];

/// Slack for float noise on top of the 4ε guard, so orthonormal keys (ε = 0)
/// still round.
const GUARD_SLACK: f64 = 1e-9;

/// Nearest point of {−1, 0, 1, 2}; inputs farther than `4·eps` from every
/// point are outside the rounding lemma's domain and rejected.
pub fn round_f(x: f64, eps: f64) -> Result<i32> {
    let p = x.round().clamp(-1.0, 2.0);
    let radius = 4.0 * eps;
    if !x.is_finite() || (x - p).abs() > radius + GUARD_SLACK {
        return Err(Error::Domain { x, radius });
    }
    Ok(p as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(round_f(0.03, 0.1).unwrap(), 0);
        assert_eq!(round_f(1.98, 0.1).unwrap(), 2);
        assert_eq!(round_f(-0.97, 0.1).unwrap(), -1);
    }

    #[test]
    fn domain_guard() {
        assert!(matches!(round_f(0.5, 0.1), Err(Error::Domain { .. })));
        assert!(matches!(round_f(2.45, 0.1), Err(Error::Domain { .. })));
        assert!(round_f(-1.39, 0.1).is_ok());
        assert!(round_f(f64::NAN, 0.1).is_err());
        assert_eq!(round_f(1.0 + 1e-12, 0.0).unwrap(), 1);
    }
}
