//! Float-to-integer helpers for parameter formulas.
//!
//! Window and block-length formulas floor/ceil powers like `H^(j/Delta)`.
//! When the exact real value is an integer, the f64 evaluation can land a few
//! ulps below it (e.g. `8f64.powf(1.0/3.0) < 2`), so naive flooring would be
//! off by one. These helpers snap to the nearest integer when the value is
//! within a relative 1e-9 of it.

const SNAP_REL: f64 = 1e-9;

fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= SNAP_REL * x.abs().max(1.0) {
        r
    } else {
        x
    }
}

pub fn floor_stable(x: f64) -> f64 {
    snap(x).floor()
}

pub fn ceil_stable(x: f64) -> f64 {
    snap(x).ceil()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snaps_near_integer_powers() {
        let cube_root_of_8 = 8f64.powf(1.0 / 3.0);
        assert_eq!(floor_stable(cube_root_of_8), 2.0);
        assert_eq!(ceil_stable(cube_root_of_8), 2.0);
    }

    #[test]
    fn leaves_clearly_fractional_values_alone() {
        assert_eq!(floor_stable(3419.95), 3419.0);
        assert_eq!(ceil_stable(3419.95), 3420.0);
        assert_eq!(floor_stable(2.5), 2.0);
    }
}
