//! Orientation and width of a brightness image from its second moments.
//!
//! Coordinates put `x` to the right and `y` up, centered on pixel centers.
//! The angle is that of the principal axis measured from vertical, positive
//! when the top of the axis leans right.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::diffcore::Tensor;
use crate::error::{domain, Result};

/// `(angle, width)`: the principal-axis angle in `[−π/2, π/2)` and the number
/// of occupied columns after rotating the axis upright, divided by the image
/// width.
pub fn angle_width(image: &Tensor) -> Result<(f64, f64)> {
    let (h, w) = (image.rows(), image.cols());
    if h == 0 || w == 0 {
        return domain("image must be nonempty");
    }
    if image.data().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return domain("brightness must be finite and nonnegative");
    }
    let mass = image.sum();
    if mass <= 0.0 {
        return domain("image has no brightness");
    }
    let coord = |r: usize, c: usize| (c as f64, -(r as f64));
    let (mut cx, mut cy) = (0.0, 0.0);
    for r in 0..h {
        for c in 0..w {
            let b = image.get(r, c);
            let (x, y) = coord(r, c);
            cx += b * x;
            cy += b * y;
        }
    }
    cx /= mass;
    cy /= mass;
    let (mut m20, mut m02, mut m11) = (0.0, 0.0, 0.0);
    for r in 0..h {
        for c in 0..w {
            let b = image.get(r, c);
            let (x, y) = coord(r, c);
            let (dx, dy) = (x - cx, y - cy);
            m20 += b * dx * dx;
            m02 += b * dy * dy;
            m11 += b * dx * dy;
        }
    }
    let scale = (m20 + m02).max(f64::MIN_POSITIVE);
    let angle = if (m20 - m02).abs() <= 1e-12 * scale && m11.abs() <= 1e-12 * scale {
        0.0
    } else {
        let phi = 0.5 * (2.0 * m11).atan2(m20 - m02);
        wrap_half_turn(FRAC_PI_2 - phi)
    };
    let (sin, cos) = angle.sin_cos();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for r in 0..h {
        for c in 0..w {
            if image.get(r, c) > 0.0 {
                let (x, y) = coord(r, c);
                let (dx, dy) = (x - cx, y - cy);
                let bin = (dx * cos - dy * sin + cx).round();
                lo = lo.min(bin);
                hi = hi.max(bin);
            }
        }
    }
    let width = ((hi - lo + 1.0) / w as f64).min(1.0);
    Ok((angle, width))
}

/// Wraps into `[−π/2, π/2)`.
fn wrap_half_turn(a: f64) -> f64 {
    let t = (a + FRAC_PI_2).rem_euclid(PI) - FRAC_PI_2;
    if t >= FRAC_PI_2 {
        t - PI
    } else {
        t
    }
}

/// Rotates image content clockwise by `angle` about the image center with
/// bilinear sampling; samples outside the source are zero.
pub fn rotate_bilinear(image: &Tensor, angle: f64) -> Tensor {
    let (h, w) = (image.rows(), image.cols());
    let (cr, cc) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = angle.sin_cos();
    let at = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            0.0
        } else {
            image.get(r as usize, c as usize)
        }
    };
    Tensor::from_fn(h, w, |r, c| {
        let (x, y) = (c as f64 - cc, cr - r as f64);
        let (sx, sy) = (x * cos - y * sin, x * sin + y * cos);
        let (fr, fc) = (cr - sy, sx + cc);
        let (r0, c0) = (fr.floor(), fc.floor());
        let (ar, ac) = (fr - r0, fc - c0);
        let (r0, c0) = (r0 as isize, c0 as isize);
        (1.0 - ar) * ((1.0 - ac) * at(r0, c0) + ac * at(r0, c0 + 1))
            + ar * ((1.0 - ac) * at(r0 + 1, c0) + ac * at(r0 + 1, c0 + 1))
    })
}

/// A centered vertical bar `width_px` wide and `length_px` tall.
pub fn vertical_bar(h: usize, w: usize, width_px: usize, length_px: usize) -> Tensor {
    let c0 = (w - width_px) / 2;
    let r0 = (h - length_px) / 2;
    Tensor::from_fn(h, w, |r, c| {
        if (c0..c0 + width_px).contains(&c) && (r0..r0 + length_px).contains(&r) {
            1.0
        } else {
            0.0
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vertical_bar_example() {
        let bar = vertical_bar(28, 28, 3, 20);
        let (a, w) = angle_width(&bar).unwrap();
        assert_eq!(a, 0.0);
        assert!((w - 3.0 / 28.0).abs() < 1e-15);
    }

    #[test]
    fn rotated_bars_recover_angle() {
        let bar = vertical_bar(28, 28, 3, 20);
        for deg in [-60.0f64, -30.0, 45.0, 80.0] {
            let (a, _) = angle_width(&rotate_bilinear(&bar, deg.to_radians())).unwrap();
            assert!((a.to_degrees() - deg).abs() < 3.0, "{deg}: {}", a.to_degrees());
        }
    }

    #[test]
    fn full_image_and_errors() {
        let (a, w) = angle_width(&Tensor::filled(28, 28, 1.0)).unwrap();
        assert_eq!(a, 0.0);
        assert_eq!(w, 1.0);
        assert!(angle_width(&Tensor::zeros(5, 5)).is_err());
        assert!(angle_width(&Tensor::filled(2, 2, -1.0)).is_err());
    }

    #[test]
    fn half_turn_rotation_preserves_angle() {
        let img = rotate_bilinear(&vertical_bar(28, 28, 4, 18), 0.5);
        let flipped = Tensor::from_fn(28, 28, |r, c| img.get(27 - r, 27 - c));
        let (a1, w1) = angle_width(&img).unwrap();
        let (a2, w2) = angle_width(&flipped).unwrap();
        assert!((a1 - a2).abs() < 1e-12);
        assert!((w1 - w2).abs() < 1e-12);
    }

    #[test]
    fn wrapping() {
        assert_eq!(wrap_half_turn(FRAC_PI_2), -FRAC_PI_2);
        assert!((wrap_half_turn(PI * 0.75) + PI * 0.25).abs() < 1e-15);
        assert_eq!(wrap_half_turn(0.0), 0.0);
    }
}
