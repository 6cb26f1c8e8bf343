//! Fixed thermal preview palette.
//!
//! A 256-entry black-body style ramp built by linear interpolation between these anchors
//! (position, R, G, B), each channel rounded to the nearest integer:
//!
//! | position | R   | G   | B   |
//! |----------|-----|-----|-----|
//! | 0.00     | 0   | 0   | 0   |
//! | 0.15     | 40  | 0   | 90  |
//! | 0.35     | 150 | 20  | 110 |
//! | 0.55     | 230 | 70  | 40  |
//! | 0.75     | 250 | 160 | 10  |
//! | 0.90     | 252 | 230 | 90  |
//! | 1.00     | 255 | 255 | 255 |
//!
//! A normalized temperature `t` maps to entry `round(clamp(t, 0, 1) * 255)`; NaN maps to entry 0.

use std::sync::OnceLock;

use thermosplat_core::image::Image;

const ANCHORS: [(f64, [f64; 3]); 7] = [
    (0.00, [0.0, 0.0, 0.0]),
    (0.15, [40.0, 0.0, 90.0]),
    (0.35, [150.0, 20.0, 110.0]),
    (0.55, [230.0, 70.0, 40.0]),
    (0.75, [250.0, 160.0, 10.0]),
    (0.90, [252.0, 230.0, 90.0]),
    (1.00, [255.0, 255.0, 255.0]),
];

pub fn lut() -> &'static [[u8; 3]; 256] {
    static LUT: OnceLock<[[u8; 3]; 256]> = OnceLock::new();
    LUT.get_or_init(|| {
        std::array::from_fn(|i| {
            let t = i as f64 / 255.0;
            let k = ANCHORS.windows(2).position(|w| t <= w[1].0).unwrap_or(ANCHORS.len() - 2);
            let ((t0, c0), (t1, c1)) = (ANCHORS[k], ANCHORS[k + 1]);
            let f = (t - t0) / (t1 - t0);
            std::array::from_fn(|c| (c0[c] + f * (c1[c] - c0[c])).round() as u8)
        })
    })
}

pub fn color_of(t: f64) -> [u8; 3] {
    if t.is_nan() {
        return lut()[0];
    }
    lut()[(t.clamp(0.0, 1.0) * 255.0).round() as usize]
}

/// Interleaved 8-bit RGB for a one-channel image of normalized temperatures.
pub fn apply(img: &Image) -> Vec<u8> {
    img.data.iter().flat_map(|&t| color_of(t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_anchors() {
        assert_eq!(color_of(0.0), [0, 0, 0]);
        assert_eq!(color_of(1.0), [255, 255, 255]);
        assert_eq!(color_of(-3.0), [0, 0, 0]);
        assert_eq!(color_of(f64::NAN), [0, 0, 0]);
        // 0.55 * 255 = 140.25 -> entry 140, just below the anchor
        assert_eq!(color_of(0.55), [230, 70, 40]);
    }

    #[test]
    fn ramp_gets_brighter() {
        let l = lut();
        let lum = |c: [u8; 3]| c.iter().map(|&v| v as u32).sum::<u32>();
        assert!(l.windows(2).all(|w| lum(w[1]) + 3 >= lum(w[0])));
        assert!(lum(l[255]) > lum(l[128]) && lum(l[128]) > lum(l[0]));
    }
}
