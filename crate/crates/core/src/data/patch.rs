//! Patch extraction around a pixel and the eight square symmetries.

use super::HyperCube;
use crate::tensor::{Real, Shape4, Tensor4};
use crate::{Error, Result};

/// Mirror an out-of-range coordinate back into `0..n` without repeating the
/// edge sample: -1 maps to 1, n maps to n-2.
#[inline]
pub fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

pub(crate) fn check_patch(patch: usize) -> Result<()> {
    if patch == 0 || patch % 2 == 0 {
        return Err(Error::Config(format!("patch size must be odd and positive, got {patch}")));
    }
    Ok(())
}

/// Copy the `patch × patch` window centred on (x, y) into `out`
/// (band-major, length `bands · patch²`).
pub fn extract_patch_into(cube: &HyperCube, x: usize, y: usize, patch: usize, out: &mut [f32]) {
    let r = (patch / 2) as isize;
    let plane = cube.height * cube.width;
    let mut k = 0;
    for b in 0..cube.bands {
        let band = &cube.data[b * plane..(b + 1) * plane];
        for dy in -r..=r {
            let sy = reflect(y as isize + dy, cube.height);
            let row = &band[sy * cube.width..(sy + 1) * cube.width];
            for dx in -r..=r {
                out[k] = row[reflect(x as isize + dx, cube.width)];
                k += 1;
            }
        }
    }
}

/// Neighbourhood of pixel (x, y) as a `(1, bands, patch, patch)` tensor,
/// reflect-padded at the raster border.
pub fn extract_patch(cube: &HyperCube, x: usize, y: usize, patch: usize) -> Result<Tensor4<f32>> {
    check_patch(patch)?;
    if x >= cube.width || y >= cube.height {
        return Err(Error::Data(format!(
            "pixel ({x}, {y}) outside a {}x{} raster",
            cube.width, cube.height
        )));
    }
    let mut out = Tensor4::zeros(Shape4::new(1, cube.bands, patch, patch));
    extract_patch_into(cube, x, y, patch, out.data_mut());
    Ok(out)
}

/// Source coordinate read by output position (y, x) under symmetry `k` of
/// an `s × s` square.
///
/// 0 identity, 1 rot90, 2 rot180, 3 rot270, 4 horizontal flip,
/// 5 vertical flip, 6 transpose, 7 anti-transpose.
#[inline]
pub fn d4_source(k: usize, y: usize, x: usize, s: usize) -> (usize, usize) {
    let (ry, rx) = (s - 1 - y, s - 1 - x);
    match k {
        0 => (y, x),
        1 => (x, ry),
        2 => (ry, rx),
        3 => (rx, y),
        4 => (y, rx),
        5 => (ry, x),
        6 => (x, y),
        7 => (rx, ry),
        _ => panic!("D4 element {k} out of range"),
    }
}

/// Apply symmetry `k` to every `s × s` plane of `src`, writing into `dst`.
pub fn d4_apply(k: usize, src: &[f32], dst: &mut [f32], s: usize) {
    let plane = s * s;
    for (sp, dp) in src.chunks_exact(plane).zip(dst.chunks_exact_mut(plane)) {
        for y in 0..s {
            for x in 0..s {
                let (sy, sx) = d4_source(k, y, x, s);
                dp[y * s + x] = sp[sy * s + sx];
            }
        }
    }
}

/// Apply the `k`-th element of the dihedral group to every plane of `patch`.
pub fn augment_d4<T: Real>(patch: &Tensor4<T>, k: usize) -> Result<Tensor4<T>> {
    if k >= 8 {
        return Err(Error::Config(format!("D4 element must be in 0..8, got {k}")));
    }
    let sh = patch.shape();
    if sh.h != sh.w {
        return Err(Error::shape("augment_d4", "square planes", sh));
    }
    let s = sh.h;
    Ok(Tensor4::from_fn(sh, |n, c, y, x| {
        let (sy, sx) = d4_source(k, y, x, s);
        patch.get(n, c, sy, sx)
    }))
}

/// Index of `a ∘ b` (apply `b` first, then `a`).
pub fn d4_compose(a: usize, b: usize) -> usize {
    // Track where each corner of a 3x3 marker ends up.
    let s = 3;
    let marker: Vec<f32> = (0..9).map(|i| i as f32).collect();
    let mut tmp = vec![0.0; 9];
    let mut out = vec![0.0; 9];
    d4_apply(b, &marker, &mut tmp, s);
    d4_apply(a, &tmp, &mut out, s);
    (0..8)
        .find(|&k| {
            let mut cand = vec![0.0; 9];
            d4_apply(k, &marker, &mut cand, s);
            cand == out
        })
        .expect("D4 is closed under composition")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(bands: usize, h: usize, w: usize) -> HyperCube {
        let data = (0..bands * h * w).map(|i| i as f32).collect();
        HyperCube::new(bands, h, w, data).unwrap()
    }

    #[test]
    fn reflect_mirrors_without_edge_repeat() {
        assert_eq!(reflect(-1, 3), 1);
        assert_eq!(reflect(-2, 3), 2);
        assert_eq!(reflect(3, 3), 1);
        assert_eq!(reflect(4, 3), 0);
        assert_eq!(reflect(-3, 1), 0);
    }

    #[test]
    fn interior_patch_is_exact_window() {
        let cube = ramp(2, 6, 7);
        let p = extract_patch(&cube, 3, 2, 3).unwrap();
        for b in 0..2 {
            for dy in 0..3 {
                for dx in 0..3 {
                    assert_eq!(p.get(0, b, dy, dx), cube.get(b, 1 + dy, 2 + dx));
                }
            }
        }
    }

    #[test]
    fn corner_patch_reflects() {
        let cube = ramp(1, 3, 3);
        let p = extract_patch(&cube, 0, 0, 3).unwrap();
        assert_eq!(p.get(0, 0, 0, 0), cube.get(0, 1, 1));
        assert_eq!(p.get(0, 0, 1, 1), cube.get(0, 0, 0));
        assert_eq!(p.get(0, 0, 0, 1), cube.get(0, 1, 0));
    }

    #[test]
    fn unit_patch_is_the_spectrum() {
        let cube = ramp(4, 2, 2);
        let p = extract_patch(&cube, 1, 0, 1).unwrap();
        assert_eq!(p.data(), cube.spectrum(1, 0).as_slice());
    }

    #[test]
    fn even_patch_and_outside_pixel_are_errors() {
        let cube = ramp(1, 3, 3);
        assert!(matches!(extract_patch(&cube, 0, 0, 4), Err(Error::Config(_))));
        assert!(matches!(extract_patch(&cube, 3, 0, 3), Err(Error::Data(_))));
    }

    #[test]
    fn marker_gives_eight_distinct_images() {
        let m = Tensor4::<f32>::new(Shape4::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let outs: Vec<Vec<f32>> = (0..8).map(|k| augment_d4(&m, k).unwrap().into_data()).collect();
        for i in 0..8 {
            for j in 0..i {
                assert_ne!(outs[i], outs[j], "elements {i} and {j} coincide");
            }
        }
        assert_eq!(outs[0], m.data());
    }

    #[test]
    fn group_laws_hold() {
        for a in 0..8 {
            // order divides 4
            let mut p = 0;
            for _ in 0..4 {
                p = d4_compose(a, p);
            }
            assert_eq!(p, 0, "element {a}");
            for b in 0..8 {
                let ab = d4_compose(a, b);
                assert!(ab < 8);
                for c in 0..8 {
                    assert_eq!(d4_compose(ab, c), d4_compose(a, d4_compose(b, c)));
                }
            }
        }
        assert_eq!(d4_compose(4, 4), 0);
        assert_eq!(d4_compose(1, 1), 2);
        assert_eq!(d4_compose(1, 3), 0);
    }

    #[test]
    fn augmentation_acts_on_all_bands_alike() {
        let cube = ramp(3, 5, 5);
        let p = extract_patch(&cube, 2, 2, 5).unwrap();
        for k in 0..8 {
            let a = augment_d4(&p, k).unwrap();
            let base = augment_d4(&p.map(|v| v % 25.0), k).unwrap();
            for b in 0..3 {
                for i in 0..25 {
                    assert_eq!(a.data()[b * 25 + i] - b as f32 * 25.0, base.data()[b * 25 + i]);
                }
            }
        }
        assert!(augment_d4(&p, 8).is_err());
    }
}
