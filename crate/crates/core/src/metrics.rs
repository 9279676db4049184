//! Ground-truth quality metrics and the correlation statistics used to score
//! predicted-versus-true quality.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::BinaryMask;

/// A predicted quality score paired with its ground-truth value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorePair {
    pub predicted: f64,
    pub true_value: f64,
    pub sample_id: String,
    pub model_id: String,
}

fn check_same_dims(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            expected: a.dims(),
            found: b.dims(),
        });
    }
    Ok(())
}

/// Dice similarity `2|a∩b| / (|a|+|b|)`. Two empty masks score 1.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    check_same_dims(a, b)?;
    let (mut inter, mut total) = (0usize, 0usize);
    for (&u, &v) in a.values().iter().zip(b.values()) {
        inter += (u & v) as usize;
        total += (u + v) as usize;
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Symmetric Hausdorff distance between the foreground pixel centers of `a` and `b`.
///
/// Each directed term is read off an exact squared Euclidean distance transform
/// of the other mask, so the result equals the all-pairs definition exactly.
pub fn hausdorff(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    check_same_dims(a, b)?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyMask);
    }
    let to_b = squared_distance_transform(b);
    let to_a = squared_distance_transform(a);
    let directed = |from: &BinaryMask, field: &[f64]| {
        from.values()
            .iter()
            .zip(field)
            .filter(|(&v, _)| v != 0)
            .map(|(_, &d)| d)
            .fold(0.0_f64, f64::max)
    };
    let sq = directed(a, &to_b).max(directed(b, &to_a));
    Ok(sq.sqrt())
}

/// Squared Euclidean distance from every pixel to the nearest foreground pixel.
///
/// Separable lower-envelope transform (Felzenszwalb & Huttenlocher); all
/// intermediate values are small integers, so the output is exact.
pub fn squared_distance_transform(mask: &BinaryMask) -> Vec<f64> {
    let (w, h) = mask.dims();
    let mut field: Vec<f64> = mask
        .values()
        .iter()
        .map(|&v| if v != 0 { 0.0 } else { f64::INFINITY })
        .collect();

    let mut line = Vec::with_capacity(w.max(h));
    let mut out = vec![0.0; w.max(h)];
    for x in 0..w {
        line.clear();
        line.extend((0..h).map(|y| field[y * w + x]));
        envelope_1d(&line, &mut out[..h]);
        for y in 0..h {
            field[y * w + x] = out[y];
        }
    }
    for y in 0..h {
        let row = &mut field[y * w..(y + 1) * w];
        line.clear();
        line.extend_from_slice(row);
        envelope_1d(&line, &mut out[..w]);
        row.copy_from_slice(&out[..w]);
    }
    field
}

fn envelope_1d(f: &[f64], out: &mut [f64]) {
    let sites: Vec<usize> = (0..f.len()).filter(|&q| f[q].is_finite()).collect();
    if sites.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut hull: Vec<usize> = Vec::with_capacity(sites.len());
    let mut bounds: Vec<f64> = Vec::with_capacity(sites.len() + 1);
    let cross = |p: usize, q: usize| -> f64 {
        let (pf, qf) = (p as f64, q as f64);
        ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * (qf - pf))
    };
    for &q in &sites {
        while let Some(&p) = hull.last() {
            let s = cross(p, q);
            if hull.len() > 1 && s <= bounds[hull.len() - 1] {
                hull.pop();
                bounds.pop();
            } else {
                break;
            }
        }
        if hull.is_empty() {
            bounds.clear();
            bounds.push(f64::NEG_INFINITY);
        } else {
            let p = *hull.last().unwrap();
            bounds.push(cross(p, q));
        }
        hull.push(q);
    }
    let mut k = 0;
    for (i, slot) in out.iter_mut().enumerate() {
        let x = i as f64;
        while k + 1 < hull.len() && bounds[k + 1] < x {
            k += 1;
        }
        let v = hull[k] as f64;
        *slot = (x - v) * (x - v) + f[hull[k]];
    }
}

/// Hausdorff distance divided by the crop diagonal, clamped to `[0, 1]`.
pub fn normalized_hd(hd: f64, crop_diagonal: f64) -> Result<f64> {
    if !(crop_diagonal > 0.0) {
        return Err(Error::invalid(format!(
            "crop diagonal must be positive, got {crop_diagonal}"
        )));
    }
    if !(hd >= 0.0) {
        return Err(Error::invalid(format!(
            "hausdorff distance must be nonnegative, got {hd}"
        )));
    }
    Ok((hd / crop_diagonal).min(1.0))
}

fn check_pair(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::invalid(format!(
            "sequences differ in length ({} vs {})",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two observations"));
    }
    Ok(())
}

/// Sample Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pair(xs, ys)?;
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant sequence"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && xs[order[end]] == xs[order[start]] {
            end += 1;
        }
        // ranks start+1 ..= end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of average ranks.
///
/// Identical inputs give exactly 1.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pair(xs, ys)?;
    pearson(&average_ranks(xs), &average_ranks(ys))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(w: usize, h: usize, on: &[(usize, usize)]) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| on.contains(&(x, y))).unwrap()
    }

    fn bits_3x3(bits: u16) -> BinaryMask {
        BinaryMask::from_fn(3, 3, |x, y| bits >> (y * 3 + x) & 1 == 1).unwrap()
    }

    // Brute-force oracles, written directly from the set definitions.
    fn dice_oracle(a: &BinaryMask, b: &BinaryMask) -> f64 {
        let sa: Vec<_> = a.foreground().collect();
        let sb: Vec<_> = b.foreground().collect();
        let inter = sa.iter().filter(|p| sb.contains(p)).count();
        if sa.len() + sb.len() == 0 {
            1.0
        } else {
            2.0 * inter as f64 / (sa.len() + sb.len()) as f64
        }
    }

    fn hausdorff_oracle(a: &BinaryMask, b: &BinaryMask) -> f64 {
        let d = |p: (usize, usize), q: (usize, usize)| {
            let dx = p.0 as f64 - q.0 as f64;
            let dy = p.1 as f64 - q.1 as f64;
            (dx * dx + dy * dy).sqrt()
        };
        let directed = |u: &BinaryMask, v: &BinaryMask| {
            u.foreground()
                .map(|p| v.foreground().map(|q| d(p, q)).fold(f64::INFINITY, f64::min))
                .fold(0.0, f64::max)
        };
        directed(a, b).max(directed(b, a))
    }

    #[test]
    fn dice_examples() {
        let a = mask(4, 4, &[(0, 0), (1, 0), (2, 0), (3, 0)]);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let b = mask(4, 4, &[(0, 3), (1, 3)]);
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
        let c = mask(4, 4, &[(2, 0), (3, 0), (0, 1), (1, 1)]);
        assert_eq!(dice(&a, &c).unwrap(), 0.5);
        let empty = BinaryMask::zeros(4, 4).unwrap();
        assert_eq!(dice(&empty, &empty).unwrap(), 1.0);
        assert_eq!(dice(&empty, &a).unwrap(), 0.0);
        assert!(matches!(
            dice(&a, &BinaryMask::zeros(4, 5).unwrap()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn hausdorff_examples() {
        let a = mask(8, 8, &[(0, 0), (3, 4)]);
        assert_eq!(hausdorff(&a, &a).unwrap(), 0.0);
        assert_eq!(hausdorff(&mask(8, 8, &[(0, 0)]), &mask(8, 8, &[(3, 4)])).unwrap(), 5.0);
        let a = mask(12, 2, &[(0, 0), (10, 0)]);
        let b = mask(12, 2, &[(0, 0)]);
        assert_eq!(hausdorff(&a, &b).unwrap(), 10.0);
        assert!(matches!(
            hausdorff(&a, &BinaryMask::zeros(12, 2).unwrap()),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn exhaustive_3x3_against_brute_force() {
        for ia in 1u16..512 {
            let a = bits_3x3(ia);
            for ib in 1u16..512 {
                let b = bits_3x3(ib);
                assert_eq!(dice(&a, &b).unwrap(), dice_oracle(&a, &b));
                assert_eq!(hausdorff(&a, &b).unwrap(), hausdorff_oracle(&a, &b));
            }
        }
    }

    #[test]
    fn correlation_examples() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.5];
        let affine: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &affine).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&xs, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-12);
        assert!((spearman(&xs, &[0.1, 0.5, 0.6, 9.0, 10.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&xs, &[5.0, 4.0, 1.0, 0.0, -3.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(spearman(&[1.0], &[2.0]).is_err());
    }

    #[test]
    fn ties_get_average_ranks() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn normalized_hd_clamps() {
        assert_eq!(normalized_hd(0.0, 5.0).unwrap(), 0.0);
        assert_eq!(normalized_hd(5.0, 5.0).unwrap(), 1.0);
        assert_eq!(normalized_hd(10.0, 5.0).unwrap(), 1.0);
        assert!(normalized_hd(1.0, 0.0).is_err());
    }

    fn arb_mask(w: usize, h: usize) -> impl Strategy<Value = BinaryMask> {
        proptest::collection::vec(0u8..=1, w * h).prop_map(move |v| BinaryMask::from_vec(w, h, v).unwrap())
    }

    fn arb_nonempty(w: usize, h: usize) -> impl Strategy<Value = BinaryMask> {
        arb_mask(w, h).prop_filter("nonempty", |m| !m.is_empty())
    }

    // Naive product-moment formula, the independent reference for `pearson`.
    fn pearson_oracle(xs: &[f64], ys: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let sx: f64 = xs.iter().sum();
        let sy: f64 = ys.iter().sum();
        let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let syy: f64 = ys.iter().map(|y| y * y).sum();
        (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
    }

    // Ranks by counting, the independent reference for `average_ranks`.
    fn ranks_oracle(xs: &[f64]) -> Vec<f64> {
        xs.iter()
            .map(|&x| {
                let below = xs.iter().filter(|&&v| v < x).count() as f64;
                let equal = xs.iter().filter(|&&v| v == x).count() as f64;
                below + (equal + 1.0) / 2.0
            })
            .collect()
    }

    proptest! {
        #[test]
        fn dice_symmetric_and_bounded(a in arb_mask(7, 5), b in arb_mask(7, 5)) {
            let d = dice(&a, &b).unwrap();
            prop_assert_eq!(d, dice(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&d));
            if !a.is_empty() {
                prop_assert_eq!(dice(&a, &a).unwrap(), 1.0);
            }
        }

        #[test]
        fn fixing_a_pixel_raises_dice(pred in arb_mask(5, 5), gt in arb_nonempty(5, 5), idx in 0usize..25) {
            let (x, y) = (idx % 5, idx / 5);
            if pred.get(x, y) != gt.get(x, y) {
                let mut fixed = pred.clone();
                fixed.set(x, y, gt.get(x, y));
                let before = dice(&pred, &gt).unwrap();
                let after = dice(&fixed, &gt).unwrap();
                // Removing a false positive cannot help while the overlap is still empty.
                let overlap_empty = before == 0.0 && !gt.get(x, y);
                if overlap_empty {
                    prop_assert_eq!(after, 0.0);
                } else {
                    prop_assert!(after > before);
                }
            }
        }

        #[test]
        fn hausdorff_is_a_metric(a in arb_nonempty(6, 6), b in arb_nonempty(6, 6), c in arb_nonempty(6, 6)) {
            let ab = hausdorff(&a, &b).unwrap();
            prop_assert_eq!(ab, hausdorff(&b, &a).unwrap());
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab == 0.0, a == b);
            let ac = hausdorff(&a, &c).unwrap();
            let cb = hausdorff(&c, &b).unwrap();
            prop_assert!(ab <= ac + cb + 1e-12);
            prop_assert_eq!(ab, hausdorff_oracle(&a, &b));
        }

        #[test]
        fn hausdorff_matches_brute_force_on_larger_rasters(a in arb_nonempty(13, 9), b in arb_nonempty(13, 9)) {
            prop_assert_eq!(hausdorff(&a, &b).unwrap(), hausdorff_oracle(&a, &b));
        }

        #[test]
        fn correlations_match_reference(xs in proptest::collection::vec(-10.0..10.0f64, 10),
                                        ys in proptest::collection::vec(-10.0..10.0f64, 10)) {
            let p = pearson(&xs, &ys).unwrap();
            prop_assert!((p - pearson_oracle(&xs, &ys)).abs() < 1e-9);
            let s = spearman(&xs, &ys).unwrap();
            prop_assert!((s - pearson_oracle(&ranks_oracle(&xs), &ranks_oracle(&ys))).abs() < 1e-9);
        }

        #[test]
        fn spearman_invariant_under_monotone_maps(xs in proptest::collection::vec(-3.0..3.0f64, 10),
                                                  ys in proptest::collection::vec(-3.0..3.0f64, 10)) {
            let s = spearman(&xs, &ys).unwrap();
            let exp: Vec<f64> = ys.iter().map(|y| y.exp()).collect();
            let cube: Vec<f64> = ys.iter().map(|y| y * y * y).collect();
            prop_assert!((spearman(&xs, &exp).unwrap() - s).abs() < 1e-12);
            prop_assert!((spearman(&xs, &cube).unwrap() - s).abs() < 1e-12);
        }

        #[test]
        fn self_correlation_is_exactly_one(xs in proptest::collection::vec(0.0..1.0f64, 2..200)) {
            prop_assume!(xs.iter().any(|&x| x != xs[0]));
            prop_assert_eq!(pearson(&xs, &xs).unwrap(), 1.0);
            prop_assert_eq!(spearman(&xs, &xs).unwrap(), 1.0);
        }

        #[test]
        fn pearson_affine_behaviour(xs in proptest::collection::vec(-5.0..5.0f64, 10),
                                    ys in proptest::collection::vec(-5.0..5.0f64, 10),
                                    a in 0.1..10.0f64, b in -5.0..5.0f64) {
            let p = pearson(&xs, &ys).unwrap();
            let pos: Vec<f64> = ys.iter().map(|y| a * y + b).collect();
            let neg: Vec<f64> = ys.iter().map(|y| -a * y + b).collect();
            prop_assert!((pearson(&xs, &pos).unwrap() - p).abs() < 1e-9);
            prop_assert!((pearson(&xs, &neg).unwrap() + p).abs() < 1e-9);
        }
    }
}
