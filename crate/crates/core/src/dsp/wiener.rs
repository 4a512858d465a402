use crate::dsp::stft::Spectrogram;
use crate::error::{Error, Result};

/// Power sums below this count as silent and split evenly.
pub const WIENER_EPS: f64 = 1e-10;

/// Ratio masks `v_s / sum v` with `v_s = mag_s^2`, for one channel.
/// `mags[s]` holds source `s`; all must share a length.
pub fn wiener_masks(mags: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
    let n = mags.first().map_or(0, |m| m.len());
    if mags.is_empty() {
        return Err(Error::invalid("wiener filter needs at least one source"));
    }
    if let Some(bad) = mags.iter().find(|m| m.len() != n) {
        return Err(Error::shape("wiener_masks", &[n], &[bad.len()]));
    }
    let even = 1.0 / mags.len() as f64;
    let mut masks = vec![vec![0.0; n]; mags.len()];
    for i in 0..n {
        let total: f64 = mags.iter().map(|m| m[i] * m[i]).sum();
        for (mask, m) in masks.iter_mut().zip(mags) {
            mask[i] = if total < WIENER_EPS { even } else { m[i] * m[i] / total };
        }
    }
    Ok(masks)
}

/// Applies per-channel ratio masks to the mixture.
/// `est_mags[s][c]` is the `[D x T]` magnitude estimate of source `s`, channel `c`.
pub fn wiener_filter(est_mags: &[Vec<Vec<f64>>], mix: &Spectrogram) -> Result<Vec<Spectrogram>> {
    if est_mags.is_empty() {
        return Err(Error::invalid("wiener filter needs at least one source"));
    }
    let expect = [mix.channels.len(), mix.bins * mix.frames];
    for s in est_mags {
        let got = [s.len(), s.first().map_or(0, Vec::len)];
        if got != expect || s.iter().any(|c| c.len() != expect[1]) {
            return Err(Error::shape("wiener_filter", &expect, &got));
        }
        if s.iter().flatten().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("magnitude estimates must be finite and non-negative"));
        }
    }
    let mut out: Vec<Spectrogram> = est_mags.iter().map(|_| mix.clone()).collect();
    for (c, x) in mix.channels.iter().enumerate() {
        let per_source: Vec<&[f64]> = est_mags.iter().map(|s| s[c].as_slice()).collect();
        let masks = wiener_masks(&per_source)?;
        for (spec, mask) in out.iter_mut().zip(&masks) {
            for ((z, &m), &xi) in spec.channels[c].iter_mut().zip(mask).zip(x) {
                *z = xi * m;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{stft, StftConfig};
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mixture() -> Spectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..1500).map(|_| rng.gen_range(-1.0..1.0)).collect();
        stft(&x, StftConfig::desk()).unwrap()
    }

    #[test]
    fn masks_partition_unity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let srcs: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..500).map(|i| if i % 7 == 0 { 0.0 } else { rng.gen_range(0.0..3.0) }).collect())
            .collect();
        let refs: Vec<&[f64]> = srcs.iter().map(Vec::as_slice).collect();
        let masks = wiener_masks(&refs).unwrap();
        for i in 0..500 {
            let sum: f64 = masks.iter().map(|m| m[i]).sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(masks.iter().all(|m| (0.0..=1.0).contains(&m[i])));
        }
        // all-silent bins split evenly
        assert!(masks.iter().all(|m| m[0] == 0.25));
    }

    #[test]
    fn sources_sum_to_mixture() {
        let mix = mixture();
        let n = mix.bins * mix.frames;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let est: Vec<Vec<Vec<f64>>> = (0..4)
            .map(|_| vec![(0..n).map(|_| rng.gen_range(0.0..2.0)).collect()])
            .collect();
        let parts = wiener_filter(&est, &mix).unwrap();
        let mut total = parts[0].clone();
        for p in &parts[1..] {
            total = total.add(p).unwrap();
        }
        let err: f64 = total.channels[0].iter().zip(&mix.channels[0]).map(|(a, b)| (a - b).norm_sqr()).sum();
        let norm: f64 = mix.channels[0].iter().map(Complex64::norm_sqr).sum();
        assert!((err / norm).sqrt() < 1e-12);
    }

    #[test]
    fn single_active_source_takes_everything() {
        let mix = mixture();
        let n = mix.bins * mix.frames;
        let est = vec![vec![vec![0.0; n]], vec![vec![1.0; n]], vec![vec![0.0; n]]];
        let parts = wiener_filter(&est, &mix).unwrap();
        assert_eq!(parts[1].channels, mix.channels);
        assert!(parts[0].channels[0].iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn equal_sources_split_in_half() {
        let mix = mixture();
        let n = mix.bins * mix.frames;
        let est = vec![vec![vec![0.7; n]], vec![vec![0.7; n]]];
        let parts = wiener_filter(&est, &mix).unwrap();
        for (z, x) in parts[0].channels[0].iter().zip(&mix.channels[0]) {
            assert_eq!(*z, x * 0.5);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let mix = mixture();
        assert!(wiener_filter(&[vec![vec![1.0; 3]]], &mix).is_err());
        assert!(wiener_filter(&[], &mix).is_err());
        let n = mix.bins * mix.frames;
        assert!(wiener_filter(&[vec![vec![-1.0; n]]], &mix).is_err());
    }
}
