use num_complex::Complex64;

use crate::dsp::stft::Spectrogram;
use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

/// `log1p(|X|)` for every channel, each `[D x T]`.
pub fn features<F: Real>(spec: &Spectrogram) -> Vec<Tensor<F>> {
    spec.channels
        .iter()
        .map(|c| {
            let data = c.iter().map(|z| F::lit(z.norm().ln_1p())).collect();
            Tensor::new(&[spec.bins, spec.frames], data).expect("spectrogram geometry")
        })
        .collect()
}

/// Magnitudes from (possibly negative) log1p predictions; negatives clamp to 0.
pub fn invert_features<F: Real>(feat: &Tensor<F>) -> Vec<f64> {
    feat.data().iter().map(|v| v.as_f64().max(0.0).exp_m1()).collect()
}

/// Attaches the phase of `mix` (channel `channel`) to `mags`. Bins where the
/// mixture is exactly zero get phase 0.
pub fn with_mixture_phase(mags: &[f64], mix: &Spectrogram, channel: usize) -> Result<Vec<Complex64>> {
    let src = mix
        .channels
        .get(channel)
        .ok_or_else(|| Error::invalid(format!("channel {channel} out of range")))?;
    if mags.len() != src.len() {
        return Err(Error::shape("with_mixture_phase", &[mags.len()], &[src.len()]));
    }
    Ok(mags
        .iter()
        .zip(src)
        .map(|(&m, z)| Complex64::from_polar(m, if z.norm() > 0.0 { z.arg() } else { 0.0 }))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{stft, StftConfig};
    use std::f64::consts::E;

    fn spec_of(values: &[Complex64]) -> Spectrogram {
        let cfg = StftConfig {
            window_size: 2 * (values.len() - 1),
            ..StftConfig::desk()
        };
        Spectrogram {
            config: cfg,
            bins: values.len(),
            frames: 1,
            num_samples: 1,
            channels: vec![values.to_vec()],
        }
    }

    #[test]
    fn analytic_values() {
        let s = spec_of(&[
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, E - 1.0),
            Complex64::new(-(E - 1.0), 0.0),
        ]);
        let f = features::<f64>(&s).remove(0);
        assert_eq!(f.shape(), &[3, 1]);
        assert_eq!(f.data()[0], 0.0);
        assert!((f.data()[1] - 1.0).abs() < 1e-15);
        assert!((f.data()[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn inversion_round_trip() {
        let x: Vec<f64> = (0..3000).map(|n| ((n * 37 % 101) as f64 - 50.0) / 7.0).collect();
        let s = stft(&x, StftConfig::desk()).unwrap();
        let mags = s.magnitudes().remove(0);
        let back = invert_features(&features::<f64>(&s)[0]);
        for (a, b) in mags.iter().zip(&back) {
            assert!((a - b).abs() < 1e-6 * a.max(1.0));
        }
    }

    #[test]
    fn negative_predictions_clamp() {
        let t = Tensor::new(&[1, 3], vec![-2.0f32, 0.0, 1.0]).unwrap();
        let m = invert_features(&t);
        assert_eq!(m[0], 0.0);
        assert_eq!(m[1], 0.0);
        assert!((m[2] - (E - 1.0)).abs() < 1e-6);
    }

    #[test]
    fn mixture_phase_reused() {
        let s = spec_of(&[Complex64::new(0.0, 0.0), Complex64::new(0.0, 2.0), Complex64::new(-3.0, 0.0)]);
        let z = with_mixture_phase(&[1.0, 1.0, 0.5], &s, 0).unwrap();
        assert_eq!(z[0], Complex64::new(1.0, 0.0));
        assert!((z[1] - Complex64::new(0.0, 1.0)).norm() < 1e-15);
        assert!((z[2] - Complex64::new(-0.5, 0.0)).norm() < 1e-15);
        assert!(with_mixture_phase(&[1.0], &s, 0).is_err());
        assert!(with_mixture_phase(&[1.0; 3], &s, 1).is_err());
    }
}
