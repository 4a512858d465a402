use crate::data::Audio;
use crate::dsp::{invert_features, istft, wiener_filter, Stft, StftConfig};
use crate::error::{Error, Result};
use crate::model::D2Net;
use crate::numerics::Tensor;

/// Mixture waveform to one waveform per source:
/// STFT, log1p features, network, expm1 of the clamped prediction,
/// ratio-mask Wiener filter on the mixture spectrogram, inverse STFT.
/// Channels are processed independently; outputs match the input length.
pub fn separate_audio(net: &D2Net<f32>, stft: &StftConfig, mix: &Audio, workers: usize) -> Result<Vec<Audio>> {
    if mix.sample_rate != stft.sample_rate {
        return Err(Error::Unsupported(format!(
            "input is {} Hz but the model expects {} Hz; resample first",
            mix.sample_rate, stft.sample_rate
        )));
    }
    let cfg = net.config();
    if cfg.freq_bins != stft.bins() {
        return Err(Error::invalid(format!(
            "model has {} bins, STFT gives {}",
            cfg.freq_bins,
            stft.bins()
        )));
    }
    let engine = Stft::new(*stft)?;
    let spec = engine.analyse(&mix.channels)?;
    let (d, t, s) = (spec.bins, spec.frames, cfg.num_sources());
    // est[source][channel] magnitudes, [D x T] each
    let mut est: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(spec.num_channels()); s];
    for channel in &spec.channels {
        let feat = Tensor::new(&[d, t], channel.iter().map(|z| z.norm().ln_1p() as f32).collect())?;
        let pred = net.forward(&feat, workers)?;
        for (src, slot) in est.iter_mut().enumerate() {
            let part = Tensor::new(&[d, t], pred.data()[src * d * t..(src + 1) * d * t].to_vec())?;
            slot.push(invert_features(&part));
        }
    }
    wiener_filter(&est, &spec)?
        .iter()
        .map(|source| {
            Ok(Audio {
                sample_rate: mix.sample_rate,
                channels: istft(source)?,
            })
        })
        .collect()
}

/// `[channel][sample]` estimates per source, as used by the metrics.
pub fn separate_channels(net: &D2Net<f32>, stft: &StftConfig, mix: &Audio, workers: usize) -> Result<Vec<Vec<Vec<f64>>>> {
    Ok(separate_audio(net, stft, mix, workers)?.into_iter().map(|a| a.channels).collect())
}
