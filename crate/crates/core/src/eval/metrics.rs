use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Ceiling (and floor) for reported ratios, in dB.
pub const SDR_CAP: f64 = 300.0;

/// Frames whose reference energy does not exceed this are skipped.
pub const SILENCE: f64 = 1e-10;

fn ratio_db(num: f64, den: f64) -> f64 {
    if den <= 0.0 {
        return if num > 0.0 { SDR_CAP } else { f64::NAN };
    }
    if num <= 0.0 {
        return -SDR_CAP;
    }
    (10.0 * (num / den).log10()).clamp(-SDR_CAP, SDR_CAP)
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Median of the non-NaN values; NaN if none remain.
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn check_signals(what: &str, a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<usize> {
    let len = a.first().map_or(0, Vec::len);
    let shape = |s: &[Vec<f64>]| vec![s.len(), s.first().map_or(0, Vec::len)];
    if a.is_empty() || len == 0 {
        return Err(Error::invalid(format!("{what}: empty signal")));
    }
    if a.len() != b.len() || a.iter().chain(b).any(|c| c.len() != len) {
        return Err(Error::Shape {
            op: "metric",
            lhs: shape(a),
            rhs: shape(b),
        });
    }
    Ok(len)
}

/// Frame `[start, end)` of every channel, concatenated.
fn gather(signal: &[Vec<f64>], start: usize, end: usize) -> Vec<f64> {
    signal.iter().flat_map(|c| c[start..end].iter().copied()).collect()
}

fn frames(len: usize, frame: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..len).step_by(frame).map(move |s| (s, (s + frame).min(len)))
}

/// Framewise SDR, `10 log10(|s|^2 / |s - s_hat|^2)`, median over frames with
/// a non-silent reference. `None` when every frame is silent.
pub fn sdr(reference: &[Vec<f64>], estimate: &[Vec<f64>], frame: usize) -> Result<Option<f64>> {
    let len = check_signals("sdr", reference, estimate)?;
    if frame == 0 {
        return Err(Error::invalid("frame length must be positive"));
    }
    let per_frame: Vec<f64> = frames(len, frame)
        .filter_map(|(s, e)| {
            let r = gather(reference, s, e);
            let num = energy(&r);
            if num <= SILENCE {
                return None;
            }
            let err: f64 = r.iter().zip(gather(estimate, s, e)).map(|(a, b)| (a - b).powi(2)).sum();
            Some(ratio_db(num, err))
        })
        .collect();
    Ok(if per_frame.is_empty() { None } else { Some(median(&per_frame)) })
}

/// Orthogonal split of an estimate against a set of references.
#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    pub target: Vec<f64>,
    pub interference: Vec<f64>,
    pub artifact: Vec<f64>,
    /// The reference Gram matrix was singular and had to be regularized.
    pub regularized: bool,
}

/// Projects `estimate` onto the target reference and onto the span of all
/// references (time-invariant gains).
pub fn decompose(references: &[Vec<f64>], target: usize, estimate: &[f64]) -> Result<Decomposition> {
    let n = estimate.len();
    if target >= references.len() {
        return Err(Error::invalid(format!("target {target} of {} references", references.len())));
    }
    if references.iter().any(|r| r.len() != n) {
        return Err(Error::shape("decompose", &[references.len(), n], &[estimate.len()]));
    }
    let s = references.len();
    let gram = DMatrix::from_fn(s, s, |i, j| crate::numerics::dot(&references[i], &references[j]));
    let rhs = DVector::from_fn(s, |i, _| crate::numerics::dot(&references[i], estimate));

    let t = &references[target];
    let tt = gram[(target, target)];
    let scale = if tt > 0.0 { rhs[target] / tt } else { 0.0 };
    let s_target: Vec<f64> = t.iter().map(|v| scale * v).collect();

    let trace = gram.trace();
    let (coeffs, regularized) = match gram.clone().cholesky() {
        Some(ch) if well_conditioned(&gram) => (ch.solve(&rhs), false),
        _ => {
            let lambda = 1e-10 * (trace / s as f64).max(f64::MIN_POSITIVE);
            let reg = &gram + DMatrix::identity(s, s) * lambda;
            let c = reg
                .cholesky()
                .map(|ch| ch.solve(&rhs))
                .unwrap_or_else(|| DVector::zeros(s));
            (c, true)
        }
    };
    let mut projected = vec![0.0; n];
    for (r, c) in references.iter().zip(coeffs.iter()) {
        projected.iter_mut().zip(r).for_each(|(p, v)| *p += c * v);
    }
    Ok(Decomposition {
        interference: projected.iter().zip(&s_target).map(|(p, t)| p - t).collect(),
        artifact: estimate.iter().zip(&projected).map(|(e, p)| e - p).collect(),
        target: s_target,
        regularized,
    })
}

fn well_conditioned(gram: &DMatrix<f64>) -> bool {
    let eig = gram.clone().symmetric_eigen().eigenvalues;
    let max = eig.iter().copied().fold(0.0, f64::max);
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    max > 0.0 && min > 1e-12 * max
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BssScores {
    pub sir: f64,
    pub sar: f64,
    pub isr: f64,
    pub regularized: bool,
}

/// Framewise SIR, SAR and ISR of `estimate` against source `target`,
/// medians over frames with a non-silent target reference.
/// `references[source][channel][sample]`.
pub fn bss_decompose(
    references: &[Vec<Vec<f64>>],
    target: usize,
    estimate: &[Vec<f64>],
    frame: usize,
) -> Result<BssScores> {
    let first = references
        .get(target)
        .ok_or_else(|| Error::invalid(format!("target {target} of {} references", references.len())))?;
    let len = check_signals("bss_decompose", first, estimate)?;
    for r in references {
        check_signals("bss_decompose", r, estimate)?;
    }
    if frame == 0 {
        return Err(Error::invalid("frame length must be positive"));
    }
    let (mut sir, mut sar, mut isr) = (Vec::new(), Vec::new(), Vec::new());
    let mut regularized = false;
    for (s, e) in frames(len, frame) {
        let refs: Vec<Vec<f64>> = references.iter().map(|r| gather(r, s, e)).collect();
        let truth = &refs[target];
        if energy(truth) <= SILENCE {
            continue;
        }
        let d = decompose(&refs, target, &gather(estimate, s, e))?;
        regularized |= d.regularized;
        let (et, ei, ea) = (energy(&d.target), energy(&d.interference), energy(&d.artifact));
        let ti: Vec<f64> = d.target.iter().zip(&d.interference).map(|(a, b)| a + b).collect();
        let spatial: f64 = d.target.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum();
        sir.push(ratio_db(et, ei));
        sar.push(ratio_db(energy(&ti), ea));
        isr.push(ratio_db(energy(truth), spatial));
    }
    Ok(BssScores {
        sir: median(&sir),
        sar: median(&sar),
        isr: median(&isr),
        regularized,
    })
}
