//! One line per acceptance criterion; exits nonzero if any fails.

use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use d2net::cli::{ablate, bench, evaluate_mixture_baseline, evaluate_model, train, Preset, RunConfig};
use d2net::data::synth_corpus;
use d2net::dsp::{istft, stft, wiener_filter, wiener_masks, Spectrogram, StftConfig};
use d2net::layers::{
    dilated_gru, dilated_gru_parallel_forward, weight_normed_conv, ConvGeometry, DilatedGruParams, GruConfig,
    GruDirectionParams,
};
use d2net::model::{d2_block, BlockVariant, Checkpoint, D2Net, ModelConfig};
use d2net::numerics::{grad_check_directions, grad_check_inputs, ops, Tape, Tensor, Var};

const GRU_EQUIVALENCE_TOL: f64 = 1e-6;
const GRAD_REL_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;
const STFT_ROUND_TRIP_TOL: f64 = 1e-6;
const THREE_MINUTE_FRAMES: usize = 7_752;
const WIENER_TOL: f64 = 1e-6;
const SDR_MARGIN_DB: f64 = 3.0;
const DESK_TRACKS: usize = 20;
const DESK_EPOCHS: usize = 50;
const SPEEDUP_FRAMES: usize = 8192;
const SPEEDUP_RUNS: usize = 10;
const MIN_SPEEDUP: f64 = 0.05;

type Outcome = Result<String, String>;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Plain GRU over a `[D x L]` sequence, gate rows stacked r, z, n.
fn plain_gru(x: &[Vec<f64>], p: &GruDirectionParams<f64>, hidden: usize) -> Vec<Vec<f64>> {
    let (wi, wh, bi, bh) = (p.w_ih.data(), p.w_hh.data(), p.b_ih.data(), p.b_hh.data());
    let d = x.first().map_or(0, Vec::len);
    let mut h = vec![0.0; hidden];
    let mut out = Vec::new();
    for xt in x {
        let gi = |row: usize| bi[row] + (0..d).map(|j| wi[row * d + j] * xt[j]).sum::<f64>();
        let gh = |row: usize| bh[row] + (0..hidden).map(|j| wh[row * hidden + j] * h[j]).sum::<f64>();
        let next: Vec<f64> = (0..hidden)
            .map(|u| {
                let r = sigmoid(gi(u) + gh(u));
                let z = sigmoid(gi(hidden + u) + gh(hidden + u));
                let n = (gi(2 * hidden + u) + r * gh(2 * hidden + u)).tanh();
                (1.0 - z) * n + z * h[u]
            })
            .collect();
        h = next;
        out.push(h.clone());
    }
    out
}

/// Dilated GRU oracle: split time into `k` interleaved subsequences, run a
/// plain GRU over each (reversed for the backward direction), interleave back.
fn interleaved_oracle(x: &Tensor<f64>, params: &DilatedGruParams<f64>) -> Vec<Vec<f64>> {
    let (d, t) = (x.shape()[0], x.shape()[1]);
    let (k, hsz) = (params.config.dilation, params.config.hidden_size);
    let dirs = params.directions();
    let mut out = vec![vec![0.0; t]; hsz * dirs.len()];
    for (di, p) in dirs.iter().enumerate() {
        for branch in 0..k.min(t) {
            let mut steps: Vec<usize> = (branch..t).step_by(k).collect();
            if di == 1 {
                steps.reverse();
            }
            let seq: Vec<Vec<f64>> = steps.iter().map(|&s| (0..d).map(|c| x.data()[c * t + s]).collect()).collect();
            for (hs, &s) in plain_gru(&seq, p, hsz).iter().zip(&steps) {
                for u in 0..hsz {
                    out[di * hsz + u][s] = hs[u];
                }
            }
        }
    }
    out
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for k in [1, 2, 4, 8] {
        for _ in 0..4 {
            let t = rng.gen_range(k..=64);
            let cfg = GruConfig {
                input_size: 5,
                hidden_size: 6,
                dilation: k,
                bidirectional: true,
            };
            let params = DilatedGruParams::<f64>::init(cfg, &mut rng).map_err(|e| e.to_string())?;
            let x = random(&[5, t], &mut rng);
            let got = dilated_gru_parallel_forward(&x, &params, k).map_err(|e| e.to_string())?;
            let want = interleaved_oracle(&x, &params);
            for (row, w) in want.iter().enumerate() {
                for s in 0..t {
                    worst = worst.max((got.data()[row * t + s] - w[s]).abs());
                }
            }
        }
    }
    let line = format!("max abs diff {worst:.2e} (tol {GRU_EQUIVALENCE_TOL:.0e})");
    if worst <= GRU_EQUIVALENCE_TOL {
        Ok(line)
    } else {
        Err(line)
    }
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut parts = Vec::new();
    let mut pass = true;
    let mut record = |name: &str, err: f64| {
        pass &= err <= GRAD_REL_TOL;
        parts.push(format!("{name} {err:.2e}"));
    };
    let e = |r: d2net::Result<d2net::numerics::GradCheckReport>| r.map_err(|e| e.to_string());

    // Dilated GRU, bidirectional, k = 2
    let cfg = GruConfig {
        input_size: 4,
        hidden_size: 3,
        dilation: 2,
        bidirectional: true,
    };
    let gp = DilatedGruParams::<f64>::init(cfg, &mut rng).map_err(|e| e.to_string())?;
    let mut inputs = vec![random(&[4, 8], &mut rng)];
    for d in gp.directions() {
        inputs.extend(d.tensors().into_iter().cloned());
    }
    let gru_loss = |tape: &mut Tape<'_, f64>, v: &[Var]| {
        let y = dilated_gru(tape, v[0], &[[v[1], v[2], v[3], v[4]], [v[5], v[6], v[7], v[8]]], cfg, 1)?;
        let sq = ops::mul(tape, y, y)?;
        ops::sum(tape, sq)
    };
    record("dilated_gru", e(grad_check_inputs(gru_loss, &inputs, FD_STEP, None))?.max_rel_error);

    // weight-normed grouped dilated conv
    let geo = ConvGeometry::new(8, 8, 3, 2, 4);
    let inputs = vec![
        random(&[8, 12], &mut rng),
        random(&geo.weight_shape(), &mut rng),
        random(&[8], &mut rng),
        random(&[8], &mut rng),
    ];
    let conv_loss = |tape: &mut Tape<'_, f64>, v: &[Var]| {
        let y = weight_normed_conv(tape, v[0], v[1], v[2], v[3], geo)?;
        let sq = ops::mul(tape, y, y)?;
        ops::sum(tape, sq)
    };
    record("grouped_conv", e(grad_check_inputs(conv_loss, &inputs, FD_STEP, None))?.max_rel_error);

    // one full block
    let block_cfg = ModelConfig {
        freq_bins: 5,
        channels: 8,
        num_blocks: 1,
        conv_dilations: vec![2],
        gru_dilations: vec![2],
        groups: 2,
        kernel: 3,
        sources: vec!["a".into(), "b".into()],
        block_variant: BlockVariant::DgruDgconv,
    };
    let bp = D2Net::<f64>::init(block_cfg.clone(), 7).map_err(|e| e.to_string())?.block_params(0).map_err(|e| e.to_string())?;
    let mut inputs = vec![random(&[8, 10], &mut rng)];
    inputs.extend(bp.tensors().into_iter().cloned());
    let target = random(&[8, 10], &mut rng);
    let block_loss = |tape: &mut Tape<'_, f64>, v: &[Var]| {
        let y = d2_block(tape, v[0], &bp, &v[1..], 1)?;
        let t = tape.constant(target.clone());
        ops::mse(tape, y, t)
    };
    record("d2_block", e(grad_check_inputs(block_loss, &inputs, FD_STEP, None))?.max_rel_error);

    // desk network end to end: one random unit direction per parameter tensor
    let net = D2Net::<f32>::init(ModelConfig::desk(), 9).map_err(|e| e.to_string())?.cast::<f64>();
    let x = Tensor::from_fn(&[65, 6], |_| rng.gen_range(0.0..2.0));
    let target = Tensor::from_fn(&[260, 6], |_| rng.gen_range(0.0..2.0));
    let net_loss = |tape: &mut Tape<'_, f64>, v: &[Var]| {
        let xv = tape.constant(x.clone());
        let tv = tape.constant(target.clone());
        let y = net.forward_on_tape(tape, v, xv, 1)?;
        ops::mse(tape, y, tv)
    };
    let directions: Vec<Option<Tensor<f64>>> = net
        .params()
        .iter()
        .map(|p| {
            let u = random(p.shape(), &mut rng);
            let norm = u.data().iter().map(|v| v * v).sum::<f64>().sqrt();
            Some(Tensor::from_fn(p.shape(), |j| u.data()[j] / norm))
        })
        .collect();
    let errs = grad_check_directions(&net_loss, net.params(), &directions, FD_STEP).map_err(|e| e.to_string())?;
    record("desk_network", errs.iter().fold(0.0, |m: f64, &v| m.max(v)));

    // single coordinates, for reference only: near-zero entries make the
    // central difference rounding-bound
    let coords: Vec<(usize, usize)> = (0..64)
        .map(|_| {
            let i = rng.gen_range(0..net.params().len());
            (i, rng.gen_range(0..net.params()[i].numel()))
        })
        .collect();
    let coord = e(grad_check_inputs(net_loss, net.params(), FD_STEP, Some(&coords)))?;
    parts.push(format!("(desk 64 single coordinates {:.2e}, informational)", coord.max_rel_error));

    let line = format!("{} (tol {GRAD_REL_TOL:.0e})", parts.join(", "));
    if pass {
        Ok(line)
    } else {
        Err(line)
    }
}

fn criterion_3() -> Outcome {
    let cfg = ModelConfig::paper();
    cfg.validate().map_err(|e| e.to_string())?;
    let rows = cfg.layer_table();
    let got: Vec<(String, usize, usize, usize)> =
        rows.iter().map(|r| (r.kind.clone(), r.input, r.output, r.groups)).collect();
    let want: Vec<(String, usize, usize, usize)> = vec![
        ("1D Conv (3, 1)".into(), 2049, 2048, 1),
        ("Dilated GRU (k=2)".into(), 2048, 2048, 1),
        ("1D Conv (3, 2)".into(), 2048, 2048, 32),
        ("Dilated GRU (k=2)".into(), 2048, 2048, 1),
        ("1D Conv (3, 4)".into(), 2048, 2048, 32),
        ("Dilated GRU (k=2)".into(), 2048, 2048, 1),
        ("1D Conv (3, 8)".into(), 2048, 2048, 32),
        ("1D Conv (3, 1)".into(), 2048, 4 * 2049, 1),
    ];
    if got != want {
        return Err(format!("layer table mismatch: {got:?}"));
    }
    let per_group = (0..3).all(|b| {
        let g = cfg.block_conv(b);
        g.in_per_group() == 64 && g.out_per_group() == 64 && g.weight_shape() == [2048, 64, 3]
    });
    if !per_group {
        return Err("block convolutions are not 32 groups of 64 -> 64".into());
    }
    Ok(format!(
        "2049->2048->(3x2048)->4x2049, 32 groups of 64, dilations 2/4/8, {} parameters",
        cfg.param_count()
    ))
}

fn criterion_4() -> Outcome {
    let cfg = StftConfig::paper();
    let frames = cfg.frames(3 * 60 * 44_100);
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let x: Vec<f64> = (0..44_100).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let y = istft(&stft(&x, cfg).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?.remove(0);
    let err: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let rel = err / x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let line = format!("round trip rel L2 {rel:.2e} (tol {STFT_ROUND_TRIP_TOL:.0e}), 3 min at 44.1 kHz -> {frames} frames");
    if rel < STFT_ROUND_TRIP_TOL && frames == THREE_MINUTE_FRAMES && y.len() == x.len() {
        Ok(line)
    } else {
        Err(line)
    }
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let x: Vec<Vec<f64>> = (0..2).map(|_| (0..6000).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let mix: Spectrogram = d2net::dsp::Stft::new(StftConfig::desk())
        .and_then(|s| s.analyse(&x))
        .map_err(|e| e.to_string())?;
    let n = mix.bins * mix.frames;
    let est: Vec<Vec<Vec<f64>>> = (0..4)
        .map(|s| {
            (0..2)
                .map(|_| (0..n).map(|i| if (i + s) % 11 == 0 { 0.0 } else { rng.gen_range(0.0..4.0) }).collect())
                .collect()
        })
        .collect();
    let mut mask_err: f64 = 0.0;
    let mut in_range = true;
    for c in 0..2 {
        let refs: Vec<&[f64]> = est.iter().map(|s| s[c].as_slice()).collect();
        let masks = wiener_masks(&refs).map_err(|e| e.to_string())?;
        for i in 0..n {
            let sum: f64 = masks.iter().map(|m| m[i]).sum();
            mask_err = mask_err.max((sum - 1.0).abs());
            in_range &= masks.iter().all(|m| (0.0..=1.0).contains(&m[i]));
        }
    }
    let parts = wiener_filter(&est, &mix).map_err(|e| e.to_string())?;
    let (mut err, mut norm) = (0.0, 0.0);
    for c in 0..2 {
        for i in 0..n {
            let total: Complex64 = parts.iter().map(|p| p.channels[c][i]).sum();
            err += (total - mix.channels[c][i]).norm_sqr();
            norm += mix.channels[c][i].norm_sqr();
        }
    }
    let rel = (err / norm).sqrt();
    let line = format!("masks in [0,1]: {in_range}, max |sum-1| {mask_err:.1e}, reconstruction rel {rel:.1e} (tol {WIENER_TOL:.0e})");
    if in_range && mask_err < WIENER_TOL && rel < WIENER_TOL {
        Ok(line)
    } else {
        Err(line)
    }
}

struct Trained {
    checkpoint: Checkpoint,
    initial_loss: f64,
    final_loss: f64,
    seconds: f64,
}

fn desk_config(out: &std::path::Path) -> RunConfig {
    let mut cfg = RunConfig::preset(Preset::Desk);
    cfg.synth = true;
    cfg.synth_tracks = DESK_TRACKS;
    cfg.train.epochs = DESK_EPOCHS;
    cfg.train.seed = 7;
    cfg.out = out.to_path_buf();
    cfg
}

fn train_desk(dir: &std::path::Path) -> Result<Trained, String> {
    let cfg = desk_config(&dir.join("desk.ckpt"));
    let corpus = synth_corpus(cfg.train.seed, cfg.synth_tracks, cfg.synth_seconds).map_err(|e| e.to_string())?;
    let t0 = Instant::now();
    let out = train(&cfg, &corpus, Some(&dir.join("desk.log")), |_| {}).map_err(|e| e.to_string())?;
    Ok(Trained {
        initial_loss: out.initial_loss(),
        final_loss: out.final_loss(),
        checkpoint: out.checkpoint,
        seconds: t0.elapsed().as_secs_f64(),
    })
}

fn eval_corpus() -> Result<Vec<d2net::data::SourceSet>, String> {
    let cfg = desk_config(std::path::Path::new("unused"));
    synth_corpus(cfg.eval_seed, cfg.eval_tracks, cfg.synth_seconds).map_err(|e| e.to_string())
}

fn criterion_6(trained: &Trained) -> Outcome {
    let corpus = eval_corpus()?;
    let net = trained.checkpoint.network().map_err(|e| e.to_string())?;
    let model = evaluate_model(&net, &trained.checkpoint.stft, &corpus, 1).map_err(|e| e.to_string())?;
    let base = evaluate_mixture_baseline(&corpus).map_err(|e| e.to_string())?;
    let mut pass = true;
    let mut parts = Vec::new();
    for (m, b) in model.medians.iter().zip(&base.medians) {
        let gain = m.sdr - b.sdr;
        pass &= gain >= SDR_MARGIN_DB;
        parts.push(format!("{} {:.2} dB (mix {:.2}, +{:.2})", m.source, m.sdr, b.sdr, gain));
    }
    let line = format!(
        "{}; held-out {} tracks; train loss {:.4} -> {:.4}; best epoch {}; {:.0} s",
        parts.join(", "),
        corpus.len(),
        trained.initial_loss,
        trained.final_loss,
        trained.checkpoint.meta.epoch,
        trained.seconds
    );
    if pass {
        Ok(line)
    } else {
        Err(line)
    }
}

fn criterion_7() -> Outcome {
    let rows = bench(&ModelConfig::desk(), &[1, 2], &[1, 2], &[SPEEDUP_FRAMES], SPEEDUP_RUNS, 0).map_err(|e| e.to_string())?;
    let cell = |d, w| rows.iter().find(|r| r.dilation == d && r.workers == w).map(|r| r.median_ms).unwrap_or(f64::NAN);
    let serial = cell(1, 1);
    let parallel = cell(2, 2);
    let reduction = 1.0 - parallel / serial;
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let line = format!(
        "k=1/serial {serial:.1} ms, k=2/2 workers {parallel:.1} ms, k=2/serial {:.1} ms, k=1/2 workers {:.1} ms: reduction {:.1}% (need {:.0}%), {cores} core(s) available",
        cell(2, 1),
        cell(1, 2),
        100.0 * reduction,
        100.0 * MIN_SPEEDUP
    );
    if reduction >= MIN_SPEEDUP {
        Ok(line)
    } else {
        Err(line)
    }
}

fn criterion_8(trained: &Trained) -> Outcome {
    // SDR on the training mixtures, as in the block-removal analysis
    let cfg = desk_config(std::path::Path::new("unused"));
    let corpus = synth_corpus(cfg.train.seed, 6, cfg.synth_seconds).map_err(|e| e.to_string())?;
    let n = trained.checkpoint.model.num_blocks;
    let rows = ablate(&trained.checkpoint, &corpus, &(0..=n).collect::<Vec<_>>(), 1).map_err(|e| e.to_string())?;
    let finite = rows.iter().all(|r| r.sdr.is_finite() && r.rms.is_finite());
    let mut pass = finite;
    let mut parts = Vec::new();
    for src in &trained.checkpoint.model.sources {
        let at = |k| rows.iter().find(|r| r.keep == k && &r.source == src).map_or(f64::NAN, |r| r.sdr);
        let (none, all) = (at(0), at(n));
        pass &= all > none;
        parts.push(format!("{src} {none:.2}->{all:.2}"));
    }
    let line = format!("SDR keep 0 -> keep {n}: {}; finite outputs: {finite}", parts.join(", "));
    if pass {
        Ok(line)
    } else {
        Err(line)
    }
}

fn criterion_9(dir: &std::path::Path) -> Outcome {
    let corpus = synth_corpus(909, 6, 10.0).map_err(|e| e.to_string())?;
    let held_out = synth_corpus(910, 2, 10.0).map_err(|e| e.to_string())?;
    let mut cases: Vec<(String, RunConfig)> = Vec::new();
    for v in BlockVariant::ALL {
        let mut cfg = desk_config(&dir.join(format!("{v}.ckpt")));
        cfg.model.block_variant = v;
        cases.push((v.to_string(), cfg));
    }
    let mut cfg = desk_config(&dir.join("dil248.ckpt"));
    cfg.set_blocks(3);
    cfg.model.gru_dilations = vec![2, 4, 8];
    cases.push(("gru_dilations=2,4,8".into(), cfg));

    let mut parts = Vec::new();
    for (name, mut cfg) in cases {
        cfg.train.epochs = 1;
        let out = train(&cfg, &corpus, None, |_| {}).map_err(|e| format!("{name}: {e}"))?;
        let net = out.checkpoint.network().map_err(|e| format!("{name}: {e}"))?;
        let report = evaluate_model(&net, &cfg.stft, &held_out, 1).map_err(|e| format!("{name}: {e}"))?;
        if !report.medians.iter().all(|m| m.sdr.is_finite()) || !out.final_loss().is_finite() {
            return Err(format!("{name}: non-finite result"));
        }
        let mean = report.medians.iter().map(|m| m.sdr).sum::<f64>() / report.medians.len() as f64;
        parts.push(format!("{name} {mean:.2} dB"));
    }
    Ok(format!("mean median SDR after 1 epoch: {}", parts.join(", ")))
}

fn report(id: usize, name: &str, outcome: Outcome, failures: &mut Vec<usize>) {
    match outcome {
        Ok(detail) => println!("criterion {id} [{name}]: PASS - {detail}"),
        Err(detail) => {
            println!("criterion {id} [{name}]: FAIL - {detail}");
            failures.push(id);
        }
    }
}

fn main() {
    // `cargo test` passes harness flags such as --list; nothing to enumerate
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let dir = tempfile::tempdir().expect("temp dir");
    let mut failures = Vec::new();
    report(1, "dilated GRU equivalence", criterion_1(), &mut failures);
    report(2, "gradient correctness", criterion_2(), &mut failures);
    report(3, "paper-scale structure", criterion_3(), &mut failures);
    report(4, "STFT pipeline", criterion_4(), &mut failures);
    report(5, "Wiener conservation", criterion_5(), &mut failures);
    // timing runs before training so nothing else competes for the cores
    report(7, "parallel speedup", criterion_7(), &mut failures);
    match train_desk(dir.path()) {
        Ok(trained) => {
            report(6, "desk-scale separation", criterion_6(&trained), &mut failures);
            report(8, "ablation trend", criterion_8(&trained), &mut failures);
        }
        Err(e) => {
            report(6, "desk-scale separation", Err(format!("training failed: {e}")), &mut failures);
            report(8, "ablation trend", Err(format!("training failed: {e}")), &mut failures);
        }
    }
    report(9, "variant coverage", criterion_9(dir.path()), &mut failures);
    if failures.is_empty() {
        println!("acceptance: all 9 criteria passed");
    } else {
        println!("acceptance: failed criteria {failures:?}");
        std::process::exit(1);
    }
}
