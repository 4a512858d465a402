use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::cli::config::RunConfig;
use crate::data::{load_corpus, make_batches, shuffle_augment, split_validation, synth_corpus, Batch, SourceSet};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, D2Net, TrainingMeta};
use crate::numerics::{adam_step, clip_grad_norm, ops, AdamConfig, AdamState, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    /// 0 is the untrained model.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Mean pre-clip gradient norm over the epoch's updates.
    pub grad_norm: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Weights from the epoch with the lowest validation loss.
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochLog>,
}

impl TrainOutcome {
    pub fn initial_loss(&self) -> f64 {
        self.history[0].train_loss
    }

    pub fn final_loss(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |e| e.train_loss)
    }
}

/// The synthetic corpus or the directory named in the config.
pub fn training_corpus(cfg: &RunConfig) -> Result<Vec<SourceSet>> {
    match (&cfg.corpus, cfg.synth) {
        (_, true) => synth_corpus(cfg.train.seed, cfg.synth_tracks, cfg.synth_seconds),
        (Some(path), false) => load_corpus(path),
        (None, false) => Err(Error::invalid("no corpus: pass --synth or --corpus PATH")),
    }
}

/// Held-out synthetic tracks generated from `eval_seed`, or the corpus directory.
pub fn evaluation_corpus(cfg: &RunConfig) -> Result<Vec<SourceSet>> {
    match (&cfg.corpus, cfg.synth) {
        (_, true) => synth_corpus(cfg.eval_seed, cfg.eval_tracks.max(2), cfg.synth_seconds),
        (Some(path), false) => load_corpus(path),
        (None, false) => Err(Error::invalid("no corpus: pass --synth or --corpus PATH")),
    }
}

struct ExampleFailure {
    error: Error,
    max_activation: f64,
}

fn run_example<'a>(
    tape: &mut Tape<'a, f32>,
    net: &D2Net<f32>,
    vars: &[Var],
    x: &'a Tensor<f32>,
    y: &'a Tensor<f32>,
    want_grads: bool,
) -> Result<(f64, Vec<Vec<f32>>)> {
    let xv = tape.constant_ref(x);
    let yv = tape.constant_ref(y);
    let pred = net.forward_on_tape(tape, vars, xv, 1)?;
    let loss = ops::mse(tape, pred, yv)?;
    let value = tape.value(loss).data()[0] as f64;
    if !want_grads {
        return Ok((value, Vec::new()));
    }
    let mut grads = tape.backward(loss)?;
    let g = vars
        .iter()
        .zip(net.params())
        .map(|(&v, p)| grads.take(v).unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();
    Ok((value, g))
}

/// Loss and parameter gradients for one `(x, y)` pair.
fn example_grads(
    net: &D2Net<f32>,
    x: &Tensor<f32>,
    y: &Tensor<f32>,
    want_grads: bool,
) -> std::result::Result<(f64, Vec<Vec<f32>>), ExampleFailure> {
    let mut tape = if want_grads { Tape::new() } else { Tape::no_grad() };
    let vars: Vec<Var> = if want_grads {
        net.bind(&mut tape)
    } else {
        net.params().iter().map(|p| tape.constant_ref(p)).collect()
    };
    run_example(&mut tape, net, &vars, x, y, want_grads).map_err(|error| ExampleFailure {
        error,
        max_activation: tape.max_abs_activation(),
    })
}

/// Runs every example of a batch, spread over `workers` threads; results
/// come back in example order so the reduction is thread-count independent.
fn batch_pass(
    net: &D2Net<f32>,
    batch: &Batch,
    workers: usize,
    want_grads: bool,
) -> Vec<std::result::Result<(f64, Vec<Vec<f32>>), ExampleFailure>> {
    let n = batch.size();
    let workers = workers.clamp(1, n);
    if workers == 1 {
        return (0..n)
            .map(|b| {
                let (x, y) = batch.example(b);
                example_grads(net, &x, &y, want_grads)
            })
            .collect();
    }
    let chunk = n.div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..n)
            .step_by(chunk)
            .map(|start| {
                s.spawn(move || {
                    (start..(start + chunk).min(n))
                        .map(|b| {
                            let (x, y) = batch.example(b);
                            example_grads(net, &x, &y, want_grads)
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("training worker panicked"))
            .collect()
    })
}

/// Mean per-example loss over a set of batches, no gradients.
pub fn mean_loss(net: &D2Net<f32>, batches: &[Batch], workers: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0;
    for batch in batches {
        for r in batch_pass(net, batch, workers, false) {
            total += r.map_err(|f| f.error)?.0;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::invalid("no examples to evaluate"));
    }
    Ok(total / count as f64)
}

fn append_log(path: &Path, row: &EpochLog) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    if fresh {
        text.push_str("epoch\ttrain_loss\tval_loss\tgrad_norm\tseconds\n");
    }
    text.push_str(&format!(
        "{}\t{:.6e}\t{:.6e}\t{:.4e}\t{:.2}\n",
        row.epoch, row.train_loss, row.val_loss, row.grad_norm, row.seconds
    ));
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(epoch as u64)
}

/// MSE training with Adam. The best-validation checkpoint is written to
/// `cfg.out` whenever it improves, and one row per epoch is appended to `log`.
pub fn train(
    cfg: &RunConfig,
    corpus: &[SourceSet],
    log: Option<&Path>,
    mut progress: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (train_idx, val_idx) = split_validation(corpus.len(), cfg.train.validation_fraction)?;
    let train_set: Vec<SourceSet> = train_idx.iter().map(|&i| corpus[i].clone()).collect();
    let val_set: Vec<SourceSet> = val_idx.iter().map(|&i| corpus[i].clone()).collect();
    let val_batches: Vec<Batch> = make_batches(&val_set, &cfg.stft, &cfg.train, 0)?.collect::<Result<_>>()?;

    let seed = cfg.train.seed;
    let mut net = D2Net::<f32>::init(cfg.model.clone(), seed)?;
    let mut adam = AdamState::new(
        net.params(),
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
    );

    let started = Instant::now();
    let initial_train: Vec<Batch> = make_batches(&train_set, &cfg.stft, &cfg.train, 0)?.collect::<Result<_>>()?;
    let first = EpochLog {
        epoch: 0,
        train_loss: mean_loss(&net, &initial_train, cfg.workers)?,
        val_loss: mean_loss(&net, &val_batches, cfg.workers)?,
        grad_norm: 0.0,
        seconds: started.elapsed().as_secs_f64(),
    };
    drop(initial_train);
    let meta = |epoch, val_loss| TrainingMeta { epoch, val_loss, seed };
    let mut best = Checkpoint::new(&net, cfg.stft, meta(0, first.val_loss));
    best.save(&cfg.out)?;
    if let Some(p) = log {
        append_log(p, &first)?;
    }
    progress(&first);
    let mut history = vec![first];

    for epoch in 1..=cfg.train.epochs {
        let t0 = Instant::now();
        let remixed = shuffle_augment(&train_set, epoch_seed(seed, epoch))?;
        let (mut loss_sum, mut examples, mut norm_sum, mut updates) = (0.0, 0usize, 0.0, 0usize);
        for (b, batch) in make_batches(&remixed, &cfg.stft, &cfg.train, epoch_seed(seed ^ 0x5EED, epoch))?.enumerate() {
            let batch = batch?;
            let scale = 1.0 / batch.size() as f32;
            for p in net.params_mut() {
                p.zero_grad();
            }
            let results = batch_pass(&net, &batch, cfg.workers, true);
            let mut summed: Vec<Vec<f32>> = net.params().iter().map(|p| vec![0.0; p.numel()]).collect();
            for r in results {
                let (loss, grads) = r.map_err(|f| Error::Diverged {
                    epoch,
                    batch: b,
                    cause: f.error.to_string(),
                    max_activation: f.max_activation,
                })?;
                if !loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        batch: b,
                        cause: "non-finite loss".into(),
                        max_activation: f64::NAN,
                    });
                }
                loss_sum += loss;
                examples += 1;
                for (acc, g) in summed.iter_mut().zip(grads) {
                    acc.iter_mut().zip(g).for_each(|(a, v)| *a += v);
                }
            }
            for (p, g) in net.params_mut().iter_mut().zip(summed) {
                let g: Vec<f32> = g.into_iter().map(|v| v * scale).collect();
                p.accumulate_grad(&g)?;
            }
            let norm = clip_grad_norm(net.params_mut(), cfg.clip_norm.unwrap_or(f64::INFINITY));
            if !norm.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    cause: "non-finite gradient norm".into(),
                    max_activation: f64::NAN,
                });
            }
            norm_sum += norm;
            updates += 1;
            adam_step(net.params_mut(), &mut adam)?;
        }
        let row = EpochLog {
            epoch,
            train_loss: loss_sum / examples.max(1) as f64,
            val_loss: mean_loss(&net, &val_batches, cfg.workers)?,
            grad_norm: norm_sum / updates.max(1) as f64,
            seconds: t0.elapsed().as_secs_f64(),
        };
        if row.val_loss < best.meta.val_loss {
            best = Checkpoint::new(&net, cfg.stft, meta(epoch, row.val_loss));
            best.save(&cfg.out)?;
        }
        if let Some(p) = log {
            append_log(p, &row)?;
        }
        progress(&row);
        history.push(row);
    }
    for p in net.params_mut() {
        p.clear_grad();
    }
    Ok(TrainOutcome {
        checkpoint: best,
        history,
    })
}
