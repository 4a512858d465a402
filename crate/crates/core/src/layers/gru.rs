//! Dilated GRU: a GRU whose recurrence reads the state from `k` steps back.
//!
//! Gate equations (per direction, `k` = dilation):
//!
//! ```text
//! r_t = σ(W_ir x_t + b_ir + W_hr h_{t-k} + b_hr)
//! z_t = σ(W_iz x_t + b_iz + W_hz h_{t-k} + b_hz)
//! n_t = tanh(W_in x_t + b_in + r_t ⊙ (W_hn h_{t-k} + b_hn))
//! h_t = (1 - z_t) ⊙ n_t + z_t ⊙ h_{t-k}
//! ```
//!
//! Time steps split into `k` residue classes that never read each other's
//! state. Those branches are the unit of parallel work.

use std::thread;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::ops::sigmoid;
use crate::numerics::{dot, BackwardCtx, BackwardOp, MatMut, MatRef, Real, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GruConfig {
    pub input_size: usize,
    /// Hidden size per direction.
    pub hidden_size: usize,
    pub dilation: usize,
    pub bidirectional: bool,
}

impl GruConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dilation == 0 {
            return Err(Error::invalid("GRU dilation must be at least 1"));
        }
        if self.hidden_size == 0 || self.input_size == 0 {
            return Err(Error::invalid(format!("degenerate GRU {self:?}")));
        }
        Ok(())
    }

    pub fn directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }

    pub fn output_size(&self) -> usize {
        self.hidden_size * self.directions()
    }
}

/// Weights of one direction, gates stacked in `r, z, n` order.
#[derive(Clone, Debug, PartialEq)]
pub struct GruDirectionParams<F> {
    /// `[W_ir; W_iz; W_in]`, shape `[3H x D_in]`.
    pub w_ih: Tensor<F>,
    /// `[W_hr; W_hz; W_hn]`, shape `[3H x H]`.
    pub w_hh: Tensor<F>,
    /// `[b_ir; b_iz; b_in]`.
    pub b_ih: Tensor<F>,
    /// `[b_hr; b_hz; b_hn]`.
    pub b_hh: Tensor<F>,
}

impl<F: Real> GruDirectionParams<F> {
    pub fn init(input_size: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut uniform = |shape: &[usize], fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Tensor::from_fn(shape, |_| F::lit(rng.gen_range(-bound..bound)))
        };
        GruDirectionParams {
            w_ih: uniform(&[3 * hidden, input_size], input_size),
            w_hh: uniform(&[3 * hidden, hidden], hidden),
            b_ih: uniform(&[3 * hidden], hidden),
            b_hh: uniform(&[3 * hidden], hidden),
        }
    }

    pub fn zeros(input_size: usize, hidden: usize) -> Self {
        GruDirectionParams {
            w_ih: Tensor::zeros(&[3 * hidden, input_size]),
            w_hh: Tensor::zeros(&[3 * hidden, hidden]),
            b_ih: Tensor::zeros(&[3 * hidden]),
            b_hh: Tensor::zeros(&[3 * hidden]),
        }
    }

    pub fn tensors(&self) -> [&Tensor<F>; 4] {
        [&self.w_ih, &self.w_hh, &self.b_ih, &self.b_hh]
    }

    fn check(&self, cfg: &GruConfig) -> Result<()> {
        check_direction(cfg, &self.tensors())
    }
}

fn check_direction<F: Real>(cfg: &GruConfig, tensors: &[&Tensor<F>; 4]) -> Result<()> {
    let h3 = 3 * cfg.hidden_size;
    let expect: [&[usize]; 4] = [&[h3, cfg.input_size], &[h3, cfg.hidden_size], &[h3], &[h3]];
    for (t, e) in tensors.iter().zip(expect) {
        if t.shape() != e {
            return Err(Error::shape("dilated_gru", t.shape(), e));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DilatedGruParams<F> {
    pub config: GruConfig,
    pub forward: GruDirectionParams<F>,
    /// Independent parameters of the time-reversed direction.
    pub backward: Option<GruDirectionParams<F>>,
}

impl<F: Real> DilatedGruParams<F> {
    pub fn init(config: GruConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let forward = GruDirectionParams::init(config.input_size, config.hidden_size, rng);
        let backward = config
            .bidirectional
            .then(|| GruDirectionParams::init(config.input_size, config.hidden_size, rng));
        Ok(DilatedGruParams {
            config,
            forward,
            backward,
        })
    }

    pub fn directions(&self) -> Vec<&GruDirectionParams<F>> {
        std::iter::once(&self.forward).chain(&self.backward).collect()
    }

    fn check(&self) -> Result<()> {
        self.config.validate()?;
        if self.backward.is_some() != self.config.bidirectional {
            return Err(Error::invalid("backward parameters must match `bidirectional`"));
        }
        self.directions().iter().try_for_each(|d| d.check(&self.config))
    }
}

/// Initial hidden state of every branch: `[direction][branch] -> [H]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GruState<F> {
    pub branches: Vec<Vec<Vec<F>>>,
}

impl<F: Real> GruState<F> {
    pub fn zeros(config: &GruConfig) -> Self {
        GruState {
            branches: vec![
                vec![vec![F::zero(); config.hidden_size]; config.dilation];
                config.directions()
            ],
        }
    }

    fn check(&self, config: &GruConfig) -> Result<()> {
        let ok = self.branches.len() == config.directions()
            && self.branches.iter().all(|d| {
                d.len() == config.dilation && d.iter().all(|h| h.len() == config.hidden_size)
            });
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "initial state must hold {} directions x {} branches x {} units",
                config.directions(),
                config.dilation,
                config.hidden_size
            )))
        }
    }
}

/// Worker-count policy for branch recurrences.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Threads {
    /// At most this many, and never more than the available cores.
    Capped(usize),
    /// Exactly this many (bounded by the number of branches).
    Exact(usize),
}

impl Threads {
    fn resolve(self, branches: usize) -> usize {
        let want = match self {
            Threads::Capped(n) => {
                let hw = thread::available_parallelism().map_or(1, |c| c.get());
                n.min(hw)
            }
            Threads::Exact(n) => n,
        };
        want.max(1).min(branches.max(1))
    }
}

/// Saved activations of one direction, indexed by real time `t`.
#[derive(Clone, Debug, Default)]
struct DirCache<F> {
    r: Vec<F>,
    z: Vec<F>,
    n: Vec<F>,
    /// `W_hn h_{t-k} + b_hn`
    hn: Vec<F>,
    h_prev: Vec<F>,
}

/// Rows produced by one worker; `times[i]` owns row `i` of every buffer.
struct GroupOut<F> {
    times: Vec<usize>,
    h: Vec<F>,
    cache: Option<DirCache<F>>,
}

/// Borrowed description of one recurrence direction.
struct Recurrence<'p, F> {
    len: usize,
    hidden: usize,
    dilation: usize,
    reverse: bool,
    w_hh: &'p [F],
    b_hh: &'p [F],
}

impl<'p, F: Real> Recurrence<'p, F> {
    #[inline]
    fn time(&self, u: usize) -> usize {
        if self.reverse {
            self.len - 1 - u
        } else {
            u
        }
    }

    fn groups(&self, threads: Threads) -> Vec<Vec<usize>> {
        let eff = threads.resolve(self.dilation.min(self.len));
        let mut groups = vec![Vec::new(); eff];
        for j in 0..self.dilation.min(self.len) {
            groups[j % eff].push(j);
        }
        groups
    }

    /// Advances the given branches in lockstep.
    fn forward_group(&self, branches: &[usize], gi: &[F], h0: &[Vec<F>], keep: bool) -> GroupOut<F> {
        let (hd, k) = (self.hidden, self.dilation);
        let h3 = 3 * hd;
        let rows: usize = branches.iter().map(|&j| (self.len - j).div_ceil(k)).sum();
        let mut out = GroupOut {
            times: Vec::with_capacity(rows),
            h: Vec::with_capacity(rows * hd),
            cache: keep.then(|| DirCache {
                r: Vec::with_capacity(rows * hd),
                z: Vec::with_capacity(rows * hd),
                n: Vec::with_capacity(rows * hd),
                hn: Vec::with_capacity(rows * hd),
                h_prev: Vec::with_capacity(rows * hd),
            }),
        };
        let mut state: Vec<Vec<F>> = branches.iter().map(|&j| h0[j].clone()).collect();
        let mut gh = vec![F::zero(); branches.len() * h3];
        let mut step = 0;
        loop {
            let active: Vec<usize> = (0..branches.len())
                .filter(|&b| branches[b] + step * k < self.len)
                .collect();
            if active.is_empty() {
                break;
            }
            for row in 0..h3 {
                let w = &self.w_hh[row * hd..(row + 1) * hd];
                for &b in &active {
                    gh[b * h3 + row] = dot(w, &state[b]) + self.b_hh[row];
                }
            }
            for &b in &active {
                let t = self.time(branches[b] + step * k);
                let g = &gi[t * h3..(t + 1) * h3];
                let ghb = &gh[b * h3..(b + 1) * h3];
                let hp = &mut state[b];
                if let Some(c) = &mut out.cache {
                    c.h_prev.extend_from_slice(hp);
                    c.hn.extend_from_slice(&ghb[2 * hd..]);
                }
                for u in 0..hd {
                    let r = sigmoid(g[u] + ghb[u]);
                    let z = sigmoid(g[hd + u] + ghb[hd + u]);
                    let n = (g[2 * hd + u] + r * ghb[2 * hd + u]).tanh();
                    let h = (F::one() - z) * n + z * hp[u];
                    hp[u] = h;
                    if let Some(c) = &mut out.cache {
                        c.r.push(r);
                        c.z.push(z);
                        c.n.push(n);
                    }
                }
                out.h.extend_from_slice(hp);
                out.times.push(t);
            }
            step += 1;
        }
        out
    }

    fn run_forward(&self, gi: &[F], h0: &[Vec<F>], threads: Threads, keep: bool) -> (Vec<F>, Option<DirCache<F>>) {
        let groups = self.groups(threads);
        let outs: Vec<GroupOut<F>> = if groups.len() == 1 {
            vec![self.forward_group(&groups[0], gi, h0, keep)]
        } else {
            thread::scope(|s| {
                let handles: Vec<_> = groups[1..]
                    .iter()
                    .map(|g| s.spawn(move || self.forward_group(g, gi, h0, keep)))
                    .collect();
                let mut outs = vec![self.forward_group(&groups[0], gi, h0, keep)];
                outs.extend(handles.into_iter().map(|h| h.join().expect("GRU worker panicked")));
                outs
            })
        };

        let hd = self.hidden;
        let total = self.len * hd;
        let mut h = vec![F::zero(); total];
        let mut cache = keep.then(|| DirCache {
            r: vec![F::zero(); total],
            z: vec![F::zero(); total],
            n: vec![F::zero(); total],
            hn: vec![F::zero(); total],
            h_prev: vec![F::zero(); total],
        });
        for o in &outs {
            for (i, &t) in o.times.iter().enumerate() {
                let (dst, src) = (t * hd..(t + 1) * hd, i * hd..(i + 1) * hd);
                h[dst.clone()].copy_from_slice(&o.h[src.clone()]);
                if let (Some(c), Some(oc)) = (&mut cache, &o.cache) {
                    c.r[dst.clone()].copy_from_slice(&oc.r[src.clone()]);
                    c.z[dst.clone()].copy_from_slice(&oc.z[src.clone()]);
                    c.n[dst.clone()].copy_from_slice(&oc.n[src.clone()]);
                    c.hn[dst.clone()].copy_from_slice(&oc.hn[src.clone()]);
                    c.h_prev[dst].copy_from_slice(&oc.h_prev[src]);
                }
            }
        }
        (h, cache)
    }

    /// Backpropagation through time for a group of branches. Returns
    /// `(times, dgi rows, dgh rows)`.
    fn backward_group(
        &self,
        branches: &[usize],
        cache: &DirCache<F>,
        grad_h: &[F],
        w_hh_t: &[F],
    ) -> (Vec<usize>, Vec<F>, Vec<F>) {
        let (hd, k) = (self.hidden, self.dilation);
        let h3 = 3 * hd;
        let steps: Vec<usize> = branches.iter().map(|&j| (self.len - j).div_ceil(k)).collect();
        let rows: usize = steps.iter().sum();
        let mut times = Vec::with_capacity(rows);
        let mut dgi = Vec::with_capacity(rows * h3);
        let mut dgh = Vec::with_capacity(rows * h3);
        let mut carry = vec![vec![F::zero(); hd]; branches.len()];
        let mut row_gh = vec![F::zero(); branches.len() * h3];
        let max_steps = steps.iter().copied().max().unwrap_or(0);
        let mut dh = vec![F::zero(); hd];
        let mut gi_row = vec![F::zero(); h3];
        for step in (0..max_steps).rev() {
            let active: Vec<usize> = (0..branches.len()).filter(|&b| step < steps[b]).collect();
            for &b in &active {
                let t = self.time(branches[b] + step * k);
                let span = t * hd..(t + 1) * hd;
                let (r, z, n) = (&cache.r[span.clone()], &cache.z[span.clone()], &cache.n[span.clone()]);
                let (hn, hp) = (&cache.hn[span.clone()], &cache.h_prev[span.clone()]);
                let go = &grad_h[span];
                let gh_b = &mut row_gh[b * h3..(b + 1) * h3];
                for u in 0..hd {
                    dh[u] = go[u] + carry[b][u];
                    let dn = dh[u] * (F::one() - z[u]);
                    let dz = dh[u] * (hp[u] - n[u]);
                    let da_n = dn * (F::one() - n[u] * n[u]);
                    let dr = da_n * hn[u];
                    let da_r = dr * r[u] * (F::one() - r[u]);
                    let da_z = dz * z[u] * (F::one() - z[u]);
                    gi_row[u] = da_r;
                    gi_row[hd + u] = da_z;
                    gi_row[2 * hd + u] = da_n;
                    gh_b[u] = da_r;
                    gh_b[hd + u] = da_z;
                    gh_b[2 * hd + u] = da_n * r[u];
                    carry[b][u] = dh[u] * z[u];
                }
                times.push(t);
                dgi.extend_from_slice(&gi_row);
                dgh.extend_from_slice(gh_b);
            }
            // carry += W_hh^T dgh, with the transposed weights read row-wise
            for col in 0..hd {
                let wt = &w_hh_t[col * h3..(col + 1) * h3];
                for &b in &active {
                    carry[b][col] += dot(wt, &row_gh[b * h3..(b + 1) * h3]);
                }
            }
        }
        (times, dgi, dgh)
    }

    fn run_backward(&self, cache: &DirCache<F>, grad_h: &[F], threads: Threads) -> (Vec<F>, Vec<F>) {
        let (hd, h3) = (self.hidden, 3 * self.hidden);
        let mut w_hh_t = vec![F::zero(); hd * h3];
        for row in 0..h3 {
            for col in 0..hd {
                w_hh_t[col * h3 + row] = self.w_hh[row * hd + col];
            }
        }
        let groups = self.groups(threads);
        let outs = if groups.len() == 1 {
            vec![self.backward_group(&groups[0], cache, grad_h, &w_hh_t)]
        } else {
            let w_hh_t = &w_hh_t;
            thread::scope(|s| {
                let handles: Vec<_> = groups[1..]
                    .iter()
                    .map(|g| s.spawn(move || self.backward_group(g, cache, grad_h, w_hh_t)))
                    .collect();
                let mut outs = vec![self.backward_group(&groups[0], cache, grad_h, w_hh_t)];
                outs.extend(handles.into_iter().map(|h| h.join().expect("GRU worker panicked")));
                outs
            })
        };
        let mut dgi = vec![F::zero(); self.len * h3];
        let mut dgh = vec![F::zero(); self.len * h3];
        for (times, gi_rows, gh_rows) in outs {
            for (i, &t) in times.iter().enumerate() {
                dgi[t * h3..(t + 1) * h3].copy_from_slice(&gi_rows[i * h3..(i + 1) * h3]);
                dgh[t * h3..(t + 1) * h3].copy_from_slice(&gh_rows[i * h3..(i + 1) * h3]);
            }
        }
        (dgi, dgh)
    }
}

/// Input projections `gi[t] = W_ih x_t + b_ih`, time-major `[T x 3H]`.
fn input_projection<F: Real>(x: &[F], d_in: usize, len: usize, w_ih: &[F], b_ih: &[F]) -> Vec<F> {
    let h3 = b_ih.len();
    let mut gi = Vec::with_capacity(len * h3);
    for _ in 0..len {
        gi.extend_from_slice(b_ih);
    }
    F::gemm_raw(
        len,
        d_in,
        h3,
        F::one(),
        MatRef::transposed(x, 0, len),
        MatRef::transposed(w_ih, 0, d_in),
        F::one(),
        MatMut::row_major(&mut gi, 0, h3),
    );
    gi
}

struct DilatedGruOp<F> {
    config: GruConfig,
    len: usize,
    threads: Threads,
    caches: Vec<DirCache<F>>,
}

impl<F: Real> BackwardOp<F> for DilatedGruOp<F> {
    fn name(&self) -> &'static str {
        "dilated_gru"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, F>) -> Result<Vec<Option<Vec<F>>>> {
        let cfg = &self.config;
        let (hd, len, d_in) = (cfg.hidden_size, self.len, cfg.input_size);
        let h3 = 3 * hd;
        let x = ctx.inputs[0].data();
        let go = ctx.grad_output;
        let mut gx = ctx.needs[0].then(|| vec![F::zero(); d_in * len]);
        let mut grads: Vec<Option<Vec<F>>> = vec![None];

        for (dir, cache) in self.caches.iter().enumerate() {
            let base = 1 + 4 * dir;
            let w_ih = ctx.inputs[base].data();
            let w_hh = ctx.inputs[base + 1].data();
            let rec = Recurrence {
                len,
                hidden: hd,
                dilation: cfg.dilation,
                reverse: dir == 1,
                w_hh,
                b_hh: ctx.inputs[base + 3].data(),
            };
            let mut grad_h = vec![F::zero(); len * hd];
            for u in 0..hd {
                let src = &go[(dir * hd + u) * len..(dir * hd + u + 1) * len];
                for (t, &g) in src.iter().enumerate() {
                    grad_h[t * hd + u] = g;
                }
            }
            let (dgi, dgh) = rec.run_backward(cache, &grad_h, self.threads);

            let g_w_ih = ctx.needs[base].then(|| {
                let mut g = vec![F::zero(); h3 * d_in];
                F::gemm_raw(
                    h3,
                    len,
                    d_in,
                    F::one(),
                    MatRef::transposed(&dgi, 0, h3),
                    MatRef::transposed(x, 0, len),
                    F::zero(),
                    MatMut::row_major(&mut g, 0, d_in),
                );
                g
            });
            let g_w_hh = ctx.needs[base + 1].then(|| {
                let mut g = vec![F::zero(); h3 * hd];
                F::gemm_raw(
                    h3,
                    len,
                    hd,
                    F::one(),
                    MatRef::transposed(&dgh, 0, h3),
                    MatRef::row_major(&cache.h_prev, 0, hd),
                    F::zero(),
                    MatMut::row_major(&mut g, 0, hd),
                );
                g
            });
            let column_sums = |m: &[F]| {
                let mut s = vec![F::zero(); h3];
                for row in m.chunks(h3) {
                    s.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
                }
                s
            };
            let g_b_ih = ctx.needs[base + 2].then(|| column_sums(&dgi));
            let g_b_hh = ctx.needs[base + 3].then(|| column_sums(&dgh));
            if let Some(gx) = &mut gx {
                F::gemm_raw(
                    d_in,
                    h3,
                    len,
                    F::one(),
                    MatRef::transposed(w_ih, 0, d_in),
                    MatRef::transposed(&dgi, 0, h3),
                    F::one(),
                    MatMut::row_major(gx, 0, len),
                );
            }
            grads.extend([g_w_ih, g_w_hh, g_b_ih, g_b_hh]);
        }
        grads[0] = gx;
        Ok(grads)
    }
}

fn forward_impl<F: Real>(
    x: &Tensor<F>,
    config: &GruConfig,
    dirs: &[[&Tensor<F>; 4]],
    h0: Option<&GruState<F>>,
    threads: Threads,
    keep: bool,
) -> Result<(Tensor<F>, Vec<DirCache<F>>)> {
    config.validate()?;
    let (d_in, len) = x.dims2()?;
    if d_in != config.input_size {
        return Err(Error::shape("dilated_gru", x.shape(), &[config.input_size, len]));
    }
    if let Some(h0) = h0 {
        h0.check(config)?;
    }
    let hd = config.hidden_size;
    let zero_state = vec![vec![F::zero(); hd]; config.dilation];
    let mut out = vec![F::zero(); config.output_size() * len];
    let mut caches = Vec::new();
    for (dir, p) in dirs.iter().enumerate() {
        let gi = input_projection(x.data(), d_in, len, p[0].data(), p[2].data());
        let rec = Recurrence {
            len,
            hidden: hd,
            dilation: config.dilation,
            reverse: dir == 1,
            w_hh: p[1].data(),
            b_hh: p[3].data(),
        };
        let state = h0.map_or(&zero_state, |s| &s.branches[dir]);
        let (h, cache) = rec.run_forward(&gi, state, threads, keep);
        for u in 0..hd {
            let dst = &mut out[(dir * hd + u) * len..(dir * hd + u + 1) * len];
            for (t, v) in dst.iter_mut().enumerate() {
                *v = h[t * hd + u];
            }
        }
        caches.extend(cache);
    }
    Ok((Tensor::new(&[config.output_size(), len], out)?, caches))
}

/// Dilated GRU over `x: [D_in x T]`, one thread. Output is `[H x T]`, or
/// `[2H x T]` (forward rows first) when bidirectional.
pub fn dilated_gru_forward<F: Real>(
    x: &Tensor<F>,
    params: &DilatedGruParams<F>,
    h0: Option<&GruState<F>>,
) -> Result<Tensor<F>> {
    params.check()?;
    let dirs: Vec<[&Tensor<F>; 4]> = params.directions().iter().map(|d| d.tensors()).collect();
    Ok(forward_impl(x, &params.config, &dirs, h0, Threads::Capped(1), false)?.0)
}

/// Same result as [`dilated_gru_forward`], with branch recurrences spread
/// over up to `branch_workers` threads (capped at the dilation and the
/// machine's available parallelism).
pub fn dilated_gru_parallel_forward<F: Real>(
    x: &Tensor<F>,
    params: &DilatedGruParams<F>,
    branch_workers: usize,
) -> Result<Tensor<F>> {
    if branch_workers == 0 {
        return Err(Error::invalid("branch_workers must be at least 1"));
    }
    params.check()?;
    let dirs: Vec<[&Tensor<F>; 4]> = params.directions().iter().map(|d| d.tensors()).collect();
    Ok(forward_impl(x, &params.config, &dirs, None, Threads::Capped(branch_workers), false)?.0)
}

/// Like [`dilated_gru_parallel_forward`] but spawns `min(threads, k)` workers
/// even when the machine has fewer cores.
pub fn dilated_gru_forward_with_threads<F: Real>(
    x: &Tensor<F>,
    params: &DilatedGruParams<F>,
    threads: usize,
) -> Result<Tensor<F>> {
    if threads == 0 {
        return Err(Error::invalid("threads must be at least 1"));
    }
    params.check()?;
    let dirs: Vec<[&Tensor<F>; 4]> = params.directions().iter().map(|d| d.tensors()).collect();
    Ok(forward_impl(x, &params.config, &dirs, None, Threads::Exact(threads), false)?.0)
}

/// Records a Dilated GRU on the tape. `dirs` holds `[w_ih, w_hh, b_ih, b_hh]`
/// per direction.
pub fn dilated_gru<'a, F: Real>(
    tape: &mut Tape<'a, F>,
    x: Var,
    dirs: &[[Var; 4]],
    config: GruConfig,
    workers: usize,
) -> Result<Var> {
    if dirs.len() != config.directions() {
        return Err(Error::invalid(format!(
            "expected {} GRU directions, got {}",
            config.directions(),
            dirs.len()
        )));
    }
    let mut inputs = vec![x];
    inputs.extend(dirs.iter().flatten().copied());
    let keep = tape.needs_backward(&inputs);
    let (out, caches) = {
        let tensors: Vec<[&Tensor<F>; 4]> = dirs
            .iter()
            .map(|d| [tape.value(d[0]), tape.value(d[1]), tape.value(d[2]), tape.value(d[3])])
            .collect();
        tensors.iter().try_for_each(|d| check_direction(&config, d))?;
        forward_impl(tape.value(x), &config, &tensors, None, Threads::Capped(workers), keep)?
    };
    let len = out.shape()[1];
    tape.record(
        &inputs,
        out,
        DilatedGruOp {
            config,
            len,
            threads: Threads::Capped(workers),
            caches,
        },
    )
}
