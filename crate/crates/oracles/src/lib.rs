//! Reference implementations written as plain scalar loops, used as oracles
//! by the test suites. Everything here is deliberately naive and independent
//! of the production code paths it checks: direct DFT summation, explicit
//! per-gate recurrent loops, full-table edit distance, and a central
//! finite-difference driver.

/// One-sided magnitude spectrum of `samples` by direct DFT summation.
/// `samples` shorter than `fft_size` are treated as zero-padded.
pub fn dft_magnitudes(samples: &[f64], fft_size: usize) -> Vec<f64> {
    let bins = fft_size / 2 + 1;
    let mut out = Vec::with_capacity(bins);
    for k in 0..bins {
        let mut re = 0.0f64;
        let mut im = 0.0f64;
        for (n, &x) in samples.iter().enumerate() {
            let phase = -2.0 * std::f64::consts::PI * k as f64 * n as f64 / fft_size as f64;
            re += x * phase.cos();
            im += x * phase.sin();
        }
        out.push((re * re + im * im).sqrt());
    }
    out
}

/// Log mel-filterbank by explicit double loop over filters and bins.
/// `mag` is `frames x bins` row-major, `weights` is `bins x n_mels`.
pub fn log_fbank_loop(
    mag: &[f64],
    frames: usize,
    bins: usize,
    weights: &[f64],
    n_mels: usize,
    floor: f64,
) -> Vec<f64> {
    let mut out = vec![0.0; frames * n_mels];
    for t in 0..frames {
        for j in 0..n_mels {
            let mut acc = 0.0;
            for k in 0..bins {
                acc += mag[t * bins + k] * weights[k * n_mels + j];
            }
            out[t * n_mels + j] = if acc > floor { acc.ln() } else { floor.ln() };
        }
    }
    out
}

/// Plain `m x k . k x n` matrix product, triple loop.
pub fn matmul_loop(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One LSTM direction by explicit per-gate loops.
///
/// `w_x` is `input_dim x 4H`, `w_h` is `H x 4H`, `b` is `4H`, with gate
/// columns blocked in the order input, forget, cell, output. Initial hidden
/// and cell states are zero. Returns the `T x H` hidden sequence in input
/// frame order (the pass itself runs reversed when `reverse` is set).
pub fn lstm_direction_loop(
    input: &[f64],
    frames: usize,
    input_dim: usize,
    hidden: usize,
    w_x: &[f64],
    w_h: &[f64],
    b: &[f64],
    reverse: bool,
) -> Vec<f64> {
    let h4 = 4 * hidden;
    assert_eq!(w_x.len(), input_dim * h4);
    assert_eq!(w_h.len(), hidden * h4);
    assert_eq!(b.len(), h4);
    let mut out = vec![0.0; frames * hidden];
    let mut h = vec![0.0f64; hidden];
    let mut c = vec![0.0f64; hidden];
    let order: Vec<usize> = if reverse {
        (0..frames).rev().collect()
    } else {
        (0..frames).collect()
    };
    for t in order {
        let x = &input[t * input_dim..(t + 1) * input_dim];
        let mut z = b.to_vec();
        for g in 0..h4 {
            for (i, &xi) in x.iter().enumerate() {
                z[g] += xi * w_x[i * h4 + g];
            }
            for (j, &hj) in h.iter().enumerate() {
                z[g] += hj * w_h[j * h4 + g];
            }
        }
        let mut new_h = vec![0.0; hidden];
        let mut new_c = vec![0.0; hidden];
        for u in 0..hidden {
            let i_gate = sigmoid(z[u]);
            let f_gate = sigmoid(z[hidden + u]);
            let g_cell = z[2 * hidden + u].tanh();
            let o_gate = sigmoid(z[3 * hidden + u]);
            new_c[u] = f_gate * c[u] + i_gate * g_cell;
            new_h[u] = o_gate * new_c[u].tanh();
        }
        h = new_h;
        c = new_c;
        out[t * hidden..(t + 1) * hidden].copy_from_slice(&h);
    }
    out
}

/// Weights of one bidirectional LSTM layer for [`blstm_layer_loop`].
pub struct BlstmLayerWeights<'a> {
    pub fwd_w_x: &'a [f64],
    pub fwd_w_h: &'a [f64],
    pub fwd_b: &'a [f64],
    pub bwd_w_x: &'a [f64],
    pub bwd_w_h: &'a [f64],
    pub bwd_b: &'a [f64],
}

/// One BLSTM layer: forward and reversed passes concatenated per frame,
/// output `T x 2H`.
pub fn blstm_layer_loop(
    input: &[f64],
    frames: usize,
    input_dim: usize,
    hidden: usize,
    w: &BlstmLayerWeights,
) -> Vec<f64> {
    let fwd = lstm_direction_loop(
        input, frames, input_dim, hidden, w.fwd_w_x, w.fwd_w_h, w.fwd_b, false,
    );
    let bwd = lstm_direction_loop(
        input, frames, input_dim, hidden, w.bwd_w_x, w.bwd_w_h, w.bwd_b, true,
    );
    let mut out = vec![0.0; frames * 2 * hidden];
    for t in 0..frames {
        out[t * 2 * hidden..t * 2 * hidden + hidden]
            .copy_from_slice(&fwd[t * hidden..(t + 1) * hidden]);
        out[t * 2 * hidden + hidden..(t + 1) * 2 * hidden]
            .copy_from_slice(&bwd[t * hidden..(t + 1) * hidden]);
    }
    out
}

/// One gated-recurrent-fusion step by explicit loops, frame by frame:
/// reset and update gates from the concatenated (input, hidden) rows, a
/// tanh candidate from (input, reset * hidden), and the convex blend
/// `z * h + (1 - z) * candidate`.
///
/// Weight matrices are `(input_dim + hidden) x hidden` row-major; biases
/// have length `hidden`.
#[allow(clippy::too_many_arguments)]
pub fn grf_step_loop(
    input: &[f64],
    hidden_state: &[f64],
    frames: usize,
    input_dim: usize,
    hidden: usize,
    w_reset: &[f64],
    b_reset: &[f64],
    w_update: &[f64],
    b_update: &[f64],
    w_cand: &[f64],
    b_cand: &[f64],
) -> Vec<f64> {
    let cat = input_dim + hidden;
    assert_eq!(w_reset.len(), cat * hidden);
    assert_eq!(w_update.len(), cat * hidden);
    assert_eq!(w_cand.len(), cat * hidden);
    let mut out = vec![0.0; frames * hidden];
    for t in 0..frames {
        let x = &input[t * input_dim..(t + 1) * input_dim];
        let h = &hidden_state[t * hidden..(t + 1) * hidden];
        let mut concat = Vec::with_capacity(cat);
        concat.extend_from_slice(x);
        concat.extend_from_slice(h);
        let mut reset = vec![0.0; hidden];
        let mut update = vec![0.0; hidden];
        for u in 0..hidden {
            let mut zr = b_reset[u];
            let mut zu = b_update[u];
            for (i, &ci) in concat.iter().enumerate() {
                zr += ci * w_reset[i * hidden + u];
                zu += ci * w_update[i * hidden + u];
            }
            reset[u] = sigmoid(zr);
            update[u] = sigmoid(zu);
        }
        let mut gated = Vec::with_capacity(cat);
        gated.extend_from_slice(x);
        for u in 0..hidden {
            gated.push(reset[u] * h[u]);
        }
        for u in 0..hidden {
            let mut zc = b_cand[u];
            for (i, &gi) in gated.iter().enumerate() {
                zc += gi * w_cand[i * hidden + u];
            }
            let cand = zc.tanh();
            out[t * hidden + u] = update[u] * h[u] + (1.0 - update[u]) * cand;
        }
    }
    out
}

/// Row softmax by explicit loop with max subtraction.
pub fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Scaled dot-product attention by scalar loops. `mask`, when given, is
/// `q_len x k_len` row-major with `true` meaning the position is blocked.
pub fn attention_loop(
    q: &[f64],
    q_len: usize,
    k: &[f64],
    v: &[f64],
    k_len: usize,
    d_k: usize,
    d_v: usize,
    mask: Option<&[bool]>,
) -> Vec<f64> {
    let scale = 1.0 / (d_k as f64).sqrt();
    let mut out = vec![0.0; q_len * d_v];
    for i in 0..q_len {
        let mut scores = vec![0.0f64; k_len];
        for j in 0..k_len {
            let mut dot = 0.0;
            for p in 0..d_k {
                dot += q[i * d_k + p] * k[j * d_k + p];
            }
            scores[j] = dot * scale;
            if let Some(m) = mask {
                if m[i * k_len + j] {
                    scores[j] = f64::NEG_INFINITY;
                }
            }
        }
        let weights = softmax_row(&scores);
        for j in 0..k_len {
            for p in 0..d_v {
                out[i * d_v + p] += weights[j] * v[j * d_v + p];
            }
        }
    }
    out
}

/// Position-wise feed-forward by scalar loops: `relu(x W1 + b1) W2 + b2`.
pub fn ffn_loop(
    x: &[f64],
    rows: usize,
    d_model: usize,
    d_ff: usize,
    w1: &[f64],
    b1: &[f64],
    w2: &[f64],
    b2: &[f64],
) -> Vec<f64> {
    let mut out = vec![0.0; rows * d_model];
    for t in 0..rows {
        let mut hidden = vec![0.0; d_ff];
        for j in 0..d_ff {
            let mut acc = b1[j];
            for i in 0..d_model {
                acc += x[t * d_model + i] * w1[i * d_ff + j];
            }
            hidden[j] = acc.max(0.0);
        }
        for o in 0..d_model {
            let mut acc = b2[o];
            for j in 0..d_ff {
                acc += hidden[j] * w2[j * d_model + o];
            }
            out[t * d_model + o] = acc;
        }
    }
    out
}

/// Levenshtein distance with the full DP table materialized.
pub fn levenshtein_full_table(a: &[char], b: &[char]) -> usize {
    let (n, m) = (a.len(), b.len());
    let mut dp = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in dp.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        dp[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = dp[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            let del = dp[i - 1][j] + 1;
            let ins = dp[i][j - 1] + 1;
            dp[i][j] = sub.min(del).min(ins);
        }
    }
    dp[n][m]
}

/// Central finite-difference gradient of a scalar function at `x`.
pub fn central_difference<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe);
        probe[i] = orig - h;
        let down = f(&probe);
        probe[i] = orig;
        grad.push((up - down) / (2.0 * h));
    }
    grad
}

/// Relative error between two values with an absolute floor for tiny pairs.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(floor);
    (a - b).abs() / denom
}

/// Largest pairwise [`rel_err`] between two gradient vectors.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| rel_err(*x, *y, floor))
        .fold(0.0, f64::max)
}

/// All token sequences over `alphabet` with length 1..=max_len.
pub fn all_sequences(alphabet: &[usize], max_len: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    let mut frontier: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for seq in &frontier {
            for &t in alphabet {
                let mut s = seq.clone();
                s.push(t);
                out.push(s.clone());
                next.push(s);
            }
        }
        frontier = next;
    }
    out
}
