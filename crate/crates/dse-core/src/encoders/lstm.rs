//! LSTM cell and masked bidirectional runner.
//!
//! The default gate form feeds the previous cell state into every gate —
//! f, i, and the candidate read `[C_{t−1}, h_{t−1}, x_t]`, and the output
//! gate reads the *current* cell `[C_t, h_{t−1}, x_t]`:
//!
//! ```text
//! f_t = σ(W_f · [C_{t−1}, h_{t−1}, x_t] + b_f)
//! i_t = σ(W_i · [C_{t−1}, h_{t−1}, x_t] + b_i)
//! g_t = tanh(W_xc · [C_{t−1}, h_{t−1}, x_t] + b_c)
//! c_t = i_t ⊙ g_t + f_t ⊙ c_{t−1}
//! o_t = σ(W_o · [C_t, h_{t−1}, x_t] + b_o)
//! h_t = o_t ⊙ tanh(c_t)
//! ```
//!
//! [`LstmVariant::Standard`] is the textbook cell (gates over
//! `[h_{t−1}, x_t]` only) for comparison runs.
//!
//! Padding is handled by carry-through: at masked positions the new state
//! is discarded and the previous one passes unchanged, so the state after
//! the last step *is* the state at each row's last real token, and padded
//! steps contribute exactly zero gradient.

use rand_chacha::ChaCha8Rng;

use crate::params::{init_uniform, Bound, ParamStore};
use crate::tensor::{Tape, Tensor, TensorError, Var};

/// Gate wiring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LstmVariant {
    /// Cell state feeds every gate; the output gate sees the current cell.
    AsWritten,
    /// Textbook gates over `[h_{t−1}, x_t]`.
    Standard,
}

/// Dimensions and wiring of one direction's cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmSpec {
    pub input: usize,
    pub hidden: usize,
    pub variant: LstmVariant,
}

impl LstmSpec {
    /// Width of each gate's input concatenation.
    pub fn gate_input(&self) -> usize {
        match self.variant {
            LstmVariant::AsWritten => self.input + 2 * self.hidden,
            LstmVariant::Standard => self.input + self.hidden,
        }
    }

    /// Register the four gate weights (`uniform(−0.08, 0.08)`) and biases
    /// (zeros, except the forget bias at +1.0) under `prefix`.
    pub fn register(&self, store: &mut ParamStore, prefix: &str, rng: &mut ChaCha8Rng) {
        let (gi, h) = (self.gate_input(), self.hidden);
        for gate in ["w_f", "w_i", "w_xc", "w_o"] {
            store.insert(
                &format!("{prefix}.{gate}"),
                init_uniform(rng, gi, h, -0.08, 0.08),
            );
        }
        store.insert(&format!("{prefix}.b_f"), Tensor::filled(1, h, 1.0));
        for bias in ["b_i", "b_c", "b_o"] {
            store.insert(&format!("{prefix}.{bias}"), Tensor::zeros(1, h));
        }
    }

    /// Look up the tape handles registered under `prefix`.
    pub fn bind(&self, bound: &Bound, prefix: &str) -> LstmVars {
        LstmVars {
            w_f: bound.var(&format!("{prefix}.w_f")),
            w_i: bound.var(&format!("{prefix}.w_i")),
            w_xc: bound.var(&format!("{prefix}.w_xc")),
            w_o: bound.var(&format!("{prefix}.w_o")),
            b_f: bound.var(&format!("{prefix}.b_f")),
            b_i: bound.var(&format!("{prefix}.b_i")),
            b_c: bound.var(&format!("{prefix}.b_c")),
            b_o: bound.var(&format!("{prefix}.b_o")),
            variant: self.variant,
        }
    }
}

/// Tape handles for one direction's parameters.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w_f: Var,
    pub w_i: Var,
    pub w_xc: Var,
    pub w_o: Var,
    pub b_f: Var,
    pub b_i: Var,
    pub b_c: Var,
    pub b_o: Var,
    pub variant: LstmVariant,
}

fn gate(
    tape: &mut Tape,
    z: Var,
    w: Var,
    b: Var,
    squash: fn(&mut Tape, Var) -> Result<Var, TensorError>,
) -> Result<Var, TensorError> {
    let zw = tape.matmul(z, w)?;
    let pre = tape.add_row(zw, b)?;
    squash(tape, pre)
}

/// One step: `x` is `[B×D]`, states are `[B×H]`; returns `(h_t, c_t)`.
pub fn lstm_cell(
    tape: &mut Tape,
    vars: &LstmVars,
    x: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var), TensorError> {
    let z = match vars.variant {
        LstmVariant::AsWritten => tape.concat_cols(&[c_prev, h_prev, x])?,
        LstmVariant::Standard => tape.concat_cols(&[h_prev, x])?,
    };
    let f = gate(tape, z, vars.w_f, vars.b_f, Tape::sigmoid)?;
    let i = gate(tape, z, vars.w_i, vars.b_i, Tape::sigmoid)?;
    let g = gate(tape, z, vars.w_xc, vars.b_c, Tape::tanh)?;
    let ig = tape.mul(i, g)?;
    let fc = tape.mul(f, c_prev)?;
    let c = tape.add(ig, fc)?;
    let zo = match vars.variant {
        LstmVariant::AsWritten => tape.concat_cols(&[c, h_prev, x])?,
        LstmVariant::Standard => z,
    };
    let o = gate(tape, zo, vars.w_o, vars.b_o, Tape::sigmoid)?;
    let tc = tape.tanh(c)?;
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

/// Per-step mask constants for carry-through: `keep[t]` is the `[B×H]`
/// tiling of mask column `t`, `carry[t]` its complement.
pub fn step_masks(
    tape: &mut Tape,
    mask: &[f64],
    batch: usize,
    max_len: usize,
    hidden: usize,
) -> (Vec<Var>, Vec<Var>) {
    let mut keep = Vec::with_capacity(max_len);
    let mut carry = Vec::with_capacity(max_len);
    for t in 0..max_len {
        let mut keep_data = Vec::with_capacity(batch * hidden);
        let mut carry_data = Vec::with_capacity(batch * hidden);
        for b in 0..batch {
            let m = mask[b * max_len + t];
            keep_data.extend(std::iter::repeat_n(m, hidden));
            carry_data.extend(std::iter::repeat_n(1.0 - m, hidden));
        }
        keep.push(tape.constant(Tensor::new(vec![batch, hidden], keep_data).expect("sized")));
        carry.push(tape.constant(Tensor::new(vec![batch, hidden], carry_data).expect("sized")));
    }
    (keep, carry)
}

/// Run one direction over `xs` (list of `[B×D]` steps in surface order).
/// Returns per-position hidden states (surface order regardless of
/// direction) and the terminal `(h, c)` after the full sweep.
pub fn lstm_run(
    tape: &mut Tape,
    vars: &LstmVars,
    xs: &[Var],
    keep: &[Var],
    carry: &[Var],
    reverse: bool,
    batch: usize,
    hidden: usize,
) -> Result<(Vec<Var>, Var, Var), TensorError> {
    let steps = xs.len();
    let mut h = tape.constant(Tensor::zeros(batch, hidden));
    let mut c = tape.constant(Tensor::zeros(batch, hidden));
    let mut hs: Vec<Var> = vec![h; steps];
    let order: Vec<usize> = if reverse {
        (0..steps).rev().collect()
    } else {
        (0..steps).collect()
    };
    for t in order {
        let (h_new, c_new) = lstm_cell(tape, vars, xs[t], h, c)?;
        let h_kept = tape.mul(h_new, keep[t])?;
        let h_carried = tape.mul(h, carry[t])?;
        h = tape.add(h_kept, h_carried)?;
        let c_kept = tape.mul(c_new, keep[t])?;
        let c_carried = tape.mul(c, carry[t])?;
        c = tape.add(c_kept, c_carried)?;
        hs[t] = h;
    }
    Ok((hs, h, c))
}

/// Both directions plus the sentence representation.
pub struct BiLstmOut {
    /// `per_step[t]` is `[B×2H]`: forward ⊕ backward hidden at position t.
    pub per_step: Vec<Var>,
    /// `[B×2H]`: forward terminal state (each row's last real position)
    /// ⊕ backward terminal state (position 1).
    pub final_rep: Var,
}

/// Encode a fused sequence with a forward and a backward LSTM.
pub fn bilstm_encode(
    tape: &mut Tape,
    fwd: &LstmVars,
    bwd: &LstmVars,
    xs: &[Var],
    keep: &[Var],
    carry: &[Var],
    batch: usize,
    hidden: usize,
) -> Result<BiLstmOut, TensorError> {
    let (fwd_hs, fwd_h, _) = lstm_run(tape, fwd, xs, keep, carry, false, batch, hidden)?;
    let (bwd_hs, bwd_h, _) = lstm_run(tape, bwd, xs, keep, carry, true, batch, hidden)?;
    let per_step = fwd_hs
        .iter()
        .zip(&bwd_hs)
        .map(|(&f, &b)| tape.concat_cols(&[f, b]))
        .collect::<Result<Vec<_>, _>>()?;
    let final_rep = tape.concat_cols(&[fwd_h, bwd_h])?;
    Ok(BiLstmOut { per_step, final_rep })
}

/// Reorder a per-step list (each `[B×C]`) into one flat `[B·L × C]`
/// matrix whose row `b·L + t` is batch row `b` at position `t`.
pub fn flatten_steps(
    tape: &mut Tape,
    per_step: &[Var],
    batch: usize,
) -> Result<Var, TensorError> {
    let steps = per_step.len();
    let stacked = tape.concat_rows(per_step)?; // row t·B + b
    let perm: Vec<usize> = (0..batch * steps)
        .map(|i| {
            let (b, t) = (i / steps, i % steps);
            t * batch + b
        })
        .collect();
    tape.gather_rows(stacked, &perm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck;
    use rand::SeedableRng;

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    fn spec(input: usize, hidden: usize, variant: LstmVariant) -> LstmSpec {
        LstmSpec { input, hidden, variant }
    }

    fn ones_mask(tape: &mut Tape, batch: usize, steps: usize, hidden: usize) -> (Vec<Var>, Vec<Var>) {
        step_masks(tape, &vec![1.0; batch * steps], batch, steps, hidden)
    }

    #[test]
    fn zero_weights_give_zero_states() {
        for variant in [LstmVariant::AsWritten, LstmVariant::Standard] {
            let sp = spec(2, 3, variant);
            let mut store = ParamStore::new();
            sp.register(&mut store, "lstm", &mut ChaCha8Rng::seed_from_u64(0));
            // Zero every parameter, including the forget bias: with
            // i_t·g_t = σ(0)·tanh(0) = 0 and c_0 = 0, all states stay 0.
            for (_, t) in store.tensors_mut() {
                for v in t.data_mut() {
                    *v = 0.0;
                }
            }
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape);
            let vars = sp.bind(&bound, "lstm");
            let x = tape.constant(Tensor::filled(1, 2, 0.7));
            let (keep, carry) = ones_mask(&mut tape, 1, 2, 3);
            let (hs, h, c) =
                lstm_run(&mut tape, &vars, &[x, x], &keep, &carry, false, 1, 3).unwrap();
            assert_eq!(tape.value(h).data(), &[0.0, 0.0, 0.0]);
            assert_eq!(tape.value(c).data(), &[0.0, 0.0, 0.0]);
            assert_eq!(tape.value(hs[0]).data(), &[0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn two_step_unroll_matches_scalar_arithmetic() {
        // H = 1, D = 1, the default gate form. The oracle below recomputes
        // the recurrence with plain f64 scalar math.
        let (wf, wi, wxc, wo) = ([0.3, -0.2, 0.5], [0.1, 0.4, -0.3], [0.25, -0.5, 0.6], [-0.4, 0.2, 0.35]);
        let (bf, bi, bc, bo) = (1.0, 0.0, -0.1, 0.2);
        let xs_in = [0.8, -1.1];

        let mut expect_h = 0.0;
        let mut expect_c = 0.0;
        let mut per_step = Vec::new();
        for x in xs_in {
            let z = [expect_c, expect_h, x];
            let dot = |w: &[f64; 3]| w[0] * z[0] + w[1] * z[1] + w[2] * z[2];
            let f = sigmoid(dot(&wf) + bf);
            let i = sigmoid(dot(&wi) + bi);
            let g = (dot(&wxc) + bc).tanh();
            let c = i * g + f * expect_c;
            let o = sigmoid(wo[0] * c + wo[1] * expect_h + wo[2] * x + bo);
            expect_h = o * c.tanh();
            expect_c = c;
            per_step.push(expect_h);
        }

        let sp = spec(1, 1, LstmVariant::AsWritten);
        let mut store = ParamStore::new();
        store.insert("u.w_f", Tensor::col(&wf));
        store.insert("u.w_i", Tensor::col(&wi));
        store.insert("u.w_xc", Tensor::col(&wxc));
        store.insert("u.w_o", Tensor::col(&wo));
        store.insert("u.b_f", Tensor::scalar(bf));
        store.insert("u.b_i", Tensor::scalar(bi));
        store.insert("u.b_c", Tensor::scalar(bc));
        store.insert("u.b_o", Tensor::scalar(bo));
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let vars = sp.bind(&bound, "u");
        let x0 = tape.constant(Tensor::scalar(xs_in[0]));
        let x1 = tape.constant(Tensor::scalar(xs_in[1]));
        let (keep, carry) = ones_mask(&mut tape, 1, 2, 1);
        let (hs, h_fin, c_fin) =
            lstm_run(&mut tape, &vars, &[x0, x1], &keep, &carry, false, 1, 1).unwrap();

        assert!((tape.value(hs[0]).item() - per_step[0]).abs() < 1e-12);
        assert!((tape.value(hs[1]).item() - per_step[1]).abs() < 1e-12);
        assert!((tape.value(h_fin).item() - expect_h).abs() < 1e-12);
        assert!((tape.value(c_fin).item() - expect_c).abs() < 1e-12);
    }

    #[test]
    fn output_gate_sees_current_cell_only_in_default_form() {
        // With W_o reading only the cell slot, the two variants must
        // disagree given otherwise identical inputs.
        let run = |variant: LstmVariant| {
            let sp = spec(1, 1, variant);
            let gi = sp.gate_input();
            let mut store = ParamStore::new();
            for gate in ["w_f", "w_i", "w_xc"] {
                store.insert(&format!("v.{gate}"), Tensor::filled(gi, 1, 0.5));
            }
            // Weight on the leading slot: cell for as-written, hidden for
            // standard.
            let mut wo = Tensor::zeros(gi, 1);
            wo.data_mut()[0] = 2.0;
            store.insert("v.w_o", wo);
            for bias in ["b_f", "b_i", "b_c", "b_o"] {
                store.insert(&format!("v.{bias}"), Tensor::scalar(0.0));
            }
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape);
            let vars = sp.bind(&bound, "v");
            let x = tape.constant(Tensor::scalar(1.0));
            let (keep, carry) = ones_mask(&mut tape, 1, 1, 1);
            let (_, h, _) =
                lstm_run(&mut tape, &vars, &[x], &keep, &carry, false, 1, 1).unwrap();
            tape.value(h).item()
        };
        let written = run(LstmVariant::AsWritten);
        let standard = run(LstmVariant::Standard);
        // Step 1, both variants: c₁ = σ(0.5)·tanh(0.5) ≈ 0.287. As-written
        // o₁ = σ(2c₁); standard o₁ = σ(2h₀) = 0.5.
        let c1 = sigmoid(0.5) * 0.5f64.tanh();
        assert!((written - sigmoid(2.0 * c1) * c1.tanh()).abs() < 1e-12);
        assert!((standard - 0.5 * c1.tanh()).abs() < 1e-12);
        assert!((written - standard).abs() > 1e-3);
    }

    #[test]
    fn both_variants_pass_gradcheck() {
        for variant in [LstmVariant::AsWritten, LstmVariant::Standard] {
            let sp = spec(2, 2, variant);
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let gi = sp.gate_input();
            let params = vec![
                ("w_f", init_uniform(&mut rng, gi, 2, -0.5, 0.5)),
                ("w_i", init_uniform(&mut rng, gi, 2, -0.5, 0.5)),
                ("w_xc", init_uniform(&mut rng, gi, 2, -0.5, 0.5)),
                ("w_o", init_uniform(&mut rng, gi, 2, -0.5, 0.5)),
                ("b_f", init_uniform(&mut rng, 1, 2, -0.5, 0.5)),
                ("b_i", init_uniform(&mut rng, 1, 2, -0.5, 0.5)),
                ("b_c", init_uniform(&mut rng, 1, 2, -0.5, 0.5)),
                ("b_o", init_uniform(&mut rng, 1, 2, -0.5, 0.5)),
                ("x0", init_uniform(&mut rng, 1, 2, -1.0, 1.0)),
                ("x1", init_uniform(&mut rng, 1, 2, -1.0, 1.0)),
                ("x2", init_uniform(&mut rng, 1, 2, -1.0, 1.0)),
            ];
            let report = gradcheck(&params, 1e-5, 1e-6, |tape, vars| {
                let lstm_vars = LstmVars {
                    w_f: vars[0],
                    w_i: vars[1],
                    w_xc: vars[2],
                    w_o: vars[3],
                    b_f: vars[4],
                    b_i: vars[5],
                    b_c: vars[6],
                    b_o: vars[7],
                    variant,
                };
                let (keep, carry) = ones_mask(tape, 1, 3, 2);
                let (_, h, _) = lstm_run(
                    tape,
                    &lstm_vars,
                    &[vars[8], vars[9], vars[10]],
                    &keep,
                    &carry,
                    false,
                    1,
                    2,
                )?;
                tape.sum(h)
            })
            .unwrap();
            assert!(report.passed(), "{variant:?}:\n{report}");
        }
    }

    #[test]
    fn single_token_final_rep_concatenates_both_directions() {
        let sp = spec(2, 2, LstmVariant::AsWritten);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        sp.register(&mut store, "fwd", &mut rng);
        sp.register(&mut store, "bwd", &mut rng);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let fwd = sp.bind(&bound, "fwd");
        let bwd = sp.bind(&bound, "bwd");
        let x = tape.constant(Tensor::row(&[0.4, -0.9]));
        let (keep, carry) = ones_mask(&mut tape, 1, 1, 2);
        let out = bilstm_encode(&mut tape, &fwd, &bwd, &[x], &keep, &carry, 1, 2).unwrap();
        assert_eq!(tape.value(out.final_rep).shape(), &[1, 4]);
        assert_eq!(
            tape.value(out.final_rep).data(),
            tape.value(out.per_step[0]).data()
        );
    }

    #[test]
    fn padding_never_changes_real_positions() {
        // Lengths (2, 3) packed at L=3 vs L=6: every real per-step output
        // and the final representation agree to 1e-12.
        let sp = spec(2, 3, LstmVariant::AsWritten);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        sp.register(&mut store, "fwd", &mut rng);
        sp.register(&mut store, "bwd", &mut rng);
        let xs_data: Vec<Vec<f64>> = (0..6).map(|i| vec![0.3 * i as f64 - 0.7, 0.5 - 0.2 * i as f64]).collect();

        let run = |steps: usize| {
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape);
            let fwd = sp.bind(&bound, "fwd");
            let bwd = sp.bind(&bound, "bwd");
            let mut mask = vec![0.0; 2 * steps];
            for t in 0..2 {
                mask[t] = 1.0;
            }
            for t in 0..3 {
                mask[steps + t] = 1.0;
            }
            let xs: Vec<Var> = (0..steps)
                .map(|t| {
                    // Real cells get data; padded cells get garbage that
                    // must not leak through.
                    let row0 = if t < 2 { xs_data[t].clone() } else { vec![99.0, -99.0] };
                    let row1 = if t < 3 { xs_data[3 + t].clone() } else { vec![55.0, 44.0] };
                    tape.constant(Tensor::from_rows(&[row0, row1]).unwrap())
                })
                .collect();
            let (keep, carry) = step_masks(&mut tape, &mask, 2, steps, 3);
            let out = bilstm_encode(&mut tape, &fwd, &bwd, &xs, &keep, &carry, 2, 3).unwrap();
            let per: Vec<Vec<f64>> = out
                .per_step
                .iter()
                .map(|&v| tape.value(v).data().to_vec())
                .collect();
            (per, tape.value(out.final_rep).data().to_vec())
        };

        let (short_steps, short_final) = run(3);
        let (long_steps, long_final) = run(6);
        for (a, b) in short_final.iter().zip(&long_final) {
            assert!((a - b).abs() < 1e-12);
        }
        for t in 0..3 {
            for (a, b) in short_steps[t].iter().zip(&long_steps[t]) {
                // Row 0 is padding at t = 2; compare real cells only.
                if t < 2 {
                    assert!((a - b).abs() < 1e-12);
                }
            }
            // Row 1 (length 3) is real at every t.
            for col in 0..6 {
                let (a, b) = (short_steps[t][6 + col], long_steps[t][6 + col]);
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn flatten_steps_orders_rows_by_batch_then_time() {
        let mut tape = Tape::new();
        let s0 = tape.constant(Tensor::from_rows(&[vec![1.0], vec![10.0]]).unwrap());
        let s1 = tape.constant(Tensor::from_rows(&[vec![2.0], vec![20.0]]).unwrap());
        let s2 = tape.constant(Tensor::from_rows(&[vec![3.0], vec![30.0]]).unwrap());
        let flat = flatten_steps(&mut tape, &[s0, s1, s2], 2).unwrap();
        assert_eq!(
            tape.value(flat).data(),
            &[1.0, 2.0, 3.0, 10.0, 20.0, 30.0]
        );
    }
}
