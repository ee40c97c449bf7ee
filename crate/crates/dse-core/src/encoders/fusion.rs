//! Fusion functions combining a token with its relation and head:
//! `g(w_i, r_i, w_i^H)`.
//!
//! All three arguments are `[n×·]` matrices so a whole batch of tokens
//! fuses in one call. The gate form reads the relation vector as a
//! learned per-dimension throttle on the head word:
//! `x_i = w_i + σ(r_i) ⊙ w_i^H`, which requires the relation dimension
//! to equal the word dimension.

use crate::tensor::{Tape, TensorError, Var};

/// Concatenation fusion: `x_i = w ⊕ r ⊕ w_head`, dim `2d + d_r`.
pub fn fuse_concat(tape: &mut Tape, w: Var, r: Var, w_head: Var) -> Result<Var, TensorError> {
    if tape.value(w).cols() != tape.value(w_head).cols() {
        return Err(TensorError::ShapeMismatch {
            op: "fuse_concat",
            lhs: tape.value(w).shape().to_vec(),
            rhs: tape.value(w_head).shape().to_vec(),
        });
    }
    tape.concat_cols(&[w, r, w_head])
}

/// Gate fusion: `x_i = w + σ(r) ⊙ w_head`, dim `d`; requires `d_r = d`.
pub fn fuse_gate(tape: &mut Tape, w: Var, r: Var, w_head: Var) -> Result<Var, TensorError> {
    let (dw, dr, dh) = (
        tape.value(w).cols(),
        tape.value(r).cols(),
        tape.value(w_head).cols(),
    );
    if dw != dr || dw != dh {
        return Err(TensorError::ShapeMismatch {
            op: "fuse_gate",
            lhs: vec![tape.value(w).rows(), dw],
            rhs: vec![tape.value(r).rows(), dr],
        });
    }
    let gate = tape.sigmoid(r)?;
    let throttled = tape.mul(gate, w_head)?;
    tape.add(w, throttled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{gradcheck, Tensor};

    #[test]
    fn concat_lays_out_segments_in_order() {
        // d=2, d_r=1: ([1,2],[5],[3,4]) → [1,2,5,3,4]
        let mut tape = Tape::new();
        let w = tape.param(Tensor::row(&[1.0, 2.0]));
        let r = tape.param(Tensor::row(&[5.0]));
        let wh = tape.param(Tensor::row(&[3.0, 4.0]));
        let x = fuse_concat(&mut tape, w, r, wh).unwrap();
        assert_eq!(tape.value(x).data(), &[1.0, 2.0, 5.0, 3.0, 4.0]);
    }

    #[test]
    fn concat_middle_segment_is_exactly_the_relation() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::row(&[1.0, 2.0]));
        let r = tape.param(Tensor::row(&[0.0, 0.0, 0.0]));
        let wh = tape.param(Tensor::row(&[3.0, 4.0]));
        let x = fuse_concat(&mut tape, w, r, wh).unwrap();
        assert_eq!(&tape.value(x).data()[2..5], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn concat_rejects_word_head_dim_mismatch() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::row(&[1.0, 2.0]));
        let r = tape.param(Tensor::row(&[5.0]));
        let wh = tape.param(Tensor::row(&[3.0]));
        assert!(fuse_concat(&mut tape, w, r, wh).is_err());
    }

    #[test]
    fn gate_extremes_close_halve_and_open() {
        let w = Tensor::row(&[1.0, -2.0]);
        let wh = Tensor::row(&[4.0, 8.0]);
        let cases = [
            (-1000.0, vec![1.0, -2.0]),       // σ→0: x = w
            (0.0, vec![3.0, 2.0]),            // σ=0.5: x = w + 0.5·w_head
            (1000.0, vec![5.0, 6.0]),         // σ→1: x = w + w_head
        ];
        for (rv, expected) in cases {
            let mut tape = Tape::new();
            let wv = tape.param(w.clone());
            let r = tape.param(Tensor::row(&[rv, rv]));
            let whv = tape.param(wh.clone());
            let x = fuse_gate(&mut tape, wv, r, whv).unwrap();
            for (got, want) in tape.value(x).data().iter().zip(&expected) {
                assert!((got - want).abs() < 1e-9, "r={rv}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn gate_requires_matching_dims() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::row(&[1.0, 2.0]));
        let r = tape.param(Tensor::row(&[0.0]));
        let wh = tape.param(Tensor::row(&[3.0, 4.0]));
        let err = fuse_gate(&mut tape, w, r, wh).unwrap_err();
        assert!(err.to_string().contains("fuse_gate"));
    }

    #[test]
    fn gate_output_is_monotone_in_the_relation() {
        // With w and w_head fixed (w_head > 0), raising every component
        // of r moves the output monotonically toward w + w_head.
        let w = Tensor::row(&[0.5, -1.0]);
        let wh = Tensor::row(&[2.0, 3.0]);
        let mut previous = f64::NEG_INFINITY;
        for step in -8..=8 {
            let rv = step as f64;
            let mut tape = Tape::new();
            let wv = tape.param(w.clone());
            let r = tape.param(Tensor::row(&[rv, rv]));
            let whv = tape.param(wh.clone());
            let x = fuse_gate(&mut tape, wv, r, whv).unwrap();
            let total: f64 = tape.value(x).data().iter().sum();
            assert!(total > previous, "not monotone at r={rv}");
            previous = total;
        }
    }

    #[test]
    fn both_fusions_pass_gradcheck() {
        let params = vec![
            ("w", Tensor::from_rows(&[vec![0.3, -0.8], vec![1.2, 0.1]]).unwrap()),
            ("r", Tensor::from_rows(&[vec![0.5, -0.5], vec![-1.0, 2.0]]).unwrap()),
            ("wh", Tensor::from_rows(&[vec![-0.2, 0.9], vec![0.4, -1.5]]).unwrap()),
            ("u", Tensor::col(&[0.7, -0.3, 0.2, 0.8, -0.6, 0.1])),
        ];
        let concat_report = gradcheck(&params, 1e-5, 1e-4, |tape, vars| {
            let x = fuse_concat(tape, vars[0], vars[1], vars[2])?;
            let score = tape.matmul(x, vars[3])?;
            let squashed = tape.sigmoid(score)?;
            tape.sum(squashed)
        })
        .unwrap();
        assert!(concat_report.passed(), "{concat_report}");

        let gate_params = &params[..3];
        let gate_report = gradcheck(gate_params, 1e-5, 1e-4, |tape, vars| {
            let x = fuse_gate(tape, vars[0], vars[1], vars[2])?;
            let squashed = tape.tanh(x)?;
            tape.sum(squashed)
        })
        .unwrap();
        assert!(gate_report.passed(), "{gate_report}");
    }
}
