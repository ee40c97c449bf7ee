//! Named finite-difference checks covering every differentiable tape op.
//!
//! Each case wires small parameters through one operation and reduces to a
//! scalar, so a failure pinpoints the op whose backward rule drifted. The
//! structural ops (concat, gather, slice) reduce through a position-unique
//! weighting, otherwise a misrouted gradient could hide inside a uniform
//! sum.

use super::gradcheck::{gradcheck, GradcheckReport};
use super::{Tape, Tensor, TensorError, Var};

/// Deterministic well-conditioned filler: values in ±0.8, bounded away
/// from zero so kinked ops (relu) stay smooth around the probe point.
fn probe(rows: usize, cols: usize, salt: u64) -> Tensor {
    let data: Vec<f64> = (0..rows * cols)
        .map(|i| {
            let h = (i as u64)
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(salt.wrapping_mul(0x2545_F491_4F6C_DD1D));
            let v = ((h >> 16) % 1000) as f64 / 999.0 * 1.6 - 0.8;
            if v.abs() < 0.05 {
                0.12
            } else {
                v
            }
        })
        .collect();
    Tensor::new(vec![rows, cols], data).expect("probe shape")
}

/// Strictly positive variant for ops with a positive domain (log).
fn probe_pos(rows: usize, cols: usize, salt: u64) -> Tensor {
    let mut t = probe(rows, cols, salt);
    for v in t.data_mut() {
        *v = v.abs() + 0.3;
    }
    t
}

/// Reduce to a scalar through fixed per-position weights so every output
/// coordinate contributes a distinct signal.
fn weighted_sum(tape: &mut Tape, x: Var) -> Result<Var, TensorError> {
    let (rows, cols) = {
        let v = tape.value(x);
        (v.rows(), v.cols())
    };
    let w = tape.constant(probe(rows, cols, 77));
    let prod = tape.mul(x, w)?;
    tape.sum(prod)
}

/// Run the per-operation battery at `tolerance`, returning one named
/// report per op. Every differentiable tape operation appears exactly
/// once; `stop_gradient` is excluded because blocking the flow is its
/// contract, which finite differences cannot see.
pub fn op_suite(tolerance: f64) -> Vec<(String, GradcheckReport)> {
    let eps = 1e-5;
    let mut out: Vec<(String, GradcheckReport)> = Vec::new();
    let mut case = |name: &str,
                    params: Vec<(&str, Tensor)>,
                    build: &dyn Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>| {
        let report =
            gradcheck(&params, eps, tolerance, build).expect("suite case must build cleanly");
        out.push((name.to_string(), report));
    };

    case(
        "matmul",
        vec![("a", probe(3, 4, 1)), ("b", probe(4, 2, 2))],
        &|tape, vars| {
            let y = tape.matmul(vars[0], vars[1])?;
            weighted_sum(tape, y)
        },
    );
    case(
        "add",
        vec![("a", probe(2, 3, 3)), ("b", probe(2, 3, 4))],
        &|tape, vars| {
            let y = tape.add(vars[0], vars[1])?;
            weighted_sum(tape, y)
        },
    );
    case(
        "add_row",
        vec![("a", probe(3, 4, 5)), ("bias", probe(1, 4, 6))],
        &|tape, vars| {
            let y = tape.add_row(vars[0], vars[1])?;
            weighted_sum(tape, y)
        },
    );
    case(
        "sub",
        vec![("a", probe(2, 3, 7)), ("b", probe(2, 3, 8))],
        &|tape, vars| {
            let y = tape.sub(vars[0], vars[1])?;
            weighted_sum(tape, y)
        },
    );
    case(
        "mul",
        vec![("a", probe(2, 3, 9)), ("b", probe(2, 3, 10))],
        &|tape, vars| {
            let y = tape.mul(vars[0], vars[1])?;
            weighted_sum(tape, y)
        },
    );
    case("scale", vec![("a", probe(2, 3, 11))], &|tape, vars| {
        let y = tape.scale(vars[0], 1.7)?;
        weighted_sum(tape, y)
    });
    case("add_scalar", vec![("a", probe(2, 3, 12))], &|tape, vars| {
        let y = tape.add_scalar(vars[0], 0.35)?;
        weighted_sum(tape, y)
    });
    case(
        "concat_cols",
        vec![("a", probe(2, 3, 13)), ("b", probe(2, 2, 14))],
        &|tape, vars| {
            let y = tape.concat_cols(&[vars[0], vars[1]])?;
            weighted_sum(tape, y)
        },
    );
    case(
        "concat_rows",
        vec![("a", probe(2, 3, 15)), ("b", probe(1, 3, 16))],
        &|tape, vars| {
            let y = tape.concat_rows(&[vars[0], vars[1]])?;
            weighted_sum(tape, y)
        },
    );
    // Repeated indices exercise gradient accumulation into one source row.
    case("gather_rows", vec![("src", probe(5, 3, 17))], &|tape, vars| {
        let y = tape.gather_rows(vars[0], &[0, 2, 2, 4])?;
        weighted_sum(tape, y)
    });
    case("slice_rows", vec![("src", probe(5, 3, 18))], &|tape, vars| {
        let y = tape.slice_rows(vars[0], 1, 3)?;
        weighted_sum(tape, y)
    });
    case("slice_cols", vec![("src", probe(3, 5, 19))], &|tape, vars| {
        let y = tape.slice_cols(vars[0], 2, 2)?;
        weighted_sum(tape, y)
    });
    case("sigmoid", vec![("x", probe(2, 4, 20))], &|tape, vars| {
        let y = tape.sigmoid(vars[0])?;
        weighted_sum(tape, y)
    });
    case("tanh", vec![("x", probe(2, 4, 21))], &|tape, vars| {
        let y = tape.tanh(vars[0])?;
        weighted_sum(tape, y)
    });
    case("relu", vec![("x", probe(2, 4, 22))], &|tape, vars| {
        let y = tape.relu(vars[0])?;
        weighted_sum(tape, y)
    });
    case("log", vec![("x", probe_pos(2, 4, 23))], &|tape, vars| {
        let y = tape.log(vars[0])?;
        weighted_sum(tape, y)
    });
    // A uniform sum of softmax rows is constant, so the weighting here is
    // what makes the check non-vacuous.
    case("softmax_rows", vec![("x", probe(3, 4, 24))], &|tape, vars| {
        let y = tape.softmax_rows(vars[0])?;
        weighted_sum(tape, y)
    });
    case(
        "log_softmax_rows",
        vec![("x", probe(3, 4, 25))],
        &|tape, vars| {
            let y = tape.log_softmax_rows(vars[0])?;
            weighted_sum(tape, y)
        },
    );
    case("sum", vec![("x", probe(3, 4, 26))], &|tape, vars| {
        tape.sum(vars[0])
    });
    case("mean", vec![("x", probe(3, 4, 27))], &|tape, vars| {
        tape.mean(vars[0])
    });

    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_case_passes_at_standard_tolerance() {
        let reports = op_suite(1e-4);
        assert!(reports.len() >= 20, "suite lost cases: {}", reports.len());
        for (name, report) in &reports {
            assert!(report.passed(), "{name}:\n{report}");
        }
    }

    #[test]
    fn probe_values_are_bounded_and_kink_free() {
        let t = probe(6, 7, 123);
        for &v in t.data() {
            assert!(v.abs() >= 0.05 && v.abs() <= 0.8001, "bad probe value {v}");
        }
        let p = probe_pos(4, 4, 5);
        for &v in p.data() {
            assert!(v >= 0.3, "log probe too close to the domain edge: {v}");
        }
    }
}
