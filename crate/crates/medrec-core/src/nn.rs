//! Differentiable building blocks: scaled dot-product attention, multi-head
//! attention, position-wise feed-forward, residual layer normalisation and
//! gated set aggregation. All are tape compositions, so gradients come from
//! [`crate::autodiff::Tape::backward`] with no per-layer backward code.

use ndarray::Array2;

use crate::autodiff::{Tape, Var, MASK_NEG};
use crate::error::{Error, Result};

/// Variance guard inside every layer normalisation.
pub const LN_EPS: f64 = 1e-5;

// ============ Masks ============

/// Additive attention mask: 0 where attending is allowed, [`MASK_NEG`] where
/// blocked. Shape `queries × keys`.
pub fn causal_mask(n: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, n), |(i, j)| if j <= i { 0.0 } else { MASK_NEG })
}

fn validate_mask(mask: &Array2<f64>, q_rows: usize, k_rows: usize) -> Result<()> {
    if mask.dim() != (q_rows, k_rows) {
        return Err(Error::ShapeMismatch {
            context: "attention mask",
            expected: format!("{q_rows}×{k_rows}"),
            got: format!("{}×{}", mask.nrows(), mask.ncols()),
        });
    }
    for (r, row) in mask.rows().into_iter().enumerate() {
        if row.iter().all(|&v| v == MASK_NEG) {
            return Err(Error::validation(format!(
                "attention mask row {r} blocks every key"
            )));
        }
    }
    Ok(())
}

// ============ Attention ============

fn attention_with_scale(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<&Array2<f64>>,
    scale: f64,
) -> Result<Var> {
    let (qr, qc) = tape.shape(q);
    let (kr, kc) = tape.shape(k);
    let (vr, _) = tape.shape(v);
    if qc != kc {
        return Err(Error::ShapeMismatch {
            context: "attention query/key width",
            expected: format!("{qc}"),
            got: format!("{kc}"),
        });
    }
    if kr != vr {
        return Err(Error::ShapeMismatch {
            context: "attention key/value rows",
            expected: format!("{kr}"),
            got: format!("{vr}"),
        });
    }
    if let Some(m) = mask {
        validate_mask(m, qr, kr)?;
    }
    let kt = tape.transpose(k);
    let scores = tape.matmul(q, kt);
    let mut scores = tape.scale(scores, scale);
    if let Some(m) = mask {
        scores = tape.add_const(scores, m);
    }
    let weights = tape.softmax_rows(scores);
    Ok(tape.matmul(weights, v))
}

/// `Softmax(Q Kᵀ / √s) V` where `s` is the width of `Q`. Rows of the weight
/// matrix are probability distributions over the key rows.
pub fn attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<&Array2<f64>>,
) -> Result<Var> {
    let s = tape.shape(q).1;
    attention_with_scale(tape, q, k, v, mask, 1.0 / (s as f64).sqrt())
}

/// Multi-head attention. The four projections are stored full-width
/// (`s × s`); head `i` owns the `i`-th block of `s/heads` columns of
/// `wq`/`wk`/`wv`. Per-head attention keeps the `1/√s` scale of the
/// full-width embedding, matching the single-head definition.
#[allow(clippy::too_many_arguments)]
pub fn multi_head(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    wq: Var,
    wk: Var,
    wv: Var,
    wo: Var,
    heads: usize,
    mask: Option<&Array2<f64>>,
) -> Result<Var> {
    let s = tape.shape(q).1;
    if heads == 0 || s % heads != 0 {
        return Err(Error::validation(format!(
            "embedding width {s} is not divisible into {heads} heads"
        )));
    }
    let head_dim = s / heads;
    let scale = 1.0 / (s as f64).sqrt();
    let qp = tape.matmul(q, wq);
    let kp = tape.matmul(k, wk);
    let vp = tape.matmul(v, wv);
    let mut head_outputs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qs = tape.slice_cols(qp, h * head_dim, head_dim);
        let ks = tape.slice_cols(kp, h * head_dim, head_dim);
        let vs = tape.slice_cols(vp, h * head_dim, head_dim);
        head_outputs.push(attention_with_scale(tape, qs, ks, vs, mask, scale)?);
    }
    let cat = tape.concat_cols(&head_outputs);
    Ok(tape.matmul(cat, wo))
}

// ============ Feed-forward and normalisation ============

/// `ReLU(H W₁ + b₁) W₂ + b₂` with the conventional wide hidden layer.
pub fn ffn(tape: &mut Tape, h: Var, w1: Var, b1: Var, w2: Var, b2: Var) -> Var {
    let a = tape.matmul(h, w1);
    let a = tape.add_row(a, b1);
    let a = tape.relu(a);
    let a = tape.matmul(a, w2);
    tape.add_row(a, b2)
}

/// `LayerNorm(x + sublayer)` — the residual connection plus per-row
/// normalisation used around every attention and feed-forward block.
pub fn residual_layer_norm(tape: &mut Tape, x: Var, sublayer: Var, gain: Var, bias: Var) -> Var {
    let sum = tape.add(x, sublayer);
    tape.layer_norm(sum, gain, bias, LN_EPS)
}

// ============ Gated aggregation ============

/// Collapse a variable-size set of row vectors (`L × s`) into one `1 × s`
/// summary: per-row scores `tanh(X W₁ + b₁) W₂ + b₂` are softmax-normalised
/// over the rows and used as mixing weights.
pub fn gated_aggregate(
    tape: &mut Tape,
    x: Var,
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
) -> Var {
    let h = tape.matmul(x, w1);
    let h = tape.add_row(h, b1);
    let h = tape.tanh(h);
    let logits = tape.matmul(h, w2);
    let logits = tape.add_row(logits, b2);
    // Softmax over the set dimension (rows): transpose to a 1×L row first.
    let row = tape.transpose(logits);
    let weights = tape.softmax_rows(row);
    tape.matmul(weights, x)
}

// ============ Tests ============

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn attention_identical_keys_average_values() {
        let mut t = Tape::new();
        let q = t.constant(array![[0.3, -0.7]]);
        let k = t.constant(array![[1.0, 1.0], [1.0, 1.0]]);
        let v = t.constant(array![[2.0, 0.0], [0.0, 4.0]]);
        let out = attention(&mut t, q, k, v, None).unwrap();
        assert!((t.value(out)[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((t.value(out)[(0, 1)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn attention_single_key_returns_its_value() {
        let mut t = Tape::new();
        let q = t.constant(array![[0.1, 0.2, 0.3]]);
        let k = t.constant(array![[5.0, -1.0, 2.0]]);
        let v = t.constant(array![[7.0, 8.0, 9.0]]);
        let out = attention(&mut t, q, k, v, None).unwrap();
        assert_eq!(t.value(out), &array![[7.0, 8.0, 9.0]]);
    }

    #[test]
    fn attention_two_key_hand_case() {
        // Q=[1,0], keys e1/e2: scores (1/√2, 0); weights softmax of that.
        let mut t = Tape::new();
        let q = t.constant(array![[1.0, 0.0]]);
        let k = t.constant(array![[1.0, 0.0], [0.0, 1.0]]);
        let v = t.constant(array![[1.0, 0.0], [0.0, 1.0]]);
        let out = attention(&mut t, q, k, v, None).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let w1 = s.exp() / (s.exp() + 1.0);
        let w2 = 1.0 / (s.exp() + 1.0);
        assert!((t.value(out)[(0, 0)] - w1).abs() < 1e-9);
        assert!((t.value(out)[(0, 1)] - w2).abs() < 1e-9);
    }

    #[test]
    fn attention_rejects_fully_masked_rows() {
        let mut t = Tape::new();
        let q = t.constant(array![[1.0, 0.0]]);
        let k = t.constant(array![[1.0, 0.0], [0.0, 1.0]]);
        let v = t.constant(array![[1.0, 0.0], [0.0, 1.0]]);
        let mask = Array2::from_elem((1, 2), MASK_NEG);
        assert!(attention(&mut t, q, k, v, Some(&mask)).is_err());
    }

    #[test]
    fn attention_outputs_stay_in_value_hull() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let mut t = Tape::new();
            let q = t.constant(rand_mat(&mut rng, 3, 4));
            let v_arr = rand_mat(&mut rng, 5, 4);
            let k = t.constant(rand_mat(&mut rng, 5, 4));
            let v = t.constant(v_arr.clone());
            let out = attention(&mut t, q, k, v, None).unwrap();
            for c in 0..4 {
                let lo = v_arr.column(c).iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = v_arr.column(c).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                for r in 0..3 {
                    let val = t.value(out)[(r, c)];
                    assert!(val >= lo - 1e-12 && val <= hi + 1e-12);
                }
            }
        }
    }

    #[test]
    fn attention_is_equivariant_in_queries_and_invariant_in_kv_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = rand_mat(&mut rng, 3, 4);
        let k = rand_mat(&mut rng, 5, 4);
        let v = rand_mat(&mut rng, 5, 4);
        let run = |qa: &Array2<f64>, ka: &Array2<f64>, va: &Array2<f64>| {
            let mut t = Tape::new();
            let (qv, kv, vv) = (t.constant(qa.clone()), t.constant(ka.clone()), t.constant(va.clone()));
            let out = attention(&mut t, qv, kv, vv, None).unwrap();
            t.value(out).clone()
        };
        let base = run(&q, &k, &v);

        let qperm = [2usize, 0, 1];
        let q2 = Array2::from_shape_fn(q.dim(), |(i, c)| q[(qperm[i], c)]);
        let out_q = run(&q2, &k, &v);
        for i in 0..3 {
            for c in 0..4 {
                assert!((out_q[(i, c)] - base[(qperm[i], c)]).abs() < 1e-12);
            }
        }

        let kvperm = [4usize, 2, 0, 3, 1];
        let k2 = Array2::from_shape_fn(k.dim(), |(i, c)| k[(kvperm[i], c)]);
        let v2 = Array2::from_shape_fn(v.dim(), |(i, c)| v[(kvperm[i], c)]);
        let out_kv = run(&q, &k2, &v2);
        for (a, b) in out_kv.iter().zip(base.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn multi_head_single_head_identity_projections_reduce_to_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = rand_mat(&mut rng, 2, 4);
        let k = rand_mat(&mut rng, 3, 4);
        let v = rand_mat(&mut rng, 3, 4);
        let eye = Array2::eye(4);
        let mut t = Tape::new();
        let (qv, kv, vv) = (t.constant(q.clone()), t.constant(k.clone()), t.constant(v.clone()));
        let (wq, wk, wv, wo) = (
            t.constant(eye.clone()),
            t.constant(eye.clone()),
            t.constant(eye.clone()),
            t.constant(eye),
        );
        let mh = multi_head(&mut t, qv, kv, vv, wq, wk, wv, wo, 1, None).unwrap();
        let plain = attention(&mut t, qv, kv, vv, None).unwrap();
        for (a, b) in t.value(mh).iter().zip(t.value(plain).iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn multi_head_zero_output_projection_gives_zeros() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut t = Tape::new();
        let x = t.constant(rand_mat(&mut rng, 3, 4));
        let w = t.constant(rand_mat(&mut rng, 4, 4));
        let wo = t.constant(Array2::zeros((4, 4)));
        let out = multi_head(&mut t, x, x, x, w, w, w, wo, 2, None).unwrap();
        assert_eq!(t.value(out).sum(), 0.0);
    }

    #[test]
    fn multi_head_matches_loop_over_heads_oracle() {
        let (l, s, heads) = (3, 6, 2);
        let hd = s / heads;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = rand_mat(&mut rng, l, s);
        let wq = rand_mat(&mut rng, s, s);
        let wk = rand_mat(&mut rng, s, s);
        let wv = rand_mat(&mut rng, s, s);
        let wo = rand_mat(&mut rng, s, s);

        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let (a, b, c, d) = (
            t.constant(wq.clone()),
            t.constant(wk.clone()),
            t.constant(wv.clone()),
            t.constant(wo.clone()),
        );
        let got = multi_head(&mut t, xv, xv, xv, a, b, c, d, heads, None).unwrap();

        // Oracle: explicit per-head loops, no tape.
        let matmul = |a: &Array2<f64>, b: &Array2<f64>| -> Array2<f64> {
            let mut out = Array2::zeros((a.nrows(), b.ncols()));
            for i in 0..a.nrows() {
                for j in 0..b.ncols() {
                    for k in 0..a.ncols() {
                        out[(i, j)] += a[(i, k)] * b[(k, j)];
                    }
                }
            }
            out
        };
        let qp = matmul(&x, &wq);
        let kp = matmul(&x, &wk);
        let vp = matmul(&x, &wv);
        let mut cat = Array2::zeros((l, s));
        for h in 0..heads {
            let cols = h * hd..(h + 1) * hd;
            let qs = qp.slice(ndarray::s![.., cols.clone()]).to_owned();
            let ks = kp.slice(ndarray::s![.., cols.clone()]).to_owned();
            let vs = vp.slice(ndarray::s![.., cols.clone()]).to_owned();
            let scores = matmul(&qs, &ks.t().to_owned()) / (s as f64).sqrt();
            let mut weights = scores;
            for mut row in weights.rows_mut() {
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                row.mapv_inplace(|v| (v - mx).exp());
                let sum: f64 = row.sum();
                row.mapv_inplace(|v| v / sum);
            }
            let head_out = matmul(&weights, &vs);
            cat.slice_mut(ndarray::s![.., cols]).assign(&head_out);
        }
        let want = matmul(&cat, &wo);
        for (g, w) in t.value(got).iter().zip(want.iter()) {
            assert!((g - w).abs() < 1e-9);
        }
    }

    #[test]
    fn causal_mask_blocks_future_positions() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x3 = rand_mat(&mut rng, 3, 4);
        let extra = rand_mat(&mut rng, 1, 4);
        let mut x4 = Array2::zeros((4, 4));
        x4.slice_mut(ndarray::s![..3, ..]).assign(&x3);
        x4.slice_mut(ndarray::s![3.., ..]).assign(&extra);

        let run = |xa: &Array2<f64>| {
            let mut t = Tape::new();
            let x = t.constant(xa.clone());
            let mask = causal_mask(xa.nrows());
            let out = attention(&mut t, x, x, x, Some(&mask)).unwrap();
            t.value(out).clone()
        };
        let short = run(&x3);
        let long = run(&x4);
        // Appending a row must not change earlier rows.
        for i in 0..3 {
            for c in 0..4 {
                assert!((short[(i, c)] - long[(i, c)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ffn_zero_first_layer_yields_constant_bias_rows() {
        let mut t = Tape::new();
        let h = t.constant(array![[1.0, -2.0], [0.5, 3.0]]);
        let w1 = t.constant(Array2::zeros((2, 8)));
        let b1 = t.constant(Array2::zeros((1, 8)));
        let w2 = t.constant(Array2::ones((8, 2)));
        let b2 = t.constant(array![[0.3, -0.4]]);
        let out = ffn(&mut t, h, w1, b1, w2, b2);
        for r in 0..2 {
            assert!((t.value(out)[(r, 0)] - 0.3).abs() < 1e-12);
            assert!((t.value(out)[(r, 1)] + 0.4).abs() < 1e-12);
        }
    }

    #[test]
    fn ffn_fully_negative_preactivation_passes_only_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut t = Tape::new();
        let h = t.constant(rand_mat(&mut rng, 2, 3));
        let w1 = t.constant(Array2::zeros((3, 4)));
        let b1 = t.constant(Array2::from_elem((1, 4), -5.0));
        let w2 = t.constant(rand_mat(&mut rng, 4, 3));
        let b2_arr = rand_mat(&mut rng, 1, 3);
        let b2 = t.constant(b2_arr.clone());
        let out = ffn(&mut t, h, w1, b1, w2, b2);
        for r in 0..2 {
            for c in 0..3 {
                assert!((t.value(out)[(r, c)] - b2_arr[(0, c)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ffn_matches_straight_line_oracle() {
        let (l, s, hidden) = (3, 4, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let h = rand_mat(&mut rng, l, s);
        let w1 = rand_mat(&mut rng, s, hidden);
        let b1 = rand_mat(&mut rng, 1, hidden);
        let w2 = rand_mat(&mut rng, hidden, s);
        let b2 = rand_mat(&mut rng, 1, s);
        let mut t = Tape::new();
        let hv = t.constant(h.clone());
        let (a, b, c, d) = (
            t.constant(w1.clone()),
            t.constant(b1.clone()),
            t.constant(w2.clone()),
            t.constant(b2.clone()),
        );
        let got = ffn(&mut t, hv, a, b, c, d);
        for i in 0..l {
            for j in 0..s {
                let mut acc = b2[(0, j)];
                for k in 0..hidden {
                    let mut pre = b1[(0, k)];
                    for m in 0..s {
                        pre += h[(i, m)] * w1[(m, k)];
                    }
                    acc += pre.max(0.0) * w2[(k, j)];
                }
                assert!((t.value(got)[(i, j)] - acc).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn layer_norm_preserves_already_normalised_rows() {
        // Row with exact zero mean and unit population variance.
        let x = array![[1.0, -1.0, 1.0, -1.0]];
        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let gain = t.constant(Array2::ones((1, 4)));
        let bias = t.constant(Array2::zeros((1, 4)));
        let y = t.layer_norm(xv, gain, bias, LN_EPS);
        let expected_scale = 1.0 / (1.0 + LN_EPS).sqrt();
        for c in 0..4 {
            assert!((t.value(y)[(0, c)] - x[(0, c)] * expected_scale).abs() < 1e-12);
            assert!((t.value(y)[(0, c)] - x[(0, c)]).abs() < 1e-4);
        }
    }

    #[test]
    fn layer_norm_output_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut t = Tape::new();
        let x = t.constant(rand_mat(&mut rng, 3, 6).mapv(|v| v * 4.0 + 1.0));
        let gain = t.constant(Array2::ones((1, 6)));
        let bias = t.constant(Array2::zeros((1, 6)));
        let y = t.layer_norm(x, gain, bias, LN_EPS);
        for row in t.value(y).rows() {
            let mean: f64 = row.mean().unwrap();
            let var: f64 = row.mapv(|v| (v - mean).powi(2)).mean().unwrap();
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn gated_aggregate_reduces_to_row_for_singletons_and_duplicates() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let row = rand_mat(&mut rng, 1, 4);
        let w1 = rand_mat(&mut rng, 4, 3);
        let b1 = rand_mat(&mut rng, 1, 3);
        let w2 = rand_mat(&mut rng, 3, 1);
        let b2 = rand_mat(&mut rng, 1, 1);

        let run = |x: &Array2<f64>| {
            let mut t = Tape::new();
            let xv = t.constant(x.clone());
            let (a, b, c, d) = (
                t.constant(w1.clone()),
                t.constant(b1.clone()),
                t.constant(w2.clone()),
                t.constant(b2.clone()),
            );
            let out = gated_aggregate(&mut t, xv, a, b, c, d);
            t.value(out).clone()
        };
        let single = run(&row);
        for c in 0..4 {
            assert!((single[(0, c)] - row[(0, c)]).abs() < 1e-12);
        }
        // Three identical rows: any convex combination is the row itself.
        let mut trip = Array2::zeros((3, 4));
        for i in 0..3 {
            trip.row_mut(i).assign(&row.row(0));
        }
        let dup = run(&trip);
        for c in 0..4 {
            assert!((dup[(0, c)] - row[(0, c)]).abs() < 1e-12);
        }
    }

    #[test]
    fn gated_aggregate_matches_straight_line_oracle() {
        let (l, s, delta) = (4, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = rand_mat(&mut rng, l, s);
        let w1 = rand_mat(&mut rng, s, delta);
        let b1 = rand_mat(&mut rng, 1, delta);
        let w2 = rand_mat(&mut rng, delta, 1);
        let b2 = rand_mat(&mut rng, 1, 1);
        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let (a, b, c, d) = (
            t.constant(w1.clone()),
            t.constant(b1.clone()),
            t.constant(w2.clone()),
            t.constant(b2.clone()),
        );
        let out = gated_aggregate(&mut t, xv, a, b, c, d);
        let got = t.value(out).clone();

        let mut logits = vec![0.0; l];
        for i in 0..l {
            let mut score = b2[(0, 0)];
            for dd in 0..delta {
                let mut pre = b1[(0, dd)];
                for k in 0..s {
                    pre += x[(i, k)] * w1[(k, dd)];
                }
                score += pre.tanh() * w2[(dd, 0)];
            }
            logits[i] = score;
        }
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|v| (v - mx).exp()).collect();
        let z: f64 = exps.iter().sum();
        for c in 0..s {
            let mut want = 0.0;
            for i in 0..l {
                want += exps[i] / z * x[(i, c)];
            }
            assert!((got[(0, c)] - want).abs() < 1e-9);
        }
    }

    /// Finite-difference check through a composite of every primitive in
    /// this module, driving gradients into all parameter groups at once.
    #[test]
    fn primitives_compose_with_correct_gradients() {
        let (l, s, heads, delta) = (3, 4, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = rand_mat(&mut rng, l, s);
        let inits = vec![
            rand_mat(&mut rng, s, s),          // wq
            rand_mat(&mut rng, s, s),          // wk
            rand_mat(&mut rng, s, s),          // wv
            rand_mat(&mut rng, s, s),          // wo
            rand_mat(&mut rng, 1, s),          // ln gain
            rand_mat(&mut rng, 1, s),          // ln bias
            rand_mat(&mut rng, s, 2 * s),      // ffn w1
            rand_mat(&mut rng, 1, 2 * s),      // ffn b1
            rand_mat(&mut rng, 2 * s, s),      // ffn w2
            rand_mat(&mut rng, 1, s),          // ffn b2
            rand_mat(&mut rng, s, delta),      // gate w1
            rand_mat(&mut rng, 1, delta),      // gate b1
            rand_mat(&mut rng, delta, 1),      // gate w2
            rand_mat(&mut rng, 1, 1),          // gate b2
        ];
        let mask = causal_mask(l);
        let build = |t: &mut Tape, vs: &[Var]| -> Var {
            let xv = t.constant(x.clone());
            let attn = multi_head(t, xv, xv, xv, vs[0], vs[1], vs[2], vs[3], heads, Some(&mask))
                .unwrap();
            let normed = residual_layer_norm(t, xv, attn, vs[4], vs[5]);
            let f = ffn(t, normed, vs[6], vs[7], vs[8], vs[9]);
            let agg = gated_aggregate(t, f, vs[10], vs[11], vs[12], vs[13]);
            let sq = t.mul(agg, agg);
            t.sum_all(sq)
        };

        let mut tape = Tape::new();
        let vars: Vec<Var> = inits.iter().map(|a| tape.param(a.clone())).collect();
        let loss = build(&mut tape, &vars);
        let grads = tape.backward(loss);

        let eval = |mods: &[Array2<f64>]| -> f64 {
            let mut t = Tape::new();
            let vs: Vec<Var> = mods.iter().map(|a| t.param(a.clone())).collect();
            let l = build(&mut t, &vs);
            t.scalar_value(l)
        };
        let h = 1e-5;
        for (pi, init) in inits.iter().enumerate() {
            let analytic = grads.get(vars[pi], (init.nrows(), init.ncols()));
            for r in 0..init.nrows() {
                for c in 0..init.ncols() {
                    let mut plus = inits.clone();
                    plus[pi][(r, c)] += h;
                    let mut minus = inits.clone();
                    minus[pi][(r, c)] -= h;
                    let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
                    let a = analytic[(r, c)];
                    let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
                    assert!(
                        rel < 1e-5,
                        "param {pi} ({r},{c}): analytic {a} vs numeric {numeric}"
                    );
                }
            }
        }
    }
}
