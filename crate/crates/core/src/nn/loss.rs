//! Losses on decoder logits and the straight-through sign.
//!
//! Logit convention: `log(P[bit = 1] / P[bit = 0])`.

use super::matrix::Mat;
use crate::error::{Error, Result};

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_targets(logits: &Mat, targets: &[u8]) -> Result<()> {
    if targets.len() != logits.data().len() {
        return Err(Error::Input(format!(
            "{} targets for {} logits",
            targets.len(),
            logits.data().len()
        )));
    }
    if let Some(t) = targets.iter().find(|&&t| t > 1) {
        return Err(Error::Input(format!("non-binary target {t}")));
    }
    Ok(())
}

/// Binary cross entropy: mean over rows of the per-row summed loss.
/// Returns the loss and `d loss / d logits`.
pub fn bce_with_logits(logits: &Mat, targets: &[u8]) -> Result<(f64, Mat)> {
    check_targets(logits, targets)?;
    let batch = logits.rows().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Mat::zeros(logits.rows(), logits.cols());
    for ((g, &l), &u) in grad.data_mut().iter_mut().zip(logits.data()).zip(targets) {
        let u = u as f64;
        loss += softplus(l) - u * l;
        *g = (sigmoid(l) - u) / batch;
    }
    Ok((loss / batch, grad))
}

/// Block-error surrogate `1 - prod_i sigmoid(a_i L_i)` with `a_i = 2 u_i - 1`,
/// averaged over rows.
pub fn bler_product_loss(logits: &Mat, targets: &[u8]) -> Result<(f64, Mat)> {
    check_targets(logits, targets)?;
    let (rows, k) = (logits.rows(), logits.cols());
    let batch = rows.max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Mat::zeros(rows, k);
    for r in 0..rows {
        let l = logits.row(r);
        let t = &targets[r * k..(r + 1) * k];
        let mut log_p = 0.0;
        for (&li, &ti) in l.iter().zip(t) {
            let a = 2.0 * ti as f64 - 1.0;
            log_p -= softplus(-a * li);
        }
        let p = log_p.exp();
        loss += 1.0 - p;
        for (i, g) in grad.row_mut(r).iter_mut().enumerate() {
            let a = 2.0 * t[i] as f64 - 1.0;
            // d/dL_i (1 - P) = -P (1 - sigmoid(a L_i)) a
            *g = -p * sigmoid(-a * l[i]) * a / batch;
        }
    }
    Ok((loss / batch, grad))
}

/// Straight-through sign: forward is `sign(x)` with `sign(0) = +1`.
pub fn ste_sign(input: &Mat) -> Mat {
    input.map(|x| if x >= 0.0 { 1.0 } else { -1.0 })
}

/// Backward of [`ste_sign`]: passes the gradient where `|x| <= 1`.
pub fn ste_sign_backward(input: &Mat, output_grad: &Mat) -> Mat {
    let mut g = output_grad.clone();
    for (gi, &x) in g.data_mut().iter_mut().zip(input.data()) {
        if x.abs() > 1.0 {
            *gi = 0.0;
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_bce(l: f64, u: f64) -> f64 {
        let s = 1.0 / (1.0 + (-l).exp());
        // 1 - s evaluated as sigmoid(-l) to keep its digits at large l
        let t = 1.0 / (1.0 + l.exp());
        -(u * s.ln() + (1.0 - u) * t.ln())
    }

    #[test]
    fn uniform_logits() {
        let l = Mat::from_vec(1, 2, vec![0.0, 0.0]).unwrap();
        let (loss, g) = bce_with_logits(&l, &[0, 1]).unwrap();
        assert!((loss - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert_eq!(g.data(), &[0.5, -0.5]);
    }

    #[test]
    fn saturated_logit_does_not_overflow() {
        let l = Mat::from_vec(1, 1, vec![50.0]).unwrap();
        let (loss, g) = bce_with_logits(&l, &[1]).unwrap();
        assert!((0.0..1e-20).contains(&loss));
        assert!(g.data()[0].abs() < 1e-20);
        let l = Mat::from_vec(1, 1, vec![-800.0]).unwrap();
        let (loss, _) = bce_with_logits(&l, &[1]).unwrap();
        assert!((loss - 800.0).abs() < 1e-9);
    }

    #[test]
    fn stable_form_matches_naive_formula() {
        for i in 0..=400 {
            let l = -20.0 + 0.1 * i as f64;
            for u in [0u8, 1] {
                let m = Mat::from_vec(1, 1, vec![l]).unwrap();
                let (loss, _) = bce_with_logits(&m, &[u]).unwrap();
                assert!((loss - naive_bce(l, u as f64)).abs() < 1e-9, "l={l} u={u}");
            }
        }
    }

    #[test]
    fn non_binary_target_rejected() {
        let l = Mat::zeros(1, 2);
        assert!(matches!(bce_with_logits(&l, &[0, 2]), Err(Error::Input(_))));
        assert!(bce_with_logits(&l, &[0]).is_err());
    }

    #[test]
    fn bler_loss_bounds() {
        let l = Mat::zeros(1, 2);
        let (loss, _) = bler_product_loss(&l, &[0, 1]).unwrap();
        assert!((loss - 0.75).abs() < 1e-12);
        let l = Mat::from_vec(1, 3, vec![-60.0, 60.0, 60.0]).unwrap();
        let (loss, g) = bler_product_loss(&l, &[0, 1, 1]).unwrap();
        assert!(loss < 1e-20);
        assert!(g.data().iter().all(|v| v.abs() < 1e-20));
    }

    #[test]
    fn bler_loss_gradient_matches_differences() {
        let l = Mat::from_vec(2, 3, vec![0.3, -1.2, 2.0, 0.0, 0.7, -0.4]).unwrap();
        let t = [1, 0, 1, 0, 0, 1];
        let (_, g) = bler_product_loss(&l, &t).unwrap();
        let h = 1e-6;
        for i in 0..6 {
            let mut p = l.clone();
            p.data_mut()[i] += h;
            let mut m = l.clone();
            m.data_mut()[i] -= h;
            let fd = (bler_product_loss(&p, &t).unwrap().0 - bler_product_loss(&m, &t).unwrap().0) / (2.0 * h);
            assert!((fd - g.data()[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn ste_forward_and_backward() {
        let x = Mat::from_vec(1, 3, vec![0.3, -2.0, 0.0]).unwrap();
        let y = ste_sign(&x);
        assert_eq!(y.data(), &[1.0, -1.0, 1.0]);
        assert_eq!(ste_sign(&y), y);
        let g = ste_sign_backward(&x, &Mat::filled(1, 3, 1.0));
        assert_eq!(g.data(), &[1.0, 0.0, 1.0]);
    }
}
