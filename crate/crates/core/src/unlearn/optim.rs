use crate::error::{contract, Result};

fn check_shapes(theta: &[&mut [f64]], other: &[Vec<f64>], what: &str) -> Result<()> {
    if theta.len() != other.len() || theta.iter().zip(other).any(|(t, g)| t.len() != g.len()) {
        return contract(format!("{what} shapes do not match the parameters"));
    }
    Ok(())
}

/// `d = −α_r ∇𝓛_r + α_f ∇𝓛_f`.
pub fn grad_difference_direction(
    grad_r: &[Vec<f64>],
    grad_f: &[Vec<f64>],
    alpha_r: f64,
    alpha_f: f64,
) -> Result<Vec<Vec<f64>>> {
    if grad_r.len() != grad_f.len() || grad_r.iter().zip(grad_f).any(|(a, b)| a.len() != b.len()) {
        return contract("retain and forget gradients have different shapes");
    }
    Ok(grad_r
        .iter()
        .zip(grad_f)
        .map(|(gr, gf)| gr.iter().zip(gf).map(|(r, f)| -alpha_r * r + alpha_f * f).collect())
        .collect())
}

/// `θ ← θ − α_r ∇𝓛_r + α_f ∇𝓛_f`.
pub fn grad_difference_step(
    theta: &mut [&mut [f64]],
    grad_r: &[Vec<f64>],
    grad_f: &[Vec<f64>],
    alpha_r: f64,
    alpha_f: f64,
) -> Result<()> {
    check_shapes(theta, grad_r, "retain gradient")?;
    check_shapes(theta, grad_f, "forget gradient")?;
    for ((t, gr), gf) in theta.iter_mut().zip(grad_r).zip(grad_f) {
        for ((x, r), f) in t.iter_mut().zip(gr).zip(gf) {
            *x = *x - alpha_r * r + alpha_f * f;
        }
    }
    Ok(())
}

/// `θ ← θ + lr · direction`.
pub fn sgd_step(theta: &mut [&mut [f64]], direction: &[Vec<f64>], lr: f64) -> Result<()> {
    check_shapes(theta, direction, "direction")?;
    for (t, d) in theta.iter_mut().zip(direction) {
        for (x, v) in t.iter_mut().zip(d) {
            *x += lr * v;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum OptState {
    #[default]
    Sgd,
    AdamW {
        m: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
        step: u64,
    },
}

impl OptState {
    pub fn adamw_for(shapes: &[usize]) -> Self {
        OptState::AdamW {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        match self {
            OptState::Sgd => 0,
            OptState::AdamW { step, .. } => *step,
        }
    }
}

/// Decoupled weight decay `θ ← θ(1 − lr·wd)` on parameters with
/// `decay[i]`, then the bias-corrected Adam update on all of them.
pub fn adamw_step(
    theta: &mut [&mut [f64]],
    grad: &[Vec<f64>],
    state: &mut OptState,
    hp: &AdamWParams,
    decay: &[bool],
) -> Result<()> {
    check_shapes(theta, grad, "gradient")?;
    let OptState::AdamW { m, v, step } = state else {
        return contract("adamw_step needs an AdamW optimizer state");
    };
    if m.len() != theta.len() || m.iter().zip(theta.iter()).any(|(a, t)| a.len() != t.len()) {
        return contract("optimizer moments do not match the parameters");
    }
    if decay.len() != theta.len() {
        return contract("decay mask does not match the parameters");
    }
    *step += 1;
    let t = *step as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    for (i, ((th, g), (mi, vi))) in theta
        .iter_mut()
        .zip(grad)
        .zip(m.iter_mut().zip(v.iter_mut()))
        .enumerate()
    {
        let shrink = if decay[i] { 1.0 - hp.lr * hp.weight_decay } else { 1.0 };
        for k in 0..th.len() {
            mi[k] = hp.beta1 * mi[k] + (1.0 - hp.beta1) * g[k];
            vi[k] = hp.beta2 * vi[k] + (1.0 - hp.beta2) * g[k] * g[k];
            let m_hat = mi[k] / bc1;
            let v_hat = vi[k] / bc2;
            th[k] = th[k] * shrink - hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HP: AdamWParams = AdamWParams {
        lr: 1e-3,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
        weight_decay: 0.0,
    };

    #[test]
    fn zero_alphas_leave_theta_unchanged() {
        let mut p = vec![1.5, -2.25];
        let before = p.clone();
        let g = vec![vec![3.0, 4.0]];
        grad_difference_step(&mut [&mut p[..]], &g, &g, 0.0, 0.0).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn shared_gradient_algebra() {
        let g = vec![vec![2.0, -1.0]];
        let d = grad_difference_direction(&g, &g, 0.3, 0.5).unwrap();
        for (x, gv) in d[0].iter().zip(&g[0]) {
            assert!((x - (0.5 - 0.3) * gv).abs() < 1e-15);
        }
    }

    #[test]
    fn scalar_hand_case() {
        let mut p = vec![1.0];
        grad_difference_step(&mut [&mut p[..]], &[vec![2.0]], &[vec![3.0]], 0.1, 0.2).unwrap();
        assert!((p[0] - 1.4).abs() < 1e-15);
        let mut q = vec![1.0];
        let d = grad_difference_direction(&[vec![2.0]], &[vec![3.0]], 0.1, 0.2).unwrap();
        sgd_step(&mut [&mut q[..]], &d, 1.0).unwrap();
        assert!((q[0] - 1.4).abs() < 1e-15);
    }

    #[test]
    fn sgd_noops() {
        let mut p = vec![0.5];
        sgd_step(&mut [&mut p[..]], &[vec![0.0]], 1.0).unwrap();
        sgd_step(&mut [&mut p[..]], &[vec![7.0]], 0.0).unwrap();
        assert_eq!(p, vec![0.5]);
    }

    #[test]
    fn shape_mismatch_is_contract_violation() {
        let mut p = vec![0.0, 1.0];
        assert!(grad_difference_step(&mut [&mut p[..]], &[vec![1.0]], &[vec![1.0]], 1.0, 1.0).is_err());
    }

    #[test]
    fn adamw_first_step_closed_form() {
        for g in [0.3, -2.0, 1e-6] {
            let mut p = vec![1.0];
            let mut st = OptState::adamw_for(&[1]);
            adamw_step(&mut [&mut p[..]], &[vec![g]], &mut st, &HP, &[true]).unwrap();
            let expected = 1.0 - HP.lr * g / (g.abs() + HP.eps);
            assert!((p[0] - expected).abs() < 1e-15, "{g}");
        }
    }

    #[test]
    fn adamw_pure_decay() {
        let hp = AdamWParams { weight_decay: 0.01, ..HP };
        let mut p = vec![2.0];
        let mut st = OptState::adamw_for(&[1]);
        let mut expected = 2.0;
        for _ in 0..10 {
            adamw_step(&mut [&mut p[..]], &[vec![0.0]], &mut st, &hp, &[true]).unwrap();
            expected *= 1.0 - hp.lr * 0.01;
            assert_eq!(p[0], expected);
        }
        assert_eq!(st.step(), 10);
    }

    #[test]
    fn decay_mask_is_respected() {
        let hp = AdamWParams { weight_decay: 0.5, ..HP };
        let mut p = vec![2.0];
        let mut st = OptState::adamw_for(&[1]);
        adamw_step(&mut [&mut p[..]], &[vec![0.0]], &mut st, &hp, &[false]).unwrap();
        assert_eq!(p[0], 2.0);
    }
}
