use super::{EvidentialError, LambdaSchedule, NigParamMap, NigVars, Result};
use crate::numerics::{special, Scalar, Tape, Tensor, Var};

/// Value side of a total-loss evaluation. `total == nll + lambda * reg`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvidentialLoss<S> {
    pub nll: S,
    pub reg: S,
    pub lambda: S,
    pub total: S,
}

fn check_target<S: Scalar>(tape: &Tape<S>, p: &NigVars, y: Var) -> Result<()> {
    let ps = tape.shape(p.gamma);
    let ys = tape.shape(y);
    if ps != ys {
        return Err(EvidentialError::ShapeMismatch {
            params: ps.to_vec(),
            target: ys.to_vec(),
        });
    }
    Ok(())
}

/// `−log St(y; μ, σ², ν)` for the location-scale Student-t density.
pub fn student_t_nll<S: Scalar>(y: S, loc: S, scale2: S, dof: S) -> S {
    let half = S::lit(0.5);
    let r = y - loc;
    let lg = |v: S| special::lgamma(v).expect("positive degrees of freedom");
    lg(half * dof) - lg(half * (dof + S::one()))
        + half * (dof * S::PI() * scale2).ln()
        + half * (dof + S::one()) * (r * r / (dof * scale2)).ln_1p()
}

/// Per-element NLL of `y` under the Student-t marginal of `p`.
pub fn nll_value<S: Scalar>(p: &NigParamMap<S>, y: &Tensor<S>) -> Result<Tensor<S>> {
    if p.shape() != y.shape() {
        return Err(EvidentialError::ShapeMismatch {
            params: p.shape().to_vec(),
            target: y.shape().to_vec(),
        });
    }
    let (loc, scale2, dof) = p.student_t();
    let out = Tensor::from_fn(y.shape(), |i| {
        student_t_nll(y.data()[i], loc.data()[i], scale2.data()[i], dof.data()[i])
    });
    if !out.is_finite() {
        return Err(EvidentialError::NonFinite { what: "nll density" });
    }
    Ok(out)
}

/// Per-element `|y − γ| · (2υ + α)`.
pub fn evidence_regularizer_value<S: Scalar>(p: &NigParamMap<S>, y: &Tensor<S>) -> Result<Tensor<S>> {
    if p.shape() != y.shape() {
        return Err(EvidentialError::ShapeMismatch {
            params: p.shape().to_vec(),
            target: y.shape().to_vec(),
        });
    }
    Ok(Tensor::from_fn(y.shape(), |i| {
        let two_u = p.upsilon.data()[i] + p.upsilon.data()[i];
        (y.data()[i] - p.gamma.data()[i]).abs() * (two_u + p.alpha.data()[i])
    }))
}

/// Mean Student-t negative log-likelihood, recorded on the tape.
pub fn nll_loss<S: Scalar>(tape: &mut Tape<S>, p: &NigVars, y: Var) -> Result<Var> {
    check_target(tape, p, y)?;
    let half = S::lit(0.5);
    // ν = 2α, σ² = β(1+υ)/(υα)
    let dof = tape.scale(p.alpha, S::lit(2.0))?;
    let one_plus_u = tape.add_scalar(p.upsilon, S::one())?;
    let num = tape.mul(p.beta, one_plus_u)?;
    let den = tape.mul(p.upsilon, p.alpha)?;
    let scale2 = tape.div(num, den)?;

    let resid = tape.sub(y, p.gamma)?;
    let r2 = tape.square(resid)?;
    let nu_s2 = tape.mul(dof, scale2)?;
    let z = tape.div(r2, nu_s2)?;
    let z1 = tape.add_scalar(z, S::one())?;
    let log_kernel = tape.ln(z1)?;

    let half_dof = tape.scale(dof, half)?;
    let dof_p1 = tape.add_scalar(dof, S::one())?;
    let half_dof_p1 = tape.scale(dof_p1, half)?;
    let lg_a = tape.lgamma(half_dof)?;
    let lg_b = tape.lgamma(half_dof_p1)?;
    let norm = tape.sub(lg_a, lg_b)?;
    let pi_nu_s2 = tape.scale(nu_s2, S::PI())?;
    let log_scale = tape.ln(pi_nu_s2)?;
    let log_scale = tape.scale(log_scale, half)?;
    let tail = tape.mul(half_dof_p1, log_kernel)?;

    let nll = tape.add(norm, log_scale)?;
    let nll = tape.add(nll, tail)?;
    Ok(tape.mean(nll)?)
}

/// Mean `|y − γ| · (2υ + α)`; subgradient 0 where `y = γ`.
pub fn evidence_regularizer<S: Scalar>(tape: &mut Tape<S>, p: &NigVars, y: Var) -> Result<Var> {
    check_target(tape, p, y)?;
    let resid = tape.sub(y, p.gamma)?;
    let err = tape.abs(resid)?;
    let two_u = tape.scale(p.upsilon, S::lit(2.0))?;
    let evidence = tape.add(two_u, p.alpha)?;
    let r = tape.mul(err, evidence)?;
    Ok(tape.mean(r)?)
}

/// `nll + λ(step) · reg`, recorded on the tape.
pub fn total_loss<S: Scalar>(
    tape: &mut Tape<S>,
    p: &NigVars,
    y: Var,
    schedule: &LambdaSchedule,
    step: u64,
) -> Result<(Var, EvidentialLoss<S>)> {
    let nll = nll_loss(tape, p, y)?;
    let reg = evidence_regularizer(tape, p, y)?;
    let lambda = S::lit(schedule.lambda(step));
    let weighted = tape.scale(reg, lambda)?;
    let total = tape.add(nll, weighted)?;
    let values = EvidentialLoss {
        nll: tape.value(nll).item(),
        reg: tape.value(reg).item(),
        lambda,
        total: tape.value(total).item(),
    };
    Ok((total, values))
}
