//! Central finite-difference verification of tape gradients.

use std::fmt;

use super::param::ParamStore;
use super::tape::{OpKind, Tape, Var};
use crate::error::Result;
use crate::rng::RngStream;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Coordinates probed per parameter (all of them when the parameter is smaller).
    pub coords_per_param: usize,
    /// Denominator floor for the relative error, so coordinates whose true
    /// gradient is zero are judged on absolute error instead.
    pub abs_floor: f64,
    pub seed: u64,
    pub fault: Option<OpKind>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            coords_per_param: 32,
            abs_floor: 1e-6,
            seed: 0,
            fault: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    /// Probes discarded because the perturbation crossed a ReLU or max kink.
    pub rejected: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub label: String,
    pub params: Vec<ParamCheck>,
    pub max_rel_err: f64,
    pub tolerance: f64,
    /// Set when a non-finite value or forward error stopped the check.
    pub failure: Option<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failure.is_none() && self.max_rel_err < self.tolerance
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed() { "PASS" } else { "FAIL" };
        write!(
            f,
            "{:<28} {:>12.3e}  {status}",
            self.label, self.max_rel_err
        )?;
        if let Some(msg) = &self.failure {
            write!(f, "  ({msg})")?;
        }
        Ok(())
    }
}

fn eval_loss<F>(
    forward: &mut F,
    store: &mut ParamStore<f64>,
    cfg: &GradCheckConfig,
) -> Result<(f64, u64)>
where
    F: FnMut(&mut Tape<f64>, &mut ParamStore<f64>) -> Result<Var>,
{
    let mut tape = Tape::new();
    tape.track_kinks();
    if let Some(kind) = cfg.fault {
        tape.inject_fault(kind);
    }
    let loss = forward(&mut tape, store)?;
    Ok((tape.value(loss).item(), tape.kink_signature().unwrap_or(0)))
}

/// Compares analytic gradients of every trainable parameter in `store` with
/// central differences of the scalar returned by `forward`.
///
/// `forward` must be deterministic: dropout masks and similar randomness have
/// to be re-drawn from the same seed on every call.
pub fn grad_check<F>(
    label: &str,
    store: &mut ParamStore<f64>,
    cfg: &GradCheckConfig,
    mut forward: F,
) -> GradCheckReport
where
    F: FnMut(&mut Tape<f64>, &mut ParamStore<f64>) -> Result<Var>,
{
    let mut report = GradCheckReport {
        label: label.to_string(),
        params: Vec::new(),
        max_rel_err: 0.0,
        tolerance: cfg.tolerance,
        failure: None,
    };
    if let Err(msg) = run(&mut report, store, cfg, &mut forward) {
        report.failure = Some(msg);
    }
    report
}

fn run<F>(
    report: &mut GradCheckReport,
    store: &mut ParamStore<f64>,
    cfg: &GradCheckConfig,
    forward: &mut F,
) -> std::result::Result<(), String>
where
    F: FnMut(&mut Tape<f64>, &mut ParamStore<f64>) -> Result<Var>,
{
    store.zero_grads();
    let mut tape = Tape::new();
    tape.track_kinks();
    if let Some(kind) = cfg.fault {
        tape.inject_fault(kind);
    }
    let loss = forward(&mut tape, store).map_err(|e| format!("forward: {e}"))?;
    if !tape.value(loss).item().is_finite() {
        return Err("non-finite loss at base point".into());
    }
    let base_sig = tape.kink_signature().unwrap_or(0);
    tape.backward(loss, store)
        .map_err(|e| format!("backward: {e}"))?;
    drop(tape);

    let mut rng = RngStream::new(cfg.seed, crate::rng::streams::GRADCHECK);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let p = store.get(id);
        if !p.trainable {
            continue;
        }
        let name = p.name.clone();
        let analytic = p.grad.data().to_vec();
        if let Some(i) = analytic.iter().position(|g| !g.is_finite()) {
            return Err(format!("non-finite analytic gradient at {name}[{i}]"));
        }
        let mut candidates: Vec<usize> = (0..analytic.len()).filter(|&i| p.is_free(i)).collect();
        rng.shuffle(&mut candidates);

        let mut check = ParamCheck {
            name: name.clone(),
            checked: 0,
            rejected: 0,
            max_rel_err: 0.0,
            worst_index: 0,
        };
        for i in candidates {
            if check.checked >= cfg.coords_per_param {
                break;
            }
            let orig = store.value(id).data()[i];
            let mut probe = |delta: f64, store: &mut ParamStore<f64>| {
                store.get_mut(id).value.data_mut()[i] = orig + delta;
                let r = eval_loss(forward, store, cfg);
                store.get_mut(id).value.data_mut()[i] = orig;
                r
            };
            let (lp, sp) =
                probe(cfg.step, store).map_err(|e| format!("forward at {name}[{i}]: {e}"))?;
            let (lm, sm) =
                probe(-cfg.step, store).map_err(|e| format!("forward at {name}[{i}]: {e}"))?;
            if !lp.is_finite() || !lm.is_finite() {
                return Err(format!("non-finite loss when perturbing {name}[{i}]"));
            }
            if sp != base_sig || sm != base_sig {
                check.rejected += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * cfg.step);
            let a = analytic[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.abs_floor);
            if rel > check.max_rel_err {
                check.max_rel_err = rel;
                check.worst_index = i;
            }
            check.checked += 1;
        }
        if check.checked == 0 && check.rejected > 0 {
            return Err(format!("every probe of {name} crossed a kink"));
        }
        report.max_rel_err = report.max_rel_err.max(check.max_rel_err);
        report.params.push(check);
    }
    Ok(())
}
