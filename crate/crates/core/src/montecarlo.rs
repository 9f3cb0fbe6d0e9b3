//! Monte Carlo estimation of weak errors.
//!
//! Trajectory `i` always draws from `derive_stream(seed, offset + i)`, and
//! every reduction runs sequentially in trajectory order over the collected
//! terminal states, so results are bitwise independent of the thread count.

use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::MonteCarloError;
use crate::model::{SdeProblem, TestFunction};
use crate::rng::derive_stream;
use crate::schemes::{simulate_trajectory, Scheme, SchemeKind, SchemeSpec};

/// Trajectories handed to one worker task.
pub const BATCH_SIZE: usize = 1024;

/// Reference runs use trajectory indices `REFERENCE_INDEX_OFFSET + i`,
/// disjoint from the benchmark indices `0..M`.
pub const REFERENCE_INDEX_OFFSET: u64 = 1 << 63;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.96;

/// Number of uniform steps of size `h` covering `horizon`.
pub fn steps_for(horizon: f64, h: f64) -> Result<usize, MonteCarloError> {
    let err = MonteCarloError::StepDoesNotDivide { h, horizon };
    if !(h > 0.0 && h.is_finite()) {
        return Err(err);
    }
    let n = (horizon / h).round();
    if n < 1.0 || (n * h - horizon).abs() > 1e-9 * horizon {
        return Err(err);
    }
    Ok(n as usize)
}

/// Simulation parameters shared by reference and benchmark runs.
#[derive(Debug, Clone, Copy)]
pub struct MonteCarloRun {
    pub n_steps: usize,
    pub n_trajectories: usize,
    pub master_seed: u32,
    pub index_offset: u64,
}

/// Terminal states of a batch of trajectories, in trajectory order.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalSample {
    pub dim_state: usize,
    pub step_size: f64,
    /// Row `i` is the final state of trajectory `i` (last finite state if it exploded).
    pub states: Vec<f64>,
    pub exploded: Vec<bool>,
    pub max_newton_iterations: u32,
    pub newton_failures: usize,
}

/// Mean and standard error of `phi` over the non-exploded trajectories.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleSummary {
    pub mean: f64,
    pub std_error: f64,
    pub n_used: usize,
    pub n_exploded: usize,
}

impl MonteCarloRun {
    pub fn simulate(&self, problem: &SdeProblem, scheme: &dyn Scheme) -> TerminalSample {
        let n = self.n_trajectories;
        let batches: Vec<Vec<_>> = (0..n.div_ceil(BATCH_SIZE))
            .into_par_iter()
            .map(|b| {
                let start = b * BATCH_SIZE;
                let end = (start + BATCH_SIZE).min(n);
                (start..end)
                    .map(|i| {
                        let mut stream = derive_stream(self.master_seed, self.index_offset.wrapping_add(i as u64));
                        simulate_trajectory(problem, scheme, self.n_steps, &mut stream)
                    })
                    .collect()
            })
            .collect();

        let d = problem.dim_state;
        let mut sample = TerminalSample {
            dim_state: d,
            step_size: problem.horizon / self.n_steps as f64,
            states: Vec::with_capacity(n * d),
            exploded: Vec::with_capacity(n),
            max_newton_iterations: 0,
            newton_failures: 0,
        };
        for path in batches.into_iter().flatten() {
            sample.states.extend_from_slice(&path.state);
            sample.exploded.push(path.exploded);
            sample.max_newton_iterations = sample.max_newton_iterations.max(path.max_newton_iterations);
            sample.newton_failures += usize::from(path.newton_failed);
        }
        sample
    }
}

impl TerminalSample {
    pub fn n_trajectories(&self) -> usize {
        self.exploded.len()
    }

    pub fn n_exploded(&self) -> usize {
        self.exploded.iter().filter(|&&e| e).count()
    }

    pub fn explosion_fraction(&self) -> f64 {
        self.n_exploded() as f64 / self.n_trajectories().max(1) as f64
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim_state..(i + 1) * self.dim_state]
    }

    /// Values of `phi` on the non-exploded terminal states, in trajectory order.
    pub fn phi_values(&self, phi: &TestFunction) -> Vec<f64> {
        self.states
            .chunks_exact(self.dim_state)
            .zip(&self.exploded)
            .filter(|(_, &e)| !e)
            .map(|(x, _)| phi.eval(x))
            .collect()
    }

    /// Sample mean and `std / sqrt(n)`. With a single usable trajectory the
    /// standard error is `+inf`; with none, the mean is NaN.
    pub fn summarize(&self, phi: &TestFunction) -> SampleSummary {
        let values = self.phi_values(phi);
        let n = values.len();
        let n_exploded = self.n_trajectories() - n;
        // Shift by the first value so that identical samples give an exact
        // mean and a zero spread.
        let shift = values.first().copied().unwrap_or(0.0);
        let mean_shifted = if n == 0 {
            f64::NAN
        } else {
            values.iter().map(|v| v - shift).sum::<f64>() / n as f64
        };
        let mean = shift + mean_shifted;
        let std_error = if n < 2 {
            f64::INFINITY
        } else {
            let ss: f64 = values
                .iter()
                .map(|v| {
                    let d = v - shift - mean_shifted;
                    d * d
                })
                .sum();
            (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt()
        };
        SampleSummary {
            mean,
            std_error,
            n_used: n,
            n_exploded,
        }
    }
}

/// Monte Carlo estimate of `E[phi(X_T)]` used as ground truth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceValue {
    pub phi_label: String,
    pub value: f64,
    pub h_ref: f64,
    pub n_trajectories: usize,
    pub std_error: f64,
}

/// Runs the reference (backward Euler at `h_ref`) once and evaluates
/// every test function on the same terminal states.
pub fn compute_references(
    problem: &SdeProblem,
    phis: &[TestFunction],
    h_ref: f64,
    n_trajectories: usize,
    master_seed: u32,
) -> Result<Vec<ReferenceValue>, MonteCarloError> {
    compute_references_with(
        problem,
        &SchemeSpec::new(SchemeKind::Bem),
        phis,
        h_ref,
        n_trajectories,
        master_seed,
    )
}

/// As [`compute_references`], with explicit backward Euler settings.
pub fn compute_references_with(
    problem: &SdeProblem,
    reference_scheme: &SchemeSpec,
    phis: &[TestFunction],
    h_ref: f64,
    n_trajectories: usize,
    master_seed: u32,
) -> Result<Vec<ReferenceValue>, MonteCarloError> {
    if n_trajectories == 0 {
        return Err(MonteCarloError::NoTrajectories);
    }
    let scheme = reference_scheme.build()?;
    let run = MonteCarloRun {
        n_steps: steps_for(problem.horizon, h_ref)?,
        n_trajectories,
        master_seed,
        index_offset: REFERENCE_INDEX_OFFSET,
    };
    let sample = run.simulate(problem, scheme.as_ref());
    let n_exploded = sample.n_exploded();
    if n_exploded > 0 {
        return Err(MonteCarloError::ReferenceUnreliable {
            n_exploded,
            n_trajectories,
        });
    }
    Ok(phis
        .iter()
        .map(|phi| {
            let s = sample.summarize(phi);
            ReferenceValue {
                phi_label: phi.label.clone(),
                value: s.mean,
                h_ref,
                n_trajectories,
                std_error: s.std_error,
            }
        })
        .collect())
}

pub fn compute_reference(
    problem: &SdeProblem,
    phi: &TestFunction,
    h_ref: f64,
    n_trajectories: usize,
    master_seed: u32,
) -> Result<ReferenceValue, MonteCarloError> {
    let mut refs = compute_references(problem, std::slice::from_ref(phi), h_ref, n_trajectories, master_seed)?;
    Ok(refs.remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeakErrorEstimate {
    pub scheme_id: String,
    pub phi_label: String,
    pub step_size: f64,
    pub n_trajectories: usize,
    pub mean_phi: f64,
    pub std_error: f64,
    pub ci95_halfwidth: f64,
    /// `|reference - mean_phi|`, NaN when any trajectory exploded.
    pub weak_error: f64,
    pub n_exploded: usize,
}

impl WeakErrorEstimate {
    pub fn from_sample(
        scheme_id: &str,
        sample: &TerminalSample,
        phi: &TestFunction,
        reference: &ReferenceValue,
    ) -> Self {
        let s = sample.summarize(phi);
        let weak_error = if s.n_exploded > 0 {
            f64::NAN
        } else {
            (reference.value - s.mean).abs()
        };
        let estimate = WeakErrorEstimate {
            scheme_id: scheme_id.to_string(),
            phi_label: phi.label.clone(),
            step_size: sample.step_size,
            n_trajectories: sample.n_trajectories(),
            mean_phi: s.mean,
            std_error: s.std_error,
            ci95_halfwidth: Z95 * s.std_error,
            weak_error,
            n_exploded: s.n_exploded,
        };
        if estimate.n_exploded > 0 {
            warn!(
                "{} / {} at h={}: {} exploded trajectories, weak error unreliable",
                estimate.scheme_id, estimate.phi_label, estimate.step_size, estimate.n_exploded
            );
        } else if !estimate.statistically_resolved() {
            warn!(
                "{} / {} at h={}: 95% CI half-width {:.3e} exceeds a tenth of the weak error {:.3e}",
                estimate.scheme_id,
                estimate.phi_label,
                estimate.step_size,
                estimate.ci95_halfwidth,
                estimate.weak_error
            );
        }
        estimate
    }

    pub fn is_reliable(&self) -> bool {
        self.n_exploded == 0 && self.weak_error.is_finite()
    }

    /// CI half-width at most a tenth of the weak error.
    pub fn statistically_resolved(&self) -> bool {
        self.is_reliable() && self.ci95_halfwidth <= self.weak_error / 10.0
    }
}

fn check_ladder_step(problem: &SdeProblem, h: f64, reference: &ReferenceValue) -> Result<usize, MonteCarloError> {
    let n = steps_for(problem.horizon, h)?;
    if h < 4.0 * reference.h_ref * (1.0 - 1e-12) {
        return Err(MonteCarloError::StepTooFine {
            h,
            h_ref: reference.h_ref,
        });
    }
    Ok(n)
}

/// Simulates `n_trajectories` paths (indices `0..M`) of `spec` at step `h`
/// and compares each test function with its reference value.
pub fn estimate_weak_errors(
    problem: &SdeProblem,
    spec: &SchemeSpec,
    phis: &[TestFunction],
    h: f64,
    n_trajectories: usize,
    master_seed: u32,
    references: &[ReferenceValue],
) -> Result<(Vec<WeakErrorEstimate>, TerminalSample), MonteCarloError> {
    if n_trajectories == 0 {
        return Err(MonteCarloError::NoTrajectories);
    }
    assert_eq!(phis.len(), references.len(), "one reference per test function");
    let mut n_steps = 0;
    for reference in references {
        n_steps = check_ladder_step(problem, h, reference)?;
    }
    let n_steps = if references.is_empty() {
        steps_for(problem.horizon, h)?
    } else {
        n_steps
    };
    let scheme = spec.build()?;
    let run = MonteCarloRun {
        n_steps,
        n_trajectories,
        master_seed,
        index_offset: 0,
    };
    let sample = run.simulate(problem, scheme.as_ref());
    let estimates = phis
        .iter()
        .zip(references)
        .map(|(phi, reference)| WeakErrorEstimate::from_sample(spec.id(), &sample, phi, reference))
        .collect();
    Ok((estimates, sample))
}

pub fn estimate_weak_error(
    problem: &SdeProblem,
    spec: &SchemeSpec,
    phi: &TestFunction,
    h: f64,
    n_trajectories: usize,
    master_seed: u32,
    reference: &ReferenceValue,
) -> Result<WeakErrorEstimate, MonteCarloError> {
    let (mut est, _) = estimate_weak_errors(
        problem,
        spec,
        std::slice::from_ref(phi),
        h,
        n_trajectories,
        master_seed,
        std::slice::from_ref(reference),
    )?;
    Ok(est.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_ou_model, make_quintic_model};

    fn fake_reference(value: f64, h_ref: f64) -> ReferenceValue {
        ReferenceValue {
            phi_label: "c".into(),
            value,
            h_ref,
            n_trajectories: 1,
            std_error: 0.0,
        }
    }

    #[test]
    fn step_counts() {
        assert_eq!(steps_for(1.0, 1.0 / 64.0).unwrap(), 64);
        assert_eq!(steps_for(2.0, 0.1).unwrap(), 20);
        assert!(steps_for(1.0, 0.3).is_err());
        assert!(steps_for(1.0, 0.0).is_err());
        assert!(steps_for(1.0, 2.0).is_err());
    }

    #[test]
    fn constant_functional() {
        let p = make_quintic_model(2.0);
        let spec = SchemeSpec::new(SchemeKind::Mes);
        let est = estimate_weak_error(
            &p,
            &spec,
            &TestFunction::constant(0.25),
            1.0 / 16.0,
            500,
            100,
            &fake_reference(1.0, 1.0 / 64.0),
        )
        .unwrap();
        assert_eq!(est.mean_phi, 0.25);
        assert_eq!(est.std_error, 0.0);
        assert_eq!(est.weak_error, 0.75);
        assert_eq!(est.ci95_halfwidth, 0.0);
    }

    #[test]
    fn single_trajectory_has_infinite_std_error() {
        let p = make_quintic_model(2.0);
        let est = estimate_weak_error(
            &p,
            &SchemeSpec::new(SchemeKind::Bem),
            &TestFunction::builtin("identity").unwrap(),
            1.0 / 16.0,
            1,
            100,
            &fake_reference(1.0, 1.0 / 64.0),
        )
        .unwrap();
        assert_eq!(est.std_error, f64::INFINITY);
        assert_eq!(est.ci95_halfwidth, f64::INFINITY);
    }

    #[test]
    fn ladder_validation() {
        let p = make_quintic_model(2.0);
        let phi = TestFunction::builtin("identity").unwrap();
        let spec = SchemeSpec::new(SchemeKind::Mes);
        let r = fake_reference(0.0, 1.0 / 64.0);
        assert!(matches!(
            estimate_weak_error(&p, &spec, &phi, 1.0 / 32.0, 10, 1, &r),
            Err(MonteCarloError::StepTooFine { .. })
        ));
        assert!(matches!(
            estimate_weak_error(&p, &spec, &phi, 0.3, 10, 1, &r),
            Err(MonteCarloError::StepDoesNotDivide { .. })
        ));
        assert!(matches!(
            estimate_weak_error(&p, &spec, &phi, 1.0 / 16.0, 0, 1, &r),
            Err(MonteCarloError::NoTrajectories)
        ));
    }

    #[test]
    fn deterministic_reference_has_zero_spread() {
        let p = make_ou_model(2.0, 0.0, 1.0, 1.0).unwrap();
        let r = compute_reference(&p, &TestFunction::builtin("identity").unwrap(), 1.0 / 256.0, 200, 100).unwrap();
        assert_eq!(r.std_error, 0.0);
        assert!((r.value - (-2.0f64).exp()).abs() < 1e-2);
    }

    #[test]
    fn explosions_flag_the_weak_error() {
        let p = make_quintic_model(8.0);
        let est = estimate_weak_error(
            &p,
            &SchemeSpec::new(SchemeKind::Em),
            &TestFunction::builtin("identity").unwrap(),
            1.0 / 64.0,
            50,
            100,
            &fake_reference(1.0, 1.0 / 256.0),
        )
        .unwrap();
        assert!(est.n_exploded > 0);
        assert!(est.n_exploded <= est.n_trajectories);
        assert!(est.weak_error.is_nan());
        assert!(!est.is_reliable());
    }

    #[test]
    fn reference_failure_on_explosion() {
        // A reference run with an unstable scheme is refused.
        let p = make_quintic_model(8.0);
        let em = SchemeSpec::new(SchemeKind::Em);
        let err = compute_references_with(
            &p,
            &em,
            &[TestFunction::builtin("identity").unwrap()],
            1.0 / 64.0,
            20,
            100,
        )
        .unwrap_err();
        assert!(matches!(err, MonteCarloError::ReferenceUnreliable { .. }));
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let p = make_quintic_model(2.0);
        let scheme = SchemeSpec::new(SchemeKind::Bts).build().unwrap();
        let run = MonteCarloRun {
            n_steps: 32,
            n_trajectories: 3000,
            master_seed: 100,
            index_offset: 0,
        };
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| run.simulate(&p, scheme.as_ref()));
        let b = four.install(|| run.simulate(&p, scheme.as_ref()));
        assert_eq!(a, b);
        let phi = TestFunction::builtin("square").unwrap();
        assert_eq!(a.summarize(&phi).mean.to_bits(), b.summarize(&phi).mean.to_bits());
    }
}
