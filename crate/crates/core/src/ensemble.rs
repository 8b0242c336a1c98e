//! Monte Carlo validation of the filter against its Riccati covariance.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::Result;
use crate::kalman::{solve_riccati, FilterPlan, LinearModel, RiccatiSolution};
use crate::linalg::EnsembleMoments;
use crate::observer::AugmentedModel;
use crate::sde::{PathSimulator, SimConfig};

/// Estimation errors `x - x^` collected at checkpoint indices of the grid.
#[derive(Debug, Clone)]
pub struct FilterEnsemble {
    pub riccati: RiccatiSolution,
    pub checkpoints: Vec<usize>,
    /// `errors[c][path]` is the error vector at checkpoint `c`.
    pub errors: Vec<Vec<DVector<f64>>>,
    /// Realized `z_p` and its terminal estimate, per path.
    pub terminal: Vec<(f64, f64)>,
}

/// `count` grid indices evenly spread over `(0, n_steps]`.
pub fn checkpoint_indices(n_steps: usize, count: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (1..=count)
        .map(|j| ((j as f64 / count as f64) * n_steps as f64).round() as usize)
        .filter(|&k| k > 0)
        .collect();
    idx.dedup();
    idx
}

/// Simulate `sim.n_paths` records, filter each with the optimal gain and
/// gather errors at `checkpoints` evenly spaced grid points.
pub fn filter_ensemble(model: &AugmentedModel, sim: &SimConfig, checkpoints: usize) -> Result<FilterEnsemble> {
    let linear = model.to_linear_model()?;
    let simulator = PathSimulator::new(model, sim)?;
    let riccati = solve_riccati(&linear, simulator.times())?;
    let plan = FilterPlan::new(&linear, &riccati)?;
    let cps = checkpoint_indices(sim.n_steps(), checkpoints);

    type PathResult = (Vec<DVector<f64>>, (f64, f64));
    let per_path: Vec<PathResult> = (0..sim.n_paths)
        .into_par_iter()
        .map(|i| {
            let path = simulator.simulate(i)?;
            let run = plan.run(&path.record)?;
            let errs = cps.iter().map(|&k| path.trajectory.state(k) - &run.x_hat[k]).collect();
            Ok((errs, (path.record.z_p_true, run.terminal()[0])))
        })
        .collect::<Result<_>>()?;

    let mut errors = vec![Vec::with_capacity(sim.n_paths); cps.len()];
    let mut terminal = Vec::with_capacity(sim.n_paths);
    for (errs, term) in per_path {
        for (c, e) in errs.into_iter().enumerate() {
            errors[c].push(e);
        }
        terminal.push(term);
    }
    Ok(FilterEnsemble { riccati, checkpoints: cps, errors, terminal })
}

/// Monte Carlo error statistics at one checkpoint next to `S*(t)`.
#[derive(Debug, Clone)]
pub struct CheckpointComparison {
    pub t: f64,
    pub moments: EnsembleMoments,
    pub sigma_star: DMatrix<f64>,
    /// Largest `|mean error| / SE` over components.
    pub max_bias_z: f64,
    /// Largest `|empirical cov - S*| / SE` over entries.
    pub max_covariance_z: f64,
}

impl FilterEnsemble {
    pub fn compare(&self) -> Vec<CheckpointComparison> {
        self.checkpoints
            .iter()
            .zip(&self.errors)
            .map(|(&k, errs)| {
                let moments = EnsembleMoments::from_samples(errs);
                let sigma_star = self.riccati.sigma_star[k].clone();
                let max_bias_z = z_max(moments.mean.iter().zip(moments.mean_se.iter()).map(|(m, s)| (*m, *s)));
                let max_covariance_z = z_max(
                    moments
                        .covariance
                        .iter()
                        .zip(sigma_star.iter())
                        .zip(moments.covariance_se.iter())
                        .map(|((c, s), se)| (c - s, *se)),
                );
                CheckpointComparison { t: self.riccati.times[k], moments, sigma_star, max_bias_z, max_covariance_z }
            })
            .collect()
    }
}

fn z_max(pairs: impl Iterator<Item = (f64, f64)>) -> f64 {
    pairs
        .map(|(d, se)| if se > 0.0 { d.abs() / se } else if d == 0.0 { 0.0 } else { f64::INFINITY })
        .fold(0.0, f64::max)
}

/// Trace of the terminal error covariance for the gain schedule
/// `G*(t) + delta`, next to the optimal trace.
pub fn perturbed_terminal_trace(
    model: &LinearModel,
    riccati: &RiccatiSolution,
    delta: &DMatrix<f64>,
) -> Result<(f64, f64)> {
    let traj = crate::kalman::error_covariance_ode(
        model,
        |t| riccati.gain_at(model, t).expect("coefficients validated") + delta,
        &riccati.times,
    )?;
    Ok((traj.last().expect("non-empty").trace(), riccati.terminal().trace()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoints_are_spread_and_unique() {
        assert_eq!(checkpoint_indices(100, 10), vec![10, 20, 30, 40, 50, 60, 70, 80, 90, 100]);
        assert_eq!(checkpoint_indices(3, 10), vec![1, 2, 3]);
    }
}
