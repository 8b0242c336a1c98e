use std::path::{Path, PathBuf};

use anyhow::Result;
use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde_json::{json, Value};

use coherent_observer::ensemble::{filter_ensemble, perturbed_terminal_trace};
use coherent_observer::fock::{
    build_operators, coherent_density, evolve, expectations, qubit_eigenstate, reduced_mean, Expectation, JointState,
};
use coherent_observer::kalman::{FilterPlan, LinearModel};
use coherent_observer::linalg::EnsembleMoments;
use coherent_observer::observer::{
    all_pass_residual, hurwitz_check, optimal_gain, output_bias, steady_state_mean, steady_state_response,
};
use coherent_observer::sde::{exact_moments, PathSimulator, Scheme};
use coherent_observer::spin::qubit_moments;
use coherent_observer::{build_augmented, simulate_paths, solve_riccati};

use crate::config::ExperimentConfig;
use crate::report::{matrix_json, vector_json, Check, CsvWriter, Outcome};

const Z_LIMIT: f64 = 4.0;
const ALL_PASS_TOL: f64 = 1e-10;
const GAIN_NORMALIZATION_TOL: f64 = 1e-14;
const SCALAR_RICCATI_TOL: f64 = 1e-8;
const OPTIMALITY_SLACK: f64 = 1e-9;
const ORACLE_MEAN_TOL: f64 = 1e-4;
const ORACLE_DRIFT_TOL: f64 = 1e-6;
const COMMUTATOR_TOL: f64 = 1e-12;

/// Frequencies `0, 0.1, ..., 50`.
pub fn all_pass_grid() -> Vec<f64> {
    (0..=500).map(|i| i as f64 * 0.1).collect()
}

pub fn analyze(cfg: &ExperimentConfig, _out: &Path) -> Result<Outcome> {
    let plant = cfg.plant_spec()?;
    let obs = cfg.observer_spec()?;
    let m = steady_state_mean(&obs);
    let response = steady_state_response(&obs);
    let e = output_bias(&obs);
    let k = optimal_gain(&e)?;
    let residual = all_pass_residual(&obs, &all_pass_grid())?;
    let (_, eig) = hurwitz_check(&obs);
    let max_re = eig.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
    let (z_mean, z_var) = qubit_moments(&plant);
    let ss_cov = Matrix2::identity() + response * response.transpose() * z_var;

    let checks = vec![
        Check::at_most("all_pass_residual", residual, ALL_PASS_TOL),
        Check::below("hurwitz_max_real_part", max_re, 0.0),
        Check::at_most("gain_normalization", ((k * e)[0] - 1.0).abs(), GAIN_NORMALIZATION_TOL),
    ];
    let details = json!({
        "plant": { "z_p_mean": z_mean, "z_p_variance": z_var, "z_p_norm": plant.c_p().norm() },
        "steady_state_map": matrix_json(&m),
        "steady_state_response": vector_json(&response),
        "steady_state_observer_mean": vector_json(&(response * z_mean)),
        "steady_state_observer_covariance": matrix_json(&ss_cov),
        "output_bias": vector_json(&e),
        "gain": vector_json(&k),
        "gain_norm": k.norm(),
        "gain_norm_zero_detuning_formula": obs.kappa().sqrt() / (4.0 * obs.beta().norm()),
        "all_pass": { "omega_min": 0.0, "omega_max": 50.0, "omega_step": 0.1, "max_residual": residual },
        "hurwitz_eigenvalues": eig.iter().map(|l| [l.re, l.im]).collect::<Vec<_>>(),
    });
    Ok(Outcome { command: "analyze", checks, details, artifacts: vec![] })
}

pub fn simulate(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let plant = cfg.plant_spec()?;
    let obs = cfg.observer_spec()?;
    let model = build_augmented(&plant, &obs)?;
    let sim = cfg.sim_config()?;
    let paths = simulate_paths(&model, &sim)?;
    let n = sim.n_steps();
    let t_final = paths[0].trajectory.times[n];

    let artifact = out.join("paths.csv");
    let mut csv = CsvWriter::new(&["path_id", "t", "dz", "x_o_1", "x_o_2", "z_p_true"]);
    for (id, path) in paths.iter().take(cfg.outputs.export_paths).enumerate() {
        let tr = &path.trajectory;
        for k in 0..=n {
            let dz = if k == 0 { 0.0 } else { path.record.dz[k - 1] };
            csv.row(Some(id), &[tr.times[k], dz, tr.x_o[k][0], tr.x_o[k][1], tr.z_p_true]);
        }
    }
    csv.write(&artifact)?;

    let response = steady_state_response(&obs);
    let (z_mean, z_var) = qubit_moments(&plant);
    let (exact_mean, exact_cov) = exact_moments(&model, t_final)?;
    let mut checks = Vec::new();
    let mut details = json!({
        "t_final": t_final,
        "n_paths": sim.n_paths,
        "terminal_state_order": ["z_p", "x_o_1", "x_o_2"],
        "analytic_mean": vector_json(&exact_mean),
        "analytic_covariance": matrix_json(&exact_cov),
        "steady_state_observer_mean": vector_json(&(response * z_mean)),
        "steady_state_observer_covariance": matrix_json(&(Matrix2::identity() + response * response.transpose() * z_var)),
    });

    // Ensemble statistics need at least two paths.
    if sim.n_paths >= 2 {
        let terminal: Vec<DVector<f64>> = paths.iter().map(|p| p.trajectory.state(n)).collect();
        let moments = EnsembleMoments::from_samples(&terminal);
        let mean_z: Vec<f64> = (0..3).map(|i| z_score(moments.mean[i] - exact_mean[i], moments.mean_se[i])).collect();
        let cov_z = DMatrix::from_fn(3, 3, |i, j| {
            z_score(moments.covariance[(i, j)] - exact_cov[(i, j)], moments.covariance_se[(i, j)])
        });
        let max_mean_z = mean_z.iter().fold(0.0_f64, |a, z| a.max(z.abs()));
        let max_cov_z = cov_z.iter().fold(0.0_f64, |a, z| a.max(z.abs()));
        checks.push(Check::at_most("terminal_mean_max_abs_z", max_mean_z, Z_LIMIT));
        checks.push(Check::at_most("terminal_covariance_max_abs_z", max_cov_z, Z_LIMIT));

        // Increments of dn = dz - z_p dt over the second half of the horizon,
        // where the observer has settled; their intensity should be |K|^2.
        let checked = obs.kappa() * t_final / 2.0 >= 20.0 && sim.scheme == Scheme::ExactLti;
        let noise = record_noise_intensity(&paths, n / 2, sim.dt);
        let k_norm2 = model.d.norm_squared();
        let noise_z = z_score(noise.0 - k_norm2, noise.1);
        if checked {
            checks.push(Check::at_most("record_noise_intensity_abs_z", noise_z.abs(), Z_LIMIT));
        }
        let extra = json!({
            "empirical_mean": vector_json(&moments.mean),
            "empirical_mean_se": vector_json(&moments.mean_se),
            "empirical_covariance": matrix_json(&moments.covariance),
            "empirical_covariance_se": matrix_json(&moments.covariance_se),
            "mean_z_scores": mean_z,
            "covariance_z_scores": matrix_json(&cov_z),
            "record_noise": {
                "from_t": paths[0].trajectory.times[n / 2],
                "intensity": noise.0,
                "intensity_se": noise.1,
                "expected_gain_norm_squared": k_norm2,
                "z_score": noise_z,
                "checked": checked,
            },
        });
        let obj = details.as_object_mut().expect("object");
        obj.extend(extra.as_object().expect("object").clone());
    }
    Ok(Outcome { command: "simulate", checks, details, artifacts: vec![artifact] })
}

/// Mean of `dn^2 / dt` and its standard error over all paths from grid
/// index `from` on.
fn record_noise_intensity(paths: &[coherent_observer::sde::SimulatedPath], from: usize, dt: f64) -> (f64, f64) {
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    let mut count = 0usize;
    for p in paths {
        for &dz in &p.record.dz[from..] {
            let v = (dz - p.record.z_p_true * dt).powi(2) / dt;
            s1 += v;
            s2 += v * v;
            count += 1;
        }
    }
    let n = count as f64;
    let mean = s1 / n;
    let var = (s2 / n - mean * mean).max(0.0);
    (mean, (var / n).sqrt())
}

fn z_score(diff: f64, se: f64) -> f64 {
    if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

pub fn filter(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let plant = cfg.plant_spec()?;
    let obs = cfg.observer_spec()?;
    let model = build_augmented(&plant, &obs)?;
    let linear = model.to_linear_model()?;
    let sim = cfg.filter_sim_config()?;
    let f = &cfg.filter;

    let ensemble = filter_ensemble(&model, &sim, f.checkpoints)?;
    let riccati = &ensemble.riccati;
    let n = sim.n_steps();
    let mut artifacts = Vec::new();

    let riccati_path = out.join("riccati.csv");
    let mut csv = CsvWriter::new(&["t", "sigma_11", "sigma_22", "sigma_33", "sigma_12", "sigma_13", "sigma_23", "g_1", "g_2", "g_3"]);
    for k in 0..=n {
        let s = &riccati.sigma_star[k];
        let g = &riccati.gains[k];
        csv.row(
            None,
            &[riccati.times[k], s[(0, 0)], s[(1, 1)], s[(2, 2)], s[(0, 1)], s[(0, 2)], s[(1, 2)], g[0], g[1], g[2]],
        );
    }
    csv.write(&riccati_path)?;
    artifacts.push(riccati_path);

    let paths_path = out.join("paths.csv");
    let simulator = PathSimulator::new(&model, &sim)?;
    let plan = FilterPlan::new(&linear, riccati)?;
    let mut csv = CsvWriter::new(&[
        "path_id", "t", "dz", "x_o_1", "x_o_2", "z_p_true", "x_hat_1", "x_hat_2", "x_hat_3",
    ]);
    for id in 0..cfg.outputs.export_paths.min(sim.n_paths) {
        let path = simulator.simulate(id)?;
        let run = plan.run(&path.record)?;
        let tr = &path.trajectory;
        for k in 0..=n {
            let dz = if k == 0 { 0.0 } else { path.record.dz[k - 1] };
            let xh = &run.x_hat[k];
            csv.row(Some(id), &[tr.times[k], dz, tr.x_o[k][0], tr.x_o[k][1], tr.z_p_true, xh[0], xh[1], xh[2]]);
        }
    }
    csv.write(&paths_path)?;
    artifacts.push(paths_path);

    let table = ensemble.compare();
    let max_bias_z = table.iter().map(|c| c.max_bias_z).fold(0.0, f64::max);
    let max_cov_z = table.iter().map(|c| c.max_covariance_z).fold(0.0, f64::max);
    let last = table.last().expect("at least one checkpoint");
    let terminal_var_z = z_score(
        last.moments.covariance[(0, 0)] - last.sigma_star[(0, 0)],
        last.moments.covariance_se[(0, 0)],
    );

    let (gaps, optimal_trace) = perturbation_gaps(&linear, riccati, f.perturbations, f.perturbation_scale, sim.seed)?;
    let min_gap = gaps.iter().copied().fold(f64::INFINITY, f64::min);

    let mut checks = vec![
        Check::at_most("unbiasedness_max_abs_z", max_bias_z, Z_LIMIT),
        Check::at_most("error_covariance_max_abs_z", max_cov_z, Z_LIMIT),
        Check::at_most("terminal_z_p_variance_abs_z", terminal_var_z.abs(), Z_LIMIT),
    ];
    if !gaps.is_empty() {
        checks.push(Check::at_least("perturbed_gain_min_trace_gap", min_gap, -OPTIMALITY_SLACK));
    }
    let scalar = if f.scalar_self_test {
        let err = scalar_self_test(f.dt)?;
        checks.push(Check::at_most("scalar_riccati_max_error", err, SCALAR_RICCATI_TOL));
        json!({ "t_final": 10.0, "dt": f.dt, "max_abs_error": err })
    } else {
        Value::Null
    };

    let comparison: Vec<Value> = table
        .iter()
        .map(|c| {
            json!({
                "t": c.t,
                "mean_error": vector_json(&c.moments.mean),
                "mean_error_se": vector_json(&c.moments.mean_se),
                "empirical_covariance": matrix_json(&c.moments.covariance),
                "empirical_covariance_se": matrix_json(&c.moments.covariance_se),
                "sigma_star": matrix_json(&c.sigma_star),
                "max_bias_z": c.max_bias_z,
                "max_covariance_z": c.max_covariance_z,
            })
        })
        .collect();
    let terminal_errors: Vec<f64> = ensemble.terminal.iter().map(|(z, zh)| zh - z).collect();
    let details = json!({
        "t_final": riccati.times[n],
        "dt": sim.dt,
        "n_paths": sim.n_paths,
        "state_order": ["z_p", "x_o_1", "x_o_2"],
        "sigma_star_terminal": matrix_json(riccati.terminal()),
        "sigma_star_min_eigenvalue": riccati.min_eigenvalue(),
        "checkpoints": comparison,
        "terminal_z_p_error": {
            "sigma_star_11": last.sigma_star[(0, 0)],
            "empirical_variance": last.moments.covariance[(0, 0)],
            "empirical_variance_se": last.moments.covariance_se[(0, 0)],
            "z_score": terminal_var_z,
            "per_path": terminal_errors,
        },
        "perturbations": {
            "count": gaps.len(),
            "scale": f.perturbation_scale,
            "optimal_terminal_trace": optimal_trace,
            "trace_gaps": gaps,
        },
        "scalar_self_test": scalar,
    });
    Ok(Outcome { command: "filter", checks, details, artifacts })
}

/// `tr S(T) - tr S*(T)` for `count` random constant offsets of the optimal
/// gain schedule.
pub fn perturbation_gaps(
    model: &LinearModel,
    riccati: &coherent_observer::RiccatiSolution,
    count: usize,
    scale: f64,
    seed: u64,
) -> Result<(Vec<f64>, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let (n, outputs) = (model.n(), model.outputs());
    let deltas: Vec<DMatrix<f64>> = (0..count)
        .map(|_| DMatrix::from_fn(n, outputs, |_, _| scale * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let traces = deltas
        .par_iter()
        .map(|d| perturbed_terminal_trace(model, riccati, d))
        .collect::<coherent_observer::Result<Vec<_>>>()?;
    let optimal = riccati.terminal().trace();
    Ok((traces.iter().map(|(t, _)| t - optimal).collect(), optimal))
}

/// Largest deviation of the scalar regression Riccati solution from
/// `1/(1+t)` on `[0, 10]`.
pub fn scalar_self_test(dt: f64) -> Result<f64> {
    let m = |r, c, v: &[f64]| DMatrix::from_row_slice(r, c, v);
    let model = LinearModel::new(
        m(1, 1, &[0.0]),
        m(1, 2, &[0.0, 0.0]),
        m(2, 1, &[1.0, 0.0]),
        m(1, 2, &[1.0, 0.0]),
        DVector::zeros(1),
        m(1, 1, &[1.0]),
    )?;
    let steps = (10.0 / dt).round() as usize;
    let grid: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
    let sol = solve_riccati(&model, &grid)?;
    Ok(grid.iter().zip(&sol.sigma_star).map(|(t, s)| (s[(0, 0)] - 1.0 / (1.0 + t)).abs()).fold(0.0, f64::max))
}

struct OracleCase {
    name: &'static str,
    expectations: Vec<Expectation>,
    mean_deviation: f64,
    z_p_drift: f64,
}

pub fn oracle(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let plant = cfg.plant_spec()?;
    let obs = cfg.observer_spec()?;
    let fock = cfg.fock_config()?;
    let ops = build_operators(&plant, &obs, &fock)?;
    let x0 = *obs.initial_mean();
    let osc = coherent_density(fock.levels(), &x0);

    let commutator = |a: &coherent_observer::fock::SparseOp| {
        let (z, a) = (ops.z_p.dense(), a.dense());
        (&z * &a - &a * &z).iter().map(|c| c.norm()).fold(0.0, f64::max)
    };
    let comm_h = commutator(&ops.hamiltonian);
    let comm_l = commutator(&ops.lindblad);

    let inputs = [("config_state", *plant.rho_p()), ("output_eigenstate_plus", qubit_eigenstate(&plant.alpha(), 1.0))];
    let cases = inputs
        .par_iter()
        .map(|(name, rho_q)| -> Result<OracleCase> {
            let state = JointState::product(rho_q, &osc)?;
            let series = evolve(&state, &ops, &fock)?;
            let ex = expectations(&series, &ops)?;
            let z0 = ex[0].z_p;
            let mut mean_deviation: f64 = 0.0;
            let mut z_p_drift: f64 = 0.0;
            for e in &ex {
                let lin = reduced_mean(&obs, z0, &x0, e.t);
                mean_deviation = mean_deviation.max((e.q - lin[0]).abs()).max((e.p - lin[1]).abs());
                z_p_drift = z_p_drift.max((e.z_p - z0).abs());
            }
            Ok(OracleCase { name, expectations: ex, mean_deviation, z_p_drift })
        })
        .collect::<Result<Vec<_>>>()?;

    let artifact = out.join("oracle.csv");
    let mut csv = CsvWriter::new(&["case", "t", "exp_zp", "exp_q", "exp_p", "leakage"]);
    for (id, c) in cases.iter().enumerate() {
        for e in &c.expectations {
            csv.row(Some(id), &[e.t, e.z_p, e.q, e.p, e.leakage]);
        }
    }
    csv.write(&artifact)?;

    let mut checks = vec![
        Check::at_most("commutator_z_p_hamiltonian", comm_h, COMMUTATOR_TOL),
        Check::at_most("commutator_z_p_lindblad", comm_l, COMMUTATOR_TOL),
    ];
    for c in &cases {
        checks.push(Check::at_most(format!("{}_mean_deviation", c.name), c.mean_deviation, ORACLE_MEAN_TOL));
        checks.push(Check::at_most(format!("{}_z_p_drift", c.name), c.z_p_drift, ORACLE_DRIFT_TOL));
    }
    let details = json!({
        "n_trunc": fock.n_trunc,
        "dt": fock.dt,
        "t_final": fock.t_final,
        "kappa_t_final": obs.kappa() * fock.t_final,
        "initial_observer_mean": vector_json(&Vector2::new(x0[0], x0[1])),
        "cases": cases.iter().enumerate().map(|(id, c)| json!({
            "case": id,
            "name": c.name,
            "z_p_initial": c.expectations[0].z_p,
            "max_mean_deviation": c.mean_deviation,
            "max_z_p_drift": c.z_p_drift,
            "max_leakage": c.expectations.iter().map(|e| e.leakage).fold(0.0, f64::max),
        })).collect::<Vec<_>>(),
    });
    Ok(Outcome { command: "oracle", checks, details, artifacts: vec![artifact] })
}

/// Output directory: flag, then `COBS_OUT_DIR`, then the config.
pub fn resolve_out_dir(flag: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    match std::env::var_os(crate::OUT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => cfg.outputs.directory.clone(),
    }
}
