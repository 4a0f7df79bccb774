//! The three verification pipelines: law mimicking, cost comparison and
//! truncation convergence.

mod report;

use std::collections::BTreeMap;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use report::{
    CheckpointResult, CostEntry, Criterion, ExperimentReport, MarginalSet, Relation,
    SurvivalSeries, TruncationPoint,
};

use crate::config::{ControlConfig, ExperimentConfig};
use crate::costing::{
    compare_costs, compute_cost, conditional_marginal, survival_curve, survival_gap, wasserstein1,
    ConditionalMarginal, CostReport, CostSpec, SurvivalPoint,
};
use crate::dynamics::streams::derive_seed;
use crate::dynamics::{
    mean_sup_squared_distance, resimulate_with_common_noise, simulate_ensemble, truncate_control,
    ControlSpec, ParticleEnsemble, SimulationParams,
};
use crate::error::{Error, Result};
use crate::projection::{as_markovian_control, estimate_projection};

const LIMITS_NOTE: &str = "finite experiments check law matching and the one-sided improvement \
J(projected) <= J(open-loop); they do not verify equality of the infima";

/// Seeds of the independent ensembles of a mimicking run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedPlan {
    pub open_loop: u64,
    pub projected: u64,
    pub calibration: u64,
    pub splits: u64,
}

impl SeedPlan {
    pub fn from_base(seed: u64) -> Self {
        SeedPlan {
            open_loop: seed,
            projected: derive_seed(seed, 1),
            calibration: derive_seed(seed, 2),
            splits: derive_seed(seed, 3),
        }
    }

    /// Exchanges the open-loop and projected seeds.
    pub fn swapped(self) -> Self {
        SeedPlan {
            open_loop: self.projected,
            projected: self.open_loop,
            ..self
        }
    }

    fn record(&self) -> BTreeMap<String, u64> {
        BTreeMap::from([
            ("open_loop".to_string(), self.open_loop),
            ("projected".to_string(), self.projected),
            ("calibration".to_string(), self.calibration),
            ("calibration_splits".to_string(), self.splits),
        ])
    }
}

struct EnsembleDigest {
    survival: Vec<SurvivalPoint>,
    marginals: Vec<Option<ConditionalMarginal>>,
}

fn digest(ensemble: &ParticleEnsemble, checkpoints: &[f64]) -> Result<EnsembleDigest> {
    let marginals = checkpoints
        .iter()
        .map(|&t| match conditional_marginal(ensemble, t) {
            Ok(m) => Ok(Some(m)),
            Err(Error::AllDead { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    Ok(EnsembleDigest {
        survival: survival_curve(ensemble),
        marginals,
    })
}

fn params_with_seed(config: &ExperimentConfig, seed: u64) -> SimulationParams {
    let mut p = config.simulation_params();
    p.seed = seed;
    p
}

/// Mimicking experiment with seeds derived from `config.seed`.
pub fn run_mimicking(config: &ExperimentConfig) -> Result<ExperimentReport> {
    run_mimicking_with_seeds(config, SeedPlan::from_base(config.seed))
}

/// Simulates the open-loop ensemble, projects its drift, simulates the
/// projected Markovian dynamics with an independent seed, and compares
/// conditional marginals, survival curves and costs. A second open-loop
/// ensemble calibrates the W1 threshold.
pub fn run_mimicking_with_seeds(
    config: &ExperimentConfig,
    seeds: SeedPlan,
) -> Result<ExperimentReport> {
    let control = config.control.build();
    if !control.bound().is_finite() {
        return Err(Error::UnboundedControl(control.bound()));
    }
    let cost = config.cost.build();
    let mut report = new_report("mimicking", config);
    report.seeds = seeds.record();
    report.control = config.control.label();

    info!("mimicking: open-loop ensemble");
    let ens_a = simulate_ensemble(&control, &params_with_seed(config, seeds.open_loop))?;
    let field = estimate_projection(&ens_a, &config.bins)?;
    let cost_a = compute_cost(&ens_a, &cost)?;
    let a = digest(&ens_a, &config.checkpoints)?;
    drop(ens_a);

    info!("mimicking: projected ensemble");
    let projected = as_markovian_control(field);
    let ens_b = simulate_ensemble(&projected, &params_with_seed(config, seeds.projected))?;
    let cost_b = compute_cost(&ens_b, &cost)?;
    let b = digest(&ens_b, &config.checkpoints)?;
    drop(ens_b);

    info!("mimicking: same-law calibration ensemble");
    let ens_c = simulate_ensemble(&control, &params_with_seed(config, seeds.calibration))?;
    let c = digest(&ens_c, &config.checkpoints)?;
    drop(ens_c);

    let tol = &config.tolerances;
    let sup_gap = survival_gap(&a.survival, &b.survival);
    report.survival_sup_gap = Some(sup_gap);
    report.survival_self_gap = Some(survival_gap(&a.survival, &c.survival));
    report.criteria.push(Criterion::at_most(
        "survival_sup_gap",
        sup_gap,
        tol.survival_tol,
    ));

    for (j, &t) in config.checkpoints.iter().enumerate() {
        let k = config.grid().nearest_index(t)?;
        let s_gap = (a.survival[k].survival - b.survival[k].survival).abs();
        let (ma, mb, mc) = (&a.marginals[j], &b.marginals[j], &c.marginals[j]);
        let (Some(ma), Some(mb), Some(mc)) = (ma, mb, mc) else {
            report.notes.push(format!(
                "t={t}: no surviving particles in at least one ensemble; J is infinite in this regime"
            ));
            report.checkpoints.push(CheckpointResult {
                t,
                n_alive_open_loop: ma.as_ref().map_or(0, |m| m.n_alive()),
                n_alive_projected: mb.as_ref().map_or(0, |m| m.n_alive()),
                w1: f64::NAN,
                self_w1: f64::NAN,
                calibration_q95: f64::NAN,
                w1_threshold: f64::NAN,
                survival_gap: s_gap,
            });
            report
                .criteria
                .push(Criterion::at_most(format!("w1_t{t}"), f64::NAN, f64::NAN));
            continue;
        };
        let w1 = wasserstein1(ma, mb)?;
        let self_w1 = wasserstein1(ma, mc)?;
        let q95 = same_law_w1_quantile(
            ma,
            mc,
            mb.n_alive(),
            tol.calibration_splits,
            derive_seed(seeds.splits, j as u64),
            0.95,
        )?;
        let threshold = tol.w1_tol.unwrap_or(tol.w1_factor * q95);
        report
            .criteria
            .push(Criterion::at_most(format!("w1_t{t}"), w1, threshold));
        if tol.w1_tol.is_some() {
            report.criteria.push(Criterion::at_least(
                format!("calibration_honesty_t{t}"),
                threshold,
                q95,
            ));
        }
        report.checkpoints.push(CheckpointResult {
            t,
            n_alive_open_loop: ma.n_alive(),
            n_alive_projected: mb.n_alive(),
            w1,
            self_w1,
            calibration_q95: q95,
            w1_threshold: threshold,
            survival_gap: s_gap,
        });
    }

    report
        .costs
        .push(cost_entry(&config.control, cost_a, cost_b, tol.cost_sigma));
    report.survival = vec![
        SurvivalSeries {
            label: "open_loop".into(),
            points: a.survival,
        },
        SurvivalSeries {
            label: "projected".into(),
            points: b.survival,
        },
        SurvivalSeries {
            label: "calibration".into(),
            points: c.survival,
        },
    ];
    report.marginals = config
        .checkpoints
        .iter()
        .zip(a.marginals.into_iter().zip(b.marginals))
        .map(|(&t, (ma, mb))| MarginalSet {
            t,
            series: [("open_loop", ma), ("projected", mb)]
                .into_iter()
                .filter_map(|(label, m)| m.map(|m| (label.to_string(), m)))
                .collect(),
        })
        .collect();
    report.notes.push(LIMITS_NOTE.into());
    Ok(report)
}

/// Quantile of W1 between disjoint random subsets of the pooled samples of
/// two same-law ensembles: the first of the size of `a`, the second of
/// size `other_size` (capped by what is left).
pub fn same_law_w1_quantile(
    a: &ConditionalMarginal,
    c: &ConditionalMarginal,
    other_size: usize,
    splits: usize,
    seed: u64,
    q: f64,
) -> Result<f64> {
    if a.dimension() != c.dimension() {
        return Err(Error::DimensionMismatch {
            expected: a.dimension(),
            got: c.dimension(),
        });
    }
    if a.is_empty() || c.is_empty() || splits == 0 {
        return Err(Error::EmptySamples);
    }
    let d = a.dimension();
    let pooled: Vec<&[f64]> = a.points().chain(c.points()).collect();
    let n1 = a.n_alive();
    let n2 = other_size.min(pooled.len() - n1).max(1);
    let mut values: Vec<f64> = (0..splits)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let mut idx: Vec<usize> = (0..pooled.len()).collect();
            idx.shuffle(&mut rng);
            let gather = |ids: &[usize]| {
                let mut s = Vec::with_capacity(ids.len() * d);
                for &i in ids {
                    s.extend_from_slice(pooled[i]);
                }
                ConditionalMarginal::from_samples(a.t, d, s)
            };
            let x = gather(&idx[..n1]);
            let y = gather(&idx[n1..n1 + n2]);
            wasserstein1(&x, &y)
        })
        .collect::<Result<_>>()?;
    values.sort_by(f64::total_cmp);
    let rank = ((q * splits as f64).ceil() as usize).clamp(1, splits);
    Ok(values[rank - 1])
}

fn cost_entry(
    control: &ControlConfig,
    open_loop: CostReport,
    projected: CostReport,
    sigma: f64,
) -> CostEntry {
    let comparison = compare_costs(&open_loop, &projected);
    CostEntry {
        control: control.label(),
        strict_gap_detected: comparison.z_score >= sigma,
        open_loop,
        projected,
        comparison,
    }
}

fn new_report(kind: &str, config: &ExperimentConfig) -> ExperimentReport {
    ExperimentReport {
        experiment: kind.into(),
        config_hash: config.hash(),
        ..Default::default()
    }
}

/// For the configured control and every extra control: simulate, project,
/// resimulate under the projection and check `J(ᾱ) <= J(α)` up to
/// `cost_sigma` pooled standard errors.
pub fn run_value_comparison(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let cost = config.cost.build();
    let dim = config.domain.dimension();
    let mut report = new_report("value", config);
    let convex = cost.is_convex_in_control(dim, 256, derive_seed(config.seed, 7));
    report.criteria.push(Criterion::at_least(
        "running_cost_convex_in_control",
        f64::from(u8::from(convex)),
        1.0,
    ));
    let controls: Vec<&ControlConfig> = std::iter::once(&config.control)
        .chain(&config.extra_controls)
        .collect();
    report.control = controls
        .iter()
        .map(|c| c.label())
        .collect::<Vec<_>>()
        .join(", ");
    for (j, control_cfg) in controls.into_iter().enumerate() {
        let label = control_cfg.label();
        let seed_a = derive_seed(config.seed, 16 + 2 * j as u64);
        let seed_b = derive_seed(config.seed, 17 + 2 * j as u64);
        report.seeds.insert(format!("{j}.open_loop"), seed_a);
        report.seeds.insert(format!("{j}.projected"), seed_b);
        let (cost_a, cost_b) =
            open_loop_and_projected_costs(config, &control_cfg.build(), &cost, seed_a, seed_b)?;
        let entry = cost_entry(control_cfg, cost_a, cost_b, config.tolerances.cost_sigma);
        if entry.comparison.difference.is_nan() {
            report.notes.push(format!(
                "{label}: infinite cost, no surviving particles at some time"
            ));
        }
        report.criteria.push(Criterion::at_most(
            format!("jensen_direction[{label}]"),
            -entry.comparison.difference,
            config.tolerances.cost_sigma * entry.comparison.pooled_stderr,
        ));
        report.costs.push(entry);
    }
    report.notes.push(LIMITS_NOTE.into());
    Ok(report)
}

fn open_loop_and_projected_costs(
    config: &ExperimentConfig,
    control: &ControlSpec,
    cost: &CostSpec,
    seed_a: u64,
    seed_b: u64,
) -> Result<(CostReport, CostReport)> {
    let ens_a = simulate_ensemble(control, &params_with_seed(config, seed_a))?;
    let cost_a = compute_cost(&ens_a, cost)?;
    let field = estimate_projection(&ens_a, &config.bins)?;
    drop(ens_a);
    let ens_b = simulate_ensemble(
        &as_markovian_control(field),
        &params_with_seed(config, seed_b),
    )?;
    let cost_b = compute_cost(&ens_b, cost)?;
    Ok((cost_a, cost_b))
}

/// Coupled truncation curve `n ↦ |J(α^n) - J(α_ref)|` under common noise.
///
/// `α_ref = α` when the control is bounded, otherwise the truncation at the
/// largest `n`.
pub fn run_truncation(config: &ExperimentConfig, n_values: &[f64]) -> Result<ExperimentReport> {
    if n_values.is_empty() {
        return Err(Error::InvalidArgument {
            name: "n_values",
            reason: "at least one truncation level is needed".into(),
        });
    }
    let mut levels = n_values.to_vec();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let n_max = *levels.last().expect("nonempty");

    let control = config.control.build();
    let cost = config.cost.build();
    let bound = control.bound();
    let mut report = new_report("truncation", config);
    report.control = config.control.label();
    report.seeds.insert("common_noise".into(), config.seed);

    let reference = if bound.is_finite() {
        control.clone()
    } else {
        report.notes.push(format!(
            "unbounded control: the truncation at n={n_max} serves as reference"
        ));
        truncate_control(&control, n_max)?
    };
    let ens_ref = simulate_ensemble(&reference, &config.simulation_params())?;
    let cost_ref = compute_cost(&ens_ref, &cost)?;

    for &n in &levels {
        info!("truncation: n = {n}");
        let ens_n = resimulate_with_common_noise(&ens_ref, &truncate_control(&control, n)?)?;
        let cost_n = compute_cost(&ens_n, &cost)?;
        let distance = mean_sup_squared_distance(&ens_n, &ens_ref);
        drop(ens_n);
        let gap = if cost_n.infinite || cost_ref.infinite {
            f64::INFINITY
        } else {
            (cost_n.total - cost_ref.total).abs()
        };
        report.truncation.push(TruncationPoint {
            n,
            gap,
            gap_stderr: cost_n.stderr_total.hypot(cost_ref.stderr_total),
            mean_sup_sq_distance: distance,
            cost: cost_n,
        });
    }

    let sigma = config.tolerances.truncation_sigma;
    for w in report.truncation.windows(2) {
        let (p, q) = (&w[0], &w[1]);
        report.criteria.push(Criterion::at_most(
            format!("gap_nonincreasing_n{}_to_n{}", p.n, q.n),
            q.gap - p.gap,
            sigma * p.cost.stderr_total.hypot(q.cost.stderr_total),
        ));
    }
    for p in &report.truncation {
        if p.n >= bound || p.n == n_max {
            report.criteria.push(Criterion::at_most(
                format!("gap_exactly_zero_n{}", p.n),
                p.gap,
                0.0,
            ));
        }
    }
    if cost_ref.infinite {
        report
            .notes
            .push("reference cost is infinite: no surviving particles at some time".into());
    }
    report.truncation_reference = Some(cost_ref);
    Ok(report)
}
