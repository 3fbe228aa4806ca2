//! Scenario execution and artifact output.

use std::fs;
use std::path::{Path, PathBuf};

use edlab_core::contextuality::{
    context_products, context_selection_pipeline, format_table, hybrid_check, parity_certificate,
    valuation_search,
};
use edlab_core::evolution::{
    evolve_compare, write_comparison_csv, write_snapshot_csv, HamiltonStepper,
};
use edlab_core::inference::{
    apply_device, born_probabilities, infer_observable, weak_value, Likelihood, PointerDevice,
};
use edlab_core::kernel::{coordinate_histogram, evolve_ensemble, rng_stream, verify_constraints};
use edlab_core::Error;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::Serialize;
use serde_json::json;

use crate::config::{
    ContextPlan, Detections, FieldPlan, HybridPlan, MeasurePlan, Plan, SamplePlan, Scenario,
    WeakPlan,
};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{context}: {source}")]
    Core {
        context: &'static str,
        source: Error,
    },
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

trait Context<T> {
    fn during(self, context: &'static str) -> Result<T, RunError>;
}

impl<T> Context<T> for edlab_core::Result<T> {
    fn during(self, context: &'static str) -> Result<T, RunError> {
        self.map_err(|source| RunError::Core { context, source })
    }
}

pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

pub struct Outcome {
    pub headline: String,
    pub artifacts: Vec<Artifact>,
}

fn json_artifact(name: &str, value: &impl Serialize) -> Artifact {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report serializes");
    bytes.push(b'\n');
    Artifact {
        name: name.to_string(),
        bytes,
    }
}

fn sig17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Runs the scenario and returns its headline and artifacts without touching
/// the file system.
pub fn execute(scenario: &Scenario) -> Result<Outcome, RunError> {
    let seed = scenario.seed;
    let mut outcome = match &scenario.plan {
        Plan::Sample(p) => sample(p, seed)?,
        Plan::Evolve(p) => evolve(p)?,
        Plan::Compare(p) => compare(p)?,
        Plan::Measure(p) => measure(p, seed)?,
        Plan::Weak(p) => weak(p)?,
        Plan::Ks(t) => ks(t)?,
        Plan::Hybrid(p) => hybrid(p)?,
        Plan::Context(p) => context(p)?,
    };
    let summary = json!({
        "schema": 1,
        "kind": scenario.kind.name(),
        "seed": seed,
        "headline": outcome.headline,
    });
    outcome
        .artifacts
        .push(json_artifact("summary.json", &summary));
    Ok(outcome)
}

/// Writes every artifact into `dir`, creating it if needed.
pub fn write_artifacts(dir: &Path, artifacts: &[Artifact]) -> Result<(), RunError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| RunError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    for a in artifacts {
        let path = dir.join(&a.name);
        fs::write(&path, &a.bytes).map_err(io(&path))?;
    }
    Ok(())
}

fn sample(p: &SamplePlan, seed: u64) -> Result<Outcome, RunError> {
    let report =
        verify_constraints(&p.params, &p.start, p.n_samples, seed).during("moment check")?;
    let worst = report
        .mean_displacement
        .iter()
        .zip(&report.expected_mean)
        .zip(&report.standard_errors)
        .map(|((m, e), se)| if *se > 0.0 { (m - e).abs() / se } else { 0.0 })
        .fold(0.0, f64::max);
    let mut artifacts = vec![json_artifact("moments.json", &report)];
    if let Some(e) = &p.ensemble {
        let members = vec![p.start.clone(); e.size];
        let evolved = evolve_ensemble(&p.params, &members, e.steps, seed.wrapping_add(1))
            .during("ensemble")?;
        let [lo, hi] = e.range;
        let density = coordinate_histogram(&evolved, e.axis, lo, hi, e.bins).during("histogram")?;
        let width = (hi - lo) / e.bins as f64;
        let mut csv = String::from("# schema: 1\nx,density\n");
        for (b, d) in density.iter().enumerate() {
            csv.push_str(&format!(
                "{},{}\n",
                sig17(lo + (b as f64 + 0.5) * width),
                sig17(*d)
            ));
        }
        artifacts.push(Artifact {
            name: "histogram.csv".into(),
            bytes: csv.into_bytes(),
        });
    }
    Ok(Outcome {
        headline: format!(
            "moment check {}: worst mean offset {worst:.2} standard errors over {} samples",
            if report.pass { "passed" } else { "failed" },
            report.n_samples
        ),
        artifacts,
    })
}

fn evolve(p: &FieldPlan) -> Result<Outcome, RunError> {
    let steps = if p.t_final == 0.0 {
        0
    } else {
        (p.t_final / p.dt).ceil() as usize
    };
    let dt = if steps == 0 {
        p.dt
    } else {
        p.t_final / steps as f64
    };
    let stepper = HamiltonStepper::new(&p.grid, &p.spec, dt).during("stepper")?;
    let marks: Vec<usize> = (0..=p.outputs)
        .map(|j| (j * steps + p.outputs / 2) / p.outputs)
        .collect();
    let (mut rho, mut phi) = (p.rho0.clone(), p.phi0.clone());
    let e0 = stepper.energy(&rho, &phi).during("initial energy")?;
    let mut energy_csv = String::from(
        "# schema: 1\nt,hamiltonian,mass_before_renormalization,renormalization,mean,width\n",
    );
    let mut artifacts = Vec::new();
    let (mut max_drift, mut max_norm, mut floored): (f64, f64, usize) = (0.0, 0.0, 0);
    let mut last_mass = 1.0;
    let mut last_renorm = 0.0;
    let mut next = 0;
    for k in 0..=steps {
        if k > 0 {
            let (r, f, report) = stepper.step(&rho, &phi).during("hamilton step")?;
            rho = r;
            phi = f;
            last_mass = report.mass_before_renormalization;
            last_renorm = report.renormalization;
            max_norm = max_norm.max((last_mass - 1.0).abs());
            floored += report.floored_nodes;
        }
        while next < marks.len() && marks[next] == k {
            let h = stepper.energy(&rho, &phi).during("energy")?;
            max_drift = max_drift.max(if e0 != 0.0 {
                ((h - e0) / e0).abs()
            } else {
                (h - e0).abs()
            });
            let t = k as f64 * dt;
            energy_csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                sig17(t),
                sig17(h),
                sig17(last_mass),
                sig17(last_renorm),
                sig17(rho.mean()),
                sig17(rho.width())
            ));
            let mut snapshot = Vec::new();
            write_snapshot_csv(&mut snapshot, &rho, &phi, &p.spec).during("snapshot")?;
            artifacts.push(Artifact {
                name: format!("snapshot_{next:03}.csv"),
                bytes: snapshot,
            });
            next += 1;
        }
    }
    artifacts.push(Artifact {
        name: "energy.csv".into(),
        bytes: energy_csv.into_bytes(),
    });
    let summary = json!({
        "steps": steps,
        "dt": dt,
        "t_final": p.t_final,
        "initial_hamiltonian": e0,
        "max_hamiltonian_drift": max_drift,
        "max_norm_drift": max_norm,
        "floored_nodes": floored,
        "final_mean": rho.mean(),
        "final_width": rho.width(),
    });
    artifacts.push(json_artifact("evolve.json", &summary));
    Ok(Outcome {
        headline: format!("relative Hamiltonian drift {max_drift:.3e} over {steps} steps"),
        artifacts,
    })
}

fn compare(p: &FieldPlan) -> Result<Outcome, RunError> {
    let report = evolve_compare(&p.rho0, &p.phi0, &p.spec, p.t_final, p.dt, p.outputs)
        .during("comparison")?;
    let mut csv = Vec::new();
    write_comparison_csv(&mut csv, &report).during("comparison csv")?;
    Ok(Outcome {
        headline: format!(
            "final relative L2 distance {:.3e} (max {:.3e}) over {} steps",
            report.final_relative_l2, report.max_relative_l2, report.steps
        ),
        artifacts: vec![
            Artifact {
                name: "comparison.csv".into(),
                bytes: csv,
            },
            json_artifact("compare.json", &report),
        ],
    })
}

fn measure(p: &MeasurePlan, seed: u64) -> Result<Outcome, RunError> {
    let device = PointerDevice::from_operator(&p.operator).during("pointer device")?;
    let like = if p.detector_sigma == 0.0 {
        Likelihood::identity(device.cells())
    } else {
        let edges = p.edges.clone().unwrap_or_else(|| {
            let mut sorted = p.positions.clone();
            sorted.sort_by(f64::total_cmp);
            sorted.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
        });
        Likelihood::gaussian_binned(&p.positions, p.detector_sigma, &edges)
    }
    .during("likelihood")?;
    let prior = apply_device(&p.state, &device).during("pointer distribution")?;
    let outcome_probs: Vec<f64> = (0..like.outcomes().len())
        .map(|d| {
            prior
                .probabilities()
                .iter()
                .enumerate()
                .map(|(x, &px)| like.q(d, x) * px)
                .sum()
        })
        .collect();
    let detections = match &p.detections {
        Detections::Explicit(list) => list.clone(),
        Detections::Sampled(n) => {
            let dist = WeightedIndex::new(&outcome_probs).map_err(|e| RunError::Core {
                context: "detection sampling",
                source: Error::InvalidParameter {
                    name: "outcome probabilities",
                    reason: e.to_string(),
                },
            })?;
            let mut rng = rng_stream(seed, 0);
            (0..*n).map(|_| dist.sample(&mut rng)).collect()
        }
    };
    let report = infer_observable(
        &p.state,
        &device,
        p.operator.eigenvalues(),
        &like,
        &detections,
    )
    .during("inference")?;
    let born = born_probabilities(&p.state, &p.operator).during("Born rule")?;
    let expectation = p.state.expectation(&p.operator).during("expectation")?;
    let body = json!({
        "schema": 1,
        "cells": device.cells(),
        "positions": p.positions,
        "eigenvalues": p.operator.eigenvalues(),
        "born": born,
        "expectation": expectation,
        "outcomes": like.outcomes(),
        "outcome_probabilities": outcome_probs,
        "detections": detections,
        "inference": report,
    });
    Ok(Outcome {
        headline: format!(
            "pooled estimate {:.6} from {} detections (expectation {expectation:.6})",
            report.estimate,
            detections.len()
        ),
        artifacts: vec![json_artifact("measure.json", &body)],
    })
}

fn weak(p: &WeakPlan) -> Result<Outcome, RunError> {
    let w = weak_value(&p.pre, &p.post, &p.operator).during("weak value")?;
    let overlap = p.post.inner(&p.pre).during("overlap")?.norm();
    let spectrum = p.operator.eigenvalues();
    let (lo, hi) = (spectrum[0], spectrum[spectrum.len() - 1]);
    let outside = w.re < lo || w.re > hi || w.im.abs() > 1e-12;
    let body = json!({
        "schema": 1,
        "re": w.re,
        "im": w.im,
        "abs": w.norm(),
        "overlap": overlap,
        "spectrum_min": lo,
        "spectrum_max": hi,
        "outside_spectrum": outside,
    });
    Ok(Outcome {
        headline: format!(
            "weak value {:.6}{:+.6}i, |A_w| = {:.6}, outside spectrum [{lo}, {hi}]: {outside}",
            w.re,
            w.im,
            w.norm()
        ),
        artifacts: vec![json_artifact("weak.json", &body)],
    })
}

fn ks(table: &edlab_core::contextuality::ObservableTable) -> Result<Outcome, RunError> {
    let search = valuation_search(table).during("valuation search")?;
    let products = context_products(table).during("context products")?;
    let certificate = match parity_certificate(table) {
        Ok(c) => Some(c),
        Err(Error::NotParityProof { .. }) => None,
        Err(e) => return Err(e).during("parity certificate"),
    };
    let body = json!({
        "schema": 1,
        "table": format_table(table),
        "assignments": search.assignments,
        "satisfying": search.n_satisfying(),
        "valuations": search.satisfying,
        "relaxations": search.relaxations,
        "contexts": products.products,
        "negative_contexts": products.negative_contexts,
        "grand_product": products.grand_product,
        "grand_sign": products.grand_sign,
        "certificate": certificate,
    });
    Ok(Outcome {
        headline: format!(
            "satisfying valuations: {} of {}; grand sign {}",
            search.n_satisfying(),
            search.assignments,
            products.grand_sign
        ),
        artifacts: vec![json_artifact("ks.json", &body)],
    })
}

fn hybrid(p: &HybridPlan) -> Result<Outcome, RunError> {
    let reports =
        p.x0.iter()
            .map(|&x| hybrid_check::<f64>(&p.table, x))
            .collect::<edlab_core::Result<Vec<_>>>()
            .during("position valuation")?;
    let broken = reports.iter().filter(|r| r.relation_fails).count();
    let squares_ok = reports.iter().all(|r| r.squares_nonnegative);
    let body = json!({ "schema": 1, "reports": reports });
    Ok(Outcome {
        headline: format!(
            "context relation fails for {broken} of {} basis states; squared valuations nonnegative: {squares_ok}",
            reports.len()
        ),
        artifacts: vec![json_artifact("hybrid.json", &body)],
    })
}

fn context(p: &ContextPlan) -> Result<Outcome, RunError> {
    let reports = p
        .contexts
        .iter()
        .map(|&c| context_selection_pipeline(&p.state, &p.table, c))
        .collect::<edlab_core::Result<Vec<_>>>()
        .during("context pipeline")?;
    let certain = reports
        .iter()
        .filter(|r| {
            r.distribution
                .probabilities()
                .iter()
                .any(|&q| q > 1.0 - 1e-12)
        })
        .count();
    let body = json!({ "schema": 1, "state": p.state, "reports": reports });
    Ok(Outcome {
        headline: format!(
            "pointer distributions for {} contexts ({certain} with a certain outcome)",
            reports.len()
        ),
        artifacts: vec![json_artifact("context.json", &body)],
    })
}
