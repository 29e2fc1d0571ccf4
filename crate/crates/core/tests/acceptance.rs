//! Acceptance criteria 1–8. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Experiment runs are cached under the cargo
//! target directory, so a repeated invocation only re-evaluates.

mod common;

use std::path::PathBuf;
use std::time::Instant;

use sympkan::evaluation::{reproduce_table, rollout, FieldSource, MetricReport, ReproduceOptions, ReproduceOutcome};
use sympkan::models::{Model, ModelKind};
use sympkan::presets::{preset, Overrides};
use sympkan::systems::{build_dataset, SystemSpec};
use sympkan::training::train;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn runs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-runs")
}

fn experiment(name: &str, repeats: usize, overrides: Overrides) -> Result<ReproduceOutcome, String> {
    let p = preset(name).ok_or("missing preset")?;
    let opts = ReproduceOptions {
        repeats,
        seed: 0,
        out: runs_dir(),
        overrides,
        max_rollouts: None,
        verbose: std::env::var_os("SYMPKAN_VERBOSE").is_some(),
    };
    reproduce_table(&p, &opts).map_err(|e| e.to_string())
}

fn row(o: &ReproduceOutcome, kind: ModelKind) -> &MetricReport {
    o.table.iter().find(|r| r.model == kind.name()).expect("every family is reported")
}

fn per_seed(o: &ReproduceOutcome, kind: ModelKind, f: fn(&MetricReport) -> f64) -> Vec<f64> {
    o.per_seed
        .iter()
        .map(|s| f(s.iter().find(|r| r.model == kind.name()).unwrap()))
        .collect()
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn criterion_1() -> Verdict {
    let pu = common::partition_of_unity_error(40);
    let bd = common::basis_derivative_error(40);
    let (lg, case) = common::worst_loss_gradient_error();
    let div = common::worst_symplectic_divergence(100);
    let rt = common::round_trip_mismatches(50);
    verdict(
        pu <= 1e-12 && bd <= 1e-7 && lg <= 1e-5 && div <= 1e-5 && rt == 0,
        format!(
            "partition {pu:.1e} (≤1e-12), basis' {bd:.1e} (≤1e-7), loss grad {lg:.1e} at {case} (≤1e-5), \
             divergence {div:.1e} (≤1e-5), round-trip mismatches {rt}/50"
        ),
    )
}

fn criterion_2() -> Verdict {
    let f = common::true_field_error();
    let d = common::clean_trajectory_drift(10);
    let c = common::spring_closed_form_error();
    let m = common::momentum_drift();
    verdict(
        f <= 1e-8 && d <= 1e-6 && c <= 1e-5 && m <= 1e-8,
        format!("field vs FD {f:.1e} (≤1e-8), relative drift {d:.1e} (≤1e-6), closed form {c:.1e} (≤1e-5), momentum {m:.1e} (≤1e-8)"),
    )
}

fn criterion_3() -> Verdict {
    let o = match experiment("spring", 3, Overrides::default()) {
        Ok(o) => o,
        Err(e) => return verdict(false, e),
    };
    let (b, h, k) = (
        row(&o, ModelKind::Baseline).energy.mean,
        row(&o, ModelKind::Hnn).energy.mean,
        row(&o, ModelKind::Kar).energy.mean,
    );
    verdict(
        b >= 20.0 * h && b >= 20.0 * k,
        format!(
            "mean drift baseline {b:.3e}, hnn {h:.3e}, kar {k:.3e}; ratios {:.1}× and {:.1}× (≥20×); per seed baseline {} hnn {} kar {}",
            b / h,
            b / k,
            fmt(&per_seed(&o, ModelKind::Baseline, |r| r.energy.mean)),
            fmt(&per_seed(&o, ModelKind::Hnn, |r| r.energy.mean)),
            fmt(&per_seed(&o, ModelKind::Kar, |r| r.energy.mean)),
        ),
    )
}

fn criterion_4() -> Verdict {
    let o = match experiment("pendulum", 3, Overrides::default()) {
        Ok(o) => o,
        Err(e) => return verdict(false, e),
    };
    let (b, k) = (row(&o, ModelKind::Baseline), row(&o, ModelKind::Kar));
    verdict(
        k.test.mean <= b.test.mean && k.energy.mean <= b.energy.mean,
        format!(
            "test kar {:.4e} vs baseline {:.4e}; drift kar {:.4e} vs baseline {:.4e}",
            k.test.mean, b.test.mean, k.energy.mean, b.energy.mean
        ),
    )
}

fn criterion_5() -> Verdict {
    let o = match experiment(
        "two_body",
        2,
        Overrides {
            trajectories: Some(200),
            steps_scale: Some(0.2),
            ..Default::default()
        },
    ) {
        Ok(o) => o,
        Err(e) => return verdict(false, e),
    };
    let (b, h, k) = (row(&o, ModelKind::Baseline), row(&o, ModelKind::Hnn), row(&o, ModelKind::Kar));
    verdict(
        100.0 * h.energy.mean < b.energy.mean && k.test.mean < h.test.mean,
        format!(
            "drift hnn {:.3e} vs baseline {:.3e} ({:.0}×, need ≥100×); test kar {:.4e} vs hnn {:.4e}",
            h.energy.mean,
            b.energy.mean,
            b.energy.mean / h.energy.mean,
            k.test.mean,
            h.test.mean
        ),
    )
}

fn criterion_6() -> Verdict {
    let o = match experiment(
        "three_body",
        2,
        Overrides {
            trajectories: Some(500),
            ..Default::default()
        },
    ) {
        Ok(o) => o,
        Err(e) => return verdict(false, e),
    };
    let (b, h, k) = (row(&o, ModelKind::Baseline), row(&o, ModelKind::Hnn), row(&o, ModelKind::Kar));
    verdict(
        k.test.mean < b.test.mean
            && k.test.mean < h.test.mean
            && h.energy.mean < 0.01 * b.energy.mean
            && k.energy.mean < 0.01 * b.energy.mean,
        format!(
            "test kar {:.4e}, baseline {:.4e}, hnn {:.4e}; drift hnn {:.3e}, kar {:.3e}, baseline {:.3e}",
            k.test.mean, b.test.mean, h.test.mean, h.energy.mean, k.energy.mean, b.energy.mean
        ),
    )
}

fn criterion_7() -> Verdict {
    let quad: Vec<Option<usize>> = (0..5).map(|s| common::lbfgs_quadratic_iterations(100 + s)).collect();
    let rosen = common::lbfgs_rosenbrock_iterations();
    let adam = common::adam_square_steps();
    let quad_ok = quad.iter().all(|q| q.is_some_and(|n| n <= 30));
    verdict(
        quad_ok && rosen.is_some_and(|n| n <= 200) && adam.is_some_and(|n| n <= 500),
        format!("quadratic iterations {quad:?} (≤30), Rosenbrock {rosen:?} (≤200), Adam {adam:?} (≤500)"),
    )
}

/// Worst `|H_θ(z(t)) − H_θ(z₀)| / max(1, |H_θ(z₀)|)` along learned rollouts.
/// The bound applies to the MLP-HNN; the KAR value is reported alongside.
fn criterion_8() -> Verdict {
    let mut worst = [(0.0f64, ""); 2];
    for name in ["spring", "pendulum", "two_body"] {
        let p = preset(name).unwrap().with_overrides(&Overrides {
            trajectories: Some(10),
            steps: Some(40),
            ..Default::default()
        });
        let ds = match build_dataset(&p.dataset, name, 0) {
            Ok(d) => d,
            Err(e) => return verdict(false, e.to_string()),
        };
        let spec: &SystemSpec = ds.system();
        for (slot, kind) in [ModelKind::Hnn, ModelKind::Kar].into_iter().enumerate() {
            let model: Model = match train(&p.train_config_seeded(kind, 0), &ds) {
                Ok((m, _)) => m,
                Err(e) => return verdict(false, e.to_string()),
            };
            for t in ds.test.iter().take(3) {
                let r = match rollout(FieldSource::Learned(&model), spec, &t.z[0], p.horizon, 200) {
                    Ok(r) => r,
                    Err(e) => return verdict(false, e.to_string()),
                };
                let h0 = model.energy(&r.states[0]).unwrap();
                for z in &r.states {
                    let dev = (model.energy(z).unwrap() - h0).abs() / h0.abs().max(1.0);
                    if dev > worst[slot].0 {
                        worst[slot] = (dev, name);
                    }
                }
            }
        }
    }
    let [(hnn, hnn_at), (kar, kar_at)] = worst;
    verdict(
        hnn <= 1e-6,
        format!(
            "worst learned-energy variation hnn {hnn:.2e} on {hnn_at} (≤1e-6·max(1,|H₀|)); kar {kar:.2e} on {kar_at}"
        ),
    )
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 8] = [
        ("property suite", criterion_1),
        ("ground-truth physics", criterion_2),
        ("spring-mass drift ordering", criterion_3),
        ("pendulum ordering", criterion_4),
        ("two-body reduced ordering", criterion_5),
        ("three-body reduced ordering", criterion_6),
        ("optimizers", criterion_7),
        ("learned-energy conservation along rollouts", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = f();
        failed += usize::from(!v.pass);
        println!(
            "criterion {} {}: {} ({:.0} s): {}",
            i + 1,
            if v.pass { "PASS" } else { "FAIL" },
            name,
            start.elapsed().as_secs_f64(),
            v.detail
        );
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
