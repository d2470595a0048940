//! The full synthetic suite: every bundle generated, trained, evaluated and
//! compared against the target bands.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;
use groupcast::evaluation::{generalization_eval, generalization_table, MetricReport};
use groupcast::exec::Execution;
use groupcast::model::Model;
use groupcast::synthdata::{load_dataset, ContextMode, Dynamics, SpeakingConfig};

use crate::config::{DatasetSpec, EvalSpec, ExperimentConfig, TrainSpec};
use crate::run::{self, RunDir};

pub const GLANCE_STEPS: u64 = 3000;
pub const SPEAKING_STEPS: u64 = 3000;
pub const SPEAKING_GROUPS: usize = 200;

pub struct Bundle {
    pub config: ExperimentConfig,
}

fn train_spec(variant: &str, steps: u64) -> TrainSpec {
    TrainSpec {
        variant: variant.into(),
        steps,
        meta_batch: 4,
        lr: 1e-3,
        kl_anneal: false,
        clip_norm: None,
        log_every: 50,
        execution: Execution::default(),
    }
}

/// Run configurations of the suite. `scale` divides step and group budgets
/// for smoke runs.
pub fn bundles(seed: u64, scale: u64) -> Vec<Bundle> {
    let scale = scale.max(1);
    let glance = |name: &str, mode: ContextMode, variant: &str| Bundle {
        config: ExperimentConfig {
            name: name.into(),
            seed,
            out: None,
            dataset: DatasetSpec::Glancing { mode },
            train: train_spec(variant, GLANCE_STEPS / scale),
            eval: EvalSpec::default(),
        },
    };
    let speak = |dynamics: Dynamics| Bundle {
        config: ExperimentConfig {
            name: format!("speaking-{dynamics}"),
            seed,
            out: None,
            dataset: DatasetSpec::Speaking {
                dynamics,
                groups: (SPEAKING_GROUPS / scale as usize).max(4),
                eval_dynamics: Dynamics::Dominating,
                eval_groups: (40 / scale as usize).max(4),
                windows: SpeakingConfig::default(),
            },
            train: train_spec("SP-GRU-latent", SPEAKING_STEPS / scale),
            eval: EvalSpec::default(),
        },
    };
    vec![
        glance("glance-mixed-np", ContextMode::Mixed, "NP-latent"),
        glance("glance-mixed-sp-mlp", ContextMode::Mixed, "SP-MLP-latent"),
        glance("glance-mixed-sp-gru", ContextMode::Mixed, "SP-GRU-latent"),
        glance("glance-separated-sp-gru", ContextMode::Separated, "SP-GRU-latent"),
        speak(Dynamics::Dual),
        speak(Dynamics::DualRandom),
        speak(Dynamics::FullRandom),
    ]
}

struct Check {
    name: String,
    measured: String,
    pass: bool,
}

fn all(reports: &[(String, MetricReport)], name: &str) -> MetricReport {
    reports.iter().find(|(n, _)| n == name).map(|(_, r)| r.clone()).expect("report present")
}

pub fn reproduce(out: &Path, seed: u64, force: bool, scale: u64) -> Result<bool> {
    let mut results = Vec::new();
    for b in bundles(seed, scale) {
        let mut cfg = b.config;
        let dir = RunDir::new(out.join(&cfg.name));
        cfg.out = Some(dir.root.clone());
        println!("== {}", cfg.name);
        run::generate(&cfg, &dir, force)?;
        run::train(&cfg, &dir, false, true)?;
        let reports = run::evaluate_run(&cfg, &dir)?;
        let diag = run::diagnose(&cfg, &dir)?;
        run::plot(&cfg, &dir)?;
        results.push((cfg, dir, reports, diag));
    }

    let find = |name: &str| results.iter().find(|r| r.0.name == name).expect("bundle ran");
    let mixed: Vec<(&str, MetricReport)> = [("NP", "glance-mixed-np"), ("SP-MLP", "glance-mixed-sp-mlp"), ("SP-GRU", "glance-mixed-sp-gru")]
        .iter()
        .map(|(label, name)| (*label, all(&find(name).2, "all")))
        .collect();
    let (np, mlp, gru) = (mixed[0].1.ll_mean, mixed[1].1.ll_mean, mixed[2].1.ll_mean);
    let sep = &find("glance-separated-sp-gru").2;
    let (t1, t3) = (all(sep, "type_i"), all(sep, "type_iii"));

    let mut checks = vec![
        Check {
            name: "1a mixed LL ordering SP-GRU > SP-MLP >= NP - 0.05".into(),
            measured: format!("{gru:.3} / {mlp:.3} / {np:.3}"),
            pass: gru > mlp && mlp >= np - 0.05,
        },
        Check { name: "1b SP-GRU mixed LL in [0.40, 0.70]".into(), measured: format!("{gru:.3}"), pass: (0.40..=0.70).contains(&gru) },
    ];
    let mae = |r: &MetricReport| r.mae_deg_mean.unwrap_or(f64::INFINITY);
    checks.push(Check {
        name: "1c separated MAE < 3 deg and LL > 1.2 (Type I, Type III)".into(),
        measured: format!("{:.2}/{:.3}, {:.2}/{:.3}", mae(&t1), t1.ll_mean, mae(&t3), t3.ll_mean),
        pass: mae(&t1) < 3.0 && mae(&t3) < 3.0 && t1.ll_mean > 1.2 && t3.ll_mean > 1.2,
    });
    let gaps: Vec<(f64, f64)> = mixed.iter().map(|(_, r)| r.early_late_gap(5)).collect();
    checks.push(Check {
        name: "2 mixed early-minus-late LL >= 0.3 for every model".into(),
        measured: gaps.iter().map(|(e, l)| format!("{:.3}", e - l)).collect::<Vec<_>>().join(" / "),
        pass: gaps.iter().all(|(e, l)| e - l >= 0.3),
    });
    let sep_diag = &find("glance-separated-sp-gru").3;
    let ratio = sep_diag.separation.as_ref().map_or(0.0, |s| s.ratio());
    let violations = sep_diag.sweep_violations.unwrap_or(usize::MAX);
    checks.push(Check {
        name: "3 latent separation >= 10 std and sweep violations <= 1".into(),
        measured: format!("{ratio:.2} / {violations}"),
        pass: ratio >= 10.0 && violations <= 1,
    });
    let speaking_names = ["speaking-dual", "speaking-dual_random", "speaking-full_random"];
    let collapse_ok = find("glance-mixed-sp-gru").3.collapsed
        && !sep_diag.collapsed
        && speaking_names.iter().all(|n| !find(n).3.collapsed);
    checks.push(Check {
        name: "4 collapse: mixed true, separated and speaking false".into(),
        measured: format!(
            "mixed {} separated {} speaking {}",
            find("glance-mixed-sp-gru").3.collapsed,
            sep_diag.collapsed,
            speaking_names.iter().map(|n| find(n).3.collapsed.to_string()).collect::<Vec<_>>().join(",")
        ),
        pass: collapse_ok,
    });

    let models: Vec<(String, Model)> = speaking_names
        .iter()
        .map(|n| {
            let r = find(n);
            Ok((n.trim_start_matches("speaking-").to_string(), run::load_model(&r.0, &r.1)?))
        })
        .collect::<Result<_>>()?;
    let full = find("speaking-full_random");
    let (_, eval) = load_dataset(&full.1.eval_data())?;
    let refs: Vec<(String, &Model)> = models.iter().map(|(n, m)| (n.clone(), m)).collect();
    let rows = generalization_eval(&refs, &eval, Execution::default())?;
    std::fs::write(out.join("generalization.txt"), generalization_table(&rows))?;
    let (dual, dual_random, full_random) = (rows[0].loss, rows[1].loss, rows[2].loss);
    checks.push(Check {
        name: "5 Dominating loss full_random < dual_random < dual, ratios >= 1.5; dominator prob >= 0.35".into(),
        measured: format!(
            "{full_random:.2} / {dual_random:.2} / {dual:.2} (ratios {:.2}, {:.2}); prob {:.3}",
            dual_random / full_random,
            dual / dual_random,
            rows[2].dominator_prob
        ),
        pass: dual_random / full_random >= 1.5 && dual / dual_random >= 1.5 && rows[2].dominator_prob >= 0.35,
    });

    let mut text = String::from("criterion | measured | result\n");
    for c in &checks {
        writeln!(text, "{} | {} | {}", c.name, c.measured, if c.pass { "PASS" } else { "FAIL" }).unwrap();
    }
    text.push_str("\nmixed-context glancing (Table layout)\nmodel ll_mean ll_std mae_deg_mean\n");
    for (label, r) in &mixed {
        writeln!(text, "{label} {:.3} {:.3} {:.2}", r.ll_mean, r.ll_std, mae(r)).unwrap();
    }
    writeln!(text, "SP-GRU separated type_i {:.3} {:.3} {:.2}", t1.ll_mean, t1.ll_std, mae(&t1)).unwrap();
    writeln!(text, "SP-GRU separated type_iii {:.3} {:.3} {:.2}", t3.ll_mean, t3.ll_std, mae(&t3)).unwrap();
    std::fs::write(out.join("summary.txt"), &text)?;
    print!("{text}");
    Ok(checks.iter().all(|c| c.pass))
}
