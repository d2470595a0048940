//! Run directories and the commands that fill them.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use groupcast::evaluation::{
    evaluate, generalization_eval, generalization_table, latent_separation, latent_sweep, posterior_diagnostics,
    LatentSeparation, MetricReport,
};
use groupcast::geometry::CueLayout;
use groupcast::model::Model;
use groupcast::synthdata::{
    build_speaking_meta_dataset, eval_tasks, generate_glancing_corpus, load_corpus, load_dataset, probe_contexts,
    serialize_corpus, serialize_dataset, DatasetHeader, FixedTasks, GlancingSequence, GlancingTrainStream,
    MetaSample, SequencePair, TaskSource,
};
use groupcast::training::{Checkpoint, Trainer};

use crate::config::{DatasetSpec, ExperimentConfig, RESOLVED_CONFIG};
use crate::svg::{line_chart, speaker_grid, Series};

/// Probe contexts per kind for latent diagnostics.
const PROBES: usize = 40;

pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }
    pub fn config(&self) -> PathBuf {
        self.path(RESOLVED_CONFIG)
    }
    pub fn corpus(&self) -> PathBuf {
        self.path("data/corpus.jsonl")
    }
    pub fn train_data(&self) -> PathBuf {
        self.path("data/train.jsonl")
    }
    pub fn eval_data(&self) -> PathBuf {
        self.path("data/eval.jsonl")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.path("checkpoint.json")
    }
    pub fn log(&self) -> PathBuf {
        self.path("train_log.jsonl")
    }
    pub fn report(&self) -> PathBuf {
        self.path("report.txt")
    }
    pub fn timesteps(&self) -> PathBuf {
        self.path("timesteps.txt")
    }
    pub fn posterior(&self) -> PathBuf {
        self.path("posterior.txt")
    }
    pub fn sweep(&self) -> PathBuf {
        self.path("sweep.txt")
    }
    pub fn generalization(&self) -> PathBuf {
        self.path("generalization.txt")
    }
    pub fn figures(&self) -> PathBuf {
        self.path("figures")
    }

    pub fn load_config(&self) -> Result<ExperimentConfig> {
        ensure!(self.config().exists(), "{} has no {RESOLVED_CONFIG}; run `groupcast generate` first", self.root.display());
        ExperimentConfig::load(&self.config())
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn kind_str(cfg: &ExperimentConfig) -> &'static str {
    match cfg.dataset {
        DatasetSpec::Glancing { .. } => "glancing",
        DatasetSpec::Speaking { .. } => "speaking",
    }
}

/// Write the resolved config and the datasets it names.
pub fn generate(cfg: &ExperimentConfig, run: &RunDir, force: bool) -> Result<()> {
    let outputs = [run.corpus(), run.train_data(), run.eval_data()];
    if !force {
        if let Some(p) = outputs.iter().find(|p| p.exists()) {
            bail!("{} already exists; pass --force to overwrite", p.display());
        }
    }
    fs::create_dir_all(run.root.join("data"))?;
    write(&run.config(), &cfg.to_toml())?;
    match &cfg.dataset {
        DatasetSpec::Glancing { mode } => {
            let corpus = generate_glancing_corpus();
            let header = DatasetHeader::new("glancing", None, cfg.seed, 1, CueLayout::GLANCE);
            serialize_corpus(&header, &corpus, &run.corpus())?;
            let tasks = eval_tasks(&corpus, *mode, cfg.eval_seed());
            let header = DatasetHeader::new("glancing", Some(mode.to_string()), cfg.eval_seed(), tasks.len(), CueLayout::GLANCE);
            serialize_dataset(&header, &tasks, &run.eval_data())?;
            println!("wrote {} sequences and {} eval tasks to {}", corpus.len(), tasks.len(), run.root.display());
        }
        DatasetSpec::Speaking { dynamics, groups, eval_dynamics, eval_groups, windows } => {
            let train = build_speaking_meta_dataset(*dynamics, *groups, cfg.seed, windows)?;
            let header = DatasetHeader::new("speaking", Some(dynamics.to_string()), cfg.seed, *groups, CueLayout::SPEAKING);
            serialize_dataset(&header, &train, &run.train_data())?;
            let eval = build_speaking_meta_dataset(*eval_dynamics, *eval_groups, cfg.eval_seed(), windows)?;
            let header =
                DatasetHeader::new("speaking", Some(eval_dynamics.to_string()), cfg.eval_seed(), *eval_groups, CueLayout::SPEAKING);
            serialize_dataset(&header, &eval, &run.eval_data())?;
            println!("wrote {} train and {} eval groups to {}", train.len(), eval.len(), run.root.display());
        }
    }
    Ok(())
}

fn require(path: &Path) -> Result<()> {
    ensure!(path.exists(), "dataset {} not found; run `groupcast generate` first", path.display());
    Ok(())
}

fn check_header(header: &DatasetHeader, cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    ensure!(
        header.kind == kind_str(cfg),
        "{} holds a {} dataset but the config expects {}",
        path.display(),
        header.kind,
        kind_str(cfg)
    );
    Ok(())
}

fn load_corpus_checked(cfg: &ExperimentConfig, run: &RunDir) -> Result<Vec<GlancingSequence>> {
    require(&run.corpus())?;
    let (header, corpus) = load_corpus(&run.corpus())?;
    check_header(&header, cfg, &run.corpus())?;
    Ok(corpus)
}

fn training_source(cfg: &ExperimentConfig, run: &RunDir) -> Result<Box<dyn TaskSource>> {
    Ok(match &cfg.dataset {
        DatasetSpec::Glancing { mode } => Box::new(GlancingTrainStream::new(load_corpus_checked(cfg, run)?, *mode, cfg.seed)),
        DatasetSpec::Speaking { .. } => {
            require(&run.train_data())?;
            let (header, samples) = load_dataset(&run.train_data())?;
            check_header(&header, cfg, &run.train_data())?;
            ensure!(!samples.is_empty(), "{} holds no tasks", run.train_data().display());
            Box::new(FixedTasks::new(samples))
        }
    })
}

fn eval_set(cfg: &ExperimentConfig, run: &RunDir) -> Result<Vec<MetaSample>> {
    require(&run.eval_data())?;
    let (header, tasks) = load_dataset(&run.eval_data())?;
    check_header(&header, cfg, &run.eval_data())?;
    Ok(tasks)
}

/// Train from scratch, or continue from the run's checkpoint with `resume`.
pub fn train(cfg: &ExperimentConfig, run: &RunDir, resume: bool, force: bool) -> Result<()> {
    let source = training_source(cfg, run)?;
    let tc = cfg.train_config()?;
    let mut trainer = if run.checkpoint().exists() && resume {
        let ckpt = Checkpoint::load(&run.checkpoint())?;
        ensure!(ckpt.config.model == tc.model, "checkpoint model does not match the config; retrain with --force");
        let mut t = Trainer::from_checkpoint(ckpt)?;
        t.config.steps = tc.steps;
        t
    } else {
        if run.checkpoint().exists() && !force {
            bail!("{} exists; pass --resume to continue or --force to retrain", run.checkpoint().display());
        }
        Trainer::new(tc)?
    };
    let start = trainer.step;
    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(resume)
        .write(true)
        .truncate(!resume)
        .open(run.log())?;
    let records = trainer.run(source.as_ref(), Some(&mut log))?;
    log.flush()?;
    trainer.checkpoint().save(&run.checkpoint())?;
    match records.last() {
        Some(r) => println!("trained steps {start}..{} (elbo {:.4}, {:.1}s)", r.step, r.elbo, r.wall_time),
        None => println!("checkpoint already at step {start}"),
    }
    Ok(())
}

pub fn load_model(cfg: &ExperimentConfig, run: &RunDir) -> Result<Model> {
    ensure!(run.checkpoint().exists(), "no checkpoint in {}; run `groupcast train` first", run.root.display());
    let ckpt = Checkpoint::load(&run.checkpoint())?;
    ensure!(ckpt.config.model == cfg.model_config()?, "checkpoint model does not match {}", run.config().display());
    Ok(Model::from_params(ckpt.config.model, ckpt.params)?)
}

/// Tasks of one glancing context kind (separated evaluation sets hold both).
pub fn tasks_tagged(tasks: &[MetaSample], tag: &str) -> Vec<MetaSample> {
    let needle = format!("/{tag}/");
    tasks.iter().filter(|t| t.group_id.contains(&needle)).cloned().collect()
}

fn with_title(title: &str, report: &MetricReport) -> String {
    format!("# {title}\n{}", report.to_text())
}

pub fn evaluate_run(cfg: &ExperimentConfig, run: &RunDir) -> Result<Vec<(String, MetricReport)>> {
    let model = load_model(cfg, run)?;
    let tasks = eval_set(cfg, run)?;
    let exec = cfg.train.execution;
    let mut reports = vec![("all".to_string(), evaluate(&model, &tasks, cfg.eval.z_mode, exec)?)];
    if matches!(cfg.dataset, DatasetSpec::Glancing { mode: groupcast::synthdata::ContextMode::Separated }) {
        for tag in ["type_i", "type_iii"] {
            let subset = tasks_tagged(&tasks, tag);
            if !subset.is_empty() {
                reports.push((tag.to_string(), evaluate(&model, &subset, cfg.eval.z_mode, exec)?));
            }
        }
    }
    let text: String = reports.iter().map(|(n, r)| with_title(n, r)).collect::<Vec<_>>().join("\n");
    write(&run.report(), &text)?;
    write(&run.timesteps(), &reports[0].1.timestep_table())?;
    if let DatasetSpec::Speaking { .. } = cfg.dataset {
        let rows = generalization_eval(&[(cfg.name.clone(), &model)], &tasks, exec)?;
        write(&run.generalization(), &generalization_table(&rows))?;
    }
    print!("{text}");
    Ok(reports)
}

fn probe_set(cfg: &ExperimentConfig, run: &RunDir) -> Result<Vec<Vec<SequencePair>>> {
    Ok(match cfg.dataset {
        DatasetSpec::Glancing { .. } => {
            let corpus = load_corpus_checked(cfg, run)?;
            probe_contexts(&corpus, 2 * PROBES, cfg.eval_seed()).into_iter().map(|(_, c)| c).collect()
        }
        DatasetSpec::Speaking { .. } => eval_set(cfg, run)?.into_iter().map(|t| t.context).collect(),
    })
}

pub struct Diagnosis {
    pub collapsed: bool,
    pub separation: Option<LatentSeparation>,
    /// Largest per-sequence monotonicity violation count of the sweep.
    pub sweep_violations: Option<usize>,
}

/// Posterior diagnostics, plus a latent sweep for 1-dim glancing models.
pub fn diagnose(cfg: &ExperimentConfig, run: &RunDir) -> Result<Diagnosis> {
    let model = load_model(cfg, run)?;
    let contexts = probe_set(cfg, run)?;
    let report = posterior_diagnostics(&model, &contexts, cfg.train.execution)?;
    let mut text = String::from("context mean log_var\n");
    for (i, q) in report.posteriors.iter().enumerate() {
        let f = |v: &[f64]| v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(",");
        text.push_str(&format!("{i} {} {}\n", f(&q.mean), f(&q.log_var)));
    }
    let across: f64 = report.across_var.iter().sum::<f64>() / report.across_var.len() as f64;
    let within: f64 = report.within_var.iter().sum::<f64>() / report.within_var.len() as f64;
    text.push_str(&format!("# across_var_mean {across:.6e}\n# within_var_mean {within:.6e}\n# collapsed {}\n", report.collapsed));
    write(&run.posterior(), &text)?;
    println!("collapse verdict: {}", report.collapsed);

    let mut diagnosis = Diagnosis { collapsed: report.collapsed, separation: None, sweep_violations: None };
    if let DatasetSpec::Glancing { .. } = cfg.dataset {
        if model.latent_dim() == 1 {
            let corpus = load_corpus_checked(cfg, run)?;
            let probes = probe_contexts(&corpus, 2 * PROBES, cfg.eval_seed());
            let sep = latent_separation(&model, &probes)?;
            let grid = sep.anchored_grid(cfg.eval.sweep_lo, cfg.eval.sweep_hi, cfg.eval.sweep_points);
            let observed: Vec<SequencePair> = eval_set(cfg, run)?[0].target.iter().take(8).cloned().collect();
            let zs: Vec<f64> = grid.iter().map(|g| g.1).collect();
            let sweep = latent_sweep(&model, &observed, &zs)?;
            let worst = (0..observed.len()).map(|s| sweep.monotonicity_violations(s)).max().unwrap_or(0);
            let mut t = format!(
                "# type_i_mean {:.6}\n# type_iii_mean {:.6}\n# max_std {:.6}\n# separation_ratio {:.3}\n# max_violations {worst}\nu z {}\n",
                sep.mean_type_i,
                sep.mean_type_iii,
                sep.max_std,
                sep.ratio(),
                (0..observed.len()).map(|s| format!("final_{s}")).collect::<Vec<_>>().join(" ")
            );
            for (k, (u, z)) in grid.iter().enumerate() {
                let vals: Vec<String> = sweep.final_value[k].iter().map(|v| format!("{v:.6}")).collect();
                t.push_str(&format!("{u:.4} {z:.6} {}\n", vals.join(" ")));
            }
            write(&run.sweep(), &t)?;
            println!("latent separation ratio {:.2}, worst sweep violations {worst}", sep.ratio());
            diagnosis.separation = Some(sep);
            diagnosis.sweep_violations = Some(worst);
        }
    }
    Ok(diagnosis)
}

/// Parse a whitespace table with a header line; `#` lines are skipped.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}; run the producing command first", path.display()))?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header: Vec<String> = lines.next().context("empty table")?.split_whitespace().map(String::from).collect();
    let rows = lines
        .map(|l| l.split_whitespace().map(|v| v.parse::<f64>().with_context(|| format!("bad number `{v}`"))).collect())
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok((header, rows))
}

/// Figures from the run's tables and checkpoint.
pub fn plot(cfg: &ExperimentConfig, run: &RunDir) -> Result<Vec<PathBuf>> {
    let dir = run.figures();
    fs::create_dir_all(&dir)?;
    let mut written = Vec::new();

    let (header, rows) = read_table(&run.timesteps())?;
    let mut series = vec![Series::new("LL", rows.iter().map(|r| (r[0], r[1])).collect())];
    if header.len() > 2 {
        series.push(Series::new("MAE (deg)", rows.iter().map(|r| (r[0], r[2])).collect()).dashed());
    }
    let path = dir.join("timesteps.svg");
    write(&path, &line_chart(&format!("{}: per-timestep metrics", cfg.name), "future step", "value", &series))?;
    written.push(path);

    let model = load_model(cfg, run)?;
    let tasks = eval_set(cfg, run)?;
    let task = tasks.first().context("empty eval set")?;
    let mut one = task.clone();
    one.target.truncate(4);
    let (forecast, truth) = model.predict(&one, &groupcast::model::ZChoice::ContextMean)?;
    let point = forecast.point();
    match cfg.dataset {
        DatasetSpec::Glancing { .. } => {
            let mut series = Vec::new();
            for (r, pair) in one.target.iter().enumerate() {
                let obs = pair.obs_len();
                let mut truth_pts: Vec<(f64, f64)> = (0..obs).map(|t| (t as f64, pair.observed[[t, 0, 0]])).collect();
                truth_pts.extend((0..truth.dim().0).map(|t| ((obs + t) as f64, truth[[t, r, 0]])));
                let pred: Vec<(f64, f64)> = (0..point.dim().0).map(|t| ((obs + t) as f64, point[[t, r, 0]])).collect();
                series.push(Series::new(format!("truth {r}"), truth_pts));
                series.push(Series::new(format!("pred {r}"), pred).dashed());
            }
            let path = dir.join("predictions.svg");
            write(&path, &line_chart(&format!("{}: predictions", cfg.name), "timestep", "rotation", &series))?;
            written.push(path);
            if run.sweep().exists() {
                let (header, rows) = read_table(&run.sweep())?;
                let series: Vec<Series> = (2..header.len())
                    .map(|c| Series::new(header[c].clone(), rows.iter().map(|r| (r[0], r[c])).collect()))
                    .collect();
                let path = dir.join("latent_sweep.svg");
                write(&path, &line_chart(&format!("{}: latent sweep", cfg.name), "z", "final-step value", &series))?;
                written.push(path);
            }
        }
        DatasetSpec::Speaking { .. } => {
            let pair = &one.target[0];
            let (obs, people) = (pair.observed.dim().0, pair.participants());
            let fut = point.dim().0;
            let mut shade = vec![vec![0.0; obs + fut]; people];
            let mut marks = vec![vec![false; obs + fut]; people];
            for p in 0..people {
                for t in 0..obs {
                    shade[p][t] = pair.observed[[t, p, 0]];
                }
                for t in 0..fut {
                    shade[p][obs + t] = point[[t, 0, p]];
                    marks[p][obs + t] = truth[[t, 0, p]] > 0.5;
                }
            }
            let path = dir.join("speakers.svg");
            write(&path, &speaker_grid(&format!("{}: speaker forecast", cfg.name), &shade, &marks, obs))?;
            written.push(path);
        }
    }
    for p in &written {
        println!("wrote {}", p.display());
    }
    Ok(written)
}
