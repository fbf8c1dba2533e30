//! Command-line pipeline over an experiment config.
//!
//! Output tree under `<out>`: `dataset/{train,adapt,test}/`, `checkpoints/`,
//! `metrics/*.csv` and `matrices/*.csv`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::baseline::{finetune_baseline, train_baseline, GnnParams};
use crate::competition::{select_winners, train_competition, windowed_pair_losses, MechanismBank};
use crate::composition::{extract_labels, label_accuracy, train_composition, ConfidenceBank};
use crate::config::ExperimentConfig;
use crate::dataset::{
    generate_dataset, generate_episodes, load_episodes, split_holdout, Episode, Window,
};
use crate::eval::{
    adaptation_curve, adaptation_subset, curve_csv, disentanglement_matrix, mean_rollout, Selector,
};
use crate::nn::{checkpoint, AdamConfig};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "comet", version, about = "Competitive mechanism world models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides every seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replace existing outputs.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate training, adaptation and test episodes.
    GenData(Common),
    /// Warm start plus winner-takes-all training of the mechanism bank.
    TrainCompetition(Common),
    /// Extract labels with the frozen bank and train the confidence nets.
    TrainComposition(Common),
    /// Pretrain the message-passing baseline on the training mixture.
    TrainBaseline(Common),
    /// Finetune the pretrained baseline on adaptation episodes.
    FinetuneBaseline(Common),
    /// Rollout errors of every available selector on the test episodes.
    EvalRollout(Common),
    /// Mode/mechanism co-occurrence on held-out training episodes.
    EvalDisentangle(Common),
    /// Rollout error against adaptation budget, per seed.
    EvalAdaptation(Common),
    /// Lossless text dump of a checkpoint.
    ExportCheckpoint {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        force: bool,
    },
}

/// Parses `argv` and runs; returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::Config(_)) {
                2
            } else {
                1
            }
        }
    }
}

struct Ctx {
    cfg: ExperimentConfig,
    out: PathBuf,
    force: bool,
}

impl Ctx {
    fn new(common: &Common) -> Result<Self> {
        if !common.config.is_file() {
            return Err(Error::Config(format!(
                "config file not found: {}",
                common.config.display()
            )));
        }
        let mut cfg = ExperimentConfig::load(&common.config)?;
        if let Some(seed) = common.seed {
            cfg.override_seed(seed);
        }
        let out = common
            .out
            .clone()
            .unwrap_or_else(|| cfg.experiment.out.clone());
        Ok(Self {
            cfg,
            out,
            force: common.force,
        })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    /// Creates the parent directory and refuses to clobber without `--force`.
    fn output(&self, rel: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        claim(&p, self.force)?;
        Ok(p)
    }

    fn write(&self, rel: &str, text: &str) -> Result<()> {
        let p = self.output(rel)?;
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }

    fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig::with_lr(lr)
    }

    fn train_split(&self) -> Result<(Vec<Episode>, Vec<Episode>)> {
        let all = load_episodes(&self.path("dataset/train"))?;
        Ok(split_holdout(all, self.cfg.data.holdout_frac))
    }

    fn bank(&self) -> Result<MechanismBank> {
        MechanismBank::load(
            &self.path("checkpoints/mechanisms.cmt1"),
            self.adam(self.cfg.competition.lr),
        )
    }

    fn adapt_set(&self, n: usize) -> Result<Vec<Episode>> {
        let pool = load_episodes(&self.path("dataset/adapt"))?;
        adaptation_subset(&pool, n, self.cfg.experiment.seed)
    }
}

fn claim(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Config(format!(
            "{} exists; pass --force to overwrite",
            path.display()
        )));
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData(c) => gen_data(&Ctx::new(&c)?),
        Command::TrainCompetition(c) => cmd_train_competition(&Ctx::new(&c)?),
        Command::TrainComposition(c) => cmd_train_composition(&Ctx::new(&c)?),
        Command::TrainBaseline(c) => cmd_train_baseline(&Ctx::new(&c)?),
        Command::FinetuneBaseline(c) => cmd_finetune_baseline(&Ctx::new(&c)?),
        Command::EvalRollout(c) => eval_rollout(&Ctx::new(&c)?),
        Command::EvalDisentangle(c) => eval_disentangle(&Ctx::new(&c)?),
        Command::EvalAdaptation(c) => eval_adaptation(&Ctx::new(&c)?),
        Command::ExportCheckpoint {
            input,
            output,
            force,
        } => {
            claim(&output, force)?;
            checkpoint::export_text_file(&checkpoint::load(&input)?, &output)
        }
    }
}

fn gen_data(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let seed = cfg.experiment.seed;
    let data = &cfg.data;
    for dir in ["dataset/train", "dataset/adapt", "dataset/test"] {
        claim(&ctx.path(dir).join("manifest.txt"), ctx.force)?;
    }
    let train = generate_dataset(
        "train",
        &cfg.train_specs()?,
        data.episodes_per_env,
        data.episode_len,
        seed,
        &ctx.path("dataset/train"),
    )?;
    let adapt = cfg.adapt_spec()?;
    // distinct environment indices keep the three sets' episode seeds apart
    let base = cfg.experiment.train_envs.len();
    let pool = generate_dataset_at(
        &adapt,
        base,
        data.adapt_pool,
        data.episode_len,
        seed,
        &ctx.path("dataset/adapt"),
        "adapt",
    )?;
    let test = generate_dataset_at(
        &adapt,
        base + 1,
        data.test_episodes,
        data.episode_len,
        seed,
        &ctx.path("dataset/test"),
        "test",
    )?;
    println!(
        "wrote {} training, {} adaptation and {} test episodes under {}",
        train.total_episodes(),
        pool,
        test,
        ctx.path("dataset").display()
    );
    Ok(())
}

fn generate_dataset_at(
    spec: &crate::envs::EnvSpec,
    env_index: usize,
    count: usize,
    len: usize,
    seed: u64,
    dir: &Path,
    id: &str,
) -> Result<usize> {
    let episodes = generate_episodes(spec, env_index, count, len, seed)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let file = format!("{}.cmtd", spec.env_id);
    crate::dataset::save_episodes(&dir.join(&file), &episodes)?;
    crate::dataset::DatasetManifest {
        dataset_id: id.to_string(),
        seed,
        episode_len: len,
        generator_version: crate::dataset::GENERATOR_VERSION,
        entries: vec![crate::dataset::ManifestEntry {
            env_id: spec.env_id.clone(),
            episodes: count,
            file,
        }],
    }
    .save(&dir.join("manifest.txt"))?;
    Ok(count)
}

fn cmd_train_competition(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg.competition;
    let final_path = ctx.output("checkpoints/mechanisms.cmt1")?;
    let log_path = ctx.output("metrics/competition_usage.csv")?;
    let (train, held) = ctx.train_split()?;
    let (bank, log) = train_competition(cfg, &train, |row, bank| {
        let p = ctx.path(&format!("checkpoints/mechanisms_step{}.cmt1", row.step));
        claim(&p, ctx.force)?;
        bank.save(&p)
    })?;
    bank.save(&final_path)?;
    fs::write(&log_path, log.to_csv(bank.len())).map_err(|e| Error::io(&log_path, e))?;
    if !held.is_empty() {
        let windows: Vec<Window> = held
            .iter()
            .enumerate()
            .flat_map(|(e, ep)| (0..ep.window_count(cfg.horizon)).map(move |t| (e, ep, t)))
            .map(|(e, ep, t)| Window::from_episode(ep, e, t, cfg.horizon))
            .collect::<Result<_>>()?;
        let mut sum = 0.0;
        let mut n = 0usize;
        for chunk in windows.chunks(256) {
            for t in windowed_pair_losses(&bank, chunk)? {
                for w in select_winners(&t) {
                    sum += w.loss;
                    n += 1;
                }
            }
        }
        ctx.write(
            "metrics/competition_holdout.csv",
            &format!(
                "windows,objects,mean_winner_loss\n{},{n},{:.9e}\n",
                windows.len(),
                sum / n.max(1) as f64
            ),
        )?;
    }
    println!(
        "trained {} mechanisms for {} steps",
        bank.len(),
        cfg.total_steps
    );
    Ok(())
}

fn cmd_train_composition(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let conf_path = ctx.output("checkpoints/confidence.cmt1")?;
    let bank = ctx.bank()?;
    let episodes = ctx.adapt_set(cfg.eval.adapt_episodes)?;
    let labels = extract_labels(&bank, &episodes, cfg.adaptation.label_horizon)?;
    labels.save(&ctx.output("dataset/labels.cmtl")?)?;
    let mut conf = ConfidenceBank::new(
        bank.len(),
        bank.d(),
        &cfg.composition.hidden,
        cfg.composition.seed,
        ctx.adam(cfg.composition.lr),
    )?;
    let trace = train_composition(&mut conf, &labels, &episodes, &cfg.composition)?;
    conf.save(&conf_path)?;
    ctx.write("metrics/composition_trace.csv", &trace.to_csv())?;
    let test = load_episodes(&ctx.path("dataset/test"))?;
    let test_labels = extract_labels(&bank, &test, cfg.adaptation.label_horizon)?;
    let acc = label_accuracy(&conf, &test_labels, &test)?;
    ctx.write(
        "metrics/composition_test.csv",
        &format!(
            "episodes,labels,top1_acc\n{},{},{acc:.6}\n",
            test.len(),
            test_labels.len()
        ),
    )?;
    println!(
        "composition: {} labels, test top-1 accuracy {acc:.3}",
        labels.len()
    );
    Ok(())
}

fn cmd_train_baseline(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg.baseline;
    let path = ctx.output("checkpoints/baseline.cmt1")?;
    let (train, _) = ctx.train_split()?;
    let d = train
        .first()
        .map(|e| e.d)
        .ok_or_else(|| Error::Sampling("empty training set".into()))?;
    let mut gnn = GnnParams::new(d, &cfg.hidden, cfg.message_dim, cfg.seed, ctx.adam(cfg.lr))?;
    let log = train_baseline(&mut gnn, &train, cfg)?;
    gnn.save(&path)?;
    ctx.write("metrics/baseline_train.csv", &log.to_csv())
}

fn cmd_finetune_baseline(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg.finetune;
    let path = ctx.output("checkpoints/baseline_finetuned.cmt1")?;
    let mut gnn = GnnParams::load(&ctx.path("checkpoints/baseline.cmt1"), ctx.adam(cfg.lr))?;
    let episodes = ctx.adapt_set(ctx.cfg.eval.adapt_episodes)?;
    let log = finetune_baseline(&mut gnn, &episodes, cfg)?;
    gnn.save(&path)?;
    ctx.write("metrics/baseline_finetune.csv", &log.to_csv())
}

fn eval_rollout(ctx: &Ctx) -> Result<()> {
    let h = ctx.cfg.eval.rollout_horizon;
    let test = load_episodes(&ctx.path("dataset/test"))?;
    let bank = ctx.bank()?;
    let conf_path = ctx.path("checkpoints/confidence.cmt1");
    let conf = if conf_path.exists() {
        Some(ConfidenceBank::load(&conf_path, AdamConfig::default())?)
    } else {
        None
    };
    let mut gnns = Vec::new();
    for (name, file) in [
        ("baseline", "baseline.cmt1"),
        ("baseline_finetuned", "baseline_finetuned.cmt1"),
    ] {
        let p = ctx.path(&format!("checkpoints/{file}"));
        if p.exists() {
            gnns.push((name, GnnParams::load(&p, AdamConfig::default())?));
        }
    }
    let mut selectors: Vec<(&str, Selector)> = vec![
        ("oracle", Selector::Oracle { bank: &bank }),
        (
            "random",
            Selector::Random {
                bank: &bank,
                seed: ctx.cfg.experiment.seed,
            },
        ),
    ];
    if let Some(conf) = &conf {
        selectors.push(("confidence", Selector::Confidence { bank: &bank, conf }));
    }
    for (name, gnn) in &gnns {
        selectors.push((name, Selector::Baseline { gnn }));
    }
    let mut csv = String::from("selector");
    for s in 1..=h {
        csv.push_str(&format!(",mse_step_{s}"));
    }
    csv.push_str(",mean_mse,mean_position_mse\n");
    for (name, sel) in &selectors {
        let s = mean_rollout(sel, &test, h)?;
        csv.push_str(name);
        for v in &s.mse {
            csv.push_str(&format!(",{v:.9e}"));
        }
        let pos = s.position_mse.iter().sum::<f64>() / h as f64;
        csv.push_str(&format!(",{:.9e},{pos:.9e}\n", s.mean_mse()));
    }
    ctx.write("metrics/rollout.csv", &csv)
}

fn eval_disentangle(ctx: &Ctx) -> Result<()> {
    let (_, held) = ctx.train_split()?;
    if held.is_empty() {
        return Err(Error::Config(
            "data.holdout_frac leaves no held-out episodes".into(),
        ));
    }
    let bank = ctx.bank()?;
    let horizon = ctx.cfg.competition.horizon;
    let m = disentanglement_matrix(&bank, &held, horizon, ctx.cfg.experiment.domain)?;
    let domain = format!("{:?}", ctx.cfg.experiment.domain).to_lowercase();
    ctx.write(&format!("matrices/disentangle_{domain}.csv"), &m.to_csv())?;
    ctx.write(
        "metrics/disentangle.csv",
        &format!(
            "horizon,windows,assignment_score\n{horizon},{},{:.6}\n",
            m.total(),
            m.assignment_score()
        ),
    )?;
    println!("assignment score {:.3}", m.assignment_score());
    Ok(())
}

fn eval_adaptation(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let out = ctx.output("metrics/adaptation.csv")?;
    let bank = ctx.bank()?;
    let gnn = GnnParams::load(
        &ctx.path("checkpoints/baseline.cmt1"),
        ctx.adam(cfg.finetune.lr),
    )?;
    let pool = load_episodes(&ctx.path("dataset/adapt"))?;
    let test = load_episodes(&ctx.path("dataset/test"))?;
    let mut rows = Vec::new();
    for &seed in &cfg.eval.seeds {
        rows.extend(adaptation_curve(
            &bank,
            &gnn,
            &pool,
            &test,
            seed,
            &cfg.adaptation,
            &cfg.composition,
            &cfg.finetune,
        )?);
    }
    fs::write(&out, curve_csv(&rows, cfg.adaptation.horizon)).map_err(|e| Error::io(&out, e))
}
