//! The eight pipeline stages. Each reads its inputs from the run directory
//! (or `--in`) and writes its outputs back into it.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use lxtts::eval::{eval_model, EvalMatrix};
use lxtts::metrics::quality_pass;
use lxtts::model::{Checkpoint, Model};
use lxtts::optim::OptimState;
use lxtts::prefs::{build_preference_dataset, build_prompts, read_pairs, write_pairs};
use lxtts::seed::{derive_seed, label_salt};
use lxtts::train::{build_sft_triplets, dpo_train_observed, pretrain_observed, sft_observed, write_metrics_csv, StepMetrics};
use lxtts::world::{build_corpus, read_corpus, speaker_split, write_corpus, Utterance, World, WorldConfig};
use lxtts::{Error, Result, Scalar};

use crate::config::RunConfig;
use crate::report::{self, Format};

/// File layout of one run directory.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }
    pub fn world(&self) -> PathBuf {
        self.root.join("world.json")
    }
    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus.jsonl")
    }
    pub fn filtered(&self) -> PathBuf {
        self.root.join("filtered.jsonl")
    }
    pub fn stage(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
    pub fn model(&self, stage: &str) -> PathBuf {
        self.stage(stage).join("model.lxck")
    }
    pub fn prefs(&self) -> PathBuf {
        self.root.join("prefs.jsonl")
    }
    pub fn eval(&self, name: &str) -> PathBuf {
        self.root.join("eval").join(format!("{name}.json"))
    }
}

/// Per-invocation options shared by every stage.
#[derive(Clone, Debug)]
pub struct StageArgs {
    pub config: RunConfig,
    pub dir: RunDir,
    pub input: Option<PathBuf>,
    pub stage_steps: Option<usize>,
    pub format: Format,
}

impl StageArgs {
    fn input_or(&self, default: PathBuf) -> PathBuf {
        self.input.clone().unwrap_or(default)
    }

    fn seed(&self, label: &str) -> u64 {
        derive_seed(self.config.seed, label_salt(label))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))
}

fn load_world(args: &StageArgs) -> Result<World> {
    let cfg: WorldConfig = serde_json::from_reader(open(&args.dir.world())?)?;
    World::new(cfg)
}

fn load_rows(path: &Path) -> Result<Vec<Utterance>> {
    read_corpus(open(path)?)
}

/// Retained rows split by speaker into (train, test) plus the train speaker ids.
fn split_rows(args: &StageArgs, world: &World) -> Result<(Vec<Utterance>, Vec<Utterance>, Vec<usize>)> {
    let rows = load_rows(&args.dir.filtered())?;
    let wc = world.config();
    let (train_spk, _) = speaker_split(wc.seed, wc.n_speakers, args.config.test_fraction);
    let (train, test) = rows.into_iter().partition(|u| train_spk.binary_search(&u.speaker_id).is_ok());
    Ok((train, test, train_spk))
}

pub fn world_gen(args: &StageArgs) -> Result<()> {
    let world = World::new(args.config.world.clone())?;
    let corpus = build_corpus(&world, &args.config.corpus)?;
    let mut w = create(&args.dir.world())?;
    serde_json::to_writer_pretty(&mut w, world.config())?;
    w.write_all(b"\n")?;
    w.flush()?;
    let mut w = create(&args.dir.corpus())?;
    write_corpus(&corpus, &mut w)?;
    w.flush()?;
    log::info!("world-gen: {} utterances -> {}", corpus.len(), args.dir.corpus().display());
    Ok(())
}

pub fn filter(args: &StageArgs) -> Result<()> {
    let rows = load_rows(&args.input_or(args.dir.corpus()))?;
    let total = rows.len();
    let kept: Vec<Utterance> = rows.into_iter().filter(|u| quality_pass(&u.quality)).collect();
    let mut w = create(&args.dir.filtered())?;
    write_corpus(&kept, &mut w)?;
    w.flush()?;
    log::info!("filter: retained {} of {} rows", kept.len(), total);
    Ok(())
}

/// Writes the config snapshot, metrics, and final checkpoint of a stage.
struct StageOutput<'a> {
    args: &'a StageArgs,
    name: &'a str,
}

impl StageOutput<'_> {
    fn begin(&self) -> Result<()> {
        let dir = self.args.dir.stage(self.name);
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("config.txt"), self.args.config.to_text())?;
        Ok(())
    }

    /// Checkpoint hook: saves weights and optimizer moments every
    /// `checkpoint.every` steps.
    fn hook<T: Scalar>(&self) -> impl FnMut(&StepMetrics, &Model<T>, &OptimState<T>) -> Result<()> + '_ {
        let every = self.args.config.checkpoint_every;
        move |m, model, state| {
            let done = m.step + 1;
            if every > 0 && done % every == 0 {
                let mut ck = Checkpoint::from_model(model);
                ck.tensors.extend(state.to_tensors(model.names()));
                ck.save(self.args.dir.stage(self.name).join(format!("step_{done:06}.lxck")))?;
            }
            Ok(())
        }
    }

    fn finish<T: Scalar>(&self, model: &Model<T>, log: &[StepMetrics]) -> Result<()> {
        let dir = self.args.dir.stage(self.name);
        let mut w = create(&dir.join("metrics.csv"))?;
        write_metrics_csv(log, &mut w)?;
        w.flush()?;
        Checkpoint::from_model(model).save(dir.join("model.lxck"))?;
        if let Some(last) = log.last() {
            log::info!("{}: {} steps, final loss {:.4}", self.name, log.len(), last.loss);
        }
        Ok(())
    }
}

fn load_model<T: Scalar>(path: &Path) -> Result<Model<T>> {
    Checkpoint::load(path)
        .map_err(|e| Error::Data(format!("cannot load checkpoint {}: {e}", path.display())))?
        .into_model()
}

pub fn pretrain<T: Scalar>(args: &StageArgs) -> Result<()> {
    let cfg = &args.config;
    let world = load_world(args)?;
    let (train, _, _) = split_rows(args, &world)?;
    let steps = args.stage_steps.unwrap_or(cfg.pretrain.steps);
    let out = StageOutput { args, name: "pretrain" };
    out.begin()?;
    let mut model = Model::<T>::init(cfg.model_config(), args.seed("init"))?;
    let optim = cfg.stage_optim(steps, cfg.pretrain.lr);
    let log = pretrain_observed(&mut model, &train, &optim, steps, cfg.pretrain.batch_size, args.seed("pretrain"), out.hook())?;
    out.finish(&model, &log)
}

pub fn sft<T: Scalar>(args: &StageArgs) -> Result<()> {
    let cfg = &args.config;
    let world = load_world(args)?;
    let (train, _, _) = split_rows(args, &world)?;
    let mut model = load_model::<T>(&args.input_or(args.dir.model("pretrain")))?;
    let triplets = build_sft_triplets(&train, |u| world.speaker_embed(&u.audio_tokens), cfg.sft_tau)?;
    log::info!("sft: {} triplets", triplets.len());
    let steps = args.stage_steps.unwrap_or(cfg.sft.steps);
    let out = StageOutput { args, name: "sft" };
    out.begin()?;
    let optim = cfg.stage_optim(steps, cfg.sft.lr);
    let log = sft_observed(&mut model, &triplets, &optim, steps, cfg.sft.batch_size, args.seed("sft"), out.hook())?;
    out.finish(&model, &log)
}

pub fn prefs_build<T: Scalar>(args: &StageArgs) -> Result<()> {
    let cfg = &args.config;
    let world = load_world(args)?;
    let (train, _, _) = split_rows(args, &world)?;
    let model = load_model::<T>(&args.input_or(args.dir.model("sft")))?;
    let prompts = build_prompts(&world, &train, cfg.prefs_prompts, args.seed("prompts"))?;
    let sampler = cfg.sampler.with_seed(args.seed("candidates"));
    let ds = build_preference_dataset(&model, &world, &prompts, cfg.prefs_candidates, &sampler, args.seed("balance"))?;
    let mut w = create(&args.dir.prefs())?;
    write_pairs(&ds.pairs, &mut w)?;
    w.flush()?;
    log::info!(
        "prefs-build: {} candidates, {} retained, {} labeled, {} balanced pairs",
        ds.candidates,
        ds.retained,
        ds.labeled,
        ds.pairs.len()
    );
    Ok(())
}

pub fn dpo<T: Scalar>(args: &StageArgs) -> Result<()> {
    let cfg = &args.config;
    let reference = load_model::<T>(&args.dir.model("sft"))?;
    let mut policy = reference.clone();
    let pairs = read_pairs(open(&args.input_or(args.dir.prefs()))?)?;
    let pairs: Vec<_> = pairs.iter().map(|p| p.to_dpo(reference.config())).collect();
    let mut dcfg = cfg.dpo.clone();
    dcfg.steps = args.stage_steps.unwrap_or(dcfg.steps);
    let out = StageOutput { args, name: "dpo" };
    out.begin()?;
    let optim = cfg.stage_optim(dcfg.steps, cfg.dpo_lr);
    let log = dpo_train_observed(&mut policy, &reference, &pairs, &dcfg, &optim, args.seed("dpo"), out.hook())?;
    out.finish(&policy, &log)
}

/// Models evaluated by default, in report order.
pub const EVAL_STAGES: [(&str, &str); 2] = [("SFT", "sft"), ("DPO", "dpo")];

pub fn eval<T: Scalar>(args: &StageArgs) -> Result<()> {
    let cfg = &args.config;
    let world = load_world(args)?;
    let (_, test, train_spk) = split_rows(args, &world)?;
    let sampler = cfg.sampler.with_seed(args.seed("eval"));
    let targets: Vec<(String, PathBuf)> = match &args.input {
        Some(path) => {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model").to_string();
            vec![(stem, path.clone())]
        }
        None => EVAL_STAGES
            .iter()
            .map(|(_, stage)| (stage.to_string(), args.dir.model(stage)))
            .filter(|(_, p)| p.exists())
            .collect(),
    };
    if targets.is_empty() {
        return Err(Error::Data("no checkpoints to evaluate".into()));
    }
    for (name, path) in targets {
        let model = load_model::<T>(&path)?;
        let matrix = eval_model(&model, &world, &test, &train_spk, &sampler, cfg.eval_per_cell)?;
        let mut w = create(&args.dir.eval(&name))?;
        serde_json::to_writer_pretty(&mut w, &matrix)?;
        w.write_all(b"\n")?;
        w.flush()?;
        let wer = matrix.overall_mean(|c| c.wer.as_ref()).unwrap_or(f64::NAN);
        let sim = matrix.overall_mean(|c| c.sim_o.as_ref()).unwrap_or(f64::NAN);
        log::info!("eval {name}: mean WER {:.2}%, mean Sim-O {sim:.4}", 100.0 * wer);
    }
    Ok(())
}

pub fn load_matrix(path: &Path) -> Result<EvalMatrix> {
    Ok(serde_json::from_reader(open(path)?)?)
}

pub fn report(args: &StageArgs) -> Result<()> {
    let mut models = Vec::new();
    for (label, stage) in EVAL_STAGES {
        let path = args.dir.eval(stage);
        if path.exists() {
            models.push((label, load_matrix(&path)?));
        }
    }
    if models.is_empty() {
        return Err(Error::Data("no evaluation results; run `eval` first".into()));
    }
    let refs: Vec<(&str, &EvalMatrix)> = models.iter().map(|(l, m)| (*l, m)).collect();
    match args.format {
        Format::Markdown => fs::write(args.dir.root.join("report.md"), report::markdown(&refs))?,
        Format::Csv => {
            fs::write(args.dir.root.join("report.csv"), report::summary_csv(&refs))?;
            fs::write(args.dir.root.join("matrix.csv"), report::matrix_csv(&refs))?;
        }
    }
    log::info!("report written to {}", args.dir.root.display());
    Ok(())
}
