use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use emb2emb::autoencoder::{pretrain_dae, AeConfig, Autoencoder, DaeConfig, DaeEpoch};
use emb2emb::checkpoint::{parameter_hash, Container, Section};
use emb2emb::eval::{selection_score, tradeoff_sweep, write_sweep_csv, EvalReport, Judge, PointMetrics};
use emb2emb::fgim::{Fgim, FgimConfig};
use emb2emb::mapping::{fit_mean_offsets, Mapping, MappingConfig, MappingKind};
use emb2emb::objectives::{
    train_emb2emb, train_style_classifier, write_epoch_log, ClassifierConfig, Discriminator, DiscriminatorConfig,
    Emb2EmbConfig, LossWeights, Mode, StyleClassifier, Task,
};
use emb2emb::pipeline::{derive_seed, Pipeline};
use emb2emb::text::{read_lines, write_lines, LabeledCorpus, NoiseConfig, ParallelCorpus, TokenSeq, Vocab};
use emb2emb::Error;
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::{Cli, CliError, Command, Common, FgimArgs, RunConfig, RESOLVED_CONFIG};

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pretrain { common } => {
            let (cfg, out) = setup(&common, None)?;
            pretrain(&cfg, &out)
        }
        Command::TrainClassifier { common, judge } => {
            let (cfg, out) = setup(&common, None)?;
            train_classifier(&cfg, &out, judge)
        }
        Command::Train { common } => {
            let (cfg, out) = setup(&common, None)?;
            train(&cfg, &out)
        }
        Command::Infer {
            common,
            input,
            mapping,
            fgim,
        } => {
            let (cfg, out) = setup(&common, Some(&fgim))?;
            infer(&cfg, &out, &input, &mapping)
        }
        Command::Eval {
            common,
            hyp,
            references,
            source,
        } => {
            let (cfg, out) = setup(&common, None)?;
            eval(&cfg, &out, &hyp, &references, source.as_deref())
        }
        Command::Sweep { common, fgim } => {
            let (cfg, out) = setup(&common, Some(&fgim))?;
            sweep(&cfg, &out)
        }
    }
}

/// Resolves file, `--set` and flag settings (later wins), validates them and
/// writes the result into the output directory.
fn setup(common: &Common, fgim: Option<&FgimArgs>) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for kv in &common.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(f) = fgim {
        cfg.fgim |= f.fgim;
        if let Some(v) = f.fgim_variant {
            cfg.fgim_variant = v;
        }
        if let Some(t) = f.fgim_threshold {
            cfg.fgim_threshold = t;
        }
    }
    cfg.validate()?;
    fs::create_dir_all(&common.out)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", common.out.display())))?;
    write_file(&common.out.join(RESOLVED_CONFIG), &cfg.to_text())?;
    Ok((cfg, common.out.clone()))
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

fn rng(seed: u64, component: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, component))
}

fn vocab_hash(vocab: &Vocab) -> String {
    let mut h = Sha256::new();
    for t in vocab.tokens() {
        h.update(t.as_bytes());
        h.update(b"\n");
    }
    format!("{:x}", h.finalize())
}

fn into_core(e: CliError) -> Error {
    match e {
        CliError::Core(e) => e,
        CliError::Usage(m) => Error::Config(m),
    }
}

fn load_autoencoder(cfg: &RunConfig) -> Result<Autoencoder> {
    let ae = Autoencoder::load(&cfg.path("autoencoder", &cfg.autoencoder)?)?;
    if ae.dim() != cfg.dim {
        return Err(Error::Mismatch(format!(
            "autoencoder has d={} but the config says dim={}",
            ae.dim(),
            cfg.dim
        ))
        .into());
    }
    Ok(ae)
}

fn load_classifier(cfg: &RunConfig, ae: &Autoencoder) -> Result<StyleClassifier> {
    let path = cfg.path("classifier", &cfg.classifier)?;
    let clf = StyleClassifier::from_section(Container::load(&path)?.section("classifier")?)?;
    if emb2emb::objectives::LatentClassifier::dim(&clf) != ae.dim() {
        return Err(Error::Mismatch(format!("classifier {} does not match d={}", path.display(), ae.dim())).into());
    }
    Ok(clf)
}

fn pretrain(cfg: &RunConfig, out: &Path) -> Result<()> {
    let start = Instant::now();
    let train = read_lines(&cfg.path("train_text", &cfg.train_text)?)?;
    let valid = match &cfg.valid_text {
        Some(p) => read_lines(p)?,
        None => train.clone(),
    };
    let vocab = Vocab::build(train.iter().map(String::as_str), cfg.vocab_cap)?;
    let enc = |xs: &[String]| xs.iter().map(|s| vocab.encode(s)).collect::<Vec<TokenSeq>>();
    let (train_ids, valid_ids) = (enc(&train), enc(&valid));
    let ae_cfg = AeConfig {
        emb_dim: cfg.emb_dim,
        hidden: cfg.dim,
        shared_embeddings: true,
    };
    let dae = DaeConfig {
        epochs: cfg.ae_epochs,
        batch_size: cfg.ae_batch_size,
        lr: cfg.ae_lr,
        tf_prob: cfg.tf_prob,
        noise: NoiseConfig::new(cfg.p_drop)?,
        patience: cfg.ae_patience,
        target_accuracy: cfg.ae_target_accuracy,
        seed: derive_seed(cfg.seed, "autoencoder"),
    };
    let (ae, history) = pretrain_dae(vocab, ae_cfg, &train_ids, &valid_ids, dae)?;
    ae.save(&out.join("autoencoder.bin"))?;
    write_csv(&out.join("pretrain_log.csv"), &history)?;
    let acc = ae.reconstruction_accuracy(&valid_ids)?;
    println!("validation reconstruction accuracy {acc:.4}");
    println!(
        "autoencoder {} ({} epochs, {:.1} s)",
        ae.parameter_hash(),
        history.len(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn write_csv(path: &Path, rows: &[DaeEpoch]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(Error::from)?;
    for r in rows {
        w.serialize(r).map_err(Error::from)?;
    }
    w.flush()
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

fn classifier_config(cfg: &RunConfig, component: &str) -> ClassifierConfig {
    ClassifierConfig {
        hidden: cfg.clf_hidden,
        lr: cfg.clf_lr,
        epochs: cfg.clf_epochs,
        batch_size: cfg.clf_batch_size,
        noise_std: cfg.clf_noise_std,
        dropout: cfg.clf_dropout,
        heldout: cfg.clf_heldout,
        seed: derive_seed(cfg.seed, component),
    }
}

fn train_classifier(cfg: &RunConfig, out: &Path, judge: bool) -> Result<()> {
    let ae = load_autoencoder(cfg)?;
    let labeled = LabeledCorpus::load_tsv(&cfg.path("labeled", &cfg.labeled)?)?;
    if judge {
        let j = Judge::train(ae, &labeled, &classifier_config(cfg, "judge"))?;
        j.save(&out.join("judge.bin"))?;
        println!("judge held-out accuracy {}", fmt_opt(j.heldout_accuracy()));
    } else {
        let clf = train_style_classifier(&ae, &labeled, &classifier_config(cfg, "classifier"))?;
        Container::new()
            .with(clf.to_section())
            .save(&out.join("classifier.bin"))?;
        println!("classifier held-out accuracy {}", fmt_opt(clf.heldout_accuracy));
    }
    Ok(())
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"))
}

/// Corpora of one mapping run, loaded once per process.
enum Data {
    Supervised {
        train: ParallelCorpus,
        valid: ParallelCorpus,
    },
    Unsupervised {
        train: Vec<String>,
        pool: Vec<String>,
        valid: Vec<String>,
        classifier: StyleClassifier,
    },
}

impl Data {
    fn load(cfg: &RunConfig, ae: &Autoencoder) -> Result<Self> {
        match cfg.mode {
            Mode::Supervised => {
                let train = ParallelCorpus::load(
                    &cfg.path("train_source", &cfg.train_source)?,
                    &cfg.path("train_target", &cfg.train_target)?,
                )?;
                let valid = match (&cfg.valid_source, &cfg.valid_target) {
                    (Some(s), Some(t)) => ParallelCorpus::load(s, t)?,
                    _ => train.clone(),
                };
                Ok(Data::Supervised { train, valid })
            }
            Mode::Unsupervised => {
                if cfg.classifier.is_none() {
                    return Err(CliError::Usage(
                        "unsupervised training requires a style classifier checkpoint: set classifier=PATH".into(),
                    ));
                }
                let classifier = load_classifier(cfg, ae)?;
                let train = read_lines(&cfg.path("train_text", &cfg.train_text)?)?;
                let pool = read_lines(&cfg.path("pool_text", &cfg.pool_text)?)?;
                let valid = match &cfg.valid_text {
                    Some(p) => read_lines(p)?,
                    None => train.clone(),
                };
                Ok(Data::Unsupervised {
                    train,
                    pool,
                    valid,
                    classifier,
                })
            }
        }
    }

    fn task(&self) -> Task<'_> {
        match self {
            Data::Supervised { train, valid } => Task::Supervised { train, valid },
            Data::Unsupervised {
                train,
                pool,
                valid,
                classifier,
            } => Task::Unsupervised {
                train,
                pool,
                valid,
                classifier,
            },
        }
    }

    fn classifier(&self) -> Option<&StyleClassifier> {
        match self {
            Data::Unsupervised { classifier, .. } => Some(classifier),
            Data::Supervised { .. } => None,
        }
    }
}

struct Trained {
    mapping: Mapping,
    discriminator: Option<Discriminator>,
}

/// Supervised runs keep the best-validation mapping, unsupervised runs the
/// last one.
fn fit_mapping(cfg: &RunConfig, ae: &Autoencoder, data: &Data, log_path: Option<&Path>) -> Result<Trained> {
    if cfg.mapping == MappingKind::MeanOffset {
        let mapping = match data {
            Data::Supervised { train, .. } => fit_mean_offsets(ae, &train.sources, &train.targets, cfg.alpha)?,
            Data::Unsupervised { train, pool, .. } => fit_mean_offsets(ae, train, pool, cfg.alpha)?,
        };
        return Ok(Trained {
            mapping,
            discriminator: None,
        });
    }
    let mapping_cfg = MappingConfig {
        layers: cfg.layers,
        ..MappingConfig::new(cfg.mapping, cfg.dim)
    };
    let mapping = Mapping::init(mapping_cfg, &mut rng(cfg.seed, "mapping"))?;
    let train_cfg = Emb2EmbConfig {
        weights: LossWeights::new(cfg.lambda_adv, cfg.lambda_sty)?,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        discriminator: DiscriminatorConfig {
            hidden: cfg.disc_hidden,
            hidden_layers: cfg.disc_layers,
            lr: cfg.disc_lr,
        },
        seed: derive_seed(cfg.seed, "training"),
    };
    let outcome = train_emb2emb(ae, mapping, data.task(), &train_cfg)?;
    if let Some(p) = log_path {
        write_epoch_log(p, &outcome.log)?;
    }
    info!(
        "task loss {:.5} -> {:.5}; best validation metric {:.4} at epoch {:?}",
        outcome.initial_task_loss, outcome.final_task_loss, outcome.best_metric, outcome.best_epoch
    );
    let mapping = match cfg.mode {
        Mode::Supervised => outcome.mapping,
        Mode::Unsupervised => outcome.last,
    };
    Ok(Trained {
        mapping,
        discriminator: (cfg.lambda_adv > 0.0).then_some(outcome.discriminator),
    })
}

fn save_mapping(path: &Path, t: &Trained, ae: &Autoencoder) -> Result<()> {
    let provenance = json!({
        "autoencoder": ae.parameter_hash(),
        "vocab": vocab_hash(&ae.vocab),
        "dim": ae.dim(),
    });
    let mut c = Container::new()
        .with(t.mapping.to_section())
        .with(Section::new("provenance", provenance));
    if let Some(d) = &t.discriminator {
        c = c.with(d.to_section());
    }
    Ok(c.save(path)?)
}

fn load_mapping(path: &Path, ae: &Autoencoder) -> Result<(Mapping, Option<Discriminator>)> {
    let c = Container::load(path)?;
    let mapping = Mapping::from_section(c.section("mapping")?)?;
    if mapping.dim() != ae.dim() {
        return Err(Error::Mismatch(format!(
            "mapping has d={} but the autoencoder d={}",
            mapping.dim(),
            ae.dim()
        ))
        .into());
    }
    if c.has_section("provenance") {
        let p = c.section("provenance")?;
        let vocab: String = p.meta_field("vocab")?;
        if vocab != vocab_hash(&ae.vocab) {
            return Err(Error::Mismatch(format!(
                "{} was trained against a different vocabulary than the autoencoder",
                path.display()
            ))
            .into());
        }
        let hash: String = p.meta_field("autoencoder")?;
        if hash != ae.parameter_hash() {
            warn!("{} was trained against different autoencoder weights", path.display());
        }
    }
    let disc = if c.has_section("discriminator") {
        Some(Discriminator::from_section(c.section("discriminator")?)?)
    } else {
        None
    };
    Ok((mapping, disc))
}

fn train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let start = Instant::now();
    let ae = load_autoencoder(cfg)?;
    let data = Data::load(cfg, &ae)?;
    let trained = fit_mapping(cfg, &ae, &data, Some(&out.join("epoch_log.csv")))?;
    save_mapping(&out.join("mapping.bin"), &trained, &ae)?;
    println!(
        "mapping {} {} ({:.1} s)",
        cfg.mapping,
        parameter_hash(&trained.mapping),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn fgim_config(cfg: &RunConfig, disc: Option<&Discriminator>) -> Result<FgimConfig> {
    let mut f = FgimConfig::new(cfg.fgim_threshold, cfg.fgim_variant)?;
    f.lambda_sty = cfg.lambda_sty;
    if disc.is_some() {
        f.lambda_adv = cfg.lambda_adv;
    }
    Ok(f)
}

/// Lines of `path` including blank ones, which map to blank outputs.
fn read_all_lines(path: &Path) -> Result<Vec<String>> {
    let s = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(s.lines().map(str::to_string).collect())
}

fn transfer(
    cfg: &RunConfig,
    ae: &Autoencoder,
    mapping: &Mapping,
    clf: Option<&StyleClassifier>,
    disc: Option<&Discriminator>,
    inputs: &[String],
) -> Result<Vec<String>> {
    let mut p = Pipeline::new(ae, mapping)?;
    if cfg.fgim {
        let clf = clf.ok_or_else(|| CliError::Usage("FGIM requires a style classifier: set classifier=PATH".into()))?;
        p = p.with_fgim(Fgim::new(fgim_config(cfg, disc)?, clf, disc)?);
    }
    let t = p.transfer(inputs)?;
    if let Some(r) = &t.refined {
        let reached = r.iter().filter(|x| x.reached).count();
        let untouched = r.iter().filter(|x| x.steps == 0).count();
        info!(
            "FGIM: {reached}/{} above threshold, {untouched} needed no steps",
            r.len()
        );
    }
    Ok(t.outputs)
}

fn infer(cfg: &RunConfig, out: &Path, input: &Path, mapping_path: &Path) -> Result<()> {
    let inputs = read_all_lines(input)?;
    let ae = Autoencoder::load(&cfg.path("autoencoder", &cfg.autoencoder)?)?;
    let (mapping, disc) = load_mapping(mapping_path, &ae)?;
    let outputs = if inputs.is_empty() {
        Vec::new()
    } else {
        let clf = if cfg.fgim {
            Some(load_classifier(cfg, &ae)?)
        } else {
            None
        };
        transfer(cfg, &ae, &mapping, clf.as_ref(), disc.as_ref(), &inputs)?
    };
    write_lines(&out.join("outputs.txt"), &outputs)?;
    let dump: String = inputs
        .iter()
        .zip(&outputs)
        .map(|(i, o)| format!("{i}\t{o}\n"))
        .collect();
    write_file(&out.join("dump.tsv"), &dump)?;
    println!("{} lines -> {}", outputs.len(), out.join("outputs.txt").display());
    Ok(())
}

fn eval(cfg: &RunConfig, out: &Path, hyp: &Path, ref_paths: &[PathBuf], source: Option<&Path>) -> Result<()> {
    let hyps = read_all_lines(hyp)?;
    let ref_files: Vec<Vec<String>> = ref_paths.iter().map(|p| read_all_lines(p)).collect::<Result<_>>()?;
    for (p, r) in ref_paths.iter().zip(&ref_files) {
        if r.len() != hyps.len() {
            return Err(CliError::Usage(format!(
                "{} has {} lines but {} has {}",
                p.display(),
                r.len(),
                hyp.display(),
                hyps.len()
            )));
        }
    }
    let refs: Vec<Vec<&str>> = (0..hyps.len())
        .map(|i| ref_files.iter().map(|r| r[i].as_str()).collect())
        .collect();
    let sources = source.map(read_all_lines).transpose()?;
    if let Some(s) = &sources {
        if s.len() != hyps.len() {
            return Err(CliError::Usage(format!(
                "source has {} lines but hypotheses {}",
                s.len(),
                hyps.len()
            )));
        }
    }
    let mut reports = Vec::new();
    if !ref_files.is_empty() {
        reports.push(EvalReport::bleu(&hyps, &refs)?);
    }
    if let Some(s) = &sources {
        reports.push(EvalReport::self_bleu(s, &hyps)?);
        if !ref_files.is_empty() {
            reports.push(EvalReport::sari(s, &hyps, &refs)?);
        }
    }
    if let Some(j) = &cfg.judge {
        let judge = Judge::load(j)?;
        reports.push(EvalReport::accuracy(&hyps, cfg.target_label, &judge)?.with("target_label", cfg.target_label));
    }
    if reports.is_empty() {
        return Err(CliError::Usage(
            "nothing to evaluate: pass --reference, --source or set judge=PATH".into(),
        ));
    }
    let reports: Vec<EvalReport> = reports
        .into_iter()
        .map(|r| r.with("hypotheses", hyp.display()).with("sentences", hyps.len()))
        .collect();
    for r in &reports {
        println!("{} {:.6}", r.metric, r.value);
    }
    let json = serde_json::to_string_pretty(&reports).map_err(Error::from)?;
    write_file(&out.join("eval.json"), &json)
}

fn sweep(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ae = load_autoencoder(cfg)?;
    let data = Data::load(cfg, &ae)?;
    let grid = match cfg.sweep_param.as_str() {
        "lambda_adv" => cfg.lambda_adv_grid.clone(),
        _ => cfg.lambda_sty_grid.clone(),
    };
    let judge = match (&cfg.mode, &cfg.judge) {
        (Mode::Unsupervised, None) => {
            return Err(CliError::Usage(
                "an unsupervised sweep needs an evaluation judge: set judge=PATH".into(),
            ))
        }
        (_, Some(p)) => Some(Judge::load(p)?),
        _ => None,
    };
    let sources = read_lines(&cfg.path("test_source", &cfg.test_source)?)?;
    let targets = match (&cfg.mode, &cfg.test_target) {
        (Mode::Supervised, None) => return Err(CliError::Usage("missing required path: set test_target=PATH".into())),
        (_, Some(p)) => Some(read_lines(p)?),
        _ => None,
    };
    let refs: Option<Vec<Vec<&str>>> = targets.as_ref().map(|t| t.iter().map(|x| vec![x.as_str()]).collect());
    let dir = out.join("mappings");
    fs::create_dir_all(&dir).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))?;
    let points = tradeoff_sweep(&cfg.sweep_param, &grid, |value| {
        let mut c = cfg.clone();
        match cfg.sweep_param.as_str() {
            "lambda_adv" => c.lambda_adv = value,
            _ => c.lambda_sty = value,
        }
        let tag = format!("{}_{value}", cfg.sweep_param);
        let trained = fit_mapping(&c, &ae, &data, Some(&dir.join(format!("{tag}.csv")))).map_err(into_core)?;
        save_mapping(&dir.join(format!("{tag}.bin")), &trained, &ae).map_err(into_core)?;
        let outputs = transfer(
            &c,
            &ae,
            &trained.mapping,
            data.classifier(),
            trained.discriminator.as_ref(),
            &sources,
        )
        .map_err(into_core)?;
        write_lines(&dir.join(format!("{tag}.txt")), &outputs)?;
        let mut m = PointMetrics {
            self_bleu: Some(emb2emb::eval::self_bleu(&sources, &outputs)?),
            checkpoint_hash: parameter_hash(&trained.mapping),
            ..Default::default()
        };
        if let Some(r) = &refs {
            m.bleu = Some(emb2emb::eval::bleu(&outputs, r)?);
            m.sari = Some(emb2emb::eval::sari(&sources, &outputs, r)?);
        }
        if let Some(j) = &judge {
            m.accuracy = Some(emb2emb::eval::transfer_accuracy(&outputs, c.target_label, j)?);
        }
        Ok(m)
    })?;
    write_sweep_csv(&out.join("sweep.csv"), &points)?;
    for p in &points {
        println!(
            "{}={} accuracy={} self_bleu={} bleu={}",
            p.sweep_param,
            p.value,
            fmt_opt(p.accuracy),
            fmt_opt(p.self_bleu),
            fmt_opt(p.bleu)
        );
    }
    println!("selection score {:.4}", selection_score(&points));
    Ok(())
}
