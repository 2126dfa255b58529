use std::cell::RefCell;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use log::info;
use serde::Serialize;
use serde_json::json;
use tacgraph::graph::Representation;
use tacgraph::nn::GradCheckOptions;
use tacgraph::par::{self, Exec};
use tacgraph::pretrain::{
    self, checks, evaluate, load_checkpoint, save_checkpoint, Checkpoint, PretextTasks, PreparedData, TrainConfig,
};
use tacgraph::synth::{generate_dataset, Dataset};
use tacgraph::Hand;

use crate::defaults::Defaults;
use crate::{CommonArgs, EmbedArgs, EvalArgs, GenDataArgs, GradCheckArgs, PretrainArgs, ShowLayoutArgs};

/// Common settings after applying defaults.
#[derive(Debug, Clone, Serialize)]
struct Resolved {
    hand: Option<PathBuf>,
    hand_hash: String,
    out: PathBuf,
    seed: u64,
    workers: usize,
}

impl Resolved {
    fn new(common: &CommonArgs, defaults: &Defaults) -> Result<(Self, Hand)> {
        if let Some(p) = &common.hand {
            ensure!(p.is_file(), "hand description {} does not exist", p.display());
        }
        let hand = match &common.hand {
            Some(p) => Hand::load(p).with_context(|| format!("loading hand {}", p.display()))?,
            None => Hand::default_hand(),
        };
        let out = common.out.clone().unwrap_or_else(|| defaults.out.clone());
        fs::create_dir_all(&out).with_context(|| format!("creating output directory {}", out.display()))?;
        let r = Resolved {
            hand: common.hand.clone(),
            hand_hash: hand.hash().to_string(),
            out,
            seed: common.seed.unwrap_or(defaults.seed),
            workers: common.workers.unwrap_or(defaults.workers),
        };
        Ok((r, hand))
    }

    fn exec(&self) -> Exec {
        #[cfg(feature = "parallel")]
        if self.workers > 1 {
            // a pool may already exist when called twice in one process
            let _ = rayon::ThreadPoolBuilder::new().num_threads(self.workers).build_global();
        }
        Exec::from_workers(self.workers)
    }

    /// Flags that reproduce these settings.
    fn argv(&self, command: &str) -> Vec<String> {
        let mut v = vec![
            command.to_string(),
            "--out".into(),
            self.out.display().to_string(),
            "--seed".into(),
            self.seed.to_string(),
            "--workers".into(),
            self.workers.to_string(),
        ];
        if let Some(h) = &self.hand {
            v.extend(["--hand".into(), h.display().to_string()]);
        }
        v
    }

    fn write_run(&self, argv: Vec<String>, details: serde_json::Value) -> Result<()> {
        let record = json!({
            "command": argv[0],
            "tacgraph_version": env!("CARGO_PKG_VERSION"),
            "argv": argv,
            "common": self,
            "resolved": details,
        });
        write_json(&self.out.join("run.json"), &record)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    ensure!(path.is_file(), "{what} {} does not exist", path.display());
    Ok(())
}

fn push_flag(argv: &mut Vec<String>, flag: &str, value: impl ToString) {
    argv.push(flag.to_string());
    argv.push(value.to_string());
}

pub fn gen_data(a: GenDataArgs) -> Result<()> {
    let defaults = Defaults::shipped()?;
    let (r, hand) = Resolved::new(&a.common, &defaults)?;
    let mut spec = defaults.generate.clone();
    spec.num_episodes = a.episodes.unwrap_or(spec.num_episodes);
    spec.frames_per_episode = a.frames.unwrap_or(spec.frames_per_episode);
    let path = a.dataset.clone().unwrap_or_else(|| r.out.join("dataset.jsonl"));

    let ds = generate_dataset(&spec, &hand, r.seed, r.exec())?;
    ds.save(&hand, &path)?;
    let summary = ds.summary();
    println!("wrote {}", path.display());
    println!("episodes           {}", summary.episodes);
    println!("frames             {}", summary.frames);
    println!("contact fraction   {:.4}", summary.contact_fraction);
    println!("mean |F| per taxel {:.6e} N", summary.mean_taxel_force);
    println!("mean |net force|   {:.6e} N", summary.mean_net_force);

    let mut argv = r.argv("gen-data");
    push_flag(&mut argv, "--dataset", path.display());
    push_flag(&mut argv, "--episodes", spec.num_episodes);
    push_flag(&mut argv, "--frames", spec.frames_per_episode);
    r.write_run(
        argv,
        json!({ "dataset": path, "generate": spec, "summary": summary }),
    )
}

fn resolve_train(a: &PretrainArgs, defaults: &Defaults, r: &Resolved, dataset: &Path) -> TrainConfig {
    let mut c = defaults.train.clone();
    c.seed = r.seed;
    c.epochs = a.epochs.unwrap_or(c.epochs);
    c.batch_size = a.batch.unwrap_or(c.batch_size);
    c.lr = a.lr.unwrap_or(c.lr);
    c.mask_ratio = a.mask_ratio.unwrap_or(c.mask_ratio);
    c.lambda = a.lambda.unwrap_or(c.lambda);
    c.hidden = a.hidden.unwrap_or(c.hidden);
    c.depth = a.depth.unwrap_or(c.depth);
    c.checkpoint_every = a.checkpoint_every.unwrap_or(c.checkpoint_every);
    if a.no_canonical {
        c.representation = Representation::Raw;
    }
    if a.local_only {
        c.tasks = PretextTasks::LocalOnly;
    } else if a.net_only {
        c.tasks = PretextTasks::NetOnly;
    }
    c.dataset = Some(dataset.to_path_buf());
    c
}

pub fn pretrain(a: PretrainArgs) -> Result<()> {
    let defaults = Defaults::shipped()?;
    let (r, hand) = Resolved::new(&a.common, &defaults)?;
    let dataset_path = a.dataset.clone().unwrap_or_else(|| r.out.join("dataset.jsonl"));
    require_file(&dataset_path, "dataset")?;
    let config = resolve_train(&a, &defaults, &r, &dataset_path);
    config.validate()?;
    info!(
        "representation: {}, tasks: {:?}, lambda {}",
        match config.representation {
            Representation::Canonical => "canonical",
            Representation::Raw => "raw",
        },
        config.tasks,
        config.lambda
    );

    let ds = Dataset::load(&hand, &dataset_path).with_context(|| format!("loading {}", dataset_path.display()))?;
    let exec = r.exec();
    let data = PreparedData::new(&ds, &hand, &config, exec)?;
    info!("{} frames, {} nodes per graph", data.len(), hand.num_taxels());

    let metrics_path = r.out.join("metrics.csv");
    let csv = RefCell::new(csv::Writer::from_path(&metrics_path).with_context(|| metrics_path.display().to_string())?);
    let csv_error = RefCell::new(None);
    let trainer = pretrain::train(
        &data,
        &config,
        exec,
        |m| {
            if let Err(e) = csv.borrow_mut().serialize(m) {
                csv_error.borrow_mut().get_or_insert(e);
            }
        },
        |t, em| {
            info!(
                "epoch {:>3}  loss {:.6e}  local {:.6e}  net {:.6e}",
                em.epoch, em.loss, em.loss_local, em.loss_net
            );
            csv.borrow_mut().flush().map_err(|e| tacgraph::Error::Io {
                path: metrics_path.clone(),
                source: e,
            })?;
            let every = t.config.checkpoint_every;
            if every > 0 && (em.epoch + 1) % every == 0 {
                let p = r.out.join(format!("checkpoint_epoch{:04}.json", em.epoch + 1));
                save_checkpoint(&Checkpoint::from_trainer(t, hand.hash()), p)?;
            }
            Ok(())
        },
    )?;
    if let Some(e) = csv_error.into_inner() {
        return Err(e).context("writing metrics");
    }
    csv.into_inner().flush()?;

    let ck_path = r.out.join("checkpoint.json");
    save_checkpoint(&Checkpoint::from_trainer(&trainer, hand.hash()), &ck_path)?;
    let last = trainer.history.last().expect("epochs >= 1");
    println!("wrote {} and {}", ck_path.display(), metrics_path.display());
    println!(
        "final epoch {}: loss {:.6e} (local {:.6e}, net {:.6e})",
        last.epoch, last.loss, last.loss_local, last.loss_net
    );

    let mut argv = r.argv("pretrain");
    push_flag(&mut argv, "--dataset", dataset_path.display());
    push_flag(&mut argv, "--epochs", config.epochs);
    push_flag(&mut argv, "--batch", config.batch_size);
    push_flag(&mut argv, "--lr", config.lr);
    push_flag(&mut argv, "--mask-ratio", config.mask_ratio);
    push_flag(&mut argv, "--lambda", config.lambda);
    push_flag(&mut argv, "--hidden", config.hidden);
    push_flag(&mut argv, "--depth", config.depth);
    push_flag(&mut argv, "--checkpoint-every", config.checkpoint_every);
    if config.representation == Representation::Raw {
        argv.push("--no-canonical".into());
    }
    match config.tasks {
        PretextTasks::LocalOnly => argv.push("--local-only".into()),
        PretextTasks::NetOnly => argv.push("--net-only".into()),
        PretextTasks::Both => {}
    }
    r.write_run(argv, json!({ "train": config, "checkpoint": ck_path, "metrics": metrics_path }))
}

fn load_model_inputs(
    r: &Resolved,
    hand: &Hand,
    checkpoint: &Option<PathBuf>,
    dataset: &Option<PathBuf>,
) -> Result<(PathBuf, Checkpoint, PathBuf, Dataset)> {
    let ck_path = checkpoint.clone().unwrap_or_else(|| r.out.join("checkpoint.json"));
    let ds_path = dataset.clone().unwrap_or_else(|| r.out.join("dataset.jsonl"));
    require_file(&ck_path, "checkpoint")?;
    require_file(&ds_path, "dataset")?;
    let ck = load_checkpoint(&ck_path).with_context(|| format!("loading {}", ck_path.display()))?;
    if ck.hand_hash != hand.hash() {
        bail!(
            "checkpoint was trained for hand {} but the configured hand is {}",
            ck.hand_hash,
            hand.hash()
        );
    }
    let ds = Dataset::load(hand, &ds_path).with_context(|| format!("loading {}", ds_path.display()))?;
    Ok((ck_path, ck, ds_path, ds))
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let defaults = Defaults::shipped()?;
    let (r, hand) = Resolved::new(&a.common, &defaults)?;
    let (ck_path, ck, ds_path, ds) = load_model_inputs(&r, &hand, &a.checkpoint, &a.dataset)?;
    let exec = r.exec();
    let data = PreparedData::new(&ds, &hand, &ck.config, exec)?;
    let model = ck.model()?;
    let report = evaluate(&model, &data, ck.config.mask_ratio, ck.config.eval_seed, exec)?;

    println!(
        "frames {}  mask ratio {}  eval seed {}",
        report.frames, report.mask_ratio, report.eval_seed
    );
    println!("{:<10} {:>18} {:>18}", "predictor", "masked-force MSE", "net-force MSE");
    println!("{:<10} {:>18.6e} {:>18.6e}", "model", report.masked_force_mse, report.net_force_mse);
    for b in &report.baselines {
        println!("{:<10} {:>18.6e} {:>18.6e}", b.name, b.masked_force_mse, b.net_force_mse);
    }
    let report_path = r.out.join("eval.json");
    write_json(&report_path, &report)?;

    let mut argv = r.argv("eval");
    push_flag(&mut argv, "--checkpoint", ck_path.display());
    push_flag(&mut argv, "--dataset", ds_path.display());
    r.write_run(argv, json!({ "checkpoint": ck_path, "dataset": ds_path, "report": report_path }))
}

pub fn embed(a: EmbedArgs) -> Result<()> {
    let defaults = Defaults::shipped()?;
    let (r, hand) = Resolved::new(&a.common, &defaults)?;
    let (ck_path, ck, ds_path, ds) = load_model_inputs(&r, &hand, &a.checkpoint, &a.dataset)?;
    let model = ck.model()?;
    let frames: Vec<_> = ds.frames().map(|lf| lf.frame).collect();
    let n = a.limit.map_or(frames.len(), |l| l.min(frames.len()));
    let rows = par::map_indexed(r.exec(), n, |i| {
        pretrain::embed(&model, frames[i], &hand, ck.config.representation)
    })
    .into_iter()
    .collect::<tacgraph::Result<Vec<_>>>()?;

    let path = r.out.join("embeddings.jsonl");
    let mut w = std::io::BufWriter::new(fs::File::create(&path).with_context(|| path.display().to_string())?);
    for row in &rows {
        serde_json::to_writer(&mut w, row)?;
        writeln!(w)?;
    }
    w.flush()?;
    println!("wrote {} embeddings of width {} to {}", rows.len(), model.hidden(), path.display());

    let mut argv = r.argv("embed");
    push_flag(&mut argv, "--checkpoint", ck_path.display());
    push_flag(&mut argv, "--dataset", ds_path.display());
    if let Some(l) = a.limit {
        push_flag(&mut argv, "--limit", l);
    }
    r.write_run(argv, json!({ "checkpoint": ck_path, "dataset": ds_path, "embeddings": path }))
}

pub fn grad_check(a: GradCheckArgs) -> Result<()> {
    let defaults = Defaults::shipped()?;
    let (r, _) = Resolved::new(&a.common, &defaults)?;
    let g = &defaults.grad_check;
    let seeds = a.seeds.unwrap_or(g.seeds);
    let threshold = a.threshold.unwrap_or(g.threshold);
    let eps = a.eps.unwrap_or(g.eps);
    let opts = GradCheckOptions {
        eps,
        ..GradCheckOptions::default()
    };
    let outcomes = checks::run_suite(r.seed..r.seed + seeds, &opts)?;

    println!("{:<14} {:>6} {:>14}  status", "check", "seeds", "max rel err");
    let mut failed = Vec::new();
    for name in checks::CHECK_NAMES {
        let worst = outcomes
            .iter()
            .filter(|o| o.name == name)
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
            .expect("every check ran");
        let ok = worst.max_rel_error < threshold;
        println!(
            "{:<14} {:>6} {:>14.3e}  {}",
            name,
            seeds,
            worst.max_rel_error,
            if ok { "pass" } else { "FAIL" }
        );
        if !ok {
            failed.push(format!("{name} (seed {}: {})", worst.seed, worst.report));
        }
    }
    write_json(
        &r.out.join("grad_check.json"),
        &json!({ "threshold": threshold, "eps": eps, "outcomes": outcomes }),
    )?;
    let mut argv = r.argv("grad-check");
    push_flag(&mut argv, "--seeds", seeds);
    push_flag(&mut argv, "--threshold", threshold);
    push_flag(&mut argv, "--eps", eps);
    r.write_run(argv, json!({ "seeds": seeds, "threshold": threshold, "eps": eps }))?;
    if !failed.is_empty() {
        bail!("gradient check above {threshold:e}: {}", failed.join("; "));
    }
    Ok(())
}

pub fn show_layout(a: ShowLayoutArgs) -> Result<()> {
    let defaults = Defaults::shipped()?;
    let (r, hand) = Resolved::new(&a.common, &defaults)?;
    for s in 0..hand.num_sensors() {
        let layout = hand.sensor_layout(s);
        let canon = hand.sensor_canonical(s);
        println!(
            "sensor {}  layout {}  type {}  {}x{}",
            hand.sensor_id(s),
            layout.name,
            serde_json::to_value(layout.sensor_type)?.as_str().unwrap_or("?"),
            layout.rows,
            layout.cols
        );
        println!(
            "{:>4} {:>4} {:>24} {:>24} {:>24} {:>24} {:>24} {:>24}",
            "row", "col", "raw_x", "raw_y", "raw_z", "canon_x", "canon_y", "canon_z"
        );
        for (k, (taxel, c)) in layout.taxels.iter().zip(&canon.coords).enumerate() {
            println!(
                "{:>4} {:>4} {:>24} {:>24} {:>24} {:>24} {:>24} {:>24}",
                k / layout.cols,
                k % layout.cols,
                taxel.t[0],
                taxel.t[1],
                taxel.t[2],
                c[0],
                c[1],
                c[2]
            );
        }
        println!();
    }
    r.write_run(r.argv("show-layout"), json!({ "sensors": hand.num_sensors() }))
}
