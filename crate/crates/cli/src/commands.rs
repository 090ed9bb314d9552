//! Command implementations.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;
use xlda_core::io::{load_head, save_head, HEAD_MAGIC, MODEL_MAGIC};
use xlda_core::synth::{write_synthetic, SyntheticSpec};
use xlda_core::{
    build_index, fc_to_lda, generate_synthetic, ingest_stream, lda_to_fc, load_checkpoint, read_embeddings,
    save_checkpoint, train_fc, AnnConfig, Convergence, EmbeddingReader, FcConfig, LdaModel, LinearHead,
    TrainMode,
};

use crate::ablate::{format_table, run_ablation, AblationOptions};
use crate::bench::{self, InferBenchConfig, TrainBenchConfig};
use crate::report::emit;
use crate::{
    AblateArgs, BenchInferArgs, BenchTrainArgs, ConvertArgs, EvalArgs, FcBaselineArgs, GenSyntheticArgs, TrainArgs,
};

fn out<T: Serialize>(value: &T) -> Result<()> {
    emit(value).context("writing report")
}

pub fn train(a: &TrainArgs) -> Result<()> {
    if a.batch_size == 0 {
        bail!(xlda_core::Error::InvalidConfig("batch size must be positive".into()));
    }
    let reader = EmbeddingReader::open(&a.embeddings)
        .with_context(|| format!("opening {}", a.embeddings.display()))?;
    let header = *reader.header();
    let (d, n) = (header.dim as usize, header.num_classes as usize);
    let mut model = match &a.model {
        Some(path) => {
            let mut m = load_checkpoint(path)?.model;
            m.set_covariance_mode(a.cov);
            m
        }
        None => LdaModel::init_empty(d, n, a.cov, TrainMode::TrainBoth)?,
    };
    let timing = ingest_stream(&mut model, reader.batches(a.batch_size), a.semantics)?;
    save_checkpoint(&a.out, &model, a.beta)?;
    out(&json!({
        "record": "train",
        "embeddings": a.embeddings,
        "out": a.out,
        "classes": n,
        "dim": d,
        "batch_size": a.batch_size,
        "cov": a.cov,
        "semantics": a.semantics,
        "beta": a.beta,
        "samples": timing.samples,
        "batches": timing.batch_nanos.len(),
        "total_nanos": timing.total_nanos,
        "median_batch_nanos": timing.median_batch_nanos(),
    }))
}

fn read_magic(path: &Path) -> Result<[u8; 4]> {
    let mut magic = [0u8; 4];
    File::open(path)
        .and_then(|mut f| f.read_exact(&mut magic))
        .with_context(|| format!("reading {}", path.display()))?;
    Ok(magic)
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let data = read_embeddings(&a.embeddings)?;
    let x = data.widened();
    let magic = read_magic(&a.model)?;
    let active = a.active || a.k.is_some();
    let (kind, accuracy, beta, k) = if magic == HEAD_MAGIC {
        if active {
            bail!(xlda_core::Error::InvalidConfig("shortlisted scoring needs an LDA checkpoint".into()));
        }
        let head = load_head(&a.model)?;
        check_shape(head.dim(), head.num_classes(), &data)?;
        ("head", head.accuracy(x.view(), &data.labels), None, None)
    } else {
        let ckpt = load_checkpoint(&a.model)?;
        let model = ckpt.model;
        check_shape(model.dim(), model.num_classes(), &data)?;
        let beta = a.beta.unwrap_or(ckpt.beta);
        let translated = model.translate(beta)?;
        if active {
            let mut config = AnnConfig::for_classes(model.num_classes());
            config.k = a.k.unwrap_or(config.k).min(model.live_count().max(1));
            let index = build_index(&model, config, a.seed)?;
            let mut correct = 0usize;
            for (row, &y) in x.rows().into_iter().zip(&data.labels) {
                let p = index.query_active(&translated, row.as_slice().expect("standard layout"), None)?;
                correct += (p.class == y as usize) as usize;
            }
            let acc = correct as f64 / data.len().max(1) as f64;
            ("lda", acc, Some(beta), Some(config.k))
        } else {
            ("lda", translated.accuracy(x.view(), &data.labels)?, Some(beta), None)
        }
    };
    debug_assert!(magic == HEAD_MAGIC || magic == MODEL_MAGIC);
    out(&json!({
        "record": "eval",
        "embeddings": a.embeddings,
        "model": a.model,
        "kind": kind,
        "beta": beta,
        "k": k,
        "samples": data.len(),
        "accuracy": accuracy,
    }))
}

fn check_shape(dim: usize, classes: usize, data: &xlda_core::EmbeddingData) -> Result<()> {
    if data.dim() != dim {
        bail!(xlda_core::Error::DimensionMismatch {
            expected: dim,
            got: data.dim()
        });
    }
    if data.num_classes as usize > classes {
        bail!(xlda_core::Error::LabelOutOfRange {
            label: data.num_classes as u64 - 1,
            num_classes: classes
        });
    }
    Ok(())
}

pub fn convert(a: &ConvertArgs) -> Result<()> {
    match (&a.head, &a.model) {
        (Some(head), None) => {
            let head = load_head(head)?;
            let model = fc_to_lda(&head, a.sigma_mode)?;
            save_checkpoint(&a.out, &model, a.beta)?;
            out(&json!({
                "record": "convert",
                "direction": "head_to_lda",
                "sigma_mode": a.sigma_mode,
                "beta": a.beta,
                "classes": model.num_classes(),
                "dim": model.dim(),
                "out": a.out,
            }))
        }
        (None, Some(model)) => {
            let ckpt = load_checkpoint(model)?;
            let head = lda_to_fc(&ckpt.model, a.beta)?;
            save_head(&a.out, &head)?;
            out(&json!({
                "record": "convert",
                "direction": "lda_to_head",
                "beta": a.beta,
                "classes": head.num_classes(),
                "dim": head.dim(),
                "out": a.out,
            }))
        }
        _ => unreachable!("clap enforces exactly one input"),
    }
}

pub fn ablate(a: &AblateArgs) -> Result<()> {
    let train = read_embeddings(&a.embeddings)?;
    let test = read_embeddings(&a.test)?;
    let head: LinearHead = match &a.head {
        Some(path) => load_head(path)?,
        None => {
            let cfg = FcConfig {
                epochs: a.fc_epochs,
                batch_size: a.batch_size,
                learning_rate: a.lr,
                seed: a.seed,
                ..FcConfig::default()
            };
            train_fc(&train, None, &cfg)?.head
        }
    };
    check_shape(head.dim(), head.num_classes(), &train)?;
    check_shape(head.dim(), head.num_classes(), &test)?;
    let init = fc_to_lda(&head, a.sigma_mode)?;
    let options = AblationOptions {
        schedule: a.schedule,
        batch_size: a.batch_size,
        beta: a.beta,
        semantics: a.semantics,
    };
    let records = run_ablation(&init, &train, &test, &options)?;
    for r in &records {
        out(r)?;
    }
    eprint!("{}", format_table(&records));
    Ok(())
}

pub fn fc_baseline(a: &FcBaselineArgs) -> Result<()> {
    let train = read_embeddings(&a.embeddings)?;
    let val = a.val.as_ref().map(read_embeddings).transpose()?;
    let config = FcConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        momentum: a.momentum,
        schedule: a.schedule,
        seed: a.seed,
        convergence: a.converge.then(Convergence::default),
    };
    let run = train_fc(&train, val.as_ref(), &config)?;
    for e in &run.epochs {
        out(&json!({
            "record": "fc_epoch",
            "epoch": e.epoch,
            "loss": e.loss,
            "val_accuracy": e.val_accuracy,
            "nanos": e.nanos,
        }))?;
    }
    if let Some(path) = &a.out {
        save_head(path, &run.head)?;
    }
    let train_accuracy = run.head.accuracy(train.widened().view(), &train.labels);
    out(&json!({
        "record": "fc_baseline",
        "embeddings": a.embeddings,
        "config": config,
        "epochs_run": run.epochs_run(),
        "converged_at": run.converged_at,
        "train_nanos": run.train_nanos,
        "train_accuracy": train_accuracy,
        "val_accuracy": run.epochs.last().and_then(|e| e.val_accuracy),
        "out": a.out,
    }))
}

pub fn bench_train(a: &BenchTrainArgs) -> Result<()> {
    for &classes in &a.classes {
        let config = TrainBenchConfig {
            samples: a.samples,
            test_samples: a.test_samples,
            batch_size: a.batch_size,
            mean_scale: a.mean_scale,
            fc_learning_rate: a.lr,
            converge: a.converge,
            seed: a.seed,
            ..TrainBenchConfig::new(classes, a.dim)
        };
        out(&bench::bench_train(&config)?)?;
    }
    Ok(())
}

pub fn bench_infer(a: &BenchInferArgs) -> Result<()> {
    for &classes in &a.classes {
        let defaults = InferBenchConfig::new(classes, a.dim);
        let config = InferBenchConfig {
            queries: a.queries,
            k: a.k,
            tables: a.tables.unwrap_or(defaults.tables),
            bits: a.bits.unwrap_or(defaults.bits),
            probes: a.probes.unwrap_or(defaults.probes),
            mean_scale: a.mean_scale,
            noise: a.noise,
            seed: a.seed,
            ..defaults
        };
        let (report, run) = bench::bench_infer(&config)?;
        if a.records {
            for r in &run.records {
                out(&json!({"record": "query", "classes": classes, "query": r.query, "path": r.path, "nanos": r.nanos, "argmax": r.argmax}))?;
            }
        }
        out(&report)?;
    }
    Ok(())
}

pub fn gen_synthetic(a: &GenSyntheticArgs) -> Result<()> {
    let spec = SyntheticSpec {
        num_classes: a.classes,
        dim: a.dim,
        train_per_class: a.train_per_class,
        test_per_class: a.test_per_class,
        mean_scale: a.mean_scale,
        covariance: a.covariance,
        correlated_means: a.correlated_means,
        bayes_samples: a.bayes_samples,
        seed: a.seed,
    };
    let data = generate_synthetic(&spec)?;
    let paths = write_synthetic(&a.out, &data)?;
    out(&json!({
        "record": "gen_synthetic",
        "spec": spec,
        "bayes_accuracy": data.bayes_accuracy,
        "train": paths.train,
        "test": paths.test,
        "manifest": paths.manifest,
    }))
}
