use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use sdpf_core::data::{
    load_manifest, load_pgm, make_dataset, save_pgm, write_dataset, Bucket, Dataset, DatasetSpec, GrayImage,
    ImageSource, Sample,
};
use sdpf_core::layers::{max_span_residual, Layer};
use sdpf_core::net::{
    build_network, evaluate, load_checkpoint, save_checkpoint, switch_train, train_with_hook, ArchConfig,
    EpochRecord, Evaluation, Network, TrainConfig,
};
use sdpf_core::sdpf::{assemble_dictionary, export_dictionary, import_dictionary, verify_dictionary, Dictionary};
use sdpf_core::tensor::AdamConfig;

use crate::run::{invalid, sig6, write_manifest, RunConfig};
use crate::{DataArgs, EvalArgs, FilterDumpArgs, InpaintArgs, SplitArg, SynthArgs, TrainArgs};

/// Largest span residual accepted for a constrained layer.
const SPAN_TOL: f64 = 1e-10;
/// Samples generated when neither `--data` nor `--num-samples` is given.
const DEFAULT_SYNTHETIC: usize = 50;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn dict_build(out: &Path) -> Result<()> {
    let t0 = Instant::now();
    let d = assemble_dictionary()?;
    let report = verify_dictionary(&d);
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    export_dictionary(&d, out).with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {} filters to {}", d.filters.len(), out.display());
    println!("lambda* {}", sig6(d.lambda_star));
    print!("{report}");
    println!("elapsed {} s", sig6(t0.elapsed().as_secs_f64()));
    if !report.passed() {
        bail!("{} verification checks failed", report.failures().len());
    }
    Ok(())
}

pub fn dict_verify(path: &Path) -> Result<()> {
    let d = import_dictionary(path).with_context(|| format!("reading {}", path.display()))?;
    let report = verify_dictionary(&d);
    print!("{report}");
    if !report.passed() {
        bail!("{} of {} checks failed", report.failures().len(), report.checks.len());
    }
    println!("all {} checks passed", report.checks.len());
    Ok(())
}

fn filter_image(kernel: &[f64], side: usize, scale: usize) -> GrayImage {
    GrayImage::new(side, side, kernel.to_vec()).min_max_normalized().upscaled(scale)
}

fn tag_slug(tag: &str) -> String {
    tag.replace('(', "_").replace(')', "")
}

pub fn dict_export_images(path: &Path, out_dir: &Path, scale: usize) -> Result<()> {
    if scale == 0 {
        return Err(invalid("--scale must be at least 1"));
    }
    let d = import_dictionary(path).with_context(|| format!("reading {}", path.display()))?;
    create_dir(out_dir)?;
    for (i, (f, k)) in d.filters.iter().zip(d.kernels()).enumerate() {
        let name = format!("filter_{:02}_{}.pgm", i + 1, tag_slug(&f.tag.to_string()));
        save_pgm(&filter_image(&k, sdpf_core::sdpf::FILTER_SIZE, scale), out_dir.join(name))?;
    }
    println!("wrote {} filter images to {}", d.filters.len(), out_dir.display());
    Ok(())
}

pub fn params(archs: &[String], sparsity: usize) -> Result<()> {
    let list: Vec<ArchConfig> = if archs.is_empty() {
        ArchConfig::all()
    } else {
        archs.iter().map(|a| ArchConfig::parse(a).map_err(|e| invalid(e.to_string()))).collect::<Result<_>>()?
    };
    if sparsity == 0 || sparsity > sdpf_core::sdpf::DICTIONARY_LEN {
        return Err(invalid(format!("--sparsity must be in 1..={}", sdpf_core::sdpf::DICTIONARY_LEN)));
    }
    println!("arch,params");
    for a in list {
        let a = a.with_sparsity(sparsity);
        println!("{a},{}", a.count_params());
    }
    Ok(())
}

/// Spreads `n` samples over the five buckets, earlier buckets first.
fn per_bucket(n: usize) -> [usize; 5] {
    std::array::from_fn(|i| n / 5 + usize::from(i < n % 5))
}

/// Four fifths of `total` for training, the rest for testing.
fn synthetic_spec(total: usize, size: usize, fill: f64, seed: u64) -> DatasetSpec {
    let test = total / 5;
    DatasetSpec {
        train_per_bucket: per_bucket(total - test),
        test_per_bucket: per_bucket(test),
        fill,
        ..DatasetSpec::synthetic(0, 0, size, seed)
    }
}

fn manifest_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join("manifest.csv")
    } else {
        data.to_path_buf()
    }
}

fn load_data(d: &DataArgs, seed: u64) -> Result<Dataset> {
    match &d.data {
        Some(p) => {
            let m = manifest_path(p);
            Ok(load_manifest(&m, d.fill).with_context(|| format!("loading {}", m.display()))?)
        }
        None => {
            let spec = synthetic_spec(d.num_samples.unwrap_or(DEFAULT_SYNTHETIC), d.size, d.fill, seed);
            Ok(make_dataset(&spec)?)
        }
    }
}

/// Applies the `--num-samples` cap to samples read from disk.
fn capped<'a>(samples: &'a [Sample], d: &DataArgs) -> &'a [Sample] {
    match (d.data.is_some(), d.num_samples) {
        (true, Some(n)) => &samples[..n.min(samples.len())],
        _ => samples,
    }
}

fn data_config(cfg: &mut RunConfig, d: &DataArgs) {
    cfg.data = d.data.clone();
    cfg.num_samples = d.num_samples;
    cfg.fill = Some(d.fill);
    if d.data.is_none() {
        cfg.size = Some(d.size);
    }
}

pub fn synth_data(a: &SynthArgs) -> Result<()> {
    let cfg = RunConfig {
        seed: Some(a.seed),
        num_samples: Some(a.num_samples),
        size: Some(a.size),
        fill: Some(a.fill),
        images_dir: a.images_dir.clone(),
        out_dir: Some(a.out_dir.clone()),
        ..RunConfig::new("synth-data")
    };
    cfg.validate()?;
    let mut spec = synthetic_spec(a.num_samples, a.size, a.fill, a.seed);
    if let Some(dir) = &a.images_dir {
        spec.source = ImageSource::Directory(dir.clone());
    }
    let ds = make_dataset(&spec)?;
    let manifest = write_dataset(&ds, &a.out_dir)?;
    let (train, test) = (ds.bucket_histogram(sdpf_core::data::Split::Train), ds.bucket_histogram(sdpf_core::data::Split::Test));
    println!("bucket,train,test");
    for (i, b) in Bucket::ALL.iter().enumerate() {
        println!("{b},{},{}", train[i], test[i]);
    }
    println!("total,{},{}", ds.train.len(), ds.test.len());
    let results = json!({ "train": ds.train.len(), "test": ds.test.len(), "train_per_bucket": train, "test_per_bucket": test });
    write_manifest(&a.out_dir, &cfg, &[manifest], &results)?;
    Ok(())
}

fn load_or_build_dict(path: Option<&Path>) -> Result<Dictionary> {
    match path {
        Some(p) => Ok(import_dictionary(p).with_context(|| format!("reading {}", p.display()))?),
        None => Ok(assemble_dictionary()?),
    }
}

fn print_record(r: &EpochRecord) {
    let mut line = format!("epoch {:>4} train_mse {}", r.epoch, sig6(r.train_mse));
    if let (Some(p), Some(s)) = (r.test_psnr, r.test_ssim) {
        line.push_str(&format!(" test_psnr {} test_ssim {}", sig6(p), sig6(s)));
    }
    println!("{line}");
}

pub fn train(a: &TrainArgs, switch: bool) -> Result<()> {
    let mut cfg = RunConfig {
        arch: Some(a.arch.clone()),
        sparsity: Some(a.sparsity),
        seed: Some(a.seed),
        epochs: Some(a.epochs),
        batch_size: Some(a.batch_size),
        lr: Some(a.lr),
        switch_epoch: a.switch_epoch,
        dict: a.dict.clone(),
        resume: a.resume.clone(),
        out_dir: Some(a.out_dir.clone()),
        eval_every: Some(a.eval_every),
        checkpoint_every: Some(a.checkpoint_every),
        ..RunConfig::new(if switch { "switch-train" } else { "train" })
    };
    data_config(&mut cfg, &a.data);
    let arch = cfg.validate()?.expect("training always names an architecture");

    let (mut net, start_epoch) = match &a.resume {
        Some(p) => {
            let ck = load_checkpoint(p, Some(&arch)).with_context(|| format!("loading {}", p.display()))?;
            if ck.seed != a.seed {
                return Err(invalid(format!("--seed {} differs from the checkpoint seed {}", a.seed, ck.seed)));
            }
            if !ck.has_optimizer {
                return Err(invalid("the resume checkpoint holds no optimizer state"));
            }
            if ck.epoch > a.epochs || a.switch_epoch.is_some_and(|s| ck.epoch >= s) {
                return Err(invalid(format!("checkpoint epoch {} is past the requested schedule", ck.epoch)));
            }
            (ck.network, ck.epoch)
        }
        None => {
            let dict = Arc::new(load_or_build_dict(a.dict.as_deref())?);
            (build_network(&arch, dict, &mut ChaCha8Rng::seed_from_u64(a.seed))?, 0)
        }
    };

    let ds = load_data(&a.data, a.seed)?;
    let train_set = capped(&ds.train, &a.data);
    create_dir(&a.out_dir)?;
    let tc = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        adam: AdamConfig { lr: a.lr, ..AdamConfig::default() },
        seed: a.seed,
        start_epoch,
        eval_every: a.eval_every,
        checkpoint_every: a.checkpoint_every,
        checkpoint_dir: Some(a.out_dir.join("checkpoints")),
    };
    println!("{} ({} params), {} training and {} test samples", arch, net.param_count(), train_set.len(), ds.test.len());

    let mut results = serde_json::Map::new();
    let history = if switch {
        let switch_epoch = a.switch_epoch.expect("validated");
        let (h, report) = switch_train(&mut net, train_set, &ds.test, &tc, switch_epoch)?;
        h.records.iter().for_each(print_record);
        println!(
            "switch after epoch {switch_epoch}: max output change {}, params {} -> {}",
            sig6(report.max_abs_diff),
            report.params_before,
            report.params_after
        );
        results.insert(
            "switch".into(),
            json!({
                "epoch": switch_epoch,
                "max_abs_diff": report.max_abs_diff,
                "params_before": report.params_before,
                "params_after": report.params_after,
            }),
        );
        h
    } else {
        train_with_hook(&mut net, train_set, &ds.test, &tc, &mut |_: &Network, r: &EpochRecord| print_record(r))?
    };

    let history_path = a.out_dir.join("history.csv");
    history.write_csv(&history_path)?;
    let final_path = a.out_dir.join("final.gbck");
    save_checkpoint(&net, a.seed, a.epochs, true, &final_path)?;
    let mut outputs = vec![history_path, final_path];
    if a.checkpoint_every > 0 {
        outputs.push(a.out_dir.join("checkpoints"));
    }
    results.insert("arch".into(), json!(net.arch().to_string()));
    results.insert("params".into(), json!(net.param_count()));
    results.insert("initial_train_mse".into(), json!(history.initial_train_mse()));
    results.insert("final_train_mse".into(), json!(history.final_train_mse()));
    if !ds.test.is_empty() {
        let t = evaluate(&net, &ds.test, true)?.total().mean;
        println!("test psnr {} ssim {}", sig6(t.psnr), sig6(t.ssim));
        results.insert("test_psnr".into(), json!(t.psnr));
        results.insert("test_ssim".into(), json!(t.ssim));
    }
    write_manifest(&a.out_dir, &cfg, &outputs, &Value::Object(results))?;
    Ok(())
}

fn bucket_table(e: &Evaluation) -> String {
    let mut s = String::from("bucket,count,psnr,ssim,mse,l1\n");
    for r in &e.rows {
        let m = r.mean;
        s.push_str(&format!("{},{},{},{},{},{}\n", r.label(), r.count, sig6(m.psnr), sig6(m.ssim), sig6(m.mse), sig6(m.l1)));
    }
    s
}

/// One row per metric, columns `entire set` then the five buckets.
fn column_table(e: &Evaluation, arch: &str) -> String {
    let total = e.total();
    let ordered: Vec<_> = std::iter::once(total).chain(&e.rows[..e.rows.len() - 1]).collect();
    let mut s = String::from("method,metric,entire set");
    for r in &ordered[1..] {
        s.push(',');
        s.push_str(&r.label());
    }
    s.push('\n');
    let metrics: [(&str, fn(&sdpf_core::data::ImageMetrics) -> f64); 4] =
        [("psnr", |m| m.psnr), ("ssim", |m| m.ssim), ("mse", |m| m.mse), ("l1", |m| m.l1)];
    for (name, get) in metrics {
        s.push_str(&format!("{arch},{name}"));
        for r in &ordered {
            s.push(',');
            s.push_str(&sig6(get(&r.mean)));
        }
        s.push('\n');
    }
    s
}

/// Mean latency of single-image forwards after one warm-up pass.
fn time_forwards(net: &Network, samples: &[Sample], runs: usize) -> Result<f64> {
    let inputs: Vec<_> = samples.iter().map(|s| s.corrupted.to_tensor()).collect();
    net.forward(&inputs[0])?;
    let t0 = Instant::now();
    for i in 0..runs {
        net.forward(&inputs[i % inputs.len()])?;
    }
    Ok(t0.elapsed().as_secs_f64() * 1e3 / runs as f64)
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let mut cfg = RunConfig {
        seed: Some(a.seed),
        checkpoint: Some(a.checkpoint.clone()),
        out_dir: a.out_dir.clone(),
        split: Some(format!("{:?}", a.split).to_lowercase()),
        clamp: Some(!a.no_clamp),
        ..RunConfig::new("eval")
    };
    data_config(&mut cfg, &a.data);
    cfg.validate()?;
    if a.time && a.time_runs == 0 {
        return Err(invalid("--time-runs must be at least 1"));
    }
    let ck = load_checkpoint(&a.checkpoint, None).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let net = ck.network;
    let ds = load_data(&a.data, a.seed)?;
    let all: Vec<Sample>;
    let samples = match a.split {
        SplitArg::Train => capped(&ds.train, &a.data),
        SplitArg::Test => capped(&ds.test, &a.data),
        SplitArg::All => {
            all = ds.train.iter().chain(&ds.test).cloned().collect();
            capped(&all, &a.data)
        }
    };
    if samples.is_empty() {
        bail!("no samples to evaluate");
    }
    let e = evaluate(&net, samples, !a.no_clamp)?;
    let arch = net.arch().to_string();
    print!("{}", bucket_table(&e));
    let mut results = json!({
        "arch": arch,
        "params": net.param_count(),
        "rows": e.rows.iter().map(|r| json!({
            "bucket": r.label(), "count": r.count,
            "psnr": r.mean.psnr, "ssim": r.mean.ssim, "mse": r.mean.mse, "l1": r.mean.l1,
        })).collect::<Vec<_>>(),
    });
    if a.time {
        let ms = time_forwards(&net, samples, a.time_runs)?;
        println!("mean forward time {} ms over {} runs", sig6(ms), a.time_runs);
        results["mean_forward_ms"] = json!(ms);
        results["time_runs"] = json!(a.time_runs);
    }
    if let Some(dir) = &a.out_dir {
        create_dir(dir)?;
        let metrics = dir.join("metrics.csv");
        fs::write(&metrics, bucket_table(&e))?;
        let table = dir.join("table.csv");
        fs::write(&table, column_table(&e, &arch))?;
        let per_image = dir.join("per_image.csv");
        let mut s = String::from("id,bucket,psnr,ssim,mse,l1\n");
        for (id, b, m) in &e.per_image {
            s.push_str(&format!("{id},{b},{},{},{},{}\n", sig6(m.psnr), sig6(m.ssim), sig6(m.mse), sig6(m.l1)));
        }
        fs::write(&per_image, s)?;
        write_manifest(dir, &cfg, &[metrics, table, per_image], &results)?;
    }
    Ok(())
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

pub fn inpaint(a: &InpaintArgs) -> Result<()> {
    let cfg = RunConfig {
        checkpoint: Some(a.checkpoint.clone()),
        out_dir: Some(a.out_dir.clone()),
        clamp: Some(!a.no_clamp),
        ..RunConfig::new("inpaint")
    };
    cfg.validate()?;
    let mut targets = Vec::with_capacity(a.inputs.len());
    for p in &a.inputs {
        let name = p.file_name().ok_or_else(|| invalid(format!("{} has no file name", p.display())))?;
        let out = a.out_dir.join(name);
        if same_file(p, &out) || targets.contains(&out) {
            return Err(invalid(format!("output {} would overwrite an input", out.display())));
        }
        targets.push(out);
    }
    let net = load_checkpoint(&a.checkpoint, None).with_context(|| format!("loading {}", a.checkpoint.display()))?.network;
    create_dir(&a.out_dir)?;
    for (p, out) in a.inputs.iter().zip(&targets) {
        let img = load_pgm(p).with_context(|| format!("reading {}", p.display()))?;
        let restored = GrayImage::from_tensor(&net.forward(&img.to_tensor())?, 0, 0);
        let restored = if a.no_clamp { restored } else { restored.clamped() };
        save_pgm(&restored, out)?;
        println!("{} -> {} ({}x{})", p.display(), out.display(), restored.width(), restored.height());
    }
    write_manifest(&a.out_dir, &cfg, &targets, &json!({ "images": targets.len(), "arch": net.arch().to_string() }))?;
    Ok(())
}

pub fn filter_dump(a: &FilterDumpArgs) -> Result<()> {
    let cfg = RunConfig {
        checkpoint: Some(a.checkpoint.clone()),
        out_dir: Some(a.out_dir.clone()),
        layer: Some(a.layer),
        ..RunConfig::new("filter-dump")
    };
    cfg.validate()?;
    if a.scale == 0 {
        return Err(invalid("--scale must be at least 1"));
    }
    let net = load_checkpoint(&a.checkpoint, None).with_context(|| format!("loading {}", a.checkpoint.display()))?.network;
    let idx = a.layer - 1;
    let layer = &net.layers()[idx];
    let kernels = layer.kernels();
    let [c_out, c_in, k, _] = kernels.shape();

    let kdir = a.out_dir.join("kernels");
    create_dir(&kdir)?;
    for (slot, kernel) in kernels.data().chunks_exact(k * k).enumerate() {
        let (o, i) = (slot / c_in, slot % c_in);
        let name = if c_in == 1 { format!("kernel_{:02}.pgm", o + 1) } else { format!("kernel_{:02}_{:02}.pgm", o + 1, i + 1) };
        save_pgm(&filter_image(kernel, k, a.scale), kdir.join(name))?;
    }
    println!("layer {} ({}): {} kernels of {}x{}", a.layer, net.arch().codes()[idx].symbol(), c_out * c_in, k, k);

    let mut responses = 0;
    if !a.images.is_empty() {
        let rdir = a.out_dir.join("responses");
        create_dir(&rdir)?;
        for p in &a.images {
            let img = load_pgm(p).with_context(|| format!("reading {}", p.display()))?;
            let stem = p.file_stem().map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned());
            let r = net.layer_response(&img.to_tensor(), idx)?;
            for o in 0..c_out {
                let ch = GrayImage::from_tensor(&r, 0, o).min_max_normalized();
                save_pgm(&ch, rdir.join(format!("{stem}_f{:02}.pgm", o + 1)))?;
                responses += 1;
            }
        }
        println!("{responses} responses ({c_out} filters x {} images)", a.images.len());
    }

    let mut results = json!({ "layer": a.layer, "kernels": c_out * c_in, "responses": responses });
    let mut span_failed = None;
    if let Layer::Sdpf(s) = layer {
        let res = max_span_residual(s);
        println!("max span residual over {} kernels: {} (tolerance {})", c_out * c_in, sig6(res), sig6(SPAN_TOL));
        results["max_span_residual"] = json!(res);
        if !(res < SPAN_TOL) {
            span_failed = Some(res);
        }
    }
    write_manifest(&a.out_dir, &cfg, &[kdir], &results)?;
    if let Some(res) = span_failed {
        bail!("kernel span residual {} exceeds {}", sig6(res), sig6(SPAN_TOL));
    }
    Ok(())
}
