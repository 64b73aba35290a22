use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rdwt_core::backbone::{Model, STAGES};
use rdwt_core::config::RunConfig;
use rdwt_core::data::{generate, holdout, read_trials, split, write_csv, write_trials, Protocol, SynthConfig, TrialSet};
use rdwt_core::ndarr::{Graph, Mode, Tensor};
use rdwt_core::rdwt::decompose as rdwt_decompose;
use rdwt_core::train::{evaluate, fit, model_gradcheck, write_history, Checkpoint, GRAD_GROUPS};

use crate::manifest::{beside, Manifest};
use crate::{BenchArgs, DecomposeArgs, EvalArgs, Failure, GenArgs, GradcheckArgs, ProtocolArg, TrainArgs};

type Outcome = Result<(), Failure>;

fn load_config(path: Option<&Path>, fallback: RunConfig) -> Result<RunConfig, Failure> {
    match path {
        None => Ok(fallback),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(rdwt_core::Error::from)?;
            RunConfig::parse(&text).map_err(|e| match e {
                rdwt_core::Error::Config(m) => rdwt_core::Error::Config(format!("{}: {m}", p.display())).into(),
                other => other.into(),
            })
        }
    }
}

fn protocol(p: ProtocolArg, held_out: Option<u32>, train_frac: f64, seed: u64) -> Result<Protocol, Failure> {
    match p {
        ProtocolArg::SubDep => Ok(Protocol::SubjectDependent { train_frac, seed }),
        ProtocolArg::Loso => held_out
            .map(|h| Protocol::Loso { held_out: h })
            .ok_or_else(|| Failure::Usage("--protocol loso requires --held-out <subject>".into())),
    }
}

fn protocol_kv(m: &mut Manifest, p: &Protocol) {
    match p {
        Protocol::SubjectDependent { train_frac, seed } => {
            m.set("protocol", "sub-dep");
            m.set("protocol.train_frac", train_frac);
            m.set("protocol.seed", seed);
        }
        Protocol::Loso { held_out } => {
            m.set("protocol", "loso");
            m.set("protocol.held_out", held_out);
        }
    }
}

pub fn gen(a: GenArgs) -> Outcome {
    if a.trials_per_class == 0 || a.subjects == 0 || a.classes < 2 || a.channels == 0 {
        return Err(Failure::Usage(
            "--trials-per-class and --subjects must be positive, --classes at least 2, --channels positive".into(),
        ));
    }
    let mut cfg = SynthConfig::new(a.classes, a.channels, a.samples, a.seed);
    cfg.subjects = a.subjects as usize;
    cfg.trials_per_class = a.trials_per_class;
    cfg.snr_db = a.snr_db;
    cfg.sample_rate = a.sample_rate;
    let mut m = Manifest::start("gen");
    let set = generate(&cfg).map_err(|e| match e {
        rdwt_core::Error::Config(msg) => Failure::Usage(msg),
        other => other.into(),
    })?;
    write_trials(&set, &a.out)?;
    m.set("seed", a.seed);
    m.set("gen.subjects", cfg.subjects);
    m.set("gen.trials_per_class", cfg.trials_per_class);
    m.set("gen.channels", cfg.channels);
    m.set("gen.samples", cfg.samples);
    m.set("gen.classes", a.classes);
    m.set("gen.sample_rate", cfg.sample_rate);
    m.set("gen.snr_db", cfg.snr_db);
    m.set("gen.white_amp", cfg.white_amp);
    m.set("gen.pink_amp", cfg.pink_amp);
    m.set("gen.gain_jitter", cfg.gain_jitter);
    m.set("gen.freq_jitter_hz", cfg.freq_jitter_hz);
    for (k, b) in cfg.bands.iter().enumerate() {
        let ch: Vec<String> = b.channels.iter().map(usize::to_string).collect();
        m.set(format!("gen.class{k}.freq_hz"), b.freq_hz);
        m.set(format!("gen.class{k}.channels"), ch.join(","));
        m.set(format!("gen.class{k}.window"), format!("{}..{}", b.window.0, b.window.1));
    }
    m.output("trials", &a.out)?;
    if let Some(csv) = &a.csv {
        let f = std::fs::File::create(csv).map_err(rdwt_core::Error::from)?;
        write_csv(&set, std::io::BufWriter::new(f))?;
        m.output("csv", csv)?;
    }
    m.finish(&beside(&a.out))?;
    println!(
        "wrote {} trials ({} subjects, {} classes, C={}, T={}) to {}",
        set.len(),
        cfg.subjects,
        a.classes,
        set.channels,
        set.samples,
        a.out.display()
    );
    Ok(())
}

fn band_set(like: &TrialSet, data: &Tensor) -> Result<TrialSet, Failure> {
    let per = like.channels * like.samples;
    let trials = like
        .trials
        .iter()
        .zip(data.data().chunks(per))
        .map(|(t, d)| rdwt_core::data::Trial {
            subject: t.subject,
            label: t.label,
            samples: d.to_vec(),
        })
        .collect();
    Ok(TrialSet::new(like.channels, like.samples, like.classes, like.sample_rate, trials)?)
}

fn energy(t: &Tensor) -> f64 {
    t.data().iter().map(|v| v * v).sum()
}

pub fn decompose(a: DecomposeArgs) -> Outcome {
    let rc = load_config(a.config.as_deref(), RunConfig::default())?;
    let cfg = &rc.model.rdwt;
    let levels = cfg.levels;
    let scales = match a.scales {
        Some(s) => s,
        None => cfg.anchors.iter().map(|s| s.min(cfg.s_max)).collect(),
    };
    let softplus = |x: f64| if x > 30.0 { x } else { x.exp().ln_1p() };
    let tau = a.thresholds.unwrap_or_else(|| vec![softplus(cfg.theta_init); levels]);
    let alpha = vec![cfg.alpha_init; levels];
    if scales.len() != levels || tau.len() != levels {
        return Err(Failure::Usage(format!(
            "--scales and --thresholds need {levels} comma-separated values (got {} and {})",
            scales.len(),
            tau.len()
        )));
    }
    let set = read_trials(&a.input)?;
    let all: Vec<usize> = (0..set.len()).collect();
    let (x, _) = set.batch(&all)?;
    let d = rdwt_decompose(&x, cfg, &scales, &tau, &alpha)?;
    std::fs::create_dir_all(&a.out_dir).map_err(rdwt_core::Error::from)?;

    let mut m = Manifest::start("decompose");
    m.input("trials", &a.input)?;
    m.config(&rc.to_kv());
    m.set("decompose.scales", join(&scales));
    m.set("decompose.thresholds", join(&tau));
    let mut report = String::new();
    report += &format!("input {} trials, C={}, T={}\n", set.len(), set.channels, set.samples);
    report += &format!("input_energy {}\n", energy(&x));
    report += &format!("{:<8} {:>10} {:>10} {:>10} {:>18}\n", "band", "scale", "tau", "alpha", "energy");
    let mut band_total = 0.0;
    let mut bands: Vec<(String, &Tensor, String)> = d
        .details
        .iter()
        .enumerate()
        .map(|(l, t)| {
            (
                format!("d{}", l + 1),
                t,
                format!("{:>10.6} {:>10.6} {:>10.6}", scales[l], tau[l], alpha[l]),
            )
        })
        .collect();
    bands.push((format!("a{levels}"), &d.approx, format!("{:>10.6} {:>10} {:>10}", scales[levels - 1], "-", "-")));
    for (name, t, params) in &bands {
        let e = energy(t);
        band_total += e;
        report += &format!("{name:<8} {params} {e:>18.6}\n");
        let path = a.out_dir.join(format!("band_{name}.eegt"));
        write_trials(&band_set(&set, t)?, &path)?;
        m.output(&format!("band_{name}"), &path)?;
    }
    report += &format!("band_energy_sum {band_total}\n");
    report += &format!("reconstruction_energy {}\n", energy(&d.reconstruction));
    report += "note: synthesis is additive and not orthogonal, so band energies need not sum to the input energy\n";
    let recon = a.out_dir.join("reconstruction.eegt");
    write_trials(&band_set(&set, &d.reconstruction)?, &recon)?;
    m.output("reconstruction", &recon)?;
    let report_path = a.out_dir.join("report.txt");
    std::fs::write(&report_path, &report).map_err(rdwt_core::Error::from)?;
    m.output("report", &report_path)?;
    m.finish(&a.out_dir.join("manifest.txt"))?;
    print!("{report}");
    Ok(())
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

pub fn train(a: TrainArgs) -> Outcome {
    let mut rc = load_config(a.config.as_deref(), RunConfig::tiny())?;
    if let Some(s) = a.seed {
        rc.train.seed = s;
    }
    let proto = protocol(a.protocol, a.held_out, a.train_frac, rc.train.seed)?;
    let set = read_trials(&a.data)?;
    rc.model.channels = set.channels;
    rc.model.classes = set.classes;
    rc.validate()?;

    let (train, test) = split(&set, &proto)?;
    let (train, val) = holdout(&train, rc.train.val_frac, rc.train.seed)?;
    let mut model = Model::new(rc.model.clone(), rc.train.seed)?;
    let start = Instant::now();
    let verbose = a.verbose;
    let out = fit(&mut model, &train, &val, &rc.train, |r| {
        if verbose {
            eprintln!(
                "epoch {:>4}  train {:.6}  val {:.6}  acc {:.4}  kappa {:.4}  {:.1}s",
                r.epoch,
                r.train_loss,
                r.val_loss,
                r.val_acc,
                r.val_kappa,
                start.elapsed().as_secs_f64()
            );
        }
    })?;
    let mut ckpt = out.checkpoint.clone();
    ckpt.config.preset = rc.preset;
    ckpt.save(&a.out_ckpt)?;
    let history = a.history.clone().unwrap_or_else(|| {
        let mut s = a.out_ckpt.as_os_str().to_owned();
        s.push(".history.csv");
        PathBuf::from(s)
    });
    let f = std::fs::File::create(&history).map_err(rdwt_core::Error::from)?;
    write_history(std::io::BufWriter::new(f), &out.history)?;
    let ev = evaluate(&model, &test)?;

    let mut m = Manifest::start("train");
    m.set("seed", rc.train.seed);
    protocol_kv(&mut m, &proto);
    m.input("trials", &a.data)?;
    m.config(&rc.to_kv());
    m.set("result.train_trials", train.len());
    m.set("result.val_trials", val.len());
    m.set("result.test_trials", test.len());
    m.set("result.epochs_run", out.history.len());
    m.set("result.best_epoch", out.best_epoch);
    m.set("result.best_val_loss", out.best_val_loss);
    m.set("result.stopped_early", out.stopped_early);
    m.set("result.test_accuracy", ev.accuracy);
    m.set("result.test_kappa", ev.kappa.value);
    m.output("checkpoint", &a.out_ckpt)?;
    m.output("history", &history)?;
    m.finish(&beside(&a.out_ckpt))?;

    println!("epochs run: {} (best {})", out.history.len(), out.best_epoch);
    println!("test trials: {}", test.len());
    println!("test accuracy: {}", ev.accuracy);
    println!("test kappa: {}{}", ev.kappa.value, if ev.kappa.degenerate { " (degenerate)" } else { "" });
    Ok(())
}

pub fn eval(a: EvalArgs) -> Outcome {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let set = read_trials(&a.data)?;
    let mut cfg = ckpt.config.model.clone();
    cfg.channels = set.channels;
    // rebuilding against the data's channel count names the first mismatched tensor
    let model = Model::from_parts(cfg, ckpt.params.clone(), ckpt.buffers.clone())?;
    if set.classes > model.cfg.classes {
        return Err(rdwt_core::Error::Data(format!(
            "data has {} classes, checkpoint predicts {} (tensor `cls.w`)",
            set.classes, model.cfg.classes
        ))
        .into());
    }
    let seed = a.seed.unwrap_or(ckpt.config.train.seed);
    let test = match a.protocol {
        None => set,
        Some(p) => split(&set, &protocol(p, a.held_out, a.train_frac, seed)?)?.1,
    };
    let ev = evaluate(&model, &test)?;
    println!("trials: {}", test.len());
    println!("accuracy: {}", ev.accuracy);
    println!("kappa: {}{}", ev.kappa.value, if ev.kappa.degenerate { " (degenerate)" } else { "" });
    println!("loss: {}", ev.loss);
    println!("confusion matrix (rows true, columns predicted):");
    print!("{}", ev.cm);
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> Outcome {
    let mut fallback = RunConfig::tiny();
    fallback.model.frontend = "hybrid".into();
    fallback.model.ensemble.branches = 2;
    let rc = load_config(a.config.as_deref(), fallback)?;
    let groups = model_gradcheck(&rc.model, a.samples, a.seed, a.tol, a.entries)?;
    println!("{:<14} {:>7} {:>7} {:>12}  {:<6} worst tensor", "group", "tensors", "entries", "max_rel_err", "status");
    let mut failed = Vec::new();
    for name in GRAD_GROUPS {
        match groups.iter().find(|g| g.group == name) {
            Some(g) => {
                let status = if g.passed { "pass" } else { "FAIL" };
                println!(
                    "{:<14} {:>7} {:>7} {:>12.3e}  {:<6} {}",
                    g.group, g.tensors, g.entries, g.max_rel_err, status, g.worst
                );
                if !g.passed {
                    failed.push(name);
                }
            }
            None => println!("{name:<14} {:>7} {:>7} {:>12}  {:<6} -", 0, 0, "-", "absent"),
        }
    }
    println!("tolerance {:e}", a.tol);
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(format!("groups above tolerance: {}", failed.join(", "))))
    }
}

fn quantile(sorted: &[Duration], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx].as_secs_f64() * 1e3
}

pub fn bench(a: BenchArgs) -> Outcome {
    if a.repeat == 0 {
        return Err(Failure::Usage("--repeat must be positive".into()));
    }
    let rc = load_config(a.config.as_deref(), RunConfig::tiny())?;
    let model = Model::new(rc.model.clone(), a.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let n = rc.model.channels * a.samples;
    let x = Tensor::new(vec![1, rc.model.channels, a.samples], (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let mut stages: Vec<Vec<Duration>> = vec![Vec::with_capacity(a.repeat); STAGES.len()];
    let mut totals = Vec::with_capacity(a.repeat);
    for _ in 0..a.repeat {
        let start = Instant::now();
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let mut buffers = model.buffers.clone();
        let out = model.forward_with(&mut g, &model.params, &mut buffers, xv, Mode::Eval, &mut rng)?;
        totals.push(start.elapsed());
        for (s, t) in stages.iter_mut().zip(out.stage_times) {
            s.push(t);
        }
    }
    println!(
        "single-trial eval forward, C={}, T={}, frontend={}, attention={}, repeat={}",
        rc.model.channels,
        a.samples,
        model.frontend_name(),
        model.attention_name(),
        a.repeat
    );
    println!("{:<12} {:>12} {:>12}", "stage", "median_ms", "p95_ms");
    for (name, mut v) in STAGES.iter().zip(stages).chain(std::iter::once((&"total", totals))) {
        v.sort();
        println!("{:<12} {:>12.4} {:>12.4}", name, quantile(&v, 0.5), quantile(&v, 0.95));
    }
    Ok(())
}
