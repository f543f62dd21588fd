//! `cpfree`: dataset generation, training, sweeps and reports.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};
use cpfree::estimation::ChannelPair;
use cpfree::harness::config::{expand_path, KEYS};
use cpfree::harness::dataset::{read_channel_pairs, read_detection_records, split_validation};
use cpfree::harness::train::{ce_hyper, oamp_hyper, train_cenet, train_oampnet};
use cpfree::harness::{
    emit_report, gen_dataset, parse_csv, run_sweep, to_csv, Receiver, Setup, SimConfig,
};
use cpfree::{Error, Result};

const SUBCOMMANDS: &[(&str, &str)] = &[
    ("gen", "write a dataset (`kind`, `count`, `dataset`)"),
    ("train-ce", "train CE-NET on `dataset` and write `cenet`"),
    (
        "train-oamp",
        "train OAMP-NET on `dataset` and write `oampnet`",
    ),
    (
        "sweep",
        "run the SNR grid; CSV to `out` (stdout when empty)",
    ),
    (
        "report",
        "re-emit plot data from CSV files given as arguments",
    ),
];

fn cli() -> Command {
    let mut cmd = Command::new("cpfree")
        .about("CP-free OFDM receivers: OAMP, OAMP-NET and CE-NET link-level simulation")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for (name, about) in SUBCOMMANDS {
        let mut sub = Command::new(*name)
            .about(*about)
            .arg(
                Arg::new("config")
                    .long("config")
                    .value_name("FILE")
                    .help("key = value configuration file"),
            )
            .arg(
                Arg::new("extra")
                    .value_name("KEY=VALUE | FILE")
                    .action(ArgAction::Append)
                    .help("configuration overrides; `report` also takes CSV files"),
            );
        for (key, default, help) in KEYS {
            let help = if default.is_empty() {
                help.to_string()
            } else {
                format!("{help} [default: {default}]")
            };
            sub = sub.arg(Arg::new(*key).long(*key).value_name("VALUE").help(help));
        }
        cmd = cmd.subcommand(sub);
    }
    cmd
}

/// Defaults, then the config file, then `key=value` arguments, then flags.
fn resolve(m: &ArgMatches) -> Result<(SimConfig, Vec<PathBuf>)> {
    let mut cfg = match m.get_one::<String>("config") {
        Some(p) => SimConfig::from_file(Path::new(p))?,
        None => SimConfig::default(),
    };
    let mut files = Vec::new();
    for item in m.get_many::<String>("extra").into_iter().flatten() {
        match item.split_once('=') {
            Some((k, v)) => cfg.set(k, v)?,
            None => files.push(PathBuf::from(item)),
        }
    }
    for (key, _, _) in KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    cfg.validate()?;
    Ok((cfg, files))
}

fn require(value: &str, key: &str) -> Result<()> {
    if value.is_empty() {
        return Err(Error::Config(format!("`{key}` must be set")));
    }
    Ok(())
}

/// Per-SNR groups of (init SNR, dataset file, output file). Without `{snr}`
/// in the dataset path a single model is trained on the whole file and
/// initialized at the mean SNR of the grid.
fn training_jobs(cfg: &SimConfig, output: &str) -> Vec<(f64, PathBuf, Vec<PathBuf>)> {
    if cfg.dataset.contains("{snr}") {
        cfg.snr_db
            .iter()
            .map(|&s| {
                (
                    s,
                    expand_path(&cfg.dataset, s),
                    vec![expand_path(output, s)],
                )
            })
            .collect()
    } else {
        let mean = cfg.snr_db.iter().sum::<f64>() / cfg.snr_db.len() as f64;
        let mut outs: Vec<PathBuf> = cfg.snr_db.iter().map(|&s| expand_path(output, s)).collect();
        outs.dedup();
        vec![(mean, PathBuf::from(&cfg.dataset), outs)]
    }
}

fn save_all(text: &str, paths: &[PathBuf]) -> Result<()> {
    for p in paths {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(p, text)?;
        log::info!("wrote {}", p.display());
    }
    Ok(())
}

fn train_ce(setup: &Setup) -> Result<()> {
    let cfg = &setup.cfg;
    require(&cfg.dataset, "dataset")?;
    require(&cfg.cenet, "cenet")?;
    for (snr, data, outs) in training_jobs(cfg, &cfg.cenet) {
        let pairs: Vec<ChannelPair> = read_channel_pairs(&data)?
            .iter()
            .map(|r| r.pair())
            .collect();
        let (train, valid) = split_validation(pairs, cfg.valid_fraction)?;
        let out = train_cenet(setup, snr, &train, &valid, &ce_hyper(setup))?;
        log::info!(
            "CE-NET from {}: validation loss {:.4e} -> {:.4e}",
            data.display(),
            out.initial_loss,
            out.best_loss
        );
        save_all(&out.params.to_text(), &outs)?;
    }
    Ok(())
}

fn train_oamp(setup: &Setup) -> Result<()> {
    let cfg = &setup.cfg;
    require(&cfg.dataset, "dataset")?;
    require(&cfg.oampnet, "oampnet")?;
    for (_, data, outs) in training_jobs(cfg, &cfg.oampnet) {
        let samples = read_detection_records(&data)?
            .iter()
            .map(|r| r.problem()?.training_sample(setup))
            .collect::<Result<Vec<_>>>()?;
        let (train, valid) = split_validation(samples, cfg.valid_fraction)?;
        let out = train_oampnet(setup, &train, &valid, &oamp_hyper(setup))?;
        log::info!(
            "OAMP-NET from {}: validation loss {:.4e} -> {:.4e}",
            data.display(),
            out.initial_loss,
            out.best_loss
        );
        save_all(&out.params.to_text(), &outs)?;
    }
    Ok(())
}

/// Returns whether every point completed.
fn sweep(setup: &Setup) -> Result<bool> {
    let records = run_sweep(setup)?;
    for r in records.iter().filter(|r| r.failure.is_some()) {
        log::error!(
            "SNR {} dB failed: {}",
            r.snr_db,
            r.failure.as_deref().unwrap_or("")
        );
    }
    if setup.cfg.out.is_empty() {
        print!("{}", to_csv(&records));
    } else {
        for p in emit_report(&records, Path::new(&setup.cfg.out))? {
            log::info!("wrote {}", p.display());
        }
    }
    Ok(records.iter().all(|r| r.failure.is_none()))
}

fn report(files: &[PathBuf]) -> Result<()> {
    if files.is_empty() {
        return Err(Error::Config("report needs at least one CSV file".into()));
    }
    for f in files {
        if !f.exists() {
            return Err(Error::MissingFile(f.clone()));
        }
        let records = parse_csv(&fs::read_to_string(f)?)?;
        for p in emit_report(&records, f)? {
            log::info!("wrote {}", p.display());
        }
    }
    Ok(())
}

fn run(m: &ArgMatches) -> Result<bool> {
    let (name, sub) = m.subcommand().expect("subcommand required");
    let (cfg, files) = resolve(sub)?;
    if name != "report" && !files.is_empty() {
        return Err(Error::Config(format!(
            "unexpected argument `{}`",
            files[0].display()
        )));
    }
    if name == "report" {
        report(&files)?;
        return Ok(true);
    }
    let setup = Setup::new(cfg)?;
    match name {
        "gen" => {
            let cfg = &setup.cfg;
            let files = gen_dataset(
                &setup,
                &|s| Receiver::for_dataset(&setup, s),
                cfg.kind,
                cfg.count,
                cfg.seed,
                &cfg.dataset,
            )?;
            for f in files {
                log::info!("wrote {}", f.display());
            }
        }
        "train-ce" => train_ce(&setup)?,
        "train-oamp" => train_oamp(&setup)?,
        "sweep" => return sweep(&setup),
        _ => unreachable!("unknown subcommand"),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(&cli().get_matches()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(2)
        }
    }
}
