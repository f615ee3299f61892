use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fefet_core::crossbar::{map_weights, Encoding, InjectorCounts, MapOptions, ReadNoise};
use fefet_core::network::{
    accuracy, default_mapping, infer, train_qat, Backend, MappedNetwork, QuantizedNetwork, Split,
};
use fefet_core::nonideality::{generate_noise_trace, retention_window, scale_to_std};
use fefet_sim::config::Config;
use fefet_sim::data::{load_mnist, resolve_mnist_dir};
use fefet_sim::harness::{
    emit_report, report_table, run_scenario, sweep_csv, sweep_read_voltage, trend_violation, unix_timestamp,
    ReportFormat, ScenarioConfig,
};
use fefet_sim::store::{load_json, save_json, write_conductance_csv, write_epoch_log_csv, write_text, write_transcript_csv};
use fefet_sim::{SimError, SimResult};

#[derive(Parser)]
#[command(name = "fefet", about = "FE-FinFET crossbar inference simulator")]
struct Cli {
    /// TOML configuration file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed; overrides the configured one.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Exit with status 2 when the command's acceptance threshold is missed.
    #[arg(long, global = true)]
    check: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Enc {
    Differential,
    Offset,
}

impl From<Enc> for Encoding {
    fn from(e: Enc) -> Self {
        match e {
            Enc::Differential => Encoding::Differential,
            Enc::Offset => Encoding::OffsetReferenced,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a quantized network on MNIST.
    Train {
        #[arg(long, default_value_t = 4)]
        levels: u8,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Program a trained network onto crossbar tiles and export conductances.
    Program {
        #[arg(long, default_value_t = 4)]
        levels: u8,
        #[arg(long)]
        network: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "differential")]
        encoding: Enc,
        #[arg(long)]
        vg_read: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also store the programmed network as JSON.
        #[arg(long)]
        save_mapped: bool,
    },
    /// Test accuracy of the ideal network and of its crossbar mapping.
    Infer {
        #[arg(long, default_value_t = 4)]
        levels: u8,
        #[arg(long)]
        network: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "differential")]
        encoding: Enc,
        #[arg(long)]
        vg_read: Option<f64>,
        #[arg(long, default_value_t = 300.0)]
        temp: f64,
        /// Enable flicker and C2C read noise.
        #[arg(long)]
        noise: bool,
    },
    /// Run cumulative non-ideality chains.
    Scenario {
        /// A, B, C or all.
        #[arg(long, default_value = "all")]
        id: String,
        /// Directory holding the trained networks.
        #[arg(long)]
        networks: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Record the wall-clock time in the report.
        #[arg(long)]
        timestamp: bool,
    },
    /// Accuracy of the binary network over read voltage and temperature.
    SweepVread {
        #[arg(long)]
        network: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ten-year retention window at each configured temperature.
    Retention {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthesize a read-current fluctuation trace.
    NoiseTrace {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Config(SimError),
    Threshold(String),
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        Failure::Config(e)
    }
}

impl From<fefet_core::Error> for Failure {
    fn from(e: fefet_core::Error) -> Self {
        Failure::Config(e.into())
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Threshold(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(2)
        }
    }
}

fn artifacts_dir(cfg: &Config, out: &Option<PathBuf>) -> PathBuf {
    out.clone()
        .or_else(|| cfg.data.artifacts_dir.clone())
        .unwrap_or_else(|| PathBuf::from("artifacts"))
}

fn network_path(dir: &Path, levels: u8) -> PathBuf {
    dir.join(format!("network_{levels}.json"))
}

fn load_network(path: &Path, levels: u8) -> SimResult<QuantizedNetwork> {
    if !path.is_file() {
        return Err(SimError::Config(format!(
            "no trained network at {}; run `fefet train --levels {levels}` first",
            path.display()
        )));
    }
    let net: QuantizedNetwork = load_json(path, "network")?;
    if net.levels != levels {
        return Err(SimError::Config(format!(
            "{} holds a {}-level network, expected {levels}",
            path.display(),
            net.levels
        )));
    }
    Ok(net)
}

fn default_vg(cfg: &Config, enc: Encoding) -> f64 {
    match enc {
        Encoding::Differential => cfg.scenario.vg_read_digital,
        Encoding::OffsetReferenced => cfg.scenario.vg_read_analog,
    }
}

fn run(cli: &Cli) -> CmdResult {
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let mnist = resolve_mnist_dir(cfg.data.mnist_dir.as_deref());
    match &cli.cmd {
        Cmd::Train { levels, out } => {
            let dir = artifacts_dir(&cfg, out);
            let train = load_mnist(&mnist, Split::Train)?;
            let test = load_mnist(&mnist, Split::Test)?;
            let hp = cfg.training.hyperparams(*levels);
            let seed = cli.seed.unwrap_or(cfg.training.seed);
            let (net, log) = train_qat(&train, &cfg.training.topology, *levels, hp, seed)?;
            let acc = infer(&net, &test, &Backend::Ideal)?;
            save_json(&network_path(&dir, *levels), "network", &net)?;
            write_epoch_log_csv(&dir.join(format!("train_log_{levels}.csv")), &log)?;
            println!("{levels}-level test accuracy {acc:.2}%");
            let target = if *levels == 2 { 95.0 } else { 97.0 };
            if cli.check && acc < target {
                return Err(Failure::Threshold(format!("{acc:.2}% below {target}%")));
            }
        }
        Cmd::Program { levels, network, encoding, vg_read, out, save_mapped } => {
            let dir = artifacts_dir(&cfg, out);
            let net_path = network.clone().unwrap_or_else(|| network_path(&dir, *levels));
            let net = load_network(&net_path, *levels)?;
            let enc: Encoding = (*encoding).into();
            let mapping = default_mapping(*levels, enc);
            let params = cfg.device.with_levels(*levels);
            let opts = MapOptions {
                vg_read: vg_read.unwrap_or_else(|| default_vg(&cfg, enc)),
                seed: cli.seed.unwrap_or(cfg.scenario.base_seed),
                tile_id: 0,
                max_rows: cfg.crossbar.max_rows,
                max_cols: cfg.crossbar.max_cols,
                verify_read: true,
            };
            let mapped = MappedNetwork::program(&net, &mapping, &params, &cfg.programming, &opts)?;
            for (li, layer) in mapped.layers.iter().enumerate() {
                for (ti, tile) in layer.matrix.tiles.iter().enumerate() {
                    write_conductance_csv(&dir.join(format!("conductance_l{li}_t{ti}.csv")), tile)?;
                }
            }
            // Replays the first tile with a transcript; same seed and tile id.
            let first = &net.layers[0];
            let (r, c) = (mapped.layers[0].matrix.row_starts[1], mapped.layers[0].matrix.col_starts[1]);
            let mut sub = Vec::with_capacity(r * c);
            for i in 0..r {
                sub.extend_from_slice(&first.quantized[i * first.fan_out..i * first.fan_out + c]);
            }
            let mut transcript = Vec::new();
            map_weights(&sub, r, c, &mapping, &params, &cfg.programming, &opts, Some(&mut transcript))?;
            write_transcript_csv(&dir.join("program_transcript.csv"), &transcript)?;
            save_json(&dir.join(format!("programming_stats_{levels}.json")), "programming-stats", &mapped.stats)?;
            if *save_mapped {
                save_json(&dir.join(format!("mapped_{levels}.json")), "mapped-network", &mapped)?;
            }
            println!(
                "programmed {} devices, {:.4}% converged, {} pulses",
                mapped.stats.devices,
                100.0 * mapped.stats.convergence_rate(),
                mapped.stats.pulses
            );
            if cli.check && mapped.stats.convergence_rate() < 0.99 {
                return Err(Failure::Threshold("fewer than 99% of devices converged".into()));
            }
        }
        Cmd::Infer { levels, network, encoding, vg_read, temp, noise } => {
            let dir = artifacts_dir(&cfg, &None);
            let net_path = network.clone().unwrap_or_else(|| network_path(&dir, *levels));
            let net = load_network(&net_path, *levels)?;
            let test = load_mnist(&mnist, Split::Test)?;
            let enc: Encoding = (*encoding).into();
            let seed = cli.seed.unwrap_or(cfg.scenario.base_seed);
            let opts = MapOptions {
                vg_read: vg_read.unwrap_or_else(|| default_vg(&cfg, enc)),
                seed,
                tile_id: 0,
                max_rows: cfg.crossbar.max_rows,
                max_cols: cfg.crossbar.max_cols,
                verify_read: true,
            };
            let params = cfg.device.with_levels(*levels);
            let mut mapped =
                MappedNetwork::program(&net, &default_mapping(*levels, enc), &params, &cfg.programming, &opts)?;
            mapped.for_each_tile(|t| t.set_temperature(*temp))?;
            let rn = if *noise {
                ReadNoise { seed, ..ReadNoise::from_spec(&cfg.variation) }
            } else {
                ReadNoise::NONE
            };
            let ideal = infer(&net, &test, &Backend::Ideal)?;
            let mut counts = InjectorCounts::default();
            let pred = mapped.predict(&test.images, test.len(), &rn, &mut counts)?;
            println!("ideal {ideal:.2}%  crossbar {:.2}%", accuracy(&pred, &test.labels));
        }
        Cmd::Scenario { id, networks, out, timestamp } => {
            let ids: Vec<&str> = if id == "all" { vec!["A", "B", "C"] } else { vec![id.as_str()] };
            let net_dir = networks.clone().unwrap_or_else(|| artifacts_dir(&cfg, &None));
            let dir = artifacts_dir(&cfg, out);
            let test = load_mnist(&mnist, Split::Test)?;
            let mut reports = Vec::new();
            let mut failures = Vec::new();
            for sid in ids {
                let sc = ScenarioConfig::preset(sid, &cfg, cli.seed)?;
                let net = load_network(&network_path(&net_dir, sc.levels), sc.levels)?;
                let mut r = run_scenario(&sc, &cfg, &net, &test)?;
                if *timestamp {
                    r.timestamp = Some(unix_timestamp());
                }
                emit_report(&r, ReportFormat::Csv, &dir.join(format!("scenario_{sid}.csv")))?;
                emit_report(&r, ReportFormat::Text, &dir.join(format!("scenario_{sid}.txt")))?;
                if let Some(msg) = trend_violation(&r) {
                    failures.push(msg);
                }
                reports.push(r);
            }
            let table = report_table(&reports);
            print!("{table}");
            if reports.len() > 1 {
                write_text(&dir.join("scenario_table.txt"), &table)?;
            }
            if cli.check && !failures.is_empty() {
                return Err(Failure::Threshold(failures.join("; ")));
            }
        }
        Cmd::SweepVread { network, out } => {
            let dir = artifacts_dir(&cfg, out);
            let net_path = network.clone().unwrap_or_else(|| network_path(&artifacts_dir(&cfg, &None), 2));
            let net = load_network(&net_path, 2)?;
            let test = load_mnist(&mnist, Split::Test)?;
            let base = cli.seed.unwrap_or(cfg.scenario.base_seed);
            let seeds: Vec<u64> = (0..cfg.sweep.seeds as u64).map(|i| base + i).collect();
            let r = sweep_read_voltage(&cfg.sweep.vg_read, &cfg.sweep.temps, &cfg, &net, &test, &seeds)?;
            let csv = sweep_csv(&r)?;
            write_text(&dir.join("sweep_vread.csv"), &csv)?;
            print!("{csv}");
            println!("best vg_read {} V", r.best_vg);
            if cli.check {
                let mut bad = Vec::new();
                for (v, &vg) in r.vg_read.iter().enumerate() {
                    for t in 1..r.temps.len() {
                        let d = r.drop(v, t);
                        let ok = if (vg - 0.75).abs() < 1e-9 { d <= 1.0 } else { d >= 5.0 };
                        if !ok {
                            bad.push(format!("{vg} V at {} K drops {d:.2}", r.temps[t]));
                        }
                    }
                }
                if !bad.is_empty() {
                    return Err(Failure::Threshold(bad.join("; ")));
                }
            }
        }
        Cmd::Retention { out } => {
            let dir = artifacts_dir(&cfg, out);
            let mut w = String::from("temp,g_lrs,g_hrs,ratio,open\n");
            let mut closed = Vec::new();
            for d in &cfg.retention.drifts {
                let r = retention_window(&cfg.device, d, cfg.retention.vg_read, cfg.retention.horizon_s)?;
                let open = r.ratio >= cfg.retention.min_ratio;
                w.push_str(&format!("{},{},{},{},{}\n", r.temp, r.g_lrs, r.g_hrs, r.ratio, open));
                if !open {
                    closed.push(format!("{} K", r.temp));
                }
            }
            write_text(&dir.join("retention.csv"), &w)?;
            print!("{w}");
            if cli.check && !closed.is_empty() {
                return Err(Failure::Threshold(format!("window closed at {}", closed.join(", "))));
            }
        }
        Cmd::NoiseTrace { out } => {
            let dir = artifacts_dir(&cfg, out);
            let n = &cfg.noise;
            let seed = cli.seed.unwrap_or(cfg.variation.rng_seed);
            let mut trace = generate_noise_trace(&n.psd, n.duration_s, n.sample_rate_hz, seed)?;
            if let Some(s) = n.target_sigma {
                scale_to_std(&mut trace, s);
            }
            fefet_sim::store::write_trace_csv(&dir.join("noise_trace.csv"), &trace, n.sample_rate_hz)?;
            println!("{} samples", trace.len());
        }
    }
    Ok(())
}
