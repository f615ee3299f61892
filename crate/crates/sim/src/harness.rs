//! Cumulative non-ideality chains, the read-voltage sweep and report output.

use std::fmt::Write as _;
use std::path::Path;

use fefet_core::crossbar::{Encoding, InjectorCounts, MapOptions, ReadNoise};
use fefet_core::network::{default_mapping, Dataset, MappedNetwork, QuantizedNetwork};
use fefet_core::nonideality::{AgingSpec, VariationSpec};
use fefet_core::device::{check_temperature, TEMP_MAX};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{hex_digest, Config};
use crate::error::{SimError, SimResult};
use crate::store::write_text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    D2d,
    Aging,
    Temperature,
    Flicker,
    C2c,
}

impl Step {
    pub const ALL: [Step; 5] = [Step::D2d, Step::Aging, Step::Temperature, Step::Flicker, Step::C2c];

    pub fn key(self) -> &'static str {
        match self {
            Step::D2d => "d2d",
            Step::Aging => "aging",
            Step::Temperature => "temperature",
            Step::Flicker => "flicker",
            Step::C2c => "c2c",
        }
    }

    pub fn from_key(s: &str) -> Option<Step> {
        Step::ALL.into_iter().find(|k| k.key() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// "A", "B", "C" or a custom name.
    pub id: String,
    pub levels: u8,
    pub encoding: Encoding,
    pub vg_read: f64,
    pub cold_temp: f64,
    pub chain: Vec<Step>,
    pub seeds: Vec<u64>,
    pub variation: VariationSpec,
    pub aging: AgingSpec,
    /// Bracket note shown next to the D2D row, e.g. "dG=15%".
    pub d2d_note: String,
    pub verify_read: bool,
    pub max_rows: usize,
    pub max_cols: usize,
}

fn seeds_from(cfg: &Config, seed: Option<u64>) -> Vec<u64> {
    let base = seed.unwrap_or(cfg.scenario.base_seed);
    (0..cfg.scenario.repetitions as u64).map(|r| base + r).collect()
}

impl ScenarioConfig {
    /// One of the three standard chains; `seed` overrides the configured base seed.
    pub fn preset(id: &str, cfg: &Config, seed: Option<u64>) -> SimResult<Self> {
        let mut variation = cfg.variation.clone();
        variation.d2d_level_sigma.clear();
        let (levels, encoding, vg_read, d2d_note) = match id {
            "A" => (2, Encoding::Differential, cfg.scenario.vg_read_digital, pct_note(&variation)),
            "B" => {
                variation.d2d_level_sigma = cfg.measured_d2d.four_level.clone();
                (4, Encoding::Differential, cfg.scenario.vg_read_digital, "meas.".to_string())
            }
            "C" => (4, Encoding::OffsetReferenced, cfg.scenario.vg_read_analog, pct_note(&variation)),
            other => return Err(SimError::Config(format!("unknown scenario preset {other:?}"))),
        };
        let s = Self {
            id: id.to_string(),
            levels,
            encoding,
            vg_read,
            cold_temp: cfg.scenario.cold_temp,
            chain: Step::ALL.to_vec(),
            seeds: seeds_from(cfg, seed),
            variation,
            aging: cfg.aging,
            d2d_note,
            verify_read: true,
            max_rows: cfg.crossbar.max_rows,
            max_cols: cfg.crossbar.max_cols,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> SimResult<()> {
        for (i, s) in self.chain.iter().enumerate() {
            if self.chain[..i].contains(s) {
                return Err(SimError::Config(format!("step {} appears twice", s.key())));
            }
        }
        if self.seeds.is_empty() {
            return Err(SimError::Config("scenario needs at least one seed".into()));
        }
        if self.levels != 2 && self.levels != 4 {
            return Err(SimError::Config("levels must be 2 or 4".into()));
        }
        check_temperature(self.cold_temp).map_err(|e| SimError::Config(e.to_string()))?;
        self.variation.validate().map_err(|e| SimError::Config(e.to_string()))?;
        self.aging.validate().map_err(|e| SimError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn hash(&self, cfg: &Config) -> String {
        let mut bytes = serde_json::to_vec(self).expect("scenario serializes");
        bytes.extend_from_slice(cfg.hash().as_bytes());
        hex_digest(&bytes)
    }
}

/// Percentage with at most one decimal, e.g. 0.007 -> "0.7".
fn pct(x: f64) -> String {
    format!("{}", (x * 1000.0).round() / 10.0)
}

fn pct_note(v: &VariationSpec) -> String {
    format!("dG={}%", pct(v.d2d_sigma_rel))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderRow {
    /// `None` for the baseline row.
    pub step: Option<Step>,
    pub active: Vec<Step>,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Injector applications summed over repetitions.
    pub counts: InjectorCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub levels: u8,
    pub encoding: Encoding,
    pub vg_read: f64,
    pub cold_temp: f64,
    pub flicker_sigma: f64,
    pub c2c_sigma: f64,
    pub d2d_note: String,
    pub seeds: Vec<u64>,
    pub config_hash: String,
    pub timestamp: Option<String>,
    pub rows: Vec<LadderRow>,
}

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

/// Ladder of one repetition: accuracy and injector counts per row.
fn run_once(
    sc: &ScenarioConfig,
    cfg: &Config,
    net: &QuantizedNetwork,
    test: &Dataset,
    seed: u64,
) -> SimResult<Vec<(f64, InjectorCounts)>> {
    let mapping = default_mapping(sc.levels, sc.encoding);
    let params = cfg.device.with_levels(sc.levels);
    let opts = MapOptions {
        vg_read: sc.vg_read,
        seed,
        tile_id: 0,
        max_rows: sc.max_rows,
        max_cols: sc.max_cols,
        verify_read: sc.verify_read,
    };
    let mut mapped = MappedNetwork::program(net, &mapping, &params, &cfg.programming, &opts)?;
    let mut variation = sc.variation.clone();
    variation.rng_seed = seed;
    let mut noise = ReadNoise { seed, ..ReadNoise::NONE };

    let eval = |mapped: &MappedNetwork, noise: &ReadNoise| -> SimResult<(f64, InjectorCounts)> {
        let mut counts = InjectorCounts::default();
        let pred = mapped.predict(&test.images, test.len(), noise, &mut counts)?;
        Ok((fefet_core::network::accuracy(&pred, &test.labels), counts))
    };

    let mut out = Vec::with_capacity(sc.chain.len() + 1);
    let base = eval(&mapped, &noise)?;
    if base.1.total() != 0 {
        return Err(SimError::Artifact("non-ideality active during baseline evaluation".into()));
    }
    out.push(base);
    for step in &sc.chain {
        match step {
            Step::D2d => mapped.for_each_tile(|t| t.apply_d2d(&variation))?,
            Step::Aging => mapped.for_each_tile(|t| t.set_aging(Some(sc.aging)))?,
            Step::Temperature => mapped.for_each_tile(|t| t.set_temperature(sc.cold_temp))?,
            Step::Flicker => noise.flicker_sigma = sc.variation.flicker_sigma_rel,
            Step::C2c => noise.c2c_sigma = sc.variation.c2c_sigma_rel,
        }
        out.push(eval(&mapped, &noise)?);
    }
    Ok(out)
}

/// Programs the network once per seed and evaluates every cumulative step.
pub fn run_scenario(
    sc: &ScenarioConfig,
    cfg: &Config,
    net: &QuantizedNetwork,
    test: &Dataset,
) -> SimResult<ScenarioReport> {
    sc.validate()?;
    if net.levels != sc.levels {
        return Err(SimError::Config(format!(
            "scenario {} needs a {}-level network, got {}",
            sc.id, sc.levels, net.levels
        )));
    }
    let runs: Vec<Vec<(f64, InjectorCounts)>> = sc
        .seeds
        .par_iter()
        .map(|&s| run_once(sc, cfg, net, test, s))
        .collect::<SimResult<_>>()?;

    let mut rows = Vec::with_capacity(sc.chain.len() + 1);
    for i in 0..=sc.chain.len() {
        let accuracies: Vec<f64> = runs.iter().map(|r| r[i].0).collect();
        let mut counts = InjectorCounts::default();
        for r in &runs {
            counts.add(&r[i].1);
        }
        let (mean, std) = mean_std(&accuracies);
        rows.push(LadderRow {
            step: if i == 0 { None } else { Some(sc.chain[i - 1]) },
            active: sc.chain[..i].to_vec(),
            accuracies,
            mean,
            std,
            counts,
        });
    }
    Ok(ScenarioReport {
        scenario: sc.id.clone(),
        levels: sc.levels,
        encoding: sc.encoding,
        vg_read: sc.vg_read,
        cold_temp: sc.cold_temp,
        flicker_sigma: sc.variation.flicker_sigma_rel,
        c2c_sigma: sc.variation.c2c_sigma_rel,
        d2d_note: sc.d2d_note.clone(),
        seeds: sc.seeds.clone(),
        config_hash: sc.hash(cfg),
        timestamp: None,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub vg_read: Vec<f64>,
    pub temps: Vec<f64>,
    /// `accuracy[v][t]`, averaged over seeds.
    pub accuracy: Vec<Vec<f64>>,
    /// Voltage with the best worst-case accuracy over temperature.
    pub best_vg: f64,
    pub seeds: Vec<u64>,
}

impl SweepReport {
    /// Accuracy lost from the nominal (first) temperature to temperature `t`.
    pub fn drop(&self, v: usize, t: usize) -> f64 {
        self.accuracy[v][0] - self.accuracy[v][t]
    }
}

/// Accuracy of `net` programmed and read at each voltage, evaluated at each
/// temperature. The voltage noise check is skipped so that voltages outside
/// the safe read range can still be characterized.
pub fn sweep_read_voltage(
    vg_list: &[f64],
    temps: &[f64],
    cfg: &Config,
    net: &QuantizedNetwork,
    test: &Dataset,
    seeds: &[u64],
) -> SimResult<SweepReport> {
    if vg_list.is_empty() || temps.is_empty() || seeds.is_empty() {
        return Err(SimError::Config("sweep needs voltages, temperatures and seeds".into()));
    }
    for &t in temps {
        check_temperature(t)?;
    }
    let mapping = default_mapping(net.levels, Encoding::Differential);
    let params = cfg.device.with_levels(net.levels);
    let jobs: Vec<(usize, u64)> =
        (0..vg_list.len()).flat_map(|v| seeds.iter().map(move |&s| (v, s))).collect();
    let results: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(v, seed)| -> SimResult<Vec<f64>> {
            let opts = MapOptions {
                vg_read: vg_list[v],
                seed,
                tile_id: 0,
                max_rows: cfg.crossbar.max_rows,
                max_cols: cfg.crossbar.max_cols,
                verify_read: false,
            };
            let mut mapped = MappedNetwork::program(net, &mapping, &params, &cfg.programming, &opts)?;
            let mut accs = Vec::with_capacity(temps.len());
            for &t in temps {
                mapped.for_each_tile(|tile| tile.set_temperature(t))?;
                let mut counts = InjectorCounts::default();
                let pred = mapped.predict(&test.images, test.len(), &ReadNoise::NONE, &mut counts)?;
                accs.push(fefet_core::network::accuracy(&pred, &test.labels));
            }
            Ok(accs)
        })
        .collect::<SimResult<_>>()?;

    let mut accuracy = vec![vec![0.0; temps.len()]; vg_list.len()];
    for (&(v, _), r) in jobs.iter().zip(&results) {
        for (a, x) in accuracy[v].iter_mut().zip(r) {
            *a += x / seeds.len() as f64;
        }
    }
    let worst = |row: &Vec<f64>| row.iter().copied().fold(f64::INFINITY, f64::min);
    let mut best = 0;
    for v in 1..vg_list.len() {
        if worst(&accuracy[v]) > worst(&accuracy[best]) {
            best = v;
        }
    }
    Ok(SweepReport { vg_read: vg_list.to_vec(), temps: temps.to_vec(), accuracy, best_vg: vg_list[best], seeds: seeds.to_vec() })
}

pub fn sweep_csv(r: &SweepReport) -> SimResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["vg_read", "temp", "accuracy"])?;
    for (v, row) in r.vg_read.iter().zip(&r.accuracy) {
        for (t, a) in r.temps.iter().zip(row) {
            w.write_record([v.to_string(), t.to_string(), a.to_string()])?;
        }
    }
    finish(w)
}

fn finish(w: csv::Writer<Vec<u8>>) -> SimResult<String> {
    let bytes = w.into_inner().map_err(|e| SimError::Artifact(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| SimError::Artifact(e.to_string()))
}

/// Reference accuracies of the three standard chains, by row.
pub const REFERENCE: [(&str, [f64; 6]); 3] = [
    ("A", [96.4, 96.1, 96.1, 96.1, 96.0, 96.0]),
    ("B", [97.6, 97.3, 95.9, 46.6, 46.3, 45.8]),
    ("C", [95.9, 94.7, 10.0, 10.0, 10.0, 10.0]),
];

pub fn reference_value(scenario: &str, step: Option<Step>) -> Option<f64> {
    let row = match step {
        None => 0,
        Some(s) => 1 + Step::ALL.iter().position(|&k| k == s)?,
    };
    REFERENCE.iter().find(|(id, _)| *id == scenario).map(|(_, v)| v[row])
}

const REPORT_NOTE: &str = "Note: the binary reference baseline (96.4%) is higher than the best \
binary training accuracy quoted alongside it (95.5%). Training targets follow the latter; \
the ladder references follow the former.";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Text,
}

fn step_label(r: &ScenarioReport, step: Option<Step>) -> String {
    match step {
        None => format!("Baseline ({}K)", TEMP_MAX),
        Some(Step::D2d) => "Device-to-device G variation".to_string(),
        Some(Step::Aging) => "Device aging".to_string(),
        Some(Step::Temperature) => format!("Temperature {}K", r.cold_temp),
        Some(Step::Flicker) => format!("Flicker noise (sigma={}%)", pct(r.flicker_sigma)),
        Some(Step::C2c) => format!("C2C variation (sigma={}%)", pct(r.c2c_sigma)),
    }
}

const COUNT_FIELDS: [&str; 5] = ["n_d2d", "n_aging", "n_temperature", "n_flicker", "n_c2c"];

/// CSV with `#key=value` metadata lines followed by one record per ladder row.
pub fn report_csv(r: &ScenarioReport) -> SimResult<String> {
    let mut s = String::new();
    let seeds: Vec<String> = r.seeds.iter().map(u64::to_string).collect();
    let meta = [
        ("scenario", r.scenario.clone()),
        ("levels", r.levels.to_string()),
        ("encoding", format!("{:?}", r.encoding)),
        ("vg_read", r.vg_read.to_string()),
        ("cold_temp", r.cold_temp.to_string()),
        ("flicker_sigma", r.flicker_sigma.to_string()),
        ("c2c_sigma", r.c2c_sigma.to_string()),
        ("d2d_note", r.d2d_note.clone()),
        ("seeds", seeds.join(";")),
        ("config_hash", r.config_hash.clone()),
    ];
    for (k, v) in meta {
        let _ = writeln!(s, "#{k}={v}");
    }
    if let Some(t) = &r.timestamp {
        let _ = writeln!(s, "#timestamp={t}");
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["row".to_string(), "step".into(), "active".into(), "mean".into(), "std".into()];
    header.extend(COUNT_FIELDS.iter().map(|f| f.to_string()));
    header.extend((0..r.seeds.len()).map(|i| format!("acc_{i}")));
    w.write_record(&header)?;
    for (i, row) in r.rows.iter().enumerate() {
        let c = row.counts;
        let mut rec = vec![
            i.to_string(),
            row.step.map_or("baseline", Step::key).to_string(),
            row.active.iter().map(|s| s.key()).collect::<Vec<_>>().join("+"),
            row.mean.to_string(),
            row.std.to_string(),
        ];
        rec.extend([c.d2d, c.aging, c.temperature, c.flicker, c.c2c].map(|n| n.to_string()));
        rec.extend(row.accuracies.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    s.push_str(&finish(w)?);
    Ok(s)
}

fn bad(msg: impl Into<String>) -> SimError {
    SimError::Artifact(msg.into())
}

fn num<T: std::str::FromStr>(s: &str, what: &str) -> SimResult<T> {
    s.parse().map_err(|_| bad(format!("bad {what}: {s:?}")))
}

pub fn parse_report_csv(text: &str) -> SimResult<ScenarioReport> {
    let mut meta = std::collections::BTreeMap::new();
    let mut body = String::new();
    for line in text.lines() {
        match line.strip_prefix('#') {
            Some(kv) => {
                let (k, v) = kv.split_once('=').ok_or_else(|| bad("malformed metadata line"))?;
                meta.insert(k.to_string(), v.to_string());
            }
            None => {
                body.push_str(line);
                body.push('\n');
            }
        }
    }
    let get = |k: &str| meta.get(k).cloned().ok_or_else(|| bad(format!("missing metadata {k}")));
    let encoding = match get("encoding")?.as_str() {
        "Differential" => Encoding::Differential,
        "OffsetReferenced" => Encoding::OffsetReferenced,
        e => return Err(bad(format!("unknown encoding {e}"))),
    };
    let seeds_s = get("seeds")?;
    let seeds: Vec<u64> = if seeds_s.is_empty() {
        Vec::new()
    } else {
        seeds_s.split(';').map(|s| num(s, "seed")).collect::<SimResult<_>>()?
    };
    let mut rows = Vec::new();
    let mut rd = csv::Reader::from_reader(body.as_bytes());
    for rec in rd.records() {
        let rec = rec?;
        let f = |i: usize| rec.get(i).ok_or_else(|| bad("short record"));
        let step = match f(1)? {
            "baseline" => None,
            k => Some(Step::from_key(k).ok_or_else(|| bad(format!("unknown step {k}")))?),
        };
        let active_s = f(2)?;
        let active = if active_s.is_empty() {
            Vec::new()
        } else {
            active_s
                .split('+')
                .map(|k| Step::from_key(k).ok_or_else(|| bad(format!("unknown step {k}"))))
                .collect::<SimResult<_>>()?
        };
        let n: Vec<u64> = (5..10).map(|i| num(f(i)?, "count")).collect::<SimResult<_>>()?;
        let accuracies = (10..rec.len()).map(|i| num(f(i)?, "accuracy")).collect::<SimResult<_>>()?;
        rows.push(LadderRow {
            step,
            active,
            accuracies,
            mean: num(f(3)?, "mean")?,
            std: num(f(4)?, "std")?,
            counts: InjectorCounts { d2d: n[0], aging: n[1], temperature: n[2], flicker: n[3], c2c: n[4] },
        });
    }
    Ok(ScenarioReport {
        scenario: get("scenario")?,
        levels: num(&get("levels")?, "levels")?,
        encoding,
        vg_read: num(&get("vg_read")?, "vg_read")?,
        cold_temp: num(&get("cold_temp")?, "cold_temp")?,
        flicker_sigma: num(&get("flicker_sigma")?, "flicker_sigma")?,
        c2c_sigma: num(&get("c2c_sigma")?, "c2c_sigma")?,
        d2d_note: get("d2d_note")?,
        seeds,
        config_hash: get("config_hash")?,
        timestamp: meta.get("timestamp").cloned(),
        rows,
    })
}

/// Side-by-side ladder of several scenarios, one column per report, with the
/// reference value in brackets where one exists.
pub fn report_table(reports: &[ScenarioReport]) -> String {
    let mut steps: Vec<Option<Step>> = vec![None];
    for r in reports {
        for row in &r.rows {
            if !steps.contains(&row.step) {
                steps.push(row.step);
            }
        }
    }
    let label_src = reports.first();
    let labels: Vec<String> = steps
        .iter()
        .map(|&s| {
            let mut l = label_src.map(|r| step_label(r, s)).unwrap_or_default();
            if s == Some(Step::D2d) {
                let notes: Vec<&str> = reports.iter().map(|r| r.d2d_note.as_str()).collect();
                let _ = write!(l, " [{}]", notes.join(" / "));
            }
            l
        })
        .collect();
    let cells: Vec<Vec<String>> = steps
        .iter()
        .map(|&s| {
            reports
                .iter()
                .map(|r| match r.rows.iter().find(|row| row.step == s) {
                    None => "-".to_string(),
                    Some(row) => {
                        let mut c = format!("{:.2} ± {:.2}", row.mean, row.std);
                        if let Some(x) = reference_value(&r.scenario, s) {
                            let _ = write!(c, " [{x:.1}]");
                        }
                        c
                    }
                })
                .collect()
        })
        .collect();
    let headers: Vec<String> = reports
        .iter()
        .map(|r| format!("Scenario {} ({}-level, {:?}, vg={} V)", r.scenario, r.levels, r.encoding, r.vg_read))
        .collect();

    let w0 = labels.iter().map(|l| l.chars().count()).max().unwrap_or(0).max(4);
    let widths: Vec<usize> = (0..reports.len())
        .map(|j| {
            cells.iter().map(|row| row[j].chars().count()).chain([headers[j].chars().count()]).max().unwrap_or(0)
        })
        .collect();
    let pad = |s: &str, w: usize| format!("{s}{}", " ".repeat(w.saturating_sub(s.chars().count())));

    let mut out = String::new();
    let n_reps = reports.iter().map(|r| r.seeds.len()).max().unwrap_or(0);
    let _ = writeln!(out, "Inference accuracy (%) under cumulative non-idealities, mean ± std over {n_reps} repetitions; reference in brackets");
    let mut line = pad("Row", w0);
    for (h, &w) in headers.iter().zip(&widths) {
        let _ = write!(line, " | {}", pad(h, w));
    }
    let _ = writeln!(out, "{}", line.trim_end());
    let _ = writeln!(out, "{}", "-".repeat(line.chars().count()));
    for (l, row) in labels.iter().zip(&cells) {
        let mut line = pad(l, w0);
        for (c, &w) in row.iter().zip(&widths) {
            let _ = write!(line, " | {}", pad(c, w));
        }
        let _ = writeln!(out, "{}", line.trim_end());
    }
    for r in reports {
        let _ = writeln!(out, "config {}: {}", r.scenario, r.config_hash);
        if let Some(t) = &r.timestamp {
            let _ = writeln!(out, "run {}: {t}", r.scenario);
        }
    }
    let _ = writeln!(out, "{REPORT_NOTE}");
    out
}

/// Writes `report` to `path` in the chosen format.
pub fn emit_report(report: &ScenarioReport, format: ReportFormat, path: &Path) -> SimResult<()> {
    let text = match format {
        ReportFormat::Csv => report_csv(report)?,
        ReportFormat::Text => report_table(std::slice::from_ref(report)),
    };
    write_text(path, &text)
}

/// Seconds since the Unix epoch, for reports that opt into a timestamp.
pub fn unix_timestamp() -> String {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs().to_string())
        .unwrap_or_default()
}

/// Trend check for the standard chains; `None` when the ladder behaves.
pub fn trend_violation(r: &ScenarioReport) -> Option<String> {
    let base = r.rows[0].mean;
    let at = |s: Step| r.rows.iter().position(|row| row.step == Some(s));
    match r.scenario.as_str() {
        "A" => {
            let worst = r.rows.iter().map(|row| base - row.mean).fold(f64::NEG_INFINITY, f64::max);
            (worst > 1.0).then(|| format!("A degrades by {worst:.2} points"))
        }
        "B" => {
            let i = at(Step::Temperature)?;
            let d = r.rows[i - 1].mean - r.rows[i].mean;
            (d < 30.0).then(|| format!("B loses only {d:.2} points at the temperature step"))
        }
        "C" => {
            let i = at(Step::Aging)?;
            let off = r.rows[i..].iter().any(|row| !(8.0..=15.0).contains(&row.mean));
            off.then(|| "C is not at chance level from the aging step on".to_string())
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(chain: &[Step]) -> ScenarioReport {
        let mut rows = vec![LadderRow {
            step: None,
            active: vec![],
            accuracies: vec![97.5, 97.25],
            mean: 97.375,
            std: 0.1767766952966369,
            counts: InjectorCounts::default(),
        }];
        for (i, &s) in chain.iter().enumerate() {
            rows.push(LadderRow {
                step: Some(s),
                active: chain[..=i].to_vec(),
                accuracies: vec![90.0 - i as f64, 90.1 - i as f64],
                mean: 90.05 - i as f64,
                std: 0.07,
                counts: InjectorCounts { d2d: 3, c2c: i as u64, ..Default::default() },
            });
        }
        ScenarioReport {
            scenario: "B".into(),
            levels: 4,
            encoding: Encoding::Differential,
            vg_read: 0.75,
            cold_temp: 233.0,
            flicker_sigma: 0.007,
            c2c_sigma: 0.012,
            d2d_note: "meas.".into(),
            seeds: vec![1, 2],
            config_hash: "abc".into(),
            timestamp: None,
            rows,
        }
    }

    #[test]
    fn step_keys_round_trip() {
        for s in Step::ALL {
            assert_eq!(Step::from_key(s.key()), Some(s));
        }
        assert_eq!(Step::from_key("baseline"), None);
    }

    #[test]
    fn csv_round_trip() {
        let mut r = report(&Step::ALL);
        r.timestamp = Some("123".into());
        let back = parse_report_csv(&report_csv(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn empty_chain_table_has_one_row() {
        let t = report_table(&[report(&[])]);
        let body: Vec<&str> = t.lines().filter(|l| l.contains(" | ")).collect();
        assert_eq!(body.len(), 2);
        assert!(body[1].starts_with("Baseline (300K)"));
        assert!(body[1].contains("[97.6]"));
    }

    #[test]
    fn reference_lookup() {
        assert_eq!(reference_value("B", Some(Step::Temperature)), Some(46.6));
        assert_eq!(reference_value("C", None), Some(95.9));
        assert_eq!(reference_value("X", None), None);
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - 1.2909944487358056).abs() < 1e-15);
        assert_eq!(mean_std(&[5.0]), (5.0, 0.0));
    }

    #[test]
    fn duplicate_steps_rejected() {
        let cfg = Config::default();
        let mut sc = ScenarioConfig::preset("A", &cfg, None).unwrap();
        sc.chain = vec![Step::D2d, Step::D2d];
        assert!(sc.validate().is_err());
        assert!(ScenarioConfig::preset("Z", &cfg, None).is_err());
    }
}
