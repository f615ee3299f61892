//! Weight mapping onto FE-FinFET pairs and analog matrix-vector products.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::device::{check_temperature, DeviceParams};
use crate::nonideality::{aging_factor, d2d_factor, AgingSpec, VariationSpec, CONDUCTANCE_EPS};
use crate::programming::{
    adaptive_program, program_order, target_bands, verify_read_voltage, DeviceInstance,
    ProgramConfig, TargetBand, TranscriptRow,
};
use crate::rng::{pair_index, stream, Purpose};
use crate::{Error, Result};

/// How a signed weight is carried by devices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Encoding {
    /// Weight ∝ G⁺ − G⁻ on a device pair.
    Differential,
    /// Weight ∝ G − G_ref on one device, with G_ref a digital reference
    /// calibrated at programming time.
    OffsetReferenced,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodebookEntry {
    pub value: f32,
    pub pos: u8,
    pub neg: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMapping {
    pub levels_per_device: u8,
    pub encoding: Encoding,
    pub codebook: Vec<CodebookEntry>,
}

const CODEBOOK_TOL: f32 = 1e-4;

impl WeightMapping {
    /// `+1 → (LRS, HRS)`, `−1 → (HRS, LRS)`.
    pub fn binary() -> Self {
        Self {
            levels_per_device: 2,
            encoding: Encoding::Differential,
            codebook: alloc::vec![
                CodebookEntry { value: -1.0, pos: 0, neg: 1 },
                CodebookEntry { value: 1.0, pos: 1, neg: 0 },
            ],
        }
    }

    /// `{−1, −1/3, +1/3, +1} → {(0,3), (1,2), (2,1), (3,0)}`.
    pub fn four_level() -> Self {
        Self {
            levels_per_device: 4,
            encoding: Encoding::Differential,
            codebook: alloc::vec![
                CodebookEntry { value: -1.0, pos: 0, neg: 3 },
                CodebookEntry { value: -1.0 / 3.0, pos: 1, neg: 2 },
                CodebookEntry { value: 1.0 / 3.0, pos: 2, neg: 1 },
                CodebookEntry { value: 1.0, pos: 3, neg: 0 },
            ],
        }
    }

    /// Signed `{−3..+3}/3` on 4-level pairs, zero at `(0, 0)`.
    pub fn four_level_signed() -> Self {
        let pairs: [(i8, u8, u8); 7] =
            [(-3, 0, 3), (-2, 1, 3), (-1, 0, 1), (0, 0, 0), (1, 1, 0), (2, 3, 1), (3, 3, 0)];
        let codebook = pairs
            .iter()
            .map(|&(k, pos, neg)| CodebookEntry { value: k as f32 / 3.0, pos, neg })
            .collect();
        Self { levels_per_device: 4, encoding: Encoding::Differential, codebook }
    }

    /// One device per weight; `value = 2·level/(n−1) − 1`.
    pub fn offset_referenced(levels: u8) -> Self {
        let codebook = (0..levels)
            .map(|l| CodebookEntry {
                value: 2.0 * l as f32 / (levels - 1) as f32 - 1.0,
                pos: l,
                neg: 0,
            })
            .collect();
        Self { levels_per_device: levels, encoding: Encoding::OffsetReferenced, codebook }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.levels_per_device;
        if n != 2 && n != 4 {
            return Err(Error::InvalidParams("levels per device must be 2 or 4".into()));
        }
        for (i, a) in self.codebook.iter().enumerate() {
            if a.pos >= n || a.neg >= n {
                return Err(Error::InvalidParams("codebook level out of range".into()));
            }
            if a.value == 0.0 && self.encoding == Encoding::Differential && (a.pos, a.neg) != (0, 0) {
                return Err(Error::InvalidParams("zero weight must map to (0, 0)".into()));
            }
            for b in &self.codebook[i + 1..] {
                let same_pair = match self.encoding {
                    Encoding::Differential => (a.pos, a.neg) == (b.pos, b.neg),
                    Encoding::OffsetReferenced => a.pos == b.pos,
                };
                if (a.value - b.value).abs() <= CODEBOOK_TOL || same_pair {
                    return Err(Error::InvalidParams("codebook is not injective".into()));
                }
            }
        }
        Ok(())
    }

    pub fn lookup(&self, value: f32) -> Option<CodebookEntry> {
        self.codebook
            .iter()
            .find(|e| (e.value - value).abs() <= CODEBOOK_TOL)
            .copied()
    }

    /// Nearest codebook value to a read-back weight.
    pub fn nearest(&self, value: f64) -> f32 {
        self.codebook
            .iter()
            .min_by(|a, b| {
                let da = (a.value as f64 - value).abs();
                let db = (b.value as f64 - value).abs();
                da.total_cmp(&db)
            })
            .map(|e| e.value)
            .unwrap_or(0.0)
    }

    pub fn devices_per_weight(&self) -> usize {
        match self.encoding {
            Encoding::Differential => 2,
            Encoding::OffsetReferenced => 1,
        }
    }
}

/// Tally of non-ideality applications, used to prove a baseline is clean.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectorCounts {
    pub d2d: u64,
    pub aging: u64,
    pub temperature: u64,
    pub flicker: u64,
    pub c2c: u64,
}

impl InjectorCounts {
    pub fn total(&self) -> u64 {
        self.d2d + self.aging + self.temperature + self.flicker + self.c2c
    }

    pub fn add(&mut self, o: &InjectorCounts) {
        self.d2d += o.d2d;
        self.aging += o.aging;
        self.temperature += o.temperature;
        self.flicker += o.flicker;
        self.c2c += o.c2c;
    }
}

/// Per-read current fluctuations applied to column sums.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReadNoise {
    pub flicker_sigma: f64,
    pub c2c_sigma: f64,
    pub seed: u64,
}

impl ReadNoise {
    pub const NONE: ReadNoise = ReadNoise { flicker_sigma: 0.0, c2c_sigma: 0.0, seed: 0 };

    pub fn from_spec(spec: &VariationSpec) -> Self {
        Self {
            flicker_sigma: spec.flicker_sigma_rel,
            c2c_sigma: spec.c2c_sigma_rel,
            seed: spec.rng_seed,
        }
    }

    pub fn is_silent(&self) -> bool {
        self.flicker_sigma == 0.0 && self.c2c_sigma == 0.0
    }

    fn factors<R: Rng + ?Sized>(&self, rng: &mut R, counts: &mut InjectorCounts) -> f64 {
        let mut f = 1.0;
        if self.flicker_sigma > 0.0 {
            let e: f64 = rng.sample(StandardNormal);
            f *= 1.0 + self.flicker_sigma * e;
            counts.flicker += 1;
        }
        if self.c2c_sigma > 0.0 {
            let e: f64 = rng.sample(StandardNormal);
            f *= 1.0 + self.c2c_sigma * e;
            counts.c2c += 1;
        }
        f
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapOptions {
    pub vg_read: f64,
    pub seed: u64,
    pub tile_id: u64,
    pub max_rows: usize,
    pub max_cols: usize,
    /// Run the read-voltage sanity check on a reference LRS device first.
    pub verify_read: bool,
}

impl Default for MapOptions {
    fn default() -> Self {
        Self { vg_read: 0.75, seed: 0, tile_id: 0, max_rows: 1024, max_cols: 1024, verify_read: true }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProgrammingStats {
    pub devices: u64,
    pub converged: u64,
    /// `iteration_histogram[k]` counts devices that finished after `k` iterations.
    pub iteration_histogram: Vec<u64>,
    pub pulses: u64,
}

impl ProgrammingStats {
    pub fn convergence_rate(&self) -> f64 {
        if self.devices == 0 {
            1.0
        } else {
            self.converged as f64 / self.devices as f64
        }
    }

    pub fn merge(&mut self, o: &ProgrammingStats) {
        self.devices += o.devices;
        self.converged += o.converged;
        self.pulses += o.pulses;
        if self.iteration_histogram.len() < o.iteration_histogram.len() {
            self.iteration_histogram.resize(o.iteration_histogram.len(), 0);
        }
        for (a, b) in self.iteration_histogram.iter_mut().zip(&o.iteration_histogram) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossbarTile {
    pub rows: usize,
    pub cols: usize,
    pub params: DeviceParams,
    pub mapping: WeightMapping,
    pub vg_read: f64,
    pub vds_read: f64,
    pub temp: f64,
    pub seed: u64,
    pub tile_id: u64,
    /// Row-major (input, output) devices.
    pub pos: Vec<DeviceInstance>,
    /// Empty for offset-referenced tiles.
    pub neg: Vec<DeviceInstance>,
    /// Conductance per unit weight, fixed at programming (S).
    pub unit_g: f64,
    /// Digital reference conductance for offset-referenced reads (S).
    pub ref_g: f64,
    pub bands: Vec<TargetBand>,
    /// D2D factors for `pos` then `neg`; empty when disabled.
    pub d2d: Vec<f64>,
    pub aging: Option<AgingSpec>,
}

/// Programs a quantized weight matrix (row = input, column = output).
pub fn map_weights(
    weights: &[f32],
    rows: usize,
    cols: usize,
    mapping: &WeightMapping,
    params: &DeviceParams,
    cfg: &ProgramConfig,
    opts: &MapOptions,
    mut transcript: Option<&mut Vec<TranscriptRow>>,
) -> Result<(CrossbarTile, ProgrammingStats)> {
    mapping.validate()?;
    if weights.len() != rows * cols {
        return Err(Error::DimensionMismatch { expected: rows * cols, got: weights.len() });
    }
    if rows > opts.max_rows || cols > opts.max_cols {
        return Err(Error::InvalidParams("tile exceeds configured dimensions".into()));
    }
    let p = params.with_levels(mapping.levels_per_device);
    p.validate()?;
    let entries: Vec<CodebookEntry> = weights
        .iter()
        .map(|&w| mapping.lookup(w).ok_or(Error::NotInCodebook(w)))
        .collect::<Result<_>>()?;

    if opts.verify_read {
        let reference = DeviceInstance::at_level(&p, 0, p.n_levels - 1);
        let mut rng = stream(opts.seed, Purpose::Program, u64::MAX);
        verify_read_voltage(&p, cfg, &reference, &[opts.vg_read], &mut rng)?;
    }
    let bands = target_bands(&p, opts.vg_read, cfg)?;
    let lo = bands[0].center();
    let hi = bands[bands.len() - 1].center();
    let (unit_g, ref_g) = match mapping.encoding {
        Encoding::Differential => (hi - lo, 0.0),
        Encoding::OffsetReferenced => (0.5 * (hi - lo), 0.5 * (hi + lo)),
    };

    let n = rows * cols;
    let both = mapping.encoding == Encoding::Differential;
    let targets: Vec<u8> = entries
        .iter()
        .map(|e| e.pos)
        .chain(entries.iter().filter(|_| both).map(|e| e.neg))
        .collect();
    let mut devices: Vec<DeviceInstance> =
        (0..targets.len()).map(|k| DeviceInstance::erased(&p, k as u64)).collect();

    let mut stats = ProgrammingStats {
        devices: targets.len() as u64,
        iteration_histogram: alloc::vec![0; cfg.budget as usize + 1],
        ..Default::default()
    };
    for level in program_order(p.n_levels) {
        for (k, dev) in devices.iter_mut().enumerate() {
            if targets[k] != level {
                continue;
            }
            let mut rng = stream(opts.seed, Purpose::Program, pair_index(opts.tile_id, k as u64));
            let out = adaptive_program(
                &p,
                cfg,
                dev,
                &bands[level as usize],
                opts.vg_read,
                cfg.budget,
                &mut rng,
                transcript.as_deref_mut(),
            )?;
            stats.converged += out.converged as u64;
            stats.iteration_histogram[out.iterations as usize] += 1;
            stats.pulses += dev.pulses as u64;
        }
    }
    let neg = devices.split_off(n);
    Ok((
        CrossbarTile {
            rows,
            cols,
            params: p,
            mapping: mapping.clone(),
            vg_read: opts.vg_read,
            vds_read: p.vds_read,
            temp: p.t_nom,
            seed: opts.seed,
            tile_id: opts.tile_id,
            pos: devices,
            neg,
            unit_g,
            ref_g,
            bands,
            d2d: Vec::new(),
            aging: None,
        },
        stats,
    ))
}

impl CrossbarTile {
    pub fn set_temperature(&mut self, temp: f64) -> Result<()> {
        check_temperature(temp)?;
        self.temp = temp;
        Ok(())
    }

    /// Draws per-device D2D factors; sigma may depend on the programmed level.
    pub fn apply_d2d(&mut self, spec: &VariationSpec) -> Result<()> {
        spec.validate()?;
        let tile = self.tile_id;
        self.d2d = self
            .pos
            .iter()
            .chain(&self.neg)
            .enumerate()
            .map(|(k, d)| {
                d2d_factor(spec.d2d_sigma_for_level(d.state.level()), spec.rng_seed, pair_index(tile, k as u64))
            })
            .collect();
        Ok(())
    }

    pub fn clear_d2d(&mut self) {
        self.d2d.clear();
    }

    pub fn set_aging(&mut self, aging: Option<AgingSpec>) -> Result<()> {
        if let Some(a) = &aging {
            a.validate()?;
        }
        self.aging = aging;
        Ok(())
    }

    /// Conductance of device `k` (pos then neg) with the enabled injectors.
    fn device_g(&self, k: usize, dev: &DeviceInstance, counts: &mut InjectorCounts) -> Result<f64> {
        let mut g = dev.conductance(&self.params, self.vg_read + dev.vg_trim, self.temp)?;
        if self.temp != self.params.t_nom {
            counts.temperature += 1;
        }
        if let Some(f) = self.d2d.get(k) {
            g = (g * f).max(CONDUCTANCE_EPS);
            counts.d2d += 1;
        }
        if let Some(a) = &self.aging {
            g *= aging_factor(dev.state.level(), self.params.n_levels, a);
            counts.aging += 1;
        }
        Ok(g)
    }

    fn bare_g(&self, dev: &DeviceInstance) -> Result<f64> {
        dev.conductance(&self.params, self.vg_read + dev.vg_trim, self.temp)
    }

    /// Per-cell `(G⁺, G⁻)`. Without `noiseless`, D2D, aging and one fresh
    /// flicker and C2C draw per device read are applied.
    pub fn read_conductance_matrix(
        &self,
        noiseless: bool,
        noise: &ReadNoise,
        read_index: u64,
    ) -> Result<Vec<(f64, f64)>> {
        let n = self.rows * self.cols;
        let mut out = Vec::with_capacity(n);
        let mut counts = InjectorCounts::default();
        let mut rng = stream(noise.seed, Purpose::ReadNoise, pair_index(!self.tile_id, read_index));
        for i in 0..n {
            let (gp, gn) = if noiseless {
                (self.bare_g(&self.pos[i])?, self.neg_g_bare(i)?)
            } else {
                let gp = self.device_g(i, &self.pos[i], &mut counts)? * noise.factors(&mut rng, &mut counts);
                let gn = match self.neg.get(i) {
                    Some(d) => self.device_g(n + i, d, &mut counts)? * noise.factors(&mut rng, &mut counts),
                    None => self.ref_g,
                };
                (gp, gn)
            };
            out.push((gp, gn));
        }
        Ok(out)
    }

    fn neg_g_bare(&self, i: usize) -> Result<f64> {
        match self.neg.get(i) {
            Some(d) => self.bare_g(d),
            None => Ok(self.ref_g),
        }
    }

    /// Row-major `(G⁺ − G⁻)·vds`: column current per unit input activation.
    pub fn effective_weights(&self, counts: &mut InjectorCounts) -> Result<Vec<f64>> {
        let n = self.rows * self.cols;
        let mut w = Vec::with_capacity(n);
        for i in 0..n {
            let gp = self.device_g(i, &self.pos[i], counts)?;
            let gn = match self.neg.get(i) {
                Some(d) => self.device_g(n + i, d, counts)?,
                None => self.ref_g,
            };
            w.push((gp - gn) * self.vds_read);
        }
        Ok(w)
    }

    /// Column current of one unit weight at unit input, at programming conditions.
    pub fn unit_current(&self) -> f64 {
        self.unit_g * self.vds_read
    }

    /// Column currents `I_j = Σ_i x_i (G⁺_ij − G⁻_ij) vds`, with one flicker
    /// and one C2C factor per column read. Inputs are clipped to [0, 1].
    pub fn analog_matvec(
        &self,
        input: &[f64],
        noise: &ReadNoise,
        read_index: u64,
        counts: &mut InjectorCounts,
    ) -> Result<Vec<f64>> {
        let w = self.effective_weights(counts)?;
        self.matmul_with(&w, input, 1, noise, read_index, counts)
    }

    /// Batched matvec over `batch` row-major inputs; item `b` uses read index
    /// `read_base + b`.
    pub fn analog_matmul(
        &self,
        inputs: &[f64],
        batch: usize,
        noise: &ReadNoise,
        read_base: u64,
        counts: &mut InjectorCounts,
    ) -> Result<Vec<f64>> {
        let w = self.effective_weights(counts)?;
        self.matmul_with(&w, inputs, batch, noise, read_base, counts)
    }

    /// Same as [`Self::analog_matmul`] with precomputed effective weights.
    pub fn matmul_with(
        &self,
        w: &[f64],
        inputs: &[f64],
        batch: usize,
        noise: &ReadNoise,
        read_base: u64,
        counts: &mut InjectorCounts,
    ) -> Result<Vec<f64>> {
        if inputs.len() != batch * self.rows {
            return Err(Error::DimensionMismatch { expected: batch * self.rows, got: inputs.len() });
        }
        if w.len() != self.rows * self.cols {
            return Err(Error::DimensionMismatch { expected: self.rows * self.cols, got: w.len() });
        }
        let x: Vec<f64> = inputs.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let mut out = alloc::vec![0.0f64; batch * self.cols];
        dense_matmul(&x, w, &mut out, batch, self.rows, self.cols);
        if !noise.is_silent() {
            for (b, row) in out.chunks_exact_mut(self.cols).enumerate() {
                let idx = pair_index(self.tile_id, read_base + b as u64);
                let mut rng = stream(noise.seed, Purpose::ReadNoise, idx);
                for v in row.iter_mut() {
                    *v *= noise.factors(&mut rng, counts);
                }
            }
        }
        Ok(out)
    }

    /// Noiseless read-back of the stored weights in codebook units.
    pub fn read_back_weights(&self) -> Result<Vec<f64>> {
        let g = self.read_conductance_matrix(true, &ReadNoise::NONE, 0)?;
        Ok(g.iter().map(|(p, n)| (p - n) / self.unit_g).collect())
    }
}

/// `c = a·b` for row-major `a (m×k)`, `b (k×n)`.
pub fn dense_matmul(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    // SAFETY: slices are sized m×k, k×n and m×n with row-major strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// A weight matrix split across tiles that respect the size limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiledMatrix {
    pub rows: usize,
    pub cols: usize,
    pub row_starts: Vec<usize>,
    pub col_starts: Vec<usize>,
    /// Row-block-major.
    pub tiles: Vec<CrossbarTile>,
}

fn splits(total: usize, max: usize) -> Vec<usize> {
    let parts = total.div_ceil(max).max(1);
    let base = total / parts;
    let extra = total % parts;
    let mut starts = Vec::with_capacity(parts + 1);
    let mut s = 0;
    for i in 0..parts {
        starts.push(s);
        s += base + usize::from(i < extra);
    }
    starts.push(total);
    starts
}

impl TiledMatrix {
    /// Programs `weights` (rows × cols, row-major), tiling as needed. Tile ids
    /// start at `opts.tile_id`.
    pub fn program(
        weights: &[f32],
        rows: usize,
        cols: usize,
        mapping: &WeightMapping,
        params: &DeviceParams,
        cfg: &ProgramConfig,
        opts: &MapOptions,
    ) -> Result<(Self, ProgrammingStats)> {
        if weights.len() != rows * cols {
            return Err(Error::DimensionMismatch { expected: rows * cols, got: weights.len() });
        }
        if opts.max_rows == 0 || opts.max_cols == 0 || rows == 0 || cols == 0 {
            return Err(Error::InvalidParams("matrix and tile dimensions must be non-zero".into()));
        }
        let row_starts = splits(rows, opts.max_rows);
        let col_starts = splits(cols, opts.max_cols);
        let mut tiles = Vec::new();
        let mut stats = ProgrammingStats::default();
        let mut id = opts.tile_id;
        for rb in row_starts.windows(2) {
            for cb in col_starts.windows(2) {
                let (r0, r1, c0, c1) = (rb[0], rb[1], cb[0], cb[1]);
                let mut sub = Vec::with_capacity((r1 - r0) * (c1 - c0));
                for r in r0..r1 {
                    sub.extend_from_slice(&weights[r * cols + c0..r * cols + c1]);
                }
                let o = MapOptions { tile_id: id, ..*opts };
                let (t, s) = map_weights(&sub, r1 - r0, c1 - c0, mapping, params, cfg, &o, None)?;
                stats.merge(&s);
                tiles.push(t);
                id += 1;
            }
        }
        Ok((Self { rows, cols, row_starts, col_starts, tiles }, stats))
    }

    pub fn for_each_tile(&mut self, mut f: impl FnMut(&mut CrossbarTile) -> Result<()>) -> Result<()> {
        self.tiles.iter_mut().try_for_each(&mut f)
    }

    /// Effective weights of every tile, in tile order.
    pub fn effective_weights(&self, counts: &mut InjectorCounts) -> Result<Vec<Vec<f64>>> {
        self.tiles.iter().map(|t| t.effective_weights(counts)).collect()
    }

    /// Batched product in weight units: column currents of every tile divided
    /// by that tile's unit current, summed over row blocks.
    pub fn matmul(
        &self,
        inputs: &[f64],
        batch: usize,
        noise: &ReadNoise,
        read_base: u64,
        counts: &mut InjectorCounts,
    ) -> Result<Vec<f64>> {
        let eff = self.effective_weights(counts)?;
        self.matmul_precomputed(&eff, inputs, batch, noise, read_base, counts)
    }

    pub fn matmul_precomputed(
        &self,
        eff: &[Vec<f64>],
        inputs: &[f64],
        batch: usize,
        noise: &ReadNoise,
        read_base: u64,
        counts: &mut InjectorCounts,
    ) -> Result<Vec<f64>> {
        if inputs.len() != batch * self.rows {
            return Err(Error::DimensionMismatch { expected: batch * self.rows, got: inputs.len() });
        }
        if eff.len() != self.tiles.len() {
            return Err(Error::DimensionMismatch { expected: self.tiles.len(), got: eff.len() });
        }
        let ncb = self.col_starts.len() - 1;
        let mut out = alloc::vec![0.0f64; batch * self.cols];
        let mut x = Vec::new();
        for (t_idx, tile) in self.tiles.iter().enumerate() {
            let (rb, cb) = (t_idx / ncb, t_idx % ncb);
            let (r0, r1) = (self.row_starts[rb], self.row_starts[rb + 1]);
            let c0 = self.col_starts[cb];
            x.clear();
            for b in 0..batch {
                x.extend_from_slice(&inputs[b * self.rows + r0..b * self.rows + r1]);
            }
            let y = tile.matmul_with(&eff[t_idx], &x, batch, noise, read_base, counts)?;
            let scale = 1.0 / tile.unit_current();
            for b in 0..batch {
                let dst = &mut out[b * self.cols + c0..b * self.cols + c0 + tile.cols];
                for (d, v) in dst.iter_mut().zip(&y[b * tile.cols..(b + 1) * tile.cols]) {
                    *d += v * scale;
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codebooks_validate() {
        for m in [
            WeightMapping::binary(),
            WeightMapping::four_level(),
            WeightMapping::four_level_signed(),
            WeightMapping::offset_referenced(4),
        ] {
            m.validate().unwrap();
        }
        let s = WeightMapping::four_level_signed();
        assert_eq!(s.codebook.len(), 7);
        let z = s.lookup(0.0).unwrap();
        assert_eq!((z.pos, z.neg), (0, 0));
        let m = s.lookup(-2.0 / 3.0).unwrap();
        assert_eq!((m.pos, m.neg), (1, 3));
        let mut bad = WeightMapping::binary();
        bad.codebook[1].pos = 0;
        bad.codebook[1].neg = 1;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn splits_cover_range() {
        assert_eq!(splits(784, 256), alloc::vec![0, 196, 392, 588, 784]);
        assert_eq!(splits(10, 256), alloc::vec![0, 10]);
    }

    #[test]
    fn rejects_off_codebook_and_shape() {
        let p = DeviceParams::default();
        let cfg = ProgramConfig::default();
        let o = MapOptions::default();
        let m = WeightMapping::binary();
        assert_eq!(
            map_weights(&[0.5], 1, 1, &m, &p, &cfg, &o, None).unwrap_err(),
            Error::NotInCodebook(0.5)
        );
        assert!(map_weights(&[1.0, 1.0], 1, 1, &m, &p, &cfg, &o, None).is_err());
    }

    #[test]
    fn zero_matrix_reads_zero_current() {
        let p = DeviceParams::default();
        let cfg = ProgramConfig::default();
        let o = MapOptions::default();
        let m = WeightMapping::four_level_signed();
        let (t, s) = map_weights(&[0.0; 12], 3, 4, &m, &p, &cfg, &o, None).unwrap();
        assert_eq!(s.converged, 24);
        assert!(t.pos.iter().chain(&t.neg).all(|d| d.state.level() == 0));
        let mut c = InjectorCounts::default();
        let y = t.analog_matvec(&[1.0, 1.0, 1.0], &ReadNoise::NONE, 0, &mut c).unwrap();
        assert!(y.iter().all(|v| v.abs() < 0.2 * t.unit_current()));
        assert_eq!(c.total(), 0);
    }
}
