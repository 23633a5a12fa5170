use rayon::prelude::*;
use serde::Serialize;

use crate::conditioning::{control_maps, MapMode};
use crate::diffusion::{ancestral_sample, NoiseSchedule, SampleRequest};
use crate::model::{ControlInputs, Model};
use crate::numerics::Tensor;
use crate::pairing::Triplet;
use crate::raster::Image;

use super::{pas_score, scs_score, EvalError};

/// Inputs below this PAS form the low band, above [`HIGH_BAND`] the high band.
pub const LOW_BAND: f64 = 4.0;
pub const HIGH_BAND: f64 = 5.0;

pub const EVAL_CSV_HEADER: &str = "id,pas_in,pas_out,scs,seed";

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub num_steps: usize,
    pub seeds: Vec<u64>,
    pub map_mode: MapMode,
    /// Images sampled together in one batch.
    pub chunk: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            num_steps: 50,
            seeds: vec![0],
            map_mode: MapMode::Full,
            chunk: 8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EvalRow {
    pub id: usize,
    pub pas_in: f64,
    pub pas_out: f64,
    pub scs: f64,
    pub seed: u64,
}

impl EvalRow {
    pub fn csv(&self) -> String {
        format!("{},{},{},{},{}", self.id, self.pas_in, self.pas_out, self.scs, self.seed)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Aggregate {
    pub count: usize,
    pub mean_pas_in: f64,
    pub mean_pas_out: f64,
    pub delta_pas: f64,
    pub mean_scs: f64,
}

impl Aggregate {
    /// Means over `rows` in order; all zero when empty.
    pub fn of<'a>(rows: impl IntoIterator<Item = &'a EvalRow>) -> Self {
        let (mut n, mut pin, mut pout, mut scs) = (0usize, 0.0, 0.0, 0.0);
        for r in rows {
            n += 1;
            pin += r.pas_in;
            pout += r.pas_out;
            scs += r.scs;
        }
        if n == 0 {
            return Self::default();
        }
        let k = n as f64;
        Self {
            count: n,
            mean_pas_in: pin / k,
            mean_pas_out: pout / k,
            delta_pas: pout / k - pin / k,
            mean_scs: scs / k,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Bands {
    pub low: Aggregate,
    pub high: Aggregate,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    #[serde(flatten)]
    pub aggregate: Aggregate,
    /// Mean SCS of outputs scored against mismatched inputs.
    pub null_scs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalSummary {
    pub mean_pas_in: f64,
    pub mean_pas_out: f64,
    pub delta_pas: f64,
    pub mean_scs: f64,
    pub null_scs: f64,
    pub bands: Bands,
    pub per_seed: Vec<SeedSummary>,
    pub seeds: Vec<u64>,
    pub num_steps: usize,
    pub map_mode: String,
    pub config: String,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub summary: EvalSummary,
    /// Generated images, seed-major in input order.
    pub outputs: Vec<Image>,
}

impl EvalReport {
    pub fn csv(&self) -> String {
        let mut s = String::from(EVAL_CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.csv());
            s.push('\n');
        }
        s
    }

    pub fn summary_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.summary).expect("summary serializes");
        s.push('\n');
        s
    }
}

/// Per-element sampling seed for one evaluation seed and input id.
pub fn sample_seed(seed: u64, id: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (id as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Generates edited images for `inputs`, conditioning on each input's maps
/// and assessment. The clean-image slot receives the input.
pub fn generate(
    model: &Model,
    schedule: &NoiseSchedule,
    inputs: &[&Triplet],
    seed: u64,
    opts: &EvalOptions,
) -> Result<Vec<Image>, EvalError> {
    let chunks: Vec<&[&Triplet]> = inputs.chunks(opts.chunk.max(1)).collect();
    let images = chunks
        .par_iter()
        .map(|chunk| -> Result<Vec<Image>, EvalError> {
            let xs: Vec<Tensor> = chunk.iter().map(|t| t.input.image.to_signed_tensor()).collect();
            let x_clean = Tensor::stack(&xs).map_err(crate::diffusion::DiffusionError::from)?;
            let imgs: Vec<&Image> = chunk.iter().map(|t| &t.input.image).collect();
            let control = ControlInputs {
                maps: control_maps(&imgs)?,
                assessments: chunk.iter().map(|t| t.assessment.clone()).collect(),
                mode: opts.map_mode,
            };
            let captions: Vec<usize> = chunk.iter().map(|t| t.caption_id()).collect();
            let seeds: Vec<u64> = chunk.iter().map(|t| sample_seed(seed, t.input.entry.id)).collect();
            let req = SampleRequest {
                x_clean: &x_clean,
                captions: &captions,
                control: Some(&control),
                seeds: &seeds,
            };
            let out = ancestral_sample(model, schedule, opts.num_steps, &req)?;
            (0..chunk.len())
                .map(|i| Ok(Image::from_signed_tensor(&out.narrow_batch(i, 1))?.quantized()))
                .collect()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(images.into_iter().flatten().collect())
}

/// PAS of input and output and the output's consistency with the input.
pub fn score_pair(input: &Image, input_mask: &Image, output: &Image) -> Result<(f64, f64, f64), EvalError> {
    Ok((pas_score(input)?, pas_score(output)?, scs_score(output, input, input_mask)?.score))
}

/// Samples every test input once per seed and scores the results.
///
/// The null consistency pairs output `i` with input `i + 1` (cyclically), a
/// fixed derangement of the test set.
pub fn run_eval(
    model: &Model,
    schedule: &NoiseSchedule,
    triplets: &[Triplet],
    opts: &EvalOptions,
    config_text: &str,
) -> Result<EvalReport, EvalError> {
    if triplets.is_empty() {
        return Err(EvalError::Empty);
    }
    let inputs: Vec<&Triplet> = triplets.iter().collect();
    let pas_in: Vec<f64> = inputs
        .par_iter()
        .map(|t| pas_score(&t.input.image))
        .collect::<Result<_, _>>()?;
    let n = inputs.len();
    let mut rows = Vec::with_capacity(n * opts.seeds.len());
    let mut per_seed = Vec::with_capacity(opts.seeds.len());
    let mut outputs = Vec::with_capacity(n * opts.seeds.len());
    let mut null_total = 0.0;
    for &seed in &opts.seeds {
        let images = generate(model, schedule, &inputs, seed, opts)?;
        let scored: Vec<(f64, f64, f64)> = (0..n)
            .into_par_iter()
            .map(|i| -> Result<_, EvalError> {
                let t = inputs[i];
                let other = inputs[(i + 1) % n];
                let pas_out = pas_score(&images[i])?;
                let scs = scs_score(&images[i], &t.input.image, &t.input.mask)?.score;
                let null = scs_score(&images[i], &other.input.image, &other.input.mask)?.score;
                Ok((pas_out, scs, null))
            })
            .collect::<Result<_, _>>()?;
        let start = rows.len();
        let mut null = 0.0;
        for (i, &(pas_out, scs, null_scs)) in scored.iter().enumerate() {
            rows.push(EvalRow {
                id: inputs[i].input.entry.id,
                pas_in: pas_in[i],
                pas_out,
                scs,
                seed,
            });
            null += null_scs;
        }
        let null_scs = null / n as f64;
        null_total += null;
        per_seed.push(SeedSummary {
            seed,
            aggregate: Aggregate::of(&rows[start..]),
            null_scs,
        });
        outputs.extend(images);
    }
    let all = Aggregate::of(&rows);
    let summary = EvalSummary {
        mean_pas_in: all.mean_pas_in,
        mean_pas_out: all.mean_pas_out,
        delta_pas: all.delta_pas,
        mean_scs: all.mean_scs,
        null_scs: null_total / rows.len() as f64,
        bands: Bands {
            low: Aggregate::of(rows.iter().filter(|r| r.pas_in < LOW_BAND)),
            high: Aggregate::of(rows.iter().filter(|r| r.pas_in > HIGH_BAND)),
        },
        per_seed,
        seeds: opts.seeds.clone(),
        num_steps: opts.num_steps,
        map_mode: opts.map_mode.name().to_owned(),
        config: config_text.to_owned(),
    };
    Ok(EvalReport { rows, summary, outputs })
}
