use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conditioning::Assessment;
use crate::raster::Image;

use super::params::{assessment_text, mos_unchecked, AestheticParams};
use super::scene::{generate_scene, SceneClass, SceneSpec, PALETTES};
use super::PairingError;

pub const DEFAULT_LOW_MAX: f64 = 4.0;
pub const DEFAULT_HIGH_MIN: f64 = 7.0;

/// Scene description and score of one corpus image, without pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorpusEntry {
    pub id: usize,
    pub spec: SceneSpec,
    pub params: AestheticParams,
    pub mos: f64,
}

impl CorpusEntry {
    pub fn caption(&self) -> &'static str {
        self.spec.class.caption()
    }

    pub fn assessment(&self) -> Assessment {
        assessment_text(&self.params)
    }

    pub fn render(&self, side: usize) -> Result<(Image, Image), PairingError> {
        generate_scene(&self.spec, &self.params, side)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusImage {
    pub entry: CorpusEntry,
    pub image: Image,
    pub mask: Image,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub side: usize,
    pub images: Vec<CorpusImage>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Quality {
    Good,
    Poor,
    Any,
}

fn thirds_point(rng: &mut impl Rng) -> (f64, f64) {
    let pick = |rng: &mut ChaCha8Rng| if rng.random_bool(0.5) { 1.0 / 3.0 } else { 2.0 / 3.0 };
    let mut local = ChaCha8Rng::seed_from_u64(rng.random());
    (pick(&mut local), pick(&mut local))
}

fn sample_params(rng: &mut impl Rng, quality: Quality, max_size: f64) -> AestheticParams {
    let hue_shift = rng.random_range(0.0..1.0);
    match quality {
        Quality::Good => {
            let (tx, ty) = thirds_point(rng);
            AestheticParams {
                saturation: rng.random_range(0.62..0.88),
                brightness: rng.random_range(0.52..0.78),
                hue_shift,
                cx: tx + rng.random_range(-0.04..0.04),
                cy: ty + rng.random_range(-0.04..0.04),
                blur: rng.random_range(0.0..0.25),
                size: rng.random_range(0.1..0.3f64.min(max_size)),
            }
        }
        Quality::Poor => AestheticParams {
            saturation: if rng.random_bool(0.6) {
                rng.random_range(0.05..0.4)
            } else {
                rng.random_range(0.92..1.0)
            },
            brightness: if rng.random_bool(0.6) {
                rng.random_range(0.12..0.35)
            } else {
                rng.random_range(0.88..1.0)
            },
            hue_shift,
            cx: rng.random_range(0.25..0.75),
            cy: rng.random_range(0.25..0.75),
            blur: rng.random_range(0.3..2.0),
            size: rng.random_range(0.06..max_size),
        },
        Quality::Any => AestheticParams {
            saturation: rng.random_range(0.0..=1.0),
            brightness: rng.random_range(0.1..=1.0),
            hue_shift,
            cx: rng.random_range(0.2..0.8),
            cy: rng.random_range(0.2..0.8),
            blur: rng.random_range(0.0..=2.0),
            size: rng.random_range(0.06..max_size),
        },
    }
}

/// Draws `n` scene descriptions with a mix of well-composed, poorly
/// composed and unconstrained parameters. Ids start at `first_id`.
pub fn sample_entries(n: usize, first_id: usize, seed: u64) -> Vec<CorpusEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let class = SceneClass::ALL[rng.random_range(0..SceneClass::ALL.len())];
            let quality = match rng.random_range(0..20) {
                0..=6 => Quality::Good,
                7..=15 => Quality::Poor,
                _ => Quality::Any,
            };
            let spec = SceneSpec {
                class,
                layout_seed: rng.random(),
                palette: rng.random_range(0..PALETTES.len()),
            };
            let params = sample_params(&mut rng, quality, class.max_size());
            CorpusEntry {
                id: first_id + i,
                spec,
                params,
                mos: mos_unchecked(&params),
            }
        })
        .collect()
}

pub fn render_corpus(entries: &[CorpusEntry], side: usize) -> Result<Corpus, PairingError> {
    let images = entries
        .par_iter()
        .map(|e| {
            let (image, mask) = e.render(side)?;
            Ok(CorpusImage { entry: *e, image, mask })
        })
        .collect::<Result<Vec<_>, PairingError>>()?;
    Ok(Corpus { side, images })
}

pub fn generate_corpus(n: usize, first_id: usize, side: usize, seed: u64) -> Result<Corpus, PairingError> {
    render_corpus(&sample_entries(n, first_id, seed), side)
}

/// Seed of generation block `block`; block 0 uses `seed` itself.
pub fn block_seed(seed: u64, block: usize) -> u64 {
    seed ^ (block as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Draws entries in blocks of `block` until at least `needed` pairs form
/// under the given bands. Gives up after `max_blocks` blocks.
pub fn sample_entries_until(
    needed: usize,
    low_max: f64,
    high_min: f64,
    block: usize,
    seed: u64,
    max_blocks: usize,
) -> Result<Vec<CorpusEntry>, PairingError> {
    let mut entries = Vec::new();
    for b in 0..max_blocks {
        entries.extend(sample_entries(block, entries.len(), block_seed(seed, b)));
        let have = form_pairs(&entries, low_max, high_min)?.len();
        if have >= needed {
            return Ok(entries);
        }
    }
    let have = if entries.is_empty() { 0 } else { form_pairs(&entries, low_max, high_min)?.len() };
    Err(PairingError::Shortage { have, needed })
}

/// Disjoint seeded split of `pairs` into `train` and `test` pairs, each
/// sorted by input id.
pub fn split_pairs(
    pairs: &[PairIndex],
    train: usize,
    test: usize,
    seed: u64,
) -> Result<(Vec<PairIndex>, Vec<PairIndex>), PairingError> {
    if pairs.len() < train + test {
        return Err(PairingError::Shortage {
            have: pairs.len(),
            needed: train + test,
        });
    }
    let mut shuffled = pairs.to_vec();
    shuffled.sort();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test_set = shuffled[..test].to_vec();
    let mut train_set = shuffled[test..test + train].to_vec();
    test_set.sort();
    train_set.sort();
    Ok((train_set, test_set))
}

/// Input/reference ids of one imperfect pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairIndex {
    pub input_id: usize,
    pub reference_id: usize,
}

/// Pairs every low-scoring image (MOS ≤ `low_max`) with the best-scoring
/// same-class image (MOS ≥ `high_min`, ties to the lowest id). Intermediate
/// scores and classes without a reference produce nothing. Output is sorted
/// by input id.
pub fn form_pairs(entries: &[CorpusEntry], low_max: f64, high_min: f64) -> Result<Vec<PairIndex>, PairingError> {
    if entries.is_empty() {
        return Err(PairingError::EmptyCorpus);
    }
    if !(low_max < high_min) {
        return Err(PairingError::Bands { low_max, high_min });
    }
    let mut best: BTreeMap<SceneClass, (f64, usize)> = BTreeMap::new();
    for e in entries.iter().filter(|e| e.mos >= high_min) {
        let slot = best.entry(e.spec.class).or_insert((e.mos, e.id));
        if e.mos > slot.0 || (e.mos == slot.0 && e.id < slot.1) {
            *slot = (e.mos, e.id);
        }
    }
    let mut pairs: Vec<PairIndex> = entries
        .iter()
        .filter(|e| e.mos <= low_max)
        .filter_map(|e| {
            best.get(&e.spec.class).map(|&(_, reference_id)| PairIndex {
                input_id: e.id,
                reference_id,
            })
        })
        .collect();
    pairs.sort();
    Ok(pairs)
}

/// One training or evaluation example.
#[derive(Clone, Debug, PartialEq)]
pub struct Triplet {
    pub input: CorpusImage,
    pub reference: CorpusImage,
    pub caption: String,
    /// Assessment of the input image.
    pub assessment: Assessment,
}

impl Triplet {
    pub fn caption_id(&self) -> usize {
        self.input.entry.spec.class.index()
    }
}

pub fn assemble_triplets(corpus: &Corpus, pairs: &[PairIndex]) -> Result<Vec<Triplet>, PairingError> {
    let by_id: BTreeMap<usize, &CorpusImage> = corpus.images.iter().map(|c| (c.entry.id, c)).collect();
    let get = |id: usize| by_id.get(&id).copied().ok_or(PairingError::MissingImage(id));
    pairs
        .iter()
        .map(|p| {
            let input = get(p.input_id)?.clone();
            let reference = get(p.reference_id)?.clone();
            Ok(Triplet {
                caption: input.entry.caption().to_owned(),
                assessment: input.entry.assessment(),
                input,
                reference,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Record {
    id: usize,
    semantic_key: SceneClass,
    layout_seed: u64,
    palette: usize,
    params: AestheticParams,
    mos: f64,
    caption: String,
    assessment_string: String,
    image_png_path: String,
    mask_png_path: String,
}

pub const METADATA_FILE: &str = "metadata.jsonl";
pub const TRIPLETS_FILE: &str = "triplets.jsonl";
pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";

/// Writes `images/<id>.png`, `masks/<id>.png` and `metadata.jsonl` under `dir`.
pub fn save_corpus(dir: &Path, corpus: &Corpus) -> Result<(), PairingError> {
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("masks"))?;
    let mut meta = BufWriter::new(File::create(dir.join(METADATA_FILE))?);
    for item in &corpus.images {
        let e = &item.entry;
        let image_png_path = format!("images/{:06}.png", e.id);
        let mask_png_path = format!("masks/{:06}.png", e.id);
        item.image.save_png(&dir.join(&image_png_path))?;
        item.mask.save_png(&dir.join(&mask_png_path))?;
        let rec = Record {
            id: e.id,
            semantic_key: e.spec.class,
            layout_seed: e.spec.layout_seed,
            palette: e.spec.palette,
            params: e.params,
            mos: e.mos,
            caption: e.caption().to_owned(),
            assessment_string: e.assessment().render(),
            image_png_path,
            mask_png_path,
        };
        serde_json::to_writer(&mut meta, &rec)?;
        meta.write_all(b"\n")?;
    }
    meta.flush()?;
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, PairingError> {
    let file = File::open(path).map_err(|e| PairingError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub fn load_corpus(dir: &Path) -> Result<Corpus, PairingError> {
    let records: Vec<Record> = read_jsonl(&dir.join(METADATA_FILE))?;
    let mut images = Vec::with_capacity(records.len());
    for rec in records {
        let image = Image::load_png(&dir.join(&rec.image_png_path), false)?;
        let mask = Image::load_png(&dir.join(&rec.mask_png_path), true)?;
        let entry = CorpusEntry {
            id: rec.id,
            spec: SceneSpec {
                class: rec.semantic_key,
                layout_seed: rec.layout_seed,
                palette: rec.palette,
            },
            params: rec.params,
            mos: rec.mos,
        };
        if Assessment::parse(&rec.assessment_string)? != entry.assessment() {
            return Err(PairingError::Metadata(format!("image {}: assessment does not match params", rec.id)));
        }
        images.push(CorpusImage { entry, image, mask });
    }
    let side = images.first().map(|c| c.image.width()).ok_or(PairingError::EmptyCorpus)?;
    Ok(Corpus { side, images })
}

pub fn save_pairs(path: &Path, pairs: &[PairIndex]) -> Result<(), PairingError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut out = BufWriter::new(File::create(path)?);
    for p in pairs {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_pairs(path: &Path) -> Result<Vec<PairIndex>, PairingError> {
    read_jsonl(path)
}

/// Corpus plus its full triplet index, as laid out by `dataset gen` and
/// `pairs form`.
pub fn load_triplets(dir: &Path) -> Result<Vec<Triplet>, PairingError> {
    load_split(dir, TRIPLETS_FILE)
}

/// Triplets of the pair index file `name` inside the corpus directory.
pub fn load_split(dir: &Path, name: &str) -> Result<Vec<Triplet>, PairingError> {
    let corpus = load_corpus(dir)?;
    let pairs = load_pairs(&dir.join(name))?;
    assemble_triplets(&corpus, &pairs)
}

pub fn triplets_path(dir: &Path) -> PathBuf {
    dir.join(TRIPLETS_FILE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entry(id: usize, class: SceneClass, mos: f64) -> CorpusEntry {
        CorpusEntry {
            id,
            spec: SceneSpec {
                class,
                layout_seed: id as u64,
                palette: 0,
            },
            params: AestheticParams::ideal(),
            mos,
        }
    }

    #[test]
    fn banding_examples() {
        let star = SceneClass::Star;
        let p = form_pairs(&[entry(0, star, 3.1), entry(1, star, 8.2), entry(2, star, 5.5)], 4.0, 7.0).unwrap();
        assert_eq!(p, vec![PairIndex { input_id: 0, reference_id: 1 }]);
        let none = form_pairs(&[entry(0, star, 3.0), entry(1, star, 3.5)], 4.0, 7.0).unwrap();
        assert!(none.is_empty());
        let two = form_pairs(
            &[entry(0, star, 7.5), entry(1, star, 2.0), entry(2, star, 9.0), entry(3, star, 4.0)],
            4.0,
            7.0,
        )
        .unwrap();
        assert!(two.iter().all(|p| p.reference_id == 2));
        assert_eq!(two.len(), 2);
        let ties = form_pairs(&[entry(5, star, 9.0), entry(4, star, 9.0), entry(1, star, 1.0)], 4.0, 7.0).unwrap();
        assert_eq!(ties[0].reference_id, 4);
        let other = form_pairs(&[entry(0, star, 2.0), entry(1, SceneClass::Ring, 9.0)], 4.0, 7.0).unwrap();
        assert!(other.is_empty());
        assert!(form_pairs(&[], 4.0, 7.0).is_err());
        assert!(form_pairs(&[entry(0, star, 2.0)], 7.0, 7.0).is_err());
    }

    #[test]
    fn sampled_corpus_yields_pairs() {
        let entries = sample_entries(400, 0, 1);
        let pairs = form_pairs(&entries, DEFAULT_LOW_MAX, DEFAULT_HIGH_MIN).unwrap();
        assert!(pairs.len() > 100, "{} pairs", pairs.len());
        for p in &pairs {
            let (i, r) = (&entries[p.input_id], &entries[p.reference_id]);
            assert!(i.mos <= 4.0 && r.mos >= 7.0 && i.spec.class == r.spec.class);
        }
    }

    #[test]
    fn disk_round_trip() {
        let corpus = generate_corpus(12, 100, 32, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_corpus(dir.path(), &corpus).unwrap();
        let back = load_corpus(dir.path()).unwrap();
        for (a, b) in back.images.iter().zip(&corpus.images) {
            assert_eq!(a.entry, b.entry);
            assert_eq!(a.mask, b.mask);
            assert_eq!(a.image, b.image);
        }
        assert_eq!(back, corpus);
        let pairs = vec![PairIndex { input_id: 101, reference_id: 103 }];
        save_pairs(&triplets_path(dir.path()), &pairs).unwrap();
        let t = load_triplets(dir.path()).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].input.entry.id, 101);
        assert_eq!(t[0].assessment, corpus.images[1].entry.assessment());
        // PNG bytes are identical after a second save
        let dir2 = tempfile::tempdir().unwrap();
        save_corpus(dir2.path(), &back).unwrap();
        for f in ["images/000105.png", "masks/000105.png", METADATA_FILE] {
            assert_eq!(fs::read(dir.path().join(f)).unwrap(), fs::read(dir2.path().join(f)).unwrap());
        }
    }

    #[test]
    fn block_generation_reaches_target() {
        let entries = sample_entries_until(300, 4.0, 7.0, 200, 9, 50).unwrap();
        assert!(form_pairs(&entries, 4.0, 7.0).unwrap().len() >= 300);
        assert_eq!(entries.len() % 200, 0);
        assert!(entries.iter().enumerate().all(|(i, e)| e.id == i));
        assert_eq!(entries[..200].to_vec(), sample_entries(200, 0, 9));
        assert!(matches!(
            sample_entries_until(10_000, 4.0, 7.0, 10, 9, 2),
            Err(PairingError::Shortage { .. })
        ));
    }

    #[test]
    fn split_is_disjoint_and_seeded() {
        let pairs: Vec<PairIndex> = (0..50).map(|i| PairIndex { input_id: i, reference_id: 99 }).collect();
        let (train, test) = split_pairs(&pairs, 30, 10, 3).unwrap();
        assert_eq!((train.len(), test.len()), (30, 10));
        assert!(train.iter().all(|p| !test.contains(p)));
        assert!(train.windows(2).all(|w| w[0] < w[1]));
        let mut reversed = pairs.clone();
        reversed.reverse();
        assert_eq!(split_pairs(&reversed, 30, 10, 3).unwrap(), (train, test));
        assert!(split_pairs(&pairs, 45, 10, 3).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn pairing_ignores_corpus_order(seed in 0u64..1000) {
            let mut entries = sample_entries(150, 0, seed);
            let a = form_pairs(&entries, 4.0, 7.0).unwrap();
            entries.shuffle(&mut ChaCha8Rng::seed_from_u64(seed + 1));
            prop_assert_eq!(a, form_pairs(&entries, 4.0, 7.0).unwrap());
        }
    }
}
