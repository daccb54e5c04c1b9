//! Synthetic datasets with planted ground truth.
//!
//! Every object gets random unit vectors for both object modalities. Each
//! scene picks a distinct target object and receives query vectors equal to
//! the target's vectors plus isotropic Gaussian noise of norm `noise`,
//! renormalized. Generation rejects samples until, for every scene and both
//! modalities, the target's cosine exceeds that of every other object by more
//! than `2 * noise`, so nearest-neighbour retrieval recovers every target.
//!
//! With `adversarial` set, scenes additionally receive two text decoys each:
//! objects whose RGB vector sits closer to the text query than the target's,
//! but whose silhouette points away from the shape query and stays out of the
//! shape top-K. Text-only retrieval then misses those targets while the
//! text-then-shape hybrid still ranks them first.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::{DEFAULT_OBJECT_IMAGE, DEFAULT_QUERY_FILE, DEFAULT_SCENE_IMAGE, OBJECTS_DIR, SCENES_DIR};
use crate::embedding::{cosine, normalize, write_embeddings, EmbeddingHeader, EmbeddingRecord, Modality};
use crate::mask::DEFAULT_MASK_COLOR;
use crate::results::{write_truth_csv, CsvError};
use crate::retrieval::{Catalog, DEFAULT_K};

pub const EMBEDDINGS_FILE: &str = "embeddings.jsonl";
pub const TRUTH_FILE: &str = "truth.csv";
pub const CATALOG_FILE: &str = "catalog.json";

pub const DEFAULT_NOISE: f32 = 0.1;
const DEFAULT_MAX_ATTEMPTS: usize = 1000;
const DECOYS_PER_SCENE: usize = 2;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synth configuration: {0}")]
    InvalidConfig(String),
    #[error("could not satisfy the planted margin for {what} after {attempts} attempts")]
    InfeasibleMargin { what: String, attempts: usize },
    #[error("cannot write {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] CsvError),
    #[error("cannot encode image: {0}")]
    Image(#[from] image::ImageError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub scenes: usize,
    pub objects: usize,
    pub dim: usize,
    pub seed: u64,
    /// Norm of the perturbation added to each planted query.
    pub noise: f32,
    pub adversarial: bool,
    /// Per-vector and per-scene retry bound for rejection sampling.
    pub max_attempts: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            scenes: 50,
            objects: 200,
            dim: 64,
            seed: 7,
            noise: DEFAULT_NOISE,
            adversarial: false,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.scenes == 0 {
            return bad("need at least one scene".into());
        }
        if self.objects < self.scenes {
            return bad(format!(
                "objects ({}) must be at least scenes ({})",
                self.objects, self.scenes
            ));
        }
        if self.dim < 2 {
            return bad(format!("dimension must be at least 2, got {}", self.dim));
        }
        if !(self.noise.is_finite() && self.noise > 0.0 && self.noise < 0.5) {
            return bad(format!("noise must lie in (0, 0.5), got {}", self.noise));
        }
        if self.adversarial {
            if self.adversarial_scenes() == 0 {
                return bad(format!(
                    "adversarial mode needs {DECOYS_PER_SCENE} spare objects per scene beyond the targets"
                ));
            }
            if self.objects <= DEFAULT_K {
                return bad(format!("adversarial mode needs more than {DEFAULT_K} objects"));
            }
        }
        Ok(())
    }

    fn adversarial_scenes(&self) -> usize {
        if !self.adversarial {
            return 0;
        }
        self.scenes.min((self.objects - self.scenes) / DECOYS_PER_SCENE)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub header: EmbeddingHeader,
    pub records: Vec<EmbeddingRecord>,
    pub truth: BTreeMap<String, String>,
    pub catalog: Catalog,
    /// Scenes that received text decoys.
    pub adversarial_scenes: Vec<String>,
}

fn id_width(n: usize) -> usize {
    n.saturating_sub(1).to_string().len().max(4)
}

fn gaussian_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        if let Ok(u) = normalize(&v) {
            return u;
        }
    }
}

/// `normalize(base + scale * unit_noise)`.
fn perturb(rng: &mut ChaCha8Rng, base: &[f32], scale: f32) -> Vec<f32> {
    loop {
        let n = gaussian_unit(rng, base.len());
        let v: Vec<f32> = base.iter().zip(&n).map(|(b, x)| b + scale * x).collect();
        if let Ok(u) = normalize(&v) {
            return u;
        }
    }
}

fn cos(a: &[f32], b: &[f32]) -> f32 {
    cosine(a, b).expect("synthetic vectors share one dimension")
}

struct SceneVectors {
    text: Vec<f32>,
    shape: Vec<f32>,
    /// (object index, rgb, silhouette)
    decoys: Vec<(usize, Vec<f32>, Vec<f32>)>,
}

struct Planted {
    rgb: Vec<Vec<f32>>,
    sil: Vec<Vec<f32>>,
    targets: Vec<usize>,
    /// Decoy object indices per scene.
    decoy_slots: Vec<Vec<usize>>,
}

impl Planted {
    fn sample_scene(&self, rng: &mut ChaCha8Rng, scene: usize, noise: f32) -> SceneVectors {
        let t = self.targets[scene];
        let text = perturb(rng, &self.rgb[t], noise);
        let shape = perturb(rng, &self.sil[t], noise);
        let neg_shape: Vec<f32> = shape.iter().map(|x| -x).collect();
        let decoys = self.decoy_slots[scene]
            .iter()
            .map(|&d| {
                (
                    d,
                    perturb(rng, &text, noise / 4.0),
                    perturb(rng, &neg_shape, noise / 4.0),
                )
            })
            .collect();
        SceneVectors { text, shape, decoys }
    }

    fn install(&mut self, scene: &SceneVectors) {
        for (d, rgb, sil) in &scene.decoys {
            self.rgb[*d] = rgb.clone();
            self.sil[*d] = sil.clone();
        }
    }

    /// Whether the planted guarantees hold for `scene` given every current vector.
    fn holds(&self, scene: usize, q: &SceneVectors, noise: f32) -> bool {
        let t = self.targets[scene];
        let margin = 2.0 * noise;
        let own_decoy = |o: usize| self.decoy_slots[scene].contains(&o);
        let text_t = cos(&q.text, &self.rgb[t]);
        let shape_t = cos(&q.shape, &self.sil[t]);
        for o in 0..self.rgb.len() {
            if o == t {
                continue;
            }
            if shape_t - cos(&q.shape, &self.sil[o]) <= margin {
                return false;
            }
            if !own_decoy(o) && text_t - cos(&q.text, &self.rgb[o]) <= margin {
                return false;
            }
        }
        for &d in &self.decoy_slots[scene] {
            if cos(&q.text, &self.rgb[d]) <= text_t {
                return false;
            }
            let shape_d = cos(&q.shape, &self.sil[d]);
            let above = self.sil.iter().filter(|s| cos(&q.shape, s) > shape_d).count();
            if above < DEFAULT_K {
                return false;
            }
        }
        true
    }
}

/// Draws a unit vector whose cosine with every vector in `existing` is at most `max_cos`.
fn separated_unit(
    rng: &mut ChaCha8Rng,
    dim: usize,
    existing: &[Vec<f32>],
    max_cos: f32,
    attempts: usize,
    what: impl Fn() -> String,
) -> Result<Vec<f32>, SynthError> {
    for _ in 0..attempts {
        let v = gaussian_unit(rng, dim);
        if existing.iter().all(|e| cos(&v, e) <= max_cos) {
            return Ok(v);
        }
    }
    Err(SynthError::InfeasibleMargin { what: what(), attempts })
}

/// Builds the dataset in memory. The same config always yields the same dataset.
pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (n_scenes, n_objects, dim, noise) = (cfg.scenes, cfg.objects, cfg.dim, cfg.noise);

    let object_ids: Vec<String> = {
        let w = id_width(n_objects);
        (0..n_objects).map(|j| format!("obj_{j:0w$}")).collect()
    };
    let scene_ids: Vec<String> = {
        let w = id_width(n_scenes);
        (0..n_scenes).map(|i| format!("scene_{i:0w$}")).collect()
    };

    // Role assignment: shuffled object indices, targets first, then decoys.
    let mut order: Vec<usize> = (0..n_objects).collect();
    order.shuffle(&mut rng);
    let targets = order[..n_scenes].to_vec();
    let n_adv = cfg.adversarial_scenes();
    let mut decoy_slots = vec![Vec::new(); n_scenes];
    let mut next = n_scenes;
    for slots in decoy_slots.iter_mut().take(n_adv) {
        slots.extend_from_slice(&order[next..next + DECOYS_PER_SCENE]);
        next += DECOYS_PER_SCENE;
    }

    // Base vectors, kept well apart so that small query noise cannot confuse them.
    let max_cos = 1.0 - 4.0 * noise;
    let mut rgb: Vec<Vec<f32>> = Vec::with_capacity(n_objects);
    let mut sil: Vec<Vec<f32>> = Vec::with_capacity(n_objects);
    for id in &object_ids {
        let r = separated_unit(&mut rng, dim, &rgb, max_cos, cfg.max_attempts, || {
            format!("object_rgb of {id}")
        })?;
        let s = separated_unit(&mut rng, dim, &sil, max_cos, cfg.max_attempts, || {
            format!("object_silhouette of {id}")
        })?;
        rgb.push(r);
        sil.push(s);
    }

    let mut planted = Planted {
        rgb,
        sil,
        targets,
        decoy_slots,
    };
    let mut queries: Vec<SceneVectors> = (0..n_scenes)
        .map(|i| {
            let q = planted.sample_scene(&mut rng, i, noise);
            planted.install(&q);
            q
        })
        .collect();

    // Decoys of one scene are ordinary objects for the others, so re-check
    // everything until a full pass succeeds.
    let mut attempts = vec![0usize; n_scenes];
    loop {
        let mut clean = true;
        for i in 0..n_scenes {
            while !planted.holds(i, &queries[i], noise) {
                clean = false;
                attempts[i] += 1;
                if attempts[i] >= cfg.max_attempts {
                    return Err(SynthError::InfeasibleMargin {
                        what: format!("scene {}", scene_ids[i]),
                        attempts: attempts[i],
                    });
                }
                queries[i] = planted.sample_scene(&mut rng, i, noise);
                planted.install(&queries[i]);
            }
        }
        if clean {
            break;
        }
    }

    let mut records = Vec::with_capacity(2 * (n_objects + n_scenes));
    for (j, id) in object_ids.iter().enumerate() {
        records.push(EmbeddingRecord {
            id: id.clone(),
            modality: Modality::ObjectRgb,
            vector: planted.rgb[j].clone(),
        });
        records.push(EmbeddingRecord {
            id: id.clone(),
            modality: Modality::ObjectSilhouette,
            vector: planted.sil[j].clone(),
        });
    }
    for (i, id) in scene_ids.iter().enumerate() {
        records.push(EmbeddingRecord {
            id: id.clone(),
            modality: Modality::QueryText,
            vector: queries[i].text.clone(),
        });
        records.push(EmbeddingRecord {
            id: id.clone(),
            modality: Modality::QueryShape,
            vector: queries[i].shape.clone(),
        });
    }

    let mut header = EmbeddingHeader::new(format!(
        "synthetic-planted seed={} dim={} noise={}{}",
        cfg.seed,
        dim,
        noise,
        if cfg.adversarial {
            " adversarial=text-decoys"
        } else {
            ""
        }
    ));
    header.dims = Modality::ALL.into_iter().map(|m| (m, dim)).collect();

    let truth = scene_ids
        .iter()
        .zip(&planted.targets)
        .map(|(s, &t)| (s.clone(), object_ids[t].clone()))
        .collect();

    Ok(SynthDataset {
        header,
        records,
        truth,
        adversarial_scenes: scene_ids[..n_adv].to_vec(),
        catalog: Catalog::new(scene_ids, object_ids),
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Writes `embeddings.jsonl`, `truth.csv` and `catalog.json` into `dir`.
pub fn write_dataset(dir: &Path, data: &SynthDataset) -> Result<(), SynthError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let path = dir.join(EMBEDDINGS_FILE);
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    write_embeddings(BufWriter::new(file), &data.header, &data.records).map_err(io_err(&path))?;

    let path = dir.join(TRUTH_FILE);
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    write_truth_csv(BufWriter::new(file), &data.truth)?;

    let path = dir.join(CATALOG_FILE);
    let mut json = serde_json::to_string_pretty(&data.catalog).expect("catalog serializes");
    json.push('\n');
    fs::write(&path, json).map_err(io_err(&path))?;
    Ok(())
}

const SCENE_SIZE: u32 = 64;
const OBJECT_SIZE: u32 = 32;

fn non_key_color(rng: &mut ChaCha8Rng) -> Rgb<u8> {
    let mut c: [u8; 3] = rng.random();
    if c == DEFAULT_MASK_COLOR {
        c[0] ^= 1;
    }
    Rgb(c)
}

/// Writes a matching on-disk dataset layout: each scene gets a noisy raster
/// with a key-colored block plus a small detached fragment, and a prompt; each
/// object gets a flat-colored image.
pub fn write_rasters(dir: &Path, data: &SynthDataset, seed: u64) -> Result<(), SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ca1_ab1e);
    let key = Rgb(DEFAULT_MASK_COLOR);
    for scene in &data.catalog.scenes {
        let sdir = dir.join(SCENES_DIR).join(scene);
        fs::create_dir_all(&sdir).map_err(io_err(&sdir))?;
        let mut img = RgbImage::from_fn(SCENE_SIZE, SCENE_SIZE, |_, _| Rgb([0, 0, 0]));
        for px in img.pixels_mut() {
            *px = non_key_color(&mut rng);
        }
        let (w, h) = (rng.random_range(8..=20), rng.random_range(8..=20));
        let (x0, y0) = (
            rng.random_range(4..SCENE_SIZE - w - 4),
            rng.random_range(4..SCENE_SIZE - h - 4),
        );
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                img.put_pixel(x, y, key);
            }
        }
        // Two-pixel fragment just right of the block, inside the padding.
        let fx = (x0 + w + 2).min(SCENE_SIZE - 1);
        img.put_pixel(fx, y0, key);
        img.put_pixel(fx, y0 + 1, key);
        img.save(sdir.join(DEFAULT_SCENE_IMAGE))?;
        let prompt = format!("planted query for {scene}\n");
        let qpath = sdir.join(DEFAULT_QUERY_FILE);
        fs::write(&qpath, prompt).map_err(io_err(&qpath))?;
    }
    for object in &data.catalog.objects {
        let odir = dir.join(OBJECTS_DIR).join(object);
        fs::create_dir_all(&odir).map_err(io_err(&odir))?;
        let color = non_key_color(&mut rng);
        RgbImage::from_pixel(OBJECT_SIZE, OBJECT_SIZE, color).save(odir.join(DEFAULT_OBJECT_IMAGE))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::EmbeddingStore;

    fn small(adversarial: bool) -> SynthConfig {
        SynthConfig {
            scenes: 6,
            objects: 30,
            dim: 32,
            seed: 3,
            adversarial,
            ..Default::default()
        }
    }

    fn store(data: &SynthDataset) -> EmbeddingStore {
        EmbeddingStore::from_records(data.header.clone(), data.records.clone()).unwrap()
    }

    /// Brute-force scan: best object per scene for a modality pair.
    fn nearest(store: &EmbeddingStore, scene: &str, q: Modality, o: Modality) -> String {
        let qv = store.get(q, scene).unwrap();
        store
            .ids(o)
            .map(|id| (id, cos(qv, store.get(o, id).unwrap())))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0
            .to_owned()
    }

    #[test]
    fn planted_targets_are_nearest() {
        let data = generate(&small(false)).unwrap();
        let s = store(&data);
        assert_eq!(data.truth.len(), 6);
        for (scene, target) in &data.truth {
            assert_eq!(&nearest(&s, scene, Modality::QueryText, Modality::ObjectRgb), target);
            assert_eq!(
                &nearest(&s, scene, Modality::QueryShape, Modality::ObjectSilhouette),
                target
            );
        }
        let targets: std::collections::BTreeSet<_> = data.truth.values().collect();
        assert_eq!(targets.len(), 6);
    }

    #[test]
    fn adversarial_decoys_beat_text_only() {
        let data = generate(&small(true)).unwrap();
        assert_eq!(data.adversarial_scenes.len(), 6);
        let s = store(&data);
        for (scene, target) in &data.truth {
            assert_ne!(&nearest(&s, scene, Modality::QueryText, Modality::ObjectRgb), target);
            assert_eq!(
                &nearest(&s, scene, Modality::QueryShape, Modality::ObjectSilhouette),
                target
            );
        }
    }

    #[test]
    fn seeded_determinism() {
        assert_eq!(generate(&small(true)).unwrap(), generate(&small(true)).unwrap());
        let other = SynthConfig { seed: 4, ..small(true) };
        assert_ne!(
            generate(&small(true)).unwrap().records,
            generate(&other).unwrap().records
        );
    }

    #[test]
    fn config_validation() {
        let bad = [
            SynthConfig {
                scenes: 0,
                ..small(false)
            },
            SynthConfig {
                objects: 5,
                ..small(false)
            },
            SynthConfig { dim: 1, ..small(false) },
            SynthConfig {
                noise: 0.0,
                ..small(false)
            },
            SynthConfig {
                objects: 7,
                ..small(true)
            },
        ];
        for cfg in bad {
            assert!(matches!(generate(&cfg), Err(SynthError::InvalidConfig(_))), "{cfg:?}");
        }
    }

    #[test]
    fn crowded_low_dimension_is_infeasible() {
        let cfg = SynthConfig {
            scenes: 5,
            objects: 40,
            dim: 2,
            max_attempts: 50,
            ..Default::default()
        };
        assert!(matches!(generate(&cfg), Err(SynthError::InfeasibleMargin { .. })));
    }

    #[test]
    fn written_files_reload() {
        let tmp = tempfile::TempDir::new().unwrap();
        let data = generate(&small(false)).unwrap();
        write_dataset(tmp.path(), &data).unwrap();
        let loaded = crate::embedding::load_embeddings(tmp.path().join(EMBEDDINGS_FILE)).unwrap();
        assert_eq!(loaded, store(&data));
        let truth = crate::results::read_truth_csv(fs::File::open(tmp.path().join(TRUTH_FILE)).unwrap()).unwrap();
        assert_eq!(truth, data.truth);
    }
}
