//! Dataset ingestion: IDX files, flat CSV, and the seeded synthetic
//! two-class generator used for desk-scale runs. Also parses the
//! group-spec text format and computes variance-based group weights.

use crate::error::{Error, Result};
use crate::tensor::{GroupPartition, ImageTensor, PixelGroup};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Read;
use std::path::Path;

/// Images with class labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Vec<ImageTensor>,
    pub labels: Vec<usize>,
    pub name: String,
}

impl Dataset {
    pub fn new(images: Vec<ImageTensor>, labels: Vec<usize>, name: String) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::CountMismatch {
                images: images.len(),
                labels: labels.len(),
            });
        }
        Ok(Dataset {
            images,
            labels,
            name,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// First `n` samples (or all of them when fewer).
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            images: self.images[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
            name: self.name.clone(),
        }
    }

    /// Split off train/test partitions.
    pub fn split(&self, train: usize) -> (Dataset, Dataset) {
        let train = train.min(self.len());
        (
            Dataset {
                images: self.images[..train].to_vec(),
                labels: self.labels[..train].to_vec(),
                name: format!("{}-train", self.name),
            },
            Dataset {
                images: self.images[train..].to_vec(),
                labels: self.labels[train..].to_vec(),
                name: format!("{}-test", self.name),
            },
        )
    }
}

// Per-image seed stream independent of scheduling.
pub fn derive_seed(global: u64, index: usize) -> u64 {
    let mut z = global ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seeded two-class generator: class 0 is a smooth low-rank blob, class 1
/// is high-frequency stripes; both carry small uniform noise and live in
/// [0,1]. Labels alternate so classes stay exactly balanced.
pub fn synth_dataset(seed: u64, n: usize, shape: (usize, usize, usize)) -> Dataset {
    let (c, h, w) = shape;
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i));
        let label = i % 2;
        let img = if label == 0 {
            let cy = rng.random_range(0.25 * h as f64..0.75 * h as f64);
            let cx = rng.random_range(0.25 * w as f64..0.75 * w as f64);
            let sy = rng.random_range(h as f64 / 8.0..h as f64 / 4.0);
            let sx = rng.random_range(w as f64 / 8.0..w as f64 / 4.0);
            let amp = rng.random_range(0.3..0.6);
            let mut noise = Vec::with_capacity(c * h * w);
            for _ in 0..c * h * w {
                noise.push(rng.random_range(-0.05..0.05));
            }
            let mut k = 0;
            ImageTensor::from_fn(c, h, w, |_, y, x| {
                let gy = (-((y as f64 - cy).powi(2)) / (2.0 * sy * sy)).exp();
                let gx = (-((x as f64 - cx).powi(2)) / (2.0 * sx * sx)).exp();
                let v = 0.1 + amp * gy * gx + noise[k];
                k += 1;
                v.clamp(0.0, 1.0)
            })
        } else {
            let freq = rng.random_range(0.25..0.45);
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            // Contrast varies per image so the stripe class straddles a
            // range of separation margins.
            let amp = rng.random_range(0.08..0.3);
            let (st, ct) = theta.sin_cos();
            let mut noise = Vec::with_capacity(c * h * w);
            for _ in 0..c * h * w {
                noise.push(rng.random_range(-0.05..0.05));
            }
            let mut k = 0;
            ImageTensor::from_fn(c, h, w, |_, y, x| {
                let t = std::f64::consts::TAU * freq * (y as f64 * st + x as f64 * ct) + phase;
                let v = 0.5 + amp * t.sin() + noise[k];
                k += 1;
                v.clamp(0.0, 1.0)
            })
        };
        images.push(img);
        labels.push(label);
    }
    Dataset {
        images,
        labels,
        name: format!("synth(seed={seed},n={n},{c}x{h}x{w})"),
    }
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_be_u32(bytes: &[u8], offset: usize, path: &str) -> Result<u32> {
    let end = offset + 4;
    if end > bytes.len() {
        return Err(Error::Truncated {
            path: path.into(),
            expected: end,
            found: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Load an IDX image/label pair (the de-facto MNIST layout): big-endian
/// magic 0x803 for images, 0x801 for labels, pixels scaled to [0,1].
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let ipath = images_path.display().to_string();
    let mut bytes = Vec::new();
    std::fs::File::open(images_path)?.read_to_end(&mut bytes)?;
    let magic = read_be_u32(&bytes, 0, &ipath)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            path: ipath,
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let n = read_be_u32(&bytes, 4, &ipath)? as usize;
    let h = read_be_u32(&bytes, 8, &ipath)? as usize;
    let w = read_be_u32(&bytes, 12, &ipath)? as usize;
    let expected = 16 + n * h * w;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: ipath,
            expected: expected - 16,
            found: bytes.len().saturating_sub(16),
        });
    }
    let mut images = Vec::with_capacity(n);
    for i in 0..n {
        let start = 16 + i * h * w;
        let data: Vec<f64> = bytes[start..start + h * w]
            .iter()
            .map(|&b| b as f64 / 255.0)
            .collect();
        images.push(ImageTensor::new(1, h, w, data)?);
    }

    let lpath = labels_path.display().to_string();
    let mut bytes = Vec::new();
    std::fs::File::open(labels_path)?.read_to_end(&mut bytes)?;
    let magic = read_be_u32(&bytes, 0, &lpath)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            path: lpath,
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let ln = read_be_u32(&bytes, 4, &lpath)? as usize;
    if bytes.len() < 8 + ln {
        return Err(Error::Truncated {
            path: lpath,
            expected: ln,
            found: bytes.len().saturating_sub(8),
        });
    }
    if ln != n {
        return Err(Error::CountMismatch {
            images: n,
            labels: ln,
        });
    }
    let labels: Vec<usize> = bytes[8..8 + ln].iter().map(|&b| b as usize).collect();
    Dataset::new(images, labels, "idx".into())
}

/// Flat CSV dataset: header `c,h,w,n`, then `n` lines of
/// `label,v0,...,v_{chw-1}`.
pub fn load_csv_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty dataset file".into()))?;
    let dims: Vec<usize> = header
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("bad dataset header: {e}")))
        })
        .collect::<Result<_>>()?;
    if dims.len() != 4 {
        return Err(Error::Parse("dataset header must be c,h,w,n".into()));
    }
    let (c, h, w, n) = (dims[0], dims[1], dims[2], dims[3]);
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for line in lines {
        let mut toks = line.split(',');
        let label: usize = toks
            .next()
            .unwrap()
            .trim()
            .parse()
            .map_err(|e| Error::Parse(format!("bad label: {e}")))?;
        let data: Vec<f64> = toks
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("bad pixel value: {e}")))
            })
            .collect::<Result<_>>()?;
        if data.len() != c * h * w {
            return Err(Error::Parse(format!(
                "row has {} pixels, expected {}",
                data.len(),
                c * h * w
            )));
        }
        images.push(ImageTensor::new(c, h, w, data)?);
        labels.push(label);
    }
    if images.len() != n {
        return Err(Error::Parse(format!(
            "header declares {n} rows, found {}",
            images.len()
        )));
    }
    Dataset::new(images, labels, "csv".into())
}

/// Parse the group-spec text format: one group per line,
/// `channels=0,1,2 rows=8:16 cols=0:8 weight=1.5` (weight optional,
/// default 1). Blank lines and `#` comments are skipped.
pub fn parse_group_spec(text: &str) -> Result<GroupPartition> {
    let mut groups = Vec::new();
    let mut weights = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut channels: Option<Vec<usize>> = None;
        let mut rows: Option<(usize, usize)> = None;
        let mut cols: Option<(usize, usize)> = None;
        let mut weight = 1.0;
        for field in line.split_whitespace() {
            let (key, value) = field.split_once('=').ok_or_else(|| {
                Error::Parse(format!("line {}: field {field:?} is not key=value", ln + 1))
            })?;
            match key {
                "channels" => {
                    channels = Some(
                        value
                            .split(',')
                            .map(|t| {
                                t.parse::<usize>().map_err(|e| {
                                    Error::Parse(format!("line {}: bad channel: {e}", ln + 1))
                                })
                            })
                            .collect::<Result<_>>()?,
                    );
                }
                "rows" => rows = Some(parse_range(value, ln + 1)?),
                "cols" => cols = Some(parse_range(value, ln + 1)?),
                "weight" => {
                    weight = value
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("line {}: bad weight: {e}", ln + 1)))?;
                }
                other => {
                    return Err(Error::Parse(format!(
                        "line {}: unknown field {other:?}",
                        ln + 1
                    )));
                }
            }
        }
        let channels =
            channels.ok_or_else(|| Error::Parse(format!("line {}: missing channels", ln + 1)))?;
        let rows = rows.ok_or_else(|| Error::Parse(format!("line {}: missing rows", ln + 1)))?;
        let cols = cols.ok_or_else(|| Error::Parse(format!("line {}: missing cols", ln + 1)))?;
        groups.push(PixelGroup::new(channels, rows, cols)?);
        weights.push(weight);
    }
    GroupPartition::new(groups, weights)
}

fn parse_range(value: &str, line: usize) -> Result<(usize, usize)> {
    let (a, b) = value
        .split_once(':')
        .ok_or_else(|| Error::Parse(format!("line {line}: range {value:?} is not a:b")))?;
    let lo = a
        .parse::<usize>()
        .map_err(|e| Error::Parse(format!("line {line}: bad range start: {e}")))?;
    let hi = b
        .parse::<usize>()
        .map_err(|e| Error::Parse(format!("line {line}: bad range end: {e}")))?;
    Ok((lo, hi))
}

/// Variance-based group weights: `w_g = 1 / (std(x[g]) + kappa)`. Low
/// variance regions get large weights and therefore small budgets.
pub fn auto_weights(
    partition: &GroupPartition,
    image: &ImageTensor,
    kappa: f64,
) -> Result<GroupPartition> {
    let mut weights = Vec::with_capacity(partition.len());
    for g in partition.groups() {
        let m = image.extract_group(g)?;
        let n = m.data().len() as f64;
        let mean = m.data().iter().sum::<f64>() / n;
        let var = m
            .data()
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / n;
        weights.push(1.0 / (var.sqrt() + kappa));
    }
    partition.with_weights(weights)
}

pub const AUTO_WEIGHT_KAPPA: f64 = 0.1;

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn synth_is_deterministic_and_in_range() {
        let a = synth_dataset(7, 10, (1, 16, 16));
        let b = synth_dataset(7, 10, (1, 16, 16));
        for (x, y) in a.images.iter().zip(&b.images) {
            assert_eq!(x, y);
        }
        assert_eq!(a.labels, b.labels);
        for img in &a.images {
            for &v in img.data() {
                assert!((0.0..=1.0).contains(&v));
            }
        }
        // Balanced classes.
        assert_eq!(a.labels.iter().filter(|&&l| l == 0).count(), 5);
    }

    fn write_idx_fixture(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
        // Hand-built 2-image fixture: 2x3 images with known bytes.
        let images = dir.join("imgs.idx");
        let labels = dir.join("labels.idx");
        let mut f = std::fs::File::create(&images).unwrap();
        f.write_all(&0x0000_0803u32.to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        f.write_all(&3u32.to_be_bytes()).unwrap();
        f.write_all(&[0, 51, 102, 153, 204, 255]).unwrap();
        f.write_all(&[255, 204, 153, 102, 51, 0]).unwrap();
        let mut f = std::fs::File::create(&labels).unwrap();
        f.write_all(&0x0000_0801u32.to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        f.write_all(&[7, 3]).unwrap();
        (images, labels)
    }

    #[test]
    fn idx_fixture_round_trip() {
        let dir = std::env::temp_dir().join(format!("fwnucl-idx-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let (images, labels) = write_idx_fixture(&dir);
        let ds = load_idx(&images, &labels).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.labels, vec![7, 3]);
        assert_eq!(ds.images[0].shape(), (1, 2, 3));
        assert!((ds.images[0].at(0, 0, 1) - 51.0 / 255.0).abs() < 1e-12);
        assert!((ds.images[1].at(0, 0, 0) - 1.0).abs() < 1e-12);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn idx_distinct_diagnostics() {
        let dir = std::env::temp_dir().join(format!("fwnucl-idx-bad-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let (images, labels) = write_idx_fixture(&dir);

        // Bad magic.
        let bad = dir.join("bad.idx");
        std::fs::write(&bad, 0xdead_beefu32.to_be_bytes()).unwrap();
        match load_idx(&bad, &labels) {
            Err(Error::BadMagic { .. }) => {}
            other => panic!("expected BadMagic, got {other:?}"),
        }

        // Truncated payload.
        let bytes = std::fs::read(&images).unwrap();
        let trunc = dir.join("trunc.idx");
        std::fs::write(&trunc, &bytes[..bytes.len() - 3]).unwrap();
        match load_idx(&trunc, &labels) {
            Err(Error::Truncated { .. }) => {}
            other => panic!("expected Truncated, got {other:?}"),
        }

        // Count mismatch.
        let short_labels = dir.join("short-labels.idx");
        let mut f = std::fs::File::create(&short_labels).unwrap();
        f.write_all(&0x0000_0801u32.to_be_bytes()).unwrap();
        f.write_all(&1u32.to_be_bytes()).unwrap();
        f.write_all(&[7]).unwrap();
        match load_idx(&images, &short_labels) {
            Err(Error::CountMismatch {
                images: 2,
                labels: 1,
            }) => {}
            other => panic!("expected CountMismatch, got {other:?}"),
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn csv_dataset_round_trip_and_count_check() {
        let dir = std::env::temp_dir().join(format!("fwnucl-csv-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ds.csv");
        std::fs::write(&path, "1,2,2,2\n0,0.0,0.25,0.5,0.75\n1,1.0,0.75,0.5,0.25\n").unwrap();
        let ds = load_csv_dataset(&path).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.labels, vec![0, 1]);
        assert!((ds.images[1].at(0, 0, 0) - 1.0).abs() < 1e-12);

        std::fs::write(&path, "1,2,2,3\n0,0.0,0.25,0.5,0.75\n").unwrap();
        assert!(load_csv_dataset(&path).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn group_spec_parsing() {
        let spec = "# localized attack\nchannels=0 rows=0:8 cols=0:8 weight=1.5\nchannels=0 rows=8:16 cols=0:8\n";
        let p = parse_group_spec(spec).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.weights(), &[1.5, 1.0]);
        assert_eq!(p.groups()[1].row_range, (8, 16));

        assert!(parse_group_spec("channels=0 rows=0:4").is_err()); // missing cols
        assert!(parse_group_spec("channels=0 rows=0:4 cols=4").is_err()); // bad range
    }

    #[test]
    fn auto_weights_ranking_is_intensity_scale_invariant() {
        let partition = GroupPartition::new(
            vec![
                PixelGroup::new(vec![0], (0, 4), (0, 4)).unwrap(),
                PixelGroup::new(vec![0], (0, 4), (4, 8)).unwrap(),
                PixelGroup::new(vec![0], (4, 8), (0, 8)).unwrap(),
            ],
            vec![1.0; 3],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let image = ImageTensor::from_fn(1, 8, 8, |_, _, _| rng.random_range(0.0..1.0));
        let base = auto_weights(&partition, &image, AUTO_WEIGHT_KAPPA).unwrap();

        let c = 2.5;
        let scaled_img = image.map(|v| v * c);
        // Kappa follows the intensity scale, so the ranking is preserved.
        let scaled = auto_weights(&partition, &scaled_img, AUTO_WEIGHT_KAPPA * c).unwrap();

        let rank = |w: &[f64]| {
            let mut idx: Vec<usize> = (0..w.len()).collect();
            idx.sort_by(|&a, &b| w[a].partial_cmp(&w[b]).unwrap());
            idx
        };
        assert_eq!(rank(base.weights()), rank(scaled.weights()));
    }
}
