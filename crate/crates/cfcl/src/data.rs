//! Dataset ingestion: the binary IDX container, a synthetic Gaussian-class
//! generator, and the non-i.i.d. label partitioner.
//!
//! Protocol code only ever sees [`Datapoint`]s (an opaque id plus a vector);
//! labels stay in [`LabeledDataset`] on the harness side.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, IdxError, Result};

/// An unlabeled point as it travels through the exchange protocol. The id is
/// a stable index into the source dataset and carries no label information.
#[derive(Debug, Clone, PartialEq)]
pub struct Datapoint {
    pub id: usize,
    pub values: Vec<f64>,
}

/// A labeled dataset, visible only to the harness (partitioning, probes,
/// diagnostics). `points[i]` has label `labels[i]`.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub dim: usize,
    pub class_count: usize,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Strips labels, producing protocol-facing datapoints with ids equal to
    /// the row index.
    pub fn to_datapoints(&self) -> Vec<Datapoint> {
        self.points
            .iter()
            .enumerate()
            .map(|(id, values)| Datapoint {
                id,
                values: values.clone(),
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// IDX container
// ---------------------------------------------------------------------------

pub const IDX_MAGIC_LABELS: u32 = 0x0000_0801;
pub const IDX_MAGIC_IMAGES: u32 = 0x0000_0803;

/// A decoded IDX tensor of unsigned bytes: big-endian magic, big-endian u32
/// dimension sizes, then the row-major payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub magic: u32,
    pub dims: Vec<u32>,
    pub data: Vec<u8>,
}

fn read_u32_be(bytes: &[u8], offset: usize) -> std::result::Result<u32, IdxError> {
    if bytes.len() < offset + 4 {
        return Err(IdxError::Truncated {
            expected: offset + 4,
            got: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Parses an IDX byte stream. No value transformation happens here.
pub fn parse_idx(bytes: &[u8]) -> std::result::Result<IdxTensor, IdxError> {
    let magic = read_u32_be(bytes, 0)?;
    let ndims = match magic {
        IDX_MAGIC_LABELS => 1,
        IDX_MAGIC_IMAGES => 3,
        other => return Err(IdxError::BadMagic(other)),
    };
    let mut dims = Vec::with_capacity(ndims);
    for d in 0..ndims {
        dims.push(read_u32_be(bytes, 4 + 4 * d)?);
    }
    let mut count: usize = 1;
    for &d in &dims {
        count = count
            .checked_mul(d as usize)
            .ok_or_else(|| IdxError::DimensionOverflow(dims.clone()))?;
    }
    let header = 4 + 4 * ndims;
    let expected = header
        .checked_add(count)
        .ok_or_else(|| IdxError::DimensionOverflow(dims.clone()))?;
    if bytes.len() < expected {
        return Err(IdxError::Truncated {
            expected,
            got: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(IdxError::TrailingBytes {
            trailing: bytes.len() - expected,
        });
    }
    Ok(IdxTensor {
        magic,
        dims,
        data: bytes[header..].to_vec(),
    })
}

/// Serializes a tensor back to the byte format `parse_idx` accepts.
pub fn write_idx(tensor: &IdxTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * tensor.dims.len() + tensor.data.len());
    out.extend_from_slice(&tensor.magic.to_be_bytes());
    for &d in &tensor.dims {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(&tensor.data);
    out
}

/// Assembles a labeled dataset from an image tensor and a label tensor.
/// Pixel values are scaled to [0,1] here, at assembly time.
pub fn dataset_from_idx(images: &IdxTensor, labels: &IdxTensor) -> Result<LabeledDataset> {
    if images.magic != IDX_MAGIC_IMAGES {
        return Err(IdxError::BadMagic(images.magic).into());
    }
    if labels.magic != IDX_MAGIC_LABELS {
        return Err(IdxError::BadMagic(labels.magic).into());
    }
    let n = images.dims[0] as usize;
    if labels.dims[0] as usize != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: labels.dims[0] as usize,
        });
    }
    let dim = (images.dims[1] * images.dims[2]) as usize;
    let points: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            images.data[i * dim..(i + 1) * dim]
                .iter()
                .map(|&b| b as f64 / 255.0)
                .collect()
        })
        .collect();
    let labels_vec: Vec<usize> = labels.data.iter().map(|&b| b as usize).collect();
    let class_count = labels_vec.iter().max().map_or(0, |&m| m + 1);
    Ok(LabeledDataset {
        points,
        labels: labels_vec,
        dim,
        class_count,
    })
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

/// Generates `class_count * per_class` points: class means are sampled with
/// pairwise distance at least `class_separation`, points add isotropic
/// Gaussian noise of scale `sigma` around their mean.
pub fn synth_generate(
    class_count: usize,
    per_class: usize,
    dim: usize,
    sigma: f64,
    class_separation: f64,
    rng: &mut impl Rng,
) -> Result<LabeledDataset> {
    if class_count == 0 || per_class == 0 || dim == 0 {
        return Err(Error::EmptyInput("synthetic dataset sizes"));
    }
    if sigma < 0.0 {
        return Err(Error::config("dataset.sigma", "must be >= 0"));
    }

    // Rejection-sample the means as random directions on a sphere. In high
    // dimension the pairwise distances concentrate near radius * sqrt(2), so
    // every class pair is comparably separated. When the dimension is too
    // low to fit all classes at the tight radius, the radius grows across
    // retry batches until placement succeeds.
    let mut means: Option<Vec<Vec<f64>>> = None;
    'attempt: for attempt in 0..2000 {
        let radius = class_separation * 1.1 * 1.3f64.powi((attempt / 100) as i32);
        let candidate: Vec<Vec<f64>> = (0..class_count)
            .map(|_| {
                let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                v.iter().map(|x| x / norm * radius).collect()
            })
            .collect();
        for i in 0..class_count {
            for j in (i + 1)..class_count {
                let d2: f64 = candidate[i]
                    .iter()
                    .zip(&candidate[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d2 < class_separation * class_separation {
                    continue 'attempt;
                }
            }
        }
        means = Some(candidate);
        break;
    }
    let means = means.ok_or_else(|| {
        Error::RetriesExhausted(format!(
            "cannot place {class_count} means {class_separation} apart in {dim} dimensions"
        ))
    })?;

    let mut points = Vec::with_capacity(class_count * per_class);
    let mut labels = Vec::with_capacity(class_count * per_class);
    for (label, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            let p: Vec<f64> = mean
                .iter()
                .map(|&m| {
                    let z: f64 = StandardNormal.sample(rng);
                    m + sigma * z
                })
                .collect();
            points.push(p);
            labels.push(label);
        }
    }
    Ok(LabeledDataset {
        points,
        labels,
        dim,
        class_count,
    })
}

// ---------------------------------------------------------------------------
// Non-i.i.d. partitioner
// ---------------------------------------------------------------------------

/// Assigns each device `labels_per_device` distinct labels by walking a
/// shuffled label cycle (so all labels are covered as evenly as possible),
/// then samples `per_device_size` points without replacement from those
/// labels' pools. Device datasets are disjoint.
///
/// Returned values are per-device lists of row indices into `dataset`.
pub fn partition_noniid(
    dataset: &LabeledDataset,
    device_count: usize,
    labels_per_device: usize,
    per_device_size: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<usize>>> {
    if device_count == 0 {
        return Err(Error::EmptyInput("device count"));
    }
    if labels_per_device == 0 || labels_per_device > dataset.class_count {
        return Err(Error::config(
            "labels_per_device",
            format!(
                "must be in 1..={} (class count), got {labels_per_device}",
                dataset.class_count
            ),
        ));
    }

    let class_count = dataset.class_count;
    // Label multiset with every label repeated as evenly as possible, dealt
    // in shuffled order so device label sets overlap in varied ways.
    let slots = device_count * labels_per_device;
    let mut multiset: Vec<usize> = (0..slots).map(|k| k % class_count).collect();
    let device_labels = 'deal: {
        for _ in 0..1000 {
            for k in (1..multiset.len()).rev() {
                let j = rng.random_range(0..=k);
                multiset.swap(k, j);
            }
            // Deal each device distinct labels, scanning past duplicates.
            let mut pool = multiset.clone();
            let mut assignment: Vec<Vec<usize>> = Vec::with_capacity(device_count);
            let mut feasible = true;
            for _ in 0..device_count {
                let mut mine = Vec::with_capacity(labels_per_device);
                for _ in 0..labels_per_device {
                    match pool.iter().position(|l| !mine.contains(l)) {
                        Some(pos) => mine.push(pool.remove(pos)),
                        None => {
                            feasible = false;
                            break;
                        }
                    }
                }
                if !feasible {
                    break;
                }
                assignment.push(mine);
            }
            if feasible {
                break 'deal assignment;
            }
        }
        return Err(Error::config(
            "labels_per_device",
            "could not deal distinct labels to every device",
        ));
    };

    // Shuffle each label pool once; devices then consume disjoint prefixes.
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); class_count];
    for (idx, &label) in dataset.labels.iter().enumerate() {
        pools[label].push(idx);
    }
    for pool in &mut pools {
        for k in (1..pool.len()).rev() {
            let j = rng.random_range(0..=k);
            pool.swap(k, j);
        }
    }
    let mut cursor = vec![0usize; class_count];

    let mut result = Vec::with_capacity(device_count);
    for labels in &device_labels {
        // Spread the quota as evenly as possible across the device's labels.
        let base = per_device_size / labels_per_device;
        let extra = per_device_size % labels_per_device;
        let mut taken = Vec::with_capacity(per_device_size);
        for (k, &label) in labels.iter().enumerate() {
            let want = base + usize::from(k < extra);
            let pool = &pools[label];
            if cursor[label] + want > pool.len() {
                return Err(Error::config(
                    "per_device_size",
                    format!(
                        "label {label} pool exhausted: need {want} more, {} left",
                        pool.len() - cursor[label]
                    ),
                ));
            }
            taken.extend_from_slice(&pool[cursor[label]..cursor[label] + want]);
            cursor[label] += want;
        }
        result.push(taken);
    }
    Ok(result)
}
