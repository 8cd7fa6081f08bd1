//! End-to-end dataset construction.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    flip_clip, flip_hand, merge_body_hand, penetration_filter, synth_body_clip, synth_hand_with, time_reverse,
    BodyClip, DatafuseError, HandClip, HandLimits, Side, PENETRATION_THRESHOLD,
};
use crate::kinematics::{presets, SkeletonSpec};
use crate::representation::{encode, MotionFeatures};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Preset name (`desk37`, `full55`) or path to a skeleton JSON file.
    pub skeleton: String,
    /// Generated body clips before flipping.
    pub body_clips: usize,
    pub frames: usize,
    /// Generated left-hand clips before flipping and reversal.
    pub hand_clips: usize,
    pub seed: u64,
    pub penetration_threshold: f64,
    /// Hand pairings tried per body clip before it is dropped.
    pub retry_budget: usize,
    pub flip: bool,
    pub time_reverse: bool,
    /// When false the bodies keep their own (rest) hands, as for sources
    /// that already carry finger motion.
    pub merge_hands: bool,
    pub hand_limits: HandLimits,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            skeleton: "desk37".into(),
            body_clips: 250,
            frames: 120,
            hand_clips: 64,
            seed: 0,
            penetration_threshold: PENETRATION_THRESHOLD,
            retry_budget: 8,
            flip: true,
            time_reverse: true,
            merge_hands: true,
            hand_limits: HandLimits::default(),
        }
    }
}

impl DatasetConfig {
    pub fn skeleton_spec(&self) -> Result<SkeletonSpec, DatafuseError> {
        match presets::by_name(&self.skeleton) {
            Some(s) => Ok(s),
            None => Ok(SkeletonSpec::load(Path::new(&self.skeleton))?),
        }
    }

    fn validate(&self) -> Result<(), DatafuseError> {
        if self.frames < 2 {
            return Err(DatafuseError::Config(format!("frames must be at least 2, got {}", self.frames)));
        }
        if self.merge_hands && self.hand_clips == 0 {
            return Err(DatafuseError::Config("merging hands needs hand_clips > 0".into()));
        }
        if self.retry_budget == 0 {
            return Err(DatafuseError::Config("retry_budget must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub file: String,
    pub source: String,
    pub flipped: bool,
    /// Indices into the left/right hand pools, when merged.
    pub hands: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetCounts {
    pub original: usize,
    pub flipped: usize,
    pub total: usize,
    pub hand_generated: usize,
    pub hand_reversed: usize,
    pub hand_flipped: usize,
}

/// One merge attempt, in emission order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairingRecord {
    pub body: usize,
    pub attempt: usize,
    pub left: usize,
    pub right: usize,
    pub accepted: bool,
    pub depth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config: DatasetConfig,
    pub skeleton_hash: String,
    pub seed: u64,
    pub clips: Vec<ClipEntry>,
    pub counts: DatasetCounts,
    pub rejections: usize,
    pub dropped: Vec<usize>,
    pub pairings: Vec<PairingRecord>,
}

/// Derives independent per-item seeds from the dataset seed.
fn sub_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(index) * 2);
    rng.gen()
}

const BODY_STREAM: u64 = 1;
const HAND_STREAM: u64 = 2;
const PAIR_STREAM: u64 = 3;

/// Left and right hand pools: generated left clips, their time reversals,
/// and the mirrored right-hand counterparts of both.
pub fn hand_pools(config: &DatasetConfig, skel: &SkeletonSpec) -> Result<(Vec<HandClip>, Vec<HandClip>), DatafuseError> {
    let generated: Vec<HandClip> = (0..config.hand_clips as u64)
        .into_par_iter()
        .map(|h| {
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, HAND_STREAM, h));
            synth_hand_with(skel, Side::Left, config.frames, &config.hand_limits, &mut rng)
        })
        .collect();
    let mut left = generated.clone();
    if config.time_reverse {
        left.extend(generated.iter().map(time_reverse));
    }
    let right = left.iter().map(|c| flip_hand(skel, c)).collect::<Result<_, _>>()?;
    Ok((left, right))
}

/// Generator seed behind body slot `index` (mirrored slots share their
/// original's seed).
pub(crate) fn body_seed(config: &DatasetConfig, index: usize) -> u64 {
    let per = if config.flip { 2 } else { 1 };
    sub_seed(config.seed, BODY_STREAM, (index / per) as u64)
}

/// Body clip `index` of the flipped-and-original sequence: even slots hold
/// generated clips, odd slots their mirrors (when flipping is enabled).
fn body_clip(config: &DatasetConfig, skel: &SkeletonSpec, index: usize) -> Result<(BodyClip, bool), DatafuseError> {
    let per = if config.flip { 2 } else { 1 };
    let base = synth_body_clip(body_seed(config, index), config.frames, skel);
    if index % per == 1 {
        Ok((flip_clip(skel, &base)?, true))
    } else {
        Ok((base, false))
    }
}

struct ClipResult {
    entry: Option<ClipEntry>,
    features: Option<MotionFeatures>,
    pairings: Vec<PairingRecord>,
}

fn process_clip(
    config: &DatasetConfig,
    skel: &SkeletonSpec,
    pools: &(Vec<HandClip>, Vec<HandClip>),
    index: usize,
) -> Result<ClipResult, DatafuseError> {
    let (body, flipped) = body_clip(config, skel, index)?;
    let file = format!("clip_{index:05}.mpf");
    let mut pairings = Vec::new();
    let (poses, hands) = if config.merge_hands {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, PAIR_STREAM, index as u64));
        let mut found = None;
        for attempt in 0..config.retry_budget {
            let l = rng.gen_range(0..pools.0.len());
            let r = rng.gen_range(0..pools.1.len());
            let merged = merge_body_hand(skel, &body, &pools.0[l], &pools.1[r])?;
            let outcome = penetration_filter(skel, &merged, config.penetration_threshold)?;
            pairings.push(PairingRecord {
                body: index,
                attempt,
                left: l,
                right: r,
                accepted: outcome.accepted(),
                depth: outcome.depth(),
            });
            if outcome.accepted() {
                found = Some((merged, (l, r)));
                break;
            }
        }
        match found {
            Some((poses, hands)) => (poses, Some(hands)),
            None => {
                log::warn!("{}", DatafuseError::RetryExhausted(index));
                return Ok(ClipResult {
                    entry: None,
                    features: None,
                    pairings,
                });
            }
        }
    } else {
        if !penetration_filter(skel, &body.poses, config.penetration_threshold)?.accepted() {
            log::warn!("body clip {index} penetrates with its own hands; dropped");
            return Ok(ClipResult {
                entry: None,
                features: None,
                pairings,
            });
        }
        (body.poses, None)
    };
    let features = encode(skel, &poses, None)?;
    Ok(ClipResult {
        entry: Some(ClipEntry {
            file,
            source: body.source_tag,
            flipped,
            hands,
        }),
        features: Some(features),
        pairings,
    })
}

/// Generates, augments, merges, filters and encodes a dataset into `out`,
/// returning the manifest that is also written there as JSON.
pub fn build_dataset(config: &DatasetConfig, out: &Path) -> Result<DatasetManifest, DatafuseError> {
    config.validate()?;
    let skel = config.skeleton_spec()?;
    std::fs::create_dir_all(out)?;
    let pools = if config.merge_hands {
        hand_pools(config, &skel)?
    } else {
        (Vec::new(), Vec::new())
    };
    let total_bodies = config.body_clips * if config.flip { 2 } else { 1 };
    let results: Vec<ClipResult> = (0..total_bodies)
        .into_par_iter()
        .map(|i| process_clip(config, &skel, &pools, i))
        .collect::<Result<_, _>>()?;

    let mut manifest = DatasetManifest {
        config: config.clone(),
        skeleton_hash: format!("{:016x}", skel.hash()),
        seed: config.seed,
        clips: Vec::new(),
        counts: DatasetCounts {
            hand_generated: if config.merge_hands { config.hand_clips } else { 0 },
            hand_reversed: if config.merge_hands && config.time_reverse { config.hand_clips } else { 0 },
            hand_flipped: pools.1.len(),
            ..Default::default()
        },
        rejections: 0,
        dropped: Vec::new(),
        pairings: Vec::new(),
    };
    for (i, r) in results.into_iter().enumerate() {
        manifest.rejections += r.pairings.iter().filter(|p| !p.accepted).count();
        manifest.pairings.extend(r.pairings);
        match (r.entry, r.features) {
            (Some(entry), Some(features)) => {
                features.save(&out.join(&entry.file))?;
                if entry.flipped {
                    manifest.counts.flipped += 1;
                } else {
                    manifest.counts.original += 1;
                }
                manifest.clips.push(entry);
            }
            _ => manifest.dropped.push(i),
        }
    }
    manifest.counts.total = manifest.clips.len();
    std::fs::write(out.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    log::info!(
        "dataset: {} clips, {} rejected pairings, {} dropped",
        manifest.counts.total,
        manifest.rejections,
        manifest.dropped.len()
    );
    Ok(manifest)
}

/// Reads a dataset directory written by [`build_dataset`].
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<MotionFeatures>), DatafuseError> {
    let manifest: DatasetManifest = serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    let clips = manifest
        .clips
        .iter()
        .map(|c| MotionFeatures::load(&dir.join(&c.file)))
        .collect::<Result<_, _>>()?;
    Ok((manifest, clips))
}
