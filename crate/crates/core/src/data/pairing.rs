use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{PairedInstance, Sample};
use crate::error::{Error, Result};
use crate::frames::SpikeFrameSequence;
use crate::topology::NUM_CLASSES;

fn group_by_class<T>(items: Vec<(T, usize)>, num_classes: usize) -> Result<Vec<Vec<T>>> {
    let mut groups: Vec<Vec<T>> = (0..num_classes).map(|_| Vec::new()).collect();
    for (item, label) in items {
        groups
            .get_mut(label)
            .ok_or_else(|| Error::Format(format!("label {label} outside 0..{num_classes}")))?
            .push(item);
    }
    Ok(groups)
}

/// Pairs items of two modalities class by class: each class is shuffled
/// per modality and zipped, so the smaller side bounds the pair count.
/// Output is class-major.
pub fn pair_by_class<V, A>(
    visual: Vec<(V, usize)>,
    auditory: Vec<(A, usize)>,
    num_classes: usize,
    seed: u64,
) -> Result<Vec<(V, A, usize)>> {
    let visual = group_by_class(visual, num_classes)?;
    let auditory = group_by_class(auditory, num_classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (class, (mut v, mut a)) in visual.into_iter().zip(auditory).enumerate() {
        if v.is_empty() {
            return Err(Error::Pairing {
                class,
                modality: "visual",
            });
        }
        if a.is_empty() {
            return Err(Error::Pairing {
                class,
                modality: "auditory",
            });
        }
        v.shuffle(&mut rng);
        a.shuffle(&mut rng);
        out.extend(v.into_iter().zip(a).map(|(v, a)| (v, a, class)));
    }
    Ok(out)
}

/// Pairs labelled visual and auditory frame sequences over the ten digit
/// classes.
pub fn pair_instances(
    visual: Vec<(SpikeFrameSequence, usize)>,
    auditory: Vec<(SpikeFrameSequence, usize)>,
    seed: u64,
) -> Result<Vec<PairedInstance>> {
    Ok(pair_by_class(visual, auditory, NUM_CLASSES, seed)?
        .into_iter()
        .map(|(visual, auditory, label)| PairedInstance {
            visual,
            auditory,
            label,
        })
        .collect())
}

impl From<PairedInstance> for Sample {
    fn from(p: PairedInstance) -> Self {
        Sample {
            visual: Some(p.visual),
            auditory: Some(p.auditory),
            label: p.label,
        }
    }
}
