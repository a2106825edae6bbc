//! Episode sampling over a [`Dataset`], with an access log so callers can
//! check which images a training phase actually touched.

use std::collections::{BTreeMap, BTreeSet};

use icpe_tensor::Tensor;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::boxes::{BoxAnnotation, ClassId};
use crate::data::world::{Dataset, SupportRendition};
use crate::detector::{SupportInstance, SupportSet};
use crate::error::{IcpeError, Result};

#[derive(Debug, Clone)]
pub struct Query {
    pub image_index: usize,
    /// `[3, H, W]` in `[0, 1]`.
    pub image: Tensor,
    pub annotations: Vec<BoxAnnotation>,
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub k: usize,
    pub supports: SupportSet,
    /// Dataset indices of the supports, parallel to `supports`.
    pub support_indices: BTreeMap<ClassId, Vec<usize>>,
    pub queries: Vec<Query>,
}

pub fn support_instance(s: &SupportRendition) -> SupportInstance {
    let (w, h) = (s.image.width, s.image.height);
    SupportInstance {
        image: Tensor::new(s.image.to_planar(), &[3, h, w]).expect("valid image"),
        mask: Tensor::new(s.mask.iter().map(|&m| f64::from(m)).collect(), &[1, h, w])
            .expect("valid mask"),
        class_id: s.class_id,
    }
}

pub fn query(data: &Dataset, index: usize) -> Query {
    let img = &data.images[index];
    let (w, h) = (img.image.width, img.image.height);
    Query {
        image_index: index,
        image: Tensor::new(img.image.to_planar(), &[3, h, w]).expect("valid image"),
        annotations: img.annotations.clone(),
    }
}

/// Images whose (non-empty) annotation set lies inside `pool`.
pub fn eligible_images(data: &Dataset, pool: &[ClassId]) -> Vec<usize> {
    (0..data.images.len())
        .filter(|&i| {
            let img = &data.images[i];
            !img.annotations.is_empty() && img.classes().all(|c| pool.contains(&c))
        })
        .collect()
}

/// `k` supports per class drawn uniformly without replacement.
pub fn sample_supports<R: Rng + ?Sized>(
    data: &Dataset,
    classes: &[ClassId],
    k: usize,
    rng: &mut R,
) -> Result<BTreeMap<ClassId, Vec<usize>>> {
    let mut out = BTreeMap::new();
    for &c in classes {
        let avail = data.supports_of(c);
        if avail.len() < k {
            return Err(IcpeError::InsufficientInstances {
                class: c,
                needed: k,
                available: avail.len(),
            });
        }
        out.insert(c, avail.choose_multiple(rng, k).copied().collect());
    }
    Ok(out)
}

fn build_supports(data: &Dataset, idx: &BTreeMap<ClassId, Vec<usize>>) -> SupportSet {
    idx.iter()
        .map(|(&c, list)| (c, list.iter().map(|&i| support_instance(&data.supports[i])).collect()))
        .collect()
}

#[derive(Debug, Default, Clone)]
pub struct AccessLog {
    pub images: Vec<usize>,
    pub supports: Vec<usize>,
}

impl AccessLog {
    /// Every visited image and support, checked against `forbidden`.
    pub fn touches_any(&self, data: &Dataset, forbidden: &[ClassId]) -> bool {
        self.images
            .iter()
            .any(|&i| data.images[i].classes().any(|c| forbidden.contains(&c)))
            || self
                .supports
                .iter()
                .any(|&i| forbidden.contains(&data.supports[i].class_id))
    }
}

/// Draws episodes restricted to a class pool, logging what it hands out.
#[derive(Debug)]
pub struct EpisodeSampler<'a> {
    pub data: &'a Dataset,
    pub pool: Vec<ClassId>,
    eligible: Vec<usize>,
    pub log: AccessLog,
}

impl<'a> EpisodeSampler<'a> {
    pub fn new(data: &'a Dataset, pool: &[ClassId]) -> Result<Self> {
        if pool.is_empty() {
            return Err(IcpeError::invalid("class pool is empty"));
        }
        let eligible = eligible_images(data, pool);
        if eligible.is_empty() {
            return Err(IcpeError::invalid(format!("no images annotated only with classes {pool:?}")));
        }
        Ok(EpisodeSampler {
            data,
            pool: pool.to_vec(),
            eligible,
            log: AccessLog::default(),
        })
    }

    /// `k` supports for every pool class plus `n_query` eligible queries.
    pub fn sample<R: Rng + ?Sized>(&mut self, k: usize, n_query: usize, rng: &mut R) -> Result<Episode> {
        let pool = self.pool.clone();
        let queries: Vec<usize> = self.eligible.choose_multiple(rng, n_query).copied().collect();
        self.assemble(&pool, k, queries, rng)
    }

    /// One query plus a roster of at most `ways` classes that includes
    /// every class annotated in the query.
    pub fn sample_ways<R: Rng + ?Sized>(&mut self, k: usize, ways: usize, rng: &mut R) -> Result<Episode> {
        let q = *self.eligible.choose(rng).expect("non-empty");
        let mut roster: BTreeSet<ClassId> = self.data.images[q].classes().collect();
        let mut others: Vec<ClassId> = self.pool.iter().copied().filter(|c| !roster.contains(c)).collect();
        others.shuffle(rng);
        for c in others {
            if roster.len() >= ways {
                break;
            }
            roster.insert(c);
        }
        let roster: Vec<ClassId> = roster.into_iter().collect();
        self.assemble(&roster, k, vec![q], rng)
    }

    fn assemble<R: Rng + ?Sized>(
        &mut self,
        roster: &[ClassId],
        k: usize,
        queries: Vec<usize>,
        rng: &mut R,
    ) -> Result<Episode> {
        let support_indices = sample_supports(self.data, roster, k, rng)?;
        self.log.images.extend(&queries);
        self.log.supports.extend(support_indices.values().flatten());
        Ok(Episode {
            k,
            supports: build_supports(self.data, &support_indices),
            support_indices,
            queries: queries.iter().map(|&i| query(self.data, i)).collect(),
        })
    }
}

/// The fixed few-shot training subset used for finetuning: `k` supports
/// per class and, for each class, `k` scene images that contain it.
#[derive(Debug, Clone, PartialEq)]
pub struct FewShotSubset {
    pub k: usize,
    pub supports: BTreeMap<ClassId, Vec<usize>>,
    pub images: Vec<usize>,
}

impl FewShotSubset {
    pub fn draw<R: Rng + ?Sized>(data: &Dataset, classes: &[ClassId], k: usize, rng: &mut R) -> Result<Self> {
        let supports = sample_supports(data, classes, k, rng)?;
        let mut images = Vec::new();
        for &c in classes {
            let candidates: Vec<usize> = (0..data.images.len())
                .filter(|i| !images.contains(i) && data.images[*i].classes().any(|x| x == c))
                .collect();
            if candidates.len() < k {
                return Err(IcpeError::InsufficientInstances {
                    class: c,
                    needed: k,
                    available: candidates.len(),
                });
            }
            images.extend(candidates.choose_multiple(rng, k));
        }
        Ok(FewShotSubset { k, supports, images })
    }

    /// The subset's supports with one of its images as the query.
    pub fn episode<R: Rng + ?Sized>(&self, data: &Dataset, rng: &mut R) -> Episode {
        let q = *self.images.choose(rng).expect("subset has images");
        Episode {
            k: self.k,
            supports: build_supports(data, &self.supports),
            support_indices: self.supports.clone(),
            queries: vec![query(data, q)],
        }
    }
}
