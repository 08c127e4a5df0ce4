use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{sample_frames, Domain, DomainDataset};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Pre-sampled `K x D` clips of one domain. Target sets never hold labels.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    domain: Domain,
    clips: Vec<Tensor>,
    labels: Vec<Option<usize>>,
}

impl TrainingSet {
    pub fn source(ds: &DomainDataset, k: usize) -> Result<Self> {
        let clips = ds.records.iter().map(|r| sample_frames(r, k)).collect::<Result<Vec<_>>>()?;
        let labels = ds
            .records
            .iter()
            .map(|r| {
                r.label.map(Some).ok_or_else(|| Error::Record {
                    video_id: r.video_id.clone(),
                    detail: "source training video without label".into(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainingSet { domain: Domain::Source, clips, labels })
    }

    /// Labels are dropped here so the trainer cannot reach them.
    pub fn target(ds: &DomainDataset, k: usize) -> Result<Self> {
        let clips = ds.records.iter().map(|r| sample_frames(r, k)).collect::<Result<Vec<_>>>()?;
        let labels = vec![None; clips.len()];
        Ok(TrainingSet { domain: Domain::Target, clips, labels })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }
}

/// Source videos first, then target videos.
#[derive(Clone, Debug)]
pub struct MixedBatch<'a> {
    pub clips: Vec<&'a Tensor>,
    pub domains: Vec<Domain>,
    pub labels: Vec<Option<usize>>,
    /// Dataset positions of the source videos, in batch order.
    pub source_indices: Vec<usize>,
}

impl MixedBatch<'_> {
    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }
}

/// `round(source_batch * n_target / n_source)`, at least 1.
pub fn target_batch_size(source_batch: usize, n_source: usize, n_target: usize) -> usize {
    if n_source == 0 {
        return 1;
    }
    ((source_batch as f64 * n_target as f64 / n_source as f64).round() as usize).max(1)
}

/// Epoch-wise batch generator. Each epoch visits every source video once in
/// a fresh shuffle; target videos are drawn from an independent shuffled
/// stream that reshuffles whenever it runs out.
pub struct Batcher<'a> {
    source: &'a TrainingSet,
    target: Option<&'a TrainingSet>,
    source_batch: usize,
    target_batch: usize,
    source_rng: ChaCha8Rng,
    target_rng: ChaCha8Rng,
    target_order: Vec<usize>,
    target_pos: usize,
}

pub fn make_batches<'a>(
    source: &'a TrainingSet,
    target: Option<&'a TrainingSet>,
    source_batch: usize,
    seed: u64,
) -> Result<Batcher<'a>> {
    if source.is_empty() || source.domain() != Domain::Source {
        return Err(Error::invalid("batching needs a nonempty source training set"));
    }
    if let Some(t) = target {
        if t.is_empty() || t.domain() != Domain::Target {
            return Err(Error::invalid("target training set must be nonempty target data"));
        }
    }
    if source_batch == 0 {
        return Err(Error::Config("source batch size must be positive".into()));
    }
    let target_batch = target.map_or(0, |t| target_batch_size(source_batch, source.len(), t.len()));
    let mut target_rng = ChaCha8Rng::seed_from_u64(seed);
    target_rng.set_stream(1);
    Ok(Batcher {
        source,
        target,
        source_batch,
        target_batch,
        source_rng: ChaCha8Rng::seed_from_u64(seed),
        target_rng,
        target_order: Vec::new(),
        target_pos: 0,
    })
}

impl<'a> Batcher<'a> {
    pub fn target_batch(&self) -> usize {
        self.target_batch
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.source.len().div_ceil(self.source_batch)
    }

    fn next_target(&mut self) -> usize {
        let n = self.target.map_or(0, TrainingSet::len);
        if self.target_pos >= self.target_order.len() {
            self.target_order = (0..n).collect();
            self.target_order.shuffle(&mut self.target_rng);
            self.target_pos = 0;
        }
        self.target_pos += 1;
        self.target_order[self.target_pos - 1]
    }

    /// Batches of the next epoch.
    pub fn epoch(&mut self) -> Vec<MixedBatch<'a>> {
        let mut order: Vec<usize> = (0..self.source.len()).collect();
        order.shuffle(&mut self.source_rng);
        let mut out = Vec::with_capacity(self.batches_per_epoch());
        for chunk in order.chunks(self.source_batch) {
            let mut batch = MixedBatch {
                clips: Vec::new(),
                domains: Vec::new(),
                labels: Vec::new(),
                source_indices: chunk.to_vec(),
            };
            for &i in chunk {
                batch.clips.push(&self.source.clips[i]);
                batch.domains.push(Domain::Source);
                batch.labels.push(self.source.labels[i]);
            }
            if let Some(target) = self.target {
                for _ in 0..self.target_batch {
                    let j = self.next_target();
                    batch.clips.push(&target.clips[j]);
                    batch.domains.push(Domain::Target);
                    batch.labels.push(None);
                }
            }
            out.push(batch);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FrameFeatureRecord;

    fn dataset(n: usize, domain: Domain) -> DomainDataset {
        let records = (0..n)
            .map(|i| FrameFeatureRecord {
                video_id: format!("{domain:?}-{i}"),
                domain,
                label: Some(i % 2),
                frames: Tensor::filled(3, 2, i as f64),
            })
            .collect();
        DomainDataset::new(2, vec!["a".into(), "b".into()], records).unwrap()
    }

    #[test]
    fn target_batch_follows_dataset_ratio() {
        assert_eq!(target_batch_size(32, 100, 100), 32);
        assert_eq!(target_batch_size(128, 1438, 840), 75);
        assert_eq!(target_batch_size(32, 1000, 1), 1);
    }

    #[test]
    fn epoch_covers_every_source_video_once() {
        let s = TrainingSet::source(&dataset(23, Domain::Source), 2).unwrap();
        let t = TrainingSet::target(&dataset(11, Domain::Target), 2).unwrap();
        let mut b = make_batches(&s, Some(&t), 5, 3).unwrap();
        assert_eq!(b.target_batch(), 2);
        for _ in 0..3 {
            let batches = b.epoch();
            assert_eq!(batches.len(), 5);
            let mut seen: Vec<usize> = batches.iter().flat_map(|x| x.source_indices.clone()).collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..23).collect::<Vec<_>>());
            for batch in &batches {
                let n_src = batch.source_indices.len();
                assert!(batch.domains[..n_src].iter().all(|d| *d == Domain::Source));
                assert!(batch.domains[n_src..].iter().all(|d| *d == Domain::Target));
                assert!(batch.labels[..n_src].iter().all(Option::is_some));
                assert!(batch.labels[n_src..].iter().all(Option::is_none));
            }
        }
    }

    #[test]
    fn target_labels_are_withheld() {
        let t = TrainingSet::target(&dataset(4, Domain::Target), 2).unwrap();
        assert!(t.labels.iter().all(Option::is_none));
    }

    #[test]
    fn same_seed_same_batches() {
        let s = TrainingSet::source(&dataset(17, Domain::Source), 2).unwrap();
        let t = TrainingSet::target(&dataset(9, Domain::Target), 2).unwrap();
        let run = |seed| {
            let mut b = make_batches(&s, Some(&t), 4, seed).unwrap();
            (0..3)
                .flat_map(|_| b.epoch())
                .map(|x| x.clips.iter().map(|c| c.data()[0]).collect::<Vec<_>>())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }

    #[test]
    fn source_order_does_not_depend_on_target() {
        let s = TrainingSet::source(&dataset(17, Domain::Source), 2).unwrap();
        let t = TrainingSet::target(&dataset(9, Domain::Target), 2).unwrap();
        let mut with = make_batches(&s, Some(&t), 4, 1).unwrap();
        let mut without = make_batches(&s, None, 4, 1).unwrap();
        for _ in 0..2 {
            let a: Vec<_> = with.epoch().into_iter().map(|b| b.source_indices).collect();
            let b: Vec<_> = without.epoch().into_iter().map(|b| b.source_indices).collect();
            assert_eq!(a, b);
        }
    }
}
