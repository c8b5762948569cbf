#![allow(dead_code)]

use repquant::featureio::{FrameLabels, RepresentationSequence};
use repquant::numkernel::Rng;
use repquant::Matrix;

/// Frames drawn around a few fixed centers, in runs of 4..=12 frames per mode.
pub struct SyntheticCorpus {
    pub centers: Matrix<f64>,
    pub utterances: Vec<RepresentationSequence>,
    /// Ground-truth mode of every frame, per utterance.
    pub modes: Vec<Vec<u32>>,
}

impl SyntheticCorpus {
    pub fn generate(
        modes: usize,
        dim: usize,
        sigma: f64,
        utterances: usize,
        frames: usize,
        seed: u64,
    ) -> Self {
        let mut rng = Rng::new(seed);
        let centers = Matrix::from_vec(
            modes,
            dim,
            (0..modes * dim).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let mut seqs = Vec::with_capacity(utterances);
        let mut labels = Vec::with_capacity(utterances);
        for u in 0..utterances {
            let mut data = Vec::with_capacity(frames * dim);
            let mut lab = Vec::with_capacity(frames);
            while lab.len() < frames {
                let mode = rng.below(modes);
                let run = 4 + rng.below(9);
                for _ in 0..run.min(frames - lab.len()) {
                    lab.push(mode as u32);
                    for c in centers.row(mode) {
                        data.push((c + sigma * rng.normal()) as f32);
                    }
                }
            }
            seqs.push(
                RepresentationSequence::new(
                    format!("utt{u:04}"),
                    Matrix::from_vec(frames, dim, data).unwrap(),
                )
                .unwrap(),
            );
            labels.push(lab);
        }
        Self {
            centers,
            utterances: seqs,
            modes: labels,
        }
    }

    /// One utterance per segment, every frame of it drawn around a single
    /// uniformly chosen center.
    pub fn single_mode_segments(
        modes: usize,
        dim: usize,
        sigma: f64,
        segments: usize,
        frames: usize,
        seed: u64,
    ) -> Self {
        let mut rng = Rng::new(seed);
        let centers = Matrix::from_vec(
            modes,
            dim,
            (0..modes * dim).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let mut seqs = Vec::with_capacity(segments);
        let mut labels = Vec::with_capacity(segments);
        for u in 0..segments {
            let mode = rng.below(modes);
            let data = (0..frames)
                .flat_map(|_| centers.row(mode).to_vec())
                .map(|c| (c + sigma * rng.normal()) as f32)
                .collect();
            seqs.push(
                RepresentationSequence::new(
                    format!("seg{u:04}"),
                    Matrix::from_vec(frames, dim, data).unwrap(),
                )
                .unwrap(),
            );
            labels.push(vec![mode as u32; frames]);
        }
        Self {
            centers,
            utterances: seqs,
            modes: labels,
        }
    }

    pub fn mode_labels(&self, i: usize) -> FrameLabels {
        FrameLabels::new(self.modes[i].clone(), self.centers.rows() as u32).unwrap()
    }

    pub fn all_modes(&self) -> Vec<u32> {
        self.modes.concat()
    }
}
