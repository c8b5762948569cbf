mod common;

use std::fs;
use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use common::SyntheticCorpus;
use repquant::codec::{
    build_codec, decode, encode, forward_and_grads, ArchSpec, CodecParameters,
};
use repquant::featureio::{
    decode_feature_bytes, encode_feature_bytes, read_label_map, write_feature_file,
    write_label_file, write_manifest, FrameLabels, ManifestEntry, RepresentationSequence,
};
use repquant::metrics::{
    codebook_utilization, corpus_distortion, ngram_joint_counts, normalized_mutual_information,
    pnmi_n,
};
use repquant::numkernel::Rng;
use repquant::quantizer::{
    decode_token_bytes, encode_token_bytes, init_codebook_from_latents, kmeans_fit, quantize_rvq,
    quantize_vq, Assignment, Codebook, RvqStack, TokenSequence, DEFAULT_KMEANS_TOL,
};
use repquant::trainer::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, tokenize,
    tokenize_sequence, train, Trainer, TrainerState, TrainingConfig,
};
use repquant::{Error, Matrix};

fn verdict(id: u32, name: &str, pass: bool, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    let line = format!("acceptance {id} {name}: {status} ({detail})\n");
    std::io::stderr().write_all(line.as_bytes()).unwrap();
    assert!(pass, "acceptance criterion {id} ({name}) failed: {detail}");
}

fn random_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix<f64> {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
}

// ---------------------------------------------------------------- 1

struct Surrogate {
    x: Matrix<f64>,
    offset: Matrix<f64>,
    selected: Vec<Matrix<f64>>,
    lambda_r: f64,
    lambda_q: f64,
}

impl Surrogate {
    /// Total loss with assignments and quantized offsets held fixed.
    fn loss(&self, params: &CodecParameters<f64>) -> f64 {
        let z = encode(params, &self.x).unwrap();
        let mut q = z.clone();
        q.add_assign(&self.offset);
        let x_hat = decode(params, &q).unwrap();
        let (t, h) = self.x.shape();
        let l_r = x_hat.sub(&self.x).frobenius_sq() / (t * h) as f64;
        let mut residual = z;
        let mut l_q = 0.0;
        for e in &self.selected {
            l_q += residual.sub(e).frobenius_sq() / (t * h) as f64;
            residual = residual.sub(e);
        }
        self.lambda_r * l_r + self.lambda_q * l_q
    }
}

fn perturb(params: &mut CodecParameters<f64>, slot: usize, delta: f64) {
    let mut slot = slot;
    for layer in params.layers_mut() {
        let w = layer.weights.len();
        if slot < w {
            layer.weights[slot] += delta;
            return;
        }
        slot -= w;
        if slot < layer.bias.len() {
            layer.bias[slot] += delta;
            return;
        }
        slot -= layer.bias.len();
    }
    panic!("parameter slot out of range");
}

fn flat_grads(grads: &CodecParameters<f64>) -> Vec<f64> {
    grads
        .layers()
        .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
        .collect()
}

fn max_gradient_error(seed: u64) -> f64 {
    let arch = ArchSpec::regular(4, 3);
    let mut rng = Rng::new(seed);
    let params: CodecParameters<f64> = build_codec(arch, &mut rng).unwrap();
    let x = random_matrix(&mut rng, 8, 4);
    let z = encode(&params, &x).unwrap();
    let codebook = init_codebook_from_latents(&z, 3, 0.99, &mut rng).unwrap();
    let stack = RvqStack::new(vec![codebook]).unwrap();
    let (lambda_r, lambda_q) = (45.0, 1.0);
    let pass = forward_and_grads(&params, &stack, &x, lambda_r, lambda_q).unwrap();

    let surrogate = Surrogate {
        offset: pass.quantization.quantized_sum.sub(&pass.latents),
        selected: pass.quantization.layer_quantized.clone(),
        x,
        lambda_r,
        lambda_q,
    };
    let at_origin = surrogate.loss(&params);
    assert!((at_origin - pass.report.l_total).abs() <= 1e-12 * at_origin.abs().max(1.0));

    let analytic = flat_grads(&pass.grads);
    let mut worst = 0.0f64;
    let mut probe = params.clone();
    let mut at = |slot: usize, offset: f64| {
        perturb(&mut probe, slot, offset);
        let v = surrogate.loss(&probe);
        perturb(&mut probe, slot, -offset);
        v
    };
    // Large steps can straddle an ELU kink, small ones lose digits on tiny
    // gradients; a correct gradient agrees at one of the scales.
    for (slot, &a) in analytic.iter().enumerate() {
        let err = [1e-4, 1e-5, 1e-6]
            .into_iter()
            .map(|h| {
                let numeric = (8.0 * (at(slot, h) - at(slot, -h))
                    - (at(slot, 2.0 * h) - at(slot, -2.0 * h)))
                    / (12.0 * h);
                (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6)
            })
            .fold(f64::INFINITY, f64::min);
        worst = worst.max(err);
    }
    worst
}

#[test]
fn criterion_1_gradient_oracle() {
    let start = Instant::now();
    let worst = (0..20u64).map(max_gradient_error).fold(0.0f64, f64::max);
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        1,
        "gradient oracle",
        worst < 1e-4 && elapsed < 60.0,
        &format!("20 seeds, max relative error {worst:.3e}, {elapsed:.1}s"),
    );
}

// ---------------------------------------------------------------- 2, 3

const SIGMA: f64 = 0.05;

fn recovery_corpus() -> SyntheticCorpus {
    // 125 utterances x 1536 frames = 2000 segments of 96 frames.
    SyntheticCorpus::generate(8, 16, SIGMA, 125, 1536, 7)
}

struct Recovery {
    data: SyntheticCorpus,
    state: TrainerState,
}

/// The default-configuration run shared by the recovery and loss-trend checks.
fn recovery_run() -> &'static Recovery {
    static RUN: OnceLock<Recovery> = OnceLock::new();
    RUN.get_or_init(|| {
        let data = recovery_corpus();
        let cfg = TrainingConfig {
            clusters: 8,
            steps: 2000,
            seed: 1,
            ..TrainingConfig::default()
        };
        let mut trainer = Trainer::new(&data.utterances, cfg).unwrap();
        assert_eq!(trainer.segments().len(), 2000);
        let state = trainer.run().unwrap();
        Recovery { data, state }
    })
}

#[test]
fn criterion_2_clustering_recovery() {
    let Recovery { data, state } = recovery_run();
    let report = corpus_distortion(state, &data.utterances).unwrap();
    let tokens: Vec<u32> = data
        .utterances
        .iter()
        .flat_map(|u| tokenize_sequence(state, &u.frames).unwrap().layer(0).to_vec())
        .collect();
    let util = codebook_utilization(tokens.iter().copied(), 8).unwrap();
    let nmi = normalized_mutual_information(&tokens, &data.all_modes()).unwrap();
    let bound = 10.0 * SIGMA * SIGMA;
    verdict(
        2,
        "clustering recovery",
        report.l_r <= bound && util.fraction_used == 1.0 && nmi >= 0.99,
        &format!(
            "l_r {:.5} <= {bound:.4}, utilization {}, NMI {nmi:.4}",
            report.l_r, util.fraction_used
        ),
    );
}

#[test]
fn recovery_run_loss_trend() {
    let windows: Vec<f64> = recovery_run()
        .state
        .history
        .chunks(100)
        .map(|w| w.iter().map(|r| r.l_total).sum::<f64>() / w.len() as f64)
        .collect();
    println!("100-step mean l_total: {windows:.4?}");
    assert_eq!(windows.len(), 20);
    assert!(windows.windows(2).all(|p| p[1] <= p[0]));
}

#[test]
fn criterion_3_objective_parity() {
    let data = recovery_corpus();
    let cfg = TrainingConfig {
        clusters: 8,
        steps: 5000,
        seed: 1,
        ..TrainingConfig::vq_baseline()
    };
    let mut trainer = Trainer::new(&data.utterances, cfg).unwrap();
    let state = trainer.run().unwrap();
    assert!(state.codec.arch.is_encoderless());
    let vq = corpus_distortion(&state, &data.utterances).unwrap().l_q;

    let frames: Vec<&Matrix<f32>> = data.utterances.iter().map(|u| &u.frames).collect();
    let all = Matrix::vstack(&frames).unwrap();
    let km = kmeans_fit(&all, 8, 300, DEFAULT_KMEANS_TOL, &mut Rng::new(1))
        .unwrap()
        .distortion;
    let gap = (vq - km).abs() / km;
    verdict(
        3,
        "objective parity",
        gap <= 0.05,
        &format!("EMA-VQ {vq:.6}, k-means {km:.6}, relative gap {:.3}%", 100.0 * gap),
    );
}

// ---------------------------------------------------------------- 4

fn zero_augmented_codebook(data: &Matrix<f32>, k: usize, seed: u64) -> Codebook<f32> {
    let fit = kmeans_fit(data, k - 1, 100, DEFAULT_KMEANS_TOL, &mut Rng::new(seed)).unwrap();
    let zero = Matrix::zeros(1, data.cols());
    Codebook::from_entries(Matrix::vstack(&[&fit.centers, &zero]).unwrap(), 0.99).unwrap()
}

#[test]
fn criterion_4_residual_vq() {
    let data = SyntheticCorpus::generate(8, 16, 0.3, 20, 200, 4);
    let frames: Vec<&Matrix<f32>> = data.utterances.iter().map(|u| &u.frames).collect();
    let z = Matrix::vstack(&frames).unwrap();

    let k = 8;
    let mut layers = Vec::new();
    let mut residual = z.clone();
    for i in 0..4 {
        let cb = zero_augmented_codebook(&residual, k, 10 + i);
        let q = cb.quantize(&residual).unwrap();
        residual = residual.sub(&q.quantized);
        layers.push(cb);
    }

    let mut energies = Vec::new();
    for m in [1usize, 2, 4] {
        let stack = RvqStack::new(layers[..m].to_vec()).unwrap();
        let out = quantize_rvq(&stack, &z).unwrap();
        energies.push(z.sub(&out.quantized_sum).frobenius_sq().sqrt());
    }
    let monotone = energies.windows(2).all(|p| p[1] <= p[0]);

    let single = quantize_rvq(&RvqStack::new(vec![layers[0].clone()]).unwrap(), &z).unwrap();
    let plain = quantize_vq(&layers[0], &z).unwrap();
    let same_tokens = single.tokens.layer(0) == plain.assignment.indices.as_slice();
    let same_output = single.quantized_sum == plain.quantized;

    verdict(
        4,
        "residual VQ",
        monotone && same_tokens && same_output,
        &format!(
            "residual energy M=1,2,4: {:.4} {:.4} {:.4}; M=1 tokens identical to VQ: {}",
            energies[0],
            energies[1],
            energies[2],
            same_tokens && same_output
        ),
    );
}

// ---------------------------------------------------------------- 5

/// Windowed PNMI by explicit enumeration, with linear scans for every count.
fn brute_force_pnmi(corpus: &[(Vec<u32>, Vec<u32>)], n: usize) -> Option<f64> {
    let mut windows: Vec<(Vec<u32>, Vec<u32>)> = Vec::new();
    for (tokens, phones) in corpus {
        if tokens.len() < n {
            continue;
        }
        for j in 0..=tokens.len() - n {
            windows.push((phones[j..j + n].to_vec(), tokens[j..j + n].to_vec()));
        }
    }
    let total = windows.len() as f64;
    let count = |pred: &dyn Fn(&(Vec<u32>, Vec<u32>)) -> bool| {
        windows.iter().filter(|w| pred(w)).count() as f64
    };
    let mut seen_pairs: Vec<&(Vec<u32>, Vec<u32>)> = Vec::new();
    let mut seen_phones: Vec<&Vec<u32>> = Vec::new();
    let mut mi = 0.0;
    let mut h = 0.0;
    for w in &windows {
        if !seen_pairs.contains(&w) {
            seen_pairs.push(w);
            let p = count(&|v| v == w) / total;
            let ps = count(&|v| v.0 == w.0) / total;
            let pz = count(&|v| v.1 == w.1) / total;
            mi += p * (p / (ps * pz)).ln();
        }
        if !seen_phones.contains(&&w.0) {
            seen_phones.push(&w.0);
            let ps = count(&|v| v.0 == w.0) / total;
            h -= ps * ps.ln();
        }
    }
    if h <= 0.0 {
        None
    } else {
        Some(mi / h)
    }
}

fn corpus_pnmi(corpus: &[(Vec<u32>, Vec<u32>)], alphabet: u32, n: usize) -> Result<f64, Error> {
    let labels: Vec<FrameLabels> = corpus
        .iter()
        .map(|(_, p)| FrameLabels::new(p.clone(), alphabet).unwrap())
        .collect();
    let counts = ngram_joint_counts(
        corpus.iter().zip(&labels).map(|((t, _), l)| (t.as_slice(), l)),
        n,
    )?;
    pnmi_n(&counts)
}

fn relabel(seq: &[u32], perm: &[u32]) -> Vec<u32> {
    seq.iter().map(|&v| perm[v as usize]).collect()
}

fn permutation(rng: &mut Rng, size: u32) -> Vec<u32> {
    let mut p: Vec<u32> = (0..size).collect();
    rng.shuffle(&mut p);
    p
}

#[test]
fn criterion_5_pnmi_oracle() {
    let mut rng = Rng::new(5);
    let mut worst = 0.0f64;
    let mut checks = 0;
    let mut invariant = true;
    for _ in 0..100 {
        let alphabet = 1 + rng.below(6) as u32;
        let k = 1 + rng.below(6) as u32;
        let utterances = 1 + rng.below(3);
        let corpus: Vec<(Vec<u32>, Vec<u32>)> = (0..utterances)
            .map(|_| {
                let t = 3 + rng.below(48);
                let tokens = (0..t).map(|_| rng.below(k as usize) as u32).collect();
                let phones = (0..t).map(|_| rng.below(alphabet as usize) as u32).collect();
                (tokens, phones)
            })
            .collect();
        let token_perm = permutation(&mut rng, k);
        let phone_perm = permutation(&mut rng, alphabet);
        for n in 1..=3 {
            let got = corpus_pnmi(&corpus, alphabet, n);
            match (brute_force_pnmi(&corpus, n), &got) {
                (Some(want), Ok(v)) => {
                    worst = worst.max((want - v).abs());
                    checks += 1;
                }
                (None, Err(Error::UndefinedMetric(_))) => continue,
                other => panic!("oracle and implementation disagree: {other:?}"),
            }
            let got = got.unwrap();
            let by_tokens: Vec<_> = corpus
                .iter()
                .map(|(t, p)| (relabel(t, &token_perm), p.clone()))
                .collect();
            let by_phones: Vec<_> = corpus
                .iter()
                .map(|(t, p)| (t.clone(), relabel(p, &phone_perm)))
                .collect();
            invariant &= corpus_pnmi(&by_tokens, alphabet, n).unwrap() == got;
            invariant &= corpus_pnmi(&by_phones, alphabet, n).unwrap() == got;
        }
    }
    verdict(
        5,
        "PNMI oracle",
        worst <= 1e-9 && invariant && checks > 200,
        &format!("{checks} comparisons, max abs error {worst:.2e}, relabeling invariant: {invariant}"),
    );
}

// ---------------------------------------------------------------- 6

#[test]
fn criterion_6_ema_update() {
    let entries = Matrix::from_rows(&[[0.0f64, 0.0], [10.0, 10.0]]).unwrap();
    let counts = vec![2.0, 4.0];
    let sums = Matrix::from_rows(&[[2.0f64, -2.0], [40.0, 44.0]]).unwrap();
    let batch = Matrix::from_rows(&[[1.0f64, 2.0], [3.0, 4.0], [9.0, 9.5]]).unwrap();
    let assignment = Assignment {
        indices: vec![0, 0, 1],
    };
    let batch_counts = [2.0, 1.0];
    let batch_sums = [[4.0, 6.0], [9.0, 9.5]];

    let mut worst = 0.0f64;
    for gamma in [0.0, 0.5, 1.0] {
        let mut cb =
            Codebook::from_parts(entries.clone(), counts.clone(), sums.clone(), gamma, 1e-9)
                .unwrap();
        cb.ema_update(&batch, &assignment).unwrap();
        for k in 0..2 {
            let n = gamma * counts[k] + (1.0 - gamma) * batch_counts[k];
            worst = worst.max((cb.ema_counts()[k] - n).abs());
            for c in 0..2 {
                let m = gamma * sums.get(k, c) + (1.0 - gamma) * batch_sums[k][c];
                worst = worst.max((cb.ema_sums().get(k, c) - m).abs());
                worst = worst.max((cb.entries().get(k, c) - m / n).abs());
            }
        }
    }
    let hand_ok = worst <= 1e-12;

    let mut rng = Rng::new(6);
    let static_batch = random_matrix(&mut rng, 40, 3);
    let init = random_matrix(&mut rng, 4, 3);
    let mut cb = Codebook::from_entries(init, 0.9).unwrap();
    let fixed = cb.quantize(&static_batch).unwrap().assignment;
    for _ in 0..200 {
        cb.ema_update(&static_batch, &fixed).unwrap();
    }
    let mut drift = 0.0f64;
    for k in 0..4 {
        let members: Vec<&[f64]> = static_batch
            .iter_rows()
            .zip(&fixed.indices)
            .filter(|(_, &a)| a as usize == k)
            .map(|(r, _)| r)
            .collect();
        if members.is_empty() {
            continue;
        }
        for c in 0..3 {
            let mean = members.iter().map(|r| r[c]).sum::<f64>() / members.len() as f64;
            drift = drift.max((cb.entries().get(k, c) - mean).abs());
        }
    }
    verdict(
        6,
        "EMA update",
        hand_ok && drift <= 1e-6,
        &format!("hand cases max error {worst:.2e}, distance to assigned means after 200 steps {drift:.2e}"),
    );
}

// ---------------------------------------------------------------- 7

fn small_config() -> TrainingConfig {
    TrainingConfig {
        clusters: 4,
        batch_size: 4,
        segment_len: 16,
        steps: 30,
        lr: 1e-3,
        seed: 7,
        ..TrainingConfig::default()
    }
}

fn small_corpus() -> SyntheticCorpus {
    SyntheticCorpus::generate(4, 4, 0.1, 6, 64, 7)
}

fn file_format_roundtrips() -> bool {
    let mut ok = true;
    let mut rng = Rng::new(70);

    let mut values: Vec<f32> = (0..60).map(|_| rng.normal() as f32).collect();
    values[..6].copy_from_slice(&[0.0, -0.0, f32::MIN_POSITIVE / 8.0, f32::MAX, f32::MIN, 1e-38]);
    let seq = RepresentationSequence::new("x", Matrix::from_vec(12, 5, values).unwrap()).unwrap();
    let bytes = encode_feature_bytes(&seq).unwrap();
    let back = decode_feature_bytes(&bytes, "x").unwrap();
    ok &= encode_feature_bytes(&back).unwrap() == bytes
        && back
            .frames
            .as_slice()
            .iter()
            .zip(seq.frames.as_slice())
            .all(|(a, b)| a.to_bits() == b.to_bits());
    ok &= (0..bytes.len()).all(|cut| decode_feature_bytes(&bytes[..cut], "x").is_err());
    let mut longer = bytes.clone();
    longer.push(0);
    ok &= decode_feature_bytes(&longer, "x").is_err();

    let tokens = TokenSequence::new(9, 2, 7, (0..14).map(|_| rng.below(9) as u32).collect())
        .unwrap();
    let bytes = encode_token_bytes(&tokens).unwrap();
    ok &= decode_token_bytes(&bytes).unwrap() == tokens;
    ok &= (0..bytes.len()).all(|cut| decode_token_bytes(&bytes[..cut]).is_err());
    let mut longer = bytes.clone();
    longer.push(0);
    ok &= decode_token_bytes(&longer).is_err();

    let data = small_corpus();
    let mut trainer = Trainer::new(&data.utterances, small_config()).unwrap();
    let state = trainer.run().unwrap();
    let bytes = encode_checkpoint(&state).unwrap();
    let back = decode_checkpoint(&bytes).unwrap();
    ok &= encode_checkpoint(&back).unwrap() == bytes;
    ok &= back.codec == state.codec && back.step == state.step && back.seed == state.seed;
    ok &= (0..bytes.len()).all(|cut| decode_checkpoint(&bytes[..cut]).is_err());
    let mut longer = bytes.clone();
    longer.push(0);
    ok &= decode_checkpoint(&longer).is_err();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("labels.txt");
    let a = FrameLabels::new(vec![0, 3, 3, 1], 4).unwrap();
    let b = FrameLabels::new(vec![2], 4).unwrap();
    write_label_file(&path, [("a", &a), ("b", &b)]).unwrap();
    let map = read_label_map(&path, 4).unwrap();
    ok &= map.len() == 2 && map["a"] == a && map["b"] == b;
    let text = fs::read(&path).unwrap();
    write_label_file(&path, map.iter().map(|(k, v)| (k.as_str(), v))).unwrap();
    ok &= fs::read(&path).unwrap() == text;
    ok
}

fn end_to_end_reproducible() -> bool {
    let data = small_corpus();
    let dir = tempfile::tempdir().unwrap();
    let mut entries = Vec::new();
    for u in &data.utterances {
        let path = dir.path().join(format!("{}.rpcf", u.utterance_id));
        write_feature_file(&path, u).unwrap();
        entries.push(ManifestEntry {
            features: path,
            labels: None,
        });
    }
    let manifest = dir.path().join("train.manifest");
    write_manifest(&manifest, &entries).unwrap();

    let run = |tag: &str| {
        let out = dir.path().join(tag);
        let ckpt = train(&manifest, &small_config(), &out).unwrap();
        let model = load_checkpoint(&ckpt).unwrap();
        save_checkpoint(&model, out.join("resaved.rpcc")).unwrap();
        let mut blobs = vec![
            fs::read(&ckpt).unwrap(),
            fs::read(out.join("resaved.rpcc")).unwrap(),
            fs::read(out.join("loss.tsv")).unwrap(),
        ];
        for e in &entries {
            let tok = out.join(format!(
                "{}.rpct",
                e.features.file_stem().unwrap().to_str().unwrap()
            ));
            tokenize(&ckpt, &e.features, &tok).unwrap();
            blobs.push(fs::read(&tok).unwrap());
        }
        blobs
    };
    let first = run("a");
    let second = run("b");
    first[0] == first[1] && first == second
}

fn resume_matches(j: u64, n: u64) -> bool {
    let data = small_corpus();
    let cfg = TrainingConfig {
        steps: n,
        ..small_config()
    };
    let mut trainer = Trainer::new(&data.utterances, cfg.clone()).unwrap();
    let whole = trainer.run().unwrap();

    let mut trainer = Trainer::new(&data.utterances, cfg.clone()).unwrap();
    let mut part = trainer.initialize().unwrap();
    trainer.run_until(&mut part, j, |_| Ok(())).unwrap();
    let saved = encode_checkpoint(&part).unwrap();

    let mut resumed = decode_checkpoint(&saved).unwrap();
    let mut trainer = Trainer::new(&data.utterances, cfg).unwrap();
    trainer.run_until(&mut resumed, n, |_| Ok(())).unwrap();
    encode_checkpoint(&resumed).unwrap() == encode_checkpoint(&whole).unwrap()
}

#[test]
fn criterion_7_determinism_and_formats() {
    let reproducible = end_to_end_reproducible();
    let resume: Vec<(u64, bool)> = [1, 10, 100].iter().map(|&j| (j, resume_matches(j, 110))).collect();
    let formats = file_format_roundtrips();
    verdict(
        7,
        "determinism and formats",
        reproducible && formats && resume.iter().all(|r| r.1),
        &format!(
            "two-run byte identity: {reproducible}, resume at J (of 110): {resume:?}, format round-trips with truncation rejection: {formats}"
        ),
    );
}

// ---------------------------------------------------------------- 8

#[test]
fn criterion_8_architecture() {
    let mut ok = true;
    let regular = ArchSpec::regular(16, 8);
    let large = ArchSpec::large(16, 8);
    ok &= (regular.encoder_convs(), regular.decoder_convs()) == (12, 12);
    ok &= (large.encoder_convs(), large.decoder_convs()) == (42, 12);

    for h in [1usize, 4, 16, 33] {
        for arch in [ArchSpec::regular(h, 8), ArchSpec::large(h, 8)] {
            let params: CodecParameters<f32> = build_codec(arch, &mut Rng::new(h as u64)).unwrap();
            let per_conv = 3 * h * h + h;
            ok &= params.encoder.len() == arch.encoder_convs();
            ok &= params.decoder.len() == arch.decoder_convs();
            ok &= params
                .layers()
                .all(|l| l.weights.len() == 3 * h * h && l.bias.len() == h);
            ok &= params.param_count() == arch.conv_count() * per_conv;
            ok &= arch.param_count() == params.param_count();
        }
    }
    for h in [768usize, 1024] {
        ok &= ArchSpec::regular(h, 1024).param_count() == 24 * (3 * h * h + h);
        ok &= ArchSpec::large(h, 1024).param_count() == 54 * (3 * h * h + h);
    }
    verdict(
        8,
        "architecture fidelity",
        ok,
        &format!(
            "regular {}+{} convs, large {}+{} convs, {} parameters per conv at H=768",
            regular.encoder_convs(),
            regular.decoder_convs(),
            large.encoder_convs(),
            large.decoder_convs(),
            3 * 768 * 768 + 768
        ),
    );
}
