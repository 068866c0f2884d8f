mod common;

use common::rng;
use lxtts::metrics::QualityMetrics;
use lxtts::model::{Checkpoint, Model, ModelConfig, SamplerConfig, Segment, TokenSeq};
use lxtts::optim::OptimConfig;
use lxtts::train::{
    build_sft_triplets, dpo_loss, dpo_loss_from_margin, dpo_train, eval_nll, pretrain, sft, sft_examples, DpoConfig,
    DpoPair, TrainExample,
};
use lxtts::world::{build_corpus, speaker_split, CorpusConfig, Lang, Utterance, World, WorldConfig};
use lxtts::{Error, Graph};
use rand::Rng;

const LN2: f64 = std::f64::consts::LN_2;

fn small_model(seed: u64) -> Model<f64> {
    Model::init(ModelConfig::default(), seed).unwrap()
}

fn utt(id: u64, speaker_id: usize, audio: Vec<u32>) -> Utterance {
    Utterance {
        id,
        lang: Lang(0),
        speaker_id,
        phonemes: vec![1, 2, 3],
        duration_s: audio.len() as f64 / 630.0,
        audio_tokens: audio,
        f0_hz: 120.0,
        quality: QualityMetrics { si_sdr_db: 20.0, pesq: 3.0, stoi: 0.9 },
    }
}

fn random_pair(cfg: &ModelConfig, r: &mut impl Rng) -> DpoPair {
    let v = cfg.vocab();
    let mut audio = |n: usize| -> Vec<u32> { (0..n).map(|_| v.audio_id(r.random_range(0..cfg.vocab_audio))).collect() };
    let phon: Vec<u32> = vec![3, 1, 4, 1, 5];
    let prompt = audio(4);
    let mut winner = audio(3);
    winner.push(v.eos());
    let mut loser = audio(5);
    loser.push(v.eos());
    DpoPair {
        context: TokenSeq::context(&v, &phon, &prompt),
        winner: TokenSeq::tagged(&winner, Segment::Gen),
        loser: TokenSeq::tagged(&loser, Segment::Gen),
    }
}

fn quick_optim(steps: usize, lr: f64) -> OptimConfig {
    OptimConfig::default().for_stage(steps, lr)
}

fn bytes(model: &Model<f64>) -> Vec<u8> {
    let mut out = Vec::new();
    Checkpoint::from_model(model).write_to(&mut out).unwrap();
    out
}

#[test]
fn zero_steps_leave_the_model_untouched() {
    let world = World::new(WorldConfig::default()).unwrap();
    let corpus = build_corpus(&world, &CorpusConfig { utterances_per_speaker: 2, ..Default::default() }).unwrap();
    let mut m = small_model(1);
    let before = bytes(&m);
    let log = pretrain(&mut m, &corpus, &quick_optim(10, 1e-3), 0, 4, 0).unwrap();
    assert!(log.is_empty());
    assert_eq!(bytes(&m), before);

    let triplets = build_sft_triplets(&corpus, |u| world.speaker_embed(&u.audio_tokens), 0.6).unwrap();
    assert!(!triplets.is_empty());
    sft(&mut m, &triplets, &quick_optim(10, 1e-3), 0, 4, 0).unwrap();
    assert_eq!(bytes(&m), before);
}

#[test]
fn loss_curve_has_one_row_per_step() {
    let world = World::new(WorldConfig::default()).unwrap();
    let corpus = build_corpus(&world, &CorpusConfig { utterances_per_speaker: 2, ..Default::default() }).unwrap();
    let mut m = small_model(2);
    let log = pretrain(&mut m, &corpus, &quick_optim(7, 1e-3), 7, 2, 5).unwrap();
    assert_eq!(log.len(), 7);
    assert!(log.iter().enumerate().all(|(i, r)| r.step == i && r.loss.is_finite() && r.margin.is_none()));
}

#[test]
fn empty_inputs_are_data_errors() {
    let mut m = small_model(3);
    let optim = quick_optim(5, 1e-3);
    assert!(matches!(pretrain(&mut m, &[], &optim, 5, 2, 0), Err(Error::Data(_))));
    assert!(matches!(sft(&mut m, &[], &optim, 5, 2, 0), Err(Error::Data(_))));
    let reference = m.clone();
    assert!(matches!(dpo_train(&mut m, &reference, &[], &DpoConfig::default(), &optim, 0), Err(Error::Data(_))));
}

fn unit(angle_cos: f64) -> Vec<f64> {
    vec![angle_cos, (1.0 - angle_cos * angle_cos).sqrt()]
}

#[test]
fn triplet_gates() {
    let a = utt(0, 7, vec![40, 41, 1]);
    let b = utt(1, 7, vec![42, 43, 1]);
    let embed_with = |c: f64| move |u: &Utterance| Ok(if u.id == 0 { vec![1.0, 0.0] } else { unit(c) });

    let both = build_sft_triplets(&[a.clone(), b.clone()], embed_with(0.7), 0.6).unwrap();
    assert_eq!(both.len(), 2);
    assert_eq!(both[0].context_audio.ids, vec![40, 41]);
    assert_eq!(both[0].target_audio.ids, b.audio_tokens);
    assert_eq!(both[1].context_audio.ids, vec![42, 43]);
    assert!(both.iter().all(|t| t.speaker_id == 7 && (t.similarity - 0.7).abs() < 1e-12));

    assert!(build_sft_triplets(&[a.clone(), b.clone()], embed_with(0.59), 0.6).unwrap().is_empty());

    let other = utt(1, 8, vec![42, 43, 1]);
    assert!(build_sft_triplets(&[a, other], embed_with(0.99), 0.6).unwrap().is_empty());
}

#[test]
fn oversized_triplet_is_a_capacity_error() {
    let cfg = ModelConfig { part_prompt: 3, ..ModelConfig::default() };
    let m = Model::<f64>::init(cfg, 0).unwrap();
    let a = utt(0, 1, vec![40, 41, 42, 43, 44, 1]);
    let b = utt(1, 1, vec![45, 1]);
    let t = build_sft_triplets(&[a, b], |_| Ok(vec![1.0]), 0.6).unwrap();
    assert!(matches!(sft_examples(&m, &t), Err(Error::Capacity(_))));
}

#[test]
fn sft_loss_reads_the_context_but_ignores_padding() {
    let m = small_model(4);
    let cfg = m.config().clone();
    let v = cfg.vocab();
    let target = vec![v.audio_id(5), v.audio_id(9), v.eos()];
    let ex = TrainExample::new(&cfg, &[1, 2], &[v.audio_id(1), v.audio_id(2)], &target);
    let other_context = TrainExample::new(&cfg, &[1, 2], &[v.audio_id(30), v.audio_id(31)], &target);
    let base = eval_nll(&m, &[&ex]).unwrap();
    assert_ne!(base, eval_nll(&m, &[&other_context]).unwrap());
    assert_eq!(base, eval_nll(&m, &[&ex.clone().with_padding(5)]).unwrap());
}

#[test]
fn sft_gradients_are_masked_to_target_positions() {
    let m = small_model(5);
    let cfg = m.config().clone();
    let v = cfg.vocab();
    let prompt_only = v.audio_id(60);
    let phon = [4u32, 5];
    let target = [v.audio_id(5), v.audio_id(9), v.eos()];
    let context = TokenSeq::context(&v, &phon, &[prompt_only]);
    let mut full = context.concat(&TokenSeq::tagged(&target, Segment::Gen)).unwrap();
    full.push(v.special_id(lxtts::model::Special::Pad), Segment::Pad);

    let mut g = Graph::new();
    let vars = m.bind(&mut g, true);
    let logits = m.forward_graph(&mut g, &vars, &full).unwrap();
    let start = context.len() - 1;
    let picks: Vec<(usize, usize)> = target.iter().enumerate().map(|(i, &t)| (start + i, t as usize)).collect();
    let lp = g.log_prob_sum(logits, &picks).unwrap();
    let loss = g.neg(lp).unwrap();
    g.backward(loss).unwrap();

    // Only leaves keep gradients, so replay the loss on a leaf copy of the logits.
    let mut h = Graph::new();
    let leaf = h.param(g.value(logits).clone());
    let lp = h.log_prob_sum(leaf, &picks).unwrap();
    let loss = h.neg(lp).unwrap();
    h.backward(loss).unwrap();
    let dlogits = h.grad(leaf).unwrap();
    let scored: Vec<usize> = picks.iter().map(|p| p.0).collect();
    for row in 0..full.len() {
        let norm: f64 = dlogits.row(row).iter().map(|x| x * x).sum();
        if scored.contains(&row) {
            assert!(norm > 0.0, "scored row {row} has no gradient");
        } else {
            assert_eq!(norm, 0.0, "row {row} outside the target carries gradient");
        }
    }

    let emb_idx = m.names().iter().position(|n| n == "tok_emb").expect("embedding table");
    let demb = g.grad(vars[emb_idx]).unwrap();
    assert!(demb.row(prompt_only as usize).iter().any(|&x| x != 0.0), "prompt embedding row receives no gradient");
}

#[test]
fn dpo_scalar_examples() {
    assert!((dpo_loss_from_margin(0.0, 0.3) - LN2).abs() < 1e-15);
    assert!((dpo_loss_from_margin(10.0, 0.3) - 0.048587).abs() < 5e-7);
    assert!((dpo_loss_from_margin(-10.0, 0.3) - 3.048587).abs() < 5e-7);
    // Oracle: the textbook form, fine at these magnitudes.
    for m in [-20.0, -3.0, -0.1, 0.5, 7.0, 40.0] {
        let oracle = -(1.0 / (1.0 + (-0.3f64 * m).exp())).ln();
        assert!((dpo_loss_from_margin(m, 0.3) - oracle).abs() < 1e-12);
    }
    assert!(dpo_loss_from_margin(-1e4, 0.3).is_finite());
}

#[test]
fn dpo_loss_decreases_in_the_margin() {
    let h = 1e-6;
    for m in [-50.0, -5.0, -0.2, 0.0, 0.3, 4.0, 25.0] {
        let slope = (dpo_loss_from_margin(m + h, 0.3) - dpo_loss_from_margin(m - h, 0.3)) / (2.0 * h);
        assert!(slope < 0.0, "slope {slope} at margin {m}");
        assert!(dpo_loss_from_margin(m, 0.3) >= 0.0);
    }
}

#[test]
fn policy_equal_to_reference_gives_ln2() {
    let m = small_model(6);
    let mut r = rng(6);
    for _ in 0..5 {
        let batch: Vec<DpoPair> = (0..3).map(|_| random_pair(m.config(), &mut r)).collect();
        let (loss, stats) = dpo_loss(&m, &m, &batch, 0.3).unwrap();
        assert!((loss.item().unwrap() - LN2).abs() < 1e-9);
        assert_eq!(stats.margin, 0.0);
        assert_eq!(stats.win_rate, 0.0);
    }
}

#[test]
fn swapping_winner_and_loser_complements_the_probability() {
    let policy = small_model(7);
    let reference = small_model(8);
    let mut r = rng(7);
    for _ in 0..5 {
        let pair = random_pair(policy.config(), &mut r);
        let swapped = DpoPair { winner: pair.loser.clone(), loser: pair.winner.clone(), ..pair.clone() };
        let (l, s) = dpo_loss(&policy, &reference, std::slice::from_ref(&pair), 0.3).unwrap();
        let (ls, ss) = dpo_loss(&policy, &reference, &[swapped], 0.3).unwrap();
        let total = (-l.item().unwrap()).exp() + (-ls.item().unwrap()).exp();
        assert!((total - 1.0).abs() < 1e-9, "σ(z) + σ(−z) = {total}");
        assert!((s.margin + ss.margin).abs() < 1e-9);
    }
}

#[test]
fn degenerate_pair_is_rejected() {
    let m = small_model(9);
    let mut pair = random_pair(m.config(), &mut rng(9));
    pair.loser = pair.winner.clone();
    assert!(matches!(dpo_loss(&m, &m, std::slice::from_ref(&pair), 0.3), Err(Error::DegeneratePair)));
    let mut policy = m.clone();
    let optim = quick_optim(1, 1e-3);
    assert!(matches!(
        dpo_train(&mut policy, &m, &[pair], &DpoConfig::default(), &optim, 0),
        Err(Error::DegeneratePair)
    ));
}

#[test]
fn one_step_raises_the_margin_and_leaves_the_reference_alone() {
    let reference = small_model(10);
    let mut policy = reference.clone();
    let pair = random_pair(reference.config(), &mut rng(10));
    let frozen = bytes(&reference);
    let cfg = DpoConfig { steps: 1, batch_size: 1, grad_accum: 1, ..DpoConfig::default() };
    let optim = OptimConfig { warmup_steps: 0, weight_decay: 0.0, ..quick_optim(1, 1e-4) };
    dpo_train(&mut policy, &reference, std::slice::from_ref(&pair), &cfg, &optim, 0).unwrap();
    let (_, after) = dpo_loss(&policy, &reference, &[pair], 0.3).unwrap();
    assert!(after.margin > 0.0, "margin {}", after.margin);
    assert_eq!(bytes(&reference), frozen);
}

fn copy_world() -> (World, Vec<Utterance>) {
    let world = World::new(WorldConfig { clusters: 1, n_speakers: 4, seed: 11, ..WorldConfig::default() }).unwrap();
    let corpus = build_corpus(&world, &CorpusConfig { utterances_per_speaker: 60, token_noise: 0.0, ..Default::default() })
        .unwrap();
    (world, corpus)
}

#[test]
fn copy_world_is_learned() {
    let (world, corpus) = copy_world();
    let cfg = ModelConfig { vocab_audio: world.config().vocab_audio, ..ModelConfig::default() };
    let mut m = Model::<f32>::init(cfg, 11).unwrap();
    let log = pretrain(&mut m, &corpus, &quick_optim(2000, 3e-3), 2000, 8, 11).unwrap();
    let examples = lxtts::train::pretrain_examples(&m, &corpus);
    let all: Vec<&TrainExample> = examples.iter().collect();
    let ce = eval_nll(&m, &all).unwrap();
    println!("copy world: last batch loss {:.4}, corpus CE {ce:.4}", log.last().unwrap().loss);
    assert!(ce < 0.1, "corpus CE {ce}");
}

/// Share of generated audio tokens carrying the prompt speaker's cluster.
fn cluster_purity(model: &Model<f32>, world: &World, prompts: &[(Vec<u32>, Vec<u32>, usize)]) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    let s = world.config().clusters;
    let vocab = world.vocab();
    for (i, (phon, prompt, spk)) in prompts.iter().enumerate() {
        let sampler = SamplerConfig { seed: i as u64, ..SamplerConfig::default() };
        let (out, _) = lxtts::model::generate(model, phon, prompt, &sampler).unwrap();
        for a in out.ids.iter().filter_map(|&t| vocab.audio_index(t)) {
            total += 1;
            hit += usize::from(a % s == world.cluster_of(*spk));
        }
    }
    hit as f64 / total.max(1) as f64
}

#[test]
fn sft_raises_speaker_cluster_purity() {
    let world = World::new(WorldConfig { seed: 12, ..WorldConfig::default() }).unwrap();
    let corpus =
        build_corpus(&world, &CorpusConfig { utterances_per_speaker: 30, token_noise: 0.0, ..Default::default() })
            .unwrap();
    let (train_spk, test_spk) = speaker_split(12, world.config().n_speakers, 0.2);
    let train: Vec<Utterance> = corpus.iter().filter(|u| train_spk.contains(&u.speaker_id)).cloned().collect();
    let held_out: Vec<(Vec<u32>, Vec<u32>, usize)> = test_spk
        .iter()
        .flat_map(|&s| {
            let rows: Vec<&Utterance> = corpus.iter().filter(|u| u.speaker_id == s).take(6).collect();
            rows.windows(2)
                .map(|w| (w[1].phonemes.clone(), w[0].audio_tokens[..w[0].audio_tokens.len() - 1].to_vec(), s))
                .collect::<Vec<_>>()
        })
        .collect();

    let mut m = Model::<f32>::init(ModelConfig::default(), 12).unwrap();
    pretrain(&mut m, &train, &quick_optim(400, 3e-3), 400, 8, 1).unwrap();
    let before = cluster_purity(&m, &world, &held_out);
    let triplets = build_sft_triplets(&train, |u| world.speaker_embed(&u.audio_tokens), 0.6).unwrap();
    sft(&mut m, &triplets, &quick_optim(300, 1e-3), 300, 8, 2).unwrap();
    let after = cluster_purity(&m, &world, &held_out);
    println!("cluster purity: before SFT {before:.3}, after {after:.3}");
    assert!(after > before, "purity {before} -> {after}");
}
