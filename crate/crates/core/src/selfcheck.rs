//! Built-in verification suites. Each suite stresses one pillar of the
//! toolkit against an independent reference (brute-force enumeration,
//! numeric differentiation, or byte-level round trips) on seeded random
//! cases. The fault-injection option exists to prove the suites can fail:
//! flipping it must break the alignment-loss suites.

use std::fs;
use std::path::PathBuf;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ctc::{ctc_loss, ctc_loss_impl, ctc_loss_oracle, LabelSeq};
use crate::error::{Error, Result};
use crate::files;
use crate::filter::{filter_list, soc, soc_oracle, FilterConfig};
use crate::model::{forward, AudioEmbeddingSeq, BiasModelWeights, ModelConfig};
use crate::nn::Matrix;
use crate::posterior::PosteriorMatrix;
use crate::synth;
use crate::vocab::{BiasingList, ContextPhrase, Provenance, Vocab};

/// Outcome of one suite.
#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    /// First failure, for diagnostics.
    pub detail: Option<String>,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

pub fn all_passed(results: &[SuiteResult]) -> bool {
    results.iter().all(SuiteResult::passed)
}

/// Knobs for [`run`].
#[derive(Debug, Clone, Copy)]
pub struct SelfCheckOptions {
    pub seed: u64,
    /// Fault injection: offsets the loss recursion by this much per frame.
    /// Any non-zero value must make the loss suites report failures.
    pub perturb_ctc: Option<f64>,
}

impl Default for SelfCheckOptions {
    fn default() -> Self {
        SelfCheckOptions {
            seed: 1,
            perturb_ctc: None,
        }
    }
}

struct CaseRecorder {
    cases: usize,
    failures: usize,
    detail: Option<String>,
}

impl CaseRecorder {
    fn new() -> Self {
        CaseRecorder {
            cases: 0,
            failures: 0,
            detail: None,
        }
    }

    fn record(&mut self, ok: bool, detail: impl FnOnce() -> String) {
        self.cases += 1;
        if !ok {
            self.failures += 1;
            if self.detail.is_none() {
                self.detail = Some(detail());
            }
        }
    }

    fn finish(self, name: &'static str) -> SuiteResult {
        SuiteResult {
            name,
            cases: self.cases,
            failures: self.failures,
            detail: self.detail,
        }
    }
}

fn random_posterior(frames: usize, vocab: usize, rng: &mut ChaCha8Rng) -> PosteriorMatrix {
    let mut logits = Matrix::zeros(frames, vocab);
    for t in 0..frames {
        for k in 0..vocab {
            logits.set(t, k, rng.random_range(-2.0..2.0));
        }
    }
    PosteriorMatrix::from_logits(&logits).expect("finite logits")
}

fn loss_vs_oracle_suite(opts: &SelfCheckOptions) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(100));
    let mut rec = CaseRecorder::new();
    for _ in 0..50 {
        let t = rng.random_range(1..=4);
        let v = rng.random_range(2..=4);
        let post = random_posterior(t, v, &mut rng);
        let n = rng.random_range(0..=3.min(t));
        let ids: Vec<usize> = (0..n).map(|_| rng.random_range(1..v)).collect();
        let labels = LabelSeq::new(ids, v).expect("non-blank ids");
        let oracle = ctc_loss_oracle(&post, &labels).expect("within budget");
        match ctc_loss_impl(&post, &labels, false, opts.perturb_ctc) {
            Ok(got) => rec.record((got.loss - oracle).abs() < 1e-9, || {
                format!("loss {} vs oracle {oracle}", got.loss)
            }),
            Err(Error::InfeasibleAlignment { .. }) => rec.record(oracle.is_infinite(), || {
                format!("recursion infeasible, oracle found mass {oracle}")
            }),
            Err(e) => rec.record(false, || format!("unexpected error {e}")),
        }
    }
    rec.finish("loss-vs-enumeration")
}

fn gradient_suite(opts: &SelfCheckOptions) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(200));
    let mut rec = CaseRecorder::new();
    let h = 1e-5;
    for _ in 0..10 {
        let t = rng.random_range(2..=4);
        let v = rng.random_range(2..=4);
        let mut logits = Matrix::zeros(t, v);
        for r in 0..t {
            for c in 0..v {
                logits.set(r, c, rng.random_range(-1.5..1.5));
            }
        }
        let labels = loop {
            let n = rng.random_range(1..=2.min(t));
            let ids: Vec<usize> = (0..n).map(|_| rng.random_range(1..v)).collect();
            let labels = LabelSeq::new(ids, v).expect("non-blank ids");
            if labels.min_frames() <= t {
                break labels;
            }
        };
        let post = PosteriorMatrix::from_logits(&logits).expect("finite");
        let Ok(out) = ctc_loss_impl(&post, &labels, true, opts.perturb_ctc) else {
            rec.record(false, || "gradient case infeasible".into());
            continue;
        };
        let grad = out.grad.expect("requested gradient");
        let mut worst = 0.0f64;
        for r in 0..t {
            for c in 0..v {
                let mut plus = logits.clone();
                plus.set(r, c, plus.get(r, c) + h);
                let mut minus = logits.clone();
                minus.set(r, c, minus.get(r, c) - h);
                let lp = ctc_loss(
                    &PosteriorMatrix::from_logits(&plus).unwrap(),
                    &labels,
                    false,
                )
                .unwrap()
                .loss;
                let lm = ctc_loss(
                    &PosteriorMatrix::from_logits(&minus).unwrap(),
                    &labels,
                    false,
                )
                .unwrap()
                .loss;
                let fd = (lp - lm) / (2.0 * h);
                let a = grad.get(r, c);
                let denom = fd.abs().max(a.abs()).max(1e-8);
                worst = worst.max(((fd - a) / denom).abs());
            }
        }
        rec.record(worst < 1e-4, || {
            format!("max relative gradient error {worst}")
        });
    }
    rec.finish("gradient-vs-finite-differences")
}

fn soc_suite(opts: &SelfCheckOptions) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(300));
    let mut rec = CaseRecorder::new();
    for _ in 0..50 {
        let t = rng.random_range(2..=8);
        let v = rng.random_range(2..=4);
        let post = random_posterior(t, v, &mut rng);
        let u = rng.random_range(1..=3);
        let tokens: Vec<usize> = (0..u).map(|_| rng.random_range(0..v)).collect();
        let cfg = FilterConfig {
            stride: rng.random_range(1..=2),
            window_scale: [1.0, 1.5, 2.0][rng.random_range(0..3)],
            ..FilterConfig::default()
        };
        let fast = soc(&post, &tokens, &cfg).expect("valid inputs");
        let slow = soc_oracle(&post, &tokens, &cfg).expect("within budget");
        rec.record((fast - slow).abs() < 1e-12, || {
            format!("dp {fast} vs enumeration {slow}")
        });
    }
    rec.finish("order-score-vs-enumeration")
}

fn pipeline_determinism_suite(opts: &SelfCheckOptions) -> SuiteResult {
    let mut rec = CaseRecorder::new();
    let vocab = Vocab::ascii_lowercase();
    for case in 0..5u64 {
        let seed = opts.seed.wrapping_add(400 + case);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let config = ModelConfig::new(4, 2, vocab.size(), 1);
        let w = BiasModelWeights::random(config, seed, case % 2 == 0).expect("valid config");
        let mut frames = Matrix::zeros(6, 4);
        for r in 0..6 {
            for c in 0..4 {
                frames.set(r, c, rng.random_range(-1.0..1.0));
            }
        }
        let audio = AudioEmbeddingSeq::new(frames);
        let mut list = BiasingList::no_bias_only();
        for text in ["play", "branix", "zu"] {
            list.push(
                ContextPhrase::new(text, &vocab).expect("in vocab"),
                Provenance::TrueBias,
            )
            .expect("real phrase");
        }

        let once = forward(&audio, &list, &w).expect("forward pass");
        let twice = forward(&audio, &list, &w).expect("forward pass");
        let same_bits = once
            .posterior
            .log_data()
            .iter()
            .zip(twice.posterior.log_data())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        rec.record(same_bits, || "repeated forward pass changed bits".into());

        let cfg = FilterConfig {
            psc_threshold: 0.0,
            soc_threshold: 0.0,
            ..FilterConfig::default()
        };
        let (_, kept1) = filter_list(&once.posterior, &list, &cfg).expect("filter");
        let (_, kept2) = filter_list(&once.posterior, &kept1, &cfg).expect("filter");
        let idempotent = kept1.len() == kept2.len()
            && (0..kept1.len()).all(|i| kept1.get(i).text() == kept2.get(i).text());
        rec.record(idempotent, || "re-filtering changed the kept list".into());
    }
    rec.finish("pipeline-determinism")
}

fn file_round_trip_suite(opts: &SelfCheckOptions) -> Result<SuiteResult> {
    let scratch = scratch_dir(opts.seed)?;
    let result = (|| -> Result<SuiteResult> {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(500));
        let mut rec = CaseRecorder::new();

        let post = random_posterior(5, 6, &mut rng);
        let p1 = scratch.join("a.cpost");
        let p2 = scratch.join("b.cpost");
        files::write_posterior(&p1, &post)?;
        let back = files::read_posterior(&p1)?;
        files::write_posterior(&p2, &back)?;
        rec.record(fs::read(&p1)? == fs::read(&p2)?, || {
            "posterior files differ after round trip".into()
        });

        let w = BiasModelWeights::random(ModelConfig::new(4, 2, 6, 2), opts.seed, true)
            .expect("valid config");
        let w1 = scratch.join("a.weights");
        let w2 = scratch.join("b.weights");
        files::write_weights(&w1, &w)?;
        let wback = files::read_weights(&w1)?;
        rec.record(wback == w, || "weights changed across round trip".into());
        files::write_weights(&w2, &wback)?;
        rec.record(fs::read(&w1)? == fs::read(&w2)?, || {
            "weight files differ after round trip".into()
        });

        let vocab = Vocab::ascii_lowercase();
        let vpath = scratch.join("v.vocab");
        files::write_vocab(&vpath, &vocab)?;
        let vback = files::read_vocab(&vpath)?;
        rec.record(vback.tokens() == vocab.tokens(), || {
            "vocab changed across round trip".into()
        });

        let mut list = BiasingList::no_bias_only();
        list.push(
            ContextPhrase::new("deep dish", &vocab).unwrap(),
            Provenance::TrueBias,
        )
        .expect("real phrase");
        list.push(
            ContextPhrase::new("klemar", &vocab).unwrap(),
            Provenance::Distractor,
        )
        .expect("real phrase");
        let lpath = scratch.join("l.list");
        files::write_list(&lpath, &list)?;
        let lback = files::read_list(&lpath, &vocab)?;
        let lists_match = lback.len() == list.len()
            && (0..list.len()).all(|i| {
                list.get(i).text() == lback.get(i).text()
                    && list.provenance(i) == lback.provenance(i)
            });
        rec.record(lists_match, || "list changed across round trip".into());

        let manifest = files::RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: "selfcheck".into(),
            seed: Some(opts.seed),
            args: vec!["--seed".into(), opts.seed.to_string()],
            inputs: vec![(files::sha256_file(&vpath)?, "v.vocab".into())],
            outputs: vec![],
        };
        let mpath = scratch.join("m.manifest");
        files::write_manifest(&mpath, &manifest)?;
        rec.record(files::read_manifest(&mpath)? == manifest, || {
            "manifest changed across round trip".into()
        });

        Ok(rec.finish("file-round-trips"))
    })();
    let _ = fs::remove_dir_all(&scratch);
    result
}

fn scratch_dir(seed: u64) -> Result<PathBuf> {
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.subsec_nanos())
        .unwrap_or(0);
    let dir = std::env::temp_dir().join(format!(
        "ctxbias-selfcheck-{}-{seed}-{nanos}",
        std::process::id()
    ));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn synth_consistency_suite(opts: &SelfCheckOptions) -> SuiteResult {
    let mut rec = CaseRecorder::new();
    let cfg = synth::SynthConfig {
        seed: opts.seed,
        n_utterances: 3,
        attenuation: 1.0,
        ..synth::SynthConfig::default()
    };
    match synth::generate(&cfg) {
        Ok(s) => {
            for u in &s.utterances {
                let decoded = crate::ctc::greedy_decode(&u.posterior);
                match s.vocab.detokenize(&decoded) {
                    Ok(text) => rec.record(text == u.reference, || {
                        format!("decoded {text:?}, expected {:?}", u.reference)
                    }),
                    Err(e) => rec.record(false, || format!("detokenize failed: {e}")),
                }
            }
        }
        Err(e) => rec.record(false, || format!("generation failed: {e}")),
    }
    rec.finish("synthetic-scenario-consistency")
}

/// Run every suite. IO failures while preparing round-trip scratch files
/// surface as errors; verification failures are reported per suite.
pub fn run(opts: &SelfCheckOptions) -> Result<Vec<SuiteResult>> {
    Ok(vec![
        loss_vs_oracle_suite(opts),
        gradient_suite(opts),
        soc_suite(opts),
        pipeline_determinism_suite(opts),
        file_round_trip_suite(opts)?,
        synth_consistency_suite(opts),
    ])
}
