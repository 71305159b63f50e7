//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fail.

mod common;

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{feature_matrix, gaussian_rows};
use diarkit_core::clustering::ClusterDistance;
use diarkit_core::features::{dct_ii, delta, hz_to_mel};
use diarkit_core::gmm::{fit_em, select_n_components, write_curve_csv, Criterion};
use diarkit_core::metrics::{der, wer};
use diarkit_core::pipeline::{diarize_buffer, rttm_string, synth_fixture, SynthSpec};
use diarkit_core::segmentation::delta_bic;
use diarkit_core::spectral::{frame_signal, hamming_window, RealDft};
use diarkit_core::{FitConfig, LabeledTimeline, Matrix, PipelineConfig, WordSequence};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = (bool, String);

fn naive_dft(x: &[f64]) -> Vec<(f64, f64)> {
    let n = x.len();
    (0..=n / 2)
        .map(|k| {
            x.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, &v)| {
                let a = -2.0 * PI * ((k * t) % n) as f64 / n as f64;
                (re + v * a.cos(), im + v * a.sin())
            })
        })
        .collect()
}

fn naive_dct(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    (0..x.len())
        .map(|k| {
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            let mut acc = 0.0;
            for (i, v) in x.iter().enumerate() {
                acc += v * (PI * k as f64 * (2.0 * i as f64 + 1.0) / (2.0 * n)).cos();
            }
            scale * acc
        })
        .collect()
}

fn edit_distance(a: &[String], b: &[String]) -> usize {
    let mut dp = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in dp.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        dp[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = dp[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            dp[i][j] = sub.min(dp[i - 1][j] + 1).min(dp[i][j - 1] + 1);
        }
    }
    dp[a.len()][b.len()]
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn dsp_oracles() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut fft_err, mut dct_err) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let n = 1usize << rng.random_range(1..=6);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fast = RealDft::new(n).unwrap().spectrum(&x).unwrap();
        let slow = naive_dft(&x);
        let scale = slow.iter().map(|(r, i)| r.hypot(*i)).fold(f64::MIN_POSITIVE, f64::max);
        for (f, (re, im)) in fast.iter().zip(&slow) {
            fft_err = fft_err.max((f.re - re).hypot(f.im - im) / scale);
        }

        let m = rng.random_range(1..=32);
        let y: Vec<f64> = (0..m).map(|_| rng.random_range(-10.0..10.0)).collect();
        let fast = dct_ii(&y, m).unwrap();
        let slow = naive_dct(&y);
        let scale = slow.iter().map(|v| v.abs()).fold(f64::MIN_POSITIVE, f64::max);
        for (a, b) in fast.iter().zip(&slow) {
            dct_err = dct_err.max((a - b).abs() / scale);
        }
    }

    // Parseval on every frame of the fixture, zero padded to 512.
    let (audio, _) = synth_fixture(&SynthSpec::two_speaker(1)).unwrap();
    let frames = frame_signal(&audio, 25.0, 10.0).unwrap();
    let dft = RealDft::new(512).unwrap();
    let mut parseval_err = 0.0f64;
    for frame in frames.frames.iter_rows() {
        let spec = dft.spectrum(frame).unwrap();
        let freq: f64 = spec
            .iter()
            .enumerate()
            .map(|(k, c)| if k == 0 || k == 256 { c.norm_sqr() } else { 2.0 * c.norm_sqr() })
            .sum::<f64>()
            / 512.0;
        let time: f64 = frame.iter().map(|v| v * v).sum();
        if time > 0.0 {
            parseval_err = parseval_err.max((freq - time).abs() / time);
        }
    }
    let elapsed = t0.elapsed();
    let ok = fft_err <= 1e-9 && dct_err <= 1e-12 && parseval_err <= 1e-6 && elapsed < Duration::from_secs(5);
    let detail = format!(
        "fft rel err {fft_err:.2e} (<=1e-9), dct rel err {dct_err:.2e} (<=1e-12), \
         parseval rel err {parseval_err:.2e} over {} frames (<=1e-6), {:.2}s (<5s)",
        frames.n_frames(),
        secs(elapsed)
    );
    (ok, detail)
}

fn mfcc_analytic() -> Outcome {
    let mel = hz_to_mel(700.0).unwrap();
    let w = hamming_window(401).unwrap();
    let hamming_ok = w[0] == 0.08 && w[400] == 0.08 && w[200] == 1.0;

    let constant: Vec<Vec<f64>> = (0..50).map(|_| vec![3.25, -1.5]).collect();
    let d_const = delta(&feature_matrix(&constant), 2).unwrap();
    let const_ok = d_const.vectors.as_slice().iter().all(|&v| v == 0.0);

    let ramp: Vec<Vec<f64>> = (0..50).map(|t| vec![t as f64, 3.0 * t as f64 - 7.0]).collect();
    let dd = delta(&delta(&feature_matrix(&ramp), 2).unwrap(), 2).unwrap();
    // Edge padding reaches two frames in per pass.
    let ramp_ok = (4..46).all(|t| dd.vectors.row(t).iter().all(|&v| v == 0.0));

    let ok = (mel - 781.17).abs() <= 0.01 && hamming_ok && const_ok && ramp_ok;
    let detail = format!(
        "mel(700)={mel:.4} (781.17+-0.01), hamming ends/mid exact={hamming_ok}, \
         delta(const)==0 {const_ok}, delta-delta(ramp) interior==0 {ramp_ok}"
    );
    (ok, detail)
}

fn em_correctness() -> Outcome {
    let t0 = Instant::now();
    let mut monotone = 0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = 1 + (seed % 4) as usize;
        let mut rows = Vec::new();
        for c in 0..m {
            rows.extend(gaussian_rows(&mut rng, 80, 3, 4.0 * c as f64));
        }
        let x = Matrix::from_rows(&rows).unwrap();
        let (_, report) = fit_em(&x, m, &FitConfig { seed, ..FitConfig::default() }).unwrap();
        if report.log_likelihood_trace.windows(2).all(|w| w[1] >= w[0] - 1e-8) {
            monotone += 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let rows = gaussian_rows(&mut rng, 500, 5, 2.0);
    let x = Matrix::from_rows(&rows).unwrap();
    let (model, _) = fit_em(&x, 1, &FitConfig::default()).unwrap();
    let mut closed_err = 0.0f64;
    for j in 0..5 {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / 500.0;
        let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / 500.0;
        closed_err = closed_err
            .max((model.means().get(0, j) - mean).abs())
            .max((model.variances().get(0, j) - var).abs());
    }

    let mut recovered = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut rows = gaussian_rows(&mut rng, 200, 2, 0.0);
        rows.extend(gaussian_rows(&mut rng, 200, 2, 10.0));
        let x = Matrix::from_rows(&rows).unwrap();
        let (model, _) = fit_em(&x, 2, &FitConfig { seed, ..FitConfig::default() }).unwrap();
        let mut means: Vec<Vec<f64>> = model.means().iter_rows().map(|r| r.to_vec()).collect();
        means.sort_by(|a, b| a[0].total_cmp(&b[0]));
        let ok = means[0].iter().all(|v| v.abs() <= 0.5) && means[1].iter().all(|v| (v - 10.0).abs() <= 0.5);
        recovered += usize::from(ok);
    }
    let elapsed = t0.elapsed();
    let ok = monotone == 50 && closed_err <= 1e-10 && recovered >= 19 && elapsed < Duration::from_secs(30);
    let detail = format!(
        "monotone {monotone}/50, M=1 closed-form err {closed_err:.2e} (<=1e-10), \
         2-cluster recovery {recovered}/20 (>=19), {:.2}s (<30s)",
        secs(elapsed)
    );
    (ok, detail)
}

fn model_selection() -> Outcome {
    let (n, d) = (600usize, 4usize);
    let mut correct = 0;
    let mut identity_err = 0.0f64;
    let mut csv_ok = true;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let mut rows = Vec::new();
        for c in 0..3 {
            rows.extend(gaussian_rows(&mut rng, n / 3, d, 10.0 * c as f64));
        }
        let x = Matrix::from_rows(&rows).unwrap();
        let sel = select_n_components(&x, 1, 6, Criterion::Bic, &FitConfig { seed, ..FitConfig::default() }).unwrap();
        correct += usize::from(sel.best_n_components == 3);
        for p in &sel.curve {
            let k = (p.n_components * (2 * d + 1) - 1) as f64;
            let expected = k * ((n as f64).ln() - 2.0);
            // Both criteria share -2 LL; the difference is exact up to the
            // rounding of two sums of that size.
            let ulp = f64::EPSILON * p.bic.abs().max(p.aic.abs());
            identity_err = identity_err.max(((p.bic - p.aic) - expected).abs() / ulp.max(f64::EPSILON));
        }
        let mut buf = Vec::new();
        write_curve_csv(&sel.curve, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        csv_ok &= lines.next().is_some_and(|h| h.contains("n_components") && h.contains("aic") && h.contains("bic"));
        csv_ok &= lines.count() == 6;
    }
    let ok = correct >= 16 && identity_err <= 4.0 && csv_ok;
    let detail = format!(
        "BIC picked 3 in {correct}/20 (>=16), max |BIC-AIC-k(ln n-2)| = {identity_err:.1} ulp \
         of the criterion (<=4), curve csv ok={csv_ok}"
    );
    (ok, detail)
}

fn delta_bic_signs() -> Outcome {
    let d = 13;
    let (mut negative, mut positive) = (0, 0);
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + seed);
        let same = Matrix::from_rows(&gaussian_rows(&mut rng, 400, d, 0.0)).unwrap();
        negative += usize::from(delta_bic(&same, 200, 1.0).unwrap() < 0.0);
        let mut rows = gaussian_rows(&mut rng, 200, d, 0.0);
        rows.extend(gaussian_rows(&mut rng, 200, d, 10.0));
        let changed = Matrix::from_rows(&rows).unwrap();
        positive += usize::from(delta_bic(&changed, 200, 1.0).unwrap() > 0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4000);
    let (dd, n) = (4usize, 150usize);
    let half = gaussian_rows(&mut rng, n, dd, 1.0);
    let mut rows = half.clone();
    rows.extend(half);
    let x = Matrix::from_rows(&rows).unwrap();
    let p = (dd + dd * (dd + 1) / 2) as f64;
    let expected = -0.5 * p * ((2 * n) as f64).ln();
    let dup_err = (delta_bic(&x, n, 1.0).unwrap() - expected).abs();
    let ok = negative >= 19 && positive >= 19 && dup_err <= 1e-6;
    let detail = format!(
        "no-change negative {negative}/20 (>=19), 10-sigma change positive {positive}/20 (>=19), \
         duplicated-data err {dup_err:.2e} (<=1e-6)"
    );
    (ok, detail)
}

fn end_to_end(cfg: &PipelineConfig) -> (usize, usize, f64, Duration) {
    let t0 = Instant::now();
    let (mut count_ok, mut der_ok, mut worst) = (0, 0, 0.0f64);
    for seed in 1..=10u64 {
        let (audio, reference) = synth_fixture(&SynthSpec::two_speaker(seed)).unwrap();
        let out = diarize_buffer(&audio, "fixture", cfg).unwrap();
        count_ok += usize::from(out.diarization.speakers().len() == 2);
        let hyp = out.diarization.to_timeline().unwrap();
        let rate = der(&reference, &hyp, 0.25).unwrap().rate;
        der_ok += usize::from(rate < 0.10);
        worst = worst.max(rate);
    }
    (count_ok, der_ok, worst, t0.elapsed())
}

fn end_to_end_default() -> Outcome {
    let (count_ok, der_ok, worst, elapsed) = end_to_end(&PipelineConfig::default());
    let ok = count_ok >= 9 && der_ok >= 9 && elapsed < Duration::from_secs(60);
    let detail = format!(
        "speaker count 2 in {count_ok}/10 (>=9), DER<0.10 in {der_ok}/10 (>=9), worst DER {worst:.4}, \
         {:.2}s (<60s)",
        secs(elapsed)
    );
    (ok, detail)
}

fn metrics_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut wer_ok = 0;
    for _ in 0..200 {
        let mut draw = |min: usize| -> Vec<String> {
            let len = rng.random_range(min..20);
            (0..len).map(|_| format!("w{}", rng.random_range(0..6))).collect()
        };
        let (r, h) = (draw(1), draw(0));
        let rep = wer(&WordSequence::from_tokens(&r).unwrap(), &WordSequence::from_tokens(&h).unwrap()).unwrap();
        let dist = edit_distance(&r, &h);
        wer_ok += usize::from(rep.errors() == dist && rep.rate == dist as f64 / r.len() as f64);
    }

    let mut perm_ok = true;
    for trial in 0..20 {
        let mut t: f64 = 0.0;
        let (mut reference, mut hyp) = (Vec::new(), Vec::new());
        for _ in 0..10 {
            let len = rng.random_range(0.2..3.0);
            let spk = rng.random_range(0..3);
            reference.push((t, t + len, format!("ref{spk}")));
            let jitter: f64 = rng.random_range(-0.3..0.3);
            hyp.push(((t + jitter).max(0.0), t + len + jitter, rng.random_range(0..3usize)));
            t += len + rng.random_range(0.0..0.5);
        }
        let reference = LabeledTimeline::new(reference).unwrap();
        let timeline = |names: &[&str]| {
            LabeledTimeline::new(hyp.iter().map(|(a, b, l)| (*a, *b, names[*l].to_string())).collect()).unwrap()
        };
        let base = der(&reference, &timeline(&["a", "b", "c"]), 0.1 * (trial % 3) as f64).unwrap();
        let mut names = ["x", "y", "z"];
        for _ in 0..6 {
            names.shuffle(&mut rng);
            let other = der(&reference, &timeline(&names), 0.1 * (trial % 3) as f64).unwrap();
            perm_ok &= other == base;
        }
    }

    let reference = LabeledTimeline::new(vec![(0.0, 10.0, "S0".into()), (10.0, 20.0, "S1".into())]).unwrap();
    let hyp = LabeledTimeline::new(vec![(0.0, 20.0, "A".into())]).unwrap();
    let half = der(&reference, &hyp, 0.0).unwrap().rate;

    let ok = wer_ok == 200 && perm_ok && half == 0.5;
    let detail = format!(
        "wer == dp oracle on {wer_ok}/200, der label-permutation invariant={perm_ok}, half-overlap DER={half}"
    );
    (ok, detail)
}

fn determinism_and_speed() -> Outcome {
    let cfg = PipelineConfig::default();
    let (audio, _) = synth_fixture(&SynthSpec::two_speaker(3)).unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| rttm_string(&diarize_buffer(&audio, "fixture", &cfg).unwrap().diarization))
    };
    let (a, b) = (run(1), run(1));
    let c = run(4);
    let same = a == b && a == c && !a.is_empty();

    let (long, _) = synth_fixture(&SynthSpec::two_speaker_long(1, 60.0)).unwrap();
    let t0 = Instant::now();
    let out = diarize_buffer(&long, "long", &cfg).unwrap();
    let elapsed = t0.elapsed();
    let ok = same && elapsed < Duration::from_secs(10) && !out.diarization.turns.is_empty();
    let detail = format!(
        "rttm identical across runs and 1 vs 4 threads={same}, {:.1}s audio in {:.2}s (<10s)",
        long.duration_seconds(),
        secs(elapsed)
    );
    (ok, detail)
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("DSP oracle equivalence", dsp_oracles),
        ("MFCC analytic checks", mfcc_analytic),
        ("EM correctness", em_correctness),
        ("model selection", model_selection),
        ("delta-BIC sign behavior", delta_bic_signs),
        ("end-to-end diarization", end_to_end_default),
        ("metrics oracles", metrics_oracles),
        ("determinism and performance", determinism_and_speed),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let (ok, detail) = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| (false, "panicked".into()));
        failed += usize::from(!ok);
        println!("criterion {} {}: {} ({detail})", i + 1, name, if ok { "PASS" } else { "FAIL" });
        if i == 5 {
            let cfg = PipelineConfig {
                cluster_distance: ClusterDistance::MatchedPair,
                ..PipelineConfig::default()
            };
            let (count_ok, der_ok, worst, elapsed) = end_to_end(&cfg);
            println!(
                "  info: matched_pair distance gives speaker count 2 in {count_ok}/10, DER<0.10 in {der_ok}/10, \
                 worst DER {worst:.4}, {:.2}s",
                secs(elapsed)
            );
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
