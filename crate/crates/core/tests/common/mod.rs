//! Fixtures and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use argloop_core::config::Config;
use argloop_core::consolidation::{TalkingPoint, TpStatus};
use argloop_core::corpus::synthetic::{generate, SyntheticSpec};
use argloop_core::corpus::Corpus;
use argloop_core::pipeline::Engine;
use argloop_core::state::RunState;
use argloop_core::vectorspace::Embedding;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn synthetic() -> Corpus {
    generate(&SyntheticSpec::default()).unwrap().0
}

pub fn engine<'a>(corpus: &'a Corpus, config: &Config) -> Engine<'a> {
    Engine::new(corpus, config.build_embedder(), config.build_llm().unwrap())
}

/// Runs `iterations` iterations from a fresh state, keeping every snapshot.
pub fn run_states(corpus: &Corpus, config: Config, iterations: u32) -> Vec<RunState> {
    let engine = engine(corpus, &config);
    let mut states = vec![RunState::new(config, corpus, None)];
    for _ in 0..iterations {
        let next = engine.run_iteration(states.last().unwrap()).unwrap();
        states.push(next);
    }
    states
}

pub fn tp(id: &str, theme: &str, v: Vec<f64>) -> TalkingPoint {
    TalkingPoint {
        id: id.into(),
        theme: theme.into(),
        text: format!("point {id}"),
        embedding: Embedding::normalized(v).unwrap(),
        iteration: 1,
        status: TpStatus::Generated,
        merged_from: vec![],
        merged_into: None,
        source_subclusters: vec![],
        summary: None,
    }
}

/// Sort, then linear interpolation at position (n-1)q.
pub fn quantile_oracle(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = (v.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Textbook two-pass Pearson; `None` when either column is constant.
pub fn pearson_oracle(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some(sxy / (sxx * syy).sqrt())
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean silhouette straight from the definition, O(n²) per point.
pub fn silhouette_oracle(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let k = labels.iter().max().unwrap() + 1;
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (j, q) in points.iter().enumerate() {
            if i != j {
                sums[labels[j]] += euclid(p, q);
                counts[labels[j]] += 1;
            }
        }
        let own = labels[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..k)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    total / points.len() as f64
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Three 2-D blobs of 20 points (std 0.1) centred at mutual distance ≥ 10.
pub fn three_blobs(seed: u64) -> Vec<Vec<f64>> {
    let centers = [(0.0, 0.0), (10.0, 0.0), (5.0, 10.0)];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    for (cx, cy) in centers {
        for _ in 0..20 {
            points.push(vec![cx + 0.1 * normal(&mut rng), cy + 0.1 * normal(&mut rng)]);
        }
    }
    points
}
