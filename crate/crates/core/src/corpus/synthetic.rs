//! Seeded synthetic corpora with planted lexical argument groups.
//!
//! Each theme gets `groups_per_theme` keyword pools. An instance draws most of
//! its words from one pool, so instances of the same group overlap lexically
//! and end up close under the hashing embedder. A fraction of instances is
//! "diffuse": few pool words, many filler words.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AgeBucket, Corpus, CorpusError, Gender, Instance, ThemeRegistry, CLIMATE_THEMES};

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub themes: usize,
    pub per_theme: usize,
    pub groups_per_theme: usize,
    /// Share of instances built mostly from filler words.
    pub diffuse_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            themes: 5,
            per_theme: 40,
            groups_per_theme: 2,
            diffuse_fraction: 0.3,
            seed: 7,
        }
    }
}

const STANCES: [&str; 2] = ["pro-energy", "clean-energy"];
const STATES: [&str; 6] = ["CA", "TX", "FL", "NY", "PA", "OH"];
const FUNDERS: [&str; 4] = [
    "Citizens for Progress",
    "Energy Forward PAC",
    "Green Future Fund",
    "Heartland Jobs Alliance",
];

const SYLLABLES: [&str; 24] = [
    "ka", "lo", "mi", "ren", "tas", "vo", "pel", "dur", "sin", "ga", "bro", "fen", "hal", "ix", "jo", "qua", "ro",
    "ste", "tu", "wel", "ya", "zor", "nem", "cal",
];

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(2..=3);
    (0..n).map(|_| *SYLLABLES.choose(rng).unwrap()).collect()
}

fn distinct_words(rng: &mut ChaCha8Rng, n: usize, taken: &mut std::collections::HashSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w = pseudo_word(rng);
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

/// Generates a corpus together with the planted group of every instance
/// (`theme/group`), keyed by instance id.
pub fn generate(spec: &SyntheticSpec) -> Result<(Corpus, BTreeMap<String, String>), CorpusError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut taken = std::collections::HashSet::new();
    let filler = distinct_words(&mut rng, 400, &mut taken);
    let themes: Vec<String> = (0..spec.themes)
        .map(|t| {
            CLIMATE_THEMES
                .get(t)
                .map(|s| s.to_string())
                .unwrap_or_else(|| format!("Theme{t}"))
        })
        .collect();

    let start = NaiveDate::from_ymd_opt(2021, 1, 1).expect("valid date");
    let mut instances = Vec::with_capacity(spec.themes * spec.per_theme);
    let mut planted = BTreeMap::new();
    for (t, theme) in themes.iter().enumerate() {
        let theme_words = distinct_words(&mut rng, 4, &mut taken);
        let pools: Vec<Vec<String>> = (0..spec.groups_per_theme)
            .map(|_| distinct_words(&mut rng, 10, &mut taken))
            .collect();
        for i in 0..spec.per_theme {
            let group = i % spec.groups_per_theme.max(1);
            let diffuse = rng.gen_bool(spec.diffuse_fraction.clamp(0.0, 1.0));
            let (n_pool, n_filler) = if diffuse { (3, 9) } else { (7, 2) };
            let mut words: Vec<String> = pools[group].choose_multiple(&mut rng, n_pool).cloned().collect();
            words.extend(theme_words.choose_multiple(&mut rng, 2).cloned());
            words.extend(filler.choose_multiple(&mut rng, n_filler).cloned());
            words.shuffle(&mut rng);
            let body = format!(
                "{}. {} {}.",
                capitalize(&words.join(" ")),
                capitalize(&pseudo_word(&mut rng)),
                pseudo_word(&mut rng)
            );
            let id = format!("s{t:02}-{i:03}");

            let mut inst = Instance::new(&id, theme, body);
            inst.title = None;
            inst.aux_label = Some(
                if rng.gen_bool(0.85) {
                    STANCES[group % 2]
                } else {
                    STANCES[(group + 1) % 2]
                }
                .to_string(),
            );
            inst.funding_entity = Some(FUNDERS[rng.gen_range(0..FUNDERS.len())].to_string());
            inst.spend = Some(f64::from(rng.gen_range(1..50u32)) * 100.0 - 0.5);
            inst.impressions = Some(rng.gen_range(1_000..100_000));
            inst.date = Some(start + Duration::days(rng.gen_range(0..365)));

            let focus_age = AgeBucket::ALL[rng.gen_range(0..AgeBucket::ALL.len())];
            let focus_share = rng.gen_range(0.3..0.8);
            let rest = (1.0 - focus_share) / 13.0;
            for gender in [Gender::Male, Gender::Female] {
                let by_age = inst.demo_shares.entry(gender).or_default();
                for bucket in AgeBucket::ALL {
                    let share = if bucket == focus_age { focus_share / 2.0 } else { rest };
                    by_age.insert(bucket, round6(share));
                }
            }
            let focus_state = STATES[rng.gen_range(0..STATES.len())];
            let state_share = rng.gen_range(0.4..0.9);
            inst.region_shares.insert(focus_state.to_string(), round6(state_share));
            for other in STATES.iter().filter(|s| **s != focus_state).take(2) {
                inst.region_shares
                    .insert(other.to_string(), round6((1.0 - state_share) / 2.0));
            }

            planted.insert(id, format!("{theme}/{group}"));
            instances.push(inst);
        }
    }
    let registry = ThemeRegistry::new(themes)?;
    Ok((Corpus::new(instances, registry)?, planted))
}

// rounding down keeps partial sums at or below one
fn round6(x: f64) -> f64 {
    (x * 1e6).floor() / 1e6
}
