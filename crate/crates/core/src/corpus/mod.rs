//! Canonical data model for themed instance corpora, plus loading and
//! theme partitioning.

mod io;
pub mod synthetic;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{load_corpus, read_corpus, write_corpus, CorpusFormat, LoadOptions};

/// Tolerance applied when checking that partial share distributions do not
/// exceed one.
pub const SHARE_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: field '{field}': {message}")]
    Schema {
        line: usize,
        field: String,
        message: String,
    },
    #[error("line {line}: duplicate instance id '{id}'")]
    DuplicateId { id: String, line: usize },
    #[error("line {line}: unknown theme '{theme}'")]
    UnknownTheme { theme: String, line: usize },
    #[error("theme registry is empty")]
    EmptyRegistry,
    #[error("instance text is empty")]
    EmptyText,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
    Unknown,
}

impl Gender {
    pub const ALL: [Gender; 3] = [Gender::Male, Gender::Female, Gender::Unknown];
}

/// The seven fixed age buckets used by ad-library impression breakdowns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgeBucket {
    #[serde(rename = "13-17")]
    A13To17,
    #[serde(rename = "18-24")]
    A18To24,
    #[serde(rename = "25-34")]
    A25To34,
    #[serde(rename = "35-44")]
    A35To44,
    #[serde(rename = "45-54")]
    A45To54,
    #[serde(rename = "55-64")]
    A55To64,
    #[serde(rename = "65+")]
    A65Plus,
}

impl AgeBucket {
    pub const ALL: [AgeBucket; 7] = [
        AgeBucket::A13To17,
        AgeBucket::A18To24,
        AgeBucket::A25To34,
        AgeBucket::A35To44,
        AgeBucket::A45To54,
        AgeBucket::A55To64,
        AgeBucket::A65Plus,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AgeBucket::A13To17 => "13-17",
            AgeBucket::A18To24 => "18-24",
            AgeBucket::A25To34 => "25-34",
            AgeBucket::A35To44 => "35-44",
            AgeBucket::A45To54 => "45-54",
            AgeBucket::A55To64 => "55-64",
            AgeBucket::A65Plus => "65+",
        }
    }
}

/// Impression shares keyed by gender then age bucket. Distributions may be
/// partial (sum below one).
pub type DemoShares = BTreeMap<Gender, BTreeMap<AgeBucket, f64>>;

/// One ad or post.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<String>,
    /// Composed from title, description and body.
    #[serde(skip)]
    pub text: String,
    pub theme: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aux_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub funding_entity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spend: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impressions: Option<u64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub demo_shares: DemoShares,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub region_shares: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date: Option<NaiveDate>,
}

impl Instance {
    /// Builds an instance with only the required fields set.
    pub fn new(id: impl Into<String>, theme: impl Into<String>, body: impl Into<String>) -> Self {
        let body = body.into();
        let text = compose_text(None, None, Some(&body)).unwrap_or_default();
        Instance {
            id: id.into(),
            title: None,
            description: None,
            body: Some(body),
            text,
            theme: theme.into(),
            aux_label: None,
            funding_entity: None,
            spend: None,
            impressions: None,
            demo_shares: BTreeMap::new(),
            region_shares: BTreeMap::new(),
            date: None,
        }
    }

    /// Total impression share for the given age buckets, summed over genders.
    pub fn age_share(&self, buckets: &[AgeBucket]) -> f64 {
        self.demo_shares
            .values()
            .flat_map(|by_age| by_age.iter())
            .filter(|(bucket, _)| buckets.contains(bucket))
            .map(|(_, share)| *share)
            .sum()
    }

    pub fn region_share(&self, state: &str) -> f64 {
        self.region_shares.get(state).copied().unwrap_or(0.0)
    }

    pub(crate) fn validate_shares(&self) -> Result<(), (&'static str, String)> {
        let mut demo_sum = 0.0;
        for share in self.demo_shares.values().flat_map(|m| m.values()) {
            check_share(*share).map_err(|m| ("demo_shares", m))?;
            demo_sum += share;
        }
        if demo_sum > 1.0 + SHARE_SUM_TOLERANCE {
            return Err(("demo_shares", format!("shares sum to {demo_sum}, above 1")));
        }
        let mut region_sum = 0.0;
        for share in self.region_shares.values() {
            check_share(*share).map_err(|m| ("region_shares", m))?;
            region_sum += share;
        }
        if region_sum > 1.0 + SHARE_SUM_TOLERANCE {
            return Err(("region_shares", format!("shares sum to {region_sum}, above 1")));
        }
        Ok(())
    }
}

fn check_share(share: f64) -> Result<(), String> {
    if share.is_finite() && (0.0..=1.0).contains(&share) {
        Ok(())
    } else {
        Err(format!("share {share} outside [0, 1]"))
    }
}

/// Joins the non-blank text fields in title, description, body order with
/// newlines. A field equal to the previous kept field is dropped.
pub fn compose_text(title: Option<&str>, description: Option<&str>, body: Option<&str>) -> Result<String, CorpusError> {
    let mut parts: Vec<&str> = Vec::with_capacity(3);
    for field in [title, description, body].into_iter().flatten() {
        let field = field.trim();
        if field.is_empty() {
            continue;
        }
        if parts.last() == Some(&field) {
            continue;
        }
        parts.push(field);
    }
    if parts.is_empty() {
        return Err(CorpusError::EmptyText);
    }
    Ok(parts.join("\n"))
}

/// Set of admissible theme labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ThemeRegistry {
    themes: BTreeSet<String>,
}

impl ThemeRegistry {
    pub fn new<I, S>(themes: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let themes: BTreeSet<String> = themes.into_iter().map(Into::into).collect();
        if themes.is_empty() {
            return Err(CorpusError::EmptyRegistry);
        }
        Ok(ThemeRegistry { themes })
    }

    /// Themes of the climate-campaign ad corpus.
    pub fn climate() -> Self {
        Self::new(CLIMATE_THEMES.iter().copied()).expect("non-empty")
    }

    /// Themes of the COVID-19 vaccine ad corpus.
    pub fn covid() -> Self {
        Self::new(COVID_THEMES.iter().copied()).expect("non-empty")
    }

    pub fn contains(&self, theme: &str) -> bool {
        self.themes.contains(theme)
    }

    pub fn insert(&mut self, theme: impl Into<String>) -> bool {
        self.themes.insert(theme.into())
    }

    pub fn len(&self) -> usize {
        self.themes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.themes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.themes.iter().map(String::as_str)
    }

    /// Position of a theme in sorted order; stable for a fixed registry.
    pub fn index_of(&self, theme: &str) -> Option<usize> {
        self.themes.iter().position(|t| t == theme)
    }
}

pub const CLIMATE_THEMES: [&str; 25] = [
    "Economy_pro",
    "ClimateSolution",
    "Pragmatism",
    "Patriotism",
    "AgainstClimatePolicy",
    "Economy_clean",
    "FutureGeneration",
    "Environmental",
    "HumanHealth",
    "Animals",
    "SupportClimatePolicy",
    "AltEnergy",
    "PoliticalAffiliation",
    "BidenGasPriceIncrease",
    "AgainstCorporateInterests",
    "GasTax",
    "Deforestation",
    "Carbon",
    "CustomerBasedAltEnergy",
    "EnergyAffordabilityandSustainabilityLegislation",
    "EcofriendlyConsumerChoices",
    "PlasticWasteandEnvironmentalImpact",
    "PromoteSustainableTransportation",
    "WaterManagementandSustainability",
    "FoodSecurity",
];

pub const COVID_THEMES: [&str; 14] = [
    "GovDistrust",
    "GovTrust",
    "VaccineRollout",
    "VaccineSymptom",
    "VaccineEquity",
    "VaccineStatus",
    "EncourageVaccination",
    "VaccineMandate",
    "VaccineReligion",
    "VaccineEfficacy",
    "VaccineDevelopment",
    "CovidPlan",
    "VaccineMisinformation",
    "NaturalImmunity",
];

/// Validated, read-only collection of instances.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    instances: Vec<Instance>,
    registry: ThemeRegistry,
}

impl Corpus {
    /// Validates ids and themes. Instances are expected to carry composed text.
    pub fn new(instances: Vec<Instance>, registry: ThemeRegistry) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(instances.len());
        for (pos, inst) in instances.iter().enumerate() {
            let line = pos + 1;
            if inst.id.trim().is_empty() {
                return Err(CorpusError::Schema {
                    line,
                    field: "id".into(),
                    message: "must be non-empty".into(),
                });
            }
            if !seen.insert(inst.id.as_str()) {
                return Err(CorpusError::DuplicateId {
                    id: inst.id.clone(),
                    line,
                });
            }
            if !registry.contains(&inst.theme) {
                return Err(CorpusError::UnknownTheme {
                    theme: inst.theme.clone(),
                    line,
                });
            }
            if inst.text.trim().is_empty() {
                return Err(CorpusError::Schema {
                    line,
                    field: "text".into(),
                    message: "composed text is empty".into(),
                });
            }
            if let Err((field, message)) = inst.validate_shares() {
                return Err(CorpusError::Schema {
                    line,
                    field: field.into(),
                    message,
                });
            }
        }
        Ok(Corpus { instances, registry })
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn registry(&self) -> &ThemeRegistry {
        &self.registry
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Instance> {
        self.instances.iter().find(|i| i.id == id)
    }

    /// Id → position lookup table.
    pub fn index(&self) -> BTreeMap<&str, usize> {
        self.instances
            .iter()
            .enumerate()
            .map(|(i, inst)| (inst.id.as_str(), i))
            .collect()
    }

    /// Number of distinct themes actually present.
    pub fn theme_count(&self) -> usize {
        self.instances
            .iter()
            .map(|i| i.theme.as_str())
            .collect::<BTreeSet<_>>()
            .len()
    }
}

impl fmt::Display for Corpus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} instances across {} themes", self.len(), self.theme_count())
    }
}

/// Groups instances by theme, preserving corpus order within each bucket.
pub fn theme_partition(corpus: &Corpus) -> BTreeMap<String, Vec<&Instance>> {
    partition_by_theme(corpus.instances().iter())
}

pub(crate) fn partition_by_theme<'a, I>(instances: I) -> BTreeMap<String, Vec<&'a Instance>>
where
    I: IntoIterator<Item = &'a Instance>,
{
    let mut buckets: BTreeMap<String, Vec<&Instance>> = BTreeMap::new();
    for inst in instances {
        buckets.entry(inst.theme.clone()).or_default().push(inst);
    }
    buckets
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(id: &str, theme: &str) -> Instance {
        Instance::new(id, theme, format!("text of {id}"))
    }

    #[test]
    fn compose_joins_in_order() {
        let text = compose_text(Some("A"), Some("B"), Some("C")).unwrap();
        assert_eq!(text, "A\nB\nC");
    }

    #[test]
    fn compose_collapses_consecutive_duplicates() {
        assert_eq!(compose_text(Some("A"), None, Some("A")).unwrap(), "A");
        assert_eq!(compose_text(Some(" A "), Some("A"), Some("B")).unwrap(), "A\nB");
        // non-consecutive duplicates are kept
        assert_eq!(compose_text(Some("A"), Some("B"), Some("A")).unwrap(), "A\nB\nA");
    }

    #[test]
    fn compose_rejects_all_blank() {
        assert!(matches!(compose_text(None, None, None), Err(CorpusError::EmptyText)));
        assert!(matches!(
            compose_text(Some("  "), Some(""), None),
            Err(CorpusError::EmptyText)
        ));
    }

    #[test]
    fn compose_is_idempotent() {
        let once = compose_text(Some(" x "), Some("y\n"), Some("y")).unwrap();
        let twice = compose_text(None, None, Some(&once)).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn partition_preserves_order() {
        let registry = ThemeRegistry::new(["T1", "T2"]).unwrap();
        let corpus = Corpus::new(vec![inst("i0", "T1"), inst("i1", "T2"), inst("i2", "T1")], registry).unwrap();
        let parts = theme_partition(&corpus);
        let ids = |t: &str| parts[t].iter().map(|i| i.id.as_str()).collect::<Vec<_>>();
        assert_eq!(parts.len(), 2);
        assert_eq!(ids("T1"), ["i0", "i2"]);
        assert_eq!(ids("T2"), ["i1"]);
    }

    #[test]
    fn partition_of_empty_corpus_is_empty() {
        let corpus = Corpus::new(vec![], ThemeRegistry::new(["T"]).unwrap()).unwrap();
        assert!(theme_partition(&corpus).is_empty());
    }

    #[test]
    fn partition_over_climate_registry() {
        let registry = ThemeRegistry::climate();
        assert_eq!(registry.len(), 25);
        let themes: Vec<String> = registry.iter().map(String::from).collect();
        // uneven bucket sizes: theme j gets (j % 4) + 1 instances
        let mut instances = Vec::new();
        for (j, theme) in themes.iter().enumerate() {
            for r in 0..(j % 4) + 1 {
                instances.push(inst(&format!("{j}-{r}"), theme));
            }
        }
        let corpus = Corpus::new(instances, registry).unwrap();
        let parts = theme_partition(&corpus);
        assert_eq!(parts.len(), 25);
        // brute-force scan per theme
        for theme in &themes {
            let expected = corpus.instances().iter().filter(|i| &i.theme == theme).count();
            assert_eq!(parts[theme].len(), expected);
        }
        let total: usize = parts.values().map(Vec::len).sum();
        assert_eq!(total, corpus.len());
    }

    #[test]
    fn corpus_rejects_duplicates_and_unknown_themes() {
        let registry = ThemeRegistry::new(["T"]).unwrap();
        let err = Corpus::new(vec![inst("a1", "T"), inst("a1", "T")], registry.clone()).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId { ref id, .. } if id == "a1"));
        let err = Corpus::new(vec![inst("a1", "X")], registry).unwrap_err();
        assert!(matches!(err, CorpusError::UnknownTheme { ref theme, .. } if theme == "X"));
    }

    #[test]
    fn shares_validation() {
        let mut i = inst("a", "T");
        i.region_shares.insert("FL".into(), 0.7);
        i.region_shares.insert("GA".into(), 0.3);
        assert!(i.validate_shares().is_ok());
        i.region_shares.insert("AL".into(), 0.1);
        assert_eq!(i.validate_shares().unwrap_err().0, "region_shares");

        let mut j = inst("b", "T");
        j.demo_shares
            .entry(Gender::Male)
            .or_default()
            .insert(AgeBucket::A65Plus, 1.2);
        assert_eq!(j.validate_shares().unwrap_err().0, "demo_shares");
    }

    #[test]
    fn empty_registry_rejected() {
        assert!(matches!(
            ThemeRegistry::new(Vec::<String>::new()),
            Err(CorpusError::EmptyRegistry)
        ));
    }
}
