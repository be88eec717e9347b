//! CSV dialects, filename features and the log-linear filename-to-format
//! prior.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::episode::CoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Delimiter {
    Comma,
    Semicolon,
    Tab,
}

impl Delimiter {
    pub const ALL: [Delimiter; 3] = [Delimiter::Comma, Delimiter::Semicolon, Delimiter::Tab];

    pub fn ch(self) -> char {
        match self {
            Delimiter::Comma => ',',
            Delimiter::Semicolon => ';',
            Delimiter::Tab => '\t',
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.ch() == c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuoteChar {
    Double,
    Single,
}

impl QuoteChar {
    pub const ALL: [QuoteChar; 2] = [QuoteChar::Double, QuoteChar::Single];

    pub fn ch(self) -> char {
        match self {
            QuoteChar::Double => '"',
            QuoteChar::Single => '\'',
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        Self::ALL.into_iter().find(|q| q.ch() == c)
    }
}

/// One of the three latent format attributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Delimiter,
    Quote,
    Skiprows,
}

impl Attribute {
    pub const ALL: [Attribute; 3] = [Attribute::Delimiter, Attribute::Quote, Attribute::Skiprows];

    /// Name of the matching read parameter and unit test suffix.
    pub fn param_name(self) -> &'static str {
        match self {
            Attribute::Delimiter => "delimiter",
            Attribute::Quote => "quotechar",
            Attribute::Skiprows => "skiprows",
        }
    }

    pub fn from_param_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.param_name() == name)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn cardinality(self) -> usize {
        match self {
            Attribute::Delimiter => 3,
            Attribute::Quote | Attribute::Skiprows => 2,
        }
    }
}

/// A full CSV dialect `(delimiter, quote, skiprows)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FormatTriple {
    pub delimiter: Delimiter,
    pub quote: QuoteChar,
    pub skiprows: u8,
}

impl FormatTriple {
    pub const COUNT: usize = 12;

    pub fn new(delimiter: Delimiter, quote: QuoteChar, skiprows: u8) -> Self {
        FormatTriple {
            delimiter,
            quote,
            skiprows: skiprows.min(1),
        }
    }

    /// Lexicographic index: delimiter, then quote, then skiprows.
    pub fn index(self) -> usize {
        self.value(Attribute::Delimiter) * 4
            + self.value(Attribute::Quote) * 2
            + self.value(Attribute::Skiprows)
    }

    pub fn from_index(i: usize) -> Self {
        assert!(i < Self::COUNT, "format index {i} out of range");
        FormatTriple::new(
            Delimiter::ALL[i / 4],
            QuoteChar::ALL[(i / 2) % 2],
            (i % 2) as u8,
        )
    }

    pub fn all() -> impl Iterator<Item = FormatTriple> {
        (0..Self::COUNT).map(Self::from_index)
    }

    /// Category index of one attribute.
    pub fn value(self, attr: Attribute) -> usize {
        match attr {
            Attribute::Delimiter => self.delimiter as usize,
            Attribute::Quote => self.quote as usize,
            Attribute::Skiprows => usize::from(self.skiprows.min(1)),
        }
    }

    /// Python literal of one attribute value, as printed by unit tests.
    pub fn repr(self, attr: Attribute) -> String {
        value_repr(attr, self.value(attr))
    }
}

impl Default for FormatTriple {
    fn default() -> Self {
        FormatTriple::new(Delimiter::Comma, QuoteChar::Double, 0)
    }
}

impl std::fmt::Display for FormatTriple {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "(delimiter={}, quotechar={}, skiprows={})",
            self.repr(Attribute::Delimiter),
            self.repr(Attribute::Quote),
            self.skiprows
        )
    }
}

/// Python literal of category `v` of `attr`.
pub fn value_repr(attr: Attribute, v: usize) -> String {
    match attr {
        Attribute::Delimiter => ["','", "';'", "'\\t'"][v].to_string(),
        Attribute::Quote => ["'\"'", "\"'\""][v].to_string(),
        Attribute::Skiprows => v.to_string(),
    }
}

pub const FEATURE_NAMES: [&str; 4] = ["has_eu", "has_tsv", "has_sas", "has_cn"];
pub const FEATURE_TOKENS: [&str; 4] = ["_eu", "_tsv", "_sas", "_cn"];

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
pub struct FilenameFeatures {
    pub has_eu: bool,
    pub has_tsv: bool,
    pub has_sas: bool,
    pub has_cn: bool,
}

impl FilenameFeatures {
    pub const COUNT: usize = 16;

    pub fn from_filename(name: &str) -> Self {
        let has = |t: &str| name.contains(t);
        FilenameFeatures {
            has_eu: has(FEATURE_TOKENS[0]),
            has_tsv: has(FEATURE_TOKENS[1]),
            has_sas: has(FEATURE_TOKENS[2]),
            has_cn: has(FEATURE_TOKENS[3]),
        }
    }

    pub fn flags(self) -> [bool; 4] {
        [self.has_eu, self.has_tsv, self.has_sas, self.has_cn]
    }

    pub fn from_flags(f: [bool; 4]) -> Self {
        FilenameFeatures {
            has_eu: f[0],
            has_tsv: f[1],
            has_sas: f[2],
            has_cn: f[3],
        }
    }

    /// Configuration index in 0..16, `has_eu` as the most significant bit.
    pub fn index(self) -> usize {
        self.flags()
            .iter()
            .fold(0, |acc, &b| acc * 2 + usize::from(b))
    }

    pub fn from_index(i: usize) -> Self {
        assert!(i < Self::COUNT, "feature index {i} out of range");
        Self::from_flags([i & 8 != 0, i & 4 != 0, i & 2 != 0, i & 1 != 0])
    }

    pub fn all() -> impl Iterator<Item = FilenameFeatures> {
        (0..Self::COUNT).map(Self::from_index)
    }
}

/// Logits for one attribute: a base vector plus a vector per active feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeWeights {
    pub base: Vec<f64>,
    #[serde(default)]
    pub features: BTreeMap<String, Vec<f64>>,
}

impl AttributeWeights {
    fn logits(&self, features: FilenameFeatures) -> Vec<f64> {
        let mut z = self.base.clone();
        for (name, on) in FEATURE_NAMES.iter().zip(features.flags()) {
            if let (true, Some(w)) = (on, self.features.get(*name)) {
                for (zi, wi) in z.iter_mut().zip(w) {
                    *zi += wi;
                }
            }
        }
        z
    }
}

/// Log-linear filename-to-format prior; serializes as the weight file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleFormatModel {
    pub delimiter: AttributeWeights,
    pub quote: AttributeWeights,
    pub skiprows: AttributeWeights,
}

impl Default for OracleFormatModel {
    fn default() -> Self {
        let w = |base: Vec<f64>, feats: &[(&str, Vec<f64>)]| AttributeWeights {
            base,
            features: feats
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
        };
        OracleFormatModel {
            delimiter: w(
                vec![1.5, 0.0, 0.0],
                &[
                    ("has_eu", vec![0.0, 2.0, 0.0]),
                    ("has_tsv", vec![0.0, 0.0, 2.5]),
                    ("has_cn", vec![0.0, 0.0, 0.5]),
                ],
            ),
            quote: w(vec![0.5, 0.0], &[("has_sas", vec![0.0, 1.5])]),
            skiprows: w(
                vec![0.5, 0.0],
                &[("has_sas", vec![0.0, 1.0]), ("has_cn", vec![0.0, 1.0])],
            ),
        }
    }
}

impl OracleFormatModel {
    pub fn attribute(&self, attr: Attribute) -> &AttributeWeights {
        match attr {
            Attribute::Delimiter => &self.delimiter,
            Attribute::Quote => &self.quote,
            Attribute::Skiprows => &self.skiprows,
        }
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        for attr in Attribute::ALL {
            let w = self.attribute(attr);
            let n = attr.cardinality();
            if w.base.len() != n {
                return Err(CoreError::InvalidArgument(format!(
                    "{attr:?}: expected {n} base logits"
                )));
            }
            for (name, v) in &w.features {
                if !FEATURE_NAMES.contains(&name.as_str()) {
                    return Err(CoreError::InvalidArgument(format!(
                        "{attr:?}: unknown feature '{name}'"
                    )));
                }
                if v.len() != n {
                    return Err(CoreError::InvalidArgument(format!(
                        "{attr:?}/{name}: expected {n} logits"
                    )));
                }
            }
            if w.base
                .iter()
                .chain(w.features.values().flatten())
                .any(|x| !x.is_finite())
            {
                return Err(CoreError::InvalidArgument(format!(
                    "{attr:?}: non-finite logit"
                )));
            }
        }
        Ok(())
    }

    pub fn prior(&self, features: FilenameFeatures) -> FormatPrior {
        FormatPrior {
            marginals: Attribute::ALL.map(|a| softmax(&self.attribute(a).logits(features))),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CoreError> {
        let m: OracleFormatModel = serde_json::from_str(text)
            .map_err(|e| CoreError::InvalidArgument(format!("weight file: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("weights serialize")
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Factorized distribution over the 12 format triples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormatPrior {
    /// Indexed by [`Attribute::index`].
    pub marginals: [Vec<f64>; 3],
}

impl FormatPrior {
    pub fn marginal(&self, attr: Attribute) -> &[f64] {
        &self.marginals[attr.index()]
    }

    pub fn prob(&self, z: FormatTriple) -> f64 {
        Attribute::ALL
            .iter()
            .map(|&a| self.marginal(a)[z.value(a)])
            .product()
    }

    pub fn joint(&self) -> [f64; FormatTriple::COUNT] {
        std::array::from_fn(|i| self.prob(FormatTriple::from_index(i)))
    }

    /// Most likely category per attribute (first on ties).
    pub fn argmax(&self) -> FormatTriple {
        let am = |a: Attribute| {
            let m = self.marginal(a);
            (0..m.len()).fold(0, |best, i| if m[i] > m[best] { i } else { best })
        };
        FormatTriple::new(
            Delimiter::ALL[am(Attribute::Delimiter)],
            QuoteChar::ALL[am(Attribute::Quote)],
            am(Attribute::Skiprows) as u8,
        )
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        for a in Attribute::ALL {
            let m = self.marginal(a);
            if m.len() != a.cardinality() || m.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(CoreError::InvalidArgument(format!("bad {a:?} marginal")));
            }
            if (m.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(CoreError::InvalidArgument(format!(
                    "{a:?} marginal does not sum to 1"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triple_indexing_roundtrips() {
        for i in 0..12 {
            assert_eq!(FormatTriple::from_index(i).index(), i);
        }
        assert_eq!(FormatTriple::from_index(0), FormatTriple::default());
        let z = FormatTriple::new(Delimiter::Semicolon, QuoteChar::Single, 1);
        assert_eq!(z.index(), 7);
        assert_eq!(z.repr(Attribute::Delimiter), "';'");
        assert_eq!(
            FormatTriple::new(Delimiter::Tab, QuoteChar::Double, 0).repr(Attribute::Delimiter),
            "'\\t'"
        );
    }

    #[test]
    fn features_from_filenames() {
        let f = FilenameFeatures::from_filename("race_tsv_sas.tsv");
        assert_eq!(f.flags(), [false, true, true, false]);
        assert_eq!(
            FilenameFeatures::from_filename("must_eu.csv").flags(),
            [true, false, false, false]
        );
        for i in 0..16 {
            assert_eq!(FilenameFeatures::from_index(i).index(), i);
        }
    }

    #[test]
    fn default_priors() {
        let m = OracleFormatModel::default();
        m.validate().unwrap();
        let plain = m.prior(FilenameFeatures::default());
        assert_eq!(plain.argmax().delimiter, Delimiter::Comma);
        assert!(plain.marginal(Attribute::Delimiter)[0] > 0.6);
        let tsv = m.prior(FilenameFeatures {
            has_tsv: true,
            ..Default::default()
        });
        assert_eq!(tsv.argmax().delimiter, Delimiter::Tab);
        let eu = m.prior(FilenameFeatures {
            has_eu: true,
            ..Default::default()
        });
        assert_eq!(eu.argmax().delimiter, Delimiter::Semicolon);
    }

    #[test]
    fn prior_factorizes() {
        let m = OracleFormatModel::default();
        for f in FilenameFeatures::all() {
            let p = m.prior(f);
            p.validate().unwrap();
            let joint = p.joint();
            assert!((joint.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for z in FormatTriple::all() {
                let by_hand = p.marginals[0][z.delimiter as usize]
                    * p.marginals[1][z.quote as usize]
                    * p.marginals[2][usize::from(z.skiprows)];
                assert!((joint[z.index()] - by_hand).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn case_study_weights() {
        let w = |base: Vec<f64>, feats: &[(&str, Vec<f64>)]| AttributeWeights {
            base,
            features: feats
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
        };
        // Solve softmax for 0.85 on semicolon with eu active, 0.589 on
        // double quote and 0.607 on skiprows=0.
        let eu = (0.85f64 / 0.075).ln();
        let m = OracleFormatModel {
            delimiter: w(vec![0.0, 0.0, 0.0], &[("has_eu", vec![0.0, eu, 0.0])]),
            quote: w(vec![(0.589f64 / 0.411).ln(), 0.0], &[]),
            skiprows: w(vec![(0.607f64 / 0.393).ln(), 0.0], &[]),
        };
        let p = m.prior(FilenameFeatures::from_filename("must_eu.csv"));
        assert!((p.marginal(Attribute::Delimiter)[1] - 0.85).abs() < 1e-9);
        assert!((p.marginal(Attribute::Quote)[0] - 0.589).abs() < 1e-9);
        assert!((p.marginal(Attribute::Skiprows)[0] - 0.607).abs() < 1e-9);
    }

    #[test]
    fn weight_file_roundtrip_and_validation() {
        let m = OracleFormatModel::default();
        assert_eq!(OracleFormatModel::from_json(&m.to_json()).unwrap(), m);
        let mut bad = m.clone();
        bad.quote.base.push(1.0);
        assert!(bad.validate().is_err());
        let mut unknown = m;
        unknown
            .delimiter
            .features
            .insert("has_xx".into(), vec![0.0; 3]);
        assert!(unknown.validate().is_err());
    }
}
