//! Catalog ingestion: metadata CSV, image matching, class filtering,
//! stratified splits and the JSON manifest every downstream step reads.

mod augment;
mod image;

pub use self::augment::{augment, AugmentConfig};
pub use self::image::{decode_image, decode_image_bytes, resize_bilinear, DEFAULT_TARGET_SIZE};

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract_err, Error, Result};

/// Default class-size floor: smaller classes are dropped before training.
pub const DEFAULT_MIN_CLASS_SIZE: usize = 500;
pub const DEFAULT_SPLIT_SEED: u64 = 42;
pub const DEFAULT_TEST_FRACTION: f64 = 0.2;
pub const DEFAULT_VAL_FRACTION: f64 = 0.2;

/// One row of `styles.csv`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductRecord {
    pub id: u64,
    pub gender: String,
    pub master_category: String,
    pub sub_category: String,
    pub article_type: String,
    pub base_colour: String,
    pub season: String,
    pub year: String,
    pub usage: String,
    pub display_name: String,
}

/// Which catalog attribute is the class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelScheme {
    /// `gender + "-" + master_category`
    GenderMaster,
    SubCategory,
    ArticleType,
}

impl LabelScheme {
    pub const ALL: [LabelScheme; 3] = [
        LabelScheme::GenderMaster,
        LabelScheme::SubCategory,
        LabelScheme::ArticleType,
    ];

    pub fn label(&self, record: &ProductRecord) -> String {
        match self {
            LabelScheme::GenderMaster => format!("{}-{}", record.gender, record.master_category),
            LabelScheme::SubCategory => record.sub_category.clone(),
            LabelScheme::ArticleType => record.article_type.clone(),
        }
    }

    fn has_label(&self, record: &ProductRecord) -> bool {
        match self {
            LabelScheme::GenderMaster => {
                !record.gender.is_empty() && !record.master_category.is_empty()
            }
            LabelScheme::SubCategory => !record.sub_category.is_empty(),
            LabelScheme::ArticleType => !record.article_type.is_empty(),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            LabelScheme::GenderMaster => "gender-master",
            LabelScheme::SubCategory => "sub-category",
            LabelScheme::ArticleType => "article-type",
        }
    }
}

impl std::fmt::Display for LabelScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LabelScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LabelScheme::ALL
            .into_iter()
            .find(|scheme| scheme.as_str() == s)
            .ok_or_else(|| {
                Error::Schema(format!(
                    "unknown label scheme {s:?} (expected gender-master, sub-category or article-type)"
                ))
            })
    }
}

const COLUMNS: [&str; 10] = [
    "id",
    "gender",
    "masterCategory",
    "subCategory",
    "articleType",
    "baseColour",
    "season",
    "year",
    "usage",
    "productDisplayName",
];
const REQUIRED: [&str; 5] = [
    "id",
    "gender",
    "masterCategory",
    "subCategory",
    "articleType",
];

/// Reads `styles.csv`. Rows whose field count differs from the header (the
/// CSV has display names with unquoted commas), rows with a non-numeric id
/// and repeated ids are skipped and counted.
pub fn load_metadata(csv_path: impl AsRef<Path>) -> Result<(Vec<ProductRecord>, usize)> {
    let file = File::open(csv_path.as_ref())?;
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .has_headers(true)
        .from_reader(file);
    let headers = reader.headers()?.clone();
    let width = headers.len();
    let position: HashMap<&str, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.trim(), i))
        .collect();
    if let Some(missing) = REQUIRED.iter().find(|c| !position.contains_key(*c)) {
        return Err(Error::Schema(format!(
            "styles CSV lacks required column {missing:?}"
        )));
    }
    let col: Vec<Option<usize>> = COLUMNS.iter().map(|c| position.get(c).copied()).collect();

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut skipped = 0;
    for row in reader.records() {
        let row = row?;
        if row.len() != width {
            skipped += 1;
            continue;
        }
        let field = |k: usize| {
            col[k]
                .and_then(|i| row.get(i))
                .unwrap_or("")
                .trim()
                .to_string()
        };
        let Ok(id) = field(0).parse::<u64>() else {
            skipped += 1;
            continue;
        };
        if !seen.insert(id) {
            skipped += 1;
            continue;
        }
        records.push(ProductRecord {
            id,
            gender: field(1),
            master_category: field(2),
            sub_category: field(3),
            article_type: field(4),
            base_colour: field(5),
            season: field(6),
            year: field(7),
            usage: field(8),
            display_name: field(9),
        });
    }
    Ok((records, skipped))
}

pub fn image_path(image_dir: &Path, id: u64) -> PathBuf {
    image_dir.join(format!("{id}.jpg"))
}

/// Keeps records that have an `{id}.jpg` in `image_dir`, in input order.
pub fn match_images(
    records: &[ProductRecord],
    image_dir: impl AsRef<Path>,
) -> Result<Vec<ProductRecord>> {
    let mut present = HashSet::new();
    for entry in std::fs::read_dir(image_dir.as_ref())? {
        let entry = entry?;
        if let Some(name) = entry.file_name().to_str() {
            if let Some(stem) = name.strip_suffix(".jpg") {
                present.insert(stem.to_string());
            }
        }
    }
    Ok(records
        .iter()
        .filter(|r| present.contains(&r.id.to_string()))
        .cloned()
        .collect())
}

/// Per-label record counts, sorted by label.
pub fn class_counts(records: &[ProductRecord], scheme: LabelScheme) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for r in records {
        *counts.entry(scheme.label(r)).or_insert(0) += 1;
    }
    counts
}

/// Drops records whose label has fewer than `min_count` occurrences.
/// Returns the survivors in input order and the lexicographically sorted
/// vocabulary of retained labels.
pub fn filter_min_class(
    records: &[ProductRecord],
    scheme: LabelScheme,
    min_count: usize,
) -> (Vec<ProductRecord>, Vec<String>) {
    let counts = class_counts(records, scheme);
    let vocabulary: Vec<String> = counts
        .iter()
        .filter(|(_, &n)| n >= min_count)
        .map(|(label, _)| label.clone())
        .collect();
    let keep: HashSet<&str> = vocabulary.iter().map(String::as_str).collect();
    let retained = records
        .iter()
        .filter(|r| keep.contains(scheme.label(r).as_str()))
        .cloned()
        .collect();
    (retained, vocabulary)
}

/// Disjoint id lists, each sorted ascending.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<u64>,
    pub validation: Vec<u64>,
    pub test: Vec<u64>,
}

impl Splits {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Stratified split: within each class the ids are shuffled with `seed`,
/// `round(n · test_fraction)` go to test, `round(rest · val_fraction)` to
/// validation and the remainder to train. Each share is kept at one record
/// or more so every class reaches every split.
pub fn split_dataset(
    records: &[ProductRecord],
    scheme: LabelScheme,
    test_fraction: f64,
    val_fraction_of_train: f64,
    seed: u64,
) -> Result<Splits> {
    for (name, f) in [
        ("test", test_fraction),
        ("validation", val_fraction_of_train),
    ] {
        if !(f > 0.0 && f < 1.0) {
            return contract_err(format!("{name} fraction {f} is not in (0, 1)"));
        }
    }
    let mut by_class: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for r in records {
        by_class.entry(scheme.label(r)).or_default().push(r.id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut splits = Splits::default();
    for (label, mut ids) in by_class {
        let n = ids.len();
        if n < 3 {
            return contract_err(format!(
                "class {label:?} has {n} records; at least 3 are needed to fill every split"
            ));
        }
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 2);
        let rest = n - n_test;
        let n_val = ((rest as f64 * val_fraction_of_train).round() as usize).clamp(1, rest - 1);
        splits.test.extend_from_slice(&ids[..n_test]);
        splits
            .validation
            .extend_from_slice(&ids[n_test..n_test + n_val]);
        splits.train.extend_from_slice(&ids[n_test + n_val..]);
    }
    splits.train.sort_unstable();
    splits.validation.sort_unstable();
    splits.test.sort_unstable();
    Ok(splits)
}

/// Everything needed to rebuild the exact dataset of a training run.
///
/// JSON layout:
/// `{"scheme": "article-type", "min_count": 500, "seed": 42,
///   "test_fraction": 0.2, "val_fraction": 0.2, "image_dir": "...",
///   "target_size": [64, 64], "vocabulary": [...], "records": [...],
///   "splits": {"train": [...], "validation": [...], "test": [...]}}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub scheme: LabelScheme,
    pub min_count: usize,
    pub seed: u64,
    pub test_fraction: f64,
    pub val_fraction: f64,
    pub image_dir: PathBuf,
    pub target_size: (usize, usize),
    pub vocabulary: Vec<String>,
    pub records: Vec<ProductRecord>,
    pub splits: Splits,
}

/// Counts observed while preparing a manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrepStats {
    pub loaded: usize,
    pub skipped_rows: usize,
    pub matched: usize,
    pub classes_before: usize,
    pub classes_after: usize,
    pub retained: usize,
}

#[derive(Debug, Clone)]
pub struct PrepOptions {
    pub scheme: LabelScheme,
    pub min_count: usize,
    pub seed: u64,
    pub test_fraction: f64,
    pub val_fraction: f64,
    pub target_size: (usize, usize),
}

impl Default for PrepOptions {
    fn default() -> Self {
        Self {
            scheme: LabelScheme::ArticleType,
            min_count: DEFAULT_MIN_CLASS_SIZE,
            seed: DEFAULT_SPLIT_SEED,
            test_fraction: DEFAULT_TEST_FRACTION,
            val_fraction: DEFAULT_VAL_FRACTION,
            target_size: DEFAULT_TARGET_SIZE,
        }
    }
}

impl DatasetManifest {
    /// Load, match, filter and split in one go.
    pub fn prepare(
        styles_csv: impl AsRef<Path>,
        image_dir: impl AsRef<Path>,
        options: &PrepOptions,
    ) -> Result<(Self, PrepStats)> {
        let (loaded, skipped_rows) = load_metadata(styles_csv)?;
        let matched = match_images(&loaded, image_dir.as_ref())?;
        Self::from_records(&loaded, skipped_rows, matched, image_dir.as_ref(), options)
    }

    fn from_records(
        loaded: &[ProductRecord],
        skipped_rows: usize,
        matched: Vec<ProductRecord>,
        image_dir: &Path,
        options: &PrepOptions,
    ) -> Result<(Self, PrepStats)> {
        let scheme = options.scheme;
        let labeled: Vec<ProductRecord> = matched
            .iter()
            .filter(|r| scheme.has_label(r))
            .cloned()
            .collect();
        let classes_before = class_counts(&labeled, scheme).len();
        let (records, vocabulary) = filter_min_class(&labeled, scheme, options.min_count);
        let splits = split_dataset(
            &records,
            scheme,
            options.test_fraction,
            options.val_fraction,
            options.seed,
        )?;
        let stats = PrepStats {
            loaded: loaded.len(),
            skipped_rows,
            matched: matched.len(),
            classes_before,
            classes_after: vocabulary.len(),
            retained: records.len(),
        };
        Ok((
            Self {
                scheme,
                min_count: options.min_count,
                seed: options.seed,
                test_fraction: options.test_fraction,
                val_fraction: options.val_fraction,
                image_dir: image_dir.to_path_buf(),
                target_size: options.target_size,
                vocabulary,
                records,
                splits,
            },
            stats,
        ))
    }

    pub fn n_classes(&self) -> usize {
        self.vocabulary.len()
    }

    /// Index of `record`'s label in the vocabulary.
    pub fn class_index(&self, record: &ProductRecord) -> Option<usize> {
        self.vocabulary
            .binary_search(&self.scheme.label(record))
            .ok()
    }

    pub fn record(&self, id: u64) -> Option<&ProductRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// `(record, class index)` pairs for the given ids.
    pub fn labeled(&self, ids: &[u64]) -> Result<Vec<(&ProductRecord, usize)>> {
        let by_id: HashMap<u64, &ProductRecord> = self.records.iter().map(|r| (r.id, r)).collect();
        ids.iter()
            .map(|id| {
                let record = by_id.get(id).copied().ok_or(Error::Lookup(*id))?;
                let class = self.class_index(record).ok_or_else(|| {
                    Error::Schema(format!("record {id} has a label outside the vocabulary"))
                })?;
                Ok((record, class))
            })
            .collect()
    }

    pub fn image_path(&self, id: u64) -> PathBuf {
        image_path(&self.image_dir, id)
    }

    /// Checks that labels are in the vocabulary and the splits partition the records.
    pub fn validate(&self) -> Result<()> {
        if self.vocabulary.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Schema("vocabulary must be sorted and unique".into()));
        }
        let ids: HashSet<u64> = self.records.iter().map(|r| r.id).collect();
        if ids.len() != self.records.len() {
            return Err(Error::Schema("duplicate record ids".into()));
        }
        if let Some(r) = self.records.iter().find(|r| self.class_index(r).is_none()) {
            return Err(Error::Schema(format!(
                "record {} has a label outside the vocabulary",
                r.id
            )));
        }
        let mut split_ids = HashSet::new();
        for id in self
            .splits
            .train
            .iter()
            .chain(&self.splits.validation)
            .chain(&self.splits.test)
        {
            if !split_ids.insert(*id) {
                return Err(Error::Schema(format!(
                    "id {id} appears in more than one split"
                )));
            }
        }
        if split_ids != ids {
            return Err(Error::Schema("splits do not partition the records".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::io::BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::io::BufReader::new(File::open(path)?);
        let manifest: Self = serde_json::from_reader(file)?;
        manifest.validate()?;
        Ok(manifest)
    }
}
