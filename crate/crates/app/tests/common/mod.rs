//! A tiny on-disk catalog shared by the CLI, service and acceptance tests.

#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fsearch_core::autoencoder::{build_autoencoder, embed_manifest, AutoencoderSpec};
use fsearch_core::classifier::{build_classifier, ClassifierMode, ClassifierSpec};
use fsearch_core::dataset::{DatasetManifest, LabelScheme, PrepOptions};
use fsearch_core::search::save_store;
use fsearch_core::tensor::save_weights;
use fsearch_core::Network32;
use image::{ImageFormat, Rgb, RgbImage};

/// Article types and how many products each gets. "Socks" falls under a
/// class-size floor of 5.
pub const CLASSES: [(&str, &str, usize); 4] = [
    ("Shirts", "Topwear", 8),
    ("Shoes", "Footwear", 8),
    ("Watches", "Accessories", 8),
    ("Socks", "Socks", 2),
];

pub struct Catalog {
    pub root: PathBuf,
    pub styles: PathBuf,
    pub images: PathBuf,
    pub ids: Vec<u64>,
}

/// A distinct, deterministic picture per product id.
pub fn product_image(id: u64, class: usize) -> RgbImage {
    let base = [
        [200u8, 40, 40],
        [40, 200, 40],
        [40, 40, 200],
        [200, 200, 40],
    ][class % 4];
    let period = 3 + (id % 11) as u32;
    RgbImage::from_fn(48 + (id % 5) as u32 * 8, 56, |x, y| {
        let on = ((x + y * (id as u32 % 3 + 1)) / period).is_multiple_of(2);
        let shade = ((x * 255) / 80) as u8;
        if on {
            Rgb([base[0], base[1].saturating_add(shade / 4), base[2]])
        } else {
            Rgb([shade, (id * 37 % 256) as u8, 255 - shade])
        }
    })
}

impl Catalog {
    /// Writes `styles.csv` and `images/{id}.jpg` under `root`. Besides the
    /// products it adds one ragged row and one row whose image is missing.
    pub fn create(root: &Path) -> Self {
        let images = root.join("images");
        std::fs::create_dir_all(&images).unwrap();
        let mut csv = String::from(
            "id,gender,masterCategory,subCategory,articleType,baseColour,season,year,usage,productDisplayName\n",
        );
        let mut ids = Vec::new();
        let mut id = 1000u64;
        for (class, (article, sub, n)) in CLASSES.iter().enumerate() {
            for i in 0..*n {
                let gender = if i % 2 == 0 { "Men" } else { "Women" };
                writeln!(csv, "{id},{gender},Apparel,{sub},{article},Blue,Summer,2012,Casual,{article} number {i}").unwrap();
                product_image(id, class)
                    .save_with_format(images.join(format!("{id}.jpg")), ImageFormat::Jpeg)
                    .unwrap();
                ids.push(id);
                id += 1;
            }
        }
        writeln!(
            csv,
            "1,Men,Apparel,Topwear,Shirts,Blue,Summer,2012,Casual,Shirt, with a comma"
        )
        .unwrap();
        writeln!(
            csv,
            "2,Men,Apparel,Topwear,Shirts,Blue,Summer,2012,Casual,No image on disk"
        )
        .unwrap();
        let styles = root.join("styles.csv");
        std::fs::write(&styles, csv).unwrap();
        Self {
            root: root.to_path_buf(),
            styles,
            images,
            ids,
        }
    }

    /// Ids of products in classes that survive a floor of 5.
    pub fn retained(&self) -> Vec<u64> {
        let dropped = CLASSES[3].2;
        self.ids[..self.ids.len() - dropped].to_vec()
    }

    pub fn manifest(&self) -> DatasetManifest {
        let options = PrepOptions {
            scheme: LabelScheme::ArticleType,
            min_count: 5,
            ..PrepOptions::default()
        };
        DatasetManifest::prepare(&self.styles, &self.images, &options)
            .unwrap()
            .0
    }
}

/// Model files for a service over `catalog`, written next to it.
pub struct ServiceFiles {
    pub manifest: PathBuf,
    pub store: PathBuf,
    pub autoencoder: PathBuf,
    pub scratch_classifier: PathBuf,
    pub head_classifier: PathBuf,
}

pub fn service_files(catalog: &Catalog) -> ServiceFiles {
    let root = &catalog.root;
    let manifest = catalog.manifest();
    let manifest_path = root.join("manifest.json");
    manifest.save(&manifest_path).unwrap();

    let ae: Network32 = build_autoencoder(&AutoencoderSpec::default(), 7).unwrap();
    let autoencoder = root.join("autoencoder.fnnw");
    save_weights(&ae, &autoencoder).unwrap();
    let store = root.join("store.femb");
    save_store(&embed_manifest(&ae, &manifest).unwrap(), &store).unwrap();

    let n_classes = manifest.n_classes();
    let scratch: Network32 = build_classifier(
        &ClassifierSpec {
            mode: ClassifierMode::ScratchCnn,
            n_classes,
        },
        3,
    )
    .unwrap();
    let scratch_classifier = root.join("scratch.fnnw");
    save_weights(&scratch, &scratch_classifier).unwrap();
    let head: Network32 = build_classifier(
        &ClassifierSpec {
            mode: ClassifierMode::EmbeddingHead { input_dim: 512 },
            n_classes,
        },
        4,
    )
    .unwrap();
    let head_classifier = root.join("head.fnnw");
    save_weights(&head, &head_classifier).unwrap();

    ServiceFiles {
        manifest: manifest_path,
        store,
        autoencoder,
        scratch_classifier,
        head_classifier,
    }
}

/// A `multipart/form-data` body with the given `(name, bytes)` fields.
pub fn multipart(fields: &[(&str, &[u8])]) -> (String, Vec<u8>) {
    let boundary = "----fsearch-test-boundary";
    let mut body = Vec::new();
    for (name, bytes) in fields {
        body.extend_from_slice(format!("--{boundary}\r\n").as_bytes());
        if *name == "image" {
            body.extend_from_slice(
                b"Content-Disposition: form-data; name=\"image\"; filename=\"q.jpg\"\r\nContent-Type: application/octet-stream\r\n\r\n",
            );
        } else {
            body.extend_from_slice(
                format!("Content-Disposition: form-data; name=\"{name}\"\r\n\r\n").as_bytes(),
            );
        }
        body.extend_from_slice(bytes);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{boundary}--\r\n").as_bytes());
    (format!("multipart/form-data; boundary={boundary}"), body)
}
