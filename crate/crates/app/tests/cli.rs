mod common;

use std::path::Path;
use std::process::Command;

use clap::Parser;
use common::Catalog;
use fsearch::cli::{run, Cli};
use fsearch_core::dataset::DatasetManifest;
use fsearch_core::eval::EvalReport;
use fsearch_core::search::load_store;

fn fsearch(args: &[&str]) -> anyhow::Result<String> {
    let cli = Cli::try_parse_from(std::iter::once("fsearch").chain(args.iter().copied()))?;
    let mut out = Vec::new();
    run(cli, &mut out)?;
    Ok(String::from_utf8(out).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn prep_reports_counts_and_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let catalog = Catalog::create(dir.path());
    let out = dir.path().join("m.json");
    let text = fsearch(&[
        "prep",
        "--styles",
        p(&catalog.styles),
        "--images",
        p(&catalog.images),
        "--scheme",
        "article-type",
        "--min-class-size",
        "5",
        "--out",
        p(&out),
    ])
    .unwrap();
    assert!(text.contains("loaded 27 rows (1 skipped)"), "{text}");
    assert!(text.contains("matched 26 images"), "{text}");
    assert!(text.contains("4 classes -> 3"), "{text}");
    assert!(text.contains("retained 24 images"), "{text}");
    let manifest = DatasetManifest::load(&out).unwrap();
    assert_eq!(manifest.vocabulary, ["Shirts", "Shoes", "Watches"]);
    assert_eq!(manifest.splits.len(), 24);
}

#[test]
fn full_pipeline_through_search() {
    let dir = tempfile::tempdir().unwrap();
    let catalog = Catalog::create(dir.path());
    let path = |name: &str| dir.path().join(name);
    let (manifest, ae, store, head, report, csv, hist) = (
        path("m.json"),
        path("ae.fnnw"),
        path("s.femb"),
        path("head.fnnw"),
        path("report.json"),
        path("cm.csv"),
        path("hist.csv"),
    );
    fsearch(&[
        "prep",
        "--styles",
        p(&catalog.styles),
        "--images",
        p(&catalog.images),
        "--min-class-size",
        "5",
        "--out",
        p(&manifest),
    ])
    .unwrap();
    let text = fsearch(&[
        "train-ae",
        "--manifest",
        p(&manifest),
        "--out",
        p(&ae),
        "--epochs",
        "1",
        "--batch-size",
        "4",
        "--limit",
        "8",
        "--history",
        p(&hist),
    ])
    .unwrap();
    assert!(text.contains("best epoch 1"), "{text}");
    assert_eq!(std::fs::read_to_string(&hist).unwrap().lines().count(), 2);

    let text = fsearch(&[
        "embed",
        "--manifest",
        p(&manifest),
        "--weights",
        p(&ae),
        "--out",
        p(&store),
    ])
    .unwrap();
    assert!(
        text.contains("embedded 24 images (512 dimensions)"),
        "{text}"
    );
    assert_eq!(load_store(&store).unwrap().len(), 24);

    fsearch(&[
        "train-clf",
        "--manifest",
        p(&manifest),
        "--mode",
        "head",
        "--embeddings",
        p(&store),
        "--out",
        p(&head),
        "--epochs",
        "2",
    ])
    .unwrap();
    let text = fsearch(&[
        "evaluate",
        "--manifest",
        p(&manifest),
        "--weights",
        p(&head),
        "--embeddings",
        p(&store),
        "--out",
        p(&report),
        "--csv",
        p(&csv),
    ])
    .unwrap();
    assert!(text.contains("accuracy"), "{text}");
    let report: EvalReport = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(
        report.n_samples,
        DatasetManifest::load(&manifest).unwrap().splits.test.len()
    );
    assert_eq!(report.confusion.total() as usize, report.n_samples);
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 4);

    let query = catalog.images.join(format!("{}.jpg", catalog.ids[5]));
    let text = fsearch(&[
        "search",
        "--image",
        p(&query),
        "--store",
        p(&store),
        "--weights",
        p(&ae),
        "--manifest",
        p(&manifest),
    ])
    .unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 5, "{text}");
    assert!(rows[0].contains(&catalog.ids[5].to_string()), "{text}");
    assert!(rows[0].contains("Shirts"), "{text}");
    let text = fsearch(&[
        "search",
        "--image",
        p(&query),
        "--store",
        p(&store),
        "--weights",
        p(&ae),
        "--k",
        "2",
    ])
    .unwrap();
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn head_mode_requires_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    let catalog = Catalog::create(dir.path());
    let manifest = dir.path().join("m.json");
    catalog.manifest().save(&manifest).unwrap();
    let err = fsearch(&[
        "train-clf",
        "--manifest",
        p(&manifest),
        "--mode",
        "head",
        "--out",
        p(&dir.path().join("h.fnnw")),
    ])
    .unwrap_err();
    assert!(err.to_string().contains("--embeddings"));
    assert!(fsearch(&[
        "search",
        "--image",
        "q.jpg",
        "--store",
        "s",
        "--weights",
        "w",
        "--k",
        "0"
    ])
    .is_err());
}

#[test]
fn binary_exit_status_on_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("manifest.json");
    let run = Command::new(env!("CARGO_BIN_EXE_fsearch"))
        .args([
            "prep",
            "--styles",
            p(&dir.path().join("nope.csv")),
            "--images",
            p(dir.path()),
            "--out",
            p(&out),
        ])
        .output()
        .unwrap();
    assert!(!run.status.success());
    assert!(String::from_utf8_lossy(&run.stderr).contains("error:"));
    assert!(!out.exists());

    let run = Command::new(env!("CARGO_BIN_EXE_fsearch"))
        .args(["prep", "--bogus"])
        .output()
        .unwrap();
    assert!(!run.status.success());
    assert!(!run.stderr.is_empty());

    let run = Command::new(env!("CARGO_BIN_EXE_fsearch"))
        .args([
            "prep", "--styles", "a.csv", "--images", ".", "--scheme", "colour",
        ])
        .output()
        .unwrap();
    assert!(!run.status.success());
}
